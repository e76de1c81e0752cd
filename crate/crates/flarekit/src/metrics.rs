//! Masked full-reference metrics: PSNR and single-scale SSIM computed only
//! over pixels a mask marks as evaluated. Used to score flare removal while
//! excluding occluder regions from the comparison.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{load_image, load_mask, Encoding, ImagePlane, RegionMask};

fn check_pair(pred: &ImagePlane, gt: &ImagePlane, mask: &RegionMask) -> Result<()> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(Error::DimensionMismatch {
            expected_w: pred.width(),
            expected_h: pred.height(),
            got_w: gt.width(),
            got_h: gt.height(),
        });
    }
    if mask.width() != pred.width() || mask.height() != pred.height() {
        return Err(Error::DimensionMismatch {
            expected_w: pred.width(),
            expected_h: pred.height(),
            got_w: mask.width(),
            got_h: mask.height(),
        });
    }
    if pred.channels() != gt.channels() {
        return Err(Error::InvalidImage(format!(
            "channel mismatch: {} vs {}",
            pred.channels(),
            gt.channels()
        )));
    }
    if pred.encoding() != gt.encoding() {
        return Err(Error::InvalidImage(
            "prediction and reference use different encodings".into(),
        ));
    }
    if mask.count_included() == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(())
}

/// PSNR over mask-included pixels, all channels jointly, peak 1. A zero MSE
/// yields `f64::INFINITY`.
pub fn masked_psnr(pred: &ImagePlane, gt: &ImagePlane, mask: &RegionMask) -> Result<f64> {
    check_pair(pred, gt, mask)?;
    let ch = pred.channels();
    let mut sum = 0.0;
    let mut n = 0u64;
    for (x, y) in mask.included_pixels() {
        for c in 0..ch {
            let d = pred.get(x, y, c) - gt.get(x, y, c);
            sum += d * d;
            n += 1;
        }
    }
    let mse = sum / n as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

/// Which SSIM map pixels count toward the masked mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsimMaskRule {
    /// A pixel counts when its own mask value is 1; windows may straddle the
    /// mask boundary.
    CenterPixel,
    /// A pixel counts only when every tap of its 11x11 window (after border
    /// reflection) lands on an included pixel.
    FullyInside,
}

impl fmt::Display for SsimMaskRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SsimMaskRule::CenterPixel => "center-pixel",
            SsimMaskRule::FullyInside => "fully-inside",
        })
    }
}

impl FromStr for SsimMaskRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "center-pixel" => Ok(SsimMaskRule::CenterPixel),
            "fully-inside" => Ok(SsimMaskRule::FullyInside),
            other => Err(Error::Config(format!(
                "unknown ssim mask rule {other:?} (expect center-pixel or fully-inside)"
            ))),
        }
    }
}

const WIN: usize = 11;
const HALF: i64 = 5;
const SSIM_C1: f64 = 1e-4; // (0.01 * 1)^2
const SSIM_C2: f64 = 9e-4; // (0.03 * 1)^2

fn gaussian_kernel() -> [f64; WIN] {
    let sigma = 1.5;
    let mut k = [0.0; WIN];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - HALF as f64;
        *v = (-d * d / (2.0 * sigma * sigma)).exp();
    }
    let s: f64 = k.iter().sum();
    for v in &mut k {
        *v /= s;
    }
    k
}

/// Symmetric (edge-inclusive) boundary reflection.
fn reflect(mut i: i64, n: i64) -> usize {
    loop {
        if i < 0 {
            i = -1 - i;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

/// Separable 11x11 Gaussian filtering with reflected borders.
fn filter(src: &[f64], w: usize, h: usize, k: &[f64; WIN]) -> Vec<f64> {
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, &kt) in k.iter().enumerate() {
                let xi = reflect(x as i64 + t as i64 - HALF, w as i64);
                acc += kt * src[y * w + xi];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, &kt) in k.iter().enumerate() {
                let yi = reflect(y as i64 + t as i64 - HALF, h as i64);
                acc += kt * tmp[yi * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Single-scale SSIM on luminance with an 11x11 Gaussian window (sigma 1.5),
/// K1=0.01, K2=0.03, dynamic range 1, averaged over pixels the rule selects.
pub fn masked_ssim_with_rule(
    pred: &ImagePlane,
    gt: &ImagePlane,
    mask: &RegionMask,
    rule: SsimMaskRule,
) -> Result<f64> {
    check_pair(pred, gt, mask)?;
    let (w, h) = (pred.width() as usize, pred.height() as usize);
    if w < WIN || h < WIN {
        return Err(Error::InvalidImage(format!(
            "image {w}x{h} smaller than the {WIN}x{WIN} ssim window"
        )));
    }
    let x = pred.luminance();
    let y = gt.luminance();
    let (x, y) = (x.data(), y.data());
    let k = gaussian_kernel();
    let mu1 = filter(x, w, h, &k);
    let mu2 = filter(y, w, h, &k);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let exx = filter(&xx, w, h, &k);
    let eyy = filter(&yy, w, h, &k);
    let exy = filter(&xy, w, h, &k);

    let included = |px: usize, py: usize| -> bool {
        match rule {
            SsimMaskRule::CenterPixel => mask.get(px as u32, py as u32),
            SsimMaskRule::FullyInside => {
                for dy in -HALF..=HALF {
                    for dx in -HALF..=HALF {
                        let xi = reflect(px as i64 + dx, w as i64);
                        let yi = reflect(py as i64 + dy, h as i64);
                        if !mask.get(xi as u32, yi as u32) {
                            return false;
                        }
                    }
                }
                true
            }
        }
    };

    let mut sum = 0.0;
    let mut comp = 0.0;
    let mut n = 0u64;
    for py in 0..h {
        for px in 0..w {
            if !included(px, py) {
                continue;
            }
            let i = py * w + px;
            let (m1, m2) = (mu1[i], mu2[i]);
            let s1 = exx[i] - m1 * m1;
            let s2 = eyy[i] - m2 * m2;
            let s12 = exy[i] - m1 * m2;
            let v = ((2.0 * m1 * m2 + SSIM_C1) * (2.0 * s12 + SSIM_C2))
                / ((m1 * m1 + m2 * m2 + SSIM_C1) * (s1 + s2 + SSIM_C2));
            let t = v - comp;
            let u = sum + t;
            comp = (u - sum) - t;
            sum = u;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(sum / n as f64)
}

/// [`masked_ssim_with_rule`] under the center-pixel rule.
pub fn masked_ssim(pred: &ImagePlane, gt: &ImagePlane, mask: &RegionMask) -> Result<f64> {
    masked_ssim_with_rule(pred, gt, mask, SsimMaskRule::CenterPixel)
}

mod psnr_json {
    //! PSNR can be infinite; JSON has no infinity, so it serializes as null.
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Scores for one prediction/reference pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub name: String,
    /// Infinite when the pair is identical on evaluated pixels; written as
    /// JSON null.
    #[serde(with = "psnr_json")]
    pub psnr_db: f64,
    pub ssim: f64,
    pub evaluated_px: usize,
    pub excluded_px: usize,
}

/// A pair that could not be scored; the run continues past it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalFileError {
    pub name: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub records: Vec<EvalRecord>,
    pub errors: Vec<EvalFileError>,
    /// Mean over finite PSNR entries; `None` when every entry is infinite.
    pub mean_psnr_db: Option<f64>,
    /// How many records entered the PSNR mean.
    pub psnr_finite_count: usize,
    pub mean_ssim: f64,
}

#[derive(Serialize)]
struct AggregateLine {
    aggregate: bool,
    pairs: usize,
    errors: usize,
    mean_psnr_db: Option<f64>,
    psnr_finite_count: usize,
    mean_ssim: f64,
}

fn kahan_mean(values: impl Iterator<Item = f64>) -> (f64, usize) {
    let mut sum = 0.0;
    let mut comp = 0.0;
    let mut n = 0usize;
    for v in values {
        let t = v - comp;
        let u = sum + t;
        comp = (u - sum) - t;
        sum = u;
        n += 1;
    }
    (if n == 0 { 0.0 } else { sum / n as f64 }, n)
}

fn aggregate(records: &[EvalRecord]) -> (Option<f64>, usize, f64) {
    let (psnr_mean, finite) = kahan_mean(records.iter().map(|r| r.psnr_db).filter(|v| v.is_finite()));
    let (ssim_mean, _) = kahan_mean(records.iter().map(|r| r.ssim));
    (
        if finite > 0 { Some(psnr_mean) } else { None },
        finite,
        ssim_mean,
    )
}

fn png_stems(dir: &Path) -> Result<Vec<String>> {
    let mut stems = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if let Some(stem) = name.strip_suffix(".png") {
            stems.push(stem.to_string());
        }
    }
    stems.sort();
    Ok(stems)
}

/// Scores every stem present in both directories. `<stem>.png` is looked up
/// in `pred_dir` and `gt_dir`; a matching mask in `mask_dir` selects the
/// evaluated region (missing mask = evaluate everything). Writes one JSON
/// record per line to `report_path`, error lines for unreadable pairs, and a
/// final aggregate line. Output is byte-stable: stems are processed sorted.
pub fn evaluate_set(
    pred_dir: impl AsRef<Path>,
    gt_dir: impl AsRef<Path>,
    mask_dir: Option<&Path>,
    report_path: impl AsRef<Path>,
    rule: SsimMaskRule,
) -> Result<EvalReport> {
    let (pred_dir, gt_dir) = (pred_dir.as_ref(), gt_dir.as_ref());
    let gt_stems: std::collections::BTreeSet<String> = png_stems(gt_dir)?.into_iter().collect();
    let stems: Vec<String> = png_stems(pred_dir)?
        .into_iter()
        .filter(|s| gt_stems.contains(s))
        .collect();
    if stems.is_empty() {
        return Err(Error::NoMatchedPairs);
    }
    let mut records = Vec::new();
    let mut errors = Vec::new();
    let mut lines = String::new();
    for stem in &stems {
        match eval_pair(pred_dir, gt_dir, mask_dir, stem, rule) {
            Ok(rec) => {
                lines.push_str(&serde_json::to_string(&rec).expect("record serializes"));
                lines.push('\n');
                records.push(rec);
            }
            Err(e) => {
                let err = EvalFileError {
                    name: stem.clone(),
                    error: e.to_string(),
                };
                lines.push_str(&serde_json::to_string(&err).expect("error serializes"));
                lines.push('\n');
                errors.push(err);
            }
        }
    }
    let (mean_psnr_db, psnr_finite_count, mean_ssim) = aggregate(&records);
    let agg = AggregateLine {
        aggregate: true,
        pairs: records.len(),
        errors: errors.len(),
        mean_psnr_db,
        psnr_finite_count,
        mean_ssim,
    };
    lines.push_str(&serde_json::to_string(&agg).expect("aggregate serializes"));
    lines.push('\n');
    std::fs::write(report_path.as_ref(), lines)?;
    Ok(EvalReport {
        records,
        errors,
        mean_psnr_db,
        psnr_finite_count,
        mean_ssim,
    })
}

fn eval_pair(
    pred_dir: &Path,
    gt_dir: &Path,
    mask_dir: Option<&Path>,
    stem: &str,
    rule: SsimMaskRule,
) -> Result<EvalRecord> {
    let file = format!("{stem}.png");
    let pred = load_image(pred_dir.join(&file), Encoding::GammaEncoded)?;
    let gt = load_image(gt_dir.join(&file), Encoding::GammaEncoded)?;
    let mask = match mask_dir {
        Some(dir) if dir.join(&file).exists() => load_mask(dir.join(&file))?,
        _ => RegionMask::full(pred.width(), pred.height())?,
    };
    let psnr_db = masked_psnr(&pred, &gt, &mask)?;
    let ssim = masked_ssim_with_rule(&pred, &gt, &mask, rule)?;
    let evaluated_px = mask.count_included();
    Ok(EvalRecord {
        name: stem.to_string(),
        psnr_db,
        ssim,
        evaluated_px,
        excluded_px: (pred.width() as usize * pred.height() as usize) - evaluated_px,
    })
}

/// Plain-text table of a report for terminal output.
pub fn render_table(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<24} {:>10} {:>8} {:>10} {:>10}\n",
        "name", "psnr_db", "ssim", "eval_px", "excl_px"
    ));
    for r in &report.records {
        let psnr = if r.psnr_db.is_finite() {
            format!("{:.4}", r.psnr_db)
        } else {
            "inf".to_string()
        };
        out.push_str(&format!(
            "{:<24} {:>10} {:>8.4} {:>10} {:>10}\n",
            r.name, psnr, r.ssim, r.evaluated_px, r.excluded_px
        ));
    }
    for e in &report.errors {
        out.push_str(&format!("{:<24} error: {}\n", e.name, e.error));
    }
    let mean_psnr = match report.mean_psnr_db {
        Some(v) => format!("{v:.4} over {} finite", report.psnr_finite_count),
        None => "n/a (all infinite)".to_string(),
    };
    out.push_str(&format!(
        "mean: psnr {} | ssim {:.4} over {} pairs\n",
        mean_psnr,
        report.mean_ssim,
        report.records.len()
    ));
    out
}
