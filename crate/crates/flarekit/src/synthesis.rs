//! End-to-end pair generation: place random flares on a clean background,
//! adjust each one's brightness from the depth map and camera field of view,
//! composite with clipping, and emit training tuples plus a manifest.
//!
//! Every random decision flows from `(seed, index)` salted streams, so any
//! worker count, scheduling, or partial rerun yields byte-identical output.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::affine::{apply_affine, sample_affine, AffineParams, AffineRanges, Interpolation};
use crate::error::{Error, Result};
use crate::illumination::{
    brightness_gain, estimate_spatial, mean_depth, source_region, CameraModel, DEFAULT_GAIN_CLAMP,
};
use crate::imaging::{
    clip01, load_depth, load_image, save_image, save_mask, to_encoded, to_linear, BitDepth,
    DepthMap, Encoding, ImagePlane, RegionMask,
};
use crate::rng::{stream, SALT_BACKGROUND, SALT_FLARE, SALT_IMAGE};
use crate::template::{load_template, FlareTemplate};

/// Everything that shapes one synthesis run except the input corpora.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Inclusive bounds for the number of flares per image.
    pub flare_count_range: (u32, u32),
    /// Reuse one template for all flares of an image.
    pub same_template: bool,
    /// Display gamma drawn per image; backgrounds are linearized with it and
    /// every output is re-encoded with it.
    pub gamma_range: (f64, f64),
    /// Zero-mean Gaussian noise added to the linear background.
    pub noise_sigma_range: (f64, f64),
    /// Horizontal field of view in degrees.
    pub fov_deg: f64,
    pub affine: AffineRanges,
    /// Annotation threshold defining the light-source region.
    pub tau: f64,
    /// Brightness gain clamp; `None` applies the raw illumination ratio.
    pub gain_clamp: Option<(f64, f64)>,
    pub seed: u64,
    /// Also write the ground truth that keeps the light source.
    pub emit_source_in_gt: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            flare_count_range: (1, 3),
            same_template: false,
            gamma_range: (1.8, 2.2),
            noise_sigma_range: (0.0, 0.01),
            fov_deg: 84.0,
            affine: AffineRanges::default(),
            tau: 0.5,
            gain_clamp: Some(DEFAULT_GAIN_CLAMP),
            seed: 0,
            emit_source_in_gt: true,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let (nlo, nhi) = self.flare_count_range;
        if nlo < 1 || nlo > nhi {
            return Err(Error::InvalidParam(format!(
                "flare count range ({nlo}, {nhi}) must satisfy 1 <= min <= max"
            )));
        }
        let (glo, ghi) = self.gamma_range;
        if !(1.0..=3.0).contains(&glo) || !(1.0..=3.0).contains(&ghi) || glo > ghi {
            return Err(Error::InvalidParam(format!(
                "gamma range ({glo}, {ghi}) must be ordered within [1, 3]"
            )));
        }
        let (slo, shi) = self.noise_sigma_range;
        if !(slo >= 0.0 && slo <= shi && shi.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "noise sigma range ({slo}, {shi}) must be ordered and >= 0"
            )));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(Error::InvalidParam(format!(
                "fov {} outside (0, 180) degrees",
                self.fov_deg
            )));
        }
        if !(0.0..1.0).contains(&self.tau) {
            return Err(Error::InvalidParam(format!(
                "tau {} outside [0, 1)",
                self.tau
            )));
        }
        if let Some((lo, hi)) = self.gain_clamp {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(Error::InvalidParam(format!(
                    "gain clamp ({lo}, {hi}) must satisfy 0 < min <= max"
                )));
            }
        }
        self.affine.validate()
    }
}

/// Placement, estimate, and gain for one composited flare.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlareMeta {
    pub template_id: String,
    pub affine: AffineParams,
    /// Mean depth over the visible light-source pixels.
    pub mean_depth: f64,
    /// Mean pixel distance of those pixels to the image center.
    pub mean_radius_px: f64,
    /// Incident angle in radians.
    pub incident_rad: f64,
    pub gain: f64,
    pub visible_px: u32,
    /// Placement attempts consumed, including the accepted one.
    pub attempts: u32,
}

/// Per-pair provenance, written next to the planes as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMeta {
    pub index: u64,
    pub seed: u64,
    /// Attempt counter bumped when every flare of an attempt was skipped.
    pub salt: u64,
    pub background_stem: String,
    pub fov_deg: f64,
    pub gamma: f64,
    pub noise_sigma: f64,
    /// Flare count drawn before visibility retries.
    pub flare_count: u32,
    pub skipped_flares: u32,
    /// Samples clipped when adding flares to the background.
    pub overflow_px: u64,
    /// Samples clipped when storing the flare sum on its own.
    pub flare_overflow_px: u64,
    pub flares: Vec<FlareMeta>,
}

/// One synthesized training tuple. All planes share the background's
/// dimensions and gamma encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthPair {
    /// Flare-corrupted image.
    pub input: ImagePlane,
    /// Flare-free ground truth (noisy background).
    pub gt_background: ImagePlane,
    /// Ground truth plus the light-source part of each flare.
    pub gt_with_source: ImagePlane,
    /// Composited flare sum, clipped for storage.
    pub flare_layer: ImagePlane,
    /// Union of the thresholded transformed annotations.
    pub source_mask: RegionMask,
    pub meta: PairMeta,
}

/// Templates keyed and ordered by id, so pool indices are stable no matter
/// how the directory was listed.
#[derive(Debug, Clone)]
pub struct TemplatePool {
    ids: Vec<String>,
    templates: Vec<FlareTemplate>,
}

impl TemplatePool {
    pub fn new(mut entries: Vec<(String, FlareTemplate)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidParam("empty template pool".into()));
        }
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        let (ids, templates) = entries.into_iter().unzip();
        Ok(Self { ids, templates })
    }

    /// Loads every `<stem>_meta.json` trio under `dir`.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut entries = Vec::new();
        for entry in std::fs::read_dir(dir)? {
            let name = entry?.file_name();
            let name = name.to_string_lossy();
            if let Some(stem) = name.strip_suffix("_meta.json") {
                entries.push((stem.to_string(), load_template(dir, stem)?));
            }
        }
        Self::new(entries)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, i: usize) -> (&str, &FlareTemplate) {
        (&self.ids[i], &self.templates[i])
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }
}

fn draw_f64(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

fn draw_count(rng: &mut impl Rng, (lo, hi): (u32, u32)) -> u32 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

/// Synthesizes one pair. Equivalent to [`synth_one_salted`] with salt 0; the
/// batch driver bumps the salt when an attempt loses every flare to
/// visibility retries.
pub fn synth_one(
    background: &ImagePlane,
    depth: &DepthMap,
    templates: &TemplatePool,
    cfg: &SynthConfig,
    index: u64,
) -> Result<SynthPair> {
    synth_one_salted(background, depth, templates, cfg, index, 0)
}

/// The full pipeline for one image, with a pinned draw order: gamma, noise
/// sigma, noise samples (only when sigma > 0), flare count, template picks,
/// then per-flare placement from `(seed, index, salt, flare)` streams.
pub fn synth_one_salted(
    background: &ImagePlane,
    depth: &DepthMap,
    templates: &TemplatePool,
    cfg: &SynthConfig,
    index: u64,
    salt: u64,
) -> Result<SynthPair> {
    cfg.validate()?;
    if background.encoding() != Encoding::GammaEncoded {
        return Err(Error::InvalidImage(
            "background must be display-encoded".into(),
        ));
    }
    if background.channels() != 3 {
        return Err(Error::InvalidImage("background must be RGB".into()));
    }
    let (w, h) = (background.width(), background.height());
    if depth.width() != w || depth.height() != h {
        return Err(Error::DimensionMismatch {
            expected_w: w,
            expected_h: h,
            got_w: depth.width(),
            got_h: depth.height(),
        });
    }
    if templates.is_empty() {
        return Err(Error::InvalidParam("empty template pool".into()));
    }

    let mut rng = stream(cfg.seed, &[SALT_IMAGE, index, salt]);
    let gamma = draw_f64(&mut rng, cfg.gamma_range);
    let linear = to_linear(background, gamma)?;
    let sigma = draw_f64(&mut rng, cfg.noise_sigma_range);
    let b = if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma)
            .map_err(|e| Error::InvalidParam(format!("noise sigma {sigma}: {e}")))?;
        let noisy = ImagePlane::new(
            w,
            h,
            3,
            linear
                .data()
                .iter()
                .map(|v| v + normal.sample(&mut rng))
                .collect(),
            Encoding::Linear,
        )?;
        clip01(&noisy)
    } else {
        linear
    };

    let n = draw_count(&mut rng, cfg.flare_count_range);
    let picks: Vec<usize> = if cfg.same_template {
        let shared = rng.gen_range(0..templates.len());
        vec![shared; n as usize]
    } else {
        (0..n).map(|_| rng.gen_range(0..templates.len())).collect()
    };

    let cam = CameraModel::new(cfg.fov_deg, w, h)?;
    let d_bar = mean_depth(depth);
    let samples = w as usize * h as usize * 3;
    let mut flare_sum = vec![0.0f64; samples];
    let mut source_sum = vec![0.0f64; samples];
    let mut source_mask = RegionMask::empty(w, h)?;
    let mut flares = Vec::new();
    let mut skipped = 0u32;

    for (flare_i, &pick) in picks.iter().enumerate() {
        let (template_id, template) = templates.get(pick);
        let mut frng = stream(cfg.seed, &[SALT_FLARE, index, salt, flare_i as u64]);
        let mut accepted: Option<(AffineParams, RegionMask, u32)> = None;
        for attempt in 1..=cfg.affine.max_retries {
            let params = sample_affine(&cfg.affine, (w, h), &mut frng);
            let warped_ann = apply_affine(
                &template.source_annotation,
                &params,
                (w, h),
                Interpolation::Nearest,
            )?;
            let region = source_region(&warped_ann, cfg.tau)?;
            if region.count_included() >= cfg.affine.min_visible_source_px as usize {
                accepted = Some((params, region, attempt));
                break;
            }
        }
        let Some((params, region, attempts)) = accepted else {
            skipped += 1;
            continue;
        };
        let warped = apply_affine(&template.flare, &params, (w, h), Interpolation::Bilinear)?;
        let est = estimate_spatial(&region, depth, &cam)?;
        let gain = brightness_gain(&est, d_bar, &cam, cfg.gain_clamp)?;
        for (i, v) in warped.data().iter().enumerate() {
            let gained = gain * v;
            flare_sum[i] += gained;
            let px = i / 3;
            if region.data()[px] {
                source_sum[i] += gained;
            }
        }
        source_mask = source_mask.union(&region)?;
        flares.push(FlareMeta {
            template_id: template_id.to_string(),
            affine: params,
            mean_depth: est.mean_depth,
            mean_radius_px: est.mean_radius_px,
            incident_rad: est.incident_rad,
            gain,
            visible_px: est.visible_px,
            attempts,
        });
    }
    if flares.is_empty() {
        return Err(Error::SynthesisSkipped);
    }

    let mut overflow_px = 0u64;
    let mut flare_overflow_px = 0u64;
    let mut input_lin = vec![0.0f64; samples];
    for i in 0..samples {
        let s = b.data()[i] + flare_sum[i];
        if s > 1.0 {
            overflow_px += 1;
        }
        if flare_sum[i] > 1.0 {
            flare_overflow_px += 1;
        }
        input_lin[i] = s.clamp(0.0, 1.0);
    }
    let input_lin = ImagePlane::new(w, h, 3, input_lin, Encoding::Linear)?;
    let gt_src_lin = clip01(&ImagePlane::new(
        w,
        h,
        3,
        b.data()
            .iter()
            .zip(&source_sum)
            .map(|(bg, s)| bg + s)
            .collect(),
        Encoding::Linear,
    )?);
    let flare_lin = clip01(&ImagePlane::new(w, h, 3, flare_sum, Encoding::Linear)?);

    Ok(SynthPair {
        input: to_encoded(&input_lin, gamma)?,
        gt_background: to_encoded(&b, gamma)?,
        gt_with_source: to_encoded(&gt_src_lin, gamma)?,
        flare_layer: to_encoded(&flare_lin, gamma)?,
        source_mask,
        meta: PairMeta {
            index,
            seed: cfg.seed,
            salt,
            background_stem: String::new(),
            fov_deg: cfg.fov_deg,
            gamma,
            noise_sigma: sigma,
            flare_count: n,
            skipped_flares: skipped,
            overflow_px,
            flare_overflow_px,
            flares,
        },
    })
}

/// A directory of PNGs addressed by file stem, in sorted order.
#[derive(Debug, Clone)]
pub struct Corpus {
    dir: PathBuf,
    stems: Vec<String>,
}

impl Corpus {
    pub fn scan(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let mut stems = Vec::new();
        for entry in std::fs::read_dir(&dir)? {
            let name = entry?.file_name();
            let name = name.to_string_lossy();
            if let Some(stem) = name.strip_suffix(".png") {
                stems.push(stem.to_string());
            }
        }
        stems.sort();
        Ok(Self { dir, stems })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn stems(&self) -> &[String] {
        &self.stems
    }

    pub fn is_empty(&self) -> bool {
        self.stems.is_empty()
    }

    pub fn path(&self, stem: &str) -> PathBuf {
        self.dir.join(format!("{stem}.png"))
    }

    /// Drops every stem the predicate rejects.
    pub fn retain(&mut self, keep: impl Fn(&str) -> bool) {
        self.stems.retain(|s| keep(s));
    }
}

/// One manifest line. Key order is the struct order and never changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub index: u64,
    pub input: String,
    pub gt: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gt_src: Option<String>,
    pub flare: String,
    pub mask: String,
    pub meta: String,
    pub background_stem: String,
    pub seed: u64,
    pub fov_deg: f64,
    pub gamma: f64,
    pub noise_sigma: f64,
    pub flare_count: u32,
    pub flares: Vec<FlareMeta>,
}

/// Batch outcome counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchResult {
    pub pairs: u64,
    /// Flares dropped by visibility retries across all pairs.
    pub skipped_flares: u64,
    /// Whole-pair reattempts (salt bumps) that were needed.
    pub salt_retries: u64,
    /// Input samples clipped during compositing, summed over pairs.
    pub overflow_px: u64,
}

/// Salt values tried per index before the index is declared failed.
const MAX_SALTS: u64 = 16;

fn synth_index(
    backgrounds: &Corpus,
    depths: &Corpus,
    templates: &TemplatePool,
    cfg: &SynthConfig,
    index: u64,
) -> Result<(SynthPair, String)> {
    let mut brng = stream(cfg.seed, &[SALT_BACKGROUND, index]);
    let stem = &backgrounds.stems()[brng.gen_range(0..backgrounds.stems().len())];
    let background = load_image(backgrounds.path(stem), Encoding::GammaEncoded)?;
    let depth = load_depth(depths.path(stem))?;
    for salt in 0..MAX_SALTS {
        match synth_one_salted(&background, &depth, templates, cfg, index, salt) {
            Ok(mut pair) => {
                pair.meta.background_stem = stem.clone();
                return Ok((pair, stem.clone()));
            }
            Err(Error::SynthesisSkipped) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::SynthesisSkipped)
}

fn write_pair(pair: &SynthPair, out: &Path, cfg: &SynthConfig) -> Result<ManifestRecord> {
    let idx = pair.meta.index;
    let name = |suffix: &str| format!("{idx:06}_{suffix}");
    save_image(&pair.input, out.join(name("input.png")), BitDepth::Eight)?;
    save_image(&pair.gt_background, out.join(name("gt.png")), BitDepth::Eight)?;
    let gt_src = if cfg.emit_source_in_gt {
        save_image(&pair.gt_with_source, out.join(name("gt_src.png")), BitDepth::Eight)?;
        Some(name("gt_src.png"))
    } else {
        None
    };
    save_image(&pair.flare_layer, out.join(name("flare.png")), BitDepth::Eight)?;
    save_mask(&pair.source_mask, out.join(name("mask.png")))?;
    let mut meta_json = serde_json::to_string_pretty(&pair.meta)
        .map_err(|e| Error::Internal(format!("meta serialization: {e}")))?;
    meta_json.push('\n');
    std::fs::write(out.join(name("meta.json")), meta_json)?;
    Ok(ManifestRecord {
        index: idx,
        input: name("input.png"),
        gt: name("gt.png"),
        gt_src,
        flare: name("flare.png"),
        mask: name("mask.png"),
        meta: name("meta.json"),
        background_stem: pair.meta.background_stem.clone(),
        seed: pair.meta.seed,
        fov_deg: pair.meta.fov_deg,
        gamma: pair.meta.gamma,
        noise_sigma: pair.meta.noise_sigma,
        flare_count: pair.meta.flare_count,
        flares: pair.meta.flares.clone(),
    })
}

/// Synthesizes `count` pairs into `out`, then writes `manifest.jsonl` sorted
/// by index. Backgrounds are drawn per index from the corpus; each one needs
/// a stem-matched depth map in `depths`. Runs on `workers` threads with
/// output bytes independent of the worker count. `on_pair` fires after each
/// finished pair with the running completion count.
#[allow(clippy::too_many_arguments)]
pub fn synth_batch(
    backgrounds: &Corpus,
    depths: &Corpus,
    templates: &TemplatePool,
    cfg: &SynthConfig,
    count: u64,
    out: impl AsRef<Path>,
    workers: usize,
    on_pair: impl Fn(u64) + Sync,
) -> Result<BatchResult> {
    cfg.validate()?;
    if count < 1 {
        return Err(Error::InvalidParam("pair count must be >= 1".into()));
    }
    if workers < 1 {
        return Err(Error::InvalidParam("worker count must be >= 1".into()));
    }
    if backgrounds.is_empty() {
        return Err(Error::InvalidParam("no background images found".into()));
    }
    let missing: Vec<&String> = backgrounds
        .stems()
        .iter()
        .filter(|s| !depths.path(s).exists())
        .collect();
    if !missing.is_empty() {
        return Err(Error::InvalidParam(format!(
            "backgrounds without depth maps: {missing:?}"
        )));
    }
    let out = out.as_ref();
    std::fs::create_dir_all(out)?;

    let done = AtomicU64::new(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
    let results: Vec<Result<(ManifestRecord, u64, u64, u64)>> = pool.install(|| {
        (0..count)
            .into_par_iter()
            .map(|index| {
                let (pair, _stem) = synth_index(backgrounds, depths, templates, cfg, index)
                    .map_err(|e| Error::BatchIndexFailed {
                        index,
                        reason: e.to_string(),
                    })?;
                let record = write_pair(&pair, out, cfg)?;
                on_pair(done.fetch_add(1, Ordering::Relaxed) + 1);
                Ok((
                    record,
                    pair.meta.skipped_flares as u64,
                    pair.meta.salt,
                    pair.meta.overflow_px,
                ))
            })
            .collect()
    });

    let mut records = Vec::with_capacity(count as usize);
    let mut skipped_flares = 0u64;
    let mut salt_retries = 0u64;
    let mut overflow_px = 0u64;
    for r in results {
        let (record, skipped, salt, overflow) = r?;
        skipped_flares += skipped;
        salt_retries += salt;
        overflow_px += overflow;
        records.push(record);
    }
    records.sort_by_key(|r| r.index);
    let mut manifest = String::new();
    for r in &records {
        manifest.push_str(&serde_json::to_string(r).expect("record serializes"));
        manifest.push('\n');
    }
    std::fs::write(out.join("manifest.jsonl"), manifest)?;
    Ok(BatchResult {
        pairs: count,
        skipped_flares,
        salt_retries,
        overflow_px,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::save_depth;
    use crate::template::{generate_template, preset};
    use tempfile::TempDir;

    /// Affine ranges that pin the template exactly at a fixed offset from
    /// the canvas center.
    fn pinned_affine(tx: f64, ty: f64) -> AffineRanges {
        AffineRanges {
            scale: (1.0, 1.0),
            rotation_rad: (0.0, 0.0),
            translate_x_frac: (tx, tx),
            translate_y_frac: (ty, ty),
            shear_x: (0.0, 0.0),
            shear_y: (0.0, 0.0),
            min_visible_source_px: 1,
            max_retries: 1,
        }
    }

    /// gamma 1, no noise, one flare, fixed placement, forced gain.
    fn pinned_cfg(gain: f64) -> SynthConfig {
        SynthConfig {
            flare_count_range: (1, 1),
            gamma_range: (1.0, 1.0),
            noise_sigma_range: (0.0, 0.0),
            affine: pinned_affine(0.0, 0.0),
            gain_clamp: Some((gain, gain)),
            ..SynthConfig::default()
        }
    }

    /// Hand-built template: flare is `value` over a centered square of side
    /// `support`, annotation marks a smaller centered square.
    fn block_template(canvas: u32, support: u32, value: f64, source: u32) -> FlareTemplate {
        let inside = |x: u32, y: u32, side: u32| {
            let lo = (canvas - side) / 2;
            (lo..lo + side).contains(&x) && (lo..lo + side).contains(&y)
        };
        let flare = ImagePlane::from_fn(canvas, canvas, 3, Encoding::Linear, |x, y, _| {
            if inside(x, y, support) {
                value
            } else {
                0.0
            }
        })
        .unwrap();
        let ann = ImagePlane::from_fn(canvas, canvas, 1, Encoding::Linear, |x, y, _| {
            if inside(x, y, source) {
                1.0
            } else {
                0.0
            }
        })
        .unwrap();
        FlareTemplate {
            flare,
            source_annotation: ann,
            recipe: preset("basic-glare").unwrap(),
            type_id: "block".into(),
        }
    }

    fn pool_of(t: FlareTemplate) -> TemplatePool {
        TemplatePool::new(vec![("t0".into(), t)]).unwrap()
    }

    fn flat_background(n: u32, v: f64) -> ImagePlane {
        ImagePlane::filled(n, n, 3, v, Encoding::GammaEncoded).unwrap()
    }

    fn flat_depth(n: u32, v: f64) -> DepthMap {
        DepthMap::new(n, n, vec![v; (n * n) as usize]).unwrap()
    }

    #[test]
    fn additive_on_support_identity_elsewhere() {
        let n = 32;
        let pool = pool_of(block_template(n, 12, 0.2, 6));
        let pair = synth_one(
            &flat_background(n, 0.5),
            &flat_depth(n, 1.0),
            &pool,
            &pinned_cfg(1.0),
            0,
        )
        .unwrap();
        let lo = (n - 12) / 2;
        for y in 0..n {
            for x in 0..n {
                let expect = if (lo..lo + 12).contains(&x) && (lo..lo + 12).contains(&y) {
                    0.7
                } else {
                    0.5
                };
                for c in 0..3 {
                    assert!((pair.input.get(x, y, c) - expect).abs() < 1e-12);
                }
            }
        }
        assert_eq!(pair.meta.flares[0].gain, 1.0);
        assert_eq!(pair.meta.gamma, 1.0);
        assert_eq!(pair.meta.noise_sigma, 0.0);
    }

    #[test]
    fn clipping_counts_overflow() {
        let n = 32;
        let pool = pool_of(block_template(n, 12, 0.3, 6));
        let pair = synth_one(
            &flat_background(n, 0.9),
            &flat_depth(n, 1.0),
            &pool,
            &pinned_cfg(1.0),
            0,
        )
        .unwrap();
        let c = n / 2;
        for ch in 0..3 {
            assert_eq!(pair.input.get(c, c, ch), 1.0);
        }
        assert_eq!(pair.meta.overflow_px, 12 * 12 * 3);
        assert_eq!(pair.meta.flare_overflow_px, 0);
    }

    #[test]
    fn per_pixel_oracle_equivalence() {
        // independent scalar implementation of clip(B + sum g_i f_i) on 8x8
        let n = 8;
        let pool = TemplatePool::new(vec![
            ("a".into(), block_template(n, 6, 0.4, 4)),
            ("b".into(), block_template(n, 8, 0.15, 4)),
        ])
        .unwrap();
        let cfg = SynthConfig {
            flare_count_range: (2, 2),
            gain_clamp: Some((0.75, 0.75)),
            ..pinned_cfg(0.75)
        };
        let bg = flat_background(n, 0.6);
        let pair = synth_one(&bg, &flat_depth(n, 2.0), &pool, &cfg, 5).unwrap();
        let mut oracle = vec![0.6f64; (n * n * 3) as usize];
        for fm in &pair.meta.flares {
            let t = match fm.template_id.as_str() {
                "a" => block_template(n, 6, 0.4, 4),
                _ => block_template(n, 8, 0.15, 4),
            };
            for (i, v) in t.flare.data().iter().enumerate() {
                oracle[i] += fm.gain * v;
            }
        }
        for v in &mut oracle {
            *v = v.clamp(0.0, 1.0);
        }
        assert_eq!(pair.meta.flares.len(), 2);
        for (got, want) in pair.input.data().iter().zip(&oracle) {
            assert_eq!(got, want);
        }
    }

    #[test]
    fn ground_truth_stays_pure() {
        let n = 32;
        let pool = pool_of(block_template(n, 12, 0.2, 6));
        let bg = flat_background(n, 0.5);
        let pair = synth_one(&bg, &flat_depth(n, 1.0), &pool, &pinned_cfg(1.0), 3).unwrap();
        // gt equals the (noise-free, gamma-1) background everywhere
        for v in pair.gt_background.data() {
            assert!((v - 0.5).abs() < 1e-12);
        }
        // input differs from gt only where the flare layer is nonzero
        for i in 0..pair.input.data().len() {
            if pair.flare_layer.data()[i] == 0.0 {
                assert_eq!(pair.input.data()[i], pair.gt_background.data()[i]);
            }
        }
    }

    #[test]
    fn same_template_flag_repeats_one_id() {
        let n = 48;
        let pool = TemplatePool::new(vec![
            ("a".into(), block_template(n, 10, 0.2, 6)),
            ("b".into(), block_template(n, 14, 0.2, 6)),
            ("c".into(), block_template(n, 18, 0.2, 6)),
        ])
        .unwrap();
        let cfg = SynthConfig {
            flare_count_range: (3, 3),
            same_template: true,
            ..pinned_cfg(1.0)
        };
        let pair = synth_one(&flat_background(n, 0.4), &flat_depth(n, 1.0), &pool, &cfg, 11).unwrap();
        assert_eq!(pair.meta.flares.len(), 3);
        let first = &pair.meta.flares[0].template_id;
        assert!(pair.meta.flares.iter().all(|f| &f.template_id == first));
    }

    #[test]
    fn determinism_per_seed_and_index() {
        let n = 32;
        let pool = pool_of(generate_template(&preset("basic-cross").unwrap()).unwrap());
        let cfg = SynthConfig {
            seed: 42,
            noise_sigma_range: (0.005, 0.01),
            ..SynthConfig::default()
        };
        let bg = flat_background(n, 0.45);
        let d = flat_depth(n, 1.5);
        let a = synth_one(&bg, &d, &pool, &cfg, 7).unwrap();
        let b = synth_one(&bg, &d, &pool, &cfg, 7).unwrap();
        assert_eq!(a, b);
        let c = synth_one(&bg, &d, &pool, &cfg, 8).unwrap();
        assert_ne!(a.input.data(), c.input.data());
    }

    #[test]
    fn source_mask_is_union_of_thresholded_annotations() {
        let n = 64;
        let pool = pool_of(generate_template(&preset("basic-core").unwrap()).unwrap());
        let cfg = SynthConfig {
            flare_count_range: (3, 3),
            seed: 9,
            ..SynthConfig::default()
        };
        let pair = synth_one(&flat_background(n, 0.4), &flat_depth(n, 1.0), &pool, &cfg, 2).unwrap();
        // recompute the union independently from recorded affine params
        let (_, template) = pool.get(0);
        let mut expect = RegionMask::empty(n, n).unwrap();
        for fm in &pair.meta.flares {
            let warped = apply_affine(
                &template.source_annotation,
                &fm.affine,
                (n, n),
                Interpolation::Nearest,
            )
            .unwrap();
            let region = source_region(&warped, cfg.tau).unwrap();
            expect = expect.union(&region).unwrap();
        }
        assert_eq!(pair.source_mask.data(), expect.data());
    }

    #[test]
    fn wider_fov_weakens_an_off_center_flare() {
        let n = 64;
        let pool = pool_of(block_template(n, 12, 0.2, 6));
        let mut gains = Vec::new();
        for fov in [40.0, 60.0, 84.0, 120.0] {
            let cfg = SynthConfig {
                fov_deg: fov,
                affine: pinned_affine(0.3, 0.2),
                gain_clamp: None,
                flare_count_range: (1, 1),
                gamma_range: (1.0, 1.0),
                noise_sigma_range: (0.0, 0.0),
                ..SynthConfig::default()
            };
            let pair =
                synth_one(&flat_background(n, 0.5), &flat_depth(n, 1.0), &pool, &cfg, 0).unwrap();
            assert!(pair.meta.flares[0].mean_radius_px > 0.0);
            gains.push(pair.meta.flares[0].gain);
        }
        for w in gains.windows(2) {
            assert!(w[1] < w[0], "gains not strictly decreasing: {gains:?}");
        }
    }

    #[test]
    fn deeper_source_contributes_pointwise_less() {
        let n = 64;
        let pool = pool_of(block_template(n, 12, 0.2, 6));
        let cfg = SynthConfig {
            gain_clamp: None,
            ..pinned_cfg(1.0)
        };
        let bg = flat_background(n, 0.3);
        let shallow = flat_depth(n, 1.0);
        // deepen only the source-region pixels: d_i doubles, d_bar moves far less
        let lo = (n - 6) / 2;
        let deep = DepthMap::new(
            n,
            n,
            (0..n * n)
                .map(|i| {
                    let (x, y) = (i % n, i / n);
                    if (lo..lo + 6).contains(&x) && (lo..lo + 6).contains(&y) {
                        2.0
                    } else {
                        1.0
                    }
                })
                .collect(),
        )
        .unwrap();
        let a = synth_one(&bg, &shallow, &pool, &cfg, 0).unwrap();
        let b = synth_one(&bg, &deep, &pool, &cfg, 0).unwrap();
        assert!(b.meta.flares[0].gain < a.meta.flares[0].gain);
        for (fa, fb) in a.flare_layer.data().iter().zip(b.flare_layer.data()) {
            assert!(fb <= fa);
        }
    }

    #[test]
    fn skipped_when_nothing_visible() {
        let n = 32;
        // push the template fully off canvas; min_visible can never be met
        let cfg = SynthConfig {
            affine: AffineRanges {
                translate_x_frac: (3.0, 3.0),
                translate_y_frac: (3.0, 3.0),
                ..pinned_affine(0.0, 0.0)
            },
            ..pinned_cfg(1.0)
        };
        let pool = pool_of(block_template(n, 12, 0.2, 6));
        let r = synth_one(&flat_background(n, 0.5), &flat_depth(n, 1.0), &pool, &cfg, 0);
        assert!(matches!(r, Err(Error::SynthesisSkipped)));
    }

    fn write_corpus(dir: &Path, stems: &[&str], n: u32) {
        std::fs::create_dir_all(dir).unwrap();
        for (i, stem) in stems.iter().enumerate() {
            let v = 0.3 + 0.1 * i as f64;
            save_image(
                &flat_background(n, v),
                dir.join(format!("{stem}.png")),
                BitDepth::Eight,
            )
            .unwrap();
        }
    }

    fn write_depths(dir: &Path, stems: &[&str], n: u32) {
        std::fs::create_dir_all(dir).unwrap();
        for stem in stems {
            save_depth(&flat_depth(n, 0.8), dir.join(format!("{stem}.png"))).unwrap();
        }
    }

    #[test]
    fn batch_writes_pairs_and_manifest() {
        let dir = TempDir::new().unwrap();
        let n = 48;
        let stems = ["alpha", "beta", "gamma"];
        write_corpus(&dir.path().join("bg"), &stems, n);
        write_depths(&dir.path().join("d"), &stems, n);
        let backgrounds = Corpus::scan(dir.path().join("bg")).unwrap();
        let depths = Corpus::scan(dir.path().join("d")).unwrap();
        let pool = pool_of(generate_template(&preset("basic-glare").unwrap()).unwrap());
        let cfg = SynthConfig {
            seed: 5,
            ..SynthConfig::default()
        };
        let out = dir.path().join("out");
        let res = synth_batch(&backgrounds, &depths, &pool, &cfg, 10, &out, 2, |_| {}).unwrap();
        assert_eq!(res.pairs, 10);
        let manifest = std::fs::read_to_string(out.join("manifest.jsonl")).unwrap();
        let records: Vec<ManifestRecord> = manifest
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(records.len(), 10);
        for (i, r) in records.iter().enumerate() {
            assert_eq!(r.index, i as u64);
            assert!(stems.contains(&r.background_stem.as_str()));
            assert_eq!(r.fov_deg, cfg.fov_deg);
            assert_eq!(r.seed, 5);
            assert!(out.join(&r.input).exists());
            assert!(out.join(&r.gt).exists());
            assert!(out.join(&r.flare).exists());
            assert!(out.join(&r.mask).exists());
            assert!(out.join(&r.meta).exists());
            assert!(out.join(r.gt_src.as_ref().unwrap()).exists());
        }
    }

    #[test]
    fn worker_count_does_not_change_bytes() {
        let dir = TempDir::new().unwrap();
        let n = 40;
        let stems = ["a", "b"];
        write_corpus(&dir.path().join("bg"), &stems, n);
        write_depths(&dir.path().join("d"), &stems, n);
        let backgrounds = Corpus::scan(dir.path().join("bg")).unwrap();
        let depths = Corpus::scan(dir.path().join("d")).unwrap();
        let pool = pool_of(generate_template(&preset("basic-streak").unwrap()).unwrap());
        let cfg = SynthConfig {
            seed: 77,
            noise_sigma_range: (0.002, 0.008),
            ..SynthConfig::default()
        };
        let (o1, o4) = (dir.path().join("w1"), dir.path().join("w4"));
        synth_batch(&backgrounds, &depths, &pool, &cfg, 6, &o1, 1, |_| {}).unwrap();
        synth_batch(&backgrounds, &depths, &pool, &cfg, 6, &o4, 4, |_| {}).unwrap();
        let mut names: Vec<_> = std::fs::read_dir(&o1)
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        assert!(names.len() > 6);
        for name in names {
            let a = std::fs::read(o1.join(&name)).unwrap();
            let b = std::fs::read(o4.join(&name)).unwrap();
            assert_eq!(a, b, "differs: {name:?}");
        }
    }

    #[test]
    fn batch_requires_matching_depths() {
        let dir = TempDir::new().unwrap();
        write_corpus(&dir.path().join("bg"), &["a", "b"], 32);
        write_depths(&dir.path().join("d"), &["a"], 32);
        let backgrounds = Corpus::scan(dir.path().join("bg")).unwrap();
        let depths = Corpus::scan(dir.path().join("d")).unwrap();
        let pool = pool_of(block_template(32, 12, 0.2, 6));
        let r = synth_batch(
            &backgrounds,
            &depths,
            &pool,
            &SynthConfig::default(),
            2,
            dir.path().join("out"),
            1,
            |_| {},
        );
        assert!(r.is_err());
    }

    #[test]
    fn config_validation_rejects_bad_ranges() {
        let ok = SynthConfig::default();
        ok.validate().unwrap();
        let bad = SynthConfig {
            flare_count_range: (0, 2),
            ..ok.clone()
        };
        assert!(bad.validate().is_err());
        let bad = SynthConfig {
            gamma_range: (2.2, 1.8),
            ..ok.clone()
        };
        assert!(bad.validate().is_err());
        let bad = SynthConfig {
            fov_deg: 200.0,
            ..ok.clone()
        };
        assert!(bad.validate().is_err());
        let bad = SynthConfig {
            gain_clamp: Some((0.0, 5.0)),
            ..ok
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn pool_order_is_independent_of_insertion() {
        let a = TemplatePool::new(vec![
            ("z".into(), block_template(16, 6, 0.1, 4)),
            ("a".into(), block_template(16, 8, 0.1, 4)),
        ])
        .unwrap();
        assert_eq!(a.ids(), &["a".to_string(), "z".to_string()]);
    }
}
