//! Seeded random affine placement of flare templates onto the background
//! canvas, with inverse-mapping resampling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::ImagePlane;

/// One sampled placement. `translation` is the offset, in canvas pixels, of
/// the template center from the canvas center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    pub scale: f64,
    pub rotation_rad: f64,
    pub translate_px: (f64, f64),
    pub shear: (f64, f64),
}

impl AffineParams {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation_rad: 0.0,
            translate_px: (0.0, 0.0),
            shear: (0.0, 0.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale <= 8.0) {
            return Err(Error::InvalidParam(format!(
                "scale {} outside (0, 8]",
                self.scale
            )));
        }
        let (sx, sy) = self.shear;
        if !(-1.0..=1.0).contains(&sx) || !(-1.0..=1.0).contains(&sy) {
            return Err(Error::InvalidParam(format!(
                "shear ({sx}, {sy}) outside [-1, 1]"
            )));
        }
        if (1.0 - sx * sy).abs() < 1e-9 {
            return Err(Error::InvalidParam("degenerate shear (sx*sy == 1)".into()));
        }
        if !(self.rotation_rad.is_finite()
            && self.translate_px.0.is_finite()
            && self.translate_px.1.is_finite())
        {
            return Err(Error::InvalidParam("non-finite affine parameter".into()));
        }
        Ok(())
    }

    /// Forward 2x2 matrix `R(rotation) * Shear * scale`, row major.
    fn matrix(&self) -> [f64; 4] {
        let (s, c) = self.rotation_rad.sin_cos();
        let (sx, sy) = self.shear;
        let k = self.scale;
        // R * Sh, then * k
        [
            k * (c - s * sy),
            k * (c * sx - s),
            k * (s + c * sy),
            k * (s * sx + c),
        ]
    }
}

/// Uniform sampling ranges for [`AffineParams`]. Translation is expressed as
/// a fraction of the canvas dimensions so one config covers backgrounds of
/// any size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineRanges {
    pub scale: (f64, f64),
    pub rotation_rad: (f64, f64),
    pub translate_x_frac: (f64, f64),
    pub translate_y_frac: (f64, f64),
    pub shear_x: (f64, f64),
    pub shear_y: (f64, f64),
    pub min_visible_source_px: u32,
    pub max_retries: u32,
}

impl Default for AffineRanges {
    fn default() -> Self {
        Self {
            scale: (0.5, 1.5),
            rotation_rad: (0.0, std::f64::consts::TAU),
            translate_x_frac: (-0.5, 0.5),
            translate_y_frac: (-0.5, 0.5),
            shear_x: (-0.2, 0.2),
            shear_y: (-0.2, 0.2),
            min_visible_source_px: 16,
            max_retries: 8,
        }
    }
}

impl AffineRanges {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("scale", self.scale),
            ("rotation", self.rotation_rad),
            ("translate_x", self.translate_x_frac),
            ("translate_y", self.translate_y_frac),
            ("shear_x", self.shear_x),
            ("shear_y", self.shear_y),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::InvalidParam(format!(
                    "affine range {name}: min {lo} must be <= max {hi}"
                )));
            }
        }
        if self.scale.0 <= 0.0 || self.scale.1 > 8.0 {
            return Err(Error::InvalidParam("scale range outside (0, 8]".into()));
        }
        if self.shear_x.0 < -1.0 || self.shear_x.1 > 1.0 || self.shear_y.0 < -1.0 || self.shear_y.1 > 1.0 {
            return Err(Error::InvalidParam("shear range outside [-1, 1]".into()));
        }
        if self.max_retries < 1 {
            return Err(Error::InvalidParam("max_retries must be >= 1".into()));
        }
        Ok(())
    }
}

fn draw(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

/// Draws each field independently and uniformly from its range. Fields are
/// consumed in a fixed order (scale, rotation, tx, ty, sx, sy) so streams
/// stay aligned across runs.
pub fn sample_affine(
    ranges: &AffineRanges,
    canvas: (u32, u32),
    rng: &mut impl Rng,
) -> AffineParams {
    let scale = draw(rng, ranges.scale);
    let rotation_rad = draw(rng, ranges.rotation_rad);
    let tx = draw(rng, ranges.translate_x_frac) * canvas.0 as f64;
    let ty = draw(rng, ranges.translate_y_frac) * canvas.1 as f64;
    let sx = draw(rng, ranges.shear_x);
    let sy = draw(rng, ranges.shear_y);
    AffineParams {
        scale,
        rotation_rad,
        translate_px: (tx, ty),
        shear: (sx, sy),
    }
}

/// Resampling filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    Bilinear,
    Nearest,
}

#[inline]
fn sample_or_zero(src: &ImagePlane, x: i64, y: i64, c: u8) -> f64 {
    if x < 0 || y < 0 || x >= src.width() as i64 || y >= src.height() as i64 {
        0.0
    } else {
        src.get(x as u32, y as u32, c)
    }
}

/// Warps `src` onto a `canvas`-sized output by destination-driven inverse
/// mapping. Samples falling outside the source are 0 (no flare).
pub fn apply_affine(
    src: &ImagePlane,
    params: &AffineParams,
    canvas: (u32, u32),
    interpolation: Interpolation,
) -> Result<ImagePlane> {
    params.validate()?;
    let (cw, ch) = canvas;
    if cw == 0 || ch == 0 {
        return Err(Error::InvalidParam("zero canvas dimension".into()));
    }
    let m = params.matrix();
    let det = m[0] * m[3] - m[1] * m[2];
    // inverse of the forward 2x2
    let inv = [m[3] / det, -m[1] / det, -m[2] / det, m[0] / det];
    let src_cx = (src.width() as f64 - 1.0) / 2.0;
    let src_cy = (src.height() as f64 - 1.0) / 2.0;
    let dst_cx = (cw as f64 - 1.0) / 2.0;
    let dst_cy = (ch as f64 - 1.0) / 2.0;
    let (tx, ty) = params.translate_px;

    let channels = src.channels();
    let mut data = Vec::with_capacity(cw as usize * ch as usize * channels as usize);
    for y in 0..ch {
        for x in 0..cw {
            let qx = x as f64 - dst_cx - tx;
            let qy = y as f64 - dst_cy - ty;
            let u = inv[0] * qx + inv[1] * qy + src_cx;
            let v = inv[2] * qx + inv[3] * qy + src_cy;
            match interpolation {
                Interpolation::Nearest => {
                    let xi = u.round() as i64;
                    let yi = v.round() as i64;
                    for c in 0..channels {
                        data.push(sample_or_zero(src, xi, yi, c));
                    }
                }
                Interpolation::Bilinear => {
                    let x0 = u.floor();
                    let y0 = v.floor();
                    let fx = u - x0;
                    let fy = v - y0;
                    let (x0, y0) = (x0 as i64, y0 as i64);
                    for c in 0..channels {
                        let p00 = sample_or_zero(src, x0, y0, c);
                        let p10 = sample_or_zero(src, x0 + 1, y0, c);
                        let p01 = sample_or_zero(src, x0, y0 + 1, c);
                        let p11 = sample_or_zero(src, x0 + 1, y0 + 1, c);
                        let top = p00 * (1.0 - fx) + p10 * fx;
                        let bot = p01 * (1.0 - fx) + p11 * fx;
                        data.push(top * (1.0 - fy) + bot * fy);
                    }
                }
            }
        }
    }
    ImagePlane::new(cw, ch, channels, data, src.encoding())
}

/// Maps a source-frame point to the canvas frame under `params`. Used by
/// tests and diagnostics; the warp itself inverse-maps.
pub fn forward_point(
    params: &AffineParams,
    src_dims: (u32, u32),
    canvas: (u32, u32),
    p: (f64, f64),
) -> (f64, f64) {
    let m = params.matrix();
    let src_cx = (src_dims.0 as f64 - 1.0) / 2.0;
    let src_cy = (src_dims.1 as f64 - 1.0) / 2.0;
    let dst_cx = (canvas.0 as f64 - 1.0) / 2.0;
    let dst_cy = (canvas.1 as f64 - 1.0) / 2.0;
    let dx = p.0 - src_cx;
    let dy = p.1 - src_cy;
    (
        m[0] * dx + m[1] * dy + dst_cx + params.translate_px.0,
        m[2] * dx + m[3] * dy + dst_cy + params.translate_px.1,
    )
}

pub const DEFAULT_SOURCE_THRESHOLD: f64 = 0.5;
