//! Synthetic depth maps so the pipeline runs end-to-end without an external
//! monocular depth estimator.

use crate::error::{Error, Result};
use crate::imaging::DepthMap;

/// Analytic depth profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DepthMode {
    Constant(f64),
    /// Linear in normalized distance from the canvas center: `near` at the
    /// center, `far` at the farthest corner.
    Radial { near: f64, far: f64 },
    /// Linear across columns, `left` at x = 0 and `right` at x = width-1.
    HorizontalRamp { left: f64, right: f64 },
}

pub fn synth_depth(width: u32, height: u32, mode: DepthMode) -> Result<DepthMap> {
    match mode {
        DepthMode::Constant(c) => {
            if c <= 0.0 || !c.is_finite() {
                return Err(Error::InvalidParam(format!("depth {c} must be > 0")));
            }
            DepthMap::new(width, height, vec![c; width as usize * height as usize])
        }
        DepthMode::Radial { near, far } => {
            if near <= 0.0 || far <= 0.0 || !near.is_finite() || !far.is_finite() {
                return Err(Error::InvalidParam("radial depths must be > 0".into()));
            }
            if near > far {
                return Err(Error::InvalidParam(format!(
                    "radial near {near} must be <= far {far}"
                )));
            }
            let cx = (width as f64 - 1.0) / 2.0;
            let cy = (height as f64 - 1.0) / 2.0;
            let dist_max = (cx * cx + cy * cy).sqrt();
            let mut data = Vec::with_capacity(width as usize * height as usize);
            for y in 0..height {
                for x in 0..width {
                    let dx = x as f64 - cx;
                    let dy = y as f64 - cy;
                    let t = if dist_max > 0.0 {
                        (dx * dx + dy * dy).sqrt() / dist_max
                    } else {
                        0.0
                    };
                    data.push(near + (far - near) * t);
                }
            }
            DepthMap::new(width, height, data)
        }
        DepthMode::HorizontalRamp { left, right } => {
            if left <= 0.0 || right <= 0.0 || !left.is_finite() || !right.is_finite() {
                return Err(Error::InvalidParam("ramp depths must be > 0".into()));
            }
            let mut data = Vec::with_capacity(width as usize * height as usize);
            for _y in 0..height {
                for x in 0..width {
                    let t = if width > 1 {
                        x as f64 / (width as f64 - 1.0)
                    } else {
                        0.0
                    };
                    data.push(left + (right - left) * t);
                }
            }
            DepthMap::new(width, height, data)
        }
    }
}
