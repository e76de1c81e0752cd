//! Spatial position estimation and depth-aware brightness adjustment.
//!
//! A flare's light source is located from its annotation and the background's
//! depth map; its gain follows the inverse-square/cosine illumination law
//! relative to an on-axis, mean-depth reference.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{DepthMap, ImagePlane, RegionMask};

/// Camera geometry: horizontal field of view plus the background's pixel
/// frame. Image center is pinned at `((W-1)/2, (H-1)/2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel {
    fov_deg: f64,
    width: u32,
    center: (f64, f64),
}

impl CameraModel {
    pub fn new(fov_deg: f64, width: u32, height: u32) -> Result<Self> {
        if !(fov_deg > 0.0 && fov_deg < 180.0) {
            return Err(Error::InvalidParam(format!(
                "horizontal fov {fov_deg} must lie in (0, 180) degrees"
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidParam("zero camera frame dimension".into()));
        }
        Ok(Self {
            fov_deg,
            width,
            center: ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0),
        })
    }

    pub fn fov_deg(&self) -> f64 {
        self.fov_deg
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn center(&self) -> (f64, f64) {
        self.center
    }

    /// `tan(fov/2)`.
    fn half_fov_tan(&self) -> f64 {
        (self.fov_deg.to_radians() / 2.0).tan()
    }

    /// Incident angle for a source at mean pixel radius `r`:
    /// `arctan((2r/W) * tan(fov/2))`.
    pub fn incident_angle(&self, radius_px: f64) -> f64 {
        ((2.0 * radius_px / self.width as f64) * self.half_fov_tan()).atan()
    }
}

/// Per-flare quantities derived from the annotation and depth map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialEstimate {
    /// Mean depth over the light-source pixels.
    pub mean_depth: f64,
    /// Mean Euclidean pixel distance from the source pixels to the image center.
    pub mean_radius_px: f64,
    /// Incident angle in radians.
    pub incident_rad: f64,
    /// Number of visible light-source pixels.
    pub visible_px: u32,
    /// Mean pixel position of the source.
    pub centroid: (f64, f64),
}

/// A point sample of the illumination law. The intensity cancels in the
/// brightness ratio and is fixed to 1 in the pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IlluminanceSample {
    intensity: f64,
    angle_rad: f64,
    distance: f64,
}

impl IlluminanceSample {
    pub fn new(intensity: f64, angle_rad: f64, distance: f64) -> Result<Self> {
        if !(intensity.is_finite() && intensity >= 0.0) {
            return Err(Error::InvalidParam(format!(
                "intensity {intensity} must be >= 0"
            )));
        }
        if !(0.0..std::f64::consts::FRAC_PI_2).contains(&angle_rad) {
            return Err(Error::InvalidParam(format!(
                "angle {angle_rad} must lie in [0, pi/2)"
            )));
        }
        if !(distance.is_finite() && distance > 0.0) {
            return Err(Error::InvalidParam(format!(
                "distance {distance} must be > 0"
            )));
        }
        Ok(Self {
            intensity,
            angle_rad,
            distance,
        })
    }
}

/// `E = I * cos(theta) / d^2`.
pub fn illuminance(s: &IlluminanceSample) -> f64 {
    s.intensity * s.angle_rad.cos() / (s.distance * s.distance)
}

/// Thresholds an annotation into a light-source mask: strictly greater than
/// `tau`. May be empty; callers must check.
pub fn source_region(annotation: &ImagePlane, tau: f64) -> Result<RegionMask> {
    if annotation.channels() != 1 {
        return Err(Error::InvalidImage(
            "source annotation must be single-channel".into(),
        ));
    }
    let data = annotation.data().iter().map(|&v| v > tau).collect();
    RegionMask::new(annotation.width(), annotation.height(), data)
}

/// Mean depth, mean center distance, and incident angle of a source region.
pub fn estimate_spatial(
    mask: &RegionMask,
    depth: &DepthMap,
    cam: &CameraModel,
) -> Result<SpatialEstimate> {
    if mask.width() != depth.width() || mask.height() != depth.height() {
        return Err(Error::DimensionMismatch {
            expected_w: mask.width(),
            expected_h: mask.height(),
            got_w: depth.width(),
            got_h: depth.height(),
        });
    }
    let (cx, cy) = cam.center();
    let mut depth_sum = 0.0;
    let mut radius_sum = 0.0;
    let mut x_sum = 0.0;
    let mut y_sum = 0.0;
    let mut n = 0u32;
    for (x, y) in mask.included_pixels() {
        depth_sum += depth.get(x, y);
        let dx = x as f64 - cx;
        let dy = y as f64 - cy;
        radius_sum += (dx * dx + dy * dy).sqrt();
        x_sum += x as f64;
        y_sum += y as f64;
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptySourceRegion);
    }
    let inv = 1.0 / n as f64;
    let mean_radius_px = radius_sum * inv;
    Ok(SpatialEstimate {
        mean_depth: depth_sum * inv,
        mean_radius_px,
        incident_rad: cam.incident_angle(mean_radius_px),
        visible_px: n,
        centroid: (x_sum * inv, y_sum * inv),
    })
}

/// Arithmetic mean over all pixels of the depth map.
pub fn mean_depth(depth: &DepthMap) -> f64 {
    depth.data().iter().sum::<f64>() / depth.data().len() as f64
}

/// Default gain clamp. Monocular depth is noisy; unbounded inverse-square
/// gains blow flares out. Pass `None` for the literal formula.
pub const DEFAULT_GAIN_CLAMP: (f64, f64) = (0.05, 5.0);

/// Brightness gain relative to an on-axis source at the image's mean depth:
/// `g = d_bar^2 / (d_i^2 * sqrt(1 + ((2 r_i / W) * tan(fov/2))^2))`.
pub fn brightness_gain(
    est: &SpatialEstimate,
    d_bar: f64,
    cam: &CameraModel,
    clamp: Option<(f64, f64)>,
) -> Result<f64> {
    if !(d_bar.is_finite() && d_bar > 0.0) {
        return Err(Error::InvalidParam(format!("d_bar {d_bar} must be > 0")));
    }
    if !(est.mean_depth.is_finite() && est.mean_depth > 0.0) {
        return Err(Error::InvalidParam("estimate mean_depth must be > 0".into()));
    }
    let t = (2.0 * est.mean_radius_px / cam.width() as f64) * cam.half_fov_tan();
    let g = (d_bar * d_bar) / (est.mean_depth * est.mean_depth * (1.0 + t * t).sqrt());
    Ok(match clamp {
        Some((lo, hi)) => g.clamp(lo, hi),
        None => g,
    })
}

/// Scalar multiply of every sample. Deliberately unclipped; clipping happens
/// once at compositing.
pub fn apply_gain(flare: &ImagePlane, g: f64) -> Result<ImagePlane> {
    if !(g.is_finite() && g >= 0.0) {
        return Err(Error::InvalidParam(format!("gain {g} must be >= 0")));
    }
    flare.map(flare.encoding(), |v| v * g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::Encoding;
    use crate::rng::stream;
    use rand::Rng;

    fn mask_from_pixels(w: u32, h: u32, pixels: &[(u32, u32)]) -> RegionMask {
        let mut data = vec![false; (w * h) as usize];
        for &(x, y) in pixels {
            data[(y * w + x) as usize] = true;
        }
        RegionMask::new(w, h, data).unwrap()
    }

    #[test]
    fn source_region_thresholds_strictly() {
        let ann = ImagePlane::new(3, 1, 1, vec![0.0, 0.5, 0.6], Encoding::Linear).unwrap();
        let m = source_region(&ann, 0.5).unwrap();
        assert_eq!(m.data(), &[false, false, true]);
        let all0 = ImagePlane::zeros(2, 2, 1, Encoding::Linear).unwrap();
        assert_eq!(source_region(&all0, 0.5).unwrap().count_included(), 0);
        let all1 = ImagePlane::filled(2, 2, 1, 1.0, Encoding::Linear).unwrap();
        assert_eq!(source_region(&all1, 0.5).unwrap().count_included(), 4);
    }

    #[test]
    fn on_axis_single_pixel() {
        let w = 31u32;
        let cam = CameraModel::new(70.0, w, w).unwrap();
        let depth = DepthMap::new(w, w, vec![5.0; (w * w) as usize]).unwrap();
        let mask = mask_from_pixels(w, w, &[(15, 15)]);
        let est = estimate_spatial(&mask, &depth, &cam).unwrap();
        assert_eq!(est.mean_depth, 5.0);
        assert_eq!(est.mean_radius_px, 0.0);
        assert_eq!(est.incident_rad, 0.0);
        assert_eq!(est.visible_px, 1);
    }

    #[test]
    fn mean_depth_of_three_pixels() {
        let w = 8u32;
        let cam = CameraModel::new(60.0, w, w).unwrap();
        let mut d = vec![1.0; 64];
        d[0] = 2.0;
        d[1] = 4.0;
        d[2] = 6.0;
        let depth = DepthMap::new(w, w, d).unwrap();
        let mask = mask_from_pixels(w, w, &[(0, 0), (1, 0), (2, 0)]);
        let est = estimate_spatial(&mask, &depth, &cam).unwrap();
        assert_eq!(est.mean_depth, 4.0);
    }

    #[test]
    fn incident_angle_closed_form() {
        // fov 60 deg, W=2000, r=500 -> arctan(0.5 * tan 30deg)
        let cam = CameraModel::new(60.0, 2000, 2000).unwrap();
        let theta = cam.incident_angle(500.0);
        let expect = (0.5 * (30.0f64.to_radians()).tan()).atan();
        assert!((theta - expect).abs() < 1e-15);
        assert!((theta - 0.281035).abs() < 1e-6);
        assert!((theta.to_degrees() - 16.1021).abs() < 1e-3);
    }

    #[test]
    fn edge_of_field_identity() {
        // two pixels at center distances 15 and 16 -> mean 15.5 = W/2 for W=31
        let (w, h) = (31u32, 33u32);
        let cam = CameraModel::new(84.0, w, h).unwrap();
        let depth = DepthMap::new(w, h, vec![1.0; (w * h) as usize]).unwrap();
        let mask = mask_from_pixels(w, h, &[(0, 16), (15, 0)]);
        let est = estimate_spatial(&mask, &depth, &cam).unwrap();
        assert_eq!(est.mean_radius_px, 15.5);
        assert_eq!(est.incident_rad, 84.0f64.to_radians() / 2.0);
    }

    #[test]
    fn empty_mask_is_an_error() {
        let cam = CameraModel::new(60.0, 4, 4).unwrap();
        let depth = DepthMap::new(4, 4, vec![1.0; 16]).unwrap();
        let mask = RegionMask::empty(4, 4).unwrap();
        assert!(matches!(
            estimate_spatial(&mask, &depth, &cam),
            Err(Error::EmptySourceRegion)
        ));
    }

    #[test]
    fn illuminance_cases() {
        let s = IlluminanceSample::new(100.0, 0.0, 2.0).unwrap();
        assert_eq!(illuminance(&s), 25.0);
        let s = IlluminanceSample::new(1.0, 60.0f64.to_radians(), 1.0).unwrap();
        assert!((illuminance(&s) - 0.5).abs() < 1e-15);
        let near = IlluminanceSample::new(3.0, 0.3, 1.5).unwrap();
        let far = IlluminanceSample::new(3.0, 0.3, 3.0).unwrap();
        assert!((illuminance(&near) / illuminance(&far) - 4.0).abs() < 1e-12);
        assert!(IlluminanceSample::new(1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn mean_depth_cases() {
        let d = DepthMap::new(2, 2, vec![3.0; 4]).unwrap();
        assert_eq!(mean_depth(&d), 3.0);
        let d = DepthMap::new(2, 1, vec![1.0, 3.0]).unwrap();
        assert_eq!(mean_depth(&d), 2.0);
        // naive summation oracle on a random 16x16 map
        let mut rng = stream(5, &[1]);
        let vals: Vec<f64> = (0..256).map(|_| rng.gen_range(0.1..10.0)).collect();
        let d = DepthMap::new(16, 16, vals.clone()).unwrap();
        let mut acc = 0.0;
        for v in &vals {
            acc += v;
        }
        assert!((mean_depth(&d) - acc / 256.0).abs() < 1e-12);
    }

    fn est(d: f64, r: f64) -> SpatialEstimate {
        SpatialEstimate {
            mean_depth: d,
            mean_radius_px: r,
            incident_rad: 0.0,
            visible_px: 1,
            centroid: (0.0, 0.0),
        }
    }

    #[test]
    fn gain_reference_and_inverse_square() {
        let cam = CameraModel::new(60.0, 1000, 1000).unwrap();
        let g = brightness_gain(&est(2.0, 0.0), 2.0, &cam, None).unwrap();
        assert!((g - 1.0).abs() < 1e-12);
        let g = brightness_gain(&est(4.0, 0.0), 2.0, &cam, None).unwrap();
        assert!((g - 0.25).abs() < 1e-12);
    }

    #[test]
    fn gain_edge_of_field_cosine() {
        let cam = CameraModel::new(90.0, 1000, 1000).unwrap();
        let g = brightness_gain(&est(1.0, 500.0), 1.0, &cam, None).unwrap();
        assert!((g - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-6);
    }

    #[test]
    fn gain_clamps() {
        let cam = CameraModel::new(60.0, 1000, 1000).unwrap();
        let g = brightness_gain(&est(0.01, 0.0), 1.0, &cam, Some((0.05, 5.0))).unwrap();
        assert_eq!(g, 5.0);
        let g = brightness_gain(&est(100.0, 0.0), 1.0, &cam, Some((0.05, 5.0))).unwrap();
        assert_eq!(g, 0.05);
    }

    #[test]
    fn gain_two_forms_agree() {
        let cam = CameraModel::new(84.0, 640, 480).unwrap();
        let mut rng = stream(77, &[2]);
        for _ in 0..1000 {
            let d = rng.gen_range(0.1..10.0);
            let r = rng.gen_range(0.0..400.0);
            let d_bar = rng.gen_range(0.1..10.0);
            let e = SpatialEstimate {
                incident_rad: cam.incident_angle(r),
                ..est(d, r)
            };
            let sqrt_form = brightness_gain(&e, d_bar, &cam, None).unwrap();
            let cos_form = e.incident_rad.cos() * d_bar * d_bar / (d * d);
            assert!((sqrt_form - cos_form).abs() < 1e-12);
        }
    }

    #[test]
    fn gain_strictly_decreasing_in_depth_and_radius() {
        let cam = CameraModel::new(84.0, 640, 480).unwrap();
        let mut rng = stream(78, &[3]);
        for _ in 0..1000 {
            let d_bar = rng.gen_range(0.1..10.0);
            let d1 = rng.gen_range(0.1..10.0);
            let d2 = d1 * rng.gen_range(1.01..3.0);
            let r1 = rng.gen_range(0.0..300.0);
            let r2 = r1 + rng.gen_range(1.0..100.0);
            let g_near = brightness_gain(&est(d1, r1), d_bar, &cam, None).unwrap();
            let g_deep = brightness_gain(&est(d2, r1), d_bar, &cam, None).unwrap();
            let g_off = brightness_gain(&est(d1, r2), d_bar, &cam, None).unwrap();
            assert!(g_deep < g_near);
            assert!(g_off < g_near);
        }
    }

    #[test]
    fn theta_increasing_in_radius_and_fov() {
        let cam_a = CameraModel::new(60.0, 640, 480).unwrap();
        let cam_b = CameraModel::new(90.0, 640, 480).unwrap();
        let mut prev = -1.0;
        for r in [0.0, 10.0, 50.0, 200.0, 320.0, 500.0] {
            let t = cam_a.incident_angle(r);
            assert!(t > prev);
            assert!(cam_b.incident_angle(r) > t || r == 0.0);
            prev = t;
        }
        assert_eq!(cam_a.incident_angle(0.0), 0.0);
        assert_eq!(cam_a.incident_angle(320.0), 30.0f64.to_radians());
    }

    #[test]
    fn depth_scale_invariance() {
        let cam = CameraModel::new(75.0, 800, 600).unwrap();
        let mut rng = stream(79, &[4]);
        for _ in 0..200 {
            let d = rng.gen_range(0.1..5.0);
            let r = rng.gen_range(0.0..400.0);
            let d_bar = rng.gen_range(0.1..5.0);
            let lambda = rng.gen_range(0.01..100.0);
            let g1 = brightness_gain(&est(d, r), d_bar, &cam, None).unwrap();
            let g2 = brightness_gain(&est(d * lambda, r), d_bar * lambda, &cam, None).unwrap();
            assert!((g1 - g2).abs() <= 1e-9 * g1.abs().max(1.0));
        }
    }

    #[test]
    fn estimate_is_permutation_invariant() {
        // the estimate depends only on the pixel set, not discovery order:
        // build the same mask from two differently ordered pixel lists
        let (w, h) = (16u32, 16u32);
        let cam = CameraModel::new(60.0, w, h).unwrap();
        let mut rng = stream(80, &[5]);
        let vals: Vec<f64> = (0..256).map(|_| rng.gen_range(0.5..4.0)).collect();
        let depth = DepthMap::new(w, h, vals).unwrap();
        let pixels = [(1u32, 2u32), (7, 9), (3, 3), (12, 0), (0, 15)];
        let mut reversed = pixels;
        reversed.reverse();
        let a = estimate_spatial(&mask_from_pixels(w, h, &pixels), &depth, &cam).unwrap();
        let b = estimate_spatial(&mask_from_pixels(w, h, &reversed), &depth, &cam).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn apply_gain_cases() {
        let img = ImagePlane::filled(2, 2, 1, 0.8, Encoding::Linear).unwrap();
        assert_eq!(apply_gain(&img, 1.0).unwrap().data(), img.data());
        assert!(apply_gain(&img, 0.0).unwrap().data().iter().all(|&v| v == 0.0));
        let g = apply_gain(&img, 0.25).unwrap();
        assert!(g.data().iter().all(|&v| (v - 0.2).abs() < 1e-15));
        // gains above 1 leave the unit range, by design
        let over = apply_gain(&img, 2.0).unwrap();
        assert!(over.data().iter().all(|&v| (v - 1.6).abs() < 1e-15));
    }

    #[test]
    fn fov_bounds_enforced() {
        assert!(CameraModel::new(0.0, 10, 10).is_err());
        assert!(CameraModel::new(180.0, 10, 10).is_err());
        assert!(CameraModel::new(179.9, 10, 10).is_ok());
    }
}
