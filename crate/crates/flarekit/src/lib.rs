//! Lens-flare synthesis and evaluation toolkit.
//!
//! The pipeline composites procedurally generated flare templates onto
//! clean backgrounds: each flare is warped by a seeded random affine, its
//! brightness is adjusted from the background's depth map and the camera's
//! field of view, and the sum is clipped back to displayable range. Ground
//! truth (the flare-free background) falls out for free, which makes the
//! output directly usable as paired training data for flare removal.
//!
//! Modules:
//! - [`imaging`]: float image planes, depth maps, region masks, PNG IO.
//! - [`depth`]: synthetic depth maps for backgrounds that lack real ones.
//! - [`rng`]: seeded, salted deterministic random streams.
//! - [`template`]: procedural flare/glare/ghost template generation.
//! - [`affine`]: random affine placement and inverse-mapped warping.
//! - [`illumination`]: light-source position estimation and the
//!   distance/angle brightness law.
//! - [`synthesis`]: the end-to-end compositing pipeline.
//! - [`metrics`]: masked PSNR/SSIM over flare-affected regions.
//! - [`config`]: flat key-value run configuration.

pub mod affine;
pub mod config;
pub mod depth;
pub mod error;
pub mod illumination;
pub mod imaging;
pub mod metrics;
pub mod rng;
pub mod synthesis;
pub mod template;

pub use error::{Error, Result};
pub use imaging::{DepthMap, Encoding, ImagePlane, RegionMask};
