//! Procedural flare templates with paired light-source annotations.
//!
//! A template is an additive flare image over black plus a single-channel
//! annotation marking only the light-source disc. Four component kinds are
//! composited additively: the source disc, an isotropic glare falloff,
//! anisotropic streaks through the source, and iris ghosts marching along the
//! line from the source through the canvas center. All randomness comes from
//! the recipe's seed, so generation is a pure function of the recipe.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::affine::DEFAULT_SOURCE_THRESHOLD;
use crate::error::{Error, Result};
use crate::illumination::source_region;
use crate::imaging::{clip01, load_image, save_image, BitDepth, Encoding, ImagePlane};
use crate::rng::{stream, SALT_GHOST, SALT_TEMPLATE_BATCH};

/// Iris ghost outline. Serialized as `"circle"` or `"polygon-<k>"` with
/// `k >= 3` vertices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GhostShape {
    Circle,
    Polygon(u32),
}

impl fmt::Display for GhostShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GhostShape::Circle => write!(f, "circle"),
            GhostShape::Polygon(k) => write!(f, "polygon-{k}"),
        }
    }
}

impl FromStr for GhostShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "circle" {
            return Ok(GhostShape::Circle);
        }
        if let Some(k) = s.strip_prefix("polygon-") {
            let k: u32 = k
                .parse()
                .map_err(|_| Error::InvalidRecipe(format!("bad ghost shape {s:?}")))?;
            if k < 3 {
                return Err(Error::InvalidRecipe(format!(
                    "polygon ghost needs at least 3 vertices, got {k}"
                )));
            }
            return Ok(GhostShape::Polygon(k));
        }
        Err(Error::InvalidRecipe(format!(
            "bad ghost shape {s:?} (expect \"circle\" or \"polygon-<k>\")"
        )))
    }
}

impl Serialize for GhostShape {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for GhostShape {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(D::Error::custom)
    }
}

/// Full parameterization of one template. All positions and lengths are
/// normalized: positions map `[0,1]^2` onto the pixel grid, lengths scale by
/// `min(width, height)` pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlareRecipe {
    /// Output size in pixels, `(width, height)`.
    pub canvas: (u32, u32),
    /// Light-source center in `[0,1]^2`.
    pub source_pos: (f64, f64),
    /// Source disc radius.
    pub source_radius: f64,
    /// Glare falloff sigma; support is cut at four sigma.
    pub glare_sigma: f64,
    /// Tint applied to glare and streaks, RGB in `[0,1]`.
    pub glare_tint: [f64; 3],
    pub streak_count: usize,
    /// One direction per streak, radians; each streak spans both directions.
    pub streak_angles: Vec<f64>,
    /// Streak half-extent along its axis.
    pub streak_length: f64,
    /// Streak profile sigma across its axis; support is cut at four sigma.
    pub streak_width: f64,
    pub ghost_count: usize,
    /// Step along the source-to-center line between consecutive ghosts.
    pub ghost_spacing: f64,
    pub ghost_shapes: Vec<GhostShape>,
    /// Peak ghost opacity, in `(0,1]`.
    pub ghost_alpha: f64,
    /// Drives per-ghost size/rotation/tint draws.
    pub seed: u64,
}

/// Smallest canvas side that leaves room for a source disc plus falloff.
const MIN_CANVAS: u32 = 8;

/// A source disc must cover at least one full pixel to survive thresholding.
const MIN_SOURCE_RADIUS_PX: f64 = 2.0;

impl FlareRecipe {
    /// Pixels per normalized length unit.
    pub fn length_scale(&self) -> f64 {
        self.canvas.0.min(self.canvas.1) as f64
    }

    /// Source center on the pixel grid (same `(n-1)` endpoint convention as
    /// the image center used by position estimation).
    pub fn source_px(&self) -> (f64, f64) {
        (
            self.source_pos.0 * (self.canvas.0 - 1) as f64,
            self.source_pos.1 * (self.canvas.1 - 1) as f64,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let (w, h) = self.canvas;
        if w < MIN_CANVAS || h < MIN_CANVAS {
            return Err(Error::InvalidRecipe(format!(
                "canvas {w}x{h} below minimum {MIN_CANVAS}x{MIN_CANVAS}"
            )));
        }
        let finite = [
            self.source_pos.0,
            self.source_pos.1,
            self.source_radius,
            self.glare_sigma,
            self.streak_length,
            self.streak_width,
            self.ghost_spacing,
            self.ghost_alpha,
        ];
        if finite.iter().any(|v| !v.is_finite())
            || self.glare_tint.iter().any(|v| !v.is_finite())
            || self.streak_angles.iter().any(|v| !v.is_finite())
        {
            return Err(Error::InvalidRecipe("non-finite recipe field".into()));
        }
        if !(0.0..=1.0).contains(&self.source_pos.0) || !(0.0..=1.0).contains(&self.source_pos.1) {
            return Err(Error::InvalidRecipe(format!(
                "source_pos {:?} outside [0,1]^2",
                self.source_pos
            )));
        }
        for (name, v) in [
            ("source_radius", self.source_radius),
            ("glare_sigma", self.glare_sigma),
            ("streak_length", self.streak_length),
            ("streak_width", self.streak_width),
            ("ghost_spacing", self.ghost_spacing),
        ] {
            if v <= 0.0 {
                return Err(Error::InvalidRecipe(format!("{name} {v} must be > 0")));
            }
        }
        if self.glare_tint.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidRecipe(format!(
                "glare_tint {:?} outside [0,1]",
                self.glare_tint
            )));
        }
        if self.streak_angles.len() != self.streak_count {
            return Err(Error::InvalidRecipe(format!(
                "{} streak angles for streak_count {}",
                self.streak_angles.len(),
                self.streak_count
            )));
        }
        if self.ghost_shapes.len() != self.ghost_count {
            return Err(Error::InvalidRecipe(format!(
                "{} ghost shapes for ghost_count {}",
                self.ghost_shapes.len(),
                self.ghost_count
            )));
        }
        for s in &self.ghost_shapes {
            if let GhostShape::Polygon(k) = s {
                if *k < 3 {
                    return Err(Error::InvalidRecipe(format!(
                        "polygon ghost needs at least 3 vertices, got {k}"
                    )));
                }
            }
        }
        if !(self.ghost_alpha > 0.0 && self.ghost_alpha <= 1.0) {
            return Err(Error::InvalidRecipe(format!(
                "ghost_alpha {} outside (0,1]",
                self.ghost_alpha
            )));
        }
        if self.source_radius * self.length_scale() < MIN_SOURCE_RADIUS_PX {
            return Err(Error::InvalidRecipe(format!(
                "source_radius {} spans under {MIN_SOURCE_RADIUS_PX} pixels on this canvas",
                self.source_radius
            )));
        }
        Ok(())
    }
}

/// A rendered flare with its light-source annotation and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct FlareTemplate {
    /// RGB, linear, additive over black, clipped to `[0,1]`.
    pub flare: ImagePlane,
    /// Single channel; nonzero only on the source disc.
    pub source_annotation: ImagePlane,
    pub recipe: FlareRecipe,
    pub type_id: String,
}

impl FlareTemplate {
    /// Checks every structural invariant: matching dimensions, unit range, a
    /// nonempty thresholded source region, and zero flare outside the
    /// component supports (established by regenerating from the recipe).
    pub fn validate(&self) -> Result<()> {
        let (fw, fh) = (self.flare.width(), self.flare.height());
        if fw != self.source_annotation.width() || fh != self.source_annotation.height() {
            return Err(Error::DimensionMismatch {
                expected_w: fw,
                expected_h: fh,
                got_w: self.source_annotation.width(),
                got_h: self.source_annotation.height(),
            });
        }
        if self.flare.channels() != 3 || self.source_annotation.channels() != 1 {
            return Err(Error::InvalidImage(
                "template must pair an RGB flare with a single-channel annotation".into(),
            ));
        }
        if !self.flare.is_unit_range() || !self.source_annotation.is_unit_range() {
            return Err(Error::InvalidImage("template values outside [0,1]".into()));
        }
        let region = source_region(&self.source_annotation, DEFAULT_SOURCE_THRESHOLD)?;
        if region.count_included() == 0 {
            return Err(Error::EmptySourceRegion);
        }
        let fresh = generate_template(&self.recipe)?;
        if fresh.flare.width() != fw || fresh.flare.height() != fh {
            return Err(Error::InvalidRecipe(
                "recipe canvas disagrees with stored planes".into(),
            ));
        }
        // stored values may be quantized, but support cannot grow
        for (stored, regen) in self.flare.data().iter().zip(fresh.flare.data()) {
            if *regen == 0.0 && *stored != 0.0 {
                return Err(Error::InvalidImage(
                    "flare values outside the component supports".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Placement and styling of one iris ghost, in normalized units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GhostGeometry {
    pub center: (f64, f64),
    pub shape: GhostShape,
    /// Circumradius.
    pub radius: f64,
    pub rotation_rad: f64,
    pub tint: [f64; 3],
}

/// Ghost placement for a recipe. Centers sit at
/// `source + k * spacing * (canvas_center - source)` for `k = 1..=count`;
/// size, rotation, and tint are drawn from the recipe seed.
pub fn ghost_geometry(recipe: &FlareRecipe) -> Vec<GhostGeometry> {
    let mut rng = stream(recipe.seed, &[SALT_GHOST]);
    let (sx, sy) = recipe.source_pos;
    let (dx, dy) = (0.5 - sx, 0.5 - sy);
    let mut out = Vec::with_capacity(recipe.ghost_count);
    for k in 1..=recipe.ghost_count {
        let size_factor = rng.gen_range(0.6..1.4);
        let rotation_rad = rng.gen_range(0.0..TAU);
        let tint = [
            rng.gen_range(0.5..1.0),
            rng.gen_range(0.5..1.0),
            rng.gen_range(0.5..1.0),
        ];
        let t = k as f64 * recipe.ghost_spacing;
        out.push(GhostGeometry {
            center: (sx + t * dx, sy + t * dy),
            shape: recipe.ghost_shapes[k - 1],
            radius: recipe.source_radius * (1.0 + 0.4 * k as f64) * size_factor,
            rotation_rad,
            tint,
        });
    }
    out
}

/// Ghost centers in normalized coordinates, ordered by `k`.
pub fn ghost_centers(recipe: &FlareRecipe) -> Vec<(f64, f64)> {
    ghost_geometry(recipe).iter().map(|g| g.center).collect()
}

const GLARE_AMP: f64 = 0.85;
const STREAK_AMP: f64 = 0.7;
const EDGE_PX: f64 = 1.5;

/// Normalized Gaussian falloff that reaches exactly zero at four sigma.
fn trunc_gauss(dist: f64, sigma: f64) -> f64 {
    let u = dist / sigma;
    if u >= 4.0 {
        return 0.0;
    }
    let floor = (-8.0f64).exp();
    ((-0.5 * u * u).exp() - floor) / (1.0 - floor)
}

/// 1 inside, 0 at and beyond the boundary, cosine taper over `edge` before it.
/// `sd` is a signed distance (negative inside).
fn coverage(sd: f64, edge: f64) -> f64 {
    if sd >= 0.0 {
        0.0
    } else if sd <= -edge {
        1.0
    } else {
        0.5 * (1.0 + (PI * (sd + edge) / edge).cos())
    }
}

/// Signed distance to a regular `k`-gon of the given circumradius, exact
/// inside (max over face half-planes).
fn polygon_sd(px: f64, py: f64, k: u32, circum: f64, rot: f64) -> f64 {
    let apothem = circum * (PI / k as f64).cos();
    let mut sd = f64::NEG_INFINITY;
    for i in 0..k {
        let a = rot + TAU * (i as f64 + 0.5) / k as f64;
        sd = sd.max(px * a.cos() + py * a.sin() - apothem);
    }
    sd
}

#[derive(Clone, Copy)]
struct Components {
    source: bool,
    glare: bool,
    streaks: bool,
    ghosts: bool,
}

const ALL_COMPONENTS: Components = Components {
    source: true,
    glare: true,
    streaks: true,
    ghosts: true,
};

/// Renders the selected components. Returns the unclipped RGB sum and the
/// source-disc annotation.
fn render(recipe: &FlareRecipe, comp: Components) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = recipe.canvas;
    let (wu, hu) = (w as usize, h as usize);
    let mut rgb = vec![0.0; wu * hu * 3];
    let mut ann = vec![0.0; wu * hu];
    let scale = recipe.length_scale();
    let (spx, spy) = recipe.source_px();
    let r_px = recipe.source_radius * scale;
    let sigma_px = recipe.glare_sigma * scale;
    let disc_edge = EDGE_PX.min(r_px / 2.0);

    for y in 0..hu {
        for x in 0..wu {
            let dx = x as f64 - spx;
            let dy = y as f64 - spy;
            let dist = (dx * dx + dy * dy).sqrt();
            let disc = coverage(dist - r_px, disc_edge);
            ann[y * wu + x] = disc;
            let i = (y * wu + x) * 3;
            if comp.source {
                for c in 0..3 {
                    rgb[i + c] += disc;
                }
            }
            if comp.glare {
                let g = GLARE_AMP * trunc_gauss(dist, sigma_px);
                for c in 0..3 {
                    rgb[i + c] += g * recipe.glare_tint[c];
                }
            }
        }
    }

    if comp.streaks && recipe.streak_count > 0 {
        let len_px = recipe.streak_length * scale;
        let width_px = recipe.streak_width * scale;
        for &angle in &recipe.streak_angles {
            let (ux, uy) = (angle.cos(), angle.sin());
            for y in 0..hu {
                for x in 0..wu {
                    let dx = x as f64 - spx;
                    let dy = y as f64 - spy;
                    let along = dx * ux + dy * uy;
                    let across = -dx * uy + dy * ux;
                    let v = STREAK_AMP
                        * trunc_gauss(along.abs(), len_px / 4.0)
                        * trunc_gauss(across.abs(), width_px);
                    if v > 0.0 {
                        let i = (y * wu + x) * 3;
                        for c in 0..3 {
                            rgb[i + c] += v * recipe.glare_tint[c];
                        }
                    }
                }
            }
        }
    }

    if comp.ghosts {
        for g in ghost_geometry(recipe) {
            let cx = g.center.0 * (w - 1) as f64;
            let cy = g.center.1 * (h - 1) as f64;
            let circum = g.radius * scale;
            let edge = EDGE_PX.min(circum / 2.0);
            let reach = circum + 1.0;
            let x0 = ((cx - reach).floor().max(0.0)) as usize;
            let x1 = ((cx + reach).ceil().min((wu - 1) as f64)) as usize;
            let y0 = ((cy - reach).floor().max(0.0)) as usize;
            let y1 = ((cy + reach).ceil().min((hu - 1) as f64)) as usize;
            if cx + reach < 0.0 || cy + reach < 0.0 || cx - reach > (wu - 1) as f64 || cy - reach > (hu - 1) as f64 {
                continue;
            }
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let px = x as f64 - cx;
                    let py = y as f64 - cy;
                    let sd = match g.shape {
                        GhostShape::Circle => (px * px + py * py).sqrt() - circum,
                        GhostShape::Polygon(k) => polygon_sd(px, py, k, circum, g.rotation_rad),
                    };
                    let v = recipe.ghost_alpha * coverage(sd, edge);
                    if v > 0.0 {
                        let i = (y * wu + x) * 3;
                        for c in 0..3 {
                            rgb[i + c] += v * g.tint[c];
                        }
                    }
                }
            }
        }
    }

    (rgb, ann)
}

/// Renders a recipe into a template. Pure: the same recipe always produces
/// the same pixels. The `type_id` is `"custom"`; batch generation overrides it.
pub fn generate_template(recipe: &FlareRecipe) -> Result<FlareTemplate> {
    recipe.validate()?;
    let (w, h) = recipe.canvas;
    let (rgb, ann) = render(recipe, ALL_COMPONENTS);
    let flare = clip01(&ImagePlane::new(w, h, 3, rgb, Encoding::Linear)?);
    let source_annotation = ImagePlane::new(w, h, 1, ann, Encoding::Linear)?;
    let region = source_region(&source_annotation, DEFAULT_SOURCE_THRESHOLD)?;
    if region.count_included() == 0 {
        return Err(Error::InvalidRecipe(
            "light source renders below the annotation threshold".into(),
        ));
    }
    Ok(FlareTemplate {
        flare,
        source_annotation,
        recipe: recipe.clone(),
        type_id: "custom".into(),
    })
}

/// Per-field variation ranges for batch generation. Pair fields are
/// multiplicative factor ranges; scalar fields are symmetric absolute deltas.
/// A field draws nothing when its range is degenerate (`0` or `(1,1)`).
#[derive(Debug, Clone, PartialEq)]
pub struct RecipeJitter {
    /// Absolute shift of `source_pos`, each axis uniform in `[-v, v]`.
    pub source_pos: f64,
    pub source_radius: (f64, f64),
    pub glare_sigma: (f64, f64),
    /// Absolute per-channel shift of `glare_tint`.
    pub glare_tint: f64,
    /// Absolute per-streak angle shift in radians.
    pub streak_angle: f64,
    pub streak_length: (f64, f64),
    pub streak_width: (f64, f64),
    pub ghost_spacing: (f64, f64),
    pub ghost_alpha: (f64, f64),
    /// Redraw the recipe seed so per-ghost styling varies across the batch.
    pub reseed: bool,
}

impl RecipeJitter {
    /// No variation at all: every output equals the base recipe.
    pub fn zero() -> Self {
        Self {
            source_pos: 0.0,
            source_radius: (1.0, 1.0),
            glare_sigma: (1.0, 1.0),
            glare_tint: 0.0,
            streak_angle: 0.0,
            streak_length: (1.0, 1.0),
            streak_width: (1.0, 1.0),
            ghost_spacing: (1.0, 1.0),
            ghost_alpha: (1.0, 1.0),
            reseed: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("source_pos", self.source_pos),
            ("glare_tint", self.glare_tint),
            ("streak_angle", self.streak_angle),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParam(format!(
                    "jitter {name} {v} must be finite and >= 0"
                )));
            }
        }
        for (name, (lo, hi)) in [
            ("source_radius", self.source_radius),
            ("glare_sigma", self.glare_sigma),
            ("streak_length", self.streak_length),
            ("streak_width", self.streak_width),
            ("ghost_spacing", self.ghost_spacing),
            ("ghost_alpha", self.ghost_alpha),
        ] {
            if !(lo.is_finite() && hi.is_finite() && 0.0 < lo && lo <= hi) {
                return Err(Error::InvalidParam(format!(
                    "jitter {name} factor range ({lo}, {hi}) invalid"
                )));
            }
        }
        Ok(())
    }
}

impl Default for RecipeJitter {
    fn default() -> Self {
        Self {
            source_pos: 0.06,
            source_radius: (0.8, 1.25),
            glare_sigma: (0.8, 1.25),
            glare_tint: 0.08,
            streak_angle: 0.25,
            streak_length: (0.8, 1.25),
            streak_width: (0.8, 1.25),
            ghost_spacing: (0.9, 1.15),
            ghost_alpha: (0.8, 1.2),
            reseed: true,
        }
    }
}

/// Tries before a jittered field is declared unsatisfiable.
const JITTER_TRIES: u32 = 16;

fn draw_field<R: Rng, T>(
    rng: &mut R,
    field: &str,
    mut propose: impl FnMut(&mut R) -> T,
    accept: impl Fn(&T) -> bool,
) -> Result<T> {
    for _ in 0..JITTER_TRIES {
        let v = propose(rng);
        if accept(&v) {
            return Ok(v);
        }
    }
    Err(Error::InvalidRecipe(format!(
        "no valid {field} after {JITTER_TRIES} draws"
    )))
}

fn factor<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

fn delta<R: Rng>(rng: &mut R, d: f64) -> f64 {
    if d == 0.0 {
        0.0
    } else {
        rng.gen_range(-d..d)
    }
}

/// Applies jitter to a base recipe with a fixed field order. Fields whose
/// candidate violates recipe constraints are redrawn up to 16 times.
fn jitter_recipe<R: Rng>(base: &FlareRecipe, jitter: &RecipeJitter, rng: &mut R) -> Result<FlareRecipe> {
    let mut r = base.clone();
    let min_radius = MIN_SOURCE_RADIUS_PX / base.length_scale();
    if jitter.source_pos > 0.0 {
        let (bx, by) = base.source_pos;
        let d = jitter.source_pos;
        r.source_pos = draw_field(
            rng,
            "source_pos",
            |rng| (bx + delta(rng, d), by + delta(rng, d)),
            |p| (0.0..=1.0).contains(&p.0) && (0.0..=1.0).contains(&p.1),
        )?;
    }
    r.source_radius = draw_field(
        rng,
        "source_radius",
        |rng| base.source_radius * factor(rng, jitter.source_radius),
        |v| *v >= min_radius,
    )?;
    r.glare_sigma = base.glare_sigma * factor(rng, jitter.glare_sigma);
    if jitter.glare_tint > 0.0 {
        let d = jitter.glare_tint;
        r.glare_tint = draw_field(
            rng,
            "glare_tint",
            |rng| {
                [
                    base.glare_tint[0] + delta(rng, d),
                    base.glare_tint[1] + delta(rng, d),
                    base.glare_tint[2] + delta(rng, d),
                ]
            },
            |t| t.iter().all(|v| (0.0..=1.0).contains(v)),
        )?;
    }
    if jitter.streak_angle > 0.0 {
        r.streak_angles = base
            .streak_angles
            .iter()
            .map(|a| a + delta(rng, jitter.streak_angle))
            .collect();
    }
    r.streak_length = base.streak_length * factor(rng, jitter.streak_length);
    r.streak_width = base.streak_width * factor(rng, jitter.streak_width);
    r.ghost_spacing = base.ghost_spacing * factor(rng, jitter.ghost_spacing);
    r.ghost_alpha = draw_field(
        rng,
        "ghost_alpha",
        |rng| base.ghost_alpha * factor(rng, jitter.ghost_alpha),
        |v| *v > 0.0 && *v <= 1.0,
    )?;
    if jitter.reseed {
        r.seed = rng.gen::<u64>();
    }
    r.validate()?;
    Ok(r)
}

/// One batch element, reproducible in isolation: the stream depends only on
/// `(seed, index)`, never on neighboring indices.
pub fn generate_batch_item(
    type_id: &str,
    base: &FlareRecipe,
    jitter: &RecipeJitter,
    seed: u64,
    index: u64,
) -> Result<FlareTemplate> {
    let mut rng = stream(seed, &[SALT_TEMPLATE_BATCH, index]);
    let recipe = jitter_recipe(base, jitter, &mut rng)?;
    let mut t = generate_template(&recipe)?;
    t.type_id = type_id.to_string();
    Ok(t)
}

/// Generates `count` jittered variants of a base recipe. An index whose
/// jitter cannot produce a valid recipe fails the whole batch with that
/// index attached.
pub fn generate_batch(
    type_id: &str,
    base: &FlareRecipe,
    count: u32,
    jitter: &RecipeJitter,
    seed: u64,
) -> Result<Vec<FlareTemplate>> {
    if count == 0 {
        return Err(Error::InvalidParam("batch count must be >= 1".into()));
    }
    base.validate()?;
    jitter.validate()?;
    (0..count as u64)
        .map(|i| {
            generate_batch_item(type_id, base, jitter, seed, i).map_err(|e| {
                Error::BatchIndexFailed {
                    index: i,
                    reason: e.to_string(),
                }
            })
        })
        .collect()
}

fn base_recipe(seed: u64) -> FlareRecipe {
    FlareRecipe {
        canvas: (256, 256),
        source_pos: (0.5, 0.38),
        source_radius: 0.04,
        glare_sigma: 0.09,
        glare_tint: [1.0, 0.93, 0.82],
        streak_count: 0,
        streak_angles: vec![],
        streak_length: 0.5,
        streak_width: 0.012,
        ghost_count: 0,
        ghost_spacing: 0.3,
        ghost_shapes: vec![],
        ghost_alpha: 0.35,
        seed,
    }
}

fn with_streaks(mut r: FlareRecipe, n: usize) -> FlareRecipe {
    // n evenly spread directions; each streak covers both ways, giving 2n rays
    r.streak_count = n;
    r.streak_angles = (0..n).map(|i| i as f64 * PI / n as f64).collect();
    r
}

fn with_ghosts(mut r: FlareRecipe, shapes: Vec<GhostShape>, spacing: f64) -> FlareRecipe {
    r.ghost_count = shapes.len();
    r.ghost_shapes = shapes;
    r.ghost_spacing = spacing;
    r.source_pos = (0.32, 0.3);
    r
}

/// Stable list of built-in type ids: nine basic single-character presets and
/// ten composite "xt" presets.
pub fn preset_ids() -> &'static [&'static str] {
    &[
        "basic-glare",
        "basic-core",
        "basic-halo",
        "basic-streak",
        "basic-cross",
        "basic-star6",
        "basic-ghosts3",
        "basic-ghosts5",
        "basic-iris",
        "xt-sunburst",
        "xt-cross-ghosts",
        "xt-star-halo",
        "xt-ghost-train",
        "xt-poly-chain",
        "xt-wide-streak",
        "xt-thin-star",
        "xt-warm",
        "xt-cool",
        "xt-full",
    ]
}

/// Base recipe for a built-in type id, or `None` if unknown.
pub fn preset(type_id: &str) -> Option<FlareRecipe> {
    use GhostShape::{Circle, Polygon};
    let idx = preset_ids().iter().position(|&id| id == type_id)? as u64;
    let b = base_recipe(0xF1A8E + idx);
    Some(match type_id {
        "basic-glare" => FlareRecipe {
            glare_sigma: 0.11,
            ..b
        },
        "basic-core" => FlareRecipe {
            source_radius: 0.05,
            glare_sigma: 0.055,
            ..b
        },
        "basic-halo" => FlareRecipe {
            source_radius: 0.03,
            glare_sigma: 0.16,
            ..b
        },
        "basic-streak" => with_streaks(b, 1),
        "basic-cross" => with_streaks(b, 2),
        "basic-star6" => with_streaks(b, 3),
        "basic-ghosts3" => with_ghosts(b, vec![Circle; 3], 0.35),
        "basic-ghosts5" => with_ghosts(b, vec![Circle; 5], 0.22),
        "basic-iris" => with_ghosts(b, vec![Polygon(6); 4], 0.28),
        "xt-sunburst" => FlareRecipe {
            streak_width: 0.006,
            streak_length: 0.7,
            ..with_streaks(b, 8)
        },
        "xt-cross-ghosts" => with_ghosts(with_streaks(b, 2), vec![Circle; 4], 0.26),
        "xt-star-halo" => FlareRecipe {
            glare_sigma: 0.15,
            ..with_streaks(b, 3)
        },
        "xt-ghost-train" => FlareRecipe {
            ghost_alpha: 0.28,
            ..with_ghosts(b, vec![Circle; 8], 0.16)
        },
        "xt-poly-chain" => with_ghosts(
            b,
            vec![
                Polygon(5),
                Polygon(6),
                Polygon(8),
                Polygon(5),
                Polygon(6),
                Polygon(8),
            ],
            0.2,
        ),
        "xt-wide-streak" => FlareRecipe {
            streak_width: 0.03,
            streak_length: 0.8,
            ..with_streaks(b, 1)
        },
        "xt-thin-star" => FlareRecipe {
            streak_width: 0.004,
            streak_length: 0.6,
            ..with_streaks(b, 6)
        },
        "xt-warm" => FlareRecipe {
            glare_tint: [1.0, 0.78, 0.55],
            ..with_ghosts(with_streaks(b, 2), vec![Circle; 3], 0.3)
        },
        "xt-cool" => FlareRecipe {
            glare_tint: [0.7, 0.85, 1.0],
            ..with_ghosts(with_streaks(b, 1), vec![Polygon(4); 4], 0.24)
        },
        "xt-full" => FlareRecipe {
            glare_sigma: 0.13,
            ghost_alpha: 0.3,
            ..with_ghosts(with_streaks(b, 4), vec![Circle, Polygon(6), Circle, Polygon(8), Circle, Polygon(5)], 0.18)
        },
        _ => unreachable!("id came from preset_ids"),
    })
}

#[derive(Serialize, Deserialize)]
struct TemplateMeta {
    type_id: String,
    recipe: FlareRecipe,
}

/// Writes `<name>_flare.png` (16-bit RGB), `<name>_source.png` (16-bit gray),
/// and `<name>_meta.json`.
pub fn save_template(t: &FlareTemplate, dir: impl AsRef<Path>, name: &str) -> Result<()> {
    let dir = dir.as_ref();
    save_image(&t.flare, dir.join(format!("{name}_flare.png")), BitDepth::Sixteen)?;
    save_image(
        &t.source_annotation,
        dir.join(format!("{name}_source.png")),
        BitDepth::Sixteen,
    )?;
    let meta = TemplateMeta {
        type_id: t.type_id.clone(),
        recipe: t.recipe.clone(),
    };
    let mut json = serde_json::to_string_pretty(&meta)
        .map_err(|e| Error::Internal(format!("meta serialization: {e}")))?;
    json.push('\n');
    std::fs::write(dir.join(format!("{name}_meta.json")), json)?;
    Ok(())
}

/// Loads the trio written by [`save_template`]. Pixel data is quantized to
/// the stored bit depth; the recipe round-trips exactly.
pub fn load_template(dir: impl AsRef<Path>, name: &str) -> Result<FlareTemplate> {
    let dir = dir.as_ref();
    let meta_path = dir.join(format!("{name}_meta.json"));
    let meta: TemplateMeta = serde_json::from_str(&std::fs::read_to_string(&meta_path)?)
        .map_err(|e| Error::InvalidRecipe(format!("{}: {e}", meta_path.display())))?;
    let flare = load_image(dir.join(format!("{name}_flare.png")), Encoding::Linear)?;
    let source_annotation = load_image(dir.join(format!("{name}_source.png")), Encoding::Linear)?;
    if flare.channels() != 3 {
        return Err(Error::InvalidImage(format!("{name}_flare.png must be RGB")));
    }
    if source_annotation.channels() != 1 {
        return Err(Error::InvalidImage(format!(
            "{name}_source.png must be grayscale"
        )));
    }
    if flare.width() != source_annotation.width() || flare.height() != source_annotation.height() {
        return Err(Error::DimensionMismatch {
            expected_w: flare.width(),
            expected_h: flare.height(),
            got_w: source_annotation.width(),
            got_h: source_annotation.height(),
        });
    }
    Ok(FlareTemplate {
        flare,
        source_annotation,
        recipe: meta.recipe,
        type_id: meta.type_id,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    fn simple_recipe() -> FlareRecipe {
        base_recipe(11)
    }

    /// Total-least-squares line fit; returns the largest perpendicular
    /// distance of any point to the fitted line.
    fn max_perp_residual(points: &[(f64, f64)]) -> f64 {
        let n = points.len() as f64;
        let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
        let my = points.iter().map(|p| p.1).sum::<f64>() / n;
        let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
        for p in points {
            let (dx, dy) = (p.0 - mx, p.1 - my);
            sxx += dx * dx;
            sxy += dx * dy;
            syy += dy * dy;
        }
        let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
        let (nx, ny) = (-theta.sin(), theta.cos());
        points
            .iter()
            .map(|p| ((p.0 - mx) * nx + (p.1 - my) * ny).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn ghost_centers_are_collinear_with_source_and_center() {
        let mut r = with_ghosts(simple_recipe(), vec![GhostShape::Circle; 5], 0.21);
        r.source_pos = (0.27, 0.64);
        let mut pts = ghost_centers(&r);
        assert_eq!(pts.len(), 5);
        pts.push(r.source_pos);
        pts.push((0.5, 0.5));
        assert!(max_perp_residual(&pts) < 1e-6);
    }

    #[test]
    fn ghost_centers_march_through_center() {
        let mut r = with_ghosts(simple_recipe(), vec![GhostShape::Circle; 4], 0.5);
        r.source_pos = (0.3, 0.5);
        let pts = ghost_centers(&r);
        assert!((pts[0].0 - 0.4).abs() < 1e-12);
        assert!((pts[1].0 - 0.5).abs() < 1e-12);
        assert!((pts[2].0 - 0.6).abs() < 1e-12);
        assert!((pts[3].0 - 0.7).abs() < 1e-12);
        assert!(pts.iter().all(|p| (p.1 - 0.5).abs() < 1e-12));
    }

    #[test]
    fn glare_only_support_is_compact() {
        let r = simple_recipe();
        let t = generate_template(&r).unwrap();
        let cutoff = r.source_radius + 4.0 * r.glare_sigma;
        let scale = r.length_scale();
        let (spx, spy) = r.source_px();
        for y in 0..r.canvas.1 {
            for x in 0..r.canvas.0 {
                let d = ((x as f64 - spx).powi(2) + (y as f64 - spy).powi(2)).sqrt() / scale;
                if d > cutoff {
                    for c in 0..3 {
                        let v = t.flare.get(x, y, c);
                        assert!(v < 1e-4, "({x},{y},{c}) = {v} at normalized {d}");
                        assert_eq!(v, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn regeneration_is_byte_identical() {
        let r = preset("xt-full").unwrap();
        let a = generate_template(&r).unwrap();
        let b = generate_template(&r).unwrap();
        assert_eq!(a.flare.data(), b.flare.data());
        assert_eq!(a.source_annotation.data(), b.source_annotation.data());
        let dir = TempDir::new().unwrap();
        save_template(&a, dir.path(), "x").unwrap();
        let (fa, sa, ma) = (
            std::fs::read(dir.path().join("x_flare.png")).unwrap(),
            std::fs::read(dir.path().join("x_source.png")).unwrap(),
            std::fs::read(dir.path().join("x_meta.json")).unwrap(),
        );
        save_template(&b, dir.path(), "x").unwrap();
        assert_eq!(fa, std::fs::read(dir.path().join("x_flare.png")).unwrap());
        assert_eq!(sa, std::fs::read(dir.path().join("x_source.png")).unwrap());
        assert_eq!(ma, std::fs::read(dir.path().join("x_meta.json")).unwrap());
    }

    #[test]
    fn source_only_adds_light() {
        let r = preset("xt-star-halo").unwrap();
        let full = generate_template(&r).unwrap();
        let (no_source, _) = render(
            &r,
            Components {
                source: false,
                ..ALL_COMPONENTS
            },
        );
        for (i, &v) in no_source.iter().enumerate() {
            assert!(full.flare.data()[i] >= v.min(1.0) - 1e-12);
        }
        // and specifically wherever the annotation marks source pixels
        let lum = full.flare.luminance();
        for y in 0..r.canvas.1 {
            for x in 0..r.canvas.0 {
                if full.source_annotation.get(x, y, 0) > 0.5 {
                    let i = ((y * r.canvas.0 + x) * 3) as usize;
                    let glare_lum = 0.299 * no_source[i].min(1.0)
                        + 0.587 * no_source[i + 1].min(1.0)
                        + 0.114 * no_source[i + 2].min(1.0);
                    assert!(lum.get(x, y, 0) >= glare_lum - 1e-12);
                }
            }
        }
    }

    #[test]
    fn luminance_never_increases_away_from_source() {
        // source at an exact pixel center so ray samples land on the grid
        let mut r = simple_recipe();
        r.canvas = (129, 129);
        r.source_pos = (0.5, 0.5);
        let t = generate_template(&r).unwrap();
        let lum = t.flare.luminance();
        for (dx, dy) in [(1i64, 0i64), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, 1)] {
            let mut prev = f64::INFINITY;
            let (mut x, mut y) = (64i64, 64i64);
            while (0..129).contains(&x) && (0..129).contains(&y) {
                let v = lum.get(x as u32, y as u32, 0);
                assert!(v <= prev + 1e-12, "rise at ({x},{y}): {prev} -> {v}");
                prev = v;
                x += dx;
                y += dy;
            }
        }
    }

    #[test]
    fn annotation_marks_only_the_disc() {
        let r = simple_recipe();
        let t = generate_template(&r).unwrap();
        let (spx, spy) = r.source_px();
        let r_px = r.source_radius * r.length_scale();
        let mut inside = 0;
        for y in 0..r.canvas.1 {
            for x in 0..r.canvas.0 {
                let d = ((x as f64 - spx).powi(2) + (y as f64 - spy).powi(2)).sqrt();
                let v = t.source_annotation.get(x, y, 0);
                if d >= r_px {
                    assert_eq!(v, 0.0);
                } else if v > 0.5 {
                    inside += 1;
                }
            }
        }
        assert!(inside > 0);
    }

    #[test]
    fn batch_item_matches_batch() {
        let base = preset("basic-ghosts3").unwrap();
        let jitter = RecipeJitter::default();
        let batch = generate_batch("basic-ghosts3", &base, 6, &jitter, 7).unwrap();
        let solo = generate_batch_item("basic-ghosts3", &base, &jitter, 7, 3).unwrap();
        assert_eq!(batch[3].recipe, solo.recipe);
        assert_eq!(batch[3].flare.data(), solo.flare.data());
        assert_eq!(batch[3].type_id, "basic-ghosts3");
    }

    #[test]
    fn zero_jitter_repeats_the_base() {
        let base = preset("basic-cross").unwrap();
        let batch = generate_batch("basic-cross", &base, 5, &RecipeJitter::zero(), 3).unwrap();
        let reference = generate_template(&base).unwrap();
        for t in &batch {
            assert_eq!(t.recipe, base);
            assert_eq!(t.flare.data(), reference.flare.data());
        }
    }

    #[test]
    fn default_jitter_yields_valid_varied_recipes() {
        let base = preset("xt-cross-ghosts").unwrap();
        let batch = generate_batch("xt-cross-ghosts", &base, 40, &RecipeJitter::default(), 99).unwrap();
        assert_eq!(batch.len(), 40);
        let mut distinct = 0;
        for t in &batch {
            t.recipe.validate().unwrap();
            t.validate().unwrap();
            if t.recipe != base {
                distinct += 1;
            }
        }
        assert!(distinct >= 39);
    }

    #[test]
    fn ghost_shape_strings_roundtrip() {
        for (s, v) in [
            ("circle", GhostShape::Circle),
            ("polygon-3", GhostShape::Polygon(3)),
            ("polygon-12", GhostShape::Polygon(12)),
        ] {
            assert_eq!(s.parse::<GhostShape>().unwrap(), v);
            assert_eq!(v.to_string(), s);
            let json = serde_json::to_string(&v).unwrap();
            assert_eq!(json, format!("\"{s}\""));
            assert_eq!(serde_json::from_str::<GhostShape>(&json).unwrap(), v);
        }
        assert!("polygon-2".parse::<GhostShape>().is_err());
        assert!("triangle".parse::<GhostShape>().is_err());
        assert!(serde_json::from_str::<GhostShape>("\"polygon-x\"").is_err());
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = TempDir::new().unwrap();
        let t = generate_template(&preset("basic-iris").unwrap()).unwrap();
        save_template(&t, dir.path(), "g0001").unwrap();
        for suffix in ["flare.png", "source.png", "meta.json"] {
            assert!(dir.path().join(format!("g0001_{suffix}")).exists());
        }
        let back = load_template(dir.path(), "g0001").unwrap();
        assert_eq!(back.recipe, t.recipe);
        assert_eq!(back.type_id, t.type_id);
        let half_step = 0.5 / 65535.0;
        for (a, b) in t.flare.data().iter().zip(back.flare.data()) {
            assert!((a - b).abs() <= half_step);
        }
        back.validate().unwrap();
    }

    #[test]
    fn presets_all_generate() {
        let ids = preset_ids();
        assert_eq!(ids.len(), 19);
        let unique: std::collections::BTreeSet<_> = ids.iter().collect();
        assert_eq!(unique.len(), 19);
        for id in ids {
            let r = preset(id).unwrap();
            r.validate().unwrap();
            let t = generate_template(&r).unwrap();
            t.validate().unwrap();
        }
        assert!(preset("no-such-type").is_none());
    }

    #[test]
    fn invalid_recipes_are_rejected()  {
        let mut r = simple_recipe();
        r.source_radius = 0.001;
        assert!(matches!(r.validate(), Err(Error::InvalidRecipe(_))));
        let mut r = simple_recipe();
        r.canvas = (4, 256);
        assert!(r.validate().is_err());
        let mut r = simple_recipe();
        r.source_pos = (1.2, 0.5);
        assert!(r.validate().is_err());
        let mut r = simple_recipe();
        r.streak_count = 2;
        r.streak_angles = vec![0.0];
        assert!(r.validate().is_err());
        let mut r = simple_recipe();
        r.ghost_count = 1;
        r.ghost_shapes = vec![];
        assert!(r.validate().is_err());
        let mut r = simple_recipe();
        r.ghost_alpha = 0.0;
        assert!(r.validate().is_err());
    }

    #[test]
    fn offscreen_ghosts_are_no_error() {
        let mut r = with_ghosts(simple_recipe(), vec![GhostShape::Circle; 3], 4.0);
        r.source_pos = (0.1, 0.1);
        let t = generate_template(&r).unwrap();
        t.validate().unwrap();
    }

    #[test]
    fn recipe_json_key_order_is_stable() {
        let r = preset("basic-glare").unwrap();
        let a = serde_json::to_string_pretty(&r).unwrap();
        let b = serde_json::to_string_pretty(&r).unwrap();
        assert_eq!(a, b);
        let keys: Vec<&str> = a
            .lines()
            .filter_map(|l| l.trim().strip_prefix('"').and_then(|s| s.split('"').next()))
            .collect();
        let canvas_pos = keys.iter().position(|&k| k == "canvas").unwrap();
        let seed_pos = keys.iter().position(|&k| k == "seed").unwrap();
        assert!(canvas_pos < seed_pos);
    }
}
