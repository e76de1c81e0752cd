//! Flat key-value run configuration.
//!
//! The file format is one `key = value` assignment per line with dotted keys
//! (`affine.scale.min = 0.7`), `#` comments, and blank lines. Values are
//! numbers, `true`/`false`, or bare strings. Precedence is handled by the
//! caller: defaults first, then this file, then command-line flags.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::synthesis::SynthConfig;

/// Parsed assignments, keyed by the full dotted name.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfigMap {
    entries: BTreeMap<String, String>,
}

impl ConfigMap {
    /// Parses config text. Duplicate keys are an error rather than
    /// last-wins, so a stale edit cannot silently lose.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected `key = value`, got {raw:?}",
                    lineno + 1
                )));
            };
            let key = key.trim();
            let value = value.trim();
            if key.is_empty()
                || !key
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '.' || c == '_' || c == '-')
            {
                return Err(Error::Config(format!(
                    "line {}: bad key {key:?}",
                    lineno + 1
                )));
            }
            if value.is_empty() {
                return Err(Error::Config(format!(
                    "line {}: empty value for {key:?}",
                    lineno + 1
                )));
            }
            if entries.insert(key.to_string(), value.to_string()).is_some() {
                return Err(Error::Config(format!(
                    "line {}: duplicate key {key:?}",
                    lineno + 1
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    fn parse_with<T>(&self, key: &str, what: &str, f: impl Fn(&str) -> Option<T>) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => f(raw).map(Some).ok_or_else(|| {
                Error::Config(format!("key {key:?}: {raw:?} is not {what}"))
            }),
        }
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>> {
        self.parse_with(key, "a number", |s| s.parse().ok())
    }

    pub fn get_u64(&self, key: &str) -> Result<Option<u64>> {
        self.parse_with(key, "an unsigned integer", |s| s.parse().ok())
    }

    pub fn get_u32(&self, key: &str) -> Result<Option<u32>> {
        self.parse_with(key, "an unsigned integer", |s| s.parse().ok())
    }

    pub fn get_usize(&self, key: &str) -> Result<Option<usize>> {
        self.parse_with(key, "an unsigned integer", |s| s.parse().ok())
    }

    pub fn get_bool(&self, key: &str) -> Result<Option<bool>> {
        self.parse_with(key, "true or false", |s| match s {
            "true" => Some(true),
            "false" => Some(false),
            _ => None,
        })
    }

    /// Errors on any key outside `known`; catches typos that would otherwise
    /// be silently ignored.
    pub fn reject_unknown(&self, known: &[&str]) -> Result<()> {
        let stray: Vec<&str> = self
            .keys()
            .filter(|k| !known.contains(k))
            .collect();
        if stray.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!("unknown config keys: {stray:?}")))
        }
    }
}

/// Keys the synthesis overlay understands, plus the runner keys the CLI
/// reads itself (`workers`, `paths.*`).
pub const SYNTH_KEYS: &[&str] = &[
    "fov_deg",
    "tau",
    "seed",
    "flare_count.min",
    "flare_count.max",
    "same_template",
    "gamma.min",
    "gamma.max",
    "noise_sigma.min",
    "noise_sigma.max",
    "gain_clamp.enabled",
    "gain_clamp.min",
    "gain_clamp.max",
    "affine.scale.min",
    "affine.scale.max",
    "affine.rotation.min",
    "affine.rotation.max",
    "affine.translate_x.min",
    "affine.translate_x.max",
    "affine.translate_y.min",
    "affine.translate_y.max",
    "affine.shear_x.min",
    "affine.shear_x.max",
    "affine.shear_y.min",
    "affine.shear_y.max",
    "affine.min_visible_px",
    "affine.max_retries",
    "emit_source_in_gt",
    "workers",
    "paths.backgrounds",
    "paths.depths",
    "paths.templates",
    "paths.out",
];

fn overlay_pair(
    map: &ConfigMap,
    min_key: &str,
    max_key: &str,
    target: &mut (f64, f64),
) -> Result<()> {
    if let Some(v) = map.get_f64(min_key)? {
        target.0 = v;
    }
    if let Some(v) = map.get_f64(max_key)? {
        target.1 = v;
    }
    Ok(())
}

/// Applies every synthesis key present in `map` onto `cfg`. Unknown keys
/// must have been rejected beforehand; values are validated by
/// `SynthConfig::validate`, not here.
pub fn apply_synth_config(map: &ConfigMap, cfg: &mut SynthConfig) -> Result<()> {
    if let Some(v) = map.get_f64("fov_deg")? {
        cfg.fov_deg = v;
    }
    if let Some(v) = map.get_f64("tau")? {
        cfg.tau = v;
    }
    if let Some(v) = map.get_u64("seed")? {
        cfg.seed = v;
    }
    if let Some(v) = map.get_u32("flare_count.min")? {
        cfg.flare_count_range.0 = v;
    }
    if let Some(v) = map.get_u32("flare_count.max")? {
        cfg.flare_count_range.1 = v;
    }
    if let Some(v) = map.get_bool("same_template")? {
        cfg.same_template = v;
    }
    overlay_pair(map, "gamma.min", "gamma.max", &mut cfg.gamma_range)?;
    overlay_pair(
        map,
        "noise_sigma.min",
        "noise_sigma.max",
        &mut cfg.noise_sigma_range,
    )?;
    let clamp_enabled = map.get_bool("gain_clamp.enabled")?;
    if clamp_enabled == Some(false) {
        cfg.gain_clamp = None;
    } else {
        let mut clamp = cfg
            .gain_clamp
            .unwrap_or(crate::illumination::DEFAULT_GAIN_CLAMP);
        overlay_pair(map, "gain_clamp.min", "gain_clamp.max", &mut clamp)?;
        if clamp_enabled == Some(true) || cfg.gain_clamp.is_some() {
            cfg.gain_clamp = Some(clamp);
        }
    }
    overlay_pair(map, "affine.scale.min", "affine.scale.max", &mut cfg.affine.scale)?;
    overlay_pair(
        map,
        "affine.rotation.min",
        "affine.rotation.max",
        &mut cfg.affine.rotation_rad,
    )?;
    overlay_pair(
        map,
        "affine.translate_x.min",
        "affine.translate_x.max",
        &mut cfg.affine.translate_x_frac,
    )?;
    overlay_pair(
        map,
        "affine.translate_y.min",
        "affine.translate_y.max",
        &mut cfg.affine.translate_y_frac,
    )?;
    overlay_pair(map, "affine.shear_x.min", "affine.shear_x.max", &mut cfg.affine.shear_x)?;
    overlay_pair(map, "affine.shear_y.min", "affine.shear_y.max", &mut cfg.affine.shear_y)?;
    if let Some(v) = map.get_u32("affine.min_visible_px")? {
        cfg.affine.min_visible_source_px = v;
    }
    if let Some(v) = map.get_u32("affine.max_retries")? {
        cfg.affine.max_retries = v;
    }
    if let Some(v) = map.get_bool("emit_source_in_gt")? {
        cfg.emit_source_in_gt = v;
    }
    Ok(())
}
