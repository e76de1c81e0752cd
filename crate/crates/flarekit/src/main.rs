//! Command-line front end: template generation, pair synthesis, masked
//! evaluation, synthetic depth stubs, and artifact inspection.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 argument or validation error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicU64, Ordering};

use clap::{Args, Parser, Subcommand};

use flarekit::config::{apply_synth_config, ConfigMap, SYNTH_KEYS};
use flarekit::depth::{synth_depth, DepthMode};
use flarekit::imaging::{load_depth, load_image, save_depth, Encoding};
use flarekit::metrics::{evaluate_set, render_table, SsimMaskRule};
use flarekit::synthesis::{synth_batch, Corpus, SynthConfig, TemplatePool};
use flarekit::template::{
    generate_batch, load_template, preset, preset_ids, save_template, RecipeJitter,
};
use flarekit::Error;

const CONFIG_HELP: &str = "\
Config file format (for --config): one `key = value` per line, `#` comments.
Dotted keys mirror the synthesis parameters, e.g.:

    fov_deg = 84
    seed = 7
    flare_count.min = 1
    flare_count.max = 3
    gamma.min = 1.8
    gamma.max = 2.2
    noise_sigma.max = 0.01
    gain_clamp.enabled = true
    affine.scale.min = 0.5
    affine.scale.max = 1.5
    workers = 4
    paths.backgrounds = data/backgrounds

Precedence: command-line flags override config values, which override
built-in defaults.";

#[derive(Parser)]
#[command(
    name = "flarekit",
    version,
    about = "Lens-flare synthesis and masked evaluation toolkit",
    after_long_help = CONFIG_HELP
)]
struct Cli {
    /// Suppress progress and summary lines; errors still print
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate flare template batches from built-in type presets
    GenTemplates(GenTemplatesArgs),
    /// Synthesize flare-corrupted / flare-free training pairs
    Synth(SynthArgs),
    /// Score predictions against ground truth with masked PSNR/SSIM
    Eval(EvalArgs),
    /// Write synthetic depth maps for backgrounds that lack real ones
    DepthStub(DepthStubArgs),
    /// Print what a template, depth map, or image file contains
    Inspect(InspectArgs),
}

#[derive(Args)]
struct GenTemplatesArgs {
    /// Comma-separated type ids; defaults to every preset
    #[arg(long, value_delimiter = ',')]
    types: Vec<String>,
    /// Templates per type
    #[arg(long, default_value_t = 100)]
    count: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Disable parameter jitter: every template repeats the type's base recipe
    #[arg(long)]
    no_jitter: bool,
}

#[derive(Args)]
struct SynthArgs {
    /// Pairs to synthesize
    #[arg(long)]
    count: u64,
    /// Background PNG directory (or config `paths.backgrounds`)
    #[arg(long)]
    backgrounds: Option<PathBuf>,
    /// Depth PNG directory, stem-matched to backgrounds (or `paths.depths`)
    #[arg(long)]
    depths: Option<PathBuf>,
    /// Template directory from gen-templates (or `paths.templates`)
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Output directory (or `paths.out`)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Key-value config file; flags given here still win
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Horizontal field of view in degrees, in (0, 180)
    #[arg(long)]
    fov: Option<f64>,
    /// Light-source annotation threshold
    #[arg(long)]
    tau: Option<f64>,
    /// Reuse one template for all flares of an image
    #[arg(long)]
    same_template: bool,
    /// Worker threads
    #[arg(long)]
    workers: Option<usize>,
    /// Fail instead of skipping backgrounds that have no depth map
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Prediction PNG directory
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth PNG directory
    #[arg(long)]
    gt: PathBuf,
    /// Optional mask directory; zero pixels are excluded from scoring
    #[arg(long)]
    masks: Option<PathBuf>,
    /// Report output path (JSON lines)
    #[arg(long)]
    report: PathBuf,
    /// SSIM mask rule: center-pixel or fully-inside
    #[arg(long, default_value = "center-pixel")]
    ssim_rule: String,
}

#[derive(Args)]
struct DepthStubArgs {
    /// Profile: `constant:<d>`, `radial:<near>,<far>`, or `ramp:<left>,<right>`
    #[arg(long)]
    mode: String,
    /// Write one depth map per background in this directory
    #[arg(long, conflicts_with_all = ["width", "height"])]
    backgrounds: Option<PathBuf>,
    #[arg(long, requires = "height")]
    width: Option<u32>,
    #[arg(long, requires = "width")]
    height: Option<u32>,
    /// Output directory (with --backgrounds) or output file (with --width/--height)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    /// A `*_meta.json` template, a template stem, or any toolkit PNG
    path: PathBuf,
}

/// Failure carrying the process exit code: 1 runtime, 2 validation.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        // parameter and config rejections are caller mistakes
        let code = match &e {
            Error::InvalidParam(_) | Error::Config(_) | Error::InvalidRecipe(_) => 2,
            _ => 1,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let quiet = cli.quiet;
    let result = match cli.cmd {
        Cmd::GenTemplates(args) => cmd_gen_templates(args, quiet),
        Cmd::Synth(args) => cmd_synth(args, quiet),
        Cmd::Eval(args) => cmd_eval(args),
        Cmd::DepthStub(args) => cmd_depth_stub(args, quiet),
        Cmd::Inspect(args) => cmd_inspect(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn cmd_gen_templates(args: GenTemplatesArgs, quiet: bool) -> Result<(), Failure> {
    if args.count < 1 {
        return Err(Failure::usage("--count must be >= 1"));
    }
    let types: Vec<String> = if args.types.is_empty() {
        preset_ids().iter().map(|s| s.to_string()).collect()
    } else {
        args.types.clone()
    };
    for t in &types {
        if preset(t).is_none() {
            return Err(Failure::usage(format!(
                "unknown template type {:?}; valid presets: {}",
                t,
                preset_ids().join(", ")
            )));
        }
    }
    std::fs::create_dir_all(&args.out)
        .map_err(|e| Failure::runtime(format!("{}: {e}", args.out.display())))?;
    let jitter = if args.no_jitter {
        RecipeJitter::zero()
    } else {
        RecipeJitter::default()
    };
    let mut files = 0usize;
    for type_id in &types {
        let base = preset(type_id).expect("validated above");
        let batch = generate_batch(type_id, &base, args.count, &jitter, args.seed)?;
        for (i, template) in batch.iter().enumerate() {
            save_template(template, &args.out, &format!("{type_id}_{i:04}"))?;
            files += 3;
        }
    }
    if !quiet {
        println!(
            "wrote {} templates ({files} files) across {} types to {}",
            types.len() * args.count as usize,
            types.len(),
            args.out.display()
        );
    }
    Ok(())
}

fn require_path(
    flag: Option<PathBuf>,
    config: &ConfigMap,
    key: &str,
    what: &str,
) -> Result<PathBuf, Failure> {
    flag.or_else(|| config.get(key).map(PathBuf::from))
        .ok_or_else(|| Failure::usage(format!("missing {what}: pass --{what} or set {key}")))
}

fn cmd_synth(args: SynthArgs, quiet: bool) -> Result<(), Failure> {
    let config = match &args.config {
        Some(path) => {
            let map = ConfigMap::load(path)?;
            map.reject_unknown(SYNTH_KEYS)?;
            map
        }
        None => ConfigMap::default(),
    };
    let mut cfg = SynthConfig::default();
    apply_synth_config(&config, &mut cfg)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(fov) = args.fov {
        cfg.fov_deg = fov;
    }
    if let Some(tau) = args.tau {
        cfg.tau = tau;
    }
    if args.same_template {
        cfg.same_template = true;
    }
    cfg.validate()?;
    let workers = match args.workers {
        Some(w) => w,
        None => config.get_usize("workers")?.unwrap_or(1),
    };
    if workers < 1 {
        return Err(Failure::usage("--workers must be >= 1"));
    }
    if args.count < 1 {
        return Err(Failure::usage("--count must be >= 1"));
    }

    let backgrounds_dir = require_path(args.backgrounds, &config, "paths.backgrounds", "backgrounds")?;
    let depths_dir = require_path(args.depths, &config, "paths.depths", "depths")?;
    let templates_dir = require_path(args.templates, &config, "paths.templates", "templates")?;
    let out = require_path(args.out, &config, "paths.out", "out")?;

    let mut backgrounds = Corpus::scan(&backgrounds_dir)
        .map_err(|e| Failure::runtime(format!("{}: {e}", backgrounds_dir.display())))?;
    let depths = Corpus::scan(&depths_dir)
        .map_err(|e| Failure::runtime(format!("{}: {e}", depths_dir.display())))?;
    if backgrounds.is_empty() {
        return Err(Failure::runtime(format!(
            "no background PNGs in {}",
            backgrounds_dir.display()
        )));
    }
    let missing: Vec<String> = backgrounds
        .stems()
        .iter()
        .filter(|s| !depths.path(s).exists())
        .cloned()
        .collect();
    if !missing.is_empty() {
        if args.strict {
            return Err(Failure::runtime(format!(
                "backgrounds without depth maps: {}",
                missing.join(", ")
            )));
        }
        eprintln!(
            "skipping {} backgrounds without depth maps: {}",
            missing.len(),
            missing.join(", ")
        );
        backgrounds.retain(|s| depths.path(s).exists());
        if backgrounds.is_empty() {
            return Err(Failure::runtime("no background has a matching depth map"));
        }
    }
    let pool = TemplatePool::load_dir(&templates_dir)
        .map_err(|e| Failure::runtime(format!("{}: {e}", templates_dir.display())))?;

    let total = args.count;
    let progress = AtomicU64::new(0);
    let result = synth_batch(
        &backgrounds,
        &depths,
        &pool,
        &cfg,
        total,
        &out,
        workers,
        |done| {
            let shown = progress.load(Ordering::Relaxed);
            if !quiet
                && done / 1000 > shown
                && progress
                    .compare_exchange(shown, done / 1000, Ordering::Relaxed, Ordering::Relaxed)
                    .is_ok()
            {
                println!("synthesized {done}/{total} pairs");
            }
        },
    )?;
    if !quiet {
        println!(
            "wrote {} pairs to {} ({} skipped flares, {} reattempts, {} clipped samples)",
            result.pairs,
            out.display(),
            result.skipped_flares,
            result.salt_retries,
            result.overflow_px
        );
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), Failure> {
    let rule: SsimMaskRule = args
        .ssim_rule
        .parse()
        .map_err(|e: Error| Failure::usage(e.to_string()))?;
    let report = evaluate_set(
        &args.pred,
        &args.gt,
        args.masks.as_deref(),
        &args.report,
        rule,
    )?;
    print!("{}", render_table(&report));
    println!("report written to {}", args.report.display());
    Ok(())
}

fn parse_mode(s: &str) -> Result<DepthMode, Failure> {
    let bad = || {
        Failure::usage(format!(
            "bad --mode {s:?}; expect constant:<d>, radial:<near>,<far>, or ramp:<left>,<right>"
        ))
    };
    let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
    let nums: Vec<f64> = rest
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| bad())?;
    match (kind, nums.as_slice()) {
        ("constant", [d]) => Ok(DepthMode::Constant(*d)),
        ("radial", [near, far]) => Ok(DepthMode::Radial {
            near: *near,
            far: *far,
        }),
        ("ramp", [left, right]) => Ok(DepthMode::HorizontalRamp {
            left: *left,
            right: *right,
        }),
        _ => Err(bad()),
    }
}

fn cmd_depth_stub(args: DepthStubArgs, quiet: bool) -> Result<(), Failure> {
    let mode = parse_mode(&args.mode)?;
    match (&args.backgrounds, args.width, args.height) {
        (Some(bg_dir), None, None) => {
            let corpus = Corpus::scan(bg_dir)
                .map_err(|e| Failure::runtime(format!("{}: {e}", bg_dir.display())))?;
            if corpus.is_empty() {
                return Err(Failure::runtime(format!(
                    "no background PNGs in {}",
                    bg_dir.display()
                )));
            }
            std::fs::create_dir_all(&args.out)
                .map_err(|e| Failure::runtime(format!("{}: {e}", args.out.display())))?;
            for stem in corpus.stems() {
                let bg = load_image(corpus.path(stem), Encoding::GammaEncoded)?;
                let depth = synth_depth(bg.width(), bg.height(), mode)?.normalize_by_max();
                save_depth(&depth, args.out.join(format!("{stem}.png")))?;
            }
            if !quiet {
                println!(
                    "wrote {} depth maps to {}",
                    corpus.stems().len(),
                    args.out.display()
                );
            }
        }
        (None, Some(w), Some(h)) => {
            let depth = synth_depth(w, h, mode)?.normalize_by_max();
            if let Some(parent) = args.out.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)
                        .map_err(|e| Failure::runtime(format!("{}: {e}", parent.display())))?;
                }
            }
            save_depth(&depth, &args.out)?;
            if !quiet {
                println!("wrote {}x{} depth map to {}", w, h, args.out.display());
            }
        }
        _ => {
            return Err(Failure::usage(
                "pass either --backgrounds <dir> or both --width and --height",
            ))
        }
    }
    Ok(())
}

fn luminance_histogram(lum: &[f64]) -> String {
    let mut bins = [0usize; 10];
    for &v in lum {
        let b = ((v * 10.0) as usize).min(9);
        bins[b] += 1;
    }
    let peak = bins.iter().copied().max().unwrap_or(1).max(1);
    let mut out = String::new();
    for (i, &count) in bins.iter().enumerate() {
        let bar = "#".repeat((count * 40).div_ceil(peak).min(40));
        let hi = if i == 9 {
            "1.0]".to_string()
        } else {
            format!("{:.1})", (i + 1) as f64 / 10.0)
        };
        out.push_str(&format!(
            "  [{:.1}, {hi}{count:>8}  {bar}\n",
            i as f64 / 10.0
        ));
    }
    out
}

fn inspect_template(dir: &Path, stem: &str) -> Result<(), Failure> {
    let t = load_template(dir, stem)?;
    println!("template {stem} (type {})", t.type_id);
    println!(
        "  canvas {}x{}",
        t.flare.width(),
        t.flare.height()
    );
    let region = flarekit::illumination::source_region(&t.source_annotation, 0.5)?;
    println!("  source pixels: {}", region.count_included());
    let recipe = serde_json::to_string_pretty(&t.recipe)
        .map_err(|e| Failure::runtime(format!("recipe serialization: {e}")))?;
    println!("  recipe:");
    for line in recipe.lines() {
        println!("    {line}");
    }
    println!("  flare luminance histogram:");
    print!("{}", luminance_histogram(t.flare.luminance().data()));
    Ok(())
}

fn stats(data: &[f64]) -> (f64, f64, f64) {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0;
    for &v in data {
        min = min.min(v);
        max = max.max(v);
        sum += v;
    }
    (min, sum / data.len() as f64, max)
}

fn cmd_inspect(args: InspectArgs) -> Result<(), Failure> {
    let path = &args.path;
    if !path.exists() {
        // maybe a template stem: <dir>/<stem> with the trio next to it
        let (dir, stem) = split_stem(path)?;
        if dir.join(format!("{stem}_meta.json")).exists() {
            return inspect_template(&dir, &stem);
        }
        return Err(Failure::runtime(format!("{} not found", path.display())));
    }
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().to_string())
        .unwrap_or_default();
    if let Some(stem) = name.strip_suffix("_meta.json") {
        let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        return inspect_template(&dir, stem);
    }
    if let Some(stem) = name
        .strip_suffix("_flare.png")
        .or_else(|| name.strip_suffix("_source.png"))
    {
        let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        if dir.join(format!("{stem}_meta.json")).exists() {
            return inspect_template(&dir, stem);
        }
    }
    // a plain PNG: depth maps are 16-bit gray with no zero codes
    if let Ok(depth) = load_depth(path) {
        let (min, mean, max) = stats(depth.data());
        println!("depth map {} ({}x{})", name, depth.width(), depth.height());
        println!("  stored:   min {min:.6}  mean {mean:.6}  max {max:.6}");
        println!(
            "  relative to nearest: min 1.000000  mean {:.6}  max {:.6}",
            mean / min,
            max / min
        );
        return Ok(());
    }
    let img = load_image(path, Encoding::GammaEncoded)?;
    let (min, mean, max) = stats(img.data());
    let nonzero = img.data().iter().filter(|&&v| v != 0.0).count();
    println!(
        "image {} ({}x{}, {} channels)",
        name,
        img.width(),
        img.height(),
        img.channels()
    );
    println!("  min {min:.6}  mean {mean:.6}  max {max:.6}  nonzero samples {nonzero}");
    Ok(())
}

fn split_stem(path: &Path) -> Result<(PathBuf, String), Failure> {
    let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let stem = path
        .file_name()
        .ok_or_else(|| Failure::usage(format!("{}: no file name", path.display())))?
        .to_string_lossy()
        .to_string();
    Ok((dir, stem))
}
