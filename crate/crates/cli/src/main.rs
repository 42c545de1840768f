//! `printseg`: G-code to labeled image datasets, mask scoring and job-log
//! analysis.
//!
//! Settings resolve as command-line flag, then `--config` file, then the
//! built-in default. Logging is controlled by `PRINTSEG_LOG` (for example
//! `PRINTSEG_LOG=debug`); `-v` raises the default level when it is unset.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use printseg::dataset::{
    self, generate_dataset, image_name, mask_name, render_item, validate_manifest, DatasetConfig, Model,
};
use printseg::fsutil;
use printseg::gcode::{toolpath_from_str, SlicingConfig};
use printseg::jobstats;
use printseg::metrics::{evaluate_dataset, format_table};
use printseg::raster::TextureBank;
use printseg::semantics::{classify_segments, DatasetKind};

#[derive(Debug, Parser)]
#[command(name = "printseg", version, about, propagate_version = true)]
struct Cli {
    /// More log output when PRINTSEG_LOG is unset (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse G-code and write the toolpath interchange file.
    Parse(ParseArgs),
    /// Render one image/mask pair from one G-code file.
    Render(RenderArgs),
    /// Render a full dataset from a directory of G-code files.
    Dataset(DatasetArgs),
    /// Score predicted masks against ground truth.
    Eval(EvalArgs),
    /// Analyze a CSV log of print jobs.
    Jobstats(JobstatsArgs),
    /// Re-check every file listed in a dataset manifest.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
struct SlicingArgs {
    /// Layer height in mm [config: slicing.layer_height, default 0.3].
    #[arg(long)]
    layer_height: Option<f64>,
    /// Filament diameter in mm [config: slicing.filament_diameter, default 1.75].
    #[arg(long)]
    filament_diameter: Option<f64>,
}

impl SlicingArgs {
    fn apply(&self, cfg: &mut SlicingConfig) {
        if let Some(h) = self.layer_height {
            cfg.layer_height = h;
        }
        if let Some(d) = self.filament_diameter {
            cfg.filament_diameter = d;
        }
    }
}

#[derive(Debug, Args)]
struct ParseArgs {
    /// Input G-code file.
    input: PathBuf,
    /// Output interchange file.
    #[arg(short, long)]
    out: PathBuf,
    /// Include per-segment semantic classes.
    #[arg(long)]
    classify: bool,
    /// TOML config; only its [slicing] table is used here.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    slicing: SlicingArgs,
}

/// Flags shared by `render` and `dataset`.
#[derive(Debug, Args)]
struct GenArgs {
    /// TOML dataset config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from the bundled 1024×1024, 100-frame preset instead of the defaults.
    #[arg(long, conflicts_with = "config")]
    large_preset: bool,
    /// Master seed [config: master_seed, default 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Frame size as WxH [config: resolution, default 256x256].
    #[arg(long, value_parser = parse_resolution)]
    resolution: Option<[u32; 2]>,
    /// wholepart, toplayer or internal [config: kind, default wholepart].
    #[arg(long)]
    kind: Option<DatasetKind>,
    /// Comma-separated completion fractions in (0, 1] [config: completion_levels, default 0.33,1].
    #[arg(long, value_delimiter = ',')]
    completion: Option<Vec<f64>>,
    /// Cast shadow rays for every light [config: shadows].
    #[arg(long)]
    shadows: Option<bool>,
    /// Worker threads [default: logical cores].
    #[arg(long)]
    jobs: Option<usize>,
    #[command(flatten)]
    slicing: SlicingArgs,
}

impl GenArgs {
    fn resolve(&self) -> Result<DatasetConfig> {
        let mut cfg = match (&self.config, self.large_preset) {
            (Some(path), _) => {
                require_file(path)?;
                DatasetConfig::load(path)?
            }
            (None, true) => DatasetConfig::large_preset(DatasetKind::WholePart),
            (None, false) => DatasetConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.master_seed = s;
        }
        if let Some(r) = self.resolution {
            cfg.resolution = r;
        }
        if let Some(k) = self.kind {
            cfg.kind = k;
        }
        if let Some(c) = &self.completion {
            cfg.completion_levels = c.clone();
        }
        if let Some(s) = self.shadows {
            cfg.shadows = s;
        }
        self.slicing.apply(&mut cfg.slicing);
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct RenderArgs {
    /// Input G-code file.
    input: PathBuf,
    /// Output directory for `<stem>_c<level>_<frame>.png` and its mask.
    #[arg(short, long)]
    out: PathBuf,
    /// Frame index within the animation.
    #[arg(long, default_value_t = 0)]
    frame: usize,
    /// Which of the completion levels to render.
    #[arg(long, default_value_t = 0)]
    level: usize,
    #[command(flatten)]
    gen: GenArgs,
}

#[derive(Debug, Args)]
struct DatasetArgs {
    /// Directory of G-code files.
    input: PathBuf,
    /// Output root; pairs go to `<out>/<kind>/`.
    #[arg(short, long)]
    out: PathBuf,
    /// Frames per model and completion level [config: frames_per_model, default 10].
    #[arg(long)]
    frames: Option<usize>,
    #[command(flatten)]
    gen: GenArgs,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Directory of predicted masks.
    #[arg(long)]
    pred: PathBuf,
    /// Directory of ground-truth masks.
    #[arg(long)]
    gt: PathBuf,
    /// wholepart, toplayer or internal.
    #[arg(long)]
    kind: DatasetKind,
    /// Write the JSON report here instead of printing it after the table.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Worker threads [default: logical cores].
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Debug, Args)]
struct JobstatsArgs {
    /// CSV with columns filename, duration_s, canceled.
    input: PathBuf,
    /// Jobs must run strictly longer than this to count toward the failure rate.
    #[arg(long, default_value_t = 300.0)]
    min_duration: f64,
    /// Comma-separated histogram bin edges in seconds.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "0,300,900,1800,3600,7200,14400,28800,57600,86400"
    )]
    edges: Vec<f64>,
    /// Number of words to report.
    #[arg(long, default_value_t = 25)]
    top: usize,
    /// Write the JSON report here instead of stdout.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    /// Path to a manifest.jsonl.
    manifest: PathBuf,
    /// Write the JSON report here.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Worker threads [default: logical cores].
    #[arg(long)]
    jobs: Option<usize>,
}

fn parse_resolution(s: &str) -> std::result::Result<[u32; 2], String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WxH, got `{s}`"))?;
    let w: u32 = w.trim().parse().map_err(|_| format!("bad width `{w}`"))?;
    let h: u32 = h.trim().parse().map_err(|_| format!("bad height `{h}`"))?;
    if w == 0 || h == 0 {
        return Err("resolution must be non-zero".into());
    }
    Ok([w, h])
}

/// Domain errors carry a category that is printed before the message.
#[derive(Debug)]
struct Categorized {
    category: &'static str,
    message: String,
}

impl std::fmt::Display for Categorized {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Categorized {}

fn categorized(category: &'static str, message: impl Into<String>) -> anyhow::Error {
    Categorized {
        category,
        message: message.into(),
    }
    .into()
}

fn require_file(path: &Path) -> Result<()> {
    if !path.exists() {
        return Err(categorized("file not found", path.display().to_string()));
    }
    if !path.is_file() {
        return Err(categorized("not a file", path.display().to_string()));
    }
    Ok(())
}

fn require_dir(path: &Path) -> Result<()> {
    if !path.exists() {
        return Err(categorized("file not found", path.display().to_string()));
    }
    if !path.is_dir() {
        return Err(categorized("not a directory", path.display().to_string()));
    }
    Ok(())
}

fn category_of(err: &anyhow::Error) -> &'static str {
    use printseg::{dataset::DatasetError, gcode::GcodeError, jobstats::JobStatsError, metrics::MetricsError};
    for cause in err.chain() {
        if let Some(c) = cause.downcast_ref::<Categorized>() {
            return c.category;
        }
        if let Some(io) = cause.downcast_ref::<std::io::Error>() {
            return match io.kind() {
                std::io::ErrorKind::NotFound => "file not found",
                std::io::ErrorKind::PermissionDenied => "permission denied",
                _ => "i/o error",
            };
        }
        if cause.is::<GcodeError>() {
            return "g-code error";
        }
        if let Some(d) = cause.downcast_ref::<DatasetError>() {
            return match d {
                DatasetError::Config(_) | DatasetError::Scene(_) => "config error",
                DatasetError::Io { .. } => "i/o error",
                DatasetError::Manifest { .. } => "manifest error",
                DatasetError::Raster(_) => "render error",
                _ => "input error",
            };
        }
        if cause.is::<MetricsError>() {
            return "evaluation error";
        }
        if cause.is::<JobStatsError>() {
            return "job log error";
        }
    }
    "error"
}

fn init_logging(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PRINTSEG_LOG", default))
        .format_timestamp(None)
        .init();
}

fn init_pool(jobs: Option<usize>) -> Result<usize> {
    let n = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if n == 0 {
        bail!(categorized("config error", "--jobs must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("starting worker pool")?;
    Ok(n)
}

fn write_json_out(out: Option<&Path>, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(p) => fsutil::write_atomic(p, text.as_bytes()).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn run_parse(a: ParseArgs) -> Result<()> {
    require_file(&a.input)?;
    let mut slicing = match &a.config {
        Some(p) => {
            require_file(p)?;
            DatasetConfig::load(p)?.slicing
        }
        None => SlicingConfig::default(),
    };
    a.slicing.apply(&mut slicing);
    let text = std::fs::read_to_string(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let toolpath = toolpath_from_str(&text, &slicing).with_context(|| a.input.display().to_string())?;
    log::info!(
        "{}: {} segments in {} layers",
        a.input.display(),
        toolpath.segments.len(),
        toolpath.layer_count()
    );
    if a.classify {
        let ct = classify_segments(&toolpath);
        fsutil::write_atomic_with(&a.out, |w| ct.write_interchange(w).map_err(std::io::Error::other))
    } else {
        fsutil::write_atomic_with(&a.out, |w| toolpath.write_interchange(w).map_err(std::io::Error::other))
    }
    .with_context(|| format!("writing {}", a.out.display()))?;
    println!(
        "{}: {} layers, {} segments, {:.3} mm³ extruded",
        a.out.display(),
        toolpath.layer_count(),
        toolpath.segments.len(),
        toolpath.extruded_volume()
    );
    Ok(())
}

fn run_render(a: RenderArgs) -> Result<()> {
    require_file(&a.input)?;
    let cfg = a.gen.resolve()?;
    cfg.validate()?;
    init_pool(a.gen.jobs)?;
    if a.level >= cfg.completion_levels.len() {
        bail!(categorized(
            "config error",
            format!("--level {} but only {} completion levels", a.level, cfg.completion_levels.len())
        ));
    }
    let model = Model::load(&a.input, &cfg.slicing).with_context(|| a.input.display().to_string())?;
    let textures = TextureBank::load(&cfg.scene).map_err(dataset::DatasetError::from)?;
    let frame = render_item(&model, a.level, a.frame, &cfg, Some(&textures))?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let stem = format!("{}_c{}", model.stem, a.level);
    let image_path = a.out.join(image_name(&stem, a.frame));
    let mask_path = a.out.join(mask_name(&stem, a.frame));
    fsutil::save_rgb_png(&image_path, &frame.pair.image).with_context(|| image_path.display().to_string())?;
    fsutil::save_gray_png(&mask_path, &frame.pair.mask).with_context(|| mask_path.display().to_string())?;
    if frame.degenerate {
        log::warn!("frame stays below the foreground threshold after {} redraws", frame.attempts);
    }
    println!("{}\n{}", image_path.display(), mask_path.display());
    Ok(())
}

fn run_dataset(a: DatasetArgs) -> Result<()> {
    require_dir(&a.input)?;
    let mut cfg = a.gen.resolve()?;
    if let Some(f) = a.frames {
        cfg.frames_per_model = f;
    }
    cfg.validate()?;
    let jobs = init_pool(a.gen.jobs)?;
    let summary = generate_dataset(&a.input, &a.out, &cfg, jobs)?;
    let m = &summary.manifest;
    let degenerate = m.entries.iter().filter(|e| e.degenerate).count();
    println!(
        "{}: {} pairs from {} models ({} degenerate, {} unusable inputs)",
        summary.manifest_path.display(),
        m.entries.len(),
        m.header.models,
        degenerate,
        m.errors.len()
    );
    for e in &m.errors {
        eprintln!("skipped {}: {}", e.source, e.message);
    }
    Ok(())
}

fn run_eval(a: EvalArgs) -> Result<()> {
    require_dir(&a.pred)?;
    require_dir(&a.gt)?;
    init_pool(a.jobs)?;
    let report = evaluate_dataset(&a.pred, &a.gt, a.kind)?;
    for u in &report.unmatched {
        log::warn!("no counterpart for {u}");
    }
    print!("{}", format_table(&[(a.kind.slug(), &report)]));
    println!(
        "{} pairs evaluated, {} unmatched files",
        report.pairs_evaluated,
        report.unmatched.len()
    );
    if a.out.is_none() {
        println!();
    }
    write_json_out(a.out.as_deref(), &report)
}

fn run_jobstats(a: JobstatsArgs) -> Result<()> {
    require_file(&a.input)?;
    let f = File::open(&a.input).with_context(|| a.input.display().to_string())?;
    let log = jobstats::load_jobs(BufReader::new(f))?;
    for e in &log.errors {
        log::warn!("{}:{}: {}", a.input.display(), e.line, e.message);
    }
    let report = jobstats::report(&log, a.min_duration, &a.edges, a.top)?;
    write_json_out(a.out.as_deref(), &report)
}

fn run_validate(a: ValidateArgs) -> Result<()> {
    require_file(&a.manifest)?;
    init_pool(a.jobs)?;
    let report = validate_manifest(&a.manifest)?;
    let stdout = std::io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    for f in &report.failures {
        writeln!(out, "FAIL manifest: {f}")?;
    }
    for e in report.entries.iter().filter(|e| !e.passed()) {
        for f in &e.failures {
            writeln!(out, "FAIL {}: {f}", e.image)?;
        }
    }
    writeln!(
        out,
        "{} of {} entries passed",
        report.entries.len() - report.failed_entries(),
        report.entries.len()
    )?;
    out.flush()?;
    if let Some(p) = &a.out {
        write_json_out(Some(p), &report)?;
    }
    if !report.passed() {
        bail!(categorized("validation failed", a.manifest.display().to_string()));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    let result = match cli.command {
        Command::Parse(a) => run_parse(a),
        Command::Render(a) => run_render(a),
        Command::Dataset(a) => run_dataset(a),
        Command::Eval(a) => run_eval(a),
        Command::Jobstats(a) => run_jobstats(a),
        Command::Validate(a) => run_validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("printseg: error [{}]: {e:#}", category_of(&e));
            ExitCode::from(1)
        }
    }
}
