//! Batch generation of image/mask datasets and manifest validation.
//!
//! Layout under the output root:
//!
//! ```text
//! <out>/<kind>/images/<model>_c<level>_<frame:05>.png
//! <out>/<kind>/masks/<model>_c<level>_<frame:05>_mask.png
//! <out>/<kind>/manifest.jsonl
//! ```
//!
//! Every frame is a pure function of the master seed, the model's content
//! digest, the completion-level index and the frame index, so any single
//! frame can be regenerated from its manifest entry.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fsutil;
use crate::gcode::{toolpath_from_str, SlicingConfig};
use crate::raster::{render_frame, ImagePair, RasterError, RenderOptions, TextureBank};
use crate::rng::{derive_seed, SeedPart};
use crate::scene::{interpolate, sample_scene, sample_scene_with, Keyframe, SceneError, SceneRanges};
use crate::semantics::{classify_segments, label_top_layer, truncate_to_layer, ClassifiedToolpath, DatasetKind};

pub const MANIFEST_FORMAT: &str = "printseg-manifest";
pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_NAME: &str = "manifest.jsonl";

/// Pair counts of the three reference datasets at 1024×1024.
pub const LARGE_PAIR_COUNTS: [(DatasetKind, usize); 3] = [
    (DatasetKind::WholePart, 5763),
    (DatasetKind::TopLayer, 3570),
    (DatasetKind::InternalStructure, 1140),
];

const LARGE_PRESET_TOML: &str = include_str!("../presets/large_1024.toml");

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("no G-code files in {0}")]
    NoInputs(PathBuf),
    #[error("none of the G-code files in {0} could be used")]
    NoUsableModels(PathBuf),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("model: {0}")]
    Model(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    pub frames_per_model: usize,
    /// Fractions of the layer count, strictly increasing, in `(0, 1]`.
    pub completion_levels: Vec<f64>,
    pub resolution: [u32; 2],
    pub master_seed: u64,
    /// Frames between animation keyframes.
    pub keyframe_interval: usize,
    /// Frames whose labeled fraction falls below this are redrawn.
    pub min_foreground: f64,
    pub max_regenerations: u32,
    pub shadows: bool,
    pub slicing: SlicingConfig,
    pub scene: SceneRanges,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            kind: DatasetKind::WholePart,
            frames_per_model: 10,
            completion_levels: vec![0.33, 1.0],
            resolution: [256, 256],
            master_seed: 0,
            keyframe_interval: 10,
            min_foreground: 0.005,
            max_regenerations: 5,
            shadows: false,
            slicing: SlicingConfig::default(),
            scene: SceneRanges::default(),
        }
    }
}

impl DatasetConfig {
    /// 1024×1024, 100 frames per model, completion levels {0.33, 1.0}.
    pub fn large_preset(kind: DatasetKind) -> Self {
        let mut cfg: DatasetConfig =
            toml::from_str(LARGE_PRESET_TOML).expect("bundled preset parses");
        cfg.kind = kind;
        cfg
    }

    pub fn from_toml_str(text: &str) -> Result<Self, DatasetError> {
        let cfg: DatasetConfig =
            toml::from_str(text).map_err(|e| DatasetError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml_str(&text)
            .map_err(|e| DatasetError::Config(format!("{}: {e}", path.display())))
    }

    /// Scene ranges with the dataset resolution applied.
    pub fn scene_ranges(&self) -> SceneRanges {
        SceneRanges {
            resolution: self.resolution,
            ..self.scene.clone()
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.frames_per_model == 0 {
            return Err(DatasetError::Config("frames_per_model must be at least 1".into()));
        }
        if self.keyframe_interval == 0 {
            return Err(DatasetError::Config("keyframe_interval must be at least 1".into()));
        }
        if self.completion_levels.is_empty() {
            return Err(DatasetError::Config("completion_levels must not be empty".into()));
        }
        if self
            .completion_levels
            .iter()
            .any(|&f| !(f > 0.0 && f <= 1.0))
        {
            return Err(DatasetError::Config(
                "completion levels must lie in (0, 1]".into(),
            ));
        }
        if self.completion_levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DatasetError::Config(
                "completion levels must be strictly increasing".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.min_foreground) {
            return Err(DatasetError::Config("min_foreground must lie in [0, 1)".into()));
        }
        self.scene_ranges().validate()?;
        Ok(())
    }
}

/// Layers included at completion fraction `f` of `layers`: `ceil(f · layers)`,
/// at least one.
pub fn completion_layer_for(fraction: f64, layers: usize) -> usize {
    ((fraction * layers as f64).ceil() as usize).clamp(1, layers.max(1))
}

/// A parsed and classified input model.
#[derive(Debug, Clone)]
pub struct Model {
    /// File name of the source G-code.
    pub source: String,
    pub stem: String,
    pub classified: ClassifiedToolpath,
}

impl Model {
    pub fn load(path: &Path, slicing: &SlicingConfig) -> Result<Model, DatasetError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let toolpath =
            toolpath_from_str(&text, slicing).map_err(|e| DatasetError::Model(e.to_string()))?;
        if toolpath.is_empty() {
            return Err(DatasetError::Model("no extrusion moves".into()));
        }
        let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        Ok(Model {
            source: name,
            stem,
            classified: classify_segments(&toolpath),
        })
    }

    pub fn digest(&self) -> &str {
        &self.classified.toolpath.source_digest
    }
}

pub fn is_gcode_file(path: &Path) -> bool {
    path.is_file()
        && path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "gcode" | "gco" | "g"))
}

/// G-code files directly inside `dir`, sorted by file name.
pub fn list_gcode_files(dir: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| is_gcode_file(p))
        .collect();
    files.sort();
    Ok(files)
}

pub fn frame_seed(master: u64, digest: &str, completion_index: usize, frame_index: usize) -> u64 {
    derive_seed(&[
        SeedPart::U64(master),
        SeedPart::Str(digest),
        SeedPart::U64(completion_index as u64),
        SeedPart::U64(frame_index as u64),
    ])
}

fn keyframe_seed(master: u64, digest: &str, completion_index: usize, key: usize) -> u64 {
    derive_seed(&[
        SeedPart::U64(master),
        SeedPart::Str(digest),
        SeedPart::U64(completion_index as u64),
        SeedPart::Str("keyframe"),
        SeedPart::U64(key as u64),
    ])
}

fn retry_seed(frame_seed: u64, attempt: u32) -> u64 {
    derive_seed(&[
        SeedPart::U64(frame_seed),
        SeedPart::Str("retry"),
        SeedPart::U64(attempt as u64),
    ])
}

/// One rendered frame plus the bookkeeping that goes into its manifest entry.
#[derive(Debug, Clone)]
pub struct RenderedFrame {
    pub pair: ImagePair,
    pub frame_seed: u64,
    pub scene_seed: u64,
    /// 0 for the animation frame; `n` for the n-th redraw.
    pub attempts: u32,
    pub degenerate: bool,
}

/// Renders frame `frame_index` of completion level `completion_index`.
///
/// Attempt 0 is interpolated between the animation keyframes around the
/// frame. When fewer than `min_foreground` of the pixels are labeled, a fresh
/// scene is drawn from a seed derived from the frame seed, up to
/// `max_regenerations` times; the last attempt is kept and flagged.
pub fn render_item(
    model: &Model,
    completion_index: usize,
    frame_index: usize,
    cfg: &DatasetConfig,
    textures: Option<&TextureBank>,
) -> Result<RenderedFrame, DatasetError> {
    let full = &model.classified;
    let layers = full.toolpath.layer_count();
    let fraction = *cfg
        .completion_levels
        .get(completion_index)
        .ok_or_else(|| DatasetError::Config(format!("no completion level {completion_index}")))?;
    let k = completion_layer_for(fraction, layers);
    let ct = truncate_to_layer(full, k).map_err(|e| DatasetError::Model(e.to_string()))?;
    let ct = label_top_layer(&ct).map_err(|e| DatasetError::Model(e.to_string()))?;
    let bounds = ct.toolpath.bounds();
    let ranges = cfg.scene_ranges();
    let digest = model.digest();
    let master = cfg.master_seed;

    let interval = cfg.keyframe_interval;
    let key = frame_index / interval;
    let t = (frame_index % interval) as f64 / interval as f64;
    let first = sample_scene(keyframe_seed(master, digest, completion_index, 0), &ranges, &bounds)?;
    let lights = (first.lights.len() - 1) as u32;
    let key_scene = |j: usize| -> Result<Keyframe, DatasetError> {
        let scene = if j == 0 {
            first.clone()
        } else {
            sample_scene_with(
                keyframe_seed(master, digest, completion_index, j),
                &ranges,
                &bounds,
                Some(lights),
            )?
        };
        Ok(Keyframe {
            frame_index: j * interval,
            scene,
        })
    };

    let seed = frame_seed(master, digest, completion_index, frame_index);
    let mut scene = interpolate(&key_scene(key)?, &key_scene(key + 1)?, t)?;
    scene.rng_seed = seed;
    let opts = RenderOptions {
        flat_id: false,
        shadows: cfg.shadows,
        textures,
    };
    let min_labeled = (cfg.min_foreground * (cfg.resolution[0] as f64) * (cfg.resolution[1] as f64)).ceil() as usize;
    let mut attempt = 0;
    loop {
        let mut pair = render_frame(&scene, &ct, cfg.kind, &opts)?;
        pair.meta.frame_index = frame_index;
        let labeled = pair.mask.as_raw().iter().filter(|&&v| v != 0).count();
        let ok = labeled >= min_labeled;
        if ok || attempt == cfg.max_regenerations {
            return Ok(RenderedFrame {
                pair,
                frame_seed: seed,
                scene_seed: scene.rng_seed,
                attempts: attempt,
                degenerate: !ok,
            });
        }
        attempt += 1;
        scene = sample_scene(retry_seed(seed, attempt), &ranges, &bounds)?;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub format: String,
    pub version: u32,
    pub kind: DatasetKind,
    pub master_seed: u64,
    pub resolution: [u32; 2],
    pub frames_per_model: usize,
    pub completion_levels: Vec<String>,
    pub palette: Vec<u8>,
    pub models: usize,
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Path relative to the manifest's directory.
    pub image: String,
    pub mask: String,
    pub image_sha256: String,
    pub mask_sha256: String,
    pub source: String,
    pub source_digest: String,
    pub kind: DatasetKind,
    pub completion_index: usize,
    pub completion_layer: usize,
    pub frame_index: usize,
    pub frame_seed: u64,
    pub scene_seed: u64,
    pub attempts: u32,
    pub degenerate: bool,
    pub width: u32,
    pub height: u32,
    /// Pixel count per mask level.
    pub histogram: BTreeMap<u8, u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestError {
    pub source: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum ManifestLine {
    Header(ManifestHeader),
    Pair(ManifestEntry),
    Error(ManifestError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub header: ManifestHeader,
    pub entries: Vec<ManifestEntry>,
    pub errors: Vec<ManifestError>,
}

impl Manifest {
    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut line = |l: ManifestLine| -> std::io::Result<()> {
            serde_json::to_writer(&mut w, &l)?;
            w.write_all(b"\n")
        };
        line(ManifestLine::Header(self.header.clone()))?;
        for e in &self.entries {
            line(ManifestLine::Pair(e.clone()))?;
        }
        for e in &self.errors {
            line(ManifestLine::Error(e.clone()))?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Manifest, DatasetError> {
        let mut header = None;
        let mut entries = Vec::new();
        let mut errors = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line.map_err(|e| DatasetError::Manifest {
                line: i + 1,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed = parse_line(&line).map_err(|message| DatasetError::Manifest {
                line: i + 1,
                message,
            })?;
            match (i, parsed) {
                (0, ManifestLine::Header(h)) => {
                    if h.format != MANIFEST_FORMAT || h.version != MANIFEST_VERSION {
                        return Err(DatasetError::Manifest {
                            line: 1,
                            message: format!("unsupported format {} v{}", h.format, h.version),
                        });
                    }
                    header = Some(h)
                }
                (0, _) => {
                    return Err(DatasetError::Manifest {
                        line: 1,
                        message: "first line must be the header".into(),
                    })
                }
                (_, ManifestLine::Header(_)) => {
                    return Err(DatasetError::Manifest {
                        line: i + 1,
                        message: "duplicate header".into(),
                    })
                }
                (_, ManifestLine::Pair(e)) => entries.push(e),
                (_, ManifestLine::Error(e)) => errors.push(e),
            }
        }
        let header = header.ok_or(DatasetError::Manifest {
            line: 1,
            message: "empty manifest".into(),
        })?;
        Ok(Manifest {
            header,
            entries,
            errors,
        })
    }

    pub fn load(path: &Path) -> Result<Manifest, DatasetError> {
        let f = std::fs::File::open(path).map_err(io_err(path))?;
        Manifest::read(BufReader::new(f))
    }
}

// Internally tagged enums buffer their content, which loses the ability to
// read integer map keys, so dispatch on the tag by hand.
fn parse_line(line: &str) -> Result<ManifestLine, String> {
    let value: serde_json::Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let tag = value.get("type").and_then(|t| t.as_str()).unwrap_or_default().to_string();
    let err = |e: serde_json::Error| e.to_string();
    match tag.as_str() {
        "header" => serde_json::from_value(value).map(ManifestLine::Header).map_err(err),
        "pair" => serde_json::from_value(value).map(ManifestLine::Pair).map_err(err),
        "error" => serde_json::from_value(value).map(ManifestLine::Error).map_err(err),
        other => Err(format!("unknown record type `{other}`")),
    }
}

pub fn histogram(mask: &[u8]) -> BTreeMap<u8, u64> {
    let mut h = BTreeMap::new();
    for &v in mask {
        *h.entry(v).or_insert(0) += 1;
    }
    h
}

pub fn image_name(stem: &str, frame: usize) -> String {
    format!("{stem}_{frame:05}.png")
}

pub fn mask_name(stem: &str, frame: usize) -> String {
    format!("{stem}_{frame:05}_mask.png")
}

fn pair_stem(model: &Model, completion_index: usize) -> String {
    format!("{}_c{completion_index}", model.stem)
}

#[derive(Debug, Clone)]
pub struct DatasetSummary {
    /// `<out>/<kind>`.
    pub dir: PathBuf,
    pub manifest_path: PathBuf,
    pub manifest: Manifest,
}

/// Renders every model × completion level × frame in `gcode_dir` into
/// `out_root/<kind>/` using `jobs` worker threads.
pub fn generate_dataset(
    gcode_dir: &Path,
    out_root: &Path,
    cfg: &DatasetConfig,
    jobs: usize,
) -> Result<DatasetSummary, DatasetError> {
    cfg.validate()?;
    let files = list_gcode_files(gcode_dir)?;
    if files.is_empty() {
        return Err(DatasetError::NoInputs(gcode_dir.to_path_buf()));
    }
    let mut models = Vec::new();
    let mut errors = Vec::new();
    for f in &files {
        match Model::load(f, &cfg.slicing) {
            Ok(m) => models.push(m),
            Err(e) => {
                log::warn!("skipping {}: {e}", f.display());
                errors.push(ManifestError {
                    source: f.file_name().unwrap_or_default().to_string_lossy().into_owned(),
                    message: e.to_string(),
                })
            }
        }
    }
    if models.is_empty() {
        return Err(DatasetError::NoUsableModels(gcode_dir.to_path_buf()));
    }

    let textures = TextureBank::load(&cfg.scene)?;
    let dir = out_root.join(cfg.kind.slug());
    let images_dir = dir.join("images");
    let masks_dir = dir.join("masks");
    for d in [&images_dir, &masks_dir] {
        std::fs::create_dir_all(d).map_err(io_err(d))?;
    }

    let items: Vec<(usize, usize, usize)> = (0..models.len())
        .flat_map(|m| {
            (0..cfg.completion_levels.len())
                .flat_map(move |c| (0..cfg.frames_per_model).map(move |f| (m, c, f)))
        })
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| DatasetError::Config(format!("thread pool: {e}")))?;
    let results: Vec<Result<ManifestEntry, DatasetError>> = pool.install(|| {
        items
            .par_iter()
            .map(|&(m, c, f)| {
                let model = &models[m];
                let frame = render_item(model, c, f, cfg, Some(&textures))?;
                let stem = pair_stem(model, c);
                write_pair(&images_dir, &masks_dir, &stem, model, c, frame)
            })
            .collect()
    });
    let mut entries = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    entries.sort_by(|a, b| {
        (&a.source, a.completion_index, a.frame_index).cmp(&(&b.source, b.completion_index, b.frame_index))
    });
    errors.sort_by(|a, b| a.source.cmp(&b.source));

    let manifest = Manifest {
        header: ManifestHeader {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            kind: cfg.kind,
            master_seed: cfg.master_seed,
            resolution: cfg.resolution,
            frames_per_model: cfg.frames_per_model,
            completion_levels: cfg.completion_levels.iter().map(|f| f.to_string()).collect(),
            palette: cfg.kind.palette().to_vec(),
            models: models.len(),
            pairs: entries.len(),
        },
        entries,
        errors,
    };
    let manifest_path = dir.join(MANIFEST_NAME);
    fsutil::write_atomic_with(&manifest_path, |w| manifest.write(w)).map_err(io_err(&manifest_path))?;
    Ok(DatasetSummary {
        dir,
        manifest_path,
        manifest,
    })
}

fn write_pair(
    images_dir: &Path,
    masks_dir: &Path,
    stem: &str,
    model: &Model,
    completion_index: usize,
    frame: RenderedFrame,
) -> Result<ManifestEntry, DatasetError> {
    let f = frame.pair.meta.frame_index;
    let image_path = images_dir.join(image_name(stem, f));
    let mask_path = masks_dir.join(mask_name(stem, f));
    let image_png = fsutil::encode_png(
        frame.pair.image.as_raw(),
        frame.pair.image.width(),
        frame.pair.image.height(),
        image::ExtendedColorType::Rgb8,
    )
    .map_err(io_err(&image_path))?;
    let mask_png = fsutil::encode_png(
        frame.pair.mask.as_raw(),
        frame.pair.mask.width(),
        frame.pair.mask.height(),
        image::ExtendedColorType::L8,
    )
    .map_err(io_err(&mask_path))?;
    fsutil::write_atomic(&image_path, &image_png).map_err(io_err(&image_path))?;
    fsutil::write_atomic(&mask_path, &mask_png).map_err(io_err(&mask_path))?;
    Ok(ManifestEntry {
        image: format!("images/{}", image_name(stem, f)),
        mask: format!("masks/{}", mask_name(stem, f)),
        image_sha256: crate::sha256_hex(&image_png),
        mask_sha256: crate::sha256_hex(&mask_png),
        source: model.source.clone(),
        source_digest: model.digest().to_string(),
        kind: frame.pair.meta.kind,
        completion_index,
        completion_layer: frame.pair.meta.completion_layer,
        frame_index: f,
        frame_seed: frame.frame_seed,
        scene_seed: frame.scene_seed,
        attempts: frame.attempts,
        degenerate: frame.degenerate,
        width: frame.pair.mask.width(),
        height: frame.pair.mask.height(),
        histogram: histogram(frame.pair.mask.as_raw()),
    })
}

/// Re-renders the frame behind a manifest entry from its model file.
pub fn regenerate_entry(
    entry: &ManifestEntry,
    model: &Model,
    cfg: &DatasetConfig,
    textures: Option<&TextureBank>,
) -> Result<RenderedFrame, DatasetError> {
    if model.digest() != entry.source_digest {
        return Err(DatasetError::Model(format!(
            "{} does not match the recorded digest",
            model.source
        )));
    }
    let frame = render_item(model, entry.completion_index, entry.frame_index, cfg, textures)?;
    if frame.frame_seed != entry.frame_seed {
        return Err(DatasetError::Config(
            "recorded frame seed differs; master seed or model changed".into(),
        ));
    }
    Ok(frame)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EntryCheck {
    pub image: String,
    pub mask: String,
    pub failures: Vec<String>,
}

impl EntryCheck {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub manifest: PathBuf,
    pub entries: Vec<EntryCheck>,
    /// Problems with the manifest as a whole.
    pub failures: Vec<String>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.entries.iter().all(EntryCheck::passed)
    }

    pub fn failed_entries(&self) -> usize {
        self.entries.iter().filter(|e| !e.passed()).count()
    }
}

/// Re-hashes every referenced file and re-checks mask histograms and palette
/// closure. Missing or corrupt files are reported, not raised.
pub fn validate_manifest(path: &Path) -> Result<ValidationReport, DatasetError> {
    let manifest = Manifest::load(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let palette = manifest.header.kind.palette();
    let mut failures = Vec::new();
    if manifest.header.pairs != manifest.entries.len() {
        failures.push(format!(
            "header declares {} pairs, manifest lists {}",
            manifest.header.pairs,
            manifest.entries.len()
        ));
    }
    let entries = manifest
        .entries
        .par_iter()
        .map(|e| check_entry(base, e, palette))
        .collect();
    Ok(ValidationReport {
        manifest: path.to_path_buf(),
        entries,
        failures,
    })
}

fn check_entry(base: &Path, e: &ManifestEntry, palette: &[u8]) -> EntryCheck {
    let mut failures = Vec::new();
    let read = |rel: &str, failures: &mut Vec<String>| match std::fs::read(base.join(rel)) {
        Ok(b) => Some(b),
        Err(err) => {
            failures.push(format!("{rel}: {err}"));
            None
        }
    };
    if let Some(bytes) = read(&e.image, &mut failures) {
        if crate::sha256_hex(&bytes) != e.image_sha256 {
            failures.push(format!("{}: hash mismatch", e.image));
        }
        match image::load_from_memory(&bytes) {
            Ok(img) if img.width() != e.width || img.height() != e.height => failures.push(
                format!("{}: size {}x{} differs from mask", e.image, img.width(), img.height()),
            ),
            Ok(_) => {}
            Err(err) => failures.push(format!("{}: {err}", e.image)),
        }
    }
    if let Some(bytes) = read(&e.mask, &mut failures) {
        if crate::sha256_hex(&bytes) != e.mask_sha256 {
            failures.push(format!("{}: hash mismatch", e.mask));
        }
        match image::load_from_memory(&bytes) {
            Ok(img) => {
                let mask = img.to_luma8();
                if mask.width() != e.width || mask.height() != e.height {
                    failures.push(format!("{}: unexpected size", e.mask));
                }
                let h = histogram(mask.as_raw());
                if h != e.histogram {
                    failures.push(format!("{}: histogram differs from recount", e.mask));
                }
                let total: u64 = e.histogram.values().sum();
                if total != e.width as u64 * e.height as u64 {
                    failures.push(format!("{}: histogram does not sum to W·H", e.mask));
                }
                let outside: Vec<u8> = h.keys().copied().filter(|v| !palette.contains(v)).collect();
                if !outside.is_empty() {
                    failures.push(format!(
                        "{}: levels {outside:?} outside the {} palette",
                        e.mask, e.kind
                    ));
                }
            }
            Err(err) => failures.push(format!("{}: {err}", e.mask)),
        }
    }
    EntryCheck {
        image: e.image.clone(),
        mask: e.mask.clone(),
        failures,
    }
}
