//! G-code front end: text to commands, commands to a layered toolpath.
//!
//! The accepted dialect is the subset slicers emit for FFF printers:
//! `G0`/`G1` moves, `G92` position resets, `G28` homing, `M82`/`M83`
//! extrusion modes and `;` comments. Every other word is kept as
//! [`CommandKind::Other`] and ignored downstream. Arcs (`G2`/`G3`) parse, but
//! [`extract_toolpath`] refuses them.
//!
//! Bead width is recovered from the filament pushed through the nozzle:
//!
//! ```text
//! width = ΔE · π (d/2)² / (length · layer_height)
//! ```
//!
//! so that `width · height · length` equals the filament volume consumed.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{Aabb, Point};

/// Tolerance for grouping segments into one layer, in millimeters.
pub const LAYER_EPSILON: f64 = 0.01;
/// Allowed bead width after clamping, in millimeters.
pub const MIN_WIDTH: f64 = 0.05;
pub const MAX_WIDTH: f64 = 2.0;
/// z changes smaller than this inside one move are treated as float noise.
const PLANAR_EPSILON: f64 = 1e-6;

pub const TOOLPATH_FORMAT: &str = "printseg-toolpath";
pub const TOOLPATH_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum GcodeError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: extruding move before the toolhead position is known")]
    PositionUnknown { line: usize },
    #[error("line {line}: extruding move changes z ({from} -> {to}); only planar layers are supported")]
    NonPlanar { line: usize, from: f64, to: f64 },
    #[error("line {line}: arc moves (G2/G3) are not supported")]
    ArcUnsupported { line: usize },
    #[error("line {line}: computed bead width {width} is negative")]
    NegativeWidth { line: usize, width: f64 },
    #[error("extrusion at z={z} after a layer at z={previous}: layers out of order")]
    LayerOutOfOrder { z: f64, previous: f64 },
    #[error("toolpath file line {line}: {message}")]
    Interchange { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = GcodeError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    /// `G0` / `G1`.
    Move,
    /// `G92`.
    SetPosition,
    /// `G28`.
    Home,
    /// `M82`.
    AbsExtrude,
    /// `M83`.
    RelExtrude,
    /// `G2` / `G3`.
    Arc,
    Comment,
    Other,
}

/// Path type announced by a slicer comment such as `;TYPE:FILL`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    WallOuter,
    WallInner,
    Infill,
    Support,
    Skin,
    Unknown,
}

impl Feature {
    /// Maps the text after `TYPE:` to a feature. Covers Cura, MatterControl
    /// (MatterSlice) and PrusaSlicer spellings.
    pub fn from_type_token(token: &str) -> Feature {
        let t = token.trim().to_ascii_lowercase();
        match t.as_str() {
            "wall-outer" | "external perimeter" | "outer wall" | "perimeter_outer" => {
                Feature::WallOuter
            }
            "wall-inner" | "perimeter" | "inner wall" | "overhang perimeter" => Feature::WallInner,
            "fill" | "infill" | "internal infill" | "sparse infill" => Feature::Infill,
            "skin" | "solid infill" | "top solid infill" | "bottom solid infill"
            | "bridge infill" | "top surface" | "bottom surface" => Feature::Skin,
            "support" | "support-interface" | "support material"
            | "support material interface" | "support interface" => Feature::Support,
            _ => Feature::Unknown,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Feature::WallOuter => "wall_outer",
            Feature::WallInner => "wall_inner",
            Feature::Infill => "infill",
            Feature::Support => "support",
            Feature::Skin => "skin",
            Feature::Unknown => "unknown",
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureHint {
    pub feature: Feature,
    pub source_line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Command {
    pub kind: CommandKind,
    /// Command word as written, normalized (`G1`, `M104`, ...). Empty for
    /// comment-only lines.
    pub word: String,
    /// Parameters present on the line, keyed by upper-case letter.
    pub params: BTreeMap<char, f64>,
    /// 1-based line number in the source text.
    pub line_no: usize,
    pub comment: Option<String>,
    /// Set when the comment is a slicer `TYPE:` annotation.
    pub hint: Option<FeatureHint>,
}

impl Command {
    pub fn param(&self, axis: char) -> Option<f64> {
        self.params.get(&axis).copied()
    }
}

/// Splits G-code text into one [`Command`] per non-blank line.
pub fn parse_gcode(text: &str) -> Result<Vec<Command>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        if let Some(cmd) = parse_line(raw, idx + 1)? {
            out.push(cmd);
        }
    }
    Ok(out)
}

fn parse_line(raw: &str, line_no: usize) -> Result<Option<Command>> {
    if raw.trim().is_empty() {
        return Ok(None);
    }
    let (code, comment) = match raw.find(';') {
        Some(i) => (&raw[..i], Some(raw[i + 1..].trim().to_string())),
        None => (raw, None),
    };
    // Line numbers and checksums (`N12 G1 X0*71`) carry no geometry.
    let code = code.split('*').next().unwrap_or("").trim();
    let code = strip_line_number(code);

    let hint = comment.as_deref().and_then(|c| {
        let c = c.trim_start();
        let upper = c.get(..5).map(|p| p.eq_ignore_ascii_case("TYPE:"));
        (upper == Some(true)).then(|| FeatureHint {
            feature: Feature::from_type_token(&c[5..]),
            source_line: line_no,
        })
    });

    if code.is_empty() {
        return Ok(Some(Command {
            kind: CommandKind::Comment,
            word: String::new(),
            params: BTreeMap::new(),
            line_no,
            comment,
            hint,
        }));
    }

    let (word, rest) = split_word(code);
    let word = normalize_word(word);
    let kind = match word.as_str() {
        "G0" | "G1" => CommandKind::Move,
        "G2" | "G3" => CommandKind::Arc,
        "G92" => CommandKind::SetPosition,
        "G28" => CommandKind::Home,
        "M82" => CommandKind::AbsExtrude,
        "M83" => CommandKind::RelExtrude,
        _ => CommandKind::Other,
    };
    let params = match kind {
        // Free-form arguments (`M117 Hello`) are legal on other commands.
        CommandKind::Other => BTreeMap::new(),
        CommandKind::Home => parse_params(rest, line_no, true)?,
        _ => parse_params(rest, line_no, false)?,
    };
    Ok(Some(Command {
        kind,
        word,
        params,
        line_no,
        comment,
        hint,
    }))
}

fn strip_line_number(code: &str) -> &str {
    let bytes = code.as_bytes();
    if matches!(bytes.first(), Some(b'N' | b'n'))
        && bytes.get(1).is_some_and(|b| b.is_ascii_digit())
    {
        let end = code[1..]
            .find(|c: char| !c.is_ascii_digit())
            .map_or(code.len(), |i| i + 1);
        code[end..].trim_start()
    } else {
        code
    }
}

fn split_word(code: &str) -> (&str, &str) {
    let mut end = 1;
    for (i, c) in code.char_indices().skip(1) {
        if c.is_ascii_digit() || c == '.' {
            end = i + c.len_utf8();
        } else {
            break;
        }
    }
    (&code[..end], &code[end..])
}

/// `g01` -> `G1`, `G1.0` stays as written after upper-casing.
fn normalize_word(word: &str) -> String {
    let letter = word[..1].to_ascii_uppercase();
    let num = &word[1..];
    match num.parse::<u32>() {
        Ok(n) => format!("{letter}{n}"),
        Err(_) => format!("{letter}{num}"),
    }
}

fn parse_params(rest: &str, line_no: usize, bare_allowed: bool) -> Result<BTreeMap<char, f64>> {
    let mut params = BTreeMap::new();
    let mut chars = rest.char_indices().peekable();
    while let Some(&(i, c)) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
            continue;
        }
        if !c.is_ascii_alphabetic() {
            return Err(GcodeError::Parse {
                line: line_no,
                message: format!("unexpected character {c:?}"),
            });
        }
        chars.next();
        let start = i + c.len_utf8();
        let mut end = start;
        while let Some(&(j, d)) = chars.peek() {
            if d.is_ascii_alphabetic() || d.is_whitespace() {
                break;
            }
            end = j + d.len_utf8();
            chars.next();
        }
        let text = &rest[start..end];
        let axis = c.to_ascii_uppercase();
        let value = if text.is_empty() {
            if !bare_allowed {
                return Err(GcodeError::Parse {
                    line: line_no,
                    message: format!("parameter {axis} has no value"),
                });
            }
            0.0
        } else {
            match text.parse::<f64>() {
                Ok(v) if v.is_finite() => v,
                _ => {
                    return Err(GcodeError::Parse {
                        line: line_no,
                        message: format!("malformed number {text:?} for parameter {axis}"),
                    })
                }
            }
        };
        params.insert(axis, value);
    }
    Ok(params)
}

/// Printer and slicer constants needed to turn moves into beads.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SlicingConfig {
    pub filament_diameter: f64,
    pub layer_height: f64,
    /// Nominal extrusion width; used as the closing tolerance when beads are
    /// grouped into loops.
    pub default_width: f64,
}

impl Default for SlicingConfig {
    fn default() -> Self {
        SlicingConfig {
            filament_diameter: 1.75,
            layer_height: 0.3,
            default_width: 0.4,
        }
    }
}

impl SlicingConfig {
    pub fn filament_area(&self) -> f64 {
        let r = self.filament_diameter / 2.0;
        std::f64::consts::PI * r * r
    }
}

/// One straight, planar bead.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtrusionSegment {
    pub start: Point,
    pub end: Point,
    pub width: f64,
    pub height: f64,
    pub hint: Feature,
    pub layer_index: usize,
}

impl ExtrusionSegment {
    pub fn length(&self) -> f64 {
        (self.end - self.start).norm()
    }

    pub fn volume(&self) -> f64 {
        self.width * self.height * self.length()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub z: f64,
    pub range: Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Toolpath {
    pub segments: Vec<ExtrusionSegment>,
    pub layers: Vec<Layer>,
    /// SHA-256 of the source text, hex encoded.
    pub source_digest: String,
}

/// Toolhead state while walking the command stream.
struct Machine {
    pos: [Option<f64>; 3],
    e: f64,
    relative_e: bool,
}

impl Machine {
    fn known(&self) -> Option<Point> {
        match self.pos {
            [Some(x), Some(y), Some(z)] => Some(Point::new(x, y, z)),
            _ => None,
        }
    }
}

/// Runs the extrusion state machine and groups the resulting beads into
/// layers.
///
/// Travel moves, retractions and zero-length moves emit nothing. Width is
/// derived from filament volume and clamped to `[MIN_WIDTH, MAX_WIDTH]`.
pub fn extract_toolpath(commands: &[Command], cfg: &SlicingConfig) -> Result<Toolpath> {
    let area = cfg.filament_area();
    let mut m = Machine {
        pos: [None; 3],
        e: 0.0,
        relative_e: false,
    };
    let mut hint = Feature::Unknown;
    let mut segments = Vec::new();

    for cmd in commands {
        match cmd.kind {
            CommandKind::Comment | CommandKind::Other => {}
            CommandKind::AbsExtrude => m.relative_e = false,
            CommandKind::RelExtrude => m.relative_e = true,
            CommandKind::Arc => return Err(GcodeError::ArcUnsupported { line: cmd.line_no }),
            CommandKind::Home => {
                let any = ['X', 'Y', 'Z'].iter().any(|a| cmd.params.contains_key(a));
                for (i, axis) in ['X', 'Y', 'Z'].into_iter().enumerate() {
                    if !any || cmd.params.contains_key(&axis) {
                        m.pos[i] = Some(0.0);
                    }
                }
            }
            CommandKind::SetPosition => {
                for (i, axis) in ['X', 'Y', 'Z'].into_iter().enumerate() {
                    if let Some(v) = cmd.param(axis) {
                        m.pos[i] = Some(v);
                    }
                }
                if let Some(e) = cmd.param('E') {
                    m.e = e;
                }
            }
            CommandKind::Move => {
                let start = m.known();
                let mut target = m.pos;
                for (i, axis) in ['X', 'Y', 'Z'].into_iter().enumerate() {
                    if let Some(v) = cmd.param(axis) {
                        target[i] = Some(v);
                    }
                }
                let delta_e = match cmd.param('E') {
                    None => 0.0,
                    Some(e) if m.relative_e => e,
                    Some(e) => {
                        let d = e - m.e;
                        m.e = e;
                        d
                    }
                };
                m.pos = target;
                if delta_e <= 0.0 {
                    continue;
                }
                let (Some(start), Some(end)) = (start, m.known()) else {
                    return Err(GcodeError::PositionUnknown { line: cmd.line_no });
                };
                let length = (end - start).norm();
                if length <= 0.0 {
                    // Unretract or prime in place.
                    continue;
                }
                if (end.z - start.z).abs() > PLANAR_EPSILON {
                    return Err(GcodeError::NonPlanar {
                        line: cmd.line_no,
                        from: start.z,
                        to: end.z,
                    });
                }
                let end = Point::new(end.x, end.y, start.z);
                let width = delta_e * area / (length * cfg.layer_height);
                if width < 0.0 || !width.is_finite() {
                    return Err(GcodeError::NegativeWidth {
                        line: cmd.line_no,
                        width,
                    });
                }
                segments.push(ExtrusionSegment {
                    start,
                    end,
                    width: width.clamp(MIN_WIDTH, MAX_WIDTH),
                    height: cfg.layer_height,
                    hint,
                    layer_index: 0,
                });
            }
        }
        if let Some(h) = cmd.hint {
            hint = h.feature;
        }
    }
    split_layers(segments)
}

/// Parses, extracts and stamps the source digest in one go.
pub fn toolpath_from_str(text: &str, cfg: &SlicingConfig) -> Result<Toolpath> {
    let commands = parse_gcode(text)?;
    let mut tp = extract_toolpath(&commands, cfg)?;
    tp.source_digest = crate::sha256_hex(text.as_bytes());
    Ok(tp)
}

/// Groups emission-ordered segments into layers of equal z (within
/// [`LAYER_EPSILON`]) and assigns `layer_index`.
pub fn split_layers(mut segments: Vec<ExtrusionSegment>) -> Result<Toolpath> {
    let mut layers: Vec<Layer> = Vec::new();
    for i in 0..segments.len() {
        let z = segments[i].start.z;
        match layers.last_mut() {
            Some(layer) if (z - layer.z).abs() <= LAYER_EPSILON => layer.range.end = i + 1,
            Some(layer) if z < layer.z => {
                return Err(GcodeError::LayerOutOfOrder {
                    z,
                    previous: layer.z,
                })
            }
            _ => layers.push(Layer { z, range: i..i + 1 }),
        }
        segments[i].layer_index = layers.len() - 1;
    }
    Ok(Toolpath {
        segments,
        layers,
        source_digest: String::new(),
    })
}

impl Toolpath {
    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Total bead volume in mm³.
    pub fn extruded_volume(&self) -> f64 {
        self.segments.iter().map(ExtrusionSegment::volume).sum()
    }

    /// Bounds of the bead solids (segment endpoints padded by half the
    /// width horizontally and the layer height downward).
    pub fn bounds(&self) -> Aabb {
        let mut b = Aabb::empty();
        for s in &self.segments {
            let r = s.width / 2.0;
            for p in [s.start, s.end] {
                b.include(&Point::new(p.x - r, p.y - r, p.z - s.height));
                b.include(&Point::new(p.x + r, p.y + r, p.z));
            }
        }
        b
    }

    /// Writes the line-delimited interchange form.
    pub fn write_interchange<W: Write>(&self, w: W) -> Result<()> {
        write_records(self, None, w)
    }

    pub fn read_interchange<R: BufRead>(r: R) -> Result<Toolpath> {
        let (header, records) = read_records(r, TOOLPATH_FORMAT)?;
        toolpath_from_records(header.source_digest, &records)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub(crate) struct InterchangeHeader {
    pub format: String,
    pub version: u32,
    pub source_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion_layer: Option<usize>,
    pub fields: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub(crate) struct SegmentRecord {
    pub layer: usize,
    pub sx: f64,
    pub sy: f64,
    pub sz: f64,
    pub ex: f64,
    pub ey: f64,
    pub ez: f64,
    pub width: f64,
    pub height: f64,
    pub hint: Feature,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structural: Option<String>,
}

pub(crate) const SEGMENT_FIELDS: [&str; 10] = [
    "layer", "sx", "sy", "sz", "ex", "ey", "ez", "width", "height", "hint",
];

pub(crate) fn write_records<W: Write>(
    tp: &Toolpath,
    classes: Option<(&str, usize, &dyn Fn(usize) -> (String, String))>,
    mut w: W,
) -> Result<()> {
    let mut fields: Vec<String> = SEGMENT_FIELDS.iter().map(|s| s.to_string()).collect();
    let (format, completion) = match classes {
        Some((format, completion, _)) => {
            fields.push("class".into());
            fields.push("structural".into());
            (format, Some(completion))
        }
        None => (TOOLPATH_FORMAT, None),
    };
    let header = InterchangeHeader {
        format: format.to_string(),
        version: TOOLPATH_VERSION,
        source_digest: tp.source_digest.clone(),
        completion_layer: completion,
        fields,
    };
    serde_json::to_writer(&mut w, &header).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    for (i, s) in tp.segments.iter().enumerate() {
        let (class, structural) = match &classes {
            Some((_, _, f)) => {
                let (c, st) = f(i);
                (Some(c), Some(st))
            }
            None => (None, None),
        };
        let rec = SegmentRecord {
            layer: s.layer_index,
            sx: s.start.x,
            sy: s.start.y,
            sz: s.start.z,
            ex: s.end.x,
            ey: s.end.y,
            ez: s.end.z,
            width: s.width,
            height: s.height,
            hint: s.hint,
            class,
            structural,
        };
        serde_json::to_writer(&mut w, &rec).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn read_records<R: BufRead>(
    r: R,
    format: &str,
) -> Result<(InterchangeHeader, Vec<SegmentRecord>)> {
    let mut lines = r.lines();
    let first = lines.next().transpose()?.ok_or(GcodeError::Interchange {
        line: 1,
        message: "empty file".into(),
    })?;
    let header: InterchangeHeader =
        serde_json::from_str(&first).map_err(|e| GcodeError::Interchange {
            line: 1,
            message: format!("bad header: {e}"),
        })?;
    if header.format != format || header.version != TOOLPATH_VERSION {
        return Err(GcodeError::Interchange {
            line: 1,
            message: format!(
                "expected {format} v{TOOLPATH_VERSION}, found {} v{}",
                header.format, header.version
            ),
        });
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SegmentRecord =
            serde_json::from_str(&line).map_err(|e| GcodeError::Interchange {
                line: i + 2,
                message: e.to_string(),
            })?;
        records.push(rec);
    }
    Ok((header, records))
}

pub(crate) fn toolpath_from_records(digest: String, records: &[SegmentRecord]) -> Result<Toolpath> {
    let mut segments = Vec::with_capacity(records.len());
    let mut layers: Vec<Layer> = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let bad = |message: String| GcodeError::Interchange {
            line: i + 2,
            message,
        };
        let n = layers.len();
        match layers.last_mut() {
            Some(l) if r.layer + 1 == n => l.range.end = i + 1,
            _ if r.layer == n => {
                if let Some(prev) = layers.last() {
                    if r.sz <= prev.z {
                        return Err(bad(format!("layer {} is not above the previous layer", r.layer)));
                    }
                }
                layers.push(Layer {
                    z: r.sz,
                    range: i..i + 1,
                })
            }
            _ => return Err(bad(format!("unexpected layer index {}", r.layer))),
        }
        segments.push(ExtrusionSegment {
            start: Point::new(r.sx, r.sy, r.sz),
            end: Point::new(r.ex, r.ey, r.ez),
            width: r.width,
            height: r.height,
            hint: r.hint,
            layer_index: r.layer,
        });
    }
    Ok(Toolpath {
        segments,
        layers,
        source_digest: digest,
    })
}
