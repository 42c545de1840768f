//! Bead labeling, partial-completion truncation and per-dataset mask levels.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gcode::{self, ExtrusionSegment, Feature, GcodeError, Toolpath};
use crate::geom::Point;

pub const CLASSIFIED_FORMAT: &str = "printseg-classified-toolpath";

/// Endpoints closer than this are considered joined when chaining beads.
const JOIN_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum SemanticsError {
    #[error("completion layer {k} is out of range for a toolpath with {layers} layers")]
    LayerOutOfRange { k: usize, layers: usize },
    #[error("toolpath has no printed layers")]
    EmptyToolpath,
    #[error("unknown class name {0:?}")]
    UnknownClass(String),
    #[error(transparent)]
    Toolpath(#[from] GcodeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SemanticClass {
    Background,
    Part,
    TopLayer,
    Shell,
    Infill,
    Support,
}

impl SemanticClass {
    pub const ALL: [SemanticClass; 6] = [
        SemanticClass::Background,
        SemanticClass::Part,
        SemanticClass::TopLayer,
        SemanticClass::Shell,
        SemanticClass::Infill,
        SemanticClass::Support,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SemanticClass::Background => "background",
            SemanticClass::Part => "part",
            SemanticClass::TopLayer => "top_layer",
            SemanticClass::Shell => "shell",
            SemanticClass::Infill => "infill",
            SemanticClass::Support => "support",
        }
    }
}

impl fmt::Display for SemanticClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SemanticClass {
    type Err = SemanticsError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SemanticClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| SemanticsError::UnknownClass(s.to_string()))
    }
}

/// The three dataset variants, each with its own mask palette.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    WholePart,
    TopLayer,
    InternalStructure,
}

impl DatasetKind {
    pub const ALL: [DatasetKind; 3] = [
        DatasetKind::WholePart,
        DatasetKind::TopLayer,
        DatasetKind::InternalStructure,
    ];

    /// Every grayscale level a mask of this kind may contain, ascending.
    pub fn palette(&self) -> &'static [u8] {
        match self {
            DatasetKind::WholePart | DatasetKind::TopLayer => &[0, 255],
            DatasetKind::InternalStructure => &[0, 85, 170, 255],
        }
    }

    /// The class a palette level stands for in this kind.
    pub fn class_of_level(&self, level: u8) -> Option<SemanticClass> {
        use SemanticClass::*;
        match (self, level) {
            (_, 0) => Some(Background),
            (DatasetKind::WholePart, 255) => Some(Part),
            (DatasetKind::TopLayer, 255) => Some(TopLayer),
            (DatasetKind::InternalStructure, 85) => Some(Shell),
            (DatasetKind::InternalStructure, 170) => Some(Support),
            (DatasetKind::InternalStructure, 255) => Some(Infill),
            _ => None,
        }
    }

    /// Short name used on the command line and in directory names.
    pub fn slug(&self) -> &'static str {
        match self {
            DatasetKind::WholePart => "wholepart",
            DatasetKind::TopLayer => "toplayer",
            DatasetKind::InternalStructure => "internal",
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl FromStr for DatasetKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "wholepart" | "whole" | "part" => Ok(DatasetKind::WholePart),
            "toplayer" | "top" => Ok(DatasetKind::TopLayer),
            "internal" | "internalstructure" => Ok(DatasetKind::InternalStructure),
            _ => Err(format!(
                "unknown dataset kind {s:?} (expected wholepart, toplayer or internal)"
            )),
        }
    }
}

/// A toolpath with one class per segment.
///
/// `structural` always holds the shell/infill/support class; `classes`
/// equals it except where [`label_top_layer`] promoted beads to
/// [`SemanticClass::TopLayer`].
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifiedToolpath {
    pub toolpath: Toolpath,
    pub classes: Vec<SemanticClass>,
    pub structural: Vec<SemanticClass>,
    /// Number of layers included.
    pub completion_layer: usize,
}

/// Assigns every bead a structural class. Slicer hints win; beads without a
/// hint fall back to a geometric rule (outermost closed loops are shell,
/// everything else infill).
pub fn classify_segments(toolpath: &Toolpath) -> ClassifiedToolpath {
    let mut classes: Vec<SemanticClass> = toolpath
        .segments
        .iter()
        .map(|s| match s.hint {
            Feature::WallOuter | Feature::WallInner => SemanticClass::Shell,
            Feature::Infill | Feature::Skin => SemanticClass::Infill,
            Feature::Support => SemanticClass::Support,
            Feature::Unknown => SemanticClass::Infill,
        })
        .collect();
    for layer in &toolpath.layers {
        for idx in outermost_loops(&toolpath.segments, layer.range.clone()) {
            classes[idx] = SemanticClass::Shell;
        }
    }
    ClassifiedToolpath {
        toolpath: toolpath.clone(),
        structural: classes.clone(),
        classes,
        completion_layer: toolpath.layers.len(),
    }
}

/// Indices of unhinted segments in `range` that belong to a closed chain not
/// enclosed by any other closed chain of the same layer.
fn outermost_loops(segments: &[ExtrusionSegment], range: std::ops::Range<usize>) -> Vec<usize> {
    let mut chains: Vec<Vec<usize>> = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    for i in range {
        let s = &segments[i];
        if s.hint != Feature::Unknown {
            if !current.is_empty() {
                chains.push(std::mem::take(&mut current));
            }
            continue;
        }
        if let Some(&prev) = current.last() {
            if (segments[prev].end - s.start).norm() > JOIN_TOLERANCE {
                chains.push(std::mem::take(&mut current));
            }
        }
        current.push(i);
    }
    if !current.is_empty() {
        chains.push(current);
    }

    let loops: Vec<(Vec<usize>, Vec<Point>)> = chains
        .into_iter()
        .filter(|c| {
            let first = &segments[c[0]];
            let last = &segments[*c.last().unwrap()];
            c.len() >= 3 && (last.end - first.start).norm() <= first.width.max(JOIN_TOLERANCE)
        })
        .map(|c| {
            let poly = c.iter().map(|&i| segments[i].start).collect();
            (c, poly)
        })
        .collect();

    let mut out = Vec::new();
    for (i, (chain, poly)) in loops.iter().enumerate() {
        let area = polygon_area(poly).abs();
        let enclosed = loops.iter().enumerate().any(|(j, (_, other))| {
            j != i && polygon_area(other).abs() > area && point_in_polygon(&poly[0], other)
        });
        if !enclosed {
            out.extend_from_slice(chain);
        }
    }
    out
}

fn polygon_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a.x * b.y - b.x * a.y
        })
        .sum::<f64>()
        / 2.0
}

/// Even-odd rule in the xy plane.
fn point_in_polygon(p: &Point, poly: &[Point]) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Keeps only the first `k` layers, as if the print had stopped there.
/// Top-layer promotion is cleared; call [`label_top_layer`] again.
pub fn truncate_to_layer(
    ct: &ClassifiedToolpath,
    k: usize,
) -> Result<ClassifiedToolpath, SemanticsError> {
    let total = ct.toolpath.layers.len();
    if k > total {
        return Err(SemanticsError::LayerOutOfRange { k, layers: total });
    }
    let end = if k == 0 {
        0
    } else {
        ct.toolpath.layers[k - 1].range.end
    };
    let toolpath = Toolpath {
        segments: ct.toolpath.segments[..end].to_vec(),
        layers: ct.toolpath.layers[..k].to_vec(),
        source_digest: ct.toolpath.source_digest.clone(),
    };
    Ok(ClassifiedToolpath {
        toolpath,
        classes: ct.structural[..end].to_vec(),
        structural: ct.structural[..end].to_vec(),
        completion_layer: k,
    })
}

/// Marks every bead of the topmost included layer as [`SemanticClass::TopLayer`].
pub fn label_top_layer(ct: &ClassifiedToolpath) -> Result<ClassifiedToolpath, SemanticsError> {
    if ct.completion_layer == 0 || ct.toolpath.segments.is_empty() {
        return Err(SemanticsError::EmptyToolpath);
    }
    let top = &ct.toolpath.layers[ct.completion_layer - 1];
    let mut out = ct.clone();
    out.classes = ct.structural.clone();
    for c in &mut out.classes[top.range.clone()] {
        *c = SemanticClass::TopLayer;
    }
    Ok(out)
}

/// Mask level of one bead under a dataset kind.
pub fn mask_level(class: SemanticClass, structural: SemanticClass, kind: DatasetKind) -> u8 {
    use SemanticClass::*;
    match kind {
        DatasetKind::WholePart => match class {
            Background => 0,
            _ => 255,
        },
        // Non-top beads are still drawn but count as background.
        DatasetKind::TopLayer => match class {
            TopLayer => 255,
            _ => 0,
        },
        DatasetKind::InternalStructure => match structural {
            Shell => 85,
            Support => 170,
            Infill | Part | TopLayer => 255,
            Background => 0,
        },
    }
}

/// Per-segment mask levels for a dataset kind.
pub fn relabel_for_dataset(ct: &ClassifiedToolpath, kind: DatasetKind) -> Vec<u8> {
    ct.classes
        .iter()
        .zip(&ct.structural)
        .map(|(&c, &s)| mask_level(c, s, kind))
        .collect()
}

impl ClassifiedToolpath {
    /// Interchange form: the toolpath schema plus `class` and `structural`
    /// columns.
    pub fn write_interchange<W: Write>(&self, w: W) -> Result<(), SemanticsError> {
        let f = |i: usize| {
            (
                self.classes[i].as_str().to_string(),
                self.structural[i].as_str().to_string(),
            )
        };
        gcode::write_records(
            &self.toolpath,
            Some((CLASSIFIED_FORMAT, self.completion_layer, &f)),
            w,
        )?;
        Ok(())
    }

    pub fn read_interchange<R: BufRead>(r: R) -> Result<ClassifiedToolpath, SemanticsError> {
        let (header, records) = gcode::read_records(r, CLASSIFIED_FORMAT)?;
        let mut classes = Vec::with_capacity(records.len());
        let mut structural = Vec::with_capacity(records.len());
        for rec in &records {
            let c = rec.class.as_deref().unwrap_or("");
            classes.push(c.parse()?);
            structural.push(rec.structural.as_deref().unwrap_or(c).parse()?);
        }
        let toolpath = gcode::toolpath_from_records(header.source_digest, &records)?;
        let completion_layer = header.completion_layer.unwrap_or(toolpath.layers.len());
        Ok(ClassifiedToolpath {
            toolpath,
            classes,
            structural,
            completion_layer,
        })
    }
}
