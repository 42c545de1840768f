//! Intersection-over-union scoring of predicted masks.
//!
//! Pixels are accumulated into one confusion matrix over all evaluated pairs
//! (micro averaging). mIoU is the mean over the classes that occur in either
//! the ground truth or the prediction; absent classes are left out.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::semantics::{DatasetKind, SemanticClass};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("mask sizes differ: prediction {pred:?}, ground truth {gt:?}")]
    DimensionMismatch { pred: (u32, u32), gt: (u32, u32) },
    #[error("{which} contains value {value}, which is not in the palette {palette:?}")]
    OutOfPalette {
        which: &'static str,
        value: u8,
        palette: Vec<u8>,
    },
    #[error("class level {0} is not part of this matrix")]
    UnknownClass(u8),
    #[error("{path}: {message}")]
    Read { path: PathBuf, message: String },
}

/// Rows are ground truth, columns are prediction, both in palette order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<u8>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: &[u8]) -> Self {
        ConfusionMatrix {
            classes: classes.to_vec(),
            counts: vec![vec![0; classes.len()]; classes.len()],
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    fn index(&self, level: u8) -> Result<usize, MetricsError> {
        self.classes
            .iter()
            .position(|&c| c == level)
            .ok_or(MetricsError::UnknownClass(level))
    }

    /// Adds another matrix over the same classes.
    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.classes, other.classes, "merging matrices over different classes");
        for (row, orow) in self.counts.iter_mut().zip(&other.counts) {
            for (c, o) in row.iter_mut().zip(orow) {
                *c += o;
            }
        }
    }

    /// (true positives, false positives, false negatives) for one class.
    pub fn tallies(&self, level: u8) -> Result<(u64, u64, u64), MetricsError> {
        let i = self.index(level)?;
        let tp = self.counts[i][i];
        let row: u64 = self.counts[i].iter().sum();
        let col: u64 = self.counts.iter().map(|r| r[i]).sum();
        Ok((tp, col - tp, row - tp))
    }
}

/// Per-pixel confusion between `pred` and `gt`, both given as raw grayscale
/// levels of the same `(width, height)`.
pub fn confusion(
    pred: &image::GrayImage,
    gt: &image::GrayImage,
    palette: &[u8],
) -> Result<ConfusionMatrix, MetricsError> {
    if pred.dimensions() != gt.dimensions() {
        return Err(MetricsError::DimensionMismatch {
            pred: pred.dimensions(),
            gt: gt.dimensions(),
        });
    }
    confusion_raw(pred.as_raw(), gt.as_raw(), palette)
}

pub fn confusion_raw(pred: &[u8], gt: &[u8], palette: &[u8]) -> Result<ConfusionMatrix, MetricsError> {
    assert_eq!(pred.len(), gt.len());
    let mut lut = [usize::MAX; 256];
    for (i, &c) in palette.iter().enumerate() {
        lut[c as usize] = i;
    }
    let mut cm = ConfusionMatrix::new(palette);
    for (&p, &g) in pred.iter().zip(gt) {
        let (pi, gi) = (lut[p as usize], lut[g as usize]);
        if gi == usize::MAX {
            return Err(out_of_palette("ground truth", g, palette));
        }
        if pi == usize::MAX {
            return Err(out_of_palette("prediction", p, palette));
        }
        cm.counts[gi][pi] += 1;
    }
    Ok(cm)
}

fn out_of_palette(which: &'static str, value: u8, palette: &[u8]) -> MetricsError {
    MetricsError::OutOfPalette {
        which,
        value,
        palette: palette.to_vec(),
    }
}

/// `TP / (TP + FP + FN)`, or `None` when the class occurs in neither mask.
pub fn iou_from_confusion(cm: &ConfusionMatrix, level: u8) -> Result<Option<f64>, MetricsError> {
    let (tp, fp, fn_) = cm.tallies(level)?;
    let denom = tp + fp + fn_;
    Ok((denom > 0).then(|| tp as f64 / denom as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassIoU {
    pub level: u8,
    pub class: SemanticClass,
    /// `None` when the class is absent from every evaluated pair.
    pub iou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IoUReport {
    pub kind: DatasetKind,
    pub per_class: Vec<ClassIoU>,
    /// Mean over present classes; `None` when nothing was evaluated.
    pub miou: Option<f64>,
    pub pairs_evaluated: usize,
    pub confusion: ConfusionMatrix,
    /// Files with no counterpart in the other directory.
    pub unmatched: Vec<String>,
}

impl IoUReport {
    pub fn from_confusion(kind: DatasetKind, cm: ConfusionMatrix, pairs: usize) -> IoUReport {
        let per_class: Vec<ClassIoU> = cm
            .classes
            .iter()
            .map(|&level| ClassIoU {
                level,
                class: kind.class_of_level(level).expect("palette level has a class"),
                iou: iou_from_confusion(&cm, level).expect("class from the matrix"),
            })
            .collect();
        let present: Vec<f64> = per_class.iter().filter_map(|c| c.iou).collect();
        let miou = (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64);
        IoUReport {
            kind,
            per_class,
            miou,
            pairs_evaluated: pairs,
            confusion: cm,
            unmatched: Vec::new(),
        }
    }

    pub fn iou_of(&self, class: SemanticClass) -> Option<f64> {
        self.per_class.iter().find(|c| c.class == class).and_then(|c| c.iou)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Column order of the results table.
pub const TABLE_COLUMNS: [(SemanticClass, &str); 6] = [
    (SemanticClass::Background, "Background"),
    (SemanticClass::Part, "Part"),
    (SemanticClass::TopLayer, "Top layer"),
    (SemanticClass::Shell, "Shell"),
    (SemanticClass::Support, "Support"),
    (SemanticClass::Infill, "Infill"),
];

/// Percentages with two decimals; `-` where a class does not apply.
pub fn format_table(rows: &[(&str, &IoUReport)]) -> String {
    let mut header = vec!["Dataset"];
    header.extend(TABLE_COLUMNS.iter().map(|c| c.1));
    header.push("mIoU");
    let pct = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{:.2}", v * 100.0));
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(name, r)| {
            let mut cells = vec![name.to_string()];
            cells.extend(TABLE_COLUMNS.iter().map(|(c, _)| pct(r.iou_of(*c))));
            cells.push(pct(r.miou));
            cells
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|i| body.iter().map(|r| r[i].len()).chain([header[i].len()]).max().unwrap())
        .collect();
    let mut out = String::new();
    let mut line = |cells: &[&str]| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        let _ = writeln!(out, "| {} |", padded.join(" | "));
    };
    line(&header);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    line(&rule.iter().map(String::as_str).collect::<Vec<_>>());
    for r in &body {
        line(&r.iter().map(String::as_str).collect::<Vec<_>>());
    }
    out
}

/// Mask key: file stem with a trailing `_mask` removed.
pub fn mask_key(path: &Path) -> Option<String> {
    let stem = path.file_stem()?.to_str()?;
    Some(stem.strip_suffix("_mask").unwrap_or(stem).to_string())
}

fn png_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>, MetricsError> {
    let rd = std::fs::read_dir(dir).map_err(|e| MetricsError::Read {
        path: dir.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut out = BTreeMap::new();
    for entry in rd.flatten() {
        let p = entry.path();
        let is_png = p
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if p.is_file() && is_png {
            if let Some(k) = mask_key(&p) {
                out.insert(k, p);
            }
        }
    }
    Ok(out)
}

fn load_mask(path: &Path) -> Result<image::GrayImage, MetricsError> {
    let img = image::open(path).map_err(|e| MetricsError::Read {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(img.to_luma8())
}

/// Pairs masks of `pred_dir` and `gt_dir` by key and scores them together.
pub fn evaluate_dataset(
    pred_dir: &Path,
    gt_dir: &Path,
    kind: DatasetKind,
) -> Result<IoUReport, MetricsError> {
    let pred = png_files(pred_dir)?;
    let gt = png_files(gt_dir)?;
    let mut unmatched: Vec<String> = Vec::new();
    for (k, p) in &pred {
        if !gt.contains_key(k) {
            unmatched.push(p.display().to_string());
        }
    }
    for (k, p) in &gt {
        if !pred.contains_key(k) {
            unmatched.push(p.display().to_string());
        }
    }
    let pairs: Vec<(&PathBuf, &PathBuf)> = gt
        .iter()
        .filter_map(|(k, g)| pred.get(k).map(|p| (p, g)))
        .collect();
    let palette = kind.palette();
    let matrices = pairs
        .par_iter()
        .map(|(p, g)| {
            let cm = confusion(&load_mask(p)?, &load_mask(g)?, palette);
            cm.map_err(|e| MetricsError::Read {
                path: (*p).clone(),
                message: e.to_string(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut total = ConfusionMatrix::new(palette);
    for m in &matrices {
        total.merge(m);
    }
    let mut report = IoUReport::from_confusion(kind, total, pairs.len());
    report.unmatched = unmatched;
    Ok(report)
}
