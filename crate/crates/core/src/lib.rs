//! Synthetic, pixel-exact segmentation datasets from sliced G-code.
//!
//! The pipeline runs in stages, each in its own module:
//!
//! * [`gcode`] parses Marlin-flavor G-code into planar extrusion segments
//!   grouped by layer.
//! * [`semantics`] labels every bead (shell, infill, support, top layer) and
//!   simulates partial completion of a print.
//! * [`scene`] samples seeded camera/light/bed setups and interpolates them
//!   between animation keyframes.
//! * [`raster`] ray casts the beads as vertically squashed capsules and writes
//!   an aligned color image and grayscale label mask.
//! * [`dataset`] batches all of the above over a directory of G-code files and
//!   writes a verifiable manifest.
//! * [`metrics`] scores predicted masks against ground truth (IoU / mIoU).
//! * [`jobstats`] analyzes print-job logs: failure rates, runtimes, and the
//!   vocabulary of file names.
//!
//! ```
//! use printseg::gcode::{toolpath_from_str, SlicingConfig};
//! use printseg::semantics::{classify_segments, SemanticClass};
//!
//! let text = "G28\nG1 Z0.3\n;TYPE:WALL-OUTER\nG1 X2 E0.0998\n";
//! let toolpath = toolpath_from_str(text, &SlicingConfig::default()).unwrap();
//! assert_eq!(toolpath.layers.len(), 1);
//! assert!((toolpath.segments[0].width - 0.4).abs() < 1e-3);
//!
//! let classified = classify_segments(&toolpath);
//! assert_eq!(classified.classes, vec![SemanticClass::Shell]);
//! ```

pub mod dataset;
pub mod fsutil;
pub mod gcode;
pub mod geom;
pub mod jobstats;
pub mod metrics;
pub mod raster;
pub mod rng;
pub mod scene;
pub mod semantics;

/// Hex-encoded SHA-256 of a byte slice.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}
