#![allow(dead_code)]

use std::path::{Path, PathBuf};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn fixture_text(name: &str) -> String {
    std::fs::read_to_string(fixture(name)).unwrap()
}

/// Line-by-line scan that knows only G0/G1, G92, M82 and M83: filament fed
/// (mm) on moves that both travel in XY and push filament forward.
pub fn filament_fed(text: &str) -> f64 {
    let (mut x, mut y, mut e) = (0.0f64, 0.0f64, 0.0f64);
    let mut relative = false;
    let mut fed = 0.0;
    for raw in text.lines() {
        let code = raw.split(';').next().unwrap().trim();
        let mut words = code.split_whitespace();
        let Some(cmd) = words.next() else { continue };
        let value = |w: &str| w[1..].parse::<f64>().unwrap();
        match cmd {
            "M82" => relative = false,
            "M83" => relative = true,
            "G92" => {
                for w in words {
                    if w.starts_with('E') {
                        e = value(w);
                    }
                }
            }
            "G0" | "G1" => {
                let (mut nx, mut ny, mut de) = (x, y, 0.0);
                for w in words {
                    match &w[..1] {
                        "X" => nx = value(w),
                        "Y" => ny = value(w),
                        "E" if relative => de = value(w),
                        "E" => {
                            de = value(w) - e;
                            e = value(w);
                        }
                        _ => {}
                    }
                }
                if de > 0.0 && (nx != x || ny != y) {
                    fed += de;
                }
                x = nx;
                y = ny;
            }
            _ => {}
        }
    }
    fed
}

pub fn layer_comments(text: &str) -> usize {
    text.lines().filter(|l| l.trim_start().starts_with(";LAYER:")).count()
}
