//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! hard criterion fails. Run with `cargo test --test acceptance`.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::{Isometry3, Point3, Vector3};
use printseg::dataset::{generate_dataset, render_item, validate_manifest, DatasetConfig, Model};
use printseg::gcode::{toolpath_from_str, SlicingConfig};
use printseg::geom::{Point, Ray, Vector};
use printseg::jobstats::{failure_rate, load_jobs, word_frequency, WordCount};
use printseg::metrics::{confusion_raw, iou_from_confusion, ConfusionMatrix, IoUReport};
use printseg::raster::{decode_flat_id, project, raycast_capsule, render_buffers, CapsulePrimitive, RenderOptions};
use printseg::rng::SceneRng;
use printseg::scene::{sample_scene, Camera, SceneRanges};
use printseg::semantics::{classify_segments, label_top_layer, truncate_to_layer, DatasetKind};

use common::{filament_fed, fixture, fixture_text, layer_comments};

const VOLUME_TOLERANCE: f64 = 0.005;
const PARSE_LIMIT: Duration = Duration::from_secs(1);
const FLAT_ID_LIMIT: Duration = Duration::from_secs(120);
const DETERMINISM_LIMIT: Duration = Duration::from_secs(300);
const PROJECTION_TOLERANCE_PX: f64 = 1e-6;
const RAY_TOLERANCE_MM: f64 = 1e-6;
const PRESET_FRAME_LIMIT: Duration = Duration::from_secs(60);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn parser_fixture() -> Outcome {
    let text = fixture_text("cube_3mm.gcode");
    let cfg = SlicingConfig::default();
    let start = Instant::now();
    let tp = toolpath_from_str(&text, &cfg).unwrap();
    let elapsed = start.elapsed();
    let comments = layer_comments(&text);
    let expected = filament_fed(&text) * cfg.filament_area();
    let rel = (tp.extruded_volume() - expected).abs() / expected;
    outcome(
        tp.layer_count() == 10 && comments == 10 && rel <= VOLUME_TOLERANCE && elapsed < PARSE_LIMIT,
        format!(
            "{} layers ({} layer comments), volume error {:.4}% (limit 0.5%), {:?} (limit 1 s)",
            tp.layer_count(),
            comments,
            rel * 100.0,
            elapsed
        ),
    )
}

fn flat_id_oracle() -> Outcome {
    let ranges = SceneRanges {
        resolution: [256, 256],
        ..SceneRanges::default()
    };
    let start = Instant::now();
    let (mut mismatched, mut labeled, mut scenes) = (0usize, 0usize, 0usize);
    for name in ["cube_3mm.gcode", "ring_6mm.gcode"] {
        let full = classify_segments(&toolpath_from_str(&fixture_text(name), &SlicingConfig::default()).unwrap());
        let layers = full.toolpath.layer_count();
        for seed in 0..20u64 {
            let kind = DatasetKind::ALL[seed as usize % 3];
            let k = 1 + (seed as usize * 7) % layers;
            let ct = label_top_layer(&truncate_to_layer(&full, k).unwrap()).unwrap();
            let scene = sample_scene(seed, &ranges, &ct.toolpath.bounds()).unwrap();
            let shaded = render_buffers(&scene, &ct, kind, &RenderOptions::default()).unwrap();
            let flat = render_buffers(
                &scene,
                &ct,
                kind,
                &RenderOptions {
                    flat_id: true,
                    ..Default::default()
                },
            )
            .unwrap();
            mismatched += flat
                .color
                .iter()
                .zip(&shaded.label)
                .filter(|(c, l)| decode_flat_id(**c) != Some(**l))
                .count();
            labeled += shaded.label.iter().filter(|&&l| l != 0).count();
            scenes += 1;
        }
    }
    let elapsed = start.elapsed();
    outcome(
        mismatched == 0 && labeled > 0 && elapsed < FLAT_ID_LIMIT,
        format!(
            "{scenes} scenes at 256x256, {mismatched} mismatched pixels, {labeled} labeled pixels, {elapsed:?} (limit 2 min)"
        ),
    )
}

fn small_dataset_config(kind: DatasetKind) -> DatasetConfig {
    DatasetConfig {
        kind,
        frames_per_model: 5,
        completion_levels: vec![0.33, 1.0],
        resolution: [256, 256],
        master_seed: 2024,
        ..DatasetConfig::default()
    }
}

fn dataset_inputs(dir: &Path) {
    std::fs::create_dir_all(dir).unwrap();
    for name in ["cube_3mm.gcode", "ring_6mm.gcode"] {
        std::fs::copy(fixture(name), dir.join(name)).unwrap();
    }
}

/// Every file under `dir`, relative path → bytes, sorted.
fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("in");
    dataset_inputs(&src);
    let cfg = small_dataset_config(DatasetKind::InternalStructure);
    let start = Instant::now();
    let runs: Vec<_> = [("a", 1), ("b", 1), ("c", 8)]
        .iter()
        .map(|(name, jobs)| {
            let out = tmp.path().join(name);
            generate_dataset(&src, &out, &cfg, *jobs).unwrap();
            tree(&out)
        })
        .collect();
    let elapsed = start.elapsed();
    let files = runs[0].len();
    let same_twice = runs[0] == runs[1];
    let same_jobs = runs[0] == runs[2];
    outcome(
        same_twice && same_jobs && files == 41 && elapsed < DETERMINISM_LIMIT,
        format!(
            "{files} files per run; repeat identical: {same_twice}; --jobs 1 vs 8 identical: {same_jobs}; {elapsed:?} for 3 runs (limit 5 min)"
        ),
    )
}

fn metrics_oracle() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    let mut check = |name: &str, cond: bool| {
        if !cond {
            notes.push(name.to_string());
            ok = false;
        }
    };
    // 4x4, palette {0, 85, 170, 255}, hand-counted matrix.
    #[rustfmt::skip]
    let gt: [u8; 16] = [
        0,   0,   85,  85,
        0,   170, 170, 85,
        255, 255, 170, 0,
        255, 255, 0,   0,
    ];
    #[rustfmt::skip]
    let pred: [u8; 16] = [
        0,   85,  85,  85,
        0,   170, 0,   85,
        255, 170, 170, 0,
        255, 255, 255, 0,
    ];
    let pal = [0, 85, 170, 255];
    let cm = confusion_raw(&pred, &gt, &pal).unwrap();
    let hand: Vec<Vec<u64>> = vec![
        // gt 0: pred 0 x4, pred 85 x1, pred 255 x1
        vec![4, 1, 0, 1],
        // gt 85: all three predicted 85
        vec![0, 3, 0, 0],
        // gt 170: one predicted 0, two 170
        vec![1, 0, 2, 0],
        // gt 255: one predicted 170, three 255
        vec![0, 0, 1, 3],
    ];
    check("4x4 confusion", cm.counts == hand);
    check("4x4 shell IoU 3/4", iou_from_confusion(&cm, 85).unwrap() == Some(3.0 / 4.0));
    check("4x4 support IoU 2/4", iou_from_confusion(&cm, 170).unwrap() == Some(2.0 / 4.0));
    check("4x4 infill IoU 3/5", iou_from_confusion(&cm, 255).unwrap() == Some(3.0 / 5.0));
    check("4x4 background IoU 4/7", iou_from_confusion(&cm, 0).unwrap() == Some(4.0 / 7.0));

    let id = confusion_raw(&gt, &gt, &pal).unwrap();
    check(
        "identity",
        pal.iter().all(|&l| iou_from_confusion(&id, l).unwrap() == Some(1.0)),
    );
    let a = [255u8, 255, 0, 0];
    let b = [0u8, 0, 255, 255];
    check(
        "disjoint",
        iou_from_confusion(&confusion_raw(&a, &b, &[0, 255]).unwrap(), 255).unwrap() == Some(0.0),
    );
    let mut g = vec![0u8; 200];
    let mut p = vec![0u8; 200];
    g[..100].fill(255);
    p[50..150].fill(255);
    let third = iou_from_confusion(&confusion_raw(&p, &g, &[0, 255]).unwrap(), 255).unwrap();
    check("100 px half overlap", third == Some(50.0 / 150.0));

    let mut rng = SceneRng::new(4);
    let masks: Vec<(Vec<u8>, Vec<u8>)> = (0..12)
        .map(|_| {
            let m = |rng: &mut SceneRng| (0..64).map(|_| pal[rng.index(4)]).collect::<Vec<u8>>();
            (m(&mut rng), m(&mut rng))
        })
        .collect();
    let report = |order: &[usize]| {
        let mut t = ConfusionMatrix::new(&pal);
        for &i in order {
            t.merge(&confusion_raw(&masks[i].0, &masks[i].1, &pal).unwrap());
        }
        IoUReport::from_confusion(DatasetKind::InternalStructure, t, order.len())
    };
    let forward: Vec<usize> = (0..12).collect();
    let base = report(&forward);
    let mut perm_ok = true;
    for _ in 0..50 {
        let mut o = forward.clone();
        for i in (1..o.len()).rev() {
            o.swap(i, rng.index(i + 1));
        }
        perm_ok &= report(&o) == base;
    }
    check("permutation invariance", perm_ok);
    let detail = if ok {
        "4x4 matrix and IoUs, identity 1.0, disjoint 0.0, 50/150 = 1/3, 50 permutations unchanged".to_string()
    } else {
        format!("failed: {}", notes.join(", "))
    };
    outcome(ok, detail)
}

fn cardinality_and_closure() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("in");
    dataset_inputs(&src);
    let mut lines = Vec::new();
    let mut ok = true;
    for kind in DatasetKind::ALL {
        let cfg = small_dataset_config(kind);
        let summary = generate_dataset(&src, &tmp.path().join("out"), &cfg, 2).unwrap();
        let m = &summary.manifest;
        let mut closed = true;
        let mut recount = true;
        for e in &m.entries {
            let mask = image::open(summary.dir.join(&e.mask)).unwrap().to_luma8();
            let mut counts = std::collections::BTreeMap::new();
            for &v in mask.as_raw() {
                *counts.entry(v).or_insert(0u64) += 1;
                closed &= kind.palette().contains(&v);
            }
            recount &= counts == e.histogram;
        }
        let valid = validate_manifest(&summary.manifest_path).unwrap().passed();
        let pass = m.entries.len() == 2 * 2 * 5 && closed && recount && valid;
        ok &= pass;
        lines.push(format!(
            "{}: {} pairs, palette closed {closed}, histograms match {recount}, validator {valid}",
            kind.slug(),
            m.entries.len()
        ));
    }
    outcome(ok, lines.join("; "))
}

fn jobstats_fixture() -> Outcome {
    // 600 jobs over 5 minutes with 144 canceled; 400 short jobs, half canceled.
    let mut csv = String::from("filename,duration_s,canceled\n");
    for i in 0..1000 {
        let (dur, canceled) = if i < 600 {
            (301.0 + (i * 37 % 20000) as f64, i % 25 < 6)
        } else {
            ((i % 300) as f64, i % 2 == 0)
        };
        csv += &format!("part_{i}.gcode,{dur},{canceled}\n");
    }
    let log = load_jobs(csv.as_bytes()).unwrap();
    let r = failure_rate(&log.jobs, 300.0);
    let pct = format!("{:.1}", r.rate.unwrap_or(f64::NAN) * 100.0);
    let rate_ok = log.jobs.len() == 1000 && r.canceled == 144 && r.total == 600 && r.canceled * 100 == 24 * r.total;
    let wc = |t: &str, c: usize| WordCount {
        token: t.into(),
        count: c,
    };
    let tokens_ok = word_frequency(&["Dragon_v2.stl", "dragon-final.gcode"], 25) == vec![wc("dragon", 2), wc("final", 1)]
        && word_frequency(&["a.stl"], 25).is_empty()
        && word_frequency(&["CubeStand.stl"], 25) == vec![wc("cube", 1), wc("stand", 1)];
    outcome(
        rate_ok && pct == "24.0" && tokens_ok,
        format!(
            "{} rows, {}/{} canceled over 5 min = {pct}%, {} short jobs excluded; tokenizer fixtures {}",
            log.jobs.len(),
            r.canceled,
            r.total,
            r.excluded,
            if tokens_ok { "match" } else { "differ" }
        ),
    )
}

fn unit(rng: &mut SceneRng) -> Vector {
    loop {
        let v = Vector::new(rng.unit() * 2.0 - 1.0, rng.unit() * 2.0 - 1.0, rng.unit() * 2.0 - 1.0);
        if v.norm() > 0.1 && v.norm() <= 1.0 {
            return v.normalize();
        }
    }
}

/// Pinhole reference built from nalgebra's right-handed view isometry.
fn reference_projection(cam: &Camera, p: &Point) -> Option<(f64, f64)> {
    let view = Isometry3::look_at_rh(&cam.position, &cam.look_at, &cam.up);
    let q: Point3<f64> = view * p;
    let depth = -q.z;
    if depth <= 0.0 {
        return None;
    }
    let f = cam.height as f64 / 2.0 / (cam.vertical_fov.to_radians() / 2.0).tan();
    Some((
        cam.width as f64 / 2.0 + f * q.x / depth,
        cam.height as f64 / 2.0 - f * q.y / depth,
    ))
}

/// Implicit bead surface: distance to the axis after undoing the vertical
/// squash, minus the radius.
fn capsule_field(c: &CapsulePrimitive, p: &Point) -> f64 {
    let zc = (c.a.z + c.b.z) / 2.0;
    let q = Vector3::new(p.x, p.y, zc + (p.z - zc) / c.vertical_scale);
    let a = c.a.coords;
    let ab = c.b.coords - a;
    let h = ((q - a).dot(&ab) / ab.dot(&ab)).clamp(0.0, 1.0);
    (q - (a + ab * h)).norm() - c.radius
}

/// First entry of the ray into the solid by marching then bisecting.
fn numeric_root(c: &CapsulePrimitive, ray: &Ray, t_max: f64) -> Option<f64> {
    let step = 1e-3;
    let mut t0 = 0.0;
    if capsule_field(c, &ray.at(0.0)) <= 0.0 {
        return None;
    }
    while t0 < t_max {
        let t1 = t0 + step;
        if capsule_field(c, &ray.at(t1)) <= 0.0 {
            let (mut lo, mut hi) = (t0, t1);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if capsule_field(c, &ray.at(mid)) > 0.0 {
                    lo = mid
                } else {
                    hi = mid
                }
            }
            return Some(0.5 * (lo + hi));
        }
        t0 = t1;
    }
    None
}

fn geometry_oracles() -> Outcome {
    let mut rng = SceneRng::new(77);
    let mut worst_px = 0.0f64;
    let mut projected = 0;
    for _ in 0..10_000 {
        let cam = Camera {
            position: Point::from(unit(&mut rng) * (50.0 + 100.0 * rng.unit())),
            look_at: Point::from(unit(&mut rng) * 5.0),
            up: Vector::z(),
            vertical_fov: 30.0 + 30.0 * rng.unit(),
            width: 320,
            height: 240,
        };
        let p = Point::from(unit(&mut rng) * 40.0 * rng.unit());
        match (project(&cam, &p), reference_projection(&cam, &p)) {
            (Some(a), Some((u, v))) => {
                worst_px = worst_px.max((a.u - u).abs()).max((a.v - v).abs());
                projected += 1;
            }
            (None, None) => {}
            _ => worst_px = f64::INFINITY,
        }
    }
    let mut worst_mm = 0.0f64;
    let mut hits = 0;
    let mut disagreements = 0;
    for i in 0..1_000 {
        let center = Point::new(rng.unit() * 10.0, rng.unit() * 10.0, rng.unit() * 3.0);
        let dir = unit(&mut rng);
        let len = 0.5 + 5.0 * rng.unit();
        let cap = CapsulePrimitive {
            a: center - Vector::new(dir.x, dir.y, 0.0) * len,
            b: center + Vector::new(dir.x, dir.y, 0.0) * len,
            radius: 0.1 + 0.5 * rng.unit(),
            vertical_scale: 0.2 + 0.8 * rng.unit(),
            class_label: 255,
            color: [0.5; 3],
        };
        // Most rays aim at a point on the axis; the rest at random nearby points.
        let along = rng.unit();
        let target = if i % 10 == 0 {
            center + unit(&mut rng) * 4.0
        } else {
            cap.a + (cap.b - cap.a) * along
        };
        let origin = target + unit(&mut rng) * (5.0 + 20.0 * rng.unit());
        let ray = Ray::new(origin, (target - origin).normalize());
        let t_max = (target - origin).norm() + 20.0;
        match (raycast_capsule(&ray, &cap), numeric_root(&cap, &ray, t_max)) {
            (Some(h), Some(t)) => {
                worst_mm = worst_mm.max((h.t - t).abs());
                hits += 1;
            }
            (None, None) => {}
            _ => disagreements += 1,
        }
    }
    outcome(
        worst_px <= PROJECTION_TOLERANCE_PX && worst_mm <= RAY_TOLERANCE_MM && disagreements == 0,
        format!(
            "projection: {projected} of 10000 points in front of camera, max error {worst_px:.2e} px (limit 1e-6); \
             ray-capsule: {hits} hits of 1000 rays, max error {worst_mm:.2e} mm (limit 1e-6), {disagreements} hit/miss disagreements"
        ),
    )
}

fn preset_smoke() -> Outcome {
    let cfg = DatasetConfig::large_preset(DatasetKind::InternalStructure);
    let model = Model::load(&fixture("ring_6mm.gcode"), &cfg.slicing).unwrap();
    let start = Instant::now();
    let frame = render_item(&model, 1, 0, &cfg, None).unwrap();
    let elapsed = start.elapsed();
    let (w, h) = frame.pair.image.dimensions();
    outcome(
        (w, h) == (1024, 1024) && elapsed < PRESET_FRAME_LIMIT,
        format!("{w}x{h} frame with shadows in {elapsed:?} (informational bound 60 s)"),
    )
}

fn main() {
    // `cargo test -- --list` and filters are not meaningful for this target.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let criteria: [(&str, fn() -> Outcome, bool); 8] = [
        ("1 parser fixture", parser_fixture, true),
        ("2 flat-ID render oracle", flat_id_oracle, true),
        ("3 determinism", determinism, true),
        ("4 metrics oracle", metrics_oracle, true),
        ("5 cardinality and palette closure", cardinality_and_closure, true),
        ("6 jobstats fixture", jobstats_fixture, true),
        ("7 projection and ray-capsule oracles", geometry_oracles, true),
        ("8 full-size preset smoke test", preset_smoke, false),
    ];
    let mut failed = 0;
    for (name, run, hard) in criteria {
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let tag = match (result.pass, hard) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "WARN",
        };
        println!("{tag} criterion {name}: {}", result.detail);
        if !result.pass && hard {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
