mod common;

use std::path::Path;

use printseg::dataset::{
    generate_dataset, histogram, regenerate_entry, validate_manifest, DatasetConfig, DatasetError, Manifest, Model,
};
use printseg::fsutil::encode_png;
use printseg::raster::TextureBank;
use printseg::semantics::DatasetKind;

use common::fixture;

fn config(kind: DatasetKind) -> DatasetConfig {
    DatasetConfig {
        kind,
        frames_per_model: 3,
        completion_levels: vec![0.5, 1.0],
        resolution: [48, 40],
        master_seed: 99,
        keyframe_interval: 2,
        ..DatasetConfig::default()
    }
}

fn inputs(dir: &Path, with_broken: bool) {
    for name in ["cube_3mm.gcode", "ring_6mm.gcode"] {
        std::fs::copy(fixture(name), dir.join(name)).unwrap();
    }
    if with_broken {
        // Extrudes before the position is known.
        std::fs::write(dir.join("broken.gcode"), "G1 X5 Y5 E1\n").unwrap();
    }
    std::fs::write(dir.join("notes.txt"), "not g-code").unwrap();
}

#[test]
fn generates_validates_and_detects_tampering() {
    let tmp = tempfile::tempdir().unwrap();
    let (src, out) = (tmp.path().join("in"), tmp.path().join("out"));
    std::fs::create_dir_all(&src).unwrap();
    inputs(&src, true);
    let cfg = config(DatasetKind::InternalStructure);
    let summary = generate_dataset(&src, &out, &cfg, 2).unwrap();
    let m = &summary.manifest;
    assert_eq!(m.entries.len(), 2 * 2 * 3);
    assert_eq!(m.header.pairs, 12);
    assert_eq!(m.errors.len(), 1);
    assert_eq!(m.errors[0].source, "broken.gcode");
    assert_eq!(summary.dir, out.join("internal"));
    assert_eq!(Manifest::load(&summary.manifest_path).unwrap(), *m);

    let report = validate_manifest(&summary.manifest_path).unwrap();
    assert!(report.passed(), "{report:?}");

    for e in &m.entries {
        let mask = image::open(summary.dir.join(&e.mask)).unwrap().to_luma8();
        assert_eq!(mask.dimensions(), (48, 40));
        assert_eq!(histogram(mask.as_raw()), e.histogram);
        assert!(e.histogram.keys().all(|v| cfg.kind.palette().contains(v)));
        assert_eq!(e.histogram.values().sum::<u64>(), 48 * 40);
    }

    // One flipped byte fails exactly that entry's hash check.
    let victim = summary.dir.join(&m.entries[3].mask);
    let mut bytes = std::fs::read(&victim).unwrap();
    let last = bytes.len() - 5;
    bytes[last] ^= 0xff;
    std::fs::write(&victim, &bytes).unwrap();
    // A mask rewritten with an off-palette level fails closure.
    let other = &m.entries[5];
    let mut bad = image::open(summary.dir.join(&other.mask)).unwrap().to_luma8();
    bad.put_pixel(0, 0, image::Luma([7]));
    bad.save(summary.dir.join(&other.mask)).unwrap();
    // A missing image is reported, not raised.
    std::fs::remove_file(summary.dir.join(&m.entries[7].image)).unwrap();

    let report = validate_manifest(&summary.manifest_path).unwrap();
    assert!(!report.passed());
    assert_eq!(report.failed_entries(), 3);
    let fails = |i: usize| report.entries[i].failures.join("\n");
    assert!(fails(3).contains("hash mismatch"), "{}", fails(3));
    assert!(fails(5).contains("outside"), "{}", fails(5));
    assert!(fails(7).contains(&m.entries[7].image), "{}", fails(7));
}

#[test]
fn deleted_frame_regenerates_byte_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let (src, out) = (tmp.path().join("in"), tmp.path().join("out"));
    std::fs::create_dir_all(&src).unwrap();
    inputs(&src, false);
    let cfg = config(DatasetKind::TopLayer);
    let summary = generate_dataset(&src, &out, &cfg, 1).unwrap();
    let textures = TextureBank::load(&cfg.scene).unwrap();
    for e in summary.manifest.entries.iter().step_by(5) {
        std::fs::remove_file(summary.dir.join(&e.image)).unwrap();
        std::fs::remove_file(summary.dir.join(&e.mask)).unwrap();
        let model = Model::load(&src.join(&e.source), &cfg.slicing).unwrap();
        let frame = regenerate_entry(e, &model, &cfg, Some(&textures)).unwrap();
        let img = frame.pair.image;
        let mask = frame.pair.mask;
        let png = encode_png(img.as_raw(), img.width(), img.height(), image::ExtendedColorType::Rgb8).unwrap();
        let mpng = encode_png(mask.as_raw(), mask.width(), mask.height(), image::ExtendedColorType::L8).unwrap();
        assert_eq!(printseg::sha256_hex(&png), e.image_sha256);
        assert_eq!(printseg::sha256_hex(&mpng), e.mask_sha256);
        assert_eq!(frame.attempts, e.attempts);
    }
}

#[test]
fn thread_count_does_not_change_output() {
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("in");
    std::fs::create_dir_all(&src).unwrap();
    inputs(&src, true);
    let cfg = config(DatasetKind::WholePart);
    let a = generate_dataset(&src, &tmp.path().join("a"), &cfg, 1).unwrap();
    let b = generate_dataset(&src, &tmp.path().join("b"), &cfg, 4).unwrap();
    assert_eq!(std::fs::read(&a.manifest_path).unwrap(), std::fs::read(&b.manifest_path).unwrap());
}

#[test]
fn input_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    let cfg = config(DatasetKind::WholePart);
    assert!(matches!(
        generate_dataset(&empty, &tmp.path().join("o"), &cfg, 1),
        Err(DatasetError::NoInputs(_))
    ));
    std::fs::write(empty.join("bad.gcode"), "G2 X1 Y1 I1 J0\n").unwrap();
    assert!(matches!(
        generate_dataset(&empty, &tmp.path().join("o"), &cfg, 1),
        Err(DatasetError::NoUsableModels(_))
    ));
    assert!(generate_dataset(&tmp.path().join("nope"), &tmp.path().join("o"), &cfg, 1).is_err());
    let bad = DatasetConfig {
        completion_levels: vec![1.0, 0.5],
        ..cfg
    };
    assert!(matches!(
        generate_dataset(&empty, &tmp.path().join("o"), &bad, 1),
        Err(DatasetError::Config(_))
    ));
}

#[test]
fn config_from_toml() {
    let text = r#"
        kind = "top_layer"
        frames_per_model = 7
        completion_levels = [0.25, 0.5, 1.0]
        resolution = [320, 240]
        master_seed = 5

        [slicing]
        layer_height = 0.2

        [scene.camera]
        radius = { min = 100.0, max = 120.0 }

        [scene.background]
        colors = [[0.5, 0.5, 0.5]]
    "#;
    let cfg = DatasetConfig::from_toml_str(text).unwrap();
    assert_eq!(cfg.kind, DatasetKind::TopLayer);
    assert_eq!(cfg.frames_per_model, 7);
    assert_eq!(cfg.slicing.layer_height, 0.2);
    assert_eq!(cfg.slicing.filament_diameter, 1.75);
    assert_eq!(cfg.scene.camera.radius.max, 120.0);
    // Unset background keys keep the background defaults.
    let defaults = DatasetConfig::default().scene.background;
    assert_eq!(cfg.scene.background.colors, vec![[0.5, 0.5, 0.5]]);
    assert_eq!(cfg.scene.background.textures, defaults.textures);
    assert!(DatasetConfig::from_toml_str("[scene.background]\nshiny = 1").is_err());
    cfg.validate().unwrap();
    assert!(DatasetConfig::from_toml_str("frames = 3").is_err());
}
