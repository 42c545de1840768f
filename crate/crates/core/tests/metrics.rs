use printseg::metrics::{confusion_raw, evaluate_dataset, iou_from_confusion, ConfusionMatrix, IoUReport};
use printseg::semantics::DatasetKind;
use proptest::prelude::*;

/// IoU by set arithmetic over pixel indices.
fn brute_iou(pred: &[u8], gt: &[u8], level: u8) -> Option<f64> {
    let inter = pred.iter().zip(gt).filter(|(p, g)| **p == level && **g == level).count();
    let union = pred.iter().zip(gt).filter(|(p, g)| **p == level || **g == level).count();
    (union > 0).then(|| inter as f64 / union as f64)
}

const INTERNAL: [u8; 4] = [0, 85, 170, 255];

fn mask(len: usize) -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(prop::sample::select(INTERNAL.to_vec()), len)
}

proptest! {
    #[test]
    fn iou_equals_counting(pred in mask(64), gt in mask(64)) {
        let cm = confusion_raw(&pred, &gt, &INTERNAL).unwrap();
        prop_assert_eq!(cm.total(), 64);
        for level in INTERNAL {
            prop_assert_eq!(iou_from_confusion(&cm, level).unwrap(), brute_iou(&pred, &gt, level));
            let (tp, fp, fn_) = cm.tallies(level).unwrap();
            let i = INTERNAL.iter().position(|&l| l == level).unwrap();
            let row: u64 = cm.counts[i].iter().sum();
            let col: u64 = cm.counts.iter().map(|r| r[i]).sum();
            prop_assert_eq!(tp + fn_, row);
            prop_assert_eq!(tp + fp, col);
        }
    }

    #[test]
    fn binary_iou_is_symmetric(a in prop::collection::vec(prop::bool::ANY, 50), b in prop::collection::vec(prop::bool::ANY, 50)) {
        let to = |v: &[bool]| v.iter().map(|&x| if x { 255 } else { 0 }).collect::<Vec<u8>>();
        let (a, b) = (to(&a), to(&b));
        let ab = confusion_raw(&a, &b, &[0, 255]).unwrap();
        let ba = confusion_raw(&b, &a, &[0, 255]).unwrap();
        prop_assert_eq!(iou_from_confusion(&ab, 255).unwrap(), iou_from_confusion(&ba, 255).unwrap());
    }

    #[test]
    fn accumulation_order_is_irrelevant(pairs in prop::collection::vec((mask(16), mask(16)), 1..8), seed in any::<u64>()) {
        let mats: Vec<ConfusionMatrix> = pairs.iter().map(|(p, g)| confusion_raw(p, g, &INTERNAL).unwrap()).collect();
        let mut order: Vec<usize> = (0..mats.len()).collect();
        let mut s = seed;
        for i in (1..order.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (s >> 33) as usize % (i + 1));
        }
        let fold = |idx: &mut dyn Iterator<Item = usize>| {
            let mut t = ConfusionMatrix::new(&INTERNAL);
            for i in idx {
                t.merge(&mats[i]);
            }
            IoUReport::from_confusion(DatasetKind::InternalStructure, t, mats.len())
        };
        prop_assert_eq!(fold(&mut (0..mats.len())), fold(&mut order.into_iter()));
    }
}

fn save(dir: &std::path::Path, name: &str, w: u32, px: &[u8]) {
    image::GrayImage::from_raw(w, px.len() as u32 / w, px.to_vec())
        .unwrap()
        .save(dir.join(name))
        .unwrap();
}

#[test]
fn directory_evaluation() {
    let tmp = tempfile::tempdir().unwrap();
    let (pred, gt) = (tmp.path().join("pred"), tmp.path().join("gt"));
    std::fs::create_dir_all(&pred).unwrap();
    std::fs::create_dir_all(&gt).unwrap();
    // gt: 100 px of class, pred: 50 of those plus 50 outside.
    let mut g = vec![0u8; 400];
    let mut p = vec![0u8; 400];
    g[..100].fill(255);
    p[50..150].fill(255);
    save(&gt, "a_mask.png", 20, &g);
    save(&pred, "a.png", 20, &p);
    save(&gt, "lonely_mask.png", 20, &g);
    let r = evaluate_dataset(&pred, &gt, DatasetKind::TopLayer).unwrap();
    assert_eq!(r.pairs_evaluated, 1);
    assert_eq!(r.unmatched.len(), 1);
    assert_eq!(r.per_class[1].iou, Some(50.0 / 150.0));
    // Background: 250 agreed, 50 + 50 disagreed.
    assert_eq!(r.per_class[0].iou, Some(250.0 / 350.0));
    assert_eq!(r.miou, Some((50.0 / 150.0 + 250.0 / 350.0) / 2.0));

    let same = evaluate_dataset(&gt, &gt, DatasetKind::TopLayer).unwrap();
    assert_eq!(same.miou, Some(1.0));

    save(&pred, "lonely.png", 10, &[0; 40]);
    let err = evaluate_dataset(&pred, &gt, DatasetKind::TopLayer).unwrap_err();
    assert!(err.to_string().contains("sizes differ"), "{err}");
}
