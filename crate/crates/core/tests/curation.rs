use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use aerothreat::curation::{
    balance_by_augmentation, dedupe, ingest_source, stratified_split, AffineTransform,
    AugmentationParams, SourceSpec, SplitConfig,
};
use aerothreat::curation::preprocess::load_preprocessed;
use aerothreat::{CategoryLabel, DatasetManifest, ImageRecord, LabelSpace, NumericArray, Provenance, Split};
use image::{Rgb, RgbImage};
use proptest::prelude::*;

fn solid(dir: &Path, name: &str, rgb: [u8; 3]) -> PathBuf {
    let path = dir.join(name);
    RgbImage::from_pixel(32, 32, Rgb(rgb)).save(&path).unwrap();
    path
}

fn record(id: &str, category: &str) -> ImageRecord {
    ImageRecord {
        id: id.into(),
        source_dataset: "s".into(),
        path: PathBuf::from(format!("{id}.png")),
        width: 32,
        height: 32,
        category: category.into(),
        threat: None,
        attributes: vec![],
        provenance: Provenance::Original,
        parent_id: None,
        augmentation_desc: None,
        content_hash: String::new(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// `n` images, `k` of which are byte-identical copies: dedupe keeps
    /// exactly as many records as a pairwise pixel comparison finds
    /// distinct images, i.e. n − k + 1.
    #[test]
    fn dedupe_matches_pairwise_oracle(n in 2usize..9, k_raw in 2usize..9) {
        let k = k_raw.min(n);
        let tmp = tempfile::tempdir().unwrap();
        let mut paths = Vec::new();
        for i in 0..n {
            let rgb = if i < k { [200, 10, 10] } else { [i as u8 * 20, 50, 90] };
            paths.push(solid(tmp.path(), &format!("{i:02}.png"), rgb));
        }
        let mut m = DatasetManifest::new("d", LabelSpace::aodta());
        ingest_source(&SourceSpec::new(tmp.path(), "src", "Drone"), &mut m).unwrap();
        let report = dedupe(&mut m);

        let pixels: Vec<Vec<u8>> = paths.iter().map(|p| image::open(p).unwrap().to_rgb8().into_raw()).collect();
        let mut distinct = 0;
        for i in 0..pixels.len() {
            if (0..i).all(|j| pixels[j] != pixels[i]) {
                distinct += 1;
            }
        }
        prop_assert_eq!(distinct, n - k + 1);
        prop_assert_eq!(m.len(), distinct);
        prop_assert_eq!(report.removed, k - 1);
        prop_assert!(m.records.iter().any(|r| r.id == "src/00.png"), "smallest id survives");
    }

    /// Every category's train share is within one record of the requested fraction.
    #[test]
    fn split_ratio_within_one_record(
        sizes in proptest::collection::vec(2usize..60, 4),
        fraction in 0.05f64..0.95,
        seed in any::<u64>(),
    ) {
        let ls = LabelSpace::aodta();
        let mut m = DatasetManifest::new("s", ls.clone());
        for (label, &n) in ls.members().iter().zip(&sizes) {
            for i in 0..n {
                m.records.push(record(&format!("{}-{i}", label.as_str()), label.as_str()));
            }
        }
        let cfg = SplitConfig { train_fraction: fraction, seed, shuffle_train: true };
        let out = stratified_split(&m, &cfg).unwrap();
        out.validate().unwrap();
        let train = out.split_records(Split::Train).unwrap();
        let test = out.split_records(Split::Test).unwrap();
        prop_assert_eq!(train.len() + test.len(), m.len());
        for (label, &n) in ls.members().iter().zip(&sizes) {
            let t = train.iter().filter(|r| &r.category == label).count();
            prop_assert!((t as f64 / n as f64 - fraction).abs() <= 1.0 / n as f64);
        }
        let ids: BTreeSet<&str> = out.records.iter().map(|r| r.id.as_str()).collect();
        prop_assert_eq!(ids.len(), m.len());
    }

    /// Augmented pixel values stay in range for any in-bounds transform.
    #[test]
    fn augmentation_stays_in_range(seed in any::<u64>(), draw in any::<u64>()) {
        let values: Vec<f64> = (0..32 * 32 * 3).map(|i| ((i as u64).wrapping_mul(seed | 1) % 256) as f64 / 255.0).collect();
        let img = NumericArray::new(vec![32, 32, 3], values).unwrap();
        let out = AugmentationParams::default().draw(draw).apply(&img).unwrap();
        prop_assert_eq!(out.shape(), &[32, 32, 3]);
        prop_assert!(out.values().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn double_flip_is_identity() {
    let values: Vec<f64> = (0..5 * 7 * 3).map(|i| i as f64 / 104.0).collect();
    let img = NumericArray::new(vec![5, 7, 3], values).unwrap();
    let flip = AffineTransform::hflip();
    assert_eq!(flip.apply(&flip.apply(&img).unwrap()).unwrap(), img);
}

#[test]
fn balancing_preserves_labels_and_lineage() {
    let tmp = tempfile::tempdir().unwrap();
    let ls = LabelSpace::aodta();
    let mut m = DatasetManifest::new("b", ls.clone());
    for (ci, (label, n)) in ls.members().iter().zip([5usize, 2, 3, 1]).enumerate() {
        let dir = tmp.path().join(label.as_str());
        std::fs::create_dir_all(&dir).unwrap();
        for i in 0..n {
            solid(&dir, &format!("{i}.png"), [ci as u8 * 60, i as u8 * 40, 100]);
        }
        let spec = SourceSpec::new(&dir, label.as_str().to_lowercase(), label.clone())
            .with_attributes([format!("attr{ci}")]);
        ingest_source(&spec, &mut m).unwrap();
    }
    let report = balance_by_augmentation(&mut m, &AugmentationParams::default(), &tmp.path().join("out")).unwrap();
    assert_eq!(report.target, 5);
    assert_eq!(report.total_added(), 3 + 2 + 4, "Drone, Helicopter, Bird top-ups");
    m.validate().unwrap();
    for (_, n) in m.counts().iter() {
        assert_eq!(n, 5);
    }
    for r in m.records.iter().filter(|r| r.is_augmented()) {
        let parent = m.get(r.parent_id.as_deref().unwrap()).unwrap();
        assert_eq!(parent.category, r.category);
        assert_eq!(parent.attributes, r.attributes);
        assert_eq!(parent.provenance, Provenance::Original);
        assert!(r.augmentation_desc.is_some());
        let img = load_preprocessed(&r.path).unwrap();
        assert_eq!(img.shape(), &[32, 32, 3]);
    }
    let cat: CategoryLabel = "Bird".into();
    assert_eq!(m.records.iter().filter(|r| r.category == cat && r.is_augmented()).count(), 4);
}

#[test]
fn balancing_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let ls = LabelSpace::new("pair", ["A", "B"]).unwrap();
    let build = |out: &Path| {
        let mut m = DatasetManifest::new("b", ls.clone());
        for (ci, (label, n)) in ls.members().iter().zip([4usize, 1]).enumerate() {
            let dir = tmp.path().join(label.as_str());
            std::fs::create_dir_all(&dir).unwrap();
            for i in 0..n {
                solid(&dir, &format!("{i}.png"), [ci as u8 * 90, i as u8 * 50, 7]);
            }
            ingest_source(&SourceSpec::new(&dir, label.as_str(), label.clone()), &mut m).unwrap();
        }
        let params = AugmentationParams { seed: 17, ..Default::default() };
        balance_by_augmentation(&mut m, &params, out).unwrap();
        m
    };
    let a = build(&tmp.path().join("one"));
    let b = build(&tmp.path().join("one"));
    assert_eq!(a, b);
    let pa: Vec<Vec<u8>> = a
        .records
        .iter()
        .filter(|r| r.is_augmented())
        .map(|r| std::fs::read(&r.path).unwrap())
        .collect();
    assert_eq!(pa.len(), 3);
}

#[test]
fn missing_source_directory_is_not_found() {
    let mut m = DatasetManifest::new("x", LabelSpace::aodta());
    let err = ingest_source(&SourceSpec::new("/definitely/not/here", "s", "Drone"), &mut m).unwrap_err();
    assert!(err.to_string().contains("/definitely/not/here"));
    assert!(m.is_empty());
}
