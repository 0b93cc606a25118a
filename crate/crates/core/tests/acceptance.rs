//! Acceptance criteria, one PASS/FAIL line each. Exits non-zero if any fail.

mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use aerothreat::curation::preprocess::{content_hash, load_preprocessed};
use aerothreat::curation::{
    balance_by_augmentation, dedupe, ingest_source, stratified_split, AffineTransform,
    AugmentationParams, SplitConfig,
};
use aerothreat::evaluation::{
    classification_report, confusion_matrix, evaluate_heads, export_report, ConfusionMatrix,
};
use aerothreat::model::{
    categorical_cross_entropy, head_losses, one_hot, softmax, DualHeadNetwork, NetworkConfig,
};
use aerothreat::threat_rules::{annotate_manifest, RuleSet};
use aerothreat::training::{score, train, write_metrics_csv, LabeledImages, TrainConfig};
use aerothreat::{
    synth, DatasetManifest, ImageRecord, LabelSpace, NumericArray, Provenance, Split,
};
use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

fn all_high_report() -> Check {
    let start = Instant::now();
    let mut truth = vec!["LOW"; 23];
    truth.extend(vec!["MEDIUM"; 27]);
    truth.extend(vec!["HIGH"; 794]);
    let pred = vec!["HIGH"; truth.len()];
    let cm = confusion_matrix(&truth, &pred, &["LOW", "MEDIUM", "HIGH"]).map_err(|e| e.to_string())?;
    let report = classification_report(&cm).map_err(|e| e.to_string())?;
    let tmp = tempfile::tempdir().unwrap();
    let files = export_report(&report, &cm, tmp.path(), "threat", "Threat Level").map_err(|e| e.to_string())?;
    let text = fs::read_to_string(&files.text).unwrap();
    let elapsed = start.elapsed();

    let rows: Vec<Vec<&str>> = text.lines().map(|l| l.split_whitespace().collect()).collect();
    let expected: [&[&str]; 5] = [
        &["LOW", "0.00", "0.00", "0.00", "23"],
        &["MEDIUM", "0.00", "0.00", "0.00", "27"],
        &["HIGH", "0.94", "1.00", "0.97", "794"],
        &["Macro", "Avg", "0.31", "0.33", "0.32", "844"],
        &["Weighted", "Avg", "0.89", "0.94", "0.91", "844"],
    ];
    for want in expected {
        let got = rows.iter().find(|r| r.first() == want.first());
        ensure(got.map(Vec::as_slice) == Some(want), || format!("row {want:?} printed as {got:?}"))?;
    }
    ensure(report.total_support == 844, || format!("total support {}", report.total_support))?;
    ensure(elapsed < Duration::from_secs(1), || format!("took {}", secs(elapsed)))?;
    Ok(format!("all cells match, {}", secs(elapsed)))
}

fn balancing() -> Check {
    let tmp = tempfile::tempdir().unwrap();
    let ls = LabelSpace::aodta();
    let counts = [6538usize, 2194, 1119, 428];
    let jobs: Vec<(usize, usize)> = counts
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| (0..n).map(move |i| (c, i)))
        .collect();
    let records: Vec<ImageRecord> = jobs
        .par_iter()
        .map(|&(c, i)| {
            let label = &ls.members()[c];
            let dir = tmp.path().join("orig").join(label.as_str());
            fs::create_dir_all(&dir).unwrap();
            let img = RgbImage::from_fn(32, 32, |x, y| {
                Rgb([(x * 8) as u8 ^ (i % 251) as u8, (y * 8) as u8 ^ (i / 251) as u8, 40 * c as u8])
            });
            let path = dir.join(format!("{i:05}.png"));
            img.save(&path).unwrap();
            ImageRecord {
                id: format!("{}/{i:05}", label.as_str()),
                source_dataset: "fixture".into(),
                path,
                width: 32,
                height: 32,
                category: label.clone(),
                threat: None,
                attributes: vec![],
                provenance: Provenance::Original,
                parent_id: None,
                augmentation_desc: None,
                content_hash: content_hash(&img),
            }
        })
        .collect();
    let mut m = DatasetManifest::new("balance", ls.clone());
    m.records = records;

    let start = Instant::now();
    let report = balance_by_augmentation(&mut m, &AugmentationParams::default(), &tmp.path().join("out"))
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();

    for (label, n) in m.counts().iter() {
        ensure(n == 6538, || format!("{label} has {n} records"))?;
    }
    ensure(m.len() == 26152, || format!("total {}", m.len()))?;
    ensure(report.total_added() == 26152 - counts.iter().sum::<usize>(), || {
        format!("added {}", report.total_added())
    })?;
    m.validate().map_err(|e| e.to_string())?;
    let added: Vec<&ImageRecord> = m.records.iter().filter(|r| r.is_augmented()).collect();
    added.par_iter().try_for_each(|r| {
        let parent = r
            .parent_id
            .as_deref()
            .and_then(|p| m.get(p))
            .ok_or_else(|| format!("{} has no parent", r.id))?;
        ensure(parent.provenance == Provenance::Original && parent.category == r.category, || {
            format!("{} has parent {}", r.id, parent.id)
        })?;
        ensure(r.augmentation_desc.as_deref().is_some_and(|d| !d.is_empty()), || {
            format!("{} lacks a transform description", r.id)
        })?;
        let img = load_preprocessed(&r.path).map_err(|e| e.to_string())?;
        ensure(img.shape() == [32, 32, 3], || format!("{} has shape {:?}", r.id, img.shape()))
    })?;
    ensure(elapsed < Duration::from_secs(120), || format!("took {}", secs(elapsed)))?;
    Ok(format!("{} added, 4 × 6538 = 26152, {}", added.len(), secs(elapsed)))
}

const SYNTH_EPOCHS: usize = 40;

fn synthetic_training() -> Check {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    pool.install(|| {
        let start = Instant::now();
        let ls = LabelSpace::aodta();
        let (tr, te) = synth::generate_split(&ls, 400, 120, 7).map_err(|e| e.to_string())?;
        let net = DualHeadNetwork::new(NetworkConfig::new(ls), 1).map_err(|e| e.to_string())?;
        let cfg = TrainConfig {
            learning_rate: 1e-4,
            batch_size: 8,
            epochs: SYNTH_EPOCHS,
            ..Default::default()
        };
        let out = train(net, &tr, &te, &cfg, None).map_err(|e| e.to_string())?;
        let train_score = score(&out.net, &tr, 8, cfg.loss_weights).map_err(|e| e.to_string())?;
        let test_score = score(&out.net, &te, 8, cfg.loss_weights).map_err(|e| e.to_string())?;
        let elapsed = start.elapsed();
        let summary = format!(
            "{SYNTH_EPOCHS} epochs: train class {:.3}, test class {:.3}, test threat {:.3}, {}",
            train_score.class_acc,
            test_score.class_acc,
            test_score.threat_acc,
            secs(elapsed)
        );
        ensure(
            train_score.class_acc >= 0.95 && test_score.class_acc >= 0.90 && test_score.threat_acc >= 0.85,
            || summary.clone(),
        )?;
        ensure(elapsed < Duration::from_secs(300), || summary.clone())?;
        Ok(summary)
    })
}

fn gradient_check() -> Check {
    let r = common::gradcheck::check(100);
    let summary = format!("{} points ({} drawn), worst relative error {:.2e}", r.accepted, r.drawn, r.worst);
    ensure(r.accepted >= 100 && r.worst < 1e-4, || summary.clone())?;
    Ok(summary)
}

fn normalization() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut worst_sum, mut worst_shift) = (0.0f64, 0.0f64);
    for width in [4usize, 3] {
        for _ in 0..10_000 {
            let row: Vec<f64> = (0..width).map(|_| rng.random_range(-30.0..30.0)).collect();
            let c = rng.random_range(-100.0..100.0);
            let p = softmax(&row).map_err(|e| e.to_string())?;
            let shifted: Vec<f64> = row.iter().map(|z| z + c).collect();
            let q = softmax(&shifted).map_err(|e| e.to_string())?;
            worst_sum = worst_sum.max((p.iter().sum::<f64>() - 1.0).abs());
            worst_shift = p.iter().zip(&q).map(|(a, b)| (a - b).abs()).fold(worst_shift, f64::max);
        }
    }
    ensure(worst_sum < 1e-6, || format!("row sum off by {worst_sum:e}"))?;
    ensure(worst_shift < 1e-9, || format!("shift changed a probability by {worst_shift:e}"))?;

    // Both heads of a network, on real forward passes.
    let net = DualHeadNetwork::new(NetworkConfig::new(LabelSpace::aodta()), 2).unwrap();
    let x = NumericArray::new(vec![16, 32, 32, 3], (0..16 * 3072).map(|_| rng.random()).collect()).unwrap();
    let out = net.predict(&x).map_err(|e| e.to_string())?;
    for probs in [&out.class_probs, &out.threat_probs] {
        for i in 0..16 {
            let s: f64 = probs.row(i).iter().sum();
            ensure((s - 1.0).abs() < 1e-6, || format!("network row sums to {s}"))?;
        }
    }

    for k in [4usize, 3] {
        let p = softmax(&vec![0.0; k]).unwrap();
        for t in 0..k {
            let l = categorical_cross_entropy(&p, &one_hot(t, k)).unwrap();
            ensure((l - (k as f64).ln()).abs() < 1e-9, || format!("uniform loss {l} for width {k}"))?;
        }
    }
    // An all-zero network predicts uniformly on both heads.
    let zero = DualHeadNetwork::zeros(NetworkConfig::new(LabelSpace::aodta())).unwrap();
    let out = zero.predict(&x).unwrap();
    let losses = head_losses(&out, &[0, 1, 2, 3].repeat(4), &[0, 1, 2, 0].repeat(4)).unwrap();
    ensure((losses.class - 4f64.ln()).abs() < 1e-9 && (losses.threat - 3f64.ln()).abs() < 1e-9, || {
        format!("zero-network losses {losses:?}")
    })?;
    Ok(format!("max |Σp−1| {worst_sum:.1e}, max shift drift {worst_shift:.1e}, ln 4 / ln 3 exact"))
}

fn metric_recount() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for i in 0..1000 {
        let (labels, truth, pred) = common::random_instance(&mut rng, 5, 200);
        let cm = ConfusionMatrix::from_indices(labels.clone(), &truth, &pred).map_err(|e| e.to_string())?;
        let got = classification_report(&cm).map_err(|e| e.to_string())?;
        let want = common::recount(&truth, &pred, &labels);
        ensure(got == want, || format!("instance {i}: {got:?} != {want:?}"))?;
        ensure(got.weighted_avg.recall == got.accuracy, || {
            format!("instance {i}: weighted recall {} vs accuracy {}", got.weighted_avg.recall, got.accuracy)
        })?;
    }
    Ok("1000 instances identical".into())
}

/// curate → annotate → split → train → evaluate inside `dir`; returns the
/// artifacts that must be reproducible.
fn pipeline(dir: &Path) -> Result<Vec<(PathBuf, Vec<u8>)>, aerothreat::Error> {
    let ls = LabelSpace::aodta();
    let data = synth::write_dataset(&dir.join("data"), &ls, 4, 11)?;
    let mut m = DatasetManifest::new("curated", ls.clone());
    for source in &data.sources {
        ingest_source(source, &mut m)?;
    }
    dedupe(&mut m);
    m.write(&dir.join("manifest.jsonl"))?;

    let annotated = annotate_manifest(&m, &RuleSet::load(&data.rules_path)?)?;
    annotated.write(&dir.join("annotated.jsonl"))?;
    let split = stratified_split(&annotated, &SplitConfig { seed: 3, ..Default::default() })?;
    split.write(&dir.join("split.jsonl"))?;

    let tr = LabeledImages::from_manifest(&split, Some(Split::Train))?;
    let te = LabeledImages::from_manifest(&split, Some(Split::Test))?;
    let net = DualHeadNetwork::new(NetworkConfig::new(ls), 2)?;
    let cfg = TrainConfig { epochs: 3, seed: 9, ..Default::default() };
    let out = train(net, &tr, &te, &cfg, Some(&dir.join("checkpoint.json")))?;
    write_metrics_csv(&dir.join("metrics.csv"), &out.history)?;

    let eval = evaluate_heads(&out.net, &te)?;
    export_report(&eval.category.1, &eval.category.0, dir, "category", "Category")?;
    export_report(&eval.threat.1, &eval.threat.0, dir, "threat", "Threat Level")?;

    [
        "manifest.jsonl",
        "annotated.jsonl",
        "split.jsonl",
        "checkpoint.json",
        "metrics.csv",
        "category_report.json",
        "threat_report.json",
    ]
    .iter()
    .map(|f| {
        let p = dir.join(f);
        fs::read(&p).map(|b| (p.clone(), b)).map_err(|e| aerothreat::Error::Io { path: p, source: e })
    })
    .collect()
}

fn determinism() -> Check {
    let tmp = tempfile::tempdir().unwrap();
    // Different worker counts must not change a single byte.
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| pipeline(tmp.path())).map_err(|e| e.to_string())
    };
    let first = run(1)?;
    let second = run(4)?;
    for ((path, a), (_, b)) in first.iter().zip(&second) {
        ensure(a == b, || format!("{} differs between runs", path.display()))?;
    }
    Ok(format!("{} artifacts byte-identical (1 vs 4 threads)", first.len()))
}

fn augmentation_invariants() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let img = NumericArray::new(vec![32, 32, 3], (0..3072).map(|_| rng.random()).collect()).unwrap();
    let flip = AffineTransform::hflip();
    let twice = flip.apply(&flip.apply(&img).unwrap()).unwrap();
    ensure(twice.values() == img.values(), || "double flip changed pixels".into())?;

    let identity = AugmentationParams::identity();
    for s in 0..100 {
        let out = identity.draw(s).apply(&img).map_err(|e| e.to_string())?;
        ensure(out == img, || format!("zero-range draw {s} changed the image"))?;
    }

    let params = AugmentationParams::default();
    for s in 0..1000u64 {
        let out = params.draw(s).apply(&img).map_err(|e| e.to_string())?;
        ensure(out.shape() == [32, 32, 3], || format!("draw {s} has shape {:?}", out.shape()))?;
        ensure(out.values().iter().all(|v| (0.0..=1.0).contains(v)), || format!("draw {s} left [0, 1]"))?;
    }
    Ok("flip², identity and 1000 random draws ok".into())
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("AC1 all-HIGH threat report", all_high_report),
        ("AC2 balancing to 6538 per category", balancing),
        ("AC3 synthetic training (1 core)", synthetic_training),
        ("AC4 gradient check", gradient_check),
        ("AC5 softmax normalization", normalization),
        ("AC6 metric recount", metric_recount),
        ("AC7 end-to-end determinism", determinism),
        ("AC8 augmentation invariants", augmentation_invariants),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let result = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|_| Err("panicked".into()));
        match result {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
