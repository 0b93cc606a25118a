use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use aerothreat::curation::{balance_by_augmentation, dedupe, ingest_source, stratified_split, SourceSpec};
use aerothreat::evaluation::{
    classification_report, confusion_matrix, evaluate_heads, export_report, parse_predictions_csv,
    plot_accuracy_curves, plot_loss_curves, threat_labels, ClassificationReport, ConfusionMatrix, Head,
};
use aerothreat::model::{BackboneKind, Checkpoint, DualHeadNetwork, NetworkConfig};
use aerothreat::synth;
use aerothreat::threat_rules::{annotate_manifest, level_counts, RuleSet};
use aerothreat::training::{self, write_metrics_csv, LabeledImages};
use aerothreat::{DatasetManifest, Error, LabelSpace, Result, Split, ThreatLevel};

use crate::config::{create_dir, parse_label_space, write_json, write_metadata, Backbone, RunConfig, RunRecord};
use crate::{AnnotateArgs, BackboneArg, CurateArgs, EvaluateArgs, SplitArgs, SynthArgs, TrainArgs};

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn finish(out: &Path, command: &str, inputs: BTreeMap<&str, String>, cfg: &RunConfig, started: SystemTime) -> Result<()> {
    let record = RunRecord { command, inputs, config: cfg };
    write_json(&out.join(format!("{command}_config.json")), &record)?;
    write_metadata(out, command, started)
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let started = SystemTime::now();
    let mut cfg = RunConfig::load(a.common.config.as_deref())?;
    if a.label_space.is_some() {
        cfg.label_space = a.label_space.clone();
    }
    let ls = parse_label_space(cfg.label_space.as_deref())?;
    let seed = a.seed.unwrap_or(cfg.train.seed);
    let out = &a.common.out;
    create_dir(out)?;
    let ds = synth::write_dataset(out, &ls, a.per_combination, seed)?;
    println!(
        "wrote {} images in {} source directories under {}",
        ds.images_written,
        ds.sources.len(),
        out.display()
    );
    println!("sources: {}", out.join("sources.txt").display());
    println!("rules:   {}", ds.rules_path.display());
    let inputs = BTreeMap::from([
        ("per_combination", a.per_combination.to_string()),
        ("seed", seed.to_string()),
    ]);
    finish(out, "synth", inputs, &cfg, started)
}

/// Parses `DIR:CATEGORY:NAME[:ATTR,ATTR...]`. The directory may itself
/// contain colons; the trailing fields are taken from the right.
fn parse_source(spec: &str) -> Result<(PathBuf, String, String, Vec<String>)> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || {
        Error::Validation(format!(
            "source {spec:?} must look like DIR:CATEGORY:NAME[:ATTR,ATTR...]"
        ))
    };
    let (dir, rest, attrs) = match parts.len() {
        0..=2 => return Err(bad()),
        3 => (parts[0].to_string(), &parts[1..3], Vec::new()),
        n => {
            let attrs = parts[n - 1]
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect();
            (parts[..n - 3].join(":"), &parts[n - 3..n - 1], attrs)
        }
    };
    if dir.is_empty() || rest[0].trim().is_empty() || rest[1].trim().is_empty() {
        return Err(bad());
    }
    Ok((PathBuf::from(dir), rest[0].trim().to_string(), rest[1].trim().to_string(), attrs))
}

pub fn curate(a: CurateArgs) -> Result<()> {
    let started = SystemTime::now();
    let mut cfg = RunConfig::load(a.common.config.as_deref())?;
    if a.label_space.is_some() {
        cfg.label_space = a.label_space.clone();
    }
    if let Some(seed) = a.seed {
        cfg.augmentation.seed = seed;
    }
    let ls = parse_label_space(cfg.label_space.as_deref())?;

    let mut specs = a.sources.clone();
    if let Some(file) = &a.sources_file {
        let text = fs::read_to_string(file).map_err(|e| Error::Io { path: file.clone(), source: e })?;
        specs.extend(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_string),
        );
    }
    if specs.is_empty() {
        return Err(Error::Validation("curate needs at least one --source".into()));
    }
    let parsed = specs.iter().map(|s| parse_source(s)).collect::<Result<Vec<_>>>()?;

    let out = &a.common.out;
    let mut manifest = DatasetManifest::new("curated", ls.clone());
    let mut first_error = None;
    let mut succeeded = 0;
    for (dir, category, name, attrs) in parsed {
        let outcome = match ls.resolve(&category) {
            None => Err(Error::Validation(format!(
                "source {name}: category {category:?} is not in label space {ls}"
            ))),
            Some(label) => {
                let spec = SourceSpec::new(&dir, name.clone(), label.clone()).with_attributes(attrs);
                ingest_source(&spec, &mut manifest)
            }
        };
        match outcome {
            Ok(report) => {
                succeeded += 1;
                println!("source {name}: {} image(s) added from {}", report.added, dir.display());
                for s in &report.skipped {
                    eprintln!("  skipped {}: {}", s.path.display(), s.reason);
                }
            }
            Err(e) => {
                eprintln!("source {name} failed: {e}");
                first_error.get_or_insert(e);
            }
        }
    }
    if succeeded == 0 {
        return Err(first_error.expect("at least one source was tried"));
    }

    let dd = dedupe(&mut manifest);
    if dd.removed > 0 {
        println!("removed {} duplicate image(s)", dd.removed);
    }
    let before = manifest.counts();
    create_dir(out)?;
    let after = if a.balance {
        let report = balance_by_augmentation(&mut manifest, &cfg.augmentation, out)?;
        println!("added {} augmented image(s)", report.total_added());
        Some(manifest.counts())
    } else {
        None
    };
    let path = out.join("manifest.jsonl");
    manifest.write(&path)?;

    println!();
    match &after {
        Some(_) => println!("{:<14} {:>16} {:>20}", "Class", "Number of Images", "After Augmentation"),
        None => println!("{:<14} {:>16}", "Class", "Number of Images"),
    }
    for (label, n) in before.iter() {
        match &after {
            Some(c) => println!("{:<14} {:>16} {:>20}", label.as_str(), n, c.get(label)),
            None => println!("{:<14} {:>16}", label.as_str(), n),
        }
    }
    match &after {
        Some(c) => println!("{:<14} {:>16} {:>20}", "Total", before.total(), c.total()),
        None => println!("{:<14} {:>16}", "Total", before.total()),
    }
    println!("\nmanifest: {}", path.display());

    let mut inputs = BTreeMap::from([("balance", a.balance.to_string())]);
    inputs.insert("sources", specs.join(" "));
    finish(out, "curate", inputs, &cfg, started)
}

pub fn annotate(a: AnnotateArgs) -> Result<()> {
    let started = SystemTime::now();
    let mut cfg = RunConfig::load(a.common.config.as_deref())?;
    if a.rules.is_some() {
        cfg.rules = a.rules.clone();
    }
    let manifest = DatasetManifest::read(&a.manifest)?;
    let rules = match &cfg.rules {
        Some(p) => RuleSet::load(p)?,
        None => RuleSet::default_rules(),
    };
    let annotated = annotate_manifest(&manifest, &rules)?;
    let out = &a.common.out;
    create_dir(out)?;
    let path = out.join("annotated.jsonl");
    annotated.write(&path)?;

    println!("{:<8} {:>8}", "Level", "Count");
    for (level, n) in ThreatLevel::ALL.iter().zip(level_counts(&annotated)) {
        println!("{:<8} {:>8}", level.as_str(), n);
    }
    println!("\nmanifest: {}", path.display());
    let inputs = BTreeMap::from([("manifest", display(&a.manifest))]);
    finish(out, "annotate", inputs, &cfg, started)
}

pub fn split(a: SplitArgs) -> Result<()> {
    let started = SystemTime::now();
    let mut cfg = RunConfig::load(a.common.config.as_deref())?;
    if let Some(f) = a.train_fraction {
        cfg.split.train_fraction = f;
    }
    if let Some(s) = a.seed {
        cfg.split.seed = s;
    }
    let manifest = DatasetManifest::read(&a.manifest)?;
    let split = stratified_split(&manifest, &cfg.split)?;
    let out = &a.common.out;
    create_dir(out)?;
    let path = out.join("split.jsonl");
    split.write(&path)?;

    let train = split.split_records(Split::Train)?;
    let test = split.split_records(Split::Test)?;
    println!("{:<14} {:>8} {:>8}", "Class", "Train", "Test");
    for label in split.label_space.members() {
        let count = |rs: &[&aerothreat::ImageRecord]| rs.iter().filter(|r| &r.category == label).count();
        println!("{:<14} {:>8} {:>8}", label.as_str(), count(&train), count(&test));
    }
    println!("{:<14} {:>8} {:>8}", "Total", train.len(), test.len());
    println!("\nmanifest: {}", path.display());
    let inputs = BTreeMap::from([("manifest", display(&a.manifest))]);
    finish(out, "split", inputs, &cfg, started)
}

pub fn train(a: TrainArgs) -> Result<()> {
    let started = SystemTime::now();
    let mut cfg = RunConfig::load(a.common.config.as_deref())?;
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    match a.backbone {
        Some(BackboneArg::Standin) => cfg.backbone = Backbone::Standin,
        Some(BackboneArg::EfficientnetB4) => cfg.backbone = Backbone::EfficientnetB4,
        None => {}
    }
    cfg.train.validate()?;

    let manifest = DatasetManifest::read(&a.manifest)?;
    let mut net_cfg = NetworkConfig::new(manifest.label_space.clone());
    if cfg.backbone == Backbone::EfficientnetB4 {
        net_cfg.backbone.kind = BackboneKind::PretrainedEfficientnetB4;
    }
    let net = DualHeadNetwork::new(net_cfg, cfg.train.seed)?;

    let train_data = LabeledImages::from_manifest(&manifest, Some(Split::Train))?;
    let val_data = LabeledImages::from_manifest(&manifest, Some(Split::Test))?;
    if train_data.is_empty() {
        return Err(Error::Validation("the train split is empty".into()));
    }
    if val_data.is_empty() {
        return Err(Error::Validation("the test split (used for validation) is empty".into()));
    }
    println!(
        "training on {} images, validating on {} (test split), {} epoch(s)",
        train_data.len(),
        val_data.len(),
        cfg.train.epochs
    );

    let out = &a.common.out;
    create_dir(out)?;
    let ckpt_path = out.join("checkpoint.json");
    let outcome = training::train(net, &train_data, &val_data, &cfg.train, Some(&ckpt_path))?;
    for m in &outcome.history {
        println!(
            "epoch {:>3}  loss {:.4}/{:.4}  category acc {:.3}/{:.3}  threat acc {:.3}/{:.3}",
            m.epoch,
            m.train_loss,
            m.val_loss,
            m.train_class_acc,
            m.val_class_acc,
            m.train_threat_acc,
            m.val_threat_acc
        );
    }
    if outcome.checkpoint.is_none() {
        Checkpoint::from_network(&outcome.net, None).save(&ckpt_path)?;
    }
    write_metrics_csv(&out.join("metrics.csv"), &outcome.history)?;
    plot_accuracy_curves(&outcome.history, &out.join("accuracy.png"))?;
    plot_loss_curves(&outcome.history, &out.join("loss.png"))?;
    match outcome.best_epoch {
        Some(e) => println!("best validation loss at epoch {e}; checkpoint: {}", ckpt_path.display()),
        None => println!("no epochs run; initial parameters saved to {}", ckpt_path.display()),
    }

    let inputs = BTreeMap::from([
        ("manifest", display(&a.manifest)),
        ("validation_set", "test split".to_string()),
    ]);
    finish(out, "train", inputs, &cfg, started)
}

fn export_head(out: &Path, head: Head, cm: &ConfusionMatrix, report: &ClassificationReport) -> Result<()> {
    let title = match head {
        Head::Category => "Category",
        Head::Threat => "Threat Level",
    };
    export_report(report, cm, out, head.as_str(), title)?;
    println!("{}", report.to_text(title));
    Ok(())
}

fn evaluate_predictions(path: &Path, label_space: &LabelSpace, out: &Path) -> Result<()> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    let pairs = parse_predictions_csv(&text)?;
    if pairs.is_empty() {
        return Err(Error::Validation(format!("{} holds no predictions", path.display())));
    }
    for (head, (truth, pred)) in &pairs {
        let (truth, pred, labels) = match head {
            Head::Category => {
                let canon = |v: &[String]| -> Result<Vec<String>> {
                    v.iter()
                        .map(|s| {
                            label_space.resolve(s).map(|l| l.as_str().to_string()).ok_or_else(|| {
                                Error::Validation(format!("category {s:?} is not in label space {label_space}"))
                            })
                        })
                        .collect()
                };
                let labels = label_space.members().iter().map(|l| l.as_str().to_string()).collect();
                (canon(truth)?, canon(pred)?, labels)
            }
            Head::Threat => {
                let canon = |v: &[String]| -> Result<Vec<String>> {
                    v.iter()
                        .map(|s| s.parse::<ThreatLevel>().map(|l| l.report_label().to_string()))
                        .collect()
                };
                (canon(truth)?, canon(pred)?, threat_labels())
            }
        };
        let cm = confusion_matrix(&truth, &pred, &labels)?;
        let report = classification_report(&cm)?;
        export_head(out, *head, &cm, &report)?;
    }
    Ok(())
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    let started = SystemTime::now();
    let mut cfg = RunConfig::load(a.common.config.as_deref())?;
    if a.label_space.is_some() {
        cfg.label_space = a.label_space.clone();
    }
    let out = &a.common.out;
    let mut inputs = BTreeMap::new();

    if let Some(pred_path) = &a.predictions {
        let ls = parse_label_space(cfg.label_space.as_deref())?;
        create_dir(out)?;
        evaluate_predictions(pred_path, &ls, out)?;
        inputs.insert("predictions", display(pred_path));
    } else {
        let (ckpt_path, manifest_path) = match (&a.checkpoint, &a.manifest) {
            (Some(c), Some(m)) => (c, m),
            _ => return Err(Error::Validation("evaluate needs --checkpoint and --manifest".into())),
        };
        let net = Checkpoint::load(ckpt_path)?.into_network()?;
        let manifest = DatasetManifest::read(manifest_path)?;
        if manifest.label_space != net.config.label_space {
            return Err(Error::Validation(format!(
                "label space mismatch: checkpoint has {}, manifest has {}",
                net.config.label_space, manifest.label_space
            )));
        }
        let data = LabeledImages::from_manifest(&manifest, Some(Split::Test))?;
        if data.is_empty() {
            return Err(Error::Validation(format!(
                "the test split of {} is empty",
                manifest_path.display()
            )));
        }
        let eval = evaluate_heads(&net, &data)?;
        create_dir(out)?;
        export_head(out, Head::Category, &eval.category.0, &eval.category.1)?;
        export_head(out, Head::Threat, &eval.threat.0, &eval.threat.1)?;
        inputs.insert("checkpoint", display(ckpt_path));
        inputs.insert("manifest", display(manifest_path));
    }
    println!("reports written to {}", out.display());
    finish(out, "evaluate", inputs, &cfg, started)
}
