use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::types::{DatasetManifest, ImageRecord, Split};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub seed: u64,
    pub shuffle_train: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            seed: 0,
            shuffle_train: true,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::validation(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

/// Train share of a category of `count` records: `fraction · count` rounded
/// half-up. The small epsilon absorbs binary representation error so that
/// products like 0.7 · 5 = 3.5 round to 4.
pub fn train_count(fraction: f64, count: usize) -> usize {
    let exact = fraction * count as f64;
    ((exact + 0.5 + 1e-9).floor() as usize).min(count)
}

/// Assigns every record to train or test, stratified by category.
///
/// Within each category a seeded shuffle picks which records go to train.
/// The returned manifest lists train records first (shuffled iff
/// `shuffle_train`, otherwise in original order) followed by test records in
/// original order.
pub fn stratified_split(manifest: &DatasetManifest, config: &SplitConfig) -> Result<DatasetManifest> {
    config.validate()?;
    let counts = manifest.counts();
    for (label, n) in counts.iter() {
        if n < 2 {
            return Err(Error::validation(format!(
                "category {label} has {n} record(s); stratified splitting needs at least 2"
            )));
        }
    }

    let mut assignments = BTreeMap::new();
    for (ci, label) in manifest.label_space.members().iter().enumerate() {
        let mut members: Vec<usize> = manifest
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| &r.category == label)
            .map(|(i, _)| i)
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(config.seed, &[ci as u64]));
        members.shuffle(&mut rng);
        let n_train = train_count(config.train_fraction, members.len());
        for (k, &i) in members.iter().enumerate() {
            let split = if k < n_train { Split::Train } else { Split::Test };
            assignments.insert(manifest.records[i].id.clone(), split);
        }
    }

    let (mut train, test): (Vec<ImageRecord>, Vec<ImageRecord>) = manifest
        .records
        .iter()
        .cloned()
        .partition(|r| assignments[&r.id] == Split::Train);
    if config.shuffle_train {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(config.seed, &[u64::MAX]));
        train.shuffle(&mut rng);
    }

    let mut out = manifest.clone();
    out.records = train;
    out.records.extend(test);
    out.split_assignments = Some(assignments);
    out.metadata
        .insert("split.train_fraction".into(), config.train_fraction.to_string());
    out.metadata.insert("split.seed".into(), config.seed.to_string());
    out.metadata
        .insert("split.shuffle_train".into(), config.shuffle_train.to_string());
    Ok(out)
}
