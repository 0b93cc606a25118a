use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::augment::AugmentationParams;
use super::preprocess::{content_hash, load_preprocessed, to_rgb_image};
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::NumericArray;
use crate::types::{CategoryLabel, DatasetManifest, ImageRecord, Provenance};

#[derive(Debug, Clone, PartialEq)]
pub struct BalanceReport {
    /// Count every category was raised to.
    pub target: usize,
    /// Records added per category, in label-space order.
    pub added: Vec<(CategoryLabel, usize)>,
}

impl BalanceReport {
    pub fn total_added(&self) -> usize {
        self.added.iter().map(|(_, n)| n).sum()
    }
}

struct Job {
    category_index: usize,
    ordinal: usize,
    parent: usize,
}

/// Raises every category to the largest category count by appending
/// augmented copies of its original records.
///
/// Parents are taken round-robin over a category's originals in manifest
/// order. Augmented images are written as 32×32 PNGs under
/// `out_dir/augmented/<category>/`. Output depends only on the manifest and
/// `params` (including `params.seed`).
pub fn balance_by_augmentation(
    manifest: &mut DatasetManifest,
    params: &AugmentationParams,
    out_dir: &Path,
) -> Result<BalanceReport> {
    params.validate()?;
    let counts = manifest.counts();
    if let Some((label, _)) = counts.iter().find(|(_, n)| *n == 0) {
        return Err(Error::validation(format!(
            "category {label} has no records to augment"
        )));
    }
    let target = counts.max();

    let mut jobs = Vec::new();
    let mut added = Vec::new();
    for (ci, (label, count)) in counts.iter().enumerate() {
        let originals: Vec<usize> = manifest
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| &r.category == label && r.provenance == Provenance::Original)
            .map(|(i, _)| i)
            .collect();
        let needed = target - count;
        if needed > 0 && originals.is_empty() {
            return Err(Error::validation(format!(
                "category {label} has no original records to augment"
            )));
        }
        let existing_augmented = count - originals.len();
        for k in 0..needed {
            jobs.push(Job {
                category_index: ci,
                ordinal: existing_augmented + k,
                parent: originals[k % originals.len()],
            });
        }
        added.push((label.clone(), needed));
    }

    let mut parent_indices: Vec<usize> = jobs.iter().map(|j| j.parent).collect();
    parent_indices.sort_unstable();
    parent_indices.dedup();
    let parents: HashMap<usize, NumericArray> = parent_indices
        .par_iter()
        .map(|&i| load_preprocessed(&manifest.records[i].path).map(|a| (i, a)))
        .collect::<Result<_>>()?;

    let records = &manifest.records;
    let members = manifest.label_space.members();
    let new_records: Vec<ImageRecord> = jobs
        .par_iter()
        .map(|job| {
            let parent = &records[job.parent];
            let category = &members[job.category_index];
            let draw_seed = seed::derive(
                params.seed,
                &[job.category_index as u64, job.ordinal as u64],
            );
            let transform = params.draw(draw_seed);
            let augmented = transform.apply(&parents[&job.parent])?;
            let rgb = to_rgb_image(&augmented)?;
            let dir = out_dir.join("augmented").join(sanitize(category.as_str()));
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let path = dir.join(format!("{:06}.png", job.ordinal));
            rgb.save(&path).map_err(|e| Error::Decode {
                path: path.clone(),
                message: e.to_string(),
            })?;
            Ok(ImageRecord {
                id: format!("{}#aug{:06}", parent.id, job.ordinal),
                source_dataset: parent.source_dataset.clone(),
                path,
                width: rgb.width(),
                height: rgb.height(),
                category: parent.category.clone(),
                threat: parent.threat,
                attributes: parent.attributes.clone(),
                provenance: Provenance::Augmented,
                parent_id: Some(parent.id.clone()),
                augmentation_desc: Some(transform.describe()),
                content_hash: content_hash(&rgb),
            })
        })
        .collect::<Result<_>>()?;

    manifest.records.extend(new_records);
    manifest
        .metadata
        .insert("balance.order".into(), "balanced before split".into());
    manifest
        .metadata
        .insert("balance.target".into(), target.to_string());
    manifest
        .metadata
        .insert("balance.seed".into(), params.seed.to_string());
    Ok(BalanceReport { target, added })
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}
