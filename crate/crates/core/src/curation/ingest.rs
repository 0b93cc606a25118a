use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use walkdir::WalkDir;

use super::preprocess::{content_hash, load_image};
use crate::error::{Error, Result};
use crate::types::{CategoryLabel, DatasetManifest, ImageRecord, Provenance};

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

/// One source directory and the labels every image inside it receives.
#[derive(Debug, Clone)]
pub struct SourceSpec {
    pub directory: PathBuf,
    pub source_name: String,
    pub category: CategoryLabel,
    /// Descriptors copied onto every record (e.g. "hobby", "military").
    pub attributes: Vec<String>,
}

impl SourceSpec {
    pub fn new(
        directory: impl Into<PathBuf>,
        source_name: impl Into<String>,
        category: impl Into<CategoryLabel>,
    ) -> Self {
        Self {
            directory: directory.into(),
            source_name: source_name.into(),
            category: category.into(),
            attributes: Vec::new(),
        }
    }

    pub fn with_attributes<I, S>(mut self, attributes: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.attributes = attributes.into_iter().map(Into::into).collect();
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkippedFile {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IngestReport {
    pub added: usize,
    pub skipped: Vec<SkippedFile>,
}

fn is_image_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.iter().any(|x| e.eq_ignore_ascii_case(x)))
        .unwrap_or(false)
}

/// Adds one original record per decodable image found under the source
/// directory (recursively, in path order). Undecodable files are reported in
/// the returned [`IngestReport`] and skipped. The manifest is left untouched
/// on error.
pub fn ingest_source(source: &SourceSpec, manifest: &mut DatasetManifest) -> Result<IngestReport> {
    let dir = &source.directory;
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "source directory not found"),
        ));
    }
    if !manifest.label_space.contains(&source.category) {
        return Err(Error::validation(format!(
            "category {} is not in label space {}",
            source.category, manifest.label_space
        )));
    }

    let mut files = Vec::new();
    for entry in WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(dir).to_path_buf();
            Error::io(path, e.into())
        })?;
        if entry.file_type().is_file() && is_image_file(entry.path()) {
            files.push(entry.into_path());
        }
    }

    // (width, height, content hash) per file.
    type Decoded = (PathBuf, Result<(u32, u32, String)>);
    let decoded: Vec<Decoded> = files
        .into_par_iter()
        .map(|path| {
            let info = load_image(&path).map(|img| {
                let rgb = img.to_rgb8();
                (rgb.width(), rgb.height(), content_hash(&rgb))
            });
            (path, info)
        })
        .collect();

    let mut taken: HashSet<String> = manifest.records.iter().map(|r| r.id.clone()).collect();
    let mut report = IngestReport::default();
    let mut new_records = Vec::new();
    for (path, info) in decoded {
        match info {
            Ok((width, height, hash)) => {
                let rel = path.strip_prefix(dir).unwrap_or(&path);
                let rel: Vec<String> = rel
                    .components()
                    .map(|c| c.as_os_str().to_string_lossy().into_owned())
                    .collect();
                let base = format!("{}/{}", source.source_name, rel.join("/"));
                let id = unique_id(&base, &taken);
                taken.insert(id.clone());
                new_records.push(ImageRecord {
                    id,
                    source_dataset: source.source_name.clone(),
                    path,
                    width,
                    height,
                    category: source.category.clone(),
                    threat: None,
                    attributes: source.attributes.clone(),
                    provenance: Provenance::Original,
                    parent_id: None,
                    augmentation_desc: None,
                    content_hash: hash,
                });
            }
            Err(e) => report.skipped.push(SkippedFile {
                path,
                reason: e.to_string(),
            }),
        }
    }
    if new_records.is_empty() {
        return Err(Error::validation(format!(
            "no readable images in {} ({} file(s) skipped)",
            dir.display(),
            report.skipped.len()
        )));
    }
    report.added = new_records.len();
    manifest.records.extend(new_records);
    Ok(report)
}

fn unique_id(base: &str, taken: &HashSet<String>) -> String {
    if !taken.contains(base) {
        return base.to_string();
    }
    (2..)
        .map(|n| format!("{base}~{n}"))
        .find(|id| !taken.contains(id))
        .expect("unbounded suffix search")
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DedupeReport {
    pub removed: usize,
    /// Removed id → surviving id.
    pub replaced_by: BTreeMap<String, String>,
}

/// Collapses records sharing a content hash onto the lexicographically
/// smallest id of each group. Augmented children of a removed record are
/// re-pointed to the survivor when labels agree and dropped otherwise.
pub fn dedupe(manifest: &mut DatasetManifest) -> DedupeReport {
    let mut survivor: HashMap<&str, &str> = HashMap::new();
    for r in &manifest.records {
        if r.content_hash.is_empty() {
            continue;
        }
        survivor
            .entry(r.content_hash.as_str())
            .and_modify(|s| {
                if r.id.as_str() < *s {
                    *s = r.id.as_str();
                }
            })
            .or_insert(r.id.as_str());
    }
    let mut replaced_by: BTreeMap<String, String> = BTreeMap::new();
    for r in &manifest.records {
        if let Some(&s) = survivor.get(r.content_hash.as_str()) {
            if s != r.id {
                replaced_by.insert(r.id.clone(), s.to_string());
            }
        }
    }
    if replaced_by.is_empty() {
        return DedupeReport::default();
    }

    let by_id: HashMap<String, (CategoryLabel, Option<crate::ThreatLevel>, Provenance)> = manifest
        .records
        .iter()
        .map(|r| (r.id.clone(), (r.category.clone(), r.threat, r.provenance)))
        .collect();
    let before = manifest.records.len();
    let mut dropped_children = BTreeMap::new();
    manifest.records.retain_mut(|r| {
        if replaced_by.contains_key(&r.id) {
            return false;
        }
        if let Some(parent) = r.parent_id.clone() {
            if let Some(new_parent) = replaced_by.get(&parent) {
                let (cat, threat, prov) = &by_id[new_parent];
                if *cat == r.category && *threat == r.threat && *prov == Provenance::Original {
                    r.parent_id = Some(new_parent.clone());
                } else {
                    dropped_children.insert(r.id.clone(), parent);
                    return false;
                }
            }
        }
        true
    });
    if let Some(assignments) = manifest.split_assignments.as_mut() {
        assignments.retain(|id, _| !replaced_by.contains_key(id) && !dropped_children.contains_key(id));
    }
    DedupeReport {
        removed: before - manifest.records.len(),
        replaced_by,
    }
}
