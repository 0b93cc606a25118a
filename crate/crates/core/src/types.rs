//! Shared domain vocabulary: label spaces, threat levels, image records and
//! the dataset manifest with its JSON Lines representation.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An object category name drawn from a [`LabelSpace`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CategoryLabel(String);

impl CategoryLabel {
    pub fn new(name: impl Into<String>) -> Self {
        Self(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CategoryLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for CategoryLabel {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

/// A named, ordered set of category labels.
///
/// Member order is significant: it fixes the class-head output index of each
/// category and the row order of confusion matrices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawLabelSpace", into = "RawLabelSpace")]
pub struct LabelSpace {
    name: String,
    members: Vec<CategoryLabel>,
}

#[derive(Serialize, Deserialize)]
struct RawLabelSpace {
    name: String,
    members: Vec<CategoryLabel>,
}

impl TryFrom<RawLabelSpace> for LabelSpace {
    type Error = Error;

    fn try_from(raw: RawLabelSpace) -> Result<Self> {
        LabelSpace::new(raw.name, raw.members)
    }
}

impl From<LabelSpace> for RawLabelSpace {
    fn from(space: LabelSpace) -> Self {
        RawLabelSpace {
            name: space.name,
            members: space.members,
        }
    }
}

impl LabelSpace {
    /// Builds a label space, rejecting empty, single-member or duplicated member lists.
    pub fn new<I, L>(name: impl Into<String>, members: I) -> Result<Self>
    where
        I: IntoIterator<Item = L>,
        L: Into<CategoryLabel>,
    {
        let name = name.into();
        let members: Vec<CategoryLabel> = members.into_iter().map(Into::into).collect();
        if members.len() < 2 {
            return Err(Error::validation(format!(
                "label space {name:?} needs at least two members, got {}",
                members.len()
            )));
        }
        let mut seen = HashSet::new();
        for m in &members {
            if m.as_str().trim().is_empty() {
                return Err(Error::validation(format!(
                    "label space {name:?} has an empty member name"
                )));
            }
            if !seen.insert(m.as_str()) {
                return Err(Error::validation(format!(
                    "label space {name:?} lists {m} more than once"
                )));
            }
        }
        Ok(Self { name, members })
    }

    /// Airplane, Drone, Helicopter, UAV.
    pub fn avd() -> Self {
        Self::new("AVD", ["Airplane", "Drone", "Helicopter", "UAV"]).expect("static label space")
    }

    /// Airplane, Drone, Helicopter, Bird.
    pub fn aodta() -> Self {
        Self::new("AODTA", ["Airplane", "Drone", "Helicopter", "Bird"]).expect("static label space")
    }

    /// Looks up a preset space by case-insensitive name.
    pub fn preset(name: &str) -> Option<Self> {
        match name.to_ascii_uppercase().as_str() {
            "AVD" => Some(Self::avd()),
            "AODTA" => Some(Self::aodta()),
            _ => None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn members(&self) -> &[CategoryLabel] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn index_of(&self, label: &CategoryLabel) -> Option<usize> {
        self.members.iter().position(|m| m == label)
    }

    pub fn contains(&self, label: &CategoryLabel) -> bool {
        self.index_of(label).is_some()
    }

    /// Finds a member by case-insensitive name.
    pub fn resolve(&self, name: &str) -> Option<&CategoryLabel> {
        self.members
            .iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(name))
    }
}

impl fmt::Display for LabelSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {{", self.name)?;
        for (i, m) in self.members.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{m}")?;
        }
        f.write_str("}")
    }
}

/// Ordinal threat level. `Low < Medium < High`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ThreatLevel {
    #[serde(alias = "low", alias = "LOW")]
    Low,
    #[serde(alias = "medium", alias = "MEDIUM")]
    Medium,
    #[serde(alias = "high", alias = "HIGH")]
    High,
}

impl ThreatLevel {
    pub const ALL: [ThreatLevel; 3] = [ThreatLevel::Low, ThreatLevel::Medium, ThreatLevel::High];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ThreatLevel::Low => "Low",
            ThreatLevel::Medium => "Medium",
            ThreatLevel::High => "High",
        }
    }

    /// Upper-case name used as the row label of threat reports.
    pub fn report_label(self) -> &'static str {
        match self {
            ThreatLevel::Low => "LOW",
            ThreatLevel::Medium => "MEDIUM",
            ThreatLevel::High => "HIGH",
        }
    }
}

impl fmt::Display for ThreatLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ThreatLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "low" => Ok(ThreatLevel::Low),
            "medium" => Ok(ThreatLevel::Medium),
            "high" => Ok(ThreatLevel::High),
            other => Err(Error::validation(format!("unknown threat level {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Original,
    Augmented,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// One catalogued image with its labels and lineage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub source_dataset: String,
    pub path: PathBuf,
    pub width: u32,
    pub height: u32,
    pub category: CategoryLabel,
    pub threat: Option<ThreatLevel>,
    #[serde(default)]
    pub attributes: Vec<String>,
    pub provenance: Provenance,
    pub parent_id: Option<String>,
    pub augmentation_desc: Option<String>,
    pub content_hash: String,
}

impl ImageRecord {
    pub fn is_augmented(&self) -> bool {
        self.provenance == Provenance::Augmented
    }
}

/// Per-category record counts, in label-space order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryCounts(Vec<(CategoryLabel, usize)>);

impl CategoryCounts {
    pub fn get(&self, label: &CategoryLabel) -> usize {
        self.0
            .iter()
            .find(|(l, _)| l == label)
            .map_or(0, |(_, n)| *n)
    }

    pub fn total(&self) -> usize {
        self.0.iter().map(|(_, n)| n).sum()
    }

    pub fn max(&self) -> usize {
        self.0.iter().map(|(_, n)| *n).max().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&CategoryLabel, usize)> {
        self.0.iter().map(|(l, n)| (l, *n))
    }
}

/// The catalogue of a dataset: one label space, ordered records, and an
/// optional train/test assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub name: String,
    pub label_space: LabelSpace,
    pub records: Vec<ImageRecord>,
    pub split_assignments: Option<BTreeMap<String, Split>>,
    /// Free-form run notes (pipeline choices, seeds). Serialized in the header line.
    pub metadata: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct ManifestHeader {
    name: String,
    label_space: LabelSpace,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split_assignments: Option<BTreeMap<String, Split>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    metadata: BTreeMap<String, String>,
}

impl DatasetManifest {
    pub fn new(name: impl Into<String>, label_space: LabelSpace) -> Self {
        Self {
            name: name.into(),
            label_space,
            records: Vec::new(),
            split_assignments: None,
            metadata: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ImageRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Count of records per category of the label space.
    pub fn counts(&self) -> CategoryCounts {
        let mut counts: Vec<(CategoryLabel, usize)> = self
            .label_space
            .members()
            .iter()
            .map(|m| (m.clone(), 0))
            .collect();
        for r in &self.records {
            if let Some(i) = self.label_space.index_of(&r.category) {
                counts[i].1 += 1;
            }
        }
        CategoryCounts(counts)
    }

    /// Records assigned to `split`, in manifest order.
    pub fn split_records(&self, split: Split) -> Result<Vec<&ImageRecord>> {
        let assignments = self.split_assignments.as_ref().ok_or_else(|| {
            Error::validation(format!("manifest {:?} has no split assignments", self.name))
        })?;
        Ok(self
            .records
            .iter()
            .filter(|r| assignments.get(&r.id) == Some(&split))
            .collect())
    }

    /// Checks every structural invariant of the manifest.
    pub fn validate(&self) -> Result<()> {
        let mut by_id: HashMap<&str, &ImageRecord> = HashMap::with_capacity(self.records.len());
        for r in &self.records {
            if r.id.is_empty() {
                return Err(Error::validation("record with empty id"));
            }
            if by_id.insert(&r.id, r).is_some() {
                return Err(Error::validation(format!("duplicate record id {:?}", r.id)));
            }
            if !self.label_space.contains(&r.category) {
                return Err(Error::validation(format!(
                    "record {:?} has category {} outside label space {}",
                    r.id, r.category, self.label_space
                )));
            }
        }
        for r in &self.records {
            let augmented = r.provenance == Provenance::Augmented;
            if augmented != r.parent_id.is_some() || augmented != r.augmentation_desc.is_some() {
                return Err(Error::validation(format!(
                    "record {:?}: provenance, parent_id and augmentation_desc disagree",
                    r.id
                )));
            }
            if let Some(parent_id) = &r.parent_id {
                let parent = by_id.get(parent_id.as_str()).ok_or_else(|| {
                    Error::validation(format!(
                        "record {:?} names missing parent {parent_id:?}",
                        r.id
                    ))
                })?;
                if parent.provenance != Provenance::Original {
                    return Err(Error::validation(format!(
                        "record {:?} has augmented parent {parent_id:?}",
                        r.id
                    )));
                }
                if parent.category != r.category || parent.threat != r.threat {
                    return Err(Error::validation(format!(
                        "record {:?} labels differ from parent {parent_id:?}",
                        r.id
                    )));
                }
            }
        }
        if let Some(assignments) = &self.split_assignments {
            if assignments.len() != self.records.len()
                || !self.records.iter().all(|r| assignments.contains_key(&r.id))
            {
                return Err(Error::validation(
                    "split assignments must cover every record exactly once",
                ));
            }
        }
        Ok(())
    }

    /// Serializes to JSON Lines: a header line, then one record per line.
    pub fn to_jsonl(&self) -> Result<String> {
        let header = ManifestHeader {
            name: self.name.clone(),
            label_space: self.label_space.clone(),
            split_assignments: self.split_assignments.clone(),
            metadata: self.metadata.clone(),
        };
        let mut out = serde_json::to_string(&header).map_err(json_err)?;
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).map_err(json_err)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        Self::from_lines(text.lines().map(|l| Ok(l.to_string())))
    }

    fn from_lines(lines: impl Iterator<Item = Result<String>>) -> Result<Self> {
        let mut lines = lines
            .enumerate()
            .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()));
        let (_, header) = lines.next().ok_or_else(|| Error::Format {
            what: "manifest",
            message: "missing header line".into(),
        })?;
        let header: ManifestHeader = serde_json::from_str(&header?).map_err(|e| Error::Format {
            what: "manifest header",
            message: e.to_string(),
        })?;
        let mut records = Vec::new();
        for (i, line) in lines {
            let record: ImageRecord =
                serde_json::from_str(&line?).map_err(|e| Error::Format {
                    what: "manifest record",
                    message: format!("line {}: {e}", i + 1),
                })?;
            records.push(record);
        }
        let manifest = DatasetManifest {
            name: header.name,
            label_space: header.label_space,
            records,
            split_assignments: header.split_assignments,
            metadata: header.metadata,
        };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(self.to_jsonl()?.as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = BufReader::new(file);
        Self::from_lines(reader.lines().map(|l| l.map_err(|e| Error::io(path, e))))
    }
}

/// Per-category counts of a manifest. Sum of counts equals the record count.
pub fn manifest_counts(manifest: &DatasetManifest) -> CategoryCounts {
    manifest.counts()
}

fn json_err(e: serde_json::Error) -> Error {
    Error::Format {
        what: "json",
        message: e.to_string(),
    }
}
