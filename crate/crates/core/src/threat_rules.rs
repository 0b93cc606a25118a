//! Priority-ordered rules that assign a [`ThreatLevel`] to image records
//! from their category and free-text attributes.
//!
//! A rule matches a record when its category equals the record's category
//! (or the rule uses the `*` wildcard) and its pattern occurs,
//! case-insensitively, inside at least one of the record's attributes. An
//! empty pattern matches every record of the category. Among matching rules
//! the one with the highest priority decides.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::types::{CategoryLabel, DatasetManifest, ImageRecord, ThreatLevel};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum CategoryMatch {
    Any,
    Exact(CategoryLabel),
}

impl CategoryMatch {
    fn matches(&self, label: &CategoryLabel) -> bool {
        match self {
            CategoryMatch::Any => true,
            CategoryMatch::Exact(l) => l.as_str().eq_ignore_ascii_case(label.as_str()),
        }
    }
}

impl fmt::Display for CategoryMatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CategoryMatch::Any => f.write_str("*"),
            CategoryMatch::Exact(l) => write!(f, "{l}"),
        }
    }
}

impl Serialize for CategoryMatch {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CategoryMatch {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(if s == "*" {
            CategoryMatch::Any
        } else {
            CategoryMatch::Exact(CategoryLabel::new(s))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThreatRule {
    pub category: CategoryMatch,
    pub attribute_pattern: String,
    pub level: ThreatLevel,
    pub priority: i64,
}

impl ThreatRule {
    pub fn new(category: &str, pattern: &str, level: ThreatLevel, priority: i64) -> Self {
        let category = if category == "*" {
            CategoryMatch::Any
        } else {
            CategoryMatch::Exact(category.into())
        };
        Self {
            category,
            attribute_pattern: pattern.to_string(),
            level,
            priority,
        }
    }

    pub fn matches(&self, record: &ImageRecord) -> bool {
        if !self.category.matches(&record.category) {
            return false;
        }
        if self.attribute_pattern.is_empty() {
            return true;
        }
        let needle = self.attribute_pattern.to_lowercase();
        record
            .attributes
            .iter()
            .any(|a| a.to_lowercase().contains(&needle))
    }
}

/// Rules sorted by descending priority, plus an optional fallback level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleSet {
    rules: Vec<ThreatRule>,
    default_level: Option<ThreatLevel>,
}

#[derive(Serialize, Deserialize)]
struct RuleFile {
    rules: Vec<ThreatRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    default_level: Option<ThreatLevel>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RuleFileForm {
    Bare(Vec<ThreatRule>),
    Full(RuleFile),
}

impl RuleSet {
    pub fn new(mut rules: Vec<ThreatRule>, default_level: Option<ThreatLevel>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &rules {
            if !seen.insert(r.priority) {
                return Err(Error::validation(format!(
                    "threat rule priority {} is used more than once",
                    r.priority
                )));
            }
        }
        rules.sort_by_key(|r| std::cmp::Reverse(r.priority));
        Ok(Self {
            rules,
            default_level,
        })
    }

    /// The example criteria table: civilian/hobby/news/live objects are Low,
    /// fighter/military/attack objects are High, anything else falls back to
    /// Medium.
    pub fn default_rules() -> Self {
        use ThreatLevel::{High, Low};
        Self::new(
            vec![
                ThreatRule::new("Airplane", "fighter", High, 80),
                ThreatRule::new("Bird", "military", High, 70),
                ThreatRule::new("Drone", "military", High, 60),
                ThreatRule::new("Helicopter", "attack", High, 50),
                ThreatRule::new("Airplane", "civilian", Low, 40),
                ThreatRule::new("Bird", "live", Low, 30),
                ThreatRule::new("Drone", "hobby", Low, 20),
                ThreatRule::new("Helicopter", "news", Low, 10),
            ],
            Some(ThreatLevel::Medium),
        )
        .expect("static rules have unique priorities")
    }

    pub fn rules(&self) -> &[ThreatRule] {
        &self.rules
    }

    pub fn default_level(&self) -> Option<ThreatLevel> {
        self.default_level
    }

    /// Parses either a bare JSON array of rules or an object
    /// `{"rules": [...], "default_level": "Medium"}`.
    pub fn from_json(text: &str) -> Result<Self> {
        let form: RuleFileForm = serde_json::from_str(text).map_err(|e| Error::Format {
            what: "rules file",
            message: e.to_string(),
        })?;
        match form {
            RuleFileForm::Bare(rules) => Self::new(rules, None),
            RuleFileForm::Full(f) => Self::new(f.rules, f.default_level),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&RuleFile {
            rules: self.rules.clone(),
            default_level: self.default_level,
        })
        .expect("rules serialize")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Highest-priority rule matching the record, if any.
    pub fn matching_rule(&self, record: &ImageRecord) -> Option<&ThreatRule> {
        self.rules.iter().find(|r| r.matches(record))
    }
}

/// Threat level of a single record.
pub fn annotate(record: &ImageRecord, ruleset: &RuleSet) -> Result<ThreatLevel> {
    ruleset
        .matching_rule(record)
        .map(|r| r.level)
        .or(ruleset.default_level)
        .ok_or_else(|| Error::Unannotatable {
            count: 1,
            ids: vec![record.id.clone()],
        })
}

/// Annotates every record. Augmented records take their parent's level
/// regardless of the rules. Fails with the full list of unannotatable ids.
pub fn annotate_manifest(manifest: &DatasetManifest, ruleset: &RuleSet) -> Result<DatasetManifest> {
    let originals: Vec<Result<ThreatLevel>> = manifest
        .records
        .par_iter()
        .map(|r| {
            if r.is_augmented() {
                Ok(ThreatLevel::Low)
            } else {
                annotate(r, ruleset)
            }
        })
        .collect();

    let mut failed = Vec::new();
    let mut levels: HashMap<&str, ThreatLevel> = HashMap::new();
    for (r, level) in manifest.records.iter().zip(&originals) {
        if r.is_augmented() {
            continue;
        }
        match level {
            Ok(l) => {
                levels.insert(&r.id, *l);
            }
            Err(_) => failed.push(r.id.clone()),
        }
    }
    if !failed.is_empty() {
        return Err(Error::Unannotatable {
            count: failed.len(),
            ids: failed,
        });
    }

    let mut out = manifest.clone();
    for r in &mut out.records {
        let key = if r.is_augmented() {
            r.parent_id.as_deref().ok_or_else(|| {
                Error::validation(format!("augmented record {:?} has no parent", r.id))
            })?
        } else {
            r.id.as_str()
        };
        let level = *levels.get(key).ok_or_else(|| {
            Error::validation(format!("record {:?} refers to unknown parent {key:?}", r.id))
        })?;
        r.threat = Some(level);
    }
    Ok(out)
}

/// Number of records per threat level (records without a level are ignored).
pub fn level_counts(manifest: &DatasetManifest) -> [usize; 3] {
    let mut counts = [0; 3];
    for r in &manifest.records {
        if let Some(t) = r.threat {
            counts[t.index()] += 1;
        }
    }
    counts
}
