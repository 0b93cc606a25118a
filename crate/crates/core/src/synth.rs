//! Deterministic synthetic dataset of coloured shapes.
//!
//! Each 32×32 image shows one filled shape on a dark, noisy background. The
//! shape encodes the category (filled square, disc, plus, ring, in
//! label-space order) and the dominant hue encodes the threat level (green = Low,
//! blue = Medium, red = High). Size, position and colour are jittered.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::curation::ingest::SourceSpec;
use crate::curation::preprocess::to_rgb_image;
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::NumericArray;
use crate::threat_rules::{RuleSet, ThreatRule};
use crate::training::LabeledImages;
use crate::types::{LabelSpace, ThreatLevel};
use crate::{IMAGE_CHANNELS, IMAGE_SIZE};

/// Number of distinct shapes, hence the label-space size the generator needs.
pub const SHAPES: usize = 4;

// Shapes are bright in every channel so their outline is visible whatever the
// hue; the hue only tilts the balance between channels.
const HUES: [[f64; 3]; 3] = [[0.45, 0.95, 0.5], [0.5, 0.6, 0.95], [0.95, 0.45, 0.45]];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Square,
    Disc,
    Plus,
    Ring,
}

impl Shape {
    pub fn from_index(i: usize) -> Option<Self> {
        [Shape::Square, Shape::Disc, Shape::Plus, Shape::Ring]
            .get(i)
            .copied()
    }

    /// Half-size range in pixels. Ranges are chosen so that the lit areas of
    /// different shapes never overlap.
    fn size_range(self) -> (f64, f64) {
        match self {
            Shape::Square => (11.0, 12.0),
            Shape::Disc => (9.5, 10.5),
            Shape::Plus | Shape::Ring => (12.0, 13.0),
        }
    }

    /// Whether the offset `(dx, dy)` from the centre lies inside a shape of
    /// half-size `r`.
    fn contains(self, dx: f64, dy: f64, r: f64) -> bool {
        match self {
            Shape::Square => dx.abs() <= r && dy.abs() <= r,
            Shape::Disc => dx * dx + dy * dy <= r * r,
            Shape::Plus => {
                (dx.abs() <= 2.0 && dy.abs() <= r) || (dy.abs() <= 2.0 && dx.abs() <= r)
            }
            Shape::Ring => {
                let d2 = dx * dx + dy * dy;
                d2 <= r * r && d2 >= (r - 2.0) * (r - 2.0)
            }
        }
    }
}

/// Renders one image for the given category and threat indices.
pub fn render(category: usize, threat: usize, sample_seed: u64) -> Result<NumericArray> {
    let shape = Shape::from_index(category)
        .ok_or_else(|| Error::validation(format!("no synthetic shape for category {category}")))?;
    let hue = HUES
        .get(threat)
        .ok_or_else(|| Error::validation(format!("no synthetic hue for threat {threat}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
    let (lo, hi) = shape.size_range();
    let r = rng.random_range(lo..hi);
    let cx = 15.5 + rng.random_range(-2.0..2.0);
    let cy = 15.5 + rng.random_range(-2.0..2.0);
    let colour: Vec<f64> = hue
        .iter()
        .map(|&c| (c + rng.random_range(-0.08..0.08f64)).clamp(0.0, 1.0))
        .collect();

    let mut values = Vec::with_capacity(IMAGE_SIZE * IMAGE_SIZE * IMAGE_CHANNELS);
    for y in 0..IMAGE_SIZE {
        for x in 0..IMAGE_SIZE {
            let inside = shape.contains(x as f64 - cx, y as f64 - cy, r);
            for &c in &colour {
                let noise: f64 = rng.random_range(0.0..0.12);
                values.push(if inside { (c - noise / 2.0).max(0.0) } else { noise });
            }
        }
    }
    NumericArray::new(vec![IMAGE_SIZE, IMAGE_SIZE, IMAGE_CHANNELS], values)
}

/// Category and threat indices of the `i`-th sample: all twelve combinations
/// cycle in turn, so every prefix of length 12k is balanced.
pub fn sample_labels(i: usize) -> (usize, usize) {
    (i % SHAPES, (i / SHAPES) % ThreatLevel::ALL.len())
}

fn check_space(label_space: &LabelSpace) -> Result<()> {
    if label_space.len() != SHAPES {
        return Err(Error::validation(format!(
            "the synthetic generator needs a {SHAPES}-category label space, got {label_space}"
        )));
    }
    Ok(())
}

/// Generates `n` labelled images in memory.
pub fn generate(label_space: &LabelSpace, n: usize, seed: u64) -> Result<LabeledImages> {
    check_space(label_space)?;
    let images: Vec<NumericArray> = (0..n)
        .into_par_iter()
        .map(|i| {
            let (c, t) = sample_labels(i);
            render(c, t, seed::derive(seed, &[i as u64]))
        })
        .collect::<Result<_>>()?;
    let mut out = LabeledImages::new(label_space.clone());
    for (i, img) in images.iter().enumerate() {
        let (c, t) = sample_labels(i);
        out.push(format!("synth/{i:05}"), img, c, t)?;
    }
    Ok(out)
}

/// Disjoint train and test sets drawn from independent seed streams.
pub fn generate_split(
    label_space: &LabelSpace,
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> Result<(LabeledImages, LabeledImages)> {
    Ok((
        generate(label_space, n_train, seed::derive(seed, &[0]))?,
        generate(label_space, n_test, seed::derive(seed, &[1]))?,
    ))
}

/// Attribute string carried by synthetic records of a threat level.
pub fn threat_attribute(level: ThreatLevel) -> String {
    format!("synth-threat-{}", level.as_str().to_lowercase())
}

/// Rules mapping the synthetic threat attributes to their levels for every
/// category, with no default level.
pub fn ruleset() -> RuleSet {
    let rules = ThreatLevel::ALL
        .iter()
        .enumerate()
        .map(|(i, &level)| ThreatRule::new("*", &threat_attribute(level), level, 10 * (i as i64 + 1)))
        .collect();
    RuleSet::new(rules, None).expect("distinct priorities")
}

/// Files produced by [`write_dataset`].
#[derive(Debug, Clone)]
pub struct SynthDataset {
    /// One source per (category, threat) directory.
    pub sources: Vec<SourceSpec>,
    pub rules_path: PathBuf,
    pub images_written: usize,
}

/// Writes `per_combination` PNGs for every (category, threat) pair to
/// `dir/<Category>/<level>/NNNN.png`, plus `rules.json` and `sources.txt`
/// (one `DIR:CATEGORY:NAME:ATTRIBUTE` line per source).
pub fn write_dataset(
    dir: &Path,
    label_space: &LabelSpace,
    per_combination: usize,
    seed: u64,
) -> Result<SynthDataset> {
    check_space(label_space)?;
    let mut jobs = Vec::new();
    let mut sources = Vec::new();
    for (ci, category) in label_space.members().iter().enumerate() {
        for level in ThreatLevel::ALL {
            let sub = dir.join(category.as_str()).join(level.as_str().to_lowercase());
            fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
            for k in 0..per_combination {
                jobs.push((ci, level.index(), k, sub.join(format!("{k:04}.png"))));
            }
            sources.push(
                SourceSpec::new(
                    &sub,
                    format!("synth-{}-{}", category.as_str().to_lowercase(), level.as_str().to_lowercase()),
                    category.clone(),
                )
                .with_attributes([threat_attribute(level)]),
            );
        }
    }
    jobs.par_iter().try_for_each(|(c, t, k, path)| -> Result<()> {
        let img = render(*c, *t, seed::derive(seed, &[*c as u64, *t as u64, *k as u64]))?;
        to_rgb_image(&img)?
            .save(path)
            .map_err(|e| Error::Format { what: "png", message: format!("{}: {e}", path.display()) })
    })?;

    let rules_path = dir.join("rules.json");
    fs::write(&rules_path, ruleset().to_json()).map_err(|e| Error::io(&rules_path, e))?;
    let listing: String = sources
        .iter()
        .map(|s| {
            format!(
                "{}:{}:{}:{}\n",
                s.directory.display(),
                s.category,
                s.source_name,
                s.attributes.join(",")
            )
        })
        .collect();
    let listing_path = dir.join("sources.txt");
    fs::write(&listing_path, listing).map_err(|e| Error::io(&listing_path, e))?;
    Ok(SynthDataset {
        sources,
        rules_path,
        images_written: jobs.len(),
    })
}
