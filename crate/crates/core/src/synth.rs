//! Seeded synthetic corpora with a known subclass structure.
//!
//! Every top-level class is a balanced mixture of Gaussian clusters, one per
//! subclass, and every cluster has its own tag. Cluster centers sit at
//! `±radius` on the coordinate axes. The first two clusters of each class
//! are an antipodal pair on one axis, so no hyperplane separates two classes,
//! while every single cluster is cut off from the rest by its own axis.
//!
//! Tags per record: the class label, the cluster tag (replaced with
//! probability `tag_noise` by the tag of a random other cluster) and one
//! generic tag shared by all classes.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{ClassLabel, ImageRecord, Tag};
use crate::error::{Error, Result};
use crate::seed;

const CLASS_NAMES: [&str; 10] = [
    "beach", "food", "nature", "people", "sky", "music", "london", "wedding", "travel", "2012",
];
const GENERIC_TAGS: [&str; 4] = ["photo", "canon", "summer", "flickr"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub classes: usize,
    pub subclasses_per_class: usize,
    pub dim: usize,
    pub train_records: usize,
    pub test_records: usize,
    /// Probability that a record's cluster tag is swapped for another cluster's.
    pub tag_noise: f64,
    pub radius: f64,
    pub spread: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            classes: 3,
            subclasses_per_class: 3,
            dim: 10,
            train_records: 600,
            test_records: 300,
            tag_noise: 0.1,
            radius: 4.0,
            spread: 1.0,
            seed: 0,
        }
    }
}

pub struct SynthCorpus {
    pub train: Vec<ImageRecord>,
    pub test: Vec<ImageRecord>,
}

pub fn class_name(index: usize, classes: usize) -> String {
    if classes <= CLASS_NAMES.len() {
        CLASS_NAMES[index].to_string()
    } else {
        format!("class{index}")
    }
}

pub fn subclass_tag(class: &str, sub: usize) -> String {
    format!("{class}-sub{sub}")
}

pub fn generate(config: &SynthConfig) -> Result<SynthCorpus> {
    if config.classes < 2 || config.subclasses_per_class < 1 || config.dim < 2 {
        return Err(Error::Config(
            "synth needs >= 2 classes, >= 1 subclass per class and dim >= 2".into(),
        ));
    }
    if !(0.0..=1.0).contains(&config.tag_noise) || !(config.spread > 0.0) {
        return Err(Error::Config(
            "synth tag_noise must be in [0, 1] and spread > 0".into(),
        ));
    }
    let k = config.classes;
    let s = config.subclasses_per_class;
    let clusters = k * s;
    if clusters > 2 * config.dim {
        return Err(Error::Config(format!(
            "synth places {clusters} clusters on signed axes; dim must be >= {}",
            clusters.div_ceil(2)
        )));
    }
    // Cluster m has center sign(m) * radius * e_{m / 2}.
    let center = |m: usize| -> (usize, f64) {
        let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
        (m / 2, sign * config.radius)
    };
    // Class c owns clusters 2c and 2c + 1 when it has two or more; the rest
    // are dealt round-robin.
    let owner: Vec<usize> = (0..clusters)
        .map(|m| {
            if s >= 2 && m < 2 * k {
                m / 2
            } else if s >= 2 {
                (m - 2 * k) % k
            } else {
                m
            }
        })
        .collect();
    let members: Vec<Vec<usize>> = (0..k)
        .map(|c| (0..clusters).filter(|&m| owner[m] == c).collect())
        .collect();
    let names: Vec<String> = (0..k).map(|c| class_name(c, k)).collect();
    let cluster_tags: Vec<String> = (0..clusters)
        .map(|m| {
            let c = owner[m];
            let sub = members[c]
                .iter()
                .position(|&o| o == m)
                .expect("member of its class");
            subclass_tag(&names[c], sub)
        })
        .collect();
    let noise = Normal::new(0.0, config.spread).expect("spread is positive");

    let mut rng = seed::rng(seed::derive(config.seed, &[seed::stream::SYNTH]));
    let mut make = |prefix: &str, n: usize| -> Vec<ImageRecord> {
        (0..n)
            .map(|i| {
                // Round-robin over classes, then over each class's clusters.
                let class = i % k;
                let m = members[class][(i / k) % s];
                let mut features: Vec<f64> =
                    (0..config.dim).map(|_| noise.sample(&mut rng)).collect();
                let (axis, offset) = center(m);
                features[axis] += offset;

                let cluster_tag = if rng.random_bool(config.tag_noise) && clusters > 1 {
                    let other = (0..clusters).filter(|&o| o != m).collect::<Vec<_>>();
                    cluster_tags[*other.choose(&mut rng).expect("non-empty")].clone()
                } else {
                    cluster_tags[m].clone()
                };
                let generic = GENERIC_TAGS.choose(&mut rng).expect("non-empty");
                let tags: BTreeSet<Tag> = [names[class].as_str(), cluster_tag.as_str(), generic]
                    .iter()
                    .map(|t| Tag::new(t).expect("non-empty tag"))
                    .collect();
                ImageRecord {
                    id: format!("{prefix}-{i:06}"),
                    label: ClassLabel::new(&names[class]).expect("non-empty label"),
                    tags,
                    features,
                }
            })
            .collect()
    };
    let train = make("train", config.train_records);
    let test = make("test", config.test_records);
    Ok(SynthCorpus { train, test })
}
