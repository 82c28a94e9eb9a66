//! Record ingestion, the stratified three-way split and per-subclass binary
//! training sets.
//!
//! Records travel as JSONL, one object per line:
//!
//! ```text
//! {"id": "p1", "label": "nature", "tags": ["flower", "macro"], "features": [0.1, 0.2]}
//! ```
//!
//! Tags and labels are normalized on the way in (lowercase, trimmed, inner
//! whitespace collapsed), so the co-occurrence counts downstream see one
//! spelling per tag.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Normalizes free-form tag text. Returns `None` when nothing is left.
pub fn normalize(text: &str) -> Option<String> {
    let joined = text
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ");
    (!joined.is_empty()).then_some(joined)
}

/// A normalized user tag.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Tag(String);

impl Tag {
    pub fn new(text: &str) -> Option<Self> {
        normalize(text).map(Tag)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Tag {
    type Error = String;

    fn try_from(value: String) -> std::result::Result<Self, String> {
        Tag::new(&value).ok_or_else(|| format!("empty tag {value:?}"))
    }
}

impl From<Tag> for String {
    fn from(tag: Tag) -> String {
        tag.0
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A normalized top-level class label. Its index comes from the [`Classes`]
/// list of the run.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ClassLabel(String);

impl ClassLabel {
    pub fn new(text: &str) -> Option<Self> {
        normalize(text).map(ClassLabel)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// The tag spelled like this label.
    pub fn as_tag(&self) -> Tag {
        Tag(self.0.clone())
    }
}

impl TryFrom<String> for ClassLabel {
    type Error = String;

    fn try_from(value: String) -> std::result::Result<Self, String> {
        ClassLabel::new(&value).ok_or_else(|| format!("empty class label {value:?}"))
    }
}

impl From<ClassLabel> for String {
    fn from(label: ClassLabel) -> String {
        label.0
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// The ordered list of top-level classes; position is the class index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ClassLabel>", into = "Vec<ClassLabel>")]
pub struct Classes {
    labels: Vec<ClassLabel>,
    index: HashMap<ClassLabel, usize>,
}

impl Classes {
    pub fn new(labels: Vec<ClassLabel>) -> Result<Self> {
        let mut index = HashMap::with_capacity(labels.len());
        for (i, label) in labels.iter().enumerate() {
            if index.insert(label.clone(), i).is_some() {
                return Err(Error::Config(format!("class {label} listed twice")));
            }
        }
        Ok(Classes { labels, index })
    }

    /// Distinct labels of `records`, sorted by text.
    pub fn from_records(records: &[ImageRecord]) -> Self {
        let labels: BTreeSet<&ClassLabel> = records.iter().map(|r| &r.label).collect();
        Classes::new(labels.into_iter().cloned().collect()).expect("labels are distinct")
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &ClassLabel) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn labels(&self) -> &[ClassLabel] {
        &self.labels
    }

    pub fn get(&self, index: usize) -> &ClassLabel {
        &self.labels[index]
    }
}

impl TryFrom<Vec<ClassLabel>> for Classes {
    type Error = String;

    fn try_from(value: Vec<ClassLabel>) -> std::result::Result<Self, String> {
        Classes::new(value).map_err(|e| e.to_string())
    }
}

impl From<Classes> for Vec<ClassLabel> {
    fn from(classes: Classes) -> Self {
        classes.labels
    }
}

/// One photo: id, top-level label, tag set and precomputed feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub label: ClassLabel,
    pub tags: BTreeSet<Tag>,
    pub features: Vec<f64>,
}

impl ImageRecord {
    pub fn has_tag(&self, tag: &Tag) -> bool {
        self.tags.contains(tag)
    }
}

/// Identity of a subclass: the parent class and the tag that defines it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SubclassId {
    pub parent: ClassLabel,
    pub tag: Tag,
}

impl fmt::Display for SubclassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.parent, self.tag)
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Required feature dimension; defaults to the first record's.
    pub expected_dim: Option<usize>,
    /// When set, labels outside this list are rejected.
    pub allowed_labels: Option<Classes>,
}

#[derive(Deserialize)]
struct RawRecord {
    id: String,
    label: String,
    #[serde(default)]
    tags: Vec<String>,
    features: Vec<f64>,
}

/// Reads a JSONL corpus, checking the feature dimension against
/// `expected_dim` (or the first record when `None`).
pub fn load_records(path: &Path, expected_dim: Option<usize>) -> Result<Vec<ImageRecord>> {
    load_records_with(
        path,
        &LoadOptions {
            expected_dim,
            allowed_labels: None,
        },
    )
}

pub fn load_records_with(path: &Path, options: &LoadOptions) -> Result<Vec<ImageRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_records(BufReader::new(file), options).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// Parses JSONL from any reader. Blank lines are skipped; line numbers in
/// errors are 1-based.
pub fn parse_records(reader: impl BufRead, options: &LoadOptions) -> Result<Vec<ImageRecord>> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    let mut dim = options.expected_dim;

    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io("<reader>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| Error::MalformedLine {
            line: line_no,
            message,
        };
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;

        let label = ClassLabel::new(&raw.label)
            .ok_or_else(|| malformed("empty class label".to_string()))?;
        if let Some(allowed) = &options.allowed_labels {
            if allowed.index_of(&label).is_none() {
                return Err(Error::UnknownLabel {
                    line: line_no,
                    label: label.0,
                });
            }
        }
        let tags = raw
            .tags
            .iter()
            .map(|t| Tag::new(t).ok_or_else(|| malformed(format!("empty tag {t:?}"))))
            .collect::<Result<BTreeSet<_>>>()?;

        let expected = *dim.get_or_insert(raw.features.len());
        if expected == 0 {
            return Err(malformed("feature vector is empty".to_string()));
        }
        if raw.features.len() != expected {
            return Err(Error::DimensionMismatch {
                line: line_no,
                expected,
                found: raw.features.len(),
            });
        }
        if let Some(pos) = raw.features.iter().position(|v| !v.is_finite()) {
            return Err(malformed(format!("feature {pos} is not finite")));
        }
        if !seen.insert(raw.id.clone()) {
            return Err(Error::DuplicateId {
                line: line_no,
                id: raw.id,
            });
        }
        records.push(ImageRecord {
            id: raw.id,
            label,
            tags,
            features: raw.features,
        });
    }
    Ok(records)
}

/// Writes records as JSONL with shortest round-trip float formatting.
pub fn write_records(path: &Path, records: &[ImageRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for record in records {
        let line = serde_json::to_string(record).map_err(|e| Error::format("dataset", e))?;
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// The three disjoint parts: subclass-model training, top-model training and
/// validation.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub part_subclass: Vec<ImageRecord>,
    pub part_top: Vec<ImageRecord>,
    pub part_val: Vec<ImageRecord>,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn parts(&self) -> [&[ImageRecord]; 3] {
        [&self.part_subclass, &self.part_top, &self.part_val]
    }
}

/// Part sizes for `n` records: floor-proportional to `ratios`, with the
/// remainder handed out one record at a time in part order.
pub fn part_sizes(n: usize, ratios: [u32; 3]) -> [usize; 3] {
    let total: u64 = ratios.iter().map(|&r| r as u64).sum();
    let mut sizes = ratios.map(|r| (n as u64 * r as u64 / total) as usize);
    let mut remainder = n - sizes.iter().sum::<usize>();
    for size in sizes.iter_mut() {
        if remainder == 0 {
            break;
        }
        *size += 1;
        remainder -= 1;
    }
    sizes
}

/// Stratified seeded split. Within each class (in label order) the records
/// are shuffled, then cut into parts of [`part_sizes`].
pub fn split_dataset(records: &[ImageRecord], ratios: [u32; 3], seed: u64) -> Result<DatasetSplit> {
    if records.is_empty() {
        return Err(Error::Config("cannot split an empty corpus".into()));
    }
    if ratios.contains(&0) {
        return Err(Error::Config(format!(
            "split ratios must be >= 1, got {ratios:?}"
        )));
    }

    let mut by_class: BTreeMap<&ClassLabel, Vec<&ImageRecord>> = BTreeMap::new();
    for record in records {
        by_class.entry(&record.label).or_default().push(record);
    }

    let mut split = DatasetSplit {
        part_subclass: Vec::new(),
        part_top: Vec::new(),
        part_val: Vec::new(),
        seed,
    };
    for (class_index, (label, mut members)) in by_class.into_iter().enumerate() {
        if members.len() < 3 {
            return Err(Error::ClassTooSmall {
                class: label.to_string(),
                count: members.len(),
            });
        }
        let mut rng = seed::rng(seed::derive(
            seed,
            &[seed::stream::SPLIT, class_index as u64],
        ));
        members.shuffle(&mut rng);
        let [a, b, _] = part_sizes(members.len(), ratios);
        split
            .part_subclass
            .extend(members[..a].iter().map(|&r| r.clone()));
        split
            .part_top
            .extend(members[a..a + b].iter().map(|&r| r.clone()));
        split
            .part_val
            .extend(members[a + b..].iter().map(|&r| r.clone()));
    }
    Ok(split)
}

/// Positives and negatives for one subclass classifier.
#[derive(Debug, Clone)]
pub struct BinaryTrainingSet<'a> {
    pub subclass: SubclassId,
    pub positives: Vec<&'a ImageRecord>,
    pub negatives: Vec<&'a ImageRecord>,
}

impl<'a> BinaryTrainingSet<'a> {
    /// Feature rows and labels, positives first.
    pub fn examples(&self) -> (Vec<&'a [f64]>, Vec<bool>) {
        let xs = self
            .positives
            .iter()
            .chain(&self.negatives)
            .map(|r| r.features.as_slice())
            .collect();
        let ys = std::iter::repeat_n(true, self.positives.len())
            .chain(std::iter::repeat_n(false, self.negatives.len()))
            .collect();
        (xs, ys)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.positives
            .iter()
            .chain(&self.negatives)
            .map(|r| r.id.as_str())
    }
}

/// Uniform sample of `k` items from `items`, kept in their original order.
fn sample_ordered<'a, T, R: rand::Rng + ?Sized>(
    rng: &mut R,
    items: &[&'a T],
    k: usize,
) -> Vec<&'a T> {
    if k >= items.len() {
        return items.to_vec();
    }
    let mut picked = index::sample(rng, items.len(), k).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| items[i]).collect()
}

/// Splits `total` across groups with the given capacities as evenly as
/// possible; groups that run out pass their share on to the others.
fn even_quotas(total: usize, capacities: &[usize]) -> Vec<usize> {
    let mut quota = vec![0; capacities.len()];
    let mut remaining = total.min(capacities.iter().sum());
    while remaining > 0 {
        let open: Vec<usize> = (0..capacities.len())
            .filter(|&c| quota[c] < capacities[c])
            .collect();
        let share = remaining / open.len();
        let extra = remaining % open.len();
        for (pos, &c) in open.iter().enumerate() {
            let give = (share + usize::from(pos < extra)).min(capacities[c] - quota[c]);
            quota[c] += give;
            remaining -= give;
        }
    }
    quota
}

/// Builds the balanced training set for one subclass.
///
/// Positives carry the subclass tag and the parent label and are capped at
/// `cap` by seeded sampling. Negatives are records without the tag, sampled
/// evenly across top-level classes, `round(neg_ratio * |positives|)` of them
/// or as many as exist.
pub fn build_binary_set<'a>(
    pool: &'a [ImageRecord],
    subclass: &SubclassId,
    cap: usize,
    neg_ratio: f64,
    seed: u64,
) -> Result<BinaryTrainingSet<'a>> {
    if cap == 0 {
        return Err(Error::Config("subclass cap must be >= 1".into()));
    }
    if !(neg_ratio > 0.0 && neg_ratio.is_finite()) {
        return Err(Error::Config(format!(
            "neg_ratio must be > 0, got {neg_ratio}"
        )));
    }

    let matching: Vec<&ImageRecord> = pool
        .iter()
        .filter(|r| r.label == subclass.parent && r.has_tag(&subclass.tag))
        .collect();
    if matching.is_empty() {
        return Err(Error::NoPositives {
            parent: subclass.parent.to_string(),
            tag: subclass.tag.to_string(),
        });
    }

    let mut rng = seed::rng(seed);
    let positives = sample_ordered(&mut rng, &matching, cap);

    let mut untagged: BTreeMap<&ClassLabel, Vec<&ImageRecord>> = BTreeMap::new();
    for record in pool.iter().filter(|r| !r.has_tag(&subclass.tag)) {
        untagged.entry(&record.label).or_default().push(record);
    }
    let groups: Vec<Vec<&ImageRecord>> = untagged.into_values().collect();
    let wanted = (neg_ratio * positives.len() as f64).round() as usize;
    let capacities: Vec<usize> = groups.iter().map(Vec::len).collect();
    let quotas = even_quotas(wanted, &capacities);

    let mut negatives = Vec::new();
    for (group, quota) in groups.iter().zip(quotas) {
        negatives.extend(sample_ordered(&mut rng, group, quota));
    }

    Ok(BinaryTrainingSet {
        subclass: subclass.clone(),
        positives,
        negatives,
    })
}
