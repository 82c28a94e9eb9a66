//! Subclass mining from tag/class co-occurrence.
//!
//! `C[i][j]` counts the records of class `j` that carry tag `i`. Each row is
//! normalized into a distinctive score `S[i][j] = C[i][j] / sum_j C[i][j]`,
//! the share of a tag's class-conditioned occurrences falling in class `j`.
//! A tag whose score for a class is strictly above `thr_distin` becomes a
//! candidate subclass of that class; candidates are ranked by how many photos
//! of the class carry them and the best `top_k` are kept.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dataset::{ClassLabel, Classes, ImageRecord, SubclassId, Tag};
use crate::error::{Error, Result};

/// Distinct tags in first-occurrence order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TagVocabulary {
    tags: Vec<Tag>,
    index: HashMap<Tag, usize>,
}

impl TagVocabulary {
    /// Returns the index of `tag`, adding it if unseen.
    pub fn intern(&mut self, tag: &Tag) -> usize {
        if let Some(&i) = self.index.get(tag) {
            return i;
        }
        self.tags.push(tag.clone());
        self.index.insert(tag.clone(), self.tags.len() - 1);
        self.tags.len() - 1
    }

    pub fn index_of(&self, tag: &Tag) -> Option<usize> {
        self.index.get(tag).copied()
    }

    pub fn tags(&self) -> &[Tag] {
        &self.tags
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }
}

/// Dense `|T| x K` count matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CooccurrenceMatrix {
    pub vocabulary: TagVocabulary,
    pub classes: Classes,
    counts: Vec<u64>,
}

impl CooccurrenceMatrix {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn row(&self, tag: usize) -> &[u64] {
        let k = self.num_classes();
        &self.counts[tag * k..(tag + 1) * k]
    }

    pub fn count(&self, tag: usize, class: usize) -> u64 {
        self.counts[tag * self.num_classes() + class]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Sparse `tag,class,count` triplets for the non-zero entries.
    pub fn write_triplets_csv(&self, out: impl Write) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        let fail = |e: csv::Error| Error::format("tagmine", e);
        writer
            .write_record(["tag", "class", "count"])
            .map_err(fail)?;
        for (i, tag) in self.vocabulary.tags().iter().enumerate() {
            for (j, &c) in self.row(i).iter().enumerate() {
                if c > 0 {
                    writer
                        .write_record([tag.as_str(), self.classes.get(j).as_str(), &c.to_string()])
                        .map_err(fail)?;
                }
            }
        }
        writer.flush().map_err(|e| Error::io("<csv>", e))
    }
}

/// Counts tag/class co-occurrences over `records`.
pub fn build_cooccurrence(
    records: &[ImageRecord],
    classes: &Classes,
) -> Result<CooccurrenceMatrix> {
    let k = classes.len();
    let mut vocabulary = TagVocabulary::default();
    let mut counts: Vec<u64> = Vec::new();
    for record in records {
        let j = classes
            .index_of(&record.label)
            .ok_or_else(|| Error::LabelOutsideClasses {
                id: record.id.clone(),
                label: record.label.to_string(),
            })?;
        for tag in &record.tags {
            let i = vocabulary.intern(tag);
            if counts.len() < (i + 1) * k {
                counts.resize((i + 1) * k, 0);
            }
            counts[i * k + j] += 1;
        }
    }
    Ok(CooccurrenceMatrix {
        vocabulary,
        classes: classes.clone(),
        counts,
    })
}

/// Row-normalized scores aligned with a [`CooccurrenceMatrix`].
#[derive(Debug, Clone, PartialEq)]
pub struct DistinctiveScores {
    num_classes: usize,
    scores: Vec<f64>,
}

impl DistinctiveScores {
    pub fn row(&self, tag: usize) -> &[f64] {
        &self.scores[tag * self.num_classes..(tag + 1) * self.num_classes]
    }

    pub fn score(&self, tag: usize, class: usize) -> f64 {
        self.scores[tag * self.num_classes + class]
    }

    pub fn num_tags(&self) -> usize {
        self.scores.len().checked_div(self.num_classes).unwrap_or(0)
    }
}

pub fn distinctive_scores(matrix: &CooccurrenceMatrix) -> Result<DistinctiveScores> {
    let k = matrix.num_classes();
    let mut scores = Vec::with_capacity(matrix.vocabulary.len() * k);
    for (i, tag) in matrix.vocabulary.tags().iter().enumerate() {
        let row = matrix.row(i);
        let total: u64 = row.iter().sum();
        if total == 0 {
            return Err(Error::ZeroRow {
                tag: tag.to_string(),
            });
        }
        scores.extend(row.iter().map(|&c| c as f64 / total as f64));
    }
    Ok(DistinctiveScores {
        num_classes: k,
        scores,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiningConfig {
    /// Candidates need a score strictly above this.
    pub thr_distin: f64,
    pub top_k: usize,
    /// Entries with fewer photos in their class are dropped after truncation.
    pub min_photos: u64,
    /// Skip the tag spelled like the class label itself.
    pub exclude_class_tags: bool,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig {
            thr_distin: 0.6,
            top_k: 10,
            min_photos: 0,
            exclude_class_tags: true,
        }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.thr_distin > 0.0 && self.thr_distin <= 1.0) {
            return Err(Error::Config(format!(
                "mining.thr_distin must be in (0, 1], got {}",
                self.thr_distin
            )));
        }
        if self.top_k == 0 {
            return Err(Error::Config("mining.top_k must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub parent: ClassLabel,
    pub tag: Tag,
    pub photo_count: u64,
    pub score: f64,
}

impl CatalogEntry {
    pub fn id(&self) -> SubclassId {
        SubclassId {
            parent: self.parent.clone(),
            tag: self.tag.clone(),
        }
    }
}

/// Selected subclasses, grouped by parent in class-index order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubclassCatalog {
    pub entries: Vec<CatalogEntry>,
}

impl SubclassCatalog {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> Vec<SubclassId> {
        self.entries.iter().map(CatalogEntry::id).collect()
    }

    /// Number of entries per class, in the order of `classes`.
    pub fn counts_per_class(&self, classes: &Classes) -> Vec<usize> {
        classes
            .labels()
            .iter()
            .map(|c| self.entries.iter().filter(|e| &e.parent == c).count())
            .collect()
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        let fail = |e: csv::Error| Error::format("tagmine", e);
        writer
            .write_record(["parent_class", "tag", "photo_count", "score"])
            .map_err(fail)?;
        for e in &self.entries {
            writer
                .write_record([
                    e.parent.as_str(),
                    e.tag.as_str(),
                    &e.photo_count.to_string(),
                    &e.score.to_string(),
                ])
                .map_err(fail)?;
        }
        writer.flush().map_err(|e| Error::io("<csv>", e))
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is utf-8")
    }
}

/// Applies the threshold, the class-label exclusion, the photo-count ranking
/// and the `top_k` cut, class by class.
pub fn select_subclasses(
    scores: &DistinctiveScores,
    matrix: &CooccurrenceMatrix,
    config: &MiningConfig,
) -> Result<SubclassCatalog> {
    config.validate()?;
    if scores.num_tags() != matrix.vocabulary.len() || scores.num_classes != matrix.num_classes() {
        return Err(Error::Config("scores and counts are not aligned".into()));
    }

    let tags = matrix.vocabulary.tags();
    let mut entries = Vec::new();
    for (j, class) in matrix.classes.labels().iter().enumerate() {
        let own_tag = class.as_tag();
        let mut candidates: Vec<usize> = (0..tags.len())
            .filter(|&i| scores.score(i, j) > config.thr_distin)
            .filter(|&i| !(config.exclude_class_tags && tags[i] == own_tag))
            .collect();
        candidates.sort_by(|&a, &b| {
            matrix
                .count(b, j)
                .cmp(&matrix.count(a, j))
                .then_with(|| tags[a].cmp(&tags[b]))
        });
        candidates.truncate(config.top_k);
        let before = entries.len();
        entries.extend(
            candidates
                .into_iter()
                .filter(|&i| matrix.count(i, j) >= config.min_photos)
                .map(|i| CatalogEntry {
                    parent: class.clone(),
                    tag: tags[i].clone(),
                    photo_count: matrix.count(i, j),
                    score: scores.score(i, j),
                }),
        );
        if entries.len() == before {
            log::warn!("tagmine: class {class} yields no subclasses");
        }
    }
    Ok(SubclassCatalog { entries })
}

/// Runs the whole mining chain on `records`.
pub fn mine(
    records: &[ImageRecord],
    classes: &Classes,
    config: &MiningConfig,
) -> Result<(CooccurrenceMatrix, SubclassCatalog)> {
    let matrix = build_cooccurrence(records, classes)?;
    let scores = distinctive_scores(&matrix)?;
    let catalog = select_subclasses(&scores, &matrix, config)?;
    Ok((matrix, catalog))
}
