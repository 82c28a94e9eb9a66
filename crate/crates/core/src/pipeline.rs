//! The two-level subclass-representation method and its two baselines.
//!
//! `SVM_SubClassProb` mines a subclass catalog on the stage-1 part, trains
//! one calibrated binary per subclass, represents every image by the vector of
//! subclass confidences and trains a one-vs-one model over top-level classes
//! in that space on the stage-2 part. `SVM_VisFeat` trains one-vs-one directly
//! on image features; `SVM_ClassProb` stacks a second one-vs-one model on the
//! coupled class posteriors of a first.
//!
//! Test records are only ever read through their features.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    build_binary_set, ClassLabel, Classes, DatasetSplit, ImageRecord, SubclassId,
};
use crate::error::{Error, Result};
use crate::eval::RankedList;
use crate::prob::{
    train_calibrated, train_one_vs_one, BinaryIdentity, CalibratedBinary, ClassProbabilities,
    PairwiseModel,
};
use crate::seed::{self, stream};
use crate::svm::TrainConfig;
use crate::tagmine::{mine, MiningConfig, SubclassCatalog};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MethodKind {
    #[serde(rename = "SVM_SubClassProb")]
    SubclassProb,
    #[serde(rename = "SVM_VisFeat")]
    VisFeat,
    #[serde(rename = "SVM_ClassProb")]
    ClassProb,
}

impl MethodKind {
    pub const ALL: [MethodKind; 3] = [
        MethodKind::SubclassProb,
        MethodKind::VisFeat,
        MethodKind::ClassProb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MethodKind::SubclassProb => "SVM_SubClassProb",
            MethodKind::VisFeat => "SVM_VisFeat",
            MethodKind::ClassProb => "SVM_ClassProb",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        MethodKind::ALL.into_iter().find(|m| m.name() == name)
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepresentationMode {
    /// Calibrated subclass probabilities.
    #[default]
    Probability,
    /// Raw decision values.
    Margin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BankMode {
    /// One independent binary per subclass.
    #[default]
    Binary,
    /// A single one-vs-one machine over all subclasses.
    OneVsOne,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub mining: MiningConfig,
    pub train: TrainConfig,
    pub calibration_folds: usize,
    pub subclass_cap: usize,
    pub neg_ratio: f64,
    pub representation_mode: RepresentationMode,
    pub bank_mode: BankMode,
    /// Ratio of the subclass, top and validation parts. The first two also
    /// divide a two-stage method's per-class budget.
    pub split_ratios: [u32; 3],
    /// Learning-curve points; empty means one run on the full pools.
    pub per_class_train_sizes: Vec<usize>,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            mining: MiningConfig::default(),
            train: TrainConfig::default(),
            calibration_folds: 3,
            subclass_cap: 10_000,
            neg_ratio: 1.0,
            representation_mode: RepresentationMode::Probability,
            bank_mode: BankMode::Binary,
            split_ratios: [4, 3, 1],
            per_class_train_sizes: Vec::new(),
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.mining.validate()?;
        self.train.validate()?;
        if self.calibration_folds < 2 {
            return Err(Error::Config("calibration_folds must be >= 2".into()));
        }
        if self.subclass_cap == 0 {
            return Err(Error::Config("subclass_cap must be >= 1".into()));
        }
        if !(self.neg_ratio > 0.0 && self.neg_ratio.is_finite()) {
            return Err(Error::Config(format!(
                "neg_ratio must be > 0, got {}",
                self.neg_ratio
            )));
        }
        if self.split_ratios.contains(&0) {
            return Err(Error::Config("split_ratios must all be >= 1".into()));
        }
        if self.per_class_train_sizes.contains(&0) {
            return Err(Error::Config("per_class_train_sizes must be >= 1".into()));
        }
        if self.per_class_train_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "per_class_train_sizes must be strictly increasing, got {:?}",
                self.per_class_train_sizes
            )));
        }
        if self.bank_mode == BankMode::OneVsOne
            && self.representation_mode == RepresentationMode::Margin
        {
            return Err(Error::Config(
                "margin representation needs bank_mode = binary; a one-vs-one bank yields coupled probabilities".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BankModels {
    Binary(Vec<CalibratedBinary>),
    OneVsOne(PairwiseModel),
}

/// Subclass classifiers aligned with the catalog they were trained for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubclassModelBank {
    pub subclasses: Vec<SubclassId>,
    pub models: BankModels,
    /// Ids of the stage-1 pool the bank was trained from.
    pub stage1_ids: BTreeSet<String>,
}

impl SubclassModelBank {
    pub fn len(&self) -> usize {
        self.subclasses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subclasses.is_empty()
    }
}

/// An image in subclass space, one value per bank entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubclassRepresentation {
    pub values: Vec<f64>,
}

fn bank_seed(config: &PipelineConfig, index: usize) -> u64 {
    seed::derive(config.seed, &[stream::BANK, index as u64])
}

/// Trains one calibrated classifier per catalog entry on `part_subclass`.
pub fn train_subclass_bank(
    catalog: &SubclassCatalog,
    part_subclass: &[ImageRecord],
    config: &PipelineConfig,
) -> Result<SubclassModelBank> {
    config.validate()?;
    if catalog.is_empty() {
        return Err(Error::Pipeline("subclass catalog is empty".into()));
    }
    let subclasses = catalog.ids();
    let models = match config.bank_mode {
        BankMode::Binary => BankModels::Binary(
            subclasses
                .par_iter()
                .enumerate()
                .map(|(m, id)| {
                    let job_seed = bank_seed(config, m);
                    let set = build_binary_set(
                        part_subclass,
                        id,
                        config.subclass_cap,
                        config.neg_ratio,
                        job_seed,
                    )?;
                    let (xs, ys) = set.examples();
                    train_calibrated(
                        &xs,
                        &ys,
                        BinaryIdentity::Subclass(id.clone()),
                        &config.train,
                        config.calibration_folds,
                        job_seed,
                    )
                    .map_err(|e| Error::Pipeline(format!("subclass {id}: {e}")))
                })
                .collect::<Result<Vec<_>>>()?,
        ),
        BankMode::OneVsOne => BankModels::OneVsOne(train_subclass_one_vs_one(
            &subclasses,
            part_subclass,
            config,
        )?),
    };
    Ok(SubclassModelBank {
        subclasses,
        models,
        stage1_ids: part_subclass.iter().map(|r| r.id.clone()).collect(),
    })
}

/// Every record joins the first catalog subclass it qualifies for; each
/// subclass is capped at `subclass_cap` records.
fn train_subclass_one_vs_one(
    subclasses: &[SubclassId],
    pool: &[ImageRecord],
    config: &PipelineConfig,
) -> Result<PairwiseModel> {
    let mut members: Vec<Vec<&ImageRecord>> = vec![Vec::new(); subclasses.len()];
    for record in pool {
        if let Some(m) = subclasses
            .iter()
            .position(|s| record.label == s.parent && record.has_tag(&s.tag))
        {
            members[m].push(record);
        }
    }
    let mut xs = Vec::new();
    let mut labels = Vec::new();
    for (m, group) in members.iter_mut().enumerate() {
        if group.is_empty() {
            return Err(Error::NoPositives {
                parent: subclasses[m].parent.to_string(),
                tag: subclasses[m].tag.to_string(),
            });
        }
        group.shuffle(&mut seed::rng(bank_seed(config, m)));
        group.truncate(config.subclass_cap);
        xs.extend(group.iter().map(|r| r.features.as_slice()));
        labels.extend(std::iter::repeat_n(m, group.len()));
    }
    let names = subclasses
        .iter()
        .map(|s| ClassLabel::new(&s.to_string()).expect("non-empty"))
        .collect();
    train_one_vs_one(
        &xs,
        &labels,
        &Classes::new(names)?,
        &config.train,
        config.calibration_folds,
        seed::derive(config.seed, &[stream::BANK, u64::MAX]),
    )
}

/// Maps image features into subclass space.
pub fn project(
    features: &[f64],
    bank: &SubclassModelBank,
    mode: RepresentationMode,
) -> Result<SubclassRepresentation> {
    if bank.is_empty() {
        return Err(Error::Pipeline("cannot project with an empty bank".into()));
    }
    let values = match (&bank.models, mode) {
        (BankModels::Binary(models), RepresentationMode::Probability) => models
            .iter()
            .map(|m| m.probability(features))
            .collect::<Result<_>>()?,
        (BankModels::Binary(models), RepresentationMode::Margin) => models
            .iter()
            .map(|m| m.decision(features))
            .collect::<Result<_>>()?,
        (BankModels::OneVsOne(model), RepresentationMode::Probability) => {
            model.predict_proba(features)?.p
        }
        (BankModels::OneVsOne(_), RepresentationMode::Margin) => {
            return Err(Error::Config(
                "margin representation needs a binary bank".into(),
            ))
        }
    };
    Ok(SubclassRepresentation { values })
}

fn project_all(
    records: &[&ImageRecord],
    bank: &SubclassModelBank,
    mode: RepresentationMode,
) -> Result<Vec<Vec<f64>>> {
    records
        .par_iter()
        .map(|r| project(&r.features, bank, mode).map(|rep| rep.values))
        .collect()
}

/// A representation with the identity and class of the record it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRepresentation {
    pub id: String,
    pub class: usize,
    pub representation: SubclassRepresentation,
}

/// Trains the top-level one-vs-one model in subclass space. Fails if any
/// representation comes from a stage-1 record.
pub fn train_top(
    representations: &[LabeledRepresentation],
    classes: &Classes,
    bank: &SubclassModelBank,
    config: &PipelineConfig,
) -> Result<PairwiseModel> {
    if let Some(shared) = representations
        .iter()
        .find(|r| bank.stage1_ids.contains(&r.id))
    {
        return Err(hygiene(format!(
            "record {:?} is in both the stage-1 and stage-2 training data",
            shared.id
        )));
    }
    let xs: Vec<&[f64]> = representations
        .iter()
        .map(|r| r.representation.values.as_slice())
        .collect();
    let labels: Vec<usize> = representations.iter().map(|r| r.class).collect();
    train_one_vs_one(
        &xs,
        &labels,
        classes,
        &config.train,
        config.calibration_folds,
        seed::derive(config.seed, &[stream::TOP]),
    )
}

/// A size that could not be met for one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clamp {
    pub pool: String,
    pub class: ClassLabel,
    pub requested: usize,
    pub available: usize,
}

/// Everything trained for one method at one size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodArtifacts {
    pub catalog: Option<SubclassCatalog>,
    pub bank: Option<SubclassModelBank>,
    pub stage1: Option<PairwiseModel>,
    pub top: PairwiseModel,
}

impl MethodArtifacts {
    /// Every trained binary, bank first.
    pub fn binaries(&self) -> Vec<&CalibratedBinary> {
        let mut all = Vec::new();
        if let Some(bank) = &self.bank {
            match &bank.models {
                BankModels::Binary(models) => all.extend(models),
                BankModels::OneVsOne(model) => all.extend(&model.binaries),
            }
        }
        if let Some(stage1) = &self.stage1 {
            all.extend(&stage1.binaries);
        }
        all.extend(&self.top.binaries);
        all
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodResult {
    pub method: MethodKind,
    pub train_size: usize,
    /// In class-index order.
    pub per_class_rankings: Vec<(ClassLabel, RankedList)>,
    pub probabilities: BTreeMap<String, ClassProbabilities>,
    pub clamps: Vec<Clamp>,
    /// Catalog entries dropped for lack of stage-1 positives at this size.
    pub dropped_subclasses: Vec<SubclassId>,
    pub artifacts: MethodArtifacts,
}

/// Seeded per-class subsample of at most `n` records.
fn subsample<'a>(
    records: &[&'a ImageRecord],
    classes: &Classes,
    n: Option<usize>,
    pool: &str,
    seed: u64,
    clamps: &mut Vec<Clamp>,
) -> Vec<&'a ImageRecord> {
    let Some(n) = n else {
        return records.to_vec();
    };
    let mut out = Vec::new();
    for (c, class) in classes.labels().iter().enumerate() {
        let mut members: Vec<&ImageRecord> = records
            .iter()
            .copied()
            .filter(|r| &r.label == class)
            .collect();
        if members.len() < n {
            log::warn!(
                "pipeline: {pool} has {} records of class {class}, fewer than the requested {n}; using all",
                members.len()
            );
            clamps.push(Clamp {
                pool: pool.to_string(),
                class: class.clone(),
                requested: n,
                available: members.len(),
            });
        }
        members.shuffle(&mut seed::rng(seed::derive(seed, &[c as u64])));
        members.truncate(n);
        out.extend(members);
    }
    out
}

static HYGIENE_VIOLATIONS: AtomicUsize = AtomicUsize::new(0);

/// Number of disjointness checks that have failed in this process.
pub fn hygiene_violations() -> usize {
    HYGIENE_VIOLATIONS.load(Ordering::SeqCst)
}

fn hygiene(message: String) -> Error {
    HYGIENE_VIOLATIONS.fetch_add(1, Ordering::SeqCst);
    Error::Hygiene(message)
}

fn check_disjoint(a: &[&ImageRecord], b: &[&ImageRecord], what: &str) -> Result<()> {
    let ids: HashSet<&str> = a.iter().map(|r| r.id.as_str()).collect();
    match b.iter().find(|r| ids.contains(r.id.as_str())) {
        Some(r) => Err(hygiene(format!("record {:?} appears in {what}", r.id))),
        None => Ok(()),
    }
}

fn class_indices(records: &[&ImageRecord], classes: &Classes) -> Result<Vec<usize>> {
    records
        .iter()
        .map(|r| {
            classes.index_of(&r.label).ok_or_else(|| {
                Error::Pipeline(format!("record {:?} has unknown class {}", r.id, r.label))
            })
        })
        .collect()
}

fn features<'a>(records: &[&'a ImageRecord]) -> Vec<&'a [f64]> {
    records.iter().map(|r| r.features.as_slice()).collect()
}

fn rank_by_class(
    classes: &Classes,
    test: &[ImageRecord],
    posteriors: Vec<ClassProbabilities>,
) -> Result<(
    Vec<(ClassLabel, RankedList)>,
    BTreeMap<String, ClassProbabilities>,
)> {
    let rankings = classes
        .labels()
        .iter()
        .enumerate()
        .map(|(c, class)| {
            let scored = test
                .iter()
                .zip(&posteriors)
                .map(|(r, p)| (r.id.clone(), p.p[c]))
                .collect();
            Ok((class.clone(), RankedList::from_scores(scored)?))
        })
        .collect::<Result<_>>()?;
    let probabilities = test.iter().map(|r| r.id.clone()).zip(posteriors).collect();
    Ok((rankings, probabilities))
}

fn predict_all(records: &[Vec<f64>], model: &PairwiseModel) -> Result<Vec<ClassProbabilities>> {
    records.par_iter().map(|x| model.predict_proba(x)).collect()
}

/// Splits a per-class budget between the two stages in the configured ratio,
/// remainder to stage 1.
pub fn stage_budgets(n: usize, ratios: [u32; 3]) -> (usize, usize) {
    let total = ratios[0] as u64 + ratios[1] as u64;
    let second = (n as u64 * ratios[1] as u64 / total) as usize;
    (n - second, second)
}

/// Runs `method` once per configured training size.
pub fn run_method(
    method: MethodKind,
    split: &DatasetSplit,
    test: &[ImageRecord],
    classes: &Classes,
    config: &PipelineConfig,
) -> Result<Vec<MethodResult>> {
    config.validate()?;
    let sizes: Vec<Option<usize>> = if config.per_class_train_sizes.is_empty() {
        vec![None]
    } else {
        config
            .per_class_train_sizes
            .iter()
            .map(|&n| Some(n))
            .collect()
    };

    let part1: Vec<&ImageRecord> = split.part_subclass.iter().collect();
    let part2: Vec<&ImageRecord> = split.part_top.iter().collect();
    let test_refs: Vec<&ImageRecord> = test.iter().collect();
    check_disjoint(&part1, &part2, "both the subclass and top parts")?;
    check_disjoint(&part1, &test_refs, "both stage-1 training and test data")?;
    check_disjoint(&part2, &test_refs, "both stage-2 training and test data")?;

    let catalog = match method {
        MethodKind::SubclassProb => {
            if split.part_subclass.iter().all(|r| r.tags.is_empty()) {
                return Err(Error::Pipeline(
                    "SVM_SubClassProb needs tagged stage-1 records for mining".into(),
                ));
            }
            let (_, catalog) = mine(&split.part_subclass, classes, &config.mining)?;
            if catalog.is_empty() {
                return Err(Error::Pipeline(
                    "mining produced an empty subclass catalog".into(),
                ));
            }
            Some(catalog)
        }
        _ => None,
    };

    sizes
        .iter()
        .enumerate()
        .map(|(size_index, &size)| {
            let sub_seed = seed::derive(config.seed, &[stream::SUBSAMPLE, size_index as u64]);
            let full_size = classes
                .labels()
                .iter()
                .map(|c| part1.iter().chain(&part2).filter(|r| &r.label == c).count())
                .max()
                .unwrap_or(0);
            let train_size = size.unwrap_or(full_size);
            let mut clamps = Vec::new();
            match method {
                MethodKind::VisFeat => {
                    let union: Vec<&ImageRecord> = part1.iter().chain(&part2).copied().collect();
                    let train = subsample(
                        &union,
                        classes,
                        size,
                        "part_subclass+part_top",
                        sub_seed,
                        &mut clamps,
                    );
                    check_disjoint(&train, &test_refs, "both training and test data")?;
                    let model = train_one_vs_one(
                        &features(&train),
                        &class_indices(&train, classes)?,
                        classes,
                        &config.train,
                        config.calibration_folds,
                        seed::derive(config.seed, &[stream::TOP, size_index as u64]),
                    )?;
                    let test_x: Vec<Vec<f64>> = test.iter().map(|r| r.features.clone()).collect();
                    let (rankings, probabilities) =
                        rank_by_class(classes, test, predict_all(&test_x, &model)?)?;
                    Ok(MethodResult {
                        method,
                        train_size,
                        per_class_rankings: rankings,
                        probabilities,
                        clamps,
                        dropped_subclasses: Vec::new(),
                        artifacts: MethodArtifacts {
                            catalog: None,
                            bank: None,
                            stage1: None,
                            top: model,
                        },
                    })
                }
                MethodKind::SubclassProb | MethodKind::ClassProb => {
                    let (n1, n2) = match size {
                        Some(n) => {
                            let (a, b) = stage_budgets(n, config.split_ratios);
                            (Some(a), Some(b))
                        }
                        None => (None, None),
                    };
                    let stage1 = subsample(
                        &part1,
                        classes,
                        n1,
                        "part_subclass",
                        seed::derive(sub_seed, &[1]),
                        &mut clamps,
                    );
                    let stage2 = subsample(
                        &part2,
                        classes,
                        n2,
                        "part_top",
                        seed::derive(sub_seed, &[2]),
                        &mut clamps,
                    );
                    check_disjoint(&stage1, &stage2, "both stage-1 and stage-2 training data")?;
                    check_disjoint(&stage1, &test_refs, "both stage-1 training and test data")?;
                    check_disjoint(&stage2, &test_refs, "both stage-2 training and test data")?;
                    if method == MethodKind::SubclassProb {
                        run_subclass_prob(
                            catalog.as_ref().expect("mined above"),
                            &stage1,
                            &stage2,
                            test,
                            classes,
                            config,
                            size_index,
                            train_size,
                            clamps,
                        )
                    } else {
                        run_class_prob(
                            &stage1, &stage2, test, classes, config, size_index, train_size, clamps,
                        )
                    }
                }
            }
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn run_subclass_prob(
    catalog: &SubclassCatalog,
    stage1: &[&ImageRecord],
    stage2: &[&ImageRecord],
    test: &[ImageRecord],
    classes: &Classes,
    config: &PipelineConfig,
    size_index: usize,
    train_size: usize,
    clamps: Vec<Clamp>,
) -> Result<MethodResult> {
    let pool: Vec<ImageRecord> = stage1.iter().map(|&r| r.clone()).collect();
    // Subclasses too thin in this pool to cross-fit a sigmoid are left out.
    let (kept, dropped): (Vec<_>, Vec<_>) = catalog.entries.iter().cloned().partition(|e| {
        let positives = pool
            .iter()
            .filter(|r| r.label == e.parent && r.has_tag(&e.tag))
            .count();
        positives >= config.calibration_folds
    });
    for e in &dropped {
        log::warn!(
            "pipeline: subclass {}/{} has fewer than {} stage-1 positives at size {train_size}; skipped",
            e.parent,
            e.tag,
            config.calibration_folds
        );
    }
    if kept.is_empty() {
        return Err(Error::Pipeline(format!(
            "no subclass has enough stage-1 positives at size {train_size}"
        )));
    }
    let catalog = SubclassCatalog { entries: kept };
    let size_config = PipelineConfig {
        seed: seed::derive(config.seed, &[stream::BANK, size_index as u64]),
        ..config.clone()
    };
    let bank = train_subclass_bank(&catalog, &pool, &size_config)?;

    let stage2_reps = project_all(stage2, &bank, config.representation_mode)?;
    let labels = class_indices(stage2, classes)?;
    let labeled: Vec<LabeledRepresentation> = stage2
        .iter()
        .zip(stage2_reps)
        .zip(labels)
        .map(|((r, values), class)| LabeledRepresentation {
            id: r.id.clone(),
            class,
            representation: SubclassRepresentation { values },
        })
        .collect();
    let top = train_top(&labeled, classes, &bank, &size_config)?;

    let test_refs: Vec<&ImageRecord> = test.iter().collect();
    let test_reps = project_all(&test_refs, &bank, config.representation_mode)?;
    let (rankings, probabilities) = rank_by_class(classes, test, predict_all(&test_reps, &top)?)?;
    Ok(MethodResult {
        method: MethodKind::SubclassProb,
        train_size,
        per_class_rankings: rankings,
        probabilities,
        clamps,
        dropped_subclasses: dropped.iter().map(|e| e.id()).collect(),
        artifacts: MethodArtifacts {
            catalog: Some(catalog),
            bank: Some(bank),
            stage1: None,
            top,
        },
    })
}

#[allow(clippy::too_many_arguments)]
fn run_class_prob(
    stage1: &[&ImageRecord],
    stage2: &[&ImageRecord],
    test: &[ImageRecord],
    classes: &Classes,
    config: &PipelineConfig,
    size_index: usize,
    train_size: usize,
    clamps: Vec<Clamp>,
) -> Result<MethodResult> {
    let first = train_one_vs_one(
        &features(stage1),
        &class_indices(stage1, classes)?,
        classes,
        &config.train,
        config.calibration_folds,
        seed::derive(config.seed, &[stream::PAIRWISE, size_index as u64]),
    )?;
    let project = |records: &[&ImageRecord]| -> Result<Vec<Vec<f64>>> {
        records
            .par_iter()
            .map(|r| first.predict_proba(&r.features).map(|p| p.p))
            .collect()
    };
    let stage2_reps = project(stage2)?;
    let rows: Vec<&[f64]> = stage2_reps.iter().map(Vec::as_slice).collect();
    let second = train_one_vs_one(
        &rows,
        &class_indices(stage2, classes)?,
        classes,
        &config.train,
        config.calibration_folds,
        seed::derive(config.seed, &[stream::TOP, size_index as u64]),
    )?;
    let test_refs: Vec<&ImageRecord> = test.iter().collect();
    let test_reps = project(&test_refs)?;
    let (rankings, probabilities) =
        rank_by_class(classes, test, predict_all(&test_reps, &second)?)?;
    Ok(MethodResult {
        method: MethodKind::ClassProb,
        train_size,
        per_class_rankings: rankings,
        probabilities,
        clamps,
        dropped_subclasses: Vec::new(),
        artifacts: MethodArtifacts {
            catalog: None,
            bank: None,
            stage1: Some(first),
            top: second,
        },
    })
}

/// AP of every bank entry on held-out records: relevant records carry the
/// subclass tag under its parent class.
pub fn subclass_validation_ap(
    bank: &SubclassModelBank,
    records: &[ImageRecord],
    mode: RepresentationMode,
) -> Result<Vec<(SubclassId, f64)>> {
    let refs: Vec<&ImageRecord> = records.iter().collect();
    let reps = project_all(&refs, bank, mode)?;
    bank.subclasses
        .iter()
        .enumerate()
        .map(|(m, id)| {
            let scored = records
                .iter()
                .zip(&reps)
                .map(|(r, v)| (r.id.clone(), v[m]))
                .collect();
            let ranking = RankedList::from_scores(scored)?;
            let relevant: HashSet<String> = records
                .iter()
                .filter(|r| r.label == id.parent && r.has_tag(&id.tag))
                .map(|r| r.id.clone())
                .collect();
            Ok((
                id.clone(),
                crate::eval::average_precision(ranking.ids(), &relevant),
            ))
        })
        .collect()
}
