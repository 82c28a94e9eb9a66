//! Probability estimates from linear SVMs.
//!
//! Decision values are mapped to probabilities with a two-parameter sigmoid
//! `p(f) = 1 / (1 + exp(a f + b))` fitted by regularized maximum likelihood
//! (Platt scaling with smoothed targets). Multiclass posteriors come from
//! one-vs-one binaries whose pairwise probabilities `r[i][j]` are coupled into
//! a single distribution by minimizing
//!
//! ```text
//! sum_{i<j} (r[j][i] p_i - r[i][j] p_j)^2    over the probability simplex.
//! ```

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Classes, SubclassId};
use crate::error::{Error, Result};
use crate::seed;
use crate::svm::{train_binary, LinearModel, ModelFile, SolverReport, TrainConfig};

/// Pairwise probabilities are clipped into `[MIN_PAIR_PROB, 1 - MIN_PAIR_PROB]`
/// before coupling.
pub const MIN_PAIR_PROB: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlattParams {
    pub a: f64,
    pub b: f64,
}

/// `1 / (1 + exp(a f + b))`, evaluated without overflow.
pub fn sigmoid_prob(params: PlattParams, f: f64) -> f64 {
    let z = params.a * f + params.b;
    if z >= 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

/// Negative log-likelihood of soft targets `t` under the sigmoid at `z`.
fn nll_term(t: f64, z: f64) -> f64 {
    if z >= 0.0 {
        t * z + (-z).exp().ln_1p()
    } else {
        (t - 1.0) * z + z.exp().ln_1p()
    }
}

const PLATT_MAX_STEPS: usize = 100;
const PLATT_GRADIENT_TOL: f64 = 1e-8;
const PLATT_MIN_STEP: f64 = 1e-10;
const PLATT_HESSIAN_RIDGE: f64 = 1e-12;

/// Fits sigmoid parameters to decision values; `labels[i] == true` marks a
/// positive. Targets are `(N+ + 1)/(N+ + 2)` for positives and `1/(N- + 2)`
/// for negatives, which keeps `a` finite on separable data.
pub fn fit_platt(decisions: &[f64], labels: &[bool]) -> Result<PlattParams> {
    if decisions.len() != labels.len() {
        return Err(Error::Prob(format!(
            "{} decisions but {} labels",
            decisions.len(),
            labels.len()
        )));
    }
    if decisions.iter().any(|f| !f.is_finite()) {
        return Err(Error::Prob("non-finite decision value".into()));
    }
    let n_pos = labels.iter().filter(|&&y| y).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return Err(Error::Prob("calibration needs both labels".into()));
    }

    let hi = (n_pos + 1.0) / (n_pos + 2.0);
    let lo = 1.0 / (n_neg + 2.0);
    let targets: Vec<f64> = labels.iter().map(|&y| if y { hi } else { lo }).collect();
    let objective = |a: f64, b: f64| -> f64 {
        decisions
            .iter()
            .zip(&targets)
            .map(|(&f, &t)| nll_term(t, a * f + b))
            .sum()
    };

    let mut a = 0.0;
    let mut b = ((n_neg + 1.0) / (n_pos + 1.0)).ln();
    let mut value = objective(a, b);

    for _ in 0..PLATT_MAX_STEPS {
        let (mut g1, mut g2) = (0.0, 0.0);
        let (mut h11, mut h22, mut h21) = (PLATT_HESSIAN_RIDGE, PLATT_HESSIAN_RIDGE, 0.0);
        for (&f, &t) in decisions.iter().zip(&targets) {
            // p is the model's probability of the positive label.
            let p = sigmoid_prob(PlattParams { a, b }, f);
            let d1 = t - p;
            let d2 = p * (1.0 - p);
            g1 += f * d1;
            g2 += d1;
            h11 += f * f * d2;
            h22 += d2;
            h21 += f * d2;
        }
        if g1.abs().max(g2.abs()) <= PLATT_GRADIENT_TOL {
            break;
        }

        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let slope = g1 * da + g2 * db;

        let mut step = 1.0;
        let mut accepted = false;
        while step >= PLATT_MIN_STEP {
            let (na, nb) = (a + step * da, b + step * db);
            let candidate = objective(na, nb);
            if candidate < value + 1e-4 * step * slope {
                a = na;
                b = nb;
                value = candidate;
                accepted = true;
                break;
            }
            step /= 2.0;
        }
        if !accepted {
            break;
        }
    }
    Ok(PlattParams { a, b })
}

/// What a calibrated binary separates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinaryIdentity {
    Subclass(SubclassId),
    /// Class `positive` against class `negative` (indices, `positive < negative`).
    Pair {
        positive: usize,
        negative: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedBinary {
    pub identity: BinaryIdentity,
    pub model: LinearModel,
    pub report: SolverReport,
    pub platt: PlattParams,
}

impl CalibratedBinary {
    pub fn decision(&self, x: &[f64]) -> Result<f64> {
        self.model.decision_value(x)
    }

    pub fn probability(&self, x: &[f64]) -> Result<f64> {
        Ok(sigmoid_prob(self.platt, self.decision(x)?))
    }
}

/// Held-out decision values from k-fold cross-fitting, with the bookkeeping
/// needed to audit that no decision came from a model that saw its example.
#[derive(Debug, Clone)]
pub struct CrossFit {
    pub decisions: Vec<f64>,
    /// Fold each example was held out in.
    pub fold_of: Vec<usize>,
    /// Example indices each fold's model was trained on.
    pub trained_on: Vec<Vec<usize>>,
}

/// Stratified fold assignment: each label's examples are shuffled and dealt
/// round-robin.
fn assign_folds(labels: &[bool], folds: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut rng = seed::rng(seed);
    let mut fold_of = vec![0; labels.len()];
    for want in [true, false] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == want).collect();
        members.shuffle(&mut rng);
        for (pos, i) in members.into_iter().enumerate() {
            fold_of[i] = pos % folds;
        }
    }
    fold_of
}

pub fn cross_fit(
    xs: &[&[f64]],
    ys: &[bool],
    config: &TrainConfig,
    folds: usize,
    seed: u64,
) -> Result<CrossFit> {
    if folds < 2 {
        return Err(Error::Prob(format!(
            "calibration needs >= 2 folds, got {folds}"
        )));
    }
    let n_pos = ys.iter().filter(|&&y| y).count();
    let n_neg = ys.len() - n_pos;
    if n_pos.min(n_neg) < folds {
        return Err(Error::Prob(format!(
            "{n_pos} positives and {n_neg} negatives; each label needs at least {folds} for cross-fitting"
        )));
    }

    let fold_of = assign_folds(ys, folds, seed);
    let mut decisions = vec![0.0; xs.len()];
    let mut trained_on = Vec::with_capacity(folds);
    for fold in 0..folds {
        let train: Vec<usize> = (0..xs.len()).filter(|&i| fold_of[i] != fold).collect();
        let sub_x: Vec<&[f64]> = train.iter().map(|&i| xs[i]).collect();
        let sub_y: Vec<bool> = train.iter().map(|&i| ys[i]).collect();
        let fit = train_binary(
            &sub_x,
            &sub_y,
            &config.with_seed(seed::derive(config.seed, &[fold as u64])),
        )?;
        for i in (0..xs.len()).filter(|&i| fold_of[i] == fold) {
            decisions[i] = fit.model.decision_value(xs[i])?;
        }
        trained_on.push(train);
    }
    Ok(CrossFit {
        decisions,
        fold_of,
        trained_on,
    })
}

/// Trains a binary on all of `(xs, ys)` and calibrates it on cross-fitted
/// decisions.
pub fn train_calibrated(
    xs: &[&[f64]],
    ys: &[bool],
    identity: BinaryIdentity,
    config: &TrainConfig,
    folds: usize,
    seed: u64,
) -> Result<CalibratedBinary> {
    let held_out = cross_fit(
        xs,
        ys,
        config,
        folds,
        seed::derive(seed, &[seed::stream::CALIBRATION]),
    )?;
    let platt = fit_platt(&held_out.decisions, ys)?;
    let fit = train_binary(xs, ys, &config.with_seed(seed))?;
    Ok(CalibratedBinary {
        identity,
        model: fit.model,
        report: fit.report,
        platt,
    })
}

/// A posterior over the classes of a [`PairwiseModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassProbabilities {
    pub p: Vec<f64>,
}

/// One-vs-one multiclass model with calibrated pairwise binaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "PairwiseModelFile", try_from = "PairwiseModelFile")]
pub struct PairwiseModel {
    pub classes: Classes,
    /// Canonical order: (0,1), (0,2), ..., (1,2), ...
    pub binaries: Vec<CalibratedBinary>,
    pub config: TrainConfig,
}

#[derive(Serialize, Deserialize)]
struct PairFile {
    pair: [usize; 2],
    model: ModelFile,
    platt: PlattParams,
}

/// `{"classes": [...], "pairs": [{"pair": [i, j], "model": {...}, "platt": {"a", "b"}}]}`
#[derive(Serialize, Deserialize)]
struct PairwiseModelFile {
    classes: Classes,
    pairs: Vec<PairFile>,
}

impl From<PairwiseModel> for PairwiseModelFile {
    fn from(m: PairwiseModel) -> Self {
        let pairs = m
            .binaries
            .iter()
            .zip(class_pairs(m.classes.len()))
            .map(|(b, (i, j))| PairFile {
                pair: [i, j],
                model: ModelFile::new(&b.model, &m.config, &b.report),
                platt: b.platt,
            })
            .collect();
        PairwiseModelFile {
            classes: m.classes,
            pairs,
        }
    }
}

impl TryFrom<PairwiseModelFile> for PairwiseModel {
    type Error = String;

    fn try_from(file: PairwiseModelFile) -> std::result::Result<Self, String> {
        let expected = class_pairs(file.classes.len());
        if file.pairs.len() != expected.len() {
            return Err(format!(
                "{} classes need {} pairs, found {}",
                file.classes.len(),
                expected.len(),
                file.pairs.len()
            ));
        }
        let config = file
            .pairs
            .first()
            .map(|p| p.model.config.clone())
            .unwrap_or_default();
        let binaries = file
            .pairs
            .into_iter()
            .zip(expected)
            .map(|(p, (i, j))| {
                if p.pair != [i, j] {
                    return Err(format!(
                        "pair {:?} out of canonical order, expected [{i}, {j}]",
                        p.pair
                    ));
                }
                Ok(CalibratedBinary {
                    identity: BinaryIdentity::Pair {
                        positive: i,
                        negative: j,
                    },
                    model: p.model.model().map_err(|e| e.to_string())?,
                    report: p.model.report,
                    platt: p.platt,
                })
            })
            .collect::<std::result::Result<Vec<_>, String>>()?;
        Ok(PairwiseModel {
            classes: file.classes,
            binaries,
            config,
        })
    }
}

/// All unordered pairs `(i, j)` with `i < j`, in canonical order.
pub fn class_pairs(k: usize) -> Vec<(usize, usize)> {
    (0..k)
        .flat_map(|i| (i + 1..k).map(move |j| (i, j)))
        .collect()
}

impl PairwiseModel {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Pairwise probability matrix `r[i][j] = P(i | i or j, x)`, clipped.
    pub fn pairwise_matrix(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        let k = self.num_classes();
        let mut r = vec![vec![0.0; k]; k];
        for (binary, (i, j)) in self.binaries.iter().zip(class_pairs(k)) {
            let p = binary
                .probability(x)?
                .clamp(MIN_PAIR_PROB, 1.0 - MIN_PAIR_PROB);
            r[i][j] = p;
            r[j][i] = 1.0 - p;
        }
        Ok(r)
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<ClassProbabilities> {
        let k = self.num_classes();
        couple(&self.pairwise_matrix(x)?, COUPLE_TOLERANCE, 100 * k)
    }
}

/// Trains one calibrated binary per class pair. `labels[i]` is the class index
/// of example `i`. Pairs train in parallel; each pair's seed depends only on
/// `seed` and the pair's position.
pub fn train_one_vs_one(
    xs: &[&[f64]],
    labels: &[usize],
    classes: &Classes,
    config: &TrainConfig,
    calibration_folds: usize,
    seed: u64,
) -> Result<PairwiseModel> {
    let k = classes.len();
    if k < 2 {
        return Err(Error::Prob(format!(
            "one-vs-one needs >= 2 classes, got {k}"
        )));
    }
    if xs.len() != labels.len() {
        return Err(Error::Prob(format!(
            "{} examples but {} labels",
            xs.len(),
            labels.len()
        )));
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &label) in labels.iter().enumerate() {
        members
            .get_mut(label)
            .ok_or_else(|| Error::Prob(format!("label index {label} outside {k} classes")))?
            .push(i);
    }
    let min_size = calibration_folds.max(1);
    if let Some(c) = (0..k).find(|&c| members[c].len() < min_size) {
        return Err(Error::Prob(format!(
            "class {} has {} examples, needs at least {min_size}",
            classes.get(c),
            members[c].len()
        )));
    }

    let binaries = class_pairs(k)
        .into_par_iter()
        .enumerate()
        .map(|(index, (i, j))| {
            let idx: Vec<usize> = members[i].iter().chain(&members[j]).copied().collect();
            let sub_x: Vec<&[f64]> = idx.iter().map(|&t| xs[t]).collect();
            let sub_y: Vec<bool> = idx.iter().map(|&t| labels[t] == i).collect();
            train_calibrated(
                &sub_x,
                &sub_y,
                BinaryIdentity::Pair {
                    positive: i,
                    negative: j,
                },
                config,
                calibration_folds,
                seed::derive(seed, &[seed::stream::PAIRWISE, index as u64]),
            )
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(PairwiseModel {
        classes: classes.clone(),
        binaries,
        config: config.clone(),
    })
}

pub const COUPLE_TOLERANCE: f64 = 1e-10;

/// `sum_{i<j} (r[j][i] p_i - r[i][j] p_j)^2`.
pub fn coupling_objective(r: &[Vec<f64>], p: &[f64]) -> f64 {
    let k = p.len();
    let mut total = 0.0;
    for i in 0..k {
        for j in i + 1..k {
            let e = r[j][i] * p[i] - r[i][j] * p[j];
            total += e * e;
        }
    }
    total
}

fn validate_pairwise(r: &[Vec<f64>]) -> Result<usize> {
    let k = r.len();
    if k < 2 || r.iter().any(|row| row.len() != k) {
        return Err(Error::Prob(format!(
            "pairwise matrix must be K x K with K >= 2, got {k} rows"
        )));
    }
    for i in 0..k {
        for j in 0..k {
            if i == j {
                continue;
            }
            let v = r[i][j];
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Prob(format!("r[{i}][{j}] = {v} is outside (0, 1)")));
            }
            if i < j && (v + r[j][i] - 1.0).abs() > 1e-9 {
                return Err(Error::Prob(format!(
                    "r[{i}][{j}] + r[{j}][{i}] = {} is not 1",
                    v + r[j][i]
                )));
            }
        }
    }
    Ok(k)
}

/// Couples pairwise probabilities into one posterior.
///
/// Each sweep updates every coordinate with the fixed-point step for the
/// quadratic objective (written as `p' Q p` with `Q_tt = sum_{j != t} r_jt^2`
/// and `Q_tj = -r_jt r_tj`) and renormalizes. Stops when no coordinate moves
/// by more than `tolerance` in a sweep, or after `max_iter` sweeps. Two
/// classes are solved in closed form.
pub fn couple(r: &[Vec<f64>], tolerance: f64, max_iter: usize) -> Result<ClassProbabilities> {
    let k = validate_pairwise(r)?;
    if k == 2 {
        return Ok(ClassProbabilities {
            p: vec![r[0][1], r[1][0]],
        });
    }

    let mut q = vec![vec![0.0; k]; k];
    for t in 0..k {
        for j in 0..k {
            if j != t {
                q[t][t] += r[j][t] * r[j][t];
                q[t][j] = -r[j][t] * r[t][j];
            }
        }
    }

    let mut p = vec![1.0 / k as f64; k];
    let mut qp: Vec<f64> = (0..k)
        .map(|t| (0..k).map(|j| q[t][j] * p[j]).sum())
        .collect();
    for _ in 0..max_iter {
        let start = p.clone();
        for t in 0..k {
            let pqp: f64 = p.iter().zip(&qp).map(|(a, b)| a * b).sum();
            let diff = (pqp - qp[t]) / q[t][t];
            p[t] += diff;
            // Renormalize and keep Qp in step without a full product.
            let norm = 1.0 + diff;
            for j in 0..k {
                qp[j] = (qp[j] + diff * q[j][t]) / norm;
                p[j] /= norm;
            }
        }
        let moved = p
            .iter()
            .zip(&start)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if moved <= tolerance {
            break;
        }
    }
    // Clean up rounding so the output is exactly on the simplex.
    for v in p.iter_mut() {
        *v = v.max(0.0);
    }
    let sum: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= sum);
    Ok(ClassProbabilities { p })
}
