//! Linear L1-loss soft-margin SVM trained by dual coordinate descent.
//!
//! The bias is folded into the weights through a constant `1.0` feature
//! appended to every example, which removes the equality constraint from the
//! dual and leaves a box-constrained problem
//!
//! ```text
//! max  D(a) = sum_i a_i - 1/2 |w(a)|^2,   w(a) = sum_i a_i y_i x_i,   0 <= a_i <= C
//! ```
//!
//! solved one coordinate at a time with exact clipped updates. Coordinates are
//! visited in a fresh seeded permutation each epoch; training stops once the
//! largest projected-gradient magnitude (the KKT violation) drops below the
//! tolerance.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// A binary separator `f(x) = <weights, x> + bias`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearModel {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// Decision value, checking the dimension.
    pub fn decision_value(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::Svm(format!(
                "feature dimension {} does not match model dimension {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(dot(&self.weights, x) + self.bias)
    }
}

pub fn decision_value(model: &LinearModel, x: &[f64]) -> Result<f64> {
    model.decision_value(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub c: f64,
    /// Stop once the maximal KKT violation is at most this.
    pub tolerance: f64,
    pub max_epochs: usize,
    pub seed: u64,
    /// Standardize each dimension on the training data before solving. The
    /// returned model is mapped back to raw feature space.
    pub standardize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            c: 1.0,
            tolerance: 1e-3,
            max_epochs: 1000,
            seed: 0,
            standardize: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::Config(format!(
                "train.c must be > 0, got {}",
                self.c
            )));
        }
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(Error::Config(format!(
                "train.tolerance must be > 0, got {}",
                self.tolerance
            )));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("train.max_epochs must be >= 1".into()));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        TrainConfig {
            seed,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub epochs_run: usize,
    pub final_violation: f64,
    pub converged: bool,
    pub dual_objective: f64,
}

/// Persisted form of a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub dim: usize,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub config: TrainConfig,
    pub report: SolverReport,
}

impl ModelFile {
    pub fn new(model: &LinearModel, config: &TrainConfig, report: &SolverReport) -> Self {
        ModelFile {
            dim: model.dim(),
            weights: model.weights.clone(),
            bias: model.bias,
            config: config.clone(),
            report: report.clone(),
        }
    }

    pub fn model(&self) -> Result<LinearModel> {
        if self.weights.len() != self.dim {
            return Err(Error::Svm(format!(
                "model file declares dim {} but has {} weights",
                self.dim,
                self.weights.len()
            )));
        }
        if self
            .weights
            .iter()
            .chain([&self.bias])
            .any(|v| !v.is_finite())
        {
            return Err(Error::Svm("model file has non-finite weights".into()));
        }
        Ok(LinearModel {
            weights: self.weights.clone(),
            bias: self.bias,
        })
    }
}

/// Per-dimension affine rescaling fitted on training data.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(xs: &[&[f64]]) -> Self {
        let d = xs[0].len();
        let n = xs.len() as f64;
        let mut mean = vec![0.0; d];
        for x in xs {
            for (m, v) in mean.iter_mut().zip(*x) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; d];
        for x in xs {
            for ((s, v), m) in var.iter_mut().zip(*x).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let scale = var
            .into_iter()
            .map(|v| if v > 0.0 { v.sqrt() } else { 1.0 })
            .collect();
        Standardizer { mean, scale }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    /// Maps weights learned on standardized inputs back to raw inputs.
    fn unscale(&self, weights: &[f64], bias: f64) -> LinearModel {
        let raw: Vec<f64> = weights
            .iter()
            .zip(&self.scale)
            .map(|(w, s)| w / s)
            .collect();
        let shift: f64 = raw.iter().zip(&self.mean).map(|(w, m)| w * m).sum();
        LinearModel {
            weights: raw,
            bias: bias - shift,
        }
    }
}

/// A trained model together with its dual solution.
#[derive(Debug, Clone)]
pub struct BinaryFit {
    pub model: LinearModel,
    pub report: SolverReport,
    duals: Vec<f64>,
    /// Augmented weights in the (possibly standardized) training space.
    augmented: Vec<f64>,
    scaler: Option<Standardizer>,
    objective_trace: Vec<f64>,
}

impl BinaryFit {
    pub fn duals(&self) -> &[f64] {
        &self.duals
    }

    /// Weights in solver space, bias last.
    pub fn augmented_weights(&self) -> &[f64] {
        &self.augmented
    }

    /// Dual objective after each epoch.
    pub fn objective_trace(&self) -> &[f64] {
        &self.objective_trace
    }

    /// Training examples as the solver saw them (standardized if configured),
    /// without the bias component.
    pub fn solver_inputs(&self, xs: &[&[f64]]) -> Vec<Vec<f64>> {
        xs.iter()
            .map(|x| match &self.scaler {
                Some(s) => s.apply(x),
                None => x.to_vec(),
            })
            .collect()
    }

    /// Maximal KKT violation of the retained duals on the training set.
    pub fn kkt_violation(&self, xs: &[&[f64]], ys: &[bool], c: f64) -> Result<f64> {
        let inputs = self.solver_inputs(xs);
        let rows: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
        kkt_violation(&self.duals, &rows, ys, c)
    }
}

/// Epochs continue until the violation is below `tolerance * STOP_MARGIN`;
/// a bare `<= tolerance` stop leaves decision values up to ~20x tolerance
/// apart across data orderings.
const STOP_MARGIN: f64 = 0.1;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `<w, [x, 1]>` for augmented `w`.
fn dot_aug(w: &[f64], x: &[f64]) -> f64 {
    dot(&w[..x.len()], x) + w[x.len()]
}

fn axpy_aug(w: &mut [f64], scale: f64, x: &[f64]) {
    for (wi, xi) in w.iter_mut().zip(x) {
        *wi += scale * xi;
    }
    w[x.len()] += scale;
}

fn sign(y: bool) -> f64 {
    if y {
        1.0
    } else {
        -1.0
    }
}

fn projected_gradient(alpha: f64, gradient: f64, c: f64) -> f64 {
    if alpha <= 0.0 {
        gradient.min(0.0)
    } else if alpha >= c {
        gradient.max(0.0)
    } else {
        gradient
    }
}

/// `w = sum_i a_i y_i [x_i, 1]`.
pub fn primal_from_duals(duals: &[f64], xs: &[&[f64]], ys: &[bool]) -> Vec<f64> {
    let d = xs.first().map_or(0, |x| x.len());
    let mut w = vec![0.0; d + 1];
    for ((&a, x), &y) in duals.iter().zip(xs).zip(ys) {
        if a != 0.0 {
            axpy_aug(&mut w, a * sign(y), x);
        }
    }
    w
}

pub fn dual_objective(duals: &[f64], w: &[f64]) -> f64 {
    duals.iter().sum::<f64>() - 0.5 * dot(w, w)
}

/// Largest projected-gradient magnitude of `duals` on `(xs, ys)`. Zero at an
/// exact optimum.
pub fn kkt_violation(duals: &[f64], xs: &[&[f64]], ys: &[bool], c: f64) -> Result<f64> {
    if duals.is_empty() || duals.len() != xs.len() || xs.len() != ys.len() {
        return Err(Error::Svm(format!(
            "duals unavailable: {} duals for {} examples",
            duals.len(),
            xs.len()
        )));
    }
    let w = primal_from_duals(duals, xs, ys);
    Ok(max_violation(duals, &w, xs, ys, c))
}

fn max_violation(duals: &[f64], w: &[f64], xs: &[&[f64]], ys: &[bool], c: f64) -> f64 {
    duals
        .iter()
        .zip(xs)
        .zip(ys)
        .map(|((&a, x), &y)| projected_gradient(a, sign(y) * dot_aug(w, x) - 1.0, c).abs())
        .fold(0.0, f64::max)
}

fn validate_problem(xs: &[&[f64]], ys: &[bool]) -> Result<usize> {
    if xs.len() != ys.len() {
        return Err(Error::Svm(format!(
            "{} examples but {} labels",
            xs.len(),
            ys.len()
        )));
    }
    let d = xs.first().map_or(0, |x| x.len());
    if d == 0 {
        return Err(Error::Svm("features have zero dimension".into()));
    }
    if let Some(x) = xs.iter().find(|x| x.len() != d) {
        return Err(Error::Svm(format!(
            "mixed feature dimensions {} and {}",
            d,
            x.len()
        )));
    }
    if xs.iter().any(|x| x.iter().any(|v| !v.is_finite())) {
        return Err(Error::Svm("non-finite feature value".into()));
    }
    if !ys.contains(&true) || !ys.contains(&false) {
        return Err(Error::Svm("training data must contain both labels".into()));
    }
    Ok(d)
}

/// Trains a binary separator; `ys[i] == true` marks a positive example.
pub fn train_binary(xs: &[&[f64]], ys: &[bool], config: &TrainConfig) -> Result<BinaryFit> {
    config.validate()?;
    let d = validate_problem(xs, ys)?;

    let scaler = config.standardize.then(|| Standardizer::fit(xs));
    let scaled: Vec<Vec<f64>>;
    let inputs: Vec<&[f64]> = match &scaler {
        Some(s) => {
            scaled = xs.iter().map(|x| s.apply(x)).collect();
            scaled.iter().map(Vec::as_slice).collect()
        }
        None => xs.to_vec(),
    };

    let n = inputs.len();
    let c = config.c;
    let diag: Vec<f64> = inputs.iter().map(|x| dot(x, x) + 1.0).collect();
    let signs: Vec<f64> = ys.iter().map(|&y| sign(y)).collect();
    let mut alpha = vec![0.0; n];
    let mut w = vec![0.0; d + 1];
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seed::rng(seed::derive(config.seed, &[seed::stream::SOLVER]));
    let mut trace = Vec::new();
    let mut violation = max_violation(&alpha, &w, &inputs, ys, c);
    let mut epochs = 0;

    let target = config.tolerance * STOP_MARGIN;
    while violation > target && epochs < config.max_epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let gradient = signs[i] * dot_aug(&w, inputs[i]) - 1.0;
            if projected_gradient(alpha[i], gradient, c) == 0.0 {
                continue;
            }
            let old = alpha[i];
            alpha[i] = (old - gradient / diag[i]).clamp(0.0, c);
            let delta = alpha[i] - old;
            if delta != 0.0 {
                axpy_aug(&mut w, delta * signs[i], inputs[i]);
            }
        }
        epochs += 1;
        let objective = dual_objective(&alpha, &w);
        debug_assert!(
            trace
                .last()
                .is_none_or(|&prev: &f64| objective >= prev - 1e-9 * prev.abs().max(1.0)),
            "dual objective decreased"
        );
        trace.push(objective);
        violation = max_violation(&alpha, &w, &inputs, ys, c);
    }

    let report = SolverReport {
        epochs_run: epochs,
        final_violation: violation,
        converged: violation <= config.tolerance,
        dual_objective: dual_objective(&alpha, &w),
    };
    if !report.converged {
        log::debug!(
            "svm: stopped after {epochs} epochs with KKT violation {violation:.3e} > {:.1e}",
            config.tolerance
        );
    }
    let model = match &scaler {
        Some(s) => s.unscale(&w[..d], w[d]),
        None => LinearModel {
            weights: w[..d].to_vec(),
            bias: w[d],
        },
    };
    Ok(BinaryFit {
        model,
        report,
        duals: alpha,
        augmented: w,
        scaler,
        objective_trace: trace,
    })
}
