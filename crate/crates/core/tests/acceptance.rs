//! Acceptance gate: one line per criterion, each checked against its runtime
//! bound. Runs without the libtest harness so criteria execute in order and
//! their timings are not skewed by each other.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use subclass_rep::cli::{cmd_run, cmd_synth, RunConfig, RunManifest};
use subclass_rep::dataset::{split_dataset, ClassLabel, Classes, ImageRecord, Tag};
use subclass_rep::eval::{average_precision, map_over_classes};
use subclass_rep::pipeline::{
    hygiene_violations, run_method, BankMode, MethodKind, PipelineConfig, RepresentationMode,
};
use subclass_rep::prob::{couple, fit_platt, sigmoid_prob, PlattParams};
use subclass_rep::svm::{primal_from_duals, train_binary, TrainConfig};
use subclass_rep::synth::{generate, SynthConfig};
use subclass_rep::tagmine::{distinctive_scores, mine, MiningConfig};

type Outcome = Result<String, String>;

fn ensure(ok: bool, message: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(message())
    }
}

// ---------------------------------------------------------------------------
// Mining

fn toy_corpus(rng: &mut ChaCha8Rng) -> Vec<ImageRecord> {
    let classes = rng.random_range(1..=3);
    let tags = rng.random_range(1..=10);
    let n = rng.random_range(1..=50);
    (0..n)
        .map(|i| {
            let label = format!("c{}", rng.random_range(0..classes));
            let mut set: BTreeSet<Tag> = (0..tags)
                .filter(|_| rng.random_bool(0.3))
                .map(|t| Tag::new(&format!("t{t}")).unwrap())
                .collect();
            if rng.random_bool(0.5) {
                set.insert(Tag::new(&label).unwrap());
            }
            ImageRecord {
                id: format!("r{i}"),
                label: ClassLabel::new(&label).unwrap(),
                tags: set,
                features: vec![0.0],
            }
        })
        .collect()
}

/// Catalog rows `(class, tag, count)` selected by direct recount.
fn brute_force_catalog(
    records: &[ImageRecord],
    config: &MiningConfig,
) -> Vec<(String, String, u64)> {
    let mut counts: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
    for r in records {
        for t in &r.tags {
            *counts
                .entry(t.as_str().to_string())
                .or_default()
                .entry(r.label.as_str().to_string())
                .or_default() += 1;
        }
    }
    let labels: BTreeSet<&str> = records.iter().map(|r| r.label.as_str()).collect();
    let mut out = Vec::new();
    for class in &labels {
        let mut candidates: Vec<(String, u64)> = counts
            .iter()
            .filter(|(tag, _)| !(config.exclude_class_tags && labels.contains(tag.as_str())))
            .filter_map(|(tag, by_class)| {
                let n = *by_class.get(*class).unwrap_or(&0);
                let total: u64 = by_class.values().sum();
                (n as f64 / total as f64 > config.thr_distin).then(|| (tag.clone(), n))
            })
            .collect();
        candidates.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        candidates.truncate(config.top_k);
        out.extend(
            candidates
                .into_iter()
                .filter(|(_, n)| *n >= config.min_photos)
                .map(|(tag, n)| (class.to_string(), tag, n)),
        );
    }
    out
}

fn mining_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst_row = 0.0f64;
    for case in 0..20 {
        let records = toy_corpus(&mut rng);
        let classes = Classes::from_records(&records);
        let config = MiningConfig {
            thr_distin: 0.6,
            top_k: rng.random_range(1..=10),
            min_photos: rng.random_range(0..=2),
            exclude_class_tags: true,
        };
        let (matrix, catalog) = mine(&records, &classes, &config).map_err(|e| e.to_string())?;
        for (i, tag) in matrix.vocabulary.tags().iter().enumerate() {
            for (j, class) in classes.labels().iter().enumerate() {
                let recount = records
                    .iter()
                    .filter(|r| &r.label == class && r.tags.contains(tag))
                    .count() as u64;
                ensure(matrix.count(i, j) == recount, || {
                    format!(
                        "case {case}: C[{tag}][{class}] = {}, recount {recount}",
                        matrix.count(i, j)
                    )
                })?;
            }
        }
        let vocabulary: BTreeSet<&Tag> = records.iter().flat_map(|r| &r.tags).collect();
        ensure(vocabulary.len() == matrix.vocabulary.len(), || {
            format!("case {case}: vocabulary size")
        })?;
        let scores = distinctive_scores(&matrix).map_err(|e| e.to_string())?;
        for i in 0..scores.num_tags() {
            let row = scores.row(i);
            let total: u64 = matrix.row(i).iter().sum();
            for (j, &s) in row.iter().enumerate() {
                ensure(s == matrix.count(i, j) as f64 / total as f64, || {
                    format!("case {case}: S[{i}][{j}]")
                })?;
            }
            worst_row = worst_row.max((row.iter().sum::<f64>() - 1.0).abs());
        }
        let got: Vec<(String, String, u64)> = catalog
            .entries
            .iter()
            .map(|e| (e.parent.to_string(), e.tag.to_string(), e.photo_count))
            .collect();
        let expected = brute_force_catalog(&records, &config);
        ensure(got == expected, || {
            format!("case {case}: catalog {got:?} != recount {expected:?}")
        })?;
    }
    ensure(worst_row <= 1e-12, || {
        format!("row sum off by {worst_row:e}")
    })?;
    Ok(format!("20 corpora, worst |row sum - 1| = {worst_row:.1e}"))
}

fn mining_defaults() -> Outcome {
    let config = MiningConfig::default();
    ensure(config.thr_distin == 0.6 && config.top_k == 10, || {
        format!("defaults are {config:?}")
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut corpora: Vec<Vec<ImageRecord>> = (0..20).map(|_| toy_corpus(&mut rng)).collect();
    corpora.extend((0..5).map(|seed| {
        generate(&SynthConfig {
            seed,
            tag_noise: 0.3,
            ..Default::default()
        })
        .unwrap()
        .train
    }));
    let mut entries = 0;
    for (case, records) in corpora.iter().enumerate() {
        let classes = Classes::from_records(records);
        let (_, catalog) = mine(records, &classes, &config).map_err(|e| e.to_string())?;
        let mut owner: HashMap<&str, &str> = HashMap::new();
        for e in &catalog.entries {
            ensure(e.score > 0.6, || {
                format!("case {case}: {}/{} has score {}", e.parent, e.tag, e.score)
            })?;
            if let Some(previous) = owner.insert(e.tag.as_str(), e.parent.as_str()) {
                return Err(format!(
                    "case {case}: tag {} under {previous} and {}",
                    e.tag, e.parent
                ));
            }
        }
        entries += catalog.len();
    }
    Ok(format!(
        "{} corpora, {entries} catalog entries",
        corpora.len()
    ))
}

// ---------------------------------------------------------------------------
// Linear SVM

fn solve_small(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-10 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Primal optimum of the bias-augmented hinge-loss SVM by enumerating which
/// points sit beyond, on, or inside the margin.
fn primal_optimum(xs: &[Vec<f64>], ys: &[bool], c: f64) -> f64 {
    let aug: Vec<Vec<f64>> = xs
        .iter()
        .map(|x| x.iter().copied().chain([1.0]).collect())
        .collect();
    let sy: Vec<f64> = ys.iter().map(|&y| if y { 1.0 } else { -1.0 }).collect();
    let n = xs.len();
    let dim = aug[0].len();
    let primal = |z: &[f64]| {
        0.5 * dot(z, z)
            + c * (0..n)
                .map(|i| (1.0 - sy[i] * dot(z, &aug[i])).max(0.0))
                .sum::<f64>()
    };
    let mut best = primal(&vec![0.0; dim]);
    for code in 0..3usize.pow(n as u32) {
        let mut state = Vec::with_capacity(n);
        let mut rest = code;
        for _ in 0..n {
            state.push(rest % 3);
            rest /= 3;
        }
        let margin: Vec<usize> = (0..n).filter(|&i| state[i] == 1).collect();
        if margin.len() > dim {
            continue;
        }
        let mut base = vec![0.0; dim];
        for i in (0..n).filter(|&i| state[i] == 2) {
            for (b, x) in base.iter_mut().zip(&aug[i]) {
                *b += c * sy[i] * x;
            }
        }
        let gram: Vec<Vec<f64>> = margin
            .iter()
            .map(|&j| {
                margin
                    .iter()
                    .map(|&i| sy[i] * sy[j] * dot(&aug[i], &aug[j]))
                    .collect()
            })
            .collect();
        let rhs: Vec<f64> = margin
            .iter()
            .map(|&j| 1.0 - sy[j] * dot(&base, &aug[j]))
            .collect();
        let Some(lambda) = solve_small(gram, rhs) else {
            continue;
        };
        let mut z = base;
        for (&i, l) in margin.iter().zip(&lambda) {
            for (zk, x) in z.iter_mut().zip(&aug[i]) {
                *zk += l * sy[i] * x;
            }
        }
        best = best.min(primal(&z));
    }
    best
}

fn random_problem(rng: &mut ChaCha8Rng, max_n: usize, d: usize) -> (Vec<Vec<f64>>, Vec<bool>) {
    let n = rng.random_range(2..=max_n);
    let mut ys: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
    ys[0] = true;
    ys[1] = false;
    let xs = (0..n)
        .map(|i| {
            let shift = if ys[i] { 0.8 } else { -0.8 };
            (0..d)
                .map(|_| rng.random_range(-2.0..2.0) + shift)
                .collect()
        })
        .collect();
    (xs, ys)
}

fn svm_solver() -> Outcome {
    let x = [[-1.0], [1.0]];
    let rows: Vec<&[f64]> = x.iter().map(|r| r.as_slice()).collect();
    let config = TrainConfig {
        c: 100.0,
        tolerance: 1e-2,
        ..Default::default()
    };
    let fit = train_binary(&rows, &[false, true], &config).map_err(|e| e.to_string())?;
    let (w, b) = (fit.model.weights[0], fit.model.bias);
    ensure((w - 1.0).abs() <= 1e-2 && b.abs() <= 1e-2, || {
        format!("two points gave w={w}, b={b}")
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst_consistency = 0.0f64;
    for case in 0..50 {
        let d = rng.random_range(1..=4);
        let (xs, ys) = random_problem(&mut rng, 30, d);
        let rows: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let c = [0.1, 1.0, 10.0][case % 3];
        let config = TrainConfig {
            c,
            seed: case as u64,
            ..Default::default()
        };
        let fit = train_binary(&rows, &ys, &config).map_err(|e| e.to_string())?;
        let duals = fit.duals();
        ensure(duals.iter().all(|&a| (0.0..=c).contains(&a)), || {
            format!("case {case}: dual outside [0, {c}]")
        })?;
        let w = primal_from_duals(duals, &rows, &ys);
        let gap = w
            .iter()
            .zip(fit.augmented_weights())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst_consistency = worst_consistency.max(gap);
        ensure(gap <= 1e-9, || {
            format!("case {case}: primal/dual weight gap {gap:e}")
        })?;
        ensure(
            fit.report.converged == (fit.report.final_violation <= config.tolerance),
            || format!("case {case}: converged flag disagrees with violation"),
        )?;
    }

    let mut worst_gap = 0.0f64;
    let mut informative = 0;
    for case in 0..40 {
        let (xs, ys) = random_problem(&mut rng, 6, 2);
        let rows: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let c = [0.5, 1.0, 5.0][case % 3];
        let config = TrainConfig {
            c,
            tolerance: 1e-9,
            max_epochs: 200_000,
            seed: case as u64,
            ..Default::default()
        };
        let fit = train_binary(&rows, &ys, &config).map_err(|e| e.to_string())?;
        let reference = primal_optimum(&xs, &ys, c);
        if reference < c * xs.len() as f64 - 1e-6 {
            informative += 1;
        }
        let gap = (fit.report.dual_objective - reference).abs();
        worst_gap = worst_gap.max(gap);
        ensure(gap <= 1e-4, || {
            format!(
                "case {case}: dual objective {} vs reference {reference}",
                fit.report.dual_objective
            )
        })?;
    }
    Ok(format!(
        "w={w:.4} b={b:.1e}; 50 instances, weight gap {worst_consistency:.1e}; \
         40 QP references ({informative} below the zero-weight objective), worst {worst_gap:.1e}"
    ))
}

// ---------------------------------------------------------------------------
// Platt scaling

fn platt() -> Outcome {
    let mut decisions = Vec::new();
    let mut labels = Vec::new();
    for i in 1..=50 {
        let f = i as f64 / 10.0;
        for (value, positive) in [(f, i % 4 != 0), (-f, i % 4 == 0)] {
            decisions.push(value);
            labels.push(positive);
        }
    }
    let symmetric = fit_platt(&decisions, &labels).map_err(|e| e.to_string())?;
    ensure(symmetric.b.abs() <= 1e-6, || {
        format!("symmetric data gave b = {:e}", symmetric.b)
    })?;

    let truth = PlattParams { a: 2.0, b: -1.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let decisions: Vec<f64> = (0..10_000).map(|_| rng.random_range(-4.0..4.0)).collect();
    let labels: Vec<bool> = decisions
        .iter()
        .map(|&f| rng.random_bool(sigmoid_prob(truth, f)))
        .collect();
    let fit = fit_platt(&decisions, &labels).map_err(|e| e.to_string())?;
    ensure(
        (fit.a - truth.a).abs() <= 0.1 && (fit.b - truth.b).abs() <= 0.1,
        || {
            format!(
                "recovered ({}, {}) for ({}, {})",
                fit.a, fit.b, truth.a, truth.b
            )
        },
    )?;
    Ok(format!(
        "|b| = {:.1e}; recovered a={:.3} b={:.3}",
        symmetric.b.abs(),
        fit.a,
        fit.b
    ))
}

// ---------------------------------------------------------------------------
// Pairwise coupling

fn coupling() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for case in 0..200 {
        let k = rng.random_range(2..=8);
        let mut r = vec![vec![0.0; k]; k];
        for i in 0..k {
            for j in i + 1..k {
                r[i][j] = rng.random_range(0.001..0.999);
                r[j][i] = 1.0 - r[i][j];
            }
        }
        let p = couple(&r, 1e-10, 100 * k).map_err(|e| e.to_string())?.p;
        let sum: f64 = p.iter().sum();
        ensure(
            p.iter().all(|&v| v >= 0.0) && (sum - 1.0).abs() <= 1e-9,
            || format!("case {case}: {p:?} off the simplex"),
        )?;
    }

    let mut worst = 0.0f64;
    for _ in 0..200 {
        let k = rng.random_range(2..=8);
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let truth: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let r: Vec<Vec<f64>> = (0..k)
            .map(|i| {
                (0..k)
                    .map(|j| {
                        if i == j {
                            0.0
                        } else {
                            truth[i] / (truth[i] + truth[j])
                        }
                    })
                    .collect()
            })
            .collect();
        let p = couple(&r, 1e-10, 100 * k).map_err(|e| e.to_string())?.p;
        for (a, b) in p.iter().zip(&truth) {
            worst = worst.max((a - b).abs());
        }
    }
    ensure(worst <= 1e-6, || {
        format!("consistent matrices recovered within {worst:e}")
    })?;

    for _ in 0..100 {
        let r01: f64 = rng.random_range(1e-6..1.0 - 1e-6);
        let r = vec![vec![0.0, r01], vec![1.0 - r01, 0.0]];
        let p = couple(&r, 1e-10, 200).map_err(|e| e.to_string())?.p;
        let expected = [r01, 1.0 - r01];
        ensure(p == expected, || format!("K=2 gave {p:?} for r01 = {r01}"))?;
    }
    Ok(format!(
        "200 simplex checks; consistency error {worst:.1e}; K=2 exact"
    ))
}

// ---------------------------------------------------------------------------
// Average precision

/// AP from first principles: for every relevant ranked item, the fraction of
/// relevant items among the ranks at or above it.
fn ap_by_definition(ranking: &[usize], relevant: &[usize]) -> f64 {
    let mut total = 0.0;
    for (k, item) in ranking.iter().enumerate() {
        if relevant.contains(item) {
            let above = ranking[..=k]
                .iter()
                .filter(|x| relevant.contains(x))
                .count();
            total += above as f64 / (k + 1) as f64;
        }
    }
    total / relevant.len() as f64
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn ap_oracle() -> Outcome {
    let mut checked = 0usize;
    for n in 1..=6 {
        for ranking in permutations(n) {
            let ids: Vec<String> = ranking.iter().map(|i| format!("item{i}")).collect();
            // One extra relevant id outside the ranking is allowed as item n.
            for mask in 1u32..(1 << (n + 1)) {
                let relevant: Vec<usize> = (0..=n).filter(|i| mask & (1 << i) != 0).collect();
                let set: HashSet<String> = relevant.iter().map(|i| format!("item{i}")).collect();
                let got = average_precision(&ids, &set);
                let expected = ap_by_definition(&ranking, &relevant);
                ensure((got - expected).abs() <= 1e-12, || {
                    format!("ranking {ranking:?} relevant {relevant:?}: {got} vs {expected}")
                })?;
                checked += 1;
            }
        }
    }
    ensure(average_precision(&["a"], &HashSet::new()) == 0.0, || {
        "empty relevant set".into()
    })?;
    Ok(format!("{checked} (ranking, relevant set) pairs"))
}

// ---------------------------------------------------------------------------
// Synthetic reproduction and end to end

fn method_map(
    method: MethodKind,
    split: &subclass_rep::dataset::DatasetSplit,
    test: &[ImageRecord],
    classes: &Classes,
    config: &PipelineConfig,
) -> Result<f64, String> {
    let results = run_method(method, split, test, classes, config).map_err(|e| e.to_string())?;
    let truth: HashMap<String, ClassLabel> = test
        .iter()
        .map(|r| (r.id.clone(), r.label.clone()))
        .collect();
    let report = map_over_classes(
        &results[0].per_class_rankings,
        &truth,
        results[0].train_size,
    )
    .map_err(|e| e.to_string())?;
    Ok(report.map)
}

fn directional() -> Outcome {
    let mut wins = 0;
    let mut lines = Vec::new();
    for seed in 0..5 {
        let corpus = generate(&SynthConfig {
            seed,
            ..Default::default()
        })
        .map_err(|e| e.to_string())?;
        let classes = Classes::from_records(&corpus.train);
        let split = split_dataset(&corpus.train, [4, 3, 1], seed).map_err(|e| e.to_string())?;
        let config = PipelineConfig {
            seed,
            ..Default::default()
        };
        let sub = method_map(
            MethodKind::SubclassProb,
            &split,
            &corpus.test,
            &classes,
            &config,
        )?;
        let vis = method_map(MethodKind::VisFeat, &split, &corpus.test, &classes, &config)?;
        if sub >= vis && sub >= 0.75 {
            wins += 1;
        }
        lines.push(format!("{sub:.3}/{vis:.3}"));
    }
    let detail = format!(
        "{wins}/5 seeds (SubClassProb/VisFeat MAP: {})",
        lines.join(", ")
    );
    ensure(wins >= 4, || detail.clone())?;
    Ok(detail)
}

fn ranking_bytes(out: &Path, manifest: &RunManifest) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut files = BTreeMap::new();
    for method in &manifest.methods {
        for run in &method.runs {
            for rel in &run.rankings {
                let bytes = std::fs::read(out.join(rel)).map_err(|e| e.to_string())?;
                files.insert(rel.display().to_string(), bytes);
            }
        }
    }
    Ok(files)
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    cmd_synth(
        &SynthConfig {
            seed: 21,
            ..Default::default()
        },
        dir.path(),
    )
    .map_err(|e| e.to_string())?;
    let (config, text) =
        RunConfig::load(&dir.path().join("run.toml")).map_err(|e| e.to_string())?;
    let original = cmd_run(&config, &text).map_err(|e| e.to_string())?;
    let manifest_path = config.out_dir.join("manifest.json");

    let mut outputs = Vec::new();
    for name in ["first", "second"] {
        let manifest = RunManifest::load(&manifest_path).map_err(|e| e.to_string())?;
        manifest.verify_inputs().map_err(|e| e.to_string())?;
        let mut config = manifest.config.clone();
        config.out_dir = dir.path().join(name);
        let rerun = cmd_run(&config, &manifest.config_text).map_err(|e| e.to_string())?;
        outputs.push(ranking_bytes(&config.out_dir, &rerun)?);
    }
    let reference = ranking_bytes(&config.out_dir, &original)?;
    ensure(!reference.is_empty(), || "no ranking files".into())?;
    ensure(outputs[0] == outputs[1] && outputs[0] == reference, || {
        "ranking CSVs differ between runs".into()
    })?;
    Ok(format!(
        "{} ranking CSVs identical across 3 runs",
        reference.len()
    ))
}

fn hygiene() -> Outcome {
    let corpus = generate(&SynthConfig {
        train_records: 360,
        test_records: 90,
        seed: 31,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let classes = Classes::from_records(&corpus.train);
    let mut runs = 0;
    for seed in 0..3u64 {
        let mut shuffled = corpus.train.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let split = split_dataset(&shuffled, [4, 3, 1], seed).map_err(|e| e.to_string())?;
        let variants = [
            PipelineConfig::default(),
            PipelineConfig {
                per_class_train_sizes: vec![20, 40, 1000],
                ..Default::default()
            },
            PipelineConfig {
                representation_mode: RepresentationMode::Margin,
                ..Default::default()
            },
            PipelineConfig {
                bank_mode: BankMode::OneVsOne,
                ..Default::default()
            },
        ];
        for config in variants {
            let config = PipelineConfig { seed, ..config };
            for method in MethodKind::ALL {
                run_method(method, &split, &corpus.test, &classes, &config)
                    .map_err(|e| e.to_string())?;
                runs += 1;
            }
        }
    }
    let fired = hygiene_violations();
    ensure(fired == 0, || {
        format!("disjointness check fired {fired} times")
    })?;
    Ok(format!(
        "{runs} pipeline runs plus every criterion above, 0 violations"
    ))
}

fn main() {
    let criteria: [(&str, Duration, fn() -> Outcome); 9] = [
        (
            "co-occurrence and distinctive scores match recount",
            Duration::from_secs(1),
            mining_oracle,
        ),
        (
            "default selection is exclusive and above threshold",
            Duration::from_secs(1),
            mining_defaults,
        ),
        (
            "svm solver: analytic, feasibility, consistency, QP reference",
            Duration::from_secs(10),
            svm_solver,
        ),
        (
            "platt: symmetric offset and sigmoid recovery",
            Duration::from_secs(5),
            platt,
        ),
        (
            "pairwise coupling: simplex, consistency, K=2",
            Duration::from_secs(5),
            coupling,
        ),
        (
            "average precision matches exhaustive definition",
            Duration::from_secs(5),
            ap_oracle,
        ),
        (
            "subclass representation beats raw features on synthetic mixtures",
            Duration::from_secs(120),
            directional,
        ),
        (
            "run from manifest reproduces ranking CSVs byte for byte",
            Duration::from_secs(120),
            determinism,
        ),
        (
            "stage and test data stay disjoint",
            Duration::from_secs(120),
            hygiene,
        ),
    ];
    let mut failed = 0;
    for (name, limit, check) in criteria {
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > limit => {
                Err(format!("{detail}; took {elapsed:.2?}, limit {limit:?}"))
            }
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS  {name}  [{elapsed:.2?}]  {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}  [{elapsed:.2?}]  {detail}");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
