//! The work behind each subcommand, callable without a process boundary.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use crate::dataset::{
    load_records, load_records_with, split_dataset, write_records, ClassLabel, Classes,
    ImageRecord, LoadOptions,
};
use crate::error::{Error, Result};
use crate::eval::{learning_curve, map_over_classes, MapReport, RankedList};
use crate::pipeline::{run_method, subclass_validation_ap, Clamp, MethodKind};
use crate::seed::{self, stream};
use crate::synth::{generate, SynthConfig};
use crate::tagmine::{mine, MiningConfig};

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::format("json", e))?;
    bytes.push(b'\n');
    write_file(path, &bytes)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| Error::format(format!("json: {}", path.display()), e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

fn absolute(path: &Path) -> Result<PathBuf> {
    std::path::absolute(path).map_err(|e| Error::io(path, e))
}

fn non_empty(records: Vec<ImageRecord>, path: &Path) -> Result<Vec<ImageRecord>> {
    if records.is_empty() {
        return Err(Error::format(
            "dataset",
            format!("{} holds no records", path.display()),
        ));
    }
    Ok(records)
}

/// File name for a class label: bytes outside `[A-Za-z0-9_-]` (and a
/// leading dot) become `%XX`.
pub fn label_file_stem(label: &str) -> String {
    let mut out = String::new();
    for (i, b) in label.bytes().enumerate() {
        if b.is_ascii_alphanumeric() || b == b'_' || b == b'-' || (b == b'.' && i > 0) {
            out.push(b as char);
        } else {
            let _ = write!(out, "%{b:02X}");
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct MineSummary {
    pub per_class: Vec<(ClassLabel, usize)>,
}

impl MineSummary {
    pub fn total(&self) -> usize {
        self.per_class.iter().map(|(_, n)| n).sum()
    }
}

/// Writes `catalog.csv` and `cooccurrence.csv` for `corpus` under `out`.
pub fn cmd_mine(corpus: &Path, mining: &MiningConfig, out: &Path) -> Result<MineSummary> {
    mining.validate()?;
    let records = non_empty(load_records(corpus, None)?, corpus)?;
    let classes = Classes::from_records(&records);
    let (matrix, catalog) = mine(&records, &classes, mining)?;
    write_file(&out.join("catalog.csv"), catalog.to_csv_string().as_bytes())?;
    let mut triplets = Vec::new();
    matrix.write_triplets_csv(&mut triplets)?;
    write_file(&out.join("cooccurrence.csv"), &triplets)?;
    Ok(MineSummary {
        per_class: classes
            .labels()
            .iter()
            .cloned()
            .zip(catalog.counts_per_class(&classes))
            .collect(),
    })
}

/// Writes the three parts of `corpus` as JSONL; returns their sizes.
pub fn cmd_split(corpus: &Path, ratios: [u32; 3], seed: u64, out: &Path) -> Result<[usize; 3]> {
    let records = non_empty(load_records(corpus, None)?, corpus)?;
    let split = split_dataset(&records, ratios, seed)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for (name, part) in ["part_subclass", "part_top", "part_val"]
        .iter()
        .zip(split.parts())
    {
        write_records(&out.join(format!("{name}.jsonl")), part)?;
    }
    Ok(split.parts().map(<[ImageRecord]>::len))
}

/// Scores `<class>.csv` rankings in `rankings` against the labels of `truth`.
pub fn cmd_evaluate(
    rankings: &Path,
    truth: &Path,
    train_size: usize,
    out: Option<&Path>,
) -> Result<MapReport> {
    let records = non_empty(load_records(truth, None)?, truth)?;
    let classes = Classes::from_records(&records);
    let truth: HashMap<String, ClassLabel> = records.into_iter().map(|r| (r.id, r.label)).collect();
    let lists = classes
        .labels()
        .iter()
        .map(|class| {
            let path = rankings.join(format!("{}.csv", label_file_stem(class.as_str())));
            let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
            Ok((class.clone(), RankedList::read_csv(file)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let report = map_over_classes(&lists, &truth, train_size)?;
    if let Some(out) = out {
        write_json(&out.join("evaluation.json"), &report)?;
    }
    Ok(report)
}

/// Writes `train.jsonl`, `test.jsonl` and a ready-to-run `run.toml`.
pub fn cmd_synth(config: &SynthConfig, out: &Path) -> Result<()> {
    let corpus = generate(config)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_records(&out.join("train.jsonl"), &corpus.train)?;
    write_records(&out.join("test.jsonl"), &corpus.test)?;
    let mut run = RunConfig::new("train.jsonl", "test.jsonl");
    run.pipeline.seed = config.seed;
    write_file(&out.join("run.toml"), run.render()?.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
    pub records: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeOutputs {
    pub train_size: usize,
    pub map: f64,
    pub rankings: Vec<PathBuf>,
    pub models: Vec<PathBuf>,
    pub dropped_subclasses: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodOutputs {
    pub method: MethodKind,
    pub report: PathBuf,
    pub curve: PathBuf,
    pub runs: Vec<SizeOutputs>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestClamp {
    pub method: MethodKind,
    pub train_size: usize,
    #[serde(flatten)]
    pub clamp: Clamp,
}

/// Everything needed to regenerate a run from its inputs. Output paths are
/// relative to `config.out_dir`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    /// The configuration file exactly as read.
    pub config_text: String,
    /// The effective configuration: absolute paths, overrides applied.
    pub config: RunConfig,
    pub classes: Vec<ClassLabel>,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<InputDigest>,
    pub catalog_sha256: Option<String>,
    pub methods: Vec<MethodOutputs>,
    pub clamps: Vec<ManifestClamp>,
    pub warnings: Vec<String>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let manifest: RunManifest = read_json(path)?;
        manifest.config.validate()?;
        Ok(manifest)
    }

    /// Fails if any input file differs from the digest recorded at run time.
    pub fn verify_inputs(&self) -> Result<()> {
        for input in &self.inputs {
            let bytes = fs::read(&input.path).map_err(|e| Error::io(&input.path, e))?;
            if sha256_hex(&bytes) != input.sha256 {
                return Err(Error::Config(format!(
                    "{} changed since the manifest was written",
                    input.path.display()
                )));
            }
        }
        Ok(())
    }
}

fn digest_input(path: &Path, records: usize) -> Result<InputDigest> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(InputDigest {
        path: path.to_path_buf(),
        sha256: sha256_hex(&bytes),
        records,
    })
}

/// Splits, trains, ranks and evaluates every configured method, writing all
/// outputs and `manifest.json` under `config.out_dir`.
pub fn cmd_run(config: &RunConfig, config_text: &str) -> Result<RunManifest> {
    config.validate()?;
    let mut config = config.clone();
    config.corpus = absolute(&config.corpus)?;
    config.test_corpus = absolute(&config.test_corpus)?;
    config.out_dir = absolute(&config.out_dir)?;
    let p = &config.pipeline;

    let fixed = config.classes.clone().map(Classes::new).transpose()?;
    let train = load_records_with(
        &config.corpus,
        &LoadOptions {
            expected_dim: config.feature_dim,
            allowed_labels: fixed.clone(),
        },
    )?;
    let train = non_empty(train, &config.corpus)?;
    let classes = fixed.unwrap_or_else(|| Classes::from_records(&train));
    let test = load_records_with(
        &config.test_corpus,
        &LoadOptions {
            expected_dim: Some(train[0].features.len()),
            allowed_labels: Some(classes.clone()),
        },
    )?;
    let test = non_empty(test, &config.test_corpus)?;
    let truth: HashMap<String, ClassLabel> = test
        .iter()
        .map(|r| (r.id.clone(), r.label.clone()))
        .collect();
    let split = split_dataset(&train, p.split_ratios, p.seed)?;

    let out = config.out_dir.clone();
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let mut manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_text: config_text.to_string(),
        config: config.clone(),
        classes: classes.labels().to_vec(),
        seeds: [
            ("base", p.seed),
            ("split", p.seed),
            ("subsample", seed::derive(p.seed, &[stream::SUBSAMPLE])),
            ("bank", seed::derive(p.seed, &[stream::BANK])),
            ("pairwise", seed::derive(p.seed, &[stream::PAIRWISE])),
            ("top", seed::derive(p.seed, &[stream::TOP])),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect(),
        inputs: vec![
            digest_input(&config.corpus, train.len())?,
            digest_input(&config.test_corpus, test.len())?,
        ],
        catalog_sha256: None,
        methods: Vec::new(),
        clamps: Vec::new(),
        warnings: Vec::new(),
    };

    if config.methods.contains(&MethodKind::SubclassProb) {
        let (matrix, catalog) = mine(&split.part_subclass, &classes, &p.mining)?;
        let text = catalog.to_csv_string();
        manifest.catalog_sha256 = Some(sha256_hex(text.as_bytes()));
        write_file(&out.join("catalog.csv"), text.as_bytes())?;
        let mut triplets = Vec::new();
        matrix.write_triplets_csv(&mut triplets)?;
        write_file(&out.join("cooccurrence.csv"), &triplets)?;
        for (class, n) in classes
            .labels()
            .iter()
            .zip(catalog.counts_per_class(&classes))
        {
            if n == 0 {
                manifest
                    .warnings
                    .push(format!("class {class} has no subclasses"));
            }
        }
    }

    for &method in &config.methods {
        let results = run_method(method, &split, &test, &classes, p)?;
        let mut reports = Vec::with_capacity(results.len());
        let mut runs = Vec::with_capacity(results.len());
        for result in &results {
            let size_dir = PathBuf::from(format!("n{}", result.train_size));
            let rank_dir = PathBuf::from("rankings")
                .join(method.name())
                .join(&size_dir);
            let mut rankings = Vec::new();
            for (class, ranking) in &result.per_class_rankings {
                let rel = rank_dir.join(format!("{}.csv", label_file_stem(class.as_str())));
                let mut bytes = Vec::new();
                ranking.write_csv(&mut bytes)?;
                write_file(&out.join(&rel), &bytes)?;
                rankings.push(rel);
            }

            let model_dir = PathBuf::from("models").join(method.name()).join(&size_dir);
            let mut models = Vec::new();
            let artifacts = &result.artifacts;
            if let Some(catalog) = &artifacts.catalog {
                let rel = model_dir.join("catalog.csv");
                write_file(&out.join(&rel), catalog.to_csv_string().as_bytes())?;
                models.push(rel);
            }
            if let Some(bank) = &artifacts.bank {
                let rel = model_dir.join("bank.json");
                write_json(&out.join(&rel), bank)?;
                models.push(rel);
                let mut csv = String::from("parent_class,tag,ap\n");
                for (id, ap) in
                    subclass_validation_ap(bank, &split.part_val, p.representation_mode)?
                {
                    let _ = writeln!(csv, "{},{},{ap}", id.parent, id.tag);
                }
                write_file(
                    &out.join("reports")
                        .join(format!("subclass_ap_n{}.csv", result.train_size)),
                    csv.as_bytes(),
                )?;
            }
            if let Some(stage1) = &artifacts.stage1 {
                let rel = model_dir.join("stage1.json");
                write_json(&out.join(&rel), stage1)?;
                models.push(rel);
            }
            let rel = model_dir.join("top.json");
            write_json(&out.join(&rel), &artifacts.top)?;
            models.push(rel);

            for clamp in &result.clamps {
                manifest.warnings.push(format!(
                    "{method} n={}: {} has {} records of class {}, fewer than requested",
                    result.train_size, clamp.pool, clamp.available, clamp.class
                ));
                manifest.clamps.push(ManifestClamp {
                    method,
                    train_size: result.train_size,
                    clamp: clamp.clone(),
                });
            }
            let binaries = artifacts.binaries();
            let stalled = binaries.iter().filter(|b| !b.report.converged).count();
            if stalled > 0 {
                let message = format!(
                    "{method} n={}: {stalled} of {} binaries reached max_epochs before the KKT tolerance",
                    result.train_size,
                    binaries.len()
                );
                log::warn!("{message}");
                manifest.warnings.push(message);
            }
            for id in &result.dropped_subclasses {
                manifest.warnings.push(format!(
                    "{method} n={}: subclass {id} skipped, too few stage-1 positives",
                    result.train_size
                ));
            }

            let report = map_over_classes(&result.per_class_rankings, &truth, result.train_size)?;
            runs.push(SizeOutputs {
                train_size: result.train_size,
                map: report.map,
                rankings,
                models,
                dropped_subclasses: result
                    .dropped_subclasses
                    .iter()
                    .map(|id| id.to_string())
                    .collect(),
            });
            reports.push(report);
        }
        let report_path = PathBuf::from("reports").join(format!("{}.json", method.name()));
        write_json(&out.join(&report_path), &reports)?;
        let curve_path = PathBuf::from("curves").join(format!("{}.csv", method.name()));
        write_file(
            &out.join(&curve_path),
            learning_curve(&reports)?.to_csv_string().as_bytes(),
        )?;
        manifest.methods.push(MethodOutputs {
            method,
            report: report_path,
            curve: curve_path,
            runs,
        });
    }
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// SVM_SubClassProb against one baseline at one size, or averaged over all
/// sizes when `train_size` is `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub baseline: MethodKind,
    pub train_size: Option<usize>,
    pub subclass_map: f64,
    pub baseline_map: f64,
    pub delta: f64,
    /// `delta / baseline_map`; undefined when the baseline MAP is 0.
    pub relative_gain: Option<f64>,
}

fn sizes(reports: &[MapReport]) -> Vec<usize> {
    reports.iter().map(|r| r.train_size).collect()
}

pub fn compare_reports(
    reports: &BTreeMap<MethodKind, Vec<MapReport>>,
) -> Result<Vec<ComparisonRow>> {
    if reports.len() < 2 {
        return Err(Error::Eval(format!(
            "compare needs at least two methods, found {}",
            reports.len()
        )));
    }
    let subclass = reports
        .get(&MethodKind::SubclassProb)
        .ok_or_else(|| Error::Eval("compare needs SVM_SubClassProb reports".into()))?;
    let grid = sizes(subclass);
    let mut rows = Vec::new();
    for (&baseline, base_reports) in reports
        .iter()
        .filter(|(m, _)| **m != MethodKind::SubclassProb)
    {
        if sizes(base_reports) != grid {
            return Err(Error::Eval(format!(
                "size grids differ: {} has {:?}, {} has {:?}",
                MethodKind::SubclassProb,
                grid,
                baseline,
                sizes(base_reports)
            )));
        }
        let per_size: Vec<ComparisonRow> = subclass
            .iter()
            .zip(base_reports)
            .map(|(s, b)| ComparisonRow {
                baseline,
                train_size: Some(s.train_size),
                subclass_map: s.map,
                baseline_map: b.map,
                delta: s.map - b.map,
                relative_gain: (b.map != 0.0).then(|| (s.map - b.map) / b.map),
            })
            .collect();
        let n = per_size.len() as f64;
        let mean = |f: fn(&ComparisonRow) -> f64| per_size.iter().map(f).sum::<f64>() / n;
        let gains: Option<Vec<f64>> = per_size.iter().map(|r| r.relative_gain).collect();
        let average = ComparisonRow {
            baseline,
            train_size: None,
            subclass_map: mean(|r| r.subclass_map),
            baseline_map: mean(|r| r.baseline_map),
            delta: mean(|r| r.delta),
            relative_gain: gains.map(|g| g.iter().sum::<f64>() / n),
        };
        rows.extend(per_size);
        rows.push(average);
    }
    Ok(rows)
}

fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut csv =
        String::from("baseline,train_size,map_subclass,map_baseline,delta,relative_gain\n");
    for r in rows {
        let size = r.train_size.map_or("mean".to_string(), |n| n.to_string());
        let gain = r.relative_gain.map_or(String::new(), |g| g.to_string());
        let _ = writeln!(
            csv,
            "{},{size},{},{},{},{gain}",
            r.baseline, r.subclass_map, r.baseline_map, r.delta
        );
    }
    csv
}

fn comparison_table(rows: &[ComparisonRow]) -> String {
    let header = ["baseline", "size", "MAP sub", "MAP base", "delta", "gain"];
    let cells: Vec<[String; 6]> = rows
        .iter()
        .map(|r| {
            [
                r.baseline.to_string(),
                r.train_size.map_or("mean".into(), |n| n.to_string()),
                format!("{:.4}", r.subclass_map),
                format!("{:.4}", r.baseline_map),
                format!("{:+.4}", r.delta),
                r.relative_gain
                    .map_or("n/a".into(), |g| format!("{:+.1}%", 100.0 * g)),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..6)
        .map(|i| {
            cells
                .iter()
                .map(|c| c[i].len())
                .chain([header[i].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    let mut line = |row: &[&str]| {
        let parts: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (cell, w))| {
                if i < 2 {
                    format!("{cell:<w$}")
                } else {
                    format!("{cell:>w$}")
                }
            })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&header);
    for c in &cells {
        line(&c.iter().map(String::as_str).collect::<Vec<_>>());
    }
    out
}

/// Reads `<method>.json` reports from `reports`, writes `comparison.csv`
/// under `out` and returns the aligned text table.
pub fn cmd_compare(reports: &Path, out: &Path) -> Result<String> {
    let entries = fs::read_dir(reports).map_err(|e| Error::io(reports, e))?;
    let mut by_method = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(reports, e))?.path();
        if path.extension().is_none_or(|x| x != "json") {
            continue;
        }
        let Some(method) = path
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(MethodKind::from_name)
        else {
            log::warn!("compare: skipping {}", path.display());
            continue;
        };
        by_method.insert(method, read_json::<Vec<MapReport>>(&path)?);
    }
    let rows = compare_reports(&by_method)?;
    write_file(
        &out.join("comparison.csv"),
        comparison_csv(&rows).as_bytes(),
    )?;
    Ok(comparison_table(&rows))
}
