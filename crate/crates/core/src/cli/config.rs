//! TOML run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::ClassLabel;
use crate::error::{Error, Result};
use crate::pipeline::{MethodKind, PipelineConfig};

/// Everything `run` needs: inputs, output directory, methods and the
/// pipeline settings under `[pipeline]`.
///
/// ```toml
/// corpus = "train.jsonl"
/// test_corpus = "test.jsonl"
/// out_dir = "out"
/// methods = ["SVM_SubClassProb", "SVM_VisFeat", "SVM_ClassProb"]
///
/// [pipeline]
/// seed = 7
/// per_class_train_sizes = [60, 120]
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub test_corpus: PathBuf,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "default_methods")]
    pub methods: Vec<MethodKind>,
    /// Fixes class order; defaults to the sorted labels of the corpus.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<Vec<ClassLabel>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_dim: Option<usize>,
    #[serde(default)]
    pub pipeline: PipelineConfig,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_methods() -> Vec<MethodKind> {
    MethodKind::ALL.to_vec()
}

impl RunConfig {
    pub fn new(corpus: impl Into<PathBuf>, test_corpus: impl Into<PathBuf>) -> Self {
        RunConfig {
            corpus: corpus.into(),
            test_corpus: test_corpus.into(),
            out_dir: default_out_dir(),
            methods: default_methods(),
            classes: None,
            feature_dim: None,
            pipeline: PipelineConfig::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn render(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::parse(&text)?;
        config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok((config, text))
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config(
                "methods must list at least one method".into(),
            ));
        }
        let mut seen = self.methods.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.methods.len() {
            return Err(Error::Config("methods contains duplicates".into()));
        }
        if let Some(dim) = self.feature_dim {
            if dim == 0 {
                return Err(Error::Config("feature_dim must be >= 1".into()));
            }
        }
        self.pipeline.validate()
    }

    /// Makes relative paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        for path in [&mut self.corpus, &mut self.test_corpus, &mut self.out_dir] {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{BankMode, RepresentationMode};
    use proptest::prelude::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let config = RunConfig::parse("corpus = \"a.jsonl\"\ntest_corpus = \"b.jsonl\"\n").unwrap();
        assert_eq!(config.methods.len(), 3);
        assert_eq!(config.pipeline, PipelineConfig::default());
        assert_eq!(config.out_dir, PathBuf::from("out"));
    }

    #[test]
    fn rejects_bad_configs() {
        let base = "corpus = \"a\"\ntest_corpus = \"b\"\n";
        assert!(RunConfig::parse(&format!("{base}methods = []\n")).is_err());
        assert!(RunConfig::parse(&format!("{base}methods = [\"SVM_Nope\"]\n")).is_err());
        assert!(RunConfig::parse(&format!("{base}colour = 1\n")).is_err());
        assert!(RunConfig::parse(&format!("{base}[pipeline]\ncalibration_folds = 1\n")).is_err());
        assert!(RunConfig::parse(&format!("{base}[pipeline.mining]\nthr_distin = 1.5\n")).is_err());
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let mut config = RunConfig::new("a.jsonl", "/abs/b.jsonl");
        config.resolve_paths(Path::new("/runs/x"));
        assert_eq!(config.corpus, PathBuf::from("/runs/x/a.jsonl"));
        assert_eq!(config.test_corpus, PathBuf::from("/abs/b.jsonl"));
        assert_eq!(config.out_dir, PathBuf::from("/runs/x/out"));
    }

    proptest! {
        #[test]
        fn render_then_parse_is_identity(
            seed in 0..=i64::MAX as u64,
            thr in 0.0f64..1.0,
            top_k in 1usize..20,
            c in 0.01f64..100.0,
            tol in 1e-8f64..1e-1,
            folds in 2usize..6,
            cap in 1usize..20_000,
            neg_ratio in 0.1f64..4.0,
            sizes in proptest::collection::btree_set(1usize..5000, 0..4),
            margin in any::<bool>(),
            methods in proptest::sample::subsequence(MethodKind::ALL.to_vec(), 1..=3),
            dim in proptest::option::of(1usize..512),
        ) {
            let mut config = RunConfig::new("corpus.jsonl", "dir/test.jsonl");
            config.methods = methods;
            config.feature_dim = dim;
            config.classes = Some(vec![ClassLabel::new("beach").unwrap(), ClassLabel::new("2012").unwrap()]);
            let p = &mut config.pipeline;
            p.seed = seed;
            p.mining.thr_distin = thr;
            p.mining.top_k = top_k;
            p.train.c = c;
            p.train.tolerance = tol;
            p.calibration_folds = folds;
            p.subclass_cap = cap;
            p.neg_ratio = neg_ratio;
            p.per_class_train_sizes = sizes.into_iter().collect();
            p.representation_mode = if margin { RepresentationMode::Margin } else { RepresentationMode::Probability };
            p.bank_mode = BankMode::Binary;
            let text = config.render().unwrap();
            prop_assert_eq!(RunConfig::parse(&text).unwrap(), config);
        }
    }
}
