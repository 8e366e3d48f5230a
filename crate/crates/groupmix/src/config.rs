//! Experiment configuration: a strict JSON schema (unknown keys rejected)
//! with optional fields resolved to defaults, and the resolved form echoed
//! into every run directory so a run is reproducible from its own log.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    gen_gaussian_groups, gen_spurious_features, AnnotationLevel, Dataset, GroupSpec, Split,
    SpuriousConfig,
};
use crate::error::{Error, Result};
use crate::identify::TSelection;
use crate::mix::MixPolicy;
use crate::train::{Method, SelectionCriterion, TrainConfig};

fn default_sigma() -> f64 {
    0.25
}
fn default_minority_fraction() -> f64 {
    0.05
}
fn default_n_train() -> usize {
    2000
}
fn default_n_val() -> usize {
    200
}
fn default_n_test() -> usize {
    2000
}
fn default_annotation() -> AnnotationLevel {
    AnnotationLevel::FineGrained
}
fn default_rho() -> f64 {
    0.95
}

/// Dataset block of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// The 2D four-group setup: group `(c, y)` draws from
    /// `N((c, y), sigma^2 I)`; the two `c != y` groups share
    /// `minority_fraction` of the train mass; the test split is balanced.
    GaussianToy {
        #[serde(default = "default_sigma")]
        sigma: f64,
        #[serde(default = "default_minority_fraction")]
        minority_fraction: f64,
        #[serde(default = "default_n_train")]
        n_train: usize,
        #[serde(default = "default_n_val")]
        n_val: usize,
        #[serde(default = "default_n_test")]
        n_test: usize,
        #[serde(default = "default_annotation")]
        annotation: AnnotationLevel,
    },
    /// Explicit per-group specification.
    GaussianGroups {
        specs: Vec<GroupSpec>,
        n_train: usize,
        #[serde(default = "default_n_val")]
        n_val: usize,
        #[serde(default = "default_n_test")]
        n_test: usize,
        #[serde(default = "default_annotation")]
        annotation: AnnotationLevel,
    },
    /// Higher-dimensional spurious-feature analogue: a weak label-aligned
    /// core block plus a strong confounder-aligned block.
    SpuriousFeatures {
        #[serde(default)]
        params: Option<SpuriousConfig>,
        #[serde(default = "default_rho")]
        rho_train: f64,
        #[serde(default = "default_n_train")]
        n_train: usize,
        #[serde(default = "default_n_val")]
        n_val: usize,
        #[serde(default = "default_n_test")]
        n_test: usize,
        #[serde(default = "default_annotation")]
        annotation: AnnotationLevel,
    },
}

/// Four-group specs for the 2D toy.
pub fn toy_specs(sigma: f64, minority_fraction: f64) -> Vec<GroupSpec> {
    let mut specs = Vec::new();
    for c in 0..2usize {
        for y in 0..2usize {
            let minority = c != y;
            specs.push(GroupSpec {
                c,
                y,
                train_proportion: if minority {
                    minority_fraction / 2.0
                } else {
                    (1.0 - minority_fraction) / 2.0
                },
                test_proportion: 0.25,
                mean: vec![c as f64, y as f64],
                sigma,
            });
        }
    }
    specs
}

impl DatasetConfig {
    pub fn annotation(&self) -> AnnotationLevel {
        match self {
            DatasetConfig::GaussianToy { annotation, .. }
            | DatasetConfig::GaussianGroups { annotation, .. }
            | DatasetConfig::SpuriousFeatures { annotation, .. } => *annotation,
        }
    }

    /// Same dataset with a different annotation mask.
    pub fn with_annotation(&self, annotation: AnnotationLevel) -> Self {
        let mut out = self.clone();
        match &mut out {
            DatasetConfig::GaussianToy { annotation: a, .. }
            | DatasetConfig::GaussianGroups { annotation: a, .. }
            | DatasetConfig::SpuriousFeatures { annotation: a, .. } => *a = annotation,
        }
        out
    }

    fn split_n(&self, split: Split) -> usize {
        let (n_train, n_val, n_test) = match self {
            DatasetConfig::GaussianToy {
                n_train,
                n_val,
                n_test,
                ..
            }
            | DatasetConfig::GaussianGroups {
                n_train,
                n_val,
                n_test,
                ..
            }
            | DatasetConfig::SpuriousFeatures {
                n_train,
                n_val,
                n_test,
                ..
            } => (*n_train, *n_val, *n_test),
        };
        match split {
            Split::Train => n_train,
            Split::Validation => n_val,
            Split::Test => n_test,
        }
    }

    /// Generate one split. Splits draw from independent streams, so the
    /// whole dataset family is a pure function of `seed`.
    pub fn generate(&self, split: Split, seed: u64) -> Result<Dataset> {
        let n = self.split_n(split);
        match self {
            DatasetConfig::GaussianToy {
                sigma,
                minority_fraction,
                annotation,
                ..
            } => {
                let specs = toy_specs(*sigma, *minority_fraction);
                gen_gaussian_groups(&specs, n, split, *annotation, seed)
            }
            DatasetConfig::GaussianGroups {
                specs, annotation, ..
            } => gen_gaussian_groups(specs, n, split, *annotation, seed),
            DatasetConfig::SpuriousFeatures {
                params,
                rho_train,
                annotation,
                ..
            } => {
                let cfg = params
                    .clone()
                    .unwrap_or_else(|| SpuriousConfig::new(2, 2, *rho_train));
                gen_spurious_features(&cfg, n, split, *annotation, seed)
            }
        }
    }

    /// A test-sized split drawn at the *train* proportions: the evaluation
    /// distribution the original tables' "average accuracy" refers to.
    pub fn generate_source_dist_test(&self, seed: u64) -> Result<Dataset> {
        match self {
            DatasetConfig::GaussianToy {
                sigma,
                minority_fraction,
                n_test,
                annotation,
                ..
            } => {
                let mut specs = toy_specs(*sigma, *minority_fraction);
                for s in specs.iter_mut() {
                    s.test_proportion = s.train_proportion;
                }
                gen_gaussian_groups(&specs, *n_test, Split::Test, *annotation, seed.wrapping_add(7))
            }
            DatasetConfig::GaussianGroups {
                specs,
                n_test,
                annotation,
                ..
            } => {
                let mut specs = specs.clone();
                for s in specs.iter_mut() {
                    s.test_proportion = s.train_proportion;
                }
                gen_gaussian_groups(&specs, *n_test, Split::Test, *annotation, seed.wrapping_add(7))
            }
            DatasetConfig::SpuriousFeatures {
                params,
                rho_train,
                n_test,
                annotation,
                ..
            } => {
                // Train and validation share rho_train; reuse the validation
                // distribution at test size with a shifted seed.
                let cfg = params
                    .clone()
                    .unwrap_or_else(|| SpuriousConfig::new(2, 2, *rho_train));
                gen_spurious_features(&cfg, *n_test, Split::Validation, *annotation, seed.wrapping_add(7))
            }
        }
    }
}

/// One method block; every optional field falls back to the method default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation_level: Option<AnnotationLevel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_decay: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_up: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mix_policy: Option<MixPolicy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id_epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_selection: Option<TSelection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection: Option<SelectionCriterion>,
}

impl MethodConfig {
    pub fn bare(method: Method) -> Self {
        Self {
            method,
            annotation_level: None,
            epochs: None,
            batch_size: None,
            lr: None,
            weight_decay: None,
            hidden: None,
            lambda_up: None,
            eta_q: None,
            mix_policy: None,
            id_epochs: None,
            t_selection: None,
            probe_epochs: None,
            selection: None,
        }
    }

    /// Resolve against the dataset's annotation level and a seed. Fields the
    /// block omits take the method defaults; the resolved config is what the
    /// run echoes.
    pub fn resolve(&self, dataset_annotation: AnnotationLevel, seed: u64) -> TrainConfig {
        let annotation = self.annotation_level.unwrap_or(dataset_annotation);
        let mut cfg = TrainConfig::new(self.method, annotation).with_seed(seed);
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.weight_decay {
            cfg.weight_decay = v;
        }
        if let Some(v) = &self.hidden {
            cfg.hidden = v.clone();
        }
        if let Some(v) = self.lambda_up {
            cfg.lambda_up = v;
        }
        if let Some(v) = self.eta_q {
            cfg.eta_q = v;
        }
        if let Some(v) = self.mix_policy {
            cfg.mix_policy = v;
        }
        if let Some(v) = self.id_epochs {
            cfg.id_epochs = v;
        }
        if let Some(v) = &self.t_selection {
            cfg.t_selection = v.clone();
        }
        cfg.probe_epochs = self.probe_epochs;
        if let Some(v) = self.selection {
            cfg.selection = Some(v);
        }
        cfg
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub methods: Vec<MethodConfig>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Validate every method block against the dataset block; errors carry
    /// the offending key path.
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("methods: at least one block required".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds: at least one seed required".into()));
        }
        for (i, m) in self.methods.iter().enumerate() {
            let cfg = m.resolve(self.dataset.annotation(), self.seeds[0]);
            cfg.validate().map_err(|e| match e {
                Error::Config(msg) => {
                    Error::Config(format!("methods[{i}] ({}): {msg}", m.method.as_str()))
                }
                other => other,
            })?;
        }
        Ok(())
    }

    /// Serialize with all method blocks as written plus resolved dataset
    /// defaults; what every run directory stores as `config.json`.
    pub fn echo_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}

/// Parse and validate a config file. Parse errors carry line/column,
/// validation errors carry the key path.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cfg: ExperimentConfig = serde_json::from_str(&text)
        .map_err(|e| Error::format(path, format!("{e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

/// The pinned configuration of the toy reproduction suite.
///
/// Hyperparameters differ from the single-run defaults where the toy needs
/// it: strong weight decay keeps the plain-ERM baseline on the spurious
/// solution instead of memorizing the crisp minority clusters, and the
/// group-reweighted methods use a larger batch so per-batch group statistics
/// are stable enough for the worst-group argmax.
pub fn toy_experiment(seeds: Vec<u64>) -> ExperimentConfig {
    let methods = Method::ALL
        .iter()
        .map(|&method| {
            let mut block = MethodConfig::bare(method);
            block.annotation_level = Some(match method {
                Method::Erm | Method::Mixup => AnnotationLevel::None,
                Method::Jtt | Method::Jm1 => AnnotationLevel::Coarse,
                Method::Cmixup | Method::Groupdro | Method::Groupjm1 => {
                    AnnotationLevel::FineGrained
                }
            });
            block.epochs = Some(60);
            block.batch_size = Some(64);
            block.lr = Some(0.01);
            block.weight_decay = Some(0.03);
            block.hidden = Some(vec![32, 32]);
            block.lambda_up = Some(20.0);
            block.eta_q = Some(0.1);
            block
        })
        .collect();
    ExperimentConfig {
        dataset: DatasetConfig::GaussianToy {
            sigma: 0.25,
            minority_fraction: 0.05,
            n_train: 2000,
            n_val: 200,
            n_test: 2000,
            annotation: AnnotationLevel::FineGrained,
        },
        methods,
        seeds,
        output_dir: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults() {
        let json = r#"{
            "dataset": { "kind": "gaussian_toy" },
            "methods": [ { "method": "erm" } ]
        }"#;
        let cfg: ExperimentConfig = serde_json::from_str(json).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.seeds, vec![0]);
        match &cfg.dataset {
            DatasetConfig::GaussianToy { sigma, n_train, .. } => {
                assert_eq!(*sigma, 0.25);
                assert_eq!(*n_train, 2000);
            }
            _ => panic!("wrong dataset kind"),
        }
        let resolved = cfg.methods[0].resolve(cfg.dataset.annotation(), 0);
        assert_eq!(resolved.epochs, 60);
        assert_eq!(resolved.batch_size, 32);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let json = r#"{
            "dataset": { "kind": "gaussian_toy", "sigmaa": 1.0 },
            "methods": [ { "method": "erm" } ]
        }"#;
        assert!(serde_json::from_str::<ExperimentConfig>(json).is_err());
    }

    #[test]
    fn incompatible_method_annotation_is_named() {
        let json = r#"{
            "dataset": { "kind": "gaussian_toy", "annotation": "none" },
            "methods": [ { "method": "groupdro" } ]
        }"#;
        let cfg: ExperimentConfig = serde_json::from_str(json).unwrap();
        let err = cfg.validate().unwrap_err();
        match err {
            Error::Config(msg) => {
                assert!(msg.contains("methods[0]"), "{msg}");
                assert!(msg.contains("groupdro"), "{msg}");
                assert!(msg.contains("none"), "{msg}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn round_trip_parses_to_an_equal_config() {
        let cfg = toy_experiment(vec![0, 1, 2]);
        cfg.validate().unwrap();
        let echoed = cfg.echo_json();
        let back: ExperimentConfig = serde_json::from_str(&echoed).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn source_dist_test_follows_train_proportions() {
        let cfg = toy_experiment(vec![0]);
        let skewed = cfg.dataset.generate_source_dist_test(0).unwrap();
        let mask = crate::data::oracle_partition(&skewed).unwrap();
        let minority = mask.iter().filter(|&&m| m).count();
        assert_eq!(minority, 100); // 5% of 2000 by largest remainder
        let balanced = cfg.dataset.generate(Split::Test, 0).unwrap();
        let mask = crate::data::oracle_partition(&balanced).unwrap();
        assert_eq!(mask.iter().filter(|&&m| m).count(), 1000);
    }
}
