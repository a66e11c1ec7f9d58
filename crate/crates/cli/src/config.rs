//! TOML experiment files.
//!
//! A run file names an estimator and holds one table per component:
//!
//! ```toml
//! estimator = "mine"
//!
//! [task]
//! kind = "one_hot"
//! classes = 16
//!
//! [regularizer]
//! lambda = 0.1
//!
//! [optimizer]
//! kind = "sgd"
//! lr = 0.1
//!
//! [train]
//! batch_size = 100
//! iterations = 3000
//! seed = 1
//! ```
//!
//! `estimator` may also be a table such as `{ kind = "smile", tau = 5.0 }`.
//! Unknown keys anywhere are rejected.

use crate::error::{CliError, Result};
use mi_lab::critics::{OptimizerSpec, OutputActivation};
use mi_lab::datasets::TaskSpec;
use mi_lab::estimators::EstimatorKind;
use mi_lab::trainer::{CriticConfig, DriftThresholds, RegularizerConfig, RunConfig, TrainConfig};
use serde::de::{self, Deserializer, MapAccess, Visitor};
use serde::Deserialize;
use std::fmt;
use std::path::Path;

/// An estimator given by name or as a full table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorField(pub EstimatorKind);

impl<'de> Deserialize<'de> for EstimatorField {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = EstimatorField;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an estimator name (mine, smile, infonce, nwj, tuba, js) or table")
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Self::Value, E> {
                EstimatorKind::from_name(v)
                    .map(EstimatorField)
                    .ok_or_else(|| E::invalid_value(de::Unexpected::Str(v), &self))
            }

            fn visit_map<A: MapAccess<'de>>(
                self,
                map: A,
            ) -> std::result::Result<Self::Value, A::Error> {
                EstimatorKind::deserialize(de::value::MapAccessDeserializer::new(map))
                    .map(EstimatorField)
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFile {
    pub estimator: EstimatorField,
    pub task: TaskSpec,
    #[serde(default)]
    pub critic: CriticConfig,
    #[serde(default)]
    pub regularizer: Option<RegularizerConfig>,
    pub optimizer: OptimizerSpec,
    pub train: TrainConfig,
    #[serde(default)]
    pub drift: DriftThresholds,
}

impl RunFile {
    pub fn into_config(self) -> RunConfig {
        RunConfig {
            task: self.task,
            critic: self.critic,
            estimator: self.estimator.0,
            regularizer: self.regularizer,
            optimizer: self.optimizer,
            train: self.train,
            drift: self.drift,
        }
    }
}

/// Everything a sweep shares across its runs.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseConfig {
    pub task: TaskSpec,
    #[serde(default)]
    pub critic: CriticConfig,
    pub optimizer: OptimizerSpec,
    pub train: TrainConfig,
    #[serde(default)]
    pub drift: DriftThresholds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Original,
    Regularized,
}

fn default_variants() -> Vec<Variant> {
    vec![Variant::Original, Variant::Regularized]
}

fn default_lambdas() -> Vec<f64> {
    vec![0.1, 0.01, 0.001]
}

fn default_seeds() -> Vec<u64> {
    (1..=5).collect()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub estimators: Vec<EstimatorField>,
    #[serde(default = "default_variants")]
    pub variants: Vec<Variant>,
    #[serde(default = "default_lambdas")]
    pub lambdas: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Distance, target and clip overrides; `lambda` here is ignored.
    #[serde(default)]
    pub regularizer: Option<RegularizerConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteFile {
    pub base: BaseConfig,
    pub sweep: SweepSpec,
}

/// One expanded run of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteRun {
    pub variant: Variant,
    pub config: RunConfig,
}

impl SuiteFile {
    /// Every run, ordered by estimator, then variant and λ, then seed.
    ///
    /// JS runs always get a softplus output.
    pub fn expand(&self) -> Result<Vec<SuiteRun>> {
        let s = &self.sweep;
        if s.estimators.is_empty() || s.seeds.is_empty() || s.variants.is_empty() {
            return Err(CliError::Validation(
                "sweep needs estimators, variants and seeds".into(),
            ));
        }
        if s.variants.contains(&Variant::Regularized) && s.lambdas.is_empty() {
            return Err(CliError::Validation(
                "regularized sweeps need at least one lambda".into(),
            ));
        }
        let mut runs = Vec::new();
        for &EstimatorField(kind) in &s.estimators {
            let mut critic = self.base.critic.clone();
            if matches!(kind, EstimatorKind::Js { .. }) {
                critic.output = OutputActivation::Softplus;
            }
            let mut settings: Vec<(Variant, Option<RegularizerConfig>)> = Vec::new();
            for &v in &s.variants {
                match v {
                    Variant::Original => settings.push((v, None)),
                    Variant::Regularized => settings.extend(s.lambdas.iter().map(|&lambda| {
                        let mut r = s
                            .regularizer
                            .unwrap_or_else(|| RegularizerConfig::with_lambda(lambda));
                        r.lambda = lambda;
                        (v, Some(r))
                    })),
                }
            }
            for (variant, regularizer) in settings {
                for &seed in &s.seeds {
                    let config = RunConfig {
                        task: self.base.task.clone(),
                        critic: critic.clone(),
                        estimator: kind,
                        regularizer,
                        optimizer: self.base.optimizer,
                        train: TrainConfig {
                            seed,
                            ..self.base.train.clone()
                        },
                        drift: self.base.drift,
                    };
                    config.validate()?;
                    runs.push(SuiteRun { variant, config });
                }
            }
        }
        Ok(runs)
    }
}

fn parse<T: for<'de> Deserialize<'de>>(path: &Path, text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| CliError::Parse {
        path: path.to_owned(),
        source: Box::new(e),
    })
}

pub fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// Parses and validates a run file.
pub fn load_run(path: &Path) -> Result<RunConfig> {
    parse_run(path, &read_to_string(path)?)
}

pub fn parse_run(path: &Path, text: &str) -> Result<RunConfig> {
    let config = parse::<RunFile>(path, text)?.into_config();
    config.validate()?;
    Ok(config)
}

pub fn load_suite(path: &Path) -> Result<SuiteFile> {
    parse(path, &read_to_string(path)?)
}

pub fn parse_suite(path: &Path, text: &str) -> Result<SuiteFile> {
    parse(path, text)
}
