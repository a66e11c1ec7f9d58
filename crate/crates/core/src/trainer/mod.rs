//! The optimization loop and its instability diagnostics.
//!
//! Each iteration samples a batch, records the score matrix and the loss on a
//! fresh tape, and takes one ascent step. A divergence event (a non-finite
//! loss or gradient, or any `|score|` past the overflow frontier) latches:
//! no parameter update happens afterwards, and later records carry the flag.

mod accuracy;
mod log;

pub use accuracy::{argmax, evaluate_accuracy};
pub use log::{
    drift_metric, ema_smooth, ls_slope, read_csv, DriftMetric, DriftThresholds, RunLog, RunRecord,
    ScoreStats, CSV_HEADER,
};

use crate::autodiff::Tape;
use crate::critics::{
    build_critic, Critic, CriticKind, MlpSpec, Optimizer, OptimizerSpec, OutputActivation,
};
use crate::datasets::TaskSpec;
use crate::error::{Error, Result};
use crate::estimators::{build_loss, Distance, EstimatorKind, RegularizerSpec, OVERFLOW_FRONTIER};
use serde::{Deserialize, Serialize};

fn default_hidden() -> Vec<usize> {
    vec![256]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriticConfig {
    /// Hidden layer widths.
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    /// Embedding width of separable critics.
    #[serde(default)]
    pub embed_dim: Option<usize>,
    #[serde(default)]
    pub output: OutputActivation,
    /// Constant added to every score from initialization on.
    #[serde(default)]
    pub output_shift: f64,
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self {
            hidden: default_hidden(),
            embed_dim: None,
            output: OutputActivation::None,
            output_shift: 0.0,
        }
    }
}

/// Embedding width of separable critics when none is configured.
pub const DEFAULT_EMBED_DIM: usize = 32;

/// A regularizer as configured: unset fields take the per-estimator
/// defaults of [`RegularizerSpec::default_for`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularizerConfig {
    pub lambda: f64,
    #[serde(default)]
    pub distance: Option<Distance>,
    #[serde(default)]
    pub target: Option<f64>,
    #[serde(default)]
    pub clip: Option<f64>,
    #[serde(default)]
    pub no_clip: bool,
}

impl RegularizerConfig {
    pub fn with_lambda(lambda: f64) -> Self {
        Self {
            lambda,
            distance: None,
            target: None,
            clip: None,
            no_clip: false,
        }
    }

    pub fn resolve(&self, kind: &EstimatorKind) -> RegularizerSpec {
        let d = RegularizerSpec::default_for(kind, self.lambda);
        RegularizerSpec {
            lambda: self.lambda,
            distance: self.distance.unwrap_or(d.distance),
            target: self.target.unwrap_or(d.target),
            clip: if self.no_clip {
                None
            } else {
                self.clip.or(d.clip)
            },
        }
    }
}

fn default_test_n() -> usize {
    10_000
}
fn default_pool() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Defaults to 1 for runs of at most 5000 iterations, else 10.
    #[serde(default)]
    pub log_every: Option<usize>,
    /// Stop at the first divergence event instead of logging on.
    #[serde(default)]
    pub halt_on_divergence: bool,
    /// Held-out draws for cluster-task accuracy.
    #[serde(default = "default_test_n")]
    pub accuracy_test_n: usize,
    /// Training pool for contrastive accuracy.
    #[serde(default = "default_pool")]
    pub accuracy_pool: usize,
}

impl TrainConfig {
    pub fn new(batch_size: usize, iterations: usize, seed: u64) -> Self {
        Self {
            batch_size,
            iterations,
            seed,
            log_every: None,
            halt_on_divergence: false,
            accuracy_test_n: default_test_n(),
            accuracy_pool: default_pool(),
        }
    }

    pub fn log_every(&self) -> usize {
        self.log_every
            .unwrap_or(if self.iterations <= 5000 { 1 } else { 10 })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskSpec,
    #[serde(default)]
    pub critic: CriticConfig,
    pub estimator: EstimatorKind,
    #[serde(default)]
    pub regularizer: Option<RegularizerConfig>,
    pub optimizer: OptimizerSpec,
    pub train: TrainConfig,
    #[serde(default)]
    pub drift: DriftThresholds,
}

const CRITIC_SEED_OFFSET: u64 = 0x9E37_79B9_7F4A_7C15;

impl RunConfig {
    /// The active regularizer, if `λ > 0`.
    pub fn regularizer_spec(&self) -> Option<RegularizerSpec> {
        self.regularizer
            .map(|r| r.resolve(&self.estimator))
            .filter(RegularizerSpec::is_active)
    }

    pub fn variant(&self) -> &'static str {
        if self.regularizer.is_some_and(|r| r.lambda > 0.0) {
            "regularized"
        } else {
            "original"
        }
    }

    pub fn lambda(&self) -> f64 {
        self.regularizer.map_or(0.0, |r| r.lambda)
    }

    /// Task stream seed; the critic uses `seed + 0x9E3779B97F4A7C15` and
    /// accuracy evaluation `seed + 2 · 0x9E3779B97F4A7C15` (wrapping).
    pub fn task_seed(&self) -> u64 {
        self.train.seed
    }

    pub fn critic_seed(&self) -> u64 {
        self.train.seed.wrapping_add(CRITIC_SEED_OFFSET)
    }

    pub fn eval_seed(&self) -> u64 {
        self.train
            .seed
            .wrapping_add(CRITIC_SEED_OFFSET.wrapping_mul(2))
    }

    pub fn critic_kind(&self) -> CriticKind {
        self.task.critic_kind()
    }

    pub fn mlp_spec(&self) -> MlpSpec {
        let (dx, dy) = self.task.dims();
        let kind = self.critic_kind();
        let mut widths = vec![match kind {
            CriticKind::Concat => dx + dy,
            _ => dx,
        }];
        widths.extend(&self.critic.hidden);
        widths.push(match kind {
            CriticKind::Concat => 1,
            CriticKind::OneHotLabel => dy,
            CriticKind::Separable => self.critic.embed_dim.unwrap_or(DEFAULT_EMBED_DIM),
        });
        MlpSpec::new(widths, self.critic_seed()).with_output(self.critic.output)
    }

    /// Checks every cross-component constraint before any iteration runs.
    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.estimator.validate()?;
        self.optimizer.validate()?;
        if let Some(r) = &self.regularizer {
            r.resolve(&self.estimator).validate()?;
            if r.no_clip && r.clip.is_some() {
                return Err(Error::Config(
                    "regularizer sets both clip and no_clip".into(),
                ));
            }
        }
        let is_js = matches!(self.estimator, EstimatorKind::Js { .. });
        match (is_js, self.critic.output) {
            (true, OutputActivation::None) => {
                return Err(Error::Config(
                    "the JS estimator needs a softplus critic: set critic.output = \"softplus\""
                        .into(),
                ))
            }
            (false, OutputActivation::Softplus) => {
                return Err(Error::Config(format!(
                    "softplus critic output is reserved for the JS estimator, not {}",
                    self.estimator
                )))
            }
            _ => {}
        }
        if self.critic.embed_dim.is_some() && self.critic_kind() != CriticKind::Separable {
            return Err(Error::Config(
                "embed_dim applies to contrastive cluster tasks only".into(),
            ));
        }
        if !self.critic.output_shift.is_finite() {
            return Err(Error::Config("critic output_shift must be finite".into()));
        }
        if self.train.batch_size < 2 {
            return Err(Error::BatchTooSmall(self.train.batch_size));
        }
        if self.train.iterations == 0 {
            return Err(Error::Config("iterations must be positive".into()));
        }
        if self.train.log_every() == 0 {
            return Err(Error::Config("log_every must be positive".into()));
        }
        if !(self.drift.drift > 0.0 && self.drift.stable > 0.0) {
            return Err(Error::Config("drift thresholds must be positive".into()));
        }
        build_critic(&self.mlp_spec(), self.critic_kind())?;
        Ok(())
    }
}

/// A finished run: its log and the final critic.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub log: RunLog,
    pub critic: Critic,
}

/// Runs one experiment.
pub fn train(config: &RunConfig) -> Result<RunOutcome> {
    config.validate()?;
    let mut task = config.task.build(config.task_seed())?;
    let mut critic = build_critic(&config.mlp_spec(), config.critic_kind())?;
    critic.set_output_shift(config.critic.output_shift);
    let mut opt = Optimizer::new(config.optimizer)?;
    let reg = config.regularizer_spec();
    let log_every = config.train.log_every();
    let last = config.train.iterations - 1;

    let mut log = RunLog::default();
    let mut diverged = false;
    for it in 0..config.train.iterations {
        let mi = task.true_mi(it);
        if log.true_mi_schedule.last().is_none_or(|&(_, v)| v != mi) {
            log.true_mi_schedule.push((it, mi));
        }

        let batch = task.sample(config.train.batch_size, it)?;
        let mut tape = Tape::new();
        let vars = critic.params_on(&mut tape);
        let scores = critic.score_matrix_on(&mut tape, &vars, &batch.xs, &batch.ys)?;
        let loss = build_loss(&mut tape, scores, &config.estimator, reg.as_ref())?;
        let b = loss.read(&tape);
        let s = tape.value(scores);
        let diag = ScoreStats::of(&s.diagonal());
        let off = ScoreStats::of(&s.off_diagonal());
        let max_abs = diag.max_abs().max(off.max_abs());
        log.max_abs_score = log.max_abs_score.max(max_abs);

        let mut event = !b.is_finite() || !(max_abs <= OVERFLOW_FRONTIER);
        if !diverged && !event {
            let grads = tape.backward(loss.training_loss)?;
            let g: Vec<_> = vars.iter().map(|v| grads.wrt(&tape, v)).collect();
            match opt.step(&mut critic, &g) {
                Ok(()) => {}
                Err(Error::NonFiniteGradient { .. }) => event = true,
                Err(e) => return Err(e),
            }
        }
        if event && !diverged {
            diverged = true;
            log.divergence_iteration = Some(it);
        }

        if it % log_every == 0 || it == last || (event && config.train.halt_on_divergence) {
            log.records.push(RunRecord {
                iter: it,
                term1: b.term1,
                term2: b.term2,
                regularizer: b.regularizer,
                train_loss: b.training_loss,
                mi_estimate: b.mi_estimate,
                diag_mean: diag.mean,
                diag_min: diag.min,
                diag_max: diag.max,
                offdiag_mean: off.mean,
                offdiag_min: off.min,
                offdiag_max: off.max,
                diverged,
            });
        }
        if diverged && config.train.halt_on_divergence {
            break;
        }
    }

    if let Ok(cluster) = config.task.build_cluster(config.task_seed()) {
        log.accuracy = Some(evaluate_accuracy(
            &critic,
            &cluster,
            config.train.accuracy_test_n,
            config.train.accuracy_pool,
            config.eval_seed(),
        )?);
    }
    Ok(RunOutcome { log, critic })
}

/// The JSON summary written next to a CSV log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub estimator: String,
    pub variant: String,
    pub lambda: f64,
    pub seed: u64,
    pub batch_size: usize,
    pub iterations: usize,
    pub log_every: usize,
    /// Mean estimate over the final 10% of records.
    pub converged_estimate: Option<f64>,
    /// True MI at the last iteration.
    pub true_mi: f64,
    pub true_mi_schedule: Vec<(usize, f64)>,
    pub diverged: bool,
    pub divergence_iteration: Option<usize>,
    pub max_abs_score: f64,
    pub accuracy: Option<f64>,
}

impl RunSummary {
    pub fn new(config: &RunConfig, log: &RunLog) -> Self {
        Self {
            estimator: config.estimator.name().to_owned(),
            variant: config.variant().to_owned(),
            lambda: config.lambda(),
            seed: config.train.seed,
            batch_size: config.train.batch_size,
            iterations: config.train.iterations,
            log_every: config.train.log_every(),
            converged_estimate: log.converged_estimate(),
            true_mi: log.true_mi_at(config.train.iterations - 1),
            true_mi_schedule: log.true_mi_schedule.clone(),
            diverged: log.diverged(),
            divergence_iteration: log.divergence_iteration,
            max_abs_score: log.max_abs_score,
            accuracy: log.accuracy,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests;
