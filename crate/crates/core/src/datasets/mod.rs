//! Synthetic tasks with closed-form mutual information.
//!
//! Each task owns a seeded [`ChaCha8Rng`]. Batches are drawn sample by sample
//! in row order, and within a row `x` before `y`, so a task replays exactly
//! from its seed.

use crate::critics::CriticKind;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Aligned batches: `(xs[i], ys[i])` is a joint draw, every `(xs[i], ys[j])`
/// with `i != j` a draw from the product of marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchPair {
    pub xs: Matrix,
    pub ys: Matrix,
    /// Generating labels, for cluster tasks.
    pub labels: Option<Vec<usize>>,
}

impl BatchPair {
    pub fn len(&self) -> usize {
        self.xs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Re-pairs `ys` by a uniformly random derangement, so no row keeps its
    /// joint partner.
    pub fn deranged<R: Rng + ?Sized>(&self, rng: &mut R) -> Self {
        let n = self.len();
        let mut perm: Vec<usize> = (0..n).collect();
        loop {
            perm.shuffle(rng);
            if perm.iter().enumerate().all(|(i, &p)| i != p) {
                break;
            }
        }
        let ys = Matrix::from_fn(n, self.ys.cols(), |r, c| self.ys.get(perm[r], c));
        Self {
            xs: self.xs.clone(),
            ys,
            labels: None,
        }
    }
}

/// A sampler of joint pairs with a known mutual information.
pub trait Task: Send {
    /// Draws `n` aligned pairs for training iteration `iteration`.
    fn sample(&mut self, n: usize, iteration: usize) -> Result<BatchPair>;

    /// True MI in nats at `iteration`.
    fn true_mi(&self, iteration: usize) -> f64;

    fn x_dim(&self) -> usize;

    fn y_dim(&self) -> usize;
}

fn check_batch(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::BatchTooSmall(n));
    }
    Ok(())
}

fn one_hot(n: usize, k: usize, labels: &[usize]) -> Matrix {
    Matrix::from_fn(n, k, |r, c| if labels[r] == c { 1.0 } else { 0.0 })
}

/// `X` uniform over `N` one-hot classes, paired with itself.
#[derive(Debug, Clone)]
pub struct OneHotTask {
    classes: usize,
    rng: ChaCha8Rng,
}

impl OneHotTask {
    pub fn new(classes: usize, seed: u64) -> Result<Self> {
        if classes < 2 {
            return Err(Error::Config(format!(
                "one-hot task needs at least 2 classes, got {classes}"
            )));
        }
        Ok(Self {
            classes,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }
}

impl Task for OneHotTask {
    fn sample(&mut self, n: usize, _iteration: usize) -> Result<BatchPair> {
        check_batch(n)?;
        let labels: Vec<usize> = (0..n)
            .map(|_| self.rng.random_range(0..self.classes))
            .collect();
        let xs = one_hot(n, self.classes, &labels);
        Ok(BatchPair {
            ys: xs.clone(),
            xs,
            labels: Some(labels),
        })
    }

    fn true_mi(&self, _iteration: usize) -> f64 {
        (self.classes as f64).ln()
    }

    fn x_dim(&self) -> usize {
        self.classes
    }

    fn y_dim(&self) -> usize {
        self.classes
    }
}

/// `I(X; Y) = -(d/2) ln(1 - ρ²)` for `X ~ N(0, I_d)`, `Y ~ N(ρX, (1-ρ²) I_d)`.
pub fn gaussian_true_mi(dim: usize, rho: f64) -> f64 {
    -(dim as f64 / 2.0) * (1.0 - rho * rho).ln()
}

/// The correlation at which a `dim`-dimensional Gaussian pair carries
/// `target_mi` nats.
pub fn rho_for_target_mi(dim: usize, target_mi: f64) -> Result<f64> {
    if !(target_mi >= 0.0) || !target_mi.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "target MI must be >= 0, got {target_mi}"
        )));
    }
    if dim == 0 {
        return Err(Error::InvalidArgument("dimension must be positive".into()));
    }
    Ok((-(-2.0 * target_mi / dim as f64).exp_m1()).sqrt())
}

/// Piecewise-constant correlation: `(threshold, ρ)` applies to iterations
/// below `threshold` not claimed by an earlier entry. The last entry also
/// covers every later iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoSchedule(pub Vec<(usize, f64)>);

impl RhoSchedule {
    pub fn constant(rho: f64) -> Self {
        Self(vec![(usize::MAX, rho)])
    }

    pub fn rho_at(&self, iteration: usize) -> f64 {
        self.0
            .iter()
            .find(|(t, _)| iteration < *t)
            .or(self.0.last())
            .map_or(0.0, |&(_, r)| r)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn validate(&self) -> Result<()> {
        if self.0.is_empty() {
            return Err(Error::Config("empty correlation schedule".into()));
        }
        if self.0.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::Config("schedule thresholds must increase".into()));
        }
        if let Some(&(_, r)) = self.0.iter().find(|(_, r)| !(0.0..1.0).contains(r)) {
            return Err(Error::Config(format!(
                "correlation must lie in [0, 1), got {r}"
            )));
        }
        Ok(())
    }
}

/// The staircase levels used by default, in nats.
pub const STAIRCASE_STEPS: [f64; 5] = [2.0, 4.0, 6.0, 8.0, 10.0];

/// One plateau per entry of `steps`, each `iters_per_step` long.
pub fn staircase_schedule(dim: usize, steps: &[f64], iters_per_step: usize) -> Result<RhoSchedule> {
    if steps.is_empty() || iters_per_step == 0 {
        return Err(Error::InvalidArgument(
            "staircase needs steps and a positive step length".into(),
        ));
    }
    if steps.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument(format!(
            "staircase steps must not decrease: {steps:?}"
        )));
    }
    let entries = steps
        .iter()
        .enumerate()
        .map(|(k, &mi)| Ok(((k + 1) * iters_per_step, rho_for_target_mi(dim, mi)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(RhoSchedule(entries))
}

/// Correlated Gaussian pairs whose correlation follows a [`RhoSchedule`].
#[derive(Debug, Clone)]
pub struct GaussianTask {
    dim: usize,
    schedule: RhoSchedule,
    rng: ChaCha8Rng,
}

impl GaussianTask {
    pub fn new(dim: usize, schedule: RhoSchedule, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("gaussian dimension must be positive".into()));
        }
        schedule.validate()?;
        Ok(Self {
            dim,
            schedule,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn schedule(&self) -> &RhoSchedule {
        &self.schedule
    }
}

impl Task for GaussianTask {
    fn sample(&mut self, n: usize, iteration: usize) -> Result<BatchPair> {
        check_batch(n)?;
        let rho = self.schedule.rho_at(iteration);
        let noise = (1.0 - rho * rho).sqrt();
        let mut xs = Matrix::zeros(n, self.dim);
        let mut ys = Matrix::zeros(n, self.dim);
        for r in 0..n {
            for k in 0..self.dim {
                let x: f64 = self.rng.sample(StandardNormal);
                let e: f64 = self.rng.sample(StandardNormal);
                xs.set(r, k, x);
                ys.set(r, k, rho * x + noise * e);
            }
        }
        Ok(BatchPair {
            xs,
            ys,
            labels: None,
        })
    }

    fn true_mi(&self, iteration: usize) -> f64 {
        gaussian_true_mi(self.dim, self.schedule.rho_at(iteration))
    }

    fn x_dim(&self) -> usize {
        self.dim
    }

    fn y_dim(&self) -> usize {
        self.dim
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterMode {
    /// Pairs `(x, one-hot(y))`.
    Supervised,
    /// Pairs `(x1, x2)` drawn independently from the same cluster.
    Contrastive,
}

/// Isotropic Gaussian clusters, one per label, far enough apart that every
/// sample carries exactly one label.
#[derive(Debug, Clone)]
pub struct ClusterTask {
    mode: ClusterMode,
    centers: Vec<Vec<f64>>,
    sigma: f64,
    probs: Vec<f64>,
    labels: WeightedIndex<f64>,
    rng: ChaCha8Rng,
}

/// Smallest allowed separation-to-spread ratio.
pub const MIN_SEPARATION_RATIO: f64 = 20.0;

impl ClusterTask {
    /// Centers are drawn from `N(0, s² I)`, rejecting any closer than `s` to
    /// an earlier one; clusters have standard deviation `s / ratio`. Labels
    /// are uniform.
    pub fn new(
        classes: usize,
        dim: usize,
        separation: f64,
        ratio: f64,
        mode: ClusterMode,
        seed: u64,
    ) -> Result<Self> {
        if classes < 2 || dim == 0 {
            return Err(Error::Config(format!(
                "cluster task needs >= 2 classes and a positive dimension, got {classes} and {dim}"
            )));
        }
        if !(separation > 0.0) || !separation.is_finite() {
            return Err(Error::Config(format!(
                "separation must be positive, got {separation}"
            )));
        }
        if !(ratio >= MIN_SEPARATION_RATIO) {
            return Err(Error::Config(format!(
                "separation / sigma must be at least {MIN_SEPARATION_RATIO}, got {ratio}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut centers: Vec<Vec<f64>> = Vec::with_capacity(classes);
        let mut attempts = 0;
        while centers.len() < classes {
            attempts += 1;
            if attempts > 1000 * classes {
                return Err(Error::Config(format!(
                    "could not place {classes} centers {separation} apart in {dim} dimensions"
                )));
            }
            let c: Vec<f64> = (0..dim)
                .map(|_| separation * rng.sample::<f64, _>(StandardNormal))
                .collect();
            if centers.iter().all(|o| dist(o, &c) >= separation) {
                centers.push(c);
            }
        }
        let probs = vec![1.0 / classes as f64; classes];
        let labels = WeightedIndex::new(&probs).map_err(|e| Error::Config(e.to_string()))?;
        Ok(Self {
            mode,
            centers,
            sigma: separation / ratio,
            probs,
            labels,
            rng,
        })
    }

    /// Replaces the label distribution.
    pub fn with_label_probs(mut self, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != self.centers.len() || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(
                "label probabilities must sum to 1, one per class".into(),
            ));
        }
        self.labels = WeightedIndex::new(&probs).map_err(|e| Error::Config(e.to_string()))?;
        self.probs = probs;
        Ok(self)
    }

    /// The same clusters with a fresh sampling stream.
    pub fn reseeded(&self, seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            ..self.clone()
        }
    }

    pub fn mode(&self) -> ClusterMode {
        self.mode
    }

    pub fn classes(&self) -> usize {
        self.centers.len()
    }

    pub fn dim(&self) -> usize {
        self.centers[0].len()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    /// Label entropy `H(Y)`.
    pub fn label_entropy(&self) -> f64 {
        self.probs
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|p| -p * p.ln())
            .sum()
    }

    /// Index of the center closest to `x`; ties go to the lowest index.
    pub fn nearest_center(&self, x: &[f64]) -> usize {
        let mut best = (0, f64::INFINITY);
        for (k, c) in self.centers.iter().enumerate() {
            let d = dist(c, x);
            if d < best.1 {
                best = (k, d);
            }
        }
        best.0
    }

    fn draw_point(&mut self, label: usize, out: &mut [f64]) {
        for (o, &c) in out.iter_mut().zip(&self.centers[label]) {
            let z: f64 = self.rng.sample(StandardNormal);
            *o = c + self.sigma * z;
        }
    }

    /// `n` inputs with their generating labels.
    pub fn sample_labeled(&mut self, n: usize) -> (Matrix, Vec<usize>) {
        let mut xs = Matrix::zeros(n, self.dim());
        let mut labels = Vec::with_capacity(n);
        for r in 0..n {
            let y = self.labels.sample(&mut self.rng);
            self.draw_point(y, xs.row_mut(r));
            labels.push(y);
        }
        (xs, labels)
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

impl Task for ClusterTask {
    fn sample(&mut self, n: usize, _iteration: usize) -> Result<BatchPair> {
        check_batch(n)?;
        match self.mode {
            ClusterMode::Supervised => {
                let (xs, labels) = self.sample_labeled(n);
                let ys = one_hot(n, self.classes(), &labels);
                Ok(BatchPair {
                    xs,
                    ys,
                    labels: Some(labels),
                })
            }
            ClusterMode::Contrastive => {
                let d = self.dim();
                let mut xs = Matrix::zeros(n, d);
                let mut ys = Matrix::zeros(n, d);
                let mut labels = Vec::with_capacity(n);
                for r in 0..n {
                    let y = self.labels.sample(&mut self.rng);
                    self.draw_point(y, xs.row_mut(r));
                    self.draw_point(y, ys.row_mut(r));
                    labels.push(y);
                }
                Ok(BatchPair {
                    xs,
                    ys,
                    labels: Some(labels),
                })
            }
        }
    }

    fn true_mi(&self, _iteration: usize) -> f64 {
        self.label_entropy()
    }

    fn x_dim(&self) -> usize {
        self.dim()
    }

    fn y_dim(&self) -> usize {
        match self.mode {
            ClusterMode::Supervised => self.classes(),
            ClusterMode::Contrastive => self.dim(),
        }
    }
}

fn default_steps() -> Vec<f64> {
    STAIRCASE_STEPS.to_vec()
}
fn default_iters_per_step() -> usize {
    4000
}
fn default_cluster_dim() -> usize {
    16
}
fn default_separation() -> f64 {
    1.0
}
fn default_ratio() -> f64 {
    MIN_SEPARATION_RATIO
}

/// Task description as written in run configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSpec {
    OneHot {
        classes: usize,
    },
    Gaussian {
        dim: usize,
        /// MI plateaus in nats; a single entry gives a fixed correlation.
        #[serde(default = "default_steps")]
        steps: Vec<f64>,
        #[serde(default = "default_iters_per_step")]
        iters_per_step: usize,
    },
    Cluster {
        classes: usize,
        mode: ClusterMode,
        #[serde(default = "default_cluster_dim")]
        dim: usize,
        #[serde(default = "default_separation")]
        separation: f64,
        #[serde(default = "default_ratio")]
        separation_ratio: f64,
    },
}

impl TaskSpec {
    pub fn build(&self, seed: u64) -> Result<Box<dyn Task>> {
        Ok(match *self {
            Self::OneHot { classes } => Box::new(OneHotTask::new(classes, seed)?),
            Self::Gaussian {
                dim,
                ref steps,
                iters_per_step,
            } => Box::new(GaussianTask::new(
                dim,
                staircase_schedule(dim, steps, iters_per_step)?,
                seed,
            )?),
            Self::Cluster { .. } => Box::new(self.build_cluster(seed)?),
        })
    }

    /// The cluster task itself, for accuracy evaluation.
    pub fn build_cluster(&self, seed: u64) -> Result<ClusterTask> {
        match *self {
            Self::Cluster {
                classes,
                mode,
                dim,
                separation,
                separation_ratio,
            } => ClusterTask::new(classes, dim, separation, separation_ratio, mode, seed),
            _ => Err(Error::Config("not a cluster task".into())),
        }
    }

    /// The critic architecture each task is paired with.
    pub fn critic_kind(&self) -> CriticKind {
        match self {
            Self::OneHot { .. } | Self::Gaussian { .. } => CriticKind::Concat,
            Self::Cluster {
                mode: ClusterMode::Supervised,
                ..
            } => CriticKind::OneHotLabel,
            Self::Cluster {
                mode: ClusterMode::Contrastive,
                ..
            } => CriticKind::Separable,
        }
    }

    /// Input width `(x, y)`.
    pub fn dims(&self) -> (usize, usize) {
        match *self {
            Self::OneHot { classes } => (classes, classes),
            Self::Gaussian { dim, .. } => (dim, dim),
            Self::Cluster {
                classes, mode, dim, ..
            } => match mode {
                ClusterMode::Supervised => (dim, classes),
                ClusterMode::Contrastive => (dim, dim),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.build(0).map(|_| ())
    }
}
