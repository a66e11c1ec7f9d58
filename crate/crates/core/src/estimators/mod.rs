//! Variational lower bounds on mutual information and their regularized
//! counterparts.
//!
//! Every bound is split into a joint term (`term1`, the mean critic output on
//! the diagonal of the score matrix) and a marginal term (`term2`, computed
//! from off-diagonal scores). The split matters: DV-type bounds are invariant
//! to a constant shift of the critic, so both terms can drift together while
//! their difference stays put.
//!
//! | bound   | `term2`                               | regularizer distance  |
//! |---------|---------------------------------------|-----------------------|
//! | MINE    | `ln mean_Q e^T`                       | Euclidean, `C* = 0`   |
//! | SMILE   | `ln mean_Q clip(e^T, e^-τ, e^τ)`      | Euclidean, `C* = 0`   |
//! | InfoNCE | `mean_i ln (1/N) Σ_j e^{T_ij}`        | Euclidean, `C* = 0`   |
//! | NWJ     | `mean_Q e^{T-1}`                      | log-Euclidean, `C* = 1`, clip τ |
//! | TUBA    | `mean_Q e^T - 1` (`a(y) = 1`)         | log-Euclidean, `C* = 1`, clip τ |
//! | JS      | `mean_Q e^T - 1` (softplus critic)    | Euclidean, `C* = 1`   |
//!
//! JS reports its estimate through the NWJ formula.

mod diagnostics;

pub use diagnostics::{
    macro_average, micro_average, variance_ratio_check, variance_ratio_closed_form,
    DiscreteDensityRatio,
};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use serde::{Deserialize, Serialize};
use std::fmt;

/// Default clip threshold τ.
pub const DEFAULT_TAU: f64 = 10.0;

/// `|score|` beyond which `e^score` is at the edge of `f64` range.
pub const OVERFLOW_FRONTIER: f64 = 700.0;

fn default_tau() -> f64 {
    DEFAULT_TAU
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EstimatorKind {
    Mine,
    Smile {
        #[serde(default = "default_tau")]
        tau: f64,
    },
    #[serde(rename = "infonce")]
    InfoNce,
    Nwj,
    Tuba,
    Js {
        /// Train on `E_P T - E_Q e^{T-1}` instead of `1 + E_P T - E_Q e^T`.
        #[serde(default)]
        shifted: bool,
    },
}

/// How the marginal-term statistic relates to the bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// The statistic is `ln E_Q e^T` (MINE, SMILE, InfoNCE).
    DonskerVaradhan,
    /// The statistic is a plain expectation `E_Q e^{T-s}` (NWJ, TUBA, JS).
    Fenchel,
}

impl EstimatorKind {
    pub fn smile() -> Self {
        Self::Smile { tau: DEFAULT_TAU }
    }

    pub fn js() -> Self {
        Self::Js { shifted: false }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Mine => "mine",
            Self::Smile { .. } => "smile",
            Self::InfoNce => "infonce",
            Self::Nwj => "nwj",
            Self::Tuba => "tuba",
            Self::Js { .. } => "js",
        }
    }

    /// The kind with default settings for a [`name`](Self::name).
    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "mine" => Self::Mine,
            "smile" => Self::smile(),
            "infonce" => Self::InfoNce,
            "nwj" => Self::Nwj,
            "tuba" => Self::Tuba,
            "js" => Self::js(),
            _ => return None,
        })
    }

    pub fn family(&self) -> Family {
        match self {
            Self::Mine | Self::Smile { .. } | Self::InfoNce => Family::DonskerVaradhan,
            Self::Nwj | Self::Tuba | Self::Js { .. } => Family::Fenchel,
        }
    }

    /// The exponent shift `s` in the marginal statistic `E_Q e^{T-s}`.
    fn marginal_shift(&self) -> f64 {
        match self {
            Self::Nwj | Self::Js { shifted: true } => 1.0,
            _ => 0.0,
        }
    }

    /// Whether the bound exponentiates raw scores without a log, so large
    /// scores overflow.
    pub fn exponentiates_scores(&self) -> bool {
        self.family() == Family::Fenchel
    }

    pub fn validate(&self) -> Result<()> {
        if let Self::Smile { tau } = *self {
            if !(tau > 0.0) {
                return Err(Error::Config(format!(
                    "SMILE clip threshold must be positive, got {tau}"
                )));
            }
        }
        Ok(())
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distance {
    /// `(x - y)^2`
    Euclidean,
    /// `(ln x - ln y)^2`
    LogEuclidean,
}

/// A penalty `λ · d(statistic, C*)` on the marginal-term statistic, plus the
/// optional clipping of the original loss that goes with it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularizerSpec {
    pub lambda: f64,
    pub distance: Distance,
    pub target: f64,
    /// Clip scores to `[-τ, τ]` in the original loss terms only.
    #[serde(default)]
    pub clip: Option<f64>,
}

impl RegularizerSpec {
    /// The per-bound settings used throughout: Euclidean with `C* = 0` for
    /// the DV family (SMILE keeps clipping both terms at its τ), log-Euclidean
    /// to 1 with τ = 10 clipping for NWJ and TUBA, Euclidean to 1 for JS.
    pub fn default_for(kind: &EstimatorKind, lambda: f64) -> Self {
        match kind {
            EstimatorKind::Mine | EstimatorKind::InfoNce => Self {
                lambda,
                distance: Distance::Euclidean,
                target: 0.0,
                clip: None,
            },
            EstimatorKind::Smile { tau } => Self {
                lambda,
                distance: Distance::Euclidean,
                target: 0.0,
                clip: Some(*tau),
            },
            EstimatorKind::Nwj | EstimatorKind::Tuba => Self {
                lambda,
                distance: Distance::LogEuclidean,
                target: 1.0,
                clip: Some(DEFAULT_TAU),
            },
            EstimatorKind::Js { .. } => Self {
                lambda,
                distance: Distance::Euclidean,
                target: 1.0,
                clip: None,
            },
        }
    }

    /// A regularizer with `λ = 0` changes nothing, clipping included.
    pub fn is_active(&self) -> bool {
        self.lambda > 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if !self.target.is_finite() {
            return Err(Error::Config("regularizer target must be finite".into()));
        }
        if self.distance == Distance::LogEuclidean && !(self.target > 0.0) {
            return Err(Error::Config(format!(
                "log-Euclidean target must be positive, got {}",
                self.target
            )));
        }
        if let Some(tau) = self.clip {
            if !(tau > 0.0) {
                return Err(Error::Config(format!(
                    "clip threshold must be positive, got {tau}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-batch decomposition of a bound, in nats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub term1: f64,
    pub term2: f64,
    pub regularizer: f64,
    /// The objective that is ascended.
    pub training_loss: f64,
    /// The reported estimate; never includes the penalty.
    pub mi_estimate: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [
            self.term1,
            self.term2,
            self.regularizer,
            self.training_loss,
            self.mi_estimate,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Tape handles of a recorded loss.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub term1: Var,
    pub term2: Var,
    pub penalty: Option<Var>,
    pub training_loss: Var,
    pub mi_estimate: Var,
}

impl LossVars {
    pub fn read(&self, tape: &Tape) -> LossBreakdown {
        LossBreakdown {
            term1: tape.scalar(self.term1),
            term2: tape.scalar(self.term2),
            regularizer: self.penalty.map_or(0.0, |p| tape.scalar(p)),
            training_loss: tape.scalar(self.training_loss),
            mi_estimate: tape.scalar(self.mi_estimate),
        }
    }
}

/// `term1` and `term2` of a bound on (possibly clipped) diagonal and
/// off-diagonal views of the scores.
fn terms(
    tape: &mut Tape,
    kind: &EstimatorKind,
    scores: Var,
    diag: Var,
    off: Var,
) -> Result<(Var, Var)> {
    let term1 = tape.mean(diag)?;
    let term2 = match *kind {
        EstimatorKind::Mine => tape.logmeanexp(off)?,
        EstimatorKind::Smile { tau } => {
            // ln mean clip(e^T, e^-τ, e^τ) == ln mean e^{clip(T, -τ, τ)}
            let c = tape.clip(off, -tau, tau)?;
            tape.logmeanexp(c)?
        }
        EstimatorKind::InfoNce => {
            let rows = tape.logmeanexp_rows(scores)?;
            tape.mean(rows)?
        }
        EstimatorKind::Nwj | EstimatorKind::Js { shifted: true } => {
            let shifted = tape.add_scalar(off, -1.0);
            let e = tape.exp(shifted);
            tape.mean(e)?
        }
        EstimatorKind::Tuba | EstimatorKind::Js { shifted: false } => {
            let e = tape.exp(off);
            let mean = tape.mean(e)?;
            tape.add_scalar(mean, -1.0)
        }
    };
    Ok((term1, term2))
}

/// `ln E_Q e^{T - s}` over off-diagonal scores, with `s` per [`EstimatorKind`].
fn log_marginal_statistic(tape: &mut Tape, kind: &EstimatorKind, off: Var) -> Result<Var> {
    let shift = kind.marginal_shift();
    let arg = if shift != 0.0 {
        tape.add_scalar(off, -shift)
    } else {
        off
    };
    Ok(tape.logmeanexp(arg)?)
}

/// Records the penalty `λ · d(statistic, C*)` on unclipped off-diagonal
/// scores. DV-family statistics live in log space (`ln E_Q e^T`); the others
/// are plain expectations (`E_Q e^{T-s}`).
fn penalty(tape: &mut Tape, kind: &EstimatorKind, spec: &RegularizerSpec, off: Var) -> Result<Var> {
    let log_stat = log_marginal_statistic(tape, kind, off)?;
    let gap = match (kind.family(), spec.distance) {
        (Family::DonskerVaradhan, Distance::Euclidean) => tape.add_scalar(log_stat, -spec.target),
        (Family::DonskerVaradhan, Distance::LogEuclidean) => {
            let l = tape.ln(log_stat)?;
            tape.add_scalar(l, -spec.target.ln())
        }
        (Family::Fenchel, Distance::Euclidean) => {
            let stat = tape.exp(log_stat);
            tape.add_scalar(stat, -spec.target)
        }
        (Family::Fenchel, Distance::LogEuclidean) => tape.add_scalar(log_stat, -spec.target.ln()),
    };
    let sq = tape.square(gap);
    Ok(tape.scale(sq, spec.lambda))
}

/// The reported estimate of `kind` on raw scores.
fn estimate(
    tape: &mut Tape,
    kind: &EstimatorKind,
    scores: Var,
    diag: Var,
    off: Var,
) -> Result<Var> {
    let est_kind = match kind {
        EstimatorKind::Js { .. } => EstimatorKind::Nwj,
        k => *k,
    };
    let (t1, t2) = terms(tape, &est_kind, scores, diag, off)?;
    Ok(tape.sub(t1, t2)?)
}

/// Records the loss of `kind` on the `N × N` score matrix `scores`.
///
/// With an active regularizer the training objective becomes
/// `term1 - term2 - λ·d(stat, C*)`, where `term1`/`term2` use scores clipped
/// to `[-τ, τ]` if the regularizer clips and the penalty always sees raw
/// scores. The reported estimate is the unregularized bound on raw scores.
pub fn build_loss(
    tape: &mut Tape,
    scores: Var,
    kind: &EstimatorKind,
    reg: Option<&RegularizerSpec>,
) -> Result<LossVars> {
    kind.validate()?;
    let n = tape.value(scores).rows();
    if tape.value(scores).cols() != n {
        return Err(Error::Shape(format!(
            "score matrix must be square, got {:?}",
            tape.value(scores).shape()
        )));
    }
    if n < 2 {
        return Err(Error::BatchTooSmall(n));
    }
    let diag = tape.diag(scores)?;
    let off = tape.off_diag(scores)?;
    let reg = reg.filter(|r| r.is_active());

    match reg {
        None => {
            let (term1, term2) = terms(tape, kind, scores, diag, off)?;
            let training_loss = tape.sub(term1, term2)?;
            let mi_estimate = match kind {
                EstimatorKind::Js { .. } => estimate(tape, kind, scores, diag, off)?,
                _ => training_loss,
            };
            Ok(LossVars {
                term1,
                term2,
                penalty: None,
                training_loss,
                mi_estimate,
            })
        }
        Some(spec) => {
            spec.validate()?;
            let (term1, term2) = match spec.clip {
                Some(tau) => {
                    let cs = tape.clip(scores, -tau, tau)?;
                    let cd = tape.diag(cs)?;
                    let co = tape.off_diag(cs)?;
                    terms(tape, kind, cs, cd, co)?
                }
                None => terms(tape, kind, scores, diag, off)?,
            };
            let base = tape.sub(term1, term2)?;
            let pen = penalty(tape, kind, spec, off)?;
            let training_loss = tape.sub(base, pen)?;
            let mi_estimate = if spec.clip.is_none() && !matches!(kind, EstimatorKind::Js { .. }) {
                base
            } else {
                estimate(tape, kind, scores, diag, off)?
            };
            Ok(LossVars {
                term1,
                term2,
                penalty: Some(pen),
                training_loss,
                mi_estimate,
            })
        }
    }
}

/// Evaluates a bound on a plain score matrix.
///
/// Returns [`Error::Divergence`] when the result is not finite, or when a
/// bound that exponentiates raw scores sees one beyond the overflow frontier.
pub fn evaluate(
    scores: &Matrix,
    kind: &EstimatorKind,
    reg: Option<&RegularizerSpec>,
) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    let s = tape.leaf(scores.clone());
    let vars = build_loss(&mut tape, s, kind, reg)?;
    let b = vars.read(&tape);
    if kind.exponentiates_scores() {
        let shift = kind.marginal_shift();
        if let Some(v) = scores
            .off_diagonal()
            .iter()
            .find(|&&v| v - shift > OVERFLOW_FRONTIER)
        {
            return Err(Error::Divergence(format!(
                "{kind}: exp overflow at score {v}"
            )));
        }
    }
    if !b.is_finite() {
        return Err(Error::Divergence(format!("{kind}: non-finite loss {b:?}")));
    }
    Ok(b)
}

pub fn loss_mine(scores: &Matrix) -> Result<LossBreakdown> {
    evaluate(scores, &EstimatorKind::Mine, None)
}

pub fn loss_smile(scores: &Matrix, tau: f64) -> Result<LossBreakdown> {
    evaluate(scores, &EstimatorKind::Smile { tau }, None)
}

pub fn loss_infonce(scores: &Matrix) -> Result<LossBreakdown> {
    evaluate(scores, &EstimatorKind::InfoNce, None)
}

pub fn loss_nwj(scores: &Matrix) -> Result<LossBreakdown> {
    evaluate(scores, &EstimatorKind::Nwj, None)
}

pub fn loss_tuba(scores: &Matrix) -> Result<LossBreakdown> {
    evaluate(scores, &EstimatorKind::Tuba, None)
}

/// JS training value with the NWJ-formula estimate. Scores are expected to
/// come from a softplus critic.
pub fn loss_js(scores: &Matrix) -> Result<LossBreakdown> {
    evaluate(scores, &EstimatorKind::js(), None)
}

/// Loss terms of `kind` on scores clipped to `[-τ, τ]`, with the penalty of
/// `spec` computed on the raw scores.
pub fn clipped_loss_terms(
    scores: &Matrix,
    kind: &EstimatorKind,
    spec: &RegularizerSpec,
    tau: f64,
) -> Result<LossBreakdown> {
    let spec = RegularizerSpec {
        clip: Some(tau),
        ..*spec
    };
    evaluate(scores, kind, Some(&spec))
}

/// The penalty `λ · d(stat, C*)` for a marginal statistic given in the
/// family's natural domain (`ln E_Q e^T` for DV, `E_Q e^{T-s}` otherwise).
pub fn penalty_value(
    kind: &EstimatorKind,
    spec: &RegularizerSpec,
    raw_marginal_stat: f64,
) -> Result<f64> {
    spec.validate()?;
    let d = match spec.distance {
        Distance::Euclidean => raw_marginal_stat - spec.target,
        Distance::LogEuclidean => {
            if !(raw_marginal_stat > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "log-Euclidean distance of non-positive statistic {raw_marginal_stat} ({kind})"
                )));
            }
            raw_marginal_stat.ln() - spec.target.ln()
        }
    };
    Ok(spec.lambda * d * d)
}

/// Applies the penalty to an existing breakdown; the estimate is unchanged.
pub fn regularize(
    b: &LossBreakdown,
    kind: &EstimatorKind,
    spec: &RegularizerSpec,
    raw_marginal_stat: f64,
) -> Result<LossBreakdown> {
    let p = penalty_value(kind, spec, raw_marginal_stat)?;
    Ok(LossBreakdown {
        regularizer: b.regularizer + p,
        training_loss: b.training_loss - p,
        ..*b
    })
}
