//! Multi-batch averaging and marginal-term variance diagnostics.

use super::EstimatorKind;
use crate::autodiff::{clip, logmeanexp_slice};
use crate::error::{Error, Result};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

/// Mean of per-batch estimates.
pub fn macro_average(per_batch_estimates: &[f64]) -> Result<f64> {
    if per_batch_estimates.is_empty() {
        return Err(Error::Empty("macro_average"));
    }
    Ok(per_batch_estimates.iter().sum::<f64>() / per_batch_estimates.len() as f64)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// A single estimate from critic outputs pooled across batches.
///
/// InfoNCE is rejected: its denominator is per row of one batch and has no
/// pooled form.
pub fn micro_average(all_diag: &[f64], all_offdiag: &[f64], kind: &EstimatorKind) -> Result<f64> {
    if all_diag.is_empty() || all_offdiag.is_empty() {
        return Err(Error::Empty("micro_average"));
    }
    let joint = mean(all_diag);
    let marginal = match *kind {
        EstimatorKind::Mine => logmeanexp_slice(all_offdiag),
        EstimatorKind::Smile { tau } => {
            let clipped: Vec<f64> = all_offdiag.iter().map(|&v| clip(v, -tau, tau)).collect();
            logmeanexp_slice(&clipped)
        }
        EstimatorKind::Nwj | EstimatorKind::Js { .. } => {
            all_offdiag.iter().map(|v| (v - 1.0).exp()).sum::<f64>() / all_offdiag.len() as f64
        }
        EstimatorKind::Tuba => {
            all_offdiag.iter().map(|v| v.exp()).sum::<f64>() / all_offdiag.len() as f64 - 1.0
        }
        EstimatorKind::InfoNce => {
            return Err(Error::InvalidArgument(
                "InfoNCE has no pooled (micro-averaged) form".into(),
            ))
        }
    };
    Ok(joint - marginal)
}

/// A discrete pair `(P, Q)` with known density ratio `dP/dQ`.
#[derive(Debug, Clone)]
pub struct DiscreteDensityRatio {
    ratio: Vec<f64>,
    q: WeightedIndex<f64>,
}

impl DiscreteDensityRatio {
    /// Both arguments are probability vectors over the same outcomes; `q`
    /// must be positive wherever `p` is.
    pub fn new(p: &[f64], q: &[f64]) -> Result<Self> {
        if p.len() != q.len() || p.is_empty() {
            return Err(Error::InvalidArgument(
                "p and q must be non-empty and equally long".into(),
            ));
        }
        for (name, d) in [("p", p), ("q", q)] {
            if d.iter().any(|&v| !(v >= 0.0)) || (d.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "{name} is not a probability vector"
                )));
            }
        }
        if p.iter().zip(q).any(|(&pi, &qi)| pi > 0.0 && qi == 0.0) {
            return Err(Error::InvalidArgument(
                "P is not absolutely continuous w.r.t. Q".into(),
            ));
        }
        let ratio = p
            .iter()
            .zip(q)
            .map(|(&pi, &qi)| if qi > 0.0 { pi / qi } else { 0.0 })
            .collect();
        let q = WeightedIndex::new(q).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(Self { ratio, q })
    }

    /// `dP/dQ` at a draw from `Q`.
    pub fn sample_ratio<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.ratio[self.q.sample(rng)]
    }

    pub fn ratio(&self) -> &[f64] {
        &self.ratio
    }
}

/// `e^{2(C1 - C2)}`, the ratio of marginal-term variances for the optimal
/// critics `ln dP/dQ + C1` and `ln dP/dQ + C2`.
pub fn variance_ratio_closed_form(c1: f64, c2: f64) -> f64 {
    (2.0 * (c1 - c2)).exp()
}

fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Monte Carlo estimate of
/// `Var(E_{Q^(n)} e^{T1}) / Var(E_{Q^(n)} e^{T2})` with `Tk = ln dP/dQ + Ck`.
///
/// Each trial draws a fresh sample of `n` points from `Q` for each critic, so
/// the two variance estimates are independent.
pub fn variance_ratio_check<R: Rng + ?Sized>(
    density: &DiscreteDensityRatio,
    c1: f64,
    c2: f64,
    n: usize,
    trials: usize,
    rng: &mut R,
) -> Result<f64> {
    if c1 < c2 {
        return Err(Error::InvalidArgument(format!(
            "need C1 >= C2, got {c1} < {c2}"
        )));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    if trials < 1000 {
        return Err(Error::InvalidArgument(format!(
            "need at least 1000 trials, got {trials}"
        )));
    }
    let mut empirical_mean = |c: f64| -> f64 {
        let s: f64 = (0..n)
            .map(|_| (density.sample_ratio(rng).ln() + c).exp())
            .sum();
        s / n as f64
    };
    let mut first = Vec::with_capacity(trials);
    let mut second = Vec::with_capacity(trials);
    for _ in 0..trials {
        first.push(empirical_mean(c1));
        second.push(empirical_mean(c2));
    }
    let denom = sample_variance(&second);
    if !(denom > 0.0) {
        return Err(Error::InvalidArgument(
            "marginal statistic has zero variance under Q; ratio undefined".into(),
        ));
    }
    Ok(sample_variance(&first) / denom)
}
