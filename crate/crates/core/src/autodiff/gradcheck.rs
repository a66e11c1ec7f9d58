use super::{AutodiffError, Tape, Var};
use crate::matrix::Matrix;

/// Gradients smaller than this are compared on an absolute scale.
const SCALE_FLOOR: f64 = 1e-3;

/// Outcome of comparing backward gradients to central finite differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_relative_error: f64,
    /// `(parameter, flat entry)` of the worst entry.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub entries_checked: usize,
}

fn evaluate<F, E>(f: &F, params: &[Matrix]) -> std::result::Result<f64, E>
where
    F: Fn(&mut Tape, &[Var]) -> std::result::Result<Var, E>,
    E: From<AutodiffError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out);
    let value = v.item().ok_or(AutodiffError::NotScalar(v.shape()))?;
    if value.is_finite() {
        Ok(value)
    } else {
        Err(AutodiffError::NonFinite { value }.into())
    }
}

/// Compares the gradient of the scalar program `f` at `params` with central
/// differences `(f(p + eps) - f(p - eps)) / (2 eps)`, entry by entry.
///
/// The relative error of an entry is `|a - n| / max(|a|, |n|, 1e-3)`.
pub fn grad_check<F, E>(f: F, params: &[Matrix], eps: f64) -> std::result::Result<GradCheck, E>
where
    F: Fn(&mut Tape, &[Var]) -> std::result::Result<Var, E>,
    E: From<AutodiffError>,
{
    if !(eps > 0.0) {
        return Err(
            AutodiffError::InvalidArgument(format!("eps must be positive, got {eps}")).into(),
        );
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let value = tape.scalar(out);
    if !value.is_finite() {
        return Err(AutodiffError::NonFinite { value }.into());
    }
    let grads = tape.backward(out)?;

    let mut report = GradCheck {
        max_relative_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        entries_checked: 0,
    };
    let mut probe = params.to_vec();
    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(&tape, *var);
        for k in 0..params[pi].len() {
            let orig = params[pi].as_slice()[k];
            probe[pi].as_mut_slice()[k] = orig + eps;
            let up = evaluate(&f, &probe)?;
            probe[pi].as_mut_slice()[k] = orig - eps;
            let down = evaluate(&f, &probe)?;
            probe[pi].as_mut_slice()[k] = orig;

            let numeric = (up - down) / (2.0 * eps);
            let a = analytic.as_slice()[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(SCALE_FLOOR);
            report.entries_checked += 1;
            if rel > report.max_relative_error || report.entries_checked == 1 {
                report.max_relative_error = rel;
                report.worst = (pi, k);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
