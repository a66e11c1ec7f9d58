use crate::config::Variant;
use crate::error::Result;
use mi_lab::trainer::RunSummary;
use statrs::distribution::{ContinuousCDF, StudentsT};

/// One line of a comparison table: a loss and variant at its best λ.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub loss: String,
    pub variant: Variant,
    /// `None` for original losses.
    pub lambda: Option<f64>,
    pub true_mi: f64,
    pub mi_mean: f64,
    /// Half-width of the 95% t interval; `None` with fewer than two finite runs.
    pub mi_half_width: Option<f64>,
    pub accuracy_mean: Option<f64>,
    pub accuracy_half_width: Option<f64>,
    /// Mean `|estimate - true MI|` over runs with a finite estimate.
    pub abs_error: f64,
    pub runs: usize,
    pub diverged: usize,
}

/// Sample mean and 95% t-interval half-width.
pub fn mean_ci(values: &[f64]) -> Option<(f64, Option<f64>)> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return Some((mean, None));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("positive dof")
        .inverse_cdf(0.975);
    Some((mean, Some(t * (var / n as f64).sqrt())))
}

fn mean_abs_error(runs: &[&RunSummary]) -> f64 {
    let errs: Vec<f64> = runs
        .iter()
        .filter_map(|s| s.converged_estimate.map(|e| (e - s.true_mi).abs()))
        .filter(|e| e.is_finite())
        .collect();
    if errs.is_empty() {
        f64::INFINITY
    } else {
        errs.iter().sum::<f64>() / errs.len() as f64
    }
}

fn row(loss: &str, variant: Variant, lambda: Option<f64>, runs: &[&RunSummary]) -> ReportRow {
    let estimates: Vec<f64> = runs
        .iter()
        .filter_map(|s| s.converged_estimate)
        .filter(|e| e.is_finite())
        .collect();
    let (mi_mean, mi_half_width) = mean_ci(&estimates).unwrap_or((f64::NAN, None));
    let accuracies: Vec<f64> = runs.iter().filter_map(|s| s.accuracy).collect();
    let acc = mean_ci(&accuracies);
    ReportRow {
        loss: loss.to_owned(),
        variant,
        lambda,
        true_mi: runs[0].true_mi,
        mi_mean,
        mi_half_width,
        accuracy_mean: acc.map(|a| a.0),
        accuracy_half_width: acc.and_then(|a| a.1),
        abs_error: mean_abs_error(runs),
        runs: runs.len(),
        diverged: runs.iter().filter(|s| s.diverged).count(),
    }
}

/// Groups finished runs by loss and variant, keeping each regularized
/// loss's λ with the smallest mean absolute error. Rows follow first appearance.
type Group<'a> = (String, Variant, Vec<(f64, Vec<&'a RunSummary>)>);

pub fn build_report(results: &[(Variant, RunSummary)]) -> Vec<ReportRow> {
    let mut groups: Vec<Group> = Vec::new();
    for (variant, s) in results {
        let idx = match groups
            .iter()
            .position(|g| g.0 == s.estimator && g.1 == *variant)
        {
            Some(i) => i,
            None => {
                groups.push((s.estimator.clone(), *variant, Vec::new()));
                groups.len() - 1
            }
        };
        let lambdas = &mut groups[idx].2;
        match lambdas
            .iter_mut()
            .find(|(l, _)| l.to_bits() == s.lambda.to_bits())
        {
            Some((_, runs)) => runs.push(s),
            None => lambdas.push((s.lambda, vec![s])),
        }
    }
    groups
        .iter()
        .map(|(loss, variant, lambdas)| {
            let mut best = &lambdas[0];
            for cand in &lambdas[1..] {
                if mean_abs_error(&cand.1) < mean_abs_error(&best.1) {
                    best = cand;
                }
            }
            let lambda = (*variant == Variant::Regularized).then_some(best.0);
            row(loss, *variant, lambda, &best.1)
        })
        .collect()
}

fn variant_name(v: Variant) -> &'static str {
    match v {
        Variant::Original => "original",
        Variant::Regularized => "regularized",
    }
}

fn estimate(mean: Option<f64>, hw: Option<f64>, clip: bool) -> (String, String) {
    match mean {
        Some(m) if m.is_finite() => {
            let m = if clip { m.max(0.0) } else { m };
            (
                format!("{m:.4}"),
                hw.map_or_else(|| "n/a".to_owned(), |h| format!("{h:.4}")),
            )
        }
        _ => ("n/a".to_owned(), "n/a".to_owned()),
    }
}

/// Fields of a row as printed; the MI mean is clipped at zero.
fn cells(r: &ReportRow) -> [String; 11] {
    let (mi, mi_hw) = estimate(Some(r.mi_mean), r.mi_half_width, true);
    let (acc, acc_hw) = estimate(r.accuracy_mean, r.accuracy_half_width, false);
    [
        r.loss.clone(),
        variant_name(r.variant).to_owned(),
        r.lambda.map_or_else(|| "-".to_owned(), |l| l.to_string()),
        format!("{:.6}", r.true_mi),
        mi,
        mi_hw,
        acc,
        acc_hw,
        if r.abs_error.is_finite() {
            format!("{:.4}", r.abs_error)
        } else {
            "n/a".to_owned()
        },
        r.runs.to_string(),
        r.diverged.to_string(),
    ]
}

pub const REPORT_HEADER: [&str; 11] = [
    "loss",
    "variant",
    "lambda",
    "true_mi",
    "mi_mean",
    "mi_ci95",
    "accuracy_mean",
    "accuracy_ci95",
    "abs_error",
    "runs",
    "diverged",
];

pub fn to_csv(rows: &[ReportRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(REPORT_HEADER)?;
    for r in rows {
        w.write_record(cells(r))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn to_text(rows: &[ReportRow]) -> String {
    let table: Vec<[String; 8]> = std::iter::once([
        "loss".to_owned(),
        "variant".to_owned(),
        "lambda".to_owned(),
        "ideal MI".to_owned(),
        "MI estimate".to_owned(),
        "accuracy".to_owned(),
        "|error|".to_owned(),
        "diverged".to_owned(),
    ])
    .chain(rows.iter().map(|r| {
        let c = cells(r);
        let pm = |m: &str, h: &str| {
            if m == "n/a" {
                m.to_owned()
            } else {
                format!("{m} ± {h}")
            }
        };
        [
            c[0].clone(),
            c[1].clone(),
            c[2].clone(),
            c[3].clone(),
            pm(&c[4], &c[5]),
            pm(&c[6], &c[7]),
            c[8].clone(),
            format!("{}/{}", c[10], c[9]),
        ]
    }))
    .collect();
    let widths: Vec<usize> = (0..8)
        .map(|k| {
            table
                .iter()
                .map(|r| r[k].chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for r in &table {
        let line: Vec<String> = r
            .iter()
            .zip(&widths)
            .map(|(c, &w)| format!("{c:<w$}"))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}
