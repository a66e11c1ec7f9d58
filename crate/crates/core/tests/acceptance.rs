//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use mi_lab::autodiff::grad_check;
use mi_lab::critics::{build_critic, CriticKind, MlpSpec, OptimizerSpec, OutputActivation};
use mi_lab::datasets::{ClusterMode, TaskSpec};
use mi_lab::estimators::{
    evaluate, loss_infonce, loss_mine, macro_average, micro_average, variance_ratio_check,
    variance_ratio_closed_form, DiscreteDensityRatio, Distance, EstimatorKind, RegularizerSpec,
};
use mi_lab::trainer::{
    drift_metric, train, CriticConfig, DriftThresholds, RegularizerConfig, RunConfig, RunLog,
    RunSummary, TrainConfig,
};
use mi_lab::{Error, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::io::Write;
use std::time::{Duration, Instant};

type Check = Result<(bool, String), Error>;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const LN_16: f64 = 2.772_588_722_239_781;
const LN_10: f64 = std::f64::consts::LN_10;

fn line(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{text}");
    let _ = out.flush();
}

/// Runs a check unless `only` is non-empty and leaves it out.
fn criterion(only: &[usize], id: usize, name: &str, check: impl FnOnce() -> Check) -> Option<bool> {
    if !only.is_empty() && !only.contains(&id) {
        return None;
    }
    let start = Instant::now();
    let (pass, detail) = check().unwrap_or_else(|e| (false, format!("error: {e}")));
    line(&format!(
        "{} {id:>2} {name}: {detail} [{:.1}s]",
        if pass { "PASS" } else { "FAIL" },
        start.elapsed().as_secs_f64()
    ));
    Some(pass)
}

fn all_kinds() -> [EstimatorKind; 6] {
    [
        EstimatorKind::Mine,
        EstimatorKind::smile(),
        EstimatorKind::InfoNce,
        EstimatorKind::Nwj,
        EstimatorKind::Tuba,
        EstimatorKind::js(),
    ]
}

fn output_for(kind: &EstimatorKind) -> OutputActivation {
    match kind {
        EstimatorKind::Js { .. } => OutputActivation::Softplus,
        _ => OutputActivation::None,
    }
}

fn timed(config: &RunConfig) -> Result<(RunLog, Duration), Error> {
    let start = Instant::now();
    let out = train(config)?;
    Ok((out.log, start.elapsed()))
}

fn one_hot(
    estimator: EstimatorKind,
    lambda: Option<f64>,
    batch: usize,
    iterations: usize,
    seed: u64,
) -> RunConfig {
    RunConfig {
        task: TaskSpec::OneHot { classes: 16 },
        critic: CriticConfig::default(),
        estimator,
        regularizer: lambda.map(RegularizerConfig::with_lambda),
        optimizer: OptimizerSpec::sgd(0.1),
        train: TrainConfig::new(batch, iterations, seed),
        drift: DriftThresholds::default(),
    }
}

fn gradients() -> Check {
    let mut worst = 0.0f64;
    let mut checks = 0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut normal = |r, c| Matrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal));
        let (xs, ys) = (normal(8, 2), normal(8, 2));
        for kind in all_kinds() {
            let spec = MlpSpec::new(vec![4, 8, 1], seed).with_output(output_for(&kind));
            let critic = build_critic(&spec, CriticKind::Concat)?;
            let params: Vec<Matrix> = critic.params().into_iter().cloned().collect();
            for reg in [None, Some(RegularizerSpec::default_for(&kind, 0.1))] {
                let r = grad_check(
                    |tape, vars| {
                        let pv = critic.param_vars(vars)?;
                        let s = critic.score_matrix_on(tape, &pv, &xs, &ys)?;
                        Ok::<_, Error>(
                            mi_lab::estimators::build_loss(tape, s, &kind, reg.as_ref())?
                                .training_loss,
                        )
                    },
                    &params,
                    1e-6,
                )?;
                worst = worst.max(r.max_relative_error);
                checks += 1;
            }
        }
    }
    Ok((
        worst < 1e-4,
        format!("worst relative error {worst:.2e} over {checks} loss/seed pairs"),
    ))
}

fn shift_invariance() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let s = Matrix::from_fn(8, 8, |_, _| rng.random_range(-4.0..4.0));
        let (m0, i0) = (loss_mine(&s)?.mi_estimate, loss_infonce(&s)?.mi_estimate);
        for c in [-3.0, -1.0, 1.0, 3.0] {
            let t = s.shifted(c);
            worst = worst
                .max((loss_mine(&t)?.mi_estimate - m0).abs())
                .max((loss_infonce(&t)?.mi_estimate - i0).abs());
        }
    }

    // bias family T + b: ln E_Q e^{T+b} = term2(T) + b, so the penalty vanishes at b = C* - term2
    let base = Matrix::from_fn(6, 6, |i, j| ((i * 5 + j * 11) % 7) as f64 * 0.3 - 1.0);
    let spec = RegularizerSpec::default_for(&EstimatorKind::Mine, 0.1);
    let penalty = |b: f64| {
        evaluate(&base.shifted(b), &EstimatorKind::Mine, Some(&spec)).map(|l| l.regularizer)
    };
    let analytic = spec.target - loss_mine(&base)?.term2;
    let grid: Vec<f64> = (-4000..=4000).map(|k| k as f64 * 1e-3).collect();
    let values = grid
        .iter()
        .map(|&b| penalty(b))
        .collect::<Result<Vec<_>, _>>()?;
    let k = (0..values.len())
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .unwrap();
    let unique =
        values[..k].windows(2).all(|w| w[0] > w[1]) && values[k..].windows(2).all(|w| w[0] < w[1]);
    let argmin_ok = (grid[k] - analytic).abs() <= 1e-3 && penalty(analytic)? < 1e-20;
    Ok((
        worst <= 1e-12 && unique && argmin_ok,
        format!(
            "max |Δ| {worst:.1e}; grid argmin {:.3} vs analytic {analytic:.4}, unique {unique}",
            grid[k]
        ),
    ))
}

fn one_hot_convergence(remine: &mut Vec<RunLog>) -> Check {
    let mut good = 0;
    let mut slowest = Duration::ZERO;
    let mut parts = Vec::new();
    for seed in SEEDS {
        let (log, t) = timed(&one_hot(EstimatorKind::Mine, Some(0.1), 100, 3000, seed))?;
        slowest = slowest.max(t);
        let est = log.converged_estimate().unwrap_or(f64::NAN);
        let n = log.records.len();
        let term2 = log
            .window_mean(log.records[n - n / 10].iter, usize::MAX, |r| r.term2)
            .unwrap_or(f64::NAN);
        good += usize::from((est - LN_16).abs() < 0.15 && term2.abs() < 0.1);
        parts.push(format!("{est:.3}/{term2:+.3}"));
        remine.push(log);
    }
    Ok((
        good >= 4 && slowest < Duration::from_secs(60),
        format!(
            "{good}/5 seeds ok (estimate/term2 tail: {}), slowest seed {:.1}s",
            parts.join(" "),
            slowest.as_secs_f64()
        ),
    ))
}

fn drift_detection(remine: &[RunLog]) -> Check {
    let th = DriftThresholds::default();
    let mut mine_hits = 0;
    let mut slowest = Duration::ZERO;
    for seed in SEEDS {
        let (log, t) = timed(&one_hot(EstimatorKind::Mine, None, 100, 3000, seed))?;
        slowest = slowest.max(t);
        mine_hits += usize::from(drift_metric(&log.records, 1000, &th)?.detected);
    }
    let mut re_hits = 0;
    for log in remine {
        re_hits += usize::from(drift_metric(&log.records, 1000, &th)?.detected);
    }
    Ok((
        mine_hits >= 4 && re_hits == 0 && remine.len() == 5 && slowest < Duration::from_secs(60),
        format!(
            "MINE drifts in {mine_hits}/5, ReMINE in {re_hits}/{}; slowest seed {:.1}s",
            remine.len(),
            slowest.as_secs_f64()
        ),
    ))
}

fn small_batch_instability() -> Check {
    let spec = RegularizerConfig::with_lambda(0.1).resolve(&EstimatorKind::Nwj);
    let reg_ok = spec.distance == Distance::LogEuclidean && spec.clip == Some(10.0);
    let mut nwj_div = 0;
    let mut re_div = 0;
    let mut re_max = 0.0f64;
    let mut nwj_max = 0.0f64;
    let mut slowest = Duration::ZERO;
    for seed in SEEDS {
        let mut plain = one_hot(EstimatorKind::Nwj, None, 32, 30_000, seed);
        plain.train.halt_on_divergence = true;
        let (log, t) = timed(&plain)?;
        slowest = slowest.max(t);
        nwj_div += usize::from(log.diverged());
        nwj_max = nwj_max.max(log.max_abs_score);

        let (log, t) = timed(&one_hot(EstimatorKind::Nwj, Some(0.1), 32, 30_000, seed))?;
        slowest = slowest.max(t);
        re_div += usize::from(log.diverged());
        re_max = re_max.max(log.max_abs_score);
    }
    Ok((
        reg_ok && nwj_div >= 3 && re_div == 0 && re_max < 20.0 && slowest < Duration::from_secs(180),
        format!(
            "NWJ diverged in {nwj_div}/5 (max |score| {nwj_max:.1}); ReNWJ diverged in {re_div}/5, max |score| {re_max:.1}; slowest seed {:.1}s",
            slowest.as_secs_f64()
        ),
    ))
}

fn variance_ratio() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let d = DiscreteDensityRatio::new(&[0.4, 0.3, 0.2, 0.1], &[0.1, 0.2, 0.3, 0.4])?;
    let mut ok = true;
    let mut parts = Vec::new();
    for (c1, c2) in [(1.0, 0.0), (0.5, 0.0)] {
        let r = variance_ratio_check(&d, c1, c2, 100, 10_000, &mut rng)?;
        let want = variance_ratio_closed_form(c1, c2);
        ok &= (r / want - 1.0).abs() < 0.1;
        parts.push(format!("({c1},{c2}): {r:.3} vs {want:.3}"));
    }
    Ok((ok, parts.join(", ")))
}

fn averaging_bias() -> Check {
    let n = 4;
    let t_star = Matrix::from_fn(n, n, |i, j| if i == j { (n as f64).ln() } else { -2.0 });
    let clean = loss_mine(&t_star)?.mi_estimate;
    let pooled = |offsets: &[f64]| -> Result<(f64, f64), Error> {
        let batches: Vec<Matrix> = offsets.iter().map(|&c| t_star.shifted(c)).collect();
        let per: Vec<f64> = batches
            .iter()
            .map(|b| loss_mine(b).map(|l| l.mi_estimate))
            .collect::<Result<_, _>>()?;
        let diag: Vec<f64> = batches.iter().flat_map(|b| b.diagonal()).collect();
        let off: Vec<f64> = batches.iter().flat_map(|b| b.off_diagonal()).collect();
        Ok((
            macro_average(&per)?,
            micro_average(&diag, &off, &EstimatorKind::Mine)?,
        ))
    };
    let (macro0, micro0) = pooled(&[0.0, 0.0])?;
    let (_, micro) = pooled(&[0.0, 1.0])?;
    // pooled bias: mean of the offsets minus ln of the mean of e^offset
    let oracle = 0.5 - ((1.0 + 1f64.exp()) / 2.0).ln();
    let bias = micro - clean;
    let ok = (macro0 - clean).abs() <= 1e-9
        && (micro0 - clean).abs() <= 1e-9
        && bias.abs() > 0.05
        && bias.signum() == oracle.signum()
        && (bias - oracle).abs() < 1e-12;
    Ok((ok, format!("micro - clean = {bias:.6}, oracle {oracle:.6}")))
}

fn gaussian(estimator: EstimatorKind, lambda: Option<f64>, seed: u64) -> RunConfig {
    RunConfig {
        task: TaskSpec::Gaussian {
            dim: 20,
            steps: vec![2.0, 4.0, 6.0, 8.0, 10.0],
            iters_per_step: 4000,
        },
        critic: CriticConfig {
            hidden: vec![64, 64],
            ..CriticConfig::default()
        },
        estimator,
        regularizer: lambda.map(RegularizerConfig::with_lambda),
        optimizer: OptimizerSpec::adam(1e-3),
        train: TrainConfig::new(64, 20_000, seed),
        drift: DriftThresholds::default(),
    }
}

/// Mean estimate over the last 10% of each 4000-iteration step.
fn step_tails(log: &RunLog) -> Vec<f64> {
    (0..5)
        .map(|k| {
            let end = (k + 1) * 4000;
            log.window_mean(end - 400, end, |r| r.mi_estimate)
                .unwrap_or(f64::NAN)
        })
        .collect()
}

fn staircase() -> Check {
    let mut ok = true;
    let mut parts = Vec::new();
    let mut slowest = Duration::ZERO;
    for kind in [EstimatorKind::Mine, EstimatorKind::smile()] {
        let (log, t) = timed(&gaussian(kind, Some(0.1), 1))?;
        slowest = slowest.max(t);
        let tails = step_tails(&log);
        ok &= (tails[0] - 2.0).abs() < 0.5 && (tails[1] - 4.0).abs() < 0.5;
        parts.push(format!(
            "re-{} {:.2}/{:.2}",
            kind.name(),
            tails[0],
            tails[1]
        ));
    }

    let (log, t) = timed(&gaussian(EstimatorKind::InfoNce, None, 1))?;
    slowest = slowest.max(t);
    let top = step_tails(&log)
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    ok &= top <= 64f64.ln() + 0.01;
    parts.push(format!("InfoNCE max tail {top:.3}"));

    for kind in [EstimatorKind::Nwj, EstimatorKind::Tuba] {
        let (log, t) = timed(&gaussian(kind, Some(0.1), 1))?;
        slowest = slowest.max(t);
        ok &= !log.diverged();
        parts.push(format!("re-{} diverged {}", kind.name(), log.diverged()));
    }

    let mut unstable = None;
    'search: for seed in [1, 2] {
        for kind in [EstimatorKind::Nwj, EstimatorKind::Tuba] {
            let (log, t) = timed(&gaussian(kind, None, seed))?;
            slowest = slowest.max(t);
            let late = log.window_max_abs_score(12_000, 20_000);
            if log.diverged() || late > 50.0 {
                unstable = Some(format!("{} seed {seed} max |score| {late:.1}", kind.name()));
                break 'search;
            }
        }
    }
    ok &= unstable.is_some();
    parts.push(format!(
        "unregularized instability: {}",
        unstable.as_deref().unwrap_or("none")
    ));
    Ok((
        ok,
        format!(
            "{}; slowest run {:.0}s",
            parts.join(", "),
            slowest.as_secs_f64()
        ),
    ))
}

fn cluster(
    mode: ClusterMode,
    estimator: EstimatorKind,
    lambda: Option<f64>,
    batch: usize,
    iterations: usize,
    seed: u64,
) -> RunConfig {
    RunConfig {
        task: TaskSpec::Cluster {
            classes: 10,
            mode,
            dim: 16,
            separation: 1.0,
            separation_ratio: 20.0,
        },
        critic: CriticConfig {
            hidden: vec![64],
            ..CriticConfig::default()
        },
        estimator,
        regularizer: lambda.map(RegularizerConfig::with_lambda),
        optimizer: OptimizerSpec::adam(1e-3),
        train: TrainConfig::new(batch, iterations, seed),
        drift: DriftThresholds::default(),
    }
}

fn supervised() -> Check {
    let mut ok = true;
    let mut parts = Vec::new();
    for (kind, lambda) in [
        (EstimatorKind::InfoNce, None),
        (EstimatorKind::Mine, Some(0.1)),
    ] {
        let log = train(&cluster(
            ClusterMode::Supervised,
            kind,
            lambda,
            500,
            2000,
            1,
        ))?
        .log;
        let est = log.converged_estimate().unwrap_or(f64::NAN);
        let acc = log.accuracy.unwrap_or(0.0);
        ok &= (est - LN_10).abs() < 0.1 && acc >= 0.99;
        parts.push(format!(
            "{}{} {est:.4} acc {acc:.4}",
            if lambda.is_some() { "re-" } else { "" },
            kind.name()
        ));
    }
    Ok((ok, parts.join(", ")))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn contrastive() -> Check {
    let median_error = |kind: EstimatorKind, lambda: Option<f64>| -> Result<(f64, f64), Error> {
        let mut est = Vec::new();
        for seed in SEEDS {
            let log = train(&cluster(
                ClusterMode::Contrastive,
                kind,
                lambda,
                200,
                1000,
                seed,
            ))?
            .log;
            est.push(log.converged_estimate().unwrap_or(f64::NAN));
        }
        let err = median(est.iter().map(|e| (e - LN_10).abs()).collect());
        Ok((median(est), err))
    };
    let mut ok = true;
    let mut parts = Vec::new();
    for kind in [EstimatorKind::Mine, EstimatorKind::InfoNce] {
        let (_, base_err) = median_error(kind, None)?;
        // λ chosen from the usual grid by median error, as the sweep report does
        let mut best = (f64::NAN, f64::NAN, f64::INFINITY);
        for lambda in [0.1, 0.01, 0.001] {
            let (est, err) = median_error(kind, Some(lambda))?;
            if err < best.2 {
                best = (lambda, est, err);
            }
        }
        let (lambda, est, err) = best;
        ok &= (est - LN_10).abs() < 0.3 && err <= base_err + 0.1;
        parts.push(format!(
            "re-{} λ={lambda} median {est:.4} (error {err:.4} vs original {base_err:.4})",
            kind.name()
        ));
    }
    Ok((ok, parts.join(", ")))
}

fn identity_and_determinism() -> Check {
    let mut ok = true;
    let mut compared = 0;
    for kind in all_kinds() {
        for seed in [1, 2] {
            let mut base = one_hot(kind, None, 16, 200, seed);
            base.critic.output = output_for(&kind);
            let mut zero = base.clone();
            zero.regularizer = Some(RegularizerConfig::with_lambda(0.0));
            let a = train(&base)?;
            let b = train(&zero)?;
            let again = train(&base)?;
            let csv = |l: &RunLog| l.to_csv_string();
            ok &= csv(&a.log)? == csv(&b.log)?
                && csv(&a.log)? == csv(&again.log)?
                && a.critic == again.critic;
            compared += 1;
        }
    }
    for config in [
        cluster(
            ClusterMode::Contrastive,
            EstimatorKind::InfoNce,
            Some(0.01),
            64,
            50,
            3,
        ),
        gaussian(EstimatorKind::Smile { tau: 5.0 }, Some(0.1), 3),
    ] {
        let mut config = config;
        config.train.iterations = config.train.iterations.min(300);
        let a = train(&config)?.log;
        let b = train(&config)?.log;
        ok &= a.to_csv_string()? == b.to_csv_string()?
            && RunSummary::new(&config, &a).to_json()? == RunSummary::new(&config, &b).to_json()?;
        compared += 1;
    }
    Ok((ok, format!("{compared} config pairs byte-identical")))
}

fn main() {
    let mut only: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    if only.contains(&4) {
        only.push(3);
    }
    let only = only.as_slice();
    let mut remine = Vec::new();
    let results = [
        criterion(only, 1, "gradient correctness", gradients),
        criterion(
            only,
            2,
            "shift invariance and ReMINE argmin",
            shift_invariance,
        ),
        criterion(only, 3, "one-hot ReMINE convergence", || {
            one_hot_convergence(&mut remine)
        }),
        criterion(only, 4, "drift detection", || drift_detection(&remine)),
        criterion(
            only,
            5,
            "small-batch NWJ instability",
            small_batch_instability,
        ),
        criterion(only, 6, "marginal-term variance ratio", variance_ratio),
        criterion(only, 7, "macro/micro averaging bias", averaging_bias),
        criterion(only, 8, "Gaussian staircase", staircase),
        criterion(only, 9, "supervised cluster benchmark", supervised),
        criterion(only, 10, "contrastive cluster benchmark", contrastive),
        criterion(
            only,
            11,
            "lambda = 0 identity and determinism",
            identity_and_determinism,
        ),
    ];
    let ran: Vec<bool> = results.into_iter().flatten().collect();
    let passed = ran.iter().filter(|&&p| p).count();
    line(&format!("{passed}/{} criteria passed", ran.len()));
    if passed != ran.len() {
        std::process::exit(1);
    }
}
