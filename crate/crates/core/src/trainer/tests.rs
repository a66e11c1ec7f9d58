use super::*;
use crate::datasets::ClusterMode;

fn one_hot_config(
    estimator: EstimatorKind,
    lambda: Option<f64>,
    iterations: usize,
    seed: u64,
) -> RunConfig {
    RunConfig {
        task: TaskSpec::OneHot { classes: 4 },
        critic: CriticConfig {
            hidden: vec![16],
            ..CriticConfig::default()
        },
        estimator,
        regularizer: lambda.map(RegularizerConfig::with_lambda),
        optimizer: OptimizerSpec::sgd(0.1),
        train: TrainConfig::new(8, iterations, seed),
        drift: DriftThresholds::default(),
    }
}

#[test]
fn identical_configs_give_identical_logs() {
    let c = one_hot_config(EstimatorKind::Mine, Some(0.1), 50, 3);
    let a = train(&c).unwrap();
    let b = train(&c).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(
        a.log.to_csv_string().unwrap(),
        b.log.to_csv_string().unwrap()
    );
    assert_eq!(a.critic, b.critic);
}

#[test]
fn lambda_zero_matches_original() {
    for kind in [
        EstimatorKind::Mine,
        EstimatorKind::Nwj,
        EstimatorKind::InfoNce,
    ] {
        let a = train(&one_hot_config(kind, None, 40, 1)).unwrap();
        let b = train(&one_hot_config(kind, Some(0.0), 40, 1)).unwrap();
        assert_eq!(
            a.log.to_csv_string().unwrap(),
            b.log.to_csv_string().unwrap()
        );
    }
}

#[test]
fn mine_estimate_ignores_output_shift() {
    let base = one_hot_config(EstimatorKind::Mine, None, 60, 2);
    let mut shifted = base.clone();
    shifted.critic.output_shift = 2.0;
    let a = train(&base).unwrap().log;
    let b = train(&shifted).unwrap().log;
    for (x, y) in a.records.iter().zip(&b.records) {
        assert!((x.mi_estimate - y.mi_estimate).abs() <= 1e-9);
        assert!((y.term1 - x.term1 - 2.0).abs() <= 1e-9);
        assert!((y.term2 - x.term2 - 2.0).abs() <= 1e-9);
    }
}

#[test]
fn cadence_and_final_record() {
    let mut c = one_hot_config(EstimatorKind::Mine, None, 25, 0);
    c.train.log_every = Some(10);
    let log = train(&c).unwrap().log;
    let iters: Vec<usize> = log.records.iter().map(|r| r.iter).collect();
    assert_eq!(iters, [0, 10, 20, 24]);
    assert_eq!(TrainConfig::new(2, 5000, 0).log_every(), 1);
    assert_eq!(TrainConfig::new(2, 5001, 0).log_every(), 10);
}

#[test]
fn divergence_latches_and_freezes_parameters() {
    // an enormous step rate blows NWJ up within a few iterations
    let mut c = one_hot_config(EstimatorKind::Nwj, None, 40, 4);
    c.optimizer = OptimizerSpec::sgd(1e4);
    let short = train(&c).unwrap();
    let at = short.log.divergence_iteration.expect("diverges");
    assert!(short
        .log
        .records
        .iter()
        .all(|r| r.diverged == (r.iter >= at)));
    c.train.iterations = 80;
    let long = train(&c).unwrap();
    assert_eq!(long.log.divergence_iteration, Some(at));
    assert_eq!(short.critic, long.critic);

    c.train.halt_on_divergence = true;
    let halted = train(&c).unwrap().log;
    assert_eq!(halted.records.last().unwrap().iter, at);
}

#[test]
fn validation_errors() {
    let js = one_hot_config(EstimatorKind::js(), None, 10, 0);
    assert!(matches!(train(&js), Err(Error::Config(_))));
    let mut ok = js.clone();
    ok.critic.output = OutputActivation::Softplus;
    assert!(train(&ok).is_ok());
    let mut sp = one_hot_config(EstimatorKind::Mine, None, 10, 0);
    sp.critic.output = OutputActivation::Softplus;
    assert!(sp.validate().is_err());
    let mut tiny = one_hot_config(EstimatorKind::Mine, None, 10, 0);
    tiny.train.batch_size = 1;
    assert!(tiny.validate().is_err());
    let mut neg = one_hot_config(EstimatorKind::Mine, Some(-1.0), 10, 0);
    assert!(neg.validate().is_err());
    neg.regularizer = Some(RegularizerConfig {
        clip: Some(5.0),
        no_clip: true,
        ..RegularizerConfig::with_lambda(0.1)
    });
    assert!(neg.validate().is_err());
}

#[test]
fn regularizer_resolution() {
    let r = RegularizerConfig::with_lambda(0.1).resolve(&EstimatorKind::Nwj);
    assert_eq!(r.distance, Distance::LogEuclidean);
    assert_eq!((r.target, r.clip), (1.0, Some(10.0)));
    let c = one_hot_config(EstimatorKind::Mine, Some(0.0), 10, 0);
    assert_eq!(c.regularizer_spec(), None);
    assert_eq!(c.variant(), "original");
}

#[test]
fn cluster_runs_report_accuracy() {
    let mut c = one_hot_config(EstimatorKind::InfoNce, None, 5, 0);
    c.task = TaskSpec::Cluster {
        classes: 3,
        mode: ClusterMode::Contrastive,
        dim: 4,
        separation: 1.0,
        separation_ratio: 20.0,
    };
    c.critic.embed_dim = Some(4);
    c.train.accuracy_test_n = 100;
    c.train.accuracy_pool = 30;
    let out = train(&c).unwrap();
    let acc = out.log.accuracy.unwrap();
    assert!((0.0..=1.0).contains(&acc));
    let summary = RunSummary::new(&c, &out.log);
    assert_eq!(summary.true_mi_schedule.len(), 1);
    assert!((summary.true_mi_schedule[0].1 - 3f64.ln()).abs() < 1e-12);
    let json = summary.to_json().unwrap();
    let back: RunSummary = serde_json::from_str(&json).unwrap();
    assert_eq!(back, summary);
}

#[test]
fn config_json_rejects_unknown_keys() {
    let c = one_hot_config(EstimatorKind::smile(), Some(0.1), 10, 0);
    let json = serde_json::to_string(&c).unwrap();
    let back: RunConfig = serde_json::from_str(&json).unwrap();
    assert_eq!(back, c);
    let bad = json.replacen("\"batch_size\"", "\"bogus\":1,\"batch_size\"", 1);
    assert!(serde_json::from_str::<RunConfig>(&bad).is_err());
}
