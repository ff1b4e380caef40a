use bmtd::config::Config;
use bmtd::estimator::EstimatorMode;
use bmtd::optimizer::{tune, Scenario, Strategy};
use bmtd::protocol::phase2_seeds;
use bmtd::bloom::HashFamily;
use bmtd::sim::{
    generate_population, run_experiment, run_trial, trial_seed, EstimationOptions, ExperimentConfig, Grid,
    TrialOptions,
};

fn small_cfg(trials: u32) -> ExperimentConfig {
    let grid = Grid {
        e_count: vec![300],
        u_count: vec![0, 2000],
        m: vec![0, 4],
        big_m: vec![2],
        alpha: vec![0.9, 0.99],
    };
    ExperimentConfig::new(grid, vec![Strategy::WorstCase, Strategy::ExpectedTime], trials, 12)
}

#[test]
fn identical_config_gives_identical_result() {
    let cfg = small_cfg(20);
    let a = run_experiment(&cfg).unwrap();
    let b = run_experiment(&cfg).unwrap();
    assert_eq!(a, b);
    let mut one = cfg.clone();
    one.threads = 1;
    let mut three = cfg.clone();
    three.threads = 3;
    assert_eq!(run_experiment(&one).unwrap(), a);
    assert_eq!(run_experiment(&three).unwrap(), a);
    assert_eq!(a.points.len(), 2 * 8);
}

#[test]
fn nothing_missing_runs_to_completion() {
    let s = Scenario::new(300, 1000, 1, 0.9).with_missing(0);
    let p = tune(&s, Strategy::WorstCase).unwrap();
    for t in 0..30 {
        let r = run_trial(&s, &p, trial_seed(5, 0, t), &TrialOptions::default()).unwrap();
        let o = r.outcome.unwrap();
        assert!(!r.detected);
        assert_eq!(r.time, o.total_time);
        assert!(o.phase2_rounds >= p.w_rounds);
        let planned: f64 = p.phase1_rounds.iter().map(|r| r.l as f64).sum::<f64>()
            + (o.phase2_rounds as u64 * p.f_w as u64) as f64;
        assert_eq!(o.total_time, planned);
    }
}

#[test]
fn everything_missing_is_caught_at_the_first_mapped_slot() {
    let s = Scenario::new(40, 0, 1, 0.9).with_missing(40);
    let p = tune(&s, Strategy::ExpectedTime).unwrap();
    assert_eq!(p.x, 0);
    let seed = trial_seed(8, 0, 0);
    let r = run_trial(&s, &p, seed, &TrialOptions::default()).unwrap();
    let pop = generate_population(&s, seed).unwrap();
    let fam = HashFamily::new(1, phase2_seeds(seed).seed(0), p.f_w).unwrap();
    let first = pop.expected.iter().map(|id| fam.index(id, 1)).min().unwrap() as u64 + 1;
    let o = r.outcome.unwrap();
    assert_eq!(o.detection_round, Some(1));
    assert_eq!(o.phase2_slot, Some(first));
    assert_eq!(o.detection_time, Some(first as f64));
}

#[test]
fn threshold_above_missing_count_is_not_an_error() {
    let grid = Grid {
        e_count: vec![1000],
        u_count: vec![5000],
        m: vec![100],
        big_m: vec![100, 200, 300],
        alpha: vec![0.9],
    };
    let res = run_experiment(&ExperimentConfig::new(grid, vec![Strategy::ExpectedTime], 20, 4)).unwrap();
    for p in &res.points {
        assert!((0.0..=1.0).contains(&p.reliability));
        assert!(p.mean_time > 0.0);
    }
}

#[test]
fn csv_has_fixed_columns_and_one_row_per_point() {
    let text = r#"
schema_version = 1
[scenario]
e_count = 200
u_count = 1000
big_m = 1
alpha = 0.9
[run]
strategies = ["worst-case", "expected-time"]
trials = 1
[grid]
m = "1:50:901"
e_count = 1000
"#;
    let cfg = Config::parse(text, &[]).unwrap();
    let res = run_experiment(&cfg.experiment().unwrap()).unwrap();
    let mut buf = Vec::new();
    res.write_csv(&mut buf).unwrap();
    let out = String::from_utf8(buf).unwrap();
    let mut lines = out.lines();
    assert_eq!(
        lines.next().unwrap(),
        "e_count,u_count,m,big_m,alpha,strategy,reliability,mean_time,std_time,analytic_etd"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 38);
    assert_eq!(rows.iter().filter(|r| r.contains(",worst-case,")).count(), 19);
}

#[test]
fn estimation_front_end_runs() {
    let s = Scenario::new(500, 5000, 1, 0.9).with_missing(50);
    let p = tune(&s, Strategy::ExpectedTime).unwrap();
    for mode in [EstimatorMode::OracleWithError, EstimatorMode::SrcAccurate] {
        let opts = TrialOptions {
            estimation: Some(EstimationOptions {
                mode,
                epsilon: 0.1,
                count_time: true,
            }),
            ..TrialOptions::default()
        };
        let mut early = 0;
        for t in 0..40 {
            let r = run_trial(&s, &p, trial_seed(6, 0, t), &opts).unwrap();
            assert!(r.detected);
            let est = r.estimate.unwrap();
            if r.early_detection {
                early += 1;
                assert!(r.outcome.is_none());
            } else if mode == EstimatorMode::SrcAccurate {
                assert!(r.time >= est.overhead_slots as f64);
            }
        }
        if mode == EstimatorMode::SrcAccurate {
            assert!(early > 0, "fifty missing tags should often show in the estimation frame");
        } else {
            assert_eq!(early, 0);
        }
    }
}
