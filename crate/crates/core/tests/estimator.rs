use bmtd::estimator::{estimate, EstimatorMode, FractionOfTruth, RoughEstimator};
use bmtd::protocol::population;
use bmtd::tag::random_ids;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn slotted_estimate_is_within_ten_percent_most_of_the_time() {
    // the success rate sits close to 90%, so a single block of 100 runs is
    // too noisy; the rate is checked over ten blocks instead
    let runs = 1000u64;
    let mut good = 0;
    for run in 0..runs {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + run);
        let e = random_ids(&mut rng, 1000);
        let u = random_ids(&mut rng, 10_000);
        let tags = population(&e, &u);
        let r = estimate(&e, &tags, 0.1, EstimatorMode::SrcAccurate, &FractionOfTruth::default(), run).unwrap();
        assert_eq!(r.overhead_slots, 859);
        assert!(!r.early_detection);
        if (r.u_hat / 10_000.0 - 1.0).abs() <= 0.1 {
            good += 1;
        }
    }
    assert!(good * 10 >= runs * 9, "{good} of {runs} runs within 10%");
}

struct Exact;

impl RoughEstimator for Exact {
    fn rough(&self, true_total: u64) -> f64 {
        true_total as f64
    }
}

#[test]
fn rough_estimator_is_pluggable() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let e = random_ids(&mut rng, 100);
    let u = random_ids(&mut rng, 400);
    let tags = population(&e, &u);
    // an exact rough count gives a sparser frame than the default half-count
    let a = estimate(&e, &tags, 0.3, EstimatorMode::SrcAccurate, &Exact, 1).unwrap();
    let b = estimate(&e, &tags, 0.3, EstimatorMode::SrcAccurate, &FractionOfTruth::default(), 1).unwrap();
    assert_eq!(a.overhead_slots, b.overhead_slots);
    assert!(a.u_hat >= 0.0 && b.u_hat >= 0.0);
    assert!(estimate(&e, &tags, 1.0, EstimatorMode::SrcAccurate, &Exact, 1).is_err());
}
