//! Estimating the number of unexpected tags before tuning.
//!
//! Two front-ends are provided. The oracle perturbs the true count by a
//! uniform relative error, for controlled sensitivity studies. The slotted
//! estimator runs one frame of `L_est` slots in which each tag answers with
//! persistence probability `p_pe` in a hashed slot, then inverts the number
//! of empty slots. Expected tags that were due to answer in an empty slot
//! reveal a missing event before the protocol even starts.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bloom::HashFamily;
use crate::error::{invalid, Result};
use crate::optimizer::{expected_detection_time, expected_optimal_x, Scenario};
use crate::protocol::{TagKind, TagState};
use crate::seed::rng_for;
use crate::tag::TagId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorMode {
    OracleWithError,
    SrcAccurate,
}

/// Supplies the rough population estimate that sizes the accurate frame.
pub trait RoughEstimator: Sync {
    fn rough(&self, true_total: u64) -> f64;
}

/// Returns a fixed fraction of the true total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FractionOfTruth(pub f64);

impl Default for FractionOfTruth {
    fn default() -> Self {
        FractionOfTruth(0.5)
    }
}

impl RoughEstimator for FractionOfTruth {
    fn rough(&self, true_total: u64) -> f64 {
        self.0 * true_total as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub u_hat: f64,
    pub epsilon: f64,
    pub overhead_slots: u64,
    pub early_detection: bool,
    /// The raw estimate fell below `|E|` and was clamped to zero.
    pub clamped: bool,
}

/// Accurate-phase frame length `ceil(65 / (1 - 0.04^eps)^2)`.
pub fn src_frame_len(epsilon: f64) -> Result<u32> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(invalid(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    let d = -(epsilon * 0.04f64.ln()).exp_m1();
    Ok((65.0 / (d * d)).ceil() as u32)
}

/// `min(1, 1.6 L / n_hat)`.
pub fn persistence(l_est: u32, n_hat: f64) -> f64 {
    if n_hat <= 0.0 {
        return 1.0;
    }
    (1.6 * l_est as f64 / n_hat).min(1.0)
}

/// Per-slot probability that the estimation frame exposes a missing tag.
pub fn fast_detect_slot_prob(e_count: u64, u_count: u64, m: u64, l_est: u32, p_pe: f64) -> f64 {
    if m == 0 || l_est == 0 {
        return 0.0;
    }
    let ln_miss = (-p_pe / l_est as f64).ln_1p();
    let others = (u_count + e_count).saturating_sub(m) as f64;
    -(m as f64 * ln_miss).exp_m1() * (others * ln_miss).exp()
}

/// Probability that at least one of the `L_est` slots exposes a missing tag.
pub fn fast_detect_prob(e_count: u64, u_count: u64, m: u64, l_est: u32, p_pe: f64) -> f64 {
    let q = fast_detect_slot_prob(e_count, u_count, m, l_est, p_pe);
    -(l_est as f64 * (-q).ln_1p()).exp_m1()
}

/// Estimates `|U|` for the population on the channel.
///
/// `tags` holds only physically present tags; `expected` is the reader's
/// full list, so `|E|` is `expected.len()`.
pub fn estimate(
    expected: &[TagId],
    tags: &[TagState],
    epsilon: f64,
    mode: EstimatorMode,
    rough: &dyn RoughEstimator,
    seed: u64,
) -> Result<EstimateReport> {
    let true_u = tags.iter().filter(|t| t.kind == TagKind::Unexpected).count() as u64;
    match mode {
        EstimatorMode::OracleWithError => {
            if !(0.0..1.0).contains(&epsilon) {
                return Err(invalid(format!("epsilon must lie in [0, 1), got {epsilon}")));
            }
            let delta = if epsilon == 0.0 {
                0.0
            } else {
                rng_for(seed, &[]).random_range(-epsilon..=epsilon)
            };
            Ok(EstimateReport {
                u_hat: true_u as f64 * (1.0 + delta),
                epsilon,
                overhead_slots: 0,
                early_detection: false,
                clamped: false,
            })
        }
        EstimatorMode::SrcAccurate => {
            let l = src_frame_len(epsilon)?;
            let n_hat = rough.rough(tags.len() as u64);
            let p = persistence(l, n_hat);
            let mut occupied = vec![false; l as usize];
            for t in tags {
                if let Some(slot) = answer_slot(&t.id, seed, l, p) {
                    occupied[slot] = true;
                }
            }
            let early_detection = expected
                .iter()
                .filter_map(|id| answer_slot(id, seed, l, p))
                .any(|slot| !occupied[slot]);
            let empty = occupied.iter().filter(|o| !**o).count();
            let z0 = if empty == 0 { 0.5 } else { empty as f64 };
            let total = (z0 / l as f64).ln() / (-p / l as f64).ln_1p();
            let raw = total - expected.len() as f64;
            Ok(EstimateReport {
                u_hat: raw.max(0.0),
                epsilon,
                overhead_slots: l as u64,
                early_detection,
                clamped: raw < 0.0,
            })
        }
    }
}

/// Slot a tag answers in during the estimation frame, if it participates.
/// Both decisions are hashed from the ID so the reader can precompute them
/// for expected tags.
pub fn answer_slot(id: &TagId, seed: u64, l_est: u32, p_pe: f64) -> Option<usize> {
    let (h1, h2) = HashFamily::lanes(seed, id);
    let u = (h1 >> 11) as f64 / (1u64 << 53) as f64;
    (u < p_pe).then(|| (h2 % l_est as u64) as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityPoint {
    pub ratio: f64,
    pub u_hat: u64,
    pub x: u32,
    pub etd: f64,
    pub normalized: f64,
}

/// For each `U_hat / |U|` ratio, tunes the expected-time strategy with
/// `U_hat` and evaluates the expected detection time under the true `|U|`,
/// normalized by the value obtained when tuning with the true count.
pub fn sensitivity_scan(s: &Scenario, ratios: &[f64]) -> Result<Vec<SensitivityPoint>> {
    s.validate()?;
    let best = expected_detection_time(s, expected_optimal_x(s));
    ratios
        .iter()
        .map(|&ratio| {
            if !(ratio > 0.0 && ratio.is_finite()) {
                return Err(invalid(format!("ratio must be positive, got {ratio}")));
            }
            let u_hat = (s.u_count as f64 * ratio).round() as u64;
            let x = expected_optimal_x(&s.with_unexpected(u_hat));
            let etd = expected_detection_time(s, x);
            Ok(SensitivityPoint {
                ratio,
                u_hat,
                x,
                etd,
                normalized: etd / best,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::population;
    use crate::tag::random_ids;

    #[test]
    fn frame_len_example() {
        assert_eq!(src_frame_len(0.1).unwrap(), 859);
        assert!(src_frame_len(0.0).is_err());
        assert!(src_frame_len(1.0).is_err());
    }

    #[test]
    fn fast_detect_zero_without_missing() {
        assert_eq!(fast_detect_prob(1000, 10_000, 0, 859, 0.1), 0.0);
    }

    #[test]
    fn fast_detect_monotone_in_m() {
        let l = src_frame_len(0.1).unwrap();
        let p = persistence(l, 0.5 * 11_000.0);
        let mut prev = 0.0;
        for m in 1..=600 {
            let v = fast_detect_prob(1000, 10_000, m, l, p);
            assert!(v >= prev - 1e-15, "m={m}");
            prev = v;
        }
    }

    #[test]
    fn oracle_is_exact_at_zero_error() {
        let mut rng = crate::seed::rng_for(1, &[]);
        let e = random_ids(&mut rng, 100);
        let u = random_ids(&mut rng, 500);
        let tags = population(&e, &u);
        let r = estimate(&e, &tags, 0.0, EstimatorMode::OracleWithError, &FractionOfTruth::default(), 3)
            .unwrap();
        assert_eq!(r.u_hat, 500.0);
    }

    #[test]
    fn oracle_stays_in_band() {
        let mut rng = crate::seed::rng_for(2, &[]);
        let e = random_ids(&mut rng, 10);
        let u = random_ids(&mut rng, 1000);
        let tags = population(&e, &u);
        for seed in 0..200 {
            let r = estimate(&e, &tags, 0.2, EstimatorMode::OracleWithError, &FractionOfTruth::default(), seed)
                .unwrap();
            assert!((800.0..=1200.0).contains(&r.u_hat));
            let again =
                estimate(&e, &tags, 0.2, EstimatorMode::OracleWithError, &FractionOfTruth::default(), seed)
                    .unwrap();
            assert_eq!(r, again);
        }
    }

    #[test]
    fn src_clamps_tiny_unexpected_population() {
        let mut rng = crate::seed::rng_for(5, &[]);
        let e = random_ids(&mut rng, 2000);
        let tags = population(&e, &[]);
        let clamped = (0..20)
            .map(|s| {
                estimate(&e, &tags, 0.1, EstimatorMode::SrcAccurate, &FractionOfTruth::default(), s)
                    .unwrap()
            })
            .filter(|r| r.clamped)
            .inspect(|r| assert_eq!(r.u_hat, 0.0))
            .count();
        assert!(clamped > 0);
    }

    #[test]
    fn sensitivity_identity() {
        let s = Scenario::new(1000, 10_000, 1, 0.9);
        let pts = sensitivity_scan(&s, &[1.0]).unwrap();
        assert!((pts[0].normalized - 1.0).abs() < 1e-12);
        assert!(sensitivity_scan(&s, &[0.0]).is_err());
    }
}
