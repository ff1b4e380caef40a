//! Closed-form parameter tuning.
//!
//! Phase 2 is sized first: the total hash budget `y*` and the frame length
//! `f_w` follow from the reliability target alone. Phase 1's total hash
//! budget `x` is then chosen either to minimize the worst-case execution
//! time `E[T]` (closed form, rounded to the better neighbouring integer) or
//! the expected detection time `E[T_D]` (exact integer search over a bounded
//! range).
//!
//! All tuning uses the hardest admissible case `m = M`.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Above this many unexpected tags the survivor binomial is truncated.
pub const BINOMIAL_TRUNCATE_ABOVE: u64 = 50_000;
/// Half-width of the truncated survivor window, in standard deviations.
pub const BINOMIAL_TRUNCATE_SIGMAS: f64 = 8.0;
/// Hard cap on the Phase 1 hash budget considered by any search.
pub const MAX_PHASE1_HASHES: u32 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Minimize the execution time when all Phase 2 rounds run.
    WorstCase,
    /// Minimize the expected time until the first detection.
    ExpectedTime,
}

impl Strategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::WorstCase => "worst-case",
            Strategy::ExpectedTime => "expected-time",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "worst-case" | "worst" => Ok(Strategy::WorstCase),
            "expected-time" | "expected" => Ok(Strategy::ExpectedTime),
            other => Err(invalid(format!("unknown strategy {other:?}"))),
        }
    }
}

/// One experiment point: population sizes, threshold, reliability target and
/// per-bit transmission times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    /// |E|, expected tags the reader monitors.
    pub e_count: u64,
    /// |U|, unexpected tags in range (possibly an estimate).
    pub u_count: u64,
    /// Actual number of missing expected tags.
    pub m: u64,
    /// Detection threshold M.
    pub big_m: u64,
    pub alpha: f64,
    /// Reader-to-tag time per bit.
    pub t_r: f64,
    /// Tag-to-reader time per slot.
    pub t_t: f64,
}

impl Scenario {
    /// Scenario with `m = M` and unit bit times.
    pub fn new(e_count: u64, u_count: u64, big_m: u64, alpha: f64) -> Self {
        Scenario {
            e_count,
            u_count,
            m: big_m,
            big_m,
            alpha,
            t_r: 1.0,
            t_t: 1.0,
        }
    }

    pub fn with_missing(mut self, m: u64) -> Self {
        self.m = m;
        self
    }

    pub fn with_unexpected(mut self, u_count: u64) -> Self {
        self.u_count = u_count;
        self
    }

    pub fn with_timing(mut self, t_r: f64, t_t: f64) -> Self {
        self.t_r = t_r;
        self.t_t = t_t;
        self
    }

    /// The same scenario with `m = M`.
    pub fn hardest(&self) -> Self {
        Scenario {
            m: self.big_m,
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.e_count == 0 {
            return Err(invalid("e_count must be positive"));
        }
        if self.big_m == 0 {
            return Err(invalid("threshold M must be positive"));
        }
        if self.big_m > self.e_count {
            return Err(invalid(format!(
                "threshold M={} exceeds |E|={}",
                self.big_m, self.e_count
            )));
        }
        if self.m > self.e_count {
            return Err(invalid(format!(
                "missing count m={} exceeds |E|={}",
                self.m, self.e_count
            )));
        }
        check_alpha(self.alpha)?;
        if !(self.t_r > 0.0 && self.t_r.is_finite() && self.t_t > 0.0 && self.t_t.is_finite()) {
            return Err(invalid("t_r and t_t must be positive and finite"));
        }
        Ok(())
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

/// Phase 1 round sizing: `k` hash functions over `l` bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Phase1Sizing {
    pub k: u16,
    pub l: u32,
}

/// Complete tuned parameter set for one execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolParams {
    pub strategy: Strategy,
    /// Total Phase 1 hash budget, the sum of all `k_j`.
    pub x: u32,
    pub phase1_rounds: Vec<Phase1Sizing>,
    /// Total Phase 2 hash budget `W * R_w`.
    pub y: u32,
    pub w_rounds: u32,
    pub r_per_round: u32,
    pub f_w: u32,
    /// Expected active tags after Phase 1, with `m = M`.
    pub n_star_expected: f64,
}

/// How the hash budgets are split across rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundSplit {
    /// Number of Phase 1 rounds J (rounds with `k_j = 0` are dropped).
    pub phase1_rounds: u32,
    /// Hash functions per Phase 2 round; must divide `y*`.
    pub r_per_round: u32,
}

impl Default for RoundSplit {
    fn default() -> Self {
        RoundSplit {
            phase1_rounds: 1,
            r_per_round: 1,
        }
    }
}

/// Analytic time figures for a tuned parameter set, in bit-slot units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeModel {
    pub t1: f64,
    pub t2: f64,
    /// Worst-case execution time `T_1 + T_2`.
    pub e_t: f64,
    pub e_td: f64,
}

/// Smallest integer total Phase 2 hash budget meeting reliability `alpha`
/// for `big_m` missing tags: `ceil(ln(1 - alpha) / (M ln 1/2))`, at least 1.
pub fn optimal_y(big_m: u64, alpha: f64) -> Result<u32> {
    check_alpha(alpha)?;
    if big_m == 0 {
        return Err(invalid("threshold M must be positive"));
    }
    Ok(y_star_unchecked(big_m, alpha))
}

fn y_star_unchecked(big_m: u64, alpha: f64) -> u32 {
    let raw = (-alpha).ln_1p() / (big_m as f64 * 0.5f64.ln());
    (raw.ceil() as u32).max(1)
}

/// Zero-bit fraction of a Phase 2 frame at the design point,
/// `1 - (1 - alpha)^(1 / (M y))`. Also the per-round false-positive rate
/// per hash function.
pub fn design_zero_fraction(alpha: f64, big_m: u64, y: u32) -> f64 {
    let e = (-alpha).ln_1p() / (big_m as f64 * y as f64);
    -e.exp_m1()
}

/// Phase 2 frame length `ceil(-N* R_w / ln(1 - (1-alpha)^(1/(M y))))`;
/// a degenerate `n_star <= 0` yields the minimum frame of one slot.
pub fn phase2_frame(n_star: f64, r_w: u32, big_m: u64, y: u32, alpha: f64) -> u64 {
    if n_star <= 0.0 {
        return 1;
    }
    let raw = -n_star * r_w as f64 / design_zero_fraction(alpha, big_m, y).ln();
    (raw.ceil() as u64).max(1)
}

/// Largest |U| for which Phase 1 cannot shorten the worst-case time.
pub fn u0_threshold(s: &Scenario) -> f64 {
    let y = y_star_unchecked(s.big_m, s.alpha);
    let c = design_zero_fraction(s.alpha, s.big_m, y);
    s.e_count as f64 * s.t_r * c.ln() / (-s.t_t * y as f64 * LN_2 * LN_2)
}

/// Expected active tags after a Phase 1 with total hash budget `x`:
/// `|E| - m + |U| / 2^x`.
pub fn expected_active(s: &Scenario, x: u32) -> f64 {
    s.e_count as f64 - s.m as f64 + s.u_count as f64 * 0.5f64.powi(x as i32)
}

/// Worst-case execution time `E[T]` with `m = M`.
pub fn expected_time(s: &Scenario, x: u32) -> f64 {
    let h = s.hardest();
    let y = y_star_unchecked(s.big_m, s.alpha);
    let c = design_zero_fraction(s.alpha, s.big_m, y);
    let t1 = s.e_count as f64 * s.t_r * x as f64 / LN_2;
    t1 - s.t_t * y as f64 * expected_active(&h, x) / c.ln()
}

/// Continuous minimizer of `E[T]` for `|U| > U_0`; `None` otherwise.
pub fn worst_case_x_real(s: &Scenario) -> Option<f64> {
    if s.u_count as f64 <= u0_threshold(s) {
        return None;
    }
    let y = y_star_unchecked(s.big_m, s.alpha) as f64;
    let c = design_zero_fraction(s.alpha, s.big_m, y as u32);
    let ratio = -s.t_r * s.e_count as f64 * c.ln() / (s.t_t * y * s.u_count as f64 * LN_2 * LN_2);
    Some(ratio.ln() / -LN_2)
}

/// Integer Phase 1 budget minimizing `E[T]`.
///
/// Zero when `|U| <= U_0`. Otherwise the continuous optimum is rounded to
/// whichever neighbour gives the smaller `E[T]`, never below one so that
/// Phase 1 runs whenever `|U| > U_0`.
pub fn worst_case_x(s: &Scenario) -> u32 {
    let Some(real) = worst_case_x_real(s) else {
        return 0;
    };
    let lo = (real.floor().max(1.0) as u32).min(MAX_PHASE1_HASHES);
    let hi = (real.ceil().max(1.0) as u32).min(MAX_PHASE1_HASHES);
    if expected_time(s, lo) <= expected_time(s, hi) {
        lo
    } else {
        hi
    }
}

/// Probability that a given Phase 2 slot reveals a missing tag when `n_star`
/// tags are active and the frame is at its design point:
/// `(1 - c^(M/N*)) * c` with `c` the design zero fraction.
pub fn slot_detect_prob(s: &Scenario, n_star: f64, y: u32) -> f64 {
    if s.big_m == 0 {
        return 0.0;
    }
    let c = design_zero_fraction(s.alpha, s.big_m, y);
    if n_star <= 0.0 {
        return c;
    }
    let hit = -(s.big_m as f64 / n_star * c.ln()).exp_m1();
    hit * c
}

/// Lower bound on [`slot_detect_prob`] over all possible Phase 1 outcomes.
pub fn slot_detect_prob_min(s: &Scenario) -> f64 {
    if s.big_m == 0 {
        return 0.0;
    }
    let y = y_star_unchecked(s.big_m, s.alpha);
    let c = design_zero_fraction(s.alpha, s.big_m, y);
    let n_max = (s.e_count - s.big_m + s.u_count) as f64;
    let hit = if n_max <= 0.0 {
        1.0
    } else {
        -(s.big_m as f64 / n_max * 0.5f64.ln()).exp_m1()
    };
    hit * c
}

/// `E[Z; Z <= f]` for a geometric first-success slot `Z` with success
/// probability `q`: `(1 - (1-q)^f - f q (1-q)^f) / q`.
pub fn conditional_first_detection(q: f64, f: f64) -> f64 {
    if q <= 0.0 || f <= 0.0 {
        return 0.0;
    }
    if q >= 1.0 {
        return 1.0;
    }
    let log_surv = f * (-q).ln_1p();
    let surv = log_surv.exp();
    (-log_surv.exp_m1() - f * q * surv) / q
}

/// Distribution of surviving unexpected tags, `Binomial(u, p)`, as
/// `(count, weight)` pairs. For `u` above [`BINOMIAL_TRUNCATE_ABOVE`] only a
/// `±8σ` window is kept and the tail mass is folded into its endpoints.
pub fn survivor_distribution(u: u64, p: f64) -> Vec<(u64, f64)> {
    if u == 0 || p >= 1.0 {
        return vec![(u, 1.0)];
    }
    if p <= 0.0 {
        return vec![(0, 1.0)];
    }
    let n = u as f64;
    let mean = n * p;
    let (lo, hi) = if u > BINOMIAL_TRUNCATE_ABOVE {
        let sd = (n * p * (1.0 - p)).sqrt();
        let lo = (mean - BINOMIAL_TRUNCATE_SIGMAS * sd).floor().max(0.0) as u64;
        let hi = ((mean + BINOMIAL_TRUNCATE_SIGMAS * sd).ceil() as u64).min(u);
        (lo, hi)
    } else {
        (0, u)
    };
    let mode = (((n + 1.0) * p).floor() as u64).clamp(lo, hi);
    let ln_p = p.ln();
    let ln_q = (-p).ln_1p();
    let ln_mode = statrs::function::factorial::ln_binomial(u, mode)
        + mode as f64 * ln_p
        + (u - mode) as f64 * ln_q;
    let odds = p / (1.0 - p);

    let width = (hi - lo + 1) as usize;
    let mut w = vec![0.0; width];
    let at = |k: u64| (k - lo) as usize;
    w[at(mode)] = ln_mode.exp();
    // recurrence outward from the mode keeps ratios exact to rounding
    let mut cur = w[at(mode)];
    for k in mode..hi {
        cur *= (u - k) as f64 / (k + 1) as f64 * odds;
        w[at(k + 1)] = cur;
        if cur == 0.0 {
            break;
        }
    }
    let mut cur = w[at(mode)];
    for k in (lo + 1..=mode).rev() {
        cur *= k as f64 / (u - k + 1) as f64 / odds;
        w[at(k - 1)] = cur;
        if cur == 0.0 {
            break;
        }
    }
    if u > BINOMIAL_TRUNCATE_ABOVE {
        let inside: f64 = w.iter().sum();
        let missing = (1.0 - inside).max(0.0);
        // split folded mass by which side of the mean each endpoint sits
        let lower_share = if lo == 0 { 0.0 } else { 0.5 };
        let upper_share = if hi == u { 0.0 } else { 0.5 };
        let total_share = lower_share + upper_share;
        if total_share > 0.0 {
            w[0] += missing * lower_share / total_share;
            w[width - 1] += missing * upper_share / total_share;
        }
    }
    (lo..=hi).zip(w).filter(|&(_, wt)| wt > 0.0).collect()
}

/// Expected detection time `E[T_D]` for Phase 1 budget `x`, with `m = M`.
///
/// Phase 1 costs `|E| t_r x / ln 2`; the Phase 2 part averages
/// [`conditional_first_detection`] over the binomial number of surviving
/// unexpected tags, each conditional term using the frame length that the
/// realized `N*` would receive.
pub fn expected_detection_time(s: &Scenario, x: u32) -> f64 {
    let y = y_star_unchecked(s.big_m, s.alpha);
    let ln_c = design_zero_fraction(s.alpha, s.big_m, y).ln();
    let base = (s.e_count - s.big_m.min(s.e_count)) as f64;
    let p = 0.5f64.powi(x as i32);
    let ez: f64 = survivor_distribution(s.u_count, p)
        .into_iter()
        .map(|(ur, w)| {
            let n_star = base + ur as f64;
            let f = -n_star * y as f64 / ln_c;
            let q = slot_detect_prob(s, n_star, y);
            w * conditional_first_detection(q, f)
        })
        .sum();
    s.e_count as f64 * s.t_r * x as f64 / LN_2 + s.t_t * ez
}

/// `x_0 = t_t ln 2 / (t_r |E| q_min)`; the expected-time optimum lies in `[0, 2 x_0]`.
pub fn search_scale(s: &Scenario) -> f64 {
    s.t_t * LN_2 / (s.t_r * s.e_count as f64 * slot_detect_prob_min(s))
}

/// Upper end of the integer search range, `ceil(2 x_0)`.
pub fn search_bound(s: &Scenario) -> u32 {
    let b = (2.0 * search_scale(s)).ceil();
    if b.is_finite() {
        (b as u32).min(MAX_PHASE1_HASHES)
    } else {
        MAX_PHASE1_HASHES
    }
}

/// Integer Phase 1 budget minimizing `E[T_D]` over `[0, ceil(2 x_0)]`.
///
/// Ties go to the smallest `x`. If the minimum sits on the upper end the
/// range is doubled once. Since `E[T_D](x) > |E| t_r x / ln 2`, evaluation
/// stops as soon as that bound alone exceeds the best value seen.
pub fn expected_optimal_x(s: &Scenario) -> u32 {
    if s.u_count == 0 {
        return 0;
    }
    let bound = search_bound(s);
    let (mut best_x, best) = grid_argmin(s, 0, bound, None);
    if best_x == bound && bound < MAX_PHASE1_HASHES {
        let hi = bound.saturating_mul(2).min(MAX_PHASE1_HASHES);
        let (x, v) = grid_argmin(s, bound + 1, hi, Some(best));
        if v < best {
            best_x = x;
        }
    }
    best_x
}

fn grid_argmin(s: &Scenario, from: u32, to: u32, incumbent: Option<f64>) -> (u32, f64) {
    let slope = s.e_count as f64 * s.t_r / LN_2;
    let mut best = (from, incumbent.unwrap_or(f64::INFINITY));
    for x in from..=to {
        if slope * x as f64 >= best.1 {
            break;
        }
        let v = expected_detection_time(s, x);
        if v < best.1 {
            best = (x, v);
        }
    }
    best
}

/// Full parameter set for `s` with the default round split (one Phase 1
/// round, one hash per Phase 2 round).
pub fn tune(s: &Scenario, strategy: Strategy) -> Result<ProtocolParams> {
    tune_with(s, strategy, RoundSplit::default())
}

pub fn tune_with(s: &Scenario, strategy: Strategy, split: RoundSplit) -> Result<ProtocolParams> {
    s.validate()?;
    let x = match strategy {
        Strategy::WorstCase => worst_case_x(s),
        Strategy::ExpectedTime => expected_optimal_x(s),
    };
    params_for_x(s, strategy, x, split)
}

/// Parameter set for a given Phase 1 budget `x`, sized as [`tune_with`] would.
pub fn params_for_x(s: &Scenario, strategy: Strategy, x: u32, split: RoundSplit) -> Result<ProtocolParams> {
    s.validate()?;
    if split.phase1_rounds == 0 || split.r_per_round == 0 {
        return Err(invalid("round split counts must be positive"));
    }
    let y = optimal_y(s.big_m, s.alpha)?;
    if y % split.r_per_round != 0 {
        return Err(invalid(format!(
            "r_per_round={} does not divide y*={y}",
            split.r_per_round
        )));
    }
    let h = s.hardest();
    let n_star = expected_active(&h, x);
    let f_w = phase2_frame(n_star, split.r_per_round, s.big_m, y, s.alpha);
    let f_w = u32::try_from(f_w).map_err(|_| invalid(format!("frame length {f_w} overflows")))?;
    Ok(ProtocolParams {
        strategy,
        x,
        phase1_rounds: split_phase1(s.e_count, x, split.phase1_rounds)?,
        y,
        w_rounds: y / split.r_per_round,
        r_per_round: split.r_per_round,
        f_w,
        n_star_expected: n_star,
    })
}

/// Splits `x` into at most `rounds` near-equal positive parts, each sized
/// `l_j = ceil(|E| k_j / ln 2)`.
pub fn split_phase1(e_count: u64, x: u32, rounds: u32) -> Result<Vec<Phase1Sizing>> {
    let rounds = rounds.min(x.max(1));
    let mut out = Vec::new();
    for j in 0..rounds {
        let k = x / rounds + u32::from(j < x % rounds);
        if k == 0 {
            continue;
        }
        let k16 = u16::try_from(k).map_err(|_| invalid("per-round k exceeds u16"))?;
        let l = (e_count as f64 * k as f64 / LN_2).ceil();
        if l > u32::MAX as f64 {
            return Err(invalid(format!("phase 1 filter length {l} overflows")));
        }
        out.push(Phase1Sizing { k: k16, l: l as u32 });
    }
    Ok(out)
}

pub fn time_model(s: &Scenario, p: &ProtocolParams) -> TimeModel {
    let h = s.hardest();
    let t1 = s.e_count as f64 * s.t_r * p.x as f64 / LN_2;
    let c = design_zero_fraction(s.alpha, s.big_m, p.y);
    let t2 = -s.t_t * expected_active(&h, p.x) * p.y as f64 / c.ln();
    TimeModel {
        t1,
        t2,
        e_t: t1 + t2,
        e_td: expected_detection_time(s, p.x),
    }
}

/// Flat optimizer report covering both strategies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerReport {
    pub e_count: u64,
    pub u_count: u64,
    pub big_m: u64,
    pub alpha: f64,
    pub t_r: f64,
    pub t_t: f64,
    pub y_star: u32,
    pub u0: f64,
    pub x_worst_real: Option<f64>,
    pub x_worst: u32,
    pub x_expected: u32,
    pub search_bound: u32,
    pub q_min: f64,
    pub f_w_worst: u32,
    pub f_w_expected: u32,
    pub n_star_worst: f64,
    pub n_star_expected: f64,
    pub e_t_worst: f64,
    pub e_td_worst: f64,
    pub e_t_expected: f64,
    pub e_td_expected: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimate_u_hat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimate_epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimate_overhead_slots: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimate_early_detection: Option<bool>,
}

pub fn report(s: &Scenario) -> Result<OptimizerReport> {
    let worst = tune(s, Strategy::WorstCase)?;
    let expected = tune(s, Strategy::ExpectedTime)?;
    let tw = time_model(s, &worst);
    let te = time_model(s, &expected);
    Ok(OptimizerReport {
        e_count: s.e_count,
        u_count: s.u_count,
        big_m: s.big_m,
        alpha: s.alpha,
        t_r: s.t_r,
        t_t: s.t_t,
        y_star: worst.y,
        u0: u0_threshold(s),
        x_worst_real: worst_case_x_real(s),
        x_worst: worst.x,
        x_expected: expected.x,
        search_bound: search_bound(s),
        q_min: slot_detect_prob_min(s),
        f_w_worst: worst.f_w,
        f_w_expected: expected.f_w,
        n_star_worst: worst.n_star_expected,
        n_star_expected: expected.n_star_expected,
        e_t_worst: tw.e_t,
        e_td_worst: tw.e_td,
        e_t_expected: te.e_t,
        e_td_expected: te.e_td,
        estimate_u_hat: None,
        estimate_epsilon: None,
        estimate_overhead_slots: None,
        estimate_early_detection: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest};

    fn table2() -> Scenario {
        Scenario::new(1000, 10_000, 1, 0.9)
    }

    #[test]
    fn y_star_examples() {
        assert_eq!(optimal_y(1, 0.9).unwrap(), 4);
        assert_eq!(optimal_y(1, 0.99).unwrap(), 7);
        assert_eq!(optimal_y(50, 0.9).unwrap(), 1);
        assert!(optimal_y(1, 1.0).is_err());
        assert!(optimal_y(1, 0.0).is_err());
    }

    #[test]
    fn frame_examples() {
        assert_eq!(phase2_frame(1000.0, 1, 1, 4, 0.9), 1211);
        assert_eq!(phase2_frame(0.0, 1, 1, 4, 0.9), 1);
        // linear in N* before the ceiling
        let a = -1000.0 / design_zero_fraction(0.9, 1, 4).ln();
        let b = -2000.0 / design_zero_fraction(0.9, 1, 4).ln();
        assert!((b - 2.0 * a).abs() < 1e-9);
        // smaller alpha, smaller frame
        let mut prev = u64::MAX;
        for alpha in [0.99, 0.9, 0.8, 0.5, 0.2, 0.05] {
            let f = phase2_frame(5000.0, 1, 3, 2, alpha);
            assert!(f <= prev);
            prev = f;
        }
    }

    #[test]
    fn u0_example_and_scaling() {
        let s = table2();
        assert!((u0_threshold(&s) - 429.967_098_614).abs() < 1e-6);
        let s2 = Scenario { e_count: 2000, ..s };
        assert!((u0_threshold(&s2) / u0_threshold(&s) - 2.0).abs() < 1e-12);
        let s3 = s.with_timing(3.0, 1.5);
        assert!((u0_threshold(&s3) / u0_threshold(&s) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn worst_case_examples() {
        let s = table2();
        assert_eq!(worst_case_x(&s), 5);
        assert!((worst_case_x_real(&s).unwrap() - 4.539_629_921_778).abs() < 1e-9);
        assert_eq!(worst_case_x(&s.with_unexpected(400)), 0);
        for x in [4, 6] {
            assert!(expected_time(&s, 5) <= expected_time(&s, x));
        }
    }

    #[test]
    fn worst_case_zero_iff_below_u0() {
        let base = table2();
        for u in (0..3000).step_by(7) {
            let s = base.with_unexpected(u);
            assert_eq!(worst_case_x(&s) == 0, u as f64 <= u0_threshold(&s), "u={u}");
        }
    }

    #[test]
    fn expected_active_examples() {
        let s = Scenario::new(1000, 10_000, 1, 0.9);
        assert_eq!(expected_active(&s, 0), 1000.0 - 1.0 + 10_000.0);
        assert!((expected_active(&s, 5) - 1311.5).abs() < 1e-12);
        assert!((expected_active(&s, 200) - 999.0).abs() < 1e-12);
    }

    #[test]
    fn q_zero_without_threshold() {
        let s = Scenario { big_m: 0, ..table2() };
        assert_eq!(slot_detect_prob(&s, 500.0, 4), 0.0);
    }

    #[test]
    fn q_lemma_matches_exact_product_for_large_frames() {
        // exact: (1 - (1-1/f)^M) (1-1/f)^N with f at the design point
        let s = Scenario::new(1000, 5000, 3, 0.9);
        let y = optimal_y(3, 0.9).unwrap();
        for n in [1000.0, 2500.0, 6000.0] {
            let f = -n * y as f64 / design_zero_fraction(0.9, 3, y).ln() / y as f64;
            let exact = (1.0 - (1.0 - 1.0 / f).powf(3.0)) * (1.0 - 1.0 / f).powf(n);
            let q = slot_detect_prob(&s, n, y);
            assert!((q / exact - 1.0).abs() < 2e-3, "n={n} q={q} exact={exact}");
        }
    }

    #[test]
    fn psys_identity_at_unrounded_frame() {
        for (m, alpha) in [(1u64, 0.9), (1, 0.99), (5, 0.95), (50, 0.9), (300, 0.99)] {
            let y = optimal_y(m, alpha).unwrap();
            let n = 1234.0;
            let f = -n / design_zero_fraction(alpha, m, y).ln();
            let p2 = (1.0 - (-n / f).exp()).powi(1);
            let psys = 1.0 - p2.powf((m * y as u64) as f64);
            assert!((psys - alpha).abs() < 1e-3, "m={m} alpha={alpha} psys={psys}");
        }
    }

    #[test]
    fn phase1_design_point() {
        for x in 1..=12u32 {
            let e = 1000u64;
            let rounds = split_phase1(e, x, 1).unwrap();
            let r = rounds[0];
            let unrounded = e as f64 * x as f64 / LN_2;
            let exact = {
                let fill = -(-(e as f64) * x as f64 / unrounded).exp_m1();
                fill.powi(x as i32)
            };
            assert!((exact / 0.5f64.powi(x as i32) - 1.0).abs() < 1e-6);
            let rounded = crate::bloom::fpr_theoretical(e, r.l as u64, r.k as u32);
            assert!((rounded / 0.5f64.powi(x as i32) - 1.0).abs() < 0.02);
        }
    }

    #[test]
    fn split_sums() {
        let parts = split_phase1(100, 7, 3).unwrap();
        assert_eq!(parts.iter().map(|p| p.k as u32).sum::<u32>(), 7);
        assert_eq!(parts.len(), 3);
        assert!(split_phase1(100, 0, 3).unwrap().is_empty());
        assert_eq!(split_phase1(100, 2, 5).unwrap().len(), 2);
    }

    #[test]
    fn binomial_masses_sum_to_one() {
        for (u, x) in [(0u64, 0u32), (1, 1), (500, 2), (10_000, 5), (30_000, 3), (60_000, 2), (200_000, 9), (80_000, 40)] {
            let d = survivor_distribution(u, 0.5f64.powi(x as i32));
            let total: f64 = d.iter().map(|&(_, w)| w).sum();
            assert!((total - 1.0).abs() < 1e-9, "u={u} x={x} total={total}");
        }
    }

    #[test]
    fn x_zero_is_point_mass() {
        let d = survivor_distribution(777, 1.0);
        assert_eq!(d, vec![(777, 1.0)]);
    }

    #[test]
    fn expected_search_examples() {
        let s = table2();
        let x = expected_optimal_x(&s);
        let bound = search_bound(&s);
        let vx = expected_detection_time(&s, x);
        for other in 0..=bound {
            assert!(vx <= expected_detection_time(&s, other));
        }
        assert_eq!(expected_optimal_x(&s.with_unexpected(0)), 0);
    }

    #[test]
    fn expected_time_is_unimodal_on_grid() {
        for u in [2000u64, 10_000, 30_000] {
            let s = table2().with_unexpected(u);
            let xs: Vec<f64> = (0..=search_bound(&s).min(40))
                .map(|x| expected_detection_time(&s, x))
                .collect();
            let best = expected_optimal_x(&s) as usize;
            assert!(xs[..=best].windows(2).all(|w| w[1] <= w[0]), "u={u}");
            assert!(xs[best..].windows(2).all(|w| w[1] >= w[0]), "u={u}");
        }
    }

    #[test]
    fn tune_table2() {
        let s = table2();
        let w = tune(&s, Strategy::WorstCase).unwrap();
        assert_eq!((w.x, w.y, w.w_rounds, w.r_per_round), (5, 4, 4, 1));
        assert_eq!(w.phase1_rounds, vec![Phase1Sizing { k: 5, l: 7214 }]);
        let below = tune(&s.with_unexpected(400), Strategy::WorstCase).unwrap();
        assert!(below.phase1_rounds.is_empty());
    }

    #[test]
    fn tune_rejects_bad_scenarios() {
        assert!(tune(&Scenario::new(10, 0, 11, 0.9), Strategy::WorstCase).is_err());
        assert!(tune(&Scenario::new(10, 0, 1, 1.5), Strategy::WorstCase).is_err());
        let split = RoundSplit { phase1_rounds: 1, r_per_round: 3 };
        assert!(tune_with(&table2(), Strategy::WorstCase, split).is_err());
        let split = RoundSplit { phase1_rounds: 2, r_per_round: 2 };
        let p = tune_with(&table2(), Strategy::WorstCase, split).unwrap();
        assert_eq!((p.w_rounds, p.r_per_round, p.phase1_rounds.len()), (2, 2, 2));
    }

    fn brute_conditional(q: f64, f: u32) -> f64 {
        let mut acc = 0.0;
        let mut surv = 1.0;
        for z in 1..=f {
            acc += z as f64 * surv * q;
            surv *= 1.0 - q;
        }
        acc
    }

    proptest! {
        #[test]
        fn conditional_matches_summation(q in 1e-3f64..0.9, f in 1u32..10_000) {
            let closed = conditional_first_detection(q, f as f64);
            let brute = brute_conditional(q, f);
            prop_assert!((closed - brute).abs() <= 1e-9 * brute.max(1.0), "closed={} brute={}", closed, brute);
        }

        #[test]
        fn q_never_below_q_min(e in 2u64..5000, u in 0u64..50_000, m_frac in 0.0f64..0.5, alpha in 0.5f64..0.999, x in 0u32..12) {
            let big_m = ((e as f64 * m_frac) as u64).max(1);
            let s = Scenario::new(e, u, big_m, alpha);
            let y = optimal_y(big_m, alpha).unwrap();
            let n = expected_active(&s, x);
            prop_assert!(slot_detect_prob(&s, n, y) >= slot_detect_prob_min(&s) * (1.0 - 1e-12));
        }
    }
}
