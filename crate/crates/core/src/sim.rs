//! Monte Carlo harness.
//!
//! Every trial draws its population, missing set, protocol seeds and reader
//! coverage from streams derived from `(base_seed, point, trial)`, so results
//! do not depend on thread count and strategies at the same grid point see
//! the same populations. Trials run on a rayon pool; aggregation happens in
//! trial order afterwards.

use std::borrow::Cow;
use std::io::Write;

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::estimator::{estimate, EstimateReport, EstimatorMode, FractionOfTruth};
use crate::optimizer::{expected_detection_time, tune, Phase1Sizing, ProtocolParams, Scenario, Strategy};
use crate::protocol::{execute, population, AirChannel, DetectionOutcome, ExecConfig, Execution, MultiReader, SingleReader, SlotTiming, TagState};
use crate::seed::{derive, rng_for, stream};
use crate::tag::{random_ids, TagId};

/// How tags are spread over several readers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CoverageLayout {
    /// Every tag is heard by exactly one of `readers`.
    Disjoint { readers: u32 },
    /// Every tag has a home reader; with probability `overlap` the next
    /// reader also hears it.
    Overlap { readers: u32, overlap: f64 },
}

impl CoverageLayout {
    pub fn readers(&self) -> u32 {
        match *self {
            CoverageLayout::Disjoint { readers } | CoverageLayout::Overlap { readers, .. } => readers,
        }
    }

    /// Reader coverage sets over population indices `0..n`.
    pub fn assign(&self, n: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
        let readers = self.readers() as usize;
        if readers == 0 {
            return Err(Error::InvalidConfig("reader count must be positive".into()));
        }
        let overlap = match *self {
            CoverageLayout::Disjoint { .. } => 0.0,
            CoverageLayout::Overlap { overlap, .. } => {
                if !(0.0..=1.0).contains(&overlap) {
                    return Err(Error::InvalidConfig(format!("overlap {overlap} outside [0, 1]")));
                }
                overlap
            }
        };
        let mut rng = rng_for(seed, &[stream::COVERAGE]);
        let mut sets = vec![Vec::new(); readers];
        for i in 0..n {
            let home = rng.random_range(0..readers);
            sets[home].push(i);
            if readers > 1 && rng.random_bool(overlap) {
                sets[(home + 1) % readers].push(i);
            }
        }
        Ok(sets)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimationOptions {
    pub mode: EstimatorMode,
    pub epsilon: f64,
    /// Add the estimation frame to the reported time.
    pub count_time: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TrialOptions {
    /// Estimate `|U|` first and tune with the estimate.
    pub estimation: Option<EstimationOptions>,
    pub coverage: Option<CoverageLayout>,
    /// Skip the reliability-enforcement rounds.
    pub no_enforce: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub detected: bool,
    /// Detection time if detected, else full execution time (bit-slots).
    pub time: f64,
    /// Phase 1 time plus the detection slot if detection happened within
    /// the planned `W` rounds, Phase 1 time alone otherwise.
    pub truncated_time: f64,
    pub x: u32,
    pub f_w: u32,
    pub missing: u64,
    pub early_detection: bool,
    pub estimate: Option<EstimateReport>,
    /// `None` when the estimation frame already detected the event.
    pub outcome: Option<DetectionOutcome>,
}

impl TrialResult {
    pub fn survivors(&self) -> u64 {
        self.outcome.map_or(0, |o| o.survivors)
    }
}

/// A generated trial population.
#[derive(Debug, Clone)]
pub struct Population {
    pub expected: Vec<TagId>,
    pub tags: Vec<TagState>,
    pub missing: Vec<TagId>,
}

/// Draws `|E| + |U|` distinct IDs and marks `m` expected ones missing,
/// uniformly without replacement.
pub fn generate_population(s: &Scenario, seed: u64) -> Result<Population> {
    if s.m > s.e_count {
        return Err(invalid("m exceeds |E|"));
    }
    let mut rng = rng_for(seed, &[stream::POPULATION]);
    let e = s.e_count as usize;
    let mut all = random_ids(&mut rng, e + s.u_count as usize);
    let unexpected = all.split_off(e);
    let expected = all;
    let mut rng = rng_for(seed, &[stream::MISSING]);
    let mut is_missing = vec![false; e];
    for i in sample(&mut rng, e, s.m as usize) {
        is_missing[i] = true;
    }
    let present: Vec<TagId> = expected
        .iter()
        .zip(&is_missing)
        .filter(|(_, &miss)| !miss)
        .map(|(&id, _)| id)
        .collect();
    let missing = expected
        .iter()
        .zip(&is_missing)
        .filter(|(_, &miss)| miss)
        .map(|(&id, _)| id)
        .collect();
    Ok(Population {
        tags: population(&present, &unexpected),
        expected,
        missing,
    })
}

/// Runs one execution and returns its outcome and round logs.
pub fn run_trace(s: &Scenario, params: &ProtocolParams, seed: u64, opts: &TrialOptions) -> Result<(TrialResult, Vec<crate::protocol::RoundLog>)> {
    let (r, exec) = trial_inner(s, params, seed, opts)?;
    Ok((r, exec.map(|e| e.logs).unwrap_or_default()))
}

/// Runs one simulated execution with trial seed `seed`.
pub fn run_trial(s: &Scenario, params: &ProtocolParams, seed: u64, opts: &TrialOptions) -> Result<TrialResult> {
    trial_inner(s, params, seed, opts).map(|(r, _)| r)
}

fn trial_inner(
    s: &Scenario,
    params: &ProtocolParams,
    seed: u64,
    opts: &TrialOptions,
) -> Result<(TrialResult, Option<Execution>)> {
    let mut pop = generate_population(s, seed)?;
    let timing = SlotTiming { t_r: s.t_r, t_t: s.t_t };

    let mut report = None;
    let mut overhead = 0.0;
    let mut params = Cow::Borrowed(params);
    if let Some(est) = opts.estimation {
        let r = estimate(
            &pop.expected,
            &pop.tags,
            est.epsilon,
            est.mode,
            &FractionOfTruth::default(),
            derive(seed, &[stream::ESTIMATE]),
        )?;
        let frame_time = r.overhead_slots as f64 * s.t_t;
        if r.early_detection {
            let res = TrialResult {
                detected: true,
                time: frame_time,
                truncated_time: frame_time,
                x: 0,
                f_w: 0,
                missing: s.m,
                early_detection: true,
                estimate: Some(r),
                outcome: None,
            };
            return Ok((res, None));
        }
        if est.count_time {
            overhead = frame_time;
        }
        params = Cow::Owned(tune(&s.with_unexpected(r.u_hat.round() as u64), params.strategy)?);
        report = Some(r);
    }

    let cfg = ExecConfig {
        alpha: s.alpha,
        big_m: s.big_m,
        timing,
        seed,
        enforce: !opts.no_enforce,
    };
    let exec = match opts.coverage {
        Some(layout) if layout.readers() > 1 => {
            let sets = layout.assign(pop.tags.len(), seed)?;
            let channel = MultiReader::new(sets, pop.tags.len())?;
            run_on(&channel, &mut pop, &params, &cfg)?
        }
        _ => run_on(&SingleReader, &mut pop, &params, &cfg)?,
    };
    let o = exec.outcome;
    let within_plan = o.detection_round.is_some_and(|r| r <= params.w_rounds);
    let truncated = o.phase1_time
        + if within_plan {
            o.phase2_slot.unwrap_or(0) as f64 * s.t_t
        } else {
            0.0
        };
    let res = TrialResult {
        detected: o.detected,
        time: overhead + o.time(),
        truncated_time: overhead + truncated,
        x: params.x,
        f_w: params.f_w,
        missing: s.m,
        early_detection: false,
        estimate: report,
        outcome: Some(o),
    };
    Ok((res, Some(exec)))
}

fn run_on<C: AirChannel>(channel: &C, pop: &mut Population, params: &ProtocolParams, cfg: &ExecConfig) -> Result<Execution> {
    execute(channel, &pop.expected, &mut pop.tags, params, cfg)
}

/// Hand-set protocol parameters, bypassing the optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManualParams {
    /// Phase 1 rounds as `(k, l)` pairs.
    #[serde(default)]
    pub phase1: Vec<Phase1Sizing>,
    pub f_w: u32,
    pub w_rounds: u32,
    #[serde(default = "one")]
    pub r_per_round: u32,
}

fn one() -> u32 {
    1
}

impl ManualParams {
    pub fn to_params(&self, strategy: Strategy, s: &Scenario) -> Result<ProtocolParams> {
        if self.f_w == 0 || self.w_rounds == 0 || self.r_per_round == 0 {
            return Err(Error::InvalidConfig("manual f_w, w_rounds and r_per_round must be positive".into()));
        }
        if self.phase1.iter().any(|r| r.k == 0 || r.l == 0) {
            return Err(Error::InvalidConfig("manual phase 1 rounds need k >= 1 and l >= 1".into()));
        }
        let x = self.phase1.iter().map(|r| r.k as u32).sum();
        Ok(ProtocolParams {
            strategy,
            x,
            phase1_rounds: self.phase1.clone(),
            y: self.w_rounds * self.r_per_round,
            w_rounds: self.w_rounds,
            r_per_round: self.r_per_round,
            f_w: self.f_w,
            n_star_expected: crate::optimizer::expected_active(&s.hardest(), x),
        })
    }
}

/// Cartesian grid of scenario values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub e_count: Vec<u64>,
    pub u_count: Vec<u64>,
    pub m: Vec<u64>,
    pub big_m: Vec<u64>,
    pub alpha: Vec<f64>,
}

impl Grid {
    pub fn single(s: &Scenario) -> Self {
        Grid {
            e_count: vec![s.e_count],
            u_count: vec![s.u_count],
            m: vec![s.m],
            big_m: vec![s.big_m],
            alpha: vec![s.alpha],
        }
    }

    /// Points in row-major order: `|E|`, `|U|`, `m`, `M`, `alpha`.
    pub fn points(&self, t_r: f64, t_t: f64) -> Vec<Scenario> {
        let mut out = Vec::new();
        for &e in &self.e_count {
            for &u in &self.u_count {
                for &m in &self.m {
                    for &big_m in &self.big_m {
                        for &alpha in &self.alpha {
                            out.push(Scenario {
                                e_count: e,
                                u_count: u,
                                m,
                                big_m,
                                alpha,
                                t_r,
                                t_t,
                            });
                        }
                    }
                }
            }
        }
        out
    }

    fn is_empty(&self) -> bool {
        self.e_count.is_empty()
            || self.u_count.is_empty()
            || self.m.is_empty()
            || self.big_m.is_empty()
            || self.alpha.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub grid: Grid,
    pub t_r: f64,
    pub t_t: f64,
    pub strategies: Vec<Strategy>,
    pub trials: u32,
    pub base_seed: u64,
    pub estimation: Option<EstimationOptions>,
    pub coverage: Option<CoverageLayout>,
    pub manual: Option<ManualParams>,
    /// Worker threads; 0 uses the global rayon pool.
    pub threads: usize,
    pub no_enforce: bool,
}

impl ExperimentConfig {
    pub fn new(grid: Grid, strategies: Vec<Strategy>, trials: u32, base_seed: u64) -> Self {
        ExperimentConfig {
            grid,
            t_r: 1.0,
            t_t: 1.0,
            strategies,
            trials,
            base_seed,
            estimation: None,
            coverage: None,
            manual: None,
            threads: 0,
            no_enforce: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be >= 1".into()));
        }
        if self.grid.is_empty() {
            return Err(Error::InvalidConfig("every grid axis needs at least one value".into()));
        }
        if self.strategies.is_empty() {
            return Err(Error::InvalidConfig("at least one strategy is required".into()));
        }
        if self.manual.is_some() && self.estimation.is_some() {
            return Err(Error::InvalidConfig("manual parameters cannot be combined with estimation".into()));
        }
        for s in self.grid.points(self.t_r, self.t_t) {
            s.validate().map_err(|e| Error::InvalidConfig(e.to_string()))?;
        }
        Ok(())
    }

    fn trial_options(&self) -> TrialOptions {
        TrialOptions {
            estimation: self.estimation,
            coverage: self.coverage,
            no_enforce: self.no_enforce,
        }
    }
}

/// Aggregates for one grid point and strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointResult {
    pub e_count: u64,
    pub u_count: u64,
    pub m: u64,
    pub big_m: u64,
    pub alpha: f64,
    pub strategy: Strategy,
    /// Fraction of trials that detected a missing event.
    pub reliability: f64,
    pub mean_time: f64,
    pub std_time: f64,
    pub analytic_etd: f64,
    pub mean_truncated_time: f64,
    pub mean_survivors: f64,
    pub x: u32,
    pub f_w: u32,
    pub mean_extra_rounds: f64,
    pub early_detections: u32,
    pub trials: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub base_seed: u64,
    pub points: Vec<PointResult>,
}

/// Fixed CSV header.
pub const CSV_COLUMNS: [&str; 10] = [
    "e_count",
    "u_count",
    "m",
    "big_m",
    "alpha",
    "strategy",
    "reliability",
    "mean_time",
    "std_time",
    "analytic_etd",
];

impl ExperimentResult {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        wr.write_record(CSV_COLUMNS).map_err(io)?;
        for p in &self.points {
            wr.write_record([
                p.e_count.to_string(),
                p.u_count.to_string(),
                p.m.to_string(),
                p.big_m.to_string(),
                p.alpha.to_string(),
                p.strategy.to_string(),
                p.reliability.to_string(),
                p.mean_time.to_string(),
                p.std_time.to_string(),
                p.analytic_etd.to_string(),
            ])
            .map_err(io)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("experiment result serializes")
    }
}

/// Parameters used at grid point `s` under `strategy`.
pub fn params_for(cfg: &ExperimentConfig, s: &Scenario, strategy: Strategy) -> Result<ProtocolParams> {
    match &cfg.manual {
        Some(m) => m.to_params(strategy, s),
        None => tune(s, strategy),
    }
}

/// Seed of trial `trial` at grid point `point`.
pub fn trial_seed(base: u64, point: usize, trial: u32) -> u64 {
    derive(base, &[point as u64, trial as u64])
}

/// Runs the full grid for every strategy.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    if cfg.threads > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        pool.install(|| run_grid(cfg))
    } else {
        run_grid(cfg)
    }
}

/// Runs the grid with the configured reader layout. Results are identical to
/// [`run_experiment`] without a layout.
pub fn run_multi_reader(cfg: &ExperimentConfig, layout: CoverageLayout) -> Result<ExperimentResult> {
    let mut cfg = cfg.clone();
    cfg.coverage = Some(layout);
    run_experiment(&cfg)
}

fn run_grid(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let opts = cfg.trial_options();
    let points = cfg.grid.points(cfg.t_r, cfg.t_t);
    let mut out = Vec::with_capacity(points.len() * cfg.strategies.len());
    for &strategy in &cfg.strategies {
        for (pi, s) in points.iter().enumerate() {
            let params = params_for(cfg, s, strategy)?;
            let trials: Vec<Result<TrialResult>> = (0..cfg.trials)
                .into_par_iter()
                .map(|t| run_trial(s, &params, trial_seed(cfg.base_seed, pi, t), &opts))
                .collect();
            let trials = trials.into_iter().collect::<Result<Vec<_>>>()?;
            out.push(aggregate(s, strategy, &params, &trials));
        }
    }
    Ok(ExperimentResult {
        base_seed: cfg.base_seed,
        points: out,
    })
}

fn aggregate(s: &Scenario, strategy: Strategy, params: &ProtocolParams, trials: &[TrialResult]) -> PointResult {
    let n = trials.len() as f64;
    let mean = |f: &dyn Fn(&TrialResult) -> f64| trials.iter().map(f).sum::<f64>() / n;
    let mean_time = mean(&|t| t.time);
    let var = if trials.len() > 1 {
        trials.iter().map(|t| (t.time - mean_time).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    PointResult {
        e_count: s.e_count,
        u_count: s.u_count,
        m: s.m,
        big_m: s.big_m,
        alpha: s.alpha,
        strategy,
        reliability: mean(&|t| if t.detected { 1.0 } else { 0.0 }),
        mean_time,
        std_time: var.sqrt(),
        analytic_etd: expected_detection_time(s, params.x),
        mean_truncated_time: mean(&|t| t.truncated_time),
        mean_survivors: mean(&|t| t.survivors() as f64),
        x: params.x,
        f_w: params.f_w,
        mean_extra_rounds: mean(&|t| t.outcome.map_or(0.0, |o| o.extra_rounds as f64)),
        early_detections: trials.iter().filter(|t| t.early_detection).count() as u32,
        trials: trials.len() as u32,
    }
}
