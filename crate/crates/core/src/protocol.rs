//! Reader and tag state machines for both phases.
//!
//! Phase 1 broadcasts Bloom filters built over the expected IDs; any active
//! tag failing a membership test deactivates for the rest of the execution.
//! Phase 2 runs `W` frames in which every active tag answers in `R_w`
//! pseudo-random slots. The reader decodes slot occupancy into a filter and
//! tests every expected ID against it. A failure can only come from a tag
//! that did not answer, so it reports a genuine missing event and stops.
//!
//! When `W` frames pass quietly the reader checks the reliability it actually
//! achieved, estimated from the ones-density of each frame, and keeps adding
//! frames until the target is met (bounded by a hard cap).

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::bloom::{build_filter, encode_frame, BitArray, BloomVector, HashFamily};
use crate::error::{Error, Result};
use crate::optimizer::ProtocolParams;
use crate::seed::{derive, stream, SeedStream};
use crate::tag::TagId;

/// Enforcement rounds stop at this multiple of the planned `W`.
pub const ENFORCEMENT_CAP_FACTOR: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TagKind {
    /// An expected tag that is physically present.
    ExpectedPresent,
    Unexpected,
}

/// A tag on the channel. Missing expected tags are never instantiated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TagState {
    pub id: TagId,
    pub kind: TagKind,
    pub active: bool,
}

impl TagState {
    pub fn new(id: TagId, kind: TagKind) -> Self {
        TagState {
            id,
            kind,
            active: true,
        }
    }
}

/// Builds an all-active population of present expected tags followed by
/// unexpected tags.
pub fn population(present: &[TagId], unexpected: &[TagId]) -> Vec<TagState> {
    present
        .iter()
        .map(|&id| TagState::new(id, TagKind::ExpectedPresent))
        .chain(unexpected.iter().map(|&id| TagState::new(id, TagKind::Unexpected)))
        .collect()
}

/// Per-bit transmission times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotTiming {
    pub t_r: f64,
    pub t_t: f64,
}

impl Default for SlotTiming {
    fn default() -> Self {
        SlotTiming { t_r: 1.0, t_t: 1.0 }
    }
}

/// One round of either phase, as written to a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoundLog {
    pub phase: u8,
    pub round_index: u32,
    pub seed: u64,
    pub filter_length: u32,
    pub hashes: u16,
    /// Ones in the broadcast filter (Phase 1) or decoded frame (Phase 2).
    pub ones_count: u64,
    /// Tags that deactivated this round (Phase 1 only).
    pub deactivated: u64,
    /// Positions in the expected list that failed the membership test.
    pub missing_found: Vec<u32>,
    /// Slot within this frame at which the first missing tag shows (1-based).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detection_offset: Option<u32>,
    pub elapsed_bits: f64,
    /// Observed reliability over all Phase 2 rounds so far.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reliability: Option<f64>,
}

impl RoundLog {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("round log serializes")
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        let log: RoundLog =
            serde_json::from_str(line.trim_end()).map_err(|e| Error::Decode(e.to_string()))?;
        log.validate()?;
        Ok(log)
    }

    pub fn validate(&self) -> Result<()> {
        if self.phase != 1 && self.phase != 2 {
            return Err(Error::Decode(format!("phase must be 1 or 2, got {}", self.phase)));
        }
        if self.ones_count > self.filter_length as u64 {
            return Err(Error::Decode(format!(
                "ones_count {} exceeds filter_length {}",
                self.ones_count, self.filter_length
            )));
        }
        if !(self.elapsed_bits.is_finite() && self.elapsed_bits >= 0.0) {
            return Err(Error::Decode("elapsed_bits must be finite and nonnegative".into()));
        }
        if let Some(r) = self.reliability {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Decode(format!("reliability {r} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Phase 1 round: `k` hashes over `l` bits with broadcast seed `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Phase1Round {
    pub k: u16,
    pub l: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phase1Outcome {
    pub logs: Vec<RoundLog>,
    pub active: u64,
    pub unexpected_survivors: u64,
    pub elapsed: f64,
}

/// Runs Phase 1 in place on `tags`.
///
/// # Panics
///
/// Panics if an expected present tag is deactivated, which would mean the
/// filter produced a false negative.
pub fn run_phase1(
    expected: &[TagId],
    tags: &mut [TagState],
    rounds: &[Phase1Round],
    timing: SlotTiming,
) -> Result<Phase1Outcome> {
    let mut logs = Vec::with_capacity(rounds.len());
    let mut elapsed = 0.0;
    for (j, r) in rounds.iter().enumerate() {
        let filter = build_filter(expected, r.l, r.k, r.seed)?;
        let mut deactivated = 0;
        for tag in tags.iter_mut().filter(|t| t.active) {
            if !filter.contains(&tag.id) {
                assert!(
                    tag.kind != TagKind::ExpectedPresent,
                    "expected tag {} deactivated in phase 1",
                    tag.id
                );
                tag.active = false;
                deactivated += 1;
            }
        }
        let bits = r.l as f64 * timing.t_r;
        elapsed += bits;
        logs.push(RoundLog {
            phase: 1,
            round_index: j as u32,
            seed: r.seed,
            filter_length: r.l,
            hashes: r.k,
            ones_count: filter.ones(),
            deactivated,
            missing_found: Vec::new(),
            detection_offset: None,
            elapsed_bits: bits,
            reliability: None,
        });
    }
    let active = tags.iter().filter(|t| t.active).count() as u64;
    let unexpected_survivors = tags
        .iter()
        .filter(|t| t.active && t.kind == TagKind::Unexpected)
        .count() as u64;
    Ok(Phase1Outcome {
        logs,
        active,
        unexpected_survivors,
        elapsed,
    })
}

/// Bitwise OR of equal-length reader frames.
pub fn merge_reader_frames(frames: &[BitArray]) -> Result<BitArray> {
    let Some((first, rest)) = frames.split_first() else {
        return Err(crate::error::invalid("no frames to merge"));
    };
    let mut out = first.clone();
    for f in rest {
        out.or_assign(f)?;
    }
    Ok(out)
}

/// Slot occupancy as sensed by the reader side for one Phase 2 frame.
pub trait AirChannel {
    fn sense(&self, tags: &[TagState], family: &HashFamily) -> Result<BitArray>;
}

fn frame_over<'a>(tags: impl Iterator<Item = &'a TagState>, family: &HashFamily) -> BitArray {
    let mut frame = BitArray::zeros(family.range as usize);
    for t in tags.filter(|t| t.active) {
        for i in family.indices(&t.id) {
            frame.set(i);
        }
    }
    frame
}

/// One reader hearing every tag.
#[derive(Debug, Clone, Copy, Default)]
pub struct SingleReader;

impl AirChannel for SingleReader {
    fn sense(&self, tags: &[TagState], family: &HashFamily) -> Result<BitArray> {
        Ok(frame_over(tags.iter(), family))
    }
}

/// Several readers, each hearing the tags at the listed population indices.
/// Their frames are OR-merged by a back-end before decoding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiReader {
    coverage: Vec<Vec<usize>>,
}

impl MultiReader {
    /// Fails if any of the `population_len` tags is outside every coverage set.
    pub fn new(coverage: Vec<Vec<usize>>, population_len: usize) -> Result<Self> {
        if coverage.is_empty() {
            return Err(Error::InvalidConfig("multi-reader needs at least one reader".into()));
        }
        let mut covered = vec![false; population_len];
        for (r, set) in coverage.iter().enumerate() {
            for &i in set {
                let slot = covered.get_mut(i).ok_or_else(|| {
                    Error::InvalidConfig(format!("reader {r} covers tag {i} outside population"))
                })?;
                *slot = true;
            }
        }
        if let Some(i) = covered.iter().position(|c| !c) {
            return Err(Error::InvalidConfig(format!("tag {i} is not covered by any reader")));
        }
        Ok(MultiReader { coverage })
    }

    pub fn readers(&self) -> usize {
        self.coverage.len()
    }
}

impl AirChannel for MultiReader {
    fn sense(&self, tags: &[TagState], family: &HashFamily) -> Result<BitArray> {
        let frames: Vec<BitArray> = self
            .coverage
            .iter()
            .map(|set| frame_over(set.iter().map(|&i| &tags[i]), family))
            .collect();
        merge_reader_frames(&frames)
    }
}

/// `1 - prod_w (s1_w / f_w)^(M R_w)` over the Phase 2 rounds in `logs`.
pub fn observed_reliability(logs: &[RoundLog], big_m: u64) -> f64 {
    let log_fail: f64 = logs
        .iter()
        .filter(|l| l.phase == 2)
        .map(|l| {
            let density = l.ones_count as f64 / l.filter_length as f64;
            big_m as f64 * l.hashes as f64 * density.ln()
        })
        .sum();
    (-log_fail.exp_m1()).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phase2Config {
    pub w_rounds: u32,
    pub r_per_round: u16,
    pub f_w: u32,
    pub alpha: f64,
    pub big_m: u64,
    /// Append frames after `W` quiet rounds until observed reliability reaches `alpha`.
    pub enforce: bool,
}

impl Phase2Config {
    pub fn from_params(p: &ProtocolParams, alpha: f64, big_m: u64) -> Result<Self> {
        Ok(Phase2Config {
            w_rounds: p.w_rounds,
            r_per_round: u16::try_from(p.r_per_round)
                .map_err(|_| crate::error::invalid("r_per_round exceeds u16"))?,
            f_w: p.f_w,
            alpha,
            big_m,
            enforce: true,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionOutcome {
    pub detected: bool,
    /// Global bit-slot index (Phase 1 bits plus Phase 2 slots) of the first
    /// slot exposing a missing tag.
    pub detection_slot: Option<u64>,
    /// Time until that slot ends.
    pub detection_time: Option<f64>,
    /// Phase 2 round (1-based) in which detection happened.
    pub detection_round: Option<u32>,
    pub phase1_rounds: u32,
    pub phase2_rounds: u32,
    /// Phase 2 rounds appended by reliability enforcement.
    pub extra_rounds: u32,
    pub phase1_time: f64,
    /// Full execution time, `sum l_j t_r + (Phase 2 slots) t_t`.
    pub total_time: f64,
    pub survivors: u64,
    /// Phase 2 slot index (1-based, across frames) of the detection.
    pub phase2_slot: Option<u64>,
}

impl DetectionOutcome {
    /// Detection time if detected, else the full execution time.
    pub fn time(&self) -> f64 {
        self.detection_time.unwrap_or(self.total_time)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phase2Outcome {
    pub logs: Vec<RoundLog>,
    pub detected_round: Option<u32>,
    /// 1-based slot index across all Phase 2 frames.
    pub detection_slot: Option<u64>,
    pub rounds: u32,
    pub extra_rounds: u32,
    pub slots: u64,
}

/// Runs Phase 2 against the currently active tags.
///
/// # Errors
///
/// [`Error::Saturation`] when enforcement reaches `10 W` rounds without the
/// observed reliability meeting `alpha` and without a detection.
///
/// # Panics
///
/// Panics if a reported missing ID belongs to an active responder.
pub fn run_phase2<C: AirChannel + ?Sized>(
    channel: &C,
    expected: &[TagId],
    tags: &[TagState],
    cfg: &Phase2Config,
    seeds: SeedStream,
) -> Result<Phase2Outcome> {
    if cfg.w_rounds == 0 {
        return Err(crate::error::invalid("w_rounds must be positive"));
    }
    let present: HashSet<TagId> = tags
        .iter()
        .filter(|t| t.active && t.kind == TagKind::ExpectedPresent)
        .map(|t| t.id)
        .collect();
    let cap = cfg.w_rounds.saturating_mul(ENFORCEMENT_CAP_FACTOR);
    let mut logs = Vec::new();
    let mut slots = 0u64;
    let mut round = 0u32;
    loop {
        let seed = seeds.seed(round);
        let family = HashFamily::new(cfg.r_per_round, seed, cfg.f_w)?;
        let frame = encode_frame(channel.sense(tags, &family)?, family)?;
        let (missing, offset) = decode(&frame, expected);
        for &pos in &missing {
            assert!(
                !present.contains(&expected[pos as usize]),
                "responding tag {} reported missing",
                expected[pos as usize]
            );
        }
        logs.push(RoundLog {
            phase: 2,
            round_index: round,
            seed,
            filter_length: cfg.f_w,
            hashes: cfg.r_per_round,
            ones_count: frame.ones(),
            deactivated: 0,
            missing_found: missing,
            detection_offset: offset,
            elapsed_bits: 0.0,
            reliability: None,
        });
        let rel = observed_reliability(&logs, cfg.big_m);
        if let Some(last) = logs.last_mut() {
            last.reliability = Some(rel);
        }
        round += 1;

        if let Some(off) = offset {
            return Ok(Phase2Outcome {
                logs,
                detected_round: Some(round),
                detection_slot: Some(slots + off as u64),
                rounds: round,
                extra_rounds: round.saturating_sub(cfg.w_rounds),
                slots: slots + cfg.f_w as u64,
            });
        }
        slots += cfg.f_w as u64;
        if round < cfg.w_rounds {
            continue;
        }
        if !cfg.enforce || rel >= cfg.alpha {
            break;
        }
        if round >= cap {
            return Err(Error::Saturation {
                rounds: round,
                observed: rel,
                target: cfg.alpha,
            });
        }
    }
    Ok(Phase2Outcome {
        logs,
        detected_round: None,
        detection_slot: None,
        rounds: round,
        extra_rounds: round - cfg.w_rounds,
        slots,
    })
}

/// Expected positions failing `frame`, and the 1-based earliest slot at which
/// any of them maps to an empty slot.
fn decode(frame: &BloomVector, expected: &[TagId]) -> (Vec<u32>, Option<u32>) {
    let mut missing = Vec::new();
    let mut first: Option<usize> = None;
    for (pos, id) in expected.iter().enumerate() {
        if let Some(z) = frame.first_zero(id) {
            missing.push(pos as u32);
            first = Some(first.map_or(z, |f| f.min(z)));
        }
    }
    (missing, first.map(|z| z as u32 + 1))
}

/// Everything a single execution produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Execution {
    pub outcome: DetectionOutcome,
    pub logs: Vec<RoundLog>,
}

/// Inputs shared by both phases of one execution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExecConfig {
    pub alpha: f64,
    pub big_m: u64,
    pub timing: SlotTiming,
    /// Root of the per-execution seed tree.
    pub seed: u64,
    pub enforce: bool,
}

/// Seeds for Phase 1 rounds under execution seed `seed`.
pub fn phase1_seeds(seed: u64) -> SeedStream {
    SeedStream::new(derive(seed, &[stream::PHASE1]))
}

pub fn phase2_seeds(seed: u64) -> SeedStream {
    SeedStream::new(derive(seed, &[stream::PHASE2]))
}

/// Runs both phases with tuned parameters.
pub fn execute<C: AirChannel + ?Sized>(
    channel: &C,
    expected: &[TagId],
    tags: &mut [TagState],
    params: &ProtocolParams,
    cfg: &ExecConfig,
) -> Result<Execution> {
    let s1 = phase1_seeds(cfg.seed);
    let rounds: Vec<Phase1Round> = params
        .phase1_rounds
        .iter()
        .enumerate()
        .map(|(j, r)| Phase1Round {
            k: r.k,
            l: r.l,
            seed: s1.seed(j as u32),
        })
        .collect();
    let mut p2 = Phase2Config::from_params(params, cfg.alpha, cfg.big_m)?;
    p2.enforce = cfg.enforce;
    execute_rounds(channel, expected, tags, &rounds, &p2, phase2_seeds(cfg.seed), cfg.timing)
}

/// Runs both phases with explicit Phase 1 rounds and Phase 2 configuration.
pub fn execute_rounds<C: AirChannel + ?Sized>(
    channel: &C,
    expected: &[TagId],
    tags: &mut [TagState],
    rounds: &[Phase1Round],
    p2: &Phase2Config,
    p2_seeds: SeedStream,
    timing: SlotTiming,
) -> Result<Execution> {
    let p1 = run_phase1(expected, tags, rounds, timing)?;
    let mut ph2 = run_phase2(channel, expected, tags, p2, p2_seeds)?;
    for log in &mut ph2.logs {
        log.elapsed_bits = log.filter_length as f64 * timing.t_t;
    }
    let p1_bits: u64 = rounds.iter().map(|r| r.l as u64).sum();
    let total_time = p1.elapsed + ph2.slots as f64 * timing.t_t;
    let outcome = DetectionOutcome {
        detected: ph2.detected_round.is_some(),
        detection_slot: ph2.detection_slot.map(|s| p1_bits + s),
        detection_time: ph2.detection_slot.map(|s| p1.elapsed + s as f64 * timing.t_t),
        detection_round: ph2.detected_round,
        phase1_rounds: rounds.len() as u32,
        phase2_rounds: ph2.rounds,
        extra_rounds: ph2.extra_rounds,
        phase1_time: p1.elapsed,
        total_time,
        survivors: p1.unexpected_survivors,
        phase2_slot: ph2.detection_slot,
    };
    let mut logs = p1.logs;
    logs.extend(ph2.logs);
    Ok(Execution { outcome, logs })
}
