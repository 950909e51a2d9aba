//! Hash puzzles: an h-hard puzzle asks for `ceil(C·ln μ)` distinct nonces whose
//! SHA-256 digest, read as a 256-bit integer, falls below `τ(h)·2^256`.
//!
//! The simulator never hashes; it charges [`abstract_cost`]. Real solving is
//! used by the bench subcommand and by tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashSet;
use std::fmt;

/// Difficulties above this are clamped before verification. Ledgers still
/// charge the uncapped value.
pub const MAX_VERIFY_DIFFICULTY: u64 = 1 << 31;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PuzzleError {
    #[error("invalid puzzle parameters: {0}")]
    InvalidParams(String),
    #[error("difficulty must be at least 1")]
    ZeroDifficulty,
    #[error("puzzle key must be nonempty")]
    EmptyKey,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PuzzleParams {
    /// Hash evaluations a good ID performs per round.
    pub mu: u64,
    pub delta: f64,
    /// Solution-count multiplier: a puzzle needs `ceil(cap_c · ln mu)` solutions.
    pub cap_c: f64,
    pub hash_bits: u32,
}

impl Default for PuzzleParams {
    fn default() -> Self {
        PuzzleParams { mu: 1 << 16, delta: 0.1, cap_c: 4.0, hash_bits: 256 }
    }
}

impl PuzzleParams {
    pub fn validate(&self) -> Result<(), PuzzleError> {
        let bad = |m: &str| Err(PuzzleError::InvalidParams(m.to_string()));
        if self.mu < 1 << 10 {
            return bad("mu must be at least 2^10");
        }
        if !(self.delta > 0.0 && self.delta < 0.5) {
            return bad("delta must lie in (0, 1/2)");
        }
        if !(self.cap_c >= 1.0) || self.cap_c * (self.mu as f64).ln() < 1.0 {
            return bad("cap_c must be at least 1 with cap_c·ln(mu) ≥ 1");
        }
        if self.hash_bits != 256 {
            return bad("only 256-bit hashes are supported");
        }
        Ok(())
    }

    /// Number of nonces a solution must contain.
    pub fn required_solutions(&self) -> usize {
        (self.cap_c * (self.mu as f64).ln()).ceil() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PuzzleSeed {
    /// Entrance puzzles bind to the solver's claimed timestamp (seconds).
    Timestamp(i64),
    /// Purge puzzles bind to the committee's 256-bit random string.
    Random([u8; 32]),
}

impl PuzzleSeed {
    fn tag(&self) -> u8 {
        match self {
            PuzzleSeed::Timestamp(_) => 0x01,
            PuzzleSeed::Random(_) => 0x02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PuzzleKind {
    Entrance,
    Purge,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PuzzleSpec {
    pub difficulty: u64,
    pub key: Vec<u8>,
    pub seed: PuzzleSeed,
}

impl PuzzleSpec {
    pub fn entrance(difficulty: u64, key: impl Into<Vec<u8>>, timestamp: i64) -> Self {
        PuzzleSpec { difficulty, key: key.into(), seed: PuzzleSeed::Timestamp(timestamp) }
    }

    pub fn purge(difficulty: u64, key: impl Into<Vec<u8>>, random: [u8; 32]) -> Self {
        PuzzleSpec { difficulty, key: key.into(), seed: PuzzleSeed::Random(random) }
    }

    pub fn kind(&self) -> PuzzleKind {
        match self.seed {
            PuzzleSeed::Timestamp(_) => PuzzleKind::Entrance,
            PuzzleSeed::Random(_) => PuzzleKind::Purge,
        }
    }

    fn check(&self) -> Result<(), PuzzleError> {
        if self.difficulty == 0 {
            return Err(PuzzleError::ZeroDifficulty);
        }
        if self.key.is_empty() {
            return Err(PuzzleError::EmptyKey);
        }
        Ok(())
    }
}

/// A certificate: every hashed input is `tag || key || nonce || seed`, so the
/// key and seed are carried once alongside the nonces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PuzzleSolution {
    pub key: Vec<u8>,
    pub seed: PuzzleSeed,
    pub nonces: Vec<u64>,
    /// Hash evaluations spent finding the nonces.
    pub evaluations: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SolveOutcome {
    Solved(PuzzleSolution),
    BudgetExhausted { evaluations: u64, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    WrongCount,
    AboveThreshold,
    KeyMismatch,
    SeedMismatch,
    StaleTimestamp,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RejectReason::WrongCount => "wrong-count",
            RejectReason::AboveThreshold => "above-threshold",
            RejectReason::KeyMismatch => "key-mismatch",
            RejectReason::SeedMismatch => "seed-mismatch",
            RejectReason::StaleTimestamp => "stale-timestamp",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    Reject(RejectReason),
}

/// `τ(h) = C·ln μ / (h·(1−δ)·μ)`, so that expected total work is `h(1−δ)μ`.
pub fn threshold(params: &PuzzleParams, h: u64) -> Result<f64, PuzzleError> {
    params.validate()?;
    if h == 0 {
        return Err(PuzzleError::ZeroDifficulty);
    }
    let mu = params.mu as f64;
    Ok(params.cap_c * mu.ln() / (h as f64 * (1.0 - params.delta) * mu))
}

/// Cost units charged for a difficulty-`h` puzzle.
pub fn abstract_cost(h: u64) -> Result<u64, PuzzleError> {
    if h == 0 {
        Err(PuzzleError::ZeroDifficulty)
    } else {
        Ok(h)
    }
}

/// Maps a real threshold in (0, 1) onto a big-endian 256-bit bound.
pub fn target_bytes(tau: f64) -> [u8; 32] {
    if tau >= 1.0 {
        return [0xff; 32];
    }
    let mut out = [0u8; 32];
    if tau <= 0.0 || !tau.is_finite() {
        return out;
    }
    let bits = tau.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i32;
    let frac = bits & ((1u64 << 52) - 1);
    let (mant, e) = if exp == 0 { (frac, -1074) } else { (frac | (1 << 52), exp - 1075) };
    // value = mant · 2^e; scaled by 2^256 the lowest mantissa bit sits at `shift`.
    let shift = e + 256;
    let mut limbs = [0u64; 4];
    if shift >= 0 {
        let (word, bit) = ((shift / 64) as usize, (shift % 64) as u32);
        if word < 4 {
            limbs[word] |= mant << bit;
            if bit > 0 && word + 1 < 4 {
                limbs[word + 1] |= mant >> (64 - bit);
            }
        }
    } else if -shift < 64 {
        limbs[0] = mant >> (-shift);
    }
    for (i, limb) in limbs.iter().rev().enumerate() {
        out[i * 8..i * 8 + 8].copy_from_slice(&limb.to_be_bytes());
    }
    out
}

fn digest(key: &[u8], nonce: u64, seed: &PuzzleSeed) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update([seed.tag()]);
    h.update(key);
    h.update(nonce.to_be_bytes());
    match seed {
        PuzzleSeed::Timestamp(t) => h.update(t.to_be_bytes()),
        PuzzleSeed::Random(r) => h.update(r),
    }
    let out = h.finalize();
    let mut bytes = [0u8; 32];
    bytes.copy_from_slice(&out);
    bytes
}

/// True when the hashed input for `nonce` lands below the target.
pub fn nonce_passes(key: &[u8], nonce: u64, seed: &PuzzleSeed, target: &[u8; 32]) -> bool {
    digest(key, nonce, seed) < *target
}

/// Scans nonces from a seeded offset until enough pass, or `max_evaluations`
/// is reached.
pub fn solve_bounded(
    spec: &PuzzleSpec,
    params: &PuzzleParams,
    rng_seed: u64,
    max_evaluations: Option<u64>,
) -> Result<SolveOutcome, PuzzleError> {
    spec.check()?;
    let target = target_bytes(threshold(params, spec.difficulty.min(MAX_VERIFY_DIFFICULTY))?);
    let need = params.required_solutions();
    let mut nonce: u64 = ChaCha8Rng::seed_from_u64(rng_seed).random();
    let mut nonces = Vec::with_capacity(need);
    let mut evaluations = 0u64;
    while nonces.len() < need {
        if max_evaluations.is_some_and(|m| evaluations >= m) {
            return Ok(SolveOutcome::BudgetExhausted { evaluations, found: nonces.len() });
        }
        evaluations += 1;
        if nonce_passes(&spec.key, nonce, &spec.seed, &target) {
            nonces.push(nonce);
        }
        nonce = nonce.wrapping_add(1);
    }
    Ok(SolveOutcome::Solved(PuzzleSolution {
        key: spec.key.clone(),
        seed: spec.seed.clone(),
        nonces,
        evaluations,
    }))
}

pub fn solve(spec: &PuzzleSpec, params: &PuzzleParams, rng_seed: u64) -> Result<PuzzleSolution, PuzzleError> {
    match solve_bounded(spec, params, rng_seed, None)? {
        SolveOutcome::Solved(s) => Ok(s),
        SolveOutcome::BudgetExhausted { .. } => unreachable!("unbounded solve cannot exhaust"),
    }
}

pub fn verify(spec: &PuzzleSpec, sol: &PuzzleSolution, params: &PuzzleParams, now: i64, margin: i64) -> Verdict {
    use RejectReason::*;
    let distinct: HashSet<u64> = sol.nonces.iter().copied().collect();
    if sol.nonces.len() != params.required_solutions() || distinct.len() != sol.nonces.len() {
        return Verdict::Reject(WrongCount);
    }
    if sol.key != spec.key {
        return Verdict::Reject(KeyMismatch);
    }
    if sol.seed != spec.seed {
        return Verdict::Reject(SeedMismatch);
    }
    if let PuzzleSeed::Timestamp(t) = spec.seed {
        if (t - now).abs() > margin {
            return Verdict::Reject(StaleTimestamp);
        }
    }
    let Ok(tau) = threshold(params, spec.difficulty.clamp(1, MAX_VERIFY_DIFFICULTY)) else {
        return Verdict::Reject(AboveThreshold);
    };
    let target = target_bytes(tau);
    if sol.nonces.iter().all(|&n| nonce_passes(&spec.key, n, &spec.seed, &target)) {
        Verdict::Accept
    } else {
        Verdict::Reject(AboveThreshold)
    }
}
