//! CCom: flat difficulty-1 entrance puzzles and a purge once joins plus
//! departures reach a fixed fraction of the last post-purge membership.

use crate::puzzle::{self, PuzzleParams, PuzzleSpec, Verdict};
use crate::state::{is_bad, JoinOutcome, Label, StateError, SystemView};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Slack when comparing churn counts against a real-valued trigger.
pub(crate) const TRIGGER_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CComConfig {
    pub purge_fraction: f64,
    pub alpha: f64,
    /// Use `2α/(1+3α)` in place of `purge_fraction`.
    pub generalized: bool,
}

impl Default for CComConfig {
    fn default() -> Self {
        CComConfig { purge_fraction: 1.0 / 3.0, alpha: 1.0 / 18.0, generalized: false }
    }
}

impl CComConfig {
    pub fn fraction(&self) -> f64 {
        if self.generalized {
            generalized_fraction(self.alpha)
        } else {
            self.purge_fraction
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.generalized && !(self.alpha > 0.0 && self.alpha < 1.0 / 6.0) {
            return Err(format!("generalized trigger needs 0 < alpha < 1/6, got {}", self.alpha));
        }
        let f = self.fraction();
        if !(f > 0.0 && f < 1.0) {
            return Err(format!("purge fraction {f} must lie in (0, 1)"));
        }
        Ok(())
    }
}

pub fn generalized_fraction(alpha: f64) -> f64 {
    2.0 * alpha / (1.0 + 3.0 * alpha)
}

/// Smallest churn count satisfying `count ≥ fraction · prev`.
pub fn trigger_count(fraction: f64, prev: usize) -> u64 {
    (fraction * prev as f64 - TRIGGER_EPS).ceil().max(0.0) as u64
}

/// Evidence a joiner attaches. The simulator uses `Abstract`, which the
/// cost model trusts; `Puzzle` is checked for real.
#[derive(Debug, Clone)]
pub enum JoinProof<'a> {
    Abstract,
    Puzzle { solution: &'a puzzle::PuzzleSolution, params: &'a PuzzleParams, margin: i64 },
}

impl JoinProof<'_> {
    pub(crate) fn check(&self, key: &[u8], difficulty: u64, now: f64) -> Result<(), JoinError> {
        match self {
            JoinProof::Abstract => Ok(()),
            JoinProof::Puzzle { solution, params, margin } => {
                let claimed = match solution.seed {
                    puzzle::PuzzleSeed::Timestamp(t) => t,
                    puzzle::PuzzleSeed::Random(_) => return Err(JoinError::InvalidSolution("purge seed".into())),
                };
                let capped = difficulty.min(puzzle::MAX_VERIFY_DIFFICULTY);
                let spec = PuzzleSpec::entrance(capped, key.to_vec(), claimed);
                match puzzle::verify(&spec, solution, params, now.floor() as i64, *margin) {
                    Verdict::Accept => Ok(()),
                    Verdict::Reject(r) => Err(JoinError::InvalidSolution(r.to_string())),
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum JoinError {
    #[error("entrance solution rejected: {0}")]
    InvalidSolution(String),
    #[error("label already present")]
    Duplicate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JoinReceipt {
    pub difficulty: u64,
    pub admitted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PurgeReport {
    pub responders: usize,
    pub evicted: Vec<Label>,
    pub committee_error: Option<StateError>,
}

pub fn entrance_key(label: Label) -> Vec<u8> {
    crate::state::Identity::new(label, 0.0).key
}

/// Runs the shared purge mechanics: evicts non-responders and rolls the
/// committee over.
pub(crate) fn run_purge<R: Rng>(
    view: &mut SystemView,
    mut responds: impl FnMut(Label) -> bool,
    committee_size: usize,
    rng: &mut R,
) -> PurgeReport {
    let evicted: Vec<Label> = view.s_cur().iter().copied().filter(|&l| !responds(l)).collect();
    for &l in &evicted {
        view.evict(l);
    }
    let responders = view.len();
    let committee_error = view.complete_purge(committee_size, rng).err();
    PurgeReport { responders, evicted, committee_error }
}

#[derive(Debug, Clone)]
pub struct CCom {
    pub view: SystemView,
    pub config: CComConfig,
    pub committee_size: usize,
}

impl CCom {
    pub fn new(view: SystemView, config: CComConfig, committee_size: usize) -> Self {
        CCom { view, config, committee_size }
    }

    pub fn on_join(&mut self, label: Label, proof: &JoinProof<'_>, now: f64) -> Result<JoinReceipt, JoinError> {
        proof.check(&entrance_key(label), 1, now)?;
        match self.view.apply_join(label, now) {
            JoinOutcome::Admitted => Ok(JoinReceipt { difficulty: 1, admitted: true }),
            JoinOutcome::Duplicate => Err(JoinError::Duplicate),
        }
    }

    pub fn trigger(&self) -> u64 {
        trigger_count(self.config.fraction(), self.view.prev_len())
    }

    pub fn purge_due(&self) -> bool {
        self.view.n_a + self.view.n_d >= self.trigger()
    }

    /// Admissions still possible before the purge condition holds.
    pub fn headroom(&self) -> u64 {
        self.trigger().saturating_sub(self.view.n_a + self.view.n_d)
    }

    pub fn maybe_purge<R: Rng>(&mut self, responds: impl FnMut(Label) -> bool, rng: &mut R) -> Option<PurgeReport> {
        self.purge_due().then(|| run_purge(&mut self.view, responds, self.committee_size, rng))
    }
}

/// Default purge response: good IDs always answer, bad ones never do.
pub fn good_only(label: Label) -> bool {
    !is_bad(label)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::puzzle::{solve, PuzzleSpec};
    use crate::state::BAD_BIT;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ccom(n: u64) -> CCom {
        CCom::new(SystemView::new(0..n, 0..3), CComConfig::default(), 3)
    }

    #[test]
    fn purge_fires_at_one_third_of_twelve() {
        let mut c = ccom(12);
        for k in 0..3 {
            c.on_join(100 + k, &JoinProof::Abstract, k as f64).unwrap();
            assert!(!c.purge_due());
        }
        c.on_join(200, &JoinProof::Abstract, 4.0).unwrap();
        assert!(c.purge_due());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let report = c.maybe_purge(good_only, &mut rng).unwrap();
        assert_eq!(report.responders, 16);
        assert_eq!((c.view.n_a, c.view.iteration, c.view.prev_len()), (0, 2, 16));
    }

    #[test]
    fn generalized_fraction_at_one_eighteenth() {
        let f = generalized_fraction(1.0 / 18.0);
        assert!((f - 2.0 / 21.0).abs() < 1e-15);
        let cfg = CComConfig { generalized: true, ..CComConfig::default() };
        assert_eq!(cfg.fraction(), f);
        assert!(CComConfig { alpha: 0.2, generalized: true, ..cfg }.validate().is_err());
    }

    #[test]
    fn unpaid_bad_ids_are_purged() {
        let mut c = ccom(9);
        for b in 0..3 {
            c.on_join(b | BAD_BIT, &JoinProof::Abstract, 1.0).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let report = c.maybe_purge(good_only, &mut rng).unwrap();
        assert_eq!(report.evicted.len(), 3);
        assert!(c.view.s_cur().iter().all(|&l| !is_bad(l)));
    }

    #[test]
    fn real_entrance_puzzles_are_checked() {
        let params = PuzzleParams { mu: 1 << 10, delta: 0.1, cap_c: 1.0, hash_bits: 256 };
        let mut c = ccom(12);
        let label = 500;
        let spec = PuzzleSpec::entrance(1, entrance_key(label), 40);
        let sol = solve(&spec, &params, 7).unwrap();
        let proof = JoinProof::Puzzle { solution: &sol, params: &params, margin: 2 };
        assert!(matches!(c.on_join(label, &proof, 60.0), Err(JoinError::InvalidSolution(_))));
        assert_eq!(c.view.len(), 12);
        let r = c.on_join(label, &proof, 41.0).unwrap();
        assert!(r.admitted);
        assert!(matches!(c.on_join(label, &proof, 41.0), Err(JoinError::Duplicate)));
    }

    #[test]
    fn headroom_counts_down() {
        let mut c = ccom(12);
        assert_eq!(c.headroom(), 4);
        c.view.apply_depart(0, 1.0);
        assert_eq!(c.headroom(), 3);
    }
}
