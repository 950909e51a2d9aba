//! Membership bookkeeping shared by both committee protocols.
//!
//! Protocol code sees only labels. Ground truth (which IDs are bad) lives in
//! the label itself via [`BAD_BIT`], and only the harness reads it.

use indexmap::IndexSet;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub type Label = u64;

/// Harness-side marker for adversary-controlled IDs.
pub const BAD_BIT: Label = 1 << 63;

pub fn is_bad(label: Label) -> bool {
    label & BAD_BIT != 0
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StateError {
    #[error("invalid bootstrap parameters: {0}")]
    InvalidBootstrap(String),
    #[error("population of {population} cannot seat a committee of {size}")]
    PopulationTooSmall { population: usize, size: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Identity {
    pub label: Label,
    pub key: Vec<u8>,
    pub is_good: bool,
    pub join_time: f64,
}

impl Identity {
    pub fn new(label: Label, join_time: f64) -> Self {
        let mut key = b"id:".to_vec();
        key.extend_from_slice(&label.to_be_bytes());
        Identity { label, key, is_good: !is_bad(label), join_time }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    pub s0: Vec<Identity>,
    pub committee0: Vec<Label>,
    /// Initial good-join-rate estimate, IDs per second.
    pub j0: f64,
}

impl BootstrapResult {
    pub fn bad_count(&self) -> usize {
        self.s0.iter().filter(|id| !id.is_good).count()
    }
}

pub fn committee_size(n0: usize, c_comm: f64) -> usize {
    (c_comm * (n0 as f64).ln()).ceil().max(1.0) as usize
}

/// Trusted stand-in for the heavyweight initialization protocol: `n0` IDs,
/// `floor(α·n0)` of them bad, and a committee redrawn until it has a good
/// majority. Good IDs get labels `0..good`, bad IDs `BAD_BIT | 0..bad`.
pub fn bootstrap<R: Rng>(
    n0: usize,
    alpha: f64,
    init_duration: f64,
    c_comm: f64,
    rng: &mut R,
) -> Result<BootstrapResult, StateError> {
    let fail = |m: String| Err(StateError::InvalidBootstrap(m));
    if !(0.0..0.5).contains(&alpha) {
        return fail(format!("alpha {alpha} must lie in [0, 1/2)"));
    }
    if alpha > 0.0 && (n0 as f64) < 8.0 / alpha {
        return fail(format!("n0 = {n0} is below 8/alpha = {:.1}", 8.0 / alpha));
    }
    if n0 == 0 || !(init_duration > 0.0) {
        return fail("n0 and init_duration must be positive".into());
    }
    let size = committee_size(n0, c_comm);
    if size > n0 {
        return Err(StateError::PopulationTooSmall { population: n0, size });
    }
    let bad = (alpha * n0 as f64 + 1e-9).floor() as usize;
    let good = n0 - bad;
    let s0: Vec<Identity> = (0..good as Label)
        .chain((0..bad as Label).map(|b| b | BAD_BIT))
        .map(|l| Identity::new(l, 0.0))
        .collect();
    let mut committee0 = Vec::new();
    for _ in 0..10_000 {
        committee0 = index::sample(rng, n0, size).into_iter().map(|i| s0[i].label).collect();
        let bad_members = committee0.iter().filter(|&&l| is_bad(l)).count();
        if 2 * bad_members < size {
            break;
        }
    }
    Ok(BootstrapResult { s0, committee0, j0: n0 as f64 / init_duration })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JoinOutcome {
    Admitted,
    Duplicate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DepartOutcome {
    Removed { was_committee: bool },
    Unknown,
}

/// The committee's view of membership.
#[derive(Debug, Clone)]
pub struct SystemView {
    s_cur: IndexSet<Label>,
    s_prev: IndexSet<Label>,
    committee: IndexSet<Label>,
    pub iteration: u64,
    pub n_a: u64,
    pub n_d: u64,
    pub clock: f64,
    added_since_purge: usize,
    removed_since_purge: usize,
}

impl SystemView {
    pub fn new(initial: impl IntoIterator<Item = Label>, committee: impl IntoIterator<Item = Label>) -> Self {
        let s_cur: IndexSet<Label> = initial.into_iter().collect();
        SystemView {
            s_prev: s_cur.clone(),
            committee: committee.into_iter().filter(|l| s_cur.contains(l)).collect(),
            s_cur,
            iteration: 1,
            n_a: 0,
            n_d: 0,
            clock: 0.0,
            added_since_purge: 0,
            removed_since_purge: 0,
        }
    }

    pub fn from_bootstrap(b: &BootstrapResult) -> Self {
        Self::new(b.s0.iter().map(|id| id.label), b.committee0.iter().copied())
    }

    pub fn s_cur(&self) -> &IndexSet<Label> {
        &self.s_cur
    }

    pub fn s_prev(&self) -> &IndexSet<Label> {
        &self.s_prev
    }

    pub fn committee(&self) -> &IndexSet<Label> {
        &self.committee
    }

    pub fn len(&self) -> usize {
        self.s_cur.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s_cur.is_empty()
    }

    pub fn prev_len(&self) -> usize {
        self.s_prev.len()
    }

    pub fn contains(&self, label: Label) -> bool {
        self.s_cur.contains(&label)
    }

    /// `|s_cur Δ s_prev|`, maintained incrementally.
    pub fn sym_diff(&self) -> usize {
        self.added_since_purge + self.removed_since_purge
    }

    pub fn apply_join(&mut self, label: Label, now: f64) -> JoinOutcome {
        self.clock = self.clock.max(now);
        if !self.s_cur.insert(label) {
            return JoinOutcome::Duplicate;
        }
        self.n_a += 1;
        if self.s_prev.contains(&label) {
            self.removed_since_purge -= 1;
        } else {
            self.added_since_purge += 1;
        }
        JoinOutcome::Admitted
    }

    /// Announced departure: leaves `s_cur` and counts toward `n_d`.
    pub fn apply_depart(&mut self, label: Label, now: f64) -> DepartOutcome {
        self.clock = self.clock.max(now);
        match self.remove(label) {
            Some(was_committee) => {
                self.n_d += 1;
                DepartOutcome::Removed { was_committee }
            }
            None => DepartOutcome::Unknown,
        }
    }

    /// Removal without a departure announcement, e.g. a failed purge response.
    pub fn evict(&mut self, label: Label) -> bool {
        self.remove(label).is_some()
    }

    fn remove(&mut self, label: Label) -> Option<bool> {
        if !self.s_cur.swap_remove(&label) {
            return None;
        }
        if self.s_prev.contains(&label) {
            self.removed_since_purge += 1;
        } else {
            self.added_since_purge -= 1;
        }
        Some(self.committee.swap_remove(&label))
    }

    /// Ends the iteration after purge evictions: snapshots `s_prev`, resets the
    /// counters and seats a fresh committee drawn from the survivors.
    pub fn complete_purge<R: Rng>(&mut self, size: usize, rng: &mut R) -> Result<(), StateError> {
        self.s_prev = self.s_cur.clone();
        self.added_since_purge = 0;
        self.removed_since_purge = 0;
        self.n_a = 0;
        self.n_d = 0;
        self.iteration += 1;
        let committee = sample_committee(self, size, rng);
        self.committee = committee.as_ref().map(|c| c.iter().copied().collect()).unwrap_or_default();
        committee.map(|_| ())
    }

    /// Advances the iteration counter over `count` purges that left the
    /// membership unchanged.
    pub fn skip_identical_purges(&mut self, count: u64) {
        self.iteration += count;
    }
}

/// Uniform sample without replacement from `s_cur`.
pub fn sample_committee<R: Rng>(view: &SystemView, size: usize, rng: &mut R) -> Result<Vec<Label>, StateError> {
    let population = view.s_cur.len();
    if population < size {
        return Err(StateError::PopulationTooSmall { population, size });
    }
    Ok(index::sample(rng, population, size).into_iter().map(|i| view.s_cur[i]).collect())
}
