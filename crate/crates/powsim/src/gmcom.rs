//! GMCom: entrance difficulty tracks how many IDs joined within the last
//! `1/J̃` seconds, where `J̃` is a membership-turnover estimate of the good
//! join rate. Purges fire at 1/11 churn, optionally reshaped by three
//! heuristics.

use crate::ccom::{run_purge, trigger_count, JoinError, JoinProof, JoinReceipt, PurgeReport};
use crate::churn::AssumptionConstants;
use crate::state::{is_bad, JoinOutcome, Label, SystemView};
use indexmap::IndexSet;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{HashSet, VecDeque};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Heuristics {
    /// Trigger on `|s_cur Δ s_prev|` instead of `n_a + n_d`.
    #[serde(default)]
    pub h1_symmetric_diff: bool,
    /// Hold the purge while a certified bad-fraction bound stays below 1/2.
    #[serde(default)]
    pub h2_bad_bound: bool,
    /// Screen joiners with an imperfect Sybil detector.
    #[serde(default)]
    pub h3_detector: bool,
}

impl Heuristics {
    pub const NONE: Heuristics = Heuristics { h1_symmetric_diff: false, h2_bad_bound: false, h3_detector: false };
    pub const GMCH1: Heuristics = Heuristics { h1_symmetric_diff: true, h2_bad_bound: true, h3_detector: false };
    pub const GMCH2: Heuristics = Heuristics { h1_symmetric_diff: true, h2_bad_bound: true, h3_detector: true };
}

/// Which joins the entrance window counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowScope {
    /// Every admitted join in the last `1/J̃` seconds.
    #[default]
    Sliding,
    /// Only joins of the current iteration.
    Iteration,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GMComConfig {
    pub purge_fraction: f64,
    pub alpha: f64,
    pub heuristics: Heuristics,
    pub detector_accuracy: f64,
    pub window_scope: WindowScope,
    /// Churn constants used by the bad-fraction bound.
    pub assumptions: AssumptionConstants,
    /// Largest fraction of IDs that may depart in one round.
    pub depart_cap: f64,
}

impl Default for GMComConfig {
    fn default() -> Self {
        GMComConfig {
            purge_fraction: 1.0 / 11.0,
            alpha: 1.0 / 18.0,
            heuristics: Heuristics::NONE,
            detector_accuracy: 0.98,
            window_scope: WindowScope::Sliding,
            assumptions: AssumptionConstants::BITCOIN,
            depart_cap: 0.01,
        }
    }
}

impl GMComConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.purge_fraction > 0.0 && self.purge_fraction < 1.0) {
            return Err(format!("purge fraction {} must lie in (0, 1)", self.purge_fraction));
        }
        if !(0.0..=1.0 / 18.0 + 1e-12).contains(&self.alpha) {
            return Err(format!("GMCom requires alpha ≤ 1/18, got {}", self.alpha));
        }
        if self.heuristics.h3_detector && !(self.detector_accuracy > 0.0 && self.detector_accuracy <= 1.0) {
            return Err(format!("detector accuracy {} must lie in (0, 1]", self.detector_accuracy));
        }
        self.assumptions.validate()
    }
}

/// Tracks `S_est`, the membership at the last interval boundary, and the
/// length of the last closed interval.
#[derive(Debug, Clone)]
pub struct JoinRateEstimator {
    s_est: HashSet<Label>,
    pub interval_start: f64,
    pub l_est: Option<f64>,
    pub intervals_closed: u64,
    fresh: usize,
}

impl JoinRateEstimator {
    pub fn new<'a>(initial: impl IntoIterator<Item = &'a Label>, start: f64) -> Self {
        JoinRateEstimator {
            s_est: initial.into_iter().copied().collect(),
            interval_start: start,
            l_est: None,
            intervals_closed: 0,
            fresh: 0,
        }
    }

    /// `|s_cur − s_est|` as maintained by [`note_added`](Self::note_added) and
    /// [`note_removed`](Self::note_removed).
    pub fn fresh(&self) -> usize {
        self.fresh
    }

    pub fn note_added(&mut self, label: Label) {
        if !self.s_est.contains(&label) {
            self.fresh += 1;
        }
    }

    pub fn note_removed(&mut self, label: Label) {
        if !self.s_est.contains(&label) {
            self.fresh -= 1;
        }
    }

    /// Closes the interval once `|s_cur − s_est| ≥ (3/5)|s_cur|`.
    pub fn check(&mut self, s_cur: &IndexSet<Label>, now: f64) -> bool {
        if s_cur.is_empty() || 5 * self.fresh < 3 * s_cur.len() {
            return false;
        }
        self.close(s_cur, now);
        true
    }

    fn close(&mut self, s_cur: &IndexSet<Label>, now: f64) {
        self.l_est = Some(now - self.interval_start);
        self.interval_start = now;
        self.s_est = s_cur.iter().copied().collect();
        self.fresh = 0;
        self.intervals_closed += 1;
    }

    /// Recounts the set difference from scratch, then applies the boundary
    /// rule. Equivalent to the incremental path.
    pub fn on_event(&mut self, s_cur: &IndexSet<Label>, now: f64) -> bool {
        self.fresh = s_cur.iter().filter(|l| !self.s_est.contains(*l)).count();
        self.check(s_cur, now)
    }

    /// `|s_cur| / ℓ_est`, or `fallback` while no interval has closed.
    pub fn estimate(&self, s_cur_len: usize, fallback: f64) -> f64 {
        match self.l_est {
            Some(l) if l > 0.0 && s_cur_len > 0 => s_cur_len as f64 / l,
            _ => fallback,
        }
    }
}

/// Admitted join times, stored as `(time, cumulative count)` so any window
/// count is one binary search.
#[derive(Debug, Clone, Default)]
pub struct EntranceWindow {
    entries: VecDeque<(f64, u64)>,
    total: u64,
    /// Cumulative count of everything dropped from the front.
    pruned: u64,
    retention: f64,
}

impl EntranceWindow {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, t: f64, count: u64) {
        if count == 0 {
            return;
        }
        self.total += count;
        match self.entries.back_mut() {
            Some(last) if last.0 == t => last.1 = self.total,
            _ => self.entries.push_back((t, self.total)),
        }
    }

    /// Joins with `now − t < span`.
    pub fn count_within(&self, now: f64, span: f64) -> u64 {
        let idx = self.entries.partition_point(|&(t, _)| now - t >= span);
        let before = if idx == 0 { self.pruned } else { self.entries[idx - 1].1 };
        self.total - before
    }

    /// Drops entries older than every window length seen so far.
    pub fn prune(&mut self, now: f64, span: f64) {
        self.retention = self.retention.max(span);
        while let Some(&(t, cum)) = self.entries.front() {
            if now - t >= self.retention {
                self.pruned = cum;
                self.entries.pop_front();
            } else {
                break;
            }
        }
    }

    pub fn clear(&mut self) {
        self.pruned = self.total;
        self.entries.clear();
    }
}

/// `1 + #{t in window : now − t < 1/J̃}`; the `+1` is the joiner itself.
pub fn entrance_difficulty(window: &EntranceWindow, j_tilde: f64, now: f64) -> u64 {
    1 + window.count_within(now, 1.0 / j_tilde)
}

/// Black-box Sybil detector: flags a bad ID with probability `accuracy` and
/// a good one with probability `1 − accuracy`.
pub fn detector_flags<R: Rng>(label: Label, accuracy: f64, rng: &mut R) -> bool {
    let correct = rng.random::<f64>() < accuracy;
    is_bad(label) == correct
}

#[derive(Debug, Clone)]
pub struct GMCom {
    pub view: SystemView,
    pub config: GMComConfig,
    pub committee_size: usize,
    pub estimator: JoinRateEstimator,
    pub window: EntranceWindow,
    pub j_tilde: f64,
    pub j0: f64,
    pub iteration_start: f64,
}

impl GMCom {
    pub fn new(view: SystemView, config: GMComConfig, committee_size: usize, j0: f64, start: f64) -> Self {
        let estimator = JoinRateEstimator::new(view.s_cur().iter(), start);
        GMCom {
            view,
            config,
            committee_size,
            estimator,
            window: EntranceWindow::new(),
            j_tilde: j0,
            j0,
            iteration_start: start,
        }
    }

    pub fn difficulty(&self, now: f64) -> u64 {
        entrance_difficulty(&self.window, self.j_tilde, now)
    }

    /// Charges the current difficulty, screens the joiner if the detector is
    /// on, and admits it. A screened-out joiner has still paid.
    pub fn on_join<R: Rng>(
        &mut self,
        label: Label,
        proof: &JoinProof<'_>,
        now: f64,
        rng: &mut R,
    ) -> Result<JoinReceipt, JoinError> {
        let difficulty = self.difficulty(now);
        proof.check(&crate::ccom::entrance_key(label), difficulty, now)?;
        if self.view.contains(label) {
            return Err(JoinError::Duplicate);
        }
        if self.config.heuristics.h3_detector && detector_flags(label, self.config.detector_accuracy, rng) {
            return Ok(JoinReceipt { difficulty, admitted: false });
        }
        let outcome = self.view.apply_join(label, now);
        debug_assert_eq!(outcome, JoinOutcome::Admitted);
        self.window.record(now, 1);
        self.estimator.note_added(label);
        self.estimator.check(self.view.s_cur(), now);
        Ok(JoinReceipt { difficulty, admitted: true })
    }

    /// Announced departure. Returns false for unknown labels.
    pub fn on_depart(&mut self, label: Label, now: f64) -> bool {
        match self.view.apply_depart(label, now) {
            crate::state::DepartOutcome::Removed { .. } => {
                self.estimator.note_removed(label);
                self.estimator.check(self.view.s_cur(), now);
                true
            }
            crate::state::DepartOutcome::Unknown => false,
        }
    }

    fn trigger_progress(&self) -> u64 {
        if self.config.heuristics.h1_symmetric_diff {
            self.view.sym_diff() as u64
        } else {
            self.view.n_a + self.view.n_d
        }
    }

    fn trigger(&self) -> u64 {
        trigger_count(self.config.purge_fraction, self.view.prev_len())
    }

    /// Pessimistic bad count after `extra` more admissions: the carried-in
    /// `α|S_prev|` plus every join this iteration beyond the good joins the
    /// estimate guarantees.
    pub fn bad_bound(&self, extra: u64, now: f64) -> f64 {
        let elapsed = (now - self.iteration_start).max(0.0);
        let certain_good = (elapsed * self.config.assumptions.je_low() * self.j_tilde).floor() as u64;
        let joins = self.view.n_a + extra;
        self.config.alpha * self.view.prev_len() as f64 + joins.saturating_sub(certain_good) as f64
    }

    /// True when one more admission after `extra` could push the certified
    /// bound to 1/2, allowing for a round of capped departures.
    pub fn at_risk_after(&self, extra: u64, now: f64) -> bool {
        let pop = self.view.len() as f64 + extra as f64 + 1.0;
        let departures = (self.config.depart_cap * (pop - 1.0)).ceil();
        2.0 * self.bad_bound(extra + 1, now) >= pop - departures
    }

    pub fn purge_due(&self, now: f64) -> bool {
        let triggered = self.trigger_progress() >= self.trigger();
        triggered && (!self.config.heuristics.h2_bad_bound || self.at_risk_after(0, now))
    }

    /// Admissions that can happen before the purge condition holds.
    pub fn headroom(&self, now: f64) -> u64 {
        let base = self.trigger().saturating_sub(self.trigger_progress());
        if !self.config.heuristics.h2_bad_bound || self.at_risk_after(base, now) {
            return base;
        }
        let (mut lo, mut hi) = (base, base.max(1));
        while !self.at_risk_after(hi, now) {
            lo = hi;
            hi = hi.saturating_mul(2);
        }
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if self.at_risk_after(mid, now) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }

    pub fn maybe_purge<R: Rng>(
        &mut self,
        responds: impl FnMut(Label) -> bool,
        now: f64,
        rng: &mut R,
    ) -> Option<PurgeReport> {
        if !self.purge_due(now) {
            return None;
        }
        Some(self.purge(responds, now, rng))
    }

    /// Purge mechanics followed by the join-rate refresh.
    pub fn purge<R: Rng>(&mut self, responds: impl FnMut(Label) -> bool, now: f64, rng: &mut R) -> PurgeReport {
        let report = run_purge(&mut self.view, responds, self.committee_size, rng);
        for &l in &report.evicted {
            self.estimator.note_removed(l);
        }
        self.estimator.check(self.view.s_cur(), now);
        self.j_tilde = self.estimator.estimate(self.view.len(), self.j_tilde);
        self.iteration_start = now;
        if self.config.window_scope == WindowScope::Iteration {
            self.window.clear();
        }
        self.window.prune(now, 1.0 / self.j_tilde);
        report
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ccom::good_only;
    use crate::state::BAD_BIT;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(s: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(s)
    }

    fn set(range: std::ops::Range<u64>) -> IndexSet<Label> {
        range.collect()
    }

    #[test]
    fn interval_closes_at_three_fifths() {
        let mut est = JoinRateEstimator::new(set(1..11).iter(), 0.0);
        let cur: IndexSet<Label> = set(1..25);
        assert!(!est.on_event(&cur, 5.0), "14 of 24 is below 3/5");
        let cur: IndexSet<Label> = set(1..26);
        assert!(est.on_event(&cur, 6.0), "15 ≥ (3/5)·25");
        assert_eq!(est.l_est, Some(6.0));
        assert_eq!(est.interval_start, 6.0);
    }

    #[test]
    fn shrinking_membership_does_not_close() {
        let mut est = JoinRateEstimator::new(set(1..11).iter(), 0.0);
        assert!(!est.on_event(&set(1..4), 1.0));
    }

    #[test]
    fn back_to_back_intervals_measure_the_gap() {
        let mut est = JoinRateEstimator::new(set(0..2).iter(), 0.0);
        assert!(est.on_event(&set(0..5), 2.0));
        assert!(est.on_event(&set(0..13), 9.5));
        assert_eq!(est.l_est, Some(7.5));
        assert_eq!(est.estimate(13, 1.0), 13.0 / 7.5);
        let fresh = JoinRateEstimator::new(set(0..2).iter(), 0.0);
        assert_eq!(fresh.estimate(13, 0.25), 0.25);
    }

    #[test]
    fn difficulty_counts_prior_joins_in_window() {
        let mut w = EntranceWindow::new();
        assert_eq!(entrance_difficulty(&w, 1.0, 10.0), 1);
        for t in [9.2, 9.5, 9.9] {
            w.record(t, 1);
        }
        assert_eq!(entrance_difficulty(&w, 1.0, 10.0), 4);
        let mut old = EntranceWindow::new();
        old.record(8.5, 1);
        assert_eq!(entrance_difficulty(&old, 1.0, 10.0), 1);
    }

    #[test]
    fn window_prune_keeps_counts_exact() {
        let mut w = EntranceWindow::new();
        for t in 0..100 {
            w.record(t as f64, 2);
        }
        w.prune(100.0, 10.0);
        assert_eq!(w.count_within(100.0, 10.0), 18);
        assert_eq!(w.count_within(100.0, 5.0), 8);
        w.record(100.0, 3);
        assert_eq!(w.count_within(100.0, 10.0), 21);
        w.clear();
        assert_eq!(w.count_within(100.0, 10.0), 0);
        w.record(101.0, 1);
        assert_eq!(w.count_within(101.0, 10.0), 1);
    }

    fn gm(n: u64, h: Heuristics) -> GMCom {
        let cfg = GMComConfig { heuristics: h, detector_accuracy: 1.0, ..GMComConfig::default() };
        GMCom::new(SystemView::new(0..n, 0..3), cfg, 3, 1.0, 0.0)
    }

    #[test]
    fn burst_spend_is_quadratic() {
        let mut g = gm(2000, Heuristics::NONE);
        let mut r = rng(1);
        let spend: u64 = (0..100)
            .map(|k| g.on_join(k | BAD_BIT, &JoinProof::Abstract, 50.0, &mut r).unwrap().difficulty)
            .sum();
        assert_eq!(spend, 100 * 101 / 2);
    }

    #[test]
    fn base_trigger_at_one_eleventh() {
        let mut g = gm(110, Heuristics::NONE);
        let mut r = rng(2);
        for k in 0..9 {
            g.on_join(1000 + k, &JoinProof::Abstract, k as f64, &mut r).unwrap();
        }
        assert!(!g.purge_due(9.0));
        assert_eq!(g.headroom(9.0), 1);
        g.on_join(2000, &JoinProof::Abstract, 9.5, &mut r).unwrap();
        assert!(g.purge_due(9.5));
    }

    #[test]
    fn symmetric_difference_ignores_flapping() {
        let mut base = gm(110, Heuristics::NONE);
        let mut h1 = gm(110, Heuristics { h1_symmetric_diff: true, ..Heuristics::NONE });
        let mut r = rng(3);
        for k in 0..10 {
            let t = k as f64;
            base.on_depart(7, t);
            base.on_join(7, &JoinProof::Abstract, t + 0.5, &mut r).unwrap();
            h1.on_depart(7, t);
            h1.on_join(7, &JoinProof::Abstract, t + 0.5, &mut r).unwrap();
        }
        assert!(base.purge_due(10.0));
        assert!(!h1.purge_due(10.0));
        assert!(h1.view.sym_diff() <= 2);
    }

    #[test]
    fn perfect_detector_admits_no_bad_ids() {
        let mut g = gm(200, Heuristics { h3_detector: true, ..Heuristics::NONE });
        let mut r = rng(4);
        for k in 0..50 {
            let rec = g.on_join(k | BAD_BIT, &JoinProof::Abstract, 1.0, &mut r).unwrap();
            assert!(!rec.admitted);
        }
        assert!(g.view.s_cur().iter().all(|&l| !is_bad(l)));
        assert!(g.on_join(999, &JoinProof::Abstract, 1.0, &mut r).unwrap().admitted);
    }

    #[test]
    fn bad_bound_delays_purge_until_risk() {
        let mut g = gm(110, Heuristics { h2_bad_bound: true, ..Heuristics::NONE });
        let mut r = rng(5);
        let mut admitted = 0u64;
        while !g.purge_due(1.0) {
            g.on_join(admitted | BAD_BIT, &JoinProof::Abstract, 1.0, &mut r).unwrap();
            admitted += 1;
        }
        assert!(admitted > 10, "h2 delays beyond the 1/11 trigger");
        let truth = admitted as f64 / g.view.len() as f64;
        assert!(truth < 0.5, "true bad fraction {truth}");
        let fresh = gm(110, Heuristics { h2_bad_bound: true, ..Heuristics::NONE });
        assert_eq!(fresh.headroom(1.0), admitted);
    }

    #[test]
    fn purge_refreshes_estimate() {
        let mut g = gm(10, Heuristics::NONE);
        let mut r = rng(6);
        for k in 0..15 {
            g.on_join(100 + k, &JoinProof::Abstract, 2.0 + k as f64 * 0.1, &mut r).unwrap();
        }
        assert!(g.estimator.intervals_closed >= 1);
        g.maybe_purge(good_only, 4.0, &mut r).unwrap();
        let l = g.estimator.l_est.unwrap();
        assert_eq!(g.j_tilde, g.view.len() as f64 / l);
    }

    proptest! {
        #[test]
        fn incremental_estimator_matches_recount(
            ops in proptest::collection::vec((any::<bool>(), 0u64..30), 1..150)
        ) {
            let mut cur: IndexSet<Label> = set(0..10);
            let mut inc = JoinRateEstimator::new(cur.iter(), 0.0);
            let mut naive = inc.clone();
            for (t, (join, l)) in ops.into_iter().enumerate() {
                let now = t as f64;
                if join {
                    if cur.insert(l) { inc.note_added(l); } else { continue; }
                } else if cur.swap_remove(&l) {
                    inc.note_removed(l);
                } else {
                    continue;
                }
                let a = inc.check(&cur, now);
                let b = naive.on_event(&cur, now);
                prop_assert_eq!(a, b);
                prop_assert_eq!(inc.fresh(), naive.fresh());
                prop_assert_eq!(inc.l_est, naive.l_est);
            }
        }

        #[test]
        fn window_count_matches_brute_force(
            times in proptest::collection::vec(0u32..500, 1..80),
            span in 1u32..100,
        ) {
            let mut sorted = times.clone();
            sorted.sort();
            let mut w = EntranceWindow::new();
            for (i, &t) in sorted.iter().enumerate() {
                w.prune(t as f64, span as f64);
                w.record(t as f64, 1);
                let now = t as f64;
                let brute = sorted[..=i].iter().filter(|&&x| now - (x as f64) < span as f64).count() as u64;
                prop_assert_eq!(w.count_within(now, span as f64), brute);
            }
        }
    }
}
