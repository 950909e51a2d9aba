//! Discrete-event driver: merges good churn with adversary actions, runs
//! purge rounds and keeps the cost ledger and ground-truth checks.

use crate::adversary::{purge_survivors, Action, Adversary, AdversaryConfig, CostModel, ProtocolObservation};
use crate::ccom::{run_purge, CCom, CComConfig, JoinError, JoinProof, JoinReceipt, PurgeReport};
use crate::churn::{EventKind, GoodEvent};
use crate::gmcom::{GMCom, GMComConfig};
use crate::metrics::{
    bad_join_violations, ccom_cost_violations, good_spend_ratios, CostLedger, LedgerRow, PopulationCheck,
    PresenceSpan,
};
use crate::state::{bootstrap, committee_size, is_bad, Label, StateError, SystemView, BAD_BIT};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, VecDeque};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum ProtocolConfig {
    Ccom(CComConfig),
    Gmcom(GMComConfig),
}

impl ProtocolConfig {
    pub fn alpha(&self) -> f64 {
        match self {
            ProtocolConfig::Ccom(c) => c.alpha,
            ProtocolConfig::Gmcom(g) => g.alpha,
        }
    }

    /// Ground-truth bad fraction the protocol guarantees to stay under.
    pub fn population_bound(&self) -> f64 {
        match self {
            ProtocolConfig::Ccom(c) if c.generalized => 3.0 * c.alpha,
            ProtocolConfig::Ccom(_) => 3.0 / 8.0,
            ProtocolConfig::Gmcom(g) if g.heuristics.h2_bad_bound => 0.5,
            ProtocolConfig::Gmcom(_) => 1.0 / 6.0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            ProtocolConfig::Ccom(c) => c.validate(),
            ProtocolConfig::Gmcom(g) => g.validate(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Protocol {
    CCom(CCom),
    GMCom(GMCom),
}

impl Protocol {
    pub fn view(&self) -> &SystemView {
        match self {
            Protocol::CCom(c) => &c.view,
            Protocol::GMCom(g) => &g.view,
        }
    }

    fn view_mut(&mut self) -> &mut SystemView {
        match self {
            Protocol::CCom(c) => &mut c.view,
            Protocol::GMCom(g) => &mut g.view,
        }
    }

    fn committee_size(&self) -> usize {
        match self {
            Protocol::CCom(c) => c.committee_size,
            Protocol::GMCom(g) => g.committee_size,
        }
    }

    pub fn next_difficulty(&self, now: f64) -> u64 {
        match self {
            Protocol::CCom(_) => 1,
            Protocol::GMCom(g) => g.difficulty(now),
        }
    }

    pub fn admit<R: Rng>(&mut self, label: Label, now: f64, rng: &mut R) -> Result<JoinReceipt, JoinError> {
        match self {
            Protocol::CCom(c) => c.on_join(label, &JoinProof::Abstract, now),
            Protocol::GMCom(g) => g.on_join(label, &JoinProof::Abstract, now, rng),
        }
    }

    pub fn depart(&mut self, label: Label, now: f64) -> bool {
        match self {
            Protocol::CCom(c) => {
                matches!(c.view.apply_depart(label, now), crate::state::DepartOutcome::Removed { .. })
            }
            Protocol::GMCom(g) => g.on_depart(label, now),
        }
    }

    pub fn purge_due(&self, now: f64) -> bool {
        match self {
            Protocol::CCom(c) => c.purge_due(),
            Protocol::GMCom(g) => g.purge_due(now),
        }
    }

    pub fn headroom(&self, now: f64) -> u64 {
        match self {
            Protocol::CCom(c) => c.headroom(),
            Protocol::GMCom(g) => g.headroom(now),
        }
    }

    pub fn purge<R: Rng>(&mut self, responds: impl FnMut(Label) -> bool, now: f64, rng: &mut R) -> PurgeReport {
        match self {
            Protocol::CCom(c) => run_purge(&mut c.view, responds, c.committee_size, rng),
            Protocol::GMCom(g) => g.purge(responds, now, rng),
        }
    }

    pub fn j_tilde(&self) -> f64 {
        match self {
            Protocol::CCom(_) => 0.0,
            Protocol::GMCom(g) => g.j_tilde,
        }
    }

    pub fn observe(&self, now: f64) -> ProtocolObservation {
        match self {
            Protocol::CCom(c) => ProtocolObservation {
                cost_model: CostModel::Flat,
                headroom: c.headroom(),
                window_count: 0,
                j_tilde: 0.0,
            },
            Protocol::GMCom(g) => ProtocolObservation {
                cost_model: CostModel::Windowed,
                headroom: g.headroom(now),
                window_count: g.difficulty(now) - 1,
                j_tilde: g.j_tilde,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub n0: usize,
    pub alpha: f64,
    pub init_duration_s: f64,
    pub committee_c: f64,
    pub protocol: ProtocolConfig,
    pub adversary: AdversaryConfig,
    pub duration_s: f64,
    pub seed: u64,
    /// Length of a purge round; zero makes purges instantaneous.
    pub round_s: f64,
    pub delta_rounds: f64,
    /// Rejoining trace IDs keep their label. Defaults to on when the
    /// symmetric-difference trigger is enabled.
    pub persistent_labels: Option<bool>,
    /// Collapse runs of identical adversary-only iterations.
    pub fold: bool,
}

impl SimParams {
    pub fn new(n0: usize, protocol: ProtocolConfig, adversary: AdversaryConfig, duration_s: f64, seed: u64) -> Self {
        SimParams {
            n0,
            alpha: protocol.alpha(),
            init_duration_s: 1.0,
            committee_c: 3.0,
            protocol,
            adversary,
            duration_s,
            seed,
            round_s: 1.0,
            delta_rounds: 0.0,
            persistent_labels: None,
            fold: true,
        }
    }

    pub fn persistent(&self) -> bool {
        self.persistent_labels.unwrap_or(matches!(self.protocol, ProtocolConfig::Gmcom(g) if g.heuristics.h1_symmetric_diff))
    }

    pub fn validate(&self) -> Result<(), String> {
        self.protocol.validate()?;
        self.adversary.validate()?;
        if (self.alpha - self.protocol.alpha()).abs() > 1e-12 {
            return Err(format!("bootstrap alpha {} differs from protocol alpha {}", self.alpha, self.protocol.alpha()));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err("duration must be positive".into());
        }
        if !(self.round_s >= 0.0 && self.round_s.is_finite()) {
            return Err("round length must be ≥ 0".into());
        }
        if self.delta_rounds < 0.0 {
            return Err("delta_rounds must be ≥ 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    State(#[from] StateError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub algorithm: String,
    pub seed: u64,
    pub spend_rate: f64,
    pub alpha: f64,
    pub effective_alpha: f64,
    pub duration_s: f64,
    pub a: f64,
    pub t: f64,
    pub j: f64,
    pub delta: f64,
    pub purges: u64,
    pub iterations: u64,
    pub good_spend: u64,
    pub adv_spend: u64,
    pub good_joins: u64,
    pub bad_joins: u64,
    pub bad_fraction_max: f64,
    pub population_bound: f64,
    pub population_ok: bool,
    pub first_violation: Option<(f64, f64)>,
    pub committee_failures: u64,
    pub cost_bound_violations: usize,
    pub bad_join_violations: usize,
    pub good_spend_ratio_max: f64,
    /// The join-rate estimator never closed an interval and `J̃` stayed at its initial value.
    pub estimator_fallback: bool,
}

impl Summary {
    /// Hard invariants only; the spend-ratio figure is informational.
    pub fn invariants_ok(&self) -> bool {
        self.population_ok
            && self.committee_failures == 0
            && self.cost_bound_violations == 0
            && self.bad_join_violations == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub ledger: CostLedger,
    pub summary: Summary,
}

pub fn algorithm_name(p: &ProtocolConfig) -> String {
    match p {
        ProtocolConfig::Ccom(c) if c.generalized => "ccom_generalized".into(),
        ProtocolConfig::Ccom(_) => "ccom".into(),
        ProtocolConfig::Gmcom(g) => match (g.heuristics.h1_symmetric_diff, g.heuristics.h2_bad_bound, g.heuristics.h3_detector) {
            (false, false, false) => "gmcom".into(),
            (true, true, false) => "gmch1".into(),
            (true, true, true) => "gmch2".into(),
            (a, b, c) => format!("gmcom_h{}{}{}", u8::from(a), u8::from(b), u8::from(c)),
        },
    }
}

struct Engine<'a> {
    proto: Protocol,
    rng: ChaCha8Rng,
    adv: Adversary,
    pays: bool,
    alpha: f64,
    good: &'a [GoodEvent],
    gi: usize,
    duration: f64,
    round_s: f64,
    fold: bool,
    purge_end: Option<f64>,
    adv_next: f64,
    queue: VecDeque<Label>,
    bad_in_view: usize,
    next_bad: u64,
    row: LedgerRow,
    rows: Vec<LedgerRow>,
    pop: PopulationCheck,
    committee_failures: u64,
    first_set: HashMap<Label, u64>,
    joined_this_iter: Vec<Label>,
    spans: Vec<PresenceSpan>,
}

impl Engine<'_> {
    fn good_count(&self) -> usize {
        self.proto.view().len() - self.bad_in_view
    }

    fn observe_population(&mut self, now: f64) {
        let f = self.pop.observe(now, self.bad_in_view, self.proto.view().len());
        self.row.bad_fraction_max = self.row.bad_fraction_max.max(f);
    }

    fn close_span(&mut self, label: Label) {
        if let Some(first) = self.first_set.remove(&label) {
            let last = self.proto.view().iteration - 1;
            self.spans.push(PresenceSpan { label, first, last });
        }
    }

    fn after_change(&mut self, now: f64) {
        self.observe_population(now);
        if self.purge_end.is_none() && self.proto.purge_due(now) {
            if self.round_s > 0.0 {
                self.purge_end = Some(now + self.round_s);
            } else {
                self.complete_purge(now);
            }
        }
    }

    fn committee_ok(&self, report: &PurgeReport) -> bool {
        if report.committee_error.is_some() {
            return false;
        }
        let c = self.proto.view().committee();
        2 * c.iter().filter(|&&l| is_bad(l)).count() < c.len()
    }

    fn complete_purge(&mut self, now: f64) {
        self.purge_end = None;
        // The adversary was parked during the round.
        self.adv_next = self.adv_next.max(now);
        let good = self.good_count() as u64;
        let keep = if self.pays {
            purge_survivors(self.bad_in_view as u64, good, self.alpha, self.adv.budget.available(now))
        } else {
            0
        };
        let mut kept = 0u64;
        let report = self.proto.purge(
            |l| {
                if !is_bad(l) {
                    return true;
                }
                kept += 1;
                kept <= keep
            },
            now,
            &mut self.rng,
        );
        let survivors = keep.min(kept);
        let charged = self.adv.budget.try_spend(survivors, now);
        debug_assert!(charged);
        self.row.good_purge += good;
        self.row.adv_purge += survivors;
        self.row.bad_silent_departs += report.evicted.len() as u64;
        self.bad_in_view = survivors as usize;
        if !self.committee_ok(&report) {
            self.committee_failures += 1;
        }
        for &l in &report.evicted {
            self.close_span(l);
        }
        let finished = self.proto.view().iteration - 1;
        for l in std::mem::take(&mut self.joined_this_iter) {
            if self.proto.view().contains(l) {
                self.first_set.entry(l).or_insert(finished);
            }
        }
        self.roll_row(now, 1);
        self.observe_population(now);
        self.drain_queue(now);
    }

    /// Closes the current row as `span` purged iterations ending at `now`.
    fn roll_row(&mut self, now: f64, span: u64) {
        let len = self.proto.view().len() as u64;
        let next = LedgerRow {
            iteration: self.row.iteration + span,
            span: 1,
            start_s: now,
            size_prev: len,
            j_tilde: self.proto.j_tilde(),
            ..LedgerRow::default()
        };
        let mut done = std::mem::replace(&mut self.row, next);
        done.span = span;
        done.length_s = now - done.start_s;
        done.size_end = len;
        done.closed = true;
        self.rows.push(done);
    }

    fn drain_queue(&mut self, now: f64) {
        while self.purge_end.is_none() {
            let Some(label) = self.queue.pop_front() else { break };
            self.good_join(label, now);
        }
    }

    fn good_join(&mut self, label: Label, now: f64) {
        if self.purge_end.is_some() {
            self.queue.push_back(label);
            return;
        }
        let d = self.proto.next_difficulty(now);
        match self.proto.admit(label, now, &mut self.rng) {
            Ok(r) => {
                self.row.good_entrance += d;
                if r.admitted {
                    self.row.good_joins += 1;
                    self.joined_this_iter.push(label);
                }
            }
            Err(_) => return,
        }
        self.after_change(now);
    }

    fn good_event(&mut self, ev: GoodEvent) {
        match ev.kind {
            EventKind::Join => self.good_join(ev.label, ev.time),
            EventKind::Depart => {
                if let Some(pos) = self.queue.iter().position(|&l| l == ev.label) {
                    self.queue.remove(pos);
                    return;
                }
                if self.proto.depart(ev.label, ev.time) {
                    self.row.good_departs += 1;
                    self.close_span(ev.label);
                    self.after_change(ev.time);
                }
            }
        }
    }

    fn next_good_time(&self) -> f64 {
        self.good.get(self.gi).map_or(f64::INFINITY, |e| e.time)
    }

    /// Iterations that can be folded: a fresh CCom iteration with no bad IDs
    /// whose only activity would be one full adversary batch and a purge.
    /// Returns the count and the time of the last folded batch.
    fn foldable(&self, count: u64, spacing: f64, now: f64) -> Option<(u64, f64)> {
        let Protocol::CCom(c) = &self.proto else { return None };
        if !self.fold || self.round_s > 0.0 || self.pays || self.bad_in_view > 0 || !self.queue.is_empty() {
            return None;
        }
        if c.view.n_a + c.view.n_d > 0 || count != c.trigger() || count == 0 {
            return None;
        }
        let limit = self.next_good_time().min(self.duration);
        let budget = &self.adv.budget;
        let mut r = if spacing > 0.0 {
            (((limit - now) / spacing).ceil() as u64).saturating_sub(1)
        } else {
            budget.available(now) / count
        };
        while r >= 2 {
            let t_last = (now + (r - 1) as f64 * spacing).max(budget.ready_at(r * count));
            if t_last < limit {
                return Some((r, t_last));
            }
            r /= 2;
        }
        None
    }

    fn fold_iterations(&mut self, r: u64, count: u64, t_last: f64) {
        let ok = self.adv.budget.try_spend(r * count, t_last);
        debug_assert!(ok);
        let n = self.proto.view().len();
        let good = self.good_count() as u64;
        self.row.good_purge += r * good;
        self.row.adv_entrance += r * count;
        self.row.bad_joins += r * count;
        self.row.bad_silent_departs += r * count;
        self.next_bad += r * count;
        self.pop.observe(t_last, count as usize, n + count as usize);
        self.row.bad_fraction_max = self.row.bad_fraction_max.max(count as f64 / (n as f64 + count as f64));
        let size = self.proto.committee_size();
        let view = self.proto.view_mut();
        view.skip_identical_purges(r - 1);
        if view.complete_purge(size, &mut self.rng).is_err() {
            self.committee_failures += 1;
        }
        self.roll_row(t_last, r);
        self.observe_population(t_last);
    }

    fn adversary_step(&mut self, now: f64) {
        let obs = self.proto.observe(now);
        match self.adv.decide(&obs, now) {
            Action::Wait { until } => self.adv_next = until.max(now),
            Action::Join { count, spacing } => {
                if let Some((r, t_last)) = self.foldable(count, spacing, now) {
                    self.fold_iterations(r, count, t_last);
                    self.adv.joined(count, spacing, t_last);
                    self.adv_next = t_last;
                    return;
                }
                let mut joined = 0;
                for _ in 0..count {
                    let d = self.proto.next_difficulty(now);
                    if !self.adv.budget.try_spend(d, now) {
                        break;
                    }
                    let label = self.next_bad | BAD_BIT;
                    self.next_bad += 1;
                    self.row.adv_entrance += d;
                    joined += 1;
                    if let Ok(r) = self.proto.admit(label, now, &mut self.rng) {
                        if r.admitted {
                            self.row.bad_joins += 1;
                            self.bad_in_view += 1;
                            self.joined_this_iter.push(label);
                        }
                    }
                }
                self.adv.joined(joined, spacing, now);
                self.adv_next = now;
                self.after_change(now);
            }
        }
    }

    fn run(&mut self) {
        loop {
            let t_good = self.next_good_time();
            let t_purge = self.purge_end.unwrap_or(f64::INFINITY);
            let t_adv = if self.purge_end.is_some() { f64::INFINITY } else { self.adv_next };
            let t = t_good.min(t_purge).min(t_adv);
            if t > self.duration || t.is_infinite() {
                break;
            }
            if t_purge <= t {
                self.complete_purge(t);
            } else if t_good <= t {
                let ev = self.good[self.gi];
                self.gi += 1;
                self.good_event(ev);
            } else {
                self.adversary_step(t);
            }
        }
    }

    fn finish(mut self, params: &SimParams) -> RunResult {
        let end = self.duration;
        let tail = self.proto.view().iteration;
        self.row.length_s = end - self.row.start_s;
        self.row.size_end = self.proto.view().len() as u64;
        self.row.closed = false;
        self.rows.push(self.row.clone());
        let members: Vec<Label> = self.proto.view().s_cur().iter().copied().collect();
        for l in members {
            let first = self.first_set.remove(&l).unwrap_or(tail);
            self.spans.push(PresenceSpan { label: l, first, last: tail });
        }
        self.spans.sort_by_key(|s| (s.first, s.label));
        let ledger = CostLedger { rows: self.rows, spans: self.spans };
        let closed: Vec<LedgerRow> = ledger.rows.iter().filter(|r| r.closed).cloned().collect();
        let (cost_bound_violations, bad_join_violations, ratio_max, fallback) = match &self.proto {
            Protocol::CCom(c) if !c.config.generalized && (c.config.purge_fraction - 1.0 / 3.0).abs() < 1e-12 => {
                (ccom_cost_violations(&closed).len(), 0, 0.0, false)
            }
            Protocol::CCom(_) => (0, 0, 0.0, false),
            Protocol::GMCom(g) => {
                let ratios = good_spend_ratios(&closed);
                (
                    0,
                    bad_join_violations(&closed).len(),
                    ratios.into_iter().fold(0.0, f64::max),
                    g.estimator.intervals_closed == 0,
                )
            }
        };
        let totals = ledger.totals();
        let rates = ledger.full_rates().expect("ledger has a tail row");
        let summary = Summary {
            algorithm: algorithm_name(&params.protocol),
            seed: params.seed,
            spend_rate: params.adversary.spend_rate,
            alpha: params.alpha,
            effective_alpha: crate::metrics::effective_alpha(params.alpha, params.delta_rounds),
            duration_s: params.duration_s,
            a: rates.a,
            t: rates.t,
            j: rates.j,
            delta: rates.delta,
            purges: totals.purges,
            iterations: totals.iterations,
            good_spend: totals.good_spend(),
            adv_spend: totals.adv_spend(),
            good_joins: totals.good_joins,
            bad_joins: totals.bad_joins,
            bad_fraction_max: self.pop.max_fraction,
            population_bound: self.pop.bound,
            population_ok: self.pop.passed(),
            first_violation: self.pop.first_violation,
            committee_failures: self.committee_failures,
            cost_bound_violations,
            bad_join_violations,
            good_spend_ratio_max: ratio_max,
            estimator_fallback: fallback,
        };
        RunResult { ledger, summary }
    }
}

/// Runs one simulation over a good-churn stream produced by
/// [`map_trace`](crate::churn::map_trace) with `n0 − ⌊α·n0⌋` bootstrap IDs.
pub fn simulate(params: &SimParams, good: &[GoodEvent]) -> Result<RunResult, SimError> {
    params.validate().map_err(SimError::Config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let boot = bootstrap(params.n0, params.alpha, params.init_duration_s, params.committee_c, &mut rng)?;
    let csize = committee_size(params.n0, params.committee_c);
    let view = SystemView::from_bootstrap(&boot);
    let bad0 = boot.bad_count();
    let proto = match params.protocol {
        ProtocolConfig::Ccom(c) => Protocol::CCom(CCom::new(view, c, csize)),
        ProtocolConfig::Gmcom(g) => Protocol::GMCom(GMCom::new(view, g, csize, boot.j0, 0.0)),
    };
    let n = proto.view().len() as u64;
    let first_set = proto.view().s_cur().iter().map(|&l| (l, 0)).collect();
    let mut engine = Engine {
        proto,
        rng,
        adv: Adversary::new(params.adversary),
        pays: params.adversary.pays_purges(),
        alpha: params.alpha,
        good,
        gi: 0,
        duration: params.duration_s,
        round_s: params.round_s,
        fold: params.fold,
        purge_end: None,
        adv_next: 0.0,
        queue: VecDeque::new(),
        bad_in_view: bad0,
        next_bad: bad0 as u64,
        row: LedgerRow { iteration: 1, span: 1, size_prev: n, j_tilde: boot.j0, ..LedgerRow::default() },
        rows: Vec::new(),
        pop: PopulationCheck::new(params.protocol.population_bound()),
        committee_failures: 0,
        first_set,
        joined_this_iter: Vec::new(),
        spans: Vec::new(),
    };
    if let Protocol::CCom(_) = engine.proto {
        engine.row.j_tilde = 0.0;
    }
    engine.observe_population(0.0);
    engine.run();
    Ok(engine.finish(params))
}
