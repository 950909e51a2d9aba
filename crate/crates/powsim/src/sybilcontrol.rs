//! Simplified SybilControl baseline: every ID pays to join and then pays one
//! combined neighbour-test puzzle per test period. Bad IDs stay while the
//! adversary keeps paying for them.

use crate::adversary::{AdversaryConfig, Budget, Strategy};
use crate::churn::{EventKind, GoodEvent};
use crate::metrics::{CostLedger, LedgerRow, PopulationCheck, PresenceSpan};
use crate::sim::{SimError, Summary};
use crate::state::{Label, BAD_BIT};
use indexmap::IndexSet;
use rand::SeedableRng;
use rand_distr::{Binomial, Distribution};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Topology {
    /// Every ID tests every other ID.
    #[default]
    Complete,
    /// Each ID tests `k` random others per period.
    RandomK { k: usize },
}

impl Topology {
    /// Chance an ID is tested by at least one neighbour in a period.
    pub fn tested_probability(&self, population: usize) -> f64 {
        match *self {
            Topology::Complete => 1.0,
            Topology::RandomK { k } => {
                if population < 2 {
                    return 0.0;
                }
                let others = (population - 1) as f64;
                1.0 - (1.0 - (k as f64 / others).min(1.0)).powf(others)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SCConfig {
    pub test_period_s: f64,
    pub join_difficulty: u64,
    #[serde(default)]
    pub topology: Topology,
}

impl Default for SCConfig {
    fn default() -> Self {
        SCConfig { test_period_s: 10.0, join_difficulty: 1, topology: Topology::Complete }
    }
}

impl SCConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.test_period_s > 0.0) {
            return Err("test period must be positive".into());
        }
        if self.join_difficulty == 0 {
            return Err("join difficulty must be positive".into());
        }
        if let Topology::RandomK { k: 0 } = self.topology {
            return Err("random-k topology needs k ≥ 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SCParams {
    pub n0: usize,
    pub alpha: f64,
    pub config: SCConfig,
    pub adversary: AdversaryConfig,
    pub duration_s: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SCResult {
    pub ledger: CostLedger,
    pub summary: Summary,
    /// First time the bad fraction reached 1/2.
    pub unsafe_at: Option<f64>,
}

struct State {
    /// Live good IDs; bad IDs are anonymous and only counted.
    members: IndexSet<Label>,
    bad: usize,
    pop: PopulationCheck,
    row: LedgerRow,
}

impl State {
    fn len(&self) -> usize {
        self.members.len() + self.bad
    }

    fn observe(&mut self, t: f64) {
        let f = self.pop.observe(t, self.bad, self.len());
        self.row.bad_fraction_max = self.row.bad_fraction_max.max(f);
    }
}

/// Bad IDs to add after a test so the next test stays affordable: each costs
/// `d` now and one more at the next test.
fn affordable_joins(available: u64, bad: usize, refill: u64, d: u64) -> u64 {
    let now = available / d;
    let upkeep = (available + refill).saturating_sub(bad as u64) / (d + 1);
    now.min(upkeep)
}

pub fn simulate_sybilcontrol(params: &SCParams, good: &[GoodEvent]) -> Result<SCResult, SimError> {
    params.config.validate().map_err(SimError::Config)?;
    params.adversary.validate().map_err(SimError::Config)?;
    if !(0.0..0.5).contains(&params.alpha) {
        return Err(SimError::Config(format!("alpha {} must lie in [0, 1/2)", params.alpha)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let bad0 = (params.alpha * params.n0 as f64 + 1e-9).floor() as usize;
    let good0 = params.n0 - bad0;
    let members: IndexSet<Label> = (0..good0 as u64).collect();
    let period = params.config.test_period_s;
    let d = params.config.join_difficulty;
    let mut budget = Budget::new(params.adversary.spend_rate);
    let active = params.adversary.strategy != Strategy::None;

    let mut st = State {
        members,
        bad: bad0,
        pop: PopulationCheck::new(0.5),
        row: LedgerRow { iteration: 1, span: 1, size_prev: params.n0 as u64, ..LedgerRow::default() },
    };
    st.observe(0.0);
    let mut rows = Vec::new();
    let mut spans = Vec::new();
    let mut gi = 0;
    let mut k = 1u64;
    loop {
        let test_at = k as f64 * period;
        let end = test_at.min(params.duration_s);
        while gi < good.len() && good[gi].time <= end {
            let ev = good[gi];
            gi += 1;
            match ev.kind {
                EventKind::Join => {
                    if st.members.insert(ev.label) {
                        st.row.good_entrance += d;
                        st.row.good_joins += 1;
                    }
                }
                EventKind::Depart => {
                    if st.members.shift_remove(&ev.label) {
                        st.row.good_departs += 1;
                    }
                }
            }
            st.observe(ev.time);
        }
        if test_at > params.duration_s {
            break;
        }

        // Test round: good IDs always pass; unpaid bad IDs are caught when
        // some neighbour tests them.
        let good_live = st.members.len() as u64;
        st.row.good_purge += good_live;
        let paid = if active { (st.bad as u64).min(budget.available(test_at)) } else { 0 };
        budget.try_spend(paid, test_at);
        st.row.adv_purge += paid;
        let p = params.config.topology.tested_probability(st.len());
        let unpaid = st.bad as u64 - paid;
        let dropped = if p >= 1.0 {
            unpaid
        } else {
            Binomial::new(unpaid, p).expect("p in [0, 1]").sample(&mut rng)
        };
        st.bad -= dropped as usize;
        st.row.bad_silent_departs += dropped;
        st.observe(test_at);

        if active {
            let refill = budget.accrued(test_at + period) - budget.accrued(test_at);
            let q = affordable_joins(budget.available(test_at), st.bad, refill, d);
            if q > 0 && budget.try_spend(q * d, test_at) {
                st.bad += q as usize;
                st.row.adv_entrance += q * d;
                st.row.bad_joins += q;
                st.observe(test_at);
            }
        }

        let size = st.len() as u64;
        let next = LedgerRow {
            iteration: k + 1,
            span: 1,
            start_s: test_at,
            size_prev: size,
            ..LedgerRow::default()
        };
        let mut done = std::mem::replace(&mut st.row, next);
        done.length_s = period;
        done.size_end = size;
        done.closed = true;
        rows.push(done);
        k += 1;
    }
    st.row.length_s = params.duration_s - st.row.start_s;
    st.row.size_end = st.len() as u64;
    st.row.closed = false;
    rows.push(st.row.clone());
    let tail = k;
    spans.extend(st.members.iter().map(|&l| PresenceSpan { label: l, first: tail, last: tail }));
    spans.extend((0..st.bad as u64).map(|b| PresenceSpan { label: b | BAD_BIT, first: tail, last: tail }));

    let ledger = CostLedger { rows, spans };
    let totals = ledger.totals();
    let len = params.duration_s;
    let unsafe_at = st.pop.first_violation.map(|(t, _)| t);
    let summary = Summary {
        algorithm: "sybilcontrol".into(),
        seed: params.seed,
        spend_rate: params.adversary.spend_rate,
        alpha: params.alpha,
        effective_alpha: params.alpha,
        duration_s: len,
        a: totals.good_spend() as f64 / len,
        t: totals.adv_spend() as f64 / len,
        j: totals.good_joins as f64 / len,
        delta: 0.0,
        purges: totals.purges,
        iterations: totals.iterations,
        good_spend: totals.good_spend(),
        adv_spend: totals.adv_spend(),
        good_joins: totals.good_joins,
        bad_joins: totals.bad_joins,
        bad_fraction_max: st.pop.max_fraction,
        population_bound: 0.5,
        population_ok: st.pop.passed(),
        first_violation: st.pop.first_violation,
        committee_failures: 0,
        cost_bound_violations: 0,
        bad_join_violations: 0,
        good_spend_ratio_max: 0.0,
        estimator_fallback: false,
    };
    Ok(SCResult { ledger, summary, unsafe_at })
}
