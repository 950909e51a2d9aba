//! Cost ledgers, spend rates over iteration ranges, ground-truth population
//! checks and CSV output.

use crate::state::Label;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::io::{Read, Write};

/// One row per iteration. Runs of identical adversary-only iterations are
/// stored once with `span > 1` and summed counts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub iteration: u64,
    pub span: u64,
    pub start_s: f64,
    pub length_s: f64,
    pub good_entrance: u64,
    pub good_purge: u64,
    pub adv_entrance: u64,
    pub adv_purge: u64,
    pub good_joins: u64,
    pub good_departs: u64,
    pub bad_joins: u64,
    pub bad_silent_departs: u64,
    pub size_prev: u64,
    pub size_end: u64,
    pub bad_fraction_max: f64,
    pub j_tilde: f64,
    /// False for the trailing iteration cut off by the end of the run.
    pub closed: bool,
}

impl LedgerRow {
    pub fn good_spend(&self) -> u64 {
        self.good_entrance + self.good_purge
    }

    pub fn adv_spend(&self) -> u64 {
        self.adv_entrance + self.adv_purge
    }

    /// Last iteration number covered by the row.
    pub fn last_iteration(&self) -> u64 {
        self.iteration + self.span.max(1) - 1
    }
}

/// An ID's membership in the post-purge sets `S_first ..= S_last`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PresenceSpan {
    pub label: Label,
    pub first: u64,
    pub last: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostLedger {
    pub rows: Vec<LedgerRow>,
    #[serde(default, skip_serializing)]
    pub spans: Vec<PresenceSpan>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub iterations: u64,
    pub purges: u64,
    pub length_s: f64,
    pub good_entrance: u64,
    pub good_purge: u64,
    pub adv_entrance: u64,
    pub adv_purge: u64,
    pub good_joins: u64,
    pub good_departs: u64,
    pub bad_joins: u64,
    pub bad_silent_departs: u64,
    pub bad_fraction_max: f64,
}

impl Totals {
    pub fn good_spend(&self) -> u64 {
        self.good_entrance + self.good_purge
    }

    pub fn adv_spend(&self) -> u64 {
        self.adv_entrance + self.adv_purge
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpendRates {
    /// Good spend per second.
    pub a: f64,
    /// Adversary spend per second.
    pub t: f64,
    /// Good joins per second.
    pub j: f64,
    /// `|S_{x−1} − S_y|` per second.
    pub delta: f64,
    pub length_s: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("empty iteration range")]
    EmptyRange,
    #[error("row range {0}..={1} outside ledger of {2} rows")]
    OutOfRange(usize, usize, usize),
}

impl CostLedger {
    pub fn totals(&self) -> Totals {
        sum_rows(&self.rows)
    }

    /// Post-purge set `S_j` recovered from the presence spans.
    pub fn members(&self, j: u64) -> HashSet<Label> {
        self.spans.iter().filter(|s| s.first <= j && j <= s.last).map(|s| s.label).collect()
    }

    /// Rates over rows `first..=last`.
    pub fn spend_rates(&self, first: usize, last: usize) -> Result<SpendRates, MetricsError> {
        if first > last {
            return Err(MetricsError::EmptyRange);
        }
        if last >= self.rows.len() {
            return Err(MetricsError::OutOfRange(first, last, self.rows.len()));
        }
        let rows = &self.rows[first..=last];
        let t = sum_rows(rows);
        let x = rows[0].iteration;
        let y = rows[rows.len() - 1].last_iteration();
        let before = self.members(x.saturating_sub(1));
        let after = self.members(y);
        let turnover = before.difference(&after).count();
        let len = t.length_s.max(f64::MIN_POSITIVE);
        Ok(SpendRates {
            a: t.good_spend() as f64 / len,
            t: t.adv_spend() as f64 / len,
            j: t.good_joins as f64 / len,
            delta: turnover as f64 / len,
            length_s: t.length_s,
        })
    }

    pub fn full_rates(&self) -> Result<SpendRates, MetricsError> {
        if self.rows.is_empty() {
            return Err(MetricsError::EmptyRange);
        }
        self.spend_rates(0, self.rows.len() - 1)
    }
}

fn sum_rows(rows: &[LedgerRow]) -> Totals {
    let mut t = Totals::default();
    for r in rows {
        t.iterations += r.span.max(1);
        if r.closed {
            t.purges += r.span.max(1);
        }
        t.length_s += r.length_s;
        t.good_entrance += r.good_entrance;
        t.good_purge += r.good_purge;
        t.adv_entrance += r.adv_entrance;
        t.adv_purge += r.adv_purge;
        t.good_joins += r.good_joins;
        t.good_departs += r.good_departs;
        t.bad_joins += r.bad_joins;
        t.bad_silent_departs += r.bad_silent_departs;
        t.bad_fraction_max = t.bad_fraction_max.max(r.bad_fraction_max);
    }
    t
}

/// Tracks the ground-truth bad fraction against a bound at every event boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationCheck {
    pub bound: f64,
    pub max_fraction: f64,
    pub first_violation: Option<(f64, f64)>,
}

impl PopulationCheck {
    pub fn new(bound: f64) -> Self {
        PopulationCheck { bound, max_fraction: 0.0, first_violation: None }
    }

    pub fn observe(&mut self, time: f64, bad: usize, total: usize) -> f64 {
        let f = if total == 0 { 0.0 } else { bad as f64 / total as f64 };
        self.max_fraction = self.max_fraction.max(f);
        if f >= self.bound && self.first_violation.is_none() {
            self.first_violation = Some((time, f));
        }
        f
    }

    pub fn passed(&self) -> bool {
        self.first_violation.is_none()
    }
}

/// Adversarial share equivalent to zero latency when messages take up to
/// `delta_rounds` rounds.
pub fn effective_alpha(alpha: f64, delta_rounds: f64) -> f64 {
    (2.0 * alpha * delta_rounds + alpha) / (2.0 * alpha * delta_rounds + 1.0)
}

/// Good spend ≤ 9·g_a + 8·g_d + 16·T_i for the 1/3 trigger. Returns the
/// indices of offending rows.
pub fn ccom_cost_violations(rows: &[LedgerRow]) -> Vec<usize> {
    rows.iter()
        .enumerate()
        .filter(|(_, r)| r.good_spend() > 9 * r.good_joins + 8 * r.good_departs + 16 * r.adv_spend())
        .map(|(i, _)| i)
        .collect()
}

/// Admitted bad joins in an iteration against quadratic window pricing:
/// splitting the iteration into `⌊J̃ℓ⌋ + 1` windows, `b² ≤ 2·spend·windows`.
pub fn bad_join_violations(rows: &[LedgerRow]) -> Vec<usize> {
    rows.iter()
        .enumerate()
        .filter(|(_, r)| {
            let windows = (r.j_tilde * r.length_s).floor() as u128 + r.span.max(1) as u128;
            let b = r.bad_joins as u128;
            b * b > 2 * r.adv_entrance as u128 * windows
        })
        .map(|(i, _)| i)
        .collect()
}

/// Ratio of each closed iteration's good spend to `|S_{i−1}|`.
pub fn good_spend_ratios(rows: &[LedgerRow]) -> Vec<f64> {
    rows.iter()
        .filter(|r| r.closed && r.size_prev > 0)
        .map(|r| r.good_spend() as f64 / (r.size_prev as f64 * r.span.max(1) as f64))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub seed: u64,
    pub algorithm: String,
    pub spend_rate: f64,
    pub alpha: f64,
}

const COLUMN_DOCS: &[&str] = &[
    "iteration: first iteration number in the row",
    "span: identical iterations folded into the row",
    "start_s, length_s: iteration start and duration in seconds",
    "good_entrance, good_purge: cost paid by good IDs",
    "adv_entrance, adv_purge: cost paid by the adversary",
    "good_joins, good_departs, bad_joins: admissions and announced departures",
    "bad_silent_departs: bad IDs removed for not answering a purge",
    "size_prev, size_end: membership after the previous and this purge",
    "bad_fraction_max: largest ground-truth bad fraction seen",
    "j_tilde: join-rate estimate in force (0 when unused)",
    "closed: false for the iteration cut off by the end of the run",
];

pub fn write_csv<W: Write>(rows: &[LedgerRow], meta: &RunMeta, mut out: W) -> std::io::Result<()> {
    writeln!(
        out,
        "# seed={} algorithm={} T={} alpha={}",
        meta.seed, meta.algorithm, meta.spend_rate, meta.alpha
    )?;
    for doc in COLUMN_DOCS {
        writeln!(out, "# {doc}")?;
    }
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record([
        "iteration",
        "span",
        "start_s",
        "length_s",
        "good_entrance",
        "good_purge",
        "adv_entrance",
        "adv_purge",
        "good_joins",
        "good_departs",
        "bad_joins",
        "bad_silent_departs",
        "size_prev",
        "size_end",
        "bad_fraction_max",
        "j_tilde",
        "closed",
    ])?;
    for r in rows {
        w.serialize(r).map_err(std::io::Error::other)?;
    }
    w.flush()
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<LedgerRow>, csv::Error> {
    csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input).deserialize().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(i: u64, len: f64, ge: u64, gp: u64, ae: u64) -> LedgerRow {
        LedgerRow {
            iteration: i,
            span: 1,
            length_s: len,
            good_entrance: ge,
            good_purge: gp,
            adv_entrance: ae,
            closed: true,
            ..LedgerRow::default()
        }
    }

    #[test]
    fn quiet_single_iteration_rates() {
        let ledger = CostLedger { rows: vec![row(1, 10.0, 4, 16, 0)], spans: vec![] };
        let r = ledger.spend_rates(0, 0).unwrap();
        assert_eq!(r.t, 0.0);
        assert_eq!(r.a, 2.0);
        assert!(matches!(ledger.spend_rates(1, 0), Err(MetricsError::EmptyRange)));
    }

    #[test]
    fn two_iteration_range_by_hand() {
        let mut a = row(1, 4.0, 3, 10, 5);
        a.good_joins = 3;
        let mut b = row(2, 6.0, 2, 12, 15);
        b.good_joins = 2;
        let spans = vec![
            PresenceSpan { label: 1, first: 0, last: 2 },
            PresenceSpan { label: 2, first: 0, last: 1 },
            PresenceSpan { label: 3, first: 0, last: 0 },
            PresenceSpan { label: 4, first: 1, last: 2 },
        ];
        let ledger = CostLedger { rows: vec![a, b], spans };
        let r = ledger.spend_rates(0, 1).unwrap();
        assert_eq!(r.a, 27.0 / 10.0);
        assert_eq!(r.t, 20.0 / 10.0);
        assert_eq!(r.j, 0.5);
        // S_0 = {1,2,3}, S_2 = {1,4}: two of S_0 are gone.
        assert_eq!(r.delta, 0.2);
    }

    #[test]
    fn totals_sum_rows() {
        let mut folded = row(3, 9.0, 0, 30, 12);
        folded.span = 3;
        let ledger = CostLedger { rows: vec![row(1, 1.0, 1, 2, 3), row(2, 1.0, 1, 2, 3), folded], spans: vec![] };
        let t = ledger.totals();
        assert_eq!((t.iterations, t.purges, t.good_spend(), t.adv_spend()), (5, 5, 36, 18));
        assert_eq!(ledger.rows[2].last_iteration(), 5);
    }

    #[test]
    fn population_check_records_first_crossing() {
        let mut c = PopulationCheck::new(3.0 / 8.0);
        c.observe(1.0, 1, 10);
        assert!(c.passed());
        c.observe(2.0, 4, 10);
        c.observe(3.0, 5, 10);
        assert_eq!(c.first_violation, Some((2.0, 0.4)));
        assert_eq!(c.max_fraction, 0.5);
        let mut zero = PopulationCheck::new(1.0 / 6.0);
        assert_eq!(zero.observe(0.0, 0, 100), 0.0);
    }

    #[test]
    fn effective_alpha_cases() {
        assert_eq!(effective_alpha(0.1, 0.0), 0.1);
        assert!((effective_alpha(1.0 / 18.0, 1.0) - 0.15).abs() < 1e-12);
        for d in 1..=20 {
            let a = 1.0 / (10.0 * d as f64 + 6.0);
            assert!(effective_alpha(a, d as f64) <= 1.0 / 6.0 + 1e-12);
        }
    }

    #[test]
    fn csv_round_trip_and_header_only() {
        let meta = RunMeta { seed: 7, algorithm: "gmcom".into(), spend_rate: 1024.0, alpha: 1.0 / 18.0 };
        let mut empty = Vec::new();
        write_csv(&[], &meta, &mut empty).unwrap();
        let text = String::from_utf8(empty.clone()).unwrap();
        assert!(text.starts_with("# seed=7 algorithm=gmcom T=1024"));
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 1);
        assert!(read_csv(empty.as_slice()).unwrap().is_empty());

        let mut r = row(4, 0.1 + 0.2, 1, 2, 3);
        r.bad_fraction_max = 1.0 / 3.0;
        r.j_tilde = 0.123456789;
        let rows = vec![r, LedgerRow { closed: false, ..row(5, 2.5, 0, 0, 0) }];
        let mut buf = Vec::new();
        write_csv(&rows, &meta, &mut buf).unwrap();
        assert_eq!(read_csv(buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn cost_checks_flag_offenders() {
        let mut ok = row(1, 1.0, 1, 10, 0);
        ok.good_joins = 1;
        ok.good_departs = 1;
        let bad = row(2, 1.0, 0, 100, 1);
        assert_eq!(ccom_cost_violations(&[ok, bad]), vec![1]);

        let mut burst = row(1, 0.5, 0, 0, 5050);
        burst.bad_joins = 100;
        burst.j_tilde = 1.0;
        assert!(bad_join_violations(&[burst.clone()]).is_empty());
        burst.adv_entrance = 100;
        assert_eq!(bad_join_violations(&[burst]), vec![0]);
    }
}
