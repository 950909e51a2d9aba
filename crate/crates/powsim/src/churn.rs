//! Good-ID churn: trace files, a synthetic Poisson/Weibull generator, the
//! epoch oracle and the join-rate assumption validator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Weibull};
use serde::{Deserialize, Serialize};
use std::collections::{BinaryHeap, HashMap, HashSet, VecDeque};
use std::io::{Read, Write};
use std::path::Path;

/// Bounds on how fast the good join rate may move between and within epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssumptionConstants {
    pub a1_low: f64,
    pub a1_high: f64,
    pub a2_low: f64,
    pub a2_high: f64,
}

impl AssumptionConstants {
    pub const BITCOIN: Self = Self { a1_low: 0.1, a1_high: 10.0, a2_low: 0.0005, a2_high: 30.0 };
    pub const DEBIAN: Self = Self { a1_low: 0.2, a1_high: 5.0, a2_low: 0.125, a2_high: 8.0 };
    pub const REDHAT: Self = Self { a1_low: 0.125, a1_high: 8.0, a2_low: 0.067, a2_high: 15.0 };
    pub const FLATOUT: Self = Self { a1_low: 0.1, a1_high: 10.0, a2_low: 0.067, a2_high: 15.0 };

    pub fn validate(&self) -> Result<(), String> {
        let ok = self.a1_low > 0.0 && self.a1_low <= self.a1_high && self.a2_low > 0.0 && self.a2_low <= self.a2_high;
        if ok {
            Ok(())
        } else {
            Err(format!("assumption constants out of order: {self:?}"))
        }
    }

    /// Lower constant of the join-estimate sandwich.
    pub fn je_low(&self) -> f64 {
        5.0 / 6.0 * self.a1_low * self.a1_low * self.a2_low / self.a1_high
    }

    pub fn je_high(&self) -> f64 {
        5.0 * self.a1_high * self.a1_high * self.a2_high / self.a1_low
    }

    /// Coefficient in the per-iteration bad-join bound.
    pub fn l8(&self) -> f64 {
        (2.0 * self.je_high()).sqrt()
    }

    /// Per-iteration good spend coefficient on `|S_{i-1}|`.
    pub fn l9(&self) -> f64 {
        12.0 / 11.0 + self.a1_high * self.a2_high / (11.0 * self.je_low())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Join,
    Depart,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChurnEvent {
    pub time: f64,
    pub kind: EventKind,
    pub label: String,
}

impl ChurnEvent {
    pub fn join(time: f64, label: impl Into<String>) -> Self {
        ChurnEvent { time, kind: EventKind::Join, label: label.into() }
    }

    pub fn depart(time: f64, label: impl Into<String>) -> Self {
        ChurnEvent { time, kind: EventKind::Depart, label: label.into() }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ChurnError {
    #[error("line {line}: {msg}")]
    Malformed { line: u64, msg: String },
    #[error("line {line}: time {time} precedes the previous event")]
    OutOfOrder { line: u64, time: f64 },
    #[error("line {line}: depart of absent label {label:?}")]
    UnknownDepart { line: u64, label: String },
    #[error("line {line}: join of already-present label {label:?}")]
    DuplicateJoin { line: u64, label: String },
    #[error("invalid synthetic churn config: {0}")]
    InvalidConfig(String),
    #[error("need at least 2 terminated epochs, found {0}")]
    TooFewEpochs(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Deserialize)]
struct TraceRow {
    time_s: String,
    event: String,
    label: String,
}

/// Checks ordering and presence; `line` numbers count the header as line 1.
pub fn validate_events(events: &[ChurnEvent]) -> Result<(), ChurnError> {
    let mut present: HashSet<&str> = HashSet::new();
    let mut last = f64::NEG_INFINITY;
    for (i, ev) in events.iter().enumerate() {
        let line = i as u64 + 2;
        if !(ev.time >= last) || !ev.time.is_finite() {
            return Err(ChurnError::OutOfOrder { line, time: ev.time });
        }
        last = ev.time;
        match ev.kind {
            EventKind::Join => {
                if !present.insert(&ev.label) {
                    return Err(ChurnError::DuplicateJoin { line, label: ev.label.clone() });
                }
            }
            EventKind::Depart => {
                if !present.remove(ev.label.as_str()) {
                    return Err(ChurnError::UnknownDepart { line, label: ev.label.clone() });
                }
            }
        }
    }
    Ok(())
}

pub fn parse_trace<R: Read>(reader: R) -> Result<Vec<ChurnEvent>, ChurnError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(reader);
    let mut events = Vec::new();
    for row in rdr.deserialize::<TraceRow>() {
        let line = events.len() as u64 + 2;
        let row = row.map_err(|e| ChurnError::Malformed { line, msg: e.to_string() })?;
        let time: f64 =
            row.time_s.parse().map_err(|_| ChurnError::Malformed { line, msg: format!("bad time {:?}", row.time_s) })?;
        let kind = match row.event.as_str() {
            "join" => EventKind::Join,
            "depart" => EventKind::Depart,
            other => return Err(ChurnError::Malformed { line, msg: format!("unknown event {other:?}") }),
        };
        if row.label.is_empty() {
            return Err(ChurnError::Malformed { line, msg: "empty label".into() });
        }
        events.push(ChurnEvent { time, kind, label: row.label });
    }
    validate_events(&events)?;
    Ok(events)
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<Vec<ChurnEvent>, ChurnError> {
    parse_trace(std::fs::File::open(path)?)
}

pub fn write_trace<W: Write>(events: &[ChurnEvent], writer: W) -> Result<(), ChurnError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(["time_s", "event", "label"])?;
    for ev in events {
        let kind = match ev.kind {
            EventKind::Join => "join",
            EventKind::Depart => "depart",
        };
        w.write_record([ev.time.to_string().as_str(), kind, ev.label.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

/// Piecewise-constant join rate: each entry is `(start_s, rate_per_s)`.
pub type RateSchedule = Vec<(f64, f64)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthChurnConfig {
    pub rate_schedule: RateSchedule,
    pub weibull_shape: f64,
    /// Weibull scale in minutes.
    pub weibull_scale_min: f64,
    pub n_init: usize,
    pub duration_s: f64,
    pub seed: u64,
    #[serde(default = "default_round")]
    pub round_s: f64,
    #[serde(default = "default_eps")]
    pub eps_join: f64,
    #[serde(default = "default_eps")]
    pub eps_depart: f64,
}

fn default_round() -> f64 {
    1.0
}

fn default_eps() -> f64 {
    0.01
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionPreset {
    Debian,
    Redhat,
    Flatout,
}

impl SessionPreset {
    /// `(shape, scale in minutes)`.
    pub fn weibull(self) -> (f64, f64) {
        match self {
            SessionPreset::Debian => (0.38, 42.2),
            SessionPreset::Redhat => (0.59, 41.0),
            SessionPreset::Flatout => (0.34, 21.3),
        }
    }
}

impl SynthChurnConfig {
    pub fn preset(p: SessionPreset, rate: f64, n_init: usize, duration_s: f64, seed: u64) -> Self {
        let (shape, scale) = p.weibull();
        SynthChurnConfig {
            rate_schedule: vec![(0.0, rate)],
            weibull_shape: shape,
            weibull_scale_min: scale,
            n_init,
            duration_s,
            seed,
            round_s: 1.0,
            eps_join: 0.01,
            eps_depart: 0.01,
        }
    }

    pub fn validate(&self) -> Result<(), ChurnError> {
        let bad = |m: String| Err(ChurnError::InvalidConfig(m));
        if !(self.weibull_shape > 0.0 && self.weibull_scale_min > 0.0) {
            return bad("Weibull shape and scale must be positive".into());
        }
        if !(self.duration_s >= 0.0 && self.round_s > 0.0) {
            return bad("duration must be ≥ 0 and round length > 0".into());
        }
        if !(self.eps_join > 0.0 && self.eps_depart > 0.0) {
            return bad("per-round churn caps must be positive".into());
        }
        let mut prev = f64::NEG_INFINITY;
        for &(start, rate) in &self.rate_schedule {
            if !(rate >= 0.0 && rate.is_finite()) || start < prev {
                return bad(format!("rate schedule entry ({start}, {rate}) invalid"));
            }
            prev = start;
        }
        Ok(())
    }

    /// Rate in force at `t`.
    pub fn rate_at(&self, t: f64) -> f64 {
        self.rate_schedule.iter().rev().find(|(s, _)| *s <= t).map_or(0.0, |&(_, r)| r)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthTrace {
    pub events: Vec<ChurnEvent>,
    /// Every session length drawn, in seconds, including ones cut off by the end of the run.
    pub sessions_s: Vec<f64>,
    /// Joins and departures pushed into a later round by the caps.
    pub deferred: u64,
}

/// Departure candidates keyed so the heap pops the earliest first.
#[derive(PartialEq)]
struct Pending(f64, u64);

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

fn arrivals(cfg: &SynthChurnConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = Vec::new();
    for (k, &(start, rate)) in cfg.rate_schedule.iter().enumerate() {
        let end = cfg.rate_schedule.get(k + 1).map_or(cfg.duration_s, |s| s.0).min(cfg.duration_s);
        if rate <= 0.0 || start >= end {
            continue;
        }
        let gap = Exp::new(rate).expect("positive rate");
        let mut t = start;
        loop {
            t += gap.sample(rng);
            if t >= end {
                break;
            }
            if t > 0.0 {
                out.push(t);
            }
        }
    }
    out
}

/// Poisson arrivals with Weibull sessions. Time-0 joins are the initial
/// population; afterwards at most `max(1, ⌊ε·|G|⌋)` joins and departures
/// happen per round, and the excess waits for the next round.
pub fn generate_synth(cfg: &SynthChurnConfig) -> Result<SynthTrace, ChurnError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let session = Weibull::new(cfg.weibull_scale_min * 60.0, cfg.weibull_shape)
        .map_err(|e| ChurnError::InvalidConfig(e.to_string()))?;
    let arrivals: VecDeque<f64> = arrivals(cfg, &mut rng).into();
    let mut arrivals = arrivals;

    let mut events = Vec::new();
    let mut sessions_s = Vec::new();
    let mut departures: BinaryHeap<Pending> = BinaryHeap::new();
    let mut next_label = 0u64;
    let mut alive = 0usize;
    let mut deferred = 0u64;

    let mut admit = |t: f64, events: &mut Vec<ChurnEvent>, departures: &mut BinaryHeap<Pending>, rng: &mut ChaCha8Rng| {
        let s: f64 = session.sample(rng);
        sessions_s.push(s);
        let label = next_label;
        next_label += 1;
        events.push(ChurnEvent::join(t, format!("g{label}")));
        departures.push(Pending(t + s.max(1e-6), label));
    };

    for _ in 0..cfg.n_init {
        admit(0.0, &mut events, &mut departures, &mut rng);
    }
    alive += cfg.n_init;

    let rounds = (cfg.duration_s / cfg.round_s).ceil() as u64;
    for r in 0..rounds {
        let start = r as f64 * cfg.round_s;
        let end = (start + cfg.round_s).min(cfg.duration_s);
        let join_cap = ((cfg.eps_join * alive as f64).floor() as usize).max(1);
        let depart_cap = ((cfg.eps_depart * alive as f64).floor() as usize).max(1);

        let mut round_events: Vec<(f64, u8, ChurnEvent)> = Vec::new();
        let mut departed = 0;
        while departed < depart_cap {
            match departures.peek() {
                Some(p) if p.0 < end => {
                    let Pending(t, label) = departures.pop().unwrap();
                    let t = t.max(start);
                    round_events.push((t, 1, ChurnEvent::depart(t, format!("g{label}"))));
                    departed += 1;
                }
                _ => break,
            }
        }
        deferred += departures.iter().filter(|p| p.0 < end).count() as u64;

        let mut joined = 0;
        let mut fresh = Vec::new();
        while joined < join_cap {
            match arrivals.front() {
                Some(&t) if t < end => {
                    arrivals.pop_front();
                    let t = t.max(start);
                    let mut tmp = Vec::new();
                    admit(t, &mut tmp, &mut departures, &mut rng);
                    fresh.extend(tmp);
                    joined += 1;
                }
                _ => break,
            }
        }
        deferred += arrivals.iter().take_while(|&&t| t < end).count() as u64;
        for ev in fresh {
            round_events.push((ev.time, 0, ev));
        }
        // A same-round departure of a fresh joiner stays in the heap until the
        // next round, so only older IDs depart here and order is unambiguous.
        round_events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        alive = alive + joined - departed;
        events.extend(round_events.into_iter().map(|(_, _, e)| e));
    }
    debug_assert!(validate_events(&events).is_ok());
    Ok(SynthTrace { events, sessions_s, deferred })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub index: usize,
    pub start: f64,
    pub end: f64,
    /// Good joins in the epoch per second.
    pub rho: f64,
    pub rho_min: f64,
    pub rho_max: f64,
    pub joins: u64,
    /// False for the trailing epoch whose turnover condition never held.
    pub terminated: bool,
}

/// Finest time resolution used when two joins share a timestamp.
pub const RATE_RESOLUTION_S: f64 = 1.0;

fn finish_epoch(index: usize, start: f64, end: f64, join_times: &[f64], terminated: bool) -> EpochRecord {
    let joins = join_times.len() as u64;
    let span = (end - start).max(f64::MIN_POSITIVE);
    let rho = joins as f64 / span;
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for w in join_times.windows(2) {
        let rate = 1.0 / (w[1] - w[0]).max(RATE_RESOLUTION_S);
        lo = lo.min(rate);
        hi = hi.max(rate);
    }
    if join_times.len() < 2 {
        lo = rho;
        hi = rho;
    }
    EpochRecord { index, start, end, rho, rho_min: lo, rho_max: hi, joins, terminated }
}

/// Greedy left-to-right segmentation: an epoch ends at the first event after
/// which `|G_cur − G_prev| ≥ (3/4)|G_cur|`, with `G_prev` frozen at the
/// previous boundary. Time-0 joins form the initial population.
pub fn epoch_oracle(events: &[ChurnEvent]) -> Vec<EpochRecord> {
    let mut cur: HashSet<&str> = HashSet::new();
    let mut idx = 0;
    while idx < events.len() && events[idx].time <= 0.0 {
        let ev = &events[idx];
        match ev.kind {
            EventKind::Join => cur.insert(&ev.label),
            EventKind::Depart => cur.remove(ev.label.as_str()),
        };
        idx += 1;
    }
    let mut prev = cur.clone();
    let mut fresh = 0usize;
    let mut start = 0.0;
    let mut join_times = Vec::new();
    let mut out = Vec::new();
    for ev in &events[idx..] {
        match ev.kind {
            EventKind::Join => {
                if cur.insert(&ev.label) && !prev.contains(ev.label.as_str()) {
                    fresh += 1;
                }
                join_times.push(ev.time);
            }
            EventKind::Depart => {
                if cur.remove(ev.label.as_str()) && !prev.contains(ev.label.as_str()) {
                    fresh -= 1;
                }
            }
        }
        if !cur.is_empty() && 4 * fresh >= 3 * cur.len() {
            out.push(finish_epoch(out.len() + 1, start, ev.time, &join_times, true));
            start = ev.time;
            prev = cur.clone();
            fresh = 0;
            join_times.clear();
        }
    }
    let end = events.last().map_or(0.0, |e| e.time);
    if end > start || out.is_empty() {
        out.push(finish_epoch(out.len() + 1, start, end, &join_times, false));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochCheck {
    pub index: usize,
    /// `ρ_i/ρ_{i−1}`, absent for the first epoch.
    pub a1_ratio: Option<f64>,
    pub a2_low_ratio: f64,
    pub a2_high_ratio: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub measured: AssumptionConstants,
    pub reference: AssumptionConstants,
    pub epochs: Vec<EpochCheck>,
}

impl AssumptionReport {
    pub fn all_pass(&self) -> bool {
        self.epochs.iter().all(|e| e.pass)
    }
}

/// Extremal rate ratios over terminated epochs, clamped so every low
/// constant is ≤ 1 ≤ every high one. Each epoch passes when its own ratios
/// sit inside `reference`.
pub fn validate_assumptions(
    epochs: &[EpochRecord],
    reference: AssumptionConstants,
) -> Result<AssumptionReport, ChurnError> {
    let done: Vec<&EpochRecord> = epochs.iter().filter(|e| e.terminated).collect();
    if done.len() < 2 {
        return Err(ChurnError::TooFewEpochs(done.len()));
    }
    let mut m = AssumptionConstants { a1_low: 1.0, a1_high: 1.0, a2_low: 1.0, a2_high: 1.0 };
    let mut checks = Vec::with_capacity(done.len());
    for (k, e) in done.iter().enumerate() {
        let a1_ratio = (k > 0).then(|| e.rho / done[k - 1].rho);
        let (lo, hi) = (e.rho_min / e.rho, e.rho_max / e.rho);
        if let Some(r) = a1_ratio {
            m.a1_low = m.a1_low.min(r);
            m.a1_high = m.a1_high.max(r);
        }
        m.a2_low = m.a2_low.min(lo);
        m.a2_high = m.a2_high.max(hi);
        let a1_ok = a1_ratio.is_none_or(|r| r >= reference.a1_low && r <= reference.a1_high);
        let pass = a1_ok && lo >= reference.a2_low && hi <= reference.a2_high;
        checks.push(EpochCheck { index: e.index, a1_ratio, a2_low_ratio: lo, a2_high_ratio: hi, pass });
    }
    Ok(AssumptionReport { measured: m, reference, epochs: checks })
}

/// Assigns dense ids to trace labels in first-seen order.
#[derive(Debug, Default, Clone)]
pub struct LabelInterner {
    ids: HashMap<String, u64>,
}

impl LabelInterner {
    pub fn intern(&mut self, label: &str) -> u64 {
        let next = self.ids.len() as u64;
        *self.ids.entry(label.to_owned()).or_insert(next)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// A trace event resolved to a protocol label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoodEvent {
    pub time: f64,
    pub kind: EventKind,
    pub label: u64,
}

/// Maps trace labels onto protocol labels. The first `bootstrap_good`
/// time-0 joins become the bootstrap IDs `0..bootstrap_good` and are dropped
/// from the stream; everything else gets labels counting up from
/// `bootstrap_good`. A rejoining trace label keeps its old label only when
/// `persistent` is set.
pub fn map_trace(events: &[ChurnEvent], bootstrap_good: usize, persistent: bool) -> Vec<GoodEvent> {
    let mut current: HashMap<&str, u64> = HashMap::new();
    let mut seen: HashMap<&str, u64> = HashMap::new();
    let mut next = bootstrap_good as u64;
    let mut seeded = 0usize;
    let mut out = Vec::with_capacity(events.len());
    for ev in events {
        match ev.kind {
            EventKind::Join => {
                if ev.time <= 0.0 && seeded < bootstrap_good {
                    current.insert(&ev.label, seeded as u64);
                    seen.insert(&ev.label, seeded as u64);
                    seeded += 1;
                    continue;
                }
                let label = match seen.get(ev.label.as_str()) {
                    Some(&l) if persistent => l,
                    _ => {
                        next += 1;
                        next - 1
                    }
                };
                current.insert(&ev.label, label);
                seen.insert(&ev.label, label);
                out.push(GoodEvent { time: ev.time, kind: EventKind::Join, label });
            }
            EventKind::Depart => {
                if let Some(label) = current.remove(ev.label.as_str()) {
                    out.push(GoodEvent { time: ev.time, kind: EventKind::Depart, label });
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Lanczos approximation (g = 7, 9 terms).
    fn gamma(x: f64) -> f64 {
        const G: [f64; 9] = [
            0.999_999_999_999_809_9,
            676.520_368_121_885_1,
            -1_259.139_216_722_402_8,
            771.323_428_777_653_1,
            -176.615_029_162_140_6,
            12.507_343_278_686_905,
            -0.138_571_095_265_720_12,
            9.984_369_578_019_572e-6,
            1.505_632_735_149_311_6e-7,
        ];
        if x < 0.5 {
            return std::f64::consts::PI / ((std::f64::consts::PI * x).sin() * gamma(1.0 - x));
        }
        let x = x - 1.0;
        let mut a = G[0];
        let t = x + 7.5;
        for (i, g) in G.iter().enumerate().skip(1) {
            a += g / (x + i as f64);
        }
        (2.0 * std::f64::consts::PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * a
    }

    #[test]
    fn lanczos_matches_factorials() {
        assert!((gamma(5.0) - 24.0).abs() < 1e-9);
        assert!((gamma(0.5) - std::f64::consts::PI.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn parses_three_rows() {
        let ev = parse_trace("time_s,event,label\n0,join,a\n5,join,b\n9,depart,a\n".as_bytes()).unwrap();
        assert_eq!(ev.len(), 3);
        assert_eq!(ev[2], ChurnEvent::depart(9.0, "a"));
    }

    #[test]
    fn rejects_bad_traces() {
        let out_of_order = "time_s,event,label\n5,join,a\n4,join,b\n";
        assert!(matches!(parse_trace(out_of_order.as_bytes()), Err(ChurnError::OutOfOrder { line: 3, .. })));
        let unknown = "time_s,event,label\n0,join,a\n1,depart,b\n";
        assert!(matches!(parse_trace(unknown.as_bytes()), Err(ChurnError::UnknownDepart { .. })));
        let garbage = "time_s,event,label\n0,leave,a\n";
        assert!(matches!(parse_trace(garbage.as_bytes()), Err(ChurnError::Malformed { line: 2, .. })));
    }

    #[test]
    fn trace_round_trips() {
        let cfg = SynthChurnConfig::preset(SessionPreset::Redhat, 0.5, 30, 500.0, 9);
        let ev = generate_synth(&cfg).unwrap().events;
        let mut buf = Vec::new();
        write_trace(&ev, &mut buf).unwrap();
        assert_eq!(parse_trace(buf.as_slice()).unwrap(), ev);
    }

    #[test]
    fn zero_rate_only_departs() {
        let cfg = SynthChurnConfig::preset(SessionPreset::Debian, 0.0, 50, 2000.0, 1);
        let ev = generate_synth(&cfg).unwrap().events;
        let joins = ev.iter().filter(|e| e.kind == EventKind::Join).count();
        assert_eq!(joins, 50);
        assert!(ev.iter().filter(|e| e.kind == EventKind::Join).all(|e| e.time == 0.0));
        assert!(ev.iter().any(|e| e.kind == EventKind::Depart));
    }

    #[test]
    fn session_mean_matches_weibull() {
        let cfg = SynthChurnConfig::preset(SessionPreset::Debian, 1.0, 0, 1e4, 7);
        let trace = generate_synth(&cfg).unwrap();
        let n = trace.sessions_s.len() as f64;
        let mean = trace.sessions_s.iter().sum::<f64>() / n;
        let expected = 42.2 * 60.0 * gamma(1.0 + 1.0 / 0.38);
        assert!((mean / expected - 1.0).abs() < 0.10, "mean {mean} vs {expected}");
    }

    #[test]
    fn synth_is_deterministic_and_capped() {
        let cfg = SynthChurnConfig::preset(SessionPreset::Flatout, 20.0, 300, 300.0, 3);
        let a = generate_synth(&cfg).unwrap();
        assert_eq!(a, generate_synth(&cfg).unwrap());
        assert!(a.deferred > 0, "rate 20/s must exceed the 3/round cap");
        let mut alive = 300usize;
        let mut round = 0i64;
        let (mut j, mut d) = (0usize, 0usize);
        let mut cap = 3;
        for e in a.events.iter().filter(|e| e.time > 0.0) {
            let r = e.time.floor() as i64;
            if r != round {
                alive = alive + j - d;
                cap = (alive / 100).max(1);
                (round, j, d) = (r, 0, 0);
            }
            match e.kind {
                EventKind::Join => j += 1,
                EventKind::Depart => d += 1,
            }
            assert!(j <= cap && d <= cap, "round {r}: {j} joins, {d} departs, cap {cap}");
        }
    }

    fn joins(range: std::ops::Range<u32>, t0: f64) -> Vec<ChurnEvent> {
        range.map(|k| ChurnEvent::join(t0 + k as f64, k.to_string())).collect()
    }

    #[test]
    fn epoch_closes_at_twelve_of_sixteen() {
        let mut ev: Vec<ChurnEvent> = (1..5).map(|k| ChurnEvent::join(0.0, k.to_string())).collect();
        ev.extend(joins(5..17, 0.0));
        let epochs = epoch_oracle(&ev);
        assert!(epochs[0].terminated);
        assert_eq!(epochs[0].end, 16.0);
        assert_eq!(epochs[0].joins, 12);
        assert_eq!(epochs[0].rho, 12.0 / 16.0);
    }

    #[test]
    fn no_churn_means_one_open_epoch() {
        let ev: Vec<ChurnEvent> = (1..5).map(|k| ChurnEvent::join(0.0, k.to_string())).collect();
        let epochs = epoch_oracle(&ev);
        assert_eq!(epochs.len(), 1);
        assert!(!epochs[0].terminated);
    }

    #[test]
    fn departures_then_joins() {
        let mut ev: Vec<ChurnEvent> = (1..5).map(|k| ChurnEvent::join(0.0, k.to_string())).collect();
        ev.extend((1..4).map(|k| ChurnEvent::depart(k as f64, k.to_string())));
        ev.extend(joins(5..9, 5.0));
        let epochs = epoch_oracle(&ev);
        // One survivor plus k fresh: k ≥ (3/4)(1+k) first holds at k = 3.
        assert_eq!(epochs[0].end, 12.0);
        assert_eq!(epochs[0].joins, 3);
    }

    #[test]
    fn epochs_are_prefix_stable() {
        let cfg = SynthChurnConfig::preset(SessionPreset::Flatout, 0.5, 60, 4000.0, 11);
        let ev = generate_synth(&cfg).unwrap().events;
        let full = epoch_oracle(&ev);
        assert!(full.len() > 3);
        for cut in [ev.len() / 3, ev.len() / 2, ev.len() - 1] {
            let part = epoch_oracle(&ev[..cut]);
            let closed: Vec<_> = part.iter().filter(|e| e.terminated).collect();
            for (a, b) in closed.iter().zip(&full) {
                assert_eq!(*a, b);
            }
        }
        assert_eq!(epoch_oracle(&ev), full);
    }

    #[test]
    fn validator_needs_two_epochs() {
        let ev: Vec<ChurnEvent> = (1..5).map(|k| ChurnEvent::join(0.0, k.to_string())).collect();
        assert!(matches!(
            validate_assumptions(&epoch_oracle(&ev), AssumptionConstants::BITCOIN),
            Err(ChurnError::TooFewEpochs(0))
        ));
    }

    #[test]
    fn reported_constants_bound_every_window() {
        let cfg = SynthChurnConfig::preset(SessionPreset::Debian, 0.3, 80, 20_000.0, 5);
        let epochs = epoch_oracle(&generate_synth(&cfg).unwrap().events);
        let rep = validate_assumptions(&epochs, AssumptionConstants::BITCOIN).unwrap();
        let m = rep.measured;
        assert!(m.a1_low <= 1.0 && m.a1_high >= 1.0 && m.a2_low <= 1.0 && m.a2_high >= 1.0);
        for e in epochs.iter().filter(|e| e.terminated && e.joins >= 2) {
            assert!(m.a2_low * e.rho <= e.rho_min * (1.0 + 1e-12));
            assert!(e.rho_max <= m.a2_high * e.rho * (1.0 + 1e-12));
        }
    }

    #[test]
    fn constant_rate_keeps_epoch_ratios_near_one() {
        let mut ratios = Vec::new();
        for seed in 0..20 {
            let cfg = SynthChurnConfig {
                rate_schedule: vec![(0.0, 2.0)],
                weibull_shape: 1.0,
                weibull_scale_min: 10.0,
                n_init: 1200,
                duration_s: 6000.0,
                seed,
                round_s: 1.0,
                eps_join: 0.01,
                eps_depart: 0.01,
            };
            let epochs = epoch_oracle(&generate_synth(&cfg).unwrap().events);
            let rep = validate_assumptions(&epochs, AssumptionConstants::BITCOIN).unwrap();
            ratios.extend(rep.epochs.iter().filter_map(|e| e.a1_ratio));
        }
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        assert!((0.8..=1.25).contains(&mean), "mean epoch ratio {mean}");
    }

    #[test]
    fn trace_labels_map_onto_bootstrap_then_fresh() {
        let ev = vec![
            ChurnEvent::join(0.0, "a"),
            ChurnEvent::join(0.0, "b"),
            ChurnEvent::join(0.0, "c"),
            ChurnEvent::depart(1.0, "a"),
            ChurnEvent::join(2.0, "a"),
            ChurnEvent::depart(3.0, "a"),
        ];
        let fresh = map_trace(&ev, 2, false);
        let labels: Vec<(EventKind, u64)> = fresh.iter().map(|e| (e.kind, e.label)).collect();
        assert_eq!(
            labels,
            vec![(EventKind::Join, 2), (EventKind::Depart, 0), (EventKind::Join, 3), (EventKind::Depart, 3)]
        );
        let kept = map_trace(&ev, 2, true);
        assert_eq!(kept[2].label, 0);
    }

    #[test]
    fn derived_constants_for_bitcoin_row() {
        let c = AssumptionConstants::BITCOIN;
        assert!((c.je_low() - 5.0 / 6.0 * 0.01 * 0.0005 / 10.0).abs() < 1e-18);
        assert!((c.je_high() - 5.0 * 100.0 * 30.0 / 0.1).abs() < 1e-6);
        assert!((c.l8() - (2.0 * c.je_high()).sqrt()).abs() < 1e-9);
    }
}
