//! Request/response operations shared by the CLI and the HTTP service.

use crate::churn::{epoch_oracle, load_trace, validate_assumptions, AssumptionConstants, AssumptionReport, EpochRecord};
use crate::churn::{generate_synth, ChurnError, ChurnEvent, SynthChurnConfig};
use crate::config::{AlgorithmName, Config, ConfigError, Experiment};
use crate::metrics::{write_csv, CostLedger, RunMeta};
use crate::puzzle::{solve, PuzzleParams, PuzzleSpec};
use crate::sim::{simulate, Summary};
use crate::sybilcontrol::simulate_sybilcontrol;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use std::time::Instant;

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
}

impl ApiError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ApiError::Config(_) => 1,
            ApiError::Io(_) => 3,
        }
    }
}

impl From<ConfigError> for ApiError {
    fn from(e: ConfigError) -> Self {
        if e.is_io() {
            ApiError::Io(e.to_string())
        } else {
            ApiError::Config(e.to_string())
        }
    }
}

impl From<ChurnError> for ApiError {
    fn from(e: ChurnError) -> Self {
        ConfigError::from(e).into()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub summary: Summary,
    /// Time the SybilControl baseline first lost its honest majority.
    pub unsafe_at: Option<f64>,
    pub csv: String,
}

impl RunOutput {
    pub fn invariants_ok(&self) -> bool {
        self.summary.invariants_ok()
    }

    /// One-line human summary.
    pub fn summary_line(&self) -> String {
        let s = &self.summary;
        format!(
            "algorithm={} T={} A={:.4} T_obs={:.4} J={:.4} purges={} bad_max={:.4} bound={:.4} invariants={}",
            s.algorithm,
            s.spend_rate,
            s.a,
            s.t,
            s.j,
            s.purges,
            s.bad_fraction_max,
            s.population_bound,
            if s.invariants_ok() { "pass" } else { "FAIL" }
        )
    }
}

fn ledger_csv(ledger: &CostLedger, summary: &Summary) -> String {
    let meta = RunMeta {
        seed: summary.seed,
        algorithm: summary.algorithm.clone(),
        spend_rate: summary.spend_rate,
        alpha: summary.alpha,
    };
    let mut buf = Vec::new();
    write_csv(&ledger.rows, &meta, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("csv is utf-8")
}

/// Runs a resolved config against already-loaded churn.
pub fn run_with_events(config: &Config, events: &[ChurnEvent]) -> Result<RunOutput, ApiError> {
    let good = config.good_events(events)?;
    let (ledger, summary, unsafe_at) = match config.experiment()? {
        Experiment::Protocol(p) => {
            let r = simulate(&p, &good).map_err(|e| ApiError::Config(e.to_string()))?;
            (r.ledger, r.summary, None)
        }
        Experiment::SybilControl(p) => {
            let r = simulate_sybilcontrol(&p, &good).map_err(|e| ApiError::Config(e.to_string()))?;
            (r.ledger, r.summary, r.unsafe_at)
        }
    };
    let csv = ledger_csv(&ledger, &summary);
    Ok(RunOutput { summary, unsafe_at, csv })
}

pub fn run(config: &Config) -> Result<RunOutput, ApiError> {
    let events = config.churn_events()?;
    run_with_events(config, &events)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRequest {
    pub config: Config,
    pub exponents: Vec<u32>,
    #[serde(default = "all_algorithms")]
    pub algorithms: Vec<AlgorithmName>,
    #[serde(default = "one_run")]
    pub runs_per_point: usize,
}

fn all_algorithms() -> Vec<AlgorithmName> {
    AlgorithmName::ALL.to_vec()
}

fn one_run() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub algorithm: AlgorithmName,
    pub exponent: u32,
    pub spend_rate: f64,
    pub mean_a: f64,
    pub mean_t: f64,
    pub mean_j: f64,
    pub runs: usize,
    /// Every run kept the bad fraction under the protocol's bound.
    pub safe: bool,
    pub invariants_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutput {
    pub points: Vec<SweepPoint>,
    /// First exponent at which SybilControl lost its honest majority.
    pub sybilcontrol_cutoff: Option<u32>,
    pub csv: String,
}

impl SweepOutput {
    pub fn series(&self, a: AlgorithmName) -> Vec<&SweepPoint> {
        self.points.iter().filter(|p| p.algorithm == a).collect()
    }
}

/// Least-squares slope of `log2(y)` against `log2(x)`.
pub fn log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.log2()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.log2()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

pub fn sweep(req: &SweepRequest) -> Result<SweepOutput, ApiError> {
    if req.exponents.is_empty() || req.algorithms.is_empty() || req.runs_per_point == 0 {
        return Err(ApiError::Config("sweep needs exponents, algorithms and runs_per_point ≥ 1".into()));
    }
    req.config.experiment()?;
    let runs: Vec<Config> = (0..req.runs_per_point)
        .map(|k| {
            let mut c = req.config.clone();
            c.sim.seed = req.config.sim.seed.wrapping_add(k as u64);
            c
        })
        .collect();
    let churn: Vec<Vec<ChurnEvent>> = runs.iter().map(|c| c.churn_events()).collect::<Result<_, _>>()?;

    let mut sorted: Vec<u32> = req.exponents.clone();
    sorted.sort_unstable();
    sorted.dedup();
    let run_point = |alg: AlgorithmName, e: u32| -> Result<SweepPoint, ApiError> {
        let rs: Vec<RunOutput> = (0..runs.len())
            .into_par_iter()
            .map(|k| {
                let mut c = runs[k].with_algorithm(alg);
                c.adversary.spend_rate = 2f64.powi(e as i32);
                run_with_events(&c, &churn[k])
            })
            .collect::<Result<_, _>>()?;
        let n = rs.len() as f64;
        Ok(SweepPoint {
            algorithm: alg,
            exponent: e,
            spend_rate: 2f64.powi(e as i32),
            mean_a: rs.iter().map(|r| r.summary.a).sum::<f64>() / n,
            mean_t: rs.iter().map(|r| r.summary.t).sum::<f64>() / n,
            mean_j: rs.iter().map(|r| r.summary.j).sum::<f64>() / n,
            runs: rs.len(),
            safe: rs.iter().all(|r| r.summary.population_ok),
            invariants_ok: rs.iter().all(|r| r.invariants_ok()),
        })
    };

    let jobs: Vec<(AlgorithmName, u32)> = req
        .algorithms
        .iter()
        .filter(|&&a| a != AlgorithmName::Sybilcontrol)
        .flat_map(|&a| sorted.iter().map(move |&e| (a, e)))
        .collect();
    let mut points: Vec<SweepPoint> = jobs.par_iter().map(|&(a, e)| run_point(a, e)).collect::<Result<_, _>>()?;

    // The baseline is run in increasing T and stops at the first unsafe point,
    // which is reported but left out of the series.
    let mut cutoff = None;
    if req.algorithms.contains(&AlgorithmName::Sybilcontrol) {
        for &e in &sorted {
            let p = run_point(AlgorithmName::Sybilcontrol, e)?;
            if !p.safe {
                cutoff = Some(e);
                break;
            }
            points.push(p);
        }
    }
    let rank = |a: AlgorithmName| req.algorithms.iter().position(|&x| x == a);
    points.sort_by_key(|p| (rank(p.algorithm), p.exponent));

    let mut csv = String::from("# mean good spend rate per (algorithm, T)\n");
    if let Some(c) = cutoff {
        csv.push_str(&format!("# sybilcontrol unsafe from T=2^{c}; later points omitted\n"));
    }
    csv.push_str("algorithm,exponent,T,mean_A,mean_T,mean_J,runs,safe,invariants_ok\n");
    for p in &points {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            p.algorithm.as_str(),
            p.exponent,
            p.spend_rate,
            p.mean_a,
            p.mean_t,
            p.mean_j,
            p.runs,
            p.safe,
            p.invariants_ok
        ));
    }
    Ok(SweepOutput { points, sybilcontrol_cutoff: cutoff, csv })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidateRequest {
    #[serde(default)]
    pub trace_path: Option<PathBuf>,
    #[serde(default)]
    pub synth: Option<SynthChurnConfig>,
    /// Constants each epoch is judged against.
    #[serde(default)]
    pub reference: Option<AssumptionConstants>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidateOutput {
    pub epochs: Vec<EpochRecord>,
    pub report: AssumptionReport,
    pub csv: String,
}

pub fn validate(req: &ValidateRequest) -> Result<ValidateOutput, ApiError> {
    let events = match (&req.trace_path, &req.synth) {
        (Some(p), None) => load_trace(p)?,
        (None, Some(s)) => generate_synth(s)?.events,
        _ => return Err(ApiError::Config("give exactly one of trace_path or synth".into())),
    };
    let epochs = epoch_oracle(&events);
    let reference = req.reference.unwrap_or(AssumptionConstants::BITCOIN);
    let report = validate_assumptions(&epochs, reference).map_err(|e| ApiError::Config(e.to_string()))?;
    let m = report.measured;
    let mut csv = format!(
        "# a1_low={} a1_high={} a2_low={} a2_high={}\n# per-epoch join rates; pass is judged against a1 {}..{} a2 {}..{}\n",
        m.a1_low, m.a1_high, m.a2_low, m.a2_high, reference.a1_low, reference.a1_high, reference.a2_low, reference.a2_high
    );
    csv.push_str("epoch,start_s,end_s,joins,rho,rho_min,rho_max,terminated,a1_ratio,pass\n");
    for e in &epochs {
        let check = report.epochs.iter().find(|c| c.index == e.index);
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            e.index,
            e.start,
            e.end,
            e.joins,
            e.rho,
            e.rho_min,
            e.rho_max,
            e.terminated,
            check.and_then(|c| c.a1_ratio).map_or(String::new(), |r| r.to_string()),
            check.map_or(String::new(), |c| c.pass.to_string()),
        ));
    }
    Ok(ValidateOutput { epochs, report, csv })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRequest {
    #[serde(default)]
    pub params: PuzzleParams,
    #[serde(default = "bench_difficulties")]
    pub difficulties: Vec<u64>,
    #[serde(default = "bench_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
}

fn bench_difficulties() -> Vec<u64> {
    vec![1, 2, 4, 8]
}

fn bench_samples() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub difficulty: u64,
    pub samples: usize,
    pub mean_evaluations: f64,
    pub std_evaluations: f64,
    pub expected_evaluations: f64,
    pub mean_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchOutput {
    pub rows: Vec<BenchRow>,
    pub csv: String,
}

pub fn bench_puzzle(req: &BenchRequest) -> Result<BenchOutput, ApiError> {
    req.params.validate().map_err(|e| ApiError::Config(e.to_string()))?;
    if req.samples == 0 || req.difficulties.contains(&0) {
        return Err(ApiError::Config("samples and difficulties must be positive".into()));
    }
    let mut rows = Vec::new();
    for &h in &req.difficulties {
        let timed: Vec<(u64, f64)> = (0..req.samples)
            .into_par_iter()
            .map(|i| {
                let key = format!("bench:{i}").into_bytes();
                let spec = PuzzleSpec::entrance(h, key, i as i64);
                let started = Instant::now();
                let sol = solve(&spec, &req.params, req.seed.wrapping_add(i as u64)).expect("validated params");
                (sol.evaluations, started.elapsed().as_secs_f64() * 1e3)
            })
            .collect();
        let n = timed.len() as f64;
        let mean = timed.iter().map(|t| t.0 as f64).sum::<f64>() / n;
        let var = timed.iter().map(|t| (t.0 as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        rows.push(BenchRow {
            difficulty: h,
            samples: req.samples,
            mean_evaluations: mean,
            std_evaluations: var.sqrt(),
            expected_evaluations: h as f64 * (1.0 - req.params.delta) * req.params.mu as f64,
            mean_ms: timed.iter().map(|t| t.1).sum::<f64>() / n,
        });
    }
    let mut csv = format!(
        "# mu={} delta={} cap_c={} solutions_per_puzzle={}\n",
        req.params.mu,
        req.params.delta,
        req.params.cap_c,
        req.params.required_solutions()
    );
    csv.push_str("difficulty,samples,mean_evaluations,std_evaluations,expected_evaluations,mean_ms\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{:.3}\n",
            r.difficulty, r.samples, r.mean_evaluations, r.std_evaluations, r.expected_evaluations, r.mean_ms
        ));
    }
    Ok(BenchOutput { rows, csv })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(name: &str) -> Config {
        Config::from_json(&format!(
            r#"{{
                "bootstrap": {{"n0": 200, "alpha": 0.05, "init_duration": 2000}},
                "protocol": {{"name": "{name}"}},
                "adversary": {{"strategy": "uniform_optimal", "spend_rate": 4}},
                "churn": {{"synth": {{"preset": "debian", "rate": 0.2}}}},
                "sim": {{"duration_s": 400, "seed": 9}}
            }}"#
        ))
        .unwrap()
    }

    #[test]
    fn run_is_byte_stable() {
        let a = run(&config("gmcom")).unwrap();
        let b = run(&config("gmcom")).unwrap();
        assert_eq!(a.csv, b.csv);
        assert!(a.csv.starts_with("# seed=9 algorithm=gmcom"));
        assert!(a.summary_line().contains("invariants="));
    }

    #[test]
    fn sweep_emits_one_point_per_pair() {
        let req = SweepRequest {
            config: config("ccom"),
            exponents: vec![0, 2],
            algorithms: vec![AlgorithmName::Ccom, AlgorithmName::Sybilcontrol],
            runs_per_point: 2,
        };
        let out = sweep(&req).unwrap();
        assert_eq!(out.points.len(), 4);
        assert_eq!(out.csv.lines().filter(|l| l.starts_with("ccom,")).count(), 2);
    }

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<(f64, f64)> = (0..8).map(|e| (2f64.powi(e), 3.0 * 2f64.powf(0.5 * e as f64))).collect();
        assert!((log_slope(&pts) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn bench_reports_expected_work() {
        let req = BenchRequest {
            params: PuzzleParams { mu: 1 << 10, delta: 0.1, cap_c: 1.0, hash_bits: 256 },
            difficulties: vec![1, 2],
            samples: 4,
            seed: 1,
        };
        let out = bench_puzzle(&req).unwrap();
        assert_eq!(out.rows.len(), 2);
        assert_eq!(out.rows[1].expected_evaluations, 2.0 * 0.9 * 1024.0);
    }

    #[test]
    fn validate_requires_one_source() {
        let req = ValidateRequest { trace_path: None, synth: None, reference: None };
        assert!(matches!(validate(&req), Err(ApiError::Config(_))));
    }
}
