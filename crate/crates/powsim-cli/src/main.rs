//! `powsim`: run, sweep, validate and bench-puzzle, either in-process or
//! against a running `powsim-service` (`--server URL`).
//!
//! Exit codes: 0 success, 1 config error, 2 invariant violation, 3 IO error.

use clap::{Parser, Subcommand, ValueEnum};
use powsim::api::{self, ApiError, BenchRequest, SweepRequest, ValidateRequest};
use powsim::churn::AssumptionConstants;
use powsim::config::{AlgorithmName, Config, ConfigError};
use powsim::puzzle::PuzzleParams;
use powsim_client::{Client, ClientError};
use powsim_service::ErrorKind;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "powsim", version, about = "Proof-of-work Sybil defense simulator")]
struct Cli {
    /// Send the work to a powsim-service at this URL instead of running it here.
    #[arg(long, global = true)]
    server: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One simulation: ledger CSV plus a summary line on stderr.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output.csv_path`; without either the CSV goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean good spend rate for each algorithm at T = 2^e.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Exponents, e.g. `0-24` or `0,4,8-12`.
        #[arg(long, default_value = "0-24", value_parser = parse_exponents)]
        exponents: Exponents,
        /// Comma-separated; defaults to every algorithm.
        #[arg(long, value_delimiter = ',')]
        algorithms: Vec<AlgorithmName>,
        #[arg(long, default_value_t = 1)]
        runs_per_point: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Epochs and churn constants of a trace, or of a config's churn section.
    Validate {
        #[arg(long, conflicts_with = "config", required_unless_present = "config")]
        trace: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Reference::Bitcoin)]
        reference: Reference,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Hash-evaluation statistics for real puzzle solves.
    BenchPuzzle {
        #[arg(long, default_value_t = 1 << 16)]
        mu: u64,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        #[arg(long, default_value_t = 4.0)]
        cap_c: f64,
        #[arg(long, default_value = "1,2,4,8", value_delimiter = ',')]
        difficulties: Vec<u64>,
        #[arg(long, default_value_t = 20)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Reference {
    Bitcoin,
    Debian,
    Redhat,
    Flatout,
}

impl Reference {
    fn constants(self) -> AssumptionConstants {
        match self {
            Reference::Bitcoin => AssumptionConstants::BITCOIN,
            Reference::Debian => AssumptionConstants::DEBIAN,
            Reference::Redhat => AssumptionConstants::REDHAT,
            Reference::Flatout => AssumptionConstants::FLATOUT,
        }
    }
}

#[derive(Debug, Clone)]
struct Exponents(Vec<u32>);

fn parse_exponents(s: &str) -> Result<Exponents, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let num = |x: &str| x.trim().parse::<u32>().map_err(|e| format!("bad exponent {x:?}: {e}"));
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b) = (num(a)?, num(b)?);
                if a > b {
                    return Err(format!("empty range {part}"));
                }
                out.extend(a..=b);
            }
            None => out.push(num(part)?),
        }
    }
    if out.is_empty() {
        return Err("no exponents given".into());
    }
    Ok(Exponents(out))
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Io(String),
    Invariant(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Invariant(_) => 2,
            Failure::Io(_) => 3,
        }
    }
}

impl From<ApiError> for Failure {
    fn from(e: ApiError) -> Self {
        match e {
            ApiError::Config(m) => Failure::Config(m),
            ApiError::Io(m) => Failure::Io(m),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        ApiError::from(e).into()
    }
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        match e.kind() {
            ErrorKind::Config => Failure::Config(e.to_string()),
            ErrorKind::Io | ErrorKind::Internal => Failure::Io(e.to_string()),
        }
    }
}

/// Runs an operation in-process or through the service.
struct Backend {
    remote: Option<(Client, tokio::runtime::Runtime)>,
}

impl Backend {
    fn new(server: Option<String>) -> Result<Self, Failure> {
        let remote = match server {
            None => None,
            Some(url) => {
                let rt = tokio::runtime::Builder::new_current_thread()
                    .enable_all()
                    .build()
                    .map_err(|e| Failure::Io(e.to_string()))?;
                Some((Client::new(url), rt))
            }
        };
        Ok(Backend { remote })
    }

    fn call<T, L, R, F>(&self, local: L, remote: R) -> Result<T, Failure>
    where
        L: FnOnce() -> Result<T, ApiError>,
        R: FnOnce(Client) -> F,
        F: std::future::Future<Output = Result<T, ClientError>>,
    {
        match &self.remote {
            None => Ok(local()?),
            Some((client, rt)) => Ok(rt.block_on(remote(client.clone()))?),
        }
    }
}

fn emit(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::Io(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn execute(cli: Cli) -> Result<(), Failure> {
    let backend = Backend::new(cli.server)?;
    match cli.command {
        Command::Run { config, out } => {
            let cfg = &Config::load(&config)?;
            let res = backend.call(|| api::run(cfg), |c| async move { c.run(cfg).await })?;
            let out = out.or_else(|| cfg.output.csv_path.clone());
            emit(out.as_deref(), &res.csv)?;
            eprintln!("{}", res.summary_line());
            if !res.invariants_ok() {
                let s = &res.summary;
                return Err(Failure::Invariant(format!(
                    "invariant violated: population_ok={} committee_failures={} cost_bound_violations={} bad_join_violations={}",
                    s.population_ok, s.committee_failures, s.cost_bound_violations, s.bad_join_violations
                )));
            }
        }
        Command::Sweep { config, exponents, algorithms, runs_per_point, out } => {
            let req = SweepRequest {
                config: Config::load(&config)?,
                exponents: exponents.0,
                algorithms: if algorithms.is_empty() { AlgorithmName::ALL.to_vec() } else { algorithms },
                runs_per_point,
            };
            let req = &req;
            let res = backend.call(|| api::sweep(req), |c| async move { c.sweep(req).await })?;
            emit(out.as_deref(), &res.csv)?;
            if let Some(e) = res.sybilcontrol_cutoff {
                eprintln!("sybilcontrol lost its honest majority at T=2^{e}");
            }
            let broken: Vec<String> = res
                .points
                .iter()
                .filter(|p| !p.invariants_ok)
                .map(|p| format!("{}@2^{}", p.algorithm.as_str(), p.exponent))
                .collect();
            if !broken.is_empty() {
                return Err(Failure::Invariant(format!("invariant violated at {}", broken.join(", "))));
            }
        }
        Command::Validate { trace, config, reference, out } => {
            let mut req = ValidateRequest { trace_path: trace, synth: None, reference: Some(reference.constants()) };
            if let Some(path) = config {
                let cfg = Config::load(&path)?;
                match (&cfg.churn.trace_path, &cfg.churn.synth) {
                    (Some(p), _) => req.trace_path = Some(p.clone()),
                    (None, Some(s)) => req.synth = Some(cfg.synth_config(s)),
                    (None, None) => return Err(Failure::Config("config has no churn source".into())),
                }
            }
            let req = &req;
            let res = backend.call(|| api::validate(req), |c| async move { c.validate(req).await })?;
            emit(out.as_deref(), &res.csv)?;
            let passed = res.report.epochs.iter().filter(|e| e.pass).count();
            let m = res.report.measured;
            eprintln!(
                "epochs={} within_reference={}/{} a1=[{:.3}, {:.3}] a2=[{:.3}, {:.3}]",
                res.epochs.len(),
                passed,
                res.report.epochs.len(),
                m.a1_low,
                m.a1_high,
                m.a2_low,
                m.a2_high
            );
        }
        Command::BenchPuzzle { mu, delta, cap_c, difficulties, samples, seed, out } => {
            let req = BenchRequest {
                params: PuzzleParams { mu, delta, cap_c, hash_bits: 256 },
                difficulties,
                samples,
                seed,
            };
            let req = &req;
            let res = backend.call(|| api::bench_puzzle(req), |c| async move { c.bench_puzzle(req).await })?;
            emit(out.as_deref(), &res.csv)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let msg = match &f {
                Failure::Config(m) | Failure::Io(m) | Failure::Invariant(m) => m,
            };
            eprintln!("powsim: {msg}");
            ExitCode::from(f.code())
        }
    }
}
