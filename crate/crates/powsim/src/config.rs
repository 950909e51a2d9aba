//! JSON experiment configuration and its resolution into simulator inputs.

use crate::adversary::AdversaryConfig;
use crate::ccom::CComConfig;
use crate::churn::{
    generate_synth, load_trace, map_trace, AssumptionConstants, ChurnError, ChurnEvent, GoodEvent, RateSchedule,
    SessionPreset, SynthChurnConfig,
};
use crate::gmcom::{GMComConfig, Heuristics, WindowScope};
use crate::sim::{ProtocolConfig, SimParams};
use crate::sybilcontrol::{SCConfig, SCParams, Topology};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot parse configuration: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("churn input: {0}")]
    Churn(ChurnError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl ConfigError {
    /// IO failures are distinguished from bad input.
    pub fn is_io(&self) -> bool {
        matches!(self, ConfigError::Io(_) | ConfigError::Churn(ChurnError::Io(_)))
    }
}

impl From<ChurnError> for ConfigError {
    fn from(e: ChurnError) -> Self {
        ConfigError::Churn(e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapSection {
    pub n0: usize,
    pub alpha: f64,
    /// Length of the initialization phase; `n0 / init_duration` seeds the
    /// join-rate estimate.
    pub init_duration: f64,
    #[serde(default = "three")]
    pub committee_c: f64,
}

fn one() -> f64 {
    1.0
}

fn three() -> f64 {
    3.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlgorithmName {
    Ccom,
    Gmcom,
    Gmch1,
    Gmch2,
    Sybilcontrol,
}

impl AlgorithmName {
    pub const ALL: [AlgorithmName; 5] =
        [AlgorithmName::Ccom, AlgorithmName::Gmcom, AlgorithmName::Gmch1, AlgorithmName::Gmch2, AlgorithmName::Sybilcontrol];

    pub fn as_str(&self) -> &'static str {
        match self {
            AlgorithmName::Ccom => "ccom",
            AlgorithmName::Gmcom => "gmcom",
            AlgorithmName::Gmch1 => "gmch1",
            AlgorithmName::Gmch2 => "gmch2",
            AlgorithmName::Sybilcontrol => "sybilcontrol",
        }
    }
}

impl std::str::FromStr for AlgorithmName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL.into_iter().find(|a| a.as_str() == s).ok_or_else(|| format!("unknown algorithm {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSection {
    pub name: AlgorithmName,
    #[serde(default)]
    pub purge_fraction: Option<f64>,
    #[serde(default)]
    pub generalized: bool,
    /// Overrides the heuristics implied by `name`.
    #[serde(default)]
    pub heuristics: Option<Heuristics>,
    #[serde(default = "default_accuracy")]
    pub detector_accuracy: f64,
    #[serde(default)]
    pub window_scope: WindowScope,
    #[serde(default)]
    pub assumptions: Option<AssumptionConstants>,
    #[serde(default)]
    pub test_period_s: Option<f64>,
    #[serde(default)]
    pub join_difficulty: Option<u64>,
    #[serde(default)]
    pub topology: Topology,
}

fn default_accuracy() -> f64 {
    0.98
}

impl ProtocolSection {
    pub fn named(name: AlgorithmName) -> Self {
        ProtocolSection {
            name,
            purge_fraction: None,
            generalized: false,
            heuristics: None,
            detector_accuracy: default_accuracy(),
            window_scope: WindowScope::Sliding,
            assumptions: None,
            test_period_s: None,
            join_difficulty: None,
            topology: Topology::Complete,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    #[serde(default)]
    pub preset: Option<SessionPreset>,
    #[serde(default)]
    pub weibull_shape: Option<f64>,
    #[serde(default)]
    pub weibull_scale_min: Option<f64>,
    #[serde(default)]
    pub rate: Option<f64>,
    #[serde(default)]
    pub rate_schedule: Option<RateSchedule>,
    /// Defaults to the bootstrap good count.
    #[serde(default)]
    pub n_init: Option<usize>,
    /// Defaults to the simulation seed.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub eps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChurnSection {
    #[serde(default)]
    pub trace_path: Option<PathBuf>,
    #[serde(default)]
    pub synth: Option<SynthSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub duration_s: f64,
    pub seed: u64,
    #[serde(default = "one")]
    pub round_s: f64,
    #[serde(default)]
    pub delta_rounds: f64,
    #[serde(default)]
    pub persistent_labels: Option<bool>,
    #[serde(default = "yes")]
    pub fold: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default)]
    pub csv_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub bootstrap: BootstrapSection,
    pub protocol: ProtocolSection,
    #[serde(default)]
    pub adversary: AdversaryConfig,
    pub churn: ChurnSection,
    pub sim: SimSection,
    #[serde(default)]
    pub output: OutputSection,
}

/// What a config resolves to.
#[derive(Debug, Clone, PartialEq)]
pub enum Experiment {
    Protocol(SimParams),
    SybilControl(SCParams),
}

impl Experiment {
    pub fn seed(&self) -> u64 {
        match self {
            Experiment::Protocol(p) => p.seed,
            Experiment::SybilControl(p) => p.seed,
        }
    }
}

pub fn bootstrap_good_count(n0: usize, alpha: f64) -> usize {
    n0 - (alpha * n0 as f64 + 1e-9).floor() as usize
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Config = serde_json::from_str(text)?;
        cfg.experiment()?;
        cfg.churn_check()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn churn_check(&self) -> Result<(), ConfigError> {
        match (&self.churn.trace_path, &self.churn.synth) {
            (Some(_), Some(_)) => Err(ConfigError::Invalid("churn: give trace_path or synth, not both".into())),
            (None, None) => Err(ConfigError::Invalid("churn: one of trace_path or synth is required".into())),
            (None, Some(s)) => self.synth_config(s).validate().map_err(Into::into),
            _ => Ok(()),
        }
    }

    pub fn good_bootstrap(&self) -> usize {
        bootstrap_good_count(self.bootstrap.n0, self.bootstrap.alpha)
    }

    pub fn synth_config(&self, s: &SynthSection) -> SynthChurnConfig {
        let (shape, scale) = s.preset.unwrap_or(SessionPreset::Debian).weibull();
        let schedule = s.rate_schedule.clone().unwrap_or_else(|| vec![(0.0, s.rate.unwrap_or(0.1))]);
        SynthChurnConfig {
            rate_schedule: schedule,
            weibull_shape: s.weibull_shape.unwrap_or(shape),
            weibull_scale_min: s.weibull_scale_min.unwrap_or(scale),
            n_init: s.n_init.unwrap_or_else(|| self.good_bootstrap()),
            duration_s: self.sim.duration_s,
            seed: s.seed.unwrap_or(self.sim.seed),
            round_s: 1.0,
            eps_join: s.eps.unwrap_or(0.01),
            eps_depart: s.eps.unwrap_or(0.01),
        }
    }

    pub fn churn_events(&self) -> Result<Vec<ChurnEvent>, ConfigError> {
        match (&self.churn.trace_path, &self.churn.synth) {
            (Some(p), None) => Ok(load_trace(p)?),
            (None, Some(s)) => Ok(generate_synth(&self.synth_config(s))?.events),
            _ => Err(ConfigError::Invalid("churn: exactly one of trace_path or synth".into())),
        }
    }

    pub fn experiment(&self) -> Result<Experiment, ConfigError> {
        let b = &self.bootstrap;
        let p = &self.protocol;
        let invalid = |m: String| ConfigError::Invalid(m);
        let experiment = match p.name {
            AlgorithmName::Ccom => {
                let c = CComConfig {
                    purge_fraction: p.purge_fraction.unwrap_or(1.0 / 3.0),
                    alpha: b.alpha,
                    generalized: p.generalized,
                };
                Experiment::Protocol(self.sim_params(ProtocolConfig::Ccom(c)))
            }
            AlgorithmName::Gmcom | AlgorithmName::Gmch1 | AlgorithmName::Gmch2 => {
                let implied = match p.name {
                    AlgorithmName::Gmch1 => Heuristics::GMCH1,
                    AlgorithmName::Gmch2 => Heuristics::GMCH2,
                    _ => Heuristics::NONE,
                };
                let g = GMComConfig {
                    purge_fraction: p.purge_fraction.unwrap_or(1.0 / 11.0),
                    alpha: b.alpha,
                    heuristics: p.heuristics.unwrap_or(implied),
                    detector_accuracy: p.detector_accuracy,
                    window_scope: p.window_scope,
                    assumptions: p.assumptions.unwrap_or(AssumptionConstants::BITCOIN),
                    ..GMComConfig::default()
                };
                Experiment::Protocol(self.sim_params(ProtocolConfig::Gmcom(g)))
            }
            AlgorithmName::Sybilcontrol => Experiment::SybilControl(SCParams {
                n0: b.n0,
                alpha: b.alpha,
                config: SCConfig {
                    test_period_s: p.test_period_s.unwrap_or(10.0),
                    join_difficulty: p.join_difficulty.unwrap_or(1),
                    topology: p.topology,
                },
                adversary: self.adversary,
                duration_s: self.sim.duration_s,
                seed: self.sim.seed,
            }),
        };
        match &experiment {
            Experiment::Protocol(sp) => sp.validate().map_err(invalid)?,
            Experiment::SybilControl(sc) => {
                sc.config.validate().map_err(invalid)?;
                sc.adversary.validate().map_err(invalid)?;
                if !(0.0..0.5).contains(&sc.alpha) {
                    return Err(invalid(format!("alpha {} must lie in [0, 1/2)", sc.alpha)));
                }
                if !(sc.duration_s > 0.0) {
                    return Err(invalid("duration must be positive".into()));
                }
            }
        }
        if b.n0 == 0 {
            return Err(invalid("n0 must be positive".into()));
        }
        Ok(experiment)
    }

    fn sim_params(&self, protocol: ProtocolConfig) -> SimParams {
        SimParams {
            n0: self.bootstrap.n0,
            alpha: self.bootstrap.alpha,
            init_duration_s: self.bootstrap.init_duration,
            committee_c: self.bootstrap.committee_c,
            protocol,
            adversary: self.adversary,
            duration_s: self.sim.duration_s,
            seed: self.sim.seed,
            round_s: self.sim.round_s,
            delta_rounds: self.sim.delta_rounds,
            persistent_labels: self.sim.persistent_labels,
            fold: self.sim.fold,
        }
    }

    /// Good churn resolved onto protocol labels for this experiment.
    pub fn good_events(&self, events: &[ChurnEvent]) -> Result<Vec<GoodEvent>, ConfigError> {
        let persistent = match self.experiment()? {
            Experiment::Protocol(p) => p.persistent(),
            Experiment::SybilControl(_) => false,
        };
        Ok(map_trace(events, self.good_bootstrap(), persistent))
    }

    /// The same experiment with another algorithm, keeping everything else.
    pub fn with_algorithm(&self, name: AlgorithmName) -> Config {
        let mut c = self.clone();
        c.protocol.name = name;
        c.protocol.heuristics = None;
        c
    }
}
