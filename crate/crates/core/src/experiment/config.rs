//! Strict JSON experiment configuration and the bundled presets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::GeneratorOptions;
use crate::error::{Error, Result};
use crate::hilbert::{RegisterConfig, StateKind, MAX_QUBITS};
use crate::protocols::MqcMode;
use crate::spectra::NoiseChannel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegisterSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequencies: Option<Vec<f64>>,
}

impl RegisterSpec {
    pub fn uniform(n: usize, omega0: f64) -> Self {
        Self { n: Some(n), omega0: Some(omega0), frequencies: None }
    }

    pub fn resolve(&self) -> Result<RegisterConfig> {
        let freqs = match (&self.frequencies, self.n, self.omega0) {
            (Some(_), _, Some(_)) => return Err(Error::Config("register: give either frequencies or omega0, not both".into())),
            (Some(f), n, None) => {
                if let Some(n) = n {
                    if n != f.len() {
                        return Err(Error::Config(format!(
                            "register.frequencies has {} entries but register.n = {n}",
                            f.len()
                        )));
                    }
                }
                f.clone()
            }
            (None, Some(n), Some(w)) => vec![w; n],
            (None, Some(n), None) => vec![1.0; n],
            (None, None, _) => return Err(Error::Config("register needs n or frequencies".into())),
        };
        if freqs.len() > MAX_QUBITS {
            return Err(Error::Config(format!("register.n = {} exceeds the limit of {MAX_QUBITS}", freqs.len())));
        }
        RegisterConfig::new(freqs).map_err(|e| Error::Config(format!("register: {e}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProtocolSpec {
    None,
    Parity {
        idle_times: Vec<f64>,
        #[serde(default)]
        shots: u64,
        #[serde(default)]
        seed: u64,
    },
    Mqc {
        idle_times: Vec<f64>,
        #[serde(default = "default_mode")]
        mode: MqcMode,
        #[serde(default)]
        shots: u64,
        #[serde(default)]
        seed: u64,
    },
}

fn default_mode() -> MqcMode {
    MqcMode::OverlapExact
}

impl Default for ProtocolSpec {
    fn default() -> Self {
        ProtocolSpec::None
    }
}

impl ProtocolSpec {
    pub fn idle_times(&self) -> &[f64] {
        match self {
            ProtocolSpec::None => &[],
            ProtocolSpec::Parity { idle_times, .. } | ProtocolSpec::Mqc { idle_times, .. } => idle_times,
        }
    }

    pub fn set_seed(&mut self, s: u64) {
        match self {
            ProtocolSpec::None => {}
            ProtocolSpec::Parity { seed, .. } | ProtocolSpec::Mqc { seed, .. } => *seed = s,
        }
    }
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSpec {
    #[serde(default = "yes")]
    pub intensity: bool,
    #[serde(default = "yes")]
    pub partial_intensity: bool,
    #[serde(default = "yes")]
    pub antidiagonals: bool,
    #[serde(default = "yes")]
    pub detection: bool,
    /// evaluate partial intensities with per-qubit ω_α when frequencies differ
    #[serde(default)]
    pub allow_nonuniform_partial: bool,
    #[serde(default = "yes")]
    pub svg: bool,
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        Self {
            intensity: true,
            partial_intensity: true,
            antidiagonals: true,
            detection: true,
            allow_nonuniform_partial: false,
            svg: true,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    #[serde(default = "d_rel")]
    pub theta_rel: f64,
    #[serde(default = "d_len")]
    pub theta_len: f64,
    #[serde(default = "d_phi")]
    pub theta_phi: f64,
    /// consecutive samples above θ_rel needed for a correlated verdict
    #[serde(default = "d_sustain")]
    pub sustain: usize,
}

fn d_rel() -> f64 {
    0.05
}
fn d_len() -> f64 {
    0.02
}
fn d_phi() -> f64 {
    0.1
}
fn d_sustain() -> usize {
    10
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { theta_rel: d_rel(), theta_len: d_len(), theta_phi: d_phi(), sustain: d_sustain() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub n_list: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub register: RegisterSpec,
    #[serde(default)]
    pub channels: Vec<NoiseChannel>,
    pub initial_state: StateKind,
    pub t_max: f64,
    pub dt_out: f64,
    #[serde(default = "d_rate")]
    pub dt_rate: f64,
    #[serde(default)]
    pub options: GeneratorOptions,
    #[serde(default)]
    pub protocol: ProtocolSpec,
    #[serde(default)]
    pub analysis: AnalysisSpec,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

fn d_rate() -> f64 {
    0.25
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<RegisterConfig> {
        let reg = self.register.resolve()?;
        let n = reg.n();
        for (i, ch) in self.channels.iter().enumerate() {
            ch.validate(n).map_err(|e| Error::Config(format!("channels[{i}]: {e}")))?;
        }
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        pos("t_max", self.t_max)?;
        pos("dt_out", self.dt_out)?;
        pos("dt_rate", self.dt_rate)?;
        if self.dt_out < self.dt_rate {
            return Err(Error::Config("dt_out must be at least dt_rate".into()));
        }
        let ratio = self.dt_out / self.dt_rate;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio {
            return Err(Error::Config("dt_out must be a multiple of dt_rate".into()));
        }
        if self.t_max < self.dt_out {
            return Err(Error::Config("t_max must be at least dt_out".into()));
        }
        if let StateKind::Basis(s) = &self.initial_state {
            if s.len() != n || !s.chars().all(|c| c == '0' || c == '1') {
                return Err(Error::Config(format!("initial_state.basis must be a {n}-character bitstring")));
            }
        }
        for t in self.protocol.idle_times() {
            if !(*t >= 0.0 && *t <= self.t_max) {
                return Err(Error::Config(format!("protocol.idle_times entry {t} outside [0, t_max]")));
            }
        }
        let th = &self.thresholds;
        for (name, v) in [("theta_rel", th.theta_rel), ("theta_len", th.theta_len), ("theta_phi", th.theta_phi)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("thresholds.{name} must lie in (0, 1)")));
            }
        }
        if th.sustain == 0 {
            return Err(Error::Config("thresholds.sustain must be at least 1".into()));
        }
        Ok(reg)
    }

    /// Parses JSON text, resolves tabulated spectra relative to `base`, validates.
    pub fn from_json(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("line {}, column {}: {e}", e.line(), e.column())))?;
        for (i, ch) in cfg.channels.iter_mut().enumerate() {
            ch.spectrum.resolve(base).map_err(|e| Error::Config(format!("channels[{i}].spectrum: {e}")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical JSON used for the config digest.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

const PRESETS: &[(&str, &str)] = &[
    ("fig1a", include_str!("../../presets/fig1a.json")),
    ("fig1b", include_str!("../../presets/fig1b.json")),
    ("fig1c", include_str!("../../presets/fig1c.json")),
    ("fig2", include_str!("../../presets/fig2.json")),
    ("fig2d", include_str!("../../presets/fig2d.json")),
    ("dfs", include_str!("../../presets/dfs.json")),
    ("t1", include_str!("../../presets/t1.json")),
    ("idle", include_str!("../../presets/idle.json")),
    ("white_sweep", include_str!("../../presets/white_sweep.json")),
];

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|p| p.0).collect()
}

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let text = PRESETS
        .iter()
        .find(|p| p.0 == name)
        .map(|p| p.1)
        .ok_or_else(|| Error::Config(format!("unknown preset `{name}`")))?;
    ExperimentConfig::from_json(text, Path::new("."))
        .map_err(|e| Error::Config(format!("preset {name}: {e}")))
}

/// A path to a JSON file, or the name of a bundled preset.
pub fn load_config(arg: &str) -> Result<ExperimentConfig> {
    let path = Path::new(arg);
    if path.is_file() {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        return ExperimentConfig::from_json(&text, base)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())));
    }
    if PRESETS.iter().any(|p| p.0 == arg) {
        return preset(arg);
    }
    Err(Error::Config(format!(
        "`{arg}` is neither a readable file nor a preset ({})",
        preset_names().join(", ")
    )))
}
