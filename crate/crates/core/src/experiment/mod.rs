//! Orchestration: config → rate table → evolution → analyses → artifacts.

pub mod config;
pub mod detect;
pub mod output;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use ndarray::Array2;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::dynamics::{evolve_at, EvolveOptions, GeneratorContext, Trajectory};
use crate::error::{Error, Result};
use crate::hilbert::{initial_state, DensityMatrix, RegisterConfig, StateKind, MAX_QUBITS};
use crate::observables::{fit_decay, intensity_trace, IntensityTrace};
use crate::protocols::{readout, rho_k_exact, ProtocolKind, Readout};
use crate::spectra::Coupling;
use crate::C64;

pub use config::{load_config, preset, preset_names, ExperimentConfig, ProtocolSpec, RegisterSpec, Thresholds};
pub use detect::{CorrelationLength, DetectionReport, ScalingFit, Verdict};

/// Everything a run computes, before anything touches the disk.
#[derive(Clone, Debug)]
pub struct Simulation {
    pub config: ExperimentConfig,
    pub register: RegisterConfig,
    /// states on the dt_out grid
    pub trajectory: Trajectory,
    pub intensity: Option<IntensityTrace>,
    pub protocol: Option<ProtocolRecord>,
    pub report: Option<DetectionReport>,
    pub runtimes: BTreeMap<&'static str, f64>,
}

#[derive(Clone, Debug)]
pub struct ProtocolRecord {
    pub idle_times: Vec<f64>,
    pub readouts: Vec<Readout>,
    /// exact ρ^(k) of the prepared state, the reference for normalized line shapes
    pub reference: BTreeMap<i32, C64>,
}

impl ProtocolRecord {
    fn latest_rho_k(&self) -> Option<(f64, &BTreeMap<i32, C64>)> {
        let mut best: Option<(f64, &BTreeMap<i32, C64>)> = None;
        for (t, r) in self.idle_times.iter().zip(&self.readouts) {
            if let Readout::Parity { rho_k, .. } = r {
                if best.map_or(true, |b| *t >= b.0) {
                    best = Some((*t, rho_k));
                }
            }
        }
        best
    }
}

fn protocol_kind(spec: &ProtocolSpec) -> Option<(ProtocolKind, u64, u64)> {
    match spec {
        ProtocolSpec::None => None,
        ProtocolSpec::Parity { shots, seed, .. } => Some((ProtocolKind::Parity, *shots, *seed)),
        ProtocolSpec::Mqc { mode, shots, seed, .. } => Some((ProtocolKind::Mqc { mode: *mode }, *shots, *seed)),
    }
}

fn output_grid(cfg: &ExperimentConfig) -> Vec<f64> {
    let count = (cfg.t_max / cfg.dt_out + 1e-9).floor() as usize;
    (0..=count).map(|k| k as f64 * cfg.dt_out).collect()
}

fn timed<T>(runtimes: &mut BTreeMap<&'static str, f64>, stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f().map_err(|e| e.in_stage(stage));
    runtimes.insert(stage, start.elapsed().as_secs_f64());
    out
}

/// Runs every configured stage in memory.
pub fn simulate(cfg: &ExperimentConfig) -> Result<Simulation> {
    let mut runtimes = BTreeMap::new();
    let register = cfg.validate().map_err(|e| e.in_stage("config"))?;
    let n = register.n();
    let ctx = timed(&mut runtimes, "rates", || {
        GeneratorContext::new(register.clone(), cfg.channels.clone(), cfg.t_max, cfg.dt_rate, cfg.options)
    })?;
    let rho0 = initial_state(&cfg.initial_state, n).map_err(|e| e.in_stage("config"))?;

    let grid = output_grid(cfg);
    let idle = cfg.protocol.idle_times().to_vec();
    let mut all: Vec<f64> = grid.iter().chain(&idle).cloned().collect();
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    all.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * b.abs().max(1.0));
    let locate = |t: f64| all.partition_point(|x| *x < t - 1e-9 * t.abs().max(1.0));

    let full = timed(&mut runtimes, "evolve", || evolve_at(&ctx, &rho0, &all, &EvolveOptions::default()))?;
    let trajectory = Trajectory {
        times: grid.clone(),
        states: grid.iter().map(|t| full.states[locate(*t)].clone()).collect(),
        stats: full.stats.clone(),
    };

    let intensity = if cfg.analysis.intensity {
        Some(timed(&mut runtimes, "intensity", || {
            let mut tr = intensity_trace(&ctx, &trajectory, cfg.analysis.allow_nonuniform_partial)?;
            if !cfg.analysis.partial_intensity {
                for p in tr.i_corr_partial.iter_mut().chain(std::iter::once(&mut tr.i_nonsecular)) {
                    p.iter_mut().for_each(|v| *v = f64::NAN);
                }
            }
            Ok(tr)
        })?)
    } else {
        None
    };

    let protocol = match protocol_kind(&cfg.protocol) {
        None => None,
        Some((kind, shots, seed)) => Some(timed(&mut runtimes, "protocol", || {
            let readouts = idle
                .iter()
                .enumerate()
                .map(|(i, t)| readout(&full.states[locate(*t)], &kind, shots, seed, i))
                .collect::<Result<Vec<_>>>()?;
            Ok(ProtocolRecord { idle_times: idle.clone(), readouts, reference: rho_k_exact(&rho0) })
        })?),
    };

    let mut sim = Simulation {
        config: cfg.clone(),
        register,
        trajectory,
        intensity,
        protocol,
        report: None,
        runtimes,
    };
    if cfg.analysis.detection {
        let mut rt = std::mem::take(&mut sim.runtimes);
        let report = timed(&mut rt, "detect", || detection_report(&sim))?;
        sim.runtimes = rt;
        sim.report = Some(report);
    }
    Ok(sim)
}

fn detection_report(sim: &Simulation) -> Result<DetectionReport> {
    let th = &sim.config.thresholds;
    let (relax, length) = match &sim.intensity {
        Some(tr) => (
            detect::relaxation_verdict(&tr.i_total, &tr.i_corr, th),
            detect::correlation_length(&tr.i_corr_partial, th),
        ),
        None => (detect::relaxation_verdict(&[], &[], th), None),
    };
    let deph = match &sim.protocol {
        Some(p) => detect::dephasing_verdict(&p.reference, p.latest_rho_k(), th),
        None => detect::dephasing_verdict(&BTreeMap::new(), None, th),
    };
    let scaling = match &sim.config.sweep {
        Some(s) => Some(sweep_n(&sim.config, &s.n_list)?),
        None => None,
    };
    Ok(DetectionReport {
        relaxation_correlated: relax,
        correlation_length_estimate: length,
        dephasing_correlated: deph,
        superdecoherence_scaling: scaling,
        thresholds: *th,
    })
}

/// Summary of a completed `run`.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub files: Vec<String>,
    pub simulation: Simulation,
}

/// Simulates, then writes every artifact into `out`; nothing is left behind on failure.
pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<RunOutcome> {
    let mut sim = simulate(cfg)?;
    let mut dir = output::OutputDir::create(out).map_err(|e| e.in_stage("write"))?;
    let start = Instant::now();
    match write_artifacts(&sim, &mut dir) {
        Ok(()) => {}
        Err(e) => {
            dir.rollback();
            return Err(e.in_stage("write"));
        }
    }
    sim.runtimes.insert("write", start.elapsed().as_secs_f64());
    if let Err(e) = write_manifest(&sim, &mut dir) {
        dir.rollback();
        return Err(e.in_stage("write"));
    }
    Ok(RunOutcome { dir: out.to_path_buf(), files: dir.files(), simulation: sim })
}

fn bits(l: usize, n: usize) -> String {
    format!("{l:0n$b}")
}

fn write_artifacts(sim: &Simulation, dir: &mut output::OutputDir) -> Result<()> {
    use output::{csv_bytes, num};
    let n = sim.register.n();
    let cfg = &sim.config;
    if let Some(tr) = &sim.intensity {
        let mut header: Vec<String> = ["t", "W", "I_total", "I_local", "I_corr"].iter().map(|s| s.to_string()).collect();
        header.extend((1..=n).map(|k| format!("I_corr_{k}")));
        header.extend((1..=n).map(|a| format!("Z_{a}")));
        header.push("min_eig".into());
        let rows = (0..tr.times.len()).map(|i| {
            let mut r = vec![num(tr.times[i]), num(tr.w[i]), num(tr.i_total[i]), num(tr.i_local[i]), num(tr.i_corr[i])];
            r.extend(tr.i_corr_partial.iter().map(|p| num(p[i])));
            r.extend(tr.zexp.iter().map(|z| num(z[i])));
            r.push(num(tr.min_eigenvalue[i]));
            r
        });
        dir.write("intensity.csv", &csv_bytes(&header, rows)?)?;
        let rows = (0..tr.times.len()).map(|i| vec![num(tr.times[i]), num(tr.i_nonsecular[i])]);
        dir.write("intensity_nonsecular.csv", &csv_bytes(&["t".into(), "I_nonsecular".into()], rows)?)?;
        if cfg.analysis.svg {
            let mut series = vec![
                ("I_total".to_string(), tr.i_total.clone()),
                ("I_local".to_string(), tr.i_local.clone()),
                ("I_corr".to_string(), tr.i_corr.clone()),
            ];
            if cfg.analysis.partial_intensity {
                series.extend(tr.i_corr_partial.iter().enumerate().map(|(k, p)| (format!("I_corr_{}", k + 1), p.clone())));
            }
            dir.write("intensity.svg", output::svg_lines("intensity", "t", &tr.times, &series).as_bytes())?;
        }
    }
    if cfg.analysis.antidiagonals {
        let d = 1usize << n;
        let pairs: Vec<usize> = (0..d).filter(|l| l >> (n - 1) == 0).collect();
        let mut header = vec!["t".to_string()];
        for l in &pairs {
            header.push(format!("Re_{}", bits(*l, n)));
            header.push(format!("Im_{}", bits(*l, n)));
        }
        let traj = &sim.trajectory;
        let rows = traj.times.iter().zip(&traj.states).map(|(t, rho)| {
            let mut r = vec![num(*t)];
            for l in &pairs {
                let z = rho.mat[[(d - 1) ^ l, *l]];
                r.push(num(z.re));
                r.push(num(z.im));
            }
            r
        });
        dir.write("antidiagonals.csv", &csv_bytes(&header, rows)?)?;
    }
    if let Some(p) = &sim.protocol {
        let mut rho_rows = Vec::new();
        let mut mqc_rows = Vec::new();
        for (idx, (t, r)) in p.idle_times.iter().zip(&p.readouts).enumerate() {
            match r {
                Readout::Parity { trace, rho_k } => {
                    let rows = trace.phis.iter().zip(&trace.values).map(|(a, b)| vec![num(*a), num(*b)]);
                    dir.write(&format!("parity_t{idx}.csv"), &csv_bytes(&["phi".into(), "P".into()], rows)?)?;
                    for (k, z) in rho_k {
                        rho_rows.push(vec![num(*t), k.to_string(), num(z.re), num(z.im), num(z.norm())]);
                    }
                }
                Readout::Mqc { trace, intensities } => {
                    let rows = trace.phis.iter().zip(&trace.values).map(|(a, b)| vec![num(*a), num(*b)]);
                    dir.write(&format!("mqc_t{idx}.csv"), &csv_bytes(&["phi".into(), "S".into()], rows)?)?;
                    for (q, v) in intensities {
                        mqc_rows.push(vec![num(*t), q.to_string(), num(*v)]);
                    }
                }
            }
        }
        if !rho_rows.is_empty() {
            let header: Vec<String> = ["idle_t", "k", "Re", "Im", "abs"].iter().map(|s| s.to_string()).collect();
            dir.write("rho_k.csv", &csv_bytes(&header, rho_rows)?)?;
            if cfg.analysis.svg {
                let series: Vec<(String, Vec<f64>)> = p
                    .reference
                    .iter()
                    .filter(|(_, z0)| z0.norm() > 0.0)
                    .map(|(k, z0)| {
                        let ys = p.readouts.iter().map(|r| match r {
                            Readout::Parity { rho_k, .. } => rho_k.get(k).map_or(f64::NAN, |z| z.norm() / z0.norm()),
                            _ => f64::NAN,
                        });
                        (format!("k={k}"), ys.collect())
                    })
                    .collect();
                dir.write("rho_k.svg", output::svg_lines("|rho^(k)(t)| / |rho^(k)(0)|", "idle time", &p.idle_times, &series).as_bytes())?;
            }
        }
        if !mqc_rows.is_empty() {
            let header: Vec<String> = ["idle_t", "q", "I"].iter().map(|s| s.to_string()).collect();
            dir.write("mqc_intensities.csv", &csv_bytes(&header, mqc_rows)?)?;
        }
    }
    if let Some(rep) = &sim.report {
        let mut text = serde_json::to_string_pretty(rep).map_err(|e| Error::Invalid(e.to_string()))?;
        text.push('\n');
        dir.write("report.json", text.as_bytes())?;
    }
    Ok(())
}

#[derive(Serialize)]
struct Conservation {
    max_trace_error: f64,
    max_hermiticity_error: f64,
    min_eigenvalue: f64,
}

fn write_manifest(sim: &Simulation, dir: &mut output::OutputDir) -> Result<()> {
    let canonical = sim.config.canonical_json();
    let created = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let min_eig = sim
        .intensity
        .as_ref()
        .map(|tr| tr.min_eigenvalue.iter().cloned().fold(f64::INFINITY, f64::min))
        .unwrap_or_else(|| sim.trajectory.states.iter().map(|s| s.min_eigenvalue()).fold(f64::INFINITY, f64::min));
    let manifest = json!({
        "package": "corrnoise",
        "version": env!("CARGO_PKG_VERSION"),
        "config_digest": output::sha256_hex(canonical.as_bytes()),
        "config": serde_json::from_str::<Value>(&canonical).unwrap_or(Value::Null),
        "created_unix": created,
        "runtimes_s": sim.runtimes,
        "integrator": sim.trajectory.stats,
        "conservation": Conservation {
            max_trace_error: sim.trajectory.max_trace_error(),
            max_hermiticity_error: sim.trajectory.max_hermiticity_error(),
            min_eigenvalue: min_eig,
        },
        "files": dir.hashes(),
    });
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Invalid(e.to_string()))?;
    text.push('\n');
    dir.write("manifest.json", text.as_bytes())
}

/// Detection on a freshly simulated config.
pub fn detect(cfg: &ExperimentConfig) -> Result<DetectionReport> {
    let mut cfg = cfg.clone();
    cfg.analysis.detection = true;
    cfg.analysis.intensity = true;
    simulate(&cfg)?.report.ok_or_else(|| Error::Invalid("detection produced no report".into()))
}

/// Detection on the CSV artifacts of an earlier run.
pub fn detect_dir(dir: &Path, th: &Thresholds) -> Result<DetectionReport> {
    let path = dir.join("intensity.csv");
    let (relax, length) = if path.is_file() {
        let cols = output::read_columns(&path)?;
        let need = |name: &str| {
            cols.get(name).cloned().ok_or_else(|| Error::Config(format!("{}: missing column {name}", path.display())))
        };
        let n = cols.keys().filter(|k| k.starts_with("Z_")).count();
        let partial = (1..=n).map(|k| need(&format!("I_corr_{k}"))).collect::<Result<Vec<_>>>()?;
        (
            detect::relaxation_verdict(&need("I_total")?, &need("I_corr")?, th),
            detect::correlation_length(&partial, th),
        )
    } else {
        (detect::relaxation_verdict(&[], &[], th), None)
    };
    let path = dir.join("rho_k.csv");
    let deph = if path.is_file() {
        let cols = output::read_columns(&path)?;
        let get = |name: &str| {
            cols.get(name).ok_or_else(|| Error::Config(format!("{}: missing column {name}", path.display())))
        };
        let (ts, ks, re, im) = (get("idle_t")?, get("k")?, get("Re")?, get("Im")?);
        let mut by_time: Vec<(f64, BTreeMap<i32, C64>)> = Vec::new();
        for i in 0..ts.len() {
            if by_time.last().map_or(true, |b| b.0 != ts[i]) {
                by_time.push((ts[i], BTreeMap::new()));
            }
            by_time.last_mut().unwrap().1.insert(ks[i] as i32, C64::new(re[i], im[i]));
        }
        let reference = by_time.iter().find(|b| b.0 == 0.0).map(|b| b.1.clone()).unwrap_or_default();
        let latest = by_time.iter().max_by(|a, b| a.0.partial_cmp(&b.0).unwrap()).map(|b| (b.0, &b.1));
        detect::dephasing_verdict(&reference, latest, th)
    } else {
        detect::dephasing_verdict(&BTreeMap::new(), None, th)
    };
    if relax.peak_ratio.is_none() && deph.spread.is_none() && !dir.join("intensity.csv").is_file() && !path.is_file() {
        return Err(Error::Config(format!("{}: no intensity.csv or rho_k.csv to analyse", dir.display())));
    }
    Ok(DetectionReport {
        relaxation_correlated: relax,
        correlation_length_estimate: length,
        dephasing_correlated: deph,
        superdecoherence_scaling: None,
        thresholds: *th,
    })
}

/// Decay rate of |ρ^(N)| per register size, and the log-log slope p of rate ∝ N^p.
pub fn sweep_n(base: &ExperimentConfig, n_list: &[usize]) -> Result<ScalingFit> {
    let mut ns = n_list.to_vec();
    ns.sort_unstable();
    ns.dedup();
    if ns.len() < 3 {
        return Err(Error::Fit(format!("sweep needs at least 3 distinct N, got {}", ns.len())));
    }
    if let Some(bad) = ns.iter().find(|n| **n == 0 || **n > MAX_QUBITS) {
        return Err(Error::Config(format!("sweep N = {bad} outside 1..={MAX_QUBITS}")));
    }
    if matches!(base.initial_state, StateKind::Basis(_)) {
        return Err(Error::Config("sweep needs a size-independent initial state".into()));
    }
    let omega0 = match (&base.register.omega0, &base.register.frequencies) {
        (Some(w), _) => *w,
        (None, Some(f)) if !f.is_empty() => f.iter().sum::<f64>() / f.len() as f64,
        _ => 1.0,
    };
    let rates = ns
        .par_iter()
        .map(|&n| -> Result<f64> {
            let mut cfg = base.clone();
            cfg.register = RegisterSpec::uniform(n, omega0);
            cfg.sweep = None;
            let register = cfg.validate()?;
            let ctx = GeneratorContext::new(register, cfg.channels.clone(), cfg.t_max, cfg.dt_rate, cfg.options)?;
            let rho0 = initial_state(&cfg.initial_state, n)?;
            let times = match cfg.protocol.idle_times() {
                t if t.len() >= 3 => {
                    let mut t = t.to_vec();
                    t.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    t
                }
                _ => output_grid(&cfg),
            };
            let traj = evolve_at(&ctx, &rho0, &times, &EvolveOptions::default())?;
            let (kind, shots, seed) = protocol_kind(&cfg.protocol).unwrap_or((ProtocolKind::Parity, 0, 0));
            let kind = if matches!(kind, ProtocolKind::Parity) { kind } else { ProtocolKind::Parity };
            let mags = traj
                .states
                .iter()
                .enumerate()
                .map(|(i, rho)| match readout(rho, &kind, shots, seed, i)? {
                    Readout::Parity { rho_k, .. } => Ok(rho_k[&(n as i32)].norm()),
                    Readout::Mqc { .. } => unreachable!(),
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(fit_decay(&times, &mags).map_err(|e| Error::Fit(format!("N = {n}: {e}")))?.rate)
        })
        .collect::<Result<Vec<f64>>>()?;
    let pts: Vec<(f64, f64)> = ns.iter().zip(&rates).map(|(n, r)| ((*n as f64).ln(), r.ln())).collect();
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let p = sxy / sxx;
    let residual = (pts.iter().map(|q| (q.1 - my - p * (q.0 - mx)).powi(2)).sum::<f64>() / m).sqrt();
    if !p.is_finite() {
        return Err(Error::Fit("degenerate scaling fit".into()));
    }
    Ok(ScalingFit { exponent: p, residual, n_values: ns, rates })
}

fn mat_json(m: &Array2<C64>) -> Value {
    Value::Array(
        m.rows()
            .into_iter()
            .map(|row| Value::Array(row.iter().map(|z| json!([z.re, z.im])).collect()))
            .collect(),
    )
}

/// Every dissipator coefficient at time `t`, as `[re, im]` matrices per channel.
pub fn rates(cfg: &ExperimentConfig, t: f64) -> Result<Value> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::Config(format!("--t must be a non-negative time, got {t}")));
    }
    let register = cfg.validate()?;
    let t_max = t.max(2.0 * cfg.dt_rate);
    let ctx = GeneratorContext::new(register.clone(), cfg.channels.clone(), t_max, cfg.dt_rate, cfg.options)
        .map_err(|e| e.in_stage("rates"))?;
    let mut channels = Vec::new();
    for (i, ch) in cfg.channels.iter().enumerate() {
        let entry = match ch.coupling {
            Coupling::Transverse => {
                let r = ctx.table.relaxation(i, t)?;
                json!({
                    "coupling": "transverse",
                    "gamma12": mat_json(&r.gamma12), "gamma21": mat_json(&r.gamma21),
                    "gamma11": mat_json(&r.gamma11), "gamma22": mat_json(&r.gamma22),
                    "j1": mat_json(&r.j1), "j2": mat_json(&r.j2), "j3": mat_json(&r.j3),
                    "jxx": mat_json(&r.jxx), "jyy": mat_json(&r.jyy), "jxy": mat_json(&r.jxy),
                    "dm": mat_json(&r.dm),
                })
            }
            Coupling::Longitudinal => {
                let d = ctx.table.dephasing(i, t)?;
                json!({ "coupling": "longitudinal", "gamma_phi": mat_json(&d.gamma_phi), "jzz": mat_json(&d.jzz) })
            }
        };
        channels.push(entry);
    }
    Ok(json!({ "t": t, "frequencies": register.freqs, "channels": channels }))
}

/// Evolves a config's initial state and returns it at `t`; handy for quick checks.
pub fn state_at(cfg: &ExperimentConfig, t: f64) -> Result<DensityMatrix> {
    let register = cfg.validate()?;
    let n = register.n();
    let ctx = GeneratorContext::new(register, cfg.channels.clone(), cfg.t_max.max(t), cfg.dt_rate, cfg.options)?;
    let rho0 = initial_state(&cfg.initial_state, n)?;
    let traj = evolve_at(&ctx, &rho0, &[t], &EvolveOptions::default())?;
    Ok(traj.states.into_iter().next().unwrap())
}
