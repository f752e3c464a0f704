//! Batch harness: scenario execution, sweeps, re-analysis and reports.
//!
//! A run produces a deterministic directory layout:
//!
//! ```text
//! out/
//!   manifest.toml        resolved scenario, seeds, file checksums
//!   summary.csv          one row per sweep point
//!   psd/*.csv            per-run and ensemble-mean spectra
//!   traj/*.csv           optional raw trajectories
//!   windows/*.csv        windowed temperatures (free-running mode)
//!   fits/*.json, *.txt   machine- and human-readable fit reports
//!   plots/*.script       self-contained plot scripts reading the CSVs
//! ```
//!
//! Re-running a scenario with the same manifest yields a bit-identical
//! `summary.csv`; `analyze` re-derives fits and summaries from the stored
//! spectra without re-simulating and is idempotent.

pub mod config;
pub mod presets;

use crate::detection;
use crate::digest::{digest_bytes, Fnv64};
use crate::dynamics::{self, integrate_ensemble, DelayedOscillator, SimConfig, Trajectory};
use crate::error::{Error, Result};
use crate::model;
use crate::spectral::{self, Psd, TemperatureEstimate};
use config::{Scenario, SweepAxis};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

/// Command-level options shared by `run`, `sweep` and `reproduce`.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Override the scenario's master seed.
    pub seed: Option<u64>,
    /// Worker-thread budget for ensembles and sweep points.
    pub workers: Option<usize>,
}

/// One summary row.
#[derive(Debug, Clone)]
pub struct PointResult {
    pub axis_value: f64,
    pub t_area: f64,
    pub t_area_err: f64,
    pub t_fit: f64,
    pub t_fit_err: f64,
    pub gamma_fit: f64,
    pub gamma_fit_err: f64,
    pub omega_fit: f64,
    pub phonons: f64,
    pub phonons_err: f64,
    pub n_runs: usize,
    pub status: String,
}

impl PointResult {
    fn error_row(axis_value: f64, n_runs: usize, tag: &str) -> Self {
        Self {
            axis_value,
            t_area: f64::NAN,
            t_area_err: f64::NAN,
            t_fit: f64::NAN,
            t_fit_err: f64::NAN,
            gamma_fit: f64::NAN,
            gamma_fit_err: f64::NAN,
            omega_fit: f64::NAN,
            phonons: f64::NAN,
            phonons_err: f64::NAN,
            n_runs,
            status: format!("error:{tag}"),
        }
    }
}

/// Completed run handle.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub points: Vec<PointResult>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    tool: String,
    axis: String,
    scenario: Scenario,
    points: Vec<ManifestPoint>,
    checksums: BTreeMap<String, String>,
    summary_digest: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestPoint {
    index: usize,
    axis_value: f64,
    seed_base: u64,
    n_runs: usize,
    #[serde(default)]
    psd_runs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    psd_mean: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    windows: Option<String>,
    /// Populated when the point failed during simulation; analysis reuses it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

const SUMMARY_HEADER: &str = "axis,t_area_k,t_area_err_k,t_fit_k,t_fit_err_k,gamma_fit_rad_s,gamma_fit_err_rad_s,omega_fit_rad_s,phonons,phonons_err,n_runs,status";

fn summary_csv(axis_name: &str, points: &[PointResult]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# levcf summary v1");
    let _ = writeln!(out, "# axis={axis_name}");
    let _ = writeln!(out, "{SUMMARY_HEADER}");
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            p.axis_value,
            p.t_area,
            p.t_area_err,
            p.t_fit,
            p.t_fit_err,
            p.gamma_fit,
            p.gamma_fit_err,
            p.omega_fit,
            p.phonons,
            p.phonons_err,
            p.n_runs,
            p.status
        );
    }
    out
}

/// Parse a summary written by [`summary_csv`].
pub fn read_summary(path: &Path) -> Result<Vec<PointResult>> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for line in text.lines() {
        if line.starts_with('#') || line.starts_with("axis,") || line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 12 {
            return Err(Error::ConfigError(format!(
                "summary row has {} columns, expected 12",
                cols.len()
            )));
        }
        let f = |i: usize| -> Result<f64> {
            cols[i]
                .parse()
                .map_err(|_| Error::ConfigError(format!("summary: bad float {:?}", cols[i])))
        };
        rows.push(PointResult {
            axis_value: f(0)?,
            t_area: f(1)?,
            t_area_err: f(2)?,
            t_fit: f(3)?,
            t_fit_err: f(4)?,
            gamma_fit: f(5)?,
            gamma_fit_err: f(6)?,
            omega_fit: f(7)?,
            phonons: f(8)?,
            phonons_err: f(9)?,
            n_runs: cols[10]
                .parse()
                .map_err(|_| Error::ConfigError("summary: bad n_runs".into()))?,
            status: cols[11].to_string(),
        });
    }
    Ok(rows)
}

fn write_file(dir: &Path, rel: &str, contents: &str) -> Result<()> {
    let path = dir.join(rel);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

fn checksum_of(dir: &Path, rel: &str) -> Result<String> {
    let bytes = fs::read(dir.join(rel))?;
    Ok(format!("{:016x}", digest_bytes(&bytes)))
}

fn next_pow2_at_least(x: f64) -> usize {
    let mut n = 8usize;
    while (n as f64) < x && n < (1 << 22) {
        n <<= 1;
    }
    n
}

fn prev_pow2_at_most(x: usize) -> usize {
    let mut n = 8usize;
    while n * 2 <= x {
        n <<= 1;
    }
    n
}

/// Resolved per-point execution setup.
struct PointPlan {
    system: model::SystemParams,
    feedback: model::FeedbackParams,
    cfg: SimConfig,
    gamma_ref: f64,
}

fn plan_point(
    scenario: &Scenario,
    axis: Option<SweepAxis>,
    value: f64,
    seed_base: u64,
) -> Result<PointPlan> {
    let (system, feedback) = scenario.build_at(axis, value)?;
    let gamma_exp = system.gamma_total(&feedback);
    let gamma_ref = if gamma_exp > 0.0 {
        gamma_exp
    } else {
        system.gamma0().max(1e-2)
    };
    let warmup = scenario
        .sim
        .warmup_s
        .unwrap_or_else(|| (15.0 / gamma_ref).clamp(0.01, 10.0));
    let span = scenario
        .sim
        .duration_s
        .unwrap_or_else(|| (300.0 / gamma_ref).clamp(0.2, 60.0));
    let tau = if feedback.effective_gain() != 0.0 {
        feedback.tau
    } else {
        0.0
    };
    let mut cfg = SimConfig::for_system(system.trap.omega, tau, warmup + span, seed_base)
        .with_warmup(warmup);
    if let Some(dt) = scenario.sim.dt_s {
        cfg.dt = dt;
    }
    if let Some(se) = scenario.sim.store_every {
        cfg.store_every = se;
    }
    Ok(PointPlan {
        system,
        feedback,
        cfg,
        gamma_ref,
    })
}

fn auto_segment(scenario: &Scenario, n_samples: usize, fs: f64, gamma_ref: f64) -> usize {
    if let Some(seg) = scenario.analysis.psd_segment {
        return seg;
    }
    let df_target = (gamma_ref / (2.0 * std::f64::consts::PI) / 12.0).max(fs / n_samples as f64 * 4.0);
    let seg = next_pow2_at_least(fs / df_target);
    let cap = prev_pow2_at_most(n_samples / 4);
    seg.min(cap).max(64)
}

/// Analysis of one locked-phase point from its spectra; shared verbatim by
/// `run` and `analyze` so both produce identical rows.
fn analyze_point_from_psds(
    scenario: &Scenario,
    axis_value: f64,
    system: &model::SystemParams,
    per_run: &[Psd],
    mean_psd: &Psd,
) -> PointResult {
    let mass = system.particle.mass;
    let omega_nominal = system.trap.omega;
    let fit = spectral::fit_lorentzian(mean_psd, None);
    let (band, omega_used, fit_cols, status) = match &fit {
        Ok(f) => {
            let f0 = f.center / (2.0 * std::f64::consts::PI);
            let half = scenario.analysis.band_linewidths * f.linewidth
                / (2.0 * std::f64::consts::PI);
            let df = mean_psd.df();
            let fmax = *mean_psd.frequencies.last().unwrap();
            let band = (
                (f0 - half).max(2.0 * df),
                (f0 + half).min(fmax - 2.0 * df),
            );
            let est = f.to_estimate(mass);
            (
                band,
                f.center,
                (est.t_eff, est.t_err, f.linewidth, f.linewidth_sigma, f.center),
                "ok".to_string(),
            )
        }
        Err(e) => {
            // No resolvable line: fall back to the nominal resonance.
            let f0 = omega_nominal / (2.0 * std::f64::consts::PI);
            let df = mean_psd.df();
            let fmax = *mean_psd.frequencies.last().unwrap();
            let band = ((0.9 * f0).max(2.0 * df), (1.1 * f0).min(fmax - 2.0 * df));
            (
                band,
                omega_nominal,
                (f64::NAN, f64::NAN, f64::NAN, f64::NAN, omega_nominal),
                format!("ok:nofit:{e}"),
            )
        }
    };

    let mut temps: Vec<TemperatureEstimate> = Vec::new();
    for psd in per_run {
        match spectral::temperature_from_area(psd, mass, omega_used, band) {
            Ok(est) => temps.push(est),
            Err(_) => {}
        }
    }
    if temps.is_empty() {
        return PointResult::error_row(axis_value, per_run.len(), "analysis");
    }
    let n = temps.len() as f64;
    let t_mean = temps.iter().map(|t| t.t_eff).sum::<f64>() / n;
    let t_err = if temps.len() > 1 {
        let var = temps.iter().map(|t| (t.t_eff - t_mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        temps[0].t_err
    };
    let est = TemperatureEstimate {
        t_eff: t_mean,
        t_err,
        method: spectral::TemperatureMethod::Area,
        omega_fitted: omega_used,
        gamma_fitted: fit_cols.2,
    };
    let (phonons, phonons_err) = spectral::phonons_from_estimate(&est);

    PointResult {
        axis_value,
        t_area: t_mean,
        t_area_err: t_err,
        t_fit: fit_cols.0,
        t_fit_err: fit_cols.1,
        gamma_fit: fit_cols.2,
        gamma_fit_err: fit_cols.3,
        omega_fit: fit_cols.4,
        phonons,
        phonons_err,
        n_runs: per_run.len(),
        status,
    }
}

fn mean_psd_of(per_run: &[Psd]) -> Psd {
    let mut mean = per_run[0].clone();
    for psd in &per_run[1..] {
        for (m, v) in mean.values.iter_mut().zip(&psd.values) {
            *m += v;
        }
    }
    let n = per_run.len() as f64;
    for m in mean.values.iter_mut() {
        *m /= n;
    }
    mean.n_segments = per_run.iter().map(|p| p.n_segments).sum();
    mean
}

struct PointOutput {
    result: PointResult,
    manifest: ManifestPoint,
    files: Vec<(String, String)>, // (relative path, contents)
}

fn run_locked_point(
    scenario: &Scenario,
    axis: Option<SweepAxis>,
    index: usize,
    value: f64,
    seed_base: u64,
) -> PointOutput {
    let tag = format!("p{index:03}");
    let plan = match plan_point(scenario, axis, value, seed_base) {
        Ok(p) => p,
        Err(e) => {
            return PointOutput {
                result: PointResult::error_row(value, 0, &format!("config:{e}")),
                manifest: ManifestPoint {
                    index,
                    axis_value: value,
                    seed_base,
                    n_runs: 0,
                    psd_runs: vec![],
                    psd_mean: None,
                    windows: None,
                    error: Some(format!("config:{e}")),
                },
                files: vec![],
            }
        }
    };
    let runs = scenario.sim.runs;
    let ensemble = match integrate_ensemble(&plan.system, &plan.feedback, &plan.cfg, runs) {
        Ok(e) => e,
        Err(e) => {
            let tag_err = match e {
                Error::UnstableSystem(_) => "unstable",
                _ => "simulation",
            };
            return PointOutput {
                result: PointResult::error_row(value, runs, tag_err),
                manifest: ManifestPoint {
                    index,
                    axis_value: value,
                    seed_base,
                    n_runs: runs,
                    psd_runs: vec![],
                    psd_mean: None,
                    windows: None,
                    error: Some(tag_err.to_string()),
                },
                files: vec![],
            };
        }
    };

    let fs_rate = 1.0 / ensemble[0].dt;
    let seg = auto_segment(scenario, ensemble[0].len(), fs_rate, plan.gamma_ref);
    let mut per_run = Vec::with_capacity(runs);
    let mut files = Vec::new();
    let mut psd_runs = Vec::new();
    for (i, traj) in ensemble.iter().enumerate() {
        let psd = match spectral::welch_psd(traj, seg, scenario.analysis.psd_overlap) {
            Ok(p) => p,
            Err(e) => {
                return PointOutput {
                    result: PointResult::error_row(value, runs, &format!("psd:{e}")),
                    manifest: ManifestPoint {
                        index,
                        axis_value: value,
                        seed_base,
                        n_runs: runs,
                        psd_runs: vec![],
                        psd_mean: None,
                        windows: None,
                        error: Some(format!("psd:{e}")),
                    },
                    files: vec![],
                };
            }
        };
        let rel = format!("psd/{tag}_r{i}.csv");
        let mut buf = Vec::new();
        psd.write_csv(&mut buf).expect("in-memory write");
        files.push((rel.clone(), String::from_utf8(buf).expect("utf8 csv")));
        psd_runs.push(rel);
        if scenario.analysis.emit_trajectories {
            let rel = format!("traj/{tag}_r{i}.csv");
            let mut buf = Vec::new();
            traj.write_csv(&mut buf).expect("in-memory write");
            files.push((rel, String::from_utf8(buf).expect("utf8 csv")));
        }
        per_run.push(psd);
    }
    let mean = mean_psd_of(&per_run);
    let mean_rel = format!("psd/{tag}_mean.csv");
    let mut buf = Vec::new();
    mean.write_csv(&mut buf).expect("in-memory write");
    files.push((mean_rel.clone(), String::from_utf8(buf).expect("utf8 csv")));

    let result = analyze_point_from_psds(scenario, value, &plan.system, &per_run, &mean);
    PointOutput {
        result,
        manifest: ManifestPoint {
            index,
            axis_value: value,
            seed_base,
            n_runs: runs,
            psd_runs,
            psd_mean: Some(mean_rel),
            windows: None,
            error: None,
        },
        files,
    }
}

/// Windowed temperature series of a free-running-phase run.
struct WindowSeries {
    window_s: f64,
    /// (window start time, loop phase, temperature) triplets.
    rows: Vec<(f64, f64, f64)>,
}

fn windowed_run(
    system: &model::SystemParams,
    feedback: &model::FeedbackParams,
    cfg: &SimConfig,
    window_s: f64,
    n_windows: usize,
    walk_step: f64,
    walk_seed: u64,
) -> Result<WindowSeries> {
    let mut osc = DelayedOscillator::new(system, feedback, cfg)?;
    let window_steps = (window_s / cfg.dt).round().max(8.0) as usize;
    let mut walk =
        crate::dynamics::noise::GaussianStream::new(walk_seed, crate::dynamics::noise::STREAM_AUX);
    let mut phi0 = feedback.phi0;
    let mass = system.particle.mass;
    let omega2 = system.trap.omega * system.trap.omega;
    // settle
    for _ in 0..window_steps {
        osc.step();
    }
    let mut rows = Vec::with_capacity(n_windows);
    for w in 0..n_windows {
        osc.set_loop_phase(phi0);
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for _ in 0..window_steps {
            let (z, _) = osc.step();
            sum += z;
            sum2 += z * z;
        }
        let n = window_steps as f64;
        let var = (sum2 / n - (sum / n) * (sum / n)).max(0.0);
        if !var.is_finite() {
            return Err(Error::UnstableSystem("free-running window diverged".into()));
        }
        let t = mass * omega2 * var / model::K_B;
        rows.push(((w as f64) * window_s, phi0, t));
        phi0 += walk_step * walk.next();
    }
    Ok(WindowSeries { window_s, rows })
}

fn windows_csv(series: &WindowSeries, t0_mean: f64, t0_sigma: f64) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# levcf windows v1");
    let _ = writeln!(
        out,
        "# window_s={}, t0_k={}, t0_sigma_k={}",
        series.window_s, t0_mean, t0_sigma
    );
    let _ = writeln!(out, "t_s,phi0_rad,t_eff_k");
    for (t, phi, temp) in &series.rows {
        let _ = writeln!(out, "{t},{phi},{temp}");
    }
    out
}

fn read_windows_csv(text: &str) -> Result<(WindowSeries, f64, f64)> {
    let mut window_s = 0.0;
    let mut t0 = f64::NAN;
    let mut t0_sigma = f64::NAN;
    let mut rows = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with("t_s,") {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            for field in rest.split(',') {
                let mut kv = field.splitn(2, '=');
                let key = kv.next().unwrap_or("").trim();
                let Some(v) = kv.next() else { continue };
                match key {
                    "window_s" => window_s = v.trim().parse().unwrap_or(0.0),
                    "t0_k" => t0 = v.trim().parse().unwrap_or(f64::NAN),
                    "t0_sigma_k" => t0_sigma = v.trim().parse().unwrap_or(f64::NAN),
                    _ => {}
                }
            }
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 3 {
            return Err(Error::ConfigError("windows csv: bad row".into()));
        }
        rows.push((
            cols[0].parse().map_err(|_| Error::ConfigError("windows csv".into()))?,
            cols[1].parse().map_err(|_| Error::ConfigError("windows csv".into()))?,
            cols[2].parse().map_err(|_| Error::ConfigError("windows csv".into()))?,
        ));
    }
    Ok((WindowSeries { window_s, rows }, t0, t0_sigma))
}

/// Minimum-temperature statistic of a window series: the median of all
/// windows colder than the feedback-off level plus two of its standard
/// deviations.
fn window_minimum(series: &WindowSeries, t0: f64, t0_sigma: f64) -> (f64, f64, usize) {
    let mut cold: Vec<f64> = series
        .rows
        .iter()
        .map(|r| r.2)
        .filter(|t| *t < t0 + 2.0 * t0_sigma)
        .collect();
    if cold.is_empty() {
        let min = series.rows.iter().map(|r| r.2).fold(f64::INFINITY, f64::min);
        return (min, f64::NAN, 0);
    }
    cold.sort_by(f64::total_cmp);
    let median = cold[cold.len() / 2];
    let mean = cold.iter().sum::<f64>() / cold.len() as f64;
    let var = cold.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / cold.len().max(2) as f64;
    (median, (var / cold.len() as f64).sqrt(), cold.len())
}

fn free_running_point_result(
    axis_value: f64,
    system: &model::SystemParams,
    feedback: &model::FeedbackParams,
    series: &WindowSeries,
    t0_mean: f64,
    t0_sigma: f64,
) -> PointResult {
    let (t_min, t_min_err, n_cold) = window_minimum(series, t0_mean, t0_sigma);
    let omega = system.trap.omega;
    let gc_env = (feedback.beta * omega * (omega * feedback.tau).sin()).abs();
    let est = TemperatureEstimate {
        t_eff: t_min,
        t_err: if t_min_err.is_finite() { t_min_err } else { 0.0 },
        method: spectral::TemperatureMethod::Area,
        omega_fitted: omega,
        gamma_fitted: gc_env.max(1e-300),
    };
    let (phonons, phonons_err) = spectral::phonons_from_estimate(&est);
    PointResult {
        axis_value,
        t_area: t_min,
        t_area_err: t_min_err,
        t_fit: t0_mean,
        t_fit_err: t0_sigma,
        gamma_fit: gc_env,
        gamma_fit_err: f64::NAN,
        omega_fit: omega,
        phonons,
        phonons_err,
        n_runs: n_cold,
        status: "free_running".into(),
    }
}

fn run_free_point(
    scenario: &Scenario,
    axis: Option<SweepAxis>,
    index: usize,
    value: f64,
    seed_base: u64,
) -> PointOutput {
    let tag = format!("p{index:03}");
    let fail = |msg: String, n: usize| PointOutput {
        result: PointResult::error_row(value, n, &msg),
        manifest: ManifestPoint {
            index,
            axis_value: value,
            seed_base,
            n_runs: n,
            psd_runs: vec![],
            psd_mean: None,
            windows: None,
            error: Some(msg.clone()),
        },
        files: vec![],
    };
    let plan = match plan_point(scenario, axis, value, seed_base) {
        Ok(p) => p,
        Err(e) => return fail(format!("config:{e}"), 0),
    };
    let gamma0 = plan.system.gamma0().max(1e-2);
    let window_s = scenario.sim.window_s.unwrap_or(50.0 / gamma0);
    let n_windows = scenario
        .sim
        .duration_s
        .map(|d| (d / window_s).floor().max(4.0) as usize)
        .unwrap_or(30);
    let mut cfg = plan.cfg;
    cfg.duration = window_s * (n_windows + 2) as f64;
    cfg.warmup = 0.0;

    let series = match windowed_run(
        &plan.system,
        &plan.feedback,
        &cfg,
        window_s,
        n_windows,
        scenario.feedback.phi0_walk_step_rad,
        seed_base.wrapping_add(17),
    ) {
        Ok(s) => s,
        Err(e) => return fail(format!("unstable:{e}"), 0),
    };

    // Feedback-off reference for the cold-window threshold.
    let mut off = plan.feedback;
    off.beta = 0.0;
    let mut cfg_off = cfg;
    cfg_off.seed = seed_base.wrapping_add(501);
    let t0_series = match windowed_run(&plan.system, &off, &cfg_off, window_s, n_windows, 0.0, 1) {
        Ok(s) => s,
        Err(e) => return fail(format!("unstable:{e}"), 0),
    };
    let t0_vals: Vec<f64> = t0_series.rows.iter().map(|r| r.2).collect();
    let t0_mean = t0_vals.iter().sum::<f64>() / t0_vals.len() as f64;
    let t0_sigma = (t0_vals.iter().map(|t| (t - t0_mean).powi(2)).sum::<f64>()
        / (t0_vals.len() - 1).max(1) as f64)
        .sqrt();

    let result =
        free_running_point_result(value, &plan.system, &plan.feedback, &series, t0_mean, t0_sigma);
    let rel = format!("windows/{tag}.csv");
    let files = vec![(rel.clone(), windows_csv(&series, t0_mean, t0_sigma))];
    PointOutput {
        result,
        manifest: ManifestPoint {
            index,
            axis_value: value,
            seed_base,
            n_runs: n_windows,
            psd_runs: vec![],
            psd_mean: None,
            windows: Some(rel),
            error: None,
        },
        files,
    }
}

fn plot_summary_script(axis_name: &str) -> String {
    format!(
        r##"#!/usr/bin/env python3
# Renders summary.png from ../summary.csv (no arguments).
import csv, os
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))
rows = []
with open(os.path.join(here, "..", "summary.csv")) as fh:
    for row in csv.reader(l for l in fh if not l.startswith("#")):
        if row and row[0] != "axis":
            rows.append(row)
x = [float(r[0]) for r in rows]
t = [float(r[1]) for r in rows]
te = [float(r[2]) for r in rows]
fig, ax = plt.subplots(figsize=(6, 4))
ax.errorbar(x, t, yerr=te, fmt="o-", capsize=3)
ax.set_xlabel("{axis_name}")
ax.set_ylabel("T_eff [K]")
if min(v for v in t if v == v) > 0 and len(x) > 2 and min(x) > 0 and max(x) / min(x) > 10:
    ax.set_xscale("log"); ax.set_yscale("log")
ax.grid(True, alpha=0.3)
fig.tight_layout()
fig.savefig(os.path.join(here, "summary.png"), dpi=150)
print("wrote plots/summary.png")
"##
    )
}

fn plot_psd_script() -> String {
    r##"#!/usr/bin/env python3
# Overlays all ensemble-mean spectra from ../psd/*_mean.csv.
import csv, glob, os
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))
fig, ax = plt.subplots(figsize=(6, 4))
for path in sorted(glob.glob(os.path.join(here, "..", "psd", "*_mean.csv"))):
    f, s = [], []
    with open(path) as fh:
        for row in csv.reader(l for l in fh if not l.startswith("#")):
            if row and row[0] != "f_hz":
                f.append(float(row[0])); s.append(float(row[1]))
    ax.plot(f[1:], s[1:], lw=0.8, label=os.path.basename(path).replace("_mean.csv", ""))
ax.set_xlabel("f [Hz]"); ax.set_ylabel("S_zz [m^2/Hz]")
ax.set_yscale("log")
ax.legend(fontsize=7)
ax.grid(True, alpha=0.3)
fig.tight_layout()
fig.savefig(os.path.join(here, "psd.png"), dpi=150)
print("wrote plots/psd.png")
"##
    .to_string()
}

/// Execute a scenario (single point or sweep) into `out_dir`.
pub fn run_scenario(scenario: &Scenario, out_dir: &Path, opts: &RunOptions) -> Result<RunOutput> {
    let mut scenario = scenario.clone();
    if let Some(seed) = opts.seed {
        scenario.sim.seed = seed;
    }
    scenario.validate()?;
    let axis = scenario.sweep_axis()?;
    let grid: Vec<f64> = match (&axis, &scenario.sweep) {
        (Some(_), Some(s)) => s.grid.clone(),
        _ => vec![0.0],
    };

    let exec = |scenario: &Scenario| -> Vec<PointOutput> {
        use rayon::prelude::*;
        grid.par_iter()
            .enumerate()
            .map(|(i, v)| {
                let seed_base = scenario.sim.seed.wrapping_add(1000 * i as u64);
                if scenario.free_running() {
                    run_free_point(scenario, axis, i, *v, seed_base)
                } else {
                    run_locked_point(scenario, axis, i, *v, seed_base)
                }
            })
            .collect()
    };
    let outputs = match opts.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| Error::ConfigError(format!("worker pool: {e}")))?
            .install(|| exec(&scenario)),
        None => exec(&scenario),
    };

    // A single-point scenario that failed is a hard error; sweeps degrade
    // gracefully with tagged rows.
    if grid.len() == 1 && outputs[0].manifest.error.is_some() {
        let tag = outputs[0].manifest.error.clone().unwrap();
        if tag.starts_with("unstable") {
            return Err(Error::UnstableSystem(tag));
        }
        return Err(Error::ConfigError(tag));
    }

    fs::create_dir_all(out_dir)?;
    let mut checksums = BTreeMap::new();
    let mut points = Vec::new();
    let mut manifest_points = Vec::new();
    for out in &outputs {
        for (rel, contents) in &out.files {
            write_file(out_dir, rel, contents)?;
            checksums.insert(rel.clone(), format!("{:016x}", digest_bytes(contents.as_bytes())));
        }
        points.push(out.result.clone());
        manifest_points.push(ManifestPoint {
            index: out.manifest.index,
            axis_value: out.manifest.axis_value,
            seed_base: out.manifest.seed_base,
            n_runs: out.manifest.n_runs,
            psd_runs: out.manifest.psd_runs.clone(),
            psd_mean: out.manifest.psd_mean.clone(),
            windows: out.manifest.windows.clone(),
            error: out.manifest.error.clone(),
        });
    }

    let axis_name = axis.map(|a| a.name()).unwrap_or("none").to_string();
    let summary = summary_csv(&axis_name, &points);
    write_file(out_dir, "summary.csv", &summary)?;
    write_file(out_dir, "plots/summary.script", &plot_summary_script(&axis_name))?;
    write_file(out_dir, "plots/psd.script", &plot_psd_script())?;
    write_file(out_dir, "scenario.toml", &scenario.to_toml_string())?;
    checksums.insert(
        "scenario.toml".into(),
        format!("{:016x}", digest_bytes(scenario.to_toml_string().as_bytes())),
    );

    let manifest = Manifest {
        version: 1,
        tool: format!("levcf {}", env!("CARGO_PKG_VERSION")),
        axis: axis_name,
        scenario: scenario.clone(),
        points: manifest_points,
        checksums,
        summary_digest: format!("{:016x}", digest_bytes(summary.as_bytes())),
    };
    let manifest_text = toml::to_string(&manifest)
        .map_err(|e| Error::ConfigError(format!("manifest serialize: {e}")))?;
    write_file(out_dir, "manifest.toml", &manifest_text)?;

    Ok(RunOutput {
        dir: out_dir.to_path_buf(),
        points,
    })
}

/// Convenience: load a scenario file and run it.
pub fn run_scenario_file(path: &Path, out_dir: &Path, opts: &RunOptions) -> Result<RunOutput> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::ConfigError(format!("cannot read {}: {e}", path.display())))?;
    let scenario = Scenario::from_toml_str(&text)?;
    run_scenario(&scenario, out_dir, opts)
}

/// Re-derive fits and the summary from the stored spectra of a completed
/// run, without re-simulating. Checksums of the inputs are verified first;
/// nothing is overwritten until the whole analysis has succeeded.
pub fn analyze(dir: &Path) -> Result<RunOutput> {
    let manifest_path = dir.join("manifest.toml");
    let text = fs::read_to_string(&manifest_path)
        .map_err(|e| Error::ManifestMissing(format!("{}: {e}", manifest_path.display())))?;
    let manifest: Manifest =
        toml::from_str(&text).map_err(|e| Error::ManifestMissing(format!("manifest parse: {e}")))?;
    let scenario = &manifest.scenario;
    let axis = scenario.sweep_axis()?;

    // Verify the inputs we are about to reuse.
    for point in &manifest.points {
        let mut rels: Vec<&String> = point.psd_runs.iter().collect();
        if let Some(m) = &point.psd_mean {
            rels.push(m);
        }
        if let Some(w) = &point.windows {
            rels.push(w);
        }
        for rel in rels {
            let expected = manifest.checksums.get(rel).ok_or_else(|| {
                Error::ManifestMissing(format!("checksum for {rel} missing from manifest"))
            })?;
            let actual = checksum_of(dir, rel)
                .map_err(|e| Error::ManifestMissing(format!("{rel}: {e}")))?;
            if &actual != expected {
                return Err(Error::ChecksumMismatch(format!(
                    "{rel}: stored {expected}, found {actual}"
                )));
            }
        }
    }

    let mut points = Vec::new();
    for point in &manifest.points {
        if let Some(err) = &point.error {
            points.push(PointResult::error_row(point.axis_value, point.n_runs, err));
            continue;
        }
        if let Some(windows_rel) = &point.windows {
            let text = fs::read_to_string(dir.join(windows_rel))?;
            let (series, t0, t0_sigma) = read_windows_csv(&text)?;
            let (system, feedback) = scenario.build_at(axis, point.axis_value)?;
            points.push(free_running_point_result(
                point.axis_value,
                &system,
                &feedback,
                &series,
                t0,
                t0_sigma,
            ));
            continue;
        }
        let (system, _) = scenario.build_at(axis, point.axis_value)?;
        let mut per_run = Vec::new();
        for rel in &point.psd_runs {
            let file = fs::File::open(dir.join(rel))?;
            per_run.push(Psd::read_csv(std::io::BufReader::new(file))?);
        }
        let mean_rel = point.psd_mean.as_ref().ok_or_else(|| {
            Error::ManifestMissing(format!("point {} has no mean psd", point.index))
        })?;
        let file = fs::File::open(dir.join(mean_rel))?;
        let mean = Psd::read_csv(std::io::BufReader::new(file))?;
        points.push(analyze_point_from_psds(
            scenario,
            point.axis_value,
            &system,
            &per_run,
            &mean,
        ));
    }

    let summary = summary_csv(&manifest.axis, &points);
    write_file(dir, "summary.csv", &summary)?;
    let mut manifest = manifest;
    manifest.summary_digest = format!("{:016x}", digest_bytes(summary.as_bytes()));
    let manifest_text = toml::to_string(&manifest)
        .map_err(|e| Error::ConfigError(format!("manifest serialize: {e}")))?;
    write_file(dir, "manifest.toml", &manifest_text)?;
    Ok(RunOutput {
        dir: dir.to_path_buf(),
        points,
    })
}

/// Write a fit report as machine-readable JSON plus a plain-text table.
pub fn write_fit_report(
    dir: &Path,
    name: &str,
    record: &serde_json::Value,
    table: &str,
) -> Result<()> {
    write_file(dir, &format!("fits/{name}.json"), &format!("{record:#}\n"))?;
    write_file(dir, &format!("fits/{name}.txt"), table)?;
    Ok(())
}

/// Digest of a whole output directory's summary (for provenance fields).
pub fn summary_digest(dir: &Path) -> Result<String> {
    checksum_of(dir, "summary.csv")
}

// Re-exported light helpers for the detection pipeline used by presets and
// acceptance tests.
pub use detection::{DEFAULT_IL_IMPRECISION, DEFAULT_OL_IMPRECISION};

/// Simulate one trajectory plus matched in-loop/out-of-loop detector records.
pub struct DetectionBundle {
    pub trajectory: Trajectory,
    pub il: detection::DetectorRecord,
    pub il_broken: detection::DetectorRecord,
    pub ol: detection::DetectorRecord,
}

/// Run the detection pipeline at one loop setting: in-loop record with the
/// shared phase realization, a control record with the realization replaced
/// (different seed), and the out-of-loop record.
pub fn detection_bundle(
    system: &model::SystemParams,
    feedback: &model::FeedbackParams,
    cfg: &SimConfig,
) -> Result<DetectionBundle> {
    let trajectory = dynamics::integrate(system, feedback, cfg)?;
    let path = detection::regenerate_phase_path(system, feedback, cfg)?;
    let mut cfg_broken = *cfg;
    cfg_broken.seed = cfg.seed.wrapping_add(0x5eed);
    let path_broken = detection::regenerate_phase_path(system, feedback, &cfg_broken)?;
    let il = detection::synthesize_il(
        &trajectory,
        &path,
        detection::DEFAULT_IL_IMPRECISION,
        feedback.tau,
    )?;
    let il_broken = detection::synthesize_il(
        &trajectory,
        &path_broken,
        detection::DEFAULT_IL_IMPRECISION,
        feedback.tau,
    )?;
    let ol = detection::synthesize_ol(
        &trajectory,
        detection::DEFAULT_OL_IMPRECISION,
        cfg.seed.wrapping_add(1),
    );
    Ok(DetectionBundle {
        trajectory,
        il,
        il_broken,
        ol,
    })
}

/// Provenance digest combining scenario and seed, used in fit reports.
pub fn input_digest(scenario: &Scenario) -> String {
    let mut h = Fnv64::new();
    h.write_str(&scenario.to_toml_string());
    h.write_u64(scenario.sim.seed);
    format!("{:016x}", h.finish())
}
