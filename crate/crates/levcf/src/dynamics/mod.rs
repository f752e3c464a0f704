//! Stochastic integration of the delayed equation of motion.
//!
//! The integrator advances
//!
//! ```text
//! z'' + gamma_0 z' + omega^2 [ z - beta_eff (z(t - tau) + dphi(t)/B) ]
//!     = (sigma_m chi_m + sigma_r chi_r) / m
//! ```
//!
//! in its pre-linearization form: the coherent damping
//! `gamma_c = beta omega sin(omega tau)` and the phase-noise force amplitude
//! `sigma_c = m beta omega^2 sigma_phi / B` are emergent properties of the
//! delayed force, not injected coefficients. The delay is realized by a ring
//! buffer of past positions snapped to an integer number of steps.
//!
//! The stepping scheme is a stochastic leapfrog: half force kick, half
//! drift, exact Ornstein-Uhlenbeck damping/noise update, half drift, half
//! force kick. The delayed coordinate uses the mean of the two history
//! samples bracketing `t + dt/2 - tau`, so the effective delay equals `tau`
//! at the midpoint where the kicks act. The loop phase-noise sample is held
//! constant across one step; the in-loop detector consumes the identical
//! sequence (see `detection`), which preserves the force-detector
//! correlations that produce noise squashing.

pub mod noise;

use crate::digest::Fnv64;
use crate::error::{Error, Result};
use crate::model::{FeedbackParams, SystemParams};
use noise::NoiseRealization;
use num_complex::Complex64;
use rayon::prelude::*;
use std::io::{BufRead, Write};

/// Minimum integration steps per oscillation period.
pub const MIN_STEPS_PER_PERIOD: f64 = 50.0;
/// Relative tolerance for snapping the delay to integer steps.
pub const DELAY_SNAP_TOL: f64 = 1e-3;
/// Steps per runaway-detection block.
const RUNAWAY_BLOCK: usize = 4096;

/// What the delay buffer holds for times before the start of the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Prehistory {
    /// Particle held at `initial_position` for t < 0 (default).
    InitialPosition,
    /// Empty line: zero displacement for t < 0.
    Zero,
}

/// Integration configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    /// Integration step [s].
    pub dt: f64,
    /// Total simulated time [s].
    pub duration: f64,
    /// Master RNG seed.
    pub seed: u64,
    /// Initial span discarded from the record [s].
    pub warmup: f64,
    /// Initial position [m].
    pub initial_position: f64,
    /// Initial velocity [m/s].
    pub initial_velocity: f64,
    /// Record every n-th integration step (output decimation).
    pub store_every: usize,
    pub prehistory: Prehistory,
    /// Runaway trigger: block variance exceeding this multiple of the first
    /// block's variance aborts the run.
    pub runaway_factor: f64,
}

impl SimConfig {
    pub fn new(dt: f64, duration: f64, seed: u64) -> Self {
        Self {
            dt,
            duration,
            seed,
            warmup: 0.0,
            initial_position: 0.0,
            initial_velocity: 0.0,
            store_every: 1,
            prehistory: Prehistory::InitialPosition,
            runaway_factor: 1e6,
        }
    }

    /// Pick a step that resolves the oscillation with at least
    /// [`MIN_STEPS_PER_PERIOD`] steps and divides the delay exactly.
    ///
    /// The delay step count is rounded up to a multiple of four so that the
    /// output decimation (also chosen here) divides it, which detector
    /// synthesis relies on.
    pub fn for_system(omega: f64, tau: f64, duration: f64, seed: u64) -> Self {
        let dt_max = 2.0 * std::f64::consts::PI / (MIN_STEPS_PER_PERIOD * omega);
        let (dt, store_every) = if tau > 0.0 {
            let mut n_delay = (tau / dt_max).ceil() as usize;
            n_delay = n_delay.div_ceil(4) * 4;
            let dt = tau / n_delay as f64;
            (dt, 4usize.min(n_delay))
        } else {
            (2.0 * std::f64::consts::PI / (64.0 * omega), 4)
        };
        let mut cfg = Self::new(dt, duration, seed);
        cfg.store_every = store_every;
        cfg
    }

    pub fn with_warmup(mut self, warmup: f64) -> Self {
        self.warmup = warmup;
        self
    }

    pub fn with_initial(mut self, position: f64, velocity: f64) -> Self {
        self.initial_position = position;
        self.initial_velocity = velocity;
        self
    }

    /// Validate against the system it will integrate and lay out step counts.
    pub fn plan(&self, system: &SystemParams, feedback: &FeedbackParams) -> Result<SimPlan> {
        feedback.validate()?;
        if !(self.dt > 0.0) {
            return Err(Error::ConfigRejected("dt must be positive".into()));
        }
        if !(self.duration > self.warmup) || self.warmup < 0.0 {
            return Err(Error::ConfigRejected(
                "duration must exceed warmup and warmup must be non-negative".into(),
            ));
        }
        if self.store_every == 0 {
            return Err(Error::ConfigRejected("store_every must be at least 1".into()));
        }
        if !(self.runaway_factor > 1.0) {
            return Err(Error::ConfigRejected("runaway_factor must exceed 1".into()));
        }
        let omega = system.trap.omega;
        let dt_max = 2.0 * std::f64::consts::PI / (MIN_STEPS_PER_PERIOD * omega);
        if self.dt > dt_max * (1.0 + 1e-12) {
            return Err(Error::ConfigRejected(format!(
                "dt = {:.3e} s under-resolves the oscillation; need <= {:.3e} s",
                self.dt, dt_max
            )));
        }
        let beta_eff = feedback.effective_gain();
        let n_delay = if beta_eff != 0.0 {
            let n = (feedback.tau / self.dt).round() as usize;
            if n < 1 {
                return Err(Error::ConfigRejected(format!(
                    "delay {:.3e} s shorter than one step {:.3e} s",
                    feedback.tau, self.dt
                )));
            }
            let snapped = n as f64 * self.dt;
            if (feedback.tau - snapped).abs() / feedback.tau > DELAY_SNAP_TOL {
                return Err(Error::ConfigRejected(format!(
                    "delay snap error {:.2e} exceeds {:.0e} relative",
                    (feedback.tau - snapped).abs() / feedback.tau,
                    DELAY_SNAP_TOL
                )));
            }
            n
        } else {
            0
        };
        let mut n_warmup = (self.warmup / self.dt).ceil() as usize;
        n_warmup = n_warmup.div_ceil(self.store_every) * self.store_every;
        let n_total = (self.duration / self.dt).floor() as usize;
        if n_total <= n_warmup {
            return Err(Error::ConfigRejected(
                "duration leaves no samples after warmup".into(),
            ));
        }
        let n_out = (n_total - n_warmup) / self.store_every;
        if n_out < 2 {
            return Err(Error::ConfigRejected(format!(
                "configuration yields only {n_out} output samples"
            )));
        }
        Ok(SimPlan {
            n_delay,
            n_warmup,
            n_out,
            n_steps: n_warmup + n_out * self.store_every,
        })
    }
}

/// Resolved step layout for one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimPlan {
    /// Delay expressed in integration steps (0 when feedback is off).
    pub n_delay: usize,
    /// Integration steps discarded as warmup (multiple of `store_every`).
    pub n_warmup: usize,
    /// Recorded output samples.
    pub n_out: usize,
    /// Total integration steps.
    pub n_steps: usize,
}

/// Uniformly sampled position/velocity record with seed provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Output sample spacing [s] (integration step times `store_every`).
    pub dt: f64,
    pub positions: Vec<f64>,
    pub velocities: Vec<f64>,
    /// Master seed the run used.
    pub seed: u64,
    /// Hash of every input parameter except the seed.
    pub params_digest: u64,
    /// Integration step [s].
    pub dt_integration: f64,
    /// Integration steps discarded before the first sample.
    pub warmup_steps: u64,
    /// Output decimation factor.
    pub store_every: u32,
    /// Delay in integration steps (0 = no feedback).
    pub delay_steps: u32,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Sample times relative to the first stored sample.
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        let dt = self.dt;
        (0..self.len()).map(move |i| i as f64 * dt)
    }

    pub fn position_mean(&self) -> f64 {
        self.positions.iter().sum::<f64>() / self.len() as f64
    }

    pub fn position_variance(&self) -> f64 {
        let mean = self.position_mean();
        self.positions.iter().map(|z| (z - mean) * (z - mean)).sum::<f64>() / self.len() as f64
    }

    /// Validation: matching lengths, at least two samples, all values finite.
    pub fn validate(&self) -> Result<()> {
        if self.positions.len() != self.velocities.len() {
            return Err(Error::ConfigRejected(
                "trajectory position/velocity length mismatch".into(),
            ));
        }
        if self.positions.len() < 2 {
            return Err(Error::TooShort {
                needed: 2,
                got: self.positions.len(),
            });
        }
        if !self.positions.iter().chain(self.velocities.iter()).all(|v| v.is_finite()) {
            return Err(Error::UnstableSystem(
                "trajectory contains non-finite samples".into(),
            ));
        }
        Ok(())
    }

    /// Write as CSV: comment headers with provenance, then `t,z,v` rows in SI
    /// units at full double precision.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# levcf trajectory v1")?;
        writeln!(
            w,
            "# dt={}, seed={}, params_digest={:016x}",
            self.dt, self.seed, self.params_digest
        )?;
        writeln!(
            w,
            "# dt_integration={}, warmup_steps={}, store_every={}, delay_steps={}",
            self.dt_integration, self.warmup_steps, self.store_every, self.delay_steps
        )?;
        writeln!(w, "t,z,v")?;
        for i in 0..self.len() {
            writeln!(w, "{},{},{}", i as f64 * self.dt, self.positions[i], self.velocities[i])?;
        }
        Ok(())
    }

    /// Read back a CSV produced by [`Trajectory::write_csv`].
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut dt = None;
        let mut seed = 0u64;
        let mut params_digest = 0u64;
        let mut dt_integration = 0.0;
        let mut warmup_steps = 0u64;
        let mut store_every = 1u32;
        let mut delay_steps = 0u32;
        let mut positions = Vec::new();
        let mut velocities = Vec::new();
        let bad = |what: &str| Error::ConfigError(format!("trajectory csv: bad {what}"));
        for line in r.lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line == "t,z,v" {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                for field in rest.split(',') {
                    let mut kv = field.splitn(2, '=');
                    let key = kv.next().unwrap_or("").trim();
                    let Some(value) = kv.next() else { continue };
                    let value = value.trim();
                    match key {
                        "dt" => dt = Some(value.parse().map_err(|_| bad("dt"))?),
                        "seed" => seed = value.parse().map_err(|_| bad("seed"))?,
                        "params_digest" => {
                            params_digest =
                                u64::from_str_radix(value, 16).map_err(|_| bad("params_digest"))?
                        }
                        "dt_integration" => {
                            dt_integration = value.parse().map_err(|_| bad("dt_integration"))?
                        }
                        "warmup_steps" => {
                            warmup_steps = value.parse().map_err(|_| bad("warmup_steps"))?
                        }
                        "store_every" => {
                            store_every = value.parse().map_err(|_| bad("store_every"))?
                        }
                        "delay_steps" => {
                            delay_steps = value.parse().map_err(|_| bad("delay_steps"))?
                        }
                        _ => {}
                    }
                }
                continue;
            }
            let mut cols = line.split(',');
            let _t = cols.next().ok_or_else(|| bad("row"))?;
            let z: f64 = cols.next().ok_or_else(|| bad("row"))?.parse().map_err(|_| bad("z"))?;
            let v: f64 = cols.next().ok_or_else(|| bad("row"))?.parse().map_err(|_| bad("v"))?;
            positions.push(z);
            velocities.push(v);
        }
        let traj = Self {
            dt: dt.ok_or_else(|| bad("missing dt header"))?,
            positions,
            velocities,
            seed,
            params_digest,
            dt_integration,
            warmup_steps,
            store_every,
            delay_steps,
        };
        traj.validate()?;
        Ok(traj)
    }
}

/// Hash of every input parameter except the seed. Ties trajectories to the
/// physics that produced them while still allowing seed-variation studies on
/// the same digest.
pub fn params_digest(system: &SystemParams, feedback: &FeedbackParams, config: &SimConfig) -> u64 {
    let mut h = Fnv64::new();
    h.write_str("levcf-params-v1");
    for v in [
        system.particle.radius,
        system.particle.density,
        system.particle.mass,
        system.trap.omega,
        system.trap.wavelength,
        system.trap.trap_power,
        system.trap.scattered_power,
        system.trap.gouy_factor,
        system.trap.phase_factor,
        system.bath.pressure,
        system.bath.temperature,
        system.bath.gamma_gas,
        system.bath.gamma_recoil,
        system.bath.gamma_cold_damp,
        feedback.beta,
        feedback.tau,
        feedback.phi0,
        feedback.sigma_phi,
        feedback.efficiency,
        config.dt,
        config.duration,
        config.warmup,
        config.initial_position,
        config.initial_velocity,
        config.runaway_factor,
    ] {
        h.write_f64(v);
    }
    h.write_u64(config.store_every as u64);
    h.write_u64(match config.prehistory {
        Prehistory::InitialPosition => 0,
        Prehistory::Zero => 1,
    });
    h.finish()
}

/// Stepper for the delayed stochastic oscillator. [`integrate`] drives it;
/// it is public so schedule-driven runs (free-running loop phase) can step
/// it window by window.
pub struct DelayedOscillator {
    z: f64,
    v: f64,
    step_index: usize,
    // physics
    omega2: f64,
    beta_eff: f64,
    half_dt: f64,
    exp_damp: f64,
    kick_gas: f64,
    kick_recoil: f64,
    /// Per-step sample scale of dphi/B [m].
    phase_scale: f64,
    has_phase_noise: bool,
    raw_beta: f64,
    // delay line
    n_delay: usize,
    history: Vec<f64>,
    noise: NoiseRealization,
}

impl DelayedOscillator {
    pub fn new(system: &SystemParams, feedback: &FeedbackParams, config: &SimConfig) -> Result<Self> {
        let plan = config.plan(system, feedback)?;
        Ok(Self::with_plan(system, feedback, config, &plan))
    }

    fn with_plan(
        system: &SystemParams,
        feedback: &FeedbackParams,
        config: &SimConfig,
        plan: &SimPlan,
    ) -> Self {
        let dt = config.dt;
        let gamma0 = system.gamma0();
        let noise_amp = system.noise_amplitudes(feedback);
        let m = system.particle.mass;
        // Exact Ornstein-Uhlenbeck update for dv = -gamma0 v dt + (sigma/m) dW:
        // v <- exp(-gamma0 dt) v + (sigma/m) sqrt((1 - exp(-2 gamma0 dt)) / (2 gamma0)) xi
        let ou_var = if gamma0 > 0.0 {
            (-(-2.0 * gamma0 * dt).exp_m1()) / (2.0 * gamma0)
        } else {
            dt
        };
        let prehistory = match config.prehistory {
            Prehistory::InitialPosition => config.initial_position,
            Prehistory::Zero => 0.0,
        };
        let mut history = vec![prehistory; plan.n_delay + 1];
        history[0] = config.initial_position;
        Self {
            z: config.initial_position,
            v: config.initial_velocity,
            step_index: 0,
            omega2: system.trap.omega * system.trap.omega,
            beta_eff: feedback.effective_gain(),
            half_dt: 0.5 * dt,
            exp_damp: (-gamma0 * dt).exp(),
            kick_gas: noise_amp.sigma_m / m * ou_var.sqrt(),
            kick_recoil: noise_amp.sigma_r / m * ou_var.sqrt(),
            phase_scale: feedback.sigma_phi / (system.trap.phase_factor * dt.sqrt()),
            has_phase_noise: feedback.sigma_phi > 0.0,
            raw_beta: feedback.beta,
            n_delay: plan.n_delay,
            history,
            noise: NoiseRealization::from_seed(config.seed),
        }
    }

    /// Change the loop phase (free-running phase emulation). Keeps the raw
    /// gain and recomputes the effective gain under the cosine coupling.
    pub fn set_loop_phase(&mut self, phi0: f64) {
        self.beta_eff = self.raw_beta * phi0.cos();
    }

    pub fn position(&self) -> f64 {
        self.z
    }

    pub fn velocity(&self) -> f64 {
        self.v
    }

    #[inline]
    fn accel(&self, z: f64, u: f64) -> f64 {
        -self.omega2 * (z - self.beta_eff * u)
    }

    /// Advance one step; returns the new (position, velocity).
    #[inline]
    pub fn step(&mut self) -> (f64, f64) {
        // Phase-noise sample, constant over this step, drawn whenever the
        // channel exists so detector synthesis can replay the sequence.
        let dphi_over_b = if self.has_phase_noise {
            self.phase_scale * self.noise.phase.next()
        } else {
            0.0
        };
        let u = if self.n_delay > 0 {
            let len = self.history.len();
            let k = self.step_index;
            // Mean of the two samples bracketing t + dt/2 - tau.
            let zd0 = self.history[(k + len - self.n_delay % len) % len];
            let zd1 = self.history[(k + 1 + len - self.n_delay % len) % len];
            0.5 * (zd0 + zd1) + dphi_over_b
        } else {
            0.0
        };
        let mut v = self.v + self.half_dt * self.accel(self.z, u);
        let mut z = self.z + self.half_dt * v;
        v = self.exp_damp * v
            + self.kick_gas * self.noise.gas.next()
            + self.kick_recoil * self.noise.recoil.next();
        z += self.half_dt * v;
        v += self.half_dt * self.accel(z, u);
        self.z = z;
        self.v = v;
        self.step_index += 1;
        let len = self.history.len();
        let slot = self.step_index % len;
        self.history[slot] = z;
        (z, v)
    }
}

/// Integrate one trajectory. Deterministic for a fixed seed; the record
/// starts after the warmup and is decimated by `store_every`.
pub fn integrate(
    system: &SystemParams,
    feedback: &FeedbackParams,
    config: &SimConfig,
) -> Result<Trajectory> {
    let plan = config.plan(system, feedback)?;
    let mut osc = DelayedOscillator::with_plan(system, feedback, config, &plan);
    let mut positions = Vec::with_capacity(plan.n_out);
    let mut velocities = Vec::with_capacity(plan.n_out);

    let mut block_sum = 0.0f64;
    let mut block_n = 0usize;
    let mut reference_ms: Option<f64> = None;

    for k in 0..plan.n_steps {
        let (z, v) = osc.step();
        block_sum += z * z;
        block_n += 1;
        if block_n == RUNAWAY_BLOCK {
            let ms = block_sum / block_n as f64;
            if !ms.is_finite() {
                return Err(Error::UnstableSystem(format!(
                    "non-finite state at t = {:.3e} s",
                    (k + 1) as f64 * config.dt
                )));
            }
            match reference_ms {
                None if ms > 0.0 => reference_ms = Some(ms),
                Some(reference) if ms > config.runaway_factor * reference => {
                    return Err(Error::UnstableSystem(format!(
                        "variance grew {:.1e}-fold by t = {:.3e} s (runaway)",
                        ms / reference,
                        (k + 1) as f64 * config.dt
                    )));
                }
                _ => {}
            }
            block_sum = 0.0;
            block_n = 0;
        }
        let done = k + 1;
        if done > plan.n_warmup && (done - plan.n_warmup) % config.store_every == 0 {
            positions.push(z);
            velocities.push(v);
        }
    }

    let traj = Trajectory {
        dt: config.dt * config.store_every as f64,
        positions,
        velocities,
        seed: config.seed,
        params_digest: params_digest(system, feedback, config),
        dt_integration: config.dt,
        warmup_steps: plan.n_warmup as u64,
        store_every: config.store_every as u32,
        delay_steps: plan.n_delay as u32,
    };
    traj.validate()?;
    Ok(traj)
}

/// Integrate `n_runs` independent trajectories in parallel. Run `i` uses
/// master seed `seed + i`, so results are reproducible and order-independent.
pub fn integrate_ensemble(
    system: &SystemParams,
    feedback: &FeedbackParams,
    config: &SimConfig,
    n_runs: usize,
) -> Result<Vec<Trajectory>> {
    if n_runs < 1 {
        return Err(Error::ConfigRejected("n_runs must be at least 1".into()));
    }
    (0..n_runs)
        .into_par_iter()
        .map(|i| {
            let mut cfg = *config;
            cfg.seed = config.seed.wrapping_add(i as u64);
            integrate(system, feedback, &cfg)
        })
        .collect()
}

/// Dominant characteristic root of the linearized delay equation.
#[derive(Debug, Clone, Copy)]
pub struct CharacteristicRoot {
    /// Energy decay rate `-2 Re(s)` [rad/s]; equals the fitted linewidth.
    pub decay_rate: f64,
    /// Oscillation frequency `Im(s)` [rad/s].
    pub frequency: f64,
    /// The root itself.
    pub root: Complex64,
}

/// Solve `s^2 + gamma_0 s + omega^2 (1 - beta e^(-s tau)) = 0` for the root
/// pair nearest `+/- i omega` by Newton iteration seeded at
/// `i omega - gamma_0 / 2`.
///
/// Serves as an independent oracle for the simulated linewidth and frequency
/// shift: to first order in beta the decay is `gamma_0 + beta omega
/// sin(omega tau)` and the shift is `-(beta omega / 2) cos(omega tau)`.
pub fn characteristic_roots(
    system: &SystemParams,
    feedback: &FeedbackParams,
) -> Result<CharacteristicRoot> {
    feedback.validate()?;
    let omega = system.trap.omega;
    let gamma0 = system.gamma0();
    let beta = feedback.effective_gain();
    let tau = feedback.tau;
    let omega2 = Complex64::new(omega * omega, 0.0);

    let f = |s: Complex64| s * s + gamma0 * s + omega2 * (1.0 - beta * (-s * tau).exp());
    let fp = |s: Complex64| 2.0 * s + gamma0 + omega2 * beta * tau * (-s * tau).exp();

    let osc = (omega * omega - gamma0 * gamma0 / 4.0).max(0.0).sqrt();
    let mut s = Complex64::new(-gamma0 / 2.0, osc);
    for _ in 0..100 {
        let step = f(s) / fp(s);
        s -= step;
        if step.norm() <= 1e-13 * s.norm() + 1e-12 * omega {
            return Ok(CharacteristicRoot {
                decay_rate: -2.0 * s.re,
                frequency: s.im,
                root: s,
            });
        }
    }
    Err(Error::NoConvergence { iterations: 100 })
}
