//! Synthetic detector records and noise-squashing analysis.
//!
//! Two heterodyne detectors watch the particle: an out-of-loop (OL) detector
//! before the delay line, which sees the true position plus its own white
//! imprecision, and an in-loop (IL) detector after the line, which sees the
//! delayed position plus the loop's phase noise converted to apparent
//! displacement. When the feedback force and the IL record share one
//! phase-noise realization, the loop correlates detector noise with the
//! motion and the IL spectrum dips below its own floor near resonance
//! (squashing). Regenerating the phase noise from a different seed destroys
//! the correlation and the dip.
//!
//! The phase-noise path is reproducible: the integrator consumes one
//! standard-normal draw per step from the dedicated phase stream, and
//! [`regenerate_phase_path`] replays the same stream, discarding the warmup
//! draws and averaging blocks of `store_every` draws down to the output
//! rate. Trajectories carry a digest of every physics/configuration input
//! (the seed excluded), and [`synthesize_il`] refuses to pair records whose
//! digests differ. The seed is deliberately left out of that check: pairing
//! a trajectory with a phase path regenerated from a different seed is the
//! controlled way to break the correlation.

use crate::digest::Fnv64;
use crate::dynamics::noise::{GaussianStream, STREAM_DETECTOR_IL, STREAM_DETECTOR_OL, STREAM_PHASE};
use crate::dynamics::{params_digest, SimConfig, Trajectory};
use crate::error::{Error, Result};
use crate::model::{FeedbackParams, SystemParams};
use crate::spectral::{Psd, PsdConvention};

/// Default in-loop imprecision floor [m^2/Hz], kept well below the loop
/// phase-noise floor so the feedback-off in-loop spectrum is dominated by
/// the latter.
pub const DEFAULT_IL_IMPRECISION: f64 = 5e-26;
/// Default out-of-loop imprecision floor [m^2/Hz].
pub const DEFAULT_OL_IMPRECISION: f64 = 1e-24;

/// Which side of the delay line a record was taken on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectorKind {
    InLoop,
    OutOfLoop,
}

/// Apparent-displacement record of one detector.
#[derive(Debug, Clone)]
pub struct DetectorRecord {
    /// Sample spacing [s], same as the source trajectory.
    pub dt: f64,
    /// Apparent displacement [m].
    pub samples: Vec<f64>,
    pub kind: DetectorKind,
    /// One-sided imprecision floor [m^2/Hz].
    pub imprecision_psd: f64,
}

impl DetectorRecord {
    /// Welch spectrum of the record.
    pub fn psd(&self, segment_len: usize, overlap: f64) -> Result<Psd> {
        crate::spectral::welch_psd_from_samples(&self.samples, self.dt, segment_len, overlap)
    }
}

/// The loop phase-noise realization expressed as apparent displacement
/// `dphi(t)/B` at the trajectory's output rate.
#[derive(Debug, Clone)]
pub struct PhasePath {
    /// `dphi/B` per output sample [m].
    pub samples_over_b: Vec<f64>,
    /// Output sample spacing [s].
    pub dt: f64,
    /// Digest of the physics/configuration inputs (seed excluded).
    pub params_digest: u64,
    /// Seed the stream was drawn from.
    pub seed: u64,
}

impl PhasePath {
    /// Digest of the realization itself (seed included), for manifests.
    pub fn realization_digest(&self) -> u64 {
        let mut h = Fnv64::new();
        h.write_u64(self.params_digest).write_u64(self.seed);
        h.finish()
    }
}

/// Replay the phase-noise stream the integrator consumed for `config`,
/// reduced to the output rate.
///
/// Each integration step draws one sample `dphi_k/B = sigma_phi xi_k /
/// (B sqrt(dt))`; one output sample carries the mean of the `store_every`
/// draws *centered* on the sample instant. The mean keeps the white density
/// `2 sigma_phi^2 / B^2` exact at the output rate, and centering keeps the
/// filtered noise phase-aligned with the point-sampled position: a trailing
/// window would lag by half an output sample, which visibly weakens the
/// force-detector cancellation behind noise squashing.
pub fn regenerate_phase_path(
    system: &SystemParams,
    feedback: &FeedbackParams,
    config: &SimConfig,
) -> Result<PhasePath> {
    let plan = config.plan(system, feedback)?;
    let se = config.store_every;
    let scale = feedback.sigma_phi / (system.trap.phase_factor * config.dt.sqrt());
    let mut stream = GaussianStream::new(config.seed, STREAM_PHASE);
    let mut samples = Vec::with_capacity(plan.n_out);
    if feedback.sigma_phi > 0.0 {
        for _ in 0..plan.n_warmup + se / 2 {
            stream.next();
        }
        for _ in 0..plan.n_out {
            let mut acc = 0.0;
            for _ in 0..se {
                acc += stream.next();
            }
            samples.push(scale * acc / se as f64);
        }
    } else {
        samples.resize(plan.n_out, 0.0);
    }
    Ok(PhasePath {
        samples_over_b: samples,
        dt: config.dt * se as f64,
        params_digest: params_digest(system, feedback, config),
        seed: config.seed,
    })
}

fn imprecision_sample_std(imprecision_psd: f64, dt: f64) -> f64 {
    // One-sided floor S means per-sample variance S / (2 dt).
    (imprecision_psd / (2.0 * dt)).sqrt()
}

/// Out-of-loop record: true position plus an independent white imprecision
/// floor.
pub fn synthesize_ol(traj: &Trajectory, imprecision_psd: f64, seed: u64) -> DetectorRecord {
    assert!(imprecision_psd >= 0.0, "imprecision floor must be non-negative");
    let mut stream = GaussianStream::new(seed, STREAM_DETECTOR_OL);
    let std = imprecision_sample_std(imprecision_psd, traj.dt);
    let samples = traj
        .positions
        .iter()
        .map(|z| z + if std > 0.0 { std * stream.next() } else { 0.0 })
        .collect();
    DetectorRecord {
        dt: traj.dt,
        samples,
        kind: DetectorKind::OutOfLoop,
        imprecision_psd,
    }
}

/// In-loop record: delayed position, the shared phase-noise realization as
/// apparent displacement, and the detector's own imprecision floor.
///
/// The phase path must have been regenerated from the same physics and
/// configuration as the trajectory (`StreamMismatch` otherwise); only the
/// seed may differ, which decorrelates the record from the feedback force.
/// The record keeps the trajectory's length; the first `tau/dt` samples,
/// whose delayed positions predate the record, repeat the first position.
pub fn synthesize_il(
    traj: &Trajectory,
    phase_path: &PhasePath,
    imprecision_psd: f64,
    tau: f64,
) -> Result<DetectorRecord> {
    if phase_path.params_digest != traj.params_digest {
        return Err(Error::StreamMismatch);
    }
    if phase_path.samples_over_b.len() != traj.len() || phase_path.dt != traj.dt {
        return Err(Error::StreamMismatch);
    }
    let n_shift = if tau > 0.0 {
        let n = (tau / traj.dt).round() as usize;
        if ((n as f64 * traj.dt) - tau).abs() > 1e-3 * tau {
            return Err(Error::ConfigRejected(format!(
                "delay {tau:.3e} s is not an integer number of output samples"
            )));
        }
        n
    } else {
        0
    };
    assert!(imprecision_psd >= 0.0, "imprecision floor must be non-negative");
    let mut stream = GaussianStream::new(traj.seed, STREAM_DETECTOR_IL);
    let std = imprecision_sample_std(imprecision_psd, traj.dt);
    let samples = (0..traj.len())
        .map(|i| {
            let z_delayed = traj.positions[i.saturating_sub(n_shift)];
            z_delayed
                + phase_path.samples_over_b[i]
                + if std > 0.0 { std * stream.next() } else { 0.0 }
        })
        .collect();
    Ok(DetectorRecord {
        dt: traj.dt,
        samples,
        kind: DetectorKind::InLoop,
        imprecision_psd,
    })
}

/// Frequency bands for the squashing metric, in Hz.
#[derive(Debug, Clone, Copy)]
pub struct SquashingBands {
    /// Half-width of the signal band around the resonance.
    pub signal_halfwidth_hz: f64,
    /// Floor band offsets from the resonance (low edge, high edge), applied
    /// symmetrically on both sides.
    pub floor_offset_hz: (f64, f64),
}

impl SquashingBands {
    /// Defaults relative to the resonance: signal band of +/- 3%, floor taken
    /// 5% to 15% away on both sides.
    pub fn default_for(omega: f64) -> Self {
        let f0 = omega / (2.0 * std::f64::consts::PI);
        Self {
            signal_halfwidth_hz: 0.03 * f0,
            floor_offset_hz: (0.05 * f0, 0.15 * f0),
        }
    }
}

/// Squashing metric: minimum density in the signal band divided by the
/// median off-resonant floor. Below one means the spectrum dips under its
/// own floor; a clear dip (about 0.8 or less) only appears when the in-loop
/// record shares the feedback's phase-noise realization.
pub fn squashing_metric(psd_il: &Psd, omega: f64, bands: &SquashingBands) -> Result<f64> {
    let hz = psd_il.to_convention(PsdConvention::OneSidedHz);
    let f0 = omega / (2.0 * std::f64::consts::PI);
    let fmax = *hz.frequencies.last().unwrap_or(&0.0);
    let sig = (f0 - bands.signal_halfwidth_hz, f0 + bands.signal_halfwidth_hz);
    let floor_lo = (f0 - bands.floor_offset_hz.1, f0 - bands.floor_offset_hz.0);
    let floor_hi = (f0 + bands.floor_offset_hz.0, f0 + bands.floor_offset_hz.1);
    if sig.0 <= 0.0 || floor_lo.0 <= 0.0 || floor_hi.1 >= fmax {
        return Err(Error::BandOutOfRange(format!(
            "squashing bands around {f0:.3e} Hz exceed the grid [0, {fmax:.3e}]"
        )));
    }
    let df = hz.df();
    let in_band = |f: f64, band: (f64, f64)| f >= band.0 && f <= band.1;
    let mut min_sig = f64::INFINITY;
    let mut floor_vals = Vec::new();
    for (f, v) in hz.frequencies.iter().zip(&hz.values) {
        if in_band(*f, sig) {
            min_sig = min_sig.min(*v);
        } else if in_band(*f, floor_lo) || in_band(*f, floor_hi) {
            floor_vals.push(*v);
        }
    }
    if !min_sig.is_finite() || floor_vals.len() < 4 {
        return Err(Error::BandOutOfRange(format!(
            "bands resolve too few bins at df = {df:.3e} Hz"
        )));
    }
    floor_vals.sort_by(f64::total_cmp);
    let floor = floor_vals[floor_vals.len() / 2];
    Ok(min_sig / floor)
}
