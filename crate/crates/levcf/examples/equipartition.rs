//! Equipartition anchor: a gas-damped particle with no feedback thermalizes
//! at the bath temperature, and the spectral area method recovers it.
//!
//! ```bash
//! cargo run --release -p levcf --example equipartition
//! ```

use levcf::dynamics::{integrate_ensemble, SimConfig};
use levcf::model::{self, reference};
use levcf::spectral;

fn main() -> levcf::Result<()> {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut sys = reference::system_at(1.0, 0.0);
    sys.bath.gamma_gas = two_pi * 500.0;
    sys.trap.scattered_power = 0.0; // gas only
    let fb = model::FeedbackParams {
        beta: 0.0,
        tau: 0.0,
        phi0: 0.0,
        sigma_phi: 0.0,
        efficiency: 1.0,
    };

    let cfg = SimConfig::for_system(sys.trap.omega, 0.0, 1.0, 7).with_warmup(0.05);
    let ensemble = integrate_ensemble(&sys, &fb, &cfg, 5)?;

    println!("bath: T = {} K, gamma_gas/2pi = {:.0} Hz", sys.bath.temperature, sys.bath.gamma_gas / two_pi);
    let mut temps = Vec::new();
    for (i, traj) in ensemble.iter().enumerate() {
        // Direct equipartition from the variance.
        let t_var = sys.particle.mass * sys.trap.omega.powi(2) * traj.position_variance() / model::K_B;
        // Spectral route.
        let psd = spectral::welch_psd(traj, 1 << 14, 0.5)?;
        let width = sys.gamma0() / two_pi;
        let est = spectral::temperature_from_area(
            &psd,
            sys.particle.mass,
            sys.trap.omega,
            (47e3 - 10.0 * width, 47e3 + 10.0 * width),
        )?;
        println!("  run {i}: variance -> {:.1} K, area -> {:.1} K (+- {:.1})", t_var, est.t_eff, est.t_err);
        temps.push(est.t_eff);
    }
    let mean = temps.iter().sum::<f64>() / temps.len() as f64;
    println!("ensemble mean: {:.1} K (bath 300 K)", mean);
    Ok(())
}
