//! Temperature versus feedback gain: phase noise sets a floor. Simulated
//! temperatures over a coherent-damping sweep are fitted for the noise
//! parameters; the derived minimum temperature lands on the closed form.
//!
//! ```bash
//! cargo run --release -p levcf --example temperature_minimum
//! ```

use levcf::dynamics::{integrate_ensemble, SimConfig};
use levcf::fitting::{fit_temperature_vs_damping, DampingFitContext, DampingPoint};
use levcf::model::{self, reference};

fn main() -> levcf::Result<()> {
    let two_pi = 2.0 * std::f64::consts::PI;
    let sys = reference::system();
    let s = (sys.trap.omega * reference::TAU).sin();
    let ctx = DampingFitContext {
        mass: sys.particle.mass,
        omega: sys.trap.omega,
        phase_factor: sys.trap.phase_factor,
        gamma0: sys.gamma0(),
        sin_omega_tau: s,
    };

    println!("{:>12}  {:>10}  {:>12}", "gamma_c/2pi", "beta", "T_eff (sim)");
    let mut points = Vec::new();
    for ghz in [25.0, 50.0, 100.0, 200.0, 400.0, 800.0, 1400.0, 2400.0, 4000.0] {
        let gc = two_pi * ghz;
        let beta = gc / (sys.trap.omega * s);
        let fb = reference::feedback(beta);
        let gamma_tot = sys.gamma_total(&fb);
        let cfg = SimConfig::for_system(sys.trap.omega, fb.tau, (250.0 / gamma_tot).max(0.3), 19)
            .with_warmup(15.0 / gamma_tot);
        let ens = integrate_ensemble(&sys, &fb, &cfg, 3)?;
        let temps: Vec<f64> = ens
            .iter()
            .map(|t| sys.particle.mass * sys.trap.omega.powi(2) * t.position_variance() / model::K_B)
            .collect();
        let mean = temps.iter().sum::<f64>() / temps.len() as f64;
        let sd = (temps.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / 2.0).sqrt();
        println!("{:9.0} Hz  {:10.4e}  {:9.3} mK", ghz, beta, mean * 1e3);
        points.push(DampingPoint {
            gamma_c: gc,
            t_eff: mean,
            sigma_t: (sd / (temps.len() as f64).sqrt()).max(0.01 * mean),
        });
    }

    let fit = fit_temperature_vs_damping(&points, &ctx)?;
    let closed = model::minimum_temperature(&sys, &reference::feedback(0.03))?;
    println!("\nfitted minimum temperature: {:.0} +- {:.0} uK", fit.t_min * 1e6, fit.t_min_sigma * 1e6);
    println!("closed form on calibrated inputs: {:.0} uK", closed * 1e6);
    println!("optimal gain: {:.4e} (fit) vs {:.4e} (closed form)",
        fit.beta_opt,
        model::optimal_gain(&sys, &reference::feedback(0.0))?);
    println!(
        "phonons at the fitted minimum: {:.0}",
        model::phonon_occupation(fit.t_min, sys.trap.omega)
    );
    Ok(())
}
