//! Coherent damping law: the fitted linewidth of simulated spectra follows
//! gamma_0 + beta omega sin(omega tau).
//!
//! ```bash
//! cargo run --release -p levcf --example damping_law
//! ```

use levcf::dynamics::{characteristic_roots, integrate_ensemble, SimConfig};
use levcf::model::{self, reference};
use levcf::spectral;

fn main() -> levcf::Result<()> {
    let two_pi = 2.0 * std::f64::consts::PI;
    // Operating point with a 2 pi x 78 Hz intrinsic linewidth.
    let gas = model::gamma_gas_from_pressure(1e-2, reference::RADIUS, reference::MASS, 300.0);
    let sys = reference::system_at(1e-2, two_pi * 78.0 - gas);
    let omega = sys.trap.omega;

    println!("gamma_0/2pi = {:.1} Hz, delay = {:.2} us", sys.gamma0() / two_pi, reference::TAU * 1e6);
    println!("{:>8}  {:>12}  {:>12}  {:>12}  {:>8}", "beta", "predicted", "root", "fitted", "error");

    for beta in [1e-3, 1e-2, 4.1e-2] {
        let fb = reference::feedback_noiseless(beta);
        let predicted = sys.gamma0() + model::coherent_damping(beta, omega, fb.tau);
        let root = characteristic_roots(&sys, &fb)?;

        let cfg = SimConfig::for_system(omega, fb.tau, 6.0, 11).with_warmup(0.05);
        let ensemble = integrate_ensemble(&sys, &fb, &cfg, 2)?;
        let psds: Vec<_> = ensemble
            .iter()
            .map(|t| spectral::welch_psd(t, 1 << 15, 0.5))
            .collect::<levcf::Result<_>>()?;
        let mut mean = psds[0].clone();
        for p in &psds[1..] {
            for (m, v) in mean.values.iter_mut().zip(&p.values) {
                *m += v;
            }
        }
        for m in mean.values.iter_mut() {
            *m /= psds.len() as f64;
        }
        mean.n_segments = psds.iter().map(|p| p.n_segments).sum();
        let fit = spectral::fit_lorentzian(&mean, None)?;

        println!(
            "{:8.0e}  {:9.1} Hz  {:9.1} Hz  {:9.1} Hz  {:7.2}%",
            beta,
            predicted / two_pi,
            root.decay_rate / two_pi,
            fit.linewidth / two_pi,
            100.0 * (fit.linewidth - predicted).abs() / predicted
        );
    }
    println!("\nat beta = 4.1e-2 the total linewidth reaches ~2 pi x 1.92 kHz");
    Ok(())
}
