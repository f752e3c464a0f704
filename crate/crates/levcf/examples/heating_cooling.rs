//! Loop-phase control: the same delayed feedback cools at phi0 = 0 and
//! heats at phi0 = pi, seen in the areas of the displacement spectra.
//!
//! ```bash
//! cargo run --release -p levcf --example heating_cooling
//! ```

use levcf::dynamics::{integrate, SimConfig};
use levcf::model::{self, reference};
use levcf::spectral;

fn main() -> levcf::Result<()> {
    let two_pi = 2.0 * std::f64::consts::PI;
    let gas = model::gamma_gas_from_pressure(1e-2, reference::RADIUS, reference::MASS, 300.0);
    let sys = reference::system_at(1e-2, two_pi * 78.0 - gas);

    // The heated point uses a reduced gain: beyond |gamma_c| = gamma_0 the
    // linear model has no steady state.
    let cases = [
        ("cooled (phi0 = 0)", 4.10e-2, 0.0),
        ("feedback off", 0.0, 0.0),
        ("heated (phi0 = pi)", 1.2e-3, std::f64::consts::PI),
    ];

    println!("{:>20}  {:>12}  {:>14}  {:>12}", "case", "T_eff", "<z^2>", "linewidth");
    for (label, beta, phi0) in cases {
        let mut fb = reference::feedback(beta);
        fb.phi0 = phi0;
        let gamma_exp = sys.gamma_total(&fb);
        let cfg = SimConfig::for_system(sys.trap.omega, fb.tau, 20.0 / gamma_exp + 2.0, 3)
            .with_warmup(20.0 / gamma_exp);
        let traj = integrate(&sys, &fb, &cfg)?;
        let var = traj.position_variance();
        let t_eff = sys.particle.mass * sys.trap.omega.powi(2) * var / model::K_B;
        let psd = spectral::welch_psd(&traj, 1 << 14, 0.5)?;
        let line = spectral::fit_lorentzian(&psd, None)
            .map(|f| f.linewidth / two_pi)
            .unwrap_or(f64::NAN);
        println!(
            "{:>20}  {:9.2} mK  {:.3e} m^2  {:9.1} Hz",
            label,
            t_eff * 1e3,
            var,
            line
        );
    }
    Ok(())
}
