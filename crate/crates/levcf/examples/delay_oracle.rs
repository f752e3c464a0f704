//! Characteristic-root oracle of the linearized delay equation: decay rate
//! and frequency shift versus the first-order expressions
//! `gamma_0 + beta omega sin(omega tau)` and `-(beta omega / 2) cos(omega tau)`.
//!
//! ```bash
//! cargo run --release -p levcf --example delay_oracle
//! ```

use levcf::dynamics::characteristic_roots;
use levcf::model::{self, reference};

fn main() -> levcf::Result<()> {
    let two_pi = 2.0 * std::f64::consts::PI;
    let sys = reference::system_at(1e-2, two_pi * 78.0);
    let omega = sys.trap.omega;
    let beta = 1e-2;

    println!("beta = {beta}, gamma_0/2pi = {:.1} Hz", sys.gamma0() / two_pi);
    println!(
        "{:>10}  {:>22}  {:>24}",
        "omega*tau", "decay rate (root|1st)", "freq shift (root|1st)"
    );
    for frac in [0.25, 0.5, 0.75, 1.25, 1.5] {
        let phase = frac * std::f64::consts::PI;
        let tau = phase / omega;
        let fb = model::FeedbackParams {
            beta,
            tau,
            phi0: 0.0,
            sigma_phi: 0.0,
            efficiency: 1.0,
        };
        let root = characteristic_roots(&sys, &fb)?;
        let first_order_decay = sys.gamma0() + model::coherent_damping(beta, omega, tau);
        let f0 = (omega * omega - sys.gamma0().powi(2) / 4.0).sqrt();
        let shift = root.frequency - f0;
        let first_order_shift = -(beta * omega / 2.0) * phase.cos();
        println!(
            "{:7.2} pi  {:9.1} | {:9.1} Hz  {:10.2} | {:10.2} Hz",
            frac,
            root.decay_rate / two_pi,
            first_order_decay / two_pi,
            shift / two_pi,
            first_order_shift / two_pi
        );
    }
    println!("\nnegative decay rates mark the heating (unstable) side");
    Ok(())
}
