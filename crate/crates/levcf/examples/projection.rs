//! Performance projection: scaling the reference configuration toward the
//! motional ground state (less phase noise, smaller particle, lower
//! pressure).
//!
//! ```bash
//! cargo run --release -p levcf --example projection
//! ```

use levcf::harness::presets;
use levcf::model::{self, reference};

fn main() -> levcf::Result<()> {
    let sys = reference::system();
    let fb = reference::feedback(0.03);
    let base_t = model::minimum_temperature(&sys, &fb)?;
    println!(
        "reference: t_min = {:.0} uK, n = {:.0} phonons",
        base_t * 1e6,
        model::phonon_occupation(base_t, sys.trap.omega)
    );

    println!("\n{:>8} {:>14} {:>14} {:>12}", "dB", "radius scale", "pressure [Pa]", "phonons");
    for (db, scale, p) in [
        (0.0, 1.0, reference::PRESSURE),
        (10.0, 1.0, reference::PRESSURE),
        (30.0, 1.0, reference::PRESSURE),
        (30.0, 0.4, 1e-6),
    ] {
        let proj = presets::project(db, scale, p)?;
        println!("{db:>8} {scale:>14} {p:>14.1e} {:>12.3}", proj.phonons);
    }

    let ground = presets::project(30.0, 0.4, 1e-6)?;
    println!("\n{}", presets::project_report(&ground));
    Ok(())
}
