//! Ensemble σ²(t0) while the prediction collapses from the thermal state,
//! and after conditioning stops at t* so the prediction drifts back toward
//! it.
//!
//! ```bash
//! cargo run --release -p qtrack --example collapse_decoherence -- [segments]
//! ```

use std::env;

use qtrack::verify::{collapse_curve, decoherence_curve, linear_grid, EnsembleConfig};
use qtrack::ModelParams;

fn main() -> qtrack::Result<()> {
    let segments = env::args().nth(1).map_or(400, |s| s.parse().expect("segments must be an integer"));
    let p = ModelParams::reference();
    let cfg = EnsembleConfig { segments, seed: 5, ..Default::default() };

    let collapse = collapse_curve(&p, &cfg, &linear_grid(0.0, 150e-6, 16))?;
    println!("collapse, {} realizations", collapse.n_realizations);
    for k in 0..collapse.t0.len() {
        println!(
            "  t0 = {:>5.0} µs  σ² = {:>7.3} ± {:.3}  theory {:>7.3}",
            collapse.t0[k] * 1e6,
            collapse.sigma2[k],
            collapse.stderr[k],
            collapse.theory[k]
        );
    }
    println!("  max |z| = {:.2}", collapse.max_z());

    let t_star = 0.7e-3;
    let decay = decoherence_curve(&p, &cfg, t_star, &linear_grid(0.6e-3, 2.6e-3, 11))?;
    println!("decoherence after t* = {:.1} ms", t_star * 1e3);
    for k in 0..decay.t0.len() {
        println!(
            "  t0 = {:>4.2} ms  σ² = {:>7.3} ± {:.3}  theory {:>7.3}",
            decay.t0[k] * 1e3,
            decay.sigma2[k],
            decay.stderr[k],
            decay.theory[k]
        );
    }
    println!("  max |z| = {:.2}", decay.max_z());
    Ok(())
}
