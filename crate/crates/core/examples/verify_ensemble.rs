//! Compare predictions with retrodictions over an ensemble of simulated
//! segments and report the relative variance σ² and the implied purity.
//!
//! ```bash
//! cargo run --release -p qtrack --example verify_ensemble -- [segments] [carrier]
//! ```

use std::env;
use std::time::Instant;

use qtrack::verify::{steady_times, verify_ensemble, EnsembleConfig, Pipeline};
use qtrack::{derive_rates, ModelParams};

fn main() -> qtrack::Result<()> {
    let mut args = env::args().skip(1);
    let segments = args.next().map_or(Ok(1000), |s| s.parse()).expect("segments must be an integer");
    let carrier = args.next().as_deref() == Some("carrier");

    let p = ModelParams::reference();
    let rates = derive_rates(&p)?;
    let cfg = EnsembleConfig {
        segments,
        seed: 2024,
        pipeline: if carrier { Pipeline::default_carrier(&p) } else { Pipeline::Baseband },
        ..Default::default()
    };

    // times 100 µs apart, away from both segment ends
    let t0s = steady_times(cfg.segment_duration, 300e-6, 100e-6);
    let start = Instant::now();
    let report = verify_ensemble(&p, &cfg, &t0s)?;

    println!("{}", report.to_json());
    println!(
        "sigma2 = {:.4} ± {:.4} (raw {:.4}), theory V + V_E = {:.4}",
        report.sigma2,
        report.stderr,
        report.raw_sigma2,
        rates.relative_variance()
    );
    println!("purity = {:.3} ± {:.3}, n_cond = {:.3}", report.purity, report.purity_stderr, report.n_cond);
    println!("{} pairs in {:.2?}", report.n_realizations, start.elapsed());
    Ok(())
}
