//! σ² and the implied purity as the measurement efficiency changes, from
//! the closed forms and from a short ensemble at each point.

use qtrack::verify::{params_with_efficiency, steady_times, verify_ensemble, EnsembleConfig};
use qtrack::{derive_rates, ModelParams};

fn main() -> qtrack::Result<()> {
    let base = ModelParams::reference();
    let cfg = EnsembleConfig { segments: 300, seed: 8, ..Default::default() };
    let t0s = steady_times(cfg.segment_duration, 300e-6, 100e-6);
    println!("{:>6}  {:>8}  {:>16}  {:>7}", "η", "theory", "ensemble", "purity");
    for eta in [0.05, 0.1, 0.2, 0.4, 0.6] {
        let p = params_with_efficiency(&base, eta)?;
        let r = derive_rates(&p)?;
        let rep = verify_ensemble(&p, &cfg, &t0s)?;
        println!(
            "{eta:>6.2}  {:>8.4}  {:>8.4} ± {:.4}  {:>7.3}",
            r.relative_variance(),
            rep.sigma2,
            rep.stderr,
            r.purity()
        );
    }
    Ok(())
}
