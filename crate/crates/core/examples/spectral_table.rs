//! Steady-state moments of the estimates from frequency-domain integrals,
//! with and without the lock-in filter in the measurement chain.

use qtrack::demod::DemodFilterSpec;
use qtrack::spectral::{filter_correction, table_s1, SpectralModel};
use qtrack::{derive_rates, ModelParams};

fn main() -> qtrack::Result<()> {
    let r = derive_rates(&ModelParams::reference())?;
    let bare = SpectralModel::new(&r, None)?;
    let filtered = SpectralModel::new(&r, Some(DemodFilterSpec::default()))?;
    let a = table_s1(&bare)?;
    let b = table_s1(&filtered)?;

    println!("{:<22} {:>10} {:>10} {:>10}", "", "no filter", "filter", "closed");
    let rows = [
        ("<r_pred²>", a.pred_var, b.pred_var, r.predicted_mean_variance()),
        ("<r_retro²>", a.retro_var, b.retro_var, r.retrodicted_mean_variance()),
        ("<r_pred r_retro>", a.cross, b.cross, r.predicted_mean_variance()),
        ("σ²", a.sigma2, b.sigma2, r.relative_variance()),
    ];
    for (name, x, y, z) in rows {
        println!("{name:<22} {x:>10.4} {y:>10.4} {z:>10.4}");
    }
    println!("filter correction factor {:.4}", filter_correction(&filtered)?);
    Ok(())
}
