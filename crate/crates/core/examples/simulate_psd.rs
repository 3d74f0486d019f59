//! Simulate a measured thermal oscillator at baseband and compare the
//! quadrature spectrum of the photocurrent with the Lorentzian on a unit
//! shot-noise floor.

use qtrack::demod::record_psd;
use qtrack::model::rad_to_hz;
use qtrack::rng::RngKey;
use qtrack::simulate::{measure, simulate_truth};
use qtrack::spectral::SpectralModel;
use qtrack::{derive_rates, ModelParams};

fn main() -> qtrack::Result<()> {
    let p = ModelParams::reference();
    let r = derive_rates(&p)?;
    let key = RngKey::new(7);
    let truth = simulate_truth(&p, 1e-6, 2_000_000, key)?;
    let record = measure(&truth, &p, key);

    let n = truth.len() as f64;
    let var_x = truth.x.iter().map(|x| 0.5 * (x[0] * x[0] + x[1] * x[1])).sum::<f64>() / n;
    println!("<X²> = {var_x:.2} (bath {:.2})", r.v_bath);

    let psd = record_psd(&record, 32_768, 0.5)?;
    let model = SpectralModel::new(&r, None)?;
    println!("Γm/2π = {:.0} Hz", rad_to_hz(r.gamma_m()));
    println!("{:>10}  {:>10}  {:>10}", "f (Hz)", "measured", "model");
    for f in [0.0, 100.0, 300.0, 1e3, 3e3, 1e4, 1e5] {
        let k = psd.freq.iter().position(|&x| x >= f).unwrap_or(psd.freq.len() - 1);
        let omega = 2.0 * std::f64::consts::PI * psd.freq[k];
        println!("{:>10.0}  {:>10.3}  {:>10.3}", psd.freq[k], psd.density[k], model.s_ii(omega));
    }
    Ok(())
}
