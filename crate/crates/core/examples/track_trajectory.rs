//! Predict and retrodict one simulated segment and watch both estimates
//! against the hidden motion.

use qtrack::filters::{predict, retrodict};
use qtrack::rng::RngKey;
use qtrack::simulate::{measure, simulate_truth};
use qtrack::verify::segment_tracking_error;
use qtrack::{derive_rates, ModelParams};

fn main() -> qtrack::Result<()> {
    let p = ModelParams::reference();
    let r = derive_rates(&p)?;
    let key = RngKey::new(11);
    let truth = simulate_truth(&p, 1e-6, 3200, key)?;
    let record = measure(&truth, &p, key);

    let pred = predict(&record, &r, r.v_bath)?;
    let retro = retrodict(&record, &r, r.v_bath)?;

    println!("{:>7}  {:>8}  {:>8}  {:>8}  {:>6}  {:>6}", "t (µs)", "X", "X_pred", "X_retro", "V", "V_E");
    for k in (0..record.len()).step_by(200) {
        println!(
            "{:>7.0}  {:>8.3}  {:>8.3}  {:>8.3}  {:>6.3}  {:>6.3}",
            pred.time(k) * 1e6,
            truth.x[k][0],
            pred.mean[k][0],
            retro.mean[k][0],
            pred.variance(k),
            retro.variance(k)
        );
    }

    // away from both ends the squared error of each estimate hovers near its variance
    let window = 300..2900;
    println!(
        "tracking error: prediction {:.3} (V = {:.3}), retrodiction {:.3} (V_E = {:.3})",
        segment_tracking_error(&truth, &pred, window.clone())?,
        r.v_steady,
        segment_tracking_error(&truth, &retro, window)?,
        r.v_e_steady
    );
    let s = pred.state_at(1.6e-3)?;
    println!("predicted state at 1.6 ms: mean {:.3?}, purity {:.3}", s.mean, s.purity());
    Ok(())
}
