//! The steady-state filters written as convolutions of the record with
//! exponential kernels, against the recursive Kalman estimates.

use qtrack::filters::{kernel_edge, predict, retrodict, steady_kernel_filter, EstimateKind};
use qtrack::rng::RngKey;
use qtrack::simulate::{measure, simulate_truth};
use qtrack::{derive_rates, ModelParams};

fn main() -> qtrack::Result<()> {
    let p = ModelParams::reference();
    let r = derive_rates(&p)?;
    let key = RngKey::new(21);
    let record = measure(&simulate_truth(&p, 1e-6, 3200, key)?, &p, key);

    // start the recursions already settled so only the kernel truncation differs
    let recursive = [predict(&record, &r, r.v_steady)?, retrodict(&record, &r, r.v_e_steady)?];
    let edge = kernel_edge(&r, record.dt);
    for (rec, kind) in recursive.iter().zip([EstimateKind::Predicted, EstimateKind::Retrodicted]) {
        let kernel = steady_kernel_filter(&record, &r, kind)?;
        let worst = (edge..record.len() - edge)
            .map(|k| (0..2).map(|q| (kernel.mean[k][q] - rec.mean[k][q]).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        println!("{kind:?}: kernel variance {:.5}, max |Δr| = {worst:.2e} away from the edges", kernel.variance(edge));
    }
    println!("kernel decay rate α = {:.4e} s⁻¹, {edge} edge samples", r.alpha);
    Ok(())
}
