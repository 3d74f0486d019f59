//! Write a measurement record and its prediction to the binary container,
//! read them back and refuse a record filtered with the wrong parameters.

use std::env;

use qtrack::filters::{predict, ForwardFilter};
use qtrack::io::{read_record, read_trajectory, write_record, write_trajectory};
use qtrack::rng::RngKey;
use qtrack::simulate::{measure, simulate_truth};
use qtrack::{derive_rates, ModelParams};

fn main() -> qtrack::Result<()> {
    let p = ModelParams::reference();
    let r = derive_rates(&p)?;
    let key = RngKey::new(4).realization(2);
    let mut record = measure(&simulate_truth(&p, 1e-6, 1000, key)?, &p, key);
    record.params_hash = p.params_hash();

    let dir = env::temp_dir().join("qtrack-record-io");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("segment.qtrk");
    write_record(&path, &record)?;
    let back = read_record(&path)?;
    println!("{} samples, seed {}, realization {}, identical: {}", back.len(), back.seed, back.realization, back == record);

    let traj = predict(&back, &r, r.v_bath)?;
    let tpath = dir.join("prediction.qtrk");
    write_trajectory(&tpath, &traj, &back)?;
    let t = read_trajectory(&tpath)?;
    println!("trajectory {:?}, final variance {:.5}", t.kind, t.variance(t.len() - 1));

    let other = derive_rates(&p.with_gamma_meas(0.5 * p.gamma_meas))?;
    match ForwardFilter::new(&other, back.dt, back.len(), other.v_bath, None)?.run(&back) {
        Ok(_) => println!("mismatched record accepted"),
        Err(e) => println!("rejected: {e}"),
    }
    Ok(())
}
