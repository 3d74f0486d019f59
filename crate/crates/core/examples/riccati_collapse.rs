//! Conditional variance of a thermal oscillator collapsing under continuous
//! measurement: the closed-form solution next to the discrete schedule the
//! filters use (their prior, one step before the update).

use qtrack::riccati::{analytic_curve, forward_schedule, time_to_steady, Direction};
use qtrack::verify::linear_grid;
use qtrack::{derive_rates, ModelParams};

fn main() -> qtrack::Result<()> {
    let r = derive_rates(&ModelParams::reference())?;
    let dt = 1e-6;
    let grid = linear_grid(0.0, 100e-6, 11);
    let curve = analytic_curve(&r, r.v_bath, &grid, Direction::Forward)?;
    let schedule = forward_schedule(&r, dt, 101, r.v_bath, None)?;

    println!("V_bath = {:.3}, steady V = {:.5}, V_E = {:.5}", r.v_bath, r.v_steady, r.v_e_steady);
    println!("{:>8}  {:>10}  {:>10}", "t (µs)", "analytic", "prior");
    for (k, (t, v)) in curve.t.iter().zip(&curve.v).enumerate() {
        println!("{:>8.0}  {v:>10.5}  {:>10.5}", t * 1e6, schedule.variance[10 * k]);
    }
    println!("within 0.1% of steady after {:.1} µs", time_to_steady(&r, r.v_bath)? * 1e6);
    Ok(())
}
