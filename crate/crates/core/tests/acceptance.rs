//! Acceptance suite. Each criterion prints one PASS/FAIL line; the process
//! exits non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qtrack::filters::{
    kernel_edge, normalized_innovations, predict, retrodict, steady_kernel_filter, EstimateKind,
};
use qtrack::model::hz_to_rad;
use qtrack::riccati::{v_analytic, v_ode_oracle, Direction};
use qtrack::spectral::{filter_correction, table_s1, SpectralModel};
use qtrack::verify::{
    collapse_curve, decoherence_curve, linear_grid, params_with_efficiency, pairwise_sum, run_ensemble,
    segment_tracking_error, steady_times, verify_ensemble, EnsembleConfig,
};
use qtrack::demod::DemodFilterSpec;
use qtrack::{derive_rates, DerivedRates, ModelParams, Result};

const SEED: u64 = 20_150_807;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

fn rel(a: f64, b: f64) -> f64 {
    (a / b - 1.0).abs()
}

fn reference() -> (ModelParams, DerivedRates) {
    let p = ModelParams::reference();
    let r = derive_rates(&p).expect("reference parameters are valid");
    (p, r)
}

/// Steady comparison times for 3.2 ms segments: every 100 µs, 300 µs clear
/// of both ends.
fn steady_t0s() -> Vec<f64> {
    steady_times(3.2e-3, 300e-6, 100e-6)
}

fn c1_steady_variance() -> Result<Outcome> {
    let (_, r) = reference();
    let purity = 0.5 / r.v_steady;
    let pass = (r.v_steady - 0.61).abs() <= 0.01 && (purity - 0.82).abs() <= 0.01;
    outcome(pass, format!("V = {:.5} (0.61 ± 0.01), purity = {purity:.4} (0.82 ± 0.01)", r.v_steady))
}

fn c2_verification_identity() -> Result<Outcome> {
    let (p, r) = reference();
    let cfg = EnsembleConfig { segments: 1000, seed: SEED, ..Default::default() };
    let rep = verify_ensemble(&p, &cfg, &steady_t0s())?;
    let theory = r.relative_variance();
    let mut pass = rel(rep.sigma2, theory) < 0.05;
    let mut detail = format!(
        "sigma2 = {:.4} ± {:.4} vs V + V_E = {theory:.4} ({:.2}%)",
        rep.sigma2,
        rep.stderr,
        100.0 * rel(rep.sigma2, theory)
    );
    for (j, eta) in [0.1, 0.3, 0.5, 0.7, 0.95].into_iter().enumerate() {
        let q = params_with_efficiency(&p, eta)?;
        let rq = derive_rates(&q)?;
        let cfg = EnsembleConfig { segments: 1000, seed: SEED + 1 + j as u64, ..Default::default() };
        let rep = verify_ensemble(&q, &cfg, &steady_t0s())?;
        let z = (rep.sigma2 - rq.relative_variance()) / rep.stderr;
        pass &= z.abs() <= 3.0;
        detail.push_str(&format!("; eta {eta}: z = {z:+.2}"));
    }
    outcome(pass, detail)
}

fn c3_filter_optimality() -> Result<Outcome> {
    let (p, r) = reference();
    let cfg = EnsembleConfig { segments: 1000, seed: SEED + 10, ..Default::default() };
    let window = 300..2900;
    let errs = run_ensemble(&p, &cfg, |seg| {
        let f = predict(&seg.record, &r, r.v_bath)?;
        let b = retrodict(&seg.record, &r, r.v_bath)?;
        Ok((
            segment_tracking_error(&seg.truth, &f, window.clone())?,
            segment_tracking_error(&seg.truth, &b, window.clone())?,
        ))
    })?;
    let n = errs.len() as f64;
    let fwd = pairwise_sum(&errs.iter().map(|e| e.0).collect::<Vec<_>>()) / n;
    let bwd = pairwise_sum(&errs.iter().map(|e| e.1).collect::<Vec<_>>()) / n;
    let pass = rel(fwd, r.v_steady) < 0.03 && rel(bwd, r.v_e_steady) < 0.03;
    outcome(
        pass,
        format!(
            "<(x - r_fwd)^2> = {fwd:.4} vs V = {:.4} ({:.2}%), <(x - r_bwd)^2> = {bwd:.4} vs V_E = {:.4} ({:.2}%)",
            r.v_steady,
            100.0 * rel(fwd, r.v_steady),
            r.v_e_steady,
            100.0 * rel(bwd, r.v_e_steady)
        ),
    )
}

fn c4_table_s1() -> Result<Outcome> {
    let (_, r) = reference();
    let bare = table_s1(&SpectralModel::new(&r, None)?)?;
    let model = SpectralModel::new(&r, Some(DemodFilterSpec::default()))?;
    let filtered = table_s1(&model)?;
    let correction = filter_correction(&model)?;
    let pass = rel(bare.pred_var, 21.21) < 0.02
        && rel(bare.retro_var, 22.44) < 0.02
        && rel(bare.cross, 21.21) < 0.02
        && rel(bare.sigma2, 1.24) < 0.02
        && rel(filtered.sigma2, 1.17) < 0.02
        && (100.0 * (correction - 1.0) - 5.6).abs() <= 1.0;
    outcome(
        pass,
        format!(
            "pred {:.3}, retro {:.3}, cross {:.3}, sigma2 {:.4}; filtered sigma2 {:.4}, correction {:.2}%",
            bare.pred_var,
            bare.retro_var,
            bare.cross,
            bare.sigma2,
            filtered.sigma2,
            100.0 * (correction - 1.0)
        ),
    )
}

fn c5_collapse() -> Result<Outcome> {
    let (p, r) = reference();
    let cfg = EnsembleConfig { segments: 1000, seed: SEED + 20, ..Default::default() };
    let mut grid = linear_grid(0.0, 100e-6, 21);
    grid.extend(linear_grid(200e-6, 3e-3, 15));
    let curve = collapse_curve(&p, &cfg, &grid)?;
    let start = r.v_bath + r.v_e_steady;
    let steady = r.relative_variance();
    let at_100 = curve.sigma2[20];
    let z = curve.max_z();
    let pass = rel(curve.sigma2[0], start) < 0.10 && rel(at_100, steady) < 0.10 && z <= 3.0;
    outcome(
        pass,
        format!(
            "sigma2(0) = {:.2} vs {start:.2}, sigma2(100 us) = {at_100:.4} vs {steady:.4}, max |z| = {z:.2} over {} points",
            curve.sigma2[0],
            grid.len()
        ),
    )
}

fn c6_decoherence() -> Result<Outcome> {
    let (p, r) = reference();
    let cfg = EnsembleConfig { segments: 1000, seed: SEED + 30, ..Default::default() };
    let t_star = 0.7e-3;
    let grid = linear_grid(t_star, 3e-3, 24);
    let curve = decoherence_curve(&p, &cfg, t_star, &grid)?;
    // closed form from the steady minimum
    let closed = |t: f64| {
        r.v_steady
            + r.v_e_steady
            + 4.0 * r.gamma_meas() / r.gamma_m() * r.v_steady.powi(2) * (1.0 - (-r.gamma_m() * (t - t_star)).exp())
    };
    let mut z_max: f64 = 0.0;
    for (k, t) in grid.iter().enumerate() {
        z_max = z_max.max(((curve.sigma2[k] - closed(*t)) / curve.stderr[k]).abs());
    }
    let asymptote = closed(f64::INFINITY);
    let pass = z_max <= 3.0 && rel(asymptote - r.v_e_steady, r.v_bath) < 1e-9;
    outcome(
        pass,
        format!(
            "max |z| = {z_max:.2} over {} points; asymptote {asymptote:.3} = v_bath {:.3} + V_E; sigma2(3 ms) = {:.2}",
            grid.len(),
            r.v_bath,
            curve.sigma2[grid.len() - 1]
        ),
    )
}

fn random_params(rng: &mut ChaCha8Rng) -> ModelParams {
    let gamma_qba = hz_to_rad(rng.random_range(100.0..1e4));
    ModelParams {
        omega_m: hz_to_rad(1e6),
        gamma_m: hz_to_rad(rng.random_range(10.0..1000.0)),
        n_th: rng.random_range(0.0..50.0),
        gamma_qba,
        gamma_meas: gamma_qba * rng.random_range(0.05..1.0),
        eta_det: 1.0,
        provenance: Default::default(),
    }
}

fn c7_riccati_oracle() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst: f64 = 0.0;
    let mut exact_start = true;
    for _ in 0..100 {
        let r = derive_rates(&random_params(&mut rng))?;
        let span = 50.0 / r.gamma_meas();
        let stiff = 8.0 * r.gamma_meas() * r.v_bath + r.gamma_m();
        let points = (span * stiff / 0.05).ceil() as usize + 1;
        let grid = linear_grid(0.0, span, points);
        let ode = v_ode_oracle(&r, r.v_bath, &grid, Direction::Forward)?;
        exact_start &= v_analytic(&r, r.v_bath, 0.0)? == r.v_bath;
        for (t, v) in grid.iter().zip(&ode.v) {
            worst = worst.max(rel(v_analytic(&r, r.v_bath, *t)?, *v));
        }
    }
    outcome(
        worst < 1e-6 && exact_start,
        format!("max relative error {worst:.2e} over 100 parameter sets; V(0) = v_bath exactly: {exact_start}"),
    )
}

fn c8_kernel_equivalence() -> Result<Outcome> {
    let (p, r) = reference();
    let cfg = EnsembleConfig { segments: 8, seed: SEED + 40, ..Default::default() };
    let tol = 1e-3 * r.v_bath.sqrt();
    let worst = run_ensemble(&p, &cfg, |seg| {
        let rec = &seg.record;
        let edge = 2 * kernel_edge(&r, rec.dt);
        let f = predict(rec, &r, r.v_bath)?;
        let kf = steady_kernel_filter(rec, &r, EstimateKind::Predicted)?;
        let b = retrodict(rec, &r, r.v_bath)?;
        let kb = steady_kernel_filter(rec, &r, EstimateKind::Retrodicted)?;
        let mut worst: f64 = 0.0;
        for k in edge..rec.len() - edge {
            for d in 0..2 {
                worst = worst.max((f.mean[k][d] - kf.mean[k][d]).abs());
                worst = worst.max((b.mean[k][d] - kb.mean[k][d]).abs());
            }
        }
        Ok(worst)
    })?
    .into_iter()
    .fold(0.0, f64::max);
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 41);
    let mut identity: f64 = 0.0;
    for _ in 0..1000 {
        let r = derive_rates(&random_params(&mut rng))?;
        identity = identity.max(rel(r.alpha, r.lambda));
    }
    outcome(
        worst < tol && identity < 1e-12,
        format!("max |recursive - kernel| = {worst:.2e} (limit {tol:.2e}); max |alpha/lambda - 1| = {identity:.1e}"),
    )
}

fn c9_symmetry_whiteness() -> Result<Outcome> {
    let (p, r) = reference();
    let cfg = EnsembleConfig { segments: 4000, seed: SEED + 50, ..Default::default() };
    let rep = verify_ensemble(&p, &cfg, &steady_t0s())?;
    let off = (rep.sigma2_xy / rep.sigma2_xx).abs();
    let split = (rep.sigma2_xx - rep.sigma2_yy).abs() / rep.sigma2;

    const LAGS: usize = 100;
    let cfg = EnsembleConfig { segments: 400, seed: SEED + 51, ..Default::default() };
    let sums = run_ensemble(&p, &cfg, |seg| {
        let f = predict(&seg.record, &r, r.v_bath)?;
        let z = normalized_innovations(&seg.record, &f, &r);
        let mut acc = vec![0.0; LAGS + 1];
        let mut counts = vec![0usize; LAGS + 1];
        for lag in 0..=LAGS {
            for k in 0..z.len() - lag {
                acc[lag] += z[k][0] * z[k + lag][0] + z[k][1] * z[k + lag][1];
                counts[lag] += 2;
            }
        }
        Ok((acc, counts))
    })?;
    let mut worst: f64 = 0.0;
    let mut outside = 0;
    for lag in 1..=LAGS {
        let num = pairwise_sum(&sums.iter().map(|s| s.0[lag]).collect::<Vec<_>>());
        let den = pairwise_sum(&sums.iter().map(|s| s.0[0]).collect::<Vec<_>>());
        let n: usize = sums.iter().map(|s| s.1[lag]).sum();
        let n0: usize = sums.iter().map(|s| s.1[0]).sum();
        let rho = (num / n as f64) / (den / n0 as f64);
        let z = rho * (n as f64).sqrt();
        worst = worst.max(z.abs());
        if z.abs() > 3.0 {
            outside += 1;
        }
    }
    let pass = off < 0.02 && split < 0.02 && outside == 0;
    outcome(
        pass,
        format!(
            "|sxy/sxx| = {:.2}%, |sxx - syy|/s2 = {:.2}% ({} pairs); innovations: max |rho|/sigma = {worst:.2} over lags 1..{LAGS}, {outside} outside 3 sigma",
            100.0 * off,
            100.0 * split,
            rep.n_realizations
        ),
    )
}

fn c10_determinism() -> Result<Outcome> {
    let (p, _) = reference();
    let t0s = steady_t0s();
    let report = |threads| {
        let cfg = EnsembleConfig { segments: 300, seed: SEED + 60, threads: Some(threads), ..Default::default() };
        verify_ensemble(&p, &cfg, &t0s)
    };
    let one = report(1)?;
    let four = report(4)?;
    let records = |threads| {
        let cfg = EnsembleConfig { segments: 50, seed: SEED + 61, threads: Some(threads), ..Default::default() };
        run_ensemble(&p, &cfg, |seg| Ok(qtrack::io::record_bytes(&seg.record)))
    };
    let same_records = records(1)? == records(3)?;
    let same_report = one == four && one.to_json() == four.to_json();
    outcome(
        same_records && same_report,
        format!("records identical across 1/3 workers: {same_records}; report identical across 1/4 workers: {same_report}"),
    )
}

type Criterion = (&'static str, fn() -> Result<Outcome>);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("steady conditional variance", c1_steady_variance),
        ("verification identity", c2_verification_identity),
        ("filter optimality", c3_filter_optimality),
        ("steady-state moment table", c4_table_s1),
        ("collapse curve", c5_collapse),
        ("decoherence curve", c6_decoherence),
        ("Riccati closed form vs ODE", c7_riccati_oracle),
        ("kernel vs recursion", c8_kernel_equivalence),
        ("symmetry and whiteness", c9_symmetry_whiteness),
        ("determinism", c10_determinism),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (pass, detail) = match run() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "[{}] criterion {:>2} {name}: {detail} [{:.1?}]",
            if pass { "PASS" } else { "FAIL" },
            k + 1,
            start.elapsed()
        );
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
