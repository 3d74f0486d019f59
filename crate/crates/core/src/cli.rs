//! Command-line front end.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::demod::{demodulate, estimate_psd, remodulate, DemodFilterSpec, FilterMode};
use crate::error::{Error, Result};
use crate::filters::{predict, retrodict, ForwardFilter, StateTrajectory};
use crate::io;
use crate::model::{derive_rates, hz_to_rad, params_from_config, params_to_config, rad_to_hz, DerivedRates, ModelParams};
use crate::riccati::{analytic_curve, time_to_steady, Direction};
use crate::rng::RngKey;
use crate::simulate::{simulate_truth, synthesize_carrier, DEFAULT_CARRIER_OVERSAMPLING, DEFAULT_DT, DEFAULT_SEGMENT};
use crate::spectral::{table_s1, SpectralModel, TableS1};
use crate::verify::{
    collapse_curve, decoherence_curve, linear_grid, relative_variance_pooled, run_ensemble, steady_times,
    verify_ensemble, EnsembleConfig, Pipeline, VerificationReport,
};

#[derive(Debug, Parser)]
#[command(name = "qtrack", version, about = "Prediction and retrodiction of a continuously measured oscillator")]
pub struct Cli {
    /// Worker threads for ensemble runs.
    #[arg(long, global = true, env = "QTRACK_THREADS")]
    pub threads: Option<usize>,

    /// Parameter file (TOML). Defaults to the built-in reference operating point.
    #[arg(long, global = true)]
    pub params: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate measurement records.
    Gen(GenArgs),
    /// Demodulate a carrier-rate record to baseband.
    Demod(DemodArgs),
    /// Run the forward (predictive) filter on a record.
    Filter(FilterArgs),
    /// Run the backward (retrodictive) filter on a record.
    Retro(RetroArgs),
    /// Relative variance of predictions and retrodictions.
    Verify(VerifyArgs),
    /// σ² against comparison time from the start of conditioning.
    Collapse(CurveArgs),
    /// σ² after the prediction stops using the record.
    Decohere(DecohereArgs),
    /// Conditional variance curve.
    Riccati(RiccatiArgs),
    /// Steady-state moments from the spectral integrals.
    Spectral(SpectralArgs),
    /// Data bundles behind the figures.
    Figures(FiguresArgs),
}

#[derive(Debug, Args)]
pub struct EnsembleArgs {
    #[arg(long, default_value_t = 1000)]
    pub segments: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Segment length, seconds.
    #[arg(long, default_value_t = DEFAULT_SEGMENT)]
    pub duration: f64,
    /// Baseband step, seconds.
    #[arg(long, default_value_t = DEFAULT_DT)]
    pub dt: f64,
    /// Synthesize carrier records and demodulate them.
    #[arg(long)]
    pub carrier: bool,
}

impl EnsembleArgs {
    fn config(&self, p: &ModelParams, threads: Option<usize>) -> Result<EnsembleConfig> {
        if self.segments == 0 {
            return Err(Error::Usage("--segments must be at least 1".into()));
        }
        Ok(EnsembleConfig {
            segments: self.segments,
            segment_duration: self.duration,
            dt: self.dt,
            seed: self.seed,
            threads,
            pipeline: if self.carrier { Pipeline::default_carrier(p) } else { Pipeline::Baseband },
        })
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub ensemble: EnsembleArgs,
    /// Write carrier-rate records instead of baseband records.
    #[arg(long)]
    pub raw_carrier: bool,
    #[arg(long, default_value_t = DEFAULT_CARRIER_OVERSAMPLING)]
    pub oversampling: f64,
    /// Also write a CSV copy of every record.
    #[arg(long)]
    pub csv: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DemodArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Mechanical frequency; defaults to the value stored in the record.
    #[arg(long)]
    pub omega_m_hz: Option<f64>,
    #[arg(long, default_value_t = 60e3)]
    pub cutoff_hz: f64,
    #[arg(long, default_value_t = 7)]
    pub order: usize,
    #[arg(long, default_value_t = 2)]
    pub stages: usize,
    /// Defaults to the factor giving a step closest to 1 µs.
    #[arg(long)]
    pub decimation: Option<usize>,
    #[arg(long)]
    pub zero_phase: bool,
    /// Keep the leading filter transient.
    #[arg(long)]
    pub keep_transient: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// PSD of the demodulated record (CSV).
    #[arg(long)]
    pub psd: Option<PathBuf>,
    #[arg(long, default_value_t = 1024)]
    pub psd_segment: usize,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Initial variance; defaults to the thermal value.
    #[arg(long)]
    pub v0: Option<f64>,
    /// Stop conditioning at this time (seconds).
    #[arg(long)]
    pub stop_at: Option<f64>,
    /// Output path; `.csv` writes CSV, anything else the binary container.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RetroArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Final width; defaults to the steady retrodicted variance.
    #[arg(long)]
    pub ve_final: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub ensemble: EnsembleArgs,
    /// Analyze the baseband records in this directory instead of simulating.
    #[arg(long)]
    pub records: Option<PathBuf>,
    /// Comparison times; defaults to every 100 µs at least 300 µs from either end.
    #[arg(long, value_delimiter = ',')]
    pub t0: Vec<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CurveArgs {
    #[command(flatten)]
    pub ensemble: EnsembleArgs,
    #[arg(long, default_value_t = 61)]
    pub points: usize,
    #[arg(long, default_value_t = 3e-3)]
    pub t_end: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DecohereArgs {
    #[command(flatten)]
    pub curve: CurveArgs,
    #[arg(long, default_value_t = 0.7e-3)]
    pub t_star: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DirectionArg {
    Forward,
    Backward,
}

#[derive(Debug, Args)]
pub struct RiccatiArgs {
    /// Initial (forward) or final (backward) variance; defaults to thermal.
    #[arg(long)]
    pub v0: Option<f64>,
    #[arg(long, default_value_t = 200e-6)]
    pub t_end: f64,
    #[arg(long, default_value_t = 201)]
    pub points: usize,
    #[arg(long, value_enum, default_value_t = DirectionArg::Forward)]
    pub direction: DirectionArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FilterChoice {
    Default,
    None,
    Both,
}

#[derive(Debug, Args)]
pub struct SpectralArgs {
    #[arg(long, value_enum, default_value_t = FilterChoice::Both)]
    pub filter: FilterChoice,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Figure {
    Fig1,
    Fig3,
    Fig4,
    TableS1,
    All,
}

#[derive(Debug, Args)]
pub struct FiguresArgs {
    #[arg(long, value_enum, default_value_t = Figure::All)]
    pub which: Figure,
    #[command(flatten)]
    pub ensemble: EnsembleArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub config_path: Option<PathBuf>,
    /// SHA-256 of the parameter document in effect.
    pub config_hash: String,
    pub subcommand: String,
    pub seed: Option<u64>,
    pub outputs: Vec<PathBuf>,
    pub tool_version: &'static str,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

struct Context {
    params: ModelParams,
    config_path: Option<PathBuf>,
    config_hash: String,
    threads: Option<usize>,
}

impl Context {
    fn load(cli: &Cli) -> Result<Self> {
        let (params, text) = match &cli.params {
            Some(path) => {
                let text = fs::read_to_string(path)?;
                (params_from_config(&text)?, text)
            }
            None => {
                let p = ModelParams::reference();
                (p, params_to_config(&p))
            }
        };
        let config_hash = format!("{:x}", Sha256::digest(text.as_bytes()));
        Ok(Self { params, config_path: cli.params.clone(), config_hash, threads: cli.threads })
    }

    fn rates(&self) -> Result<DerivedRates> {
        derive_rates(&self.params)
    }

    fn manifest(&self, dir: &Path, subcommand: &str, seed: Option<u64>, outputs: Vec<PathBuf>) -> Result<()> {
        let manifest = RunManifest {
            config_path: self.config_path.clone(),
            config_hash: self.config_hash.clone(),
            subcommand: subcommand.into(),
            seed,
            outputs,
            tool_version: env!("CARGO_PKG_VERSION"),
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        };
        fs::create_dir_all(dir)?;
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }
}

/// Directory holding a single output file.
fn parent(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
    fs::create_dir_all(parent(path))?;
    fs::write(path, contents)?;
    info!("wrote {}", path.display());
    Ok(path.to_path_buf())
}

/// Runs the parsed command. `Ok(false)` means outputs were written but a
/// self-check failed.
pub fn run(cli: Cli) -> Result<bool> {
    let ctx = Context::load(&cli)?;
    match &cli.command {
        Command::Gen(a) => cmd_gen(&ctx, a),
        Command::Demod(a) => cmd_demod(&ctx, a),
        Command::Filter(a) => cmd_filter(&ctx, a),
        Command::Retro(a) => cmd_retro(&ctx, a),
        Command::Verify(a) => cmd_verify(&ctx, a),
        Command::Collapse(a) => cmd_collapse(&ctx, a),
        Command::Decohere(a) => cmd_decohere(&ctx, a),
        Command::Riccati(a) => cmd_riccati(&ctx, a),
        Command::Spectral(a) => cmd_spectral(&ctx, a),
        Command::Figures(a) => cmd_figures(&ctx, a),
    }
}

/// Entry point for the binary; returns the process exit code.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => 0,
        Ok(false) => {
            eprintln!("qtrack: outputs written but a self-check failed");
            3
        }
        Err(e) => {
            eprintln!("qtrack: {e}");
            match e {
                Error::Usage(_) => 2,
                _ => 1,
            }
        }
    }
}

fn cmd_gen(ctx: &Context, a: &GenArgs) -> Result<bool> {
    let p = ctx.params;
    let cfg = a.ensemble.config(&p, ctx.threads)?;
    fs::create_dir_all(&a.out)?;
    let outputs = run_ensemble(&p, &cfg, |seg| {
        let stem = a.out.join(format!("segment_{:05}", seg.index));
        let mut files = Vec::new();
        if a.raw_carrier {
            let key = RngKey::new(cfg.seed).realization(seg.index as u64);
            let fs_hz = a.oversampling * rad_to_hz(p.omega_m);
            let truth = simulate_truth(&p, (fs_hz * cfg.dt).round() / fs_hz, seg.truth.len(), key)?;
            let carrier = synthesize_carrier(&truth, &p, fs_hz, key)?;
            let path = stem.with_extension("qtrk");
            io::write_carrier(&path, &carrier)?;
            files.push(path);
        } else {
            let path = stem.with_extension("qtrk");
            io::write_record(&path, &seg.record)?;
            files.push(path);
            if a.csv {
                files.push(write(&stem.with_extension("csv"), seg.record.to_csv())?);
            }
        }
        Ok(files)
    })?;
    let outputs: Vec<PathBuf> = outputs.into_iter().flatten().collect();
    ctx.manifest(&a.out, "gen", Some(a.ensemble.seed), outputs)?;
    Ok(true)
}

fn cmd_demod(ctx: &Context, a: &DemodArgs) -> Result<bool> {
    let carrier = io::read_carrier(&a.input)?;
    let omega_m = a.omega_m_hz.map_or(carrier.omega_m, hz_to_rad);
    let spec = DemodFilterSpec {
        order: a.order,
        stages: a.stages,
        cutoff_hz: a.cutoff_hz,
        mode: if a.zero_phase { FilterMode::ZeroPhase } else { FilterMode::Causal },
        decimation: Some(a.decimation.unwrap_or(((carrier.fs * DEFAULT_DT).round() as usize).max(1))),
    };
    let out = demodulate(&carrier, omega_m, &spec)?;
    let record = if a.keep_transient { out.record.clone() } else { out.valid() };
    fs::create_dir_all(parent(&a.out))?;
    io::write_record(&a.out, &record)?;
    let mut outputs = vec![a.out.clone()];
    if let Some(path) = &a.psd {
        let x = estimate_psd(&record.channel(0), record.dt, a.psd_segment, 0.5)?;
        outputs.push(write(path, x.to_csv())?);
    }
    ctx.manifest(&parent(&a.out), "demod", Some(carrier.seed), outputs)?;
    Ok(true)
}

fn write_trajectory(path: &Path, traj: &StateTrajectory, source: &crate::simulate::MeasurementRecord) -> Result<()> {
    if path.extension().is_some_and(|e| e == "csv") {
        write(path, traj.to_csv())?;
    } else {
        fs::create_dir_all(parent(path))?;
        io::write_trajectory(path, traj, source)?;
    }
    Ok(())
}

fn cmd_filter(ctx: &Context, a: &FilterArgs) -> Result<bool> {
    let rates = ctx.rates()?;
    let record = io::read_record(&a.input)?;
    let stop = a.stop_at.map(|t| (t / record.dt).round() as usize);
    let filter = ForwardFilter::new(&rates, record.dt, record.len(), a.v0.unwrap_or(rates.v_bath), stop)?;
    let traj = filter.run(&record)?;
    write_trajectory(&a.out, &traj, &record)?;
    ctx.manifest(&parent(&a.out), "filter", Some(record.seed), vec![a.out.clone()])?;
    Ok(true)
}

fn cmd_retro(ctx: &Context, a: &RetroArgs) -> Result<bool> {
    let rates = ctx.rates()?;
    let record = io::read_record(&a.input)?;
    let traj = retrodict(&record, &rates, a.ve_final.unwrap_or(rates.v_e_steady))?;
    write_trajectory(&a.out, &traj, &record)?;
    ctx.manifest(&parent(&a.out), "retro", Some(record.seed), vec![a.out.clone()])?;
    Ok(true)
}

fn report_from_files(ctx: &Context, dir: &Path, t0: &[f64]) -> Result<VerificationReport> {
    let rates = ctx.rates()?;
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "qtrk"))
        .collect();
    paths.sort();
    let mut pred = Vec::with_capacity(paths.len());
    let mut retro = Vec::with_capacity(paths.len());
    for path in &paths {
        let record = io::read_record(path)?;
        pred.push(predict(&record, &rates, rates.v_bath)?);
        retro.push(retrodict(&record, &rates, rates.v_bath)?);
    }
    let t0 = if t0.is_empty() {
        let end = pred.first().map_or(0.0, |t| t.duration());
        steady_times(end, 300e-6, 100e-6)
    } else {
        t0.to_vec()
    };
    relative_variance_pooled(&pred, &retro, &t0, &rates)
}

fn cmd_verify(ctx: &Context, a: &VerifyArgs) -> Result<bool> {
    let report = match &a.records {
        Some(dir) => report_from_files(ctx, dir, &a.t0)?,
        None => {
            let cfg = a.ensemble.config(&ctx.params, ctx.threads)?;
            let t0 = if a.t0.is_empty() { steady_times(cfg.segment_duration, 300e-6, 100e-6) } else { a.t0.clone() };
            verify_ensemble(&ctx.params, &cfg, &t0)?
        }
    };
    let path = write(&a.out.join("report.json"), report.to_json())?;
    ctx.manifest(&a.out, "verify", Some(a.ensemble.seed), vec![path])?;
    println!(
        "sigma2 = {:.4} ± {:.4}  purity = {:.3} ± {:.3}  n_cond = {:.3}",
        report.sigma2, report.stderr, report.purity, report.purity_stderr, report.n_cond
    );
    Ok(report.steady)
}

fn cmd_collapse(ctx: &Context, a: &CurveArgs) -> Result<bool> {
    let cfg = a.ensemble.config(&ctx.params, ctx.threads)?;
    let grid = linear_grid(0.0, a.t_end, a.points);
    let curve = collapse_curve(&ctx.params, &cfg, &grid)?;
    let path = write(&a.out.join("collapse.csv"), curve.to_csv())?;
    ctx.manifest(&a.out, "collapse", Some(a.ensemble.seed), vec![path])?;
    Ok(true)
}

fn cmd_decohere(ctx: &Context, a: &DecohereArgs) -> Result<bool> {
    let c = &a.curve;
    let cfg = c.ensemble.config(&ctx.params, ctx.threads)?;
    let grid = linear_grid(0.0, c.t_end, c.points);
    let curve = decoherence_curve(&ctx.params, &cfg, a.t_star, &grid)?;
    let path = write(&c.out.join("decoherence.csv"), curve.to_csv())?;
    ctx.manifest(&c.out, "decohere", Some(c.ensemble.seed), vec![path])?;
    Ok(true)
}

fn cmd_riccati(ctx: &Context, a: &RiccatiArgs) -> Result<bool> {
    let rates = ctx.rates()?;
    let v0 = a.v0.unwrap_or(rates.v_bath);
    let direction = match a.direction {
        DirectionArg::Forward => Direction::Forward,
        DirectionArg::Backward => Direction::Backward,
    };
    let grid = linear_grid(0.0, a.t_end, a.points);
    let curve = analytic_curve(&rates, v0, &grid, direction)?;
    let path = write(&a.out, curve.to_csv())?;
    ctx.manifest(&parent(&a.out), "riccati", None, vec![path])?;
    if direction == Direction::Forward {
        let settle = time_to_steady(&rates, v0)?;
        if settle > a.t_end {
            warn!("curve ends at {:e} s, before the variance settles ({settle:e} s)", a.t_end);
        }
    }
    Ok(true)
}

fn table_csv(bare: &TableS1, filtered: Option<&TableS1>) -> String {
    let rows = [
        ("pred_var", bare.pred_var, filtered.map(|f| f.pred_var)),
        ("retro_var", bare.retro_var, filtered.map(|f| f.retro_var)),
        ("cross", bare.cross, filtered.map(|f| f.cross)),
        ("sigma2", bare.sigma2, filtered.map(|f| f.sigma2)),
    ];
    let mut out = String::from("statistic,without_filter,with_filter,difference_percent\n");
    for (name, a, b) in rows {
        match b {
            Some(b) => out.push_str(&format!("{name},{a:.6},{b:.6},{:.3}\n", 100.0 * (a - b) / b)),
            None => out.push_str(&format!("{name},{a:.6},,\n")),
        }
    }
    out
}

fn spectral_table(rates: &DerivedRates, choice: FilterChoice) -> Result<String> {
    let bare = table_s1(&SpectralModel::new(rates, None)?)?;
    let filtered = table_s1(&SpectralModel::new(rates, Some(DemodFilterSpec::default()))?)?;
    Ok(match choice {
        FilterChoice::None => table_csv(&bare, None),
        FilterChoice::Default => table_csv(&filtered, None),
        FilterChoice::Both => table_csv(&bare, Some(&filtered)),
    })
}

fn cmd_spectral(ctx: &Context, a: &SpectralArgs) -> Result<bool> {
    let path = write(&a.out, spectral_table(&ctx.rates()?, a.filter)?)?;
    ctx.manifest(&parent(&a.out), "spectral", None, vec![path])?;
    Ok(true)
}

fn cmd_figures(ctx: &Context, a: &FiguresArgs) -> Result<bool> {
    let p = ctx.params;
    let rates = ctx.rates()?;
    let cfg = a.ensemble.config(&p, ctx.threads)?;
    let want = |f: Figure| a.which == f || a.which == Figure::All;
    let mut outputs = Vec::new();
    let mut ok = true;

    if want(Figure::Fig1) {
        outputs.extend(figure1(&p, &rates, &cfg, &a.out)?);
    }
    if want(Figure::Fig3) {
        let (files, steady) = figure3(&p, &rates, &cfg, &a.out)?;
        outputs.extend(files);
        ok &= steady;
    }
    if want(Figure::Fig4) {
        let grid = linear_grid(0.0, 3e-3, 151);
        let collapse = collapse_curve(&p, &cfg, &grid)?;
        outputs.push(write(&a.out.join("fig4_collapse.csv"), collapse.to_csv())?);
        let decohere = decoherence_curve(&p, &cfg, 0.7e-3, &grid)?;
        outputs.push(write(&a.out.join("fig4_decoherence.csv"), decohere.to_csv())?);
    }
    if want(Figure::TableS1) {
        outputs.push(write(&a.out.join("table_s1.csv"), spectral_table(&rates, FilterChoice::Both)?)?);
    }
    ctx.manifest(&a.out, "figures", Some(a.ensemble.seed), outputs)?;
    Ok(ok)
}

/// One segment with both estimates and their variance bands, plus the
/// carrier spectrum against its reconstruction from the demodulated record.
fn figure1(p: &ModelParams, rates: &DerivedRates, cfg: &EnsembleConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let seg = cfg.segment(p, 0)?;
    let f = predict(&seg.record, rates, rates.v_bath)?;
    let b = retrodict(&seg.record, rates, rates.v_bath)?;
    let mut csv = String::from("t_s,x_true,y_true,i_x,i_y,pred_x,pred_y,pred_v,retro_x,retro_y,retro_v\n");
    for k in 0..seg.record.len() {
        let (x, i, r, e) = (seg.truth.x[k], seg.record.i[k], f.mean[k], b.mean[k]);
        csv.push_str(&format!(
            "{:.9e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e}\n",
            seg.record.dt * k as f64,
            x[0],
            x[1],
            i[0],
            i[1],
            r[0],
            r[1],
            f.variance(k),
            e[0],
            e[1],
            b.variance(k)
        ));
    }
    let mut files = vec![write(&out.join("fig1_trajectory.csv"), csv)?];

    let fs_hz = DEFAULT_CARRIER_OVERSAMPLING * rad_to_hz(p.omega_m);
    let key = RngKey::new(cfg.seed);
    let truth = simulate_truth(p, (fs_hz * DEFAULT_DT).round() / fs_hz, seg.record.len(), key)?;
    let carrier = synthesize_carrier(&truth, p, fs_hz, key)?;
    let spec = DemodFilterSpec { decimation: Some(1), ..Default::default() };
    let demod = demodulate(&carrier, p.omega_m, &spec)?;
    let back = remodulate(&demod.valid(), p.omega_m);
    let raw = &carrier.samples[carrier.len() - back.len()..];
    let seg_len = 1 << 14;
    let raw_psd = estimate_psd(raw, 1.0 / fs_hz, seg_len, 0.5)?;
    let rec_psd = estimate_psd(&back, 1.0 / fs_hz, seg_len, 0.5)?;
    let mut csv = String::from("freq_hz,psd_raw,psd_reconstructed\n");
    for k in 0..raw_psd.freq.len() {
        csv.push_str(&format!("{:.6e},{:.6e},{:.6e}\n", raw_psd.freq[k], raw_psd.density[k], rec_psd.density[k]));
    }
    files.push(write(&out.join("fig1_psd.csv"), csv)?);
    Ok(files)
}

/// Prediction/retrodiction pairs at one steady comparison time.
fn figure3(p: &ModelParams, rates: &DerivedRates, cfg: &EnsembleConfig, out: &Path) -> Result<(Vec<PathBuf>, bool)> {
    let t0 = 0.5 * cfg.segment_duration;
    let pairs = run_ensemble(p, cfg, |seg| {
        let f = predict(&seg.record, rates, rates.v_bath)?;
        let b = retrodict(&seg.record, rates, rates.v_bath)?;
        let k = f.index_of(t0)?;
        Ok((f.mean[k], b.mean[k]))
    })?;
    let mut csv = String::from("pred_x,pred_y,retro_x,retro_y,rel_x,rel_y\n");
    let mut diffs = Vec::with_capacity(pairs.len());
    for (f, b) in &pairs {
        let d = [f[0] - b[0], f[1] - b[1]];
        diffs.push(d);
        csv.push_str(&format!(
            "{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e}\n",
            f[0], f[1], b[0], b[1], d[0], d[1]
        ));
    }
    let report = crate::verify::report_from_differences(&diffs, rates, vec![t0])?;
    #[derive(Serialize)]
    struct Summary<'a> {
        t0_s: f64,
        radius: f64,
        pure_state_radius: f64,
        report: &'a VerificationReport,
    }
    let summary = Summary { t0_s: t0, radius: 2.0 * report.sigma2.sqrt(), pure_state_radius: 2.0, report: &report };
    let files = vec![
        write(&out.join("fig3_pairs.csv"), csv)?,
        write(&out.join("fig3_summary.json"), serde_json::to_string_pretty(&summary)?)?,
    ];
    Ok((files, report.steady))
}
