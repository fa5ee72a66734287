//! Command line front end: `predict`, `simulate`, `analyze`, `sweep`,
//! `invert-nmin` and `gen-crystal`.
//!
//! Exit codes: 0 on success, 1 for usage or configuration errors, 2 for
//! runtime and estimation errors.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use photonstat::analytic::{
    compute_c, effective_n, invert_nmin, model_alpha_windowed, predict_g2_effective, G2Prediction,
};
use photonstat::config::RunConfig;
use photonstat::estimators::analyze;
use photonstat::geometry::{detection_weights, format_positions};
use photonstat::montecarlo::simulate_realizations;
use photonstat::sweep::{run_sweep, sweep_csv};
use photonstat::timetags::{read_any, write_any, write_atomic, TimeTagStream};
use photonstat::Error;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const THREADS_ENV: &str = "PHOTONSTAT_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "photonstat",
    version,
    about = "Photon statistics of emitter ensembles"
)]
struct Cli {
    /// Run configuration file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Analytic g2(τ), windowed alpha and C.
    Predict(PredictArgs),
    /// Monte Carlo time tags.
    Simulate(SimulateArgs),
    /// Alpha, beta and the g2 histogram of recorded time tags.
    Analyze(AnalyzeArgs),
    /// Alpha and beta against crystal size.
    Sweep(SweepArgs),
    /// Smallest number of single-photon emitters consistent with alpha.
    InvertNmin(InvertArgs),
    /// Write ion positions of the configured crystal.
    GenCrystal(GenCrystalArgs),
}

#[derive(Debug, Args)]
struct PredictArgs {
    /// Effective emitter number; defaults to that of the configured crystal.
    #[arg(long)]
    n: Option<f64>,
    /// Indistinguishability factor; defaults to that of the configured modes.
    #[arg(long)]
    c: Option<f64>,
    /// Print g2 at this delay (seconds) instead of writing a curve.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    realizations: Option<usize>,
    /// Time-tag file; `.csv` selects the text format.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// One file holding both channels, or one file per channel.
    #[arg(required = true, num_args = 1..=2)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    window_ps: Option<f64>,
    #[arg(long)]
    lag_ps: Option<f64>,
    #[arg(long)]
    segments: Option<usize>,
    /// 0 disables the histogram.
    #[arg(long)]
    max_lag_ps: Option<f64>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    histogram: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Comma separated emitter numbers.
    #[arg(long)]
    n_list: Option<String>,
    #[arg(long)]
    realizations: Option<usize>,
    /// Simulated time per realization (seconds).
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write a gnuplot script plotting the table.
    #[arg(long)]
    gnuplot: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InvertArgs {
    #[arg(long, allow_negative_numbers = true)]
    alpha: f64,
    #[arg(long)]
    ntot: u64,
}

#[derive(Debug, Args)]
struct GenCrystalArgs {
    /// chain, transverse_chain, oblate, ellipsoid or file.
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    spacing: Option<f64>,
    #[arg(long)]
    aspect: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Defaults to standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Config(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Parse { .. } => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

type Outcome = std::result::Result<(), Failure>;

pub fn run(argv: Vec<String>) -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match with_thread_limit(|| dispatch(cli)) {
        Ok(()) => 0,
        Err(f) => {
            let msg = match &f {
                Failure::Config(m) | Failure::Runtime(m) => m,
            };
            eprintln!("photonstat: {msg}");
            f.code()
        }
    }
}

fn with_thread_limit(f: impl FnOnce() -> Outcome + Send) -> Outcome {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return f();
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Failure::Config(format!("{THREADS_ENV} must be a positive integer")))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    pool.install(f)
}

fn load_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)
            .map_err(|e| Failure::Config(format!("cannot load {}: {e}", p.display())))?,
        None => RunConfig::default(),
    };
    for o in &cli.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Failure::Config(format!("--set expects KEY=VALUE, got {o:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    Ok(cfg)
}

fn set_opt<T: ToString>(cfg: &mut RunConfig, key: &str, v: &Option<T>) -> Result<(), Failure> {
    if let Some(v) = v {
        cfg.set(key, v.to_string())?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Outcome {
    let mut cfg = load_config(&cli)?;
    match &cli.command {
        Command::Predict(a) => predict(&cfg, a),
        Command::Simulate(a) => {
            set_opt(&mut cfg, "crystal.n", &a.n)?;
            set_opt(&mut cfg, "sim.duration_s", &a.duration)?;
            set_opt(&mut cfg, "sim.seed", &a.seed)?;
            set_opt(&mut cfg, "sim.realizations", &a.realizations)?;
            simulate(&cfg, a)
        }
        Command::Analyze(a) => {
            set_opt(&mut cfg, "analysis.window_ps", &a.window_ps)?;
            set_opt(&mut cfg, "analysis.lag_ps", &a.lag_ps)?;
            set_opt(&mut cfg, "analysis.segments", &a.segments)?;
            set_opt(&mut cfg, "analysis.max_lag_ps", &a.max_lag_ps)?;
            analyze_files(&cfg, a)
        }
        Command::Sweep(a) => {
            set_opt(&mut cfg, "sweep.n_list", &a.n_list)?;
            set_opt(&mut cfg, "sweep.realizations", &a.realizations)?;
            set_opt(&mut cfg, "sweep.duration_s", &a.duration)?;
            set_opt(&mut cfg, "sim.seed", &a.seed)?;
            sweep(&cfg, a)
        }
        Command::InvertNmin(a) => {
            println!("{}", invert_nmin(a.alpha, a.ntot)?);
            Ok(())
        }
        Command::GenCrystal(a) => {
            set_opt(&mut cfg, "crystal.kind", &a.kind)?;
            set_opt(&mut cfg, "crystal.n", &a.n)?;
            set_opt(&mut cfg, "crystal.spacing_m", &a.spacing)?;
            set_opt(&mut cfg, "crystal.aspect", &a.aspect)?;
            set_opt(&mut cfg, "crystal.seed", &a.seed)?;
            gen_crystal(&cfg, a)
        }
    }
}

/// `# key = value` lines identifying the tool and configuration.
fn provenance(cfg: &RunConfig, extra: &[(&str, String)]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# tool = photonstat {VERSION}");
    let _ = writeln!(s, "# config_digest = {}", cfg.digest());
    for (k, v) in extra {
        let _ = writeln!(s, "# {k} = {v}");
    }
    s
}

fn stamp(stream: &mut TimeTagStream, cfg: &RunConfig) {
    stream
        .metadata
        .insert("tool".into(), format!("photonstat {VERSION}"));
    stream.metadata.insert("config_digest".into(), cfg.digest());
}

/// Creates the parent directory so an unwritable path fails before the run.
fn prepare(path: &Path) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .map_err(|e| Failure::Config(format!("cannot create {}: {e}", dir.display())))?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Outcome {
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn predict(cfg: &RunConfig, a: &PredictArgs) -> Outcome {
    let em = cfg.emitter()?;
    let mm = cfg.motion()?;
    let n_eff = match a.n {
        Some(n) => n,
        None => effective_n(cfg.modes()?.weights())?,
    };
    let c = match a.c {
        Some(c) => c,
        None => {
            let modes = cfg.modes()?;
            if modes.n_emitters() > 1 {
                compute_c(&modes)?
            } else {
                1.0
            }
        }
    };
    if let Some(tau) = a.tau {
        println!("{}", predict_g2_effective(tau, n_eff, &em, &mm, c)?);
        return Ok(());
    }
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| cfg.output_path("prediction", "prediction.csv"));
    prepare(&out)?;
    let analysis = cfg.analysis()?;
    let det = cfg.detector()?;
    let rate = cfg.sim_config()?.mean_detection_rate() / 2.0;
    let alpha = model_alpha_windowed(
        n_eff,
        &em,
        &mm,
        c,
        analysis.binning.window,
        det.jitter_sigma,
        rate,
    )?;
    let tau_max = cfg_f64(cfg, "predict.tau_max_s", 50e-9)?;
    let points = cfg_f64(cfg, "predict.points", 201.0)? as usize;
    let grid = G2Prediction::symmetric_grid(tau_max, points.saturating_sub(1) / 2);
    let pred = G2Prediction::from_model(grid, n_eff, &em, &mm, c)?;

    let mut text = provenance(
        cfg,
        &[
            ("n_eff", n_eff.to_string()),
            ("c_factor", c.to_string()),
            ("alpha_windowed", alpha.to_string()),
            ("window_s", analysis.binning.window.to_string()),
            ("jitter_s", det.jitter_sigma.to_string()),
        ],
    );
    text.push_str("tau_s,g2\n");
    for (t, g) in pred.tau_grid.iter().zip(&pred.g2_values) {
        let _ = writeln!(text, "{t:e},{g}");
    }
    write_text(&out, &text)?;
    println!("n_eff = {n_eff}");
    println!("c_factor = {c}");
    println!("g2_zero = {}", pred.g2_zero);
    println!("alpha_windowed = {alpha}");
    println!("wrote {}", out.display());
    Ok(())
}

fn cfg_f64(cfg: &RunConfig, key: &str, default: f64) -> Result<f64, Failure> {
    match cfg.get_str(key) {
        None => Ok(default),
        Some(v) => v
            .parse()
            .map_err(|_| Failure::Config(format!("invalid value {v:?} for {key}"))),
    }
}

fn simulate(cfg: &RunConfig, a: &SimulateArgs) -> Outcome {
    let sim = cfg.sim_config()?;
    let realizations = cfg.realizations()?;
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| cfg.output_path("tags", "tags.pttg"));
    prepare(&out)?;
    let res = simulate_realizations(&sim, realizations)?;
    let mut stream = res.combined();
    stamp(&mut stream, cfg);
    write_any(&stream, &out)?;
    let d = stream.duration_s();
    println!("detections = {}", res.stats.detections);
    println!("clicks_a = {}", res.a.len());
    println!("clicks_b = {}", res.b.len());
    println!("rate_per_s = {}", stream.len() as f64 / d);
    println!("unobserved_jumps = {}", res.stats.unobserved_jumps);
    println!(
        "max_identity_residual = {:e}",
        res.stats.max_identity_residual
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn analyze_files(cfg: &RunConfig, a: &AnalyzeArgs) -> Outcome {
    let opts = cfg.analysis()?;
    let report_path = a
        .report
        .clone()
        .unwrap_or_else(|| cfg.output_path("report", "report.txt"));
    let hist_path = a
        .histogram
        .clone()
        .unwrap_or_else(|| cfg.output_path("histogram", "g2_hist.csv"));
    prepare(&report_path)?;
    if opts.histogram.is_some() {
        prepare(&hist_path)?;
    }
    let first = read_any(&a.inputs[0])?;
    let (sa, sb) = match a.inputs.get(1) {
        None => first.split_channels(),
        Some(p) => (first, read_any(p)?),
    };
    let report = analyze(&sa, &sb, &opts)?;

    let mut extra: Vec<(&str, String)> = a
        .inputs
        .iter()
        .map(|p| ("input", p.display().to_string()))
        .collect();
    if let Some(seed) = sa.metadata.get("seed") {
        extra.push(("input_seed", seed.clone()));
    }
    let header = provenance(cfg, &extra);
    let body = report.to_text();
    write_text(&report_path, &format!("{header}{body}"))?;
    print!("{body}");
    println!("wrote {}", report_path.display());
    if let Some(h) = &report.g2_hist {
        write_text(&hist_path, &format!("{header}{}", h.to_csv()))?;
        println!("wrote {}", hist_path.display());
    }
    Ok(())
}

fn sweep(cfg: &RunConfig, a: &SweepArgs) -> Outcome {
    let spec = cfg.sweep()?;
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| cfg.output_path("table", "sweep.csv"));
    prepare(&out)?;
    if let Some(g) = &a.gnuplot {
        prepare(g)?;
    }
    let points = run_sweep(&spec)?;
    let table = sweep_csv(&points);
    let header = provenance(
        cfg,
        &[
            ("seed", spec.seed.to_string()),
            ("realizations", spec.realizations.to_string()),
            ("duration_s", spec.duration.to_string()),
        ],
    );
    write_text(&out, &format!("{header}{table}"))?;
    print!("{table}");
    println!("wrote {}", out.display());
    if let Some(g) = &a.gnuplot {
        write_text(g, &gnuplot_script(&out))?;
        println!("wrote {}", g.display());
    }
    Ok(())
}

fn gnuplot_script(table: &Path) -> String {
    let name = table.file_name().map_or_else(
        || table.display().to_string(),
        |n| n.to_string_lossy().into_owned(),
    );
    format!(
        "set datafile separator ','\n\
         set logscale x\n\
         set xlabel 'N'\n\
         set ylabel 'alpha, beta'\n\
         set key top left\n\
         plot '{name}' using 1:2:3 skip 1 with yerrorbars title 'alpha', \\\n\
         \x20    '' using 1:4:5 skip 1 with yerrorbars title 'beta', \\\n\
         \x20    '' using 1:7 skip 1 with lines title 'alpha model', \\\n\
         \x20    1 notitle dashtype 2\n"
    )
}

fn gen_crystal(cfg: &RunConfig, a: &GenCrystalArgs) -> Outcome {
    let positions = cfg.positions()?;
    let weights = detection_weights(&positions, &cfg.volume()?);
    let n_eff = effective_n(&weights)?;
    let text = format!(
        "{}{}",
        provenance(cfg, &[("n_eff", n_eff.to_string())]),
        format_positions(&positions)
    );
    match &a.out {
        None => print!("{text}"),
        Some(p) => {
            prepare(p)?;
            write_text(p, &text)?;
            println!("n = {}", positions.len());
            println!("n_eff = {n_eff}");
            println!("wrote {}", p.display());
        }
    }
    Ok(())
}
