use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use chirp_excitation::analysis::{predict_row, write_predictions, zero_order_correct};
use chirp_excitation::checks;
use chirp_excitation::config::{preset, Preset, RunConfig};
use chirp_excitation::propagator::sweep_profile_with_threads;
use chirp_excitation::waveform::sample;
use chirp_excitation::Error;

const EXIT_CONFIG: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;
const EXIT_IO: u8 = 3;

/// Broadband chirp excitation designer and Bloch simulator.
#[derive(Parser, Debug)]
#[command(name = "chirp-excite", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the excitation profile over the offset grid.
    Simulate(RunArgs),
    /// Tabulate analytic phase-dispersion predictions.
    Predict {
        #[command(flatten)]
        run: RunArgs,
        /// Delay Δ in seconds; repeatable. Defaults to an even grid over [0, T1).
        #[arg(long = "delta")]
        deltas: Vec<f64>,
        /// Number of grid points when no --delta is given.
        #[arg(long, default_value_t = 21)]
        points: usize,
    },
    /// Export the sampled waveform.
    Waveform(RunArgs),
    /// Run the acceptance checks.
    Selftest {
        #[arg(long)]
        threads: Option<usize>,
    },
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Published parameter set: fig4a, fig4b or fig5.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Worker threads for the offset sweep; defaults to all cores.
    #[arg(long)]
    threads: Option<usize>,
    /// Override the offset-grid step (Hz).
    #[arg(long)]
    grid_step_hz: Option<f64>,
    /// Override the edge taper fraction.
    #[arg(long)]
    taper: Option<f64>,
    /// Override the sample interval (s).
    #[arg(long)]
    dt: Option<f64>,
}

enum Failure {
    Config(String),
    Numerical(String),
    Io(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io { .. } => Failure::Io(e.to_string()),
            other => Failure::Config(other.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

impl RunArgs {
    fn config(&self) -> Result<RunConfig, Error> {
        let mut cfg = match (&self.preset, &self.config) {
            (_, Some(path)) => RunConfig::load(path)?,
            (Some(name), None) => preset(name.parse::<Preset>()?),
            (None, None) => preset(Preset::Fig4b),
        };
        if let Some(step) = self.grid_step_hz {
            cfg.grid.step_hz = step;
        }
        if let Some(f) = self.taper {
            cfg.taper_fraction = f;
        }
        if let Some(dt) = self.dt {
            cfg.sampling.dt_s = Some(dt);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn metadata(cfg: &RunConfig) -> Vec<(&'static str, String)> {
    vec![
        ("version", env!("CARGO_PKG_VERSION").to_string()),
        ("config_hash", cfg.hash()),
        ("config", cfg.to_json()),
    ]
}

fn create(dir: &Path, name: String) -> Result<(PathBuf, BufWriter<File>), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::Io(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    let file = File::create(&path).map_err(|e| Failure::Io(format!("cannot create {}: {e}", path.display())))?;
    Ok((path, BufWriter::new(file)))
}

fn write_file(
    dir: &Path,
    name: String,
    body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<PathBuf, Failure> {
    let (path, mut w) = create(dir, name)?;
    body(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Failure::Io(format!("writing {}: {e}", path.display())))?;
    Ok(path)
}

fn simulate(args: &RunArgs) -> Outcome {
    let cfg = args.config()?;
    let spec = cfg.build_sequence()?;
    let wf = sample(&spec, &cfg.sampling_policy())?;
    let grid = cfg.offset_grid()?;
    let start = Instant::now();
    let profile = sweep_profile_with_threads(&wf, &grid, args.threads)?;
    let elapsed = start.elapsed().as_secs_f64();
    let corrected = zero_order_correct(&profile)?;
    let metrics = checks::band_metrics(&profile, &cfg)?;
    let meta = metadata(&cfg);

    let raw_path = write_file(&args.out, format!("{}_profile.txt", cfg.label), |w| profile.write_to(w, &meta))?;
    let cor_path =
        write_file(&args.out, format!("{}_profile_corrected.txt", cfg.label), |w| corrected.write_to(w, &meta))?;

    println!("sequence      {} ({} segments, {:.4} ms)", spec.label, spec.segments.len(), spec.total_duration() * 1e3);
    println!("sampling      {} samples, dt = {:.4e} s", wf.len(), wf.dt);
    println!("offsets       {} over +/-{} Hz", grid.n_points, cfg.grid.half_width_hz);
    println!("zero-order    {:.4} rad{}", corrected.phase, if corrected.degenerate { " (degenerate)" } else { "" });
    println!("in-band       min Mx {:.4}, mean Mx {:.4}, max |Mz| {:.4}", metrics.min_mx, metrics.mean_mx, metrics.max_mz);
    println!("phase spread  {:.3} deg", metrics.max_abs_phase_dev_deg);
    println!("norm error    {:.3e}", profile.max_norm_error());
    println!("wall time     {elapsed:.2} s");
    println!("wrote         {}", raw_path.display());
    println!("wrote         {}", cor_path.display());

    let bad = profile.states.iter().any(|m| !(m.mx.is_finite() && m.my.is_finite() && m.mz.is_finite()));
    if bad || profile.max_norm_error() > checks::NORM_TOL {
        return Err(Failure::Numerical(format!(
            "norm conservation violated: max |norm - 1| = {:.3e}",
            profile.max_norm_error()
        )));
    }
    Ok(())
}

fn predict(args: &RunArgs, deltas: &[f64], points: usize) -> Outcome {
    let cfg = args.config()?;
    let model = cfg.dispersion_model()?;
    let deltas: Vec<f64> = if deltas.is_empty() {
        let n = points.max(1);
        (0..n).map(|k| model.t1() * k as f64 / n as f64).collect()
    } else {
        deltas.to_vec()
    };
    let rows: Vec<_> = deltas.iter().map(|&d| predict_row(d, &model)).collect();
    let path = write_file(&args.out, format!("{}_predictions.txt", cfg.label), |w| {
        write_predictions(w, &model, &rows, &metadata(&cfg))
    })?;
    let skipped = rows.iter().filter(|r| r.values.is_none()).count();
    println!("T0 = {:.6e} s, T1 = {:.6e} s", model.t0(), model.t1());
    if let Some(v) = rows.iter().find_map(|r| r.values) {
        println!("edge residual {:.4} deg", v.edge_residual.to_degrees());
    }
    println!("{} rows ({} out of range)", rows.len(), skipped);
    println!("wrote {}", path.display());
    Ok(())
}

fn waveform(args: &RunArgs) -> Outcome {
    let cfg = args.config()?;
    let spec = cfg.build_sequence()?;
    let wf = sample(&spec, &cfg.sampling_policy())?;
    let path = write_file(&args.out, format!("{}_waveform.txt", cfg.label), |w| wf.write_to(w, &metadata(&cfg)))?;
    println!("{} samples, dt = {:.4e} s, duration {:.4} ms", wf.len(), wf.dt, wf.duration() * 1e3);
    println!("wrote {}", path.display());
    Ok(())
}

fn selftest(threads: Option<usize>) -> Outcome {
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Failure::Config(format!("cannot start {n} worker threads: {e}")))?;
    }
    let outcomes = checks::run_all();
    for o in &outcomes {
        println!("{o}");
    }
    let failed: Vec<u8> = outcomes.iter().filter(|o| !o.passed).map(|o| o.id).collect();
    println!("{} of {} criteria passed", outcomes.len() - failed.len(), outcomes.len());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Numerical(format!("failed criteria: {failed:?}")))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Predict { run, deltas, points } => predict(run, deltas, *points),
        Command::Waveform(args) => waveform(args),
        Command::Selftest { threads } => selftest(*threads),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("numerical check failed: {msg}");
            ExitCode::from(EXIT_NUMERICAL)
        }
        Err(Failure::Io(msg)) => {
            eprintln!("I/O error: {msg}");
            ExitCode::from(EXIT_IO)
        }
    }
}
