use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sgl_core::diagnostics;
use sgl_core::experiments::{run_coupled_family, run_ensemble, run_path};
use sgl_core::io::{load_checkpoint, load_config, save_checkpoint, Checkpoint, NdjsonWriter, SimConfig};
use sgl_core::selfcheck;
use sgl_core::SglError;

#[derive(Parser)]
#[command(name = "sgl", version, about = "Stochastic Ginzburg-Landau nematic flow on the 2D torus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one path, streaming NDJSON reports.
    Run {
        config: PathBuf,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Pathwise-coupled sweep over the epsilon family.
    Converge {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo ensemble at the configured epsilon.
    Ensemble {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Operator identities and exact-substep checks.
    Check {
        #[arg(long, default_value_t = selfcheck::DEFAULT_FIELDS)]
        fields: usize,
        #[arg(long, default_value_t = selfcheck::DEFAULT_MODES)]
        modes: usize,
        #[arg(long, default_value_t = selfcheck::DEFAULT_BANDWIDTH)]
        bandwidth: i64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the configuration with every default filled in.
    DumpConfig { config: Option<PathBuf> },
}

fn exit_code(e: &SglError) -> u8 {
    if e.is_numerical() {
        2
    } else {
        1
    }
}

fn open_sink(path: Option<&Path>) -> sgl_core::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| SglError::io(p, e))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json(path: Option<&Path>, value: &impl serde::Serialize) -> sgl_core::Result<()> {
    let mut sink = open_sink(path)?;
    let text = serde_json::to_string_pretty(value).expect("report serialises");
    let err = |e| SglError::io(path.unwrap_or(Path::new("<stdout>")), e);
    writeln!(sink, "{text}").map_err(err)?;
    sink.flush().map_err(err)
}

fn run(config: &Path, resume: Option<&Path>) -> sgl_core::Result<()> {
    let cfg = load_config(config)?;
    let mut spec = cfg.run_spec()?;
    if let Some(ck_path) = resume {
        let ck = load_checkpoint(ck_path)?;
        if ck.seed != cfg.noise.seed || ck.path_id != cfg.noise.path_id || ck.epsilon != cfg.gl.epsilon {
            return Err(SglError::ConfigRange {
                key: "noise".into(),
                message: format!("{} was written with a different seed, path or epsilon", ck_path.display()),
            });
        }
        if ck.state.grid().n() != cfg.grid.n_modes {
            return Err(SglError::ConfigRange {
                key: "grid.n_modes".into(),
                message: format!("{} holds an N = {} state", ck_path.display(), ck.state.grid().n()),
            });
        }
        // keep the threshold of the uninterrupted run
        let first = diagnostics::energy_report(&spec.initial, spec.stepper.gl);
        spec.delta = Some(spec.resolve_delta(&first));
        spec.initial = ck.state;
    }
    let out = &cfg.output;
    let ndjson_path = out.ndjson_path.as_deref();
    let mut writer = NdjsonWriter::new(open_sink(ndjson_path)?);
    let sink_err = |e| SglError::io(ndjson_path.unwrap_or(Path::new("<stdout>")), e);
    let total = spec.stepper.step_count();
    let (seed, path_id, epsilon) = (cfg.noise.seed, cfg.noise.path_id, cfg.gl.epsilon);
    run_path(&spec, path_id, |state, report, stop| {
        if state.step % out.report_every == 0 || state.step == total {
            writer.write(report, stop).map_err(sink_err)?;
        }
        if let Some(path) = &out.checkpoint_path {
            let due = out.checkpoint_every > 0 && state.step % out.checkpoint_every == 0;
            if due || state.step == total {
                let ck = Checkpoint {
                    epsilon,
                    seed,
                    path_id,
                    state: state.clone(),
                };
                save_checkpoint(path, &ck)?;
            }
        }
        Ok(())
    })?;
    writer.flush().map_err(sink_err)
}

fn check(fields: usize, modes: usize, bandwidth: i64, seed: u64) -> sgl_core::Result<bool> {
    let started = std::time::Instant::now();
    let results = selfcheck::run_suite(fields, modes, bandwidth, seed)?;
    let mut ok = true;
    for r in &results {
        ok &= r.passed();
        println!(
            "{:<4} {:<32} residual {:.3e}  tolerance {:.0e}",
            if r.passed() { "PASS" } else { "FAIL" },
            r.name,
            r.residual,
            r.tolerance
        );
    }
    println!("{} checks on {fields} fields at N = {modes} in {:.2?}", results.len(), started.elapsed());
    Ok(ok)
}

fn dispatch(cli: Cli) -> sgl_core::Result<bool> {
    match cli.command {
        Command::Run { config, resume } => run(&config, resume.as_deref()).map(|_| true),
        Command::Converge { config, out } => {
            let cfg = load_config(&config)?;
            let report = run_coupled_family(&cfg.run_spec()?, &cfg.convergence())?;
            write_json(out.as_deref(), &report).map(|_| true)
        }
        Command::Ensemble { config, out } => {
            let cfg = load_config(&config)?;
            let summary = run_ensemble(&cfg.run_spec()?, cfg.gl.epsilon, cfg.experiment.n_paths)?;
            write_json(out.as_deref(), &summary).map(|_| true)
        }
        Command::Check {
            fields,
            modes,
            bandwidth,
            seed,
        } => check(fields, modes, bandwidth, seed),
        Command::DumpConfig { config } => {
            let cfg = match config {
                Some(p) => load_config(&p)?,
                None => SimConfig::default(),
            };
            print!("{}", cfg.dump());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
