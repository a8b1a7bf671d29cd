use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use freqmix_cli::scenario::Input;
use freqmix_cli::{emit_plot_data, run, CliError, RunOptions, Scenario};

#[derive(Debug, Parser)]
#[command(name = "freqmix", version, about = "Frequency-deviation distributions under stochastic wind")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario and write its artifacts.
    Run {
        scenario: PathBuf,
        /// Run directory (default: output.dir, else $FREQMIX_OUT/<name>, else runs/<name>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Root for default run directories.
        #[arg(long, env = "FREQMIX_OUT", hide_env_values = true)]
        out_root: Option<PathBuf>,
        /// Skip the Monte Carlo reference and the comparisons that need it.
        #[arg(long)]
        no_mcs: bool,
        /// Seed for both the mixture fit and the Monte Carlo paths.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Write gnuplot-style data files for a completed run.
    PlotData { run_dir: PathBuf },
    /// Parse and check a scenario without running it.
    Validate { scenario: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("freqmix: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Run {
            scenario,
            out,
            out_root,
            no_mcs,
            seed,
            threads,
        } => {
            if let Some(n) = threads {
                if n == 0 {
                    return Err(CliError::Config("--threads must be at least 1".into()));
                }
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                    .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
            }
            let opts = RunOptions {
                out,
                out_root,
                no_mcs,
                seed,
            };
            let summary = run(&scenario, &opts)?;
            println!("run complete: {}", summary.dir.display());
            for (stage, secs) in &summary.manifest.timings {
                println!("  {stage:<10} {secs:>9.3} s");
            }
            for w in &summary.manifest.warnings {
                println!("warning: {w}");
            }
        }
        Command::PlotData { run_dir } => {
            let s = emit_plot_data(&run_dir)?;
            println!("wrote {} files to {}", s.written.len(), s.dir.display());
            for note in &s.skipped {
                println!("skipped: {note}");
            }
        }
        Command::Validate { scenario } => {
            let s = Scenario::load(&scenario)?;
            let input = match &s.input {
                Input::Quantiles(p) => {
                    check_readable(p)?;
                    format!("quantile series {}", p.display())
                }
                Input::GmmFile(p) => {
                    check_readable(p)?;
                    format!("mixture record {}", p.display())
                }
                Input::Inline(g) => format!("inline mixture, {} components", g.len()),
            };
            println!("{}: ok", scenario.display());
            println!("  input   {input}");
            println!("  grid    {} .. {} step {}", s.solver.t_start, s.solver.t_end, s.solver.dt);
            if s.mcs.enabled {
                println!("  mcs     {} paths, dt {}, seed {}", s.mcs.n_paths, s.mcs.dt, s.mcs.seed);
            } else {
                println!("  mcs     off");
            }
        }
    }
    Ok(())
}

fn check_readable(p: &std::path::Path) -> Result<(), CliError> {
    std::fs::metadata(p).map(|_| ()).map_err(|e| CliError::io(p, e))
}
