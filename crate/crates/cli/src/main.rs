use std::path::{Path, PathBuf};
use std::process::ExitCode;

use afc_core::config::parse_list;
use afc_core::pipeline::{self, PipelineConfig, SweepRow};
use afc_core::synth::{self, SynthSpec};
use afc_core::{evaluate::fmt_metric, Error, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "afc", version, about = "Alarm forecasting and classification for wind-turbine SCADA data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline configuration file (`key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for every random choice; overrides `seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores). Results do not depend on it.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic SCADA + alarm corpus with planted precursors.
    Synth {
        /// Generator spec file; planted defaults are used without one.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 5)]
        turbines: usize,
        #[arg(long, default_value_t = 5000)]
        rows: usize,
        #[arg(long, default_value_t = 8)]
        params: usize,
        #[arg(long, default_value_t = 3)]
        tags: u32,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Merge alarms, select parameters, impute and scale.
    Preprocess(Common),
    /// Train the regressor and the classifiers.
    Train {
        #[command(flatten)]
        common: Common,
        /// Comma-separated forecast offsets; defaults to `fw` from the config.
        #[arg(long)]
        fw: Option<String>,
    },
    /// Score trained models on the test turbines.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        fw: Option<String>,
    },
    /// Train and score in memory across settings.
    Sweep {
        #[command(subcommand)]
        kind: SweepKind,
    },
}

#[derive(Subcommand)]
enum SweepKind {
    /// One run per forecast offset.
    Fw {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "0,1,2,3")]
        fws: String,
    },
    /// One run per layer stack at the configured offset.
    Depth {
        #[command(flatten)]
        common: Common,
        /// Layer widths separated by `:`; repeat for several stacks.
        #[arg(long = "stack", required = true)]
        stacks: Vec<String>,
    },
}

fn init_threads(jobs: Option<usize>) -> Result<()> {
    if let Some(n) = jobs {
        if n == 0 {
            return Err(Error::Usage("--jobs must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Usage(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn load_config(c: &Common) -> Result<PipelineConfig> {
    init_threads(c.jobs)?;
    if !c.config.exists() {
        return Err(Error::Usage(format!("config file {} not found", c.config.display())));
    }
    let mut cfg = PipelineConfig::load(&c.config)?;
    if let Some(out) = &c.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = c.seed {
        cfg.set_seed(seed);
    }
    Ok(cfg)
}

fn offsets(arg: Option<&str>, cfg: &PipelineConfig) -> Result<Vec<usize>> {
    let fws = match arg {
        Some(s) => parse_list("fw", s)?,
        None => vec![cfg.fw],
    };
    if fws.is_empty() {
        return Err(Error::Usage("no forecast offsets given".into()));
    }
    if let Some(f) = fws.iter().find(|&&f| f > afc_core::windowing::MAX_FORECAST_OFFSET) {
        return Err(Error::Usage(format!("fw {f} outside the supported range 0-3")));
    }
    Ok(fws)
}

fn print_sweep(rows: &[SweepRow], out: &Path, file: &str) {
    for r in rows {
        println!(
            "{:<16} recall={} final_accuracy={}",
            r.label,
            fmt_metric(r.regression_recall),
            fmt_metric(r.final_accuracy)
        );
    }
    println!("wrote {}", out.join(file).display());
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { spec, out, seed, turbines, rows, params, tags, jobs } => {
            init_threads(jobs)?;
            let mut s = match &spec {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                    SynthSpec::from_kv(&text).map_err(|e| e.context(p.display()))?
                }
                None => SynthSpec::planted(turbines, rows, params, tags, 0),
            };
            if let Some(seed) = seed {
                s.seed = seed;
            }
            let output = synth::generate(&s)?;
            synth::write_output(&output, &out)?;
            println!(
                "wrote {} turbines x {} rows ({} planted alarms) to {}",
                s.n_turbines,
                s.rows,
                output.truth.alarms.len(),
                out.display()
            );
        }
        Command::Preprocess(c) => {
            let cfg = load_config(&c)?;
            let p = pipeline::run_preprocess(&cfg)?;
            println!(
                "reference {}: retained {} parameters, {} alarm codes, {} train / {} test turbines",
                p.mask.reference_turbine,
                p.mask.retained.len(),
                p.codebook.len(),
                p.train.len(),
                p.test.len()
            );
        }
        Command::Train { common, fw } => {
            let cfg = load_config(&common)?;
            for f in offsets(fw.as_deref(), &cfg)? {
                let s = pipeline::run_train(&cfg, f)?;
                println!(
                    "fw{f}: {} epochs, {} flagged training windows, {} classifier samples",
                    s.epochs, s.flagged_windows, s.classifier_samples
                );
            }
        }
        Command::Evaluate { common, fw } => {
            let cfg = load_config(&common)?;
            let fws = offsets(fw.as_deref(), &cfg)?;
            let summary = pipeline::run_evaluate(&cfg, &fws)?;
            print!("{}", summary.final_accuracy.to_csv());
        }
        Command::Sweep { kind } => match kind {
            SweepKind::Fw { common, fws } => {
                let cfg = load_config(&common)?;
                let fws = offsets(Some(&fws), &cfg)?;
                let rows = pipeline::run_sweep_fw(&cfg, &fws)?;
                print_sweep(&rows, &cfg.out_dir, "sweep_fw.csv");
            }
            SweepKind::Depth { common, stacks } => {
                let cfg = load_config(&common)?;
                let stacks = stacks
                    .iter()
                    .map(|s| parse_list::<usize>("stack", &s.replace(':', ",")))
                    .collect::<Result<Vec<_>>>()?;
                let rows = pipeline::run_sweep_depth(&cfg, &stacks)?;
                print_sweep(&rows, &cfg.out_dir, "sweep_depth.csv");
            }
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("afc: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
