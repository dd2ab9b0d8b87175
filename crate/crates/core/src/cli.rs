//! Command-line front end: argument parsing, manifest and CSV output.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path as FsPath, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{ExperimentConfig, Overrides, Profile};
use crate::experiment::{run_ddmap, run_optimize, run_rcs_sweep, run_roc};
use crate::waveform::write_frame_dump;

#[derive(Debug, Parser)]
#[command(name = "mpisac", version, about = "Multipath-aided target detection experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// ROC points for each design variant.
    Roc(CommonArgs),
    /// Detection probability against the NLoS share of the echo.
    RcsSweep(CommonArgs),
    /// Delay-Doppler maps in single-path and combined mode.
    Ddmap(CommonArgs),
    /// Objective trace and final design of one variant.
    Optimize(CommonArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Roc(_) => "roc",
            Command::RcsSweep(_) => "rcs-sweep",
            Command::Ddmap(_) => "ddmap",
            Command::Optimize(_) => "optimize",
        }
    }

    pub fn args(&self) -> &CommonArgs {
        match self {
            Command::Roc(a) | Command::RcsSweep(a) | Command::Ddmap(a) | Command::Optimize(a) => a,
        }
    }
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Experiment config file.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `run.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `run.n_trials`.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the config's profile.
    #[arg(long, value_enum)]
    pub profile: Option<Profile>,
    /// Worker threads; defaults to the number of cores. Results do not
    /// depend on it.
    #[arg(long)]
    pub workers: Option<usize>,
}

/// Written before any result file.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub profile: Profile,
    pub n_trials: usize,
    pub outputs: Vec<String>,
    pub config: serde_json::Value,
}

fn output_names(command: &str, cfg: &ExperimentConfig) -> Vec<String> {
    let mut out = vec![format!("{}.csv", command.replace('-', "_"))];
    if command == "ddmap" && cfg.map.dump {
        out.push("ddmap_frame.bin".into());
    }
    out
}

fn fmt(v: f64) -> String {
    format!("{v:?}")
}

fn csv_writer(path: &FsPath, header: &[&str]) -> anyhow::Result<csv::Writer<BufWriter<File>>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(f));
    w.write_record(header)?;
    Ok(w)
}

/// Runs one command and returns the files written, manifest first.
pub fn execute(command: &Command) -> anyhow::Result<Vec<PathBuf>> {
    let args = command.args();
    let overrides = Overrides {
        profile: args.profile,
        seed: args.seed,
        trials: args.trials,
    };
    let cfg = ExperimentConfig::load(&args.config, &overrides)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;

    let name = command.name();
    let outputs = output_names(name, &cfg);
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: name.into(),
        config_hash: cfg.hash(),
        seed: cfg.run.seed,
        profile: cfg.profile,
        n_trials: cfg.run.n_trials,
        outputs: outputs.clone(),
        config: serde_json::to_value(&cfg)?,
    };
    let manifest_path = args.out.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&manifest_path, text)?;

    let csv_path = args.out.join(&outputs[0]);
    let mut written = vec![manifest_path, csv_path.clone()];
    match command {
        Command::Roc(_) => {
            let rows = run_roc(&cfg)?;
            let mut w = csv_writer(
                &csv_path,
                &["variant", "p_fa", "p_d", "halfwidth", "threshold", "p_fa_empirical", "n_trials"],
            )?;
            for r in rows {
                w.write_record([
                    r.variant.name().to_string(),
                    fmt(r.p_fa),
                    fmt(r.p_d),
                    fmt(r.halfwidth),
                    fmt(r.threshold),
                    fmt(r.p_fa_empirical),
                    r.n_trials.to_string(),
                ])?;
            }
            w.flush()?;
        }
        Command::RcsSweep(_) => {
            let rows = run_rcs_sweep(&cfg)?;
            let mut w = csv_writer(
                &csv_path,
                &["nlos_fraction", "variant", "p_d", "halfwidth", "threshold", "n_trials"],
            )?;
            for r in rows {
                w.write_record([
                    fmt(r.nlos_fraction),
                    r.variant.name().to_string(),
                    fmt(r.p_d),
                    fmt(r.halfwidth),
                    fmt(r.threshold),
                    r.n_trials.to_string(),
                ])?;
            }
            w.flush()?;
        }
        Command::Ddmap(_) => {
            let run = run_ddmap(&cfg)?;
            let mut w = csv_writer(&csv_path, &["frame", "mode", "k", "r", "value", "threshold", "above"])?;
            for f in &run.frames {
                for (map, cal, mode) in [
                    (&f.single, &run.single_threshold, "single"),
                    (&f.combined, &run.combined_threshold, run.combined_mode.name()),
                ] {
                    for (i, &k) in map.delays.iter().enumerate() {
                        for (j, &r) in map.dopplers.iter().enumerate() {
                            let v = map.values[[i, j]];
                            w.write_record([
                                f.index.to_string(),
                                mode.to_string(),
                                k.to_string(),
                                r.to_string(),
                                fmt(v),
                                fmt(cal.threshold),
                                u8::from(v > cal.threshold).to_string(),
                            ])?;
                        }
                    }
                }
            }
            w.flush()?;
            if cfg.map.dump {
                let path = args.out.join(&outputs[1]);
                let mut out = BufWriter::new(File::create(&path)?);
                for f in &run.frames {
                    write_frame_dump(&mut out, f.y.view(), run.scenario.paths.len())?;
                }
                out.flush()?;
                written.push(path);
            }
        }
        Command::Optimize(_) => {
            let run = run_optimize(&cfg)?;
            let sol = &run.solution;
            let n = run.grid.n_subcarriers;
            let mut w = csv_writer(&csv_path, &["kind", "index", "n", "m", "value"])?;
            for (i, v) in sol.objective_trace.iter().enumerate() {
                w.write_record(["objective".into(), i.to_string(), String::new(), String::new(), fmt(*v)])?;
            }
            for (i, a) in sol.alloc.gains.iter().enumerate() {
                w.write_record(["power".into(), i.to_string(), (i % n).to_string(), (i / n).to_string(), fmt(*a)])?;
            }
            for (l, v) in sol.w.as_slice().iter().enumerate() {
                w.write_record(["weight".into(), l.to_string(), String::new(), String::new(), fmt(*v)])?;
            }
            w.flush()?;
        }
    }
    Ok(written)
}

/// Parses arguments, sizes the worker pool and runs the command.
pub fn main_with_args<I, T>(args: I) -> anyhow::Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cli.command.args().workers {
        anyhow::ensure!(w > 0, "--workers must be positive");
        pool = pool.num_threads(w);
    }
    let pool = pool.build()?;
    let written = pool.install(|| execute(&cli.command))?;
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}
