//! Command-line front end.
//!
//! Exit codes: 0 success, 1 invalid ledger or other failure, 2 config or
//! usage error, 3 I/O or encoding error. Standard output is a line-oriented
//! `key=value` summary.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{encode_idx_images, encode_idx_labels, gen_synthetic, quantize};
use crate::error::Error;
use crate::ledger::{ChainValidity, Ledger};
use crate::sim::config::DataConfig;
use crate::sim::metrics::{mean, oscillation};
use crate::sim::{run_scenario, run_scenario_with_threads, ScenarioConfig, ScenarioRun};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "ztrust",
    version,
    about = "Blockchain-backed federated learning zero-trust simulator"
)]
pub struct Cli {
    /// Suppress the summary on stdout.
    #[arg(long, global = true)]
    pub quiet: bool,
    /// Worker threads for device-local phases. Results do not depend on it.
    #[arg(long, global = true, env = "ZTRUST_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one scenario and write metrics.csv, ledger.export and metadata.toml.
    Run(RunArgs),
    /// Run two scenarios with the same round count and compare them.
    Compare(CompareArgs),
    /// Check an exported ledger; prints the first bad block on failure.
    ValidateLedger { path: PathBuf },
    /// Write a synthetic dataset as an IDX image/label pair.
    GenData(GenDataArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides master_seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Given twice: scenario A then scenario B. Gaps are A minus B.
    #[arg(long, required = true, num_args = 1)]
    pub config: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Scenario whose [data] section sets the generator parameters.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Parses `args` (including the program name) and executes the command.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                stderr.write_all(text.as_bytes())
            } else {
                stdout.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let mut sink = std::io::sink();
    let out: &mut dyn Write = if cli.quiet { &mut sink } else { stdout };
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a, cli.threads, out),
        Command::Compare(a) => cmd_compare(a, cli.threads, out),
        Command::ValidateLedger { path } => cmd_validate(path, out),
        Command::GenData(a) => cmd_gen_data(a, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } => EXIT_CONFIG,
        Error::Io(_) | Error::Format(_) => EXIT_IO,
        Error::Shape { .. } | Error::Argument(_) => EXIT_FAILURE,
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ScenarioConfig, Error> {
    let mut cfg = ScenarioConfig::from_file(path)?;
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    Ok(cfg)
}

fn execute(cfg: &ScenarioConfig, threads: Option<usize>) -> Result<ScenarioRun, Error> {
    match threads {
        Some(0) => Err(Error::config("threads", "must be positive")),
        Some(n) => run_scenario_with_threads(cfg, n),
        None => run_scenario(cfg),
    }
}

fn write_summary(out: &mut dyn Write, prefix: &str, run: &ScenarioRun) -> std::io::Result<()> {
    let acc = run.accuracies();
    writeln!(out, "{prefix}topology={}", run.metadata.config.topology.as_str())?;
    writeln!(out, "{prefix}rounds={}", run.metrics.len())?;
    writeln!(out, "{prefix}final_accuracy={}", acc.last().copied().unwrap_or(0.0))?;
    writeln!(
        out,
        "{prefix}mean_delay_s={}",
        mean(run.metrics.iter().map(|m| m.delay_s))
    )?;
    writeln!(out, "{prefix}oscillation={}", oscillation(&acc))?;
    writeln!(
        out,
        "{prefix}degenerate_rounds={}",
        run.metrics.iter().filter(|m| m.degenerate).count()
    )?;
    writeln!(out, "{prefix}ledger_blocks={}", run.ledger.len())?;
    writeln!(
        out,
        "{prefix}ledger_valid={}",
        run.ledger.validate() == ChainValidity::Valid
    )
}

fn cmd_run(a: &RunArgs, threads: Option<usize>, out: &mut dyn Write) -> Result<i32, Error> {
    let cfg = load_config(&a.config, a.seed)?;
    let run = execute(&cfg, threads)?;
    run.write_artifacts(&a.out)?;
    write_summary(out, "", &run)?;
    writeln!(out, "out={}", a.out.display())?;
    Ok(EXIT_OK)
}

fn cmd_compare(a: &CompareArgs, threads: Option<usize>, out: &mut dyn Write) -> Result<i32, Error> {
    let [path_a, path_b] = a.config.as_slice() else {
        return Err(Error::config("config", "compare takes exactly two --config paths"));
    };
    let cfg_a = load_config(path_a, a.seed)?;
    let cfg_b = load_config(path_b, a.seed)?;
    if cfg_a.rounds != cfg_b.rounds {
        return Err(Error::config(
            "rounds",
            format!("scenarios disagree ({} vs {})", cfg_a.rounds, cfg_b.rounds),
        ));
    }
    let run_a = execute(&cfg_a, threads)?;
    let run_b = execute(&cfg_b, threads)?;
    run_a.write_artifacts(&a.out.join("a"))?;
    run_b.write_artifacts(&a.out.join("b"))?;

    let mut csv = String::from("round,accuracy_a,accuracy_b,delay_s_a,delay_s_b,degenerate_a,degenerate_b\n");
    for (ma, mb) in run_a.metrics.iter().zip(&run_b.metrics) {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            ma.round, ma.accuracy, mb.accuracy, ma.delay_s, mb.delay_s, ma.degenerate, mb.degenerate
        ));
    }
    std::fs::write(a.out.join("compare.csv"), csv)?;

    let (acc_a, acc_b) = (run_a.accuracies(), run_b.accuracies());
    let last = |v: &[f64]| v.last().copied().unwrap_or(0.0);
    let delay = |r: &ScenarioRun| mean(r.metrics.iter().map(|m| m.delay_s));
    let summary = format!(
        "final_accuracy_gap={}\nmean_delay_gap_s={}\noscillation_gap={}\n",
        last(&acc_a) - last(&acc_b),
        delay(&run_a) - delay(&run_b),
        oscillation(&acc_a) - oscillation(&acc_b)
    );
    std::fs::write(a.out.join("summary.txt"), &summary)?;
    write_summary(out, "a.", &run_a)?;
    write_summary(out, "b.", &run_b)?;
    out.write_all(summary.as_bytes())?;
    writeln!(out, "out={}", a.out.display())?;
    Ok(EXIT_OK)
}

fn cmd_validate(path: &Path, out: &mut dyn Write) -> Result<i32, Error> {
    let ledger = Ledger::import(&std::fs::read_to_string(path)?)?;
    writeln!(out, "blocks={}", ledger.len())?;
    match ledger.validate() {
        ChainValidity::Valid => {
            writeln!(out, "valid=true")?;
            Ok(EXIT_OK)
        }
        ChainValidity::Invalid { first_bad_index } => {
            writeln!(out, "valid=false")?;
            writeln!(out, "first_bad_index={first_bad_index}")?;
            Ok(EXIT_FAILURE)
        }
    }
}

fn cmd_gen_data(a: &GenDataArgs, out: &mut dyn Write) -> Result<i32, Error> {
    let (data, mut seed) = match &a.config {
        Some(p) => {
            let cfg = ScenarioConfig::from_file(p)?;
            (cfg.data, cfg.master_seed)
        }
        None => (DataConfig::default(), 0),
    };
    if let Some(s) = a.seed {
        seed = s;
    }
    let ds = gen_synthetic(
        data.n_samples,
        data.n_features,
        data.n_classes,
        data.class_separation,
        seed,
    )?;
    let labels: Vec<usize> = ds.samples.iter().map(|s| s.label).collect();
    let images = encode_idx_images(1, ds.n_features, &quantize(&ds))?;
    let labels = encode_idx_labels(&labels)?;
    std::fs::create_dir_all(&a.out)?;
    let images_path = a.out.join("images.idx3-ubyte");
    let labels_path = a.out.join("labels.idx1-ubyte");
    std::fs::write(&images_path, images)?;
    std::fs::write(&labels_path, labels)?;
    writeln!(out, "samples={}", ds.len())?;
    writeln!(out, "images={}", images_path.display())?;
    writeln!(out, "labels={}", labels_path.display())?;
    Ok(EXIT_OK)
}
