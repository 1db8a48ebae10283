//! `alfamix` command-line driver.

use std::path::{Path, PathBuf};

use alfamix_core::data::{gen_gaussian_blobs, write_csv_tabular};
use alfamix_core::harness::{
    build_comparison_matrix, prepare_data, read_results_csv, run_all, write_matrix_csv, write_outputs,
};
use alfamix_core::{Error, ExperimentConfig, Strategy};
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "alfamix", version, about = "Pool-based active learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every (strategy, seed) pair of a config and write results.csv and matrix.csv.
    Run(RunArgs),
    /// Recompute the comparison matrix from results CSVs, one file per setting.
    Compare(CompareArgs),
    /// Write a Gaussian blob dataset as CSV.
    GenData(GenDataArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated strategy names; overrides the config.
    #[arg(long, value_delimiter = ',')]
    strategies: Option<Vec<String>>,
    /// Comma-separated seeds; overrides the config.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Worker threads for independent runs (0 = all cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// results.csv files; each is one setting and their matrices are summed.
    #[arg(required = true)]
    results: Vec<PathBuf>,
    /// Where to write matrix.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 100)]
    per_class: usize,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    #[arg(long, default_value_t = 1.0)]
    spread: f64,
    #[arg(long, default_value_t = 4.0)]
    center_scale: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Name of the label column.
    #[arg(long, default_value = "label")]
    label_column: String,
}

/// Parse `args` (program name first) and run. Returns the process exit code:
/// 0 on success, 1 on a runtime error, 2 on a usage error.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            // clap renders usage and help text itself
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Run(a) => run(a),
        Command::Compare(a) => compare(a),
        Command::GenData(a) => gen_data(a),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn run(args: RunArgs) -> Result<(), Error> {
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(names) = &args.strategies {
        config.strategies = names.iter().map(|s| s.trim().parse()).collect::<Result<Vec<Strategy>, _>>()?;
    }
    if let Some(seeds) = args.seeds {
        config.seeds = seeds;
    }
    config.validate()?;
    let out = args
        .out
        .or_else(|| config.output_dir.clone())
        .ok_or_else(|| Error::InvalidConfig("no output directory: pass --out or set output_dir".into()))?;
    let base = args.config.parent().map_or_else(|| Path::new(".").to_path_buf(), Path::to_path_buf);
    let data = prepare_data(&config.dataset, &base)?;
    let results = run_all(&config, &data, &config.strategies, &config.seeds, args.threads)?;
    write_outputs(&results, &out)?;
    for s in &config.strategies {
        let finals: Vec<f64> = results.iter().filter(|r| r.strategy == *s).filter_map(|r| r.final_accuracy()).collect();
        let mean = finals.iter().sum::<f64>() / finals.len() as f64;
        println!("{:<12} final accuracy {:.4} ({} seeds)", s.name(), mean, finals.len());
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn compare(args: CompareArgs) -> Result<(), Error> {
    let settings = args.results.iter().map(|p| read_results_csv(p)).collect::<Result<Vec<_>, _>>()?;
    let matrix = build_comparison_matrix(&settings)?;
    write_matrix_csv(&matrix, &args.out)
}

fn gen_data(args: GenDataArgs) -> Result<(), Error> {
    let d = gen_gaussian_blobs(args.classes, args.per_class, args.dim, args.spread, args.center_scale, args.seed)?;
    write_csv_tabular(&d, &args.out, &args.label_column)
}
