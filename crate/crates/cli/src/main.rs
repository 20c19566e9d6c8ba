//! `svcq` command-line tool.
//!
//! Exit codes: 0 on success, 1 on data or processing errors, 2 on usage errors.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(name = "svcq", version, about = "Mini-batch k-means speech unit toolkit")]
struct Cli {
    /// Worker threads (0 = one per core). Outputs never depend on this.
    #[arg(long, global = true, env = "SVCQ_THREADS", default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Train a codebook over the shards of a manifest.
    Train(TrainArgs),
    /// Encode a feature matrix into a token file.
    Encode(EncodeArgs),
    /// Decode a token file back into center vectors.
    Decode(DecodeArgs),
    /// AMD / MDC / QDC report for one or more codebooks.
    Metrics(MetricsArgs),
    /// SrcSIM / TgtSIM over a pairing file of speaker embeddings.
    EvalSim(EvalSimArgs),
    /// Shift an F0 track so its mode matches a target.
    F0Shift(F0ShiftArgs),
    /// Print the header or metadata of an artifact file.
    Inspect(InspectArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum InitArg {
    #[value(name = "kmeans++")]
    #[serde(rename = "kmeans++")]
    KMeansPlusPlus,
    Random,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum EmptyArg {
    Reseed,
    Keep,
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    /// Text file listing one feature shard (.npy, N×D float32) per line.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 65_536)]
    batch_size: usize,
    #[arg(long, default_value_t = 100)]
    iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = InitArg::KMeansPlusPlus)]
    init: InitArg,
    /// Frames sampled for initialization [default: max(k, 100000)].
    #[arg(long)]
    init_subsample: Option<usize>,
    #[arg(long, value_enum, default_value_t = EmptyArg::Reseed)]
    empty_centers: EmptyArg,
    /// Metadata tag stored with the codebook, e.g. `--tag layer=H22`.
    #[arg(long = "tag", value_name = "KEY=VALUE", value_parser = parse_tag)]
    tags: Vec<(String, String)>,
    /// Training log path [default: <out>.log.csv].
    #[arg(long)]
    log: Option<PathBuf>,
    /// Validate the configuration against the manifest and exit.
    #[arg(long)]
    dry_run: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct EncodeArgs {
    #[arg(long)]
    codebook: PathBuf,
    /// Feature matrix (.npy, N×D float32).
    #[arg(long)]
    input: PathBuf,
    /// Token file (.npy, N uint32) plus a .meta.json sidecar.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct DecodeArgs {
    #[arg(long)]
    codebook: PathBuf,
    /// Token file written by `encode`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum QdcModeArg {
    NearestNeighbor,
    AllPairs,
}

#[derive(Debug, Args, Serialize)]
struct MetricsArgs {
    /// Evaluation features used for AMD.
    #[arg(long = "eval")]
    eval: PathBuf,
    #[arg(long = "codebook", required = true)]
    codebooks: Vec<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    qdc_percentile: f64,
    #[arg(long, value_enum, default_value_t = QdcModeArg::NearestNeighbor)]
    qdc_mode: QdcModeArg,
    /// Emit long-format `k,metric,value` rows instead.
    #[arg(long)]
    long: bool,
    /// Write the CSV here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct EvalSimArgs {
    /// CSV rows `converted_path,source_ref_path,target_ref_path`.
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
#[command(group(clap::ArgGroup::new("target_spec").required(true).args(["target", "target_mode"])))]
struct F0ShiftArgs {
    #[arg(long)]
    source: PathBuf,
    /// F0 track of the target singer; its mode is the target.
    #[arg(long)]
    target: Option<PathBuf>,
    /// Explicit target mode in Hz.
    #[arg(long)]
    target_mode: Option<f32>,
    #[arg(long, default_value_t = 1.0)]
    floor: f32,
    #[arg(long, default_value_t = 1.0)]
    bin_width: f32,
    /// Scale by target/source mode instead of adding the difference.
    #[arg(long)]
    ratio: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct InspectArgs {
    path: PathBuf,
}

fn parse_tag(s: &str) -> Result<(String, String), String> {
    match s.split_once('=') {
        Some((k, v)) if !k.is_empty() => Ok((k.to_owned(), v.to_owned())),
        _ => Err(format!("expected KEY=VALUE, got '{s}'")),
    }
}

/// An error the user can fix by changing the invocation.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
    {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
