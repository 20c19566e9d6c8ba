use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use svcq::codebook::{self, Codebook};
use svcq::conversion::{self, F0Options, ShiftMode};
use svcq::features::{self, load_f0, load_matrix, save_f0, save_matrix};
use svcq::fmt::significant;
use svcq::kmeans::{self, EmptyCenterPolicy, InitMethod, IterationRecord, TrainConfig};
use svcq::metrics::{self, QdcMode, ReportOptions};
use svcq::{npy, quantizer, Error, ShardManifest, TokenSequence};

use crate::{Cli, Command, EmptyArg, InitArg, QdcModeArg, UsageError};

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train(a) => train(cli, a),
        Command::Encode(a) => encode(cli, a),
        Command::Decode(a) => decode(cli, a),
        Command::Metrics(a) => run_metrics(cli, a),
        Command::EvalSim(a) => eval_sim(cli, a),
        Command::F0Shift(a) => f0_shift(cli, a),
        Command::Inspect(a) => inspect(&a.path),
    }
}

/// Resolved settings of a run, written to `<output>.run.json`.
#[derive(Serialize)]
struct RunRecord<'a, C: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'a Command,
    resolved: C,
}

fn write_record<C: Serialize>(cli: &Cli, output: &Path, resolved: C) -> Result<()> {
    let record = RunRecord {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command: &cli.command,
        resolved,
    };
    let mut path = output.as_os_str().to_owned();
    path.push(".run.json");
    let path = PathBuf::from(path);
    let mut json = serde_json::to_vec_pretty(&record)?;
    json.push(b'\n');
    std::fs::write(&path, json).with_context(|| format!("writing {}", path.display()))
}

#[derive(Serialize)]
struct ResolvedTrain {
    k: usize,
    batch_size: usize,
    iterations: usize,
    init: &'static str,
    init_subsample: usize,
    seed: u64,
    empty_center_policy: &'static str,
    total_frames: u64,
    dim: usize,
    shards: usize,
}

fn train(cli: &Cli, a: &crate::TrainArgs) -> Result<()> {
    let manifest = ShardManifest::load(&a.manifest)?;
    let config = TrainConfig {
        k: a.k,
        batch_size: a.batch_size,
        iterations: a.iters,
        init: match a.init {
            InitArg::KMeansPlusPlus => InitMethod::KMeansPlusPlus,
            InitArg::Random => InitMethod::RandomSample,
        },
        init_subsample: a.init_subsample.unwrap_or_else(|| a.k.max(100_000)),
        seed: a.seed,
        empty_center_policy: match a.empty_centers {
            EmptyArg::Reseed => EmptyCenterPolicy::ReseedFromBatch,
            EmptyArg::Keep => EmptyCenterPolicy::Keep,
        },
    };
    if let Err(e @ Error::Config(_)) = config.validate(manifest.total_frames()) {
        return Err(UsageError(e.to_string()).into());
    }
    config.validate(manifest.total_frames())?;
    let resolved = ResolvedTrain {
        k: config.k,
        batch_size: config.batch_size,
        iterations: config.iterations,
        init: match config.init {
            InitMethod::KMeansPlusPlus => "kmeans++",
            InitMethod::RandomSample => "random",
        },
        init_subsample: config.init_subsample,
        seed: config.seed,
        empty_center_policy: match config.empty_center_policy {
            EmptyCenterPolicy::ReseedFromBatch => "reseed",
            EmptyCenterPolicy::Keep => "keep",
        },
        total_frames: manifest.total_frames(),
        dim: manifest.dim(),
        shards: manifest.entries().len(),
    };
    if a.dry_run {
        println!("{}", serde_json::to_string_pretty(&resolved)?);
        return Ok(());
    }

    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut p = a.out.as_os_str().to_owned();
        p.push(".log.csv");
        PathBuf::from(p)
    });
    let mut log = BufWriter::new(
        File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?,
    );
    writeln!(log, "{}", IterationRecord::CSV_HEADER)?;
    let mut log_err = None;
    let trained = kmeans::train_with_progress(&manifest, &config, |rec| {
        if log_err.is_none() {
            log_err = writeln!(log, "{}", rec.to_csv()).err();
        }
    })?;
    if let Some(e) = log_err {
        return Err(e).with_context(|| format!("writing {}", log_path.display()));
    }
    log.flush()?;

    let mut cb = trained.codebook;
    for (k, v) in &a.tags {
        cb.set_tag(k, v);
    }
    cb.save(&a.out)?;
    write_record(cli, &a.out, &resolved)?;

    let last = trained.log.last().expect("at least one iteration");
    println!(
        "k={} dim={} iterations={} frames_seen={} final_inertia={} codebook_id={}",
        cb.k(),
        cb.dim(),
        last.iter,
        last.frames_seen,
        significant(last.inertia, 6),
        cb.id()
    );
    Ok(())
}

fn encode(cli: &Cli, a: &crate::EncodeArgs) -> Result<()> {
    let cb = Codebook::load(&a.codebook)?;
    let features = load_matrix(&a.input)?;
    let tokens = quantizer::encode(&features, &cb)?;
    tokens.save(&a.out)?;
    write_record(cli, &a.out, serde_json::json!({ "codebook_id": cb.id().to_string() }))?;
    println!("frames: {}", tokens.n_frames());
    Ok(())
}

fn decode(cli: &Cli, a: &crate::DecodeArgs) -> Result<()> {
    let cb = Codebook::load(&a.codebook)?;
    let tokens = TokenSequence::load(&a.input)?;
    let features = quantizer::decode(&tokens, &cb)?;
    save_matrix(&features, &a.out)?;
    write_record(cli, &a.out, serde_json::json!({ "codebook_id": cb.id().to_string() }))?;
    println!("frames: {}", features.n_frames());
    Ok(())
}

fn run_metrics(cli: &Cli, a: &crate::MetricsArgs) -> Result<()> {
    if !(a.qdc_percentile > 0.0 && a.qdc_percentile < 1.0) {
        return Err(UsageError(format!("--qdc-percentile {} is not in (0, 1)", a.qdc_percentile)).into());
    }
    let features = load_matrix(&a.eval)?;
    let mut codebooks = a
        .codebooks
        .iter()
        .map(Codebook::load)
        .collect::<Result<Vec<_>, _>>()?;
    codebooks.sort_by_key(Codebook::k);
    let options = ReportOptions {
        qdc_percentile: a.qdc_percentile,
        qdc_mode: match a.qdc_mode {
            QdcModeArg::NearestNeighbor => QdcMode::NearestNeighbor,
            QdcModeArg::AllPairs => QdcMode::AllPairs,
        },
    };
    let reports = metrics::report_with(&features, &codebooks, &options)?;
    let write = |out: &mut dyn Write| -> io::Result<()> {
        if a.long {
            metrics::write_long_csv(out, &reports)
        } else {
            metrics::write_csv(out, &reports)
        }
    };
    match &a.out {
        Some(path) => {
            let mut f = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
            write(&mut f)?;
            f.flush()?;
            write_record(cli, path, &options)?;
        }
        None => write(&mut io::stdout().lock())?,
    }
    Ok(())
}

fn load_speaker(path: &Path) -> Result<svcq::SpeakerEmbedding> {
    let all = features::load_embeddings(path)?;
    Ok(conversion::mean_pool(&all).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?)
}

fn eval_sim(cli: &Cli, a: &crate::EvalSimArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.pairs).with_context(|| format!("reading {}", a.pairs.display()))?;
    let base = a.pairs.parent().unwrap_or_else(|| Path::new(""));
    let rows = match conversion::parse_pairing_csv(&text, base) {
        Ok(rows) => rows,
        Err(e @ Error::Empty(_)) => return Err(UsageError(format!("{}: {e}", a.pairs.display())).into()),
        Err(e) => return Err(anyhow::Error::from(e).context(a.pairs.display().to_string())),
    };
    let mut converted = Vec::with_capacity(rows.len());
    let mut sources = Vec::with_capacity(rows.len());
    let mut targets = Vec::with_capacity(rows.len());
    for row in &rows {
        converted.push(load_speaker(&row.converted)?);
        sources.push(load_speaker(&row.source_ref)?);
        targets.push(load_speaker(&row.target_ref)?);
    }
    let result = conversion::evaluate_similarity(&converted, &sources, &targets)?;
    match &a.out {
        Some(path) => {
            let mut f = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
            result.write_csv(&mut f)?;
            f.flush()?;
            write_record(cli, path, serde_json::json!({ "n_pairs": result.n_pairs }))?;
        }
        None => result.write_csv(io::stdout().lock())?,
    }
    Ok(())
}

fn f0_shift(cli: &Cli, a: &crate::F0ShiftArgs) -> Result<()> {
    let options = F0Options {
        bin_width: a.bin_width,
        floor_hz: a.floor,
        mode: if a.ratio { ShiftMode::Ratio } else { ShiftMode::AdditiveHz },
    };
    let source = load_f0(&a.source)?;
    let target_mode = match (&a.target, a.target_mode) {
        (_, Some(m)) => m,
        (Some(path), None) => conversion::f0_mode_binned(&load_f0(path)?, a.bin_width)
            .with_context(|| format!("target {}", path.display()))?,
        (None, None) => bail!(UsageError("one of --target or --target-mode is required".into())),
    };
    let shift = conversion::f0_shift_with(&source, target_mode, &options)
        .with_context(|| format!("source {}", a.source.display()))?;
    save_f0(&shift.track, &a.out)?;
    write_record(
        cli,
        &a.out,
        serde_json::json!({
            "source_mode": shift.source_mode,
            "target_mode": shift.target_mode,
            "delta": shift.delta,
        }),
    )?;
    println!(
        "source_mode={} target_mode={} delta={}",
        significant(shift.source_mode.into(), 6),
        significant(shift.target_mode.into(), 6),
        significant(shift.delta.into(), 6)
    );
    Ok(())
}

fn inspect(path: &Path) -> Result<()> {
    let mut prefix = Vec::new();
    File::open(path)
        .with_context(|| format!("opening {}", path.display()))?
        .take(8)
        .read_to_end(&mut prefix)?;
    if prefix.starts_with(&npy::MAGIC) {
        let header = npy::read_header(&mut io::BufReader::new(File::open(path)?))
            .with_context(|| path.display().to_string())?;
        println!("format: npy");
        println!("dtype: {}", header.element_type.descr());
        println!("shape: {:?}", header.shape);
        println!("data_offset: {}", header.data_offset);
        let sidecar = codebook::sidecar_path(path);
        if sidecar.exists() {
            println!("sidecar: {}", std::fs::read_to_string(&sidecar)?.trim_end());
        }
    } else if prefix.starts_with(&codebook::MAGIC) {
        let cb = Codebook::load(path)?;
        println!("format: svcq codebook v{}", codebook::VERSION);
        println!("k: {}", cb.k());
        println!("dim: {}", cb.dim());
        println!("seed: {}", cb.seed());
        println!("codebook_id: {}", cb.id());
        println!("frames_counted: {}", cb.counts().iter().sum::<u64>());
        println!("empty_centers: {}", cb.counts().iter().filter(|&&c| c == 0).count());
        for (k, v) in cb.meta() {
            println!("tag.{k}: {v}");
        }
    } else if prefix.first() == Some(&b'{') {
        let value: serde_json::Value = serde_json::from_slice(&std::fs::read(path)?)
            .with_context(|| path.display().to_string())?;
        println!("{}", serde_json::to_string_pretty(&value)?);
    } else {
        bail!("{}: not a recognised artifact (npy, svcq or JSON sidecar)", path.display());
    }
    Ok(())
}
