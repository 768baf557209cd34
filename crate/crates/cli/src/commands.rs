use std::fs;
use std::path::Path;

use cocoa_core::batching::{split_dataset, DatasetSplits, SplitFractions, WindowedDataset};
use cocoa_core::bench::run_bench;
use cocoa_core::checkpoint::{load_encoder, save_encoder};
use cocoa_core::encoder::{EncoderConfig, EncoderParams};
use cocoa_core::io::{export_embeddings, read_dataset, write_dataset};
use cocoa_core::pipeline::{
    batch_sweep, finetune, label_curve, linear_probe, pretrain, random_encoder, write_jsonl, ClassifierOutcome,
    CurvePoint, F1Report, Method, RunMetrics, SweepGrid, TrainConfig,
};
use cocoa_core::synth::generate;
use cocoa_core::{Error, Result};
use serde::Serialize;

use crate::args::{
    BatchSweepArgs, BenchArgs, Command, DataArgs, ExportArgs, FinetuneArgs, LabelCurveArgs, PretrainArgs, ProbeArgs,
    SplitName, SynthArgs, TrainArgs,
};
use crate::config::CliConfig;

pub fn dispatch(command: Command, config: CliConfig) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a, config),
        Command::Pretrain(a) => pretrain_cmd(a, config),
        Command::Probe(a) => probe(a, config),
        Command::Finetune(a) => finetune_cmd(a, config),
        Command::LabelCurve(a) => label_curve_cmd(a, config),
        Command::BatchSweep(a) => batch_sweep_cmd(a, config),
        Command::Bench(a) => bench(a),
        Command::ExportEmbeddings(a) => export(a, config),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent().filter(|p| !p.as_os_str().is_empty()) {
        Some(parent) => fs::create_dir_all(parent).map_err(io_err(parent)),
        None => Ok(()),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    create_parent(path)?;
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Validation(e.to_string()))?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

fn write_metrics(path: Option<&Path>, metrics: &[RunMetrics]) -> Result<()> {
    match path {
        Some(p) => write_jsonl(p, metrics),
        None => Ok(()),
    }
}

struct Loaded {
    dataset: WindowedDataset,
    splits: DatasetSplits,
    hash: String,
}

fn load(data: &DataArgs, config: &CliConfig, seed: u64) -> Result<Loaded> {
    let path = config.data_path(data.data.as_deref())?;
    let dataset = read_dataset(&path)?;
    let splits = split_dataset(&dataset, SplitFractions::default(), seed)?;
    let hash = dataset.content_hash();
    Ok(Loaded { dataset, splits, hash })
}

fn train_config(args: &TrainArgs, config: &CliConfig) -> TrainConfig {
    let mut c = config.train.clone();
    args.apply(&mut c);
    c
}

fn encoder_for(path: Option<&Path>, dataset: &WindowedDataset, seed: u64) -> Result<EncoderParams> {
    match path {
        Some(p) => Ok(load_encoder(p)?.0),
        None => random_encoder(EncoderConfig::for_modalities(dataset.modalities())?, seed),
    }
}

fn synth(args: SynthArgs, config: CliConfig) -> Result<()> {
    let mut c = config.synth;
    args.apply(&mut c);
    let dataset = generate(&c)?;
    let manifest = write_dataset(&dataset, &args.out)?;
    println!(
        "wrote {} windows to {} (hash {})",
        dataset.len(),
        manifest.display(),
        dataset.content_hash()
    );
    Ok(())
}

#[derive(Serialize)]
struct PretrainReport<'a> {
    dataset_hash: &'a str,
    encoder_hash: String,
    best_epoch: usize,
    best_val_loss: f64,
    epochs_run: usize,
    config: &'a TrainConfig,
}

fn pretrain_cmd(args: PretrainArgs, config: CliConfig) -> Result<()> {
    let train = train_config(&args.train, &config);
    let data = load(&args.data, &config, train.seed)?;
    let encoder = EncoderConfig::for_modalities(data.dataset.modalities())?;
    let out = pretrain(&data.splits, &encoder, &train)?;
    fs::create_dir_all(&args.out).map_err(io_err(&args.out))?;
    save_encoder(&args.out.join("encoder.ckpt"), &out.params, &[])?;
    write_json(
        &args.out.join("run.json"),
        &PretrainReport {
            dataset_hash: &data.hash,
            encoder_hash: out.params.hash(),
            best_epoch: out.best_epoch,
            best_val_loss: out.best_val_loss,
            epochs_run: out.epochs_run,
            config: &train,
        },
    )?;
    write_metrics(args.train.metrics.as_deref(), &out.metrics)?;
    println!(
        "{} pretraining: best validation loss {:.6} at epoch {} of {}; checkpoint in {}",
        train.method,
        out.best_val_loss,
        out.best_epoch,
        out.epochs_run,
        args.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct ClassifierReport<'a> {
    dataset_hash: &'a str,
    encoder_hash: String,
    label_fraction: f64,
    train_samples: usize,
    val_macro_f1: f64,
    test: &'a F1Report,
    best_epoch: usize,
    epochs_run: usize,
}

fn classifier_report<'a>(hash: &'a str, out: &'a ClassifierOutcome, fraction: f64) -> ClassifierReport<'a> {
    ClassifierReport {
        dataset_hash: hash,
        encoder_hash: out.encoder.hash(),
        label_fraction: fraction,
        train_samples: out.train_samples,
        val_macro_f1: out.val_f1,
        test: &out.test,
        best_epoch: out.best_epoch,
        epochs_run: out.epochs_run,
    }
}

fn probe(args: ProbeArgs, config: CliConfig) -> Result<()> {
    let train = train_config(&args.train, &config);
    let data = load(&args.data, &config, train.seed)?;
    let encoder = encoder_for(args.encoder.as_deref(), &data.dataset, train.seed)?;
    let out = linear_probe(&encoder, &data.splits, &train)?;
    if let Some(path) = &args.out {
        write_json(path, &classifier_report(&data.hash, &out, 1.0))?;
    }
    write_metrics(args.train.metrics.as_deref(), &out.metrics)?;
    println!(
        "probe: test macro-F1 {:.4} (validation {:.4}, epoch {})",
        out.test.macro_f1, out.val_f1, out.best_epoch
    );
    Ok(())
}

fn finetune_cmd(args: FinetuneArgs, config: CliConfig) -> Result<()> {
    let train = train_config(&args.train, &config);
    let data = load(&args.data, &config, train.seed)?;
    let encoder = encoder_for(args.encoder.as_deref(), &data.dataset, train.seed)?;
    let out = finetune(&encoder, &data.splits, &train, args.label_fraction)?;
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        save_encoder(&dir.join("model.ckpt"), &out.encoder, &out.classifier.records())?;
        write_json(
            &dir.join("report.json"),
            &classifier_report(&data.hash, &out, args.label_fraction),
        )?;
    }
    write_metrics(args.train.metrics.as_deref(), &out.metrics)?;
    println!(
        "finetune at {} of labels ({} samples): test macro-F1 {:.4} (validation {:.4})",
        args.label_fraction, out.train_samples, out.test.macro_f1, out.val_f1
    );
    Ok(())
}

#[derive(Serialize)]
struct CurveReport<'a> {
    dataset_hash: &'a str,
    method: Method,
    seeds: &'a [u64],
    points: &'a [CurvePoint],
}

fn label_curve_cmd(args: LabelCurveArgs, config: CliConfig) -> Result<()> {
    let train = train_config(&args.train, &config);
    let data = load(&args.data, &config, train.seed)?;
    let encoder = EncoderConfig::for_modalities(data.dataset.modalities())?;
    let curve = label_curve(&data.splits, &encoder, &train, &args.fractions, &args.seeds)?;
    if let Some(path) = &args.out {
        write_json(
            path,
            &CurveReport {
                dataset_hash: &data.hash,
                method: curve.method,
                seeds: &args.seeds,
                points: &curve.points,
            },
        )?;
    }
    write_metrics(args.train.metrics.as_deref(), &curve.metrics)?;
    println!("fraction,mean_macro_f1,std_macro_f1");
    for p in &curve.points {
        println!("{},{:.4},{:.4}", p.fraction, p.mean_macro_f1, p.std_macro_f1);
    }
    Ok(())
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    create_parent(path)?;
    let parse = |e: csv::Error| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(parse)?;
    for r in rows {
        w.serialize(r).map_err(parse)?;
    }
    w.flush().map_err(io_err(path))
}

fn batch_sweep_cmd(args: BatchSweepArgs, config: CliConfig) -> Result<()> {
    let train = train_config(&args.train, &config);
    let data = load(&args.data, &config, train.seed)?;
    let encoder = EncoderConfig::for_modalities(data.dataset.modalities())?;
    let grid = SweepGrid {
        methods: args.methods.clone(),
        batch_sizes: args.batches.clone(),
        seeds: args.seeds.clone(),
    };
    let rows = batch_sweep(&data.splits, &encoder, &grid, &train, args.jobs)?;
    if let Some(path) = &args.out {
        write_csv(path, &rows)?;
    }
    println!("method,batch_size,seed,macro_f1,similarity_evaluations");
    for r in &rows {
        println!(
            "{},{},{},{:.4},{}",
            r.method, r.batch_size, r.seed, r.macro_f1, r.similarity_evaluations
        );
    }
    Ok(())
}

fn bench(args: BenchArgs) -> Result<()> {
    let report = run_bench(&args.views, &args.batches, args.dim, args.repeats, args.seed)?;
    if let Some(path) = &args.out {
        report.write_csv(path)?;
    }
    println!("method,V,N,measured_count,formula_count,wall_seconds");
    for r in &report.rows {
        println!(
            "{},{},{},{},{},{:.3e}",
            r.method.name(),
            r.views,
            r.batch,
            r.measured_count,
            r.formula_count,
            r.wall_seconds
        );
    }
    Ok(())
}

fn export(args: ExportArgs, config: CliConfig) -> Result<()> {
    let seed = args.seed.unwrap_or(config.train.seed);
    let data = load(&args.data, &config, seed)?;
    let (encoder, _) = load_encoder(&args.encoder)?;
    let subset = match args.split {
        SplitName::All => &data.dataset,
        SplitName::Train => &data.splits.train,
        SplitName::Val => &data.splits.val,
        SplitName::Test => &data.splits.test,
    };
    let batch = subset.full_batch()?;
    let embeddings = encoder.encode_concat(&batch)?;
    create_parent(&args.out)?;
    export_embeddings(&embeddings, batch.labels.as_deref(), &args.out)?;
    println!(
        "wrote {} embeddings of width {} to {}",
        embeddings.rows(),
        embeddings.cols(),
        args.out.display()
    );
    Ok(())
}
