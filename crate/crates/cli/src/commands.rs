//! Subcommand bodies.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use intercnn::data::{
    generate_synthetic_dataset, load_dataset, preprocess_dataset, Dataset, DatasetManifest, Split,
};
use intercnn::inference::{evaluate, export_activations, percentile, EvalOptions, Latency, LabelSpace};
use intercnn::models::{build_model, Model, WindowBatch};
use intercnn::nn::BlockKind;
use intercnn::tensor::ops::Mode;
use intercnn::training::fit;
use serde::Serialize;

use crate::config::RunConfig;

pub fn parse_split(s: &str) -> Result<Split> {
    Ok(match s {
        "train" => Split::Train,
        "validation" => Split::Validation,
        "test" => Split::Test,
        _ => bail!("unknown split `{s}` (train|validation|test)"),
    })
}

fn write_json(dir: Option<&Path>, file: &str, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    println!("{text}");
    if let Some(d) = dir {
        fs::create_dir_all(d)?;
        fs::write(d.join(file), text + "\n")?;
    }
    Ok(())
}

pub fn synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    let m = generate_synthetic_dataset(&cfg.synth, out)?;
    eprintln!("wrote {} clips to {}", m.clips.len(), out.display());
    Ok(())
}

pub fn preprocess(cfg: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    let manifest = DatasetManifest::load(data).with_context(|| format!("loading manifest in {}", data.display()))?;
    manifest.validate_files(data)?;
    let index = preprocess_dataset(&manifest, data, &cfg.preprocess_for(manifest.source_dims), out)?;
    eprintln!("preprocessed {} clips into {}", index.len(), out.display());
    Ok(())
}

fn dataset(cfg: &RunConfig, data: &Path, split: Split, stride: usize, classes: usize) -> Result<Dataset> {
    let clips = load_dataset(data, split).with_context(|| format!("loading {} split from {}", split.name(), data.display()))?;
    if clips.is_empty() {
        bail!("no {} clips in {}", split.name(), data.display());
    }
    Ok(Dataset::new(clips, cfg.windows.length, stride)?.with_classes(classes)?)
}

pub fn train(cfg: &RunConfig, data: &Path, init: Option<&Path>, out: &Path) -> Result<()> {
    let mut model = match init {
        Some(dir) => Model::<f32>::load_matching(dir, &cfg.model)?,
        None => build_model::<f32>(&cfg.model, cfg.seed)?,
    };
    let k = cfg.model.classes;
    let train = dataset(cfg, data, Split::Train, cfg.windows.train_stride, k)?;
    let val = dataset(cfg, data, Split::Validation, cfg.windows.train_stride, k)?;
    fs::create_dir_all(out)?;
    let mut history = BufWriter::new(File::create(out.join("history.txt"))?);
    writeln!(history, "step, split, loss, accuracy")?;
    eprintln!(
        "training {} ({} params) on {} windows, validating on {}",
        model.config.model.name(),
        model.param_count(),
        train.len(),
        val.len()
    );
    let report = fit(&mut model, &train, &val, &cfg.train, Some(out), Some(&mut history))?;
    history.flush()?;
    eprintln!(
        "{} epochs, best validation loss {:.4} at step {}",
        report.epochs, report.early_stop.best_loss, report.early_stop.best_step
    );
    Ok(())
}

pub fn eval(cfg: &RunConfig, data: &Path, checkpoint: &Path, split: Split, opts: &EvalOptions, out: Option<&Path>) -> Result<()> {
    let model = Model::<f32>::load(checkpoint)?;
    if model.config.classes == 5 && opts.labels == LabelSpace::Full9 {
        bail!("checkpoint predicts 5 classes; use --labels agg5");
    }
    let ds = dataset(cfg, data, split, cfg.windows.eval_stride, model.config.classes)?;
    let (report, _) = evaluate(&model, &ds, opts)?;
    write_json(out, "eval.json", &report)
}

#[derive(Serialize)]
struct BenchRow {
    model: String,
    block: String,
    params: usize,
    flops: u64,
    latency_ms: Latency,
}

pub fn bench(cfg: &RunConfig, blocks: &[BlockKind], iters: usize, out: Option<&Path>) -> Result<()> {
    let mut rows = Vec::new();
    for block in blocks {
        let mc = intercnn::models::ModelConfig {
            block: block.clone(),
            ..cfg.model.clone()
        };
        let model = build_model::<f32>(&mc, cfg.seed)?;
        let batch = WindowBatch::<f32>::zeros(&mc, 1)?;
        for _ in 0..10 {
            model.logits(&batch, Mode::Eval)?;
        }
        let samples: Vec<f64> = (0..iters)
            .map(|_| {
                let t = Instant::now();
                model.logits(&batch, Mode::Eval).map(|_| t.elapsed().as_secs_f64() * 1e3)
            })
            .collect::<Result<_, _>>()?;
        rows.push(BenchRow {
            model: mc.model.name().into(),
            block: block.name().into(),
            params: model.param_count(),
            flops: model.flop_count(),
            latency_ms: Latency {
                p50: percentile(&samples, 50.0),
                p95: percentile(&samples, 95.0),
                mean: samples.iter().sum::<f64>() / samples.len() as f64,
            },
        });
    }
    write_json(out, "bench.json", &rows)
}

pub fn export_acts(
    cfg: &RunConfig,
    data: &Path,
    checkpoint: &Path,
    split: Split,
    window: usize,
    tags: &[String],
    out: Option<&Path>,
) -> Result<()> {
    let model = Model::<f32>::load(checkpoint)?;
    if tags.is_empty() {
        for t in model.tags() {
            println!("{t}");
        }
        return Ok(());
    }
    let Some(out) = out else {
        bail!("--out is required when --tags is given");
    };
    let ds = dataset(cfg, data, split, cfg.windows.eval_stride, model.config.classes)?;
    if window >= ds.len() {
        bail!("window {window} out of range: split has {} windows", ds.len());
    }
    let acts = export_activations(&model, &ds.sample(window)?, tags, out)?;
    for (name, t) in &acts {
        println!("{name} {:?}", t.shape());
    }
    Ok(())
}
