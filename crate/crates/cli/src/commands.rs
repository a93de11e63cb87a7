use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::Serialize;
use serde_json::json;

use vgembed::corpus::{
    build_vocab_with, load_embeddings, load_image_features, load_similarity_dataset,
    load_sts_dataset, read_captions, resolve_captions, CaptionRecord, EmbeddingTable,
    ImageFeatureStore,
};
use vgembed::eval::{
    concat_sensitivity, eval_intrinsic as intrinsic_report, eval_sts as sts_report,
    nearest_neighbors, EvalReport,
};
use vgembed::grounding::{export_embeddings, ground_vocabulary, RowSource};
use vgembed::model::{
    load_checkpoint, probe_gradients, save_checkpoint, train as fit, GradientProbe, TrainConfig,
    TrainData,
};
use vgembed::numerics::Stencil;

use crate::config::{absolute, existing, pick, FileConfig, Format};
use crate::exit::CliError;
use crate::{Global, GradcheckArgs, GroundArgs, IntrinsicArgs, NeighborArgs, StsArgs, TrainArgs};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOG_FILE: &str = "train_log.jsonl";
pub const RESOLVED_FILE: &str = "resolved_config.json";
const DEFAULT_VOCAB: usize = 10_000;

fn format(g: &Global, f: &FileConfig) -> Format {
    pick(g.format, &f.format).unwrap_or_default()
}

fn out_dir(g: &Global, f: &FileConfig) -> PathBuf {
    pick(g.out_dir.clone(), &f.out_dir).unwrap_or_else(|| PathBuf::from("."))
}

fn print_json(v: &impl Serialize) -> Result<(), CliError> {
    let s = serde_json::to_string_pretty(v).map_err(|e| CliError::data(e.to_string()))?;
    println!("{s}");
    Ok(())
}

fn write_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::data(format!("cannot write {}: {e}", path.display()))
}

/// What `train` records next to the checkpoint. Its keys are valid config
/// keys, so the file can be fed back with `--config` to repeat the run.
#[derive(Serialize)]
struct ResolvedTrain<'a> {
    embeddings: PathBuf,
    embed_limit: Option<usize>,
    train_captions: PathBuf,
    val_captions: Option<PathBuf>,
    features: PathBuf,
    out_dir: PathBuf,
    vocab_size: usize,
    #[serde(flatten)]
    train: &'a TrainConfig,
}

fn train_config(g: &Global, a: &TrainArgs, f: &FileConfig) -> Result<TrainConfig, CliError> {
    let d = TrainConfig::default();
    let loss_mask = match (&a.loss_mask, &f.loss_mask) {
        (Some(s), _) => s.parse()?,
        (None, Some(m)) => m.resolve()?,
        (None, None) => d.loss_mask,
    };
    let cfg = TrainConfig {
        grounded_dim: pick(a.grounded_dim, &f.grounded_dim).unwrap_or(d.grounded_dim),
        projector_dim: pick(a.projector_dim, &f.projector_dim).or(d.projector_dim),
        batch_size: pick(a.batch_size, &f.batch_size).unwrap_or(d.batch_size),
        lr: pick(a.lr, &f.lr).unwrap_or(d.lr),
        epochs: pick(a.epochs, &f.epochs).unwrap_or(d.epochs),
        patience: pick(a.patience, &f.patience).unwrap_or(d.patience),
        alpha: pick(a.alpha, &f.alpha).unwrap_or(d.alpha),
        beta: pick(a.beta, &f.beta).unwrap_or(d.beta),
        seed: pick(g.seed, &f.seed).unwrap_or(d.seed),
        freeze_embeddings: pick(a.freeze_embeddings, &f.freeze_embeddings)
            .unwrap_or(d.freeze_embeddings),
        loss_mask,
        reg_enabled: pick(a.reg_enabled, &f.reg_enabled).unwrap_or(d.reg_enabled),
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Keep captions whose image has features.
fn with_features(
    records: Vec<CaptionRecord>,
    store: &ImageFeatureStore,
    what: &str,
) -> Vec<CaptionRecord> {
    let n = records.len();
    let kept: Vec<_> = records
        .into_iter()
        .filter(|r| store.get(&r.image_id).is_some())
        .collect();
    if kept.len() < n {
        warn!(
            "{what}: dropped {} captions whose image has no features",
            n - kept.len()
        );
    }
    kept
}

pub fn train(g: &Global, a: &TrainArgs, f: &FileConfig) -> Result<(), CliError> {
    let embeddings = existing(pick(a.embeddings.clone(), &f.embeddings), "embeddings")?;
    let train_captions = existing(
        pick(a.train_captions.clone(), &f.train_captions),
        "train_captions",
    )?;
    let features = existing(pick(a.features.clone(), &f.features), "features")?;
    let val_captions = match pick(a.val_captions.clone(), &f.val_captions) {
        Some(p) => Some(existing(Some(p), "val_captions")?),
        None => None,
    };
    let embed_limit = pick(a.embed_limit, &f.embed_limit);
    let vocab_size = pick(a.vocab_size, &f.vocab_size).unwrap_or(DEFAULT_VOCAB);
    let cfg = train_config(g, a, f)?;
    let out = out_dir(g, f);
    fs::create_dir_all(&out)
        .map_err(|e| CliError::config(format!("cannot create {}: {e}", out.display())))?;

    let resolved = ResolvedTrain {
        embeddings: absolute(&embeddings),
        embed_limit,
        train_captions: absolute(&train_captions),
        val_captions: val_captions.as_deref().map(absolute),
        features: absolute(&features),
        out_dir: absolute(&out),
        vocab_size,
        train: &cfg,
    };
    let resolved_path = out.join(RESOLVED_FILE);
    let text =
        serde_json::to_string_pretty(&resolved).map_err(|e| CliError::config(e.to_string()))?;
    fs::write(&resolved_path, text + "\n")
        .map_err(|e| CliError::config(format!("output directory is not writable: {e}")))?;

    let table = load_embeddings(&embeddings, embed_limit)?;
    let store = load_image_features(&features)?;
    let raw_train = read_captions(&train_captions)?;
    let raw_val = match &val_captions {
        Some(p) => read_captions(p)?,
        None => Vec::new(),
    };
    let tokens: Vec<Vec<String>> = raw_train.iter().map(|c| c.tokens.clone()).collect();
    let vocab = build_vocab_with(&tokens, vocab_size, |w| table.get(w).is_some())?;
    let rows = table.select(&vocab)?;
    let train_recs = with_features(resolve_captions(&raw_train, &vocab), &store, "train");
    let val_recs = with_features(resolve_captions(&raw_val, &vocab), &store, "val");
    if train_recs.is_empty() {
        return Err(CliError::data(
            "no training caption survives vocabulary and feature filtering",
        ));
    }
    info!(
        "vocabulary {} words (d={}), {} train / {} val captions, {} images (p={})",
        vocab.len(),
        rows.dim(),
        train_recs.len(),
        val_recs.len(),
        store.len(),
        store.dim()
    );

    let outcome = fit(
        &cfg,
        &TrainData {
            embeddings: &rows,
            train: &train_recs,
            val: &val_recs,
            features: &store,
        },
    )?;

    let log_path = out.join(LOG_FILE);
    let mut w = BufWriter::new(File::create(&log_path).map_err(|e| write_error(&log_path, e))?);
    for e in &outcome.log {
        let line = serde_json::to_string(e).map_err(|e| CliError::data(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| write_error(&log_path, e))?;
    }
    w.flush().map_err(|e| write_error(&log_path, e))?;
    let ckpt = out.join(CHECKPOINT_FILE);
    save_checkpoint(&outcome.model, Some(&cfg), &ckpt)?;

    match format(g, f) {
        Format::Json => print_json(&json!({
            "checkpoint": ckpt,
            "log": log_path,
            "resolved_config": resolved_path,
            "epochs": outcome.log.len(),
            "best_epoch": outcome.best_epoch,
            "stopped_early": outcome.stopped_early,
            "diverged": outcome.diverged,
            "vocab": vocab.len(),
        }))?,
        Format::Table => {
            let cell = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
            println!(
                "{:>5} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}",
                "epoch", "L_FW", "L_BW", "L_B", "R", "total", "val"
            );
            for e in &outcome.log {
                println!(
                    "{:>5} {:>9} {:>9} {:>9} {:>9} {:>9.4} {:>9.4}{}",
                    e.epoch,
                    cell(e.fw),
                    cell(e.bw),
                    cell(e.bin),
                    cell(e.reg),
                    e.total,
                    e.val_total,
                    if e.improved { " *" } else { "" }
                );
            }
            println!("best epoch {} -> {}", outcome.best_epoch, ckpt.display());
        }
    }
    match outcome.diverged {
        Some(msg) => Err(CliError::numerical(format!("training diverged: {msg}"))),
        None => Ok(()),
    }
}

pub fn ground(g: &Global, a: &GroundArgs, f: &FileConfig) -> Result<(), CliError> {
    let checkpoint = existing(pick(a.checkpoint.clone(), &f.checkpoint), "checkpoint")?;
    let embeddings = existing(pick(a.embeddings.clone(), &f.embeddings), "embeddings")?;
    let output =
        pick(a.output.clone(), &f.output).unwrap_or_else(|| out_dir(g, f).join("grounded.txt"));
    let rows = if pick(a.fine_tuned_rows, &f.fine_tuned_rows).unwrap_or(false) {
        RowSource::FineTuned
    } else {
        RowSource::Original
    };
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::config(format!("cannot create {}: {e}", dir.display())))?;
    }
    let (model, _) = load_checkpoint(&checkpoint)?;
    let source = load_embeddings(&embeddings, pick(a.embed_limit, &f.embed_limit))?;
    let grounded = ground_vocabulary(&source, &model, rows)?;
    export_embeddings(&grounded, &output)?;
    match format(g, f) {
        Format::Json => print_json(&json!({
            "words": grounded.len(),
            "dim": grounded.dim(),
            "output": output,
        })),
        Format::Table => {
            println!(
                "grounded {} words ({} -> {} dims) -> {}",
                grounded.len(),
                source.dim(),
                grounded.dim(),
                output.display()
            );
            Ok(())
        }
    }
}

fn datasets(given: &[PathBuf], f: &FileConfig) -> Result<Vec<PathBuf>, CliError> {
    let list = if given.is_empty() {
        f.datasets.clone().unwrap_or_default()
    } else {
        given.to_vec()
    };
    if list.is_empty() {
        return Err(CliError::config("no dataset files given"));
    }
    list.into_iter()
        .map(|p| existing(Some(p), "datasets"))
        .collect()
}

fn dataset_name(p: &Path) -> String {
    p.file_stem().map_or_else(
        || p.display().to_string(),
        |s| s.to_string_lossy().into_owned(),
    )
}

fn load_table(path: Option<PathBuf>, limit: Option<usize>) -> Result<EmbeddingTable, CliError> {
    let p = existing(path, "embeddings")?;
    Ok(load_embeddings(p, limit)?)
}

fn report(g: &Global, f: &FileConfig, reports: &[EvalReport]) -> Result<(), CliError> {
    let mean = reports.iter().map(|r| r.score).sum::<f64>() / reports.len() as f64;
    match format(g, f) {
        Format::Json => print_json(&json!({ "reports": reports, "mean": mean })),
        Format::Table => {
            for r in reports {
                print!("{r}");
            }
            if reports.len() > 1 {
                println!("{:<24} {:>7.1}", "mean", mean);
            }
            Ok(())
        }
    }
}

pub fn eval_intrinsic(g: &Global, a: &IntrinsicArgs, f: &FileConfig) -> Result<(), CliError> {
    let files = datasets(&a.datasets, f)?;
    let categories = pick(a.categories, &f.categories).unwrap_or(false);
    let limit = pick(a.embed_limit, &f.embed_limit);
    let mut reports = Vec::with_capacity(files.len());
    if let Some(parts) = &a.concat {
        let alpha: f64 = parts[2].parse().map_err(|_| {
            CliError::config(format!(
                "--concat alpha must be a number, got {:?}",
                parts[2]
            ))
        })?;
        let gt = load_table(Some(PathBuf::from(&parts[0])), limit)?;
        let vt = load_table(Some(PathBuf::from(&parts[1])), limit)?;
        for p in &files {
            let pairs = load_similarity_dataset(p)?;
            reports.push(concat_sensitivity(
                &gt,
                &vt,
                alpha,
                &dataset_name(p),
                &pairs,
            )?);
        }
    } else {
        let table = load_table(pick(a.embeddings.clone(), &f.embeddings), limit)?;
        for p in &files {
            let pairs = load_similarity_dataset(p)?;
            reports.push(intrinsic_report(
                &table,
                &dataset_name(p),
                &pairs,
                categories,
            )?);
        }
    }
    report(g, f, &reports)
}

pub fn eval_sts(g: &Global, a: &StsArgs, f: &FileConfig) -> Result<(), CliError> {
    let files = datasets(&a.datasets, f)?;
    let table = load_table(
        pick(a.embeddings.clone(), &f.embeddings),
        pick(a.embed_limit, &f.embed_limit),
    )?;
    let mut reports = Vec::with_capacity(files.len());
    for p in &files {
        let pairs = load_sts_dataset(p)?;
        reports.push(sts_report(&table, &dataset_name(p), &pairs)?);
    }
    report(g, f, &reports)
}

pub fn neighbors(g: &Global, a: &NeighborArgs, f: &FileConfig) -> Result<(), CliError> {
    let table = load_table(
        pick(a.embeddings.clone(), &f.embeddings),
        pick(a.embed_limit, &f.embed_limit),
    )?;
    let k = pick(a.k, &f.k).unwrap_or(10);
    if k == 0 {
        return Err(CliError::config("k must be at least 1"));
    }
    let mut all = Vec::with_capacity(a.words.len());
    for w in &a.words {
        all.push((w.clone(), nearest_neighbors(&table, w, k)?));
    }
    match format(g, f) {
        Format::Json => {
            let v: Vec<_> = all
                .iter()
                .map(|(w, ns)| {
                    json!({
                        "word": w,
                        "neighbors": ns.iter().map(|(n, c)| json!({"word": n, "cosine": c})).collect::<Vec<_>>(),
                    })
                })
                .collect();
            print_json(&v)
        }
        Format::Table => {
            for (w, ns) in &all {
                let list: Vec<String> = ns.iter().map(|(n, c)| format!("{n} ({c:.3})")).collect();
                println!("{w}: {}", list.join(", "));
            }
            Ok(())
        }
    }
}

pub fn gradcheck(g: &Global, a: &GradcheckArgs, f: &FileConfig) -> Result<(), CliError> {
    let threshold = pick(a.threshold, &f.threshold).unwrap_or(1e-6);
    let step = pick(a.step, &f.step).unwrap_or(0.01);
    if !(threshold > 0.0 && step > 0.0) {
        return Err(CliError::config("threshold and step must be positive"));
    }
    let loss_mask = match (&a.loss_mask, &f.loss_mask) {
        (Some(s), _) => s.parse()?,
        (None, Some(m)) => m.resolve()?,
        (None, None) => Default::default(),
    };
    let c = pick(a.grounded_dim, &f.grounded_dim).unwrap_or(7);
    let cfg = TrainConfig {
        grounded_dim: c,
        projector_dim: pick(a.projector_dim, &f.projector_dim),
        batch_size: pick(a.batch_size, &f.batch_size).unwrap_or(3),
        alpha: pick(a.alpha, &f.alpha).unwrap_or(0.5),
        beta: pick(a.beta, &f.beta).unwrap_or(1.0),
        loss_mask,
        ..Default::default()
    };
    let probe = GradientProbe {
        vocab: pick(a.vocab_size, &f.vocab_size).unwrap_or(12),
        embed_dim: pick(a.embed_dim, &f.embed_dim).unwrap_or(5),
        feature_dim: pick(a.feature_dim, &f.feature_dim).unwrap_or(6),
        captions: cfg.batch_size,
        seed: pick(g.seed, &f.seed).unwrap_or(21),
        stencil: Stencil::Extrapolated { initial_step: step },
        corrupt: pick(a.corrupt_grad, &f.corrupt_grad).unwrap_or(false),
        ..Default::default()
    };
    let rep = probe_gradients(&cfg, &probe)?;
    let max = rep.max_rel_error();
    let pass = max < threshold;
    match format(g, f) {
        Format::Json => print_json(&json!({
            "max_rel_error": max,
            "threshold": threshold,
            "pass": pass,
            "tensors": rep.tensors.iter().map(|t| json!({
                "name": t.name,
                "max_rel_error": t.max_rel_error,
                "index": t.worst_index,
                "analytic": t.analytic,
                "numeric": t.numeric,
            })).collect::<Vec<_>>(),
        }))?,
        Format::Table => {
            println!(
                "{:<16} {:>10} {:>14} {:>14}",
                "tensor", "rel err", "analytic", "numeric"
            );
            for t in &rep.tensors {
                println!(
                    "{:<16} {:>10.2e} {:>14.6e} {:>14.6e}",
                    t.name, t.max_rel_error, t.analytic, t.numeric
                );
            }
            println!(
                "max rel err {max:.3e} (threshold {threshold:.1e}): {}",
                if pass { "PASS" } else { "FAIL" }
            );
        }
    }
    if pass {
        Ok(())
    } else {
        let worst = rep.worst().map_or("", |t| t.name.as_str());
        Err(CliError::numerical(format!(
            "gradient check failed: max relative error {max:.3e} at {worst} reaches threshold {threshold:.1e}"
        )))
    }
}
