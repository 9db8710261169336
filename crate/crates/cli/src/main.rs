use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mmctr_core::config::RunConfig;
use mmctr_core::data::{
    generate_synthetic, load_checkpoint, load_embedding_table, load_interactions, save_checkpoint, save_interactions,
    write_embedding_table, Checkpoint, CheckpointMeta, SyntheticSpec,
};
use mmctr_core::fusion::{fuse_embeddings, Modality, Strategy, DEFAULT_K};
use mmctr_core::gradcheck::{run_suite, GRADCHECK_TOLERANCE};
use mmctr_core::model::ItemFeatures;
use mmctr_core::train::{evaluate, predict, train, write_history_csv};
use mmctr_core::{Error, Result};

pub const HISTORY_FILE: &str = "history.csv";

#[derive(Debug, Parser)]
#[command(name = "mmctr", version, about = "Multimodal CTR prediction pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Reduce and fuse text/image item embeddings into one table.
    Fuse {
        #[arg(long)]
        text: Option<PathBuf>,
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long, value_parser = parse_strategy)]
        strategy: Strategy,
        #[arg(long, default_value_t = DEFAULT_K)]
        k_text: usize,
        #[arg(long, default_value_t = DEFAULT_K)]
        k_image: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes a checkpoint and history.csv into --out.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print AUC and logloss of a checkpoint on labelled data.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
    },
    /// Write one click probability per input record.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every layer and the composed model.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Generate a synthetic dataset (text.tsv, image.tsv, train/val/test.jsonl).
    Synth {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_strategy(s: &str) -> std::result::Result<Strategy, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn write_stdout(lines: &[String]) -> Result<()> {
    let mut out = std::io::stdout().lock();
    for l in lines {
        writeln!(out, "{l}").map_err(|e| Error::io("writing stdout", e))?;
    }
    Ok(())
}

fn fuse(
    text: Option<&Path>,
    image: Option<&Path>,
    strategy: Strategy,
    k_text: usize,
    k_image: usize,
    out: &Path,
) -> Result<()> {
    let text = text
        .map(|p| load_embedding_table(p).map(|f| f.into_modality(Modality::Text)))
        .transpose()?;
    let image = image
        .map(|p| load_embedding_table(p).map(|f| f.into_modality(Modality::Image)))
        .transpose()?;
    let table = fuse_embeddings(text.as_ref(), image.as_ref(), strategy, k_text, k_image)?;
    write_embedding_table(out, &table.item_ids, &table.vectors, table.strategy)?;
    log::info!(
        "wrote {} items x {} to {}",
        table.item_ids.len(),
        table.width(),
        out.display()
    );
    Ok(())
}

fn run_train(config: Option<&Path>, train_path: &Path, val_path: &Path, embeddings: &Path, out: &Path) -> Result<()> {
    let cfg = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let table = load_embedding_table(embeddings)?.into_item_table();
    let features = ItemFeatures::from_table(&table)?;
    let train_set = features.encode_all(&load_interactions(train_path)?, &cfg.model)?;
    let val_set = features.encode_all(&load_interactions(val_path)?, &cfg.model)?;
    let outcome = train(&train_set, &val_set, &features, &cfg.model, &cfg.train)?;

    let meta = CheckpointMeta {
        seed: cfg.train.seed,
        strategy: features.strategy(),
        items: features.item_ids().to_vec(),
    };
    save_checkpoint(out, &outcome.params, &cfg.model, &meta)?;
    let history_path = out.join(HISTORY_FILE);
    let file = std::fs::File::create(&history_path)
        .map_err(|e| Error::io(format!("creating {}", history_path.display()), e))?;
    write_history_csv(&outcome.history, std::io::BufWriter::new(file))
        .map_err(|e| Error::io(format!("writing {}", history_path.display()), e))?;
    write_stdout(&[
        format!("best_epoch\t{}", outcome.best_epoch),
        format!("val_auc\t{}", outcome.best_auc()),
    ])
}

/// Checkpoint plus the fused table re-indexed into the checkpoint's vocabulary.
fn load_scoring_inputs(checkpoint: &Path, embeddings: &Path) -> Result<(Checkpoint, ItemFeatures)> {
    let ckpt = load_checkpoint(checkpoint)?;
    let table = load_embedding_table(embeddings)?.into_item_table();
    let features = ItemFeatures::aligned(&ckpt.manifest.items, &table)?;
    if features.fused_width() != ckpt.manifest.fused_width {
        return Err(Error::Config(format!(
            "embeddings have width {}, checkpoint expects {}",
            features.fused_width(),
            ckpt.manifest.fused_width
        )));
    }
    if let (Some(a), Some(b)) = (table.strategy, ckpt.manifest.strategy) {
        if a != b {
            log::warn!("embeddings tagged {a} but checkpoint was trained on {b}");
        }
    }
    Ok((ckpt, features))
}

fn run_eval(checkpoint: &Path, data: &Path, embeddings: &Path) -> Result<()> {
    let (ckpt, features) = load_scoring_inputs(checkpoint, embeddings)?;
    let records = features.encode_all(&load_interactions(data)?, ckpt.hyperparams())?;
    let (auc, logloss) = evaluate(&records, &ckpt.params, features.fused(), ckpt.hyperparams())?;
    write_stdout(&[format!("auc\t{auc}"), format!("logloss\t{logloss}")])
}

fn run_predict(checkpoint: &Path, data: &Path, embeddings: &Path, out: &Path) -> Result<()> {
    let (ckpt, features) = load_scoring_inputs(checkpoint, embeddings)?;
    let records = features.encode_all(&load_interactions(data)?, ckpt.hyperparams())?;
    let scores = predict(&records, &ckpt.params, features.fused(), ckpt.hyperparams())?;
    let text: String = scores.iter().map(|s| format!("{s}\n")).collect();
    std::fs::write(out, text).map_err(|e| Error::io(format!("writing {}", out.display()), e))
}

fn run_gradcheck(seed: u64) -> Result<()> {
    let report = run_suite(seed)?;
    for (name, r) in &report.checks {
        log::info!(
            "{name}: max rel error {:e} at {} over {} elements",
            r.max_rel_error,
            r.worst,
            r.elements
        );
    }
    write_stdout(&[format!("max_rel_error\t{:e}", report.max_rel_error())])?;
    if report.passed() {
        return Ok(());
    }
    let (name, worst) = report
        .checks
        .iter()
        .max_by(|a, b| a.1.max_rel_error.total_cmp(&b.1.max_rel_error))
        .expect("suite has checks");
    Err(Error::GradCheck {
        max_rel_error: worst.max_rel_error,
        location: format!("{name}/{} (tolerance {GRADCHECK_TOLERANCE:e})", worst.worst),
    })
}

fn run_synth(spec: Option<&Path>, out: &Path, seed: u64) -> Result<()> {
    let spec: SyntheticSpec = match spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(format!("reading {}", p.display()), e))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => SyntheticSpec::default(),
    };
    let data = generate_synthetic(&spec, seed)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(format!("creating {}", out.display()), e))?;
    write_embedding_table(out.join("text.tsv"), &data.text.item_ids, &data.text.vectors, None)?;
    write_embedding_table(out.join("image.tsv"), &data.image.item_ids, &data.image.vectors, None)?;
    save_interactions(out.join("train.jsonl"), &data.train)?;
    save_interactions(out.join("val.jsonl"), &data.val)?;
    save_interactions(out.join("test.jsonl"), &data.test)?;
    log::info!(
        "wrote {} items, {}/{}/{} records to {}",
        spec.n_items,
        data.train.len(),
        data.val.len(),
        data.test.len(),
        out.display()
    );
    Ok(())
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Fuse {
            text,
            image,
            strategy,
            k_text,
            k_image,
            out,
        } => fuse(text.as_deref(), image.as_deref(), strategy, k_text, k_image, &out),
        Command::Train {
            config,
            train,
            val,
            embeddings,
            out,
        } => run_train(config.as_deref(), &train, &val, &embeddings, &out),
        Command::Eval {
            checkpoint,
            data,
            embeddings,
        } => run_eval(&checkpoint, &data, &embeddings),
        Command::Predict {
            checkpoint,
            data,
            embeddings,
            out,
        } => run_predict(&checkpoint, &data, &embeddings, &out),
        Command::Gradcheck { seed } => run_gradcheck(seed),
        Command::Synth { spec, out, seed } => run_synth(spec.as_deref(), &out, seed),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 2 } else { 1 })
        }
    }
}
