use std::path::PathBuf;

use clap::Args;
use ghostlite::data::Rejection;
use ghostlite::train::{train, History, Monitor};
use serde::Serialize;

use crate::config::{self, Overrides, RunConfig, SEED_ENV};
use crate::failure::Outcome;
use crate::output;

pub const CHECKPOINT_FILE: &str = "checkpoint.glnw";
pub const HISTORY_FILE: &str = "history.json";
pub const SPLIT_FILE: &str = "split.csv";

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Directory holding the images (and `metadata.csv` unless --metadata is given).
    #[arg(long)]
    data_dir: PathBuf,
    /// Metadata CSV with image_id, dx and dx_type columns.
    #[arg(long)]
    metadata: Option<PathBuf>,
    /// Model spec JSON file, or a preset name: desk, full.
    #[arg(long, value_name = "PATH|desk|full")]
    model_config: Option<String>,
    /// Training config JSON; any field may be omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for checkpoint, history and split.
    #[arg(long, default_value = "ghostlite-run")]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    /// Seed for split, initialization, SMOTE and shuffling [default: $GHOSTLITE_SEED, else 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Input resolution; overrides the model config.
    #[arg(long)]
    image_size: Option<usize>,
    #[arg(long, overrides_with = "no_smote")]
    smote: bool,
    #[arg(long)]
    no_smote: bool,
    #[arg(long, overrides_with = "no_class_weighting")]
    class_weighting: bool,
    #[arg(long)]
    no_class_weighting: bool,
    #[arg(long, overrides_with = "no_instance_weighting")]
    instance_weighting: bool,
    #[arg(long)]
    no_instance_weighting: bool,
    #[arg(long, overrides_with = "no_augment")]
    augment: bool,
    #[arg(long)]
    no_augment: bool,
    /// Class-stratified train/val/test split.
    #[arg(long)]
    stratified: bool,
    /// Epochs without improvement before stopping; 0 disables early stopping.
    #[arg(long)]
    patience: Option<usize>,
    /// val_loss or val_macro_f1.
    #[arg(long)]
    monitor: Option<Monitor>,
}

fn pair(on: bool, off: bool) -> Option<bool> {
    match (on, off) {
        (true, _) => Some(true),
        (_, true) => Some(false),
        _ => None,
    }
}

impl TrainArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            momentum: self.momentum,
            seed: self.seed,
            patience: self.patience,
            monitor: self.monitor,
            class_weighting: pair(self.class_weighting, self.no_class_weighting),
            instance_weighting: pair(self.instance_weighting, self.no_instance_weighting),
            smote: pair(self.smote, self.no_smote),
            stratified: self.stratified.then_some(true),
            augment: pair(self.augment, self.no_augment),
            image_size: self.image_size,
        }
    }
}

/// Contents of the history file: the resolved run configuration and the
/// per-epoch record. Paths are left out so equal runs give equal bytes.
#[derive(Serialize)]
struct HistoryFile<'a> {
    run: &'a RunConfig,
    rejected_rows: &'a [RejectedRow],
    history: &'a History,
}

#[derive(Serialize)]
struct RejectedRow {
    row: usize,
    image_id: String,
    reason: String,
}

impl From<&Rejection> for RejectedRow {
    fn from(r: &Rejection) -> Self {
        RejectedRow { row: r.row, image_id: r.image_id.clone(), reason: r.reason.clone() }
    }
}

pub fn run(args: TrainArgs) -> Outcome {
    let env_seed = config::env_seed(std::env::var(SEED_ENV).ok().as_deref())?;
    let rc = config::resolve(args.config.as_deref(), args.model_config.as_deref(), &args.overrides(), env_seed)?;
    log::info!(
        "seed {} ({:?}), {} epochs, batch {}, lr {}",
        rc.train.seed,
        rc.source("seed").expect("seed has provenance"),
        rc.train.epochs,
        rc.train.batch_size,
        rc.train.lr
    );

    let metadata = output::metadata_path(&args.data_dir, args.metadata);
    let loaded = output::load(&args.data_dir, &metadata)?;
    let outcome = train(&rc.model, &loaded.records, &rc.train)?;

    let history = &outcome.checkpoint.history;
    let rejected: Vec<RejectedRow> = loaded.rejected.iter().map(RejectedRow::from).collect();
    let file = HistoryFile { run: &rc, rejected_rows: &rejected, history };
    let mut json = serde_json::to_string_pretty(&file).expect("history serializes");
    json.push('\n');

    let mut split = String::from("image_id,partition\n");
    for (record, part) in loaded.records.iter().zip(&outcome.split.assignment) {
        split.push_str(&format!("{},{}\n", record.image_id, part.name()));
    }

    let checkpoint_path = args.out.join(CHECKPOINT_FILE);
    output::write(&args.out.join(HISTORY_FILE), json)?;
    output::write(&args.out.join(SPLIT_FILE), split)?;
    std::fs::create_dir_all(&args.out)?;
    outcome.checkpoint.save(&checkpoint_path)?;

    let best = history.epochs.iter().find(|e| e.epoch == history.best_epoch);
    match best {
        Some(e) => println!(
            "best epoch {} of {}: val loss {:.4}, val accuracy {:.4}, val macro-F1 {:.4}",
            e.epoch,
            history.epochs.len(),
            e.val_loss,
            e.val_accuracy,
            e.val_macro_f1
        ),
        None => println!("trained {} epochs", history.epochs.len()),
    }
    println!("wrote {}", checkpoint_path.display());
    Ok(())
}
