use std::path::PathBuf;

use clap::Args;
use ghostlite::checkpoint::Checkpoint;
use ghostlite::data::{split, Lesion, Partition};
use ghostlite::metrics::{render_report, ReportFormat};
use ghostlite::train::evaluate;

use crate::failure::{Context, Failure, Outcome};
use crate::{output, svg};

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory holding the images (and `metadata.csv` unless --metadata is given).
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long)]
    metadata: Option<PathBuf>,
    /// train, val, test, or all. Named splits are recomputed from the
    /// checkpoint's training seed, so the dataset must be the one trained on.
    #[arg(long, default_value = "test")]
    split: String,
    /// text, csv or json.
    #[arg(long, default_value = "text")]
    format: ReportFormat,
    /// Report destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Confusion matrix counts as CSV.
    #[arg(long)]
    confusion: Option<PathBuf>,
    /// Confusion-matrix heatmap as SVG.
    #[arg(long)]
    svg: Option<PathBuf>,
}

pub fn run(args: EvalArgs) -> Outcome {
    let part = match args.split.as_str() {
        "all" => None,
        s => Some(Partition::parse(s).ok_or_else(|| Failure::config(format!("unknown split {s:?}")))?),
    };
    let checkpoint = Checkpoint::load(&args.checkpoint)
        .or_data(format!("cannot load checkpoint {}", args.checkpoint.display()))?;
    if checkpoint.spec.num_classes != Lesion::COUNT || checkpoint.class_names != Lesion::names() {
        return Err(Failure::data(format!(
            "checkpoint predicts {} classes ({}) but the metadata uses the {}-class scheme ({})",
            checkpoint.spec.num_classes,
            checkpoint.class_names.join(", "),
            Lesion::COUNT,
            Lesion::names().join(", ")
        )));
    }

    let metadata = output::metadata_path(&args.data_dir, args.metadata);
    let loaded = output::load(&args.data_dir, &metadata)?;
    // partial data would silently skew every metric
    if let Some(r) = loaded.rejected.first() {
        return Err(Failure::data(format!(
            "{} metadata rows unusable, first at row {} ({}): {}",
            loaded.rejected.len(),
            r.row,
            r.image_id,
            r.reason
        )));
    }
    let records: Vec<_> = match part {
        None => loaded.records.iter().collect(),
        Some(part) => {
            let config = checkpoint.config.as_ref().ok_or_else(|| {
                Failure::config("checkpoint carries no training config; only --split all is available")
            })?;
            let labels: Vec<usize> = loaded.records.iter().map(|r| r.label.index()).collect();
            let assignment = split(&labels, config.seed, config.split_ratios, config.flags.stratified_split)?;
            assignment.indices(part).into_iter().map(|i| &loaded.records[i]).collect()
        }
    };
    if records.is_empty() {
        return Err(Failure::data(format!("split {} is empty", args.split)));
    }
    log::info!("evaluating {} images ({} split)", records.len(), args.split);
    let evaluation = evaluate(&checkpoint, &records)?;

    let text = render_report(&evaluation.report, args.format);
    match &args.out {
        Some(path) => output::write(path, &text)?,
        None => print!("{text}"),
    }
    if let Some(path) = &args.confusion {
        let csv = svg::confusion_csv(&evaluation.confusion).or_data("cannot render confusion matrix")?;
        output::write(path, csv)?;
    }
    if let Some(path) = &args.svg {
        output::write(path, svg::confusion_heatmap(&evaluation.confusion))?;
    }
    Ok(())
}
