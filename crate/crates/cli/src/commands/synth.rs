use std::path::PathBuf;

use clap::Args;
use ghostlite::data::synthetic::{
    synthetic_dataset_with_counts, SMOKE_COUNTS, SMOKE_IMAGE_SIZE, SYNTHETIC_COUNTS, SYNTHETIC_IMAGE_SIZE,
};
use ghostlite::data::{class_counts, write_dataset, Lesion};

use super::seed_or_env;
use crate::failure::{Failure, Outcome};

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Directory for the images and `metadata.csv`.
    #[arg(long)]
    out: PathBuf,
    /// [default: $GHOSTLITE_SEED, else 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Image side length [default: 64, or 32 with --smoke].
    #[arg(long)]
    size: Option<u32>,
    /// Small smoke-test set instead of the full ~900-image set.
    #[arg(long)]
    smoke: bool,
    /// Seven per-class counts in AKIEC,BCC,BKL,DF,MEL,NV,VASC order.
    #[arg(long, value_delimiter = ',', num_args = 7, conflicts_with = "smoke")]
    counts: Option<Vec<usize>>,
}

pub fn run(args: SynthArgs) -> Outcome {
    let seed = seed_or_env(args.seed)?;
    let (counts, default_size) = match (&args.counts, args.smoke) {
        (Some(c), _) => (c.as_slice().try_into().expect("clap enforces seven counts"), SYNTHETIC_IMAGE_SIZE),
        (None, true) => (SMOKE_COUNTS, SMOKE_IMAGE_SIZE),
        (None, false) => (SYNTHETIC_COUNTS, SYNTHETIC_IMAGE_SIZE),
    };
    let size = args.size.unwrap_or(default_size);
    if size < 8 {
        return Err(Failure::config(format!("image size {size} is too small to draw a lesion")));
    }
    let records = synthetic_dataset_with_counts(seed, size, &counts);
    write_dataset(&records, &args.out, args.out.join("metadata.csv"))?;
    let per_class = class_counts(records.iter().map(|r| r.label));
    let summary: Vec<String> = Lesion::ALL.iter().zip(per_class).map(|(l, n)| format!("{} {n}", l.code())).collect();
    println!("wrote {} images ({}) to {}", records.len(), summary.join(", "), args.out.display());
    Ok(())
}
