use std::path::PathBuf;

use clap::Args;
use ghostlite::data::{encode_png, smote_samples, tensor_to_image, Lesion, Provenance, DEFAULT_NEIGHBORS};
use ghostlite::train::load_tensor;

use super::seed_or_env;
use crate::failure::{Failure, Outcome};
use crate::output;

pub const PROVENANCE_FILE: &str = "provenance.csv";

#[derive(Args, Debug)]
pub struct SmoteArgs {
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long)]
    metadata: Option<PathBuf>,
    /// Class code, e.g. DF or "akiec".
    #[arg(long)]
    class: Lesion,
    /// Number of synthetic images.
    #[arg(long, default_value_t = 8)]
    count: usize,
    #[arg(long, default_value = "smote-preview")]
    out: PathBuf,
    /// [default: $GHOSTLITE_SEED, else 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Nearest neighbours considered per sample.
    #[arg(long, default_value_t = DEFAULT_NEIGHBORS)]
    neighbors: usize,
    /// Side length every image is resized to before interpolation.
    #[arg(long, default_value_t = 64)]
    image_size: usize,
}

pub fn run(args: SmoteArgs) -> Outcome {
    let seed = seed_or_env(args.seed)?;
    if args.neighbors == 0 || args.image_size == 0 {
        return Err(Failure::config("--neighbors and --image-size must be positive"));
    }
    let metadata = output::metadata_path(&args.data_dir, args.metadata);
    let loaded = output::load(&args.data_dir, &metadata)?;
    let members: Vec<_> = loaded.records.iter().filter(|r| r.label == args.class).collect();
    if members.len() < 2 {
        return Err(Failure::data(format!(
            "class {} has {} usable image(s); SMOTE interpolates between two samples of a class",
            args.class.code(),
            members.len()
        )));
    }
    let tensors = members.iter().map(|r| load_tensor(r, args.image_size)).collect::<Result<Vec<_>, _>>()?;
    let samples = smote_samples(&tensors, args.count, args.neighbors, seed)?;

    let mut csv = csv::Writer::from_writer(Vec::new());
    csv.write_record(["file", "parent_a", "parent_b", "lambda"]).map_err(|e| Failure::data(e.to_string()))?;
    let code = args.class.code().to_ascii_lowercase();
    for (i, (tensor, provenance)) in samples.iter().enumerate() {
        let Provenance::Interpolated { parent_a, parent_b, lambda } = *provenance else {
            unreachable!("single-class previews always interpolate")
        };
        let file = format!("smote_{code}_{i:04}.png");
        output::write(&args.out.join(&file), encode_png(&tensor_to_image(tensor)?)?)?;
        csv.write_record([
            file,
            members[parent_a].image_id.clone(),
            members[parent_b].image_id.clone(),
            format!("{lambda}"),
        ])
        .map_err(|e| Failure::data(e.to_string()))?;
    }
    let bytes = csv.into_inner().map_err(|e| Failure::data(e.to_string()))?;
    output::write(&args.out.join(PROVENANCE_FILE), bytes)?;
    println!("wrote {} synthetic {} images to {}", samples.len(), args.class.code(), args.out.display());
    Ok(())
}
