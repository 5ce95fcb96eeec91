use std::path::PathBuf;

use clap::Args;
use ghostlite::checkpoint::Checkpoint;
use ghostlite::data::{decode_image, preprocess};
use ghostlite::train::softmax_rows;
use ghostlite::Tensor;
use serde::Serialize;

use crate::failure::{Context, Outcome};

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Image file (PNG, JPEG or PNM).
    #[arg(long)]
    image: PathBuf,
}

#[derive(Serialize)]
struct Ranked {
    class: String,
    probability: f64,
}

#[derive(Serialize)]
struct Prediction {
    image: String,
    predicted: String,
    probabilities: Vec<Ranked>,
}

pub fn run(args: PredictArgs) -> Outcome {
    let checkpoint = Checkpoint::load(&args.checkpoint)
        .or_data(format!("cannot load checkpoint {}", args.checkpoint.display()))?;
    let image = decode_image(&args.image).or_data(format!("cannot read image {}", args.image.display()))?;
    let model = checkpoint.to_model()?;
    let x = preprocess(&image, checkpoint.spec.image_size, &checkpoint.norm)?;
    let logits = model.predict(&Tensor::stack(&[&x])?)?;
    let probs = softmax_rows(&logits).swap_remove(0);

    let mut ranked: Vec<Ranked> = checkpoint
        .class_names
        .iter()
        .zip(probs)
        .map(|(c, p)| Ranked { class: c.clone(), probability: p })
        .collect();
    // stable sort keeps class order among exact ties
    ranked.sort_by(|a, b| b.probability.total_cmp(&a.probability));
    let out = Prediction {
        image: args.image.display().to_string(),
        predicted: ranked[0].class.clone(),
        probabilities: ranked,
    };
    println!("{}", serde_json::to_string_pretty(&out).expect("prediction serializes"));
    Ok(())
}
