use std::path::PathBuf;

use clap::{Args, ValueEnum};
use ghostlite::flops::{analyze_with, compare, comparison_to_csv, comparison_to_text, GhostAccounting};

use crate::config::load_model_spec;
use crate::failure::{Context, Outcome};
use crate::output;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Accounting {
    /// Primary convolution plus cheap depthwise operations.
    Ghost,
    /// Every ghost module replaced by a plain convolution of equal width.
    Conventional,
}

#[derive(Args, Debug)]
pub struct FlopsArgs {
    /// Model spec JSON file, or a preset name: desk, full.
    #[arg(long, value_name = "PATH|desk|full", default_value = "desk")]
    model_config: String,
    /// Input resolution; defaults to the model's own.
    #[arg(long)]
    input_size: Option<usize>,
    /// Write machine-readable CSV here.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Compare several model configs (paths or presets), one row each.
    #[arg(long, num_args = 1.., value_name = "PATH|desk|full")]
    compare: Vec<String>,
    #[arg(long, value_enum, default_value_t = Accounting::Ghost)]
    accounting: Accounting,
}

pub fn run(args: FlopsArgs) -> Outcome {
    let accounting = match args.accounting {
        Accounting::Ghost => GhostAccounting::Ghost,
        Accounting::Conventional => GhostAccounting::Conventional,
    };
    let analyze = |name: &str| -> Outcome<_> {
        let spec = load_model_spec(name)?;
        let size = args.input_size.unwrap_or(spec.image_size);
        analyze_with(&spec, size, accounting).or_config(format!("cannot analyze {name} at {size}x{size}"))
    };

    if args.compare.is_empty() {
        let report = analyze(&args.model_config)?;
        print!("{}", report.to_text());
        if let Some(path) = &args.csv {
            output::write(path, report.to_csv()?)?;
        }
    } else {
        let reports = args.compare.iter().map(|m| analyze(m)).collect::<Outcome<Vec<_>>>()?;
        let rows = compare(&reports, &args.compare)?;
        print!("{}", comparison_to_text(&rows));
        if let Some(path) = &args.csv {
            output::write(path, comparison_to_csv(&rows)?)?;
        }
    }
    Ok(())
}
