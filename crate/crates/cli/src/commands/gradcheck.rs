use std::path::PathBuf;

use clap::Args;
use ghostlite::gradcheck::{
    render_table, run_gradcheck, GradcheckConfig, CHECKS, DEFAULT_END_TO_END_TOLERANCE, DEFAULT_STEP,
    DEFAULT_TOLERANCE,
};

use crate::failure::{Code, Failure, Outcome};
use crate::output;

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Run only these checks (comma-separated or repeated).
    #[arg(long, value_delimiter = ',')]
    only: Vec<String>,
    /// Maximum relative error for single primitives and modules.
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    tolerance: f64,
    /// Maximum relative error for the end-to-end model.
    #[arg(long, default_value_t = DEFAULT_END_TO_END_TOLERANCE)]
    e2e_tolerance: f64,
    /// Central-difference step.
    #[arg(long, default_value_t = DEFAULT_STEP)]
    step: f64,
    /// Coordinates sampled per tensor.
    #[arg(long, default_value_t = GradcheckConfig::default().max_coords)]
    max_coords: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the rows as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
    /// List check names and exit.
    #[arg(long)]
    list: bool,
}

pub fn run(args: GradcheckArgs) -> Outcome {
    if args.list {
        for name in CHECKS {
            println!("{name}");
        }
        return Ok(());
    }
    let cfg = GradcheckConfig {
        step: args.step,
        tolerance: args.tolerance,
        end_to_end_tolerance: args.e2e_tolerance,
        max_coords: args.max_coords,
        seed: args.seed,
        only: (!args.only.is_empty()).then_some(args.only),
    };
    let rows = run_gradcheck(&cfg)?;
    print!("{}", render_table(&rows));
    if let Some(path) = &args.json {
        output::write(path, serde_json::to_string_pretty(&rows).expect("rows serialize"))?;
    }
    let failed: Vec<&str> = rows.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::new(Code::CheckFailed, format!("gradient check failed: {}", failed.join(", "))))
    }
}
