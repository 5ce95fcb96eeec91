//! Central-difference gradient checks in double precision.
//!
//! Each case maps its inputs (and optionally a parameter store) to a tensor
//! that is projected onto fixed random weights to give a scalar. Analytic
//! gradients from the tape are compared against `(L(x + h) − L(x − h)) / 2h`
//! with relative error `|a − n| / max(|a|, |n|, 1e-8)`. Perturbations that
//! flip the sign of any ReLU input are skipped, since the derivative is not
//! defined across the kink.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{ParamStore, Tape, Var};
use crate::dfc::DfcAttention;
use crate::error::{invalid, Result};
use crate::ghost::{GhostConfig, GhostModule};
use crate::model::{build_model, BottleneckSpec, ModelSpec};
use crate::ops::Mode;
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_END_TO_END_TOLERANCE: f64 = 1e-3;
const ERROR_FLOOR: f64 = 1e-8;
const ROUNDOFF_ULPS: f64 = 4.0;

/// Names of every check, in run order.
pub const CHECKS: &[&str] = &[
    "conv2d",
    "conv2d_strided",
    "conv2d_pointwise",
    "depthwise",
    "depthwise_strided",
    "batchnorm_train",
    "batchnorm_eval",
    "relu",
    "sigmoid",
    "avgpool",
    "upsample",
    "fc_vertical",
    "fc_horizontal",
    "linear",
    "global_avgpool",
    "mul",
    "add",
    "scale",
    "concat",
    "weighted_ce",
    "weighted_ce_unnormalized",
    "ghost_module",
    "dfc_attention",
    "end_to_end",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckConfig {
    pub step: f64,
    pub tolerance: f64,
    pub end_to_end_tolerance: f64,
    /// Coordinates sampled per tensor; smaller tensors are checked in full.
    pub max_coords: usize,
    pub seed: u64,
    /// Restrict to these check names.
    pub only: Option<Vec<String>>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            step: DEFAULT_STEP,
            tolerance: DEFAULT_TOLERANCE,
            end_to_end_tolerance: DEFAULT_END_TO_END_TOLERANCE,
            max_coords: 48,
            seed: 0,
            only: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckRow {
    pub name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub checked: usize,
    /// Coordinates skipped because a perturbation crossed a ReLU kink.
    pub skipped: usize,
    /// Coordinates where both gradients are below finite-difference roundoff.
    pub at_roundoff: usize,
    pub passed: bool,
}

type Build = dyn Fn(&mut Tape<f64>, &ParamStore<f64>, &[Var]) -> Result<Var>;

struct Case {
    inputs: Vec<Tensor<f64>>,
    store: ParamStore<f64>,
    build: Box<Build>,
}

impl Case {
    fn new(inputs: Vec<Tensor<f64>>, build: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + 'static) -> Self {
        Case { inputs, store: ParamStore::new(), build: Box::new(move |t, _, v| build(t, v)) }
    }

    fn with_store(
        inputs: Vec<Tensor<f64>>,
        store: ParamStore<f64>,
        build: impl Fn(&mut Tape<f64>, &ParamStore<f64>, &[Var]) -> Result<Var> + 'static,
    ) -> Self {
        Case { inputs, store, build: Box::new(build) }
    }

    /// Records the case and reduces its output to a scalar.
    fn record(&self, inputs: &[Tensor<f64>], store: &ParamStore<f64>, proj: Option<&Tensor<f64>>) -> Result<(Tape<f64>, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
        let out = (self.build)(&mut tape, store, &vars)?;
        let loss = match proj {
            Some(w) => tape.weighted_sum(out, w.clone())?,
            None => out,
        };
        Ok((tape, vars, loss))
    }
}

#[derive(Default)]
struct Tally {
    max_err: f64,
    checked: usize,
    skipped: usize,
    at_roundoff: usize,
}

impl Tally {
    fn compare(&mut self, analytic: f64, plus: f64, minus: f64, h: f64) {
        let numeric = (plus - minus) / (2.0 * h);
        // A difference quotient cannot resolve slopes below a few ulps of the
        // loss over 2h. Gradients that are structurally zero (a shift feeding
        // a batch-statistics normalization) land here on both sides.
        let noise = ROUNDOFF_ULPS * f64::EPSILON * plus.abs().max(minus.abs()) / (2.0 * h);
        if analytic.abs() <= noise && numeric.abs() <= noise {
            self.at_roundoff += 1;
            return;
        }
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ERROR_FLOOR);
        self.max_err = self.max_err.max(err);
        self.checked += 1;
    }
}

fn coords(len: usize, max: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if len <= max {
        (0..len).collect()
    } else {
        let mut idx = sample(rng, len, max).into_vec();
        idx.sort_unstable();
        idx
    }
}

fn run_case(case: &Case, cfg: &GradcheckConfig, rng: &mut ChaCha8Rng) -> Result<Tally> {
    let (probe, _, out) = case.record(&case.inputs, &case.store, None)?;
    let out_value = probe.value(out);
    let proj = (!out_value.is_scalar()).then(|| Tensor::uniform(out_value.shape().to_vec(), -1.0, 1.0, rng));
    let proj = proj.as_ref();

    let (tape, vars, loss) = case.record(&case.inputs, &case.store, proj)?;
    let base_pattern = tape.relu_pattern();
    let grads = tape.gradients(loss)?;
    let mut param_grads = case.store.clone();
    param_grads.zero_grad();
    tape.backward(loss, &mut param_grads)?;

    let h = cfg.step;
    let mut tally = Tally::default();
    // value at a perturbed point, or None when it lies on another ReLU piece
    let eval = |inputs: &[Tensor<f64>], store: &ParamStore<f64>| -> Result<Option<f64>> {
        let (t, _, l) = case.record(inputs, store, proj)?;
        Ok((t.relu_pattern() == base_pattern).then(|| t.value(l).item()))
    };

    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).cloned().unwrap_or_else(|| Tensor::zeros(case.inputs[i].shape().to_vec()));
        for j in coords(case.inputs[i].numel(), cfg.max_coords, rng) {
            let mut plus = case.inputs.clone();
            plus[i].data_mut()[j] += h;
            let mut minus = case.inputs.clone();
            minus[i].data_mut()[j] -= h;
            match (eval(&plus, &case.store)?, eval(&minus, &case.store)?) {
                (Some(lp), Some(lm)) => tally.compare(analytic.data()[j], lp, lm, h),
                _ => tally.skipped += 1,
            }
        }
    }
    for p in 0..case.store.params().len() {
        let numel = case.store.params()[p].value.numel();
        for j in coords(numel, cfg.max_coords, rng) {
            let mut plus = case.store.clone();
            plus.params_mut()[p].value.data_mut()[j] += h;
            let mut minus = case.store.clone();
            minus.params_mut()[p].value.data_mut()[j] -= h;
            match (eval(&case.inputs, &plus)?, eval(&case.inputs, &minus)?) {
                (Some(lp), Some(lm)) => tally.compare(param_grads.params()[p].grad.data()[j], lp, lm, h),
                _ => tally.skipped += 1,
            }
        }
    }
    Ok(tally)
}

fn rand_t(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::uniform(shape.to_vec(), -1.0, 1.0, rng)
}

/// Values bounded away from zero so no ReLU sits on its kink.
fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    rand_t(shape, rng).map(|v| if v >= 0.0 { v + 0.05 } else { v - 0.05 })
}

/// Randomizes batchnorm scales and shifts, which start at 1/0 (or 0 for
/// zero-initialized residual branches) and would otherwise silence gradients.
fn perturb_affine(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
    for p in store.params_mut() {
        if p.name.ends_with(".gamma") {
            p.value = Tensor::uniform(p.value.shape().to_vec(), 0.5, 1.5, rng);
        } else if p.name.ends_with(".beta") {
            p.value = Tensor::uniform(p.value.shape().to_vec(), -0.3, 0.3, rng);
        }
    }
}

fn end_to_end_spec() -> ModelSpec {
    ModelSpec {
        image_size: 16,
        in_channels: 3,
        num_classes: 3,
        stem_channels: 4,
        blocks: vec![BottleneckSpec::new(4, 8, 6, 2, true), BottleneckSpec::new(6, 12, 6, 1, true)],
        head_channels: 8,
        attention_downsample: 2,
        seed: 11,
    }
}

fn build_case(name: &str, rng: &mut ChaCha8Rng) -> Result<Case> {
    let case = match name {
        "conv2d" => Case::new(vec![rand_t(&[1, 2, 5, 5], rng), rand_t(&[4, 2, 3, 3], rng)], |t, v| {
            t.conv2d(v[0], v[1], 1, 1)
        }),
        "conv2d_strided" => Case::new(vec![rand_t(&[2, 2, 6, 6], rng), rand_t(&[3, 2, 3, 3], rng)], |t, v| {
            t.conv2d(v[0], v[1], 2, 1)
        }),
        "conv2d_pointwise" => Case::new(vec![rand_t(&[2, 3, 4, 4], rng), rand_t(&[5, 3, 1, 1], rng)], |t, v| {
            t.conv2d(v[0], v[1], 1, 0)
        }),
        "depthwise" => Case::new(vec![rand_t(&[2, 3, 5, 5], rng), rand_t(&[3, 1, 3, 3], rng)], |t, v| {
            t.depthwise_conv2d(v[0], v[1], 1, 1)
        }),
        "depthwise_strided" => Case::new(vec![rand_t(&[2, 3, 6, 6], rng), rand_t(&[3, 1, 3, 3], rng)], |t, v| {
            t.depthwise_conv2d(v[0], v[1], 2, 1)
        }),
        "batchnorm_train" => {
            let inputs = vec![rand_t(&[3, 2, 3, 3], rng), Tensor::uniform([2], 0.5, 1.5, rng), rand_t(&[2], rng)];
            Case::new(inputs, |t, v| Ok(t.batchnorm(v[0], v[1], v[2], Mode::Train, (&[], &[]), 1e-5)?.0))
        }
        "batchnorm_eval" => {
            let inputs = vec![rand_t(&[3, 2, 3, 3], rng), Tensor::uniform([2], 0.5, 1.5, rng), rand_t(&[2], rng)];
            let mean: Vec<f64> = (0..2).map(|_| rng.random_range(-0.5..0.5)).collect();
            let var: Vec<f64> = (0..2).map(|_| rng.random_range(0.5..2.0)).collect();
            Case::new(inputs, move |t, v| Ok(t.batchnorm(v[0], v[1], v[2], Mode::Eval, (&mean, &var), 1e-5)?.0))
        }
        "relu" => Case::new(vec![away_from_zero(&[2, 3, 4, 4], rng)], |t, v| Ok(t.relu(v[0]))),
        "sigmoid" => Case::new(vec![rand_t(&[2, 3, 4, 4], rng).scale(3.0)], |t, v| Ok(t.sigmoid(v[0]))),
        "avgpool" => Case::new(vec![rand_t(&[2, 2, 4, 6], rng)], |t, v| t.avgpool2d(v[0], 2)),
        "upsample" => Case::new(vec![rand_t(&[2, 2, 3, 2], rng)], |t, v| t.upsample(v[0], 6, 4)),
        "fc_vertical" => Case::new(vec![rand_t(&[2, 3, 4, 5], rng), rand_t(&[4, 4], rng)], |t, v| {
            t.fc_vertical(v[0], v[1])
        }),
        "fc_horizontal" => Case::new(vec![rand_t(&[2, 3, 4, 5], rng), rand_t(&[5, 5], rng)], |t, v| {
            t.fc_horizontal(v[0], v[1])
        }),
        "linear" => Case::new(vec![rand_t(&[3, 5], rng), rand_t(&[4, 5], rng), rand_t(&[4], rng)], |t, v| {
            t.linear(v[0], v[1], v[2])
        }),
        "global_avgpool" => Case::new(vec![rand_t(&[2, 3, 3, 4], rng)], |t, v| t.global_avgpool(v[0])),
        "mul" => Case::new(vec![rand_t(&[2, 3, 3, 3], rng), rand_t(&[2, 3, 3, 3], rng)], |t, v| t.mul(v[0], v[1])),
        "add" => Case::new(vec![rand_t(&[2, 3, 3, 3], rng), rand_t(&[2, 3, 3, 3], rng)], |t, v| t.add(v[0], v[1])),
        "scale" => Case::new(vec![rand_t(&[2, 3, 3, 3], rng)], |t, v| Ok(t.scale(v[0], -1.7))),
        "concat" => Case::new(vec![rand_t(&[2, 2, 3, 3], rng), rand_t(&[2, 3, 3, 3], rng)], |t, v| {
            t.concat_channels(&[v[0], v[1]])
        }),
        "weighted_ce" | "weighted_ce_unnormalized" => {
            let normalize = name == "weighted_ce";
            let labels: Vec<usize> = (0..5).map(|_| rng.random_range(0..4)).collect();
            let weights: Vec<f64> = (0..5).map(|_| rng.random_range(0.5..3.0)).collect();
            Case::new(vec![rand_t(&[5, 4], rng).scale(2.0)], move |t, v| {
                t.weighted_cross_entropy(v[0], &labels, &weights, normalize)
            })
        }
        "ghost_module" => {
            let mut store = ParamStore::new();
            let config =
                GhostConfig { c_in: 3, c_out: 6, ratio: 2, kernel: 1, stride: 1, relu: true, zero_init: false };
            let module = GhostModule::new(&mut store, "ghost", config, rng)?;
            perturb_affine(&mut store, rng);
            Case::with_store(vec![rand_t(&[3, 3, 4, 4], rng)], store, move |t, s, v| {
                module.forward(t, s, v[0], Mode::Train, &mut Vec::new())
            })
        }
        "dfc_attention" => {
            let mut store = ParamStore::new();
            let module = DfcAttention::new(&mut store, "attn", 3, 4, 4, 6, 2, rng)?;
            perturb_affine(&mut store, rng);
            Case::with_store(vec![rand_t(&[3, 3, 4, 6], rng)], store, move |t, s, v| {
                module.forward(t, s, v[0], Mode::Train, &mut Vec::new())
            })
        }
        "end_to_end" => {
            let mut model = build_model::<f64>(&end_to_end_spec())?;
            perturb_affine(&mut model.store, rng);
            let store = std::mem::take(&mut model.store);
            let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..3)).collect();
            let weights: Vec<f64> = (0..4).map(|_| rng.random_range(0.5..3.0)).collect();
            let image = rand_t(&[4, 3, 16, 16], rng);
            Case::with_store(vec![image], store, move |t, s, v| {
                let mut m = model.clone();
                m.store = s.clone();
                let logits = m.forward(t, v[0], Mode::Train, &mut Vec::new())?;
                t.weighted_cross_entropy(logits, &labels, &weights, true)
            })
        }
        other => return Err(invalid(format!("unknown gradcheck {other:?}; known: {}", CHECKS.join(", ")))),
    };
    Ok(case)
}

/// Runs the selected checks. Each check draws from its own seeded stream,
/// so results do not depend on which other checks are selected.
pub fn run_gradcheck(cfg: &GradcheckConfig) -> Result<Vec<GradcheckRow>> {
    if !(cfg.step > 0.0 && cfg.step.is_finite()) {
        return Err(invalid(format!("finite-difference step {} must be positive", cfg.step)));
    }
    let names: Vec<&str> = match &cfg.only {
        Some(only) => {
            if let Some(bad) = only.iter().find(|n| !CHECKS.contains(&n.as_str())) {
                return Err(invalid(format!("unknown gradcheck {bad:?}; known: {}", CHECKS.join(", "))));
            }
            CHECKS.iter().copied().filter(|c| only.iter().any(|o| o == c)).collect()
        }
        None => CHECKS.to_vec(),
    };
    names
        .into_iter()
        .map(|name| {
            let index = CHECKS.iter().position(|c| *c == name).expect("validated name");
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(index as u64);
            let case = build_case(name, &mut rng)?;
            let tally = run_case(&case, cfg, &mut rng)?;
            let tolerance = if name == "end_to_end" { cfg.end_to_end_tolerance } else { cfg.tolerance };
            Ok(GradcheckRow {
                name: name.to_string(),
                max_rel_error: tally.max_err,
                tolerance,
                checked: tally.checked,
                skipped: tally.skipped,
                at_roundoff: tally.at_roundoff,
                passed: tally.checked > 0 && tally.max_err < tolerance,
            })
        })
        .collect()
}

/// Fixed-width table of check results.
pub fn render_table(rows: &[GradcheckRow]) -> String {
    let mut out = format!(
        "{:<26} {:>12} {:>10} {:>8} {:>8} {:>9}  result\n",
        "check", "max rel err", "tolerance", "coords", "kinks", "roundoff"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<26} {:>12.3e} {:>10.1e} {:>8} {:>8} {:>9}  {}\n",
            r.name,
            r.max_rel_error,
            r.tolerance,
            r.checked,
            r.skipped,
            r.at_roundoff,
            if r.passed { "ok" } else { "FAIL" }
        ));
    }
    out
}
