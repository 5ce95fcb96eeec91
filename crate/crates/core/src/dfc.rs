//! Decoupled fully-connected attention.
//!
//! The gate is computed at reduced resolution: average-pool by `factor`,
//! project channels with a 1×1 conv + BN, mix along height with `θ_v`, then
//! along width with `θ_h`, squash with a sigmoid and upsample back. The two
//! axis-wise mixes cost `O(H²W + HW²)` per channel instead of the `O(H²W²)`
//! of full pairwise attention.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{ParamId, ParamStore, Tape, Var};
use crate::error::{invalid, shape_err, Result};
use crate::layers::{BatchNorm, BnUpdate, Conv};
use crate::ops::Mode;
use crate::tensor::{Element, Tensor};

pub const DEFAULT_DOWNSAMPLE: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct DfcAttention {
    pub c_in: usize,
    pub c_mid: usize,
    /// Full-resolution extents the gate is produced for.
    pub height: usize,
    pub width: usize,
    pub factor: usize,
    pub proj: Conv,
    pub bn: BatchNorm,
    /// `[H_d, H_d]`, mixes along height.
    pub theta_v: ParamId,
    /// `[W_d, W_d]`, mixes along width.
    pub theta_h: ParamId,
}

/// Pre-sigmoid map at reduced resolution and the final full-resolution gate.
pub struct AttentionOutput {
    pub logits: Var,
    pub gate: Var,
}

impl DfcAttention {
    #[allow(clippy::too_many_arguments)]
    pub fn new<E: Element, R: Rng + ?Sized>(
        store: &mut ParamStore<E>,
        name: &str,
        c_in: usize,
        c_mid: usize,
        height: usize,
        width: usize,
        factor: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if factor == 0 || height % factor != 0 || width % factor != 0 {
            return Err(invalid(format!(
                "attention input {height}x{width} not divisible by downsample factor {factor}"
            )));
        }
        let (hd, wd) = (height / factor, width / factor);
        let proj = Conv::new(store, &format!("{name}.proj"), c_in, c_mid, 1, 1, rng)?;
        let bn = BatchNorm::new(store, &format!("{name}.bn"), c_mid, false)?;
        let bv = 1.0 / (hd as f64).sqrt();
        let bh = 1.0 / (wd as f64).sqrt();
        let theta_v = store.add_param(format!("{name}.theta_v"), Tensor::uniform([hd, hd], -bv, bv, rng))?;
        let theta_h = store.add_param(format!("{name}.theta_h"), Tensor::uniform([wd, wd], -bh, bh, rng))?;
        Ok(DfcAttention { c_in, c_mid, height, width, factor, proj, bn, theta_v, theta_h })
    }

    pub fn reduced_extent(&self) -> (usize, usize) {
        (self.height / self.factor, self.width / self.factor)
    }

    pub fn forward_parts<E: Element>(
        &self,
        tape: &mut Tape<E>,
        store: &ParamStore<E>,
        input: Var,
        mode: Mode,
        updates: &mut Vec<BnUpdate<E>>,
    ) -> Result<AttentionOutput> {
        let (_, c, h, w) = tape.value(input).dims4()?;
        if (c, h, w) != (self.c_in, self.height, self.width) {
            return Err(shape_err(format!(
                "attention built for [{}, {}, {}] got input {:?}",
                self.c_in,
                self.height,
                self.width,
                tape.value(input).shape()
            )));
        }
        let pooled = if self.factor > 1 { tape.avgpool2d(input, self.factor)? } else { input };
        let projected = self.proj.forward(tape, store, pooled)?;
        let normed = self.bn.forward(tape, store, projected, mode, updates)?;
        let tv = tape.param(store, self.theta_v);
        let vertical = tape.fc_vertical(normed, tv)?;
        let th = tape.param(store, self.theta_h);
        let logits = tape.fc_horizontal(vertical, th)?;
        let squashed = tape.sigmoid(logits);
        let gate = tape.upsample(squashed, self.height, self.width)?;
        Ok(AttentionOutput { logits, gate })
    }

    pub fn forward<E: Element>(
        &self,
        tape: &mut Tape<E>,
        store: &ParamStore<E>,
        input: Var,
        mode: Mode,
        updates: &mut Vec<BnUpdate<E>>,
    ) -> Result<Var> {
        Ok(self.forward_parts(tape, store, input, mode, updates)?.gate)
    }
}

/// Evaluates the attention gate on its own.
pub fn dfc_attention<E: Element>(
    input: &Tensor<E>,
    module: &DfcAttention,
    store: &ParamStore<E>,
    mode: Mode,
) -> Result<Tensor<E>> {
    let mut tape = Tape::new();
    let x = tape.input(input.clone());
    let gate = module.forward(&mut tape, store, x, mode, &mut Vec::new())?;
    Ok(tape.value(gate).clone())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DfcCost {
    pub proj_macs: u64,
    pub fc_macs: u64,
    pub total_macs: u64,
}

/// With `H_d = H/factor`, `W_d = W/factor`:
/// `proj = H_d·W_d·C_mid·C_in`, `fc = C_mid·(H_d²·W_d + H_d·W_d²)`.
/// Pooling, sigmoid and upsampling are not counted.
pub fn dfc_flops(c_mid: usize, c_in: usize, height: usize, width: usize, factor: usize) -> Result<DfcCost> {
    if factor == 0 || height % factor != 0 || width % factor != 0 {
        return Err(invalid(format!("{height}x{width} not divisible by {factor}")));
    }
    let (hd, wd) = ((height / factor) as u64, (width / factor) as u64);
    let proj_macs = hd * wd * (c_mid * c_in) as u64;
    let fc_macs = c_mid as u64 * (hd * hd * wd + hd * wd * wd);
    Ok(DfcCost { proj_macs, fc_macs, total_macs: proj_macs + fc_macs })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fc_cost_examples() {
        // H_d = W_d = 4 from 8x8 with factor 2
        assert_eq!(dfc_flops(8, 3, 8, 8, 2).unwrap().fc_macs, 1024);
        let small = dfc_flops(5, 2, 6, 10, 2).unwrap().fc_macs;
        let big = dfc_flops(5, 2, 12, 20, 2).unwrap().fc_macs;
        assert_eq!(big, 8 * small);
        assert_eq!(dfc_flops(9, 4, 2, 2, 2).unwrap().fc_macs, 18);
        assert!(dfc_flops(9, 4, 3, 2, 2).is_err());
    }
}
