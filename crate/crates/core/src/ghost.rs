//! Ghost module: `x` intrinsic maps from a narrow primary convolution, plus
//! `x·(s−1)` ghost maps produced from them by cheap 3×3 depthwise kernels.
//! The identity transform is the intrinsic block itself, so the module emits
//! `z = x·s` channels.
//!
//! Output channel layout is `[intrinsic_1..x ‖ ghosts j=1 (i=1..x) ‖ ghosts j=2 ‖ …]`,
//! and cheap kernel `(j−1)·x + i` is the transform from intrinsic map `i` to
//! its `j`-th ghost.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{ParamStore, Tape, Var};
use crate::error::{invalid, Result};
use crate::layers::{BatchNorm, BnUpdate, Conv, DepthwiseConv};
use crate::ops::Mode;
use crate::tensor::{Element, Tensor};

pub const CHEAP_KERNEL: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GhostConfig {
    pub c_in: usize,
    /// Output channels `z`.
    pub c_out: usize,
    /// Ghost factor `s`; `z` must be divisible by it.
    pub ratio: usize,
    /// Primary convolution kernel size.
    pub kernel: usize,
    /// Applied to the primary convolution only.
    pub stride: usize,
    pub relu: bool,
    /// Zero-initialize the batchnorm scales (residual branches start silent).
    pub zero_init: bool,
}

impl GhostConfig {
    pub fn intrinsic(&self) -> usize {
        self.c_out / self.ratio
    }

    pub fn validate(&self) -> Result<()> {
        if self.ratio < 1 {
            return Err(invalid("ghost factor s must be at least 1"));
        }
        if self.c_out == 0 || self.c_out % self.ratio != 0 {
            return Err(invalid(format!(
                "ghost output channels {} not divisible by s = {}",
                self.c_out, self.ratio
            )));
        }
        if self.c_in == 0 || self.kernel == 0 || self.stride == 0 {
            return Err(invalid(format!("degenerate ghost module {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GhostModule {
    pub config: GhostConfig,
    pub primary: Conv,
    pub bn_primary: BatchNorm,
    /// Absent when `s == 1`.
    pub cheap: Option<(DepthwiseConv, BatchNorm)>,
}

impl GhostModule {
    pub fn new<E: Element, R: Rng + ?Sized>(
        store: &mut ParamStore<E>,
        name: &str,
        config: GhostConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let x = config.intrinsic();
        let primary = Conv::new(
            store,
            &format!("{name}.primary"),
            config.c_in,
            x,
            config.kernel,
            config.stride,
            rng,
        )?;
        let bn_primary = BatchNorm::new(store, &format!("{name}.bn_primary"), x, config.zero_init)?;
        let cheap = if config.ratio > 1 {
            let ghosts = x * (config.ratio - 1);
            let dw = DepthwiseConv::new(store, &format!("{name}.cheap"), ghosts, CHEAP_KERNEL, 1, rng)?;
            let bn = BatchNorm::new(store, &format!("{name}.bn_cheap"), ghosts, config.zero_init)?;
            Some((dw, bn))
        } else {
            None
        };
        Ok(GhostModule { config, primary, bn_primary, cheap })
    }

    pub fn forward<E: Element>(
        &self,
        tape: &mut Tape<E>,
        store: &ParamStore<E>,
        input: Var,
        mode: Mode,
        updates: &mut Vec<BnUpdate<E>>,
    ) -> Result<Var> {
        let c_in = tape.value(input).dims4()?.1;
        if c_in != self.config.c_in {
            return Err(invalid(format!(
                "ghost module expects {} input channels, got {c_in}",
                self.config.c_in
            )));
        }
        let mut intrinsic = self.primary.forward(tape, store, input)?;
        intrinsic = self.bn_primary.forward(tape, store, intrinsic, mode, updates)?;
        if self.config.relu {
            intrinsic = tape.relu(intrinsic);
        }
        let Some((dw, bn)) = &self.cheap else {
            return Ok(intrinsic);
        };
        // replicate the intrinsic block once per ghost copy so a single
        // depthwise pass yields the (j, i) ordering
        let copies = vec![intrinsic; self.config.ratio - 1];
        let replicated = if copies.len() == 1 { intrinsic } else { tape.concat_channels(&copies)? };
        let mut ghosts = dw.forward(tape, store, replicated)?;
        ghosts = bn.forward(tape, store, ghosts, mode, updates)?;
        if self.config.relu {
            ghosts = tape.relu(ghosts);
        }
        tape.concat_channels(&[intrinsic, ghosts])
    }
}

/// Runs one ghost module outside of a larger graph.
pub fn ghost_forward<E: Element>(
    input: &Tensor<E>,
    module: &GhostModule,
    store: &ParamStore<E>,
    mode: Mode,
) -> Result<Tensor<E>> {
    let mut tape = Tape::new();
    let x = tape.input(input.clone());
    let out = module.forward(&mut tape, store, x, mode, &mut Vec::new())?;
    Ok(tape.value(out).clone())
}

/// Multiply-accumulate counts of one ghost module.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GhostCost {
    pub primary_macs: u64,
    pub cheap_macs: u64,
    pub total_macs: u64,
}

/// `primary = H·W·(z/s)·K²·C_in`, `cheap = H·W·(z/s)·(s−1)·9`.
/// Batchnorm and activation are not counted.
pub fn ghost_flops(c_in: usize, z: usize, s: usize, kernel: usize, h_out: usize, w_out: usize) -> Result<GhostCost> {
    if s == 0 || z % s != 0 {
        return Err(invalid(format!("output channels {z} not divisible by ghost factor {s}")));
    }
    let plane = (h_out * w_out) as u64;
    let x = (z / s) as u64;
    let primary_macs = plane * x * (kernel * kernel) as u64 * c_in as u64;
    let cheap_macs = plane * x * (s as u64 - 1) * (CHEAP_KERNEL * CHEAP_KERNEL) as u64;
    Ok(GhostCost { primary_macs, cheap_macs, total_macs: primary_macs + cheap_macs })
}

/// MACs of the ordinary convolution a ghost module replaces.
pub fn conventional_conv_macs(c_in: usize, c_out: usize, kernel: usize, h_out: usize, w_out: usize) -> u64 {
    (h_out * w_out * c_out * kernel * kernel * c_in) as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn config(c_in: usize, c_out: usize, ratio: usize) -> GhostConfig {
        GhostConfig { c_in, c_out, ratio, kernel: 1, stride: 1, relu: true, zero_init: false }
    }

    #[test]
    fn eight_intrinsic_four_copies_is_32_channels() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = GhostModule::new(&mut store, "g", config(3, 32, 4), &mut rng).unwrap();
        assert_eq!(m.config.intrinsic(), 8);
        let x = Tensor::uniform([2, 3, 5, 5], -1.0, 1.0, &mut rng);
        let y = ghost_forward(&x, &m, &store, Mode::Train).unwrap();
        assert_eq!(y.shape(), &[2, 32, 5, 5]);
    }

    #[test]
    fn flops_worked_example() {
        let c = ghost_flops(16, 32, 2, 3, 32, 32).unwrap();
        assert_eq!(c.primary_macs, 2_359_296);
        assert_eq!(c.cheap_macs, 147_456);
        assert_eq!(c.total_macs, 2_506_752);
        assert_eq!(conventional_conv_macs(16, 32, 3, 32, 32), 4_718_592);
    }

    #[test]
    fn single_copy_matches_conventional() {
        let c = ghost_flops(7, 12, 1, 3, 9, 11).unwrap();
        assert_eq!(c.total_macs, conventional_conv_macs(7, 12, 3, 9, 11));
        assert!(ghost_flops(7, 12, 5, 3, 9, 11).is_err());
    }

    #[test]
    fn bad_config_rejected() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(GhostModule::new(&mut store, "g", config(3, 10, 3), &mut rng).is_err());
        assert!(GhostModule::new(&mut store, "h", config(3, 10, 0), &mut rng).is_err());
    }
}
