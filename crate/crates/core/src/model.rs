//! Attention-gated ghost bottlenecks assembled into a MobileNetV3-style
//! classifier from a declarative stage table.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{ParamStore, Tape, Var};
use crate::dfc::{DfcAttention, DEFAULT_DOWNSAMPLE};
use crate::error::{invalid, Error, Result};
use crate::ghost::{GhostConfig, GhostModule};
use crate::layers::{apply_bn_updates, BatchNorm, BnUpdate, Conv, DepthwiseConv, Linear};
use crate::ops::{output_extent, Mode};
use crate::tensor::{Element, Tensor};

fn default_ghost_s() -> usize {
    2
}

fn default_kernel() -> usize {
    3
}

fn default_in_channels() -> usize {
    3
}

fn default_downsample() -> usize {
    DEFAULT_DOWNSAMPLE
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BottleneckSpec {
    pub c_in: usize,
    pub c_mid: usize,
    pub c_out: usize,
    pub stride: usize,
    pub use_attention: bool,
    #[serde(default = "default_ghost_s")]
    pub ghost_s: usize,
    /// Depthwise kernel of the stride-2 path and the projection shortcut.
    #[serde(default = "default_kernel")]
    pub kernel: usize,
}

impl BottleneckSpec {
    pub fn new(c_in: usize, c_mid: usize, c_out: usize, stride: usize, use_attention: bool) -> Self {
        BottleneckSpec { c_in, c_mid, c_out, stride, use_attention, ghost_s: 2, kernel: 3 }
    }

    pub fn identity_shortcut(&self) -> bool {
        self.stride == 1 && self.c_in == self.c_out
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub image_size: usize,
    #[serde(default = "default_in_channels")]
    pub in_channels: usize,
    pub num_classes: usize,
    pub stem_channels: usize,
    pub blocks: Vec<BottleneckSpec>,
    pub head_channels: usize,
    #[serde(default = "default_downsample")]
    pub attention_downsample: usize,
    #[serde(default)]
    pub seed: u64,
}

/// Spatial extents seen while walking the stage table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Extents {
    pub stem: usize,
    /// Input extent of each block.
    pub block_inputs: Vec<usize>,
    pub head: usize,
}

impl ModelSpec {
    /// Four-block configuration used for desk-scale training and tests.
    pub fn desk() -> Self {
        ModelSpec {
            image_size: 64,
            in_channels: 3,
            num_classes: 7,
            stem_channels: 8,
            blocks: vec![
                BottleneckSpec::new(8, 24, 12, 2, false),
                BottleneckSpec::new(12, 36, 16, 2, true),
                BottleneckSpec::new(16, 48, 24, 2, true),
                BottleneckSpec::new(24, 64, 24, 1, true),
            ],
            head_channels: 64,
            attention_downsample: DEFAULT_DOWNSAMPLE,
            seed: 0,
        }
    }

    /// Full-size configuration following the MobileNetV3-Small stage table
    /// at 224×224. Attention is off in the first two blocks and in the two
    /// 7×7 blocks, whose extent is not divisible by the downsample factor.
    pub fn full() -> Self {
        let b = |c_in, c_mid, c_out, stride, att, kernel| BottleneckSpec {
            c_in,
            c_mid,
            c_out,
            stride,
            use_attention: att,
            ghost_s: 2,
            kernel,
        };
        ModelSpec {
            image_size: 224,
            in_channels: 3,
            num_classes: 7,
            stem_channels: 16,
            blocks: vec![
                b(16, 16, 16, 2, false, 3),
                b(16, 72, 24, 2, false, 3),
                b(24, 88, 24, 1, true, 3),
                b(24, 96, 40, 2, true, 5),
                b(40, 240, 40, 1, true, 5),
                b(40, 240, 40, 1, true, 5),
                b(40, 120, 48, 1, true, 5),
                b(48, 144, 48, 1, true, 5),
                b(48, 288, 96, 2, true, 5),
                b(96, 576, 96, 1, false, 5),
                b(96, 576, 96, 1, false, 5),
            ],
            head_channels: 576,
            attention_downsample: DEFAULT_DOWNSAMPLE,
            seed: 0,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ModelSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model spec serializes")
    }

    /// Checks channel chaining, strides, ghost divisibility and attention
    /// extents; returns the spatial extents at every stage.
    pub fn validate(&self) -> Result<Extents> {
        let spec_err = |block: Option<usize>, reason: String| Error::Spec { block, reason };
        if self.image_size < 2 || self.in_channels == 0 {
            return Err(spec_err(None, format!("image size {} too small", self.image_size)));
        }
        if self.num_classes < 2 {
            return Err(spec_err(None, "at least two classes are required".into()));
        }
        if self.stem_channels == 0 || self.head_channels == 0 {
            return Err(spec_err(None, "stem and head channels must be positive".into()));
        }
        if self.attention_downsample == 0 {
            return Err(spec_err(None, "attention downsample factor must be positive".into()));
        }
        let stem = output_extent(self.image_size, 3, 2, 1).map_err(|e| spec_err(None, e.to_string()))?;
        let mut extent = stem;
        let mut channels = self.stem_channels;
        let mut block_inputs = Vec::with_capacity(self.blocks.len());
        for (i, b) in self.blocks.iter().enumerate() {
            let at = Some(i);
            if b.c_in != channels {
                return Err(spec_err(at, format!("expects {} input channels, previous stage gives {channels}", b.c_in)));
            }
            if b.stride != 1 && b.stride != 2 {
                return Err(spec_err(at, format!("stride {} not in {{1, 2}}", b.stride)));
            }
            if b.c_mid < b.c_in {
                return Err(spec_err(at, format!("expansion width {} below input width {}", b.c_mid, b.c_in)));
            }
            if b.ghost_s == 0 || b.c_mid % b.ghost_s != 0 || b.c_out % b.ghost_s != 0 {
                return Err(spec_err(
                    at,
                    format!("widths {} and {} must be divisible by ghost factor {}", b.c_mid, b.c_out, b.ghost_s),
                ));
            }
            if b.kernel == 0 || b.kernel % 2 == 0 {
                return Err(spec_err(at, format!("depthwise kernel {} must be odd", b.kernel)));
            }
            if b.use_attention && extent % self.attention_downsample != 0 {
                return Err(spec_err(
                    at,
                    format!("attention extent {extent} not divisible by {}", self.attention_downsample),
                ));
            }
            block_inputs.push(extent);
            if b.stride == 2 {
                extent = output_extent(extent, b.kernel, 2, b.kernel / 2).map_err(|e| spec_err(at, e.to_string()))?;
            }
            channels = b.c_out;
        }
        Ok(Extents { stem, block_inputs, head: extent })
    }

    pub fn last_channels(&self) -> usize {
        self.blocks.last().map_or(self.stem_channels, |b| b.c_out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Shortcut {
    pub dw: DepthwiseConv,
    pub bn_dw: BatchNorm,
    pub pw: Conv,
    pub bn_pw: BatchNorm,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bottleneck {
    pub spec: BottleneckSpec,
    pub expand: GhostModule,
    pub attention: Option<DfcAttention>,
    pub downsample: Option<(DepthwiseConv, BatchNorm)>,
    pub reduce: GhostModule,
    pub shortcut: Option<Shortcut>,
}

impl Bottleneck {
    pub fn new<E: Element>(
        store: &mut ParamStore<E>,
        name: &str,
        spec: &BottleneckSpec,
        extent: usize,
        downsample_factor: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let expand = GhostModule::new(
            store,
            &format!("{name}.ghost1"),
            GhostConfig {
                c_in: spec.c_in,
                c_out: spec.c_mid,
                ratio: spec.ghost_s,
                kernel: 1,
                stride: 1,
                relu: true,
                zero_init: false,
            },
            rng,
        )?;
        let attention = if spec.use_attention {
            Some(DfcAttention::new(
                store,
                &format!("{name}.attn"),
                spec.c_in,
                spec.c_mid,
                extent,
                extent,
                downsample_factor,
                rng,
            )?)
        } else {
            None
        };
        let downsample = if spec.stride == 2 {
            let dw = DepthwiseConv::new(store, &format!("{name}.dw"), spec.c_mid, spec.kernel, 2, rng)?;
            let bn = BatchNorm::new(store, &format!("{name}.dw_bn"), spec.c_mid, false)?;
            Some((dw, bn))
        } else {
            None
        };
        let reduce = GhostModule::new(
            store,
            &format!("{name}.ghost2"),
            GhostConfig {
                c_in: spec.c_mid,
                c_out: spec.c_out,
                ratio: spec.ghost_s,
                kernel: 1,
                stride: 1,
                relu: false,
                zero_init: true,
            },
            rng,
        )?;
        let shortcut = if spec.identity_shortcut() {
            None
        } else {
            Some(Shortcut {
                dw: DepthwiseConv::new(store, &format!("{name}.short.dw"), spec.c_in, spec.kernel, spec.stride, rng)?,
                bn_dw: BatchNorm::new(store, &format!("{name}.short.dw_bn"), spec.c_in, false)?,
                pw: Conv::new(store, &format!("{name}.short.pw"), spec.c_in, spec.c_out, 1, 1, rng)?,
                bn_pw: BatchNorm::new(store, &format!("{name}.short.pw_bn"), spec.c_out, false)?,
            })
        };
        Ok(Bottleneck { spec: spec.clone(), expand, attention, downsample, reduce, shortcut })
    }

    pub fn forward<E: Element>(
        &self,
        tape: &mut Tape<E>,
        store: &ParamStore<E>,
        input: Var,
        mode: Mode,
        updates: &mut Vec<BnUpdate<E>>,
    ) -> Result<Var> {
        let mut y = self.expand.forward(tape, store, input, mode, updates)?;
        if let Some(att) = &self.attention {
            let gate = att.forward(tape, store, input, mode, updates)?;
            y = tape.mul(y, gate)?;
        }
        if let Some((dw, bn)) = &self.downsample {
            y = dw.forward(tape, store, y)?;
            y = bn.forward(tape, store, y, mode, updates)?;
        }
        let z = self.reduce.forward(tape, store, y, mode, updates)?;
        let residual = match &self.shortcut {
            None => input,
            Some(s) => {
                let mut r = s.dw.forward(tape, store, input)?;
                r = s.bn_dw.forward(tape, store, r, mode, updates)?;
                r = s.pw.forward(tape, store, r)?;
                s.bn_pw.forward(tape, store, r, mode, updates)?
            }
        };
        tape.add(z, residual)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<E> {
    pub spec: ModelSpec,
    pub store: ParamStore<E>,
    pub stem: Conv,
    pub stem_bn: BatchNorm,
    pub blocks: Vec<Bottleneck>,
    pub head: Conv,
    pub head_bn: BatchNorm,
    pub classifier: Linear,
}

/// Builds the model with seed-controlled He-uniform initialization.
pub fn build_model<E: Element>(spec: &ModelSpec) -> Result<Model<E>> {
    let extents = spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut store = ParamStore::new();
    let stem = Conv::new(&mut store, "stem.w", spec.in_channels, spec.stem_channels, 3, 2, &mut rng)?;
    let stem_bn = BatchNorm::new(&mut store, "stem.bn", spec.stem_channels, false)?;
    let mut blocks = Vec::with_capacity(spec.blocks.len());
    for (i, (b, &extent)) in spec.blocks.iter().zip(&extents.block_inputs).enumerate() {
        let block = Bottleneck::new(&mut store, &format!("block{i}"), b, extent, spec.attention_downsample, &mut rng)
            .map_err(|e| Error::Spec { block: Some(i), reason: e.to_string() })?;
        blocks.push(block);
    }
    let head = Conv::new(&mut store, "head.w", spec.last_channels(), spec.head_channels, 1, 1, &mut rng)?;
    let head_bn = BatchNorm::new(&mut store, "head.bn", spec.head_channels, false)?;
    let classifier = Linear::new(&mut store, "fc", spec.head_channels, spec.num_classes, &mut rng)?;
    Ok(Model { spec: spec.clone(), store, stem, stem_bn, blocks, head, head_bn, classifier })
}

impl<E: Element> Model<E> {
    /// Records the full forward pass; batchnorm statistics of a train-mode
    /// pass are collected in `updates` instead of being applied.
    pub fn forward(
        &self,
        tape: &mut Tape<E>,
        input: Var,
        mode: Mode,
        updates: &mut Vec<BnUpdate<E>>,
    ) -> Result<Var> {
        let (n, c, h, w) = tape.value(input).dims4()?;
        if c != self.spec.in_channels || h != self.spec.image_size || w != self.spec.image_size {
            return Err(invalid(format!(
                "model expects [N, {}, {s}, {s}] input, got {:?}",
                self.spec.in_channels,
                tape.value(input).shape(),
                s = self.spec.image_size
            )));
        }
        if mode == Mode::Train && n < 2 {
            return Err(invalid("train-mode forward needs a batch of at least 2 for batch statistics"));
        }
        let store = &self.store;
        let mut x = self.stem.forward(tape, store, input)?;
        x = self.stem_bn.forward(tape, store, x, mode, updates)?;
        x = tape.relu(x);
        for block in &self.blocks {
            x = block.forward(tape, store, x, mode, updates)?;
        }
        x = self.head.forward(tape, store, x)?;
        x = self.head_bn.forward(tape, store, x, mode, updates)?;
        x = tape.relu(x);
        x = tape.global_avgpool(x)?;
        self.classifier.forward(tape, store, x)
    }

    /// Logits for a batch; train mode also folds batch statistics into the
    /// running averages.
    pub fn model_forward(&mut self, batch: &Tensor<E>, mode: Mode) -> Result<Tensor<E>> {
        let mut tape = Tape::new();
        let x = tape.constant(batch.clone());
        let mut updates = Vec::new();
        let logits = self.forward(&mut tape, x, mode, &mut updates)?;
        apply_bn_updates(&mut self.store, &updates);
        Ok(tape.value(logits).clone())
    }

    /// Eval-mode logits without touching any state.
    pub fn predict(&self, batch: &Tensor<E>) -> Result<Tensor<E>> {
        let mut tape = Tape::new();
        let x = tape.constant(batch.clone());
        let logits = self.forward(&mut tape, x, Mode::Eval, &mut Vec::new())?;
        Ok(tape.value(logits).clone())
    }

    pub fn num_params(&self) -> usize {
        self.store.num_trainable()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_and_full_specs_validate() {
        let desk = ModelSpec::desk().validate().unwrap();
        assert_eq!(desk.stem, 32);
        assert_eq!(desk.block_inputs, vec![32, 16, 8, 4]);
        assert_eq!(desk.head, 4);
        let full = ModelSpec::full().validate().unwrap();
        assert_eq!(full.head, 7);
    }

    #[test]
    fn invalid_block_named_by_index() {
        let mut spec = ModelSpec::desk();
        spec.blocks[2].c_in = 15;
        match spec.validate() {
            Err(Error::Spec { block: Some(2), .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        let mut spec = ModelSpec::desk();
        spec.blocks[1].stride = 3;
        assert!(matches!(spec.validate(), Err(Error::Spec { block: Some(1), .. })));
        let mut spec = ModelSpec::desk();
        // stem 30, block 0 halves to 15: attention in block 1 cannot pool by 2
        spec.image_size = 60;
        assert!(matches!(spec.validate(), Err(Error::Spec { block: Some(1), .. })));
    }

    #[test]
    fn parameter_names_are_structured() {
        let m = build_model::<f32>(&ModelSpec::desk()).unwrap();
        for name in ["stem.w", "block3.ghost1.primary", "block1.attn.theta_v", "fc.weight", "block0.short.pw"] {
            assert!(m.store.param_by_name(name).is_some(), "missing {name}");
        }
        assert!(m.store.buffer_by_name("head.bn.running_var").is_some());
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = ModelSpec::full();
        assert_eq!(ModelSpec::from_json(&spec.to_json()).unwrap(), spec);
    }

    #[test]
    fn single_sample_train_forward_rejected() {
        let mut m = build_model::<f32>(&ModelSpec::desk()).unwrap();
        assert!(m.model_forward(&Tensor::zeros([1, 3, 64, 64]), Mode::Train).is_err());
    }
}
