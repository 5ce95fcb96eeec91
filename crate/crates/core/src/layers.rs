//! Parameterized building blocks. Each layer only stores ids into a
//! [`ParamStore`]; forward passes record onto a [`Tape`].

use rand::Rng;

use crate::autograd::{BufferId, ParamId, ParamStore, Tape, Var};
use crate::error::Result;
use crate::ops::{BatchStats, Mode, DEFAULT_EPSILON, DEFAULT_STAT_DECAY};
use crate::tensor::{Element, Tensor};

/// He-uniform bound for a given fan-in.
pub fn he_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv {
    pub weight: ParamId,
    pub stride: usize,
    pub padding: usize,
}

impl Conv {
    pub fn new<E: Element, R: Rng + ?Sized>(
        store: &mut ParamStore<E>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let bound = he_bound(c_in * kernel * kernel);
        let w = Tensor::uniform([c_out, c_in, kernel, kernel], -bound, bound, rng);
        Ok(Conv { weight: store.add_param(name, w)?, stride, padding: kernel / 2 })
    }

    pub fn forward<E: Element>(&self, tape: &mut Tape<E>, store: &ParamStore<E>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        tape.conv2d(x, w, self.stride, self.padding)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DepthwiseConv {
    pub weight: ParamId,
    pub stride: usize,
    pub padding: usize,
}

impl DepthwiseConv {
    pub fn new<E: Element, R: Rng + ?Sized>(
        store: &mut ParamStore<E>,
        name: &str,
        channels: usize,
        kernel: usize,
        stride: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let bound = he_bound(kernel * kernel);
        let w = Tensor::uniform([channels, 1, kernel, kernel], -bound, bound, rng);
        Ok(DepthwiseConv { weight: store.add_param(name, w)?, stride, padding: kernel / 2 })
    }

    pub fn forward<E: Element>(&self, tape: &mut Tape<E>, store: &ParamStore<E>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        tape.depthwise_conv2d(x, w, self.stride, self.padding)
    }
}

/// Running statistics produced by one train-mode batchnorm call.
#[derive(Clone, Debug)]
pub struct BnUpdate<E> {
    pub layer: BatchNorm,
    pub stats: BatchStats<E>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
    /// Number of running-stat updates applied so far.
    pub tracked: BufferId,
    pub epsilon: f64,
    pub decay: f64,
}

impl BatchNorm {
    pub fn new<E: Element>(store: &mut ParamStore<E>, name: &str, channels: usize, zero_gamma: bool) -> Result<Self> {
        let gamma = if zero_gamma { Tensor::zeros([channels]) } else { Tensor::ones([channels]) };
        Ok(BatchNorm {
            gamma: store.add_param(format!("{name}.gamma"), gamma)?,
            beta: store.add_param(format!("{name}.beta"), Tensor::zeros([channels]))?,
            running_mean: store.add_buffer(format!("{name}.running_mean"), Tensor::zeros([channels]))?,
            running_var: store.add_buffer(format!("{name}.running_var"), Tensor::ones([channels]))?,
            tracked: store.add_buffer(format!("{name}.tracked"), Tensor::zeros([1]))?,
            epsilon: DEFAULT_EPSILON,
            decay: DEFAULT_STAT_DECAY,
        })
    }

    pub fn forward<E: Element>(
        &self,
        tape: &mut Tape<E>,
        store: &ParamStore<E>,
        x: Var,
        mode: Mode,
        updates: &mut Vec<BnUpdate<E>>,
    ) -> Result<Var> {
        if mode == Mode::Eval && store.buffer(self.tracked).item() == E::zero() {
            tape.warn(format!(
                "eval-mode batchnorm {} has never been updated; using mean 0 / var 1",
                store.params()[self.gamma.0].name.trim_end_matches(".gamma")
            ));
        }
        let gamma = tape.param(store, self.gamma);
        let beta = tape.param(store, self.beta);
        let running = (store.buffer(self.running_mean).data(), store.buffer(self.running_var).data());
        let (out, stats) = tape.batchnorm(x, gamma, beta, mode, running, self.epsilon)?;
        if let Some(stats) = stats {
            updates.push(BnUpdate { layer: *self, stats });
        }
        Ok(out)
    }

    /// Folds batch statistics into the running averages:
    /// `running ← decay·running + (1 − decay)·batch`.
    pub fn apply_update<E: Element>(&self, store: &mut ParamStore<E>, stats: &BatchStats<E>) {
        let decay = E::from_f64(self.decay);
        let keep = E::one() - decay;
        for (r, &b) in store.buffer_mut(self.running_mean).data_mut().iter_mut().zip(&stats.mean) {
            *r = decay * *r + keep * b;
        }
        for (r, &b) in store.buffer_mut(self.running_var).data_mut().iter_mut().zip(&stats.var) {
            *r = decay * *r + keep * b;
        }
        store.buffer_mut(self.tracked).data_mut()[0] += E::one();
    }
}

/// Applies every collected update in recording order.
pub fn apply_bn_updates<E: Element>(store: &mut ParamStore<E>, updates: &[BnUpdate<E>]) {
    for u in updates {
        u.layer.apply_update(store, &u.stats);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<E: Element, R: Rng + ?Sized>(
        store: &mut ParamStore<E>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let bound = he_bound(fan_in);
        Ok(Linear {
            weight: store.add_param(format!("{name}.weight"), Tensor::uniform([fan_out, fan_in], -bound, bound, rng))?,
            bias: store.add_param(format!("{name}.bias"), Tensor::zeros([fan_out]))?,
        })
    }

    pub fn forward<E: Element>(&self, tape: &mut Tape<E>, store: &ParamStore<E>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.linear(x, w, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn running_stats_follow_ema() {
        let mut store = ParamStore::<f64>::new();
        let bn = BatchNorm::new(&mut store, "bn", 1, false).unwrap();
        let stats = BatchStats { mean: vec![2.0], var: vec![3.0] };
        bn.apply_update(&mut store, &stats);
        assert!((store.buffer(bn.running_mean).item() - 0.2).abs() < 1e-12);
        assert!((store.buffer(bn.running_var).item() - (0.9 + 0.3)).abs() < 1e-12);
        assert_eq!(store.buffer(bn.tracked).item(), 1.0);
    }

    #[test]
    fn untouched_eval_batchnorm_warns() {
        let mut store = ParamStore::<f32>::new();
        let bn = BatchNorm::new(&mut store, "blk.bn", 2, false).unwrap();
        let mut tape = Tape::new();
        let x = tape.input(Tensor::ones([1, 2, 2, 2]));
        let mut updates = Vec::new();
        bn.forward(&mut tape, &store, x, Mode::Eval, &mut updates).unwrap();
        assert_eq!(tape.warnings().len(), 1);
        assert!(tape.warnings()[0].contains("blk.bn"));
        assert!(updates.is_empty());
    }
}
