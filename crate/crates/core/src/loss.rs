//! Imbalance-aware loss weighting.
//!
//! Every training sample gets weight `class_weight(label) × instance_weight(dx_type)`.
//! Class weights are `N / N_i` over the training split; instance weights grow
//! with the cost of the diagnostic method that confirmed the label.

use serde::{Deserialize, Serialize};

use crate::data::DxType;
use crate::error::{invalid, shape_err, Result};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub weights: Vec<f64>,
    pub counts: Vec<usize>,
    pub total: usize,
}

impl ClassWeights {
    pub fn get(&self, class: usize) -> f64 {
        self.weights[class]
    }

    /// All-ones weights for `k` classes (class weighting disabled).
    pub fn uniform(k: usize) -> Self {
        ClassWeights { weights: vec![1.0; k], counts: vec![0; k], total: 0 }
    }
}

/// `w_i = N / N_i` with `N = Σ N_i`. Every count must be positive.
pub fn class_weights(counts: &[usize]) -> Result<ClassWeights> {
    if counts.is_empty() {
        return Err(invalid("class weights need at least one class"));
    }
    if let Some(i) = counts.iter().position(|&c| c == 0) {
        return Err(invalid(format!("class {i} has no training samples, its weight N/N_i is undefined")));
    }
    let total: usize = counts.iter().sum();
    Ok(ClassWeights {
        weights: counts.iter().map(|&c| total as f64 / c as f64).collect(),
        counts: counts.to_vec(),
        total,
    })
}

/// Loss multiplier per diagnostic method; must be non-decreasing from
/// consensus to histopathology.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceWeightTable {
    pub consensus: f64,
    pub serial: f64,
    pub confocal: f64,
    pub histo: f64,
    #[serde(default = "one")]
    pub absent: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for InstanceWeightTable {
    fn default() -> Self {
        InstanceWeightTable { consensus: 1.0, serial: 1.25, confocal: 1.5, histo: 2.0, absent: 1.0 }
    }
}

impl InstanceWeightTable {
    pub fn validate(&self) -> Result<()> {
        let all = [self.consensus, self.serial, self.confocal, self.histo, self.absent];
        if all.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(invalid(format!("instance weights must be positive and finite: {self:?}")));
        }
        if !(self.consensus <= self.serial && self.serial <= self.confocal && self.confocal <= self.histo) {
            return Err(invalid(format!(
                "instance weights must not decrease from consensus to histo: {self:?}"
            )));
        }
        Ok(())
    }

    /// Table with every entry 1.0 (instance weighting disabled).
    pub fn flat() -> Self {
        InstanceWeightTable { consensus: 1.0, serial: 1.0, confocal: 1.0, histo: 1.0, absent: 1.0 }
    }
}

pub fn instance_weight(dx_type: Option<DxType>, table: &InstanceWeightTable) -> f64 {
    match dx_type {
        None => table.absent,
        Some(DxType::Consensus) => table.consensus,
        Some(DxType::Serial) => table.serial,
        Some(DxType::Confocal) => table.confocal,
        Some(DxType::Histo) => table.histo,
    }
}

/// Forward pieces shared by the functional and tape versions:
/// `(loss, softmax rows, per-sample gradient coefficient w_i / D)`.
pub(crate) fn weighted_cross_entropy_parts<E: Element>(
    logits: &Tensor<E>,
    labels: &[usize],
    sample_weights: &[E],
    normalize: bool,
) -> Result<(E, Tensor<E>, Vec<E>)> {
    let (n, k) = match *logits.shape() {
        [n, k] => (n, k),
        _ => return Err(shape_err(format!("logits must be [N, K], got {:?}", logits.shape()))),
    };
    if labels.len() != n || sample_weights.len() != n {
        return Err(shape_err(format!(
            "{n} logit rows but {} labels and {} weights",
            labels.len(),
            sample_weights.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(invalid(format!("label {bad} out of range for {k} classes")));
    }
    if sample_weights.iter().any(|&w| !(w > E::zero() && w.is_finite())) {
        return Err(invalid("sample weights must be positive"));
    }
    let denom = if normalize {
        sample_weights.iter().copied().sum::<E>()
    } else {
        E::from_f64(n as f64)
    };
    let mut probs = Vec::with_capacity(n * k);
    let mut total = E::zero();
    for (i, row) in logits.data().chunks(k).enumerate() {
        let max = row.iter().copied().fold(E::neg_infinity(), E::max);
        let sum_exp: E = row.iter().map(|&v| (v - max).exp()).sum();
        let log_z = max + sum_exp.ln();
        total += sample_weights[i] * (log_z - row[labels[i]]);
        probs.extend(row.iter().map(|&v| (v - max).exp() / sum_exp));
    }
    let coeffs = sample_weights.iter().map(|&w| w / denom).collect();
    Ok((total / denom, Tensor::new([n, k], probs)?, coeffs))
}

/// `Σ wᵢ·(−log softmax(logitsᵢ)[labelᵢ]) / D`, `D = Σ wᵢ` when normalizing, else `N`.
pub fn weighted_cross_entropy<E: Element>(
    logits: &Tensor<E>,
    labels: &[usize],
    sample_weights: &[E],
    normalize: bool,
) -> Result<E> {
    weighted_cross_entropy_parts(logits, labels, sample_weights, normalize).map(|(l, _, _)| l)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_counts_give_class_count() {
        let w = class_weights(&[5; 7]).unwrap();
        assert!(w.weights.iter().all(|&v| v == 7.0));
    }

    #[test]
    fn zero_count_rejected() {
        assert!(class_weights(&[10, 0, 0, 0, 0, 0, 0]).is_err());
    }

    #[test]
    fn default_table_lookup() {
        let t = InstanceWeightTable::default();
        t.validate().unwrap();
        assert_eq!(instance_weight(Some(DxType::Consensus), &t), 1.0);
        assert_eq!(instance_weight(None, &t), 1.0);
        assert_eq!(instance_weight(Some(DxType::Histo), &t), 2.0);
        let bad = InstanceWeightTable { serial: 0.5, ..t };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn hand_computed_binary_case() {
        let logits = Tensor::new([1, 2], vec![2.0f64, 0.0]).unwrap();
        let loss = weighted_cross_entropy(&logits, &[0], &[3.0], false).unwrap();
        let expected = 3.0 * (1.0 + (-2.0f64).exp()).ln();
        assert!((loss - expected).abs() < 1e-12);
        assert!((loss - 0.38079).abs() < 1e-5);
    }

    #[test]
    fn unit_weights_give_mean_ce() {
        let logits = Tensor::new([2, 3], vec![1.0f64, 2.0, 0.5, -1.0, 0.0, 3.0]).unwrap();
        let ce = |row: &[f64], y: usize| {
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            z.ln() - row[y]
        };
        let mean = (ce(&[1.0, 2.0, 0.5], 1) + ce(&[-1.0, 0.0, 3.0], 0)) / 2.0;
        for normalize in [true, false] {
            let l = weighted_cross_entropy(&logits, &[1, 0], &[1.0, 1.0], normalize).unwrap();
            assert!((l - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn huge_logits_stay_finite() {
        let logits = Tensor::new([2, 2], vec![1e4f32, -1e4, -1e4, 1e4]).unwrap();
        let l = weighted_cross_entropy(&logits, &[1, 0], &[1.0, 2.0], true).unwrap();
        assert!(l.is_finite());
        let confident = weighted_cross_entropy(
            &Tensor::new([1, 2], vec![1e4f64, 0.0]).unwrap(),
            &[0],
            &[1.0],
            true,
        )
        .unwrap();
        assert_eq!(confident, 0.0);
    }

    #[test]
    fn label_out_of_range_rejected() {
        let logits = Tensor::<f32>::zeros([1, 3]);
        assert!(weighted_cross_entropy(&logits, &[3], &[1.0], true).is_err());
    }
}
