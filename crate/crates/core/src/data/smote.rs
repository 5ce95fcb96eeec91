//! Synthetic minority oversampling over flattened pixel tensors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DxType;
use crate::error::{invalid, Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_NEIGHBORS: usize = 5;

/// How far each minority class is topped up.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoteTarget {
    /// Every class reaches the majority count.
    Full,
    /// Every class reaches `ceil(ratio · majority)`, never fewer than it has.
    Ratio(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoteConfig {
    pub k: usize,
    pub seed: u64,
    pub target: SmoteTarget,
}

impl SmoteConfig {
    pub fn new(seed: u64) -> Self {
        SmoteConfig { k: DEFAULT_NEIGHBORS, seed, target: SmoteTarget::Full }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// `parent_a + lambda · (parent_b − parent_a)`; indices into the input.
    Interpolated { parent_a: usize, parent_b: usize, lambda: f32 },
    /// Copy of a singleton class member.
    Duplicate { parent: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSample {
    pub tensor: Tensor<f32>,
    pub label: usize,
    pub dx_type: Option<DxType>,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, Default)]
pub struct SmoteOutput {
    pub synthetic: Vec<SyntheticSample>,
    pub warnings: Vec<String>,
}

/// `a + λ(b − a)` elementwise.
pub fn interpolate(a: &Tensor<f32>, b: &Tensor<f32>, lambda: f32) -> Tensor<f32> {
    a.zip_map(b, |x, y| x + lambda * (y - x)).expect("interpolated tensors share a shape")
}

fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| ((x - y) as f64).powi(2)).sum()
}

/// Indices (into `members`) of the `k` nearest other members of `members[i]`,
/// ties broken by position.
fn nearest(tensors: &[Tensor<f32>], members: &[usize], i: usize, k: usize) -> Vec<usize> {
    let anchor = tensors[members[i]].data();
    let mut dists: Vec<(f64, usize)> = members
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(j, &m)| (squared_distance(anchor, tensors[m].data()), j))
        .collect();
    dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    dists.truncate(k);
    dists.into_iter().map(|(_, j)| j).collect()
}

/// Per-class count after oversampling.
pub fn target_counts(counts: &[usize], target: SmoteTarget) -> Vec<usize> {
    let majority = counts.iter().copied().max().unwrap_or(0);
    counts
        .iter()
        .map(|&n| {
            if n == 0 {
                return 0;
            }
            match target {
                SmoteTarget::Full => majority,
                SmoteTarget::Ratio(r) => ((r * majority as f64).ceil() as usize).clamp(n, majority),
            }
        })
        .collect()
}

/// Generates the synthetic samples that bring each class up to its target.
/// Originals are left untouched; the caller appends the output to them.
/// Classes absent from `labels` stay absent.
pub fn smote_oversample(
    tensors: &[Tensor<f32>],
    labels: &[usize],
    dx_types: &[Option<DxType>],
    num_classes: usize,
    config: &SmoteConfig,
) -> Result<SmoteOutput> {
    if tensors.len() != labels.len() || tensors.len() != dx_types.len() {
        return Err(invalid("smote inputs must have equal lengths"));
    }
    if config.k == 0 {
        return Err(invalid("smote needs k >= 1"));
    }
    if let SmoteTarget::Ratio(r) = config.target {
        if !(r > 0.0 && r <= 1.0) {
            return Err(invalid(format!("smote target ratio {r} must lie in (0, 1]")));
        }
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= num_classes {
            return Err(invalid(format!("label {l} out of range for {num_classes} classes")));
        }
        members[l].push(i);
    }
    let counts: Vec<usize> = members.iter().map(Vec::len).collect();
    let targets = target_counts(&counts, config.target);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = SmoteOutput::default();
    for (class, group) in members.iter().enumerate() {
        let need = targets[class] - group.len();
        if need == 0 {
            continue;
        }
        if group.len() == 1 {
            let msg = format!("class {class} has a single training sample; duplicating it {need} times");
            log::warn!("{msg}");
            out.warnings.push(msg);
            let parent = group[0];
            out.synthetic.extend((0..need).map(|_| SyntheticSample {
                tensor: tensors[parent].clone(),
                label: class,
                dx_type: dx_types[parent],
                provenance: Provenance::Duplicate { parent },
            }));
            continue;
        }
        for (tensor, provenance) in interpolate_group(tensors, group, need, config.k, &mut rng) {
            let Provenance::Interpolated { parent_a, .. } = provenance else { unreachable!() };
            out.synthetic.push(SyntheticSample { tensor, label: class, dx_type: dx_types[parent_a], provenance });
        }
    }
    Ok(out)
}

/// `need` interpolations inside one class (`group` indexes `tensors`, at
/// least two members).
fn interpolate_group(
    tensors: &[Tensor<f32>],
    group: &[usize],
    need: usize,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<(Tensor<f32>, Provenance)> {
    let k = k.min(group.len() - 1);
    let mut neighbors: Vec<Option<Vec<usize>>> = vec![None; group.len()];
    (0..need)
        .map(|_| {
            let i = rng.random_range(0..group.len());
            let nn = neighbors[i].get_or_insert_with(|| nearest(tensors, group, i, k));
            let j = nn[rng.random_range(0..nn.len())];
            let lambda: f32 = rng.random();
            let (a, b) = (group[i], group[j]);
            (interpolate(&tensors[a], &tensors[b], lambda), Provenance::Interpolated { parent_a: a, parent_b: b, lambda })
        })
        .collect()
}

/// Exactly `count` synthetic samples from a single class, for inspection.
/// Parent indices refer to `tensors`.
pub fn smote_samples(tensors: &[Tensor<f32>], count: usize, k: usize, seed: u64) -> Result<Vec<(Tensor<f32>, Provenance)>> {
    if tensors.len() < 2 {
        return Err(Error::Data(format!("SMOTE needs at least 2 samples of the class, got {}", tensors.len())));
    }
    if k == 0 {
        return Err(invalid("smote needs k >= 1"));
    }
    let group: Vec<usize> = (0..tensors.len()).collect();
    Ok(interpolate_group(tensors, &group, count, k, &mut ChaCha8Rng::seed_from_u64(seed)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(v: &[f32]) -> Tensor<f32> {
        Tensor::new([v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn single_class_preview() {
        let tensors: Vec<_> = (0..4).map(|i| point(&[i as f32, 1.0])).collect();
        let out = smote_samples(&tensors, 6, 2, 3).unwrap();
        assert_eq!(out.len(), 6);
        for (t, p) in &out {
            let Provenance::Interpolated { parent_a, parent_b, lambda } = *p else { panic!("expected interpolation") };
            assert!(parent_a != parent_b && (0.0..=1.0).contains(&lambda));
            assert_eq!(*t, interpolate(&tensors[parent_a], &tensors[parent_b], lambda));
        }
        assert!(matches!(smote_samples(&tensors[..1], 1, 2, 0), Err(Error::Data(_))));
    }

    #[test]
    fn lambda_endpoints() {
        let (a, b) = (point(&[1.0, -2.0]), point(&[3.0, 5.0]));
        assert_eq!(interpolate(&a, &b, 0.0), a);
        assert_eq!(interpolate(&a, &b, 1.0), b);
    }

    #[test]
    fn balances_to_majority() {
        let tensors: Vec<_> = (0..9).map(|i| point(&[i as f32, (i * i) as f32])).collect();
        let labels = [0, 0, 0, 0, 0, 1, 1, 2, 2];
        let dx = [None; 9];
        let out = smote_oversample(&tensors, &labels, &dx, 3, &SmoteConfig::new(1)).unwrap();
        assert_eq!(out.synthetic.len(), 6);
        let mut counts = [5usize, 2, 2];
        for s in &out.synthetic {
            counts[s.label] += 1;
        }
        assert_eq!(counts, [5, 5, 5]);
    }

    #[test]
    fn nearest_neighbor_is_chosen_with_k1() {
        let tensors = vec![point(&[0.0]), point(&[1.0]), point(&[10.0]), point(&[50.0]), point(&[60.0])];
        let labels = [0, 0, 0, 1, 1];
        let mut cfg = SmoteConfig::new(4);
        cfg.k = 1;
        let out = smote_oversample(&tensors, &labels, &[None; 5], 2, &cfg).unwrap();
        assert_eq!(out.synthetic.len(), 1);
        match out.synthetic[0].provenance {
            Provenance::Interpolated { parent_a: 3, parent_b: 4, .. } | Provenance::Interpolated { parent_a: 4, parent_b: 3, .. } => {}
            p => panic!("unexpected provenance {p:?}"),
        }
    }

    #[test]
    fn singleton_class_is_duplicated_with_warning() {
        let tensors = vec![point(&[0.0]), point(&[1.0]), point(&[2.0])];
        let out = smote_oversample(&tensors, &[0, 0, 1], &[None; 3], 2, &SmoteConfig::new(0)).unwrap();
        assert_eq!(out.warnings.len(), 1);
        assert_eq!(out.synthetic[0].tensor, tensors[2]);
    }

    #[test]
    fn ratio_target() {
        assert_eq!(target_counts(&[100, 10, 60, 0], SmoteTarget::Ratio(0.5)), vec![100, 50, 60, 0]);
        assert_eq!(target_counts(&[100, 10], SmoteTarget::Full), vec![100, 100]);
    }
}
