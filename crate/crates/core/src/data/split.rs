use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Train,
    Val,
    Test,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Train, Partition::Val, Partition::Test];

    pub fn parse(s: &str) -> Option<Partition> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Some(Partition::Train),
            "val" | "valid" | "validation" => Some(Partition::Val),
            "test" => Some(Partition::Test),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Val => "val",
            Partition::Test => "test",
        }
    }
}

/// Partition of every record index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub assignment: Vec<Partition>,
    pub seed: u64,
}

impl SplitAssignment {
    pub fn indices(&self, part: Partition) -> Vec<usize> {
        self.assignment.iter().enumerate().filter(|(_, &p)| p == part).map(|(i, _)| i).collect()
    }

    pub fn sizes(&self) -> [usize; 3] {
        let mut s = [0; 3];
        for p in &self.assignment {
            s[*p as usize] += 1;
        }
        s
    }
}

pub const DEFAULT_RATIOS: [f64; 3] = [0.8, 0.1, 0.1];

/// Seeded shuffle followed by a proportional cut.
///
/// Plain mode cuts the shuffled list at `round(n·r_train)` and
/// `round(n·r_val)`. Stratified mode shuffles within each class, lays the
/// classes out one after another and hands out positions by largest running
/// deficit against the target ratios, so every class is cut proportionally
/// and the overall sizes stay within one record of the targets.
pub fn split(labels: &[usize], seed: u64, ratios: [f64; 3], stratified: bool) -> Result<SplitAssignment> {
    if ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(invalid(format!("split ratios {ratios:?} must be non-negative and sum to 1")));
    }
    let n = labels.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![Partition::Train; n];
    if !stratified {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let n_train = (n as f64 * ratios[0]).round() as usize;
        let n_val = ((n as f64 * ratios[1]).round() as usize).min(n - n_train);
        for (pos, &i) in order.iter().enumerate() {
            assignment[i] = if pos < n_train {
                Partition::Train
            } else if pos < n_train + n_val {
                Partition::Val
            } else {
                Partition::Test
            };
        }
        return Ok(SplitAssignment { assignment, seed });
    }

    let num_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut counts = [0usize; 3];
    let mut pos = 0usize;
    for members in &mut by_class {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            pos += 1;
            let mut best = 0;
            let mut best_deficit = f64::NEG_INFINITY;
            for (k, &r) in ratios.iter().enumerate() {
                let deficit = pos as f64 * r - counts[k] as f64;
                if deficit > best_deficit + 1e-12 {
                    best = k;
                    best_deficit = deficit;
                }
            }
            counts[best] += 1;
            assignment[i] = Partition::ALL[best];
        }
    }
    Ok(SplitAssignment { assignment, seed })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_records_cut_8_1_1() {
        let s = split(&[0; 10], 3, DEFAULT_RATIOS, false).unwrap();
        assert_eq!(s.sizes(), [8, 1, 1]);
    }

    #[test]
    fn same_seed_same_assignment() {
        let labels: Vec<usize> = (0..57).map(|i| i % 4).collect();
        for stratified in [false, true] {
            assert_eq!(
                split(&labels, 11, DEFAULT_RATIOS, stratified).unwrap(),
                split(&labels, 11, DEFAULT_RATIOS, stratified).unwrap()
            );
        }
    }

    #[test]
    fn stratified_covers_every_class_in_every_part() {
        let sizes = [10, 13, 27, 10, 11, 60, 19];
        let labels: Vec<usize> = sizes.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect();
        for seed in 0..5 {
            let s = split(&labels, seed, DEFAULT_RATIOS, true).unwrap();
            for part in Partition::ALL {
                let idx = s.indices(part);
                for c in 0..sizes.len() {
                    assert!(idx.iter().any(|&i| labels[i] == c), "class {c} missing from {part:?}");
                }
            }
        }
    }

    #[test]
    fn bad_ratios_rejected() {
        assert!(split(&[0; 4], 0, [0.5, 0.5, 0.5], false).is_err());
    }
}
