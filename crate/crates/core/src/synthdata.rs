//! Synthetic category-discovery datasets and dual-view batching.
//!
//! Class clusters are isotropic Gaussians whose means sit on a sphere of
//! radius `separation`. Known classes come first (`0..n_known`), novel
//! classes after. A fixed fraction of each known class is labeled; novel
//! samples never are.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{GcdError, Result};
use crate::numerics::{norm, Matrix};

/// Probability of zeroing a coordinate during augmentation.
pub const DROPOUT_PROB: f64 = 0.1;

const MAX_REJECTIONS: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct GcdDataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub known_classes: BTreeSet<usize>,
    pub novel_classes: BTreeSet<usize>,
    /// Label mask `M`: true where the sample is labeled.
    pub labeled_flags: Vec<bool>,
}

impl GcdDataset {
    /// Builds a dataset from loose parts and checks every invariant.
    pub fn new(
        features: Matrix,
        labels: Vec<usize>,
        known_classes: BTreeSet<usize>,
        labeled_flags: Vec<bool>,
    ) -> Result<Self> {
        let all: BTreeSet<usize> = labels.iter().copied().collect();
        let novel_classes = all.difference(&known_classes).copied().collect();
        let ds = Self {
            features,
            labels,
            known_classes,
            novel_classes,
            labeled_flags,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// `K = |known ∪ novel|`.
    pub fn num_classes(&self) -> usize {
        self.known_classes.len() + self.novel_classes.len()
    }

    pub fn num_labeled(&self) -> usize {
        self.labeled_flags.iter().filter(|f| **f).count()
    }

    pub fn unlabeled_indices(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| !self.labeled_flags[i])
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        if self.features.rows() != n || self.labeled_flags.len() != n {
            return Err(GcdError::Shape(format!(
                "{} feature rows, {} labels, {} flags",
                self.features.rows(),
                n,
                self.labeled_flags.len()
            )));
        }
        if !self.features.is_finite() {
            return Err(GcdError::InvalidParameter("non-finite feature".into()));
        }
        if self.known_classes.is_empty() {
            return Err(GcdError::InvalidParameter("no known classes".into()));
        }
        if !self.known_classes.is_disjoint(&self.novel_classes) {
            return Err(GcdError::InvalidParameter(
                "known and novel classes overlap".into(),
            ));
        }
        let k = self.num_classes();
        let expected: BTreeSet<usize> = (0..k).collect();
        let present: BTreeSet<usize> = self
            .known_classes
            .union(&self.novel_classes)
            .copied()
            .collect();
        if present != expected {
            return Err(GcdError::InvalidParameter(format!(
                "class ids must be exactly 0..{k}"
            )));
        }
        let mut unlabeled_per_class = vec![0usize; k];
        for (i, &y) in self.labels.iter().enumerate() {
            if y >= k {
                return Err(GcdError::InvalidParameter(format!(
                    "sample {i} has label {y} outside 0..{k}"
                )));
            }
            if self.labeled_flags[i] {
                if !self.known_classes.contains(&y) {
                    return Err(GcdError::InvalidParameter(format!(
                        "sample {i} is labeled but class {y} is novel"
                    )));
                }
            } else {
                unlabeled_per_class[y] += 1;
            }
        }
        if let Some(c) = unlabeled_per_class.iter().position(|&c| c == 0) {
            return Err(GcdError::InvalidParameter(format!(
                "class {c} has no unlabeled samples"
            )));
        }
        Ok(())
    }
}

/// Parameters of [`generate_dataset`].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SynthSpec {
    pub n_known: usize,
    pub n_novel: usize,
    pub per_class: usize,
    pub dim: usize,
    pub separation: f64,
    pub noise: f64,
    pub labeled_ratio: f64,
    pub seed: u64,
}

pub fn generate_dataset(spec: &SynthSpec) -> Result<GcdDataset> {
    let SynthSpec {
        n_known,
        n_novel,
        per_class,
        dim,
        separation,
        noise,
        labeled_ratio,
        seed,
    } = *spec;
    if n_known < 1 {
        return Err(GcdError::InvalidParameter("n_known must be >= 1".into()));
    }
    if per_class < 4 {
        return Err(GcdError::InvalidParameter("per_class must be >= 4".into()));
    }
    if dim < 1 {
        return Err(GcdError::InvalidParameter("dim must be >= 1".into()));
    }
    if !(labeled_ratio > 0.0 && labeled_ratio < 1.0) {
        return Err(GcdError::InvalidParameter(format!(
            "labeled_ratio must lie in (0, 1), got {labeled_ratio}"
        )));
    }
    if !(separation > 0.0) || !(noise > 0.0) {
        return Err(GcdError::InvalidParameter(
            "separation and noise must be positive".into(),
        ));
    }

    let k = n_known + n_novel;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let min_dist = separation * noise;
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut attempts = 0;
    while means.len() < k {
        attempts += 1;
        if attempts > MAX_REJECTIONS * k {
            return Err(GcdError::Generation(format!(
                "could not place {k} means on a sphere of radius {separation} \
                 with pairwise distance >= {min_dist}"
            )));
        }
        let mut m: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&m);
        if n == 0.0 {
            continue;
        }
        m.iter_mut().for_each(|v| *v *= separation / n);
        let ok = means.iter().all(|o| {
            let d2: f64 = o.iter().zip(&m).map(|(a, b)| (a - b).powi(2)).sum();
            d2.sqrt() >= min_dist
        });
        if ok {
            means.push(m);
        }
    }

    let n_labeled = (labeled_ratio * per_class as f64).floor() as usize;
    let n = k * per_class;
    let mut features = Matrix::zeros(n, dim);
    let mut labels = Vec::with_capacity(n);
    let mut labeled_flags = Vec::with_capacity(n);
    for (c, mean) in means.iter().enumerate() {
        for j in 0..per_class {
            let row = features.row_mut(labels.len());
            for (x, m) in row.iter_mut().zip(mean) {
                let e: f64 = rng.sample(StandardNormal);
                *x = m + noise * e;
            }
            labels.push(c);
            labeled_flags.push(c < n_known && j < n_labeled);
        }
    }
    GcdDataset::new(features, labels, (0..n_known).collect(), labeled_flags)
}

/// Adds `N(0, strength²)` noise to every coordinate, then zeroes each
/// coordinate with probability `dropout`.
pub fn augment_view<R: Rng + ?Sized>(
    x: &[f64],
    strength: f64,
    dropout: f64,
    rng: &mut R,
) -> Vec<f64> {
    x.iter()
        .map(|v| {
            let mut out = *v;
            if strength > 0.0 {
                let e: f64 = rng.sample(StandardNormal);
                out += strength * e;
            }
            if dropout > 0.0 && rng.random_bool(dropout) {
                out = 0.0;
            }
            out
        })
        .collect()
}

/// One mini-batch of paired augmented views.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub view1: Matrix,
    pub view2: Matrix,
    /// Ground-truth labels; only meaningful where `mask` is true.
    pub labels: Vec<usize>,
    pub mask: Vec<bool>,
    pub sample_ids: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_ids.is_empty()
    }

    /// Both views stacked: rows `0..b` are view one, `b..2b` view two.
    pub fn stacked(&self) -> Matrix {
        self.view1
            .vstack(&self.view2)
            .expect("views share a column count")
    }
}

/// Augmentation settings used by [`make_batches`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Augmentation {
    pub strength: f64,
    pub dropout: f64,
}

impl Augmentation {
    pub fn new(strength: f64) -> Self {
        Self {
            strength,
            dropout: DROPOUT_PROB,
        }
    }

    pub fn none() -> Self {
        Self {
            strength: 0.0,
            dropout: 0.0,
        }
    }
}

/// Shuffles the dataset with `seed` and splits it into batches of
/// `batch_size` (the last one may be short). Each sample gets two
/// independent augmentations.
pub fn make_batches(
    dataset: &GcdDataset,
    batch_size: usize,
    aug: Augmentation,
    seed: u64,
) -> Result<Vec<Batch>> {
    if batch_size == 0 || batch_size > dataset.len() {
        return Err(GcdError::InvalidParameter(format!(
            "batch size {batch_size} must lie in 1..={}",
            dataset.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng);
    let d = dataset.dim();
    let batches = order
        .chunks(batch_size)
        .map(|ids| {
            let mut view1 = Matrix::zeros(ids.len(), d);
            let mut view2 = Matrix::zeros(ids.len(), d);
            for (r, &i) in ids.iter().enumerate() {
                let x = dataset.features.row(i);
                view1.row_mut(r).copy_from_slice(&augment_view(
                    x,
                    aug.strength,
                    aug.dropout,
                    &mut rng,
                ));
                view2.row_mut(r).copy_from_slice(&augment_view(
                    x,
                    aug.strength,
                    aug.dropout,
                    &mut rng,
                ));
            }
            Batch {
                view1,
                view2,
                labels: ids.iter().map(|&i| dataset.labels[i]).collect(),
                mask: ids.iter().map(|&i| dataset.labeled_flags[i]).collect(),
                sample_ids: ids.to_vec(),
            }
        })
        .collect();
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(seed: u64) -> SynthSpec {
        SynthSpec {
            n_known: 5,
            n_novel: 5,
            per_class: 40,
            dim: 8,
            separation: 4.0,
            noise: 0.5,
            labeled_ratio: 0.5,
            seed,
        }
    }

    #[test]
    fn split_arithmetic() {
        let ds = generate_dataset(&spec(1)).unwrap();
        assert_eq!(ds.len(), 400);
        assert_eq!(ds.num_labeled(), 100);
        assert_eq!(ds.unlabeled_indices().len(), 300);
        assert_eq!(ds.num_classes(), 10);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_dataset(&spec(7)).unwrap();
        let b = generate_dataset(&spec(7)).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&spec(8)).unwrap();
        assert_ne!(a.features, c.features);
    }

    #[test]
    fn impossible_separation_fails() {
        let mut s = spec(0);
        s.dim = 2;
        s.n_known = 20;
        s.n_novel = 20;
        s.separation = 1.0;
        s.noise = 1.5;
        assert!(matches!(generate_dataset(&s), Err(GcdError::Generation(_))));
    }

    #[test]
    fn bad_parameters_rejected() {
        let mut s = spec(0);
        s.labeled_ratio = 1.0;
        assert!(generate_dataset(&s).is_err());
        let mut s = spec(0);
        s.per_class = 3;
        assert!(generate_dataset(&s).is_err());
        let mut s = spec(0);
        s.n_known = 0;
        assert!(generate_dataset(&s).is_err());
    }

    #[test]
    fn augment_identity_and_determinism() {
        let x = [1.0, -2.0, 3.5];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(augment_view(&x, 0.0, 0.0, &mut rng), x.to_vec());
        let a = augment_view(&x, 0.3, 0.1, &mut ChaCha8Rng::seed_from_u64(5));
        let b = augment_view(&x, 0.3, 0.1, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }

    #[test]
    fn augment_perturbation_norm_matches_chi_mean() {
        // E‖N(0, σ² I_d)‖ = σ √2 Γ((d+1)/2) / Γ(d/2); for d = 20 this is
        // 0.1 * 4.4159..., close to 0.1 √20 = 0.4472.
        let d = 20;
        let x = vec![0.0; d];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 1000;
        let mean: f64 = (0..draws)
            .map(|_| norm(&augment_view(&x, 0.1, 0.0, &mut rng)))
            .sum::<f64>()
            / draws as f64;
        let target = 0.1 * (d as f64).sqrt();
        assert!((mean - target).abs() / target < 0.1, "mean norm {mean}");
    }

    #[test]
    fn batches_partition_one_epoch() {
        let mut s = spec(2);
        s.per_class = 40;
        let ds = generate_dataset(&s).unwrap();
        let batches = make_batches(&ds, 128, Augmentation::new(0.1), 9).unwrap();
        let sizes: Vec<usize> = batches.iter().map(Batch::len).collect();
        assert_eq!(sizes, vec![128, 128, 128, 16]);
        let mut ids: Vec<usize> = batches.iter().flat_map(|b| b.sample_ids.clone()).collect();
        ids.sort_unstable();
        assert_eq!(ids, (0..400).collect::<Vec<_>>());
        for b in &batches {
            for (r, &i) in b.sample_ids.iter().enumerate() {
                assert_eq!(b.mask[r], ds.labeled_flags[i]);
                assert_eq!(b.labels[r], ds.labels[i]);
            }
        }
    }

    #[test]
    fn unaugmented_views_coincide() {
        let ds = generate_dataset(&spec(4)).unwrap();
        for b in make_batches(&ds, 64, Augmentation::none(), 1).unwrap() {
            assert_eq!(b.view1, b.view2);
            for (r, &i) in b.sample_ids.iter().enumerate() {
                assert_eq!(b.view1.row(r), ds.features.row(i));
            }
        }
    }

    #[test]
    fn oversized_batch_rejected() {
        let ds = generate_dataset(&spec(4)).unwrap();
        assert!(make_batches(&ds, 401, Augmentation::none(), 1).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn generated_datasets_are_valid(
            n_known in 1usize..6,
            n_novel in 0usize..6,
            per_class in 4usize..20,
            dim in 2usize..12,
            ratio in 0.05f64..0.95,
            seed in any::<u64>(),
        ) {
            let ds = generate_dataset(&SynthSpec {
                n_known, n_novel, per_class, dim,
                separation: 3.0, noise: 0.5, labeled_ratio: ratio, seed,
            }).unwrap();
            ds.validate().unwrap();
            let per = (ratio * per_class as f64).floor() as usize;
            prop_assert_eq!(ds.num_labeled(), per * n_known);
            for i in 0..ds.len() {
                if ds.labeled_flags[i] {
                    prop_assert!(ds.known_classes.contains(&ds.labels[i]));
                }
            }
        }
    }
}
