//! Clustering accuracy under an optimal one-to-one cluster/class matching,
//! the k-means baseline, and per-epoch diagnostics.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{GcdError, Result};
use crate::losses::LossBreakdown;
use crate::model::{forward, ModelParams};
use crate::numerics::{argmax, max_value, softmax_rows, Matrix};
use crate::synthdata::GcdDataset;

/// Largest assignment problem accepted by [`hungarian_accuracy`].
pub const MAX_ASSIGNMENT: usize = 4096;

#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub acc_all: f64,
    pub acc_old: f64,
    pub acc_new: f64,
    /// Epoch mean of each loss term.
    pub loss: LossBreakdown,
    /// Unlabeled samples confidently predicted as a known class.
    pub known_count: usize,
    pub lr: f64,
    pub tau_t: f64,
}

/// Result of [`hungarian_accuracy`].
#[derive(Debug, Clone, PartialEq)]
pub struct Accuracy {
    pub all: f64,
    pub old: f64,
    pub new: f64,
    pub correct_old: usize,
    pub correct_new: usize,
    pub total_old: usize,
    pub total_new: usize,
    /// `assignment[cluster] = class`.
    pub assignment: Vec<usize>,
}

/// Maximum-weight perfect matching on a square matrix of non-negative
/// integer weights. Returns `assignment[row] = col`.
///
/// Shortest augmenting paths with potentials, `O(n³)`.
pub fn max_weight_assignment(weights: &[Vec<i64>]) -> Vec<usize> {
    let n = weights.len();
    if n == 0 {
        return Vec::new();
    }
    let max = weights.iter().flatten().copied().max().unwrap_or(0);
    // 1-based arrays; column 0 is a sentinel.
    let cost = |i: usize, j: usize| max - weights[i - 1][j - 1];
    let inf = i64::MAX / 4;
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
    }
    assignment
}

/// Clustering accuracy of `pred` against `truth`.
///
/// A single optimal cluster-to-class matching is computed on all samples and
/// then reused to score the old (true class in `old_set`) and new subsets.
pub fn hungarian_accuracy(
    pred: &[usize],
    truth: &[usize],
    old_set: &BTreeSet<usize>,
) -> Result<Accuracy> {
    if pred.len() != truth.len() {
        return Err(GcdError::Shape(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    let size = pred.iter().chain(truth).copied().max().map_or(0, |m| m + 1);
    if size > MAX_ASSIGNMENT {
        return Err(GcdError::Sizing(size, MAX_ASSIGNMENT));
    }
    let mut counts = vec![vec![0i64; size]; size];
    for (&p, &t) in pred.iter().zip(truth) {
        counts[p][t] += 1;
    }
    let assignment = max_weight_assignment(&counts);
    let (mut correct_old, mut correct_new, mut total_old, mut total_new) = (0, 0, 0, 0);
    for (&p, &t) in pred.iter().zip(truth) {
        let hit = usize::from(assignment[p] == t);
        if old_set.contains(&t) {
            total_old += 1;
            correct_old += hit;
        } else {
            total_new += 1;
            correct_new += hit;
        }
    }
    let frac = |c: usize, n: usize| if n == 0 { 0.0 } else { c as f64 / n as f64 };
    Ok(Accuracy {
        all: frac(correct_old + correct_new, total_old + total_new),
        old: frac(correct_old, total_old),
        new: frac(correct_new, total_new),
        correct_old,
        correct_new,
        total_old,
        total_new,
        assignment,
    })
}

/// Output of [`kmeans`].
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Matrix,
    /// Inertia after each Lloyd iteration.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// k-means++ seeding followed by Lloyd iterations until the assignment stops
/// changing or `max_iters` is reached.
#[allow(clippy::needless_range_loop)]
pub fn kmeans(features: &Matrix, k: usize, seed: u64, max_iters: usize) -> Result<KMeansResult> {
    let n = features.rows();
    if k == 0 || n < k {
        return Err(GcdError::InvalidParameter(format!(
            "k-means needs 1 <= K <= N, got K={k}, N={n}"
        )));
    }
    let d = features.cols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut centroids = Matrix::zeros(k, d);
    let first = rng.random_range(0..n);
    centroids.row_mut(0).copy_from_slice(features.row(first));
    let mut closest: Vec<f64> = (0..n)
        .map(|i| sq_dist(features.row(i), centroids.row(0)))
        .collect();
    for c in 1..k {
        let total: f64 = closest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, w) in closest.iter().enumerate() {
                if target < *w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).copy_from_slice(features.row(pick));
        for (i, best) in closest.iter_mut().enumerate() {
            *best = best.min(sq_dist(features.row(i), centroids.row(c)));
        }
    }

    let mut assignments = vec![usize::MAX; n];
    let mut inertia_history = Vec::new();
    let mut iterations = 0;
    for _ in 0..max_iters.max(1) {
        iterations += 1;
        let mut changed = false;
        let mut inertia = 0.0;
        for i in 0..n {
            let x = features.row(i);
            let (best, dist) = (0..k)
                .map(|c| (c, sq_dist(x, centroids.row(c))))
                .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
            if assignments[i] != best {
                assignments[i] = best;
                changed = true;
            }
            inertia += dist;
        }
        inertia_history.push(inertia);
        if !changed {
            break;
        }

        let mut sums = Matrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let c = assignments[i];
            counts[c] += 1;
            sums.row_mut(c)
                .iter_mut()
                .zip(features.row(i))
                .for_each(|(s, x)| *s += x);
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                let row: Vec<f64> = sums.row(c).iter().map(|s| s * inv).collect();
                centroids.row_mut(c).copy_from_slice(&row);
            }
        }
        // Empty clusters take the point farthest from its own centroid.
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .map(|i| (i, sq_dist(features.row(i), centroids.row(assignments[i]))))
                    .fold((0, -1.0), |a, b| if b.1 > a.1 { b } else { a })
                    .0;
                let row = features.row(far).to_vec();
                centroids.row_mut(c).copy_from_slice(&row);
                counts[assignments[far]] -= 1;
                assignments[far] = c;
                counts[c] = 1;
            }
        }
    }
    Ok(KMeansResult {
        assignments,
        centroids,
        inertia_history,
        iterations,
    })
}

/// Best of `restarts` independent [`kmeans`] runs by final inertia. Run `r`
/// is seeded with `seed + r`.
pub fn kmeans_restarts(
    features: &Matrix,
    k: usize,
    seed: u64,
    max_iters: usize,
    restarts: usize,
) -> Result<KMeansResult> {
    let mut best: Option<KMeansResult> = None;
    for r in 0..restarts.max(1) as u64 {
        let run = kmeans(features, k, seed.wrapping_add(r), max_iters)?;
        let inertia = *run.inertia_history.last().expect("at least one iteration");
        if best
            .as_ref()
            .is_none_or(|b| inertia < *b.inertia_history.last().unwrap())
        {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Samples whose top probability reaches `delta` on a known class.
pub fn count_known_high_conf(dists: &Matrix, known: &BTreeSet<usize>, delta: f64) -> usize {
    dists
        .iter_rows()
        .filter(|p| max_value(p) >= delta && known.contains(&argmax(p)))
        .count()
}

/// Settings [`evaluate`] needs from the training configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSettings {
    pub tau_s: f64,
    pub delta: f64,
}

/// Accuracy and diagnostics over the clean unlabeled samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: Accuracy,
    pub known_count: usize,
    pub predictions: Vec<usize>,
}

pub fn evaluate(
    params: &ModelParams,
    dataset: &GcdDataset,
    settings: &EvalSettings,
) -> Result<Evaluation> {
    let idx = dataset.unlabeled_indices();
    let rows: Vec<Vec<f64>> = idx
        .iter()
        .map(|&i| dataset.features.row(i).to_vec())
        .collect();
    let x = Matrix::from_rows(&rows)?;
    let cache = forward(params, &x)?;
    let dists = softmax_rows(&cache.logits, settings.tau_s);
    let predictions: Vec<usize> = dists.iter_rows().map(argmax).collect();
    let truth: Vec<usize> = idx.iter().map(|&i| dataset.labels[i]).collect();
    let accuracy = hungarian_accuracy(&predictions, &truth, &dataset.known_classes)?;
    let known_count = count_known_high_conf(&dists, &dataset.known_classes, settings.delta);
    Ok(Evaluation {
        accuracy,
        known_count,
        predictions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{generate_dataset, SynthSpec};
    use proptest::prelude::*;
    use rand::Rng;

    fn brute_force_max(w: &[Vec<i64>]) -> i64 {
        fn rec(w: &[Vec<i64>], row: usize, used: &mut Vec<bool>) -> i64 {
            if row == w.len() {
                return 0;
            }
            let mut best = i64::MIN;
            for c in 0..w.len() {
                if !used[c] {
                    used[c] = true;
                    best = best.max(w[row][c] + rec(w, row + 1, used));
                    used[c] = false;
                }
            }
            best
        }
        rec(w, 0, &mut vec![false; w.len()])
    }

    #[test]
    fn perfect_and_permuted_predictions() {
        let truth = vec![0, 1, 2, 3, 0, 1, 2, 3, 3];
        let old: BTreeSet<usize> = [0, 1].into();
        let acc = hungarian_accuracy(&truth, &truth, &old).unwrap();
        assert_eq!((acc.all, acc.old, acc.new), (1.0, 1.0, 1.0));
        let perm = [2, 0, 3, 1];
        let pred: Vec<usize> = truth.iter().map(|&t| perm[t]).collect();
        let acc = hungarian_accuracy(&pred, &truth, &old).unwrap();
        assert_eq!((acc.all, acc.old, acc.new), (1.0, 1.0, 1.0));
    }

    #[test]
    fn single_global_assignment_is_shared() {
        // Cluster 0 holds two old samples and three new ones: the global
        // matching gives it to new class 1, so old accuracy drops to zero.
        let truth = vec![0, 0, 1, 1, 1];
        let pred = vec![0, 0, 0, 0, 0];
        let acc = hungarian_accuracy(&pred, &truth, &[0].into()).unwrap();
        assert_eq!(acc.old, 0.0);
        assert_eq!(acc.new, 1.0);
        assert_eq!(acc.correct_old + acc.correct_new, 3);
    }

    #[test]
    fn length_mismatch_errors() {
        assert!(hungarian_accuracy(&[0, 1], &[0], &BTreeSet::new()).is_err());
        assert!(matches!(
            hungarian_accuracy(&[MAX_ASSIGNMENT], &[0], &BTreeSet::new()),
            Err(GcdError::Sizing(..))
        ));
    }

    proptest! {
        #[test]
        fn assignment_matches_brute_force(
            w in (1usize..=6).prop_flat_map(|k| {
                proptest::collection::vec(proptest::collection::vec(0i64..50, k), k)
            })
        ) {
            let a = max_weight_assignment(&w);
            let mut seen = vec![false; w.len()];
            for &c in &a { prop_assert!(!seen[c]); seen[c] = true; }
            let value: i64 = a.iter().enumerate().map(|(r, &c)| w[r][c]).sum();
            prop_assert_eq!(value, brute_force_max(&w));
        }

        #[test]
        fn accuracy_invariant_under_relabeling(
            pairs in proptest::collection::vec((0usize..5, 0usize..5), 1..60),
            perm in Just((0..5).collect::<Vec<usize>>()).prop_shuffle(),
        ) {
            let pred: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let truth: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            let old: BTreeSet<usize> = [0, 1].into();
            let a = hungarian_accuracy(&pred, &truth, &old).unwrap();
            let relabeled: Vec<usize> = pred.iter().map(|&p| perm[p]).collect();
            let b = hungarian_accuracy(&relabeled, &truth, &old).unwrap();
            prop_assert_eq!(a.correct_old + a.correct_new, b.correct_old + b.correct_new);
            prop_assert_eq!(a.all, b.all);
            let m = truth.len() as f64;
            prop_assert_eq!(
                (a.all * m).round() as usize,
                a.correct_old + a.correct_new
            );
        }
    }

    fn blobs(k: usize, seed: u64) -> GcdDataset {
        generate_dataset(&SynthSpec {
            n_known: 1,
            n_novel: k - 1,
            per_class: 30,
            dim: 10,
            separation: 10.0,
            noise: 0.5,
            labeled_ratio: 0.5,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn kmeans_recovers_separated_blobs() {
        for k in [2, 5, 10] {
            let ds = blobs(k, k as u64);
            let res = kmeans_restarts(&ds.features, k, 3, 100, 10).unwrap();
            let acc = hungarian_accuracy(&res.assignments, &ds.labels, &ds.known_classes).unwrap();
            assert_eq!(acc.all, 1.0, "K={k}");
        }
    }

    #[test]
    fn kmeans_inertia_non_increasing_and_deterministic() {
        let ds = blobs(5, 1);
        let a = kmeans(&ds.features, 7, 11, 50).unwrap();
        assert!(a.inertia_history.windows(2).all(|w| w[1] <= w[0] + 1e-9));
        let b = kmeans(&ds.features, 7, 11, 50).unwrap();
        assert_eq!(a.assignments, b.assignments);
    }

    #[test]
    fn kmeans_k_equals_n() {
        let x = Matrix::from_rows(&[vec![0.0, 1.0], vec![3.0, 4.0], vec![-2.0, 0.5]]).unwrap();
        let res = kmeans(&x, 3, 0, 10).unwrap();
        let mut a = res.assignments.clone();
        a.sort_unstable();
        assert_eq!(a, vec![0, 1, 2]);
        assert_eq!(*res.inertia_history.last().unwrap(), 0.0);
        assert!(kmeans(&x, 4, 0, 10).is_err());
    }

    #[test]
    fn known_count_thresholds() {
        let d = Matrix::from_rows(&[
            vec![0.9, 0.1, 0.0],
            vec![0.2, 0.7, 0.1],
            vec![0.1, 0.1, 0.8],
        ])
        .unwrap();
        let known: BTreeSet<usize> = [0, 1].into();
        assert_eq!(count_known_high_conf(&d, &known, 1.0 + 1e-9), 0);
        assert_eq!(count_known_high_conf(&d, &known, 1e-9), 2);
        assert_eq!(count_known_high_conf(&d, &known, 0.8), 1);
    }

    #[test]
    fn known_count_matches_rescan() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let known: BTreeSet<usize> = [0, 2, 3].into();
        for _ in 0..100 {
            let logits = Matrix::from_vec(
                20,
                5,
                (0..100).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let d = softmax_rows(&logits, 0.1);
            let delta = rng.random_range(0.2..1.0);
            let mut expected = 0;
            for r in 0..d.rows() {
                let row = d.row(r);
                let mut best = 0;
                for c in 1..row.len() {
                    if row[c] > row[best] {
                        best = c;
                    }
                }
                if row[best] >= delta && known.contains(&best) {
                    expected += 1;
                }
            }
            assert_eq!(count_known_high_conf(&d, &known, delta), expected);
        }
    }

    #[test]
    fn evaluation_is_deterministic_and_unlabeled_only() {
        let ds = blobs(4, 9);
        let p = ModelParams::init(&crate::model::ModelDims::new(ds.dim(), 4), 2).unwrap();
        let s = EvalSettings {
            tau_s: 0.1,
            delta: 0.85,
        };
        let a = evaluate(&p, &ds, &s).unwrap();
        let b = evaluate(&p, &ds, &s).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.predictions.len(), ds.unlabeled_indices().len());
        assert_eq!(
            a.accuracy.total_old + a.accuracy.total_new,
            ds.len() - ds.num_labeled()
        );
    }
}
