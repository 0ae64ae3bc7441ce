//! Independent reference implementations used by the integration tests.

#![allow(dead_code)]

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgc_dpl::affinity::ClusterAssignment;
use sgc_dpl::embedding::{EmbeddingSet, Sample, SimilarityMatrix, Split};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_points(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| (0..dim).map(|_| r.random_range(-1.0..1.0)).collect())
        .collect()
}

pub fn unlabeled_set(points: &[Vec<f64>]) -> EmbeddingSet {
    let samples = points
        .iter()
        .map(|p| Sample::new(p.clone(), None, None, Split::Unlabeled).unwrap())
        .collect();
    EmbeddingSet::new(samples).unwrap()
}

pub fn set_with(rows: &[(Vec<f64>, u32, u32, Split)]) -> EmbeddingSet {
    let samples = rows
        .iter()
        .map(|(f, id, cam, split)| Sample::new(f.clone(), Some(*id), Some(*cam), *split).unwrap())
        .collect();
    EmbeddingSet::new(samples).unwrap()
}

/// `-||x_i - x_j||^2` by a plain double loop, zero diagonal.
pub fn naive_similarity(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut s = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let mut acc = 0.0;
                for d in 0..points[i].len() {
                    let diff = points[i][d] - points[j][d];
                    acc += diff * diff;
                }
                s[i][j] = -acc;
            }
        }
    }
    s
}

pub fn sorted_median(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

pub fn matrix(s: &SimilarityMatrix) -> Vec<Vec<f64>> {
    (0..s.n()).map(|i| s.row(i).to_vec()).collect()
}

/// Objective of a given assignment: exemplar preferences plus each member's
/// similarity to its exemplar.
pub fn objective(s: &[Vec<f64>], assignment: &ClusterAssignment) -> f64 {
    (0..s.len())
        .map(|i| {
            let e = assignment.assignment[i].expect("AP assigns every point");
            s[i][e]
        })
        .sum()
}

/// Best objective over every non-empty exemplar subset.
pub fn brute_force_optimum(s: &[Vec<f64>]) -> f64 {
    let n = s.len();
    let mut best = f64::NEG_INFINITY;
    for mask in 1u32..(1 << n) {
        let mut total = 0.0;
        for i in 0..n {
            if mask & (1 << i) != 0 {
                total += s[i][i];
            } else {
                let mut m = f64::NEG_INFINITY;
                for k in 0..n {
                    if mask & (1 << k) != 0 {
                        m = m.max(s[i][k]);
                    }
                }
                total += m;
            }
        }
        best = best.max(total);
    }
    best
}

fn choose2(x: usize) -> f64 {
    (x * x.saturating_sub(1)) as f64 / 2.0
}

/// NMI (arithmetic normalization) and ARI from an explicit contingency table.
pub fn contingency_scores(pred: &[usize], truth: &[u32]) -> (f64, f64) {
    let n = pred.len();
    let mut table: BTreeMap<(usize, u32), usize> = BTreeMap::new();
    let mut rows: BTreeMap<usize, usize> = BTreeMap::new();
    let mut cols: BTreeMap<u32, usize> = BTreeMap::new();
    for (&p, &t) in pred.iter().zip(truth) {
        *table.entry((p, t)).or_default() += 1;
        *rows.entry(p).or_default() += 1;
        *cols.entry(t).or_default() += 1;
    }
    let nf = n as f64;
    let entropy = |counts: Vec<usize>| -> f64 {
        counts
            .into_iter()
            .map(|c| {
                let p = c as f64 / nf;
                -p * p.ln()
            })
            .sum()
    };
    let hp = entropy(rows.values().copied().collect());
    let ht = entropy(cols.values().copied().collect());
    let mut mi = 0.0;
    for (&(p, t), &c) in &table {
        let pij = c as f64 / nf;
        mi += pij * (pij / ((rows[&p] as f64 / nf) * (cols[&t] as f64 / nf))).ln();
    }
    let nmi = if hp == 0.0 && ht == 0.0 {
        1.0
    } else if hp == 0.0 || ht == 0.0 {
        0.0
    } else {
        mi / ((hp + ht) / 2.0)
    };

    let index: f64 = table.values().map(|&c| choose2(c)).sum();
    let a: f64 = rows.values().map(|&c| choose2(c)).sum();
    let b: f64 = cols.values().map(|&c| choose2(c)).sum();
    let expected = a * b / choose2(n);
    let max_index = (a + b) / 2.0;
    let ari = if max_index == expected {
        1.0
    } else {
        (index - expected) / (max_index - expected)
    };
    (nmi, ari)
}

/// Central differences of `f` with respect to every entry of `x`.
pub fn numeric_gradient<F>(x: &Array2<f64>, h: f64, mut f: F) -> Array2<f64>
where
    F: FnMut(&Array2<f64>) -> f64,
{
    let mut grad = Array2::zeros(x.raw_dim());
    let mut probe = x.clone();
    for idx in ndarray::indices(x.raw_dim()) {
        let orig = probe[idx];
        probe[idx] = orig + h;
        let up = f(&probe);
        probe[idx] = orig - h;
        let down = f(&probe);
        probe[idx] = orig;
        grad[idx] = (up - down) / (2.0 * h);
    }
    grad
}

/// Largest entry-wise discrepancy relative to the larger of the two
/// gradients' max norms.
pub fn relative_error(analytic: &Array2<f64>, numeric: &Array2<f64>) -> f64 {
    let scale = analytic
        .iter()
        .chain(numeric.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-12);
    analytic
        .iter()
        .zip(numeric.iter())
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()))
        / scale
}

pub fn random_matrix(rows: usize, cols: usize, r: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| r.random_range(-1.0..1.0))
}

pub fn euclid(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
