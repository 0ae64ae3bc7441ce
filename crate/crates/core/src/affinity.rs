//! Dense affinity propagation.
//!
//! Responsibilities and availabilities are updated in synchronous full-matrix
//! sweeps: every `r(i,k)` is computed from the previous `a`, then every
//! `a(i,k)` from the freshly damped `r`. Column sums are always reduced in
//! ascending row order so results do not depend on scheduling.

use std::collections::BTreeSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::SimilarityMatrix;
use crate::error::{Error, Result};

/// Optional seeded perturbation of off-diagonal similarities, used to break
/// exact degeneracies. Off by default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jitter {
    pub scale: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApConfig {
    pub damping: f64,
    pub max_iterations: usize,
    /// Consecutive sweeps with an unchanged exemplar set needed to stop.
    pub convergence_window: usize,
    pub jitter: Option<Jitter>,
}

impl Default for ApConfig {
    fn default() -> Self {
        ApConfig {
            damping: 0.9,
            max_iterations: 1000,
            convergence_window: 50,
            jitter: None,
        }
    }
}

impl ApConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.5..1.0).contains(&self.damping) {
            return Err(Error::input(format!(
                "damping {} outside [0.5, 1.0)",
                self.damping
            )));
        }
        if self.convergence_window == 0 || self.max_iterations < self.convergence_window {
            return Err(Error::input(
                "need max_iterations >= convergence_window >= 1",
            ));
        }
        if let Some(j) = self.jitter {
            if !(j.scale >= 0.0 && j.scale.is_finite()) {
                return Err(Error::input("jitter scale must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

/// Outcome of one clustering run.
///
/// `assignment[i]` is the exemplar index of sample `i`, or `None` for
/// samples left unclustered (only density-based clustering produces those).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub exemplars: Vec<usize>,
    pub assignment: Vec<Option<usize>>,
    pub converged: bool,
    #[serde(rename = "iterations")]
    pub iterations_used: usize,
}

impl ClusterAssignment {
    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn cluster_count(&self) -> usize {
        self.exemplars.len()
    }

    pub fn exemplar_of(&self, i: usize) -> Option<usize> {
        self.assignment[i]
    }

    /// Column of each exemplar in `exemplars`, per sample.
    pub fn cluster_labels(&self) -> Vec<Option<usize>> {
        self.assignment
            .iter()
            .map(|c| c.and_then(|e| self.exemplars.iter().position(|&x| x == e)))
            .collect()
    }

    pub fn is_exemplar(&self, i: usize) -> bool {
        self.exemplars.contains(&i)
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.assignment.len();
        let set: BTreeSet<usize> = self.exemplars.iter().copied().collect();
        if set.len() != self.exemplars.len() {
            return Err(Error::input("duplicate exemplar"));
        }
        if let Some(&e) = self.exemplars.iter().find(|&&e| e >= n) {
            return Err(Error::input(format!("exemplar {e} out of range")));
        }
        for (i, c) in self.assignment.iter().enumerate() {
            if let Some(c) = c {
                if !set.contains(c) {
                    return Err(Error::input(format!(
                        "sample {i} assigned to non-exemplar {c}"
                    )));
                }
            }
        }
        for &e in &self.exemplars {
            if self.assignment[e] != Some(e) {
                return Err(Error::input(format!("exemplar {e} not assigned to itself")));
            }
        }
        Ok(())
    }
}

fn jittered(similarity: &SimilarityMatrix, jitter: Jitter) -> Vec<f64> {
    let n = similarity.n();
    let mut s = similarity.values().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(jitter.seed);
    for i in 0..n {
        for j in (i + 1)..n {
            let u: f64 = rng.random();
            let v = s[i * n + j] - jitter.scale * u * (s[i * n + j].abs() + 1e-12);
            s[i * n + j] = v;
            s[j * n + i] = v;
        }
    }
    s
}

/// True when `x` and `y` are interchangeable: identical rows, columns and
/// preferences, and each is the other's most similar point.
fn is_duplicate(s: &[f64], n: usize, x: usize, y: usize) -> bool {
    let sxy = s[x * n + y];
    if sxy != s[y * n + x] || s[x * n + x] != s[y * n + y] {
        return false;
    }
    (0..n).filter(|&j| j != x && j != y).all(|j| {
        s[x * n + j] == s[y * n + j] && s[j * n + x] == s[j * n + y] && s[x * n + j] <= sxy
    })
}

/// Exact duplicates reach symmetric messages and can both turn into
/// exemplars; keep the lowest index of each duplicate group. Returns
/// `(dropped, kept)` pairs.
fn merge_duplicates(s: &[f64], n: usize, exemplars: &mut Vec<usize>) -> Vec<(usize, usize)> {
    let mut kept: Vec<usize> = Vec::with_capacity(exemplars.len());
    let mut twins = Vec::new();
    for &k in exemplars.iter() {
        match kept.iter().find(|&&e| is_duplicate(s, n, e, k)) {
            Some(&e) => twins.push((k, e)),
            None => kept.push(k),
        }
    }
    *exemplars = kept;
    twins
}

/// Runs affinity propagation on a similarity matrix whose diagonal already
/// holds the preferences.
pub fn ap_cluster(similarity: &SimilarityMatrix, config: &ApConfig) -> Result<ClusterAssignment> {
    config.validate()?;
    let n = similarity.n();
    if n < 2 {
        return Err(Error::input("affinity propagation needs at least 2 samples"));
    }
    let s: Vec<f64> = match config.jitter {
        Some(j) if j.scale > 0.0 => jittered(similarity, j),
        _ => similarity.values().to_vec(),
    };
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("similarity matrix is not finite"));
    }

    let lambda = config.damping;
    let keep = 1.0 - lambda;
    let mut r = vec![0.0f64; n * n];
    let mut a = vec![0.0f64; n * n];
    let mut col_pos = vec![0.0f64; n];
    let mut diag_r = vec![0.0f64; n];

    let mut last: Vec<usize> = Vec::new();
    let mut stable = 0usize;
    let mut converged = false;
    let mut sweeps = 0usize;

    for sweep in 1..=config.max_iterations {
        sweeps = sweep;
        // Responsibilities.
        for i in 0..n {
            let row = i * n;
            let mut first = f64::NEG_INFINITY;
            let mut second = f64::NEG_INFINITY;
            let mut arg = 0usize;
            for k in 0..n {
                let v = a[row + k] + s[row + k];
                if v > first {
                    second = first;
                    first = v;
                    arg = k;
                } else if v > second {
                    second = v;
                }
            }
            for k in 0..n {
                let competitor = if k == arg { second } else { first };
                let update = s[row + k] - competitor;
                r[row + k] = lambda * r[row + k] + keep * update;
            }
        }

        // Availabilities.
        col_pos.iter_mut().for_each(|c| *c = 0.0);
        for i in 0..n {
            let row = i * n;
            for k in 0..n {
                if k != i {
                    col_pos[k] += r[row + k].max(0.0);
                }
            }
        }
        for k in 0..n {
            diag_r[k] = r[k * n + k];
        }
        for i in 0..n {
            let row = i * n;
            for k in 0..n {
                let update = if i == k {
                    col_pos[k]
                } else {
                    (diag_r[k] + col_pos[k] - r[row + k].max(0.0)).min(0.0)
                };
                a[row + k] = lambda * a[row + k] + keep * update;
            }
        }

        if r.iter().chain(a.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure { sweep });
        }

        let exemplars: Vec<usize> = (0..n)
            .filter(|&k| r[k * n + k] + a[k * n + k] > 0.0)
            .collect();
        if exemplars == last {
            stable += 1;
        } else {
            last = exemplars;
            stable = 1;
        }
        if stable >= config.convergence_window && !last.is_empty() {
            converged = true;
            break;
        }
    }

    let mut exemplars = last;
    if exemplars.is_empty() {
        // No point reached positive self-evidence; fall back to the single
        // strongest candidate so that every sample still has an exemplar.
        let best = (0..n)
            .max_by(|&x, &y| {
                let vx = r[x * n + x] + a[x * n + x];
                let vy = r[y * n + y] + a[y * n + y];
                vx.total_cmp(&vy).then(y.cmp(&x))
            })
            .unwrap_or(0);
        exemplars.push(best);
        converged = false;
    }

    let twins = merge_duplicates(&s, n, &mut exemplars);

    let assignment = (0..n)
        .map(|i| {
            if exemplars.binary_search(&i).is_ok() {
                return Some(i);
            }
            if let Some(&(_, kept)) = twins.iter().find(|(dropped, _)| *dropped == i) {
                return Some(kept);
            }
            let row = i * n;
            let mut best = exemplars[0];
            let mut best_v = r[row + best] + a[row + best];
            for &k in &exemplars[1..] {
                let v = r[row + k] + a[row + k];
                if v > best_v {
                    best = k;
                    best_v = v;
                }
            }
            Some(best)
        })
        .collect();

    Ok(ClusterAssignment {
        exemplars,
        assignment,
        converged,
        iterations_used: sweeps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PreferenceMode {
    Median,
    Min,
}

/// Median of the off-diagonal entries (mean of the two middle values for an
/// even count).
pub fn median_off_diagonal(similarity: &SimilarityMatrix) -> f64 {
    let mut values: Vec<f64> = similarity.off_diagonal().collect();
    values.sort_by(f64::total_cmp);
    let m = values.len();
    if m % 2 == 1 {
        values[m / 2]
    } else {
        0.5 * (values[m / 2 - 1] + values[m / 2])
    }
}

pub fn min_off_diagonal(similarity: &SimilarityMatrix) -> f64 {
    similarity.off_diagonal().fold(f64::INFINITY, f64::min)
}

/// Sets every preference to the median or minimum off-diagonal similarity.
pub fn uniform_preference(
    similarity: &SimilarityMatrix,
    mode: PreferenceMode,
) -> Result<SimilarityMatrix> {
    let p = match mode {
        PreferenceMode::Median => median_off_diagonal(similarity),
        PreferenceMode::Min => min_off_diagonal(similarity),
    };
    similarity.with_uniform_diagonal(p)
}

/// AP objective: similarity of every non-exemplar to its exemplar plus the
/// preferences of the exemplars.
pub fn net_similarity(similarity: &SimilarityMatrix, assignment: &ClusterAssignment) -> Result<f64> {
    let n = similarity.n();
    if assignment.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: assignment.len(),
        });
    }
    let mut total = 0.0;
    for (i, c) in assignment.assignment.iter().enumerate() {
        let c = c.ok_or_else(|| Error::input(format!("sample {i} is unassigned")))?;
        if c >= n {
            return Err(Error::input(format!("exemplar {c} out of range")));
        }
        if c != i {
            total += similarity.get(i, c);
        }
    }
    for &k in &assignment.exemplars {
        if k >= n {
            return Err(Error::input(format!("exemplar {k} out of range")));
        }
        total += similarity.get(k, k);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: &[&[f64]]) -> SimilarityMatrix {
        SimilarityMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn median_and_min_of_small_multiset() {
        let s = matrix(&[&[0.0, -1.0, -2.0], &[-3.0, 0.0, -2.0], &[-1.0, -3.0, 0.0]]);
        let med = uniform_preference(&s, PreferenceMode::Median).unwrap();
        assert_eq!(med.diagonal(), vec![-2.0; 3]);
        let min = uniform_preference(&s, PreferenceMode::Min).unwrap();
        assert_eq!(min.diagonal(), vec![-3.0; 3]);
    }

    #[test]
    fn net_similarity_single_cluster() {
        let s = matrix(&[&[-2.0, -1.0, -1.0], &[-1.0, -2.0, -5.0], &[-1.0, -5.0, -2.0]]);
        let a = ClusterAssignment {
            exemplars: vec![0],
            assignment: vec![Some(0), Some(0), Some(0)],
            converged: true,
            iterations_used: 1,
        };
        assert_eq!(net_similarity(&s, &a).unwrap(), -4.0);
        let all = ClusterAssignment {
            exemplars: vec![0, 1, 2],
            assignment: vec![Some(0), Some(1), Some(2)],
            converged: true,
            iterations_used: 1,
        };
        assert_eq!(net_similarity(&s, &all).unwrap(), -6.0);
    }

    #[test]
    fn net_similarity_rejects_bad_index() {
        let s = matrix(&[&[-1.0, -1.0], &[-1.0, -1.0]]);
        let a = ClusterAssignment {
            exemplars: vec![0],
            assignment: vec![Some(0), Some(7)],
            converged: true,
            iterations_used: 1,
        };
        assert!(net_similarity(&s, &a).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(ApConfig::default().validate().is_ok());
        let bad = ApConfig {
            damping: 1.0,
            ..ApConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = ApConfig {
            max_iterations: 10,
            convergence_window: 20,
            ..ApConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn two_pairs_split_into_two_clusters() {
        let pts = [0.0, 1.0, 10.0, 11.0];
        let rows: Vec<Vec<f64>> = pts
            .iter()
            .map(|x| pts.iter().map(|y| -(x - y) * (x - y)).collect())
            .collect();
        let s = SimilarityMatrix::from_rows(&rows).unwrap();
        let s = uniform_preference(&s, PreferenceMode::Median).unwrap();
        let out = ap_cluster(&s, &ApConfig::default()).unwrap();
        assert!(out.converged);
        assert_eq!(out.cluster_count(), 2);
        assert_eq!(out.assignment[0], out.assignment[1]);
        assert_eq!(out.assignment[2], out.assignment[3]);
        assert_ne!(out.assignment[0], out.assignment[2]);
        out.validate().unwrap();
    }

    #[test]
    fn duplicates_are_co_assigned() {
        let rows = vec![
            vec![0.0, 0.0, -50.0, -50.0],
            vec![0.0, 0.0, -50.0, -50.0],
            vec![-50.0, -50.0, 0.0, -1.0],
            vec![-50.0, -50.0, -1.0, 0.0],
        ];
        let s = SimilarityMatrix::from_rows(&rows).unwrap().with_uniform_diagonal(-5.0).unwrap();
        let out = ap_cluster(&s, &ApConfig::default()).unwrap();
        assert_eq!(out.assignment[0], out.assignment[1]);
        out.validate().unwrap();
    }

    #[test]
    fn jitter_is_deterministic() {
        let rows = vec![
            vec![0.0, -1.0, -1.0],
            vec![-1.0, 0.0, -1.0],
            vec![-1.0, -1.0, 0.0],
        ];
        let s = SimilarityMatrix::from_rows(&rows).unwrap().with_uniform_diagonal(-1.0).unwrap();
        let cfg = ApConfig {
            jitter: Some(Jitter {
                scale: 1e-6,
                seed: 3,
            }),
            ..ApConfig::default()
        };
        assert_eq!(ap_cluster(&s, &cfg).unwrap(), ap_cluster(&s, &cfg).unwrap());
    }

    #[test]
    fn serializes_with_documented_keys() {
        let a = ClusterAssignment {
            exemplars: vec![1],
            assignment: vec![Some(1), Some(1)],
            converged: true,
            iterations_used: 7,
        };
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            r#"{"exemplars":[1],"assignment":[1,1],"converged":true,"iterations":7}"#
        );
    }
}
