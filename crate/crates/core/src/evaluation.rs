//! Retrieval and clustering metrics, pseudo-label accuracy and a DBSCAN
//! baseline sharing the [`ClusterAssignment`] result type.

use std::collections::{BTreeMap, VecDeque};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::affinity::ClusterAssignment;
use crate::embedding::{euclidean_distance, squared_distance, EmbeddingSet};
use crate::error::{Error, Result};
use crate::selection::PseudoLabelSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub rank1: f64,
    /// `cmc[k]`: fraction of evaluated queries with a true match in the top `k + 1`.
    pub cmc: Vec<f64>,
    pub map: f64,
    pub evaluated_queries: usize,
    pub skipped_queries: usize,
}

/// Average precision of a ranked relevance list: mean precision at each hit.
pub fn average_precision(relevant: &[bool]) -> Option<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &r) in relevant.iter().enumerate() {
        if r {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

/// Ranks the gallery by ascending distance for every query.
///
/// With `cross_camera`, gallery items sharing both identity and camera with
/// the query are removed. Queries left without a true match are skipped.
pub fn evaluate_retrieval(
    query: &EmbeddingSet,
    gallery: &EmbeddingSet,
    cross_camera: bool,
) -> Result<RetrievalResult> {
    if query.dim() != gallery.dim() {
        return Err(Error::DimensionMismatch {
            expected: query.dim(),
            got: gallery.dim(),
        });
    }
    let gallery_ids: Vec<u32> = gallery
        .samples()
        .iter()
        .enumerate()
        .map(|(i, s)| {
            s.ground_truth()
                .ok_or_else(|| Error::input(format!("gallery sample {i} has no identity")))
        })
        .collect::<Result<_>>()?;

    let m = gallery.len();
    let mut cmc_hits = vec![0usize; m];
    let mut ap_sum = 0.0;
    let mut evaluated = 0usize;
    let mut skipped = 0usize;
    for (qi, q) in query.samples().iter().enumerate() {
        let qid = q
            .ground_truth()
            .ok_or_else(|| Error::input(format!("query sample {qi} has no identity")))?;
        let mut ranked: Vec<(f64, usize)> = (0..m)
            .filter(|&g| {
                !(cross_camera
                    && gallery_ids[g] == qid
                    && q.camera().is_some()
                    && gallery.sample(g).camera() == q.camera())
            })
            .map(|g| (squared_distance(q.feature(), gallery.feature(g)), g))
            .collect();
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let relevant: Vec<bool> = ranked.iter().map(|&(_, g)| gallery_ids[g] == qid).collect();
        let Some(ap) = average_precision(&relevant) else {
            skipped += 1;
            continue;
        };
        let first = relevant.iter().position(|&r| r).expect("has a hit");
        for hit in &mut cmc_hits[first..] {
            *hit += 1;
        }
        ap_sum += ap;
        evaluated += 1;
    }
    if skipped > 0 {
        warn!("{skipped} queries skipped: no true match in the gallery");
    }
    if evaluated == 0 {
        return Err(Error::input("no query has a true match in the gallery"));
    }
    let cmc: Vec<f64> = cmc_hits
        .iter()
        .map(|&h| h as f64 / evaluated as f64)
        .collect();
    Ok(RetrievalResult {
        rank1: cmc[0],
        cmc,
        map: ap_sum / evaluated as f64,
        evaluated_queries: evaluated,
        skipped_queries: skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringScore {
    pub nmi: f64,
    pub ari: f64,
    pub pairwise_precision: f64,
    pub pairwise_recall: f64,
    pub pairwise_f1: f64,
    pub cluster_count: usize,
    pub true_id_count: usize,
    /// Fraction of samples left unclustered; they are excluded from the scores.
    pub noise_fraction: f64,
}

fn comb2(n: usize) -> f64 {
    let n = n as f64;
    n * (n - 1.0) / 2.0
}

fn entropy(counts: impl Iterator<Item = usize>, total: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum()
}

/// Scores a predicted partition against ground truth (both over the same items).
pub fn partition_scores(predicted: &[usize], truth: &[u32]) -> Result<(f64, f64, f64, f64, f64)> {
    if predicted.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            got: predicted.len(),
        });
    }
    let n = predicted.len();
    let mut pred_counts: BTreeMap<usize, usize> = BTreeMap::new();
    let mut true_counts: BTreeMap<u32, usize> = BTreeMap::new();
    let mut joint: BTreeMap<(usize, u32), usize> = BTreeMap::new();
    for (&p, &t) in predicted.iter().zip(truth) {
        *pred_counts.entry(p).or_insert(0) += 1;
        *true_counts.entry(t).or_insert(0) += 1;
        *joint.entry((p, t)).or_insert(0) += 1;
    }
    let total = n as f64;

    let h_pred = entropy(pred_counts.values().copied(), total);
    let h_true = entropy(true_counts.values().copied(), total);
    let mut mi = 0.0;
    for (&(p, t), &c) in &joint {
        let pxy = c as f64 / total;
        let px = pred_counts[&p] as f64 / total;
        let py = true_counts[&t] as f64 / total;
        mi += pxy * (pxy / (px * py)).ln();
    }
    let nmi = if h_pred == 0.0 && h_true == 0.0 {
        1.0
    } else {
        (mi / (0.5 * (h_pred + h_true))).clamp(0.0, 1.0)
    };

    let same_both: f64 = joint.values().map(|&c| comb2(c)).sum();
    let same_pred: f64 = pred_counts.values().map(|&c| comb2(c)).sum();
    let same_true: f64 = true_counts.values().map(|&c| comb2(c)).sum();
    let all_pairs = comb2(n);
    let ari = if all_pairs == 0.0 {
        1.0
    } else {
        let expected = same_pred * same_true / all_pairs;
        let max_index = 0.5 * (same_pred + same_true);
        if max_index == expected {
            1.0
        } else {
            (same_both - expected) / (max_index - expected)
        }
    };

    let precision = if same_pred == 0.0 { 1.0 } else { same_both / same_pred };
    let recall = if same_true == 0.0 { 1.0 } else { same_both / same_true };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok((nmi, ari, precision, recall, f1))
}

/// Compares an assignment with ground-truth identities. Unclustered samples
/// only contribute to `noise_fraction`.
pub fn evaluate_clustering(
    assignment: &ClusterAssignment,
    ground_truth_ids: &[u32],
) -> Result<ClusteringScore> {
    if assignment.len() != ground_truth_ids.len() {
        return Err(Error::DimensionMismatch {
            expected: assignment.len(),
            got: ground_truth_ids.len(),
        });
    }
    let (pred, truth): (Vec<usize>, Vec<u32>) = assignment
        .assignment
        .iter()
        .zip(ground_truth_ids)
        .filter_map(|(c, &t)| c.map(|c| (c, t)))
        .unzip();
    let noise = assignment.len() - pred.len();
    let true_id_count = ground_truth_ids
        .iter()
        .collect::<std::collections::BTreeSet<_>>()
        .len();
    let (nmi, ari, precision, recall, f1) = if pred.is_empty() {
        (0.0, 0.0, 0.0, 0.0, 0.0)
    } else {
        partition_scores(&pred, &truth)?
    };
    Ok(ClusteringScore {
        nmi,
        ari,
        pairwise_precision: precision,
        pairwise_recall: recall,
        pairwise_f1: f1,
        cluster_count: assignment.cluster_count(),
        true_id_count,
        noise_fraction: if assignment.is_empty() {
            0.0
        } else {
            noise as f64 / assignment.len() as f64
        },
    })
}

/// Fraction of selected samples sharing the ground-truth identity of their
/// assigned exemplar. An empty selection scores 1.0.
pub fn pseudo_label_accuracy(
    pseudo: &PseudoLabelSet,
    assignment: &ClusterAssignment,
    ground_truth_ids: &[Option<u32>],
) -> Result<f64> {
    if ground_truth_ids.len() != assignment.len() {
        return Err(Error::DimensionMismatch {
            expected: assignment.len(),
            got: ground_truth_ids.len(),
        });
    }
    if pseudo.is_empty() {
        warn!("pseudo-label accuracy of an empty selection is vacuously 1.0");
        return Ok(1.0);
    }
    let mut correct = 0usize;
    for &i in &pseudo.selected_indices {
        let exemplar = assignment
            .assignment
            .get(i)
            .copied()
            .flatten()
            .ok_or_else(|| Error::input(format!("selected sample {i} has no exemplar")))?;
        let own = ground_truth_ids[i]
            .ok_or_else(|| Error::input(format!("selected sample {i} has no ground truth")))?;
        let theirs = ground_truth_ids[exemplar]
            .ok_or_else(|| Error::input(format!("exemplar {exemplar} has no ground truth")))?;
        if own == theirs {
            correct += 1;
        }
    }
    Ok(correct as f64 / pseudo.len() as f64)
}

/// Density-based clustering with Euclidean `eps` neighborhoods (self
/// included). Border points join the cluster of their lowest-index core
/// neighbor; each cluster is represented by its medoid.
pub fn dbscan_cluster(
    embeddings: &EmbeddingSet,
    eps: f64,
    min_points: usize,
) -> Result<ClusterAssignment> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::input("eps must be positive"));
    }
    if min_points == 0 {
        return Err(Error::input("min_points must be at least 1"));
    }
    let n = embeddings.len();
    let eps2 = eps * eps;
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| squared_distance(embeddings.feature(i), embeddings.feature(j)) <= eps2)
                .collect()
        })
        .collect();
    let core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_points).collect();

    let mut cluster: Vec<Option<usize>> = vec![None; n];
    let mut clusters = 0usize;
    for start in 0..n {
        if !core[start] || cluster[start].is_some() {
            continue;
        }
        let id = clusters;
        clusters += 1;
        cluster[start] = Some(id);
        let mut queue = VecDeque::from([start]);
        while let Some(p) = queue.pop_front() {
            for &q in &neighbors[p] {
                if core[q] && cluster[q].is_none() {
                    cluster[q] = Some(id);
                    queue.push_back(q);
                }
            }
        }
    }
    for i in 0..n {
        if !core[i] {
            cluster[i] = neighbors[i]
                .iter()
                .copied()
                .filter(|&j| core[j])
                .min()
                .and_then(|j| cluster[j]);
        }
    }

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); clusters];
    for (i, c) in cluster.iter().enumerate() {
        if let Some(c) = c {
            members[*c].push(i);
        }
    }
    let medoids: Vec<usize> = members
        .iter()
        .map(|m| {
            let mut best = (f64::INFINITY, m[0]);
            for &i in m {
                let cost: f64 = m
                    .iter()
                    .map(|&j| euclidean_distance(embeddings.feature(i), embeddings.feature(j)))
                    .sum();
                if cost < best.0 {
                    best = (cost, i);
                }
            }
            best.1
        })
        .collect();
    let assignment = cluster.iter().map(|c| c.map(|c| medoids[c])).collect();
    let mut exemplars = medoids;
    exemplars.sort_unstable();
    Ok(ClusterAssignment {
        exemplars,
        assignment,
        converged: true,
        iterations_used: 1,
    })
}

/// Flat metric report written by the CLI.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub rank1: Option<f64>,
    pub map: Option<f64>,
    pub cmc: Option<Vec<f64>>,
    pub nmi: Option<f64>,
    pub ari: Option<f64>,
    pub f1: Option<f64>,
    pub cluster_count: Option<usize>,
    pub noise_fraction: Option<f64>,
}

impl MetricReport {
    pub fn with_retrieval(mut self, r: &RetrievalResult) -> Self {
        self.rank1 = Some(r.rank1);
        self.map = Some(r.map);
        self.cmc = Some(r.cmc.clone());
        self
    }

    pub fn with_clustering(mut self, c: &ClusteringScore) -> Self {
        self.nmi = Some(c.nmi);
        self.ari = Some(c.ari);
        self.f1 = Some(c.pairwise_f1);
        self.cluster_count = Some(c.cluster_count);
        self.noise_fraction = Some(c.noise_fraction);
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{Sample, Split};

    fn set(rows: &[(f64, u32, u32)], split: Split) -> EmbeddingSet {
        EmbeddingSet::new(
            rows.iter()
                .map(|&(x, id, cam)| Sample::new(vec![x], Some(id), Some(cam), split).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn nearest_true_match_is_perfect() {
        let q = set(&[(0.0, 1, 0)], Split::Query);
        let g = set(&[(0.1, 1, 1), (1.0, 2, 1), (2.0, 3, 1)], Split::Gallery);
        let r = evaluate_retrieval(&q, &g, true).unwrap();
        assert_eq!(r.rank1, 1.0);
        assert_eq!(r.map, 1.0);
    }

    #[test]
    fn two_matches_at_ranks_one_and_three() {
        let q = set(&[(0.0, 1, 0)], Split::Query);
        let g = set(&[(1.0, 1, 1), (2.0, 2, 1), (3.0, 1, 1), (4.0, 3, 1)], Split::Gallery);
        let r = evaluate_retrieval(&q, &g, true).unwrap();
        assert_eq!(r.map, (1.0 + 2.0 / 3.0) / 2.0);
        assert_eq!(r.cmc, vec![1.0; 4]);
    }

    #[test]
    fn same_camera_duplicate_is_excluded() {
        let q = set(&[(0.0, 1, 0)], Split::Query);
        let g = set(&[(0.0, 1, 0), (1.0, 2, 1), (2.0, 1, 1)], Split::Gallery);
        let cross = evaluate_retrieval(&q, &g, true).unwrap();
        assert_eq!(cross.rank1, 0.0);
        assert_eq!(cross.map, 0.5);
        let plain = evaluate_retrieval(&q, &g, false).unwrap();
        assert_eq!(plain.rank1, 1.0);
    }

    #[test]
    fn query_without_match_is_skipped() {
        let q = set(&[(0.0, 1, 0), (0.0, 9, 0)], Split::Query);
        let g = set(&[(0.5, 1, 1), (1.0, 2, 1)], Split::Gallery);
        let r = evaluate_retrieval(&q, &g, true).unwrap();
        assert_eq!(r.evaluated_queries, 1);
        assert_eq!(r.skipped_queries, 1);
    }

    fn assignment(labels: &[usize]) -> ClusterAssignment {
        let mut exemplars: Vec<usize> = labels.to_vec();
        exemplars.sort_unstable();
        exemplars.dedup();
        ClusterAssignment {
            exemplars,
            assignment: labels.iter().map(|&l| Some(l)).collect(),
            converged: true,
            iterations_used: 1,
        }
    }

    #[test]
    fn perfect_partition_scores_one() {
        let s = evaluate_clustering(&assignment(&[0, 0, 2, 2, 4]), &[7, 7, 3, 3, 5]).unwrap();
        assert!((s.nmi - 1.0).abs() < 1e-12);
        assert!((s.ari - 1.0).abs() < 1e-12);
        assert_eq!(s.pairwise_f1, 1.0);
        assert_eq!(s.cluster_count, 3);
        assert_eq!(s.true_id_count, 3);
    }

    #[test]
    fn single_cluster_pairwise_scores() {
        let s = evaluate_clustering(&assignment(&[0; 5]), &[1, 1, 1, 2, 2]).unwrap();
        // Same-ID pairs: 3 + 1 = 4 of 10.
        assert!((s.pairwise_precision - 0.4).abs() < 1e-12);
        assert_eq!(s.pairwise_recall, 1.0);
    }

    #[test]
    fn length_mismatch_rejected() {
        assert!(evaluate_clustering(&assignment(&[0, 0]), &[1]).is_err());
    }

    #[test]
    fn pseudo_accuracy_counts() {
        let a = assignment(&[0, 0, 0]);
        let p = PseudoLabelSet {
            selected_indices: vec![0, 1, 2],
            soft_labels: vec![vec![1.0]; 3],
            exemplar_ids: vec![0],
            cluster_columns: vec![0; 3],
        };
        let acc = pseudo_label_accuracy(&p, &a, &[Some(1), Some(1), Some(2)]).unwrap();
        assert!((acc - 2.0 / 3.0).abs() < 1e-12);
        let only_exemplar = PseudoLabelSet {
            selected_indices: vec![0],
            soft_labels: vec![vec![1.0]],
            exemplar_ids: vec![0],
            cluster_columns: vec![0],
        };
        assert_eq!(
            pseudo_label_accuracy(&only_exemplar, &a, &[Some(1), Some(1), Some(2)]).unwrap(),
            1.0
        );
        let empty = PseudoLabelSet {
            selected_indices: vec![],
            soft_labels: vec![],
            exemplar_ids: vec![0],
            cluster_columns: vec![],
        };
        assert_eq!(pseudo_label_accuracy(&empty, &a, &[None; 3]).unwrap(), 1.0);
    }

    #[test]
    fn dbscan_basic_shapes() {
        let e = set(&[(0.0, 1, 0), (0.1, 1, 0), (0.2, 1, 0), (50.0, 2, 0)], Split::Unlabeled);
        let out = dbscan_cluster(&e, 1.0, 2).unwrap();
        assert_eq!(out.cluster_count(), 1);
        assert_eq!(out.assignment[3], None);
        assert_eq!(out.assignment[0], Some(1));
        out.validate().unwrap();
        let all = dbscan_cluster(&e, 100.0, 2).unwrap();
        assert_eq!(all.cluster_count(), 1);
        assert!(all.assignment.iter().all(Option::is_some));
    }

    #[test]
    fn border_point_joins_lowest_core() {
        // Point 4 (x = 1.9) has only three neighbors, so it is a border point
        // reachable from core 3 (x = 0.9) and core 5 (x = 2.9).
        let e = set(
            &[
                (0.0, 1, 0),
                (0.3, 1, 0),
                (0.6, 1, 0),
                (0.9, 1, 0),
                (1.9, 1, 0),
                (2.9, 2, 0),
                (3.2, 2, 0),
                (3.5, 2, 0),
                (3.8, 2, 0),
            ],
            Split::Unlabeled,
        );
        let out = dbscan_cluster(&e, 1.05, 4).unwrap();
        assert_eq!(out.cluster_count(), 2);
        assert_eq!(out.assignment[4], out.assignment[0]);
        assert_ne!(out.assignment[4], out.assignment[5]);
    }

    #[test]
    fn metric_report_keys() {
        let json = serde_json::to_string(&MetricReport::default()).unwrap();
        assert_eq!(
            json,
            r#"{"rank1":null,"map":null,"cmc":null,"nmi":null,"ari":null,"f1":null,"cluster_count":null,"noise_fraction":null}"#
        );
    }
}
