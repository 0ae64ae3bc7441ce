//! Progressive selection of reliable unlabeled samples and soft pseudo-labels.
//!
//! The base threshold comes from the labeled set: it is the bin boundary that
//! best separates same-identity from different-identity pair distances. A
//! sample is reliable when its squared distance to its exemplar is strictly
//! below `tau_l + d_t`, where `d_t` grows with the iteration count.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::affinity::ClusterAssignment;
use crate::embedding::{squared_distance, EmbeddingSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEstimate {
    /// Base threshold in squared-distance units.
    pub tau_l: f64,
    pub bin_width: f64,
    pub bin_centers: Vec<f64>,
    /// Density-normalized: counts / (total * bin_width).
    pub positive_histogram: Vec<f64>,
    pub negative_histogram: Vec<f64>,
    /// Misclassification objective at `tau_l`.
    pub error: f64,
}

impl ThresholdEstimate {
    /// `bin_center,positive_density,negative_density` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "bin_center,positive_density,negative_density")?;
        for ((c, p), n) in self
            .bin_centers
            .iter()
            .zip(&self.positive_histogram)
            .zip(&self.negative_histogram)
        {
            writeln!(out, "{c},{p},{n}")?;
        }
        Ok(())
    }
}

/// Fraction of positives at or above `tau` plus fraction of negatives below
/// it, matching the strict `d < tau` selection rule. Inputs must be sorted.
pub fn separation_error(sorted_positive: &[f64], sorted_negative: &[f64], tau: f64) -> f64 {
    let pos_below = sorted_positive.partition_point(|&d| d < tau);
    let neg_below = sorted_negative.partition_point(|&d| d < tau);
    (sorted_positive.len() - pos_below) as f64 / sorted_positive.len() as f64
        + neg_below as f64 / sorted_negative.len() as f64
}

fn density(sorted: &[f64], bins: usize, width: f64) -> Vec<f64> {
    let mut counts = vec![0usize; bins];
    for &d in sorted {
        let b = ((d / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let norm = sorted.len() as f64 * width;
    counts.into_iter().map(|c| c as f64 / norm).collect()
}

/// Picks the bin boundary over `[0, max distance]` minimizing
/// [`separation_error`]. Among tied boundaries the middle of the first
/// contiguous run is taken, unless every boundary ties, in which case the
/// smallest is.
pub fn estimate_threshold(
    positive_distances: &[f64],
    negative_distances: &[f64],
    bin_count: usize,
) -> Result<ThresholdEstimate> {
    if positive_distances.is_empty() || negative_distances.is_empty() {
        return Err(Error::GuidanceUnavailable(
            "threshold needs both positive and negative pair distances".into(),
        ));
    }
    if bin_count == 0 {
        return Err(Error::input("bin count must be positive"));
    }
    if positive_distances
        .iter()
        .chain(negative_distances)
        .any(|d| !(d.is_finite() && *d >= 0.0))
    {
        return Err(Error::input("pair distances must be finite and non-negative"));
    }
    let mut pos = positive_distances.to_vec();
    let mut neg = negative_distances.to_vec();
    pos.sort_by(f64::total_cmp);
    neg.sort_by(f64::total_cmp);
    let max = pos[pos.len() - 1].max(neg[neg.len() - 1]);
    let width = if max > 0.0 {
        max / bin_count as f64
    } else {
        1.0 / bin_count as f64
    };

    // Exact misclassification counts scaled to a common denominator, so that
    // equal error rates compare equal.
    let (np, nn) = (pos.len() as u128, neg.len() as u128);
    let errors: Vec<u128> = (0..=bin_count)
        .map(|j| {
            let tau = j as f64 * width;
            let pos_above = (pos.len() - pos.partition_point(|&d| d < tau)) as u128;
            let neg_below = neg.partition_point(|&d| d < tau) as u128;
            pos_above * nn + neg_below * np
        })
        .collect();
    let best = *errors.iter().min().expect("at least one boundary");
    let first = errors.iter().position(|&e| e == best).expect("minimum exists");
    let last = first + errors[first..].iter().take_while(|&&e| e == best).count() - 1;
    // Inside a run of equally good boundaries the two curves coincide; the
    // crossing is the middle of the run. A run spanning the whole grid
    // carries no separation information and falls back to the smallest.
    let chosen = if first == 0 && last == bin_count {
        0
    } else {
        (first + last) / 2
    };
    let tau_l = chosen as f64 * width;
    let best = separation_error(&pos, &neg, tau_l);

    Ok(ThresholdEstimate {
        tau_l,
        bin_width: width,
        bin_centers: (0..bin_count).map(|j| (j as f64 + 0.5) * width).collect(),
        positive_histogram: density(&pos, bin_count, width),
        negative_histogram: density(&neg, bin_count, width),
        error: best,
    })
}

/// Threshold offset schedule; `d_t = d_step * iteration`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionSchedule {
    pub d_step: f64,
    pub d_t: f64,
    pub iteration: usize,
}

impl SelectionSchedule {
    pub fn new(d_step: f64) -> Result<Self> {
        if !(d_step >= 0.0 && d_step.is_finite()) {
            return Err(Error::input("d_step must be finite and non-negative"));
        }
        Ok(SelectionSchedule {
            d_step,
            d_t: 0.0,
            iteration: 0,
        })
    }

    pub fn tau(&self, tau_l: f64) -> f64 {
        tau_l + self.d_t
    }
}

pub fn advance_schedule(schedule: SelectionSchedule) -> SelectionSchedule {
    let iteration = schedule.iteration + 1;
    SelectionSchedule {
        d_step: schedule.d_step,
        d_t: schedule.d_step * iteration as f64,
        iteration,
    }
}

fn check_assignment(unlabeled: &EmbeddingSet, assignment: &ClusterAssignment) -> Result<()> {
    if assignment.len() != unlabeled.len() {
        return Err(Error::DimensionMismatch {
            expected: unlabeled.len(),
            got: assignment.len(),
        });
    }
    assignment.validate()
}

/// Samples strictly closer than `tau` (squared) to their exemplar, plus every
/// exemplar regardless of `tau`. Unclustered samples are never selected.
pub fn select_reliable(
    unlabeled: &EmbeddingSet,
    assignment: &ClusterAssignment,
    tau: f64,
) -> Result<Vec<usize>> {
    check_assignment(unlabeled, assignment)?;
    if tau.is_nan() || tau < 0.0 {
        return Err(Error::input(format!("tau {tau} must be >= 0")));
    }
    Ok((0..unlabeled.len())
        .filter(|&i| match assignment.assignment[i] {
            Some(c) if c == i => true,
            Some(c) => squared_distance(unlabeled.feature(i), unlabeled.feature(c)) < tau,
            None => false,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelSet {
    pub selected_indices: Vec<usize>,
    /// One probability vector per selected sample, columns ordered as
    /// `exemplar_ids`.
    pub soft_labels: Vec<Vec<f64>>,
    pub exemplar_ids: Vec<usize>,
    /// Column of each selected sample's assigned exemplar (its hard cluster).
    pub cluster_columns: Vec<usize>,
}

impl PseudoLabelSet {
    pub fn len(&self) -> usize {
        self.selected_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected_indices.is_empty()
    }
}

/// Numerically stable softmax of `logits`.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Soft label of each selected sample: softmax of negative squared distances
/// to every exemplar.
pub fn assign_soft_labels(
    unlabeled: &EmbeddingSet,
    assignment: &ClusterAssignment,
    selected_indices: &[usize],
) -> Result<PseudoLabelSet> {
    check_assignment(unlabeled, assignment)?;
    if assignment.exemplars.is_empty() {
        return Err(Error::EmptyClustering);
    }
    let mut seen = vec![false; unlabeled.len()];
    let mut soft_labels = Vec::with_capacity(selected_indices.len());
    let mut cluster_columns = Vec::with_capacity(selected_indices.len());
    for &i in selected_indices {
        if i >= unlabeled.len() || std::mem::replace(&mut seen[i], true) {
            return Err(Error::input(format!("selected index {i} invalid or repeated")));
        }
        let exemplar = assignment.assignment[i]
            .ok_or_else(|| Error::input(format!("selected sample {i} is unclustered")))?;
        let column = assignment
            .exemplars
            .iter()
            .position(|&e| e == exemplar)
            .ok_or_else(|| Error::input(format!("sample {i} has no exemplar column")))?;
        let logits: Vec<f64> = assignment
            .exemplars
            .iter()
            .map(|&e| -squared_distance(unlabeled.feature(i), unlabeled.feature(e)))
            .collect();
        soft_labels.push(softmax(&logits));
        cluster_columns.push(column);
    }
    Ok(PseudoLabelSet {
        selected_indices: selected_indices.to_vec(),
        soft_labels,
        exemplar_ids: assignment.exemplars.clone(),
        cluster_columns,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{Sample, Split};

    fn points(xs: &[f64]) -> EmbeddingSet {
        EmbeddingSet::new(
            xs.iter()
                .map(|&x| Sample::new(vec![x], None, None, Split::Unlabeled).unwrap())
                .collect(),
        )
        .unwrap()
    }

    fn one_cluster(n: usize, exemplar: usize) -> ClusterAssignment {
        ClusterAssignment {
            exemplars: vec![exemplar],
            assignment: vec![Some(exemplar); n],
            converged: true,
            iterations_used: 1,
        }
    }

    #[test]
    fn separable_threshold_has_zero_error() {
        let est = estimate_threshold(&[0.2, 0.5, 1.0], &[2.0, 3.0, 4.0], 100).unwrap();
        assert_eq!(est.error, 0.0);
        assert!(est.tau_l > 1.0 && est.tau_l <= 2.0, "{}", est.tau_l);
    }

    #[test]
    fn empty_gap_is_split_in_the_middle() {
        // Boundaries every 0.1; zero error for every boundary in (3, 7].
        let est = estimate_threshold(&[1.0, 2.0, 3.0], &[7.0, 8.0, 10.0], 100).unwrap();
        assert_eq!(est.error, 0.0);
        assert!((est.tau_l - 5.0).abs() <= 0.1, "{}", est.tau_l);
    }

    #[test]
    fn identical_distributions_pick_smallest_boundary() {
        let d = [1.0, 2.0, 3.0, 4.0];
        let est = estimate_threshold(&d, &d, 10).unwrap();
        assert_eq!(est.tau_l, 0.0);
        assert!((est.error - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_lists_are_not_guidance() {
        assert!(matches!(
            estimate_threshold(&[], &[1.0], 10),
            Err(Error::GuidanceUnavailable(_))
        ));
    }

    #[test]
    fn histograms_are_densities() {
        let est = estimate_threshold(&[0.5, 1.5, 1.6], &[3.0, 4.0], 8).unwrap();
        let mass: f64 = est.positive_histogram.iter().sum::<f64>() * est.bin_width;
        assert!((mass - 1.0).abs() < 1e-12);
        let mut buf = Vec::new();
        est.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("bin_center,positive_density,negative_density\n"));
        assert_eq!(text.lines().count(), 9);
    }

    #[test]
    fn strict_threshold_with_exemplar_inclusion() {
        // Member squared distances to exemplar 0: 0, 1, 9.
        let e = points(&[0.0, 1.0, 3.0]);
        let a = one_cluster(3, 0);
        assert_eq!(select_reliable(&e, &a, 4.0).unwrap(), vec![0, 1]);
        assert_eq!(select_reliable(&e, &a, 0.0).unwrap(), vec![0]);
        assert_eq!(select_reliable(&e, &a, 1.0).unwrap(), vec![0]);
        assert_eq!(select_reliable(&e, &a, f64::INFINITY).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn schedule_steps() {
        let s = SelectionSchedule::new(1.0).unwrap();
        assert_eq!(advance_schedule(s).d_t, 1.0);
        let mut s = SelectionSchedule::new(0.5).unwrap();
        for _ in 0..3 {
            s = advance_schedule(s);
        }
        assert_eq!(s.d_t, 1.5);
        assert_eq!(s.iteration, 3);
    }

    #[test]
    fn equidistant_exemplars_split_evenly() {
        let e = points(&[-1.0, 1.0, 0.0]);
        let a = ClusterAssignment {
            exemplars: vec![0, 1],
            assignment: vec![Some(0), Some(1), Some(0)],
            converged: true,
            iterations_used: 1,
        };
        let labels = assign_soft_labels(&e, &a, &[2]).unwrap();
        assert_eq!(labels.soft_labels[0], vec![0.5, 0.5]);
    }

    #[test]
    fn soft_label_closed_form() {
        // Squared distances 0 and ln 3.
        let e = points(&[0.0, 3f64.ln().sqrt()]);
        let a = ClusterAssignment {
            exemplars: vec![0, 1],
            assignment: vec![Some(0), Some(1)],
            converged: true,
            iterations_used: 1,
        };
        let labels = assign_soft_labels(&e, &a, &[0]).unwrap();
        assert!((labels.soft_labels[0][0] - 0.75).abs() < 1e-12);
        assert!((labels.soft_labels[0][1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn single_exemplar_gives_certain_labels() {
        let e = points(&[0.0, 1.0, 2.0]);
        let labels = assign_soft_labels(&e, &one_cluster(3, 1), &[0, 1, 2]).unwrap();
        assert!(labels.soft_labels.iter().all(|l| l == &vec![1.0]));
    }

    #[test]
    fn empty_clustering_and_duplicates_rejected() {
        let e = points(&[0.0, 1.0]);
        let empty = ClusterAssignment {
            exemplars: vec![],
            assignment: vec![None, None],
            converged: false,
            iterations_used: 0,
        };
        assert!(matches!(
            assign_soft_labels(&e, &empty, &[]),
            Err(Error::EmptyClustering)
        ));
        assert!(assign_soft_labels(&e, &one_cluster(2, 0), &[1, 1]).is_err());
    }
}
