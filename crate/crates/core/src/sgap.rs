//! Semantics-guided affinity propagation.
//!
//! Each point gets a preference `SR(i) * p`, where the similarity-ranking
//! coefficient `SR(i)` is the point's off-diagonal row sum relative to the
//! mean row sum. The shared scalar `p` is chosen by bisection so that
//! clustering the labeled set yields as many exemplars as it has identities;
//! the unlabeled set is then clustered with that `p`.

use serde::{Deserialize, Serialize};

use crate::affinity::{ap_cluster, median_off_diagonal, min_off_diagonal, ApConfig, ClusterAssignment};
use crate::embedding::{compute_similarity, EmbeddingSet, SimilarityMatrix};
use crate::error::{Error, Result};

/// Which samples the similarity-ranking weights of the labeled search are
/// computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankingScope {
    /// Weights from the labeled similarity matrix alone.
    #[default]
    LabeledOnly,
    /// Weights from the joint labeled + unlabeled matrix, restricted to the
    /// labeled rows.
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreferenceSearchConfig {
    pub target_cluster_count: usize,
    /// Stop once this many consecutive probes returned the same count.
    pub stall_window: usize,
    pub max_search_steps: usize,
    /// First probe; `None` uses the median labeled off-diagonal similarity.
    pub initial_p: Option<f64>,
    pub scope: RankingScope,
}

impl PreferenceSearchConfig {
    pub fn new(target_cluster_count: usize) -> Self {
        PreferenceSearchConfig {
            target_cluster_count,
            stall_window: 5,
            max_search_steps: 40,
            initial_p: None,
            scope: RankingScope::LabeledOnly,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.stall_window == 0 || self.max_search_steps == 0 {
            return Err(Error::input("stall window and step cap must be positive"));
        }
        if let Some(p) = self.initial_p {
            if !(p <= 0.0) {
                return Err(Error::input(format!("initial p {p} must be <= 0")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchProbe {
    pub p: f64,
    pub cluster_count: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceSearchResult {
    pub p_star: f64,
    pub labeled_cluster_count: usize,
    pub target_cluster_count: usize,
    /// Every probe in the order it was run.
    pub trace: Vec<SearchProbe>,
    /// True when a probe hit the target count exactly.
    pub matched: bool,
}

/// `SR(i) = N * rowsum(i) / Σ rowsum`, computed as `rowsum(i) / mean(rowsum)`
/// with a shifted mean so that equal row sums give exactly 1.
pub fn similarity_ranking(similarity: &SimilarityMatrix) -> Result<Vec<f64>> {
    let n = similarity.n();
    let row_sums: Vec<f64> = (0..n)
        .map(|i| {
            similarity
                .row(i)
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, v)| *v)
                .sum()
        })
        .collect();
    let total: f64 = row_sums.iter().sum();
    if total == 0.0 || !total.is_finite() {
        return Err(Error::Degenerate(
            "similarity rows sum to zero; all points coincide".into(),
        ));
    }
    let base = row_sums[0];
    let mean = base + row_sums.iter().map(|v| v - base).sum::<f64>() / n as f64;
    Ok(row_sums.iter().map(|v| v / mean).collect())
}

/// Sets `s(i,i) = SR(i) * p`.
pub fn adaptive_preference(similarity: &SimilarityMatrix, p: f64) -> Result<SimilarityMatrix> {
    let ranking = similarity_ranking(similarity)?;
    adaptive_preference_with(similarity, &ranking, p)
}

/// As [`adaptive_preference`], with precomputed ranking weights.
pub fn adaptive_preference_with(
    similarity: &SimilarityMatrix,
    ranking: &[f64],
    p: f64,
) -> Result<SimilarityMatrix> {
    if !(p <= 0.0) {
        return Err(Error::input(format!("preference scalar p = {p} must be <= 0")));
    }
    let diagonal: Vec<f64> = ranking.iter().map(|sr| sr * p).collect();
    similarity.with_diagonal(&diagonal)
}

fn better(candidate: &SearchProbe, incumbent: &SearchProbe, target: usize) -> bool {
    let key = |probe: &SearchProbe| {
        (
            probe.cluster_count.abs_diff(target),
            // Over-clustering wins ties against under-clustering.
            probe.cluster_count < target,
        )
    };
    key(candidate) < key(incumbent)
}

/// Bisection for the preference scalar that makes clustering of the labeled
/// similarity produce `target_cluster_count` exemplars.
pub fn search_p_star(
    labeled_similarity: &SimilarityMatrix,
    config: &PreferenceSearchConfig,
    ap_config: &ApConfig,
) -> Result<PreferenceSearchResult> {
    let ranking = similarity_ranking(labeled_similarity)?;
    search_p_star_weighted(labeled_similarity, &ranking, config, ap_config)
}

/// Bisection with externally supplied ranking weights.
pub fn search_p_star_weighted(
    labeled_similarity: &SimilarityMatrix,
    ranking: &[f64],
    config: &PreferenceSearchConfig,
    ap_config: &ApConfig,
) -> Result<PreferenceSearchResult> {
    config.validate()?;
    let n = labeled_similarity.n();
    let target = config.target_cluster_count;
    if target < 2 || target > n {
        return Err(Error::GuidanceUnavailable(format!(
            "target cluster count {target} must lie in 2..={n}"
        )));
    }
    if ranking.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: ranking.len(),
        });
    }
    let min_s = min_off_diagonal(labeled_similarity);
    if !(min_s < 0.0) {
        return Err(Error::Degenerate("all labeled points coincide".into()));
    }
    let mut low = 2.0 * min_s;
    let mut high = 0.0f64;
    let mut p = config
        .initial_p
        .unwrap_or_else(|| median_off_diagonal(labeled_similarity));

    let mut trace: Vec<SearchProbe> = Vec::new();
    let mut best: Option<SearchProbe> = None;
    let mut widenings = 0;
    let mut low_checked = false;

    let probe = |p: f64, trace: &mut Vec<SearchProbe>| -> Result<SearchProbe> {
        let s = adaptive_preference_with(labeled_similarity, ranking, p)?;
        let out = ap_cluster(&s, ap_config)?;
        let probe = SearchProbe {
            p,
            cluster_count: out.cluster_count(),
            converged: out.converged,
        };
        trace.push(probe);
        Ok(probe)
    };

    while trace.len() < config.max_search_steps {
        let result = match probe(p, &mut trace) {
            Ok(r) => r,
            Err(Error::NumericalFailure { .. }) => break,
            Err(e) => return Err(e),
        };
        if best.is_none_or(|b| better(&result, &b, target)) {
            best = Some(result);
        }
        if result.cluster_count == target {
            break;
        }
        let w = config.stall_window;
        if trace.len() >= w
            && trace[trace.len() - w..]
                .iter()
                .all(|t| t.cluster_count == result.cluster_count)
        {
            break;
        }

        if result.cluster_count > target {
            high = p;
            if !low_checked && p > low {
                // Probe the lower bracket end before bisecting, widening it
                // while it still over-clusters.
                low_checked = true;
                p = low;
                continue;
            }
            if p == low {
                if widenings < 8 {
                    widenings += 1;
                    low *= 2.0;
                    p = low;
                    continue;
                }
                break;
            }
        } else {
            low = p;
            low_checked = true;
        }
        let next = 0.5 * (low + high);
        if next == p || (high - low).abs() <= f64::EPSILON * min_s.abs() {
            break;
        }
        p = next;
    }

    let best = best.ok_or(Error::SearchFailure {
        probes: trace.len(),
    })?;
    Ok(PreferenceSearchResult {
        p_star: best.p,
        labeled_cluster_count: best.cluster_count,
        target_cluster_count: target,
        matched: best.cluster_count == target,
        trace,
    })
}

/// Searches `p*` on the labeled set, then clusters the unlabeled set with
/// preferences `SR_u(i) * p*`.
pub fn sg_ap_cluster(
    labeled: &EmbeddingSet,
    unlabeled: &EmbeddingSet,
    config: &PreferenceSearchConfig,
    ap_config: &ApConfig,
) -> Result<(ClusterAssignment, PreferenceSearchResult)> {
    if labeled.dim() != unlabeled.dim() {
        return Err(Error::DimensionMismatch {
            expected: labeled.dim(),
            got: unlabeled.dim(),
        });
    }
    let labeled_sim = compute_similarity(labeled)?;
    let search = match config.scope {
        RankingScope::LabeledOnly => search_p_star(&labeled_sim, config, ap_config)?,
        RankingScope::Joint => {
            let joint = compute_similarity(&labeled.concat(unlabeled)?)?;
            let ranking = similarity_ranking(&joint)?;
            search_p_star_weighted(&labeled_sim, &ranking[..labeled.len()], config, ap_config)?
        }
    };
    let unlabeled_sim = compute_similarity(unlabeled)?;
    let s = adaptive_preference(&unlabeled_sim, search.p_star)?;
    let assignment = ap_cluster(&s, ap_config)?;
    Ok((assignment, search))
}
