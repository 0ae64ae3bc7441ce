mod common;

use sgc_dpl::affinity::{
    ap_cluster, net_similarity, uniform_preference, ApConfig, ClusterAssignment, PreferenceMode,
};
use sgc_dpl::embedding::{
    compute_similarity, generate_synthetic, pair_distances, SimilarityMatrix, Split, SyntheticSpec,
};
use sgc_dpl::evaluation::{evaluate_clustering, partition_scores};
use sgc_dpl::sgap::{adaptive_preference, sg_ap_cluster, PreferenceSearchConfig};

use common::*;
use rand::Rng;

#[test]
fn similarity_matches_double_loop() {
    for seed in 0..10 {
        let points = uniform_points(12, 5, seed);
        let s = compute_similarity(&unlabeled_set(&points)).unwrap();
        let oracle = naive_similarity(&points);
        for i in 0..12 {
            for j in 0..12 {
                assert!((s.get(i, j) - oracle[i][j]).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn pair_lists_match_exhaustive_enumeration() {
    let mut r = rng(7);
    let rows: Vec<_> = (0..14)
        .map(|i| {
            let f = vec![r.random_range(-3.0..3.0), r.random_range(-3.0..3.0)];
            (f, (i % 4) as u32 + 1, 0, Split::Labeled)
        })
        .collect();
    let set = set_with(&rows);
    let pairs = pair_distances(&set, true).unwrap();
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for i in 0..rows.len() {
        for j in (i + 1)..rows.len() {
            let d: f64 = rows[i].0.iter().zip(&rows[j].0).map(|(a, b)| (a - b) * (a - b)).sum();
            if rows[i].1 == rows[j].1 { pos.push(d) } else { neg.push(d) }
        }
    }
    let sorted = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v
    };
    let (got_pos, got_neg) = (sorted(pairs.positive), sorted(pairs.negative));
    // 14 samples over ids 1..4: group sizes 4, 4, 3, 3.
    assert_eq!(got_pos.len(), 6 + 6 + 3 + 3);
    assert_eq!(got_neg.len(), 91 - 18);
    for (a, b) in got_pos.iter().zip(sorted(pos)) {
        assert!((a - b).abs() <= 1e-12);
    }
    for (a, b) in got_neg.iter().zip(sorted(neg)) {
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn median_preference_matches_sort_oracle() {
    for seed in 0..5 {
        let s = compute_similarity(&unlabeled_set(&uniform_points(10, 3, 100 + seed))).unwrap();
        let oracle = sorted_median(s.off_diagonal().collect());
        let p = uniform_preference(&s, PreferenceMode::Median).unwrap();
        assert_eq!(p.diagonal(), vec![oracle; 10]);
        assert_eq!(s.off_diagonal().count(), 90);
    }
}

#[test]
fn two_pairs_reach_the_exhaustive_optimum() {
    let points = vec![vec![0.0, 0.0], vec![0.3, 0.0], vec![10.0, 10.0], vec![10.0, 10.4]];
    let s = uniform_preference(&compute_similarity(&unlabeled_set(&points)).unwrap(), PreferenceMode::Median)
        .unwrap();
    let out = ap_cluster(&s, &ApConfig::default()).unwrap();
    assert_eq!(out.cluster_count(), 2);
    assert_eq!(out.assignment[0], out.assignment[1]);
    assert_eq!(out.assignment[2], out.assignment[3]);
    let m = matrix(&s);
    assert!((objective(&m, &out) - brute_force_optimum(&m)).abs() <= 1e-12);
}

#[test]
fn minimum_preference_gives_no_more_exemplars_than_median() {
    for seed in 0..30 {
        let s = compute_similarity(&unlabeled_set(&uniform_points(6, 2, 200 + seed))).unwrap();
        let ap = ApConfig::default();
        let low = ap_cluster(&uniform_preference(&s, PreferenceMode::Min).unwrap(), &ap).unwrap();
        let mid = ap_cluster(&uniform_preference(&s, PreferenceMode::Median).unwrap(), &ap).unwrap();
        assert!(low.cluster_count() <= mid.cluster_count(), "seed {seed}");
    }
}

#[test]
fn net_similarity_matches_summation_oracle() {
    for seed in 0..10 {
        let s = uniform_preference(
            &compute_similarity(&unlabeled_set(&uniform_points(9, 2, 300 + seed))).unwrap(),
            PreferenceMode::Median,
        )
        .unwrap();
        let out = ap_cluster(&s, &ApConfig::default()).unwrap();
        let oracle = objective(&matrix(&s), &out);
        assert!((net_similarity(&s, &out).unwrap() - oracle).abs() <= 1e-12);
    }
}

#[test]
fn net_similarity_hand_values() {
    let rows = vec![
        vec![-2.0, -1.0, -5.0],
        vec![-1.0, -2.0, -1.0],
        vec![-5.0, -1.0, -2.0],
    ];
    let s = SimilarityMatrix::from_rows(&rows).unwrap();
    let one = ClusterAssignment {
        exemplars: vec![1],
        assignment: vec![Some(1); 3],
        converged: true,
        iterations_used: 1,
    };
    assert_eq!(net_similarity(&s, &one).unwrap(), -4.0);
    let all = ClusterAssignment {
        exemplars: vec![0, 1, 2],
        assignment: vec![Some(0), Some(1), Some(2)],
        converged: true,
        iterations_used: 1,
    };
    assert_eq!(net_similarity(&s, &all).unwrap(), -6.0);
}

#[test]
fn partition_scores_match_contingency_oracle() {
    let mut r = rng(11);
    for _ in 0..50 {
        let n = r.random_range(5..40);
        let pred: Vec<usize> = (0..n).map(|_| r.random_range(0..4)).collect();
        let truth: Vec<u32> = (0..n).map(|_| r.random_range(0..5)).collect();
        let (nmi, ari, ..) = partition_scores(&pred, &truth).unwrap();
        let (o_nmi, o_ari) = contingency_scores(&pred, &truth);
        assert!((nmi - o_nmi).abs() <= 1e-12, "nmi {nmi} vs {o_nmi}");
        assert!((ari - o_ari).abs() <= 1e-12, "ari {ari} vs {o_ari}");
    }
}

#[test]
fn uniform_scaling_keeps_exemplars() {
    for seed in 0..10 {
        let points = uniform_points(10, 2, 400 + seed);
        let scaled: Vec<Vec<f64>> = points.iter().map(|p| p.iter().map(|v| v * 3.0).collect()).collect();
        let s1 = compute_similarity(&unlabeled_set(&points)).unwrap();
        let s2 = compute_similarity(&unlabeled_set(&scaled)).unwrap();
        let p = sorted_median(s1.off_diagonal().collect());
        let ap = ApConfig::default();
        let a1 = ap_cluster(&adaptive_preference(&s1, p).unwrap(), &ap).unwrap();
        let a2 = ap_cluster(&adaptive_preference(&s2, 9.0 * p).unwrap(), &ap).unwrap();
        assert_eq!(a1.exemplars, a2.exemplars, "seed {seed}");
    }
}

#[test]
fn guided_clustering_finds_the_unlabeled_count() {
    for seed in 0..10 {
        let spec = SyntheticSpec {
            identities: 12,
            samples_per_identity: 8,
            dim: 6,
            spacing: 10.0,
            labeled_fraction: 0.5,
            seed,
            ..SyntheticSpec::default()
        };
        let data = generate_synthetic(&spec).unwrap();
        let labeled = data.select(Split::Labeled).unwrap();
        let unlabeled = data.select(Split::Unlabeled).unwrap();
        let (out, search) =
            sg_ap_cluster(&labeled, &unlabeled, &PreferenceSearchConfig::new(6), &ApConfig::default())
                .unwrap();
        assert!(search.matched);
        assert_eq!(out.cluster_count(), 6, "seed {seed}");
        let truth: Vec<u32> = unlabeled.ground_truth().into_iter().flatten().collect();
        assert_eq!(evaluate_clustering(&out, &truth).unwrap().ari, 1.0);
    }
}
