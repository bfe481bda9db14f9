use ldl_core::amend::{
    amend_distribution, compute_confidences, compute_prototypes, task_crgraph, AlphaNormalization,
    PrototypeMode, Prototypes,
};
use ldl_core::embeddings::EmotionVocabulary;
use ldl_core::nn::{cosine_similarity, Matrix};
use ldl_core::semantic::semantic_crgraph;
use ldl_core::transport::{confidence, normalize_similarities, CrGraph, GroundCost};
use proptest::prelude::*;

fn prototypes(rows: &[Vec<f64>]) -> Prototypes {
    let m = Matrix::from_rows(rows).unwrap();
    let labels: Vec<usize> = (1..=rows.len()).collect();
    compute_prototypes(&m, &labels, rows.len(), &vec![1.0; rows.len()], PrototypeMode::WeightedMean).unwrap()
}

fn vectors(c: std::ops::Range<usize>, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-3.0f64..3.0, d), c)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn distributions_are_strictly_positive_simplices(
        rows in vectors(2..8, 4),
        f in prop::collection::vec(-3.0f64..3.0, 4),
    ) {
        let l = amend_distribution(&f, &prototypes(&rows), 1e-8).unwrap();
        prop_assert!((l.0.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(l.0.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn distribution_follows_prototype_permutation(
        rows in vectors(2..7, 3),
        f in prop::collection::vec(-3.0f64..3.0, 3),
        shift in 0usize..7,
    ) {
        let c = rows.len();
        let perm: Vec<usize> = (0..c).map(|k| (k + shift) % c).collect();
        let permuted: Vec<Vec<f64>> = perm.iter().map(|&k| rows[k].clone()).collect();
        let a = amend_distribution(&f, &prototypes(&rows), 1e-8).unwrap();
        let b = amend_distribution(&f, &prototypes(&permuted), 1e-8).unwrap();
        for (i, &k) in perm.iter().enumerate() {
            prop_assert!((b.0[i] - a.0[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn normalized_similarities_are_simplices(s in prop::collection::vec(-1.0f64..=1.0, 1..9)) {
        let p = normalize_similarities(&CrGraph(s));
        prop_assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(p.as_slice().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn semantic_graph_is_bounded_and_scale_free(
        g in prop::collection::vec(-2.0f64..2.0, 16),
        scale in 0.01f64..100.0,
    ) {
        prop_assume!(g.iter().any(|v| v.abs() > 1e-6));
        let vocab = EmotionVocabulary::fixture();
        let a = semantic_crgraph(&vocab, &g).unwrap();
        let scaled: Vec<f64> = g.iter().map(|v| v * scale).collect();
        let b = semantic_crgraph(&vocab, &scaled).unwrap();
        for (x, y) in a.0.iter().zip(&b.0) {
            prop_assert!((-1.0..=1.0).contains(x));
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn task_graph_is_cosine_per_class(
        rows in vectors(2..8, 5),
        f in prop::collection::vec(-3.0f64..3.0, 5),
    ) {
        prop_assume!(rows.iter().chain([&f]).all(|r| r.iter().any(|v| v.abs() > 1e-6)));
        let s = task_crgraph(&prototypes(&rows), &f).unwrap();
        for (k, row) in rows.iter().enumerate() {
            prop_assert_eq!(s.0[k], cosine_similarity(row, &f).unwrap());
            prop_assert!((-1.0..=1.0).contains(&s.0[k]));
        }
    }

    #[test]
    fn unit_confidences_give_class_means_in_both_modes(
        rows in vectors(6..20, 3),
        labels in prop::collection::vec(1usize..=3, 20),
    ) {
        let labels = &labels[..rows.len()];
        let m = Matrix::from_rows(&rows).unwrap();
        let ones = vec![1.0; rows.len()];
        let w = compute_prototypes(&m, labels, 3, &ones, PrototypeMode::WeightedMean).unwrap();
        let l = compute_prototypes(&m, labels, 3, &ones, PrototypeMode::CountNormalized).unwrap();
        for k in 1..=3 {
            let members: Vec<&Vec<f64>> = rows.iter().zip(labels).filter(|(_, &y)| y == k).map(|(r, _)| r).collect();
            if members.is_empty() {
                prop_assert!(!w.valid[k - 1]);
                continue;
            }
            for d in 0..3 {
                let mean = members.iter().map(|r| r[d]).sum::<f64>() / members.len() as f64;
                prop_assert!((w.centers[(k - 1, d)] - mean).abs() < 1e-12);
                prop_assert!((l.centers[(k - 1, d)] - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn weighted_prototypes_stay_in_member_box(
        rows in vectors(2..12, 3),
        alpha in prop::collection::vec(0.01f64..100.0, 12),
    ) {
        let n = rows.len();
        let m = Matrix::from_rows(&rows).unwrap();
        let p = compute_prototypes(&m, &vec![1; n], 1, &alpha[..n], PrototypeMode::WeightedMean).unwrap();
        for d in 0..3 {
            let lo = rows.iter().map(|r| r[d]).fold(f64::INFINITY, f64::min);
            let hi = rows.iter().map(|r| r[d]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(p.centers[(0, d)] >= lo - 1e-12 && p.centers[(0, d)] <= hi + 1e-12);
        }
    }

    #[test]
    fn class_mean_one_normalizes_each_class(
        raw_w in prop::collection::vec(0.0f64..1.0, 4..30),
        labels in prop::collection::vec(1usize..=4, 30),
    ) {
        let n = raw_w.len();
        let labels = &labels[..n];
        let sem: Vec<CrGraph> = raw_w.iter().map(|&w| CrGraph(vec![w, -w, 0.5])).collect();
        let task: Vec<CrGraph> = (0..n).map(|_| CrGraph(vec![0.0, 0.0, 0.5])).collect();
        let conf = compute_confidences(
            &sem, &task, labels, 4, 1e-3, &GroundCost::Discrete, AlphaNormalization::ClassMeanOne,
        ).unwrap();
        for k in 1..=4 {
            let members: Vec<f64> = conf.alpha.iter().zip(labels).filter(|(_, &y)| y == k).map(|(&a, _)| a).collect();
            if !members.is_empty() {
                prop_assert!((members.iter().sum::<f64>() / members.len() as f64 - 1.0).abs() < 1e-9);
            }
        }
        prop_assert!(conf.alpha.iter().all(|&a| a > 0.0));
    }

    #[test]
    fn confidence_strictly_decreases_with_the_gap(a in 0.0f64..0.9, b in 0.0f64..0.9) {
        prop_assume!((a - b).abs() > 1e-6);
        let sem = CrGraph(vec![1.0, -1.0]);
        let near = CrGraph(vec![1.0 - 2.0 * a.min(b), -1.0 + 2.0 * a.min(b)]);
        let far = CrGraph(vec![1.0 - 2.0 * a.max(b), -1.0 + 2.0 * a.max(b)]);
        let cn = confidence(&sem, &near, 1e-3, &GroundCost::Discrete).unwrap();
        let cf = confidence(&sem, &far, 1e-3, &GroundCost::Discrete).unwrap();
        prop_assert!(cn > cf);
        prop_assert!(cn <= 1e3 + 1e-9);
    }
}

#[test]
fn equidistant_prototypes_give_uniform_distribution() {
    for c in 2..8 {
        let rows: Vec<Vec<f64>> = (0..c)
            .map(|k| (0..c).map(|d| if d == k { 2.5 } else { 0.0 }).collect())
            .collect();
        let l = amend_distribution(&vec![0.0; c], &prototypes(&rows), 1e-8).unwrap();
        for v in l.0 {
            assert!((v - 1.0 / c as f64).abs() < 1e-9);
        }
    }
}
