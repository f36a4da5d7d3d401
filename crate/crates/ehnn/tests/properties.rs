//! Property tests for the structural invariants that hold for every input:
//! serialization round trips, the permutation group action, and segment
//! reduction against a brute-force reference.

use std::rc::Rc;

use proptest::prelude::*;

use ehnn::array::{DiffArray, Tape};
use ehnn::hypergraph::{overlap, Features, Hypergraph, Permutation};

fn arb_hypergraph() -> impl Strategy<Value = Hypergraph> {
    (2usize..8).prop_flat_map(|n| {
        let edge = proptest::sample::subsequence((0..n).collect::<Vec<_>>(), 1..=n);
        (
            Just(n),
            proptest::collection::vec(edge, 0..5),
            proptest::collection::vec(-10.0f64..10.0, n),
        )
            .prop_map(|(n, edges, feats)| {
                Hypergraph::new(n, edges)
                    .unwrap()
                    .with_node_features(Features {
                        cols: 1,
                        data: feats,
                    })
                    .unwrap()
            })
    })
}

fn permutation_from_seed(n: usize, seed: u64) -> Permutation {
    let mut rng = ehnn::rng::Rng::new(seed);
    Permutation::new(rng.permutation(n)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn json_round_trip(h in arb_hypergraph()) {
        let back = Hypergraph::from_json(&h.to_json().unwrap()).unwrap();
        prop_assert_eq!(back, h);
    }

    #[test]
    fn permutation_inverse_restores_original(h in arb_hypergraph(), seed in any::<u64>()) {
        let p = permutation_from_seed(h.num_nodes(), seed);
        let round = h.apply_permutation(&p).unwrap().apply_permutation(&p.inverse()).unwrap();
        prop_assert!(round.canonical_eq(&h));
    }

    #[test]
    fn overlap_is_symmetric_and_bounded(
        a in proptest::collection::btree_set(0usize..12, 0..6),
        b in proptest::collection::btree_set(0usize..12, 0..6),
    ) {
        let av: Vec<usize> = a.iter().copied().collect();
        let bv: Vec<usize> = b.iter().copied().collect();
        let o = overlap(&av, &bv);
        prop_assert_eq!(o, overlap(&bv, &av));
        prop_assert!(o <= av.len().min(bv.len()));
        prop_assert_eq!(o, a.intersection(&b).count());
    }

    #[test]
    fn segment_sum_matches_brute_force(
        values in proptest::collection::vec(-100.0f64..100.0, 1..40),
        segments in 1usize..5,
    ) {
        let ids: Vec<usize> = (0..values.len()).map(|i| i % segments).collect();
        let tape = Tape::new();
        let arr = DiffArray::from_vec(vec![values.len(), 1], values.clone());
        let summed = tape.segment_sum(&arr, &Rc::new(ids.clone()), segments).unwrap();
        for s in 0..segments {
            let want: f64 = values
                .iter()
                .zip(&ids)
                .filter(|(_, &id)| id == s)
                .map(|(v, _)| v)
                .sum();
            prop_assert!((summed.data()[s] - want).abs() < 1e-9);
        }
    }

    #[test]
    fn gather_then_scatter_is_identity_on_counts(
        rows in 1usize..10,
        picks in proptest::collection::vec(0usize..10, 1..30),
    ) {
        let picks: Vec<usize> = picks.into_iter().map(|p| p % rows).collect();
        let tape = Tape::new();
        let arr = DiffArray::from_vec(vec![rows, 1], (0..rows).map(|r| r as f64 + 1.0).collect());
        let gathered = tape.gather_rows(&arr, &Rc::new(picks.clone())).unwrap();
        let scattered = tape.segment_sum(&gathered, &Rc::new(picks.clone()), rows).unwrap();
        // each row is its value times the number of times it was picked
        for r in 0..rows {
            let count = picks.iter().filter(|&&p| p == r).count() as f64;
            prop_assert!((scattered.data()[r] - (r as f64 + 1.0) * count).abs() < 1e-12);
        }
    }
}
