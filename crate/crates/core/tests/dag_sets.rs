//! Adjustment sets on the trial DAG and d-separation against a brute-force
//! path oracle.

mod common;

use common::oracle_d_separated;
use demediate::dag::{format_set, parse_dag, CausalDag, NodeSet};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FIXTURE: &str = include_str!("fixtures/alzheimer_dag.txt");

fn set(names: &[&str]) -> NodeSet {
    names.iter().map(|s| s.to_string()).collect()
}

fn names(g: &CausalDag, idx: &[usize]) -> NodeSet {
    idx.iter().map(|&i| g.name(i).to_string()).collect()
}

#[test]
fn fixture_structure() {
    let g = parse_dag(FIXTURE).unwrap();
    assert_eq!(g.len(), 14);
    assert_eq!(g.edges.len(), 26);
    assert_eq!(g.nodes.iter().filter(|n| n.is_latent()).count(), 5);
    assert_eq!(g.exposure(), Some("sym15"));
    assert_eq!(g.outcome(), Some("y2"));
}

#[test]
fn table_one_rows() {
    let g = parse_dag(FIXTURE).unwrap();
    let rows: [(&str, &str, &[&str]); 6] = [
        ("sym15", "y2", &["sym05", "sym1", "y1.5"]),
        ("sym1", "y2", &["sym05", "y1"]),
        ("sym1", "y1.5", &["sym05", "y1"]),
        ("sym05", "y2", &["y05"]),
        ("sym05", "y1.5", &["y05"]),
        ("sym05", "y1", &["y05"]),
    ];
    for (x, y, expected) in rows {
        let sets = g.minimal_adjustment_sets(x, y).unwrap();
        let shown: Vec<String> = sets.iter().map(format_set).collect();
        assert_eq!(sets, vec![set(expected)], "{x} -> {y}: {shown:?}");
    }
}

#[test]
fn returned_sets_are_valid_and_minimal() {
    let g = parse_dag(FIXTURE).unwrap();
    for x in ["sym05", "sym1", "sym15", "treat", "y0"] {
        for y in ["y1", "y1.5", "y2"] {
            for s in g.minimal_adjustment_sets(x, y).unwrap() {
                for drop in &s {
                    let mut smaller = s.clone();
                    smaller.remove(drop);
                    let again = g.minimal_adjustment_sets(x, y).unwrap();
                    assert!(!again.contains(&smaller));
                }
            }
        }
    }
}

#[test]
fn sym05_y2_against_oracle_for_small_conditioning_sets() {
    let g = parse_dag(FIXTURE).unwrap();
    let a = g.node("sym05").unwrap();
    let b = g.node("y2").unwrap();
    let others: Vec<usize> = (0..g.len()).filter(|&v| v != a && v != b).collect();
    let mut checked = 0;
    for mask in 0u32..1 << others.len() {
        if mask.count_ones() > 3 {
            continue;
        }
        let c: Vec<usize> = others.iter().enumerate().filter(|(k, _)| mask >> k & 1 == 1).map(|(_, &v)| v).collect();
        let fast = g.d_separated(&names(&g, &[a]), &names(&g, &[b]), &names(&g, &c)).unwrap();
        assert_eq!(fast, oracle_d_separated(&g, &[a], &[b], &c), "given {:?}", names(&g, &c));
        checked += 1;
    }
    assert_eq!(checked, 1 + 12 + 66 + 220);
}

#[test]
fn random_queries_agree_with_oracle() {
    let g = parse_dag(FIXTURE).unwrap();
    let n = g.len();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut separated = 0;
    for _ in 0..10_000 {
        // Single-node A and B, random conditioning set from the rest.
        let a = rng.random_range(0..n);
        let mut b = rng.random_range(0..n - 1);
        if b >= a {
            b += 1;
        }
        let c: Vec<usize> = (0..n).filter(|&v| v != a && v != b && rng.random_bool(0.3)).collect();
        let parts = [vec![a], vec![b], c];
        let fast = g
            .d_separated(&names(&g, &parts[0]), &names(&g, &parts[1]), &names(&g, &parts[2]))
            .unwrap();
        assert_eq!(fast, oracle_d_separated(&g, &parts[0], &parts[1], &parts[2]));
        separated += usize::from(fast);
    }
    // Both answers occur often enough for the comparison to mean something.
    assert!(separated > 500 && separated < 9_500, "{separated}");
}

#[test]
fn overlapping_query_sets_are_rejected() {
    let g = parse_dag(FIXTURE).unwrap();
    assert!(g.d_separated(&set(&["y1"]), &set(&["y1"]), &set(&[])).is_err());
    assert!(g.d_separated(&set(&["nope"]), &set(&["y1"]), &set(&[])).is_err());
}

fn random_dag(n: usize, bits: &[bool]) -> CausalDag {
    let names: Vec<String> = (0..n).map(|i| format!("v{i}")).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut edges = Vec::new();
    let mut k = 0;
    for i in 0..n {
        for j in i + 1..n {
            if bits[k] {
                edges.push((refs[i], refs[j]));
            }
            k += 1;
        }
    }
    CausalDag::from_edges(&refs, &edges).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_graphs_match_oracle(bits in proptest::collection::vec(proptest::bool::weighted(0.3), 28), c_mask in 0u8..64) {
        let g = random_dag(8, &bits);
        let c: Vec<usize> = (2..8).filter(|k| c_mask >> (k - 2) & 1 == 1).collect();
        let fast = g.d_separated(&names(&g, &[0]), &names(&g, &[1]), &names(&g, &c)).unwrap();
        prop_assert_eq!(fast, oracle_d_separated(&g, &[0], &[1], &c));
    }

    #[test]
    fn adjustment_sets_block_backdoor_paths(bits in proptest::collection::vec(proptest::bool::weighted(0.35), 21)) {
        let g = random_dag(7, &bits);
        for s in g.minimal_adjustment_sets("v0", "v6").unwrap() {
            // No member sits on a causal path from the exposure.
            let de0 = g.descendants(0);
            let an6 = g.ancestors(6);
            for m in &s {
                let v = g.node(m).unwrap();
                prop_assert!(!(de0[v] && an6[v]));
            }
        }
    }

    #[test]
    fn serialize_is_a_fixed_point(bits in proptest::collection::vec(any::<bool>(), 15)) {
        let g = random_dag(6, &bits);
        let text = g.to_dagitty();
        let back = parse_dag(&text).unwrap();
        prop_assert_eq!(back.to_dagitty(), text);
    }
}
