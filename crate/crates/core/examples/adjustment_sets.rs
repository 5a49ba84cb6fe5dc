//! Minimal adjustment sets for each symptomatic-treatment decision in the
//! trial DAG, and a few d-separation queries.

use demediate::dag::{format_set, parse_dag, NodeSet};

const DAG: &str = include_str!("../tests/fixtures/alzheimer_dag.txt");

fn set(names: &[&str]) -> NodeSet {
    names.iter().map(|s| s.to_string()).collect()
}

fn main() -> demediate::Result<()> {
    let g = parse_dag(DAG)?;
    println!("{} nodes, {} edges", g.len(), g.edges.len());
    for (x, y) in [("sym15", "y2"), ("sym1", "y2"), ("sym1", "y1.5"), ("sym05", "y2"), ("sym05", "y1")] {
        let sets: Vec<String> = g.minimal_adjustment_sets(x, y)?.iter().map(format_set).collect();
        println!("{x} -> {y}: {}", sets.join(" | "));
    }
    let given_y05 = g.d_separated(&set(&["sym05"]), &set(&["y0"]), &set(&["y05"]))?;
    println!("sym05 independent of y0 given y05: {given_y05}");
    Ok(())
}
