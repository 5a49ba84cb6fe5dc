//! A small Monte Carlo study: point estimates over 100 trials, summarised
//! against the oracle true value.

use demediate::dgm::ScenarioParams;
use demediate::study::{render_table, run_scenario, scenario_truth, summarize_with_failures, StudyConfig};

fn main() -> demediate::Result<()> {
    let params = ScenarioParams { e_dm: 0.0, ..ScenarioParams::default() };
    let mut cfg = StudyConfig::new(params, 100, 2024);
    cfg.scenario_id = 1;
    let truth = scenario_truth(&cfg.params, 200_000, cfg.master_seed)?;
    let run = run_scenario(&cfg)?;
    println!("theta_true {truth:.3}");
    print!("{}", render_table(&summarize_with_failures(&run.results, truth, &run.failures)));
    Ok(())
}
