//! Sensitivity grid over the spread of the symptomatic effect and the
//! placebo SD of the year-2 score, writing the heatmap CSV to stdout.

use demediate::dgm::ScenarioParams;
use demediate::gest::Method;
use demediate::study::{run_grid, write_heatmap_csv, GridAxis, GridConfig, StudyConfig};

fn main() -> demediate::Result<()> {
    let params = ScenarioParams { e_dm: 0.0, ..ScenarioParams::default() };
    let mut base = StudyConfig::new(params, 30, 9);
    base.methods = Method::GEST.to_vec();
    let cfg = GridConfig {
        sym_sds: vec![1.0, 10.0],
        axis: GridAxis::TargetSd { values: vec![10.0, 14.0], decline_share: 0.8 },
        sym_width: 2.0,
        base,
        n_oracle: 100_000,
    };
    let cells = run_grid(&cfg)?;
    for c in &cells {
        let d = c.relative_sd_difference(Method::Mod1, Method::Established);
        println!("sym_sd {:>4} sd_y2_star {:>4}: mod1 vs established SD {:+.1}%", c.sym_sd, c.axis_value, d.unwrap_or(f64::NAN));
    }
    write_heatmap_csv(&cells, cfg.axis.name(), std::io::stdout().lock())
}
