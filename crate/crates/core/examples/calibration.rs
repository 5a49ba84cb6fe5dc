//! Calibrates the decline variance and tau so that the placebo year-2 score
//! has a chosen SD, then checks the result on a fresh population.

use demediate::dgm::{apply_calibration, calibrate, implied_decline_share, placebo_y2_star_sd, ScenarioParams};
use demediate::stochastics::StreamKey;

fn main() -> demediate::Result<()> {
    let template = ScenarioParams::default();
    let key = StreamKey::new(1, vec![]);
    let share = implied_decline_share(&template, &key)?;
    println!("default decline share {share:.3}, tau {}", template.tau);
    for target in [10.0, 14.0] {
        let cal = calibrate(target, share, &template, &key)?;
        let params = apply_calibration(&template, &cal);
        let check = placebo_y2_star_sd(&params, 100_000, &StreamKey::new(2, vec![]))?;
        println!(
            "target {target}: decline variance {:.4}, tau {:.2}, SD {:.3}, fresh-sample SD {check:.3}",
            cal.decline_var, cal.tau, cal.achieved_sd
        );
    }
    Ok(())
}
