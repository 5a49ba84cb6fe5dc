//! Monte Carlo true value of the estimand under the null, half slowing and
//! full stop of the decline.

use demediate::dgm::{true_value_oracle, ScenarioParams};
use demediate::stochastics::StreamKey;

fn main() -> demediate::Result<()> {
    for e_dm in [1.0, 0.5, 0.0] {
        let params = ScenarioParams { e_dm, ..ScenarioParams::default() };
        let o = true_value_oracle(&params, 400_000, &StreamKey::new(1, vec![]))?;
        println!("E_DM {e_dm:.1}: theta {:.3} (se {:.3}, n {})", o.theta, o.se, o.n);
    }
    Ok(())
}
