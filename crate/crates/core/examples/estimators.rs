//! The four de-mediation estimators and the MMRM on one simulated trial,
//! with the fitted symptomatic-effect coefficients.

use demediate::dgm::{simulate_trial, ScenarioParams};
use demediate::gest::{estimate_many, GestOptions, Method, Trace};
use demediate::stochastics::StreamKey;

fn main() -> demediate::Result<()> {
    let params = ScenarioParams { e_dm: 0.0, ..ScenarioParams::default() };
    let trial = simulate_trial(&params, &StreamKey::new(11, vec![0]))?;
    for (m, r) in estimate_many(&trial, &Method::ALL, &GestOptions::default()) {
        let r = r?;
        print!("{:<12} theta {:>8.3}  model se {:.3}", m.as_str(), r.theta_hat, r.model_se);
        if let Trace::Demediation(t) = &r.trace {
            print!("  sym coefs {:.2} {:.2} {:.2}", t.coef_sym[0], t.coef_sym[1], t.coef_sym[2]);
            if let Some(b) = t.beta_sym {
                print!("  pooled {b:.2}");
            }
            if let Some(it) = t.iterations {
                print!("  iterations {it}");
            }
        }
        println!();
    }
    Ok(())
}
