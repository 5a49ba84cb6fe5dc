//! Bootstrap and jackknife standard errors of the de-mediation estimators,
//! next to their model-based ones.

use demediate::dgm::{simulate_trial, ScenarioParams};
use demediate::gest::{estimate_many, GestOptions, Method};
use demediate::resample::{bootstrap_methods, jackknife_methods};
use demediate::stochastics::StreamKey;

fn main() -> demediate::Result<()> {
    let trial = simulate_trial(&ScenarioParams::alternative(), &StreamKey::new(5, vec![0]))?;
    let opts = GestOptions::default();
    let point: Vec<_> = estimate_many(&trial, &Method::GEST, &opts)
        .into_iter()
        .map(|(_, r)| r)
        .collect::<demediate::Result<_>>()?;
    let theta: Vec<f64> = point.iter().map(|r| r.theta_hat).collect();
    let boot = bootstrap_methods(&trial, &Method::GEST, &opts, &theta, 200, &StreamKey::new(5, vec![1]))?;
    let jack = jackknife_methods(&trial, &Method::GEST, &opts)?;
    println!("{:<12} {:>8} {:>8} {:>8} {:>8}  basic 95% interval", "method", "theta", "model", "boot", "jack");
    for (i, m) in Method::GEST.iter().enumerate() {
        let (lo, hi) = boot[i].ci_basic;
        println!(
            "{:<12} {:>8.3} {:>8.3} {:>8.3} {:>8.3}  [{lo:.2}, {hi:.2}]",
            m.as_str(),
            theta[i],
            point[i].model_se,
            boot[i].se,
            jack[i]
        );
    }
    Ok(())
}
