//! Simulates one trial and prints arm means, initiation rates and the first
//! rows of the dataset CSV.

use demediate::dgm::{simulate_trial, write_dataset_csv, ScenarioParams, VISITS};
use demediate::stochastics::StreamKey;

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

fn main() -> demediate::Result<()> {
    let params = ScenarioParams::alternative();
    let trial = simulate_trial(&params, &StreamKey::new(7, vec![0]))?;
    let treat = trial.treat();
    println!("patients {} active {}", trial.len(), treat.iter().filter(|&&z| z == 1.0).count());
    for arm in [0.0, 1.0] {
        let rows = || treat.iter().enumerate().filter(move |(_, &z)| z == arm).map(|(i, _)| i);
        let y0 = trial.y0();
        print!("arm {arm}: y0 {:.2}", mean(rows().map(|i| y0[i])));
        for (v, t) in VISITS.iter().enumerate() {
            let y = trial.y(v);
            print!("  y{t} {:.2}", mean(rows().map(|i| y[i])));
        }
        println!();
    }
    for k in 0..3 {
        println!("initiations at visit {}: {}", k + 1, trial.sym(k).iter().filter(|&&s| s == 1.0).count());
    }
    let mut buf = Vec::new();
    write_dataset_csv(&trial, false, &mut buf)?;
    for line in String::from_utf8_lossy(&buf).lines().take(4) {
        println!("{line}");
    }
    Ok(())
}
