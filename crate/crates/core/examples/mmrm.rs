//! Reference MMRM: values after initiation are removed, then an unstructured
//! REML fit gives the year-2 contrast.

use demediate::dgm::{simulate_trial, ScenarioParams};
use demediate::mmrm::{fit_mmrm, mmrm_contrast_t2, set_post_ie_missing, MaskRule};
use demediate::stochastics::StreamKey;

fn main() -> demediate::Result<()> {
    let trial = simulate_trial(&ScenarioParams::alternative(), &StreamKey::new(3, vec![0]))?;
    for rule in [MaskRule::AfterInitiation, MaskRule::AtInitiation] {
        let long = set_post_ie_missing(&trial, rule);
        let missing = long.iter().filter(|r| r.y.is_none()).count();
        let fit = fit_mmrm(&long)?;
        let (theta, se) = mmrm_contrast_t2(&fit);
        println!(
            "{rule:?}: {missing} of {} values removed, contrast {theta:.3} (se {se:.3}), REML loglik {:.2}, {} iterations",
            long.len(),
            fit.reml_loglik,
            fit.iterations
        );
        println!("  placebo means {:.2?}", fit.cell_means[0]);
        println!("  active means  {:.2?}", fit.cell_means[1]);
    }
    Ok(())
}
