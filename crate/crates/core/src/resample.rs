//! Patient-level bootstrap and jackknife, and the one-sided Wald test.

use crate::dgm::TrialData;
use crate::error::{Error, Result};
use crate::gest::{Analysis, GestOptions, Method};
use crate::special::z_upper;
use crate::stochastics::{derive_stream, StreamKey};

/// Redraws allowed per requested replicate before the bootstrap gives up.
pub const REDRAW_FACTOR: usize = 10;

/// One-sided level used throughout.
pub const DEFAULT_ALPHA: f64 = 0.025;

/// Inference attached to one estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceResult {
    pub se_model: f64,
    pub se_bootstrap: Option<f64>,
    pub se_jackknife: Option<f64>,
    pub ci_basic: Option<(f64, f64)>,
    pub reject_model: bool,
    pub reject_bootstrap: Option<bool>,
    pub reject_jackknife: Option<bool>,
    pub b: usize,
}

/// Bootstrap output for one estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    pub se: f64,
    pub ci_basic: (f64, f64),
    pub replicates: Vec<f64>,
    pub redraws: usize,
}

/// Rejects `θ = 0` in favour of benefit (`θ < 0`) at one-sided level `alpha`.
pub fn wald_test(theta_hat: f64, se: f64, alpha_one_sided: f64) -> bool {
    theta_hat / se < -z_upper(alpha_one_sided)
}

fn sample_sd(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return 0.0;
    }
    let m = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Sample quantile with linear interpolation between order statistics
/// (the common "type 7" definition).
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Basic bootstrap interval `(2θ̂ − q₀.₉₇₅, 2θ̂ − q₀.₀₂₅)` at two-sided level `1 − 2·alpha`.
pub fn basic_interval(theta_hat: f64, replicates: &[f64], alpha: f64) -> (f64, f64) {
    let mut s = replicates.to_vec();
    s.sort_by(f64::total_cmp);
    (
        2.0 * theta_hat - quantile(&s, 1.0 - alpha),
        2.0 * theta_hat - quantile(&s, alpha),
    )
}

/// Indices of one bootstrap resample.
fn resample_indices(n: usize, key: &StreamKey) -> Vec<usize> {
    let mut s = derive_stream(key);
    (0..n).map(|_| s.index(n)).collect()
}

/// Runs `eval` on `b` resamples; replicate `r` tries keys `key.child(r).child(k)`
/// for `k = 0, 1, …` until `eval` succeeds. Returns the accepted values and
/// the number of redraws.
fn bootstrap_core<T>(
    trial: &TrialData,
    b: usize,
    key: &StreamKey,
    label: &str,
    mut eval: impl FnMut(&TrialData) -> Result<T>,
) -> Result<(Vec<T>, usize)> {
    if b < 2 {
        return Err(Error::Domain(format!("bootstrap needs at least 2 replicates, got {b}")));
    }
    let budget = REDRAW_FACTOR * b;
    let mut redraws = 0;
    let mut out = Vec::with_capacity(b);
    for r in 0..b {
        let rk = key.child(r as u64);
        let mut attempt = 0u64;
        loop {
            let data = trial.subset(&resample_indices(trial.len(), &rk.child(attempt)));
            match eval(&data) {
                Ok(v) => {
                    out.push(v);
                    break;
                }
                Err(e) => {
                    redraws += 1;
                    attempt += 1;
                    if redraws > budget {
                        return Err(Error::Resampling {
                            estimator: label.to_string(),
                            msg: format!("more than {budget} redraws; last failure: {e}"),
                        });
                    }
                }
            }
        }
    }
    Ok((out, redraws))
}

/// Bootstrap of an arbitrary scalar statistic.
pub fn bootstrap(
    trial: &TrialData,
    estimator: impl Fn(&TrialData) -> Result<f64>,
    b: usize,
    key: &StreamKey,
) -> Result<BootstrapResult> {
    let theta = estimator(trial)?;
    let (reps, redraws) = bootstrap_core(trial, b, key, "statistic", estimator)?;
    Ok(BootstrapResult {
        se: sample_sd(&reps),
        ci_basic: basic_interval(theta, &reps, DEFAULT_ALPHA),
        replicates: reps,
        redraws,
    })
}

/// Bootstraps several estimators on shared resamples. A resample is redrawn
/// when any of the estimators fails on it.
pub fn bootstrap_methods(
    trial: &TrialData,
    methods: &[Method],
    opts: &GestOptions,
    theta_hat: &[f64],
    b: usize,
    key: &StreamKey,
) -> Result<Vec<BootstrapResult>> {
    let label = methods.iter().map(|m| m.as_str()).collect::<Vec<_>>().join("+");
    let (reps, redraws) = bootstrap_core(trial, b, key, &label, |data| {
        eval_methods(data, methods, opts)
    })?;
    Ok(methods
        .iter()
        .enumerate()
        .map(|(j, _)| {
            let r: Vec<f64> = reps.iter().map(|v| v[j]).collect();
            BootstrapResult {
                se: sample_sd(&r),
                ci_basic: basic_interval(theta_hat[j], &r, DEFAULT_ALPHA),
                replicates: r,
                redraws,
            }
        })
        .collect())
}

fn eval_methods(data: &TrialData, methods: &[Method], opts: &GestOptions) -> Result<Vec<f64>> {
    let a = Analysis::new(data, opts)?;
    methods.iter().map(|&m| a.estimate(m).map(|r| r.theta_hat)).collect()
}

/// Jackknife standard error `sqrt((n−1)/n · Σ(θ̂₍ᵢ₎ − mean)²)`.
pub fn jackknife_se(leave_one_out: &[f64]) -> f64 {
    let n = leave_one_out.len() as f64;
    let m = leave_one_out.iter().sum::<f64>() / n;
    ((n - 1.0) / n * leave_one_out.iter().map(|x| (x - m).powi(2)).sum::<f64>()).sqrt()
}

/// Jackknife of an arbitrary scalar statistic. Any failing fit is an error.
pub fn jackknife(trial: &TrialData, estimator: impl Fn(&TrialData) -> Result<f64>) -> Result<f64> {
    if trial.len() < 2 {
        return Err(Error::Domain("jackknife needs at least 2 patients".into()));
    }
    let loo = (0..trial.len())
        .map(|i| {
            estimator(&trial.without(i)).map_err(|e| Error::Resampling {
                estimator: "statistic".into(),
                msg: format!("leaving out patient {i}: {e}"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(jackknife_se(&loo))
}

/// Jackknife standard errors of several estimators.
pub fn jackknife_methods(trial: &TrialData, methods: &[Method], opts: &GestOptions) -> Result<Vec<f64>> {
    if trial.len() < 2 {
        return Err(Error::Domain("jackknife needs at least 2 patients".into()));
    }
    let mut loo = vec![Vec::with_capacity(trial.len()); methods.len()];
    for i in 0..trial.len() {
        let data = trial.without(i);
        let a = Analysis::new(&data, opts).map_err(|e| Error::Resampling {
            estimator: "all".into(),
            msg: format!("leaving out patient {i}: {e}"),
        })?;
        for (j, &m) in methods.iter().enumerate() {
            let r = a.estimate(m).map_err(|e| Error::Resampling {
                estimator: m.to_string(),
                msg: format!("leaving out patient {i}: {e}"),
            })?;
            loo[j].push(r.theta_hat);
        }
    }
    Ok(loo.iter().map(|v| jackknife_se(v)).collect())
}
