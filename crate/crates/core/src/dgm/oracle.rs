use rayon::prelude::*;

use super::{draw_underlying, progress_mean, ScenarioParams};
use crate::error::{Error, Result};
use crate::stochastics::{derive_stream, sample_truncated_bivariate_normal, StreamKey};

const BLOCK: usize = 1 << 16;

/// Estimated true treatment effect on the mediator-free year-2 score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleValue {
    pub theta: f64,
    /// Classical standard error of `theta` from the oracle regression.
    pub se: f64,
    pub n: usize,
}

/// Sufficient statistics of the regression `y ~ 1 + z + x`.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: f64,
    z: f64,
    x: f64,
    y: f64,
    zz: f64,
    zx: f64,
    xx: f64,
    zy: f64,
    xy: f64,
    yy: f64,
}

impl Moments {
    fn push(&mut self, z: f64, x: f64, y: f64) {
        self.n += 1.0;
        self.z += z;
        self.x += x;
        self.y += y;
        self.zz += z * z;
        self.zx += z * x;
        self.xx += x * x;
        self.zy += z * y;
        self.xy += x * y;
        self.yy += y * y;
    }

    fn merge(mut self, o: &Moments) -> Moments {
        self.n += o.n;
        self.z += o.z;
        self.x += o.x;
        self.y += o.y;
        self.zz += o.zz;
        self.zx += o.zx;
        self.xx += o.xx;
        self.zy += o.zy;
        self.xy += o.xy;
        self.yy += o.yy;
        self
    }

    /// Slope on `z` and its standard error, via centred cross-products.
    fn solve(&self) -> Result<(f64, f64)> {
        let n = self.n;
        let szz = self.zz - self.z * self.z / n;
        let szx = self.zx - self.z * self.x / n;
        let sxx = self.xx - self.x * self.x / n;
        let szy = self.zy - self.z * self.y / n;
        let sxy = self.xy - self.x * self.y / n;
        let syy = self.yy - self.y * self.y / n;
        let det = szz * sxx - szx * szx;
        if !(det > 0.0) {
            return Err(Error::Domain("oracle design is singular".into()));
        }
        let bz = (sxx * szy - szx * sxy) / det;
        let bx = (szz * sxy - szx * szy) / det;
        let rss = (syy - bz * szy - bx * sxy).max(0.0);
        let sigma2 = rss / (n - 3.0);
        Ok((bz, (sigma2 * sxx / det).sqrt()))
    }
}

fn block_ranges(n: usize) -> Vec<(usize, usize)> {
    (0..n.div_ceil(BLOCK))
        .map(|b| (b * BLOCK, ((b + 1) * BLOCK).min(n)))
        .collect()
}

/// True value of the effect of treatment on the year-2 underlying score,
/// adjusted for baseline, from one very large simulated trial.
///
/// Patient `i` uses `key.child(i)`, the same stream as in [`super::simulate_trial`],
/// so the oracle population extends any trial simulated under the same key.
/// Blocks are reduced in index order, making the result independent of the
/// thread count.
pub fn true_value_oracle(params: &ScenarioParams, n_oracle: usize, key: &StreamKey) -> Result<OracleValue> {
    if n_oracle < 10_000 {
        return Err(Error::Domain(format!("oracle needs at least 10^4 patients, got {n_oracle}")));
    }
    params.validate()?;
    let blocks: Vec<Moments> = block_ranges(n_oracle)
        .into_par_iter()
        .map(|(lo, hi)| {
            let mut m = Moments::default();
            let mut path = Vec::with_capacity(params.fine_grid.len());
            for i in lo..hi {
                let mut s = derive_stream(&key.child(i as u64));
                let (treat, _) = draw_underlying(params, &mut s, &mut path)?;
                let y0 = params.observe(path[0].1);
                let y2 = params.observe(path[path.len() - 1].1);
                m.push(if treat { 1.0 } else { 0.0 }, y0, y2);
            }
            Ok(m)
        })
        .collect::<Result<_>>()?;
    let total = blocks.iter().fold(Moments::default(), |a, b| a.merge(b));
    let (theta, se) = total.solve()?;
    Ok(OracleValue { theta, se, n: n_oracle })
}

/// Standard deviation of the observed-scale year-2 underlying score in the
/// placebo arm over `n` patients.
pub fn placebo_y2_star_sd(params: &ScenarioParams, n: usize, key: &StreamKey) -> Result<f64> {
    let placebo = ScenarioParams {
        p_treat: 0.0,
        ..params.clone()
    };
    placebo.validate()?;
    let ys: Vec<f64> = block_ranges(n)
        .into_par_iter()
        .map(|(lo, hi)| {
            let mut path = Vec::with_capacity(placebo.fine_grid.len());
            (lo..hi)
                .map(|i| {
                    let mut s = derive_stream(&key.child(i as u64));
                    draw_underlying(&placebo, &mut s, &mut path)?;
                    Ok(placebo.observe(path[path.len() - 1].1))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?
        .concat();
    Ok(sample_sd(&ys))
}

fn sample_sd(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Variance of the noise-free placebo year-2 score over (baseline, decline) draws.
fn deterministic_variance(params: &ScenarioParams, n: usize, key: &StreamKey) -> Result<f64> {
    let spec = params.baseline_spec();
    let mut s = derive_stream(key);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let (y0, alpha) = sample_truncated_bivariate_normal(&spec, &mut s)?;
        let mut y = y0;
        for w in params.fine_grid.windows(2) {
            y = params.scale_max * progress_mean(y, alpha, false, params, w[1] - w[0]);
        }
        ys.push(y);
    }
    Ok(sample_sd(&ys).powi(2))
}

/// Template with decline-rate variance `var_alpha`, keeping the
/// baseline–decline correlation of `params`.
fn with_decline_variance(params: &ScenarioParams, var_alpha: f64) -> ScenarioParams {
    let c = params.baseline_cov;
    let rho = c[0][1] / (c[0][0] * c[1][1]).sqrt();
    let cov01 = rho * (c[0][0] * var_alpha).sqrt();
    ScenarioParams {
        baseline_cov: [[c[0][0], cov01], [cov01, var_alpha]],
        ..params.clone()
    }
}

/// Share of the year-2 placebo variance attributable to decline heterogeneity.
///
/// Splits `Var(Y₂*)` into a baseline part (noise-free paths with a constant
/// decline rate), a decline part (the increase when the decline rate varies)
/// and a beta-noise part (the rest). Returns `(baseline, decline, noise)`.
pub fn decline_induced_variance(
    params: &ScenarioParams,
    n: usize,
    key: &StreamKey,
) -> Result<(f64, f64, f64)> {
    let v_base = deterministic_variance(&with_decline_variance(params, 0.0), n, &key.child(0))?;
    let v_det = deterministic_variance(params, n, &key.child(0))?;
    let v_tot = placebo_y2_star_sd(params, n, &key.child(1))?.powi(2);
    Ok((v_base, v_det - v_base, v_tot - v_det))
}

/// Result of a calibration run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub decline_var: f64,
    pub tau: f64,
    pub achieved_sd: f64,
}

const CALIBRATION_N: usize = 100_000;
const TAU_RANGE: (f64, f64) = (1.0, 1e7);

/// Bisects `tau` on the log scale until the placebo SD of Y₂* is within 1% of
/// `target_sd`, keeping every other parameter of `params`.
pub fn calibrate_tau(params: &ScenarioParams, target_sd: f64, key: &StreamKey) -> Result<Calibration> {
    let sd_at = |tau: f64| {
        placebo_y2_star_sd(&ScenarioParams { tau, ..params.clone() }, CALIBRATION_N, key)
    };
    let (mut lo, mut hi) = (TAU_RANGE.0.ln(), TAU_RANGE.1.ln());
    let (sd_lo, sd_hi) = (sd_at(lo.exp())?, sd_at(hi.exp())?);
    if !(sd_hi <= target_sd && target_sd <= sd_lo) {
        return Err(Error::Calibration {
            target: target_sd,
            lo: sd_hi,
            hi: sd_lo,
        });
    }
    let mut best = (hi.exp(), sd_hi);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let sd = sd_at(mid.exp())?;
        best = (mid.exp(), sd);
        if (sd - target_sd).abs() < 1e-3 * target_sd {
            break;
        }
        if sd > target_sd {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if (best.1 - target_sd).abs() > 0.01 * target_sd {
        return Err(Error::Calibration {
            target: target_sd,
            lo: sd_hi,
            hi: sd_lo,
        });
    }
    Ok(Calibration {
        decline_var: params.baseline_cov[1][1],
        tau: best.0,
        achieved_sd: best.1,
    })
}

/// Finds the decline-rate variance and `tau` such that the placebo SD of Y₂*
/// is `target_sd` and decline heterogeneity accounts for `decline_share` of
/// the variance not explained by baseline severity.
pub fn calibrate(
    target_sd: f64,
    decline_share: f64,
    template: &ScenarioParams,
    key: &StreamKey,
) -> Result<Calibration> {
    if !(decline_share > 0.0 && decline_share < 1.0) {
        return Err(Error::Domain(format!("decline share {decline_share} outside (0, 1)")));
    }
    let v_base = deterministic_variance(&with_decline_variance(template, 0.0), CALIBRATION_N, key)?;
    let free = target_sd * target_sd - v_base;
    if !(free > 0.0) {
        return Err(Error::Calibration {
            target: target_sd,
            lo: v_base.sqrt(),
            hi: f64::INFINITY,
        });
    }
    let want = decline_share * free;
    let dec = |v: f64| -> Result<f64> {
        Ok(deterministic_variance(&with_decline_variance(template, v), CALIBRATION_N, key)? - v_base)
    };
    let (mut lo, mut hi) = (0.0f64, 0.05f64);
    while dec(hi)? < want {
        hi *= 2.0;
        if hi > 100.0 {
            return Err(Error::Calibration {
                target: target_sd,
                lo: 0.0,
                hi: dec(100.0)?.sqrt(),
            });
        }
    }
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if dec(mid)? < want {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let shaped = with_decline_variance(template, 0.5 * (lo + hi));
    calibrate_tau(&shaped, target_sd, key)
}

/// Decline share implied by `params` under the split of [`decline_induced_variance`].
pub fn implied_decline_share(params: &ScenarioParams, key: &StreamKey) -> Result<f64> {
    let (_, dec, noise) = decline_induced_variance(params, CALIBRATION_N, key)?;
    Ok(dec / (dec + noise))
}

/// Parameters with the calibrated decline variance and `tau` applied.
pub fn apply_calibration(params: &ScenarioParams, cal: &Calibration) -> ScenarioParams {
    ScenarioParams {
        tau: cal.tau,
        ..with_decline_variance(params, cal.decline_var)
    }
}
