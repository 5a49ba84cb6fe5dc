//! Mixed model for repeated measures on data with post-initiation values
//! removed: saturated arm × visit means, one unstructured 4 × 4 covariance,
//! REML estimation.
//!
//! The likelihood is evaluated from sufficient statistics grouped by arm and
//! observation pattern, so its cost does not grow with the number of patients.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};

use crate::dgm::TrialData;
use crate::error::{Error, Result};
use crate::gest::{EstimateResult, Method, Trace};

const T: usize = 4;
const NPAR: usize = T * (T + 1) / 2;

/// Which visits are removed for a patient who initiated symptomatic treatment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaskRule {
    /// The initiation visit and every later visit.
    AtInitiation,
    /// Only visits strictly after the initiation visit.
    #[default]
    AfterInitiation,
}

/// One (patient, visit) observation; `y` is `None` when removed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LongRecord {
    pub patient: usize,
    /// 0 placebo, 1 active.
    pub arm: usize,
    /// Visit index 0..4 (0.5, 1, 1.5, 2 years).
    pub visit: usize,
    pub y: Option<f64>,
}

/// Long-format view of `trial` with post-initiation values removed.
pub fn set_post_ie_missing(trial: &TrialData, rule: MaskRule) -> Vec<LongRecord> {
    let mut out = Vec::with_capacity(trial.len() * T);
    for (i, p) in trial.patients.iter().enumerate() {
        // Initiation opportunity k coincides with visit k.
        let first_masked = p.sym.iter().position(|&s| s != 0.0).map(|k| match rule {
            MaskRule::AtInitiation => k,
            MaskRule::AfterInitiation => k + 1,
        });
        for v in 0..T {
            let masked = first_masked.is_some_and(|m| v >= m);
            out.push(LongRecord {
                patient: i,
                arm: usize::from(p.treat != 0.0),
                visit: v,
                y: if masked { None } else { Some(p.y[v]) },
            });
        }
    }
    out
}

/// Fitted MMRM.
#[derive(Debug, Clone, PartialEq)]
pub struct MmrmFit {
    /// Cell means, `[arm][visit]`.
    pub cell_means: [[f64; 4]; 2],
    /// Covariance of each arm's cell-mean estimates.
    pub mean_cov: [Matrix4<f64>; 2],
    pub sigma: Matrix4<f64>,
    pub converged: bool,
    pub reml_loglik: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
}

impl MmrmFit {
    /// Fixed effects in reference coding: placebo mean at each visit, then
    /// the active-minus-placebo difference at each visit.
    pub fn fixed_effects(&self) -> [f64; 8] {
        let mut b = [0.0; 8];
        for v in 0..T {
            b[v] = self.cell_means[0][v];
            b[T + v] = self.cell_means[1][v] - self.cell_means[0][v];
        }
        b
    }
}

/// Sufficient statistics of the patients sharing an arm and an observation pattern.
#[derive(Debug, Clone)]
struct Group {
    arm: usize,
    obs: Vec<usize>,
    count: f64,
    sum: DVector<f64>,
    sscp: DMatrix<f64>,
}

/// Observed-data sufficient statistics.
#[derive(Debug, Clone)]
pub struct MmrmData {
    groups: Vec<Group>,
    /// Per-visit mean of the observed values, removed before fitting so the
    /// optimizer path does not depend on the level of the scores.
    center: [f64; T],
}

impl MmrmData {
    pub fn from_long(records: &[LongRecord]) -> Result<Self> {
        let mut by_patient: BTreeMap<usize, (usize, [Option<f64>; T])> = BTreeMap::new();
        for r in records {
            if r.visit >= T || r.arm > 1 {
                return Err(Error::Domain(format!(
                    "record for patient {} has arm {} visit {}",
                    r.patient, r.arm, r.visit
                )));
            }
            let e = by_patient.entry(r.patient).or_insert((r.arm, [None; T]));
            if e.0 != r.arm {
                return Err(Error::Domain(format!("patient {} appears in both arms", r.patient)));
            }
            if e.1[r.visit].is_some() {
                return Err(Error::Domain(format!(
                    "patient {} has two values at visit {}",
                    r.patient, r.visit
                )));
            }
            e.1[r.visit] = r.y;
        }
        let mut center = [0.0; T];
        for v in 0..T {
            let vals: Vec<f64> = by_patient.values().filter_map(|(_, ys)| ys[v]).collect();
            if !vals.is_empty() {
                center[v] = vals.iter().sum::<f64>() / vals.len() as f64;
            }
        }
        let mut groups: BTreeMap<(usize, u8), Group> = BTreeMap::new();
        for (arm, ys) in by_patient.values() {
            let obs: Vec<usize> = (0..T).filter(|&v| ys[v].is_some()).collect();
            if obs.is_empty() {
                continue;
            }
            let bits = obs.iter().fold(0u8, |b, &v| b | (1 << v));
            let m = obs.len();
            let g = groups.entry((*arm, bits)).or_insert_with(|| Group {
                arm: *arm,
                obs: obs.clone(),
                count: 0.0,
                sum: DVector::zeros(m),
                sscp: DMatrix::zeros(m, m),
            });
            let y = DVector::from_iterator(m, obs.iter().map(|&v| ys[v].unwrap() - center[v]));
            g.count += 1.0;
            g.sum += &y;
            g.sscp += &y * y.transpose();
        }
        let data = Self {
            groups: groups.into_values().collect(),
            center,
        };
        for arm in 0..2 {
            for v in 0..T {
                let n: f64 = data
                    .groups
                    .iter()
                    .filter(|g| g.arm == arm && g.obs.contains(&v))
                    .map(|g| g.count)
                    .sum();
                if n == 0.0 {
                    return Err(Error::Estimability(format!(
                        "no observed value for arm {arm} at visit {v}"
                    )));
                }
            }
        }
        Ok(data)
    }

    fn n_obs(&self) -> f64 {
        self.groups.iter().map(|g| g.count * g.obs.len() as f64).sum()
    }
}

fn sub(m: &Matrix4<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |i, j| m[(idx[i], idx[j])])
}

fn sigma_from(theta: &[f64]) -> (Matrix4<f64>, Matrix4<f64>) {
    let mut l = Matrix4::zeros();
    let mut k = 0;
    for i in 0..T {
        for j in 0..=i {
            l[(i, j)] = if i == j { theta[k].exp() } else { theta[k] };
            k += 1;
        }
    }
    (l * l.transpose(), l)
}

fn theta_from(sigma: &Matrix4<f64>) -> Option<Vec<f64>> {
    let l = sigma.cholesky()?.l();
    let mut th = Vec::with_capacity(NPAR);
    for i in 0..T {
        for j in 0..=i {
            th.push(if i == j { l[(i, j)].ln() } else { l[(i, j)] });
        }
    }
    Some(th)
}

/// REML pieces at a given covariance.
struct Eval {
    loglik: f64,
    means: [Vector4<f64>; 2],
    ainv: [Matrix4<f64>; 2],
    /// d loglik / d Sigma, symmetric.
    grad_sigma: Matrix4<f64>,
}

fn evaluate(data: &MmrmData, sigma: &Matrix4<f64>, want_grad: bool) -> Option<Eval> {
    // Per group: W = Sigma_O^{-1}.
    let mut ws = Vec::with_capacity(data.groups.len());
    let mut logdet = 0.0;
    let mut a = [Matrix4::<f64>::zeros(); 2];
    let mut rhs = [Vector4::<f64>::zeros(); 2];
    for g in &data.groups {
        let ch = sub(sigma, &g.obs).cholesky()?;
        let ld: f64 = ch.l().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
        logdet += g.count * ld;
        let w = ch.inverse();
        let ws_ = &w * &g.sum;
        for (i, &vi) in g.obs.iter().enumerate() {
            rhs[g.arm][vi] += ws_[i];
            for (j, &vj) in g.obs.iter().enumerate() {
                a[g.arm][(vi, vj)] += g.count * w[(i, j)];
            }
        }
        ws.push(w);
    }
    let mut means = [Vector4::zeros(); 2];
    let mut ainv = [Matrix4::zeros(); 2];
    let mut log_a = 0.0;
    for arm in 0..2 {
        let ch = a[arm].cholesky()?;
        log_a += ch.l().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
        means[arm] = ch.solve(&rhs[arm]);
        ainv[arm] = ch.inverse();
    }
    let mut quad = 0.0;
    let mut grad = Matrix4::zeros();
    for (g, w) in data.groups.iter().zip(&ws) {
        let mu = DVector::from_iterator(g.obs.len(), g.obs.iter().map(|&v| means[g.arm][v]));
        // Sum over the group of (y - mu)(y - mu)'.
        let rr = &g.sscp - &g.sum * mu.transpose() - &mu * g.sum.transpose()
            + &mu * mu.transpose() * g.count;
        quad += (w * &rr).trace();
        if want_grad {
            let ai = sub(&ainv[g.arm], &g.obs);
            let inner = w * (&rr + &ai * g.count) * w - w * g.count;
            for (i, &vi) in g.obs.iter().enumerate() {
                for (j, &vj) in g.obs.iter().enumerate() {
                    grad[(vi, vj)] += 0.5 * inner[(i, j)];
                }
            }
        }
    }
    let p = 2.0 * T as f64;
    let n = data.n_obs();
    let loglik = -0.5 * (logdet + quad + log_a + (n - p) * (2.0 * std::f64::consts::PI).ln());
    Some(Eval {
        loglik,
        means,
        ainv,
        grad_sigma: grad,
    })
}

/// REML log-likelihood at covariance `sigma` (mean parameters profiled out by GLS).
pub fn reml_loglik(data: &MmrmData, sigma: &Matrix4<f64>) -> Option<f64> {
    evaluate(data, sigma, false).map(|e| e.loglik)
}

fn objective(data: &MmrmData, theta: &[f64]) -> Option<(f64, Vec<f64>)> {
    let (sigma, l) = sigma_from(theta);
    let e = evaluate(data, &sigma, true)?;
    // d/dL of f(L L') is 2 G L for symmetric G.
    let gl = e.grad_sigma * l * 2.0;
    let mut g = Vec::with_capacity(NPAR);
    for i in 0..T {
        for j in 0..=i {
            g.push(if i == j { gl[(i, j)] * l[(i, j)] } else { gl[(i, j)] });
        }
    }
    Some((e.loglik, g))
}

/// Convergence: relative REML change below this.
pub const MMRM_REL_TOL: f64 = 1e-9;
/// Convergence also requires the gradient (w.r.t. the Cholesky parameters)
/// to be this small.
pub const MMRM_GRAD_TOL: f64 = 1e-6;
pub const MMRM_MAX_ITER: usize = 200;

fn start_sigma(data: &MmrmData) -> Matrix4<f64> {
    // Available-case moments around per-arm visit means.
    let mut s = [[0.0; T]; 2];
    let mut c = [[0.0; T]; 2];
    for g in &data.groups {
        for (i, &v) in g.obs.iter().enumerate() {
            s[g.arm][v] += g.sum[i];
            c[g.arm][v] += g.count;
        }
    }
    let mut num = Matrix4::<f64>::zeros();
    let mut den = Matrix4::<f64>::zeros();
    for g in &data.groups {
        let mu: Vec<f64> = g.obs.iter().map(|&v| s[g.arm][v] / c[g.arm][v]).collect();
        for (i, &vi) in g.obs.iter().enumerate() {
            for (j, &vj) in g.obs.iter().enumerate() {
                num[(vi, vj)] += g.sscp[(i, j)] - g.sum[i] * mu[j] - mu[i] * g.sum[j]
                    + g.count * mu[i] * mu[j];
                den[(vi, vj)] += g.count;
            }
        }
    }
    let mut sigma = Matrix4::zeros();
    for i in 0..T {
        for j in 0..T {
            sigma[(i, j)] = if den[(i, j)] > 2.0 { num[(i, j)] / (den[(i, j)] - 2.0) } else { 0.0 };
        }
        if !(sigma[(i, i)] > 0.0) {
            sigma[(i, i)] = 1.0;
        }
    }
    if sigma.cholesky().is_some() {
        sigma
    } else {
        Matrix4::from_diagonal(&sigma.diagonal())
    }
}

/// REML fit by BFGS over the log-Cholesky parameters of the covariance.
pub fn fit_mmrm(records: &[LongRecord]) -> Result<MmrmFit> {
    fit_mmrm_data(&MmrmData::from_long(records)?)
}

pub fn fit_mmrm_data(data: &MmrmData) -> Result<MmrmFit> {
    let mut theta = theta_from(&start_sigma(data))
        .ok_or_else(|| Error::Estimability("starting covariance is not positive definite".into()))?;
    let fail = || Error::Estimability("covariance left the positive-definite cone".into());
    let (mut f, mut g) = objective(data, &theta).ok_or_else(fail)?;
    let mut h = DMatrix::<f64>::identity(NPAR, NPAR) * (1.0 / (f.abs().max(1.0)));
    let mut iterations = 0;
    let mut converged = false;
    let gnorm = |g: &[f64]| g.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    while iterations < MMRM_MAX_ITER {
        if gnorm(&g) < MMRM_GRAD_TOL {
            converged = true;
            break;
        }
        iterations += 1;
        // Ascent direction for the log-likelihood.
        let gv = DVector::from_column_slice(&g);
        let mut dir = &h * &gv;
        if dir.dot(&gv) <= 0.0 {
            h = DMatrix::identity(NPAR, NPAR) * (1.0 / f.abs().max(1.0));
            dir = &h * &gv;
        }
        let mut t = 1.0;
        let mut next = None;
        for _ in 0..60 {
            let cand: Vec<f64> = theta.iter().zip(dir.iter()).map(|(a, d)| a + t * d).collect();
            if let Some((fc, gc)) = objective(data, &cand) {
                if fc >= f + 1e-4 * t * dir.dot(&gv) {
                    next = Some((cand, fc, gc));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((cand, fc, gc)) = next else {
            // No ascent possible along the quasi-Newton direction.
            converged = gnorm(&g) < MMRM_GRAD_TOL * 1e3;
            break;
        };
        let s = DVector::from_iterator(NPAR, cand.iter().zip(&theta).map(|(a, b)| a - b));
        let yv = DVector::from_iterator(NPAR, g.iter().zip(&gc).map(|(a, b)| a - b));
        let sy = s.dot(&yv);
        if sy > 1e-14 {
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(NPAR, NPAR);
            let left = &i - &s * yv.transpose() * rho;
            let right = &i - &yv * s.transpose() * rho;
            h = left * &h * right + &s * s.transpose() * rho;
        }
        let rel = (fc - f).abs() / (f.abs() + 1e-10);
        theta = cand;
        f = fc;
        g = gc;
        if rel < MMRM_REL_TOL && gnorm(&g) < MMRM_GRAD_TOL {
            converged = true;
            break;
        }
    }

    let (sigma, _) = sigma_from(&theta);
    let e = evaluate(data, &sigma, false).ok_or_else(fail)?;
    let mut cell_means = [[0.0; 4]; 2];
    for arm in 0..2 {
        for v in 0..T {
            cell_means[arm][v] = e.means[arm][v] + data.center[v];
        }
    }
    Ok(MmrmFit {
        cell_means,
        mean_cov: e.ainv,
        sigma,
        converged,
        reml_loglik: e.loglik,
        iterations,
        gradient_norm: gnorm(&g),
    })
}

/// Active-minus-placebo difference at the year-2 visit and its GLS standard error.
pub fn mmrm_contrast_t2(fit: &MmrmFit) -> (f64, f64) {
    let v = T - 1;
    let theta = fit.cell_means[1][v] - fit.cell_means[0][v];
    let se = (fit.mean_cov[0][(v, v)] + fit.mean_cov[1][(v, v)]).sqrt();
    (theta, se)
}

/// MMRM reference analysis of one trial.
pub fn estimate_mmrm(trial: &TrialData, rule: MaskRule) -> Result<EstimateResult> {
    let fit = fit_mmrm(&set_post_ie_missing(trial, rule))?;
    let (theta, se) = mmrm_contrast_t2(&fit);
    Ok(EstimateResult {
        method: Method::Mmrm,
        theta_hat: theta,
        model_se: se,
        trace: Trace::Mmrm {
            iterations: fit.iterations,
            converged: fit.converged,
            reml_loglik: fit.reml_loglik,
        },
    })
}
