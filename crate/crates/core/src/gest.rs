//! De-mediation estimators of the controlled direct effect of treatment on
//! the year-2 score with symptomatic treatment held at "never started".
//!
//! All g-estimators of one trial share an [`Analysis`]: the propensity
//! models and the factorised outcome designs are built once and reused by
//! every method (and by every sweep of the iterative method).

use std::cell::OnceCell;
use std::fmt;
use std::str::FromStr;

use crate::dgm::TrialData;
use crate::error::{Error, Result};
use crate::regress::{predict_probit, probit_fit, Design, QrFactor};

/// Estimation methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Established,
    Mod1,
    Mod2,
    Mod3,
    Mmrm,
    /// OLS of the counterfactual `Y2*` on treatment and baseline. Needs the
    /// oracle-only channel, so it is a simulation benchmark, not an estimator.
    Benchmark,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Mmrm,
        Method::Established,
        Method::Mod1,
        Method::Mod2,
        Method::Mod3,
    ];
    pub const GEST: [Method; 4] = [Method::Established, Method::Mod1, Method::Mod2, Method::Mod3];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Established => "established",
            Method::Mod1 => "mod1",
            Method::Mod2 => "mod2",
            Method::Mod3 => "mod3",
            Method::Mmrm => "mmrm",
            Method::Benchmark => "benchmark_y2star",
        }
    }

    pub fn is_gest(self) -> bool {
        !matches!(self, Method::Mmrm | Method::Benchmark)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "established" => Ok(Method::Established),
            "mod1" => Ok(Method::Mod1),
            "mod2" => Ok(Method::Mod2),
            "mod3" => Ok(Method::Mod3),
            "mmrm" => Ok(Method::Mmrm),
            "benchmark" | "benchmark_y2star" => Ok(Method::Benchmark),
            other => Err(Error::Config(format!("unknown method `{other}`"))),
        }
    }
}

/// Weights used when averaging symptomatic-effect coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Weighting {
    /// Weights `1/SE`.
    #[default]
    InverseSe,
    /// Weights `1/SE²`.
    InverseVariance,
}

/// Tuning of the g-estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct GestOptions {
    pub weighting: Weighting,
    pub mod3_tol: f64,
    pub mod3_max_iter: usize,
    /// Restrict the last proximal fit of Mod 1 to patients who had not
    /// initiated before year 1.5.
    pub mod1_restrict_last: bool,
    /// Masking rule handed to the MMRM analysis.
    pub mmrm_mask: crate::mmrm::MaskRule,
}

impl Default for GestOptions {
    fn default() -> Self {
        Self {
            weighting: Weighting::InverseSe,
            mod3_tol: 1e-4,
            mod3_max_iter: 25,
            mod1_restrict_last: false,
            mmrm_mask: crate::mmrm::MaskRule::default(),
        }
    }
}

/// Per-timepoint symptomatic-effect coefficients behind an estimate.
///
/// Index 0, 1, 2 correspond to initiation at 0.5, 1 and 1.5 years. A
/// timepoint whose effect could not be estimated has coefficient 0 and an
/// infinite standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct DemediationTrace {
    pub coef_sym: [f64; 3],
    pub se_sym: [f64; 3],
    pub beta_sym: Option<f64>,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    pub last_change: Option<f64>,
}

impl DemediationTrace {
    fn fitted(coef_sym: [f64; 3], se_sym: [f64; 3]) -> Self {
        Self {
            coef_sym,
            se_sym,
            beta_sym: None,
            iterations: None,
            converged: None,
            last_change: None,
        }
    }
}

/// Diagnostics attached to an estimate.
#[derive(Debug, Clone, PartialEq)]
pub enum Trace {
    Demediation(DemediationTrace),
    Mmrm {
        iterations: usize,
        converged: bool,
        reml_loglik: f64,
    },
}

impl Trace {
    pub fn iterations(&self) -> Option<usize> {
        match self {
            Trace::Demediation(t) => t.iterations,
            Trace::Mmrm { iterations, .. } => Some(*iterations),
        }
    }

    pub fn converged(&self) -> Option<bool> {
        match self {
            Trace::Demediation(t) => t.converged,
            Trace::Mmrm { converged, .. } => Some(*converged),
        }
    }
}

/// One estimator's result on one trial. `theta_hat` is active minus placebo.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateResult {
    pub method: Method,
    pub theta_hat: f64,
    pub model_se: f64,
    pub trace: Trace,
}

/// Weighted mean of `coefs` with weights `1/ses`.
///
/// Infinite standard errors get weight 0; if every weight is 0 the result is 0.
pub fn weighted_average(coefs: &[f64], ses: &[f64]) -> Result<f64> {
    weighted_average_with(coefs, ses, Weighting::InverseSe)
}

/// Weighted mean of `coefs` under the given weighting.
pub fn weighted_average_with(coefs: &[f64], ses: &[f64], weighting: Weighting) -> Result<f64> {
    if coefs.is_empty() || coefs.len() != ses.len() {
        return Err(Error::Domain(format!(
            "weighted average needs equal non-empty lengths, got {} and {}",
            coefs.len(),
            ses.len()
        )));
    }
    if ses.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::Domain("standard errors must be positive".into()));
    }
    Ok(wavg(coefs, ses, weighting))
}

fn wavg(coefs: &[f64], ses: &[f64], weighting: Weighting) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (&c, &s) in coefs.iter().zip(ses) {
        if !s.is_finite() {
            continue;
        }
        let w = match weighting {
            Weighting::InverseSe => 1.0 / s,
            Weighting::InverseVariance => 1.0 / (s * s),
        };
        num += c * w;
        den += w;
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Outcome model whose coefficient on one initiation indicator is wanted.
#[derive(Debug)]
struct SymModel {
    /// `None` when the indicator is absent or aliased.
    qr: Option<(QrFactor, usize)>,
    rows: Option<Vec<usize>>,
}

const TARGET_COL: usize = 3;

impl SymModel {
    /// Columns: intercept, Z, lagged score, target indicator, nuisance columns.
    /// All-zero nuisance columns are dropped up front; a nuisance column that
    /// is aliased with earlier ones is dropped and the design refactorised.
    fn build(
        z: &[f64],
        lag: (&str, &[f64]),
        target: (&str, &[f64]),
        nuisance: &[(&str, &[f64])],
        rows: Option<Vec<usize>>,
    ) -> Result<SymModel> {
        let take = |v: &[f64]| -> Vec<f64> {
            match &rows {
                Some(r) => r.iter().map(|&i| v[i]).collect(),
                None => v.to_vec(),
            }
        };
        let zz = take(z);
        let mut d = Design::with_intercept(zz.len())
            .column("treat", zz)
            .column(lag.0, take(lag.1));
        let tgt = take(target.1);
        if tgt.iter().all(|&v| v == 0.0) {
            return Ok(SymModel { qr: None, rows });
        }
        d.push_column(target.0, tgt);
        for &(name, v) in nuisance {
            let v = take(v);
            if v.iter().any(|&x| x != 0.0) {
                d.push_column(name, v);
            }
        }
        loop {
            match QrFactor::new(&d) {
                Ok(qr) => {
                    return Ok(SymModel {
                        qr: Some((qr, TARGET_COL)),
                        rows,
                    })
                }
                Err(Error::Singular { index, .. }) if index > TARGET_COL => d.remove_column(index),
                Err(Error::Singular { index, .. }) if index == TARGET_COL => {
                    return Ok(SymModel { qr: None, rows })
                }
                Err(e) => return Err(e),
            }
        }
    }

    /// Coefficient and SE of the target indicator for response `r`.
    fn fit(&self, r: &[f64]) -> (f64, f64) {
        let Some((qr, j)) = &self.qr else {
            return (0.0, f64::INFINITY);
        };
        let fit = match &self.rows {
            Some(rows) => {
                let rr: Vec<f64> = rows.iter().map(|&i| r[i]).collect();
                qr.fit(&rr)
            }
            None => qr.fit(r),
        };
        let se = fit.ses[*j];
        if se > 0.0 && se.is_finite() {
            (fit.coefs[*j], se)
        } else {
            (0.0, f64::INFINITY)
        }
    }
}

/// Covariate of a propensity model.
struct PropCov<'a> {
    name: &'a str,
    values: &'a [f64],
    /// Earlier-initiation indicator: patients with a 1 cannot initiate again.
    indicator: bool,
}

/// Fitted initiation probabilities from a probit model of `y` on `covs`.
///
/// Returns `None` when nobody initiates. Patients flagged by an indicator
/// covariate whose flagged patients never initiate get probability 0, the
/// limit of the maximum-likelihood fit; the probit is fitted on the rest.
fn propensity(y: &[f64], covs: &[PropCov<'_>]) -> Result<Option<Vec<f64>>> {
    let n = y.len();
    if y.iter().all(|&v| v == 0.0) {
        return Ok(None);
    }
    let mut at_risk = vec![true; n];
    for c in covs.iter().filter(|c| c.indicator) {
        let flagged = c.values.iter().any(|&v| v != 0.0);
        let never = c
            .values
            .iter()
            .zip(y)
            .all(|(&v, &yi)| v == 0.0 || yi == 0.0);
        if flagged && never {
            for (a, &v) in at_risk.iter_mut().zip(c.values) {
                if v != 0.0 {
                    *a = false;
                }
            }
        }
    }
    let idx: Vec<usize> = (0..n).filter(|&i| at_risk[i]).collect();
    let ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let mut p = vec![0.0; n];
    if ys.iter().all(|&v| v == 1.0) {
        for &i in &idx {
            p[i] = 1.0;
        }
        return Ok(Some(p));
    }
    let mut d = Design::with_intercept(idx.len());
    for c in covs {
        let v: Vec<f64> = idx.iter().map(|&i| c.values[i]).collect();
        if v.iter().any(|&x| x != v[0]) {
            d.push_column(c.name, v);
        }
    }
    let fit = probit_fit(&d, &ys)?;
    for (&i, pi) in idx.iter().zip(predict_probit(&fit, &d)?) {
        p[i] = pi;
    }
    Ok(Some(p))
}

/// Result of one backward de-mediation pass.
struct Pass {
    coefs: [f64; 3],
    ses: [f64; 3],
    theta: f64,
    se: f64,
}

/// Shared per-trial state for the g-estimators.
pub struct Analysis<'a> {
    trial: &'a TrialData,
    opts: GestOptions,
    z: Vec<f64>,
    y: [Vec<f64>; 4],
    s: [Vec<f64>; 3],
    final_qr: QrFactor,
    sequential: OnceCell<[SymModel; 3]>,
    proximal: OnceCell<[SymModel; 3]>,
    established: OnceCell<Pass>,
}

impl<'a> Analysis<'a> {
    pub fn new(trial: &'a TrialData, opts: &GestOptions) -> Result<Self> {
        trial.validate()?;
        let z = trial.treat();
        let final_design = Design::with_intercept(trial.len())
            .column("treat", z.clone())
            .column("y0", trial.y0());
        Ok(Self {
            trial,
            opts: opts.clone(),
            y: [trial.y(0), trial.y(1), trial.y(2), trial.y(3)],
            s: [trial.sym(0), trial.sym(1), trial.sym(2)],
            z,
            final_qr: QrFactor::new(&final_design)?,
            sequential: OnceCell::new(),
            proximal: OnceCell::new(),
            established: OnceCell::new(),
        })
    }

    pub fn trial(&self) -> &TrialData {
        self.trial
    }

    fn ind<'b>(&'b self, name: &'b str, k: usize) -> PropCov<'b> {
        PropCov {
            name,
            values: &self.s[k],
            indicator: true,
        }
    }

    fn score<'b>(&'b self, name: &'b str, v: usize) -> PropCov<'b> {
        PropCov {
            name,
            values: &self.y[v],
            indicator: false,
        }
    }

    /// Outcome models of the sequential (backward) pass.
    fn sequential(&self) -> Result<&[SymModel; 3]> {
        if let Some(m) = self.sequential.get() {
            return Ok(m);
        }
        let [s05, s1, s15] = [&self.s[0][..], &self.s[1], &self.s[2]];
        let p05 = propensity(s05, &[self.score("y05", 0)])?;
        let p1 = propensity(s1, &[self.ind("sym05", 0), self.score("y1", 1)])?;
        let p15 = propensity(
            s15,
            &[self.ind("sym1", 1), self.ind("sym05", 0), self.score("y15", 2)],
        )?;
        let m05 = SymModel::build(&self.z, ("y05", &self.y[0]), ("sym05", s05), &nuis(&[], &p05), None)?;
        let m1 = SymModel::build(
            &self.z,
            ("y1", &self.y[1]),
            ("sym1", s1),
            &nuis(&[("sym05", s05)], &p1),
            None,
        )?;
        let m15 = SymModel::build(
            &self.z,
            ("y15", &self.y[2]),
            ("sym15", s15),
            &nuis(&[("sym1", s1), ("sym05", s05)], &p15),
            None,
        )?;
        Ok(self.sequential.get_or_init(|| [m05, m1, m15]))
    }

    /// Outcome models of the proximal-effect fits.
    fn proximal(&self) -> Result<&[SymModel; 3]> {
        if let Some(m) = self.proximal.get() {
            return Ok(m);
        }
        let [s05, s1, s15] = [&self.s[0][..], &self.s[1], &self.s[2]];
        let p05 = propensity(s05, &[self.score("y05", 0)])?;
        let p1 = propensity(s1, &[self.score("y1", 1), self.ind("sym05", 0)])?;
        let p15 = propensity(s15, &[self.score("y15", 2), self.ind("sym1", 1)])?;
        let n = self.trial.len();
        let not05: Vec<usize> = (0..n).filter(|&i| s05[i] == 0.0).collect();
        let last_rows = if self.opts.mod1_restrict_last {
            Some((0..n).filter(|&i| s05[i] == 0.0 && s1[i] == 0.0).collect())
        } else {
            None
        };
        let m05 = SymModel::build(&self.z, ("y05", &self.y[0]), ("sym05", s05), &nuis(&[], &p05), None)?;
        let m1 = SymModel::build(
            &self.z,
            ("y1", &self.y[1]),
            ("sym1", s1),
            &nuis(&[("sym05", s05)], &p1),
            Some(not05),
        )?;
        let m15 = SymModel::build(
            &self.z,
            ("y15", &self.y[2]),
            ("sym15", s15),
            &nuis(&[("sym1", s1)], &p15),
            last_rows,
        )?;
        Ok(self.proximal.get_or_init(|| [m05, m1, m15]))
    }

    /// Treatment coefficient and SE of `r ~ 1 + Z + Y0`.
    fn final_fit(&self, r: &[f64]) -> (f64, f64) {
        let f = self.final_qr.fit(r);
        (f.coefs[1], f.ses[1])
    }

    /// Backward pass from `Y2`; `choose(k, coef, se)` gives the amount
    /// subtracted per initiator at timepoint `k`.
    fn backward(&self, mut choose: impl FnMut(usize, f64, f64) -> f64) -> Result<Pass> {
        let models = self.sequential()?;
        let mut r = self.y[3].clone();
        let mut coefs = [0.0; 3];
        let mut ses = [f64::INFINITY; 3];
        for k in (0..3).rev() {
            let (c, se) = models[k].fit(&r);
            coefs[k] = c;
            ses[k] = se;
            let d = choose(k, c, se);
            if d != 0.0 {
                for (ri, &si) in r.iter_mut().zip(&self.s[k]) {
                    *ri -= d * si;
                }
            }
        }
        let (theta, se) = self.final_fit(&r);
        Ok(Pass {
            coefs,
            ses,
            theta,
            se,
        })
    }

    fn established_pass(&self) -> Result<&Pass> {
        if let Some(p) = self.established.get() {
            return Ok(p);
        }
        let pass = self.backward(|_, c, _| c)?;
        Ok(self.established.get_or_init(|| pass))
    }

    /// Treatment effect after subtracting `beta` from every initiator's `Y2`.
    fn concurrent(&self, beta: f64) -> (f64, f64) {
        if beta == 0.0 {
            return self.final_fit(&self.y[3]);
        }
        let r: Vec<f64> = self.y[3]
            .iter()
            .enumerate()
            .map(|(i, &y)| y - beta * (self.s[0][i] + self.s[1][i] + self.s[2][i]))
            .collect();
        self.final_fit(&r)
    }

    pub fn established(&self) -> Result<EstimateResult> {
        let p = self.established_pass()?;
        Ok(EstimateResult {
            method: Method::Established,
            theta_hat: p.theta,
            model_se: p.se,
            trace: Trace::Demediation(DemediationTrace::fitted(p.coefs, p.ses)),
        })
    }

    pub fn mod1(&self) -> Result<EstimateResult> {
        let models = self.proximal()?;
        let mut coefs = [0.0; 3];
        let mut ses = [f64::INFINITY; 3];
        for k in 0..3 {
            (coefs[k], ses[k]) = models[k].fit(&self.y[k + 1]);
        }
        self.averaged(Method::Mod1, coefs, ses)
    }

    pub fn mod2(&self) -> Result<EstimateResult> {
        let p = self.established_pass()?;
        self.averaged(Method::Mod2, p.coefs, p.ses)
    }

    fn averaged(&self, method: Method, coefs: [f64; 3], ses: [f64; 3]) -> Result<EstimateResult> {
        let beta = wavg(&coefs, &ses, self.opts.weighting);
        let (theta, se) = self.concurrent(beta);
        let mut trace = DemediationTrace::fitted(coefs, ses);
        trace.beta_sym = Some(beta);
        Ok(EstimateResult {
            method,
            theta_hat: theta,
            model_se: se,
            trace: Trace::Demediation(trace),
        })
    }

    pub fn mod3(&self) -> Result<EstimateResult> {
        let first = self.established_pass()?;
        let (tol, max_iter) = (self.opts.mod3_tol, self.opts.mod3_max_iter.max(1));
        let (mut coefs, mut ses, mut theta, mut se) = (first.coefs, first.ses, first.theta, first.se);
        let mut j = 1;
        let mut converged = false;
        let mut change = f64::NAN;
        while j < max_iter {
            j += 1;
            let (prev_c, prev_s) = (coefs, ses);
            let weighting = self.opts.weighting;
            let pass = self.backward(|k, c, s| {
                let mut cc = prev_c;
                let mut ss = prev_s;
                cc[k] = c;
                ss[k] = s;
                wavg(&cc, &ss, weighting)
            })?;
            change = (pass.theta - theta).abs();
            (coefs, ses, theta, se) = (pass.coefs, pass.ses, pass.theta, pass.se);
            if change < tol {
                converged = true;
                break;
            }
        }
        let mut trace = DemediationTrace::fitted(coefs, ses);
        trace.iterations = Some(j);
        trace.converged = Some(converged);
        trace.last_change = Some(change);
        Ok(EstimateResult {
            method: Method::Mod3,
            theta_hat: theta,
            model_se: se,
            trace: Trace::Demediation(trace),
        })
    }

    /// Treatment effect when the per-timepoint symptomatic effects are taken
    /// as `coefs` instead of being estimated.
    pub fn with_planted(&self, coefs: [f64; 3]) -> EstimateResult {
        let r: Vec<f64> = (0..self.trial.len())
            .map(|i| self.y[3][i] - (0..3).map(|k| coefs[k] * self.s[k][i]).sum::<f64>())
            .collect();
        let (theta, se) = self.final_fit(&r);
        EstimateResult {
            method: Method::Established,
            theta_hat: theta,
            model_se: se,
            trace: Trace::Demediation(DemediationTrace::fitted(coefs, [f64::INFINITY; 3])),
        }
    }

    /// Runs a g-estimator on the shared state.
    pub fn estimate(&self, method: Method) -> Result<EstimateResult> {
        match method {
            Method::Established => self.established(),
            Method::Mod1 => self.mod1(),
            Method::Mod2 => self.mod2(),
            Method::Mod3 => self.mod3(),
            Method::Mmrm => crate::mmrm::estimate_mmrm(self.trial, self.opts.mmrm_mask),
            Method::Benchmark => self.benchmark(),
        }
    }

    fn benchmark(&self) -> Result<EstimateResult> {
        let y = self.trial.y2_star().ok_or_else(|| {
            Error::Estimability("benchmark needs the counterfactual year-2 score".into())
        })?;
        let (theta, se) = self.final_fit(&y);
        Ok(EstimateResult {
            method: Method::Benchmark,
            theta_hat: theta,
            model_se: se,
            trace: Trace::Demediation(DemediationTrace::fitted([0.0; 3], [f64::INFINITY; 3])),
        })
    }
}

fn nuis<'b>(base: &[(&'b str, &'b [f64])], p: &'b Option<Vec<f64>>) -> Vec<(&'b str, &'b [f64])> {
    let mut v = base.to_vec();
    if let Some(p) = p {
        v.push(("p_sym", p.as_slice()));
    }
    v
}

/// Established sequential g-estimation.
pub fn estimate_established(trial: &TrialData) -> Result<EstimateResult> {
    Analysis::new(trial, &GestOptions::default())?.established()
}

/// Modification 1: average of the proximal effects at 0.5→1, 1→1.5, 1.5→2.
pub fn estimate_mod1(trial: &TrialData) -> Result<EstimateResult> {
    Analysis::new(trial, &GestOptions::default())?.mod1()
}

/// Modification 2: average of the sequential effects on the year-2 score.
pub fn estimate_mod2(trial: &TrialData) -> Result<EstimateResult> {
    Analysis::new(trial, &GestOptions::default())?.mod2()
}

/// Modification 3: iterated averaging inside the backward pass.
pub fn estimate_mod3(trial: &TrialData, tol: f64, max_iter: usize) -> Result<EstimateResult> {
    let opts = GestOptions {
        mod3_tol: tol,
        mod3_max_iter: max_iter,
        ..GestOptions::default()
    };
    Analysis::new(trial, &opts)?.mod3()
}

/// Runs `method` on `trial`.
pub fn estimate(trial: &TrialData, method: Method, opts: &GestOptions) -> Result<EstimateResult> {
    if method == Method::Mmrm {
        return crate::mmrm::estimate_mmrm(trial, opts.mmrm_mask);
    }
    Analysis::new(trial, opts)?.estimate(method)
}

/// Runs several methods on `trial`, sharing the fitted nuisance models.
pub fn estimate_many(
    trial: &TrialData,
    methods: &[Method],
    opts: &GestOptions,
) -> Vec<(Method, Result<EstimateResult>)> {
    let analysis = if methods.iter().any(|&m| m != Method::Mmrm) {
        Some(Analysis::new(trial, opts))
    } else {
        None
    };
    methods
        .iter()
        .map(|&m| {
            let r = match (&analysis, m) {
                (_, Method::Mmrm) => crate::mmrm::estimate_mmrm(trial, opts.mmrm_mask),
                (Some(Ok(a)), _) => a.estimate(m),
                (Some(Err(e)), _) => Err(Error::Estimability(e.to_string())),
                (None, _) => unreachable!(),
            };
            (m, r)
        })
        .collect()
}
