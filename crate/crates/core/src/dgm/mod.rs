//! Trial data-generating model.
//!
//! Each patient receives a randomised arm, a baseline severity and a decline
//! rate drawn jointly from a truncated bivariate normal, and an underlying
//! (symptomatic-treatment-free) score that evolves on a quarter-year grid by
//! a beta regression with a Richards link. Symptomatic treatment may be
//! initiated at the interim visits; once started, it shifts every affected
//! observed score by a per-patient effect.

mod dataset;
mod oracle;

pub use dataset::{read_dataset_csv, write_dataset_csv, DATASET_HEADER};
pub use oracle::{
    apply_calibration, calibrate, calibrate_tau, decline_induced_variance, implied_decline_share,
    placebo_y2_star_sd, true_value_oracle, Calibration, OracleValue,
};

use crate::error::{Error, Result};
use crate::stochastics::{
    derive_stream, sample_beta_mean_tau, sample_truncated_bivariate_normal,
    sample_truncated_normal, Stream, StreamKey, TruncatedBivariateNormalSpec,
};

/// Clamp applied to normalised scores before the link is evaluated.
pub const LINK_EPS: f64 = 1e-9;

/// Visits at which outcomes are analysed (years), baseline excluded.
pub const VISITS: [f64; 4] = [0.5, 1.0, 1.5, 2.0];
/// Visits at which symptomatic treatment can be initiated (years).
pub const IE_TIMES: [f64; 3] = [0.5, 1.0, 1.5];

/// Richards link `g(x) = log(x^β / (1 − x^β))`.
pub fn richards_link(x: f64, beta: f64) -> Result<f64> {
    if !(x > 0.0 && x < 1.0) {
        return Err(Error::Domain(format!("richards link argument {x} outside (0, 1)")));
    }
    Ok(richards_link_unchecked(x, beta))
}

fn richards_link_unchecked(x: f64, beta: f64) -> f64 {
    let log_xb = beta * x.ln();
    log_xb - (-log_xb.exp_m1()).ln()
}

/// Inverse Richards link `h(η) = (1 + e^{−η})^{−1/β}`.
pub fn richards_inverse(eta: f64, beta: f64) -> f64 {
    // softplus(-eta) = log(1 + e^{-eta}), evaluated without overflow.
    let softplus = (-eta).max(0.0) + (-eta.abs()).exp().ln_1p();
    (-softplus / beta).exp()
}

/// How initiation of symptomatic treatment is decided at each opportunity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IeMechanism {
    /// Bernoulli with probability `1 / (1 + exp(−slope·(Y*_t − center)))`.
    Sigmoid { center: f64, slope: f64 },
    /// Deterministic: initiate when the observed score exceeds `cutoff`.
    Threshold { cutoff: f64 },
}

/// First visit whose observed score carries the symptomatic effect.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EffectOnset {
    /// The initiation visit itself is already shifted.
    InitiationVisit,
    /// Only visits strictly after initiation are shifted.
    NextVisit,
}

/// Truncated normal law of the per-patient symptomatic effect.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymEffectLaw {
    pub mean: f64,
    pub sd: f64,
    pub lo: f64,
    pub hi: f64,
}

impl SymEffectLaw {
    /// Law truncated at `mean ± width·sd`.
    pub fn symmetric(mean: f64, sd: f64, width: f64) -> Self {
        Self {
            mean,
            sd,
            lo: mean - width * sd,
            hi: mean + width * sd,
        }
    }
}

impl Default for SymEffectLaw {
    fn default() -> Self {
        Self::symmetric(-2.6, 2.0, 2.0)
    }
}

/// Every parameter of the data-generating model and trial design.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioParams {
    pub n: usize,
    pub p_treat: f64,
    /// Multiplicative factor on the decline rate in the active arm.
    pub e_dm: f64,
    /// Mean of (baseline score, decline rate).
    pub baseline_mean: [f64; 2],
    pub baseline_cov: [[f64; 2]; 2],
    pub baseline_bounds: (f64, f64),
    pub richards_beta: f64,
    pub tau: f64,
    pub scale_max: f64,
    /// Underlying-score grid in years, starting at 0.
    pub fine_grid: Vec<f64>,
    pub ie_mechanism: IeMechanism,
    pub sym_effect: SymEffectLaw,
    pub effect_onset: EffectOnset,
    pub outcome_rounding: bool,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            n: 154,
            p_treat: 0.5,
            e_dm: 0.5,
            baseline_mean: [27.0, 0.23],
            baseline_cov: [[49.0, 0.69], [0.69, 0.072]],
            baseline_bounds: (10.0, 50.0),
            richards_beta: 2.4,
            tau: 174.15,
            scale_max: 85.0,
            fine_grid: (0..=8).map(|k| k as f64 * 0.25).collect(),
            ie_mechanism: IeMechanism::Sigmoid {
                center: 29.0,
                slope: 1.0,
            },
            sym_effect: SymEffectLaw::default(),
            effect_onset: EffectOnset::NextVisit,
            outcome_rounding: true,
        }
    }
}

impl ScenarioParams {
    /// Default scenario under the null (`E_DM = 1`).
    pub fn null() -> Self {
        Self {
            e_dm: 1.0,
            ..Self::default()
        }
    }

    /// Default scenario under the alternative (`E_DM = 0.5`).
    pub fn alternative() -> Self {
        Self::default()
    }

    pub fn baseline_spec(&self) -> TruncatedBivariateNormalSpec {
        TruncatedBivariateNormalSpec::new(self.baseline_mean, self.baseline_cov, self.baseline_bounds)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Domain(m));
        if !(0.0..=1.0).contains(&self.p_treat) {
            return bad(format!("p_treat {} outside [0, 1]", self.p_treat));
        }
        if !(self.e_dm >= 0.0 && self.e_dm.is_finite()) {
            return bad(format!("e_dm {} must be finite and non-negative", self.e_dm));
        }
        if !(self.richards_beta > 0.0) {
            return bad(format!("richards_beta {} must be positive", self.richards_beta));
        }
        if !(self.tau > 0.0) {
            return bad(format!("tau {} must be positive", self.tau));
        }
        let (lo, hi) = self.baseline_bounds;
        if !(lo > 0.0 && hi < self.scale_max && lo < hi) {
            return bad(format!(
                "baseline bounds [{lo}, {hi}] must lie inside (0, {})",
                self.scale_max
            ));
        }
        if self.fine_grid.first() != Some(&0.0)
            || self.fine_grid.windows(2).any(|w| !(w[1] > w[0]))
        {
            return bad("fine grid must start at 0 and increase strictly".into());
        }
        for &t in &VISITS {
            if !self.fine_grid.iter().any(|&g| (g - t).abs() < 1e-12) {
                return bad(format!("fine grid lacks observed visit {t}"));
            }
        }
        let s = &self.sym_effect;
        if !(s.sd >= 0.0 && s.lo <= s.hi) {
            return bad("symptomatic effect law is invalid".into());
        }
        self.baseline_spec().validate()
    }

    fn grid_index(&self, t: f64) -> usize {
        self.fine_grid
            .iter()
            .position(|&g| (g - t).abs() < 1e-12)
            .expect("validated grid contains visit")
    }

    pub(crate) fn observe(&self, y: f64) -> f64 {
        let y = y.clamp(0.0, self.scale_max);
        if self.outcome_rounding {
            y.round()
        } else {
            y
        }
    }
}

/// One advance of the underlying score by `delta_years`.
pub fn progress_step(
    y_prev_star: f64,
    alpha: f64,
    treat: bool,
    params: &ScenarioParams,
    delta_years: f64,
    stream: &mut Stream,
) -> Result<f64> {
    if !(delta_years > 0.0) {
        return Err(Error::Domain(format!("time step {delta_years} must be positive")));
    }
    let mean = progress_mean(y_prev_star, alpha, treat, params, delta_years);
    Ok(params.scale_max * sample_beta_mean_tau(mean, params.tau, stream)?)
}

/// Conditional mean (normalised) of the next underlying score.
pub fn progress_mean(
    y_prev_star: f64,
    alpha: f64,
    treat: bool,
    params: &ScenarioParams,
    delta_years: f64,
) -> f64 {
    let x = (y_prev_star / params.scale_max).clamp(LINK_EPS, 1.0 - LINK_EPS);
    let factor = if treat { params.e_dm } else { 1.0 };
    let eta = richards_link_unchecked(x, params.richards_beta) + alpha * delta_years * factor;
    richards_inverse(eta, params.richards_beta).clamp(LINK_EPS, 1.0 - LINK_EPS)
}

/// Full simulated history of one patient.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientTrajectory {
    pub treat: bool,
    /// Observed baseline score.
    pub y0: f64,
    pub alpha: f64,
    pub e_sym: f64,
    /// `(time, underlying score)` on the fine grid, baseline included.
    pub y_star: Vec<(f64, f64)>,
    /// Observed scores at [`VISITS`].
    pub y_obs: [f64; 4],
    /// Initiation indicators at [`IE_TIMES`]; at most one is set.
    pub sym_init: [bool; 3],
}

impl PatientTrajectory {
    /// Underlying score at time `t`, if `t` is on the grid.
    pub fn y_star_at(&self, t: f64) -> Option<f64> {
        self.y_star
            .iter()
            .find(|(g, _)| (g - t).abs() < 1e-12)
            .map(|&(_, y)| y)
    }

    /// Exposure view: symptomatic treatment taken at or before each IE time.
    pub fn exposure(&self) -> [bool; 3] {
        let mut on = false;
        let mut out = [false; 3];
        for (k, &s) in self.sym_init.iter().enumerate() {
            on |= s;
            out[k] = on;
        }
        out
    }

    pub fn initiation_index(&self) -> Option<usize> {
        self.sym_init.iter().position(|&s| s)
    }
}

/// Draws arm, baseline, decline rate and the underlying path into `y_star`.
///
/// Consumes exactly the variates that open [`simulate_patient`], so both see
/// the same underlying history for the same stream.
pub(crate) fn draw_underlying(
    params: &ScenarioParams,
    stream: &mut Stream,
    y_star: &mut Vec<(f64, f64)>,
) -> Result<(bool, f64)> {
    let treat = stream.bernoulli(params.p_treat);
    let (y0_star, alpha) = sample_truncated_bivariate_normal(&params.baseline_spec(), stream)?;
    y_star.clear();
    y_star.push((0.0, y0_star));
    let mut prev = y0_star;
    for w in params.fine_grid.windows(2) {
        prev = progress_step(prev, alpha, treat, params, w[1] - w[0], stream)?;
        y_star.push((w[1], prev));
    }
    Ok((treat, alpha))
}

/// Simulates one patient from the model.
pub fn simulate_patient(params: &ScenarioParams, stream: &mut Stream) -> Result<PatientTrajectory> {
    let mut y_star = Vec::with_capacity(params.fine_grid.len());
    let (treat, alpha) = draw_underlying(params, stream, &mut y_star)?;
    let y0_star = y_star[0].1;

    let law = params.sym_effect;
    let e_sym = sample_truncated_normal(law.mean, law.sd, law.lo, law.hi, stream)?;

    // One uniform per opportunity, drawn even after initiation.
    let uniforms = [stream.uniform(), stream.uniform(), stream.uniform()];
    let mut sym_init = [false; 3];
    for (k, &t) in IE_TIMES.iter().enumerate() {
        if sym_init.iter().any(|&s| s) {
            break;
        }
        let ys = y_star[params.grid_index(t)].1;
        sym_init[k] = match params.ie_mechanism {
            IeMechanism::Sigmoid { center, slope } => {
                let p = 1.0 / (1.0 + (-(slope * (ys - center))).exp());
                uniforms[k] < p
            }
            IeMechanism::Threshold { cutoff } => params.observe(ys) > cutoff,
        };
    }

    let start = sym_init.iter().position(|&s| s);
    let mut y_obs = [0.0; 4];
    for (v, &t) in VISITS.iter().enumerate() {
        let ys = y_star[params.grid_index(t)].1;
        let shifted = match start {
            Some(k) => match params.effect_onset {
                EffectOnset::InitiationVisit => t >= IE_TIMES[k] - 1e-12,
                EffectOnset::NextVisit => t > IE_TIMES[k] + 1e-12,
            },
            None => false,
        };
        y_obs[v] = params.observe(if shifted { ys + e_sym } else { ys });
    }

    Ok(PatientTrajectory {
        treat,
        y0: params.observe(y0_star),
        alpha,
        e_sym,
        y_star,
        y_obs,
        sym_init,
    })
}

/// The analysis view of one patient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatientRecord {
    /// 1 for the active arm, 0 for placebo.
    pub treat: f64,
    pub y0: f64,
    /// Observed scores at [`VISITS`].
    pub y: [f64; 4],
    /// Initiation indicators at [`IE_TIMES`].
    pub sym: [f64; 3],
    /// Observed-scale underlying score at year 2. Never read by estimators.
    pub y2_star: Option<f64>,
}

impl PatientRecord {
    pub fn from_trajectory(p: &PatientTrajectory, params: &ScenarioParams) -> Self {
        let y2 = p.y_star.last().map(|&(_, y)| params.observe(y));
        Self {
            treat: if p.treat { 1.0 } else { 0.0 },
            y0: p.y0,
            y: p.y_obs,
            sym: p.sym_init.map(|s| if s { 1.0 } else { 0.0 }),
            y2_star: y2,
        }
    }
}

/// One simulated (or loaded) trial.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrialData {
    pub patients: Vec<PatientRecord>,
}

impl TrialData {
    pub fn new(patients: Vec<PatientRecord>) -> Self {
        Self { patients }
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn treat(&self) -> Vec<f64> {
        self.patients.iter().map(|p| p.treat).collect()
    }

    pub fn y0(&self) -> Vec<f64> {
        self.patients.iter().map(|p| p.y0).collect()
    }

    /// Observed scores at visit index `v` (0 → 0.5 years, …, 3 → 2 years).
    pub fn y(&self, v: usize) -> Vec<f64> {
        self.patients.iter().map(|p| p.y[v]).collect()
    }

    /// Initiation indicators at IE index `k` (0 → 0.5, 1 → 1, 2 → 1.5).
    pub fn sym(&self, k: usize) -> Vec<f64> {
        self.patients.iter().map(|p| p.sym[k]).collect()
    }

    pub fn y2_star(&self) -> Option<Vec<f64>> {
        self.patients.iter().map(|p| p.y2_star).collect()
    }

    /// Trial made of the patients at `indices` (repeats allowed).
    pub fn subset(&self, indices: &[usize]) -> TrialData {
        TrialData {
            patients: indices.iter().map(|&i| self.patients[i]).collect(),
        }
    }

    /// Trial without patient `i`.
    pub fn without(&self, i: usize) -> TrialData {
        let mut patients = self.patients.clone();
        patients.remove(i);
        TrialData { patients }
    }

    /// Checks the one-hot initiation coding every estimator relies on.
    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.patients.iter().enumerate() {
            if p.treat != 0.0 && p.treat != 1.0 {
                return Err(Error::Domain(format!("patient {i}: treat must be 0/1")));
            }
            if p.sym.iter().any(|&s| s != 0.0 && s != 1.0) {
                return Err(Error::Domain(format!("patient {i}: sym flags must be 0/1")));
            }
            if p.sym.iter().sum::<f64>() > 1.0 {
                return Err(Error::Domain(format!(
                    "patient {i}: initiation can be flagged at one visit only"
                )));
            }
        }
        Ok(())
    }
}

/// Simulates `params.n` patients; patient `i` draws from `key.child(i)`.
pub fn simulate_trial(params: &ScenarioParams, key: &StreamKey) -> Result<TrialData> {
    params.validate()?;
    let patients = (0..params.n)
        .map(|i| {
            let mut s = derive_stream(&key.child(i as u64));
            simulate_patient(params, &mut s).map(|p| PatientRecord::from_trajectory(&p, params))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrialData { patients })
}
