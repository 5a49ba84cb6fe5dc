//! Scenario configuration files (TOML).
//!
//! ```toml
//! schema_version = 1
//!
//! [scenario]
//! e_dm = 0.5
//! tau = 174.15          # required unless [calibrate] or [grid] is present
//!
//! [study]
//! nsim = 2000
//! bootstrap = 500
//! jackknife = true
//! seed = 2024
//! ```
//!
//! Every other key falls back to the defaults of [`ScenarioParams`] and
//! [`StudyConfig`]. Unknown keys are errors.

use serde::Deserialize;

use crate::dgm::{EffectOnset, IeMechanism, ScenarioParams, SymEffectLaw};
use crate::error::{Error, Result};
use crate::gest::{GestOptions, Method, Weighting};
use crate::mmrm::MaskRule;
use crate::study::{GridAxis, StudyConfig};

pub const SCHEMA_VERSION: u32 = 1;

/// Desk-scale defaults.
pub const DEFAULT_NSIM: usize = 2000;
pub const DEFAULT_BOOTSTRAP: usize = 500;
/// Full-scale profile.
pub const FULL_NSIM: usize = 10_000;
pub const FULL_BOOTSTRAP: usize = 1000;

pub const DEFAULT_ORACLE_N: usize = 1_000_000;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    schema_version: u32,
    scenario: RawScenario,
    #[serde(default)]
    study: RawStudy,
    calibrate: Option<RawCalibrate>,
    grid: Option<RawGrid>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    n: Option<usize>,
    p_treat: Option<f64>,
    e_dm: Option<f64>,
    baseline_mean: Option<[f64; 2]>,
    baseline_cov: Option<[[f64; 2]; 2]>,
    baseline_bounds: Option<[f64; 2]>,
    richards_beta: Option<f64>,
    tau: Option<f64>,
    scale_max: Option<f64>,
    fine_grid: Option<Vec<f64>>,
    ie_mechanism: Option<String>,
    ie_center: Option<f64>,
    ie_slope: Option<f64>,
    ie_cutoff: Option<f64>,
    sym_mean: Option<f64>,
    sym_sd: Option<f64>,
    /// Truncation half-width in SDs; ignored when `sym_lo`/`sym_hi` are set.
    sym_width: Option<f64>,
    sym_lo: Option<f64>,
    sym_hi: Option<f64>,
    effect_onset: Option<String>,
    rounding: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStudy {
    nsim: Option<usize>,
    methods: Option<Vec<String>>,
    bootstrap: Option<usize>,
    jackknife: Option<bool>,
    seed: Option<u64>,
    scenario_id: Option<u64>,
    threads: Option<usize>,
    alpha: Option<f64>,
    oracle_n: Option<usize>,
    weighting: Option<String>,
    mod3_tol: Option<f64>,
    mod3_max_iter: Option<usize>,
    mod1_restrict_last: Option<bool>,
    mmrm_mask: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCalibrate {
    target_sd: f64,
    decline_share: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    sym_sds: Vec<f64>,
    axis: String,
    values: Vec<f64>,
    decline_share: Option<f64>,
    target_sd: Option<f64>,
    sym_width: Option<f64>,
}

/// Calibration request: hit `target_sd` for the placebo `Y2*` with the given
/// decline share (`None` keeps the share implied by the template).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrateSpec {
    pub target_sd: f64,
    pub decline_share: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub sym_sds: Vec<f64>,
    pub sym_width: f64,
    /// Second axis; a `None` decline share is replaced by the implied one.
    pub axis: GridAxisSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GridAxisSpec {
    TargetSd { values: Vec<f64>, decline_share: Option<f64> },
    DeclineShare { values: Vec<f64>, target_sd: f64 },
}

impl GridAxisSpec {
    pub fn resolve(&self, implied_share: impl FnOnce() -> Result<f64>) -> Result<GridAxis> {
        Ok(match self {
            GridAxisSpec::TargetSd { values, decline_share } => GridAxis::TargetSd {
                values: values.clone(),
                decline_share: match decline_share {
                    Some(s) => *s,
                    None => implied_share()?,
                },
            },
            GridAxisSpec::DeclineShare { values, target_sd } => GridAxis::DeclineShare {
                values: values.clone(),
                target_sd: *target_sd,
            },
        })
    }
}

/// A fully resolved configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub study: StudyConfig,
    pub oracle_n: usize,
    pub calibrate: Option<CalibrateSpec>,
    pub grid: Option<GridSpec>,
}

fn parse_enum<T>(key: &str, value: &str, options: &[(&str, T)]) -> Result<T>
where
    T: Copy,
{
    options
        .iter()
        .find(|(name, _)| *name == value)
        .map(|(_, v)| *v)
        .ok_or_else(|| {
            let names: Vec<&str> = options.iter().map(|o| o.0).collect();
            Error::Config(format!("`{key}` = \"{value}\": expected one of {}", names.join(", ")))
        })
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if raw.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "`schema_version` is {}, this build reads {SCHEMA_VERSION}",
                raw.schema_version
            )));
        }
        let s = raw.scenario;
        let d = ScenarioParams::default();
        let tau = match s.tau {
            Some(t) => t,
            None if raw.calibrate.is_some() || raw.grid.is_some() => d.tau,
            None => {
                return Err(Error::Config(
                    "missing key `scenario.tau` (required unless a [calibrate] or [grid] section is given)".into(),
                ))
            }
        };
        let ie_mechanism = match s.ie_mechanism.as_deref().unwrap_or("sigmoid") {
            "sigmoid" => IeMechanism::Sigmoid {
                center: s.ie_center.unwrap_or(29.0),
                slope: s.ie_slope.unwrap_or(1.0),
            },
            "threshold" => IeMechanism::Threshold {
                cutoff: s.ie_cutoff.unwrap_or(40.5),
            },
            other => {
                return Err(Error::Config(format!(
                    "`scenario.ie_mechanism` = \"{other}\": expected sigmoid or threshold"
                )))
            }
        };
        let dl = d.sym_effect;
        let sym_mean = s.sym_mean.unwrap_or(dl.mean);
        let sym_sd = s.sym_sd.unwrap_or(dl.sd);
        let width = s.sym_width.unwrap_or(2.0);
        let mut sym_effect = SymEffectLaw::symmetric(sym_mean, sym_sd, width);
        if let Some(lo) = s.sym_lo {
            sym_effect.lo = lo;
        }
        if let Some(hi) = s.sym_hi {
            sym_effect.hi = hi;
        }
        let effect_onset = match s.effect_onset.as_deref() {
            None => d.effect_onset,
            Some(v) => parse_enum(
                "scenario.effect_onset",
                v,
                &[("initiation", EffectOnset::InitiationVisit), ("next", EffectOnset::NextVisit)],
            )?,
        };
        let bounds = s.baseline_bounds.map(|b| (b[0], b[1])).unwrap_or(d.baseline_bounds);
        let params = ScenarioParams {
            n: s.n.unwrap_or(d.n),
            p_treat: s.p_treat.unwrap_or(d.p_treat),
            e_dm: s.e_dm.unwrap_or(d.e_dm),
            baseline_mean: s.baseline_mean.unwrap_or(d.baseline_mean),
            baseline_cov: s.baseline_cov.unwrap_or(d.baseline_cov),
            baseline_bounds: bounds,
            richards_beta: s.richards_beta.unwrap_or(d.richards_beta),
            tau,
            scale_max: s.scale_max.unwrap_or(d.scale_max),
            fine_grid: s.fine_grid.unwrap_or(d.fine_grid),
            ie_mechanism,
            sym_effect,
            effect_onset,
            outcome_rounding: s.rounding.unwrap_or(d.outcome_rounding),
        };
        params
            .validate()
            .map_err(|e| Error::Config(format!("[scenario]: {e}")))?;

        let st = raw.study;
        let methods = match st.methods {
            None => Method::ALL.to_vec(),
            Some(v) => v
                .iter()
                .map(|m| m.parse::<Method>())
                .collect::<Result<Vec<_>>>()
                .map_err(|e| Error::Config(format!("`study.methods`: {e}")))?,
        };
        let dg = GestOptions::default();
        let gest = GestOptions {
            weighting: match st.weighting.as_deref() {
                None => dg.weighting,
                Some(v) => parse_enum(
                    "study.weighting",
                    v,
                    &[("inverse_se", Weighting::InverseSe), ("inverse_variance", Weighting::InverseVariance)],
                )?,
            },
            mod3_tol: st.mod3_tol.unwrap_or(dg.mod3_tol),
            mod3_max_iter: st.mod3_max_iter.unwrap_or(dg.mod3_max_iter),
            mod1_restrict_last: st.mod1_restrict_last.unwrap_or(dg.mod1_restrict_last),
            mmrm_mask: match st.mmrm_mask.as_deref() {
                None => dg.mmrm_mask,
                Some(v) => parse_enum(
                    "study.mmrm_mask",
                    v,
                    &[("at_initiation", MaskRule::AtInitiation), ("after_initiation", MaskRule::AfterInitiation)],
                )?,
            },
        };
        let mut study = StudyConfig::new(params, st.nsim.unwrap_or(DEFAULT_NSIM), st.seed.unwrap_or(2024));
        study.methods = methods;
        study.bootstrap = match st.bootstrap {
            None => Some(DEFAULT_BOOTSTRAP),
            Some(0) => None,
            Some(b) => Some(b),
        };
        study.jackknife = st.jackknife.unwrap_or(true);
        study.scenario_id = st.scenario_id.unwrap_or(0);
        study.threads = st.threads;
        study.gest = gest;
        if let Some(a) = st.alpha {
            if !(a > 0.0 && a < 0.5) {
                return Err(Error::Config(format!("`study.alpha` = {a} outside (0, 0.5)")));
            }
            study.alpha = a;
        }

        let calibrate = raw.calibrate.map(|c| CalibrateSpec {
            target_sd: c.target_sd,
            decline_share: c.decline_share,
        });
        let grid = match raw.grid {
            None => None,
            Some(g) => {
                let axis = match g.axis.as_str() {
                    "sd_y2_star" => GridAxisSpec::TargetSd {
                        values: g.values,
                        decline_share: g.decline_share,
                    },
                    "decline_share" => GridAxisSpec::DeclineShare {
                        values: g.values,
                        target_sd: g.target_sd.ok_or_else(|| {
                            Error::Config("missing key `grid.target_sd` for axis decline_share".into())
                        })?,
                    },
                    other => {
                        return Err(Error::Config(format!(
                            "`grid.axis` = \"{other}\": expected sd_y2_star or decline_share"
                        )))
                    }
                };
                Some(GridSpec {
                    sym_sds: g.sym_sds,
                    sym_width: g.sym_width.unwrap_or(2.0),
                    axis,
                })
            }
        };
        Ok(Config {
            study,
            oracle_n: st.oracle_n.unwrap_or(DEFAULT_ORACLE_N),
            calibrate,
            grid,
        })
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }
}
