//! Monte Carlo studies: repeated trials per scenario, performance summaries
//! with Monte Carlo standard errors, scenario grids and CSV output.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::dgm::{
    apply_calibration, calibrate, simulate_trial, true_value_oracle, Calibration, ScenarioParams, SymEffectLaw,
    TrialData,
};
use crate::error::{Error, Result};
use crate::gest::{estimate_many, GestOptions, Method};
use crate::resample::{bootstrap_methods, jackknife_methods, wald_test, DEFAULT_ALPHA};
use crate::special::z_upper;
use crate::stochastics::StreamKey;

/// Path element reserved for bootstrap streams under a trial key.
pub const BOOTSTRAP_BRANCH: u64 = u64::MAX;

/// Share of failed trials (per method) above which a scenario is rejected.
pub const MAX_FAILURE_RATE: f64 = 0.01;

/// Everything that defines one Monte Carlo scenario run.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub params: ScenarioParams,
    pub nsim: usize,
    pub methods: Vec<Method>,
    /// Bootstrap replicates per trial; `None` skips the bootstrap.
    pub bootstrap: Option<usize>,
    pub jackknife: bool,
    pub master_seed: u64,
    pub scenario_id: u64,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
    pub gest: GestOptions,
    pub alpha: f64,
}

impl StudyConfig {
    pub fn new(params: ScenarioParams, nsim: usize, master_seed: u64) -> Self {
        Self {
            params,
            nsim,
            methods: Method::ALL.to_vec(),
            bootstrap: None,
            jackknife: false,
            master_seed,
            scenario_id: 0,
            threads: None,
            gest: GestOptions::default(),
            alpha: DEFAULT_ALPHA,
        }
    }

    pub fn trial_key(&self, k: usize) -> StreamKey {
        StreamKey::new(self.master_seed, vec![self.scenario_id, k as u64])
    }
}

/// One (trial, method) record.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub trial: usize,
    pub method: Method,
    pub theta_hat: f64,
    pub se_model: f64,
    pub se_bootstrap: Option<f64>,
    pub se_jackknife: Option<f64>,
    pub ci_basic: Option<(f64, f64)>,
    pub reject_model: bool,
    pub reject_bootstrap: Option<bool>,
    pub reject_jackknife: Option<bool>,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
}

/// Output of [`run_scenario`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScenarioRun {
    pub results: Vec<TrialResult>,
    /// Failed trials per method.
    pub failures: BTreeMap<Method, usize>,
}

/// Inference settings for [`analyze_trial`].
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisPlan {
    pub methods: Vec<Method>,
    pub gest: GestOptions,
    pub bootstrap: Option<usize>,
    pub jackknife: bool,
    pub alpha: f64,
}

impl From<&StudyConfig> for AnalysisPlan {
    fn from(c: &StudyConfig) -> Self {
        Self {
            methods: c.methods.clone(),
            gest: c.gest.clone(),
            bootstrap: c.bootstrap,
            jackknife: c.jackknife,
            alpha: c.alpha,
        }
    }
}

/// Point estimates plus the requested resampling inference for one trial.
/// Bootstrap and jackknife cover the g-estimators only; the MMRM keeps its
/// model-based SE. `key` seeds the bootstrap. Trial index is set to 0.
pub fn analyze_trial(
    trial: &TrialData,
    plan: &AnalysisPlan,
    key: &StreamKey,
) -> Vec<(Method, Result<TrialResult>)> {
    let point = estimate_many(trial, &plan.methods, &plan.gest);
    let ok: Vec<(Method, f64)> = point
        .iter()
        .filter_map(|(m, r)| match r {
            Ok(r) if m.is_gest() => Some((*m, r.theta_hat)),
            _ => None,
        })
        .collect();
    let ms: Vec<Method> = ok.iter().map(|r| r.0).collect();
    let thetas: Vec<f64> = ok.iter().map(|r| r.1).collect();
    let boot = match plan.bootstrap {
        Some(b) if !ms.is_empty() => Some(bootstrap_methods(trial, &ms, &plan.gest, &thetas, b, key)),
        _ => None,
    };
    let jack = (plan.jackknife && !ms.is_empty()).then(|| jackknife_methods(trial, &ms, &plan.gest));

    point
        .into_iter()
        .map(|(m, r)| {
            let out = r.and_then(|r| {
                let j = ms.iter().position(|&x| x == m);
                let bres = match (&boot, j) {
                    (Some(Ok(v)), Some(j)) => Some(&v[j]),
                    (Some(Err(e)), Some(_)) => return Err(resampling_error(m, e)),
                    _ => None,
                };
                let jres = match (&jack, j) {
                    (Some(Ok(v)), Some(j)) => Some(v[j]),
                    (Some(Err(e)), Some(_)) => return Err(resampling_error(m, e)),
                    _ => None,
                };
                let se_b = bres.map(|b| b.se);
                Ok(TrialResult {
                    trial: 0,
                    method: m,
                    theta_hat: r.theta_hat,
                    se_model: r.model_se,
                    se_bootstrap: se_b,
                    se_jackknife: jres,
                    ci_basic: bres.map(|b| b.ci_basic),
                    reject_model: wald_test(r.theta_hat, r.model_se, plan.alpha),
                    reject_bootstrap: se_b.map(|s| wald_test(r.theta_hat, s, plan.alpha)),
                    reject_jackknife: jres.map(|s| wald_test(r.theta_hat, s, plan.alpha)),
                    iterations: r.trace.iterations(),
                    converged: r.trace.converged(),
                })
            });
            (m, out)
        })
        .collect()
}

fn resampling_error(m: Method, e: &Error) -> Error {
    Error::Resampling {
        estimator: m.to_string(),
        msg: e.to_string(),
    }
}

fn run_trial(cfg: &StudyConfig, plan: &AnalysisPlan, k: usize) -> Result<Vec<(Method, Result<TrialResult>)>> {
    let key = cfg.trial_key(k);
    let trial = simulate_trial(&cfg.params, &key)?;
    let mut rows = analyze_trial(&trial, plan, &key.child(BOOTSTRAP_BRANCH));
    for (_, r) in &mut rows {
        if let Ok(t) = r {
            t.trial = k;
        }
    }
    Ok(rows)
}

/// Simulates and analyses `cfg.nsim` trials. Trial `k` uses the stream path
/// `[scenario_id, k]`, so results do not depend on the thread count.
pub fn run_scenario(cfg: &StudyConfig) -> Result<ScenarioRun> {
    if cfg.nsim == 0 {
        return Err(Error::Domain("nsim must be at least 1".into()));
    }
    cfg.params.validate()?;
    let plan = AnalysisPlan::from(cfg);
    let work = || {
        (0..cfg.nsim)
            .into_par_iter()
            .map(|k| run_trial(cfg, &plan, k))
            .collect::<Result<Vec<_>>>()
    };
    let per_trial = match cfg.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(work)?,
        None => work()?,
    };
    let mut run = ScenarioRun::default();
    for m in &cfg.methods {
        run.failures.insert(*m, 0);
    }
    for rows in per_trial {
        for (m, r) in rows {
            match r {
                Ok(t) => run.results.push(t),
                Err(_) => *run.failures.entry(m).or_default() += 1,
            }
        }
    }
    for (m, &f) in &run.failures {
        if f as f64 > MAX_FAILURE_RATE * cfg.nsim as f64 {
            return Err(Error::Scenario(format!(
                "{m} failed on {f} of {} trials",
                cfg.nsim
            )));
        }
    }
    Ok(run)
}

/// Mean and Monte Carlo SE of a rejection or coverage indicator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rate {
    pub rate: f64,
    pub mcse: f64,
}

impl Rate {
    fn of(flags: impl Iterator<Item = bool>) -> Option<Rate> {
        let (mut k, mut n) = (0usize, 0usize);
        for f in flags {
            n += 1;
            k += usize::from(f);
        }
        (n > 0).then(|| {
            let p = k as f64 / n as f64;
            Rate {
                rate: p,
                mcse: (p * (1.0 - p) / n as f64).sqrt(),
            }
        })
    }
}

/// Performance of one method across the trials of a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: Method,
    pub nsim: usize,
    pub failures: usize,
    pub theta_true: f64,
    pub mean_estimate: f64,
    pub bias: f64,
    pub mcse_bias: f64,
    pub emp_sd: f64,
    pub mcse_emp_sd: f64,
    pub mean_se_model: f64,
    pub mean_se_bootstrap: Option<f64>,
    pub mean_se_jackknife: Option<f64>,
    pub reject_model: Rate,
    pub reject_bootstrap: Option<Rate>,
    pub reject_jackknife: Option<Rate>,
    pub coverage_model: Rate,
    pub coverage_bootstrap: Option<Rate>,
    pub coverage_jackknife: Option<Rate>,
    pub coverage_basic: Option<Rate>,
}

/// Per-method performance summaries.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PerformanceSummary {
    pub methods: Vec<MethodSummary>,
}

impl PerformanceSummary {
    pub fn get(&self, m: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|s| s.method == m)
    }
}

fn covers(theta: f64, se: f64, truth: f64, z: f64) -> bool {
    (theta - z * se..=theta + z * se).contains(&truth)
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Summarises `results` against the true value. Methods keep their order of
/// first appearance; `failures` are reported alongside.
pub fn summarize(results: &[TrialResult], theta_true: f64) -> PerformanceSummary {
    summarize_with_failures(results, theta_true, &BTreeMap::new())
}

pub fn summarize_with_failures(
    results: &[TrialResult],
    theta_true: f64,
    failures: &BTreeMap<Method, usize>,
) -> PerformanceSummary {
    let mut order: Vec<Method> = Vec::new();
    for r in results {
        if !order.contains(&r.method) {
            order.push(r.method);
        }
    }
    let z = z_upper(DEFAULT_ALPHA);
    let methods = order
        .into_iter()
        .map(|m| {
            let rs: Vec<&TrialResult> = results.iter().filter(|r| r.method == m).collect();
            let n = rs.len() as f64;
            let est = mean(rs.iter().map(|r| r.theta_hat));
            let emp_sd = if rs.len() > 1 {
                (rs.iter().map(|r| (r.theta_hat - est).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            let opt_mean = |f: &dyn Fn(&TrialResult) -> Option<f64>| {
                let v: Vec<f64> = rs.iter().filter_map(|r| f(r)).collect();
                (!v.is_empty()).then(|| mean(v.into_iter()))
            };
            let opt_rate = |f: &dyn Fn(&TrialResult) -> Option<bool>| Rate::of(rs.iter().filter_map(|r| f(r)));
            MethodSummary {
                method: m,
                nsim: rs.len(),
                failures: failures.get(&m).copied().unwrap_or(0),
                theta_true,
                mean_estimate: est,
                bias: est - theta_true,
                mcse_bias: emp_sd / n.sqrt(),
                emp_sd,
                mcse_emp_sd: emp_sd / (2.0 * (n - 1.0)).sqrt(),
                mean_se_model: mean(rs.iter().map(|r| r.se_model)),
                mean_se_bootstrap: opt_mean(&|r| r.se_bootstrap),
                mean_se_jackknife: opt_mean(&|r| r.se_jackknife),
                reject_model: Rate::of(rs.iter().map(|r| r.reject_model)).unwrap(),
                reject_bootstrap: opt_rate(&|r| r.reject_bootstrap),
                reject_jackknife: opt_rate(&|r| r.reject_jackknife),
                coverage_model: Rate::of(rs.iter().map(|r| covers(r.theta_hat, r.se_model, theta_true, z))).unwrap(),
                coverage_bootstrap: opt_rate(&|r| r.se_bootstrap.map(|s| covers(r.theta_hat, s, theta_true, z))),
                coverage_jackknife: opt_rate(&|r| r.se_jackknife.map(|s| covers(r.theta_hat, s, theta_true, z))),
                coverage_basic: opt_rate(&|r| r.ci_basic.map(|(lo, hi)| (lo..=hi).contains(&theta_true))),
            }
        })
        .collect();
    PerformanceSummary { methods }
}

/// Stream branch used for true-value oracles of a scenario.
pub const ORACLE_BRANCH: u64 = u64::MAX - 2;

/// True value of a scenario by the large-sample oracle, keyed off the
/// master seed so repeated runs agree.
pub fn scenario_truth(params: &ScenarioParams, n: usize, master_seed: u64) -> Result<f64> {
    let key = StreamKey::new(master_seed, vec![ORACLE_BRANCH]);
    Ok(true_value_oracle(params, n, &key)?.theta)
}

/// Plain-text table of a summary, one line per method.
pub fn render_table(summary: &PerformanceSummary) -> String {
    let opt = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:.3}"));
    let rate = |r: Option<Rate>| r.map_or("NA".to_string(), |r| format!("{:.4}", r.rate));
    let mut out = format!(
        "{:<18} {:>5} {:>8} {:>8} {:>7} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}\n",
        "method", "nsim", "bias", "mcse", "emp_sd", "se_mod", "se_boot", "se_jack", "rej_mod", "rej_boot", "rej_jack"
    );
    for m in &summary.methods {
        out += &format!(
            "{:<18} {:>5} {:>8.3} {:>8.3} {:>7.3} {:>8.3} {:>8} {:>8} {:>8.4} {:>8} {:>8}\n",
            m.method.as_str(),
            m.nsim,
            m.bias,
            m.mcse_bias,
            m.emp_sd,
            m.mean_se_model,
            opt(m.mean_se_bootstrap),
            opt(m.mean_se_jackknife),
            m.reject_model.rate,
            rate(m.reject_bootstrap),
            rate(m.reject_jackknife),
        );
    }
    out
}

/// Second axis of a scenario grid.
#[derive(Debug, Clone, PartialEq)]
pub enum GridAxis {
    /// Target SD of the placebo year-2 score, at a fixed decline share.
    TargetSd { values: Vec<f64>, decline_share: f64 },
    /// Decline share, at a fixed target SD.
    DeclineShare { values: Vec<f64>, target_sd: f64 },
}

impl GridAxis {
    fn cells(&self) -> Vec<(f64, f64, f64)> {
        // (axis value, target sd, share)
        match self {
            GridAxis::TargetSd { values, decline_share } => {
                values.iter().map(|&v| (v, v, *decline_share)).collect()
            }
            GridAxis::DeclineShare { values, target_sd } => {
                values.iter().map(|&v| (v, *target_sd, v)).collect()
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            GridAxis::TargetSd { .. } => "sd_y2_star",
            GridAxis::DeclineShare { .. } => "decline_share",
        }
    }
}

/// Grid definition.
#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub sym_sds: Vec<f64>,
    pub axis: GridAxis,
    /// Truncation half-width of the symptomatic effect, in SDs.
    pub sym_width: f64,
    pub base: StudyConfig,
    pub n_oracle: usize,
}

/// One grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub sym_sd: f64,
    pub axis_value: f64,
    pub calibration: Option<Calibration>,
    pub theta_true: f64,
    pub summary: PerformanceSummary,
    /// Reason the cell was skipped, if it was.
    pub error: Option<String>,
}

impl GridCell {
    /// `100 · (SD_method − SD_comparator) / SD_comparator`.
    pub fn relative_sd_difference(&self, method: Method, comparator: Method) -> Option<f64> {
        let a = self.summary.get(method)?.emp_sd;
        let b = self.summary.get(comparator)?.emp_sd;
        Some(100.0 * (a - b) / b)
    }
}

/// Stream branch used for grid calibrations.
pub const CALIBRATION_BRANCH: u64 = u64::MAX - 1;

/// Runs every (symptomatic-effect SD × second-axis) cell. Calibration and
/// the true value are computed once per second-axis value, since neither
/// depends on the symptomatic effect; the benchmark on `Y2*` is always added.
pub fn run_grid(cfg: &GridConfig) -> Result<Vec<GridCell>> {
    let mut methods = cfg.base.methods.clone();
    if !methods.contains(&Method::Benchmark) {
        methods.push(Method::Benchmark);
    }
    let mean = cfg.base.params.sym_effect.mean;
    let mut cells = Vec::new();
    for (row, (axis_value, target, share)) in cfg.axis.cells().into_iter().enumerate() {
        let seed = cfg.base.master_seed;
        let prepared = calibrate(target, share, &cfg.base.params, &StreamKey::new(seed, vec![CALIBRATION_BRANCH, row as u64]))
            .and_then(|c| {
                let params = apply_calibration(&cfg.base.params, &c);
                let key = StreamKey::new(seed, vec![ORACLE_BRANCH, row as u64]);
                let theta = true_value_oracle(&params, cfg.n_oracle, &key)?.theta;
                Ok((c, params, theta))
            });
        for (col, &sd) in cfg.sym_sds.iter().enumerate() {
            let mut cell = GridCell {
                sym_sd: sd,
                axis_value,
                calibration: None,
                theta_true: f64::NAN,
                summary: PerformanceSummary::default(),
                error: None,
            };
            match &prepared {
                Err(e) => cell.error = Some(e.to_string()),
                Ok((c, params, theta)) => {
                    cell.calibration = Some(*c);
                    cell.theta_true = *theta;
                    let study = StudyConfig {
                        params: ScenarioParams {
                            sym_effect: SymEffectLaw::symmetric(mean, sd, cfg.sym_width),
                            ..params.clone()
                        },
                        methods: methods.clone(),
                        scenario_id: cfg.base.scenario_id * 10_000 + (row * 100 + col) as u64,
                        ..cfg.base.clone()
                    };
                    match run_scenario(&study) {
                        Ok(run) => cell.summary = summarize_with_failures(&run.results, *theta, &run.failures),
                        Err(e) => cell.error = Some(e.to_string()),
                    }
                }
            }
            cells.push(cell);
        }
    }
    Ok(cells)
}

// ---------------------------------------------------------------------------
// CSV output

pub const TRIALS_HEADER: [&str; 22] = [
    "trial",
    "method",
    "theta_true",
    "theta_hat",
    "se_model",
    "se_bootstrap",
    "se_jackknife",
    "ci_basic_lo",
    "ci_basic_hi",
    "ci_model_lo",
    "ci_model_hi",
    "ci_bootstrap_lo",
    "ci_bootstrap_hi",
    "ci_jackknife_lo",
    "ci_jackknife_hi",
    "abs_z_model",
    "abs_z_bootstrap",
    "abs_z_jackknife",
    "reject_model",
    "reject_bootstrap",
    "reject_jackknife",
    "iterations",
];

pub const SUMMARY_HEADER: [&str; 26] = [
    "method",
    "nsim",
    "failures",
    "theta_true",
    "mean_estimate",
    "bias",
    "mcse_bias",
    "emp_sd",
    "mcse_emp_sd",
    "mean_se_model",
    "mean_se_bootstrap",
    "mean_se_jackknife",
    "reject_model",
    "mcse_reject_model",
    "reject_bootstrap",
    "mcse_reject_bootstrap",
    "reject_jackknife",
    "mcse_reject_jackknife",
    "coverage_model",
    "mcse_coverage_model",
    "coverage_bootstrap",
    "mcse_coverage_bootstrap",
    "coverage_jackknife",
    "mcse_coverage_jackknife",
    "coverage_basic",
    "mcse_coverage_basic",
];

/// One row per grid cell. `rel_*` columns are `100 · (SD − SD_ref) / SD_ref`.
pub const HEATMAP_HEADER: [&str; 22] = [
    "sym_sd",
    "axis",
    "axis_value",
    "theta_true",
    "emp_sd_established",
    "emp_sd_mod1",
    "emp_sd_mod2",
    "emp_sd_mod3",
    "emp_sd_benchmark_y2star",
    "rel_mod1_vs_established",
    "rel_mod2_vs_established",
    "rel_mod3_vs_established",
    "rel_established_vs_benchmark_y2star",
    "rel_mod1_vs_benchmark_y2star",
    "rel_mod2_vs_benchmark_y2star",
    "rel_mod3_vs_benchmark_y2star",
    "bias_established",
    "bias_mod1",
    "bias_mod2",
    "bias_mod3",
    "bias_benchmark_y2star",
    "error",
];

fn f(v: f64) -> String {
    v.to_string()
}

fn of(v: Option<f64>) -> String {
    v.map(f).unwrap_or_default()
}

fn ob(v: Option<bool>) -> String {
    v.map(|b| u8::from(b).to_string()).unwrap_or_default()
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| Error::io(path, e))
}

/// Writes `trials.csv`. Wald intervals and `|z|` use `theta_true`.
pub fn write_trials_csv<W: Write>(results: &[TrialResult], theta_true: f64, out: W) -> Result<()> {
    let z = z_upper(DEFAULT_ALPHA);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRIALS_HEADER)?;
    for r in results {
        let ci = |se: Option<f64>| match se {
            Some(s) => (f(r.theta_hat - z * s), f(r.theta_hat + z * s)),
            None => (String::new(), String::new()),
        };
        let az = |se: Option<f64>| of(se.map(|s| (r.theta_hat - theta_true).abs() / s));
        let (ml, mh) = ci(Some(r.se_model));
        let (bl, bh) = ci(r.se_bootstrap);
        let (jl, jh) = ci(r.se_jackknife);
        w.write_record([
            r.trial.to_string(),
            r.method.to_string(),
            f(theta_true),
            f(r.theta_hat),
            f(r.se_model),
            of(r.se_bootstrap),
            of(r.se_jackknife),
            of(r.ci_basic.map(|c| c.0)),
            of(r.ci_basic.map(|c| c.1)),
            ml,
            mh,
            bl,
            bh,
            jl,
            jh,
            az(Some(r.se_model)),
            az(r.se_bootstrap),
            az(r.se_jackknife),
            ob(Some(r.reject_model)),
            ob(r.reject_bootstrap),
            ob(r.reject_jackknife),
            r.iterations.map(|i| i.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("trials.csv", e))?;
    Ok(())
}

/// Reads `trials.csv` back. Returns the records and the `theta_true` column
/// (NaN for an empty file).
pub fn read_trials_csv<R: Read>(input: R) -> Result<(Vec<TrialResult>, f64)> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    if headers.iter().ne(TRIALS_HEADER.iter().copied()) {
        return Err(Error::Schema("trials.csv header does not match".into()));
    }
    let mut out = Vec::new();
    let mut theta_true = f64::NAN;
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |c: &str| Error::Schema(format!("trials.csv row {}: bad {c}", line + 1));
        let num = |i: usize| -> Result<Option<f64>> {
            let s = &rec[i];
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| bad(TRIALS_HEADER[i]))
            }
        };
        let req = |i: usize| num(i)?.ok_or_else(|| bad(TRIALS_HEADER[i]));
        let flag = |i: usize| -> Result<Option<bool>> {
            match &rec[i] {
                "" => Ok(None),
                "0" => Ok(Some(false)),
                "1" => Ok(Some(true)),
                _ => Err(bad(TRIALS_HEADER[i])),
            }
        };
        theta_true = req(2)?;
        let ci = match (num(7)?, num(8)?) {
            (Some(a), Some(b)) => Some((a, b)),
            _ => None,
        };
        out.push(TrialResult {
            trial: rec[0].parse().map_err(|_| bad("trial"))?,
            method: rec[1].parse()?,
            theta_hat: req(3)?,
            se_model: req(4)?,
            se_bootstrap: num(5)?,
            se_jackknife: num(6)?,
            ci_basic: ci,
            reject_model: flag(18)?.ok_or_else(|| bad("reject_model"))?,
            reject_bootstrap: flag(19)?,
            reject_jackknife: flag(20)?,
            iterations: if rec[21].is_empty() {
                None
            } else {
                Some(rec[21].parse().map_err(|_| bad("iterations"))?)
            },
            converged: None,
        });
    }
    Ok((out, theta_true))
}

fn rate_cells(r: Option<Rate>) -> [String; 2] {
    [of(r.map(|r| r.rate)), of(r.map(|r| r.mcse))]
}

pub fn write_summary_csv<W: Write>(summary: &PerformanceSummary, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for s in &summary.methods {
        let mut row = vec![
            s.method.to_string(),
            s.nsim.to_string(),
            s.failures.to_string(),
            f(s.theta_true),
            f(s.mean_estimate),
            f(s.bias),
            f(s.mcse_bias),
            f(s.emp_sd),
            f(s.mcse_emp_sd),
            f(s.mean_se_model),
            of(s.mean_se_bootstrap),
            of(s.mean_se_jackknife),
        ];
        for r in [
            Some(s.reject_model),
            s.reject_bootstrap,
            s.reject_jackknife,
            Some(s.coverage_model),
            s.coverage_bootstrap,
            s.coverage_jackknife,
            s.coverage_basic,
        ] {
            row.extend(rate_cells(r));
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("summary.csv", e))?;
    Ok(())
}

/// Writes `heatmap.csv`, one row per grid cell. The benchmark columns use
/// the unaffected `Y2*`, which is not available in a real trial.
pub fn write_heatmap_csv<W: Write>(cells: &[GridCell], axis: &str, out: W) -> Result<()> {
    use Method::{Benchmark, Established, Mod1, Mod2, Mod3};
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEATMAP_HEADER)?;
    for c in cells {
        let sd = |m: Method| of(c.summary.get(m).map(|s| s.emp_sd));
        let bias = |m: Method| of(c.summary.get(m).map(|s| s.bias));
        let rel = |m: Method, r: Method| of(c.relative_sd_difference(m, r));
        w.write_record([
            f(c.sym_sd),
            axis.to_string(),
            f(c.axis_value),
            f(c.theta_true),
            sd(Established),
            sd(Mod1),
            sd(Mod2),
            sd(Mod3),
            sd(Benchmark),
            rel(Mod1, Established),
            rel(Mod2, Established),
            rel(Mod3, Established),
            rel(Established, Benchmark),
            rel(Mod1, Benchmark),
            rel(Mod2, Benchmark),
            rel(Mod3, Benchmark),
            bias(Established),
            bias(Mod1),
            bias(Mod2),
            bias(Mod3),
            bias(Benchmark),
            c.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("heatmap.csv", e))?;
    Ok(())
}

/// What [`emit_results`] writes.
pub enum Emit<'a> {
    Run {
        run: &'a ScenarioRun,
        theta_true: f64,
    },
    Grid {
        cells: &'a [GridCell],
        axis: &'a str,
    },
}

/// Writes the CSV files for a run (`trials.csv`, `summary.csv`) or a grid
/// (`heatmap.csv`, and `summary.csv` with one block per cell) into `dir`.
pub fn emit_results(what: Emit<'_>, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    match what {
        Emit::Run { run, theta_true } => {
            let p = dir.join("trials.csv");
            write_trials_csv(&run.results, theta_true, create(&p)?)?;
            written.push(p);
            let p = dir.join("summary.csv");
            let s = summarize_with_failures(&run.results, theta_true, &run.failures);
            write_summary_csv(&s, create(&p)?)?;
            written.push(p);
        }
        Emit::Grid { cells, axis } => {
            let p = dir.join("heatmap.csv");
            write_heatmap_csv(cells, axis, create(&p)?)?;
            written.push(p);
            let p = dir.join("grid_summary.csv");
            write_grid_summary_csv(cells, axis, create(&p)?)?;
            written.push(p);
        }
    }
    Ok(written)
}

/// Per-cell summaries, prefixed with the cell coordinates.
pub fn write_grid_summary_csv<W: Write>(cells: &[GridCell], axis: &str, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["sym_sd", axis, "tau", "decline_var", "error"];
    header.extend(SUMMARY_HEADER);
    w.write_record(&header)?;
    for c in cells {
        let lead = vec![
            f(c.sym_sd),
            f(c.axis_value),
            of(c.calibration.map(|k| k.tau)),
            of(c.calibration.map(|k| k.decline_var)),
            c.error.clone().unwrap_or_default(),
        ];
        let mut buf = Vec::new();
        write_summary_csv(&c.summary, &mut buf)?;
        let mut rdr = csv::Reader::from_reader(buf.as_slice());
        let mut any = false;
        for rec in rdr.records() {
            let rec = rec?;
            let mut row = lead.clone();
            row.extend(rec.iter().map(str::to_string));
            w.write_record(&row)?;
            any = true;
        }
        if !any {
            let mut row = lead;
            row.extend(std::iter::repeat_n(String::new(), SUMMARY_HEADER.len()));
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(|e| Error::io("grid_summary.csv", e))?;
    Ok(())
}
