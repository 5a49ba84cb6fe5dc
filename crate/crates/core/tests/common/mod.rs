//! Checks shared by the property suites and the acceptance target. Each
//! returns `Err` with a description when the property fails.
#![allow(dead_code)]

use demediate::dag::CausalDag;
use demediate::dgm::{simulate_trial, PatientRecord, ScenarioParams, TrialData};
use demediate::gest::{estimate_mod3, weighted_average, Analysis, DemediationTrace, EstimateResult, GestOptions, Method, Trace};
use demediate::mmrm::{fit_mmrm, mmrm_contrast_t2, set_post_ie_missing, MaskRule};
use demediate::regress::{ols, Design};
use demediate::resample::jackknife;
use demediate::stochastics::StreamKey;
use demediate::study::{run_scenario, StudyConfig};

pub type Check = Result<(), String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Check {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

pub fn trial(seed: u64) -> TrialData {
    simulate_trial(&ScenarioParams::default(), &StreamKey::new(seed, vec![77])).unwrap()
}

pub fn map(t: &TrialData, f: impl Fn(&mut PatientRecord)) -> TrialData {
    let mut t = t.clone();
    t.patients.iter_mut().for_each(f);
    t
}

pub fn z_coef(t: &TrialData, y: &[f64]) -> (f64, f64) {
    let d = Design::with_intercept(t.len()).column("treat", t.treat()).column("y0", t.y0());
    let f = ols(&d, y).unwrap();
    (f.coefs[1], f.ses[1])
}

fn all_thetas(t: &TrialData) -> Vec<f64> {
    let a = Analysis::new(t, &GestOptions::default()).unwrap();
    Method::GEST.iter().map(|&m| a.estimate(m).unwrap().theta_hat).collect()
}

fn demediation(r: &EstimateResult) -> &DemediationTrace {
    match &r.trace {
        Trace::Demediation(d) => d,
        Trace::Mmrm { .. } => panic!("not a g-estimate"),
    }
}

fn mmrm_theta(t: &TrialData) -> f64 {
    mmrm_contrast_t2(&fit_mmrm(&set_post_ie_missing(t, MaskRule::AtInitiation)).unwrap()).0
}

/// With no initiations every g-estimator is bitwise the OLS fit of Y2 on Z and Y0.
pub fn collapse(seed: u64) -> Check {
    let t = map(&trial(seed), |p| p.sym = [0.0; 3]);
    let (theta, se) = z_coef(&t, &t.y(3));
    let a = Analysis::new(&t, &GestOptions::default()).unwrap();
    for m in Method::GEST {
        let r = a.estimate(m).unwrap();
        ensure(r.theta_hat.to_bits() == theta.to_bits() && r.model_se.to_bits() == se.to_bits(), || {
            format!("{m}: {} / {} vs {theta} / {se}", r.theta_hat, r.model_se)
        })?;
    }
    Ok(())
}

/// Subtracting the true constant effect reproduces the counterfactual fit.
pub fn planted_demediation(seed: u64, c: f64) -> Check {
    let t = map(&trial(seed), |p| p.y[3] = p.y2_star.unwrap() + c * p.sym.iter().sum::<f64>());
    let a = Analysis::new(&t, &GestOptions::default()).unwrap();
    let (reference, _) = z_coef(&t, &t.y2_star().unwrap());
    let got = a.with_planted([c; 3]).theta_hat;
    ensure((got - reference).abs() < 1e-9, || format!("{got} vs {reference}"))
}

/// Shifting every score by `c` leaves all five estimates unchanged.
pub fn translation(seed: u64, c: f64) -> Check {
    let t = trial(seed);
    let shifted = map(&t, |p| {
        p.y0 += c;
        p.y.iter_mut().for_each(|y| *y += c);
    });
    for (a, b) in all_thetas(&t).iter().zip(all_thetas(&shifted)) {
        ensure((a - b).abs() < 1e-8, || format!("{a} vs {b}"))?;
    }
    let (a, b) = (mmrm_theta(&t), mmrm_theta(&shifted));
    ensure((a - b).abs() < 1e-8, || format!("mmrm {a} vs {b}"))
}

/// Swapping the arm labels negates every g-estimate.
pub fn relabelling(seed: u64) -> Check {
    let t = trial(seed);
    let swapped = map(&t, |p| p.treat = 1.0 - p.treat);
    for (a, b) in all_thetas(&t).iter().zip(all_thetas(&swapped)) {
        ensure((a + b).abs() < 1e-8, || format!("{a} vs {b}"))?;
    }
    Ok(())
}

/// Equal standard errors make the weighted average the arithmetic mean.
pub fn equal_se_mean(coefs: &[f64], se: f64) -> Check {
    let ses = vec![se; coefs.len()];
    let mean = coefs.iter().sum::<f64>() / coefs.len() as f64;
    let w = weighted_average(coefs, &ses).unwrap();
    ensure((w - mean).abs() < 1e-10 * (1.0 + mean.abs()), || format!("{w} vs {mean}"))
}

/// Iteration count never exceeds the cap, and convergence means a small last step.
pub fn mod3_cap(seed: u64, max_iter: usize, tight: bool) -> Check {
    let tol = if tight { 0.0 } else { 1e-4 };
    let r = estimate_mod3(&trial(seed), tol, max_iter).unwrap();
    let d = demediation(&r);
    let (j, cap) = (d.iterations.unwrap(), max_iter.max(1));
    ensure(j >= 1 && j <= cap, || format!("{j} iterations with cap {cap}"))?;
    match d.converged {
        Some(true) => ensure(!tight && d.last_change.unwrap() < tol, || "converged without a small step".into()),
        _ => ensure(j == cap, || format!("stopped at {j} < {cap} without converging")),
    }
}

/// Once two sweeps use the same de-mediation inputs, the estimate stops moving.
/// Returns `Ok(false)` when no fixed point is reached within 80 sweeps.
pub fn mod3_fixed_point(seed: u64) -> Result<bool, String> {
    let t = trial(seed);
    let run = |j: usize| estimate_mod3(&t, 0.0, j).unwrap();
    let mut prev = run(2);
    for j in 3..80 {
        let cur = run(j);
        let (a, b) = (demediation(&prev), demediation(&cur));
        let same = (0..3).all(|k| {
            (a.coef_sym[k] - b.coef_sym[k]).abs() < 1e-12
                && (a.se_sym[k] == b.se_sym[k] || (a.se_sym[k] - b.se_sym[k]).abs() < 1e-12)
        });
        if same {
            let next = run(j + 1);
            ensure((next.theta_hat - cur.theta_hat).abs() < 1e-10, || {
                format!("sweep {}: {} vs {}", j + 1, next.theta_hat, cur.theta_hat)
            })?;
            return Ok(true);
        }
        prev = cur;
    }
    Ok(false)
}

/// Complete data: fitted cell means are the raw means and sigma the pooled
/// within-cell covariance over n − 2.
pub fn mmrm_complete_data(seed: u64) -> Check {
    let t = map(&trial(seed), |p| p.sym = [0.0; 3]);
    let fit = fit_mmrm(&set_post_ie_missing(&t, MaskRule::AtInitiation)).unwrap();
    let mut sscp = [[0.0; 4]; 4];
    for arm in 0..2 {
        let rows: Vec<&PatientRecord> = t.patients.iter().filter(|p| p.treat == arm as f64).collect();
        let mean: Vec<f64> = (0..4).map(|v| rows.iter().map(|p| p.y[v]).sum::<f64>() / rows.len() as f64).collect();
        for v in 0..4 {
            ensure((fit.cell_means[arm][v] - mean[v]).abs() < 1e-8, || {
                format!("arm {arm} visit {v}: {} vs {}", fit.cell_means[arm][v], mean[v])
            })?;
        }
        for p in &rows {
            for i in 0..4 {
                for j in 0..4 {
                    sscp[i][j] += (p.y[i] - mean[i]) * (p.y[j] - mean[j]);
                }
            }
        }
    }
    let n = t.len() as f64;
    for i in 0..4 {
        for j in 0..4 {
            let want = sscp[i][j] / (n - 2.0);
            ensure((fit.sigma[(i, j)] - want).abs() < 1e-6 * (sscp[i][i] / n).max(1.0), || {
                format!("sigma[{i},{j}] {} vs {want}", fit.sigma[(i, j)])
            })?;
        }
    }
    let (theta, _) = mmrm_contrast_t2(&fit);
    ensure((theta - (fit.cell_means[1][3] - fit.cell_means[0][3])).abs() < 1e-12, || "contrast".into())
}

/// With masking, the fit does not depend on record order.
pub fn mmrm_row_order(seed: u64, rot: usize) -> Check {
    let long = set_post_ie_missing(&trial(seed), MaskRule::AtInitiation);
    let mut shuffled = long.clone();
    shuffled.rotate_left(rot % long.len());
    shuffled.reverse();
    let a = mmrm_contrast_t2(&fit_mmrm(&long).unwrap());
    let b = mmrm_contrast_t2(&fit_mmrm(&shuffled).unwrap());
    ensure((a.0 - b.0).abs() < 1e-8 && (a.1 - b.1).abs() < 1e-8, || format!("{a:?} vs {b:?}"))
}

/// The jackknife SE of a mean is the classical sd/sqrt(n).
pub fn jackknife_of_mean(ys: &[f64]) -> Check {
    let t = TrialData::new(
        ys.iter()
            .enumerate()
            .map(|(i, &y)| PatientRecord {
                treat: (i % 2) as f64,
                y0: 0.0,
                y: [0.0, 0.0, 0.0, y],
                sym: [0.0; 3],
                y2_star: None,
            })
            .collect(),
    );
    let mean = |d: &TrialData| Ok(d.y(3).iter().sum::<f64>() / d.len() as f64);
    let n = ys.len() as f64;
    let m = ys.iter().sum::<f64>() / n;
    let sd = (ys.iter().map(|y| (y - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let se = jackknife(&t, mean).unwrap();
    ensure((se - sd / n.sqrt()).abs() < 1e-9 * (1.0 + sd), || format!("{se} vs {}", sd / n.sqrt()))
}

/// A scenario run gives identical results on 1 and `threads` workers.
pub fn thread_determinism(seed: u64, threads: usize) -> Check {
    let mut cfg = StudyConfig::new(ScenarioParams::default(), 6, seed);
    cfg.bootstrap = Some(20);
    cfg.jackknife = true;
    cfg.threads = Some(1);
    let one = run_scenario(&cfg).unwrap();
    cfg.threads = Some(threads);
    let many = run_scenario(&cfg).unwrap();
    ensure(one.results == many.results && one.failures == many.failures, || {
        format!("results differ between 1 and {threads} threads")
    })
}

/// Every simple path in the skeleton from `a` to `b`.
fn simple_paths(g: &CausalDag, a: usize, b: usize) -> Vec<Vec<usize>> {
    fn walk(g: &CausalDag, b: usize, path: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        let v = *path.last().unwrap();
        if v == b {
            out.push(path.clone());
            return;
        }
        let nbrs: Vec<usize> = g.parents(v).iter().chain(g.children(v)).copied().collect();
        for w in nbrs {
            if !path.contains(&w) {
                path.push(w);
                walk(g, b, path, out);
                path.pop();
            }
        }
    }
    let mut out = Vec::new();
    walk(g, b, &mut vec![a], &mut out);
    out
}

/// Textbook definition: a path is blocked by `c` if some inner node is a
/// non-collider in `c`, or a collider with neither itself nor a descendant
/// in `c`.
pub fn oracle_d_separated(g: &CausalDag, a: &[usize], b: &[usize], c: &[usize]) -> bool {
    let into = |from: usize, to: usize| g.children(from).contains(&to);
    for &x in a {
        for &y in b {
            for p in simple_paths(g, x, y) {
                let blocked = (1..p.len() - 1).any(|k| {
                    let (u, v, w) = (p[k - 1], p[k], p[k + 1]);
                    if into(u, v) && into(w, v) {
                        let de = g.descendants(v);
                        !c.iter().any(|&z| de[z])
                    } else {
                        c.contains(&v)
                    }
                });
                if !blocked {
                    return false;
                }
            }
        }
    }
    true
}
