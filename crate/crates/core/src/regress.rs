//! Small dense regression kernels: least squares with classical standard
//! errors and a probit maximum-likelihood fit.
//!
//! Designs are stored column-major with named columns so that a singular
//! design can report which column is aliased.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::special::{norm_cdf, norm_pdf, norm_ppf};

/// Relative tolerance below which a column is considered linearly dependent
/// on the columns before it.
pub const RANK_TOL: f64 = 1e-10;

/// Absolute bound on the probit linear predictor when mapping to a
/// probability, `-Φ⁻¹(ε)` with ε the machine epsilon.
pub const PROBIT_ETA_BOUND: f64 = 8.125_890_664_701_906;

/// A design matrix with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    nrows: usize,
    data: Vec<f64>,
    names: Vec<String>,
}

impl Design {
    /// Empty design with `nrows` rows and no columns.
    pub fn new(nrows: usize) -> Self {
        Self {
            nrows,
            data: Vec::new(),
            names: Vec::new(),
        }
    }

    /// Design holding only the intercept column.
    pub fn with_intercept(nrows: usize) -> Self {
        let mut d = Self::new(nrows);
        d.push_column("(intercept)", vec![1.0; nrows]);
        d
    }

    /// Appends a column, builder style.
    pub fn column(mut self, name: &str, values: impl Into<Vec<f64>>) -> Self {
        self.push_column(name, values);
        self
    }

    pub fn push_column(&mut self, name: &str, values: impl Into<Vec<f64>>) {
        let values = values.into();
        assert_eq!(values.len(), self.nrows, "column `{name}` has the wrong length");
        self.data.extend_from_slice(&values);
        self.names.push(name.to_string());
    }

    /// Removes the column at `index`.
    pub fn remove_column(&mut self, index: usize) {
        let n = self.nrows;
        self.data.drain(index * n..(index + 1) * n);
        self.names.remove(index);
    }

    /// Keeps only the rows flagged in `keep`.
    pub fn select_rows(&self, keep: &[bool]) -> Design {
        assert_eq!(keep.len(), self.nrows);
        let nrows = keep.iter().filter(|&&k| k).count();
        let mut data = Vec::with_capacity(nrows * self.ncols());
        for j in 0..self.ncols() {
            data.extend(
                self.col(j)
                    .iter()
                    .zip(keep)
                    .filter(|(_, &k)| k)
                    .map(|(&v, _)| v),
            );
        }
        Design {
            nrows,
            data,
            names: self.names.clone(),
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.nrows..(j + 1) * self.nrows]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Row-wise product `X·b`.
    pub fn mul_vec(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.ncols());
        let mut out = vec![0.0; self.nrows];
        for (j, &bj) in b.iter().enumerate() {
            if bj == 0.0 {
                continue;
            }
            for (o, &x) in out.iter_mut().zip(self.col(j)) {
                *o += bj * x;
            }
        }
        out
    }

    /// Builds a design from a dense matrix, naming columns `x0, x1, ...`.
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let mut d = Design::new(m.nrows());
        for j in 0..m.ncols() {
            d.push_column(&format!("x{j}"), m.column(j).iter().copied().collect::<Vec<_>>());
        }
        d
    }
}

/// Least-squares fit with classical (homoskedastic) standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFit {
    pub names: Vec<String>,
    pub coefs: Vec<f64>,
    pub ses: Vec<f64>,
    pub sigma2: f64,
    pub df: usize,
    pub xtx_inv: DMatrix<f64>,
}

impl LinearFit {
    pub fn coef(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|j| self.coefs[j])
    }

    pub fn se(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|j| self.ses[j])
    }
}

/// Householder QR factorisation of a design, reusable across responses.
#[derive(Debug, Clone)]
pub struct QrFactor {
    nrows: usize,
    ncols: usize,
    names: Vec<String>,
    // Householder vectors below the diagonal, R on and above it.
    qr: Vec<f64>,
    // Diagonal of R.
    rdiag: Vec<f64>,
    // Householder vectors' leading entries.
    vhead: Vec<f64>,
    xtx_inv: DMatrix<f64>,
    original: Design,
}

impl QrFactor {
    /// Factorises the design. Columns are processed in order; the first one
    /// whose residual norm after projection on its predecessors falls below
    /// `RANK_TOL` times its own norm is reported as singular.
    pub fn new(design: &Design) -> Result<Self> {
        let n = design.nrows();
        let p = design.ncols();
        if n <= p {
            return Err(Error::Estimability(format!(
                "{n} rows are not enough for {p} columns"
            )));
        }
        let mut a = design.data.clone();
        let mut rdiag = vec![0.0; p];
        let mut vhead = vec![0.0; p];
        for k in 0..p {
            let col_norm = norm2(&design.data[k * n..(k + 1) * n]);
            let ck = &mut a[k * n..(k + 1) * n];
            let rem = norm2(&ck[k..]);
            if rem <= RANK_TOL * col_norm || col_norm == 0.0 {
                return Err(Error::Singular {
                    index: k,
                    name: design.names[k].clone(),
                });
            }
            // Reflector mapping ck[k..] onto -sign(ck[k])·rem·e1.
            let alpha = if ck[k] > 0.0 { -rem } else { rem };
            let v0 = ck[k] - alpha;
            ck[k] = v0;
            let vnorm2 = v0 * v0 + ck[k + 1..].iter().map(|x| x * x).sum::<f64>();
            rdiag[k] = alpha;
            vhead[k] = v0;
            // Apply to the remaining columns.
            let v: Vec<f64> = ck[k..].to_vec();
            for j in (k + 1)..p {
                let cj = &mut a[j * n + k..(j + 1) * n];
                let dot: f64 = v.iter().zip(cj.iter()).map(|(x, y)| x * y).sum();
                let s = 2.0 * dot / vnorm2;
                for (c, &vi) in cj.iter_mut().zip(&v) {
                    *c -= s * vi;
                }
            }
        }
        let mut f = Self {
            nrows: n,
            ncols: p,
            names: design.names.clone(),
            qr: a,
            rdiag,
            vhead,
            xtx_inv: DMatrix::zeros(p, p),
            original: design.clone(),
        };
        f.xtx_inv = f.compute_xtx_inv();
        Ok(f)
    }

    fn r(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.rdiag[i]
        } else {
            self.qr[j * self.nrows + i]
        }
    }

    fn compute_xtx_inv(&self) -> DMatrix<f64> {
        let p = self.ncols;
        // R^{-1} by back substitution, then R^{-1} R^{-T}.
        let mut rinv = DMatrix::<f64>::zeros(p, p);
        for j in 0..p {
            rinv[(j, j)] = 1.0 / self.r(j, j);
            for i in (0..j).rev() {
                let mut s = 0.0;
                for k in (i + 1)..=j {
                    s += self.r(i, k) * rinv[(k, j)];
                }
                rinv[(i, j)] = -s / self.r(i, i);
            }
        }
        &rinv * rinv.transpose()
    }

    /// Applies `Qᵀ` to `y` in place.
    fn apply_qt(&self, y: &mut [f64]) {
        let n = self.nrows;
        for k in 0..self.ncols {
            let tail = &self.qr[k * n + k + 1..(k + 1) * n];
            let v0 = self.vhead[k];
            let vnorm2 = v0 * v0 + tail.iter().map(|x| x * x).sum::<f64>();
            let dot = v0 * y[k] + tail.iter().zip(&y[k + 1..]).map(|(a, b)| a * b).sum::<f64>();
            let s = 2.0 * dot / vnorm2;
            y[k] -= s * v0;
            for (yi, &vi) in y[k + 1..].iter_mut().zip(tail) {
                *yi -= s * vi;
            }
        }
    }

    /// Least-squares fit of `y` on the factorised design.
    pub fn fit(&self, y: &[f64]) -> LinearFit {
        assert_eq!(y.len(), self.nrows, "response length");
        let p = self.ncols;
        let mut qty = y.to_vec();
        self.apply_qt(&mut qty);
        let mut coefs = vec![0.0; p];
        for i in (0..p).rev() {
            let mut s = qty[i];
            for k in (i + 1)..p {
                s -= self.r(i, k) * coefs[k];
            }
            coefs[i] = s / self.r(i, i);
        }
        let fitted = self.original.mul_vec(&coefs);
        let rss: f64 = y.iter().zip(&fitted).map(|(a, b)| (a - b).powi(2)).sum();
        let df = self.nrows - p;
        let sigma2 = rss / df as f64;
        let ses = (0..p)
            .map(|j| (sigma2 * self.xtx_inv[(j, j)]).sqrt())
            .collect();
        LinearFit {
            names: self.names.clone(),
            coefs,
            ses,
            sigma2,
            df,
            xtx_inv: self.xtx_inv.clone(),
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

fn norm2(x: &[f64]) -> f64 {
    // Scaled to avoid overflow on large scores.
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    scale * x.iter().map(|v| (v / scale).powi(2)).sum::<f64>().sqrt()
}

/// Ordinary least squares of `y` on `design`.
pub fn ols(design: &Design, y: &[f64]) -> Result<LinearFit> {
    Ok(QrFactor::new(design)?.fit(y))
}

/// Probit maximum-likelihood fit.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbitFit {
    pub names: Vec<String>,
    pub coefs: Vec<f64>,
    pub converged: bool,
    /// Some fitted probabilities sit at the numerical boundary, i.e. the data
    /// are (quasi-)separated and the likelihood has no finite maximiser.
    pub separated: bool,
    pub iterations: usize,
    pub loglik: f64,
}

/// Iteration cap for [`probit_fit`].
pub const PROBIT_MAX_ITER: usize = 100;
/// Relative log-likelihood change that counts as convergence.
pub const PROBIT_REL_TOL: f64 = 1e-10;

fn probit_terms(eta: f64, y: f64) -> (f64, f64, f64) {
    // Returns (loglik contribution, d loglik / d eta, Fisher weight).
    let e = eta.clamp(-PROBIT_ETA_BOUND, PROBIT_ETA_BOUND);
    let mu = norm_cdf(e);
    let one_minus = norm_cdf(-e);
    let dmu = norm_pdf(e).max(f64::EPSILON);
    let ll = if y > 0.5 { mu.ln() } else { one_minus.ln() };
    let var = mu * one_minus;
    ((ll), (y - mu) * dmu / var, dmu * dmu / var)
}

fn probit_loglik(design: &Design, y: &[f64], b: &[f64]) -> f64 {
    design
        .mul_vec(b)
        .iter()
        .zip(y)
        .map(|(&eta, &yi)| probit_terms(eta, yi).0)
        .sum()
}

/// Maximum-likelihood probit regression by Fisher scoring with step halving.
///
/// Separation is not an error: the fit stops once the log-likelihood stops
/// improving and is reported with `separated = true, converged = false`.
pub fn probit_fit(design: &Design, y: &[f64]) -> Result<ProbitFit> {
    probit_fit_from(design, y, None)
}

/// As [`probit_fit`], starting the iteration from `start` when given.
pub fn probit_fit_from(design: &Design, y: &[f64], start: Option<&[f64]>) -> Result<ProbitFit> {
    let n = design.nrows();
    let p = design.ncols();
    assert_eq!(y.len(), n, "response length");
    if n <= p {
        return Err(Error::Estimability(format!(
            "{n} rows are not enough for {p} probit coefficients"
        )));
    }
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Domain("probit response must be 0/1".into()));
    }
    let ones = y.iter().filter(|&&v| v == 1.0).count();
    if ones == 0 || ones == n {
        return Err(Error::SingleClass);
    }

    let mut b = match start {
        Some(s) => s.to_vec(),
        None => {
            let mut b = vec![0.0; p];
            if let Some(j) = design.index_of("(intercept)") {
                b[j] = norm_ppf(ones as f64 / n as f64);
            }
            b
        }
    };
    let mut ll = probit_loglik(design, y, &b);
    let mut converged = false;
    let mut iterations = 0;
    let mut info = DMatrix::<f64>::zeros(p, p);
    let mut score = nalgebra::DVector::<f64>::zeros(p);

    while iterations < PROBIT_MAX_ITER {
        iterations += 1;
        let eta = design.mul_vec(&b);
        info.fill(0.0);
        score.fill(0.0);
        let terms: Vec<(f64, f64)> = eta
            .iter()
            .zip(y)
            .map(|(&e, &yi)| {
                let (_, g, w) = probit_terms(e, yi);
                (g, w)
            })
            .collect();
        for j in 0..p {
            let xj = design.col(j);
            score[j] = xj.iter().zip(&terms).map(|(x, t)| x * t.0).sum();
            for k in 0..=j {
                let xk = design.col(k);
                let v: f64 = xj
                    .iter()
                    .zip(xk)
                    .zip(&terms)
                    .map(|((a, c), t)| a * c * t.1)
                    .sum();
                info[(j, k)] = v;
                info[(k, j)] = v;
            }
        }
        let step = match info.clone().cholesky() {
            Some(ch) => ch.solve(&score),
            None => {
                // Fall back to a ridge-stabilised solve.
                let ridge = 1e-10 * (0..p).map(|j| info[(j, j)]).fold(1e-300, f64::max);
                let reg = &info + DMatrix::<f64>::identity(p, p) * ridge;
                match reg.cholesky() {
                    Some(ch) => ch.solve(&score),
                    None => {
                        return Err(Error::Singular {
                            index: 0,
                            name: "probit information".into(),
                        })
                    }
                }
            }
        };
        let mut t = 1.0;
        let mut accepted = false;
        let mut new_b = b.clone();
        let mut new_ll = ll;
        for _ in 0..40 {
            for j in 0..p {
                new_b[j] = b[j] + t * step[j];
            }
            new_ll = probit_loglik(design, y, &new_b);
            if new_ll >= ll - 1e-12 * ll.abs() {
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            converged = true;
            break;
        }
        let change = (new_ll - ll).abs() / (ll.abs() + 0.1);
        b = new_b;
        ll = new_ll;
        if change < PROBIT_REL_TOL {
            converged = true;
            break;
        }
    }

    let separated = design
        .mul_vec(&b)
        .iter()
        .any(|e| e.abs() >= PROBIT_ETA_BOUND);
    Ok(ProbitFit {
        names: design.names().to_vec(),
        coefs: b,
        converged: converged && !separated,
        separated,
        iterations,
        loglik: ll,
    })
}

/// Fitted probabilities `Φ(X·b)`, kept strictly inside (0, 1).
pub fn predict_probit(fit: &ProbitFit, design: &Design) -> Result<Vec<f64>> {
    if design.ncols() != fit.coefs.len() {
        return Err(Error::Domain(format!(
            "design has {} columns, fit has {}",
            design.ncols(),
            fit.coefs.len()
        )));
    }
    Ok(design
        .mul_vec(&fit.coefs)
        .into_iter()
        .map(|e| norm_cdf(e.clamp(-PROBIT_ETA_BOUND, PROBIT_ETA_BOUND)))
        .collect())
}

/// Probit score vector at `b` (used by tests and diagnostics).
pub fn probit_score(design: &Design, y: &[f64], b: &[f64]) -> Vec<f64> {
    let eta = design.mul_vec(b);
    (0..design.ncols())
        .map(|j| {
            design
                .col(j)
                .iter()
                .zip(&eta)
                .zip(y)
                .map(|((x, &e), &yi)| x * probit_terms(e, yi).1)
                .sum()
        })
        .collect()
}

/// Probit log-likelihood at `b`.
pub fn probit_log_likelihood(design: &Design, y: &[f64], b: &[f64]) -> f64 {
    probit_loglik(design, y, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn exact_linear_fit() {
        let x: Vec<f64> = (0..6).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let d = Design::new(6).column("x", x);
        let f = ols(&d, &y).unwrap();
        assert_abs_diff_eq!(f.coefs[0], 2.0, epsilon = 1e-12);
        assert!(f.sigma2 < 1e-24);
    }

    #[test]
    fn intercept_only_is_mean() {
        let y = [1.0, 4.0, 2.0, 8.0, 5.0];
        let f = ols(&Design::with_intercept(5), &y).unwrap();
        let m = y.iter().sum::<f64>() / 5.0;
        let sd = (y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 4.0).sqrt();
        assert_abs_diff_eq!(f.coefs[0], m, epsilon = 1e-12);
        assert_abs_diff_eq!(f.ses[0], sd / 5f64.sqrt(), epsilon = 1e-12);
        assert_eq!(f.df, 4);
    }

    #[test]
    fn six_row_fixture_matches_normal_equations() {
        // Normal equations solved by hand: slope = Sxy/Sxx = 15.5/17.5,
        // intercept = ybar - slope * xbar.
        let x = vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
        let y = [1.0, 3.0, 2.0, 5.0, 4.0, 6.0];
        let f = ols(&Design::with_intercept(6).column("x", x), &y).unwrap();
        let slope = 15.5 / 17.5;
        assert_abs_diff_eq!(f.coefs[1], slope, epsilon = 1e-12);
        assert_abs_diff_eq!(f.coefs[0], 3.5 - slope * 2.5, epsilon = 1e-12);
        assert_abs_diff_eq!(f.coefs[0], 1.286, epsilon = 1e-3);
        assert_abs_diff_eq!(f.coefs[1], 0.886, epsilon = 1e-3);
    }

    #[test]
    fn singular_column_is_named() {
        let d = Design::with_intercept(5)
            .column("z", vec![0.0, 1.0, 0.0, 1.0, 1.0])
            .column("sym1", vec![0.0; 5]);
        match ols(&d, &[1.0, 2.0, 3.0, 4.0, 5.0]) {
            Err(Error::Singular { index, name }) => {
                assert_eq!(index, 2);
                assert_eq!(name, "sym1");
            }
            other => panic!("expected singular error, got {other:?}"),
        }
        let d = Design::with_intercept(4)
            .column("a", vec![1.0, 2.0, 3.0, 4.0])
            .column("b", vec![2.0, 4.0, 6.0, 8.0]);
        assert!(matches!(ols(&d, &[1.0; 4]), Err(Error::Singular { index: 2, .. })));
    }

    #[test]
    fn probit_intercept_only() {
        let y = [0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0];
        let f = probit_fit(&Design::with_intercept(8), &y).unwrap();
        assert!(f.converged);
        assert_abs_diff_eq!(f.coefs[0], -0.674_489_750_196_081_7, epsilon = 1e-8);
        let p = predict_probit(&f, &Design::with_intercept(3)).unwrap();
        for v in p {
            assert_abs_diff_eq!(v, 0.25, epsilon = 1e-8);
        }
    }

    #[test]
    fn probit_single_class_is_error() {
        let y = [0.0; 5];
        assert!(matches!(
            probit_fit(&Design::with_intercept(5), &y),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn probit_separation_flagged() {
        let x = vec![-2.0, -1.0, -0.5, 0.5, 1.0, 2.0];
        let y = [0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let f = probit_fit(&Design::with_intercept(6).column("x", x.clone()), &y).unwrap();
        assert!(f.separated);
        assert!(!f.converged);
        let p = predict_probit(&f, &Design::with_intercept(6).column("x", x)).unwrap();
        assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
        assert!(p[0] < 1e-6 && p[5] > 1.0 - 1e-6);
    }

    #[test]
    fn zero_coefficients_predict_half() {
        let f = ProbitFit {
            names: vec!["(intercept)".into(), "x".into()],
            coefs: vec![0.0, 0.0],
            converged: true,
            separated: false,
            iterations: 0,
            loglik: 0.0,
        };
        let d = Design::with_intercept(3).column("x", vec![-1.0, 0.0, 4.0]);
        assert!(predict_probit(&f, &d).unwrap().iter().all(|&p| p == 0.5));
        assert!(predict_probit(&f, &Design::with_intercept(3)).is_err());
    }
}
