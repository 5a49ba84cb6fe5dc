//! Reproducible random streams and the sampling laws used by the trial
//! simulator.
//!
//! Every stream is a ChaCha8 generator whose 256-bit key is derived from a
//! master seed and an integer path (for example `[scenario, trial, patient]`).
//! ChaCha is counter based, so a stream depends only on its key: results do
//! not change with the order in which entities are simulated or with the
//! number of worker threads.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::special::{norm_cdf, norm_ppf};

/// Default number of joint draws attempted before the truncated bivariate
/// sampler gives up.
pub const DEFAULT_REJECTION_BUDGET: u64 = 1_000_000;

/// Address of a random stream: a master seed plus a hierarchical path.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub master_seed: u64,
    pub path: Vec<u64>,
}

impl StreamKey {
    pub fn new(master_seed: u64, path: impl Into<Vec<u64>>) -> Self {
        Self {
            master_seed,
            path: path.into(),
        }
    }

    pub fn root(master_seed: u64) -> Self {
        Self::new(master_seed, Vec::new())
    }

    /// Key of a child stream one level deeper.
    pub fn child(&self, index: u64) -> Self {
        let mut path = Vec::with_capacity(self.path.len() + 1);
        path.extend_from_slice(&self.path);
        path.push(index);
        Self {
            master_seed: self.master_seed,
            path,
        }
    }

    fn seed_bytes(&self) -> [u8; 32] {
        // Four independent mixing lanes give a 256-bit key.
        const LANES: [u64; 4] = [
            0x9E37_79B9_7F4A_7C15,
            0xC2B2_AE3D_27D4_EB4F,
            0x1656_67B1_9E37_79F9,
            0xD6E8_FEB8_6659_FD93,
        ];
        let mut out = [0u8; 32];
        for (lane, &c) in LANES.iter().enumerate() {
            let mut h = splitmix(self.master_seed ^ c);
            for (i, &e) in self.path.iter().enumerate() {
                h = splitmix(h ^ splitmix(e.wrapping_add(c.wrapping_mul(i as u64 + 1))));
            }
            h = splitmix(h ^ (self.path.len() as u64).wrapping_mul(c));
            out[lane * 8..lane * 8 + 8].copy_from_slice(&h.to_le_bytes());
        }
        out
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A deterministic random stream.
#[derive(Debug, Clone)]
pub struct Stream(ChaCha8Rng);

/// Creates the stream addressed by `key`.
pub fn derive_stream(key: &StreamKey) -> Stream {
    Stream(ChaCha8Rng::from_seed(key.seed_bytes()))
}

impl Stream {
    /// Uniform draw on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.0.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.0)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.0.random_range(0..n)
    }
}

impl RngCore for Stream {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}

/// Bivariate normal law truncated on its first coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedBivariateNormalSpec {
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
    pub first_coord_bounds: (f64, f64),
    pub rejection_budget: u64,
}

impl TruncatedBivariateNormalSpec {
    pub fn new(mean: [f64; 2], cov: [[f64; 2]; 2], first_coord_bounds: (f64, f64)) -> Self {
        Self {
            mean,
            cov,
            first_coord_bounds,
            rejection_budget: DEFAULT_REJECTION_BUDGET,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [[a, b], [c, d]] = self.cov;
        if (b - c).abs() > 1e-12 * (b.abs() + c.abs()).max(1.0) {
            return Err(Error::Domain("covariance matrix is not symmetric".into()));
        }
        if !(a > 0.0 && a * d - b * c > 0.0) {
            return Err(Error::Domain("covariance matrix is not positive definite".into()));
        }
        let (lo, hi) = self.first_coord_bounds;
        if !(lo < hi) {
            return Err(Error::Domain(format!("empty truncation interval [{lo}, {hi}]")));
        }
        let sd = a.sqrt();
        let mass = norm_cdf((hi - self.mean[0]) / sd) - norm_cdf((lo - self.mean[0]) / sd);
        if !(mass > 0.0) {
            return Err(Error::Domain(format!(
                "truncation interval [{lo}, {hi}] has no Gaussian mass"
            )));
        }
        Ok(())
    }
}

/// Joint Gaussian draw, redrawn until the first coordinate lies inside the
/// bounds. The second coordinate is never restricted.
pub fn sample_truncated_bivariate_normal(
    spec: &TruncatedBivariateNormalSpec,
    stream: &mut Stream,
) -> Result<(f64, f64)> {
    let [[a, b], [_, d]] = spec.cov;
    let l11 = a.sqrt();
    let l21 = b / l11;
    let l22 = (d - l21 * l21).sqrt();
    let (lo, hi) = spec.first_coord_bounds;
    for _ in 0..spec.rejection_budget {
        let z1 = stream.standard_normal();
        let z2 = stream.standard_normal();
        let x = spec.mean[0] + l11 * z1;
        if x >= lo && x <= hi {
            return Ok((x, spec.mean[1] + l21 * z1 + l22 * z2));
        }
    }
    Err(Error::RejectionBudget {
        attempts: spec.rejection_budget,
    })
}

/// Beta draw parameterised by its mean and precision: `Beta(mean·τ, (1−mean)·τ)`.
pub fn sample_beta_mean_tau(mean: f64, tau: f64, stream: &mut Stream) -> Result<f64> {
    if !(mean > 0.0 && mean < 1.0) {
        return Err(Error::Domain(format!("beta mean {mean} outside (0, 1)")));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Domain(format!("beta precision {tau} must be positive")));
    }
    let beta = Beta::new(mean * tau, (1.0 - mean) * tau)
        .map_err(|e| Error::Domain(format!("beta parameters: {e}")))?;
    Ok(beta.sample(stream))
}

/// Normal draw conditioned on `[lo, hi]` by inversion of the truncated CDF.
/// A zero standard deviation (or a single-point interval) returns the
/// clamped mean.
pub fn sample_truncated_normal(
    mean: f64,
    sd: f64,
    lo: f64,
    hi: f64,
    stream: &mut Stream,
) -> Result<f64> {
    if !(lo <= hi) {
        return Err(Error::Domain(format!("empty truncation interval [{lo}, {hi}]")));
    }
    if !(sd >= 0.0) {
        return Err(Error::Domain(format!("negative standard deviation {sd}")));
    }
    // Consume one uniform regardless of the branch so stream layouts stay
    // aligned across scenarios.
    let u = stream.uniform();
    if sd == 0.0 || lo == hi {
        return Ok(mean.clamp(lo, hi));
    }
    let mut a = (lo - mean) / sd;
    let mut b = (hi - mean) / sd;
    // Work in the lower tail where the CDF has full relative precision.
    let flip = a > 0.0;
    if flip {
        (a, b) = (-b, -a);
    }
    let pa = norm_cdf(a);
    let pb = norm_cdf(b);
    if !(pb > pa) {
        return Err(Error::Domain(format!(
            "truncation interval [{lo}, {hi}] has negligible mass"
        )));
    }
    let z = norm_ppf(pa + u * (pb - pa)).clamp(a, b);
    let z = if flip { -z } else { z };
    Ok((mean + sd * z).clamp(lo, hi))
}
