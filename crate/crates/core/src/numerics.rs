//! Scalar and dense numerics shared by the rest of the crate: the standard
//! normal distribution, seedable random streams and a pivoted dense solver.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Standard normal CDF, `Φ(x) = erfc(-x/√2)/2`.
pub fn std_normal_cdf(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::domain(format!("normal cdf argument must be finite, got {x}")));
    }
    Ok(phi(x))
}

/// Upper tail `1 - Φ(x)`, evaluated without cancellation for large `x`.
pub fn std_normal_sf(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::domain(format!("normal tail argument must be finite, got {x}")));
    }
    Ok(0.5 * libm::erfc(x * FRAC_1_SQRT_2))
}

#[inline]
pub(crate) fn phi(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Two-sided normal tail probability `2[1 - Φ(|z|)]`.
#[inline]
pub(crate) fn two_sided_p(z: f64) -> f64 {
    libm::erfc(z.abs() * FRAC_1_SQRT_2).min(1.0)
}

// Acklam's rational approximation, relative error ~1.2e-9 before refinement.
const A: [f64; 6] = [
    -3.969683028665376e+01,
    2.209460984245205e+02,
    -2.759285104469687e+02,
    1.383577518672690e+02,
    -3.066479806614716e+01,
    2.506628277459239e+00,
];
const B: [f64; 5] = [
    -5.447609879822406e+01,
    1.615858368580409e+02,
    -1.556989798598866e+02,
    6.680131188771972e+01,
    -1.328068155288572e+01,
];
const C: [f64; 6] = [
    -7.784894002430293e-03,
    -3.223964580411365e-01,
    -2.400758277161838e+00,
    -2.549732539343734e+00,
    4.374664141464968e+00,
    2.938163982698783e+00,
];
const D: [f64; 4] = [
    7.784695709041462e-03,
    3.224671290700398e-01,
    2.445134137142996e+00,
    3.754408661907416e+00,
];
const P_LOW: f64 = 0.02425;

fn tail_approx(q: f64) -> f64 {
    (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
        / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
}

/// Standard normal quantile: rational initial guess followed by two Halley
/// corrections against [`std_normal_cdf`].
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("quantile probability must lie in (0,1), got {p}")));
    }
    let mut x = if p < P_LOW {
        tail_approx((-2.0 * p.ln()).sqrt())
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -tail_approx((-2.0 * (1.0 - p).ln()).sqrt())
    };
    for _ in 0..2 {
        // residual taken on the smaller tail to keep relative accuracy
        let e = if x > 0.0 {
            (1.0 - p) - 0.5 * libm::erfc(x * FRAC_1_SQRT_2)
        } else {
            phi(x) - p
        };
        let u = e * (2.0 * PI).sqrt() * (0.5 * x * x).exp();
        if !u.is_finite() {
            break;
        }
        x -= u / (1.0 + 0.5 * x * u);
    }
    Ok(x)
}

/// Counter-based random stream keyed by `(seed, stream_id)`.
///
/// Each stream id selects a distinct ChaCha stream under the same key, so
/// replication `k` draws the same numbers regardless of which worker runs it
/// or in what order.
#[derive(Clone, Debug)]
pub struct RandomStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RandomStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self { seed, stream_id, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Uniform draw on `[0, 1)` with 53 random bits.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn normal(&mut self, mean: f64, sd: f64) -> Result<f64> {
        let dist = Normal::new(mean, sd)
            .map_err(|e| Error::domain(format!("normal(mean={mean}, sd={sd}): {e}")))?;
        Ok(dist.sample(self))
    }

    /// Uniform index in `0..len` (`len > 0`).
    pub fn index(&mut self, len: usize) -> usize {
        debug_assert!(len > 0);
        let v = (self.uniform() * len as f64) as usize;
        v.min(len - 1)
    }
}

impl RngCore for RandomStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Square linear system `A x = b`, `A` stored row-major.
#[derive(Clone, Debug)]
pub struct DenseSystem {
    dim: usize,
    matrix: Vec<f64>,
    rhs: Vec<f64>,
}

impl DenseSystem {
    pub fn new(matrix: Vec<f64>, rhs: Vec<f64>) -> Result<Self> {
        let dim = rhs.len();
        if matrix.len() != dim * dim {
            return Err(Error::Dimension(format!(
                "matrix has {} entries, rhs length {dim} needs {}",
                matrix.len(),
                dim * dim
            )));
        }
        Ok(Self { dim, matrix, rhs })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    /// `‖A·x − b‖∞`.
    pub fn residual_inf(&self, x: &[f64]) -> f64 {
        self.matrix
            .chunks_exact(self.dim.max(1))
            .zip(&self.rhs)
            .map(|(row, b)| (row.iter().zip(x).map(|(a, x)| a * x).sum::<f64>() - b).abs())
            .fold(0.0, f64::max)
    }
}

pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// Solves the system by LU factorisation with partial pivoting.
///
/// A pivot smaller than `1e-12·‖A‖∞` is reported as
/// [`Error::SingularSystem`] with its elimination step.
pub fn solve_dense(system: DenseSystem) -> Result<Vec<f64>> {
    let DenseSystem { dim: n, mut matrix, mut rhs } = system;
    if n == 0 {
        return Ok(Vec::new());
    }
    let norm = matrix
        .chunks_exact(n)
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    if !norm.is_finite() {
        return Err(Error::domain("matrix contains non-finite entries"));
    }
    let threshold = 1e-12 * norm;

    for k in 0..n {
        let (piv_row, piv_abs) = (k..n)
            .map(|i| (i, matrix[i * n + k].abs()))
            .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if piv_abs <= threshold || piv_abs == 0.0 {
            return Err(Error::SingularSystem { index: k, magnitude: piv_abs });
        }
        if piv_row != k {
            for j in 0..n {
                matrix.swap(k * n + j, piv_row * n + j);
            }
            rhs.swap(k, piv_row);
        }
        let (head, tail) = matrix.split_at_mut((k + 1) * n);
        let pivot_row = &head[k * n..k * n + n];
        let pivot = pivot_row[k];
        let rhs_k = rhs[k];
        for (offset, row) in tail.chunks_exact_mut(n).enumerate() {
            let factor = row[k] / pivot;
            if factor == 0.0 {
                continue;
            }
            row[k] = factor;
            for (a, p) in row[k + 1..].iter_mut().zip(&pivot_row[k + 1..]) {
                *a -= factor * p;
            }
            rhs[k + 1 + offset] -= factor * rhs_k;
        }
    }

    for k in (0..n).rev() {
        let row = &matrix[k * n..k * n + n];
        let s: f64 = row[k + 1..].iter().zip(&rhs[k + 1..]).map(|(a, x)| a * x).sum();
        rhs[k] = (rhs[k] - s) / row[k];
    }
    Ok(rhs)
}
