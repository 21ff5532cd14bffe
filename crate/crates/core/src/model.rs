//! Edge distribution of the signed β-model.
//!
//! An ordered pair `(i, j)` carries `y = z⁺ − z⁻` with independent
//! `z⁺ ~ Bernoulli(σ(m))` and `z⁻ ~ Bernoulli(κ_i·(1 − σ(m)))`, where
//! `m = α_i + β_j`. Writing `s = σ(m)` and `t = 1 − s`:
//!
//! ```text
//! p(+1) = s·(1 − κt)      p(0) = t·(1 + κ(s − t))      p(−1) = κ·t²
//! ```
//!
//! Everything below is expressed through `s`, `t` and `softplus`, so
//! predictors of magnitude up to several hundred neither overflow nor lose
//! the small tail probabilities.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::RandomStream;

/// Observed sign of a directed edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sign {
    Negative,
    Zero,
    Positive,
}

impl Sign {
    pub const ALL: [Sign; 3] = [Sign::Negative, Sign::Zero, Sign::Positive];

    pub fn value(self) -> i8 {
        match self {
            Sign::Negative => -1,
            Sign::Zero => 0,
            Sign::Positive => 1,
        }
    }

    pub fn from_value(v: i8) -> Result<Self> {
        match v {
            -1 => Ok(Sign::Negative),
            0 => Ok(Sign::Zero),
            1 => Ok(Sign::Positive),
            other => Err(Error::domain(format!("edge sign must be -1, 0 or 1, got {other}"))),
        }
    }
}

/// `(σ(m), 1 − σ(m))` without overflow.
#[inline]
pub(crate) fn logistic_pair(m: f64) -> (f64, f64) {
    if m >= 0.0 {
        let e = (-m).exp();
        let d = 1.0 + e;
        (1.0 / d, e / d)
    } else {
        let e = m.exp();
        let d = 1.0 + e;
        (e / d, 1.0 / d)
    }
}

/// `log(1 + e^x)`.
#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn check_kappa_open(kappa: f64) -> Result<()> {
    if kappa > 0.0 && kappa < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("kappa must lie in (0,1), got {kappa}")))
    }
}

fn check_predictor(m: f64) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("linear predictor must be finite, got {m}")))
    }
}

#[inline]
pub(crate) fn pmf_parts(m: f64, kappa: f64) -> [f64; 3] {
    let (s, t) = logistic_pair(m);
    [kappa * t * t, t * (1.0 + kappa * (s - t)), s * (1.0 - kappa * t)]
}

/// Probability of outcome `y` given predictor `m = α_i + β_j` and sparsity `κ_i`.
pub fn edge_pmf(y: Sign, m: f64, kappa: f64) -> Result<f64> {
    check_kappa_open(kappa)?;
    check_predictor(m)?;
    let p = pmf_parts(m, kappa);
    Ok(match y {
        Sign::Negative => p[0],
        Sign::Zero => p[1],
        Sign::Positive => p[2],
    })
}

/// `E[y] = (e^m − κ)/(1 + e^m)`.
pub fn expected_edge(m: f64, kappa: f64) -> Result<f64> {
    check_kappa_open(kappa)?;
    check_predictor(m)?;
    let (s, t) = logistic_pair(m);
    Ok(s - kappa * t)
}

/// Log-likelihood of one edge and its first two derivatives in `m`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeLogLik {
    pub value: f64,
    pub first: f64,
    pub second: f64,
}

/// First and second derivative of `log p(y | m, κ)` in `m`.
#[inline]
pub(crate) fn score_and_curvature(y: i8, s: f64, t: f64, kappa: f64) -> (f64, f64) {
    let st = s * t;
    match y {
        1 => {
            let den = 1.0 - kappa * t;
            let q = s / den;
            let q_c = t * (1.0 - kappa) / den;
            ((t - s) + q, q * q_c - 2.0 * st)
        }
        0 => {
            let den = 1.0 + kappa * (s - t);
            let q = s * (1.0 + kappa) / den;
            let q_c = t * (1.0 - kappa) / den;
            (q - 2.0 * s, q * q_c - 2.0 * st)
        }
        _ => (-2.0 * s, -2.0 * st),
    }
}

#[inline]
pub(crate) fn log_prob(y: i8, m: f64, s: f64, t: f64, kappa: f64) -> f64 {
    match y {
        1 => -softplus(-m) + (-kappa * t).ln_1p(),
        0 => -softplus(m) + (kappa * (s - t)).ln_1p(),
        _ => kappa.ln() - 2.0 * softplus(m),
    }
}

/// `l = log p(y | m, κ)` with analytic `l′`, `l″`.
///
/// `κ = 0` is accepted (the unsigned logistic case); a negative edge then has
/// probability zero and is reported as [`Error::ZeroProbability`].
pub fn edge_loglik_derivs(m: f64, kappa: f64, y: Sign) -> Result<EdgeLogLik> {
    check_predictor(m)?;
    if !(0.0..1.0).contains(&kappa) {
        return Err(Error::domain(format!("kappa must lie in [0,1), got {kappa}")));
    }
    let yv = y.value();
    if yv == -1 && kappa == 0.0 {
        return Err(Error::ZeroProbability { y: yv, m, kappa });
    }
    let (s, t) = logistic_pair(m);
    let (first, second) = score_and_curvature(yv, s, t, kappa);
    let value = log_prob(yv, m, s, t, kappa);
    if value == f64::NEG_INFINITY {
        return Err(Error::ZeroProbability { y: yv, m, kappa });
    }
    Ok(EdgeLogLik { value, first, second })
}

/// Directed signed graph on `n` nodes, stored as positive and negative edge sets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SignedAdjacency {
    n: usize,
    pos: BTreeSet<(usize, usize)>,
    neg: BTreeSet<(usize, usize)>,
}

impl SignedAdjacency {
    pub fn new(n: usize) -> Self {
        Self { n, pos: BTreeSet::new(), neg: BTreeSet::new() }
    }

    pub fn from_edges<I>(n: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, Sign)>,
    {
        let mut g = Self::new(n);
        for (i, j, s) in edges {
            g.insert(i, j, s)?;
        }
        Ok(g)
    }

    /// Adds a signed edge. Inserting `Sign::Zero` is a no-op; an ordered
    /// pair that already carries a sign is rejected.
    pub fn insert(&mut self, i: usize, j: usize, sign: Sign) -> Result<()> {
        if i >= self.n || j >= self.n {
            return Err(Error::domain(format!("edge ({i},{j}) outside 0..{}", self.n)));
        }
        if i == j {
            return Err(Error::domain(format!("self loop at node {i}")));
        }
        if self.pos.contains(&(i, j)) || self.neg.contains(&(i, j)) {
            return Err(Error::domain(format!("edge ({i},{j}) already present")));
        }
        match sign {
            Sign::Positive => {
                self.pos.insert((i, j));
            }
            Sign::Negative => {
                self.neg.insert((i, j));
            }
            Sign::Zero => {}
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn positive_edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.pos
    }

    pub fn negative_edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.neg
    }

    pub fn sign(&self, i: usize, j: usize) -> Sign {
        if self.pos.contains(&(i, j)) {
            Sign::Positive
        } else if self.neg.contains(&(i, j)) {
            Sign::Negative
        } else {
            Sign::Zero
        }
    }

    /// All signed edges in `(src, dst)` order.
    pub fn edges(&self) -> Vec<(usize, usize, Sign)> {
        let mut all: Vec<_> = self
            .pos
            .iter()
            .map(|&(i, j)| (i, j, Sign::Positive))
            .chain(self.neg.iter().map(|&(i, j)| (i, j, Sign::Negative)))
            .collect();
        all.sort_unstable();
        all
    }

    /// Signed out-degrees `d_i = Σ_k y_ik`.
    pub fn out_degrees(&self) -> Vec<i64> {
        let mut d = vec![0i64; self.n];
        for &(i, _) in &self.pos {
            d[i] += 1;
        }
        for &(i, _) in &self.neg {
            d[i] -= 1;
        }
        d
    }

    /// Signed in-degrees `b_j = Σ_k y_kj`.
    pub fn in_degrees(&self) -> Vec<i64> {
        let mut b = vec![0i64; self.n];
        for &(_, j) in &self.pos {
            b[j] += 1;
        }
        for &(_, j) in &self.neg {
            b[j] -= 1;
        }
        b
    }

    /// Dense `n × n` sign matrix.
    pub fn to_matrix(&self) -> SignMatrix {
        let mut data = vec![0i8; self.n * self.n];
        for &(i, j) in &self.pos {
            data[i * self.n + j] = 1;
        }
        for &(i, j) in &self.neg {
            data[i * self.n + j] = -1;
        }
        SignMatrix { n: self.n, data }
    }

    /// Subgraph induced by `nodes`, relabelled `0..nodes.len()` in the given order.
    pub fn induced_subgraph(&self, nodes: &[usize]) -> Result<SignedAdjacency> {
        let mut index = vec![usize::MAX; self.n];
        for (new, &old) in nodes.iter().enumerate() {
            if old >= self.n {
                return Err(Error::domain(format!("node {old} outside 0..{}", self.n)));
            }
            if index[old] != usize::MAX {
                return Err(Error::domain(format!("node {old} listed twice")));
            }
            index[old] = new;
        }
        let mut sub = SignedAdjacency::new(nodes.len());
        for (i, j, s) in self.edges() {
            let (a, b) = (index[i], index[j]);
            if a != usize::MAX && b != usize::MAX {
                sub.insert(a, b, s)?;
            }
        }
        Ok(sub)
    }
}

/// Dense row-major sign matrix used by the estimation loops.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SignMatrix {
    n: usize,
    data: Vec<i8>,
}

impl SignMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> i8 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[i8] {
        &self.data[i * self.n..(i + 1) * self.n]
    }
}

/// Out-status `α` and in-status `β`, with `β[n−1]` pinned to zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    alpha: Vec<f64>,
    beta: Vec<f64>,
}

impl Theta {
    pub fn new(alpha: Vec<f64>, beta: Vec<f64>) -> Result<Self> {
        let n = alpha.len();
        if n < 2 || beta.len() != n {
            return Err(Error::Dimension(format!(
                "alpha has {n} entries and beta {}; need equal lengths >= 2",
                beta.len()
            )));
        }
        if beta[n - 1] != 0.0 {
            return Err(Error::domain(format!(
                "beta[{}] must be pinned to 0, got {}",
                n - 1,
                beta[n - 1]
            )));
        }
        if alpha.iter().chain(&beta).any(|v| !v.is_finite()) {
            return Err(Error::domain("status parameters must be finite"));
        }
        Ok(Self { alpha, beta })
    }

    pub fn zeros(n: usize) -> Self {
        Self { alpha: vec![0.0; n], beta: vec![0.0; n] }
    }

    /// Builds θ from the `2n − 1` free coordinates `(α_1..α_n, β_1..β_{n−1})`.
    pub fn from_free(n: usize, free: &[f64]) -> Result<Self> {
        if n < 2 || free.len() != 2 * n - 1 {
            return Err(Error::Dimension(format!(
                "expected {} free parameters for n={n}, got {}",
                (2 * n).saturating_sub(1),
                free.len()
            )));
        }
        let alpha = free[..n].to_vec();
        let mut beta = free[n..].to_vec();
        beta.push(0.0);
        Theta::new(alpha, beta)
    }

    pub fn n(&self) -> usize {
        self.alpha.len()
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    /// Length `n`, last entry is the pinned zero.
    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn free(&self) -> Vec<f64> {
        let n = self.n();
        self.alpha.iter().chain(&self.beta[..n - 1]).copied().collect()
    }

    #[inline]
    pub fn predictor(&self, i: usize, j: usize) -> f64 {
        self.alpha[i] + self.beta[j]
    }

    /// `‖θ − other‖∞` over the free coordinates.
    pub fn linf_distance(&self, other: &Theta) -> f64 {
        self.free()
            .iter()
            .zip(other.free())
            .fold(0.0, |acc, (a, b)| f64::max(acc, (a - b).abs()))
    }

    /// `‖θ − other‖²₂ / (2n − 1)`.
    pub fn mean_squared_distance(&self, other: &Theta) -> f64 {
        let a = self.free();
        let b = other.free();
        a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
    }
}

/// Per-node negative-edge sparsity values drawn from two levels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KappaVector {
    values: Vec<f64>,
    kappa00: f64,
    kappa01: f64,
}

impl KappaVector {
    /// Requires `0 < kappa00 <= kappa01 < 1` and every value equal to one of
    /// the two levels. Equal levels describe a single-class network.
    pub fn new(values: Vec<f64>, kappa00: f64, kappa01: f64) -> Result<Self> {
        if !(kappa00 > 0.0 && kappa00 <= kappa01 && kappa01 < 1.0) {
            return Err(Error::domain(format!(
                "need 0 < kappa00 <= kappa01 < 1, got {kappa00} and {kappa01}"
            )));
        }
        if let Some((i, v)) =
            values.iter().enumerate().find(|(_, &v)| v != kappa00 && v != kappa01)
        {
            return Err(Error::domain(format!(
                "kappa[{i}] = {v} is neither {kappa00} nor {kappa01}"
            )));
        }
        Ok(Self { values, kappa00, kappa01 })
    }

    pub fn constant(n: usize, kappa: f64) -> Result<Self> {
        Self::new(vec![kappa; n], kappa, kappa)
    }

    /// `kappa01` for nodes flagged in `high`, `kappa00` elsewhere.
    pub fn two_class(high: &[bool], kappa00: f64, kappa01: f64) -> Result<Self> {
        let values = high.iter().map(|&h| if h { kappa01 } else { kappa00 }).collect();
        Self::new(values, kappa00, kappa01)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn kappa00(&self) -> f64 {
        self.kappa00
    }

    pub fn kappa01(&self) -> f64 {
        self.kappa01
    }

    pub fn is_high(&self, i: usize) -> bool {
        self.values[i] == self.kappa01 && self.kappa01 != self.kappa00
    }
}

pub(crate) fn check_dims(n: usize, theta: &Theta, kappa: &KappaVector) -> Result<()> {
    if theta.n() != n || kappa.len() != n {
        return Err(Error::Dimension(format!(
            "graph has {n} nodes, theta {} and kappa {}",
            theta.n(),
            kappa.len()
        )));
    }
    Ok(())
}

/// `Σ_{i≠j} l_ij(α_i + β_j; κ_i)`.
pub fn network_loglik(graph: &SignedAdjacency, theta: &Theta, kappa: &KappaVector) -> Result<f64> {
    check_dims(graph.n(), theta, kappa)?;
    loglik_raw(&graph.to_matrix(), theta.alpha(), theta.beta(), kappa.values())
}

/// Log-likelihood for arbitrary `(α, β)` without the identifiability pin.
pub fn network_loglik_unpinned(
    graph: &SignedAdjacency,
    alpha: &[f64],
    beta: &[f64],
    kappa: &KappaVector,
) -> Result<f64> {
    let n = graph.n();
    if alpha.len() != n || beta.len() != n || kappa.len() != n {
        return Err(Error::Dimension("alpha, beta and kappa must have n entries".into()));
    }
    loglik_raw(&graph.to_matrix(), alpha, beta, kappa.values())
}

pub(crate) fn loglik_raw(y: &SignMatrix, alpha: &[f64], beta: &[f64], kappa: &[f64]) -> Result<f64> {
    let n = y.n();
    let mut total = 0.0;
    for i in 0..n {
        let row = y.row(i);
        let k = kappa[i];
        let mut acc = 0.0;
        for j in 0..n {
            if j == i {
                continue;
            }
            let m = alpha[i] + beta[j];
            let yv = row[j];
            if yv == -1 && k <= 0.0 {
                return Err(Error::ZeroProbability { y: -1, m, kappa: k });
            }
            let (s, t) = logistic_pair(m);
            acc += log_prob(yv, m, s, t, k);
        }
        total += acc;
    }
    if !total.is_finite() {
        return Err(Error::domain("log-likelihood is not finite"));
    }
    Ok(total)
}

/// Draws every off-diagonal `y_ij = z⁺_ij − z⁻_ij`, two uniforms per pair in
/// row-major order.
pub fn sample_network(theta: &Theta, kappa: &KappaVector, rng: &mut RandomStream) -> Result<SignedAdjacency> {
    let n = theta.n();
    if kappa.len() != n {
        return Err(Error::Dimension(format!("theta has {n} nodes, kappa {}", kappa.len())));
    }
    let mut g = SignedAdjacency::new(n);
    for i in 0..n {
        let k = kappa.values()[i];
        for j in 0..n {
            if i == j {
                continue;
            }
            let (s, t) = logistic_pair(theta.predictor(i, j));
            let plus = rng.uniform() < s;
            let minus = rng.uniform() < k * t;
            match (plus, minus) {
                (true, false) => {
                    g.pos.insert((i, j));
                }
                (false, true) => {
                    g.neg.insert((i, j));
                }
                _ => {}
            }
        }
    }
    Ok(g)
}
