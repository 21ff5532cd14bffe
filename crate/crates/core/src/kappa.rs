//! Negative-edge sparsity: two-class node split and profile likelihood for
//! the high level.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{fit_from, SolverConfig};
use crate::model::{network_loglik, KappaVector, SignedAdjacency, Theta};

/// How the class threshold `ξ` is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Threshold {
    /// Binomial upper-tail rule on the low level, see [`binomial_tail_threshold`].
    Auto,
    /// `c·√(log n / n)`.
    Scaled(f64),
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct KappaConfig {
    pub threshold: Threshold,
    /// Box half-width `γ`: `κ₀₁` is searched in `[γ, 1 − γ]`.
    pub gamma: f64,
    /// `‖θ₁‖∞ ≤ τ·log n₁` on the subnetwork.
    pub tau: f64,
    pub grid_size: usize,
    pub kappa00: f64,
    pub solver: SolverConfig,
}

impl KappaConfig {
    /// Low level `log n / n`, the usual choice for observed networks.
    pub fn for_data(n: usize) -> Self {
        Self { kappa00: (n as f64).ln() / n as f64, ..Self::default() }
    }
}

impl Default for KappaConfig {
    fn default() -> Self {
        Self {
            threshold: Threshold::Auto,
            gamma: 0.01,
            tau: 1.0,
            grid_size: 50,
            kappa00: 0.001,
            solver: SolverConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KappaEstimate {
    /// Nodes assigned the high level, ascending.
    pub class_high: Vec<usize>,
    pub kappa01_hat: f64,
    pub kappa00_value: f64,
    pub zeta: Vec<f64>,
    pub threshold_used: f64,
    /// `(κ, profiled log-likelihood)` for every grid point that solved.
    pub profile: Vec<(f64, f64)>,
}

impl KappaEstimate {
    pub fn kappa_vector(&self, n: usize) -> Result<KappaVector> {
        let mut high = vec![false; n];
        for &i in &self.class_high {
            high[i] = true;
        }
        KappaVector::two_class(&high, self.kappa00_value, self.kappa01_hat)
    }
}

/// Smallest `q` with `P(Bin(n − 1, κ₀₀) > q) ≤ 1/n`, returned as `ξ = (q + ½)/n`.
///
/// A low-class node then crosses the threshold with probability at most
/// `1/n`, whatever its status parameters.
pub fn binomial_tail_threshold(n: usize, kappa00: f64) -> Result<f64> {
    if n < 2 || !(kappa00 > 0.0 && kappa00 < 1.0) {
        return Err(Error::domain(format!("need n >= 2 and kappa00 in (0,1), got {n}, {kappa00}")));
    }
    let trials = (n - 1) as f64;
    let target = 1.0 / n as f64;
    let log_p = kappa00.ln();
    let log_q = (-kappa00).ln_1p();
    let mut log_pmf = trials * log_q;
    let mut cdf = log_pmf.exp();
    let mut q = 0usize;
    while 1.0 - cdf > target && q + 1 < n {
        let k = q as f64;
        log_pmf += ((trials - k) / (k + 1.0)).ln() + log_p - log_q;
        cdf += log_pmf.exp();
        q += 1;
    }
    Ok((q as f64 + 0.5) / n as f64)
}

pub fn resolve_threshold(threshold: Threshold, n: usize, kappa00: f64) -> Result<f64> {
    let xi = match threshold {
        Threshold::Auto => binomial_tail_threshold(n, kappa00)?,
        Threshold::Scaled(c) => c * ((n as f64).ln() / n as f64).sqrt(),
        Threshold::Fixed(x) => x,
    };
    if !(xi > 0.0 && xi < 1.0) {
        return Err(Error::domain(format!("class threshold must lie in (0,1), got {xi}")));
    }
    Ok(xi)
}

/// `ζ_i = #{k : y_ik = −1} / n` and the nodes with `ζ_i > ξ`.
pub fn classify_negative_senders(graph: &SignedAdjacency, xi: f64) -> Result<(Vec<usize>, Vec<f64>)> {
    if !(xi > 0.0 && xi < 1.0) {
        return Err(Error::domain(format!("threshold must lie in (0,1), got {xi}")));
    }
    let n = graph.n();
    let mut counts = vec![0usize; n];
    for &(i, _) in graph.negative_edges() {
        counts[i] += 1;
    }
    let zeta: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    let high = (0..n).filter(|&i| zeta[i] > xi).collect();
    Ok((high, zeta))
}

/// Fits `θ` at a common `κ`, clips to the box and returns the log-likelihood.
///
/// `start` is used as the Newton starting point and replaced by the
/// unclipped initial estimate on success.
pub fn profile_loglik(
    graph: &SignedAdjacency,
    kappa: f64,
    tau: f64,
    solver: &SolverConfig,
    start: &mut Theta,
) -> Result<f64> {
    let n = graph.n();
    let kv = KappaVector::constant(n, kappa)?;
    let fit = fit_from(graph, &kv, solver, start)?;
    let bound = tau * (n as f64).ln();
    let clipped: Vec<f64> = fit.theta_hat.free().iter().map(|v| v.clamp(-bound, bound)).collect();
    let value = network_loglik(graph, &Theta::from_free(n, &clipped)?, &kv)?;
    *start = fit.theta_check;
    Ok(value)
}

const GOLDEN: f64 = 0.618_033_988_749_894_8;

/// Restricted maximum likelihood for the high level on the subnetwork
/// induced by `high_set`.
pub fn estimate_kappa01(
    graph: &SignedAdjacency,
    high_set: &[usize],
    bounds: (f64, f64),
    tau: f64,
    config: &KappaConfig,
) -> Result<KappaEstimate> {
    let (lo, hi) = bounds;
    if !(lo > 0.0 && lo < hi && hi < 1.0) {
        return Err(Error::domain(format!("invalid kappa bounds [{lo}, {hi}]")));
    }
    if tau <= 0.0 || config.grid_size < 2 {
        return Err(Error::domain("tau must be positive and the grid needs at least 2 points"));
    }
    let mut nodes = high_set.to_vec();
    nodes.sort_unstable();
    nodes.dedup();
    if nodes.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "high-sparsity class has {} nodes, need at least 3",
            nodes.len()
        )));
    }
    let sub = graph.induced_subgraph(&nodes)?;
    let n1 = sub.n();

    let spacing = (hi - lo) / (config.grid_size - 1) as f64;
    let mut start = Theta::zeros(n1);
    let mut profile = Vec::with_capacity(config.grid_size);
    let mut best: Option<(f64, f64, Theta)> = None;
    for g in 0..config.grid_size {
        let kappa = if g + 1 == config.grid_size { hi } else { lo + spacing * g as f64 };
        let mut warm = start.clone();
        match profile_loglik(&sub, kappa, tau, &config.solver, &mut warm) {
            Ok(value) => {
                profile.push((kappa, value));
                if best.as_ref().is_none_or(|b| value > b.1) {
                    best = Some((kappa, value, warm.clone()));
                }
                start = warm;
            }
            Err(e) => warn!("kappa grid point {kappa:.4} skipped: {e}"),
        }
    }
    let Some((grid_kappa, grid_value, grid_theta)) = best else {
        return Err(Error::InsufficientData("no kappa grid point could be fitted".into()));
    };

    let mut a = (grid_kappa - spacing).max(lo);
    let mut b = (grid_kappa + spacing).min(hi);
    let eval = |k: f64| {
        let mut warm = grid_theta.clone();
        profile_loglik(&sub, k, tau, &config.solver, &mut warm).unwrap_or(f64::NEG_INFINITY)
    };
    let mut x1 = b - GOLDEN * (b - a);
    let mut x2 = a + GOLDEN * (b - a);
    let mut f1 = eval(x1);
    let mut f2 = eval(x2);
    while b - a > 1e-4 {
        if f1 >= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - GOLDEN * (b - a);
            f1 = eval(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + GOLDEN * (b - a);
            f2 = eval(x2);
        }
    }
    let (refined, refined_value) = if f1 >= f2 { (x1, f1) } else { (x2, f2) };
    let kappa01_hat = if refined_value > grid_value { refined } else { grid_kappa };

    Ok(KappaEstimate {
        class_high: nodes,
        kappa01_hat,
        kappa00_value: config.kappa00,
        zeta: Vec::new(),
        threshold_used: f64::NAN,
        profile,
    })
}

/// Classification followed by the restricted likelihood on the high class.
pub fn estimate_kappa(graph: &SignedAdjacency, config: &KappaConfig) -> Result<KappaEstimate> {
    let n = graph.n();
    let xi = resolve_threshold(config.threshold, n, config.kappa00)?;
    let (high, zeta) = classify_negative_senders(graph, xi)?;
    let mut est = estimate_kappa01(graph, &high, (config.gamma, 1.0 - config.gamma), config.tau, config)?;
    if est.kappa01_hat < config.kappa00 {
        return Err(Error::domain(format!(
            "estimated high level {} is below the low level {}",
            est.kappa01_hat, config.kappa00
        )));
    }
    est.zeta = zeta;
    est.threshold_used = xi;
    Ok(est)
}
