//! Estimating equations, damped Newton solve and the one-step refinement.
//!
//! Free coordinates are ordered `(α_0..α_{n−1}, β_0..β_{n−2})`; `β_{n−1}` is
//! pinned at zero and its equation is the one dropped from the system.

use crate::error::{Error, Result};
use crate::model::{
    check_dims, logistic_pair, pmf_parts, score_and_curvature, KappaVector, SignMatrix,
    SignedAdjacency, Theta,
};
use crate::numerics::{inf_norm, solve_dense, DenseSystem};

/// Newton controls and the degree screen applied before solving.
#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub max_halvings: usize,
    /// Nodes with signed out- or in-degree `<= -(n - negative_gap)` are rejected.
    pub negative_gap: usize,
    /// Also reject degrees outside the range the expected degree can reach.
    pub moment_screen: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { tolerance: 1e-8, max_iterations: 200, max_halvings: 30, negative_gap: 2, moment_screen: true }
    }
}

/// Residual `F(θ; κ)` with its Jacobian kept in block form.
///
/// The Jacobian is `−[[D_α, C], [Cᵀ, D_β]]` with positive diagonals
/// `D_α`, `D_β` and `C[i][j] = (1 + κ_i)·s·t` at `m = α_i + β_j`, `j ≠ i`.
#[derive(Clone, Debug)]
pub struct EstimatingSystem {
    n: usize,
    residual: Vec<f64>,
    alpha_diag: Vec<f64>,
    beta_diag: Vec<f64>,
    cross: Vec<f64>,
}

impl EstimatingSystem {
    pub fn n(&self) -> usize {
        self.n
    }

    /// `F_0..F_{2n−2}`.
    pub fn residual(&self) -> &[f64] {
        &self.residual
    }

    pub fn residual_inf_norm(&self) -> f64 {
        inf_norm(&self.residual)
    }

    /// Row-major dense `(2n−1) × (2n−1)` Jacobian.
    pub fn jacobian(&self) -> Vec<f64> {
        let n = self.n;
        let m = n - 1;
        let dim = n + m;
        let mut jac = vec![0.0; dim * dim];
        for i in 0..n {
            jac[i * dim + i] = -self.alpha_diag[i];
            for j in 0..m {
                let c = self.cross[i * m + j];
                jac[i * dim + n + j] = -c;
                jac[(n + j) * dim + i] = -c;
            }
        }
        for j in 0..m {
            jac[(n + j) * dim + n + j] = -self.beta_diag[j];
        }
        jac
    }

    /// Smallest `|J_rr| − Σ_{c≠r} |J_rc|` over all rows.
    pub fn dominance_margin(&self) -> f64 {
        let n = self.n;
        let m = n - 1;
        let mut col = vec![0.0; m];
        let mut margin = f64::INFINITY;
        for i in 0..n {
            let row = &self.cross[i * m..(i + 1) * m];
            margin = margin.min(self.alpha_diag[i] - row.iter().sum::<f64>());
            for (acc, c) in col.iter_mut().zip(row) {
                *acc += c;
            }
        }
        for j in 0..m {
            margin = margin.min(self.beta_diag[j] - col[j]);
        }
        margin
    }

    /// Solves `J·Δ = −F`.
    ///
    /// The diagonal α-block is eliminated first and the remaining
    /// `(n−1) × (n−1)` Schur complement goes through [`solve_dense`].
    pub fn newton_direction(&self) -> Result<Vec<f64>> {
        let n = self.n;
        let m = n - 1;
        let (ra, rb) = self.residual.split_at(n);
        let mut schur = vec![0.0; m * m];
        let mut rhs = rb.to_vec();
        for i in 0..n {
            let ci = &self.cross[i * m..(i + 1) * m];
            let inv = 1.0 / self.alpha_diag[i];
            let scaled_r = ra[i] * inv;
            for (r, c) in rhs.iter_mut().zip(ci) {
                *r -= c * scaled_r;
            }
            for j in 0..m {
                let f = ci[j] * inv;
                if f == 0.0 {
                    continue;
                }
                let row = &mut schur[j * m + j..(j + 1) * m];
                for (s, c) in row.iter_mut().zip(&ci[j..]) {
                    *s -= f * c;
                }
            }
        }
        for j in 0..m {
            schur[j * m + j] += self.beta_diag[j];
            for k in j + 1..m {
                schur[k * m + j] = schur[j * m + k];
            }
        }
        let xb = solve_dense(DenseSystem::new(schur, rhs)?).map_err(|e| match e {
            Error::SingularSystem { index, magnitude } => {
                Error::SingularSystem { index: n + index, magnitude }
            }
            other => other,
        })?;
        let mut x = Vec::with_capacity(n + m);
        for i in 0..n {
            let ci = &self.cross[i * m..(i + 1) * m];
            let dot: f64 = ci.iter().zip(&xb).map(|(c, x)| c * x).sum();
            x.push((ra[i] - dot) / self.alpha_diag[i]);
        }
        x.extend(xb);
        Ok(x)
    }
}

fn signed_degrees(y: &SignMatrix) -> (Vec<f64>, Vec<f64>) {
    let n = y.n();
    let mut d = vec![0.0; n];
    let mut b = vec![0.0; n];
    for i in 0..n {
        for (j, &v) in y.row(i).iter().enumerate() {
            d[i] += v as f64;
            b[j] += v as f64;
        }
    }
    (d, b)
}

struct Problem<'a> {
    y: &'a SignMatrix,
    kappa: &'a [f64],
    out_deg: Vec<f64>,
    in_deg: Vec<f64>,
}

impl<'a> Problem<'a> {
    fn new(y: &'a SignMatrix, kappa: &'a [f64]) -> Self {
        let (out_deg, in_deg) = signed_degrees(y);
        Self { y, kappa, out_deg, in_deg }
    }

    fn n(&self) -> usize {
        self.y.n()
    }

    fn system(&self, alpha: &[f64], beta: &[f64]) -> EstimatingSystem {
        let n = self.n();
        let m = n - 1;
        let mut row_mean = vec![0.0; n];
        let mut col_mean = vec![0.0; n];
        let mut alpha_diag = vec![0.0; n];
        let mut beta_diag = vec![0.0; m];
        let mut cross = vec![0.0; n * m];
        for i in 0..n {
            let k = self.kappa[i];
            let a = alpha[i];
            let cross_row = &mut cross[i * m..(i + 1) * m];
            for j in 0..n {
                if j == i {
                    continue;
                }
                let (s, t) = logistic_pair(a + beta[j]);
                let e = s - k * t;
                let w = (1.0 + k) * s * t;
                row_mean[i] += e;
                col_mean[j] += e;
                alpha_diag[i] += w;
                if j < m {
                    beta_diag[j] += w;
                    cross_row[j] = w;
                }
            }
        }
        let mut residual = Vec::with_capacity(n + m);
        residual.extend((0..n).map(|i| self.out_deg[i] - row_mean[i]));
        residual.extend((0..m).map(|j| self.in_deg[j] - col_mean[j]));
        EstimatingSystem { n, residual, alpha_diag, beta_diag, cross }
    }

    fn screen(&self, config: &SolverConfig) -> Result<()> {
        let n = self.n();
        let nf = (n - 1) as f64;
        let floor = -(n as f64 - config.negative_gap as f64);
        let kappa_total: f64 = self.kappa.iter().sum();
        let mut bad = Vec::new();
        for i in 0..n {
            let (d, b) = (self.out_deg[i], self.in_deg[i]);
            let mut flagged = d <= floor || b <= floor;
            let all_neg_out = (0..n).all(|k| k == i || self.y.get(i, k) == -1);
            let all_neg_in = (0..n).all(|k| k == i || self.y.get(k, i) == -1);
            flagged |= all_neg_out || all_neg_in;
            if config.moment_screen {
                flagged |= d >= nf || d <= -self.kappa[i] * nf;
                flagged |= b >= nf || b <= -(kappa_total - self.kappa[i]);
            }
            if flagged {
                bad.push(i);
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Degenerate { nodes: bad })
        }
    }

    fn newton(&self, start: &[f64], config: &SolverConfig) -> Result<NewtonReport> {
        let n = self.n();
        let mut free = start.to_vec();
        let mut beta = vec![0.0; n];
        let split = |free: &[f64], beta: &mut Vec<f64>| {
            beta[..n - 1].copy_from_slice(&free[n..]);
        };
        split(&free, &mut beta);
        let mut sys = self.system(&free[..n], &beta);
        let mut norm = sys.residual_inf_norm();
        let mut iterations = 0;
        while norm > config.tolerance {
            if iterations == config.max_iterations {
                return Err(Error::NonConvergence { iterations, residual: norm });
            }
            let dir = sys.newton_direction()?;
            let mut step = 1.0;
            let mut accepted = None;
            for _ in 0..=config.max_halvings {
                let cand: Vec<f64> = free.iter().zip(&dir).map(|(x, d)| x + step * d).collect();
                if cand.iter().all(|v| v.is_finite()) {
                    split(&cand, &mut beta);
                    let cand_sys = self.system(&cand[..n], &beta);
                    let cand_norm = cand_sys.residual_inf_norm();
                    if cand_norm < norm {
                        accepted = Some((cand, cand_sys, cand_norm));
                        break;
                    }
                }
                step *= 0.5;
            }
            let Some((cand, cand_sys, cand_norm)) = accepted else {
                return Err(Error::NonConvergence { iterations, residual: norm });
            };
            free = cand;
            sys = cand_sys;
            norm = cand_norm;
            iterations += 1;
        }
        Ok(NewtonReport { theta: Theta::from_free(n, &free)?, iterations, residual_inf_norm: norm })
    }
}

fn check_graph(graph: &SignedAdjacency, kappa: &KappaVector) -> Result<()> {
    if graph.n() < 2 {
        return Err(Error::InsufficientData(format!("need at least 2 nodes, got {}", graph.n())));
    }
    if kappa.len() != graph.n() {
        return Err(Error::Dimension(format!(
            "graph has {} nodes, kappa {}",
            graph.n(),
            kappa.len()
        )));
    }
    Ok(())
}

/// `F(θ; κ)` and its Jacobian at `theta`.
pub fn estimating_equations(
    graph: &SignedAdjacency,
    theta: &Theta,
    kappa: &KappaVector,
) -> Result<EstimatingSystem> {
    check_dims(graph.n(), theta, kappa)?;
    let y = graph.to_matrix();
    Ok(Problem::new(&y, kappa.values()).system(theta.alpha(), theta.beta()))
}

/// Outcome of the Newton phase.
#[derive(Clone, Debug, PartialEq)]
pub struct NewtonReport {
    pub theta: Theta,
    pub iterations: usize,
    pub residual_inf_norm: f64,
}

/// Root of the estimating equations, started from `θ = 0`.
pub fn newton_solve(graph: &SignedAdjacency, kappa: &KappaVector, config: &SolverConfig) -> Result<Theta> {
    check_graph(graph, kappa)?;
    newton_solve_from(graph, kappa, config, &Theta::zeros(graph.n())).map(|r| r.theta)
}

/// Newton solve from an arbitrary starting point.
pub fn newton_solve_from(
    graph: &SignedAdjacency,
    kappa: &KappaVector,
    config: &SolverConfig,
    start: &Theta,
) -> Result<NewtonReport> {
    check_graph(graph, kappa)?;
    check_dims(graph.n(), start, kappa)?;
    let y = graph.to_matrix();
    let problem = Problem::new(&y, kappa.values());
    problem.screen(config)?;
    problem.newton(&start.free(), config)
}

/// Observed curvatures `u` of length `2n`; the last entry belongs to `β_{n−1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct CurvatureVector {
    values: Vec<f64>,
}

impl CurvatureVector {
    /// Builds from the `2n − 1` free entries and appends the derived last one.
    pub fn from_free(n: usize, free: Vec<f64>) -> Result<Self> {
        if n < 2 || free.len() != 2 * n - 1 {
            return Err(Error::Dimension(format!(
                "expected {} curvatures, got {}",
                (2 * n).saturating_sub(1),
                free.len()
            )));
        }
        let mut values = free;
        let last = values[..n].iter().sum::<f64>() - values[n..].iter().sum::<f64>();
        values.push(last);
        Ok(Self { values })
    }

    /// Takes all `2n` entries as given (used when reloading saved fits).
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.len() < 4 || values.len() % 2 != 0 {
            return Err(Error::Dimension(format!("curvature vector length {}", values.len())));
        }
        Ok(Self { values })
    }

    pub fn n(&self) -> usize {
        self.values.len() / 2
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, index: usize) -> f64 {
        self.values[index]
    }

    /// Entry for the pinned reference `β_{n−1}`.
    pub fn reference(&self) -> f64 {
        self.values[self.values.len() - 1]
    }
}

/// Column and row sums of `l′` and `−l″` over all ordered pairs.
struct DerivativeSums {
    grad_alpha: Vec<f64>,
    grad_beta: Vec<f64>,
    curv_alpha: Vec<f64>,
    curv_beta: Vec<f64>,
}

fn derivative_sums(y: &SignMatrix, alpha: &[f64], beta: &[f64], kappa: &[f64]) -> Result<DerivativeSums> {
    let n = y.n();
    let mut out = DerivativeSums {
        grad_alpha: vec![0.0; n],
        grad_beta: vec![0.0; n],
        curv_alpha: vec![0.0; n],
        curv_beta: vec![0.0; n],
    };
    for i in 0..n {
        let k = kappa[i];
        let row = y.row(i);
        for j in 0..n {
            if j == i {
                continue;
            }
            let m = alpha[i] + beta[j];
            if row[j] == -1 && k <= 0.0 {
                return Err(Error::ZeroProbability { y: -1, m, kappa: k });
            }
            let (s, t) = logistic_pair(m);
            let (l1, l2) = score_and_curvature(row[j], s, t, k);
            out.grad_alpha[i] += l1;
            out.grad_beta[j] += l1;
            out.curv_alpha[i] -= l2;
            out.curv_beta[j] -= l2;
        }
    }
    Ok(out)
}

fn curvatures_from_sums(n: usize, sums: &DerivativeSums) -> Result<CurvatureVector> {
    let free: Vec<f64> = sums.curv_alpha.iter().chain(&sums.curv_beta[..n - 1]).copied().collect();
    CurvatureVector::from_free(n, free)
}

/// `u_i = −Σ_k l″_ik`, `u_{n+j} = −Σ_k l″_kj` and the derived reference entry.
pub fn observed_curvatures(
    graph: &SignedAdjacency,
    theta: &Theta,
    kappa: &KappaVector,
) -> Result<CurvatureVector> {
    check_dims(graph.n(), theta, kappa)?;
    let sums = derivative_sums(&graph.to_matrix(), theta.alpha(), theta.beta(), kappa.values())?;
    curvatures_from_sums(graph.n(), &sums)
}

/// Score vector over the free coordinates.
pub fn gradient(graph: &SignedAdjacency, theta: &Theta, kappa: &KappaVector) -> Result<Vec<f64>> {
    check_dims(graph.n(), theta, kappa)?;
    let n = graph.n();
    let sums = derivative_sums(&graph.to_matrix(), theta.alpha(), theta.beta(), kappa.values())?;
    Ok(sums.grad_alpha.iter().chain(&sums.grad_beta[..n - 1]).copied().collect())
}

/// Approximate inverse information: diagonal `1/u` plus `±1/u_ref` on each block.
#[derive(Clone, Debug, PartialEq)]
pub struct HMatrix {
    n: usize,
    diag_inverse_u: Vec<f64>,
    u2n_inverse: f64,
}

/// Rejects any non-positive curvature.
pub fn build_h_matrix(u: &CurvatureVector) -> Result<HMatrix> {
    if let Some((index, &value)) = u.values().iter().enumerate().find(|(_, &v)| !(v > 0.0 && v.is_finite())) {
        return Err(Error::Curvature { index, value });
    }
    let n = u.n();
    Ok(HMatrix {
        n,
        diag_inverse_u: u.values()[..2 * n - 1].iter().map(|v| 1.0 / v).collect(),
        u2n_inverse: 1.0 / u.reference(),
    })
}

impl HMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn diag_inverse_u(&self) -> &[f64] {
        &self.diag_inverse_u
    }

    pub fn u2n_inverse(&self) -> f64 {
        self.u2n_inverse
    }

    /// `Ĥ·x` in `O(n)`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        if x.len() != 2 * n - 1 {
            return Err(Error::Dimension(format!("expected length {}, got {}", 2 * n - 1, x.len())));
        }
        let shift = (x[..n].iter().sum::<f64>() - x[n..].iter().sum::<f64>()) * self.u2n_inverse;
        Ok(x.iter()
            .zip(&self.diag_inverse_u)
            .enumerate()
            .map(|(r, (v, d))| v * d + if r < n { shift } else { -shift })
            .collect())
    }

    /// Single entry `Ĥ[r][c]`.
    pub fn entry(&self, r: usize, c: usize) -> f64 {
        let same_block = (r < self.n) == (c < self.n);
        let base = if same_block { self.u2n_inverse } else { -self.u2n_inverse };
        if r == c {
            base + self.diag_inverse_u[r]
        } else {
            base
        }
    }
}

fn one_step_raw(y: &SignMatrix, theta: &Theta, kappa: &[f64]) -> Result<(Theta, CurvatureVector)> {
    let n = y.n();
    let sums = derivative_sums(y, theta.alpha(), theta.beta(), kappa)?;
    let u = curvatures_from_sums(n, &sums)?;
    let h = build_h_matrix(&u)?;
    let grad: Vec<f64> = sums.grad_alpha.iter().chain(&sums.grad_beta[..n - 1]).copied().collect();
    let step = h.apply(&grad)?;
    let free: Vec<f64> = theta.free().iter().zip(&step).map(|(a, b)| a + b).collect();
    Ok((Theta::from_free(n, &free)?, u))
}

/// `θ̂ = θ̌ + Ĥ·∇l(θ̌; κ)`.
pub fn one_step(graph: &SignedAdjacency, theta_check: &Theta, kappa: &KappaVector) -> Result<Theta> {
    check_dims(graph.n(), theta_check, kappa)?;
    one_step_raw(&graph.to_matrix(), theta_check, kappa.values()).map(|(t, _)| t)
}

/// Both estimates with their curvatures.
#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub theta_check: Theta,
    pub theta_hat: Theta,
    /// Curvatures at `θ̌`.
    pub u_check: CurvatureVector,
    /// Curvatures at `θ̂`.
    pub u_hat: CurvatureVector,
    pub kappa: KappaVector,
    pub newton_iterations: usize,
    pub final_residual_inf_norm: f64,
}

impl FitResult {
    pub fn n(&self) -> usize {
        self.theta_hat.n()
    }
}

/// Newton from zero, one-step update, curvatures at both points.
pub fn fit(graph: &SignedAdjacency, kappa: &KappaVector, config: &SolverConfig) -> Result<FitResult> {
    check_graph(graph, kappa)?;
    fit_from(graph, kappa, config, &Theta::zeros(graph.n()))
}

/// As [`fit`] with a chosen Newton starting point.
pub fn fit_from(
    graph: &SignedAdjacency,
    kappa: &KappaVector,
    config: &SolverConfig,
    start: &Theta,
) -> Result<FitResult> {
    check_graph(graph, kappa)?;
    check_dims(graph.n(), start, kappa)?;
    let y = graph.to_matrix();
    let problem = Problem::new(&y, kappa.values());
    problem.screen(config)?;
    let report = problem.newton(&start.free(), config)?;
    let (theta_hat, u_check) = one_step_raw(&y, &report.theta, kappa.values())?;
    let sums = derivative_sums(&y, theta_hat.alpha(), theta_hat.beta(), kappa.values())?;
    let u_hat = curvatures_from_sums(graph.n(), &sums)?;
    Ok(FitResult {
        theta_check: report.theta,
        theta_hat,
        u_check,
        u_hat,
        kappa: kappa.clone(),
        newton_iterations: report.iterations,
        final_residual_inf_norm: report.residual_inf_norm,
    })
}

/// Expected curvature `u`, derivative scale `v` and outcome variance `w`,
/// each of length `2n` (last entry from column `n − 1`).
#[derive(Clone, Debug, PartialEq)]
pub struct PopulationQuantities {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub w: Vec<f64>,
}

impl PopulationQuantities {
    fn last(&self) -> usize {
        self.u.len() - 1
    }

    /// Asymptotic variance of `θ̌_index` (free index), `w/v²` plus the reference term.
    pub fn avar_check(&self, index: usize) -> f64 {
        let r = self.last();
        self.w[index] / (self.v[index] * self.v[index]) + self.w[r] / (self.v[r] * self.v[r])
    }

    /// Asymptotic variance of `θ̂_index`, `1/u` plus the reference term.
    pub fn avar_hat(&self, index: usize) -> f64 {
        1.0 / self.u[index] + 1.0 / self.u[self.last()]
    }
}

/// Exact population `u`, `v`, `w` at `(θ*, κ)`.
pub fn population_quantities(theta: &Theta, kappa: &KappaVector) -> Result<PopulationQuantities> {
    let n = theta.n();
    if kappa.len() != n {
        return Err(Error::Dimension(format!("theta has {n} nodes, kappa {}", kappa.len())));
    }
    let mut row = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut col = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for i in 0..n {
        let k = kappa.values()[i];
        for j in 0..n {
            if i == j {
                continue;
            }
            let m = theta.predictor(i, j);
            let (s, t) = logistic_pair(m);
            let p = pmf_parts(m, k);
            let mut u = 0.0;
            for (prob, y) in p.iter().zip([-1i8, 0, 1]) {
                u -= prob * score_and_curvature(y, s, t, k).1;
            }
            let v = (1.0 + k) * s * t;
            let mean = p[2] - p[0];
            let w = p[2] + p[0] - mean * mean;
            for (q, val) in [u, v, w].into_iter().enumerate() {
                row[q][i] += val;
                col[q][j] += val;
            }
        }
    }
    let assemble = |q: usize| -> Vec<f64> {
        let mut out = row[q].clone();
        out.extend_from_slice(&col[q]);
        out
    };
    Ok(PopulationQuantities { u: assemble(0), v: assemble(1), w: assemble(2) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{network_loglik, sample_network, Sign};
    use crate::numerics::RandomStream;

    fn random_theta(n: usize, rng: &mut RandomStream, spread: f64) -> Theta {
        let alpha: Vec<f64> = (0..n).map(|_| spread * (rng.uniform() - 0.5) - 0.5).collect();
        let mut beta: Vec<f64> = (0..n).map(|_| spread * (rng.uniform() - 0.5)).collect();
        beta[n - 1] = 0.0;
        Theta::new(alpha, beta).unwrap()
    }

    fn sampled(n: usize, seed: u64) -> (SignedAdjacency, Theta, KappaVector) {
        let mut rng = RandomStream::new(seed, 0);
        let theta = random_theta(n, &mut rng, 1.0);
        let high: Vec<bool> = (0..n).map(|_| rng.bernoulli(0.8)).collect();
        let kappa = KappaVector::two_class(&high, 0.001, 0.2).unwrap();
        let g = sample_network(&theta, &kappa, &mut rng).unwrap();
        (g, theta, kappa)
    }

    #[test]
    fn two_node_residual_by_hand() {
        let g = SignedAdjacency::from_edges(2, [(0, 1, Sign::Positive), (1, 0, Sign::Negative)]).unwrap();
        let theta = Theta::new(vec![0.3, -0.2], vec![0.4, 0.0]).unwrap();
        let kappa = KappaVector::new(vec![0.1, 0.3], 0.1, 0.3).unwrap();
        let sys = estimating_equations(&g, &theta, &kappa).unwrap();
        // mpmath reference values
        let expected = [0.46811323150717511413, -1.4147841965062212811, -1.4147841965062212811];
        for (a, b) in sys.residual().iter().zip(expected) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
    }

    #[test]
    fn dropped_equation_identity() {
        let (g, theta, kappa) = sampled(30, 4);
        let sys = estimating_equations(&g, &theta, &kappa).unwrap();
        let n = 30;
        let r = sys.residual();
        let implied = r[..n].iter().sum::<f64>() - r[n..].iter().sum::<f64>();
        let (b, y) = (g.in_degrees(), g.to_matrix());
        let mut col = b[n - 1] as f64;
        for k in 0..n - 1 {
            let _ = y.get(k, n - 1);
            col -= crate::model::expected_edge(theta.predictor(k, n - 1), kappa.values()[k]).unwrap();
        }
        assert!((implied - col).abs() < 1e-10);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let (g, theta, kappa) = sampled(6, 8);
        let sys = estimating_equations(&g, &theta, &kappa).unwrap();
        let jac = sys.jacobian();
        let dim = 11;
        let h = 1e-6;
        for c in 0..dim {
            let mut plus = theta.free();
            let mut minus = theta.free();
            plus[c] += h;
            minus[c] -= h;
            let fp = estimating_equations(&g, &Theta::from_free(6, &plus).unwrap(), &kappa).unwrap();
            let fm = estimating_equations(&g, &Theta::from_free(6, &minus).unwrap(), &kappa).unwrap();
            for r in 0..dim {
                let fd = (fp.residual()[r] - fm.residual()[r]) / (2.0 * h);
                assert!((jac[r * dim + c] - fd).abs() < 1e-7, "({r},{c})");
            }
        }
        assert!(sys.dominance_margin() >= -1e-12);
    }

    #[test]
    fn block_direction_matches_dense_solve() {
        let (g, theta, kappa) = sampled(12, 2);
        let sys = estimating_equations(&g, &theta, &kappa).unwrap();
        let dir = sys.newton_direction().unwrap();
        let neg: Vec<f64> = sys.residual().iter().map(|v| -v).collect();
        let dense = solve_dense(DenseSystem::new(sys.jacobian(), neg).unwrap()).unwrap();
        for (a, b) in dir.iter().zip(&dense) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn newton_converges_at_zero_truth() {
        let n = 50;
        let theta = Theta::zeros(n);
        let kappa = KappaVector::constant(n, 0.2).unwrap();
        let g = sample_network(&theta, &kappa, &mut RandomStream::new(5, 0)).unwrap();
        let report = newton_solve_from(&g, &kappa, &SolverConfig::default(), &Theta::zeros(n)).unwrap();
        assert!(report.iterations <= 50);
        let sys = estimating_equations(&g, &report.theta, &kappa).unwrap();
        assert!(sys.residual_inf_norm() <= 1e-8);
        assert_eq!(report.theta.beta()[n - 1], 0.0);
    }

    #[test]
    fn degenerate_nodes_are_named() {
        let n = 5;
        let mut g = SignedAdjacency::new(n);
        for k in 1..n {
            g.insert(0, k, Sign::Negative).unwrap();
        }
        g.insert(1, 2, Sign::Positive).unwrap();
        let kappa = KappaVector::constant(n, 0.3).unwrap();
        match newton_solve(&g, &kappa, &SolverConfig::default()) {
            Err(Error::Degenerate { nodes }) => assert!(nodes.contains(&0)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn non_convergence_reports_residual() {
        let (g, _, kappa) = sampled(20, 3);
        let config = SolverConfig { max_iterations: 1, ..SolverConfig::default() };
        match newton_solve(&g, &kappa, &config) {
            Err(Error::NonConvergence { iterations, residual }) => {
                assert_eq!(iterations, 1);
                assert!(residual > 1e-8);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn curvatures_match_likelihood_second_differences() {
        let g = SignedAdjacency::from_edges(
            3,
            [(0, 1, Sign::Positive), (1, 0, Sign::Negative), (2, 0, Sign::Positive), (1, 2, Sign::Negative)],
        )
        .unwrap();
        let theta = Theta::new(vec![0.3, -0.4, 0.1], vec![0.2, -0.5, 0.0]).unwrap();
        let kappa = KappaVector::new(vec![0.1, 0.3, 0.1], 0.1, 0.3).unwrap();
        let u = observed_curvatures(&g, &theta, &kappa).unwrap();
        let h = 1e-4;
        let ll = |free: &[f64]| network_loglik(&g, &Theta::from_free(3, free).unwrap(), &kappa).unwrap();
        for c in 0..5 {
            let mut p = theta.free();
            let mut m = theta.free();
            p[c] += h;
            m[c] -= h;
            let fd = -(ll(&p) - 2.0 * ll(&theta.free()) + ll(&m)) / (h * h);
            assert!((u.get(c) - fd).abs() < 1e-5, "coord {c}: {} vs {fd}", u.get(c));
        }
        let v = u.values();
        assert_eq!(v[5], v[..3].iter().sum::<f64>() - v[3..5].iter().sum::<f64>());
    }

    #[test]
    fn curvatures_reduce_to_logistic_information() {
        let (g, theta, _) = sampled(8, 6);
        let positives_only = SignedAdjacency::from_edges(
            8,
            g.edges().into_iter().filter(|e| e.2 == Sign::Positive),
        )
        .unwrap();
        let kappa = KappaVector::constant(8, 1e-12).unwrap();
        let u = observed_curvatures(&positives_only, &theta, &kappa).unwrap();
        for i in 0..8 {
            let info: f64 = (0..8)
                .filter(|&k| k != i)
                .map(|k| {
                    let (s, t) = logistic_pair(theta.predictor(i, k));
                    s * t
                })
                .sum();
            assert!((u.get(i) - info).abs() < 1e-9);
        }
    }

    fn dense_h(h: &HMatrix) -> Vec<f64> {
        let dim = 2 * h.n() - 1;
        let mut out = vec![0.0; dim * dim];
        for r in 0..dim {
            for c in 0..dim {
                out[r * dim + c] = h.entry(r, c);
            }
        }
        out
    }

    #[test]
    fn h_matrix_structured_product() {
        let (g, theta, kappa) = sampled(10, 12);
        let u = observed_curvatures(&g, &theta, &kappa).unwrap();
        let h = build_h_matrix(&u).unwrap();
        let ones = vec![1.0; 19];
        let hx = h.apply(&ones).unwrap();
        for i in 0..10 {
            assert!((hx[i] - (1.0 / u.get(i) + 1.0 / u.reference())).abs() < 1e-14);
        }
        let dense = dense_h(&h);
        let mut rng = RandomStream::new(1, 1);
        let x: Vec<f64> = (0..19).map(|_| rng.uniform() - 0.5).collect();
        let hx = h.apply(&x).unwrap();
        for r in 0..19 {
            let d: f64 = (0..19).map(|c| dense[r * 19 + c] * x[c]).sum();
            assert!((hx[r] - d).abs() < 1e-12);
            for c in 0..19 {
                assert_eq!(dense[r * 19 + c], dense[c * 19 + r]);
            }
        }
    }

    #[test]
    fn h_matrix_rejects_nonpositive() {
        let u = CurvatureVector::from_values(vec![1.0, 2.0, -1.0, 3.0]).unwrap();
        match build_h_matrix(&u) {
            Err(Error::Curvature { index, .. }) => assert_eq!(index, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn one_step_matches_dense_update() {
        let (g, kappa, check) = (21..)
            .find_map(|seed| {
                let (g, _, kappa) = sampled(10, seed);
                let check = newton_solve(&g, &kappa, &SolverConfig::default()).ok()?;
                Some((g, kappa, check))
            })
            .unwrap();
        let hat = one_step(&g, &check, &kappa).unwrap();
        let u = observed_curvatures(&g, &check, &kappa).unwrap();
        let dense = dense_h(&build_h_matrix(&u).unwrap());
        let grad = gradient(&g, &check, &kappa).unwrap();
        let free = check.free();
        for r in 0..19 {
            let step: f64 = (0..19).map(|c| dense[r * 19 + c] * grad[c]).sum();
            assert!((hat.free()[r] - (free[r] + step)).abs() < 1e-10);
        }
        assert_eq!(hat.beta()[9], 0.0);
    }

    #[test]
    fn one_step_fixed_point_for_logistic_mle() {
        let (g, _, _) = sampled(15, 30);
        let positives_only =
            SignedAdjacency::from_edges(15, g.edges().into_iter().filter(|e| e.2 == Sign::Positive)).unwrap();
        let kappa = KappaVector::constant(15, 1e-12).unwrap();
        let config = SolverConfig { tolerance: 1e-11, ..SolverConfig::default() };
        let check = newton_solve(&positives_only, &kappa, &config).unwrap();
        let hat = one_step(&positives_only, &check, &kappa).unwrap();
        assert!(check.linf_distance(&hat) < 1e-9);
    }

    #[test]
    fn population_hand_value_and_logistic_limit() {
        let pq = population_quantities(&Theta::zeros(3), &KappaVector::constant(3, 0.5).unwrap()).unwrap();
        assert!((pq.v[0] - 0.75).abs() < 1e-15);
        let mut rng = RandomStream::new(2, 0);
        let theta = random_theta(7, &mut rng, 2.0);
        let pq = population_quantities(&theta, &KappaVector::constant(7, 1e-13).unwrap()).unwrap();
        for q in 0..14 {
            assert!((pq.u[q] - pq.v[q]).abs() < 1e-10);
            assert!((pq.w[q] - pq.v[q]).abs() < 1e-10);
        }
        let u_sum = pq.u[..7].iter().sum::<f64>() - pq.u[7..13].iter().sum::<f64>();
        assert!((u_sum - pq.u[13]).abs() < 1e-10);
    }

    #[test]
    fn fit_result_invariants() {
        let (g, _, kappa) = sampled(40, 17);
        let fit = fit(&g, &kappa, &SolverConfig::default()).unwrap();
        assert!(fit.final_residual_inf_norm <= 1e-8);
        assert_eq!(fit.theta_check.beta()[39], 0.0);
        assert_eq!(fit.theta_hat.beta()[39], 0.0);
        assert!(fit.u_hat.values().iter().all(|&v| v > 0.0));
    }
}
