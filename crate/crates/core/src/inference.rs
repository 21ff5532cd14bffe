//! Pairwise intervals and tests on status differences, and the
//! harmonic-corrected Benjamini–Hochberg procedure.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{CurvatureVector, FitResult};
use crate::model::Theta;
use crate::numerics::{std_normal_quantile, two_sided_p};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Facet {
    /// Out-status `α`.
    Alpha,
    /// In-status `β`.
    Beta,
}

impl Facet {
    pub fn name(self) -> &'static str {
        match self {
            Facet::Alpha => "alpha",
            Facet::Beta => "beta",
        }
    }
}

impl std::str::FromStr for Facet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" | "out" => Ok(Facet::Alpha),
            "beta" | "in" => Ok(Facet::Beta),
            other => Err(Error::domain(format!("unknown facet {other:?}"))),
        }
    }
}

/// Which estimate and curvatures the comparison uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Basis {
    /// One-step estimate with curvatures at it.
    #[default]
    Hat,
    /// Initial estimate with curvatures at it.
    Check,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairwiseResult {
    pub i: usize,
    pub j: usize,
    pub facet: Facet,
    pub point: f64,
    pub delta_hat: f64,
    pub level: f64,
    pub lower: f64,
    pub upper: f64,
    pub p_value: f64,
}

impl PairwiseResult {
    pub fn covers(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }
}

/// Estimate and curvatures a comparison reads from.
#[derive(Clone, Copy, Debug)]
pub struct Estimates<'a> {
    pub theta: &'a Theta,
    pub u: &'a CurvatureVector,
}

impl<'a> Estimates<'a> {
    pub fn from_fit(fit: &'a FitResult, basis: Basis) -> Self {
        match basis {
            Basis::Hat => Self { theta: &fit.theta_hat, u: &fit.u_hat },
            Basis::Check => Self { theta: &fit.theta_check, u: &fit.u_check },
        }
    }

    fn coordinates(&self, facet: Facet, i: usize, j: usize) -> Result<(f64, f64)> {
        let n = self.theta.n();
        if i == j {
            return Err(Error::domain(format!("comparison needs two distinct nodes, got {i} twice")));
        }
        if let Some(&bad) = [i, j].iter().find(|&&k| k >= n) {
            return Err(Error::domain(format!("node {bad} outside 0..{n}")));
        }
        let (a, b, point) = match facet {
            Facet::Alpha => (i, j, self.theta.alpha()[i] - self.theta.alpha()[j]),
            Facet::Beta => {
                if let Some(&r) = [i, j].iter().find(|&&k| k == n - 1) {
                    return Err(Error::ReferenceNode(r));
                }
                (n + i, n + j, self.theta.beta()[i] - self.theta.beta()[j])
            }
        };
        for idx in [a, b] {
            let v = self.u.get(idx);
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Curvature { index: idx, value: v });
            }
        }
        let delta = (1.0 / self.u.get(a) + 1.0 / self.u.get(b)).sqrt();
        Ok((point, delta))
    }

    pub fn interval(&self, facet: Facet, i: usize, j: usize, level: f64) -> Result<PairwiseResult> {
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::domain(format!("confidence level must lie in (0,1), got {level}")));
        }
        let (point, delta_hat) = self.coordinates(facet, i, j)?;
        let half = std_normal_quantile(0.5 + level / 2.0)? * delta_hat;
        Ok(PairwiseResult {
            i,
            j,
            facet,
            point,
            delta_hat,
            level,
            lower: point - half,
            upper: point + half,
            p_value: two_sided_p(point / delta_hat),
        })
    }

    pub fn pvalue(&self, facet: Facet, i: usize, k: usize) -> Result<f64> {
        let (point, delta) = self.coordinates(facet, i, k)?;
        Ok(two_sided_p(point / delta))
    }
}

/// Interval for `θ̂_i − θ̂_j` on one facet.
pub fn pairwise_interval(fit: &FitResult, facet: Facet, i: usize, j: usize, level: f64) -> Result<PairwiseResult> {
    Estimates::from_fit(fit, Basis::Hat).interval(facet, i, j, level)
}

/// As [`pairwise_interval`] with an explicit choice of estimate.
pub fn pairwise_interval_with(
    fit: &FitResult,
    facet: Facet,
    i: usize,
    j: usize,
    level: f64,
    basis: Basis,
) -> Result<PairwiseResult> {
    Estimates::from_fit(fit, basis).interval(facet, i, j, level)
}

/// Two-sided normal p-value for equal status of `i` and `k`.
pub fn pairwise_pvalue(fit: &FitResult, facet: Facet, i: usize, k: usize) -> Result<f64> {
    Estimates::from_fit(fit, Basis::Hat).pvalue(facet, i, k)
}

/// What to do when no sorted p-value clears its threshold.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmptyCutoff {
    #[default]
    RejectNone,
    RejectAll,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BhOutcome {
    /// `L = Σ_{l≤K} 1/l`.
    pub harmonic: f64,
    /// Largest `l` with `p_(l) ≤ α·l/(K·L)`, 1-based.
    pub cutoff_rank: Option<usize>,
    /// Per-input rejection flags, in input order.
    pub rejected: Vec<bool>,
    pub alpha: f64,
}

impl BhOutcome {
    pub fn rejection_count(&self) -> usize {
        self.rejected.iter().filter(|&&r| r).count()
    }
}

pub fn bh_multiple_comparison(p_values: &[f64], alpha: f64) -> Result<BhOutcome> {
    bh_multiple_comparison_with(p_values, alpha, EmptyCutoff::RejectNone)
}

pub fn bh_multiple_comparison_with(p_values: &[f64], alpha: f64, empty: EmptyCutoff) -> Result<BhOutcome> {
    if p_values.is_empty() {
        return Err(Error::domain("multiple comparison needs at least one p-value"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!("alpha must lie in (0,1), got {alpha}")));
    }
    if let Some(p) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::domain(format!("p-value {p} outside [0,1]")));
    }
    let k = p_values.len();
    let harmonic: f64 = (1..=k).map(|l| 1.0 / l as f64).sum();
    let mut sorted = p_values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cutoff_rank = (1..=k)
        .rev()
        .find(|&l| sorted[l - 1] <= alpha * l as f64 / (k as f64 * harmonic));
    let rejected = match (cutoff_rank, empty) {
        (Some(r), _) => {
            let cut = sorted[r - 1];
            p_values.iter().map(|&p| p <= cut).collect()
        }
        (None, EmptyCutoff::RejectNone) => vec![false; k],
        (None, EmptyCutoff::RejectAll) => vec![true; k],
    };
    Ok(BhOutcome { harmonic, cutoff_rank, rejected, alpha })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateResult {
    pub pair: PairwiseResult,
    /// `p < alpha` on its own.
    pub indiv_sig: bool,
    /// Rejected by the multiple-comparison procedure.
    pub multi_sig: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultipleComparisonReport {
    pub focal: usize,
    pub facet: Facet,
    pub candidates: Vec<usize>,
    pub p_values: Vec<f64>,
    pub bh: BhOutcome,
    pub rejected: Vec<usize>,
    pub results: Vec<CandidateResult>,
}

/// Compares `focal` against every candidate and runs the BH procedure.
pub fn rank_report(
    fit: &FitResult,
    facet: Facet,
    focal: usize,
    candidates: &[usize],
    alpha: f64,
    level: f64,
) -> Result<MultipleComparisonReport> {
    rank_report_with(Estimates::from_fit(fit, Basis::Hat), facet, focal, candidates, alpha, level, EmptyCutoff::RejectNone)
}

pub fn rank_report_with(
    est: Estimates<'_>,
    facet: Facet,
    focal: usize,
    candidates: &[usize],
    alpha: f64,
    level: f64,
    empty: EmptyCutoff,
) -> Result<MultipleComparisonReport> {
    if candidates.is_empty() {
        return Err(Error::domain("candidate set is empty"));
    }
    if candidates.contains(&focal) {
        return Err(Error::domain(format!("focal node {focal} is also a candidate")));
    }
    let pairs = candidates
        .iter()
        .map(|&c| est.interval(facet, focal, c, level))
        .collect::<Result<Vec<_>>>()?;
    let p_values: Vec<f64> = pairs.iter().map(|p| p.p_value).collect();
    let bh = bh_multiple_comparison_with(&p_values, alpha, empty)?;
    let rejected = candidates.iter().zip(&bh.rejected).filter(|(_, &r)| r).map(|(&c, _)| c).collect();
    let results = pairs
        .into_iter()
        .zip(&bh.rejected)
        .map(|(pair, &multi_sig)| CandidateResult { indiv_sig: pair.p_value < alpha, multi_sig, pair })
        .collect();
    Ok(MultipleComparisonReport {
        focal,
        facet,
        candidates: candidates.to_vec(),
        p_values,
        bh,
        rejected,
        results,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize, u: f64) -> (Theta, CurvatureVector) {
        let theta = Theta::zeros(n);
        let u = CurvatureVector::from_values(vec![u; 2 * n]).unwrap();
        (theta, u)
    }

    #[test]
    fn hand_interval() {
        let (theta, u) = toy(4, 4.0);
        let est = Estimates { theta: &theta, u: &u };
        let r = est.interval(Facet::Alpha, 0, 1, 0.95).unwrap();
        assert!((r.delta_hat - 0.5f64.sqrt()).abs() < 1e-15);
        let half = 1.959963984540054 * 0.5f64.sqrt();
        assert!((r.upper - half).abs() < 1e-12 && (r.lower + half).abs() < 1e-12);
        assert!((r.upper - 1.386).abs() < 1e-3);
        assert_eq!(r.p_value, 1.0);
        assert!(est.interval(Facet::Alpha, 2, 2, 0.95).is_err());
    }

    #[test]
    fn swap_negates() {
        let theta = Theta::new(vec![0.5, -0.1, 0.2], vec![0.3, 0.1, 0.0]).unwrap();
        let u = CurvatureVector::from_values(vec![3.0, 5.0, 2.0, 4.0, 6.0, 1.0]).unwrap();
        let est = Estimates { theta: &theta, u: &u };
        let a = est.interval(Facet::Beta, 0, 1, 0.9).unwrap();
        let b = est.interval(Facet::Beta, 1, 0, 0.9).unwrap();
        assert_eq!(a.point, -b.point);
        assert_eq!(a.delta_hat, b.delta_hat);
        assert!((a.lower + b.upper).abs() < 1e-15);
    }

    #[test]
    fn reference_node_is_refused() {
        let (theta, u) = toy(4, 1.0);
        let est = Estimates { theta: &theta, u: &u };
        match est.interval(Facet::Beta, 0, 3, 0.95) {
            Err(Error::ReferenceNode(3)) => {}
            other => panic!("{other:?}"),
        }
        assert!(est.interval(Facet::Alpha, 0, 3, 0.95).is_ok());
    }

    #[test]
    fn pvalue_at_critical_value() {
        let theta = Theta::new(vec![1.959964, 0.0], vec![0.0, 0.0]).unwrap();
        let u = CurvatureVector::from_values(vec![2.0, 2.0, 1.0, 1.0]).unwrap();
        let p = Estimates { theta: &theta, u: &u }.pvalue(Facet::Alpha, 0, 1).unwrap();
        assert!((p - 0.049999998192884808605).abs() < 1e-12);
    }

    #[test]
    fn bh_hand_example() {
        let out = bh_multiple_comparison(&[0.001, 0.02, 0.04, 0.5], 0.05).unwrap();
        assert!((out.harmonic - 25.0 / 12.0).abs() < 1e-15);
        assert_eq!(out.cutoff_rank, Some(1));
        assert_eq!(out.rejected, vec![true, false, false, false]);
    }

    #[test]
    fn bh_empty_cutoff_policies() {
        let p = [1.0, 1.0, 1.0];
        assert_eq!(bh_multiple_comparison(&p, 0.05).unwrap().rejection_count(), 0);
        let lit = bh_multiple_comparison_with(&p, 0.05, EmptyCutoff::RejectAll).unwrap();
        assert_eq!(lit.rejection_count(), 3);
        assert_eq!(lit.cutoff_rank, None);
    }

    #[test]
    fn bh_single_test() {
        assert_eq!(bh_multiple_comparison(&[0.05], 0.05).unwrap().rejected, vec![true]);
        assert_eq!(bh_multiple_comparison(&[0.0501], 0.05).unwrap().rejected, vec![false]);
    }

    #[test]
    fn bh_ties_share_fate() {
        let out = bh_multiple_comparison(&[0.001, 0.001, 0.9], 0.05).unwrap();
        assert_eq!(out.rejected, vec![true, true, false]);
    }

    #[test]
    fn bh_input_validation() {
        assert!(bh_multiple_comparison(&[], 0.05).is_err());
        assert!(bh_multiple_comparison(&[1.2], 0.05).is_err());
        assert!(bh_multiple_comparison(&[0.2], 1.0).is_err());
    }
}
