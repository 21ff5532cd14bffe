//! Monte Carlo harness: grouped node parameters, replications and summary
//! tables for estimation error, coverage, FDP and power.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{fit, population_quantities, FitResult, SolverConfig};
use crate::inference::{rank_report_with, Basis, EmptyCutoff, Estimates, Facet};
use crate::kappa::{estimate_kappa, KappaConfig};
use crate::model::{sample_network, KappaVector, SignedAdjacency, Theta};
use crate::numerics::{std_normal_cdf, RandomStream};

/// Environment variable holding the worker count for [`run_cell`].
pub const WORKERS_ENV: &str = "SIGNED_BETA_WORKERS";

/// How the second parameter of the group normals is read.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpreadReading {
    StdDev,
    Variance,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KappaMode {
    /// Fit with the generating sparsity values.
    True,
    /// Classify and estimate the sparsity levels from each network.
    Estimate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n: usize,
    pub group_probs: Vec<f64>,
    pub alpha_group_mean: f64,
    pub alpha_group_spread: f64,
    pub beta_group_mean: f64,
    pub beta_group_spread: f64,
    pub spread_reading: SpreadReading,
    pub kappa00: f64,
    pub kappa01: f64,
    pub p_high_kappa: f64,
    pub replications: usize,
    pub base_seed: u64,
    pub kappa_mode: KappaMode,
    pub coverage_pairs: usize,
    pub level: f64,
    pub fdr_alpha: f64,
    /// Candidates taken from each group other than the focal one.
    pub candidates_per_group: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n: 200,
            group_probs: [[0.15; 5], [0.05; 5]].concat(),
            alpha_group_mean: -0.5,
            alpha_group_spread: 0.5,
            beta_group_mean: 0.0,
            beta_group_spread: 0.5,
            spread_reading: SpreadReading::StdDev,
            kappa00: 0.001,
            kappa01: 0.05,
            p_high_kappa: 0.8,
            replications: 100,
            base_seed: 2024,
            kappa_mode: KappaMode::Estimate,
            coverage_pairs: 100,
            level: 0.95,
            fdr_alpha: 0.05,
            candidates_per_group: 10,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 3 {
            return Err(Error::domain(format!("scenario needs n >= 3, got {}", self.n)));
        }
        if self.group_probs.is_empty() || self.group_probs.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::domain("group probabilities must lie in [0,1]"));
        }
        let total: f64 = self.group_probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::domain(format!("group probabilities sum to {total}, not 1")));
        }
        if !(self.alpha_group_spread >= 0.0 && self.beta_group_spread >= 0.0) {
            return Err(Error::domain("group spreads must be non-negative"));
        }
        KappaVector::new(vec![], self.kappa00, self.kappa01)?;
        if !(0.0..=1.0).contains(&self.p_high_kappa) {
            return Err(Error::domain("p_high_kappa must lie in [0,1]"));
        }
        for (name, v) in [("level", self.level), ("fdr_alpha", self.fdr_alpha)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::domain(format!("{name} must lie in (0,1), got {v}")));
            }
        }
        Ok(())
    }

    fn sd(&self, spread: f64) -> f64 {
        match self.spread_reading {
            SpreadReading::StdDev => spread,
            SpreadReading::Variance => spread.sqrt(),
        }
    }
}

/// One draw of the generating parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub theta: Theta,
    pub kappa: KappaVector,
    pub groups: Vec<usize>,
    pub group_alpha: Vec<f64>,
    pub group_beta: Vec<f64>,
}

/// Group values, memberships and sparsity classes, in that draw order.
pub fn generate_scenario(config: &ScenarioConfig, rng: &mut RandomStream) -> Result<Scenario> {
    config.validate()?;
    let g = config.group_probs.len();
    let a_sd = config.sd(config.alpha_group_spread);
    let b_sd = config.sd(config.beta_group_spread);
    let group_alpha = (0..g).map(|_| rng.normal(config.alpha_group_mean, a_sd)).collect::<Result<Vec<_>>>()?;
    let group_beta = (0..g).map(|_| rng.normal(config.beta_group_mean, b_sd)).collect::<Result<Vec<_>>>()?;
    let n = config.n;
    let groups: Vec<usize> = (0..n)
        .map(|_| {
            let u = rng.uniform();
            let mut acc = 0.0;
            for (k, p) in config.group_probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    return k;
                }
            }
            config.group_probs.iter().rposition(|&p| p > 0.0).unwrap_or(g - 1)
        })
        .collect();
    let high: Vec<bool> = (0..n).map(|_| rng.bernoulli(config.p_high_kappa)).collect();
    let alpha = groups.iter().map(|&k| group_alpha[k]).collect();
    let mut beta: Vec<f64> = groups.iter().map(|&k| group_beta[k]).collect();
    beta[n - 1] = 0.0;
    Ok(Scenario {
        theta: Theta::new(alpha, beta)?,
        kappa: KappaVector::two_class(&high, config.kappa00, config.kappa01)?,
        groups,
        group_alpha,
        group_beta,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationMetrics {
    pub rep_index: usize,
    pub linf_check: f64,
    pub linf_hat: f64,
    pub mse_check: f64,
    pub mse_hat: f64,
    pub coverage_check: f64,
    pub coverage_hat: f64,
    pub fdp_check: f64,
    pub fdp_hat: f64,
    pub power_check: f64,
    pub power_hat: f64,
    /// `(α̂_0 − α*_0)` over its population standard deviation.
    pub z_alpha0: f64,
    pub newton_iterations: usize,
    pub kappa01_hat: Option<f64>,
    pub class_exact: Option<bool>,
}

impl ReplicationMetrics {
    pub fn fields(&self) -> Vec<(&'static str, Option<f64>)> {
        vec![
            ("linf_check", Some(self.linf_check)),
            ("linf_hat", Some(self.linf_hat)),
            ("mse_check", Some(self.mse_check)),
            ("mse_hat", Some(self.mse_hat)),
            ("coverage_check", Some(self.coverage_check)),
            ("coverage_hat", Some(self.coverage_hat)),
            ("fdp_check", Some(self.fdp_check)),
            ("fdp_hat", Some(self.fdp_hat)),
            ("power_check", Some(self.power_check)),
            ("power_hat", Some(self.power_hat)),
            ("z_alpha0", Some(self.z_alpha0)),
            ("newton_iterations", Some(self.newton_iterations as f64)),
            ("kappa01_hat", self.kappa01_hat),
            ("class_exact", self.class_exact.map(|b| if b { 1.0 } else { 0.0 })),
        ]
    }
}

/// Focal node and candidate set for the in-status comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonDesign {
    pub focal: usize,
    pub candidates: Vec<usize>,
    /// Candidates sharing the focal group, i.e. true nulls.
    pub nulls: BTreeSet<usize>,
}

/// Random focal node from the group with the largest in-status, the rest of
/// that group, and the first few members of every other group. The
/// reference node is never used.
pub fn comparison_design(
    scenario: &Scenario,
    per_group: usize,
    rng: &mut RandomStream,
) -> Result<ComparisonDesign> {
    let n = scenario.groups.len();
    let reference = n - 1;
    let g = scenario.group_alpha.len();
    let mut members = vec![Vec::new(); g];
    for (i, &k) in scenario.groups.iter().enumerate() {
        if i != reference {
            members[k].push(i);
        }
    }
    let top = (0..g)
        .filter(|&k| !members[k].is_empty())
        .max_by(|&a, &b| scenario.group_beta[a].total_cmp(&scenario.group_beta[b]))
        .ok_or_else(|| Error::InsufficientData("no eligible focal node".into()))?;
    let focal = members[top][rng.index(members[top].len())];
    let mut candidates = Vec::new();
    let mut nulls = BTreeSet::new();
    for (k, m) in members.iter().enumerate() {
        if k == top {
            for &i in m.iter().filter(|&&i| i != focal) {
                candidates.push(i);
                nulls.insert(i);
            }
        } else {
            candidates.extend(m.iter().take(per_group));
        }
    }
    if candidates.is_empty() {
        return Err(Error::InsufficientData("comparison has no candidates".into()));
    }
    Ok(ComparisonDesign { focal, candidates, nulls })
}

/// Distinct unordered pairs `i ≠ j`, up to `count` of them.
pub fn coverage_pairs(n: usize, count: usize, rng: &mut RandomStream) -> Vec<(usize, usize)> {
    let total = n * (n - 1) / 2;
    let want = count.min(total);
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(want);
    while out.len() < want {
        let i = rng.index(n);
        let j = rng.index(n);
        if i == j {
            continue;
        }
        if seen.insert((i.min(j), i.max(j))) {
            out.push((i, j));
        }
    }
    out
}

fn coverage(est: Estimates<'_>, truth: &Theta, pairs: &[(usize, usize)], level: f64) -> Result<f64> {
    let mut hits = 0usize;
    for &(i, j) in pairs {
        let r = est.interval(Facet::Alpha, i, j, level)?;
        if r.covers(truth.alpha()[i] - truth.alpha()[j]) {
            hits += 1;
        }
    }
    Ok(hits as f64 / pairs.len() as f64)
}

fn fdp_power(est: Estimates<'_>, design: &ComparisonDesign, alpha: f64, level: f64) -> Result<(f64, f64)> {
    let report = rank_report_with(
        est,
        Facet::Beta,
        design.focal,
        &design.candidates,
        alpha,
        level,
        EmptyCutoff::RejectNone,
    )?;
    let false_rej = report.rejected.iter().filter(|c| design.nulls.contains(c)).count();
    let true_rej = report.rejected.len() - false_rej;
    let fdp = false_rej as f64 / report.rejected.len().max(1) as f64;
    let alternatives = design.candidates.len() - design.nulls.len();
    let power = if alternatives == 0 { 0.0 } else { true_rej as f64 / alternatives as f64 };
    Ok((fdp, power))
}

/// Everything one replication draws and fits.
pub struct Replication {
    pub scenario: Scenario,
    pub graph: SignedAdjacency,
    pub fit: FitResult,
    pub metrics: ReplicationMetrics,
}

/// Samples, fits and scores replication `rep_index` on its own stream.
pub fn run_replication(config: &ScenarioConfig, rep_index: usize) -> Result<ReplicationMetrics> {
    run_replication_full(config, rep_index, &SolverConfig::default(), &KappaConfig::default()).map(|r| r.metrics)
}

pub fn run_replication_full(
    config: &ScenarioConfig,
    rep_index: usize,
    solver: &SolverConfig,
    kappa_config: &KappaConfig,
) -> Result<Replication> {
    let mut rng = RandomStream::new(config.base_seed, rep_index as u64);
    let scenario = generate_scenario(config, &mut rng)?;
    let graph = sample_network(&scenario.theta, &scenario.kappa, &mut rng)?;
    let pairs = coverage_pairs(config.n, config.coverage_pairs, &mut rng);
    let design = comparison_design(&scenario, config.candidates_per_group, &mut rng)?;

    let (kappa, kappa01_hat, class_exact) = match config.kappa_mode {
        KappaMode::True => (scenario.kappa.clone(), None, None),
        KappaMode::Estimate => {
            let kc = KappaConfig { kappa00: config.kappa00, solver: solver.clone(), ..kappa_config.clone() };
            let est = estimate_kappa(&graph, &kc)?;
            let truth: Vec<usize> = (0..config.n).filter(|&i| scenario.kappa.is_high(i)).collect();
            let exact = truth == est.class_high;
            (est.kappa_vector(config.n)?, Some(est.kappa01_hat), Some(exact))
        }
    };
    let fit = fit(&graph, &kappa, solver)?;
    let truth = &scenario.theta;
    let hat = Estimates::from_fit(&fit, Basis::Hat);
    let check = Estimates::from_fit(&fit, Basis::Check);
    let (fdp_hat, power_hat) = fdp_power(hat, &design, config.fdr_alpha, config.level)?;
    let (fdp_check, power_check) = fdp_power(check, &design, config.fdr_alpha, config.level)?;

    let pop = population_quantities(truth, &scenario.kappa)?;
    let z_alpha0 = (fit.theta_hat.alpha()[0] - truth.alpha()[0]) / pop.avar_hat(0).sqrt();

    let metrics = ReplicationMetrics {
        rep_index,
        linf_check: fit.theta_check.linf_distance(truth),
        linf_hat: fit.theta_hat.linf_distance(truth),
        mse_check: fit.theta_check.mean_squared_distance(truth),
        mse_hat: fit.theta_hat.mean_squared_distance(truth),
        coverage_check: coverage(check, truth, &pairs, config.level)?,
        coverage_hat: coverage(hat, truth, &pairs, config.level)?,
        fdp_check,
        fdp_hat,
        power_check,
        power_hat,
        z_alpha0,
        newton_iterations: fit.newton_iterations,
        kappa01_hat,
        class_exact,
    };
    Ok(Replication { scenario, graph, fit, metrics })
}

/// Mean and sample standard deviation of one metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub count: usize,
    /// False when fewer than two values were available.
    pub sd_defined: bool,
}

fn summarize(name: &str, mut values: Vec<f64>) -> MetricSummary {
    values.sort_by(f64::total_cmp);
    let count = values.len();
    let mean = values.iter().sum::<f64>() / count as f64;
    let (sd, sd_defined) = if count < 2 {
        (0.0, false)
    } else {
        let mut dev: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
        dev.sort_by(f64::total_cmp);
        ((dev.iter().sum::<f64>() / (count - 1) as f64).sqrt(), true)
    };
    MetricSummary { name: name.to_string(), mean, sd, count, sd_defined }
}

/// Per-metric summaries; the result does not depend on input order.
pub fn aggregate(metrics: &[ReplicationMetrics]) -> Result<Vec<MetricSummary>> {
    let first = metrics.first().ok_or_else(|| Error::domain("cannot aggregate an empty list"))?;
    let names: Vec<&str> = first.fields().iter().map(|f| f.0).collect();
    let mut out = Vec::new();
    for (k, name) in names.iter().enumerate() {
        let values: Vec<f64> = metrics.iter().filter_map(|m| m.fields()[k].1).collect();
        if !values.is_empty() {
            out.push(summarize(name, values));
        }
    }
    Ok(out)
}

pub fn find_summary<'a>(rows: &'a [MetricSummary], name: &str) -> Option<&'a MetricSummary> {
    rows.iter().find(|r| r.name == name)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub rep_index: usize,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub config: ScenarioConfig,
    /// Successful replications ordered by index.
    pub metrics: Vec<ReplicationMetrics>,
    pub failures: Vec<Failure>,
}

impl CellResult {
    pub fn summary(&self) -> Result<Vec<MetricSummary>> {
        aggregate(&self.metrics)
    }
}

/// Worker count from [`WORKERS_ENV`], if set to a positive integer.
pub fn workers_from_env() -> Option<usize> {
    std::env::var(WORKERS_ENV).ok()?.trim().parse().ok().filter(|&w| w > 0)
}

/// Runs replications `0..config.replications`; results do not depend on the
/// number of workers.
pub fn run_cell(config: &ScenarioConfig, workers: Option<usize>) -> Result<CellResult> {
    run_cell_with(config, workers, &SolverConfig::default(), &KappaConfig::default())
}

pub fn run_cell_with(
    config: &ScenarioConfig,
    workers: Option<usize>,
    solver: &SolverConfig,
    kappa_config: &KappaConfig,
) -> Result<CellResult> {
    config.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers.or_else(workers_from_env) {
        builder = builder.num_threads(w);
    }
    let pool = builder.build().map_err(|e| Error::domain(format!("thread pool: {e}")))?;
    let outcomes: Vec<(usize, Result<ReplicationMetrics>)> = pool.install(|| {
        (0..config.replications)
            .into_par_iter()
            .map(|r| (r, run_replication_full(config, r, solver, kappa_config).map(|x| x.metrics)))
            .collect()
    });
    let mut metrics = Vec::new();
    let mut failures = Vec::new();
    for (rep_index, outcome) in outcomes {
        match outcome {
            Ok(m) => metrics.push(m),
            Err(e) => {
                log::warn!("replication {rep_index} failed: {e}");
                failures.push(Failure { rep_index, message: e.to_string() });
            }
        }
    }
    Ok(CellResult { config: config.clone(), metrics, failures })
}

/// Kolmogorov–Smirnov statistic and asymptotic p-value against N(0, 1).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsOutcome {
    pub statistic: f64,
    pub p_value: f64,
}

pub fn ks_test_normal(samples: &[f64]) -> Result<KsOutcome> {
    if samples.is_empty() {
        return Err(Error::domain("KS test needs at least one sample"));
    }
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let mut d = 0.0f64;
    for (k, &v) in x.iter().enumerate() {
        let f = std_normal_cdf(v)?;
        d = d.max((k as f64 + 1.0) / n - f).max(f - k as f64 / n);
    }
    let root = n.sqrt();
    let lambda = (root + 0.12 + 0.11 / root) * d;
    Ok(KsOutcome { statistic: d, p_value: kolmogorov_sf(lambda) })
}

/// `P(K > λ) = 2 Σ_{k≥1} (−1)^{k−1} e^{−2k²λ²}`.
fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Table layout: file name and the `(check, hat)` metric pair it reports.
pub const TABLES: [(&str, &str, &str); 5] = [
    ("table1_linf.csv", "linf_check", "linf_hat"),
    ("table2_mse.csv", "mse_check", "mse_hat"),
    ("table3_coverage.csv", "coverage_check", "coverage_hat"),
    ("table4_fdp.csv", "fdp_check", "fdp_hat"),
    ("table5_power.csv", "power_check", "power_hat"),
];

const TABLE_HEADER: &str = "n,kappa01,replications,failures,check_mean,check_sd,hat_mean,hat_sd\n";

/// CSV text of one table over several cells.
pub fn table_csv(cells: &[CellResult], check: &str, hat: &str) -> Result<String> {
    let mut out = String::from(TABLE_HEADER);
    for cell in cells {
        let rows = cell.summary()?;
        let get = |name: &str| {
            find_summary(&rows, name)
                .map(|s| (s.mean, s.sd))
                .ok_or_else(|| Error::domain(format!("metric {name} missing")))
        };
        let (cm, cs) = get(check)?;
        let (hm, hs) = get(hat)?;
        writeln!(
            out,
            "{},{},{},{},{cm},{cs},{hm},{hs}",
            cell.config.n,
            cell.config.kappa01,
            cell.metrics.len(),
            cell.failures.len()
        )
        .expect("writing to a String");
    }
    Ok(out)
}

/// Per-replication metrics as CSV.
pub fn replications_csv(cell: &CellResult) -> String {
    let mut out = String::new();
    let Some(first) = cell.metrics.first() else {
        return out;
    };
    let names: Vec<&str> = first.fields().iter().map(|f| f.0).collect();
    out.push_str("n,kappa01,rep_index,");
    out.push_str(&names.join(","));
    out.push('\n');
    for m in &cell.metrics {
        let vals: Vec<String> =
            m.fields().iter().map(|(_, v)| v.map(|x| x.to_string()).unwrap_or_default()).collect();
        writeln!(out, "{},{},{},{}", cell.config.n, cell.config.kappa01, m.rep_index, vals.join(","))
            .expect("writing to a String");
    }
    out
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestCell {
    pub config: ScenarioConfig,
    pub successes: usize,
    pub failures: Vec<Failure>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub base_seed: u64,
    pub cells: Vec<ManifestCell>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub created_unix: Option<u64>,
}

/// Writes the five tables, per-replication rows and `manifest.json` into `dir`.
pub fn write_bench_outputs(dir: &Path, cells: &[CellResult], timestamp: bool) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (file, check, hat) in TABLES {
        std::fs::write(dir.join(file), table_csv(cells, check, hat)?)?;
    }
    let mut reps = String::new();
    for (k, cell) in cells.iter().enumerate() {
        let text = replications_csv(cell);
        let body = if k == 0 { &text[..] } else { text.split_once('\n').map_or("", |x| x.1) };
        reps.push_str(body);
    }
    std::fs::write(dir.join("replications.csv"), reps)?;
    let manifest = Manifest {
        base_seed: cells.first().map_or(0, |c| c.config.base_seed),
        cells: cells
            .iter()
            .map(|c| ManifestCell { config: c.config.clone(), successes: c.metrics.len(), failures: c.failures.clone() })
            .collect(),
        created_unix: timestamp.then(|| {
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |d| d.as_secs())
        }),
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}
