use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use signed_beta::bench::{
    generate_scenario, run_cell_with, write_bench_outputs, KappaMode, ScenarioConfig, SpreadReading,
};
use signed_beta::estimation::{fit, SolverConfig};
use signed_beta::inference::{rank_report_with, Basis, EmptyCutoff, Estimates, Facet};
use signed_beta::io::{
    comparison_csv, load_edge_list, load_fit, plot_series, preprocess, ranking_csv, removal_log, save_fit,
    write_edge_list, write_id_map, Diagnostics, FitFile, IdMap, LoadOptions, PreprocessOptions,
};
use signed_beta::kappa::{estimate_kappa, KappaConfig, Threshold};
use signed_beta::model::{sample_network, KappaVector};
use signed_beta::{Error, RandomStream, Result};

#[derive(Parser, Debug)]
#[command(name = "signed-beta", version, about = "Fit and rank nodes of directed signed networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a network from the grouped simulation scenario.
    Simulate(SimulateArgs),
    /// Fit status parameters to an edge list.
    Fit(FitArgs),
    /// Compare one node against candidates on one facet.
    Compare(CompareArgs),
    /// Run Monte Carlo cells and write summary tables.
    Bench(BenchArgs),
    /// Write rankings and plot data from a saved fit.
    Report(ReportArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SpreadArg {
    Sd,
    Var,
}

impl From<SpreadArg> for SpreadReading {
    fn from(s: SpreadArg) -> Self {
        match s {
            SpreadArg::Sd => SpreadReading::StdDev,
            SpreadArg::Var => SpreadReading::Variance,
        }
    }
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Replication stream within the seed.
    #[arg(long, default_value_t = 0)]
    rep: u64,
    #[arg(long, default_value_t = 0.05)]
    kappa01: f64,
    #[arg(long, default_value_t = 0.001)]
    kappa00: f64,
    #[arg(long, value_enum, default_value_t = SpreadArg::Sd)]
    spread: SpreadArg,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct SolverArgs {
    #[arg(long, default_value_t = 1e-8)]
    tolerance: f64,
    #[arg(long, default_value_t = 200)]
    max_iterations: usize,
    #[arg(long, default_value_t = 30)]
    max_halvings: usize,
    /// Reject nodes whose signed degree is at most -(n - GAP).
    #[arg(long, default_value_t = 2)]
    negative_gap: usize,
    /// Skip the expected-degree range check.
    #[arg(long)]
    no_moment_screen: bool,
}

impl SolverArgs {
    fn config(&self) -> SolverConfig {
        SolverConfig {
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
            max_halvings: self.max_halvings,
            negative_gap: self.negative_gap,
            moment_screen: !self.no_moment_screen,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum KappaModeArg {
    Fixed,
    Estimate,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Edge list: `src dst sign` per line.
    edges: PathBuf,
    #[arg(long, default_value = "fit.json")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = KappaModeArg::Estimate)]
    kappa_mode: KappaModeArg,
    /// Common sparsity value in fixed mode.
    #[arg(long)]
    kappa: Option<f64>,
    /// Low sparsity level; defaults to log(n)/n.
    #[arg(long)]
    kappa00: Option<f64>,
    /// Class threshold: a number in (0,1) or `auto`.
    #[arg(long, default_value = "auto")]
    xi: String,
    #[arg(long, default_value_t = 0.01)]
    gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    #[arg(long, default_value_t = 50)]
    grid_size: usize,
    #[arg(long, default_value_t = 0)]
    min_degree: usize,
    #[arg(long)]
    drop_negative_dominant: bool,
    #[arg(long)]
    single_pass: bool,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args, Debug)]
struct CompareArgs {
    fit: PathBuf,
    #[arg(long, value_parser = parse_facet)]
    facet: Facet,
    #[arg(long)]
    focal: String,
    /// Comma list of node labels and inclusive integer ranges, e.g. `0-50,77`.
    #[arg(long)]
    candidates: String,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Reject every hypothesis when no p-value clears its threshold.
    #[arg(long)]
    reject_all_when_empty: bool,
    /// Use the initial estimate instead of the one-step estimate.
    #[arg(long)]
    use_initial: bool,
    #[arg(long, default_value = "comparison.csv")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Cell spec `n=600,kappa01=0.05`; repeat for several cells.
    #[arg(long = "cell", required = true)]
    cells: Vec<String>,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = KappaModeArg::Estimate)]
    kappa_mode: KappaModeArg,
    #[arg(long, value_enum, default_value_t = SpreadArg::Sd)]
    spread: SpreadArg,
    #[arg(long)]
    workers: Option<usize>,
    /// Record the wall-clock time in the manifest.
    #[arg(long)]
    timestamp: bool,
    #[arg(long, default_value = "bench_out")]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct ReportArgs {
    fit: PathBuf,
    /// Edge list the fit came from; enables degree bars.
    #[arg(long)]
    edges: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    top: usize,
    #[arg(long, default_value = "report")]
    out_dir: PathBuf,
}

fn parse_facet(s: &str) -> std::result::Result<Facet, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Serialize, Deserialize)]
struct Truth {
    n: usize,
    seed: u64,
    rep: u64,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    kappa: Vec<f64>,
    groups: Vec<usize>,
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    let config = ScenarioConfig {
        n: args.n,
        kappa00: args.kappa00,
        kappa01: args.kappa01,
        spread_reading: args.spread.into(),
        base_seed: args.seed,
        ..ScenarioConfig::default()
    };
    let mut rng = RandomStream::new(args.seed, args.rep);
    let scenario = generate_scenario(&config, &mut rng)?;
    let graph = sample_network(&scenario.theta, &scenario.kappa, &mut rng)?;
    std::fs::create_dir_all(&args.out_dir)?;
    write_edge_list(&args.out_dir.join("edges.tsv"), &graph, &IdMap::identity(args.n))?;
    let truth = Truth {
        n: args.n,
        seed: args.seed,
        rep: args.rep,
        alpha: scenario.theta.alpha().to_vec(),
        beta: scenario.theta.beta().to_vec(),
        kappa: scenario.kappa.values().to_vec(),
        groups: scenario.groups,
    };
    std::fs::write(args.out_dir.join("truth.json"), serde_json::to_string_pretty(&truth)? + "\n")?;
    info!("wrote {} edges", graph.positive_edges().len() + graph.negative_edges().len());
    Ok(())
}

fn fit_command(args: &FitArgs) -> Result<()> {
    let loaded = load_edge_list(&args.edges, &LoadOptions::default())?;
    let options = PreprocessOptions {
        min_degree: args.min_degree,
        drop_negative_dominant: args.drop_negative_dominant,
        single_pass: args.single_pass,
    };
    let pre = preprocess(&loaded.graph, options)?;
    let ids = loaded.ids.subset(&pre.kept);
    if !pre.removals.is_empty() {
        let log_path = args.out.with_extension("removed.tsv");
        std::fs::write(&log_path, removal_log(&pre.removals, &loaded.ids))?;
        warn!("preprocessing removed {} nodes, see {}", pre.removals.len(), log_path.display());
    }
    let graph = pre.graph;
    let n = graph.n();
    let solver = args.solver.config();
    let kappa00 = args.kappa00.unwrap_or_else(|| KappaConfig::for_data(n).kappa00);
    let mut diagnostics = Diagnostics {
        newton_iterations: 0,
        final_residual_inf_norm: 0.0,
        kappa_threshold: None,
        kappa_class_high: None,
    };
    let kappa = match args.kappa_mode {
        KappaModeArg::Fixed => {
            let k = args
                .kappa
                .ok_or_else(|| Error::domain("fixed kappa mode needs --kappa"))?;
            KappaVector::constant(n, k)?
        }
        KappaModeArg::Estimate => {
            let threshold = if args.xi == "auto" {
                Threshold::Auto
            } else {
                Threshold::Fixed(args.xi.parse().map_err(|_| Error::domain(format!("bad --xi {:?}", args.xi)))?)
            };
            let config = KappaConfig {
                threshold,
                gamma: args.gamma,
                tau: args.tau,
                grid_size: args.grid_size,
                kappa00,
                solver: solver.clone(),
            };
            match estimate_kappa(&graph, &config) {
                Ok(est) => {
                    info!("kappa01 estimate {} on {} nodes", est.kappa01_hat, est.class_high.len());
                    diagnostics.kappa_threshold = Some(est.threshold_used);
                    diagnostics.kappa_class_high = Some(est.class_high.clone());
                    est.kappa_vector(n)?
                }
                Err(Error::InsufficientData(msg)) => {
                    warn!("{msg}; using kappa00 = {kappa00} for every node");
                    diagnostics.kappa_class_high = Some(Vec::new());
                    KappaVector::constant(n, kappa00)?
                }
                Err(e) => return Err(e),
            }
        }
    };
    let result = fit(&graph, &kappa, &solver)?;
    diagnostics.newton_iterations = result.newton_iterations;
    diagnostics.final_residual_inf_norm = result.final_residual_inf_norm;
    save_fit(&args.out, &FitFile::from_fit(&result, &ids, diagnostics))?;
    if !loaded.ids.labels().iter().enumerate().all(|(i, l)| *l == i.to_string()) {
        write_id_map(&args.out.with_extension("ids.tsv"), &ids)?;
    }
    Ok(())
}

fn parse_candidates(spec: &str, ids: &IdMap) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for token in spec.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let range = token.split_once('-').and_then(|(a, b)| Some((a.parse::<u64>().ok()?, b.parse::<u64>().ok()?)));
        let labels: Vec<String> = match range {
            Some((a, b)) if a <= b => (a..=b).map(|v| v.to_string()).collect(),
            Some(_) => return Err(Error::domain(format!("empty range {token:?}"))),
            None => vec![token.to_string()],
        };
        for l in labels {
            match ids.index_of(&l) {
                Some(i) => out.push(i),
                None if range.is_some() => warn!("candidate {l} not in the fit, skipped"),
                None => return Err(Error::domain(format!("unknown node {l:?}"))),
            }
        }
    }
    out.dedup();
    Ok(out)
}

fn compare(args: &CompareArgs) -> Result<()> {
    let (fit, ids) = load_fit(&args.fit)?.to_fit()?;
    let n = fit.n();
    let focal = ids
        .index_of(&args.focal)
        .ok_or_else(|| Error::domain(format!("unknown focal node {:?}", args.focal)))?;
    let mut candidates = parse_candidates(&args.candidates, &ids)?;
    let mut seen = std::collections::BTreeSet::new();
    candidates.retain(|c| seen.insert(*c));
    if candidates.contains(&focal) {
        warn!("focal node {} removed from the candidates", args.focal);
        candidates.retain(|&c| c != focal);
    }
    if args.facet == Facet::Beta && candidates.contains(&(n - 1)) {
        warn!("reference node {} has a pinned in-status and is removed from the candidates", ids.label(n - 1));
        candidates.retain(|&c| c != n - 1);
    }
    let basis = if args.use_initial { Basis::Check } else { Basis::Hat };
    let empty = if args.reject_all_when_empty { EmptyCutoff::RejectAll } else { EmptyCutoff::RejectNone };
    let report = rank_report_with(
        Estimates::from_fit(&fit, basis),
        args.facet,
        focal,
        &candidates,
        args.alpha,
        args.level,
        empty,
    )?;
    std::fs::write(&args.out, comparison_csv(&report, &ids))?;
    info!("{} of {} candidates rejected", report.rejected.len(), candidates.len());
    Ok(())
}

fn parse_cell(spec: &str, base: &ScenarioConfig) -> Result<ScenarioConfig> {
    let mut config = base.clone();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| Error::domain(format!("cell entry {part:?} is not key=value")))?;
        let bad = || Error::domain(format!("bad value in {part:?}"));
        match key.trim() {
            "n" => config.n = value.parse().map_err(|_| bad())?,
            "kappa01" => config.kappa01 = value.parse().map_err(|_| bad())?,
            "kappa00" => config.kappa00 = value.parse().map_err(|_| bad())?,
            "p_high" => config.p_high_kappa = value.parse().map_err(|_| bad())?,
            other => return Err(Error::domain(format!("unknown cell key {other:?}"))),
        }
    }
    config.validate()?;
    Ok(config)
}

fn bench(args: &BenchArgs) -> Result<()> {
    let base = ScenarioConfig {
        replications: args.reps,
        base_seed: args.seed,
        spread_reading: args.spread.into(),
        kappa_mode: match args.kappa_mode {
            KappaModeArg::Fixed => KappaMode::True,
            KappaModeArg::Estimate => KappaMode::Estimate,
        },
        ..ScenarioConfig::default()
    };
    let mut cells = Vec::new();
    for spec in &args.cells {
        let config = parse_cell(spec, &base)?;
        info!("running cell {spec}");
        cells.push(run_cell_with(&config, args.workers, &SolverConfig::default(), &KappaConfig::default())?);
    }
    write_bench_outputs(&args.out_dir, &cells, args.timestamp)
}

fn report(args: &ReportArgs) -> Result<()> {
    let (fit, ids) = load_fit(&args.fit)?.to_fit()?;
    let graph = match &args.edges {
        Some(path) => {
            let loaded = load_edge_list(path, &LoadOptions::default())?;
            let keep = ids
                .labels()
                .iter()
                .map(|l| {
                    loaded
                        .ids
                        .index_of(l)
                        .ok_or_else(|| Error::domain(format!("node {l:?} missing from the edge list")))
                })
                .collect::<Result<Vec<_>>>()?;
            Some(loaded.graph.induced_subgraph(&keep)?)
        }
        None => None,
    };
    std::fs::create_dir_all(&args.out_dir)?;
    std::fs::write(args.out_dir.join("ranking.csv"), ranking_csv(&fit.theta_hat, &ids))?;
    for facet in [Facet::Alpha, Facet::Beta] {
        for series in plot_series(&fit.theta_hat, graph.as_ref(), facet, args.top) {
            std::fs::write(args.out_dir.join(format!("{}.tsv", series.name)), series.to_tsv())?;
        }
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit_command(a),
        Command::Compare(a) => compare(a),
        Command::Bench(a) => bench(a),
        Command::Report(a) => report(a),
    }
}

fn with_context(path: &Path, e: Error) -> String {
    match e {
        Error::Io(io) => format!("{}: {io}", path.display()),
        other => other.to_string(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let path = match &cli.command {
                Command::Fit(a) => a.edges.clone(),
                Command::Compare(a) => a.fit.clone(),
                Command::Report(a) => a.fit.clone(),
                _ => PathBuf::new(),
            };
            eprintln!("error: {}", with_context(&path, e));
            ExitCode::from(2)
        }
    }
}
