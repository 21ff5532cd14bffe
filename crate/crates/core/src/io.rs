//! Edge-list files, preprocessing and report formats.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{CurvatureVector, FitResult};
use crate::inference::{Facet, MultipleComparisonReport};
use crate::model::{KappaVector, Sign, SignedAdjacency, Theta};

/// Original node labels, indexed by dense node id.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdMap {
    labels: Vec<String>,
}

impl IdMap {
    /// Labels `0..n`.
    pub fn identity(n: usize) -> Self {
        Self { labels: (0..n).map(|i| i.to_string()).collect() }
    }

    pub fn from_labels(labels: Vec<String>) -> Result<Self> {
        let unique: BTreeSet<&String> = labels.iter().collect();
        if unique.len() != labels.len() {
            return Err(Error::domain("node labels must be unique"));
        }
        Ok(Self { labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, index: usize) -> &str {
        &self.labels[index]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Restriction to the listed dense indices, in order.
    pub fn subset(&self, keep: &[usize]) -> Self {
        Self { labels: keep.iter().map(|&i| self.labels[i].clone()).collect() }
    }

    fn all_numeric(&self) -> bool {
        self.labels.iter().all(|l| l.parse::<u64>().is_ok())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LoadOptions {
    /// Field separator; any run of whitespace when unset.
    pub delimiter: Option<char>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoadedGraph {
    pub graph: SignedAdjacency,
    pub ids: IdMap,
}

fn parse_sign(field: &str, line: usize) -> Result<Sign> {
    match field {
        "1" | "+1" | "+" => Ok(Sign::Positive),
        "-1" | "-" => Ok(Sign::Negative),
        other => Err(Error::Parse { line, message: format!("sign must be +1 or -1, got {other:?}") }),
    }
}

/// Parses edge-list text: `src dst sign` per line, `#` comments, and an
/// optional `# nodes: N` header declaring integer nodes `0..N`.
///
/// Integer labels are ordered numerically, any other labels lexicographically.
pub fn parse_edge_list(text: &str, options: &LoadOptions) -> Result<LoadedGraph> {
    let mut raw: Vec<(usize, String, String, Sign)> = Vec::new();
    let mut declared: Option<usize> = None;
    for (k, line) in text.lines().enumerate() {
        let lineno = k + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('#') {
            if let Some(v) = comment.trim().strip_prefix("nodes:") {
                let n = v.trim().parse().map_err(|_| Error::Parse {
                    line: lineno,
                    message: format!("bad node count {:?}", v.trim()),
                })?;
                declared = Some(n);
            }
            continue;
        }
        let fields: Vec<&str> = match options.delimiter {
            Some(d) => trimmed.split(d).map(str::trim).collect(),
            None => trimmed.split_whitespace().collect(),
        };
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected 3 fields (src, dst, sign), found {}", fields.len()),
            });
        }
        let sign = parse_sign(fields[2], lineno)?;
        if fields[0] == fields[1] {
            return Err(Error::SelfLoop { line: lineno, node: fields[0].to_string() });
        }
        raw.push((lineno, fields[0].to_string(), fields[1].to_string(), sign));
    }

    let mut names: BTreeSet<String> = raw.iter().flat_map(|r| [r.1.clone(), r.2.clone()]).collect();
    let numeric = names.iter().all(|s| s.parse::<u64>().is_ok());
    if let Some(n) = declared {
        if !numeric {
            return Err(Error::Parse { line: 1, message: "node count header needs integer node ids".into() });
        }
        if let Some(big) = names.iter().map(|s| s.parse::<u64>().unwrap()).find(|&v| v >= n as u64) {
            return Err(Error::Parse { line: 1, message: format!("node {big} exceeds declared count {n}") });
        }
        names.extend((0..n).map(|i| i.to_string()));
    }
    let mut labels: Vec<String> = names.into_iter().collect();
    if numeric {
        labels.sort_by_key(|s| s.parse::<u64>().unwrap());
        labels.dedup_by_key(|s| s.parse::<u64>().unwrap());
    }
    let index: BTreeMap<&str, usize> = labels.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let lookup = |s: &str| {
        if numeric {
            let v: u64 = s.parse().unwrap();
            labels.iter().position(|l| l.parse::<u64>().unwrap() == v).unwrap()
        } else {
            index[s]
        }
    };
    let mut graph = SignedAdjacency::new(labels.len());
    let mut seen = BTreeSet::new();
    for (lineno, src, dst, sign) in &raw {
        let (i, j) = (lookup(src), lookup(dst));
        if i == j {
            return Err(Error::SelfLoop { line: *lineno, node: src.clone() });
        }
        if !seen.insert((i, j)) {
            return Err(Error::DuplicateEdge { line: *lineno, src: src.clone(), dst: dst.clone() });
        }
        graph.insert(i, j, *sign)?;
    }
    Ok(LoadedGraph { graph, ids: IdMap::from_labels(labels)? })
}

pub fn load_edge_list(path: &Path, options: &LoadOptions) -> Result<LoadedGraph> {
    let text = std::fs::read_to_string(path)?;
    parse_edge_list(&text, options)
}

/// Edge-list text with a node-count header when labels are `0..n`.
pub fn format_edge_list(graph: &SignedAdjacency, ids: &IdMap) -> String {
    let mut out = String::new();
    let identity = ids.all_numeric() && ids.labels().iter().enumerate().all(|(i, l)| l == &i.to_string());
    if identity {
        writeln!(out, "# nodes: {}", graph.n()).expect("writing to a String");
    }
    for (i, j, s) in graph.edges() {
        writeln!(out, "{}\t{}\t{}", ids.label(i), ids.label(j), s.value()).expect("writing to a String");
    }
    out
}

pub fn write_edge_list(path: &Path, graph: &SignedAdjacency, ids: &IdMap) -> Result<()> {
    std::fs::write(path, format_edge_list(graph, ids))?;
    Ok(())
}

/// `index<TAB>label` lines.
pub fn write_id_map(path: &Path, ids: &IdMap) -> Result<()> {
    let mut out = String::from("index\tlabel\n");
    for (i, l) in ids.labels().iter().enumerate() {
        writeln!(out, "{i}\t{l}").expect("writing to a String");
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RemovalReason {
    LowDegree,
    NegativeDominant,
}

impl RemovalReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RemovalReason::LowDegree => "low-degree",
            RemovalReason::NegativeDominant => "negative-dominant",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Removal {
    /// Index in the input graph.
    pub node: usize,
    pub round: usize,
    pub reason: RemovalReason,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Preprocessed {
    pub graph: SignedAdjacency,
    /// Input indices of the surviving nodes, ascending.
    pub kept: Vec<usize>,
    pub removals: Vec<Removal>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PreprocessOptions {
    /// Minimum number of incident signed edges (sent plus received).
    pub min_degree: usize,
    pub drop_negative_dominant: bool,
    /// Stop after one round instead of iterating to a fixed point.
    pub single_pass: bool,
}

/// Removes nodes below the degree floor and, when asked, nodes with more
/// negative than positive incident edges, round by round.
pub fn preprocess(graph: &SignedAdjacency, options: PreprocessOptions) -> Result<Preprocessed> {
    let mut alive: Vec<bool> = vec![true; graph.n()];
    let mut removals = Vec::new();
    let mut round = 0;
    loop {
        round += 1;
        let mut pos = vec![0usize; graph.n()];
        let mut neg = vec![0usize; graph.n()];
        for (i, j, s) in graph.edges() {
            if alive[i] && alive[j] {
                let counts = if s == Sign::Positive { &mut pos } else { &mut neg };
                counts[i] += 1;
                counts[j] += 1;
            }
        }
        let mut removed_any = false;
        for v in 0..graph.n() {
            if !alive[v] {
                continue;
            }
            let reason = if pos[v] + neg[v] < options.min_degree {
                Some(RemovalReason::LowDegree)
            } else if options.drop_negative_dominant && neg[v] > pos[v] {
                Some(RemovalReason::NegativeDominant)
            } else {
                None
            };
            if let Some(reason) = reason {
                removals.push(Removal { node: v, round, reason });
                removed_any = true;
            }
        }
        for r in removals.iter().filter(|r| r.round == round) {
            alive[r.node] = false;
        }
        if !removed_any || options.single_pass {
            break;
        }
    }
    let kept: Vec<usize> = (0..graph.n()).filter(|&v| alive[v]).collect();
    if kept.is_empty() {
        return Err(Error::PreprocessingEmpty);
    }
    info!("preprocessing kept {} of {} nodes", kept.len(), graph.n());
    Ok(Preprocessed { graph: graph.induced_subgraph(&kept)?, kept, removals })
}

/// `node<TAB>round<TAB>reason` lines.
pub fn removal_log(removals: &[Removal], ids: &IdMap) -> String {
    let mut out = String::from("node\tround\treason\n");
    for r in removals {
        writeln!(out, "{}\t{}\t{}", ids.label(r.node), r.round, r.reason.as_str()).expect("writing to a String");
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub newton_iterations: usize,
    pub final_residual_inf_norm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa_threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa_class_high: Option<Vec<usize>>,
}

/// On-disk fit. Floats are written in shortest round-trip form, so a
/// reload reproduces every value bit for bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitFile {
    pub n: usize,
    pub node_ids: Vec<String>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub alpha_check: Vec<f64>,
    pub beta_check: Vec<f64>,
    pub kappa: Vec<f64>,
    pub kappa00: f64,
    pub kappa01: f64,
    pub u_hat: Vec<f64>,
    pub u_check: Vec<f64>,
    pub diagnostics: Diagnostics,
}

impl FitFile {
    pub fn from_fit(fit: &FitResult, ids: &IdMap, diagnostics: Diagnostics) -> Self {
        Self {
            n: fit.n(),
            node_ids: ids.labels().to_vec(),
            alpha: fit.theta_hat.alpha().to_vec(),
            beta: fit.theta_hat.beta().to_vec(),
            alpha_check: fit.theta_check.alpha().to_vec(),
            beta_check: fit.theta_check.beta().to_vec(),
            kappa: fit.kappa.values().to_vec(),
            kappa00: fit.kappa.kappa00(),
            kappa01: fit.kappa.kappa01(),
            u_hat: fit.u_hat.values().to_vec(),
            u_check: fit.u_check.values().to_vec(),
            diagnostics,
        }
    }

    pub fn to_fit(&self) -> Result<(FitResult, IdMap)> {
        let n = self.n;
        let lens = [self.node_ids.len(), self.alpha.len(), self.beta.len(), self.kappa.len()];
        if lens.iter().any(|&l| l != n) || self.u_hat.len() != 2 * n || self.u_check.len() != 2 * n {
            return Err(Error::Dimension(format!("fit file arrays do not match n = {n}")));
        }
        let fit = FitResult {
            theta_check: Theta::new(self.alpha_check.clone(), self.beta_check.clone())?,
            theta_hat: Theta::new(self.alpha.clone(), self.beta.clone())?,
            u_check: CurvatureVector::from_values(self.u_check.clone())?,
            u_hat: CurvatureVector::from_values(self.u_hat.clone())?,
            kappa: KappaVector::new(self.kappa.clone(), self.kappa00, self.kappa01)?,
            newton_iterations: self.diagnostics.newton_iterations,
            final_residual_inf_norm: self.diagnostics.final_residual_inf_norm,
        };
        Ok((fit, IdMap::from_labels(self.node_ids.clone())?))
    }
}

pub fn save_fit(path: &Path, file: &FitFile) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(file)? + "\n")?;
    Ok(())
}

pub fn load_fit(path: &Path) -> Result<FitFile> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub const COMPARISON_HEADER: &str = "focal,candidate,facet,point,delta_hat,p_value,lower,upper,indiv_sig,multi_sig";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn comparison_csv(report: &MultipleComparisonReport, ids: &IdMap) -> String {
    let mut out = String::from(COMPARISON_HEADER);
    out.push('\n');
    for r in &report.results {
        let p = &r.pair;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            csv_field(ids.label(p.i)),
            csv_field(ids.label(p.j)),
            p.facet.name(),
            p.point,
            p.delta_hat,
            p.p_value,
            p.lower,
            p.upper,
            r.indiv_sig,
            r.multi_sig
        )
        .expect("writing to a String");
    }
    out
}

/// Nodes ordered by decreasing estimate; ties by index.
pub fn ranking(theta: &Theta, facet: Facet) -> Vec<(usize, f64)> {
    let values = match facet {
        Facet::Alpha => theta.alpha(),
        Facet::Beta => theta.beta(),
    };
    let mut order: Vec<(usize, f64)> = values.iter().copied().enumerate().collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    order
}

/// `node,facet,estimate,rank` for both facets.
pub fn ranking_csv(theta: &Theta, ids: &IdMap) -> String {
    let mut out = String::from("node,facet,estimate,rank\n");
    for facet in [Facet::Alpha, Facet::Beta] {
        for (rank, (node, est)) in ranking(theta, facet).into_iter().enumerate() {
            writeln!(out, "{},{},{},{}", csv_field(ids.label(node)), facet.name(), est, rank + 1)
                .expect("writing to a String");
        }
    }
    out
}

/// Two-column series for one facet's top nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct PlotSeries {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

impl PlotSeries {
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (x, y) in &self.points {
            writeln!(out, "{x}\t{y}").expect("writing to a String");
        }
        out
    }
}

/// Degree bars and rescaled status line for the `top` highest-ranked nodes.
///
/// Positive degrees are plotted above zero and negative degrees below; the
/// status line maps the shown estimates linearly onto `[0, max positive degree]`.
pub fn plot_series(theta: &Theta, graph: Option<&SignedAdjacency>, facet: Facet, top: usize) -> Vec<PlotSeries> {
    let shown: Vec<(usize, f64)> = ranking(theta, facet).into_iter().take(top).collect();
    let prefix = match facet {
        Facet::Alpha => "out",
        Facet::Beta => "in",
    };
    let mut out = Vec::new();
    let mut scale_top = 1.0;
    if let Some(g) = graph {
        let mut pos = vec![0.0; g.n()];
        let mut neg = vec![0.0; g.n()];
        for (i, j, s) in g.edges() {
            let node = if facet == Facet::Alpha { i } else { j };
            if s == Sign::Positive {
                pos[node] += 1.0;
            } else {
                neg[node] += 1.0;
            }
        }
        let bars = |v: &[f64], sign: f64| -> Vec<(f64, f64)> {
            shown.iter().enumerate().map(|(k, &(node, _))| ((k + 1) as f64, sign * v[node])).collect()
        };
        scale_top = shown.iter().map(|&(node, _)| pos[node]).fold(0.0, f64::max).max(1.0);
        out.push(PlotSeries { name: format!("{prefix}_degree_positive"), points: bars(&pos, 1.0) });
        out.push(PlotSeries { name: format!("{prefix}_degree_negative"), points: bars(&neg, -1.0) });
    }
    let lo = shown.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    let hi = shown.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    let line = shown
        .iter()
        .enumerate()
        .map(|(k, &(_, est))| {
            let y = if hi > lo { (est - lo) / (hi - lo) * scale_top } else { scale_top / 2.0 };
            ((k + 1) as f64, y)
        })
        .collect();
    out.push(PlotSeries { name: format!("{prefix}_status_rescaled"), points: line });
    out
}
