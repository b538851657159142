#[allow(unused_imports)]
use num_traits::Float as _;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::centrality::eigenvector_centrality;
use super::corr::{bh_fdr, spearman_matrix, standardize_columns};
use super::enet::{elastic_net_cv, ElasticNetConfig};
use crate::error::{bail, Error, Result};
use crate::linalg::Matrix;
use crate::survstats::coxph_fit;

pub const CENTRALITY_HEADER: [&str; 4] = ["Term", "Group", "Degree", "Eigenvector Centrality"];

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub min_abs_rho: f64,
    pub max_fdr: f64,
    /// Univariable Cox Wald p-value gate for prognostic genes.
    pub gene_p: f64,
    /// Unit edge weights instead of `|rho|`.
    pub binary_adjacency: bool,
    pub enet: ElasticNetConfig,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self { min_abs_rho: 0.2, max_fdr: 0.05, gene_p: 0.01, binary_adjacency: false, enet: ElasticNetConfig::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum NodeGroup {
    Gene,
    ExtractorChannel,
}

impl NodeGroup {
    pub fn label(self) -> &'static str {
        match self {
            NodeGroup::Gene => "Gene",
            NodeGroup::ExtractorChannel => "Extractor Channel",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeRef {
    Feature(usize),
    Gene(usize),
    Risk,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorrEdge {
    pub a: NodeRef,
    pub b: NodeRef,
    pub rho: f64,
    pub p: f64,
    pub q: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CentralityRow {
    pub term: String,
    pub group: NodeGroup,
    pub degree: usize,
    pub centrality: f64,
}

/// Sorted by decreasing centrality, then term.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct CentralityTable {
    pub rows: Vec<CentralityRow>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkResult {
    /// Features passing the correlation screen against the risk score.
    pub feature_risk_edges: Vec<CorrEdge>,
    /// Screened features with a nonzero elastic-net coefficient.
    pub core_features: Vec<usize>,
    pub enet_lambda: f64,
    /// Genes passing the univariable Cox gate, with their hazard ratios.
    pub prognostic_genes: Vec<(usize, f64)>,
    /// Genes skipped because their Cox fit was degenerate or did not converge.
    pub skipped_genes: Vec<usize>,
    pub feature_gene_edges: Vec<CorrEdge>,
    pub table: CentralityTable,
}

fn screen(rho: &Matrix<f64>, p: &Matrix<f64>, cfg: &NetworkConfig, node: impl Fn(usize, usize) -> (NodeRef, NodeRef)) -> Result<Vec<CorrEdge>> {
    let cells: Vec<(usize, usize)> =
        (0..rho.rows()).flat_map(|i| (0..rho.cols()).map(move |j| (i, j))).filter(|&(i, j)| !rho[(i, j)].is_nan()).collect();
    let ps: Vec<f64> = cells.iter().map(|&(i, j)| p[(i, j)]).collect();
    let qs = bh_fdr(&ps)?;
    Ok(cells
        .iter()
        .zip(qs)
        .filter(|(&(i, j), q)| rho[(i, j)].abs() >= cfg.min_abs_rho && *q < cfg.max_fdr)
        .map(|(&(i, j), q)| {
            let (a, b) = node(i, j);
            CorrEdge { a, b, rho: rho[(i, j)], p: p[(i, j)], q }
        })
        .collect())
}

/// Two-branch pipeline. Branch one screens features against the risk score
/// and compresses them with a cross-validated elastic net; branch two keeps
/// genes with univariable Cox `p < gene_p`. Surviving features and genes are
/// linked by screened rank correlations and ranked by eigenvector centrality.
#[allow(clippy::too_many_arguments)]
pub fn build_network(
    features: &Matrix<f64>,
    feature_names: &[String],
    risk: &[f64],
    genes: &Matrix<f64>,
    gene_names: &[String],
    times: &[f64],
    events: &[bool],
    cfg: &NetworkConfig,
) -> Result<NetworkResult> {
    let n = features.rows();
    if risk.len() != n || genes.rows() != n || times.len() != n || events.len() != n {
        bail!(Shape, "inputs must share {n} aligned samples");
    }
    if feature_names.len() != features.cols() || gene_names.len() != genes.cols() {
        bail!(Shape, "name lists do not match matrix widths");
    }

    let sr = spearman_matrix(features, &Matrix::from_vec(n, 1, risk.to_vec()))?;
    let feature_risk_edges = screen(&sr.rho, &sr.p, cfg, |i, _| (NodeRef::Feature(i), NodeRef::Risk))?;
    let screened: Vec<usize> = feature_risk_edges
        .iter()
        .map(|e| match e.a {
            NodeRef::Feature(i) => i,
            _ => unreachable!(),
        })
        .collect();
    if screened.is_empty() {
        bail!(EmptyNetwork, "no feature passes the risk correlation screen");
    }
    let x = standardize_columns(&Matrix::from_fn(n, screened.len(), |r, c| features[(r, screened[c])]))?;
    let mean = risk.iter().sum::<f64>() / n as f64;
    let y: Vec<f64> = risk.iter().map(|r| r - mean).collect();
    let cv = elastic_net_cv(&x, &y, &cfg.enet)?;
    let core_features: Vec<usize> = (0..screened.len()).filter(|&c| cv.beta[c] != 0.0).map(|c| screened[c]).collect();
    if core_features.is_empty() {
        bail!(EmptyNetwork, "elastic net removed every screened feature");
    }

    let mut prognostic_genes = Vec::new();
    let mut skipped_genes = Vec::new();
    for g in 0..genes.cols() {
        match coxph_fit(times, events, &Matrix::from_vec(n, 1, genes.column(g))) {
            // a hazard ratio of exactly one carries no direction
            Ok(fit) if fit.wald_p[0] < cfg.gene_p && fit.beta[0].abs() > 0.0 => prognostic_genes.push((g, fit.beta[0].exp())),
            Ok(_) => {}
            Err(Error::Degenerate(_) | Error::Convergence(_)) => skipped_genes.push(g),
            Err(e) => return Err(e),
        }
    }
    if prognostic_genes.is_empty() {
        bail!(EmptyNetwork, "no gene passes the survival screen");
    }

    let fx = Matrix::from_fn(n, core_features.len(), |r, c| features[(r, core_features[c])]);
    let gx = Matrix::from_fn(n, prognostic_genes.len(), |r, c| genes[(r, prognostic_genes[c].0)]);
    let cross = spearman_matrix(&fx, &gx)?;
    let feature_gene_edges = screen(&cross.rho, &cross.p, cfg, |i, j| {
        (NodeRef::Feature(core_features[i]), NodeRef::Gene(prognostic_genes[j].0))
    })?;
    if feature_gene_edges.is_empty() {
        bail!(EmptyNetwork, "no feature-gene pair passes the correlation screen");
    }

    let mut nodes: Vec<NodeRef> = Vec::new();
    let index = |nodes: &mut Vec<NodeRef>, r: NodeRef| match nodes.iter().position(|&x| x == r) {
        Some(i) => i,
        None => {
            nodes.push(r);
            nodes.len() - 1
        }
    };
    let pairs: Vec<(usize, usize, f64)> = feature_gene_edges
        .iter()
        .map(|e| (index(&mut nodes, e.a), index(&mut nodes, e.b), if cfg.binary_adjacency { 1.0 } else { e.rho.abs() }))
        .collect();
    let mut adj = Matrix::zeros(nodes.len(), nodes.len());
    let mut degree = vec![0usize; nodes.len()];
    for &(a, b, w) in &pairs {
        adj[(a, b)] = w;
        adj[(b, a)] = w;
        degree[a] += 1;
        degree[b] += 1;
    }
    let scores = eigenvector_centrality(&adj)?;
    let mut rows: Vec<CentralityRow> = nodes
        .iter()
        .enumerate()
        .map(|(k, node)| {
            let (term, group) = match *node {
                NodeRef::Feature(i) => (feature_names[i].clone(), NodeGroup::ExtractorChannel),
                NodeRef::Gene(g) => (gene_names[g].clone(), NodeGroup::Gene),
                NodeRef::Risk => unreachable!(),
            };
            CentralityRow { term, group, degree: degree[k], centrality: scores[k] }
        })
        .collect();
    rows.sort_by(|a, b| b.centrality.total_cmp(&a.centrality).then_with(|| a.term.cmp(&b.term)));

    Ok(NetworkResult {
        feature_risk_edges,
        core_features,
        enet_lambda: cv.lambda,
        prognostic_genes,
        skipped_genes,
        feature_gene_edges,
        table: CentralityTable { rows },
    })
}
