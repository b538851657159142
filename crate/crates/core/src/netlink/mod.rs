//! Pathology-feature / gene network: rank-correlation screening with FDR
//! control, elastic-net compression, network assembly and eigenvector
//! centrality.

mod centrality;
mod corr;
mod enet;
mod network;
mod synth;

pub use centrality::{connected_components, eigenvector_centrality, principal_eigenvector, CENTRALITY_TOL};
pub use corr::{average_ranks, bh_fdr, spearman, spearman_matrix, standardize_columns, SpearmanMatrix};
pub use enet::{
    elastic_net_cv, elastic_net_fit, kkt_residual, lambda_max, soft_threshold, ElasticNetConfig, ElasticNetCv,
};
pub use network::{
    build_network, CentralityRow, CentralityTable, CorrEdge, NetworkConfig, NetworkResult, NodeGroup, NodeRef,
    CENTRALITY_HEADER,
};
pub use synth::{synth_network_data, NetworkData, NetworkSynthConfig};
