//! Decentralized Gaussian-process mapping of a scalar field by agents with
//! overlapping subdomains that exchange small posterior summaries.

pub mod btip;
pub mod config;
pub mod error;
pub mod geometry;
pub mod gp;
pub mod kernel;
pub mod metrics;
pub mod output;
pub mod protocol;
pub mod receiver;
pub mod sim;
pub mod sparse;

pub use btip::{
    btip_closed_form, btip_gradient, btip_objective, build_packet_library, select_edge_inducing, BtipProblem,
    EdgeGeometry, EdgeInducingSet, Integrator, Optimizer,
};
pub use error::{Error, Result};
pub use geometry::{intersect, quadrature, target_set, OverlapRegion, QuadratureGrid, Subdomain, TargetSet};
pub use gp::{posterior_at, posterior_batch, AugmentedDataset, ExactPosterior, Measurement, PosteriorEvaluation};
pub use kernel::{kernel_eval, Kernel};
pub use metrics::{nlpd, rmse, MetricSnapshot};
pub use protocol::{decode_packet, encode_packet, CandidateLibrary, Packet};
pub use receiver::{one_point_update, receiver_cost, select_packet, AssimilationDecision, ConsistencyWeights};
pub use sparse::{fit_sparse, sparse_posterior_at, InducingSet, SparsePosterior};
pub use config::ScenarioConfig;
pub use sim::{run_scenario, RunArtifacts, ScalarField};
