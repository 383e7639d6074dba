//! Receiver-side assimilation: score every pooled packet by how well the
//! one-point-updated posterior agrees with all received packets, keep the
//! best one as a fictitious measurement.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{AugmentedDataset, ExactPosterior, Measurement, PosteriorEvaluation};
use crate::kernel::Kernel;
use crate::protocol::{CandidateLibrary, Packet};

/// Mean and variance consistency weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyWeights {
    pub mean: f64,
    pub variance: f64,
}

impl ConsistencyWeights {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        if !(mean >= 0.0 && variance >= 0.0 && mean.is_finite() && variance.is_finite()) {
            return Err(Error::InvalidArgument("consistency weights must be non-negative".into()));
        }
        Ok(ConsistencyWeights { mean, variance })
    }
}

/// Posterior at `x` after conditioning on `packet` as a noisy observation
/// with noise variance `packet.variance`.
pub fn one_point_update_with(post: &ExactPosterior, packet: &Packet, x: &[f64]) -> PosteriorEvaluation {
    let u = &packet.location;
    let gain_den = post.covariance(u, u) + packet.variance;
    let cross = post.covariance(x, u);
    let mean = post.mean(x) + cross / gain_den * (packet.mean - post.mean(u));
    let variance = post.covariance(x, x) - cross * cross / gain_den;
    PosteriorEvaluation {
        mean,
        variance: variance.max(0.0),
    }
}

pub fn one_point_update(
    kernel: &Kernel,
    data: &AugmentedDataset,
    packet: &Packet,
    x: &[f64],
) -> Result<PosteriorEvaluation> {
    if !(packet.variance > 0.0) {
        return Err(Error::InvalidArgument("packet variance must be positive".into()));
    }
    let post = ExactPosterior::fit(*kernel, data)?;
    Ok(one_point_update_with(&post, packet, x))
}

/// Overlap-consistency cost of assimilating `candidate`, summed over every
/// packet in the pooled library (the candidate included).
pub fn receiver_cost(
    kernel: &Kernel,
    data: &AugmentedDataset,
    candidate: &Packet,
    library: &CandidateLibrary,
    weights: ConsistencyWeights,
) -> Result<f64> {
    if library.is_empty() {
        return Err(Error::EmptyLibrary);
    }
    let post = ExactPosterior::fit(*kernel, data)?;
    Ok(library
        .pooled()
        .map(|(_, _, v)| {
            let upd = one_point_update_with(&post, candidate, &v.location);
            weights.mean * (upd.mean - v.mean).powi(2) + weights.variance * (upd.variance - v.variance).powi(2)
        })
        .sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssimilationDecision {
    pub chosen: Packet,
    /// `(sender_id, index within that sender's packets)`.
    pub key: (u32, usize),
    pub cost: f64,
    pub per_candidate_costs: Vec<((u32, usize), f64)>,
}

impl AssimilationDecision {
    pub fn as_measurement(&self) -> Measurement {
        Measurement {
            location: self.chosen.location.clone(),
            value: self.chosen.mean,
            noise_variance: self.chosen.variance,
        }
    }
}

/// Exact finite optimization over the pooled library. The posterior is
/// evaluated jointly at all packet locations once, after which each
/// candidate's cost is a rank-one correction. Ties keep the first packet in
/// `(sender_id, index)` order.
pub fn select_packet(
    kernel: &Kernel,
    data: &AugmentedDataset,
    library: &CandidateLibrary,
    weights: ConsistencyWeights,
) -> Result<AssimilationDecision> {
    if library.is_empty() {
        return Err(Error::EmptyLibrary);
    }
    let post = ExactPosterior::fit(*kernel, data)?;
    let pooled: Vec<(u32, usize, &Packet)> = library.pooled().collect();
    let locations: Vec<Vec<f64>> = pooled.iter().map(|(_, _, p)| p.location.clone()).collect();
    let (mu, sigma) = post.joint(&locations);
    let n = pooled.len();

    let mut per_candidate_costs = Vec::with_capacity(n);
    let mut best: Option<(usize, f64)> = None;
    for (k, &(sender, idx, cand)) in pooled.iter().enumerate() {
        let den = sigma[(k, k)] + cand.variance;
        let innovation = cand.mean - mu[k];
        let cost: f64 = (0..n)
            .map(|v| {
                let gain = sigma[(v, k)] / den;
                let mean = mu[v] + gain * innovation;
                let var = (sigma[(v, v)] - gain * sigma[(k, v)]).max(0.0);
                let target = pooled[v].2;
                weights.mean * (mean - target.mean).powi(2) + weights.variance * (var - target.variance).powi(2)
            })
            .sum();
        per_candidate_costs.push(((sender, idx), cost));
        if best.is_none_or(|(_, c)| cost < c) {
            best = Some((k, cost));
        }
    }
    let (k, cost) = best.expect("library is non-empty");
    Ok(AssimilationDecision {
        chosen: pooled[k].2.clone(),
        key: (pooled[k].0, pooled[k].1),
        cost,
        per_candidate_costs,
    })
}

/// Appends the chosen packet to the fictitious block.
pub fn retain(data: &mut AugmentedDataset, decision: &AssimilationDecision) {
    data.push_fictitious(decision.as_measurement());
}
