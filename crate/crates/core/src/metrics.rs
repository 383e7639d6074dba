use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::PosteriorEvaluation;

pub fn rmse(truth: &[f64], means: &[f64]) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::EmptyEvaluationSet);
    }
    if truth.len() != means.len() {
        return Err(Error::InvalidArgument("rmse inputs differ in length".into()));
    }
    let sse: f64 = truth.iter().zip(means).map(|(f, m)| (m - f).powi(2)).sum();
    Ok((sse / truth.len() as f64).sqrt())
}

/// Mean negative log predictive density with observation noise `obs_noise_var`
/// added to every predictive variance.
pub fn nlpd(truth: &[f64], means: &[f64], variances: &[f64], obs_noise_var: f64) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::EmptyEvaluationSet);
    }
    if truth.len() != means.len() || truth.len() != variances.len() {
        return Err(Error::InvalidArgument("nlpd inputs differ in length".into()));
    }
    if !(obs_noise_var > 0.0) {
        return Err(Error::InvalidArgument("observation noise variance must be positive".into()));
    }
    let total: f64 = truth
        .iter()
        .zip(means)
        .zip(variances)
        .map(|((f, m), v)| {
            let s = v.max(0.0) + obs_noise_var;
            0.5 * (2.0 * std::f64::consts::PI * s).ln() + (f - m).powi(2) / (2.0 * s)
        })
        .sum();
    Ok(total / truth.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentMetrics {
    pub id: u32,
    pub local_rmse: Option<f64>,
    pub local_nlpd: Option<f64>,
    pub overlap_rmse: Option<f64>,
    pub overlap_nlpd: Option<f64>,
}

/// Network summaries are plain means over the agents that have a value;
/// `None` marks an empty evaluation set rather than a zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSnapshot {
    pub step: u32,
    pub agents: Vec<AgentMetrics>,
    pub network_local_rmse: Option<f64>,
    pub network_local_nlpd: Option<f64>,
    pub network_overlap_rmse: Option<f64>,
    pub network_overlap_nlpd: Option<f64>,
}

/// One agent's view for evaluation: its predictions over the grid points
/// it owns, plus which of those points it shares with another agent.
pub struct AgentEvaluation<'a> {
    pub id: u32,
    pub obs_noise_var: f64,
    /// Grid indices inside the agent's subdomain.
    pub indices: &'a [usize],
    /// Same length as `indices`.
    pub predictions: &'a [PosteriorEvaluation],
    /// Same length as `indices`: point also lies in another subdomain.
    pub shared: &'a [bool],
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn scores(truth: &[f64], preds: &[&PosteriorEvaluation], noise: f64) -> (Option<f64>, Option<f64>) {
    if truth.is_empty() {
        return (None, None);
    }
    let means: Vec<f64> = preds.iter().map(|p| p.mean).collect();
    let vars: Vec<f64> = preds.iter().map(|p| p.variance).collect();
    (rmse(truth, &means).ok(), nlpd(truth, &means, &vars, noise).ok())
}

pub fn evaluate_agents(step: u32, truth: &[f64], agents: &[AgentEvaluation<'_>]) -> MetricSnapshot {
    let per: Vec<AgentMetrics> = agents
        .iter()
        .map(|a| {
            let local_truth: Vec<f64> = a.indices.iter().map(|&i| truth[i]).collect();
            let local_preds: Vec<&PosteriorEvaluation> = a.predictions.iter().collect();
            let (local_rmse, local_nlpd) = scores(&local_truth, &local_preds, a.obs_noise_var);
            let (ov_truth, ov_preds): (Vec<f64>, Vec<&PosteriorEvaluation>) = a
                .indices
                .iter()
                .zip(a.predictions)
                .zip(a.shared)
                .filter(|(_, s)| **s)
                .map(|((&i, p), _)| (truth[i], p))
                .unzip();
            let (overlap_rmse, overlap_nlpd) = scores(&ov_truth, &ov_preds, a.obs_noise_var);
            AgentMetrics {
                id: a.id,
                local_rmse,
                local_nlpd,
                overlap_rmse,
                overlap_nlpd,
            }
        })
        .collect();
    MetricSnapshot {
        step,
        network_local_rmse: mean_of(per.iter().map(|a| a.local_rmse)),
        network_local_nlpd: mean_of(per.iter().map(|a| a.local_nlpd)),
        network_overlap_rmse: mean_of(per.iter().map(|a| a.overlap_rmse)),
        network_overlap_nlpd: mean_of(per.iter().map(|a| a.overlap_nlpd)),
        agents: per,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn naive_rmse(t: &[f64], m: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..t.len() {
            s += (m[i] - t[i]) * (m[i] - t[i]);
        }
        (s / t.len() as f64).sqrt()
    }

    fn naive_nlpd(t: &[f64], m: &[f64], v: &[f64], e: f64) -> f64 {
        let mut s = 0.0;
        for i in 0..t.len() {
            let var = v[i] + e;
            s += 0.5 * (2.0 * std::f64::consts::PI * var).ln() + (t[i] - m[i]).powi(2) / (2.0 * var);
        }
        s / t.len() as f64
    }

    #[test]
    fn rmse_basics() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[0.0, 0.0], &[1.0, -1.0]).unwrap(), 1.0);
        assert_eq!(rmse(&[], &[]), Err(Error::EmptyEvaluationSet));
    }

    #[test]
    fn nlpd_zero_at_unit_density() {
        let s = 1.0 / (2.0 * std::f64::consts::PI);
        let v = nlpd(&[0.3], &[0.3], &[s - 0.01], 0.01).unwrap();
        assert_abs_diff_eq!(v, 0.0, epsilon = 1e-15);
        assert_eq!(nlpd(&[], &[], &[], 0.1), Err(Error::EmptyEvaluationSet));
    }

    #[test]
    fn nlpd_penalizes_inflated_variance_at_zero_error() {
        let t = [0.1, 0.2, 0.3];
        let a = nlpd(&t, &t, &[0.1; 3], 0.01).unwrap();
        let b = nlpd(&t, &t, &[0.2; 3], 0.01).unwrap();
        assert!(b > a);
    }

    #[test]
    fn disjoint_agents_have_no_overlap_metrics() {
        let truth = [0.0, 1.0, 2.0, 3.0];
        let preds = [PosteriorEvaluation { mean: 0.0, variance: 0.1 }; 2];
        let a = AgentEvaluation { id: 1, obs_noise_var: 0.01, indices: &[0, 1], predictions: &preds, shared: &[false, false] };
        let b = AgentEvaluation { id: 2, obs_noise_var: 0.01, indices: &[2, 3], predictions: &preds, shared: &[false, false] };
        let snap = evaluate_agents(1, &truth, &[a, b]);
        assert!(snap.network_overlap_rmse.is_none());
        assert!(snap.agents.iter().all(|m| m.overlap_rmse.is_none()));
        assert!(snap.network_local_rmse.is_some());
    }

    #[test]
    fn single_agent_local_equals_global() {
        let truth = [0.0, 1.0, 2.0];
        let preds: Vec<PosteriorEvaluation> =
            [0.1, 0.9, 2.5].iter().map(|&m| PosteriorEvaluation { mean: m, variance: 0.05 }).collect();
        let a = AgentEvaluation { id: 1, obs_noise_var: 0.01, indices: &[0, 1, 2], predictions: &preds, shared: &[false; 3] };
        let snap = evaluate_agents(3, &truth, &[a]);
        let means: Vec<f64> = preds.iter().map(|p| p.mean).collect();
        assert_eq!(snap.network_local_rmse, Some(rmse(&truth, &means).unwrap()));
        assert_eq!(snap.network_local_nlpd, Some(nlpd(&truth, &means, &[0.05; 3], 0.01).unwrap()));
    }

    proptest! {
        #[test]
        fn matches_naive_loops(
            pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, 0.0f64..2.0), 1..50),
            noise in 0.001f64..1.0,
        ) {
            let t: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let m: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let v: Vec<f64> = pairs.iter().map(|p| p.2).collect();
            prop_assert!((rmse(&t, &m).unwrap() - naive_rmse(&t, &m)).abs() <= 1e-12);
            prop_assert!((nlpd(&t, &m, &v, noise).unwrap() - naive_nlpd(&t, &m, &v, noise)).abs() <= 1e-12);
            let mut rt = t.clone(); rt.reverse();
            let mut rm = m.clone(); rm.reverse();
            let mut rv = v.clone(); rv.reverse();
            prop_assert!((rmse(&rt, &rm).unwrap() - rmse(&t, &m).unwrap()).abs() <= 1e-12);
            prop_assert!((nlpd(&rt, &rm, &rv, noise).unwrap() - nlpd(&t, &m, &v, noise).unwrap()).abs() <= 1e-12);
        }

        #[test]
        fn nlpd_decreases_with_error(err in 0.01f64..3.0, var in 0.01f64..2.0) {
            let a = nlpd(&[0.0], &[err], &[var], 0.01).unwrap();
            let b = nlpd(&[0.0], &[err * 0.5], &[var], 0.01).unwrap();
            prop_assert!(b < a);
        }
    }
}
