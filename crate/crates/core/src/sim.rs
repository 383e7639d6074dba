//! Synchronized-clock simulation: every step runs sense, send, select and
//! retain as barrier-separated phases, then records metrics.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::btip::{build_packet_library, select_edge_inducing, BtipProblem, EdgeGeometry, EdgeInducingSet};
use crate::config::{eval_grid, FieldKind, NlpdNoise, Predictor, ScenarioConfig, SenderConditioning};
use crate::error::{Error, Result};
use crate::geometry::{intersect, target_set, Subdomain};
use crate::gp::{AugmentedDataset, ExactPosterior, Measurement, PosteriorEvaluation};
use crate::kernel::Kernel;
use crate::metrics::{evaluate_agents, AgentEvaluation, MetricSnapshot};
use crate::protocol::{CandidateLibrary, Packet};
use crate::receiver::{retain, select_packet, AssimilationDecision, ConsistencyWeights};
use crate::sparse::{fit_sparse, InducingSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: Vec<f64>,
    pub amplitude: f64,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ScalarField {
    GaussianBumps(Vec<Bump>),
    Peaks,
    SinCos,
}

impl ScalarField {
    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        match cfg.field.kind {
            FieldKind::GaussianBumps => ScalarField::GaussianBumps(
                cfg.field
                    .bumps
                    .iter()
                    .map(|b| Bump {
                        center: b.center.to_vec(),
                        amplitude: b.amplitude,
                        width: b.width,
                    })
                    .collect(),
            ),
            FieldKind::Peaks => ScalarField::Peaks,
            FieldKind::SinCos => ScalarField::SinCos,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            ScalarField::GaussianBumps(bumps) => bumps
                .iter()
                .map(|b| {
                    let d2: f64 = x.iter().zip(&b.center).map(|(a, c)| (a - c).powi(2)).sum();
                    b.amplitude * (-d2 / (2.0 * b.width * b.width)).exp()
                })
                .sum(),
            ScalarField::Peaks => {
                // peaks() stretched from [-3, 3]^2 to [-6, 6]^2 and scaled to unit-ish range
                let (u, v) = (x[0] / 2.0, x[1] / 2.0);
                let p = 3.0 * (1.0 - u).powi(2) * (-(u * u) - (v + 1.0).powi(2)).exp()
                    - 10.0 * (u / 5.0 - u.powi(3) - v.powi(5)) * (-u * u - v * v).exp()
                    - (-(u + 1.0).powi(2) - v * v).exp() / 3.0;
                p / 6.0
            }
            ScalarField::SinCos => (0.6 * x[0]).sin() * (0.5 * x[1]).cos(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AgentState {
    pub id: u32,
    pub subdomain: Subdomain,
    pub kernel: Kernel,
    /// True measurement noise std.
    pub sensor_noise_std: f64,
    /// Modeled noise std; measurements carry its square as noise variance.
    pub model_noise_std: f64,
    pub data: AugmentedDataset,
    pub out_neighbors: Vec<u32>,
    pub in_neighbors: Vec<u32>,
    rng: ChaCha8Rng,
}

impl AgentState {
    pub fn new(id: u32, subdomain: Subdomain, kernel: Kernel, sensor_noise_std: f64, model_noise_std: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::from(id));
        AgentState {
            id,
            subdomain,
            kernel,
            sensor_noise_std,
            model_noise_std,
            data: AugmentedDataset::new(),
            out_neighbors: Vec::new(),
            in_neighbors: Vec::new(),
            rng,
        }
    }
}

/// Draws a location uniformly from the agent's subdomain by rejection from
/// its bounding box, observes the field with the true noise, and appends the
/// result to the raw block.
pub fn sample_measurement(agent: &mut AgentState, field: &ScalarField) -> Measurement {
    let bb = agent.subdomain.bounding_box();
    let location = loop {
        let x: Vec<f64> = bb
            .lower
            .iter()
            .zip(&bb.upper)
            .map(|(&lo, &hi)| agent.rng.random_range(lo..=hi))
            .collect();
        if agent.subdomain.contains(&x) {
            break x;
        }
    };
    let noise = if agent.sensor_noise_std > 0.0 {
        Normal::new(0.0, agent.sensor_noise_std)
            .expect("finite std")
            .sample(&mut agent.rng)
    } else {
        0.0
    };
    let m = Measurement {
        value: field.eval(&location) + noise,
        location,
        noise_variance: agent.model_noise_std * agent.model_noise_std,
    };
    agent.data.push_raw(m.clone());
    m
}

#[derive(Debug, Clone)]
struct Edge {
    from: u32,
    to: u32,
    /// `None` when the overlap has no quadrature nodes.
    geometry: Option<Arc<EdgeGeometry>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentPackets {
    pub to: u32,
    pub inducing: EdgeInducingSet,
    pub packets: Vec<Packet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentStepRecord {
    pub id: u32,
    pub measurement: Measurement,
    pub sent: Vec<SentPackets>,
    pub decision: Option<AssimilationDecision>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u32,
    pub agents: Vec<AgentStepRecord>,
    pub metrics: MetricSnapshot,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentMap {
    pub id: u32,
    /// Indices into the evaluation grid inside the agent's subdomain.
    pub indices: Vec<usize>,
    pub predictions: Vec<PosteriorEvaluation>,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub grid: Vec<Vec<f64>>,
    pub truth: Vec<f64>,
    /// Per agent (in id order): grid indices it owns and whether each is shared.
    owned: Vec<(Vec<usize>, Vec<bool>)>,
    noise_var: Vec<f64>,
}

impl Evaluation {
    fn new(grid: Vec<Vec<f64>>, field: &ScalarField, agents: &[AgentState], noise: NlpdNoise) -> Self {
        let truth = grid.iter().map(|x| field.eval(x)).collect();
        let counts: Vec<usize> = grid
            .iter()
            .map(|x| agents.iter().filter(|a| a.subdomain.contains(x)).count())
            .collect();
        let owned = agents
            .iter()
            .map(|a| {
                let idx: Vec<usize> = (0..grid.len()).filter(|&i| a.subdomain.contains(&grid[i])).collect();
                let shared = idx.iter().map(|&i| counts[i] >= 2).collect();
                (idx, shared)
            })
            .collect();
        let noise_var = agents
            .iter()
            .map(|a| match noise {
                NlpdNoise::Modeled => a.model_noise_std.powi(2),
                NlpdNoise::True => a.sensor_noise_std.powi(2),
            })
            .collect();
        Evaluation {
            grid,
            truth,
            owned,
            noise_var,
        }
    }

    /// Membership count of every grid point.
    pub fn membership_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.grid.len()];
        for (idx, _) in &self.owned {
            for &i in idx {
                counts[i] += 1;
            }
        }
        counts
    }
}

#[derive(Debug, Clone, Copy)]
pub struct WorldSettings {
    pub budget: usize,
    pub weights: ConsistencyWeights,
    pub optimizer: crate::btip::Optimizer,
    pub conditioning: SenderConditioning,
    pub predictor: Predictor,
    pub sparse_inducing: usize,
    /// Communication phases run only when set.
    pub shared: bool,
}

pub struct World {
    pub agents: Vec<AgentState>,
    pub field: ScalarField,
    pub settings: WorldSettings,
    edges: Vec<Edge>,
    eval: Evaluation,
    sparse_inducing: Vec<Option<InducingSet>>,
}

impl World {
    pub fn from_config(cfg: &ScenarioConfig, shared: bool) -> Result<Self> {
        cfg.validate()?;
        let field = ScalarField::from_config(cfg);
        let mut agents: Vec<AgentState> = cfg
            .agent_specs()?
            .into_iter()
            .map(|s| AgentState::new(s.id, s.subdomain, s.kernel, cfg.field.noise_std, s.noise_std, cfg.run.seed))
            .collect();
        let pairs = cfg.edges()?;
        for &(from, to) in &pairs {
            for a in agents.iter_mut() {
                if a.id == from {
                    a.out_neighbors.push(to);
                }
                if a.id == to {
                    a.in_neighbors.push(from);
                }
            }
        }
        let settings = WorldSettings {
            budget: cfg.protocol.budget,
            weights: ConsistencyWeights::new(cfg.protocol.alpha, cfg.protocol.beta)?,
            optimizer: cfg.protocol.optimizer,
            conditioning: cfg.protocol.sender_conditioning,
            predictor: cfg.run.local_predictor,
            sparse_inducing: cfg.run.sparse_inducing,
            shared,
        };
        let eval = Evaluation::new(eval_grid(&cfg.domain), &field, &agents, cfg.metrics.nlpd_noise);
        let mut world = World {
            agents,
            field,
            settings,
            edges: Vec::new(),
            eval,
            sparse_inducing: Vec::new(),
        };
        world.edges = world.build_edges(&pairs, cfg.protocol.targets, cfg.protocol.quadrature_resolution)?;
        world.sparse_inducing = world.build_sparse_inducing()?;
        Ok(world)
    }

    fn agent(&self, id: u32) -> &AgentState {
        self.agents.iter().find(|a| a.id == id).expect("edge endpoints are agents")
    }

    fn build_edges(&self, pairs: &[(u32, u32)], targets: usize, resolution: usize) -> Result<Vec<Edge>> {
        pairs
            .iter()
            .map(|&(from, to)| {
                let (s, r) = (self.agent(from), self.agent(to));
                let geometry = match intersect(&s.subdomain, &r.subdomain) {
                    None => None,
                    Some(region) => match EdgeGeometry::new(s.kernel, region, targets, resolution) {
                        Ok(g) => Some(Arc::new(g)),
                        Err(Error::DegenerateOverlap) => None,
                        Err(e) => return Err(e),
                    },
                };
                Ok(Edge { from, to, geometry })
            })
            .collect()
    }

    fn build_sparse_inducing(&self) -> Result<Vec<Option<InducingSet>>> {
        if self.settings.predictor == Predictor::Exact {
            return Ok(vec![None; self.agents.len()]);
        }
        self.agents
            .iter()
            .map(|a| {
                let own = intersect(&a.subdomain, &a.subdomain).ok_or(Error::DegenerateOverlap)?;
                let pts = target_set(&own, self.settings.sparse_inducing)?.points;
                let mut unique: Vec<Vec<f64>> = Vec::new();
                for p in pts {
                    if !unique.contains(&p) {
                        unique.push(p);
                    }
                }
                InducingSet::new(unique).map(Some)
            })
            .collect()
    }

    pub fn evaluation(&self) -> &Evaluation {
        &self.eval
    }

    /// Number of directed edges whose overlap supports packet exchange.
    pub fn active_edges(&self) -> usize {
        self.edges.iter().filter(|e| e.geometry.is_some()).count()
    }

    fn sender_data(&self, agent: &AgentState) -> AugmentedDataset {
        match self.settings.conditioning {
            SenderConditioning::Augmented => agent.data.clone(),
            SenderConditioning::RawOnly => agent.data.raw_only(),
        }
    }

    fn send(&self, edge: &Edge, geometry: &Arc<EdgeGeometry>, step: u32) -> Result<SentPackets> {
        let sender = self.agent(edge.from);
        let data = self.sender_data(sender);
        let post = ExactPosterior::fit(sender.kernel, &data)?;
        let problem = BtipProblem::new(Arc::clone(geometry), data, self.settings.budget)?;
        let inducing = select_edge_inducing(&problem, self.settings.optimizer)?;
        let packets = build_packet_library(&post, sender.id, step, &inducing);
        Ok(SentPackets {
            to: edge.to,
            inducing,
            packets,
        })
    }

    fn predict_agent(&self, k: usize) -> Result<Vec<PosteriorEvaluation>> {
        let a = &self.agents[k];
        let idx = &self.eval.owned[k].0;
        match &self.sparse_inducing[k] {
            Some(ind) if !a.data.is_empty() => {
                let sp = fit_sparse(&a.kernel, &a.data, ind)?;
                Ok(idx.iter().map(|&i| sp.predict(&self.eval.grid[i])).collect())
            }
            _ => {
                let post = ExactPosterior::fit(a.kernel, &a.data)?;
                Ok(idx.iter().map(|&i| post.predict(&self.eval.grid[i])).collect())
            }
        }
    }

    pub fn maps(&self) -> Result<Vec<AgentMap>> {
        (0..self.agents.len())
            .map(|k| {
                Ok(AgentMap {
                    id: self.agents[k].id,
                    indices: self.eval.owned[k].0.clone(),
                    predictions: self.predict_agent(k)?,
                })
            })
            .collect()
    }

    pub fn snapshot(&self, step: u32) -> Result<MetricSnapshot> {
        let maps = self.maps()?;
        let views: Vec<AgentEvaluation<'_>> = maps
            .iter()
            .enumerate()
            .map(|(k, m)| AgentEvaluation {
                id: m.id,
                obs_noise_var: self.eval.noise_var[k],
                indices: &m.indices,
                predictions: &m.predictions,
                shared: &self.eval.owned[k].1,
            })
            .collect();
        Ok(evaluate_agents(step, &self.eval.truth, &views))
    }

    pub fn run_step(&mut self, step: u32) -> Result<StepRecord> {
        if step == 0 {
            return Err(Error::InvalidArgument("steps are numbered from 1".into()));
        }
        let field = &self.field;
        let measurements: Vec<Measurement> = self.agents.iter_mut().map(|a| sample_measurement(a, field)).collect();

        let mut sent: Vec<Vec<SentPackets>> = vec![Vec::new(); self.agents.len()];
        let mut decisions: Vec<Option<AssimilationDecision>> = vec![None; self.agents.len()];
        if self.settings.shared {
            let outgoing: Vec<(u32, SentPackets)> = self
                .edges
                .par_iter()
                .filter_map(|e| e.geometry.as_ref().map(|g| (e, g)))
                .map(|(e, g)| self.send(e, g, step).map(|s| (e.from, s)))
                .collect::<Result<_>>()?;
            let mut libraries: BTreeMap<u32, CandidateLibrary> = BTreeMap::new();
            for (from, s) in outgoing {
                libraries.entry(s.to).or_default().insert(from, s.packets.clone());
                let k = self.index_of(from);
                sent[k].push(s);
            }
            let chosen: Vec<Option<AssimilationDecision>> = self
                .agents
                .par_iter()
                .map(|a| match libraries.get(&a.id) {
                    Some(lib) => receiver_phase(a, lib, self.settings.weights).map(Some),
                    None => Ok(None),
                })
                .collect::<Result<_>>()?;
            for (a, d) in self.agents.iter_mut().zip(&chosen) {
                if let Some(d) = d {
                    retain(&mut a.data, d);
                }
            }
            decisions = chosen;
        }

        let metrics = self.snapshot(step)?;
        let agents = self
            .agents
            .iter()
            .zip(measurements)
            .zip(sent)
            .zip(decisions)
            .map(|(((a, measurement), sent), decision)| AgentStepRecord {
                id: a.id,
                measurement,
                sent,
                decision,
            })
            .collect();
        Ok(StepRecord { step, agents, metrics })
    }

    fn index_of(&self, id: u32) -> usize {
        self.agents.iter().position(|a| a.id == id).expect("known agent")
    }
}

/// Receiver selection. Takes only the receiver's own state and the packets
/// it received.
pub fn receiver_phase(
    agent: &AgentState,
    library: &CandidateLibrary,
    weights: ConsistencyWeights,
) -> Result<AssimilationDecision> {
    select_packet(&agent.kernel, &agent.data, library, weights)
}

/// Rebuilds every agent's dataset from a step history.
pub fn replay(history: &[StepRecord]) -> BTreeMap<u32, AugmentedDataset> {
    let mut out: BTreeMap<u32, AugmentedDataset> = BTreeMap::new();
    for rec in history {
        for a in &rec.agents {
            out.entry(a.id).or_default().push_raw(a.measurement.clone());
        }
        for a in &rec.agents {
            if let Some(d) = &a.decision {
                out.entry(a.id).or_default().push_fictitious(d.as_measurement());
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct WorldRun {
    pub history: Vec<StepRecord>,
    pub final_data: BTreeMap<u32, AugmentedDataset>,
    pub final_maps: Vec<AgentMap>,
}

impl WorldRun {
    /// Retained packets per agent with the step they were accepted.
    pub fn retained(&self) -> BTreeMap<u32, Vec<(u32, Packet)>> {
        let mut out: BTreeMap<u32, Vec<(u32, Packet)>> = BTreeMap::new();
        for rec in &self.history {
            for a in &rec.agents {
                let entry = out.entry(a.id).or_default();
                if let Some(d) = &a.decision {
                    entry.push((rec.step, d.chosen.clone()));
                }
            }
        }
        out
    }

    /// Every packet sent during the run, in step then edge order.
    pub fn sent_packets(&self) -> Vec<&Packet> {
        self.history
            .iter()
            .flat_map(|r| r.agents.iter())
            .flat_map(|a| a.sent.iter())
            .flat_map(|s| s.packets.iter())
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub config: ScenarioConfig,
    pub grid: Vec<Vec<f64>>,
    pub truth: Vec<f64>,
    pub shared: WorldRun,
    pub baseline: Option<WorldRun>,
}

fn run_world(cfg: &ScenarioConfig, shared: bool) -> Result<(WorldRun, Evaluation)> {
    let mut world = World::from_config(cfg, shared)?;
    let history = (1..=cfg.run.steps)
        .map(|t| world.run_step(t))
        .collect::<Result<Vec<_>>>()?;
    let final_maps = world.maps()?;
    let final_data = world.agents.iter().map(|a| (a.id, a.data.clone())).collect();
    Ok((
        WorldRun {
            history,
            final_data,
            final_maps,
        },
        world.eval,
    ))
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunArtifacts> {
    let (shared, eval) = run_world(cfg, true)?;
    let baseline = if cfg.run.baseline {
        Some(run_world(cfg, false)?.0)
    } else {
        None
    };
    Ok(RunArtifacts {
        config: cfg.clone(),
        grid: eval.grid,
        truth: eval.truth,
        shared,
        baseline,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(steps: u32) -> ScenarioConfig {
        let mut c = ScenarioConfig::preset("paper_sec6").unwrap();
        c.run.steps = steps;
        c.domain.grid_resolution = 15;
        c.protocol.quadrature_resolution = 16;
        c
    }

    #[test]
    fn zero_noise_measures_the_field() {
        let field = ScalarField::SinCos;
        let mut a = AgentState::new(1, Subdomain::disk(vec![0.0, 0.0], 2.0).unwrap(), Kernel::new(1.0, 1.0).unwrap(), 0.0, 0.1, 5);
        for _ in 0..50 {
            let m = sample_measurement(&mut a, &field);
            assert_eq!(m.value, field.eval(&m.location));
            assert!(a.subdomain.contains(&m.location));
        }
        assert_eq!(a.data.raw().len(), 50);
    }

    #[test]
    fn residual_std_matches_configuration() {
        let field = ScalarField::SinCos;
        let mut a = AgentState::new(2, Subdomain::disk(vec![1.0, -1.0], 3.0).unwrap(), Kernel::new(1.0, 1.0).unwrap(), 0.08, 0.1, 9);
        let n = 10_000;
        let res: Vec<f64> = (0..n)
            .map(|_| {
                let m = sample_measurement(&mut a, &field);
                m.value - field.eval(&m.location)
            })
            .collect();
        let mean = res.iter().sum::<f64>() / n as f64;
        let sd = (res.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!((sd - 0.08).abs() / 0.08 < 0.05, "{sd}");
    }

    #[test]
    fn agent_streams_are_independent_of_other_agents() {
        let field = ScalarField::Peaks;
        let disk = Subdomain::disk(vec![0.0, 0.0], 2.0).unwrap();
        let k = Kernel::new(1.0, 1.0).unwrap();
        let mut a = AgentState::new(1, disk.clone(), k, 0.08, 0.1, 3);
        let mut b = AgentState::new(2, disk.clone(), k, 0.08, 0.1, 3);
        let mut a2 = AgentState::new(1, disk, k, 0.08, 0.1, 3);
        let ma = sample_measurement(&mut a, &field);
        let mb = sample_measurement(&mut b, &field);
        assert_ne!(ma, mb);
        assert_eq!(ma, sample_measurement(&mut a2, &field));
    }

    #[test]
    fn replay_reconstructs_final_datasets() {
        let cfg = small_config(4);
        let (run, _) = run_world(&cfg, true).unwrap();
        assert_eq!(replay(&run.history), run.final_data);
    }

    #[test]
    fn one_retained_packet_per_agent_per_step() {
        let cfg = small_config(3);
        let (run, _) = run_world(&cfg, true).unwrap();
        for (_, d) in &run.final_data {
            assert_eq!(d.raw().len(), 3);
            assert_eq!(d.fictitious().len(), 3);
        }
        for rec in &run.history {
            for a in &rec.agents {
                assert_eq!(a.sent.len(), 3);
                for s in &a.sent {
                    assert!((1..=4).contains(&s.packets.len()));
                    assert_eq!(s.packets.len(), s.inducing.points.len());
                }
            }
        }
    }

    #[test]
    fn two_identical_agents_exchange_one_packet_each() {
        let mut cfg = small_config(3);
        cfg.agents.retain(|k, _| k == "1" || k == "2");
        let a1 = cfg.agents["1"].clone();
        cfg.agents.insert("2".into(), a1);
        let (run, _) = run_world(&cfg, true).unwrap();
        for rec in &run.history {
            assert!(rec.agents.iter().all(|a| a.decision.is_some()));
        }
        assert!(run.final_data.values().all(|d| d.fictitious().len() == 3));
    }

    #[test]
    fn single_agent_matches_self_only_world() {
        let mut cfg = small_config(3);
        cfg.agents.retain(|k, _| k == "1");
        let (shared, _) = run_world(&cfg, true).unwrap();
        let (alone, _) = run_world(&cfg, false).unwrap();
        assert_eq!(shared.final_data, alone.final_data);
        assert_eq!(
            shared.history.iter().map(|r| &r.metrics).collect::<Vec<_>>(),
            alone.history.iter().map(|r| &r.metrics).collect::<Vec<_>>()
        );
    }

    #[test]
    fn baseline_sees_identical_measurements() {
        let cfg = small_config(2);
        let (shared, _) = run_world(&cfg, true).unwrap();
        let (alone, _) = run_world(&cfg, false).unwrap();
        for (id, d) in &shared.final_data {
            assert_eq!(d.raw(), alone.final_data[id].raw());
            assert!(alone.final_data[id].fictitious().is_empty());
        }
    }

    #[test]
    fn receiver_phase_ignores_other_agents() {
        let cfg = small_config(2);
        let mut world = World::from_config(&cfg, true).unwrap();
        world.run_step(1).unwrap();
        for a in world.agents.iter_mut() {
            sample_measurement(a, &ScalarField::SinCos);
        }
        let lib = {
            let e = world.edges.iter().find(|e| e.to == 1).unwrap();
            let s = world.send(e, e.geometry.as_ref().unwrap(), 2).unwrap();
            let mut lib = CandidateLibrary::new();
            lib.insert(e.from, s.packets);
            lib
        };
        let before = receiver_phase(&world.agents[0], &lib, world.settings.weights).unwrap();
        for a in world.agents.iter_mut().skip(1) {
            a.data = AugmentedDataset::new();
            a.kernel = Kernel::new(5.0, 0.1).unwrap();
        }
        let after = receiver_phase(&world.agents[0], &lib, world.settings.weights).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn membership_histogram_on_preset_grid() {
        let cfg = ScenarioConfig::preset("paper_sec6").unwrap();
        let world = World::from_config(&cfg, true).unwrap();
        let counts = world.evaluation().membership_counts();
        assert_eq!(counts.len(), 41 * 41);
        let specs = cfg.agent_specs().unwrap();
        let mut hist = [0usize; 5];
        for (x, &c) in world.evaluation().grid.iter().zip(&counts) {
            let oracle = specs
                .iter()
                .filter(|s| {
                    let Subdomain::Disk { center, radius } = &s.subdomain else { unreachable!() };
                    (x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2) <= radius * radius
                })
                .count();
            assert_eq!(c, oracle);
            hist[c] += 1;
        }
        assert_eq!(hist.iter().sum::<usize>(), 41 * 41);
        assert!(hist[2] > 0 && hist[3] > 0);
        let again = World::from_config(&cfg, true).unwrap().evaluation().membership_counts();
        assert_eq!(counts, again);
    }

    #[test]
    fn degenerate_edges_are_skipped() {
        let mut cfg = small_config(2);
        cfg.agents.retain(|k, _| k == "1" || k == "2");
        let c1 = cfg.agents["1"].center;
        cfg.agents.get_mut("2").unwrap().center = [c1[0] + 8.8, c1[1]];
        let world = World::from_config(&cfg, true).unwrap();
        assert_eq!(world.active_edges(), 0);
        let (run, _) = run_world(&cfg, true).unwrap();
        assert!(run.final_data.values().all(|d| d.fictitious().is_empty()));
    }

    #[test]
    fn sparse_predictor_runs() {
        let mut cfg = small_config(2);
        cfg.run.local_predictor = Predictor::Sparse;
        cfg.run.sparse_inducing = 16;
        let (run, _) = run_world(&cfg, true).unwrap();
        assert!(run.history.iter().all(|r| r.metrics.network_local_rmse.unwrap().is_finite()));
    }
}
