//! Scenario configuration in TOML.
//!
//! ```toml
//! [domain]
//! lower = [-6.0, -6.0]
//! upper = [6.0, 6.0]
//! grid_resolution = 41
//!
//! [field]
//! kind = "gaussian_bumps"
//! noise_std = 0.08
//! [[field.bumps]]
//! center = [-2.0, -1.5]
//! amplitude = 1.2
//! width = 1.6
//!
//! [agents.1]
//! center = [-3.0, -2.6]
//! radius = 4.4
//! signal_scale = 0.9
//! length_scale = 0.85
//! noise_std = 0.07
//!
//! [protocol]
//! budget = 4
//! alpha = 1.0
//! beta = 0.25
//!
//! [run]
//! steps = 20
//! seed = 1
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::btip::Optimizer;
use crate::error::{Error, Result};
use crate::geometry::{intersect, Subdomain};
use crate::kernel::Kernel;

pub const PAPER_SEC6: &str = include_str!("../presets/paper_sec6.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub domain: DomainConfig,
    pub field: FieldConfig,
    pub agents: BTreeMap<String, AgentConfig>,
    pub protocol: ProtocolConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    pub run: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub lower: [f64; 2],
    pub upper: [f64; 2],
    pub grid_resolution: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    GaussianBumps,
    /// Scaled MATLAB-style peaks surface.
    Peaks,
    /// `sin(0.6 x) cos(0.5 y)`.
    SinCos,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BumpConfig {
    pub center: [f64; 2],
    pub amplitude: f64,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    pub kind: FieldKind,
    /// True measurement noise std.
    pub noise_std: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bumps: Vec<BumpConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub center: [f64; 2],
    pub radius: f64,
    pub signal_scale: f64,
    pub length_scale: f64,
    /// Modeled measurement noise std.
    pub noise_std: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SenderConditioning {
    #[default]
    Augmented,
    RawOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    pub budget: usize,
    pub alpha: f64,
    pub beta: f64,
    #[serde(default = "default_targets")]
    pub targets: usize,
    #[serde(default = "default_quadrature_resolution")]
    pub quadrature_resolution: usize,
    #[serde(default)]
    pub optimizer: Optimizer,
    #[serde(default)]
    pub sender_conditioning: SenderConditioning,
    /// Directed `[from, to]` pairs. Absent means every pair of agents with
    /// overlapping subdomains, both directions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<[u32; 2]>>,
}

fn default_targets() -> usize {
    9
}

fn default_quadrature_resolution() -> usize {
    32
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NlpdNoise {
    #[default]
    Modeled,
    True,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    #[serde(default)]
    pub nlpd_noise: NlpdNoise,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predictor {
    #[default]
    Exact,
    Sparse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub steps: u32,
    pub seed: u64,
    #[serde(default = "default_true")]
    pub baseline: bool,
    #[serde(default)]
    pub local_predictor: Predictor,
    #[serde(default = "default_sparse_inducing")]
    pub sparse_inducing: usize,
}

fn default_true() -> bool {
    true
}

fn default_sparse_inducing() -> usize {
    25
}

/// Validated agent description with a numeric id.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentSpec {
    pub id: u32,
    pub subdomain: Subdomain,
    pub kernel: Kernel,
    pub noise_std: f64,
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::ConfigInvalid(msg.into())
}

fn finite(path: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("{path}: must be finite")))
    }
}

fn positive(path: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("{path}: must be positive, got {v}")))
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::ConfigInvalid(m) => invalid(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "paper_sec6" => Some(Self::from_toml_str(PAPER_SEC6).expect("bundled preset is valid")),
            _ => None,
        }
    }

    /// Canonical TOML form. `load(dump(c)) == c` for any valid `c`.
    pub fn dump(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn agent_specs(&self) -> Result<Vec<AgentSpec>> {
        let mut out = Vec::with_capacity(self.agents.len());
        for (key, a) in &self.agents {
            let path = format!("agents.{key}");
            let id: u32 = key
                .parse()
                .ok()
                .filter(|&id| id > 0)
                .ok_or_else(|| invalid(format!("{path}: agent ids must be positive integers")))?;
            finite(&format!("{path}.center"), a.center[0])?;
            finite(&format!("{path}.center"), a.center[1])?;
            positive(&format!("{path}.radius"), a.radius)?;
            positive(&format!("{path}.signal_scale"), a.signal_scale)?;
            positive(&format!("{path}.length_scale"), a.length_scale)?;
            positive(&format!("{path}.noise_std"), a.noise_std)?;
            out.push(AgentSpec {
                id,
                subdomain: Subdomain::disk(a.center.to_vec(), a.radius)?,
                kernel: Kernel::new(a.signal_scale, a.length_scale)?,
                noise_std: a.noise_std,
            });
        }
        out.sort_by_key(|a| a.id);
        Ok(out)
    }

    /// Directed edges in `(from, to)` order, sorted.
    pub fn edges(&self) -> Result<Vec<(u32, u32)>> {
        let specs = self.agent_specs()?;
        let mut edges: Vec<(u32, u32)> = match &self.protocol.edges {
            Some(list) => {
                for (k, [from, to]) in list.iter().enumerate() {
                    let known = |id: &u32| specs.iter().any(|s| s.id == *id);
                    if !known(from) || !known(to) {
                        return Err(invalid(format!("protocol.edges[{k}]: unknown agent id")));
                    }
                    if from == to {
                        return Err(invalid(format!("protocol.edges[{k}]: self loop")));
                    }
                }
                list.iter().map(|e| (e[0], e[1])).collect()
            }
            None => {
                let mut e = Vec::new();
                for a in &specs {
                    for b in &specs {
                        if a.id != b.id && intersect(&a.subdomain, &b.subdomain).is_some() {
                            e.push((a.id, b.id));
                        }
                    }
                }
                e
            }
        };
        edges.sort_unstable();
        edges.dedup();
        Ok(edges)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.domain;
        for k in 0..2 {
            finite("domain.lower", d.lower[k])?;
            finite("domain.upper", d.upper[k])?;
            if d.upper[k] <= d.lower[k] {
                return Err(invalid("domain: upper must exceed lower on every axis"));
            }
        }
        if d.grid_resolution < 2 {
            return Err(invalid("domain.grid_resolution: must be at least 2"));
        }
        if !(self.field.noise_std.is_finite() && self.field.noise_std >= 0.0) {
            return Err(invalid("field.noise_std: must be non-negative"));
        }
        if self.field.kind == FieldKind::GaussianBumps && self.field.bumps.is_empty() {
            return Err(invalid("field.bumps: gaussian_bumps needs at least one bump"));
        }
        for (k, b) in self.field.bumps.iter().enumerate() {
            finite(&format!("field.bumps[{k}].center"), b.center[0])?;
            finite(&format!("field.bumps[{k}].center"), b.center[1])?;
            finite(&format!("field.bumps[{k}].amplitude"), b.amplitude)?;
            positive(&format!("field.bumps[{k}].width"), b.width)?;
        }
        if self.agents.is_empty() {
            return Err(invalid("agents: at least one agent is required"));
        }
        let specs = self.agent_specs()?;
        let p = &self.protocol;
        if p.budget == 0 {
            return Err(invalid("protocol.budget: must be at least 1"));
        }
        if p.targets == 0 {
            return Err(invalid("protocol.targets: must be at least 1"));
        }
        if p.quadrature_resolution < 2 {
            return Err(invalid("protocol.quadrature_resolution: must be at least 2"));
        }
        for (name, v) in [("protocol.alpha", p.alpha), ("protocol.beta", p.beta)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(format!("{name}: must be non-negative")));
            }
        }
        if self.run.steps == 0 {
            return Err(invalid("run.steps: must be at least 1"));
        }
        if self.run.sparse_inducing == 0 {
            return Err(invalid("run.sparse_inducing: must be at least 1"));
        }
        let edges = self.edges()?;
        if !weakly_connected(&specs.iter().map(|s| s.id).collect::<Vec<_>>(), &edges) {
            return Err(invalid("agents: communication graph is not connected"));
        }
        Ok(())
    }

    /// Evaluation grid points outside every subdomain. The mapping assumes
    /// coverage, so callers report these as a warning.
    pub fn uncovered_grid_points(&self) -> Result<usize> {
        let specs = self.agent_specs()?;
        Ok(eval_grid(&self.domain)
            .iter()
            .filter(|x| !specs.iter().any(|s| s.subdomain.contains(x)))
            .count())
    }
}

/// Evaluation grid, first axis slowest, endpoints included.
pub fn eval_grid(d: &DomainConfig) -> Vec<Vec<f64>> {
    let r = d.grid_resolution;
    let axis = |k: usize| -> Vec<f64> {
        (0..r)
            .map(|i| d.lower[k] + (d.upper[k] - d.lower[k]) * i as f64 / (r - 1) as f64)
            .collect()
    };
    let (xs, ys) = (axis(0), axis(1));
    xs.iter().flat_map(|&x| ys.iter().map(move |&y| vec![x, y])).collect()
}

fn weakly_connected(ids: &[u32], edges: &[(u32, u32)]) -> bool {
    let Some(&first) = ids.first() else {
        return true;
    };
    let mut seen = vec![first];
    let mut frontier = vec![first];
    while let Some(v) = frontier.pop() {
        for &(a, b) in edges {
            let other = if a == v {
                b
            } else if b == v {
                a
            } else {
                continue;
            };
            if !seen.contains(&other) {
                seen.push(other);
                frontier.push(other);
            }
        }
    }
    seen.len() == ids.len()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_echoes_experiment_values() {
        let c = ScenarioConfig::preset("paper_sec6").unwrap();
        assert_eq!(c.agents.len(), 4);
        assert!(c.agents.values().all(|a| a.radius == 4.4));
        assert_eq!(c.run.steps, 20);
        assert_eq!(c.protocol.budget, 4);
        assert_eq!(c.protocol.alpha, 1.0);
        assert_eq!(c.protocol.beta, 0.25);
        assert_eq!(c.domain.grid_resolution, 41);
        assert_eq!(c.field.noise_std, 0.08);
        let ids: Vec<u32> = c.agent_specs().unwrap().iter().map(|a| a.id).collect();
        assert_eq!(ids, vec![1, 2, 3, 4]);
        assert_eq!(c.edges().unwrap().len(), 12);
    }

    #[test]
    fn dump_load_round_trip() {
        let c = ScenarioConfig::preset("paper_sec6").unwrap();
        let text = c.dump();
        let back = ScenarioConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.dump(), text);
    }

    #[test]
    fn missing_center_names_the_field() {
        let text = PAPER_SEC6.replacen("center = [2.5, -2.8]", "", 1);
        match ScenarioConfig::from_toml_str(&text) {
            Err(Error::ConfigInvalid(m)) => assert!(m.contains("center"), "{m}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_key_rejected() {
        let text = PAPER_SEC6.replacen("[run]", "[run]\nspeed = 3", 1);
        match ScenarioConfig::from_toml_str(&text) {
            Err(Error::ConfigInvalid(m)) => assert!(m.contains("speed"), "{m}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_values_name_their_path() {
        let text = PAPER_SEC6.replacen("length_scale = 0.85", "length_scale = -1.0", 1);
        match ScenarioConfig::from_toml_str(&text) {
            Err(Error::ConfigInvalid(m)) => assert!(m.contains("agents.1.length_scale"), "{m}"),
            other => panic!("unexpected {other:?}"),
        }
        let text = PAPER_SEC6.replacen("budget = 4", "budget = 0", 1);
        assert!(matches!(ScenarioConfig::from_toml_str(&text), Err(Error::ConfigInvalid(_))));
    }

    #[test]
    fn disconnected_graph_rejected() {
        let mut c = ScenarioConfig::preset("paper_sec6").unwrap();
        c.protocol.edges = Some(vec![[1, 2], [3, 4]]);
        assert!(matches!(c.validate(), Err(Error::ConfigInvalid(_))));
        c.protocol.edges = Some(vec![[1, 2], [2, 3], [3, 4]]);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn preset_coverage() {
        let c = ScenarioConfig::preset("paper_sec6").unwrap();
        let uncovered = c.uncovered_grid_points().unwrap();
        assert!(uncovered < 41 * 41 / 10, "{uncovered}");
    }

    #[test]
    fn eval_grid_order_and_endpoints() {
        let d = DomainConfig { lower: [-1.0, 0.0], upper: [1.0, 2.0], grid_resolution: 3 };
        let g = eval_grid(&d);
        assert_eq!(g.len(), 9);
        assert_eq!(g[0], vec![-1.0, 0.0]);
        assert_eq!(g[1], vec![-1.0, 1.0]);
        assert_eq!(g[8], vec![1.0, 2.0]);
    }
}
