//! Sender-side selection of edge-specific inducing points.
//!
//! The criterion integrates the sender's normalized sparse predictive
//! variance over an overlap region, weighted by a sum of correlation bumps
//! centred on a target set:
//!
//! ```text
//! J(S) = sum_b a_b  ∫_O  kappa(x, z_b) sigma_S^2(x) / nu  dx
//!      = C - tr[(K_S^{-1} - Q_S^{-1}) W(S)]
//! ```
//!
//! `C` and `W` can be integrated either on a quadrature grid (any overlap
//! shape) or in closed form with error functions (box overlaps only).
//! Greedy selection scans the quadrature nodes as candidates using the trace
//! form, with optional gradient refinement.

use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{quadrature, target_set, OverlapRegion, QuadratureGrid, TargetSet};
use crate::gp::{AugmentedDataset, ExactPosterior};
use crate::kernel::{sq_dist, Kernel};
use crate::protocol::Packet;
use crate::sparse::{factor_with_fallback, fit_sparse, InducingSet};

/// Node kernel matrices above this many entries are recomputed on demand.
const NODE_GRAM_CACHE_LIMIT: usize = 4_000_000;
const GRADIENT_STARTS: usize = 3;
const GRADIENT_ITERS: usize = 40;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    #[default]
    Grid,
    Gradient,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    #[default]
    Quadrature,
    ClosedForm,
}

/// Everything about one directed edge that does not depend on the
/// sender's data: kernel, overlap, targets and the integration grid.
#[derive(Debug)]
pub struct EdgeGeometry {
    kernel: Kernel,
    region: OverlapRegion,
    targets: TargetSet,
    grid: QuadratureGrid,
    /// `w_g * omega(node_g)` per quadrature node.
    weighted: Vec<f64>,
    min_separation: f64,
    node_gram: OnceLock<Option<Vec<f64>>>,
    node_w_diag: OnceLock<Vec<f64>>,
}

impl EdgeGeometry {
    pub fn new(kernel: Kernel, region: OverlapRegion, targets: usize, resolution: usize) -> Result<Self> {
        let t = target_set(&region, targets)?;
        Self::with_targets(kernel, region, t, resolution)
    }

    pub fn with_targets(
        kernel: Kernel,
        region: OverlapRegion,
        targets: TargetSet,
        resolution: usize,
    ) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::InvalidArgument("target set is empty".into()));
        }
        let grid = quadrature(&region, resolution)?;
        let weighted = grid
            .nodes
            .iter()
            .zip(&grid.weights)
            .map(|(x, w)| w * weight_function(&kernel, &targets, x))
            .collect();
        Ok(EdgeGeometry {
            min_separation: 1e-3 * kernel.length_scale(),
            kernel,
            region,
            targets,
            grid,
            weighted,
            node_gram: OnceLock::new(),
            node_w_diag: OnceLock::new(),
        })
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn region(&self) -> &OverlapRegion {
        &self.region
    }

    pub fn targets(&self) -> &TargetSet {
        &self.targets
    }

    pub fn grid(&self) -> &QuadratureGrid {
        &self.grid
    }

    pub fn min_separation(&self) -> f64 {
        self.min_separation
    }

    /// Weighted centroid of the targets, moved to the nearest grid node
    /// when it falls outside the overlap.
    pub fn initial_point(&self) -> Vec<f64> {
        let c = self.targets.centroid();
        if self.region.contains(&c) {
            c
        } else {
            let i = self.grid.nearest(&c).expect("grid is non-empty");
            self.grid.nodes[i].clone()
        }
    }

    /// `∫ omega(x) dx`.
    pub fn constant(&self, integrator: Integrator) -> Result<f64> {
        match integrator {
            Integrator::Quadrature => Ok(self.weighted.iter().sum()),
            Integrator::ClosedForm => {
                let bb = self.box_bounds()?;
                let theta = self.kernel.theta();
                let st = theta.sqrt();
                let half = (std::f64::consts::PI * theta).sqrt() / 2.0;
                Ok(self
                    .targets
                    .points
                    .iter()
                    .zip(&self.targets.weights)
                    .map(|(z, a)| {
                        a * (0..z.len())
                            .map(|d| {
                                half * (libm::erf((z[d] - bb.0[d]) / st) - libm::erf((z[d] - bb.1[d]) / st))
                            })
                            .product::<f64>()
                    })
                    .sum())
            }
        }
    }

    fn box_bounds(&self) -> Result<(&[f64], &[f64])> {
        if !self.region.is_box() {
            return Err(Error::NotBoxRegion);
        }
        let bb = self.region.bounding_box();
        Ok((&bb.lower, &bb.upper))
    }

    /// `W(S)` with entries `(1/nu) ∫ omega(x) k(x, s_r) k(x, s_s) dx`.
    pub fn w_matrix(&self, set: &[Vec<f64>], integrator: Integrator) -> Result<DMatrix<f64>> {
        let p = set.len();
        let nu = self.kernel.prior_variance();
        let mut w = DMatrix::zeros(p, p);
        match integrator {
            Integrator::Quadrature => {
                let cols = self.node_columns(set);
                for r in 0..p {
                    for s in 0..=r {
                        let v: f64 = (0..self.grid.len())
                            .map(|g| self.weighted[g] * cols[r][g] * cols[s][g])
                            .sum::<f64>()
                            / nu;
                        w[(r, s)] = v;
                        w[(s, r)] = v;
                    }
                }
            }
            Integrator::ClosedForm => {
                let (lo, hi) = self.box_bounds()?;
                let theta = self.kernel.theta();
                for r in 0..p {
                    for s in 0..=r {
                        let v: f64 = self
                            .targets
                            .points
                            .iter()
                            .zip(&self.targets.weights)
                            .map(|(z, a)| {
                                a * (0..z.len())
                                    .map(|d| triple_integral(z[d], set[r][d], set[s][d], lo[d], hi[d], theta).0)
                                    .product::<f64>()
                            })
                            .sum::<f64>()
                            * nu;
                        w[(r, s)] = v;
                        w[(s, r)] = v;
                    }
                }
            }
        }
        Ok(w)
    }

    /// Derivative of `W(S)` with respect to coordinate `dim` of the last
    /// point of `set`. Only the last row and column are non-zero.
    pub fn w_last_derivative(&self, set: &[Vec<f64>], integrator: Integrator, dim: usize) -> Result<DMatrix<f64>> {
        let p = set.len();
        let last = p - 1;
        let y = &set[last];
        let nu = self.kernel.prior_variance();
        let mut dw = DMatrix::zeros(p, p);
        match integrator {
            Integrator::Quadrature => {
                let cols = self.node_columns(set);
                let dy: Vec<f64> = self.grid.nodes.iter().map(|g| self.kernel.grad_second(g, y, dim)).collect();
                for r in 0..p {
                    let mult = if r == last { 2.0 } else { 1.0 };
                    let v: f64 = (0..self.grid.len())
                        .map(|g| self.weighted[g] * cols[r][g] * dy[g])
                        .sum::<f64>()
                        * mult
                        / nu;
                    dw[(r, last)] = v;
                    dw[(last, r)] = v;
                }
            }
            Integrator::ClosedForm => {
                let (lo, hi) = self.box_bounds()?;
                let theta = self.kernel.theta();
                for r in 0..p {
                    let v: f64 = self
                        .targets
                        .points
                        .iter()
                        .zip(&self.targets.weights)
                        .map(|(z, a)| {
                            let mut prod = 1.0;
                            let mut deriv = 0.0;
                            for d in 0..z.len() {
                                let (val, d_first, d_second) = triple_integral(z[d], y[d], set[r][d], lo[d], hi[d], theta);
                                if d == dim {
                                    deriv = if r == last { d_first + d_second } else { d_first };
                                } else {
                                    prod *= val;
                                }
                            }
                            a * prod * deriv
                        })
                        .sum::<f64>()
                        * nu;
                    dw[(r, last)] = v;
                    dw[(last, r)] = v;
                }
            }
        }
        Ok(dw)
    }

    fn node_columns(&self, set: &[Vec<f64>]) -> Vec<Vec<f64>> {
        set.iter()
            .map(|s| self.grid.nodes.iter().map(|g| self.kernel.eval(g, s)).collect())
            .collect()
    }

    fn node_gram(&self) -> Option<&[f64]> {
        self.node_gram
            .get_or_init(|| {
                let g = self.grid.len();
                (g * g <= NODE_GRAM_CACHE_LIMIT).then(|| {
                    let mut m = vec![0.0; g * g];
                    for i in 0..g {
                        for j in 0..=i {
                            let v = self.kernel.eval(&self.grid.nodes[i], &self.grid.nodes[j]);
                            m[i * g + j] = v;
                            m[j * g + i] = v;
                        }
                    }
                    m
                })
            })
            .as_deref()
    }

    fn node_row(&self, c: usize) -> std::borrow::Cow<'_, [f64]> {
        match self.node_gram() {
            Some(m) => {
                let g = self.grid.len();
                std::borrow::Cow::Borrowed(&m[c * g..(c + 1) * g])
            }
            None => {
                let x = &self.grid.nodes[c];
                std::borrow::Cow::Owned(self.grid.nodes.iter().map(|g| self.kernel.eval(g, x)).collect())
            }
        }
    }

    /// `W(c, c)` for every candidate node `c`.
    fn node_w_diag(&self) -> &[f64] {
        self.node_w_diag.get_or_init(|| {
            let nu = self.kernel.prior_variance();
            (0..self.grid.len())
                .map(|c| {
                    let row = self.node_row(c);
                    row.iter().zip(&self.weighted).map(|(k, w)| w * k * k).sum::<f64>() / nu
                })
                .collect()
        })
    }

    /// `W(s, c)` for a fixed point `s` against every candidate node `c`.
    fn node_w_cross(&self, s: &[f64]) -> Vec<f64> {
        let nu = self.kernel.prior_variance();
        let ws: Vec<f64> = self
            .grid
            .nodes
            .iter()
            .zip(&self.weighted)
            .map(|(g, w)| w * self.kernel.eval(g, s))
            .collect();
        (0..self.grid.len())
            .map(|c| {
                let row = self.node_row(c);
                row.iter().zip(&ws).map(|(k, w)| w * k).sum::<f64>() / nu
            })
            .collect()
    }
}

fn weight_function(kernel: &Kernel, targets: &TargetSet, x: &[f64]) -> f64 {
    targets
        .points
        .iter()
        .zip(&targets.weights)
        .map(|(z, a)| a * kernel.correlation(x, z))
        .sum()
}

/// One-dimensional `∫_lo^hi exp(-[(x-z)^2 + (x-r)^2 + (x-s)^2] / theta) dx`
/// and its partial derivatives with respect to `r` and `s`.
///
/// The product of three Gaussians is a Gaussian centred at `c = (z+r+s)/3`
/// with precision `3/theta`, scaled by `exp(-D/theta)` where
/// `D = ((z-r)^2 + (z-s)^2 + (r-s)^2) / 3`.
fn triple_integral(z: f64, r: f64, s: f64, lo: f64, hi: f64, theta: f64) -> (f64, f64, f64) {
    let c = (z + r + s) / 3.0;
    let d = ((z - r).powi(2) + (z - s).powi(2) + (r - s).powi(2)) / 3.0;
    let scale = (-d / theta).exp();
    let root = (3.0 / theta).sqrt();
    let span = (std::f64::consts::PI * theta / 3.0).sqrt() / 2.0
        * (libm::erf(root * (hi - c)) - libm::erf(root * (lo - c)));
    let span_dc = (-3.0 * (lo - c).powi(2) / theta).exp() - (-3.0 * (hi - c).powi(2) / theta).exp();
    let partial = |v: f64| scale * (-2.0 * (v - c) / theta * span + span_dc / 3.0);
    (scale * span, partial(r), partial(s))
}

/// Sparse-approximation factors for a candidate inducing set.
struct Factors {
    k_inv: DMatrix<f64>,
    q_inv: DMatrix<f64>,
    kxp: DMatrix<f64>,
    omega: Vec<f64>,
    clamped: Vec<bool>,
}

impl Factors {
    fn assemble(kernel: &Kernel, data: &AugmentedDataset, kpp: DMatrix<f64>, kxp: DMatrix<f64>) -> Result<Self> {
        let (kpp_chol, kpp) = factor_with_fallback(kernel, kpp, "candidate inducing gram")?;
        let k_inv = kpp_chol.inverse();
        let n = kxp.nrows();
        let mut omega = Vec::with_capacity(n);
        let mut clamped = Vec::with_capacity(n);
        let mut q = kpp;
        for (i, m) in data.iter().enumerate() {
            let row = kxp.row(i).transpose();
            let lam = kernel.prior_variance() - (row.transpose() * &k_inv * &row)[(0, 0)];
            clamped.push(lam <= 0.0);
            let om = lam.max(0.0) + m.noise_variance;
            omega.push(om);
            q.syger(1.0 / om, &row, &row, 1.0);
        }
        q.fill_upper_triangle_with_lower_triangle();
        let q_inv = factor_with_fallback(kernel, q, "candidate sparse Q matrix")?.0.inverse();
        Ok(Factors {
            k_inv,
            q_inv,
            kxp,
            omega,
            clamped,
        })
    }

    fn build(kernel: &Kernel, data: &AugmentedDataset, set: &[Vec<f64>]) -> Result<Self> {
        let p = set.len();
        let kpp = DMatrix::from_fn(p, p, |r, s| kernel.eval(&set[r], &set[s]));
        let rows: Vec<&[f64]> = data.iter().map(|m| m.location.as_slice()).collect();
        let kxp = DMatrix::from_fn(rows.len(), p, |i, r| kernel.eval(rows[i], &set[r]));
        Self::assemble(kernel, data, kpp, kxp)
    }

    fn explained(&self) -> DMatrix<f64> {
        &self.k_inv - &self.q_inv
    }
}

fn trace_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.component_mul(&b.transpose()).sum()
}

fn check_separation(set: &[Vec<f64>], min_sep: f64) -> Result<()> {
    if set.is_empty() {
        return Err(Error::InvalidArgument("candidate set is empty".into()));
    }
    for i in 0..set.len() {
        for j in 0..i {
            if sq_dist(&set[i], &set[j]) < min_sep * min_sep {
                return Err(Error::SingularSystem("duplicate inducing candidates"));
            }
        }
    }
    Ok(())
}

/// One directed edge's selection problem at one clock step.
#[derive(Debug, Clone)]
pub struct BtipProblem {
    geometry: Arc<EdgeGeometry>,
    data: AugmentedDataset,
    budget: usize,
}

impl BtipProblem {
    pub fn new(geometry: Arc<EdgeGeometry>, data: AugmentedDataset, budget: usize) -> Result<Self> {
        if budget == 0 {
            return Err(Error::InvalidArgument("inducing budget must be >= 1".into()));
        }
        if data.is_empty() {
            return Err(Error::InvalidArgument("sender has no measurements".into()));
        }
        Ok(BtipProblem { geometry, data, budget })
    }

    pub fn geometry(&self) -> &EdgeGeometry {
        &self.geometry
    }

    pub fn data(&self) -> &AugmentedDataset {
        &self.data
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    fn kernel(&self) -> &Kernel {
        &self.geometry.kernel
    }

    /// Trace-form criterion with the chosen integrator.
    pub fn objective(&self, set: &[Vec<f64>], integrator: Integrator) -> Result<f64> {
        check_separation(set, self.geometry.min_separation.min(1e-6))?;
        let f = Factors::build(self.kernel(), &self.data, set)?;
        let w = self.geometry.w_matrix(set, integrator)?;
        Ok(self.geometry.constant(integrator)? - trace_product(&f.explained(), &w))
    }

    /// Gradient of the trace-form criterion with respect to the last point
    /// of `set`, differentiating through `K^{-1}`, `Q^{-1}`, the diagonal
    /// correction and `W`.
    pub fn gradient(&self, set: &[Vec<f64>], integrator: Integrator) -> Result<Vec<f64>> {
        check_separation(set, self.geometry.min_separation.min(1e-6))?;
        let kernel = *self.kernel();
        let f = Factors::build(&kernel, &self.data, set)?;
        let w = self.geometry.w_matrix(set, integrator)?;
        let a = f.explained();
        let p = set.len();
        let last = p - 1;
        let y = &set[last];
        let inputs: Vec<&[f64]> = self.data.iter().map(|m| m.location.as_slice()).collect();
        let mut grad = Vec::with_capacity(y.len());
        for dim in 0..y.len() {
            let mut dk = DMatrix::zeros(p, p);
            for r in 0..last {
                let v = kernel.grad_second(&set[r], y, dim);
                dk[(r, last)] = v;
                dk[(last, r)] = v;
            }
            let mut dkxp = DMatrix::zeros(inputs.len(), p);
            for (i, x) in inputs.iter().enumerate() {
                dkxp[(i, last)] = kernel.grad_second(x, y, dim);
            }
            let dk_inv = -(&f.k_inv * &dk * &f.k_inv);
            let mut dq = dk.clone();
            for i in 0..inputs.len() {
                let row = f.kxp.row(i).transpose();
                let drow = dkxp.row(i).transpose();
                let d_omega = if f.clamped[i] {
                    0.0
                } else {
                    -2.0 * (drow.transpose() * &f.k_inv * &row)[(0, 0)] - (row.transpose() * &dk_inv * &row)[(0, 0)]
                };
                let inv = 1.0 / f.omega[i];
                dq += (&drow * row.transpose() + &row * drow.transpose()) * inv;
                dq -= &row * row.transpose() * (d_omega * inv * inv);
            }
            let dq_inv = -(&f.q_inv * &dq * &f.q_inv);
            let da = dk_inv - dq_inv;
            let dw = self.geometry.w_last_derivative(set, integrator, dim)?;
            grad.push(-trace_product(&da, &w) - trace_product(&a, &dw));
        }
        Ok(grad)
    }
}

/// Criterion evaluated literally: fit the sparse posterior on `set`, then
/// sum the weighted normalized variance over the quadrature nodes.
pub fn btip_objective(problem: &BtipProblem, set: &[Vec<f64>]) -> Result<f64> {
    let geo = problem.geometry();
    check_separation(set, geo.min_separation.min(1e-6))?;
    let inducing = InducingSet::with_separation(set.to_vec(), 0.0)?;
    let sp = fit_sparse(geo.kernel(), problem.data(), &inducing)?;
    let nu = geo.kernel().prior_variance();
    Ok(geo
        .grid
        .nodes
        .iter()
        .zip(&geo.weighted)
        .map(|(x, w)| w * sp.predict(x).variance / nu)
        .sum())
}

/// Criterion with `C` and `W` integrated exactly over a box overlap.
pub fn btip_closed_form(problem: &BtipProblem, set: &[Vec<f64>]) -> Result<f64> {
    problem.objective(set, Integrator::ClosedForm)
}

/// Analytic gradient of [`btip_closed_form`] in the last point of `set`.
pub fn btip_gradient(problem: &BtipProblem, set: &[Vec<f64>]) -> Result<Vec<f64>> {
    problem.gradient(set, Integrator::ClosedForm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeInducingSet {
    pub points: Vec<Vec<f64>>,
    /// Criterion value after each accepted point.
    pub objective_trace: Vec<f64>,
}

/// Incremental state for the greedy scan: everything about the incumbent
/// set that candidates share.
struct GreedyState<'a> {
    problem: &'a BtipProblem,
    points: Vec<Vec<f64>>,
    /// `k(x_i, s)` for every data row and incumbent.
    data_cols: Vec<Vec<f64>>,
    /// `W(s, c)` against every node, per incumbent.
    w_cross: Vec<Vec<f64>>,
    /// `k(c, s)` against every node, per incumbent.
    node_cols: Vec<Vec<f64>>,
    data_nodes: Vec<Vec<f64>>,
}

impl<'a> GreedyState<'a> {
    fn new(problem: &'a BtipProblem) -> Self {
        let geo = problem.geometry();
        let kernel = geo.kernel();
        let data_nodes = geo
            .grid
            .nodes
            .iter()
            .map(|g| problem.data.iter().map(|m| kernel.eval(&m.location, g)).collect())
            .collect();
        GreedyState {
            problem,
            points: Vec::new(),
            data_cols: Vec::new(),
            w_cross: Vec::new(),
            node_cols: Vec::new(),
            data_nodes,
        }
    }

    fn push(&mut self, x: Vec<f64>) {
        let geo = self.problem.geometry();
        let kernel = geo.kernel();
        self.data_cols
            .push(self.problem.data.iter().map(|m| kernel.eval(&m.location, &x)).collect());
        self.w_cross.push(geo.node_w_cross(&x));
        self.node_cols
            .push(geo.grid.nodes.iter().map(|g| kernel.eval(g, &x)).collect());
        self.points.push(x);
    }

    fn excluded(&self, c: usize) -> bool {
        let geo = self.problem.geometry();
        let node = &geo.grid.nodes[c];
        let sep2 = geo.min_separation * geo.min_separation;
        self.points.iter().any(|s| sq_dist(s, node) < sep2)
    }

    /// Criterion for incumbents plus candidate node `c`.
    fn candidate_objective(&self, c: usize, constant: f64, w_inc: &DMatrix<f64>) -> Result<f64> {
        let geo = self.problem.geometry();
        let kernel = geo.kernel();
        let m = self.points.len();
        let p = m + 1;
        let n = self.problem.data.len();
        let mut kpp = DMatrix::zeros(p, p);
        let mut w = DMatrix::zeros(p, p);
        for r in 0..m {
            for s in 0..m {
                kpp[(r, s)] = kernel.eval(&self.points[r], &self.points[s]);
                w[(r, s)] = w_inc[(r, s)];
            }
            kpp[(r, m)] = self.node_cols[r][c];
            kpp[(m, r)] = self.node_cols[r][c];
            w[(r, m)] = self.w_cross[r][c];
            w[(m, r)] = self.w_cross[r][c];
        }
        kpp[(m, m)] = kernel.prior_variance();
        w[(m, m)] = geo.node_w_diag()[c];
        let kxp = DMatrix::from_fn(n, p, |i, r| {
            if r < m {
                self.data_cols[r][i]
            } else {
                self.data_nodes[c][i]
            }
        });
        let f = Factors::assemble(kernel, &self.problem.data, kpp, kxp)?;
        Ok(constant - trace_product(&f.explained(), &w))
    }

    /// Projected gradient descent on the newest point, incumbents fixed.
    fn refine(&self, start: Vec<f64>, start_value: f64) -> Result<(Vec<f64>, f64)> {
        let geo = self.problem.geometry();
        let sep2 = geo.min_separation * geo.min_separation;
        let feasible = |x: &[f64]| geo.region.contains(x) && self.points.iter().all(|s| sq_dist(s, x) >= sep2);
        let eval = |x: &[f64]| -> Result<f64> {
            let mut set = self.points.clone();
            set.push(x.to_vec());
            self.problem.objective(&set, Integrator::Quadrature)
        };
        let mut x = start;
        let mut fx = start_value;
        let step0 = 0.5 * geo.kernel.length_scale();
        for _ in 0..GRADIENT_ITERS {
            let mut set = self.points.clone();
            set.push(x.clone());
            let g = self.problem.gradient(&set, Integrator::Quadrature)?;
            let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if gnorm < 1e-12 {
                break;
            }
            let mut t = step0 / gnorm;
            let mut moved = false;
            for _ in 0..20 {
                let mut cand: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - t * gi).collect();
                geo.region.bounding_box().clamp(&mut cand);
                if feasible(&cand) {
                    let fc = eval(&cand)?;
                    if fc < fx {
                        x = cand;
                        fx = fc;
                        moved = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            if !moved {
                break;
            }
        }
        Ok((x, fx))
    }
}

/// Greedy selection: the first point is the (projected) target centroid, each
/// further point the quadrature node with the lowest objective, optionally
/// polished by projected gradient descent. Selection stops at the budget or
/// when the best candidate would raise the objective.
pub fn select_edge_inducing(problem: &BtipProblem, optimizer: Optimizer) -> Result<EdgeInducingSet> {
    let geo = problem.geometry();
    let constant = geo.constant(Integrator::Quadrature)?;
    let mut state = GreedyState::new(problem);
    let first = geo.initial_point();
    let first_value = problem.objective(std::slice::from_ref(&first), Integrator::Quadrature)?;
    state.push(first);
    let mut trace = vec![first_value];

    while state.points.len() < problem.budget {
        let w_inc = geo.w_matrix(&state.points, Integrator::Quadrature)?;
        let mut scored: Vec<(usize, f64)> = Vec::new();
        for c in 0..geo.grid.len() {
            if state.excluded(c) {
                continue;
            }
            scored.push((c, state.candidate_objective(c, constant, &w_inc)?));
        }
        if scored.is_empty() {
            break;
        }
        // Stable sort keeps the lowest node index first among equal values.
        scored.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best_node, best_value) = scored[0];
        let mut chosen = geo.grid.nodes[best_node].clone();
        let mut value = best_value;
        if optimizer == Optimizer::Gradient {
            for &(node, v) in scored.iter().take(GRADIENT_STARTS) {
                let (x, fx) = state.refine(geo.grid.nodes[node].clone(), v)?;
                if fx < value {
                    chosen = x;
                    value = fx;
                }
            }
        }
        // An added inducing point can raise FITC variance; such a point is
        // never accepted, so the set may end up smaller than the budget.
        if value > trace[trace.len() - 1] {
            break;
        }
        state.push(chosen);
        trace.push(value);
    }
    Ok(EdgeInducingSet {
        points: state.points,
        objective_trace: trace,
    })
}

/// Packets for one receiver: the sender's exact posterior at each selected
/// location.
pub fn build_packet_library(
    sender: &ExactPosterior,
    sender_id: u32,
    step: u32,
    edge_set: &EdgeInducingSet,
) -> Vec<Packet> {
    let floor = 1e-8 * sender.kernel().signal_scale();
    edge_set
        .points
        .iter()
        .map(|u| {
            let p = sender.predict(u);
            Packet {
                location: u.clone(),
                mean: p.mean,
                variance: if p.variance > 0.0 { p.variance } else { floor },
                sender_id,
                step,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{intersect, Subdomain};
    use crate::gp::Measurement;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn box_region(lo: [f64; 2], hi: [f64; 2]) -> OverlapRegion {
        let b = Subdomain::boxed(lo.to_vec(), hi.to_vec()).unwrap();
        intersect(&b, &b).unwrap()
    }

    fn data_in(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> AugmentedDataset {
        let mut d = AugmentedDataset::new();
        for _ in 0..n {
            let loc = vec![rng.random_range(lo..hi), rng.random_range(lo..hi)];
            d.push_raw(Measurement::new(loc, rng.random_range(-1.0..1.0), 0.0064).unwrap());
        }
        d
    }

    fn problem(kernel: Kernel, region: OverlapRegion, q: usize, res: usize, data: AugmentedDataset, budget: usize) -> BtipProblem {
        let geo = Arc::new(EdgeGeometry::new(kernel, region, q, res).unwrap());
        BtipProblem::new(geo, data, budget).unwrap()
    }

    #[test]
    fn triple_integral_matches_midpoint_rule() {
        let (z, r, s, lo, hi, theta) = (0.3, -0.2, 0.9, -0.5, 1.2, 0.8);
        let n = 20_000;
        let h = (hi - lo) / n as f64;
        let f = |x: f64| (-((x - z).powi(2) + (x - r).powi(2) + (x - s).powi(2)) / theta).exp();
        let quad: f64 = (0..n).map(|i| f(lo + (i as f64 + 0.5) * h) * h).sum();
        let (v, dr, ds) = triple_integral(z, r, s, lo, hi, theta);
        assert_relative_eq!(v, quad, max_relative = 1e-8);
        let e = 1e-6;
        let fd_r = (triple_integral(z, r + e, s, lo, hi, theta).0 - triple_integral(z, r - e, s, lo, hi, theta).0) / (2.0 * e);
        let fd_s = (triple_integral(z, r, s + e, lo, hi, theta).0 - triple_integral(z, r, s - e, lo, hi, theta).0) / (2.0 * e);
        assert_relative_eq!(dr, fd_r, max_relative = 1e-6);
        assert_relative_eq!(ds, fd_s, max_relative = 1e-6);
    }

    #[test]
    fn constant_infinite_box_limit() {
        let k = Kernel::new(1.0, 0.5).unwrap();
        let region = box_region([-50.0, -50.0], [50.0, 50.0]);
        let t = TargetSet {
            points: vec![vec![0.0, 0.0]],
            weights: vec![1.0],
        };
        let geo = EdgeGeometry::with_targets(k, region, t, 4).unwrap();
        let c = geo.constant(Integrator::ClosedForm).unwrap();
        assert_relative_eq!(c, std::f64::consts::PI * k.theta(), max_relative = 1e-12);
    }

    #[test]
    fn closed_form_rejects_disks() {
        let a = Subdomain::disk(vec![0.0, 0.0], 1.0).unwrap();
        let b = Subdomain::disk(vec![1.0, 0.0], 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pr = problem(Kernel::new(1.0, 1.0).unwrap(), intersect(&a, &b).unwrap(), 4, 16, data_in(&mut rng, 3, 0.0, 1.0), 2);
        assert_eq!(btip_closed_form(&pr, &[vec![0.5, 0.0]]), Err(Error::NotBoxRegion));
    }

    #[test]
    fn w_closed_form_is_symmetric() {
        let k = Kernel::new(1.2, 0.6).unwrap();
        let geo = EdgeGeometry::new(k, box_region([0.0, 0.0], [1.0, 1.0]), 4, 8).unwrap();
        let set = vec![vec![0.1, 0.2], vec![0.7, 0.4], vec![0.5, 0.9]];
        let w = geo.w_matrix(&set, Integrator::ClosedForm).unwrap();
        for r in 0..3 {
            for s in 0..3 {
                assert_eq!(w[(r, s)], w[(s, r)]);
            }
        }
    }

    #[test]
    fn informative_point_beats_far_point() {
        let k = Kernel::new(1.0, 0.5).unwrap();
        let mut d = AugmentedDataset::new();
        d.push_raw(Measurement::new(vec![0.5, 0.5], 0.4, 0.0064).unwrap());
        let pr = problem(k, box_region([0.0, 0.0], [1.0, 1.0]), 4, 32, d, 1);
        let near = btip_objective(&pr, &[vec![0.5, 0.5]]).unwrap();
        let far = btip_objective(&pr, &[vec![20.0, 20.0]]).unwrap();
        assert!(near < far);
    }

    #[test]
    fn literal_and_trace_quadrature_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let k = Kernel::new(0.9, 0.85).unwrap();
        let a = Subdomain::disk(vec![-3.0, -2.6], 4.4).unwrap();
        let b = Subdomain::disk(vec![2.5, -2.8], 4.4).unwrap();
        let pr = problem(k, intersect(&a, &b).unwrap(), 9, 24, data_in(&mut rng, 15, -4.0, 2.0), 3);
        let set = vec![vec![0.0, -2.0], vec![-1.0, 0.0], vec![0.5, -4.0]];
        let lit = btip_objective(&pr, &set).unwrap();
        let tr = pr.objective(&set, Integrator::Quadrature).unwrap();
        assert_relative_eq!(lit, tr, max_relative = 1e-9);
    }

    #[test]
    fn greedy_trace_is_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let k = Kernel::new(1.0, 0.8).unwrap();
        for _ in 0..20 {
            let pr = problem(k, box_region([-1.0, -1.0], [1.5, 1.0]), 4, 20, data_in(&mut rng, 10, -2.0, 2.0), 4);
            let sel = select_edge_inducing(&pr, Optimizer::Grid).unwrap();
            for w in sel.objective_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-9, "{} > {}", w[1], w[0]);
            }
        }
    }

    #[test]
    fn normalized_integrand_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let k = Kernel::new(1.15, 1.1).unwrap();
        let d = data_in(&mut rng, 12, -1.0, 2.0);
        let ind = InducingSet::new(vec![vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let sp = fit_sparse(&k, &d, &ind).unwrap();
        let region = box_region([-1.0, -1.0], [2.0, 2.0]);
        for x in quadrature(&region, 16).unwrap().nodes {
            let v = sp.predict(&x).variance / k.prior_variance();
            assert!((0.0..=1.0 + 1e-9).contains(&v));
        }
    }

    #[test]
    fn budget_one_returns_centroid() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let k = Kernel::new(1.0, 1.0).unwrap();
        let pr = problem(k, box_region([0.0, 0.0], [2.0, 1.0]), 9, 16, data_in(&mut rng, 5, 0.0, 2.0), 1);
        let sel = select_edge_inducing(&pr, Optimizer::Grid).unwrap();
        assert_eq!(sel.points.len(), 1);
        let c = pr.geometry().targets().centroid();
        assert_relative_eq!(sel.points[0][0], c[0], max_relative = 1e-12);
        assert_relative_eq!(sel.points[0][1], c[1], max_relative = 1e-12);
        assert_relative_eq!(c[0], 1.0, max_relative = 1e-12);
        assert_relative_eq!(c[1], 0.5, max_relative = 1e-12);
    }

    #[test]
    fn centroid_outside_overlap_is_projected() {
        let a = Subdomain::disk(vec![0.0, 0.0], 1.0).unwrap();
        let b = Subdomain::disk(vec![1.9, 0.0], 1.0).unwrap();
        let region = intersect(&a, &b).unwrap();
        let inside = TargetSet {
            points: vec![vec![0.95, 0.2], vec![0.95, -0.2]],
            weights: vec![0.5, 0.5],
        };
        let k = Kernel::new(1.0, 1.0).unwrap();
        let g = EdgeGeometry::with_targets(k, region.clone(), inside, 16).unwrap();
        assert_eq!(g.initial_point(), vec![0.95, 0.0]);
        let outside = TargetSet {
            points: vec![vec![0.95, 0.25], vec![5.0, 5.0]],
            weights: vec![0.5, 0.5],
        };
        let g = EdgeGeometry::with_targets(k, region, outside, 16).unwrap();
        let x = g.initial_point();
        assert!(g.region().contains(&x));
        assert_eq!(Some(&x), g.grid().nodes.get(g.grid().nearest(&[2.975, 2.625]).unwrap()));
    }

    #[test]
    fn selection_is_deterministic_on_symmetric_problem() {
        let k = Kernel::new(1.0, 0.6).unwrap();
        let region = box_region([-1.0, -1.0], [1.0, 1.0]);
        let t = TargetSet {
            points: vec![vec![-0.5, 0.0], vec![0.5, 0.0]],
            weights: vec![0.5, 0.5],
        };
        let geo = Arc::new(EdgeGeometry::with_targets(k, region, t, 12).unwrap());
        let mut d = AugmentedDataset::new();
        d.push_raw(Measurement::new(vec![0.0, 0.9], 0.1, 0.01).unwrap());
        let pr = BtipProblem::new(geo, d, 2).unwrap();
        let a = select_edge_inducing(&pr, Optimizer::Grid).unwrap();
        let b = select_edge_inducing(&pr, Optimizer::Grid).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.points.len(), 2);
        // Mirror images score equally; the lower node index (x < 0) wins.
        assert!(a.points[1][0] < 0.0, "{:?}", a.points);
    }

    #[test]
    fn grid_choice_is_argmin_over_nodes() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let k = Kernel::new(0.9, 0.85).unwrap();
        let a = Subdomain::disk(vec![-3.0, -2.6], 4.4).unwrap();
        let b = Subdomain::disk(vec![2.5, -2.8], 4.4).unwrap();
        let pr = problem(k, intersect(&a, &b).unwrap(), 4, 10, data_in(&mut rng, 12, -4.0, 2.0), 3);
        let sel = select_edge_inducing(&pr, Optimizer::Grid).unwrap();
        for stage in 1..sel.points.len() {
            let inc = &sel.points[..stage];
            for node in &pr.geometry().grid().nodes {
                if inc.iter().any(|s| sq_dist(s, node) < 1e-12) {
                    continue;
                }
                let mut set = inc.to_vec();
                set.push(node.clone());
                let v = btip_objective(&pr, &set).unwrap();
                assert!(sel.objective_trace[stage] <= v + 1e-9);
            }
        }
        for w in sel.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
    }

    #[test]
    fn gradient_optimizer_never_worse_than_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let k = Kernel::new(1.0, 0.9).unwrap();
        let pr = problem(k, box_region([-1.0, -1.0], [2.0, 1.5]), 9, 10, data_in(&mut rng, 10, -1.5, 2.0), 3);
        let g = select_edge_inducing(&pr, Optimizer::Grid).unwrap();
        let d = select_edge_inducing(&pr, Optimizer::Gradient).unwrap();
        assert_eq!(d.points.len(), 3);
        for (a, b) in d.objective_trace.iter().zip(&g.objective_trace).skip(1).take(1) {
            assert!(a <= b);
        }
        for p in &d.points {
            assert!(pr.geometry().region().contains(p));
        }
        let lit = btip_objective(&pr, &d.points).unwrap();
        assert_relative_eq!(lit, *d.objective_trace.last().unwrap(), max_relative = 1e-8);
    }

    #[test]
    fn packets_carry_sender_posterior() {
        let k = Kernel::new(1.0, 0.7).unwrap();
        let mut d = AugmentedDataset::new();
        d.push_raw(Measurement::new(vec![0.0, 0.0], 0.8, 1e-6).unwrap());
        let post = ExactPosterior::fit(k, &d).unwrap();
        let set = EdgeInducingSet {
            points: vec![vec![0.0, 0.0], vec![30.0, 0.0], vec![1.0, 1.0], vec![0.5, -0.5]],
            objective_trace: vec![],
        };
        let pk = build_packet_library(&post, 2, 5, &set);
        assert_eq!(pk.len(), 4);
        assert_relative_eq!(pk[0].mean, 0.8, max_relative = 1e-5);
        assert!(pk[0].variance < 1e-5 && pk[0].variance > 0.0);
        assert_relative_eq!(pk[1].variance, 1.0, max_relative = 1e-12);
        assert!(pk.iter().all(|p| p.sender_id == 2 && p.step == 5));
    }
}
