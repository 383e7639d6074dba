//! Subdomains, pairwise overlaps and the grids used to integrate over them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::sq_dist;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Aabb {
    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn intersect(&self, other: &Aabb) -> Option<Aabb> {
        if self.dim() != other.dim() {
            return None;
        }
        let lower: Vec<f64> = self.lower.iter().zip(&other.lower).map(|(a, b)| a.max(*b)).collect();
        let upper: Vec<f64> = self.upper.iter().zip(&other.upper).map(|(a, b)| a.min(*b)).collect();
        lower
            .iter()
            .zip(&upper)
            .all(|(l, u)| l <= u)
            .then_some(Aabb { lower, upper })
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(c, (l, u))| *l <= *c && *c <= *u)
    }

    pub fn volume(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).product()
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (c, (l, u)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *c = c.clamp(*l, *u);
        }
    }

    /// All `2^n` corners.
    fn corners(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        let n = self.dim();
        (0..1usize << n).map(move |mask| {
            (0..n)
                .map(|d| if mask >> d & 1 == 1 { self.upper[d] } else { self.lower[d] })
                .collect()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Subdomain {
    Disk { center: Vec<f64>, radius: f64 },
    Box { lower: Vec<f64>, upper: Vec<f64> },
}

impl Subdomain {
    pub fn disk(center: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::InvalidArgument(format!("radius must be positive, got {radius}")));
        }
        if center.is_empty() || center.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("disk center must be finite and non-empty".into()));
        }
        Ok(Subdomain::Disk { center, radius })
    }

    pub fn boxed(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::InvalidArgument("box corners must have equal, non-zero dimension".into()));
        }
        if !lower.iter().zip(&upper).all(|(l, u)| l.is_finite() && u.is_finite() && l < u) {
            return Err(Error::InvalidArgument("box requires lower < upper componentwise".into()));
        }
        Ok(Subdomain::Box { lower, upper })
    }

    pub fn dim(&self) -> usize {
        match self {
            Subdomain::Disk { center, .. } => center.len(),
            Subdomain::Box { lower, .. } => lower.len(),
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Subdomain::Disk { center, radius } => sq_dist(center, x) <= radius * radius,
            Subdomain::Box { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(c, (l, u))| *l <= *c && *c <= *u),
        }
    }

    pub fn bounding_box(&self) -> Aabb {
        match self {
            Subdomain::Disk { center, radius } => Aabb {
                lower: center.iter().map(|c| c - radius).collect(),
                upper: center.iter().map(|c| c + radius).collect(),
            },
            Subdomain::Box { lower, upper } => Aabb {
                lower: lower.clone(),
                upper: upper.clone(),
            },
        }
    }

    /// Squared distance from `x` to the nearest point of the shape.
    fn sq_distance_to(&self, x: &[f64]) -> f64 {
        match self {
            Subdomain::Disk { center, radius } => {
                let d = sq_dist(center, x).sqrt() - radius;
                if d > 0.0 {
                    d * d
                } else {
                    0.0
                }
            }
            Subdomain::Box { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(c, (l, u))| {
                    let e = if c < l { l - c } else if c > u { c - u } else { 0.0 };
                    e * e
                })
                .sum(),
        }
    }
}

/// Intersection of two subdomains, kept implicitly as a membership test
/// plus the componentwise intersection of their bounding boxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapRegion {
    a: Subdomain,
    b: Subdomain,
    bounding_box: Aabb,
}

impl OverlapRegion {
    pub fn a(&self) -> &Subdomain {
        &self.a
    }

    pub fn b(&self) -> &Subdomain {
        &self.b
    }

    pub fn bounding_box(&self) -> &Aabb {
        &self.bounding_box
    }

    pub fn dim(&self) -> usize {
        self.bounding_box.dim()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.a.contains(x) && self.b.contains(x)
    }

    /// True when membership coincides with the bounding box. Both shapes
    /// are convex, so checking the corners is enough.
    pub fn is_box(&self) -> bool {
        self.bounding_box.corners().all(|c| self.contains(&c))
    }
}

pub fn intersect(a: &Subdomain, b: &Subdomain) -> Option<OverlapRegion> {
    if a.dim() != b.dim() {
        return None;
    }
    let touching = match (a, b) {
        (Subdomain::Disk { center: c1, radius: r1 }, Subdomain::Disk { center: c2, radius: r2 }) => {
            sq_dist(c1, c2) <= (r1 + r2) * (r1 + r2)
        }
        (Subdomain::Disk { center, radius }, other @ Subdomain::Box { .. })
        | (other @ Subdomain::Box { .. }, Subdomain::Disk { center, radius }) => {
            other.sq_distance_to(center) <= radius * radius
        }
        (Subdomain::Box { .. }, Subdomain::Box { .. }) => true,
    };
    if !touching {
        return None;
    }
    let bounding_box = a.bounding_box().intersect(&b.bounding_box())?;
    Some(OverlapRegion {
        a: a.clone(),
        b: b.clone(),
        bounding_box,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    pub nodes: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl QuadratureGrid {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Index of the node closest to `x`; ties go to the lower index.
    pub fn nearest(&self, x: &[f64]) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, n) in self.nodes.iter().enumerate() {
            let d = sq_dist(n, x);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        best.map(|(i, _)| i)
    }
}

/// Member cell centers of a `resolution^n` grid over the bounding box, in
/// lexicographic cell order (first axis slowest).
fn cell_centers(region: &OverlapRegion, resolution: usize) -> (Vec<Vec<f64>>, f64) {
    let bb = region.bounding_box();
    let n = bb.dim();
    let steps: Vec<f64> = (0..n).map(|d| (bb.upper[d] - bb.lower[d]) / resolution as f64).collect();
    let cell = steps.iter().product::<f64>();
    let total = resolution.pow(n as u32);
    let mut nodes = Vec::new();
    let mut idx = vec![0usize; n];
    for _ in 0..total {
        let x: Vec<f64> = (0..n)
            .map(|d| bb.lower[d] + (idx[d] as f64 + 0.5) * steps[d])
            .collect();
        if region.contains(&x) {
            nodes.push(x);
        }
        for d in (0..n).rev() {
            idx[d] += 1;
            if idx[d] < resolution {
                break;
            }
            idx[d] = 0;
        }
    }
    (nodes, cell)
}

pub fn quadrature(region: &OverlapRegion, resolution: usize) -> Result<QuadratureGrid> {
    if resolution < 2 {
        return Err(Error::InvalidArgument(format!("quadrature resolution must be >= 2, got {resolution}")));
    }
    let (nodes, cell) = cell_centers(region, resolution);
    if nodes.is_empty() || cell <= 0.0 {
        return Err(Error::DegenerateOverlap);
    }
    let weights = vec![cell; nodes.len()];
    Ok(QuadratureGrid { nodes, weights })
}

/// Target locations inside an overlap with their importance weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSet {
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl TargetSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Vec<f64> {
        let n = self.points.first().map_or(0, Vec::len);
        let mut c = vec![0.0; n];
        for (p, w) in self.points.iter().zip(&self.weights) {
            for (ci, pi) in c.iter_mut().zip(p) {
                *ci += w * pi;
            }
        }
        c
    }
}

/// Exactly `q` targets on a coarse uniform sub-grid of the overlap, with
/// equal weights. The sub-grid starts at the smallest resolution with at
/// least `q` cells and is refined until `q` cells pass membership; surplus
/// nodes are thinned at evenly spaced indices.
pub fn target_set(region: &OverlapRegion, q: usize) -> Result<TargetSet> {
    if q == 0 {
        return Err(Error::InvalidArgument("target count must be >= 1".into()));
    }
    let n = region.dim() as u32;
    let mut res = 1usize;
    while res.pow(n) < q {
        res += 1;
    }
    let limit = 4 * res + 64;
    let mut nodes = Vec::new();
    while res <= limit {
        let (found, cell) = cell_centers(region, res);
        if cell <= 0.0 {
            return Err(Error::DegenerateOverlap);
        }
        nodes = found;
        if nodes.len() >= q {
            break;
        }
        res += 1;
    }
    if nodes.is_empty() {
        return Err(Error::DegenerateOverlap);
    }
    let len = nodes.len();
    // Thin when there are too many, cycle when the region is too thin.
    let points: Vec<Vec<f64>> = if len >= q {
        (0..q).map(|k| nodes[k * len / q].clone()).collect()
    } else {
        (0..q).map(|k| nodes[k % len].clone()).collect()
    };
    Ok(TargetSet {
        points,
        weights: vec![1.0 / q as f64; q],
    })
}
