//! FITC-style inducing-point approximation of an augmented GP.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::gp::{AugmentedDataset, PosteriorEvaluation};
use crate::kernel::{sq_dist, Kernel};

pub const DEFAULT_MIN_SEPARATION: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct InducingSet {
    points: Vec<Vec<f64>>,
}

impl InducingSet {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        Self::with_separation(points, DEFAULT_MIN_SEPARATION)
    }

    pub fn with_separation(points: Vec<Vec<f64>>, min_separation: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument("inducing set is empty".into()));
        }
        let sep2 = min_separation * min_separation;
        for i in 0..points.len() {
            for j in 0..i {
                if sq_dist(&points[i], &points[j]) < sep2 {
                    return Err(Error::InvalidArgument(format!(
                        "inducing points {j} and {i} are closer than {min_separation}"
                    )));
                }
            }
        }
        Ok(InducingSet { points })
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct SparsePosterior {
    kernel: Kernel,
    inducing: Vec<Vec<f64>>,
    /// Cholesky factor of the inducing Gram matrix.
    kpp_l: DMatrix<f64>,
    /// Cholesky factor of the whitened `A = L^{-1} Q L^{-T}` where
    /// `Q = K_pp + K_Xp^T Omega^{-1} K_Xp` and `L L^T = K_pp`.
    a_l: DMatrix<f64>,
    /// `Q^{-1} K_Xp^T Omega^{-1} Y`.
    weights: DVector<f64>,
    /// Clamped diagonal correction, one entry per training row.
    lambda: Vec<f64>,
}

impl SparsePosterior {
    pub fn inducing(&self) -> &[Vec<f64>] {
        &self.inducing
    }

    pub fn diagonal_correction(&self) -> &[f64] {
        &self.lambda
    }

    fn kp(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.inducing.len(),
            self.inducing.iter().map(|u| self.kernel.eval(u, x)),
        )
    }

    pub fn predict(&self, x: &[f64]) -> PosteriorEvaluation {
        let kp = self.kp(x);
        let v = self.kpp_l.solve_lower_triangular(&kp).expect("positive diagonal");
        let mean = kp.dot(&self.weights);
        let b = self.a_l.solve_lower_triangular(&v).expect("positive diagonal");
        let variance = self.kernel.eval(x, x) - v.norm_squared() + b.norm_squared();
        PosteriorEvaluation {
            mean,
            variance: variance.max(0.0),
        }
    }
}

/// Cholesky factor of a covariance matrix, returned with the matrix that was
/// factored. The matrix is factored as is when possible and the fixed jitter
/// is added only on failure: any diagonal shift of `K_pp` biases the
/// projection `k_p^T K_pp^{-1}` by roughly jitter over its smallest eigenvalue.
pub(crate) fn factor_with_fallback(
    kernel: &Kernel,
    m: DMatrix<f64>,
    what: &'static str,
) -> Result<(Cholesky<f64, Dyn>, DMatrix<f64>)> {
    if let Some(c) = m.clone().cholesky() {
        return Ok((c, m));
    }
    let mut jittered = m;
    for r in 0..jittered.nrows() {
        jittered[(r, r)] += kernel.jitter();
    }
    let c = jittered.clone().cholesky().ok_or(Error::SingularSystem(what))?;
    Ok((c, jittered))
}

/// Fits the sparse posterior. The training cross-covariance is streamed row
/// by row, so memory is `O(n p + p^2)` and no `n x n` matrix is formed.
pub fn fit_sparse(
    kernel: &Kernel,
    data: &AugmentedDataset,
    inducing: &InducingSet,
) -> Result<SparsePosterior> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("sparse fit needs at least one measurement".into()));
    }
    let pts = inducing.points();
    let p = pts.len();
    let kpp = DMatrix::from_fn(p, p, |r, s| kernel.eval(&pts[r], &pts[s]));
    let (kpp_chol, _) = factor_with_fallback(kernel, kpp, "inducing gram")?;
    let kpp_l = kpp_chol.unpack();

    // Whitened accumulation: with a_i = L^{-1} k_p(x_i), A = I + sum a_i a_i^T / omega_i
    // has eigenvalues >= 1, unlike Q whose condition number grows like cond(K_pp)^2.
    let mut a = DMatrix::identity(p, p);
    let mut rhs = DVector::zeros(p);
    let mut lambda = Vec::with_capacity(data.len());
    for m in data.iter() {
        let kx = DVector::from_iterator(p, pts.iter().map(|u| kernel.eval(&m.location, u)));
        let v = kpp_l.solve_lower_triangular(&kx).expect("positive diagonal");
        let lam = (kernel.eval(&m.location, &m.location) - v.norm_squared()).max(0.0);
        lambda.push(lam);
        let omega = lam + m.noise_variance;
        a.syger(1.0 / omega, &v, &v, 1.0);
        rhs.axpy(m.value / omega, &kx, 1.0);
    }
    // syger only fills the lower triangle.
    a.fill_upper_triangle_with_lower_triangle();
    let a_chol = a.cholesky().ok_or(Error::SingularSystem("sparse Q matrix"))?;

    // Q^{-1} b = L^{-T} A^{-1} L^{-1} b.
    let white = kpp_l.solve_lower_triangular(&rhs).expect("positive diagonal");
    let weights = kpp_l
        .tr_solve_lower_triangular(&a_chol.solve(&white))
        .expect("positive diagonal");
    Ok(SparsePosterior {
        kernel: *kernel,
        inducing: pts.to_vec(),
        kpp_l,
        a_l: a_chol.unpack(),
        weights,
        lambda,
    })
}

pub fn sparse_posterior_at(sp: &SparsePosterior, x: &[f64]) -> PosteriorEvaluation {
    sp.predict(x)
}
