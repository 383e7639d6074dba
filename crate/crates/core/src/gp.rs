//! Exact GP regression on an agent's augmented information set.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::Kernel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub location: Vec<f64>,
    pub value: f64,
    pub noise_variance: f64,
}

impl Measurement {
    pub fn new(location: Vec<f64>, value: f64, noise_variance: f64) -> Result<Self> {
        if !(noise_variance.is_finite() && noise_variance > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "noise variance must be positive, got {noise_variance}"
            )));
        }
        if !value.is_finite() || location.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("non-finite measurement".into()));
        }
        Ok(Measurement {
            location,
            value,
            noise_variance,
        })
    }
}

/// Raw measurements followed by retained fictitious measurements.
///
/// Both blocks are append-only, so the row order of the implied noise
/// matrix is fixed: raw block first, fictitious block second.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentedDataset {
    raw: Vec<Measurement>,
    fictitious: Vec<Measurement>,
}

impl AugmentedDataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_raw(&mut self, m: Measurement) {
        self.raw.push(m);
    }

    pub fn push_fictitious(&mut self, m: Measurement) {
        self.fictitious.push(m);
    }

    pub fn raw(&self) -> &[Measurement] {
        &self.raw
    }

    pub fn fictitious(&self) -> &[Measurement] {
        &self.fictitious
    }

    /// Copy holding only the raw block.
    pub fn raw_only(&self) -> Self {
        AugmentedDataset {
            raw: self.raw.clone(),
            fictitious: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.raw.len() + self.fictitious.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All rows in noise-matrix order.
    pub fn iter(&self) -> impl Iterator<Item = &Measurement> {
        self.raw.iter().chain(self.fictitious.iter())
    }

    pub fn dim(&self) -> Option<usize> {
        self.iter().next().map(|m| m.location.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorEvaluation {
    pub mean: f64,
    pub variance: f64,
}

/// Factorized exact posterior; one Cholesky factorization serves any
/// number of test points.
#[derive(Debug, Clone)]
pub struct ExactPosterior {
    kernel: Kernel,
    inputs: Vec<Vec<f64>>,
    chol_l: DMatrix<f64>,
    weights: DVector<f64>,
}

impl ExactPosterior {
    pub fn fit(kernel: Kernel, data: &AugmentedDataset) -> Result<Self> {
        let inputs: Vec<Vec<f64>> = data.iter().map(|m| m.location.clone()).collect();
        let n = inputs.len();
        let jitter = kernel.jitter();
        let mut gram = DMatrix::zeros(n, n);
        for (i, m) in data.iter().enumerate() {
            for j in 0..i {
                let v = kernel.eval(&inputs[i], &inputs[j]);
                gram[(i, j)] = v;
                gram[(j, i)] = v;
            }
            gram[(i, i)] = kernel.prior_variance() + m.noise_variance + jitter;
        }
        let values = DVector::from_iterator(n, data.iter().map(|m| m.value));
        let chol = gram
            .cholesky()
            .ok_or(Error::SingularSystem("exact posterior gram"))?;
        let weights = chol.solve(&values);
        Ok(ExactPosterior {
            kernel,
            inputs,
            chol_l: chol.unpack(),
            weights,
        })
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    fn cross(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.inputs.len(),
            self.inputs.iter().map(|xi| self.kernel.eval(x, xi)),
        )
    }

    /// `L^{-1} k(x)`; its squared norm is the explained variance at `x`.
    fn whitened(&self, k: &DVector<f64>) -> DVector<f64> {
        self.chol_l
            .solve_lower_triangular(k)
            .expect("cholesky factor has a positive diagonal")
    }

    pub fn mean(&self, x: &[f64]) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.cross(x).dot(&self.weights)
    }

    pub fn predict(&self, x: &[f64]) -> PosteriorEvaluation {
        let prior = self.kernel.eval(x, x);
        if self.is_empty() {
            return PosteriorEvaluation {
                mean: 0.0,
                variance: prior,
            };
        }
        let k = self.cross(x);
        let mean = k.dot(&self.weights);
        let v = self.whitened(&k);
        PosteriorEvaluation {
            mean,
            variance: (prior - v.norm_squared()).max(0.0),
        }
    }

    /// Posterior covariance `Sigma(x, y)`.
    pub fn covariance(&self, x: &[f64], y: &[f64]) -> f64 {
        let prior = self.kernel.eval(x, y);
        if self.is_empty() {
            return prior;
        }
        let vx = self.whitened(&self.cross(x));
        let vy = self.whitened(&self.cross(y));
        prior - vx.dot(&vy)
    }

    /// Posterior means and the full posterior covariance over `points`.
    pub fn joint(&self, points: &[Vec<f64>]) -> (Vec<f64>, DMatrix<f64>) {
        let m = points.len();
        let mut cov = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..=i {
                cov[(i, j)] = self.kernel.eval(&points[i], &points[j]);
            }
        }
        let mut means = vec![0.0; m];
        if !self.is_empty() {
            let ks: Vec<DVector<f64>> = points.iter().map(|p| self.cross(p)).collect();
            let vs: Vec<DVector<f64>> = ks.iter().map(|k| self.whitened(k)).collect();
            for i in 0..m {
                means[i] = ks[i].dot(&self.weights);
                for j in 0..=i {
                    cov[(i, j)] -= vs[i].dot(&vs[j]);
                }
            }
        }
        for i in 0..m {
            for j in 0..i {
                cov[(j, i)] = cov[(i, j)];
            }
        }
        (means, cov)
    }
}

pub fn posterior_at(
    kernel: &Kernel,
    data: &AugmentedDataset,
    x: &[f64],
) -> Result<PosteriorEvaluation> {
    Ok(ExactPosterior::fit(*kernel, data)?.predict(x))
}

pub fn posterior_batch(
    kernel: &Kernel,
    data: &AugmentedDataset,
    xs: &[Vec<f64>],
) -> Result<Vec<PosteriorEvaluation>> {
    let post = ExactPosterior::fit(*kernel, data)?;
    Ok(xs.iter().map(|x| post.predict(x)).collect())
}
