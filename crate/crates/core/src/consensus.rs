//! Loss models, noisy gradients and the pairwise two-step model update.

use crate::linalg::{self, Matrix};
use crate::network::Topology;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConsensusError {
    #[error("edge has zero selection probability")]
    ZeroProbability,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("linear system for the optimum is singular")]
    SingularSystem,
    #[error("invalid loss: {0}")]
    InvalidLoss(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelVector(pub Vec<f64>);

impl ModelVector {
    pub fn zeros(dim: usize) -> Self {
        ModelVector(vec![0.0; dim])
    }

    pub fn filled(dim: usize, v: f64) -> Self {
        ModelVector(vec![v; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl From<Vec<f64>> for ModelVector {
    fn from(v: Vec<f64>) -> Self {
        ModelVector(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// i.i.d. N(0, sigma^2/dim) per coordinate
    #[default]
    Gaussian,
    /// +-sigma/sqrt(dim) per coordinate; bounded, with xi^T xi = sigma^2
    Rademacher,
}

/// Something that can produce (noisy) gradients of a convex loss.
pub trait GradientOracle {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn exact_gradient(&self, x: &[f64]) -> Vec<f64>;
    fn noisy_gradient<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Vec<f64>;
    fn strong_convexity(&self) -> f64;
    fn smoothness(&self) -> f64;
}

/// f(x) = 1/2 (x - b)^T A (x - b) with A symmetric positive definite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticLoss {
    a: Matrix,
    b: Vec<f64>,
    mu: f64,
    lips: f64,
    noise_sigma: f64,
    noise: NoiseKind,
    grad_bound: Option<f64>,
}

impl QuadraticLoss {
    pub fn diagonal(diag: Vec<f64>, b: Vec<f64>, noise_sigma: f64) -> Result<Self, ConsensusError> {
        if diag.len() != b.len() || diag.is_empty() {
            return Err(ConsensusError::DimensionMismatch(format!("diag has {} entries, b has {}", diag.len(), b.len())));
        }
        if diag.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
            return Err(ConsensusError::InvalidLoss("diagonal entries must be positive".into()));
        }
        let mu = diag.iter().copied().fold(f64::INFINITY, f64::min);
        let lips = diag.iter().copied().fold(0.0, f64::max);
        let n = diag.len();
        let a = Matrix::from_fn(n, n, |i, j| if i == j { diag[i] } else { 0.0 });
        Self::assemble(a, b, mu, lips, noise_sigma)
    }

    pub fn dense(a: Matrix, b: Vec<f64>, noise_sigma: f64) -> Result<Self, ConsensusError> {
        if !a.is_square() || a.rows() != b.len() || b.is_empty() {
            return Err(ConsensusError::DimensionMismatch(format!("A is {}x{}, b has {}", a.rows(), a.cols(), b.len())));
        }
        if a.asymmetry() > 1e-12 * a.as_slice().iter().fold(1.0f64, |m, v| m.max(v.abs())) {
            return Err(ConsensusError::InvalidLoss("A must be symmetric".into()));
        }
        let ev = linalg::jacobi_eigenvalues(&a).map_err(|e| ConsensusError::InvalidLoss(e.to_string()))?;
        let lips = ev[0];
        let mu = ev[ev.len() - 1];
        if mu <= 0.0 {
            return Err(ConsensusError::InvalidLoss(format!("A is not positive definite (lambda_min = {mu})")));
        }
        Self::assemble(a, b, mu, lips, noise_sigma)
    }

    fn assemble(a: Matrix, b: Vec<f64>, mu: f64, lips: f64, noise_sigma: f64) -> Result<Self, ConsensusError> {
        if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
            return Err(ConsensusError::InvalidLoss(format!("noise sigma {noise_sigma} must be non-negative")));
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(ConsensusError::InvalidLoss("b must be finite".into()));
        }
        Ok(QuadraticLoss { a, b, mu, lips, noise_sigma, noise: NoiseKind::Gaussian, grad_bound: None })
    }

    /// Random SPD matrix with spectrum spread over [mu, lips] (both
    /// endpoints attained) in a random orthonormal basis.
    pub fn random_spd<R: Rng + ?Sized>(
        dim: usize,
        mu: f64,
        lips: f64,
        b: Vec<f64>,
        noise_sigma: f64,
        rng: &mut R,
    ) -> Result<Self, ConsensusError> {
        if !(mu > 0.0 && lips >= mu) {
            return Err(ConsensusError::InvalidLoss(format!("need 0 < mu <= L, got mu = {mu}, L = {lips}")));
        }
        if dim == 0 || b.len() != dim {
            return Err(ConsensusError::DimensionMismatch(format!("dim {dim}, b has {}", b.len())));
        }
        let eig: Vec<f64> = (0..dim)
            .map(|k| match k {
                0 => mu,
                _ if k == dim - 1 => lips,
                _ => rng.random_range(mu..=lips),
            })
            .collect();
        // Gram-Schmidt on a Gaussian matrix
        let mut q: Vec<Vec<f64>> = Vec::with_capacity(dim);
        while q.len() < dim {
            let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
            for u in &q {
                let d = linalg::dot(&v, u);
                v.iter_mut().zip(u).for_each(|(x, y)| *x -= d * y);
            }
            let nv = linalg::norm_sq(&v).sqrt();
            if nv > 1e-8 {
                q.push(v.into_iter().map(|x| x / nv).collect());
            }
        }
        let mut a = Matrix::from_fn(dim, dim, |i, j| (0..dim).map(|k| q[k][i] * eig[k] * q[k][j]).sum());
        for i in 0..dim {
            for j in (i + 1)..dim {
                let v = 0.5 * (a[(i, j)] + a[(j, i)]);
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
        }
        let mut loss = Self::assemble(a, b, mu, lips, noise_sigma)?;
        loss.mu = mu;
        loss.lips = lips;
        Ok(loss)
    }

    pub fn with_noise(mut self, noise: NoiseKind) -> Self {
        self.noise = noise;
        self
    }

    pub fn with_grad_bound(mut self, eta: Option<f64>) -> Self {
        self.grad_bound = eta;
        self
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn lips(&self) -> f64 {
        self.lips
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    pub fn noise(&self) -> NoiseKind {
        self.noise
    }

    pub fn grad_bound(&self) -> Option<f64> {
        self.grad_bound
    }

    /// Exact gradient plus zero-mean noise with E[xi^T xi] = sigma^2.
    pub fn local_gradient<R: Rng + ?Sized>(&self, x: &ModelVector, rng: &mut R) -> ModelVector {
        ModelVector(self.noisy_gradient(&x.0, rng))
    }
}

impl GradientOracle for QuadraticLoss {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let d: Vec<f64> = x.iter().zip(&self.b).map(|(a, b)| a - b).collect();
        0.5 * linalg::dot(&d, &self.a.mul_vec(&d))
    }

    fn exact_gradient(&self, x: &[f64]) -> Vec<f64> {
        let d: Vec<f64> = x.iter().zip(&self.b).map(|(a, b)| a - b).collect();
        self.a.mul_vec(&d)
    }

    fn noisy_gradient<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Vec<f64> {
        let mut g = self.exact_gradient(x);
        if self.noise_sigma > 0.0 {
            let s = self.noise_sigma / (g.len() as f64).sqrt();
            for v in g.iter_mut() {
                *v += match self.noise {
                    NoiseKind::Gaussian => s * Distribution::<f64>::sample(&StandardNormal, rng),
                    NoiseKind::Rademacher => {
                        if rng.random_bool(0.5) {
                            s
                        } else {
                            -s
                        }
                    }
                };
            }
        }
        g
    }

    fn strong_convexity(&self) -> f64 {
        self.mu
    }

    fn smoothness(&self) -> f64 {
        self.lips
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateParams {
    pub alpha: f64,
    pub rho: f64,
    /// d_im + d_mi, 0 for a self-iteration
    pub d_sum: f64,
    pub p_im: f64,
}

impl UpdateParams {
    /// alpha rho gamma, the weight on the neighbor's model.
    pub fn mixing_weight(&self) -> Result<f64, ConsensusError> {
        if self.d_sum == 0.0 {
            return Ok(0.0);
        }
        if self.p_im <= 0.0 {
            return Err(ConsensusError::ZeroProbability);
        }
        Ok(self.alpha * self.rho * self.d_sum / (2.0 * self.p_im))
    }
}

/// (1 - w)(x_i - alpha g) + w x_m with w = alpha rho d_sum / (2 p_im).
pub fn two_step_update(x_i: &ModelVector, g: &ModelVector, x_m: &ModelVector, params: UpdateParams) -> Result<ModelVector, ConsensusError> {
    if x_i.dim() != g.dim() || x_i.dim() != x_m.dim() {
        return Err(ConsensusError::DimensionMismatch(format!("{} / {} / {}", x_i.dim(), g.dim(), x_m.dim())));
    }
    let w = params.mixing_weight()?;
    Ok(weighted_update(x_i, g, x_m, params.alpha, w))
}

/// (1 - w)(x_i - alpha g) + w x_m for an explicit weight.
pub fn weighted_update(x_i: &ModelVector, g: &ModelVector, x_m: &ModelVector, alpha: f64, w: f64) -> ModelVector {
    ModelVector(
        x_i.0
            .iter()
            .zip(&g.0)
            .zip(&x_m.0)
            .map(|((xi, gi), xm)| (1.0 - w) * (xi - alpha * gi) + w * xm)
            .collect(),
    )
}

/// D = I + alpha rho gamma e_i (e_m - e_i)^T.
pub fn update_operator(i: usize, m: usize, alpha: f64, rho: f64, gamma: f64, n: usize) -> Matrix {
    let mut d = Matrix::identity(n);
    let w = alpha * rho * gamma;
    d[(i, i)] -= w;
    d[(i, m)] += w;
    d
}

/// sum_i [ f_i(x_i) + rho/4 sum_m d_im |x_i - x_m|^2 ].
pub fn global_objective(xs: &[ModelVector], losses: &[QuadraticLoss], rho: f64, topology: &Topology) -> f64 {
    let n = xs.len();
    let mut total = 0.0;
    for i in 0..n {
        total += losses[i].value(&xs[i].0);
        for m in 0..n {
            if topology.has_edge(i, m) {
                total += rho / 4.0 * linalg::dist_sq(&xs[i].0, &xs[m].0);
            }
        }
    }
    total
}

/// x* = argmin sum_i f_i = (sum A_i)^{-1} sum A_i b_i.
pub fn optimum_oracle(losses: &[QuadraticLoss]) -> Result<ModelVector, ConsensusError> {
    let first = losses.first().ok_or_else(|| ConsensusError::DimensionMismatch("no losses".into()))?;
    let dim = first.dim();
    if losses.iter().any(|l| l.dim() != dim) {
        return Err(ConsensusError::DimensionMismatch("losses have different dimensions".into()));
    }
    let mut a = nalgebra::DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = nalgebra::DVector::<f64>::zeros(dim);
    for l in losses {
        let ab = l.a.mul_vec(&l.b);
        for i in 0..dim {
            rhs[i] += ab[i];
            for j in 0..dim {
                a[(i, j)] += l.a[(i, j)];
            }
        }
    }
    let x = a.lu().solve(&rhs).ok_or(ConsensusError::SingularSystem)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(ConsensusError::SingularSystem);
    }
    Ok(ModelVector(x.iter().copied().collect()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningRateCheck {
    pub ok: bool,
    /// 2 / (mu_min + L_max)
    pub limit: f64,
    pub warning: Option<String>,
}

pub fn validate_learning_rate(alpha: f64, losses: &[QuadraticLoss]) -> LearningRateCheck {
    let mu = losses.iter().map(|l| l.mu).fold(f64::INFINITY, f64::min);
    let lips = losses.iter().map(|l| l.lips).fold(0.0, f64::max);
    let limit = 2.0 / (mu + lips);
    let warning = if !(alpha > 0.0) {
        Some(format!("learning rate {alpha} is not positive"))
    } else if alpha > limit * (1.0 + 1e-12) {
        Some(format!("learning rate {alpha} exceeds 2/(mu+L) = {limit}"))
    } else {
        None
    };
    LearningRateCheck { ok: warning.is_none(), limit, warning }
}
