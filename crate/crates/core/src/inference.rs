//! Bayesian inference over `θ = (A, B, Π)` from rollout data.
//!
//! Parameters `(A, B)` are handled as the stacked vector
//! `θ_AB = vec([Aᵀ; Bᵀ])`, i.e. row `i` of `[A B]` occupies entries
//! `i·(n_x+n_u) .. (i+1)·(n_x+n_u)`. With `Π` known and a flat or Gaussian
//! prior the posterior over `θ_AB` is Gaussian; otherwise a two-block Gibbs
//! sampler alternates the Gaussian conditional with an inverse-Wishart draw
//! for `Π`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{psd_cholesky, spd_inverse, symmetric_part};
use crate::model::{standard_normal_vector, system_is_stabilizable, Dataset, LinearSystem};
use crate::scalar::{lit, Real};

/// Prior over `θ_AB`.
#[derive(Debug, Clone, PartialEq)]
pub enum AbPrior<T: Real> {
    Flat,
    Gaussian { mean: DVector<T>, covariance: DMatrix<T> },
}

/// Prior over `Π` when it is not known.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PiPrior {
    /// `p(Π) ∝ det(Π)^{−(n_x+1)/2}`; inverse-Wishart conditional with `ν = N`.
    Jeffreys,
    /// `p(Π) ∝ 1`; `ν = N − n_x − 1`, rejected unless `ν > n_x − 1`.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GibbsConfig {
    pub burn_in: usize,
    pub thin: usize,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        Self { burn_in: 1000, thin: 10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSpec<T: Real> {
    /// Fixed noise covariance; `None` selects the Gibbs path.
    pub known_pi: Option<DMatrix<T>>,
    pub prior: AbPrior<T>,
    pub pi_prior: PiPrior,
    pub gibbs: GibbsConfig,
}

impl<T: Real> PosteriorSpec<T> {
    pub fn known_pi(pi: DMatrix<T>) -> Self {
        Self { known_pi: Some(pi), prior: AbPrior::Flat, pi_prior: PiPrior::Jeffreys, gibbs: GibbsConfig::default() }
    }

    pub fn unknown_pi() -> Self {
        Self { known_pi: None, prior: AbPrior::Flat, pi_prior: PiPrior::Jeffreys, gibbs: GibbsConfig::default() }
    }

    fn validate(&self, data: &Dataset<T>) -> Result<()> {
        let n = data.n_x();
        let d = n * (n + data.n_u());
        if let Some(pi) = &self.known_pi {
            if pi.shape() != (n, n) {
                return Err(Error::Dimension("known Pi has wrong shape".into()));
            }
            if symmetric_part(pi).cholesky().is_none() {
                return Err(Error::NotPsd("known Pi must be positive definite".into()));
            }
        }
        if let AbPrior::Gaussian { mean, covariance } = &self.prior {
            if mean.len() != d || covariance.shape() != (d, d) {
                return Err(Error::Dimension(format!("Gaussian prior must have dimension {d}")));
            }
            if symmetric_part(covariance).cholesky().is_none() {
                return Err(Error::NotPsd("prior covariance must be positive definite".into()));
            }
        }
        Ok(())
    }
}

/// Gaussian density over `θ_AB` with a cached Cholesky factor of `Σ`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosterior<T: Real> {
    pub mu: DVector<T>,
    pub sigma: DMatrix<T>,
    chol: DMatrix<T>,
    n_x: usize,
    n_u: usize,
}

impl<T: Real> GaussianPosterior<T> {
    pub fn new(mu: DVector<T>, sigma: DMatrix<T>, n_x: usize, n_u: usize) -> Result<Self> {
        let sigma = symmetric_part(&sigma);
        let chol = sigma.clone().cholesky().ok_or(Error::ImproperPosterior)?.l();
        Ok(Self { mu, sigma, chol, n_x, n_u })
    }

    pub fn sample_ab<R: Rng + ?Sized>(&self, rng: &mut R) -> (DMatrix<T>, DMatrix<T>) {
        let z = standard_normal_vector::<T, _>(self.mu.len(), rng);
        let theta = &self.mu + &self.chol * z;
        unstack_ab(&theta, self.n_x, self.n_u)
    }

    pub fn mean_ab(&self) -> (DMatrix<T>, DMatrix<T>) {
        unstack_ab(&self.mu, self.n_x, self.n_u)
    }
}

/// `vec([Aᵀ; Bᵀ])`.
pub fn stack_ab<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> DVector<T> {
    let (n, m) = (a.nrows(), b.ncols());
    let p = n + m;
    DVector::from_fn(n * p, |idx, _| {
        let (i, j) = (idx / p, idx % p);
        if j < n {
            a[(i, j)]
        } else {
            b[(i, j - n)]
        }
    })
}

/// Inverse of [`stack_ab`].
pub fn unstack_ab<T: Real>(theta: &DVector<T>, n_x: usize, n_u: usize) -> (DMatrix<T>, DMatrix<T>) {
    let p = n_x + n_u;
    let a = DMatrix::from_fn(n_x, n_x, |i, j| theta[i * p + j]);
    let b = DMatrix::from_fn(n_x, n_u, |i, j| theta[i * p + n_x + j]);
    (a, b)
}

fn regressor<T: Real>(x: &DVector<T>, u: &DVector<T>) -> DVector<T> {
    let mut z = DVector::zeros(x.len() + u.len());
    z.rows_mut(0, x.len()).copy_from(x);
    z.rows_mut(x.len(), u.len()).copy_from(u);
    z
}

/// Sufficient statistics `Σ z zᵀ` and `Σ z x⁺ᵀ` with `z = [x; u]`.
fn moments<T: Real>(data: &Dataset<T>) -> (DMatrix<T>, DMatrix<T>) {
    let p = data.n_x() + data.n_u();
    let mut szz = DMatrix::zeros(p, p);
    let mut szx = DMatrix::zeros(p, data.n_x());
    for (x, u, xn) in data.transitions() {
        let z = regressor(x, u);
        szz += &z * z.transpose();
        szx += &z * xn.transpose();
    }
    (szz, szx)
}

/// Least-squares `(A, B)` minimizing `Σ |x_t − A x_{t−1} − B u_{t−1}|²`.
///
/// Solved through the SVD of the stacked regressor; singular values below
/// `max(rows, cols)·ε·σ_max` count as rank loss.
pub fn least_squares_estimate<T: Real>(data: &Dataset<T>) -> Result<(DMatrix<T>, DMatrix<T>)> {
    let (n, m) = (data.n_x(), data.n_u());
    let p = n + m;
    let rows = data.num_transitions();
    let mut zmat = DMatrix::<T>::zeros(rows, p);
    let mut ymat = DMatrix::<T>::zeros(rows, n);
    for (r, (x, u, xn)) in data.transitions().enumerate() {
        zmat.view_mut((r, 0), (1, n)).copy_from(&x.transpose());
        zmat.view_mut((r, n), (1, m)).copy_from(&u.transpose());
        ymat.view_mut((r, 0), (1, n)).copy_from(&xn.transpose());
    }
    let svd = zmat.svd(true, true);
    let smax = svd.singular_values.iter().fold(T::zero(), |a, &v| a.max(v));
    let tol = lit::<T>(rows.max(p) as f64) * T::default_epsilon() * smax;
    let rank = svd.singular_values.iter().filter(|&&v| v > tol).count();
    if rank < p {
        return Err(Error::InsufficientExcitation { rank, needed: p });
    }
    let w = svd.solve(&ymat, tol).map_err(|e| Error::Numerical(e.to_string()))?;
    let a = w.rows(0, n).transpose();
    let b = w.rows(n, m).transpose();
    Ok((a, b))
}

fn combine_with_prior<T: Real>(
    info: DMatrix<T>,
    lin: DVector<T>,
    prior: &AbPrior<T>,
    n_x: usize,
    n_u: usize,
) -> Result<GaussianPosterior<T>> {
    let (info, lin) = match prior {
        AbPrior::Flat => (info, lin),
        AbPrior::Gaussian { mean, covariance } => {
            let p0 = spd_inverse(covariance).ok_or_else(|| Error::NotPsd("prior covariance".into()))?;
            let lin = lin + &p0 * mean;
            (info + p0, lin)
        }
    };
    let chol = symmetric_part(&info).cholesky().ok_or(Error::ImproperPosterior)?;
    let sigma = symmetric_part(&chol.inverse());
    let mu = chol.solve(&lin);
    GaussianPosterior::new(mu, sigma, n_x, n_u)
}

/// Exact Gaussian posterior over `θ_AB` for known `Π`, built by summing the
/// per-transition information `Dᵀ Π⁻¹ D` with `D = I ⊗ [xᵀ uᵀ]`.
pub fn posterior_gaussian_known_pi<T: Real>(
    data: &Dataset<T>,
    pi: &DMatrix<T>,
    prior: &AbPrior<T>,
) -> Result<GaussianPosterior<T>> {
    let (n, m) = (data.n_x(), data.n_u());
    let p = n + m;
    let d = n * p;
    let pi_inv = spd_inverse(pi).ok_or(Error::SingularCovariance)?;
    let mut info = DMatrix::<T>::zeros(d, d);
    let mut lin = DVector::<T>::zeros(d);
    let mut dmat = DMatrix::<T>::zeros(n, d);
    for (x, u, xn) in data.transitions() {
        let z = regressor(x, u);
        dmat.fill(T::zero());
        for i in 0..n {
            dmat.view_mut((i, i * p), (1, p)).copy_from(&z.transpose());
        }
        let dt_pinv = dmat.transpose() * &pi_inv;
        info += &dt_pinv * &dmat;
        lin += dt_pinv * xn;
    }
    combine_with_prior(info, lin, prior, n, m)
}

/// Conditional `p(A, B | Π, D)` assembled from sufficient statistics through
/// the Kronecker identity `Σ Dᵀ Π⁻¹ D = Π⁻¹ ⊗ Σ z zᵀ`. This is the Gibbs
/// sampler's route; it agrees with [`posterior_gaussian_known_pi`].
pub fn gibbs_conditional<T: Real>(
    data: &Dataset<T>,
    pi: &DMatrix<T>,
    prior: &AbPrior<T>,
) -> Result<GaussianPosterior<T>> {
    let (szz, szx) = moments(data);
    gibbs_conditional_from_moments(&szz, &szx, pi, prior, data.n_x(), data.n_u())
}

fn gibbs_conditional_from_moments<T: Real>(
    szz: &DMatrix<T>,
    szx: &DMatrix<T>,
    pi: &DMatrix<T>,
    prior: &AbPrior<T>,
    n_x: usize,
    n_u: usize,
) -> Result<GaussianPosterior<T>> {
    let pi_inv = spd_inverse(pi).ok_or(Error::SingularCovariance)?;
    let info = pi_inv.kronecker(szz);
    let lin = crate::linalg::vec_of(&(szx * &pi_inv));
    combine_with_prior(info, lin, prior, n_x, n_u)
}

/// Residual scatter `Φ = Σ (x⁺ − A x − B u)(x⁺ − A x − B u)ᵀ`.
pub fn residual_scatter<T: Real>(data: &Dataset<T>, a: &DMatrix<T>, b: &DMatrix<T>) -> DMatrix<T> {
    let n = data.n_x();
    let mut phi = DMatrix::zeros(n, n);
    for (x, u, xn) in data.transitions() {
        let e = xn - a * x - b * u;
        phi += &e * e.transpose();
    }
    phi
}

/// Draws `Π ~ IW(Φ, ν)` via the Bartlett decomposition: with `Φ = U Uᵀ` and
/// lower-triangular `L` (`L_ii² ~ χ²(ν − i)`, `L_ij ~ N(0,1)` below the
/// diagonal), `Π = U L⁻ᵀ L⁻¹ Uᵀ`. Singular `Φ` yields a singular draw.
pub fn sample_inverse_wishart<T: Real, R: Rng + ?Sized>(phi: &DMatrix<T>, nu: f64, rng: &mut R) -> Result<DMatrix<T>> {
    let n = phi.nrows();
    if !(nu > n as f64 - 1.0) {
        return Err(Error::InvalidArgument(format!("inverse-Wishart needs nu > {} (got {nu})", n as f64 - 1.0)));
    }
    let u = psd_cholesky(&symmetric_part(phi), lit(1e-14)).ok_or_else(|| Error::NotPsd("scatter matrix".into()))?;
    let mut l = DMatrix::<T>::zeros(n, n);
    for i in 0..n {
        let chi = ChiSquared::new(nu - i as f64).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        l[(i, i)] = lit(chi.sample(rng).sqrt());
        for j in 0..i {
            l[(i, j)] = lit(rng.sample::<f64, _>(rand_distr::StandardNormal));
        }
    }
    let l_inv = l
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or_else(|| Error::Numerical("degenerate Bartlett factor".into()))?;
    let v = u * l_inv.transpose();
    Ok(symmetric_part(&(&v * v.transpose())))
}

fn log_det_spd<T: Real>(m: &DMatrix<T>) -> Option<T> {
    let c = symmetric_part(m).cholesky()?;
    Some(c.l().diagonal().iter().fold(T::zero(), |acc, &d| acc + d.ln()) * lit(2.0))
}

fn degrees_of_freedom<T: Real>(spec: &PosteriorSpec<T>, data: &Dataset<T>) -> Result<f64> {
    let n_triples = data.num_transitions() as f64;
    let n = data.n_x() as f64;
    let nu = match spec.pi_prior {
        PiPrior::Jeffreys => n_triples,
        PiPrior::Uniform => n_triples - n - 1.0,
    };
    if !(nu > n - 1.0) {
        return Err(Error::InvalidArgument(format!(
            "inverse-Wishart degrees of freedom {nu} invalid for n_x = {n}; more transitions needed"
        )));
    }
    Ok(nu)
}

/// Two-block Gibbs sampler: `(A, B) | Π` Gaussian, then `Π | A, B` inverse
/// Wishart. Runs `burn_in` iterations, then keeps every `thin`-th state until
/// `draws` samples are collected.
pub fn gibbs_chain<T: Real, R: Rng + ?Sized>(
    data: &Dataset<T>,
    spec: &PosteriorSpec<T>,
    draws: usize,
    config: GibbsConfig,
    rng: &mut R,
) -> Result<Vec<LinearSystem<T>>> {
    if spec.known_pi.is_some() {
        return Err(Error::InvalidArgument("Gibbs sampling requires unknown Pi".into()));
    }
    spec.validate(data)?;
    let nu = degrees_of_freedom(spec, data)?;
    let (n, m) = (data.n_x(), data.n_u());
    let (szz, szx) = moments(data);

    // Start from the least-squares residual covariance when it is usable.
    let mut pi = match least_squares_estimate(data) {
        Ok((a, b)) => {
            let s = residual_scatter(data, &a, &b) / lit::<T>(data.num_transitions() as f64);
            if symmetric_part(&s).cholesky().is_some() {
                s
            } else {
                DMatrix::identity(n, n)
            }
        }
        Err(_) => DMatrix::identity(n, n),
    };
    let thin = config.thin.max(1);
    let mut out = Vec::with_capacity(draws);
    let mut iter = 0usize;
    while out.len() < draws {
        let cond = gibbs_conditional_from_moments(&szz, &szx, &pi, &spec.prior, n, m)?;
        let (a, b) = cond.sample_ab(rng);
        let phi = residual_scatter(data, &a, &b);
        pi = sample_inverse_wishart(&phi, nu, rng)?;
        iter += 1;
        if iter > config.burn_in && (iter - config.burn_in).is_multiple_of(thin) {
            out.push(LinearSystem::new(a, b, pi.clone())?);
        }
    }
    Ok(out)
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `log p(θ) + Σ log N(x_t; A x_{t−1} + B u_{t−1}, Π)`.
///
/// The `Π` prior term is included only when `Π` is unknown in `spec`.
pub fn log_unnormalized_posterior<T: Real>(
    theta: &LinearSystem<T>,
    data: &Dataset<T>,
    spec: &PosteriorSpec<T>,
) -> Result<T> {
    let n = data.n_x();
    if theta.n_x() != n || theta.n_u() != data.n_u() {
        return Err(Error::Dimension("theta does not match dataset".into()));
    }
    let chol = symmetric_part(theta.pi()).cholesky().ok_or(Error::SingularCovariance)?;
    let log_det = chol.l().diagonal().iter().fold(T::zero(), |acc, &d| acc + d.ln()) * lit(2.0);
    let mut quad = T::zero();
    for (x, u, xn) in data.transitions() {
        let e = xn - theta.a() * x - theta.b() * u;
        let s = chol.solve(&e);
        quad += e.dot(&s);
    }
    let count: T = lit(data.num_transitions() as f64);
    let mut lp = -(count * (lit::<T>(n as f64 * LN_2PI) + log_det) + quad) * lit(0.5);

    if let AbPrior::Gaussian { mean, covariance } = &spec.prior {
        let d = mean.len();
        let c = symmetric_part(covariance).cholesky().ok_or_else(|| Error::NotPsd("prior covariance".into()))?;
        let e = stack_ab(theta.a(), theta.b()) - mean;
        let q = e.dot(&c.solve(&e));
        let ld = log_det_spd(covariance).unwrap_or(T::zero());
        lp -= (lit::<T>(d as f64 * LN_2PI) + ld + q) * lit(0.5);
    }
    if spec.known_pi.is_none() && spec.pi_prior == PiPrior::Jeffreys {
        lp -= log_det * lit((n as f64 + 1.0) / 2.0);
    }
    Ok(lp)
}

/// Counts from one confidence-region draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SamplingStats {
    pub pool: usize,
    pub weight_discards: usize,
    pub unstabilizable: usize,
}

/// `M` stabilizable models from the `c`% highest-posterior region.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet<T: Real> {
    pub samples: Vec<LinearSystem<T>>,
    /// Confidence level `c` in percent.
    pub confidence: f64,
    /// Per-sample `log π̄`.
    pub log_weights: Vec<T>,
    /// Smallest retained `log π̄` in the pool after the weight cut.
    pub cutoff: Option<T>,
    pub stats: SamplingStats,
}

impl<T: Real> SampleSet<T> {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Builds a set from explicit models (no weights), e.g. for tests or a
    /// single known system.
    pub fn from_systems(samples: Vec<LinearSystem<T>>) -> Self {
        let log_weights = vec![T::zero(); samples.len()];
        Self { samples, confidence: 100.0, log_weights, cutoff: None, stats: SamplingStats::default() }
    }
}

/// Number of pool members dropped by the `(100 − c)%` weight cut.
pub fn weight_discard_count(pool: usize, confidence: f64) -> usize {
    let d = (100.0 - confidence) * pool as f64 / 100.0;
    // Guard against 0.05·2000 = 100.00000000000001 style roundoff.
    ((d - 1e-9).ceil().max(0.0) as usize).min(pool)
}

/// Draws `pool_size` posterior samples, discards the `(100 − c)%` with the
/// lowest `log π̄`, then discards unstabilizable samples, and returns the
/// first `m` survivors in draw order.
pub fn sample_confidence_region<T: Real, R: Rng + ?Sized>(
    data: &Dataset<T>,
    spec: &PosteriorSpec<T>,
    confidence: f64,
    m: usize,
    pool_size: usize,
    rng: &mut R,
) -> Result<SampleSet<T>> {
    if !(confidence > 0.0 && confidence <= 100.0) {
        return Err(Error::InvalidArgument(format!("confidence {confidence} not in (0, 100]")));
    }
    if m == 0 || pool_size < m {
        return Err(Error::InvalidArgument(format!("pool size {pool_size} must be at least M = {m}")));
    }
    spec.validate(data)?;
    let pool: Vec<LinearSystem<T>> = match &spec.known_pi {
        Some(pi) => {
            let post = posterior_gaussian_known_pi(data, pi, &spec.prior)?;
            (0..pool_size)
                .map(|_| {
                    let (a, b) = post.sample_ab(rng);
                    LinearSystem::new(a, b, pi.clone())
                })
                .collect::<Result<_>>()?
        }
        None => gibbs_chain(data, spec, pool_size, spec.gibbs, rng)?,
    };
    let weights: Vec<T> =
        pool.par_iter().map(|theta| log_unnormalized_posterior(theta, data, spec)).collect::<Result<_>>()?;

    let discard = weight_discard_count(pool_size, confidence);
    let mut order: Vec<usize> = (0..pool_size).collect();
    order.sort_by(|&i, &j| weights[i].partial_cmp(&weights[j]).unwrap_or(std::cmp::Ordering::Equal).then(i.cmp(&j)));
    let mut keep = vec![true; pool_size];
    for &i in order.iter().take(discard) {
        keep[i] = false;
    }
    let cutoff = order.get(discard).map(|&i| weights[i]);

    let stabilizable: Vec<bool> =
        pool.par_iter().zip(keep.par_iter()).map(|(theta, &k)| k && system_is_stabilizable(theta)).collect();
    let unstabilizable = keep.iter().zip(&stabilizable).filter(|(&k, &s)| k && !s).count();

    let mut samples = Vec::with_capacity(m);
    let mut log_weights = Vec::with_capacity(m);
    for (i, theta) in pool.into_iter().enumerate() {
        if samples.len() == m {
            break;
        }
        if stabilizable[i] {
            samples.push(theta);
            log_weights.push(weights[i]);
        }
    }
    let stats = SamplingStats { pool: pool_size, weight_discards: discard, unstabilizable };
    if samples.len() < m {
        return Err(Error::InsufficientSamples {
            survivors: samples.len(),
            requested: m,
            pool: pool_size,
            weight_discards: discard,
            unstabilizable,
        });
    }
    Ok(SampleSet { samples, confidence, log_weights, cutoff, stats })
}

/// Reusable confidence-region sampler bound to a dataset and posterior
/// specification, with the pool sized as `pool_factor·M`.
#[derive(Debug, Clone)]
pub struct ConfidenceRegionSampler<T: Real> {
    pub data: Dataset<T>,
    pub spec: PosteriorSpec<T>,
    pub confidence: f64,
    pub pool_factor: usize,
}

impl<T: Real> ConfidenceRegionSampler<T> {
    pub const DEFAULT_POOL_FACTOR: usize = 20;

    pub fn new(data: Dataset<T>, spec: PosteriorSpec<T>, confidence: f64) -> Self {
        Self { data, spec, confidence, pool_factor: Self::DEFAULT_POOL_FACTOR }
    }

    pub fn draw<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Result<SampleSet<T>> {
        sample_confidence_region(&self.data, &self.spec, self.confidence, m, m * self.pool_factor.max(1), rng)
    }
}
