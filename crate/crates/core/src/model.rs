//! Linear-Gaussian system types, rollout simulation and the Toeplitz benchmark
//! family.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{max_abs, min_eigenvalue, psd_cholesky, spectral_norm};
use crate::scalar::{lit, Real};

/// One model `θ = (A, B, Π)` of `x⁺ = A x + B u + w`, `w ~ N(0, Π)`.
///
/// The lower-triangular noise factor `G` (`Π = G·Gᵀ`) is computed once at
/// construction; fields are private so the cache cannot go stale.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem<T: Real> {
    a: DMatrix<T>,
    b: DMatrix<T>,
    pi: DMatrix<T>,
    g: DMatrix<T>,
}

impl<T: Real> LinearSystem<T> {
    pub fn new(a: DMatrix<T>, b: DMatrix<T>, pi: DMatrix<T>) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() || n == 0 {
            return Err(Error::Dimension(format!("A is {}x{}", a.nrows(), a.ncols())));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(Error::Dimension(format!("B is {}x{}, expected {n} rows", b.nrows(), b.ncols())));
        }
        if pi.shape() != (n, n) {
            return Err(Error::Dimension(format!("Pi is {}x{}", pi.nrows(), pi.ncols())));
        }
        if a.iter().chain(b.iter()).chain(pi.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite system entry".into()));
        }
        let scale = max_abs(&pi);
        if max_abs(&(&pi - pi.transpose())) > lit::<T>(1e-12) * (T::one() + scale) {
            return Err(Error::NotPsd("Pi is not symmetric".into()));
        }
        let pi = (&pi + pi.transpose()) * lit::<T>(0.5);
        if scale > T::zero() && min_eigenvalue(&pi) < -lit::<T>(1e-10) * scale {
            return Err(Error::NotPsd("Pi has a negative eigenvalue".into()));
        }
        let g = psd_cholesky(&pi, lit(1e-14)).ok_or_else(|| Error::NotPsd("Pi has no Cholesky factor".into()))?;
        Ok(Self { a, b, pi, g })
    }

    pub fn a(&self) -> &DMatrix<T> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<T> {
        &self.b
    }

    pub fn pi(&self) -> &DMatrix<T> {
        &self.pi
    }

    /// Lower-triangular factor with `Π = G·Gᵀ`.
    pub fn g(&self) -> &DMatrix<T> {
        &self.g
    }

    pub fn n_x(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_u(&self) -> usize {
        self.b.ncols()
    }

    /// `A + B·K`.
    pub fn closed_loop(&self, k: &GainPolicy<T>) -> DMatrix<T> {
        &self.a + &self.b * k.k()
    }

    /// Same dynamics with a different noise covariance.
    pub fn with_pi(&self, pi: DMatrix<T>) -> Result<Self> {
        Self::new(self.a.clone(), self.b.clone(), pi)
    }
}

/// One trajectory: states `x_0..x_T` and inputs `u_0..u_T`.
///
/// Only inputs `u_0..u_{T-1}` enter the likelihood; `u` may also have the same
/// length as `x` minus one.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout<T: Real> {
    pub x: Vec<DVector<T>>,
    pub u: Vec<DVector<T>>,
}

impl<T: Real> Rollout<T> {
    /// Number of `(x_{t-1}, u_{t-1}, x_t)` transitions.
    pub fn transitions(&self) -> usize {
        self.x.len().saturating_sub(1)
    }
}

/// A collection of rollouts with consistent dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T: Real> {
    rollouts: Vec<Rollout<T>>,
    n_x: usize,
    n_u: usize,
}

impl<T: Real> Dataset<T> {
    pub fn new(n_x: usize, n_u: usize, rollouts: Vec<Rollout<T>>) -> Result<Self> {
        if n_x == 0 || n_u == 0 {
            return Err(Error::InvalidArgument("n_x and n_u must be positive".into()));
        }
        for (r, ro) in rollouts.iter().enumerate() {
            if ro.x.is_empty() {
                return Err(Error::Dimension(format!("rollout {r} has no states")));
            }
            if ro.u.len() != ro.x.len() && ro.u.len() + 1 != ro.x.len() {
                return Err(Error::Dimension(format!("rollout {r}: {} states but {} inputs", ro.x.len(), ro.u.len())));
            }
            if ro.x.iter().any(|v| v.len() != n_x) || ro.u.iter().any(|v| v.len() != n_u) {
                return Err(Error::Dimension(format!("rollout {r}: vector length mismatch")));
            }
            if ro.x.iter().chain(ro.u.iter()).any(|v| v.iter().any(|e| !e.is_finite())) {
                return Err(Error::InvalidArgument(format!("rollout {r}: non-finite entry")));
            }
        }
        let ds = Self { rollouts, n_x, n_u };
        if ds.num_transitions() == 0 {
            return Err(Error::InvalidArgument("dataset has no transitions".into()));
        }
        Ok(ds)
    }

    pub fn rollouts(&self) -> &[Rollout<T>] {
        &self.rollouts
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_u(&self) -> usize {
        self.n_u
    }

    pub fn num_transitions(&self) -> usize {
        self.rollouts.iter().map(Rollout::transitions).sum()
    }

    /// Iterates over `(x_prev, u_prev, x_next)` across all rollouts.
    pub fn transitions(&self) -> impl Iterator<Item = (&DVector<T>, &DVector<T>, &DVector<T>)> {
        self.rollouts.iter().flat_map(|ro| (1..ro.x.len()).map(move |t| (&ro.x[t - 1], &ro.u[t - 1], &ro.x[t])))
    }
}

/// Static state-feedback gain `u = K x` with `K` of shape `n_u × n_x`.
#[derive(Debug, Clone, PartialEq)]
pub struct GainPolicy<T: Real> {
    k: DMatrix<T>,
}

impl<T: Real> GainPolicy<T> {
    pub fn new(k: DMatrix<T>) -> Result<Self> {
        if k.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("gain has non-finite entries".into()));
        }
        Ok(Self { k })
    }

    pub fn zeros(n_u: usize, n_x: usize) -> Self {
        Self { k: DMatrix::zeros(n_u, n_x) }
    }

    pub fn k(&self) -> &DMatrix<T> {
        &self.k
    }

    pub fn into_inner(self) -> DMatrix<T> {
        self.k
    }
}

/// How inputs are generated during simulation.
#[derive(Debug, Clone, PartialEq)]
pub enum InputSource<T: Real> {
    /// `u_t ~ N(0, scale²·I)` i.i.d.
    Gaussian {
        scale: T,
    },
    Zero,
    /// Fixed inputs; must hold at least `T + 1` vectors.
    Sequence(Vec<DVector<T>>),
}

impl<T: Real> Default for InputSource<T> {
    fn default() -> Self {
        InputSource::Gaussian { scale: T::one() }
    }
}

/// Symmetric Toeplitz benchmark: `A` has 1.01 on the diagonal and 0.01 on the
/// first off-diagonals, `B = I`, `Π = I`.
pub fn make_toeplitz_system<T: Real>(n_x: usize) -> Result<LinearSystem<T>> {
    if n_x == 0 {
        return Err(Error::InvalidArgument("n_x must be at least 1".into()));
    }
    let a = DMatrix::from_fn(n_x, n_x, |i, j| match i.abs_diff(j) {
        0 => lit(1.01),
        1 => lit(0.01),
        _ => T::zero(),
    });
    LinearSystem::new(a, DMatrix::identity(n_x, n_x), DMatrix::identity(n_x, n_x))
}

pub(crate) fn standard_normal_vector<T: Real, R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<T> {
    DVector::from_fn(n, |_, _| lit(rng.sample::<f64, _>(StandardNormal)))
}

/// Simulates `horizon` steps from `x0`, producing `horizon + 1` states and
/// `horizon + 1` inputs. Noise is drawn as `G·z` with `z` standard normal.
pub fn simulate_rollout<T: Real, R: Rng + ?Sized>(
    system: &LinearSystem<T>,
    horizon: usize,
    input: &InputSource<T>,
    x0: &DVector<T>,
    rng: &mut R,
) -> Result<Rollout<T>> {
    let (n_x, n_u) = (system.n_x(), system.n_u());
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    if x0.len() != n_x {
        return Err(Error::Dimension(format!("x0 has length {}, expected {n_x}", x0.len())));
    }
    if let InputSource::Sequence(seq) = input {
        if seq.len() < horizon + 1 || seq.iter().any(|u| u.len() != n_u) {
            return Err(Error::Dimension("input sequence too short or wrong width".into()));
        }
    }
    let mut xs = Vec::with_capacity(horizon + 1);
    let mut us = Vec::with_capacity(horizon + 1);
    xs.push(x0.clone());
    for t in 0..=horizon {
        let u = match input {
            InputSource::Gaussian { scale } => standard_normal_vector::<T, _>(n_u, rng) * *scale,
            InputSource::Zero => DVector::zeros(n_u),
            InputSource::Sequence(seq) => seq[t].clone(),
        };
        if t < horizon {
            let w = system.g() * standard_normal_vector::<T, _>(n_x, rng);
            let next = system.a() * &xs[t] + system.b() * &u + w;
            xs.push(next);
        }
        us.push(u);
    }
    Ok(Rollout { x: xs, u: us })
}

/// `n_rollouts` independent rollouts of length `horizon` from `x₀ = 0`,
/// excited by standard Gaussian inputs.
pub fn simulate_dataset<T: Real, R: Rng + ?Sized>(
    system: &LinearSystem<T>,
    n_rollouts: usize,
    horizon: usize,
    rng: &mut R,
) -> Result<Dataset<T>> {
    if n_rollouts == 0 {
        return Err(Error::InvalidArgument("at least one rollout is required".into()));
    }
    let x0 = DVector::zeros(system.n_x());
    let input = InputSource::default();
    let rollouts =
        (0..n_rollouts).map(|_| simulate_rollout(system, horizon, &input, &x0, rng)).collect::<Result<Vec<_>>>()?;
    Dataset::new(system.n_x(), system.n_u(), rollouts)
}

/// Largest eigenvalue modulus.
pub fn spectral_radius<T: Real>(m: &DMatrix<T>) -> Result<T> {
    if !m.is_square() {
        return Err(Error::Dimension(format!("{}x{} is not square", m.nrows(), m.ncols())));
    }
    if m.nrows() == 0 {
        return Ok(T::zero());
    }
    if m.nrows() == 1 {
        return Ok(m[(0, 0)].abs());
    }
    let eigs = crate::linalg::eigenvalues(m)
        .ok_or_else(|| Error::Numerical("eigenvalue iteration did not converge".into()))?;
    Ok(eigs.iter().fold(T::zero(), |acc, z| acc.max(z.re.hypot(z.im))))
}

/// `true` iff `M` is Schur stable (spectral radius strictly below one).
pub fn is_schur_stable<T: Real>(m: &DMatrix<T>) -> bool {
    spectral_radius(m).map(|r| r < T::one()).unwrap_or(false)
}

/// Modulus margin: eigenvalues with `|λ| ≥ 1 - UNIT_CIRCLE_MARGIN` are tested.
const UNIT_CIRCLE_MARGIN: f64 = 1e-9;

/// PBH stabilizability test.
///
/// For every eigenvalue `λ` of `A` with `|λ| ≥ 1 − 1e-9`, `[A − λI, B]` must
/// have full row rank, with singular values below `tol·‖[A − λI, B]‖₂` treated
/// as zero. Complex `λ` is handled through the real embedding
/// `[[P, −Q], [Q, P]]` of `P + iQ`, whose singular values are those of the
/// complex matrix, each repeated twice.
pub fn is_stabilizable<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>, tol: T) -> bool {
    let n = a.nrows();
    if !a.is_square() || b.nrows() != n {
        return false;
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return false;
    }
    let m = b.ncols();
    let eigs = if n == 1 {
        vec![nalgebra::Complex::new(a[(0, 0)], T::zero())]
    } else {
        // Unresolved spectra are treated as not stabilizable.
        match crate::linalg::eigenvalues(a) {
            Some(e) => e,
            None => return false,
        }
    };
    let threshold = T::one() - lit::<T>(UNIT_CIRCLE_MARGIN);
    for lam in eigs {
        if lam.re.hypot(lam.im) < threshold {
            continue;
        }
        let (re, im) = (lam.re, lam.im);
        let mut p = DMatrix::<T>::zeros(n, n + m);
        p.view_mut((0, 0), (n, n)).copy_from(a);
        for i in 0..n {
            p[(i, i)] -= re;
        }
        p.view_mut((0, n), (n, m)).copy_from(b);
        let sv = if im == T::zero() {
            p.singular_values().iter().copied().collect::<Vec<_>>()
        } else {
            let mut q = DMatrix::<T>::zeros(n, n + m);
            for i in 0..n {
                q[(i, i)] = -im;
            }
            let mut e = DMatrix::<T>::zeros(2 * n, 2 * (n + m));
            e.view_mut((0, 0), (n, n + m)).copy_from(&p);
            e.view_mut((0, n + m), (n, n + m)).copy_from(&(-&q));
            e.view_mut((n, 0), (n, n + m)).copy_from(&q);
            e.view_mut((n, n + m), (n, n + m)).copy_from(&p);
            e.singular_values().iter().copied().collect::<Vec<_>>()
        };
        let smax = sv.iter().fold(T::zero(), |acc, &v| acc.max(v));
        let smin = sv.iter().fold(smax, |acc, &v| acc.min(v));
        if smax == T::zero() || smin <= tol * smax {
            return false;
        }
    }
    true
}

/// Default relative singular-value threshold for [`is_stabilizable`].
pub fn default_stabilizability_tol<T: Real>() -> T {
    lit(1e-8)
}

/// Convenience wrapper applying [`is_stabilizable`] to a system.
pub fn system_is_stabilizable<T: Real>(sys: &LinearSystem<T>) -> bool {
    is_stabilizable(sys.a(), sys.b(), default_stabilizability_tol())
}

/// Spectral norm of `[A − λI, B]` is used in the threshold; exposed for tests.
pub fn pbh_matrix_norm<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>, lambda: T) -> T {
    let n = a.nrows();
    let mut p = DMatrix::<T>::zeros(n, n + b.ncols());
    p.view_mut((0, 0), (n, n)).copy_from(a);
    for i in 0..n {
        p[(i, i)] -= lambda;
    }
    p.view_mut((0, n), (n, b.ncols())).copy_from(b);
    spectral_norm(&p)
}
