//! Ground-truth cost evaluation: discrete Lyapunov and Riccati solvers, the
//! LQR suboptimality metric, common-Lyapunov certificate checks and sampled
//! robustness verification.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::Exp1;

use crate::error::{Error, Result};
use crate::inference::ConfidenceRegionSampler;
use crate::linalg::{max_abs, max_eigenvalue, symmetric_part, unvec, vec_of};
use crate::model::{is_stabilizable, spectral_radius, GainPolicy, LinearSystem};
use crate::scalar::{lit, to_f64, Cost, Real};

/// Above this size the Stein equation is solved by squaring (Smith doubling)
/// rather than by the `n² × n²` vectorized system.
const VECTORIZE_MAX_N: usize = 20;

fn stein_residual<T: Real>(a: &DMatrix<T>, w: &DMatrix<T>, x: &DMatrix<T>) -> DMatrix<T> {
    a.transpose() * x * a + w - x
}

fn stein_vectorized<T: Real>(a: &DMatrix<T>, w: &DMatrix<T>) -> Result<DMatrix<T>> {
    let n = a.nrows();
    let at = a.transpose();
    let lhs = DMatrix::<T>::identity(n * n, n * n) - at.kronecker(&at);
    let sol = lhs.lu().solve(&vec_of(w)).ok_or_else(|| Error::Numerical("singular Stein operator".into()))?;
    Ok(unvec(&sol, n, n))
}

fn stein_doubling<T: Real>(a: &DMatrix<T>, w: &DMatrix<T>) -> DMatrix<T> {
    let mut ak = a.clone();
    let mut x = w.clone();
    for _ in 0..64 {
        let inc = ak.transpose() * &x * &ak;
        x += &inc;
        ak = &ak * &ak;
        if max_abs(&inc) <= T::default_epsilon() * max_abs(&x) {
            break;
        }
    }
    x
}

/// Solves `X = Aᵀ X A + W` for Schur-stable `A`.
///
/// The solution is refined until the residual is at most `1e-9·‖X‖`
/// (max norm), and symmetrized when `W` is symmetric.
pub fn dlyap<T: Real>(a_cl: &DMatrix<T>, w: &DMatrix<T>) -> Result<DMatrix<T>> {
    let n = a_cl.nrows();
    if !a_cl.is_square() || w.shape() != (n, n) {
        return Err(Error::Dimension("dlyap expects square A and matching W".into()));
    }
    let rho = spectral_radius(a_cl)?;
    if !(rho < T::one()) {
        return Err(Error::Unstable(to_f64(rho)));
    }
    let solve = |rhs: &DMatrix<T>| -> Result<DMatrix<T>> {
        if n <= VECTORIZE_MAX_N {
            stein_vectorized(a_cl, rhs)
        } else {
            Ok(stein_doubling(a_cl, rhs))
        }
    };
    let symmetric = max_abs(&(w - w.transpose())) == T::zero();
    let mut x = solve(w)?;
    if symmetric {
        x = symmetric_part(&x);
    }
    let tol = lit::<T>(1e-9);
    for _ in 0..4 {
        let r = stein_residual(a_cl, w, &x);
        if max_abs(&r) <= tol * max_abs(&x) {
            break;
        }
        let corr = solve(&r)?;
        x += corr;
        if symmetric {
            x = symmetric_part(&x);
        }
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite Lyapunov solution".into()));
    }
    Ok(x)
}

/// Closed-loop stage weight `Q + Kᵀ R K`.
pub fn stage_weight<T: Real>(k: &GainPolicy<T>, q: &DMatrix<T>, r: &DMatrix<T>) -> DMatrix<T> {
    symmetric_part(&(q + k.k().transpose() * r * k.k()))
}

/// Closed-loop cost Gramian `X = (A+BK)ᵀ X (A+BK) + Q + KᵀRK`, or `None` if
/// `A + BK` is not Schur stable.
pub fn cost_gramian<T: Real>(
    k: &GainPolicy<T>,
    theta: &LinearSystem<T>,
    q: &DMatrix<T>,
    r: &DMatrix<T>,
) -> Option<DMatrix<T>> {
    let acl = theta.closed_loop(k);
    dlyap(&acl, &stage_weight(k, q, r)).ok()
}

/// Infinite-horizon LQR cost `trace(X·Π)`, `+∞` when the loop is unstable.
pub fn cost_lqr<T: Real>(k: &GainPolicy<T>, theta: &LinearSystem<T>, q: &DMatrix<T>, r: &DMatrix<T>) -> Cost<T> {
    match cost_gramian(k, theta, q, r) {
        Some(x) => Cost::Finite((x * theta.pi()).trace()),
        None => Cost::Infinite,
    }
}

/// Average cost over a model set; `+∞` if any member is destabilized.
pub fn mean_cost<T: Real>(k: &GainPolicy<T>, models: &[LinearSystem<T>], q: &DMatrix<T>, r: &DMatrix<T>) -> Cost<T> {
    let mut acc = T::zero();
    for m in models {
        match cost_lqr(k, m, q, r) {
            Cost::Finite(v) => acc += v,
            Cost::Infinite => return Cost::Infinite,
        }
    }
    Cost::Finite(acc / lit::<T>(models.len().max(1) as f64))
}

fn riccati_residual<T: Real>(
    a: &DMatrix<T>,
    b: &DMatrix<T>,
    q: &DMatrix<T>,
    r: &DMatrix<T>,
    x: &DMatrix<T>,
) -> Option<DMatrix<T>> {
    let btx = b.transpose() * x;
    let s = r + &btx * b;
    let gain = s.lu().solve(&(&btx * a))?;
    Some(a.transpose() * x * a - (a.transpose() * btx.transpose()) * gain + q - x)
}

fn lqr_gain<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>, r: &DMatrix<T>, x: &DMatrix<T>) -> Option<DMatrix<T>> {
    let btx = b.transpose() * x;
    let s = symmetric_part(&(r + &btx * b));
    s.cholesky().map(|c| -c.solve(&(&btx * a)))
}

/// Stabilizing solution of the discrete algebraic Riccati equation and the
/// optimal gain `K = −(R + BᵀXB)⁻¹ BᵀXA`.
///
/// Structured doubling gives the initial solution; Newton–Kleinman steps
/// (closed-loop Lyapunov solves) then refine it until the fixed-point
/// residual is at most `1e-8·‖X‖`.
pub fn dare<T: Real>(
    a: &DMatrix<T>,
    b: &DMatrix<T>,
    q: &DMatrix<T>,
    r: &DMatrix<T>,
) -> Result<(DMatrix<T>, GainPolicy<T>)> {
    let n = a.nrows();
    let m = b.ncols();
    if !a.is_square() || b.nrows() != n || q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(Error::Dimension("dare: inconsistent shapes".into()));
    }
    if !is_stabilizable(a, b, lit(1e-8)) {
        return Err(Error::Unstabilizable);
    }
    let r_inv =
        crate::linalg::spd_inverse(r).ok_or_else(|| Error::InvalidArgument("R must be positive definite".into()))?;
    let eye = DMatrix::<T>::identity(n, n);
    let mut ak = a.clone();
    let mut gk = symmetric_part(&(b * &r_inv * b.transpose()));
    let mut hk = symmetric_part(q);
    let mut converged = false;
    for _ in 0..100 {
        let w = &eye + &gk * &hk;
        let lu = w.lu();
        let w_inv_a = lu.solve(&ak).ok_or_else(|| Error::Numerical("SDA: singular I + GH".into()))?;
        let w_inv_g = lu.solve(&gk).ok_or_else(|| Error::Numerical("SDA: singular I + GH".into()))?;
        let a_next = &ak * &w_inv_a;
        let g_next = symmetric_part(&(&gk + &ak * w_inv_g * ak.transpose()));
        let h_next = symmetric_part(&(&hk + ak.transpose() * &hk * &w_inv_a));
        let delta = max_abs(&(&h_next - &hk));
        ak = a_next;
        gk = g_next;
        hk = h_next;
        if hk.iter().any(|v| !v.is_finite()) {
            break;
        }
        if delta <= lit::<T>(1e-15) * (T::one() + max_abs(&hk)) {
            converged = true;
            break;
        }
    }
    let mut x = hk;
    if !converged && x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NoConvergence("structured doubling diverged".into()));
    }
    let tol = lit::<T>(1e-8);
    let mut certified = false;
    for _ in 0..20 {
        let k = lqr_gain(a, b, r, &x).ok_or_else(|| Error::Numerical("R + BᵀXB not SPD".into()))?;
        let res = riccati_residual(a, b, q, r, &x).ok_or_else(|| Error::Numerical("singular R + BᵀXB".into()))?;
        if max_abs(&res) <= tol * max_abs(&x) {
            certified = true;
            break;
        }
        let policy = GainPolicy::new(k)?;
        let acl = a + b * policy.k();
        let next = dlyap(&acl, &stage_weight(&policy, q, r))
            .map_err(|_| Error::NoConvergence("Newton refinement left the stabilizing set".into()))?;
        x = next;
    }
    if !certified {
        return Err(Error::NoConvergence("Riccati residual above tolerance".into()));
    }
    let k = GainPolicy::new(lqr_gain(a, b, r, &x).ok_or_else(|| Error::Numerical("R + BᵀXB not SPD".into()))?)?;
    if !(spectral_radius(&(a + b * k.k()))? < T::one()) {
        return Err(Error::NoConvergence("Riccati solution is not stabilizing".into()));
    }
    Ok((x, k))
}

/// `J(K | truth) / J(K_lqr | truth)`; `+∞` if `K` destabilizes the truth.
pub fn suboptimality<T: Real>(
    k: &GainPolicy<T>,
    truth: &LinearSystem<T>,
    q: &DMatrix<T>,
    r: &DMatrix<T>,
) -> Result<Cost<T>> {
    let (_, k_lqr) = dare(truth.a(), truth.b(), q, r)?;
    let opt = cost_lqr(&k_lqr, truth, q, r)
        .finite()
        .ok_or_else(|| Error::Numerical("optimal gain has infinite cost".into()))?;
    Ok(cost_lqr(k, truth, q, r).ratio(opt))
}

/// Outcome of [`verify_convex_hull_certificate`].
#[derive(Debug, Clone, PartialEq)]
pub enum CertificateCheck {
    Valid,
    /// Vertex `index` violates `(A+BK)ᵀX(A+BK) − X ≺ 0`.
    VertexViolation {
        index: usize,
        max_eigenvalue: f64,
    },
    /// A sampled convex combination had spectral radius ≥ 1.
    CombinationUnstable {
        trial: usize,
        spectral_radius: f64,
    },
    /// `X` is not positive definite.
    InvalidCertificate,
}

impl CertificateCheck {
    pub fn is_valid(&self) -> bool {
        matches!(self, CertificateCheck::Valid)
    }
}

/// Checks the shared Lyapunov certificate `X` for gain `K` at every vertex
/// `(Aⁱ, Bⁱ)` (max eigenvalue of `(Aⁱ+BⁱK)ᵀX(Aⁱ+BⁱK) − X` at most
/// `−1e-9·‖X‖`), then spot-checks `trials` random convex combinations of the
/// vertices for closed-loop Schur stability.
pub fn verify_convex_hull_certificate<T: Real, R: Rng + ?Sized>(
    k: &GainPolicy<T>,
    x: &DMatrix<T>,
    systems: &[(DMatrix<T>, DMatrix<T>)],
    trials: usize,
    rng: &mut R,
) -> CertificateCheck {
    if crate::linalg::min_eigenvalue(x) <= T::zero() {
        return CertificateCheck::InvalidCertificate;
    }
    let scale = crate::linalg::spectral_norm(x);
    let margin = lit::<T>(1e-9) * scale;
    for (i, (a, b)) in systems.iter().enumerate() {
        let acl = a + b * k.k();
        let lhs = acl.transpose() * x * &acl - x;
        let top = max_eigenvalue(&lhs);
        if top > -margin {
            return CertificateCheck::VertexViolation { index: i, max_eigenvalue: to_f64(top) };
        }
    }
    if systems.is_empty() {
        return CertificateCheck::Valid;
    }
    let (n, m) = (systems[0].0.nrows(), systems[0].1.ncols());
    for trial in 0..trials {
        let w: Vec<f64> = (0..systems.len()).map(|_| rng.sample::<f64, _>(Exp1)).collect();
        let total: f64 = w.iter().sum();
        let mut a = DMatrix::<T>::zeros(n, n);
        let mut b = DMatrix::<T>::zeros(n, m);
        for (wi, (ai, bi)) in w.iter().zip(systems) {
            let c: T = lit(wi / total);
            a += ai * c;
            b += bi * c;
        }
        let rho = spectral_radius(&(a + b * k.k())).unwrap_or(T::one());
        if !(rho < T::one()) {
            return CertificateCheck::CombinationUnstable { trial, spectral_radius: to_f64(rho) };
        }
    }
    CertificateCheck::Valid
}

/// Count of closed-loop unstable models among freshly drawn samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustnessResult {
    pub unstable: usize,
    pub total: usize,
}

impl RobustnessResult {
    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.unstable as f64 / self.total as f64
        }
    }
}

/// Draws `n_fresh` models from the confidence region (independent of those
/// used for synthesis) and counts those with `ρ(A + BK) ≥ 1`.
pub fn robustness_check<T: Real, R: Rng + ?Sized>(
    k: &GainPolicy<T>,
    sampler: &ConfidenceRegionSampler<T>,
    n_fresh: usize,
    rng: &mut R,
) -> Result<RobustnessResult> {
    let set = sampler.draw(n_fresh, rng)?;
    Ok(unstable_count(k, &set.samples))
}

/// Number of models in `models` destabilized by `k` (strict Schur test).
pub fn unstable_count<T: Real>(k: &GainPolicy<T>, models: &[LinearSystem<T>]) -> RobustnessResult {
    let unstable =
        models.iter().filter(|m| !(spectral_radius(&m.closed_loop(k)).unwrap_or(T::one()) < T::one())).count();
    RobustnessResult { unstable, total: models.len() }
}

/// Summary of a policy evaluated against a known true system.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub suboptimality: Cost<f64>,
    pub cost_on_truth: Cost<f64>,
    pub optimal_cost: f64,
    pub robustness: Option<RobustnessResult>,
    pub certificate_valid: Option<bool>,
}

impl EvaluationReport {
    pub fn unstable_fraction(&self) -> Option<f64> {
        self.robustness.map(|r| r.fraction())
    }
}

/// Evaluates `k` on `truth`, optionally adding a robustness count.
pub fn evaluate_policy<T: Real>(
    k: &GainPolicy<T>,
    truth: &LinearSystem<T>,
    q: &DMatrix<T>,
    r: &DMatrix<T>,
    robustness: Option<RobustnessResult>,
) -> Result<EvaluationReport> {
    let (_, k_lqr) = dare(truth.a(), truth.b(), q, r)?;
    let opt = cost_lqr(&k_lqr, truth, q, r)
        .finite()
        .ok_or_else(|| Error::Numerical("optimal gain has infinite cost".into()))?;
    let cost = cost_lqr(k, truth, q, r);
    Ok(EvaluationReport {
        suboptimality: Cost::from(cost.ratio(opt).to_f64()),
        cost_on_truth: Cost::from(cost.to_f64()),
        optimal_cost: to_f64(opt),
        robustness,
        certificate_valid: None,
    })
}

/// Random Schur-stable matrix with spectral radius at most `radius`; used by
/// tests and property checks.
pub fn random_stable_matrix<R: Rng + ?Sized>(n: usize, radius: f64, rng: &mut R) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
    let rho = spectral_radius(&m).unwrap_or(1.0).max(1e-12);
    m * (radius / rho)
}
