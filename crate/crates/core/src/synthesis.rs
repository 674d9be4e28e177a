//! Policy synthesis: the common-Lyapunov relaxation, the majorize-minimize
//! sequence of convex upper bounds, and the stability-only `alternate-s`
//! variant.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::evaluation::{dare, dlyap, stage_weight};
use crate::linalg::{min_eigenvalue, spd_inverse, sym_sqrt, symmetric_part};
use crate::lmi::{solve, AffineBlock, MatVar, SdpProblem, SdpSolution, SdpStatus, SolveOptions};
use crate::model::{is_stabilizable, spectral_radius, GainPolicy, LinearSystem};
use crate::scalar::{lit, Cost, Real};

#[derive(Debug, Clone)]
pub struct SynthesisConfig<T: Real> {
    pub q: DMatrix<T>,
    pub r: DMatrix<T>,
    /// Stop when `|ΔJ| ≤ epsilon_conv·(1 + |J|)`.
    pub epsilon_conv: T,
    pub max_mm_iters: usize,
    /// Add a shared Lyapunov certificate to every MM step.
    pub enforce_common_lyap_certificate: bool,
    /// Margin used for strict inequalities (`Y ⪰ εI`, certificate decrease).
    pub epsilon_psd: T,
    /// Upper bound on decision matrices; carried for completeness, not
    /// imposed as a constraint.
    pub ceiling: Option<T>,
    pub solver: SolveOptions<T>,
}

impl<T: Real> SynthesisConfig<T> {
    pub fn new(q: DMatrix<T>, r: DMatrix<T>) -> Result<Self> {
        let cfg = Self {
            q,
            r,
            epsilon_conv: lit(1e-4),
            max_mm_iters: 100,
            enforce_common_lyap_certificate: false,
            epsilon_psd: lit(1e-6),
            ceiling: None,
            solver: SolveOptions::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.q.is_square() || !self.r.is_square() {
            return Err(Error::Dimension("Q and R must be square".into()));
        }
        let qs = T::one() + crate::linalg::max_abs(&self.q);
        if crate::linalg::max_abs(&(&self.q - self.q.transpose())) > lit::<T>(1e-12) * qs
            || min_eigenvalue(&self.q) < -lit::<T>(1e-12) * qs
        {
            return Err(Error::NotPsd("Q must be symmetric positive semidefinite".into()));
        }
        let rs = T::one() + crate::linalg::max_abs(&self.r);
        if crate::linalg::max_abs(&(&self.r - self.r.transpose())) > lit::<T>(1e-12) * rs
            || min_eigenvalue(&self.r) <= T::zero()
        {
            return Err(Error::NotPsd("R must be symmetric positive definite".into()));
        }
        if !(self.epsilon_conv > T::zero()) {
            return Err(Error::InvalidArgument("epsilon_conv must be positive".into()));
        }
        if !(self.epsilon_psd > T::zero()) {
            return Err(Error::InvalidArgument("epsilon_psd must be positive".into()));
        }
        Ok(())
    }

    fn check_dims(&self, n_x: usize, n_u: usize) -> Result<()> {
        if self.q.nrows() != n_x || self.r.nrows() != n_u {
            return Err(Error::Dimension(format!(
                "Q is {}x{} and R is {}x{}, expected {n_x} and {n_u}",
                self.q.nrows(),
                self.q.ncols(),
                self.r.nrows(),
                self.r.ncols()
            )));
        }
        Ok(())
    }

    fn r_inv(&self) -> Result<DMatrix<T>> {
        spd_inverse(&self.r).ok_or_else(|| Error::NotPsd("R is not positive definite".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SynthesisStatus {
    Converged,
    MaxIters,
    InfeasibleInit,
}

impl SynthesisStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SynthesisStatus::Converged => "converged",
            SynthesisStatus::MaxIters => "max_iters",
            SynthesisStatus::InfeasibleInit => "infeasible_init",
        }
    }
}

/// Shared Lyapunov matrix `X` with `(Aⁱ+BⁱK)ᵀX(Aⁱ+BⁱK) − X ≺ 0` at every
/// listed vertex.
#[derive(Debug, Clone)]
pub struct LyapunovCertificate<T: Real> {
    pub x: DMatrix<T>,
    pub systems: Vec<(DMatrix<T>, DMatrix<T>)>,
}

#[derive(Debug, Clone)]
pub struct SynthesisReport<T: Real> {
    pub k: GainPolicy<T>,
    /// Monte-Carlo cost per iterate; entry 0 is the common-Lyapunov gain.
    pub cost_trace: Vec<T>,
    /// Number of accepted MM steps.
    pub iterations: usize,
    pub status: SynthesisStatus,
    pub certificate: Option<LyapunovCertificate<T>>,
    /// Objective of the common-Lyapunov relaxation.
    pub relaxation_value: T,
}

/// Result of the common-Lyapunov relaxation.
#[derive(Debug, Clone)]
pub struct CommonLyapunov<T: Real> {
    pub k: GainPolicy<T>,
    /// `(1/M) Σ trace(Zⁱ)`, an upper bound on the Monte-Carlo cost of `k`.
    pub objective: T,
    /// Shared Lyapunov matrix `Y⁻¹`.
    pub x: DMatrix<T>,
    pub solution: SdpSolution<T>,
}

/// One model in a synthesis problem. Models without a cost weight only
/// contribute stability constraints.
struct Scenario<'a, T: Real> {
    system: &'a LinearSystem<T>,
    weight: Option<T>,
}

fn check_models<T: Real>(models: &[&LinearSystem<T>], cfg: &SynthesisConfig<T>) -> Result<(usize, usize)> {
    let first = models.first().ok_or_else(|| Error::InvalidArgument("sample set is empty".into()))?;
    let (n_x, n_u) = (first.n_x(), first.n_u());
    for m in models {
        if m.n_x() != n_x || m.n_u() != n_u {
            return Err(Error::Dimension("samples have inconsistent dimensions".into()));
        }
    }
    cfg.validate()?;
    cfg.check_dims(n_x, n_u)?;
    Ok((n_x, n_u))
}

/// `T(S, S₀) = 2S₀⁻¹ − S₀⁻¹ S S₀⁻¹`, the first-order expansion of `S⁻¹`
/// about `S₀`; never exceeds `S⁻¹` for SPD arguments.
pub fn linearized_inverse<T: Real>(s: &DMatrix<T>, s0: &DMatrix<T>) -> Result<DMatrix<T>> {
    let s0_inv = spd_inverse(s0).ok_or_else(|| Error::NotPsd("expansion point must be positive definite".into()))?;
    Ok(symmetric_part(&(&s0_inv * lit::<T>(2.0) - &s0_inv * s * &s0_inv)))
}

/// Congruence `H` with `Y = H V H` that brings the relaxation to unit scale.
///
/// The optimal `Y` is roughly the inverse of the samples' value functions, so
/// `H = P̄^{-1/2}` with `P̄` the mean Riccati solution keeps `V` near `I`.
/// Without it the dual iterates grow like `‖P‖²` and swamp the residuals.
fn common_lyapunov_scaling<T: Real>(scenarios: &[Scenario<'_, T>], cfg: &SynthesisConfig<T>, n_x: usize) -> DMatrix<T> {
    let solved: Vec<DMatrix<T>> = scenarios
        .par_iter()
        .filter_map(|sc| dare(sc.system.a(), sc.system.b(), &cfg.q, &cfg.r).ok().map(|(x, _)| x))
        .collect();
    let eye = DMatrix::<T>::identity(n_x, n_x);
    if solved.is_empty() {
        return eye;
    }
    let mut mean = DMatrix::<T>::zeros(n_x, n_x);
    for x in &solved {
        mean += x;
    }
    let mean = symmetric_part(&(mean / lit::<T>(solved.len() as f64)));
    // Floor the spectrum so a near-zero `Q` cannot make `H` blow up.
    let floor = crate::linalg::max_eigenvalue(&mean) * lit(1e-8);
    if !(floor > T::zero()) {
        return eye;
    }
    let eig = mean.symmetric_eigen();
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| T::one() / v.max(floor).sqrt()));
    symmetric_part(&(&eig.eigenvectors * d * eig.eigenvectors.transpose()))
}

/// Variables of the relaxation in scaled form: `Y = H V H`, `L = L̂ H`.
struct ClProblem<T: Real> {
    problem: SdpProblem<T>,
    v: MatVar,
    l_hat: MatVar,
    h: DMatrix<T>,
}

fn common_lyapunov_problem<T: Real>(
    scenarios: &[Scenario<'_, T>],
    cfg: &SynthesisConfig<T>,
    n_x: usize,
    n_u: usize,
) -> Result<ClProblem<T>> {
    let r_inv = cfg.r_inv()?;
    let q_half = sym_sqrt(&cfg.q);
    let eye = DMatrix::<T>::identity(n_x, n_x);
    let eye_u = DMatrix::<T>::identity(n_u, n_u);
    let eps = cfg.epsilon_psd * (T::one() + crate::linalg::spectral_norm(&cfg.q));
    let h = common_lyapunov_scaling(scenarios, cfg, n_x);

    let h_inv = spd_inverse(&h).ok_or_else(|| Error::Numerical("singular scaling".into()))?;

    // Every block is the unscaled one under a congruence by diag(H⁻¹, …, I):
    //   V ⪰ ε H⁻²,
    //   [[Zᵢ, GᵢᵀH⁻¹], [H⁻¹Gᵢ, V]] ⪰ 0,
    //   [[V, ·, ·, ·], [H⁻¹AᵢH V + H⁻¹Bᵢ L̂, V, ·, ·], [Q^½ H V, 0, I, ·], [L̂, 0, 0, R⁻¹]] ⪰ 0.
    let mut p = SdpProblem::new();
    let v = p.register_symmetric_variable("V", n_x)?;
    let l = p.register_rectangular_variable("L", n_u, n_x)?;
    let mut margin = AffineBlock::new(n_x);
    margin.var(0, 0, v).constant(0, 0, &(-(&h_inv * &h_inv) * eps));
    p.add_psd_block(margin)?;

    for (i, sc) in scenarios.iter().enumerate() {
        let sys = sc.system;
        if let Some(w) = sc.weight {
            let z = p.register_symmetric_variable(&format!("Z{i}"), n_x)?;
            p.add_trace_objective(z, &eye, w)?;
            let mut slack = AffineBlock::new(2 * n_x);
            slack.var(0, 0, z).constant(n_x, 0, &(&h_inv * sys.g()).transpose()).var(n_x, n_x, v);
            p.add_psd_block(slack)?;
        }
        let mut blk = AffineBlock::new(3 * n_x + n_u);
        blk.var(0, 0, v)
            .term(n_x, 0, &(&h_inv * sys.a() * &h), v, &eye)
            .term(n_x, 0, &(&h_inv * sys.b()), l, &eye)
            .var(n_x, n_x, v)
            .term(2 * n_x, 0, &(&q_half * &h), v, &eye)
            .constant(2 * n_x, 2 * n_x, &eye)
            .term(3 * n_x, 0, &eye_u, l, &eye)
            .constant(3 * n_x, 3 * n_x, &r_inv);
        p.add_psd_block(blk)?;
    }
    Ok(ClProblem { problem: p, v, l_hat: l, h })
}

fn run_common_lyapunov<T: Real>(
    scenarios: &[Scenario<'_, T>],
    cfg: &SynthesisConfig<T>,
    n_x: usize,
    n_u: usize,
) -> Result<CommonLyapunov<T>> {
    let ClProblem { problem: p, v, l_hat, h } = common_lyapunov_problem(scenarios, cfg, n_x, n_u)?;
    let sol = solve(&p, &cfg.solver)?;
    match sol.status {
        SdpStatus::Optimal => {}
        SdpStatus::Infeasible => return Err(Error::Infeasible),
        SdpStatus::NumericalFailure => {
            return Err(Error::Numerical(format!(
                "common-Lyapunov SDP did not converge (gap {}, primal residual {})",
                sol.gap, sol.primal_residual
            )))
        }
    }
    let ym = symmetric_part(&(&h * v.extract(&sol.x) * &h));
    let lm = l_hat.extract(&sol.x) * &h;
    let x = spd_inverse(&ym).ok_or_else(|| Error::Numerical("Y is singular".into()))?;
    if min_eigenvalue(&ym) < cfg.epsilon_psd * lit(0.5) {
        return Err(Error::Numerical("Y fell below the strict-feasibility margin".into()));
    }
    let k = GainPolicy::new(&lm * &x)?;
    for sc in scenarios {
        let rho = spectral_radius(&sc.system.closed_loop(&k))?;
        if !(rho < T::one()) {
            return Err(Error::Numerical(format!("common-Lyapunov gain leaves a sample unstable (radius {rho})")));
        }
    }
    Ok(CommonLyapunov { k, objective: sol.objective_value, x: symmetric_part(&x), solution: sol })
}

/// Common-Lyapunov relaxation over all samples with equal cost weights.
pub fn solve_common_lyapunov<T: Real>(
    samples: &[LinearSystem<T>],
    cfg: &SynthesisConfig<T>,
) -> Result<CommonLyapunov<T>> {
    let refs: Vec<&LinearSystem<T>> = samples.iter().collect();
    let (n_x, n_u) = check_models(&refs, cfg)?;
    for s in samples {
        if !is_stabilizable(s.a(), s.b(), crate::model::default_stabilizability_tol()) {
            return Err(Error::Unstabilizable);
        }
    }
    let w = T::one() / lit::<T>(samples.len() as f64);
    let scenarios: Vec<Scenario<'_, T>> = samples.iter().map(|s| Scenario { system: s, weight: Some(w) }).collect();
    run_common_lyapunov(&scenarios, cfg, n_x, n_u)
}

/// Gramian of `K̄` on `θ`, the point at which the MM bound is tight.
pub fn compute_anchor<T: Real>(
    k_bar: &GainPolicy<T>,
    theta: &LinearSystem<T>,
    cfg: &SynthesisConfig<T>,
) -> Result<DMatrix<T>> {
    let acl = theta.closed_loop(k_bar);
    let rho = spectral_radius(&acl)?;
    if !(rho < T::one()) {
        return Err(Error::Unstable(crate::scalar::to_f64(rho)));
    }
    dlyap(&acl, &stage_weight(k_bar, &cfg.q, &cfg.r))
}

/// How the gain enters the MM program.
enum GainTerm<'a, T: Real> {
    Variable,
    Fixed(&'a GainPolicy<T>),
}

struct MmProblem<T: Real> {
    problem: SdpProblem<T>,
    k: Option<MatVar>,
    /// Certificate variable and its scaling `P = H V H`.
    p: Option<(MatVar, DMatrix<T>)>,
}

/// `(S^{1/2}, S^{-1/2})` for SPD `S`.
fn sqrt_pair<T: Real>(s: &DMatrix<T>) -> Option<(DMatrix<T>, DMatrix<T>)> {
    if min_eigenvalue(s) <= T::zero() {
        return None;
    }
    let h = sym_sqrt(s);
    let hi = spd_inverse(&h)?;
    Some((h, symmetric_part(&hi)))
}

fn mm_problem<T: Real>(
    gain: GainTerm<'_, T>,
    scenarios: &[Scenario<'_, T>],
    anchors: &[DMatrix<T>],
    cert_anchor: Option<&DMatrix<T>>,
    cfg: &SynthesisConfig<T>,
    n_x: usize,
    n_u: usize,
) -> Result<MmProblem<T>> {
    let r_inv = cfg.r_inv()?;
    let eye = DMatrix::<T>::identity(n_x, n_x);
    let eye_u = DMatrix::<T>::identity(n_u, n_u);
    let mut p = SdpProblem::new();
    let kv = match gain {
        GainTerm::Variable => Some(p.register_rectangular_variable("K", n_u, n_x)?),
        GainTerm::Fixed(_) => None,
    };
    // Adds `left · K · right` at `(r0, 0)`.
    let add_gain = |blk: &mut AffineBlock<T>, r0: usize, left: &DMatrix<T>, right: &DMatrix<T>| match (&gain, kv) {
        (_, Some(k)) => {
            blk.term(r0, 0, left, k, right);
        }
        (GainTerm::Fixed(k), None) => {
            blk.constant(r0, 0, &(left * k.k() * right));
        }
        _ => unreachable!(),
    };
    // Each block is stated in the variable W = X̄^{-1/2} X X̄^{-1/2} and
    // congruence-scaled by diag(X̄^{-1/2}, X̄^{1/2}, I), so that T(X, X̄)
    // becomes 2I − W and the fixed point sits at W = I.
    let mut scales = Vec::with_capacity(scenarios.len());
    for (i, (sc, xbar)) in scenarios.iter().zip(anchors).enumerate() {
        let sys = sc.system;
        let (h, hi) = sqrt_pair(xbar).ok_or_else(|| Error::NotPsd(format!("anchor {i} is not positive definite")))?;
        let w = p.register_symmetric_variable(&format!("W{i}"), n_x)?;
        if let Some(wt) = sc.weight {
            p.add_trace_objective(w, &symmetric_part(&(&h * sys.pi() * &h)), wt)?;
        }
        let mut blk = AffineBlock::new(2 * n_x + n_u);
        blk.var(0, 0, w).constant(0, 0, &(-(&hi * &cfg.q * &hi))).constant(n_x, 0, &(&h * sys.a() * &hi));
        add_gain(&mut blk, n_x, &(&h * sys.b()), &hi);
        blk.constant(n_x, n_x, &(&eye * lit::<T>(2.0))).term(n_x, n_x, &(-&eye), w, &eye);
        add_gain(&mut blk, 2 * n_x, &eye_u, &hi);
        blk.constant(2 * n_x, 2 * n_x, &r_inv);
        p.add_psd_block(blk)?;
        scales.push(h);
    }
    let pv = match cert_anchor {
        Some(pbar) => {
            let (h, hi) =
                sqrt_pair(pbar).ok_or_else(|| Error::NotPsd("certificate anchor is not positive definite".into()))?;
            let v = p.register_symmetric_variable("V", n_x)?;
            let delta = cfg.epsilon_psd * crate::linalg::spectral_norm(pbar);
            let pbar_inv = &hi * &hi;
            for sc in scenarios {
                let mut blk = AffineBlock::new(2 * n_x);
                blk.var(0, 0, v).constant(0, 0, &(-(&pbar_inv * delta))).constant(n_x, 0, &(&h * sc.system.a() * &hi));
                add_gain(&mut blk, n_x, &(&h * sc.system.b()), &hi);
                blk.constant(n_x, n_x, &(&eye * lit::<T>(2.0))).term(n_x, n_x, &(-&eye), v, &eye);
                p.add_psd_block(blk)?;
            }
            Some((v, h))
        }
        None => None,
    };
    Ok(MmProblem { problem: p, k: kv, p: pv })
}

/// Outcome of one MM step.
#[derive(Debug, Clone)]
pub struct MmStep<T: Real> {
    pub k: GainPolicy<T>,
    /// Value of the convex upper bound at the new gain.
    pub bound: T,
    /// Shared certificate when requested.
    pub certificate: Option<DMatrix<T>>,
    pub solution: SdpSolution<T>,
}

fn run_mm_step<T: Real>(
    scenarios: &[Scenario<'_, T>],
    anchors: &[DMatrix<T>],
    cert_anchor: Option<&DMatrix<T>>,
    cfg: &SynthesisConfig<T>,
    n_x: usize,
    n_u: usize,
) -> Result<MmStep<T>> {
    let mp = mm_problem(GainTerm::Variable, scenarios, anchors, cert_anchor, cfg, n_x, n_u)?;
    let sol = solve(&mp.problem, &cfg.solver)?;
    if sol.status != SdpStatus::Optimal {
        return Err(Error::Numerical(format!("MM step SDP ended with status {:?}", sol.status)));
    }
    let k = GainPolicy::new(mp.k.expect("gain variable").extract(&sol.x))?;
    let certificate = mp.p.map(|(v, h)| symmetric_part(&(&h * v.extract(&sol.x) * &h)));
    Ok(MmStep { k, bound: sol.objective_value, certificate, solution: sol })
}

/// One majorize-minimize step from the gain the anchors were computed at.
pub fn mm_step<T: Real>(
    samples: &[LinearSystem<T>],
    anchors: &[DMatrix<T>],
    cfg: &SynthesisConfig<T>,
) -> Result<MmStep<T>> {
    let refs: Vec<&LinearSystem<T>> = samples.iter().collect();
    let (n_x, n_u) = check_models(&refs, cfg)?;
    if anchors.len() != samples.len() {
        return Err(Error::Dimension("one anchor per sample is required".into()));
    }
    let w = T::one() / lit::<T>(samples.len() as f64);
    let scenarios: Vec<Scenario<'_, T>> = samples.iter().map(|s| Scenario { system: s, weight: Some(w) }).collect();
    run_mm_step(&scenarios, anchors, None, cfg, n_x, n_u)
}

/// Value of the convex upper bound at a fixed gain `k`, with the anchors
/// computed at some other gain. Equals the Monte-Carlo cost when the anchors
/// were computed at `k` itself.
///
/// With the gain fixed the program splits per sample, and each part is
/// minimized by the least solution of `X = S + A_clᵀ T(X, X̄)⁻¹ A_cl`, which
/// is reached by monotone iteration from `S = Q + KᵀRK`. Leaving the region
/// `T ≻ 0` proves the part infeasible, so the bound is infinite. This avoids
/// asking the interior-point solver to certify infeasibility, which it does
/// poorly when the program is only barely infeasible.
pub fn surrogate_cost<T: Real>(
    k: &GainPolicy<T>,
    samples: &[LinearSystem<T>],
    anchors: &[DMatrix<T>],
    cfg: &SynthesisConfig<T>,
) -> Result<Cost<T>> {
    let refs: Vec<&LinearSystem<T>> = samples.iter().collect();
    check_models(&refs, cfg)?;
    if anchors.len() != samples.len() {
        return Err(Error::Dimension("one anchor per sample is required".into()));
    }
    let parts: Vec<Result<Cost<T>>> =
        samples.par_iter().zip(anchors).map(|(s, xbar)| fixed_gain_bound(k, s, xbar, cfg)).collect();
    let w = T::one() / lit::<T>(samples.len() as f64);
    let mut acc = T::zero();
    let mut infinite = false;
    for p in parts {
        match p? {
            Cost::Finite(v) => acc += v * w,
            Cost::Infinite => infinite = true,
        }
    }
    Ok(if infinite { Cost::Infinite } else { Cost::Finite(acc) })
}

/// Same value as [`surrogate_cost`], obtained by solving the fixed-gain
/// program with the interior-point solver. Useful for checking the SDP
/// encoding used by the MM steps.
pub fn surrogate_cost_sdp<T: Real>(
    k: &GainPolicy<T>,
    samples: &[LinearSystem<T>],
    anchors: &[DMatrix<T>],
    cfg: &SynthesisConfig<T>,
) -> Result<Cost<T>> {
    let refs: Vec<&LinearSystem<T>> = samples.iter().collect();
    let (n_x, n_u) = check_models(&refs, cfg)?;
    let w = T::one() / lit::<T>(samples.len() as f64);
    let scenarios: Vec<Scenario<'_, T>> = samples.iter().map(|s| Scenario { system: s, weight: Some(w) }).collect();
    let mp = mm_problem(GainTerm::Fixed(k), &scenarios, anchors, None, cfg, n_x, n_u)?;
    let sol = solve(&mp.problem, &cfg.solver)?;
    match sol.status {
        SdpStatus::Optimal => Ok(Cost::Finite(sol.objective_value)),
        SdpStatus::Infeasible => Ok(Cost::Infinite),
        SdpStatus::NumericalFailure => Err(Error::Numerical("surrogate evaluation did not converge".into())),
    }
}

const FIXED_POINT_MAX_ITERS: usize = 1_000_000;

/// `tr(Π X*)` for the least fixed point `X*` of one sample's bound.
fn fixed_gain_bound<T: Real>(
    k: &GainPolicy<T>,
    sys: &LinearSystem<T>,
    xbar: &DMatrix<T>,
    cfg: &SynthesisConfig<T>,
) -> Result<Cost<T>> {
    let xbi = spd_inverse(xbar).ok_or_else(|| Error::NotPsd("anchor is not positive definite".into()))?;
    let xbi = symmetric_part(&xbi);
    let acl = sys.closed_loop(k);
    let s = stage_weight(k, &cfg.q, &cfg.r);
    let two = lit::<T>(2.0);
    let tol = lit::<T>(1e-13);
    let mut x = s.clone();
    for _ in 0..FIXED_POINT_MAX_ITERS {
        let t = symmetric_part(&(&xbi * two - &xbi * &x * &xbi));
        let Some(t_inv) = spd_inverse(&t) else { return Ok(Cost::Infinite) };
        let next = symmetric_part(&(&s + acl.transpose() * t_inv * &acl));
        let done = (&next - &x).amax() <= tol * next.amax();
        x = next;
        if done {
            return Ok(Cost::Finite((&x * sys.pi()).trace()));
        }
    }
    Err(Error::Numerical("surrogate fixed-point iteration did not converge".into()))
}

fn weighted_cost<T: Real>(k: &GainPolicy<T>, scenarios: &[Scenario<'_, T>], cfg: &SynthesisConfig<T>) -> Cost<T> {
    let parts: Vec<Option<T>> = scenarios
        .par_iter()
        .filter_map(|sc| {
            sc.weight.map(|w| crate::evaluation::cost_lqr(k, sc.system, &cfg.q, &cfg.r).finite().map(|c| c * w))
        })
        .collect();
    let mut acc = T::zero();
    for p in parts {
        match p {
            Some(v) => acc += v,
            None => return Cost::Infinite,
        }
    }
    Cost::Finite(acc)
}

fn stabilizes_all<T: Real>(k: &GainPolicy<T>, scenarios: &[Scenario<'_, T>]) -> bool {
    scenarios.par_iter().all(|sc| spectral_radius(&sc.system.closed_loop(k)).map(|r| r < T::one()).unwrap_or(false))
}

fn run<T: Real>(
    scenarios: &[Scenario<'_, T>],
    cfg: &SynthesisConfig<T>,
    n_x: usize,
    n_u: usize,
) -> Result<SynthesisReport<T>> {
    for sc in scenarios {
        if !is_stabilizable(sc.system.a(), sc.system.b(), crate::model::default_stabilizability_tol()) {
            return Err(Error::Unstabilizable);
        }
    }
    let cl = run_common_lyapunov(scenarios, cfg, n_x, n_u)?;
    let mut k = cl.k.clone();
    let mut j = weighted_cost(&k, scenarios, cfg)
        .finite()
        .ok_or_else(|| Error::Numerical("common-Lyapunov gain has infinite cost".into()))?;
    let mut cost_trace = vec![j];
    let mut iterations = 0;
    let mut status = SynthesisStatus::MaxIters;
    let mut cert = cfg.enforce_common_lyap_certificate.then(|| cl.x.clone());

    for _ in 0..cfg.max_mm_iters {
        let anchors: Result<Vec<DMatrix<T>>> =
            scenarios.par_iter().map(|sc| compute_anchor(&k, sc.system, cfg)).collect();
        let anchors = match anchors {
            Ok(a) => a,
            Err(_) => break,
        };
        let step = match run_mm_step(scenarios, &anchors, cert.as_ref(), cfg, n_x, n_u) {
            Ok(s) => s,
            Err(_) => break,
        };
        let j_new = match weighted_cost(&step.k, scenarios, cfg) {
            Cost::Finite(v) if stabilizes_all(&step.k, scenarios) => v,
            _ => break,
        };
        // Solver tolerance can make the bound minimizer marginally worse
        // than the current iterate near a fixed point; stop there instead.
        if j_new > j {
            status = SynthesisStatus::Converged;
            break;
        }
        k = step.k;
        if step.certificate.is_some() {
            cert = step.certificate;
        }
        cost_trace.push(j_new);
        iterations += 1;
        let done = (j - j_new).abs() <= cfg.epsilon_conv * (T::one() + j_new.abs());
        j = j_new;
        if done {
            status = SynthesisStatus::Converged;
            break;
        }
    }
    let certificate = cert.map(|x| LyapunovCertificate {
        x,
        systems: scenarios.iter().map(|sc| (sc.system.a().clone(), sc.system.b().clone())).collect(),
    });
    Ok(SynthesisReport { k, cost_trace, iterations, status, certificate, relaxation_value: cl.objective })
}

/// Common-Lyapunov initialization followed by MM steps until the cost
/// change falls below `epsilon_conv` or `max_mm_iters` is reached.
pub fn synthesize<T: Real>(samples: &[LinearSystem<T>], cfg: &SynthesisConfig<T>) -> Result<SynthesisReport<T>> {
    let refs: Vec<&LinearSystem<T>> = samples.iter().collect();
    let (n_x, n_u) = check_models(&refs, cfg)?;
    let w = T::one() / lit::<T>(samples.len() as f64);
    let scenarios: Vec<Scenario<'_, T>> = samples.iter().map(|s| Scenario { system: s, weight: Some(w) }).collect();
    run(&scenarios, cfg, n_x, n_u)
}

/// Same pipeline as [`synthesize`], but only the nominal model carries cost;
/// every sample contributes stability constraints.
pub fn synthesize_alternate_s<T: Real>(
    samples: &[LinearSystem<T>],
    nominal: &LinearSystem<T>,
    cfg: &SynthesisConfig<T>,
) -> Result<SynthesisReport<T>> {
    let mut refs: Vec<&LinearSystem<T>> = samples.iter().collect();
    refs.push(nominal);
    let (n_x, n_u) = check_models(&refs, cfg)?;
    let mut scenarios = vec![Scenario { system: nominal, weight: Some(T::one()) }];
    scenarios.extend(samples.iter().map(|s| Scenario { system: s, weight: None }));
    run(&scenarios, cfg, n_x, n_u)
}

/// LQR gain for the nominal (least-squares) model.
pub fn synthesize_nominal<T: Real>(
    a_ls: &DMatrix<T>,
    b_ls: &DMatrix<T>,
    cfg: &SynthesisConfig<T>,
) -> Result<GainPolicy<T>> {
    cfg.validate()?;
    cfg.check_dims(a_ls.nrows(), b_ls.ncols())?;
    if !is_stabilizable(a_ls, b_ls, crate::model::default_stabilizability_tol()) {
        return Err(Error::Unstabilizable);
    }
    Ok(dare(a_ls, b_ls, &cfg.q, &cfg.r)?.1)
}

#[cfg(test)]
mod tests;
