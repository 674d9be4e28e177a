//! Infeasible-start primal-dual interior-point method (HKM direction with
//! Mehrotra predictor-corrector).
//!
//! The Schur complement matrix is assembled block by block. Scalars that
//! touch at most two blocks are grouped into independent components and
//! eliminated before the dense solve over the remaining (shared) scalars, so
//! problems with many per-sample blocks coupled through a few shared
//! variables cost linear time in the number of samples.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;

use super::{PsdBlock, SdpProblem};
use crate::error::{Error, Result};
use crate::linalg::{min_eigenvalue, spectral_norm, symmetric_part};
use crate::scalar::{lit, Real};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions<T> {
    /// Relative primal and dual infeasibility tolerance.
    pub feas_tol: T,
    /// Relative duality gap tolerance.
    pub gap_tol: T,
    pub max_iters: usize,
}

impl<T: Real> Default for SolveOptions<T> {
    fn default() -> Self {
        Self { feas_tol: lit(1e-7), gap_tol: lit(1e-7), max_iters: 200 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SdpStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

#[derive(Debug, Clone)]
pub struct SdpSolution<T: Real> {
    pub status: SdpStatus,
    pub x: DVector<T>,
    pub objective_value: T,
    pub dual_objective: T,
    /// `|cᵀx − d| / (1 + |cᵀx| + |d|)`.
    pub gap: T,
    /// Largest `max(0, −λ_min(F⁽ᵇ⁾(x))) / (1 + ‖F⁽ᵇ⁾(x)‖₂)` over blocks.
    pub primal_residual: T,
    /// `‖c − A*(Z)‖ / (1 + ‖c‖)`.
    pub dual_residual: T,
    pub iterations: usize,
    /// Dual matrices, one per block.
    pub z: Vec<DMatrix<T>>,
}

/// Post-hoc check of a returned solution against the problem data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verification<T> {
    pub primal_residual: T,
    pub dual_residual: T,
    /// Largest `max(0, −λ_min(Z⁽ᵇ⁾)) / (1 + ‖Z⁽ᵇ⁾‖₂)`.
    pub dual_psd_residual: T,
    pub gap: T,
    pub ok: bool,
}

#[derive(Debug, Clone, Copy)]
enum Loc {
    Global(usize),
    Local(usize, usize),
}

struct Layout {
    loc: Vec<Loc>,
    n_global: usize,
    comp_sizes: Vec<usize>,
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

impl Layout {
    fn new<T: Real>(problem: &SdpProblem<T>) -> Result<Self> {
        let n = problem.n_vars();
        let mut degree = vec![0usize; n];
        for b in problem.blocks() {
            for v in b.variables() {
                degree[v] += 1;
            }
        }
        if let Some(v) = degree.iter().position(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!("scalar variable {v} appears in no constraint block")));
        }
        let dense = n <= 64;
        let is_global: Vec<bool> = degree.iter().map(|&d| dense || d > 2).collect();
        let mut parent: Vec<usize> = (0..n).collect();
        for b in problem.blocks() {
            let mut first = None;
            for v in b.variables().filter(|&v| !is_global[v]) {
                match first {
                    None => first = Some(v),
                    Some(f) => {
                        let (rf, rv) = (find(&mut parent, f), find(&mut parent, v));
                        if rf != rv {
                            parent[rv] = rf;
                        }
                    }
                }
            }
        }
        let mut loc = vec![Loc::Global(0); n];
        let mut n_global = 0;
        let mut comp_of_root = vec![usize::MAX; n];
        let mut comp_sizes = Vec::new();
        for v in 0..n {
            if is_global[v] {
                loc[v] = Loc::Global(n_global);
                n_global += 1;
            } else {
                let r = find(&mut parent, v);
                if comp_of_root[r] == usize::MAX {
                    comp_of_root[r] = comp_sizes.len();
                    comp_sizes.push(0);
                }
                let c = comp_of_root[r];
                loc[v] = Loc::Local(c, comp_sizes[c]);
                comp_sizes[c] += 1;
            }
        }
        Ok(Self { loc, n_global, comp_sizes })
    }
}

/// Cholesky with escalating diagonal shifts for nearly singular systems.
fn regularized_cholesky<T: Real>(m: DMatrix<T>) -> Option<Cholesky<T, Dyn>> {
    if m.nrows() == 0 {
        return Cholesky::new(m);
    }
    if let Some(c) = Cholesky::new(m.clone()) {
        return Some(c);
    }
    let scale = m.diagonal().iter().fold(T::zero(), |a, &v| a.max(v.abs())).max(lit(1e-30));
    let mut shift = lit::<T>(1e-14);
    while shift <= lit::<T>(1e-6) {
        let mut r = m.clone();
        for i in 0..r.nrows() {
            r[(i, i)] += shift * scale;
        }
        if let Some(c) = Cholesky::new(r) {
            return Some(c);
        }
        shift *= lit::<T>(100.0);
    }
    None
}

struct CompFactor<T: Real> {
    chol: Cholesky<T, Dyn>,
    /// `D⁻¹ C` with `C` the local-global coupling.
    dinv_c: DMatrix<T>,
    c: DMatrix<T>,
}

struct Factor<T: Real> {
    comps: Vec<CompFactor<T>>,
    schur: Cholesky<T, Dyn>,
    comp_vars: Vec<Vec<usize>>,
    global_vars: Vec<usize>,
}

impl<T: Real> Factor<T> {
    fn solve(&self, rhs: &DVector<T>) -> DVector<T> {
        let ng = self.global_vars.len();
        let mut rg = DVector::from_fn(ng, |i, _| rhs[self.global_vars[i]]);
        let local: Vec<DVector<T>> =
            self.comp_vars.iter().map(|vars| DVector::from_fn(vars.len(), |i, _| rhs[vars[i]])).collect();
        for (cf, rc) in self.comps.iter().zip(&local) {
            if ng > 0 {
                rg -= cf.dinv_c.transpose() * rc;
            }
        }
        let xg = if ng > 0 { self.schur.solve(&rg) } else { rg };
        let mut out = DVector::zeros(rhs.len());
        for (i, &v) in self.global_vars.iter().enumerate() {
            out[v] = xg[i];
        }
        for ((cf, rc), vars) in self.comps.iter().zip(local).zip(&self.comp_vars) {
            let r = if ng > 0 { rc - &cf.c * &xg } else { rc };
            let xc = cf.chol.solve(&r);
            for (i, &v) in vars.iter().enumerate() {
                out[v] = xc[i];
            }
        }
        out
    }
}

/// `H v` from the per-block Schur contributions, without the regularization
/// the factorization may have added.
fn apply_schur<T: Real>(blocks: &[PsdBlock<T>], contributions: &[DMatrix<T>], v: &DVector<T>) -> DVector<T> {
    let mut out = DVector::zeros(v.len());
    for (b, h) in blocks.iter().zip(contributions) {
        let vars: Vec<usize> = b.variables().collect();
        for (jj, &vj) in vars.iter().enumerate() {
            let mut acc = T::zero();
            for (kk, &vk) in vars.iter().enumerate() {
                acc += h[(jj, kk)] * v[vk];
            }
            out[vj] += acc;
        }
    }
    out
}

/// Solves `H x = rhs` with a few rounds of iterative refinement, so that a
/// shifted factorization does not leak into the dual residual.
fn refined_solve<T: Real>(
    factor: &Factor<T>,
    rhs: &DVector<T>,
    apply: impl Fn(&DVector<T>) -> DVector<T>,
) -> DVector<T> {
    let mut x = factor.solve(rhs);
    let rhs_norm = rhs.norm();
    let mut last = lit::<T>(f64::MAX);
    for _ in 0..3 {
        let r = rhs - apply(&x);
        let rn = r.norm();
        if rn <= lit::<T>(1e-14) * rhs_norm || rn >= last {
            break;
        }
        last = rn;
        x += factor.solve(&r);
    }
    x
}

/// Per-block Schur contributions `H_jk = tr(F_j S⁻¹ F_k Z)`.
///
/// Uses `tr(F_j S⁻¹ F_k Z) = Σ_q Σ_p (S⁻¹F_k)[p,q] (F_j Z)[p,q]`, where only
/// the columns `q` in the support of `F_k` contribute.
fn block_schur<T: Real>(block: &PsdBlock<T>, s_inv: &DMatrix<T>, z: &DMatrix<T>) -> DMatrix<T> {
    let n = block.size();
    let terms = block.terms();
    let m = terms.len();
    let nn = n * n;
    // F_j Z, column-major, for every term.
    let mut fz = vec![T::zero(); m * nn];
    // S⁻¹ F_k restricted to its column support: (column, values).
    let mut sf: Vec<Vec<(usize, usize)>> = Vec::with_capacity(m);
    let mut sf_vals: Vec<T> = Vec::new();
    for (j, (_, f)) in terms.iter().enumerate() {
        let g = &mut fz[j * nn..(j + 1) * nn];
        for &(p, r, w) in &f.entries {
            for c in 0..n {
                g[c * n + p] += w * z[(r, c)];
            }
        }
        let mut cols: Vec<(usize, usize)> = Vec::new();
        for &(r, q, w) in &f.entries {
            let off = match cols.last() {
                Some(&(cq, off)) if cq == q => off,
                _ => {
                    let off = sf_vals.len();
                    sf_vals.resize(off + n, T::zero());
                    cols.push((q, off));
                    off
                }
            };
            for p in 0..n {
                sf_vals[off + p] += w * s_inv[(p, r)];
            }
        }
        sf.push(cols);
    }
    let mut h = DMatrix::zeros(m, m);
    for k in 0..m {
        for j in 0..=k {
            let g = &fz[j * nn..(j + 1) * nn];
            let mut acc = T::zero();
            for &(q, off) in &sf[k] {
                let u = &sf_vals[off..off + n];
                let gq = &g[q * n..(q + 1) * n];
                for p in 0..n {
                    acc += u[p] * gq[p];
                }
            }
            h[(j, k)] = acc;
            h[(k, j)] = acc;
        }
    }
    h
}

fn inner<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> T {
    a.iter().zip(b.iter()).fold(T::zero(), |acc, (x, y)| acc + *x * *y)
}

/// `Σ_j x_j F_j` for one block.
fn apply<T: Real>(block: &PsdBlock<T>, x: &DVector<T>) -> DMatrix<T> {
    let mut m = DMatrix::zeros(block.size(), block.size());
    for (v, coef) in block.terms() {
        let xv = x[*v];
        if xv == T::zero() {
            continue;
        }
        for &(i, j, c) in &coef.entries {
            m[(i, j)] += xv * c;
        }
    }
    m
}

/// Adds `⟨F_j, M⟩` for every scalar in the block to `out`.
fn adjoint_into<T: Real>(block: &PsdBlock<T>, m: &DMatrix<T>, out: &mut DVector<T>) {
    for (v, coef) in block.terms() {
        let mut acc = T::zero();
        for &(i, j, c) in &coef.entries {
            acc += c * m[(i, j)];
        }
        out[*v] += acc;
    }
}

/// Steps are damped by at least this factor and then capped at 1, so any
/// `α` beyond its reciprocal is as good as infinite.
const MIN_DAMPING: f64 = 0.9;

/// `min(cap, sup{α : S + α dS ≻ 0})`, given `S` and its lower Cholesky factor.
///
/// A single Cholesky of `S + cap·dS` settles blocks that do not limit the
/// step; the eigenvalue computation runs only for the others.
fn max_step<T: Real>(s: &DMatrix<T>, l: &DMatrix<T>, ds: &DMatrix<T>, cap: T) -> T {
    if Cholesky::new(s + ds * cap).is_some() {
        return cap;
    }
    let a = match l.solve_lower_triangular(ds) {
        Some(a) => a,
        None => return T::zero(),
    };
    let m = match l.solve_lower_triangular(&a.transpose()) {
        Some(m) => m,
        None => return T::zero(),
    };
    let lmin = min_eigenvalue(&m);
    if lmin >= T::zero() {
        cap
    } else {
        (-T::one() / lmin).min(cap)
    }
}

/// Largest step over all blocks, capped at `1 / MIN_DAMPING`. Each worker
/// carries its running minimum as the cap, so few blocks reach the
/// eigenvalue path.
fn max_step_all<T: Real>(mats: &[DMatrix<T>], factors: &[&DMatrix<T>], dirs: &[DMatrix<T>]) -> T {
    let cap = lit::<T>(1.0 / MIN_DAMPING);
    (mats, factors, dirs)
        .into_par_iter()
        .fold(|| cap, |cur, (m, l, d)| max_step(m, l, d, cur))
        .reduce(|| cap, |a, b| a.min(b))
}

fn block_primal_residual<T: Real>(f: &DMatrix<T>) -> T {
    let lmin = min_eigenvalue(f);
    (-lmin).max(T::zero()) / (T::one() + spectral_norm(f))
}

fn frob2<T: Real>(m: &DMatrix<T>) -> T {
    m.iter().fold(T::zero(), |a, v| a + *v * *v)
}

type BlockFactors<T> = (DMatrix<T>, DMatrix<T>, DMatrix<T>);

/// Predictor `(dS, dZ)` fed into the corrector's second-order term.
type Corrector<'a, T> = (&'a [DMatrix<T>], &'a [DMatrix<T>]);

struct Direction<T: Real> {
    dx: DVector<T>,
    ds: Vec<DMatrix<T>>,
    dz: Vec<DMatrix<T>>,
}

/// Solves the SDP. Returns `Err` only for malformed problems; infeasibility
/// and numerical trouble are reported through [`SdpSolution::status`].
pub fn solve<T: Real>(problem: &SdpProblem<T>, opts: &SolveOptions<T>) -> Result<SdpSolution<T>> {
    let n = problem.n_vars();
    if n == 0 {
        return Err(Error::InvalidArgument("problem has no variables".into()));
    }
    let blocks = problem.blocks();
    let layout = Layout::new(problem)?;
    let c = DVector::from_column_slice(problem.objective());
    let c_norm = c.norm();
    let total_dim: usize = blocks.iter().map(|b| b.size()).sum();
    let total_dim_t: T = lit(total_dim as f64);

    let mut comp_vars = vec![Vec::new(); layout.comp_sizes.len()];
    let mut global_vars = vec![0usize; layout.n_global];
    for (v, l) in layout.loc.iter().enumerate() {
        match *l {
            Loc::Global(g) => global_vars[g] = v,
            Loc::Local(cc, _) => comp_vars[cc].push(v),
        }
    }

    // Starting point.
    let mut x = DVector::zeros(n);
    let mut s: Vec<DMatrix<T>> = Vec::with_capacity(blocks.len());
    let mut z: Vec<DMatrix<T>> = Vec::with_capacity(blocks.len());
    let ten = lit::<T>(10.0);
    for b in blocks {
        let nb = lit::<T>(b.size() as f64);
        let mut fmax = b.constant().norm();
        let mut ratio = T::zero();
        for (v, coef) in b.terms() {
            let fn_ = coef.entries.iter().fold(T::zero(), |a, e| a + e.2 * e.2).sqrt();
            fmax = fmax.max(fn_);
            ratio = ratio.max((T::one() + c[*v].abs()) / (T::one() + fn_));
        }
        let eta = ten.max(nb.sqrt()).max(fmax);
        let xi = ten.max(nb.sqrt()).max(nb * ratio);
        s.push(DMatrix::identity(b.size(), b.size()) * eta);
        z.push(DMatrix::identity(b.size(), b.size()) * xi);
    }

    let f0_norm = blocks.iter().map(|b| frob2(b.constant())).fold(T::zero(), |a, v| a + v).sqrt();
    let mut status = SdpStatus::NumericalFailure;
    let mut iterations = 0;
    let mut stalls = 0;
    let mut gamma = lit::<T>(MIN_DAMPING);

    for iter in 0..=opts.max_iters {
        iterations = iter;
        // Residuals and measures.
        let fx: Vec<DMatrix<T>> = blocks.par_iter().map(|b| b.evaluate(&x)).collect();
        let rp: Vec<DMatrix<T>> = fx.iter().zip(&s).map(|(f, s)| f - s).collect();
        let mut az = DVector::zeros(n);
        for (b, zb) in blocks.iter().zip(&z) {
            adjoint_into(b, zb, &mut az);
        }
        let rd = &c - &az;
        let pobj = c.dot(&x);
        let dobj = -blocks.iter().zip(&z).fold(T::zero(), |a, (b, zb)| a + inner(b.constant(), zb));
        let sz: T = s.iter().zip(&z).fold(T::zero(), |a, (sb, zb)| a + inner(sb, zb));
        let mu = sz / total_dim_t;
        let gap = (pobj - dobj).abs() / (T::one() + pobj.abs() + dobj.abs());
        let s_norm = s.iter().fold(T::zero(), |a, m| a + frob2(m)).sqrt();
        let pinf = rp.iter().fold(T::zero(), |a, m| a + frob2(m)).sqrt() / (T::one() + f0_norm.max(s_norm));
        let dinf = rd.norm() / (T::one() + c_norm);

        if gap <= opts.gap_tol && pinf <= opts.feas_tol && dinf <= opts.feas_tol {
            status = SdpStatus::Optimal;
            break;
        }
        // Approximate certificate of primal infeasibility: Z ⪰ 0 with
        // A*(Z) ≈ 0 and ⟨F₀, Z⟩ < 0.
        if dobj > T::zero() && az.norm() <= lit::<T>(1e-8) * dobj && pinf > opts.feas_tol {
            status = SdpStatus::Infeasible;
            break;
        }
        if iter == opts.max_iters {
            break;
        }

        // Schur complement assembly.
        // Per block: (chol(S), S⁻¹, chol(Z)).
        let facts: Option<Vec<BlockFactors<T>>> = s
            .par_iter()
            .zip(z.par_iter())
            .map(|(sb, zb)| {
                let cs = Cholesky::new(sb.clone())?;
                let lz = Cholesky::new(zb.clone())?.unpack();
                Some((cs.l(), symmetric_part(&cs.inverse()), lz))
            })
            .collect();
        let facts = match facts {
            Some(v) => v,
            None => break,
        };
        let s_inv: Vec<&DMatrix<T>> = facts.iter().map(|f| &f.1).collect();
        let ls: Vec<&DMatrix<T>> = facts.iter().map(|f| &f.0).collect();
        let lzs: Vec<&DMatrix<T>> = facts.iter().map(|f| &f.2).collect();
        let contributions: Vec<DMatrix<T>> = blocks
            .par_iter()
            .zip(facts.par_iter())
            .zip(z.par_iter())
            .map(|((b, f), zb)| block_schur(b, &f.1, zb))
            .collect();
        let ng = layout.n_global;
        let mut g = DMatrix::<T>::zeros(ng, ng);
        let mut d: Vec<DMatrix<T>> = layout.comp_sizes.iter().map(|&k| DMatrix::zeros(k, k)).collect();
        let mut cpl: Vec<DMatrix<T>> = layout.comp_sizes.iter().map(|&k| DMatrix::zeros(k, ng)).collect();
        for (b, h) in blocks.iter().zip(&contributions) {
            let vars: Vec<usize> = b.variables().collect();
            for (jj, &vj) in vars.iter().enumerate() {
                for (kk, &vk) in vars.iter().enumerate().skip(jj) {
                    let val = h[(jj, kk)];
                    match (layout.loc[vj], layout.loc[vk]) {
                        (Loc::Global(a), Loc::Global(bb)) => {
                            g[(a, bb)] += val;
                            if a != bb {
                                g[(bb, a)] += val;
                            }
                        }
                        (Loc::Local(ca, a), Loc::Local(_, bb)) => {
                            d[ca][(a, bb)] += val;
                            if a != bb {
                                d[ca][(bb, a)] += val;
                            }
                        }
                        (Loc::Local(ca, a), Loc::Global(gg)) | (Loc::Global(gg), Loc::Local(ca, a)) => {
                            cpl[ca][(a, gg)] += val;
                        }
                    }
                }
            }
        }
        let comps: Option<Vec<CompFactor<T>>> = d
            .into_par_iter()
            .zip(cpl.into_par_iter())
            .map(|(dc, cc)| {
                let chol = regularized_cholesky(dc)?;
                let dinv_c = if ng > 0 { chol.solve(&cc) } else { DMatrix::zeros(cc.nrows(), 0) };
                Some(CompFactor { chol, dinv_c, c: cc })
            })
            .collect();
        let comps = match comps {
            Some(c) => c,
            None => break,
        };
        for cf in &comps {
            if ng > 0 {
                g -= cf.c.transpose() * &cf.dinv_c;
            }
        }
        let g = symmetric_part(&g);
        let schur = match regularized_cholesky(g) {
            Some(c) => c,
            None => break,
        };
        let factor = Factor { comps, schur, comp_vars: comp_vars.clone(), global_vars: global_vars.clone() };

        let direction = |sigma_mu: T, corr: Option<Corrector<'_, T>>| -> Direction<T> {
            // Part of dZ independent of dx.
            let base: Vec<DMatrix<T>> = (0..blocks.len())
                .into_par_iter()
                .map(|i| {
                    let si = s_inv[i];
                    let mut inner = &rp[i] * &z[i];
                    if let Some((ds_a, dz_a)) = corr {
                        inner += &ds_a[i] * &dz_a[i];
                    }
                    symmetric_part(&(si * sigma_mu - &z[i] - si * inner))
                })
                .collect();
            let mut rhs = -&rd;
            for (b, gm) in blocks.iter().zip(&base) {
                adjoint_into(b, gm, &mut rhs);
            }
            let dx = refined_solve(&factor, &rhs, |v| apply_schur(blocks, &contributions, v));
            let ds: Vec<DMatrix<T>> = blocks.par_iter().zip(rp.par_iter()).map(|(b, r)| apply(b, &dx) + r).collect();
            // dZ = base − S⁻¹ A(dx) Z, with base already containing −S⁻¹ Rp Z.
            let dz: Vec<DMatrix<T>> = (0..blocks.len())
                .into_par_iter()
                .map(|i| {
                    let adx = &ds[i] - &rp[i];
                    symmetric_part(&(&base[i] - s_inv[i] * (adx * &z[i])))
                })
                .collect();
            Direction { dx, ds, dz }
        };
        let steps = |dir: &Direction<T>| -> (T, T) {
            let ap = max_step_all(&s, &ls, &dir.ds);
            let ad = max_step_all(&z, &lzs, &dir.dz);
            (ap, ad)
        };

        // Predictor.
        let pred = direction(T::zero(), None);
        let (ap, ad) = steps(&pred);
        let (ap, ad) = (ap.min(T::one()), ad.min(T::one()));
        let mu_aff = s
            .iter()
            .zip(&z)
            .zip(pred.ds.iter().zip(&pred.dz))
            .fold(T::zero(), |a, ((sb, zb), (dsb, dzb))| a + inner(&(sb + dsb * ap), &(zb + dzb * ad)))
            / total_dim_t;
        let ratio = (mu_aff / mu).max(T::zero()).min(T::one());
        let sigma = ratio * ratio * ratio;

        // Corrector.
        let corr = direction(sigma * mu, Some((&pred.ds, &pred.dz)));
        let (ap_max, ad_max) = steps(&corr);
        let ap = (gamma * ap_max).min(T::one());
        let ad = (gamma * ad_max).min(T::one());

        x += &corr.dx * ap;
        for i in 0..blocks.len() {
            s[i] = symmetric_part(&(&s[i] + &corr.ds[i] * ap));
            z[i] = symmetric_part(&(&z[i] + &corr.dz[i] * ad));
        }
        gamma = (lit::<T>(MIN_DAMPING) + lit::<T>(0.09) * ap.min(ad)).max(lit(MIN_DAMPING));
        if ap < lit(1e-10) && ad < lit(1e-10) {
            stalls += 1;
            if stalls >= 3 {
                break;
            }
        } else {
            stalls = 0;
        }
    }

    let mut az = DVector::zeros(n);
    for (b, zb) in blocks.iter().zip(&z) {
        adjoint_into(b, zb, &mut az);
    }
    let pobj = c.dot(&x);
    let dobj = -blocks.iter().zip(&z).fold(T::zero(), |a, (b, zb)| a + inner(b.constant(), zb));
    let primal_residual =
        blocks.par_iter().map(|b| block_primal_residual(&b.evaluate(&x))).reduce(T::zero, |a, b| a.max(b));
    let sol = SdpSolution {
        status,
        objective_value: pobj,
        dual_objective: dobj,
        gap: (pobj - dobj).abs() / (T::one() + pobj.abs() + dobj.abs()),
        primal_residual,
        dual_residual: (&c - &az).norm() / (T::one() + c_norm),
        iterations,
        x,
        z,
    };
    if sol.status == SdpStatus::Optimal && super::audit::is_enabled() {
        super::audit::record(&verify(problem, &sol, opts));
    }
    Ok(sol)
}

/// Re-checks primal feasibility, dual feasibility and the duality gap of a
/// solution directly from the problem data.
pub fn verify<T: Real>(problem: &SdpProblem<T>, sol: &SdpSolution<T>, opts: &SolveOptions<T>) -> Verification<T> {
    let blocks = problem.blocks();
    let c = DVector::from_column_slice(problem.objective());
    let mut primal_residual = T::zero();
    let mut dual_psd_residual = T::zero();
    let mut az = DVector::zeros(problem.n_vars());
    let mut dobj = T::zero();
    for (b, zb) in blocks.iter().zip(&sol.z) {
        primal_residual = primal_residual.max(block_primal_residual(&b.evaluate(&sol.x)));
        dual_psd_residual = dual_psd_residual.max(block_primal_residual(&symmetric_part(zb)));
        adjoint_into(b, zb, &mut az);
        dobj -= inner(b.constant(), zb);
    }
    let pobj = c.dot(&sol.x);
    let gap = (pobj - dobj).abs() / (T::one() + pobj.abs() + dobj.abs());
    let dual_residual = (&c - &az).norm() / (T::one() + c.norm());
    let ok = sol.z.len() == blocks.len()
        && primal_residual <= opts.feas_tol
        && dual_psd_residual <= opts.feas_tol
        && dual_residual <= opts.feas_tol
        && gap <= opts.gap_tol;
    Verification { primal_residual, dual_residual, dual_psd_residual, gap, ok }
}
