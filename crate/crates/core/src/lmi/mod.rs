//! Dense semidefinite programs in linear-matrix-inequality form:
//!
//! ```text
//! minimize    cᵀx
//! subject to  F₀⁽ᵇ⁾ + Σⱼ xⱼ Fⱼ⁽ᵇ⁾ ⪰ 0   for every block b
//! ```
//!
//! Scalar decision variables are allocated through named matrix variables
//! (symmetric or rectangular); blocks are assembled from affine terms
//! `L·V·R` in those variables with [`AffineBlock`].

pub mod audit;
mod ipm;

use std::collections::{BTreeMap, HashMap};
use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::max_abs;
use crate::scalar::{lit, Real};

pub use ipm::{solve, verify, SdpSolution, SdpStatus, SolveOptions, Verification};

/// Shape of a matrix variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    /// `n × n` symmetric, stored as `n(n+1)/2` scalars (lower triangle,
    /// column-major).
    Symmetric(usize),
    /// `rows × cols`, stored column-major.
    Rectangular(usize, usize),
}

/// Handle to a registered matrix variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatVar {
    id: usize,
    offset: usize,
    kind: VarKind,
}

impl MatVar {
    pub fn kind(&self) -> VarKind {
        self.kind
    }

    pub fn shape(&self) -> (usize, usize) {
        match self.kind {
            VarKind::Symmetric(n) => (n, n),
            VarKind::Rectangular(r, c) => (r, c),
        }
    }

    pub fn n_scalars(&self) -> usize {
        match self.kind {
            VarKind::Symmetric(n) => n * (n + 1) / 2,
            VarKind::Rectangular(r, c) => r * c,
        }
    }

    /// Range of scalar indices owned by this variable.
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.n_scalars()
    }

    /// Scalar index of entry `(i, j)`; symmetric variables map `(i, j)` and
    /// `(j, i)` to the same scalar.
    pub fn index(&self, i: usize, j: usize) -> usize {
        match self.kind {
            VarKind::Symmetric(n) => {
                let (r, c) = if i >= j { (i, j) } else { (j, i) };
                // Columns 0..c of the lower triangle hold n, n-1, ... entries.
                self.offset + c * n - c * c.saturating_sub(1) / 2 + (r - c)
            }
            VarKind::Rectangular(rows, _) => self.offset + j * rows + i,
        }
    }

    /// `(scalar, i, j)` for every scalar; symmetric off-diagonal scalars also
    /// control `(j, i)`.
    fn scalar_entries(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::with_capacity(self.n_scalars());
        match self.kind {
            VarKind::Symmetric(n) => {
                for c in 0..n {
                    for r in c..n {
                        out.push((self.index(r, c), r, c));
                    }
                }
            }
            VarKind::Rectangular(rows, cols) => {
                for c in 0..cols {
                    for r in 0..rows {
                        out.push((self.index(r, c), r, c));
                    }
                }
            }
        }
        out
    }

    /// Reads the matrix value of this variable from a solution vector.
    pub fn extract<T: Real>(&self, x: &DVector<T>) -> DMatrix<T> {
        let (rows, cols) = self.shape();
        DMatrix::from_fn(rows, cols, |i, j| x[self.index(i, j)])
    }

    /// Writes a matrix into the scalar slots of `x` (symmetric variables read
    /// the lower triangle).
    pub fn pack<T: Real>(&self, m: &DMatrix<T>, x: &mut DVector<T>) {
        for (s, r, c) in self.scalar_entries() {
            x[s] = m[(r, c)];
        }
    }
}

/// Sparse symmetric coefficient matrix, both triangles stored.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct SparseSym<T> {
    pub(crate) entries: Vec<(usize, usize, T)>,
}

/// One PSD constraint `F₀ + Σ xⱼ Fⱼ ⪰ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdBlock<T: Real> {
    size: usize,
    constant: DMatrix<T>,
    /// `(scalar variable, coefficient)` sorted by variable.
    terms: Vec<(usize, SparseSym<T>)>,
}

impl<T: Real> PsdBlock<T> {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn constant(&self) -> &DMatrix<T> {
        &self.constant
    }

    /// Scalar variables that appear in this block.
    pub fn variables(&self) -> impl Iterator<Item = usize> + '_ {
        self.terms.iter().map(|(v, _)| *v)
    }

    /// Dense coefficient matrix of scalar variable `var` (zero if absent).
    pub fn coefficient(&self, var: usize) -> DMatrix<T> {
        let mut m = DMatrix::zeros(self.size, self.size);
        if let Ok(pos) = self.terms.binary_search_by_key(&var, |(v, _)| *v) {
            for &(i, j, v) in &self.terms[pos].1.entries {
                m[(i, j)] += v;
            }
        }
        m
    }

    /// `F₀ + Σ xⱼ Fⱼ`.
    pub fn evaluate(&self, x: &DVector<T>) -> DMatrix<T> {
        let mut m = self.constant.clone();
        for (v, coef) in &self.terms {
            let xv = x[*v];
            for &(i, j, c) in &coef.entries {
                m[(i, j)] += xv * c;
            }
        }
        m
    }

    pub(crate) fn terms(&self) -> &[(usize, SparseSym<T>)] {
        &self.terms
    }
}

/// Builder for one affine PSD block. Placement uses sub-block coordinates
/// `(row, col)`; anything placed strictly below the diagonal is mirrored
/// (transposed) above it, and contributions on the diagonal are symmetrized.
#[derive(Debug, Clone)]
pub struct AffineBlock<T: Real> {
    size: usize,
    constant: DMatrix<T>,
    coeffs: BTreeMap<usize, DMatrix<T>>,
    refs: Vec<MatVar>,
}

impl<T: Real> AffineBlock<T> {
    pub fn new(size: usize) -> Self {
        Self { size, constant: DMatrix::zeros(size, size), coeffs: BTreeMap::new(), refs: Vec::new() }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    fn place(target: &mut DMatrix<T>, r0: usize, c0: usize, m: &DMatrix<T>) {
        let (h, w) = m.shape();
        if r0 == c0 {
            debug_assert_eq!(h, w);
            for i in 0..h {
                for j in 0..w {
                    let v = (m[(i, j)] + m[(j, i)]) * lit::<T>(0.5);
                    target[(r0 + i, c0 + j)] += v;
                }
            }
        } else {
            for i in 0..h {
                for j in 0..w {
                    target[(r0 + i, c0 + j)] += m[(i, j)];
                    target[(c0 + j, r0 + i)] += m[(i, j)];
                }
            }
        }
    }

    /// Adds a constant matrix at sub-block position `(r0, c0)`.
    pub fn constant(&mut self, r0: usize, c0: usize, m: &DMatrix<T>) -> &mut Self {
        assert!(r0 + m.nrows() <= self.size && c0 + m.ncols() <= self.size, "constant out of block bounds");
        Self::place(&mut self.constant, r0, c0, m);
        self
    }

    /// Adds `left · V · right` at sub-block position `(r0, c0)`.
    pub fn term(&mut self, r0: usize, c0: usize, left: &DMatrix<T>, var: MatVar, right: &DMatrix<T>) -> &mut Self {
        let (vr, vc) = var.shape();
        assert_eq!(left.ncols(), vr, "left factor does not match variable rows");
        assert_eq!(right.nrows(), vc, "right factor does not match variable columns");
        let (h, w) = (left.nrows(), right.ncols());
        assert!(r0 + h <= self.size && c0 + w <= self.size, "term out of block bounds");
        self.refs.push(var);
        let symmetric = matches!(var.kind, VarKind::Symmetric(_));
        for (s, r, c) in var.scalar_entries() {
            // L·E·R where E has ones at (r, c) (and (c, r) for symmetric).
            let mut contrib = left.column(r) * right.row(c);
            if symmetric && r != c {
                contrib += left.column(c) * right.row(r);
            }
            if contrib.iter().all(|v| *v == T::zero()) {
                continue;
            }
            let size = self.size;
            let target = self.coeffs.entry(s).or_insert_with(|| DMatrix::zeros(size, size));
            Self::place(target, r0, c0, &contrib);
        }
        self
    }

    /// Adds `V` itself at `(r0, c0)`.
    pub fn var(&mut self, r0: usize, c0: usize, var: MatVar) -> &mut Self {
        let (r, c) = var.shape();
        self.term(r0, c0, &DMatrix::identity(r, r), var, &DMatrix::identity(c, c))
    }
}

/// Registry of variables, objective and PSD blocks.
#[derive(Debug, Clone)]
pub struct SdpProblem<T: Real> {
    n_vars: usize,
    objective: Vec<T>,
    blocks: Vec<PsdBlock<T>>,
    vars: Vec<(String, MatVar)>,
    names: HashMap<String, usize>,
}

impl<T: Real> Default for SdpProblem<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> SdpProblem<T> {
    pub fn new() -> Self {
        Self { n_vars: 0, objective: Vec::new(), blocks: Vec::new(), vars: Vec::new(), names: HashMap::new() }
    }

    fn register(&mut self, name: &str, kind: VarKind) -> Result<MatVar> {
        if self.names.contains_key(name) {
            return Err(Error::DuplicateVariable(name.to_string()));
        }
        let dims_ok = match kind {
            VarKind::Symmetric(n) => n >= 1,
            VarKind::Rectangular(r, c) => r >= 1 && c >= 1,
        };
        if !dims_ok {
            return Err(Error::InvalidArgument(format!("variable `{name}` has an empty dimension")));
        }
        let var = MatVar { id: self.vars.len(), offset: self.n_vars, kind };
        self.n_vars += var.n_scalars();
        self.objective.resize(self.n_vars, T::zero());
        self.names.insert(name.to_string(), var.id);
        self.vars.push((name.to_string(), var));
        Ok(var)
    }

    pub fn register_symmetric_variable(&mut self, name: &str, n: usize) -> Result<MatVar> {
        self.register(name, VarKind::Symmetric(n))
    }

    pub fn register_rectangular_variable(&mut self, name: &str, rows: usize, cols: usize) -> Result<MatVar> {
        self.register(name, VarKind::Rectangular(rows, cols))
    }

    pub fn variable(&self, name: &str) -> Option<MatVar> {
        self.names.get(name).map(|&id| self.vars[id].1)
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn objective(&self) -> &[T] {
        &self.objective
    }

    pub fn blocks(&self) -> &[PsdBlock<T>] {
        &self.blocks
    }

    fn check_var(&self, var: MatVar) -> Result<()> {
        match self.vars.get(var.id) {
            Some((_, v)) if *v == var => Ok(()),
            _ => Err(Error::UnknownVariable(var.id)),
        }
    }

    /// Adds `weight · trace(C · V)` to the objective.
    pub fn add_trace_objective(&mut self, var: MatVar, c: &DMatrix<T>, weight: T) -> Result<()> {
        self.check_var(var)?;
        let (r, cc) = var.shape();
        if c.shape() != (cc, r) {
            return Err(Error::Dimension("objective weight must have the transposed shape of the variable".into()));
        }
        let symmetric = matches!(var.kind, VarKind::Symmetric(_));
        for (s, i, j) in var.scalar_entries() {
            // trace(C V) = Σ C[j,i] V[i,j]
            let mut coef = c[(j, i)];
            if symmetric && i != j {
                coef += c[(i, j)];
            }
            self.objective[s] += weight * coef;
        }
        Ok(())
    }

    /// Sets the raw objective coefficient of one scalar.
    pub fn set_objective_coefficient(&mut self, index: usize, value: T) -> Result<()> {
        if index >= self.n_vars {
            return Err(Error::UnknownVariable(index));
        }
        self.objective[index] = value;
        Ok(())
    }

    /// Appends a PSD block. Fails if it references a variable not registered
    /// in this problem.
    pub fn add_psd_block(&mut self, block: AffineBlock<T>) -> Result<usize> {
        for v in &block.refs {
            self.check_var(*v)?;
        }
        let size = block.size;
        let scale = T::one() + max_abs(&block.constant);
        let sym_tol = lit::<T>(1e-12) * scale;
        if max_abs(&(&block.constant - block.constant.transpose())) > sym_tol {
            return Err(Error::InvalidArgument("constant term is not symmetric".into()));
        }
        let mut terms = Vec::with_capacity(block.coeffs.len());
        for (var, m) in block.coeffs {
            if max_abs(&(&m - m.transpose())) > lit::<T>(1e-12) * (T::one() + max_abs(&m)) {
                return Err(Error::InvalidArgument(format!("coefficient of scalar {var} is not symmetric")));
            }
            let mut entries = Vec::new();
            for j in 0..size {
                for i in 0..size {
                    let v = m[(i, j)];
                    if v != T::zero() {
                        entries.push((i, j, v));
                    }
                }
            }
            if !entries.is_empty() {
                terms.push((var, SparseSym { entries }));
            }
        }
        self.blocks.push(PsdBlock { size, constant: block.constant, terms });
        Ok(self.blocks.len() - 1)
    }

    /// Writes the problem as plain text: a header, the objective, then one
    /// line per nonzero upper-triangular coefficient as
    /// `block var row col value` with `var = 0` for the constant term and
    /// 1-based indices throughout.
    pub fn write_sparse_text<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{} {}", self.n_vars, self.blocks.len())?;
        let sizes: Vec<String> = self.blocks.iter().map(|b| b.size.to_string()).collect();
        writeln!(w, "{}", sizes.join(" "))?;
        let obj: Vec<String> = self.objective.iter().map(|v| format!("{:e}", v)).collect();
        writeln!(w, "{}", obj.join(" "))?;
        for (bi, b) in self.blocks.iter().enumerate() {
            for j in 0..b.size {
                for i in 0..=j {
                    let v = b.constant[(i, j)];
                    if v != T::zero() {
                        writeln!(w, "{} 0 {} {} {:e}", bi + 1, i + 1, j + 1, v)?;
                    }
                }
            }
            for (var, coef) in &b.terms {
                for &(i, j, v) in &coef.entries {
                    if i <= j {
                        writeln!(w, "{} {} {} {} {:e}", bi + 1, var + 1, i + 1, j + 1, v)?;
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
