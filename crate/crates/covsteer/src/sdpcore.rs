//! A minimal semidefinite-program builder and solver-adapter contract:
//! symmetric/rectangular/scalar matrix variables, affine equality
//! constraints, PSD block constraints, and a linear (trace) objective.
//!
//! Problems are built from [`MatExpr`] affine matrix expressions, scalarized
//! into standard conic form, handed to a [`SolverAdapter`] (the bundled
//! backend wraps the Clarabel interior-point solver), and the reported
//! solution is *re-verified here*: equality residuals and PSD minimum
//! eigenvalues are recomputed from the returned values, never trusted from
//! the solver's own report.

use crate::matlib::SymMat;
use crate::{Mat, Scalar};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use thiserror::Error;

/// Errors raised while building a problem (solver outcomes are reported
/// through [`SdpStatus`], not through this type).
#[derive(Debug, Error)]
pub enum SdpError {
    #[error("duplicate variable name: {0}")]
    DuplicateName(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("PSD block '{0}' is not symmetric: {1}")]
    Asymmetric(String, String),
    #[error("objective must be square to take its trace, got {0}x{1}")]
    NonSquareObjective(usize, usize),
}

/// Handle to a declared variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarId(usize);

/// Shape of a declared variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VarKind {
    /// Symmetric `k×k`, parameterized by its upper triangle.
    Symmetric(usize),
    /// General rectangular `r×c`.
    Rectangular(usize, usize),
    /// A single real number (a `1×1` matrix).
    Scalar,
}

impl VarKind {
    fn shape(&self) -> (usize, usize) {
        match *self {
            VarKind::Symmetric(k) => (k, k),
            VarKind::Rectangular(r, c) => (r, c),
            VarKind::Scalar => (1, 1),
        }
    }

    /// Number of independent scalars parameterizing the variable.
    fn num_scalars(&self) -> usize {
        match *self {
            VarKind::Symmetric(k) => k * (k + 1) / 2,
            VarKind::Rectangular(r, c) => r * c,
            VarKind::Scalar => 1,
        }
    }
}

// ---------------------------------------------------------------------------
// Affine matrix expressions
// ---------------------------------------------------------------------------

/// One affine term `L · X · R` or `L · Xᵀ · R` of a matrix expression.
#[derive(Clone, Debug)]
struct Term<T: Scalar> {
    var: VarId,
    transposed: bool,
    left: Mat<T>,
    right: Mat<T>,
}

/// Affine matrix-valued expression: a constant plus a sum of terms
/// `L_i · op(X_{v_i}) · R_i`. All std compositions (addition, negation,
/// constant multiplication, transposition, block stacking) stay in this form.
#[derive(Clone, Debug)]
pub struct MatExpr<T: Scalar> {
    rows: usize,
    cols: usize,
    constant: Mat<T>,
    terms: Vec<Term<T>>,
}

impl<T: Scalar> MatExpr<T> {
    /// Constant expression.
    pub fn constant(m: Mat<T>) -> Self {
        MatExpr {
            rows: m.nrows(),
            cols: m.ncols(),
            constant: m,
            terms: Vec::new(),
        }
    }

    /// All-zero expression.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::constant(Mat::zeros(rows, cols))
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// `self + other`.
    // Not the std operator traits: these builder methods are fallible
    // (dimension-checked) and consume `self`, which `Add`/`Sub`/`Neg`
    // cannot express.
    #[allow(clippy::should_implement_trait)]
    pub fn add(mut self, other: MatExpr<T>) -> Result<Self, SdpError> {
        if self.shape() != other.shape() {
            return Err(SdpError::Dimension(format!(
                "cannot add {}x{} and {}x{} expressions",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        self.constant += other.constant;
        self.terms.extend(other.terms);
        Ok(self)
    }

    /// `self − other`.
    #[allow(clippy::should_implement_trait)]
    pub fn sub(self, other: MatExpr<T>) -> Result<Self, SdpError> {
        self.add(other.neg())
    }

    /// `−self`.
    #[allow(clippy::should_implement_trait)]
    pub fn neg(self) -> Self {
        self.scale(-T::one())
    }

    /// `a · self`.
    pub fn scale(mut self, a: T) -> Self {
        self.constant *= a;
        for t in &mut self.terms {
            t.left *= a;
        }
        self
    }

    /// `C · self`.
    pub fn lmul(mut self, c: &Mat<T>) -> Result<Self, SdpError> {
        if c.ncols() != self.rows {
            return Err(SdpError::Dimension(format!(
                "left factor is {}x{} but expression has {} rows",
                c.nrows(),
                c.ncols(),
                self.rows
            )));
        }
        self.constant = c * self.constant;
        for t in &mut self.terms {
            t.left = c * &t.left;
        }
        self.rows = c.nrows();
        Ok(self)
    }

    /// `self · C`.
    pub fn rmul(mut self, c: &Mat<T>) -> Result<Self, SdpError> {
        if c.nrows() != self.cols {
            return Err(SdpError::Dimension(format!(
                "right factor is {}x{} but expression has {} cols",
                c.nrows(),
                c.ncols(),
                self.cols
            )));
        }
        self.constant *= c;
        for t in &mut self.terms {
            t.right = &t.right * c;
        }
        self.cols = c.ncols();
        Ok(self)
    }

    /// `selfᵀ`.
    pub fn transpose(self) -> Self {
        MatExpr {
            rows: self.cols,
            cols: self.rows,
            constant: self.constant.transpose(),
            terms: self
                .terms
                .into_iter()
                .map(|t| Term {
                    var: t.var,
                    transposed: !t.transposed,
                    left: t.right.transpose(),
                    right: t.left.transpose(),
                })
                .collect(),
        }
    }

    /// Block composition from a grid of expressions; every row of the grid
    /// must agree on heights, every column on widths.
    pub fn block(grid: &[Vec<MatExpr<T>>]) -> Result<Self, SdpError> {
        if grid.is_empty() || grid[0].is_empty() {
            return Err(SdpError::Dimension("empty block grid".into()));
        }
        let ncols_grid = grid[0].len();
        let row_heights: Vec<usize> = grid.iter().map(|r| r[0].rows).collect();
        let col_widths: Vec<usize> = grid[0].iter().map(|e| e.cols).collect();
        let total_rows: usize = row_heights.iter().sum();
        let total_cols: usize = col_widths.iter().sum();
        let mut out = MatExpr::zeros(total_rows, total_cols);
        let mut roff = 0;
        for (bi, row) in grid.iter().enumerate() {
            if row.len() != ncols_grid {
                return Err(SdpError::Dimension(format!(
                    "block row {} has {} entries, expected {}",
                    bi,
                    row.len(),
                    ncols_grid
                )));
            }
            let mut coff = 0;
            for (bj, e) in row.iter().enumerate() {
                if e.rows != row_heights[bi] || e.cols != col_widths[bj] {
                    return Err(SdpError::Dimension(format!(
                        "block ({}, {}) is {}x{}, expected {}x{}",
                        bi, bj, e.rows, e.cols, row_heights[bi], col_widths[bj]
                    )));
                }
                out.constant
                    .view_mut((roff, coff), (e.rows, e.cols))
                    .copy_from(&e.constant);
                for t in &e.terms {
                    // embed: pad `left` with zero rows and `right` with zero
                    // columns at the block offset
                    let mut left = Mat::zeros(total_rows, t.left.ncols());
                    left.view_mut((roff, 0), (t.left.nrows(), t.left.ncols()))
                        .copy_from(&t.left);
                    let mut right = Mat::zeros(t.right.nrows(), total_cols);
                    right
                        .view_mut((0, coff), (t.right.nrows(), t.right.ncols()))
                        .copy_from(&t.right);
                    out.terms.push(Term {
                        var: t.var,
                        transposed: t.transposed,
                        left,
                        right,
                    });
                }
                coff += col_widths[bj];
            }
            roff += row_heights[bi];
        }
        Ok(out)
    }

    /// Evaluate at concrete variable values (indexed by `VarId`).
    fn eval(&self, values: &[Mat<T>]) -> Mat<T> {
        let mut out = self.constant.clone();
        for t in &self.terms {
            let x = &values[t.var.0];
            if t.transposed {
                out += &t.left * x.transpose() * &t.right;
            } else {
                out += &t.left * x * &t.right;
            }
        }
        out
    }

    /// Largest absolute entry over the constant and all term factors.
    fn data_magnitude(&self) -> T {
        let mut mag = self.constant.amax();
        for t in &self.terms {
            if t.left.nrows() > 0 && t.left.ncols() > 0 {
                mag = mag.max(t.left.amax());
            }
            if t.right.nrows() > 0 && t.right.ncols() > 0 {
                mag = mag.max(t.right.amax());
            }
        }
        if self.constant.nrows() == 0 || self.constant.ncols() == 0 {
            T::zero()
        } else {
            mag
        }
    }
}

// ---------------------------------------------------------------------------
// Problem builder
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
struct VarDecl {
    name: String,
    kind: VarKind,
    offset: usize,
}

#[derive(Clone, Debug)]
struct Constraint<T: Scalar> {
    name: String,
    expr: MatExpr<T>,
    /// Per scalar-variable coefficient matrices, keyed by global scalar index.
    coefs: BTreeMap<usize, Mat<T>>,
}

/// A semidefinite program: minimize a linear (trace) objective over declared
/// variables subject to affine equalities and PSD block constraints.
#[derive(Clone, Debug, Default)]
pub struct SdpProblem<T: Scalar> {
    vars: Vec<VarDecl>,
    num_scalars: usize,
    equalities: Vec<Constraint<T>>,
    psd_blocks: Vec<Constraint<T>>,
    objective: Option<Constraint<T>>,
}

impl<T: Scalar> SdpProblem<T> {
    pub fn new() -> Self {
        SdpProblem {
            vars: Vec::new(),
            num_scalars: 0,
            equalities: Vec::new(),
            psd_blocks: Vec::new(),
            objective: None,
        }
    }

    /// Declare a variable; names must be unique and dimensions positive.
    pub fn add_variable(&mut self, name: &str, kind: VarKind) -> Result<VarId, SdpError> {
        if self.vars.iter().any(|v| v.name == name) {
            return Err(SdpError::DuplicateName(name.to_string()));
        }
        let (r, c) = kind.shape();
        if r == 0 || c == 0 {
            return Err(SdpError::Dimension(format!(
                "variable '{}' must have positive dimensions",
                name
            )));
        }
        let id = VarId(self.vars.len());
        self.vars.push(VarDecl {
            name: name.to_string(),
            kind,
            offset: self.num_scalars,
        });
        self.num_scalars += kind.num_scalars();
        Ok(id)
    }

    /// Identity expression of a declared variable.
    pub fn var(&self, id: VarId) -> MatExpr<T> {
        let (r, c) = self.vars[id.0].kind.shape();
        MatExpr {
            rows: r,
            cols: c,
            constant: Mat::zeros(r, c),
            terms: vec![Term {
                var: id,
                transposed: false,
                left: Mat::identity(r, r),
                right: Mat::identity(c, c),
            }],
        }
    }

    /// `λ · M` for a scalar variable `λ` and a constant matrix `M`
    /// (assembled as a sum of rank-one terms).
    pub fn scalar_times(&self, id: VarId, m: &Mat<T>) -> Result<MatExpr<T>, SdpError> {
        if self.vars[id.0].kind != VarKind::Scalar {
            return Err(SdpError::Dimension(format!(
                "variable '{}' is not scalar",
                self.vars[id.0].name
            )));
        }
        let mut terms = Vec::with_capacity(m.nrows());
        for i in 0..m.nrows() {
            let mut left = Mat::zeros(m.nrows(), 1);
            left[(i, 0)] = T::one();
            let right = Mat::from_fn(1, m.ncols(), |_, j| m[(i, j)]);
            terms.push(Term {
                var: id,
                transposed: false,
                left,
                right,
            });
        }
        Ok(MatExpr {
            rows: m.nrows(),
            cols: m.ncols(),
            constant: Mat::zeros(m.nrows(), m.ncols()),
            terms,
        })
    }

    /// Total number of scalar decision variables.
    pub fn num_scalars(&self) -> usize {
        self.num_scalars
    }

    /// Per-scalar coefficient matrices of an expression (the derivative of
    /// the expression with respect to each scalar decision variable).
    fn scalarize(&self, expr: &MatExpr<T>) -> BTreeMap<usize, Mat<T>> {
        let mut coefs: BTreeMap<usize, Mat<T>> = BTreeMap::new();
        let (er, ec) = (expr.rows, expr.cols);
        for t in &expr.terms {
            let decl = &self.vars[t.var.0];
            let off = decl.offset;
            match decl.kind {
                VarKind::Symmetric(k) => {
                    for j in 0..k {
                        for i in 0..=j {
                            let idx = off + j * (j + 1) / 2 + i;
                            let coef = coefs.entry(idx).or_insert_with(|| Mat::zeros(er, ec));
                            coef.gemm(T::one(), &t.left.column(i), &t.right.row(j), T::one());
                            if i != j {
                                coef.gemm(T::one(), &t.left.column(j), &t.right.row(i), T::one());
                            }
                        }
                    }
                }
                VarKind::Rectangular(r, c) => {
                    for j in 0..c {
                        for i in 0..r {
                            let idx = off + j * r + i;
                            let (li, rj) = if t.transposed { (j, i) } else { (i, j) };
                            let coef = coefs.entry(idx).or_insert_with(|| Mat::zeros(er, ec));
                            coef.gemm(T::one(), &t.left.column(li), &t.right.row(rj), T::one());
                        }
                    }
                }
                VarKind::Scalar => {
                    let coef = coefs.entry(off).or_insert_with(|| Mat::zeros(er, ec));
                    coef.gemm(T::one(), &t.left, &t.right, T::one());
                }
            }
        }
        coefs
    }

    /// Require `expr = 0` entrywise.
    pub fn add_equality(&mut self, name: &str, expr: MatExpr<T>) -> Result<(), SdpError> {
        let coefs = self.scalarize(&expr);
        self.equalities.push(Constraint {
            name: name.to_string(),
            expr,
            coefs,
        });
        Ok(())
    }

    /// Require `expr ⪰ 0`. The expression must be symmetric *by
    /// construction*: the constant part and every per-scalar coefficient
    /// matrix are checked and asymmetry is rejected.
    pub fn add_psd_block(&mut self, name: &str, expr: MatExpr<T>) -> Result<(), SdpError> {
        if expr.rows != expr.cols {
            return Err(SdpError::Asymmetric(
                name.to_string(),
                format!("block is {}x{}", expr.rows, expr.cols),
            ));
        }
        let sym_tol = T::c(1e-12);
        let check = |m: &Mat<T>, what: &str| -> Result<(), SdpError> {
            let dev = (m - m.transpose()).amax();
            let scale = T::one() + m.amax();
            if dev > sym_tol * scale {
                return Err(SdpError::Asymmetric(
                    name.to_string(),
                    format!("{} deviates from symmetry by {:?}", what, dev.to_f64()),
                ));
            }
            Ok(())
        };
        check(&expr.constant, "constant part")?;
        let coefs = self.scalarize(&expr);
        for (idx, coef) in &coefs {
            check(coef, &format!("coefficient of scalar {}", idx))?;
        }
        self.psd_blocks.push(Constraint {
            name: name.to_string(),
            expr,
            coefs,
        });
        Ok(())
    }

    /// Minimize `trace(expr)`; the expression must be square.
    pub fn set_objective(&mut self, expr: MatExpr<T>) -> Result<(), SdpError> {
        if expr.rows != expr.cols {
            return Err(SdpError::NonSquareObjective(expr.rows, expr.cols));
        }
        let coefs = self.scalarize(&expr);
        self.objective = Some(Constraint {
            name: "objective".to_string(),
            expr,
            coefs,
        });
        Ok(())
    }

    /// Largest absolute magnitude over all problem data (used to scale the
    /// verification tolerances).
    fn data_scale(&self) -> T {
        let mut mag = T::zero();
        for c in self
            .equalities
            .iter()
            .chain(self.psd_blocks.iter())
            .chain(self.objective.iter())
        {
            mag = mag.max(c.expr.data_magnitude());
        }
        T::one() + mag
    }

    /// Human-readable problem dump: variable table then one constraint per
    /// line, in deterministic (declaration/insertion) order.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (i, v) in self.vars.iter().enumerate() {
            let kind = match v.kind {
                VarKind::Symmetric(k) => format!("symmetric {}x{}", k, k),
                VarKind::Rectangular(r, c) => format!("rectangular {}x{}", r, c),
                VarKind::Scalar => "scalar".to_string(),
            };
            let _ = writeln!(
                out,
                "var {} {} {} scalars={} offset={}",
                i,
                v.name,
                kind,
                v.kind.num_scalars(),
                v.offset
            );
        }
        let describe = |c: &Constraint<T>| -> String {
            let mut names: Vec<&str> = c
                .expr
                .terms
                .iter()
                .map(|t| self.vars[t.var.0].name.as_str())
                .collect();
            names.sort_unstable();
            names.dedup();
            format!(
                "{} {}x{} vars=[{}]",
                c.name,
                c.expr.rows,
                c.expr.cols,
                names.join(",")
            )
        };
        if let Some(obj) = &self.objective {
            let _ = writeln!(out, "minimize trace {}", describe(obj));
        }
        for (i, c) in self.equalities.iter().enumerate() {
            let _ = writeln!(out, "eq {} {}", i, describe(c));
        }
        for (i, c) in self.psd_blocks.iter().enumerate() {
            let _ = writeln!(out, "psd {} {}", i, describe(c));
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Conic standard form and the adapter contract
// ---------------------------------------------------------------------------

/// Cone blocks of the scalarized problem, in row order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConeSpec {
    /// `len` rows pinned to zero (equality constraints).
    Zero(usize),
    /// Scaled upper-triangle vectorization of a `dim×dim` PSD matrix.
    PsdTriangle(usize),
}

/// `minimize qᵀx` subject to `A x + s = b`, `s ∈ K` with `K` described by
/// `cones` (row blocks of `A`/`b` in order).
#[derive(Clone, Debug)]
pub struct ConicProblem<T: Scalar> {
    pub num_vars: usize,
    pub q: Vec<T>,
    /// `(row, col, value)` triplets of `A`; duplicates sum.
    pub a_triplets: Vec<(usize, usize, T)>,
    pub b: Vec<T>,
    pub cones: Vec<ConeSpec>,
}

impl<T: Scalar> ConicProblem<T> {
    pub fn num_rows(&self) -> usize {
        self.cones
            .iter()
            .map(|c| match *c {
                ConeSpec::Zero(len) => len,
                ConeSpec::PsdTriangle(d) => d * (d + 1) / 2,
            })
            .sum()
    }
}

/// Raw outcome reported by a backend.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RawStatus {
    Solved,
    PrimalInfeasible,
    DualInfeasible,
    Failed(String),
}

/// Backend solution: primal values and the raw status.
#[derive(Clone, Debug)]
pub struct ConicSolution<T: Scalar> {
    pub status: RawStatus,
    pub x: Vec<T>,
    pub iterations: u32,
}

/// A conic backend. Implementations own their tolerances; one adapter
/// instance must not be shared across concurrent solves.
pub trait SolverAdapter<T: Scalar> {
    /// Solve the conic problem; `Err` means the backend crashed (maps to
    /// [`SdpStatus::NumericalFailure`]).
    fn solve_conic(&self, p: &ConicProblem<T>) -> Result<ConicSolution<T>, String>;
}

// ---------------------------------------------------------------------------
// Solution and the verified solve path
// ---------------------------------------------------------------------------

/// Solver outcome after independent residual verification.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SdpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

/// Residuals recomputed from the returned values (never copied from the
/// solver's report).
#[derive(Clone, Copy, Debug)]
pub struct Residuals<T: Scalar> {
    /// Largest absolute equality-constraint violation.
    pub primal_eq: T,
    /// Smallest eigenvalue over all PSD blocks (`0` when there are none).
    pub min_psd_eig: T,
}

/// Verified solve result.
#[derive(Clone, Debug)]
pub struct SdpSolution<T: Scalar> {
    pub status: SdpStatus,
    /// Variable name → recovered matrix value (empty unless optimal).
    pub values: BTreeMap<String, Mat<T>>,
    pub objective_value: T,
    pub residuals: Residuals<T>,
    /// Backend diagnostics (status text, iterations, verification notes).
    pub diagnostics: String,
}

impl<T: Scalar> SdpProblem<T> {
    /// Lower the problem to conic standard form. Row layout: all equality
    /// rows first (one zero cone), then one PSD triangle block per
    /// constraint, in insertion order.
    pub fn to_conic(&self) -> ConicProblem<T> {
        let sqrt2 = T::c(2.0).sqrt();
        let mut q = vec![T::zero(); self.num_scalars];
        if let Some(obj) = &self.objective {
            for (idx, coef) in &obj.coefs {
                q[*idx] = coef.trace();
            }
        }
        let mut a_triplets = Vec::new();
        let mut b = Vec::new();
        let mut cones = Vec::new();
        let mut row = 0;

        let eq_rows: usize = self
            .equalities
            .iter()
            .map(|c| c.expr.rows * c.expr.cols)
            .sum();
        if eq_rows > 0 {
            cones.push(ConeSpec::Zero(eq_rows));
            for c in &self.equalities {
                let (r, cc) = (c.expr.rows, c.expr.cols);
                // entry (i, j) occupies row `row + j*r + i`
                for (idx, coef) in &c.coefs {
                    for j in 0..cc {
                        for i in 0..r {
                            let v = coef[(i, j)];
                            if v != T::zero() {
                                a_triplets.push((row + j * r + i, *idx, v));
                            }
                        }
                    }
                }
                for j in 0..cc {
                    for i in 0..r {
                        b.push(-c.expr.constant[(i, j)]);
                    }
                }
                row += r * cc;
            }
        }

        for c in &self.psd_blocks {
            let d = c.expr.rows;
            let len = d * (d + 1) / 2;
            cones.push(ConeSpec::PsdTriangle(d));
            // svec layout: upper triangle stacked columnwise, off-diagonal
            // entries scaled by sqrt(2)
            let svec_index = |i: usize, j: usize| j * (j + 1) / 2 + i;
            for (idx, coef) in &c.coefs {
                for j in 0..d {
                    for i in 0..=j {
                        let scale = if i == j { T::one() } else { sqrt2 };
                        let v = coef[(i, j)] * scale;
                        if v != T::zero() {
                            a_triplets.push((row + svec_index(i, j), *idx, -v));
                        }
                    }
                }
            }
            for j in 0..d {
                for i in 0..=j {
                    let scale = if i == j { T::one() } else { sqrt2 };
                    b.push(c.expr.constant[(i, j)] * scale);
                }
            }
            row += len;
        }

        ConicProblem {
            num_vars: self.num_scalars,
            q,
            a_triplets,
            b,
            cones,
        }
    }

    /// Reconstruct full matrices from the scalarized solution vector.
    fn unpack(&self, x: &[T]) -> Vec<Mat<T>> {
        self.vars
            .iter()
            .map(|v| match v.kind {
                VarKind::Symmetric(k) => {
                    let mut m = Mat::zeros(k, k);
                    for j in 0..k {
                        for i in 0..=j {
                            let val = x[v.offset + j * (j + 1) / 2 + i];
                            m[(i, j)] = val;
                            m[(j, i)] = val;
                        }
                    }
                    m
                }
                VarKind::Rectangular(r, c) => {
                    let mut m = Mat::zeros(r, c);
                    for j in 0..c {
                        for i in 0..r {
                            m[(i, j)] = x[v.offset + j * r + i];
                        }
                    }
                    m
                }
                VarKind::Scalar => Mat::from_element(1, 1, x[v.offset]),
            })
            .collect()
    }

    /// Solve through the adapter and verify the result independently:
    /// equality residuals and PSD minimum eigenvalues are recomputed from the
    /// returned variable values, and an "optimal" claim is downgraded to
    /// numerical failure when they exceed the contract tolerances
    /// (`1e−6·scale` for equalities, `−1e−7·scale` for PSD blocks, where
    /// `scale = 1 + max data magnitude`).
    pub fn solve(&self, adapter: &dyn SolverAdapter<T>) -> SdpSolution<T> {
        let conic = self.to_conic();
        let fail = |msg: String| SdpSolution {
            status: SdpStatus::NumericalFailure,
            values: BTreeMap::new(),
            objective_value: T::zero(),
            residuals: Residuals {
                primal_eq: T::zero(),
                min_psd_eig: T::zero(),
            },
            diagnostics: msg,
        };
        let sol = match adapter.solve_conic(&conic) {
            Ok(s) => s,
            Err(e) => return fail(format!("adapter failure: {}", e)),
        };
        match sol.status {
            RawStatus::PrimalInfeasible => {
                return SdpSolution {
                    status: SdpStatus::Infeasible,
                    values: BTreeMap::new(),
                    objective_value: T::zero(),
                    residuals: Residuals {
                        primal_eq: T::zero(),
                        min_psd_eig: T::zero(),
                    },
                    diagnostics: format!("infeasible after {} iterations", sol.iterations),
                }
            }
            RawStatus::DualInfeasible => {
                return SdpSolution {
                    status: SdpStatus::Unbounded,
                    values: BTreeMap::new(),
                    objective_value: T::zero(),
                    residuals: Residuals {
                        primal_eq: T::zero(),
                        min_psd_eig: T::zero(),
                    },
                    diagnostics: format!("unbounded after {} iterations", sol.iterations),
                }
            }
            RawStatus::Failed(msg) => return fail(format!("solver failed: {}", msg)),
            RawStatus::Solved => {}
        }
        if sol.x.len() != self.num_scalars {
            return fail(format!(
                "adapter returned {} scalars, expected {}",
                sol.x.len(),
                self.num_scalars
            ));
        }

        let values = self.unpack(&sol.x);
        let mut primal_eq = T::zero();
        for c in &self.equalities {
            let r = c.expr.eval(&values);
            if r.nrows() > 0 && r.ncols() > 0 {
                primal_eq = primal_eq.max(r.amax());
            }
        }
        let mut min_psd_eig = T::zero();
        let mut first = true;
        for c in &self.psd_blocks {
            let m = c.expr.eval(&values);
            let sym = SymMat::new(m).expect("PSD block evaluates square and finite");
            let me = sym.min_eig();
            if first || me < min_psd_eig {
                min_psd_eig = me;
                first = false;
            }
        }
        let objective_value = self
            .objective
            .as_ref()
            .map(|o| o.expr.eval(&values).trace())
            .unwrap_or_else(T::zero);

        let scale = self.data_scale();
        let eq_ok = primal_eq <= T::c(1e-6) * scale;
        let psd_ok = min_psd_eig >= -T::c(1e-7) * scale;
        let status = if eq_ok && psd_ok {
            SdpStatus::Optimal
        } else {
            SdpStatus::NumericalFailure
        };
        let named: BTreeMap<String, Mat<T>> = self
            .vars
            .iter()
            .zip(values.iter())
            .map(|(v, m)| (v.name.clone(), m.clone()))
            .collect();
        SdpSolution {
            status,
            values: named,
            objective_value,
            residuals: Residuals {
                primal_eq,
                min_psd_eig,
            },
            diagnostics: format!(
                "solved in {} iterations; verified residuals: eq {:?}, psd {:?} (scale {:?})",
                sol.iterations,
                primal_eq.to_f64(),
                min_psd_eig.to_f64(),
                scale.to_f64()
            ),
        }
    }
}

// ---------------------------------------------------------------------------
// Clarabel backend
// ---------------------------------------------------------------------------

/// Interior-point backend wrapping Clarabel with configurable tolerances.
#[derive(Clone, Debug)]
pub struct ClarabelAdapter {
    /// Duality-gap and feasibility tolerance (default `1e−8`).
    pub tol: f64,
    pub max_iter: u32,
}

impl Default for ClarabelAdapter {
    fn default() -> Self {
        ClarabelAdapter {
            tol: 1e-8,
            max_iter: 200,
        }
    }
}

impl ClarabelAdapter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_tolerance(tol: f64) -> Self {
        ClarabelAdapter {
            tol,
            ..Self::default()
        }
    }
}

/// Build a compressed-sparse-column matrix from triplets (duplicates sum).
fn csc_from_triplets<T: Scalar + clarabel::algebra::FloatT>(
    rows: usize,
    cols: usize,
    triplets: &[(usize, usize, T)],
) -> clarabel::algebra::CscMatrix<T> {
    let mut entries: Vec<(usize, usize, T)> = triplets.to_vec();
    entries.sort_by_key(|&(r, c, _)| (c, r));
    // Merge duplicates (same row and column) by summing their values.
    let mut merged: Vec<(usize, usize, T)> = Vec::with_capacity(entries.len());
    for (r, c, v) in entries {
        match merged.last_mut() {
            Some(last) if last.0 == r && last.1 == c => last.2 += v,
            _ => merged.push((r, c, v)),
        }
    }
    let mut colptr = vec![0usize; cols + 1];
    for &(_, c, _) in &merged {
        colptr[c + 1] += 1;
    }
    for ci in 0..cols {
        colptr[ci + 1] += colptr[ci];
    }
    let rowval: Vec<usize> = merged.iter().map(|&(r, _, _)| r).collect();
    let nzval: Vec<T> = merged.iter().map(|&(_, _, v)| v).collect();
    clarabel::algebra::CscMatrix::new(rows, cols, colptr, rowval, nzval)
}

impl<T> SolverAdapter<T> for ClarabelAdapter
where
    T: Scalar + clarabel::algebra::FloatT,
{
    fn solve_conic(&self, p: &ConicProblem<T>) -> Result<ConicSolution<T>, String> {
        use clarabel::solver::{
            DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
        };
        let n = p.num_vars;
        let rows = p.num_rows();
        let pmat = clarabel::algebra::CscMatrix::<T>::zeros((n, n));
        let a = csc_from_triplets(rows, n, &p.a_triplets);
        let b: Vec<T> = p.b.clone();
        let cones: Vec<SupportedConeT<T>> = p
            .cones
            .iter()
            .map(|c| match *c {
                ConeSpec::Zero(len) => SupportedConeT::ZeroConeT(len),
                ConeSpec::PsdTriangle(d) => SupportedConeT::PSDTriangleConeT(d),
            })
            .collect();
        let settings = DefaultSettings {
            verbose: false,
            max_iter: self.max_iter,
            tol_gap_abs: T::c(self.tol),
            tol_gap_rel: T::c(self.tol),
            tol_feas: T::c(self.tol),
            ..Default::default()
        };
        let mut solver = DefaultSolver::new(&pmat, &p.q, &a, &b, &cones, settings)
            .map_err(|e| format!("solver setup failed: {:?}", e))?;
        solver.solve();
        let status = match solver.solution.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => RawStatus::Solved,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                RawStatus::PrimalInfeasible
            }
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
                RawStatus::DualInfeasible
            }
            other => RawStatus::Failed(format!("{:?}", other)),
        };
        Ok(ConicSolution {
            status,
            x: solver.solution.x.clone(),
            iterations: solver.solution.iterations,
        })
    }
}
