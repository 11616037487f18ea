//! Dense linear-algebra and statistics kernels shared by all modules: Hankel
//! construction, Moore–Penrose pseudoinverse, Kronecker products,
//! symmetric-eigenvalue and PSD utilities, and the chi-square inverse CDF.
//!
//! Everything operates on [`Mat`]/[`SymMat`] values and is a pure function of
//! its inputs; no shared mutable state anywhere.

use crate::{Mat, Scalar, Vect};
use thiserror::Error;

/// Errors raised by the matrix kernels.
#[derive(Debug, Error)]
pub enum MatError {
    /// Shapes or lengths do not fit the requested operation.
    #[error("dimension error: {0}")]
    Dimension(String),
    /// Input is outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// A NaN or infinity was passed to a public constructor.
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
}

/// Reject NaN/Inf entries; returns the offending position.
pub fn check_finite<T: Scalar>(m: &Mat<T>) -> Result<(), MatError> {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if !m[(i, j)].is_finite() {
                return Err(MatError::NonFinite { row: i, col: j });
            }
        }
    }
    Ok(())
}

/// Build a matrix from rows, validating rectangularity and finiteness.
pub fn from_rows<T: Scalar>(rows: &[Vec<T>]) -> Result<Mat<T>, MatError> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    for (i, r) in rows.iter().enumerate() {
        if r.len() != ncols {
            return Err(MatError::Dimension(format!(
                "row {} has {} entries, expected {}",
                i,
                r.len(),
                ncols
            )));
        }
    }
    let m = Mat::from_fn(nrows, ncols, |i, j| rows[i][j]);
    check_finite(&m)?;
    Ok(m)
}

/// Row-major nested-array view of a matrix (the JSON wire layout).
pub fn to_rows<T: Scalar>(m: &Mat<T>) -> Vec<Vec<T>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Build a column vector from a slice, validating finiteness.
pub fn vec_from<T: Scalar>(v: &[T]) -> Result<Vect<T>, MatError> {
    for (i, x) in v.iter().enumerate() {
        if !x.is_finite() {
            return Err(MatError::NonFinite { row: i, col: 0 });
        }
    }
    Ok(Vect::from_column_slice(v))
}

// ---------------------------------------------------------------------------
// Symmetric matrices
// ---------------------------------------------------------------------------

/// Square matrix stored exactly symmetric: construction averages `(M + Mᵀ)/2`
/// so that downstream PSD checks never see asymmetry drift.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMat<T: Scalar>(Mat<T>);

impl<T: Scalar> SymMat<T> {
    /// Symmetrize and store. Errors on non-square or non-finite input.
    pub fn new(m: Mat<T>) -> Result<Self, MatError> {
        if m.nrows() != m.ncols() {
            return Err(MatError::Dimension(format!(
                "symmetric matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        check_finite(&m)?;
        let half = T::c(0.5);
        let sym = (&m + m.transpose()) * half;
        Ok(SymMat(sym))
    }

    pub fn identity(n: usize) -> Self {
        SymMat(Mat::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        SymMat(Mat::zeros(n, n))
    }

    /// `s · I_n`.
    pub fn scaled_identity(n: usize, s: T) -> Self {
        SymMat(Mat::identity(n, n) * s)
    }

    pub fn from_diagonal(d: &[T]) -> Self {
        SymMat(Mat::from_diagonal(&Vect::from_column_slice(d)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_mat(&self) -> &Mat<T> {
        &self.0
    }

    pub fn into_mat(self) -> Mat<T> {
        self.0
    }

    /// Eigenvalues in ascending order (symmetric eigensolver).
    pub fn eigenvalues(&self) -> Vec<T> {
        if self.dim() == 0 {
            return Vec::new();
        }
        let eig = self.0.clone().symmetric_eigen();
        let mut vals: Vec<T> = eig.eigenvalues.iter().copied().collect();
        vals.sort_by(|a, b| a.partial_cmp(b).expect("eigenvalues are finite"));
        vals
    }

    pub fn min_eig(&self) -> T {
        self.eigenvalues().first().copied().unwrap_or_else(T::zero)
    }

    pub fn max_eig(&self) -> T {
        self.eigenvalues().last().copied().unwrap_or_else(T::zero)
    }

    /// PSD test: `min_eig ≥ −tol·(1 + max|eig|)`.
    pub fn is_psd(&self, tol: T) -> bool {
        let vals = self.eigenvalues();
        if vals.is_empty() {
            return true;
        }
        let min = vals[0];
        let amax = vals.iter().fold(
            T::zero(),
            |acc, v| if v.abs() > acc { v.abs() } else { acc },
        );
        min >= -tol * (T::one() + amax)
    }

    /// Symmetric PSD square root `R` with `R² = M`; errors on indefinite input.
    pub fn sqrt_psd(&self) -> Result<SymMat<T>, MatError> {
        let n = self.dim();
        if n == 0 {
            return Ok(SymMat::zeros(0));
        }
        let eig = self.0.clone().symmetric_eigen();
        let amax =
            eig.eigenvalues.iter().fold(
                T::zero(),
                |acc, v| if v.abs() > acc { v.abs() } else { acc },
            );
        let tol = T::c(1e-10) * (T::one() + amax);
        let mut d = Vect::zeros(n);
        for i in 0..n {
            let v = eig.eigenvalues[i];
            if v < -tol {
                return Err(MatError::Domain(format!(
                    "matrix is indefinite: eigenvalue {:?} below -{:?}",
                    v.to_f64().unwrap_or(f64::NAN),
                    tol.to_f64().unwrap_or(f64::NAN)
                )));
            }
            d[i] = if v > T::zero() { v.sqrt() } else { T::zero() };
        }
        let q = eig.eigenvectors;
        let root = &q * Mat::from_diagonal(&d) * q.transpose();
        SymMat::new(root)
    }
}

impl<T: Scalar> std::ops::Deref for SymMat<T> {
    type Target = Mat<T>;
    fn deref(&self) -> &Mat<T> {
        &self.0
    }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eig<T: Scalar>(m: &SymMat<T>) -> T {
    m.min_eig()
}

/// Largest eigenvalue of a symmetric matrix.
pub fn max_eig<T: Scalar>(m: &SymMat<T>) -> T {
    m.max_eig()
}

/// PSD test with relative tolerance: `min_eig ≥ −tol·(1 + max|eig|)`.
pub fn is_psd<T: Scalar>(m: &SymMat<T>, tol: T) -> bool {
    m.is_psd(tol)
}

/// Symmetric PSD square root (see [`SymMat::sqrt_psd`]).
pub fn sqrtm_psd<T: Scalar>(m: &SymMat<T>) -> Result<SymMat<T>, MatError> {
    m.sqrt_psd()
}

// ---------------------------------------------------------------------------
// Hankel / pseudoinverse / projector / Kronecker
// ---------------------------------------------------------------------------

/// Block-Hankel matrix of a vector signal: block `(r, c)` is
/// `signal[start + r + c]`, producing a `(σ·depth) × width` matrix where `σ`
/// is the signal dimension. `depth = 1` gives the plain row-of-columns form.
pub fn hankel<T: Scalar>(
    signal: &[Vect<T>],
    start: usize,
    depth: usize,
    width: usize,
) -> Result<Mat<T>, MatError> {
    if depth == 0 || width == 0 {
        return Err(MatError::Dimension(
            "hankel depth and width must be positive".into(),
        ));
    }
    let needed = start + depth + width - 1;
    if needed > signal.len() {
        return Err(MatError::Dimension(format!(
            "hankel needs {} samples (start {} + depth {} + width {} - 1) but signal has {}",
            needed,
            start,
            depth,
            width,
            signal.len()
        )));
    }
    let sigma = signal.first().map_or(0, Vect::len);
    for (k, v) in signal.iter().enumerate() {
        if v.len() != sigma {
            return Err(MatError::Dimension(format!(
                "signal sample {} has dim {}, expected {}",
                k,
                v.len(),
                sigma
            )));
        }
    }
    let mut m = Mat::zeros(sigma * depth, width);
    for r in 0..depth {
        for c in 0..width {
            let v = &signal[start + r + c];
            for i in 0..sigma {
                m[(r * sigma + i, c)] = v[i];
            }
        }
    }
    Ok(m)
}

/// Default relative singular-value cutoff: `max(rows, cols) · ε_machine`.
fn default_rel_cutoff<T: Scalar>(rows: usize, cols: usize) -> T {
    T::from_count(rows.max(cols)) * T::default_epsilon()
}

/// Moore–Penrose pseudoinverse via SVD. Singular values below
/// `tol · σ_max` (relative cutoff, default `max(rows,cols)·ε`) are treated as
/// zero; the zero matrix maps to the zero pseudoinverse.
pub fn pinv<T: Scalar>(m: &Mat<T>, tol: Option<T>) -> Mat<T> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Mat::zeros(m.ncols(), m.nrows());
    }
    let rel = tol.unwrap_or_else(|| default_rel_cutoff::<T>(m.nrows(), m.ncols()));
    let svd = m.clone().svd(true, true);
    let smax = svd
        .singular_values
        .iter()
        .fold(T::zero(), |acc, s| if *s > acc { *s } else { acc });
    let eps = rel * smax;
    svd.pseudo_inverse(eps)
        .expect("cutoff is nonnegative by construction")
}

/// Numerical rank at the same relative cutoff convention as [`pinv`].
pub fn rank<T: Scalar>(m: &Mat<T>, tol: Option<T>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let rel = tol.unwrap_or_else(|| default_rel_cutoff::<T>(m.nrows(), m.ncols()));
    let svd = m.clone().svd(false, false);
    let smax = svd
        .singular_values
        .iter()
        .fold(T::zero(), |acc, s| if *s > acc { *s } else { acc });
    if smax == T::zero() {
        return 0;
    }
    svd.rank(rel * smax)
}

/// Orthogonal projector `Γ = I − S†S` onto the null space of `S`, assembled
/// from the right singular subspace so that symmetry and idempotency hold to
/// machine precision. `trace(Γ) = cols(S) − rank(S)`.
pub fn consistency_projector<T: Scalar>(s: &Mat<T>, tol: Option<T>) -> SymMat<T> {
    let t = s.ncols();
    if t == 0 {
        return SymMat::zeros(0);
    }
    if s.nrows() == 0 {
        return SymMat::identity(t);
    }
    let rel = tol.unwrap_or_else(|| default_rel_cutoff::<T>(s.nrows(), s.ncols()));
    let svd = s.clone().svd(false, true);
    let vt = svd.v_t.expect("requested v_t");
    let smax = svd
        .singular_values
        .iter()
        .fold(T::zero(), |acc, sv| if *sv > acc { *sv } else { acc });
    let cut = rel * smax;
    let mut gamma = Mat::identity(t, t);
    for (idx, sv) in svd.singular_values.iter().enumerate() {
        if *sv > cut && smax > T::zero() {
            let v = vt.row(idx).transpose();
            gamma -= &v * v.transpose();
        }
    }
    SymMat::new(gamma).expect("projector is square and finite")
}

/// Kronecker product: block `(i, j)` equals `A_ij · B`.
pub fn kron<T: Scalar>(a: &Mat<T>, b: &Mat<T>) -> Mat<T> {
    a.kronecker(b)
}

/// Spectral norm (largest singular value); `0` for empty matrices.
pub fn spectral_norm<T: Scalar>(m: &Mat<T>) -> T {
    if m.nrows() == 0 || m.ncols() == 0 {
        return T::zero();
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(T::zero(), |acc, s| if *s > acc { *s } else { acc })
}

// ---------------------------------------------------------------------------
// Chi-square inverse CDF
// ---------------------------------------------------------------------------

/// Natural log of the gamma function (Lanczos approximation, g = 7).
// The published coefficient table carries more digits than f64 resolves;
// keep it verbatim rather than hand-rounding.
#[allow(clippy::excessive_precision)]
fn ln_gamma<T: Scalar>(x: T) -> T {
    const COEF: [f64; 8] = [
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < T::c(0.5) {
        // reflection: Γ(x)Γ(1−x) = π / sin(πx)
        let pi = T::pi();
        return (pi / (pi * x).sin()).ln() - ln_gamma(T::one() - x);
    }
    let xm = x - T::one();
    let mut acc = T::c(0.99999999999980993);
    for (i, c) in COEF.iter().enumerate() {
        acc += T::c(*c) / (xm + T::from_count(i + 1));
    }
    let t = xm + T::c(7.5);
    let two_pi = T::two_pi();
    (two_pi.sqrt() * acc).ln() + (xm + T::c(0.5)) * t.ln() - t
}

/// Regularized lower incomplete gamma `P(a, x)`: series for `x < a + 1`,
/// Lentz continued fraction for the upper tail otherwise.
fn reg_lower_gamma<T: Scalar>(a: T, x: T) -> T {
    if x <= T::zero() {
        return T::zero();
    }
    let eps = T::default_epsilon();
    let log_prefix = -x + a * x.ln() - ln_gamma(a);
    if x < a + T::one() {
        // series expansion of P
        let mut ap = a;
        let mut del = T::one() / a;
        let mut sum = del;
        for _ in 0..1000 {
            ap += T::one();
            del *= x / ap;
            sum += del;
            if del.abs() < sum.abs() * eps {
                break;
            }
        }
        sum * log_prefix.exp()
    } else {
        // modified Lentz continued fraction for Q = 1 − P
        let fpmin = T::c(1e-30);
        let mut b = x + T::one() - a;
        let mut c = T::one() / fpmin;
        let mut d = T::one() / b;
        let mut h = d;
        for i in 1..=1000 {
            let an = -T::from_count(i) * (T::from_count(i) - a);
            b += T::c(2.0);
            d = an * d + b;
            if d.abs() < fpmin {
                d = fpmin;
            }
            c = b + an / c;
            if c.abs() < fpmin {
                c = fpmin;
            }
            d = T::one() / d;
            let del = d * c;
            h *= del;
            if (del - T::one()).abs() < eps {
                break;
            }
        }
        T::one() - log_prefix.exp() * h
    }
}

/// Inverse CDF of the chi-square distribution with `dof` degrees of freedom.
///
/// Returns `x` with `P(dof/2, x/2) = q` to absolute `1e−10` (at `f64`),
/// solved by Newton iterations on the regularized incomplete gamma with a
/// bracketing bisection fallback. `q` must lie in `[0, 1)`.
pub fn chi2_quantile<T: Scalar>(dof: usize, q: T) -> Result<T, MatError> {
    if dof == 0 {
        return Err(MatError::Dimension(
            "chi-square needs at least 1 degree of freedom".into(),
        ));
    }
    if q < T::zero() || q >= T::one() {
        return Err(MatError::Domain(format!(
            "quantile probability must lie in [0, 1), got {:?}",
            q.to_f64().unwrap_or(f64::NAN)
        )));
    }
    if q == T::zero() {
        return Ok(T::zero());
    }
    let a = T::from_count(dof) * T::c(0.5);
    let cdf = |x: T| reg_lower_gamma(a, x * T::c(0.5));
    // log of the chi-square pdf at x > 0
    let ln_pdf = |x: T| {
        let half = T::c(0.5);
        (a - T::one()) * (x * half).ln() - x * half - ln_gamma(a) - T::c(2.0).ln()
    };

    // bracket the root: cdf(lo) < q <= cdf(hi)
    let mut lo = T::zero();
    let mut hi = T::from_count(dof);
    for _ in 0..400 {
        if cdf(hi) >= q {
            break;
        }
        lo = hi;
        hi *= T::c(2.0);
    }

    let tol_cdf = T::c(1e-12).max(T::default_epsilon() * T::c(32.0));
    let mut x = (lo + hi) * T::c(0.5);
    for _ in 0..200 {
        let f = cdf(x) - q;
        if f > T::zero() {
            hi = x;
        } else {
            lo = x;
        }
        if f.abs() <= tol_cdf {
            return Ok(x);
        }
        let step = f / ln_pdf(x).exp();
        let mut next = x - step;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = (lo + hi) * T::c(0.5);
        }
        if (hi - lo).abs() <= T::default_epsilon() * (T::one() + hi.abs()) {
            return Ok(next);
        }
        x = next;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn vecs(xs: &[f64]) -> Vec<Vect<f64>> {
        xs.iter().map(|&x| Vect::from_column_slice(&[x])).collect()
    }

    fn random_mat(rng: &mut ChaCha12Rng, r: usize, c: usize) -> Mat<f64> {
        Mat::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn hankel_scalar_layout() {
        let h = hankel(&vecs(&[1.0, 2.0, 3.0, 4.0]), 0, 2, 3).unwrap();
        let expect = from_rows(&[vec![1.0, 2.0, 3.0], vec![2.0, 3.0, 4.0]]).unwrap();
        assert_eq!(h, expect);
    }

    #[test]
    fn hankel_depth_one_is_shifted_row() {
        let sig: Vec<f64> = (0..15).map(|k| k as f64).collect();
        let h = hankel(&vecs(&sig), 1, 1, 14).unwrap();
        assert_eq!(h.nrows(), 1);
        for c in 0..14 {
            assert_eq!(h[(0, c)], (c + 1) as f64);
        }
    }

    #[test]
    fn hankel_constant_signal_has_rank_one() {
        let h = hankel(&vecs(&[3.0; 10]), 0, 3, 6).unwrap();
        assert_eq!(rank(&h, None), 1);
    }

    #[test]
    fn hankel_block_rows_follow_signal_dim() {
        let sig: Vec<Vect<f64>> = (0..5)
            .map(|k| Vect::from_column_slice(&[k as f64, 10.0 + k as f64]))
            .collect();
        let h = hankel(&sig, 0, 2, 3).unwrap();
        assert_eq!((h.nrows(), h.ncols()), (4, 3));
        assert_eq!(h[(0, 1)], 1.0);
        assert_eq!(h[(1, 1)], 11.0);
        assert_eq!(h[(2, 1)], 2.0);
        assert_eq!(h[(3, 1)], 12.0);
    }

    #[test]
    fn hankel_reports_required_vs_available() {
        let err = hankel(&vecs(&[1.0, 2.0]), 0, 2, 3).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("needs 4"), "{msg}");
        assert!(msg.contains("has 2"), "{msg}");
    }

    fn penrose_ok(m: &Mat<f64>, p: &Mat<f64>) {
        let tol = 1e-10;
        assert!((m * p * m - m).norm() <= tol * (1.0 + m.norm()));
        assert!((p * m * p - p).norm() <= tol * (1.0 + p.norm()));
        let mp = m * p;
        let pm = p * m;
        assert!((&mp - mp.transpose()).norm() <= tol * (1.0 + mp.norm()));
        assert!((&pm - pm.transpose()).norm() <= tol * (1.0 + pm.norm()));
    }

    #[test]
    fn pinv_identity() {
        let i2 = Mat::<f64>::identity(2, 2);
        assert_relative_eq!(pinv(&i2, None), i2, epsilon = 1e-14);
    }

    #[test]
    fn pinv_wide_row() {
        let s = from_rows(&[vec![1.0, 0.0]]).unwrap();
        let p = pinv(&s, None);
        assert_relative_eq!(
            p,
            from_rows(&[vec![1.0], vec![0.0]]).unwrap(),
            epsilon = 1e-14
        );
        let proj = Mat::identity(2, 2) - &p * &s;
        assert_relative_eq!(
            proj,
            Mat::from_diagonal(&Vect::from_column_slice(&[0.0, 1.0])),
            epsilon = 1e-14
        );
    }

    #[test]
    fn pinv_satisfies_penrose_on_random_wide_matrix() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let m = random_mat(&mut rng, 4, 15);
        assert_eq!(rank(&m, None), 4);
        penrose_ok(&m, &pinv(&m, None));
    }

    #[test]
    fn pinv_of_zero_is_zero() {
        let z = Mat::<f64>::zeros(3, 5);
        assert_eq!(pinv(&z, None), Mat::<f64>::zeros(5, 3));
    }

    #[test]
    fn pinv_rank_deficient() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let a = random_mat(&mut rng, 4, 2);
        let b = random_mat(&mut rng, 2, 6);
        let m = a * b; // rank 2
        assert_eq!(rank(&m, None), 2);
        penrose_ok(&m, &pinv(&m, None));
    }

    #[test]
    fn projector_of_identity_is_zero() {
        let g = consistency_projector(&Mat::<f64>::identity(4, 4), None);
        assert!(g.as_mat().norm() <= 1e-12);
    }

    #[test]
    fn projector_of_wide_row() {
        let s = from_rows(&[vec![1.0, 0.0]]).unwrap();
        let g = consistency_projector(&s, None);
        assert_relative_eq!(
            g.as_mat().clone(),
            Mat::from_diagonal(&Vect::from_column_slice(&[0.0, 1.0])),
            epsilon = 1e-14
        );
    }

    #[test]
    fn projector_properties_random() {
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        for &(r, t) in &[(3usize, 15usize), (4, 15), (2, 8), (5, 9)] {
            let s = random_mat(&mut rng, r, t);
            let g = consistency_projector(&s, None);
            let gm = g.as_mat();
            assert!((gm * gm - gm).norm() <= 1e-9, "idempotent");
            assert!((&s * gm).norm() <= 1e-9, "S annihilates its null projector");
            assert!((gm - gm.transpose()).norm() <= 1e-12, "symmetric");
            let tr = gm.trace();
            let nullity = (t - rank(&s, None)) as f64;
            assert!(
                (tr - nullity).abs() <= 1e-8,
                "trace {} vs nullity {}",
                tr,
                nullity
            );
        }
    }

    #[test]
    fn kron_identities() {
        let i2 = Mat::<f64>::identity(2, 2);
        let i3 = Mat::<f64>::identity(3, 3);
        assert_eq!(kron(&i2, &i3), Mat::<f64>::identity(6, 6));

        let p = Mat::from_diagonal(&Vect::from_column_slice(&[1.0, 0.0]));
        let sig = Mat::from_diagonal(&Vect::from_column_slice(&[4.0, 9.0]));
        let k = kron(&p, &sig);
        assert_eq!(
            k,
            Mat::from_diagonal(&Vect::from_column_slice(&[4.0, 9.0, 0.0, 0.0]))
        );
    }

    #[test]
    fn kron_eigenvalues_are_products() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let a = random_mat(&mut rng, 3, 3);
        let b = random_mat(&mut rng, 2, 2);
        let sa = SymMat::new(&a * a.transpose()).unwrap();
        let sb = SymMat::new(&b * b.transpose()).unwrap();
        let mut products: Vec<f64> = sa
            .eigenvalues()
            .iter()
            .flat_map(|x| sb.eigenvalues().iter().map(|y| x * y).collect::<Vec<_>>())
            .collect();
        products.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let kp = SymMat::new(kron(sa.as_mat(), sb.as_mat())).unwrap();
        let got = kp.eigenvalues();
        for (g, p) in got.iter().zip(products.iter()) {
            assert_relative_eq!(g, p, epsilon = 1e-9, max_relative = 1e-9);
        }
    }

    #[test]
    fn kron_mixed_product_property() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        for _ in 0..5 {
            let a = random_mat(&mut rng, 2, 3);
            let b = random_mat(&mut rng, 3, 2);
            let c = random_mat(&mut rng, 3, 2);
            let d = random_mat(&mut rng, 2, 4);
            let lhs = kron(&a, &b) * kron(&c, &d);
            let rhs = kron(&(&a * &c), &(&b * &d));
            assert!((lhs - &rhs).norm() <= 1e-10 * (1.0 + rhs.norm()));
        }
    }

    #[test]
    fn spectral_norm_known_values() {
        let diag = Mat::from_diagonal(&Vect::from_vec(vec![3.0, -4.0]));
        assert_relative_eq!(spectral_norm(&diag), 4.0, epsilon = 1e-12);
        let nilpotent = from_rows(&[vec![0.0, 2.0], vec![0.0, 0.0]]).unwrap();
        assert_relative_eq!(spectral_norm(&nilpotent), 2.0, epsilon = 1e-12);
        assert_eq!(spectral_norm(&Mat::<f64>::zeros(0, 3)), 0.0);
        // Never exceeds the Frobenius norm, and dominates column norms.
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let m = random_mat(&mut rng, 4, 3);
        let s = spectral_norm(&m);
        assert!(s <= m.norm() + 1e-12);
        assert!(s + 1e-12 >= m.column(0).norm());
    }

    #[test]
    fn symmat_enforces_symmetry() {
        let m = from_rows(&[vec![1.0, 2.0], vec![0.0, 3.0]]).unwrap();
        let s = SymMat::new(m).unwrap();
        assert_eq!(s.as_mat()[(0, 1)], 1.0);
        assert_eq!(s.as_mat()[(1, 0)], 1.0);
    }

    #[test]
    fn symmat_rejects_nonfinite() {
        let m = Mat::from_fn(2, 2, |i, j| if i == j { f64::NAN } else { 0.0 });
        assert!(SymMat::new(m).is_err());
    }

    #[test]
    fn eig_helpers() {
        let d = SymMat::from_diagonal(&[1.0, 2.0]);
        assert_eq!(min_eig(&d), 1.0);
        assert_eq!(max_eig(&d), 2.0);
        assert!(is_psd(&d, 1e-12));

        let off = SymMat::new(from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap()).unwrap();
        assert_relative_eq!(min_eig(&off), -1.0, epsilon = 1e-12);
        assert!(!is_psd(&off, 1e-12));
    }

    #[test]
    fn sqrtm_examples() {
        let s = SymMat::scaled_identity(2, 0.01);
        let r = sqrtm_psd(&s).unwrap();
        assert_relative_eq!(
            r.as_mat().clone(),
            Mat::identity(2, 2) * 0.1,
            epsilon = 1e-12
        );
        assert_relative_eq!(r.max_eig(), 0.1, epsilon = 1e-12);

        let d = SymMat::from_diagonal(&[4.0, 9.0]);
        let rd = sqrtm_psd(&d).unwrap();
        assert_relative_eq!(
            rd.as_mat().clone(),
            Mat::from_diagonal(&Vect::from_column_slice(&[2.0, 3.0])),
            epsilon = 1e-12
        );
    }

    #[test]
    fn sqrtm_random_psd_roundtrip() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        let a = random_mat(&mut rng, 3, 3);
        let m = SymMat::new(&a * a.transpose()).unwrap();
        let r = sqrtm_psd(&m).unwrap();
        let back = r.as_mat() * r.as_mat();
        assert!((back - m.as_mat()).norm() <= 1e-9 * (1.0 + m.as_mat().norm()));
        // two-norm of the root equals sqrt of the largest eigenvalue
        assert_relative_eq!(r.max_eig() * r.max_eig(), m.max_eig(), max_relative = 1e-10);
    }

    #[test]
    fn sqrtm_rejects_indefinite() {
        let m = SymMat::from_diagonal(&[1.0, -1.0]);
        assert!(matches!(sqrtm_psd(&m), Err(MatError::Domain(_))));
    }

    // Frozen reference quantiles (independently computed inverse CDF values).
    const CHI2_REFS: [(usize, f64, f64); 8] = [
        (2, 0.5, 1.386294361119891),
        (2, 0.9, 4.605170185988092),
        (2, 0.99, 9.21034037197618),
        (2, 0.999, 13.815510557964274),
        (1, 0.95, 3.841458820694124),
        (30, 0.999, 59.70306430442994),
        (30, 0.9, 40.2560237387118),
        (60, 0.999, 99.60723306984946),
    ];

    #[test]
    fn chi2_matches_frozen_references() {
        for &(dof, q, expect) in &CHI2_REFS {
            let got = chi2_quantile(dof, q).unwrap();
            assert!(
                (got - expect).abs() <= 1e-8,
                "chi2({dof}, {q}) = {got}, expected {expect}"
            );
        }
    }

    #[test]
    fn chi2_two_dof_closed_form() {
        for q in [0.1f64, 0.5, 0.9, 0.99, 0.999, 0.9999] {
            let got = chi2_quantile(2, q).unwrap();
            let closed = -2.0 * (1.0 - q).ln();
            assert!((got - closed).abs() <= 1e-9, "q={q}: {got} vs {closed}");
        }
    }

    #[test]
    fn chi2_cdf_roundtrip() {
        for &(dof, q, _) in &CHI2_REFS {
            let x = chi2_quantile(dof, q).unwrap();
            let back = reg_lower_gamma(dof as f64 / 2.0, x / 2.0);
            assert!(
                (back - q).abs() <= 1e-9,
                "roundtrip dof={dof} q={q}: {back}"
            );
        }
    }

    #[test]
    fn chi2_monotone_in_q_and_dof() {
        let mut prev = -1.0;
        for i in 0..100 {
            let q = i as f64 / 100.0;
            let x = chi2_quantile(5, q).unwrap();
            assert!(x > prev || (i == 0 && x == 0.0), "monotone in q at {q}");
            prev = x;
        }
        let mut prev = 0.0;
        for dof in 1..=40 {
            let x = chi2_quantile(dof, 0.9).unwrap();
            assert!(x > prev, "monotone in dof at {dof}");
            prev = x;
        }
    }

    #[test]
    fn chi2_domain_errors() {
        assert!(matches!(chi2_quantile(2, 1.0), Err(MatError::Domain(_))));
        assert!(matches!(chi2_quantile(2, 1.5), Err(MatError::Domain(_))));
        assert!(matches!(chi2_quantile(2, -0.1), Err(MatError::Domain(_))));
        assert!(matches!(chi2_quantile(0, 0.5), Err(MatError::Dimension(_))));
        assert_eq!(chi2_quantile(7, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn from_rows_validates() {
        assert!(from_rows(&[vec![1.0, 2.0], vec![3.0]]).is_err());
        assert!(from_rows(&[vec![1.0, f64::INFINITY]]).is_err());
        let m = from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(to_rows(&m), vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
    }
}
