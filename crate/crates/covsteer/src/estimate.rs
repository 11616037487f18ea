//! Maximum-likelihood estimation of the noise realization hidden in recorded
//! data, plus uncertainty quantification for the estimate.
//!
//! A single experiment of length `T` determines the unknown additive noise
//! sequence `Ξ = [ξ_0 … ξ_{T−1}]` only up to the model-free consistency
//! condition `(X_{1,T} − Ξ)Γ = 0`, where `Γ` projects onto the null space of
//! the stacked input/state Hankel matrix. Under Gaussian noise the most
//! likely consistent realization has the closed form `Ξ̂ = X_{1,T}·Γ`
//! ([`mle_noise_analytic`]), independent of the noise covariance. When the
//! covariance `Σ_ξ` is itself unknown, [`mle_noise_dc`] estimates the pair
//! `(Ξ̂, Σ̂_ξ)` by a difference-of-convex program solved with the
//! convex-concave procedure: each iterate is a semidefinite program in which
//! the concave `log det` term is linearized about the previous covariance.
//!
//! The estimation error `ΔΞ = Ξ − Ξ̂` is asymptotically Gaussian with
//! covariance `Σ_Δ = S†S ⊗ Σ_ξ` ([`error_covariance`]); [`uq_bound_general`]
//! and [`uq_bound_mle`] turn that into a radius `ρ` such that `‖ΔΞ‖₂ ≤ ρ`
//! with probability at least `1 − δ`. The bound feeds directly into robust
//! controller synthesis.

use crate::matlib::{self, MatError, SymMat};
use crate::sdpcore::{MatExpr, SdpError, SdpProblem, SdpStatus, SolverAdapter, VarKind};
use crate::sysdata::HankelData;
use crate::{Mat, Scalar};
use serde::{Deserialize, Serialize};

/// Errors from estimation and uncertainty quantification.
#[derive(Debug, thiserror::Error)]
pub enum EstimateError {
    #[error(transparent)]
    Mat(#[from] MatError),
    /// Invalid argument or a mathematically undefined request.
    #[error("{0}")]
    Domain(String),
    /// An SDP iterate of the convex-concave procedure failed; the partial
    /// report records the objective trace up to the failure.
    #[error("SDP iterate {iteration} of the convex-concave procedure failed: {status}")]
    Solver {
        iteration: usize,
        status: String,
        report: CcpReport,
    },
    #[error("deserialization failed: {0}")]
    Serde(String),
}

/// Provenance of the covariance recorded on a [`NoiseEstimate`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SigmaSource {
    /// `Σ_ξ` was supplied by the caller (e.g. from a known disturbance model).
    Known,
    /// `Σ_ξ` was estimated jointly with the realization; the error bound `ρ`
    /// then plugs in the estimate and inherits its sampling error.
    Estimated,
}

impl SigmaSource {
    fn as_str(self) -> &'static str {
        match self {
            SigmaSource::Known => "known",
            SigmaSource::Estimated => "estimated",
        }
    }
}

/// A noise-realization estimate together with the covariance used, the risk
/// level `δ`, and the two-norm error bound `ρ` for `ΔΞ = Ξ_true − Ξ̂`.
#[derive(Clone, Debug)]
pub struct NoiseEstimate<T: Scalar> {
    /// Estimated realization `Ξ̂`, one column per step (`n×T`).
    pub xi_hat: Mat<T>,
    /// Known or estimated noise covariance `Σ_ξ` (`n×n`).
    pub sigma_xi: SymMat<T>,
    pub sigma_source: SigmaSource,
    /// Risk level: `‖ΔΞ‖₂ ≤ ρ` holds with probability at least `1 − δ`.
    pub delta: T,
    /// Two-norm radius of the uncertainty ball around `xi_hat`.
    pub rho: T,
}

#[derive(Serialize, Deserialize)]
struct NoiseEstimateWire<T> {
    #[serde(rename = "Xi_hat")]
    xi_hat: Vec<Vec<T>>,
    #[serde(rename = "Sigma_xi")]
    sigma_xi: Vec<Vec<T>>,
    sigma_source: String,
    delta: T,
    rho: T,
}

impl<T: Scalar> NoiseEstimate<T>
where
    T: Serialize + for<'de> Deserialize<'de>,
{
    pub fn to_json(&self) -> String {
        let wire = NoiseEstimateWire {
            xi_hat: matlib::to_rows(&self.xi_hat),
            sigma_xi: matlib::to_rows(self.sigma_xi.as_mat()),
            sigma_source: self.sigma_source.as_str().to_string(),
            delta: self.delta,
            rho: self.rho,
        };
        serde_json::to_string_pretty(&wire).expect("estimate serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, EstimateError> {
        let wire: NoiseEstimateWire<T> =
            serde_json::from_str(text).map_err(|e| EstimateError::Serde(e.to_string()))?;
        let sigma_source = match wire.sigma_source.as_str() {
            "known" => SigmaSource::Known,
            "estimated" => SigmaSource::Estimated,
            other => {
                return Err(EstimateError::Serde(format!(
                    "sigma_source must be \"known\" or \"estimated\", got {other:?}"
                )))
            }
        };
        let xi_hat = matlib::from_rows(&wire.xi_hat)?;
        let sigma_xi = SymMat::new(matlib::from_rows(&wire.sigma_xi)?)?;
        if xi_hat.nrows() != sigma_xi.dim() {
            return Err(EstimateError::Domain(format!(
                "Xi_hat has {} rows but Sigma_xi is {0}×{0}-incompatible ({}×{})",
                xi_hat.nrows(),
                sigma_xi.dim(),
                sigma_xi.dim()
            )));
        }
        if !sigma_xi.is_psd(T::c(1e-9)) {
            return Err(EstimateError::Domain(
                "Sigma_xi must be positive semidefinite".to_string(),
            ));
        }
        if wire.rho < T::zero() {
            return Err(EstimateError::Domain("rho must be nonnegative".to_string()));
        }
        check_delta(wire.delta)?;
        Ok(NoiseEstimate {
            xi_hat,
            sigma_xi,
            sigma_source,
            delta: wire.delta,
            rho: wire.rho,
        })
    }
}

/// Convergence report of the convex-concave procedure. `objective_trace`
/// records the true difference-of-convex objective
/// `½·tr(Ξᵀ Σ⁻¹ Ξ) + (T/2)·log det Σ` at the initial point and after every
/// SDP iterate; descent guarantees it is non-increasing (up to solver
/// tolerance).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CcpReport {
    /// Number of SDP iterates solved.
    pub iterations: usize,
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    /// `‖U − Ξᵀ Σ_ξ⁻¹ Ξ‖_F` at the final iterate; near zero because the
    /// semidefinite relaxation of the quadratic term is lossless.
    pub final_slack_gap: f64,
    /// Whether any covariance iterate had to be pushed up to the eigenvalue
    /// floor (`sigma_floor`); indicates a (near-)degenerate noise subspace.
    pub sigma_floored: bool,
}

/// Covariance handling for [`mle_noise_dc`].
#[derive(Clone, Debug)]
pub enum SigmaMode<T: Scalar> {
    /// The covariance is known and held fixed; only `Ξ` is estimated (a
    /// single convex SDP, no iteration). Must be positive definite.
    Known(SymMat<T>),
    /// Estimate the covariance jointly with the realization.
    Estimate,
}

/// Options for the convex-concave procedure.
#[derive(Clone, Debug)]
pub struct CcpOptions<T: Scalar> {
    pub sigma: SigmaMode<T>,
    /// Risk level recorded on the estimate and used for its error bound `ρ`.
    pub delta: T,
    pub max_iters: usize,
    /// Stop when the relative objective decrease falls below this threshold.
    pub objective_tol: f64,
    /// Eigenvalue floor `ε` for covariance iterates: keeps the `log det`
    /// linearization defined when the likelihood pushes `Σ` toward
    /// singularity.
    pub sigma_floor: f64,
}

impl<T: Scalar> Default for CcpOptions<T> {
    fn default() -> Self {
        CcpOptions {
            sigma: SigmaMode::Estimate,
            delta: T::c(1e-3),
            max_iters: 50,
            objective_tol: 1e-7,
            sigma_floor: 1e-6,
        }
    }
}

impl<T: Scalar> CcpOptions<T> {
    /// Joint `(Ξ, Σ_ξ)` estimation at risk level `delta`.
    pub fn joint(delta: T) -> Self {
        CcpOptions {
            delta,
            ..Self::default()
        }
    }

    /// Realization-only estimation with a fixed, known covariance.
    pub fn with_known_sigma(sigma: SymMat<T>, delta: T) -> Self {
        CcpOptions {
            sigma: SigmaMode::Known(sigma),
            delta,
            ..Self::default()
        }
    }
}

fn check_delta<T: Scalar>(delta: T) -> Result<(), EstimateError> {
    if delta <= T::zero() || delta >= T::one() {
        return Err(EstimateError::Domain(format!(
            "risk level delta must lie in (0, 1), got {:?}",
            delta.to_f64()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Maximum-likelihood estimation
// ---------------------------------------------------------------------------

/// Closed-form maximum-likelihood noise realization `Ξ̂ = X_{1,T}·Γ`.
///
/// This is the minimum-Frobenius-norm solution of the consistency condition
/// `(X_{1,T} − Ξ)Γ = 0` and — because the residual freedom is orthogonal to
/// the constraint — also the maximizer of the Gaussian likelihood for *any*
/// positive-definite noise covariance. Satisfies the consistency condition to
/// machine precision since `Γ` is idempotent.
pub fn mle_noise_analytic<T: Scalar>(h: &HankelData<T>) -> Mat<T> {
    &h.x1t * h.gamma.as_mat()
}

/// Frobenius residual `‖(X_{1,T} − Ξ)Γ‖_F` of the consistency condition;
/// admissible noise realizations make it vanish.
pub fn consistency_residual<T: Scalar>(h: &HankelData<T>, xi: &Mat<T>) -> T {
    ((&h.x1t - xi) * h.gamma.as_mat()).norm()
}

/// Wrap the closed-form estimator into a [`NoiseEstimate`] carrying the
/// error bound for a known covariance.
pub fn estimate_analytic<T: Scalar>(
    h: &HankelData<T>,
    sigma_xi: &SymMat<T>,
    delta: T,
) -> Result<NoiseEstimate<T>, EstimateError> {
    check_delta(delta)?;
    if sigma_xi.dim() != h.n {
        return Err(EstimateError::Domain(format!(
            "covariance is {}×{0} but the state dimension is {}",
            sigma_xi.dim(),
            h.n
        )));
    }
    let rho = uq_bound_mle(sigma_xi, h.n, h.horizon, delta)?;
    Ok(NoiseEstimate {
        xi_hat: mle_noise_analytic(h),
        sigma_xi: sigma_xi.clone(),
        sigma_source: SigmaSource::Known,
        delta,
        rho,
    })
}

/// Maximum-likelihood estimation as a difference-of-convex program, solved by
/// the convex-concave procedure.
///
/// Each iterate minimizes `½·tr(U) + (T/2)·tr(Σ_t⁻¹ Σ)` subject to the
/// consistency equality `(X_{1,T} − Ξ)Γ = 0` and the semidefinite constraint
/// `[[Σ, Ξ], [Ξᵀ, U]] ⪰ 0`, which is a lossless relaxation of
/// `U = Ξᵀ Σ⁻¹ Ξ`: minimizing `tr(U)` drives the block constraint active.
/// With [`SigmaMode::Known`] the concave term is constant and a single solve
/// suffices; with [`SigmaMode::Estimate`] the covariance is a variable and
/// the procedure iterates until the objective stalls.
///
/// Covariance iterates are floored at `sigma_floor` (and the report flagged)
/// when the likelihood drives them toward singularity — unavoidable when the
/// noise has fewer degrees of freedom than the state dimension, in which case
/// only the known-covariance path is statistically meaningful.
pub fn mle_noise_dc<T: Scalar>(
    h: &HankelData<T>,
    adapter: &dyn SolverAdapter<T>,
    opts: &CcpOptions<T>,
) -> Result<(NoiseEstimate<T>, CcpReport), EstimateError> {
    check_delta(opts.delta)?;
    if opts.max_iters == 0 {
        return Err(EstimateError::Domain("max_iters must be at least 1".into()));
    }
    let (n, t) = (h.n, h.horizon);
    let known = match &opts.sigma {
        SigmaMode::Known(s) => {
            if s.dim() != n {
                return Err(EstimateError::Domain(format!(
                    "known covariance is {}×{0} but the state dimension is {}",
                    s.dim(),
                    n
                )));
            }
            let eigs = s.eigenvalues();
            let (lo, hi) = (eigs[0], eigs[eigs.len() - 1]);
            if lo <= T::c(1e-12) * (T::one() + hi.abs()) {
                return Err(EstimateError::Domain(
                    "known noise covariance must be positive definite for the \
                     likelihood program; use mle_noise_analytic for singular covariances"
                        .to_string(),
                ));
            }
            Some(s.clone())
        }
        SigmaMode::Estimate => None,
    };

    // Warm start at the closed-form solution; in joint mode, at its sample
    // covariance (floored so the first linearization is defined).
    let mut xi = mle_noise_analytic(h);
    let mut sigma = match &known {
        Some(s) => s.clone(),
        None => {
            let sample = &xi * xi.transpose() * (T::one() / T::from_count(t));
            SymMat::new(sample + Mat::identity(n, n) * T::c(opts.sigma_floor))?
        }
    };
    let mut trace = vec![dc_objective(&xi, &sigma, t)?];
    let mut floored = false;
    let mut converged = false;
    let mut iterations = 0;
    let mut u_final: Option<Mat<T>> = None;

    for iteration in 1..=opts.max_iters {
        let weight = match &known {
            Some(_) => None,
            None => {
                // (T/2)·Σ_t⁻¹, the gradient of the linearized log det term.
                let inv = chol_of(&sigma)?.inverse();
                let scaled = inv * (T::from_count(t) * T::c(0.5));
                Some(SymMat::new(scaled)?.into_mat())
            }
        };
        let sol = dc_iterate(h, known.as_ref(), weight.as_ref(), adapter)?;
        if sol.status != SdpStatus::Optimal {
            return Err(EstimateError::Solver {
                iteration,
                status: format!("{:?} ({})", sol.status, sol.diagnostics),
                report: CcpReport {
                    iterations: iteration - 1,
                    objective_trace: trace,
                    converged: false,
                    final_slack_gap: f64::NAN,
                    sigma_floored: floored,
                },
            });
        }
        iterations = iteration;
        xi = take_value(&sol.values, "Xi")?;
        u_final = Some(take_value(&sol.values, "U")?);
        if known.is_none() {
            let mut next = SymMat::new(take_value(&sol.values, "Sigma")?)?;
            let min = next.min_eig();
            if min < T::c(opts.sigma_floor) {
                let shift = T::c(opts.sigma_floor) - min;
                next = SymMat::new(next.as_mat() + Mat::identity(n, n) * shift)?;
                floored = true;
            }
            sigma = next;
        }
        let f = dc_objective(&xi, &sigma, t)?;
        let prev = *trace.last().expect("trace is seeded");
        trace.push(f);
        if known.is_some() || (prev - f).abs() <= opts.objective_tol * (1.0 + prev.abs()) {
            converged = true;
            break;
        }
    }

    let u = u_final.expect("at least one iterate was solved");
    let gap = slack_gap(&xi, &u, &sigma)?;
    let rho = uq_bound_mle(&sigma, n, t, opts.delta)?;
    let estimate = NoiseEstimate {
        xi_hat: xi,
        sigma_xi: sigma,
        sigma_source: match known {
            Some(_) => SigmaSource::Known,
            None => SigmaSource::Estimated,
        },
        delta: opts.delta,
        rho,
    };
    let report = CcpReport {
        iterations,
        objective_trace: trace,
        converged,
        final_slack_gap: gap,
        sigma_floored: floored,
    };
    Ok((estimate, report))
}

/// Orthonormal basis of the range of a symmetric projector (its eigenvectors
/// with eigenvalue near one).
fn projector_range_basis<T: Scalar>(p: &Mat<T>) -> Mat<T> {
    let eig = p.clone().symmetric_eigen();
    let keep: Vec<usize> = eig
        .eigenvalues
        .iter()
        .enumerate()
        .filter(|(_, l)| **l > T::c(0.5))
        .map(|(i, _)| i)
        .collect();
    let mut z = Mat::zeros(p.nrows(), keep.len());
    for (j, &i) in keep.iter().enumerate() {
        z.column_mut(j).copy_from(&eig.eigenvectors.column(i));
    }
    z
}

/// Build and solve one SDP iterate of the procedure.
fn dc_iterate<T: Scalar>(
    h: &HankelData<T>,
    known: Option<&SymMat<T>>,
    weight: Option<&Mat<T>>,
    adapter: &dyn SolverAdapter<T>,
) -> Result<crate::sdpcore::SdpSolution<T>, EstimateError> {
    let (n, t) = (h.n, h.horizon);
    let assemble = |p: &mut SdpProblem<T>| -> Result<(), SdpError> {
        let xi = p.add_variable("Xi", VarKind::Rectangular(n, t))?;
        let u = p.add_variable("U", VarKind::Symmetric(t))?;
        let sig = match known {
            Some(_) => None,
            None => Some(p.add_variable("Sigma", VarKind::Symmetric(n))?),
        };
        // The consistency condition `(X_{1,T} − Ξ)Γ = 0` is imposed against an
        // orthonormal basis `Z` of `range(Γ)` rather than against `Γ` itself:
        // both are equivalent (`Γ = ZZᵀ`), but the projector form carries
        // linearly dependent rows that can sink the solver's KKT
        // factorization, while `ΞZ = X_{1,T}Z` has full row rank.
        let z = projector_range_basis(h.gamma.as_mat());
        if z.ncols() > 0 {
            let consistency = MatExpr::constant(&h.x1t * &z).sub(p.var(xi).rmul(&z)?)?;
            p.add_equality("consistency", consistency)?;
        }
        let top_left = match (known, sig) {
            (Some(s), _) => MatExpr::constant(s.as_mat().clone()),
            (None, Some(id)) => p.var(id),
            (None, None) => unreachable!(),
        };
        let lmi = MatExpr::block(&[
            vec![top_left, p.var(xi)],
            vec![p.var(xi).transpose(), p.var(u)],
        ])?;
        p.add_psd_block("likelihood", lmi)?;
        let objective = match (sig, weight) {
            (Some(id), Some(w)) => MatExpr::block(&[
                vec![p.var(u).scale(T::c(0.5)), MatExpr::zeros(t, n)],
                vec![MatExpr::zeros(n, t), p.var(id).lmul(w)?],
            ])?,
            (None, None) => p.var(u).scale(T::c(0.5)),
            _ => unreachable!("weight is supplied exactly when Sigma is a variable"),
        };
        p.set_objective(objective)
    };
    let mut p = SdpProblem::new();
    assemble(&mut p)
        .map_err(|e| EstimateError::Domain(format!("likelihood SDP assembly failed: {e}")))?;
    Ok(p.solve(adapter))
}

fn take_value<T: Scalar>(
    values: &std::collections::BTreeMap<String, Mat<T>>,
    name: &str,
) -> Result<Mat<T>, EstimateError> {
    values.get(name).cloned().ok_or_else(|| {
        EstimateError::Domain(format!("solver solution is missing variable {name:?}"))
    })
}

fn chol_of<T: Scalar>(
    sigma: &SymMat<T>,
) -> Result<nalgebra::Cholesky<T, nalgebra::Dyn>, EstimateError> {
    sigma.as_mat().clone().cholesky().ok_or_else(|| {
        EstimateError::Domain("covariance iterate is not positive definite".to_string())
    })
}

/// True difference-of-convex objective `½·tr(Ξᵀ Σ⁻¹ Ξ) + (T/2)·log det Σ`.
fn dc_objective<T: Scalar>(
    xi: &Mat<T>,
    sigma: &SymMat<T>,
    horizon: usize,
) -> Result<f64, EstimateError> {
    let chol = chol_of(sigma)?;
    let ln_det: f64 = chol
        .l()
        .diagonal()
        .iter()
        .map(|d| 2.0 * d.to_f64().unwrap_or(f64::NAN).ln())
        .sum();
    let quad = xi.dot(&chol.solve(xi));
    Ok(0.5 * quad.to_f64().unwrap_or(f64::NAN) + 0.5 * horizon as f64 * ln_det)
}

/// `‖U − Ξᵀ Σ⁻¹ Ξ‖_F`: how far the relaxed quadratic block is from active.
fn slack_gap<T: Scalar>(xi: &Mat<T>, u: &Mat<T>, sigma: &SymMat<T>) -> Result<f64, EstimateError> {
    let chol = chol_of(sigma)?;
    let gap = u - xi.transpose() * chol.solve(xi);
    Ok(gap.norm().to_f64().unwrap_or(f64::NAN))
}

// ---------------------------------------------------------------------------
// Uncertainty quantification
// ---------------------------------------------------------------------------

/// Asymptotic covariance `Σ_Δ = S†S ⊗ Σ_ξ` of the vectorized estimation
/// error `ΔΞ`. Positive semidefinite with rank `rank(S†S)·rank(Σ_ξ)`; the
/// projector multiplicity makes it singular whenever `S` has a null space.
pub fn error_covariance<T: Scalar>(
    h: &HankelData<T>,
    sigma_xi: &SymMat<T>,
) -> Result<SymMat<T>, EstimateError> {
    if sigma_xi.dim() != h.n {
        return Err(EstimateError::Domain(format!(
            "covariance is {}×{0} but the state dimension is {}",
            sigma_xi.dim(),
            h.n
        )));
    }
    let projector = Mat::identity(h.horizon, h.horizon) - h.gamma.as_mat();
    Ok(SymMat::new(matlib::kron(&projector, sigma_xi.as_mat()))?)
}

/// Quantile bound from a *nonsingular* error covariance:
/// `ρ = √χ²_{nT,1−δ} / √λ_min(Σ_Δ⁻¹)`.
///
/// The `(1−δ)`-confidence ellipsoid of `vec(ΔΞ)` is inflated to the sphere of
/// radius `ρ`, which in turn bounds the matrix two-norm `‖ΔΞ‖₂`.
pub fn uq_bound_general<T: Scalar>(
    sigma_delta: &SymMat<T>,
    n: usize,
    horizon: usize,
    delta: T,
) -> Result<T, EstimateError> {
    check_delta(delta)?;
    let dof = n * horizon;
    if sigma_delta.dim() != dof {
        return Err(EstimateError::Domain(format!(
            "error covariance is {}×{0}, expected n·T = {}",
            sigma_delta.dim(),
            dof
        )));
    }
    let eigs = sigma_delta.eigenvalues();
    let (min, max) = (eigs[0], eigs[eigs.len() - 1]);
    if min <= T::c(1e-10) * (T::one() + max.abs()) {
        return Err(EstimateError::Domain(
            "error covariance is singular (the consistency projector always has \
             a null space when S is wide); use uq_bound_mle instead"
                .to_string(),
        ));
    }
    // λ_min(Σ_Δ⁻¹) = 1/λ_max(Σ_Δ) for symmetric positive-definite Σ_Δ.
    let chi2 = matlib::chi2_quantile(dof, T::one() - delta)?;
    Ok(chi2.sqrt() * max.sqrt())
}

/// Quantile bound specialized to the maximum-likelihood error covariance:
/// `ρ = ‖Σ_ξ^{1/2}‖₂ · √χ²_{nT,1−δ}`.
///
/// Equals the limit of [`uq_bound_general`] on `S†S ⊗ Σ_ξ` with the singular
/// directions regularized away, so it remains valid for rank-deficient `Σ_Δ`.
pub fn uq_bound_mle<T: Scalar>(
    sigma_xi: &SymMat<T>,
    n: usize,
    horizon: usize,
    delta: T,
) -> Result<T, EstimateError> {
    check_delta(delta)?;
    if sigma_xi.dim() != n {
        return Err(EstimateError::Domain(format!(
            "covariance is {}×{0} but the state dimension is {}",
            sigma_xi.dim(),
            n
        )));
    }
    let root = sigma_xi.sqrt_psd()?;
    let chi2 = matlib::chi2_quantile(n * horizon, T::one() - delta)?;
    Ok(root.max_eig() * chi2.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdpcore::ClarabelAdapter;
    use crate::sysdata::{build_hankel, excitation_input, simulate, GaussianMoments, LtiSystem};
    use crate::Vect;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn adapter() -> ClarabelAdapter {
        ClarabelAdapter::new()
    }

    /// Double-integrator benchmark data: `T = 15` steps from
    /// `x₀ ~ N([30, 1], diag(1, 0.5))` under unit-variance excitation.
    fn bench_hankel(seed: u64) -> (HankelData<f64>, Mat<f64>) {
        let sys = LtiSystem::double_integrator();
        let x0 = GaussianMoments::new(
            Vect::from_column_slice(&[30.0, 1.0]),
            SymMat::from_diagonal(&[1.0, 0.5]),
        )
        .unwrap();
        let input = excitation_input(1, 15, 1.0, seed);
        let ds = simulate(&sys, &x0, &input, 15, seed).unwrap();
        let xi_true = matlib::hankel(ds.true_noise.as_ref().unwrap(), 0, 1, 15).unwrap();
        (build_hankel(&ds, None).unwrap(), xi_true)
    }

    fn random_hankel(n: usize, m: usize, t: usize, seed: u64) -> (HankelData<f64>, Mat<f64>) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let a = Mat::from_fn(n, n, |_, _| 0.6 * rng.random_range(-1.0..1.0));
        let b = Mat::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
        let d = Mat::identity(n, n) * 0.1;
        let sys = LtiSystem::new(a, b, d).unwrap();
        let x0 = GaussianMoments::new(Vect::zeros(n), SymMat::identity(n)).unwrap();
        let input = excitation_input(m, t, 1.0, seed ^ 0x5eed);
        let ds = simulate(&sys, &x0, &input, t, seed).unwrap();
        let xi_true = matlib::hankel(ds.true_noise.as_ref().unwrap(), 0, 1, t).unwrap();
        (build_hankel(&ds, None).unwrap(), xi_true)
    }

    #[test]
    fn analytic_solution_satisfies_consistency_exactly() {
        let (h, _) = bench_hankel(7);
        assert!(h.assumption1());
        let xi = mle_noise_analytic(&h);
        assert!(consistency_residual(&h, &xi) <= 1e-9);
    }

    #[test]
    fn analytic_solution_noiseless_is_zero() {
        let sys = LtiSystem::new(
            matlib::from_rows(&[vec![1.0, 1.0], vec![0.0, 1.0]]).unwrap(),
            matlib::from_rows(&[vec![0.0], vec![1.0]]).unwrap(),
            Mat::zeros(2, 2),
        )
        .unwrap();
        let x0 = GaussianMoments::new(Vect::from_column_slice(&[3.0, -1.0]), SymMat::identity(2))
            .unwrap();
        let input = excitation_input(1, 12, 1.0, 4);
        let ds = simulate(&sys, &x0, &input, 12, 4).unwrap();
        let h = build_hankel(&ds, None).unwrap();
        let xi = mle_noise_analytic(&h);
        assert!(
            xi.norm() <= 1e-8,
            "noiseless data ⇒ zero estimate, got {}",
            xi.norm()
        );
    }

    #[test]
    fn analytic_solution_zero_projector() {
        // T = n + m makes S square; with rich data it is invertible, Γ = 0,
        // and the only consistent-by-projection estimate is zero.
        let (h, _) = random_hankel(2, 1, 3, 21);
        assert_eq!(h.rank_s, 3);
        assert!(h.gamma.as_mat().norm() <= 1e-10);
        assert!(mle_noise_analytic(&h).norm() <= 1e-10);
    }

    #[test]
    fn dc_with_known_sigma_matches_analytic() {
        for (i, &(n, m, t)) in [(1, 1, 8), (2, 1, 10), (2, 2, 12), (3, 2, 13)]
            .iter()
            .enumerate()
        {
            let (h, _) = random_hankel(n, m, t, 100 + i as u64);
            let sigma = SymMat::scaled_identity(n, 0.01);
            let opts = CcpOptions::with_known_sigma(sigma, 0.001);
            let (est, report) = mle_noise_dc(&h, &adapter(), &opts).unwrap();
            let exact = mle_noise_analytic(&h);
            let err = (&est.xi_hat - &exact).norm();
            assert!(
                err <= 1e-5 * (1.0 + exact.norm()),
                "instance {i}: ‖Ξ̂ − Ξ*‖ = {err}"
            );
            assert!(consistency_residual(&h, &est.xi_hat) <= 1e-7 * (1.0 + h.x1t.norm()));
            assert_eq!(est.sigma_source, SigmaSource::Known);
            assert!(report.converged);
            assert_eq!(report.iterations, 1);
            // Lossless relaxation: the quadratic block is active at optimum.
            let quad_norm = (est.xi_hat.transpose()
                * chol_of(&est.sigma_xi).unwrap().solve(&est.xi_hat))
            .norm();
            assert!(report.final_slack_gap <= 1e-5 * (1.0 + quad_norm));
        }
    }

    #[test]
    fn dc_joint_estimates_benchmark_covariance() {
        let (h, _) = bench_hankel(3);
        let (est, report) = mle_noise_dc(&h, &adapter(), &CcpOptions::joint(0.001)).unwrap();
        assert!(report.converged, "CCP did not converge: {report:?}");
        assert_eq!(est.sigma_source, SigmaSource::Estimated);
        assert!(consistency_residual(&h, &est.xi_hat) <= 1e-7 * (1.0 + h.x1t.norm()));
        // Ground truth Σ_ξ = 0.01·I₂; with T = 15 samples expect the right
        // order of magnitude, not tight recovery.
        let eigs = est.sigma_xi.eigenvalues();
        assert!(
            eigs[0] >= 0.005 && eigs[eigs.len() - 1] <= 0.02,
            "estimated spectrum {eigs:?} outside [0.005, 0.02]"
        );
        // Descent property of the convex-concave procedure.
        for w in report.objective_trace.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-6 * (1.0 + w[0].abs()),
                "objective trace increased: {:?}",
                report.objective_trace
            );
        }
        let quad_norm =
            (est.xi_hat.transpose() * chol_of(&est.sigma_xi).unwrap().solve(&est.xi_hat)).norm();
        assert!(report.final_slack_gap <= 1e-5 * (1.0 + quad_norm));
    }

    #[test]
    fn dc_joint_zero_projector_floors_sigma() {
        let (h, _) = random_hankel(2, 1, 3, 21);
        let (est, report) = mle_noise_dc(&h, &adapter(), &CcpOptions::joint(0.01)).unwrap();
        assert!(
            est.xi_hat.norm() <= 1e-6,
            "Γ = 0 leaves no evidence of noise"
        );
        assert!(report.sigma_floored);
        assert!(report.converged);
        let eigs = est.sigma_xi.eigenvalues();
        assert!(
            eigs[0] >= 0.5e-6 && eigs[eigs.len() - 1] <= 1e-5,
            "{eigs:?}"
        );
    }

    #[test]
    fn dc_rejects_singular_known_sigma() {
        let (h, _) = bench_hankel(9);
        let opts = CcpOptions::with_known_sigma(SymMat::from_diagonal(&[1.0, 0.0]), 0.01);
        let err = mle_noise_dc(&h, &adapter(), &opts).unwrap_err();
        assert!(matches!(err, EstimateError::Domain(_)));
    }

    #[test]
    fn dc_rejects_bad_delta() {
        let (h, _) = bench_hankel(9);
        let mut opts = CcpOptions::<f64>::joint(0.5);
        opts.delta = 0.0;
        assert!(mle_noise_dc(&h, &adapter(), &opts).is_err());
        opts.delta = 1.0;
        assert!(mle_noise_dc(&h, &adapter(), &opts).is_err());
    }

    #[test]
    fn error_covariance_kronecker_identity() {
        let (h, _) = random_hankel(2, 1, 9, 33);
        let sigma = SymMat::from_diagonal(&[0.04, 0.01]);
        let sd = error_covariance(&h, &sigma).unwrap();
        let t = h.horizon;
        let direct = matlib::kron(&Mat::identity(t, t), sigma.as_mat())
            - matlib::kron(h.gamma.as_mat(), sigma.as_mat());
        assert!((sd.as_mat() - &direct).amax() <= 1e-10);
        assert!(sd.is_psd(1e-10));
        let expected_rank = h.rank_s * 2;
        assert_eq!(matlib::rank(sd.as_mat(), None), expected_rank);
    }

    #[test]
    fn error_covariance_spectrum_is_projector_copies() {
        let (h, _) = random_hankel(2, 1, 9, 34);
        let sigma = SymMat::from_diagonal(&[0.04, 0.01]);
        let sd = error_covariance(&h, &sigma).unwrap();
        let (n, t, r) = (h.n, h.horizon, h.rank_s);
        let mut expected: Vec<f64> = Vec::new();
        expected.extend(std::iter::repeat_n(0.0, n * (t - r)));
        for lam in sigma.eigenvalues() {
            expected.extend(std::iter::repeat_n(lam, r));
        }
        expected.sort_by(f64::total_cmp);
        let eigs = sd.eigenvalues();
        assert_eq!(eigs.len(), expected.len());
        for (got, want) in eigs.iter().zip(&expected) {
            assert_relative_eq!(got, want, epsilon = 1e-9);
        }
    }

    #[test]
    fn uq_general_identity_and_scaling() {
        let id = SymMat::identity(2);
        let rho = uq_bound_general(&id, 1, 2, 0.001).unwrap();
        assert_relative_eq!(rho, 3.7169221888498383, epsilon = 1e-9);
        let four = SymMat::scaled_identity(2, 4.0);
        let rho4 = uq_bound_general(&four, 1, 2, 0.001).unwrap();
        assert_relative_eq!(rho4, 2.0 * rho, epsilon = 1e-9);
        // Monotone nonincreasing in the risk level.
        let grid = [0.001, 0.01, 0.1, 0.5, 0.9];
        for pair in grid.windows(2) {
            let hi = uq_bound_general(&id, 1, 2, pair[0]).unwrap();
            let lo = uq_bound_general(&id, 1, 2, pair[1]).unwrap();
            assert!(lo <= hi);
        }
    }

    #[test]
    fn uq_general_singular_directs_to_mle_form() {
        let singular = SymMat::from_diagonal(&[1.0, 0.0]);
        let err = uq_bound_general(&singular, 1, 2, 0.01).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("uq_bound_mle"), "unhelpful message: {msg}");
    }

    #[test]
    fn uq_mle_benchmark_value() {
        let sigma = SymMat::scaled_identity(2, 0.01);
        let rho = uq_bound_mle(&sigma, 2, 15, 0.001).unwrap();
        assert_relative_eq!(rho, 0.7726775802650803, epsilon = 1e-9);
        assert_eq!(uq_bound_mle(&SymMat::zeros(2), 2, 15, 0.001).unwrap(), 0.0);
    }

    #[test]
    fn uq_mle_agrees_with_general_on_full_rank_error_covariance() {
        // When S†S = I (zero projector) the error covariance is I ⊗ Σ_ξ and
        // both bounds coincide.
        let (h, _) = random_hankel(2, 1, 3, 21);
        let sigma = SymMat::from_diagonal(&[0.09, 0.01]);
        let sd = error_covariance(&h, &sigma).unwrap();
        let general = uq_bound_general(&sd, h.n, h.horizon, 0.01).unwrap();
        let mle = uq_bound_mle(&sigma, h.n, h.horizon, 0.01).unwrap();
        assert_relative_eq!(general, mle, epsilon = 1e-9);
    }

    #[test]
    fn coverage_of_analytic_bound() {
        // The spherical overapproximation of the confidence ellipsoid makes
        // the bound conservative, so empirical coverage should be essentially
        // total even at a modest trial count.
        let delta = 0.01;
        let trials = 200;
        let mut hits = 0;
        for seed in 0..trials {
            let (h, xi_true) = bench_hankel(1000 + seed);
            let est = estimate_analytic(&h, &SymMat::scaled_identity(2, 0.01), delta).unwrap();
            if matlib::spectral_norm(&(xi_true - &est.xi_hat)) <= est.rho {
                hits += 1;
            }
        }
        let coverage = f64::from(hits) / f64::from(trials as u32);
        assert!(
            coverage >= 1.0 - delta,
            "coverage {coverage} below 1 − δ = {}",
            1.0 - delta
        );
    }

    #[test]
    fn noise_estimate_json_schema_and_roundtrip() {
        let (h, _) = bench_hankel(11);
        let sigma = SymMat::scaled_identity(2, 0.01);
        let est = estimate_analytic(&h, &sigma, 0.001).unwrap();
        assert_relative_eq!(
            est.rho,
            uq_bound_mle(&sigma, 2, 15, 0.001).unwrap(),
            epsilon = 1e-15
        );
        let text = est.to_json();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        let obj = value.as_object().unwrap();
        let mut keys: Vec<_> = obj.keys().map(String::as_str).collect();
        keys.sort_unstable();
        assert_eq!(keys, ["Sigma_xi", "Xi_hat", "delta", "rho", "sigma_source"]);
        assert_eq!(obj["sigma_source"], "known");
        let back = NoiseEstimate::<f64>::from_json(&text).unwrap();
        assert!((&back.xi_hat - &est.xi_hat).norm() <= 1e-12);
        assert!((back.sigma_xi.as_mat() - est.sigma_xi.as_mat()).norm() <= 1e-12);
        assert_eq!(back.sigma_source, SigmaSource::Known);
        assert_relative_eq!(back.rho, est.rho, epsilon = 1e-15);
    }

    #[test]
    fn noise_estimate_json_rejects_bad_fields() {
        let bad_source = r#"{"Xi_hat":[[0.0]],"Sigma_xi":[[1.0]],"sigma_source":"guessed","delta":0.1,"rho":1.0}"#;
        assert!(NoiseEstimate::<f64>::from_json(bad_source).is_err());
        let bad_rho = r#"{"Xi_hat":[[0.0]],"Sigma_xi":[[1.0]],"sigma_source":"known","delta":0.1,"rho":-1.0}"#;
        assert!(NoiseEstimate::<f64>::from_json(bad_rho).is_err());
        let indefinite = r#"{"Xi_hat":[[0.0]],"Sigma_xi":[[-1.0]],"sigma_source":"known","delta":0.1,"rho":1.0}"#;
        assert!(NoiseEstimate::<f64>::from_json(indefinite).is_err());
    }
}
