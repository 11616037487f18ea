//! Controller synthesis: nominal data-driven covariance steering, its robust
//! counterpart under norm-bounded noise-realization uncertainty, data-driven
//! mean steering, a model-based baseline, and policy evaluation by exact
//! moment propagation.
//!
//! All covariance programs share one convex relaxation. With per-step
//! feedback `u_k = K_k (x_k − μ_k) + v_k` the state covariance obeys
//! `Σ_{k+1} = (A + B K_k) Σ_k (A + B K_k)ᵀ + Σ_ξ`; substituting the
//! data-driven parameterization `[K_k; I] = [U_{0,T}; X_{0,T}]·G_k` and
//! `S_k := G_k Σ_k` turns the (nonconvex) equality into linear coupling
//! `Σ_k = X_{0,T} S_k` plus two linear matrix inequalities per step — a cost
//! block linking `S_k` to the input-energy slack `Y_k`, and a dynamics block
//! relaxing the covariance recursion to `⪰`. The robust variant replaces the
//! dynamics block with its robust counterpart over all realization errors
//! `‖ΔΞ‖₂ ≤ ρ`, introducing one multiplier `λ_k ≥ 0` per step. Mean steering
//! decouples into an equality-constrained quadratic program in the planned
//! means and feedforward inputs.

use crate::estimate::{consistency_residual, NoiseEstimate};
use crate::matlib::{self, MatError, SymMat};
use crate::sdpcore::{MatExpr, SdpError, SdpProblem, SdpStatus, SolverAdapter, VarId, VarKind};
use crate::sysdata::{DataError, GaussianMoments, HankelData, LtiSystem};
use crate::{Mat, Scalar, Vect};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// RNG stream tag for robustness certification sampling.
const STREAM_CERTIFY: u64 = 3;

/// Errors from synthesis and evaluation.
#[derive(Debug, thiserror::Error)]
pub enum SteerError {
    #[error(transparent)]
    Mat(#[from] MatError),
    #[error(transparent)]
    Data(#[from] DataError),
    /// Invalid argument or a mathematically undefined request.
    #[error("{0}")]
    Domain(String),
    /// The collected data are not rich enough for synthesis.
    #[error("data-richness assumption violated: rank(S) = {rank}, need n + m = {needed}")]
    AssumptionViolated { rank: usize, needed: usize },
    /// The covariance program could not be solved at the requested
    /// uncertainty radius — reported infeasible, or (deep in the infeasible
    /// regime) failed without a certificate. For robust synthesis the largest
    /// radius that *is* feasible (found by bisection) is attached as a
    /// diagnostic aid; `None` means even `ρ = 0` fails.
    #[error("synthesis infeasible: {diagnostics}")]
    Infeasible {
        diagnostics: String,
        largest_feasible_rho: Option<f64>,
    },
    /// The mean-steering KKT system is singular — the terminal mean is
    /// unreachable under the estimated dynamics.
    #[error("mean steering failed: {0}")]
    UnreachableMean(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("deserialization failed: {0}")]
    Serde(String),
}

impl From<SdpError> for SteerError {
    fn from(e: SdpError) -> Self {
        SteerError::Domain(format!("SDP assembly failed: {e}"))
    }
}

// ---------------------------------------------------------------------------
// Problem statement and policy types
// ---------------------------------------------------------------------------

/// A finite-horizon steering problem: drive the state distribution from
/// `N(μ_i, Σ_i)` to `N(μ_f, Σ_f)` in `N` steps while minimizing
/// `Σ_k (E[x_kᵀ Q_k x_k] + E[u_kᵀ R_k u_k])`.
#[derive(Clone, Debug)]
pub struct SteeringSpec<T: Scalar> {
    /// Steering horizon `N`.
    pub horizon: usize,
    /// State-cost weights `Q_0..Q_{N−1}`, each positive semidefinite.
    pub q: Vec<SymMat<T>>,
    /// Input-cost weights `R_0..R_{N−1}`, each positive definite.
    pub r: Vec<SymMat<T>>,
    /// Initial distribution `(μ_i, Σ_i)`, `Σ_i ≻ 0`.
    pub init: GaussianMoments<T>,
    /// Terminal distribution `(μ_f, Σ_f)`, `Σ_f ≻ 0`.
    pub terminal: GaussianMoments<T>,
}

impl<T: Scalar> SteeringSpec<T> {
    pub fn new(
        horizon: usize,
        q: Vec<SymMat<T>>,
        r: Vec<SymMat<T>>,
        init: GaussianMoments<T>,
        terminal: GaussianMoments<T>,
    ) -> Result<Self, SteerError> {
        if horizon == 0 {
            return Err(SteerError::Domain(
                "steering horizon must be at least 1".into(),
            ));
        }
        if q.len() != horizon || r.len() != horizon {
            return Err(SteerError::Domain(format!(
                "need {horizon} state and input weights, got {} and {}",
                q.len(),
                r.len()
            )));
        }
        let n = init.mean.len();
        if terminal.mean.len() != n {
            return Err(SteerError::Domain(format!(
                "initial state dim {} vs terminal state dim {}",
                n,
                terminal.mean.len()
            )));
        }
        let pd = |s: &SymMat<T>| -> bool {
            let eigs = s.eigenvalues();
            eigs[0] > T::c(1e-12) * (T::one() + eigs[eigs.len() - 1].abs())
        };
        if !pd(&init.cov) || !pd(&terminal.cov) {
            return Err(SteerError::Domain(
                "initial and terminal covariances must be positive definite".into(),
            ));
        }
        for (k, qk) in q.iter().enumerate() {
            if qk.dim() != n {
                return Err(SteerError::Domain(format!(
                    "state weight {k} is {}×{0}, expected {n}×{n}",
                    qk.dim()
                )));
            }
            if !qk.is_psd(T::c(1e-9)) {
                return Err(SteerError::Domain(format!(
                    "state weight {k} must be positive semidefinite"
                )));
            }
        }
        let m = r.first().map(SymMat::dim).unwrap_or(0);
        for (k, rk) in r.iter().enumerate() {
            if rk.dim() != m {
                return Err(SteerError::Domain(format!(
                    "input weight {k} is {}×{0}, expected {m}×{m}",
                    rk.dim()
                )));
            }
            if !pd(rk) {
                return Err(SteerError::Domain(format!(
                    "input weight {k} must be positive definite"
                )));
            }
        }
        Ok(SteeringSpec {
            horizon,
            q,
            r,
            init,
            terminal,
        })
    }

    /// Replicate one weight pair across the whole horizon.
    pub fn uniform(
        horizon: usize,
        q: SymMat<T>,
        r: SymMat<T>,
        init: GaussianMoments<T>,
        terminal: GaussianMoments<T>,
    ) -> Result<Self, SteerError> {
        Self::new(horizon, vec![q; horizon], vec![r; horizon], init, terminal)
    }

    pub fn state_dim(&self) -> usize {
        self.init.mean.len()
    }

    pub fn input_dim(&self) -> usize {
        self.r.first().map(SymMat::dim).unwrap_or(0)
    }
}

/// Which synthesis path produced a policy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PolicyMode {
    /// Nominal data-driven covariance steering.
    #[serde(rename = "dd")]
    Dd,
    /// Robust data-driven covariance steering.
    #[serde(rename = "rdd")]
    Rdd,
    /// Model-based baseline.
    #[serde(rename = "mb")]
    Mb,
}

/// Per-step solver-internal values kept for diagnostics (not serialized).
#[derive(Clone, Debug)]
pub struct PolicyAux<T: Scalar> {
    /// Data-driven linearizing variables `S_k` (or the model-based `P_k`).
    pub s_k: Vec<Mat<T>>,
    /// Quadratic-cost slack blocks `Y_k`.
    pub y_k: Vec<SymMat<T>>,
    /// Recovered trajectory selectors `G_k` (data-driven modes only).
    pub g_k: Vec<Mat<T>>,
    /// Robust multipliers `λ_k` (robust mode only).
    pub lambda_k: Vec<T>,
}

impl<T: Scalar> Default for PolicyAux<T> {
    fn default() -> Self {
        PolicyAux {
            s_k: Vec::new(),
            y_k: Vec::new(),
            g_k: Vec::new(),
            lambda_k: Vec::new(),
        }
    }
}

/// A synthesized steering policy `u_k = K_k (x_k − μ_k) + v_k` together with
/// the planned moment trajectory and optimal cost split.
#[derive(Clone, Debug)]
pub struct Policy<T: Scalar> {
    pub mode: PolicyMode,
    /// Feedback gains `K_0..K_{N−1}`, each `m×n`.
    pub gains: Vec<Mat<T>>,
    /// Feedforward inputs `v_0..v_{N−1}`.
    pub feedforward: Vec<Vect<T>>,
    /// Planned means `μ_0..μ_N`.
    pub planned_means: Vec<Vect<T>>,
    /// Planned covariances `Σ_0..Σ_N`.
    pub planned_covs: Vec<SymMat<T>>,
    /// Optimal mean-steering cost.
    pub cost_mean: T,
    /// Optimal covariance-steering cost.
    pub cost_cov: T,
    /// Uncertainty radius the policy was synthesized for (0 when nominal).
    pub rho: T,
    pub aux: PolicyAux<T>,
}

impl<T: Scalar> Policy<T> {
    /// Steering horizon `N`.
    pub fn horizon(&self) -> usize {
        self.gains.len()
    }
}

#[derive(Serialize, Deserialize)]
struct CostWire<T> {
    mean: T,
    cov: T,
}

#[derive(Serialize, Deserialize)]
struct PolicyWire<T> {
    mode: PolicyMode,
    #[serde(rename = "N")]
    horizon: usize,
    gains: Vec<Vec<Vec<T>>>,
    feedforward: Vec<Vec<T>>,
    planned_means: Vec<Vec<T>>,
    planned_covs: Vec<Vec<Vec<T>>>,
    cost: CostWire<T>,
    rho: T,
}

fn mats_to_wire<T: Scalar>(ms: &[Mat<T>]) -> Vec<Vec<Vec<T>>> {
    ms.iter().map(|m| matlib::to_rows(m)).collect()
}

fn vects_to_wire<T: Scalar>(vs: &[Vect<T>]) -> Vec<Vec<T>> {
    vs.iter().map(|v| v.iter().copied().collect()).collect()
}

impl<T: Scalar> Policy<T>
where
    T: Serialize + for<'de> Deserialize<'de>,
{
    pub fn to_json(&self) -> String {
        let wire = PolicyWire {
            mode: self.mode,
            horizon: self.horizon(),
            gains: mats_to_wire(&self.gains),
            feedforward: vects_to_wire(&self.feedforward),
            planned_means: vects_to_wire(&self.planned_means),
            planned_covs: mats_to_wire(
                &self
                    .planned_covs
                    .iter()
                    .map(|s| s.as_mat().clone())
                    .collect::<Vec<_>>(),
            ),
            cost: CostWire {
                mean: self.cost_mean,
                cov: self.cost_cov,
            },
            rho: self.rho,
        };
        serde_json::to_string_pretty(&wire).expect("policy serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, SteerError> {
        let wire: PolicyWire<T> =
            serde_json::from_str(text).map_err(|e| SteerError::Serde(e.to_string()))?;
        let nsteps = wire.horizon;
        if nsteps == 0 {
            return Err(SteerError::Serde(
                "policy horizon must be at least 1".into(),
            ));
        }
        if wire.gains.len() != nsteps
            || wire.feedforward.len() != nsteps
            || wire.planned_means.len() != nsteps + 1
            || wire.planned_covs.len() != nsteps + 1
        {
            return Err(SteerError::Serde(format!(
                "length mismatch: {} gains, {} feedforward, {} means, {} covariances for N = {}",
                wire.gains.len(),
                wire.feedforward.len(),
                wire.planned_means.len(),
                wire.planned_covs.len(),
                nsteps
            )));
        }
        if wire.rho < T::zero() {
            return Err(SteerError::Serde("rho must be nonnegative".into()));
        }
        let gains = wire
            .gains
            .iter()
            .map(|g| matlib::from_rows(g))
            .collect::<Result<Vec<_>, _>>()?;
        let (m, n) = (gains[0].nrows(), gains[0].ncols());
        for (k, g) in gains.iter().enumerate() {
            if g.nrows() != m || g.ncols() != n {
                return Err(SteerError::Serde(format!(
                    "gain {k} is {}×{}, expected {m}×{n}",
                    g.nrows(),
                    g.ncols()
                )));
            }
        }
        let to_vecs =
            |rows: &[Vec<T>], dim: usize, what: &str| -> Result<Vec<Vect<T>>, SteerError> {
                rows.iter()
                    .enumerate()
                    .map(|(k, r)| {
                        if r.len() != dim {
                            return Err(SteerError::Serde(format!(
                                "{what} {k} has dim {}, expected {dim}",
                                r.len()
                            )));
                        }
                        matlib::vec_from(r).map_err(SteerError::from)
                    })
                    .collect()
            };
        let feedforward = to_vecs(&wire.feedforward, m, "feedforward input")?;
        let planned_means = to_vecs(&wire.planned_means, n, "planned mean")?;
        let mut planned_covs = Vec::with_capacity(nsteps + 1);
        for (k, rows) in wire.planned_covs.iter().enumerate() {
            let sym = SymMat::new(matlib::from_rows(rows)?)?;
            if sym.dim() != n {
                return Err(SteerError::Serde(format!(
                    "planned covariance {k} is {}×{0}, expected {n}×{n}",
                    sym.dim()
                )));
            }
            if !sym.is_psd(T::c(1e-6)) {
                return Err(SteerError::Serde(format!(
                    "planned covariance {k} is not positive semidefinite"
                )));
            }
            planned_covs.push(sym);
        }
        Ok(Policy {
            mode: wire.mode,
            gains,
            feedforward,
            planned_means,
            planned_covs,
            cost_mean: wire.cost.mean,
            cost_cov: wire.cost.cov,
            rho: wire.rho,
            aux: PolicyAux::default(),
        })
    }
}

// ---------------------------------------------------------------------------
// Shared SDP assembly
// ---------------------------------------------------------------------------

/// 1×1 expression whose trace equals `tr(W · X)` for the declared variable
/// `X`: the sum of `row_i(W) · X · e_i` keeps objective scalarization cheap.
fn trace_term<T: Scalar>(p: &SdpProblem<T>, id: VarId, w: &Mat<T>) -> Result<MatExpr<T>, SdpError> {
    let (xr, xc) = p.var(id).shape();
    if w.ncols() != xr || w.nrows() != xc {
        return Err(SdpError::Dimension(format!(
            "trace weight is {}×{} but the variable is {}×{}",
            w.nrows(),
            w.ncols(),
            xr,
            xc
        )));
    }
    let mut acc = MatExpr::zeros(1, 1);
    for i in 0..w.nrows() {
        let row = Mat::from_fn(1, w.ncols(), |_, j| w[(i, j)]);
        let ei = Mat::from_fn(xc, 1, |r, _| if r == i { T::one() } else { T::zero() });
        acc = acc.add(p.var(id).lmul(&row)?.rmul(&ei)?)?;
    }
    Ok(acc)
}

/// Minimum planned-covariance eigenvalue enforced so gain recovery
/// `G_k = S_k Σ_k⁻¹` stays well-posed.
const SIGMA_FLOOR: f64 = 1e-8;

/// Weight of the trace tie-break on interior planned covariances.
///
/// With singular state weights (`Q_k = 0` in the benchmark) the relaxed
/// program has a flat optimal face: the planned `Σ_k` can be inflated in
/// directions the rank-deficient gains never sense, at zero cost change.
/// Interior-point solvers return a point in the middle of that face, whose
/// recovered closed loop then realizes a covariance strictly below the plan.
/// A tiny trace penalty selects the minimum-variance optimum instead, which
/// makes the relaxation tight: the realized trajectory reproduces the planned
/// one, and the planned terminal pin is met exactly by the closed loop.
/// The reported cost strips this term back out.
const TRACE_TIE_BREAK: f64 = 1e-6;

/// Planned-covariance expression at step `k`: the boundary steps are pinned
/// constants, interior steps are symmetric variables.
fn sigma_expr_at<T: Scalar>(
    p: &SdpProblem<T>,
    spec: &SteeringSpec<T>,
    sig_ids: &[VarId],
    k: usize,
) -> MatExpr<T> {
    if k == 0 {
        MatExpr::constant(spec.init.cov.as_mat().clone())
    } else if k == spec.horizon {
        MatExpr::constant(spec.terminal.cov.as_mat().clone())
    } else {
        p.var(sig_ids[k - 1])
    }
}

/// Build the data-driven covariance program. `robust_rho = None` gives the
/// nominal relaxation; `Some(ρ)` replaces every dynamics block with its
/// robust counterpart over `‖ΔΞ‖₂ ≤ ρ`.
fn build_dd_sdp<T: Scalar>(
    h: &HankelData<T>,
    bhat: &Mat<T>,
    sigma_xi: &SymMat<T>,
    spec: &SteeringSpec<T>,
    robust_rho: Option<T>,
) -> Result<SdpProblem<T>, SdpError> {
    let (n, t, nsteps) = (h.n, h.horizon, spec.horizon);
    let mut p = SdpProblem::new();
    let mut s_ids = Vec::with_capacity(nsteps);
    let mut y_ids = Vec::with_capacity(nsteps);
    let mut sig_ids = Vec::with_capacity(nsteps.saturating_sub(1));
    let mut lam_ids = Vec::new();
    for k in 0..nsteps {
        s_ids.push(p.add_variable(&format!("S_{k}"), VarKind::Rectangular(t, n))?);
    }
    for k in 0..nsteps {
        y_ids.push(p.add_variable(&format!("Y_{k}"), VarKind::Symmetric(t))?);
    }
    for k in 1..nsteps {
        sig_ids.push(p.add_variable(&format!("Sigma_{k}"), VarKind::Symmetric(n))?);
    }
    if robust_rho.is_some() {
        for k in 0..nsteps {
            lam_ids.push(p.add_variable(&format!("lambda_{k}"), VarKind::Scalar)?);
        }
    }

    for k in 0..nsteps {
        // Linear coupling Σ_k = X_{0,T} S_k.
        let coupling = p
            .var(s_ids[k])
            .lmul(&h.x0t)?
            .sub(sigma_expr_at(&p, spec, &sig_ids, k))?;
        p.add_equality(&format!("coupling_{k}"), coupling)?;

        // Cost block [[Σ_k, S_kᵀ], [S_k, Y_k]] ⪰ 0 ⇔ Y_k ⪰ S_k Σ_k⁻¹ S_kᵀ.
        let c1 = MatExpr::block(&[
            vec![
                sigma_expr_at(&p, spec, &sig_ids, k),
                p.var(s_ids[k]).transpose(),
            ],
            vec![p.var(s_ids[k]), p.var(y_ids[k])],
        ])?;
        p.add_psd_block(&format!("cost_block_{k}"), c1)?;

        // Nominal dynamics block
        // [[Σ_{k+1} − Σ_ξ, B̂ S_k], [S_kᵀ B̂ᵀ, Σ_k]] with B̂ = X_{1,T} − Ξ̂.
        let g_hat = MatExpr::block(&[
            vec![
                sigma_expr_at(&p, spec, &sig_ids, k + 1)
                    .sub(MatExpr::constant(sigma_xi.as_mat().clone()))?,
                p.var(s_ids[k]).lmul(bhat)?,
            ],
            vec![
                p.var(s_ids[k]).lmul(bhat)?.transpose(),
                sigma_expr_at(&p, spec, &sig_ids, k),
            ],
        ])?;
        match robust_rho {
            None => p.add_psd_block(&format!("dynamics_{k}"), g_hat)?,
            Some(rho) => {
                // Robust counterpart: with L(S_k) = [0, −S_k] and R̄ = [I, 0]
                // the perturbed block is Ĝ + R̄ᵀΔΞ L + Lᵀ ΔΞᵀ R̄, and
                // PSD-ness for all ‖ΔΞ‖₂ ≤ ρ is equivalent to
                // [[λ_k I_T, ρ L(S_k)], [ρ L(S_k)ᵀ, Ĝ_k − λ_k R̄ᵀR̄]] ⪰ 0
                // for some λ_k ≥ 0.
                let lam = lam_ids[k];
                let lam_block = p.scalar_times(lam, &Mat::identity(t, t))?;
                let rho_l =
                    MatExpr::block(&[vec![MatExpr::zeros(t, n), p.var(s_ids[k]).scale(-rho)]])?;
                let mut rr = Mat::zeros(2 * n, 2 * n);
                rr.view_mut((0, 0), (n, n)).copy_from(&Mat::identity(n, n));
                let bottom = g_hat.sub(p.scalar_times(lam, &rr)?)?;
                let robust = MatExpr::block(&[
                    vec![lam_block, rho_l.clone()],
                    vec![rho_l.transpose(), bottom],
                ])?;
                p.add_psd_block(&format!("robust_dynamics_{k}"), robust)?;
                p.add_psd_block(&format!("lambda_nonneg_{k}"), p.var(lam))?;
            }
        }
    }
    for k in 1..nsteps {
        let floor = p
            .var(sig_ids[k - 1])
            .sub(MatExpr::constant(Mat::identity(n, n) * T::c(SIGMA_FLOOR)))?;
        p.add_psd_block(&format!("sigma_floor_{k}"), floor)?;
    }

    // Cost Σ_k tr(Q_k Σ_k) + tr(R_k U_{0,T} Y_k U_{0,T}ᵀ); the k = 0 state
    // term is constant because Σ_0 is pinned.
    let mut obj = MatExpr::constant(Mat::from_element(
        1,
        1,
        (spec.q[0].as_mat() * spec.init.cov.as_mat()).trace(),
    ));
    for k in 1..nsteps {
        obj = obj.add(trace_term(&p, sig_ids[k - 1], spec.q[k].as_mat())?)?;
    }
    for k in 0..nsteps {
        let mk = h.u0t.transpose() * spec.r[k].as_mat() * &h.u0t;
        obj = obj.add(trace_term(&p, y_ids[k], &mk)?)?;
    }
    let tie = Mat::identity(n, n) * T::c(TRACE_TIE_BREAK);
    for k in 1..nsteps {
        obj = obj.add(trace_term(&p, sig_ids[k - 1], &tie)?)?;
    }
    p.set_objective(obj)?;
    Ok(p)
}

/// Build the model-based covariance program (same relaxation with the model
/// substituted: `P_k = K_k Σ_k`, input-sized slack `Y_k`).
///
/// With `exact = true` the planned chain is additionally pinned to the
/// recovered closed loop (see `solve_mbcs_exact`); with `exact = false` the
/// program is the pure mirror of the data-driven relaxation.
fn build_mb_sdp<T: Scalar>(
    sys: &LtiSystem<T>,
    spec: &SteeringSpec<T>,
    exact: bool,
) -> Result<SdpProblem<T>, SdpError> {
    let (n, m, nsteps) = (sys.state_dim(), sys.input_dim(), spec.horizon);
    let sigma_xi = sys.sigma_xi();
    let mut p = SdpProblem::new();
    let mut p_ids = Vec::with_capacity(nsteps);
    let mut y_ids = Vec::with_capacity(nsteps);
    let mut sig_ids = Vec::with_capacity(nsteps.saturating_sub(1));
    for k in 0..nsteps {
        p_ids.push(p.add_variable(&format!("P_{k}"), VarKind::Rectangular(m, n))?);
    }
    for k in 0..nsteps {
        y_ids.push(p.add_variable(&format!("Y_{k}"), VarKind::Symmetric(m))?);
    }
    for k in 1..nsteps {
        sig_ids.push(p.add_variable(&format!("Sigma_{k}"), VarKind::Symmetric(n))?);
    }
    for k in 0..nsteps {
        let c1 = MatExpr::block(&[
            vec![
                sigma_expr_at(&p, spec, &sig_ids, k),
                p.var(p_ids[k]).transpose(),
            ],
            vec![p.var(p_ids[k]), p.var(y_ids[k])],
        ])?;
        p.add_psd_block(&format!("cost_block_{k}"), c1)?;

        // A Σ_k + B P_k, with the pinned Σ_0 folded into the constant.
        let closed = if k == 0 {
            MatExpr::constant(&sys.a * spec.init.cov.as_mat()).add(p.var(p_ids[k]).lmul(&sys.b)?)?
        } else {
            p.var(sig_ids[k - 1])
                .lmul(&sys.a)?
                .add(p.var(p_ids[k]).lmul(&sys.b)?)?
        };
        let c2 = MatExpr::block(&[
            vec![
                sigma_expr_at(&p, spec, &sig_ids, k + 1)
                    .sub(MatExpr::constant(sigma_xi.as_mat().clone()))?,
                closed.clone(),
            ],
            vec![closed.transpose(), sigma_expr_at(&p, spec, &sig_ids, k)],
        ])?;
        p.add_psd_block(&format!("dynamics_{k}"), c2)?;

        // Exact closed-loop propagation in the lifted variables:
        // Σ_{k+1} = A Σ_k Aᵀ + B P_k Aᵀ + A P_kᵀ Bᵀ + B Y_k Bᵀ + Σ_ξ.
        // Combined with the cost block this implies the dynamics LMI above
        // (the gap is B (Y_k − P_k Σ_k⁻¹ P_kᵀ) Bᵀ ⪰ 0), and the input cost
        // squeezes that gap to zero, so the recovered closed loop reproduces
        // the planned covariance chain exactly — including the terminal pin.
        // Without it the baseline plans to Σ_f but may realize a strictly
        // smaller covariance in directions the input cost never senses.
        if exact {
            let a_t = sys.a.transpose();
            let b_t = sys.b.transpose();
            let a_sig_a = if k == 0 {
                MatExpr::constant(&sys.a * spec.init.cov.as_mat() * &a_t)
            } else {
                p.var(sig_ids[k - 1]).lmul(&sys.a)?.rmul(&a_t)?
            };
            let bpa = p.var(p_ids[k]).lmul(&sys.b)?.rmul(&a_t)?;
            let prop = sigma_expr_at(&p, spec, &sig_ids, k + 1)
                .sub(MatExpr::constant(sigma_xi.as_mat().clone()))?
                .sub(a_sig_a)?
                .sub(bpa.clone())?
                .sub(bpa.transpose())?
                .sub(p.var(y_ids[k]).lmul(&sys.b)?.rmul(&b_t)?)?;
            p.add_equality(&format!("propagation_{k}"), prop)?;
        }
    }
    for k in 1..nsteps {
        let floor = p
            .var(sig_ids[k - 1])
            .sub(MatExpr::constant(Mat::identity(n, n) * T::c(SIGMA_FLOOR)))?;
        p.add_psd_block(&format!("sigma_floor_{k}"), floor)?;
    }
    let mut obj = MatExpr::constant(Mat::from_element(
        1,
        1,
        (spec.q[0].as_mat() * spec.init.cov.as_mat()).trace(),
    ));
    for k in 1..nsteps {
        obj = obj.add(trace_term(&p, sig_ids[k - 1], spec.q[k].as_mat())?)?;
    }
    for k in 0..nsteps {
        obj = obj.add(trace_term(&p, y_ids[k], spec.r[k].as_mat())?)?;
    }
    let tie = Mat::identity(n, n) * T::c(TRACE_TIE_BREAK);
    for k in 1..nsteps {
        obj = obj.add(trace_term(&p, sig_ids[k - 1], &tie)?)?;
    }
    p.set_objective(obj)?;
    Ok(p)
}

/// Extracted covariance-program solution.
struct CovSolve<T: Scalar> {
    planned_covs: Vec<SymMat<T>>,
    s_vals: Vec<Mat<T>>,
    y_vals: Vec<SymMat<T>>,
    lambdas: Vec<T>,
    cost: T,
}

fn run_cov_sdp<T: Scalar>(
    p: &SdpProblem<T>,
    adapter: &dyn SolverAdapter<T>,
    spec: &SteeringSpec<T>,
    s_name: &str,
    robust: bool,
) -> Result<CovSolve<T>, SteerError> {
    let sol = p.solve(adapter);
    match sol.status {
        SdpStatus::Optimal => {}
        SdpStatus::Infeasible => {
            return Err(SteerError::Infeasible {
                diagnostics: sol.diagnostics,
                largest_feasible_rho: None,
            })
        }
        SdpStatus::Unbounded => {
            return Err(SteerError::Solver(format!(
                "covariance program unbounded ({})",
                sol.diagnostics
            )))
        }
        SdpStatus::NumericalFailure => return Err(SteerError::Solver(sol.diagnostics)),
    }
    let nsteps = spec.horizon;
    let get = |name: String| -> Result<Mat<T>, SteerError> {
        sol.values
            .get(&name)
            .cloned()
            .ok_or_else(|| SteerError::Solver(format!("solution is missing variable {name:?}")))
    };
    let mut planned_covs = Vec::with_capacity(nsteps + 1);
    planned_covs.push(spec.init.cov.clone());
    for k in 1..nsteps {
        planned_covs.push(SymMat::new(get(format!("Sigma_{k}"))?)?);
    }
    planned_covs.push(spec.terminal.cov.clone());
    let mut s_vals = Vec::with_capacity(nsteps);
    let mut y_vals = Vec::with_capacity(nsteps);
    let mut lambdas = Vec::new();
    for k in 0..nsteps {
        s_vals.push(get(format!("{s_name}_{k}"))?);
        y_vals.push(SymMat::new(get(format!("Y_{k}"))?)?);
        if robust {
            lambdas.push(get(format!("lambda_{k}"))?[(0, 0)]);
        }
    }
    let mut cost = sol.objective_value;
    for cov in planned_covs.iter().take(nsteps).skip(1) {
        cost -= T::c(TRACE_TIE_BREAK) * cov.as_mat().trace();
    }
    Ok(CovSolve {
        planned_covs,
        s_vals,
        y_vals,
        lambdas,
        cost,
    })
}

fn psd_inverse<T: Scalar>(sigma: &SymMat<T>) -> Result<Mat<T>, SteerError> {
    sigma
        .as_mat()
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| {
            SteerError::Solver("planned covariance is not positive definite".to_string())
        })
}

// ---------------------------------------------------------------------------
// Mean steering
// ---------------------------------------------------------------------------

/// Mean-steering solution: planned means, feedforward inputs, optimal cost,
/// and the verified KKT residual of the underlying quadratic program.
#[derive(Clone, Debug)]
pub struct MeanSolution<T: Scalar> {
    /// Planned means `μ_0..μ_N`.
    pub means: Vec<Vect<T>>,
    /// Feedforward inputs `v_0..v_{N−1}`.
    pub feedforward: Vec<Vect<T>>,
    pub cost: T,
    pub kkt_residual: T,
}

/// Point-estimate closed-loop dynamics `F = (X_{1,T} − Ξ̂)·S†`, partitioned
/// into `(F_μ, F_v)` — the state and input blocks (the stacking of `S` puts
/// inputs first). With an exact noise estimate, `F_μ = A` and `F_v = B`.
pub fn data_dynamics<T: Scalar>(h: &HankelData<T>, est: &NoiseEstimate<T>) -> (Mat<T>, Mat<T>) {
    let f = (&h.x1t - &est.xi_hat) * matlib::pinv(&h.s, None);
    let f_v = f.columns(0, h.m).into_owned();
    let f_mu = f.columns(h.m, h.n).into_owned();
    (f_mu, f_v)
}

/// Equality-constrained quadratic program for the planned means:
/// minimize `Σ_k (μ_kᵀ Q_k μ_k + v_kᵀ R_k v_k)` subject to
/// `μ_{k+1} = F_μ μ_k + F_v v_k`, `μ_0 = μ_i`, `μ_N = μ_f`, solved through
/// its dense KKT system with one step of iterative refinement.
fn mean_qp<T: Scalar>(
    f_mu: &Mat<T>,
    f_v: &Mat<T>,
    spec: &SteeringSpec<T>,
) -> Result<MeanSolution<T>, SteerError> {
    let (n, m, nsteps) = (spec.state_dim(), spec.input_dim(), spec.horizon);
    if f_mu.nrows() != n || f_mu.ncols() != n || f_v.nrows() != n || f_v.ncols() != m {
        return Err(SteerError::Domain(format!(
            "mean dynamics are {}×{} and {}×{}, expected {n}×{n} and {n}×{m}",
            f_mu.nrows(),
            f_mu.ncols(),
            f_v.nrows(),
            f_v.ncols()
        )));
    }
    let nz = nsteps * n + nsteps * m;
    let nc = (nsteps + 1) * n;
    let mu_off = |k: usize| (k - 1) * n; // μ_1..μ_N
    let v_off = |k: usize| nsteps * n + k * m;

    let mut hmat = Mat::<T>::zeros(nz, nz);
    for k in 1..nsteps {
        let two_q = spec.q[k].as_mat() * T::c(2.0);
        hmat.view_mut((mu_off(k), mu_off(k)), (n, n))
            .copy_from(&two_q);
    }
    for k in 0..nsteps {
        let two_r = spec.r[k].as_mat() * T::c(2.0);
        hmat.view_mut((v_off(k), v_off(k)), (m, m))
            .copy_from(&two_r);
    }

    let mut amat = Mat::<T>::zeros(nc, nz);
    let mut b = Vect::<T>::zeros(nc);
    for k in 0..nsteps {
        let row = k * n;
        amat.view_mut((row, mu_off(k + 1)), (n, n))
            .copy_from(&Mat::identity(n, n));
        if k == 0 {
            b.rows_mut(row, n).copy_from(&(f_mu * &spec.init.mean));
        } else {
            amat.view_mut((row, mu_off(k)), (n, n)).copy_from(&(-f_mu));
        }
        amat.view_mut((row, v_off(k)), (n, m)).copy_from(&(-f_v));
    }
    let trow = nsteps * n;
    amat.view_mut((trow, mu_off(nsteps)), (n, n))
        .copy_from(&Mat::identity(n, n));
    b.rows_mut(trow, n).copy_from(&spec.terminal.mean);

    let dim = nz + nc;
    let mut kkt = Mat::<T>::zeros(dim, dim);
    kkt.view_mut((0, 0), (nz, nz)).copy_from(&hmat);
    kkt.view_mut((0, nz), (nz, nc)).copy_from(&amat.transpose());
    kkt.view_mut((nz, 0), (nc, nz)).copy_from(&amat);
    let mut rhs = Vect::<T>::zeros(dim);
    rhs.rows_mut(nz, nc).copy_from(&b);

    let lu = kkt.clone().full_piv_lu();
    let mut z = lu.solve(&rhs).ok_or_else(|| {
        SteerError::UnreachableMean(
            "KKT system is singular — the terminal mean is unreachable under the \
             estimated dynamics"
                .to_string(),
        )
    })?;
    // One step of iterative refinement sharpens the residual.
    let resid = &rhs - &kkt * &z;
    if let Some(corr) = lu.solve(&resid) {
        z += corr;
    }
    let residual = (&rhs - &kkt * &z).amax();
    let scale = T::one() + b.amax();
    if !residual.is_finite() || residual > T::c(1e-6) * scale {
        return Err(SteerError::UnreachableMean(format!(
            "KKT residual {:?} exceeds tolerance — the terminal mean is numerically \
             unreachable",
            residual.to_f64()
        )));
    }

    let mut means = Vec::with_capacity(nsteps + 1);
    means.push(spec.init.mean.clone());
    for k in 1..=nsteps {
        means.push(z.rows(mu_off(k), n).into_owned());
    }
    let mut feedforward = Vec::with_capacity(nsteps);
    for k in 0..nsteps {
        feedforward.push(z.rows(v_off(k), m).into_owned());
    }
    let mut cost = T::zero();
    for k in 0..nsteps {
        cost += (means[k].transpose() * spec.q[k].as_mat() * &means[k])[(0, 0)];
        cost += (feedforward[k].transpose() * spec.r[k].as_mat() * &feedforward[k])[(0, 0)];
    }
    Ok(MeanSolution {
        means,
        feedforward,
        cost,
        kkt_residual: residual,
    })
}

/// Data-driven mean steering from the point estimate `Ξ̂`.
pub fn solve_mean<T: Scalar>(
    h: &HankelData<T>,
    est: &NoiseEstimate<T>,
    spec: &SteeringSpec<T>,
) -> Result<MeanSolution<T>, SteerError> {
    validate_dd_inputs(h, est, spec)?;
    let (f_mu, f_v) = data_dynamics(h, est);
    mean_qp(&f_mu, &f_v, spec)
}

// ---------------------------------------------------------------------------
// Synthesis entry points
// ---------------------------------------------------------------------------

fn validate_dd_inputs<T: Scalar>(
    h: &HankelData<T>,
    est: &NoiseEstimate<T>,
    spec: &SteeringSpec<T>,
) -> Result<(), SteerError> {
    if !h.assumption1() {
        return Err(SteerError::AssumptionViolated {
            rank: h.rank_s,
            needed: h.n + h.m,
        });
    }
    if h.n != spec.state_dim() || h.m != spec.input_dim() {
        return Err(SteerError::Domain(format!(
            "data are for an ({}, {})-dimensional system but the problem is ({}, {})",
            h.n,
            h.m,
            spec.state_dim(),
            spec.input_dim()
        )));
    }
    if est.xi_hat.nrows() != h.n || est.xi_hat.ncols() != h.horizon {
        return Err(SteerError::Domain(format!(
            "noise estimate is {}×{} but the data are {}×{}",
            est.xi_hat.nrows(),
            est.xi_hat.ncols(),
            h.n,
            h.horizon
        )));
    }
    if est.sigma_xi.dim() != h.n {
        return Err(SteerError::Domain(format!(
            "noise covariance is {}×{0} but the state dimension is {}",
            est.sigma_xi.dim(),
            h.n
        )));
    }
    let resid = consistency_residual(h, &est.xi_hat);
    if resid > T::c(1e-6) * (T::one() + h.x1t.norm()) {
        return Err(SteerError::Domain(format!(
            "noise estimate violates the consistency condition (residual {:?})",
            resid.to_f64()
        )));
    }
    Ok(())
}

fn recover_dd_policy<T: Scalar>(
    h: &HankelData<T>,
    cs: CovSolve<T>,
    mean: MeanSolution<T>,
    mode: PolicyMode,
    rho: T,
) -> Result<Policy<T>, SteerError> {
    let mut gains = Vec::with_capacity(cs.s_vals.len());
    let mut g_k = Vec::with_capacity(cs.s_vals.len());
    for (k, s) in cs.s_vals.iter().enumerate() {
        let inv = psd_inverse(&cs.planned_covs[k])?;
        let g = s * inv;
        gains.push(&h.u0t * &g);
        g_k.push(g);
    }
    Ok(Policy {
        mode,
        gains,
        feedforward: mean.feedforward,
        planned_means: mean.means,
        planned_covs: cs.planned_covs,
        cost_mean: mean.cost,
        cost_cov: cs.cost,
        rho,
        aux: PolicyAux {
            s_k: cs.s_vals,
            y_k: cs.y_vals,
            g_k,
            lambda_k: cs.lambdas,
        },
    })
}

/// Nominal data-driven covariance steering: treats the point estimate `Ξ̂`
/// as the truth.
pub fn solve_ddcs<T: Scalar>(
    h: &HankelData<T>,
    est: &NoiseEstimate<T>,
    spec: &SteeringSpec<T>,
    adapter: &dyn SolverAdapter<T>,
) -> Result<Policy<T>, SteerError> {
    validate_dd_inputs(h, est, spec)?;
    let bhat = &h.x1t - &est.xi_hat;
    let p = build_dd_sdp(h, &bhat, &est.sigma_xi, spec, None)?;
    let cs = run_cov_sdp(&p, adapter, spec, "S", false)?;
    let (f_mu, f_v) = data_dynamics(h, est);
    let mean = mean_qp(&f_mu, &f_v, spec)?;
    recover_dd_policy(h, cs, mean, PolicyMode::Dd, T::zero())
}

/// Robust data-driven covariance steering: the synthesized policy satisfies
/// the covariance dynamics for *every* noise realization within two-norm
/// distance `est.rho` of the estimate. At `ρ = 0` this reduces exactly to
/// [`solve_ddcs`].
pub fn solve_rddcs<T: Scalar>(
    h: &HankelData<T>,
    est: &NoiseEstimate<T>,
    spec: &SteeringSpec<T>,
    adapter: &dyn SolverAdapter<T>,
) -> Result<Policy<T>, SteerError> {
    validate_dd_inputs(h, est, spec)?;
    if est.rho < T::zero() {
        return Err(SteerError::Domain(
            "uncertainty radius must be nonnegative".into(),
        ));
    }
    let bhat = &h.x1t - &est.xi_hat;
    let p = build_dd_sdp(h, &bhat, &est.sigma_xi, spec, Some(est.rho))?;
    match run_cov_sdp(&p, adapter, spec, "S", true) {
        Ok(cs) => {
            let (f_mu, f_v) = data_dynamics(h, est);
            let mean = mean_qp(&f_mu, &f_v, spec)?;
            recover_dd_policy(h, cs, mean, PolicyMode::Rdd, est.rho)
        }
        Err(SteerError::Infeasible { diagnostics, .. }) => {
            let largest = largest_feasible_rho(h, &bhat, &est.sigma_xi, spec, adapter, est.rho);
            Err(SteerError::Infeasible {
                diagnostics: format!(
                    "robust synthesis infeasible at rho = {:?}: {}",
                    est.rho.to_f64(),
                    diagnostics
                ),
                largest_feasible_rho: largest,
            })
        }
        // Interior-point iterates blow up instead of producing a clean
        // infeasibility certificate when the radius sits deep in the
        // infeasible regime. Probe smaller radii: if some radius solves,
        // report the usual infeasibility diagnostic (with the bisected
        // radius) so callers can back off; otherwise the failure is a
        // genuine numerical breakdown and propagates unchanged.
        Err(SteerError::Solver(diagnostics)) if est.rho > T::zero() => {
            match largest_feasible_rho(h, &bhat, &est.sigma_xi, spec, adapter, est.rho) {
                Some(largest) => Err(SteerError::Infeasible {
                    diagnostics: format!(
                        "robust synthesis could not be certified at rho = {:?} \
                         (solver failed without an infeasibility certificate: {})",
                        est.rho.to_f64(),
                        diagnostics
                    ),
                    largest_feasible_rho: Some(largest),
                }),
                None => Err(SteerError::Solver(diagnostics)),
            }
        }
        Err(e) => Err(e),
    }
}

/// Bisect for the largest feasible uncertainty radius below `rho_max`
/// (diagnostic aid when robust synthesis fails).
fn largest_feasible_rho<T: Scalar>(
    h: &HankelData<T>,
    bhat: &Mat<T>,
    sigma_xi: &SymMat<T>,
    spec: &SteeringSpec<T>,
    adapter: &dyn SolverAdapter<T>,
    rho_max: T,
) -> Option<f64> {
    let feasible = |rho: T| -> bool {
        build_dd_sdp(h, bhat, sigma_xi, spec, Some(rho))
            .ok()
            .map(|p| run_cov_sdp(&p, adapter, spec, "S", true).is_ok())
            .unwrap_or(false)
    };
    if !feasible(T::zero()) {
        return None;
    }
    let (mut lo, mut hi) = (T::zero(), rho_max);
    for _ in 0..10 {
        let mid = (lo + hi) * T::c(0.5);
        if feasible(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo.to_f64()
}

/// Model-based covariance steering on a known system (the baseline the
/// data-driven programs are compared against; shares their relaxation so the
/// costs compare like with like).
///
/// The relaxed dynamics let the closed loop realize a covariance strictly
/// below the planned chain when that is cheaper; use [`solve_mbcs_exact`]
/// when the realized trajectory itself must meet the terminal pin.
pub fn solve_mbcs<T: Scalar>(
    sys: &LtiSystem<T>,
    spec: &SteeringSpec<T>,
    adapter: &dyn SolverAdapter<T>,
) -> Result<Policy<T>, SteerError> {
    solve_mb_inner(sys, spec, adapter, false)
}

/// Model-based covariance steering with exact closed-loop propagation: the
/// planned chain is constrained to equal the realized one, so the recovered
/// policy steers the covariance to `Σ_f` exactly (at the cost of a larger —
/// never smaller — optimum than [`solve_mbcs`]).
///
/// This is the baseline whose terminal behavior is brittle under model
/// mismatch: it holds the terminal covariance on the boundary of the target
/// set, so perturbing the dynamics or the disturbance generically pushes it
/// outside. The benchmark scenarios use it for exactly that comparison.
pub fn solve_mbcs_exact<T: Scalar>(
    sys: &LtiSystem<T>,
    spec: &SteeringSpec<T>,
    adapter: &dyn SolverAdapter<T>,
) -> Result<Policy<T>, SteerError> {
    solve_mb_inner(sys, spec, adapter, true)
}

fn solve_mb_inner<T: Scalar>(
    sys: &LtiSystem<T>,
    spec: &SteeringSpec<T>,
    adapter: &dyn SolverAdapter<T>,
    exact: bool,
) -> Result<Policy<T>, SteerError> {
    if sys.state_dim() != spec.state_dim() || sys.input_dim() != spec.input_dim() {
        return Err(SteerError::Domain(format!(
            "system is ({}, {})-dimensional but the problem is ({}, {})",
            sys.state_dim(),
            sys.input_dim(),
            spec.state_dim(),
            spec.input_dim()
        )));
    }
    let p = build_mb_sdp(sys, spec, exact)?;
    let cs = run_cov_sdp(&p, adapter, spec, "P", false)?;
    let mean = mean_qp(&sys.a, &sys.b, spec)?;
    let mut gains = Vec::with_capacity(cs.s_vals.len());
    for (k, pk) in cs.s_vals.iter().enumerate() {
        let inv = psd_inverse(&cs.planned_covs[k])?;
        gains.push(pk * inv);
    }
    Ok(Policy {
        mode: PolicyMode::Mb,
        gains,
        feedforward: mean.feedforward,
        planned_means: mean.means,
        planned_covs: cs.planned_covs,
        cost_mean: mean.cost,
        cost_cov: cs.cost,
        rho: T::zero(),
        aux: PolicyAux {
            s_k: cs.s_vals,
            y_k: cs.y_vals,
            g_k: Vec::new(),
            lambda_k: Vec::new(),
        },
    })
}

// ---------------------------------------------------------------------------
// Evaluation and robustness certification
// ---------------------------------------------------------------------------

/// Realized closed-loop behavior of a policy on a (true) system under exact
/// moment propagation.
#[derive(Clone, Debug)]
pub struct EvaluationReport<T: Scalar> {
    /// Realized means `μ_0..μ_N` under `μ_{k+1} = A μ_k + B v_k`.
    pub realized_means: Vec<Vect<T>>,
    /// Realized covariances under
    /// `Σ_{k+1} = (A + B K_k) Σ_k (A + B K_k)ᵀ + Σ_ξ`.
    pub realized_covs: Vec<SymMat<T>>,
    /// `‖μ_N − μ_f‖`.
    pub terminal_mean_error: T,
    /// `min_eig(Σ_f − Σ_N)`: nonnegative iff the realized terminal
    /// covariance is within the target.
    pub terminal_cov_slack: T,
    /// Realized mean-steering cost `Σ_k μ_kᵀ Q_k μ_k + v_kᵀ R_k v_k`.
    pub realized_cost_mean: T,
    /// Realized covariance cost `Σ_k tr(Q_k Σ_k) + tr(R_k K_k Σ_k K_kᵀ)`.
    pub realized_cost_cov: T,
    /// Per-step Frobenius gap between planned and realized covariances
    /// (relaxation slack plus model mismatch).
    pub planned_cov_gap: Vec<T>,
}

/// Propagate the decoupled closed-loop moment recursions of a policy on the
/// given system and compare against the plan and the terminal target.
pub fn evaluate_policy<T: Scalar>(
    sys: &LtiSystem<T>,
    policy: &Policy<T>,
    spec: &SteeringSpec<T>,
) -> Result<EvaluationReport<T>, SteerError> {
    let nsteps = policy.horizon();
    if nsteps != spec.horizon {
        return Err(SteerError::Domain(format!(
            "policy horizon {} vs problem horizon {}",
            nsteps, spec.horizon
        )));
    }
    if sys.state_dim() != spec.state_dim() || sys.input_dim() != spec.input_dim() {
        return Err(SteerError::Domain(format!(
            "system is ({}, {})-dimensional but the problem is ({}, {})",
            sys.state_dim(),
            sys.input_dim(),
            spec.state_dim(),
            spec.input_dim()
        )));
    }
    if policy.planned_covs.len() != nsteps + 1
        || policy.planned_means.len() != nsteps + 1
        || policy.feedforward.len() != nsteps
    {
        return Err(SteerError::Domain(
            "policy plan lengths disagree with its horizon".into(),
        ));
    }
    let (n, m) = (sys.state_dim(), sys.input_dim());
    if policy
        .gains
        .iter()
        .any(|k| k.nrows() != m || k.ncols() != n)
        || policy.feedforward.iter().any(|v| v.len() != m)
        || policy.planned_means.iter().any(|mu| mu.len() != n)
        || policy.planned_covs.iter().any(|c| c.dim() != n)
    {
        return Err(SteerError::Domain(format!(
            "policy is sized for a different system than the ({n}, {m})-dimensional one \
             under evaluation"
        )));
    }
    let sigma_xi = sys.sigma_xi();
    let mut means = Vec::with_capacity(nsteps + 1);
    let mut covs = Vec::with_capacity(nsteps + 1);
    means.push(spec.init.mean.clone());
    covs.push(spec.init.cov.clone());
    for k in 0..nsteps {
        means.push(&sys.a * &means[k] + &sys.b * &policy.feedforward[k]);
        let acl = &sys.a + &sys.b * &policy.gains[k];
        let next = &acl * covs[k].as_mat() * acl.transpose() + sigma_xi.as_mat();
        covs.push(SymMat::new(next)?);
    }
    let terminal_mean_error = (&means[nsteps] - &spec.terminal.mean).norm();
    let slack = SymMat::new(spec.terminal.cov.as_mat() - covs[nsteps].as_mat())?;
    let terminal_cov_slack = slack.min_eig();
    let mut cost_mean = T::zero();
    let mut cost_cov = T::zero();
    for k in 0..nsteps {
        cost_mean += (means[k].transpose() * spec.q[k].as_mat() * &means[k])[(0, 0)];
        cost_mean += (policy.feedforward[k].transpose()
            * spec.r[k].as_mat()
            * &policy.feedforward[k])[(0, 0)];
        cost_cov += (spec.q[k].as_mat() * covs[k].as_mat()).trace();
        let kck = &policy.gains[k] * covs[k].as_mat() * policy.gains[k].transpose();
        cost_cov += (spec.r[k].as_mat() * kck).trace();
    }
    let planned_cov_gap = policy
        .planned_covs
        .iter()
        .zip(covs.iter())
        .map(|(p, r)| (p.as_mat() - r.as_mat()).norm())
        .collect();
    Ok(EvaluationReport {
        realized_means: means,
        realized_covs: covs,
        terminal_mean_error,
        terminal_cov_slack,
        realized_cost_mean: cost_mean,
        realized_cost_cov: cost_cov,
        planned_cov_gap,
    })
}

/// The pieces of one step's uncertain dynamics constraint: nominal block
/// `Ĝ`, perturbation shape `L(S_k) = [0, −S_k]`, selector `R̄ = [I, 0]`, and
/// the uncertainty radius. The perturbed constraint is
/// `Ĝ + R̄ᵀ ΔΞ L + Lᵀ ΔΞᵀ R̄ ⪰ 0`.
#[derive(Clone, Debug)]
pub struct RobustLmiParts<T: Scalar> {
    pub g_hat: SymMat<T>,
    pub l_of_s: Mat<T>,
    pub r_blk: Mat<T>,
    pub rho: T,
}

impl<T: Scalar> RobustLmiParts<T> {
    /// Assemble the parts for step `k` of a solved data-driven policy.
    pub fn from_policy(
        h: &HankelData<T>,
        est: &NoiseEstimate<T>,
        policy: &Policy<T>,
        k: usize,
    ) -> Result<Self, SteerError> {
        let (n, t) = (h.n, h.horizon);
        if k >= policy.horizon() {
            return Err(SteerError::Domain(format!(
                "step {k} is outside the policy horizon {}",
                policy.horizon()
            )));
        }
        let s_k = policy.aux.s_k.get(k).ok_or_else(|| {
            SteerError::Domain("policy carries no per-step solver variables".into())
        })?;
        if s_k.nrows() != t || s_k.ncols() != n {
            return Err(SteerError::Domain(format!(
                "stored variable {k} is {}×{}, expected {t}×{n} (data-driven modes only)",
                s_k.nrows(),
                s_k.ncols()
            )));
        }
        let bhat = &h.x1t - &est.xi_hat;
        let top_right = &bhat * s_k;
        let mut g = Mat::zeros(2 * n, 2 * n);
        g.view_mut((0, 0), (n, n))
            .copy_from(&(policy.planned_covs[k + 1].as_mat() - est.sigma_xi.as_mat()));
        g.view_mut((0, n), (n, n)).copy_from(&top_right);
        g.view_mut((n, 0), (n, n)).copy_from(&top_right.transpose());
        g.view_mut((n, n), (n, n))
            .copy_from(policy.planned_covs[k].as_mat());
        let mut l = Mat::zeros(t, 2 * n);
        l.view_mut((0, n), (t, n)).copy_from(&(-s_k));
        let mut r_blk = Mat::zeros(n, 2 * n);
        r_blk
            .view_mut((0, 0), (n, n))
            .copy_from(&Mat::identity(n, n));
        Ok(RobustLmiParts {
            g_hat: SymMat::new(g)?,
            l_of_s: l,
            r_blk,
            rho: policy.rho,
        })
    }

    /// The perturbation block `R̄ᵀ ΔΞ L + Lᵀ ΔΞᵀ R̄` alone.
    pub fn perturbation(&self, delta_xi: &Mat<T>) -> Mat<T> {
        let half = self.r_blk.transpose() * delta_xi * &self.l_of_s;
        &half + half.transpose()
    }

    /// The uncertain constraint block at a concrete realization error.
    pub fn uncertain_lmi(&self, delta_xi: &Mat<T>) -> Result<SymMat<T>, SteerError> {
        Ok(SymMat::new(
            self.g_hat.as_mat() + self.perturbation(delta_xi),
        )?)
    }
}

/// Outcome of sample-based robustness certification.
#[derive(Clone, Debug)]
pub struct RobustCertification<T: Scalar> {
    pub samples: usize,
    /// Most negative eigenvalue seen over all samples and steps.
    pub min_eig: T,
    /// Number of samples for which some step's block dipped below `−tol`.
    pub violations: usize,
}

/// Draw `samples` random realization errors with `‖ΔΞ‖₂ ≤ ρ` (alternating
/// between the sphere boundary, where the constraint binds, and the interior)
/// and verify every step's uncertain dynamics block stays PSD to `−tol`.
pub fn certify_robust<T: Scalar>(
    h: &HankelData<T>,
    est: &NoiseEstimate<T>,
    policy: &Policy<T>,
    samples: usize,
    seed: u64,
    tol: T,
) -> Result<RobustCertification<T>, SteerError> {
    let parts: Vec<RobustLmiParts<T>> = (0..policy.horizon())
        .map(|k| RobustLmiParts::from_policy(h, est, policy, k))
        .collect::<Result<_, _>>()?;
    let (n, t) = (h.n, h.horizon);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_CERTIFY);
    let mut min_eig = T::zero();
    let mut first = true;
    let mut violations = 0;
    for i in 0..samples {
        let raw = Mat::from_fn(n, t, |_, _| {
            let z: f64 = rng.sample(StandardNormal);
            T::c(z)
        });
        let norm = matlib::spectral_norm(&raw);
        let radius = if i % 2 == 0 {
            policy.rho
        } else {
            policy.rho * T::c(rng.random::<f64>())
        };
        let delta = if norm > T::zero() {
            raw * (radius / norm)
        } else {
            raw
        };
        let mut sample_min = T::zero();
        let mut sample_first = true;
        for part in &parts {
            let me = part.uncertain_lmi(&delta)?.min_eig();
            if sample_first || me < sample_min {
                sample_min = me;
                sample_first = false;
            }
        }
        if first || sample_min < min_eig {
            min_eig = sample_min;
            first = false;
        }
        if sample_min < -tol {
            violations += 1;
        }
    }
    Ok(RobustCertification {
        samples,
        min_eig,
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimate::{estimate_analytic, SigmaSource};
    use crate::sdpcore::ClarabelAdapter;
    use crate::sysdata::{build_hankel, excitation_input, simulate, Dataset};
    use approx::assert_relative_eq;

    fn adapter() -> ClarabelAdapter {
        ClarabelAdapter::new()
    }

    fn v(xs: &[f64]) -> Vect<f64> {
        Vect::from_column_slice(xs)
    }

    /// The double-integrator benchmark: zero state cost, unit input cost,
    /// `N = 10`, `x₀ ~ N([30, 1], diag(1, 0.5))`, target `N([−10, 0], 0.5·I)`.
    fn bench_spec() -> SteeringSpec<f64> {
        SteeringSpec::uniform(
            10,
            SymMat::zeros(2),
            SymMat::identity(1),
            GaussianMoments::new(v(&[30.0, 1.0]), SymMat::from_diagonal(&[1.0, 0.5])).unwrap(),
            GaussianMoments::new(v(&[-10.0, 0.0]), SymMat::scaled_identity(2, 0.5)).unwrap(),
        )
        .unwrap()
    }

    fn bench_dataset(seed: u64) -> (LtiSystem<f64>, Dataset<f64>) {
        let sys = LtiSystem::double_integrator();
        let x0 = GaussianMoments::new(v(&[30.0, 1.0]), SymMat::from_diagonal(&[1.0, 0.5])).unwrap();
        let input = excitation_input(1, 15, 1.0, seed);
        let ds = simulate(&sys, &x0, &input, 15, seed).unwrap();
        (sys, ds)
    }

    /// Exact-noise estimate: `Ξ̂ = Ξ_true`, known covariance.
    fn oracle_estimate(sys: &LtiSystem<f64>, ds: &Dataset<f64>) -> NoiseEstimate<f64> {
        let xi_true = matlib::hankel(ds.true_noise.as_ref().unwrap(), 0, 1, ds.horizon).unwrap();
        NoiseEstimate {
            xi_hat: xi_true,
            sigma_xi: sys.sigma_xi(),
            sigma_source: SigmaSource::Known,
            delta: 0.001,
            rho: 0.0,
        }
    }

    #[test]
    fn spec_validation_rejects_bad_shapes() {
        let init = GaussianMoments::new(v(&[0.0]), SymMat::identity(1)).unwrap();
        let term = GaussianMoments::new(v(&[1.0]), SymMat::identity(1)).unwrap();
        // Wrong weight count.
        assert!(SteeringSpec::new(
            2,
            vec![SymMat::zeros(1)],
            vec![SymMat::identity(1); 2],
            init.clone(),
            term.clone()
        )
        .is_err());
        // Singular input weight.
        assert!(SteeringSpec::uniform(
            2,
            SymMat::zeros(1),
            SymMat::zeros(1),
            init.clone(),
            term.clone()
        )
        .is_err());
        // Singular terminal covariance.
        let flat =
            GaussianMoments::new(v(&[0.0, 0.0]), SymMat::from_diagonal(&[1.0, 0.0])).unwrap();
        let init2 = GaussianMoments::new(v(&[0.0, 0.0]), SymMat::identity(2)).unwrap();
        assert!(
            SteeringSpec::uniform(2, SymMat::zeros(2), SymMat::identity(1), init2, flat).is_err()
        );
    }

    #[test]
    fn mb_one_step_scalar_closed_form() {
        // A = B = 1, Σ_ξ = 0.5, Σ_i = 1, Σ_f = 1, N = 1: the dynamics block
        // forces (1 + K)² ≤ Σ_f − Σ_ξ = 0.5, so the cheapest gain is
        // K = −1 + √0.5 with cost Y = K² = 1.5 − √2.
        let sys = LtiSystem::new(
            Mat::from_element(1, 1, 1.0),
            Mat::from_element(1, 1, 1.0),
            Mat::from_element(1, 1, 0.5f64.sqrt()),
        )
        .unwrap();
        let spec = SteeringSpec::uniform(
            1,
            SymMat::zeros(1),
            SymMat::identity(1),
            GaussianMoments::new(v(&[0.0]), SymMat::identity(1)).unwrap(),
            GaussianMoments::new(v(&[0.0]), SymMat::identity(1)).unwrap(),
        )
        .unwrap();
        let policy = solve_mbcs(&sys, &spec, &adapter()).unwrap();
        assert_relative_eq!(policy.cost_cov, 1.5 - 2.0f64.sqrt(), epsilon = 1e-6);
        assert_relative_eq!(
            policy.gains[0][(0, 0)],
            -1.0 + 0.5f64.sqrt(),
            epsilon = 1e-5
        );
        assert_eq!(policy.cost_mean, 0.0);
        assert!(policy.feedforward[0].norm() <= 1e-9);
        let report = evaluate_policy(&sys, &policy, &spec).unwrap();
        assert!(report.terminal_cov_slack >= -1e-6);
        assert_relative_eq!(
            report.realized_covs[1].as_mat()[(0, 0)],
            1.0,
            epsilon = 1e-5
        );
    }

    #[test]
    fn mb_benchmark_hits_terminal_moments() {
        let sys = LtiSystem::double_integrator();
        let spec = bench_spec();
        let policy = solve_mbcs(&sys, &spec, &adapter()).unwrap();
        assert_eq!(policy.mode, PolicyMode::Mb);
        assert_eq!(policy.horizon(), 10);
        // Planned boundary conditions are pinned by construction.
        assert_eq!(policy.planned_covs[0], spec.init.cov);
        assert_eq!(policy.planned_covs[10], spec.terminal.cov);
        let report = evaluate_policy(&sys, &policy, &spec).unwrap();
        assert!(
            report.terminal_mean_error <= 1e-6,
            "terminal mean error {}",
            report.terminal_mean_error
        );
        assert!(
            report.terminal_cov_slack >= -1e-6,
            "terminal covariance slack {}",
            report.terminal_cov_slack
        );
        assert!(policy.cost_cov >= 0.0 && policy.cost_mean >= 0.0);
    }

    #[test]
    fn mb_exact_variant_realizes_terminal_pin() {
        let sys = LtiSystem::double_integrator();
        let spec = bench_spec();
        let relaxed = solve_mbcs(&sys, &spec, &adapter()).unwrap();
        let exact = solve_mbcs_exact(&sys, &spec, &adapter()).unwrap();

        // The exact program is a restriction, so it can only cost more.
        assert!(exact.cost_cov >= relaxed.cost_cov - 1e-8);

        // Its closed loop reproduces the planned chain, terminal pin included.
        let report = evaluate_policy(&sys, &exact, &spec).unwrap();
        for (k, gap) in report.planned_cov_gap.iter().enumerate() {
            assert!(*gap <= 1e-4, "step {k}: planned-vs-realized gap {gap}");
        }
        let terminal = report.realized_covs.last().unwrap();
        let diff = (terminal.as_mat() - spec.terminal.cov.as_mat()).amax();
        assert!(diff <= 1e-5, "realized terminal is off the pin by {diff}");

        // That exactness is brittle: the same gains on a slightly different
        // model overshoot the target set, while the relaxed baseline's
        // undershooting closed loop absorbs the same perturbation.
        let mut da = Mat::zeros(2, 2);
        da[(0, 1)] = 0.05;
        let db = Mat::from_fn(2, 1, |r, _| if r == 1 { 0.05 } else { 0.0 });
        let perturbed = sys.perturbed(Some(&da), Some(&db), None).unwrap();
        let brittle = evaluate_policy(&perturbed, &exact, &spec).unwrap();
        assert!(
            brittle.terminal_cov_slack < -1e-3,
            "exact baseline unexpectedly robust: slack {}",
            brittle.terminal_cov_slack
        );
        let sturdy = evaluate_policy(&perturbed, &relaxed, &spec).unwrap();
        assert!(
            sturdy.terminal_cov_slack >= -1e-6,
            "relaxed baseline slack {}",
            sturdy.terminal_cov_slack
        );
    }

    #[test]
    fn mb_uncontrollable_is_infeasible() {
        // No input authority and open-loop growth: the terminal covariance
        // Σ_i + N·Σ_ξ cannot be squeezed back down to Σ_f.
        let sys = LtiSystem::new(
            Mat::identity(2, 2),
            Mat::zeros(2, 1),
            Mat::identity(2, 2) * 0.5,
        )
        .unwrap();
        let spec = SteeringSpec::uniform(
            3,
            SymMat::zeros(2),
            SymMat::identity(1),
            GaussianMoments::new(v(&[0.0, 0.0]), SymMat::identity(2)).unwrap(),
            GaussianMoments::new(v(&[0.0, 0.0]), SymMat::scaled_identity(2, 0.5)).unwrap(),
        )
        .unwrap();
        match solve_mbcs(&sys, &spec, &adapter()) {
            Err(SteerError::Infeasible { .. }) => {}
            other => panic!("expected infeasibility, got {other:?}"),
        }
    }

    #[test]
    fn dd_with_exact_noise_matches_mb() {
        for seed in [5u64, 6, 7] {
            let mut rng = ChaCha12Rng::seed_from_u64(900 + seed);
            let a = Mat::from_fn(2, 2, |_, _| 0.6 * rng.random_range(-1.0..1.0));
            let b = Mat::from_fn(2, 1, |_, _| rng.random_range(-1.0..1.0) + 0.5);
            let sys = LtiSystem::new(a, b, Mat::identity(2, 2) * 0.1).unwrap();
            let x0 = GaussianMoments::new(v(&[0.0, 0.0]), SymMat::identity(2)).unwrap();
            let input = excitation_input(1, 12, 1.0, seed);
            let ds = simulate(&sys, &x0, &input, 12, seed).unwrap();
            let h = build_hankel(&ds, None).unwrap();
            assert!(h.assumption1());
            let est = oracle_estimate(&sys, &ds);
            let spec = SteeringSpec::uniform(
                5,
                SymMat::identity(2),
                SymMat::identity(1),
                GaussianMoments::new(v(&[1.0, -1.0]), SymMat::identity(2)).unwrap(),
                GaussianMoments::new(v(&[0.0, 0.0]), SymMat::identity(2)).unwrap(),
            )
            .unwrap();
            let dd = solve_ddcs(&h, &est, &spec, &adapter()).unwrap();
            let mb = solve_mbcs(&sys, &spec, &adapter()).unwrap();
            let rel = (dd.cost_cov - mb.cost_cov).abs() / (1.0 + mb.cost_cov.abs());
            assert!(rel <= 1e-4, "seed {seed}: cost gap {rel}");
            for k in 0..=5 {
                let gap = (dd.planned_covs[k].as_mat() - mb.planned_covs[k].as_mat()).amax();
                let scale = 1.0 + mb.planned_covs[k].as_mat().amax();
                assert!(gap / scale <= 1e-4, "seed {seed} step {k}: cov gap {gap}");
            }
        }
    }

    #[test]
    fn dd_benchmark_recovery_invariants() {
        let (sys, ds) = bench_dataset(17);
        let h = build_hankel(&ds, None).unwrap();
        let est = estimate_analytic(&h, &sys.sigma_xi(), 0.001).unwrap();
        let spec = bench_spec();
        let policy = solve_ddcs(&h, &est, &spec, &adapter()).unwrap();
        assert_eq!(policy.mode, PolicyMode::Dd);
        assert_eq!(policy.rho, 0.0);
        for k in 0..policy.horizon() {
            let s = &policy.aux.s_k[k];
            let sig = &policy.planned_covs[k];
            // Coupling Σ_k = X_{0,T} S_k.
            let coupling = (&h.x0t * s - sig.as_mat()).amax();
            assert!(
                coupling <= 1e-6 * (1.0 + sig.as_mat().amax()),
                "step {k}: coupling residual {coupling}"
            );
            // Gain recovery [U; X]·G_k = [K_k; I].
            let g = &policy.aux.g_k[k];
            assert!((&h.u0t * g - &policy.gains[k]).amax() <= 1e-10);
            let xg = &h.x0t * g;
            assert!(
                (&xg - Mat::identity(2, 2)).amax() <= 1e-6,
                "step {k}: X·G deviates from identity by {}",
                (&xg - Mat::identity(2, 2)).amax()
            );
            // Schur certificates of both blocks.
            let inv = psd_inverse(sig).unwrap();
            let y_slack =
                SymMat::new(policy.aux.y_k[k].as_mat() - s * &inv * s.transpose()).unwrap();
            let y_scale = 1.0 + policy.aux.y_k[k].max_eig();
            assert!(
                y_slack.min_eig() >= -1e-7 * y_scale,
                "step {k}: cost Schur slack {}",
                y_slack.min_eig()
            );
            let bhat = &h.x1t - &est.xi_hat;
            let bs = &bhat * s;
            let dyn_slack = SymMat::new(
                policy.planned_covs[k + 1].as_mat()
                    - &bs * &inv * bs.transpose()
                    - est.sigma_xi.as_mat(),
            )
            .unwrap();
            let d_scale = 1.0 + policy.planned_covs[k + 1].max_eig();
            assert!(
                dyn_slack.min_eig() >= -1e-6 * d_scale,
                "step {k}: dynamics Schur slack {}",
                dyn_slack.min_eig()
            );
        }
    }

    #[test]
    fn rdd_at_zero_rho_reduces_to_dd() {
        let (sys, ds) = bench_dataset(23);
        let h = build_hankel(&ds, None).unwrap();
        let mut est = estimate_analytic(&h, &sys.sigma_xi(), 0.001).unwrap();
        est.rho = 0.0;
        let spec = bench_spec();
        let dd = solve_ddcs(&h, &est, &spec, &adapter()).unwrap();
        let rdd = solve_rddcs(&h, &est, &spec, &adapter()).unwrap();
        assert_eq!(rdd.mode, PolicyMode::Rdd);
        let rel = (dd.cost_cov - rdd.cost_cov).abs() / (1.0 + dd.cost_cov.abs());
        assert!(rel <= 1e-6, "cost gap {rel}");
    }

    #[test]
    fn rdd_cost_monotone_in_rho_and_certified() {
        let (sys, ds) = bench_dataset(29);
        let h = build_hankel(&ds, None).unwrap();
        let base = estimate_analytic(&h, &sys.sigma_xi(), 0.001).unwrap();
        let rho_star = base.rho;
        assert!(rho_star > 0.5 && rho_star < 1.0);
        let spec = bench_spec();
        let mut costs = Vec::new();
        for rho in [0.0, rho_star / 2.0, rho_star] {
            let mut est = base.clone();
            est.rho = rho;
            let policy = solve_rddcs(&h, &est, &spec, &adapter()).unwrap();
            for lam in &policy.aux.lambda_k {
                assert!(*lam >= -1e-9, "negative multiplier {lam}");
            }
            costs.push(policy.cost_cov);
            if rho == rho_star {
                let cert = certify_robust(&h, &est, &policy, 1000, 7, 1e-7).unwrap();
                assert_eq!(
                    cert.violations, 0,
                    "robust certification failed: min eig {}",
                    cert.min_eig
                );
            }
        }
        assert!(costs[0] <= costs[1] + 1e-6 * (1.0 + costs[1].abs()));
        assert!(costs[1] <= costs[2] + 1e-6 * (1.0 + costs[2].abs()));
    }

    #[test]
    fn rdd_infeasible_reports_largest_radius() {
        let mut rng = ChaCha12Rng::seed_from_u64(55);
        let a = Mat::from_fn(2, 2, |_, _| 0.5 * rng.random_range(-1.0..1.0));
        let b = Mat::from_fn(2, 1, |_, _| rng.random_range(0.5..1.0));
        let sys = LtiSystem::new(a, b, Mat::identity(2, 2) * 0.1).unwrap();
        let x0 = GaussianMoments::new(v(&[0.0, 0.0]), SymMat::identity(2)).unwrap();
        let input = excitation_input(1, 8, 1.0, 3);
        let ds = simulate(&sys, &x0, &input, 8, 3).unwrap();
        let h = build_hankel(&ds, None).unwrap();
        let mut est = oracle_estimate(&sys, &ds);
        est.rho = 50.0;
        let spec = SteeringSpec::uniform(
            3,
            SymMat::zeros(2),
            SymMat::identity(1),
            GaussianMoments::new(v(&[0.0, 0.0]), SymMat::identity(2)).unwrap(),
            GaussianMoments::new(v(&[0.0, 0.0]), SymMat::scaled_identity(2, 0.25)).unwrap(),
        )
        .unwrap();
        match solve_rddcs(&h, &est, &spec, &adapter()) {
            Err(SteerError::Infeasible {
                largest_feasible_rho: Some(r),
                ..
            }) => {
                assert!(r > 0.0 && r < 50.0, "implausible bisection result {r}");
            }
            other => panic!("expected infeasibility with a bisected radius, got {other:?}"),
        }
    }

    #[test]
    fn mean_steering_exact_model_reaches_target() {
        let (sys, ds) = bench_dataset(31);
        let h = build_hankel(&ds, None).unwrap();
        let est = oracle_estimate(&sys, &ds);
        let spec = bench_spec();
        let mean = solve_mean(&h, &est, &spec).unwrap();
        assert!(
            (&mean.means[10] - &spec.terminal.mean).norm() <= 1e-8,
            "terminal miss {}",
            (&mean.means[10] - &spec.terminal.mean).norm()
        );
        assert!(mean.kkt_residual <= 1e-8);
        // The plan respects the estimated dynamics step by step.
        let (f_mu, f_v) = data_dynamics(&h, &est);
        for k in 0..10 {
            let pred = &f_mu * &mean.means[k] + &f_v * &mean.feedforward[k];
            assert!((&mean.means[k + 1] - pred).norm() <= 1e-8);
        }
        // Exact estimate ⇒ the recovered dynamics are the true ones.
        assert!((&f_mu - &sys.a).amax() <= 1e-8);
        assert!((&f_v - &sys.b).amax() <= 1e-8);
    }

    #[test]
    fn mean_steering_zero_endpoints_zero_plan() {
        let (sys, ds) = bench_dataset(37);
        let h = build_hankel(&ds, None).unwrap();
        let est = oracle_estimate(&sys, &ds);
        let spec = SteeringSpec::uniform(
            4,
            SymMat::identity(2),
            SymMat::identity(1),
            GaussianMoments::new(v(&[0.0, 0.0]), SymMat::identity(2)).unwrap(),
            GaussianMoments::new(v(&[0.0, 0.0]), SymMat::identity(2)).unwrap(),
        )
        .unwrap();
        let mean = solve_mean(&h, &est, &spec).unwrap();
        for mu in &mean.means {
            assert!(mu.norm() <= 1e-9);
        }
        for vk in &mean.feedforward {
            assert!(vk.norm() <= 1e-9);
        }
        assert!(mean.cost.abs() <= 1e-12);
    }

    #[test]
    fn evaluate_zero_policy_is_open_loop() {
        let sys = LtiSystem::double_integrator();
        let spec = bench_spec();
        let policy = Policy {
            mode: PolicyMode::Mb,
            gains: vec![Mat::zeros(1, 2); 10],
            feedforward: vec![Vect::zeros(1); 10],
            planned_means: vec![v(&[0.0, 0.0]); 11],
            planned_covs: vec![SymMat::identity(2); 11],
            cost_mean: 0.0,
            cost_cov: 0.0,
            rho: 0.0,
            aux: PolicyAux::default(),
        };
        let report = evaluate_policy(&sys, &policy, &spec).unwrap();
        // Open-loop recursion: Σ' = AΣAᵀ + Σ_ξ, μ' = Aμ.
        let mut mu = spec.init.mean.clone();
        let mut cov = spec.init.cov.as_mat().clone();
        for k in 0..=10 {
            assert!((&report.realized_means[k] - &mu).norm() <= 1e-9);
            assert!((report.realized_covs[k].as_mat() - &cov).amax() <= 1e-9);
            if k < 10 {
                mu = &sys.a * &mu;
                cov = &sys.a * &cov * sys.a.transpose() + sys.sigma_xi().as_mat();
            }
        }
        assert!(report.terminal_mean_error > 1.0);
        assert!(report.terminal_cov_slack < 0.0);
    }

    #[test]
    fn robust_lmi_parts_reconstruction() {
        let (sys, ds) = bench_dataset(41);
        let h = build_hankel(&ds, None).unwrap();
        let mut est = estimate_analytic(&h, &sys.sigma_xi(), 0.001).unwrap();
        est.rho = 0.3;
        let spec = bench_spec();
        let policy = solve_rddcs(&h, &est, &spec, &adapter()).unwrap();
        let parts = RobustLmiParts::from_policy(&h, &est, &policy, 4).unwrap();
        // Selector identity R̄ᵀR̄ = blkdiag(I, 0).
        let rr = parts.r_blk.transpose() * &parts.r_blk;
        let mut expect = Mat::zeros(4, 4);
        expect
            .view_mut((0, 0), (2, 2))
            .copy_from(&Mat::identity(2, 2));
        assert!((rr - expect).amax() <= 1e-12);
        // Perturbation reconstruction against the direct block form.
        let mut rng = ChaCha12Rng::seed_from_u64(4242);
        for _ in 0..5 {
            let delta = Mat::from_fn(2, 15, |_, _| rng.random_range(-1.0..1.0));
            let pert = parts.perturbation(&delta);
            let ds_blk = &delta * &policy.aux.s_k[4];
            let mut direct = Mat::zeros(4, 4);
            direct.view_mut((0, 2), (2, 2)).copy_from(&(-&ds_blk));
            direct
                .view_mut((2, 0), (2, 2))
                .copy_from(&(-ds_blk.transpose()));
            assert!((pert - direct).amax() <= 1e-12);
        }
    }

    #[test]
    fn dd_rejects_poor_data() {
        let sys = LtiSystem::double_integrator();
        let x0 = GaussianMoments::new(v(&[0.0, 0.0]), SymMat::identity(2)).unwrap();
        let input = excitation_input(1, 2, 1.0, 9);
        let ds = simulate(&sys, &x0, &input, 2, 9).unwrap();
        let h = build_hankel(&ds, None).unwrap();
        assert!(!h.assumption1());
        let est = oracle_estimate(&sys, &ds);
        match solve_ddcs(&h, &est, &bench_spec(), &adapter()) {
            Err(SteerError::AssumptionViolated { rank, needed }) => {
                assert!(rank < needed);
            }
            other => panic!("expected an assumption violation, got {other:?}"),
        }
    }

    #[test]
    fn policy_json_schema_and_roundtrip() {
        let sys = LtiSystem::double_integrator();
        let spec = bench_spec();
        let policy = solve_mbcs(&sys, &spec, &adapter()).unwrap();
        let text = policy.to_json();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        let obj = value.as_object().unwrap();
        let mut keys: Vec<_> = obj.keys().map(String::as_str).collect();
        keys.sort_unstable();
        assert_eq!(
            keys,
            [
                "N",
                "cost",
                "feedforward",
                "gains",
                "mode",
                "planned_covs",
                "planned_means",
                "rho"
            ]
        );
        assert_eq!(obj["mode"], "mb");
        assert_eq!(obj["N"], 10);
        let cost = obj["cost"].as_object().unwrap();
        assert!(cost.contains_key("mean") && cost.contains_key("cov"));
        let back = Policy::<f64>::from_json(&text).unwrap();
        assert_eq!(back.mode, PolicyMode::Mb);
        assert_eq!(back.horizon(), 10);
        for k in 0..10 {
            assert!((&back.gains[k] - &policy.gains[k]).amax() <= 1e-12);
        }
        assert_relative_eq!(back.cost_cov, policy.cost_cov, epsilon = 1e-12);
        // Auxiliary solver values are deliberately not serialized.
        assert!(back.aux.s_k.is_empty());
    }

    #[test]
    fn policy_json_rejects_inconsistent_payloads() {
        let short = r#"{"mode":"dd","N":2,"gains":[[[0.0,0.0]]],"feedforward":[[0.0],[0.0]],
            "planned_means":[[0.0,0.0],[0.0,0.0],[0.0,0.0]],
            "planned_covs":[[[1.0,0.0],[0.0,1.0]],[[1.0,0.0],[0.0,1.0]],[[1.0,0.0],[0.0,1.0]]],
            "cost":{"mean":0.0,"cov":0.0},"rho":0.0}"#;
        assert!(Policy::<f64>::from_json(short).is_err());
        let bad_rho = r#"{"mode":"dd","N":1,"gains":[[[0.0,0.0]]],"feedforward":[[0.0]],
            "planned_means":[[0.0,0.0],[0.0,0.0]],
            "planned_covs":[[[1.0,0.0],[0.0,1.0]],[[1.0,0.0],[0.0,1.0]]],
            "cost":{"mean":0.0,"cov":0.0},"rho":-0.5}"#;
        assert!(Policy::<f64>::from_json(bad_rho).is_err());
    }
}
