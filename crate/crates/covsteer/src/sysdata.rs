//! Ground-truth LTI system simulation, excitation-input generation, dataset
//! collection, Hankel assembly, persistence-of-excitation checks, and Monte
//! Carlo closed-loop validation.
//!
//! All randomness flows from a single `u64` master seed through per-purpose
//! ChaCha12 streams, so every artifact is bit-reproducible: the excitation
//! input, the simulated trajectory, and each Monte Carlo trial draw from
//! separate, deterministic streams.

use crate::matlib::{self, MatError, SymMat};
use crate::steer::Policy;
use crate::{Mat, Scalar, Vect};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised while simulating, collecting, or serializing data.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error(transparent)]
    Mat(#[from] MatError),
    #[error("serialization error: {0}")]
    Serde(String),
}

// Distinct ChaCha stream ids per purpose, all keyed by the master seed.
const STREAM_EXCITATION: u64 = 1;
const STREAM_SIMULATE: u64 = 2;
const STREAM_MC_BASE: u64 = 1 << 32;

fn seeded_stream(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn std_normal<T: Scalar>(rng: &mut ChaCha12Rng) -> T {
    T::c(rng.sample::<f64, _>(StandardNormal))
}

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

/// Ground-truth discrete-time system `x_{k+1} = A x_k + B u_k + D w_k` with
/// `w_k ~ N(0, I)`.
#[derive(Clone, Debug)]
pub struct LtiSystem<T: Scalar> {
    pub a: Mat<T>,
    pub b: Mat<T>,
    pub d: Mat<T>,
}

impl<T: Scalar> LtiSystem<T> {
    pub fn new(a: Mat<T>, b: Mat<T>, d: Mat<T>) -> Result<Self, DataError> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(DataError::Dimension(format!(
                "A must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != n {
            return Err(DataError::Dimension(format!(
                "B must have {} rows, got {}",
                n,
                b.nrows()
            )));
        }
        if d.nrows() != n {
            return Err(DataError::Dimension(format!(
                "D must have {} rows, got {}",
                n,
                d.nrows()
            )));
        }
        for m in [&a, &b, &d] {
            matlib::check_finite(m)?;
        }
        Ok(LtiSystem { a, b, d })
    }

    /// State dimension `n`.
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    /// Input dimension `m`.
    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// Disturbance-channel dimension (columns of `D`).
    pub fn noise_dim(&self) -> usize {
        self.d.ncols()
    }

    /// Process-noise covariance `Σ_ξ = D Dᵀ`.
    pub fn sigma_xi(&self) -> SymMat<T> {
        SymMat::new(&self.d * self.d.transpose()).expect("DDᵀ is square and finite")
    }

    /// Benchmark double integrator (unit sampling time) with disturbance
    /// matrix `0.1·I₂`.
    pub fn double_integrator() -> Self {
        let a = Mat::from_fn(2, 2, |i, j| {
            if i == j || (i == 0 && j == 1) {
                T::one()
            } else {
                T::zero()
            }
        });
        let b = Mat::from_fn(2, 1, |i, _| if i == 1 { T::one() } else { T::zero() });
        let d = Mat::identity(2, 2) * T::c(0.1);
        LtiSystem { a, b, d }
    }

    /// Additively perturbed copy: `A+ΔA`, `B+ΔB`, `D+ΔD` (any of them may be
    /// omitted).
    pub fn perturbed(
        &self,
        da: Option<&Mat<T>>,
        db: Option<&Mat<T>>,
        dd: Option<&Mat<T>>,
    ) -> Result<Self, DataError> {
        let add =
            |base: &Mat<T>, delta: Option<&Mat<T>>, name: &str| -> Result<Mat<T>, DataError> {
                match delta {
                    None => Ok(base.clone()),
                    Some(d) => {
                        if d.shape() != base.shape() {
                            return Err(DataError::Dimension(format!(
                                "perturbation of {} must be {}x{}, got {}x{}",
                                name,
                                base.nrows(),
                                base.ncols(),
                                d.nrows(),
                                d.ncols()
                            )));
                        }
                        Ok(base + d)
                    }
                }
            };
        LtiSystem::new(
            add(&self.a, da, "A")?,
            add(&self.b, db, "B")?,
            add(&self.d, dd, "D")?,
        )
    }
}

/// First two moments of a Gaussian state distribution.
#[derive(Clone, Debug)]
pub struct GaussianMoments<T: Scalar> {
    pub mean: Vect<T>,
    pub cov: SymMat<T>,
}

impl<T: Scalar> GaussianMoments<T> {
    /// Validates that `cov` is PSD and matches the mean's dimension.
    pub fn new(mean: Vect<T>, cov: SymMat<T>) -> Result<Self, DataError> {
        if mean.len() != cov.dim() {
            return Err(DataError::Dimension(format!(
                "mean dim {} vs covariance dim {}",
                mean.len(),
                cov.dim()
            )));
        }
        if !cov.is_psd(T::c(1e-9)) {
            return Err(DataError::Dimension(
                "covariance must be positive semidefinite".into(),
            ));
        }
        Ok(GaussianMoments { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Draws `x ~ N(mean, cov)` through a precomputed PSD square root, so
/// singular covariances are handled exactly.
struct GaussianSampler<T: Scalar> {
    mean: Vect<T>,
    root: Mat<T>,
}

impl<T: Scalar> GaussianSampler<T> {
    fn new(moments: &GaussianMoments<T>) -> Result<Self, DataError> {
        let root = moments.cov.sqrt_psd()?.into_mat();
        Ok(GaussianSampler {
            mean: moments.mean.clone(),
            root,
        })
    }

    fn sample(&self, rng: &mut ChaCha12Rng) -> Vect<T> {
        let z = Vect::from_fn(self.mean.len(), |_, _| std_normal::<T>(rng));
        &self.mean + &self.root * z
    }
}

/// One recorded experiment: inputs `u_0..u_{T−1}`, states `x_0..x_T`, and —
/// for validation only — the true noise realization `ξ_0..ξ_{T−1}` that was
/// injected while simulating. Estimators must never read `true_noise`.
#[derive(Clone, Debug)]
pub struct Dataset<T: Scalar> {
    pub m: usize,
    pub n: usize,
    /// Data-collection horizon `T`.
    pub horizon: usize,
    pub seed: u64,
    pub inputs: Vec<Vect<T>>,
    pub states: Vec<Vect<T>>,
    pub true_noise: Option<Vec<Vect<T>>>,
}

#[derive(Serialize, Deserialize)]
struct DatasetWire<T> {
    m: usize,
    n: usize,
    #[serde(rename = "T")]
    horizon: usize,
    seed: u64,
    inputs: Vec<Vec<T>>,
    states: Vec<Vec<T>>,
    #[serde(skip_serializing_if = "Option::is_none", default = "Option::default")]
    true_noise: Option<Vec<Vec<T>>>,
}

fn vecs_to_wire<T: Scalar>(vs: &[Vect<T>]) -> Vec<Vec<T>> {
    vs.iter().map(|v| v.iter().copied().collect()).collect()
}

fn wire_to_vecs<T: Scalar>(
    rows: &[Vec<T>],
    dim: usize,
    what: &str,
) -> Result<Vec<Vect<T>>, DataError> {
    rows.iter()
        .enumerate()
        .map(|(k, r)| {
            if r.len() != dim {
                return Err(DataError::Dimension(format!(
                    "{} sample {} has dim {}, expected {}",
                    what,
                    k,
                    r.len(),
                    dim
                )));
            }
            matlib::vec_from(r).map_err(DataError::from)
        })
        .collect()
}

impl<T: Scalar> Dataset<T>
where
    T: Serialize + for<'de> Deserialize<'de>,
{
    pub fn to_json(&self) -> String {
        let wire = DatasetWire {
            m: self.m,
            n: self.n,
            horizon: self.horizon,
            seed: self.seed,
            inputs: vecs_to_wire(&self.inputs),
            states: vecs_to_wire(&self.states),
            true_noise: self.true_noise.as_deref().map(vecs_to_wire),
        };
        serde_json::to_string_pretty(&wire).expect("dataset serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, DataError> {
        let wire: DatasetWire<T> =
            serde_json::from_str(text).map_err(|e| DataError::Serde(e.to_string()))?;
        if wire.states.len() != wire.inputs.len() + 1 {
            return Err(DataError::Dimension(format!(
                "states length {} must be inputs length {} + 1",
                wire.states.len(),
                wire.inputs.len()
            )));
        }
        if wire.inputs.len() != wire.horizon {
            return Err(DataError::Dimension(format!(
                "inputs length {} must equal horizon {}",
                wire.inputs.len(),
                wire.horizon
            )));
        }
        let ds = Dataset {
            m: wire.m,
            n: wire.n,
            horizon: wire.horizon,
            seed: wire.seed,
            inputs: wire_to_vecs(&wire.inputs, wire.m, "input")?,
            states: wire_to_vecs(&wire.states, wire.n, "state")?,
            true_noise: match &wire.true_noise {
                None => None,
                Some(rows) => Some(wire_to_vecs(rows, wire.n, "noise")?),
            },
        };
        Ok(ds)
    }
}

/// Hankel matrices assembled from a dataset: `U_{0,T}`, `X_{0,T}`, the
/// one-step-shifted `X_{1,T}`, the stacked `S = [U_{0,T}; X_{0,T}]`, and the
/// consistency projector `Γ = I − S†S` onto the null space of `S`.
#[derive(Clone, Debug)]
pub struct HankelData<T: Scalar> {
    pub u0t: Mat<T>,
    pub x0t: Mat<T>,
    pub x1t: Mat<T>,
    pub s: Mat<T>,
    pub gamma: SymMat<T>,
    pub rank_s: usize,
    pub m: usize,
    pub n: usize,
    pub horizon: usize,
}

impl<T: Scalar> HankelData<T> {
    /// Data-richness condition for synthesis: `rank S = n + m`.
    pub fn assumption1(&self) -> bool {
        self.rank_s == self.n + self.m
    }
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Simulate `x_{k+1} = A x_k + B u_k + D w_k` for `horizon` steps with
/// `x_0 ~ x0_dist` and i.i.d. standard-normal `w_k`, recording the injected
/// noise `ξ_k = D w_k`. Deterministic given the seed.
pub fn simulate<T: Scalar>(
    sys: &LtiSystem<T>,
    x0_dist: &GaussianMoments<T>,
    input: &[Vect<T>],
    horizon: usize,
    seed: u64,
) -> Result<Dataset<T>, DataError> {
    let (n, m) = (sys.state_dim(), sys.input_dim());
    if input.len() != horizon {
        return Err(DataError::Dimension(format!(
            "input length {} must equal horizon {}",
            input.len(),
            horizon
        )));
    }
    if x0_dist.dim() != n {
        return Err(DataError::Dimension(format!(
            "initial distribution dim {} vs state dim {}",
            x0_dist.dim(),
            n
        )));
    }
    for (k, u) in input.iter().enumerate() {
        if u.len() != m {
            return Err(DataError::Dimension(format!(
                "input {} has dim {}, expected {}",
                k,
                u.len(),
                m
            )));
        }
    }

    let mut rng = seeded_stream(seed, STREAM_SIMULATE);
    let sampler = GaussianSampler::new(x0_dist)?;
    let mut states = Vec::with_capacity(horizon + 1);
    let mut noise = Vec::with_capacity(horizon);
    states.push(sampler.sample(&mut rng));
    for u in input {
        let w = Vect::from_fn(sys.noise_dim(), |_, _| std_normal::<T>(&mut rng));
        let xi = &sys.d * w;
        let x = states.last().expect("nonempty");
        states.push(&sys.a * x + &sys.b * u + &xi);
        noise.push(xi);
    }
    Ok(Dataset {
        m,
        n,
        horizon,
        seed,
        inputs: input.to_vec(),
        states,
        true_noise: Some(noise),
    })
}

/// Zero-mean i.i.d. Gaussian excitation input of the given amplitude
/// (standard deviation per channel). Verify richness afterwards with
/// [`is_persistently_exciting`].
pub fn excitation_input<T: Scalar>(
    m: usize,
    horizon: usize,
    amplitude: T,
    seed: u64,
) -> Vec<Vect<T>> {
    let mut rng = seeded_stream(seed, STREAM_EXCITATION);
    (0..horizon)
        .map(|_| Vect::from_fn(m, |_, _| std_normal::<T>(&mut rng) * amplitude))
        .collect()
}

/// Assemble the Hankel matrices and consistency projector from a dataset.
pub fn build_hankel<T: Scalar>(
    data: &Dataset<T>,
    pinv_tol: Option<T>,
) -> Result<HankelData<T>, DataError> {
    if data.horizon == 0 {
        return Err(DataError::Dimension("dataset is empty".into()));
    }
    if data.states.len() != data.horizon + 1 {
        return Err(DataError::Dimension(format!(
            "states length {} must be horizon {} + 1",
            data.states.len(),
            data.horizon
        )));
    }
    let t = data.horizon;
    let u0t = matlib::hankel(&data.inputs, 0, 1, t)?;
    let x0t = matlib::hankel(&data.states, 0, 1, t)?;
    let x1t = matlib::hankel(&data.states, 1, 1, t)?;
    let (m, n) = (u0t.nrows(), x0t.nrows());
    let mut s = Mat::zeros(m + n, t);
    s.view_mut((0, 0), (m, t)).copy_from(&u0t);
    s.view_mut((m, 0), (n, t)).copy_from(&x0t);
    let gamma = matlib::consistency_projector(&s, pinv_tol);
    let rank_s = matlib::rank(&s, pinv_tol);
    Ok(HankelData {
        u0t,
        x0t,
        x1t,
        s,
        gamma,
        rank_s,
        m,
        n,
        horizon: t,
    })
}

/// Persistence of excitation of the given order: the depth-`order` Hankel
/// matrix of the signal must reach full row rank `σ·order`.
pub fn is_persistently_exciting<T: Scalar>(
    signal: &[Vect<T>],
    order: usize,
    tol: Option<T>,
) -> bool {
    if order == 0 || signal.len() < order {
        return false;
    }
    let sigma = signal.first().map_or(0, Vect::len);
    if sigma == 0 {
        return false;
    }
    let width = signal.len() - order + 1;
    match matlib::hankel(signal, 0, order, width) {
        Ok(h) => matlib::rank(&h, tol) == sigma * order,
        Err(_) => false,
    }
}

/// Exact first/second-moment propagation of the closed loop
/// `u_k = K_k (x_k − μ̄_k) + v_k` on the given (true) system:
/// `m_{k+1} = A m_k + B u_k(m_k)` and
/// `V_{k+1} = (A + B K_k) V_k (A + B K_k)ᵀ + D Dᵀ`.
/// `ref_means` are the planned means the feedback is offset against.
/// Mean and covariance trajectories, step by step.
pub type MomentTrajectories<T> = (Vec<Vect<T>>, Vec<SymMat<T>>);

pub fn closed_loop_moments<T: Scalar>(
    sys: &LtiSystem<T>,
    gains: &[Mat<T>],
    feedforward: &[Vect<T>],
    ref_means: &[Vect<T>],
    x0: &GaussianMoments<T>,
) -> Result<MomentTrajectories<T>, DataError> {
    let n = sys.state_dim();
    let steps = gains.len();
    if feedforward.len() != steps || ref_means.len() < steps {
        return Err(DataError::Dimension(format!(
            "policy lengths disagree: {} gains, {} feedforward, {} reference means",
            gains.len(),
            feedforward.len(),
            ref_means.len()
        )));
    }
    if x0.dim() != n {
        return Err(DataError::Dimension(format!(
            "initial distribution dim {} vs state dim {}",
            x0.dim(),
            n
        )));
    }
    let sigma_xi = sys.sigma_xi();
    let mut means = Vec::with_capacity(steps + 1);
    let mut covs = Vec::with_capacity(steps + 1);
    means.push(x0.mean.clone());
    covs.push(x0.cov.clone());
    for k in 0..steps {
        let mk = &means[k];
        let u = &gains[k] * (mk - &ref_means[k]) + &feedforward[k];
        means.push(&sys.a * mk + &sys.b * u);
        let acl = &sys.a + &sys.b * &gains[k];
        let next = &acl * covs[k].as_mat() * acl.transpose() + sigma_xi.as_mat();
        covs.push(SymMat::new(next)?);
    }
    Ok((means, covs))
}

/// Empirical and exactly-propagated closed-loop statistics.
#[derive(Clone, Debug)]
pub struct RolloutStats<T: Scalar> {
    pub trials: usize,
    /// Sample mean of the state at each step `0..=N`.
    pub empirical_means: Vec<Vect<T>>,
    /// Unbiased sample covariance at each step `0..=N`.
    pub empirical_covs: Vec<SymMat<T>>,
    /// Exact moment propagation on the same system.
    pub propagated_means: Vec<Vect<T>>,
    pub propagated_covs: Vec<SymMat<T>>,
    /// Full state paths of the first few trials (for plotting).
    pub sample_paths: Vec<Vec<Vect<T>>>,
}

/// Roll the policy out on the (true) system for `trials` Monte Carlo runs
/// with per-trial deterministic RNG streams, and compare against exact moment
/// propagation.
pub fn monte_carlo_closed_loop<T: Scalar>(
    sys: &LtiSystem<T>,
    policy: &Policy<T>,
    x0_dist: &GaussianMoments<T>,
    trials: usize,
    seed: u64,
) -> Result<RolloutStats<T>, DataError> {
    let n = sys.state_dim();
    let steps = policy.gains.len();
    if trials == 0 {
        return Err(DataError::Dimension(
            "at least one trial is required".into(),
        ));
    }
    for (k, g) in policy.gains.iter().enumerate() {
        if g.ncols() != n || g.nrows() != sys.input_dim() {
            return Err(DataError::Dimension(format!(
                "gain {} is {}x{}, expected {}x{}",
                k,
                g.nrows(),
                g.ncols(),
                sys.input_dim(),
                n
            )));
        }
    }
    let (prop_means, prop_covs) = closed_loop_moments(
        sys,
        &policy.gains,
        &policy.feedforward,
        &policy.planned_means,
        x0_dist,
    )?;

    let sampler = GaussianSampler::new(x0_dist)?;
    let keep_paths = trials.min(20);
    let mut sum = vec![Vect::<T>::zeros(n); steps + 1];
    let mut outer = vec![Mat::<T>::zeros(n, n); steps + 1];
    let mut paths = Vec::with_capacity(keep_paths);
    for trial in 0..trials {
        let mut rng = seeded_stream(seed, STREAM_MC_BASE + trial as u64);
        let mut x = sampler.sample(&mut rng);
        let mut path = Vec::new();
        for k in 0..=steps {
            sum[k] += &x;
            outer[k] += &x * x.transpose();
            if trial < keep_paths {
                path.push(x.clone());
            }
            if k < steps {
                let u = &policy.gains[k] * (&x - &policy.planned_means[k]) + &policy.feedforward[k];
                let w = Vect::from_fn(sys.noise_dim(), |_, _| std_normal::<T>(&mut rng));
                x = &sys.a * &x + &sys.b * u + &sys.d * w;
            }
        }
        if trial < keep_paths {
            paths.push(path);
        }
    }

    let tn = T::from_count(trials);
    let mut emp_means = Vec::with_capacity(steps + 1);
    let mut emp_covs = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let mean = &sum[k] / tn;
        let centered = &outer[k] - &mean * sum[k].transpose();
        let denom = if trials > 1 {
            T::from_count(trials - 1)
        } else {
            T::one()
        };
        emp_covs.push(SymMat::new(centered / denom)?);
        emp_means.push(mean);
    }
    Ok(RolloutStats {
        trials,
        empirical_means: emp_means,
        empirical_covs: emp_covs,
        propagated_means: prop_means,
        propagated_covs: prop_covs,
        sample_paths: paths,
    })
}
