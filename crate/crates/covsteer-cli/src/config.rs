//! Experiment configuration: JSON schema, the `double-integrator` preset,
//! flag overrides, and resolution into ready-to-use library objects.
//!
//! Precedence is preset < config file < command-line flags. Nested sections
//! (`system`, `steering`, `perturbation`) replace the preset value wholesale
//! rather than merging field by field.

use clap::ValueEnum;
use covsteer::matlib::{self, SymMat};
use covsteer::steer::SteeringSpec;
use covsteer::sysdata::{GaussianMoments, LtiSystem};
use covsteer::{Mat64, SymMat64, Vect64};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};

/// Errors carrying the process exit class:
/// 2 config, 3 data quality, 4 estimation, 5 synthesis, 6 validation.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    DataQuality(String),
    #[error("{0}")]
    Estimation(String),
    #[error("{0}")]
    Synthesis(String),
    #[error("{0}")]
    Validation(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::DataQuality(_) => 3,
            CliError::Estimation(_) => 4,
            CliError::Synthesis(_) => 5,
            CliError::Validation(_) => 6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorChoice {
    /// Closed-form noise-realization estimate with a known noise covariance.
    Analytic,
    /// Joint realization + covariance estimate via the convex-concave method.
    DcJoint,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ModeChoice {
    /// Nominal data-driven synthesis.
    Dd,
    /// Robust data-driven synthesis.
    Rdd,
    /// Model-based baseline (uses the nominal system, never the data).
    Mb,
}

impl ModeChoice {
    pub fn as_str(self) -> &'static str {
        match self {
            ModeChoice::Dd => "dd",
            ModeChoice::Rdd => "rdd",
            ModeChoice::Mb => "mb",
        }
    }
}

/// A scalar shorthand (`s` means `s·I`) or a full matrix as a list of rows.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalarOrMatrix {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
}

impl ScalarOrMatrix {
    /// Expand to a `rows×cols` matrix; the scalar form is only valid for
    /// square targets.
    pub fn expand(&self, rows: usize, cols: usize, what: &str) -> Result<Mat64, CliError> {
        match self {
            ScalarOrMatrix::Scalar(s) => {
                if rows != cols {
                    return Err(CliError::Config(format!(
                        "{what} is {rows}×{cols}; a scalar shorthand only works for square \
                         matrices — provide a full matrix"
                    )));
                }
                Ok(Mat64::identity(rows, rows) * *s)
            }
            ScalarOrMatrix::Matrix(m) => {
                let mat =
                    matlib::from_rows(m).map_err(|e| CliError::Config(format!("{what}: {e}")))?;
                if mat.nrows() != rows || mat.ncols() != cols {
                    return Err(CliError::Config(format!(
                        "{what} is {}×{}, expected {rows}×{cols}",
                        mat.nrows(),
                        mat.ncols()
                    )));
                }
                Ok(mat)
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "D")]
    pub d: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentsConfig {
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteeringConfig {
    #[serde(rename = "N")]
    pub horizon: usize,
    #[serde(rename = "Q")]
    pub q: ScalarOrMatrix,
    #[serde(rename = "R")]
    pub r: ScalarOrMatrix,
    pub initial: MomentsConfig,
    pub terminal: MomentsConfig,
}

/// Model error applied to the *true* system only: data collection and
/// validation see `A+dA, B+dB, D+dD`, while the model-based synthesizer and
/// the known-covariance estimator keep the nominal values.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationConfig {
    #[serde(rename = "dA", default, skip_serializing_if = "Option::is_none")]
    pub da: Option<ScalarOrMatrix>,
    #[serde(rename = "dB", default, skip_serializing_if = "Option::is_none")]
    pub db: Option<ScalarOrMatrix>,
    #[serde(rename = "dD", default, skip_serializing_if = "Option::is_none")]
    pub dd: Option<ScalarOrMatrix>,
}

/// The on-disk configuration: every field optional so presets and flags can
/// fill the gaps.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub system: Option<SystemConfig>,
    /// Data-collection horizon `T`.
    #[serde(rename = "T", default)]
    pub data_horizon: Option<usize>,
    #[serde(default)]
    pub excitation_amplitude: Option<f64>,
    #[serde(default)]
    pub steering: Option<SteeringConfig>,
    #[serde(default)]
    pub estimator: Option<EstimatorChoice>,
    #[serde(default)]
    pub mode: Option<ModeChoice>,
    #[serde(default)]
    pub delta: Option<f64>,
    /// Known noise covariance for the analytic estimator; defaults to `DDᵀ`
    /// of the nominal system.
    #[serde(default)]
    pub sigma_xi: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub trials: Option<u32>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub perturbation: Option<PerturbationConfig>,
    #[serde(default)]
    pub out_dir: Option<String>,
}

/// Command-line overrides (highest precedence).
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub mode: Option<ModeChoice>,
    pub estimator: Option<EstimatorChoice>,
    pub delta: Option<f64>,
    pub trials: Option<u32>,
}

/// Fully resolved configuration, ready for the pipeline stages.
pub struct Resolved {
    /// The design model (what the model-based baseline believes).
    pub nominal: LtiSystem<f64>,
    /// The system experiments actually run on: nominal plus perturbation.
    pub truth: LtiSystem<f64>,
    pub data_horizon: usize,
    pub excitation_amplitude: f64,
    pub spec: SteeringSpec<f64>,
    pub estimator: EstimatorChoice,
    pub mode: ModeChoice,
    pub delta: f64,
    /// Known noise covariance handed to the analytic estimator.
    pub sigma_known: SymMat64,
    pub trials: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// The merged raw config (preset + file + flags), kept for hashing.
    pub merged: RawConfig,
}

impl Resolved {
    /// SHA-256 of the merged configuration serialization: two runs with the
    /// same hash and seed produce identical artifacts.
    pub fn config_sha256(&self) -> String {
        let text = serde_json::to_string(&self.merged).expect("config serialization");
        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub const PRESET_DOUBLE_INTEGRATOR: &str = "double-integrator";

fn preset_raw(name: &str) -> Result<RawConfig, CliError> {
    if name != PRESET_DOUBLE_INTEGRATOR {
        return Err(CliError::Config(format!(
            "unknown preset {name:?} (available: {PRESET_DOUBLE_INTEGRATOR:?})"
        )));
    }
    Ok(RawConfig {
        preset: Some(name.to_string()),
        system: Some(SystemConfig {
            a: vec![vec![1.0, 1.0], vec![0.0, 1.0]],
            b: vec![vec![0.0], vec![1.0]],
            d: vec![vec![0.1, 0.0], vec![0.0, 0.1]],
        }),
        data_horizon: Some(15),
        excitation_amplitude: Some(1.0),
        steering: Some(SteeringConfig {
            horizon: 10,
            q: ScalarOrMatrix::Scalar(0.0),
            r: ScalarOrMatrix::Scalar(1.0),
            initial: MomentsConfig {
                mean: vec![30.0, 1.0],
                cov: vec![vec![1.0, 0.0], vec![0.0, 0.5]],
            },
            terminal: MomentsConfig {
                mean: vec![-10.0, 0.0],
                cov: vec![vec![0.5, 0.0], vec![0.0, 0.5]],
            },
        }),
        estimator: Some(EstimatorChoice::Analytic),
        mode: Some(ModeChoice::Rdd),
        delta: Some(0.001),
        sigma_xi: Some(vec![vec![0.01, 0.0], vec![0.0, 0.01]]),
        trials: Some(1000),
        seed: Some(7),
        perturbation: None,
        out_dir: Some("out".to_string()),
    })
}

/// Read a config file, or fall back to the double-integrator preset when no
/// file is given.
pub fn load_raw(path: Option<&Path>) -> Result<RawConfig, CliError> {
    match path {
        None => Ok(RawConfig {
            preset: Some(PRESET_DOUBLE_INTEGRATOR.to_string()),
            ..RawConfig::default()
        }),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| {
                CliError::Config(format!("cannot read config {}: {e}", p.display()))
            })?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("invalid config {}: {e}", p.display())))
        }
    }
}

fn merge(base: RawConfig, over: RawConfig) -> RawConfig {
    RawConfig {
        preset: over.preset.or(base.preset),
        system: over.system.or(base.system),
        data_horizon: over.data_horizon.or(base.data_horizon),
        excitation_amplitude: over.excitation_amplitude.or(base.excitation_amplitude),
        steering: over.steering.or(base.steering),
        estimator: over.estimator.or(base.estimator),
        mode: over.mode.or(base.mode),
        delta: over.delta.or(base.delta),
        sigma_xi: over.sigma_xi.or(base.sigma_xi),
        trials: over.trials.or(base.trials),
        seed: over.seed.or(base.seed),
        perturbation: over.perturbation.or(base.perturbation),
        out_dir: over.out_dir.or(base.out_dir),
    }
}

fn vect_from_config(xs: &[f64]) -> Vect64 {
    Vect64::from_column_slice(xs)
}

fn sym_from_rows(rows: &[Vec<f64>], what: &str) -> Result<SymMat64, CliError> {
    let m = matlib::from_rows(rows).map_err(|e| CliError::Config(format!("{what}: {e}")))?;
    if m.nrows() != m.ncols() {
        return Err(CliError::Config(format!(
            "{what} must be square, got {}×{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let asym = (&m - m.transpose()).amax();
    if asym > 1e-9 * (1.0 + m.amax()) {
        return Err(CliError::Config(format!(
            "{what} must be symmetric (max asymmetry {asym:.3e})"
        )));
    }
    SymMat::new(m).map_err(|e| CliError::Config(format!("{what}: {e}")))
}

/// Merge preset, file, and flags, then build the library objects.
pub fn resolve(file: RawConfig, flags: &Overrides) -> Result<Resolved, CliError> {
    let mut cfg = match file.preset.clone() {
        Some(name) => merge(preset_raw(&name)?, file),
        None => file,
    };
    if let Some(seed) = flags.seed {
        cfg.seed = Some(seed);
    }
    if let Some(out) = &flags.out {
        cfg.out_dir = Some(out.display().to_string());
    }
    if let Some(mode) = flags.mode {
        cfg.mode = Some(mode);
    }
    if let Some(est) = flags.estimator {
        cfg.estimator = Some(est);
    }
    if let Some(delta) = flags.delta {
        cfg.delta = Some(delta);
    }
    if let Some(trials) = flags.trials {
        cfg.trials = Some(trials);
    }

    let sys_cfg = cfg.system.clone().ok_or_else(|| {
        CliError::Config("config needs a \"system\" section or a \"preset\"".to_string())
    })?;
    let a =
        matlib::from_rows(&sys_cfg.a).map_err(|e| CliError::Config(format!("system A: {e}")))?;
    let b =
        matlib::from_rows(&sys_cfg.b).map_err(|e| CliError::Config(format!("system B: {e}")))?;
    let d =
        matlib::from_rows(&sys_cfg.d).map_err(|e| CliError::Config(format!("system D: {e}")))?;
    let nominal = LtiSystem::new(a, b, d).map_err(|e| CliError::Config(format!("system: {e}")))?;
    let (n, m) = (nominal.state_dim(), nominal.input_dim());

    let steer_cfg = cfg.steering.clone().ok_or_else(|| {
        CliError::Config("config needs a \"steering\" section or a \"preset\"".to_string())
    })?;
    let q = steer_cfg.q.expand(n, n, "steering Q")?;
    let r = steer_cfg.r.expand(m, m, "steering R")?;
    let init = GaussianMoments::new(
        vect_from_config(&steer_cfg.initial.mean),
        sym_from_rows(&steer_cfg.initial.cov, "initial covariance")?,
    )
    .map_err(|e| CliError::Config(format!("initial moments: {e}")))?;
    let terminal = GaussianMoments::new(
        vect_from_config(&steer_cfg.terminal.mean),
        sym_from_rows(&steer_cfg.terminal.cov, "terminal covariance")?,
    )
    .map_err(|e| CliError::Config(format!("terminal moments: {e}")))?;
    let spec = SteeringSpec::uniform(
        steer_cfg.horizon,
        SymMat::new(q).map_err(|e| CliError::Config(format!("steering Q: {e}")))?,
        SymMat::new(r).map_err(|e| CliError::Config(format!("steering R: {e}")))?,
        init,
        terminal,
    )
    .map_err(|e| CliError::Config(format!("steering: {e}")))?;
    if spec.state_dim() != n || spec.input_dim() != m {
        return Err(CliError::Config(format!(
            "steering moments are for a ({}, {})-dimensional problem but the system is \
             ({n}, {m})",
            spec.state_dim(),
            spec.input_dim()
        )));
    }

    let delta = cfg.delta.unwrap_or(0.001);
    if !(delta > 0.0 && delta < 1.0) {
        return Err(CliError::Config(format!(
            "delta must lie strictly between 0 and 1, got {delta}"
        )));
    }
    let data_horizon = cfg.data_horizon.unwrap_or(15);
    if data_horizon == 0 {
        return Err(CliError::Config(
            "data horizon T must be at least 1".to_string(),
        ));
    }
    let trials = cfg.trials.unwrap_or(1000) as usize;
    if trials == 0 {
        return Err(CliError::Config("trials must be at least 1".to_string()));
    }

    let sigma_known = match &cfg.sigma_xi {
        Some(rows) => {
            let s = sym_from_rows(rows, "sigma_xi")?;
            if s.dim() != n {
                return Err(CliError::Config(format!(
                    "sigma_xi is {}×{0}, expected {n}×{n}",
                    s.dim()
                )));
            }
            if !s.is_psd(1e-9) {
                return Err(CliError::Config(
                    "sigma_xi must be positive semidefinite".to_string(),
                ));
            }
            s
        }
        None => nominal.sigma_xi(),
    };

    let truth = match &cfg.perturbation {
        None => nominal.clone(),
        Some(p) => {
            let da =
                p.da.as_ref()
                    .map(|x| x.expand(n, n, "perturbation dA"))
                    .transpose()?;
            let db =
                p.db.as_ref()
                    .map(|x| x.expand(n, m, "perturbation dB"))
                    .transpose()?;
            let dd =
                p.dd.as_ref()
                    .map(|x| x.expand(nominal.d.nrows(), nominal.d.ncols(), "perturbation dD"))
                    .transpose()?;
            nominal
                .perturbed(da.as_ref(), db.as_ref(), dd.as_ref())
                .map_err(|e| CliError::Config(format!("perturbation: {e}")))?
        }
    };

    Ok(Resolved {
        nominal,
        truth,
        data_horizon,
        excitation_amplitude: cfg.excitation_amplitude.unwrap_or(1.0),
        spec,
        estimator: cfg.estimator.unwrap_or(EstimatorChoice::Analytic),
        mode: cfg.mode.unwrap_or(ModeChoice::Rdd),
        delta,
        sigma_known,
        trials,
        seed: cfg.seed.unwrap_or(7),
        out_dir: PathBuf::from(cfg.out_dir.clone().unwrap_or_else(|| "out".to_string())),
        merged: cfg,
    })
}

/// Canned configs for the `reproduce` scenarios. The base output directory
/// gains a per-scenario subdirectory.
pub fn reproduce_raw(id: &str, out_base: Option<&Path>) -> Result<RawConfig, CliError> {
    let mut raw = preset_raw(PRESET_DOUBLE_INTEGRATOR)?;
    match id {
        "fig1a" => {}
        "fig1b" => {
            raw.perturbation = Some(PerturbationConfig {
                da: Some(ScalarOrMatrix::Matrix(vec![
                    vec![0.0, 0.05],
                    vec![0.0, 0.0],
                ])),
                db: Some(ScalarOrMatrix::Matrix(vec![vec![0.0], vec![0.05]])),
                dd: None,
            });
        }
        "fig3" => {
            raw.perturbation = Some(PerturbationConfig {
                da: None,
                db: None,
                dd: Some(ScalarOrMatrix::Scalar(0.2)),
            });
            raw.estimator = Some(EstimatorChoice::DcJoint);
        }
        "coverage" => {
            raw.delta = Some(0.1);
        }
        other => {
            return Err(CliError::Config(format!(
                "unknown scenario {other:?} (available: fig1a, fig1b, fig3, coverage)"
            )))
        }
    }
    let base = out_base
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("out"));
    raw.out_dir = Some(base.join(id).display().to_string());
    Ok(raw)
}
