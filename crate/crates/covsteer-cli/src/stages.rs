//! The four pipeline stages (collect → estimate → synthesize → validate),
//! the canned end-to-end scenarios, and the run manifest.

use crate::config::{
    reproduce_raw, resolve, CliError, EstimatorChoice, ModeChoice, Overrides, Resolved,
};
use crate::render;
use covsteer::estimate::{
    estimate_analytic, mle_noise_dc, CcpOptions, EstimateError, NoiseEstimate,
};
use covsteer::matlib;
use covsteer::sdpcore::ClarabelAdapter;
use covsteer::steer::{
    evaluate_policy, solve_ddcs, solve_mbcs_exact, solve_rddcs, Policy, PolicyMode, SteerError,
};
use covsteer::sysdata::{
    build_hankel, excitation_input, is_persistently_exciting, monte_carlo_closed_loop, Dataset,
    HankelData,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Tolerance for the terminal-covariance verdict `min_eig(Σ_f − Σ_N) ≥ −tol`.
const VERDICT_TOL: f64 = 1e-6;

fn write_file(path: &Path, contents: &str, class: fn(String) -> CliError) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)
            .map_err(|e| class(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| class(format!("cannot write {}: {e}", path.display())))
}

fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))
}

fn mode_str(mode: PolicyMode) -> &'static str {
    match mode {
        PolicyMode::Dd => "dd",
        PolicyMode::Rdd => "rdd",
        PolicyMode::Mb => "mb",
    }
}

// ---------------------------------------------------------------------------
// collect
// ---------------------------------------------------------------------------

pub struct CollectOut {
    pub path: PathBuf,
    pub rank: usize,
}

/// Run the data-collection experiment on the true system and write the
/// dataset. Prints the excitation/rank report; a rank deficiency is a
/// data-quality error (exit 3) after the dataset is written.
pub fn stage_collect(r: &Resolved) -> Result<CollectOut, CliError> {
    let (n, m, t) = (r.truth.state_dim(), r.truth.input_dim(), r.data_horizon);
    let pe_len = (m + 1) * (n + 1) - 1;
    if t < pe_len {
        println!(
            "warning: data horizon T = {t} is below the persistence-of-excitation \
             threshold {pe_len} for n = {n}, m = {m}"
        );
    }
    let input = excitation_input(m, t, r.excitation_amplitude, r.seed);
    let ds = covsteer::sysdata::simulate(&r.truth, &r.spec.init, &input, t, r.seed)
        .map_err(|e| CliError::Config(format!("simulation failed: {e}")))?;
    let h = build_hankel(&ds, None)
        .map_err(|e| CliError::Config(format!("Hankel assembly failed: {e}")))?;
    let pe = is_persistently_exciting(&input, n + 1, None);
    println!(
        "collect: T = {t}, seed = {}, excitation amplitude = {}",
        r.seed, r.excitation_amplitude
    );
    println!(
        "collect: input persistently exciting of order {}: {pe}",
        n + 1
    );
    println!(
        "collect: rank(S) = {} (need n + m = {}) -> Assumption 1 {}",
        h.rank_s,
        n + m,
        if h.assumption1() {
            "satisfied"
        } else {
            "violated"
        }
    );
    let path = r.out_dir.join("dataset.json");
    write_file(&path, &ds.to_json(), CliError::Config)?;
    println!("collect: wrote {}", path.display());
    if !h.assumption1() {
        println!("warning: Assumption 1 violated");
        return Err(CliError::DataQuality(format!(
            "Assumption 1 violated: rank(S) = {} < {}",
            h.rank_s,
            n + m
        )));
    }
    Ok(CollectOut {
        path,
        rank: h.rank_s,
    })
}

// ---------------------------------------------------------------------------
// estimate
// ---------------------------------------------------------------------------

pub struct EstimateOut {
    pub path: PathBuf,
    pub extra_files: Vec<PathBuf>,
    pub rho: f64,
}

fn load_dataset(path: &Path) -> Result<Dataset<f64>, CliError> {
    Dataset::from_json(&read_file(path)?)
        .map_err(|e| CliError::Config(format!("invalid dataset {}: {e}", path.display())))
}

fn hankel_of(ds: &Dataset<f64>) -> Result<HankelData<f64>, CliError> {
    build_hankel(ds, None).map_err(|e| CliError::Config(format!("Hankel assembly failed: {e}")))
}

/// Estimate the noise realization (and, for `dc-joint`, its covariance) from
/// a dataset file; writes the estimate JSON and reports the error bound ρ.
pub fn stage_estimate(
    r: &Resolved,
    dataset_path: &Path,
    oracle: bool,
) -> Result<EstimateOut, CliError> {
    let ds = load_dataset(dataset_path)?;
    let h = hankel_of(&ds)?;
    let mut extra_files = Vec::new();
    let est = match r.estimator {
        EstimatorChoice::Analytic => {
            estimate_analytic(&h, &r.sigma_known, r.delta).map_err(estimation_error)?
        }
        EstimatorChoice::DcJoint => {
            let opts = CcpOptions::joint(r.delta);
            let (est, report) =
                mle_noise_dc(&h, &ClarabelAdapter::new(), &opts).map_err(estimation_error)?;
            println!(
                "estimate: CCP converged = {} after {} iteration(s); slack gap = {:.3e}",
                report.converged, report.iterations, report.final_slack_gap
            );
            println!(
                "estimate: objective trace = [{}]",
                report
                    .objective_trace
                    .iter()
                    .map(|v| format!("{v:.6}"))
                    .collect::<Vec<_>>()
                    .join(", ")
            );
            let eigs = est.sigma_xi.eigenvalues();
            println!(
                "estimate: estimated noise covariance eigenvalues = [{}]",
                eigs.iter()
                    .map(|v| format!("{v:.6}"))
                    .collect::<Vec<_>>()
                    .join(", ")
            );
            let report_path = r.out_dir.join("ccp_report.json");
            write_file(
                &report_path,
                &serde_json::to_string_pretty(&report).expect("report serialization"),
                CliError::Estimation,
            )?;
            extra_files.push(report_path);
            est
        }
    };
    println!(
        "estimate: estimator = {}, delta = {}, rho = {:.6}",
        match r.estimator {
            EstimatorChoice::Analytic => "analytic",
            EstimatorChoice::DcJoint => "dc-joint",
        },
        r.delta,
        est.rho
    );
    if oracle {
        match &ds.true_noise {
            Some(noise) => {
                let xi_true = matlib::hankel(noise, 0, 1, ds.horizon)
                    .map_err(|e| CliError::Estimation(e.to_string()))?;
                let err = matlib::spectral_norm(&(&xi_true - &est.xi_hat));
                let covered = err <= est.rho;
                println!(
                    "estimate: oracle ||Xi_true - Xi_hat||_2 = {err:.6} vs rho = {:.6} -> {}",
                    est.rho,
                    if covered { "covered" } else { "NOT covered" }
                );
            }
            None => println!("estimate: oracle requested but the dataset stores no true noise"),
        }
    }
    let path = r.out_dir.join("estimate.json");
    write_file(&path, &est.to_json(), CliError::Estimation)?;
    println!("estimate: wrote {}", path.display());
    Ok(EstimateOut {
        path,
        extra_files,
        rho: est.rho,
    })
}

fn estimation_error(e: EstimateError) -> CliError {
    if let EstimateError::Solver { ref report, .. } = e {
        eprintln!(
            "estimation diagnostics: {}",
            serde_json::to_string(report).unwrap_or_else(|_| "<unserializable>".to_string())
        );
    }
    CliError::Estimation(e.to_string())
}

// ---------------------------------------------------------------------------
// synthesize
// ---------------------------------------------------------------------------

pub struct SynthOut {
    pub path: PathBuf,
    pub cost_mean: f64,
    pub cost_cov: f64,
    pub design_rho: f64,
}

fn load_estimate(path: &Path) -> Result<NoiseEstimate<f64>, CliError> {
    NoiseEstimate::from_json(&read_file(path)?)
        .map_err(|e| CliError::Config(format!("invalid estimate {}: {e}", path.display())))
}

/// Synthesize a steering policy. Data-driven modes read the dataset and
/// estimate; the model-based baseline uses the nominal system only.
///
/// With `backoff` set, an infeasible robust program is retried once at the
/// largest feasible uncertainty radius found by bisection (the certified
/// radius is a conservative overapproximation of the estimation error, and
/// the reproduction scenarios need a policy to compare against the baseline).
/// The policy file records the radius actually used.
pub fn stage_synthesize(
    r: &Resolved,
    dataset_path: &Path,
    estimate_path: &Path,
    mode: ModeChoice,
    backoff: bool,
) -> Result<SynthOut, CliError> {
    let adapter = ClarabelAdapter::new();
    let policy = match mode {
        ModeChoice::Mb => {
            solve_mbcs_exact(&r.nominal, &r.spec, &adapter).map_err(synthesis_error)?
        }
        ModeChoice::Dd | ModeChoice::Rdd => {
            let ds = load_dataset(dataset_path)?;
            let h = hankel_of(&ds)?;
            let est = load_estimate(estimate_path)?;
            match mode {
                ModeChoice::Dd => {
                    solve_ddcs(&h, &est, &r.spec, &adapter).map_err(synthesis_error)?
                }
                _ => match solve_rddcs(&h, &est, &r.spec, &adapter) {
                    Ok(p) => p,
                    Err(SteerError::Infeasible {
                        largest_feasible_rho: Some(largest),
                        ..
                    }) if backoff => {
                        println!(
                            "synthesize: certified rho = {:.6} infeasible; \
                             backing off to largest feasible rho = {largest:.6}",
                            est.rho
                        );
                        let mut reduced = est.clone();
                        reduced.rho = largest;
                        solve_rddcs(&h, &reduced, &r.spec, &adapter).map_err(synthesis_error)?
                    }
                    Err(e) => return Err(synthesis_error(e)),
                },
            }
        }
    };
    println!(
        "synthesize: mode = {}, cost_mean = {:.6}, cost_cov = {:.6}, rho = {:.6}",
        mode.as_str(),
        policy.cost_mean,
        policy.cost_cov,
        policy.rho
    );
    let path = r.out_dir.join(format!("policy_{}.json", mode.as_str()));
    write_file(&path, &policy.to_json(), CliError::Synthesis)?;
    println!("synthesize: wrote {}", path.display());
    Ok(SynthOut {
        path,
        cost_mean: policy.cost_mean,
        cost_cov: policy.cost_cov,
        design_rho: policy.rho,
    })
}

fn synthesis_error(e: SteerError) -> CliError {
    if let SteerError::Infeasible {
        largest_feasible_rho: Some(rho),
        ..
    } = &e
    {
        eprintln!("synthesis diagnostics: largest feasible rho ~= {rho:.6}");
    }
    CliError::Synthesis(e.to_string())
}

// ---------------------------------------------------------------------------
// validate
// ---------------------------------------------------------------------------

pub struct ValidateOut {
    pub files: Vec<PathBuf>,
    pub pass: bool,
    pub terminal_mean_error: f64,
    pub terminal_cov_slack: f64,
    pub empirical_cov_slack: f64,
}

/// Evaluate a policy on the (optionally perturbed) true system: exact moment
/// propagation, Monte Carlo rollouts, CSV/SVG artifacts, and the
/// terminal-covariance verdict.
pub fn stage_validate(r: &Resolved, policy_path: &Path) -> Result<ValidateOut, CliError> {
    let policy = Policy::<f64>::from_json(&read_file(policy_path)?)
        .map_err(|e| CliError::Config(format!("invalid policy {}: {e}", policy_path.display())))?;
    let report = evaluate_policy(&r.truth, &policy, &r.spec)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let stats = monte_carlo_closed_loop(&r.truth, &policy, &r.spec.init, r.trials, r.seed)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let tag = mode_str(policy.mode);

    let moments_path = r.out_dir.join(format!("moments_{tag}.csv"));
    write_file(
        &moments_path,
        &render::moments_csv(&report.realized_means, &report.realized_covs),
        CliError::Validation,
    )?;
    let trials_path = r.out_dir.join(format!("trials_{tag}.csv"));
    write_file(
        &trials_path,
        &render::trials_csv(&stats.sample_paths),
        CliError::Validation,
    )?;
    let targets_path = r.out_dir.join("targets.csv");
    write_file(
        &targets_path,
        &render::targets_csv(
            &r.spec.init.mean,
            &r.spec.init.cov,
            &r.spec.terminal.mean,
            &r.spec.terminal.cov,
            r.spec.horizon,
        ),
        CliError::Validation,
    )?;
    let mut files = vec![moments_path, trials_path, targets_path];

    if let Some(svg) = render::figure_svg(
        &format!(
            "covsteer {tag}: N = {}, {} trials",
            r.spec.horizon, stats.trials
        ),
        &report.realized_means,
        &report.realized_covs,
        &r.spec.terminal.mean,
        &r.spec.terminal.cov,
        &stats.sample_paths,
    ) {
        let svg_path = r.out_dir.join(format!("figure_{tag}.svg"));
        write_file(&svg_path, &svg, CliError::Validation)?;
        files.push(svg_path);
    } else {
        println!("validate: skipping SVG (state dimension is not 2)");
    }

    let empirical_terminal = stats
        .empirical_covs
        .last()
        .ok_or_else(|| CliError::Validation("empty Monte Carlo statistics".to_string()))?;
    let empirical_slack =
        matlib::SymMat::new(r.spec.terminal.cov.as_mat() - empirical_terminal.as_mat())
            .map_err(|e| CliError::Validation(e.to_string()))?
            .min_eig();
    let pass = report.terminal_cov_slack >= -VERDICT_TOL;
    println!(
        "validate: mode = {tag}, trials = {}, seed = {}",
        stats.trials, r.seed
    );
    let empirical_mean_error = stats
        .empirical_means
        .last()
        .map(|mu| (mu - &r.spec.terminal.mean).norm())
        .unwrap_or(f64::NAN);
    println!(
        "validate: terminal mean error = {:.6e} (exact propagation), {:.6e} (empirical)",
        report.terminal_mean_error, empirical_mean_error
    );
    println!(
        "validate: min_eig(Sigma_f - Sigma_N) = {:+.6e} (exact), {:+.6e} (empirical)",
        report.terminal_cov_slack, empirical_slack
    );
    println!(
        "validate: terminal covariance {}",
        if pass { "PASS" } else { "FAIL" }
    );
    for f in &files {
        println!("validate: wrote {}", f.display());
    }
    Ok(ValidateOut {
        files,
        pass,
        terminal_mean_error: report.terminal_mean_error,
        terminal_cov_slack: report.terminal_cov_slack,
        empirical_cov_slack: empirical_slack,
    })
}

// ---------------------------------------------------------------------------
// reproduce + manifest
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
pub struct StageRecord {
    pub status: String,
    pub outputs: Vec<String>,
}

/// Summary of a full scenario run. Everything except `timings_ms` is
/// deterministic given (config, seed).
#[derive(Serialize, Deserialize)]
pub struct RunManifest {
    pub scenario: String,
    pub config_sha256: String,
    pub seed: u64,
    pub stages: BTreeMap<String, StageRecord>,
    pub summary: BTreeMap<String, serde_json::Value>,
    pub timings_ms: BTreeMap<String, u64>,
}

fn rel_paths(out_dir: &Path, files: &[PathBuf]) -> Vec<String> {
    let mut v: Vec<String> = files
        .iter()
        .map(|f| f.strip_prefix(out_dir).unwrap_or(f).display().to_string())
        .collect();
    v.sort();
    v
}

fn json_f64(v: f64) -> serde_json::Value {
    serde_json::Number::from_f64(v)
        .map(serde_json::Value::Number)
        .unwrap_or(serde_json::Value::Null)
}

/// Run a canned scenario end to end and emit the manifest.
pub fn run_reproduce(id: &str, flags: &Overrides) -> Result<(), CliError> {
    let raw = reproduce_raw(id, flags.out.as_deref())?;
    // The scenario owns the output subdirectory; other flags still apply.
    let mut flags = flags.clone();
    flags.out = None;
    let r = resolve(raw, &flags)?;
    println!("reproduce: scenario {id} -> {}", r.out_dir.display());

    let mut manifest = RunManifest {
        scenario: id.to_string(),
        config_sha256: r.config_sha256(),
        seed: r.seed,
        stages: BTreeMap::new(),
        summary: BTreeMap::new(),
        timings_ms: BTreeMap::new(),
    };

    if id == "coverage" {
        run_coverage(&r, &mut manifest)?;
    } else {
        run_figure(&r, &mut manifest)?;
    }

    let manifest_path = r.out_dir.join("manifest.json");
    write_file(
        &manifest_path,
        &serde_json::to_string_pretty(&manifest).expect("manifest serialization"),
        CliError::Validation,
    )?;
    println!("reproduce: wrote {}", manifest_path.display());
    Ok(())
}

fn run_figure(r: &Resolved, manifest: &mut RunManifest) -> Result<(), CliError> {
    let t0 = Instant::now();
    let col = stage_collect(r)?;
    manifest
        .timings_ms
        .insert("collect".into(), t0.elapsed().as_millis() as u64);
    manifest.stages.insert(
        "collect".into(),
        StageRecord {
            status: "ok".into(),
            outputs: rel_paths(&r.out_dir, std::slice::from_ref(&col.path)),
        },
    );
    manifest
        .summary
        .insert("rank_s".into(), serde_json::Value::from(col.rank));

    let t0 = Instant::now();
    let est = stage_estimate(r, &col.path, false)?;
    manifest
        .timings_ms
        .insert("estimate".into(), t0.elapsed().as_millis() as u64);
    let mut est_files = vec![est.path.clone()];
    est_files.extend(est.extra_files.iter().cloned());
    manifest.stages.insert(
        "estimate".into(),
        StageRecord {
            status: "ok".into(),
            outputs: rel_paths(&r.out_dir, &est_files),
        },
    );
    manifest.summary.insert("rho".into(), json_f64(est.rho));

    for mode in [ModeChoice::Mb, ModeChoice::Rdd] {
        let tag = mode.as_str();
        let t0 = Instant::now();
        let syn = stage_synthesize(r, &col.path, &est.path, mode, true)?;
        manifest
            .timings_ms
            .insert(format!("synthesize_{tag}"), t0.elapsed().as_millis() as u64);
        manifest.stages.insert(
            format!("synthesize_{tag}"),
            StageRecord {
                status: "ok".into(),
                outputs: rel_paths(&r.out_dir, std::slice::from_ref(&syn.path)),
            },
        );
        manifest
            .summary
            .insert(format!("{tag}_cost_cov"), json_f64(syn.cost_cov));
        manifest
            .summary
            .insert(format!("{tag}_cost_mean"), json_f64(syn.cost_mean));
        manifest
            .summary
            .insert(format!("{tag}_design_rho"), json_f64(syn.design_rho));

        let t0 = Instant::now();
        let val = stage_validate(r, &syn.path)?;
        manifest
            .timings_ms
            .insert(format!("validate_{tag}"), t0.elapsed().as_millis() as u64);
        manifest.stages.insert(
            format!("validate_{tag}"),
            StageRecord {
                status: "ok".into(),
                outputs: rel_paths(&r.out_dir, &val.files),
            },
        );
        manifest.summary.insert(
            format!("{tag}_verdict"),
            serde_json::Value::from(if val.pass { "PASS" } else { "FAIL" }),
        );
        manifest.summary.insert(
            format!("{tag}_terminal_cov_slack"),
            json_f64(val.terminal_cov_slack),
        );
        manifest.summary.insert(
            format!("{tag}_terminal_mean_error"),
            json_f64(val.terminal_mean_error),
        );
        manifest.summary.insert(
            format!("{tag}_empirical_cov_slack"),
            json_f64(val.empirical_cov_slack),
        );
    }
    Ok(())
}

/// Coverage study: many independently seeded datasets, one analytic estimate
/// each, and the empirical frequency of `‖Ξ_true − Ξ̂‖₂ ≤ ρ`.
fn run_coverage(r: &Resolved, manifest: &mut RunManifest) -> Result<(), CliError> {
    let t0 = Instant::now();
    let seeds = r.trials;
    let (m, t) = (r.truth.input_dim(), r.data_horizon);
    let mut covered = 0usize;
    let mut csv = String::from("seed,error_2norm,rho,covered\n");
    let mut rho_last = 0.0;
    for i in 0..seeds {
        let seed = r.seed.wrapping_add(i as u64);
        let input = excitation_input(m, t, r.excitation_amplitude, seed);
        let ds = covsteer::sysdata::simulate(&r.truth, &r.spec.init, &input, t, seed)
            .map_err(|e| CliError::Config(format!("simulation failed: {e}")))?;
        let h = hankel_of(&ds)?;
        let est = estimate_analytic(&h, &r.sigma_known, r.delta).map_err(estimation_error)?;
        let noise = ds
            .true_noise
            .as_ref()
            .ok_or_else(|| CliError::Estimation("simulation stored no true noise".to_string()))?;
        let xi_true = matlib::hankel(noise, 0, 1, ds.horizon)
            .map_err(|e| CliError::Estimation(e.to_string()))?;
        let err = matlib::spectral_norm(&(&xi_true - &est.xi_hat));
        let is_covered = err <= est.rho;
        covered += usize::from(is_covered);
        rho_last = est.rho;
        csv.push_str(&format!(
            "{seed},{err},{rho},{}\n",
            u8::from(is_covered),
            rho = est.rho
        ));
    }
    let frac = covered as f64 / seeds as f64;
    println!(
        "coverage: delta = {}, rho = {:.6}, seeds = {seeds}",
        r.delta, rho_last
    );
    println!(
        "coverage: empirical coverage = {frac:.4} ({covered}/{seeds}), target >= {:.2}",
        1.0 - r.delta
    );
    let csv_path = r.out_dir.join("coverage.csv");
    write_file(&csv_path, &csv, CliError::Estimation)?;
    println!("coverage: wrote {}", csv_path.display());
    manifest
        .timings_ms
        .insert("coverage".into(), t0.elapsed().as_millis() as u64);
    manifest.stages.insert(
        "coverage".into(),
        StageRecord {
            status: "ok".into(),
            outputs: rel_paths(&r.out_dir, std::slice::from_ref(&csv_path)),
        },
    );
    manifest
        .summary
        .insert("coverage_fraction".into(), json_f64(frac));
    manifest
        .summary
        .insert("coverage_count".into(), serde_json::Value::from(covered));
    manifest
        .summary
        .insert("coverage_seeds".into(), serde_json::Value::from(seeds));
    manifest.summary.insert("rho".into(), json_f64(rho_last));
    Ok(())
}
