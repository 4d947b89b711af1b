use std::path::Path;

use serde::Serialize;
use wavemoments::covariance::{with_wv_covariance, CovarianceMethod};
use wavemoments::gmwm::{
    default_levels, fit_series, model_compare, CovarianceChoice, FitOptions, FitResult, JTest, OmegaPolicy,
    PipelineConfig, WeightingMatrix,
};
use wavemoments::lab::{outlier_flags, run_scenario, OutlierFlag, OutlierOptions, Scenario, ScenarioEstimator, SimulationReport};
use wavemoments::model::{format_model, parse_model};
use wavemoments::nalgebra::DMatrix;
use wavemoments::wavelet::decompose_slice;
use wavemoments::wv::{wv_confidence_intervals, EstimatorTag, WvEstimate, WvEstimator};
use wavemoments::{Error, PsiSpec};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::io::{num, opt_num, read_series, write_csv, write_json};

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

#[derive(Serialize)]
struct WvOut {
    estimator: EstimatorTag,
    psi: PsiSpec,
    scales: Vec<u64>,
    nu2: Vec<f64>,
    ci_lower: Option<Vec<f64>>,
    ci_upper: Option<Vec<f64>>,
    alpha: Option<f64>,
    std_error: Option<Vec<f64>>,
    covariance: Option<Vec<Vec<f64>>>,
    covariance_replicates: Option<usize>,
    coeff_counts: Vec<usize>,
    /// Levels whose estimating equation had no exact root.
    rootless_levels: Vec<usize>,
}

impl From<&WvEstimate> for WvOut {
    fn from(e: &WvEstimate) -> Self {
        WvOut {
            estimator: e.estimator,
            psi: e.psi,
            scales: e.scales.clone(),
            nu2: e.nu2.clone(),
            ci_lower: e.ci_lower.clone(),
            ci_upper: e.ci_upper.clone(),
            alpha: e.alpha,
            std_error: e.std_errors(),
            covariance: e.covariance.as_ref().map(rows),
            covariance_replicates: e.covariance_replicates,
            coeff_counts: e.coeff_counts.clone(),
            rootless_levels: e.rootless_levels.clone(),
        }
    }
}

fn robust_estimator(cfg: &RunConfig) -> CliResult<WvEstimator> {
    let psi = cfg.psi.resolve()?;
    Ok(if psi.is_identity() {
        WvEstimator::Standard
    } else {
        WvEstimator::Robust(psi)
    })
}

fn input(cfg: &RunConfig) -> CliResult<Vec<f64>> {
    let path = cfg.input.as_deref().ok_or_else(|| CliError::Usage("--input is required".into()))?;
    read_series(Path::new(path))
}

fn wv_method(cfg: &RunConfig, difference: bool) -> CliResult<CovarianceMethod> {
    match cfg.cov.as_str() {
        "batched" => Ok(CovarianceMethod::BatchedMeans { blocks: None }),
        "block-bootstrap" => Ok(CovarianceMethod::BlockBootstrap {
            replicates: cfg.replicates,
            block_len: cfg.block_len,
            difference,
            seed: cfg.seed,
        }),
        _ => Err(CliError::Usage("parametric covariance needs a model; use it with `fit`".into())),
    }
}

#[derive(Serialize)]
struct WvReport<'a> {
    config: &'a RunConfig,
    n_obs: usize,
    levels: usize,
    family: String,
    covariance_method: &'a str,
    standard: WvOut,
    robust: WvOut,
}

pub fn cmd_wv(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let x = input(cfg)?;
    let family = cfg.family()?;
    let robust = robust_estimator(cfg)?;
    let levels = match cfg.levels {
        Some(l) => l,
        None => default_levels(x.len(), family, &robust)?,
    };
    let pyr = decompose_slice(&x, levels, family)?;
    let method = wv_method(cfg, false)?;
    let estimate = |e: WvEstimator| -> CliResult<WvEstimate> {
        let est = e.estimate(&pyr)?;
        let est = with_wv_covariance(&x, &pyr, est, &method)?;
        Ok(wv_confidence_intervals(&est, cfg.alpha)?)
    };
    let standard = estimate(WvEstimator::Standard)?;
    let robust = estimate(robust)?;
    let report = WvReport {
        config: cfg,
        n_obs: x.len(),
        levels,
        family: family.to_string(),
        covariance_method: method.name(),
        standard: (&standard).into(),
        robust: (&robust).into(),
    };
    let plot: Vec<Vec<String>> = (0..levels)
        .map(|j| {
            let ci = |e: &WvEstimate, lower: bool| {
                let v = if lower { &e.ci_lower } else { &e.ci_upper };
                opt_num(v.as_ref().map(|v| v[j]))
            };
            vec![
                standard.scales[j].to_string(),
                num(standard.nu2[j]),
                ci(&standard, true),
                ci(&standard, false),
                num(robust.nu2[j]),
                ci(&robust, true),
                ci(&robust, false),
            ]
        })
        .collect();
    write_json(out, "wv.json", &report)?;
    write_csv(
        out,
        "wv_plot.csv",
        &["tau", "nu2_standard", "lo_standard", "hi_standard", "nu2_robust", "lo_robust", "hi_robust"],
        &plot,
    )
}

#[derive(Serialize)]
struct ParamOut {
    name: String,
    estimate: f64,
    std_error: Option<f64>,
    ci_lower: Option<f64>,
    ci_upper: Option<f64>,
}

#[derive(Serialize)]
struct FitOut {
    model: String,
    fitted: String,
    params: Vec<ParamOut>,
    alpha: f64,
    objective: f64,
    covariance: Option<Vec<Vec<f64>>>,
    j_test: Option<JTest>,
    weighting: wavemoments::gmwm::WeightKind,
    diagnostics: wavemoments::gmwm::Diagnostics,
}

impl FitOut {
    fn new(f: &FitResult) -> Self {
        FitOut {
            model: f.model.to_string(),
            fitted: format_model(&f.model, &f.theta),
            params: f
                .params
                .iter()
                .map(|p| ParamOut {
                    name: p.name.clone(),
                    estimate: p.estimate,
                    std_error: p.std_error,
                    ci_lower: p.ci_lower,
                    ci_upper: p.ci_upper,
                })
                .collect(),
            alpha: f.alpha,
            objective: f.objective,
            covariance: f.covariance.as_ref().map(rows),
            j_test: f.jtest,
            weighting: f.weighting,
            diagnostics: f.diagnostics.clone(),
        }
    }
}

#[derive(Serialize)]
struct CompareOut {
    rank: usize,
    model: String,
    objective: Option<f64>,
    j_test: Option<JTest>,
    fitted: Option<String>,
    residuals: Option<Vec<f64>>,
    error: Option<String>,
}

#[derive(Serialize)]
struct FitReport<'a> {
    config: &'a RunConfig,
    n_obs: usize,
    levels: usize,
    covariance_method: &'a str,
    fit: FitOut,
    wv: WvOut,
    comparison: Option<Vec<CompareOut>>,
}

pub fn cmd_fit(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let x = input(cfg)?;
    let family = cfg.family()?;
    let parsed = cfg
        .models
        .iter()
        .map(|m| parse_model(m))
        .collect::<Result<Vec<_>, Error>>()?;
    let primary = &parsed[0];
    let covariance = match cfg.cov.as_str() {
        "batched" => CovarianceChoice::Batched { blocks: None },
        "block-bootstrap" => CovarianceChoice::BlockBootstrap {
            replicates: cfg.replicates,
            block_len: cfg.block_len,
        },
        _ => CovarianceChoice::Parametric {
            replicates: cfg.replicates,
        },
    };
    let fit_opts = FitOptions {
        starts: cfg.starts,
        seed: cfg.seed,
        alpha: cfg.alpha,
        ..FitOptions::default()
    };
    let pipe = PipelineConfig {
        family,
        levels: cfg.levels,
        estimator: robust_estimator(cfg)?,
        covariance,
        omega: cfg.omega_kind()?,
        seed: cfg.seed,
        fit: fit_opts.clone(),
    };
    let start = (!primary.values.iter().all(Option::is_none)).then_some(primary.values.as_slice());
    let res = fit_series(&x, &primary.spec, start, &pipe)?;
    let comparison = if parsed.len() > 1 {
        let policy = match covariance {
            CovarianceChoice::Parametric { replicates } => OmegaPolicy::PerModel {
                kind: pipe.omega,
                replicates,
                seed: cfg.seed,
            },
            _ => OmegaPolicy::Shared(WeightingMatrix::from_estimate(pipe.omega, &res.wv)?),
        };
        let models: Vec<_> = parsed.iter().map(|p| p.spec.clone()).collect();
        let ranked = model_compare(&res.wv, &models, &policy, &fit_opts)?;
        Some(
            ranked
                .into_iter()
                .enumerate()
                .map(|(rank, row)| {
                    let (objective, j_test, fitted, error) = match &row.outcome {
                        Ok(f) => (Some(f.objective), f.jtest, Some(format_model(&f.model, &f.theta)), None),
                        Err(e) => (None, None, None, Some(e.clone())),
                    };
                    CompareOut {
                        rank: rank + 1,
                        model: cfg.models[row.index].clone(),
                        objective,
                        j_test,
                        fitted,
                        residuals: row.residuals,
                        error,
                    }
                })
                .collect(),
        )
    } else {
        None
    };
    let report = FitReport {
        config: cfg,
        n_obs: x.len(),
        levels: res.wv.n_scales(),
        covariance_method: covariance.name(),
        fit: FitOut::new(&res.fit),
        wv: (&res.wv).into(),
        comparison,
    };
    let overlay: Vec<Vec<String>> = (0..res.fit.scales.len())
        .map(|j| vec![res.fit.scales[j].to_string(), num(res.fit.nu_hat[j]), num(res.fit.nu_model[j])])
        .collect();
    write_json(out, "fit.json", &report)?;
    write_csv(out, "fit_wv_overlay.csv", &["tau", "nu2_hat", "nu2_model"], &overlay)
}

#[derive(Serialize)]
struct OutlierReport<'a> {
    config: &'a RunConfig,
    n_obs: usize,
    threshold: f64,
    max_level: usize,
    n_flagged: usize,
    flags: Vec<OutlierFlag>,
}

pub fn cmd_outliers(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let x = input(cfg)?;
    let family = cfg.family()?;
    let psi = cfg.psi.resolve()?;
    if cfg.max_level == 0 {
        return Err(CliError::Usage("--max-level must be at least 1".into()));
    }
    let pyr = decompose_slice(&x, cfg.max_level, family)?;
    let est = if psi.is_identity() {
        wavemoments::wv::estimate_wv_standard(&pyr)?
    } else {
        wavemoments::wv::estimate_wv_robust(&pyr, &psi)?
    };
    let opts = OutlierOptions {
        threshold: cfg.threshold,
        max_level: cfg.max_level,
    };
    let flags = outlier_flags(&est, &opts)?;
    write_json(
        out,
        "outliers.json",
        &OutlierReport {
            config: cfg,
            n_obs: x.len(),
            threshold: cfg.threshold,
            max_level: cfg.max_level,
            n_flagged: flags.len(),
            flags,
        },
    )
}

#[derive(Serialize)]
struct SimulationOut<'a> {
    config: &'a RunConfig,
    reports: &'a [SimulationReport],
}

pub fn cmd_simulate(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let sim = cfg
        .simulation
        .as_ref()
        .ok_or_else(|| CliError::Usage("simulate needs --config <scenario.toml>".into()))?;
    let psi = match &sim.psi {
        Some(p) => p.resolve()?,
        None => cfg.psi.resolve()?,
    };
    let estimators = sim
        .estimators
        .iter()
        .map(|n| ScenarioEstimator::parse(n, psi))
        .collect::<Result<Vec<_>, Error>>()?;
    if sim.scenario.is_empty() {
        return Err(CliError::Usage("scenario file defines no [[scenario]] entries".into()));
    }
    let seed = sim.seed.unwrap_or(cfg.seed);
    let scenarios = sim
        .scenario
        .iter()
        .map(|s| {
            let parsed = parse_model(&s.model)?;
            let theta = parsed
                .theta()
                .ok_or_else(|| Error::Config(format!("scenario '{}': every parameter value must be given", s.id)))?;
            Ok(Scenario {
                id: s.id.clone(),
                model: parsed.spec,
                theta,
                contamination: s.contamination.clone(),
                length: s.length.unwrap_or(sim.length),
                replicates: s.replicates.unwrap_or(sim.replicates),
                seed,
                estimators: estimators.clone(),
                fit: FitOptions {
                    starts: sim.starts.unwrap_or(cfg.starts),
                    ..FitOptions::default()
                },
            })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let mut reports = Vec::with_capacity(scenarios.len());
    for sc in &scenarios {
        let report = run_scenario(sc)?;
        eprintln!(
            "{}",
            serde_json::json!({ "event": "scenario_done", "scenario": report.scenario, "runtime_secs": report.runtime_secs })
        );
        reports.push(report);
    }
    let mut rows = Vec::new();
    for r in &reports {
        for rec in &r.records {
            for (i, name) in r.param_names.iter().enumerate() {
                rows.push(vec![
                    r.scenario.clone(),
                    rec.replicate.to_string(),
                    rec.estimator.clone(),
                    name.clone(),
                    num(r.theta[i]),
                    opt_num(rec.estimates.as_ref().map(|e| e[i])),
                    rec.error.clone().unwrap_or_default(),
                ]);
            }
        }
    }
    write_json(out, "simulation.json", &SimulationOut { config: cfg, reports: &reports })?;
    write_csv(
        out,
        "simulation_replicates.csv",
        &["scenario", "replicate", "estimator", "parameter", "true_value", "estimate", "error"],
        &rows,
    )
}
