//! Contamination schemes, robust scoring of estimators, simulation scenarios,
//! empirical sensitivity curves and weight-based outlier detection.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmwm::{default_levels, fit_series, CovarianceChoice, FitOptions, OmegaKind, PipelineConfig};
use crate::model::{format_model, parse_model, simulate, stream_rng, ModelSpec};
use crate::psi::PsiSpec;
use crate::wavelet::{decompose_slice, filter_length, WaveletFamily};
use crate::wv::{estimate_wv_robust, estimate_wv_standard, WvEstimate, WvEstimator};

/// Normal-consistency factor of the median absolute deviation.
pub const MAD_SCALE: f64 = 1.4826;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ContaminationKind {
    /// Haar wavelet atoms of scale `2^level` with `N(0, size)` amplitudes, on runs of `2^level` points.
    ScaleBased { level: usize },
    /// Additive `N(0, size)` at uniformly drawn positions.
    IsolatedAdditive,
    /// Additive `N(0, size)` on contiguous patches of `patch_len` points.
    Patchy { patch_len: usize },
    /// Shift `shifts[i]` added on the `i`-th contaminated segment.
    LevelShift { shifts: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContaminationSpec {
    #[serde(flatten)]
    pub kind: ContaminationKind,
    /// Fraction of contaminated observations, in `[0, 0.5)`.
    pub fraction: f64,
    /// Variance of the added noise; unused by level shifts.
    #[serde(default)]
    pub size: Option<f64>,
}

impl ContaminationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.fraction >= 0.0 && self.fraction < 0.5) {
            return Err(Error::Domain(format!(
                "contamination fraction must lie in [0, 0.5), got {}",
                self.fraction
            )));
        }
        let needs_size = !matches!(self.kind, ContaminationKind::LevelShift { .. });
        if needs_size {
            match self.size {
                Some(s) if s > 0.0 && s.is_finite() => {}
                _ => return Err(Error::Domain("contamination size must be positive".into())),
            }
        }
        match &self.kind {
            ContaminationKind::ScaleBased { level } if *level == 0 || *level > 20 => {
                Err(Error::Domain(format!("scale-based level must lie in 1..=20, got {level}")))
            }
            ContaminationKind::Patchy { patch_len } if *patch_len == 0 => {
                Err(Error::Domain("patch length must be at least 1".into()))
            }
            ContaminationKind::LevelShift { shifts } if shifts.is_empty() || shifts.iter().any(|s| !s.is_finite()) => {
                Err(Error::Domain("level shifts must be a non-empty list of finite values".into()))
            }
            _ => Ok(()),
        }
    }

    /// Number of modified positions for a series of length `n`: `ceil(fraction * n)`.
    pub fn count(&self, n: usize) -> usize {
        let k = (self.fraction * n as f64).ceil() as usize;
        k.min(n)
    }
}

/// Places runs with the given lengths at random non-overlapping offsets.
fn place_runs<R: Rng>(rng: &mut R, n: usize, lengths: &[usize]) -> Vec<usize> {
    let total: usize = lengths.iter().sum();
    let k = lengths.len();
    let free = n - total;
    let mut gaps: Vec<usize> = sample(rng, free + k, k).into_iter().collect();
    gaps.sort_unstable();
    let mut starts = Vec::with_capacity(k);
    let mut used = 0;
    for (i, g) in gaps.into_iter().enumerate() {
        starts.push(g - i + used);
        used += lengths[i];
    }
    starts
}

fn split_even(total: usize, parts: usize) -> Vec<usize> {
    (0..parts).map(|i| total / parts + usize::from(i < total % parts)).collect()
}

/// Contaminated copy of `series` together with the sorted modified positions.
pub fn contaminate_with_positions(series: &[f64], spec: &ContaminationSpec, seed: u64, stream: u64) -> Result<(Vec<f64>, Vec<usize>)> {
    spec.validate()?;
    let n = series.len();
    let count = spec.count(n);
    let mut out = series.to_vec();
    if count == 0 {
        return Ok((out, Vec::new()));
    }
    let mut rng = stream_rng(seed, stream);
    let sd = spec.size.unwrap_or(0.0).sqrt();
    let mut positions = Vec::with_capacity(count);
    match &spec.kind {
        ContaminationKind::IsolatedAdditive => {
            let mut idx: Vec<usize> = sample(&mut rng, n, count).into_iter().collect();
            idx.sort_unstable();
            for &t in &idx {
                out[t] += sd * rng.sample::<f64, _>(StandardNormal);
            }
            positions = idx;
        }
        ContaminationKind::Patchy { patch_len } => {
            let runs = split_runs(count, *patch_len);
            let starts = place_runs(&mut rng, n, &runs);
            for (s, len) in starts.into_iter().zip(runs) {
                for t in s..s + len {
                    out[t] += sd * rng.sample::<f64, _>(StandardNormal);
                    positions.push(t);
                }
            }
        }
        ContaminationKind::LevelShift { shifts } => {
            if count < shifts.len() {
                return Err(Error::Domain(format!(
                    "{} shifted segments need at least as many contaminated points, got {count}",
                    shifts.len()
                )));
            }
            let runs = split_even(count, shifts.len());
            let starts = place_runs(&mut rng, n, &runs);
            for ((s, len), mu) in starts.into_iter().zip(runs).zip(shifts) {
                for t in s..s + len {
                    out[t] += mu;
                    positions.push(t);
                }
            }
        }
        ContaminationKind::ScaleBased { level } => {
            // each run carries one Haar wavelet atom of scale 2^level with a random amplitude
            let half = 1usize << (level - 1);
            let runs = split_runs(count, 2 * half);
            let starts = place_runs(&mut rng, n, &runs);
            for (s, len) in starts.into_iter().zip(runs) {
                let a = sd * rng.sample::<f64, _>(StandardNormal);
                for (k, t) in (s..s + len).enumerate() {
                    out[t] += if k < half { a } else { -a };
                    positions.push(t);
                }
            }
        }
    }
    positions.sort_unstable();
    Ok((out, positions))
}

fn split_runs(total: usize, run: usize) -> Vec<usize> {
    let mut v = vec![run; total / run];
    if total % run > 0 {
        v.push(total % run);
    }
    v
}

/// Contaminated copy of `series`; deterministic given `(seed, stream)`.
pub fn contaminate(series: &[f64], spec: &ContaminationSpec, seed: u64, stream: u64) -> Result<Vec<f64>> {
    contaminate_with_positions(series, spec, seed, stream).map(|(x, _)| x)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Normalized median absolute deviation.
pub fn mad(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    let m = median(&mut v);
    let mut dev: Vec<f64> = values.iter().map(|x| (x - m).abs()).collect();
    MAD_SCALE * median(&mut dev)
}

/// Robust relative RMSE per parameter:
/// `sqrt(med((est - true) / true)^2 + mad(est / true)^2)`.
///
/// A single estimate is accepted and gives `mad = 0`.
pub fn rmse_star(estimates: &[Vec<f64>], truth: &[f64]) -> Result<Vec<f64>> {
    if estimates.is_empty() {
        return Err(Error::Config("RMSE* needs at least one estimate".into()));
    }
    if let Some(i) = truth.iter().position(|t| *t == 0.0 || !t.is_finite()) {
        return Err(Error::Domain(format!("true parameter {i} is zero or not finite; relative error undefined")));
    }
    if let Some(e) = estimates.iter().find(|e| e.len() != truth.len()) {
        return Err(Error::Dimension {
            expected: truth.len(),
            found: e.len(),
        });
    }
    Ok(truth
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let mut ratio: Vec<f64> = estimates.iter().map(|e| e[i] / t).collect();
            let spread = mad(&ratio);
            let bias = median(&mut ratio) - 1.0;
            (bias * bias + spread * spread).sqrt()
        })
        .collect())
}

/// Second-step estimator compared in a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum ScenarioEstimator {
    /// Standard wavelet variance in the first step.
    Gmwm,
    /// M-estimated wavelet variance in the first step.
    Rgmwm { psi: PsiSpec },
}

impl ScenarioEstimator {
    pub fn name(&self) -> &'static str {
        match self {
            ScenarioEstimator::Gmwm => "gmwm",
            ScenarioEstimator::Rgmwm { .. } => "rgmwm",
        }
    }

    fn wv_estimator(&self) -> WvEstimator {
        match self {
            ScenarioEstimator::Gmwm => WvEstimator::Standard,
            ScenarioEstimator::Rgmwm { psi } => WvEstimator::Robust(*psi),
        }
    }

    /// Parses `gmwm` or `rgmwm`; the robust variant uses `psi`.
    pub fn parse(name: &str, psi: PsiSpec) -> Result<Self> {
        match name.trim().to_ascii_lowercase().as_str() {
            "gmwm" => Ok(ScenarioEstimator::Gmwm),
            "rgmwm" => Ok(ScenarioEstimator::Rgmwm { psi }),
            other => Err(Error::Config(format!("unknown estimator '{other}' (expected gmwm or rgmwm)"))),
        }
    }
}

impl fmt::Display for ScenarioEstimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioEstimator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s, PsiSpec::default())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub id: String,
    pub model: ModelSpec,
    pub theta: Vec<f64>,
    pub contamination: Option<ContaminationSpec>,
    pub length: usize,
    pub replicates: usize,
    pub seed: u64,
    pub estimators: Vec<ScenarioEstimator>,
    pub fit: FitOptions,
}

impl Scenario {
    /// Same scenario with the contamination removed.
    pub fn clean(&self) -> Scenario {
        Scenario {
            id: format!("{}-clean", self.id),
            contamination: None,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimatorSummary {
    pub estimator: ScenarioEstimator,
    pub rmse_star: Vec<f64>,
    pub median_estimate: Vec<f64>,
    pub successes: usize,
    pub failures: usize,
    pub failure_rate: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub estimator: String,
    pub estimates: Option<Vec<f64>>,
    pub objective: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationReport {
    pub scenario: String,
    pub model: String,
    pub param_names: Vec<String>,
    pub theta: Vec<f64>,
    pub contamination: Option<ContaminationSpec>,
    pub length: usize,
    pub levels: usize,
    pub replicates: usize,
    pub seed: u64,
    pub estimators: Vec<EstimatorSummary>,
    #[serde(skip)]
    pub records: Vec<ReplicateRecord>,
    /// Wall-clock time; left out of serialized output so reports are reproducible.
    #[serde(skip)]
    pub runtime_secs: f64,
}

/// Simulates, optionally contaminates and fits every estimator on each replicate.
///
/// Replicate `r` uses stream `2r` for the process and `2r + 1` for the
/// contamination, so results do not depend on thread scheduling.
pub fn run_scenario(sc: &Scenario) -> Result<SimulationReport> {
    if sc.replicates == 0 {
        return Err(Error::Config("replicates must be at least 1".into()));
    }
    if sc.estimators.is_empty() {
        return Err(Error::Config("at least one estimator is required".into()));
    }
    sc.model.validate(&sc.theta)?;
    if let Some(c) = &sc.contamination {
        c.validate()?;
    }
    let robust_floor = sc
        .estimators
        .iter()
        .map(|e| default_levels(sc.length, WaveletFamily::Haar, &e.wv_estimator()))
        .collect::<Result<Vec<_>>>()?;
    let levels = robust_floor.into_iter().min().unwrap_or(1);
    if sc.model.n_params() > levels {
        return Err(Error::Identifiability {
            params: sc.model.n_params(),
            scales: levels,
        });
    }
    let started = Instant::now();
    let per_rep: Vec<Vec<ReplicateRecord>> = (0..sc.replicates)
        .into_par_iter()
        .map(|r| {
            let data = simulate(&sc.model, &sc.theta, sc.length, sc.seed, 2 * r as u64).and_then(|x| match &sc.contamination {
                Some(c) => contaminate(&x, c, sc.seed, 2 * r as u64 + 1),
                None => Ok(x),
            });
            sc.estimators
                .iter()
                .map(|e| {
                    let outcome = data.as_ref().map_err(Clone::clone).and_then(|x| {
                        let cfg = PipelineConfig {
                            family: WaveletFamily::Haar,
                            levels: Some(levels),
                            estimator: e.wv_estimator(),
                            covariance: CovarianceChoice::Batched { blocks: None },
                            omega: OmegaKind::Diagonal,
                            seed: sc.seed.wrapping_add(r as u64),
                            fit: sc.fit.clone(),
                        };
                        fit_series(x, &sc.model, None, &cfg)
                    });
                    match outcome {
                        Ok(out) => ReplicateRecord {
                            replicate: r,
                            estimator: e.name().into(),
                            estimates: Some(out.fit.theta),
                            objective: Some(out.fit.objective),
                            error: None,
                        },
                        Err(err) => ReplicateRecord {
                            replicate: r,
                            estimator: e.name().into(),
                            estimates: None,
                            objective: None,
                            error: Some(err.to_string()),
                        },
                    }
                })
                .collect()
        })
        .collect();
    let records: Vec<ReplicateRecord> = per_rep.into_iter().flatten().collect();
    let estimators = sc
        .estimators
        .iter()
        .map(|e| {
            let ok: Vec<Vec<f64>> = records
                .iter()
                .filter(|r| r.estimator == e.name())
                .filter_map(|r| r.estimates.clone())
                .collect();
            let failures = sc.replicates - ok.len();
            let (rmse, med) = if ok.is_empty() {
                (vec![f64::NAN; sc.theta.len()], vec![f64::NAN; sc.theta.len()])
            } else {
                let med = (0..sc.theta.len())
                    .map(|i| median(&mut ok.iter().map(|v| v[i]).collect::<Vec<_>>()))
                    .collect();
                (rmse_star(&ok, &sc.theta)?, med)
            };
            Ok(EstimatorSummary {
                estimator: *e,
                rmse_star: rmse,
                median_estimate: med,
                successes: ok.len(),
                failures,
                failure_rate: failures as f64 / sc.replicates as f64,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SimulationReport {
        scenario: sc.id.clone(),
        model: format_model(&sc.model, &sc.theta),
        param_names: sc.model.param_names(),
        theta: sc.theta.clone(),
        contamination: sc.contamination.clone(),
        length: sc.length,
        levels,
        replicates: sc.replicates,
        seed: sc.seed,
        estimators,
        records,
        runtime_secs: started.elapsed().as_secs_f64(),
    })
}

/// The five reference models with their contamination settings:
/// AR(1), AR(2), ARMA(1,2), ARMA(3,1) and a two-AR(1)-plus-noise state-space model.
pub fn reference_scenarios(length: usize, replicates: usize, seed: u64) -> Vec<Scenario> {
    let estimators = vec![ScenarioEstimator::Gmwm, ScenarioEstimator::Rgmwm { psi: PsiSpec::default() }];
    let defs: [(&str, &str, ContaminationSpec); 5] = [
        (
            "ar1",
            "AR1(rho=0.9, nu2=1)",
            ContaminationSpec {
                kind: ContaminationKind::ScaleBased { level: 3 },
                fraction: 0.01,
                size: Some(100.0),
            },
        ),
        (
            "ar2",
            "ARMA(ar=[0.5, -0.3], sigma2=1)",
            ContaminationSpec {
                kind: ContaminationKind::IsolatedAdditive,
                fraction: 0.05,
                size: Some(9.0),
            },
        ),
        (
            "arma12",
            "ARMA(ar=[0.5], ma=[-0.1, 0.5], sigma2=1)",
            ContaminationSpec {
                kind: ContaminationKind::LevelShift { shifts: vec![5.0, -3.0] },
                fraction: 0.05,
                size: None,
            },
        ),
        (
            "arma31",
            "ARMA(ar=[0.7, 0.3, -0.2], ma=[0.5], sigma2=2)",
            ContaminationSpec {
                kind: ContaminationKind::Patchy { patch_len: 5 },
                fraction: 0.01,
                size: Some(100.0),
            },
        ),
        (
            "ssm",
            "AR1(rho=0.99, nu2=0.1) + AR1(rho=0.6, nu2=2) + WN(sigma2=3)",
            ContaminationSpec {
                kind: ContaminationKind::IsolatedAdditive,
                fraction: 0.05,
                size: Some(9.0),
            },
        ),
    ];
    defs.into_iter()
        .map(|(id, model, c)| {
            let parsed = parse_model(model).expect("reference model parses");
            Scenario {
                id: id.into(),
                theta: parsed.theta().expect("reference model is fully specified"),
                model: parsed.spec,
                contamination: Some(c),
                length,
                replicates,
                seed,
                estimators: estimators.clone(),
                fit: FitOptions::default(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutlierOptions {
    /// Observations whose minimum weight is below this value are flagged.
    pub threshold: f64,
    /// Highest level whose coefficients are inspected.
    pub max_level: usize,
}

impl Default for OutlierOptions {
    fn default() -> Self {
        Self {
            threshold: 0.1,
            max_level: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutlierFlag {
    /// 0-based index into the series.
    pub index: usize,
    pub min_weight: f64,
    /// Levels with a down-weighted coefficient covering this observation.
    pub levels: Vec<usize>,
}

/// Flags observations covered by heavily down-weighted coefficients of a robust estimate.
pub fn outlier_flags(est: &WvEstimate, opts: &OutlierOptions) -> Result<Vec<OutlierFlag>> {
    let weights = est.weights.as_ref().ok_or(Error::RobustWeightsRequired)?;
    if !est.is_robust() {
        return Err(Error::RobustWeightsRequired);
    }
    if opts.max_level == 0 {
        return Err(Error::Config("max_level must be at least 1".into()));
    }
    if !(opts.threshold >= 0.0) {
        return Err(Error::Domain("threshold must be non-negative".into()));
    }
    let n = est.source_len;
    let base = est.family.base_length()?;
    let mut min_w = vec![f64::INFINITY; n];
    let mut levels: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for j in 1..=opts.max_level.min(weights.len()) {
        let len = filter_length(base, j);
        for (i, &w) in weights[j - 1].iter().enumerate() {
            // coefficient i depends on samples i ..= i + len - 1
            for t in i..(i + len).min(n) {
                if w < min_w[t] {
                    min_w[t] = w;
                }
                if w < opts.threshold {
                    levels[t].insert(j);
                }
            }
        }
    }
    Ok(min_w
        .into_iter()
        .enumerate()
        .filter(|(_, w)| *w < opts.threshold)
        .map(|(index, min_weight)| OutlierFlag {
            index,
            min_weight,
            levels: levels[index].iter().copied().collect(),
        })
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct SensitivityCurve {
    /// 0-based position that was replaced.
    pub index: usize,
    pub probes: Vec<f64>,
    pub baseline_robust: f64,
    pub baseline_standard: f64,
    /// Level-1 robust wavelet variance with the probe in place.
    pub robust: Vec<f64>,
    pub standard: Vec<f64>,
}

/// Replaces observation `ceil(T / 2)` (1-based) by each probe and re-estimates
/// the level-1 wavelet variance with both estimators.
pub fn sensitivity_curve(series: &[f64], psi: &PsiSpec, family: WaveletFamily, probes: &[f64]) -> Result<SensitivityCurve> {
    if let Some(p) = probes.iter().find(|p| !p.is_finite()) {
        return Err(Error::Domain(format!("probe value {p} is not finite")));
    }
    let n = series.len();
    if n < 2 {
        return Err(Error::Input("series too short for a sensitivity curve".into()));
    }
    let index = n.div_ceil(2) - 1;
    let level1 = |x: &[f64]| -> Result<(f64, f64)> {
        let pyr = decompose_slice(x, 1, family)?;
        Ok((estimate_wv_robust(&pyr, psi)?.nu2[0], estimate_wv_standard(&pyr)?.nu2[0]))
    };
    let (baseline_robust, baseline_standard) = level1(series)?;
    let curves = probes
        .par_iter()
        .map(|&p| {
            let mut x = series.to_vec();
            x[index] = p;
            level1(&x)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SensitivityCurve {
        index,
        probes: probes.to_vec(),
        baseline_robust,
        baseline_standard,
        robust: curves.iter().map(|c| c.0).collect(),
        standard: curves.iter().map(|c| c.1).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: ContaminationKind, fraction: f64) -> ContaminationSpec {
        ContaminationSpec {
            kind,
            fraction,
            size: Some(100.0),
        }
    }

    #[test]
    fn zero_fraction_is_identity() {
        let x: Vec<f64> = (0..100).map(|i| i as f64).collect();
        for kind in [
            ContaminationKind::IsolatedAdditive,
            ContaminationKind::Patchy { patch_len: 4 },
            ContaminationKind::ScaleBased { level: 3 },
        ] {
            assert_eq!(contaminate(&x, &spec(kind, 0.0), 1, 0).unwrap(), x);
        }
    }

    #[test]
    fn exact_count_all_kinds() {
        let x = vec![0.0; 1000];
        let kinds = [
            ContaminationKind::IsolatedAdditive,
            ContaminationKind::Patchy { patch_len: 7 },
            ContaminationKind::ScaleBased { level: 3 },
            ContaminationKind::LevelShift { shifts: vec![5.0, -3.0] },
        ];
        for kind in kinds {
            for eps in [0.01, 0.013, 0.05, 0.2] {
                let (y, pos) = contaminate_with_positions(&x, &spec(kind.clone(), eps), 9, 1).unwrap();
                let expected = (eps * 1000.0_f64).ceil() as usize;
                assert_eq!(pos.len(), expected, "{kind:?} {eps}");
                let set: BTreeSet<usize> = pos.iter().copied().collect();
                assert_eq!(set.len(), expected);
                let changed = y.iter().filter(|v| **v != 0.0).count();
                assert!(changed <= expected);
            }
        }
    }

    #[test]
    fn level_shift_segments() {
        let x = vec![0.0; 1000];
        let (y, pos) = contaminate_with_positions(
            &x,
            &ContaminationSpec {
                kind: ContaminationKind::LevelShift { shifts: vec![5.0, -3.0] },
                fraction: 0.05,
                size: None,
            },
            3,
            0,
        )
        .unwrap();
        assert_eq!(y.iter().filter(|v| **v == 5.0).count(), 25);
        assert_eq!(y.iter().filter(|v| **v == -3.0).count(), 25);
        let first: Vec<usize> = pos.iter().copied().filter(|&t| y[t] == 5.0).collect();
        assert_eq!(first.last().unwrap() - first[0], 24);
    }

    #[test]
    fn invalid_specs() {
        let x = vec![0.0; 10];
        assert!(contaminate(&x, &spec(ContaminationKind::IsolatedAdditive, 0.5), 0, 0).is_err());
        assert!(contaminate(&x, &spec(ContaminationKind::Patchy { patch_len: 0 }, 0.1), 0, 0).is_err());
        let mut s = spec(ContaminationKind::IsolatedAdditive, 0.1);
        s.size = Some(-1.0);
        assert!(matches!(contaminate(&x, &s, 0, 0), Err(Error::Domain(_))));
    }

    #[test]
    fn scale_contamination_hits_its_level() {
        let x = vec![0.0; 1 << 14];
        let s = spec(ContaminationKind::ScaleBased { level: 3 }, 0.2);
        let y = contaminate(&x, &s, 5, 0).unwrap();
        let pyr = decompose_slice(&y, 6, WaveletFamily::Haar).unwrap();
        let nu = estimate_wv_standard(&pyr).unwrap().nu2;
        let peak = nu.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(peak + 1, 3, "{nu:?}");
    }

    #[test]
    fn rmse_star_hand_example() {
        let r = rmse_star(&[vec![1.1], vec![0.9], vec![1.0]], &[1.0]).unwrap();
        assert!((r[0] - 0.14826).abs() < 1e-12);
        let r = rmse_star(&vec![vec![2.0, 3.0]; 4], &[2.0, 3.0]).unwrap();
        assert_eq!(r, vec![0.0, 0.0]);
        assert!(matches!(rmse_star(&[vec![1.0]], &[0.0]), Err(Error::Domain(m)) if m.contains('0')));
    }

    #[test]
    fn rmse_star_breakdown() {
        let mut est: Vec<Vec<f64>> = (0..100).map(|i| vec![1.0 + 0.01 * ((i % 11) as f64 - 5.0)]).collect();
        let base = rmse_star(&est, &[1.0]).unwrap()[0];
        est.push(vec![1e6]);
        let wild = rmse_star(&est, &[1.0]).unwrap()[0];
        assert!((wild - base).abs() / base < 0.05);
    }

    #[test]
    fn unknown_estimator() {
        assert!(matches!("mle".parse::<ScenarioEstimator>(), Err(Error::Config(_))));
        assert_eq!("RGMWM".parse::<ScenarioEstimator>().unwrap().name(), "rgmwm");
    }

    #[test]
    fn spike_is_flagged() {
        let mut x = simulate(&parse_model("WN").unwrap().spec, &[1.0], 2000, 4, 0).unwrap();
        x[700] = 50.0;
        let pyr = decompose_slice(&x, 4, WaveletFamily::Haar).unwrap();
        let est = estimate_wv_robust(&pyr, &PsiSpec::default()).unwrap();
        let flags = outlier_flags(&est, &OutlierOptions::default()).unwrap();
        let hit = flags.iter().find(|f| f.index == 700).expect("spike flagged");
        assert!(hit.min_weight < 1e-6);
        let elsewhere = flags.iter().filter(|f| f.index.abs_diff(700) > 4).count();
        assert!(elsewhere < 60, "{elsewhere}");
        let none = outlier_flags(&est, &OutlierOptions { threshold: 0.0, max_level: 2 }).unwrap();
        assert!(none.is_empty());
        let std = estimate_wv_standard(&pyr).unwrap();
        assert!(matches!(outlier_flags(&std, &OutlierOptions::default()), Err(Error::RobustWeightsRequired)));
    }

    #[test]
    fn sensitivity_probe_at_original_value() {
        let x = simulate(&parse_model("WN").unwrap().spec, &[1.0], 512, 2, 0).unwrap();
        let idx = 255;
        let c = sensitivity_curve(&x, &PsiSpec::default(), WaveletFamily::Haar, &[x[idx], 1e4]).unwrap();
        assert_eq!(c.index, idx);
        assert_eq!(c.robust[0], c.baseline_robust);
        assert_eq!(c.standard[0], c.baseline_standard);
        assert!(c.standard[1] > 10.0 * c.baseline_standard);
        assert!((c.robust[1] / c.baseline_robust - 1.0).abs() < 0.05);
    }

    #[test]
    fn scenario_is_reproducible() {
        let mut sc = reference_scenarios(256, 3, 11).remove(0);
        sc.fit.starts = 2;
        let a = run_scenario(&sc).unwrap();
        let b = run_scenario(&sc).unwrap();
        assert_eq!(a.records.len(), 6);
        for (x, y) in a.records.iter().zip(&b.records) {
            assert_eq!(x.estimates, y.estimates);
        }
        assert_eq!(a.estimators[0].successes + a.estimators[0].failures, 3);
        let mut zero = sc.clone();
        zero.replicates = 0;
        assert!(matches!(run_scenario(&zero), Err(Error::Config(_))));
    }
}
