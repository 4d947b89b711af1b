//! Second step: fit a model by minimizing the weighted distance between the
//! estimated and the model-implied wavelet variance.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::covariance::{estimate_wv_covariance, CovarianceMethod};
use crate::error::{Error, Result};
use crate::model::{stream_rng, Component, FilterBank, ModelSpec, ParamKind};
use crate::optim::{levenberg_marquardt, nelder_mead, NelderMeadOptions};
use crate::wavelet::{decompose_slice, max_scales, WaveletFamily};
use crate::wv::{wv_confidence_intervals, WvEstimate, WvEstimator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OmegaKind {
    /// `Omega_jj = 1 / V_jj`.
    Diagonal,
    /// `Omega = V^-1`.
    Full,
    Identity,
}

impl FromStr for OmegaKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "diag" | "diagonal" => Ok(OmegaKind::Diagonal),
            "full" => Ok(OmegaKind::Full),
            "identity" | "id" => Ok(OmegaKind::Identity),
            other => Err(Error::Config(format!(
                "unknown weighting '{other}' (expected diag, full or identity)"
            ))),
        }
    }
}

impl fmt::Display for OmegaKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OmegaKind::Diagonal => "diag",
            OmegaKind::Full => "full",
            OmegaKind::Identity => "identity",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightKind {
    Diagonal,
    Full,
    Identity,
    Custom,
}

/// Symmetric positive definite weighting matrix of the quadratic form.
#[derive(Debug, Clone)]
pub struct WeightingMatrix {
    kind: WeightKind,
    matrix: DMatrix<f64>,
    /// Lower Cholesky factor `L` with `Omega = L L'`.
    factor: DMatrix<f64>,
}

impl WeightingMatrix {
    fn build(kind: WeightKind, matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::Dimension {
                expected: matrix.nrows(),
                found: matrix.ncols(),
            });
        }
        let asym = (&matrix - matrix.transpose()).amax();
        if asym > 1e-10 * matrix.amax().max(f64::MIN_POSITIVE) {
            return Err(Error::Config("weighting matrix is not symmetric".into()));
        }
        let matrix = (&matrix + matrix.transpose()) * 0.5;
        let factor = matrix
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Config("weighting matrix is not positive definite".into()))?
            .l();
        Ok(Self { kind, matrix, factor })
    }

    pub fn identity(j: usize) -> Self {
        Self::build(WeightKind::Identity, DMatrix::identity(j, j)).expect("identity is SPD")
    }

    /// `Omega_jj = 1 / max(V_jj, floor)` with a relative floor.
    pub fn diagonal_inverse_variance(v_hat: &DMatrix<f64>) -> Result<Self> {
        let j = v_hat.nrows();
        let max_diag = (0..j).map(|k| v_hat[(k, k)]).fold(0.0, f64::max);
        if !(max_diag > 0.0) || !max_diag.is_finite() {
            return Err(Error::Numerical {
                context: "weighting matrix".into(),
                detail: "covariance estimate has no positive diagonal entry".into(),
            });
        }
        let floor = max_diag * 1e-12;
        let d = DVector::from_iterator(j, (0..j).map(|k| 1.0 / v_hat[(k, k)].max(floor)));
        Self::build(WeightKind::Diagonal, DMatrix::from_diagonal(&d))
    }

    /// `Omega = V^-1`, optionally scaled by `(B - J - 2) / (B - 1)` for a
    /// covariance estimated from `B` resamples, which removes the bias of the
    /// inverted sample covariance.
    pub fn full_inverse(v_hat: &DMatrix<f64>, replicates: Option<usize>) -> Result<Self> {
        let j = v_hat.nrows();
        let inv = v_hat
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical {
                context: "weighting matrix".into(),
                detail: "covariance estimate is singular; use diagonal weighting or more resamples".into(),
            })?
            .inverse();
        let scale = match replicates {
            Some(b) if b > j + 2 => (b - j - 2) as f64 / (b - 1) as f64,
            _ => 1.0,
        };
        Self::build(WeightKind::Full, inv * scale)
    }

    pub fn custom(matrix: DMatrix<f64>) -> Result<Self> {
        Self::build(WeightKind::Custom, matrix)
    }

    /// Builds the requested kind from the covariance attached to `est`.
    pub fn from_estimate(kind: OmegaKind, est: &WvEstimate) -> Result<Self> {
        if kind == OmegaKind::Identity {
            return Ok(Self::identity(est.n_scales()));
        }
        let cov = est
            .covariance
            .as_ref()
            .ok_or_else(|| Error::Config(format!("{kind} weighting needs a covariance estimate")))?;
        let v_hat = cov * est.source_len as f64;
        match kind {
            OmegaKind::Diagonal => Self::diagonal_inverse_variance(&v_hat),
            OmegaKind::Full => Self::full_inverse(&v_hat, est.covariance_replicates),
            OmegaKind::Identity => unreachable!(),
        }
    }

    /// `diag(1 / nu_j^4)`: a data-scaled, model-free pilot weighting.
    pub fn relative(nu_hat: &[f64]) -> Result<Self> {
        let d = DVector::from_iterator(nu_hat.len(), nu_hat.iter().map(|v| 1.0 / (v * v).max(f64::MIN_POSITIVE)));
        Self::build(WeightKind::Custom, DMatrix::from_diagonal(&d))
    }

    pub fn scaled(&self, k: f64) -> Result<Self> {
        if !(k > 0.0) {
            return Err(Error::Domain("weighting scale must be positive".into()));
        }
        Self::build(self.kind, &self.matrix * k)
    }

    pub fn kind(&self) -> WeightKind {
        self.kind
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// `L' e`, whose squared norm is `e' Omega e`.
    fn whiten(&self, e: &DVector<f64>) -> DVector<f64> {
        self.factor.tr_mul(e)
    }
}

/// `(nu_hat - nu)' Omega (nu_hat - nu)`.
pub fn quadratic_form(nu_hat: &[f64], nu: &[f64], omega: &WeightingMatrix) -> Result<f64> {
    if nu_hat.len() != nu.len() || nu.len() != omega.dim() {
        return Err(Error::Dimension {
            expected: omega.dim(),
            found: nu.len().min(nu_hat.len()),
        });
    }
    let e = DVector::from_iterator(nu.len(), nu_hat.iter().zip(nu).map(|(a, b)| a - b));
    Ok(omega.whiten(&e).norm_squared().max(0.0))
}

/// GMWM objective `Q(theta)`.
pub fn objective(theta: &[f64], nu_hat: &[f64], model: &ModelSpec, omega: &WeightingMatrix, bank: &FilterBank) -> Result<f64> {
    if bank.n_levels() != nu_hat.len() {
        return Err(Error::Dimension {
            expected: bank.n_levels(),
            found: nu_hat.len(),
        });
    }
    let nu = bank.wv(model, theta)?;
    quadratic_form(nu_hat, &nu, omega)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Number of starting points: one moment-matched start plus Latin-hypercube draws.
    pub starts: usize,
    /// Seed for the Latin-hypercube starts.
    pub seed: u64,
    /// Objective evaluations allowed per simplex run.
    pub max_evals: usize,
    /// Simplex restarts from the best point of each run.
    pub restarts: usize,
    /// Levenberg-Marquardt refinement of each simplex solution.
    pub polish: bool,
    pub alpha: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            starts: 5,
            seed: 0,
            max_evals: 4000,
            restarts: 2,
            polish: true,
            alpha: 0.05,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamEstimate {
    pub name: String,
    pub estimate: f64,
    pub std_error: Option<f64>,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct JTest {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    /// False when the weighting is not a consistent estimate of `V^-1`, in
    /// which case the chi-square reference is only approximate.
    pub efficient_weighting: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub evaluations: usize,
    pub iterations: usize,
    pub starts: usize,
    pub restarts: usize,
    pub simplex_size: f64,
    /// Starts that reached the best objective at the same parameter values.
    pub starts_at_optimum: usize,
    /// All starts agree; disagreement hints at weak identification.
    pub restarts_agree: bool,
    pub converged: bool,
    /// Why no parameter covariance is available, e.g. a rank-deficient Jacobian.
    pub covariance_error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: ModelSpec,
    pub theta: Vec<f64>,
    pub params: Vec<ParamEstimate>,
    pub objective: f64,
    /// `B V B' / T`.
    pub covariance: Option<DMatrix<f64>>,
    pub alpha: f64,
    pub jtest: Option<JTest>,
    pub diagnostics: Diagnostics,
    pub scales: Vec<u64>,
    pub nu_hat: Vec<f64>,
    pub nu_model: Vec<f64>,
    pub n_obs: usize,
    pub weighting: WeightKind,
}

impl FitResult {
    pub fn param_names(&self) -> Vec<String> {
        self.params.iter().map(|p| p.name.clone()).collect()
    }
}

fn transformed_ranges(model: &ModelSpec, u_ref: &[f64]) -> Vec<(f64, f64)> {
    let slots = model.param_slots();
    let mut first_in_block = vec![false; slots.len()];
    let mut prev: Option<(usize, ParamKind)> = None;
    for (i, s) in slots.iter().enumerate() {
        first_in_block[i] = prev != Some((s.component, s.kind));
        prev = Some((s.component, s.kind));
    }
    slots
        .iter()
        .enumerate()
        .map(|(i, s)| match s.kind {
            ParamKind::Variance => (u_ref[i] - 2.5, u_ref[i] + 2.5),
            ParamKind::Ar if first_in_block[i] => (-1.5, 2.6),
            ParamKind::Ar | ParamKind::Ma => (-1.2, 1.2),
            ParamKind::Real => {
                let s = u_ref[i].abs().max(1e-8);
                (0.0, 3.0 * s)
            }
        })
        .collect()
}

/// Non-negative least squares by cyclic coordinate descent.
fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> Vec<f64> {
    let k = a.ncols();
    let ata = a.transpose() * a;
    let atb = a.transpose() * b;
    let mut x = vec![0.0; k];
    for _ in 0..500 {
        let mut change: f64 = 0.0;
        for i in 0..k {
            if ata[(i, i)] <= 0.0 {
                continue;
            }
            let mut r = atb[i];
            for (l, xl) in x.iter().enumerate() {
                if l != i {
                    r -= ata[(i, l)] * xl;
                }
            }
            let v = (r / ata[(i, i)]).max(0.0);
            change = change.max((v - x[i]).abs() / v.abs().max(x[i].abs()).max(1e-300));
            x[i] = v;
        }
        if change < 1e-12 {
            break;
        }
    }
    x
}

/// Rescales each component's amplitude so that the mixture best matches `nu_hat`
/// under `omega`, keeping shape parameters fixed.
fn rescale_amplitudes(model: &ModelSpec, theta: &[f64], nu_hat: &[f64], omega: &WeightingMatrix, bank: &FilterBank) -> Vec<f64> {
    let Ok(parts) = bank.wv_by_component(model, theta) else {
        return theta.to_vec();
    };
    let j = nu_hat.len();
    let k = parts.len();
    let mut a = DMatrix::zeros(j, k);
    for (c, part) in parts.iter().enumerate() {
        let col = omega.whiten(&DVector::from_vec(part.clone()));
        a.set_column(c, &col);
    }
    let b = omega.whiten(&DVector::from_vec(nu_hat.to_vec()));
    let s = nnls(&a, &b);
    let max_s = s.iter().cloned().fold(0.0, f64::max);
    if !(max_s > 0.0) {
        return theta.to_vec();
    }
    let mut out = theta.to_vec();
    let mut offset = 0;
    for (c, comp) in model.components().iter().enumerate() {
        let n = comp.n_params();
        let factor = s[c].max(max_s * 1e-3);
        match comp {
            Component::Drift => out[offset] *= factor.sqrt(),
            _ => out[offset + n - 1] *= factor,
        }
        offset += n;
    }
    out
}

/// Moment-matched starting values; entries given in `fixed` are kept.
fn heuristic_theta(model: &ModelSpec, nu_hat: &[f64], scales: &[u64], fixed: Option<&[Option<f64>]>) -> Vec<f64> {
    let j = nu_hat.len();
    let k = model.components().len() as f64;
    let total: f64 = nu_hat.iter().sum::<f64>().max(f64::MIN_POSITIVE);
    let first = nu_hat[0].max(f64::MIN_POSITIVE);
    let last = nu_hat[j - 1].max(f64::MIN_POSITIVE);
    let tau_last = scales[j - 1] as f64;
    let n_ar1 = model.components().iter().filter(|c| **c == Component::Ar1).count();
    let mut ar1_seen = 0;
    let mut theta = Vec::with_capacity(model.n_params());
    for c in model.components() {
        match c {
            Component::WhiteNoise => theta.push(2.0 * first / k),
            Component::Quantization => theta.push(first * 4.0 / 6.0 / k),
            Component::RandomWalk => theta.push(12.0 * last / tau_last / k),
            Component::Drift => theta.push(4.0 * (last / k).sqrt() / tau_last),
            Component::Ar1 => {
                // spread correlation times over the available scales
                let frac = (n_ar1 - ar1_seen) as f64 / (n_ar1 + 1) as f64;
                ar1_seen += 1;
                let tau = 2f64.powf(1.0 + frac * (j as f64 - 1.0));
                let rho = 1.0 - 1.0 / tau;
                theta.push(rho);
                theta.push(total / k * (1.0 - rho * rho));
            }
            Component::Arma { p, q } => {
                let pacf: Vec<f64> = (0..*p).map(|i| if i == 0 { 0.3 } else { 0.0 }).collect();
                theta.extend(crate::model::pacf_to_ar(&pacf));
                theta.extend(std::iter::repeat(0.0).take(*q));
                theta.push(total / k);
            }
        }
    }
    if let Some(fixed) = fixed {
        let candidate: Vec<f64> = theta.iter().zip(fixed).map(|(h, f)| f.unwrap_or(*h)).collect();
        if model.validate(&candidate).is_ok() {
            theta = candidate;
        }
    }
    theta
}

fn latin_hypercube(ranges: &[(f64, f64)], n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = stream_rng(seed, 0x5EED);
    let d = ranges.len();
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(d);
    for &(lo, hi) in ranges {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        cols.push(
            perm.into_iter()
                .map(|cell| {
                    let u: f64 = rng.random();
                    lo + (hi - lo) * (cell as f64 + u) / n as f64
                })
                .collect(),
        );
    }
    (0..n).map(|i| (0..d).map(|k| cols[k][i]).collect()).collect()
}

fn canonical(model: &ModelSpec, theta: &[f64]) -> Vec<f64> {
    let mut t = model.canonicalize(theta);
    let mut offset = 0;
    for c in model.components() {
        if *c == Component::Drift {
            t[offset] = t[offset].abs();
        }
        offset += c.n_params();
    }
    t
}

struct Run {
    u: Vec<f64>,
    f: f64,
    evals: usize,
    iterations: usize,
    restarts: usize,
    simplex_size: f64,
    converged: bool,
}

fn minimize_from(
    u0: Vec<f64>,
    step: &[f64],
    f: &mut dyn FnMut(&[f64]) -> f64,
    residual: &mut dyn FnMut(&[f64]) -> Option<Vec<f64>>,
    opts: &FitOptions,
) -> Run {
    let nm_opts = NelderMeadOptions {
        max_evals: opts.max_evals,
        ..Default::default()
    };
    let mut res = nelder_mead(&mut *f, &u0, step, &nm_opts);
    let mut evals = res.evals;
    let mut iterations = res.iterations;
    let mut restarts = 0;
    for _ in 0..opts.restarts {
        let small: Vec<f64> = step.iter().map(|s| s * 0.25).collect();
        let again = nelder_mead(&mut *f, &res.x, &small, &nm_opts);
        evals += again.evals;
        iterations += again.iterations;
        restarts += 1;
        let improved = again.f < res.f - 1e-12 * res.f.abs();
        if again.f <= res.f {
            res = again;
        }
        if !improved {
            break;
        }
    }
    let mut run = Run {
        u: res.x.clone(),
        f: res.f,
        evals,
        iterations,
        restarts,
        simplex_size: res.simplex_size,
        converged: res.converged,
    };
    if opts.polish && run.f.is_finite() {
        if let Some(lm) = levenberg_marquardt(&mut *residual, &run.u, 200) {
            run.evals += lm.evals;
            let fl = f(&lm.x);
            if fl <= run.f {
                run.u = lm.x;
                run.f = fl;
                run.converged = true;
            }
        }
    }
    run
}

/// Minimizes `Q(theta)` for `model` against the first-step estimate `est`.
///
/// `start` optionally pins starting values of individual parameters.
pub fn fit_wv(
    est: &WvEstimate,
    model: &ModelSpec,
    omega: &WeightingMatrix,
    opts: &FitOptions,
    start: Option<&[Option<f64>]>,
) -> Result<FitResult> {
    let j = est.n_scales();
    let p = model.n_params();
    if p > j {
        return Err(Error::Identifiability { params: p, scales: j });
    }
    if omega.dim() != j {
        return Err(Error::Dimension {
            expected: j,
            found: omega.dim(),
        });
    }
    if !(opts.alpha > 0.0 && opts.alpha < 1.0) {
        return Err(Error::Domain(format!("alpha must lie in (0, 1), got {}", opts.alpha)));
    }
    let bank = FilterBank::new(est.family, j)?;
    let nu_hat = est.nu2.clone();
    let nu_vec = DVector::from_vec(nu_hat.clone());
    let mut f = |u: &[f64]| -> f64 {
        let theta = model.from_unconstrained(u);
        match bank.wv(model, &theta) {
            Ok(nu) => {
                let e = &nu_vec - DVector::from_vec(nu);
                omega.whiten(&e).norm_squared()
            }
            Err(_) => f64::INFINITY,
        }
    };
    let mut residual = |u: &[f64]| -> Option<Vec<f64>> {
        let theta = model.from_unconstrained(u);
        let nu = bank.wv(model, &theta).ok()?;
        let e = &nu_vec - DVector::from_vec(nu);
        let r = omega.whiten(&e);
        r.iter().all(|v| v.is_finite()).then(|| r.iter().copied().collect())
    };

    let heuristic = heuristic_theta(model, &nu_hat, &est.scales, start);
    let heuristic = rescale_amplitudes(model, &heuristic, &nu_hat, omega, &bank);
    let u_ref = model.to_unconstrained(&heuristic)?;
    let mut starts = vec![u_ref.clone()];
    if opts.starts > 1 {
        let ranges = transformed_ranges(model, &u_ref);
        for u in latin_hypercube(&ranges, opts.starts - 1, opts.seed) {
            let theta = model.from_unconstrained(&u);
            let theta = rescale_amplitudes(model, &theta, &nu_hat, omega, &bank);
            starts.push(model.to_unconstrained(&theta).unwrap_or(u));
        }
    }
    let step: Vec<f64> = model
        .param_slots()
        .iter()
        .zip(&u_ref)
        .map(|(s, u)| match s.kind {
            ParamKind::Real => 0.5 * u.abs().max(1e-8),
            _ => 0.5,
        })
        .collect();

    let runs: Vec<Run> = starts
        .into_iter()
        .map(|u0| minimize_from(u0, &step, &mut f, &mut residual, opts))
        .collect();
    let evaluations: usize = runs.iter().map(|r| r.evals).sum();
    let best = runs
        .iter()
        .enumerate()
        .filter(|(_, r)| r.f.is_finite())
        .min_by(|a, b| a.1.f.total_cmp(&b.1.f))
        .map(|(i, _)| i)
        .ok_or_else(|| Error::NonConvergence {
            context: "GMWM fit".into(),
            iterations: runs.iter().map(|r| r.iterations).sum(),
            detail: "objective was not finite at any start".into(),
        })?;
    let best_run = &runs[best];
    let theta = canonical(model, &model.from_unconstrained(&best_run.u));
    let q = objective(&theta, &nu_hat, model, omega, &bank)?;
    let starts_at_optimum = runs
        .iter()
        .filter(|r| {
            let t = canonical(model, &model.from_unconstrained(&r.u));
            let close = t
                .iter()
                .zip(&theta)
                .all(|(a, b)| (a - b).abs() <= 1e-3 * b.abs().max(1e-8));
            r.f.is_finite() && r.f <= best_run.f * (1.0 + 1e-3) + 1e-300 && close
        })
        .count();

    let diagnostics = Diagnostics {
        evaluations,
        iterations: runs.iter().map(|r| r.iterations).sum(),
        starts: runs.len(),
        restarts: runs.iter().map(|r| r.restarts).sum(),
        simplex_size: best_run.simplex_size,
        starts_at_optimum,
        restarts_agree: starts_at_optimum == runs.len(),
        converged: best_run.converged,
        covariance_error: None,
    };
    let nu_model = bank.wv(model, &theta)?;
    let n_obs = est.source_len;

    let mut diagnostics = diagnostics;
    let covariance = match &est.covariance {
        Some(cov) => match param_covariance(model, &theta, &bank, omega, &(cov * n_obs as f64), n_obs) {
            Ok(c) => Some(c),
            Err(e) => {
                diagnostics.covariance_error = Some(e.to_string());
                None
            }
        },
        None => None,
    };
    let z = Normal::standard().inverse_cdf(1.0 - opts.alpha / 2.0);
    let slots = model.param_slots();
    let params = slots
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let se = covariance.as_ref().map(|c| c[(i, i)].max(0.0).sqrt());
            let (lo, hi) = match se {
                Some(se) if s.kind == ParamKind::Variance => {
                    let sl = se / theta[i];
                    (Some(theta[i] * (-z * sl).exp()), Some(theta[i] * (z * sl).exp()))
                }
                Some(se) => (Some(theta[i] - z * se), Some(theta[i] + z * se)),
                None => (None, None),
            };
            ParamEstimate {
                name: s.name.clone(),
                estimate: theta[i],
                std_error: se,
                ci_lower: lo,
                ci_upper: hi,
            }
        })
        .collect();
    let jtest = if j > p {
        Some(j_test(q, n_obs, j, p, omega.kind() == WeightKind::Full)?)
    } else {
        None
    };
    Ok(FitResult {
        model: model.clone(),
        theta,
        params,
        objective: q,
        covariance,
        alpha: opts.alpha,
        jtest,
        diagnostics,
        scales: est.scales.clone(),
        nu_hat,
        nu_model,
        n_obs,
        weighting: omega.kind(),
    })
}

/// Asymptotic covariance `B V B' / T` with `B = H^-1 A' Omega`, `H = A' Omega A`.
pub fn param_covariance(
    model: &ModelSpec,
    theta: &[f64],
    bank: &FilterBank,
    omega: &WeightingMatrix,
    v_hat: &DMatrix<f64>,
    n_obs: usize,
) -> Result<DMatrix<f64>> {
    let a = bank.jacobian(model, theta)?;
    let om = omega.matrix();
    let h = a.transpose() * om * &a;
    let eig = SymmetricEigen::new(h.clone());
    let max_ev = eig.eigenvalues.amax();
    let (min_idx, min_ev) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .map(|(i, v)| (i, *v))
        .unwrap_or((0, 0.0));
    if !(min_ev > 1e-13 * max_ev) {
        let names = model.param_names();
        let v = eig.eigenvectors.column(min_idx);
        let mut loads: Vec<(f64, &String)> = v.iter().map(|x| x.abs()).zip(&names).collect();
        loads.sort_by(|x, y| y.0.total_cmp(&x.0));
        let directions = loads
            .iter()
            .filter(|(w, _)| *w > 0.2)
            .map(|(w, n)| format!("{n} ({w:.2})"))
            .collect::<Vec<_>>()
            .join(", ");
        return Err(Error::RankDeficient { directions });
    }
    let h_inv = h.try_inverse().ok_or_else(|| Error::RankDeficient {
        directions: "all".into(),
    })?;
    let b = h_inv * a.transpose() * om;
    let cov = &b * v_hat * b.transpose() / n_obs as f64;
    Ok((&cov + cov.transpose()) * 0.5)
}

/// Overidentification test: `T Q` against chi-square with `J - p` degrees of freedom.
pub fn j_test(q: f64, n_obs: usize, n_scales: usize, n_params: usize, efficient_weighting: bool) -> Result<JTest> {
    if n_scales <= n_params {
        return Err(Error::Saturated(n_scales));
    }
    let df = n_scales - n_params;
    let statistic = n_obs as f64 * q;
    let chi = ChiSquared::new(df as f64).map_err(|e| Error::Numerical {
        context: "J-test".into(),
        detail: e.to_string(),
    })?;
    Ok(JTest {
        statistic,
        df,
        p_value: chi.sf(statistic),
        efficient_weighting,
    })
}

#[derive(Debug, Clone)]
pub struct CompareRow {
    /// Position in the candidate list.
    pub index: usize,
    pub model: ModelSpec,
    pub outcome: std::result::Result<FitResult, String>,
    /// `nu_hat_j - nu_j(theta_hat)`.
    pub residuals: Option<Vec<f64>>,
}

/// How candidates in a comparison are weighted.
#[derive(Debug, Clone)]
pub enum OmegaPolicy {
    /// One model-independent weighting for every candidate.
    Shared(WeightingMatrix),
    /// Per-candidate weighting from a parametric bootstrap at a pilot fit.
    PerModel { kind: OmegaKind, replicates: usize, seed: u64 },
}

/// Fits every candidate against the same first-step estimate and ranks them by
/// objective value; failed candidates are reported and ranked last.
pub fn model_compare(est: &WvEstimate, models: &[ModelSpec], policy: &OmegaPolicy, opts: &FitOptions) -> Result<Vec<CompareRow>> {
    if models.len() < 2 {
        return Err(Error::Config("model comparison needs at least two candidates".into()));
    }
    let mut rows: Vec<CompareRow> = models
        .iter()
        .enumerate()
        .map(|(index, m)| {
            let outcome = match policy {
                OmegaPolicy::Shared(omega) => fit_wv(est, m, omega, opts, None),
                OmegaPolicy::PerModel { kind, replicates, seed } => {
                    fit_with_parametric_weights(est, m, *kind, *replicates, *seed, opts, None).map(|(f, _)| f)
                }
            };
            let outcome = outcome.map_err(|e| e.to_string());
            let residuals = outcome
                .as_ref()
                .ok()
                .map(|f| f.nu_hat.iter().zip(&f.nu_model).map(|(a, b)| a - b).collect());
            CompareRow {
                index,
                model: m.clone(),
                outcome,
                residuals,
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        let key = |r: &CompareRow| r.outcome.as_ref().map_or(f64::INFINITY, |f| f.objective);
        key(a).total_cmp(&key(b)).then(a.index.cmp(&b.index))
    });
    Ok(rows)
}

/// Pilot fit with relative weights, parametric-bootstrap covariance at the
/// pilot estimate, then the final fit with the requested weighting.
pub fn fit_with_parametric_weights(
    est: &WvEstimate,
    model: &ModelSpec,
    kind: OmegaKind,
    replicates: usize,
    seed: u64,
    opts: &FitOptions,
    start: Option<&[Option<f64>]>,
) -> Result<(FitResult, WvEstimate)> {
    let pilot = fit_wv(est, model, &WeightingMatrix::relative(&est.nu2)?, opts, start)?;
    let method = CovarianceMethod::Parametric {
        model: model.clone(),
        theta: pilot.theta.clone(),
        replicates,
        seed,
    };
    // the parametric method never touches the observed series or pyramid
    let dummy = decompose_slice(&[0.0, 0.0], 1, WaveletFamily::Haar)?;
    let cov = estimate_wv_covariance(&[], &dummy, est, &method)?;
    let mut with_cov = est.clone().with_covariance(cov)?;
    with_cov.covariance_replicates = Some(replicates);
    let omega = WeightingMatrix::from_estimate(kind, &with_cov)?;
    let seeded: Vec<Option<f64>> = pilot.theta.iter().map(|v| Some(*v)).collect();
    let fit = fit_wv(&with_cov, model, &omega, opts, Some(&seeded))?;
    Ok((fit, with_cov))
}

/// Covariance source for [`fit_series`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum CovarianceChoice {
    Batched { blocks: Option<usize> },
    BlockBootstrap { replicates: usize, block_len: Option<usize> },
    Parametric { replicates: usize },
}

impl CovarianceChoice {
    pub fn name(&self) -> &'static str {
        match self {
            CovarianceChoice::Batched { .. } => "batched",
            CovarianceChoice::BlockBootstrap { .. } => "block-bootstrap",
            CovarianceChoice::Parametric { .. } => "parametric",
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub family: WaveletFamily,
    /// Number of scales; defaults to the largest supported.
    pub levels: Option<usize>,
    pub estimator: WvEstimator,
    pub covariance: CovarianceChoice,
    pub omega: OmegaKind,
    pub seed: u64,
    pub fit: FitOptions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            family: WaveletFamily::Haar,
            levels: None,
            estimator: WvEstimator::Robust(Default::default()),
            covariance: CovarianceChoice::BlockBootstrap {
                replicates: 100,
                block_len: None,
            },
            omega: OmegaKind::Diagonal,
            seed: 0,
            fit: FitOptions::default(),
        }
    }
}

/// Number of scales used for a series of length `n`: the largest `J` with
/// `2^J < n` and enough coefficients at the top scale for the estimator.
pub fn default_levels(n: usize, family: WaveletFamily, estimator: &WvEstimator) -> Result<usize> {
    let floor = match estimator {
        WvEstimator::Robust(spec) if !spec.is_identity() => crate::wv::RobustOptions::default().min_coeffs,
        _ => 1,
    };
    max_scales(n, family, floor)
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    /// First-step estimate with covariance and confidence intervals.
    pub wv: WvEstimate,
    pub fit: FitResult,
}

/// Decompose, estimate the wavelet variance and its covariance, and fit `model`.
pub fn fit_series(series: &[f64], model: &ModelSpec, start: Option<&[Option<f64>]>, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    let levels = match cfg.levels {
        Some(l) => l,
        None => default_levels(series.len(), cfg.family, &cfg.estimator)?,
    };
    let pyr = decompose_slice(series, levels, cfg.family)?;
    let est = cfg.estimator.estimate(&pyr)?;
    let fit_opts = FitOptions {
        seed: cfg.seed,
        ..cfg.fit.clone()
    };
    let (fit, est) = match cfg.covariance {
        CovarianceChoice::Parametric { replicates } => {
            fit_with_parametric_weights(&est, model, cfg.omega, replicates, cfg.seed, &fit_opts, start)?
        }
        CovarianceChoice::Batched { blocks } => {
            let est = crate::covariance::with_wv_covariance(series, &pyr, est, &CovarianceMethod::BatchedMeans { blocks })?;
            let omega = WeightingMatrix::from_estimate(cfg.omega, &est)?;
            (fit_wv(&est, model, &omega, &fit_opts, start)?, est)
        }
        CovarianceChoice::BlockBootstrap { replicates, block_len } => {
            let method = CovarianceMethod::BlockBootstrap {
                replicates,
                block_len,
                difference: !model.is_stationary(),
                seed: cfg.seed,
            };
            let est = crate::covariance::with_wv_covariance(series, &pyr, est, &method)?;
            let omega = WeightingMatrix::from_estimate(cfg.omega, &est)?;
            (fit_wv(&est, model, &omega, &fit_opts, start)?, est)
        }
    };
    let wv = wv_confidence_intervals(&est, fit_opts.alpha)?;
    Ok(PipelineOutput { wv, fit })
}
