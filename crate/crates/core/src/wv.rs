//! Standard and robust (M-) estimation of the wavelet variance.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::psi::{PsiKind, PsiSpec};
use crate::wavelet::{CoefficientPyramid, WaveletFamily};

/// Median of the chi-square distribution with one degree of freedom.
const CHI2_1_MEDIAN: f64 = 0.454_936_423_119_572_8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum EstimatorTag {
    Standard,
    Robust { kind: PsiKind, c: Option<f64> },
}

/// Estimated wavelet variance with optional uncertainty.
#[derive(Debug, Clone)]
pub struct WvEstimate {
    pub family: WaveletFamily,
    /// Dyadic scales `tau_j = 2^j`.
    pub scales: Vec<u64>,
    pub nu2: Vec<f64>,
    /// Final `omega^2(r)` per coefficient and level; `None` for the standard estimator.
    pub weights: Option<Vec<Vec<f64>>>,
    /// Coefficients per level, `M_j`.
    pub coeff_counts: Vec<usize>,
    /// Length `T` of the source series.
    pub source_len: usize,
    pub psi: PsiSpec,
    pub estimator: EstimatorTag,
    /// Estimated `Var(nu_hat) = V / T`.
    pub covariance: Option<DMatrix<f64>>,
    /// Number of resamples behind `covariance`, when it came from a bootstrap.
    pub covariance_replicates: Option<usize>,
    pub ci_lower: Option<Vec<f64>>,
    pub ci_upper: Option<Vec<f64>>,
    pub alpha: Option<f64>,
    /// Levels where the estimating equation has no root; their value maximizes
    /// the estimating function instead.
    pub rootless_levels: Vec<usize>,
}

impl WvEstimate {
    pub fn n_scales(&self) -> usize {
        self.nu2.len()
    }

    pub fn is_robust(&self) -> bool {
        matches!(self.estimator, EstimatorTag::Robust { .. })
    }

    /// The estimator that produced this estimate.
    pub fn estimator_config(&self) -> WvEstimator {
        match self.estimator {
            EstimatorTag::Standard => WvEstimator::Standard,
            EstimatorTag::Robust { .. } => WvEstimator::Robust(self.psi),
        }
    }

    /// Weight of coefficient `i` at level `j` (1-based level); 1 when unweighted.
    pub fn weight(&self, j: usize, i: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[j - 1][i])
    }

    pub fn with_covariance(mut self, cov: DMatrix<f64>) -> Result<Self> {
        let j = self.n_scales();
        if cov.nrows() != j || cov.ncols() != j {
            return Err(Error::Dimension {
                expected: j,
                found: cov.nrows(),
            });
        }
        self.covariance = Some(cov);
        self.covariance_replicates = None;
        self.ci_lower = None;
        self.ci_upper = None;
        self.alpha = None;
        Ok(self)
    }

    /// Per-scale standard errors from the stored covariance.
    pub fn std_errors(&self) -> Option<Vec<f64>> {
        self.covariance
            .as_ref()
            .map(|c| (0..c.nrows()).map(|i| c[(i, i)].max(0.0).sqrt()).collect())
    }
}

/// Estimator choice for the first step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum WvEstimator {
    Standard,
    Robust(PsiSpec),
}

impl WvEstimator {
    pub fn estimate(&self, pyr: &CoefficientPyramid) -> Result<WvEstimate> {
        match self {
            WvEstimator::Standard => estimate_wv_standard(pyr),
            WvEstimator::Robust(spec) => estimate_wv_robust(pyr, spec),
        }
    }
}

fn check_levels(pyr: &CoefficientPyramid) -> Result<()> {
    for j in 1..=pyr.n_levels() {
        if pyr.level(j).is_empty() {
            return Err(Error::DegenerateLevel {
                level: j,
                reason: "no coefficients".into(),
            });
        }
        if pyr.level(j).iter().all(|w| *w == 0.0) {
            return Err(Error::DegenerateLevel {
                level: j,
                reason: "all coefficients are zero (constant input?)".into(),
            });
        }
    }
    Ok(())
}

fn mean_square(w: &[f64]) -> f64 {
    w.iter().map(|x| x * x).sum::<f64>() / w.len() as f64
}

fn base_estimate(pyr: &CoefficientPyramid, nu2: Vec<f64>, psi: PsiSpec, tag: EstimatorTag) -> WvEstimate {
    WvEstimate {
        family: pyr.family(),
        scales: pyr.scales(),
        nu2,
        weights: None,
        coeff_counts: pyr.levels().iter().map(Vec::len).collect(),
        source_len: pyr.source_len(),
        psi,
        estimator: tag,
        covariance: None,
        covariance_replicates: None,
        ci_lower: None,
        ci_upper: None,
        alpha: None,
        rootless_levels: Vec::new(),
    }
}

/// Mean of squared coefficients per level.
pub fn estimate_wv_standard(pyr: &CoefficientPyramid) -> Result<WvEstimate> {
    check_levels(pyr)?;
    let nu2 = pyr.levels().iter().map(|w| mean_square(w)).collect();
    Ok(base_estimate(pyr, nu2, PsiSpec::identity(), EstimatorTag::Standard))
}

/// Options for the robust per-level root solve.
#[derive(Debug, Clone, Copy)]
pub struct RobustOptions {
    /// Minimum coefficients per level.
    pub min_coeffs: usize,
    pub max_iter: usize,
    /// Absolute tolerance on `log nu^2`.
    pub tol: f64,
}

impl Default for RobustOptions {
    fn default() -> Self {
        Self {
            min_coeffs: 10,
            max_iter: 200,
            tol: 1e-13,
        }
    }
}

/// Robust M-estimate with default solver options.
pub fn estimate_wv_robust(pyr: &CoefficientPyramid, spec: &PsiSpec) -> Result<WvEstimate> {
    estimate_wv_robust_with(pyr, spec, &RobustOptions::default())
}

pub fn estimate_wv_robust_with(
    pyr: &CoefficientPyramid,
    spec: &PsiSpec,
    opts: &RobustOptions,
) -> Result<WvEstimate> {
    check_levels(pyr)?;
    let tag = EstimatorTag::Robust {
        kind: spec.kind,
        c: spec.c.is_finite().then_some(spec.c),
    };
    if spec.is_identity() {
        // omega = 1 and a = 1: the root is the mean of squares
        let nu2 = pyr.levels().iter().map(|w| mean_square(w)).collect();
        return Ok(base_estimate(pyr, nu2, *spec, tag));
    }
    for j in 1..=pyr.n_levels() {
        if pyr.level(j).len() < opts.min_coeffs {
            return Err(Error::Config(format!(
                "level {j} has {} coefficients, fewer than the robust floor {}",
                pyr.level(j).len(),
                opts.min_coeffs
            )));
        }
    }
    let a = spec.correction();
    let solved: Vec<(f64, Vec<f64>, bool)> = pyr
        .levels()
        .par_iter()
        .enumerate()
        .map(|(idx, w)| solve_level(idx + 1, w, spec, a, opts))
        .collect::<Result<_>>()?;
    let mut nu2 = Vec::with_capacity(solved.len());
    let mut weights = Vec::with_capacity(solved.len());
    let mut unsolved = Vec::new();
    for (j, (v, w, no_root)) in solved.into_iter().enumerate() {
        nu2.push(v);
        weights.push(w);
        if no_root {
            unsolved.push(j + 1);
        }
    }
    let mut est = base_estimate(pyr, nu2, *spec, tag);
    est.weights = Some(weights);
    est.rootless_levels = unsolved;
    Ok(est)
}

/// Mean estimating function `M^-1 sum g(W / nu) - a` at `nu^2`.
pub fn estimating_function(coeffs: &[f64], nu2: f64, spec: &PsiSpec, a: f64) -> f64 {
    let inv = 1.0 / nu2.sqrt();
    let sum: f64 = coeffs.iter().map(|&w| spec.weighted_square(w * inv)).sum();
    sum / coeffs.len() as f64 - a
}

fn solve_level(level: usize, w: &[f64], spec: &PsiSpec, a: f64, opts: &RobustOptions) -> Result<(f64, Vec<f64>, bool)> {
    let mut start = {
        let mut sq: Vec<f64> = w.iter().map(|x| x * x).collect();
        let mid = sq.len() / 2;
        let (_, m, _) = sq.select_nth_unstable_by(mid, f64::total_cmp);
        *m / CHI2_1_MEDIAN
    };
    if !(start > 0.0) {
        start = mean_square(w);
    }
    if !(start > 0.0) || !start.is_finite() {
        return Err(Error::DegenerateLevel {
            level,
            reason: "all coefficients are zero".into(),
        });
    }
    let f = |s: f64| estimating_function(w, s.exp(), spec, a);
    let s0 = start.ln();
    let range = 1e4f64.ln();
    let step = std::f64::consts::LN_2;
    let f0 = f(s0);
    if f0 == 0.0 {
        return Ok(with_root(finish(level, w, spec, s0)));
    }
    // f > 0 below the root and f < 0 above it
    let (mut lo, mut hi, mut f_lo, mut f_hi) = (s0, s0, f0, f0);
    if f0 > 0.0 {
        while f_hi > 0.0 {
            lo = hi;
            f_lo = f_hi;
            hi += step;
            if hi > s0 + range {
                return Err(no_sign_change(level));
            }
            f_hi = f(hi);
        }
    } else {
        while f_lo < 0.0 {
            hi = lo;
            f_hi = f_lo;
            lo -= step;
            if lo < s0 - range {
                // f is negative on both tails for redescending psi; look for the positive region
                let grid = 2.0 * range / 64.0;
                let peak = (0..=64)
                    .map(|k| s0 - range + grid * k as f64)
                    .map(|s| (s, f(s)))
                    .max_by(|a, b| a.1.total_cmp(&b.1))
                    .ok_or_else(|| no_sign_change(level))?;
                if !(peak.1 > 0.0) {
                    // no root: take the scale that comes closest to solving the equation
                    let s = golden_max(&f, peak.0 - grid, peak.0 + grid, 1e-10);
                    let (nu2, weights) = finish(level, w, spec, s);
                    return Ok((nu2, weights, true));
                }
                (lo, f_lo) = peak;
                hi = lo;
                f_hi = f_lo;
                while f_hi > 0.0 {
                    lo = hi;
                    f_lo = f_hi;
                    hi += step / 4.0;
                    f_hi = f(hi);
                }
                break;
            }
            f_lo = f(lo);
        }
    }
    if f_lo == 0.0 {
        return Ok(with_root(finish(level, w, spec, lo)));
    }
    if f_hi == 0.0 {
        return Ok(with_root(finish(level, w, spec, hi)));
    }
    let root = brent(&f, lo, hi, f_lo, f_hi, opts.tol, opts.max_iter).map_err(|iters| Error::NonConvergence {
        context: format!("robust wavelet variance at level {level}"),
        iterations: iters,
        detail: format!("bracket [{:.6e}, {:.6e}] in nu^2", lo.exp(), hi.exp()),
    })?;
    // local uniqueness surrogate: the estimating function crosses zero downward
    let delta = 1e-6;
    if !(f(root - delta) > 0.0 || f(root + delta) < 0.0) {
        return Err(Error::Numerical {
            context: format!("robust wavelet variance at level {level}"),
            detail: "estimating function is not decreasing at the root".into(),
        });
    }
    Ok(with_root(finish(level, w, spec, root)))
}

fn with_root((nu2, weights): (f64, Vec<f64>)) -> (f64, Vec<f64>, bool) {
    (nu2, weights, false)
}

fn golden_max<F: Fn(f64) -> f64>(f: &F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

fn finish(_level: usize, w: &[f64], spec: &PsiSpec, s: f64) -> (f64, Vec<f64>) {
    let nu2 = s.exp();
    let inv = 1.0 / nu2.sqrt();
    let weights = w
        .iter()
        .map(|&x| {
            let om = spec.weight(x * inv);
            om * om
        })
        .collect();
    (nu2, weights)
}

fn no_sign_change(level: usize) -> Error {
    Error::DegenerateLevel {
        level,
        reason: "estimating function has no sign change in the expanded bracket".into(),
    }
}

/// Brent's method; returns the iteration count on failure.
fn brent<F: Fn(f64) -> f64>(
    f: &F,
    a0: f64,
    b0: f64,
    fa0: f64,
    fb0: f64,
    tol: f64,
    max_iter: usize,
) -> std::result::Result<f64, usize> {
    let (mut a, mut b, mut fa, mut fb) = (a0, b0, fa0, fb0);
    if fa.abs() < fb.abs() {
        std::mem::swap(&mut a, &mut b);
        std::mem::swap(&mut fa, &mut fb);
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut mflag = true;
    for _ in 0..max_iter {
        if fb == 0.0 || (b - a).abs() < tol {
            return Ok(b);
        }
        let mut s = if fa != fc && fb != fc {
            a * fb * fc / ((fa - fb) * (fa - fc))
                + b * fa * fc / ((fb - fa) * (fb - fc))
                + c * fa * fb / ((fc - fa) * (fc - fb))
        } else {
            b - fb * (b - a) / (fb - fa)
        };
        let q = (3.0 * a + b) / 4.0;
        let out_of_range = !((s > q.min(b)) && (s < q.max(b)));
        if out_of_range
            || (mflag && (s - b).abs() >= (b - c).abs() / 2.0)
            || (!mflag && (s - b).abs() >= (c - d).abs() / 2.0)
            || (mflag && (b - c).abs() < tol)
            || (!mflag && (c - d).abs() < tol)
        {
            s = 0.5 * (a + b);
            mflag = true;
        } else {
            mflag = false;
        }
        let fs = f(s);
        d = c;
        c = b;
        fc = fb;
        if fa * fs < 0.0 {
            b = s;
            fb = fs;
        } else {
            a = s;
            fa = fs;
        }
        if fa.abs() < fb.abs() {
            std::mem::swap(&mut a, &mut b);
            std::mem::swap(&mut fa, &mut fb);
        }
    }
    Err(max_iter)
}

/// Gaussian intervals on `log nu^2` by the delta method, back-transformed.
pub fn wv_confidence_intervals(est: &WvEstimate, alpha: f64) -> Result<WvEstimate> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let cov = est
        .covariance
        .as_ref()
        .ok_or_else(|| Error::Config("confidence intervals need a covariance estimate".into()))?;
    let z = Normal::standard().inverse_cdf(1.0 - alpha / 2.0);
    let mut lo = Vec::with_capacity(est.n_scales());
    let mut hi = Vec::with_capacity(est.n_scales());
    for (j, &nu2) in est.nu2.iter().enumerate() {
        let se_log = cov[(j, j)].max(0.0).sqrt() / nu2;
        lo.push(nu2 * (-z * se_log).exp());
        hi.push(nu2 * (z * se_log).exp());
    }
    let mut out = est.clone();
    out.ci_lower = Some(lo);
    out.ci_upper = Some(hi);
    out.alpha = Some(alpha);
    Ok(out)
}
