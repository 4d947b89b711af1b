//! Estimates of `Var(nu_hat) = V / T`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{simulate, stream_rng, ModelSpec};
use crate::wavelet::{decompose_slice, CoefficientPyramid};
use crate::wv::{estimating_function, WvEstimate, WvEstimator};

#[derive(Debug, Clone, PartialEq)]
pub enum CovarianceMethod {
    /// Sandwich estimate from batch means of the per-level estimating functions.
    /// `blocks` defaults to `floor(M_1^(1/3))`.
    BatchedMeans { blocks: Option<usize> },
    /// Moving-block bootstrap of the series; `block_len` defaults to `floor(T^(1/3))`.
    /// With `difference` set, blocks of first differences are resampled and
    /// re-accumulated, which keeps random-walk type series free of junction jumps.
    BlockBootstrap {
        replicates: usize,
        block_len: Option<usize>,
        difference: bool,
        seed: u64,
    },
    /// Re-estimation on series simulated from a fitted model.
    Parametric {
        model: ModelSpec,
        theta: Vec<f64>,
        replicates: usize,
        seed: u64,
    },
}

impl CovarianceMethod {
    pub fn block_bootstrap(seed: u64) -> Self {
        CovarianceMethod::BlockBootstrap {
            replicates: 100,
            block_len: None,
            difference: false,
            seed,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CovarianceMethod::BatchedMeans { .. } => "batched",
            CovarianceMethod::BlockBootstrap { .. } => "block-bootstrap",
            CovarianceMethod::Parametric { .. } => "parametric",
        }
    }
}

/// Estimates the covariance of `est.nu2`, which must have been computed from
/// `series` (decomposed into `pyr`) with the estimator recorded in `est`.
pub fn estimate_wv_covariance(
    series: &[f64],
    pyr: &CoefficientPyramid,
    est: &WvEstimate,
    method: &CovarianceMethod,
) -> Result<DMatrix<f64>> {
    let cov = match method {
        CovarianceMethod::BatchedMeans { blocks } => batched_means(pyr, est, *blocks)?,
        CovarianceMethod::BlockBootstrap {
            replicates,
            block_len,
            difference,
            seed,
        } => {
            let len = block_len.unwrap_or_else(|| (series.len() as f64).cbrt().floor() as usize);
            block_bootstrap(series, est, *replicates, len.max(1), *difference, *seed)?
        }
        CovarianceMethod::Parametric {
            model,
            theta,
            replicates,
            seed,
        } => parametric_bootstrap(model, theta, est, *replicates, *seed)?,
    };
    Ok(nearest_psd(&cov))
}

/// Attaches a covariance computed by `method` to `est`.
pub fn with_wv_covariance(
    series: &[f64],
    pyr: &CoefficientPyramid,
    est: WvEstimate,
    method: &CovarianceMethod,
) -> Result<WvEstimate> {
    let cov = estimate_wv_covariance(series, pyr, &est, method)?;
    let mut est = est.with_covariance(cov)?;
    est.covariance_replicates = match method {
        CovarianceMethod::BatchedMeans { .. } => None,
        CovarianceMethod::BlockBootstrap { replicates, .. } | CovarianceMethod::Parametric { replicates, .. } => {
            Some(*replicates)
        }
    };
    Ok(est)
}

fn estimating_terms(est: &WvEstimate, w: &[f64], nu2: f64) -> (Vec<f64>, f64) {
    let spec = est.psi;
    let a = if est.is_robust() { spec.correction() } else { 1.0 };
    let inv = 1.0 / nu2.sqrt();
    let terms: Vec<f64> = if est.is_robust() {
        w.iter().map(|&x| spec.weighted_square(x * inv) - a).collect()
    } else {
        w.iter().map(|&x| x * x / nu2 - 1.0).collect()
    };
    // derivative of the mean estimating function with respect to nu^2
    let h: f64 = 1e-4;
    let deriv = if est.is_robust() {
        let up = estimating_function(w, nu2 * h.exp(), &spec, a);
        let down = estimating_function(w, nu2 * (-h).exp(), &spec, a);
        (up - down) / (2.0 * h * nu2)
    } else {
        -w.iter().map(|x| x * x).sum::<f64>() / w.len() as f64 / (nu2 * nu2)
    };
    (terms, deriv)
}

fn batched_means(pyr: &CoefficientPyramid, est: &WvEstimate, blocks: Option<usize>) -> Result<DMatrix<f64>> {
    let j = est.n_scales();
    let m1 = pyr.level(1).len();
    let blocks = blocks.unwrap_or_else(|| (m1 as f64).cbrt().floor() as usize);
    let m_min = pyr.levels().iter().map(Vec::len).min().unwrap_or(0);
    if blocks < 2 || m_min < blocks {
        return Err(Error::InsufficientBlocks(blocks.min(m_min)));
    }
    let parts: Vec<(Vec<f64>, f64)> = (0..j).map(|k| estimating_terms(est, pyr.level(k + 1), est.nu2[k])).collect();
    for (k, (_, d)) in parts.iter().enumerate() {
        if !(d.abs() > 0.0) || !d.is_finite() {
            return Err(Error::Numerical {
                context: "batched-means covariance".into(),
                detail: format!("zero slope of the estimating function at level {}", k + 1),
            });
        }
    }
    let mut cov = DMatrix::zeros(j, j);
    for a in 0..j {
        for b in a..j {
            let (ta, da) = &parts[a];
            let (tb, db) = &parts[b];
            let n = ta.len().min(tb.len());
            // align on time: both levels end at the last observation
            let xa = &ta[ta.len() - n..];
            let xb = &tb[tb.len() - n..];
            let size = n / blocks;
            let offset = n - size * blocks;
            let means = |x: &[f64]| -> Vec<f64> {
                (0..blocks)
                    .map(|k| {
                        let s = &x[offset + k * size..offset + (k + 1) * size];
                        s.iter().sum::<f64>() / size as f64
                    })
                    .collect()
            };
            let ma = means(xa);
            let mb = means(xb);
            let mean_a = ma.iter().sum::<f64>() / blocks as f64;
            let mean_b = mb.iter().sum::<f64>() / blocks as f64;
            let s: f64 = ma.iter().zip(&mb).map(|(u, v)| (u - mean_a) * (v - mean_b)).sum();
            let long_run = size as f64 * s / (blocks - 1) as f64;
            let denom = ta.len().max(tb.len()) as f64;
            let v = long_run / denom / (da * db);
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    Ok(cov)
}

fn replicate_covariance(reps: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if reps.len() < 2 {
        return Err(Error::Numerical {
            context: "bootstrap covariance".into(),
            detail: format!("only {} successful replicates", reps.len()),
        });
    }
    let j = reps[0].len();
    let n = reps.len() as f64;
    let mean: Vec<f64> = (0..j).map(|k| reps.iter().map(|r| r[k]).sum::<f64>() / n).collect();
    let mut cov = DMatrix::zeros(j, j);
    for r in reps {
        for a in 0..j {
            for b in a..j {
                cov[(a, b)] += (r[a] - mean[a]) * (r[b] - mean[b]);
            }
        }
    }
    for a in 0..j {
        for b in a..j {
            let v = cov[(a, b)] / (n - 1.0);
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    Ok(cov)
}

fn reestimate(values: &[f64], est: &WvEstimate, estimator: &WvEstimator) -> Option<Vec<f64>> {
    let pyr = decompose_slice(values, est.n_scales(), est.family).ok()?;
    estimator.estimate(&pyr).ok().map(|e| e.nu2)
}

fn block_bootstrap(
    series: &[f64],
    est: &WvEstimate,
    replicates: usize,
    block_len: usize,
    difference: bool,
    seed: u64,
) -> Result<DMatrix<f64>> {
    if replicates < 2 {
        return Err(Error::Config("the bootstrap needs at least 2 replicates".into()));
    }
    let n = series.len();
    let source: Vec<f64> = if difference {
        series.windows(2).map(|w| w[1] - w[0]).collect()
    } else {
        series.to_vec()
    };
    let len = block_len.min(source.len());
    let estimator = est.estimator_config();
    let reps: Vec<Option<Vec<f64>>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(seed, r as u64);
            let mut out = Vec::with_capacity(source.len() + len);
            while out.len() < source.len() {
                let start = rng.random_range(0..=source.len() - len);
                out.extend_from_slice(&source[start..start + len]);
            }
            out.truncate(source.len());
            let values = if difference {
                let mut level = series[0];
                let mut v = Vec::with_capacity(n);
                v.push(level);
                for d in out {
                    level += d;
                    v.push(level);
                }
                v
            } else {
                out
            };
            reestimate(&values, est, &estimator)
        })
        .collect();
    replicate_covariance(&reps.into_iter().flatten().collect::<Vec<_>>())
}

fn parametric_bootstrap(
    model: &ModelSpec,
    theta: &[f64],
    est: &WvEstimate,
    replicates: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    if replicates < 2 {
        return Err(Error::Config("the bootstrap needs at least 2 replicates".into()));
    }
    model.validate(theta)?;
    let estimator = est.estimator_config();
    let n = est.source_len;
    let reps: Vec<Option<Vec<f64>>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let x = simulate(model, theta, n, seed, r as u64).ok()?;
            reestimate(&x, est, &estimator)
        })
        .collect();
    replicate_covariance(&reps.into_iter().flatten().collect::<Vec<_>>())
}

/// Symmetrizes `m` and clips negative eigenvalues at zero.
pub fn nearest_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym.clone());
    if eig.eigenvalues.iter().all(|&v| v >= 0.0) {
        return sym;
    }
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    let out = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    (&out + out.transpose()) * 0.5
}
