//! Model-implied wavelet variance by two independent routes, and its Jacobian.

use nalgebra::DMatrix;

use super::acf::arma_acf_support;
use super::{ar_ma, Component, ModelSpec, ParamKind};
use crate::error::{Error, Result};
use crate::quad::integrate;
use crate::wavelet::{build_filter, convolve, decompose_slice, upsample, WaveletFamily};

/// Per-level filter summaries needed to evaluate `nu(theta)` quickly.
#[derive(Debug, Clone)]
pub struct FilterBank {
    family: WaveletFamily,
    /// Filter autocorrelations `a_j(k)` for `k = 0..L_j`.
    autocorr: Vec<Vec<f64>>,
    /// `sum_k b_k^2` with `b` the cumulative sum of the taps.
    rw: Vec<f64>,
    /// `sum_l l * h_l`.
    drift: Vec<f64>,
}

fn two_sided_autocorr(taps: &[f64]) -> Vec<f64> {
    let rev: Vec<f64> = taps.iter().rev().copied().collect();
    convolve(taps, &rev)
}

impl FilterBank {
    pub fn new(family: WaveletFamily, levels: usize) -> Result<Self> {
        if levels == 0 || levels > 30 {
            return Err(Error::Config(format!("unsupported number of levels {levels}")));
        }
        let (h1, g1) = family.level_one()?;
        let ah = two_sided_autocorr(&h1);
        let ag = two_sided_autocorr(&g1);
        let mut autocorr = Vec::with_capacity(levels);
        let mut rw = Vec::with_capacity(levels);
        let mut drift = Vec::with_capacity(levels);
        let mut scaling_ac: Vec<f64> = vec![1.0];
        for j in 1..=levels {
            let stride = 1usize << (j - 1);
            let wav = convolve(&upsample(&ah, stride), &scaling_ac);
            let len = wav.len().div_ceil(2);
            autocorr.push(wav[len - 1..].to_vec());
            if j < levels {
                scaling_ac = convolve(&upsample(&ag, stride), &scaling_ac);
            }
            let f = build_filter(family, j)?;
            let mut cum = 0.0;
            let mut sum_b2 = 0.0;
            let mut moment = 0.0;
            for (l, h) in f.taps().iter().enumerate() {
                cum += h;
                sum_b2 += cum * cum;
                moment += l as f64 * h;
            }
            rw.push(sum_b2);
            drift.push(moment);
        }
        Ok(Self {
            family,
            autocorr,
            rw,
            drift,
        })
    }

    pub fn family(&self) -> WaveletFamily {
        self.family
    }

    pub fn n_levels(&self) -> usize {
        self.autocorr.len()
    }

    /// Filter autocorrelation at level `j` (1-based), lags `0..L_j`.
    pub fn autocorrelation(&self, j: usize) -> &[f64] {
        &self.autocorr[j - 1]
    }

    fn check(&self, model: &ModelSpec) -> Result<()> {
        let moments = self.family.vanishing_moments()?;
        for c in model.components() {
            if c.integration_order() > moments {
                return Err(Error::Incompatible(format!(
                    "{} needs a filter with at least {} vanishing moments",
                    c.label(),
                    c.integration_order()
                )));
            }
        }
        Ok(())
    }

    /// `sum_k a_j(k) gamma(|k|)` over both signs of `k`.
    fn quad_form(&self, gamma: &[f64], out: &mut [f64]) {
        for (o, a) in out.iter_mut().zip(&self.autocorr) {
            let mut s = 0.0;
            for (ak, gk) in a.iter().zip(gamma).skip(1) {
                s += ak * gk;
            }
            *o += a[0] * gamma.first().copied().unwrap_or(0.0) + 2.0 * s;
        }
    }

    /// Wavelet variance of one component at every level, added into `out`.
    fn add_component(&self, c: Component, par: &[f64], out: &mut [f64]) -> Result<()> {
        match c {
            Component::WhiteNoise => {
                for (o, a) in out.iter_mut().zip(&self.autocorr) {
                    *o += par[0] * a[0];
                }
            }
            Component::Quantization => {
                for (o, a) in out.iter_mut().zip(&self.autocorr) {
                    *o += 2.0 * par[0] * (a[0] - a[1]);
                }
            }
            Component::RandomWalk => {
                for (o, b) in out.iter_mut().zip(&self.rw) {
                    *o += par[0] * b;
                }
            }
            Component::Drift => {
                for (o, m) in out.iter_mut().zip(&self.drift) {
                    *o += (par[0] * m).powi(2);
                }
            }
            Component::Ar1 | Component::Arma { .. } => {
                let (ar, ma) = ar_ma(c, par);
                let nu2 = par[par.len() - 1];
                let max_lag = self.autocorr.last().map_or(0, |a| a.len() - 1);
                let gamma = arma_acf_support(ar, ma, nu2, max_lag)?;
                self.quad_form(&gamma, out);
            }
        }
        Ok(())
    }

    /// Model-implied wavelet variance `nu_j^2(theta)`, `j = 1..=J`.
    pub fn wv(&self, model: &ModelSpec, theta: &[f64]) -> Result<Vec<f64>> {
        self.check(model)?;
        model.validate(theta)?;
        let mut out = vec![0.0; self.n_levels()];
        for (c, par) in model.split(theta) {
            self.add_component(c, par, &mut out)?;
        }
        Ok(out)
    }

    /// Per-component wavelet variances, one vector per component.
    pub fn wv_by_component(&self, model: &ModelSpec, theta: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check(model)?;
        model.validate(theta)?;
        model
            .split(theta)
            .map(|(c, par)| {
                let mut out = vec![0.0; self.n_levels()];
                self.add_component(c, par, &mut out)?;
                Ok(out)
            })
            .collect()
    }

    /// Jacobian `d nu / d theta` (J x p) by central differences.
    ///
    /// Steps are `max(|x|, 1) * 1e-6` where `x` is the parameter itself, or its
    /// logarithm for variance parameters (chain-ruled back).
    pub fn jacobian(&self, model: &ModelSpec, theta: &[f64]) -> Result<DMatrix<f64>> {
        self.jacobian_with_step(model, theta, 1e-6)
    }

    pub fn jacobian_with_step(&self, model: &ModelSpec, theta: &[f64], rel_step: f64) -> Result<DMatrix<f64>> {
        self.wv(model, theta)?;
        let slots = model.param_slots();
        let mut jac = DMatrix::zeros(self.n_levels(), theta.len());
        let mut work = theta.to_vec();
        for (i, slot) in slots.iter().enumerate() {
            let log_space = slot.kind == ParamKind::Variance;
            let x = if log_space { theta[i].ln() } else { theta[i] };
            let h = x.abs().max(1.0) * rel_step;
            let map = |v: f64| if log_space { v.exp() } else { v };
            work[i] = map(x + h);
            let up = self.wv(model, &work).map_err(|_| boundary(i, slot))?;
            work[i] = map(x - h);
            let down = self.wv(model, &work).map_err(|_| boundary(i, slot))?;
            work[i] = theta[i];
            let chain = if log_space { theta[i] } else { 1.0 };
            for j in 0..self.n_levels() {
                jac[(j, i)] = (up[j] - down[j]) / (2.0 * h) / chain;
            }
        }
        Ok(jac)
    }
}

fn boundary(index: usize, slot: &super::ParamSlot) -> Error {
    Error::Boundary {
        index,
        name: slot.name.clone(),
    }
}

/// Model-implied wavelet variance by the filter quadratic-form route.
pub fn theoretical_wv(model: &ModelSpec, theta: &[f64], family: WaveletFamily, levels: usize) -> Result<Vec<f64>> {
    FilterBank::new(family, levels)?.wv(model, theta)
}

/// Jacobian of [`theoretical_wv`] with respect to `theta`.
pub fn jacobian(model: &ModelSpec, theta: &[f64], family: WaveletFamily, levels: usize) -> Result<DMatrix<f64>> {
    FilterBank::new(family, levels)?.jacobian(model, theta)
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Squared gains of the level-1 maximal-overlap (wavelet, scaling) filters.
fn level_one_gains(n_moments: usize, f: f64) -> (f64, f64) {
    let s2 = (std::f64::consts::PI * f).sin().powi(2);
    let c2 = 1.0 - s2;
    let mut hs = 0.0;
    let mut gs = 0.0;
    for l in 0..n_moments {
        let b = binomial(n_moments - 1 + l, l);
        hs += b * c2.powi(l as i32);
        gs += b * s2.powi(l as i32);
    }
    (s2.powi(n_moments as i32) * hs, c2.powi(n_moments as i32) * gs)
}

/// Squared gain `|H_j(f)|^2` of the level-`j` wavelet filter.
fn level_gain(n_moments: usize, j: usize, f: f64) -> f64 {
    let mut g = level_one_gains(n_moments, f * (1u64 << (j - 1)) as f64).0;
    for k in 0..j - 1 {
        g *= level_one_gains(n_moments, f * (1u64 << k) as f64).1;
    }
    g
}

fn arma_sdf(ar: &[f64], ma: &[f64], nu2: f64, f: f64) -> f64 {
    let w = 2.0 * std::f64::consts::PI * f;
    let poly = |coef: &[f64], sign: f64| {
        let (mut re, mut im) = (1.0, 0.0);
        for (k, c) in coef.iter().enumerate() {
            let a = w * (k + 1) as f64;
            re += sign * c * a.cos();
            im -= sign * c * a.sin();
        }
        re * re + im * im
    };
    nu2 * poly(ma, 1.0) / poly(ar, -1.0)
}

/// Model-implied wavelet variance by integrating `|H_j(f)|^2 S(f)` over
/// `(-1/2, 1/2]`; drifts are handled by filtering a ramp directly.
///
/// Intended as an independent cross-check for moderate `J`; the cost grows
/// like `2^J`.
pub fn theoretical_wv_sdf(model: &ModelSpec, theta: &[f64], family: WaveletFamily, levels: usize) -> Result<Vec<f64>> {
    model.validate(theta)?;
    let moments = family.vanishing_moments()?;
    for c in model.components() {
        if c.integration_order() > moments {
            return Err(Error::Incompatible(format!(
                "{} needs a filter with at least {} vanishing moments",
                c.label(),
                c.integration_order()
            )));
        }
    }
    let comps: Vec<(Component, Vec<f64>)> = model.split(theta).map(|(c, p)| (c, p.to_vec())).collect();
    let sdf = |f: f64| -> f64 {
        let s2 = (std::f64::consts::PI * f).sin().powi(2);
        comps
            .iter()
            .map(|(c, par)| match c {
                Component::WhiteNoise => par[0],
                Component::Quantization => 4.0 * par[0] * s2,
                Component::RandomWalk => par[0] / (4.0 * s2),
                Component::Drift => 0.0,
                Component::Ar1 | Component::Arma { .. } => {
                    let (ar, ma) = ar_ma(*c, par);
                    arma_sdf(ar, ma, par[par.len() - 1], f)
                }
            })
            .sum()
    };
    let has_random_walk = comps.iter().any(|(c, _)| *c == Component::RandomWalk);
    let mut out = Vec::with_capacity(levels);
    for j in 1..=levels {
        let pieces = 1usize << j.min(12);
        let width = 0.5 / pieces as f64;
        let mut total = 0.0;
        for k in 0..pieces {
            let a = k as f64 * width;
            let b = a + width;
            let integrand = |f: f64| {
                if f == 0.0 && has_random_walk {
                    return 0.0;
                }
                level_gain(moments, j, f) * sdf(f)
            };
            total += integrate(integrand, a, b, 0.0, 1e-11)?;
        }
        let mut nu = 2.0 * total;
        for (c, par) in &comps {
            if *c == Component::Drift {
                let len = crate::wavelet::filter_length(family.base_length()?, j);
                let ramp: Vec<f64> = (0..2 * len).map(|t| par[0] * t as f64).collect();
                let pyr = decompose_slice(&ramp, j, family)?;
                nu += pyr.level(j)[0].powi(2);
            }
        }
        out.push(nu);
    }
    Ok(out)
}
