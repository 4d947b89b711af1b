//! Bounded-influence weight functions for the scale M-estimator of the
//! wavelet variance, their Gaussian consistency correction and the map
//! between tuning constant and asymptotic efficiency.
//!
//! For a standardized coefficient `r = W / nu` the estimating function is
//! `omega(r; c)^2 * r^2 - a(c)`, where `a(c) = E[omega^2(Z) Z^2]` for `Z ~ N(0, 1)`.
//! The efficiency relative to the mean of squares is
//! `E[r g'(r)]^2 / (2 (E[g^2] - a^2))` with `g(r) = omega(r)^2 r^2`.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::{Mutex, OnceLock};

use crate::error::{Error, Result};
use crate::quad;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PsiKind {
    Huber,
    Tukey,
    Identity,
}

impl fmt::Display for PsiKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PsiKind::Huber => "huber",
            PsiKind::Tukey => "tukey",
            PsiKind::Identity => "identity",
        })
    }
}

impl FromStr for PsiKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "huber" => Ok(PsiKind::Huber),
            "tukey" | "biweight" | "bisquare" => Ok(PsiKind::Tukey),
            "identity" | "none" | "classical" | "standard" => Ok(PsiKind::Identity),
            other => Err(Error::Config(format!("unknown psi function '{other}'"))),
        }
    }
}

/// A psi-function with its tuning constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsiSpec {
    pub kind: PsiKind,
    /// Tuning constant; `+inf` for the identity.
    #[serde(with = "serde_inf")]
    pub c: f64,
    /// Target efficiency the constant was derived from, if any.
    pub target_efficiency: Option<f64>,
}

mod serde_inf {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

impl Default for PsiSpec {
    /// Tukey biweight tuned to 60% asymptotic efficiency.
    fn default() -> Self {
        Self::from_efficiency(PsiKind::Tukey, 0.6).expect("60% Tukey efficiency is attainable")
    }
}

impl PsiSpec {
    pub fn identity() -> Self {
        Self {
            kind: PsiKind::Identity,
            c: f64::INFINITY,
            target_efficiency: None,
        }
    }

    pub fn new(kind: PsiKind, c: f64) -> Result<Self> {
        match kind {
            PsiKind::Identity => Ok(Self::identity()),
            _ if c == f64::INFINITY => Ok(Self::identity()),
            _ if !(c > 0.0) || !c.is_finite() => Err(Error::Domain(format!(
                "tuning constant must be positive and finite, got {c}"
            ))),
            _ => Ok(Self {
                kind,
                c,
                target_efficiency: None,
            }),
        }
    }

    pub fn huber(c: f64) -> Result<Self> {
        Self::new(PsiKind::Huber, c)
    }

    pub fn tukey(c: f64) -> Result<Self> {
        Self::new(PsiKind::Tukey, c)
    }

    pub fn from_efficiency(kind: PsiKind, efficiency: f64) -> Result<Self> {
        let c = efficiency_to_c(kind, efficiency)?;
        let mut spec = Self::new(kind, c)?;
        spec.target_efficiency = Some(efficiency);
        Ok(spec)
    }

    pub fn is_identity(&self) -> bool {
        self.kind == PsiKind::Identity || self.c == f64::INFINITY
    }

    /// Weight `omega(r; c)` in `[0, 1]`.
    #[inline]
    pub fn weight(&self, r: f64) -> f64 {
        weight_fn(r, self)
    }

    /// `g(r) = omega(r)^2 r^2`, the weighted squared residual.
    #[inline]
    pub fn weighted_square(&self, r: f64) -> f64 {
        let c = self.c;
        match self.kind {
            _ if self.is_identity() => r * r,
            PsiKind::Huber => (r * r).min(c * c),
            PsiKind::Tukey => {
                let u = r * r / (c * c);
                if u >= 1.0 {
                    0.0
                } else {
                    let v = 1.0 - u;
                    let v2 = v * v;
                    r * r * v2 * v2
                }
            }
            PsiKind::Identity => r * r,
        }
    }

    /// `r * g'(r)`.
    pub fn weighted_square_slope(&self, r: f64) -> f64 {
        let c = self.c;
        match self.kind {
            _ if self.is_identity() => 2.0 * r * r,
            PsiKind::Huber => {
                if r.abs() < c {
                    2.0 * r * r
                } else {
                    0.0
                }
            }
            PsiKind::Tukey => {
                let u = r * r / (c * c);
                if u >= 1.0 {
                    0.0
                } else {
                    let v = 1.0 - u;
                    2.0 * r * r * v.powi(4) - 8.0 * r * r * u * v.powi(3)
                }
            }
            PsiKind::Identity => 2.0 * r * r,
        }
    }

    /// Fisher-consistency constant `a(c) = E[g(Z)]` for Gaussian coefficients.
    pub fn correction(&self) -> f64 {
        consistency_correction(self).expect("Gaussian correction is always computable")
    }

    /// Asymptotic efficiency relative to the mean of squares at the Gaussian.
    pub fn efficiency(&self) -> f64 {
        gaussian_moments(self).map(|m| m.efficiency()).unwrap_or(f64::NAN)
    }
}

/// Weight function `omega(r; c)`.
pub fn weight_fn(r: f64, spec: &PsiSpec) -> f64 {
    if spec.is_identity() {
        return 1.0;
    }
    let c = spec.c;
    match spec.kind {
        PsiKind::Huber => {
            let a = r.abs();
            if a <= c {
                1.0
            } else {
                c / a
            }
        }
        PsiKind::Tukey => {
            let u = r / c;
            if u.abs() >= 1.0 {
                0.0
            } else {
                let v = 1.0 - u * u;
                v * v
            }
        }
        PsiKind::Identity => 1.0,
    }
}

/// Gaussian moments of `g` used by the correction and the efficiency.
#[derive(Debug, Clone, Copy)]
pub struct GaussianMoments {
    /// `E[g(Z)]`
    pub mean: f64,
    /// `E[g(Z)^2]`
    pub second: f64,
    /// `E[Z g'(Z)]`
    pub slope: f64,
}

impl GaussianMoments {
    pub fn efficiency(&self) -> f64 {
        self.slope * self.slope / (2.0 * (self.second - self.mean * self.mean))
    }
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Upper-tail probability `P(|Z| > x)`.
fn two_sided_tail(x: f64) -> f64 {
    statrs::function::erf::erfc(x / std::f64::consts::SQRT_2)
}

// Beyond this, N(0,1) mass is below 1e-300 and polynomial integrands vanish.
const GAUSS_CUTOFF: f64 = 38.0;

fn half_line_expectation<F: Fn(f64) -> f64>(h: F, upper: f64) -> Result<f64> {
    let upper = upper.min(GAUSS_CUTOFF);
    // split at 1 and 4 so every panel is smooth and well scaled
    let mut total = 0.0;
    let mut lo = 0.0;
    for hi in [1.0, 4.0, upper] {
        let hi = hi.min(upper);
        if hi > lo {
            total += quad::integrate(|x| h(x) * std_normal_pdf(x), lo, hi, 1e-17, 1e-14)?;
            lo = hi;
        }
    }
    Ok(2.0 * total)
}

/// Moments of `g` under `Z ~ N(0, 1)` by adaptive quadrature.
pub fn gaussian_moments(spec: &PsiSpec) -> Result<GaussianMoments> {
    if spec.is_identity() {
        return Ok(GaussianMoments {
            mean: 1.0,
            second: 3.0,
            slope: 2.0,
        });
    }
    let c = spec.c;
    let mut mean = half_line_expectation(|r| spec.weighted_square(r), c)?;
    let mut second = half_line_expectation(|r| spec.weighted_square(r).powi(2), c)?;
    let slope = half_line_expectation(|r| spec.weighted_square_slope(r), c)?;
    if spec.kind == PsiKind::Huber {
        let tail = two_sided_tail(c);
        mean += c * c * tail;
        second += c.powi(4) * tail;
    }
    Ok(GaussianMoments {
        mean,
        second,
        slope,
    })
}

fn cache() -> &'static Mutex<HashMap<(PsiKind, u64), f64>> {
    static CACHE: OnceLock<Mutex<HashMap<(PsiKind, u64), f64>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// `a_psi(c)`: the Gaussian Fisher-consistency correction, memoized per `(kind, c)`.
pub fn consistency_correction(spec: &PsiSpec) -> Result<f64> {
    if spec.is_identity() {
        return Ok(1.0);
    }
    let key = (spec.kind, spec.c.to_bits());
    if let Some(v) = cache().lock().expect("cache poisoned").get(&key) {
        return Ok(*v);
    }
    let value = gaussian_moments(spec)?.mean;
    cache().lock().expect("cache poisoned").insert(key, value);
    Ok(value)
}

/// Asymptotic efficiency of the M-estimator relative to the mean of squares.
pub fn efficiency_of(kind: PsiKind, c: f64) -> Result<f64> {
    let spec = PsiSpec::new(kind, c)?;
    Ok(gaussian_moments(&spec)?.efficiency())
}

const C_MIN: f64 = 1e-3;
const C_MAX: f64 = 1e4;

/// Tuning constant achieving the target Gaussian efficiency `e` in `(0, 1]`.
///
/// `e = 1` maps to `+inf` (the standard estimator). Solved by bisection in
/// `log c`; efficiency is increasing in `c` for both Huber and Tukey.
pub fn efficiency_to_c(kind: PsiKind, efficiency: f64) -> Result<f64> {
    if !(efficiency > 0.0 && efficiency <= 1.0) {
        return Err(Error::Domain(format!(
            "target efficiency must lie in (0, 1], got {efficiency}"
        )));
    }
    if efficiency == 1.0 || kind == PsiKind::Identity {
        return Ok(f64::INFINITY);
    }
    let f = |log_c: f64| -> Result<f64> { Ok(efficiency_of(kind, log_c.exp())? - efficiency) };
    let mut lo = C_MIN.ln();
    let mut hi = C_MAX.ln();
    let f_lo = f(lo)?;
    let f_hi = f(hi)?;
    if f_lo > 0.0 || f_hi < 0.0 {
        return Err(Error::Domain(format!(
            "target efficiency {efficiency} is not attainable for {kind} with c in [{C_MIN}, {C_MAX}]"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}
