//! Maximal-overlap (non-decimated) wavelet filters and coefficient pyramids.
//!
//! Filters use the maximal-overlap normalization: the level-`j` wavelet filter
//! has squared norm `2^-j` and the dyadic scale is `tau_j = 2^j`. Boundary
//! coefficients are discarded, so level `j` of a length-`T` series holds
//! exactly `M_j = T - L_j + 1` values, where `L_j = (2^j - 1)(L_1 - 1) + 1`.
//!
//! The coefficient convention is `W[j, t] = sum_l h[j, l] * X[t - l]`; for the
//! Haar filter at level 1 this is `(X[t] - X[t-1]) / 2`.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Orthonormal Daubechies scaling filters (sum = sqrt(2)), indexed by length.
const D4: [f64; 4] = [
    0.482_962_913_144_534_1,
    0.836_516_303_737_807_9,
    0.224_143_868_042_013_4,
    -0.129_409_522_551_260_4,
];
const D6: [f64; 6] = [
    0.332_670_552_950_082_6,
    0.806_891_509_311_092_5,
    0.459_877_502_118_491_5,
    -0.135_011_020_010_254_6,
    -0.085_441_273_882_026_7,
    0.035_226_291_885_709_5,
];
const D8: [f64; 8] = [
    0.230_377_813_308_896_4,
    0.714_846_570_552_915_4,
    0.630_880_767_929_858_7,
    -0.027_983_769_416_859_9,
    -0.187_034_811_719_093_1,
    0.030_841_381_835_560_7,
    0.032_883_011_666_885_2,
    -0.010_597_401_785_069_0,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WaveletFamily {
    Haar,
    /// Daubechies extremal-phase filter with the given number of taps (4, 6 or 8).
    Daubechies(u8),
}

impl Default for WaveletFamily {
    fn default() -> Self {
        WaveletFamily::Haar
    }
}

impl WaveletFamily {
    fn scaling_taps(self) -> Result<Vec<f64>> {
        match self {
            WaveletFamily::Haar => Ok(vec![std::f64::consts::FRAC_1_SQRT_2; 2]),
            WaveletFamily::Daubechies(4) => Ok(D4.to_vec()),
            WaveletFamily::Daubechies(6) => Ok(D6.to_vec()),
            WaveletFamily::Daubechies(8) => Ok(D8.to_vec()),
            WaveletFamily::Daubechies(n) => Err(Error::Config(format!(
                "unsupported Daubechies filter length {n} (supported: 4, 6, 8)"
            ))),
        }
    }

    /// Length `L_1` of the level-1 filter.
    pub fn base_length(self) -> Result<usize> {
        Ok(self.scaling_taps()?.len())
    }

    /// Number of vanishing moments, i.e. the differencing order the filter annihilates.
    pub fn vanishing_moments(self) -> Result<usize> {
        Ok(self.base_length()? / 2)
    }

    /// Level-1 maximal-overlap (wavelet, scaling) taps.
    pub(crate) fn level_one(self) -> Result<(Vec<f64>, Vec<f64>)> {
        if self == WaveletFamily::Haar {
            return Ok((vec![0.5, -0.5], vec![0.5, 0.5]));
        }
        let g = self.scaling_taps()?;
        let n = g.len();
        let scale = std::f64::consts::FRAC_1_SQRT_2;
        let h = (0..n)
            .map(|l| {
                let sign = if l % 2 == 0 { 1.0 } else { -1.0 };
                sign * g[n - 1 - l] * scale
            })
            .collect();
        let g = g.iter().map(|v| v * scale).collect();
        Ok((h, g))
    }
}

impl fmt::Display for WaveletFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WaveletFamily::Haar => write!(f, "haar"),
            WaveletFamily::Daubechies(n) => write!(f, "d{n}"),
        }
    }
}

impl FromStr for WaveletFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "haar" | "d2" => Ok(WaveletFamily::Haar),
            _ => {
                let n = lower
                    .strip_prefix('d')
                    .and_then(|rest| rest.parse::<u8>().ok())
                    .ok_or_else(|| Error::Config(format!("unknown wavelet family '{s}'")))?;
                let fam = WaveletFamily::Daubechies(n);
                fam.base_length()?;
                Ok(fam)
            }
        }
    }
}

/// Filter length at level `j` given the level-1 length.
pub fn filter_length(base_len: usize, level: usize) -> usize {
    ((1usize << level) - 1) * (base_len - 1) + 1
}

/// Equivalent level-`j` maximal-overlap wavelet filter.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletFilter {
    family: WaveletFamily,
    level: usize,
    taps: Vec<f64>,
}

impl WaveletFilter {
    pub fn family(&self) -> WaveletFamily {
        self.family
    }
    pub fn level(&self) -> usize {
        self.level
    }
    pub fn taps(&self) -> &[f64] {
        &self.taps
    }
    pub fn len(&self) -> usize {
        self.taps.len()
    }
    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }
    /// Dyadic scale `tau_j = 2^j`.
    pub fn scale(&self) -> u64 {
        1u64 << self.level
    }
    pub fn energy(&self) -> f64 {
        self.taps.iter().map(|h| h * h).sum()
    }
}

/// Full linear convolution; zeros in `a` are skipped, so pass the sparse operand first.
pub(crate) fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        for (k, &y) in b.iter().enumerate() {
            out[i + k] += x * y;
        }
    }
    out
}

pub(crate) fn upsample(taps: &[f64], factor: usize) -> Vec<f64> {
    let mut out = vec![0.0; (taps.len() - 1) * factor + 1];
    for (i, &t) in taps.iter().enumerate() {
        out[i * factor] = t;
    }
    out
}

/// Builds the equivalent level-`j` wavelet filter.
pub fn build_filter(family: WaveletFamily, level: usize) -> Result<WaveletFilter> {
    if level == 0 {
        return Err(Error::Config("wavelet level must be >= 1".into()));
    }
    if level > 40 {
        return Err(Error::Config(format!("wavelet level {level} is too large")));
    }
    let (h1, g1) = family.level_one()?;
    if level == 1 {
        return Ok(WaveletFilter {
            family,
            level,
            taps: h1,
        });
    }
    let mut scaling = g1.clone();
    for k in 2..level {
        scaling = convolve(&upsample(&g1, 1 << (k - 1)), &scaling);
    }
    let taps = convolve(&upsample(&h1, 1 << (level - 1)), &scaling);
    debug_assert_eq!(taps.len(), filter_length(h1.len(), level));
    Ok(WaveletFilter {
        family,
        level,
        taps,
    })
}

/// Largest number of scales `J` with `2^J < T` and `M_J >= min_coeffs`.
///
/// A series long enough for one level-1 coefficient always gets `J >= 1`.
pub fn max_scales(n: usize, family: WaveletFamily, min_coeffs: usize) -> Result<usize> {
    let base = family.base_length()?;
    let min_coeffs = min_coeffs.max(1);
    if n < base || n - base + 1 < min_coeffs {
        return Err(Error::Input(format!(
            "series shorter than level-1 filter (T = {n}, L_1 = {base}, min_coeffs = {min_coeffs})"
        )));
    }
    let mut j = 1;
    loop {
        let next = j + 1;
        if next >= usize::BITS as usize - 1 || (1usize << next) >= n {
            break;
        }
        let len = filter_length(base, next);
        if len > n || n - len + 1 < min_coeffs {
            break;
        }
        j = next;
    }
    Ok(j)
}

/// Uniformly sampled, finite, real-valued signal with at least two samples.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeSeries {
    values: Vec<f64>,
    period: Option<f64>,
}

impl TimeSeries {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Input(format!(
                "time series needs at least 2 values, got {}",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!(
                "non-finite value {} at index {pos}",
                values[pos]
            )));
        }
        Ok(Self {
            values,
            period: None,
        })
    }

    pub fn with_period(mut self, period: f64) -> Self {
        self.period = Some(period);
        self
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn len(&self) -> usize {
        self.values.len()
    }
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
    pub fn period(&self) -> Option<f64> {
        self.period
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Per-scale interior wavelet coefficients of one series.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientPyramid {
    family: WaveletFamily,
    source_len: usize,
    levels: Vec<Vec<f64>>,
}

impl CoefficientPyramid {
    pub fn family(&self) -> WaveletFamily {
        self.family
    }
    pub fn source_len(&self) -> usize {
        self.source_len
    }
    /// Number of levels `J`.
    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }
    /// Coefficients of level `j` (1-based).
    pub fn level(&self, j: usize) -> &[f64] {
        &self.levels[j - 1]
    }
    pub fn levels(&self) -> &[Vec<f64>] {
        &self.levels
    }
    pub fn filter_len(&self, j: usize) -> usize {
        filter_length(self.levels_base_len(), j)
    }
    fn levels_base_len(&self) -> usize {
        // family was validated at construction
        self.family.base_length().unwrap_or(2)
    }
    /// Time index (0-based, in the source series) of coefficient `i` at level `j`.
    ///
    /// The coefficient depends on samples `t - L_j + 1 ..= t`.
    pub fn time_index(&self, j: usize, i: usize) -> usize {
        i + self.filter_len(j) - 1
    }
    pub fn scales(&self) -> Vec<u64> {
        (1..=self.n_levels()).map(|j| 1u64 << j).collect()
    }
}

/// Maximal-overlap decomposition up to level `J`, interior coefficients only.
///
/// Uses the pyramid (a trous) recursion, so the cost is `O(T * J * L_1)`.
pub fn decompose(
    series: &TimeSeries,
    levels: usize,
    family: WaveletFamily,
) -> Result<CoefficientPyramid> {
    decompose_slice(series.values(), levels, family)
}

pub fn decompose_slice(
    values: &[f64],
    levels: usize,
    family: WaveletFamily,
) -> Result<CoefficientPyramid> {
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Input(format!("non-finite value at index {pos}")));
    }
    let n = values.len();
    let max = max_scales(n, family, 1)?;
    if levels == 0 || levels > max {
        return Err(Error::Config(format!(
            "requested {levels} levels but a series of length {n} supports 1..={max}"
        )));
    }
    let (h, g) = family.level_one()?;
    let taps = h.len();
    let mut smooth = values.to_vec();
    let mut out = Vec::with_capacity(levels);
    for j in 1..=levels {
        let stride = 1usize << (j - 1);
        let span = stride * (taps - 1);
        let m = smooth.len() - span;
        let mut wav = Vec::with_capacity(m);
        // smooth[i] is overwritten only after every output that reads it
        for i in 0..m {
            let t = i + span;
            let mut acc_w = 0.0;
            let mut acc_v = 0.0;
            for l in 0..taps {
                let x = smooth[t - l * stride];
                acc_w += h[l] * x;
                acc_v += g[l] * x;
            }
            wav.push(acc_w);
            smooth[i] = acc_v;
        }
        smooth.truncate(m);
        out.push(wav);
    }
    Ok(CoefficientPyramid {
        family,
        source_len: n,
        levels: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn haar_level_one_taps() {
        let f = build_filter(WaveletFamily::Haar, 1).unwrap();
        assert_eq!(f.taps(), &[0.5, -0.5]);
        assert_eq!(f.scale(), 2);
        assert_eq!(f.len(), 2);
    }

    #[test]
    fn haar_level_two_taps_and_energy() {
        let f = build_filter(WaveletFamily::Haar, 2).unwrap();
        for (a, b) in f.taps().iter().zip([0.25, 0.25, -0.25, -0.25]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((f.energy() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn haar_level_j_shape() {
        for j in 1..=8 {
            let f = build_filter(WaveletFamily::Haar, j).unwrap();
            let half = 1usize << (j - 1);
            assert_eq!(f.len(), 1 << j);
            let v = 1.0 / (1u64 << j) as f64;
            for (l, &t) in f.taps().iter().enumerate() {
                let expected = if l < half { v } else { -v };
                assert!((t - expected).abs() < 1e-15, "j={j} l={l}");
            }
        }
    }

    #[test]
    fn filter_invariants_all_families() {
        for fam in [
            WaveletFamily::Haar,
            WaveletFamily::Daubechies(4),
            WaveletFamily::Daubechies(6),
            WaveletFamily::Daubechies(8),
        ] {
            let l1 = fam.base_length().unwrap();
            for j in 1..=7 {
                let f = build_filter(fam, j).unwrap();
                assert_eq!(f.len(), filter_length(l1, j));
                let sum: f64 = f.taps().iter().sum();
                assert!(sum.abs() < 1e-12, "{fam} j={j} sum={sum}");
                let expected = 1.0 / (1u64 << j) as f64;
                assert!((f.energy() - expected).abs() < 1e-12, "{fam} j={j}");
            }
        }
    }

    #[test]
    fn unsupported_family_is_config_error() {
        assert!(matches!(
            build_filter(WaveletFamily::Daubechies(5), 1),
            Err(Error::Config(_))
        ));
        assert!(build_filter(WaveletFamily::Haar, 0).is_err());
        assert!("d7".parse::<WaveletFamily>().is_err());
        assert_eq!("D4".parse::<WaveletFamily>().unwrap(), WaveletFamily::Daubechies(4));
    }

    #[test]
    fn max_scales_examples() {
        assert_eq!(max_scales(1000, WaveletFamily::Haar, 1).unwrap(), 9);
        assert_eq!(max_scales(2, WaveletFamily::Haar, 1).unwrap(), 1);
        assert_eq!(max_scales(1_000_000, WaveletFamily::Haar, 1).unwrap(), 19);
        assert_eq!(max_scales(4096, WaveletFamily::Haar, 1).unwrap(), 11);
        assert!(max_scales(1, WaveletFamily::Haar, 1).is_err());
        // a coefficient floor trims the coarse end
        assert_eq!(max_scales(1000, WaveletFamily::Haar, 600).unwrap(), 8);
    }

    #[test]
    fn decompose_two_points() {
        let s = TimeSeries::new(vec![1.0, 2.0]).unwrap();
        let p = decompose(&s, 1, WaveletFamily::Haar).unwrap();
        assert_eq!(p.level(1), &[0.5]);
    }

    #[test]
    fn decompose_constant_is_zero() {
        let s = TimeSeries::new(vec![3.7; 300]).unwrap();
        let p = decompose(&s, 7, WaveletFamily::Haar).unwrap();
        for j in 1..=7 {
            assert!(p.level(j).iter().all(|w| w.abs() < 1e-14));
        }
        let p = decompose(&s, 5, WaveletFamily::Daubechies(4)).unwrap();
        for j in 1..=5 {
            assert!(p.level(j).iter().all(|w| w.abs() < 1e-12));
        }
    }

    #[test]
    fn decompose_ramp_level_one() {
        let s = TimeSeries::new((0..50).map(|t| t as f64).collect()).unwrap();
        let p = decompose(&s, 1, WaveletFamily::Haar).unwrap();
        assert_eq!(p.level(1).len(), 49);
        assert!(p.level(1).iter().all(|&w| (w - 0.5).abs() < 1e-14));
    }

    #[test]
    fn pyramid_matches_direct_convolution() {
        let x: Vec<f64> = (0..200).map(|t| ((t * 37 % 101) as f64).sin() + 0.01 * t as f64).collect();
        for fam in [WaveletFamily::Haar, WaveletFamily::Daubechies(6)] {
            let p = decompose_slice(&x, 5, fam).unwrap();
            for j in 1..=5 {
                let f = build_filter(fam, j).unwrap();
                let lj = f.len();
                assert_eq!(p.level(j).len(), x.len() - lj + 1);
                for (i, &w) in p.level(j).iter().enumerate() {
                    let t = i + lj - 1;
                    let direct: f64 = f.taps().iter().enumerate().map(|(l, h)| h * x[t - l]).sum();
                    assert!((w - direct).abs() < 1e-12, "{fam} j={j} i={i}");
                }
            }
        }
    }

    #[test]
    fn non_finite_rejected() {
        assert!(matches!(TimeSeries::new(vec![1.0, f64::NAN]), Err(Error::Input(_))));
        assert!(matches!(
            decompose_slice(&[1.0, f64::INFINITY, 2.0], 1, WaveletFamily::Haar),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn too_many_levels_rejected() {
        let s = TimeSeries::new(vec![0.0; 16]).unwrap();
        assert!(decompose(&s, 4, WaveletFamily::Haar).is_err());
        assert!(decompose(&s, 3, WaveletFamily::Haar).is_ok());
    }
}
