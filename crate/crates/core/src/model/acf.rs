//! Exact ARMA autocovariances.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// First `n` MA(infinity) weights `psi_0 = 1, psi_1, ...`.
pub fn arma_psi_weights(ar: &[f64], ma: &[f64], n: usize) -> Vec<f64> {
    let mut psi = vec![0.0; n];
    for k in 0..n {
        let mut v = if k == 0 {
            1.0
        } else if k <= ma.len() {
            ma[k - 1]
        } else {
            0.0
        };
        for (i, phi) in ar.iter().enumerate().take(k) {
            v += phi * psi[k - 1 - i];
        }
        psi[k] = v;
    }
    psi
}

/// Lags with `|gamma(k)| < NEGLIGIBLE * gamma(0)` are set to zero. The
/// recursion would otherwise crawl through subnormals for very long lags.
const NEGLIGIBLE: f64 = 1e-30;

/// Autocovariances `gamma(0..=max_lag)` of a stationary ARMA process with
/// innovation variance `sigma2`, from the extended Yule-Walker system.
pub fn arma_acf(ar: &[f64], ma: &[f64], sigma2: f64, max_lag: usize) -> Result<Vec<f64>> {
    let mut gamma = arma_acf_support(ar, ma, sigma2, max_lag)?;
    gamma.resize(max_lag + 1, 0.0);
    Ok(gamma)
}

/// Like [`arma_acf`] but stops at the last non-negligible lag, so the result
/// may be shorter than `max_lag + 1`.
pub(crate) fn arma_acf_support(ar: &[f64], ma: &[f64], sigma2: f64, max_lag: usize) -> Result<Vec<f64>> {
    let p = ar.len();
    let q = ma.len();
    let theta = |j: usize| if j == 0 { 1.0 } else { ma[j - 1] };
    if p == 0 {
        return Ok((0..=q.min(max_lag))
            .map(|k| sigma2 * (k..=q).map(|j| theta(j) * theta(j - k)).sum::<f64>())
            .collect());
    }
    let mut gamma = Vec::new();
    if p == 1 && q == 0 {
        let rho = ar[0];
        let mut g = sigma2 / (1.0 - rho * rho);
        let tiny = g * NEGLIGIBLE;
        while gamma.len() <= max_lag && g.abs() >= tiny {
            gamma.push(g);
            g *= rho;
        }
        return Ok(gamma);
    }
    let r = p.max(q);
    let psi = arma_psi_weights(ar, ma, q + 1);
    // gamma(k) - sum_i phi_i gamma(|k - i|) = sigma2 * sum_{j=k}^{q} theta_j psi_{j-k}
    let mut a = DMatrix::<f64>::zeros(r + 1, r + 1);
    let mut b = DVector::<f64>::zeros(r + 1);
    for k in 0..=r {
        a[(k, k)] += 1.0;
        for (i, phi) in ar.iter().enumerate() {
            let lag = (k as isize - (i as isize + 1)).unsigned_abs();
            a[(k, lag)] -= phi;
        }
        if k <= q {
            b[k] = sigma2 * (k..=q).map(|j| theta(j) * psi[j - k]).sum::<f64>();
        }
    }
    let sol = a.lu().solve(&b).ok_or_else(|| Error::Numerical {
        context: "ARMA autocovariance".into(),
        detail: "singular Yule-Walker system".into(),
    })?;
    if !sol[0].is_finite() || sol[0] <= 0.0 {
        return Err(Error::Numerical {
            context: "ARMA autocovariance".into(),
            detail: format!("non-positive variance {}", sol[0]),
        });
    }
    let tiny = sol[0] * NEGLIGIBLE;
    for k in 0..=max_lag {
        let g = if k <= r {
            sol[k]
        } else {
            ar.iter().enumerate().map(|(i, phi)| phi * gamma[k - 1 - i]).sum()
        };
        gamma.push(g);
        if k > r && gamma[k - p..=k].iter().all(|g| g.abs() < tiny) {
            gamma.truncate(k - p);
            break;
        }
    }
    Ok(gamma)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Truncated sum of psi-weight products, an independent route.
    fn acf_by_psi(ar: &[f64], ma: &[f64], sigma2: f64, max_lag: usize) -> Vec<f64> {
        let n = 20_000;
        let psi = arma_psi_weights(ar, ma, n + max_lag);
        (0..=max_lag)
            .map(|k| sigma2 * (0..n).map(|i| psi[i] * psi[i + k]).sum::<f64>())
            .collect()
    }

    #[test]
    fn ar1_closed_form() {
        let g = arma_acf(&[0.5], &[], 2.0, 3).unwrap();
        let g0 = 2.0 / 0.75;
        for (k, v) in g.iter().enumerate() {
            assert!((v - g0 * 0.5f64.powi(k as i32)).abs() < 1e-14);
        }
    }

    #[test]
    fn long_lags_are_truncated_not_subnormal() {
        let g = arma_acf(&[0.6], &[], 1.0, 1 << 16).unwrap();
        assert_eq!(g.len(), (1 << 16) + 1);
        assert!(g.iter().all(|v| *v == 0.0 || v.is_normal()));
        let s = arma_acf_support(&[0.6], &[], 1.0, 1 << 16).unwrap();
        assert!(s.len() < 200);
        assert_eq!(&g[..s.len()], &s[..]);
        let h = arma_acf_support(&[0.5, 0.3], &[0.2], 1.0, 1 << 16).unwrap();
        assert!(h.len() < 1000 && h.iter().all(|v| v.is_normal()));
    }

    #[test]
    fn ma1_closed_form() {
        let g = arma_acf(&[], &[0.4], 1.0, 3).unwrap();
        for (v, e) in g.iter().zip([1.16, 0.4, 0.0, 0.0]) {
            assert!((v - e).abs() < 1e-15);
        }
    }

    #[test]
    fn ar2_yule_walker() {
        let (a1, a2) = (0.5, -0.3);
        let g = arma_acf(&[a1, a2], &[], 1.0, 2).unwrap();
        let rho1 = a1 / (1.0 - a2);
        assert!((g[1] / g[0] - rho1).abs() < 1e-14);
        assert!((g[2] / g[0] - (a1 * rho1 + a2)).abs() < 1e-14);
    }

    #[test]
    fn matches_psi_route() {
        let cases: [(&[f64], &[f64]); 4] = [
            (&[0.5], &[-0.1, 0.5]),
            (&[0.7, 0.3, -0.2], &[0.5]),
            (&[0.5, -0.3], &[]),
            (&[0.2, 0.1], &[0.4, 0.3, -0.2]),
        ];
        for (ar, ma) in cases {
            let exact = arma_acf(ar, ma, 1.3, 12).unwrap();
            let approx = acf_by_psi(ar, ma, 1.3, 12);
            for (e, a) in exact.iter().zip(&approx) {
                assert!((e - a).abs() < 1e-10 * exact[0], "{ar:?} {ma:?}: {e} vs {a}");
            }
        }
    }
}
