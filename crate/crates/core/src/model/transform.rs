//! Bijection between stationary AR coefficient vectors and partial
//! autocorrelations in (-1, 1)^p.

/// Partial autocorrelations of the AR polynomial `1 - sum phi_i z^i`, or `None`
/// if it has a root on or inside the unit circle.
pub fn ar_to_pacf(phi: &[f64]) -> Option<Vec<f64>> {
    let p = phi.len();
    let mut cur = phi.to_vec();
    let mut pacf = vec![0.0; p];
    for k in (1..=p).rev() {
        let r = cur[k - 1];
        if !r.is_finite() || r.abs() >= 1.0 {
            return None;
        }
        pacf[k - 1] = r;
        let denom = 1.0 - r * r;
        let prev: Vec<f64> = (0..k - 1).map(|i| (cur[i] + r * cur[k - 2 - i]) / denom).collect();
        cur = prev;
    }
    Some(pacf)
}

/// Inverse of [`ar_to_pacf`] (Durbin-Levinson recursion).
pub fn pacf_to_ar(pacf: &[f64]) -> Vec<f64> {
    let mut phi: Vec<f64> = Vec::with_capacity(pacf.len());
    for (k, &r) in pacf.iter().enumerate() {
        let next: Vec<f64> = (0..k).map(|i| phi[i] - r * phi[k - 1 - i]).collect();
        phi = next;
        phi.push(r);
    }
    phi
}
