//! Small dense optimizers: Nelder-Mead simplex search and Levenberg-Marquardt.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    /// Absolute tolerance on the spread of function values over the simplex.
    pub f_abs_tol: f64,
    /// Relative tolerance on the same spread.
    pub f_rel_tol: f64,
    /// Tolerance on the simplex diameter (max-norm).
    pub x_tol: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_evals: 20_000,
            f_abs_tol: 1e-30,
            f_rel_tol: 1e-12,
            x_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub iterations: usize,
    pub simplex_size: f64,
    pub converged: bool,
}

/// Minimizes `f` with the adaptive-coefficient Nelder-Mead simplex.
/// Non-finite function values are treated as `+inf`.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    step: &[f64],
    opts: &NelderMeadOptions,
) -> NelderMeadResult {
    let n = x0.len();
    let mut eval = |x: &[f64]| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let nf = n as f64;
    let (alpha, gamma, rho, sigma) = if n >= 2 {
        (1.0, 1.0 + 2.0 / nf, 0.75 - 0.5 / nf, 1.0 - 1.0 / nf)
    } else {
        (1.0, 2.0, 0.5, 0.5)
    };
    let mut pts: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += if step[i] != 0.0 { step[i] } else { 0.1 };
        pts.push(p);
    }
    let mut vals: Vec<f64> = pts.iter().map(|p| eval(p)).collect();
    let mut evals = n + 1;
    let mut iterations = 0;
    let converged;
    let diameter = |pts: &[Vec<f64>]| -> f64 {
        pts[1..]
            .iter()
            .map(|p| p.iter().zip(&pts[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max)
    };
    loop {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = order.iter().map(|&i| pts[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();
        let spread = vals[n] - vals[0];
        if vals[0].is_finite()
            && spread <= opts.f_abs_tol + opts.f_rel_tol * vals[0].abs()
            && diameter(&pts) <= opts.x_tol
        {
            converged = true;
            break;
        }
        if evals >= opts.max_evals || n == 0 {
            converged = n == 0;
            break;
        }
        iterations += 1;
        let centroid: Vec<f64> = (0..n).map(|k| pts[..n].iter().map(|p| p[k]).sum::<f64>() / nf).collect();
        let along = |t: f64| -> Vec<f64> { (0..n).map(|k| centroid[k] + t * (pts[n][k] - centroid[k])).collect() };
        let xr = along(-alpha);
        let fr = eval(&xr);
        evals += 1;
        if fr < vals[0] {
            let xe = along(-alpha * gamma);
            let fe = eval(&xe);
            evals += 1;
            if fe < fr {
                pts[n] = xe;
                vals[n] = fe;
            } else {
                pts[n] = xr;
                vals[n] = fr;
            }
            continue;
        }
        if fr < vals[n - 1] {
            pts[n] = xr;
            vals[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < vals[n] {
            let xc = along(-alpha * rho);
            let fc = eval(&xc);
            (xc, fc)
        } else {
            let xc = along(rho);
            let fc = eval(&xc);
            (xc, fc)
        };
        evals += 1;
        if fc < vals[n].min(fr) {
            pts[n] = xc;
            vals[n] = fc;
            continue;
        }
        for i in 1..=n {
            let p: Vec<f64> = (0..n).map(|k| pts[0][k] + sigma * (pts[i][k] - pts[0][k])).collect();
            vals[i] = eval(&p);
            pts[i] = p;
        }
        evals += n;
    }
    let simplex_size = diameter(&pts);
    NelderMeadResult {
        x: pts[0].clone(),
        f: vals[0],
        evals,
        iterations,
        simplex_size,
        converged,
    }
}

#[derive(Debug, Clone)]
pub struct LmResult {
    pub x: Vec<f64>,
    /// Sum of squared residuals at `x`.
    pub cost: f64,
    pub iterations: usize,
    pub evals: usize,
}

/// Levenberg-Marquardt on `residual(x)`, with a central-difference Jacobian.
/// `residual` returns `None` outside its domain. Returns `None` if the start is
/// outside the domain.
pub fn levenberg_marquardt<F: FnMut(&[f64]) -> Option<Vec<f64>>>(
    mut residual: F,
    x0: &[f64],
    max_iter: usize,
) -> Option<LmResult> {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut r = residual(&x)?;
    let mut evals = 1;
    let cost = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>();
    let mut c = cost(&r);
    let mut lambda = 1e-3;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let m = r.len();
        let mut jac = DMatrix::zeros(m, n);
        let mut ok = true;
        for k in 0..n {
            let h = 1e-6 * x[k].abs().max(1.0);
            let mut xp = x.clone();
            xp[k] += h;
            let mut xm = x.clone();
            xm[k] -= h;
            evals += 2;
            match (residual(&xp), residual(&xm)) {
                (Some(rp), Some(rm)) => {
                    for i in 0..m {
                        jac[(i, k)] = (rp[i] - rm[i]) / (2.0 * h);
                    }
                }
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            break;
        }
        let rv = DVector::from_vec(r.clone());
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &rv;
        if grad.amax() <= 1e-300 {
            break;
        }
        let mut improved = false;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for k in 0..n {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
            }
            let Some(delta) = a.cholesky().map(|ch| ch.solve(&(-&grad))) else {
                lambda *= 10.0;
                continue;
            };
            let xn: Vec<f64> = x.iter().zip(delta.iter()).map(|(a, d)| a + d).collect();
            evals += 1;
            if let Some(rn) = residual(&xn) {
                let cn = cost(&rn);
                if cn < c {
                    let rel_drop = (c - cn) / c.max(1e-300);
                    let step = delta.iter().zip(&x).map(|(d, a)| d.abs() / a.abs().max(1.0)).fold(0.0, f64::max);
                    x = xn;
                    r = rn;
                    c = cn;
                    lambda = (lambda / 10.0).max(1e-12);
                    improved = true;
                    if rel_drop < 1e-14 || step < 1e-13 {
                        return Some(LmResult {
                            x,
                            cost: c,
                            iterations,
                            evals,
                        });
                    }
                    break;
                }
            }
            lambda *= 10.0;
            if lambda > 1e16 {
                break;
            }
        }
        if !improved {
            break;
        }
    }
    Some(LmResult {
        x,
        cost: c,
        iterations,
        evals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> f64 {
        (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
    }

    #[test]
    fn nelder_mead_rosenbrock() {
        let r = nelder_mead(rosenbrock, &[-1.2, 1.0], &[0.5, 0.5], &NelderMeadOptions::default());
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6, "{:?}", r.x);
    }

    #[test]
    fn nelder_mead_quadratic_high_dim() {
        let f = |x: &[f64]| x.iter().enumerate().map(|(i, v)| (i + 1) as f64 * (v - 0.5).powi(2)).sum();
        let r = nelder_mead(f, &[0.0; 6], &[1.0; 6], &NelderMeadOptions::default());
        for v in r.x {
            assert!((v - 0.5).abs() < 1e-6);
        }
    }

    #[test]
    fn nelder_mead_handles_nan() {
        let f = |x: &[f64]| if x[0] < 0.0 { f64::NAN } else { (x[0] - 2.0).powi(2) };
        let r = nelder_mead(f, &[1.0], &[0.5], &NelderMeadOptions::default());
        assert!((r.x[0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn lm_exponential_fit() {
        let ts: Vec<f64> = (0..20).map(|i| i as f64 * 0.25).collect();
        let ys: Vec<f64> = ts.iter().map(|t| 3.0 * (-0.7 * t).exp()).collect();
        let res = |p: &[f64]| Some(ts.iter().zip(&ys).map(|(t, y)| p[0] * (-p[1] * t).exp() - y).collect());
        let r = levenberg_marquardt(res, &[1.0, 0.1], 200).unwrap();
        assert!((r.x[0] - 3.0).abs() < 1e-8 && (r.x[1] - 0.7).abs() < 1e-8, "{:?}", r.x);
        assert!(r.cost < 1e-20);
    }
}
