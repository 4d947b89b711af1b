use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{ar_ma, Component, ModelSpec};
use crate::error::{Error, Result};

/// Random generator for `(seed, stream)`; distinct streams are independent.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normals(rng: &mut ChaCha8Rng, n: usize, sd: f64) -> impl Iterator<Item = f64> + '_ {
    (0..n).map(move |_| sd * rng.sample::<f64, _>(StandardNormal))
}

/// Simulates `n` observations of the sum of the model's components.
///
/// * `WN`: i.i.d. Gaussian.
/// * `QN`: first difference of i.i.d. uniform noise with variance `q2`, which
///   has the autocovariance `(2 q2, -q2, 0, ...)` used by the theory.
/// * `RW`: cumulative sum of Gaussian increments, starting from the first increment.
/// * `DR`: deterministic `omega * t`, `t = 0..n`.
/// * `AR1`: started from its stationary distribution.
/// * `ARMA`: zero initial state with `max(1000, 50 (p + q))` discarded samples.
pub fn simulate(model: &ModelSpec, theta: &[f64], n: usize, seed: u64, stream: u64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::Config("simulation length must be at least 1".into()));
    }
    model.validate(theta)?;
    let mut rng = stream_rng(seed, stream);
    let mut out = vec![0.0; n];
    for (c, par) in model.split(theta) {
        match c {
            Component::WhiteNoise => {
                for (o, e) in out.iter_mut().zip(normals(&mut rng, n, par[0].sqrt())) {
                    *o += e;
                }
            }
            Component::Quantization => {
                let half = (3.0 * par[0]).sqrt();
                let mut prev: f64 = rng.random_range(-half..half);
                for o in out.iter_mut() {
                    let z: f64 = rng.random_range(-half..half);
                    *o += z - prev;
                    prev = z;
                }
            }
            Component::RandomWalk => {
                let mut level = 0.0;
                for (o, e) in out.iter_mut().zip(normals(&mut rng, n, par[0].sqrt())) {
                    level += e;
                    *o += level;
                }
            }
            Component::Drift => {
                for (t, o) in out.iter_mut().enumerate() {
                    *o += par[0] * t as f64;
                }
            }
            Component::Ar1 => {
                let (rho, nu2) = (par[0], par[1]);
                let mut x = rng.sample::<f64, _>(StandardNormal) * (nu2 / (1.0 - rho * rho)).sqrt();
                let sd = nu2.sqrt();
                for (t, o) in out.iter_mut().enumerate() {
                    if t > 0 {
                        x = rho * x + sd * rng.sample::<f64, _>(StandardNormal);
                    }
                    *o += x;
                }
            }
            Component::Arma { p, q } => {
                let (ar, ma) = ar_ma(c, par);
                let burn = 1000usize.max(50 * (p + q));
                let total = n + burn;
                let e: Vec<f64> = normals(&mut rng, total, par[p + q].sqrt()).collect();
                let mut x = vec![0.0; total];
                for t in 0..total {
                    let mut v = e[t];
                    for (j, th) in ma.iter().enumerate() {
                        if t > j {
                            v += th * e[t - j - 1];
                        }
                    }
                    for (i, phi) in ar.iter().enumerate() {
                        if t > i {
                            v += phi * x[t - i - 1];
                        }
                    }
                    x[t] = v;
                }
                for (o, v) in out.iter_mut().zip(&x[burn..]) {
                    *o += v;
                }
            }
        }
    }
    Ok(out)
}
