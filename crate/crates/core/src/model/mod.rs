//! Composite latent time-series models: sums of independent white noise,
//! quantization noise, random walk, drift, AR(1) and ARMA(p, q) components.
//!
//! Parameters are stored as one flat vector `theta`, the concatenation of the
//! component parameters in declaration order:
//!
//! | component | parameters                           |
//! |-----------|--------------------------------------|
//! | `WN`      | `sigma2`                             |
//! | `QN`      | `q2`                                 |
//! | `RW`      | `gamma2`                             |
//! | `DR`      | `omega`                              |
//! | `AR1`     | `rho`, `nu2`                         |
//! | `ARMA`    | `ar1..arP`, `ma1..maQ`, `nu2`        |
//!
//! ARMA follows `X[t] - sum ar_i X[t-i] = e[t] + sum ma_j e[t-j]`.

mod acf;
mod parse;
mod simulate;
mod theory;
mod transform;

pub use acf::{arma_acf, arma_psi_weights};
pub use parse::{parse_model, ParsedModel};
pub use simulate::{simulate, stream_rng};
pub use theory::{jacobian, theoretical_wv, theoretical_wv_sdf, FilterBank};
pub use transform::{ar_to_pacf, pacf_to_ar};

use serde::Serialize;
use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Component {
    WhiteNoise,
    Quantization,
    RandomWalk,
    Drift,
    Ar1,
    Arma { p: usize, q: usize },
}

/// How a parameter is constrained and transformed for optimization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ParamKind {
    /// Strictly positive; optimized on the log scale.
    Variance,
    /// Autoregressive coefficient of a stationary polynomial.
    Ar,
    /// Moving-average coefficient of an invertible polynomial.
    Ma,
    /// Unconstrained real.
    Real,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamSlot {
    /// Fully qualified name, e.g. `AR1_2.rho`.
    pub name: String,
    pub component: usize,
    pub kind: ParamKind,
}

impl Component {
    pub fn n_params(&self) -> usize {
        match self {
            Component::WhiteNoise | Component::Quantization | Component::RandomWalk | Component::Drift => 1,
            Component::Ar1 => 2,
            Component::Arma { p, q } => p + q + 1,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Component::WhiteNoise => "WN".into(),
            Component::Quantization => "QN".into(),
            Component::RandomWalk => "RW".into(),
            Component::Drift => "DR".into(),
            Component::Ar1 => "AR1".into(),
            Component::Arma { p, q } => format!("ARMA({p},{q})"),
        }
    }

    fn short_label(&self) -> &'static str {
        match self {
            Component::WhiteNoise => "WN",
            Component::Quantization => "QN",
            Component::RandomWalk => "RW",
            Component::Drift => "DR",
            Component::Ar1 => "AR1",
            Component::Arma { .. } => "ARMA",
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        match self {
            Component::WhiteNoise => vec!["sigma2".into()],
            Component::Quantization => vec!["q2".into()],
            Component::RandomWalk => vec!["gamma2".into()],
            Component::Drift => vec!["omega".into()],
            Component::Ar1 => vec!["rho".into(), "nu2".into()],
            Component::Arma { p, q } => (1..=*p)
                .map(|i| format!("ar{i}"))
                .chain((1..=*q).map(|i| format!("ma{i}")))
                .chain(std::iter::once("nu2".to_string()))
                .collect(),
        }
    }

    pub fn param_kinds(&self) -> Vec<ParamKind> {
        match self {
            Component::WhiteNoise | Component::Quantization | Component::RandomWalk => vec![ParamKind::Variance],
            Component::Drift => vec![ParamKind::Real],
            Component::Ar1 => vec![ParamKind::Ar, ParamKind::Variance],
            Component::Arma { p, q } => std::iter::repeat(ParamKind::Ar)
                .take(*p)
                .chain(std::iter::repeat(ParamKind::Ma).take(*q))
                .chain(std::iter::once(ParamKind::Variance))
                .collect(),
        }
    }

    /// Differencing order needed to make the component stationary.
    pub fn integration_order(&self) -> usize {
        match self {
            Component::RandomWalk | Component::Drift => 1,
            _ => 0,
        }
    }
}

/// A sum of mutually independent latent components.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct ModelSpec {
    components: Vec<Component>,
}

impl ModelSpec {
    pub fn new(components: Vec<Component>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Config("a model needs at least one component".into()));
        }
        for c in &components {
            if let Component::Arma { p, q } = c {
                if p + q > 20 {
                    return Err(Error::Config(format!("ARMA({p},{q}) order too large")));
                }
            }
        }
        Ok(Self { components })
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn n_params(&self) -> usize {
        self.components.iter().map(Component::n_params).sum()
    }

    pub fn is_stationary(&self) -> bool {
        self.components.iter().all(|c| c.integration_order() == 0)
    }

    /// Fully qualified parameter slots in `theta` order.
    pub fn param_slots(&self) -> Vec<ParamSlot> {
        let mut counts = std::collections::HashMap::new();
        for c in &self.components {
            *counts.entry(c.short_label()).or_insert(0usize) += 1;
        }
        let mut seen = std::collections::HashMap::new();
        let mut out = Vec::with_capacity(self.n_params());
        for (ci, c) in self.components.iter().enumerate() {
            let lbl = c.short_label();
            let idx = seen.entry(lbl).or_insert(0usize);
            *idx += 1;
            let prefix = if counts[lbl] > 1 { format!("{lbl}_{idx}") } else { lbl.to_string() };
            for (name, kind) in c.param_names().into_iter().zip(c.param_kinds()) {
                out.push(ParamSlot {
                    name: format!("{prefix}.{name}"),
                    component: ci,
                    kind,
                });
            }
        }
        out
    }

    pub fn param_names(&self) -> Vec<String> {
        self.param_slots().into_iter().map(|s| s.name).collect()
    }

    /// Splits `theta` into per-component slices.
    pub fn split<'a>(&'a self, theta: &'a [f64]) -> impl Iterator<Item = (Component, &'a [f64])> + 'a {
        let mut offset = 0;
        self.components.iter().map(move |c| {
            let n = c.n_params();
            let s = &theta[offset..offset + n];
            offset += n;
            (*c, s)
        })
    }

    /// Checks that `theta` lies in the interior of the parameter space.
    pub fn validate(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.n_params() {
            return Err(Error::Dimension {
                expected: self.n_params(),
                found: theta.len(),
            });
        }
        let slots = self.param_slots();
        for (i, v) in theta.iter().enumerate() {
            if !v.is_finite() || (slots[i].kind == ParamKind::Variance && *v <= 0.0) {
                return Err(Error::Boundary {
                    index: i,
                    name: slots[i].name.clone(),
                });
            }
        }
        let mut offset = 0;
        for (c, par) in self.split(theta) {
            let (ar, ma) = ar_ma(c, par);
            if !ar.is_empty() && ar_to_pacf(ar).is_none() {
                return Err(Error::Boundary {
                    index: offset,
                    name: format!("{} (non-stationary AR polynomial)", slots[offset].name),
                });
            }
            if !ma.is_empty() {
                let neg: Vec<f64> = ma.iter().map(|v| -v).collect();
                if ar_to_pacf(&neg).is_none() {
                    let idx = offset + ar.len();
                    return Err(Error::Boundary {
                        index: idx,
                        name: format!("{} (non-invertible MA polynomial)", slots[idx].name),
                    });
                }
            }
            offset += c.n_params();
        }
        Ok(())
    }

    /// Maps interior `theta` to unconstrained optimization coordinates.
    pub fn to_unconstrained(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.validate(theta)?;
        let mut out = Vec::with_capacity(theta.len());
        for (c, par) in self.split(theta) {
            let (ar, ma) = ar_ma(c, par);
            let pacf = ar_to_pacf(ar).expect("validated");
            out.extend(pacf.iter().map(|r| r.atanh()));
            let neg: Vec<f64> = ma.iter().map(|v| -v).collect();
            let pacf = ar_to_pacf(&neg).expect("validated");
            out.extend(pacf.iter().map(|r| r.atanh()));
            match c {
                Component::Drift => out.push(par[0]),
                _ => out.push(par[par.len() - 1].ln()),
            }
        }
        Ok(out)
    }

    /// Inverse of [`ModelSpec::to_unconstrained`].
    pub fn from_unconstrained(&self, u: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(u.len());
        let mut offset = 0;
        for c in &self.components {
            let n = c.n_params();
            let block = &u[offset..offset + n];
            let (p, q) = match c {
                Component::Ar1 => (1, 0),
                Component::Arma { p, q } => (*p, *q),
                _ => (0, 0),
            };
            let clamp = |v: f64| v.tanh().clamp(-1.0 + 1e-15, 1.0 - 1e-15);
            let pacf: Vec<f64> = block[..p].iter().map(|&v| clamp(v)).collect();
            out.extend(pacf_to_ar(&pacf));
            let pacf: Vec<f64> = block[p..p + q].iter().map(|&v| clamp(v)).collect();
            out.extend(pacf_to_ar(&pacf).into_iter().map(|v| -v));
            let last = block[n - 1];
            match c {
                Component::Drift => out.push(last),
                _ => out.push(last.clamp(-700.0, 700.0).exp()),
            }
            offset += n;
        }
        out
    }

    /// Reorders repeated AR1 components by decreasing `rho`; the model-implied
    /// wavelet variance is invariant under this relabelling.
    pub fn canonicalize(&self, theta: &[f64]) -> Vec<f64> {
        let mut blocks: Vec<Vec<f64>> = self.split(theta).map(|(_, p)| p.to_vec()).collect();
        let ar1_idx: Vec<usize> = self
            .components
            .iter()
            .enumerate()
            .filter(|(_, c)| **c == Component::Ar1)
            .map(|(i, _)| i)
            .collect();
        if ar1_idx.len() > 1 {
            let mut vals: Vec<Vec<f64>> = ar1_idx.iter().map(|&i| blocks[i].clone()).collect();
            vals.sort_by(|a, b| b[0].total_cmp(&a[0]));
            for (slot, v) in ar1_idx.iter().zip(vals) {
                blocks[*slot] = v;
            }
        }
        blocks.concat()
    }
}

/// AR and MA coefficient slices of a component's parameters.
pub(crate) fn ar_ma(c: Component, par: &[f64]) -> (&[f64], &[f64]) {
    match c {
        Component::Ar1 => (&par[..1], &[]),
        Component::Arma { p, q } => (&par[..p], &par[p..p + q]),
        _ => (&[], &[]),
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.components.iter().map(Component::label).collect();
        f.write_str(&parts.join(" + "))
    }
}

/// Renders `model` with parameter values in the text format accepted by [`parse_model`].
pub fn format_model(model: &ModelSpec, theta: &[f64]) -> String {
    let parts: Vec<String> = model
        .split(theta)
        .map(|(c, par)| match c {
            Component::WhiteNoise => format!("WN(sigma2={})", par[0]),
            Component::Quantization => format!("QN(q2={})", par[0]),
            Component::RandomWalk => format!("RW(gamma2={})", par[0]),
            Component::Drift => format!("DR(omega={})", par[0]),
            Component::Ar1 => format!("AR1(rho={}, nu2={})", par[0], par[1]),
            Component::Arma { p, q } => {
                let list = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
                format!(
                    "ARMA({p},{q}, ar=[{}], ma=[{}], nu2={})",
                    list(&par[..p]),
                    list(&par[p..p + q]),
                    par[p + q]
                )
            }
        })
        .collect();
    parts.join(" + ")
}
