//! Invariant density of the frozen fast process.
//!
//! With `(x, μ)` frozen the fast generator is `L φ = f φ' + a φ''` and its
//! invariant density has the closed form
//!
//! ```text
//! π(y) = Z / a(y) · exp(∫₀^y f/a)
//! ```
//!
//! evaluated on a uniform grid. Models without a fast component get a
//! point mass at the initial fast state.

use crate::error::{Error, Result};
use crate::grid::{cumulative_corrected, derivative, trapezoid, UniformGrid};
use crate::model::{Measure, ModelSpec};
use serde::{Deserialize, Serialize};

/// How to lay out the fast grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nodes: usize,
    /// Defaults to `10·√(a_max/κ)`.
    pub half_width: Option<f64>,
    pub center: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { nodes: 2049, half_width: None, center: 0.0 }
    }
}

impl GridSpec {
    pub fn with_nodes(nodes: usize) -> Self {
        GridSpec { nodes, ..Default::default() }
    }
}

/// Largest `a` seen on a coarse scan around the origin.
pub fn estimate_a_max(model: &ModelSpec, x: f64, mu: &Measure) -> f64 {
    let a0 = model.a(x, 0.0, mu).max(1e-300);
    let span = 10.0 * (a0 / model.kappa).sqrt().max(1.0);
    (0..=256)
        .map(|k| -span + 2.0 * span * k as f64 / 256.0)
        .map(|y| model.a(x, y, mu))
        .fold(a0, f64::max)
}

/// Resolves a [`GridSpec`] for the model at `(x, μ)`.
pub fn resolve_grid(model: &ModelSpec, x: f64, mu: &Measure, spec: &GridSpec) -> Result<UniformGrid> {
    if spec.nodes < 5 {
        return Err(Error::InvalidArgument(format!("grid needs at least 5 nodes, got {}", spec.nodes)));
    }
    let a_max = estimate_a_max(model, x, mu);
    let scale = (a_max / model.kappa).sqrt();
    let half = match spec.half_width {
        Some(h) => {
            if h < 6.0 * scale {
                return Err(Error::InvalidArgument(format!(
                    "grid half-width {h} below 6·sqrt(a_max/kappa) = {}",
                    6.0 * scale
                )));
            }
            h
        }
        None => 10.0 * scale,
    };
    Ok(UniformGrid::symmetric(spec.center, half, spec.nodes))
}

#[derive(Debug, Clone)]
pub struct FrozenEquilibrium {
    /// `None` for the point-mass equilibrium of a model without fast dynamics.
    pub grid: Option<UniformGrid>,
    pub ys: Vec<f64>,
    pub density: Vec<f64>,
    /// Quadrature weights: `∫ g dπ ≈ Σ weights[i]·g(ys[i])`.
    pub weights: Vec<f64>,
    /// `ln Z` in `π = Z/a · exp(∫₀^y f/a)`.
    pub log_z: f64,
    /// Moments of order 0..=8.
    pub moments: [f64; 9],
    pub tail_mass: f64,
    pub f_vals: Vec<f64>,
    pub a_vals: Vec<f64>,
    pub x: f64,
    pub mu_fingerprint: u64,
}

impl FrozenEquilibrium {
    pub fn is_point_mass(&self) -> bool {
        self.grid.is_none()
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    /// `Σ weights·values` for values given at the nodes.
    pub fn average_nodal(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }
}

const TAIL_TOL: f64 = 1e-8;

pub fn invariant_density(model: &ModelSpec, x: f64, mu: &Measure, grid: &UniformGrid) -> Result<FrozenEquilibrium> {
    if model.degenerate {
        let y0 = model.eta_y;
        let mut moments = [0.0; 9];
        for (k, m) in moments.iter_mut().enumerate() {
            *m = y0.powi(k as i32);
        }
        return Ok(FrozenEquilibrium {
            grid: None,
            ys: vec![y0],
            density: vec![1.0],
            weights: vec![1.0],
            log_z: 0.0,
            moments,
            tail_mass: 0.0,
            f_vals: vec![model.f.eval(x, y0, mu)],
            a_vals: vec![model.a(x, y0, mu)],
            x,
            mu_fingerprint: mu.fingerprint(),
        });
    }
    let ys = grid.nodes();
    let n = grid.n;
    let mut a_vals = Vec::with_capacity(n);
    let mut f_vals = Vec::with_capacity(n);
    for &y in &ys {
        let a = model.a(x, y, mu);
        if !(a > 0.0) || !a.is_finite() {
            return Err(Error::Ellipticity { x, y, a });
        }
        a_vals.push(a);
        let f = model.f.eval(x, y, mu);
        if !f.is_finite() {
            return Err(Error::NonFinite { node: f_vals.len(), y });
        }
        f_vals.push(f);
    }
    let ratio: Vec<f64> = f_vals.iter().zip(&a_vals).map(|(f, a)| f / a).collect();
    let dratio = derivative(&ratio, grid.h);
    let cum = cumulative_corrected(&ratio, &dratio, grid.h);
    let j0 = grid.nearest(0.0);
    let base = cum[j0];
    let logp: Vec<f64> = (0..n).map(|i| cum[i] - base - a_vals[i].ln()).collect();
    let lmax = logp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let p: Vec<f64> = logp.iter().map(|l| (l - lmax).exp()).collect();
    let zt = trapezoid(&p, grid.h);
    let density: Vec<f64> = p.iter().map(|v| v / zt).collect();
    let log_z = -(lmax + zt.ln());

    let tail_left = if f_vals[0] > 0.0 { density[0] * a_vals[0] / f_vals[0] } else { f64::INFINITY };
    let tail_right = if f_vals[n - 1] < 0.0 { density[n - 1] * a_vals[n - 1] / -f_vals[n - 1] } else { f64::INFINITY };
    let tail_mass = tail_left + tail_right;
    if !(tail_mass <= TAIL_TOL) {
        return Err(Error::GridTooSmall { tail: tail_mass, lo: grid.lo, hi: grid.hi() });
    }
    let mut weights: Vec<f64> = density.iter().map(|d| d * grid.h).collect();
    weights[0] *= 0.5;
    weights[n - 1] *= 0.5;
    let mut moments = [0.0; 9];
    for (k, m) in moments.iter_mut().enumerate() {
        *m = ys.iter().zip(&weights).map(|(y, w)| w * y.powi(k as i32)).sum();
    }
    Ok(FrozenEquilibrium {
        grid: Some(*grid),
        ys,
        density,
        weights,
        log_z,
        moments,
        tail_mass,
        f_vals,
        a_vals,
        x,
        mu_fingerprint: mu.fingerprint(),
    })
}

/// Quadrature of `g` against the frozen equilibrium.
pub fn equilibrium_average<F: Fn(f64) -> f64>(g: F, eq: &FrozenEquilibrium) -> Result<f64> {
    let mut acc = 0.0;
    for (i, (&y, &w)) in eq.ys.iter().zip(&eq.weights).enumerate() {
        let v = g(y);
        if !v.is_finite() {
            return Err(Error::NonFinite { node: i, y });
        }
        acc += w * v;
    }
    Ok(acc)
}

/// `|∫ (f φ' + a φ'') dπ|` for a test function given through its first two derivatives.
pub fn invariance_residual<D1, D2>(eq: &FrozenEquilibrium, dphi: D1, d2phi: D2) -> Result<f64>
where
    D1: Fn(f64) -> f64,
    D2: Fn(f64) -> f64,
{
    let mut acc = 0.0;
    for i in 0..eq.len() {
        let y = eq.ys[i];
        let v = eq.f_vals[i] * dphi(y) + eq.a_vals[i] * d2phi(y);
        if !v.is_finite() {
            return Err(Error::NonFinite { node: i, y });
        }
        acc += eq.weights[i] * v;
    }
    Ok(acc.abs())
}
