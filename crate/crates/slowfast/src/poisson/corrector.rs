//! Doubled corrector `χ(y, ȳ) = ∫₀^∞ P_t b(x,·,μ)(y) · P̄_t G(ȳ) dt`, which
//! solves `(L ⊗ 1 + 1 ⊗ L̄) χ = -b ⊗ G` on the product of two frozen fast
//! spaces. Each factor is propagated separately by the one-dimensional
//! backward equation `∂_t u = f u_y + a u_yy`.

use std::sync::Arc;

use super::{cell_measure_derivative, solve_cell_problem};
use crate::equilibrium::{invariant_density, resolve_grid, FrozenEquilibrium, GridSpec};
use crate::error::{Error, Result};
use crate::grid::UniformGrid;
use crate::model::{Measure, ModelSpec};

#[derive(Clone)]
pub enum CorrectorVariant {
    /// `G = ∂_μΦ(x̄, ·, μ)[x]` with `x` the atom at this sorted index.
    Chi { atom: usize },
    /// `G = Φ(x̄, ·, μ)`.
    ChiTilde,
    /// User supplied `G(ȳ)`.
    Synthetic(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for CorrectorVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CorrectorVariant::Chi { atom } => write!(f, "Chi({atom})"),
            CorrectorVariant::ChiTilde => write!(f, "ChiTilde"),
            CorrectorVariant::Synthetic(_) => write!(f, "Synthetic"),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CorrectorOptions {
    pub grid: GridSpec,
    /// Defaults to `20/κ`.
    pub t_max: Option<f64>,
    /// Defaults to the stability bound `0.4 Δy² / a_max`.
    pub dt: Option<f64>,
    pub tail_tol: f64,
}

impl Default for CorrectorOptions {
    fn default() -> Self {
        CorrectorOptions { grid: GridSpec::with_nodes(257), t_max: None, dt: None, tail_tol: 1e-4 }
    }
}

#[derive(Debug, Clone)]
pub struct TensorCellSolution {
    pub grid: UniformGrid,
    pub grid_bar: UniformGrid,
    /// Row-major: `chi[i * grid_bar.n + k] = χ(y_i, ȳ_k)`.
    pub chi: Vec<f64>,
    pub x: f64,
    pub xbar: f64,
    pub t_max: f64,
    pub dt: f64,
    /// Estimate of the truncated `∫_T^∞` in sup norm.
    pub tail_estimate: f64,
    /// Max over bulk interior nodes of the finite-difference residual.
    pub residual: f64,
}

impl TensorCellSolution {
    pub fn at(&self, i: usize, k: usize) -> f64 {
        self.chi[i * self.grid_bar.n + k]
    }
}

/// `A u = f D₁u + a D₂u` with linear extrapolation at the two ends.
fn apply(f: &[f64], a: &[f64], u: &[f64], h: f64, out: &mut [f64]) {
    let n = u.len();
    for i in 1..n - 1 {
        let d1 = (u[i + 1] - u[i - 1]) / (2.0 * h);
        let d2 = (u[i + 1] - 2.0 * u[i] + u[i - 1]) / (h * h);
        out[i] = f[i] * d1 + a[i] * d2;
    }
    let d1l = (-3.0 * u[0] + 4.0 * u[1] - u[2]) / (2.0 * h);
    let d1r = (3.0 * u[n - 1] - 4.0 * u[n - 2] + u[n - 3]) / (2.0 * h);
    out[0] = f[0] * d1l;
    out[n - 1] = f[n - 1] * d1r;
}

struct Propagator<'a> {
    f: &'a [f64],
    a: &'a [f64],
    h: f64,
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl<'a> Propagator<'a> {
    fn new(eq: &'a FrozenEquilibrium, h: f64) -> Self {
        let n = eq.len();
        Propagator { f: &eq.f_vals, a: &eq.a_vals, h, k: std::array::from_fn(|_| vec![0.0; n]), tmp: vec![0.0; n] }
    }

    fn step(&mut self, u: &mut [f64], dt: f64) {
        let n = u.len();
        let (f, a, h) = (self.f, self.a, self.h);
        apply(f, a, u, h, &mut self.k[0]);
        for (s, c) in [(1usize, 0.5), (2, 0.5), (3, 1.0)] {
            for i in 0..n {
                self.tmp[i] = u[i] + c * dt * self.k[s - 1][i];
            }
            let (head, tail) = self.k.split_at_mut(s);
            let _ = head;
            apply(f, a, &self.tmp, h, &mut tail[0]);
        }
        for i in 0..n {
            u[i] += dt / 6.0 * (self.k[0][i] + 2.0 * self.k[1][i] + 2.0 * self.k[2][i] + self.k[3][i]);
        }
    }
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn solve_doubled_corrector(
    model: &ModelSpec,
    x: f64,
    xbar: f64,
    mu: &Measure,
    variant: &CorrectorVariant,
    opts: &CorrectorOptions,
) -> Result<TensorCellSolution> {
    if model.degenerate {
        return Err(Error::Unsupported("doubled corrector needs fast dynamics".into()));
    }
    let grid = resolve_grid(model, x, mu, &opts.grid)?;
    let grid_bar = resolve_grid(model, xbar, mu, &opts.grid)?;
    let eq = invariant_density(model, x, mu, &grid)?;
    let eq_bar = invariant_density(model, xbar, mu, &grid_bar)?;
    let (n, nb) = (grid.n, grid_bar.n);

    let mut p = Vec::with_capacity(n);
    for (i, &y) in eq.ys.iter().enumerate() {
        let v = model.b.eval(x, y, mu);
        if !v.is_finite() {
            return Err(Error::NonFinite { node: i, y });
        }
        p.push(v);
    }
    let defect = eq.average_nodal(&p);
    if defect.abs() > 1e-6 {
        return Err(Error::Centering { x, defect: defect.abs(), tol: 1e-6 });
    }
    p.iter_mut().for_each(|v| *v -= defect);
    let b0 = p.clone();

    let mut q: Vec<f64> = match variant {
        CorrectorVariant::Synthetic(g) => eq_bar.ys.iter().map(|&y| g(y)).collect(),
        CorrectorVariant::ChiTilde => solve_cell_problem(model, xbar, mu, &eq_bar)?.u,
        CorrectorVariant::Chi { atom } => {
            let cell = solve_cell_problem(model, xbar, mu, &eq_bar)?;
            cell_measure_derivative(model, &cell, mu, *atom, None)?
        }
    };
    if let Some(k) = q.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { node: k, y: eq_bar.ys[k] });
    }
    let g0 = q.clone();

    let a_max = eq.a_vals.iter().chain(&eq_bar.a_vals).cloned().fold(0.0, f64::max);
    let h = grid.h.min(grid_bar.h);
    let bound = 0.4 * h * h / a_max;
    let dt_req = opts.dt.unwrap_or(bound);
    if !(dt_req > 0.0) || dt_req > bound * (1.0 + 1e-12) {
        return Err(Error::Cfl { dt: dt_req, bound });
    }
    let t_max = opts.t_max.unwrap_or(20.0 / model.kappa);
    let steps = (t_max / dt_req).ceil().max(1.0) as usize;
    let dt = t_max / steps as f64;

    let mut chi = vec![0.0; n * nb];
    let accumulate = |chi: &mut [f64], p: &[f64], q: &[f64], w: f64| {
        for i in 0..n {
            let pi = w * p[i];
            if pi == 0.0 {
                continue;
            }
            let row = &mut chi[i * nb..(i + 1) * nb];
            for (c, qk) in row.iter_mut().zip(q) {
                *c += pi * qk;
            }
        }
    };
    let mut prop = Propagator::new(&eq, grid.h);
    let mut prop_bar = Propagator::new(&eq_bar, grid_bar.h);
    accumulate(&mut chi, &p, &q, 0.5 * dt);
    let mut norms = (sup(&p) * sup(&q), 0.0);
    for s in 1..=steps {
        prop.step(&mut p, dt);
        prop_bar.step(&mut q, dt);
        let w = if s == steps { 0.5 * dt } else { dt };
        accumulate(&mut chi, &p, &q, w);
        norms = (sup(&p) * sup(&q), norms.0);
    }
    if chi.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence("doubled corrector propagation".into()));
    }

    // exponential extrapolation of the truncated tail
    let (now, prev) = norms;
    let rate = if now > 0.0 && prev > now { (prev / now).ln() / dt } else { 0.0 };
    let tail_estimate = if now == 0.0 {
        0.0
    } else if rate > 0.0 {
        now / rate
    } else {
        now * t_max
    };
    if tail_estimate > opts.tail_tol {
        return Err(Error::HorizonTooShort { tail: tail_estimate, tol: opts.tail_tol });
    }

    // double centering
    let row_means: Vec<f64> = (0..n).map(|i| eq_bar.average_nodal(&chi[i * nb..(i + 1) * nb])).collect();
    let col_means: Vec<f64> = (0..nb)
        .map(|k| (0..n).map(|i| eq.weights[i] * chi[i * nb + k]).sum())
        .collect();
    let total = eq.average_nodal(&row_means);
    for i in 0..n {
        for k in 0..nb {
            chi[i * nb + k] += total - row_means[i] - col_means[k];
        }
    }

    let residual = tensor_residual(&eq, &eq_bar, &chi, &b0, &g0);
    Ok(TensorCellSolution { grid, grid_bar, chi, x, xbar, t_max, dt, tail_estimate, residual })
}

/// Max over bulk interior nodes of `|(L ⊗ 1 + 1 ⊗ L̄)χ + b ⊗ G|`, central differences.
pub(crate) fn tensor_residual(eq: &FrozenEquilibrium, eq_bar: &FrozenEquilibrium, chi: &[f64], b: &[f64], g: &[f64]) -> f64 {
    let (n, nb) = (eq.len(), eq_bar.len());
    let (h, hb) = (eq.grid.unwrap().h, eq_bar.grid.unwrap().h);
    let pmax = eq.density.iter().cloned().fold(0.0, f64::max);
    let pbmax = eq_bar.density.iter().cloned().fold(0.0, f64::max);
    let at = |i: usize, k: usize| chi[i * nb + k];
    let mut r: f64 = 0.0;
    for i in 1..n - 1 {
        if eq.density[i] < 1e-8 * pmax {
            continue;
        }
        for k in 1..nb - 1 {
            if eq_bar.density[k] < 1e-8 * pbmax {
                continue;
            }
            let dy = (at(i + 1, k) - at(i - 1, k)) / (2.0 * h);
            let dyy = (at(i + 1, k) - 2.0 * at(i, k) + at(i - 1, k)) / (h * h);
            let dz = (at(i, k + 1) - at(i, k - 1)) / (2.0 * hb);
            let dzz = (at(i, k + 1) - 2.0 * at(i, k) + at(i, k - 1)) / (hb * hb);
            let v = eq.f_vals[i] * dy + eq.a_vals[i] * dyy + eq_bar.f_vals[k] * dz + eq_bar.a_vals[k] * dzz + b[i] * g[k];
            r = r.max(v.abs());
        }
    }
    r
}
