//! Centered Poisson (cell) problems for the frozen fast generator.
//!
//! In one dimension `(aπ u')' = π·Lu`, so `Lu = -B` with `∫B dπ = 0` has
//!
//! ```text
//! u'(y) = -1/(a π) ∫_{-∞}^y B π
//! ```
//!
//! and `u` follows by one more integration plus a centering shift. Left
//! tails are integrated from the left edge, right tails from the right edge,
//! which keeps the ratio accurate where π is tiny.

pub mod corrector;

pub use corrector::{solve_doubled_corrector, CorrectorOptions, CorrectorVariant, TensorCellSolution};

use crate::equilibrium::FrozenEquilibrium;
use crate::error::{Error, Result};
use crate::grid::{cumulative_corrected, cumulative_corrected_from_right, derivative, UniformGrid};
use crate::model::{Measure, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Inhomogeneity {
    /// `LΦ = -b`.
    Phi,
    /// `LΞ = -(F - ∫F dπ)`.
    Xi,
}

#[derive(Debug, Clone)]
pub struct CellSolution {
    pub grid: Option<UniformGrid>,
    pub ys: Vec<f64>,
    pub u: Vec<f64>,
    pub u_y: Vec<f64>,
    pub u_yy: Vec<f64>,
    /// Centered inhomogeneity `B` with `f u_y + a u_yy + B = 0`.
    pub rhs: Vec<f64>,
    pub tag: Inhomogeneity,
    /// Max over bulk interior nodes of `|f D₁u + a D₂u + B|` with central differences.
    pub residual: f64,
    pub x: f64,
    pub mu_fingerprint: u64,
}

impl CellSolution {
    /// Linear interpolation of `values` (given at the nodes) at `y`.
    pub fn interp(&self, values: &[f64], y: f64) -> Result<f64> {
        match &self.grid {
            Some(g) => g.interp(values, y),
            None => Ok(values[0]),
        }
    }
}

const CENTERING_TOL: f64 = 1e-6;

/// Solves `L u = -B` for nodal `B` that is already centered under `eq`.
fn solve_nodal(eq: &FrozenEquilibrium, rhs: Vec<f64>, tag: Inhomogeneity) -> Result<CellSolution> {
    let n = eq.len();
    let Some(grid) = eq.grid else {
        return Ok(CellSolution {
            grid: None,
            ys: eq.ys.clone(),
            u: vec![0.0; n],
            u_y: vec![0.0; n],
            u_yy: vec![0.0; n],
            rhs,
            tag,
            residual: 0.0,
            x: eq.x,
            mu_fingerprint: eq.mu_fingerprint,
        });
    };
    let h = grid.h;
    let pi = &eq.density;
    let (a, f) = (&eq.a_vals, &eq.f_vals);

    let bp: Vec<f64> = rhs.iter().zip(pi).map(|(b, p)| b * p).collect();
    let dbp = derivative(&bp, h);
    let left = cumulative_corrected(&bp, &dbp, h);
    let right = cumulative_corrected_from_right(&bp, &dbp, h);
    // Gaussian-type tails beyond the grid: ∫ Bπ ≈ Bπ·a/|f|
    let tail_l = if f[0] > 0.0 { bp[0] * a[0] / f[0] } else { 0.0 };
    let tail_r = if f[n - 1] < 0.0 { bp[n - 1] * a[n - 1] / -f[n - 1] } else { 0.0 };

    let mut mass = 0.0;
    let mut u_y = vec![0.0; n];
    for i in 0..n {
        mass += eq.weights[i];
        let s = if mass <= 0.5 { tail_l + left[i] } else { -(right[i] + tail_r) };
        u_y[i] = -s / (a[i] * pi[i]);
    }
    let u_yy: Vec<f64> = (0..n).map(|i| (-rhs[i] - f[i] * u_y[i]) / a[i]).collect();
    let mut u = cumulative_corrected(&u_y, &u_yy, h);
    let j0 = grid.nearest(0.0);
    let anchor = u[j0];
    u.iter_mut().for_each(|v| *v -= anchor);
    let shift = eq.average_nodal(&u);
    u.iter_mut().for_each(|v| *v -= shift);

    for (i, v) in u.iter().chain(&u_y).chain(&u_yy).enumerate() {
        if !v.is_finite() {
            let node = i % n;
            return Err(Error::NonFinite { node, y: eq.ys[node] });
        }
    }

    let pmax = pi.iter().cloned().fold(0.0, f64::max);
    let mut residual: f64 = 0.0;
    for i in 1..n - 1 {
        if pi[i] < 1e-10 * pmax {
            continue;
        }
        let d1 = (u[i + 1] - u[i - 1]) / (2.0 * h);
        let d2 = (u[i + 1] - 2.0 * u[i] + u[i - 1]) / (h * h);
        residual = residual.max((f[i] * d1 + a[i] * d2 + rhs[i]).abs());
    }
    Ok(CellSolution {
        grid: Some(grid),
        ys: eq.ys.clone(),
        u,
        u_y,
        u_yy,
        rhs,
        tag,
        residual,
        x: eq.x,
        mu_fingerprint: eq.mu_fingerprint,
    })
}

/// Corrector `Φ` with `LΦ = -b`, `∫Φ dπ = 0`.
pub fn solve_cell_problem(model: &ModelSpec, x: f64, mu: &Measure, eq: &FrozenEquilibrium) -> Result<CellSolution> {
    let mut b = Vec::with_capacity(eq.len());
    for (i, &y) in eq.ys.iter().enumerate() {
        let v = model.b.eval(x, y, mu);
        if !v.is_finite() {
            return Err(Error::NonFinite { node: i, y });
        }
        b.push(v);
    }
    let defect = eq.average_nodal(&b);
    if !(defect.abs() <= CENTERING_TOL) {
        return Err(Error::Centering { x, defect: defect.abs(), tol: CENTERING_TOL });
    }
    // remove the quadrature-level defect so the explicit formula closes exactly
    b.iter_mut().for_each(|v| *v -= defect);
    solve_nodal(eq, b, Inhomogeneity::Phi)
}

/// `Ξ` with `LΞ = -(F - ∫F dπ)`, `∫Ξ dπ = 0`.
pub fn solve_centered_poisson<F>(model: &ModelSpec, x: f64, mu: &Measure, eq: &FrozenEquilibrium, func: F) -> Result<CellSolution>
where
    F: Fn(f64, f64, &Measure) -> f64,
{
    let _ = model;
    let mut vals = Vec::with_capacity(eq.len());
    for (i, &y) in eq.ys.iter().enumerate() {
        let v = func(x, y, mu);
        if !v.is_finite() {
            return Err(Error::NonFinite { node: i, y });
        }
        vals.push(v);
    }
    let mean = eq.average_nodal(&vals);
    vals.iter_mut().for_each(|v| *v -= mean);
    solve_nodal(eq, vals, Inhomogeneity::Xi)
}

/// Nodal `(Φ_x, Φ_xy)` by central differences in `x` with step `1e-4·(1+|x|)`,
/// zero when the fast sector ignores `x`, or from the model's analytic callback.
pub fn cell_x_derivatives(model: &ModelSpec, x: f64, mu: &Measure, cell: &CellSolution) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = cell.ys.len();
    if let Some(cb) = &model.cell_x_derivatives {
        let (mut ux, mut uxy) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for &y in &cell.ys {
            let (a, b) = cb(x, y, mu);
            ux.push(a);
            uxy.push(b);
        }
        return Ok((ux, uxy));
    }
    let Some(grid) = cell.grid else {
        return Ok((vec![0.0; n], vec![0.0; n]));
    };
    if !model.fast_dependence().x {
        return Ok((vec![0.0; n], vec![0.0; n]));
    }
    let d = 1e-4 * (1.0 + x.abs());
    let solve = |xs: f64| {
        let eq = crate::equilibrium::invariant_density(model, xs, mu, &grid)?;
        solve_cell_problem(model, xs, mu, &eq)
    };
    let (p, m) = (solve(x + d)?, solve(x - d)?);
    let ux = (0..n).map(|i| (p.u[i] - m.u[i]) / (2.0 * d)).collect();
    let uxy = (0..n).map(|i| (p.u_y[i] - m.u_y[i]) / (2.0 * d)).collect();
    Ok((ux, uxy))
}

/// Nodal estimate of `∂_μΦ(x, ·, μ)[x_j]` through the empirical projection
/// `∂_{x_j} Φ(x, y, μ^N) = (1/N) ∂_μΦ(x, y, μ^N)[x_j]`, with a central
/// difference in the position of atom `j` (sorted order).
pub fn cell_measure_derivative(
    model: &ModelSpec,
    cell: &CellSolution,
    atoms: &Measure,
    j: usize,
    delta: Option<f64>,
) -> Result<Vec<f64>> {
    let pos = atoms
        .atoms()
        .ok_or_else(|| Error::Unsupported("measure derivative needs an empirical measure".into()))?;
    if j >= pos.len() {
        return Err(Error::InvalidArgument(format!("atom index {j} out of range")));
    }
    if atoms.fingerprint() != cell.mu_fingerprint {
        return Err(Error::InvalidArgument("cell was not solved at this measure".into()));
    }
    let n = cell.ys.len();
    let Some(grid) = cell.grid else {
        return Ok(vec![0.0; n]);
    };
    if !model.fast_dependence().mu {
        return Ok(vec![0.0; n]);
    }
    let w = atoms.weights().unwrap()[j];
    let d = delta.unwrap_or(1e-4 * (1.0 + pos[j].abs()));
    let solve = |s: f64| {
        let mu = atoms.shift_atom(j, s).unwrap();
        let eq = crate::equilibrium::invariant_density(model, cell.x, &mu, &grid)?;
        solve_cell_problem(model, cell.x, &mu, &eq)
    };
    let (p, m) = (solve(d)?, solve(-d)?);
    let out: Vec<f64> = (0..n).map(|i| (p.u[i] - m.u[i]) / (2.0 * d * w)).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Perturbation { atom: j });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::{invariant_density, resolve_grid, GridSpec};
    use crate::model::{mean_field_ou, ou_linear_with_kappa, two_scale_langevin, Coefficient, TwoScaleParams};

    fn setup(model: &ModelSpec, x: f64, mu: &Measure) -> FrozenEquilibrium {
        let g = resolve_grid(model, x, mu, &GridSpec::default()).unwrap();
        invariant_density(model, x, mu, &g).unwrap()
    }

    #[test]
    fn ou_corrector_is_linear() {
        for kappa in [0.5, 1.0, 2.0] {
            let m = ou_linear_with_kappa(kappa);
            let mu = Measure::point_mass(0.0);
            let eq = setup(&m, 0.0, &mu);
            let c = solve_cell_problem(&m, 0.0, &mu, &eq).unwrap();
            for (y, u) in c.ys.iter().zip(&c.u) {
                assert!((u - y / kappa).abs() < 1e-6 * (1.0 + y.abs()), "kappa {kappa} y {y} u {u}");
            }
            assert!(eq.average_nodal(&c.u).abs() < 1e-8);
            assert!(c.residual < 1e-6, "{}", c.residual);
        }
    }

    #[test]
    fn zero_drift_gives_zero_corrector() {
        let mut m = ou_linear_with_kappa(1.0);
        m.b = Coefficient::zero();
        let mu = Measure::point_mass(0.0);
        let eq = setup(&m, 0.0, &mu);
        let c = solve_cell_problem(&m, 0.0, &mu, &eq).unwrap();
        assert!(c.u.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn uncentered_drift_faults() {
        let mut m = ou_linear_with_kappa(1.0);
        m.b = Coefficient::constant(1.0);
        let mu = Measure::point_mass(0.0);
        let eq = setup(&m, 0.0, &mu);
        let e = solve_cell_problem(&m, 0.0, &mu, &eq).unwrap_err();
        assert!(matches!(e, Error::Centering { .. }));
    }

    #[test]
    fn two_scale_corrector_is_odd_and_consistent() {
        let m = two_scale_langevin(TwoScaleParams::default());
        let mu = Measure::point_mass(0.1);
        let eq = setup(&m, 0.1, &mu);
        let c = solve_cell_problem(&m, 0.1, &mu, &eq).unwrap();
        let n = c.u.len();
        let h = eq.grid.unwrap().h;
        for i in 0..n {
            assert!((c.u[i] + c.u[n - 1 - i]).abs() < 1e-8);
        }
        let fd = derivative(&c.u, h);
        let pmax = eq.density.iter().cloned().fold(0.0, f64::max);
        for i in 2..n - 2 {
            if eq.density[i] > 1e-8 * pmax {
                assert!((fd[i] - c.u_y[i]).abs() < 5.0 * h * h, "node {i}");
            }
        }
    }

    #[test]
    fn centered_poisson_quadratic() {
        let m = ou_linear_with_kappa(1.0);
        let mu = Measure::point_mass(0.0);
        let eq = setup(&m, 0.0, &mu);
        let xi = solve_centered_poisson(&m, 0.0, &mu, &eq, |_, y, _| y * y).unwrap();
        for i in 0..xi.ys.len() {
            let y = xi.ys[i];
            if y.abs() < 8.0 {
                assert!((xi.u[i] - 0.5 * (y * y - 1.0)).abs() < 1e-6, "y {y}");
                assert!((xi.u_y[i] - y).abs() < 1e-6);
            }
        }
        let k = solve_centered_poisson(&m, 0.0, &mu, &eq, |_, _, _| 3.0).unwrap();
        assert!(k.u.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn measure_derivative_mean_field_ou() {
        let m = mean_field_ou();
        let mu = Measure::empirical(vec![-0.7, 0.1, 0.4, 1.3]);
        let x = 0.2;
        let eq = setup(&m, x, &mu);
        let c = solve_cell_problem(&m, x, &mu, &eq).unwrap();
        for j in 0..4 {
            let d = cell_measure_derivative(&m, &c, &mu, j, None).unwrap();
            let zj = mu.atoms().unwrap()[j];
            let exact = -1.0 / zj.cosh().powi(2);
            for i in (0..d.len()).step_by(97) {
                if c.ys[i].abs() < 6.0 {
                    assert!((d[i] - exact).abs() < 1e-4 * exact.abs(), "{} vs {exact}", d[i]);
                }
            }
        }
    }

    #[test]
    fn measure_free_fast_sector_has_zero_measure_derivative() {
        let m = two_scale_langevin(TwoScaleParams::default());
        let mu = Measure::empirical(vec![-0.7, 0.1, 0.4]);
        let eq = setup(&m, 0.0, &mu);
        let c = solve_cell_problem(&m, 0.0, &mu, &eq).unwrap();
        let d = cell_measure_derivative(&m, &c, &mu, 1, None).unwrap();
        assert!(d.iter().all(|v| v.abs() < 1e-6));
    }
}
