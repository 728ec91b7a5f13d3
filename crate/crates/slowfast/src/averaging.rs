//! Local corrected coefficients and their averages against the frozen
//! equilibrium:
//!
//! ```text
//! γ₁ = bΦ_x + gΦ_y + στ₁Φ_xy,   γ = γ₁ + c
//! D₁ = bΦ + στ₁Φ_y,             D = D₁ + σ²/2
//! γ̄ = ∫γ dπ,  D̄ = ∫D dπ = ½∫([τ₂Φ_y]² + [σ + τ₁Φ_y]²) dπ
//! ```

use std::sync::Arc;

use dashmap::DashMap;
use serde::Serialize;

use crate::equilibrium::{invariant_density, resolve_grid, FrozenEquilibrium, GridSpec};
use crate::error::{Error, Result};
use crate::model::{AveragedLfd, Coefficient, Measure, ModelSpec};
use crate::poisson::{cell_x_derivatives, solve_cell_problem, CellSolution};

/// Equilibrium and corrector at one frozen `(x, μ)`.
#[derive(Debug, Clone)]
pub struct FrozenCell {
    pub eq: FrozenEquilibrium,
    pub cell: CellSolution,
    pub phi_x: Vec<f64>,
    pub phi_xy: Vec<f64>,
    /// `∫Φ_y dπ`.
    pub alpha_tilde: f64,
    /// `∫Φ_y² dπ`.
    pub alpha: f64,
}

impl FrozenCell {
    pub fn solve(model: &ModelSpec, x: f64, mu: &Measure, grid: &GridSpec) -> Result<Self> {
        let g = resolve_grid(model, x, mu, grid)?;
        let eq = invariant_density(model, x, mu, &g)?;
        let cell = solve_cell_problem(model, x, mu, &eq)?;
        let (phi_x, phi_xy) = cell_x_derivatives(model, x, mu, &cell)?;
        let alpha_tilde = eq.average_nodal(&cell.u_y);
        let alpha = eq.weights.iter().zip(&cell.u_y).map(|(w, v)| w * v * v).sum();
        Ok(FrozenCell { eq, cell, phi_x, phi_xy, alpha_tilde, alpha })
    }

    fn has_x_derivatives(&self) -> bool {
        self.phi_x.iter().chain(&self.phi_xy).any(|v| *v != 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LocalCoefficients {
    pub gamma: f64,
    pub gamma1: f64,
    pub d: f64,
    pub d1: f64,
}

/// `(γ, γ₁, D, D₁)` at `y`, with the corrector interpolated from the grid.
pub fn local_coefficients(model: &ModelSpec, fc: &FrozenCell, x: f64, y: f64, mu: &Measure) -> Result<LocalCoefficients> {
    let c = &fc.cell;
    let (u, u_y, u_x, u_xy) = match &c.grid {
        Some(_) => (
            c.interp(&c.u, y)?,
            c.interp(&c.u_y, y)?,
            c.interp(&fc.phi_x, y)?,
            c.interp(&fc.phi_xy, y)?,
        ),
        None => (0.0, 0.0, 0.0, 0.0),
    };
    let b = model.b.eval(x, y, mu);
    let g = model.g.eval(x, y, mu);
    let s = model.sigma.eval(x, y, mu);
    let t1 = model.tau1.eval(x, y, mu);
    let gamma1 = b * u_x + g * u_y + s * t1 * u_xy;
    let d1 = b * u + s * t1 * u_y;
    Ok(LocalCoefficients { gamma: gamma1 + model.c.eval(x, y, mu), gamma1, d: d1 + 0.5 * s * s, d1 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AveragedValues {
    pub gamma_bar: f64,
    pub d_bar: f64,
    pub d_bar_alt: f64,
    pub alpha_tilde: f64,
    pub alpha: f64,
    /// `∫(σ + τ₁Φ_y) dπ`, the loading of the slow noise in the limit.
    pub s1: f64,
}

impl AveragedValues {
    /// Loading of an independent noise making the limit diffusion `2D̄`.
    pub fn s2(&self) -> f64 {
        (2.0 * self.d_bar - self.s1 * self.s1).max(0.0).sqrt()
    }
}

/// Nodal values of a coefficient, or a single value when it ignores `y`.
pub(crate) enum Nodal {
    Const(f64),
    Nodes(Vec<f64>),
}

impl Nodal {
    pub(crate) fn of(coef: &Coefficient, x: f64, eq: &FrozenEquilibrium, mu: &Measure) -> Nodal {
        if !coef.dep.y {
            Nodal::Const(coef.eval(x, eq.ys[0], mu))
        } else {
            Nodal::Nodes(eq.ys.iter().map(|&y| coef.eval(x, y, mu)).collect())
        }
    }

    #[inline]
    pub(crate) fn at(&self, i: usize) -> f64 {
        match self {
            Nodal::Const(v) => *v,
            Nodal::Nodes(v) => v[i],
        }
    }
}

/// Averages at `(x, μ)` from a cell solved at the same fast parameters.
///
/// `fc` may have been solved at another `x` when the fast sector ignores `x`
/// (and likewise for `μ`); only the slow-sector coefficients are re-evaluated.
pub fn averaged_from_cell(model: &ModelSpec, fc: &FrozenCell, x: f64, mu: &Measure) -> Result<AveragedValues> {
    let eq = &fc.eq;
    let cell = &fc.cell;
    let w = &eq.weights;
    let n = eq.len();
    let q = |v: &dyn Fn(usize) -> f64| -> f64 { (0..n).map(|i| w[i] * v(i)).sum() };

    let b = Nodal::of(&model.b, x, eq, mu);
    let c = Nodal::of(&model.c, x, eq, mu);
    let g = Nodal::of(&model.g, x, eq, mu);
    let s = Nodal::of(&model.sigma, x, eq, mu);
    let t1 = Nodal::of(&model.tau1, x, eq, mu);
    let t2 = Nodal::of(&model.tau2, x, eq, mu);

    let c_bar = match &c {
        Nodal::Const(v) => *v,
        Nodal::Nodes(_) => q(&|i| c.at(i)),
    };
    let g_term = match &g {
        _ if model.g.is_zero() => 0.0,
        Nodal::Const(v) => v * fc.alpha_tilde,
        Nodal::Nodes(_) => q(&|i| g.at(i) * cell.u_y[i]),
    };
    let x_terms = if fc.has_x_derivatives() {
        q(&|i| b.at(i) * fc.phi_x[i] + s.at(i) * t1.at(i) * fc.phi_xy[i])
    } else {
        0.0
    };
    let gamma_bar = x_terms + g_term + c_bar;

    let sig2 = match &s {
        Nodal::Const(v) => v * v,
        Nodal::Nodes(_) => q(&|i| s.at(i) * s.at(i)),
    };
    let (d1, d_bar_alt, s1) = if eq.is_point_mass() {
        (0.0, 0.5 * sig2, s.at(0))
    } else {
        let d1 = q(&|i| b.at(i) * cell.u[i] + s.at(i) * t1.at(i) * cell.u_y[i]);
        let alt = 0.5
            * q(&|i| {
                let p = t2.at(i) * cell.u_y[i];
                let r = s.at(i) + t1.at(i) * cell.u_y[i];
                p * p + r * r
            });
        let s1 = q(&|i| s.at(i) + t1.at(i) * cell.u_y[i]);
        (d1, alt, s1)
    };
    let d_bar = d1 + 0.5 * sig2;
    if !gamma_bar.is_finite() || !d_bar.is_finite() {
        return Err(Error::NonFinite { node: 0, y: f64::NAN });
    }
    if d_bar < -1e-12 {
        return Err(Error::NegativeDiffusion { x, d_bar });
    }
    Ok(AveragedValues { gamma_bar, d_bar, d_bar_alt, alpha_tilde: fc.alpha_tilde, alpha: fc.alpha, s1 })
}

pub fn averaged_coefficients(model: &ModelSpec, x: f64, mu: &Measure, grid: &GridSpec) -> Result<AveragedValues> {
    let fc = FrozenCell::solve(model, x, mu, grid)?;
    averaged_from_cell(model, &fc, x, mu)
}

pub fn averaged_diffusion_alt(model: &ModelSpec, x: f64, mu: &Measure, grid: &GridSpec) -> Result<f64> {
    Ok(averaged_coefficients(model, x, mu, grid)?.d_bar_alt)
}

/// `∫(dc + dg·Φ_y) dπ` for a model whose measure dependence sits in `c, g`.
fn slow_forcing_lfd(lfd: &AveragedLfd, fc: &FrozenCell, x: f64, mu: &Measure, z: f64) -> f64 {
    let AveragedLfd::SlowForcing { dc, dg, reads_y } = lfd else { unreachable!() };
    let eq = &fc.eq;
    if !reads_y {
        let y0 = eq.ys[0];
        return dc(x, y0, mu, z) + dg(x, y0, mu, z) * fc.alpha_tilde;
    }
    (0..eq.len())
        .map(|i| eq.weights[i] * (dc(x, eq.ys[i], mu, z) + dg(x, eq.ys[i], mu, z) * fc.cell.u_y[i]))
        .sum()
}

/// Relative step of the numeric measure derivative.
const LFD_STEP: f64 = 1e-4;

/// `(δγ̄/δm(x, μ)[z], δD̄/δm(x, μ)[z])`.
///
/// Numerically this is `d/dt F((1-t)μ + tδ_z)` at `t = 0`, a central
/// difference in the mixture weight, so it equals `δF/δm[z] - ⟨μ, δF/δm⟩`
/// and is centered automatically.
pub fn lfd_averaged(model: &ModelSpec, x: f64, mu: &Measure, z: f64, grid: &GridSpec) -> Result<(f64, f64)> {
    match &model.averaged_lfd {
        Some(AveragedLfd::Closed(f)) => return Ok(f(x, mu, z)),
        Some(lfd @ AveragedLfd::SlowForcing { .. }) => {
            let fc = FrozenCell::solve(model, x, mu, grid)?;
            return Ok((slow_forcing_lfd(lfd, &fc, x, mu, z), 0.0));
        }
        None => {}
    }
    if model.is_measure_free() {
        return Ok((0.0, 0.0));
    }
    if !mu.is_empirical() {
        return Err(Error::Unsupported("numeric measure derivative needs an empirical measure".into()));
    }
    let t = LFD_STEP;
    let plus = mu.mixture_with_atom(z, t).unwrap();
    let minus = mu.mixture_with_atom(z, -t).unwrap();
    let ap = averaged_coefficients(model, x, &plus, grid)?;
    let am = averaged_coefficients(model, x, &minus, grid)?;
    Ok(((ap.gamma_bar - am.gamma_bar) / (2.0 * t), (ap.d_bar - am.d_bar) / (2.0 * t)))
}

/// Concurrent cache of frozen cells and averaged values.
///
/// Keys only carry the arguments the coefficients read: a model whose
/// `b, f, τ` ignore `x` and `μ` solves a single cell for the whole run.
pub struct Averager {
    model: Arc<ModelSpec>,
    grid: GridSpec,
    cells: DashMap<(u64, u64), Arc<FrozenCell>>,
    values: DashMap<(u64, u64), AveragedValues>,
}

fn cache_key(dep: crate::model::Dependence, x: f64, mu: &Measure) -> (u64, u64) {
    (if dep.x { x.to_bits() } else { 0 }, if dep.mu { mu.fingerprint() } else { 0 })
}

/// Entries kept before the cache is flushed.
const CACHE_LIMIT: usize = 1 << 14;

impl Averager {
    pub fn new(model: Arc<ModelSpec>, grid: GridSpec) -> Self {
        Averager { model, grid, cells: DashMap::new(), values: DashMap::new() }
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn cell(&self, x: f64, mu: &Measure) -> Result<Arc<FrozenCell>> {
        let key = cache_key(self.model.fast_dependence(), x, mu);
        if let Some(c) = self.cells.get(&key) {
            return Ok(c.clone());
        }
        let fc = Arc::new(FrozenCell::solve(&self.model, x, mu, &self.grid)?);
        if self.cells.len() >= CACHE_LIMIT {
            self.cells.clear();
        }
        self.cells.insert(key, fc.clone());
        Ok(fc)
    }

    pub fn averaged(&self, x: f64, mu: &Measure) -> Result<AveragedValues> {
        let key = cache_key(self.model.full_dependence(), x, mu);
        if let Some(v) = self.values.get(&key) {
            return Ok(*v);
        }
        let fc = self.cell(x, mu)?;
        let v = averaged_from_cell(&self.model, &fc, x, mu)?;
        if self.values.len() >= CACHE_LIMIT {
            self.values.clear();
        }
        self.values.insert(key, v);
        Ok(v)
    }

    pub fn lfd(&self, x: f64, mu: &Measure, z: f64) -> Result<(f64, f64)> {
        if let Some(lfd @ AveragedLfd::SlowForcing { .. }) = &self.model.averaged_lfd {
            let fc = self.cell(x, mu)?;
            return Ok((slow_forcing_lfd(lfd, &fc, x, mu, z), 0.0));
        }
        lfd_averaged(&self.model, x, mu, z, &self.grid)
    }

    pub fn clear(&self) {
        self.cells.clear();
        self.values.clear();
    }

    pub fn cached_cells(&self) -> usize {
        self.cells.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{mean_field_ou, no_multiscale, ou_linear, two_scale_langevin, TwoScaleParams};
    use approx::assert_abs_diff_eq;

    fn gs() -> GridSpec {
        GridSpec::default()
    }

    #[test]
    fn ou_linear_local_and_averaged() {
        let m = ou_linear();
        let mu = Measure::point_mass(0.0);
        let fc = FrozenCell::solve(&m, 0.0, &mu, &gs()).unwrap();
        let l = local_coefficients(&m, &fc, 0.0, 1.0, &mu).unwrap();
        assert_abs_diff_eq!(l.d1, 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(l.d, 1.5, epsilon = 1e-6);
        let a = averaged_coefficients(&m, 0.0, &mu, &gs()).unwrap();
        assert_abs_diff_eq!(a.d_bar, 1.5, epsilon = 1e-6);
        assert_abs_diff_eq!(a.d_bar_alt, 1.5, epsilon = 1e-6);
        assert_abs_diff_eq!(a.gamma_bar, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a.s1, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(a.s2(), 2f64.sqrt(), epsilon = 1e-6);
    }

    #[test]
    fn local_coefficients_reject_far_y() {
        let m = ou_linear();
        let mu = Measure::point_mass(0.0);
        let fc = FrozenCell::solve(&m, 0.0, &mu, &gs()).unwrap();
        let e = local_coefficients(&m, &fc, 0.0, 1e3, &mu).unwrap_err();
        assert!(matches!(e, Error::Extrapolation { .. }));
    }

    #[test]
    fn trivial_fast_sector_leaves_slow_coefficients() {
        let mut m = ou_linear();
        m.b = Coefficient::zero();
        m.c = Coefficient::new(crate::model::Dependence::new(true, false, false), |x, _, _| -x);
        let mu = Measure::point_mass(0.0);
        let fc = FrozenCell::solve(&m, 0.7, &mu, &gs()).unwrap();
        let l = local_coefficients(&m, &fc, 0.7, 0.3, &mu).unwrap();
        assert_eq!(l.gamma, -0.7);
        assert_eq!(l.d, 0.5);
    }

    #[test]
    fn two_scale_matches_closed_form() {
        let p = TwoScaleParams::default();
        let m = two_scale_langevin(p);
        let mu = Measure::empirical(vec![-1.0, 0.2, 0.9]);
        let x = 0.4;
        let a = averaged_coefficients(&m, x, &mu, &gs()).unwrap();
        let k = |u: f64| u * (-u * u / 2.0).exp();
        let w1: f64 = mu.atoms().unwrap().iter().map(|z| p.w1 * k(x - z)).sum::<f64>() / 3.0;
        let w2: f64 = mu.atoms().unwrap().iter().map(|z| p.w2 * k(x - z)).sum::<f64>() / 3.0;
        let drift = -(a.alpha_tilde * (p.v3 * x.sin()) + x.tanh() + a.alpha_tilde * w2 + w1);
        assert_abs_diff_eq!(a.gamma_bar, drift, epsilon = 1e-10);
        let aa = 0.5 * (p.tau1 * p.tau1 + p.tau2 * p.tau2);
        let diff = 0.5 * (p.sigma * p.sigma + 2.0 * a.alpha * aa + 2.0 * p.sigma * p.tau1 * a.alpha_tilde);
        assert_abs_diff_eq!(a.d_bar, diff, epsilon = 1e-6);
        assert_abs_diff_eq!(a.d_bar, a.d_bar_alt, epsilon = 1e-6);
    }

    #[test]
    fn no_multiscale_reduces_exactly() {
        let m = no_multiscale();
        let mu = Measure::empirical(vec![-1.0, 0.2, 0.9]);
        for x in [-2.0, 0.0, 0.35] {
            let a = averaged_coefficients(&m, x, &mu, &gs()).unwrap();
            let c = m.c.eval(x, m.eta_y, &mu);
            let s = m.sigma.eval(x, m.eta_y, &mu);
            assert!((a.gamma_bar - c).abs() < 1e-12);
            assert!((a.d_bar - 0.5 * s * s).abs() < 1e-12);
        }
    }

    #[test]
    fn lfd_two_scale_closed_form() {
        let p = TwoScaleParams::default();
        let m = two_scale_langevin(p);
        let mu = Measure::empirical(vec![-1.0, 0.2, 0.9]);
        let a = averaged_coefficients(&m, 0.3, &mu, &gs()).unwrap();
        let k = |u: f64| u * (-u * u / 2.0).exp();
        for z in [-1.5, 0.0, 0.8] {
            let (dg, dd) = lfd_averaged(&m, 0.3, &mu, z, &gs()).unwrap();
            let exact = -(a.alpha_tilde * p.w2 * k(0.3 - z) + p.w1 * k(0.3 - z));
            assert_abs_diff_eq!(dg, exact, epsilon = 1e-10);
            assert_eq!(dd, 0.0);
        }
    }

    #[test]
    fn lfd_measure_free_is_zero() {
        let m = ou_linear();
        let mu = Measure::empirical(vec![0.1, 0.2]);
        assert_eq!(lfd_averaged(&m, 0.0, &mu, 1.0, &gs()).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn lfd_numeric_matches_closed_callback() {
        let closed = mean_field_ou();
        let mut numeric = mean_field_ou();
        numeric.averaged_lfd = None;
        // the numeric path is centered; compare against the centered callback
        let mu = Measure::empirical(vec![-0.8, -0.1, 0.3, 0.9, 1.4]);
        let x = 0.25;
        let mean_cb: f64 = mu.atoms().unwrap().iter().map(|&z| {
            let Some(AveragedLfd::Closed(f)) = &closed.averaged_lfd else { unreachable!() };
            f(x, &mu, z).0
        }).sum::<f64>() / 5.0;
        for z in [-1.0, 0.0, 0.7] {
            let (cg, cd) = lfd_averaged(&closed, x, &mu, z, &gs()).unwrap();
            let (ng, nd) = lfd_averaged(&numeric, x, &mu, z, &gs()).unwrap();
            assert!((ng - (cg - mean_cb)).abs() < 1e-4 * (1.0 + cg.abs()), "{ng} vs {cg}");
            assert!((nd - cd).abs() < 1e-4, "{nd}");
        }
    }

    #[test]
    fn grid_measure_without_callback_is_unsupported() {
        let mut m = mean_field_ou();
        m.averaged_lfd = None;
        let g = crate::grid::UniformGrid::symmetric(0.0, 5.0, 101);
        let dens = g.nodes().iter().map(|y| (-y * y / 2.0).exp()).collect();
        let mu = Measure::grid_density(g, dens);
        let e = lfd_averaged(&m, 0.0, &mu, 0.3, &gs()).unwrap_err();
        assert!(matches!(e, Error::Unsupported(_)));
    }

    #[test]
    fn averager_reuses_cells_for_measure_free_fast_sector() {
        let m = Arc::new(two_scale_langevin(TwoScaleParams::default()));
        let av = Averager::new(m.clone(), gs());
        for (k, x) in [-1.0, 0.0, 0.5, 2.0].iter().enumerate() {
            let mu = Measure::empirical(vec![k as f64, 0.3]);
            let a = av.averaged(*x, &mu).unwrap();
            let b = averaged_coefficients(&m, *x, &mu, &gs()).unwrap();
            assert_abs_diff_eq!(a.gamma_bar, b.gamma_bar, epsilon = 1e-14);
        }
        assert_eq!(av.cached_cells(), 1);
    }
}
