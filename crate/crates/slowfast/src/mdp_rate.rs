//! Moderate-deviation rate machinery on a test-function dictionary.
//!
//! The limit fluctuation `Z` solves, for every test function,
//!
//! ```text
//! d⟨Z, φ⟩/dt = ⟨Z, L̄_ν φ⟩ + E[∫(σh₁ + (τ₁h₁ + τ₂h₂)Φ_y) dπ · φ'(X)]
//! L̄_ν φ(x) = γ̄φ'(x) + D̄φ''(x) + ∫(δγ̄/δm(z,ν)[x] φ'(z) + δD̄/δm(z,ν)[x] φ''(z)) ν(dz)
//! ```
//!
//! with `ν = 𝓛(X_s)` realized by an averaged-limit ensemble. Writing
//! `L̄φ_j ≈ Σ_k M_jk φ_k` turns this into a linear ODE for `z_j = ⟨Z, φ_j⟩`.
//! The Dawson-Gärtner form is `¼∫ sup_φ ⟨Ż - L̄*Z, φ⟩² / E[D̄ φ'(X)²] dt`;
//! on the dictionary span the sup is `¼ Fᵀ G⁺ F` with `G = E[D̄ φ'φ'ᵀ]`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::averaging::{AveragedValues, Averager, Nodal};
use crate::error::{Error, Result};
use crate::exec::{try_map_indexed, Exec};
use crate::fluctuation::{FluctuationField, TestDictionary};
use crate::grid::{trapezoid, UniformGrid};
use crate::model::{AveragedLfd, Measure};
use crate::simulate::{ControlField, EnsemblePath};

#[derive(Debug, Clone, Copy)]
pub struct RateOptions {
    /// Nodes of the x-grid used to project `L̄φ_j` onto the dictionary.
    pub x_nodes: usize,
    /// Defaults to `√(2J+1) + 6`, past the turning point of the top Hermite member.
    pub x_half_width: Option<f64>,
    /// Relative L² tolerance of the Galerkin expansion.
    pub galerkin_tol: f64,
    /// Eigenvalues below `pinv_rtol · λ_max` are dropped from pseudo-inverses.
    /// The interval residual carries an O(Δ²) quadrature error, so keeping
    /// much smaller eigenvalues amplifies it.
    pub pinv_rtol: f64,
    /// Members `j < J - core_margin` must meet the Galerkin tolerance; the top
    /// members of a Hermite dictionary always leak out of the span.
    pub core_margin: usize,
    pub exec: Exec,
}

impl Default for RateOptions {
    fn default() -> Self {
        RateOptions {
            x_nodes: 481,
            x_half_width: None,
            galerkin_tol: 1e-3,
            pinv_rtol: 1e-5,
            core_margin: 2,
            exec: Exec::default(),
        }
    }
}

/// Everything the rate computations read from the limit ensemble.
pub struct LimitContext {
    pub averager: Arc<Averager>,
    pub limit: EnsemblePath,
    pub dict: TestDictionary,
    pub opts: RateOptions,
    pub(crate) measures: Vec<Measure>,
    /// `[s][m]`.
    pub(crate) avg: Vec<Vec<AveragedValues>>,
    /// `[s][m][j]`: `φ_j'(X_m(s))` and `φ_j''(X_m(s))`.
    pub(crate) d1: Vec<Vec<Vec<f64>>>,
    pub(crate) d2: Vec<Vec<Vec<f64>>>,
}

impl LimitContext {
    pub fn new(averager: Arc<Averager>, limit: EnsemblePath, dict: TestDictionary, opts: RateOptions) -> Result<Self> {
        if dict.is_empty() {
            return Err(Error::InvalidArgument("empty dictionary".into()));
        }
        let measures: Vec<Measure> = (0..limit.times.len()).map(|s| limit.measure(s)).collect();
        let avg = try_map_indexed(opts.exec, limit.times.len(), |s| {
            limit.x[s].iter().map(|&x| averager.averaged(x, &measures[s])).collect::<Result<Vec<_>>>()
        })?;
        let deriv = |k: usize| -> Vec<Vec<Vec<f64>>> {
            limit
                .x
                .iter()
                .map(|row| row.iter().map(|&x| dict.members.iter().map(|p| p.deriv(k, x)).collect()).collect())
                .collect()
        };
        let (d1, d2) = (deriv(1), deriv(2));
        Ok(LimitContext { averager, limit, dict, opts, measures, avg, d1, d2 })
    }

    pub fn slices(&self) -> usize {
        self.limit.times.len()
    }

    pub fn members(&self) -> usize {
        self.dict.len()
    }

    pub fn measure(&self, s: usize) -> &Measure {
        &self.measures[s]
    }

    pub fn averaged_at(&self, s: usize) -> &[AveragedValues] {
        &self.avg[s]
    }

    fn x_grid(&self) -> UniformGrid {
        let j = self.members() as f64;
        let half = self.opts.x_half_width.unwrap_or((2.0 * j + 1.0).sqrt() + 6.0);
        let center = self.limit.x[0].iter().sum::<f64>() / self.limit.n as f64;
        UniformGrid::symmetric(center, half, self.opts.x_nodes)
    }

    /// `G_s = E[D̄ φ'φ'ᵀ]` over the limit ensemble.
    pub fn diffusion_gram(&self, s: usize) -> DMatrix<f64> {
        let j = self.members();
        let mut g = DMatrix::zeros(j, j);
        for (m, a) in self.avg[s].iter().enumerate() {
            let d = &self.d1[s][m];
            for p in 0..j {
                for q in p..j {
                    g[(p, q)] += a.d_bar * d[p] * d[q];
                }
            }
        }
        let n = self.limit.n as f64;
        for p in 0..j {
            for q in p..j {
                g[(p, q)] /= n;
                g[(q, p)] = g[(p, q)];
            }
        }
        g
    }

    /// Nonlocal part `∫(δγ̄/δm(z,ν)[x] φ_j'(z) + δD̄/δm(z,ν)[x] φ_j''(z)) ν(dz)` for every member.
    pub fn nonlocal_term(&self, s: usize, x: f64) -> Result<Vec<f64>> {
        let j = self.members();
        let model = self.averager.model();
        let nu = &self.measures[s];
        let atoms = &self.limit.x[s];
        let n = atoms.len() as f64;
        let mut out = vec![0.0; j];
        match &model.averaged_lfd {
            None if model.is_measure_free() => {}
            Some(AveragedLfd::Closed(f)) => {
                for (m, &z) in atoms.iter().enumerate() {
                    let (dg, dd) = f(z, nu, x);
                    for k in 0..j {
                        out[k] += dg * self.d1[s][m][k] + dd * self.d2[s][m][k];
                    }
                }
                out.iter_mut().for_each(|v| *v /= n);
            }
            Some(AveragedLfd::SlowForcing { .. }) => {
                for (m, &z) in atoms.iter().enumerate() {
                    let (dg, _) = self.averager.lfd(z, nu, x)?;
                    for k in 0..j {
                        out[k] += dg * self.d1[s][m][k];
                    }
                }
                out.iter_mut().for_each(|v| *v /= n);
            }
            None => {
                // d/dt ⟨ν, γ̄(·, ν_t)φ' + D̄(·, ν_t)φ''⟩ along ν_t = (1-t)ν + tδ_x
                let t = 1e-4;
                let eval = |mix: &Measure| -> Result<Vec<f64>> {
                    let mut acc = vec![0.0; j];
                    for (m, &z) in atoms.iter().enumerate() {
                        let a = self.averager.averaged(z, mix)?;
                        for k in 0..j {
                            acc[k] += a.gamma_bar * self.d1[s][m][k] + a.d_bar * self.d2[s][m][k];
                        }
                    }
                    Ok(acc)
                };
                let plus = eval(&nu.mixture_with_atom(x, t).unwrap())?;
                let minus = eval(&nu.mixture_with_atom(x, -t).unwrap())?;
                for k in 0..j {
                    out[k] = (plus[k] - minus[k]) / (2.0 * t * n);
                }
            }
        }
        Ok(out)
    }

    /// `L̄φ_j(x)` for every member at slice `s`.
    pub fn generator_action(&self, s: usize, x: f64) -> Result<Vec<f64>> {
        let a = self.averager.averaged(x, &self.measures[s])?;
        let nl = self.nonlocal_term(s, x)?;
        Ok(self
            .dict
            .members
            .iter()
            .zip(nl)
            .map(|(p, n)| a.gamma_bar * p.deriv(1, x) + a.d_bar * p.deriv(2, x) + n)
            .collect())
    }
}

/// Symmetric pseudo-inverse dropping eigenvalues below `rtol · λ_max`.
pub fn pseudo_inverse(a: &DMatrix<f64>, rtol: f64) -> (DMatrix<f64>, f64) {
    let eig = SymmetricEigen::new(a.clone());
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let cut = rtol * lmax;
    let n = a.nrows();
    let mut inv = DMatrix::zeros(n, n);
    let mut lmin_kept = f64::INFINITY;
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        if l > cut && l > 0.0 {
            let v = eig.eigenvectors.column(i);
            inv += (v * v.transpose()) / l;
            lmin_kept = lmin_kept.min(l);
        }
    }
    let cond = if lmin_kept.is_finite() { lmax / lmin_kept } else { f64::INFINITY };
    (inv, cond)
}

/// Galerkin expansion of the limit generator on each report slice.
#[derive(Debug, Clone)]
pub struct GeneratorMatrix {
    pub times: Vec<f64>,
    /// Row `j` holds the coefficients of `L̄φ_j`.
    pub m: Vec<DMatrix<f64>>,
    /// `[s][j]`: relative L² residual of the expansion.
    pub residuals: Vec<Vec<f64>>,
    /// Members checked against the tolerance.
    pub core: usize,
}

impl GeneratorMatrix {
    /// `max_{s, j < core}` residual.
    pub fn max_core_residual(&self) -> f64 {
        self.residuals.iter().flat_map(|r| r[..self.core].iter()).cloned().fold(0.0, f64::max)
    }
}

pub fn assemble_limit_generator(ctx: &LimitContext) -> Result<GeneratorMatrix> {
    let grid = ctx.x_grid();
    let xs = grid.nodes();
    let j = ctx.members();
    let basis: Vec<Vec<f64>> = ctx.dict.members.iter().map(|p| xs.iter().map(|&x| p.value(x)).collect()).collect();
    let ip = |a: &[f64], b: &[f64]| -> f64 {
        let v: Vec<f64> = a.iter().zip(b).map(|(p, q)| p * q).collect();
        trapezoid(&v, grid.h)
    };
    let mut gram = DMatrix::zeros(j, j);
    for p in 0..j {
        for q in p..j {
            gram[(p, q)] = ip(&basis[p], &basis[q]);
            gram[(q, p)] = gram[(p, q)];
        }
    }
    let (gram_inv, _) = pseudo_inverse(&gram, 1e-12);
    let core = j.saturating_sub(ctx.opts.core_margin).max(1.min(j));

    let slices = try_map_indexed(ctx.opts.exec, ctx.slices(), |s| -> Result<(DMatrix<f64>, Vec<f64>)> {
        // lphi[j][node]
        let mut lphi = vec![vec![0.0; xs.len()]; j];
        for (i, &x) in xs.iter().enumerate() {
            for (k, v) in ctx.generator_action(s, x)?.into_iter().enumerate() {
                lphi[k][i] = v;
            }
        }
        let mut m = DMatrix::zeros(j, j);
        let mut res = vec![0.0; j];
        for r in 0..j {
            if lphi[r].iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { node: r, y: f64::NAN });
            }
            let rhs = DVector::from_iterator(j, (0..j).map(|l| ip(&lphi[r], &basis[l])));
            let c = &gram_inv * rhs;
            let approx: Vec<f64> = (0..xs.len()).map(|i| (0..j).map(|k| c[k] * basis[k][i]).sum()).collect();
            let err: Vec<f64> = lphi[r].iter().zip(&approx).map(|(a, b)| a - b).collect();
            let norm = ip(&lphi[r], &lphi[r]).sqrt();
            res[r] = if norm > 0.0 { ip(&err, &err).sqrt() / norm } else { 0.0 };
            for k in 0..j {
                m[(r, k)] = c[k];
            }
        }
        Ok((m, res))
    })?;
    let (m, residuals): (Vec<_>, Vec<_>) = slices.into_iter().unzip();
    let gen = GeneratorMatrix { times: ctx.limit.times.clone(), m, residuals, core };
    let mut worst = (0.0, 0, 0);
    for (s, r) in gen.residuals.iter().enumerate() {
        for (jj, &v) in r[..core].iter().enumerate() {
            if v > worst.0 {
                worst = (v, jj, s);
            }
        }
    }
    if worst.0 > ctx.opts.galerkin_tol {
        return Err(Error::DictionaryTooSmall { member: worst.1, slice: worst.2, residual: worst.0, tol: ctx.opts.galerkin_tol });
    }
    Ok(gen)
}

/// RK4 for `z' = M(t) z + f(t)`, `z(0) = 0`, with `M, f` linear between
/// report slices and `substeps` steps per report interval.
pub fn solve_limit_ode(gen: &GeneratorMatrix, forcing: &[Vec<f64>], substeps: usize) -> Result<FluctuationField> {
    let j = gen.m.first().map(|m| m.nrows()).unwrap_or(0);
    let slices = gen.times.len();
    if forcing.len() != j || forcing.iter().any(|f| f.len() != slices) {
        return Err(Error::Shape(format!("forcing must be {j} × {slices}")));
    }
    if forcing.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite forcing".into()));
    }
    let substeps = substeps.max(1);
    let mut out = FluctuationField::zeros(gen.times.clone(), j);
    let mut z = DVector::zeros(j);
    let f_at = |s: usize| DVector::from_iterator(j, (0..j).map(|k| forcing[k][s]));
    for s in 0..slices - 1 {
        let (m0, m1) = (&gen.m[s], &gen.m[s + 1]);
        let (f0, f1) = (f_at(s), f_at(s + 1));
        let dt = (gen.times[s + 1] - gen.times[s]) / substeps as f64;
        let rhs = |th: f64, z: &DVector<f64>| -> DVector<f64> {
            let m = m0 * (1.0 - th) + m1 * th;
            m * z + &f0 * (1.0 - th) + &f1 * th
        };
        for q in 0..substeps {
            let th = q as f64 / substeps as f64;
            let dth = 1.0 / substeps as f64;
            let k1 = rhs(th, &z);
            let k2 = rhs(th + 0.5 * dth, &(&z + &k1 * (0.5 * dt)));
            let k3 = rhs(th + 0.5 * dth, &(&z + &k2 * (0.5 * dt)));
            let k4 = rhs(th + dth, &(&z + &k3 * dt));
            z += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        }
        if z.iter().any(|v| !v.is_finite() || v.abs() > 1e12) {
            return Err(Error::Unstable(format!("limit ODE blew up at t = {}", gen.times[s + 1])));
        }
        for k in 0..j {
            out.z[k][s + 1] = z[k];
        }
    }
    Ok(out)
}

/// Feedback control reconstructed from a target path:
/// `h̃₁ = (σ + τ₁Φ_y) h̄/(2D̄)`, `h̃₂ = τ₂Φ_y h̄/(2D̄)` with `h̄ = D̄ Σ_k c_k φ_k'`.
pub struct OptimalControl {
    pub ctx: Arc<LimitContext>,
    /// `[s][k]`.
    pub coeffs: Vec<Vec<f64>>,
}

impl std::fmt::Debug for OptimalControl {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "OptimalControl({} slices)", self.coeffs.len())
    }
}

impl OptimalControl {
    /// `Σ_k c_k(t) φ_k'(x) = h̄/D̄`, with coefficients linear in `t` between slices.
    pub fn potential(&self, t: f64, x: f64) -> f64 {
        let times = &self.ctx.limit.times;
        let s = times.partition_point(|&u| u <= t).clamp(1, times.len() - 1) - 1;
        let th = ((t - times[s]) / (times[s + 1] - times[s])).clamp(0.0, 1.0);
        self.ctx
            .dict
            .members
            .iter()
            .enumerate()
            .map(|(k, p)| ((1.0 - th) * self.coeffs[s][k] + th * self.coeffs[s + 1][k]) * p.deriv(1, x))
            .sum()
    }

    fn slice_of(&self, t: f64) -> usize {
        let times = &self.ctx.limit.times;
        let k = times.partition_point(|&u| u < t);
        if k == 0 {
            0
        } else if k >= times.len() || t - times[k - 1] < times[k] - t {
            (k - 1).min(times.len() - 1)
        } else {
            k
        }
    }

    /// `h̃(t, x, y)`; the fast corrector is taken at the nearest limit slice.
    pub fn eval(&self, t: f64, x: f64, y: f64) -> (f64, f64) {
        let s = self.slice_of(t);
        let mu = &self.ctx.measures[s];
        let model = self.ctx.averager.model();
        let g = 0.5 * self.potential(t, x);
        let phi_y = match self.ctx.averager.cell(x, mu) {
            Ok(fc) => match &fc.cell.grid {
                Some(grid) => grid.interp(&fc.cell.u_y, y).unwrap_or(0.0),
                None => 0.0,
            },
            Err(_) => f64::NAN,
        };
        let sg = model.sigma.eval(x, y, mu);
        let t1 = model.tau1.eval(x, y, mu);
        let t2 = model.tau2.eval(x, y, mu);
        ((sg + t1 * phi_y) * g, t2 * phi_y * g)
    }
}

/// Control values on the cell nodes of limit particle `m` at slice `s`,
/// together with the quadrature weights and `(σ, τ₁, τ₂, Φ_y)` nodal data.
struct NodalControl {
    weights: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
    sigma: Nodal,
    tau1: Nodal,
    tau2: Nodal,
    phi_y: Vec<f64>,
}

fn nodal_control(ctx: &LimitContext, h: &ControlField, s: usize, m: usize) -> Result<NodalControl> {
    let x = ctx.limit.x[s][m];
    let t = ctx.limit.times[s];
    let mu = &ctx.measures[s];
    let model = ctx.averager.model();
    let fc = ctx.averager.cell(x, mu)?;
    let eq = &fc.eq;
    let sigma = Nodal::of(&model.sigma, x, eq, mu);
    let tau1 = Nodal::of(&model.tau1, x, eq, mu);
    let tau2 = Nodal::of(&model.tau2, x, eq, mu);
    let phi_y = fc.cell.u_y.clone();
    let n = eq.len();
    let (mut h1, mut h2) = (vec![0.0; n], vec![0.0; n]);
    match h {
        ControlField::Zero => {}
        ControlField::Constant(a, b) => {
            h1.iter_mut().for_each(|v| *v = *a);
            h2.iter_mut().for_each(|v| *v = *b);
        }
        ControlField::Feedback(f) => {
            for i in 0..n {
                let (a, b) = f(t, x, eq.ys[i]);
                h1[i] = a;
                h2[i] = b;
            }
        }
        ControlField::Optimal(oc) => {
            let g = 0.5 * oc.potential(t, x);
            for i in 0..n {
                h1[i] = (sigma.at(i) + tau1.at(i) * phi_y[i]) * g;
                h2[i] = tau2.at(i) * phi_y[i] * g;
            }
        }
    }
    if h1.iter().chain(&h2).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("control not finite at t = {t}, x = {x}")));
    }
    Ok(NodalControl { weights: eq.weights.clone(), h1, h2, sigma, tau1, tau2, phi_y })
}

/// `f_j(s) = E[∫(σh₁ + (τ₁h₁ + τ₂h₂)Φ_y) dπ · φ_j'(X_s)]`, returned as `[j][s]`.
pub fn control_forcing(ctx: &LimitContext, h: &ControlField) -> Result<Vec<Vec<f64>>> {
    let j = ctx.members();
    let slices = ctx.slices();
    if h.is_zero() {
        return Ok(vec![vec![0.0; slices]; j]);
    }
    let per_slice = try_map_indexed(ctx.opts.exec, slices, |s| -> Result<Vec<f64>> {
        let mut acc = vec![0.0; j];
        for m in 0..ctx.limit.n {
            let nc = nodal_control(ctx, h, s, m)?;
            let k: f64 = (0..nc.weights.len())
                .map(|i| {
                    nc.weights[i]
                        * (nc.sigma.at(i) * nc.h1[i] + (nc.tau1.at(i) * nc.h1[i] + nc.tau2.at(i) * nc.h2[i]) * nc.phi_y[i])
                })
                .sum();
            for (a, d) in acc.iter_mut().zip(&ctx.d1[s][m]) {
                *a += k * d;
            }
        }
        let n = ctx.limit.n as f64;
        Ok(acc.into_iter().map(|v| v / n).collect())
    })?;
    Ok((0..j).map(|k| per_slice.iter().map(|row| row[k]).collect()).collect())
}

fn trapezoid_in_time(times: &[f64], v: &[f64]) -> f64 {
    times.windows(2).zip(v.windows(2)).map(|(t, a)| 0.5 * (t[1] - t[0]) * (a[0] + a[1])).sum()
}

/// `½ ∫₀ᵀ E[∫|h(s, X_s, y)|² π(dy)] ds`, trapezoid in time.
pub fn variational_cost(ctx: &LimitContext, h: &ControlField) -> Result<f64> {
    if h.is_zero() {
        return Ok(0.0);
    }
    let per_slice = try_map_indexed(ctx.opts.exec, ctx.slices(), |s| -> Result<f64> {
        let mut acc = 0.0;
        for m in 0..ctx.limit.n {
            let nc = nodal_control(ctx, h, s, m)?;
            acc += (0..nc.weights.len()).map(|i| nc.weights[i] * (nc.h1[i] * nc.h1[i] + nc.h2[i] * nc.h2[i])).sum::<f64>();
        }
        Ok(0.5 * acc / ctx.limit.n as f64)
    })?;
    Ok(trapezoid_in_time(&ctx.limit.times, &per_slice))
}

/// Interval residual `F̄ = (z(t+Δ) - z(t))/Δ - ½(M(t)z(t) + M(t+Δ)z(t+Δ))`,
/// one vector per report interval.
pub fn residual_forcing(z: &FluctuationField, gen: &GeneratorMatrix) -> Result<Vec<DVector<f64>>> {
    let j = z.members();
    if gen.times.len() != z.times.len() || gen.m.first().map(|m| m.nrows()) != Some(j) {
        return Err(Error::Shape("fluctuation field and generator disagree".into()));
    }
    if z.times.len() < 2 {
        return Err(Error::Shape("need at least two report slices".into()));
    }
    let col = |s: usize| DVector::from_iterator(j, (0..j).map(|k| z.z[k][s]));
    Ok((0..z.times.len() - 1)
        .map(|s| {
            let dt = z.times[s + 1] - z.times[s];
            let (z0, z1) = (col(s), col(s + 1));
            let mz = (&gen.m[s] * &z0 + &gen.m[s + 1] * &z1) * 0.5;
            (z1 - z0) / dt - mz
        })
        .collect())
}

/// `G` averaged over the endpoints of report interval `s`.
fn interval_gram(ctx: &LimitContext, s: usize) -> DMatrix<f64> {
    (ctx.diffusion_gram(s) + ctx.diffusion_gram(s + 1)) * 0.5
}

/// `sup_c (c F - c² D) = F²/(4D)`.
pub fn quadratic_sup(numerator: f64, denominator: f64) -> f64 {
    numerator * numerator / (4.0 * denominator)
}

/// Coefficients `c = Ḡ⁺F̄` per interval, carried to the slices by averaging
/// the neighbouring intervals.
pub fn optimal_control_from_target(ctx: Arc<LimitContext>, z: &FluctuationField, gen: &GeneratorMatrix) -> Result<OptimalControl> {
    for (s, row) in ctx.avg.iter().enumerate() {
        for (m, a) in row.iter().enumerate() {
            if a.d_bar < 1e-8 {
                return Err(Error::Degeneracy { x: ctx.limit.x[s][m], d_bar: a.d_bar });
            }
        }
    }
    let f = residual_forcing(z, gen)?;
    let mut per_interval: Vec<DVector<f64>> = Vec::with_capacity(f.len());
    for (s, fs) in f.iter().enumerate() {
        let (ginv, cond) = pseudo_inverse(&interval_gram(&ctx, s), ctx.opts.pinv_rtol);
        if !cond.is_finite() && fs.norm() > 0.0 {
            return Err(Error::Rank { slice: s, cond });
        }
        per_interval.push(ginv * fs);
    }
    let last = per_interval.len() - 1;
    let coeffs = (0..=per_interval.len())
        .map(|s| {
            let c = match s {
                0 => per_interval[0].clone(),
                s if s > last => per_interval[last].clone(),
                s => (&per_interval[s - 1] + &per_interval[s]) * 0.5,
            };
            c.iter().cloned().collect()
        })
        .collect();
    Ok(OptimalControl { ctx, coeffs })
}

#[derive(Debug, Clone, Serialize)]
pub struct DgReport {
    /// `¼Σ Δ F̄ᵀ Ḡ⁺ F̄`: the sup over the dictionary span, test functions
    /// piecewise constant between report slices.
    pub value: f64,
    /// `¼Σ Δ max_j F̄_j²/Ḡ_jj`: the sup over single members.
    pub single_member_value: f64,
    /// Rate density on each report interval.
    pub per_interval: Vec<f64>,
    /// Member attaining the single-member sup on each interval.
    pub argmax: Vec<Option<usize>>,
    /// Intervals where every denominator fell below `1e-10`.
    pub skipped: Vec<usize>,
}

pub fn dg_rate(z: &FluctuationField, gen: &GeneratorMatrix, ctx: &LimitContext) -> Result<DgReport> {
    let f = residual_forcing(z, gen)?;
    let mut per_interval = Vec::with_capacity(f.len());
    let mut argmax = Vec::with_capacity(f.len());
    let mut skipped = Vec::new();
    let (mut value, mut single_value) = (0.0, 0.0);
    for (s, fs) in f.iter().enumerate() {
        let dt = z.times[s + 1] - z.times[s];
        let g = interval_gram(ctx, s);
        let mut best: (f64, Option<usize>) = (0.0, None);
        for k in 0..fs.len() {
            if g[(k, k)] >= 1e-10 {
                let v = quadratic_sup(fs[k], g[(k, k)]);
                if best.1.is_none() || v > best.0 {
                    best = (v, Some(k));
                }
            }
        }
        if best.1.is_none() {
            skipped.push(s);
            per_interval.push(0.0);
            argmax.push(None);
            continue;
        }
        let (ginv, _) = pseudo_inverse(&g, ctx.opts.pinv_rtol);
        let span = (0.25 * fs.dot(&(ginv * fs))).max(best.0);
        per_interval.push(span);
        argmax.push(best.1);
        value += dt * span;
        single_value += dt * best.0;
    }
    Ok(DgReport { value, single_member_value: single_value, per_interval, argmax, skipped })
}

/// Summary of a rate evaluation for one control.
#[derive(Debug, Clone, Serialize)]
pub struct RateReport {
    pub control: String,
    pub variational_cost: f64,
    pub dg_rate: f64,
    pub dg_single_member: f64,
    /// Report times bounding the DG intervals.
    pub times: Vec<f64>,
    /// DG rate density on each report interval.
    pub per_interval: Vec<f64>,
    pub argmax: Vec<Option<usize>>,
    pub max_galerkin_residual: f64,
    /// Cost of the reconstructed optimal control and the DG rate of its path.
    pub round_trip_cost: Option<f64>,
    pub round_trip_dg: Option<f64>,
    pub round_trip_path_error: Option<f64>,
}

/// Runs the control through the limit equation, evaluates both rate forms
/// and the round trip through the reconstructed optimal control.
pub fn rate_report(ctx: Arc<LimitContext>, gen: &GeneratorMatrix, h: &ControlField, label: &str, substeps: usize) -> Result<RateReport> {
    let forcing = control_forcing(&ctx, h)?;
    let z = solve_limit_ode(gen, &forcing, substeps)?;
    let cost = variational_cost(&ctx, h)?;
    let dg = dg_rate(&z, gen, &ctx)?;
    let (rt_cost, rt_dg, rt_err) = if h.is_zero() {
        (Some(0.0), Some(0.0), Some(0.0))
    } else {
        let oc = Arc::new(optimal_control_from_target(ctx.clone(), &z, gen)?);
        let hc = ControlField::Optimal(oc);
        let f2 = control_forcing(&ctx, &hc)?;
        let z2 = solve_limit_ode(gen, &f2, substeps)?;
        let err = z.z.iter().flatten().zip(z2.z.iter().flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        (Some(variational_cost(&ctx, &hc)?), Some(dg_rate(&z2, gen, &ctx)?.value), Some(err))
    };
    Ok(RateReport {
        control: label.to_string(),
        variational_cost: cost,
        dg_rate: dg.value,
        dg_single_member: dg.single_member_value,
        times: ctx.limit.times.clone(),
        per_interval: dg.per_interval,
        argmax: dg.argmax,
        max_galerkin_residual: gen.max_core_residual(),
        round_trip_cost: rt_cost,
        round_trip_dg: rt_dg,
        round_trip_path_error: rt_err,
    })
}
