//! Single-shot subcommands: frozen problems, raw simulation, assumption checks.

use serde::Serialize;

use super::config::ExperimentConfig;
use super::output::{fmt, Output};
use crate::averaging::{averaged_coefficients, FrozenCell};
use crate::equilibrium::{invariant_density, resolve_grid};
use crate::error::Result;
use crate::exec::{try_map_indexed, Exec};
use crate::model::{validate_assumptions, AssumptionReport};
use crate::simulate::simulate_multiscale;

/// `equilibrium.csv`: `x,y,density,normalization` where the last column is `Σ` of the quadrature weights.
pub fn run_equilibrium(cfg: &ExperimentConfig, out: &mut Output) -> Result<()> {
    let model = cfg.build_model()?;
    let mu = cfg.probe_measure(&model);
    let mut rows = Vec::new();
    for &x in &cfg.probe.x {
        let grid = resolve_grid(&model, x, &mu, &cfg.grid_spec())?;
        let eq = invariant_density(&model, x, &mu, &grid)?;
        let norm: f64 = eq.weights.iter().sum();
        for (y, d) in eq.ys.iter().zip(&eq.density) {
            rows.push(vec![fmt(x), fmt(*y), fmt(*d), fmt(norm)]);
        }
    }
    out.csv("equilibrium.csv", &["x", "y", "density", "normalization"], rows)
}

/// `cell.csv`: `x,y,phi,phi_y,phi_yy`.
pub fn run_cell(cfg: &ExperimentConfig, out: &mut Output) -> Result<()> {
    let model = cfg.build_model()?;
    let mu = cfg.probe_measure(&model);
    let mut rows = Vec::new();
    for &x in &cfg.probe.x {
        let fc = FrozenCell::solve(&model, x, &mu, &cfg.grid_spec())?;
        let c = &fc.cell;
        for i in 0..c.ys.len() {
            rows.push(vec![fmt(x), fmt(c.ys[i]), fmt(c.u[i]), fmt(c.u_y[i]), fmt(c.u_yy[i])]);
        }
    }
    out.csv("cell.csv", &["x", "y", "phi", "phi_y", "phi_yy"], rows)
}

/// `average.csv`: `x,gamma_bar,d_bar,d_bar_alt,alpha_tilde,alpha`.
pub fn run_average(cfg: &ExperimentConfig, out: &mut Output) -> Result<()> {
    let model = cfg.build_model()?;
    let mu = cfg.probe_measure(&model);
    let grid = cfg.grid_spec();
    let rows = try_map_indexed(Exec::default(), cfg.probe.x.len(), |k| -> Result<Vec<String>> {
        let x = cfg.probe.x[k];
        let a = averaged_coefficients(&model, x, &mu, &grid)?;
        Ok(vec![fmt(x), fmt(a.gamma_bar), fmt(a.d_bar), fmt(a.d_bar_alt), fmt(a.alpha_tilde), fmt(a.alpha)])
    })?;
    out.csv("average.csv", &["x", "gamma_bar", "d_bar", "d_bar_alt", "alpha_tilde", "alpha"], rows)
}

/// One path file per `(ε, N, seed)` plus `simulate.csv` with
/// `eps,n,seed,mean_x_T,var_x_T,sup_mean_y2`.
pub fn run_simulate(cfg: &ExperimentConfig, out: &mut Output) -> Result<()> {
    let model = cfg.build_model()?;
    let control = cfg.control.build()?;
    let mut summary = Vec::new();
    for (ei, &eps) in cfg.eps.iter().enumerate() {
        for &n in &cfg.n {
            for seed in cfg.sorted_seeds() {
                let h = if control.is_zero() { None } else { Some(&control) };
                let p = simulate_multiscale(&model, n, eps, cfg.t_end, &cfg.step, seed, h, cfg.a_n(n), Exec::default())?;
                let name = format!("paths/e{ei}_n{n}_s{seed}.csv");
                let mut w = out.create(&name)?;
                p.write_csv(&mut w)?;
                let last = &p.x[p.steps()];
                let mean = last.iter().sum::<f64>() / n as f64;
                let var = last.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
                let y2 = p
                    .y
                    .as_ref()
                    .map(|ys| ys.iter().map(|r| r.iter().map(|y| y * y).sum::<f64>() / n as f64).fold(0.0, f64::max))
                    .unwrap_or(0.0);
                summary.push(vec![fmt(eps), n.to_string(), seed.to_string(), fmt(mean), fmt(var), fmt(y2)]);
            }
        }
    }
    out.csv("simulate.csv", &["eps", "n", "seed", "mean_x_T", "var_x_T", "sup_mean_y2"], summary)
}

#[derive(Serialize)]
struct ValidateOutput<'a> {
    passed: bool,
    report: &'a AssumptionReport,
}

/// `validate.json`; returns whether every check passed.
pub fn run_validate(cfg: &ExperimentConfig, out: &mut Output) -> Result<bool> {
    let model = cfg.build_model()?;
    let report = validate_assumptions(&model, &cfg.validate);
    let passed = report.all_passed();
    out.json("validate.json", &ValidateOutput { passed, report: &report })?;
    Ok(passed)
}
