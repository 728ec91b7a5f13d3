//! Acceptance suite: one pass/fail line per criterion.
//!
//! Run with `cargo test --test acceptance`; pass criterion numbers after `--`
//! to run a subset (e.g. `cargo test --test acceptance -- 6 7`).

use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::{Duration, Instant};

use slowfast::averaging::{averaged_coefficients, Averager, FrozenCell};
use slowfast::cli::studies::{fit_loglog, CouplingStudy, FluctuationStudy, RateStudy};
use slowfast::equilibrium::{invariance_residual, invariant_density, resolve_grid, GridSpec};
use slowfast::exec::Exec;
use slowfast::fluctuation::{TestDictionary, TestFunction};
use slowfast::mdp_rate::{
    assemble_limit_generator, control_forcing, dg_rate, optimal_control_from_target, quadratic_sup, solve_limit_ode,
    variational_cost, RateOptions,
};
use slowfast::model::{
    mean_field_ou, no_multiscale, ou_linear, ou_linear_with_kappa, two_scale_langevin, Measure, ModelSpec, TwoScaleParams,
};
use slowfast::poisson::corrector::{solve_doubled_corrector, CorrectorOptions, CorrectorVariant};
use slowfast::simulate::{simulate_averaged, simulate_multiscale, ControlField, StepPolicy};
use slowfast::fluctuation::FluctuationField;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    format!("error: {e}")
}

/// Halton points in `[-w, w]`.
fn halton(i: usize, base: usize, w: f64) -> f64 {
    let (mut f, mut r, mut k) = (1.0, 0.0, i + 1);
    while k > 0 {
        f /= base as f64;
        r += f * (k % base) as f64;
        k /= base;
    }
    w * (2.0 * r - 1.0)
}

fn crit1() -> Outcome {
    let m = ou_linear();
    let mu = Measure::point_mass(0.0);
    let grid = resolve_grid(&m, 0.0, &mu, &GridSpec::default()).map_err(fail)?;
    let eq = invariant_density(&m, 0.0, &mu, &grid).map_err(fail)?;
    let var = 1.0 / m.kappa; // a/κ with a = 1
    let node_err = eq
        .ys
        .iter()
        .zip(&eq.density)
        .map(|(y, p)| (p - (-y * y / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()).abs())
        .fold(0.0, f64::max);
    let inv = invariance_residual(&eq, |y| 2.0 * y, |_| 2.0).map_err(fail)?.abs();
    let norm = (eq.weights.iter().sum::<f64>() - 1.0).abs();
    check(
        node_err < 1e-6 && inv < 1e-6 && norm < 1e-10,
        format!("max |π - N(0,1)| = {node_err:.2e}, invariance residual {inv:.2e}, normalization defect {norm:.2e}"),
    )
}

fn crit2() -> Outcome {
    let mut worst: (f64, f64, f64) = (0.0, 0.0, 0.0);
    for kappa in [0.5, 1.0, 2.0] {
        let m = ou_linear_with_kappa(kappa);
        let mu = Measure::point_mass(0.0);
        let fc = FrozenCell::solve(&m, 0.0, &mu, &GridSpec::default()).map_err(fail)?;
        let pmax = fc.eq.density.iter().cloned().fold(0.0, f64::max);
        // compared on the nodes carrying the law (density above 1e-10 of its peak)
        let err = fc
            .cell
            .ys
            .iter()
            .zip(&fc.cell.u)
            .zip(&fc.eq.density)
            .filter(|(_, p)| **p >= 1e-10 * pmax)
            .map(|((y, u), _)| (u - y / kappa).abs())
            .fold(0.0, f64::max);
        let mean = fc.eq.average_nodal(&fc.cell.u).abs();
        worst = (worst.0.max(err), worst.1.max(mean), worst.2.max(fc.cell.residual));
    }
    check(
        worst.0 < 1e-6 && worst.1 < 1e-8 && worst.2 < 1e-6,
        format!("max |Φ - y/κ| = {:.2e}, |∫Φdπ| = {:.2e}, ODE residual {:.2e}", worst.0, worst.1, worst.2),
    )
}

fn builtins() -> Vec<ModelSpec> {
    vec![ou_linear(), two_scale_langevin(TwoScaleParams::default()), no_multiscale(), mean_field_ou()]
}

fn crit3() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut min_d = f64::INFINITY;
    let mut names = Vec::new();
    for m in builtins() {
        let grid = GridSpec::default();
        for i in 0..100 {
            let x = halton(i, 2, 3.0);
            let c = halton(i, 3, 2.0);
            let mu = Measure::empirical(vec![c - 0.7, c, c + 0.4, c + 1.1]);
            let a = averaged_coefficients(&m, x, &mu, &grid).map_err(|e| format!("{}: {e}", m.name))?;
            worst = worst.max((a.d_bar - a.d_bar_alt).abs());
            min_d = min_d.min(a.d_bar);
        }
        names.push(m.name.clone());
    }
    check(
        worst < 1e-6 && min_d >= 0.0,
        format!("max |D̄ - D̄_alt| = {worst:.2e}, min D̄ = {min_d:.4} over 100 probes of {}", names.join(", ")),
    )
}

fn crit4() -> Outcome {
    let m = ou_linear();
    let mu = Measure::empirical(vec![-0.5, 0.2, 1.0]);
    let mut d_err: f64 = 0.0;
    let mut g_err: f64 = 0.0;
    for x in [-2.0, 0.0, 0.7, 3.0] {
        let a = averaged_coefficients(&m, x, &mu, &GridSpec::default()).map_err(fail)?;
        d_err = d_err.max((a.d_bar - 1.5).abs());
        g_err = g_err.max(a.gamma_bar.abs());
    }
    let nm = no_multiscale();
    let mut exact = true;
    for x in [-1.3, 0.0, 0.4, 2.2] {
        let a = averaged_coefficients(&nm, x, &mu, &GridSpec::default()).map_err(fail)?;
        let c = nm.c.eval(x, 0.0, &mu);
        let s = nm.sigma.eval(x, 0.0, &mu);
        exact &= a.gamma_bar.to_bits() == c.to_bits() && a.d_bar.to_bits() == (0.5 * s * s).to_bits();
    }
    check(
        d_err < 1e-6 && g_err < 1e-8 && exact,
        format!("ou_linear |D̄ - 1.5| = {d_err:.2e}, |γ̄| = {g_err:.2e}; no_multiscale bitwise (c, σ²/2): {exact}"),
    )
}

fn crit5() -> Outcome {
    let m = ou_linear();
    let mu = Measure::point_mass(0.0);
    let s = solve_doubled_corrector(&m, 0.0, 0.0, &mu, &CorrectorVariant::Synthetic(Arc::new(|y| y)), &CorrectorOptions::default())
        .map_err(fail)?;
    let (ys, zs) = (s.grid.nodes(), s.grid_bar.nodes());
    let (n, nb) = (ys.len(), zs.len());
    let mut err: f64 = 0.0;
    for i in 0..n {
        for k in 0..nb {
            err = err.max((s.at(i, k) - ys[i] * zs[k] / 2.0).abs());
        }
    }
    // independent finite-difference application of the doubled generator
    let eq = invariant_density(&m, 0.0, &mu, &s.grid).map_err(fail)?;
    let eqb = invariant_density(&m, 0.0, &mu, &s.grid_bar).map_err(fail)?;
    let pmax = eq.density.iter().cloned().fold(0.0, f64::max);
    let (h, hb) = (s.grid.h, s.grid_bar.h);
    let mut fd: f64 = 0.0;
    for i in 1..n - 1 {
        for k in 1..nb - 1 {
            if eq.density[i] < 1e-8 * pmax || eqb.density[k] < 1e-8 * pmax {
                continue;
            }
            let (y, z) = (ys[i], zs[k]);
            let lap = |a: f64, b: f64, c: f64, h: f64| (a - 2.0 * b + c) / (h * h);
            let v = m.f.eval(0.0, y, &mu) * (s.at(i + 1, k) - s.at(i - 1, k)) / (2.0 * h)
                + m.a(0.0, y, &mu) * lap(s.at(i + 1, k), s.at(i, k), s.at(i - 1, k), h)
                + m.f.eval(0.0, z, &mu) * (s.at(i, k + 1) - s.at(i, k - 1)) / (2.0 * hb)
                + m.a(0.0, z, &mu) * lap(s.at(i, k + 1), s.at(i, k), s.at(i, k - 1), hb)
                + m.b.eval(0.0, y, &mu) * z;
            fd = fd.max(v.abs());
        }
    }
    let mut centering: f64 = 0.0;
    for i in 0..n {
        centering = centering.max((0..nb).map(|k| eqb.weights[k] * s.at(i, k)).sum::<f64>().abs());
    }
    for k in 0..nb {
        centering = centering.max((0..n).map(|i| eq.weights[i] * s.at(i, k)).sum::<f64>().abs());
    }
    let residual_ok = fd <= s.residual * (1.0 + 1e-6) + 1e-12 && s.residual < 1e-3;
    check(
        err < 1e-4 && residual_ok && centering < 1e-6,
        format!(
            "max |χ - yȳ/2| = {err:.2e}, residual reported {:.2e} / recomputed {fd:.2e}, double centering {centering:.2e}",
            s.residual
        ),
    )
}

const STUDY_EPS: [f64; 3] = [0.4, 0.2, 0.1];

fn crit6() -> Outcome {
    let model = mean_field_ou();
    let seeds: Vec<u64> = (1..=20).collect();
    let study = CouplingStudy {
        model: &model,
        eps: &STUDY_EPS,
        n: &[64, 128, 256],
        seeds: &seeds,
        t_end: 1.0,
        step: StepPolicy::default(),
        limit_factor: 8,
        weak_test: TestFunction::Tanh,
        grid: GridSpec::with_nodes(513),
    };
    let (_, fit) = study.run().map_err(fail)?;
    let s = fit.eps_slope.slope;
    check(
        (1.4..=2.6).contains(&s) && fit.n_decreasing_pairs >= 2,
        format!(
            "ε-slope {s:.3} ± {:.3} (errors {:?}); N-trend at ε = {} {:?}, {} of 3 pairs decreasing",
            fit.eps_slope.slope_se,
            fit.mean_coupling_error.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>(),
            fit.eps_ref,
            fit.n_trend.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>(),
            fit.n_decreasing_pairs
        ),
    )
}

fn crit7() -> Outcome {
    let model = ou_linear();
    let av = Averager::new(Arc::new(model.clone()), GridSpec::with_nodes(513));
    let step = StepPolicy::default();
    let (n, seeds) = (500usize, 20u64);
    let limits: Vec<_> = (1..=seeds)
        .map(|s| simulate_averaged(&av, n, 1.0, &step, s, Exec::default()))
        .collect::<Result<_, _>>()
        .map_err(fail)?;
    let mut gaps = Vec::new();
    for &eps in &STUDY_EPS {
        let mut acc = 0.0;
        for (k, s) in (1..=seeds).enumerate() {
            let p = simulate_multiscale(&model, n, eps, 1.0, &step, s, None, 1.0, Exec::default()).map_err(fail)?;
            let t = p.steps();
            acc += p.x[t].iter().zip(&limits[k].x[t]).map(|(a, b)| a.tanh() - b.tanh()).sum::<f64>();
        }
        gaps.push((acc / (n as f64 * seeds as f64)).abs());
    }
    let fit = fit_loglog(&STUDY_EPS, &gaps).map_err(fail)?;
    check(
        (0.5..=1.5).contains(&fit.slope),
        format!(
            "weak-gap slope {:.3} ± {:.3} from {:?} ({} samples per ε)",
            fit.slope,
            fit.slope_se,
            gaps.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>(),
            n as u64 * seeds
        ),
    )
}

fn crit8() -> Outcome {
    let model = ou_linear();
    let seeds: Vec<u64> = (1..=50).collect();
    let dict = TestDictionary::new(vec![TestFunction::Tanh]).map_err(fail)?;
    let ns = [64, 128, 256];
    let study = FluctuationStudy {
        model: &model,
        eps: 0.1,
        n: &ns,
        seeds: &seeds,
        t_end: 1.0,
        step: StepPolicy::default(),
        limit_factor: 10,
        dict: &dict,
        grid: GridSpec::with_nodes(513),
    };
    let (_, summary) = study.run(|_| 1.0).map_err(fail)?;
    let var: Vec<f64> = ns.iter().map(|&n| summary.iter().find(|s| s.n == n).unwrap().variance).collect();
    let monotone_growth = var.windows(2).all(|w| w[1] > w[0]);
    check(
        var[2] <= 1.5 * var[0] && !monotone_growth,
        format!("Var⟨Z_T, tanh⟩ at N = 64, 128, 256: {:?}", var.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>()),
    )
}

fn crit9() -> Outcome {
    let algebra = (quadratic_sup(2.0, 1.0) - 1.0).abs();
    let study = RateStudy {
        model: &ou_linear(),
        limit_particles: 256,
        t_end: 1.0,
        step: StepPolicy { k: 20.0, report_dt: 0.02 },
        seed: 11,
        dict: TestDictionary::hermite(16),
        opts: RateOptions::default(),
        grid: GridSpec::with_nodes(513),
    };
    let ctx = study.context().map_err(fail)?;
    let gen = assemble_limit_generator(&ctx).map_err(fail)?;
    let zero = FluctuationField::zeros(ctx.limit.times.clone(), 16);
    let i0 = dg_rate(&zero, &gen, &ctx).map_err(fail)?.value + variational_cost(&ctx, &ControlField::Zero).map_err(fail)?;
    let probes = [
        ControlField::Constant(1.0, 0.0),
        ControlField::Constant(0.5, -1.0),
        ControlField::feedback(|_, x, _| (x.tanh(), 0.0)),
        ControlField::feedback(|t, _, y| (1.0 - t, 0.5 * y)),
        ControlField::feedback(|_, x, y| ((-x * x).exp(), (0.3 * y).sin())),
    ];
    let mut bound_gap = f64::NEG_INFINITY;
    let mut rt_err: f64 = 0.0;
    let mut lines = Vec::new();
    for h in &probes {
        let z = solve_limit_ode(&gen, &control_forcing(&ctx, h).map_err(fail)?, 4).map_err(fail)?;
        let dg = dg_rate(&z, &gen, &ctx).map_err(fail)?.value;
        let cost = variational_cost(&ctx, h).map_err(fail)?;
        bound_gap = bound_gap.max(dg - cost);
        let oc = Arc::new(optimal_control_from_target(ctx.clone(), &z, &gen).map_err(fail)?);
        let opt_cost = variational_cost(&ctx, &ControlField::Optimal(oc)).map_err(fail)?;
        rt_err = rt_err.max((opt_cost - dg).abs() / dg);
        lines.push(format!("{dg:.4}/{cost:.4}/{opt_cost:.4}"));
    }
    check(
        algebra < 1e-12 && i0 == 0.0 && bound_gap <= 1e-3 && rt_err < 0.05,
        format!(
            "F²/4D defect {algebra:.1e}; I(0) = {i0}; max(I_DG - I_o) = {bound_gap:.2e}; round-trip rel. error {rt_err:.2e} (DG/cost/h̃-cost: {})",
            lines.join(", ")
        ),
    )
}

fn crit10() -> Outcome {
    let model = ou_linear();
    let bound = 3.0 * 1.0 / model.kappa;
    let n = 64;
    let a_n = (n as f64).powf(-0.25);
    let mut worst: f64 = 0.0;
    for &eps in &STUDY_EPS {
        for h in [ControlField::Zero, ControlField::Constant(1.0, 1.0)] {
            let p = simulate_multiscale(&model, n, eps, 1.0, &StepPolicy::default(), 3, Some(&h), a_n, Exec::default())
                .map_err(fail)?;
            let ys = p.y.as_ref().unwrap();
            let m = ys.iter().map(|r| r.iter().map(|y| y * y).sum::<f64>() / n as f64).fold(0.0, f64::max);
            worst = worst.max(m);
        }
    }
    check(worst <= bound, format!("sup_t mean Ỹ² = {worst:.4} (bound {bound})"))
}

fn run_cli(dir: &std::path::Path, sub: &str, workers: &str, config: &str) -> Result<(), String> {
    let cfg = dir.join(format!("{sub}.json"));
    std::fs::write(&cfg, config).map_err(fail)?;
    let st = Command::new(env!("CARGO_BIN_EXE_slowfast"))
        .args([sub, cfg.to_str().unwrap()])
        .env("SFMV_WORKERS", workers)
        .status()
        .map_err(fail)?;
    if st.success() {
        Ok(())
    } else {
        Err(format!("`slowfast {sub}` exited with {st}"))
    }
}

fn csv_bodies(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv") {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn crit11() -> Outcome {
    let tmp = tempfile::tempdir().map_err(fail)?;
    let mut runs = Vec::new();
    for (tag, workers) in [("a", "1"), ("b", "1"), ("c", "3")] {
        let out = tmp.path().join(tag);
        for (sub, extra) in [
            ("simulate", r#""control": {"kind": "constant", "h1": 0.5, "h2": 0.5}"#),
            ("fluctuate", r#""fluctuate": {"limit_factor": 2}"#),
        ] {
            let cfg = format!(
                r#"{{"model": {{"example": "mean_field_ou"}}, "eps": [0.3], "n": [16, 24], "t_end": 0.1, "seeds": [9, 4],
                   "grid": {{"nodes": 257, "center": 0.0}}, "output_dir": "{}", {extra}}}"#,
                out.display()
            );
            run_cli(tmp.path(), sub, workers, &cfg)?;
        }
        runs.push(csv_bodies(&out));
    }
    let files = runs[0].len();
    check(
        files > 0 && runs[0] == runs[1] && runs[0] == runs[2],
        format!("{files} CSV files byte-identical across reruns and worker counts 1 and 3"),
    )
}

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Duration,
    run: fn() -> Outcome,
}

fn main() -> ExitCode {
    let secs = Duration::from_secs;
    let all = [
        Criterion { id: 1, name: "equilibrium correctness", limit: secs(1), run: crit1 },
        Criterion { id: 2, name: "cell-problem closed form", limit: secs(1), run: crit2 },
        Criterion { id: 3, name: "diffusion two-form equality", limit: secs(10), run: crit3 },
        Criterion { id: 4, name: "homogenized constants", limit: secs(1), run: crit4 },
        Criterion { id: 5, name: "doubled corrector", limit: secs(30), run: crit5 },
        Criterion { id: 6, name: "coupling rate", limit: secs(600), run: crit6 },
        Criterion { id: 7, name: "weak averaging rate", limit: secs(600), run: crit7 },
        Criterion { id: 8, name: "fluctuation boundedness", limit: secs(600), run: crit8 },
        Criterion { id: 9, name: "rate-function identities", limit: secs(300), run: crit9 },
        Criterion { id: 10, name: "moment stability", limit: secs(300), run: crit10 },
        Criterion { id: 11, name: "determinism", limit: secs(60), run: crit11 },
    ];
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for c in all.iter().filter(|c| wanted.is_empty() || wanted.contains(&c.id)) {
        let start = Instant::now();
        let outcome = (c.run)();
        let took = start.elapsed();
        let (ok, detail) = match outcome {
            Ok(d) if took <= c.limit => (true, d),
            Ok(d) => (false, format!("{d}; runtime {:.1} s over the {} s budget", took.as_secs_f64(), c.limit.as_secs())),
            Err(d) => (false, d),
        };
        if !ok {
            failed += 1;
        }
        println!(
            "{} criterion {:>2} {} ({:.2} s): {}",
            if ok { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            took.as_secs_f64(),
            detail
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
