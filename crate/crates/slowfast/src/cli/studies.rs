//! Multi-seed convergence studies and the rate evaluation.
//!
//! Every driver returns rows in a fixed order (ε, then N, then ascending seed)
//! regardless of how the work was scheduled.

use std::sync::Arc;

use serde::Serialize;

use super::config::ExperimentConfig;
use super::output::{fmt, Output};
use crate::averaging::Averager;
use crate::equilibrium::GridSpec;
use crate::error::{Error, Result};
use crate::exec::{try_map_indexed, Exec};
use crate::fluctuation::{fluctuation_pairings, FluctuationField, TestDictionary, TestFunction};
use crate::mdp_rate::{assemble_limit_generator, rate_report, LimitContext, RateOptions, RateReport};
use crate::model::{mix64, ModelSpec};
use crate::simulate::{coupling_error, simulate_averaged, simulate_multiscale, ControlField, StepPolicy};

/// Seed of a limit ensemble that must not share noise with the particle system.
pub fn independent_seed(seed: u64) -> u64 {
    mix64(seed ^ 0x6C69_6D69_745F_6C61)
}

/// Least-squares fit of `ln y = intercept + slope · ln x`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope; `NaN` with fewer than three points.
    pub slope_se: f64,
}

pub fn fit_loglog(x: &[f64], y: &[f64]) -> Result<LogLogFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Shape(format!("need at least two (x, y) pairs, got {} and {}", x.len(), y.len())));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument("log-log fit needs positive finite data".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_se = if lx.len() > 2 {
        let rss: f64 = lx.iter().zip(&ly).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    Ok(LogLogFit { slope, intercept, slope_se })
}

#[derive(Debug, Clone, Serialize)]
pub struct CouplingRow {
    pub eps: f64,
    pub n: usize,
    pub seed: u64,
    /// `sup_t (1/N) Σ|X^ε_i - X̄_i|²` against the averaged limit driven by the same noise.
    pub coupling_error: f64,
    /// `(1/N) Σ [φ(X^ε_i(T)) - φ(X̄_i(T))]`.
    pub weak_gap: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CouplingFit {
    /// Largest N; the ε-fits use it.
    pub n_ref: usize,
    pub eps: Vec<f64>,
    pub mean_coupling_error: Vec<f64>,
    pub mean_weak_gap: Vec<f64>,
    pub eps_slope: LogLogFit,
    pub weak_slope: Option<LogLogFit>,
    /// Smallest ε; the N-trend uses it.
    pub eps_ref: f64,
    pub n: Vec<usize>,
    pub n_trend: Vec<f64>,
    /// Pairs `N < N'` (all of them, not only neighbours) whose error decreases.
    pub n_decreasing_pairs: usize,
}

pub struct CouplingStudy<'a> {
    pub model: &'a ModelSpec,
    pub eps: &'a [f64],
    pub n: &'a [usize],
    pub seeds: &'a [u64],
    pub t_end: f64,
    pub step: StepPolicy,
    pub limit_factor: usize,
    pub weak_test: TestFunction,
    pub grid: GridSpec,
}

impl CouplingStudy<'_> {
    pub fn run(&self) -> Result<(Vec<CouplingRow>, CouplingFit)> {
        if self.eps.is_empty() || self.n.is_empty() || self.seeds.is_empty() || self.limit_factor == 0 {
            return Err(Error::Config("coupling study needs ε values, N values, seeds and a positive limit factor".into()));
        }
        let model = Arc::new(self.model.clone());
        let jobs: Vec<(usize, u64)> = self.n.iter().flat_map(|&n| self.seeds.iter().map(move |&s| (n, s))).collect();
        // one job per (N, seed): the limit is shared by every ε
        let per_job = try_map_indexed(Exec::default(), jobs.len(), |k| -> Result<Vec<CouplingRow>> {
            let (n, seed) = jobs[k];
            let averager = Averager::new(model.clone(), self.grid);
            let limit = simulate_averaged(&averager, self.limit_factor * n, self.t_end, &self.step, seed, Exec::Sequential)?
                .truncate(n)?;
            let last = limit.steps();
            self.eps
                .iter()
                .map(|&eps| {
                    let p = simulate_multiscale(&model, n, eps, self.t_end, &self.step, seed, None, 1.0, Exec::Sequential)?;
                    let gap = p.x[last]
                        .iter()
                        .zip(&limit.x[last])
                        .map(|(a, b)| self.weak_test.value(*a) - self.weak_test.value(*b))
                        .sum::<f64>()
                        / n as f64;
                    Ok(CouplingRow { eps, n, seed, coupling_error: coupling_error(&p, &limit)?, weak_gap: gap })
                })
                .collect()
        })?;
        let mut rows: Vec<CouplingRow> = per_job.into_iter().flatten().collect();
        rows.sort_by(|a, b| {
            b.eps.total_cmp(&a.eps).then(a.n.cmp(&b.n)).then(a.seed.cmp(&b.seed))
        });
        let fit = self.fit(&rows)?;
        Ok((rows, fit))
    }

    fn fit(&self, rows: &[CouplingRow]) -> Result<CouplingFit> {
        let n_ref = *self.n.iter().max().unwrap();
        let eps_ref = self.eps.iter().cloned().fold(f64::INFINITY, f64::min);
        let mean = |pred: &dyn Fn(&CouplingRow) -> bool, val: &dyn Fn(&CouplingRow) -> f64| {
            let v: Vec<f64> = rows.iter().filter(|r| pred(r)).map(val).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        let mut eps = self.eps.to_vec();
        eps.sort_by(|a, b| b.total_cmp(a));
        eps.dedup();
        let ce: Vec<f64> = eps.iter().map(|&e| mean(&|r| r.n == n_ref && r.eps == e, &|r| r.coupling_error)).collect();
        let wg: Vec<f64> = eps.iter().map(|&e| mean(&|r| r.n == n_ref && r.eps == e, &|r| r.weak_gap)).collect();
        let abs_wg: Vec<f64> = wg.iter().map(|v| v.abs()).collect();
        let mut ns = self.n.to_vec();
        ns.sort_unstable();
        ns.dedup();
        let trend: Vec<f64> = ns.iter().map(|&n| mean(&|r| r.n == n && r.eps == eps_ref, &|r| r.coupling_error)).collect();
        let mut decreasing = 0;
        for i in 0..trend.len() {
            decreasing += trend[i + 1..].iter().filter(|&&v| v < trend[i]).count();
        }
        Ok(CouplingFit {
            n_ref,
            eps_slope: fit_loglog(&eps, &ce)?,
            weak_slope: fit_loglog(&eps, &abs_wg).ok(),
            eps: eps.clone(),
            mean_coupling_error: ce,
            mean_weak_gap: wg,
            eps_ref,
            n: ns,
            n_trend: trend,
            n_decreasing_pairs: decreasing,
        })
    }
}

/// `couple.csv` rows and `couple_fit.json`.
pub fn run_couple(cfg: &ExperimentConfig, out: &mut Output) -> Result<CouplingFit> {
    let distinct = |v: &[f64]| {
        let mut v = v.to_vec();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v.len()
    };
    let ns: Vec<f64> = cfg.n.iter().map(|&n| n as f64).collect();
    let seeds = cfg.sorted_seeds();
    if distinct(&cfg.eps) < 3 || distinct(&ns) < 3 || seeds.len() < 10 {
        return Err(Error::Config("coupling study needs at least 3 ε values, 3 N values and 10 seeds".into()));
    }
    let weak_test = TestFunction::parse(&cfg.couple.weak_test)
        .ok_or_else(|| Error::Config(format!("unknown test function `{}`", cfg.couple.weak_test)))?;
    let model = cfg.build_model()?;
    let study = CouplingStudy {
        model: &model,
        eps: &cfg.eps,
        n: &cfg.n,
        seeds: &seeds,
        t_end: cfg.t_end,
        step: cfg.step,
        limit_factor: cfg.couple.limit_factor,
        weak_test,
        grid: cfg.grid_spec(),
    };
    let (rows, fit) = study.run()?;
    out.csv(
        "couple.csv",
        &["eps", "n", "seed", "coupling_error", "weak_gap"],
        rows.iter().map(|r| vec![fmt(r.eps), r.n.to_string(), r.seed.to_string(), fmt(r.coupling_error), fmt(r.weak_gap)]),
    )?;
    out.csv(
        "couple_fit.csv",
        &["quantity", "slope", "slope_se"],
        std::iter::once(vec!["eps_slope".into(), fmt(fit.eps_slope.slope), fmt(fit.eps_slope.slope_se)]).chain(
            fit.weak_slope.iter().map(|w| vec!["weak_slope".into(), fmt(w.slope), fmt(w.slope_se)]),
        ),
    )?;
    out.json("couple_fit.json", &fit)?;
    Ok(fit)
}

#[derive(Debug, Clone, Serialize)]
pub struct FluctuationSummary {
    pub n: usize,
    pub member: String,
    /// Mean and unbiased variance of `⟨Z^N_T, φ⟩` across seeds.
    pub mean: f64,
    pub variance: f64,
}

pub struct FluctuationStudy<'a> {
    pub model: &'a ModelSpec,
    pub eps: f64,
    pub n: &'a [usize],
    pub seeds: &'a [u64],
    pub t_end: f64,
    pub step: StepPolicy,
    pub limit_factor: usize,
    pub dict: &'a TestDictionary,
    pub grid: GridSpec,
}

impl FluctuationStudy<'_> {
    /// Fields ordered by N then seed, and the per-(N, member) summary at `T`.
    pub fn run(&self, a_n: impl Fn(usize) -> f64 + Sync) -> Result<(Vec<(usize, u64, FluctuationField)>, Vec<FluctuationSummary>)> {
        if self.seeds.is_empty() || self.limit_factor == 0 {
            return Err(Error::Config("fluctuation study needs seeds and a positive limit factor".into()));
        }
        let model = Arc::new(self.model.clone());
        let jobs: Vec<(usize, u64)> = self.n.iter().flat_map(|&n| self.seeds.iter().map(move |&s| (n, s))).collect();
        let fields = try_map_indexed(Exec::default(), jobs.len(), |k| -> Result<(usize, u64, FluctuationField)> {
            let (n, seed) = jobs[k];
            let emp = simulate_multiscale(&model, n, self.eps, self.t_end, &self.step, seed, None, 1.0, Exec::Sequential)?;
            let averager = Averager::new(model.clone(), self.grid);
            let limit = simulate_averaged(
                &averager,
                self.limit_factor * n,
                self.t_end,
                &self.step,
                independent_seed(seed),
                Exec::Sequential,
            )?;
            Ok((n, seed, fluctuation_pairings(&emp, &limit, a_n(n), self.dict)?))
        })?;
        let mut summary = Vec::new();
        for &n in self.n {
            for (j, phi) in self.dict.members.iter().enumerate() {
                let v: Vec<f64> = fields.iter().filter(|f| f.0 == n).map(|f| *f.2.z[j].last().unwrap()).collect();
                let k = v.len() as f64;
                let mean = v.iter().sum::<f64>() / k;
                let variance = if v.len() > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0) } else { 0.0 };
                summary.push(FluctuationSummary { n, member: phi.name(), mean, variance });
            }
        }
        Ok((fields, summary))
    }
}

pub fn dictionary(cfg: &ExperimentConfig) -> Result<TestDictionary> {
    let mut members: Vec<TestFunction> = (0..cfg.dict_size).map(TestFunction::Hermite).collect();
    for name in &cfg.fluctuate.extra_members {
        members.push(TestFunction::parse(name).ok_or_else(|| Error::Config(format!("unknown test function `{name}`")))?);
    }
    TestDictionary::new(members)
}

/// Per-run pairing files and `fluctuate.csv` with `n,member,mean_T,var_T`.
pub fn run_fluctuate(cfg: &ExperimentConfig, out: &mut Output) -> Result<Vec<FluctuationSummary>> {
    let model = cfg.build_model()?;
    let dict = dictionary(cfg)?;
    let seeds = cfg.sorted_seeds();
    let study = FluctuationStudy {
        model: &model,
        eps: cfg.eps[0],
        n: &cfg.n,
        seeds: &seeds,
        t_end: cfg.t_end,
        step: cfg.step,
        limit_factor: cfg.fluctuate.limit_factor,
        dict: &dict,
        grid: cfg.grid_spec(),
    };
    let clt = cfg.fluctuate.clt;
    let (fields, summary) = study.run(|n| if clt { 1.0 } else { cfg.a_n(n) })?;
    for (n, seed, f) in &fields {
        let mut w = out.create(&format!("pairings/n{n}_s{seed}.csv"))?;
        f.write_csv(&mut w)?;
    }
    out.csv(
        "fluctuate.csv",
        &["n", "member", "mean_T", "var_T"],
        summary.iter().map(|s| vec![s.n.to_string(), s.member.clone(), fmt(s.mean), fmt(s.variance)]),
    )?;
    Ok(summary)
}

pub struct RateStudy<'a> {
    pub model: &'a ModelSpec,
    pub limit_particles: usize,
    pub t_end: f64,
    pub step: StepPolicy,
    pub seed: u64,
    pub dict: TestDictionary,
    pub opts: RateOptions,
    pub grid: GridSpec,
}

impl RateStudy<'_> {
    pub fn context(&self) -> Result<Arc<LimitContext>> {
        let averager = Arc::new(Averager::new(Arc::new(self.model.clone()), self.grid));
        let limit = simulate_averaged(&averager, self.limit_particles, self.t_end, &self.step, self.seed, self.opts.exec)?;
        Ok(Arc::new(LimitContext::new(averager, limit, self.dict.clone(), self.opts)?))
    }
}

/// `rate.json` (the report) and `rate_intervals.csv` with `t0,t1,dg_density,argmax`.
pub fn run_rate(cfg: &ExperimentConfig, out: &mut Output) -> Result<RateReport> {
    let model = cfg.build_model()?;
    let o = &cfg.rate;
    let study = RateStudy {
        model: &model,
        limit_particles: o.limit_particles,
        t_end: cfg.t_end,
        step: cfg.step,
        seed: cfg.sorted_seeds()[0],
        dict: TestDictionary::hermite(cfg.dict_size),
        opts: RateOptions {
            x_nodes: o.x_nodes,
            galerkin_tol: o.galerkin_tol,
            pinv_rtol: o.pinv_rtol,
            ..RateOptions::default()
        },
        grid: cfg.grid.unwrap_or(GridSpec::with_nodes(513)),
    };
    let ctx = study.context()?;
    let gen = assemble_limit_generator(&ctx)?;
    let control: ControlField = cfg.control.build()?;
    let report = rate_report(ctx, &gen, &control, &cfg.control.label(), o.ode_substeps)?;
    out.json("rate.json", &report)?;
    out.csv(
        "rate_intervals.csv",
        &["t0", "t1", "dg_density", "argmax"],
        report.per_interval.iter().enumerate().map(|(s, v)| {
            vec![
                fmt(report.times[s]),
                fmt(report.times[s + 1]),
                fmt(*v),
                report.argmax[s].map(|k| k.to_string()).unwrap_or_default(),
            ]
        }),
    )?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loglog_recovers_power_law() {
        let x = [0.4, 0.2, 0.1];
        let y: Vec<f64> = x.iter().map(|e: &f64| 3.0 * e.powi(2)).collect();
        let f = fit_loglog(&x, &y).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12);
        assert!((f.intercept - 3f64.ln()).abs() < 1e-12);
        assert!(f.slope_se < 1e-6);
        assert!(fit_loglog(&x, &[1.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn independent_seeds_differ() {
        assert_ne!(independent_seed(1), 1);
        assert_ne!(independent_seed(1), independent_seed(2));
    }
}
