//! Sampled checks of the standing assumptions.
//!
//! None of the checks proves anything; each one looks for a witness that
//! breaks the corresponding inequality on quasi-random probes in a box.

use super::{Measure, ModelSpec};
use crate::equilibrium::{equilibrium_average, invariant_density, resolve_grid, GridSpec};
use crate::exec;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssumptionBudget {
    pub probes: usize,
    /// Half-width of the probe box for (x, y₁, y₂) and the probe-measure centres.
    pub box_half_width: f64,
    pub lambda_minus: f64,
    pub lambda_plus: f64,
    /// Dissipativity constant; defaults to 0.9·(2κ − 2·Lip_y(η)).
    pub beta: Option<f64>,
    pub centering_probes: usize,
    pub centering_tol: f64,
    /// Ratio allowed between outer and inner growth envelopes.
    pub growth_ratio: f64,
}

impl Default for AssumptionBudget {
    fn default() -> Self {
        AssumptionBudget {
            probes: 10_000,
            box_half_width: 8.0,
            lambda_minus: 1e-3,
            lambda_plus: 1e3,
            beta: None,
            centering_probes: 32,
            centering_tol: 1e-6,
            growth_ratio: 1.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub x: f64,
    pub y1: f64,
    pub y2: f64,
    /// Centre of the probe measure.
    pub mu_center: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssumptionCheck {
    pub name: String,
    pub passed: bool,
    /// Worst margin found; negative iff the check failed.
    pub margin: f64,
    pub witness: Option<Witness>,
    pub note: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub model: String,
    pub beta: f64,
    pub lip_eta: f64,
    pub sup_eta: f64,
    pub checks: Vec<AssumptionCheck>,
}

impl AssumptionReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

struct Probe {
    x: f64,
    y1: f64,
    y2: f64,
    center: f64,
    mu: Measure,
}

fn probes(n: usize, l: f64) -> Vec<Probe> {
    let spread: Vec<f64> = (0..16).map(|k| -1.5 + 3.0 * k as f64 / 15.0).collect();
    exec::map_indexed(n, |k| {
        let i = k as u64 + 1;
        let s = |b| -l + 2.0 * l * radical_inverse(i, b);
        let center = s(7);
        Probe {
            x: s(2),
            y1: s(3),
            y2: s(5),
            center,
            mu: Measure::empirical(spread.iter().map(|q| center + q).collect()),
        }
    })
}

struct Worst {
    margin: f64,
    witness: Option<Witness>,
}

impl Worst {
    fn new() -> Self {
        Worst { margin: f64::INFINITY, witness: None }
    }
    fn offer(&mut self, margin: f64, p: &Probe) {
        // NaN margins count as failures
        let m = if margin.is_nan() { f64::NEG_INFINITY } else { margin };
        if m < self.margin {
            self.margin = m;
            self.witness = Some(Witness { x: p.x, y1: p.y1, y2: p.y2, mu_center: p.center });
        }
    }
    fn into_check(self, name: &str, note: String) -> AssumptionCheck {
        AssumptionCheck { name: name.into(), passed: self.margin >= 0.0, margin: self.margin, witness: self.witness, note }
    }
}

pub fn validate_assumptions(model: &ModelSpec, budget: &AssumptionBudget) -> AssumptionReport {
    assert!(budget.probes > 0 && budget.box_half_width.is_finite() && budget.box_half_width > 0.0);
    let l = budget.box_half_width;
    let ps = probes(budget.probes, l);

    if model.degenerate {
        let na = |n: &str| AssumptionCheck {
            name: n.into(),
            passed: true,
            margin: 0.0,
            witness: None,
            note: "not applicable: no fast dynamics".into(),
        };
        let mut checks = vec![na("ellipticity"), na("dissipativity"), na("centering")];
        checks.push(growth_check(model, &ps, budget));
        return AssumptionReport { model: model.name.clone(), beta: 0.0, lip_eta: 0.0, sup_eta: 0.0, checks };
    }

    // ellipticity window for τ₁² + τ₂²
    let mut a1 = Worst::new();
    for p in &ps {
        for y in [p.y1, p.y2] {
            let s = 2.0 * model.a(p.x, y, &p.mu);
            a1.offer((s - budget.lambda_minus).min(budget.lambda_plus - s), p);
        }
    }

    // dissipativity with β from the Lipschitz estimate of η
    let mut lip: f64 = 0.0;
    let mut sup_eta: f64 = 0.0;
    for p in &ps {
        let e1 = model.eta(p.x, p.y1, &p.mu);
        let e2 = model.eta(p.x, p.y2, &p.mu);
        sup_eta = sup_eta.max(e1.abs()).max(e2.abs());
        let dy = (p.y1 - p.y2).abs();
        if dy > 1e-12 {
            lip = lip.max((e1 - e2).abs() / dy);
        }
    }
    let beta = budget.beta.unwrap_or(0.9 * (2.0 * model.kappa - 2.0 * lip));
    let mut a2 = Worst::new();
    if !(beta > 0.0) {
        a2.offer(beta, &ps[0]);
    }
    for p in &ps {
        let dy = p.y1 - p.y2;
        if dy.abs() < 1e-12 {
            continue;
        }
        let df = model.f.eval(p.x, p.y1, &p.mu) - model.f.eval(p.x, p.y2, &p.mu);
        let dt1 = model.tau1.eval(p.x, p.y1, &p.mu) - model.tau1.eval(p.x, p.y2, &p.mu);
        let dt2 = model.tau2.eval(p.x, p.y1, &p.mu) - model.tau2.eval(p.x, p.y2, &p.mu);
        let lhs = 2.0 * df * dy + 3.0 * dt1 * dt1 + 3.0 * dt2 * dt2;
        a2.offer(-beta - lhs / (dy * dy), p);
    }
    if !sup_eta.is_finite() {
        a2.margin = f64::NEG_INFINITY;
    }

    // centering of b under the frozen equilibrium
    let nc = budget.centering_probes.min(ps.len());
    let defects = exec::map_indexed(nc, |k| {
        let p = &ps[k];
        let eq = resolve_grid(model, p.x, &p.mu, &GridSpec::default())
            .and_then(|g| invariant_density(model, p.x, &p.mu, &g));
        match eq {
            Ok(eq) => equilibrium_average(|y| model.b.eval(p.x, y, &p.mu), &eq).map(f64::abs).unwrap_or(f64::NAN),
            Err(_) => f64::NAN,
        }
    });
    let mut a3 = Worst::new();
    for (k, d) in defects.iter().enumerate() {
        a3.offer(budget.centering_tol - d, &ps[k]);
    }

    let checks = vec![
        a1.into_check("ellipticity", format!("tau1^2 + tau2^2 in [{}, {}]", budget.lambda_minus, budget.lambda_plus)),
        a2.into_check("dissipativity", format!("beta = {beta:.6}, Lip_y(eta) = {lip:.6}, sup|eta| = {sup_eta:.6}")),
        a3.into_check("centering", format!("|int b dpi| <= {:e} on {nc} probes", budget.centering_tol)),
        growth_check(model, &ps, budget),
    ];
    AssumptionReport { model: model.name.clone(), beta, lip_eta: lip, sup_eta, checks }
}

/// g and σ bounded, b and c of at most linear growth in y: the envelope on
/// the outer half of the box may exceed the inner one only by `growth_ratio`.
fn growth_check(model: &ModelSpec, ps: &[Probe], budget: &AssumptionBudget) -> AssumptionCheck {
    let half = 0.5 * budget.box_half_width;
    let mut worst = Worst::new();
    let coefs: [(&crate::model::Coefficient, bool); 4] =
        [(&model.g, false), (&model.sigma, false), (&model.b, true), (&model.c, true)];
    for (coef, linear) in coefs {
        let mut inner: f64 = 0.0;
        let mut outer: f64 = 0.0;
        let mut outer_probe = None;
        for p in ps {
            for y in [p.y1, p.y2] {
                let v = coef.eval(p.x, y, &p.mu).abs();
                let v = if linear { v / (1.0 + y.abs()) } else { v };
                let v = if v.is_nan() { f64::INFINITY } else { v };
                if y.abs() <= half {
                    inner = inner.max(v);
                } else if v >= outer {
                    outer = v;
                    outer_probe = Some(p);
                }
            }
        }
        if let Some(p) = outer_probe {
            worst.offer(budget.growth_ratio * inner + 1e-12 - outer, p);
        }
    }
    if worst.margin == f64::INFINITY {
        worst.margin = 0.0;
    }
    worst.into_check("growth", "g, sigma bounded; b, c linear growth in y".into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{no_multiscale, ou_linear, two_scale_langevin, Coefficient, Dependence, TwoScaleParams};

    fn small() -> AssumptionBudget {
        AssumptionBudget { probes: 2000, centering_probes: 8, ..Default::default() }
    }

    #[test]
    fn ou_linear_passes() {
        let mut b = small();
        b.beta = Some(1.9);
        let r = validate_assumptions(&ou_linear(), &b);
        assert!(r.all_passed(), "{r:?}");
        assert!((r.check("dissipativity").unwrap().margin - 0.1).abs() < 1e-9);
    }

    #[test]
    fn zero_fast_noise_fails_a1() {
        let mut m = ou_linear();
        m.tau2 = Coefficient::zero();
        let b = small();
        let r = validate_assumptions(&m, &b);
        let a1 = r.check("ellipticity").unwrap();
        assert!(!a1.passed);
        assert!((a1.margin + b.lambda_minus).abs() < 1e-15);
        assert!(a1.witness.is_some());
    }

    #[test]
    fn two_scale_is_centered() {
        let r = validate_assumptions(&two_scale_langevin(TwoScaleParams::default()), &small());
        assert!(r.check("centering").unwrap().passed);
        assert!(r.all_passed(), "{r:?}");
    }

    #[test]
    fn quadratic_drift_breaks_growth() {
        let mut m = ou_linear();
        m.c = Coefficient::new(Dependence::new(false, true, false), |_, y, _| y * y);
        let r = validate_assumptions(&m, &small());
        assert!(!r.check("growth").unwrap().passed);
    }

    #[test]
    fn degenerate_model_skips_fast_checks() {
        let r = validate_assumptions(&no_multiscale(), &small());
        assert!(r.all_passed());
    }
}
