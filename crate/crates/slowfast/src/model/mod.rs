//! Slow-fast McKean-Vlasov models.
//!
//! Each particle carries a slow state `x` and a fast state `y`:
//!
//! ```text
//! dX = [b/ε + c] dt + σ dW
//! dY = (1/ε)[f/ε + g] dt + (1/ε)[τ₁ dW + τ₂ dB]
//! ```
//!
//! with every coefficient a function of `(x, y, μ)` and `μ` the empirical
//! measure of the slow states. The fast drift is `f = -κy + η(x, y, μ)`
//! and `a = (τ₁² + τ₂²)/2` is the fast diffusion.

mod builtin;
mod config;
mod expr;
mod measure;
mod validate;

pub use builtin::{
    mean_field_ou, no_multiscale, ou_linear, ou_linear_with_kappa, two_scale_langevin,
    TwoScaleParams, BUILTIN_NAMES,
};
pub use config::{build_model, ModelConfig};
pub use expr::{parse_control_component, ControlComponent};
pub(crate) use measure::mix64;
pub use measure::{Measure, CACHE_SLOTS};
pub use validate::{validate_assumptions, AssumptionBudget, AssumptionCheck, AssumptionReport, Witness};


use std::fmt;
use std::sync::Arc;

pub type CoefFn = Arc<dyn Fn(f64, f64, &Measure) -> f64 + Send + Sync>;
/// Linear functional derivative `δ/δm coef(x, y, μ)[z]`, called as `(x, y, μ, z)`.
pub type CoefLfdFn = Arc<dyn Fn(f64, f64, &Measure, f64) -> f64 + Send + Sync>;
/// `(δγ̄/δm(x, μ)[z], δD̄/δm(x, μ)[z])`, called as `(x, μ, z)`.
pub type AveragedLfdFn = Arc<dyn Fn(f64, &Measure, f64) -> (f64, f64) + Send + Sync>;
/// Analytic `(Φ_x, Φ_xy)` at `(x, y, μ)`.
pub type CellXDerivFn = Arc<dyn Fn(f64, f64, &Measure) -> (f64, f64) + Send + Sync>;

/// Which arguments a coefficient actually reads. Used only to skip work
/// (quadratures of y-free integrands, x-derivatives of x-free cells).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dependence {
    pub x: bool,
    pub y: bool,
    pub mu: bool,
}

impl Dependence {
    pub const ALL: Dependence = Dependence { x: true, y: true, mu: true };
    pub const NONE: Dependence = Dependence { x: false, y: false, mu: false };

    pub fn new(x: bool, y: bool, mu: bool) -> Self {
        Dependence { x, y, mu }
    }

    pub fn union(self, o: Dependence) -> Dependence {
        Dependence { x: self.x || o.x, y: self.y || o.y, mu: self.mu || o.mu }
    }
}

#[derive(Clone)]
pub struct Coefficient {
    func: CoefFn,
    pub dep: Dependence,
    zero: bool,
}

impl Coefficient {
    pub fn new<F>(dep: Dependence, f: F) -> Self
    where
        F: Fn(f64, f64, &Measure) -> f64 + Send + Sync + 'static,
    {
        Coefficient { func: Arc::new(f), dep, zero: false }
    }

    pub fn constant(v: f64) -> Self {
        Coefficient { func: Arc::new(move |_, _, _| v), dep: Dependence::NONE, zero: v == 0.0 }
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    #[inline]
    pub fn eval(&self, x: f64, y: f64, mu: &Measure) -> f64 {
        (self.func)(x, y, mu)
    }

    /// True when the coefficient was declared identically zero.
    pub fn is_zero(&self) -> bool {
        self.zero
    }
}

impl fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Coefficient({:?}{})", self.dep, if self.zero { ", zero" } else { "" })
    }
}

/// Closed-form information about the measure derivatives of `γ̄, D̄`.
#[derive(Clone)]
pub enum AveragedLfd {
    Closed(AveragedLfdFn),
    /// b, f, σ, τ₁, τ₂ do not depend on μ; μ enters through c and g only,
    /// whose linear functional derivatives are given.
    SlowForcing {
        dc: CoefLfdFn,
        dg: CoefLfdFn,
        /// Whether `dc` or `dg` read `y`; if not, the π-quadrature collapses to `ᾱ`.
        reads_y: bool,
    },
}

#[derive(Clone)]
pub struct ModelSpec {
    pub name: String,
    pub b: Coefficient,
    pub c: Coefficient,
    pub sigma: Coefficient,
    pub f: Coefficient,
    pub g: Coefficient,
    pub tau1: Coefficient,
    pub tau2: Coefficient,
    pub kappa: f64,
    pub eta_x: f64,
    pub eta_y: f64,
    /// No multiscale structure: b = f = g = τ₁ = τ₂ = 0, fast states frozen.
    pub degenerate: bool,
    pub averaged_lfd: Option<AveragedLfd>,
    pub cell_x_derivatives: Option<CellXDerivFn>,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("kappa", &self.kappa)
            .field("init", &(self.eta_x, self.eta_y))
            .field("degenerate", &self.degenerate)
            .finish()
    }
}

impl ModelSpec {
    /// Fast diffusion `a = (τ₁² + τ₂²)/2`.
    #[inline]
    pub fn a(&self, x: f64, y: f64, mu: &Measure) -> f64 {
        let t1 = self.tau1.eval(x, y, mu);
        let t2 = self.tau2.eval(x, y, mu);
        0.5 * (t1 * t1 + t2 * t2)
    }

    /// Perturbation `η = f + κy`.
    pub fn eta(&self, x: f64, y: f64, mu: &Measure) -> f64 {
        self.f.eval(x, y, mu) + self.kappa * y
    }

    /// Combined dependence of b, f, τ₁, τ₂, which fix π and Φ.
    pub fn fast_dependence(&self) -> Dependence {
        self.b.dep.union(self.f.dep).union(self.tau1.dep).union(self.tau2.dep)
    }

    /// Combined dependence of all seven coefficients.
    pub fn full_dependence(&self) -> Dependence {
        [&self.c, &self.sigma, &self.g].iter().fold(self.fast_dependence(), |d, c| d.union(c.dep))
    }

    /// True when no coefficient reads the measure.
    pub fn is_measure_free(&self) -> bool {
        [&self.b, &self.c, &self.sigma, &self.f, &self.g, &self.tau1, &self.tau2]
            .iter()
            .all(|c| !c.dep.mu)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ou_linear_has_unit_fast_diffusion() {
        let m = ou_linear();
        let mu = Measure::point_mass(0.0);
        for y in [-3.0, 0.0, 2.5] {
            assert!((m.a(0.3, y, &mu) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn dependence_union() {
        let d = Dependence::new(true, false, false).union(Dependence::new(false, false, true));
        assert_eq!(d, Dependence::new(true, false, true));
    }
}
