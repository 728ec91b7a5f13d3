//! Built-in example models.

use super::{AveragedLfd, Coefficient, Dependence, Measure, ModelSpec};
use std::sync::Arc;

pub const BUILTIN_NAMES: [&str; 4] = ["ou_linear", "two_scale_langevin", "no_multiscale", "mean_field_ou"];

const Y_ONLY: Dependence = Dependence { x: false, y: true, mu: false };
const X_MU: Dependence = Dependence { x: true, y: false, mu: true };
const Y_MU: Dependence = Dependence { x: false, y: true, mu: true };

fn gauss_kernel_deriv(u: f64) -> f64 {
    u * (-0.5 * u * u).exp()
}

/// Linear OU fast process with κ = 1: b = y, f = -y, σ = 1, τ₁ = 0, τ₂ = √2,
/// c = g = 0. Here a ≡ 1, π = N(0, 1) and Φ(y) = y.
pub fn ou_linear() -> ModelSpec {
    ou_linear_with_kappa(1.0)
}

/// As [`ou_linear`] with f = -κy, so π = N(0, 1/κ) and Φ = y/κ.
pub fn ou_linear_with_kappa(kappa: f64) -> ModelSpec {
    ModelSpec {
        name: "ou_linear".into(),
        b: Coefficient::new(Y_ONLY, |_, y, _| y),
        c: Coefficient::zero(),
        sigma: Coefficient::constant(1.0),
        f: Coefficient::new(Y_ONLY, move |_, y, _| -kappa * y),
        g: Coefficient::zero(),
        tau1: Coefficient::zero(),
        tau2: Coefficient::constant(std::f64::consts::SQRT_2),
        kappa,
        eta_x: 0.5,
        eta_y: 1.0,
        degenerate: false,
        averaged_lfd: None,
        cell_x_derivatives: None,
    }
}

/// Parameters of the two-scale Langevin example.
///
/// Potentials: V₁' = tanh, V₂ = v2·cos (even), V₃' = v3·sin,
/// V₄ = κy²/2 + η_amp·cos(y), interaction kernels W₁'(u) = w1·u·e^{-u²/2}
/// and W₂'(u) = w2·u·e^{-u²/2}.
#[derive(Debug, Clone, Copy)]
pub struct TwoScaleParams {
    pub kappa: f64,
    pub sigma: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub eta_amp: f64,
    pub v2: f64,
    pub v3: f64,
    pub w1: f64,
    pub w2: f64,
}

impl Default for TwoScaleParams {
    fn default() -> Self {
        TwoScaleParams { kappa: 1.0, sigma: 1.0, tau1: 0.5, tau2: 1.0, eta_amp: 0.5, v2: 1.0, v3: 0.5, w1: 1.0, w2: 0.5 }
    }
}

/// Interacting particles in a two-scale potential:
///
/// ```text
/// b = -V₂'(y)            c = -V₁'(x) - ⟨μ, W₁'(x - ·)⟩
/// f = -V₄'(y)            g = -V₃'(x) - ⟨μ, W₂'(x - ·)⟩
/// ```
///
/// with constant σ, τ₁, τ₂. π and Φ depend on y only.
pub fn two_scale_langevin(p: TwoScaleParams) -> ModelSpec {
    let TwoScaleParams { kappa, sigma, tau1, tau2, eta_amp, v2, v3, w1, w2 } = p;
    let w1k = move |u: f64| w1 * gauss_kernel_deriv(u);
    let w2k = move |u: f64| w2 * gauss_kernel_deriv(u);
    ModelSpec {
        name: "two_scale_langevin".into(),
        b: Coefficient::new(Y_ONLY, move |_, y, _| v2 * y.sin()),
        c: Coefficient::new(X_MU, move |x, _, mu: &Measure| -x.tanh() - mu.integrate(|z| w1k(x - z))),
        sigma: Coefficient::constant(sigma),
        f: Coefficient::new(Y_ONLY, move |_, y, _| -kappa * y + eta_amp * y.sin()),
        g: Coefficient::new(X_MU, move |x, _, mu: &Measure| -v3 * x.sin() - mu.integrate(|z| w2k(x - z))),
        tau1: Coefficient::constant(tau1),
        tau2: Coefficient::constant(tau2),
        kappa,
        eta_x: 0.5,
        eta_y: 0.0,
        degenerate: false,
        averaged_lfd: Some(AveragedLfd::SlowForcing {
            dc: Arc::new(move |x, _, _, z| -w1k(x - z)),
            dg: Arc::new(move |x, _, _, z| -w2k(x - z)),
            reads_y: false,
        }),
        cell_x_derivatives: None,
    }
}

/// Plain McKean-Vlasov dynamics without a fast component:
/// c = -tanh(x) - ⟨μ, W'(x - ·)⟩ with W'(u) = u·e^{-u²/2}, σ = 1, and
/// b = f = g = τ₁ = τ₂ = 0.
pub fn no_multiscale() -> ModelSpec {
    ModelSpec {
        name: "no_multiscale".into(),
        b: Coefficient::zero(),
        c: Coefficient::new(X_MU, |x, _, mu: &Measure| -x.tanh() - mu.integrate(|z| gauss_kernel_deriv(x - z))),
        sigma: Coefficient::constant(1.0),
        f: Coefficient::zero(),
        g: Coefficient::zero(),
        tau1: Coefficient::zero(),
        tau2: Coefficient::zero(),
        kappa: 1.0,
        eta_x: 0.5,
        eta_y: 0.0,
        degenerate: true,
        averaged_lfd: Some(AveragedLfd::SlowForcing {
            dc: Arc::new(|x, _, _, z| -gauss_kernel_deriv(x - z)),
            dg: Arc::new(|_, _, _, _| 0.0),
            reads_y: false,
        }),
        cell_x_derivatives: None,
    }
}

/// Mean-field OU fast process whose equilibrium moves with the measure:
///
/// ```text
/// f = -κy + m,  b = y - m/κ,  m = ⟨μ, tanh⟩
/// c = -θ(x - ⟨μ, id⟩),  g = 0,  σ = 1,  τ₁ = 0,  τ₂ = √2
/// ```
///
/// with κ = θ = 1. Then π = N(m/κ, a/κ), Φ = (y - m/κ)/κ, γ̄ = c and D̄ = 3/2.
pub fn mean_field_ou() -> ModelSpec {
    let kappa = 1.0;
    let theta = 1.0;
    let m_f = |mu: &Measure| mu.cached(0, |z| z.tanh());
    ModelSpec {
        name: "mean_field_ou".into(),
        b: Coefficient::new(Y_MU, move |_, y, mu: &Measure| y - m_f(mu) / kappa),
        c: Coefficient::new(X_MU, move |x, _, mu: &Measure| -theta * (x - mu.mean())),
        sigma: Coefficient::constant(1.0),
        f: Coefficient::new(Y_MU, move |_, y, mu: &Measure| -kappa * y + m_f(mu)),
        g: Coefficient::zero(),
        tau1: Coefficient::zero(),
        tau2: Coefficient::constant(std::f64::consts::SQRT_2),
        kappa,
        eta_x: 0.5,
        eta_y: 1.0,
        degenerate: false,
        averaged_lfd: Some(AveragedLfd::Closed(Arc::new(move |_, _, z| (theta * z, 0.0)))),
        cell_x_derivatives: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_multiscale_fast_coefficients_are_bitwise_zero() {
        let m = no_multiscale();
        let mu = Measure::empirical(vec![-1.0, 0.3, 2.0]);
        for &(x, y) in &[(0.0, 0.0), (-3.0, 7.5), (1.25, -2.0)] {
            for c in [&m.b, &m.f, &m.g, &m.tau1, &m.tau2] {
                assert_eq!(c.eval(x, y, &mu).to_bits(), 0.0f64.to_bits());
            }
        }
    }

    #[test]
    fn callbacks_are_deterministic() {
        let m = two_scale_langevin(TwoScaleParams::default());
        let mu = Measure::empirical(vec![-1.0, 0.3, 2.0]);
        let a = m.c.eval(0.7, 0.1, &mu);
        let b = m.c.eval(0.7, 0.1, &mu);
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn two_scale_perturbation_is_small() {
        let p = TwoScaleParams::default();
        assert!(p.eta_amp < p.kappa);
        let m = two_scale_langevin(p);
        let mu = Measure::point_mass(0.0);
        assert!((m.eta(0.0, 1.0, &mu) - 0.5 * 1f64.sin()).abs() < 1e-15);
    }
}
