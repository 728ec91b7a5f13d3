//! Euler-Maruyama ensembles: the multiscale particle system (optionally
//! controlled), the IID slow-fast system realized by a larger interacting
//! ensemble, and the averaged McKean-Vlasov limit.
//!
//! All runs share noise through [`NoiseStream`]: particle `i` of every run
//! with the same seed is driven by the same `W^i, B^i`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::averaging::Averager;
use crate::error::{Error, Result};
use crate::exec::{try_map_indexed, Exec};
use crate::mdp_rate::OptimalControl;
use crate::model::{Measure, ModelSpec};
use crate::noise::{NoiseStream, StreamKind};

/// Micro step `ε²/K`, aligned to the report interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepPolicy {
    #[serde(default = "default_k")]
    pub k: f64,
    #[serde(default = "default_report_dt")]
    pub report_dt: f64,
}

fn default_k() -> f64 {
    20.0
}

fn default_report_dt() -> f64 {
    0.01
}

impl Default for StepPolicy {
    fn default() -> Self {
        StepPolicy { k: default_k(), report_dt: default_report_dt() }
    }
}

impl StepPolicy {
    /// Micro steps per report interval at scale `eps`.
    pub fn micro_steps(&self, eps: f64) -> usize {
        let h = eps * eps / self.k;
        // guard against 0.01/0.0005 landing just above an integer
        ((self.report_dt / h) * (1.0 - 1e-12)).ceil().max(1.0) as usize
    }

    pub fn macro_steps(&self, t_end: f64) -> Result<usize> {
        let r = t_end / self.report_dt;
        let n = r.round();
        if !(t_end > 0.0) || (r - n).abs() > 1e-9 * r.max(1.0) || n < 1.0 {
            return Err(Error::Config(format!(
                "t_end = {t_end} is not a positive multiple of report_dt = {}",
                self.report_dt
            )));
        }
        Ok(n as usize)
    }

    fn validate(&self) -> Result<()> {
        if !(self.k > 0.0) || !(self.report_dt > 0.0) {
            return Err(Error::Config("step policy needs k > 0 and report_dt > 0".into()));
        }
        Ok(())
    }
}

pub type FeedbackFn = Arc<dyn Fn(f64, f64, f64) -> (f64, f64) + Send + Sync>;

/// Control `u = h(t, x, y)` entering the controlled system.
#[derive(Clone)]
pub enum ControlField {
    Zero,
    Constant(f64, f64),
    /// Evaluated at the start of every micro step.
    Feedback(FeedbackFn),
    /// Feedback reconstructed from a target fluctuation path.
    Optimal(Arc<OptimalControl>),
}

impl std::fmt::Debug for ControlField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ControlField::Zero => write!(f, "Zero"),
            ControlField::Constant(a, b) => write!(f, "Constant({a}, {b})"),
            ControlField::Feedback(_) => write!(f, "Feedback"),
            ControlField::Optimal(o) => write!(f, "{o:?}"),
        }
    }
}

impl ControlField {
    pub fn feedback<F>(h: F) -> Self
    where
        F: Fn(f64, f64, f64) -> (f64, f64) + Send + Sync + 'static,
    {
        ControlField::Feedback(Arc::new(h))
    }

    #[inline]
    pub fn eval(&self, t: f64, x: f64, y: f64) -> (f64, f64) {
        match self {
            ControlField::Zero => (0.0, 0.0),
            ControlField::Constant(a, b) => (*a, *b),
            ControlField::Feedback(h) => h(t, x, y),
            ControlField::Optimal(o) => o.eval(t, x, y),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, ControlField::Zero)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PathKind {
    Multiscale,
    Controlled,
    IidMv,
    Averaged,
}

/// Sampled ensemble trajectories, stored time-major: `x[t][i]`.
#[derive(Debug, Clone)]
pub struct EnsemblePath {
    pub kind: PathKind,
    pub times: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub y: Option<Vec<Vec<f64>>>,
    /// Control at the start of each report interval; the last row repeats.
    pub u: Option<Vec<Vec<[f64; 2]>>>,
    pub seed: u64,
    pub eps: Option<f64>,
    pub n: usize,
    pub n_micro: usize,
    /// The law of the IID system was approximated by an ensemble no larger than N.
    pub law_is_interacting: bool,
}

impl EnsemblePath {
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    /// Keeps the first `n` particles (the ones whose noise is shared across runs).
    pub fn truncate(&self, n: usize) -> Result<EnsemblePath> {
        if n > self.n {
            return Err(Error::Shape(format!("cannot keep {n} of {} particles", self.n)));
        }
        let cut = |rows: &Vec<Vec<f64>>| rows.iter().map(|r| r[..n].to_vec()).collect::<Vec<_>>();
        Ok(EnsemblePath {
            x: cut(&self.x),
            y: self.y.as_ref().map(cut),
            u: self.u.as_ref().map(|rows| rows.iter().map(|r| r[..n].to_vec()).collect()),
            n,
            ..self.clone()
        })
    }

    /// Empirical measure of the slow states at report step `t`.
    pub fn measure(&self, t: usize) -> Measure {
        Measure::empirical(self.x[t].clone())
    }

    /// Writes `t,i,x,y,u1,u2` rows.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,i,x,y,u1,u2")?;
        for (k, t) in self.times.iter().enumerate() {
            for i in 0..self.n {
                let y = self.y.as_ref().map(|y| y[k][i]).unwrap_or(f64::NAN);
                let u = self.u.as_ref().map(|u| u[k][i]).unwrap_or([f64::NAN; 2]);
                writeln!(w, "{:.16e},{},{:.16e},{:.16e},{:.16e},{:.16e}", t, i, self.x[k][i], y, u[0], u[1])?;
            }
        }
        Ok(())
    }
}

const BLOWUP: f64 = 1e6;

fn time_grid(n_macro: usize, dt: f64, t_end: f64) -> Vec<f64> {
    let mut t: Vec<f64> = (0..=n_macro).map(|k| k as f64 * dt).collect();
    t[n_macro] = t_end;
    t
}

/// Controlled multiscale system driven by `u/(a_N √N)`; `control = None`
/// is the uncontrolled system.
#[allow(clippy::too_many_arguments)]
pub fn simulate_multiscale(
    model: &ModelSpec,
    n: usize,
    eps: f64,
    t_end: f64,
    step: &StepPolicy,
    seed: u64,
    control: Option<&ControlField>,
    a_n: f64,
    exec: Exec,
) -> Result<EnsemblePath> {
    if n < 2 {
        return Err(Error::Config(format!("need at least 2 particles, got {n}")));
    }
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::Config(format!("eps = {eps} outside (0, 1]")));
    }
    if !(a_n > 0.0) {
        return Err(Error::Config(format!("a_N = {a_n} must be positive")));
    }
    step.validate()?;
    let n_macro = step.macro_steps(t_end)?;
    let n_micro = step.micro_steps(eps);
    let dt = step.report_dt;
    let h = dt / n_micro as f64;
    let scale = 1.0 / (a_n * (n as f64).sqrt());
    let record = control.is_some();
    let control = control.filter(|c| !c.is_zero());
    let fast = !model.degenerate;

    let mut xs = vec![vec![model.eta_x; n]];
    let mut ys = vec![vec![model.eta_y; n]];
    let mut us: Vec<Vec<[f64; 2]>> = Vec::new();

    for k in 0..n_macro {
        let t0 = k as f64 * dt;
        let mu = Measure::empirical(xs[k].clone());
        let (x_prev, y_prev) = (&xs[k], &ys[k]);
        let out = try_map_indexed(exec, n, |i| {
            let mut sw = NoiseStream::new(seed, i, StreamKind::W);
            let mut sb = NoiseStream::new(seed, i, StreamKind::B);
            let mut bw = sw.macro_step(k, dt, n_micro);
            let mut bb = if fast { Some(sb.macro_step(k, dt, n_micro)) } else { None };
            let (mut x, mut y) = (x_prev[i], y_prev[i]);
            let u0 = control.map(|c| c.eval(t0, x, y)).unwrap_or((0.0, 0.0));
            for m in 0..n_micro {
                let dw = bw.next_increment();
                let db = bb.as_mut().map(|b| b.next_increment()).unwrap_or(0.0);
                let sigma = model.sigma.eval(x, y, &mu);
                let mut dx = model.c.eval(x, y, &mu) * h + sigma * dw;
                let mut dy = 0.0;
                let u = match control {
                    Some(c) if m > 0 => c.eval(t0 + m as f64 * h, x, y),
                    _ => u0,
                };
                if fast {
                    let b = model.b.eval(x, y, &mu);
                    let f = model.f.eval(x, y, &mu);
                    let g = model.g.eval(x, y, &mu);
                    let t1 = model.tau1.eval(x, y, &mu);
                    let t2 = model.tau2.eval(x, y, &mu);
                    dx += b / eps * h;
                    dy = (f / eps + g) / eps * h + (t1 * dw + t2 * db) / eps;
                    if control.is_some() {
                        dy += (t1 * u.0 + t2 * u.1) * scale / eps * h;
                    }
                }
                if control.is_some() {
                    dx += sigma * u.0 * scale * h;
                }
                x += dx;
                y += dy;
                if !(x.abs() <= BLOWUP && y.abs() <= BLOWUP) {
                    return Err(Error::Stiffness { step: k, particle: i, limit: BLOWUP });
                }
            }
            Ok((x, y, [u0.0, u0.1]))
        })?;
        xs.push(out.iter().map(|o| o.0).collect());
        ys.push(out.iter().map(|o| o.1).collect());
        if record {
            us.push(out.iter().map(|o| o.2).collect());
        }
    }
    let u = record.then(|| {
        let last = us.last().cloned().unwrap_or_default();
        us.push(last);
        us
    });
    let controlled = u.is_some();
    Ok(EnsemblePath {
        kind: if controlled { PathKind::Controlled } else { PathKind::Multiscale },
        times: time_grid(n_macro, dt, t_end),
        x: xs,
        y: Some(ys),
        u,
        seed,
        eps: Some(eps),
        n,
        n_micro,
        law_is_interacting: false,
    })
}

/// IID slow-fast McKean-Vlasov system. Its law is realized by an interacting
/// ensemble of `m_aux` particles; the first `n` are returned and share noise
/// with particle `i < n` of [`simulate_multiscale`].
#[allow(clippy::too_many_arguments)]
pub fn simulate_iid_mv(
    model: &ModelSpec,
    n: usize,
    m_aux: usize,
    eps: f64,
    t_end: f64,
    step: &StepPolicy,
    seed: u64,
    exec: Exec,
) -> Result<EnsemblePath> {
    if m_aux < n {
        return Err(Error::Config(format!("M_aux = {m_aux} below N = {n}")));
    }
    let full = simulate_multiscale(model, m_aux, eps, t_end, step, seed, None, 1.0, exec)?;
    let mut p = full.truncate(n)?;
    p.kind = PathKind::IidMv;
    p.law_is_interacting = m_aux == n;
    Ok(p)
}

/// Averaged McKean-Vlasov limit `dX = γ̄ dt + s₁ dW + s₂ dB` with
/// `s₁ = ∫(σ + τ₁Φ_y)dπ` and `s₁² + s₂² = 2D̄`. Splitting the diffusion this
/// way lets the limit share the particle noise of the multiscale system.
pub fn simulate_averaged(
    averager: &Averager,
    m: usize,
    t_end: f64,
    step: &StepPolicy,
    seed: u64,
    exec: Exec,
) -> Result<EnsemblePath> {
    if m < 1 {
        return Err(Error::Config("need at least one particle".into()));
    }
    step.validate()?;
    let model = averager.model();
    let n_macro = step.macro_steps(t_end)?;
    let dt = step.report_dt;
    let mut xs = vec![vec![model.eta_x; m]];
    for k in 0..n_macro {
        let mu = Measure::empirical(xs[k].clone());
        let prev = &xs[k];
        let next = try_map_indexed(exec, m, |i| {
            let x = prev[i];
            let a = averager.averaged(x, &mu)?;
            if a.d_bar < 0.0 {
                return Err(Error::NegativeDiffusion { x, d_bar: a.d_bar });
            }
            let dw = NoiseStream::new(seed, i, StreamKind::W).increment(k, dt);
            let db = NoiseStream::new(seed, i, StreamKind::B).increment(k, dt);
            let xn = x + a.gamma_bar * dt + a.s1 * dw + a.s2() * db;
            if !(xn.abs() <= BLOWUP) {
                return Err(Error::Stiffness { step: k, particle: i, limit: BLOWUP });
            }
            Ok(xn)
        })?;
        xs.push(next);
        // cells solved at a stale measure are never reused
        if model.full_dependence().mu {
            averager.clear();
        }
    }
    Ok(EnsemblePath {
        kind: PathKind::Averaged,
        times: time_grid(n_macro, dt, t_end),
        x: xs,
        y: None,
        u: None,
        seed,
        eps: None,
        n: m,
        n_micro: 1,
        law_is_interacting: false,
    })
}

fn check_shapes(a: &EnsemblePath, b: &EnsemblePath) -> Result<()> {
    if a.n != b.n || a.times.len() != b.times.len() {
        return Err(Error::Shape(format!(
            "ensembles differ: N {} vs {}, {} vs {} report times",
            a.n,
            b.n,
            a.times.len(),
            b.times.len()
        )));
    }
    if a.times.iter().zip(&b.times).any(|(s, t)| (s - t).abs() > 1e-12) {
        return Err(Error::Shape("time grids differ".into()));
    }
    Ok(())
}

/// `sup_t (1/N) Σᵢ |X_a,i(t) - X_b,i(t)|²`.
pub fn coupling_error(a: &EnsemblePath, b: &EnsemblePath) -> Result<f64> {
    check_shapes(a, b)?;
    let n = a.n as f64;
    Ok(a
        .x
        .iter()
        .zip(&b.x)
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / n)
        .fold(0.0, f64::max))
}

/// Exact 1-D `W₂` between equal-size empirical measures (sorted pairing).
pub fn w2_empirical(mu1: &[f64], mu2: &[f64]) -> Result<f64> {
    if mu1.len() != mu2.len() || mu1.is_empty() {
        return Err(Error::Shape(format!("atom counts {} and {}", mu1.len(), mu2.len())));
    }
    let mut a = mu1.to_vec();
    let mut b = mu2.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let s: f64 = a.iter().zip(&b).map(|(p, q)| (p - q) * (p - q)).sum();
    Ok((s / a.len() as f64).sqrt())
}

/// `½ (1/N) Σᵢ ∫|uᵢ|² dt`, left Riemann sum over the report grid.
pub fn occupation_cost(run: &EnsemblePath, dt: f64) -> Result<f64> {
    let u = run.u.as_ref().ok_or_else(|| Error::InvalidArgument("run carries no control samples".into()))?;
    let steps = run.steps();
    let mut acc = 0.0;
    for row in u.iter().take(steps) {
        acc += row.iter().map(|v| v[0] * v[0] + v[1] * v[1]).sum::<f64>() / run.n as f64;
    }
    Ok(0.5 * acc * dt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::GridSpec;
    use crate::model::{no_multiscale, ou_linear};

    fn quick() -> StepPolicy {
        StepPolicy::default()
    }

    #[test]
    fn micro_steps_resolve_eps() {
        let s = quick();
        assert_eq!(s.micro_steps(0.1), 20);
        assert_eq!(s.micro_steps(0.4), 2);
        assert_eq!(s.micro_steps(1.0), 1);
        assert!(s.macro_steps(0.015).is_err());
        assert_eq!(s.macro_steps(1.0).unwrap(), 100);
    }

    #[test]
    fn zero_control_is_bitwise_uncontrolled() {
        let m = ou_linear();
        let a = simulate_multiscale(&m, 8, 0.3, 0.2, &quick(), 5, None, 1.0, Exec::Sequential).unwrap();
        let b = simulate_multiscale(&m, 8, 0.3, 0.2, &quick(), 5, Some(&ControlField::Zero), 1.0, Exec::Sequential).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, b.y);
    }

    #[test]
    fn deterministic_across_executors() {
        let m = ou_linear();
        let a = simulate_multiscale(&m, 16, 0.2, 0.1, &quick(), 9, None, 1.0, Exec::Sequential).unwrap();
        let b = simulate_multiscale(&m, 16, 0.2, 0.1, &quick(), 9, None, 1.0, Exec::Parallel).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, b.y);
    }

    #[test]
    fn no_multiscale_fast_states_frozen() {
        let m = no_multiscale();
        let p = simulate_multiscale(&m, 4, 0.5, 0.1, &quick(), 1, None, 1.0, Exec::Sequential).unwrap();
        assert!(p.y.unwrap().iter().flatten().all(|&y| y == m.eta_y));
    }

    #[test]
    fn iid_shares_noise_with_multiscale() {
        // with a measure-free model the first N particles coincide exactly
        let m = ou_linear();
        let a = simulate_multiscale(&m, 4, 0.3, 0.1, &quick(), 3, None, 1.0, Exec::Sequential).unwrap();
        let b = simulate_iid_mv(&m, 4, 12, 0.3, 0.1, &quick(), 3, Exec::Sequential).unwrap();
        assert_eq!(a.x, b.x);
        assert!(!b.law_is_interacting);
        let c = simulate_iid_mv(&m, 4, 4, 0.3, 0.1, &quick(), 3, Exec::Sequential).unwrap();
        assert!(c.law_is_interacting);
    }

    #[test]
    fn ou_linear_coupling_identity() {
        // X^ε - X = -ε (Y_t - Y_0) holds exactly for the Euler schemes used here
        let m = Arc::new(ou_linear());
        let eps = 0.2;
        let a = simulate_multiscale(&m, 6, eps, 0.3, &quick(), 11, None, 1.0, Exec::Sequential).unwrap();
        let av = Averager::new(m.clone(), GridSpec::default());
        let b = simulate_averaged(&av, 6, 0.3, &quick(), 11, Exec::Sequential).unwrap();
        let y = a.y.as_ref().unwrap();
        for t in 0..a.times.len() {
            for i in 0..6 {
                let d = a.x[t][i] - b.x[t][i] + eps * (y[t][i] - m.eta_y);
                assert!(d.abs() < 1e-5, "t {t} i {i} d {d}");
            }
        }
    }

    #[test]
    fn w2_examples() {
        assert!((w2_empirical(&[0.0, 2.0], &[1.0, 3.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(w2_empirical(&[0.5, -1.0], &[-1.0, 0.5]).unwrap(), 0.0);
        assert!((w2_empirical(&[0.0, 0.0], &[0.0, 2.0]).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert!(w2_empirical(&[0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn occupation_cost_constant_control() {
        let m = ou_linear();
        let p = simulate_multiscale(&m, 4, 0.5, 1.0, &quick(), 2, Some(&ControlField::Constant(1.0, 0.0)), 1.0, Exec::Sequential)
            .unwrap();
        let c = occupation_cost(&p, 0.01).unwrap();
        assert!((c - 0.5).abs() < 0.01);
        let z = simulate_multiscale(&m, 4, 0.5, 1.0, &quick(), 2, Some(&ControlField::Constant(0.0, 0.0)), 1.0, Exec::Sequential)
            .unwrap();
        assert_eq!(occupation_cost(&z, 0.01).unwrap(), 0.0);
    }

    #[test]
    fn coupling_error_of_identical_paths_is_zero() {
        let m = ou_linear();
        let a = simulate_multiscale(&m, 4, 0.5, 0.1, &quick(), 2, None, 1.0, Exec::Sequential).unwrap();
        assert_eq!(coupling_error(&a, &a).unwrap(), 0.0);
        let b = a.truncate(2).unwrap();
        assert!(matches!(coupling_error(&a, &b), Err(Error::Shape(_))));
    }
}
