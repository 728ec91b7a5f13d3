//! Test-function dictionaries, the weighted Sobolev norms
//! `‖φ‖_n² = Σ_{k≤n} ∫(1+x²)^{2n} (φ^{(k)})² dx`, the sup-seminorms
//! `|φ|_n = Σ_{k≤n} sup|φ^{(k)}|`, and pairings of the fluctuation process
//! `Z^N = a_N √N (μ^N - 𝓛(X))` with dictionary members.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{trapezoid, UniformGrid};
use crate::simulate::EnsemblePath;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Decay {
    /// Gaussian or faster: every weighted norm is finite.
    Gaussian,
    /// Bounded but not integrable (tanh, sin).
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum TestFunction {
    /// Normalized Hermite function `ψ_n(x) = (2ⁿ n! √π)^{-1/2} H_n(x) e^{-x²/2}`.
    Hermite(usize),
    Tanh,
    /// `exp(-(x/w)²)`.
    Gaussian { width: f64 },
    Sin,
    /// Linear combination of members.
    Combination(Vec<(f64, TestFunction)>),
}

/// `ψ_0..=ψ_m` at `x` by the three-term recurrence.
fn hermite_functions(m: usize, x: f64) -> Vec<f64> {
    let mut v = vec![0.0; m + 1];
    v[0] = std::f64::consts::PI.powf(-0.25) * (-0.5 * x * x).exp();
    if m >= 1 {
        v[1] = std::f64::consts::SQRT_2 * x * v[0];
    }
    for k in 1..m {
        let kf = k as f64;
        v[k + 1] = (2.0 / (kf + 1.0)).sqrt() * x * v[k] - (kf / (kf + 1.0)).sqrt() * v[k - 1];
    }
    v
}

/// Coefficients of `ψ_n^{(k)}` in the Hermite basis, from
/// `ψ_j' = √(j/2) ψ_{j-1} - √((j+1)/2) ψ_{j+1}`.
fn hermite_derivative_coeffs(n: usize, k: usize) -> Vec<f64> {
    let mut c = vec![0.0; n + k + 1];
    c[n] = 1.0;
    for _ in 0..k {
        let mut d = vec![0.0; c.len()];
        for (j, &cj) in c.iter().enumerate() {
            if cj == 0.0 {
                continue;
            }
            let jf = j as f64;
            if j > 0 {
                d[j - 1] += cj * (jf / 2.0).sqrt();
            }
            if j + 1 < d.len() {
                d[j + 1] -= cj * ((jf + 1.0) / 2.0).sqrt();
            }
        }
        c = d;
    }
    c
}

/// Physicists' Hermite polynomial `H_k(u)`.
fn hermite_poly(k: usize, u: f64) -> f64 {
    let (mut a, mut b) = (1.0, 2.0 * u);
    if k == 0 {
        return a;
    }
    for j in 1..k {
        let c = 2.0 * u * b - 2.0 * j as f64 * a;
        a = b;
        b = c;
    }
    b
}

/// `d^k/dx^k tanh(x)` as a polynomial in `t = tanh x`, using `t' = 1 - t²`.
fn tanh_derivative(k: usize, x: f64) -> f64 {
    let mut p = vec![0.0, 1.0];
    for _ in 0..k {
        let mut q = vec![0.0; p.len() + 1];
        for (j, &pj) in p.iter().enumerate().skip(1) {
            let c = pj * j as f64;
            q[j - 1] += c;
            q[j + 1] -= c;
        }
        p = q;
    }
    let t = x.tanh();
    p.iter().rev().fold(0.0, |acc, c| acc * t + c)
}

impl TestFunction {
    /// `φ^{(k)}(x)`.
    pub fn deriv(&self, k: usize, x: f64) -> f64 {
        match self {
            TestFunction::Hermite(n) => {
                let c = hermite_derivative_coeffs(*n, k);
                let psi = hermite_functions(c.len() - 1, x);
                c.iter().zip(&psi).map(|(a, b)| a * b).sum()
            }
            TestFunction::Tanh => tanh_derivative(k, x),
            TestFunction::Gaussian { width } => {
                let u = x / width;
                (-1.0 / width).powi(k as i32) * hermite_poly(k, u) * (-u * u).exp()
            }
            TestFunction::Sin => (x + k as f64 * std::f64::consts::FRAC_PI_2).sin(),
            TestFunction::Combination(terms) => terms.iter().map(|(a, f)| a * f.deriv(k, x)).sum(),
        }
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        self.deriv(0, x)
    }

    pub fn decay(&self) -> Decay {
        match self {
            TestFunction::Hermite(_) | TestFunction::Gaussian { .. } => Decay::Gaussian,
            TestFunction::Tanh | TestFunction::Sin => Decay::None,
            TestFunction::Combination(t) => {
                if t.iter().all(|(a, f)| *a == 0.0 || f.decay() == Decay::Gaussian) {
                    Decay::Gaussian
                } else {
                    Decay::None
                }
            }
        }
    }

    pub fn name(&self) -> String {
        match self {
            TestFunction::Hermite(n) => format!("hermite{n}"),
            TestFunction::Tanh => "tanh".into(),
            TestFunction::Gaussian { width } => format!("gaussian{width}"),
            TestFunction::Sin => "sin".into(),
            TestFunction::Combination(t) => format!("combination{}", t.len()),
        }
    }

    /// Inverse of [`TestFunction::name`] for the non-composite members.
    pub fn parse(name: &str) -> Option<TestFunction> {
        match name {
            "tanh" => Some(TestFunction::Tanh),
            "sin" => Some(TestFunction::Sin),
            _ => {
                if let Some(k) = name.strip_prefix("hermite") {
                    k.parse().ok().map(TestFunction::Hermite)
                } else if let Some(w) = name.strip_prefix("gaussian") {
                    w.parse().ok().filter(|w: &f64| *w > 0.0).map(|width| TestFunction::Gaussian { width })
                } else {
                    None
                }
            }
        }
    }
}

/// Highest derivative order cross-checked at construction.
pub const CHECKED_ORDER: usize = 6;

#[derive(Debug, Clone, Serialize)]
pub struct TestDictionary {
    pub members: Vec<TestFunction>,
}

impl TestDictionary {
    /// Builds a dictionary after checking every analytic derivative up to
    /// order 6 against a central difference of the one below it.
    pub fn new(members: Vec<TestFunction>) -> Result<Self> {
        let h = 1e-4;
        for (j, phi) in members.iter().enumerate() {
            for &x in &[-2.3, -0.7, 0.0, 0.4, 1.9] {
                for k in 1..=CHECKED_ORDER {
                    let exact = phi.deriv(k, x);
                    let fd = (phi.deriv(k - 1, x + h) - phi.deriv(k - 1, x - h)) / (2.0 * h);
                    let scale = exact.abs().max(phi.deriv(k - 1, x).abs()).max(1.0);
                    if !exact.is_finite() || (exact - fd).abs() > 1e-5 * scale {
                        return Err(Error::InvalidArgument(format!(
                            "member {j} ({}): derivative {k} at x = {x} is {exact}, finite difference {fd}",
                            phi.name()
                        )));
                    }
                }
            }
        }
        Ok(TestDictionary { members })
    }

    /// First `j` Hermite functions.
    pub fn hermite(j: usize) -> Self {
        TestDictionary::new((0..j).map(TestFunction::Hermite).collect()).expect("Hermite derivatives are exact")
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Default grid for norms: `[-20, 20]` with 8001 nodes.
pub fn norm_grid() -> UniformGrid {
    UniformGrid::symmetric(0.0, 20.0, 8001)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SobolevNorm {
    pub value: f64,
    /// Largest integrand value at the two grid ends.
    pub tail_estimate: f64,
}

pub fn sobolev_norm(phi: &TestFunction, n: usize, grid: &UniformGrid) -> Result<SobolevNorm> {
    let xs = grid.nodes();
    let mut total = 0.0;
    let mut tail: f64 = 0.0;
    let mut peak: f64 = 0.0;
    for k in 0..=n {
        let vals: Vec<f64> = xs
            .iter()
            .map(|&x| {
                let d = phi.deriv(k, x);
                (1.0 + x * x).powi(2 * n as i32) * d * d
            })
            .collect();
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence(format!("non-finite Sobolev integrand for {}", phi.name())));
        }
        peak = vals.iter().cloned().fold(peak, f64::max);
        tail = tail.max(vals[0]).max(vals[vals.len() - 1]);
        total += trapezoid(&vals, grid.h);
    }
    if tail > 1e-10 * peak.max(1e-300) && tail > 1e-300 {
        return Err(Error::Divergence(format!(
            "Sobolev integrand of {} does not decay within [{}, {}] (edge value {tail:e})",
            phi.name(),
            grid.lo,
            grid.hi()
        )));
    }
    Ok(SobolevNorm { value: total.sqrt(), tail_estimate: tail })
}

/// `sup |g|` on the grid, refined by ternary search around the best node.
fn refined_sup<G: Fn(f64) -> f64>(g: G, grid: &UniformGrid) -> f64 {
    let xs = grid.nodes();
    let (mut best_i, mut best) = (0, 0.0f64);
    for (i, &x) in xs.iter().enumerate() {
        let v = g(x).abs();
        if v > best {
            best = v;
            best_i = i;
        }
    }
    if best == 0.0 {
        return 0.0;
    }
    let mut lo = if best_i > 0 { xs[best_i - 1] } else { xs[0] };
    let mut hi = if best_i + 1 < xs.len() { xs[best_i + 1] } else { xs[best_i] };
    for _ in 0..60 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if g(m1).abs() < g(m2).abs() {
            lo = m1;
        } else {
            hi = m2;
        }
    }
    best.max(g(0.5 * (lo + hi)).abs())
}

pub fn sup_seminorm(phi: &TestFunction, n: usize, grid: &UniformGrid) -> Result<f64> {
    let mut s = 0.0;
    for k in 0..=n {
        let v = refined_sup(|x| phi.deriv(k, x), grid);
        if !v.is_finite() {
            return Err(Error::Divergence(format!("non-finite derivative {k} of {}", phi.name())));
        }
        s += v;
    }
    Ok(s)
}

/// Measured constant `|φ|_n / ‖φ‖_{n+1}` of the Sobolev embedding.
pub fn embedding_ratio(phi: &TestFunction, n: usize, grid: &UniformGrid) -> Result<f64> {
    let sup = sup_seminorm(phi, n, grid)?;
    let sob = sobolev_norm(phi, n + 1, grid)?.value;
    Ok(if sob == 0.0 { 0.0 } else { sup / sob })
}

/// `z[j][t] = ⟨Z_t, φ_j⟩` along a report grid.
#[derive(Debug, Clone, Serialize)]
pub struct FluctuationField {
    pub times: Vec<f64>,
    pub z: Vec<Vec<f64>>,
    /// `a_N √N`.
    pub scale: f64,
    pub emp_seed: Option<u64>,
    pub limit_seed: Option<u64>,
    /// The limit ensemble was smaller than ten times the particle system.
    pub limit_too_small: bool,
}

impl FluctuationField {
    pub fn zeros(times: Vec<f64>, j: usize) -> Self {
        let n = times.len();
        FluctuationField { times, z: vec![vec![0.0; n]; j], scale: 1.0, emp_seed: None, limit_seed: None, limit_too_small: false }
    }

    pub fn members(&self) -> usize {
        self.z.len()
    }

    /// `z[·][t]`.
    pub fn slice(&self, t: usize) -> Vec<f64> {
        self.z.iter().map(|row| row[t]).collect()
    }

    /// Writes `t,j,z` rows.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,j,z")?;
        for (k, t) in self.times.iter().enumerate() {
            for (j, row) in self.z.iter().enumerate() {
                writeln!(w, "{:.16e},{},{:.16e}", t, j, row[k])?;
            }
        }
        Ok(())
    }

    /// `max_j |z_j(t)| / ‖φ_j‖_n` at each time: a lower bound for `‖Z_t‖_{-n}`.
    pub fn dual_norm_lower_bound(&self, dict: &TestDictionary, n: usize) -> Result<Vec<f64>> {
        let grid = norm_grid();
        let norms = dict
            .members
            .iter()
            .map(|phi| sobolev_norm(phi, n, &grid).map(|s| s.value))
            .collect::<Result<Vec<_>>>()?;
        Ok((0..self.times.len())
            .map(|t| {
                self.z
                    .iter()
                    .zip(&norms)
                    .filter(|(_, nm)| **nm > 0.0)
                    .map(|(row, nm)| row[t].abs() / nm)
                    .fold(0.0, f64::max)
            })
            .collect())
    }
}

/// `z[j][t] = a_N √N (meanᵢ φ_j(Xᵢ(t)) - mean_limit φ_j(X(t)))`.
pub fn fluctuation_pairings(emp: &EnsemblePath, limit: &EnsemblePath, a_n: f64, dict: &TestDictionary) -> Result<FluctuationField> {
    if emp.times.len() != limit.times.len() || emp.times.iter().zip(&limit.times).any(|(a, b)| (a - b).abs() > 1e-12) {
        return Err(Error::Shape("empirical and limit paths use different time grids".into()));
    }
    let scale = a_n * (emp.n as f64).sqrt();
    let mean = |row: &[f64], phi: &TestFunction| row.iter().map(|&x| phi.value(x)).sum::<f64>() / row.len() as f64;
    let z = dict
        .members
        .iter()
        .map(|phi| {
            emp.x
                .iter()
                .zip(&limit.x)
                .map(|(re, rl)| scale * (mean(re, phi) - mean(rl, phi)))
                .collect::<Vec<_>>()
        })
        .collect::<Vec<_>>();
    if z.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { node: 0, y: f64::NAN });
    }
    Ok(FluctuationField {
        times: emp.times.clone(),
        z,
        scale,
        emp_seed: Some(emp.seed),
        limit_seed: Some(limit.seed),
        limit_too_small: limit.n < 10 * emp.n,
    })
}
