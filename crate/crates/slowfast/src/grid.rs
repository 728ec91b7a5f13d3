//! Uniform 1-D grids and the quadrature rules used on them.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformGrid {
    pub lo: f64,
    pub h: f64,
    pub n: usize,
}

impl UniformGrid {
    /// `n` nodes on `[center - half_width, center + half_width]`.
    pub fn symmetric(center: f64, half_width: f64, n: usize) -> Self {
        assert!(n >= 3, "a grid needs at least 3 nodes");
        Self { lo: center - half_width, h: 2.0 * half_width / (n - 1) as f64, n }
    }

    pub fn node(&self, i: usize) -> f64 {
        self.lo + self.h * i as f64
    }

    pub fn hi(&self) -> f64 {
        self.node(self.n - 1)
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.node(i)).collect()
    }

    /// Index of the node closest to `y` (clamped).
    pub fn nearest(&self, y: f64) -> usize {
        let k = ((y - self.lo) / self.h).round();
        k.clamp(0.0, (self.n - 1) as f64) as usize
    }

    /// Linear interpolation of nodal `values` at `y`.
    pub fn interp(&self, values: &[f64], y: f64) -> Result<f64> {
        let (lo, hi) = (self.lo, self.hi());
        if !(y >= lo - 1e-12 * self.h && y <= hi + 1e-12 * self.h) {
            return Err(Error::Extrapolation { y, lo, hi });
        }
        let s = ((y - lo) / self.h).clamp(0.0, (self.n - 1) as f64);
        let i = (s.floor() as usize).min(self.n - 2);
        let w = s - i as f64;
        Ok(values[i] * (1.0 - w) + values[i + 1] * w)
    }
}

/// Composite trapezoid rule for nodal values with spacing `h`.
pub fn trapezoid(values: &[f64], h: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let inner: f64 = values[1..n - 1].iter().sum();
    h * (inner + 0.5 * (values[0] + values[n - 1]))
}

/// Running trapezoid integral from the first node; `out[0] = 0`.
pub fn cumulative_trapezoid(values: &[f64], h: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in values.windows(2) {
        acc += 0.5 * h * (w[0] + w[1]);
        out.push(acc);
    }
    out
}

/// Running integral from the first node with the Euler-Maclaurin endpoint
/// correction, fourth order when `derivs` are accurate to second order.
pub fn cumulative_corrected(values: &[f64], derivs: &[f64], h: f64) -> Vec<f64> {
    let mut out = cumulative_trapezoid(values, h);
    let c = h * h / 12.0;
    for (k, o) in out.iter_mut().enumerate() {
        *o -= c * (derivs[k] - derivs[0]);
    }
    out
}

/// Running integral from the last node towards the left: `out[k] = int_{y_k}^{y_max}`.
pub fn cumulative_corrected_from_right(values: &[f64], derivs: &[f64], h: f64) -> Vec<f64> {
    let n = values.len();
    let mut acc = 0.0;
    let mut out = vec![0.0; n];
    for k in (0..n - 1).rev() {
        acc += 0.5 * h * (values[k] + values[k + 1]);
        out[k] = acc;
    }
    let c = h * h / 12.0;
    for k in 0..n {
        out[k] -= c * (derivs[n - 1] - derivs[k]);
    }
    out
}

/// Finite-difference first derivative: fourth order in the interior,
/// second order next to and at the ends.
pub fn derivative(values: &[f64], h: f64) -> Vec<f64> {
    let n = values.len();
    assert!(n >= 3);
    let mut d = vec![0.0; n];
    for i in 0..n {
        d[i] = if i >= 2 && i + 2 < n {
            (values[i - 2] - 8.0 * values[i - 1] + 8.0 * values[i + 1] - values[i + 2]) / (12.0 * h)
        } else if i >= 1 && i + 1 < n {
            (values[i + 1] - values[i - 1]) / (2.0 * h)
        } else if i == 0 {
            (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * h)
        } else {
            (3.0 * values[n - 1] - 4.0 * values[n - 2] + values[n - 3]) / (2.0 * h)
        };
    }
    d
}

/// Second-order central second derivative on interior nodes (ends set to 0).
pub fn second_derivative(values: &[f64], h: f64) -> Vec<f64> {
    let n = values.len();
    let mut d = vec![0.0; n];
    for i in 1..n.saturating_sub(1) {
        d[i] = (values[i - 1] - 2.0 * values[i] + values[i + 1]) / (h * h);
    }
    d
}
