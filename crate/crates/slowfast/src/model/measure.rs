//! Probability measures on the real line as consumed by model coefficients.
//!
//! Two representations: weighted atoms (the empirical measure of a particle
//! ensemble, or a mixture perturbation of one) and a density on a uniform
//! grid. Coefficients only see them through [`Measure::integrate`] and the
//! cached summaries.

use crate::grid::{trapezoid, UniformGrid};
use std::sync::OnceLock;

/// Number of memo slots available to coefficient callbacks.
pub const CACHE_SLOTS: usize = 4;

#[derive(Debug, Clone)]
pub struct Measure {
    repr: Repr,
    mean: f64,
    second_moment: f64,
    fingerprint: u64,
    cache: [OnceLock<f64>; CACHE_SLOTS],
}

#[derive(Debug, Clone)]
enum Repr {
    /// Sorted atoms; `None` weights mean uniform.
    Atoms { atoms: Vec<f64>, weights: Option<Vec<f64>> },
    Grid { grid: UniformGrid, density: Vec<f64> },
}

pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fold_hash(h: u64, v: f64) -> u64 {
    mix64(h ^ v.to_bits())
}

impl Measure {
    /// Uniform empirical measure; atoms are sorted on construction.
    pub fn empirical(mut atoms: Vec<f64>) -> Self {
        assert!(!atoms.is_empty(), "empirical measure needs atoms");
        atoms.sort_by(f64::total_cmp);
        Self::build(Repr::Atoms { atoms, weights: None })
    }

    pub fn point_mass(x: f64) -> Self {
        Self::empirical(vec![x])
    }

    /// Weighted atoms. Weights must sum to one; negative weights are allowed
    /// so that signed mixture directions can be evaluated by coefficients that
    /// are smooth in the measure.
    pub fn weighted(atoms: Vec<f64>, weights: Vec<f64>) -> Self {
        assert_eq!(atoms.len(), weights.len());
        let total: f64 = weights.iter().sum();
        assert!((total - 1.0).abs() < 1e-12, "weights sum to {total}");
        let mut idx: Vec<usize> = (0..atoms.len()).collect();
        idx.sort_by(|&a, &b| atoms[a].total_cmp(&atoms[b]));
        let a = idx.iter().map(|&i| atoms[i]).collect();
        let w = idx.iter().map(|&i| weights[i]).collect();
        Self::build(Repr::Atoms { atoms: a, weights: Some(w) })
    }

    /// Density on a grid; renormalized by the trapezoid rule.
    pub fn grid_density(grid: UniformGrid, mut density: Vec<f64>) -> Self {
        assert_eq!(grid.n, density.len());
        assert!(density.iter().all(|d| *d >= 0.0), "grid density must be nonnegative");
        let z = trapezoid(&density, grid.h);
        assert!(z > 0.0);
        density.iter_mut().for_each(|d| *d /= z);
        Self::build(Repr::Grid { grid, density })
    }

    fn build(repr: Repr) -> Self {
        let mut m = Measure {
            repr,
            mean: 0.0,
            second_moment: 0.0,
            fingerprint: 0,
            cache: Default::default(),
        };
        m.mean = m.integrate(|x| x);
        m.second_moment = m.integrate(|x| x * x);
        m.fingerprint = match &m.repr {
            Repr::Atoms { atoms, weights } => {
                let mut h = mix64(atoms.len() as u64);
                for a in atoms {
                    h = fold_hash(h, *a);
                }
                if let Some(w) = weights {
                    for v in w {
                        h = fold_hash(h, *v);
                    }
                }
                h
            }
            Repr::Grid { grid, density } => {
                let mut h = fold_hash(fold_hash(mix64(grid.n as u64), grid.lo), grid.h);
                for v in density {
                    h = fold_hash(h, *v);
                }
                h ^ 0x5555_5555_5555_5555
            }
        };
        m
    }

    /// `∫ f dμ`, summed in a fixed order.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        match &self.repr {
            Repr::Atoms { atoms, weights: None } => {
                atoms.iter().map(|&a| f(a)).sum::<f64>() / atoms.len() as f64
            }
            Repr::Atoms { atoms, weights: Some(w) } => {
                atoms.iter().zip(w).map(|(&a, &wi)| wi * f(a)).sum()
            }
            Repr::Grid { grid, density } => {
                let v: Vec<f64> = (0..grid.n).map(|i| density[i] * f(grid.node(i))).collect();
                trapezoid(&v, grid.h)
            }
        }
    }

    /// `∫ f dμ`, computed once per measure and slot. Callers must use a
    /// given slot for one fixed `f` only.
    pub fn cached<F: Fn(f64) -> f64>(&self, slot: usize, f: F) -> f64 {
        *self.cache[slot].get_or_init(|| self.integrate(f))
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn second_moment(&self) -> f64 {
        self.second_moment
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn is_empirical(&self) -> bool {
        matches!(self.repr, Repr::Atoms { .. })
    }

    pub fn is_uniform_empirical(&self) -> bool {
        matches!(self.repr, Repr::Atoms { weights: None, .. })
    }

    /// Sorted atoms of an empirical measure.
    pub fn atoms(&self) -> Option<&[f64]> {
        match &self.repr {
            Repr::Atoms { atoms, .. } => Some(atoms),
            Repr::Grid { .. } => None,
        }
    }

    /// Atom weights (uniform weights are materialized).
    pub fn weights(&self) -> Option<Vec<f64>> {
        match &self.repr {
            Repr::Atoms { atoms, weights } => Some(
                weights.clone().unwrap_or_else(|| vec![1.0 / atoms.len() as f64; atoms.len()]),
            ),
            Repr::Grid { .. } => None,
        }
    }

    pub fn len(&self) -> usize {
        match &self.repr {
            Repr::Atoms { atoms, .. } => atoms.len(),
            Repr::Grid { grid, .. } => grid.n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(1 - t) μ + t δ_z` for an empirical `μ` (t may be negative).
    pub fn mixture_with_atom(&self, z: f64, t: f64) -> Option<Measure> {
        let atoms = self.atoms()?;
        let mut a = atoms.to_vec();
        let mut w: Vec<f64> = self.weights()?.iter().map(|w| w * (1.0 - t)).collect();
        a.push(z);
        w.push(t);
        // absorb rounding so the weights sum to one exactly enough
        let s: f64 = w.iter().sum();
        let last = w.len() - 1;
        w[last] += 1.0 - s;
        Some(Measure::weighted(a, w))
    }

    /// Empirical measure with atom `j` (in sorted order) moved by `d`.
    pub fn shift_atom(&self, j: usize, d: f64) -> Option<Measure> {
        let atoms = self.atoms()?;
        let mut a = atoms.to_vec();
        a[j] += d;
        match &self.repr {
            Repr::Atoms { weights: None, .. } => Some(Measure::empirical(a)),
            Repr::Atoms { weights: Some(w), .. } => Some(Measure::weighted(a, w.clone())),
            Repr::Grid { .. } => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn empirical_summaries() {
        let m = Measure::empirical(vec![3.0, -1.0, 1.0]);
        assert_eq!(m.atoms().unwrap(), &[-1.0, 1.0, 3.0]);
        assert_relative_eq!(m.mean(), 1.0);
        assert_relative_eq!(m.second_moment(), 11.0 / 3.0);
    }

    #[test]
    fn mixture_derivative_is_centered() {
        let m = Measure::empirical(vec![0.0, 1.0, 2.0]);
        let t = 1e-3;
        let p = m.mixture_with_atom(5.0, t).unwrap();
        let q = m.mixture_with_atom(5.0, -t).unwrap();
        let d = (p.mean() - q.mean()) / (2.0 * t);
        assert_relative_eq!(d, 5.0 - 1.0, epsilon = 1e-9);
    }

    #[test]
    fn grid_density_normalized() {
        let g = UniformGrid::symmetric(0.0, 10.0, 2001);
        let d = g.nodes().iter().map(|y| (-y * y / 2.0).exp()).collect();
        let m = Measure::grid_density(g, d);
        assert_relative_eq!(m.integrate(|_| 1.0), 1.0, epsilon = 1e-12);
        assert_relative_eq!(m.second_moment(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn fingerprint_tracks_atoms() {
        let a = Measure::empirical(vec![1.0, 2.0]);
        let b = Measure::empirical(vec![2.0, 1.0]);
        let c = Measure::empirical(vec![1.0, 2.5]);
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn cache_slot_memoizes() {
        let m = Measure::empirical(vec![0.5, 1.5]);
        let v = m.cached(0, |x| x.tanh());
        assert_eq!(v, m.cached(0, |_| 100.0));
    }
}
