//! Error type shared by every module.
//!
//! Faults fall in two families: assumption failures (ellipticity, centering)
//! and numerical faults (grids, stiffness, rank, ...). The CLI maps them to
//! exit codes 2 and 1 respectively.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("ellipticity fault: a = {a:e} at y = {y} (x = {x})")]
    Ellipticity { x: f64, y: f64, a: f64 },

    #[error("centering fault: |integral of b against pi| = {defect:e} exceeds {tol:e} at x = {x}")]
    Centering { x: f64, defect: f64, tol: f64 },

    #[error("grid too small: estimated tail mass {tail:e} outside [{lo}, {hi}]")]
    GridTooSmall { tail: f64, lo: f64, hi: f64 },

    #[error("non-finite value at node {node} (y = {y})")]
    NonFinite { node: usize, y: f64 },

    #[error("extrapolation fault: y = {y} outside grid [{lo}, {hi}]")]
    Extrapolation { y: f64, lo: f64, hi: f64 },

    #[error("perturbation fault: non-finite measure derivative for atom {atom}")]
    Perturbation { atom: usize },

    #[error("horizon too short: semigroup tail estimate {tail:e} exceeds {tol:e}")]
    HorizonTooShort { tail: f64, tol: f64 },

    #[error("CFL fault: dt = {dt:e} exceeds stability bound {bound:e}")]
    Cfl { dt: f64, bound: f64 },

    #[error("stiffness fault: |state| exceeded {limit:e} at macro step {step} (particle {particle})")]
    Stiffness { step: usize, particle: usize, limit: f64 },

    #[error("negative averaged diffusion {d_bar:e} at x = {x}")]
    NegativeDiffusion { x: f64, d_bar: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("divergence fault: {0}")]
    Divergence(String),

    #[error("dictionary too small: Galerkin residual {residual:e} for member {member} at slice {slice} exceeds {tol:e}")]
    DictionaryTooSmall { member: usize, slice: usize, residual: f64, tol: f64 },

    #[error("unstable time integration: {0}; try a smaller dt")]
    Unstable(String),

    #[error("degenerate diffusion: D_bar = {d_bar:e} at x = {x}")]
    Degeneracy { x: f64, d_bar: f64 },

    #[error("rank fault at slice {slice}: condition number {cond:e}")]
    Rank { slice: usize, cond: f64 },

    #[error("io: {0}")]
    Io(String),
}

impl Error {
    /// True for faults that signal a violated standing assumption rather than a numerical problem.
    pub fn is_assumption(&self) -> bool {
        matches!(self, Error::Ellipticity { .. } | Error::Centering { .. })
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
