//! Isogeometric solver for nonlinear acoustic wave equations.

pub mod assembly;
pub mod compare;
pub mod config;
pub mod diagnostics;
pub mod experiment;
pub mod expr;
pub mod linalg;
pub mod mesh;
pub mod models;
pub mod presets;
pub mod quadrature;
pub mod splines;
pub mod timestepper;

/// Sizes the global worker pool used by assembly. Only the first call in a
/// process takes effect; returns whether this call did.
pub fn init_threads(n: usize) -> bool {
    rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global().is_ok()
}
