//! Rerouting streams: path decomposition, the mixing constructions, face
//! balancing on the unit cube and gluing of streams in adjacent cubes.

mod decompose;
mod faces;
mod glue;
mod mixing;

pub use decompose::{decompose, Decomposition, WeightedPath};
pub use faces::{
    balance_faces, face_fluxes, is_well_behaved, well_behaved_target, Balance, FaceCell, FaceFamily, SparseGrid,
};
pub use glue::{glue_adjacent, Corridor, LatticeCube};
pub use mixing::{mix, mix2d, mix2d_checked, mix_precise, mix_sparse, mix_uniform, Family, Mix2d};

use crate::scalar::Scalar;

/// α = 1/(2(3d+1)).
pub fn alpha(d: usize) -> f64 {
    1.0 / (2.0 * (3.0 * d as f64 + 1.0))
}

/// Mesoscopic face resolution m = ⌊ε^{-α}⌋ (at least 1).
pub fn mesoscale(d: usize, eps: f64) -> i64 {
    (eps.powf(-alpha(d)).floor() as i64).max(1)
}

/// Sublattice step K = ⌊(1/(2κ ε^{α/2}))^{1/(d-1)}⌋ used by face balancing.
pub fn sparse_step(d: usize, eps: f64, kappa: f64) -> i64 {
    let base = 1.0 / (2.0 * kappa * eps.powf(alpha(d) / 2.0));
    base.powf(1.0 / (d as f64 - 1.0)).floor() as i64
}

/// proj(t, ε) = sign(t)·√ε·⌊|t|/√ε⌋.
pub fn quantize(t: f64, eps: f64) -> f64 {
    let r = eps.sqrt();
    t.signum() * r * (t.abs() / r).floor()
}

/// a ≤ b, allowing float noise relative to `scale`.
fn le<S: Scalar>(a: &S, b: &S, scale: &S) -> bool {
    a <= b || (a.clone() - b.clone()).near_zero(scale)
}

/// |v| > bound beyond float noise.
fn exceeds<S: Scalar>(v: &S, bound: &S) -> bool {
    !le(&v.abs(), bound, bound)
}
