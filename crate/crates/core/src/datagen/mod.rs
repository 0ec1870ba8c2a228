//! Synthetic observational data with known potential outcomes.
//!
//! Every generator is a pure function of its config. Potential outcomes are
//! obtained by replaying the structural equations under both treatments with
//! the same noise draws; outcome-equation noise is left out of `y0_true` /
//! `y1_true`.

mod ar;
mod example1;
mod sequential;
mod temporal;

pub use ar::{gen_ar, spectral_radius, ArConfig, ArScores};
pub use example1::{gen_example1, Example1Config};
pub(crate) use example1::draw_example1;
pub use sequential::{gen_sequential, DiscreteSpec, SequentialConfig};
pub use temporal::{gen_temporal, TemporalCoefficients, TemporalConfig};

use rand::Rng;

/// Laplace(0, scale) by inverse CDF. `scale == 0` returns 0.
pub fn laplace<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> f64 {
    let u: f64 = rng.random::<f64>() - 0.5;
    let mag = -(1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE).ln();
    scale * mag.copysign(u)
}

/// Mean of the last three steps of a `K x m` trajectory, over all dims.
fn last_three_mean(traj: &[Vec<f64>]) -> f64 {
    let k = traj.len();
    let m = traj[0].len();
    traj[k - 3..].iter().flatten().sum::<f64>() / (3 * m) as f64
}
