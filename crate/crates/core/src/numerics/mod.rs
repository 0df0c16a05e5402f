//! Low-level numeric kernels: dense arrays, feed-forward networks with
//! hand-derived gradients, Adam, a seeded Gaussian RNG, and the central
//! finite-difference gradient checker that serves as the correctness oracle
//! for every loss in the stack.

pub mod adam;
pub mod array;
pub mod gradcheck;
pub mod net;
pub mod rng;

pub use adam::{adam_step, AdamState};
pub use array::Array;
pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use net::{net_backward, net_forward, FeedForwardNet, NetCache};
pub use rng::{gaussian_sample, RngStream};

/// Dot product with four-way unrolled accumulation.
///
/// The accumulation order is fixed, so results are deterministic within a
/// build; the unrolling only breaks the sequential-add dependency chain.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let chunks = n / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..chunks {
        let j = i * 4;
        s0 += a[j] * b[j];
        s1 += a[j + 1] * b[j + 1];
        s2 += a[j + 2] * b[j + 2];
        s3 += a[j + 3] * b[j + 3];
    }
    let mut tail = 0.0;
    for j in chunks * 4..n {
        tail += a[j] * b[j];
    }
    (s0 + s1) + (s2 + s3) + tail
}

/// y += alpha * x, the other hot kernel in backward passes.
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
