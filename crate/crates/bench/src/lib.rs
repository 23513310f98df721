//! Shared fixtures for the criterion benches.

use coopinit::{Scalar, Tensor};

/// Deterministic pseudo-random tensor in [-1, 1) without pulling in an RNG.
pub fn fixture<T: Scalar>(shape: &[usize], salt: u64) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let mut state = salt.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    let data = (0..n)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            T::from_f64_lossy((state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0)
        })
        .collect();
    Tensor::from_vec(shape.to_vec(), data).expect("fixture shape")
}
