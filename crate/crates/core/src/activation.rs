//! The 1-Lipschitz nonlinearity used inside residual branches: `tanh`.
//!
//! `tanh` is smooth and odd with `tanh(0) = 0`, and its derivative
//! `1 - tanh(x)^2` lies in `(0, 1]`, so the map is 1-Lipschitz.

use crate::tensor::Tensor;

pub fn lip1(x: f64) -> f64 {
    x.tanh()
}

/// Derivative of [`lip1`] expressed through its output `y = lip1(x)`.
pub fn lip1_grad_from_output(y: f64) -> f64 {
    1.0 - y * y
}

pub fn lip1_activation(x: &Tensor) -> Tensor {
    x.map(lip1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_at_origin() {
        assert_eq!(lip1(0.0), 0.0);
    }

    #[test]
    fn one_lipschitz_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100_000 {
            let a: f64 = rng.random_range(-20.0..20.0);
            let b: f64 = rng.random_range(-20.0..20.0);
            assert!((lip1(a) - lip1(b)).abs() <= (a - b).abs());
        }
    }

    #[test]
    fn derivative_bounded_by_one() {
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for i in -100_000..=100_000 {
            let x = i as f64 * 1e-4;
            let fd = (lip1(x + h) - lip1(x - h)) / (2.0 * h);
            worst = worst.max(fd.abs());
            assert!(lip1_grad_from_output(lip1(x)) <= 1.0);
        }
        assert!(worst <= 1.0 + 1e-12, "max |f'| = {worst}");
    }
}
