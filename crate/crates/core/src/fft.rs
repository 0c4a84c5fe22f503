//! Orthonormal 2D FFT on power-of-two grids.
//!
//! Both directions scale by `1 / sqrt(H * W)`, so the transform is unitary and
//! Parseval holds without extra factors. Spectra are stored unshifted: the DC
//! bin is at index `(0, 0)`.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::tensor::{ComplexGrid, Tensor};

fn check_pow2(h: usize, w: usize) -> Result<()> {
    for (axis, n) in [("height", h), ("width", w)] {
        if !n.is_power_of_two() {
            return Err(Error::InvalidArgument(format!("fft2 {axis} {n} is not a power of two")));
        }
    }
    Ok(())
}

fn transform(buf: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let (row, col) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    row.process(buf);
    let mut column = vec![Complex64::default(); h];
    for x in 0..w {
        for y in 0..h {
            column[y] = buf[y * w + x];
        }
        col.process(&mut column);
        for y in 0..h {
            buf[y * w + x] = column[y];
        }
    }
    let scale = 1.0 / ((h * w) as f64).sqrt();
    for v in buf.iter_mut() {
        *v *= scale;
    }
}

fn to_grid(buf: &[Complex64], h: usize, w: usize) -> ComplexGrid {
    let re = buf.iter().map(|c| c.re).collect();
    let im = buf.iter().map(|c| c.im).collect();
    ComplexGrid {
        re: Tensor::new(&[h, w], re).expect("extent product"),
        im: Tensor::new(&[h, w], im).expect("extent product"),
    }
}

/// Forward transform of a real image (any shape whose leading extents are 1).
pub fn fft2(x: &Tensor) -> Result<ComplexGrid> {
    let (h, w) = x.hw()?;
    check_pow2(h, w)?;
    let mut buf: Vec<Complex64> = x.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    transform(&mut buf, h, w, false);
    Ok(to_grid(&buf, h, w))
}

pub fn fft2_complex(k: &ComplexGrid) -> Result<ComplexGrid> {
    let (h, w) = k.hw();
    check_pow2(h, w)?;
    let mut buf: Vec<Complex64> = k.re.data().iter().zip(k.im.data()).map(|(&r, &i)| Complex64::new(r, i)).collect();
    transform(&mut buf, h, w, false);
    Ok(to_grid(&buf, h, w))
}

pub fn ifft2(k: &ComplexGrid) -> Result<ComplexGrid> {
    let (h, w) = k.hw();
    check_pow2(h, w)?;
    let mut buf: Vec<Complex64> = k.re.data().iter().zip(k.im.data()).map(|(&r, &i)| Complex64::new(r, i)).collect();
    transform(&mut buf, h, w, true);
    Ok(to_grid(&buf, h, w))
}

/// Real part of the inverse transform as a `(1, 1, H, W)` image.
pub fn ifft2_real(k: &ComplexGrid) -> Result<Tensor> {
    let (h, w) = k.hw();
    ifft2(k)?.re.reshape(&[1, 1, h, w])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_image_is_dc_only() {
        let x = Tensor::full(&[8, 8], 0.25);
        let k = fft2(&x).unwrap();
        assert!((k.re.data()[0] - 8.0 * 0.25).abs() < 1e-12);
        let rest: f64 = k
            .re
            .data()
            .iter()
            .zip(k.im.data())
            .skip(1)
            .map(|(r, i)| r.abs() + i.abs())
            .sum();
        assert!(rest < 1e-12);
        assert!(k.im.data()[0].abs() < 1e-12);
    }

    #[test]
    fn roundtrip_and_parseval() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data: Vec<f64> = (0..256).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Tensor::image(16, 16, data).unwrap();
        let k = fft2(&x).unwrap();
        let back = ifft2(&k).unwrap();
        assert!(back.re.data().iter().zip(x.data()).all(|(a, b)| (a - b).abs() < 1e-10));
        assert!(back.im.data().iter().all(|v| v.abs() < 1e-10));
        let ex: f64 = x.data().iter().map(|v| v * v).sum();
        assert!((ex - k.energy()).abs() < 1e-10);

        let z = ComplexGrid::new(
            Tensor::new(&[4, 8], (0..32).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap(),
            Tensor::new(&[4, 8], (0..32).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap(),
        )
        .unwrap();
        let zz = ifft2(&fft2_complex(&z).unwrap()).unwrap();
        assert!(zz.re.max_abs_diff(&z.re) < 1e-12 && zz.im.max_abs_diff(&z.im) < 1e-12);
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert!(fft2(&Tensor::zeros(&[6, 8])).is_err());
        assert!(fft2(&Tensor::zeros(&[8, 12])).is_err());
        assert!(ifft2(&ComplexGrid::zeros(3, 4)).is_err());
    }

    proptest::proptest! {
        #[test]
        fn roundtrip_and_energy_are_preserved(log_h in 2u32..5, log_w in 2u32..5, seed in 0u64..1000) {
            let (h, w) = (1usize << log_h, 1usize << log_w);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Tensor::new(&[h, w], (0..h * w).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let k = fft2(&x).unwrap();
            let energy: f64 = k.re.data().iter().chain(k.im.data()).map(|v| v * v).sum();
            proptest::prop_assert!((energy - x.data().iter().map(|v| v * v).sum::<f64>()).abs() < 1e-9);
            proptest::prop_assert!(ifft2_real(&k).unwrap().max_abs_diff(&x) < 1e-12);
        }
    }
}
