//! 2D convolution with "same" zero padding.
//!
//! Convention: cross-correlation, as in most deep-learning frameworks. For a
//! kernel of shape `(out, in, k, k)` with odd `k` and `p = k / 2`,
//!
//! ```text
//! out[b, o, y, x] = bias[o] + sum_{i, dy, dx} kernel[o, i, dy, dx] * in[b, i, y + dy - p, x + dx - p]
//! ```
//!
//! with out-of-range input samples treated as zero. The kernel is not flipped,
//! so convolving a centered impulse returns the kernel flipped in both axes.
//!
//! Implemented as im2col followed by a dense matrix product.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Geometry of a validated convolution call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvDims {
    pub batch: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
}

impl ConvDims {
    pub fn check(input: &[usize], kernel: &[usize], bias: Option<&[usize]>) -> Result<Self> {
        let &[batch, in_ch, h, w] = input else {
            return Err(Error::shape("conv2d", "input rank", 4, input.len()));
        };
        let &[out_ch, k_in, kh, kw] = kernel else {
            return Err(Error::shape("conv2d", "kernel rank", 4, kernel.len()));
        };
        if k_in != in_ch {
            return Err(Error::shape("conv2d", "kernel input-channel axis", in_ch, k_in));
        }
        if kh != kw {
            return Err(Error::shape("conv2d", "kernel width axis", kh, kw));
        }
        if kh % 2 == 0 {
            return Err(Error::InvalidArgument(format!("conv2d kernel size {kh} must be odd")));
        }
        if let Some(b) = bias {
            if b.len() != 1 {
                return Err(Error::shape("conv2d", "bias rank", 1, b.len()));
            }
            if b[0] != out_ch {
                return Err(Error::shape("conv2d", "bias channel axis", out_ch, b[0]));
            }
        }
        Ok(Self {
            batch,
            in_ch,
            out_ch,
            h,
            w,
            k: kh,
        })
    }

    fn patch_len(&self) -> usize {
        self.in_ch * self.k * self.k
    }

    fn plane(&self) -> usize {
        self.h * self.w
    }
}

/// `c = a * b + beta * c` for row-major operands, optionally transposed.
///
/// `a` is logically `m x k`, `b` is `k x n`, `c` is `m x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, beta: f64, c: &mut [f64]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the assertions above guarantee every strided access stays in bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfold one `(in_ch, h, w)` image into a `(in_ch*k*k, h*w)` patch matrix.
fn im2col(x: &[f64], d: &ConvDims, col: &mut [f64]) {
    let (h, w, k) = (d.h, d.w, d.k);
    let p = k / 2;
    let plane = h * w;
    for i in 0..d.in_ch {
        let src = &x[i * plane..(i + 1) * plane];
        for dy in 0..k {
            for dx in 0..k {
                let row = &mut col[((i * k + dy) * k + dx) * plane..][..plane];
                for y in 0..h {
                    let dst = &mut row[y * w..(y + 1) * w];
                    let sy = y as isize + dy as isize - p as isize;
                    if sy < 0 || sy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let srow = &src[sy as usize * w..(sy as usize + 1) * w];
                    let shift = dx as isize - p as isize;
                    for (x, v) in dst.iter_mut().enumerate() {
                        let sx = x as isize + shift;
                        *v = if sx < 0 || sx >= w as isize { 0.0 } else { srow[sx as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add a patch matrix back onto an image.
fn col2im(col: &[f64], d: &ConvDims, x: &mut [f64]) {
    let (h, w, k) = (d.h, d.w, d.k);
    let p = k / 2;
    let plane = h * w;
    for i in 0..d.in_ch {
        let dst = &mut x[i * plane..(i + 1) * plane];
        for dy in 0..k {
            for dx in 0..k {
                let row = &col[((i * k + dy) * k + dx) * plane..][..plane];
                for y in 0..h {
                    let sy = y as isize + dy as isize - p as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let drow = &mut dst[sy as usize * w..(sy as usize + 1) * w];
                    let shift = dx as isize - p as isize;
                    for (x, v) in row[y * w..(y + 1) * w].iter().enumerate() {
                        let sx = x as isize + shift;
                        if sx >= 0 && sx < w as isize {
                            drow[sx as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Forward convolution; `bias` may be omitted for a purely linear map.
pub fn conv2d(input: &Tensor, kernel: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let d = ConvDims::check(input.shape(), kernel.shape(), bias.map(|b| b.shape()))?;
    let plane = d.plane();
    let mut col = vec![0.0; d.patch_len() * plane];
    let mut out = vec![0.0; d.batch * d.out_ch * plane];
    for b in 0..d.batch {
        let x = &input.data()[b * d.in_ch * plane..(b + 1) * d.in_ch * plane];
        im2col(x, &d, &mut col);
        let y = &mut out[b * d.out_ch * plane..(b + 1) * d.out_ch * plane];
        if let Some(bias) = bias {
            for (o, &bv) in bias.data().iter().enumerate() {
                y[o * plane..(o + 1) * plane].fill(bv);
            }
        }
        let beta = if bias.is_some() { 1.0 } else { 0.0 };
        gemm(d.out_ch, d.patch_len(), plane, kernel.data(), false, &col, false, beta, y);
    }
    Tensor::new(&[d.batch, d.out_ch, d.h, d.w], out)
}

/// Adjoint of the bias-free convolution with respect to its input.
pub fn conv2d_adjoint(dout: &Tensor, kernel: &Tensor, input_shape: &[usize]) -> Result<Tensor> {
    let d = ConvDims::check(input_shape, kernel.shape(), None)?;
    let expected = [d.batch, d.out_ch, d.h, d.w];
    dout.expect_same_shape(&Tensor::zeros(&expected), "conv2d_adjoint")?;
    let plane = d.plane();
    let mut col = vec![0.0; d.patch_len() * plane];
    let mut dx = vec![0.0; d.batch * d.in_ch * plane];
    for b in 0..d.batch {
        let g = &dout.data()[b * d.out_ch * plane..(b + 1) * d.out_ch * plane];
        gemm(d.patch_len(), d.out_ch, plane, kernel.data(), true, g, false, 0.0, &mut col);
        col2im(&col, &d, &mut dx[b * d.in_ch * plane..(b + 1) * d.in_ch * plane]);
    }
    Tensor::new(input_shape, dx)
}

/// Gradients of a convolution given the upstream gradient `dout`.
pub struct ConvGrads {
    pub input: Option<Tensor>,
    pub kernel: Tensor,
    pub bias: Tensor,
}

pub fn conv2d_backward(input: &Tensor, kernel: &Tensor, dout: &Tensor, need_input: bool) -> Result<ConvGrads> {
    let d = ConvDims::check(input.shape(), kernel.shape(), None)?;
    let plane = d.plane();
    let mut col = vec![0.0; d.patch_len() * plane];
    let mut dk = vec![0.0; kernel.len()];
    let mut db = vec![0.0; d.out_ch];
    let mut dx = need_input.then(|| vec![0.0; input.len()]);
    for b in 0..d.batch {
        let x = &input.data()[b * d.in_ch * plane..(b + 1) * d.in_ch * plane];
        let g = &dout.data()[b * d.out_ch * plane..(b + 1) * d.out_ch * plane];
        for (o, acc) in db.iter_mut().enumerate() {
            *acc += g[o * plane..(o + 1) * plane].iter().sum::<f64>();
        }
        im2col(x, &d, &mut col);
        gemm(d.out_ch, plane, d.patch_len(), g, false, &col, true, 1.0, &mut dk);
        if let Some(dx) = dx.as_mut() {
            gemm(d.patch_len(), d.out_ch, plane, kernel.data(), true, g, false, 0.0, &mut col);
            col2im(&col, &d, &mut dx[b * d.in_ch * plane..(b + 1) * d.in_ch * plane]);
        }
    }
    Ok(ConvGrads {
        input: dx.map(|v| Tensor::new(input.shape(), v)).transpose()?,
        kernel: Tensor::new(kernel.shape(), dk)?,
        bias: Tensor::new(&[d.out_ch], db)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Direct quadruple-loop evaluation of the documented formula.
    fn naive(input: &Tensor, kernel: &Tensor, bias: &Tensor) -> Tensor {
        let (b, ci, h, w) = input.dims4().unwrap();
        let (co, _, k, _) = kernel.dims4().unwrap();
        let p = (k / 2) as isize;
        let mut out = Tensor::zeros(&[b, co, h, w]);
        for bb in 0..b {
            for o in 0..co {
                for y in 0..h {
                    for x in 0..w {
                        let mut s = bias.data()[o];
                        for i in 0..ci {
                            for dy in 0..k {
                                for dx in 0..k {
                                    let sy = y as isize + dy as isize - p;
                                    let sx = x as isize + dx as isize - p;
                                    if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                        continue;
                                    }
                                    s += kernel.data()[((o * ci + i) * k + dy) * k + dx]
                                        * input.data()[((bb * ci + i) * h + sy as usize) * w + sx as usize];
                                }
                            }
                        }
                        out.data_mut()[((bb * co + o) * h + y) * w + x] = s;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn zero_input_gives_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let k = random(&[3, 2, 3, 3], &mut rng);
        let b = Tensor::new(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        let out = conv2d(&Tensor::zeros(&[1, 2, 4, 5]), &k, Some(&b)).unwrap();
        for o in 0..3 {
            assert!(out.data()[o * 20..(o + 1) * 20].iter().all(|&v| v == b.data()[o]));
        }
    }

    #[test]
    fn centered_impulse_returns_flipped_kernel() {
        let mut x = Tensor::zeros(&[1, 1, 3, 3]);
        x.data_mut()[4] = 1.0;
        let k = Tensor::new(&[1, 1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
        let out = conv2d(&x, &k, None).unwrap();
        let flipped: Vec<f64> = k.data().iter().rev().copied().collect();
        assert_eq!(out.data(), &flipped[..]);
    }

    #[test]
    fn matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random(&[1, 2, 5, 5], &mut rng);
        let k = random(&[4, 2, 3, 3], &mut rng);
        let b = random(&[4], &mut rng);
        let fast = conv2d(&x, &k, Some(&b)).unwrap();
        assert!(fast.max_abs_diff(&naive(&x, &k, &b)) < 1e-12);

        let x = random(&[2, 3, 4, 6], &mut rng);
        let k = random(&[2, 3, 5, 5], &mut rng);
        let b = random(&[2], &mut rng);
        let fast = conv2d(&x, &k, Some(&b)).unwrap();
        assert!(fast.max_abs_diff(&naive(&x, &k, &b)) < 1e-12);
    }

    #[test]
    fn adjoint_identity() {
        // <A x, y> == <x, A^T y>
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&[1, 2, 6, 4], &mut rng);
        let k = random(&[3, 2, 3, 3], &mut rng);
        let y = random(&[1, 3, 6, 4], &mut rng);
        let ax = conv2d(&x, &k, None).unwrap();
        let aty = conv2d_adjoint(&y, &k, x.shape()).unwrap();
        let lhs: f64 = ax.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(aty.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn shape_errors_name_the_axis() {
        let err = conv2d(&Tensor::zeros(&[1, 2, 4, 4]), &Tensor::zeros(&[3, 1, 3, 3]), None)
            .unwrap_err()
            .to_string();
        assert!(err.contains("input-channel"), "{err}");
        let err = conv2d(
            &Tensor::zeros(&[1, 1, 4, 4]),
            &Tensor::zeros(&[3, 1, 3, 3]),
            Some(&Tensor::zeros(&[2])),
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("bias"), "{err}");
        assert!(conv2d(&Tensor::zeros(&[1, 4, 4]), &Tensor::zeros(&[1, 1, 3, 3]), None).is_err());
        assert!(conv2d(&Tensor::zeros(&[1, 1, 4, 4]), &Tensor::zeros(&[1, 1, 2, 2]), None).is_err());
    }
}
