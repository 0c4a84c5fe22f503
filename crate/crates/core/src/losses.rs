//! Training objectives, recorded on a [`Tape`](crate::autodiff::Tape).
//!
//! `||.||_1` terms use mean reduction: `mae(a, b) = mean(|a - b|)`.
//!
//! - forward (refinement): `(1 - alpha) * mae(out, I) + alpha * (1 - MS-SSIM(out, I))`
//! - backward: `mae(out_a, R) + mae(out_b, R)`, both inverse-pass channels
//!   driven to the blurry reconstruction
//! - bidirectional: `forward + beta * backward`
//!
//! MS-SSIM inside the forward loss uses the default SSIM constants with a
//! data range of 1, matching images normalized to `[0, 1]`.

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::metrics::{msssim_with_grad, SsimParams};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidArgument(format!("alpha {alpha} must lie in [0, 1]")));
        }
        if !(beta >= 0.0) {
            return Err(Error::InvalidArgument(format!("beta {beta} must be non-negative")));
        }
        Ok(Self { alpha, beta })
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha: 0.84, beta: 2.0 }
    }
}

pub fn mae<'t>(a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
    Ok(a.sub(b)?.abs().mean())
}

/// MS-SSIM of `out` against a fixed reference.
pub fn msssim<'t>(out: Var<'t>, reference: &Tensor) -> Result<Var<'t>> {
    let (value, grad) = msssim_with_grad(&out.value(), reference, &SsimParams::default())?;
    out.scalar_fn(value, grad)
}

pub fn forward_loss<'t>(out: Var<'t>, target: Var<'t>, alpha: f64) -> Result<Var<'t>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} must lie in [0, 1]")));
    }
    let pixel = mae(out, target)?.scale(1.0 - alpha);
    if alpha == 0.0 {
        return Ok(pixel);
    }
    let structural = msssim(out, &target.value())?.scale(-alpha).add_scalar(alpha);
    pixel.add(structural)
}

pub fn backward_loss<'t>(out_a: Var<'t>, out_b: Var<'t>, recon: Var<'t>) -> Result<Var<'t>> {
    mae(out_a, recon)?.add(mae(out_b, recon)?)
}

pub fn bidirectional_loss<'t>(forward_term: Var<'t>, backward_term: Var<'t>, beta: f64) -> Result<Var<'t>> {
    if !(beta >= 0.0) {
        return Err(Error::InvalidArgument(format!("beta {beta} must be non-negative")));
    }
    forward_term.add(backward_term.scale(beta))
}
