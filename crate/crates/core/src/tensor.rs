//! Dense row-major `f64` tensors.
//!
//! Images are stored as `(batch, channel, height, width)`; a single image is
//! `(1, 1, H, W)` and the two-channel network state is `(1, 2, H, W)`.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape("Tensor::new", "element count", n, data.len()));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
            grad: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
            grad: None,
        }
    }

    /// A single `(1, 1, h, w)` image.
    pub fn image(h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(&[1, 1, h, w], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape("reshape", "element count", self.data.len(), n));
        }
        self.shape = shape.to_vec();
        if let Some(g) = &self.grad {
            debug_assert_eq!(g.len(), n);
        }
        Ok(self)
    }

    /// `(batch, channels, height, width)` of a rank-4 tensor.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [b, c, h, w] => Ok((b, c, h, w)),
            _ => Err(Error::shape("dims4", "rank", 4, self.shape.len())),
        }
    }

    /// Height and width of an image tensor whose leading extents are all 1.
    pub fn hw(&self) -> Result<(usize, usize)> {
        let r = self.shape.len();
        if r < 2 {
            return Err(Error::shape("hw", "rank", 2, r));
        }
        if let Some((i, &e)) = self.shape[..r - 2].iter().enumerate().find(|(_, &e)| e != 1) {
            return Err(Error::shape("hw", format!("leading axis {i}"), 1, e));
        }
        Ok((self.shape[r - 2], self.shape[r - 1]))
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grad = Some(vec![0.0; self.data.len()]);
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn accumulate_grad(&mut self, g: &[f64]) -> Result<()> {
        if g.len() != self.data.len() {
            return Err(Error::shape("accumulate_grad", "element count", self.data.len(), g.len()));
        }
        let slot = self.grad.get_or_insert_with(|| vec![0.0; g.len()]);
        for (s, v) in slot.iter_mut().zip(g) {
            *s += v;
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            grad: None,
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.expect_same_shape(other, "zip_map")?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
            grad: None,
        })
    }

    pub fn expect_same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape.len() != other.shape.len() {
            return Err(Error::shape(op, "rank", self.shape.len(), other.shape.len()));
        }
        for (axis, (&a, &b)) in self.shape.iter().zip(&other.shape).enumerate() {
            if a != b {
                return Err(Error::shape(op, format!("axis {axis}"), a, b));
            }
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Channel `c` of a single-batch `(1, C, H, W)` tensor as `(1, 1, H, W)`.
    pub fn channel(&self, c: usize) -> Result<Tensor> {
        let (b, ch, h, w) = self.dims4()?;
        if b != 1 {
            return Err(Error::shape("channel", "batch", 1, b));
        }
        if c >= ch {
            return Err(Error::InvalidArgument(format!("channel {c} out of range for {ch} channels")));
        }
        let plane = h * w;
        Tensor::image(h, w, self.data[c * plane..(c + 1) * plane].to_vec())
    }

    /// Concatenate single-batch tensors along the channel axis.
    pub fn stack_channels(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("stack_channels needs at least one input".into()))?;
        let (_, _, h, w) = first.dims4()?;
        let mut data = Vec::new();
        let mut channels = 0;
        for p in parts {
            let (b, c, ph, pw) = p.dims4()?;
            if b != 1 {
                return Err(Error::shape("stack_channels", "batch", 1, b));
            }
            if ph != h {
                return Err(Error::shape("stack_channels", "height", h, ph));
            }
            if pw != w {
                return Err(Error::shape("stack_channels", "width", w, pw));
            }
            channels += c;
            data.extend_from_slice(&p.data);
        }
        Tensor::new(&[1, channels, h, w], data)
    }

    /// Crop a `(1, C, H, W)` tensor to the window starting at `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, ph: usize, pw: usize) -> Result<Tensor> {
        let (b, c, h, w) = self.dims4()?;
        if b != 1 {
            return Err(Error::shape("crop", "batch", 1, b));
        }
        if top + ph > h || left + pw > w {
            return Err(Error::InvalidArgument(format!(
                "crop window {ph}x{pw} at ({top},{left}) exceeds {h}x{w}"
            )));
        }
        let mut data = Vec::with_capacity(c * ph * pw);
        for ch in 0..c {
            for y in top..top + ph {
                let row = ch * h * w + y * w;
                data.extend_from_slice(&self.data[row + left..row + left + pw]);
            }
        }
        Tensor::new(&[1, c, ph, pw], data)
    }
}

/// Complex `H x W` grid stored as separate real and imaginary planes.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexGrid {
    pub re: Tensor,
    pub im: Tensor,
}

impl ComplexGrid {
    pub fn new(re: Tensor, im: Tensor) -> Result<Self> {
        re.expect_same_shape(&im, "ComplexGrid::new")?;
        if re.rank() != 2 {
            return Err(Error::shape("ComplexGrid::new", "rank", 2, re.rank()));
        }
        Ok(Self { re, im })
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        Self {
            re: Tensor::zeros(&[h, w]),
            im: Tensor::zeros(&[h, w]),
        }
    }

    pub fn hw(&self) -> (usize, usize) {
        (self.re.shape()[0], self.re.shape()[1])
    }

    pub fn energy(&self) -> f64 {
        self.re
            .data()
            .iter()
            .zip(self.im.data())
            .map(|(r, i)| r * r + i * i)
            .sum()
    }
}
