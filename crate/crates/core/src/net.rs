//! The invertible sharpening network.
//!
//! Each residual block maps `x -> x + g(x)`, where `g` is a stack of 3x3
//! convolutions separated by the 1-Lipschitz activation, and every
//! convolution carries an operator-norm budget `c < 1`. Because `g` is then a
//! contraction, the block is inverted by the fixed-point iteration
//! `x_{k+1} = y - g(x_k)` starting from `x_0 = y`.
//!
//! The network state has two channels. Channel 0 holds the image that is
//! sharp on the output side (the ground truth during training); channel 1
//! holds the conditioning image (the undersampled image during training).
//!
//! - training (inverse direction): `(I, Y) -> net_inverse -> (out_a, out_b)`,
//!   both driven toward the blurry reconstruction `R`
//! - inference (forward direction): `(R, R) -> net_forward -> channel 0 -> DC`

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::activation::lip1_activation;
use crate::autodiff::{Tape, Var};
use crate::conv::conv2d;
use crate::error::{Error, Result};
use crate::fft::{fft2, ifft2_real};
use crate::io::Container;
use crate::lipschitz::{enforce_budget_with_state, LipschitzBudget, PowerIterState};
use crate::tensor::{ComplexGrid, Tensor};

pub const CHECKPOINT_TAG: &str = "INVSHARP-CKPT 1";
pub const CHANNEL_CONVENTION: &str = "ch0=sharp,ch1=condition";
pub const KERNEL_SIZE: usize = 3;

/// Block count and per-layer channel widths of a network.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Geometry {
    pub blocks: usize,
    /// Channel widths from input to output, e.g. `[2, 32, 32, 2]` for three
    /// convolution layers.
    pub widths: Vec<usize>,
}

impl Geometry {
    /// `blocks` residual blocks of `layers` convolutions with `channels`
    /// intermediate channels over a 2-channel state.
    pub fn new(blocks: usize, layers: usize, channels: usize) -> Result<Self> {
        if blocks == 0 || layers == 0 {
            return Err(Error::InvalidArgument("geometry needs at least one block and one layer".into()));
        }
        if layers > 1 && channels == 0 {
            return Err(Error::InvalidArgument("intermediate channel count must be positive".into()));
        }
        let mut widths = vec![2];
        widths.extend(std::iter::repeat_n(channels, layers - 1));
        widths.push(2);
        Ok(Self { blocks, widths })
    }

    /// 4 blocks x 3 layers x 32 channels.
    pub fn desk() -> Self {
        Self::new(4, 3, 32).expect("valid")
    }

    /// 12 blocks x 5 layers x 128 channels.
    pub fn full() -> Self {
        Self::new(12, 5, 128).expect("valid")
    }

    pub fn layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn channels(&self) -> usize {
        self.widths[1..self.widths.len() - 1].iter().copied().max().unwrap_or(2)
    }

    /// Trainable parameters: kernels plus biases over all blocks.
    pub fn param_count(&self) -> usize {
        let per_block: usize = self
            .widths
            .windows(2)
            .map(|w| w[0] * w[1] * KERNEL_SIZE * KERNEL_SIZE + w[1])
            .sum();
        self.blocks * per_block
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Convolutions with the 1-Lipschitz activation between consecutive layers
/// (none after the last).
#[derive(Clone, Debug, PartialEq)]
pub struct ConvStack {
    pub layers: Vec<ConvLayer>,
}

impl ConvStack {
    /// Kernels uniform in `+-1/sqrt(fan_in)`, biases zero.
    pub fn init(widths: &[usize], rng: &mut impl Rng) -> Self {
        let layers = widths
            .windows(2)
            .map(|w| {
                let (cin, cout) = (w[0], w[1]);
                let bound = 1.0 / ((cin * KERNEL_SIZE * KERNEL_SIZE) as f64).sqrt();
                let n = cout * cin * KERNEL_SIZE * KERNEL_SIZE;
                let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
                ConvLayer {
                    weight: Tensor::new(&[cout, cin, KERNEL_SIZE, KERNEL_SIZE], data).expect("extent product"),
                    bias: Tensor::zeros(&[cout]),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn zeros(widths: &[usize]) -> Self {
        let layers = widths
            .windows(2)
            .map(|w| ConvLayer {
                weight: Tensor::zeros(&[w[1], w[0], KERNEL_SIZE, KERNEL_SIZE]),
                bias: Tensor::zeros(&[w[1]]),
            })
            .collect();
        Self { layers }
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].weight.shape()[1]];
        w.extend(self.layers.iter().map(|l| l.weight.shape()[0]));
        w
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = conv2d(&h, &layer.weight, Some(&layer.bias))?;
            if i + 1 < self.layers.len() {
                h = lip1_activation(&h);
            }
        }
        Ok(h)
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundStack<'t> {
        BoundStack {
            layers: self
                .layers
                .iter()
                .map(|l| (tape.leaf(l.weight.clone()), tape.leaf(l.bias.clone())))
                .collect(),
        }
    }

    pub fn params(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }
}

/// A [`ConvStack`] whose parameters are leaves on a tape.
pub struct BoundStack<'t> {
    layers: Vec<(Var<'t>, Var<'t>)>,
}

impl<'t> BoundStack<'t> {
    pub fn forward(&self, x: Var<'t>) -> Result<Var<'t>> {
        let mut h = x;
        for (i, (w, b)) in self.layers.iter().enumerate() {
            h = h.conv2d(*w, Some(*b))?;
            if i + 1 < self.layers.len() {
                h = h.lip1();
            }
        }
        Ok(h)
    }

    /// Parameter handles in the order of [`ConvStack::params`].
    pub fn vars(&self) -> impl Iterator<Item = Var<'t>> + '_ {
        self.layers.iter().flat_map(|(w, b)| [*w, *b])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualBlock {
    pub branch: ConvStack,
    /// Warm-started power-iteration vectors, one per layer.
    pub power: Vec<PowerIterState>,
}

impl ResidualBlock {
    /// The residual branch `g(x)`.
    pub fn residual(&self, x: &Tensor) -> Result<Tensor> {
        self.branch.forward(x)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let g = self.residual(x)?;
        x.zip_map(&g, |a, b| a + b)
    }

    /// `iters` fixed-point steps `x <- y - g(x)` from `x = y`.
    pub fn inverse(&self, y: &Tensor, iters: usize) -> Result<Tensor> {
        Ok(self.inverse_trace(y, iters)?.pop().expect("x0 is always present"))
    }

    /// All iterates `x_0 = y, x_1, ..., x_iters`.
    pub fn inverse_trace(&self, y: &Tensor, iters: usize) -> Result<Vec<Tensor>> {
        let mut xs = vec![y.clone()];
        for _ in 0..iters {
            let g = self.residual(xs.last().expect("non-empty"))?;
            xs.push(y.zip_map(&g, |a, b| a - b)?);
        }
        Ok(xs)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InvSharpNet {
    pub geometry: Geometry,
    pub blocks: Vec<ResidualBlock>,
    pub budget: LipschitzBudget,
    pub fixed_point_iters: usize,
    /// Spatial size the per-layer operator norms are measured on.
    pub image_hw: (usize, usize),
}

impl InvSharpNet {
    fn power_states(geometry: &Geometry, hw: (usize, usize), rng: &mut impl Rng) -> Vec<Vec<PowerIterState>> {
        (0..geometry.blocks)
            .map(|_| {
                geometry.widths[..geometry.layers()]
                    .iter()
                    .map(|&cin| PowerIterState::seeded(cin, hw.0, hw.1, rng.random()))
                    .collect()
            })
            .collect()
    }

    /// Random initialization projected onto the budget.
    pub fn new_random(
        geometry: Geometry,
        budget: LipschitzBudget,
        fixed_point_iters: usize,
        image_hw: (usize, usize),
        seed: u64,
    ) -> Result<Self> {
        if fixed_point_iters == 0 {
            return Err(Error::InvalidArgument("fixed_point_iters must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let branches: Vec<ConvStack> = (0..geometry.blocks).map(|_| ConvStack::init(&geometry.widths, &mut rng)).collect();
        let power = Self::power_states(&geometry, image_hw, &mut rng);
        let blocks = branches
            .into_iter()
            .zip(power)
            .map(|(branch, power)| ResidualBlock { branch, power })
            .collect();
        let mut net = Self {
            geometry,
            blocks,
            budget,
            fixed_point_iters,
            image_hw,
        };
        net.enforce_budget()?;
        Ok(net)
    }

    /// All weights and biases zero: both directions are the identity.
    pub fn identity(geometry: Geometry, budget: LipschitzBudget, fixed_point_iters: usize, image_hw: (usize, usize)) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let power = Self::power_states(&geometry, image_hw, &mut rng);
        let blocks = power
            .into_iter()
            .map(|power| ResidualBlock {
                branch: ConvStack::zeros(&geometry.widths),
                power,
            })
            .collect();
        Self {
            geometry,
            blocks,
            budget,
            fixed_point_iters,
            image_hw,
        }
    }

    pub fn c(&self) -> f64 {
        self.budget.c
    }

    /// Project every convolution back onto the budget.
    pub fn enforce_budget(&mut self) -> Result<()> {
        for block in &mut self.blocks {
            for (layer, state) in block.branch.layers.iter_mut().zip(&mut block.power) {
                layer.weight = enforce_budget_with_state(&layer.weight, &self.budget, state)?;
            }
        }
        Ok(())
    }

    pub fn params(&self) -> impl Iterator<Item = &Tensor> {
        self.blocks.iter().flat_map(|b| b.branch.params())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.blocks.iter_mut().flat_map(|b| b.branch.params_mut())
    }

    fn check_state(&self, x: &Tensor) -> Result<()> {
        let (b, c, ..) = x.dims4()?;
        if c != 2 {
            return Err(Error::shape("InvSharpNet", "channel axis", 2, c));
        }
        if b != 1 {
            return Err(Error::shape("InvSharpNet", "batch axis", 1, b));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_state(x)?;
        let mut h = x.clone();
        for block in &self.blocks {
            h = block.forward(&h)?;
        }
        Ok(h)
    }

    /// Inverse with the configured number of fixed-point iterations.
    pub fn inverse(&self, y: &Tensor) -> Result<Tensor> {
        self.inverse_with(y, self.fixed_point_iters)
    }

    pub fn inverse_with(&self, y: &Tensor, iters: usize) -> Result<Tensor> {
        self.check_state(y)?;
        let mut h = y.clone();
        for block in self.blocks.iter().rev() {
            h = block.inverse(&h, iters)?;
        }
        Ok(h)
    }

    /// Inverse pass on `(I, Y)`, split into its two output channels.
    pub fn backward_pass(&self, truth: &Tensor, undersampled: &Tensor) -> Result<(Tensor, Tensor)> {
        let x = Tensor::stack_channels(&[truth, undersampled])?;
        let out = self.inverse(&x)?;
        Ok((out.channel(0)?, out.channel(1)?))
    }

    /// Forward pass on `(R, R)`, channel 0, without data consistency.
    pub fn sharpen_raw(&self, recon: &Tensor) -> Result<Tensor> {
        let x = Tensor::stack_channels(&[recon, recon])?;
        self.forward(&x)?.channel(0)
    }

    /// Sharpen a reconstruction and restore the measured k-space samples.
    pub fn sharpen(&self, recon: &Tensor, dc: &DcConfig) -> Result<Tensor> {
        apply_dc(&self.sharpen_raw(recon)?, dc)
    }

    /// `|channel0(forward(inverse((I, Y)))) - I|` per pixel.
    pub fn inversion_error_map(&self, truth: &Tensor, undersampled: &Tensor) -> Result<Tensor> {
        let x = Tensor::stack_channels(&[truth, undersampled])?;
        let round = self.forward(&self.inverse(&x)?)?.channel(0)?;
        round.zip_map(truth, |a, b| (a - b).abs())
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundNet<'t> {
        BoundNet {
            blocks: self.blocks.iter().map(|b| b.branch.bind(tape)).collect(),
            fixed_point_iters: self.fixed_point_iters,
        }
    }

    pub fn to_container(&self) -> Container {
        let widths: Vec<String> = self.geometry.widths.iter().map(|w| w.to_string()).collect();
        let header = vec![
            ("blocks", self.geometry.blocks.to_string()),
            ("widths", widths.join(",")),
            ("kernel", KERNEL_SIZE.to_string()),
            ("c", self.budget.c.to_string()),
            ("power_iters", self.budget.power_iters.to_string()),
            ("tol", self.budget.tol.to_string()),
            ("fixed_point_iters", self.fixed_point_iters.to_string()),
            ("image", format!("{} {}", self.image_hw.0, self.image_hw.1)),
            ("channels", CHANNEL_CONVENTION.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        let mut tensors = Vec::new();
        for (bi, block) in self.blocks.iter().enumerate() {
            for (li, (layer, state)) in block.branch.layers.iter().zip(&block.power).enumerate() {
                tensors.push((format!("block{bi}.conv{li}.weight"), layer.weight.clone()));
                tensors.push((format!("block{bi}.conv{li}.bias"), layer.bias.clone()));
                tensors.push((format!("block{bi}.conv{li}.power"), state.vector().clone()));
            }
        }
        Container { header, tensors }
    }

    pub fn from_container(c: &Container) -> std::result::Result<Self, String> {
        let get = |k: &str| c.get(k).ok_or_else(|| format!("missing header field {k:?}"));
        let num = |k: &str| -> std::result::Result<usize, String> {
            get(k)?.parse().map_err(|_| format!("bad {k}"))
        };
        let float = |k: &str| -> std::result::Result<f64, String> {
            get(k)?.parse().map_err(|_| format!("bad {k}"))
        };
        if get("channels")? != CHANNEL_CONVENTION {
            return Err(format!("unsupported channel convention {:?}", get("channels")?));
        }
        if num("kernel")? != KERNEL_SIZE {
            return Err(format!("unsupported kernel size {}", num("kernel")?));
        }
        let widths = get("widths")?
            .split(',')
            .map(|w| w.parse::<usize>().map_err(|_| "bad widths".to_string()))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        if widths.len() < 2 || widths[0] != 2 || widths[widths.len() - 1] != 2 {
            return Err(format!("widths {widths:?} must start and end with 2 channels"));
        }
        let geometry = Geometry {
            blocks: num("blocks")?,
            widths,
        };
        let budget = LipschitzBudget::new(float("c")?, num("power_iters")?, float("tol")?).map_err(|e| e.to_string())?;
        let image_hw = get("image")?
            .split_once(' ')
            .and_then(|(h, w)| Some((h.parse().ok()?, w.parse().ok()?)))
            .ok_or("bad image size")?;
        let mut blocks = Vec::with_capacity(geometry.blocks);
        for bi in 0..geometry.blocks {
            let mut layers = Vec::new();
            let mut power = Vec::new();
            for li in 0..geometry.layers() {
                let fetch = |what: &str| {
                    c.tensor(&format!("block{bi}.conv{li}.{what}"))
                        .cloned()
                        .ok_or_else(|| format!("missing tensor block{bi}.conv{li}.{what}"))
                };
                let (cin, cout) = (geometry.widths[li], geometry.widths[li + 1]);
                let weight = fetch("weight")?;
                if weight.shape() != [cout, cin, KERNEL_SIZE, KERNEL_SIZE] {
                    return Err(format!("block{bi}.conv{li}.weight has shape {:?}", weight.shape()));
                }
                let bias = fetch("bias")?;
                if bias.shape() != [cout] {
                    return Err(format!("block{bi}.conv{li}.bias has shape {:?}", bias.shape()));
                }
                let v = fetch("power")?;
                if v.shape() != [1, cin, image_hw.0, image_hw.1] {
                    return Err(format!("block{bi}.conv{li}.power has shape {:?}", v.shape()));
                }
                layers.push(ConvLayer { weight, bias });
                power.push(PowerIterState::from_vector(v).map_err(|e| e.to_string())?);
            }
            blocks.push(ResidualBlock {
                branch: ConvStack { layers },
                power,
            });
        }
        Ok(Self {
            geometry,
            blocks,
            budget,
            fixed_point_iters: num("fixed_point_iters")?,
            image_hw,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().write(path, CHECKPOINT_TAG)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = Container::read(path, CHECKPOINT_TAG)?;
        Self::from_container(&c).map_err(|m| Error::format(path, m))
    }
}

/// An [`InvSharpNet`] whose parameters are leaves on a tape. Gradients flow
/// through the unrolled fixed-point iterations of the inverse.
pub struct BoundNet<'t> {
    blocks: Vec<BoundStack<'t>>,
    fixed_point_iters: usize,
}

impl<'t> BoundNet<'t> {
    pub fn forward(&self, x: Var<'t>) -> Result<Var<'t>> {
        let mut h = x;
        for b in &self.blocks {
            h = h.add(b.forward(h)?)?;
        }
        Ok(h)
    }

    pub fn inverse(&self, y: Var<'t>) -> Result<Var<'t>> {
        let mut h = y;
        for b in self.blocks.iter().rev() {
            let target = h;
            let mut x = target;
            for _ in 0..self.fixed_point_iters {
                x = target.sub(b.forward(x)?)?;
            }
            h = x;
        }
        Ok(h)
    }

    /// Parameter handles in the order of [`InvSharpNet::params`].
    pub fn vars(&self) -> Vec<Var<'t>> {
        self.blocks.iter().flat_map(|b| b.vars()).collect()
    }
}

/// Sampling mask and measured k-space for the data-consistency layer.
#[derive(Clone, Debug, PartialEq)]
pub struct DcConfig {
    mask: Tensor,
    measured: ComplexGrid,
}

impl DcConfig {
    /// `mask` is `H x W` (or `(1, 1, H, W)`) with entries in {0, 1};
    /// `measured` must vanish wherever the mask is 0.
    pub fn new(mask: Tensor, measured: ComplexGrid) -> Result<Self> {
        let (h, w) = mask.hw()?;
        let mask = mask.reshape(&[h, w])?;
        let (mh, mw) = measured.hw();
        if mh != h {
            return Err(Error::shape("DcConfig", "k-space height", h, mh));
        }
        if mw != w {
            return Err(Error::shape("DcConfig", "k-space width", w, mw));
        }
        if let Some(v) = mask.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidArgument(format!("mask entry {v} is not 0 or 1")));
        }
        let stray = mask
            .data()
            .iter()
            .zip(measured.re.data().iter().zip(measured.im.data()))
            .any(|(&m, (&r, &i))| m == 0.0 && (r != 0.0 || i != 0.0));
        if stray {
            return Err(Error::InvalidArgument("measured k-space is nonzero outside the mask".into()));
        }
        Ok(Self { mask, measured })
    }

    /// No samples: data consistency is a no-op.
    pub fn empty(h: usize, w: usize) -> Self {
        Self {
            mask: Tensor::zeros(&[h, w]),
            measured: ComplexGrid::zeros(h, w),
        }
    }

    /// Every bin measured.
    pub fn full(kspace: ComplexGrid) -> Self {
        let (h, w) = kspace.hw();
        Self {
            mask: Tensor::full(&[h, w], 1.0),
            measured: kspace,
        }
    }

    pub fn mask(&self) -> &Tensor {
        &self.mask
    }

    pub fn measured(&self) -> &ComplexGrid {
        &self.measured
    }
}

/// Replace the sampled bins of `fft2(img)` by the measurements and return
/// the real part of the inverse transform.
///
/// The output's sampled bins reproduce the measurements exactly (up to
/// rounding) when the mask is conjugate-symmetric, which holds for masks from
/// [`crate::mri_sim::make_mask`]; otherwise dropping the imaginary part mixes
/// each bin with its mirror.
pub fn apply_dc(img: &Tensor, dc: &DcConfig) -> Result<Tensor> {
    let (h, w) = img.hw()?;
    let (mh, mw) = dc.measured.hw();
    if (mh, mw) != (h, w) {
        return Err(Error::shape("apply_dc", if mh != h { "height" } else { "width" }, if mh != h { mh } else { mw }, if mh != h { h } else { w }));
    }
    let mut k = fft2(img)?;
    for (i, &m) in dc.mask.data().iter().enumerate() {
        if m == 1.0 {
            k.re.data_mut()[i] = dc.measured.re.data()[i];
            k.im.data_mut()[i] = dc.measured.im.data()[i];
        }
    }
    ifft2_real(&k)?.reshape(img.shape())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{backprop, finite_diff_grad, relative_error};

    fn random_state(h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(&[1, 2, h, w], (0..2 * h * w).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    fn random_image(h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::image(h, w, (0..h * w).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    fn tiny(blocks: usize, c: f64, iters: usize, seed: u64) -> InvSharpNet {
        let budget = LipschitzBudget::new(c, 5, 0.02).unwrap();
        InvSharpNet::new_random(Geometry::new(blocks, 3, 6).unwrap(), budget, iters, (8, 8), seed).unwrap()
    }

    #[test]
    fn geometry_param_counts() {
        // 12 * (2*128*9 + 3*128*128*9 + 128*2*9 + 4*128 + 2)
        assert_eq!(Geometry::full().param_count(), 5_369_880);
        assert_eq!(Geometry::desk().widths, vec![2, 32, 32, 2]);
        assert_eq!(Geometry::desk().param_count(), 4 * (2 * 32 * 9 + 32 * 32 * 9 + 32 * 2 * 9 + 32 + 32 + 2));
        assert_eq!(Geometry::new(1, 1, 0).unwrap().widths, vec![2, 2]);
        assert!(Geometry::new(0, 3, 8).is_err());
    }

    #[test]
    fn zero_weights_are_identity() {
        let net = InvSharpNet::identity(Geometry::new(3, 3, 4).unwrap(), LipschitzBudget::default(), 2, (8, 8));
        let x = random_state(8, 8, 1);
        assert_eq!(net.forward(&x).unwrap(), x);
        assert_eq!(net.inverse(&x).unwrap(), x);
        assert_eq!(net.blocks[0].inverse(&x, 1).unwrap(), x);
        let (i, y) = (random_image(8, 8, 2), random_image(8, 8, 3));
        let (a, b) = net.backward_pass(&i, &y).unwrap();
        assert_eq!((a, b), (i.clone(), y.clone()));
        assert!(net.inversion_error_map(&i, &y).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn block_forward_is_x_plus_g() {
        let net = tiny(1, 0.7, 2, 4);
        let x = random_state(8, 8, 5);
        let g = net.blocks[0].residual(&x).unwrap();
        let expected = x.zip_map(&g, |a, b| a + b).unwrap();
        assert_eq!(net.blocks[0].forward(&x).unwrap(), expected);
    }

    #[test]
    fn scalar_fixed_point_surrogate() {
        // g(x) = 0.5 x as a 1-channel pointwise kernel; y = 1.5 -> x* = 1.
        let mut k = Tensor::zeros(&[1, 1, 3, 3]);
        k.data_mut()[4] = 0.5;
        let block = ResidualBlock {
            branch: ConvStack {
                layers: vec![ConvLayer {
                    weight: k,
                    bias: Tensor::zeros(&[1]),
                }],
            },
            power: vec![PowerIterState::seeded(1, 1, 1, 0)],
        };
        let y = Tensor::full(&[1, 1, 1, 1], 1.5);
        let xs: Vec<f64> = block.inverse_trace(&y, 30).unwrap().iter().map(|t| t.item()).collect();
        assert_eq!(&xs[..3], &[1.5, 0.75, 1.125]);
        for k in 1..xs.len() - 1 {
            let ratio = (xs[k + 1] - xs[k]).abs() / (xs[k] - xs[k - 1]).abs();
            assert!((ratio - 0.5).abs() < 1e-9);
        }
        assert!((xs[30] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn roundtrip_with_many_iterations() {
        for seed in 0..3 {
            let net = tiny(3, 0.7, 30, seed);
            let y = random_state(8, 8, seed + 10);
            let back = net.forward(&net.inverse(&y).unwrap()).unwrap();
            assert!(back.max_abs_diff(&y) < 1e-6);
            let x = random_state(8, 8, seed + 20);
            let back = net.inverse(&net.forward(&x).unwrap()).unwrap();
            assert!(back.max_abs_diff(&x) < 1e-6);
            let block = &net.blocks[0];
            let inv = block.inverse(&y, 30).unwrap();
            assert!(block.forward(&inv).unwrap().max_abs_diff(&y) < 1e-8);
        }
    }

    #[test]
    fn two_iteration_error_obeys_contraction_bound() {
        let c: f64 = 0.7;
        let net = tiny(1, c, 2, 7);
        let block = &net.blocks[0];
        let y = random_state(8, 8, 8);
        let xs = block.inverse_trace(&y, 2).unwrap();
        let exact = block.inverse(&y, 200).unwrap();
        let step = xs[1].zip_map(&xs[0], |a, b| a - b).unwrap().norm();
        let err = xs[2].zip_map(&exact, |a, b| a - b).unwrap().norm();
        assert!(err > 0.0);
        assert!(err <= c * c / (1.0 - c) * step, "err {err} bound {}", c * c / (1.0 - c) * step);
    }

    #[test]
    fn lipschitz_bounds_sampled() {
        let c = 0.7;
        let net = tiny(1, c, 40, 9);
        let block = &net.blocks[0];
        for s in 0..50 {
            let a = random_state(8, 8, 100 + s);
            let b = random_state(8, 8, 200 + s);
            let d = a.zip_map(&b, |p, q| p - q).unwrap().norm();
            let ga = block.residual(&a).unwrap();
            let gb = block.residual(&b).unwrap();
            assert!(ga.zip_map(&gb, |p, q| p - q).unwrap().norm() <= c * d);
            let fa = block.forward(&a).unwrap();
            let fb = block.forward(&b).unwrap();
            assert!(fa.zip_map(&fb, |p, q| p - q).unwrap().norm() <= (1.0 + c) * d);
            let ia = block.inverse(&a, 40).unwrap();
            let ib = block.inverse(&b, 40).unwrap();
            assert!(ia.zip_map(&ib, |p, q| p - q).unwrap().norm() <= d / (1.0 - c) * (1.0 + 1e-9));
        }
    }

    #[test]
    fn bound_net_matches_plain_net() {
        let net = tiny(2, 0.7, 2, 11);
        let x = random_state(8, 8, 12);
        let tape = Tape::new();
        let bound = net.bind(&tape);
        let xv = tape.constant(x.clone());
        assert!(bound.forward(xv).unwrap().value().max_abs_diff(&net.forward(&x).unwrap()) < 1e-14);
        assert!(bound.inverse(xv).unwrap().value().max_abs_diff(&net.inverse(&x).unwrap()) < 1e-14);
        assert_eq!(bound.vars().len(), net.params().count());
    }

    #[test]
    fn unrolled_inverse_gradient_matches_finite_differences() {
        let net = tiny(2, 0.7, 2, 13);
        let (i, y) = (random_image(8, 8, 14), random_image(8, 8, 15));
        let r = random_image(8, 8, 16);
        let loss_of = |n: &InvSharpNet| {
            let (a, _) = n.backward_pass(&i, &y).unwrap();
            crate::metrics::mae(&a, &r).unwrap()
        };
        let tape = Tape::new();
        let bound = net.bind(&tape);
        let x = tape.constant(Tensor::stack_channels(&[&i, &y]).unwrap());
        let out = bound.inverse(x).unwrap();
        let loss = crate::losses::mae(out.channel(0).unwrap(), tape.constant(r.clone())).unwrap();
        let grads = backprop(&tape, loss).unwrap();
        for (pi, var) in bound.vars().into_iter().enumerate().step_by(2) {
            let analytic = grads.get(var).unwrap();
            let base = net.params().nth(pi).unwrap().clone();
            let fd = finite_diff_grad(
                |t| {
                    let mut n = net.clone();
                    *n.params_mut().nth(pi).unwrap() = t.clone();
                    loss_of(&n)
                },
                &base,
                1e-6,
            );
            let err = relative_error(analytic, &fd, 1e-8);
            assert!(err < 1e-5, "param {pi}: rel err {err}");
        }
    }

    #[test]
    fn dc_full_and_empty_masks() {
        let img = random_image(8, 8, 20);
        let truth = random_image(8, 8, 21);
        let full = DcConfig::full(fft2(&truth).unwrap());
        assert!(apply_dc(&img, &full).unwrap().max_abs_diff(&truth) < 1e-12);
        let empty = DcConfig::empty(8, 8);
        assert!(apply_dc(&img, &empty).unwrap().max_abs_diff(&img) < 1e-12);
    }

    #[test]
    fn dc_rejects_bad_configs() {
        let k = fft2(&random_image(8, 8, 22)).unwrap();
        assert!(DcConfig::new(Tensor::full(&[8, 8], 0.5), k.clone()).is_err());
        assert!(DcConfig::new(Tensor::zeros(&[8, 8]), k.clone()).is_err());
        assert!(DcConfig::new(Tensor::full(&[8, 4], 1.0), k.clone()).is_err());
        let dc = DcConfig::full(k);
        assert!(apply_dc(&Tensor::zeros(&[1, 1, 4, 8]), &dc).is_err());
    }

    #[test]
    fn sharpen_trivial_cases() {
        let net = InvSharpNet::identity(Geometry::new(2, 2, 4).unwrap(), LipschitzBudget::default(), 2, (8, 8));
        let r = random_image(8, 8, 23);
        let truth = random_image(8, 8, 24);
        let out = net.sharpen(&r, &DcConfig::full(fft2(&truth).unwrap())).unwrap();
        assert!(out.max_abs_diff(&truth) < 1e-12);
        let out = net.sharpen(&r, &DcConfig::empty(8, 8)).unwrap();
        assert!(out.max_abs_diff(&r) < 1e-12);
    }

    #[test]
    fn checkpoint_roundtrip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let net = tiny(2, 0.7, 2, 30);
        net.save(&path).unwrap();
        let back = InvSharpNet::load(&path).unwrap();
        assert_eq!(back.geometry, net.geometry);
        assert_eq!(back.fixed_point_iters, 2);
        assert_eq!(back.image_hw, (8, 8));
        for (a, b) in back.params().zip(net.params()) {
            assert!(a.max_abs_diff(b) < 1e-6);
        }
        let bytes = std::fs::read(&path).unwrap();
        back.save(&path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), bytes);

        let mut c = net.to_container();
        c.tensors.pop();
        assert!(InvSharpNet::from_container(&c).is_err());
    }

    proptest::proptest! {
        #![proptest_config(proptest::test_runner::Config::with_cases(16))]
        #[test]
        fn dc_is_idempotent_and_keeps_measured_bins(seed in 0u64..1000, accel in 2.0f64..6.0) {
            let truth = random_state(16, 16, seed).channel(0).unwrap();
            let mask = crate::mri_sim::make_mask(16, 16, accel, 0.1, seed).unwrap();
            let (_, measured) = crate::mri_sim::undersample(&truth, &mask.grid).unwrap();
            let dc = DcConfig::new(mask.grid.clone(), measured.clone()).unwrap();
            let img = random_state(16, 16, seed + 1).channel(1).unwrap();
            let once = apply_dc(&img, &dc).unwrap();
            proptest::prop_assert!(apply_dc(&once, &dc).unwrap().max_abs_diff(&once) < 1e-12);
            let k = fft2(&once).unwrap();
            for (i, &m) in mask.grid.data().iter().enumerate() {
                if m == 1.0 {
                    proptest::prop_assert!((k.re.data()[i] - measured.re.data()[i]).abs() < 1e-10);
                    proptest::prop_assert!((k.im.data()[i] - measured.im.data()[i]).abs() < 1e-10);
                }
            }
        }

        #[test]
        fn random_networks_invert(seed in 0u64..1000) {
            let net = InvSharpNet::new_random(Geometry::new(2, 3, 4).unwrap(), LipschitzBudget::default(), 30, (8, 8), seed).unwrap();
            let y = random_state(8, 8, seed);
            proptest::prop_assert!(net.forward(&net.inverse(&y).unwrap()).unwrap().max_abs_diff(&y) < 1e-8);
        }
    }
}
