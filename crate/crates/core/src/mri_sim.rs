//! Synthetic single-coil MRI data.
//!
//! Phantoms are sums of random ellipses with sharp edges (plus an optional
//! high-frequency texture), normalized by their own maximum. K-space is the
//! orthonormal FFT of the real image in unshifted layout, so column 0 holds
//! the DC term. Masks select whole columns (1D Cartesian lines).
//!
//! Masks are symmetric under `kx -> -kx (mod W)`. Dropping the imaginary part
//! of the inverse transform then loses nothing, so the under-sampled image
//! `Y = real(ifft2(M * K))` reproduces the measurements exactly, which the
//! data-consistency layer relies on.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{backprop, Tape};
use crate::error::{Error, Result};
use crate::fft::{fft2, ifft2_real};
use crate::io::{quantize_f32, read_ivt1, write_ivt1, Container};
use crate::net::{apply_dc, ConvStack, DcConfig};
use crate::tensor::{ComplexGrid, Tensor};
use crate::train::{adam_step, AdamState};

pub const DATASET_FORMAT: &str = "INVSHARP-DATASET 1";
pub const RECON_TAG: &str = "INVSHARP-RECON 1";
pub const MANIFEST: &str = "manifest";
pub const BASELINE_FILE: &str = "baseline.ckpt";
pub const SAMPLE_FIELDS: [&str; 6] = ["I", "Y", "M", "MK_re", "MK_im", "R"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSpec {
    pub seed: u64,
    /// Image height and width; a power of two.
    pub size: usize,
    pub min_ellipses: usize,
    pub max_ellipses: usize,
    pub min_intensity: f64,
    pub max_intensity: f64,
    /// Relative amplitude of a multiplicative high-frequency texture.
    pub texture: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            size: 64,
            min_ellipses: 4,
            max_ellipses: 10,
            min_intensity: 0.1,
            max_intensity: 1.0,
            texture: 0.05,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.size.is_power_of_two() || self.size < 2 {
            return Err(Error::InvalidArgument(format!("phantom size {} must be a power of two", self.size)));
        }
        if self.min_ellipses > self.max_ellipses {
            return Err(Error::InvalidArgument("min_ellipses exceeds max_ellipses".into()));
        }
        if !(self.min_intensity <= self.max_intensity) {
            return Err(Error::InvalidArgument("min_intensity exceeds max_intensity".into()));
        }
        if !(0.0..1.0).contains(&self.texture) {
            return Err(Error::InvalidArgument(format!("texture {} must lie in [0, 1)", self.texture)));
        }
        Ok(())
    }
}

/// Deterministic in `(spec.seed, index)`; values in `[0, 1]` with maximum 1
/// unless the image is empty.
pub fn generate_phantom(spec: &PhantomSpec, index: u64) -> Result<Tensor> {
    spec.validate()?;
    let n = spec.size;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index);
    let count = rng.random_range(spec.min_ellipses..=spec.max_ellipses);
    let mut img = vec![0.0; n * n];
    let coord = |i: usize| (2 * i + 1) as f64 / n as f64 - 1.0;
    for e in 0..count {
        // The first ellipse is a large body outline, the rest are structures.
        let (cx, cy, a, b) = if e == 0 {
            (
                rng.random_range(-0.1..0.1),
                rng.random_range(-0.1..0.1),
                rng.random_range(0.6..0.9),
                rng.random_range(0.6..0.9),
            )
        } else {
            (
                rng.random_range(-0.6..0.6),
                rng.random_range(-0.6..0.6),
                rng.random_range(0.05..0.4),
                rng.random_range(0.05..0.4),
            )
        };
        let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let amp = rng.random_range(spec.min_intensity..=spec.max_intensity);
        let (s, c) = theta.sin_cos();
        for r in 0..n {
            let y = coord(r) - cy;
            for col in 0..n {
                let x = coord(col) - cx;
                let u = (x * c + y * s) / a;
                let v = (-x * s + y * c) / b;
                if u * u + v * v <= 1.0 {
                    img[r * n + col] += amp;
                }
            }
        }
    }
    if spec.texture > 0.0 && count > 0 {
        let f: f64 = rng.random_range(0.3..0.45);
        let dir: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let (fy, fx) = (f * dir.sin(), f * dir.cos());
        for r in 0..n {
            for col in 0..n {
                let arg = std::f64::consts::TAU * (fx * col as f64 + fy * r as f64) + phase;
                img[r * n + col] *= 1.0 + spec.texture * arg.sin();
            }
        }
    }
    let max = img.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        img.iter_mut().for_each(|v| *v /= max);
    }
    Tensor::image(n, n, img)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaskPolicy {
    #[serde(rename = "fixed-mask")]
    Fixed,
    #[serde(rename = "per-sample-seeded")]
    PerSample,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskSpec {
    pub acceleration: f64,
    pub center_fraction: f64,
    pub seed: u64,
    pub policy: MaskPolicy,
}

impl Default for MaskSpec {
    fn default() -> Self {
        Self {
            acceleration: 4.0,
            center_fraction: 0.08,
            seed: 0,
            policy: MaskPolicy::Fixed,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UndersamplingMask {
    /// `H x W` grid of 0/1, constant along each column.
    pub grid: Tensor,
    /// Sampled column indices in ascending order.
    pub columns: Vec<usize>,
    pub acceleration: f64,
    pub center_fraction: f64,
    pub seed: u64,
}

/// Number of fully sampled low-frequency columns: `round(cf * W)`, bumped to
/// the next odd count so the block is centred on DC.
pub fn center_columns(w: usize, center_fraction: f64) -> usize {
    let n = (center_fraction * w as f64).round() as usize;
    if n > 0 && n % 2 == 0 {
        (n + 1).min(w)
    } else {
        n.min(w)
    }
}

/// Column mask with `ceil(W / acceleration)` sampled columns, the central
/// block always included and the rest drawn at random in `(kx, -kx)` pairs.
pub fn make_mask(h: usize, w: usize, acceleration: f64, center_fraction: f64, seed: u64) -> Result<UndersamplingMask> {
    if !(acceleration >= 1.0) {
        return Err(Error::InvalidArgument(format!("acceleration {acceleration} must be at least 1")));
    }
    if !(0.0..1.0).contains(&center_fraction) {
        return Err(Error::InvalidArgument(format!("center fraction {center_fraction} must lie in [0, 1)")));
    }
    if w < 2 || !w.is_power_of_two() {
        return Err(Error::InvalidArgument(format!("mask width {w} must be a power of two")));
    }
    let total = (w as f64 / acceleration).ceil() as usize;
    let n_center = center_columns(w, center_fraction);
    if n_center > total {
        return Err(Error::InvalidArgument(format!(
            "{n_center} central columns exceed the budget of {total} at acceleration {acceleration}"
        )));
    }
    let mut cols = BTreeSet::new();
    if n_center > 0 {
        let half = (n_center - 1) / 2;
        cols.insert(0);
        for k in 1..=half {
            cols.insert(k);
            cols.insert(w - k);
        }
    }
    let nyquist = w / 2;
    let singles: Vec<usize> = [nyquist, 0].into_iter().filter(|c| !cols.contains(c)).collect();
    let mut pairs: Vec<usize> = (1..nyquist).filter(|k| !cols.contains(k)).collect();
    let remaining = total - cols.len();
    let mut n_single = remaining % 2;
    let mut n_pairs = remaining / 2;
    if n_pairs > pairs.len() {
        n_pairs -= 1;
        n_single += 2;
    }
    if n_single > singles.len() || n_pairs > pairs.len() {
        return Err(Error::InvalidArgument(format!("cannot place {total} symmetric columns in width {w}")));
    }
    cols.extend(&singles[..n_single]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pairs.shuffle(&mut rng);
    for &k in &pairs[..n_pairs] {
        cols.insert(k);
        cols.insert(w - k);
    }
    debug_assert_eq!(cols.len(), total);
    let columns: Vec<usize> = cols.into_iter().collect();
    let mut grid = Tensor::zeros(&[h, w]);
    for r in 0..h {
        for &c in &columns {
            grid.data_mut()[r * w + c] = 1.0;
        }
    }
    Ok(UndersamplingMask {
        grid,
        columns,
        acceleration,
        center_fraction,
        seed,
    })
}

/// `MK = M * fft2(I)` and `Y = real(ifft2(MK))`.
pub fn undersample(truth: &Tensor, mask: &Tensor) -> Result<(Tensor, ComplexGrid)> {
    let (h, w) = truth.hw()?;
    let (mh, mw) = mask.hw()?;
    if mh != h {
        return Err(Error::shape("undersample", "mask height", h, mh));
    }
    if mw != w {
        return Err(Error::shape("undersample", "mask width", w, mw));
    }
    let mut k = fft2(truth)?;
    for (i, &m) in mask.data().iter().enumerate() {
        if m == 0.0 {
            k.re.data_mut()[i] = 0.0;
            k.im.data_mut()[i] = 0.0;
        }
    }
    let y = ifft2_real(&k)?;
    Ok((y, k))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReconMode {
    #[serde(rename = "zero-filled")]
    ZeroFilled,
    #[serde(rename = "trained")]
    Trained,
}

/// Baseline reconstructor settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconSpec {
    pub mode: ReconMode,
    pub layers: usize,
    pub channels: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ReconSpec {
    fn default() -> Self {
        Self {
            mode: ReconMode::Trained,
            layers: 5,
            channels: 16,
            iterations: 300,
            learning_rate: 1e-3,
            batch_size: 8,
            seed: 0,
        }
    }
}

/// Plain (non-invertible) convolutional reconstructor `Y -> Y + h(Y)`,
/// trained with a pixelwise MAE only.
#[derive(Clone, Debug, PartialEq)]
pub struct ReconNet {
    pub stack: ConvStack,
}

impl ReconNet {
    pub fn new(layers: usize, channels: usize, seed: u64) -> Result<Self> {
        if layers == 0 || (layers > 1 && channels == 0) {
            return Err(Error::InvalidArgument("reconstructor needs at least one layer and one channel".into()));
        }
        let mut widths = vec![1];
        widths.extend(std::iter::repeat_n(channels, layers - 1));
        widths.push(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            stack: ConvStack::init(&widths, &mut rng),
        })
    }

    pub fn forward(&self, y: &Tensor) -> Result<Tensor> {
        let (b, c, ..) = y.dims4()?;
        if c != 1 {
            return Err(Error::shape("ReconNet", "channel axis", 1, c));
        }
        if b != 1 {
            return Err(Error::shape("ReconNet", "batch axis", 1, b));
        }
        let h = self.stack.forward(y)?;
        y.zip_map(&h, |a, b| a + b)
    }

    /// Minimize `mae(Y + h(Y), I)` with Adam over shuffled mini-batches.
    pub fn fit(&mut self, pairs: &[(Tensor, Tensor)], spec: &ReconSpec) -> Result<Vec<f64>> {
        if pairs.is_empty() || spec.iterations == 0 {
            return Ok(Vec::new());
        }
        if spec.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(1);
        let mut adam = AdamState::new(self.stack.params());
        let mut order: Vec<usize> = Vec::new();
        let mut losses = Vec::with_capacity(spec.iterations);
        for _ in 0..spec.iterations {
            let mut grads: Vec<Tensor> = self.stack.params().map(|p| Tensor::zeros(p.shape())).collect();
            let mut loss_sum = 0.0;
            for _ in 0..spec.batch_size {
                if order.is_empty() {
                    order = (0..pairs.len()).collect();
                    order.shuffle(&mut rng);
                }
                let (y, truth) = &pairs[order.pop().expect("refilled")];
                let tape = Tape::new();
                let bound = self.stack.bind(&tape);
                let yv = tape.constant(y.clone());
                let out = yv.add(bound.forward(yv)?)?;
                let loss = crate::losses::mae(out, tape.constant(truth.clone()))?;
                loss_sum += loss.value().item();
                let g = backprop(&tape, loss)?;
                for (acc, var) in grads.iter_mut().zip(bound.vars()) {
                    let gv = g.get(var).expect("parameter reaches the loss");
                    acc.data_mut().iter_mut().zip(gv.data()).for_each(|(a, b)| *a += b);
                }
            }
            let inv = 1.0 / spec.batch_size as f64;
            grads.iter_mut().for_each(|t| t.data_mut().iter_mut().for_each(|v| *v *= inv));
            let loss = loss_sum * inv;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("baseline training loss at step {}", losses.len())));
            }
            losses.push(loss);
            let mut params: Vec<&mut Tensor> = self.stack.params_mut().collect();
            adam_step(&mut params, &grads, &mut adam, spec.learning_rate)?;
        }
        Ok(losses)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let widths: Vec<String> = self.stack.widths().iter().map(|w| w.to_string()).collect();
        let mut tensors = Vec::new();
        for (i, l) in self.stack.layers.iter().enumerate() {
            tensors.push((format!("conv{i}.weight"), l.weight.clone()));
            tensors.push((format!("conv{i}.bias"), l.bias.clone()));
        }
        Container {
            header: vec![("widths".into(), widths.join(","))],
            tensors,
        }
        .write(path, RECON_TAG)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = Container::read(path, RECON_TAG)?;
        let widths: Vec<usize> = c
            .get("widths")
            .ok_or_else(|| Error::format(path, "missing widths"))?
            .split(',')
            .map(|w| w.parse().map_err(|_| Error::format(path, "bad widths")))
            .collect::<Result<_>>()?;
        let mut stack = ConvStack::zeros(&widths);
        for (i, l) in stack.layers.iter_mut().enumerate() {
            for (name, slot) in [("weight", &mut l.weight), ("bias", &mut l.bias)] {
                let t = c
                    .tensor(&format!("conv{i}.{name}"))
                    .ok_or_else(|| Error::format(path, format!("missing conv{i}.{name}")))?;
                if t.shape() != slot.shape() {
                    return Err(Error::format(path, format!("conv{i}.{name} has shape {:?}", t.shape())));
                }
                *slot = t.clone();
            }
        }
        Ok(Self { stack })
    }
}

/// `apply_dc(Y)` (which equals `Y` for symmetric masks) without a model, or
/// `apply_dc(model(Y))` with one.
pub fn baseline_reconstruct(y: &Tensor, dc: &DcConfig, model: Option<&ReconNet>) -> Result<Tensor> {
    match model {
        None => apply_dc(y, dc),
        Some(m) => apply_dc(&m.forward(y)?, dc),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub n_train: usize,
    pub n_eval: usize,
    pub phantom: PhantomSpec,
    pub mask: MaskSpec,
    pub recon: ReconSpec,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_train: 200,
            n_eval: 50,
            phantom: PhantomSpec::default(),
            mask: MaskSpec::default(),
            recon: ReconSpec::default(),
        }
    }
}

impl DatasetConfig {
    /// Exact on-disk size of the sample files (excluding manifest and
    /// baseline checkpoint).
    pub fn sample_bytes(&self) -> usize {
        let n = self.phantom.size;
        let image = crate::io::encoded_len(&[1, 1, n, n]);
        let grid = crate::io::encoded_len(&[n, n]);
        (self.n_train + self.n_eval) * (3 * image + 3 * grid)
    }
}

/// One stored example.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub index: usize,
    pub truth: Tensor,
    pub undersampled: Tensor,
    pub mask: Tensor,
    pub measured: ComplexGrid,
    pub recon: Tensor,
}

impl Sample {
    pub fn dc(&self) -> Result<DcConfig> {
        DcConfig::new(self.mask.clone(), self.measured.clone())
    }

    fn fields(&self) -> [&Tensor; 6] {
        [
            &self.truth,
            &self.undersampled,
            &self.mask,
            &self.measured.re,
            &self.measured.im,
            &self.recon,
        ]
    }
}

pub fn sample_file(index: usize, field: &str) -> String {
    format!("sample_{index}_{field}.ivt1")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub index: usize,
    pub split: String,
    pub files: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    /// SHA-256 over every data file, in manifest order.
    pub sha256: String,
    pub baseline: Option<String>,
    pub config: DatasetConfig,
    pub samples: Vec<ManifestEntry>,
}

/// Truth, under-sampled image and measurements for one index, each rounded
/// to the stored `f32` precision before the next is derived from it.
fn simulate(cfg: &DatasetConfig, index: usize, fixed: Option<&UndersamplingMask>) -> Result<(Tensor, Tensor, Tensor, ComplexGrid)> {
    let n = cfg.phantom.size;
    let truth = quantize_f32(&generate_phantom(&cfg.phantom, index as u64)?);
    let mask = match fixed {
        Some(m) => m.grid.clone(),
        None => {
            let seed = cfg.mask.seed ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
            make_mask(n, n, cfg.mask.acceleration, cfg.mask.center_fraction, seed)?.grid
        }
    };
    let (y, mk) = undersample(&truth, &mask)?;
    let mk = ComplexGrid::new(quantize_f32(&mk.re), quantize_f32(&mk.im))?;
    Ok((truth, quantize_f32(&y), mask, mk))
}

/// Hash of the data files as listed in a manifest.
fn hash_files(dir: &Path, baseline: Option<&str>, samples: &[ManifestEntry]) -> Result<String> {
    let mut h = Sha256::new();
    let names = baseline.into_iter().chain(samples.iter().flat_map(|s| s.files.iter().map(String::as_str)));
    for name in names {
        let path = dir.join(name);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        h.update(name.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Simulate and write a dataset; train the baseline reconstructor first when
/// configured. Returns the manifest that was written.
pub fn build_dataset(cfg: &DatasetConfig, dir: &Path) -> Result<Manifest> {
    cfg.phantom.validate()?;
    let n = cfg.phantom.size;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let fixed = match cfg.mask.policy {
        MaskPolicy::Fixed => Some(make_mask(n, n, cfg.mask.acceleration, cfg.mask.center_fraction, cfg.mask.seed)?),
        MaskPolicy::PerSample => None,
    };
    let total = cfg.n_train + cfg.n_eval;
    let sims = (0..total)
        .map(|i| simulate(cfg, i, fixed.as_ref()))
        .collect::<Result<Vec<_>>>()?;

    let model = match cfg.recon.mode {
        ReconMode::ZeroFilled => None,
        ReconMode::Trained => {
            if cfg.n_train == 0 {
                return Err(Error::InvalidArgument("a trained baseline needs n_train > 0".into()));
            }
            let pairs: Vec<(Tensor, Tensor)> = sims[..cfg.n_train].iter().map(|(i, y, ..)| (y.clone(), i.clone())).collect();
            let mut net = ReconNet::new(cfg.recon.layers, cfg.recon.channels, cfg.recon.seed)?;
            net.fit(&pairs, &cfg.recon)?;
            Some(net)
        }
    };
    let baseline = if let Some(m) = &model {
        m.save(&dir.join(BASELINE_FILE))?;
        Some(BASELINE_FILE.to_string())
    } else {
        None
    };

    let mut entries = Vec::with_capacity(total);
    for (index, (truth, y, mask, mk)) in sims.into_iter().enumerate() {
        let dc = DcConfig::new(mask.clone(), mk.clone())?;
        let recon = quantize_f32(&baseline_reconstruct(&y, &dc, model.as_ref())?);
        let sample = Sample {
            index,
            truth,
            undersampled: y,
            mask,
            measured: mk,
            recon,
        };
        let mut files = Vec::with_capacity(SAMPLE_FIELDS.len());
        for (field, t) in SAMPLE_FIELDS.iter().zip(sample.fields()) {
            let name = sample_file(index, field);
            write_ivt1(&dir.join(&name), t)?;
            files.push(name);
        }
        let split = if index < cfg.n_train { "train" } else { "eval" };
        entries.push(ManifestEntry {
            index,
            split: split.into(),
            files,
        });
    }
    let manifest = Manifest {
        format: DATASET_FORMAT.into(),
        sha256: hash_files(dir, baseline.as_deref(), &entries)?,
        baseline,
        config: cfg.clone(),
        samples: entries,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    let path = dir.join(MANIFEST);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub train: Vec<Sample>,
    pub eval: Vec<Sample>,
}

impl Dataset {
    pub fn read_manifest(dir: &Path) -> Result<Manifest> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Manifest = toml::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        if m.format != DATASET_FORMAT {
            return Err(Error::format(&path, format!("unsupported format {:?}", m.format)));
        }
        Ok(m)
    }

    /// Load every sample and verify the manifest hash.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = Self::read_manifest(dir)?;
        let hash = hash_files(dir, manifest.baseline.as_deref(), &manifest.samples)?;
        if hash != manifest.sha256 {
            return Err(Error::format(&dir.join(MANIFEST), "data files do not match the manifest hash"));
        }
        let (mut train, mut eval) = (Vec::new(), Vec::new());
        for entry in &manifest.samples {
            let sample = Self::load_sample(dir, entry)?;
            match entry.split.as_str() {
                "train" => train.push(sample),
                "eval" => eval.push(sample),
                other => return Err(Error::format(&dir.join(MANIFEST), format!("unknown split {other:?}"))),
            }
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
            train,
            eval,
        })
    }

    fn load_sample(dir: &Path, entry: &ManifestEntry) -> Result<Sample> {
        if entry.files.len() != SAMPLE_FIELDS.len() {
            return Err(Error::format(&dir.join(MANIFEST), format!("sample {} lists {} files", entry.index, entry.files.len())));
        }
        let t: Vec<Tensor> = entry.files.iter().map(|f| read_ivt1(&dir.join(f))).collect::<Result<_>>()?;
        let [truth, undersampled, mask, re, im, recon]: [Tensor; 6] = t.try_into().expect("six fields");
        Ok(Sample {
            index: entry.index,
            truth,
            undersampled,
            mask,
            measured: ComplexGrid::new(re, im)?,
            recon,
        })
    }

    pub fn image_hw(&self) -> (usize, usize) {
        let n = self.manifest.config.phantom.size;
        (n, n)
    }

    pub fn baseline(&self) -> Result<Option<ReconNet>> {
        self.manifest.baseline.as_ref().map(|f| ReconNet::load(&self.dir.join(f))).transpose()
    }
}
