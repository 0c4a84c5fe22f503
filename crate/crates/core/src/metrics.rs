//! Image-quality metrics: MAE, PSNR, SSIM with its luminance / contrast /
//! structure decomposition, and multi-scale SSIM with an analytic gradient.
//!
//! SSIM statistics use an 11x11 Gaussian window (sigma 1.5) evaluated only
//! where it fits inside the image ("valid" filtering), `K1 = 0.01`,
//! `K2 = 0.03`, and `C3 = C2 / 2`, which makes the SSIM map equal to the
//! pointwise product of the three component maps.
//!
//! Contrast is the mean of the contrast-component map
//! `(2 sa sb + C2) / (sa^2 + sb^2 + C2)`; it rewards matching local standard
//! deviations and is used as the sharpness score in reports.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Standard MS-SSIM exponents, finest scale first.
pub const MSSSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

/// Floor applied to per-scale terms before exponentiation in MS-SSIM.
const MSSSIM_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub data_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            data_range: 1.0,
        }
    }
}

impl SsimParams {
    /// Default window and constants with `data_range = max(reference)`.
    /// Falls back to 1 for references without positive values.
    pub fn for_reference(reference: &Tensor) -> Self {
        let m = reference.max();
        Self {
            data_range: if m > 0.0 { m } else { 1.0 },
            ..Self::default()
        }
    }

    fn c1(&self) -> f64 {
        (self.k1 * self.data_range).powi(2)
    }

    fn c2(&self) -> f64 {
        (self.k2 * self.data_range).powi(2)
    }

    /// Normalized 1D Gaussian taps; the 2D window is their outer product.
    pub fn window_taps(&self) -> Vec<f64> {
        let half = (self.window / 2) as f64;
        let taps: Vec<f64> = (0..self.window)
            .map(|i| (-(i as f64 - half).powi(2) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let s: f64 = taps.iter().sum();
        taps.into_iter().map(|t| t / s).collect()
    }
}

fn same_image_shape(a: &Tensor, b: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    let (h, w) = a.hw()?;
    let (hb, wb) = b.hw()?;
    if hb != h {
        return Err(Error::shape(op, "height", h, hb));
    }
    if wb != w {
        return Err(Error::shape(op, "width", w, wb));
    }
    Ok((h, w))
}

pub fn mae(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.expect_same_shape(b, "mae")?;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.expect_same_shape(b, "mse")?;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64)
}

/// `10 log10(range^2 / MSE)`; identical images give `f64::INFINITY`.
pub fn psnr(a: &Tensor, b: &Tensor, data_range: f64) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (data_range * data_range / m).log10())
}

/// Separable valid correlation of an `h x w` plane with `taps x taps`.
fn filter_valid(x: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let n = taps.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        let row = &x[y * w..(y + 1) * w];
        for xo in 0..ow {
            tmp[y * ow + xo] = taps.iter().zip(&row[xo..xo + n]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for yo in 0..oh {
        for (i, t) in taps.iter().enumerate() {
            let src = &tmp[(yo + i) * ow..(yo + i + 1) * ow];
            for (o, s) in out[yo * ow..(yo + 1) * ow].iter_mut().zip(src) {
                *o += t * s;
            }
        }
    }
    out
}

/// Adjoint of [`filter_valid`].
fn filter_valid_adjoint(g: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let n = taps.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut tmp = vec![0.0; h * ow];
    for yo in 0..oh {
        let src = &g[yo * ow..(yo + 1) * ow];
        for (i, t) in taps.iter().enumerate() {
            for (d, s) in tmp[(yo + i) * ow..(yo + i + 1) * ow].iter_mut().zip(src) {
                *d += t * s;
            }
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        let row = &mut out[y * w..(y + 1) * w];
        for xo in 0..ow {
            let v = tmp[y * ow + xo];
            for (d, t) in row[xo..xo + n].iter_mut().zip(taps) {
                *d += t * v;
            }
        }
    }
    out
}

/// Local first and second moments of one image pair.
struct LocalStats {
    mu_a: Vec<f64>,
    mu_b: Vec<f64>,
    var_a: Vec<f64>,
    var_b: Vec<f64>,
    cov: Vec<f64>,
}

impl LocalStats {
    fn new(a: &[f64], b: &[f64], h: usize, w: usize, taps: &[f64]) -> Self {
        let sq = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
        let mu_a = filter_valid(a, h, w, taps);
        let mu_b = filter_valid(b, h, w, taps);
        let ea2 = filter_valid(&sq(a, a), h, w, taps);
        let eb2 = filter_valid(&sq(b, b), h, w, taps);
        let eab = filter_valid(&sq(a, b), h, w, taps);
        let var_a = ea2.iter().zip(&mu_a).map(|(e, m)| e - m * m).collect();
        let var_b = eb2.iter().zip(&mu_b).map(|(e, m)| e - m * m).collect();
        let cov = eab.iter().zip(mu_a.iter().zip(&mu_b)).map(|(e, (p, q))| e - p * q).collect();
        Self {
            mu_a,
            mu_b,
            var_a,
            var_b,
            cov,
        }
    }

    fn len(&self) -> usize {
        self.mu_a.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimComponents {
    pub ssim: f64,
    pub luminance: f64,
    pub contrast: f64,
    pub structure: f64,
}

/// Per-pixel SSIM maps (valid region).
#[derive(Clone, Debug)]
pub struct SsimMaps {
    pub ssim: Vec<f64>,
    pub luminance: Vec<f64>,
    pub contrast: Vec<f64>,
    pub structure: Vec<f64>,
}

pub fn ssim_maps(a: &Tensor, b: &Tensor, params: &SsimParams) -> Result<SsimMaps> {
    let (h, w) = same_image_shape(a, b, "ssim")?;
    if h < params.window || w < params.window {
        return Err(Error::InvalidArgument(format!(
            "image {h}x{w} is smaller than the {0}x{0} SSIM window",
            params.window
        )));
    }
    let (c1, c2) = (params.c1(), params.c2());
    let c3 = c2 / 2.0;
    let st = LocalStats::new(a.data(), b.data(), h, w, &params.window_taps());
    let n = st.len();
    let mut maps = SsimMaps {
        ssim: Vec::with_capacity(n),
        luminance: Vec::with_capacity(n),
        contrast: Vec::with_capacity(n),
        structure: Vec::with_capacity(n),
    };
    for i in 0..n {
        let (ma, mb) = (st.mu_a[i], st.mu_b[i]);
        let (va, vb, cv) = (st.var_a[i], st.var_b[i], st.cov[i]);
        let (sa, sb) = (va.max(0.0).sqrt(), vb.max(0.0).sqrt());
        let l = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        maps.luminance.push(l);
        maps.contrast.push((2.0 * sa * sb + c2) / (va + vb + c2));
        maps.structure.push((cv + c3) / (sa * sb + c3));
        maps.ssim.push(l * (2.0 * cv + c2) / (va + vb + c2));
    }
    Ok(maps)
}

/// Mean SSIM and the mean of each component map.
pub fn ssim_components(a: &Tensor, b: &Tensor, params: &SsimParams) -> Result<SsimComponents> {
    let m = ssim_maps(a, b, params)?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(SsimComponents {
        ssim: mean(&m.ssim),
        luminance: mean(&m.luminance),
        contrast: mean(&m.contrast),
        structure: mean(&m.structure),
    })
}

pub fn ssim(a: &Tensor, b: &Tensor, params: &SsimParams) -> Result<f64> {
    Ok(ssim_components(a, b, params)?.ssim)
}

/// Number of MS-SSIM scales usable on an `h x w` image: the largest
/// `s <= 5` with `min(h, w) >= 2^(s-1) * window`.
pub fn msssim_scales(h: usize, w: usize, window: usize) -> usize {
    (1..=MSSSIM_WEIGHTS.len())
        .rev()
        .find(|&s| h.min(w) >= (1 << (s - 1)) * window)
        .unwrap_or(0)
}

/// Exponents for `scales` levels; truncated pyramids renormalize to sum 1.
pub fn msssim_weights(scales: usize) -> Vec<f64> {
    let w = &MSSSIM_WEIGHTS[..scales];
    if scales == MSSSIM_WEIGHTS.len() {
        return w.to_vec();
    }
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

fn downsample2(x: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for xo in 0..ow {
            let i = 2 * y * w + 2 * xo;
            out[y * ow + xo] = 0.25 * (x[i] + x[i + 1] + x[i + w] + x[i + w + 1]);
        }
    }
    (out, oh, ow)
}

fn downsample2_adjoint(g: &[f64], h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; h * w];
    for y in 0..oh {
        for xo in 0..ow {
            let v = 0.25 * g[y * ow + xo];
            let i = 2 * y * w + 2 * xo;
            out[i] += v;
            out[i + 1] += v;
            out[i + w] += v;
            out[i + w + 1] += v;
        }
    }
    out
}

/// Mean contrast-structure term (or full SSIM when `with_luminance`) of one
/// scale, with its gradient with respect to `a`.
fn scale_term(a: &[f64], b: &[f64], h: usize, w: usize, params: &SsimParams, with_luminance: bool) -> (f64, Vec<f64>) {
    let taps = params.window_taps();
    let (c1, c2) = (params.c1(), params.c2());
    let st = LocalStats::new(a, b, h, w, &taps);
    let n = st.len() as f64;
    let mut value = 0.0;
    // Partials of the mean term w.r.t. mu_a, var_a and cov at each pixel.
    let mut g_mu = vec![0.0; st.len()];
    let mut g_var = vec![0.0; st.len()];
    let mut g_cov = vec![0.0; st.len()];
    for i in 0..st.len() {
        let (ma, mb) = (st.mu_a[i], st.mu_b[i]);
        let num = 2.0 * st.cov[i] + c2;
        let den = st.var_a[i] + st.var_b[i] + c2;
        let cs = num / den;
        let d_cov = 2.0 / den;
        let d_var = -num / (den * den);
        if with_luminance {
            let p = 2.0 * ma * mb + c1;
            let q = ma * ma + mb * mb + c1;
            let l = p / q;
            value += l * cs;
            g_mu[i] = cs * (2.0 * mb / q - p * 2.0 * ma / (q * q)) / n;
            g_var[i] = l * d_var / n;
            g_cov[i] = l * d_cov / n;
        } else {
            value += cs;
            g_var[i] = d_var / n;
            g_cov[i] = d_cov / n;
        }
    }
    value /= n;
    // var_a = F(a^2) - mu_a^2, cov = F(ab) - mu_a mu_b, mu_a = F(a).
    let total_mu: Vec<f64> = (0..st.len())
        .map(|i| g_mu[i] - 2.0 * st.mu_a[i] * g_var[i] - st.mu_b[i] * g_cov[i])
        .collect();
    let back_mu = filter_valid_adjoint(&total_mu, h, w, &taps);
    let back_var = filter_valid_adjoint(&g_var, h, w, &taps);
    let back_cov = filter_valid_adjoint(&g_cov, h, w, &taps);
    let grad = (0..h * w)
        .map(|i| back_mu[i] + 2.0 * a[i] * back_var[i] + b[i] * back_cov[i])
        .collect();
    (value, grad)
}

/// MS-SSIM and its gradient with respect to `a`.
///
/// Contrast-structure terms are taken at every scale but the coarsest, where
/// the full SSIM (including luminance) is used. Scales are produced by 2x2
/// mean pooling. Images too small for five scales use fewer scales with
/// renormalized exponents (see [`msssim_scales`]).
pub fn msssim_with_grad(a: &Tensor, b: &Tensor, params: &SsimParams) -> Result<(f64, Tensor)> {
    let (h, w) = same_image_shape(a, b, "msssim")?;
    let scales = msssim_scales(h, w, params.window);
    if scales == 0 {
        return Err(Error::InvalidArgument(format!(
            "image {h}x{w} is smaller than the {0}x{0} SSIM window",
            params.window
        )));
    }
    let weights = msssim_weights(scales);

    let mut pyramid = vec![(a.data().to_vec(), b.data().to_vec(), h, w)];
    for _ in 1..scales {
        let (pa, pb, ph, pw) = pyramid.last().expect("non-empty");
        let (da, nh, nw) = downsample2(pa, *ph, *pw);
        let (db, _, _) = downsample2(pb, *ph, *pw);
        pyramid.push((da, db, nh, nw));
    }

    let terms: Vec<(f64, Vec<f64>)> = pyramid
        .iter()
        .enumerate()
        .map(|(j, (pa, pb, ph, pw))| scale_term(pa, pb, *ph, *pw, params, j + 1 == scales))
        .collect();

    let clamped: Vec<f64> = terms.iter().map(|(v, _)| v.max(MSSSIM_FLOOR)).collect();
    let value: f64 = clamped.iter().zip(&weights).map(|(v, e)| v.powf(*e)).product();

    // Walk coarse to fine, pushing gradients through the pooling adjoint.
    let mut carry: Option<Vec<f64>> = None;
    for j in (0..scales).rev() {
        let (_, _, ph, pw) = &pyramid[j];
        let (raw, g) = &terms[j];
        let coef = if *raw > MSSSIM_FLOOR {
            weights[j] * value / clamped[j]
        } else {
            0.0
        };
        let mut grad: Vec<f64> = g.iter().map(|v| coef * v).collect();
        if let Some(c) = carry.take() {
            let up = downsample2_adjoint(&c, *ph, *pw);
            grad.iter_mut().zip(up).for_each(|(d, u)| *d += u);
        }
        carry = Some(grad);
    }
    let grad = Tensor::new(a.shape(), carry.expect("at least one scale"))?;
    Ok((value, grad))
}

pub fn msssim(a: &Tensor, b: &Tensor, params: &SsimParams) -> Result<f64> {
    Ok(msssim_with_grad(a, b, params)?.0)
}

/// One image pair's scores.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub id: String,
    pub psnr_db: f64,
    pub ssim: f64,
    pub contrast: f64,
    pub mae: f64,
}

impl MetricsRow {
    fn values(&self) -> [f64; 4] {
        [self.psnr_db, self.ssim, self.contrast, self.mae]
    }
}

/// Per-image rows plus mean and (population) standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
}

pub const REPORT_HEADER: &str = "id,psnr_db,ssim,contrast,mae";

impl MetricsReport {
    pub fn mean(&self) -> [f64; 4] {
        let n = self.rows.len() as f64;
        let mut acc = [0.0; 4];
        for r in &self.rows {
            for (a, v) in acc.iter_mut().zip(r.values()) {
                *a += v;
            }
        }
        acc.map(|a| a / n)
    }

    pub fn sd(&self) -> [f64; 4] {
        let mean = self.mean();
        let n = self.rows.len() as f64;
        let mut acc = [0.0; 4];
        for r in &self.rows {
            for ((a, v), m) in acc.iter_mut().zip(r.values()).zip(mean) {
                // Infinite PSNR rows: treat identical infinities as zero spread.
                let d = if v == m { 0.0 } else { v - m };
                *a += d * d;
            }
        }
        acc.map(|a| (a / n).sqrt())
    }

    pub fn mean_psnr(&self) -> f64 {
        self.mean()[0]
    }

    pub fn mean_ssim(&self) -> f64 {
        self.mean()[1]
    }

    pub fn mean_contrast(&self) -> f64 {
        self.mean()[2]
    }

    pub fn mean_mae(&self) -> f64 {
        self.mean()[3]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let line = |s: &mut String, id: &str, v: [f64; 4]| {
            let _ = writeln!(s, "{id},{},{},{},{}", v[0], v[1], v[2], v[3]);
        };
        s.push_str(REPORT_HEADER);
        s.push('\n');
        for r in &self.rows {
            line(&mut s, &r.id, r.values());
        }
        line(&mut s, "mean", self.mean());
        line(&mut s, "sd", self.sd());
        s
    }

    /// Parse the per-image rows of a report written by [`Self::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(REPORT_HEADER) {
            return Err(Error::InvalidArgument("metrics CSV header mismatch".into()));
        }
        let mut rows = Vec::new();
        for line in lines {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(Error::InvalidArgument(format!("bad metrics row: {line}")));
            }
            if fields[0] == "mean" || fields[0] == "sd" {
                continue;
            }
            let num = |i: usize| -> Result<f64> {
                fields[i]
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("bad number {:?}", fields[i])))
            };
            rows.push(MetricsRow {
                id: fields[0].to_string(),
                psnr_db: num(1)?,
                ssim: num(2)?,
                contrast: num(3)?,
                mae: num(4)?,
            });
        }
        Ok(Self { rows })
    }
}

/// Score each prediction against its reference. The data range of each pair
/// is the maximum of the reference.
pub fn evaluate_pairset(preds: &[Tensor], refs: &[Tensor], base: &SsimParams) -> Result<MetricsReport> {
    if preds.len() != refs.len() {
        return Err(Error::shape("evaluate_pairset", "pair count", refs.len(), preds.len()));
    }
    let rows = preds
        .iter()
        .zip(refs)
        .enumerate()
        .map(|(i, (p, r))| {
            let params = SsimParams {
                data_range: SsimParams::for_reference(r).data_range,
                ..*base
            };
            let comps = ssim_components(p, r, &params)?;
            Ok(MetricsRow {
                id: i.to_string(),
                psnr_db: psnr(p, r, params.data_range)?,
                ssim: comps.ssim,
                contrast: comps.contrast,
                mae: mae(p, r)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport { rows })
}
