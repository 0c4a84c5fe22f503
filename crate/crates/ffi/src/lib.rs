//! C ABI over `invsharp-core`.
//!
//! Every fallible call returns an [`InvsharpStatus`]. On failure a message is
//! kept per thread and can be copied out with [`invsharp_last_error`].
//! Images are passed as row-major `double` buffers of `h * w` values per
//! channel; a two-channel state is channel 0 followed by channel 1.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use invsharp_core::lipschitz::LipschitzBudget;
use invsharp_core::metrics::{psnr, ssim, SsimParams};
use invsharp_core::net::{DcConfig, Geometry, InvSharpNet};
use invsharp_core::{ComplexGrid, Error, Tensor};

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InvsharpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    ShapeMismatch = 5,
    NonFinite = 6,
    Panic = 7,
}

/// Opaque network handle.
pub struct InvsharpNet {
    net: InvSharpNet,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

struct Failure(InvsharpStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::ShapeMismatch { .. } | Error::Incompatible(_) => InvsharpStatus::ShapeMismatch,
            Error::InvalidArgument(_) | Error::Config(_) => InvsharpStatus::InvalidArgument,
            Error::Io { .. } => InvsharpStatus::Io,
            Error::Format { .. } => InvsharpStatus::Format,
            Error::NonFinite(_) => InvsharpStatus::NonFinite,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(InvsharpStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> InvsharpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            InvsharpStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            InvsharpStatus::Panic
        }
    }
}

unsafe fn slice<'a>(ptr: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn slice_mut<'a>(ptr: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

unsafe fn net_ref<'a>(net: *const InvsharpNet) -> Result<&'a InvSharpNet, Failure> {
    net.as_ref().map(|n| &n.net).ok_or_else(|| null("net"))
}

unsafe fn path_arg<'a>(path: *const c_char) -> Result<&'a Path, Failure> {
    if path.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(path)
        .to_str()
        .map_err(|_| Failure(InvsharpStatus::InvalidArgument, "path is not UTF-8".into()))?;
    Ok(Path::new(s))
}

fn image(data: &[f64], h: usize, w: usize) -> Result<Tensor, Failure> {
    Ok(Tensor::image(h, w, data.to_vec())?)
}

/// Load a checkpoint. On success `*out` owns a handle to release with
/// [`invsharp_net_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn invsharp_net_load(path: *const c_char, out: *mut *mut InvsharpNet) -> InvsharpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let net = InvSharpNet::load(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(InvsharpNet { net }));
        Ok(())
    })
}

/// A network whose residual branches are all zero, so both passes are the
/// identity. Useful for wiring tests.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn invsharp_net_identity(
    blocks: usize,
    layers: usize,
    channels: usize,
    h: usize,
    w: usize,
    out: *mut *mut InvsharpNet,
) -> InvsharpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if h == 0 || w == 0 {
            return Err(Failure(InvsharpStatus::InvalidArgument, "image size must be positive".into()));
        }
        let geometry = Geometry::new(blocks, layers, channels)?;
        let net = InvSharpNet::identity(geometry, LipschitzBudget::default(), 2, (h, w));
        *out = Box::into_raw(Box::new(InvsharpNet { net }));
        Ok(())
    })
}

/// Write the network to a checkpoint file.
///
/// # Safety
/// `net` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn invsharp_net_save(net: *const InvsharpNet, path: *const c_char) -> InvsharpStatus {
    guard(|| Ok(net_ref(net)?.save(path_arg(path)?)?))
}

/// Release a handle. Null is ignored.
///
/// # Safety
/// `net` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn invsharp_net_free(net: *mut InvsharpNet) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// The image height and width the network was built for.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn invsharp_net_image_size(net: *const InvsharpNet, h: *mut usize, w: *mut usize) -> InvsharpStatus {
    guard(|| {
        let n = net_ref(net)?;
        if h.is_null() || w.is_null() {
            return Err(null("h or w"));
        }
        (*h, *w) = n.image_hw;
        Ok(())
    })
}

unsafe fn two_channel_pass(
    net: *const InvsharpNet,
    input: *const f64,
    output: *mut f64,
    len: usize,
    pass: impl FnOnce(&InvSharpNet, &Tensor) -> invsharp_core::Result<Tensor>,
) -> InvsharpStatus {
    guard(|| {
        let n = net_ref(net)?;
        let (h, w) = n.image_hw;
        if len != 2 * h * w {
            return Err(Failure(InvsharpStatus::ShapeMismatch, format!("expected {} values, got {len}", 2 * h * w)));
        }
        let x = Tensor::new(&[1, 2, h, w], slice(input, len, "input")?.to_vec())?;
        let out = slice_mut(output, len, "output")?;
        let y = pass(n, &x)?;
        out.copy_from_slice(y.data());
        Ok(())
    })
}

/// Forward pass on a two-channel state of `len = 2 * h * w` values.
///
/// # Safety
/// `input` and `output` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn invsharp_net_forward(net: *const InvsharpNet, input: *const f64, output: *mut f64, len: usize) -> InvsharpStatus {
    two_channel_pass(net, input, output, len, |n, x| n.forward(x))
}

/// Inverse pass with `iters` fixed-point iterations per block; 0 uses the
/// network's own setting.
///
/// # Safety
/// `input` and `output` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn invsharp_net_inverse(
    net: *const InvsharpNet,
    input: *const f64,
    output: *mut f64,
    len: usize,
    iters: usize,
) -> InvsharpStatus {
    two_channel_pass(net, input, output, len, |n, x| {
        n.inverse_with(x, if iters == 0 { n.fixed_point_iters } else { iters })
    })
}

/// Sharpen a reconstruction of `len = h * w` values. With a null `mask` no
/// data consistency is applied; otherwise `mask` (0/1 per bin) and the
/// measured k-space `measured_re`/`measured_im` are replaced into the output
/// spectrum.
///
/// # Safety
/// Non-null buffers must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn invsharp_net_sharpen(
    net: *const InvsharpNet,
    recon: *const f64,
    mask: *const f64,
    measured_re: *const f64,
    measured_im: *const f64,
    output: *mut f64,
    len: usize,
) -> InvsharpStatus {
    guard(|| {
        let n = net_ref(net)?;
        let (h, w) = n.image_hw;
        if len != h * w {
            return Err(Failure(InvsharpStatus::ShapeMismatch, format!("expected {} values, got {len}", h * w)));
        }
        let r = image(slice(recon, len, "recon")?, h, w)?;
        let sharp = if mask.is_null() {
            n.sharpen_raw(&r)?
        } else {
            let grid = |p, what| -> Result<Tensor, Failure> { Ok(Tensor::new(&[h, w], slice(p, len, what)?.to_vec())?) };
            let measured = ComplexGrid::new(grid(measured_re, "measured_re")?, grid(measured_im, "measured_im")?)?;
            let dc = DcConfig::new(grid(mask, "mask")?, measured)?;
            n.sharpen(&r, &dc)?
        };
        slice_mut(output, len, "output")?.copy_from_slice(sharp.data());
        Ok(())
    })
}

/// PSNR in dB of `a` against `b`; `+inf` for identical images.
///
/// # Safety
/// `a` and `b` must hold `h * w` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn invsharp_psnr(a: *const f64, b: *const f64, h: usize, w: usize, data_range: f64, out: *mut f64) -> InvsharpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let n = h * w;
        *out = psnr(&image(slice(a, n, "a")?, h, w)?, &image(slice(b, n, "b")?, h, w)?, data_range)?;
        Ok(())
    })
}

/// Single-scale SSIM of `a` against the reference `b`, with the data range
/// taken from the reference maximum.
///
/// # Safety
/// `a` and `b` must hold `h * w` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn invsharp_ssim(a: *const f64, b: *const f64, h: usize, w: usize, out: *mut f64) -> InvsharpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let n = h * w;
        let reference = image(slice(b, n, "b")?, h, w)?;
        *out = ssim(&image(slice(a, n, "a")?, h, w)?, &reference, &SsimParams::for_reference(&reference))?;
        Ok(())
    })
}

/// Copy the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `cap`). Returns the buffer size needed for the full message.
///
/// # Safety
/// `buf` must hold `cap` bytes, or be null with `cap == 0`.
#[no_mangle]
pub unsafe extern "C" fn invsharp_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        bytes.len() + 1
    })
}
