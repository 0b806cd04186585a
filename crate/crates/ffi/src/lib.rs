//! C interface to the closed-form reconstruction term, latent moments, BPD
//! and training.
//!
//! Objects cross the boundary as opaque pointers created by `*_new` and
//! released by the matching `*_free`. Fallible calls return an
//! [`SgStatus`]; the message of the most recent failure on the calling
//! thread is available from [`sg_last_error`]. Output pointers documented
//! as optional may be null.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use silentgrad::analytic::{self, AnalyticRecon, LinearDecoder, StatsGrad};
use silentgrad::data::Dataset;
use silentgrad::latent::{BernoulliVec, DiagGaussian, LatentDistribution};
use silentgrad::ndcore::{DenseMatrix, DenseVector};
use silentgrad::train::{build_dataset, TrainConfig, TrainState};
use silentgrad::{metrics, Error};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SgStatus {
    Ok = 0,
    NullPointer = 1,
    DimensionMismatch = 2,
    InvalidParameter = 3,
    NonFinite = 4,
    Degenerate = 5,
    Config = 6,
    Diverged = 7,
    Io = 8,
    Internal = 9,
}

/// A linear decoder: `W_mu` and, for learnable precision, `W_alpha`.
pub struct SgDecoder(LinearDecoder);

/// A factorized Gaussian or Bernoulli latent distribution.
pub struct SgLatent(LatentDistribution);

/// A training run and its dataset.
pub struct SgTrainer {
    state: TrainState,
    data: Dataset,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> SgStatus {
    match e {
        Error::DimensionMismatch { .. } => SgStatus::DimensionMismatch,
        Error::NonFinite(_) => SgStatus::NonFinite,
        Error::InvalidParameter(_) | Error::EnumerationTooLarge(_) => SgStatus::InvalidParameter,
        Error::ZeroVariance(_) | Error::DegeneratePrecision { .. } => SgStatus::Degenerate,
        Error::Config(_) => SgStatus::Config,
        Error::Diverged { .. } => SgStatus::Diverged,
        Error::Io(_) | Error::Idx(_) | Error::Checkpoint(_) | Error::Json(_) => SgStatus::Io,
    }
}

enum Fail {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SgStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            SgStatus::NullPointer
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            SgStatus::Internal
        }
    }
}

unsafe fn input<'a>(p: *const f64, n: usize, what: &'static str) -> Result<&'a [f64], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(slice::from_raw_parts(p, n))
}

unsafe fn write_out(p: *mut f64, v: &[f64]) {
    if !p.is_null() {
        ptr::copy_nonoverlapping(v.as_ptr(), p, v.len());
    }
}

unsafe fn handle<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

fn store<T>(out: *mut *mut T, v: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null("out"));
    }
    unsafe { *out = Box::into_raw(Box::new(v)) };
    Ok(())
}

/// Copies the last error message on this thread into `buf` (NUL
/// terminated, truncated to `len`). Returns the full message length.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn sg_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Decoder with fixed output variance. `wmu` is `k x (d+1)` row-major, the
/// last column being the bias.
///
/// # Safety
/// `wmu` must point to `k * cols` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sg_decoder_new_fixed(wmu: *const f64, k: usize, cols: usize, out: *mut *mut SgDecoder) -> SgStatus {
    guard(|| {
        let n = k.checked_mul(cols).ok_or(Error::InvalidParameter("shape overflow".into()))?;
        let w = DenseMatrix::new(k, cols, input(wmu, n, "wmu")?.to_vec())?;
        store(out, SgDecoder(LinearDecoder::fixed(w)?))
    })
}

/// Decoder with learnable per-dimension precision; `walpha` has the shape of
/// `wmu`.
///
/// # Safety
/// `wmu` and `walpha` must point to `k * cols` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sg_decoder_new_learnable(
    wmu: *const f64,
    walpha: *const f64,
    k: usize,
    cols: usize,
    out: *mut *mut SgDecoder,
) -> SgStatus {
    guard(|| {
        let n = k.checked_mul(cols).ok_or(Error::InvalidParameter("shape overflow".into()))?;
        let wm = DenseMatrix::new(k, cols, input(wmu, n, "wmu")?.to_vec())?;
        let wa = DenseMatrix::new(k, cols, input(walpha, n, "walpha")?.to_vec())?;
        store(out, SgDecoder(LinearDecoder::learnable(wm, wa)?))
    })
}

/// # Safety
/// `dec` must be null or a pointer from `sg_decoder_new_*` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sg_decoder_free(dec: *mut SgDecoder) {
    if !dec.is_null() {
        drop(Box::from_raw(dec));
    }
}

/// # Safety
/// `mean` and `var` must point to `d` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sg_latent_new_gaussian(mean: *const f64, var: *const f64, d: usize, out: *mut *mut SgLatent) -> SgStatus {
    guard(|| {
        let g = DiagGaussian::from_vecs(input(mean, d, "mean")?.to_vec(), input(var, d, "var")?.to_vec())?;
        store(out, SgLatent(g.into()))
    })
}

/// # Safety
/// `p` must point to `d` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sg_latent_new_bernoulli(p: *const f64, d: usize, out: *mut *mut SgLatent) -> SgStatus {
    guard(|| {
        let b = BernoulliVec::from_vec(input(p, d, "p")?.to_vec())?;
        store(out, SgLatent(b.into()))
    })
}

/// # Safety
/// `lat` must be null or a pointer from `sg_latent_new_*` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sg_latent_free(lat: *mut SgLatent) {
    if !lat.is_null() {
        drop(Box::from_raw(lat));
    }
}

/// Number of latent dimensions, or 0 for a null handle.
///
/// # Safety
/// `lat` must be null or a live latent handle.
#[no_mangle]
pub unsafe extern "C" fn sg_latent_dim(lat: *const SgLatent) -> usize {
    lat.as_ref().map_or(0, |l| l.0.dim())
}

/// Central moments of order 2, 3 and 4; each optional output holds `d`
/// values.
///
/// # Safety
/// `lat` must be a live latent handle; non-null outputs must hold `d` values.
#[no_mangle]
pub unsafe extern "C" fn sg_latent_central_moments(lat: *const SgLatent, m2: *mut f64, m3: *mut f64, m4: *mut f64) -> SgStatus {
    guard(|| {
        let m = handle(lat, "latent")?.0.central_moments();
        write_out(m2, m.m2().as_slice());
        write_out(m3, m.m3().as_slice());
        write_out(m4, m.m4().as_slice());
        Ok(())
    })
}

unsafe fn write_recon(r: &AnalyticRecon, value: *mut f64, grad_stats: *mut f64, grad_wmu: *mut f64, grad_walpha: *mut f64) {
    if !value.is_null() {
        *value = r.value;
    }
    match &r.grad_stats {
        StatsGrad::Gaussian { mean, var } => {
            write_out(grad_stats, mean.as_slice());
            if !grad_stats.is_null() {
                write_out(grad_stats.add(mean.len()), var.as_slice());
            }
        }
        StatsGrad::Bernoulli { p } => write_out(grad_stats, p.as_slice()),
    }
    write_out(grad_wmu, r.grad_wmu.as_slice());
    if let Some(ga) = &r.grad_walpha {
        write_out(grad_walpha, ga.as_slice());
    }
}

/// Expected reconstruction log-likelihood under a fixed output variance.
/// `grad_stats` receives `2d` values (means then variances) for a Gaussian
/// latent and `d` probabilities for a Bernoulli one; `grad_wmu` receives
/// `k * (d+1)` values. All outputs are optional.
///
/// # Safety
/// Handles must be live; `x` must hold `k` values; outputs must be sized as
/// described.
#[no_mangle]
pub unsafe extern "C" fn sg_expected_recon_fixed(
    dec: *const SgDecoder,
    lat: *const SgLatent,
    x: *const f64,
    k: usize,
    sigma2: f64,
    value: *mut f64,
    grad_stats: *mut f64,
    grad_wmu: *mut f64,
) -> SgStatus {
    guard(|| {
        let d = handle(dec, "decoder")?;
        let l = handle(lat, "latent")?;
        let x = DenseVector::new(input(x, k, "x")?.to_vec())?;
        let r = analytic::expected_recon_fixed(&x, &d.0, &l.0, sigma2)?;
        write_recon(&r, value, grad_stats, grad_wmu, ptr::null_mut());
        Ok(())
    })
}

/// Expected reconstruction objective with learnable precision; as
/// [`sg_expected_recon_fixed`] plus `grad_walpha` (`k * (d+1)` values).
///
/// # Safety
/// As for [`sg_expected_recon_fixed`].
#[no_mangle]
pub unsafe extern "C" fn sg_expected_recon_learnable(
    dec: *const SgDecoder,
    lat: *const SgLatent,
    x: *const f64,
    k: usize,
    value: *mut f64,
    grad_stats: *mut f64,
    grad_wmu: *mut f64,
    grad_walpha: *mut f64,
) -> SgStatus {
    guard(|| {
        let d = handle(dec, "decoder")?;
        let l = handle(lat, "latent")?;
        let x = DenseVector::new(input(x, k, "x")?.to_vec())?;
        let r = analytic::expected_recon_learnable(&x, &d.0, &l.0)?;
        write_recon(&r, value, grad_stats, grad_wmu, grad_walpha);
        Ok(())
    })
}

/// Bits per dimension of 8-bit data from a per-item log-likelihood of the
/// dequantized item.
#[no_mangle]
pub extern "C" fn sg_bpd(loglik_per_item: f64, k: usize) -> f64 {
    metrics::bpd(loglik_per_item, k)
}

/// Builds a trainer from configuration text in `key = value` form.
///
/// # Safety
/// `config` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sg_trainer_new(config: *const c_char, out: *mut *mut SgTrainer) -> SgStatus {
    guard(|| {
        if config.is_null() {
            return Err(Fail::Null("config"));
        }
        let text = CStr::from_ptr(config)
            .to_str()
            .map_err(|_| Error::Config("config is not utf8".into()))?;
        let cfg = TrainConfig::parse(text)?;
        let data = build_dataset(&cfg)?;
        let state = TrainState::new(&cfg, data.dim())?;
        store(out, SgTrainer { state, data })
    })
}

/// Runs one epoch; `loss` (optional) receives the evaluated negative ELBO.
///
/// # Safety
/// `t` must be a live trainer handle.
#[no_mangle]
pub unsafe extern "C" fn sg_trainer_epoch(t: *mut SgTrainer, loss: *mut f64) -> SgStatus {
    guard(|| {
        let t = t.as_mut().ok_or(Fail::Null("trainer"))?;
        let r = t.state.train_epoch(&t.data)?;
        if !loss.is_null() {
            *loss = r.total_loss;
        }
        Ok(())
    })
}

/// Checksum of the encoder parameters, or 0 for a null handle.
///
/// # Safety
/// `t` must be null or a live trainer handle.
#[no_mangle]
pub unsafe extern "C" fn sg_trainer_encoder_checksum(t: *const SgTrainer) -> u64 {
    t.as_ref().map_or(0, |t| t.state.encoder().checksum())
}

/// # Safety
/// `t` must be null or a pointer from `sg_trainer_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sg_trainer_free(t: *mut SgTrainer) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}
