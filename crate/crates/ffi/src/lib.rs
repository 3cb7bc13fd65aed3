//! C ABI for recseg.
//!
//! Objects cross the boundary as opaque handles created by `recseg_*_new`-style
//! calls and released with the matching `*_free`. Every fallible call returns a
//! [`RecsegStatus`]; on failure [`recseg_last_error`] describes the problem
//! for the calling thread. Output handles are written only on success.
//!
//! Images are row-major `double` arrays of `n1 * n2` values.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use recseg::metrics::evaluate;
use recseg::operators::zero_fill;
use recseg::simulate::{make_mask, make_phantom, simulate_kspace, MaskKind, MaskSpec, PhantomSpec};
use recseg::{
    bregman_tv_reconstruct, io, joint_solve, segment, threshold, tv_reconstruct, Error, Grid,
    HardSegmentation, JointConfig, KSpaceData, RealImage, RegionMeans, SamplingMask,
};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecsegStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    InvalidConfig = 4,
    SolverDiverged = 5,
    Io = 6,
    Parse = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecsegMaskKind {
    UniformRandom = 0,
    VariableDensity = 1,
    Spiral = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecsegPhantomKind {
    /// `count` random bubbles on a background, intensities 0 and 1.
    Bubbles = 0,
    /// One centred disk of radius 0.25, intensities 0 and 1.
    TwoRegion = 1,
    /// Four-class ellipse stack, intensities 0, 0.3, 0.6 and 1.
    SheppLoganLike = 2,
}

/// Solver settings. Obtain defaults from [`recseg_config_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecsegConfig {
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    /// Outer stop on the label step; `<= 0` picks `1e-3 sqrt(n l)`.
    pub tol_v: f64,
    pub max_outer: u32,
    pub inner_iters: u32,
    pub inner_tol: f64,
    pub epsilon_aug: f64,
    pub mu: f64,
    pub update_means: bool,
    pub weighted_steps: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RecsegMetrics {
    pub rre: f64,
    pub psnr_unsquared: f64,
    pub psnr_standard: f64,
    pub rse: f64,
}

/// Real image.
pub struct RecsegImage(RealImage);
/// Hard label map.
pub struct RecsegLabels(HardSegmentation);
pub struct RecsegMask(SamplingMask);
/// Sampled k-space coefficients with their mask and noise level.
pub struct RecsegKspace(KSpaceData);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> RecsegStatus {
    match e {
        Error::InvalidGrid { .. } | Error::InvalidArgument(_) => RecsegStatus::InvalidArgument,
        Error::Shape { .. } | Error::GridMismatch { .. } => RecsegStatus::ShapeMismatch,
        Error::Config(_) => RecsegStatus::InvalidConfig,
        Error::Diverged { .. } => RecsegStatus::SolverDiverged,
        Error::Parse { .. } => RecsegStatus::Parse,
        Error::Io { .. } => RecsegStatus::Io,
    }
}

/// Internal failure: a status plus message.
struct Fail(RecsegStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(RecsegStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> RecsegStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RecsegStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            RecsegStatus::Panic
        }
    }
}

unsafe fn arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out<T>(p: *mut *mut T, value: T) -> Result<(), Fail> {
    if p.is_null() {
        return Err(null("output pointer"));
    }
    *p = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(RecsegStatus::InvalidArgument, "path is not UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

fn grid(n1: u32, n2: u32) -> Result<Grid, Fail> {
    Ok(Grid::new(n1 as usize, n2 as usize)?)
}

unsafe fn solver_config(cfg: *const RecsegConfig) -> Result<JointConfig, Fail> {
    let c = arg(cfg, "config")?;
    Ok(JointConfig {
        alpha: c.alpha,
        beta: c.beta,
        delta: c.delta,
        tol_v: (c.tol_v > 0.0).then_some(c.tol_v),
        max_outer: c.max_outer as usize,
        inner_iters: c.inner_iters as usize,
        inner_tol: c.inner_tol,
        epsilon_aug: c.epsilon_aug,
        mu: c.mu,
        update_means: c.update_means,
        weighted_steps: c.weighted_steps,
        ..JointConfig::default()
    })
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn recseg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn recseg_config_default() -> RecsegConfig {
    let d = JointConfig::default();
    RecsegConfig {
        alpha: d.alpha,
        beta: d.beta,
        delta: d.delta,
        tol_v: 0.0,
        max_outer: d.max_outer as u32,
        inner_iters: d.inner_iters as u32,
        inner_tol: d.inner_tol,
        epsilon_aug: d.epsilon_aug,
        mu: d.mu,
        update_means: d.update_means,
        weighted_steps: d.weighted_steps,
    }
}

/// Copies `n1 * n2` values into a new image.
///
/// # Safety
/// `values` must point to `n1 * n2` doubles.
#[no_mangle]
pub unsafe extern "C" fn recseg_image_new(
    n1: u32,
    n2: u32,
    values: *const f64,
    image: *mut *mut RecsegImage,
) -> RecsegStatus {
    guard(|| {
        let g = grid(n1, n2)?;
        let v = slice(values, g.n(), "values")?.to_vec();
        out(image, RecsegImage(RealImage::new(g, v)?))
    })
}

/// # Safety
/// `image` must be a live handle; `n1`, `n2` may be null.
#[no_mangle]
pub unsafe extern "C" fn recseg_image_dims(image: *const RecsegImage, n1: *mut u32, n2: *mut u32) -> RecsegStatus {
    guard(|| {
        let g = arg(image, "image")?.0.grid();
        if !n1.is_null() {
            *n1 = g.n1() as u32;
        }
        if !n2.is_null() {
            *n2 = g.n2() as u32;
        }
        Ok(())
    })
}

/// Copies the pixel values into `values`, which holds `len` doubles.
///
/// # Safety
/// `values` must be writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn recseg_image_values(image: *const RecsegImage, values: *mut f64, len: usize) -> RecsegStatus {
    guard(|| {
        let src = arg(image, "image")?.0.values();
        if len != src.len() {
            return Err(Fail(
                RecsegStatus::ShapeMismatch,
                format!("buffer holds {len} values, image has {}", src.len()),
            ));
        }
        if values.is_null() {
            return Err(null("values"));
        }
        std::slice::from_raw_parts_mut(values, len).copy_from_slice(src);
        Ok(())
    })
}

/// # Safety
/// `image` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn recseg_image_free(image: *mut RecsegImage) {
    if !image.is_null() {
        drop(Box::from_raw(image));
    }
}

/// Copies the labels (`n1 * n2` entries) into `labels`.
///
/// # Safety
/// `labels` must be writable for `len` entries.
#[no_mangle]
pub unsafe extern "C" fn recseg_labels_values(
    seg: *const RecsegLabels,
    labels: *mut u32,
    len: usize,
    classes: *mut u32,
) -> RecsegStatus {
    guard(|| {
        let s = &arg(seg, "labels")?.0;
        if len != s.labels().len() {
            return Err(Fail(
                RecsegStatus::ShapeMismatch,
                format!("buffer holds {len} labels, map has {}", s.labels().len()),
            ));
        }
        if labels.is_null() {
            return Err(null("labels buffer"));
        }
        for (d, &l) in std::slice::from_raw_parts_mut(labels, len).iter_mut().zip(s.labels()) {
            *d = l as u32;
        }
        if !classes.is_null() {
            *classes = s.classes() as u32;
        }
        Ok(())
    })
}

/// # Safety
/// `seg` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn recseg_labels_free(seg: *mut RecsegLabels) {
    if !seg.is_null() {
        drop(Box::from_raw(seg));
    }
}

/// Builds a phantom; `means` receives up to `means_len` class intensities and
/// `classes` the class count.
///
/// # Safety
/// Output pointers must be valid; `means` must be writable for `means_len`.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn recseg_phantom_new(
    kind: RecsegPhantomKind,
    n1: u32,
    n2: u32,
    count: u32,
    seed: u64,
    image: *mut *mut RecsegImage,
    labels: *mut *mut RecsegLabels,
    means: *mut f64,
    means_len: usize,
    classes: *mut u32,
) -> RecsegStatus {
    guard(|| {
        let g = grid(n1, n2)?;
        let spec = match kind {
            RecsegPhantomKind::Bubbles => PhantomSpec::bubbles(g, count as usize, seed),
            RecsegPhantomKind::TwoRegion => PhantomSpec::two_region(g, 0.25),
            RecsegPhantomKind::SheppLoganLike => PhantomSpec::shepp_logan_like(g),
        };
        let p = make_phantom(&spec)?;
        if image.is_null() || labels.is_null() {
            return Err(null("output pointer"));
        }
        let c = p.means.values();
        if !means.is_null() {
            let n = c.len().min(means_len);
            std::slice::from_raw_parts_mut(means, n).copy_from_slice(&c[..n]);
        }
        if !classes.is_null() {
            *classes = c.len() as u32;
        }
        out(image, RecsegImage(p.image))?;
        out(labels, RecsegLabels(p.labels))
    })
}

/// # Safety
/// `mask` must be a valid output pointer.
#[no_mangle]
pub unsafe extern "C" fn recseg_mask_new(
    kind: RecsegMaskKind,
    n1: u32,
    n2: u32,
    rate: f64,
    seed: u64,
    symmetric: bool,
    mask: *mut *mut RecsegMask,
) -> RecsegStatus {
    guard(|| {
        let k = match kind {
            RecsegMaskKind::UniformRandom => MaskKind::UniformRandom,
            RecsegMaskKind::VariableDensity => MaskKind::VariableDensity,
            RecsegMaskKind::Spiral => MaskKind::Spiral,
        };
        let mut spec = MaskSpec::new(k, rate, seed);
        spec.symmetric = symmetric;
        out(mask, RecsegMask(make_mask(&spec, grid(n1, n2)?)?))
    })
}

/// Number of sampled bins, or 0 for a null handle.
///
/// # Safety
/// `mask` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn recseg_mask_count(mask: *const RecsegMask) -> usize {
    mask.as_ref().map_or(0, |m| m.0.m())
}

/// # Safety
/// `mask` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn recseg_mask_free(mask: *mut RecsegMask) {
    if !mask.is_null() {
        drop(Box::from_raw(mask));
    }
}

/// `f = A u + noise` with per-component standard deviation `sigma`.
///
/// # Safety
/// Handles must be live; `kspace` must be a valid output pointer.
#[no_mangle]
pub unsafe extern "C" fn recseg_simulate_kspace(
    image: *const RecsegImage,
    mask: *const RecsegMask,
    sigma: f64,
    seed: u64,
    kspace: *mut *mut RecsegKspace,
) -> RecsegStatus {
    guard(|| {
        let u = &arg(image, "image")?.0;
        let m = &arg(mask, "mask")?.0;
        out(kspace, RecsegKspace(simulate_kspace(u, m, sigma, seed)?))
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `kspace` a valid output pointer.
#[no_mangle]
pub unsafe extern "C" fn recseg_kspace_read(path: *const c_char, kspace: *mut *mut RecsegKspace) -> RecsegStatus {
    guard(|| out(kspace, RecsegKspace(io::read_kspace(&path_arg(path)?)?)))
}

/// # Safety
/// `kspace` must be live; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn recseg_kspace_write(kspace: *const RecsegKspace, path: *const c_char) -> RecsegStatus {
    guard(|| Ok(io::write_kspace(&path_arg(path)?, &arg(kspace, "kspace")?.0)?))
}

/// # Safety
/// `kspace` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn recseg_kspace_free(kspace: *mut RecsegKspace) {
    if !kspace.is_null() {
        drop(Box::from_raw(kspace));
    }
}

/// # Safety
/// `kspace` must be live; `image` a valid output pointer.
#[no_mangle]
pub unsafe extern "C" fn recseg_zero_fill(kspace: *const RecsegKspace, image: *mut *mut RecsegImage) -> RecsegStatus {
    guard(|| out(image, RecsegImage(zero_fill(&arg(kspace, "kspace")?.0)?)))
}

/// Single TV-regularised solve with weight `config->alpha`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn recseg_tv_reconstruct(
    kspace: *const RecsegKspace,
    config: *const RecsegConfig,
    image: *mut *mut RecsegImage,
) -> RecsegStatus {
    guard(|| {
        let cfg = solver_config(config)?;
        let r = tv_reconstruct(&arg(kspace, "kspace")?.0, cfg.alpha, &cfg)?;
        out(image, RecsegImage(r.u))
    })
}

/// Bregman-TV iteration with the discrepancy stop; `outer_iters` may be null.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn recseg_bregman_reconstruct(
    kspace: *const RecsegKspace,
    config: *const RecsegConfig,
    image: *mut *mut RecsegImage,
    outer_iters: *mut u32,
) -> RecsegStatus {
    guard(|| {
        let cfg = solver_config(config)?;
        let r = bregman_tv_reconstruct(&arg(kspace, "kspace")?.0, cfg.alpha, &cfg)?;
        if !outer_iters.is_null() {
            *outer_iters = r.report.outer_iters() as u32;
        }
        out(image, RecsegImage(r.u))
    })
}

/// Segments `image` into `classes` regions with intensities `means`.
///
/// # Safety
/// `means` must hold `classes` doubles; other pointers valid.
#[no_mangle]
pub unsafe extern "C" fn recseg_segment(
    image: *const RecsegImage,
    means: *const f64,
    classes: usize,
    config: *const RecsegConfig,
    labels: *mut *mut RecsegLabels,
) -> RecsegStatus {
    guard(|| {
        let cfg = solver_config(config)?;
        let c = means_arg(means, classes)?;
        let s = segment(&arg(image, "image")?.0, &c, cfg.beta, cfg.delta, None, &cfg)?;
        out(labels, RecsegLabels(threshold(&s.v, cfg.mu)?))
    })
}

unsafe fn means_arg(values: *const f64, classes: usize) -> Result<RegionMeans, Fail> {
    if values.is_null() {
        return Err(null("means"));
    }
    Ok(RegionMeans::new(slice(values, classes, "means")?.to_vec())?)
}

/// Joint reconstruction and segmentation; `outer_iters` may be null.
///
/// # Safety
/// `means` must hold `classes` doubles; other pointers valid.
#[no_mangle]
pub unsafe extern "C" fn recseg_joint_solve(
    kspace: *const RecsegKspace,
    means: *const f64,
    classes: usize,
    config: *const RecsegConfig,
    image: *mut *mut RecsegImage,
    labels: *mut *mut RecsegLabels,
    outer_iters: *mut u32,
) -> RecsegStatus {
    guard(|| {
        let cfg = solver_config(config)?;
        let c = means_arg(means, classes)?;
        if image.is_null() || labels.is_null() {
            return Err(null("output pointer"));
        }
        let r = joint_solve(&arg(kspace, "kspace")?.0, &c, &cfg)?;
        let hard = threshold(&r.v, cfg.mu)?;
        if !outer_iters.is_null() {
            *outer_iters = r.report.outer_iters() as u32;
        }
        out(image, RecsegImage(r.u))?;
        out(labels, RecsegLabels(hard))
    })
}

/// # Safety
/// Handles must be live; `metrics` writable.
#[no_mangle]
pub unsafe extern "C" fn recseg_metrics(
    image: *const RecsegImage,
    image_gt: *const RecsegImage,
    labels: *const RecsegLabels,
    labels_gt: *const RecsegLabels,
    metrics: *mut RecsegMetrics,
) -> RecsegStatus {
    guard(|| {
        let m = evaluate(
            &arg(image, "image")?.0,
            &arg(image_gt, "image_gt")?.0,
            &arg(labels, "labels")?.0,
            &arg(labels_gt, "labels_gt")?.0,
        )?;
        if metrics.is_null() {
            return Err(null("metrics"));
        }
        *metrics = RecsegMetrics {
            rre: m.rre,
            psnr_unsquared: m.psnr_unsquared,
            psnr_standard: m.psnr_standard,
            rse: m.rse,
        };
        Ok(())
    })
}
