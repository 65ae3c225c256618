//! C ABI over the myopinn engine.
//!
//! Datasets and maps are opaque handles created by `myo_*` constructors and
//! released with the matching `*_free`. Every fallible call returns a
//! [`MyoStatus`]; on failure, [`myo_last_error`] describes the cause for the
//! calling thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use myopinn::io::{self, CurveDataset, MapFile};
use myopinn::kinetics::{solve_2cxm, to_blood_units, ConcentrationSeries, ConversionConstants, KineticParams, TimeGrid};
use myopinn::maps::{KineticMaps, Param};
use myopinn::metrics::{compare_maps, SsimOptions};
use myopinn::nlls::{self, NllsConfig};
use myopinn::phantom::{generate_dro, PhantomConfig};
use myopinn::pinn::{self, PinnConfig, Variant};
use myopinn::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MyoStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Format = 3,
    Numerical = 4,
    Io = 5,
    /// The output buffer is too small; the required length was written.
    BufferTooSmall = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MyoMethod {
    Pinn2cxm = 0,
    PinnMesh = 1,
    PinnReduced = 2,
    PinnCombined = 3,
    Nlls = 4,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MyoParam {
    Fp = 0,
    Vp = 1,
    Ve = 2,
    Ps = 3,
}

impl From<MyoParam> for Param {
    fn from(p: MyoParam) -> Param {
        match p {
            MyoParam::Fp => Param::Fp,
            MyoParam::Vp => Param::Vp,
            MyoParam::Ve => Param::Ve,
            MyoParam::Ps => Param::Ps,
        }
    }
}

/// Opaque curve dataset.
pub struct MyoDataset(CurveDataset);

/// Opaque parameter maps with provenance.
pub struct MyoMaps(MapFile);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> MyoStatus {
    match e {
        Error::InvalidInput(_) => MyoStatus::InvalidInput,
        Error::NumericalFailure { .. } => MyoStatus::Numerical,
        Error::Format { .. } => MyoStatus::Format,
        Error::Io(_) => MyoStatus::Io,
    }
}

/// Runs `f`, converting errors and panics into a status and the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), (MyoStatus, String)>) -> MyoStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            MyoStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            MyoStatus::Panic
        }
    }
}

type FfiResult<T> = Result<T, (MyoStatus, String)>;

fn lib<T>(r: myopinn::Result<T>) -> FfiResult<T> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (MyoStatus, String) {
    (MyoStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg<'a>(p: *const c_char) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (MyoStatus::InvalidInput, "path is not UTF-8".to_string()))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> FfiResult<&'a T> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> FfiResult<&'a [f64]> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> FfiResult<()> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message describing the calling thread's most recent failure; empty after a
/// success. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn myo_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Reads a `PQD1` dataset file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn myo_dataset_read(path: *const c_char, out: *mut *mut MyoDataset) -> MyoStatus {
    guard(|| {
        let ds = lib(io::read_dataset(path_arg(path)?))?;
        put(out, MyoDataset(ds))
    })
}

/// Generates the 4 x 4 block phantom (ve = 0.2, PS = 1.5) with `block` pixels
/// per block side. A non-finite or non-positive `snr` disables noise.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn myo_dataset_generate_mini(block: usize, snr: f64, seed: u64, out: *mut *mut MyoDataset) -> MyoStatus {
    guard(|| {
        let snr = (snr.is_finite() && snr > 0.0).then_some(snr);
        let dro = lib(generate_dro(&PhantomConfig::mini(block, snr, seed)))?;
        put(out, MyoDataset(lib(CurveDataset::from_dro(&dro))?))
    })
}

/// Writes the dataset as `PQD1`.
///
/// # Safety
/// `ds` must come from a `myo_dataset_*` constructor; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn myo_dataset_write(ds: *const MyoDataset, path: *const c_char) -> MyoStatus {
    guard(|| lib(io::write_dataset(path_arg(path)?, &deref(ds, "dataset")?.0)))
}

/// Volume size and number of time points.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn myo_dataset_dims(
    ds: *const MyoDataset,
    nx: *mut usize,
    ny: *mut usize,
    nz: *mut usize,
    n_time: *mut usize,
) -> MyoStatus {
    guard(|| {
        let d = &deref(ds, "dataset")?.0;
        if nx.is_null() || ny.is_null() || nz.is_null() || n_time.is_null() {
            return Err(null("output pointer"));
        }
        *nx = d.dims.nx;
        *ny = d.dims.ny;
        *nz = d.dims.nz;
        *n_time = d.grid.n;
        Ok(())
    })
}

/// Releases a dataset. Null is ignored.
///
/// # Safety
/// `ds` must be null or an unreleased handle.
#[no_mangle]
pub unsafe extern "C" fn myo_dataset_free(ds: *mut MyoDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Fits every pixel of `ds`. `iterations` overrides the PINN iteration count
/// when non-zero and is ignored for NLLS.
///
/// # Safety
/// `ds` must be a valid handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn myo_fit(
    ds: *const MyoDataset,
    method: MyoMethod,
    iterations: usize,
    seed: u64,
    out: *mut *mut MyoMaps,
) -> MyoStatus {
    guard(|| {
        let d = &deref(ds, "dataset")?.0;
        let variant = match method {
            MyoMethod::Pinn2cxm => Some(Variant::TwoCxm),
            MyoMethod::PinnMesh => Some(Variant::TwoCxmMesh),
            MyoMethod::PinnReduced => Some(Variant::Reduced),
            MyoMethod::PinnCombined => Some(Variant::Combined),
            MyoMethod::Nlls => None,
        };
        let file = match variant {
            Some(v) => {
                let mut cfg = PinnConfig { variant: v, seed, ..PinnConfig::default() };
                if iterations > 0 {
                    cfg.iterations = iterations;
                }
                let fit = lib(pinn::fit_volume(d.dims, &d.grid, &d.aif, &d.curves, &cfg))?;
                let echo = toml::to_string(&cfg).unwrap_or_default();
                MapFile::new(&fit.maps, v.method_name(), echo, seed)
            }
            None => {
                let cfg = NllsConfig { seed, ..NllsConfig::default() };
                let aif = lib(ConcentrationSeries::new(d.grid, d.aif.clone()))?;
                let fit = lib(nlls::fit_volume(d.dims, &d.curves, &aif, &cfg))?;
                let echo = toml::to_string(&cfg).unwrap_or_default();
                MapFile::new(&fit.maps, "nlls", echo, seed)
            }
        };
        put(out, MyoMaps(file))
    })
}

/// Reads a `PQM1` map file.
///
/// # Safety
/// `path` must be NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn myo_maps_read(path: *const c_char, out: *mut *mut MyoMaps) -> MyoStatus {
    guard(|| {
        let m = lib(io::read_maps(path_arg(path)?))?;
        put(out, MyoMaps(m))
    })
}

/// Writes maps as `PQM1`.
///
/// # Safety
/// `maps` must be a valid handle; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn myo_maps_write(maps: *const MyoMaps, path: *const c_char) -> MyoStatus {
    guard(|| lib(io::write_maps(path_arg(path)?, &deref(maps, "maps")?.0)))
}

/// Copies one parameter map into `buf` (storage order, x fastest). With a
/// short or null buffer, writes the required length to `len` and returns
/// `BufferTooSmall`.
///
/// # Safety
/// `buf` must hold `*len` doubles; `len` must be valid.
#[no_mangle]
pub unsafe extern "C" fn myo_maps_get(maps: *const MyoMaps, param: MyoParam, buf: *mut f64, len: *mut usize) -> MyoStatus {
    guard(|| {
        let m = &deref(maps, "maps")?.0.maps;
        if len.is_null() {
            return Err(null("len"));
        }
        let values = m.map(param.into());
        if buf.is_null() || *len < values.len() {
            *len = values.len();
            return Err((MyoStatus::BufferTooSmall, format!("buffer needs {} values", values.len())));
        }
        ptr::copy_nonoverlapping(values.as_ptr(), buf, values.len());
        *len = values.len();
        Ok(())
    })
}

/// Releases maps. Null is ignored.
///
/// # Safety
/// `maps` must be null or an unreleased handle.
#[no_mangle]
pub unsafe extern "C" fn myo_maps_free(maps: *mut MyoMaps) {
    if !maps.is_null() {
        drop(Box::from_raw(maps));
    }
}

/// NMSE and SSIM (7 x 7 window) of one parameter against the dataset's
/// ground truth. SSIM is NaN when the ground-truth map is constant.
///
/// # Safety
/// Handles must be valid; `nmse` and `ssim` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn myo_compare(
    est: *const MyoMaps,
    truth: *const MyoDataset,
    param: MyoParam,
    nmse: *mut f64,
    ssim: *mut f64,
) -> MyoStatus {
    guard(|| {
        let e = &deref(est, "maps")?.0.maps;
        let gt: &KineticMaps = deref(truth, "dataset")?
            .0
            .truth
            .as_ref()
            .ok_or_else(|| (MyoStatus::InvalidInput, "dataset has no ground truth".to_string()))?;
        if nmse.is_null() || ssim.is_null() {
            return Err(null("output pointer"));
        }
        let cmp = lib(compare_maps(e, gt, &SsimOptions::default()))?;
        let s = cmp.score(param.into());
        *nmse = s.nmse;
        *ssim = s.ssim;
        Ok(())
    })
}

/// Tissue curve of the 2CXM for an AIF sampled at `t0 + i dt`, `i < n`.
///
/// # Safety
/// `aif` and `tissue` must each hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn myo_solve_2cxm(
    fp: f64,
    vp: f64,
    ve: f64,
    ps: f64,
    t0: f64,
    dt: f64,
    n: usize,
    aif: *const f64,
    tissue: *mut f64,
) -> MyoStatus {
    guard(|| {
        let grid = lib(TimeGrid::new(t0, dt, n))?;
        let series = lib(ConcentrationSeries::new(grid, slice(aif, n, "aif")?.to_vec()))?;
        if tissue.is_null() {
            return Err(null("tissue"));
        }
        let sol = lib(solve_2cxm(&KineticParams { fp, vp, ve, ps }, &series, 1))?;
        ptr::copy_nonoverlapping(sol.tissue.values.as_ptr(), tissue, n);
        Ok(())
    })
}

/// Plasma to blood flow and volume.
///
/// # Safety
/// `fb` and `vb` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn myo_to_blood_units(fp: f64, vp: f64, hct: f64, rho: f64, fb: *mut f64, vb: *mut f64) -> MyoStatus {
    guard(|| {
        if fb.is_null() || vb.is_null() {
            return Err(null("output pointer"));
        }
        let (f, v) = lib(to_blood_units(fp, vp, &ConversionConstants { hct, rho }))?;
        *fb = f;
        *vb = v;
        Ok(())
    })
}
