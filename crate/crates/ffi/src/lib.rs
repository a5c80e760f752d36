//! C ABI over `gop_reuse`.
//!
//! Every fallible entry point returns a [`GrStatus`]. On failure a message is
//! kept per thread and can be read with [`gr_last_error`] until the next call
//! on that thread. Streams are opaque handles released with
//! [`gr_stream_free`]; byte buffers and strings handed out by the library are
//! released with [`gr_bytes_free`] and [`gr_string_free`].

use gop_reuse::accumulate::{accumulate_gop, Interpolation};
use gop_reuse::anomaly::{detect_abnormal, AnomalyConfig};
use gop_reuse::capability::{system_capability, CapabilityParams};
use gop_reuse::scheduler::{run_pipeline, PipelineConfig};
use gop_reuse::stream::{emit_stream, parse_stream, StreamError};
use gop_reuse::synth::{generate, SynthSpec};
use gop_reuse::GopStream;
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{self, AssertUnwindSafe};
use std::ptr;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    MalformedStream = 3,
    InvalidStream = 4,
    Pipeline = 5,
    Panic = 6,
}

/// Opaque parsed stream.
pub struct GrStream {
    inner: GopStream,
}

/// Library-owned byte buffer; release with [`gr_bytes_free`].
#[repr(C)]
#[derive(Debug)]
pub struct GrBytes {
    pub data: *mut u8,
    pub len: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GrAnomalyVerdict {
    pub abnormal: bool,
    pub degenerate_sigma: bool,
    pub flagged_fraction: f64,
    pub t1_count: usize,
    pub t2_count: usize,
    pub joint_count: usize,
    pub mu: f64,
    pub sigma: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(GrStatus, String);

impl Failure {
    fn null(what: &str) -> Self {
        Failure(GrStatus::NullPointer, format!("{what} is null"))
    }
    fn arg(msg: impl Into<String>) -> Self {
        Failure(GrStatus::InvalidArgument, msg.into())
    }
}

impl From<StreamError> for Failure {
    fn from(e: StreamError) -> Self {
        let status = match e {
            StreamError::MalformedHeader(_) => GrStatus::MalformedStream,
            _ => GrStatus::InvalidStream,
        };
        Failure(status, e.to_string())
    }
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> GrStatus {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
    match panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GrStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            GrStatus::Panic
        }
    }
}

unsafe fn stream_ref<'a>(stream: *const GrStream) -> Result<&'a GopStream, Failure> {
    stream.as_ref().map(|s| &s.inner).ok_or_else(|| Failure::null("stream"))
}

unsafe fn c_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if s.is_null() {
        return Err(Failure::null(what));
    }
    CStr::from_ptr(s).to_str().map_err(|_| Failure::arg(format!("{what} is not UTF-8")))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::null(what));
    }
    out.write(value);
    Ok(())
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).unwrap_or_default().into_raw()
}

/// Message for the most recent failure on this thread, or NULL.
///
/// The pointer stays valid until the next library call on this thread.
#[no_mangle]
pub extern "C" fn gr_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses a binary or JSON sidecar.
///
/// # Safety
/// `data` must point to `len` readable bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gr_stream_parse(data: *const u8, len: usize, out: *mut *mut GrStream) -> GrStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::null("out"));
        }
        out.write(ptr::null_mut());
        if data.is_null() && len > 0 {
            return Err(Failure::null("data"));
        }
        let bytes = if len == 0 { &[][..] } else { std::slice::from_raw_parts(data, len) };
        let inner = parse_stream(bytes)?;
        out.write(Box::into_raw(Box::new(GrStream { inner })));
        Ok(())
    })
}

/// Builds a stream from a synthetic generator spec in JSON.
///
/// # Safety
/// `spec_json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gr_synth_generate(spec_json: *const c_char, out: *mut *mut GrStream) -> GrStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::null("out"));
        }
        out.write(ptr::null_mut());
        let spec = SynthSpec::from_json(c_str(spec_json, "spec_json")?).map_err(|e| Failure::arg(e.to_string()))?;
        let inner = generate(&spec).map_err(|e| Failure::arg(e.to_string()))?;
        out.write(Box::into_raw(Box::new(GrStream { inner })));
        Ok(())
    })
}

/// Releases a stream. NULL is ignored.
///
/// # Safety
/// `stream` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn gr_stream_free(stream: *mut GrStream) {
    if !stream.is_null() {
        drop(Box::from_raw(stream));
    }
}

/// # Safety
/// `stream` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gr_stream_frame_count(stream: *const GrStream, out: *mut usize) -> GrStatus {
    guard(|| write_out(out, stream_ref(stream)?.len(), "out"))
}

/// # Safety
/// `stream` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gr_stream_gop_count(stream: *const GrStream, out: *mut usize) -> GrStatus {
    guard(|| write_out(out, stream_ref(stream)?.gop_count(), "out"))
}

/// # Safety
/// `stream` must be a live handle; `width` and `height` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gr_stream_dims(stream: *const GrStream, width: *mut u32, height: *mut u32) -> GrStatus {
    guard(|| {
        let s = stream_ref(stream)?;
        if width.is_null() || height.is_null() {
            return Err(Failure::null("width/height"));
        }
        width.write(s.frame_width());
        height.write(s.frame_height());
        Ok(())
    })
}

/// Serializes to the binary sidecar format.
///
/// # Safety
/// `stream` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gr_stream_emit(stream: *const GrStream, out: *mut GrBytes) -> GrStatus {
    guard(|| {
        let bytes = emit_stream(stream_ref(stream)?).into_boxed_slice();
        let len = bytes.len();
        let data = Box::into_raw(bytes).cast::<u8>();
        write_out(out, GrBytes { data, len }, "out")
    })
}

/// # Safety
/// `bytes` must come from [`gr_stream_emit`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn gr_bytes_free(bytes: GrBytes) {
    if !bytes.data.is_null() {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(bytes.data, bytes.len)));
    }
}

/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn gr_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Accumulates the GOP holding `frame_index` and runs the abnormal-frame
/// test on that frame with threshold `tau_ab`.
///
/// # Safety
/// `stream` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gr_detect_abnormal(
    stream: *const GrStream,
    frame_index: u32,
    tau_ab: f64,
    out: *mut GrAnomalyVerdict,
) -> GrStatus {
    guard(|| {
        let s = stream_ref(stream)?;
        if out.is_null() {
            return Err(Failure::null("out"));
        }
        let cfg = AnomalyConfig::with_tau_ab(tau_ab);
        cfg.validate().map_err(|e| Failure::arg(e.to_string()))?;
        let gop = s
            .split_gops()
            .into_iter()
            .find(|g| g.frame(frame_index).is_some())
            .ok_or_else(|| Failure::arg(format!("no frame with index {frame_index}")))?;
        let pipeline = |e: String| Failure(GrStatus::Pipeline, e);
        let features = accumulate_gop(&gop, Interpolation::Bilinear).map_err(|e| pipeline(e.to_string()))?;
        let f = features
            .iter()
            .find(|f| f.frame_index == frame_index)
            .ok_or_else(|| pipeline(format!("frame {frame_index} was not accumulated")))?;
        let v = detect_abnormal(f, &cfg).map_err(|e| pipeline(e.to_string()))?;
        out.write(GrAnomalyVerdict {
            abnormal: v.abnormal,
            degenerate_sigma: v.degenerate_sigma,
            flagged_fraction: v.flagged_fraction,
            t1_count: v.t1_count,
            t2_count: v.t2_count,
            joint_count: v.joint_count,
            mu: v.mu,
            sigma: v.sigma,
        });
        Ok(())
    })
}

/// Runs the pipeline with built-in detectors and returns the report as JSON.
///
/// `config_json` may be NULL for defaults. Per-frame detector failures are
/// part of the report and do not change the status.
///
/// # Safety
/// `stream` must be a live handle; `config_json` must be NULL or a
/// NUL-terminated string; `out` must be writable. Free the result with
/// [`gr_string_free`].
#[no_mangle]
pub unsafe extern "C" fn gr_run_pipeline(
    stream: *const GrStream,
    config_json: *const c_char,
    out: *mut *mut c_char,
) -> GrStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::null("out"));
        }
        out.write(ptr::null_mut());
        let s = stream_ref(stream)?;
        let cfg: PipelineConfig = if config_json.is_null() {
            PipelineConfig::default()
        } else {
            serde_json::from_str(c_str(config_json, "config_json")?).map_err(|e| Failure::arg(e.to_string()))?
        };
        let report = run_pipeline(s, &cfg).map_err(|e| Failure(GrStatus::Pipeline, e.to_string()))?;
        out.write(into_c_string(report.to_json()));
        Ok(())
    })
}

/// Analytic system capability with `p_pb = 1 - p_i`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gr_system_capability(
    p_i: f64,
    p_ab: f64,
    p_new: f64,
    c_i: f64,
    c_pb: f64,
    out: *mut f64,
) -> GrStatus {
    guard(|| {
        let params = CapabilityParams::new(p_i, p_ab, p_new, c_i, c_pb).map_err(|e| Failure::arg(e.to_string()))?;
        let c = system_capability(&params).map_err(|e| Failure::arg(e.to_string()))?;
        write_out(out, c, "out")
    })
}
