//! C ABI over the segzero library.
//!
//! Every function returns a [`SegzeroStatus`]; on failure the message is
//! available from [`segzero_last_error`] on the same thread. Handles are
//! opaque and must be released with their `_free` function. Strings passed
//! in are NUL-terminated UTF-8.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use segzero::dataprep::{read_dataset, synth_dataset, GroundTruthRecord, SynthConfig, TaskSample};
use segzero::eval::{run_benchmark, EvalConfig, PromptSource};
use segzero::grpo::{train, SegTask, TrainConfig, TrainError};
use segzero::parser::{extract_prompt, FormatMode};
use segzero::policy::{InitConfig, NetSpec, Policy, PolicyInput};
use segzero::rewards::{score, RewardConfig};
use segzero::segmenter::SegBackend;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegzeroStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Parse = 5,
    Backend = 6,
    NonFiniteLoss = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// Answer grammar used when parsing and scoring.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegzeroFormat {
    Strict = 0,
    Soft = 1,
}

impl From<SegzeroFormat> for FormatMode {
    fn from(f: SegzeroFormat) -> Self {
        match f {
            SegzeroFormat::Strict => FormatMode::Strict,
            SegzeroFormat::Soft => FormatMode::Soft,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SegzeroRewards {
    pub thinking_format: f64,
    pub seg_format: f64,
    pub bbox_iou: f64,
    pub bbox_l1: f64,
    pub point_l1: f64,
    pub total: f64,
}

/// Box corners then the two points, in 840×840 frame pixels.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SegzeroPrompt {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub p1x: f64,
    pub p1y: f64,
    pub p2x: f64,
    pub p2y: f64,
}

/// Opaque trained or freshly initialised policy.
pub struct SegzeroPolicy {
    inner: Policy,
}

/// Opaque list of ground-truth records.
pub struct SegzeroDataset {
    records: Vec<GroundTruthRecord>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).expect("interior NULs removed"));
}

type Res<T> = Result<T, (SegzeroStatus, String)>;

fn guard(f: impl FnOnce() -> Res<()>) -> SegzeroStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SegzeroStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside segzero");
            SegzeroStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Res<&'a str> {
    if p.is_null() {
        return Err((SegzeroStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| (SegzeroStatus::InvalidUtf8, format!("{name}: {e}")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Res<&'a T> {
    p.as_ref()
        .ok_or_else(|| (SegzeroStatus::NullPointer, format!("{name} is null")))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Res<&'a mut T> {
    p.as_mut()
        .ok_or_else(|| (SegzeroStatus::NullPointer, format!("{name} is null")))
}

fn record<'a>(ds: &'a SegzeroDataset, index: usize) -> Res<&'a GroundTruthRecord> {
    ds.records.get(index).ok_or_else(|| {
        (
            SegzeroStatus::InvalidArgument,
            format!("index {index} outside a dataset of {}", ds.records.len()),
        )
    })
}

/// Message of the last failed call on this thread; empty if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn segzero_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn segzero_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a freshly initialised segmentation policy.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn segzero_policy_new(seed: u64, out: *mut *mut SegzeroPolicy) -> SegzeroStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let inner = Policy::init(NetSpec::segmentation(), seed, &InitConfig::default());
        *out = Box::into_raw(Box::new(SegzeroPolicy { inner }));
        Ok(())
    })
}

/// Loads a policy checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn segzero_policy_load(path: *const c_char, out: *mut *mut SegzeroPolicy) -> SegzeroStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = out_arg(out, "out")?;
        let inner = Policy::load(Path::new(path)).map_err(|e| match e {
            segzero::policy::PolicyError::Io(_) => (SegzeroStatus::Io, e.to_string()),
            _ => (SegzeroStatus::Parse, e.to_string()),
        })?;
        *out = Box::into_raw(Box::new(SegzeroPolicy { inner }));
        Ok(())
    })
}

/// Writes a policy checkpoint.
///
/// # Safety
/// `policy` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn segzero_policy_save(policy: *const SegzeroPolicy, path: *const c_char) -> SegzeroStatus {
    guard(|| {
        let p = ref_arg(policy, "policy")?;
        let path = str_arg(path, "path")?;
        p.inner
            .save(Path::new(path))
            .map_err(|e| (SegzeroStatus::Io, e.to_string()))
    })
}

/// # Safety
/// `policy` must come from this library and not be used afterwards. Null is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn segzero_policy_free(policy: *mut SegzeroPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Number of trainable parameters, or 0 for a null handle.
///
/// # Safety
/// `policy` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn segzero_policy_num_params(policy: *const SegzeroPolicy) -> usize {
    policy.as_ref().map_or(0, |p| p.inner.num_params())
}

/// Generates `n` synthetic records from `seed`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn segzero_dataset_synth(n: usize, seed: u64, out: *mut *mut SegzeroDataset) -> SegzeroStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let records = synth_dataset(n, seed, &SynthConfig::default())
            .map_err(|e| (SegzeroStatus::InvalidArgument, e.to_string()))?;
        *out = Box::into_raw(Box::new(SegzeroDataset { records }));
        Ok(())
    })
}

/// Reads a JSON-lines dataset file.
///
/// # Safety
/// `path` must be NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn segzero_dataset_load(path: *const c_char, out: *mut *mut SegzeroDataset) -> SegzeroStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = out_arg(out, "out")?;
        let records = read_dataset(Path::new(path)).map_err(|e| match e {
            segzero::dataprep::DataError::Io(_) => (SegzeroStatus::Io, e.to_string()),
            _ => (SegzeroStatus::Parse, e.to_string()),
        })?;
        *out = Box::into_raw(Box::new(SegzeroDataset { records }));
        Ok(())
    })
}

/// Number of records, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn segzero_dataset_len(ds: *const SegzeroDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.records.len())
}

/// # Safety
/// `ds` must come from this library and not be used afterwards. Null is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn segzero_dataset_free(ds: *mut SegzeroDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Argmax response of `policy` to record `index`, copied into `buf` with a
/// terminating NUL. `written` receives the text length without the NUL; on
/// `BUFFER_TOO_SMALL` it holds the length needed.
///
/// # Safety
/// Handles must come from this library; `buf` must have room for `cap`
/// bytes (it may be null when `cap` is 0); `written` must be writable.
#[no_mangle]
pub unsafe extern "C" fn segzero_policy_respond(
    policy: *const SegzeroPolicy,
    ds: *const SegzeroDataset,
    index: usize,
    buf: *mut c_char,
    cap: usize,
    written: *mut usize,
) -> SegzeroStatus {
    guard(|| {
        let p = ref_arg(policy, "policy")?;
        let d = ref_arg(ds, "dataset")?;
        let written = out_arg(written, "written")?;
        let r = record(d, index)?;
        let sample = TaskSample::from_record(r).map_err(|e| (SegzeroStatus::InvalidArgument, e.to_string()))?;
        let text = p
            .inner
            .greedy(&PolicyInput::for_sample(&sample))
            .map_err(|e| (SegzeroStatus::InvalidArgument, e.to_string()))?
            .text;
        *written = text.len();
        if buf.is_null() || cap < text.len() + 1 {
            return Err((
                SegzeroStatus::BufferTooSmall,
                format!("need {} bytes, have {cap}", text.len() + 1),
            ));
        }
        ptr::copy_nonoverlapping(text.as_ptr(), buf.cast::<u8>(), text.len());
        *buf.add(text.len()) = 0;
        Ok(())
    })
}

/// Extracts the prompt from a response. `found` is set to 0 when the
/// response has no parseable answer, in which case `out` is untouched.
///
/// # Safety
/// `response` must be NUL-terminated; `out` and `found` writable.
#[no_mangle]
pub unsafe extern "C" fn segzero_parse_prompt(
    response: *const c_char,
    format: SegzeroFormat,
    out: *mut SegzeroPrompt,
    found: *mut i32,
) -> SegzeroStatus {
    guard(|| {
        let text = str_arg(response, "response")?;
        let out = out_arg(out, "out")?;
        let found = out_arg(found, "found")?;
        let (_, prompt) = extract_prompt(text, format.into());
        *found = 0;
        if let Some(p) = prompt {
            *out = SegzeroPrompt {
                x1: p.bbox.x1,
                y1: p.bbox.y1,
                x2: p.bbox.x2,
                y2: p.bbox.y2,
                p1x: p.p1.x,
                p1y: p.p1.y,
                p2x: p.p2.x,
                p2y: p.p2.y,
            };
            *found = 1;
        }
        Ok(())
    })
}

/// Scores a response against record `index` with default thresholds.
///
/// # Safety
/// `response` must be NUL-terminated, `ds` from this library, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn segzero_score(
    response: *const c_char,
    ds: *const SegzeroDataset,
    index: usize,
    format: SegzeroFormat,
    out: *mut SegzeroRewards,
) -> SegzeroStatus {
    guard(|| {
        let text = str_arg(response, "response")?;
        let d = ref_arg(ds, "dataset")?;
        let out = out_arg(out, "out")?;
        let r = record(d, index)?;
        let cfg = RewardConfig {
            format_mode: format.into(),
            ..Default::default()
        };
        let v = score(text, &r.truth(), &cfg);
        *out = SegzeroRewards {
            thinking_format: v.thinking_format,
            seg_format: v.seg_format,
            bbox_iou: v.bbox_iou,
            bbox_l1: v.bbox_l1,
            point_l1: v.point_l1,
            total: v.total,
        };
        Ok(())
    })
}

/// gIoU and cIoU over a synthetic dataset with the synthetic segmenter.
/// A null policy evaluates the ground-truth oracle prompts instead.
///
/// # Safety
/// Handles must be null (policy only) or come from this library; `giou`
/// and `ciou` must be writable.
#[no_mangle]
pub unsafe extern "C" fn segzero_evaluate(
    policy: *const SegzeroPolicy,
    ds: *const SegzeroDataset,
    giou: *mut f64,
    ciou: *mut f64,
) -> SegzeroStatus {
    guard(|| {
        let d = ref_arg(ds, "dataset")?;
        let giou = out_arg(giou, "giou")?;
        let ciou = out_arg(ciou, "ciou")?;
        let source = match policy.as_ref() {
            Some(p) => PromptSource::Greedy(&p.inner),
            None => PromptSource::GroundTruth,
        };
        let cfg = EvalConfig {
            rewards: RewardConfig::default(),
            backend: SegBackend::synthetic(),
        };
        let report = run_benchmark("ffi", &d.records, &source, &cfg).map_err(|e| {
            let status = match e {
                segzero::eval::EvalError::Segment { .. } => SegzeroStatus::Backend,
                _ => SegzeroStatus::InvalidArgument,
            };
            (status, e.to_string())
        })?;
        *giou = report.giou;
        *ciou = report.ciou;
        Ok(())
    })
}

/// Runs `steps` GRPO steps on `ds` in place, with default settings apart
/// from the seed and learning rate.
///
/// # Safety
/// Handles must come from this library; `policy` is updated in place.
#[no_mangle]
pub unsafe extern "C" fn segzero_train(
    policy: *mut SegzeroPolicy,
    ds: *const SegzeroDataset,
    steps: usize,
    seed: u64,
    learning_rate: f64,
) -> SegzeroStatus {
    guard(|| {
        let p = out_arg(policy, "policy")?;
        let d = ref_arg(ds, "dataset")?;
        let samples = d
            .records
            .iter()
            .map(TaskSample::from_record)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| (SegzeroStatus::InvalidArgument, e.to_string()))?;
        if samples.is_empty() {
            return Err((SegzeroStatus::InvalidArgument, "dataset is empty".into()));
        }
        let cfg = TrainConfig {
            steps,
            seed,
            learning_rate,
            ..Default::default()
        };
        let task = SegTask::new(samples, RewardConfig::default());
        let outcome = train(&cfg, &task, p.inner.clone(), None, None).map_err(|e| match e {
            TrainError::NonFiniteLoss { .. } => (SegzeroStatus::NonFiniteLoss, e.to_string()),
            _ => (SegzeroStatus::InvalidArgument, e.to_string()),
        })?;
        p.inner = outcome.policy;
        Ok(())
    })
}
