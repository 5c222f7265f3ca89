//! C interface to the fewshot toolkit.
//!
//! Every call returns an [`FsStatus`]; on failure [`fs_last_error_message`]
//! describes what went wrong on the calling thread. Objects cross the
//! boundary as opaque handles that the caller releases with the matching
//! `*_free` function. Strings returned through `out` parameters are owned by
//! the caller and released with [`fs_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use fewshot::backbone::ToyBackbone;
use fewshot::checkpoint::load_model;
use fewshot::contextgen::{build_prompt, PromptTemplate};
use fewshot::corpus::{load_dataset, sample_episode, DataFormat, Episode, IntentDataset, Split};
use fewshot::distillation::kd_loss;
use fewshot::evalharness::evaluate;
use fewshot::objectives::{ce_loss_from_logits, joint_loss, JointObjectiveConfig};
use fewshot::synthetic::toy_intent_dataset;
use fewshot::trainer::IntentModel;
use ndarray::Array2;

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FsStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Contract = 5,
    Panic = 6,
}

/// Labeled train/dev/test splits.
pub struct FsDataset(IntentDataset);

/// A K-shot training set with its evaluation pool.
pub struct FsEpisode(Episode);

/// A saved encoder plus classification head.
pub struct FsModel(IntentModel<ToyBackbone>);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).unwrap_or_default());
}

struct Failure(FsStatus, String);

impl Failure {
    fn null(what: &str) -> Self {
        Failure(FsStatus::NullArgument, format!("`{what}` is null"))
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            FsStatus::Ok
        }
        Ok(Err(Failure(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic");
            FsStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(FsStatus::InvalidUtf8, format!("`{what}` is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure::null(what))
}

unsafe fn write_out<T>(out: *mut T, v: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::null(what));
    }
    out.write(v);
    Ok(())
}

unsafe fn write_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    let c = CString::new(s).map_err(|_| Failure(FsStatus::Contract, "string contains NUL".into()))?;
    write_out(out, c.into_raw(), "out")
}

unsafe fn matrix(p: *const f64, rows: usize, cols: usize, what: &str) -> Result<Array2<f64>, Failure> {
    if p.is_null() {
        return Err(Failure::null(what));
    }
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| Failure(FsStatus::InvalidArgument, "matrix size overflows".into()))?;
    let data = std::slice::from_raw_parts(p, n).to_vec();
    Array2::from_shape_vec((rows, cols), data).map_err(|e| Failure(FsStatus::InvalidArgument, e.to_string()))
}

fn contract(e: impl std::fmt::Display) -> Failure {
    Failure(FsStatus::Contract, e.to_string())
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn fs_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn fs_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a dataset directory or file. `format` is `"csv"` or `"jsonl"`.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fs_dataset_load(path: *const c_char, format: *const c_char, out: *mut *mut FsDataset) -> FsStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let format: DataFormat = str_arg(format, "format")?
            .parse()
            .map_err(|e: fewshot::corpus::CorpusError| Failure(FsStatus::InvalidArgument, e.to_string()))?;
        let ds = load_dataset(Path::new(path), format).map_err(|e| {
            let code = if matches!(e, fewshot::corpus::CorpusError::Io { .. }) { FsStatus::Io } else { FsStatus::Contract };
            Failure(code, e.to_string())
        })?;
        write_out(out, Box::into_raw(Box::new(FsDataset(ds))), "out")
    })
}

/// Builds the synthetic toy dataset (2 to 6 intents).
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fs_dataset_synthetic(
    labels: usize,
    train_per_label: usize,
    eval_per_label: usize,
    seed: u64,
    out: *mut *mut FsDataset,
) -> FsStatus {
    guard(|| {
        if !(2..=6).contains(&labels) || train_per_label == 0 || eval_per_label < 2 {
            return Err(Failure(FsStatus::InvalidArgument, "need 2..=6 labels, train_per_label ≥ 1, eval_per_label ≥ 2".into()));
        }
        let ds = toy_intent_dataset(labels, train_per_label, eval_per_label, seed);
        write_out(out, Box::into_raw(Box::new(FsDataset(ds))), "out")
    })
}

/// # Safety
/// `ds` must be a live handle and `out_labels` writable.
#[no_mangle]
pub unsafe extern "C" fn fs_dataset_num_labels(ds: *const FsDataset, out_labels: *mut usize) -> FsStatus {
    guard(|| write_out(out_labels, handle(ds, "ds")?.0.num_labels(), "out_labels"))
}

/// Row count of a split: 0 train, 1 dev, 2 test.
///
/// # Safety
/// `ds` must be a live handle and `out_rows` writable.
#[no_mangle]
pub unsafe extern "C" fn fs_dataset_split_len(ds: *const FsDataset, split: u32, out_rows: *mut usize) -> FsStatus {
    guard(|| {
        let ds = handle(ds, "ds")?;
        let split = *Split::ALL
            .get(split as usize)
            .ok_or_else(|| Failure(FsStatus::InvalidArgument, format!("split {split} is not 0, 1 or 2")))?;
        write_out(out_rows, ds.0.split(split).len(), "out_rows")
    })
}

/// Human-readable split statistics.
///
/// # Safety
/// `ds` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fs_dataset_stats(ds: *const FsDataset, out: *mut *mut c_char) -> FsStatus {
    guard(|| write_string(out, fewshot::corpus::dataset_stats(&handle(ds, "ds")?.0).to_string()))
}

/// # Safety
/// `ds` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn fs_dataset_free(ds: *mut FsDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Draws exactly `k` train items per label.
///
/// # Safety
/// `ds` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fs_episode_sample(ds: *const FsDataset, k: usize, seed: u64, out: *mut *mut FsEpisode) -> FsStatus {
    guard(|| {
        let ep = sample_episode(&handle(ds, "ds")?.0, k, seed).map_err(contract)?;
        write_out(out, Box::into_raw(Box::new(FsEpisode(ep))), "out")
    })
}

/// # Safety
/// `ep` must be a live handle and `out_items` writable.
#[no_mangle]
pub unsafe extern "C" fn fs_episode_num_items(ep: *const FsEpisode, out_items: *mut usize) -> FsStatus {
    guard(|| write_out(out_items, handle(ep, "ep")?.0.items.len(), "out_items"))
}

/// The episode in its on-disk JSON form.
///
/// # Safety
/// `ep` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fs_episode_to_json(ep: *const FsEpisode, out: *mut *mut c_char) -> FsStatus {
    guard(|| write_string(out, handle(ep, "ep")?.0.to_json()))
}

/// Generation prompt built from the episode's items for `label`.
///
/// # Safety
/// `ep` must be a live handle, `label` NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fs_build_prompt(ep: *const FsEpisode, label: *const c_char, out: *mut *mut c_char) -> FsStatus {
    guard(|| {
        let ep = handle(ep, "ep")?;
        let label = str_arg(label, "label")?;
        let items = ep.0.items_for(label);
        if items.is_empty() {
            return Err(Failure(FsStatus::InvalidArgument, format!("label `{label}` is not in the episode")));
        }
        write_string(out, build_prompt(&items, &PromptTemplate::default()).map_err(contract)?)
    })
}

/// # Safety
/// `ep` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn fs_episode_free(ep: *mut FsEpisode) {
    if !ep.is_null() {
        drop(Box::from_raw(ep));
    }
}

/// Loads a model checkpoint directory written by `fewshot train`.
///
/// # Safety
/// `dir` must be NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fs_model_load(dir: *const c_char, out: *mut *mut FsModel) -> FsStatus {
    guard(|| {
        let dir = str_arg(dir, "dir")?;
        let m = load_model::<ToyBackbone>(Path::new(dir)).map_err(|e| {
            let code = if matches!(e, fewshot::checkpoint::CheckpointError::Io { .. }) { FsStatus::Io } else { FsStatus::Contract };
            Failure(code, e.to_string())
        })?;
        write_out(out, Box::into_raw(Box::new(FsModel(m))), "out")
    })
}

/// # Safety
/// `model` must be a live handle and `out_labels` writable.
#[no_mangle]
pub unsafe extern "C" fn fs_model_num_labels(model: *const FsModel, out_labels: *mut usize) -> FsStatus {
    guard(|| write_out(out_labels, handle(model, "model")?.0.num_labels(), "out_labels"))
}

/// Name of label `index`.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fs_model_label(model: *const FsModel, index: usize, out: *mut *mut c_char) -> FsStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let name = m.0.label_set.get(index).ok_or_else(|| {
            Failure(FsStatus::InvalidArgument, format!("label index {index} out of range"))
        })?;
        write_string(out, name.clone())
    })
}

/// Writes the predicted label index of each of the `n` texts into `out_labels[0..n]`.
///
/// # Safety
/// `texts` must point to `n` NUL-terminated strings and `out_labels` to `n` writable slots.
#[no_mangle]
pub unsafe extern "C" fn fs_model_predict(
    model: *const FsModel,
    texts: *const *const c_char,
    n: usize,
    out_labels: *mut usize,
) -> FsStatus {
    guard(|| {
        let m = handle(model, "model")?;
        if n == 0 {
            return Ok(());
        }
        if texts.is_null() {
            return Err(Failure::null("texts"));
        }
        if out_labels.is_null() {
            return Err(Failure::null("out_labels"));
        }
        let owned: Vec<&str> = std::slice::from_raw_parts(texts, n)
            .iter()
            .enumerate()
            .map(|(i, p)| str_arg(*p, &format!("texts[{i}]")))
            .collect::<Result<_, _>>()?;
        let pred = m.0.predict(&owned).map_err(contract)?;
        std::slice::from_raw_parts_mut(out_labels, n).copy_from_slice(&pred);
        Ok(())
    })
}

/// Accuracy of the model on the episode's evaluation pool.
///
/// # Safety
/// Handles must be live and `out_accuracy` writable.
#[no_mangle]
pub unsafe extern "C" fn fs_model_evaluate(model: *const FsModel, ep: *const FsEpisode, out_accuracy: *mut f64) -> FsStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let ep = handle(ep, "ep")?;
        if m.0.label_set != ep.0.label_set {
            return Err(Failure(FsStatus::Contract, "model and episode label sets differ".into()));
        }
        let acc = evaluate(&m.0, &ep.0.eval_pool).map_err(contract)?;
        write_out(out_accuracy, acc, "out_accuracy")
    })
}

/// # Safety
/// `model` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn fs_model_free(model: *mut FsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Mean cross-entropy of row-major `rows × cols` logits against `labels[0..rows]`.
///
/// # Safety
/// `logits` must hold `rows*cols` values, `labels` `rows` values, and `out_loss` be writable.
#[no_mangle]
pub unsafe extern "C" fn fs_ce_loss(
    logits: *const f64,
    rows: usize,
    cols: usize,
    labels: *const usize,
    out_loss: *mut f64,
) -> FsStatus {
    guard(|| {
        let z = matrix(logits, rows, cols, "logits")?;
        if labels.is_null() {
            return Err(Failure::null("labels"));
        }
        let labels = std::slice::from_raw_parts(labels, rows);
        if let Some(bad) = labels.iter().find(|&&l| l >= cols) {
            return Err(Failure(FsStatus::InvalidArgument, format!("label {bad} out of range for {cols} classes")));
        }
        let (l, _) = ce_loss_from_logits(&z, labels).map_err(contract)?;
        write_out(out_loss, l, "out_loss")
    })
}

/// Mean KL(softmax(teacher/t) ‖ softmax(student/t)) over `rows` row-major rows.
///
/// # Safety
/// Both matrices must hold `rows*cols` values and `out_loss` be writable.
#[no_mangle]
pub unsafe extern "C" fn fs_kd_loss(
    student: *const f64,
    teacher: *const f64,
    rows: usize,
    cols: usize,
    t: f64,
    out_loss: *mut f64,
) -> FsStatus {
    guard(|| {
        let s = matrix(student, rows, cols, "student")?;
        let z = matrix(teacher, rows, cols, "teacher")?;
        write_out(out_loss, kd_loss(&s, &z, t).map_err(contract)?, "out_loss")
    })
}

/// `ce + lambda * mlm`.
///
/// # Safety
/// `out_loss` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fs_joint_loss(ce: f64, mlm: f64, lambda: f64, out_loss: *mut f64) -> FsStatus {
    guard(|| {
        let cfg = JointObjectiveConfig {
            lambda,
            ..Default::default()
        };
        cfg.validate().map_err(|e| Failure(FsStatus::InvalidArgument, e.to_string()))?;
        write_out(out_loss, joint_loss(ce, mlm, &cfg), "out_loss")
    })
}

