//! C ABI over the claps engine.
//!
//! Every function returns a [`ClapsStatus`]. On failure the message is
//! available from [`claps_last_error`] on the same thread until the next call.
//! Handles are opaque and must be released with their `_free` function.
//! Strings returned through `out` parameters are freed with [`claps_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use claps::harness::dataset::{sample_train_val, split_path, DatasetSplit};
use claps::harness::evaluate::evaluate;
use claps::harness::pipeline::{run_pipeline, OracleConfig, PipelineConfig};
use claps::harness::template::TemplateSpec;
use claps::oracle::ScoringClient;
use claps::reward::Evaluator;
use claps::vocab::{filter_word_tokens, WordMarker};
use claps::{ClapsError, Prompt, TokenId, Vocabulary};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClapsStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Oracle = 4,
    Data = 5,
    Panic = 6,
}

impl From<&ClapsError> for ClapsStatus {
    fn from(e: &ClapsError) -> Self {
        match e.exit_code() {
            2 => ClapsStatus::Config,
            3 => ClapsStatus::Oracle,
            _ => ClapsStatus::Data,
        }
    }
}

/// Token vocabulary together with its leading-space convention.
pub struct ClapsVocab {
    vocab: Vocabulary,
    marker: WordMarker,
}

/// Scoring client with its cache and query counters.
pub struct ClapsSession {
    client: ScoringClient,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

enum Fail {
    Null(&'static str),
    Utf8(&'static str),
    Claps(ClapsError),
}

impl From<ClapsError> for Fail {
    fn from(e: ClapsError) -> Self {
        Fail::Claps(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> ClapsStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ClapsStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer passed for `{what}`"));
            ClapsStatus::NullArgument
        }
        Ok(Err(Fail::Utf8(what))) => {
            set_error(format!("`{what}` is not valid UTF-8"));
            ClapsStatus::InvalidUtf8
        }
        Ok(Err(Fail::Claps(e))) => {
            set_error(e.to_string());
            ClapsStatus::from(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            ClapsStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail::Utf8(what))
}

unsafe fn opt_str_arg<'a>(p: *const c_char, what: &'static str) -> Result<Option<&'a str>, Fail> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, what).map(Some)
    }
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(what))
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " "))
        .expect("nul bytes removed")
        .into_raw()
}

/// Message for the last failed call on this thread, or NULL. Owned by the library.
#[no_mangle]
pub extern "C" fn claps_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn claps_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must be NULL or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn claps_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a vocabulary file. `marker` is `spm`, `bpe`, `flag` or a literal
/// glyph; NULL means `spm`. With `word_tokens_only` nonzero, tokens without
/// the marker are dropped.
///
/// # Safety
/// String arguments must be NULL or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn claps_vocab_load(
    path: *const c_char,
    marker: *const c_char,
    word_tokens_only: i32,
    out: *mut *mut ClapsVocab,
) -> ClapsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let marker: WordMarker = opt_str_arg(marker, "marker")?.unwrap_or("spm").parse()?;
        let mut vocab = Vocabulary::load(path)?;
        if word_tokens_only != 0 {
            vocab = filter_word_tokens(&vocab, &marker)?;
        }
        *out = Box::into_raw(Box::new(ClapsVocab { vocab, marker }));
        Ok(())
    })
}

/// # Safety
/// `vocab` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn claps_vocab_len(vocab: *const ClapsVocab, out: *mut usize) -> ClapsStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(vocab, "vocab")?.vocab.len();
        Ok(())
    })
}

/// # Safety
/// `vocab` must be NULL or a handle from [`claps_vocab_load`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn claps_vocab_free(vocab: *mut ClapsVocab) {
    if !vocab.is_null() {
        drop(Box::from_raw(vocab));
    }
}

/// Opens a scoring session. Exactly one of `endpoint` and `synthetic_spec`
/// must be non-NULL. `cache_dir` may be NULL for an in-memory cache.
///
/// # Safety
/// String arguments must be NULL or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn claps_session_open(
    endpoint: *const c_char,
    synthetic_spec: *const c_char,
    cache_dir: *const c_char,
    parallelism: usize,
    out: *mut *mut ClapsSession,
) -> ClapsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let cfg = OracleConfig {
            endpoint: opt_str_arg(endpoint, "endpoint")?.map(str::to_string),
            synthetic: opt_str_arg(synthetic_spec, "synthetic_spec")?.map(Into::into),
            cache_dir: opt_str_arg(cache_dir, "cache_dir")?.map(Into::into),
            parallelism: parallelism.max(1),
            ..OracleConfig::default()
        };
        *out = Box::into_raw(Box::new(ClapsSession {
            client: cfg.connect()?,
        }));
        Ok(())
    })
}

/// Queries issued through this session so far.
///
/// # Safety
/// `session` must be a live handle; both out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn claps_session_queries(
    session: *const ClapsSession,
    prompt_evals: *mut u64,
    example_forwards: *mut u64,
) -> ClapsStatus {
    guard(|| {
        let q = ref_arg(session, "session")?.client.queries();
        *out_arg(prompt_evals, "prompt_evals")? = q.prompt_evals;
        *out_arg(example_forwards, "example_forwards")? = q.example_forwards;
        Ok(())
    })
}

/// # Safety
/// `session` must be NULL or a handle from [`claps_session_open`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn claps_session_free(session: *mut ClapsSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}

/// Few-shot reward of a prompt on the validation shots drawn from the train split.
///
/// # Safety
/// Handles must be live; `tokens` must point to `len` ids (may be NULL when
/// `len` is 0); strings must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn claps_prompt_reward(
    session: *const ClapsSession,
    vocab: *const ClapsVocab,
    tokens: *const u32,
    len: usize,
    dataset: *const c_char,
    template: *const c_char,
    shots: usize,
    seed: u64,
    out: *mut f64,
) -> ClapsStatus {
    guard(|| {
        let s = ref_arg(session, "session")?;
        let v = ref_arg(vocab, "vocab")?;
        let prompt = prompt_arg(tokens, len, &v.vocab)?;
        let template = Arc::new(TemplateSpec::resolve(str_arg(template, "template")?)?);
        let split = DatasetSplit::load(
            split_path(Path::new(str_arg(dataset, "dataset")?), "train"),
            "train",
        )?;
        let (_, val) = sample_train_val(&split, &template, shots, seed)?;
        let reward = Evaluator::new(&s.client, &v.vocab, &v.marker).reward(&prompt, &val)?;
        *out_arg(out, "out")? = reward.0;
        Ok(())
    })
}

/// Accuracy of a prompt on a whole dataset split (`split` NULL means `test`).
///
/// # Safety
/// As for [`claps_prompt_reward`].
#[no_mangle]
pub unsafe extern "C" fn claps_evaluate(
    session: *const ClapsSession,
    vocab: *const ClapsVocab,
    tokens: *const u32,
    len: usize,
    dataset: *const c_char,
    split: *const c_char,
    template: *const c_char,
    out_accuracy: *mut f64,
) -> ClapsStatus {
    guard(|| {
        let s = ref_arg(session, "session")?;
        let v = ref_arg(vocab, "vocab")?;
        let prompt = prompt_arg(tokens, len, &v.vocab)?;
        let template = Arc::new(TemplateSpec::resolve(str_arg(template, "template")?)?);
        let split = opt_str_arg(split, "split")?.unwrap_or("test");
        let data = DatasetSplit::load(
            split_path(Path::new(str_arg(dataset, "dataset")?), split),
            split,
        )?;
        let report = evaluate(
            &Evaluator::new(&s.client, &v.vocab, &v.marker),
            &prompt,
            &template,
            &data,
        )?;
        *out_arg(out_accuracy, "out_accuracy")? = report.accuracy;
        Ok(())
    })
}

/// Runs the full pipeline from a TOML config using `session` for scoring.
/// On success `*out_json` receives the outcome as JSON.
///
/// # Safety
/// `session` must be live; `config_path` NUL-terminated; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn claps_run_pipeline(
    session: *const ClapsSession,
    config_path: *const c_char,
    out_json: *mut *mut c_char,
) -> ClapsStatus {
    guard(|| {
        let out = out_arg(out_json, "out_json")?;
        *out = ptr::null_mut();
        let s = ref_arg(session, "session")?;
        let cfg = PipelineConfig::load(str_arg(config_path, "config_path")?)?;
        let outcome = run_pipeline(&cfg, &s.client)?;
        *out = into_c_string(serde_json::to_string(&outcome).expect("outcome serializes"));
        Ok(())
    })
}

unsafe fn prompt_arg(tokens: *const u32, len: usize, vocab: &Vocabulary) -> Result<Prompt, Fail> {
    if len == 0 {
        return Ok(Prompt::empty());
    }
    if tokens.is_null() {
        return Err(Fail::Null("tokens"));
    }
    let ids: Vec<TokenId> = std::slice::from_raw_parts(tokens, len)
        .iter()
        .map(|&t| TokenId(t))
        .collect();
    if let Some(&bad) = ids.iter().find(|id| !vocab.contains(**id)) {
        return Err(ClapsError::UnknownToken(bad).into());
    }
    Ok(Prompt(ids))
}
