use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use claps_ffi::*;

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path();
        std::fs::write(
            p.join("vocab.tsv"),
            "0\t\u{2581}good\t1\n1\t\u{2581}bad\t1\n2\tsub\t0\n",
        )
        .unwrap();
        std::fs::write(
            p.join("oracle.json"),
            r#"{"num_classes":2,"utilities":{"0":2.0,"1":-2.0,"2":0.0},"default_offset":-1.0}"#,
        )
        .unwrap();
        let mut train = String::new();
        for i in 0..8 {
            train.push_str(&format!("{}\ttrain {i}\n", i % 2));
        }
        std::fs::create_dir(p.join("data")).unwrap();
        std::fs::write(p.join("data/train.tsv"), &train).unwrap();
        std::fs::write(p.join("data/test.tsv"), "0\tt0\n1\tt1\n1\tt2\n").unwrap();
        Fixture { dir }
    }

    fn path(&self, rel: &str) -> CString {
        CString::new(self.dir.path().join(rel).to_str().unwrap()).unwrap()
    }
}

fn last_error() -> String {
    let p = claps_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn log_sigmoid(z: f64) -> f64 {
    -(1.0 + (-z).exp()).ln()
}

unsafe fn open(f: &Fixture) -> (*mut ClapsVocab, *mut ClapsSession) {
    let mut vocab = ptr::null_mut();
    assert_eq!(
        claps_vocab_load(f.path("vocab.tsv").as_ptr(), ptr::null(), 1, &mut vocab),
        ClapsStatus::Ok
    );
    let mut session = ptr::null_mut();
    let spec = f.path("oracle.json");
    assert_eq!(
        claps_session_open(ptr::null(), spec.as_ptr(), ptr::null(), 2, &mut session),
        ClapsStatus::Ok
    );
    (vocab, session)
}

#[test]
fn vocab_handle_roundtrip() {
    let f = Fixture::new();
    unsafe {
        let (vocab, session) = open(&f);
        let mut n = 0usize;
        assert_eq!(claps_vocab_len(vocab, &mut n), ClapsStatus::Ok);
        assert_eq!(n, 2);
        claps_vocab_free(vocab);
        claps_session_free(session);
    }
    assert!(claps_last_error().is_null());
}

#[test]
fn reward_and_accuracy_match_closed_forms() {
    let f = Fixture::new();
    let dataset = f.path("data");
    let template = CString::new("sst2").unwrap();
    unsafe {
        let (vocab, session) = open(&f);
        let good = [0u32];
        let mut reward = 0.0;
        let st = claps_prompt_reward(
            session,
            vocab,
            good.as_ptr(),
            1,
            dataset.as_ptr(),
            template.as_ptr(),
            2,
            0,
            &mut reward,
        );
        assert_eq!(st, ClapsStatus::Ok, "{}", last_error());
        assert!((reward - log_sigmoid(1.0)).abs() < 1e-12);

        let mut acc = -1.0;
        let st = claps_evaluate(
            session,
            vocab,
            good.as_ptr(),
            1,
            dataset.as_ptr(),
            ptr::null(),
            template.as_ptr(),
            &mut acc,
        );
        assert_eq!(st, ClapsStatus::Ok, "{}", last_error());
        assert_eq!(acc, 1.0);

        let mut evals = 0;
        let mut forwards = 0;
        assert_eq!(
            claps_session_queries(session, &mut evals, &mut forwards),
            ClapsStatus::Ok
        );
        assert_eq!((evals, forwards), (2, 7));

        claps_vocab_free(vocab);
        claps_session_free(session);
    }
}

#[test]
fn errors_map_to_status_codes() {
    let f = Fixture::new();
    unsafe {
        let mut vocab = ptr::null_mut();
        assert_eq!(
            claps_vocab_load(ptr::null(), ptr::null(), 1, &mut vocab),
            ClapsStatus::NullArgument
        );
        assert!(last_error().contains("path"));

        let missing = f.path("missing.tsv");
        assert_eq!(
            claps_vocab_load(missing.as_ptr(), ptr::null(), 1, &mut vocab),
            ClapsStatus::Data
        );
        assert!(vocab.is_null());

        let mut session = ptr::null_mut();
        assert_eq!(
            claps_session_open(ptr::null(), ptr::null(), ptr::null(), 1, &mut session),
            ClapsStatus::Config
        );
        assert!(last_error().contains("oracle"));

        let bad_utf8 = [0xffu8, 0];
        assert_eq!(
            claps_vocab_load(bad_utf8.as_ptr().cast(), ptr::null(), 1, &mut vocab),
            ClapsStatus::InvalidUtf8
        );

        let (vocab, session) = open(&f);
        let unknown = [2u32];
        let dataset = f.path("data");
        let template = CString::new("sst2").unwrap();
        let mut r = 0.0;
        let st = claps_prompt_reward(
            session,
            vocab,
            unknown.as_ptr(),
            1,
            dataset.as_ptr(),
            template.as_ptr(),
            2,
            0,
            &mut r,
        );
        assert_eq!(st, ClapsStatus::Data);
        assert!(last_error().contains("unknown token"));
        claps_vocab_free(vocab);
        claps_session_free(session);
    }
}

#[test]
fn unreachable_endpoint_is_an_oracle_error() {
    let f = Fixture::new();
    unsafe {
        let mut vocab = ptr::null_mut();
        assert_eq!(
            claps_vocab_load(f.path("vocab.tsv").as_ptr(), ptr::null(), 1, &mut vocab),
            ClapsStatus::Ok
        );
        let mut session = ptr::null_mut();
        let url = CString::new("http://127.0.0.1:9").unwrap();
        assert_eq!(
            claps_session_open(url.as_ptr(), ptr::null(), ptr::null(), 1, &mut session),
            ClapsStatus::Ok
        );
        let dataset = f.path("data");
        let template = CString::new("sst2").unwrap();
        let mut acc = 0.0;
        let st = claps_evaluate(
            session,
            vocab,
            ptr::null(),
            0,
            dataset.as_ptr(),
            ptr::null(),
            template.as_ptr(),
            &mut acc,
        );
        assert_eq!(st, ClapsStatus::Oracle);
        claps_vocab_free(vocab);
        claps_session_free(session);
    }
}

#[test]
fn pipeline_returns_json_outcome() {
    let f = Fixture::new();
    std::fs::write(
        f.dir.path().join("run.toml"),
        "work_dir = \"work\"\nvocab = \"vocab.tsv\"\ndataset = \"data\"\ntemplate = \"sst2\"\nshots = 2\n\
         [cluster]\nenabled = false\n[prune]\nkeep = \"count:1\"\n[search]\nstrategy = \"greedy\"\nprompt_len = 2\n",
    )
    .unwrap();
    unsafe {
        let (vocab, session) = open(&f);
        let mut json = ptr::null_mut();
        let cfg = f.path("run.toml");
        let st = claps_run_pipeline(session, cfg.as_ptr(), &mut json);
        assert_eq!(st, ClapsStatus::Ok, "{}", last_error());
        let v: serde_json::Value =
            serde_json::from_str(CStr::from_ptr(json).to_str().unwrap()).unwrap();
        assert_eq!(v["prompt"], "good good");
        assert_eq!(v["test"]["accuracy"], 1.0);
        claps_string_free(json);
        claps_vocab_free(vocab);
        claps_session_free(session);
    }
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(claps_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_the_api_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/claps.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "claps_last_error",
        "claps_vocab_load",
        "claps_vocab_free",
        "claps_session_open",
        "claps_session_queries",
        "claps_prompt_reward",
        "claps_evaluate",
        "claps_run_pipeline",
        "claps_string_free",
        "CLAPS_STATUS_ORACLE",
        "typedef struct ClapsVocab ClapsVocab;",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
    let Ok(out) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-x", "c", "-std=c99", "-Wall", "-Werror"])
        .arg(&header)
        .output()
    else {
        eprintln!("no C compiler found; skipping syntax check");
        return;
    };
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}
