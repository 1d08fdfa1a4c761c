mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::*;

const UTILS: [f64; 8] = [-0.4, 1.2, -0.1, 0.3, 0.9, -1.0, 0.0, 0.2];

fn fixture(dir: &Path) {
    let emb: Vec<Vec<f64>> = (0..UTILS.len())
        .map(|i| vec![i as f64, (i % 3) as f64])
        .collect();
    write_fixture(dir, &UTILS, &emb, 6, 5);
}

fn claps(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_claps"))
        .current_dir(dir)
        .env_remove("CLAPS_ENDPOINT")
        .env_remove("CLAPS_CACHE_DIR")
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = claps(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn stage_by_stage_workflow() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fixture(d);
    let oracle = ["--synthetic-oracle", "oracle.json"];
    let data = ["--vocab", "vocab.tsv", "--dataset", "data", "--shots", "2"];

    ok(
        d,
        &[
            "cluster",
            "--vocab",
            "vocab.tsv",
            "--embeddings",
            "emb.txt",
            "--k",
            "5",
            "--out",
            "c.space",
        ],
    );
    assert!(d.join("c.space").exists());

    let args = [
        &oracle[..],
        &[
            "prune", "--space", "c.space", "--keep", "3", "--out", "p.space",
        ],
        &data[..],
    ]
    .concat();
    ok(d, &args);
    assert!(d.join("p.space").exists());
    assert!(d.join("p.space.influence.tsv").exists());

    let args = [
        &oracle[..],
        &[
            "search",
            "--space",
            "p.space",
            "--strategy",
            "greedy",
            "--k-tokens",
            "2",
            "--out",
            "s.json",
        ],
        &data[..],
    ]
    .concat();
    let stdout = ok(d, &args);
    assert!(stdout.contains("queries:"), "{stdout}");
    let log = std::fs::read_to_string(d.join("s.json.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);

    let stdout = ok(
        d,
        &[
            &oracle[..],
            &[
                "eval",
                "--vocab",
                "vocab.tsv",
                "--prompt",
                "s.json",
                "--dataset",
                "data",
                "--out",
                "e.json",
            ],
        ]
        .concat(),
    );
    assert!(stdout.contains("accuracy"), "{stdout}");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("e.json")).unwrap()).unwrap();
    assert_eq!(report["examples"], 10);

    let args = [
        &oracle[..],
        &[
            "analyze",
            "--space",
            "p.space",
            "--samples",
            "5",
            "--k-tokens",
            "2",
            "--influence",
            "p.space.influence.tsv",
        ],
        &data[..],
    ]
    .concat();
    ok(d, &args);

    // Plain id lists are accepted as prompts too.
    std::fs::write(d.join("ids.txt"), "1 4\n").unwrap();
    ok(
        d,
        &[
            &oracle[..],
            &[
                "eval",
                "--vocab",
                "vocab.tsv",
                "--prompt",
                "ids.txt",
                "--dataset",
                "data",
            ],
        ]
        .concat(),
    );
}

#[test]
fn run_reuses_artifacts_on_rerun() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fixture(d);
    std::fs::write(
        d.join("run.toml"),
        pipeline_toml(
            Some(5),
            "count:3",
            "strategy = \"greedy\"\nprompt_len = 2",
            3,
        ),
    )
    .unwrap();
    let first = ok(d, &["run", "--config", "run.toml"]);
    assert!(first.contains("best prompt"), "{first}");
    let second = ok(d, &["run", "--config", "run.toml"]);
    for stage in ["cluster", "influence", "prune", "search"] {
        let line = second.lines().find(|l| l.starts_with(stage)).unwrap();
        assert!(
            line.contains("reused") && line.contains(" 0 prompt evals"),
            "{line}"
        );
    }
    assert!(d.join("work/result.json").exists());
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fixture(d);
    let base = [
        "prune",
        "--vocab",
        "vocab.tsv",
        "--dataset",
        "data",
        "--shots",
        "2",
        "--keep",
        "2",
        "--out",
        "p.space",
    ];

    // No oracle configured.
    assert_eq!(code(&claps(d, &base)), 2);
    // Conflicting oracle flags and bad arguments are usage errors.
    let both = [
        &[
            "--endpoint",
            "http://x",
            "--synthetic-oracle",
            "oracle.json",
        ][..],
        &base[..],
    ]
    .concat();
    assert_eq!(code(&claps(d, &both)), 2);
    assert_eq!(code(&claps(d, &["search", "--k-tokens", "many"])), 2);
    // Nothing listens on port 1.
    let down = [&["--endpoint", "http://127.0.0.1:1"][..], &base[..]].concat();
    assert_eq!(code(&claps(d, &down)), 3);
    // Missing data files.
    let missing = [
        "--synthetic-oracle",
        "oracle.json",
        "prune",
        "--vocab",
        "vocab.tsv",
        "--dataset",
        "nowhere",
        "--out",
        "p.space",
    ];
    assert_eq!(code(&claps(d, &missing)), 4);
    let missing_cfg = claps(d, &["run", "--config", "absent.toml"]);
    assert_ne!(code(&missing_cfg), 0);
    assert!(!String::from_utf8_lossy(&missing_cfg.stderr).is_empty());
}
