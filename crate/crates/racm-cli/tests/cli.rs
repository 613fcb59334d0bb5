//! End-to-end binary tests: exit codes, artifact determinism, output shape.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn racm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_racm"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf8 stdout")
}

fn assert_exit(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout:\n{}\nstderr:\n{}",
        stdout(out),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Config for fast runs on the bundled fixture corpus.
fn fixture_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("run.toml");
    let text = format!(
        "corpus = {:?}\nmin_freq = 1\nn_title = 8\nn_description = 12\nn_code = 8\n\
         d = 8\nk = 2\nlearning_rate = 0.01\nmax_epochs = 2\npatience = 2\nseed = 3\n{extra}",
        fixture("posts_small.jsonl")
    );
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn ingest_prints_the_fixture_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let out = racm(dir.path(), &["ingest", "--input", fixture("posts_small.jsonl").to_str().unwrap()]);
    assert_exit(&out, 0);
    let text = stdout(&out);
    assert!(text.contains("posts: 12"), "{text}");
    assert!(text.contains("distinct tags: 23"), "{text}");
    assert!(text.contains("avg tags/post: 2.50"), "{text}");
}

#[test]
fn xml_dump_and_jsonl_fixtures_are_twins() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("from_jsonl.jsonl");
    let b = dir.path().join("from_xml.jsonl");
    let out = racm(
        dir.path(),
        &[
            "ingest",
            "--input",
            fixture("posts_small.jsonl").to_str().unwrap(),
            "--out",
            a.to_str().unwrap(),
        ],
    );
    assert_exit(&out, 0);
    let out = racm(
        dir.path(),
        &[
            "ingest",
            "--input",
            fixture("posts_small.xml").to_str().unwrap(),
            "--format",
            "xml-dump",
            "--out",
            b.to_str().unwrap(),
        ],
    );
    assert_exit(&out, 0);
    // The dump carries answer and wiki rows; only the 12 questions survive,
    // and they round-trip to the same canonical bytes.
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn missing_input_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = racm(dir.path(), &["ingest", "--input", "no_such_file.jsonl"]);
    assert_exit(&out, 3);
}

#[test]
fn unknown_config_keys_are_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "speling = 1\n").unwrap();
    let out = racm(dir.path(), &["train", "--config", cfg.to_str().unwrap()]);
    assert_exit(&out, 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("speling"));
}

#[test]
fn training_without_a_corpus_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = racm(dir.path(), &["train"]);
    assert_exit(&out, 2);
}

#[test]
fn training_twice_reproduces_artifacts_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for sub in [&a, &b] {
        std::fs::create_dir(sub).unwrap();
        let cfg = fixture_config(sub, "");
        let out = racm(sub, &["train", "--config", cfg.to_str().unwrap()]);
        assert_exit(&out, 0);
    }
    assert_eq!(
        std::fs::read(a.join("model.ckpt")).unwrap(),
        std::fs::read(b.join("model.ckpt")).unwrap(),
        "checkpoints differ"
    );
    assert_eq!(
        std::fs::read(a.join("train_log.jsonl")).unwrap(),
        std::fs::read(b.join("train_log.jsonl")).unwrap(),
        "training logs differ"
    );
    let log = std::fs::read_to_string(a.join("train_log.jsonl")).unwrap();
    let header = log.lines().next().unwrap();
    assert!(header.contains("\"config\""), "log embeds the config snapshot: {header}");
    assert!(!log.contains("wall_ms"), "wall time must not reach the artifact");
}

#[test]
fn evaluation_is_deterministic_and_embeds_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture_config(dir.path(), "");
    let out = racm(dir.path(), &["train", "--config", cfg.to_str().unwrap()]);
    assert_exit(&out, 0);
    let mut texts = Vec::new();
    for name in ["r1.json", "r2.json"] {
        let out = racm(
            dir.path(),
            &["evaluate", "--config", cfg.to_str().unwrap(), "--split", "test", "--out", name],
        );
        assert_exit(&out, 0);
        texts.push(std::fs::read_to_string(dir.path().join(name)).unwrap());
    }
    assert_eq!(texts[0], texts[1], "reports differ across reruns");
    assert!(texts[0].contains("\"config\""));
}

#[test]
fn no_ra_evaluation_ignores_any_index_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture_config(dir.path(), "ablation = \"no-ra\"\n");
    let out = racm(dir.path(), &["train", "--config", cfg.to_str().unwrap()]);
    assert_exit(&out, 0);
    let out = racm(
        dir.path(),
        &["build-index", "--config", cfg.to_str().unwrap(), "--out", "idx.bin"],
    );
    assert_exit(&out, 0);
    let without = racm(
        dir.path(),
        &["evaluate", "--config", cfg.to_str().unwrap(), "--out", "p.json"],
    );
    assert_exit(&without, 0);
    let with = racm(
        dir.path(),
        &[
            "evaluate",
            "--config",
            cfg.to_str().unwrap(),
            "--index",
            "idx.bin",
            "--out",
            "q.json",
        ],
    );
    assert_exit(&with, 0);
    let strip = |s: String| {
        s.lines().filter(|l| !l.starts_with("report written")).collect::<Vec<_>>().join("\n")
    };
    assert_eq!(strip(stdout(&without)), strip(stdout(&with)));
    assert_eq!(
        std::fs::read(dir.path().join("p.json")).unwrap(),
        std::fs::read(dir.path().join("q.json")).unwrap()
    );
}

#[test]
fn index_rebuild_is_byte_identical_and_counts_the_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture_config(dir.path(), "");
    for name in ["i1.bin", "i2.bin"] {
        let out = racm(
            dir.path(),
            &["build-index", "--config", cfg.to_str().unwrap(), "--out", name],
        );
        assert_exit(&out, 0);
        assert!(stdout(&out).contains("indexed 12 posts"), "{}", stdout(&out));
    }
    assert_eq!(
        std::fs::read(dir.path().join("i1.bin")).unwrap(),
        std::fs::read(dir.path().join("i2.bin")).unwrap()
    );
}

#[test]
fn recommend_prints_exactly_the_requested_tags_in_rank_order() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture_config(dir.path(), "");
    let out = racm(dir.path(), &["train", "--config", cfg.to_str().unwrap()]);
    assert_exit(&out, 0);
    let out = racm(
        dir.path(),
        &["recommend", "--config", cfg.to_str().unwrap(), "--id", "104", "--top", "5"],
    );
    assert_exit(&out, 0);
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 5, "{text}");
    let mut probs = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        assert!(line.trim_start().starts_with(&format!("{}.", i + 1)), "{line}");
        let p: f64 = line.split("p=").nth(1).unwrap().trim().parse().unwrap();
        probs.push(p);
    }
    assert!(probs.windows(2).all(|w| w[0] >= w[1]), "not rank ordered: {probs:?}");
}

#[test]
fn recommend_for_an_unknown_id_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture_config(dir.path(), "");
    let out = racm(dir.path(), &["train", "--config", cfg.to_str().unwrap()]);
    assert_exit(&out, 0);
    let out = racm(
        dir.path(),
        &["recommend", "--config", cfg.to_str().unwrap(), "--id", "nope"],
    );
    assert_exit(&out, 2);
}

#[test]
fn ablate_prints_exactly_three_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture_config(dir.path(), "");
    let out = racm(
        dir.path(),
        &["ablate", "--config", cfg.to_str().unwrap(), "--out", "table.json"],
    );
    assert_exit(&out, 0);
    let text = stdout(&out);
    for name in ["full", "no-ra", "no-cmf"] {
        assert_eq!(
            text.lines().filter(|l| l.starts_with(name)).count(),
            1,
            "{text}"
        );
    }
    let table: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("table.json")).unwrap())
            .unwrap();
    assert_eq!(table["rows"].as_array().unwrap().len(), 3);
    assert!(table["config"].is_object());
}

#[test]
fn seed_override_changes_the_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture_config(dir.path(), "");
    let out = racm(dir.path(), &["train", "--config", cfg.to_str().unwrap()]);
    assert_exit(&out, 0);
    let base = std::fs::read(dir.path().join("model.ckpt")).unwrap();
    let out = racm(
        dir.path(),
        &["train", "--config", cfg.to_str().unwrap(), "--seed", "99"],
    );
    assert_exit(&out, 0);
    let other = std::fs::read(dir.path().join("model.ckpt")).unwrap();
    assert_ne!(base, other, "seed override had no effect");
}
