use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn sample(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn longspan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_longspan"))
        .args(args)
        .env("LONGSPAN_LOG", "warn")
        .output()
        .expect("binary runs")
}

/// Runs a subcommand with `--set` pairs and insists on success.
fn ok(cmd: &str, sets: &[(&str, String)]) -> String {
    let mut args = vec![cmd.to_owned()];
    for (k, v) in sets {
        args.push("--set".into());
        args.push(format!("{k}={v}"));
    }
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    let out = longspan(&refs);
    assert!(
        out.status.success(),
        "{cmd} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> String {
    path.display().to_string()
}

fn small_model(dir: &Path, output: &str) -> Vec<(&'static str, String)> {
    vec![
        ("train_corpus", p(&dir.join("paragraphs.txt"))),
        ("heldout_corpus", p(&dir.join("paragraphs.heldout.txt"))),
        ("vocab", p(&dir.join("vocab.txt"))),
        ("output", p(&dir.join(output))),
        ("model.embed_dim", "32".into()),
        ("model.hidden_dim", "64".into()),
        ("model.num_layers", "1".into()),
        ("train.batch_size", "2".into()),
    ]
}

fn prepared() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        "build-corpus",
        &[
            ("input", p(&sample("sample.txt"))),
            ("out_dir", p(d)),
            ("target_chars", "600".into()),
            ("heldout_fraction", "0.2".into()),
        ],
    );
    ok(
        "build-vocab",
        &[("corpus", p(&d.join("paragraphs.txt"))), ("output", p(&d.join("vocab.txt")))],
    );
    dir
}

fn tsv_value(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(key)?.strip_prefix('\t'))
        .unwrap_or_else(|| panic!("no {key} in {text}"))
        .parse()
        .unwrap()
}

#[test]
fn sample_pipeline_runs_end_to_end() {
    let dir = prepared();
    let d = dir.path();
    let mut train = small_model(d, "para.lslm");
    train.push(("train.epochs", "10".into()));
    train.push(("model.arch", "lstma".into()));
    train.push(("report", p(&d.join("report.tsv"))));
    ok("train", &train);
    let report = std::fs::read_to_string(d.join("report.tsv")).unwrap();
    let ppl: Vec<f64> = report
        .lines()
        .skip(1)
        .map(|l| l.rsplit('\t').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(ppl.len(), 11);
    assert!(ppl[10] < ppl[0], "{report}");

    ok(
        "train-ngram",
        &[
            ("corpus", p(&d.join("sentences.txt"))),
            ("vocab", p(&d.join("vocab.txt"))),
            ("output", p(&d.join("kn4.lslm"))),
        ],
    );
    let grid = ok(
        "eval-ppl",
        &[
            ("vocab", p(&d.join("vocab.txt"))),
            (
                "models",
                format!(
                    "[{{name='para',path='{}'}},{{name='kn4',path='{}'}}]",
                    p(&d.join("para.lslm")),
                    p(&d.join("kn4.lslm"))
                ),
            ),
            (
                "corpora",
                format!("[{{name='dev',path='{}',level='paragraph'}}]", p(&d.join("paragraphs.heldout.txt"))),
            ),
            ("spans", "[5,20]".into()),
        ],
    );
    for row in ["para", "kn4", "para@span5", "para@span20"] {
        assert!(grid.lines().any(|l| l.starts_with(&format!("{row}\t"))), "{grid}");
    }

    ok(
        "make-fixtures",
        &[
            ("paragraphs", p(&d.join("paragraphs.heldout.txt"))),
            ("confusions", p(&sample("sample_confusions.txt"))),
            ("vocab", p(&d.join("vocab.txt"))),
            ("ngram", p(&d.join("kn4.lslm"))),
            ("output", p(&d.join("sessions.jsonl"))),
        ],
    );
    let summary = ok(
        "rerank",
        &[
            ("sessions", p(&d.join("sessions.jsonl"))),
            ("model", p(&d.join("para.lslm"))),
            ("vocab", p(&d.join("vocab.txt"))),
            ("output", p(&d.join("out.tsv"))),
        ],
    );
    let reranked = tsv_value(&summary, "reranked_wer");
    let scored = ok(
        "wer",
        &[
            ("reference", p(&d.join("sessions.jsonl"))),
            ("hypothesis", p(&d.join("out.tsv"))),
        ],
    );
    assert!((tsv_value(&scored, "wer") - reranked).abs() < 0.006, "{summary}\n{scored}");
}

#[test]
fn training_twice_gives_identical_checkpoints() {
    let dir = prepared();
    let d = dir.path();
    for name in ["a.lslm", "b.lslm"] {
        let mut args = small_model(d, name);
        args.push(("train.epochs", "2".into()));
        args.push(("model.arch", "transformer".into()));
        ok("train", &args);
    }
    let a = std::fs::read(d.join("a.lslm")).unwrap();
    let b = std::fs::read(d.join("b.lslm")).unwrap();
    assert!(a == b, "checkpoints differ");
}

#[test]
fn stats_histogram_matches_hand_counts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let raw = d.join("raw.txt");
    // 3, 6 and 11 words.
    std::fs::write(
        &raw,
        "The cat sat.\nA dog ran far away today.\nBirds sing loudly at dawn on every single spring morning here.\n",
    )
    .unwrap();
    ok("build-corpus", &[("input", p(&raw)), ("out_dir", p(d))]);
    let hist = ok("stats", &[("corpus", p(&d.join("sentences.txt")))]);
    let rows: Vec<&str> = hist.lines().filter(|l| !l.starts_with('#') && !l.starts_with("bin")).collect();
    assert_eq!(rows, ["0\t2", "10\t1"], "{hist}");
}

#[test]
fn failures_map_to_exit_codes() {
    let out = longspan(&["stats", "--set", "corpus=/definitely/not/here.txt"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/definitely/not/here.txt"));

    let out = longspan(&["train", "--set", "no_such_key=1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_key"));

    let dir = prepared();
    let d = dir.path();
    let mut args = small_model(d, "m.lslm");
    args.push(("train.epochs", "1".into()));
    ok("train", &args);
    ok(
        "build-vocab",
        &[
            ("corpus", p(&d.join("paragraphs.txt"))),
            ("max_size", "20".into()),
            ("output", p(&d.join("small.txt"))),
        ],
    );
    let out = longspan(&[
        "eval-ppl",
        "--set",
        &format!("vocab={}", p(&d.join("small.txt"))),
        "--set",
        &format!("models=[{{name='m',path='{}'}}]", p(&d.join("m.lslm"))),
        "--set",
        &format!("corpora=[{{name='dev',path='{}',level='paragraph'}}]", p(&d.join("paragraphs.heldout.txt"))),
    ]);
    assert_eq!(out.status.code(), Some(5), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn help_lists_config_keys() {
    let out = longspan(&["train", "--help"]);
    let text = String::from_utf8(out.stdout).unwrap();
    for key in ["model.arch", "train.epochs", "train.nce_noise_samples", "model.attention_span", "report"] {
        assert!(text.contains(key), "{key} missing from\n{text}");
    }
}

#[test]
fn dumped_config_reads_back() {
    let dir = tempfile::tempdir().unwrap();
    let dump = |args: &[&str]| {
        let out = longspan(args);
        assert!(out.status.success());
        String::from_utf8(out.stdout).unwrap()
    };
    let first = dump(&["rerank", "--set", "weights.w_nn=0.7", "--set", "mode=sentence", "--dump-config"]);
    let path = dir.path().join("rerank.toml");
    std::fs::write(&path, &first).unwrap();
    let second = dump(&["rerank", "--config", path.to_str().unwrap(), "--dump-config"]);
    assert_eq!(first, second);
    assert!(first.contains("mode = \"sentence\""));

    let t = dump(&["train", "--set", "model.arch=transformer", "--dump-config"]);
    assert!(t.contains("schedule = \"noam\""), "{t}");
}
