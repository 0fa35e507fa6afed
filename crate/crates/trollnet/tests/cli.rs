use std::path::Path;
use std::process::{Command, Output};

fn trollnet(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trollnet")).args(args).current_dir(dir).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

const GRID: &str = r#"
seed = 2
out = "out"
[data]
path = "m.tsv"
max_len = 12
[glove]
dim = 6
epochs = 20
[bilm]
dim = 6
hidden = 6
epochs = 2
[precomputed]
path = "m.ctx"
[model]
cnn_channels = 3
gru_hidden = 5
d_model = 6
d_ff = 8
max_len = 12
[train]
max_epochs = 3
patience = 2
[grid]
embeddings = ["glove-static", "bilm-contextual", "precomputed-contextual"]
encoders = ["cnn", "gru", "transformer"]
"#;

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let o = trollnet(&["synth", "--kind", "marker", "--n", "160", "--out", "m.tsv", "--ctx", "m.ctx", "--ctx-dim", "6"], dir.path());
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    std::fs::write(dir.path().join("grid.toml"), GRID).unwrap();
    dir
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&trollnet(&["--help"], dir.path())), 0);
    assert_eq!(code(&trollnet(&["matrix", "--bogus"], dir.path())), 1);
    assert_eq!(code(&trollnet(&[], dir.path())), 1);
    let o = trollnet(&["matrix", "--config", "missing.toml"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(text(&o.stderr).contains("missing.toml"));
}

#[test]
fn invalid_config_is_a_validation_error() {
    let dir = workspace();
    std::fs::write(dir.path().join("bad.toml"), GRID.replace("patience = 2", "patience = 9")).unwrap();
    let o = trollnet(&["train", "--config", "bad.toml"], dir.path());
    assert_eq!(code(&o), 1, "{}", text(&o.stderr));
    std::fs::write(dir.path().join("typo.toml"), format!("{GRID}\nlearnin_rate = 3\n")).unwrap();
    assert_eq!(code(&trollnet(&["train", "--config", "typo.toml"], dir.path())), 1);
}

#[test]
fn grad_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = trollnet(&["grad-check"], dir.path());
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    let out = text(&o.stdout);
    assert_eq!(out.lines().filter(|l| l.contains("PASS")).count(), 9, "{out}");
    assert!(!out.contains("FAIL"));
}

#[test]
fn matrix_writes_tables_and_evaluate_reads_checkpoints() {
    let dir = workspace();
    let o = trollnet(&["matrix", "--config", "grid.toml"], dir.path());
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    let md = std::fs::read_to_string(dir.path().join("out/table.md")).unwrap();
    assert_eq!(md, text(&o.stdout));
    assert_eq!(md.lines().count(), 11);
    let csv = std::fs::read_to_string(dir.path().join("out/table.csv")).unwrap();
    assert!(csv.starts_with("embedding,encoder,accuracy,precision,recall,f1,auc,marker,status"));

    let o = trollnet(&["evaluate", "--checkpoint", "out/checkpoints/glove-static__gru.tgck", "--data", "m.tsv"], dir.path());
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&text(&o.stdout)).unwrap();
    assert!(report["auc"].as_f64().unwrap() >= 0.0);

    let o = trollnet(
        &["evaluate", "--checkpoint", "out/checkpoints/precomputed-contextual__cnn.tgck", "--data", "m.tsv"],
        dir.path(),
    );
    assert_eq!(code(&o), 1);

    let o = trollnet(
        &["evaluate", "--checkpoint", "out/checkpoints/precomputed-contextual__cnn.tgck", "--data", "m.tsv", "--ctx", "m.ctx"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));

    std::fs::write(dir.path().join("wide.toml"), GRID.replace("gru_hidden = 5", "gru_hidden = 8")).unwrap();
    let o = trollnet(
        &["evaluate", "--checkpoint", "out/checkpoints/glove-static__gru.tgck", "--data", "m.tsv", "--config", "wide.toml"],
        dir.path(),
    );
    assert_eq!(code(&o), 1);
    assert!(text(&o.stderr).contains("shape mismatch"), "{}", text(&o.stderr));
}

#[test]
fn divergent_training_exits_two() {
    let dir = workspace();
    std::fs::write(dir.path().join("hot.toml"), GRID.replace("[train]", "[train]\nlearning_rate = 1e308")).unwrap();
    let o = trollnet(&["train", "--config", "hot.toml"], dir.path());
    assert_eq!(code(&o), 2, "{}", text(&o.stderr));
    assert!(text(&o.stderr).contains("diverged"));
}

#[test]
fn seed_flag_controls_the_run() {
    let dir = workspace();
    let run = |seed: &str, out: &str| {
        let o = trollnet(&["--seed", seed, "train", "--config", "grid.toml", "--out", out], dir.path());
        assert_eq!(code(&o), 0, "{}", text(&o.stderr));
        std::fs::read(dir.path().join(out).join("run_log.jsonl")).unwrap()
    };
    assert_eq!(run("3", "a"), run("3", "b"));
    assert_ne!(run("3", "a"), run("4", "c"));
}

#[test]
fn embedding_tools_round_trip() {
    let dir = workspace();
    let o = trollnet(&["glove-train", "--data", "m.tsv", "--out", "v.txt", "--dim", "4", "--epochs", "5"], dir.path());
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    let vectors = std::fs::read_to_string(dir.path().join("v.txt")).unwrap();
    assert!(vectors.lines().all(|l| l.split(' ').count() == 5));

    let o = trollnet(&["bilm-train", "--data", "m.tsv", "--out", "lm.tgck", "--dim", "4", "--hidden", "3", "--epochs", "1"], dir.path());
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    let o = trollnet(&["ctx-export", "--bilm", "lm.tgck", "--data", "m.tsv", "--out", "lm.ctx", "--max-len", "12"], dir.path());
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    let ctx = trollnet::ctx::load_precomputed(&dir.path().join("lm.ctx")).unwrap();
    assert_eq!((ctx.docs.len(), ctx.num_layers, ctx.dim), (160, 2, 6));

    std::fs::write(dir.path().join("c.jsonl"), "[[[1,2],[3,4]],[[0.5,0.5],[1,1]]]\n[[[1,0]],[[0,1]]]\n").unwrap();
    let o = trollnet(&["ctx-import", "--input", "c.jsonl", "--out", "c.ctx"], dir.path());
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    let ctx = trollnet::ctx::load_precomputed(&dir.path().join("c.ctx")).unwrap();
    assert_eq!((ctx.docs.len(), ctx.num_layers, ctx.dim), (2, 2, 2));

    std::fs::write(dir.path().join("ragged.jsonl"), "[[[1,2],[3]]]\n").unwrap();
    assert_eq!(code(&trollnet(&["ctx-import", "--input", "ragged.jsonl", "--out", "r.ctx"], dir.path())), 1);
}
