mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use relsifter::pipeline::{run_pipeline, PipelineConfig};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_relsifter"));
    cmd.env("RUST_LOG", "warn");
    cmd
}

fn fixture_config(name: &str, out: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::load(&common::fixture("pipeline").join(name)).unwrap();
    cfg.out_dir = out.to_path_buf();
    cfg
}

fn read(path: impl AsRef<Path>) -> String {
    fs::read_to_string(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn kg_fixture_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture_config("config.toml", dir.path());
    let outcomes = run_pipeline(&cfg).unwrap();
    assert_eq!(outcomes.len(), 1);
    let report = outcomes[0].report.as_ref().unwrap();
    assert_eq!(report.n, 18);
    // only the unknown name falls back; the alias resolves
    assert_eq!(report.n_fallback, 1);
    assert!(report.accuracy > 34.0 / 64.0, "{}", report.accuracy);
    assert_eq!(read(dir.path().join("stage")), "done\n");
    let rel = dir.path().join("profession");
    for f in [
        "activities.tsv",
        "train.matrix.tsv",
        "train.matrix.tsv.meta",
        "test.matrix.tsv",
        "model.json",
        "predictions.tsv",
        "predictions.tsv.via",
        "report.txt",
        "report.kv",
    ] {
        assert!(rel.join(f).is_file(), "missing {f}");
    }
    let via = read(rel.join("predictions.tsv.via"));
    assert_eq!(via.lines().filter(|l| *l == "random-fallback").count(), 1);
    assert!(read(rel.join("activities.tsv")).contains("lyrics by"));
}

#[test]
fn text_fixture_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture_config("text.toml", dir.path());
    let outcomes = run_pipeline(&cfg).unwrap();
    assert!([10.0, 50.0].contains(&outcomes[0].selected));
    assert_eq!(outcomes[0].report.as_ref().unwrap().n, 18);
    assert_eq!(read(dir.path().join("stage")), "done\n");
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_pipeline(&fixture_config("config.toml", a.path())).unwrap();
    run_pipeline(&fixture_config("config.toml", b.path())).unwrap();
    for f in ["graph.tsv", "profession/model.json", "profession/predictions.tsv", "profession/report.kv"] {
        assert_eq!(read(a.path().join(f)), read(b.path().join(f)), "{f}");
    }
}

#[test]
fn failed_stage_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = fixture_config("config.toml", dir.path());
    cfg.relation[0].predicate = "no such predicate".into();
    let err = run_pipeline(&cfg).unwrap_err();
    assert_eq!(err.exit_code(), 1);
    let marker = read(dir.path().join("stage"));
    assert!(marker.starts_with("failed profession/activities:"), "{marker}");
}

#[test]
fn invalid_config_is_rejected_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let base = common::fixture("pipeline");
    let good = read(base.join("config.toml"));
    for bad in [
        good.replace("version = 1", "version = 2"),
        good.replace("k = 5", "k = 0"),
        good.replace("train = \"train.tsv\"", "train = \"absent.tsv\""),
        good.replace("mode = \"kg\"", "mode = \"text\""),
        format!("{good}\nunknown_key = 1\n"),
    ] {
        let mut cfg = match PipelineConfig::parse(&bad, &base) {
            Ok(c) => c,
            Err(_) => continue,
        };
        cfg.out_dir = dir.path().join("never");
        assert!(run_pipeline(&cfg).is_err());
        assert!(!cfg.out_dir.exists());
    }
}

#[test]
fn cli_stages_compose_to_the_run_output() {
    let work = tempfile::tempdir().unwrap();
    let w = work.path();
    let base = common::fixture("pipeline");
    let run_dir = w.join("run");
    run_ok(bin().args(["run", "--config", s(&base.join("config.toml")), "--out", s(&run_dir)]));

    let graph = w.join("graph.tsv");
    run_ok(bin().args(["ingest", "--out", s(&graph), s(&common::fixture("overlap_professions.tsv"))]));
    assert_eq!(read(&graph), read(run_dir.join("graph.tsv")));

    let acts = w.join("activities.tsv");
    run_ok(bin().args(["activities", "--graph", s(&graph), "--relation", "profession", "--predicate", "profession", "--out", s(&acts)]));
    assert_eq!(read(&acts), read(run_dir.join("profession/activities.tsv")));

    let mut matrices = Vec::new();
    for set in ["train", "test"] {
        let m = w.join(format!("{set}.matrix.tsv"));
        run_ok(bin().args([
            "featurize",
            "--graph",
            s(&graph),
            "--relation",
            "profession",
            "--predicate",
            "profession",
            "--triples",
            s(&base.join(format!("{set}.tsv"))),
            "--aliases",
            s(&base.join("aliases.tsv")),
            "--out",
            s(&m),
        ]));
        assert_eq!(read(&m), read(run_dir.join(format!("profession/{set}.matrix.tsv"))));
        matrices.push(m);
    }

    let model = w.join("model.json");
    run_ok(bin().args(["train", "--matrix", s(&matrices[0]), "--folds", "5", "--seed", "3", "--model-seed", "4", "--out", s(&model)]));
    assert_eq!(read(&model), read(run_dir.join("profession/model.json")));

    let preds = w.join("predictions.tsv");
    run_ok(bin().args(["score", "--model", s(&model), "--matrix", s(&matrices[1]), "--seed", "5", "--out", s(&preds)]));
    assert_eq!(read(&preds), read(run_dir.join("profession/predictions.tsv")));

    let eval_dir = w.join("eval");
    run_ok(bin().args(["evaluate", "--pred", s(&preds), "--gold", s(&base.join("test.tsv")), "--seed", "5", "--out", s(&eval_dir)]));
    assert_eq!(read(eval_dir.join("report.kv")), read(run_dir.join("profession/report.kv")));
    let stdout = run_ok(bin().args(["evaluate", "--pred", s(&preds), "--gold", s(&base.join("test.tsv")), "--seed", "5"]));
    assert_eq!(stdout, read(run_dir.join("profession/report.txt")));
}

#[test]
fn exit_codes_follow_the_error_kind() {
    let work = tempfile::tempdir().unwrap();
    let w = work.path();
    let missing: PathBuf = w.join("absent.tsv");

    let out = bin().args(["ingest", "--out", s(&w.join("g.tsv")), s(&missing)]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    let out = bin().args(["train", "--nonsense"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(bin().arg("--help").output().unwrap().status.code(), Some(0));

    // a model trained on one column space cannot score another
    let base = common::fixture("pipeline");
    let run_dir = w.join("run");
    run_ok(bin().args(["run", "--config", s(&base.join("text.toml")), "--out", s(&run_dir)]));
    let kg_dir = w.join("kg");
    run_ok(bin().args(["run", "--config", s(&base.join("config.toml")), "--out", s(&kg_dir)]));
    let out = bin()
        .args([
            "score",
            "--model",
            s(&run_dir.join("profession/model.json")),
            "--matrix",
            s(&kg_dir.join("profession/test.matrix.tsv")),
            "--out",
            s(&w.join("p.tsv")),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn run_seed_flag_overrides_config_seeds() {
    let work = tempfile::tempdir().unwrap();
    let config = common::planted_pipeline(work.path(), "forest", Some("10"), 60, 3);
    let a = work.path().join("a");
    let b = work.path().join("b");
    let c = work.path().join("c");
    run_ok(bin().args(["run", "--config", s(&config), "--out", s(&a), "--seed", "1"]));
    run_ok(bin().args(["run", "--config", s(&config), "--out", s(&b), "--seed", "1"]));
    run_ok(bin().args(["run", "--config", s(&config), "--out", s(&c), "--seed", "2"]));
    let model = |d: &Path| read(d.join("profession/model.json"));
    assert_eq!(model(&a), model(&b));
    assert_ne!(model(&a), model(&c));
}
