mod common;

use std::path::Path;
use std::process::{Command, Output};

use learngraph::training::RunManifest;

fn learngraph(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_learngraph"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("LEARNGRAPH_OUT")
        .env("RUST_LOG", "warn")
        .env("RUST_BACKTRACE", "0")
        .env("RUST_LIB_BACKTRACE", "0")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn pipeline_emits_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["synth", "--students", "30", "--concepts", "10"][..],
        &["build"],
        &["train", "--epochs", "2"],
        &["embed"],
        &["project"],
    ] {
        let o = learngraph(args, dir.path());
        assert!(o.status.success(), "{args:?}: {}", stderr(&o));
    }
    for file in [
        "curriculum.json",
        "traces.csv",
        "labels.csv",
        "graphs.json",
        "aggregates.json",
        "model.json",
        "manifest.json",
        "embeddings.json",
        "projection.json",
    ] {
        assert!(dir.path().join(file).is_file(), "{file} missing");
    }
    let traces = std::fs::read_to_string(dir.path().join("traces.csv")).unwrap();
    assert!(!traces.lines().next().unwrap().contains("label"), "labels leaked into traces");
}

#[test]
fn train_flags_reach_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    common::fixture_run(dir.path(), 12);
    let o = learngraph(
        &["train", "--epochs", "3", "--batch-size", "4", "--lr", "0.005", "--layers", "2", "--hidden-dim", "5", "--seed", "9"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let m: RunManifest = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!((m.epochs, m.batch_size, m.learning_rate, m.num_layers, m.hidden_dim, m.seed), (3, 4, 0.005, 2, 5, 9));
    assert_eq!(m.embed_dim, 10);
    assert_eq!(m.epoch_losses.len(), 3);
}

#[test]
fn neighbors_k_out_of_range_fails() {
    let dir = tempfile::tempdir().unwrap();
    let store = r#"{"topic":"t","dim":2,"students":[{"student":"a","embedding":[1.0,0.0]},{"student":"b","embedding":[0.0,1.0]}]}"#;
    std::fs::write(dir.path().join("embeddings.json"), store).unwrap();
    let o = learngraph(&["neighbors", "--student", "a", "--k", "5"], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("out of range"), "{}", stderr(&o));
    let o = learngraph(&["neighbors", "--student", "a", "--k", "1"], dir.path());
    assert!(o.status.success());
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["neighbors"][0]["student"], "b");
    assert_eq!(report["neighbors"][0]["distance"], 1.0);
}

#[test]
fn missing_inputs_name_the_producing_command() {
    let dir = tempfile::tempdir().unwrap();
    let o = learngraph(&["train"], dir.path());
    assert!(!o.status.success());
    let msg = stderr(&o);
    assert!(msg.contains("graphs.json") && msg.contains("learngraph build"), "{msg}");
}

#[test]
fn ingest_converts_timestamps_to_weeks() {
    let dir = tempfile::tempdir().unwrap();
    let src = tempfile::tempdir().unwrap();
    let curriculum = src.path().join("c.json");
    let traces = src.path().join("t.csv");
    std::fs::write(
        &curriculum,
        r#"{"topic":"algebra","concepts":[{"id":"a"},{"id":"b"}],"edges":[["a","b"]]}"#,
    )
    .unwrap();
    std::fs::write(
        &traces,
        "student_id,topic_id,concept_id,question_id,score,timestamp\ns1,algebra,a,q1,1,2024-09-02T10:00:00Z\ns1,algebra,b,q2,0.5,2024-09-09 09:00:00\n",
    )
    .unwrap();
    let args = |extra: &[&str]| {
        let mut v = vec!["ingest", "--curriculum", curriculum.to_str().unwrap(), "--traces", traces.to_str().unwrap()];
        v.extend_from_slice(extra);
        v.into_iter().map(str::to_owned).collect::<Vec<_>>()
    };
    let run = |a: Vec<String>| learngraph(&a.iter().map(String::as_str).collect::<Vec<_>>(), dir.path());

    let o = run(args(&[]));
    assert!(!o.status.success(), "timestamps without an academic start must fail");
    assert!(stderr(&o).contains("academic start"), "{}", stderr(&o));

    let o = run(args(&["--academic-start", "2024-09-02"]));
    assert!(o.status.success(), "{}", stderr(&o));
    let written = std::fs::read_to_string(dir.path().join("traces.csv")).unwrap();
    let weeks: Vec<&str> = written.lines().skip(1).map(|l| l.rsplit(',').next().unwrap()).collect();
    assert_eq!(weeks, ["1", "2"]);
}

#[test]
fn commands_are_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let run = common::fixture_run(dir.path(), 12);
    let before: Vec<Vec<u8>> = [run.graphs(), run.embeddings(), run.projection()]
        .iter()
        .map(|p| std::fs::read(p).unwrap())
        .collect();
    for args in [&["build"][..], &["embed"], &["project"]] {
        assert!(learngraph(args, dir.path()).status.success());
    }
    let after: Vec<Vec<u8>> = [run.graphs(), run.embeddings(), run.projection()]
        .iter()
        .map(|p| std::fs::read(p).unwrap())
        .collect();
    assert_eq!(before, after);
}
