use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fedquit_cli::artifacts::read_json;
use fedquit_cli::commands::Evaluation;
use fedquit_cli::pipeline::RunReport;
use fedquit_core::data::generate_blobs;
use fedquit_core::evaluation::RecoverySummary;

const BASE: &str = r#"
[dataset]
kind = "blobs"
per_class = 50
test_per_class = 30

[partition]
kind = "dirichlet"
alpha = 0.5
num_clients = 3

[federation]
rounds = 8

[unlearning]
lr = 0.009

[experiment]
unlearn_client = 1
seeds = [4]
"#;

fn fedquit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedquit"))
        .args(args)
        .output()
        .expect("spawn fedquit")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("exp.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn same_file(a: &Path, b: &Path) -> bool {
    std::fs::read(a).unwrap() == std::fs::read(b).unwrap()
}

#[test]
fn standalone_commands_reproduce_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), BASE);
    let p = dir.path().join("pipe");
    let out = fedquit(&["pipeline", "--config", s(&cfg), "--out", s(&p)]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let run_dir = p.join("fedquit-logits-v0/seed-4/client-1");
    let train = dir.path().join("train");
    assert!(fedquit(&["train", "--config", s(&cfg), "--out", s(&train)])
        .status
        .success());
    assert!(same_file(
        &train.join("original.ckpt"),
        &p.join("seed-4/original.ckpt")
    ));

    let retrain = dir.path().join("retrain");
    assert!(fedquit(&[
        "train",
        "--config",
        s(&cfg),
        "--out",
        s(&retrain),
        "--exclude",
        "1"
    ])
    .status
    .success());
    let retrained = retrain.join("retrained-client-1.ckpt");
    assert!(same_file(
        &retrained,
        &p.join("seed-4/client-1/retrained.ckpt")
    ));

    let unlearn = dir.path().join("unlearn");
    let original = train.join("original.ckpt");
    assert!(fedquit(&[
        "unlearn",
        "--config",
        s(&cfg),
        "--out",
        s(&unlearn),
        "--model",
        s(&original)
    ])
    .status
    .success());
    let unlearned = unlearn.join("unlearned.ckpt");
    assert!(same_file(&unlearned, &run_dir.join("unlearned.ckpt")));

    let recovered = dir.path().join("recover");
    let out = fedquit(&[
        "recover",
        "--config",
        s(&cfg),
        "--out",
        s(&recovered),
        "--model",
        s(&unlearned),
        "--retrained",
        s(&retrained),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(same_file(
        &recovered.join("recovered.ckpt"),
        &run_dir.join("recovered.ckpt")
    ));
    let a: RecoverySummary = read_json(&recovered.join("recovery.json")).unwrap();
    let b: RecoverySummary = read_json(&run_dir.join("recovery.json")).unwrap();
    assert_eq!(a, b);

    let eval = dir.path().join("eval");
    let out = fedquit(&[
        "evaluate",
        "--config",
        s(&cfg),
        "--out",
        s(&eval),
        "--model",
        s(&unlearned),
        "--retrained",
        s(&retrained),
    ]);
    assert!(out.status.success());
    let e: Evaluation = read_json(&eval.join("evaluation.json")).unwrap();
    let report: RunReport = read_json(&p.join("report.json")).unwrap();
    assert_eq!(e.model, report.reports[0].unlearned);
    assert_eq!(e.deltas.unwrap(), report.reports[0].deltas);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), &BASE.replace("alpha = 0.5", "alpha = -1.0"));
    let out = fedquit(&["pipeline", "--config", s(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("alpha"));

    let unknown = write_config(
        dir.path(),
        &BASE.replace("rounds = 8", "rounds = 8\nroundz = 9"),
    );
    let out = fedquit(&["train", "--config", s(&unknown)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("roundz"));

    assert_eq!(fedquit(&["pipeline"]).status.code(), Some(1));
    assert_eq!(fedquit(&["--help"]).status.code(), Some(0));

    let cfg = write_config(dir.path(), BASE);
    let out_dir = dir.path().join("out");
    assert!(
        fedquit(&["train", "--config", s(&cfg), "--out", s(&out_dir)])
            .status
            .success()
    );
    let model = out_dir.join("original.ckpt");
    let out = fedquit(&[
        "recover",
        "--config",
        s(&cfg),
        "--out",
        s(&out_dir),
        "--model",
        s(&model),
        "--target",
        "1.01",
    ]);
    assert_eq!(out.status.code(), Some(3));
    // Artifacts are still written for a run that did not converge.
    let summary: RecoverySummary = read_json(&out_dir.join("recovery.json")).unwrap();
    assert_eq!(summary.rounds, None);
    assert_eq!(summary.max_rounds, 16);

    let out = fedquit(&[
        "evaluate",
        "--config",
        s(&cfg),
        "--model",
        s(&dir.path().join("missing.ckpt")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn csv_datasets_run_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let dump = |name: &str, seed: u64, per_class: usize| {
        let data = generate_blobs(3, per_class, 2, 0.6, seed).unwrap();
        let text: String = data
            .examples()
            .iter()
            .map(|e| format!("{},{},{}\n", e.label, e.features[0], e.features[1]))
            .collect();
        std::fs::write(dir.path().join(name), text).unwrap();
    };
    dump("train.csv", 1, 40);
    dump("test.csv", 2, 20);
    let text = BASE.replace(
        "kind = \"blobs\"\nper_class = 50\ntest_per_class = 30",
        "kind = \"csv\"\ntrain = \"train.csv\"\ntest = \"test.csv\"",
    );
    let cfg = write_config(dir.path(), &text);
    let out = dir.path().join("out");
    let res = fedquit(&["pipeline", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(
        res.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let report: RunReport = read_json(&out.join("report.json")).unwrap();
    assert_eq!(report.reports.len(), 1);
    assert!(report.reports[0].converged);
}

#[test]
fn resumed_run_recreates_missing_stages_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &BASE.replace("unlearn_client = 1", "unlearn_client = \"each\""),
    );
    let out = dir.path().join("out");
    assert!(
        fedquit(&["pipeline", "--config", s(&cfg), "--out", s(&out)])
            .status
            .success()
    );
    let report = std::fs::read(out.join("report.json")).unwrap();
    let ckpt = out.join("fedquit-logits-v0/seed-4/client-2/recovered.ckpt");
    let before = std::fs::read(&ckpt).unwrap();
    std::fs::remove_file(&ckpt).unwrap();

    assert!(
        fedquit(&["pipeline", "--config", s(&cfg), "--out", s(&out)])
            .status
            .success()
    );
    assert_eq!(std::fs::read(&ckpt).unwrap(), before);
    assert_eq!(std::fs::read(out.join("report.json")).unwrap(), report);

    // Another method reuses the trained models and writes its own directory.
    let natural = fedquit(&[
        "pipeline",
        "--config",
        s(&cfg),
        "--out",
        s(&out),
        "--method",
        "natural",
    ]);
    assert!(natural.status.code() == Some(0) || natural.status.code() == Some(3));
    let run: RunReport = read_json(&out.join("natural/report.json")).unwrap();
    assert_eq!(run.reports.len(), 3);
    assert!(run.reports.iter().all(|r| r.unlearning_bytes == 0));
}

#[test]
fn compare_builds_one_row_per_method() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), BASE);
    let out = dir.path().join("out");
    for method in ["fedquit-logits", "incompetent"] {
        let res = fedquit(&[
            "pipeline",
            "--config",
            s(&cfg),
            "--out",
            s(&out),
            "--method",
            method,
        ]);
        assert!(matches!(res.status.code(), Some(0) | Some(3)));
    }
    let table = dir.path().join("table");
    let res = fedquit(&[
        "compare",
        s(&out.join("fedquit-logits-v0/report.json")),
        s(&out.join("incompetent/report.json")),
        "--out",
        s(&table),
    ]);
    assert!(res.status.success());
    let csv = std::fs::read_to_string(table.join("comparison.csv")).unwrap();
    let methods: Vec<&str> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(methods, vec!["fedquit-logits-v0", "incompetent"]);

    let broken = dir.path().join("broken.json");
    std::fs::write(&broken, "{}").unwrap();
    let res = fedquit(&["compare", s(&broken), "--out", s(&table)]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("broken.json"));
}
