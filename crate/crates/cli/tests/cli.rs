use std::path::Path;
use std::process::{Command, Output};

fn al(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_al"))
        .args(args)
        .env_remove("AL_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn summary(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn xor_reaches_full_train_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("xor");
    let o = al(&[
        "train",
        "--dataset",
        "xor",
        "--mode",
        "al-seq",
        "--epochs",
        "2000",
        "--seed",
        "1",
        "--quiet",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert_eq!(summary(&out)["final_train_accuracy"], 1.0);
    for f in [
        "config.json",
        "metrics.csv",
        "summary.json",
        "checkpoint.bin",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2001);
    assert!(csv.starts_with("epoch,mode,lr,train_loss,train_accuracy,test_accuracy,mse1,mse2\n"));
}

#[test]
fn missing_data_directory_exits_2() {
    let o = al(&[
        "train",
        "--dataset",
        "mnist",
        "--data-dir",
        "/no/such/dir",
        "--seed",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = al(&["train", "--dataset", "mnist-subset", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn other_configuration_errors_exit_2() {
    for args in [
        &["train", "--dataset", "xor"][..],
        &["train", "--dataset", "xor", "--seed", "1", "--plan", "nope"],
        &[
            "train",
            "--dataset",
            "xor",
            "--seed",
            "1",
            "--mode",
            "sideways",
        ],
        &["train", "--dataset", "xor", "--seed", "1", "--plan", "toy"],
        &[
            "train",
            "--dataset",
            "xor",
            "--seed",
            "1",
            "--batch-size",
            "0",
        ],
    ] {
        assert_eq!(al(args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn same_config_and_seed_give_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, mode: &str| {
        let out = dir.path().join(name);
        let o = al(&[
            "train",
            "--dataset",
            "blobs",
            "--mode",
            mode,
            "--epochs",
            "4",
            "--seed",
            "9",
            "--quiet",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(
            o.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&o.stderr)
        );
        std::fs::read(out.join("metrics.csv")).unwrap()
    };
    assert_eq!(run("a", "al-seq"), run("b", "al-seq"));
    assert_eq!(run("c", "bp"), run("d", "bp"));
    let pipe = run("e", "al-pipe");
    let text = String::from_utf8(pipe).unwrap();
    assert!(text.lines().nth(1).unwrap().contains(",al-pipe,"));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    let out = dir.path().join("run");
    std::fs::write(
        &cfg,
        format!(
            r#"{{"dataset": "blobs", "epochs": 9, "seed": 4, "out": {:?}}}"#,
            out.to_str().unwrap()
        ),
    )
    .unwrap();
    let o = al(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--epochs",
        "2",
        "--quiet",
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let written: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(written["epochs"], 2);
    assert_eq!(written["seed"], 4);
    assert_eq!(summary(&out)["epochs"], 2);

    std::fs::write(&cfg, r#"{"dataset": "blobs", "epoch": 9}"#).unwrap();
    let o = al(&["train", "--config", cfg.to_str().unwrap(), "--seed", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn zero_epochs_still_writes_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("z");
    let o = al(&[
        "train",
        "--dataset",
        "blobs",
        "--epochs",
        "0",
        "--seed",
        "2",
        "--quiet",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(out.join("checkpoint.bin").exists());
    assert_eq!(
        std::fs::read_to_string(out.join("metrics.csv"))
            .unwrap()
            .lines()
            .count(),
        2
    );
}

#[test]
fn diverging_run_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("boom");
    let o = al(&[
        "train",
        "--dataset",
        "blobs",
        "--epochs",
        "2",
        "--lr",
        "1e300",
        "--seed",
        "1",
        "--quiet",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn gradcheck_passes_on_the_default_plan() {
    let o = al(&["gradcheck", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let text = stdout(&o);
    // toy plan: 3 components, 4 sub-blocks each, each checked on its own flow
    assert_eq!(
        text.lines().filter(|l| l.starts_with("al-flow")).count(),
        12
    );
    for c in 1..=3 {
        for (block, flow) in [("f", 1), ("b", 1), ("g", 2), ("h", 2)] {
            let hit = text.lines().any(|l| {
                let cols: Vec<&str> = l.split_whitespace().collect();
                cols.first() == Some(&"al-flow")
                    && cols[4] == c.to_string()
                    && cols[5] == block
                    && cols[6] == flow.to_string()
            });
            assert!(hit, "no row for component {c} block {block} flow {flow}");
        }
    }
}

#[test]
fn gradcheck_with_a_planted_fault_exits_4() {
    let o = al(&["gradcheck", "--seed", "1", "--inject-fault"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stdout(&o).contains("FAIL"));
}

#[test]
fn bench_reports_table_one_units() {
    let o = al(&[
        "bench-pipeline",
        "--batches",
        "5",
        "--components",
        "3",
        "--cost-ms",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(
        stdout(&o).contains("logical units: sequential 15  pipelined 7"),
        "{}",
        stdout(&o)
    );
}

#[test]
fn bench_with_one_component_has_no_speedup() {
    let o = al(&[
        "bench-pipeline",
        "--batches",
        "20",
        "--components",
        "1",
        "--cost-ms",
        "5",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let line = text.lines().find(|l| l.starts_with("speedup:")).unwrap();
    let speedup: f64 = line["speedup:".len()..]
        .trim()
        .split('x')
        .next()
        .unwrap()
        .parse()
        .unwrap();
    assert!((0.8..=1.2).contains(&speedup), "{line}");
    assert!(line.contains("ideal 1.00x"));
}

#[test]
fn bench_speedup_on_the_reference_workload() {
    let o = al(&["bench-pipeline"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let line = text.lines().find(|l| l.starts_with("speedup:")).unwrap();
    let speedup: f64 = line["speedup:".len()..]
        .trim()
        .split('x')
        .next()
        .unwrap()
        .parse()
        .unwrap();
    assert!(speedup >= 2.5, "{line}");
}

#[test]
fn mnist_subset_run_when_data_is_present() {
    let data = std::env::var_os("AL_DATA_DIR")
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"));
    if !data.join("train-labels-idx1-ubyte").exists()
        && !data.join("train-labels-idx1-ubyte.gz").exists()
    {
        eprintln!("MNIST files not found; skipping");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m");
    let o = al(&[
        "train",
        "--dataset",
        "mnist-subset",
        "--data-dir",
        data.to_str().unwrap(),
        "--mode",
        "al-pipe",
        "--epochs",
        "1",
        "--seed",
        "1",
        "--quiet",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let s = summary(&out);
    assert_eq!(s["train_size"], 6000);
    assert_eq!(s["test_size"], 1000);
    assert_eq!(s["associated_loss_profile"].as_array().unwrap().len(), 2);
    assert!(s["throughput"]["time_units"].as_u64().is_some());
    assert!(s["geometry"]["raw_input"]["ratio"].as_f64().is_some());
}
