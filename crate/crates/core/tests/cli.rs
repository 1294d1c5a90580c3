use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"{
  "data": { "kind": "synthetic", "classes": 3, "samples": 300, "input_dim": 4 },
  "federation": { "num_clients": 3, "dirichlet_alpha": 1.0 },
  "local": { "learning_rate": 0.05 },
  "rounds": 3,
  "decompose_every": 1
}"#;

fn fedld(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedld")).args(args).output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn run_then_inspect() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let out_dir = tmp.path().join("out");
    let out = fedld(&[
        "run", "--config", &cfg, "--seed", "3", "--output-dir", out_dir.to_str().unwrap(),
        "--mode", "principal", "--revision", "literal", "--lambda", "0.03", "--decompose-every", "2",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["metrics.jsonl", "metrics.csv", "timings.csv", "model.bin", "model.json", "config.json"] {
        assert!(out_dir.join(f).exists(), "missing {f}");
    }
    let saved = std::fs::read_to_string(out_dir.join("config.json")).unwrap();
    assert!(saved.contains("\"literal\"") && saved.contains("\"principal\""));

    let out = fedld(&["inspect", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("rounds"));
}

#[test]
fn partition_writes_shards() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let out_dir = tmp.path().join("parts");
    let out = fedld(&["partition", "--config", &cfg, "--output-dir", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    for f in ["client_0.csv", "client_2.csv", "test.csv", "partition.json"] {
        assert!(out_dir.join(f).exists(), "missing {f}");
    }
}

#[test]
fn ablate_prints_all_cells() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let out = fedld(&["ablate", "--config", &cfg, "--seeds", "1"]);
    assert_eq!(code(&out), 0);
    let table = String::from_utf8_lossy(&out.stdout);
    for cell in ["fedavg", "principal", "margin", "fedld"] {
        assert!(table.contains(cell), "{table}");
    }
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = write_config(tmp.path(), r#"{ "rounds": 0 }"#);
    assert_eq!(code(&fedld(&["run", "--config", &bad])), 2);
    let garbled = write_config(tmp.path(), "{ not json");
    assert_eq!(code(&fedld(&["run", "--config", &garbled])), 2);
    let cfg = write_config(tmp.path(), TINY);
    assert_eq!(code(&fedld(&["run", "--config", &cfg, "--lambda", "-1"])), 2);
    assert_eq!(code(&fedld(&["run", "--mode", "bogus"])), 2);
}

#[test]
fn divergence_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &TINY.replace("0.05", "1e200"));
    let out = fedld(&["run", "--config", &cfg]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn io_errors_exit_4() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&fedld(&["inspect", tmp.path().join("absent.jsonl").to_str().unwrap()])), 4);
    let cfg = write_config(tmp.path(), TINY);
    let blocker = tmp.path().join("file");
    std::fs::write(&blocker, "").unwrap();
    let out = fedld(&["run", "--config", &cfg, "--output-dir", blocker.join("sub").to_str().unwrap()]);
    assert_eq!(code(&out), 4);
    let csv_cfg = TINY.replace(
        r#""kind": "synthetic", "classes": 3, "samples": 300, "input_dim": 4"#,
        r#""kind": "csv", "path": "/nonexistent/data.csv", "label_column": "label""#,
    );
    assert_eq!(code(&fedld(&["run", "--config", &write_config(tmp.path(), &csv_cfg)])), 4);
}
