//! Helpers shared by the integration suites: running the installed binary,
//! snapshotting output trees, and parsing the CSV artifacts.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ringqcnn"))
}

/// Run the binary, asserting success; returns stdout.
pub fn run_ok(args: &[&str]) -> String {
    let out = bin().args(args).output().expect("spawn ringqcnn");
    assert!(
        out.status.success(),
        "ringqcnn {args:?} failed\nstdout:\n{}stderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("stdout is utf8")
}

/// Run the binary expecting failure; returns (exit code, stderr).
pub fn run_fail(args: &[&str]) -> (i32, String) {
    let out = bin().args(args).output().expect("spawn ringqcnn");
    assert!(
        !out.status.success(),
        "ringqcnn {args:?} unexpectedly succeeded\nstdout:\n{}",
        String::from_utf8_lossy(&out.stdout)
    );
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8(out.stderr).expect("stderr is utf8"),
    )
}

pub fn read_bytes(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}

pub fn read_text(path: &Path) -> String {
    String::from_utf8(read_bytes(path)).expect("artifact is utf8")
}

/// Every file under `dir`, keyed by relative path.
pub fn snapshot_tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).expect("readable dir") {
            let path = entry.expect("dir entry").path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).expect("under root").to_path_buf();
                out.insert(rel, read_bytes(&path));
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// Parsed rows of a training history file.
pub struct HistoryRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub lr: f64,
}

pub fn read_history(path: &Path) -> Vec<HistoryRow> {
    let text = read_text(path);
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("epoch,train_loss,train_acc,val_loss,val_acc,lr"),
        "history header"
    );
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            assert_eq!(f.len(), 6, "history row {line:?}");
            HistoryRow {
                epoch: f[0].parse().unwrap(),
                train_loss: f[1].parse().unwrap(),
                train_acc: f[2].parse().unwrap(),
                val_loss: f[3].parse().unwrap(),
                val_acc: f[4].parse().unwrap(),
                lr: f[5].parse().unwrap(),
            }
        })
        .collect()
}

/// Value of one `metric,class,value` row in a metrics file.
pub fn metric_value(path: &Path, metric: &str, class: &str) -> f64 {
    let text = read_text(path);
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() == 3 && f[0] == metric && f[1] == class {
            return f[2].parse().unwrap();
        }
    }
    panic!("metric {metric:?} class {class:?} not found in {}", path.display());
}
