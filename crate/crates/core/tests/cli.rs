// SPDX-License-Identifier: Apache-2.0

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use prnuleak::dataset_io::load_bundle;

fn prnuleak(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prnuleak"))
        .args(args)
        .env_remove("PRNULEAK_THREADS")
        .output()
        .expect("spawn prnuleak")
}

fn ok(args: &[&str]) -> Output {
    let out = prnuleak(args);
    assert_eq!(out.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate(dir: &Path, preset: &str, size: &str) -> PathBuf {
    let out = dir.join(preset);
    ok(&["simulate", "--preset", preset, "--size", size, "--seed", "3", "--out", s(&out)]);
    out
}

/// Files of `dir` with their contents, sorted by name.
fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn simulate_writes_a_loadable_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let data = simulate(tmp.path(), "drk50", "32");
    assert!(data.join("manifest.json").is_file());
    assert!(data.join("img_0049.pgm").is_file());
    assert!(!data.join("img_0050.pgm").exists());
    let truth = load_bundle(data.join("groundtruth.prnu")).unwrap();
    assert_eq!(truth.fingerprint.shape(), (32, 32));
}

#[test]
fn extract_keep_r_controls_the_normalizer() {
    let tmp = tempfile::tempdir().unwrap();
    let data = simulate(tmp.path(), "brt50", "32");
    let manifest = data.join("manifest.json");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["extract", "--manifest", s(&manifest), "--out", s(&a), "--keep-R"]);
    ok(&["extract", "--manifest", s(&manifest), "--out", s(&b)]);
    let with = load_bundle(a.join("fingerprint.prnu")).unwrap();
    let without = load_bundle(b.join("fingerprint.prnu")).unwrap();
    assert!(with.normalizer.is_some());
    assert!(without.normalizer.is_none());
    assert_eq!(with.fingerprint, without.fingerprint);
    assert_eq!(with.image_count, 50);
    let config: serde_json::Value = serde_json::from_slice(&fs::read(a.join("config.json")).unwrap()).unwrap();
    assert_eq!(config["command"], "extract");
}

#[test]
fn exit_codes() {
    assert_eq!(prnuleak(&["--help"]).status.code(), Some(0));
    assert_eq!(prnuleak(&[]).status.code(), Some(1));
    assert_eq!(prnuleak(&["extract", "--bogus"]).status.code(), Some(1));
    assert_eq!(prnuleak(&["leakage", "--manifest", "x", "--out", "y"]).status.code(), Some(1));

    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.json");
    let out = tmp.path().join("out");
    let r = prnuleak(&["extract", "--manifest", s(&missing), "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&r.stderr).is_empty());
}

#[test]
fn missing_image_is_a_data_error_and_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let data = simulate(tmp.path(), "brt50", "32");
    fs::remove_file(data.join("img_0007.pgm")).unwrap();
    let out = tmp.path().join("out");
    let r = prnuleak(&["extract", "--manifest", s(&data.join("manifest.json")), "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("img_0007"));
    assert!(!out.join("fingerprint.prnu").exists());
}

#[test]
fn membership_and_roc_from_scores() {
    let tmp = tempfile::tempdir().unwrap();
    let data = simulate(tmp.path(), "brt50", "32");
    let ex = tmp.path().join("ex");
    ok(&["extract", "--manifest", s(&data.join("manifest.json")), "--out", s(&ex), "--keep-R"]);
    let mem = tmp.path().join("mem");
    ok(&[
        "membership",
        "--bundle",
        s(&ex.join("fingerprint.prnu")),
        "--manifest",
        s(&data.join("manifest.json")),
        "--out",
        s(&mem),
    ]);
    let scores = fs::read_to_string(mem.join("scores.csv")).unwrap();
    assert!(scores.starts_with("image_id,detector,statistic,is_member_truth"));
    assert_eq!(scores.lines().count(), 1 + 2 * 50);
    assert!(fs::read_to_string(mem.join("trace.svg")).unwrap().starts_with("<svg"));

    // Every image is a member, so the ROC has no negatives.
    let roc = tmp.path().join("roc");
    let r = prnuleak(&["roc", "--scores", s(&mem.join("scores.csv")), "--out", s(&roc)]);
    assert_eq!(r.status.code(), Some(2), "{}", String::from_utf8_lossy(&r.stderr));

    // Relabel the second half as holdout: the bundle still covers all 50, so
    // only the labels change.
    let mut m: serde_json::Value = serde_json::from_slice(&fs::read(data.join("manifest.json")).unwrap()).unwrap();
    for e in m["entries"].as_array_mut().unwrap().iter_mut().skip(25) {
        e["role"] = "holdout".into();
    }
    fs::write(data.join("mixed.json"), serde_json::to_vec(&m).unwrap()).unwrap();
    let mem2 = tmp.path().join("mem2");
    ok(&[
        "membership",
        "--bundle",
        s(&ex.join("fingerprint.prnu")),
        "--manifest",
        s(&data.join("mixed.json")),
        "--out",
        s(&mem2),
        "--detectors",
        "NCC",
    ]);
    ok(&["roc", "--scores", s(&mem2.join("scores.csv")), "--out", s(&roc)]);
    let auc = fs::read_to_string(roc.join("auc.csv")).unwrap();
    assert!(auc.starts_with("detector,L,auc,se,n_trials"));
    assert!(auc.lines().nth(1).unwrap().starts_with("NCC,"));
}

#[test]
fn mitigate_sets_the_whitened_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let data = simulate(tmp.path(), "brt50", "32");
    let ex = tmp.path().join("ex");
    ok(&["extract", "--manifest", s(&data.join("manifest.json")), "--out", s(&ex)]);
    let out = tmp.path().join("mit");
    ok(&["mitigate", "--bundle", s(&ex.join("fingerprint.prnu")), "--out", s(&out)]);
    let b = load_bundle(out.join("whitened.prnu")).unwrap();
    assert!(b.flags.names().contains(&"whitened"));
}

/// Runs one command under each thread count, always into the same output
/// directory (its path is echoed into config.json), and compares snapshots.
fn threads_agree(tmp: &Path, args: &[&str]) {
    let out = tmp.join("out");
    let mut first: Option<Vec<(String, Vec<u8>)>> = None;
    for threads in ["1", "2", "8"] {
        if out.exists() {
            fs::remove_dir_all(&out).unwrap();
        }
        let mut full = vec!["--threads", threads];
        full.extend_from_slice(args);
        full.extend_from_slice(&["--out", s(&out)]);
        ok(&full);
        let snap = snapshot(&out);
        assert!(!snap.is_empty());
        match &first {
            None => first = Some(snap),
            Some(f) => {
                assert_eq!(f.len(), snap.len());
                for ((na, a), (nb, b)) in f.iter().zip(&snap) {
                    assert_eq!(na, nb);
                    assert!(a == b, "{na} differs with --threads {threads}");
                }
            }
        }
    }
}

#[test]
fn thread_count_does_not_change_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = simulate(tmp.path(), "brt50", "48");
    let manifest = data.join("manifest.json");
    threads_agree(tmp.path(), &["extract", "--manifest", s(&manifest), "--keep-R"]);
    threads_agree(tmp.path(), &["leakage", "--manifest", s(&manifest), "--L", "10,26", "--seed", "4"]);
    threads_agree(
        tmp.path(),
        &["roc", "--manifest", s(&manifest), "--L", "10,20", "--trials", "30", "--members", "5", "--non-members", "10", "--seed", "2"],
    );
}
