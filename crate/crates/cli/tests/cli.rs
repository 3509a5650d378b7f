use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use crband_core::io::write_dataset;
use crband_core::rng::StreamKey;
use crband_core::simulation::{gen_dataset, CensoringLevel, SimConfig};
use serde_json::Value;
use tempfile::TempDir;

fn crband(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crband"))
        .args(args)
        .env("CRBAND_THREADS", "1")
        .output()
        .expect("spawn crband")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn sim_csv(dir: &Path, name: &str, n: usize, rates: (f64, f64), seed: u64) -> PathBuf {
    let cfg = SimConfig::study(n, CensoringLevel::Light, rates, seed);
    let d = gen_dataset(&cfg, 30.0, &mut StreamKey::new(seed).tag("cli-test").stream()).unwrap();
    let path = dir.join(name);
    write_dataset(fs::File::create(&path).unwrap(), &d).unwrap();
    path
}

/// Writes `id,time,status,cens_time,z1` rows.
fn hand_csv(dir: &Path, name: &str, rows: &[(f64, u32, Option<f64>, f64)]) -> PathBuf {
    let mut text = String::from("id,time,status,cens_time,z1\n");
    for (k, (t, s, c, z)) in rows.iter().enumerate() {
        let c = c.map(|c| c.to_string()).unwrap_or_default();
        writeln!(text, "r{k},{t},{s},{c},{z}").unwrap();
    }
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn column(csv: &Path, name: &str) -> Vec<f64> {
    let text = fs::read_to_string(csv).unwrap();
    let mut lines = text.lines();
    let idx = lines.next().unwrap().split(',').position(|h| h == name).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().parse().unwrap()).collect()
}

#[test]
fn fit_writes_fit_and_manifest() {
    let dir = TempDir::new().unwrap();
    let data = sim_csv(dir.path(), "d.csv", 120, (0.08, 0.008), 1);
    let out = dir.path().join("fit.json");
    let o = crband(&["fit", "--data", p(&data), "--method", "cc", "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(&out)["beta_hat"].as_array().unwrap().len(), 3);
    let m = json(&dir.path().join("fit.manifest.json"));
    assert_eq!(m["command"], "fit");
    assert_eq!(m["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn missing_censoring_time_names_the_row() {
    let dir = TempDir::new().unwrap();
    let data = hand_csv(
        dir.path(),
        "d.csv",
        &[(1.0, 1, Some(5.0), 0.0), (2.0, 0, Some(2.0), 1.0), (3.0, 2, None, 1.0), (4.0, 1, Some(6.0), 0.0)],
    );
    let o = crband(&["fit", "--data", p(&data), "--method", "cc", "--out", p(&dir.path().join("f.json"))]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("row 3") && err.contains("no censoring time"), "{err}");
}

#[test]
fn malformed_input_exits_1() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("bad.csv");
    fs::write(&data, "id,time,status,cens_time,z1\na,1.0,1,2.0,x\n").unwrap();
    let o = crband(&["fit", "--data", p(&data), "--method", "ipcw", "--out", p(&dir.path().join("f.json"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("row 1"));
}

#[test]
fn separated_data_exit_2_with_diagnostics() {
    let dir = TempDir::new().unwrap();
    // every cause-1 event has z = 1 and precedes every z = 0 record
    let rows: Vec<_> = (0..6)
        .map(|k| (1.0 + k as f64, 1, Some(20.0), 1.0))
        .chain((0..6).map(|k| (10.0 + k as f64, 0, Some(10.0 + k as f64), 0.0)))
        .collect();
    let data = hand_csv(dir.path(), "sep.csv", &rows);
    let out = dir.path().join("f.json");
    let o = crband(&["fit", "--data", p(&data), "--method", "cc", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let diag = json(&out);
    assert_eq!(diag["converged"], false);
    assert!(diag["diagnostics"]["beta_path"].as_array().unwrap().len() > 1);
}

#[test]
fn bootstrap_failures_exit_3() {
    let dir = TempDir::new().unwrap();
    // two z = 1 records: an early cause-1 event and a late censoring; resamples
    // holding the event without the censored record are separated
    let mut rows = vec![(0.5, 1, Some(9.0), 1.0), (8.5, 0, Some(8.5), 1.0)];
    for k in 0..24 {
        let t = 1.0 + 0.3 * k as f64;
        rows.push(match k % 3 {
            0 => (t, 1, Some(9.0), 0.0),
            1 => (t, 2, Some(9.0), 0.0),
            _ => (t, 0, Some(t), 0.0),
        });
    }
    let data = hand_csv(dir.path(), "rare.csv", &rows);
    let out = dir.path().join("b.csv");
    let o = crband(&[
        "band", "--data", p(&data), "--method", "bipcw", "--z", "0", "--boot", "60", "--seed", "3", "--out", p(&out),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn ipcw_equals_cc_without_competing_events() {
    let dir = TempDir::new().unwrap();
    let data = sim_csv(dir.path(), "d.csv", 150, (0.1, 0.0), 4);
    let (cc, ipcw) = (dir.path().join("cc.json"), dir.path().join("ipcw.json"));
    assert!(crband(&["fit", "--data", p(&data), "--method", "cc", "--out", p(&cc)]).status.success());
    assert!(crband(&["fit", "--data", p(&data), "--method", "ipcw", "--out", p(&ipcw)]).status.success());
    let (a, b) = (json(&cc)["beta_hat"].clone(), json(&ipcw)["beta_hat"].clone());
    for (x, y) in a.as_array().unwrap().iter().zip(b.as_array().unwrap()) {
        assert!((x.as_f64().unwrap() - y.as_f64().unwrap()).abs() < 1e-8, "{a} vs {b}");
    }
}

#[test]
fn wider_alpha_gives_nested_band() {
    let dir = TempDir::new().unwrap();
    let data = sim_csv(dir.path(), "d.csv", 100, (0.08, 0.008), 5);
    let band = |alpha: &str, name: &str| {
        let out = dir.path().join(name);
        let o = crband(&[
            "band", "--data", p(&data), "--method", "wbmi", "--z", "0,0,1", "--alpha", alpha, "--boot", "100", "--m",
            "20", "--i", "5", "--seed", "9", "--out", p(&out),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let (narrow, wide) = (band("0.10", "b10.csv"), band("0.05", "b05.csv"));
    assert_eq!(column(&narrow, "t"), column(&wide, "t"));
    for (n, w) in column(&narrow, "upper").iter().zip(column(&wide, "upper")) {
        assert!(*n <= w);
    }
    for (n, w) in column(&narrow, "lower").iter().zip(column(&wide, "lower")) {
        assert!(*n >= w);
    }
    let side = json(&dir.path().join("b05.json"));
    assert_eq!(side["M"], 20);
    assert!(side["q"].as_f64().unwrap() > json(&dir.path().join("b10.json"))["q"].as_f64().unwrap());
}

#[test]
fn impute_writes_long_file_and_directory() {
    let dir = TempDir::new().unwrap();
    let data = sim_csv(dir.path(), "d.csv", 60, (0.08, 0.008), 6);
    let long = dir.path().join("aug.csv");
    let o = crband(&["impute", "--data", p(&data), "--m", "3", "--seed", "2", "--out", p(&long)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ms = column(&long, "m");
    assert_eq!(ms.len(), 180);
    assert_eq!((ms[0], ms[179]), (1.0, 3.0));

    let split = dir.path().join("split");
    let o = crband(&[
        "impute", "--data", p(&data), "--m", "3", "--seed", "2", "--g-model", "weibull", "--anchor", "10,20",
        "--out-dir", p(&split),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(split.join("augmented_3.csv").exists());

    let o = crband(&["impute", "--data", p(&data), "--seed", "2", "--g-model", "uniform", "--out", p(&long)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn replay_reproduces_outputs() {
    let dir = TempDir::new().unwrap();
    let data = sim_csv(dir.path(), "d.csv", 80, (0.08, 0.008), 7);
    let out = dir.path().join("band.csv");
    let o = crband(&["band", "--data", p(&data), "--method", "cc", "--z", "0,0,0", "--boot", "50", "--seed", "1",
                     "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let first = fs::read(&out).unwrap();
    fs::remove_file(&out).unwrap();
    let manifest = dir.path().join("band.manifest.json");
    assert!(crband(&["replay", p(&manifest)]).status.success());
    assert_eq!(fs::read(&out).unwrap(), first);

    fs::write(&data, "id,time,status,cens_time,z1\n").unwrap();
    assert_eq!(crband(&["replay", p(&manifest)]).status.code(), Some(1));
}

#[test]
fn simulate_writes_coverage_table() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("cov.csv");
    let o = crband(&[
        "coverage", "--setting", "60,light,0.08,0.008", "--sims", "2", "--boot", "20", "--m", "4", "--i", "2",
        "--seed", "11", "--out", p(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.lines().next().unwrap().contains("cp_percent"));
    assert_eq!(crband(&["simulate", "--setting", "60,heavy,0.1,0.1", "--seed", "1"]).status.code(), Some(1));
}

#[test]
fn output_independent_of_thread_count() {
    let dir = TempDir::new().unwrap();
    let data = sim_csv(dir.path(), "d.csv", 80, (0.08, 0.008), 8);
    let run = |threads: &str, name: &str| {
        let out = dir.path().join(name);
        let o = crband(&[
            "--threads", threads, "band", "--data", p(&data), "--method", "wbmi", "--z", "0,0,1", "--boot", "40",
            "--m", "12", "--i", "4", "--seed", "3", "--out", p(&out),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        fs::read(out).unwrap()
    };
    assert_eq!(run("1", "one.csv"), run("3", "three.csv"));
}
