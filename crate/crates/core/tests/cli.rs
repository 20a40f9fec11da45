use std::fs;
use std::process::{Command, Output};

fn qkdlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qkdlab"))
        .args(args)
        .env_remove("QKDLAB_THREADS")
        .output()
        .expect("run qkdlab")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn threshold_both_methods() {
    let o = qkdlab(&["threshold", "--mu", "0.5", "--nu", "0.1", "--variant", "usd", "--method", "both"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains("numeric   11.1 dB"), "{out}");
    assert!(out.contains("analytic  10.0 dB"), "{out}");
}

#[test]
fn threshold_with_eve_efficiency() {
    let o = qkdlab(&["threshold", "--mu", "0.5", "--nu", "0.1", "--variant", "usd", "--eta-eve", "0.1"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("numeric   21.1 dB"));
}

#[test]
fn threshold_rejects_equal_intensities() {
    let o = qkdlab(&["threshold", "--mu", "0.1", "--nu", "0.1"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("nu must be < mu"));
    assert_eq!(err.lines().count(), 1);
}

#[test]
fn threshold_variants_and_json() {
    let o = qkdlab(&["threshold", "--mu", "0.5", "--nu", "0.1", "--variant", "musd"]);
    assert_eq!(o.status.code(), Some(2));
    let o = qkdlab(&[
        "threshold", "--mu", "0.5", "--nu", "0.1", "--variant", "musd", "--tap", "0.3", "--method", "numeric", "--format",
        "json",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let db = v["results"][0]["kappa_db"].as_f64().unwrap();
    assert!(db > 7.0 && db < 11.155, "{db}");
    let o = qkdlab(&["threshold", "--mu", "0.5", "--nu", "0.1", "--variant", "pns3", "--precision", "3"]);
    assert!(stdout(&o).contains("7.010 dB"));
    let o = qkdlab(&["threshold", "--mu", "0.5", "--nu", "0.1", "--channel-db", "2", "--method", "analytic", "--precision", "2"]);
    assert!(stdout(&o).contains("12.02 dB"), "{}", stdout(&o));
}

#[test]
fn table1_default_and_json() {
    let o = qkdlab(&["table1"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    for v in ["11.1", "14.5", "18.3", "10.0", "12.5", "17.2"] {
        assert!(out.contains(v), "{v} missing in {out}");
    }
    assert!(!out.contains("MISMATCH"));

    let o = qkdlab(&["table1", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let displays: Vec<f64> = v["rows"]
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|r| [r["numerical_display"].as_f64().unwrap(), r["analytic_display"].as_f64().unwrap()])
        .collect();
    assert_eq!(displays, [11.1, 10.0, 14.5, 12.5, 18.3, 17.2]);

    let o = qkdlab(&["table1", "--format", "csv"]);
    assert_eq!(stdout(&o).lines().count(), 4);
}

#[test]
fn table1_self_test_fails() {
    let o = qkdlab(&["table1", "--self-test-mismatch"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn mc_commands() {
    let o = qkdlab(&["mc", "--n", "3", "--trials", "1000000", "--seed", "42"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("analytic 0.187500"));

    let o = qkdlab(&["mc", "--n", "2", "--trials", "1000"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("p_hat    0\n"));

    let o = qkdlab(&["mc", "--mean", "6.44", "--trials", "1000000", "--seed", "7", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!((v["analytic"].as_f64().unwrap() - 0.614_601_407_701_009_8).abs() < 1e-12);
    assert_eq!(v["pass"], true);

    let o = qkdlab(&["mc", "--n", "3", "--trials", "0"]);
    assert_eq!(o.status.code(), Some(2));
    let o = qkdlab(&["mc", "--n", "3", "--trials", "-5"]);
    assert_eq!(o.status.code(), Some(2));
    let o = qkdlab(&["mc", "--trials", "10"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn mc_tapped_photon_number() {
    // 3 photons through a 0.5 tap: 0.5^3 * 3/16.
    let o = qkdlab(&["mc", "--n", "3", "--tap", "0.5", "--trials", "400000", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("analytic 0.0234375"));
}

#[test]
fn sweep_fig3_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fig3.csv");
    let o = qkdlab(&["sweep", "--figure", "q1-vs-kappa", "--mu", "0.5", "--nu", "0.1", "-o", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).contains("threshold:"));
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(&path).unwrap();
    let headers = rdr.headers().unwrap().clone();
    assert_eq!(&headers[0], "kappa_db");
    assert_eq!(&headers[1], "kappa");
    let flag_idx = headers.iter().position(|h| h == "threshold_flag").unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 501);
    let flagged: Vec<f64> = rows
        .iter()
        .filter(|r| &r[flag_idx] == "1")
        .map(|r| r[0].parse().unwrap())
        .collect();
    assert_eq!(flagged.len(), 1);
    assert!((flagged[0] - 11.155).abs() < 0.1, "{flagged:?}");
}

#[test]
fn sweep_fig4_columns() {
    let o = qkdlab(&["sweep", "--figure", "gain-vs-mean", "--tap", "1,0.5,0.3,0.15", "-o", "-", "--no-meta"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    let header = out.lines().next().unwrap();
    assert_eq!(header, "mean_tilde,q_mu_t=1,q_mu_t=0.5,q_mu_t=0.3,q_mu_t=0.15");
}

#[test]
fn sweep_usage_and_io_errors() {
    let o = qkdlab(&["sweep", "--mu", "0.5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"));
    let o = qkdlab(&["sweep", "--figure", "q1-vs-kappa"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"));
    let o = qkdlab(&["sweep", "--figure", "gain-vs-mean", "-o", "/nonexistent-dir/x.csv"]);
    assert_eq!(o.status.code(), Some(3));
    let o = qkdlab(&["sweep", "--figure", "gain-vs-mean", "--step", "-1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_json_is_reproducible_without_meta() {
    let args = ["sweep", "--figure", "q1-vs-kappa", "--mu", "0.1", "--nu", "0.01", "--format", "json", "--no-meta"];
    let a = qkdlab(&args);
    let b = Command::new(env!("CARGO_BIN_EXE_qkdlab"))
        .args(args)
        .env("QKDLAB_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let v: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    assert!(v["meta"].get("timestamp").is_none());
    assert_eq!(v["rows"].as_array().unwrap().len(), 501);
}

#[test]
fn config_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    fs::write(&cfg, "# threshold run\nmu = 0.5\nnu = 0.01\nmethod = numeric\n").unwrap();
    let o = qkdlab(&["threshold", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("14.5 dB"));
    // Command-line flags win over the file.
    let o = qkdlab(&["threshold", "--config", cfg.to_str().unwrap(), "--nu", "0.1"]);
    assert!(stdout(&o).contains("11.1 dB"), "{}", stdout(&o));

    let sweep_cfg = dir.path().join("sweep.conf");
    fs::write(&sweep_cfg, "figure = gain-vs-mean\ntap = 1,0.5\nstop = 1\nstep = 0.5\nno-meta = true\n").unwrap();
    let o = qkdlab(&["sweep", "--config", sweep_cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 4);

    fs::write(&cfg, "mu = 0.5\nnu = 0.1\nbogus = 3\n").unwrap();
    let o = qkdlab(&["threshold", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("'bogus'"));

    let o = qkdlab(&["threshold", "--config", "/nonexistent/run.conf"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn thread_env_validation() {
    let o = Command::new(env!("CARGO_BIN_EXE_qkdlab"))
        .args(["table1"])
        .env("QKDLAB_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    let o = Command::new(env!("CARGO_BIN_EXE_qkdlab"))
        .args(["mc", "--n", "4", "--trials", "200000", "--seed", "9"])
        .env("QKDLAB_THREADS", "3")
        .output()
        .unwrap();
    let p = qkdlab(&["mc", "--n", "4", "--trials", "200000", "--seed", "9"]);
    assert_eq!(o.stdout, p.stdout);
}

#[test]
fn in_process_runner() {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = qkdlab::cli::run(["qkdlab", "--version"], &mut out, &mut err);
    assert_eq!(code, 0);
    assert!(String::from_utf8(out).unwrap().contains("0.1.0"));
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = qkdlab::cli::run(["qkdlab", "frobnicate"], &mut out, &mut err);
    assert_eq!(code, 2);
}
