use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn powsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_powsim")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn config(algorithm: &str, spend_rate: f64) -> String {
    format!(
        r#"{{
            "bootstrap": {{"n0": 200, "alpha": 0.05, "init_duration": 2000}},
            "protocol": {{"name": "{algorithm}"}},
            "adversary": {{"strategy": "uniform_optimal", "spend_rate": {spend_rate}}},
            "churn": {{"synth": {{"preset": "redhat", "rate": 0.1}}}},
            "sim": {{"duration_s": 600, "seed": 5}}
        }}"#
    )
}

#[test]
fn run_writes_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &config("ccom", 16.0));
    let out = dir.path().join("ledger.csv");
    let o = powsim(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("algorithm=ccom"));
    let csv = std::fs::read_to_string(&out).unwrap();
    assert!(csv.starts_with("# seed=5 algorithm=ccom"));

    // Same config, same bytes.
    let o = powsim(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(String::from_utf8(o.stdout).unwrap(), csv);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "bad.json", &config("gmcom", 1.0).replace("0.05", "0.5"));
    assert_eq!(code(&powsim(&["run", "--config", bad.to_str().unwrap()])), 1);
    let garbage = write_config(dir.path(), "garbage.json", "{");
    assert_eq!(code(&powsim(&["run", "--config", garbage.to_str().unwrap()])), 1);
    assert_eq!(code(&powsim(&["run", "--config", "/nonexistent/c.json"])), 3);
    assert_eq!(code(&powsim(&["validate", "--trace", "/nonexistent/trace.csv"])), 3);
    assert_eq!(code(&powsim(&["frobnicate"])), 1);

    // The baseline loses its honest majority against a large budget.
    let unsafe_cfg = write_config(dir.path(), "sc.json", &config("sybilcontrol", 4096.0));
    let o = powsim(&["run", "--config", unsafe_cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("invariant violated"));
}

#[test]
fn sweep_validate_bench() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &config("gmcom", 1.0));
    let o = powsim(&["sweep", "--config", cfg.to_str().unwrap(), "--exponents", "0-2", "--algorithms", "ccom,gmcom"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = String::from_utf8(o.stdout).unwrap();
    assert_eq!(csv.lines().filter(|l| l.starts_with("gmcom,")).count(), 3);

    let trace = dir.path().join("trace.csv");
    // Constant population of four: one replacement per second.
    let mut text = String::from("time_s,event,label\n");
    for i in 0..4 {
        text.push_str(&format!("0,join,n{i}\n"));
    }
    for t in 1..40 {
        text.push_str(&format!("{t},depart,n{}\n{t},join,n{}\n", t - 1, t + 3));
    }
    std::fs::write(&trace, text).unwrap();
    let o = powsim(&["validate", "--trace", trace.to_str().unwrap(), "--reference", "flatout"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("epoch,start_s"));

    let o = powsim(&["bench-puzzle", "--mu", "1024", "--cap-c", "1", "--difficulties", "1,2", "--samples", "3"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().filter(|l| !l.starts_with('#')).count(), 3);
}

#[test]
fn server_mode_matches_local() {
    let rt = tokio::runtime::Runtime::new().unwrap();
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    rt.spawn(powsim_service::serve(listener));

    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", &config("gmch1", 64.0));
    let local = powsim(&["run", "--config", cfg.to_str().unwrap()]);
    let remote = powsim(&["--server", &url, "run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&remote), 0, "{}", String::from_utf8_lossy(&remote.stderr));
    assert_eq!(local.stdout, remote.stdout);

    let bad = write_config(dir.path(), "bad.json", &config("gmcom", 1.0).replace("0.05", "0.5"));
    assert_eq!(code(&powsim(&["--server", &url, "run", "--config", bad.to_str().unwrap()])), 1);
    assert_eq!(code(&powsim(&["--server", "http://127.0.0.1:9", "run", "--config", cfg.to_str().unwrap()])), 3);
}
