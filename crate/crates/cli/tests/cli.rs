use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_sigpower");

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn sigpower(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn config(name: &str) -> String {
    configs().join(name).to_str().unwrap().to_owned()
}

fn write_config(dir: &TempDir, name: &str, body: &str) -> String {
    let path = dir.path().join(name);
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_owned()
}

/// Rows of a CSV as header-keyed lookups.
fn parse_csv(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, rows)
}

fn column(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"))
}

fn rel(x: f64, target: f64) -> f64 {
    ((x - target) / target).abs()
}

#[test]
fn run_writes_trace_and_exits_zero() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("trace.csv");
    let o = sigpower(&["run", "-c", &config("six_users_p100_damped.json"), "-o", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let stderr = String::from_utf8(o.stderr).unwrap();
    for key in ["status: converged", "iterations:", "final price:", "oracle gap:"] {
        assert!(stderr.contains(key), "{stderr}");
    }

    let text = fs::read_to_string(out).unwrap();
    let (header, rows) = parse_csv(&text);
    let expected: Vec<String> = ["n", "price", "max_bid_step"]
        .into_iter()
        .map(String::from)
        .chain((1..=6).map(|i| format!("w_{i}")))
        .chain((1..=6).map(|i| format!("P_{i}")))
        .collect();
    assert_eq!(header, expected);
    let row_40 = rows.iter().find(|r| r[0] == "40").unwrap();
    let price: f64 = row_40[1].parse().unwrap();
    assert!(rel(price, 0.9968) <= 0.02, "{price}");
}

#[test]
fn undamped_run_exits_two() {
    let o = sigpower(&["run", "-c", &config("six_users_p45_undamped.json")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("max_iterations_reached"));
    let (_, rows) = parse_csv(std::str::from_utf8(&o.stdout).unwrap());
    assert_eq!(rows.len(), 200);
}

#[test]
fn missing_total_power_exits_one_naming_field() {
    let dir = TempDir::new().unwrap();
    let path = write_config(&dir, "bad.json", r#"{"users":[{"a":4,"b":5}]}"#);
    let o = sigpower(&["run", "-c", &path]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("P_T"));
}

#[test]
fn invalid_fields_are_named() {
    let dir = TempDir::new().unwrap();
    for (body, field) in [
        (r#"{"users":[{"a":-4,"b":5}],"P_T":45}"#, "a"),
        (r#"{"users":[{"a":4,"b":5}],"P_T":45,"delta":0}"#, "delta"),
        (r#"{"users":[{"a":4,"b":5}],"P_T":45,"decay":{"kind":"exponential","l1":5,"l2":0}}"#, "l2"),
        (r#"{"users":[{"a":4,"b":5}],"P_T":45,"initial_bids":[1,2]}"#, "initial_bids"),
        (r#"{"users":[{"a":4,"b":5}],"P_T":45,"max_iter":3}"#, "max_iter"),
    ] {
        let path = write_config(&dir, "bad.json", body);
        let o = sigpower(&["run", "-c", &path]);
        assert_eq!(o.status.code(), Some(1), "{body}");
        let stderr = String::from_utf8_lossy(&o.stderr);
        assert!(stderr.contains(field), "{body}: {stderr}");
    }
}

#[test]
fn missing_config_file_exits_one() {
    let o = sigpower(&["run", "-c", "/nonexistent/scenario.json"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn sweep_reproduces_price_curve_rows() {
    let o = sigpower(&["sweep", "-c", &config("six_users_sweep.json"), "--range", "5:200:5"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = parse_csv(std::str::from_utf8(&o.stdout).unwrap());
    assert_eq!(&header[..3], ["P_T", "p", "sum_P"]);
    assert_eq!(header.len(), 3 + 3 * 6);
    assert_eq!(header.last().unwrap(), "oracle_P_6");
    assert_eq!(rows.len(), 40);
    let row = rows.iter().find(|r| r[0] == "100").unwrap();
    let p: f64 = row[column(&header, "p")].parse().unwrap();
    let p6: f64 = row[column(&header, "P_6")].parse().unwrap();
    assert!(rel(p, 0.9959) <= 0.02, "{p}");
    assert!(rel(p6, 24.518) <= 0.02, "{p6}");
}

#[test]
fn sweep_accepts_value_list() {
    let o = sigpower(&["sweep", "-c", &config("six_users_sweep.json"), "--values", "50,120"]);
    assert_eq!(o.status.code(), Some(0));
    let (header, rows) = parse_csv(std::str::from_utf8(&o.stdout).unwrap());
    assert_eq!(rows.len(), 2);
    let sum: f64 = rows[1][column(&header, "sum_P")].parse().unwrap();
    assert!(rel(sum, 119.84) <= 0.02);
}

#[test]
fn sweep_rejects_inverted_range() {
    let o = sigpower(&["sweep", "-c", &config("six_users_sweep.json"), "--range", "10:5:5"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("range"));
}

#[test]
fn csv_output_is_byte_identical_across_runs() {
    let args = ["sweep", "-c", &config("six_users_sweep.json"), "--range", "20:60:10"];
    let first = sigpower(&args).stdout;
    assert_eq!(first, sigpower(&args).stdout);
    let trace = ["run", "-c", &config("six_users_p45_damped.json")];
    assert_eq!(sigpower(&trace).stdout, sigpower(&trace).stdout);
}

#[test]
fn oracle_examples() {
    let dir = TempDir::new().unwrap();
    let single = write_config(&dir, "one.json", r#"{"users":[{"a":4,"b":5}],"P_T":45}"#);
    let o = sigpower(&["oracle", "-c", &single, "--json"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["powers"][0].as_f64().unwrap() - 45.0).abs() < 1e-6);

    let pair = write_config(&dir, "two.json", r#"{"users":[{"a":3,"b":15},{"a":3,"b":15}],"P_T":20}"#);
    let v: serde_json::Value =
        serde_json::from_slice(&sigpower(&["oracle", "-c", &pair, "--json"]).stdout).unwrap();
    for p in v["powers"].as_array().unwrap() {
        assert!((p.as_f64().unwrap() - 10.0).abs() < 1e-6);
    }

    let o = sigpower(&["oracle", "-c", &config("six_users_p100_damped.json"), "--json"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let expected = [5.276, 10.263, 15.233, 20.165, 24.546, 24.518];
    for (p, e) in v["powers"].as_array().unwrap().iter().zip(expected) {
        assert!(rel(p.as_f64().unwrap(), e) <= 0.01);
    }
    assert!(v["kkt_residual"].as_f64().unwrap() <= 1e-6);

    let text = String::from_utf8(sigpower(&["oracle", "-c", &single]).stdout).unwrap();
    assert!(text.starts_with("P_1 = 45"), "{text}");
}

#[test]
fn run_and_oracle_agree_within_gap_bound() {
    let cfg = config("six_users_p100_damped.json");
    let (header, rows) = parse_csv(std::str::from_utf8(&sigpower(&["run", "-c", &cfg]).stdout).unwrap());
    let last = rows.last().unwrap();
    let price: f64 = last[1].parse().unwrap();
    let v: serde_json::Value =
        serde_json::from_slice(&sigpower(&["oracle", "-c", &cfg, "--json"]).stdout).unwrap();
    for i in 1..=6 {
        let p: f64 = last[column(&header, &format!("P_{i}"))].parse().unwrap();
        let q = v["powers"][i - 1].as_f64().unwrap();
        assert!((p - q).abs() <= 10.0 * 1e-3 / price + 1e-6);
    }
}

/// Starts `serve` on a free port and returns it with the bound address.
fn serve(cfg: &str) -> (std::process::Child, String) {
    let mut child = Command::new(BIN)
        .args(["serve", "-c", cfg, "--port", "0", "--register-ms", "20000"])
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stderr.as_mut().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on ").unwrap().to_owned();
    (child, addr)
}

fn ue(cfg: &str, index: usize, addr: &str) -> std::process::Child {
    Command::new(BIN)
        .args(["ue", "-c", cfg, "--user-index", &index.to_string(), "--addr", addr])
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap()
}

fn final_price_of(stdout: &[u8]) -> f64 {
    let text = std::str::from_utf8(stdout).unwrap();
    let last = text.lines().last().unwrap();
    last.rsplit(' ').next().unwrap().parse().unwrap()
}

#[test]
fn serve_with_two_ue_processes_splits_budget() {
    let cfg = config("symmetric_pair.json");
    let (server, addr) = serve(&cfg);
    let ues: Vec<_> = (0..2).map(|i| ue(&cfg, i, &addr)).collect();
    for u in ues {
        let o = u.wait_with_output().unwrap();
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        let power: f64 = String::from_utf8(o.stdout).unwrap().split(' ').nth(3).unwrap().parse().unwrap();
        assert!((power - 10.0).abs() < 0.01, "{power}");
    }
    let o = server.wait_with_output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.starts_with("P_1 = "), "{stdout}");
}

#[test]
fn six_ue_processes_match_in_process_price() {
    let cfg = config("six_users_p45_damped.json");
    let (server, addr) = serve(&cfg);
    let ues: Vec<_> = (0..6).map(|i| ue(&cfg, i, &addr)).collect();
    let mut prices = Vec::new();
    for u in ues {
        let o = u.wait_with_output().unwrap();
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        prices.push(final_price_of(&o.stdout));
    }
    let o = server.wait_with_output().unwrap();
    assert_eq!(o.status.code(), Some(0));

    let local = sigpower(&["run", "-c", &cfg]);
    let stderr = String::from_utf8(local.stderr).unwrap();
    let price: f64 = stderr
        .lines()
        .find_map(|l| l.strip_prefix("final price: "))
        .unwrap()
        .parse()
        .unwrap();
    for p in prices {
        // Both sides print 12 significant digits.
        assert!((p - price).abs() <= 1e-12 * price.max(1.0) * 10.0, "{p} vs {price}");
    }
}

#[test]
fn ue_with_unreachable_address_exits_one() {
    let o = sigpower(&[
        "ue",
        "-c",
        &config("symmetric_pair.json"),
        "--user-index",
        "0",
        "--addr",
        "127.0.0.1:1",
        "--timeout-ms",
        "500",
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn ue_index_out_of_range_exits_one() {
    let o = sigpower(&["ue", "-c", &config("symmetric_pair.json"), "--user-index", "5"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("user-index"));
}
