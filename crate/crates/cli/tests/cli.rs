use std::path::PathBuf;
use std::process::{Command, Output};

fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name).display().to_string()
}

fn bpqm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bpqm")).args(args).output().expect("spawn bpqm")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Value following `key` on a whitespace-separated line.
fn field(text: &str, key: &str) -> f64 {
    let mut it = text.split_whitespace();
    while let Some(w) = it.next() {
        if w == key {
            return it.next().unwrap().parse().unwrap();
        }
    }
    panic!("no '{key}' in {text}");
}

#[test]
fn succprob_matches_oracle_on_repetition5() {
    let o = bpqm(&["succprob", "--mpg", &fixture("repetition5.json"), "--p", "0.1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ps = field(&stdout(&o), "success_probability");
    assert_eq!(field(&stdout(&o), "ensemble_size"), 1.0);
    let c = bpqm(&["oracle-check", "--code", &fixture("repetition5_code.json"), "--construction", "trellis", "--bit", "1", "--p", "0.1"]);
    assert!(c.status.success(), "{}", stderr(&c));
    assert!((ps - field(&stdout(&c), "helstrom")).abs() < 1e-10);
}

#[test]
fn uniform_leaves_decode_perfectly() {
    let o = bpqm(&["succprob", "--mpg", &fixture("repetition5.json"), "--p", "0.5"]);
    assert!((field(&stdout(&o), "success_probability") - 1.0).abs() < 1e-12);
}

#[test]
fn malformed_mpg_is_a_validation_error() {
    let o = bpqm(&["succprob", "--mpg", &fixture("malformed.json"), "--p", "0.1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("width mismatch"), "{}", stderr(&o));
}

#[test]
fn oracle_check_constructions() {
    for (code, cons, bit, tol) in [
        ("hamming74.json", "trellis", "1", 1e-9),
        ("repetition3.json", "tree-tanner", "2", 1e-10),
        ("tree7.json", "tree-tanner", "4", 1e-9),
        ("cycle6.json", "unicyclic", "1", 1e-9),
    ] {
        let o = bpqm(&["oracle-check", "--code", &fixture(code), "--construction", cons, "--bit", bit, "--p", "0.1"]);
        assert!(o.status.success(), "{code}: {}", stderr(&o));
        assert!(field(&stdout(&o), "difference") < tol, "{code}");
    }
}

#[test]
fn oracle_check_rejects_large_codes() {
    let o = bpqm(&["oracle-check", "--code", &fixture("repetition20.json"), "--construction", "trellis", "--bit", "1", "--p", "0.1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("too large"));
}

#[test]
fn tanner_construction_rejects_cycles() {
    let o = bpqm(&["mpg-build", "--code", &fixture("cycle6.json"), "--construction", "tree-tanner", "--bit", "1"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn built_mpg_round_trips_through_succprob() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("h.json");
    let o = bpqm(&[
        "mpg-build", "--code", &fixture("hamming74.json"), "--construction", "trellis", "--bit", "4", "--merge", "4-5",
        "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["config"]["bit"], 4);
    let s = bpqm(&["succprob", "--mpg", out.to_str().unwrap(), "--p", "0.2"]);
    assert!(s.status.success(), "{}", stderr(&s));
    let c = bpqm(&["oracle-check", "--code", &fixture("hamming74.json"), "--construction", "trellis", "--bit", "4", "--p", "0.2"]);
    assert!(c.status.success(), "{}", stderr(&c));
    assert!((field(&stdout(&s), "success_probability") - field(&stdout(&c), "helstrom")).abs() < 1e-9);
}

#[test]
fn limits_at_rate_one_third() {
    let o = bpqm(&["limits", "--rate", "1/3"]);
    assert!(o.status.success());
    assert!((field(&stdout(&o), "shannon") - 0.17395).abs() < 1e-5);
    assert!((field(&stdout(&o), "holevo") - 0.25977).abs() < 1e-5);
}

#[test]
fn msgm_reports_state_profile() {
    let o = bpqm(&["msgm", "--code", &fixture("hamming74.json"), "--merge", "4-5"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["max_state_space"], 8);
    assert_eq!(v["merged_max_state_space"], 4);
}

#[test]
fn trellis_has_sixteen_paths() {
    let o = bpqm(&["trellis", "--code", &fixture("hamming74.json")]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["max_states"], 8);
    assert_eq!(v["trellis"]["layers"].as_array().unwrap().len(), 8);
}

#[test]
fn discretize_report_bounds() {
    let o = bpqm(&["discretize-report", "--mpg", &fixture("repetition5.json"), "--p", "0.1", "--bits", "4,16,52"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let row = |b: &str| text.lines().find(|l| l.split_whitespace().next() == Some(b)).unwrap().to_string();
    let r16 = row("16");
    let cols: Vec<&str> = r16.split_whitespace().collect();
    let (obs, bound): (f64, f64) = (cols[1].parse().unwrap(), cols[2].parse().unwrap());
    assert!((bound - 0.1466).abs() < 1e-4);
    assert!(obs <= bound);
    let r52 = row("52");
    assert!(r52.split_whitespace().nth(1).unwrap().parse::<f64>().unwrap() < 1e-12);
    assert!(row("4").contains("vacuous bound"));
}

#[test]
fn simulate_agrees_with_exact() {
    let o = bpqm(&["simulate", "--mpg", &fixture("repetition5.json"), "--p", "0.15", "--runs", "20000", "--seed", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn de_at_zero_noise_has_zero_ber() {
    let o = bpqm(&["de", "--family", "5/7", "--omega", "0", "--pop", "200", "--w", "3", "--l", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("omega,iteration,ber"));
    let bers: Vec<f64> = lines.map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(bers.len(), 5);
    assert!(bers.iter().all(|&b| b == 0.0), "{bers:?}");
}

#[test]
fn de_is_reproducible_across_thread_counts() {
    let args = ["de", "--family", "13/15", "--omega", "0.22,0.25", "--pop", "300", "--w", "5", "--l", "4", "--seed", "11"];
    let one = bpqm(&[&args[..], &["--threads", "1"]].concat());
    let four = bpqm(&[&args[..], &["--threads", "4"]].concat());
    assert!(one.status.success(), "{}", stderr(&one));
    assert_eq!(stdout(&one), stdout(&four));
    assert!(stderr(&one).contains("\"seed\": 11"));
}

#[test]
fn de_writes_config_next_to_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("curve.csv");
    let o = bpqm(&["de", "--family", "5/7", "--omega", "0.2", "--pop", "100", "--w", "2", "--l", "2", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("curve.config.json")).unwrap()).unwrap();
    assert_eq!(cfg["config"]["pop"], 100);
}

#[test]
fn invalid_inputs_exit_with_one() {
    assert_eq!(bpqm(&["de", "--family", "5/7", "--omega", "0.7"]).status.code(), Some(1));
    assert_eq!(bpqm(&["threshold", "--family", "5/8"]).status.code(), Some(1));
    assert_eq!(bpqm(&["threshold", "--family", "5/7", "--tol", "1e-5"]).status.code(), Some(1));
    assert_eq!(bpqm(&["nonsense"]).status.code(), Some(1));
}

#[test]
fn desk_threshold_for_5_7() {
    let o = bpqm(&["threshold", "--family", "5/7", "--desk"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let t = v["threshold"].as_f64().unwrap();
    assert!((0.22..=0.245).contains(&t), "{t}");
    assert_eq!(v["family"], "5/7");
    assert_eq!(v["config"]["pop"], 2000);
    assert!(v["tol"].as_f64().is_some());
}
