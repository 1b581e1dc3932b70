use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn qsdc(args: &[&str], out_dir: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_qsdc"));
    cmd.args(args).env_remove("QSDC_OUT_DIR");
    if let Some(dir) = out_dir {
        cmd.env("QSDC_OUT_DIR", dir);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", stdout(o)))
}

#[test]
fn thresholds_reports_both_prefactors() {
    let o = qsdc(&["thresholds"], None);
    assert_eq!(o.status.code(), Some(0));
    let v = json(&o);
    let one = &v["prefactor_1"]["f_max_units"];
    assert!((one["f_p_s"].as_f64().unwrap() - 3.307).abs() < 1e-3);
    assert!((one["f_p_e"].as_f64().unwrap() - 3.878).abs() < 1e-3);
    let four = &v["prefactor_4"]["f_max_units"];
    assert!((four["f_p_r"].as_f64().unwrap() - 18.75).abs() < 1e-2);
    assert!(v["configured"]["hz"]["window_nonempty"].is_boolean());
    assert!(v["version"].is_string());
}

#[test]
fn beam_splitter_flag_at_half_transmissivity() {
    let o = qsdc(&["thresholds", "--set", "t_c=0.5"], None);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(json(&o)["configured"]["hz"]["bs_secure"], false);
}

#[test]
fn config_errors_exit_1_and_name_the_key() {
    let o = qsdc(&["thresholds", "--set", "mu_r=0.9"], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("mu_s > mu_r"));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.conf");
    fs::write(&path, "mu_s = 0.6\nwavelength = 1550\n").unwrap();
    let o = qsdc(&["simulate", "--config", path.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("wavelength"));

    assert_eq!(qsdc(&["frobnicate"], None).status.code(), Some(1));
    assert_eq!(qsdc(&["--help"], None).status.code(), Some(0));
}

#[test]
fn dumped_config_round_trips() {
    let o = qsdc(
        &[
            "simulate",
            "--preset",
            "secure-window",
            "--set",
            "seed=5",
            "--dump-config",
        ],
        None,
    );
    assert_eq!(o.status.code(), Some(0));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("resolved.conf");
    fs::write(&path, stdout(&o)).unwrap();
    let again = qsdc(
        &[
            "simulate",
            "--config",
            path.to_str().unwrap(),
            "--dump-config",
        ],
        None,
    );
    assert_eq!(stdout(&again), stdout(&o));
}

#[test]
fn simulate_is_byte_reproducible_and_writes_to_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "simulate",
        "--preset",
        "secure-window",
        "--seeds",
        "3",
        "--adversary",
        "intercept-resend",
    ];
    for name in ["a.json", "b.json"] {
        let mut full = args.to_vec();
        full.extend(["--out", name]);
        assert_eq!(qsdc(&full, Some(dir.path())).status.code(), Some(0));
    }
    let a = fs::read(dir.path().join("a.json")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b.json")).unwrap());
    let v: serde_json::Value = serde_json::from_slice(&a).unwrap();
    let counts = &v["verdict_counts"];
    let total: u64 = [
        "ACCEPT",
        "ABORT_DECOY_RECONSTRUCTED",
        "ABORT_SIGNAL_UNRECOVERABLE",
    ]
    .iter()
    .map(|k| counts[k].as_u64().unwrap())
    .sum();
    assert_eq!(total, 3);
    assert_eq!(counts["ABORT_SIGNAL_UNRECOVERABLE"], 3);
    assert!(v.get("wall_clock_seconds").is_none());

    let o = qsdc(&["simulate", "--preset", "secure-window", "--timing"], None);
    assert!(json(&o)["wall_clock_seconds"].as_f64().is_some());
}

#[test]
fn simulate_csv() {
    let o = qsdc(
        &[
            "simulate",
            "--preset",
            "secure-window",
            "--seeds",
            "2",
            "--format",
            "csv",
        ],
        None,
    );
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("session,seed,outcome"));
    assert_eq!(lines.count(), 2);
}

#[test]
fn experiment_writes_trace() {
    let dir = tempfile::tempdir().unwrap();
    let o = qsdc(
        &[
            "experiment",
            "--set",
            "n_slots=1000",
            "--set",
            "trace_points=11",
        ],
        Some(dir.path()),
    );
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let report = json(&o);
    assert_eq!(report["reconstruction_claimed"], false);
    let trace = fs::read_to_string(dir.path().join("experiment_trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(
        lines.next().unwrap(),
        "kind,index,time,phase,level,clicked,measured_value"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.iter().filter(|r| r.starts_with("slot,")).count(), 1000);
    assert_eq!(rows.iter().filter(|r| r.starts_with("sweep,")).count(), 11);
}

#[test]
fn wq_prints_value_and_residual() {
    let o = qsdc(&["wq", "--q", "1", "--z", "2.718281828459045"], None);
    assert_eq!(o.status.code(), Some(0));
    let v = json(&o);
    assert!((v["w"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!(v["residual"].as_f64().unwrap() < 1e-12);

    let o = qsdc(&["wq", "--q", "1", "--z", "-1"], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(!o.stderr.is_empty());
}

#[test]
fn attack_sweep_rows() {
    let o = qsdc(
        &[
            "attack-sweep",
            "--preset",
            "secure-window",
            "--param",
            "rate-multiple",
            "--from",
            "1.2",
            "--to",
            "1.4",
            "--steps",
            "2",
            "--seeds",
            "1",
            "--set",
            "n_slots=4000",
        ],
        None,
    );
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let rows = json(&o);
    assert_eq!(rows.as_array().unwrap().len(), 8);
}
