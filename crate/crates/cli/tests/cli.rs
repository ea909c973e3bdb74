use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_m2m-uplink"));
    cmd.env_remove("M2M_UPLINK_SEED");
    cmd
}

fn default_config() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios/default.toml")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn maxload_cdma_writes_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("load.csv");
    let cfg = default_config();
    let o = run(&["--config", cfg.to_str().unwrap(), "--output", csv.to_str().unwrap(), "maxload", "--kind", "cdma"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let lambda: f64 = text
        .split("lambda_max = ")
        .nth(1)
        .and_then(|s| s.split_whitespace().next())
        .unwrap()
        .parse()
        .unwrap();
    assert!((1215.0..=1485.0).contains(&lambda), "{text}");
    let written = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = written.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "kind,lambda,n_bar,code_len_or_channels,target_sinr_db,p_coll,eps,delta,lambda_max");
    assert!(lines[1].starts_with("cdma,"));
}

#[test]
fn bounds_near_two_and_five_quarters() {
    let o = run(&["bounds", "--k", "1000"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let row = text.lines().last().unwrap();
    let cols: Vec<f64> = row.split(',').map(|c| c.parse().unwrap()).collect();
    assert!((1.9..=2.2).contains(&cols[2]), "{row}");
    assert!((1.20..=1.30).contains(&cols[3]), "{row}");
}

#[test]
fn unknown_flag_is_usage_error() {
    let o = run(&["bounds", "--k", "3", "--frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"));
}

#[test]
fn help_exits_cleanly() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["sweep", "--help"]).status.code(), Some(0));
}

#[test]
fn config_errors_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "gamma = 3.0\nw_totl = 1e6\n").unwrap();
    let o = run(&["--config", cfg.to_str().unwrap(), "bounds", "--k", "3"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("w_totl"), "{}", stderr(&o));

    let o = run(&["--set", "r_outer=-5", "bounds", "--k", "3"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("r_outer"), "{}", stderr(&o));

    let o = run(&["--config", "/nonexistent/x.toml", "bounds", "--k", "3"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn infeasible_designs_exit_two() {
    let o = run(&["design", "--kind", "cdma", "--lambda", "100", "--pf", "0.01", "--eps", "0.01"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("P_f <= eps"), "{}", stderr(&o));

    let o = run(&["schedule", "--kind", "tdma", "--k", "1500"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn design_and_schedule_rows() {
    let o = run(&["design", "--kind", "fdma", "--lambda", "100"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).lines().any(|l| l.starts_with("fdma,100.0,")));

    for kind in ["tdma", "fdma", "sic"] {
        let o = run(&["schedule", "--kind", kind, "--k", "50", "--objective", "energy"]);
        assert!(o.status.success(), "{kind}: {}", stderr(&o));
        let text = stdout(&o);
        assert!(text.contains("strategy,K,total_power_w,total_power_dbm,energy_per_bit_j,dropped_count"));
        assert!(text.lines().last().unwrap().starts_with(&format!("{kind},50,")));
    }
}

#[test]
fn sweep_is_reproducible_and_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let path = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let args = |out: &str| {
        vec![
            "--output".to_string(),
            out.to_string(),
            "sweep".into(),
            "--lambdas".into(),
            "100:300:100".into(),
            "--strategies".into(),
            "cdma_ra,fdma_opt,sic".into(),
            "--trials".into(),
            "30".into(),
        ]
    };
    let (a, b, c) = (path("a.csv"), path("b.csv"), path("c.csv"));
    assert!(bin().args(args(&a)).env("M2M_UPLINK_SEED", "9").status().unwrap().success());
    assert!(bin().args(args(&b)).env("M2M_UPLINK_SEED", "9").status().unwrap().success());
    assert!(bin().args(args(&c)).arg("--seed").arg("10").env("M2M_UPLINK_SEED", "9").status().unwrap().success());
    let (a, b, c) = (std::fs::read(a).unwrap(), std::fs::read(b).unwrap(), std::fs::read(c).unwrap());
    assert_eq!(a, b);
    assert_ne!(a, c);
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().count(), 1 + 3 * 3);
    assert!(text.lines().nth(1).unwrap().contains(",30,9,"));

    let o = run(&["sweep", "--lambdas", "1:2:0", "--trials", "2"]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["sweep", "--lambdas", "10", "--strategies", "aloha"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn coordinated_maxload_row() {
    let o = run(&["maxload", "--kind", "tdma", "--trials", "200"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("kind,lambda_max,outage,mean_floor,slln_k_max,slln_lambda,trials,seed"));
    assert!(text.lines().last().unwrap().starts_with("tdma,"));
}
