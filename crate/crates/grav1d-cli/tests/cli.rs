//! End-to-end tests of the `grav1d` binary: output contents, formats and exit codes.

use std::process::{Command, Output};

use grav1d::Series;

fn grav1d(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_grav1d")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).expect("UTF-8 output")
}

#[test]
fn correlator_rows() {
    let o = grav1d(&["correlators", "--format", "csv"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.starts_with("insertions,genus,correlator,value\n"));
    assert!(text.lines().any(|l| l == "3,2,<tau_3>_2,1/8"));
    assert!(text.lines().any(|l| l == "2 4,3,<tau_2 tau_4>_3,7/48"));
}

#[test]
fn correlators_respect_the_selection_rule() {
    let o = grav1d(&["correlators", "--format", "json"]);
    let rows: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    for row in rows.as_array().unwrap() {
        let g: i64 = row["genus"].as_str().unwrap().parse().unwrap();
        let ins: Vec<i64> = row["insertions"].as_str().unwrap().split(' ').map(|x| x.parse().unwrap()).collect();
        assert_eq!(ins.iter().sum::<i64>(), 2 * g - 2 + ins.len() as i64, "{row}");
        assert!(g <= 3);
    }
}

#[test]
fn free_energy_markdown() {
    let o = grav1d(&["series", "--which", "F", "--kmax", "3", "--dmax", "3", "--format", "md"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("t_2^2 | l=1 | 5/24"));
}

#[test]
fn f_window_follows_gmax() {
    let o = grav1d(&["series", "--which", "F", "--gmax", "1", "--format", "json"]);
    let f = Series::from_json_str(&stdout(&o)).unwrap();
    assert!(f.terms().all(|(m, _)| (-1..=0).contains(&m.l())));
    assert!(f.terms().any(|(m, _)| m.l() == 0));
}

#[test]
fn i0_csv_header() {
    let o = grav1d(&["series", "--which", "I0", "--format", "csv"]);
    let text = stdout(&o);
    assert_eq!(text.lines().next(), Some("t_exponents,l,coefficient"));
    assert!(text.lines().any(|l| l == "t_0,0,1/1"));
}

#[test]
fn z_json_round_trips() {
    let o = grav1d(&["series", "--which", "Z", "--kmax", "3", "--dmax", "5"]);
    let text = stdout(&o);
    let z = Series::from_json_str(&text).unwrap();
    assert_eq!(z.to_json_string() + "\n", text);
    assert!(z.len() > 10);
}

#[test]
fn output_is_deterministic() {
    for args in [
        &["series", "--which", "W", "--format", "csv"][..],
        &["icoords", "--format", "json"][..],
        &["graphs", "--edges", "3", "--format", "csv"][..],
    ] {
        assert_eq!(grav1d(args).stdout, grav1d(args).stdout);
    }
}

#[test]
fn verify_default_passes() {
    let o = grav1d(&["verify"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["ok"], true);
    assert!(r["checks"].as_array().unwrap().len() > 50);
}

#[test]
fn injected_fault_fails_naming_the_monomial() {
    let o = grav1d(&["verify", "--suite", "icoords", "--inject", "f0-in-i-sign"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("t_0^3*t_2"));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(grav1d(&["verify", "--suite", ","]).status.code(), Some(2));
    assert_eq!(grav1d(&["verify", "--suite", "nope"]).status.code(), Some(2));
    assert_eq!(grav1d(&["series", "--which", "Q"]).status.code(), Some(2));
    assert_eq!(grav1d(&["series", "--which", "Ik", "--k", "9"]).status.code(), Some(2));
    let o = Command::new(env!("CARGO_BIN_EXE_grav1d")).args(["verify", "--suite", "join"]).env("GRAV1D_THREADS", "x").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# small run\nkmax = 3\ndmax = 3\nformat = md\n").unwrap();
    let c = cfg.to_str().unwrap();
    let o = grav1d(&["series", "--which", "F", "--config", c]);
    assert!(stdout(&o).contains("t_2^2 | l=1 | 5/24"));
    let o = grav1d(&["series", "--which", "F", "--config", c, "--format", "csv"]);
    assert!(stdout(&o).lines().any(|l| l == "t_2^2,1,5/24"));
    std::fs::write(&cfg, "colour = blue\n").unwrap();
    assert_eq!(grav1d(&["verify", "--config", c]).status.code(), Some(2));
}

#[test]
fn out_flag_writes_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("i.csv");
    let o = grav1d(&["icoords", "--format", "csv", "--out", path.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(o.stdout.is_empty());
    assert!(std::fs::read_to_string(&path).unwrap().starts_with("series,t_exponents,l,coefficient\n"));
}

#[test]
fn thread_cap_does_not_change_results() {
    let run = |t: &str| {
        Command::new(env!("CARGO_BIN_EXE_grav1d"))
            .args(["series", "--which", "Z", "--kmax", "4", "--dmax", "6"])
            .env("GRAV1D_THREADS", t)
            .output()
            .unwrap()
            .stdout
    };
    assert_eq!(run("1"), run("4"));
}

#[test]
fn spectral_and_npoint_commands() {
    let o = grav1d(&["spectral", "--kmax", "3", "--dmax", "4"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let o = grav1d(&["npoint", "--n", "2", "--genus", "0", "--format", "csv"]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("slot_exponents,t_exponents,l,coefficient\n"));
}
