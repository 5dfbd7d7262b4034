use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use csmart::simgen::{generate_trial, ClusterSizes, GenerativeSpec, ResponseModel};
use csmart::trial_data::write_csv;

fn csmart(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_csmart")).args(args).output().expect("binary runs")
}

fn asic_like(dir: &Path) -> PathBuf {
    let spec = GenerativeSpec {
        n: 94,
        cluster_sizes: ClusterSizes::Range([1, 3]),
        beta_true: [3.0, 0.2, -0.1, 0.05],
        eta_true: vec![0.3, -0.2, 0.1, 0.0, 0.15, -0.05],
        sd_y: 1.5,
        icc: 0.3,
        response_rate: [0.4, 0.45],
        response_effect: [0.0, 0.0],
        response_model: ResponseModel::Constant,
        seed: 11,
    };
    let path = dir.join("asic.csv");
    write_csv(&generate_trial(&spec, 0).unwrap(), &path).unwrap();
    path
}

fn tiny_design(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("design.json");
    let text = format!(
        r#"{{"n":[12],"m":[4],"delta":[0.5],"icc":[0.2],"response_rate":[0.5],"cor_xy":[0.5],
            "replications":40,"base_seed":1{extra}}}"#
    );
    std::fs::write(&path, text).unwrap();
    path
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn analyze_writes_coefficient_and_effect_rows_per_block() {
    let dir = tempfile::tempdir().unwrap();
    let data = asic_like(dir.path());
    let out = dir.path().join("report.csv");
    let o = csmart(&[
        "analyze",
        data.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--fsa",
        "minimal",
        "--fsa",
        "full",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("report.txt").exists());

    let mut rdr = csv::Reader::from_path(&out).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2 * 16);
    for block in rows.chunks(16) {
        assert_eq!(block.iter().filter(|r| &r[1] == "coefficient").count(), 10);
        assert_eq!(block.iter().filter(|r| &r[1] == "effect").count(), 6);
    }
    let (minimal, full) = rows.split_at(16);
    for (a, b) in minimal.iter().zip(full) {
        assert_eq!(&a[0], "minimal");
        assert_eq!(&b[0], "full");
        assert_eq!(&a[2], &b[2]);
        assert_eq!(&a[3], &b[3], "estimates must not depend on the adjustment");
        assert_ne!(&a[4], &b[4]);
    }
    assert_eq!(&minimal[0][8], "inf");
    assert_eq!(&full[0][8], "84");
    assert!(stdout(&o).contains("D[(1,1) vs (-1,-1)]"));
}

#[test]
fn analyze_custom_matches_named_preset() {
    let dir = tempfile::tempdir().unwrap();
    let data = asic_like(dir.path());
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let o1 = csmart(&["analyze", data.to_str().unwrap(), "-o", a.to_str().unwrap(), "--fsa", "proposed"]);
    let o2 = csmart(&[
        "analyze",
        data.to_str().unwrap(),
        "-o",
        b.to_str().unwrap(),
        "--fsa",
        "custom",
        "--fsa-bias",
        "--fsa-t",
    ]);
    assert!(o1.status.success() && o2.status.success());
    let strip = |p: &Path| -> Vec<Vec<String>> {
        csv::Reader::from_path(p)
            .unwrap()
            .records()
            .map(|r| r.unwrap().iter().skip(1).map(String::from).collect())
            .collect()
    };
    assert_eq!(strip(&a), strip(&b));
}

#[test]
fn missing_a2_column_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "cluster_id,member_id,a1,r,y\nc1,1,1,1,2.0\n").unwrap();
    let o = csmart(&["analyze", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("a2"), "{}", stderr(&o));
}

#[test]
fn design_failure_prints_the_validation_report() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("one_arm.csv");
    let mut text = String::from("cluster_id,member_id,a1,r,a2,y\n");
    for i in 0..6 {
        text.push_str(&format!("c{i},1,1,0,{},1.{i}\n", if i % 2 == 0 { 1 } else { -1 }));
    }
    std::fs::write(&path, text).unwrap();
    let o = csmart(&["analyze", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("design check: FAIL"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(csmart(&["simulate", "d.json", "--out", "t.csv"]).status.code(), Some(1));
    assert_eq!(csmart(&["analyze", "d.csv", "--fsa-dof"]).status.code(), Some(1));
    assert_eq!(csmart(&["analyze", "d.csv", "--level", "2"]).status.code(), Some(1));
    assert_eq!(csmart(&[]).status.code(), Some(1));
    assert_eq!(csmart(&["--help"]).status.code(), Some(0));
}

#[test]
fn simulate_single_replication_flags_mcse() {
    let dir = tempfile::tempdir().unwrap();
    let design = tiny_design(dir.path(), "");
    let out = dir.path().join("t.csv");
    let o = csmart(&[
        "simulate",
        design.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "9",
        "--replications",
        "1",
    ]);
    assert!(o.status.code() == Some(0) || o.status.code() == Some(3), "{}", stderr(&o));
    let detail = dir.path().join("t.detail.csv");
    let mut rdr = csv::Reader::from_path(&detail).unwrap();
    let header = rdr.headers().unwrap().clone();
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 4);
    for r in rows.iter().filter(|r| &r[col("successes")] == "1") {
        assert_eq!(&r[col("mcse")], "0.500000");
        assert_eq!(&r[col("mcse_unreliable")], "true");
    }
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let design = tiny_design(dir.path(), "");
    let run = |name: &str, workers: &str| {
        let out = dir.path().join(name);
        let o = csmart(&[
            "simulate",
            design.to_str().unwrap(),
            "-o",
            out.to_str().unwrap(),
            "--seed",
            "42",
            "--workers",
            workers,
        ]);
        assert!(matches!(o.status.code(), Some(0 | 3)), "{}", stderr(&o));
        (std::fs::read(&out).unwrap(), std::fs::read(out.with_extension("detail.csv")).unwrap())
    };
    let a = run("a.csv", "1");
    assert_eq!(a, run("b.csv", "1"));
    assert_eq!(a, run("c.csv", "3"));
}

#[test]
fn infeasible_design_names_the_constraint() {
    let dir = tempfile::tempdir().unwrap();
    let design = tiny_design(dir.path(), r#","response_effect_sd":2.0"#);
    let out = dir.path().join("t.csv");
    let o = csmart(&["simulate", design.to_str().unwrap(), "-o", out.to_str().unwrap(), "--seed", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("infeasible"), "{}", stderr(&o));
}

#[test]
fn validate_passes_and_lists_tolerances() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("oracles.jsonl");
    let o = csmart(&["validate", "--out", json.to_str().unwrap()]);
    let text = stdout(&o);
    assert_eq!(o.status.code(), Some(0), "{text}");
    for needle in [
        "dense sandwich: plain",
        "dense sandwich: estimated weights+FSA3+FSA4",
        "invariant to rho",
        "pseudo-MLE",
        "pathway mixture",
        "FSA3 factor",
        "tol ",
    ] {
        assert!(text.contains(needle), "missing '{needle}' in\n{text}");
    }
    let lines = std::fs::read_to_string(&json).unwrap();
    assert!(lines.lines().all(|l| l.contains("\"tolerance\"")));
}
