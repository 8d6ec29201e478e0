use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn pldp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pldp")).args(args).output().unwrap()
}

fn data_rows(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(str::to_string)
        .collect()
}

#[test]
fn validate_shipped_config() {
    let out = pldp(&["validate", config("defect_center.toml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn validate_reports_violations_and_parse_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(
        &bad,
        "period = 1.0\nbins = 2\n[graph]\nstates = [\"a\", \"b\"]\nedges = [[\"a\", \"b\"], [\"b\", \"a\"]]\n[table]\nrates = [[1.0, 0.0], [1.0, 1.0]]\n",
    )
    .unwrap();
    let out = pldp(&["validate", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("violation"));

    std::fs::write(&bad, "period = \n").unwrap();
    assert_eq!(pldp(&["validate", bad.to_str().unwrap()]).status.code(), Some(1));
    assert_eq!(pldp(&["validate", "/nonexistent.toml"]).status.code(), Some(1));
}

#[test]
fn gc_uva2_batch() {
    let dir = tempfile::tempdir().unwrap();
    let out = pldp(&[
        "gc",
        config("triangle.toml").to_str().unwrap(),
        "--relation",
        "uva2",
        "--replicas",
        "20",
        "--bins",
        "256",
        "--seed",
        "7",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = data_rows(&dir.path().join("gc.csv"));
    assert_eq!(rows.len(), 20);
    for row in rows {
        let residual: f64 = row.split(',').nth(4).unwrap().parse().unwrap();
        assert!(residual <= 1e-6);
    }
}

#[test]
fn gc_fails_above_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let out = pldp(&[
        "gc",
        config("triangle.toml").to_str().unwrap(),
        "--relation",
        "uva1",
        "--replicas",
        "3",
        "--tol",
        "1e-14",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn steady_two_state_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let out = pldp(&["steady", config("defect_center.toml").to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let worst = data_rows(&dir.path().join("comparison.csv"))
        .iter()
        .map(|r| r.split(',').nth(4).unwrap().parse::<f64>().unwrap())
        .fold(0.0, f64::max);
    assert!(worst <= 1e-8);
}

#[test]
fn outputs_are_byte_identical_for_the_same_seed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let out = pldp(&[
            "simulate",
            config("triangle.toml").to_str().unwrap(),
            "--periods",
            "30",
            "--replicas",
            "6",
            "--seed",
            "11",
            "--out",
            dir.path().to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0));
    }
    for name in ["mu.csv", "q.csv", "j.csv", "summary.csv", "events.csv"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name}");
    }
    let text = std::fs::read_to_string(a.path().join("mu.csv")).unwrap();
    for key in ["# tool=pldp", "# config_sha256=", "# seed=11", "# bins=64", "# periods=30"] {
        assert!(text.contains(key), "{key}");
    }
}

#[test]
fn rate_on_steady_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let model = config("triangle.toml");
    let model = model.to_str().unwrap();
    assert_eq!(pldp(&["steady", model, "--out", d]).status.code(), Some(0));
    let mu = dir.path().join("pi.csv");
    let q = dir.path().join("q_pi.csv");
    let out = pldp(&["rate", model, "--mu", mu.to_str().unwrap(), "--flow", q.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("Lambda membership: ok"));
    assert!(stdout.contains("I = 0.0000000000000000e0"), "{stdout}");
}

#[test]
fn contract_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let out = pldp(&[
        "contract",
        config("symmetric_resonance.toml").to_str().unwrap(),
        "--q-target",
        "0.9,0.9",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let rows = data_rows(&dir.path().join("contract.csv"));
    let get = |k: &str| rows.iter().find(|r| r.starts_with(&format!("{k},"))).unwrap().split(',').nth(1).unwrap().to_string();
    assert_eq!(get("converged"), "true");
    let diff: f64 = get("abs_diff").parse().unwrap();
    assert!(diff < 1e-6);
}

#[test]
fn contract_divergent_target_is_infinite() {
    let dir = tempfile::tempdir().unwrap();
    let out = pldp(&[
        "contract",
        config("defect_center.toml").to_str().unwrap(),
        "--q-target",
        "1.0,0.5",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("value = inf"));
}

#[test]
fn contract_reports_non_convergence() {
    let dir = tempfile::tempdir().unwrap();
    let out = pldp(&[
        "contract",
        config("triangle.toml").to_str().unwrap(),
        "--mu-target",
        "0.2,0.3,0.5",
        "--max-iterations",
        "5",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_arguments_are_input_errors() {
    assert_eq!(pldp(&["simulate"]).status.code(), Some(1));
    assert_eq!(pldp(&["steady", "x.toml", "--bins", "many"]).status.code(), Some(1));
    assert_eq!(pldp(&["--version"]).status.code(), Some(0));
}
