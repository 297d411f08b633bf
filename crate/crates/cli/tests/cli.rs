use std::fs;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lfe-design"))
}

#[test]
fn grid_writes_all_models() {
    let dir = tempfile::tempdir().unwrap();
    let st = bin().args(["--out"]).arg(dir.path()).arg("grid").status().unwrap();
    assert_eq!(st.code(), Some(0));
    for m in ["exp", "3tc", "ppm"] {
        assert!(dir.path().join(format!("grid_{m}.csv")).exists());
    }
    let text = fs::read_to_string(dir.path().join("grid_3tc.csv")).unwrap();
    assert_eq!(text.lines().count(), 401);
}

#[test]
fn aopt_sparsity_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin().arg("--out").arg(dir.path()).args(["aopt", "--sparsity", "2"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("aopt.csv")).unwrap();
    let row = text.lines().nth(1).unwrap();
    assert!(row.starts_with("exp,2,0.1,0.0100020"), "{row}");
    assert!(row.ends_with(",0 99"));
}

#[test]
fn aopt_output_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let st = bin().arg("--out").arg(d.path()).args(["aopt", "--sparsity", "2,3"]).status().unwrap();
        assert!(st.success());
    }
    assert_eq!(fs::read(a.path().join("aopt.csv")).unwrap(), fs::read(b.path().join("aopt.csv")).unwrap());
}

#[test]
fn unknown_model_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin().arg("--out").arg(dir.path()).args(["train", "--model", "nope"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown model"));
}

#[test]
fn config_error_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "model = \"ppm\"\n\n[train]\nbatch_sise = 10\n").unwrap();
    let out = bin().arg("--config").arg(&cfg).arg("grid").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 4"));
}

#[test]
fn bad_flag_is_a_usage_error() {
    let st = bin().args(["train", "--no-such-flag"]).status().unwrap();
    assert_eq!(st.code(), Some(2));
}

#[test]
fn empty_sparsity_is_a_no_op() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "model = \"ppm\"\nsparsity = []\n").unwrap();
    let out_dir = dir.path().join("out");
    let st = bin().arg("--config").arg(&cfg).arg("--out").arg(&out_dir).arg("train").status().unwrap();
    assert_eq!(st.code(), Some(0));
    assert!(!out_dir.exists());
}

#[test]
fn divergent_training_exits_with_numerical_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(
        &cfg,
        "model = \"exp\"\nsparsity = [2]\n[train]\nlr_theta = 1e300\nbatch_size = 8\nphase1_cap = 50\nphase2_iters = 5\n",
    )
    .unwrap();
    let out = bin().arg("--config").arg(&cfg).arg("--out").arg(dir.path()).arg("train").output().unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn train_then_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(
        &cfg,
        "model = \"exp\"\nsparsity = [100]\n[train]\nbatch_size = 16\nphase1_cap = 20\nphase2_iters = 20\n[eval]\nn_sets = 2\nset_size = 32\n",
    )
    .unwrap();
    let out = bin().arg("--config").arg(&cfg).arg("--out").arg(dir.path()).arg("train").output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let net = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "bin"))
        .expect("network file");
    let ev = dir.path().join("ev");
    let out = bin().arg("--out").arg(&ev).arg("evaluate").arg(&net).args(["--n-sets", "3", "--set-size", "10"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("samples=30"));
    assert!(ev.join("evaluation.csv").exists());
}
