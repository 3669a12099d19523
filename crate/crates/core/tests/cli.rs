use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn torcrit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_torcrit"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn crit_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let o = torcrit(dir.path(), &["crit", "--seed", "7", "--R", "16", "--out", out]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let a = fs::read(dir.path().join("a/crit/critical_points.csv")).unwrap();
    let b = fs::read(dir.path().join("b/crit/critical_points.csv")).unwrap();
    assert_eq!(a, b);
    assert!(String::from_utf8(a).unwrap().starts_with("# config_hash="));
}

#[test]
fn crit_with_config_file_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), "[field]\nm = 2\n[study]\nR = [8.0]\n").unwrap();
    let runs: Vec<Vec<u8>> = ["1", "3"]
        .iter()
        .map(|t| {
            let out = format!("t{t}");
            let o = torcrit(
                dir.path(),
                &[
                    "crit",
                    "--config",
                    "c.toml",
                    "--seed",
                    "7",
                    "--threads",
                    t,
                    "--out",
                    &out,
                ],
            );
            assert!(o.status.success(), "{}", stderr(&o));
            fs::read(dir.path().join(out).join("crit/critical_points.csv")).unwrap()
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn kr_consts_reports_rice_constant() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), "[kac_rice]\nn_mc_two = 20000\n").unwrap();
    let o = torcrit(dir.path(), &["kr-consts", "--config", "c.toml"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let line = text.lines().find(|l| l.starts_with("C_1 = ")).expect("C_1 line");
    let value: f64 = line[6..].split_whitespace().next().unwrap().parse().unwrap();
    assert!((value - 0.27566).abs() < 0.003, "{line}");
    assert!(line.contains('±'));
    let consts = fs::read_to_string(dir.path().join("out/kr-consts/consts.json")).unwrap();
    assert!(consts.contains("config_hash"));
}

#[test]
fn ample_gate_fails_on_single_mode() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("one.toml"), "[field]\nmodes = 1\n").unwrap();
    let o = torcrit(dir.path(), &["ample", "--config", "one.toml", "--R", "2"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("ampleness gate failed"), "{}", stderr(&o));
    assert!(stderr(&o).contains('2'));
    let o = torcrit(dir.path(), &["ample", "--R", "8,16"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn unknown_config_keys_are_listed() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("bad.toml"),
        "seed = 3\n[field]\ndim = 2\n[study]\ntrails = 4\n",
    )
    .unwrap();
    let o = torcrit(dir.path(), &["crit", "--config", "bad.toml"]);
    assert!(!o.status.success());
    let err = stderr(&o);
    for key in ["seed", "field.dim", "study.trails"] {
        assert!(err.contains(key), "{err}");
    }
}

#[test]
fn verify_detects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let o = torcrit(dir.path(), &["stats", "--R", "8,16", "--trials", "20"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = torcrit(dir.path(), &["stats", "--R", "8,16", "--trials", "20", "--verify"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest = fs::read_to_string(dir.path().join("out/stats/manifest.json")).unwrap();
    assert!(manifest.contains("\"trials\": 20"));
    let p = dir.path().join("out/stats/stats.csv");
    let text = fs::read_to_string(&p).unwrap().replace("e-", "e+");
    fs::write(&p, text).unwrap();
    let o = torcrit(dir.path(), &["stats", "--R", "8,16", "--trials", "20", "--verify"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("verification failed"));
}

#[test]
fn other_commands_write_outputs() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("c.toml"),
        "[study]\nR = [8.0]\ntrials = 8\n[kac_rice]\nn_mc_one = 5000\nn_mc_two = 5000\nr_grid = [0.5, 2.0]\n\
         [lln]\nN = [8.0, 16.0]\nstreams = 4\n[blowup]\nr_grid = [0.1, 0.01]\ntrials = 4\n",
    )
    .unwrap();
    for (cmd, file) in [
        ("sample", "grid.csv"),
        ("kernel", "kernel.csv"),
        ("kr-one", "kr_one.csv"),
        ("kr-two", "kr_two.csv"),
        ("lln", "lln.csv"),
        ("blowup", "blowup.json"),
    ] {
        let o = torcrit(dir.path(), &[cmd, "--config", "c.toml"]);
        assert!(o.status.success(), "{cmd}: {}", stderr(&o));
        let path = dir.path().join("out").join(cmd).join(file);
        assert!(path.exists(), "{cmd} did not write {file}");
        let o = torcrit(dir.path(), &[cmd, "--config", "c.toml", "--verify"]);
        assert!(o.status.success(), "{cmd} verify: {}", stderr(&o));
    }
}
