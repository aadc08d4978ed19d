mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::{write_run_file, write_spec};

fn poolal(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_poolal")).args(args).current_dir(cwd).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn generate_run_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path());
    let o = poolal(&["generate", "--spec", spec.to_str().unwrap(), "--out", "data"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest = dir.path().join(stdout(&o).trim());
    assert!(manifest.exists());

    let run_file = write_run_file(dir.path(), &manifest, "");
    let o = poolal(&["run", "--config", run_file.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("out");
    let tsv = fs::read_to_string(out.join("report.tsv")).unwrap();
    assert_eq!(tsv.lines().count(), 1 + 4);
    assert!(tsv.starts_with("iteration\tlabeled\tua\twa"));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["records"].as_array().unwrap().len(), 4);
    assert_eq!(json["config"]["budget"], 9);

    let o = poolal(
        &["evaluate", "--checkpoint", out.join("model.toml").to_str().unwrap(), "--dataset", manifest.to_str().unwrap()],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let ua: f64 = text.lines().find_map(|l| l.strip_prefix("ua\t")).unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&ua));
}

#[test]
fn pretraining_run_writes_an_encoder_usable_by_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path());
    let o = poolal(&["generate", "--spec", spec.to_str().unwrap(), "--out", "data"], dir.path());
    let manifest = dir.path().join(stdout(&o).trim());
    let run_file = write_run_file(dir.path(), &manifest, "tapt_enabled = true\n[experiment.tapt]\nframes = 2\nepochs = 3");
    let o = poolal(&["run", "--config", run_file.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("out");
    assert!(out.join("tapt.toml").exists());
    let o = poolal(
        &[
            "evaluate",
            "--checkpoint",
            out.join("model.toml").to_str().unwrap(),
            "--dataset",
            manifest.to_str().unwrap(),
            "--tapt",
            out.join("tapt.toml").to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn malformed_config_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("dataset = \"d.toml\"\n[experiment]\nbudgett = 5\n", "experiment.budgett"),
        ("dataset = \"d.toml\"\n[experiment]\nstrategy = \"psychic\"\n", "experiment.strategy"),
        ("dataset = \"d.toml\"\nport = \"eighty\"\n", "port"),
        ("output_dir = \"o\"\n", "dataset"),
    ];
    for (text, key) in cases {
        let path = dir.path().join("bad.toml");
        fs::write(&path, text).unwrap();
        let o = poolal(&["run", "--config", path.to_str().unwrap()], dir.path());
        assert!(!o.status.success());
        assert!(stderr(&o).contains(&format!("`{key}`")), "{key}: {}", stderr(&o));
    }
}

#[test]
fn budget_beyond_pool_is_rejected_by_key() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path());
    let o = poolal(&["generate", "--spec", spec.to_str().unwrap(), "--out", "data"], dir.path());
    let manifest = dir.path().join(stdout(&o).trim());
    let run_file = write_run_file(dir.path(), &manifest, "");
    let text = fs::read_to_string(&run_file).unwrap().replace("budget = 9", "budget = 1000");
    fs::write(&run_file, text).unwrap();
    let o = poolal(&["run", "--config", run_file.to_str().unwrap()], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("`budget`"), "{}", stderr(&o));
}
