use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use paradyn::pfld::{read_pfld, write_pfld};
use paradyn::{Grid, PeriodicField};

fn paradyn(args: &[&str], envs: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_paradyn"));
    cmd.args(args).env_remove("PARADYN_OUT");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn write_inputs(dir: &Path) -> (String, String) {
    let g = Grid::new(64, 2).unwrap();
    let tau = std::f64::consts::TAU;
    let a = PeriodicField::from_fn(g, |x| (tau * x[0]).sin() + 0.3 * (tau * 5.0 * x[1]).cos());
    let b = PeriodicField::from_fn(g, |x| (tau * (x[0] - x[1])).cos().abs().powf(1.5));
    let (pa, pb) = (dir.join("a.pfld"), dir.join("b.pfld"));
    write_pfld(&pa, &a).unwrap();
    write_pfld(&pb, &b).unwrap();
    (pa.to_string_lossy().into_owned(), pb.to_string_lossy().into_owned())
}

#[test]
fn field_tools_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = write_inputs(dir.path());

    let blocks = dir.path().join("blocks");
    let norms = json(&paradyn(&["decompose", &a, "--out", blocks.to_str().unwrap()], &[]));
    let entries = norms.as_array().unwrap();
    assert!(blocks.join("block_m1.pfld").exists());
    let sum = entries
        .iter()
        .map(|e| read_pfld(&blocks.join(e["file"].as_str().unwrap())).unwrap())
        .reduce(|x, y| x.add(&y).unwrap())
        .unwrap();
    let original = read_pfld(Path::new(&a)).unwrap();
    assert!(sum.sub(&original).unwrap().sup_norm() < 1e-12);

    let para = dir.path().join("para");
    let v = json(&paradyn(&["paraproduct", &a, &b, "--out", para.to_str().unwrap()], &[]));
    assert!(v["identity_defect"].as_f64().unwrap() < 1e-12);
    for f in ["t_a_b.pfld", "t_b_a.pfld", "remainder.pfld"] {
        assert!(para.join(f).exists());
    }

    let v = json(&paradyn(&["regularity", &b, "--scale", "sobolev", "--bands", "1,4"], &[]));
    assert!(v["block_norms"].is_array());
    assert!(v.get("estimate").is_some());
}

#[test]
fn pipeline_and_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let out = paradyn(&["--jobs", "2", "pipeline", "catmap_baseline", "--out", run.to_str().unwrap()], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let bundle_line = stdout.lines().find(|l| l.ends_with("  bundle.json")).unwrap();
    assert_eq!(bundle_line.split_whitespace().next().unwrap().len(), 64);
    assert!(run.join("manifest.json").exists());

    let plots = dir.path().join("plots");
    let out = paradyn(&["plot-data", run.to_str().unwrap(), "--out", plots.to_str().unwrap()], &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(plots.join("thresholds_margins.csv").exists());
    assert!(plots.join("resonances_scatter_0.csv").exists());
}

#[test]
fn output_root_comes_from_the_environment() {
    let root = tempfile::tempdir().unwrap();
    let out = paradyn(&["thresholds", "--roof", "1", "--s", "1.9,2.1"], &[("PARADYN_OUT", root.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = root.path().join("thresholds");
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    assert!(manifest["artifacts"]
        .as_array()
        .unwrap()
        .iter()
        .any(|a| a["path"] == "thresholds.json"));
}

#[test]
fn invalid_input_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = paradyn(
        &["bundle", "--grid", "48", "--out", dir.path().join("x").to_str().unwrap()],
        &[],
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let out = paradyn(&["plot-data", dir.path().join("missing.json").to_str().unwrap(), "--out", dir.path().to_str().unwrap()], &[]);
    assert!(!out.status.success());

    let out = paradyn(&["pipeline", "no_such_experiment"], &[]);
    assert!(!out.status.success());
}
