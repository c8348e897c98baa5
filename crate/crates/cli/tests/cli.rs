use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn voco(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_voco")).args(args).output().unwrap()
}

fn repo_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_data_zero_count_writes_empty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let spec = repo_file("configs/phantom.toml");
    let o = voco(&["gen-data", "--spec", s(&spec), "--count", "0", "--out", s(dir.path()), "--shape", "16,16,8"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("dataset.json")).unwrap()).unwrap();
    assert_eq!(manifest["volumes"].as_array().unwrap().len(), 0);
    assert_eq!(manifest["spec_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn gen_data_is_reproducible() {
    let spec = repo_file("configs/phantom.toml");
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let o = voco(&["gen-data", "--spec", s(&spec), "--count", "3", "--out", s(dir.path()), "--shape", "16,16,8", "--first-seed", "5"]);
        assert!(o.status.success(), "{}", stderr(&o));
        let m: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("dataset.json")).unwrap()).unwrap();
        let files: Vec<Vec<u8>> = m["volumes"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| fs::read(dir.path().join(v["file"].as_str().unwrap())).unwrap())
            .collect();
        (m, files)
    };
    let (a, fa) = run();
    let (b, fb) = run();
    assert_eq!(a, b);
    assert_eq!(fa, fb);
    assert_eq!(a["volumes"][0]["id"], "phantom-0-5");
    assert_eq!(a["volumes"][2]["sample_seed"], 7);
}

#[test]
fn gen_data_names_the_organ_outside_the_cube() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("bad.toml");
    fs::write(
        &spec,
        "num_organs = 2\norgan_centers = [[0.5, 0.5, 0.5], [0.95, 0.5, 0.5]]\norgan_radii = [0.1, 0.1]\njitter = 0.1\nnoise_level = 0.0\nseed = 0\n",
    )
    .unwrap();
    let o = voco(&["gen-data", "--spec", s(&spec), "--count", "1", "--out", s(dir.path()), "--shape", "16,16,8"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("organ 1"), "{}", stderr(&o));
}

#[test]
fn pretrain_reports_missing_key_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(repo_file("configs/smoke.toml")).unwrap().replace("lambda = 1.0\n", "");
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, text).unwrap();
    let o = voco(&["pretrain", "--config", s(&cfg), "--out", s(&dir.path().join("run"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("lambda"), "{}", stderr(&o));
}

#[test]
fn pretrain_resume_and_probe() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = repo_file("configs/smoke.toml");
    let out = dir.path().join("run");
    let o = voco(&["pretrain", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["run.json", "config.toml", "loss.csv", "diagnostics.csv", "loss.svg", "final.vck", "checkpoints/step-000020.vck"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 1);
    assert_eq!(manifest["config"]["steps"], 40);
    let loss = fs::read_to_string(out.join("loss.csv")).unwrap();
    assert_eq!(loss.lines().next().unwrap(), "step,lr,L_pred,L_reg,L_total,mean_abs_s,wall_ms");
    assert_eq!(loss.lines().count(), 41);

    // finished run: no-op
    let o = voco(&["pretrain", "--config", s(&cfg), "--out", s(&out), "--resume", s(&out.join("final.vck"))]);
    assert!(o.status.success());
    assert!(stderr(&o).contains("already complete"), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(out.join("loss.csv")).unwrap(), loss);
    assert!(out.join("run-resume-1.json").exists());

    // interrupted run: same log as uninterrupted
    let resumed = dir.path().join("resumed");
    let o = voco(&["pretrain", "--config", s(&cfg), "--out", s(&resumed), "--resume", s(&out.join("checkpoints/step-000020.vck"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(resumed.join("loss.csv")).unwrap(), loss);

    // mismatched config
    let other = dir.path().join("other.toml");
    fs::write(&other, fs::read_to_string(&cfg).unwrap().replace("lambda = 1.0", "lambda = 0.5")).unwrap();
    let o = voco(&["pretrain", "--config", s(&other), "--out", s(&dir.path().join("x")), "--resume", s(&out.join("checkpoints/step-000020.vck"))]);
    assert_eq!(o.status.code(), Some(2));

    // probe on held-out phantoms
    let probe = dir.path().join("probe");
    let o = voco(&["probe", "--ckpt", s(&out.join("final.vck")), "--out", s(&probe)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("top1="));
    for f in ["probe.json", "probe_per_class.csv", "probe.svg"] {
        assert!(probe.join(f).exists(), "{f}");
    }

    // probe on a generated directory disjoint from the pretraining seeds
    let data = dir.path().join("data");
    let o = voco(&["gen-data", "--spec", s(&repo_file("configs/phantom.toml")), "--count", "3", "--out", s(&data), "--shape", "32,32,8", "--first-seed", "500"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = voco(&["probe", "--ckpt", s(&out.join("final.vck")), "--data", s(&data), "--out", s(&probe)]);
    assert!(o.status.success(), "{}", stderr(&o));

    // a directory holding pretraining volumes is refused
    let leak = dir.path().join("leak");
    let o = voco(&["gen-data", "--spec", s(&repo_file("configs/phantom.toml")), "--count", "3", "--out", s(&leak), "--shape", "32,32,8"]);
    assert!(o.status.success());
    let o = voco(&["probe", "--ckpt", s(&out.join("final.vck")), "--data", s(&leak), "--out", s(&probe)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("phantom-0-0"), "{}", stderr(&o));
}

#[test]
fn probe_without_checkpoint_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = voco(&["probe", "--ckpt", s(&dir.path().join("none.vck")), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("not found"));
}

#[test]
fn ablate_loss_axis_writes_two_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, fs::read_to_string(repo_file("configs/smoke.toml")).unwrap().replace("steps = 40", "steps = 10")).unwrap();
    let o = voco(&["ablate", "--axis", "loss", "--config", s(&cfg), "--out", s(dir.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("ablation_loss_terms.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("loss_terms,L_pred,2x2x1,0,10,"));
    assert!(lines[2].starts_with("loss_terms,L_pred+L_reg,2x2x1,1,10,"));
    assert!(dir.path().join("ablation_loss_terms.svg").exists());
    assert_eq!(stdout(&o), csv);
}

#[test]
fn ablate_rejects_unknown_axis() {
    let dir = tempfile::tempdir().unwrap();
    let o = voco(&["ablate", "--axis", "depth", "--config", s(&repo_file("configs/smoke.toml")), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn inspect_cell_sized_aligned_crop_is_one_class() {
    let o = voco(&["inspect-labels", "--grid", "4,4,1", "--crop-size", "24,24,16", "--origin", "48,24,0"]);
    assert!(o.status.success());
    let out = stdout(&o);
    let rows: Vec<&str> = out.lines().skip_while(|l| *l != "class,proportion").skip(1).collect();
    assert_eq!(rows, vec!["7,1"]);
}

#[test]
fn inspect_sampled_crop_sums_to_one() {
    let o = voco(&["inspect-labels", "--grid", "3,3,1", "--crop-size", "20,30,16", "--seed", "4"]);
    assert!(o.status.success());
    let out = stdout(&o);
    let total: f64 = out
        .lines()
        .skip_while(|l| *l != "class,proportion")
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap())
        .sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn inspect_rejects_bad_geometry() {
    let o = voco(&["inspect-labels", "--grid", "5,4,1", "--crop-size", "8,8,8"]);
    assert_eq!(o.status.code(), Some(2));
    let o = voco(&["inspect-labels", "--grid", "4,4,1", "--crop-size", "24,24,16", "--origin", "80,0,0"]);
    assert_eq!(o.status.code(), Some(2));
    let o = voco(&["inspect-labels", "--grid", "4,4", "--crop-size", "8,8,8"]);
    assert_eq!(o.status.code(), Some(2));
}
