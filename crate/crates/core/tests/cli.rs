use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn recseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_recseg")).args(args).output().unwrap()
}

fn small_config(dir: &Path, method: &str) -> String {
    let path = dir.join("exp.cfg");
    fs::write(
        &path,
        format!(
            "method = {method}\nsigma = 0.05\noutput = {}\nphantom.kind = two_region\nphantom.n1 = 16\nphantom.n2 = 16\nphantom.radius = 0.3\nmask.kind = uniform_random\nmask.rate = 0.5\nsolver.alpha = 0.05\nsolver.beta = 0.01\nsolver.max_outer = 3\nsweep.param = alpha\nsweep.values = 0.05, 0.1\n",
            dir.join("out").display()
        ),
    )
    .unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn run_writes_results_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "joint");
    let out = recseg(&["run", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let results = fs::read_to_string(dir.path().join("out/results.csv")).unwrap();
    assert_eq!(results.lines().count(), 3);
    assert!(results.starts_with("method,alpha,beta,delta,rate,sigma,rre"));

    let manifest = dir.path().join("out/manifest.cfg");
    let again = dir.path().join("again");
    let out = recseg(&["run", manifest.to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert!(out.status.success());
    for name in ["results.csv", "run_000/recon.f64", "run_001/relaxation.f64", "run_001/kspace.ksp"] {
        assert_eq!(
            fs::read(dir.path().join("out").join(name)).unwrap(),
            fs::read(again.join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn metrics_scores_run_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "tv_seq");
    assert!(recseg(&["run", &cfg]).status.success());
    let o = dir.path().join("out");
    let path = |n: &str| o.join(n).to_string_lossy().into_owned();
    let out = recseg(&[
        "metrics",
        &path("run_000/recon.pgm"),
        &path("ground_truth.pgm"),
        &path("run_000/segmentation.pgm"),
        &path("ground_truth_labels.pgm"),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("rre,psnr_unsquared,psnr_standard,rse"));
    let values: Vec<f64> = lines.next().unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    let csv = fs::read_to_string(o.join("results.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(values[0], row[6].parse::<f64>().unwrap());
    assert_eq!(values[3], row[9].parse::<f64>().unwrap());
}

#[test]
fn phantom_renders_images() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("p.cfg");
    fs::write(&spec, "phantom.kind = shepp_logan_like\nphantom.n1 = 24\nphantom.n2 = 20\n").unwrap();
    let base = dir.path().join("ph");
    let out = recseg(&["phantom", spec.to_str().unwrap(), base.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let pgm = fs::read(dir.path().join("ph.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5"));
    assert!(dir.path().join("ph.f64").exists());
    assert_eq!(fs::metadata(dir.path().join("ph.f64")).unwrap().len(), 24 * 20 * 8);
    assert!(dir.path().join("ph_labels.pgm").exists());
}

#[test]
fn bad_inputs_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = recseg(&["run", dir.path().join("nope.cfg").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(1));

    let bad = dir.path().join("bad.cfg");
    fs::write(&bad, "method = fancy\n").unwrap();
    let out = recseg(&["run", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    fs::write(&bad, "method = joint\nsolver.alpha = 1\nsolver.alpha = 2\n").unwrap();
    let out = recseg(&["run", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));

    assert_eq!(recseg(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(recseg(&["--help"]).status.code(), Some(0));
}
