use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn lmdet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lmdet")).args(args).output().expect("spawn lmdet")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/published").join(name)
}

fn synth(dir: &Path, extra: &[&str]) -> String {
    let mut args = vec!["synth", "--seed", "7", "--n", "10", "--hw", "32x32", "--landmarks", "3", "--out"];
    let d = dir.to_str().unwrap();
    args.push(d);
    args.extend_from_slice(extra);
    let o = lmdet(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    stdout(&o).trim().to_string()
}

fn write_config(root: &Path, epochs: usize, folds: usize) -> PathBuf {
    let text = format!(
        r#"folds = {folds}
[paths]
data_dir = "data"
output_dir = "runs"
[model]
arch = "unet"
input_hw = [32, 32]
out_channels = 3
base_channels = 4
depth = 2
[train]
epochs = {epochs}
sigma = 2.0
[train.adam]
alpha = 0.003
[eval]
spacing = [0.1, 0.1]
"#
    );
    let p = root.join("run.toml");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn synth_is_deterministic_and_loadable() {
    let t = tempfile::tempdir().unwrap();
    let a = synth(&t.path().join("a"), &[]);
    let b = synth(&t.path().join("b"), &[]);
    assert_eq!(a, b);
    assert_eq!(a.len(), 64);
    let csv = fs::read(t.path().join("a/annotations.csv")).unwrap();
    let anns = lmdet::data::read_annotations(&csv[..]).unwrap();
    assert_eq!(anns.len(), 10);
    let ds = lmdet::data::Dataset::load(&t.path().join("a"), (32, 32), None).unwrap();
    assert_eq!(ds.len(), 10);
}

#[test]
fn synth_with_no_images_writes_header_only() {
    let t = tempfile::tempdir().unwrap();
    let o = lmdet(&["synth", "--n", "0", "--out", t.path().to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(
        fs::read_to_string(t.path().join("annotations.csv")).unwrap(),
        "image_id,annotator_id,landmark,x,y,orig_w,orig_h\n"
    );
}

#[test]
fn train_eval_round_trip() {
    let t = tempfile::tempdir().unwrap();
    synth(&t.path().join("data"), &["--annotators", "3"]);
    let cfg = write_config(t.path(), 2, 5);
    let c = cfg.to_str().unwrap();

    for arch in ["unet", "fcn"] {
        let o = lmdet(&["train", "--config", c, "--arch", arch]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let run = t.path().join("runs/unet");
    for i in 1..=5 {
        assert!(run.join(format!("fold{i}/best.lmdw")).is_file());
        assert!(run.join(format!("fold{i}/history.csv")).is_file());
    }
    let manifest = |arch: &str| -> serde_json::Value {
        serde_json::from_str(&fs::read_to_string(t.path().join(format!("runs/{arch}/manifest.json"))).unwrap()).unwrap()
    };
    let (mu, mf) = (manifest("unet"), manifest("fcn"));
    assert!(mu["param_count"].as_u64().unwrap() > mf["param_count"].as_u64().unwrap());
    assert_eq!(mu["seeds"], serde_json::json!([0, 1, 2, 3, 4]));
    let lines: Vec<_> = fs::read_to_string(run.join("manifest.json"))
        .unwrap()
        .lines()
        .filter(|l| l.contains("timestamp"))
        .map(str::to_string)
        .collect();
    assert_eq!(lines.len(), 1);

    let o = lmdet(&["eval", "--config", c]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let rows: Vec<_> = out.lines().skip(1).filter(|l| !l.starts_with("OVERALL")).collect();
    assert_eq!(rows.len(), 3, "{out}");
    assert_eq!(fs::read_to_string(run.join("report.csv")).unwrap(), out);
    // three annotators on disk: Table I shaped comparison
    let cmp = fs::read_to_string(run.join("comparison.csv")).unwrap();
    assert!(cmp.starts_with("landmark,fcn,unet,three_doctors,mean\n"), "{cmp}");

    let o = lmdet(&["eval", "--config", c, "--oracle"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for line in stdout(&o).lines().skip(1) {
        assert!(line.split(',').skip(1).all(|v| v == "0.00"), "{line}");
    }

    let o = lmdet(&["report", "--input", run.join("report.json").to_str().unwrap(), "--format", "csv"]);
    assert_eq!(stdout(&o), out);

    fs::remove_file(run.join("fold3/best.lmdw")).unwrap();
    let o = lmdet(&["eval", "--config", c]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error: fold 3: missing checkpoint"), "{}", stderr(&o));
}

#[test]
fn invalid_configs_exit_with_one() {
    let t = tempfile::tempdir().unwrap();
    synth(&t.path().join("data"), &[]);
    let cfg = write_config(t.path(), 1, 3);
    let o = lmdet(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error:"));

    let text = fs::read_to_string(&cfg).unwrap().replace("folds = 3", "folds = 5").replace("sigma", "sigmaa");
    fs::write(&cfg, text).unwrap();
    let o = lmdet(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("sigmaa"), "{}", stderr(&o));

    let o = lmdet(&["train", "--config", "/nonexistent/run.toml"]);
    assert_eq!(o.status.code(), Some(1));
    let o = lmdet(&["train"]);
    assert_eq!(o.status.code(), Some(1));
    let o = lmdet(&["--version"]);
    assert_eq!(o.status.code(), Some(0));
}

fn write_observer(path: &Path, annotator: &str, xs: [f64; 2]) {
    let mut s = String::from("image_id,annotator_id,landmark,x,y,orig_w,orig_h\n");
    for (img, x) in ["a", "b"].iter().zip(xs) {
        s += &format!("{img},{annotator},A,{x},10,100,100\n{img},{annotator},Ar,20,{x},100,100\n");
    }
    fs::write(path, s).unwrap();
}

#[test]
fn observer_comparison() {
    let t = tempfile::tempdir().unwrap();
    let p = |n: &str| t.path().join(n);
    // d1 and d2 agree, d3 sits 50 px away: pairs 0, 5, 5 cm
    write_observer(&p("d1.csv"), "d1", [10.0, 30.0]);
    write_observer(&p("d2.csv"), "d2", [10.0, 30.0]);
    write_observer(&p("d3.csv"), "d3", [60.0, 80.0]);
    let s = |n: &str| p(n).to_str().unwrap().to_string();
    let run = |files: [String; 3]| {
        let o = lmdet(&[
            "compare-observers",
            "--annotations",
            &files[0],
            &files[1],
            &files[2],
            "--spacing",
            "0.1",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        stdout(&o)
    };
    let a = run([s("d1.csv"), s("d2.csv"), s("d3.csv")]);
    let b = run([s("d3.csv"), s("d1.csv"), s("d2.csv")]);
    assert_eq!(a, b);
    assert!(a.contains("\nA,3.33,3.33\n"), "{a}");

    write_observer(&p("d3.csv"), "d3", [10.0, 30.0]);
    let z = run([s("d1.csv"), s("d2.csv"), s("d3.csv")]);
    assert!(z.lines().skip(1).all(|l| l.ends_with(",0.00,0.00")), "{z}");

    let o = lmdet(&["compare-observers", "--annotations", &s("d1.csv"), "--spacing", "0.1"]);
    assert_eq!(o.status.code(), Some(1));
    let o = lmdet(&["compare-observers", "--annotations", &s("d1.csv"), &s("d2.csv"), &s("d3.csv"), "--spacing", "-1"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn fixture_mode_reports_printed_means() {
    let o = lmdet(&["eval", "--from-fixture", fixture("table4.csv").to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.starts_with("landmark,split1,split2,split3,split4,split5,mean\n"));
    assert!(out.contains("\nA,2.14,2.71,1.98,1.86,2.63,2.26\n"));
    assert!(out.contains("overall mean 2.4991"), "{out}");

    let o = lmdet(&["eval", "--from-fixture", fixture("table1.csv").to_str().unwrap()]);
    let out = stdout(&o);
    assert!(out.contains("cnn: printed 2.50 recomputed 2.4989 ok"), "{out}");
    assert!(out.contains("unet: printed 2.11 recomputed 2.1056 ok"), "{out}");
}

#[test]
fn gradcheck_passes_and_catches_a_sign_flip() {
    let o = lmdet(&["gradcheck"]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("fcn:") && out.contains("unet:"));
    assert_eq!(out.matches("PASS").count(), 2);

    let o = lmdet(&["gradcheck", "--inject-fault", "sign-flip"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error: gradient check failed"));
}
