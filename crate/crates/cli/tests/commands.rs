use std::path::Path;
use std::process::{Command, Output};

fn graphmark(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_graphmark")).current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = graphmark(dir, args);
    assert_eq!(out.status.code(), Some(0), "{args:?}\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

const CONFIG: &str = r#"
[data]
num_nodes = 300
num_classes = 3
intra_p = 0.05
inter_p = 0.01
feature_dim = 8
feature_shift = 3.0

[model]
hidden = 16
num_layers = 3

[train]
epochs = 150
learning_rate = 0.01

[watermark]
n_w = 32

[embed]
learning_rate = 0.001
"#;

#[test]
fn collision_prints_alpha() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["collision", "--nw", "200", "--tau", "0.75"]);
    assert_eq!(out.trim(), "alpha = 7.687e-13");
    let out = ok(dir.path(), &["collision", "--nw", "200", "--alpha", "7.687e-13"]);
    assert!(out.starts_with("tau = 0.75"), "{out}");
}

#[test]
fn usage_errors_exit_2_and_name_the_flag() {
    let dir = tempfile::tempdir().unwrap();
    let out = graphmark(dir.path(), &["collision", "--nw", "200"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--tau"));
    assert_eq!(graphmark(dir.path(), &["embed", "--setting", "4"]).status.code(), Some(2));
    std::fs::write(dir.path().join("bad.toml"), "[train]\nlr = 1\n").unwrap();
    let out = graphmark(dir.path(), &["--config", "bad.toml", "collision", "--nw", "20", "--tau", "0.7"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("--config") && err.contains("lr"), "{err}");
}

#[test]
fn pipeline_errors_exit_3_with_module_message() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("g.json"), r#"{"num_nodes":2,"feature_dim":1,"features":[1],"edges":[]}"#).unwrap();
    let out = graphmark(dir.path(), &["train", "--train", "g.json", "--out", "m.json"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`features`"));
}

fn with<'a>(args: &[&'a str]) -> Vec<&'a str> {
    [&["--config", "run.toml"][..], args].concat()
}

#[test]
fn scripted_population_reaches_full_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("run.toml"), CONFIG).unwrap();

    ok(d, &with(&["gen-data", "--out", "data"]));
    ok(d, &with(&["train", "--train", "data/train.json", "--out", "m_o.json"]));
    ok(d, &with(&["make-key", "--setting", "1", "--model", "m_o.json", "--trigger", "data/train.json", "--out", "key.json"]));
    for i in 0..10 {
        let (id, seed) = (format!("dist-{i}"), format!("{}", 100 + i));
        ok(d, &with(&["gen-wm", "--registry", "reg.json", "--id", &id, "--seed", &seed]));
        ok(d, &with(&[
            "embed", "--setting", "1", "--model", "m_o.json", "--train", "data/train.json", "--key", "key.json",
            "--registry", "reg.json", "--id", &id, "--out", &format!("wm-{i}.json"),
        ]));
        ok(d, &with(&["train", "--train", "data/train.json", "--seed", &seed, "--out", &format!("indep-{i}.json")]));
    }
    let verify = |model: &str| {
        graphmark(d, &with(&[
            "verify", "--provider", "file", "--model", model, "--trigger", "data/train.json", "--key", "key.json",
            "--registry", "reg.json",
        ]))
    };
    for i in 0..10 {
        let out = verify(&format!("wm-{i}.json"));
        assert_eq!(out.status.code(), Some(0));
        let text = String::from_utf8(out.stdout).unwrap();
        assert!(text.starts_with(&format!("decision: COPY of distribution `dist-{i}`")), "{text}");
        assert_eq!(verify(&format!("indep-{i}.json")).status.code(), Some(1), "indep-{i}");
    }
}
