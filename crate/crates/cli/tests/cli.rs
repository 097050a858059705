use std::path::Path;
use std::process::{Command, Output};

fn shenet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shenet"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn shenet")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn k_larger_than_training_set_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = shenet(dir.path(), &["cluster", "-s", "data.per_group=2", "-s", "bank.k=50"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("k = 50"));
}

#[test]
fn unknown_override_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&shenet(dir.path(), &["train", "-s", "train.epochz=3"])), 2);
    assert_eq!(code(&shenet(dir.path(), &["train", "-s", "no_equals_sign"])), 2);
}

#[test]
fn missing_data_file_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = shenet(dir.path(), &["cluster", "-s", "data.source=file", "-s", "data.path=absent.txt"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn malformed_config_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "[bank]\nk = \"many\"\n").unwrap();
    assert_eq!(code(&shenet(dir.path(), &["cluster", "--config", "bad.toml"])), 2);
}

#[test]
fn help_lists_every_config_key() {
    let dir = tempfile::tempdir().unwrap();
    let keys = [
        "data.t_pas", "data.noise_sigma", "bank.k", "bank.theta", "bank.beta", "model.d_model", "model.n_heads",
        "train.epochs", "train.loss", "eval.top_k", "eval.control",
    ];
    for verb in ["cluster", "train", "predict", "evaluate", "bench-search", "synth", "report", "run"] {
        let o = shenet(dir.path(), &[verb, "--help"]);
        assert_eq!(code(&o), 0, "{verb}");
        let text = stdout(&o);
        for k in keys {
            assert!(text.contains(k), "{verb} --help lacks {k}");
        }
    }
}

#[test]
fn cluster_zero_noise_groups() {
    let dir = tempfile::tempdir().unwrap();
    let o = shenet(
        dir.path(),
        &["cluster", "-s", "data.per_group=4", "-s", "data.noise_sigma=0.0", "-s", "bank.k=3", "-s", "eval.output_dir=out"],
    );
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("K=3 entries=3"));
    let csv = std::fs::read_to_string(dir.path().join("out/clusters.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.ends_with(",0")));
    assert!(dir.path().join("out/bank.json").exists());
}

#[test]
fn run_then_report_renders_svg() {
    let dir = tempfile::tempdir().unwrap();
    let base = ["-s", "data.per_group=6", "-s", "bank.k=6", "-s", "bank.theta=0.5", "-s", "train.epochs=1", "-s", "eval.output_dir=out"];
    let mut args = vec!["run"];
    args.extend(base);
    assert_eq!(code(&shenet(dir.path(), &args)), 0);
    for f in ["bank.json", "checkpoint.json", "loss_curve.csv", "eval.csv", "eval.json", "report.svg"] {
        assert!(dir.path().join("out").join(f).exists(), "{f}");
    }

    let o = shenet(dir.path(), &["report", "out/eval.csv", "one.svg", "--samples", "1"]);
    assert_eq!(code(&o), 0);
    let svg = std::fs::read_to_string(dir.path().join("one.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    assert_eq!(svg.matches("<polyline").count(), 3);
    for color in ["#1f4fd1", "#d62728", "#2ca02c"] {
        assert!(svg.contains(color));
    }
    assert_eq!(code(&shenet(dir.path(), &["report", "out/eval.csv", "two.svg", "--samples", "1"])), 0);
    assert_eq!(svg, std::fs::read_to_string(dir.path().join("two.svg")).unwrap());

    let o = shenet(dir.path(), &["report", "out/eval.csv", "none.svg", "--samples", "0"]);
    assert_eq!(code(&o), 0);
    let empty = std::fs::read_to_string(dir.path().join("none.svg")).unwrap();
    assert_eq!(empty.matches("<polyline").count(), 0);
    assert!(empty.contains(r#"class="axis""#));

    let mut args = vec!["evaluate"];
    args.extend(base);
    let o = shenet(dir.path(), &args);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("ADE="));
}

#[test]
fn report_rejects_malformed_csv() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.csv"), "index,person_id,ade\n0,1,zero\n").unwrap();
    assert_eq!(code(&shenet(dir.path(), &["report", "bad.csv", "x.svg"])), 3);
}

#[test]
fn evaluate_without_trained_model_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&shenet(dir.path(), &["evaluate", "-s", "data.per_group=4", "-s", "eval.output_dir=empty"])), 3);
}

#[test]
fn bench_search_prints_csv_and_fit() {
    let dir = tempfile::tempdir().unwrap();
    let o = shenet(dir.path(), &["bench-search", "--sizes", "50,100", "--queries", "20", "--reps", "1"]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    assert!(out.starts_with("operation,size,mean_ns\n"));
    assert_eq!(out.lines().filter(|l| l.starts_with("search,") || l.starts_with("update,")).count(), 4);
    assert!(out.contains("R²"));
}

#[test]
fn synth_writes_reloadable_data() {
    let dir = tempfile::tempdir().unwrap();
    let o = shenet(dir.path(), &["synth", "-s", "data.per_group=3", "-s", "eval.output_dir=s"]);
    assert_eq!(code(&o), 0);
    let o = shenet(
        dir.path(),
        &["cluster", "-s", "data.source=file", "-s", "data.path=s/synthetic.txt", "-s", "data.scene_path=s/scene.json", "-s", "bank.k=3", "-s", "eval.output_dir=c"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}
