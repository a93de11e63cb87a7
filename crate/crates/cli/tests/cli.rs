use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use vgembed::corpus::{load_embeddings, EmbeddingTable};
use vgembed::model::{save_checkpoint, GroundedModel};
use vgembed::synthetic::{planted_corpus, PlantedConfig};

fn vgembed(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vgembed"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Planted corpus files plus a small word-similarity file.
fn corpus(dir: &Path) {
    let cfg = PlantedConfig {
        images: 40,
        val_images: 8,
        test_images: 4,
        ..Default::default()
    };
    planted_corpus(&cfg).unwrap().write_files(dir).unwrap();
    fs::write(
        dir.join("sim.txt"),
        "dog\tpuppy\t9\ncar\ttruck\t8\ndog\tcar\t2\ncake\tboat\t1\npizza\tsalad\t7\nlake\tship\t6\nred\tfluffy\t3\n",
    )
    .unwrap();
    fs::write(
        dir.join("sim2.txt"),
        "dog\tcat\t8\nbus\tplate\t1\nkayak\tboat\t9\n",
    )
    .unwrap();
}

fn train_args<'a>(dir: &'a Path, out: &'a Path) -> Vec<String> {
    [
        "train",
        "--embeddings",
        s(&dir.join("embeddings.txt")),
        "--train-captions",
        s(&dir.join("train.jsonl")),
        "--val-captions",
        s(&dir.join("val.jsonl")),
        "--features",
        s(&dir.join("features.txt")),
        "--out-dir",
        s(out),
        "--grounded-dim",
        "12",
        "--batch-size",
        "32",
        "--lr",
        "0.005",
        "--epochs",
        "2",
        "--seed",
        "3",
    ]
    .iter()
    .map(|x| x.to_string())
    .collect()
}

fn run_owned(args: &[String]) -> Output {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    vgembed(&refs)
}

#[test]
fn train_writes_checkpoint_log_and_config_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    let out1 = dir.path().join("run1");
    let o = run_owned(&train_args(dir.path(), &out1));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("best epoch"));
    let log = fs::read_to_string(out1.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert!(first["L_FW"].is_number() && first["L_B"].is_number() && first["R"].is_number());

    // replaying the resolved config reproduces the checkpoint bit for bit
    let out2 = dir.path().join("run2");
    let o = vgembed(&[
        "train",
        "--config",
        s(&out1.join("resolved_config.json")),
        "--out-dir",
        s(&out2),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        fs::read(out1.join("model.ckpt")).unwrap(),
        fs::read(out2.join("model.ckpt")).unwrap()
    );

    // a different seed gives a different model
    let out3 = dir.path().join("run3");
    let mut args = train_args(dir.path(), &out3);
    *args.last_mut().unwrap() = "4".into();
    assert_eq!(code(&run_owned(&args)), 0);
    assert_ne!(
        fs::read(out1.join("model.ckpt")).unwrap(),
        fs::read(out3.join("model.ckpt")).unwrap()
    );

    // the checkpoint grounds the whole table, and the export feeds the evaluators
    let grounded = dir.path().join("g/grounded.txt");
    let o = vgembed(&[
        "ground",
        "--checkpoint",
        s(&out1.join("model.ckpt")),
        "--embeddings",
        s(&dir.path().join("embeddings.txt")),
        "--output",
        s(&grounded),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let g = load_embeddings(&grounded, None).unwrap();
    assert_eq!((g.len(), g.dim()), (60, 12));

    let o = vgembed(&[
        "eval-intrinsic",
        s(&dir.path().join("sim.txt")),
        "--embeddings",
        s(&grounded),
        "--format",
        "json",
    ]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["reports"][0]["pairs_used"], 7);

    let o = vgembed(&["neighbors", "dog", "-k", "3", "--embeddings", s(&grounded)]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).starts_with("dog: "));
    assert_eq!(stdout(&o).matches('(').count(), 3);
}

#[test]
fn loss_mask_restricts_the_logged_terms() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    let out = dir.path().join("fw");
    let mut args = train_args(dir.path(), &out);
    args.extend(["--loss-mask".into(), "fw".into()]);
    let o = run_owned(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let log = fs::read_to_string(out.join("train_log.jsonl")).unwrap();
    let v: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert!(v["L_FW"].is_number());
    assert!(v["L_BW"].is_null() && v["L_B"].is_null());
    let resolved: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("resolved_config.json")).unwrap())
            .unwrap();
    assert_eq!(resolved["loss_mask"]["bw"], false);
}

#[test]
fn missing_captions_fail_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    let out = dir.path().join("out");
    let mut args = train_args(dir.path(), &out);
    let i = args.iter().position(|a| a == "--train-captions").unwrap();
    args[i + 1] = s(&dir.path().join("nope.jsonl")).into();
    let o = run_owned(&args);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("train_captions"));
    assert!(!out.exists());
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"learning_rate": 0.1}"#).unwrap();
    assert_eq!(code(&vgembed(&["gradcheck", "--config", s(&cfg)])), 2);

    let mut args = train_args(dir.path(), &dir.path().join("o"));
    args.extend(["--beta".into(), "1.5".into()]);
    assert_eq!(code(&run_owned(&args)), 2);

    let mut args = train_args(dir.path(), &dir.path().join("o"));
    args.extend(["--loss-mask".into(), "lm".into()]);
    assert_eq!(code(&run_owned(&args)), 2);

    assert_eq!(
        code(&vgembed(&[
            "eval-intrinsic",
            "--embeddings",
            s(&dir.path().join("embeddings.txt"))
        ])),
        2
    );
    assert_eq!(code(&vgembed(&["frobnicate"])), 2);
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    let cfg = dir.path().join("c.json");
    fs::write(
        &cfg,
        r#"{"embeddings": "embeddings.txt", "k": 2, "format": "json"}"#,
    )
    .unwrap();
    let o = vgembed(&["neighbors", "car", "--config", s(&cfg)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v[0]["neighbors"].as_array().unwrap().len(), 2);
    let o = vgembed(&[
        "neighbors",
        "car",
        "--config",
        s(&cfg),
        "-k",
        "4",
        "--format",
        "table",
    ]);
    assert_eq!(stdout(&o).matches('(').count(), 4);
}

#[test]
fn data_errors_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    let bad = dir.path().join("bad.txt");
    fs::write(&bad, "dog 0.1 0.2\ncat 0.3 oops\n").unwrap();
    let o = vgembed(&["neighbors", "dog", "--embeddings", s(&bad)]);
    assert_eq!(code(&o), 3);
    // unknown query word
    let o = vgembed(&[
        "neighbors",
        "zebra",
        "--embeddings",
        s(&dir.path().join("embeddings.txt")),
    ]);
    assert_eq!(code(&o), 3);
}

fn identity_checkpoint(dir: &Path, d: usize) -> PathBuf {
    let emb = EmbeddingTable::from_pairs(vec![
        ("x".to_string(), vec![1.0; d]),
        ("y".to_string(), vec![0.5; d]),
    ])
    .unwrap();
    let mut model = GroundedModel::<f32>::new(&emb, d, 3, 4, 0).unwrap();
    let m = model.store.value_mut(model.mapping);
    m.data_mut().fill(0.0);
    for i in 0..d {
        m.row_mut(i)[i] = 1.0;
    }
    let p = dir.join("identity.ckpt");
    save_checkpoint(&model, None, &p).unwrap();
    p
}

#[test]
fn identity_mapping_round_trips_and_width_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    let src = dir.path().join("embeddings.txt");
    let ckpt = identity_checkpoint(dir.path(), 16);
    let out = dir.path().join("same.txt");
    let o = vgembed(&[
        "ground",
        "--checkpoint",
        s(&ckpt),
        "--embeddings",
        s(&src),
        "--output",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (a, b) = (
        load_embeddings(&src, None).unwrap(),
        load_embeddings(&out, None).unwrap(),
    );
    assert_eq!(a.vocab(), b.vocab());
    for (x, y) in a.vectors().iter().zip(b.vectors()) {
        assert!((x - y).abs() <= 1e-5 * x.abs().max(1e-3), "{x} vs {y}");
    }

    let narrow = identity_checkpoint(dir.path(), 8);
    let o = vgembed(&[
        "ground",
        "--checkpoint",
        s(&narrow),
        "--embeddings",
        s(&src),
        "--output",
        s(&out),
    ]);
    assert_eq!(code(&o), 3);
}

#[test]
fn concat_endpoints_reduce_to_single_tables_and_mean_is_arithmetic() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    let emb = dir.path().join("embeddings.txt");
    let other = dir.path().join("other.txt");
    // a second table over the same words with a different geometry
    let t = load_embeddings(&emb, None).unwrap();
    let rows: Vec<(String, Vec<f32>)> = t
        .iter()
        .map(|(w, v)| {
            (
                w.to_string(),
                v.iter().rev().map(|x| x * 2.0 + 0.1).collect(),
            )
        })
        .collect();
    let text: String = rows
        .iter()
        .map(|(w, v)| {
            format!(
                "{w} {}\n",
                v.iter()
                    .map(|x| x.to_string())
                    .collect::<Vec<_>>()
                    .join(" ")
            )
        })
        .collect();
    fs::write(&other, text).unwrap();

    let score = |args: &[&str]| -> serde_json::Value {
        let mut full = vec!["eval-intrinsic", "--format", "json"];
        full.extend_from_slice(args);
        let o = vgembed(&full);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        serde_json::from_str(&stdout(&o)).unwrap()
    };
    let sim = dir.path().join("sim.txt");
    let sim2 = dir.path().join("sim2.txt");
    let g = score(&[s(&sim), s(&sim2), "--embeddings", s(&emb)]);
    let v = score(&[s(&sim), s(&sim2), "--embeddings", s(&other)]);
    let c0 = score(&[s(&sim), s(&sim2), "--concat", s(&emb), s(&other), "0"]);
    let c1 = score(&[s(&sim), s(&sim2), "--concat", s(&emb), s(&other), "1"]);
    for i in 0..2 {
        let f = |x: &serde_json::Value| x["reports"][i]["score"].as_f64().unwrap();
        assert!((f(&c0) - f(&g)).abs() < 1e-9);
        assert!((f(&c1) - f(&v)).abs() < 1e-9);
    }
    let mean = (g["reports"][0]["score"].as_f64().unwrap()
        + g["reports"][1]["score"].as_f64().unwrap())
        / 2.0;
    assert!((g["mean"].as_f64().unwrap() - mean).abs() < 1e-12);
}

#[test]
fn sts_reports_pearson() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    let sts = dir.path().join("sts.tsv");
    fs::write(
        &sts,
        "4.5\ta dog runs\tthe puppy runs\n0.5\ta red car\tthe tasty cake\n3.0\ta boat floats\tthe ship sails\n1.0\tthe bus\ta plate\n",
    )
    .unwrap();
    let o = vgembed(&[
        "eval-sts",
        s(&sts),
        "--embeddings",
        s(&dir.path().join("embeddings.txt")),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("4/4 pairs"));
}

#[test]
fn gradcheck_passes_clean_and_catches_corruption() {
    let o = vgembed(&["gradcheck", "--format", "json"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["max_rel_error"].as_f64().unwrap() < 1e-6);

    let o = vgembed(&["gradcheck", "--corrupt-grad"]);
    assert_eq!(code(&o), 4);
    assert!(stdout(&o).contains("FAIL"));

    // doubling every gradient gives a relative error of exactly 1/2
    let o = vgembed(&["gradcheck", "--corrupt-grad", "--threshold", "0.6"]);
    assert_eq!(code(&o), 0);
    let o = vgembed(&["gradcheck", "--corrupt-grad", "--threshold", "0.4"]);
    assert_eq!(code(&o), 4);
}
