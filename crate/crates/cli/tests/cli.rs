use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use somoformer::scene::{load_dataset, load_scene, save_scene, somof_skeleton, Person, Scene};

fn run(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_somoformer"));
    cmd.args(args).env_remove("SOMOFORMER_SEED");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args, &[]);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn dir_bytes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| (PathBuf::from(p.file_name().unwrap()), fs::read(&p).unwrap()))
        .collect()
}

fn sources(dir: &Path, joints: Option<&str>) -> PathBuf {
    let out = dir.join("sources");
    let mut args = vec![
        "synth-sources",
        "--num",
        "8",
        "--frames",
        "60",
        "--seed",
        "11",
        "--out",
        s(&out),
    ];
    if let Some(j) = joints {
        args.extend(["--joints", j]);
    }
    ok(&args);
    out
}

fn static_scene(persons: usize, frames: usize) -> Scene {
    let ps = (0..persons)
        .map(|p| {
            let pts = (0..frames * 13)
                .map(|k| [p as f64, (k % 13) as f64 * 0.1, 1.0])
                .collect();
            Person::new(format!("p{p}"), pts)
        })
        .collect();
    Scene::new(15.0, somof_skeleton(), frames, ps).unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn log_lines(p: &Path) -> Vec<Value> {
    fs::read_to_string(p)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn synth_data_single_person_and_three_person_shapes() {
    let tmp = tempfile::tempdir().unwrap();
    let src = sources(tmp.path(), None);
    let one = tmp.path().join("one");
    ok(&[
        "synth-data",
        "--sources",
        s(&src),
        "--num-persons",
        "1",
        "--windows",
        "1",
        "--out",
        s(&one),
    ]);
    let scenes = load_dataset(&one).unwrap();
    assert_eq!(scenes.len(), 1);
    assert_eq!(scenes[0].num_persons(), 1);

    let three = tmp.path().join("three");
    ok(&[
        "synth-data",
        "--sources",
        s(&src),
        "--num-persons",
        "3",
        "--windows",
        "5",
        "--t",
        "15",
        "--T",
        "45",
        "--out",
        s(&three),
    ]);
    let scenes = load_dataset(&three).unwrap();
    assert_eq!(scenes.len(), 5);
    assert!(scenes
        .iter()
        .all(|sc| sc.num_persons() == 3 && sc.frames() == 60 && sc.joints() == 13));
    let manifest = read_json(&three.join("manifest.json"));
    assert_eq!(manifest["seed"], 0);
    assert_eq!(manifest["sources"].as_array().unwrap().len(), 8);
}

#[test]
fn synth_data_is_byte_identical_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let src = sources(tmp.path(), None);
    let gen = |name: &str, seed: &str| {
        let out = tmp.path().join(name);
        ok(&[
            "synth-data",
            "--sources",
            s(&src),
            "--windows",
            "4",
            "--seed",
            seed,
            "--out",
            s(&out),
        ]);
        dir_bytes(&out)
    };
    let a = gen("a", "5");
    assert_eq!(a, gen("b", "5"));
    assert_ne!(a, gen("c", "6"));
    let src2 = tmp.path().join("sources2");
    ok(&[
        "synth-sources",
        "--num",
        "8",
        "--frames",
        "60",
        "--seed",
        "11",
        "--out",
        s(&src2),
    ]);
    assert_eq!(dir_bytes(&src), dir_bytes(&src2));
}

#[test]
fn synth_data_rejects_invalid_sources() {
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("bad");
    fs::create_dir(&src).unwrap();
    save_scene(&static_scene(1, 10), src.join("short.json"), None).unwrap();
    let out_dir = tmp.path().join("out");
    let out = run(
        &[
            "synth-data",
            "--sources",
            s(&src),
            "--num-persons",
            "1",
            "--windows",
            "2",
            "--out",
            s(&out_dir),
        ],
        &[],
    );
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("error:") && err.contains("frames"), "{err}");
    assert!(!out_dir.exists());

    fs::write(src.join("broken.json"), "{ not json").unwrap();
    let out = run(
        &[
            "synth-data",
            "--sources",
            s(&src),
            "--windows",
            "1",
            "--out",
            s(&out_dir),
        ],
        &[],
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("broken.json"));
}

fn tiny_data(tmp: &Path) -> PathBuf {
    let src = sources(tmp, Some("neck,r_ankle,l_ankle"));
    let data = tmp.join("data");
    ok(&[
        "synth-data",
        "--sources",
        s(&src),
        "--num-persons",
        "2",
        "--windows",
        "4",
        "--t",
        "4",
        "--T",
        "4",
        "--seed",
        "2",
        "--out",
        s(&data),
    ]);
    data
}

#[test]
fn tiny_overfit_drives_loss_down() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tiny_data(tmp.path());
    let ckpt = tmp.path().join("m.ckpt");
    ok(&[
        "train",
        "--preset",
        "tiny",
        "--data",
        s(&data),
        "--out",
        s(&ckpt),
        "--epochs",
        "1500",
        "--batch-size",
        "4",
        "--no-augment",
        "--seed",
        "0",
    ]);
    let lines = log_lines(&tmp.path().join("m.ckpt.log.jsonl"));
    assert_eq!(lines.len(), 1501);
    assert_eq!(lines[0]["seed"], 0);
    assert_eq!(lines[0]["config"]["epochs"], 1500);
    let first = lines[1]["loss"].as_f64().unwrap();
    let last = lines[1500]["loss"].as_f64().unwrap();
    assert!(last < 0.01 * first, "loss {first} -> {last}");
    assert!((lines[1500]["lr"].as_f64().unwrap() - 1e-4).abs() < 1e-15);
}

#[test]
fn resume_matches_uninterrupted_run_and_logs_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tiny_data(tmp.path());
    let p = |n: &str| tmp.path().join(n);
    let train = |extra: &[&str]| {
        let mut args = vec![
            "train",
            "--preset",
            "tiny",
            "--data",
            s(&data),
            "--epochs",
            "4",
            "--batch-size",
            "3",
            "--seed",
            "9",
        ];
        args.extend_from_slice(extra);
        ok(&args);
    };
    train(&["--out", s(&p("full.ckpt"))]);
    train(&[
        "--out",
        s(&p("again.ckpt")),
        "--log",
        s(&p("full.ckpt.log.again")),
    ]);
    assert_eq!(
        fs::read(p("full.ckpt.log.jsonl")).unwrap(),
        fs::read(p("full.ckpt.log.again")).unwrap()
    );
    assert_eq!(
        fs::read(p("full.ckpt")).unwrap(),
        fs::read(p("again.ckpt")).unwrap()
    );

    train(&["--out", s(&p("half.ckpt")), "--until-epoch", "2"]);
    ok(&[
        "train",
        "--resume",
        s(&p("half.ckpt")),
        "--out",
        s(&p("resumed.ckpt")),
    ]);
    let full = log_lines(&p("full.ckpt.log.jsonl"));
    let resumed = log_lines(&p("resumed.ckpt.log.jsonl"));
    assert_eq!(resumed[0]["start_epoch"], 2);
    assert_eq!(&full[5..], &resumed[1..]);
    assert_eq!(
        fs::read(p("full.ckpt")).unwrap(),
        fs::read(p("resumed.ckpt")).unwrap()
    );
}

#[test]
fn missing_data_leaves_no_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = tmp.path().join("m.ckpt");
    let missing = tmp.path().join("nowhere");
    let out = run(
        &[
            "train",
            "--preset",
            "tiny",
            "--data",
            s(&missing),
            "--out",
            s(&ckpt),
        ],
        &[],
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere"));
    assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 0);

    let out = run(&["train", "--preset", "tiny", "--out", s(&ckpt)], &[]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("no training data"));
    assert!(!ckpt.exists());
}

#[test]
fn seed_precedence_flag_file_env_default() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tiny_data(tmp.path());
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"seed": 5, "epochs": 3, "batch_size": 4}"#).unwrap();
    let seed_of = |args: &[&str], env: &[(&str, &str)]| {
        let ckpt = tmp.path().join("s.ckpt");
        let mut all = vec![
            "train",
            "--preset",
            "tiny",
            "--data",
            s(&data),
            "--out",
            s(&ckpt),
            "--until-epoch",
            "0",
        ];
        all.extend_from_slice(args);
        let out = run(&all, env);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        let stderr = String::from_utf8_lossy(&out.stderr).to_string();
        assert!(stderr.contains("resolved config"));
        let side = read_json(&tmp.path().join("s.ckpt.json"));
        assert_eq!(
            side["config"]["batch_size"],
            if args.contains(&"--config") { 4 } else { 32 }
        );
        side["seed"].as_u64().unwrap()
    };
    assert_eq!(seed_of(&[], &[]), 0);
    assert_eq!(seed_of(&[], &[("SOMOFORMER_SEED", "7")]), 7);
    assert_eq!(
        seed_of(&["--config", s(&cfg)], &[("SOMOFORMER_SEED", "7")]),
        5
    );
    assert_eq!(
        seed_of(
            &["--config", s(&cfg), "--seed", "3"],
            &[("SOMOFORMER_SEED", "7")]
        ),
        3
    );
}

fn somof_fixtures(tmp: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let src = sources(tmp, None);
    let data = tmp.join("somof");
    ok(&[
        "synth-data",
        "--sources",
        s(&src),
        "--num-persons",
        "2",
        "--windows",
        "3",
        "--t",
        "16",
        "--T",
        "14",
        "--out",
        s(&data),
    ]);
    let ckpt = tmp.join("fresh.ckpt");
    ok(&[
        "train",
        "--preset",
        "small",
        "--history-len",
        "16",
        "--future-len",
        "14",
        "--data",
        s(&data),
        "--out",
        s(&ckpt),
        "--until-epoch",
        "0",
    ]);
    (src, data, ckpt)
}

#[test]
fn eval_static_zero_and_fresh_checkpoint_matches_baseline() {
    let tmp = tempfile::tempdir().unwrap();
    let still = tmp.path().join("still");
    fs::create_dir(&still).unwrap();
    save_scene(&static_scene(2, 30), still.join("a.json"), None).unwrap();
    let report = tmp.path().join("still.json");
    ok(&[
        "eval",
        "--baseline",
        "zero-velocity",
        "--data",
        s(&still),
        "--out",
        s(&report),
    ]);
    let r = read_json(&report);
    assert!(r["reports"][0]["horizons"]
        .as_array()
        .unwrap()
        .iter()
        .all(|h| h["value"] == 0.0));

    let (_, data, ckpt) = somof_fixtures(tmp.path());
    let a = tmp.path().join("model.json");
    let b = tmp.path().join("base.json");
    let csv = tmp.path().join("model.csv");
    let out = ok(&[
        "eval",
        "--ckpt",
        s(&ckpt),
        "--data",
        s(&data),
        "--metrics",
        "vim,mpjpe",
        "--out",
        s(&a),
        "--csv",
        s(&csv),
    ]);
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(
        table.contains("900 ms") && table.contains("VIM (cm)"),
        "{table}"
    );
    ok(&[
        "eval",
        "--baseline",
        "zero-velocity",
        "--data",
        s(&data),
        "--metrics",
        "vim,mpjpe",
        "--out",
        s(&b),
    ]);
    let (ra, rb) = (read_json(&a), read_json(&b));
    for m in 0..2 {
        for h in 0..5 {
            let x = ra["reports"][m]["horizons"][h]["value"].as_f64().unwrap();
            let y = rb["reports"][m]["horizons"][h]["value"].as_f64().unwrap();
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
    }
    assert_eq!(fs::read_to_string(&csv).unwrap().lines().count(), 1 + 2 * 6);

    // Report schema.
    assert_eq!(ra["config"]["predictor"], "somoformer");
    assert_eq!(rb["config"]["model"], Value::Null);
    assert!(ra["seed"].is_u64());
    for r in ra["reports"].as_array().unwrap() {
        assert!(r["metric"] == "vim" || r["metric"] == "mpjpe");
        assert_eq!(r["units"], "cm");
        assert!(r["overall"].is_f64());
        for key in ["persons", "windows", "frames"] {
            assert!(r[key].is_u64(), "{key}");
        }
        for h in r["horizons"].as_array().unwrap() {
            assert!(h["frame"].is_u64() && h["ms"].is_f64() && h["value"].is_f64());
        }
    }
}

#[test]
fn eval_protocol_mismatch_names_expected_shape() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, data, ckpt) = somof_fixtures(tmp.path());
    let out = run(
        &[
            "eval",
            "--ckpt",
            s(&ckpt),
            "--data",
            s(&data),
            "--protocol",
            "cmu",
        ],
        &[],
    );
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("t=16, T=14, J=13"), "{err}");
    let out = run(&["eval", "--data", s(&data)], &[]);
    assert!(!out.status.success());
}

#[test]
fn predict_and_export_attention() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, data, ckpt) = somof_fixtures(tmp.path());
    let scene_path = data.join("scene_00000.json");
    let input = load_scene(&scene_path).unwrap();
    let pred_path = tmp.path().join("pred.json");
    let out = run(
        &[
            "predict",
            "--ckpt",
            s(&ckpt),
            "--scene",
            s(&scene_path),
            "--out",
            s(&pred_path),
        ],
        &[("SOMOFORMER_SEED", "4")],
    );
    assert!(out.status.success());
    let pred = load_scene(&pred_path).unwrap();
    assert_eq!(pred.frames(), 30);
    for p in 0..2 {
        for f in 0..16 {
            for j in 0..13 {
                assert_eq!(pred.point(p, f, j), input.point(p, f, j));
            }
        }
        for f in 16..30 {
            for j in 0..13 {
                let (a, b) = (pred.point(p, f, j), input.point(p, 15, j));
                assert!((0..3).all(|k| (a[k] - b[k]).abs() < 1e-9));
            }
        }
    }
    let meta = read_json(&pred_path)["meta"].clone();
    assert_eq!(meta["seed"], 4);
    assert_eq!(meta["config"]["history_len"], 16);

    let short = tmp.path().join("short.json");
    save_scene(&static_scene(1, 10), &short, None).unwrap();
    let out = run(
        &[
            "predict",
            "--ckpt",
            s(&ckpt),
            "--scene",
            s(&short),
            "--out",
            s(&tmp.path().join("x.json")),
        ],
        &[],
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("t=16"));

    let attn = tmp.path().join("attn.json");
    ok(&[
        "export-attention",
        "--ckpt",
        s(&ckpt),
        "--scene",
        s(&scene_path),
        "--out",
        s(&attn),
    ]);
    let export = somoformer::eval::AttentionExport::load(&attn).unwrap();
    assert_eq!(export.joint_average.len(), 13);
    assert_eq!(export.joint_names.as_ref().unwrap()[0], "neck");
    for layer in &export.layers {
        for head in &layer.heads {
            for row in head {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
    assert_eq!(export.meta.as_ref().unwrap()["command"], "export-attention");
}
