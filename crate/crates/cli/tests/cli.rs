use std::path::Path;
use std::process::{Command, Output};

fn noise2sr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_noise2sr"))
        .args(args)
        .env_remove("NOISE2SR_NUM_THREADS")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY_MODEL: [&str; 8] = [
    "--model.unet_depth",
    "2",
    "--model.base_channels",
    "3",
    "--model.unet_out_channels",
    "4",
    "--model.head_channels",
    "3",
];

#[test]
fn help_lists_overrides_and_exit_codes() {
    let o = noise2sr(&["--help"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    for needle in [
        "verify-theorem",
        "--train.steps",
        "--noise.sigma",
        "--data.fmd.val_fraction",
        "Exit codes",
        "--out",
    ] {
        assert!(text.contains(needle), "help lacks {needle}");
    }
}

#[test]
fn show_config_applies_seed_and_overrides() {
    let o = noise2sr(&[
        "show-config",
        "--seed",
        "9",
        "--noise.family",
        "poisson",
        "--noise.lam",
        "30",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert_eq!(text.lines().filter(|l| *l == "seed = 9").count(), 5, "{text}");
    assert!(text.contains("master_seed = 9"));
    assert!(text.contains("lam = 30"));
}

#[test]
fn config_errors_exit_2() {
    assert_eq!(code(&noise2sr(&["show-config", "--train.stepz", "3"])), 2);
    assert_eq!(code(&noise2sr(&["show-config", "--train.steps", "many"])), 2);
    assert_eq!(code(&noise2sr(&["train"])), 2);
    assert_eq!(code(&noise2sr(&["verify-theorem", "--noise.sigma", "-1"])), 2);
    let empty = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let o = noise2sr(&["simulate", "--data.clean_dir", p(empty.path()), "--out", p(out.path())]);
    assert_eq!(code(&o), 2);
}

#[test]
fn missing_data_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    assert_eq!(code(&noise2sr(&["train", "--data.manifest", p(&missing)])), 3);
    let o = noise2sr(&[
        "plot",
        "--noisy",
        p(&dir.path().join("a.png")),
        "--denoised",
        p(&dir.path().join("b.png")),
        "--reference",
        p(&dir.path().join("c.png")),
        "--output",
        p(&dir.path().join("d.png")),
    ]);
    assert_eq!(code(&o), 3);
}

#[test]
fn verify_theorem_zero_noise_and_failure() {
    let out = tempfile::tempdir().unwrap();
    let o = noise2sr(&[
        "verify-theorem",
        "--noise.sigma",
        "0",
        "--theorem.trials",
        "200",
        "--out",
        p(out.path()),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.path().join("theorem.json")).unwrap()).unwrap();
    assert_eq!(report["lhs"], report["supervised"]);
    assert_eq!(report["sigma2"], 0.0);
    // a negative tolerance can never be met
    let o = noise2sr(&[
        "verify-theorem",
        "--theorem.trials",
        "200",
        "--theorem.tolerance_se=-1",
        "--out",
        p(out.path()),
    ]);
    assert_eq!(code(&o), 4);
}

/// phantoms -> simulate -> train; returns the output directory layout root.
fn prepare(work: &Path) {
    let clean = work.join("clean");
    let o = noise2sr(&["phantoms", "--count", "4", "--size", "32", "--out", p(&clean)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let data = work.join("data");
    let o = noise2sr(&[
        "simulate",
        "--data.clean_dir",
        p(&clean),
        "--data.split.train",
        "2",
        "--data.split.val",
        "1",
        "--data.split.test",
        "1",
        "--data.split.realizations",
        "1",
        "--noise.sigma",
        "0.1",
        "--out",
        p(&data),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

fn train(work: &Path, run: &str) -> Vec<u8> {
    let manifest = work.join("data/manifest.json");
    let out = work.join(run);
    let mut args = vec![
        "train",
        "--seed",
        "3",
        "--data.manifest",
        p(&manifest),
        "--train.steps",
        "6",
        "--train.batch_size",
        "2",
        "--train.crop_size",
        "32",
        "--train.validation_interval",
        "3",
        "--out",
        p(&out),
    ];
    args.extend(TINY_MODEL);
    let o = noise2sr(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        std::fs::read_to_string(out.join("metrics.ndjson"))
            .unwrap()
            .lines()
            .count(),
        6
    );
    assert!(out.join("best.ckpt").exists());
    std::fs::read(out.join("last.ckpt")).unwrap()
}

#[test]
fn pipeline_end_to_end() {
    let work = tempfile::tempdir().unwrap();
    let w = work.path();
    prepare(w);
    let a = train(w, "run_a");
    let b = train(w, "run_b");
    assert_eq!(a, b, "training is not deterministic");

    let ckpt = w.join("run_a/last.ckpt");
    let eval_dir = w.join("eval");
    let o = noise2sr(&[
        "evaluate",
        "--checkpoint",
        p(&ckpt),
        "--data.manifest",
        p(&w.join("data/manifest.json")),
        "--format",
        "json",
        "--out",
        p(&eval_dir),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(json["rows"].as_array().unwrap().len(), 1);
    let csv = std::fs::read_to_string(eval_dir.join("evaluation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.lines().last().unwrap().starts_with("mean,"));

    let noisy = std::fs::read_dir(w.join("data/noisy"))
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    let sr = w.join("sr.png");
    let o = noise2sr(&[
        "denoise",
        "--checkpoint",
        p(&ckpt),
        "--input",
        p(&noisy),
        "--output",
        p(&sr),
        "--sr",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("32x32 -> 64x64"));
    let den = w.join("den.png");
    let o = noise2sr(&[
        "denoise",
        "--checkpoint",
        p(&ckpt),
        "--input",
        p(&noisy),
        "--output",
        p(&den),
    ]);
    assert_eq!(code(&o), 0);

    let reference = std::fs::read_dir(w.join("data/reference"))
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    let panel = w.join("panel.png");
    let o = noise2sr(&[
        "plot",
        "--noisy",
        p(&noisy),
        "--denoised",
        p(&den),
        "--reference",
        p(&reference),
        "--output",
        p(&panel),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(panel.exists());

    // resume continues from the saved step
    let resumed = w.join("resumed");
    let manifest = w.join("data/manifest.json");
    let mut args = vec![
        "train",
        "--seed",
        "3",
        "--resume",
        p(&ckpt),
        "--data.manifest",
        p(&manifest),
        "--train.steps",
        "8",
        "--train.batch_size",
        "2",
        "--train.crop_size",
        "32",
        "--train.validation_interval",
        "3",
        "--out",
        p(&resumed),
    ];
    args.extend(TINY_MODEL);
    let o = noise2sr(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("step 8 "), "{}", stdout(&o));
}
