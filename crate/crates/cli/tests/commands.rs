use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use voxgen::training::TrainConfig;
use voxgen::volumes::{read_nifti, write_nifti, Volume3};

fn voxgen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_voxgen"))
        .args(args)
        .output()
        .expect("spawn voxgen")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn ramp_volume(n: usize, shift: f64) -> Volume3 {
    let mut data = Vec::new();
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                let v = 1.0 + (x as f64 - shift) * 0.5 + y as f64 * 0.25 + z as f64;
                data.push(v as f32);
            }
        }
    }
    Volume3::with_spacing([n; 3], [1.0; 3], data).unwrap()
}

#[test]
fn evaluate_identical_volumes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.nii");
    let mut v = ramp_volume(8, 0.0);
    let max = v.data().iter().copied().fold(0.0, f32::max);
    v.data_mut().iter_mut().for_each(|x| *x /= max);
    write_nifti(&v, &path).unwrap();
    let out = voxgen(&["evaluate", "--pred", p(&path), "--ref", p(&path)]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "ssim=1.00000\n");
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = voxgen(&["evaluate", "--bogus", "x"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("Usage"));
    assert_eq!(voxgen(&[]).status.code(), Some(2));
}

#[test]
fn missing_input_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.nii");
    let out = voxgen(&["evaluate", "--pred", p(&missing), "--ref", p(&missing)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stderr).unwrap().contains("absent.nii"));
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.json");
    fs::write(&config, r#"{"steps": 3, "learning_rte": 0.1}"#).unwrap();
    let out = voxgen(&[
        "train",
        "--config",
        p(&config),
        "--data-dir",
        p(dir.path()),
        "--out-dir",
        p(&dir.path().join("run")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("learning_rte"));
    assert!(!dir.path().join("run").exists());
}

#[test]
fn preprocess_recovers_translation() {
    let dir = tempfile::tempdir().unwrap();
    let n = 12;
    let fixed = ramp_volume(n, 0.0);
    let moving = ramp_volume(n, -2.0);
    write_nifti(&fixed, &dir.path().join("fixed.nii")).unwrap();
    write_nifti(&moving, &dir.path().join("moving.nii")).unwrap();
    fs::write(
        dir.path().join("lm.json"),
        r#"{"pairs": [
            {"moving": [0, 0, 0], "fixed": [2, 0, 0]},
            {"moving": [5, 0, 0], "fixed": [7, 0, 0]},
            {"moving": [0, 5, 0], "fixed": [2, 5, 0]},
            {"moving": [0, 0, 5], "fixed": [2, 0, 5]},
            {"moving": [3, 4, 5], "fixed": [5, 4, 5]}
        ]}"#,
    )
    .unwrap();
    let out_dir = dir.path().join("prep");
    let out = voxgen(&[
        "preprocess",
        "--moving",
        p(&dir.path().join("moving.nii")),
        "--fixed",
        p(&dir.path().join("fixed.nii")),
        "--landmarks",
        p(&dir.path().join("lm.json")),
        "--out-dir",
        p(&out_dir),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let transform: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("transform.json")).unwrap()).unwrap();
    let t: Vec<f64> = serde_json::from_value(transform["t"].clone()).unwrap();
    assert!((t[0] - 2.0).abs() <= 1e-9 && t[1].abs() <= 1e-9 && t[2].abs() <= 1e-9);
    assert_eq!(transform["A"][0][0].as_f64(), Some(1.0));

    let m = read_nifti(&out_dir.join("moving_prep.nii")).unwrap();
    let f = read_nifti(&out_dir.join("fixed_prep.nii")).unwrap();
    assert_eq!(m.extents(), [n - 2, n, n]);
    assert_eq!(m.extents(), f.extents());
    for (a, b) in m.data().iter().zip(f.data()) {
        assert!((-1.0..=1.0).contains(a));
        assert!((a - b).abs() <= 1e-5, "{a} vs {b}");
    }
}

#[test]
fn train_smoke_then_synthesize_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let made = voxgen(&[
        "make-synthetic",
        "--seed",
        "42",
        "--count",
        "20",
        "--size",
        "16",
        "--out-dir",
        p(&data),
    ]);
    assert_eq!(made.status.code(), Some(0));

    let config = dir.path().join("run.json");
    let cfg = TrainConfig {
        steps: 10,
        eval_interval: 5,
        ..TrainConfig::test_scale()
    };
    fs::write(&config, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    let run = dir.path().join("run");
    let out = voxgen(&[
        "train",
        "--config",
        p(&config),
        "--data-dir",
        p(&data),
        "--out-dir",
        p(&run),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(run.join("losses.csv")).unwrap();
    assert_eq!(csv.lines().count(), 11);
    assert!(!csv.contains('\r'));
    let checkpoint = run.join("checkpoint_final.bvgc");
    assert!(checkpoint.exists());

    let input = data.join("case_19_us.nii");
    let mut outputs = Vec::new();
    for name in ["a.nii", "b.nii"] {
        let output = dir.path().join(name);
        let out = voxgen(&[
            "synthesize",
            "--checkpoint",
            p(&checkpoint),
            "--input",
            p(&input),
            "--output",
            p(&output),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        outputs.push(fs::read(&output).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    let synth = read_nifti(&dir.path().join("a.nii")).unwrap();
    assert_eq!(synth.extents(), [16; 3]);
    assert!(synth.data().iter().all(|v| (0.0..=1.0).contains(v)));

    let wrong = dir.path().join("small.nii");
    write_nifti(&Volume3::filled([8; 3], 0.5).unwrap(), &wrong).unwrap();
    let out = voxgen(&[
        "synthesize",
        "--checkpoint",
        p(&checkpoint),
        "--input",
        p(&wrong),
        "--output",
        p(&dir.path().join("c.nii")),
    ]);
    assert_ne!(out.status.code(), Some(0));
}
