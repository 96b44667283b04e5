use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use xrecolor::color::RgbColor;
use xrecolor::metrics::{ms_ssim, uiqi, MsSsimOptions};
use xrecolor::raster::RgbImage;
use xrecolor::recolor::{srgb_loss, UIQI_WINDOW};

fn xrecolor(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xrecolor"))
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn noisy_image(seed: u64, h: usize, w: usize) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = RgbImage::filled(h, w, RgbColor::from_u8([0, 0, 0]));
    for y in 0..h {
        for x in 0..w {
            let base = if (y / 8 + x / 8) % 2 == 0 {
                [180u8, 60, 40]
            } else {
                [40, 80, 190]
            };
            let c = base.map(|v| v.saturating_add(rng.random_range(0..40)));
            img.set(y, x, RgbColor::from_u8(c));
        }
    }
    img
}

fn seed_dir(root: &Path, n: usize) -> PathBuf {
    let dir = root.join("seeds");
    std::fs::create_dir_all(&dir).unwrap();
    for i in 0..n {
        noisy_image(i as u64, 24, 20)
            .save_png(&dir.join(format!("img{i:02}.png")))
            .unwrap();
    }
    dir
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&xrecolor(&["--help"])), 0);
    let v = xrecolor(&["--version"]);
    assert_eq!(code(&v), 0);
    let text = String::from_utf8_lossy(&v.stdout);
    assert!(
        text.contains(env!("CARGO_PKG_VERSION")) && text.contains('+'),
        "{text}"
    );
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&xrecolor(&["--no-such-flag"])), 1);
    assert_eq!(code(&xrecolor(&["gen", "--size", "many"])), 1);
    assert_eq!(code(&xrecolor(&[])), 1);
}

#[test]
fn runtime_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere");
    let out = xrecolor(&["--out", s(dir.path()), "gen", "--images", s(&missing)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("nowhere"), "{}", stderr(&out));

    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, "{\"seed\": \"seven\"}").unwrap();
    let out = xrecolor(&["--config", s(&cfg), "palette", "demo"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("bad.json"));
}

#[test]
fn a_failed_gradient_check_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = xrecolor(&["--out", s(dir.path()), "gradcheck", "--corrupt", "sigmoid"]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("sigmoid"));
    let report = read_json(&dir.path().join("gradcheck_report.json"));
    assert_eq!(report["passed"], Value::Bool(false));
}

#[test]
fn gen_writes_one_cube_per_png_and_a_split_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let seeds = seed_dir(dir.path(), 3);
    let out_dir = dir.path().join("out");
    let out = xrecolor(&[
        "--out",
        s(&out_dir),
        "--seed",
        "4",
        "gen",
        "--images",
        s(&seeds),
        "--size",
        "16",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let manifest = read_json(&out_dir.join("manifest.json"));
    assert_eq!(manifest["format"], "xrecolor-dataset");
    assert_eq!(manifest["seed"], 4);
    let items = manifest["items"].as_array().unwrap();
    assert_eq!(items.len(), 3);
    for item in items {
        assert!(["train", "val", "test"].contains(&item["split"].as_str().unwrap()));
        let bytes = std::fs::read(out_dir.join(item["cube"].as_str().unwrap())).unwrap();
        assert_eq!(item["cube_sha256"], xrecolor::io::sha256_hex(&bytes));
        let cube = xrecolor::synth::DataCube::from_bytes(&bytes).unwrap();
        assert_eq!(
            (cube.height(), cube.width(), cube.energy_bins()),
            (16, 16, 512)
        );
    }
    let cubes = std::fs::read_dir(out_dir.join("cubes")).unwrap().count();
    assert_eq!(cubes, 3);
}

#[test]
fn a_corrupt_png_is_named_and_nothing_is_written() {
    let dir = tempfile::tempdir().unwrap();
    let seeds = seed_dir(dir.path(), 2);
    std::fs::write(seeds.join("broken.png"), b"not a png").unwrap();
    let out_dir = dir.path().join("out");
    let out = xrecolor(&[
        "--out",
        s(&out_dir),
        "gen",
        "--images",
        s(&seeds),
        "--size",
        "16",
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("broken.png"), "{}", stderr(&out));
    assert!(!out_dir.join("manifest.json").exists());
    assert!(!out_dir.join("cubes").exists());
}

#[test]
fn palette_demo_round_trips_through_validate() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        code(&xrecolor(&[
            "--out",
            s(dir.path()),
            "palette",
            "demo",
            "--bins",
            "128"
        ])),
        0
    );
    let out = xrecolor(&["palette", "validate", s(&dir.path().join("palette.json"))]);
    assert_eq!(code(&out), 0);
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["energy_bins"], 128);
    std::fs::write(dir.path().join("empty.json"), "{}").unwrap();
    assert_eq!(
        code(&xrecolor(&[
            "palette",
            "validate",
            s(&dir.path().join("empty.json"))
        ])),
        2
    );
}

#[test]
fn eval_of_identical_images_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("a.png");
    noisy_image(9, 40, 40).save_png(&img).unwrap();
    let out = xrecolor(&[
        "--out",
        s(dir.path()),
        "eval",
        "--pred",
        s(&img),
        "--truth",
        s(&img),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = read_json(&dir.path().join("eval_report.json"));
    assert_eq!(report["command"], "eval");
    let agg = &report["aggregate"];
    assert_eq!(agg["srgb_loss"].as_f64().unwrap(), 0.0);
    assert!((agg["ms_ssim"].as_f64().unwrap() - 1.0).abs() < 1e-6);
    assert!((agg["uiqi"].as_f64().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn eval_aggregate_is_the_mean_of_independently_recomputed_scores() {
    let dir = tempfile::tempdir().unwrap();
    let (pred_dir, truth_dir) = (dir.path().join("pred"), dir.path().join("truth"));
    std::fs::create_dir_all(&pred_dir).unwrap();
    std::fs::create_dir_all(&truth_dir).unwrap();
    for i in 0..4u64 {
        noisy_image(i, 48, 48)
            .save_png(&truth_dir.join(format!("{i}.png")))
            .unwrap();
        noisy_image(100 + i, 48, 48)
            .save_png(&pred_dir.join(format!("{i}.png")))
            .unwrap();
    }
    let out_dir = dir.path().join("out");
    let out = xrecolor(&[
        "--out",
        s(&out_dir),
        "eval",
        "--pred",
        s(&pred_dir),
        "--truth",
        s(&truth_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = read_json(&out_dir.join("eval_report.json"));
    let per = report["per_image"].as_array().unwrap();
    assert_eq!(per.len(), 4);

    let opts = MsSsimOptions::default();
    let mut sums = [0.0; 3];
    for row in per {
        let name = row["name"].as_str().unwrap();
        let p = RgbImage::load_png(&pred_dir.join(format!("{name}.png")))
            .unwrap()
            .to_planar();
        let t = RgbImage::load_png(&truth_dir.join(format!("{name}.png")))
            .unwrap()
            .to_planar();
        let expected = [
            srgb_loss(&p, &t).unwrap(),
            ms_ssim(&p, &t, &opts).unwrap().value,
            uiqi(&p, &t, UIQI_WINDOW).unwrap().value,
        ];
        for (k, key) in ["srgb_loss", "ms_ssim", "uiqi"].iter().enumerate() {
            let got = row[key].as_f64().unwrap();
            assert!(
                (got - expected[k]).abs() < 1e-9,
                "{name} {key}: {got} vs {}",
                expected[k]
            );
            sums[k] += got;
        }
    }
    for (k, key) in ["srgb_loss", "ms_ssim", "uiqi"].iter().enumerate() {
        let mean = sums[k] / per.len() as f64;
        assert!(
            (report["aggregate"][key].as_f64().unwrap() - mean).abs() < 1e-9,
            "{key}"
        );
    }
    assert_eq!(report["aggregate"]["images"], 4);
}

#[test]
fn eval_reports_a_missing_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let (pred_dir, truth_dir) = (dir.path().join("pred"), dir.path().join("truth"));
    std::fs::create_dir_all(&pred_dir).unwrap();
    std::fs::create_dir_all(&truth_dir).unwrap();
    noisy_image(1, 16, 16)
        .save_png(&pred_dir.join("lonely.png"))
        .unwrap();
    let out = xrecolor(&[
        "--out",
        s(dir.path()),
        "eval",
        "--pred",
        s(&pred_dir),
        "--truth",
        s(&truth_dir),
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("lonely"));
}
