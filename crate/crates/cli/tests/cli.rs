//! End-to-end tests driving the compiled `mixbp` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mixbp::imageio::{self, GrayImage, InpaintMask};
use mixbp::prior::{Gaussian1D, ModelMeta, PriorModel};

fn mixbp() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mixbp"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let output = cmd.output().expect("binary should launch");
    assert!(
        output.status.success(),
        "command failed with {:?}\nstdout: {}\nstderr: {}",
        output.status.code(),
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    output
}

fn stdout_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

/// Smooth ramp with a soft diagonal edge — enough structure for training.
fn training_image(w: u32, h: u32, phase: f64) -> GrayImage {
    GrayImage::from_fn(w, h, |x, y| {
        let ramp = 90.0 + 5.0 * ((x as f64 + phase) / 3.0).sin() * 10.0 + 0.6 * y as f64;
        let edge = if x as f64 + phase > y as f64 * 1.3 { 30.0 } else { 0.0 };
        (ramp + edge).clamp(0.0, 255.0)
    })
}

/// Zero-mean smoothness prior over the three contrast directions.
fn smooth_model() -> PriorModel {
    let filters = vec![
        vec![0.5, 0.5, -0.5, -0.5],
        vec![0.5, -0.5, 0.5, -0.5],
        vec![0.5, -0.5, -0.5, 0.5],
    ];
    PriorModel {
        patch_size: 2,
        filters,
        dropped_filter: Some(vec![0.5, 0.5, 0.5, 0.5]),
        experts: vec![vec![Gaussian1D { weight: 1.0, mean: 0.0, sigma: 4.0 }]; 3],
        meta: ModelMeta::default(),
    }
}

/// Writes an image, a 2-pixel damage mask, and a model into `dir`; returns
/// (image, mask, model) paths. The damaged pixels are set to 255.
fn inpaint_fixture(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let mut image = GrayImage::from_fn(16, 12, |x, y| 60.0 + 3.0 * x as f64 + 2.0 * y as f64);
    image.set(5, 4, 255.0);
    image.set(6, 4, 255.0);
    let image_path = dir.join("damaged.pgm");
    imageio::save(&image_path, &image).unwrap();

    let mut mask = InpaintMask::all_known(16, 12);
    mask.set_unknown(5, 4, true);
    mask.set_unknown(6, 4, true);
    let mask_path = dir.join("mask.pgm");
    imageio::save(&mask_path, &mask.to_gray()).unwrap();

    let model_path = dir.join("prior.model");
    smooth_model().save(&model_path).unwrap();
    (image_path, mask_path, model_path)
}

#[test]
fn make_mask_is_deterministic_and_interior_only() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.pgm");
    let b = dir.path().join("b.pgm");
    let c = dir.path().join("c.pgm");
    for (path, seed) in [(&a, 7u64), (&b, 7), (&c, 8)] {
        run_ok(mixbp().args([
            "make-mask",
            "--width",
            "24",
            "--height",
            "20",
            "--style",
            "scratch",
            "--coverage",
            "0.05",
            "--seed",
            &seed.to_string(),
            "--out",
            path.to_str().unwrap(),
        ]));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());

    let mask = imageio::load_mask(&a, 128).unwrap();
    assert_eq!(mask.unknown_count(), (0.05f64 * 24.0 * 20.0).round() as usize);
    for y in 0..20u32 {
        for x in 0..24u32 {
            if x == 0 || y == 0 || x == 23 || y == 19 {
                assert!(!mask.is_unknown(x, y), "border pixel ({x},{y}) must stay known");
            }
        }
    }
}

#[test]
fn learn_prior_produces_a_loadable_model() {
    let dir = tempfile::tempdir().unwrap();
    let images = dir.path().join("train");
    std::fs::create_dir(&images).unwrap();
    imageio::save(&images.join("a.pgm"), &training_image(40, 30, 0.0)).unwrap();
    imageio::save(&images.join("b.pgm"), &training_image(36, 28, 2.5)).unwrap();
    let model_path = dir.path().join("prior.model");

    let output = run_ok(mixbp().args([
        "learn-prior",
        "--images",
        images.to_str().unwrap(),
        "--patches",
        "2000",
        "--em-samples",
        "800",
        "--k",
        "2",
        "--seed",
        "3",
        "--out",
        model_path.to_str().unwrap(),
    ]));
    let text = stdout_of(&output);
    assert!(text.contains("loaded 2 training image(s)"), "stdout: {text}");
    assert!(text.contains("excess kurtosis"), "stdout: {text}");

    let model = PriorModel::load(&model_path).unwrap();
    assert_eq!(model.filters.len(), 3);
    assert_eq!(model.experts.len(), 3);
    assert!(model.experts.iter().all(|e| e.len() == 2));
    assert_eq!(model.meta.patches, 2000);
    assert_eq!(model.meta.seed, 3);
    for filter in &model.filters {
        let norm: f64 = filter.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9, "filters should be unit norm, got {norm}");
    }
}

#[test]
fn inpaint_round_trip_with_reports() {
    let dir = tempfile::tempdir().unwrap();
    let (image, mask, model) = inpaint_fixture(dir.path());
    let out = dir.path().join("restored.pgm");
    let stats = dir.path().join("run.stats");
    let graph = dir.path().join("graph.txt");
    // The undamaged original doubles as the PSNR reference.
    let reference = dir.path().join("reference.pgm");
    imageio::save(
        &reference,
        &GrayImage::from_fn(16, 12, |x, y| 60.0 + 3.0 * x as f64 + 2.0 * y as f64),
    )
    .unwrap();

    let output = run_ok(mixbp().args([
        "inpaint",
        "--image",
        image.to_str().unwrap(),
        "--mask",
        mask.to_str().unwrap(),
        "--model",
        model.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--stats",
        stats.to_str().unwrap(),
        "--dump-graph",
        graph.to_str().unwrap(),
        "--report-psnr-against",
        reference.to_str().unwrap(),
    ]));
    let text = stdout_of(&output);
    assert!(text.contains("unknown pixels: 2"), "stdout: {text}");
    assert!(text.contains("stop: converged"), "stdout: {text}");
    assert!(text.contains("region psnr"), "stdout: {text}");

    let restored = imageio::load(&out).unwrap();
    let original = imageio::load(&image).unwrap();
    // Smooth surroundings: the fill should land close to the ramp values.
    assert!((restored.get(5, 4) - 83.0).abs() <= 3.0, "got {}", restored.get(5, 4));
    assert!((restored.get(6, 4) - 86.0).abs() <= 3.0, "got {}", restored.get(6, 4));
    assert_eq!(restored.get(0, 0), original.get(0, 0), "known pixels pass through");

    let stats_text = std::fs::read_to_string(&stats).unwrap();
    assert!(stats_text.starts_with("inpaint-stats v1\n"), "stats: {stats_text}");
    assert!(stats_text.contains("stop converged"), "stats: {stats_text}");
    let graph_text = std::fs::read_to_string(&graph).unwrap();
    assert!(graph_text.starts_with("cliques "), "graph dump: {graph_text}");
}

#[test]
fn inpaint_reports_iteration_cap_via_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let (image, mask, model) = inpaint_fixture(dir.path());
    let out = dir.path().join("restored.pgm");
    let status = mixbp()
        .args([
            "inpaint",
            "--image",
            image.to_str().unwrap(),
            "--mask",
            mask.to_str().unwrap(),
            "--model",
            model.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--iterations",
            "1",
        ])
        .status()
        .unwrap();
    // One iteration cannot observe a sub-threshold change, so the run stops
    // at the cap; the output image must still be written.
    assert_eq!(status.code(), Some(3));
    assert!(out.exists());
}

#[test]
fn inpaint_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (image, mask, model) = inpaint_fixture(dir.path());
    let mut artifacts = Vec::new();
    for run in 0..2 {
        let out = dir.path().join(format!("out{run}.pgm"));
        let stats = dir.path().join(format!("stats{run}.txt"));
        run_ok(mixbp().args([
            "inpaint",
            "--image",
            image.to_str().unwrap(),
            "--mask",
            mask.to_str().unwrap(),
            "--model",
            model.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--stats",
            stats.to_str().unwrap(),
        ]));
        artifacts.push((std::fs::read(&out).unwrap(), std::fs::read(&stats).unwrap()));
    }
    assert_eq!(artifacts[0].0, artifacts[1].0, "images must match byte for byte");
    assert_eq!(artifacts[0].1, artifacts[1].1, "stats must match byte for byte");
}

#[test]
fn baseline_writes_image_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let (image, mask, model) = inpaint_fixture(dir.path());
    let out = dir.path().join("baseline.pgm");
    let trace = dir.path().join("objective.txt");
    let output = run_ok(mixbp().args([
        "baseline",
        "--image",
        image.to_str().unwrap(),
        "--mask",
        mask.to_str().unwrap(),
        "--model",
        model.to_str().unwrap(),
        "--iterations",
        "40",
        "--out",
        out.to_str().unwrap(),
        "--energy-trace",
        trace.to_str().unwrap(),
    ]));
    assert!(stdout_of(&output).contains("objective:"));
    assert!(out.exists());
    let values: Vec<f64> = std::fs::read_to_string(&trace)
        .unwrap()
        .lines()
        .map(|l| l.parse().unwrap())
        .collect();
    assert_eq!(values.len(), 41, "initial value plus one entry per iteration");
    assert!(values.last().unwrap() > values.first().unwrap(), "ascent should improve: {values:?}");
}

#[test]
fn metrics_prints_all_scores() {
    let dir = tempfile::tempdir().unwrap();
    let reference = dir.path().join("ref.pgm");
    let test = dir.path().join("test.pgm");
    let mask_path = dir.path().join("mask.pgm");
    let base = training_image(20, 16, 0.0);
    let mut corrupted = base.clone();
    corrupted.set(8, 8, 0.0);
    imageio::save(&reference, &base).unwrap();
    imageio::save(&test, &corrupted).unwrap();
    let mut mask = InpaintMask::all_known(20, 16);
    mask.set_unknown(8, 8, true);
    imageio::save(&mask_path, &mask.to_gray()).unwrap();

    let output = run_ok(mixbp().args([
        "metrics",
        "--reference",
        reference.to_str().unwrap(),
        "--test",
        test.to_str().unwrap(),
        "--mask",
        mask_path.to_str().unwrap(),
    ]));
    let text = stdout_of(&output);
    assert!(text.contains("psnr "), "stdout: {text}");
    assert!(text.contains("region psnr "), "stdout: {text}");
    assert!(text.contains("ssim "), "stdout: {text}");
}

#[test]
fn missing_files_exit_with_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let status = mixbp()
        .args([
            "metrics",
            "--reference",
            dir.path().join("nope.pgm").to_str().unwrap(),
            "--test",
            dir.path().join("nope.pgm").to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
}

#[test]
fn usage_errors_use_claps_exit_code() {
    let status = mixbp().args(["inpaint", "--image", "x.pgm"]).status().unwrap();
    assert_eq!(status.code(), Some(2), "missing required arguments are usage errors");
}
