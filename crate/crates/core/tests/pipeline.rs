use std::path::Path;
use std::process::Command;

use relaxmcr::phantom::{generate, write_phantom, NoiseModel, PhantomSpec};
use relaxmcr::pipeline::{self, MaskConfig, RunConfig};
use relaxmcr::results::read_result_dir;

fn small_spec() -> PhantomSpec {
    PhantomSpec { width: 24, height: 24, pixel_size_mm: 0.25, times_h: vec![0.5, 4.0, 8.0, 14.0, 20.0], ..Default::default() }
}

fn write_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let path = dir.join("run.json");
    std::fs::write(
        &path,
        format!(
            r#"{{"manifest": "manifest.json", "mask": {{"method": "fixed_fraction", "fraction": 0.05}},
                "n_components": 3, "simplisma_offset": 0.5, "output_dir": "results"{extra}}}"#
        ),
    )
    .unwrap();
    path
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_relaxmcr")).args(args).args(["--log-level", "warn"]).output().unwrap()
}

#[test]
fn gaussian_noise_matches_requested_sigma() {
    let spec = PhantomSpec { snr: Some(20.0), noise_model: NoiseModel::Gaussian, ..small_spec() };
    let (frames, truth) = generate(&spec).unwrap();
    let (mut ss, mut n) = (0.0, 0.0);
    for (f, frame) in frames.iter().enumerate() {
        for r in 0..frame.height() {
            for c in 0..frame.width() {
                for e in 0..frame.n_echoes() {
                    let clean: f64 = (0..truth.s_true.ncols()).map(|q| truth.c_true[f][q].get(r, c) * truth.s_true[(e, q)]).sum();
                    ss += (frame.value(r, c, e) - clean).powi(2);
                    n += 1.0;
                }
            }
        }
    }
    let sd = (ss / n).sqrt();
    assert!((sd / truth.noise_sigma - 1.0).abs() < 0.05, "sd {sd} vs sigma {}", truth.noise_sigma);
}

#[test]
fn phantom_is_deterministic_per_seed() {
    let (a, _) = generate(&small_spec()).unwrap();
    let (b, _) = generate(&small_spec()).unwrap();
    let (c, _) = generate(&PhantomSpec { seed: 7, ..small_spec() }).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn library_pipeline_round_trips_through_result_dir() {
    let dir = tempfile::tempdir().unwrap();
    let (frames, truth) = generate(&small_spec()).unwrap();
    write_phantom(&frames, &truth, dir.path()).unwrap();
    let cfg = RunConfig::load(&write_config(dir.path(), "")).unwrap();
    cfg.validate().unwrap();
    let series = pipeline::load_series(&cfg.manifest, &cfg.mask, cfg.mask_mode).unwrap();
    let scan = pipeline::rank_scan(&series).unwrap();
    assert_eq!(scan.suggested_rank, 3);
    let out = pipeline::decompose(&cfg, &series).unwrap();
    assert!(out.result.diagnostics.explained_variance_pct > 99.0);

    let bundle = read_result_dir(&cfg.output_dir).unwrap();
    assert_eq!(bundle.layout, series.stack.layout());
    assert!((&bundle.result.s - &out.result.s).norm() < 1e-12);
    // Concentrations go through f32 cube files.
    let rel = (&bundle.result.c_aug - &out.result.c_aug).norm() / out.result.c_aug.norm();
    assert!(rel < 1e-6);
    assert_eq!(bundle.result.lof_trace, out.result.lof_trace);

    let spectra = pipeline::relaxation_spectra(&bundle, &cfg.ilt, &[]).unwrap();
    assert_eq!(spectra.len(), 3);
    let prof = pipeline::profiles(&bundle, &cfg.analysis).unwrap();
    assert_eq!(prof.kinetics.len(), 3);
    assert!(prof.kinetics.iter().all(|k| k.times_h == small_spec().times_h));
}

#[test]
fn config_rejects_bad_fields() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), r#", "non_process": [5]"#);
    assert!(RunConfig::load(&path).unwrap().validate().is_err());
    let path = write_config(dir.path(), r#", "no_such_field": 1"#);
    assert!(RunConfig::load(&path).is_err());
    assert!(MaskConfig::parse("fixed:0.1").is_ok());
    assert!(MaskConfig::parse("median").is_err());
}

#[test]
fn cli_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let spec_path = d.join("spec.json");
    std::fs::write(&spec_path, serde_json::to_string(&small_spec()).unwrap()).unwrap();

    let out = cli(&["phantom", spec_path.to_str().unwrap(), "--out", d.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = d.join("manifest.json");
    assert!(manifest.exists());

    let out = cli(&["rank", manifest.to_str().unwrap(), "--mask", "fixed:0.05", "--out", d.join("rank").to_str().unwrap()]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("suggested rank: 3"));
    assert!(d.join("rank/scree.csv").exists());

    let cfg = write_config(d, "");
    let out = cli(&["decompose", "--config", cfg.to_str().unwrap(), "--threads", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let results = d.join("results");
    assert!(results.join("diagnostics.json").exists());
    assert!(results.join("conc_frame_004.cube").exists());

    let r = results.to_str().unwrap();
    let out = cli(&["ilt", r, "--components", "0,2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(results.join("ilt_component_0.csv").exists());
    assert!(results.join("ilt_component_2.json").exists());
    assert!(!results.join("ilt_component_1.csv").exists());

    let out = cli(&["profiles", r, "--distances", "0,1.5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(results.join("kinetics.csv").exists());
    assert!(results.join("radial_1.5mm.csv").exists());

    let out = cli(&["export-maps", r, "--format", "csv"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("15 maps"));
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let out = cli(&["rank", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());

    let out = cli(&["ilt", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"n_components": 0}"#).unwrap();
    let out = cli(&["decompose", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    let out = cli(&["no-such-command"]);
    assert!(!out.status.success());
}
