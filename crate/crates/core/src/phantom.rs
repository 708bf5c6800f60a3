//! Synthetic swelling-cylinder series with known concentrations and spectra.
//!
//! A cylinder of radius `r0` swells as `r(t) = r0 (1 + delta (1 - exp(-t/tau)))`
//! inside a water bath. Two fronts move inward from `r0`: behind the fast
//! front water is present, and behind the slow front part of it converts to
//! the short-T2 state. Component order is `[slow-front, fast-front, bath]`,
//! plus an optional constant baseline.
//!
//! `C_true` is expressed against unit-norm spectra, so for noiseless frames the
//! unfolded data equals `C_true S_true^T`.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cube::{write_cube, write_manifest, AcquisitionMeta, CubeKind, ForegroundMask, HyperCube, ManifestEntry, Raster};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    Gaussian,
    Rician,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub width: usize,
    pub height: usize,
    pub pixel_size_mm: f64,
    pub te1_ms: f64,
    pub delta_te_ms: f64,
    pub n_echoes: usize,
    pub tr_s: f64,
    pub slice_thickness_um: f64,
    pub times_h: Vec<f64>,
    pub initial_radius_mm: f64,
    pub swelling_fraction: f64,
    pub swelling_time_constant_h: f64,
    /// Inward speed of the fast front in mm/h.
    pub fast_front_speed: f64,
    /// Inward speed of the slow front in mm/h.
    pub slow_front_speed: f64,
    /// Width of the linear edge ramps in pixels.
    pub ramp_width_px: f64,
    /// Share of the water behind the slow front that is in the short-T2
    /// state when the front passes.
    pub conversion_start: f64,
    /// Time after front passage for the conversion to complete.
    pub conversion_time_h: f64,
    /// `[slow-front, fast-front, bath]` relaxation times in ms.
    pub t2_ms: [f64; 3],
    /// Signal amplitude at full occupancy, same order as `t2_ms`. The defaults
    /// give every pure pool the same first-echo intensity.
    pub amplitudes: [f64; 3],
    /// Amplitude of a constant, non-decaying component over the sample.
    pub baseline_amplitude: Option<f64>,
    /// Bath radius in mm; `None` fills the field of view.
    pub bath_radius_mm: Option<f64>,
    /// Peak noiseless signal over noise standard deviation; `None` disables noise.
    pub snr: Option<f64>,
    pub noise_model: NoiseModel,
    pub seed: u64,
}

/// Log-spaced acquisition times.
pub fn log_spaced_times(first_h: f64, last_h: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![first_h];
    }
    let ratio = (last_h / first_h).ln() / (n - 1) as f64;
    (0..n).map(|i| first_h * (ratio * i as f64).exp()).collect()
}

impl Default for PhantomSpec {
    fn default() -> Self {
        let r0 = 2.34;
        PhantomSpec {
            width: 64,
            height: 64,
            pixel_size_mm: 0.07812,
            te1_ms: 5.0,
            delta_te_ms: 5.0,
            n_echoes: 32,
            tr_s: 3.0,
            slice_thickness_um: 1000.0,
            times_h: log_spaced_times(0.3, 21.3, 12),
            initial_radius_mm: r0,
            swelling_fraction: 0.257,
            swelling_time_constant_h: 5.0,
            fast_front_speed: r0 / 6.0,
            slow_front_speed: r0 / 13.0,
            ramp_width_px: 2.0,
            conversion_start: 0.5,
            conversion_time_h: 12.0,
            t2_ms: [7.0, 17.0, 33.0],
            amplitudes: [2.04, 1.34, 1.16],
            baseline_amplitude: None,
            bath_radius_mm: None,
            snr: Some(50.0),
            noise_model: NoiseModel::Gaussian,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        let bad = |m: &str| Err(Error::invalid(format!("phantom spec: {m}")));
        if self.width == 0 || self.height == 0 {
            return bad("image size must be positive");
        }
        if self.n_echoes < 2 {
            return bad("at least two echoes are required");
        }
        if self.times_h.is_empty() {
            return bad("at least one frame is required");
        }
        if self.times_h.iter().any(|t| !(t.is_finite() && *t >= 0.0)) || self.times_h.windows(2).any(|w| w[1] <= w[0]) {
            return bad("frame times must be non-negative and strictly increasing");
        }
        for (name, v) in [
            ("pixel_size_mm", self.pixel_size_mm),
            ("te1_ms", self.te1_ms),
            ("delta_te_ms", self.delta_te_ms),
            ("initial_radius_mm", self.initial_radius_mm),
            ("swelling_time_constant_h", self.swelling_time_constant_h),
            ("fast_front_speed", self.fast_front_speed),
            ("slow_front_speed", self.slow_front_speed),
            ("ramp_width_px", self.ramp_width_px),
            ("conversion_time_h", self.conversion_time_h),
        ] {
            if !pos(v) {
                return bad(&format!("{name} must be positive"));
            }
        }
        if self.t2_ms.iter().any(|&v| !pos(v)) {
            return bad("relaxation times must be positive");
        }
        if self.amplitudes.iter().any(|&v| !pos(v)) || self.baseline_amplitude.is_some_and(|b| !pos(b)) {
            return bad("amplitudes must be positive");
        }
        if !(self.swelling_fraction.is_finite() && self.swelling_fraction >= 0.0) {
            return bad("swelling_fraction must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.conversion_start) {
            return bad("conversion_start must lie in [0, 1]");
        }
        if self.slow_front_speed > self.fast_front_speed {
            return bad("slow front must not outrun the fast front");
        }
        if let Some(rb) = self.bath_radius_mm {
            if !(rb > self.initial_radius_mm * (1.0 + self.swelling_fraction)) {
                return bad("bath radius must exceed the swollen sample radius");
            }
        }
        if let Some(snr) = self.snr {
            if !pos(snr) {
                return bad("snr must be positive");
            }
        }
        Ok(())
    }

    pub fn n_components(&self) -> usize {
        3 + usize::from(self.baseline_amplitude.is_some())
    }

    pub fn echo_times_ms(&self) -> Vec<f64> {
        (0..self.n_echoes).map(|m| self.te1_ms + m as f64 * self.delta_te_ms).collect()
    }

    pub fn meta(&self, frame_time_h: f64) -> AcquisitionMeta {
        AcquisitionMeta {
            te1_ms: self.te1_ms,
            delta_te_ms: self.delta_te_ms,
            n_echoes: self.n_echoes,
            tr_s: self.tr_s,
            fov_mm: [self.width as f64 * self.pixel_size_mm, self.height as f64 * self.pixel_size_mm],
            matrix_size: (self.width, self.height),
            slice_thickness_um: self.slice_thickness_um,
            frame_time_h,
        }
    }

    pub fn radius_mm(&self, t_h: f64) -> f64 {
        self.initial_radius_mm * (1.0 + self.swelling_fraction * (1.0 - (-t_h / self.swelling_time_constant_h).exp()))
    }

    /// Time at which each front reaches the center.
    pub fn center_arrival_h(&self) -> (f64, f64) {
        (self.initial_radius_mm / self.fast_front_speed, self.initial_radius_mm / self.slow_front_speed)
    }

    /// Unnormalized decay of each component, one column per component.
    fn decays(&self) -> DMatrix<f64> {
        let te = self.echo_times_ms();
        let k = self.n_components();
        DMatrix::from_fn(self.n_echoes, k, |m, q| if q < 3 { (-te[m] / self.t2_ms[q]).exp() } else { 1.0 })
    }

    /// Occupancy of each component at a pixel `r` mm from the center.
    fn occupancy(&self, r: f64, t: f64) -> [f64; 4] {
        let ramp_mm = self.ramp_width_px * self.pixel_size_mm;
        let edge = |x: f64| (0.5 + x / ramp_mm).clamp(0.0, 1.0);
        let r0 = self.initial_radius_mm;
        let inside = edge(self.radius_mm(t) - r);
        let bath = match self.bath_radius_mm {
            Some(rb) => (1.0 - inside) * edge(rb - r),
            None => 1.0 - inside,
        };
        // Material outside r0 only exists once hydrated, so fronts are clipped there.
        let depth = (r0 - r).max(0.0);
        let passed_fast = edge(self.fast_front_speed * t - depth);
        let passed_slow = edge(self.slow_front_speed * t - depth);
        let t_slow = depth / self.slow_front_speed;
        let converted = (self.conversion_start + (1.0 - self.conversion_start) * (t - t_slow) / self.conversion_time_h)
            .clamp(0.0, 1.0);
        let slow = passed_slow * converted;
        let fast = (passed_fast - slow).max(0.0);
        let base = if self.baseline_amplitude.is_some() { inside } else { 0.0 };
        [inside * slow, inside * fast, bath, base]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomTruth {
    /// `c_true[frame][component]`.
    pub c_true: Vec<Vec<Raster>>,
    /// `n_echoes x k`, unit-norm columns.
    pub s_true: DMatrix<f64>,
    /// Pixels with any nonzero concentration, per frame.
    pub masks: Vec<ForegroundMask>,
    pub noise_sigma: f64,
    pub spec: PhantomSpec,
}

impl PhantomTruth {
    /// Truth concentrations of one frame as `pixels x k` over the given pixels.
    pub fn c_block(&self, frame: usize, index_map: &[(usize, usize)]) -> DMatrix<f64> {
        let maps = &self.c_true[frame];
        DMatrix::from_fn(index_map.len(), maps.len(), |i, q| {
            let (r, c) = index_map[i];
            maps[q].get(r, c)
        })
    }
}

pub fn generate(spec: &PhantomSpec) -> Result<(Vec<HyperCube>, PhantomTruth)> {
    spec.validate()?;
    let (w, h, n) = (spec.width, spec.height, spec.n_echoes);
    let k = spec.n_components();
    let decays = spec.decays();
    let norms: Vec<f64> = decays.column_iter().map(|c| c.norm()).collect();
    let s_true = DMatrix::from_fn(n, k, |m, q| decays[(m, q)] / norms[q]);
    let amps: Vec<f64> = (0..k).map(|q| if q < 3 { spec.amplitudes[q] } else { spec.baseline_amplitude.unwrap() }).collect();
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;

    let mut c_true = Vec::with_capacity(spec.times_h.len());
    for &t in &spec.times_h {
        let mut maps = vec![vec![0.0; w * h]; k];
        for row in 0..h {
            for col in 0..w {
                let r = spec.pixel_size_mm * ((col as f64 - cx).powi(2) + (row as f64 - cy).powi(2)).sqrt();
                let occ = spec.occupancy(r, t);
                for q in 0..k {
                    maps[q][row * w + col] = amps[q] * occ[q] * norms[q];
                }
            }
        }
        c_true.push(maps.into_iter().map(|data| Raster { width: w, height: h, data }).collect::<Vec<_>>());
    }

    let clean: Vec<Vec<f64>> = c_true
        .iter()
        .map(|maps| {
            let mut data = vec![0.0; w * h * n];
            for p in 0..w * h {
                for m in 0..n {
                    data[p * n + m] = (0..k).map(|q| maps[q].data[p] * s_true[(m, q)]).sum();
                }
            }
            data
        })
        .collect();
    let peak = clean.iter().flatten().fold(0.0f64, |a, &v| a.max(v.abs()));
    let sigma = spec.snr.map_or(0.0, |snr| peak / snr);

    let frames: Vec<HyperCube> = clean
        .into_par_iter()
        .enumerate()
        .map(|(f, mut data)| {
            if sigma > 0.0 {
                add_noise(&mut data, sigma, spec.noise_model, frame_seed(spec.seed, f));
            }
            HyperCube::new(spec.meta(spec.times_h[f]), data)
        })
        .collect::<Result<_>>()?;

    let masks = c_true
        .iter()
        .map(|maps| {
            let bits = (0..w * h).map(|p| maps.iter().any(|m| m.data[p] > 0.0)).collect();
            ForegroundMask::new(w, h, bits)
        })
        .collect::<Result<_>>()?;
    Ok((frames, PhantomTruth { c_true, s_true, masks, noise_sigma: sigma, spec: spec.clone() }))
}

fn frame_seed(seed: u64, frame: usize) -> u64 {
    // SplitMix64 finalizer over (seed, frame).
    let mut z = seed ^ (frame as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn add_noise(data: &mut [f64], sigma: f64, model: NoiseModel, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("sigma is positive and finite");
    for v in data.iter_mut() {
        *v = match model {
            NoiseModel::Gaussian => *v + normal.sample(&mut rng),
            NoiseModel::Rician => {
                let re = *v + normal.sample(&mut rng);
                let im = normal.sample(&mut rng);
                re.hypot(im)
            }
        };
    }
}

/// Writes frames, a manifest and a `truth/` directory; returns the manifest path.
pub fn write_phantom(frames: &[HyperCube], truth: &PhantomTruth, dir: &Path) -> Result<PathBuf> {
    let truth_dir = dir.join("truth");
    fs::create_dir_all(&truth_dir).map_err(|e| Error::io(&truth_dir, e))?;
    let mut entries = Vec::with_capacity(frames.len());
    for (f, cube) in frames.iter().enumerate() {
        let name = format!("frame_{f:03}.cube");
        write_cube(cube, &dir.join(&name))?;
        entries.push(ManifestEntry { path: PathBuf::from(name), frame_time_h: cube.meta().frame_time_h });

        let maps = &truth.c_true[f];
        let (w, h, k) = (cube.width(), cube.height(), maps.len());
        let mut data = vec![0.0; w * h * k];
        for p in 0..w * h {
            for q in 0..k {
                data[p * k + q] = maps[q].data[p];
            }
        }
        let mut meta = cube.meta().clone();
        meta.n_echoes = k;
        let conc = HyperCube::with_kind(meta, CubeKind::Concentration, data)?;
        write_cube(&conc, &truth_dir.join(format!("c_true_{f:03}.cube")))?;
    }
    let manifest = dir.join("manifest.json");
    write_manifest(&entries, &manifest)?;

    let te = truth.spec.echo_times_ms();
    let mut csv = String::from("echo_time_ms");
    for q in 0..truth.s_true.ncols() {
        csv.push_str(&format!(",component_{q}"));
    }
    csv.push('\n');
    for (m, t) in te.iter().enumerate() {
        csv.push_str(&t.to_string());
        for q in 0..truth.s_true.ncols() {
            csv.push_str(&format!(",{}", truth.s_true[(m, q)]));
        }
        csv.push('\n');
    }
    let s_path = truth_dir.join("s_true.csv");
    fs::write(&s_path, csv).map_err(|e| Error::io(&s_path, e))?;
    let spec_path = truth_dir.join("spec.json");
    let json = serde_json::to_string_pretty(&truth.spec).expect("spec serializes");
    fs::write(&spec_path, json).map_err(|e| Error::io(&spec_path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cube::unfold;

    fn small() -> PhantomSpec {
        PhantomSpec { width: 24, height: 24, pixel_size_mm: 0.2, times_h: vec![0.5, 3.0, 8.0], ..Default::default() }
    }

    #[test]
    fn noiseless_identity() {
        let spec = PhantomSpec { snr: None, ..small() };
        let (frames, truth) = generate(&spec).unwrap();
        for (f, cube) in frames.iter().enumerate() {
            let table = unfold(cube, &ForegroundMask::full(24, 24)).unwrap();
            let c = truth.c_block(f, &table.index_map);
            let model = &c * truth.s_true.transpose();
            assert!((&table.values - &model).norm() <= 1e-12 * model.norm());
        }
    }

    #[test]
    fn dry_core_is_dark_before_arrival() {
        let spec = PhantomSpec { snr: None, ..small() };
        let (frames, _) = generate(&spec).unwrap();
        let center = frames[0].echo_vector(12, 12);
        assert!(center.iter().all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn seeded_generation_is_repeatable() {
        let (a, _) = generate(&small()).unwrap();
        let (b, _) = generate(&small()).unwrap();
        assert_eq!(a, b);
        let (c, _) = generate(&PhantomSpec { seed: 9, ..small() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn area_grows() {
        let spec = PhantomSpec { snr: None, ..Default::default() };
        let (_, truth) = generate(&spec).unwrap();
        let areas: Vec<usize> = truth
            .c_true
            .iter()
            .map(|maps| (0..64 * 64).filter(|&p| maps[0].data[p] + maps[1].data[p] > 0.0).count())
            .collect();
        assert!(areas.windows(2).all(|w| w[1] >= w[0]), "{areas:?}");
    }

    #[test]
    fn spectra_are_unit_norm() {
        let (_, truth) = generate(&PhantomSpec { baseline_amplitude: Some(0.2), ..small() }).unwrap();
        assert_eq!(truth.s_true.ncols(), 4);
        for col in truth.s_true.column_iter() {
            assert!((col.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_specs() {
        assert!(generate(&PhantomSpec { snr: Some(0.0), ..small() }).is_err());
        assert!(generate(&PhantomSpec { slow_front_speed: 1.0, fast_front_speed: 0.5, ..small() }).is_err());
        assert!(generate(&PhantomSpec { times_h: vec![], ..small() }).is_err());
    }

    #[test]
    fn default_fronts_reach_center_at_6_and_13_hours() {
        let (fast, slow) = PhantomSpec::default().center_arrival_h();
        assert!((fast - 6.0).abs() < 1e-12 && (slow - 13.0).abs() < 1e-12);
    }
}
