//! End-to-end steps shared by the command-line tool and the C interface,
//! driven by a JSON run configuration.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{
    estimate_center, kinetic_profiles, radial_series, KineticProfile, RadialOptions, RadialSeries,
};
use crate::cube::{
    build_multiset, compute_mask, mask_from_mean_image, read_cube, read_manifest, unfold, ForegroundMask, HyperCube,
    MaskMethod, MultisetStack, Raster,
};
use crate::error::{Error, Result};
use crate::ilt::{peaks, IltParams, IltSolver, Peak, RelaxationSpectrum};
use crate::mcr::{als_decompose, default_projection_params, AlsOptions, ConstraintSpec, DecompositionResult, Normalization};
use crate::numkit::{svd_scan, RankScan};
use crate::results::{write_result_dir, ResultBundle, RunSummary};
use crate::simplisma::{simplisma_init, PuritySelection, DEFAULT_OFFSET_FRACTION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum MaskConfig {
    #[default]
    Otsu,
    FixedFraction {
        fraction: f64,
    },
    External {
        path: PathBuf,
    },
}

impl MaskConfig {
    pub fn method(&self) -> MaskMethod {
        match self {
            MaskConfig::Otsu => MaskMethod::Otsu,
            MaskConfig::FixedFraction { fraction } => MaskMethod::FixedFraction(*fraction),
            MaskConfig::External { path } => MaskMethod::External(path.clone()),
        }
    }

    /// Parses `otsu`, `fixed:<f>` or `external:<path>`.
    pub fn parse(text: &str) -> Result<Self> {
        if text == "otsu" {
            return Ok(MaskConfig::Otsu);
        }
        if let Some(f) = text.strip_prefix("fixed:") {
            let fraction = f.parse().map_err(|_| Error::invalid(format!("bad mask fraction {f:?}")))?;
            return Ok(MaskConfig::FixedFraction { fraction });
        }
        if let Some(p) = text.strip_prefix("external:") {
            return Ok(MaskConfig::External { path: PathBuf::from(p) });
        }
        Err(Error::invalid(format!("unknown mask method {text:?}")))
    }
}

/// Whether each frame gets its own mask or all frames share one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    #[default]
    PerFrame,
    Shared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstraintConfig {
    pub nonneg_c: bool,
    pub nonneg_s: bool,
    pub normalize_s: Normalization,
    /// One flag per component; omitted means no shape constraint.
    pub shape_decay: Option<Vec<bool>>,
    pub ilt_projection: IltParams,
}

impl Default for ConstraintConfig {
    fn default() -> Self {
        ConstraintConfig {
            nonneg_c: true,
            nonneg_s: true,
            normalize_s: Normalization::Euclidean,
            shape_decay: None,
            ilt_projection: default_projection_params(),
        }
    }
}

impl ConstraintConfig {
    pub fn resolve(&self, k: usize) -> ConstraintSpec {
        ConstraintSpec {
            nonneg_c: self.nonneg_c,
            nonneg_s: self.nonneg_s,
            normalize_s: self.normalize_s,
            shape_decay: self.shape_decay.clone().unwrap_or_else(|| vec![false; k]),
            ilt_projection: self.ilt_projection.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub radial_distances_mm: Vec<f64>,
    /// `(cx, cy)` in pixels; defaults to the centroid of the first mask.
    pub center: Option<(f64, f64)>,
    pub annulus_width_px: f64,
    pub single_pixel: bool,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            radial_distances_mm: vec![0.0, 1.72, 2.31, 3.15],
            center: None,
            annulus_width_px: 1.0,
            single_pixel: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub mask: MaskConfig,
    pub mask_mode: MaskMode,
    pub n_components: usize,
    pub simplisma_offset: f64,
    pub constraints: ConstraintConfig,
    /// Components treated as non-process: no shape constraint, no ILT.
    pub non_process: Vec<usize>,
    pub als: AlsOptions,
    pub ilt: IltParams,
    pub output_dir: PathBuf,
    pub analysis: AnalysisConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            manifest: PathBuf::from("manifest.json"),
            mask: MaskConfig::default(),
            mask_mode: MaskMode::default(),
            n_components: 0,
            simplisma_offset: DEFAULT_OFFSET_FRACTION,
            constraints: ConstraintConfig::default(),
            non_process: Vec::new(),
            als: AlsOptions::default(),
            ilt: IltParams::default(),
            output_dir: PathBuf::from("results"),
            analysis: AnalysisConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::format("config", format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        rebase(&mut cfg.manifest);
        rebase(&mut cfg.output_dir);
        if let MaskConfig::External { path } = &mut cfg.mask {
            rebase(path);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_components == 0 {
            return Err(Error::invalid("n_components must be at least 1"));
        }
        if !(self.simplisma_offset > 0.0) {
            return Err(Error::invalid("simplisma_offset must be positive"));
        }
        if let Some(&q) = self.non_process.iter().find(|&&q| q >= self.n_components) {
            return Err(Error::invalid(format!("non_process component {q} out of range")));
        }
        let spec = self.constraints.resolve(self.n_components);
        spec.validate(self.n_components)?;
        if self.non_process.iter().any(|&q| spec.shape_decay[q]) {
            return Err(Error::invalid("non-process components cannot carry the shape constraint"));
        }
        if !self.manifest.is_file() {
            return Err(Error::io(&self.manifest, std::io::Error::from(std::io::ErrorKind::NotFound)));
        }
        if let MaskConfig::External { path } = &self.mask {
            if !path.is_file() {
                return Err(Error::io(path, std::io::Error::from(std::io::ErrorKind::NotFound)));
            }
        }
        self.als.validate()?;
        self.ilt.clone().validated()?;
        Ok(())
    }
}

/// Frames, masks and the multiset built from a manifest.
pub struct LoadedSeries {
    pub frames: Vec<HyperCube>,
    pub masks: Vec<ForegroundMask>,
    pub stack: MultisetStack,
}

pub fn load_series(manifest: &Path, mask: &MaskConfig, mode: MaskMode) -> Result<LoadedSeries> {
    let entries = read_manifest(manifest)?;
    let frames: Vec<HyperCube> = entries.iter().map(|e| read_cube(&e.path)).collect::<Result<_>>()?;
    let times: Vec<f64> = entries.iter().map(|e| e.frame_time_h).collect();
    let method = mask.method();
    let masks: Vec<ForegroundMask> = match (mode, &method) {
        (MaskMode::Shared, MaskMethod::Otsu | MaskMethod::FixedFraction(_)) => {
            let (w, h) = (frames[0].width(), frames[0].height());
            if frames.iter().any(|f| f.width() != w || f.height() != h) {
                return Err(Error::invalid("frames differ in image size"));
            }
            let mut mean = Raster { width: w, height: h, data: vec![0.0; w * h] };
            for f in &frames {
                for (a, b) in mean.data.iter_mut().zip(f.echo_mean_image().data) {
                    *a += b / frames.len() as f64;
                }
            }
            let shared = mask_from_mean_image(&mean, &method)?;
            vec![shared; frames.len()]
        }
        _ => frames.iter().map(|f| compute_mask(f, &method)).collect::<Result<_>>()?,
    };
    let tables = frames.iter().zip(&masks).map(|(f, m)| unfold(f, m)).collect::<Result<Vec<_>>>()?;
    let stack = build_multiset(tables, times)?;
    Ok(LoadedSeries { frames, masks, stack })
}

pub fn rank_scan(series: &LoadedSeries) -> Result<RankScan> {
    svd_scan(&series.stack.augmented())
}

pub struct Decomposition {
    pub result: DecompositionResult,
    pub selection: PuritySelection,
    pub summary: RunSummary,
}

/// SIMPLISMA initialization, ALS and the result directory.
pub fn decompose(cfg: &RunConfig, series: &LoadedSeries) -> Result<Decomposition> {
    let k = cfg.n_components;
    let d = series.stack.augmented();
    let (s0, selection) = simplisma_init(&d, k, cfg.simplisma_offset)?;
    for (row, purity) in selection.selected_rows.iter().zip(&selection.purity_values) {
        if let Some((frame, (r, c))) = series.stack.locate_row(*row) {
            log::info!("pure pixel: row {row} = frame {frame} pixel ({r}, {c}), purity {purity:.4}");
        }
    }
    let constraints = cfg.constraints.resolve(k);
    let result = als_decompose(&series.stack, &s0, &constraints, &cfg.als)?;
    let layout = series.stack.layout();
    let summary =
        write_result_dir(&result, &layout, series.stack.meta(), &cfg.non_process, Some(&selection), &cfg.output_dir)?;
    let json = serde_json::to_string_pretty(cfg).map_err(|e| Error::format("config", e.to_string()))?;
    let path = cfg.output_dir.join("config.json");
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(Decomposition { result, selection, summary })
}

pub struct ComponentSpectrum {
    pub component: usize,
    pub spectrum: RelaxationSpectrum,
    pub peaks: Vec<Peak>,
}

/// ILT of the selected spectra. An empty selection means every component not
/// marked non-process; non-process components are skipped with a warning.
pub fn relaxation_spectra(bundle: &ResultBundle, params: &IltParams, selection: &[usize]) -> Result<Vec<ComponentSpectrum>> {
    let k = bundle.summary.n_components;
    let chosen: Vec<usize> = if selection.is_empty() { (0..k).collect() } else { selection.to_vec() };
    if let Some(&q) = chosen.iter().find(|&&q| q >= k) {
        return Err(Error::invalid(format!("component {q} out of range (k = {k})")));
    }
    let solver = IltSolver::new(&bundle.summary.echo_times_ms, params)?;
    let mut out = Vec::new();
    for q in chosen {
        if bundle.summary.non_process.contains(&q) {
            if selection.is_empty() {
                log::info!("component {q} is non-process; relaxation analysis not applied");
            } else {
                log::warn!("component {q} is non-process; skipped");
            }
            continue;
        }
        let col: Vec<f64> = bundle.result.s.column(q).iter().copied().collect();
        let spectrum = solver.solve(&col)?;
        let peaks = peaks(&spectrum);
        out.push(ComponentSpectrum { component: q, spectrum, peaks });
    }
    Ok(out)
}

pub struct Profiles {
    pub kinetics: Vec<KineticProfile>,
    pub center: (f64, f64),
    /// One entry per requested distance, each holding a series per component.
    pub radial: Vec<Vec<RadialSeries>>,
}

pub fn profiles(bundle: &ResultBundle, analysis: &AnalysisConfig) -> Result<Profiles> {
    let kinetics = kinetic_profiles(&bundle.result, &bundle.layout)?;
    let center = match analysis.center {
        Some(c) => c,
        None => estimate_center(&bundle.layout.mask(0))?,
    };
    let opts = RadialOptions { annulus_width_px: analysis.annulus_width_px, single_pixel: analysis.single_pixel };
    let radial = analysis
        .radial_distances_mm
        .iter()
        .map(|&d| radial_series(&bundle.result, &bundle.layout, center, d, &opts))
        .collect::<Result<Vec<_>>>()?;
    for series in &radial {
        if let Some(s) = series.first() {
            if s.values.iter().any(Option::is_none) {
                log::warn!("no foreground pixels at {} mm in some frames; marked NA", s.distance_mm);
            }
        }
    }
    Ok(Profiles { kinetics, center, radial })
}
