//! On-disk result directory of a decomposition run.
//!
//! ```text
//! diagnostics.json        fit statistics, status, layout and constraint echo
//! spectra.csv             echo_time_ms, component_0 .. component_{k-1}
//! lof_trace.csv           iteration, lack_of_fit_pct
//! conc_frame_###.cube     concentration maps (component axis in place of echoes)
//! mask_frame_###.pgm      foreground mask of each frame
//! ```

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cube::{read_cube, read_mask_pgm, refold, write_cube, write_mask_pgm, AcquisitionMeta, CubeKind, HyperCube, SeriesLayout};
use crate::error::{Error, Result};
use crate::mcr::{split_concentrations, AlsStatus, ConstraintSpec, DecompositionResult};
use crate::numkit::FitDiagnostics;
use crate::simplisma::PuritySelection;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub n_components: usize,
    pub status: AlsStatus,
    pub iterations: usize,
    pub best_iteration: usize,
    pub diagnostics: FitDiagnostics,
    pub frame_times_h: Vec<f64>,
    pub echo_times_ms: Vec<f64>,
    pub block_offsets: Vec<usize>,
    pub width: usize,
    pub height: usize,
    pub pixel_size_mm: (f64, f64),
    pub constraints: ConstraintSpec,
    /// Components excluded from relaxation analysis.
    pub non_process: Vec<usize>,
    pub initialization: Option<PuritySelection>,
}

/// A result directory loaded back into memory.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultBundle {
    pub result: DecompositionResult,
    pub layout: SeriesLayout,
    pub summary: RunSummary,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_result_dir(
    result: &DecompositionResult,
    layout: &SeriesLayout,
    meta: &AcquisitionMeta,
    non_process: &[usize],
    initialization: Option<&PuritySelection>,
    dir: &Path,
) -> Result<RunSummary> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let k = result.n_components();
    let echo_times_ms = meta.echo_times_ms();
    if echo_times_ms.len() != result.s.nrows() {
        return Err(Error::invalid("acquisition echo count does not match the spectra"));
    }
    let summary = RunSummary {
        n_components: k,
        status: result.status,
        iterations: result.lof_trace.len(),
        best_iteration: result.best_iteration,
        diagnostics: result.diagnostics,
        frame_times_h: layout.frame_times_h.clone(),
        echo_times_ms: echo_times_ms.clone(),
        block_offsets: result.block_offsets.clone(),
        width: layout.width,
        height: layout.height,
        pixel_size_mm: layout.pixel_size_mm,
        constraints: result.constraints.clone(),
        non_process: non_process.to_vec(),
        initialization: initialization.cloned(),
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::format("diagnostics", e.to_string()))?;
    write_text(&dir.join("diagnostics.json"), &json)?;

    let mut csv = String::from("echo_time_ms");
    for q in 0..k {
        csv.push_str(&format!(",component_{q}"));
    }
    csv.push('\n');
    for (m, te) in echo_times_ms.iter().enumerate() {
        csv.push_str(&te.to_string());
        for q in 0..k {
            csv.push_str(&format!(",{}", result.s[(m, q)]));
        }
        csv.push('\n');
    }
    write_text(&dir.join("spectra.csv"), &csv)?;

    let mut trace = String::from("iteration,lack_of_fit_pct\n");
    for (i, lof) in result.lof_trace.iter().enumerate() {
        trace.push_str(&format!("{},{lof}\n", i + 1));
    }
    write_text(&dir.join("lof_trace.csv"), &trace)?;

    let blocks = split_concentrations(result, layout)?;
    for (f, block) in blocks.iter().enumerate() {
        let maps: Vec<_> = (0..k)
            .map(|q| {
                let col: Vec<f64> = block.column(q).iter().copied().collect();
                refold(&col, &layout.index_maps[f], layout.width, layout.height, 0.0)
            })
            .collect::<Result<_>>()?;
        let mut data = vec![0.0; layout.width * layout.height * k];
        for p in 0..layout.width * layout.height {
            for q in 0..k {
                data[p * k + q] = maps[q].data[p];
            }
        }
        let mut m = meta.clone();
        m.n_echoes = k;
        m.frame_time_h = layout.frame_times_h[f];
        let cube = HyperCube::with_kind(m, CubeKind::Concentration, data)?;
        write_cube(&cube, &dir.join(format!("conc_frame_{f:03}.cube")))?;
        write_mask_pgm(&layout.mask(f), &dir.join(format!("mask_frame_{f:03}.pgm")))?;
    }
    Ok(summary)
}

fn parse_spectra(text: &str, k: usize) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|e| Error::format("spectra.csv", format!("{v:?}: {e}"))))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    if rows.iter().any(|r| r.len() != k + 1) {
        return Err(Error::format("spectra.csv", format!("expected {} columns", k + 1)));
    }
    Ok(DMatrix::from_fn(rows.len(), k, |m, q| rows[m][q + 1]))
}

pub fn read_result_dir(dir: &Path) -> Result<ResultBundle> {
    let diag_path = dir.join("diagnostics.json");
    let text = fs::read_to_string(&diag_path).map_err(|e| Error::io(&diag_path, e))?;
    let summary: RunSummary =
        serde_json::from_str(&text).map_err(|e| Error::format("diagnostics.json", e.to_string()))?;
    let k = summary.n_components;
    let spectra_path = dir.join("spectra.csv");
    let text = fs::read_to_string(&spectra_path).map_err(|e| Error::io(&spectra_path, e))?;
    let s = parse_spectra(&text, k)?;
    if s.nrows() != summary.echo_times_ms.len() {
        return Err(Error::format("spectra.csv", "row count differs from the echo count"));
    }

    let n_frames = summary.frame_times_h.len();
    let mut masks = Vec::with_capacity(n_frames);
    let mut cubes = Vec::with_capacity(n_frames);
    for f in 0..n_frames {
        masks.push(read_mask_pgm(&dir.join(format!("mask_frame_{f:03}.pgm")))?);
        let cube = read_cube(&dir.join(format!("conc_frame_{f:03}.cube")))?;
        if cube.kind() != CubeKind::Concentration || cube.n_echoes() != k {
            return Err(Error::format("kind", format!("frame {f} is not a {k}-component concentration cube")));
        }
        cubes.push(cube);
    }
    let layout = SeriesLayout::from_masks(&masks, summary.frame_times_h.clone(), summary.pixel_size_mm)?;
    if layout.row_offsets != summary.block_offsets {
        return Err(Error::format("block_offsets", "masks do not reproduce the recorded block offsets"));
    }
    let mut c_aug = DMatrix::zeros(layout.n_rows(), k);
    for (f, cube) in cubes.iter().enumerate() {
        for (i, &(r, c)) in layout.index_maps[f].iter().enumerate() {
            for q in 0..k {
                c_aug[(layout.row_offsets[f] + i, q)] = cube.value(r, c, q);
            }
        }
    }
    let trace_path = dir.join("lof_trace.csv");
    let text = fs::read_to_string(&trace_path).map_err(|e| Error::io(&trace_path, e))?;
    let lof_trace = text
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(',')
                .nth(1)
                .and_then(|v| v.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::format("lof_trace.csv", format!("bad line {l:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let result = DecompositionResult {
        c_aug,
        s,
        diagnostics: summary.diagnostics,
        lof_trace,
        status: summary.status,
        best_iteration: summary.best_iteration,
        constraints: summary.constraints.clone(),
        block_offsets: summary.block_offsets.clone(),
    };
    Ok(ResultBundle { result, layout, summary })
}
