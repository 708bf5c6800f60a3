//! Distribution maps, kinetic profiles and radial time series from a
//! decomposition.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cube::{refold, ForegroundMask, Raster, SeriesLayout};
use crate::error::{Error, Result};
use crate::mcr::{split_concentrations, DecompositionResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KineticProfile {
    pub component: usize,
    pub times_h: Vec<f64>,
    pub mean_concentration: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialSeries {
    pub component: usize,
    pub distance_mm: f64,
    pub times_h: Vec<f64>,
    /// `None` where no foreground pixel fell in the annulus.
    pub values: Vec<Option<f64>>,
    pub pixel_counts: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialOptions {
    pub annulus_width_px: f64,
    /// Sample the single pixel at `(cx + d, cy)` instead of an annulus mean.
    pub single_pixel: bool,
}

impl Default for RadialOptions {
    fn default() -> Self {
        RadialOptions { annulus_width_px: 1.0, single_pixel: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapFormat {
    Pgm16,
    Csv,
}

/// Linear mapping from 16-bit gray levels back to concentrations:
/// `value = offset + scale * gray`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapScale {
    pub scale: f64,
    pub offset: f64,
    pub min: f64,
    pub max: f64,
}

/// `maps[frame][component]`, background filled with 0.
pub fn distribution_maps(result: &DecompositionResult, layout: &SeriesLayout) -> Result<Vec<Vec<Raster>>> {
    let blocks = split_concentrations(result, layout)?;
    blocks
        .iter()
        .zip(&layout.index_maps)
        .map(|(block, map)| {
            (0..block.ncols())
                .map(|q| {
                    let col: Vec<f64> = block.column(q).iter().copied().collect();
                    refold(&col, map, layout.width, layout.height, 0.0)
                })
                .collect()
        })
        .collect()
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn kinetic_profiles(result: &DecompositionResult, layout: &SeriesLayout) -> Result<Vec<KineticProfile>> {
    let blocks = split_concentrations(result, layout)?;
    Ok((0..result.n_components())
        .map(|q| KineticProfile {
            component: q,
            times_h: layout.frame_times_h.clone(),
            mean_concentration: blocks
                .iter()
                .map(|b| mean(b.column(q).iter().copied()).unwrap_or(0.0))
                .collect(),
        })
        .collect())
}

/// Centroid `(cx, cy)` of the foreground in pixel units (`x` = column).
pub fn estimate_center(mask: &ForegroundMask) -> Result<(f64, f64)> {
    let coords = mask.coordinates();
    if coords.is_empty() {
        return Err(Error::invalid("cannot locate the center of an empty mask"));
    }
    let n = coords.len() as f64;
    let cx = coords.iter().map(|&(_, c)| c as f64).sum::<f64>() / n;
    let cy = coords.iter().map(|&(r, _)| r as f64).sum::<f64>() / n;
    Ok((cx, cy))
}

/// Pixels sampled at `distance_mm` from `center`, before the foreground test.
fn sample_pixels(layout: &SeriesLayout, center: (f64, f64), distance_mm: f64, opts: &RadialOptions) -> Vec<(usize, usize)> {
    let (cx, cy) = center;
    let (w, h) = (layout.width, layout.height);
    let (px, py) = layout.pixel_size_mm;
    if distance_mm == 0.0 {
        // The center pixel, or the up to four pixels around a fractional center.
        let mut out = Vec::new();
        for r in [cy.floor(), cy.ceil()] {
            for c in [cx.floor(), cx.ceil()] {
                let p = (r as usize, c as usize);
                if r >= 0.0 && c >= 0.0 && p.0 < h && p.1 < w && !out.contains(&p) {
                    out.push(p);
                }
            }
        }
        return out;
    }
    if opts.single_pixel {
        let c = (cx + distance_mm / px).round();
        let r = cy.round();
        return if c >= 0.0 && (c as usize) < w && r >= 0.0 && (r as usize) < h {
            vec![(r as usize, c as usize)]
        } else {
            Vec::new()
        };
    }
    let half = 0.5 * opts.annulus_width_px * px;
    let (lo, hi) = (distance_mm - half, distance_mm + half);
    let mut out = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let d = ((c as f64 - cx) * px).hypot((r as f64 - cy) * py);
            if d >= lo && d <= hi {
                out.push((r, c));
            }
        }
    }
    out
}

/// One series per component at `distance_mm` from `center`.
pub fn radial_series(
    result: &DecompositionResult,
    layout: &SeriesLayout,
    center: (f64, f64),
    distance_mm: f64,
    opts: &RadialOptions,
) -> Result<Vec<RadialSeries>> {
    let (cx, cy) = center;
    if !(cx >= 0.0 && cy >= 0.0 && cx <= (layout.width - 1) as f64 && cy <= (layout.height - 1) as f64) {
        return Err(Error::invalid(format!("center ({cx}, {cy}) lies outside the image")));
    }
    if !(distance_mm >= 0.0 && distance_mm.is_finite()) {
        return Err(Error::invalid("radial distance must be non-negative"));
    }
    if !(layout.pixel_size_mm.0 > 0.0 && layout.pixel_size_mm.1 > 0.0) {
        return Err(Error::invalid("pixel size must be positive"));
    }
    if !(opts.annulus_width_px > 0.0) {
        return Err(Error::invalid("annulus width must be positive"));
    }
    let blocks = split_concentrations(result, layout)?;
    let wanted = sample_pixels(layout, center, distance_mm, opts);
    let k = result.n_components();

    // Row indices of the sampled pixels within each frame block.
    let rows: Vec<Vec<usize>> = layout
        .index_maps
        .iter()
        .map(|map| {
            let mut lookup = vec![usize::MAX; layout.width * layout.height];
            for (i, &(r, c)) in map.iter().enumerate() {
                lookup[r * layout.width + c] = i;
            }
            let mut hit: Vec<usize> =
                wanted.iter().map(|&(r, c)| lookup[r * layout.width + c]).filter(|&i| i != usize::MAX).collect();
            hit.sort_unstable();
            hit
        })
        .collect();

    Ok((0..k)
        .map(|q| RadialSeries {
            component: q,
            distance_mm,
            times_h: layout.frame_times_h.clone(),
            values: blocks
                .iter()
                .zip(&rows)
                .map(|(b, idx)| mean(idx.iter().map(|&i| b[(i, q)])))
                .collect(),
            pixel_counts: rows.iter().map(Vec::len).collect(),
        })
        .collect())
}

pub fn write_kinetics_csv(profiles: &[KineticProfile], path: &Path) -> Result<()> {
    let mut out = String::from("component,time_h,mean_concentration\n");
    for p in profiles {
        for (t, v) in p.times_h.iter().zip(&p.mean_concentration) {
            out.push_str(&format!("{},{t},{v}\n", p.component));
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Missing values are written as `NA`.
pub fn write_radial_csv(series: &[RadialSeries], path: &Path) -> Result<()> {
    let mut out = String::from("component,distance_mm,time_h,value,n_pixels\n");
    for s in series {
        for ((t, v), n) in s.times_h.iter().zip(&s.values).zip(&s.pixel_counts) {
            let v = v.map_or_else(|| "NA".to_string(), |v| v.to_string());
            out.push_str(&format!("{},{},{t},{v},{n}\n", s.component, s.distance_mm));
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes one map. PGM output gets a JSON sidecar next to it holding the
/// gray-level scale.
pub fn export_map(map: &Raster, path: &Path, format: MapFormat) -> Result<()> {
    if map.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("map holds non-finite values"));
    }
    match format {
        MapFormat::Csv => {
            let mut out = String::new();
            for row in map.data.chunks(map.width) {
                let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                out.push_str(&line.join(","));
                out.push('\n');
            }
            fs::write(path, out).map_err(|e| Error::io(path, e))
        }
        MapFormat::Pgm16 => {
            let min = map.data.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = map.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let scale = if max > min { (max - min) / 65535.0 } else { 0.0 };
            let mut bytes = format!("P5\n{} {}\n65535\n", map.width, map.height).into_bytes();
            for &v in &map.data {
                let g = if scale > 0.0 { ((v - min) / scale).round().clamp(0.0, 65535.0) as u16 } else { 0 };
                bytes.extend_from_slice(&g.to_be_bytes());
            }
            fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
            let side = sidecar_path(path);
            let json = serde_json::to_string_pretty(&MapScale { scale, offset: min, min, max }).expect("scale serializes");
            fs::write(&side, json).map_err(|e| Error::io(&side, e))
        }
    }
}

/// Writes `maps[frame][component]` as `map_f###_c##.{pgm,csv}` into `dir`.
pub fn export_maps(maps: &[Vec<Raster>], dir: &Path, format: MapFormat) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ext = match format {
        MapFormat::Pgm16 => "pgm",
        MapFormat::Csv => "csv",
    };
    let mut written = Vec::new();
    for (f, frame) in maps.iter().enumerate() {
        for (q, map) in frame.iter().enumerate() {
            let path = dir.join(format!("map_f{f:03}_c{q:02}.{ext}"));
            export_map(map, &path, format)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Reads a map written by [`export_map`] in PGM form, applying its sidecar scale.
pub fn read_map_pgm16(path: &Path) -> Result<Raster> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (width, height, maxval, offset) = crate::cube::parse_pgm_header(&bytes)?;
    if maxval != 65535 {
        return Err(Error::format("maxval", format!("expected 65535, found {maxval}")));
    }
    let body = &bytes[offset..];
    if body.len() != 2 * width * height {
        return Err(Error::format("payload", "16-bit PGM body has the wrong length"));
    }
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let scale: MapScale = serde_json::from_str(&text).map_err(|e| Error::format("sidecar", e.to_string()))?;
    let data = body
        .chunks_exact(2)
        .map(|b| scale.offset + scale.scale * u16::from_be_bytes([b[0], b[1]]) as f64)
        .collect();
    Ok(Raster { width, height, data })
}

pub fn read_map_csv(path: &Path) -> Result<Raster> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut data = Vec::new();
    let mut width = None;
    let mut height = 0;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let row: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|e| Error::format("csv", format!("{v:?}: {e}"))))
            .collect::<Result<_>>()?;
        if *width.get_or_insert(row.len()) != row.len() {
            return Err(Error::format("csv", "ragged rows"));
        }
        data.extend(row);
        height += 1;
    }
    Ok(Raster { width: width.unwrap_or(0), height, data })
}

/// Mean of each component over one frame block; the reference used by
/// [`kinetic_profiles`].
pub fn column_means(block: &DMatrix<f64>) -> Vec<f64> {
    (0..block.ncols()).map(|q| mean(block.column(q).iter().copied()).unwrap_or(0.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ilt::IltParams;
    use crate::mcr::{AlsStatus, ConstraintSpec, Normalization};
    use crate::numkit::FitDiagnostics;

    fn result_for(layout: &SeriesLayout, c: DMatrix<f64>) -> DecompositionResult {
        let k = c.ncols();
        DecompositionResult {
            c_aug: c,
            s: DMatrix::from_element(4, k, 0.5),
            diagnostics: FitDiagnostics::from_sums(1.0, 0.0).unwrap(),
            lof_trace: vec![0.0],
            status: AlsStatus::Converged,
            best_iteration: 1,
            constraints: ConstraintSpec {
                nonneg_c: true,
                nonneg_s: true,
                normalize_s: Normalization::Euclidean,
                shape_decay: vec![false; k],
                ilt_projection: IltParams::default(),
            },
            block_offsets: layout.row_offsets.clone(),
        }
    }

    fn disk(w: usize, cx: f64, cy: f64, r: f64) -> ForegroundMask {
        let bits = (0..w * w)
            .map(|i| ((i % w) as f64 - cx).hypot((i / w) as f64 - cy) <= r)
            .collect();
        ForegroundMask::new(w, w, bits).unwrap()
    }

    #[test]
    fn ones_map() {
        let mask = disk(9, 4.0, 4.0, 3.0);
        let layout = SeriesLayout::from_masks(&[mask.clone()], vec![1.0], (0.1, 0.1)).unwrap();
        let res = result_for(&layout, DMatrix::from_element(mask.count(), 1, 1.0));
        let maps = distribution_maps(&res, &layout).unwrap();
        for (i, &b) in mask.bits().iter().enumerate() {
            assert_eq!(maps[0][0].data[i], if b { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn centroids() {
        let (cx, cy) = estimate_center(&disk(21, 10.0, 10.0, 6.0)).unwrap();
        assert!((cx - 10.0).abs() < 0.5 && (cy - 10.0).abs() < 0.5);
        let mut bits = vec![false; 25];
        bits[7] = true;
        assert_eq!(estimate_center(&ForegroundMask::new(5, 5, bits).unwrap()).unwrap(), (2.0, 1.0));
    }

    #[test]
    fn half_disk_centroid() {
        // Upper half of a disk of radius r: centroid lies 4r/(3 pi) above the diameter.
        let (w, r, c0) = (401usize, 150.0, 200.0);
        let bits = (0..w * w)
            .map(|i| {
                let (x, y) = ((i % w) as f64 - c0, c0 - (i / w) as f64);
                x.hypot(y) <= r && y >= 0.0
            })
            .collect();
        let (_, cy) = estimate_center(&ForegroundMask::new(w, w, bits).unwrap()).unwrap();
        let expected = 4.0 * r / (3.0 * std::f64::consts::PI);
        assert!(((c0 - cy) - expected).abs() / expected < 0.02);
    }

    #[test]
    fn center_between_pixels_averages_four() {
        let mask = ForegroundMask::full(4, 4);
        let layout = SeriesLayout::from_masks(&[mask], vec![0.0], (0.1, 0.1)).unwrap();
        let c = DMatrix::from_fn(16, 1, |i, _| i as f64);
        let res = result_for(&layout, c);
        let s = radial_series(&res, &layout, (1.5, 1.5), 0.0, &RadialOptions::default()).unwrap();
        assert_eq!(s[0].values[0], Some((5.0 + 6.0 + 9.0 + 10.0) / 4.0));
        assert_eq!(s[0].pixel_counts[0], 4);
        let s = radial_series(&res, &layout, (2.0, 1.0), 0.0, &RadialOptions::default()).unwrap();
        assert_eq!(s[0].values[0], Some(6.0));
    }

    #[test]
    fn uniform_and_whole_image_annulus() {
        let masks = [disk(15, 7.0, 7.0, 6.0), disk(15, 7.0, 7.0, 7.0)];
        let layout = SeriesLayout::from_masks(&masks, vec![0.5, 2.0], (0.2, 0.2)).unwrap();
        let c = DMatrix::from_element(layout.n_rows(), 2, 3.25);
        let res = result_for(&layout, c);
        for d in [0.0, 0.4, 1.0] {
            let s = radial_series(&res, &layout, (7.0, 7.0), d, &RadialOptions::default()).unwrap();
            assert!(s[1].values.iter().all(|v| *v == Some(3.25)));
        }
        let c = DMatrix::from_fn(layout.n_rows(), 2, |i, q| (i * (q + 1)) as f64 * 0.1);
        let res = result_for(&layout, c);
        let wide = RadialOptions { annulus_width_px: 100.0, single_pixel: false };
        let s = radial_series(&res, &layout, (7.0, 7.0), 0.5, &wide).unwrap();
        let kin = kinetic_profiles(&res, &layout).unwrap();
        for q in 0..2 {
            for f in 0..2 {
                let v = s[q].values[f].unwrap();
                assert!((v - kin[q].mean_concentration[f]).abs() <= 1e-12 * v.abs());
            }
        }
    }

    #[test]
    fn empty_annulus_is_missing() {
        let layout = SeriesLayout::from_masks(&[disk(9, 4.0, 4.0, 2.0)], vec![0.0], (0.1, 0.1)).unwrap();
        let res = result_for(&layout, DMatrix::from_element(layout.n_rows(), 1, 1.0));
        let s = radial_series(&res, &layout, (4.0, 4.0), 5.0, &RadialOptions::default()).unwrap();
        assert_eq!(s[0].values, vec![None]);
        assert_eq!(s[0].pixel_counts, vec![0]);
        assert!(radial_series(&res, &layout, (12.0, 4.0), 0.1, &RadialOptions::default()).is_err());
    }

    #[test]
    fn single_pixel_mode() {
        let layout = SeriesLayout::from_masks(&[ForegroundMask::full(8, 8)], vec![0.0], (0.5, 0.5)).unwrap();
        let res = result_for(&layout, DMatrix::from_fn(64, 1, |i, _| i as f64));
        let opts = RadialOptions { single_pixel: true, ..Default::default() };
        let s = radial_series(&res, &layout, (3.0, 3.0), 1.0, &opts).unwrap();
        assert_eq!(s[0].values[0], Some((3 * 8 + 5) as f64));
    }

    #[test]
    fn pgm16_round_trip_and_constant_map() {
        let dir = tempfile::tempdir().unwrap();
        let map = Raster { width: 3, height: 2, data: vec![0.1, -2.0, 5.5, 3.3, 0.0, 1.7] };
        let p = dir.path().join("m.pgm");
        export_map(&map, &p, MapFormat::Pgm16).unwrap();
        let back = read_map_pgm16(&p).unwrap();
        let range = 7.5;
        for (a, b) in map.data.iter().zip(&back.data) {
            assert!((a - b).abs() <= range / 65535.0);
        }
        let flat = Raster { width: 2, height: 2, data: vec![4.0; 4] };
        export_map(&flat, &p, MapFormat::Pgm16).unwrap();
        let text = fs::read_to_string(dir.path().join("m.json")).unwrap();
        let scale: MapScale = serde_json::from_str(&text).unwrap();
        assert_eq!((scale.scale, scale.offset), (0.0, 4.0));
        assert_eq!(read_map_pgm16(&p).unwrap().data, vec![4.0; 4]);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let map = Raster { width: 2, height: 2, data: vec![0.1, 1.0 / 3.0, -7e-300, 12345.678] };
        let p = dir.path().join("m.csv");
        export_map(&map, &p, MapFormat::Csv).unwrap();
        assert_eq!(read_map_csv(&p).unwrap(), map);
    }
}
