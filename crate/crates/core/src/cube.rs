//! Multi-echo image cubes: file format, foreground masking, unfolding into
//! pixel tables and assembly of the time-ordered multiset.
//!
//! On-disk cube layout: the magic bytes `MRC1`, a UTF-8 JSON header, one NUL
//! byte, then `width * height * n_echoes` little-endian `f32` values in
//! row-major `(row, col, echo)` order. In memory rasters are kept as `f64`;
//! every `f32` read from disk converts exactly, so a read/write cycle is
//! byte-identical.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub const CUBE_MAGIC: &[u8; 4] = b"MRC1";

/// Acquisition parameters shared by every pixel of one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionMeta {
    pub te1_ms: f64,
    pub delta_te_ms: f64,
    pub n_echoes: usize,
    pub tr_s: f64,
    pub fov_mm: [f64; 2],
    /// `(width, height)` in pixels.
    pub matrix_size: (usize, usize),
    pub slice_thickness_um: f64,
    pub frame_time_h: f64,
}

impl AcquisitionMeta {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.te1_ms) {
            return Err(Error::format("te1_ms", "must be positive"));
        }
        if !positive(self.delta_te_ms) {
            return Err(Error::format("delta_te_ms", "must be positive"));
        }
        if self.n_echoes < 2 {
            return Err(Error::format("n_echoes", "at least two echoes are required"));
        }
        if self.matrix_size.0 == 0 || self.matrix_size.1 == 0 {
            return Err(Error::format("width/height", "image must be non-empty"));
        }
        if !self.frame_time_h.is_finite() {
            return Err(Error::format("frame_time_h", "must be finite"));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.matrix_size.0
    }

    pub fn height(&self) -> usize {
        self.matrix_size.1
    }

    /// Echo time of echo `m` (0-based) in milliseconds.
    pub fn echo_time_ms(&self, m: usize) -> f64 {
        self.te1_ms + m as f64 * self.delta_te_ms
    }

    pub fn echo_times_ms(&self) -> Vec<f64> {
        (0..self.n_echoes).map(|m| self.echo_time_ms(m)).collect()
    }

    /// In-plane pixel spacing (x, y) in millimetres.
    pub fn pixel_size_mm(&self) -> (f64, f64) {
        (
            self.fov_mm[0] / self.matrix_size.0 as f64,
            self.fov_mm[1] / self.matrix_size.1 as f64,
        )
    }

    /// True when two frames share the same echo axis.
    pub fn same_echo_axis(&self, other: &AcquisitionMeta) -> bool {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0);
        self.n_echoes == other.n_echoes
            && close(self.te1_ms, other.te1_ms)
            && close(self.delta_te_ms, other.delta_te_ms)
    }
}

/// What the third axis of a cube file holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CubeKind {
    /// Echo-resolved magnitudes.
    #[default]
    Signal,
    /// Resolved concentration maps; the third axis indexes components.
    Concentration,
}

/// One frame: a `height x width x n_echoes` raster plus its acquisition metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperCube {
    meta: AcquisitionMeta,
    kind: CubeKind,
    data: Vec<f64>,
}

impl HyperCube {
    pub fn new(meta: AcquisitionMeta, data: Vec<f64>) -> Result<Self> {
        Self::with_kind(meta, CubeKind::Signal, data)
    }

    pub fn with_kind(meta: AcquisitionMeta, kind: CubeKind, data: Vec<f64>) -> Result<Self> {
        match kind {
            CubeKind::Signal => meta.validate()?,
            CubeKind::Concentration => {
                if meta.n_echoes == 0 || meta.width() == 0 || meta.height() == 0 {
                    return Err(Error::format("n_echoes", "concentration raster must be non-empty"));
                }
            }
        }
        let expected = meta.width() * meta.height() * meta.n_echoes;
        if data.len() != expected {
            return Err(Error::format(
                "payload",
                format!("expected {expected} values, got {}", data.len()),
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::format("payload", format!("non-finite value at index {i}")));
        }
        Ok(HyperCube { meta, kind, data })
    }

    pub fn meta(&self) -> &AcquisitionMeta {
        &self.meta
    }

    pub fn kind(&self) -> CubeKind {
        self.kind
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn width(&self) -> usize {
        self.meta.width()
    }

    pub fn height(&self) -> usize {
        self.meta.height()
    }

    pub fn n_echoes(&self) -> usize {
        self.meta.n_echoes
    }

    pub fn value(&self, row: usize, col: usize, echo: usize) -> f64 {
        self.data[(row * self.width() + col) * self.n_echoes() + echo]
    }

    pub fn echo_vector(&self, row: usize, col: usize) -> &[f64] {
        let n = self.n_echoes();
        let start = (row * self.width() + col) * n;
        &self.data[start..start + n]
    }

    /// The plane of echo `echo` as a raster.
    pub fn plane(&self, echo: usize) -> Raster {
        let n = self.n_echoes();
        let data = self.data.chunks_exact(n).map(|px| px[echo]).collect();
        Raster { width: self.width(), height: self.height(), data }
    }

    /// Mean intensity over echoes for every pixel.
    pub fn echo_mean_image(&self) -> Raster {
        let n = self.n_echoes();
        let data = self
            .data
            .chunks_exact(n)
            .map(|px| px.iter().sum::<f64>() / n as f64)
            .collect();
        Raster { width: self.width(), height: self.height(), data }
    }
}

/// A 2D real raster in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Raster {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }
}

fn header_value(meta: &AcquisitionMeta, kind: CubeKind) -> Value {
    let mut map = Map::new();
    map.insert("width".into(), meta.width().into());
    map.insert("height".into(), meta.height().into());
    map.insert("n_echoes".into(), meta.n_echoes.into());
    map.insert("te1_ms".into(), meta.te1_ms.into());
    map.insert("delta_te_ms".into(), meta.delta_te_ms.into());
    map.insert("tr_s".into(), meta.tr_s.into());
    map.insert("fov_mm".into(), Value::from(vec![meta.fov_mm[0], meta.fov_mm[1]]));
    map.insert("slice_thickness_um".into(), meta.slice_thickness_um.into());
    map.insert("frame_time_h".into(), meta.frame_time_h.into());
    if kind == CubeKind::Concentration {
        map.insert("kind".into(), "concentration".into());
    }
    Value::Object(map)
}

/// Serializes a cube into the `MRC1` byte layout.
pub fn encode_cube(cube: &HyperCube) -> Result<Vec<u8>> {
    if let Some(i) = cube.data.iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("cube holds a non-finite value at index {i}")));
    }
    let header = serde_json::to_string(&header_value(&cube.meta, cube.kind))
        .map_err(|e| Error::format("header", e.to_string()))?;
    let mut out = Vec::with_capacity(5 + header.len() + cube.data.len() * 4);
    out.extend_from_slice(CUBE_MAGIC);
    out.extend_from_slice(header.as_bytes());
    out.push(0);
    for v in &cube.data {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(out)
}

fn field<'a>(obj: &'a Map<String, Value>, name: &str) -> Result<&'a Value> {
    obj.get(name).ok_or_else(|| Error::format(name, "missing"))
}

fn field_f64(obj: &Map<String, Value>, name: &str) -> Result<f64> {
    field(obj, name)?
        .as_f64()
        .ok_or_else(|| Error::format(name, "expected a number"))
}

fn field_usize(obj: &Map<String, Value>, name: &str) -> Result<usize> {
    field(obj, name)?
        .as_u64()
        .map(|v| v as usize)
        .ok_or_else(|| Error::format(name, "expected a non-negative integer"))
}

/// Parses the `MRC1` byte layout.
pub fn decode_cube(bytes: &[u8]) -> Result<HyperCube> {
    if bytes.len() < 4 || &bytes[..4] != CUBE_MAGIC {
        return Err(Error::format("magic", "missing MRC1 magic bytes"));
    }
    let rest = &bytes[4..];
    let nul = rest
        .iter()
        .position(|&b| b == 0)
        .ok_or_else(|| Error::format("header", "no NUL terminator after JSON header"))?;
    let header: Value = serde_json::from_slice(&rest[..nul])
        .map_err(|e| Error::format("header", format!("invalid JSON: {e}")))?;
    let obj = header
        .as_object()
        .ok_or_else(|| Error::format("header", "expected a JSON object"))?;

    let width = field_usize(obj, "width")?;
    let height = field_usize(obj, "height")?;
    let n_echoes = field_usize(obj, "n_echoes")?;
    let fov = field(obj, "fov_mm")?
        .as_array()
        .filter(|a| a.len() == 2)
        .and_then(|a| Some([a[0].as_f64()?, a[1].as_f64()?]))
        .ok_or_else(|| Error::format("fov_mm", "expected two numbers"))?;
    let kind = match obj.get("kind").and_then(Value::as_str) {
        None | Some("signal") => CubeKind::Signal,
        Some("concentration") => CubeKind::Concentration,
        Some(other) => return Err(Error::format("kind", format!("unknown kind `{other}`"))),
    };
    let meta = AcquisitionMeta {
        te1_ms: field_f64(obj, "te1_ms")?,
        delta_te_ms: field_f64(obj, "delta_te_ms")?,
        n_echoes,
        tr_s: field_f64(obj, "tr_s")?,
        fov_mm: fov,
        matrix_size: (width, height),
        slice_thickness_um: field_f64(obj, "slice_thickness_um")?,
        frame_time_h: field_f64(obj, "frame_time_h")?,
    };

    let payload = &rest[nul + 1..];
    let expected = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(n_echoes))
        .ok_or_else(|| Error::format("n_echoes", "dimensions overflow"))?;
    if payload.len() != expected * 4 {
        return Err(Error::format(
            "n_echoes",
            format!(
                "header declares {width}x{height}x{n_echoes} = {expected} values but payload holds {} bytes",
                payload.len()
            ),
        ));
    }
    let data: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    HyperCube::with_kind(meta, kind, data)
}

pub fn read_cube(path: &Path) -> Result<HyperCube> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_cube(&bytes)
}

pub fn write_cube(cube: &HyperCube, path: &Path) -> Result<()> {
    let bytes = encode_cube(cube)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Boolean foreground raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForegroundMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl ForegroundMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::invalid(format!(
                "mask has {} entries, expected {width}x{height}",
                bits.len()
            )));
        }
        if !bits.iter().any(|&b| b) {
            return Err(Error::invalid("mask selects no foreground pixels"));
        }
        Ok(ForegroundMask { width, height, bits })
    }

    pub fn full(width: usize, height: usize) -> Self {
        ForegroundMask { width, height, bits: vec![true; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Foreground coordinates `(row, col)` in raster-scan order.
    pub fn coordinates(&self) -> Vec<(usize, usize)> {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| (i / self.width, i % self.width))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MaskMethod {
    Otsu,
    FixedFraction(f64),
    External(PathBuf),
}

/// Otsu threshold of `values` using 256 bins spanning `[min, max]`. Returns
/// the value above which samples belong to the upper class.
pub fn otsu_threshold(values: &[f64]) -> Result<f64> {
    const BINS: usize = 256;
    let (min, max) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if values.is_empty() || !(max > min) || (max - min) <= 1e-12 * max.abs().max(min.abs()) {
        return Err(Error::numeric("degenerate histogram"));
    }
    let width = (max - min) / BINS as f64;
    let mut hist = [0usize; BINS];
    for &v in values {
        let b = (((v - min) / width) as usize).min(BINS - 1);
        hist[b] += 1;
    }
    let total = values.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &h)| i as f64 * h as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best, mut best_t) = (-1.0, 0usize);
    for (t, &h) in hist.iter().enumerate().take(BINS - 1) {
        w0 += h as f64;
        sum0 += t as f64 * h as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if between > best {
            best = between;
            best_t = t;
        }
    }
    if best < 0.0 {
        return Err(Error::numeric("degenerate histogram"));
    }
    Ok(min + (best_t + 1) as f64 * width)
}

pub fn compute_mask(cube: &HyperCube, method: &MaskMethod) -> Result<ForegroundMask> {
    let (w, h) = (cube.width(), cube.height());
    match method {
        MaskMethod::Otsu => mask_from_mean_image(&cube.echo_mean_image(), &MaskMethod::Otsu),
        MaskMethod::FixedFraction(f) => {
            mask_from_mean_image(&cube.echo_mean_image(), &MaskMethod::FixedFraction(*f))
        }
        MaskMethod::External(path) => {
            let mask = read_mask_pgm(path)?;
            if mask.width != w || mask.height != h {
                return Err(Error::invalid(format!(
                    "external mask {} is {}x{}, cube is {w}x{h}",
                    path.display(),
                    mask.width,
                    mask.height
                )));
            }
            Ok(mask)
        }
    }
}

/// Thresholds an echo-mean image; shared by per-frame and series-wide masking.
pub fn mask_from_mean_image(mean: &Raster, method: &MaskMethod) -> Result<ForegroundMask> {
    let bits: Vec<bool> = match method {
        MaskMethod::Otsu => {
            let t = otsu_threshold(&mean.data)?;
            mean.data.iter().map(|&v| v > t).collect()
        }
        MaskMethod::FixedFraction(f) => {
            if !(*f > 0.0 && *f < 1.0) {
                return Err(Error::invalid(format!("fixed fraction {f} outside (0, 1)")));
            }
            let max = mean.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            mean.data.iter().map(|&v| v > f * max).collect()
        }
        MaskMethod::External(_) => {
            return Err(Error::invalid("external masks are loaded from file, not thresholded"))
        }
    };
    if !bits.iter().any(|&b| b) {
        return Err(Error::numeric("mask selects no foreground pixels"));
    }
    ForegroundMask::new(mean.width, mean.height, bits)
}

/// Reads a binary 8-bit PGM (P5); nonzero pixels are foreground.
pub fn read_mask_pgm(path: &Path) -> Result<ForegroundMask> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (w, h, maxval, offset) = parse_pgm_header(&bytes)?;
    if maxval > 255 {
        return Err(Error::format("maxval", "mask PGM must be 8-bit"));
    }
    let payload = &bytes[offset..];
    if payload.len() < w * h {
        return Err(Error::format("payload", "mask PGM is truncated"));
    }
    ForegroundMask::new(w, h, payload[..w * h].iter().map(|&b| b != 0).collect())
}

pub fn write_mask_pgm(mask: &ForegroundMask, path: &Path) -> Result<()> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width, mask.height).into_bytes();
    out.extend(mask.bits.iter().map(|&b| if b { 255u8 } else { 0 }));
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Returns `(width, height, maxval, payload_offset)`.
pub fn parse_pgm_header(bytes: &[u8]) -> Result<(usize, usize, usize, usize)> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::format("magic", "expected binary PGM (P5)"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (i, name) in ["width", "height", "maxval"].iter().enumerate() {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        fields[i] = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(*name, "malformed PGM header"))?;
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::format("payload", "missing PGM raster"));
    }
    Ok((fields[0], fields[1], fields[2], pos + 1))
}

/// Foreground-pixel by echo matrix with the coordinates needed to refold it.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelTable {
    pub values: DMatrix<f64>,
    pub index_map: Vec<(usize, usize)>,
    pub meta: AcquisitionMeta,
}

impl PixelTable {
    pub fn n_pixels(&self) -> usize {
        self.values.nrows()
    }
}

pub fn unfold(cube: &HyperCube, mask: &ForegroundMask) -> Result<PixelTable> {
    if mask.width != cube.width() || mask.height != cube.height() {
        return Err(Error::invalid(format!(
            "mask is {}x{}, cube is {}x{}",
            mask.width,
            mask.height,
            cube.width(),
            cube.height()
        )));
    }
    let index_map = mask.coordinates();
    if index_map.is_empty() {
        return Err(Error::invalid("mask selects no foreground pixels"));
    }
    let n = cube.n_echoes();
    let values = DMatrix::from_fn(index_map.len(), n, |i, m| {
        let (r, c) = index_map[i];
        cube.value(r, c, m)
    });
    Ok(PixelTable { values, index_map, meta: cube.meta().clone() })
}

/// Places `values` at the mapped coordinates of a `width x height` raster,
/// `fill` elsewhere.
pub fn refold(
    values: &[f64],
    index_map: &[(usize, usize)],
    width: usize,
    height: usize,
    fill: f64,
) -> Result<Raster> {
    if values.len() != index_map.len() {
        return Err(Error::invalid(format!(
            "{} values for {} mapped pixels",
            values.len(),
            index_map.len()
        )));
    }
    let mut data = vec![fill; width * height];
    for (&v, &(r, c)) in values.iter().zip(index_map) {
        if r >= height || c >= width {
            return Err(Error::invalid(format!("pixel ({r}, {c}) outside {width}x{height}")));
        }
        data[r * width + c] = v;
    }
    Ok(Raster { width, height, data })
}

/// Pixel geometry of a series without its echo data: what is needed to map
/// rows of an augmented concentration matrix back onto images.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesLayout {
    pub width: usize,
    pub height: usize,
    /// `(x, y)` pixel spacing in millimetres.
    pub pixel_size_mm: (f64, f64),
    pub frame_times_h: Vec<f64>,
    pub index_maps: Vec<Vec<(usize, usize)>>,
    /// Start row of each frame plus a trailing total.
    pub row_offsets: Vec<usize>,
}

impl SeriesLayout {
    pub fn n_frames(&self) -> usize {
        self.index_maps.len()
    }

    pub fn n_rows(&self) -> usize {
        *self.row_offsets.last().unwrap_or(&0)
    }

    /// Rebuilds the layout from per-frame masks.
    pub fn from_masks(masks: &[ForegroundMask], frame_times_h: Vec<f64>, pixel_size_mm: (f64, f64)) -> Result<Self> {
        let first = masks.first().ok_or_else(|| Error::invalid("layout needs at least one frame"))?;
        if masks.len() != frame_times_h.len() {
            return Err(Error::invalid("mask and frame time counts differ"));
        }
        if masks.iter().any(|m| m.width != first.width || m.height != first.height) {
            return Err(Error::invalid("frames differ in image size"));
        }
        let index_maps: Vec<_> = masks.iter().map(ForegroundMask::coordinates).collect();
        let mut row_offsets = vec![0];
        for m in &index_maps {
            row_offsets.push(row_offsets.last().unwrap() + m.len());
        }
        Ok(SeriesLayout {
            width: first.width,
            height: first.height,
            pixel_size_mm,
            frame_times_h,
            index_maps,
            row_offsets,
        })
    }

    pub fn mask(&self, frame: usize) -> ForegroundMask {
        let mut bits = vec![false; self.width * self.height];
        for &(r, c) in &self.index_maps[frame] {
            bits[r * self.width + c] = true;
        }
        ForegroundMask { width: self.width, height: self.height, bits }
    }
}

/// Row-stacked frames sharing one echo axis.
#[derive(Debug, Clone, PartialEq)]
pub struct MultisetStack {
    blocks: Vec<PixelTable>,
    frame_times_h: Vec<f64>,
    row_offsets: Vec<usize>,
}

impl MultisetStack {
    pub fn blocks(&self) -> &[PixelTable] {
        &self.blocks
    }

    pub fn frame_times_h(&self) -> &[f64] {
        &self.frame_times_h
    }

    /// Start row of each block; one extra trailing entry holds the total.
    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn n_frames(&self) -> usize {
        self.blocks.len()
    }

    pub fn n_rows(&self) -> usize {
        *self.row_offsets.last().unwrap_or(&0)
    }

    pub fn n_echoes(&self) -> usize {
        self.blocks[0].meta.n_echoes
    }

    pub fn meta(&self) -> &AcquisitionMeta {
        &self.blocks[0].meta
    }

    pub fn echo_times_ms(&self) -> Vec<f64> {
        self.meta().echo_times_ms()
    }

    /// The augmented data matrix `D_aug`.
    pub fn augmented(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n_rows(), self.n_echoes());
        for (b, &off) in self.blocks.iter().zip(&self.row_offsets) {
            d.rows_mut(off, b.n_pixels()).copy_from(&b.values);
        }
        d
    }

    pub fn layout(&self) -> SeriesLayout {
        let meta = self.meta();
        SeriesLayout {
            width: meta.width(),
            height: meta.height(),
            pixel_size_mm: meta.pixel_size_mm(),
            frame_times_h: self.frame_times_h.clone(),
            index_maps: self.blocks.iter().map(|b| b.index_map.clone()).collect(),
            row_offsets: self.row_offsets.clone(),
        }
    }

    /// Maps an augmented row back to `(frame, (row, col))`.
    pub fn locate_row(&self, row: usize) -> Option<(usize, (usize, usize))> {
        if row >= self.n_rows() {
            return None;
        }
        let frame = self.row_offsets.partition_point(|&o| o <= row) - 1;
        Some((frame, self.blocks[frame].index_map[row - self.row_offsets[frame]]))
    }
}

pub fn build_multiset(tables: Vec<PixelTable>, times_h: Vec<f64>) -> Result<MultisetStack> {
    if tables.is_empty() {
        return Err(Error::invalid("multiset needs at least one frame"));
    }
    if tables.len() != times_h.len() {
        return Err(Error::invalid(format!(
            "{} tables but {} frame times",
            tables.len(),
            times_h.len()
        )));
    }
    if times_h.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("frame times must be strictly increasing"));
    }
    let first = &tables[0].meta;
    if tables.iter().any(|t| !t.meta.same_echo_axis(first)) {
        return Err(Error::invalid("images not co-registered on echo dimension"));
    }
    if tables.iter().any(|t| t.meta.matrix_size != first.matrix_size) {
        return Err(Error::invalid("frames differ in image size"));
    }
    let mut row_offsets = Vec::with_capacity(tables.len() + 1);
    let mut acc = 0;
    for t in &tables {
        row_offsets.push(acc);
        acc += t.n_pixels();
    }
    row_offsets.push(acc);
    Ok(MultisetStack { blocks: tables, frame_times_h: times_h, row_offsets })
}

/// One entry of a series manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub frame_time_h: f64,
}

/// Loads a manifest; relative paths resolve against the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut entries: Vec<ManifestEntry> = serde_json::from_str(&text)
        .map_err(|e| Error::format("manifest", e.to_string()))?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    for e in &mut entries {
        if e.path.is_relative() {
            e.path = base.join(&e.path);
        }
    }
    Ok(entries)
}

pub fn write_manifest(entries: &[ManifestEntry], path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(entries)
        .map_err(|e| Error::format("manifest", e.to_string()))?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
    f.write_all(b"\n").map_err(|e| Error::io(path, e))
}
