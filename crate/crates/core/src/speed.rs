//! Live mean-speed estimation from the time lag between two multispectral band
//! composites of one satellite image.
//!
//! 1. Treat every pixel as a 2-vector `(band_a, band_b)` and run PCA over the
//!    ensemble. The static scene lies along the correlated component; the
//!    orthogonal component carries what changed between the two exposures.
//! 2. Threshold `|change|` at a high quantile, label 8-connected components per
//!    sign (bright: object present only in `band_b`, dark: only in `band_a`) and
//!    keep blobs passing area, compactness and rectangularity criteria.
//! 3. Greedily pair bright and dark blobs by ascending centroid distance, up to
//!    a maximum plausible displacement.
//! 4. Speed per pair = displacement / time lag; report the mean.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 70 mph in metres per second.
pub const MPH70_M_PER_S: f64 = 31.2928;

pub const RASTER_MAGIC: &[u8; 4] = b"DBR1";
const DTYPE_F32: u32 = 1;

/// Row-major 2-D grid of reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Grid {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Grid {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} grid",
                data.len()
            )));
        }
        Ok(Grid { rows, cols, data })
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// Position of the largest value, first in row-major order on ties.
    pub fn argmax(&self) -> (usize, usize) {
        let i = self
            .data
            .iter()
            .enumerate()
            .fold(0, |best, (i, &v)| if v > self.data[best] { i } else { best });
        (i / self.cols, i % self.cols)
    }

    pub fn argmin(&self) -> (usize, usize) {
        let i = self
            .data
            .iter()
            .enumerate()
            .fold(0, |best, (i, &v)| if v < self.data[best] { i } else { best });
        (i / self.cols, i % self.cols)
    }
}

/// Two co-registered bands captured `time_lag_s` apart.
#[derive(Debug, Clone, PartialEq)]
pub struct DualBandRaster {
    pub band_a: Grid,
    pub band_b: Grid,
    pub gsd_m_per_px: f64,
    pub time_lag_s: f64,
}

impl DualBandRaster {
    pub fn new(band_a: Grid, band_b: Grid, gsd_m_per_px: f64, time_lag_s: f64) -> Result<Self> {
        if band_a.rows != band_b.rows || band_a.cols != band_b.cols {
            return Err(Error::Shape(format!(
                "band shapes differ: {}x{} vs {}x{}",
                band_a.rows, band_a.cols, band_b.rows, band_b.cols
            )));
        }
        if !(gsd_m_per_px > 0.0) {
            return Err(Error::Invalid(format!("gsd must be > 0 (got {gsd_m_per_px})")));
        }
        if !(time_lag_s > 0.0) {
            return Err(Error::Invalid(format!("time lag must be > 0 (got {time_lag_s})")));
        }
        Ok(DualBandRaster {
            band_a,
            band_b,
            gsd_m_per_px,
            time_lag_s,
        })
    }

    pub fn swapped(&self) -> Self {
        DualBandRaster {
            band_a: self.band_b.clone(),
            band_b: self.band_a.clone(),
            ..*self
        }
    }
}

/// Sidecar metadata stored next to a raster file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterMeta {
    pub gsd_m_per_px: f64,
    pub time_lag_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub site_id: Option<String>,
}

/// `image.dbr` -> `image.json`.
pub fn sidecar_path(raster: &Path) -> PathBuf {
    raster.with_extension("json")
}

/// Writes the binary grid and its JSON sidecar.
///
/// Layout (little-endian): magic `DBR1`, then u32 rows, u32 cols, u32 bands (= 2),
/// u32 dtype (1 = f32), followed by `rows*cols` f32 values of band A and then of
/// band B, each row-major.
pub fn write_raster(path: &Path, raster: &DualBandRaster, site_id: Option<&str>) -> Result<()> {
    let g = &raster.band_a;
    let mut buf = Vec::with_capacity(20 + 8 * g.data.len());
    buf.extend_from_slice(RASTER_MAGIC);
    for v in [g.rows as u32, g.cols as u32, 2, DTYPE_F32] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for band in [&raster.band_a, &raster.band_b] {
        for &v in &band.data {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))?;
    let meta = RasterMeta {
        gsd_m_per_px: raster.gsd_m_per_px,
        time_lag_s: raster.time_lag_s,
        site_id: site_id.map(str::to_string),
    };
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(&meta).expect("meta serializes") + "\n";
    fs::write(&side, text).map_err(|e| Error::io(&side, e))
}

pub fn read_raster(path: &Path) -> Result<(DualBandRaster, RasterMeta)> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 20 || &bytes[..4] != RASTER_MAGIC {
        return Err(Error::schema(path, "not a dual-band raster (bad magic)"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let (rows, cols, bands, dtype) = (word(0) as usize, word(1) as usize, word(2), word(3));
    if bands != 2 || dtype != DTYPE_F32 {
        return Err(Error::schema(
            path,
            format!("expected 2 bands of f32, header says {bands} bands dtype {dtype}"),
        ));
    }
    let n = rows * cols;
    if bytes.len() != 20 + 8 * n {
        return Err(Error::schema(
            path,
            format!("expected {} bytes for {rows}x{cols}, found {}", 20 + 8 * n, bytes.len()),
        ));
    }
    let band = |k: usize| -> Vec<f64> {
        bytes[20 + 4 * n * k..20 + 4 * n * (k + 1)]
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect()
    };
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: RasterMeta = serde_json::from_str(&text)
        .map_err(|e| Error::parse(&side, e.line() as u64, e.to_string()))?;
    let raster = DualBandRaster::new(
        Grid::from_vec(rows, cols, band(0))?,
        Grid::from_vec(rows, cols, band(1))?,
        meta.gsd_m_per_px,
        meta.time_lag_s,
    )?;
    Ok((raster, meta))
}

/// Unit eigenvectors of the symmetric matrix `[[p, q], [q, r]]`, larger eigenvalue first.
fn eigen_2x2(p: f64, q: f64, r: f64) -> [(f64, [f64; 2]); 2] {
    let mid = 0.5 * (p + r);
    let rad = (0.25 * (p - r).powi(2) + q * q).sqrt();
    let (l1, l2) = (mid + rad, mid - rad);
    let vec_for = |l: f64| -> [f64; 2] {
        // Two candidate forms; keep the better-conditioned one.
        let a = [q, l - p];
        let b = [l - r, q];
        let na = a[0].hypot(a[1]);
        let nb = b[0].hypot(b[1]);
        if na >= nb && na > 0.0 {
            [a[0] / na, a[1] / na]
        } else if nb > 0.0 {
            [b[0] / nb, b[1] / nb]
        } else if p >= r {
            // Isotropic or diagonal: axes are eigenvectors.
            if l == l1 { [1.0, 0.0] } else { [0.0, 1.0] }
        } else if l == l1 {
            [0.0, 1.0]
        } else {
            [1.0, 0.0]
        }
    };
    if rad == 0.0 {
        // Any basis works; use the sum and difference directions.
        let h = std::f64::consts::FRAC_1_SQRT_2;
        return [(l1, [h, h]), (l2, [-h, h])];
    }
    [(l1, vec_for(l1)), (l2, vec_for(l2))]
}

/// Projects every centred pixel onto the change component of the two-band PCA.
///
/// The change component is the principal axis orthogonal to the static scene.
/// On textured scenes this is the second PC; the axis more aligned with the band
/// difference is chosen so scenes dominated by moving objects behave the same.
/// Positive values mean brighter in `band_b`.
pub fn build_change_image(raster: &DualBandRaster) -> Result<Grid> {
    let a = &raster.band_a.data;
    let b = &raster.band_b.data;
    let n = a.len();
    if n < 2 {
        return Err(Error::Degenerate("change image needs at least 2 pixels".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Invalid("raster contains non-finite values".into()));
    }
    let mean_a = a.iter().sum::<f64>() / n as f64;
    let mean_b = b.iter().sum::<f64>() / n as f64;
    let (mut saa, mut sab, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (da, db) = (x - mean_a, y - mean_b);
        saa += da * da;
        sab += da * db;
        sbb += db * db;
    }
    if saa + sbb == 0.0 {
        return Err(Error::Degenerate("both bands are constant (zero variance)".into()));
    }
    let [(_, v1), (_, v2)] = eigen_2x2(saa, sab, sbb);
    let align = |v: [f64; 2]| (v[1] - v[0]).abs();
    let mut axis = if align(v1) > align(v2) { v1 } else { v2 };
    if axis[1] - axis[0] < 0.0 || (axis[1] - axis[0] == 0.0 && axis[1] < 0.0) {
        axis = [-axis[0], -axis[1]];
    }
    let data = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - mean_a) * axis[0] + (y - mean_b) * axis[1])
        .collect();
    Grid::from_vec(raster.band_a.rows, raster.band_a.cols, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub min_area_px: usize,
    pub min_compactness: f64,
    pub min_rectangularity: f64,
    /// Pixels with `|change|` strictly above this quantile are candidates.
    pub intensity_quantile: f64,
}

impl Default for Thresholds {
    /// Untuned starting values.
    fn default() -> Self {
        Thresholds {
            min_area_px: 4,
            min_compactness: 0.3,
            min_rectangularity: 0.5,
            intensity_quantile: 0.995,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    /// Present only in band B (new position).
    Bright,
    /// Present only in band A (old position).
    Dark,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    /// `(row, col)` in pixels.
    pub centroid: (f64, f64),
    pub area_px: usize,
    /// Pixel-edge length of the outer and inner boundaries.
    pub perimeter_px: usize,
    /// `4 pi area / perimeter^2`.
    pub compactness: f64,
    /// Area over the minimum-area (rotated) bounding rectangle of the pixel squares.
    pub rectangularity: f64,
    pub polarity: Polarity,
}

/// Linear-interpolated quantile of unsorted values.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

fn cross(o: (i64, i64), a: (i64, i64), b: (i64, i64)) -> i64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

fn convex_hull(mut pts: Vec<(i64, i64)>) -> Vec<(i64, i64)> {
    pts.sort_unstable();
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<(i64, i64)> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(i64, i64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Minimum-area enclosing rectangle of the union of pixel squares.
fn min_rect_area(pixels: &[(usize, usize)]) -> f64 {
    let corners = pixels
        .iter()
        .flat_map(|&(r, c)| {
            let (r, c) = (r as i64, c as i64);
            [(r, c), (r + 1, c), (r, c + 1), (r + 1, c + 1)]
        })
        .collect();
    let hull = convex_hull(corners);
    let mut best = f64::INFINITY;
    for i in 0..hull.len() {
        let p = hull[i];
        let q = hull[(i + 1) % hull.len()];
        let e = ((q.0 - p.0) as f64, (q.1 - p.1) as f64);
        let len2 = e.0 * e.0 + e.1 * e.1;
        let (mut umin, mut umax, mut vmin, mut vmax) =
            (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for h in &hull {
            let d = ((h.0 - p.0) as f64, (h.1 - p.1) as f64);
            let u = d.0 * e.0 + d.1 * e.1;
            let v = d.0 * -e.1 + d.1 * e.0;
            umin = umin.min(u);
            umax = umax.max(u);
            vmin = vmin.min(v);
            vmax = vmax.max(v);
        }
        best = best.min((umax - umin) * (vmax - vmin) / len2);
    }
    best
}

fn blob_from_pixels(pixels: &[(usize, usize)], mask: &[bool], rows: usize, cols: usize, polarity: Polarity) -> Blob {
    let area = pixels.len();
    let (sr, sc) = pixels
        .iter()
        .fold((0.0, 0.0), |(a, b), &(r, c)| (a + r as f64, b + c as f64));
    let inside = |r: isize, c: isize| {
        r >= 0 && c >= 0 && (r as usize) < rows && (c as usize) < cols && mask[r as usize * cols + c as usize]
    };
    let perimeter = pixels
        .iter()
        .map(|&(r, c)| {
            let (r, c) = (r as isize, c as isize);
            [(r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)]
                .iter()
                .filter(|&&(nr, nc)| !inside(nr, nc))
                .count()
        })
        .sum::<usize>();
    Blob {
        centroid: (sr / area as f64, sc / area as f64),
        area_px: area,
        perimeter_px: perimeter,
        compactness: 4.0 * PI * area as f64 / (perimeter * perimeter) as f64,
        rectangularity: area as f64 / min_rect_area(pixels),
        polarity,
    }
}

/// All 8-connected components of `mask`, each as a list of `(row, col)`.
fn components(mask: &[bool], rows: usize, cols: usize) -> Vec<Vec<(usize, usize)>> {
    let mut seen = vec![false; mask.len()];
    let mut out = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        let mut pixels = Vec::new();
        while let Some(i) = queue.pop_front() {
            let (r, c) = (i / cols, i % cols);
            pixels.push((r, c));
            for dr in -1isize..=1 {
                for dc in -1isize..=1 {
                    let (nr, nc) = (r as isize + dr, c as isize + dc);
                    if nr < 0 || nc < 0 || nr as usize >= rows || nc as usize >= cols {
                        continue;
                    }
                    let j = nr as usize * cols + nc as usize;
                    if mask[j] && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        out.push(pixels);
    }
    out
}

/// Candidate blobs of both polarities passing every geometric criterion,
/// sorted by area (largest first).
pub fn detect_moving_objects(change: &Grid, thresholds: &Thresholds) -> Vec<Blob> {
    if change.data.is_empty() {
        return Vec::new();
    }
    let abs: Vec<f64> = change.data.iter().map(|v| v.abs()).collect();
    let cut = quantile(&abs, thresholds.intensity_quantile);
    let mut blobs = Vec::new();
    for polarity in [Polarity::Bright, Polarity::Dark] {
        let mask: Vec<bool> = change
            .data
            .iter()
            .map(|&v| {
                v.abs() > cut
                    && match polarity {
                        Polarity::Bright => v > 0.0,
                        Polarity::Dark => v < 0.0,
                    }
            })
            .collect();
        for pixels in components(&mask, change.rows, change.cols) {
            let blob = blob_from_pixels(&pixels, &mask, change.rows, change.cols, polarity);
            if blob.area_px >= thresholds.min_area_px
                && blob.compactness >= thresholds.min_compactness
                && blob.rectangularity >= thresholds.min_rectangularity
            {
                blobs.push(blob);
            }
        }
    }
    blobs.sort_by(|x, y| {
        y.area_px
            .cmp(&x.area_px)
            .then(x.centroid.0.total_cmp(&y.centroid.0))
            .then(x.centroid.1.total_cmp(&y.centroid.1))
    });
    blobs
}

fn centroid_distance(a: &Blob, b: &Blob) -> f64 {
    (a.centroid.0 - b.centroid.0).hypot(a.centroid.1 - b.centroid.1)
}

/// Farthest a vehicle at 70 mph moves during the band time lag.
pub fn default_max_displacement_m(time_lag_s: f64) -> f64 {
    MPH70_M_PER_S * time_lag_s
}

/// Greedy matching of bright to dark blobs by ascending centroid distance; each
/// blob is used at most once. Returns `(bright, dark)` pairs.
pub fn pair_blobs(blobs: &[Blob], max_displacement_m: f64, gsd_m_per_px: f64) -> Vec<(Blob, Blob)> {
    let bright: Vec<&Blob> = blobs.iter().filter(|b| b.polarity == Polarity::Bright).collect();
    let dark: Vec<&Blob> = blobs.iter().filter(|b| b.polarity == Polarity::Dark).collect();
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (i, b) in bright.iter().enumerate() {
        for (j, d) in dark.iter().enumerate() {
            let dist_m = centroid_distance(b, d) * gsd_m_per_px;
            if dist_m <= max_displacement_m {
                candidates.push((dist_m, i, j));
            }
        }
    }
    candidates.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut used_b = vec![false; bright.len()];
    let mut used_d = vec![false; dark.len()];
    let mut pairs = Vec::new();
    for (_, i, j) in candidates {
        if !used_b[i] && !used_d[j] {
            used_b[i] = true;
            used_d[j] = true;
            pairs.push((bright[i].clone(), dark[j].clone()));
        }
    }
    pairs
}

/// Mean speed over paired blobs. `mean_speed_kmh` is `None` when no pair was found.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedEstimate {
    pub mean_speed_kmh: Option<f64>,
    pub pair_count: usize,
    pub pair_displacements_m: Vec<f64>,
}

impl SpeedEstimate {
    pub fn from_displacements(displacements_m: Vec<f64>, time_lag_s: f64) -> Result<Self> {
        if !(time_lag_s > 0.0) {
            return Err(Error::Invalid(format!("time lag must be > 0 (got {time_lag_s})")));
        }
        let mean_speed_kmh = if displacements_m.is_empty() {
            None
        } else {
            let speeds = displacements_m.iter().map(|d| d / time_lag_s * 3.6);
            Some(speeds.sum::<f64>() / displacements_m.len() as f64)
        };
        Ok(SpeedEstimate {
            mean_speed_kmh,
            pair_count: displacements_m.len(),
            pair_displacements_m: displacements_m,
        })
    }

    pub fn is_failed(&self) -> bool {
        self.mean_speed_kmh.is_none()
    }
}

pub fn estimate_speed(pairs: &[(Blob, Blob)], gsd_m_per_px: f64, time_lag_s: f64) -> Result<SpeedEstimate> {
    let displacements = pairs
        .iter()
        .map(|(b, d)| centroid_distance(b, d) * gsd_m_per_px)
        .collect();
    SpeedEstimate::from_displacements(displacements, time_lag_s)
}

/// Estimate plus the counts needed to diagnose a failed estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedRun {
    pub estimate: SpeedEstimate,
    pub bright_blobs: usize,
    pub dark_blobs: usize,
    pub max_displacement_m: f64,
}

pub fn estimate_from_raster(
    raster: &DualBandRaster,
    thresholds: &Thresholds,
    max_displacement_m: Option<f64>,
) -> Result<SpeedRun> {
    let change = build_change_image(raster)?;
    let blobs = detect_moving_objects(&change, thresholds);
    let limit = max_displacement_m.unwrap_or_else(|| default_max_displacement_m(raster.time_lag_s));
    let pairs = pair_blobs(&blobs, limit, raster.gsd_m_per_px);
    let estimate = estimate_speed(&pairs, raster.gsd_m_per_px, raster.time_lag_s)?;
    Ok(SpeedRun {
        estimate,
        bright_blobs: blobs.iter().filter(|b| b.polarity == Polarity::Bright).count(),
        dark_blobs: blobs.iter().filter(|b| b.polarity == Polarity::Dark).count(),
        max_displacement_m: limit,
    })
}
