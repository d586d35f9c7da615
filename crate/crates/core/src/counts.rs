//! Fifteen-minute traffic counts from the vehicles detected on a masked road segment.
//!
//! A detection snapshot holds `N_i` vehicles of length class `i` on a segment of
//! `l` km. Assuming every vehicle moves at the segment mean speed `v` km/h, the
//! number passing a fixed point in fifteen minutes is
//!
//! ```text
//! N_i,15 = N_i * v * (15 / 60) / l
//! ```
//!
//! Estimates stay real-valued; rounding is left to display code.

use std::fmt;
use std::ops::{Index, IndexMut};
use std::path::Path;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Detection, Direction, ImageMeta, COUNT_HEADER, TIMESTAMP_FORMAT};
use crate::speed::SpeedEstimate;

/// Upper bounds (inclusive, cm) of the Small, Medium and Large classes.
pub const SMALL_MAX_CM: f64 = 520.0;
pub const MEDIUM_MAX_CM: f64 = 660.0;
pub const LARGE_MAX_CM: f64 = 1160.0;

/// Vehicle length classes of the UK motorway count data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LengthClass {
    /// 0 to 520 cm.
    Small,
    /// 521 to 660 cm.
    Medium,
    /// 661 to 1160 cm.
    Large,
    /// Over 1160 cm.
    VeryLarge,
}

impl LengthClass {
    /// Column order used by every count file.
    pub const ALL: [LengthClass; 4] = [
        LengthClass::Small,
        LengthClass::Medium,
        LengthClass::Large,
        LengthClass::VeryLarge,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Lengths between two published boundaries (e.g. 520.4 cm) fall into the upper class.
    pub fn from_length_cm(length_cm: f64) -> LengthClass {
        if length_cm <= SMALL_MAX_CM {
            LengthClass::Small
        } else if length_cm <= MEDIUM_MAX_CM {
            LengthClass::Medium
        } else if length_cm <= LARGE_MAX_CM {
            LengthClass::Large
        } else {
            LengthClass::VeryLarge
        }
    }

    pub fn column(self) -> &'static str {
        match self {
            LengthClass::Small => "small",
            LengthClass::Medium => "medium",
            LengthClass::Large => "large",
            LengthClass::VeryLarge => "very_large",
        }
    }
}

impl fmt::Display for LengthClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.column())
    }
}

/// One value per length class, indexed by [`LengthClass`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PerClass<T>(pub [T; 4]);

impl<T> PerClass<T> {
    pub fn from_fn(mut f: impl FnMut(LengthClass) -> T) -> Self {
        PerClass(LengthClass::ALL.map(&mut f))
    }

    pub fn iter(&self) -> impl Iterator<Item = (LengthClass, &T)> {
        LengthClass::ALL.into_iter().zip(self.0.iter())
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> PerClass<U> {
        PerClass::from_fn(|c| f(&self[c]))
    }
}

impl<T> Index<LengthClass> for PerClass<T> {
    type Output = T;
    fn index(&self, class: LengthClass) -> &T {
        &self.0[class.index()]
    }
}

impl<T> IndexMut<LengthClass> for PerClass<T> {
    fn index_mut(&mut self, class: LengthClass) -> &mut T {
        &mut self.0[class.index()]
    }
}

/// Vehicle length from the longer bounding-box edge.
pub fn vehicle_length_cm(d: &Detection) -> f64 {
    d.width_px().max(d.height_px()) * d.gsd_m_per_px * 100.0
}

pub fn classify_length(d: &Detection) -> LengthClass {
    LengthClass::from_length_cm(vehicle_length_cm(d))
}

/// Drops detections below the confidence threshold.
pub fn filter_confident(detections: &[Detection], min_confidence: f64) -> Vec<Detection> {
    detections
        .iter()
        .filter(|d| d.confidence >= min_confidence)
        .cloned()
        .collect()
}

/// Speed fed into the count estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpeedInput {
    Known(f64),
    /// Live estimation produced no vehicle pairs.
    Failed,
}

impl From<f64> for SpeedInput {
    fn from(kmh: f64) -> Self {
        SpeedInput::Known(kmh)
    }
}

impl From<&SpeedEstimate> for SpeedInput {
    fn from(est: &SpeedEstimate) -> Self {
        match est.mean_speed_kmh {
            Some(v) => SpeedInput::Known(v),
            None => SpeedInput::Failed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountEstimate {
    pub counts_15min: PerClass<f64>,
    pub total_15min: f64,
    pub speed_used_kmh: f64,
    pub segment_length_km: f64,
    pub n_detected: PerClass<u32>,
}

impl CountEstimate {
    /// Counts per class passing a point in fifteen minutes for a given speed and segment.
    pub fn from_detected(n_detected: PerClass<u32>, speed_kmh: f64, segment_length_km: f64) -> Self {
        let factor = speed_kmh * (15.0 / 60.0) / segment_length_km;
        let counts_15min = n_detected.map(|&n| f64::from(n) * factor);
        let total_15min = counts_15min.0.iter().sum();
        CountEstimate {
            counts_15min,
            total_15min,
            speed_used_kmh: speed_kmh,
            segment_length_km,
            n_detected,
        }
    }
}

pub fn count_by_class(detections: &[Detection]) -> PerClass<u32> {
    let mut n = PerClass([0u32; 4]);
    for d in detections {
        n[classify_length(d)] += 1;
    }
    n
}

pub fn estimate_counts(
    detections: &[Detection],
    speed: impl Into<SpeedInput>,
    segment_length_km: f64,
) -> Result<CountEstimate> {
    if !(segment_length_km > 0.0) {
        return Err(Error::Invalid(format!(
            "segment length must be > 0 km, got {segment_length_km}"
        )));
    }
    let speed_kmh = match speed.into() {
        SpeedInput::Known(v) if v >= 0.0 && v.is_finite() => v,
        SpeedInput::Known(v) => {
            return Err(Error::Invalid(format!("speed must be a finite value >= 0, got {v}")))
        }
        SpeedInput::Failed => {
            return Err(Error::NoSpeed {
                site: "(unspecified)".into(),
                hint: "live speed estimation failed; supply a historical speed instead".into(),
            })
        }
    };
    Ok(CountEstimate::from_detected(
        count_by_class(detections),
        speed_kmh,
        segment_length_km,
    ))
}

/// Writes an estimate as a single row of the count-history schema, so estimated
/// and observed counts share one file format.
pub fn write_estimate_row<W: std::io::Write>(
    writer: &mut csv::Writer<W>,
    timestamp: NaiveDateTime,
    site_id: &str,
    direction: Direction,
    est: &CountEstimate,
) -> csv::Result<()> {
    let mut row = vec![
        timestamp.format(TIMESTAMP_FORMAT).to_string(),
        site_id.to_string(),
        direction.to_string(),
    ];
    row.extend(est.counts_15min.0.iter().map(|v| v.to_string()));
    row.push(est.total_15min.to_string());
    row.push(est.speed_used_kmh.to_string());
    writer.write_record(&row)
}

pub fn write_estimate(path: &Path, meta: &ImageMeta, est: &CountEstimate) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(COUNT_HEADER).map_err(|e| csv_io(path, e))?;
    let slot = crate::ingest::floor_to_slot(meta.acquisition_timestamp);
    write_estimate_row(&mut w, slot, &meta.site_id, meta.direction, est)
        .map_err(|e| csv_io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// A row read back from an estimate file.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRow {
    pub timestamp: NaiveDateTime,
    pub site_id: String,
    pub direction: Direction,
    pub counts_15min: PerClass<f64>,
    pub total_15min: f64,
    pub speed_kmh: f64,
}

pub fn read_estimates(path: &Path) -> Result<Vec<EstimateRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_io(path, e))?;
    let header = rdr.headers().map_err(|e| csv_io(path, e))?.clone();
    if header.iter().collect::<Vec<_>>() != COUNT_HEADER {
        return Err(Error::schema(path, "unexpected header for a count estimate file"));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_io(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| Error::parse(path, line, format!("column {} is not a number", COUNT_HEADER[i])))
        };
        let timestamp = crate::ingest::parse_timestamp(&rec[0])
            .ok_or_else(|| Error::parse(path, line, format!("unparseable timestamp '{}'", &rec[0])))?;
        let direction = rec[2]
            .parse()
            .map_err(|e: Error| Error::parse(path, line, e.to_string()))?;
        rows.push(EstimateRow {
            timestamp,
            site_id: rec[1].to_string(),
            direction,
            counts_15min: PerClass([num(3)?, num(4)?, num(5)?, num(6)?]),
            total_15min: num(7)?,
            speed_kmh: num(8)?,
        });
    }
    Ok(rows)
}

pub(crate) fn csv_io(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    Error::parse(path, line, e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(w: f64, h: f64, gsd: f64) -> Detection {
        Detection::new([0.0, w, 0.0, h], "Small car", 0.9, gsd).unwrap()
    }

    #[test]
    fn classify_by_long_edge() {
        // 15 px * 0.31 m = 465 cm
        assert_eq!(classify_length(&det(15.0, 6.0, 0.31)), LengthClass::Small);
        assert_eq!(classify_length(&det(6.0, 15.0, 0.31)), LengthClass::Small);
        // 40 px * 0.31 m = 1240 cm
        assert_eq!(classify_length(&det(40.0, 8.0, 0.31)), LengthClass::VeryLarge);
    }

    #[test]
    fn class_boundaries() {
        assert_eq!(LengthClass::from_length_cm(520.0), LengthClass::Small);
        assert_eq!(LengthClass::from_length_cm(521.0), LengthClass::Medium);
        assert_eq!(LengthClass::from_length_cm(660.0), LengthClass::Medium);
        assert_eq!(LengthClass::from_length_cm(661.0), LengthClass::Large);
        assert_eq!(LengthClass::from_length_cm(1160.0), LengthClass::Large);
        assert_eq!(LengthClass::from_length_cm(1160.5), LengthClass::VeryLarge);
        assert_eq!(LengthClass::from_length_cm(0.1), LengthClass::Small);
    }

    #[test]
    fn ten_small_at_sixty() {
        let dets: Vec<_> = (0..10).map(|_| det(12.0, 5.0, 0.31)).collect();
        let est = estimate_counts(&dets, 60.0, 1.0).unwrap();
        assert_eq!(est.counts_15min[LengthClass::Small], 150.0);
        assert_eq!(est.total_15min, 150.0);
        assert_eq!(est.n_detected[LengthClass::Small], 10);
    }

    #[test]
    fn empty_and_stationary() {
        let est = estimate_counts(&[], 80.0, 2.0).unwrap();
        assert_eq!(est.total_15min, 0.0);
        let dets = vec![det(12.0, 5.0, 0.31); 4];
        let est = estimate_counts(&dets, 0.0, 2.0).unwrap();
        assert!(est.counts_15min.0.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn bad_segment_and_failed_speed() {
        assert!(matches!(estimate_counts(&[], 60.0, 0.0), Err(Error::Invalid(_))));
        assert!(matches!(
            estimate_counts(&[], SpeedInput::Failed, 1.0),
            Err(Error::NoSpeed { .. })
        ));
    }

    #[test]
    fn unit_coherence() {
        let dets = vec![det(12.0, 5.0, 0.31), det(30.0, 8.0, 0.31), det(19.0, 6.0, 0.31)];
        let a = estimate_counts(&dets, 90.0, 2.5).unwrap();
        let b = estimate_counts(&dets, 90.0 / 2.5, 1.0).unwrap();
        for c in LengthClass::ALL {
            assert!((a.counts_15min[c] - b.counts_15min[c]).abs() < 1e-9);
        }
    }
}
