//! Readers and writers for every external input: detection files, count-site
//! history, emissions factor tables and Local Authority ground truth.
//!
//! Every reader either returns fully validated values or an error naming the
//! offending line or field. Missing cells in count history are flagged on the
//! record, never imputed.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::aadt::AadtVector;
use crate::counts::{csv_io, LengthClass, PerClass};
use crate::emissions::VehicleClass;
use crate::error::{Error, Result};

/// Timestamp layout written to count files.
pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M";

pub const COUNT_HEADER: [&str; 9] = [
    "timestamp",
    "site_id",
    "direction",
    "small",
    "medium",
    "large",
    "very_large",
    "total",
    "mean_speed_kmh",
];

pub const FACTORS_HEADER: [&str; 5] = ["table", "key", "subkey", "value", "vintage"];

pub const GROUND_TRUTH_HEADER: [&str; 9] = [
    "la",
    "road_type",
    "year",
    "site_id",
    "direction",
    "cars_taxis",
    "lgv",
    "hgv",
    "buses_coaches",
];

pub const EMISSIONS_TRUTH_HEADER: [&str; 4] = ["la", "road_type", "year", "kgco2e"];

/// Sites with more missing count data than this are not used.
pub const MAX_MISSING_FRACTION: f64 = 0.10;

/// Band time lag between the two multispectral sensor lines of WorldView-2/3.
pub const DEFAULT_BAND_TIME_LAG_S: f64 = 0.26;

/// Default detector confidence cut-off. Not validated against real detector output.
pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.25;

const BUNDLED_FACTORS: &str = include_str!("../data/factors_default.csv");

/// Direction of travel at a count site.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Direction {
    A,
    B,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::A => "A",
            Direction::B => "B",
        })
    }
}

impl FromStr for Direction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "A" | "a" => Ok(Direction::A),
            "B" | "b" => Ok(Direction::B),
            other => Err(Error::Invalid(format!("unknown direction '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RoadType {
    #[serde(rename = "Motorways")]
    Motorways,
    #[serde(rename = "A-Roads")]
    ARoads,
    #[serde(rename = "Minor Roads")]
    MinorRoads,
}

impl RoadType {
    pub const ALL: [RoadType; 3] = [RoadType::Motorways, RoadType::ARoads, RoadType::MinorRoads];

    pub fn name(self) -> &'static str {
        match self {
            RoadType::Motorways => "Motorways",
            RoadType::ARoads => "A-Roads",
            RoadType::MinorRoads => "Minor Roads",
        }
    }

    /// Lower-case form used for command-line values and file names.
    pub fn slug(self) -> &'static str {
        match self {
            RoadType::Motorways => "motorways",
            RoadType::ARoads => "a-roads",
            RoadType::MinorRoads => "minor-roads",
        }
    }
}

impl fmt::Display for RoadType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for RoadType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        RoadType::ALL
            .into_iter()
            .find(|r| r.name().eq_ignore_ascii_case(t) || r.slug().eq_ignore_ascii_case(t))
            .ok_or_else(|| Error::Invalid(format!("unknown road type '{t}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fuel {
    Petrol,
    Diesel,
}

impl Fuel {
    pub const ALL: [Fuel; 2] = [Fuel::Petrol, Fuel::Diesel];

    pub fn name(self) -> &'static str {
        match self {
            Fuel::Petrol => "petrol",
            Fuel::Diesel => "diesel",
        }
    }
}

impl fmt::Display for Fuel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for Fuel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "petrol" => Ok(Fuel::Petrol),
            "diesel" => Ok(Fuel::Diesel),
            other => Err(Error::Invalid(format!("unknown fuel '{other}'"))),
        }
    }
}

/// One detected road vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    /// `(x_min, x_max, y_min, y_max)` in pixels.
    pub bbox: [f64; 4],
    pub source_class: String,
    pub confidence: f64,
    pub gsd_m_per_px: f64,
}

impl Detection {
    pub fn new(
        bbox: [f64; 4],
        source_class: impl Into<String>,
        confidence: f64,
        gsd_m_per_px: f64,
    ) -> Result<Self> {
        let [x_min, x_max, y_min, y_max] = bbox;
        if bbox.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("bbox values must be finite".into()));
        }
        if !(x_min < x_max) {
            return Err(Error::Invalid(format!(
                "bbox requires x_min < x_max (got {x_min} and {x_max})"
            )));
        }
        if !(y_min < y_max) {
            return Err(Error::Invalid(format!(
                "bbox requires y_min < y_max (got {y_min} and {y_max})"
            )));
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::Invalid(format!(
                "confidence must lie in [0, 1] (got {confidence})"
            )));
        }
        if !(gsd_m_per_px > 0.0) {
            return Err(Error::Invalid(format!(
                "gsd_m_per_px must be > 0 (got {gsd_m_per_px})"
            )));
        }
        Ok(Detection {
            bbox,
            source_class: source_class.into(),
            confidence,
            gsd_m_per_px,
        })
    }

    pub fn width_px(&self) -> f64 {
        self.bbox[1] - self.bbox[0]
    }

    pub fn height_px(&self) -> f64 {
        self.bbox[3] - self.bbox[2]
    }
}

/// Acquisition metadata for one masked, single-direction image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMeta {
    pub site_id: String,
    pub la_name: String,
    pub direction: Direction,
    /// Local wall-clock time, naive (see [`parse_timestamp`]).
    #[serde(with = "naive_iso")]
    pub acquisition_timestamp: NaiveDateTime,
    pub segment_length_km: f64,
    pub gsd_m_per_px: f64,
    #[serde(default = "default_lag")]
    pub band_time_lag_s: f64,
}

fn default_lag() -> f64 {
    DEFAULT_BAND_TIME_LAG_S
}

impl ImageMeta {
    pub fn validate(&self) -> Result<()> {
        if self.site_id.trim().is_empty() {
            return Err(Error::Invalid("site_id must not be empty".into()));
        }
        if !(self.segment_length_km > 0.0) {
            return Err(Error::Invalid(format!(
                "segment_length_km must be > 0 (got {})",
                self.segment_length_km
            )));
        }
        if !(self.gsd_m_per_px > 0.0) {
            return Err(Error::Invalid(format!(
                "gsd_m_per_px must be > 0 (got {})",
                self.gsd_m_per_px
            )));
        }
        if !(self.band_time_lag_s > 0.0) {
            return Err(Error::Invalid(format!(
                "band_time_lag_s must be > 0 (got {})",
                self.band_time_lag_s
            )));
        }
        Ok(())
    }
}

mod naive_iso {
    use super::parse_timestamp;
    use chrono::NaiveDateTime;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &NaiveDateTime, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&t.format("%Y-%m-%dT%H:%M:%S").to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<NaiveDateTime, D::Error> {
        let raw = String::deserialize(d)?;
        parse_timestamp(&raw)
            .ok_or_else(|| serde::de::Error::custom(format!("invalid ISO-8601 timestamp '{raw}'")))
    }
}

/// Parses the timestamp layouts found in input files. Values with an explicit
/// offset (`Z`, `+01:00`) are converted to UTC wall-clock time.
pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    const LAYOUTS: [&str; 4] = [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%d %H:%M",
    ];
    LAYOUTS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .or_else(|| DateTime::parse_from_rfc3339(s).ok().map(|t| t.naive_utc()))
}

/// Start of the fifteen-minute interval containing `t`.
pub fn floor_to_slot(t: NaiveDateTime) -> NaiveDateTime {
    let minute = t.minute() - t.minute() % 15;
    t.with_minute(minute)
        .and_then(|t| t.with_second(0))
        .and_then(|t| t.with_nanosecond(0))
        .expect("valid time components")
}

#[derive(Deserialize)]
struct RawFile<'a> {
    meta: Option<serde_json::Value>,
    #[serde(borrow)]
    detections: Option<Vec<&'a RawValue>>,
}

#[derive(Serialize, Deserialize)]
struct RawDetection {
    bbox: [f64; 4],
    class: String,
    confidence: f64,
}

fn line_of(text: &str, offset: usize) -> u64 {
    text.as_bytes()[..offset].iter().filter(|&&b| b == b'\n').count() as u64 + 1
}

/// Reads a detections document. The image's ground sample distance is copied onto
/// every detection.
pub fn parse_detections(path: &Path) -> Result<(Vec<Detection>, ImageMeta)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_detections_str(&text, path)
}

pub fn parse_detections_str(text: &str, path: &Path) -> Result<(Vec<Detection>, ImageMeta)> {
    let raw: RawFile =
        serde_json::from_str(text).map_err(|e| Error::parse(path, e.line() as u64, e.to_string()))?;
    let meta = raw
        .meta
        .ok_or_else(|| Error::schema(path, "missing top-level 'meta' object"))?;
    let meta: ImageMeta =
        serde_json::from_value(meta).map_err(|e| Error::schema(path, format!("meta: {e}")))?;
    meta.validate().map_err(|e| Error::schema(path, e.to_string()))?;
    let records = raw
        .detections
        .ok_or_else(|| Error::schema(path, "missing top-level 'detections' array"))?;
    let mut detections = Vec::with_capacity(records.len());
    for rec in records {
        let offset = rec.get().as_ptr() as usize - text.as_ptr() as usize;
        let line = line_of(text, offset);
        let d: RawDetection = serde_json::from_str(rec.get())
            .map_err(|e| Error::parse(path, line + e.line() as u64 - 1, e.to_string()))?;
        let det = Detection::new(d.bbox, d.class, d.confidence, meta.gsd_m_per_px)
            .map_err(|e| Error::parse(path, line, e.to_string()))?;
        detections.push(det);
    }
    Ok((detections, meta))
}

/// Writes one detection per line so parse errors can point at a record.
pub fn write_detections(path: &Path, meta: &ImageMeta, detections: &[Detection]) -> Result<()> {
    let text = detections_to_string(meta, detections);
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn detections_to_string(meta: &ImageMeta, detections: &[Detection]) -> String {
    let meta_json = serde_json::to_string(meta).expect("meta serializes");
    let mut out = format!("{{\n  \"meta\": {meta_json},\n  \"detections\": [");
    for (i, d) in detections.iter().enumerate() {
        let rec = RawDetection {
            bbox: d.bbox,
            class: d.source_class.clone(),
            confidence: d.confidence,
        };
        out.push_str(if i == 0 { "\n    " } else { ",\n    " });
        out.push_str(&serde_json::to_string(&rec).expect("detection serializes"));
    }
    if !detections.is_empty() {
        out.push_str("\n  ");
    }
    out.push_str("]\n}\n");
    out
}

/// One fifteen-minute observation at a count site. `None` marks a missing cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CountRecord {
    pub timestamp: NaiveDateTime,
    pub site_id: String,
    pub direction: Direction,
    pub counts: PerClass<Option<u32>>,
    pub total: Option<u32>,
    pub mean_speed_kmh: Option<f64>,
}

impl CountRecord {
    pub fn is_complete(&self) -> bool {
        self.counts.0.iter().all(Option::is_some)
            && self.total.is_some()
            && self.mean_speed_kmh.is_some()
    }

    pub fn missing_fields(&self) -> Vec<&'static str> {
        let mut out: Vec<&'static str> = LengthClass::ALL
            .into_iter()
            .filter(|&c| self.counts[c].is_none())
            .map(LengthClass::column)
            .collect();
        if self.total.is_none() {
            out.push("total");
        }
        if self.mean_speed_kmh.is_none() {
            out.push("mean_speed_kmh");
        }
        out
    }
}

pub fn parse_count_history(path: &Path) -> Result<Vec<CountRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_count_history(file, path)
}

pub fn read_count_history<R: std::io::Read>(reader: R, path: &Path) -> Result<Vec<CountRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers().map_err(|e| csv_io(path, e))?.clone();
    if header.iter().map(str::trim).collect::<Vec<_>>() != COUNT_HEADER {
        return Err(Error::schema(
            path,
            format!("expected header '{}'", COUNT_HEADER.join(",")),
        ));
    }
    let mut records = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_io(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let err = |msg: String| Error::parse(path, line, msg);

        let ts_raw = rec[0].trim();
        let timestamp =
            parse_timestamp(ts_raw).ok_or_else(|| err(format!("unparseable timestamp '{ts_raw}'")))?;
        if timestamp.minute() % 15 != 0 || timestamp.second() != 0 {
            return Err(err(format!("timestamp '{ts_raw}' is not on a 15-minute boundary")));
        }
        let site_id = rec[1].trim().to_string();
        if site_id.is_empty() {
            return Err(err("missing site_id".into()));
        }
        let direction: Direction = rec[2].parse().map_err(|e: Error| err(e.to_string()))?;

        let int_cell = |i: usize| -> Result<Option<u32>> {
            let cell = rec[i].trim();
            if cell.is_empty() {
                return Ok(None);
            }
            cell.parse::<u32>().map(Some).map_err(|_| {
                err(format!(
                    "column {} must be a non-negative integer (got '{cell}')",
                    COUNT_HEADER[i]
                ))
            })
        };
        let counts = PerClass([int_cell(3)?, int_cell(4)?, int_cell(5)?, int_cell(6)?]);
        let total = int_cell(7)?;
        let speed_cell = rec[8].trim();
        let mean_speed_kmh = if speed_cell.is_empty() {
            None
        } else {
            let v: f64 = speed_cell
                .parse()
                .map_err(|_| err(format!("mean_speed_kmh is not a number ('{speed_cell}')")))?;
            if !(v >= 0.0) || !v.is_finite() {
                return Err(err(format!("mean_speed_kmh must be >= 0 (got {v})")));
            }
            Some(v)
        };

        if let (Some(t), true) = (total, counts.0.iter().all(Option::is_some)) {
            let sum: u32 = counts.0.iter().flatten().sum();
            if sum != t {
                return Err(err(format!(
                    "row {line}: class counts sum to {sum} but total is {t}"
                )));
            }
        }
        records.push(CountRecord {
            timestamp,
            site_id,
            direction,
            counts,
            total,
            mean_speed_kmh,
        });
    }
    records.sort_by_key(|r| r.timestamp);
    Ok(records)
}

pub fn write_count_history(path: &Path, records: &[CountRecord]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    write_count_records(&mut w, records).map_err(|e| csv_io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_count_records<W: std::io::Write>(
    w: &mut csv::Writer<W>,
    records: &[CountRecord],
) -> csv::Result<()> {
    w.write_record(COUNT_HEADER)?;
    let opt = |v: Option<u32>| v.map(|v| v.to_string()).unwrap_or_default();
    for r in records {
        w.write_record([
            r.timestamp.format(TIMESTAMP_FORMAT).to_string(),
            r.site_id.clone(),
            r.direction.to_string(),
            opt(r.counts[LengthClass::Small]),
            opt(r.counts[LengthClass::Medium]),
            opt(r.counts[LengthClass::Large]),
            opt(r.counts[LengthClass::VeryLarge]),
            opt(r.total),
            r.mean_speed_kmh.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SiteValidation {
    pub records: usize,
    pub missing: usize,
    pub missing_fraction: f64,
    pub usable: bool,
}

pub fn validate_site(records: &[CountRecord]) -> Result<SiteValidation> {
    if records.is_empty() {
        return Err(Error::Empty("count history has no records"));
    }
    let missing = records.iter().filter(|r| !r.is_complete()).count();
    let missing_fraction = missing as f64 / records.len() as f64;
    Ok(SiteValidation {
        records: records.len(),
        missing,
        missing_fraction,
        usable: missing_fraction <= MAX_MISSING_FRACTION,
    })
}

/// Published constants for the emissions calculation, plus the vintage of each figure.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmissionsFactors {
    pub road_length_km: BTreeMap<(String, RoadType), f64>,
    pub conversion_kgco2e_per_litre: BTreeMap<Fuel, f64>,
    pub fuel_km_per_litre: BTreeMap<(VehicleClass, Fuel), f64>,
    pub fuel_mix: BTreeMap<Fuel, f64>,
    /// Keyed `table/key/subkey`.
    pub vintage: BTreeMap<String, String>,
}

impl EmissionsFactors {
    /// Factor table shipped with the crate.
    pub fn bundled() -> Self {
        read_factors(BUNDLED_FACTORS.as_bytes(), Path::new("<bundled factors>"))
            .expect("bundled factor table is valid")
    }

    pub fn road_length(&self, la: &str, road_type: RoadType) -> Result<f64> {
        self.road_length_km
            .get(&(la.to_string(), road_type))
            .copied()
            .ok_or_else(|| Error::MissingFactor(format!("road_length_km/{la}/{road_type}")))
    }

    pub fn km_per_litre(&self, class: VehicleClass, fuel: Fuel) -> Result<f64> {
        self.fuel_km_per_litre
            .get(&(class, fuel))
            .copied()
            .ok_or_else(|| Error::MissingFactor(format!("fuel_km_per_litre/{class}/{fuel}")))
    }

    pub fn conversion(&self, fuel: Fuel) -> Result<f64> {
        self.conversion_kgco2e_per_litre
            .get(&fuel)
            .copied()
            .ok_or_else(|| Error::MissingFactor(format!("conversion_kgco2e_per_litre/{fuel}")))
    }

    /// Share of the fleet without a petrol/diesel tailpipe.
    pub fn residual_share(&self) -> f64 {
        1.0 - self.fuel_mix.values().sum::<f64>()
    }

    fn validate(&self, path: &Path) -> Result<()> {
        let mix: f64 = self.fuel_mix.values().sum();
        if mix > 1.0 + 1e-12 {
            return Err(Error::schema(path, format!("fuel_mix fractions sum to {mix} > 1")));
        }
        if self.fuel_mix.values().any(|&v| v > 1.0) {
            return Err(Error::schema(path, "fuel_mix fraction above 1"));
        }
        Ok(())
    }
}

pub fn parse_factors(path: &Path) -> Result<EmissionsFactors> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_factors(file, path)
}

pub fn read_factors<R: std::io::Read>(reader: R, path: &Path) -> Result<EmissionsFactors> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| csv_io(path, e))?.clone();
    if header.iter().map(str::trim).collect::<Vec<_>>() != FACTORS_HEADER {
        return Err(Error::schema(
            path,
            format!("expected header '{}'", FACTORS_HEADER.join(",")),
        ));
    }
    let mut f = EmissionsFactors::default();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_io(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let err = |msg: String| Error::parse(path, line, msg);
        let table = rec[0].trim();
        let key = rec[1].trim();
        let subkey = rec[2].trim();
        let value: f64 = rec[3]
            .trim()
            .parse()
            .map_err(|_| err(format!("value '{}' is not a number", rec[3].trim())))?;
        if !(value > 0.0) || !value.is_finite() {
            return Err(err(format!("factor {table}/{key}/{subkey} must be > 0 (got {value})")));
        }
        let inserted = match table {
            "road_length_km" => {
                let rt: RoadType = subkey.parse().map_err(|e: Error| err(e.to_string()))?;
                f.road_length_km.insert((key.to_string(), rt), value)
            }
            "conversion_kgco2e_per_litre" => {
                let fuel: Fuel = key.parse().map_err(|e: Error| err(e.to_string()))?;
                f.conversion_kgco2e_per_litre.insert(fuel, value)
            }
            "fuel_km_per_litre" => {
                let class: VehicleClass = key.parse().map_err(|e: Error| err(e.to_string()))?;
                let fuel: Fuel = subkey.parse().map_err(|e: Error| err(e.to_string()))?;
                f.fuel_km_per_litre.insert((class, fuel), value)
            }
            "fuel_mix" => {
                let fuel: Fuel = key.parse().map_err(|e: Error| err(e.to_string()))?;
                f.fuel_mix.insert(fuel, value)
            }
            other => return Err(err(format!("unknown factor table '{other}'"))),
        };
        if inserted.is_some() {
            return Err(err(format!("duplicate factor {table}/{key}/{subkey}")));
        }
        let vintage = rec.get(4).map(str::trim).unwrap_or("");
        if !vintage.is_empty() {
            f.vintage
                .insert(format!("{table}/{key}/{subkey}"), vintage.to_string());
        }
    }
    f.validate(path)?;
    Ok(f)
}

pub fn write_factors(path: &Path, f: &EmissionsFactors) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    let mut rows: Vec<(String, String, String, f64)> = Vec::new();
    for ((la, rt), v) in &f.road_length_km {
        rows.push(("road_length_km".into(), la.clone(), rt.name().into(), *v));
    }
    for (fuel, v) in &f.conversion_kgco2e_per_litre {
        rows.push(("conversion_kgco2e_per_litre".into(), fuel.name().into(), String::new(), *v));
    }
    for ((class, fuel), v) in &f.fuel_km_per_litre {
        rows.push(("fuel_km_per_litre".into(), class.key().into(), fuel.name().into(), *v));
    }
    for (fuel, v) in &f.fuel_mix {
        rows.push(("fuel_mix".into(), fuel.name().into(), String::new(), *v));
    }
    w.write_record(FACTORS_HEADER).map_err(|e| csv_io(path, e))?;
    for (table, key, subkey, value) in rows {
        let vintage = f
            .vintage
            .get(&format!("{table}/{key}/{subkey}"))
            .cloned()
            .unwrap_or_default();
        w.write_record([table, key, subkey, value.to_string(), vintage])
            .map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Directional AADT published for one count site in one year.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteAadt {
    pub la_name: String,
    pub road_type: RoadType,
    pub year: i32,
    pub site_id: String,
    pub direction: Direction,
    pub aadt: AadtVector,
}

pub fn parse_ground_truth(path: &Path) -> Result<Vec<SiteAadt>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    let header = rdr.headers().map_err(|e| csv_io(path, e))?.clone();
    if header.iter().map(str::trim).collect::<Vec<_>>() != GROUND_TRUTH_HEADER {
        return Err(Error::schema(
            path,
            format!("expected header '{}'", GROUND_TRUTH_HEADER.join(",")),
        ));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_io(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let err = |msg: String| Error::parse(path, line, msg);
        let num = |i: usize| -> Result<f64> {
            let v: f64 = rec[i]
                .trim()
                .parse()
                .map_err(|_| err(format!("{} is not a number", GROUND_TRUTH_HEADER[i])))?;
            if v < 0.0 || !v.is_finite() {
                return Err(err(format!("{} must be >= 0", GROUND_TRUTH_HEADER[i])));
            }
            Ok(v)
        };
        out.push(SiteAadt {
            la_name: rec[0].trim().to_string(),
            road_type: rec[1].parse().map_err(|e: Error| err(e.to_string()))?,
            year: rec[2]
                .trim()
                .parse()
                .map_err(|_| err("year is not an integer".into()))?,
            site_id: rec[3].trim().to_string(),
            direction: rec[4].parse().map_err(|e: Error| err(e.to_string()))?,
            aadt: AadtVector::new(num(5)?, num(6)?, num(7)?, num(8)?),
        });
    }
    Ok(out)
}

pub fn write_ground_truth(path: &Path, rows: &[SiteAadt]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(GROUND_TRUTH_HEADER).map_err(|e| csv_io(path, e))?;
    for r in rows {
        w.write_record([
            r.la_name.clone(),
            r.road_type.name().to_string(),
            r.year.to_string(),
            r.site_id.clone(),
            r.direction.to_string(),
            r.aadt.cars_taxis.to_string(),
            r.aadt.lgv.to_string(),
            r.aadt.hgv.to_string(),
            r.aadt.buses_coaches.to_string(),
        ])
        .map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Published annual emissions for one LA and road type.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionsTruth {
    pub la_name: String,
    pub road_type: RoadType,
    pub year: i32,
    pub kgco2e: f64,
}

pub fn parse_emissions_truth(path: &Path) -> Result<Vec<EmissionsTruth>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    let header = rdr.headers().map_err(|e| csv_io(path, e))?.clone();
    if header.iter().map(str::trim).collect::<Vec<_>>() != EMISSIONS_TRUTH_HEADER {
        return Err(Error::schema(
            path,
            format!("expected header '{}'", EMISSIONS_TRUTH_HEADER.join(",")),
        ));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_io(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let err = |msg: String| Error::parse(path, line, msg);
        out.push(EmissionsTruth {
            la_name: rec[0].trim().to_string(),
            road_type: rec[1].parse().map_err(|e: Error| err(e.to_string()))?,
            year: rec[2]
                .trim()
                .parse()
                .map_err(|_| err("year is not an integer".into()))?,
            kgco2e: rec[3]
                .trim()
                .parse()
                .map_err(|_| err("kgco2e is not a number".into()))?,
        });
    }
    Ok(out)
}

pub fn write_emissions_truth(path: &Path, rows: &[EmissionsTruth]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(EMISSIONS_TRUTH_HEADER)
        .map_err(|e| csv_io(path, e))?;
    for r in rows {
        w.write_record([
            r.la_name.clone(),
            r.road_type.name().to_string(),
            r.year.to_string(),
            r.kgco2e.to_string(),
        ])
        .map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
