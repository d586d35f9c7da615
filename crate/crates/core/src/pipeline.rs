//! End-to-end orchestration: train site models, predict AADT and emissions from
//! detection files, evaluate against ground truth, estimate live speed from
//! rasters, and write synthetic fixtures.
//!
//! Every intermediate is written to the output directory so a run can be
//! audited or replayed one step at a time. Directions are processed as
//! independent runs and only meet at [`aggregate_directions`].

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::Datelike;
use serde::{Deserialize, Serialize};

use crate::aadt::{
    aggregate_directions, build_features, la_targets, predict, train_for_road_type, AadtVector,
    ModelWeights, TimedEstimate, TrainConfig, TrainingLog,
};
use crate::counts::{csv_io, estimate_counts, filter_confident, read_estimates, write_estimate, LengthClass};
use crate::emissions::{apportion_aadt, compute_emissions, EmissionsReport, VehicleClass};
use crate::error::{Error, Result};
use crate::ingest::{
    floor_to_slot, parse_count_history, parse_detections, parse_emissions_truth, parse_factors,
    parse_ground_truth, validate_site, CountRecord, Detection, Direction, EmissionsFactors,
    ImageMeta, RoadType, DEFAULT_CONFIDENCE_THRESHOLD,
};
use crate::metrics::{
    mape, with_average_rows, write_metric_table, write_scatter, EvalPair, MetricRow, ScatterPoint,
};
use crate::speed::{estimate_from_raster, read_raster, SpeedRun, Thresholds};
use crate::synth::{write_fixture, FixtureManifest, SynthConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SpeedSource {
    /// Mean speed recorded by the count site at the image time.
    #[default]
    Historical,
    /// Speed measured from the image's band time lag.
    Estimated,
}

impl FromStr for SpeedSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "historical" => Ok(SpeedSource::Historical),
            "estimated" => Ok(SpeedSource::Estimated),
            other => Err(Error::Config(format!(
                "unknown speed source '{other}' (expected historical or estimated)"
            ))),
        }
    }
}

/// Which count-site speed stands in for "historical" speed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum HistoricalSpeed {
    /// The fifteen-minute interval containing the acquisition time.
    #[default]
    Interval,
    /// Mean over the acquisition day.
    Daily,
}

/// Every setting of a run. Loaded from a flat TOML file; relative paths are
/// resolved against the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub history_dir: Option<PathBuf>,
    pub test_history_dir: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    pub emissions_truth: Option<PathBuf>,
    pub factors: Option<PathBuf>,
    pub detections_dir: Option<PathBuf>,
    pub rasters_dir: Option<PathBuf>,
    pub weights_dir: PathBuf,
    pub output_dir: PathBuf,
    pub speed_source: SpeedSource,
    pub historical_speed: HistoricalSpeed,
    #[serde(with = "road_type_slug")]
    pub road_type: RoadType,
    pub no_vehicle_type: bool,
    pub confidence_threshold: f64,
    pub seed: u64,
    pub hidden_layers: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub val_fraction: f64,
    pub min_area_px: usize,
    pub min_compactness: f64,
    pub min_rectangularity: f64,
    pub intensity_quantile: f64,
    pub max_displacement_m: Option<f64>,
    /// Vehicle types whose share of true AADT is below this are flagged as
    /// excluded from the per-type MAPE summary.
    pub sparse_share: f64,
    pub synth_days: usize,
}

mod road_type_slug {
    use super::RoadType;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(r: &RoadType, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(r.slug())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<RoadType, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let th = Thresholds::default();
        RunConfig {
            history_dir: None,
            test_history_dir: None,
            ground_truth: None,
            emissions_truth: None,
            factors: None,
            detections_dir: None,
            rasters_dir: None,
            weights_dir: PathBuf::from("weights"),
            output_dir: PathBuf::from("out"),
            speed_source: SpeedSource::default(),
            historical_speed: HistoricalSpeed::default(),
            road_type: RoadType::Motorways,
            no_vehicle_type: false,
            confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
            seed: train.seed,
            hidden_layers: train.hidden_layers,
            learning_rate: train.learning_rate,
            batch_size: train.batch_size,
            max_epochs: train.max_epochs,
            patience: train.patience,
            val_fraction: train.val_fraction,
            min_area_px: th.min_area_px,
            min_compactness: th.min_compactness,
            min_rectangularity: th.min_rectangularity,
            intensity_quantile: th.intensity_quantile,
            max_displacement_m: None,
            sparse_share: 0.02,
            synth_days: 340,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::schema(path, e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text, path)?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut self.history_dir,
            &mut self.test_history_dir,
            &mut self.ground_truth,
            &mut self.emissions_truth,
            &mut self.factors,
            &mut self.detections_dir,
            &mut self.rasters_dir,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        fix(&mut self.weights_dir);
        fix(&mut self.output_dir);
    }

    /// Overrides one key with a command-line value. `-` and `_` are interchangeable
    /// in the key; the value is read as a TOML literal, falling back to a string.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.replace('-', "_");
        let mut table = toml::Table::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        if !table.contains_key(&key) && !OPTIONAL_KEYS.contains(&key.as_str()) {
            return Err(Error::Config(format!("unknown configuration key '{key}'")));
        }
        let parsed = format!("v = {value}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));
        table.insert(key.clone(), parsed);
        *self = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("--{key}: {}", e.message())))?;
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            hidden_layers: self.hidden_layers.clone(),
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            val_fraction: self.val_fraction,
            seed: self.seed,
        }
    }

    pub fn thresholds(&self) -> Thresholds {
        Thresholds {
            min_area_px: self.min_area_px,
            min_compactness: self.min_compactness,
            min_rectangularity: self.min_rectangularity,
            intensity_quantile: self.intensity_quantile,
        }
    }

    pub fn load_factors(&self) -> Result<EmissionsFactors> {
        match &self.factors {
            Some(p) => parse_factors(p),
            None => Ok(EmissionsFactors::bundled()),
        }
    }

    pub fn weights_path(&self, site_id: &str) -> PathBuf {
        self.weights_dir
            .join(format!("{site_id}_{}.json", self.road_type.slug()))
    }
}

/// Keys that are absent from a serialized config while unset.
const OPTIONAL_KEYS: [&str; 8] = [
    "history_dir",
    "test_history_dir",
    "ground_truth",
    "emissions_truth",
    "factors",
    "detections_dir",
    "rasters_dir",
    "max_displacement_m",
];

fn require<'a>(value: &'a Option<PathBuf>, key: &str, purpose: &str) -> Result<&'a Path> {
    value.as_deref().ok_or_else(|| {
        Error::Config(format!(
            "{purpose} needs '{key}'; set it in the config file or pass --{}",
            key.replace('_', "-")
        ))
    })
}

/// Files in `dir` with extension `ext`, sorted by name.
pub fn list_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == ext))
        .collect();
    out.sort();
    Ok(out)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Histories from every `.csv` in `dir`, keyed by site and direction.
pub fn load_histories(dir: &Path) -> Result<BTreeMap<(String, Direction), Vec<CountRecord>>> {
    let mut out: BTreeMap<(String, Direction), Vec<CountRecord>> = BTreeMap::new();
    for path in list_files(dir, "csv")? {
        for r in parse_count_history(&path)? {
            out.entry((r.site_id.clone(), r.direction)).or_default().push(r);
        }
    }
    for v in out.values_mut() {
        v.sort_by_key(|r| r.timestamp);
    }
    Ok(out)
}

// ---------------------------------------------------------------- train

#[derive(Debug, Clone, Serialize)]
pub struct TrainedSite {
    pub site_id: String,
    pub la_name: String,
    pub weights: PathBuf,
    pub log: TrainingLog,
}

/// Trains one model per count site (both directions pooled) for the configured road type.
pub fn cmd_train(cfg: &RunConfig) -> Result<Vec<TrainedSite>> {
    let history_dir = require(&cfg.history_dir, "history_dir", "train")?;
    let gt_path = require(&cfg.ground_truth, "ground_truth", "train")?;
    let ground_truth = parse_ground_truth(gt_path)?;
    let histories = load_histories(history_dir)?;
    if histories.is_empty() {
        return Err(Error::Config(format!("no count files in {}", history_dir.display())));
    }
    let mut by_site: BTreeMap<String, Vec<CountRecord>> = BTreeMap::new();
    for ((site, direction), records) in histories {
        let check = validate_site(&records)?;
        if !check.usable {
            log::warn!(
                "site {site} direction {direction}: {:.1}% of records incomplete, skipped",
                100.0 * check.missing_fraction
            );
            continue;
        }
        by_site.entry(site).or_default().extend(records);
    }
    create_dir(&cfg.weights_dir)?;
    let train_cfg = cfg.train_config();
    let mut out = Vec::new();
    for (site, records) in by_site {
        let la = ground_truth
            .iter()
            .find(|g| g.site_id == site)
            .map(|g| g.la_name.clone())
            .ok_or_else(|| {
                Error::Invalid(format!("site {site} does not appear in the ground truth file"))
            })?;
        log::info!("training {site} ({la}, {}) on {} rows", cfg.road_type, records.len());
        let (weights, log) = train_for_road_type(&records, &ground_truth, &la, cfg.road_type, &train_cfg)?;
        let path = cfg.weights_path(&site);
        weights.save(&path)?;
        write_json(&path.with_extension("log.json"), &log)?;
        out.push(TrainedSite {
            site_id: site,
            la_name: la,
            weights: path,
            log,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------- predict

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub stage: String,
    pub subject: String,
}

/// One row of `aadt_predictions.csv`. `direction` is `A`, `B` or `mean`.
#[derive(Debug, Clone, PartialEq)]
pub struct AadtPrediction {
    pub la_name: String,
    pub road_type: RoadType,
    pub year: i32,
    pub site_id: String,
    pub direction: String,
    pub aadt: AadtVector,
}

pub const AADT_PREDICTIONS_HEADER: [&str; 10] = [
    "la", "road_type", "year", "site_id", "direction", "cars_taxis", "lgv", "hgv", "buses_coaches", "total",
];

pub fn write_aadt_predictions(path: &Path, rows: &[AadtPrediction]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(AADT_PREDICTIONS_HEADER).map_err(|e| csv_io(path, e))?;
    for r in rows {
        let mut rec = vec![
            r.la_name.clone(),
            r.road_type.name().to_string(),
            r.year.to_string(),
            r.site_id.clone(),
            r.direction.clone(),
        ];
        rec.extend(r.aadt.to_array().iter().map(|v| v.to_string()));
        rec.push(r.aadt.total().to_string());
        w.write_record(&rec).map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_aadt_predictions(path: &Path) -> Result<Vec<AadtPrediction>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    let header = rdr.headers().map_err(|e| csv_io(path, e))?.clone();
    if header.iter().collect::<Vec<_>>() != AADT_PREDICTIONS_HEADER {
        return Err(Error::schema(path, "unexpected AADT prediction header"));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_io(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse()
                .map_err(|_| Error::parse(path, line, format!("{} is not a number", AADT_PREDICTIONS_HEADER[i])))
        };
        out.push(AadtPrediction {
            la_name: rec[0].to_string(),
            road_type: rec[1].parse().map_err(|e: Error| Error::parse(path, line, e.to_string()))?,
            year: rec[2]
                .parse()
                .map_err(|_| Error::parse(path, line, "year is not an integer"))?,
            site_id: rec[3].to_string(),
            direction: rec[4].to_string(),
            aadt: AadtVector::new(num(5)?, num(6)?, num(7)?, num(8)?),
        });
    }
    Ok(out)
}

pub const EMISSIONS_SUMMARY_HEADER: [&str; 9] = [
    "la", "road_type", "year", "mode", "cars_taxis", "lgv", "hgv", "buses_coaches", "total",
];

/// Per-type emissions of one LA, as persisted in `emissions_summary.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionsSummaryRow {
    pub la_name: String,
    pub road_type: RoadType,
    pub year: i32,
    /// `vehicle-type` or `apportioned`.
    pub mode: String,
    pub per_type_kgco2e: [f64; 4],
    pub total_kgco2e: f64,
}

pub fn write_emissions_summary(path: &Path, rows: &[EmissionsSummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(EMISSIONS_SUMMARY_HEADER).map_err(|e| csv_io(path, e))?;
    for r in rows {
        let mut rec = vec![
            r.la_name.clone(),
            r.road_type.name().to_string(),
            r.year.to_string(),
            r.mode.clone(),
        ];
        rec.extend(r.per_type_kgco2e.iter().map(|v| v.to_string()));
        rec.push(r.total_kgco2e.to_string());
        w.write_record(&rec).map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_emissions_summary(path: &Path) -> Result<Vec<EmissionsSummaryRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    let header = rdr.headers().map_err(|e| csv_io(path, e))?.clone();
    if header.iter().collect::<Vec<_>>() != EMISSIONS_SUMMARY_HEADER {
        return Err(Error::schema(path, "unexpected emissions summary header"));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_io(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse()
                .map_err(|_| Error::parse(path, line, format!("{} is not a number", EMISSIONS_SUMMARY_HEADER[i])))
        };
        out.push(EmissionsSummaryRow {
            la_name: rec[0].to_string(),
            road_type: rec[1].parse().map_err(|e: Error| Error::parse(path, line, e.to_string()))?,
            year: rec[2]
                .parse()
                .map_err(|_| Error::parse(path, line, "year is not an integer"))?,
            mode: rec[3].to_string(),
            per_type_kgco2e: [num(4)?, num(5)?, num(6)?, num(7)?],
            total_kgco2e: num(8)?,
        });
    }
    Ok(out)
}

impl EmissionsSummaryRow {
    pub fn from_report(report: &EmissionsReport, year: i32, mode: &str) -> Self {
        EmissionsSummaryRow {
            la_name: report.la_name.clone(),
            road_type: report.road_type,
            year,
            mode: mode.to_string(),
            per_type_kgco2e: VehicleClass::ALL.map(|c| report.per_type_kgco2e[&c]),
            total_kgco2e: report.total_kgco2e,
        }
    }
}

/// Speed used for one image and where it came from.
#[derive(Debug, Clone, PartialEq)]
struct ResolvedSpeed {
    kmh: f64,
    source: &'static str,
}

fn historical_speed(
    cfg: &RunConfig,
    meta: &ImageMeta,
    history: &BTreeMap<(String, Direction), Vec<CountRecord>>,
) -> Result<f64> {
    let no_speed = |hint: String| Error::NoSpeed {
        site: meta.site_id.clone(),
        hint,
    };
    let records = history
        .get(&(meta.site_id.clone(), meta.direction))
        .ok_or_else(|| no_speed(format!("no test-period count history for direction {}", meta.direction)))?;
    let slot = floor_to_slot(meta.acquisition_timestamp);
    match cfg.historical_speed {
        HistoricalSpeed::Interval => records
            .iter()
            .find(|r| r.timestamp == slot)
            .and_then(|r| r.mean_speed_kmh)
            .ok_or_else(|| no_speed(format!("no recorded mean speed for the interval starting {slot}"))),
        HistoricalSpeed::Daily => {
            let day: Vec<f64> = records
                .iter()
                .filter(|r| r.timestamp.date() == slot.date())
                .filter_map(|r| r.mean_speed_kmh)
                .collect();
            if day.is_empty() {
                return Err(no_speed(format!("no recorded mean speed on {}", slot.date())));
            }
            Ok(day.iter().sum::<f64>() / day.len() as f64)
        }
    }
}

/// Everything `cmd_predict` produced, mirroring the files it wrote.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictOutput {
    pub trace: Vec<TraceEvent>,
    pub predictions: Vec<AadtPrediction>,
    pub emissions: Vec<EmissionsReport>,
}

impl PredictOutput {
    pub fn ran_stage(&self, stage: &str) -> bool {
        self.trace.iter().any(|t| t.stage == stage)
    }
}

struct ImageRun {
    meta: ImageMeta,
    detections: Vec<Detection>,
    aadt: AadtVector,
}

/// Detections → (speed) → counts → features → directional AADT → LA mean → emissions.
pub fn cmd_predict(cfg: &RunConfig) -> Result<PredictOutput> {
    let det_dir = require(&cfg.detections_dir, "detections_dir", "predict")?;
    if cfg.speed_source == SpeedSource::Estimated && cfg.rasters_dir.is_none() {
        return Err(Error::Config(
            "speed source 'estimated' needs 'rasters_dir'; set it or use --speed-source historical".into(),
        ));
    }
    let history = match &cfg.test_history_dir {
        Some(dir) => load_histories(dir)?,
        None => BTreeMap::new(),
    };
    let factors = cfg.load_factors()?;
    let out = &cfg.output_dir;
    for sub in ["counts", "features"] {
        create_dir(&out.join(sub))?;
    }
    if cfg.speed_source == SpeedSource::Estimated {
        create_dir(&out.join("speed"))?;
    }

    let mut trace = Vec::new();
    let mut event = |stage: &str, subject: &str| {
        trace.push(TraceEvent {
            stage: stage.to_string(),
            subject: subject.to_string(),
        })
    };
    let mut weights_cache: BTreeMap<String, ModelWeights> = BTreeMap::new();
    let mut runs: Vec<ImageRun> = Vec::new();
    let files = list_files(det_dir, "json")?;
    if files.is_empty() {
        return Err(Error::Config(format!("no detection files in {}", det_dir.display())));
    }

    for path in files {
        let name = stem(&path);
        let (all, meta) = parse_detections(&path)?;
        event("ingest", &name);
        let detections = filter_confident(&all, cfg.confidence_threshold);

        let speed = match cfg.speed_source {
            SpeedSource::Historical => ResolvedSpeed {
                kmh: historical_speed(cfg, &meta, &history)?,
                source: "historical",
            },
            SpeedSource::Estimated => {
                let raster_path = cfg
                    .rasters_dir
                    .as_ref()
                    .expect("checked above")
                    .join(format!("{name}.dbr"));
                let (raster, _) = read_raster(&raster_path)?;
                let run = estimate_from_raster(&raster, &cfg.thresholds(), cfg.max_displacement_m)?;
                event("speed", &name);
                write_json(&out.join("speed").join(format!("{name}.json")), &run)?;
                match run.estimate.mean_speed_kmh {
                    Some(v) => ResolvedSpeed { kmh: v, source: "estimated" },
                    None => match historical_speed(cfg, &meta, &history) {
                        Ok(v) => {
                            log::warn!(
                                "{name}: no moving-object pairs found; using the count-site speed for site {}",
                                meta.site_id
                            );
                            event("speed-fallback", &name);
                            ResolvedSpeed { kmh: v, source: "historical" }
                        }
                        Err(_) => {
                            return Err(Error::NoSpeed {
                                site: meta.site_id.clone(),
                                hint: format!(
                                    "live speed estimation found no object pairs in {} and no historical speed is available",
                                    raster_path.display()
                                ),
                            })
                        }
                    },
                }
            }
        };
        log::info!("{name}: {:.1} km/h ({})", speed.kmh, speed.source);

        let estimate = estimate_counts(&detections, speed.kmh, meta.segment_length_km)?;
        write_estimate(&out.join("counts").join(format!("{name}.csv")), &meta, &estimate)?;
        event("counts", &name);

        if !weights_cache.contains_key(&meta.site_id) {
            let w = ModelWeights::load(&cfg.weights_path(&meta.site_id))?;
            w.ensure_road_type(cfg.road_type)?;
            weights_cache.insert(meta.site_id.clone(), w);
        }
        let weights = &weights_cache[&meta.site_id];
        let features = build_features(
            &TimedEstimate {
                timestamp: meta.acquisition_timestamp,
                estimate: &estimate,
            },
            &weights.metadata.minmax,
        )?;
        write_json(&out.join("features").join(format!("{name}.json")), &features)?;
        event("features", &name);
        let aadt = predict(weights, &features)?;
        event("aadt", &name);
        runs.push(ImageRun { meta, detections, aadt });
    }

    let mut groups: BTreeMap<(String, i32), Vec<&ImageRun>> = BTreeMap::new();
    for r in &runs {
        groups
            .entry((r.meta.la_name.clone(), r.meta.acquisition_timestamp.year()))
            .or_default()
            .push(r);
    }

    let mut predictions = Vec::new();
    let mut reports = Vec::new();
    let mut summary = Vec::new();
    create_dir(&out.join("emissions"))?;
    for ((la, year), members) in &groups {
        for r in members {
            predictions.push(AadtPrediction {
                la_name: la.clone(),
                road_type: cfg.road_type,
                year: *year,
                site_id: r.meta.site_id.clone(),
                direction: r.meta.direction.to_string(),
                aadt: r.aadt,
            });
        }
        let directional: Vec<AadtVector> = members.iter().map(|r| r.aadt).collect();
        let mean = aggregate_directions(&directional)?;
        event("aggregate", la);
        predictions.push(AadtPrediction {
            la_name: la.clone(),
            road_type: cfg.road_type,
            year: *year,
            site_id: "*".into(),
            direction: "mean".into(),
            aadt: mean,
        });

        let file_stem = format!("{}_{}_{year}", la.replace(' ', "_"), cfg.road_type.slug());
        let (aadt_for_emissions, mode) = if cfg.no_vehicle_type {
            let dets: Vec<Detection> = members.iter().flat_map(|r| r.detections.iter().cloned()).collect();
            let app = apportion_aadt(mean.total(), &dets)?;
            write_json(
                &out.join("emissions").join(format!("{file_stem}_apportionment.json")),
                &serde_json::json!({
                    "total_aadt": mean.total(),
                    "detected": app.detected,
                    "unmapped": app.unmapped,
                    "aadt": app.aadt,
                }),
            )?;
            event("apportion", la);
            (app.aadt, "apportioned")
        } else {
            (mean, "vehicle-type")
        };
        let report = compute_emissions(&aadt_for_emissions, &factors, la, cfg.road_type)?;
        report.write_csv(&out.join("emissions").join(format!("{file_stem}.csv")))?;
        report.write_table(&out.join("emissions").join(format!("{file_stem}.txt")))?;
        event("emissions", la);
        summary.push(EmissionsSummaryRow::from_report(&report, *year, mode));
        reports.push(report);
    }
    write_aadt_predictions(&out.join("aadt_predictions.csv"), &predictions)?;
    write_emissions_summary(&out.join("emissions_summary.csv"), &summary)?;
    write_json(&out.join("trace.json"), &trace)?;
    Ok(PredictOutput {
        trace,
        predictions,
        emissions: reports,
    })
}

// ---------------------------------------------------------------- evaluate

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VehicleTypeMape {
    pub vehicle_type: VehicleClass,
    pub aadt_mape: Option<f64>,
    pub emissions_mape: Option<f64>,
    pub truth_share: f64,
    pub excluded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationSummary {
    pub count_rows: Vec<MetricRow>,
    pub aadt_rows: Vec<MetricRow>,
    pub emissions_rows: Vec<MetricRow>,
    pub scatter: Vec<ScatterPoint>,
    pub by_vehicle_type: Vec<VehicleTypeMape>,
    /// Mean of the per-type emissions MAPE over types not flagged as excluded.
    pub emissions_per_type_mape: f64,
}

fn key_string(k: &(String, RoadType, i32)) -> String {
    format!("{}/{}/{}", k.0, k.1, k.2)
}

/// Compares `cmd_predict` outputs with the ground truth and writes tables shaped
/// like per-site count errors, per-LA AADT errors and per-LA emissions errors.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<EvaluationSummary> {
    let gt_path = require(&cfg.ground_truth, "ground_truth", "evaluate")?;
    let out = &cfg.output_dir;
    let predictions = read_aadt_predictions(&out.join("aadt_predictions.csv"))?;
    let emissions_pred = read_emissions_summary(&out.join("emissions_summary.csv"))?;
    let truth_aadt = la_targets(&parse_ground_truth(gt_path)?)?;
    let factors = cfg.load_factors()?;

    let means: BTreeMap<(String, RoadType, i32), AadtVector> = predictions
        .iter()
        .filter(|p| p.direction == "mean")
        .map(|p| ((p.la_name.clone(), p.road_type, p.year), p.aadt))
        .collect();
    let missing: Vec<String> = means
        .keys()
        .filter(|k| !truth_aadt.contains_key(*k))
        .map(key_string)
        .collect();
    if !missing.is_empty() {
        return Err(Error::KeyMismatch(format!(
            "predictions without ground truth AADT: {}",
            missing.join(", ")
        )));
    }

    // Published emissions if given, otherwise derived from the true AADT.
    let truth_emissions: BTreeMap<(String, RoadType, i32), ([f64; 4], Option<f64>)> = {
        let published: BTreeMap<_, f64> = match &cfg.emissions_truth {
            Some(p) => parse_emissions_truth(p)?
                .into_iter()
                .map(|t| ((t.la_name, t.road_type, t.year), t.kgco2e))
                .collect(),
            None => BTreeMap::new(),
        };
        let mut m = BTreeMap::new();
        for k in means.keys() {
            let report = compute_emissions(&truth_aadt[k], &factors, &k.0, k.1)?;
            let per_type = VehicleClass::ALL.map(|c| report.per_type_kgco2e[&c]);
            m.insert(k.clone(), (per_type, published.get(k).copied().or(Some(report.total_kgco2e))));
        }
        m
    };
    let emis_by_key: BTreeMap<(String, RoadType, i32), &EmissionsSummaryRow> = emissions_pred
        .iter()
        .map(|r| ((r.la_name.clone(), r.road_type, r.year), r))
        .collect();
    let missing: Vec<String> = means
        .keys()
        .filter(|k| !emis_by_key.contains_key(*k))
        .map(key_string)
        .collect();
    if !missing.is_empty() {
        return Err(Error::KeyMismatch(format!(
            "AADT predictions without an emissions row: {}",
            missing.join(", ")
        )));
    }

    // Fifteen-minute counts against the count site, when test-period history is available.
    let mut count_rows = Vec::new();
    let counts_dir = out.join("counts");
    if let (Some(dir), true) = (&cfg.test_history_dir, counts_dir.is_dir()) {
        let history = load_histories(dir)?;
        for path in list_files(&counts_dir, "csv")? {
            for row in read_estimates(&path)? {
                let truth = history
                    .get(&(row.site_id.clone(), row.direction))
                    .and_then(|rs| rs.iter().find(|r| r.timestamp == row.timestamp))
                    .filter(|r| r.counts.0.iter().all(Option::is_some))
                    .ok_or_else(|| {
                        Error::KeyMismatch(format!(
                            "no observed counts for {} {} at {}",
                            row.site_id, row.direction, row.timestamp
                        ))
                    })?;
                let pairs: Vec<EvalPair> = LengthClass::ALL
                    .iter()
                    .map(|&c| {
                        EvalPair::labelled(
                            row.counts_15min[c],
                            f64::from(truth.counts[c].expect("filtered")),
                            c.column(),
                        )
                    })
                    .collect();
                count_rows.push(MetricRow::from_pairs("15-minute counts", &stem(&path), &pairs)?);
            }
        }
    } else {
        log::warn!("no test-period history configured; skipping the count error table");
    }

    let mut aadt_rows = Vec::new();
    let mut emissions_rows = Vec::new();
    let mut scatter = Vec::new();
    let mut per_type_aadt: [Vec<EvalPair>; 4] = Default::default();
    let mut per_type_emis: [Vec<EvalPair>; 4] = Default::default();
    let mut share_sum = [0.0; 4];
    for (k, pred) in &means {
        let truth = truth_aadt[k];
        let group = k.1.name();
        let label = format!("{} {}", k.0, k.2);
        let pairs: Vec<EvalPair> = VehicleClass::ALL
            .iter()
            .map(|&c| EvalPair::labelled(pred[c], truth[c], c.key()))
            .collect();
        aadt_rows.push(MetricRow::from_pairs(group, &label, &pairs)?);

        let (truth_types, truth_total) = &truth_emissions[k];
        let pred_row = emis_by_key[k];
        let epairs: Vec<EvalPair> = VehicleClass::ALL
            .iter()
            .map(|&c| EvalPair::labelled(pred_row.per_type_kgco2e[c.index()], truth_types[c.index()], c.key()))
            .collect();
        emissions_rows.push(MetricRow::from_pairs(group, &label, &epairs)?);
        for c in VehicleClass::ALL {
            per_type_aadt[c.index()].push(pairs[c.index()].clone());
            per_type_emis[c.index()].push(epairs[c.index()].clone());
            if truth.total() > 0.0 {
                share_sum[c.index()] += truth[c] / truth.total();
            }
        }
        scatter.push(ScatterPoint {
            la: k.0.clone(),
            road_type: group.to_string(),
            aadt_pred: pred.total(),
            aadt_true: truth.total(),
            ghg_pred: pred_row.total_kgco2e,
            ghg_true: truth_total.unwrap_or(0.0),
        });
    }

    let n_groups = means.len().max(1) as f64;
    let by_vehicle_type: Vec<VehicleTypeMape> = VehicleClass::ALL
        .iter()
        .map(|&c| {
            let share = share_sum[c.index()] / n_groups;
            VehicleTypeMape {
                vehicle_type: c,
                aadt_mape: mape(&per_type_aadt[c.index()]).ok().map(|m| m.value),
                emissions_mape: mape(&per_type_emis[c.index()]).ok().map(|m| m.value),
                truth_share: share,
                excluded: share < cfg.sparse_share,
            }
        })
        .collect();
    let kept: Vec<f64> = by_vehicle_type
        .iter()
        .filter(|v| !v.excluded)
        .filter_map(|v| v.emissions_mape)
        .collect();
    let emissions_per_type_mape = if kept.is_empty() {
        f64::NAN
    } else {
        kept.iter().sum::<f64>() / kept.len() as f64
    };

    let summary = EvaluationSummary {
        count_rows: with_average_rows(&count_rows),
        aadt_rows: with_average_rows(&aadt_rows),
        emissions_rows: with_average_rows(&emissions_rows),
        scatter,
        by_vehicle_type,
        emissions_per_type_mape,
    };
    create_dir(out)?;
    if !summary.count_rows.is_empty() {
        write_metric_table(&out.join("table_counts.csv"), ["site", "quantity", "rmse", "mape"], &summary.count_rows)?;
    }
    write_metric_table(&out.join("table_aadt.csv"), ["la", "road_type", "rmse", "mape"], &summary.aadt_rows)?;
    write_metric_table(
        &out.join("table_emissions.csv"),
        ["la", "road_type", "rmse_kgco2e", "mape"],
        &summary.emissions_rows,
    )?;
    write_scatter(&out.join("scatter.csv"), &summary.scatter)?;
    write_vehicle_type_mape(&out.join("mape_by_vehicle_type.csv"), &summary.by_vehicle_type)?;
    write_json(&out.join("evaluation.json"), &summary)?;
    Ok(summary)
}

fn write_vehicle_type_mape(path: &Path, rows: &[VehicleTypeMape]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(["vehicle_type", "aadt_mape", "emissions_mape", "truth_share", "excluded"])
        .map_err(|e| csv_io(path, e))?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.vehicle_type.key().to_string(),
            opt(r.aadt_mape),
            opt(r.emissions_mape),
            r.truth_share.to_string(),
            r.excluded.to_string(),
        ])
        .map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------- speed

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeedRow {
    pub image: String,
    pub run: SpeedRun,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeedBatch {
    pub rows: Vec<SpeedRow>,
    pub succeeded: usize,
    pub failed: usize,
    /// Mean over images with an estimate.
    pub mean_speed_kmh: Option<f64>,
}

impl fmt::Display for SpeedBatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.rows {
            match r.run.estimate.mean_speed_kmh {
                Some(v) => writeln!(f, "{}: {v:.2} km/h from {} pairs", r.image, r.run.estimate.pair_count)?,
                None => writeln!(
                    f,
                    "{}: FAILED (bright blobs {}, dark blobs {}, no pairs)",
                    r.image, r.run.bright_blobs, r.run.dark_blobs
                )?,
            }
        }
        write!(f, "{} images, {} estimated, {} failed", self.rows.len(), self.succeeded, self.failed)
    }
}

/// Estimates mean speed for every raster in `rasters_dir`. Images without any
/// object pair are reported as failed rather than given a number.
pub fn cmd_speed(cfg: &RunConfig) -> Result<SpeedBatch> {
    let dir = require(&cfg.rasters_dir, "rasters_dir", "speed")?;
    let files = list_files(dir, "dbr")?;
    if files.is_empty() {
        return Err(Error::Config(format!("no .dbr rasters in {}", dir.display())));
    }
    let mut rows = Vec::new();
    for path in files {
        let (raster, _) = read_raster(&path)?;
        let run = estimate_from_raster(&raster, &cfg.thresholds(), cfg.max_displacement_m)?;
        rows.push(SpeedRow { image: stem(&path), run });
    }
    let speeds: Vec<f64> = rows.iter().filter_map(|r| r.run.estimate.mean_speed_kmh).collect();
    let batch = SpeedBatch {
        succeeded: speeds.len(),
        failed: rows.len() - speeds.len(),
        mean_speed_kmh: (!speeds.is_empty()).then(|| speeds.iter().sum::<f64>() / speeds.len() as f64),
        rows,
    };
    create_dir(&cfg.output_dir)?;
    let path = cfg.output_dir.join("speed_estimates.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_io(&path, e))?;
    w.write_record(["image", "status", "mean_speed_kmh", "pairs", "bright_blobs", "dark_blobs"])
        .map_err(|e| csv_io(&path, e))?;
    for r in &batch.rows {
        let e = &r.run.estimate;
        w.write_record([
            r.image.clone(),
            if e.is_failed() { "failed" } else { "ok" }.to_string(),
            e.mean_speed_kmh.map(|v| v.to_string()).unwrap_or_default(),
            e.pair_count.to_string(),
            r.run.bright_blobs.to_string(),
            r.run.dark_blobs.to_string(),
        ])
        .map_err(|e| csv_io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    write_json(&cfg.output_dir.join("speed_summary.json"), &batch)?;
    Ok(batch)
}

// ---------------------------------------------------------------- synth

/// Writes the default two-direction fixture into `output_dir`.
pub fn cmd_synth(cfg: &RunConfig) -> Result<FixtureManifest> {
    let synth = SynthConfig {
        seed: cfg.seed,
        days: cfg.synth_days,
        road_type: cfg.road_type,
        ..SynthConfig::default()
    };
    write_fixture(&cfg.output_dir, &synth)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_overrides() {
        let mut cfg = RunConfig::from_toml("seed = 3\nroad_type = \"a-roads\"\n", Path::new("x.toml")).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.road_type, RoadType::ARoads);
        cfg.set("speed-source", "estimated").unwrap();
        cfg.set("output-dir", "/tmp/o").unwrap();
        cfg.set("no-vehicle-type", "true").unwrap();
        cfg.set("max_displacement_m", "13").unwrap();
        cfg.set("road-type", "minor-roads").unwrap();
        assert_eq!(cfg.speed_source, SpeedSource::Estimated);
        assert_eq!(cfg.output_dir, PathBuf::from("/tmp/o"));
        assert!(cfg.no_vehicle_type);
        assert_eq!(cfg.max_displacement_m, Some(13.0));
        assert_eq!(cfg.road_type, RoadType::MinorRoads);
        assert!(cfg.set("bogus", "1").is_err());
        assert!(cfg.set("seed", "\"abc\"").is_err());
        assert!(RunConfig::from_toml("nonsense = 1", Path::new("x.toml")).is_err());
    }

    #[test]
    fn missing_ground_truth_is_actionable() {
        let cfg = RunConfig {
            history_dir: Some(PathBuf::from(".")),
            ..RunConfig::default()
        };
        let err = cmd_train(&cfg).unwrap_err().to_string();
        assert!(err.contains("ground_truth") && err.contains("--ground-truth"), "{err}");
    }
}
