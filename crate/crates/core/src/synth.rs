//! Deterministic synthetic fixtures: count histories, detection files consistent
//! with a chosen truth record, and dual-band rasters with a known object shift.
//!
//! Every generator is driven by a ChaCha8 stream seeded from an integer, so the
//! output is identical on every platform. Counts in different intervals are
//! independent Poisson draws, which is enough for pipeline testing but has none
//! of the autocorrelation of real traffic.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Timelike};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::aadt::AadtVector;
use crate::counts::{LengthClass, PerClass};
use crate::error::{Error, Result};
use crate::ingest::{
    write_count_history, write_detections, write_factors, write_ground_truth, CountRecord,
    Detection, Direction, EmissionsFactors, ImageMeta, RoadType, SiteAadt,
};
use crate::speed::{write_raster, DualBandRaster, Grid};

/// Detector label written for each length class.
pub fn label_for(class: LengthClass) -> &'static str {
    match class {
        LengthClass::Small => "Small Car",
        LengthClass::Medium => "Pickup Truck",
        LengthClass::Large => "Truck w/Box",
        LengthClass::VeryLarge => "Cargo Truck",
    }
}

/// Vehicle lengths drawn for each class, in cm, kept clear of the class boundaries.
fn length_range_cm(class: LengthClass) -> (f64, f64) {
    match class {
        LengthClass::Small => (380.0, 500.0),
        LengthClass::Medium => (540.0, 640.0),
        LengthClass::Large => (700.0, 1100.0),
        LengthClass::VeryLarge => (1200.0, 1800.0),
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_sites: usize,
    pub la_name: String,
    pub road_type: RoadType,
    pub start: NaiveDate,
    pub days: usize,
    /// Mean vehicles per hour for each length class before modulation.
    pub base_flow_per_hour: [f64; 4],
    /// Relative amplitude of the daily cycle (peak at 17:00), in [0, 1].
    pub diurnal_amplitude: f64,
    /// Relative weekend dip, in [0, 1].
    pub weekly_amplitude: f64,
    /// Relative seasonal swing (peak in July), in [0, 1].
    pub monthly_amplitude: f64,
    pub speed_mean_kmh: f64,
    pub speed_sd_kmh: f64,
    /// Probability that a record has one blank cell.
    pub missing_fraction: f64,
    /// LA AADT per vehicle type for the training year(s).
    pub aadt_ground_truth: AadtVector,
    /// Relative change of the ground truth per calendar year after `start`.
    pub annual_growth: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 7,
            n_sites: 1,
            la_name: "Synthshire".into(),
            road_type: RoadType::Motorways,
            start: NaiveDate::from_ymd_opt(2017, 1, 1).unwrap(),
            days: 340,
            base_flow_per_hour: [800.0, 150.0, 60.0, 90.0],
            diurnal_amplitude: 0.6,
            weekly_amplitude: 0.2,
            monthly_amplitude: 0.1,
            speed_mean_kmh: 100.0,
            speed_sd_kmh: 8.0,
            missing_fraction: 0.0,
            aadt_ground_truth: AadtVector::new(20000.0, 9000.0, 2500.0, 400.0),
            annual_growth: 0.02,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let amp_ok = |a: f64| (0.0..=1.0).contains(&a);
        if !amp_ok(self.diurnal_amplitude) || !amp_ok(self.weekly_amplitude) || !amp_ok(self.monthly_amplitude) {
            return Err(Error::Config("modulation amplitudes must lie in [0, 1]".into()));
        }
        if self.base_flow_per_hour.iter().any(|f| !(*f >= 0.0) || !f.is_finite()) {
            return Err(Error::Config("base flows must be finite and >= 0".into()));
        }
        if !(self.speed_mean_kmh > 0.0) || !(self.speed_sd_kmh >= 0.0) {
            return Err(Error::Config("speed mean must be > 0 and sd >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.missing_fraction) {
            return Err(Error::Config("missing_fraction must lie in [0, 1]".into()));
        }
        if self.n_sites == 0 {
            return Err(Error::Config("n_sites must be >= 1".into()));
        }
        Ok(())
    }

    pub fn site_ids(&self) -> Vec<String> {
        (1..=self.n_sites).map(|i| format!("SYN{i:02}")).collect()
    }

    /// Expected vehicles of `class` in the 15 minutes starting at `t`.
    pub fn expected_count(&self, class: LengthClass, t: NaiveDateTime) -> f64 {
        let hour = f64::from(t.hour()) + f64::from(t.minute()) / 60.0;
        let diurnal = 1.0 + self.diurnal_amplitude * (2.0 * PI * (hour - 17.0) / 24.0).cos();
        let weekly = if t.weekday().number_from_monday() >= 6 {
            1.0 - self.weekly_amplitude
        } else {
            1.0
        };
        let month = f64::from(t.month());
        let monthly = 1.0 + self.monthly_amplitude * (2.0 * PI * (month - 7.0) / 12.0).cos();
        self.base_flow_per_hour[class.index()] / 4.0 * diurnal * weekly * monthly
    }

    /// LA ground truth for `year`, compounded from the start year.
    pub fn aadt_for_year(&self, year: i32) -> AadtVector {
        let k = year - self.start.year();
        self.aadt_ground_truth.scale((1.0 + self.annual_growth).powi(k))
    }
}

/// Fifteen-minute history of one site and direction.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteHistory {
    pub site_id: String,
    pub direction: Direction,
    pub records: Vec<CountRecord>,
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> u32 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive finite mean").sample(rng) as u32
}

/// One history per site and direction, `days * 96` records each.
pub fn gen_history(config: &SynthConfig) -> Result<Vec<SiteHistory>> {
    config.validate()?;
    let start = config.start.and_hms_opt(0, 0, 0).unwrap();
    let speed = Normal::new(config.speed_mean_kmh, config.speed_sd_kmh)
        .map_err(|e| Error::Config(format!("speed distribution: {e}")))?;
    let mut out = Vec::new();
    for (i, site) in config.site_ids().into_iter().enumerate() {
        for (j, direction) in [Direction::A, Direction::B].into_iter().enumerate() {
            let mut rng = rng_for(config.seed, (2 * i + j) as u64);
            let mut records = Vec::with_capacity(config.days * 96);
            for k in 0..config.days * 96 {
                let t = start + Duration::minutes(15 * k as i64);
                let counts = PerClass::from_fn(|c| poisson(&mut rng, config.expected_count(c, t)));
                let v: f64 = speed.sample(&mut rng);
                let mut rec = CountRecord {
                    timestamp: t,
                    site_id: site.clone(),
                    direction,
                    counts: counts.map(|&n| Some(n)),
                    total: Some(counts.0.iter().sum()),
                    mean_speed_kmh: Some((v.max(1.0) * 10.0).round() / 10.0),
                };
                if config.missing_fraction > 0.0 && rng.random::<f64>() < config.missing_fraction {
                    // Blank one class count together with the total so the row stays consistent.
                    let c = LengthClass::ALL[rng.random_range(0..4)];
                    rec.counts.0[c.index()] = None;
                    rec.total = None;
                }
                records.push(rec);
            }
            out.push(SiteHistory {
                site_id: site.clone(),
                direction,
                records,
            });
        }
    }
    Ok(out)
}

/// Directional ground-truth rows for every site, direction and year in `years`.
///
/// The configured LA vector is reached by the first site's direction A; other
/// rows are slightly lower so the LA target (a per-type maximum) equals it.
pub fn gen_ground_truth(config: &SynthConfig, years: &[i32]) -> Vec<SiteAadt> {
    let mut rows = Vec::new();
    for &year in years {
        let la = config.aadt_for_year(year);
        for (i, site) in config.site_ids().into_iter().enumerate() {
            for (j, direction) in [Direction::A, Direction::B].into_iter().enumerate() {
                let factor = 1.0 - 0.03 * (2 * i + j) as f64;
                rows.push(SiteAadt {
                    la_name: config.la_name.clone(),
                    road_type: config.road_type,
                    year,
                    site_id: site.clone(),
                    direction,
                    aadt: la.scale(factor),
                });
            }
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RasterSpec {
    pub rows: usize,
    pub cols: usize,
    /// Object height (across the direction of motion) in pixels.
    pub object_rows: usize,
    /// Object extent along the direction of motion in pixels.
    pub object_cols: usize,
    /// Top-left corner of the object in band A.
    pub origin: (usize, usize),
    /// Displacement along columns between band A and band B.
    pub shift_px: usize,
    pub object_intensity: f64,
    /// Static background drawn uniformly from this range, identical in both bands.
    pub background: (f64, f64),
    /// Standard deviation of independent Gaussian noise added to each band.
    pub noise_sd: f64,
    pub gsd_m_per_px: f64,
    pub time_lag_s: f64,
    pub seed: u64,
}

impl Default for RasterSpec {
    fn default() -> Self {
        RasterSpec {
            rows: 64,
            cols: 64,
            object_rows: 3,
            object_cols: 2,
            origin: (30, 20),
            shift_px: 4,
            object_intensity: 200.0,
            background: (20.0, 60.0),
            noise_sd: 1.0,
            gsd_m_per_px: 0.52,
            time_lag_s: 0.26,
            seed: 11,
        }
    }
}

impl RasterSpec {
    /// Speed implied by the configured shift.
    pub fn implied_speed_kmh(&self) -> f64 {
        self.shift_px as f64 * self.gsd_m_per_px / self.time_lag_s * 3.6
    }
}

pub fn gen_raster(spec: &RasterSpec) -> Result<DualBandRaster> {
    let (r0, c0) = spec.origin;
    if r0 + spec.object_rows > spec.rows || c0 + spec.object_cols + spec.shift_px > spec.cols {
        return Err(Error::Invalid(format!(
            "object at {:?} of size {}x{} shifted by {} px leaves the {}x{} frame",
            spec.origin, spec.object_rows, spec.object_cols, spec.shift_px, spec.rows, spec.cols
        )));
    }
    if spec.object_rows == 0 || spec.object_cols == 0 {
        return Err(Error::Invalid("object must be at least 1x1 px".into()));
    }
    if !(spec.noise_sd >= 0.0) || spec.background.0 > spec.background.1 {
        return Err(Error::Invalid("noise sd must be >= 0 and background min <= max".into()));
    }
    let mut rng = rng_for(spec.seed, 0);
    let n = spec.rows * spec.cols;
    let background: Vec<f64> = (0..n)
        .map(|_| {
            if spec.background.0 == spec.background.1 {
                spec.background.0
            } else {
                rng.random_range(spec.background.0..spec.background.1)
            }
        })
        .collect();
    let mut a = Grid::from_vec(spec.rows, spec.cols, background.clone())?;
    let mut b = Grid::from_vec(spec.rows, spec.cols, background)?;
    for r in r0..r0 + spec.object_rows {
        for c in c0..c0 + spec.object_cols {
            a.set(r, c, spec.object_intensity);
            b.set(r, c + spec.shift_px, spec.object_intensity);
        }
    }
    if spec.noise_sd > 0.0 {
        let noise = Normal::new(0.0, spec.noise_sd).expect("sd >= 0");
        for band in [&mut a, &mut b] {
            for v in band.data.iter_mut() {
                *v += noise.sample(&mut rng);
            }
        }
    }
    DualBandRaster::new(a, b, spec.gsd_m_per_px, spec.time_lag_s)
}

/// Detections whose flow conversion reproduces a chosen truth record.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthDetections {
    pub detections: Vec<Detection>,
    pub n_detected: PerClass<u32>,
    /// `|recovered - truth|` per class in vehicles per 15 minutes.
    pub rounding_error: PerClass<f64>,
    /// Flow represented by one detection: `v / (4 l)`; rounding error is at most half of it.
    pub flow_per_detection: f64,
}

/// Inverts the flow conversion: `N = round(4 * N15 * l / v)` detections per class,
/// each with a length inside its class and a random placement.
pub fn gen_detections(
    truth_15min: &PerClass<u32>,
    speed_kmh: f64,
    segment_length_km: f64,
    gsd_m_per_px: f64,
    seed: u64,
) -> Result<SynthDetections> {
    if !(speed_kmh > 0.0) || !speed_kmh.is_finite() {
        return Err(Error::Invalid(format!(
            "cannot invert counts at speed {speed_kmh} km/h"
        )));
    }
    if !(segment_length_km > 0.0) || !(gsd_m_per_px > 0.0) {
        return Err(Error::Invalid("segment length and gsd must be > 0".into()));
    }
    let flow_per_detection = speed_kmh / (4.0 * segment_length_km);
    let n_detected = truth_15min.map(|&n| (f64::from(n) / flow_per_detection).round() as u32);
    let rounding_error = PerClass::from_fn(|c| {
        (f64::from(n_detected[c]) * flow_per_detection - f64::from(truth_15min[c])).abs()
    });
    let mut rng = rng_for(seed, 0);
    let mut detections = Vec::new();
    for class in LengthClass::ALL {
        let (lo, hi) = length_range_cm(class);
        for _ in 0..n_detected[class] {
            let length_px = rng.random_range(lo..hi) / 100.0 / gsd_m_per_px;
            let width_px = rng.random_range(170.0..250.0) / 100.0 / gsd_m_per_px;
            let x0 = rng.random_range(0.0..2000.0);
            let y0 = rng.random_range(0.0..2000.0);
            let confidence = rng.random_range(0.5..1.0);
            detections.push(Detection::new(
                [x0, x0 + length_px, y0, y0 + width_px],
                label_for(class),
                confidence,
                gsd_m_per_px,
            )?);
        }
    }
    Ok(SynthDetections {
        detections,
        n_detected,
        rounding_error,
        flow_per_detection,
    })
}

/// Paths of a generated end-to-end fixture.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixtureManifest {
    pub root: PathBuf,
    pub config: PathBuf,
    pub history_dir: PathBuf,
    pub test_history_dir: PathBuf,
    pub ground_truth: PathBuf,
    pub factors: PathBuf,
    pub detections_dir: PathBuf,
    pub rasters_dir: PathBuf,
    pub acquisition: NaiveDateTime,
}

/// Road length written to the fixture's factor table for the synthetic LA.
pub const FIXTURE_ROAD_LENGTH_KM: f64 = 10.0;
pub const FIXTURE_SEGMENT_KM: f64 = 8.0;
pub const FIXTURE_DETECTION_GSD: f64 = 0.31;
pub const FIXTURE_RASTER_GSD: f64 = 1.24;

/// Writes a complete two-direction fixture under `root`: training history,
/// a short test-period history, ground truth, factors, one detection file and
/// one raster per site and direction, and a `run.toml` tying them together.
pub fn write_fixture(root: &Path, config: &SynthConfig) -> Result<FixtureManifest> {
    config.validate()?;
    let dirs = ["history", "test_history", "detections", "rasters"];
    for d in dirs {
        let p = root.join(d);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let train_year = config.start.year();
    let test_year = train_year + 1;
    for h in gen_history(config)? {
        let p = root.join("history").join(format!("{}_{}.csv", h.site_id, h.direction));
        write_count_history(&p, &h.records)?;
    }

    let test_cfg = SynthConfig {
        seed: config.seed.wrapping_add(1),
        start: NaiveDate::from_ymd_opt(test_year, 6, 4).unwrap(),
        days: 2,
        missing_fraction: 0.0,
        ..config.clone()
    };
    let test_histories = gen_history(&test_cfg)?;
    let acquisition = test_cfg.start.and_hms_opt(10, 37, 12).unwrap();
    let slot = crate::ingest::floor_to_slot(acquisition);

    for (k, h) in test_histories.iter().enumerate() {
        let stem = format!("{}_{}", h.site_id, h.direction);
        write_count_history(&root.join("test_history").join(format!("{stem}.csv")), &h.records)?;
        let truth = h
            .records
            .iter()
            .find(|r| r.timestamp == slot)
            .expect("slot inside test span");
        let speed = truth.mean_speed_kmh.expect("complete record");
        let counts = truth.counts.map(|c| c.expect("complete record"));
        let dets = gen_detections(&counts, speed, FIXTURE_SEGMENT_KM, FIXTURE_DETECTION_GSD, config.seed + 100 + k as u64)?;
        let meta = ImageMeta {
            site_id: h.site_id.clone(),
            la_name: config.la_name.clone(),
            direction: h.direction,
            acquisition_timestamp: acquisition,
            segment_length_km: FIXTURE_SEGMENT_KM,
            gsd_m_per_px: FIXTURE_DETECTION_GSD,
            band_time_lag_s: crate::ingest::DEFAULT_BAND_TIME_LAG_S,
        };
        write_detections(&root.join("detections").join(format!("{stem}.json")), &meta, &dets.detections)?;

        let lag = meta.band_time_lag_s;
        // Kept within the pairing limit so every fixture raster yields an estimate.
        let limit_px = (crate::speed::default_max_displacement_m(lag) / FIXTURE_RASTER_GSD).floor();
        let shift = (speed / 3.6 * lag / FIXTURE_RASTER_GSD).round().clamp(2.0, limit_px) as usize;
        let raster = gen_raster(&RasterSpec {
            shift_px: shift,
            gsd_m_per_px: FIXTURE_RASTER_GSD,
            time_lag_s: lag,
            seed: config.seed + 200 + k as u64,
            ..RasterSpec::default()
        })?;
        write_raster(&root.join("rasters").join(format!("{stem}.dbr")), &raster, Some(&h.site_id))?;
    }

    let ground_truth = root.join("ground_truth.csv");
    write_ground_truth(&ground_truth, &gen_ground_truth(config, &[train_year, test_year]))?;

    let mut factors = EmissionsFactors::bundled();
    factors
        .road_length_km
        .insert((config.la_name.clone(), config.road_type), FIXTURE_ROAD_LENGTH_KM);
    let factors_path = root.join("factors.csv");
    write_factors(&factors_path, &factors)?;

    let run = format!(
        "# Generated fixture. Paths are relative to this file.\n\
         history_dir = \"history\"\n\
         test_history_dir = \"test_history\"\n\
         ground_truth = \"ground_truth.csv\"\n\
         factors = \"factors.csv\"\n\
         detections_dir = \"detections\"\n\
         rasters_dir = \"rasters\"\n\
         weights_dir = \"weights\"\n\
         output_dir = \"out\"\n\
         road_type = \"{}\"\n\
         seed = {}\n",
        config.road_type.slug(),
        config.seed
    );
    let config_path = root.join("run.toml");
    fs::write(&config_path, run).map_err(|e| Error::io(&config_path, e))?;

    Ok(FixtureManifest {
        root: root.to_path_buf(),
        config: config_path,
        history_dir: root.join("history"),
        test_history_dir: root.join("test_history"),
        ground_truth,
        factors: factors_path,
        detections_dir: root.join("detections"),
        rasters_dir: root.join("rasters"),
        acquisition,
    })
}
