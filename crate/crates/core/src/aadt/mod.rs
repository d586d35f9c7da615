//! Per-site neural networks mapping one fifteen-minute observation to Local
//! Authority AADT per vehicle type.
//!
//! Inputs (in order): hour of day, day of week (Monday = 1), month, mean speed
//! (km/h), then the min-max scaled Small, Medium, Large and Very Large counts and
//! the scaled total. Time and speed features are fed unscaled.
//!
//! Outputs: AADT for cars and taxis, LGVs, HGVs, and buses and coaches.

mod network;
mod train;

use std::collections::BTreeMap;
use std::fs;
use std::ops::{Index, IndexMut};
use std::path::Path;

use chrono::{Datelike, NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::counts::{CountEstimate, EstimateRow, LengthClass, PerClass};
use crate::emissions::VehicleClass;
use crate::error::{Error, Result};
use crate::ingest::{CountRecord, Direction, RoadType, SiteAadt};

pub use network::{Activation, Adam, Dense, Network};
pub use train::{
    fit_network, train, train_for_road_type, EarlyStopping, EpochLog, StopVerdict, TrainConfig,
    TrainingLog, FIRST_TEST_YEAR,
};

pub const N_FEATURES: usize = 9;
pub const N_OUTPUTS: usize = 4;
pub const WEIGHTS_FORMAT_VERSION: u32 = 1;

/// Annual average daily traffic split by vehicle type (vehicles/day).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AadtVector {
    pub cars_taxis: f64,
    pub lgv: f64,
    pub hgv: f64,
    pub buses_coaches: f64,
}

impl AadtVector {
    pub fn new(cars_taxis: f64, lgv: f64, hgv: f64, buses_coaches: f64) -> Self {
        AadtVector {
            cars_taxis,
            lgv,
            hgv,
            buses_coaches,
        }
    }

    pub fn from_fn(mut f: impl FnMut(VehicleClass) -> f64) -> Self {
        let [a, b, c, d] = VehicleClass::ALL.map(&mut f);
        AadtVector::new(a, b, c, d)
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.cars_taxis, self.lgv, self.hgv, self.buses_coaches]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        AadtVector::new(v[0], v[1], v[2], v[3])
    }

    pub fn total(&self) -> f64 {
        self.to_array().iter().sum()
    }

    pub fn scale(&self, factor: f64) -> Self {
        AadtVector::from_fn(|c| self[c] * factor)
    }

    pub fn iter(&self) -> impl Iterator<Item = (VehicleClass, f64)> + '_ {
        VehicleClass::ALL.into_iter().map(move |c| (c, self[c]))
    }
}

impl Index<VehicleClass> for AadtVector {
    type Output = f64;
    fn index(&self, c: VehicleClass) -> &f64 {
        match c {
            VehicleClass::CarsTaxis => &self.cars_taxis,
            VehicleClass::Lgv => &self.lgv,
            VehicleClass::Hgv => &self.hgv,
            VehicleClass::BusesCoaches => &self.buses_coaches,
        }
    }
}

impl IndexMut<VehicleClass> for AadtVector {
    fn index_mut(&mut self, c: VehicleClass) -> &mut f64 {
        match c {
            VehicleClass::CarsTaxis => &mut self.cars_taxis,
            VehicleClass::Lgv => &mut self.lgv,
            VehicleClass::Hgv => &mut self.hgv,
            VehicleClass::BusesCoaches => &mut self.buses_coaches,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    /// A constant feature (max = min) scales to 0.
    pub fn scale(&self, v: f64) -> f64 {
        if self.max > self.min {
            (v - self.min) / (self.max - self.min)
        } else {
            0.0
        }
    }

    pub fn unscale(&self, s: f64) -> f64 {
        self.min + s * (self.max - self.min)
    }
}

/// Min-max ranges of the five count features, fitted on training rows only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMaxParams {
    pub small: Range,
    pub medium: Range,
    pub large: Range,
    pub very_large: Range,
    pub total: Range,
}

impl MinMaxParams {
    pub fn class(&self, c: LengthClass) -> &Range {
        match c {
            LengthClass::Small => &self.small,
            LengthClass::Medium => &self.medium,
            LengthClass::Large => &self.large,
            LengthClass::VeryLarge => &self.very_large,
        }
    }
}

pub fn fit_minmax(history: &[CountRecord]) -> Result<MinMaxParams> {
    let rows: Vec<([u32; 4], u32)> = history
        .iter()
        .filter_map(|r| {
            let c = [r.counts.0[0]?, r.counts.0[1]?, r.counts.0[2]?, r.counts.0[3]?];
            Some((c, r.total?))
        })
        .collect();
    if rows.is_empty() {
        return Err(Error::Empty("no complete count records to fit min-max scaling"));
    }
    if rows.len() < 2 {
        return Err(Error::Invalid("min-max scaling needs at least 2 records".into()));
    }
    let range = |f: &dyn Fn(&([u32; 4], u32)) -> u32| {
        let (lo, hi) = rows
            .iter()
            .map(f)
            .fold((u32::MAX, u32::MIN), |(lo, hi), v| (lo.min(v), hi.max(v)));
        Range {
            min: f64::from(lo),
            max: f64::from(hi),
        }
    };
    Ok(MinMaxParams {
        small: range(&|r| r.0[0]),
        medium: range(&|r| r.0[1]),
        large: range(&|r| r.0[2]),
        very_large: range(&|r| r.0[3]),
        total: range(&|r| r.1),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub hour_of_day: u32,
    pub day_of_week: u32,
    pub month_of_year: u32,
    pub speed_kmh: f64,
    /// Small, Medium, Large, Very Large. Values above 1 are kept at inference.
    pub scaled_counts: [f64; 4],
    pub total_vehicles: f64,
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; N_FEATURES] {
        [
            f64::from(self.hour_of_day),
            f64::from(self.day_of_week),
            f64::from(self.month_of_year),
            self.speed_kmh,
            self.scaled_counts[0],
            self.scaled_counts[1],
            self.scaled_counts[2],
            self.scaled_counts[3],
            self.total_vehicles,
        ]
    }
}

/// Anything that can supply the raw inputs of one feature vector.
pub trait Observation {
    fn timestamp(&self) -> NaiveDateTime;
    fn class_counts(&self) -> Result<PerClass<f64>>;
    fn total(&self) -> Result<f64>;
    fn speed_kmh(&self) -> Result<f64>;
}

impl Observation for CountRecord {
    fn timestamp(&self) -> NaiveDateTime {
        self.timestamp
    }

    fn class_counts(&self) -> Result<PerClass<f64>> {
        let mut out = PerClass([0.0; 4]);
        for c in LengthClass::ALL {
            out[c] = f64::from(self.counts[c].ok_or_else(|| {
                Error::Invalid(format!("record {} is missing '{}'", self.timestamp, c.column()))
            })?);
        }
        Ok(out)
    }

    fn total(&self) -> Result<f64> {
        self.total
            .map(f64::from)
            .ok_or_else(|| Error::Invalid(format!("record {} is missing 'total'", self.timestamp)))
    }

    fn speed_kmh(&self) -> Result<f64> {
        self.mean_speed_kmh.ok_or_else(|| {
            Error::Invalid(format!("record {} is missing 'mean_speed_kmh'", self.timestamp))
        })
    }
}

impl Observation for EstimateRow {
    fn timestamp(&self) -> NaiveDateTime {
        self.timestamp
    }
    fn class_counts(&self) -> Result<PerClass<f64>> {
        Ok(self.counts_15min)
    }
    fn total(&self) -> Result<f64> {
        Ok(self.total_15min)
    }
    fn speed_kmh(&self) -> Result<f64> {
        Ok(self.speed_kmh)
    }
}

/// A count estimate paired with its image acquisition time.
#[derive(Debug, Clone, Copy)]
pub struct TimedEstimate<'a> {
    pub timestamp: NaiveDateTime,
    pub estimate: &'a CountEstimate,
}

impl Observation for TimedEstimate<'_> {
    fn timestamp(&self) -> NaiveDateTime {
        self.timestamp
    }
    fn class_counts(&self) -> Result<PerClass<f64>> {
        Ok(self.estimate.counts_15min)
    }
    fn total(&self) -> Result<f64> {
        Ok(self.estimate.total_15min)
    }
    fn speed_kmh(&self) -> Result<f64> {
        Ok(self.estimate.speed_used_kmh)
    }
}

pub fn build_features(obs: &impl Observation, params: &MinMaxParams) -> Result<FeatureVector> {
    let t = obs.timestamp();
    let counts = obs.class_counts()?;
    let total = obs.total()?;
    let speed = obs.speed_kmh()?;
    Ok(FeatureVector {
        hour_of_day: t.hour(),
        day_of_week: t.weekday().number_from_monday(),
        month_of_year: t.month(),
        speed_kmh: speed,
        scaled_counts: LengthClass::ALL.map(|c| params.class(c).scale(counts[c])),
        total_vehicles: params.total.scale(total),
    })
}

/// LA target per vehicle type: the maximum over count sites and directions.
pub fn derive_la_target(
    site_aadt_by_direction: &BTreeMap<(String, Direction, VehicleClass), f64>,
) -> Result<AadtVector> {
    let mut out = AadtVector::default();
    for class in VehicleClass::ALL {
        out[class] = site_aadt_by_direction
            .iter()
            .filter(|((_, _, c), _)| *c == class)
            .map(|(_, &v)| v)
            .reduce(f64::max)
            .ok_or_else(|| Error::Invalid(format!("no AADT entries for vehicle type {class}")))?;
    }
    Ok(out)
}

/// LA targets keyed by `(la, road_type, year)`, derived from directional site AADT.
pub fn la_targets(rows: &[SiteAadt]) -> Result<BTreeMap<(String, RoadType, i32), AadtVector>> {
    let mut grouped: BTreeMap<(String, RoadType, i32), BTreeMap<(String, Direction, VehicleClass), f64>> =
        BTreeMap::new();
    for r in rows {
        let entry = grouped
            .entry((r.la_name.clone(), r.road_type, r.year))
            .or_default();
        for (class, v) in r.aadt.iter() {
            entry.insert((r.site_id.clone(), r.direction, class), v);
        }
    }
    grouped
        .into_iter()
        .map(|(k, m)| Ok((k, derive_la_target(&m)?)))
        .collect()
}

/// Component-wise mean of the directional predictions.
pub fn aggregate_directions(predictions: &[AadtVector]) -> Result<AadtVector> {
    if predictions.is_empty() {
        return Err(Error::Empty("no directional AADT predictions to aggregate"));
    }
    let n = predictions.len() as f64;
    Ok(AadtVector::from_fn(|c| {
        predictions.iter().map(|p| p[c]).sum::<f64>() / n
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsMeta {
    pub site_id: String,
    pub la_name: String,
    pub road_type: RoadType,
    pub minmax: MinMaxParams,
    /// Outputs are learned as `aadt / target_scale` per vehicle type.
    pub target_scale: [f64; 4],
    pub training_start: Option<NaiveDate>,
    pub training_end: Option<NaiveDate>,
    pub seed: u64,
}

/// Trained network plus everything needed to run inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelWeights {
    pub format_version: u32,
    pub metadata: WeightsMeta,
    pub layers: Vec<Dense>,
}

impl ModelWeights {
    pub fn new(network: Network, metadata: WeightsMeta) -> Self {
        ModelWeights {
            format_version: WEIGHTS_FORMAT_VERSION,
            metadata,
            layers: network.layers,
        }
    }

    pub fn network(&self) -> Network {
        Network {
            layers: self.layers.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != WEIGHTS_FORMAT_VERSION {
            return Err(Error::Invalid(format!(
                "unsupported weights format version {} (expected {WEIGHTS_FORMAT_VERSION})",
                self.format_version
            )));
        }
        let net = self.network();
        if !net.is_consistent() || net.inputs() != N_FEATURES || net.outputs() != N_OUTPUTS {
            return Err(Error::Shape(format!(
                "layers must chain from {N_FEATURES} inputs to {N_OUTPUTS} outputs"
            )));
        }
        Ok(())
    }

    /// Refuses to use weights trained for another road type.
    pub fn ensure_road_type(&self, requested: RoadType) -> Result<()> {
        if self.metadata.road_type != requested {
            return Err(Error::RoadTypeMismatch {
                trained: self.metadata.road_type.to_string(),
                requested: requested.to_string(),
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("weights serialize")
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let w: ModelWeights = serde_json::from_str(text)
            .map_err(|e| Error::parse(path, e.line() as u64, e.to_string()))?;
        w.validate()?;
        Ok(w)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }
}

/// Forward pass. Negative outputs are clamped to zero.
pub fn predict(weights: &ModelWeights, features: &FeatureVector) -> Result<AadtVector> {
    predict_raw(weights, &features.to_array())
}

pub fn predict_raw(weights: &ModelWeights, x: &[f64]) -> Result<AadtVector> {
    let net = weights.network();
    if !net.is_consistent() || net.inputs() != x.len() || net.outputs() != N_OUTPUTS {
        return Err(Error::Shape(format!(
            "network expects {} inputs / {} outputs, got {} inputs",
            net.inputs(),
            net.outputs(),
            x.len()
        )));
    }
    let out = net.forward(x);
    let scale = weights.metadata.target_scale;
    let mut aadt = AadtVector::from_fn(|c| out[c.index()] * scale[c.index()]);
    for class in VehicleClass::ALL {
        if aadt[class] < 0.0 {
            log::warn!(
                "site {}: negative {class} prediction {} clamped to 0",
                weights.metadata.site_id,
                aadt[class]
            );
            aadt[class] = 0.0;
        }
    }
    Ok(aadt)
}
