//! Mini-batch training with early stopping on validation loss.

use chrono::{Datelike, NaiveDateTime};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    build_features, fit_minmax, la_targets, AadtVector, ModelWeights, Network, WeightsMeta,
    N_FEATURES, N_OUTPUTS,
};
use crate::aadt::network::Adam;
use crate::error::{Error, Result};
use crate::ingest::{CountRecord, RoadType, SiteAadt};
use crate::metrics::{mape, EvalPair};

/// Records from this year onwards are test data and never reach the optimiser.
pub const FIRST_TEST_YEAR: i32 = 2018;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden_layers: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Final fraction of rows (by time) held out for validation.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden_layers: vec![32, 32],
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 200,
            patience: 3,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_mape: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub rows_train: usize,
    pub rows_val: usize,
    pub rows_dropped_incomplete: usize,
    /// Latest timestamp of any row that contributed a gradient or a validation score.
    pub latest_timestamp: Option<NaiveDateTime>,
}

impl TrainingLog {
    pub fn best(&self) -> Option<&EpochLog> {
        self.epochs.iter().find(|e| e.epoch == self.best_epoch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopVerdict {
    Improved,
    Wait,
    Stop,
}

/// Stops once the monitored loss has not strictly improved for `patience`
/// consecutive epochs.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    wait: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            wait: 0,
        }
    }

    pub fn update(&mut self, epoch: usize, loss: f64) -> StopVerdict {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.wait = 0;
            StopVerdict::Improved
        } else {
            self.wait += 1;
            if self.wait >= self.patience {
                StopVerdict::Stop
            } else {
                StopVerdict::Wait
            }
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

fn mean_mape(net: &Network, xs: &[Vec<f64>], ys_raw: &[AadtVector], scale: &[f64; 4]) -> f64 {
    let pairs: Vec<EvalPair> = xs
        .iter()
        .zip(ys_raw)
        .flat_map(|(x, y)| {
            let out = net.forward(x);
            (0..N_OUTPUTS)
                .map(|i| EvalPair::new((out[i] * scale[i]).max(0.0), y.to_array()[i]))
                .collect::<Vec<_>>()
        })
        .collect();
    mape(&pairs).map(|m| m.value).unwrap_or(0.0)
}

/// Seeded random hidden layers and an output layer that starts as the mean
/// predictor: zero weights, bias equal to the mean training target.
pub fn initial_network<R: rand::Rng>(
    inputs: usize,
    hidden: &[usize],
    targets: &[Vec<f64>],
    rng: &mut R,
) -> Network {
    let mut net = Network::new(inputs, hidden, N_OUTPUTS, rng);
    let out = net.layers.last_mut().expect("network has an output layer");
    out.weights.iter_mut().for_each(|w| *w = 0.0);
    for (i, b) in out.bias.iter_mut().enumerate() {
        *b = targets.iter().map(|t| t[i]).sum::<f64>() / targets.len().max(1) as f64;
    }
    net
}

/// Fits a network on prepared inputs. Targets are divided by `target_scale`
/// before the squared error is taken.
pub fn fit_network(
    train_x: &[Vec<f64>],
    train_y: &[AadtVector],
    val_x: &[Vec<f64>],
    val_y: &[AadtVector],
    target_scale: [f64; 4],
    config: &TrainConfig,
) -> Result<(Network, TrainingLog)> {
    if train_x.is_empty() {
        return Err(Error::Empty("no training rows"));
    }
    if val_x.is_empty() {
        return Err(Error::Empty("no validation rows"));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let inputs = train_x[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let scaled = |ys: &[AadtVector]| -> Vec<Vec<f64>> {
        ys.iter()
            .map(|y| {
                let a = y.to_array();
                (0..N_OUTPUTS).map(|i| a[i] / target_scale[i]).collect()
            })
            .collect()
    };
    let train_t = scaled(train_y);
    let val_t = scaled(val_y);
    let mut net = initial_network(inputs, &config.hidden_layers, &train_t, &mut rng);

    let mut opt = Adam::new(config.learning_rate, net.param_count());
    let mut stopper = EarlyStopping::new(config.patience.max(1));
    let mut best = net.clone();
    let mut log = TrainingLog {
        epochs: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
        rows_train: train_x.len(),
        rows_val: val_x.len(),
        rows_dropped_incomplete: 0,
        latest_timestamp: None,
    };
    let mut order: Vec<usize> = (0..train_x.len()).collect();
    let mut params = net.params();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let bx: Vec<Vec<f64>> = batch.iter().map(|&i| train_x[i].clone()).collect();
            let by: Vec<Vec<f64>> = batch.iter().map(|&i| train_t[i].clone()).collect();
            let (loss, grad) = net.gradient(&bx, &by);
            epoch_loss += loss * batch.len() as f64;
            opt.step(&mut params, &grad);
            net.set_params(&params);
        }
        let train_loss = epoch_loss / train_x.len() as f64;
        let val_loss = net.loss(val_x, &val_t);
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::Divergence {
                last_stable_epoch: epoch - 1,
            });
        }
        let val_mape = mean_mape(&net, val_x, val_y, &target_scale);
        log::debug!("epoch {epoch}: train {train_loss:.6} val {val_loss:.6} mape {val_mape:.4}");
        log.epochs.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
            val_mape,
        });
        match stopper.update(epoch, val_loss) {
            StopVerdict::Improved => best = net.clone(),
            StopVerdict::Wait => {}
            StopVerdict::Stop => {
                log.stopped_early = true;
                break;
            }
        }
    }
    log.best_epoch = stopper.best_epoch();
    Ok((best, log))
}

/// Per-output mean absolute target, used to put all four outputs on a unit scale.
fn target_scale(ys: &[AadtVector]) -> [f64; 4] {
    let mut s = [0.0; 4];
    for y in ys {
        for (si, v) in s.iter_mut().zip(y.to_array()) {
            *si += v.abs();
        }
    }
    s.map(|v| {
        let m = v / ys.len() as f64;
        if m > 0.0 {
            m
        } else {
            1.0
        }
    })
}

/// Trains one site model on count history aligned with per-row AADT targets.
///
/// Incomplete rows are dropped. The final `val_fraction` of rows by time is
/// used for validation; min-max ranges come from the remaining training rows.
pub fn train(
    history: &[CountRecord],
    targets: &[AadtVector],
    config: &TrainConfig,
    road_type: RoadType,
) -> Result<(ModelWeights, TrainingLog)> {
    if history.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} history rows but {} targets",
            history.len(),
            targets.len()
        )));
    }
    if let Some(r) = history.iter().find(|r| r.timestamp.year() >= FIRST_TEST_YEAR) {
        return Err(Error::Leakage(format!(
            "record at {} for site {} is in the test period ({FIRST_TEST_YEAR}+)",
            r.timestamp, r.site_id
        )));
    }
    if !(config.val_fraction > 0.0 && config.val_fraction < 1.0) {
        return Err(Error::Config("val_fraction must lie in (0, 1)".into()));
    }
    let mut rows: Vec<(&CountRecord, AadtVector)> = history
        .iter()
        .zip(targets.iter().copied())
        .filter(|(r, _)| r.is_complete())
        .collect();
    let dropped = history.len() - rows.len();
    rows.sort_by_key(|(r, _)| r.timestamp);
    if rows.len() < 3 {
        return Err(Error::Empty("fewer than 3 complete training rows"));
    }
    let n_val = ((rows.len() as f64 * config.val_fraction).round() as usize).clamp(1, rows.len() - 2);
    let (fit_rows, val_rows) = rows.split_at(rows.len() - n_val);

    let fit_records: Vec<CountRecord> = fit_rows.iter().map(|(r, _)| (*r).clone()).collect();
    let minmax = fit_minmax(&fit_records)?;
    let featurize = |rs: &[(&CountRecord, AadtVector)]| -> Result<(Vec<Vec<f64>>, Vec<AadtVector>)> {
        let mut xs = Vec::with_capacity(rs.len());
        let mut ys = Vec::with_capacity(rs.len());
        for (r, y) in rs {
            xs.push(build_features(*r, &minmax)?.to_array().to_vec());
            ys.push(*y);
        }
        Ok((xs, ys))
    };
    let (train_x, train_y) = featurize(fit_rows)?;
    let (val_x, val_y) = featurize(val_rows)?;
    debug_assert!(train_x.iter().all(|x| x.len() == N_FEATURES));

    let scale = target_scale(&train_y);
    let (net, mut log) = fit_network(&train_x, &train_y, &val_x, &val_y, scale, config)?;
    log.rows_dropped_incomplete = dropped;
    log.latest_timestamp = rows.last().map(|(r, _)| r.timestamp);

    let first = rows[0].0;
    let meta = WeightsMeta {
        site_id: first.site_id.clone(),
        la_name: String::new(),
        road_type,
        minmax,
        target_scale: scale,
        training_start: Some(first.timestamp.date()),
        training_end: rows.last().map(|(r, _)| r.timestamp.date()),
        seed: config.seed,
    };
    Ok((ModelWeights::new(net, meta), log))
}

/// Trains a site model whose target is the LA AADT of `road_type`, looked up
/// per row by calendar year. Motorway count data is the input for every road type.
pub fn train_for_road_type(
    history: &[CountRecord],
    ground_truth: &[SiteAadt],
    la_name: &str,
    road_type: RoadType,
    config: &TrainConfig,
) -> Result<(ModelWeights, TrainingLog)> {
    let targets = la_targets(ground_truth)?;
    if !targets.keys().any(|(la, rt, _)| la == la_name && *rt == road_type) {
        return Err(Error::Invalid(format!(
            "no {road_type} ground truth AADT for LA '{la_name}'"
        )));
    }
    let mut rows = Vec::with_capacity(history.len());
    let mut ys = Vec::with_capacity(history.len());
    for r in history {
        let year = r.timestamp.year();
        if year >= FIRST_TEST_YEAR {
            return Err(Error::Leakage(format!(
                "record at {} for site {} is in the test period ({FIRST_TEST_YEAR}+)",
                r.timestamp, r.site_id
            )));
        }
        let y = targets
            .get(&(la_name.to_string(), road_type, year))
            .ok_or_else(|| {
                Error::Invalid(format!(
                    "no {road_type} ground truth AADT for LA '{la_name}' in {year}"
                ))
            })?;
        rows.push(r.clone());
        ys.push(*y);
    }
    let (mut w, log) = train(&rows, &ys, config, road_type)?;
    w.metadata.la_name = la_name.to_string();
    Ok((w, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::counts::PerClass;
    use crate::ingest::Direction;
    use chrono::{Duration, NaiveDate};

    fn history(n: usize, year: i32) -> Vec<CountRecord> {
        let start = NaiveDate::from_ymd_opt(year, 3, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
        (0..n)
            .map(|i| {
                let c = [(i * 7 % 40) as u32, (i % 5) as u32, (i % 3) as u32, (i % 4) as u32];
                CountRecord {
                    timestamp: start + Duration::minutes(15 * i as i64),
                    site_id: "s1".into(),
                    direction: Direction::A,
                    counts: PerClass(c.map(Some)),
                    total: Some(c.iter().sum()),
                    mean_speed_kmh: Some(90.0 + (i % 11) as f64),
                }
            })
            .collect()
    }

    #[test]
    fn scripted_plateau_stops_after_patience() {
        let mut s = EarlyStopping::new(3);
        let losses = [5.0, 4.0, 3.0, 3.0, 3.5, 3.2];
        let verdicts: Vec<_> = losses.iter().enumerate().map(|(i, &l)| s.update(i + 1, l)).collect();
        assert_eq!(
            verdicts,
            vec![
                StopVerdict::Improved,
                StopVerdict::Improved,
                StopVerdict::Improved,
                StopVerdict::Wait,
                StopVerdict::Wait,
                StopVerdict::Stop
            ]
        );
        assert_eq!(s.best_epoch(), 3);
    }

    #[test]
    fn frozen_network_halts_at_patience_and_restores_first_epoch() {
        let h = history(200, 2017);
        let y = vec![AadtVector::new(40000.0, 6000.0, 5000.0, 200.0); h.len()];
        let cfg = TrainConfig {
            learning_rate: 0.0,
            hidden_layers: vec![8],
            ..TrainConfig::default()
        };
        let (w, log) = train(&h, &y, &cfg, RoadType::Motorways).unwrap();
        assert!(log.stopped_early);
        assert_eq!(log.best_epoch, 1);
        assert_eq!(log.epochs.len(), 4);
        // lr 0: weights equal the seeded initialisation
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let init = initial_network(N_FEATURES, &cfg.hidden_layers, &[vec![1.0; 4]], &mut rng);
        assert_eq!(w.network(), init);
    }

    #[test]
    fn constant_target_learned_quickly() {
        let h = history(400, 2017);
        let target = AadtVector::new(42000.0, 7000.0, 5500.0, 300.0);
        let y = vec![target; h.len()];
        let cfg = TrainConfig {
            max_epochs: 50,
            seed: 5,
            ..TrainConfig::default()
        };
        let (w, log) = train(&h, &y, &cfg, RoadType::Motorways).unwrap();
        assert!(log.best().unwrap().val_mape < 0.01, "{:?}", log.best());
        let f = build_features(&h[10], &w.metadata.minmax).unwrap();
        let p = super::super::predict(&w, &f).unwrap();
        for (c, v) in p.iter() {
            assert!((v - target[c]).abs() / target[c] < 0.01, "{c}: {v}");
        }
    }

    #[test]
    fn test_year_rows_refused() {
        let mut h = history(50, 2017);
        h.extend(history(5, 2018));
        let y = vec![AadtVector::new(1.0, 1.0, 1.0, 1.0); h.len()];
        assert!(matches!(
            train(&h, &y, &TrainConfig::default(), RoadType::Motorways),
            Err(Error::Leakage(_))
        ));
    }

    #[test]
    fn divergence_is_reported() {
        let h = history(100, 2017);
        let y: Vec<_> = (0..h.len()).map(|i| AadtVector::new(i as f64, 1.0, 2.0, 3.0)).collect();
        let cfg = TrainConfig {
            learning_rate: 1e300,
            hidden_layers: vec![4],
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&h, &y, &cfg, RoadType::Motorways),
            Err(Error::Divergence { .. })
        ));
    }

    #[test]
    fn deterministic_under_seed() {
        let h = history(300, 2017);
        let y: Vec<_> = h
            .iter()
            .map(|r| AadtVector::new(30000.0 + 100.0 * f64::from(r.total.unwrap()), 5000.0, 4000.0, 100.0))
            .collect();
        let cfg = TrainConfig {
            max_epochs: 5,
            hidden_layers: vec![8, 8],
            seed: 9,
            ..TrainConfig::default()
        };
        let a = train(&h, &y, &cfg, RoadType::Motorways).unwrap();
        let b = train(&h, &y, &cfg, RoadType::Motorways).unwrap();
        assert_eq!(a.0.to_json(), b.0.to_json());
        assert_eq!(a.1, b.1);
    }
}
