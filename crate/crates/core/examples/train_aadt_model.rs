//! Train a per-site AADT model on synthetic count history, save the weights
//! and predict from a new 15-minute observation.

use roadghg::aadt::{build_features, predict, train_for_road_type, ModelWeights, TrainConfig};
use roadghg::ingest::RoadType;
use roadghg::synth::{gen_ground_truth, gen_history, SynthConfig};

fn main() -> roadghg::Result<()> {
    let synth = SynthConfig {
        days: 60,
        ..SynthConfig::default()
    };
    let history = gen_history(&synth)?;
    let records: Vec<_> = history.iter().flat_map(|h| h.records.clone()).collect();
    let truth = gen_ground_truth(&synth, &[2017]);
    let config = TrainConfig {
        max_epochs: 40,
        seed: 1,
        ..TrainConfig::default()
    };
    let (weights, log) = train_for_road_type(&records, &truth, &synth.la_name, RoadType::Motorways, &config)?;
    for e in &log.epochs {
        println!(
            "epoch {:>3} train {:.3e} val {:.3e} mape {:.4}",
            e.epoch, e.train_loss, e.val_loss, e.val_mape
        );
    }
    println!("kept epoch {} (stopped early: {})", log.best_epoch, log.stopped_early);

    let dir = tempfile::tempdir().expect("temp dir");
    let path = dir.path().join("SYN01_motorways.json");
    weights.save(&path)?;
    let weights = ModelWeights::load(&path)?;

    let obs = &records[records.len() / 2];
    let aadt = predict(&weights, &build_features(obs, &weights.metadata.minmax)?)?;
    println!("prediction at {}: {aadt:?}", obs.timestamp);
    println!("truth:              {:?}", synth.aadt_for_year(2017));
    Ok(())
}
