//! The full workflow on a generated fixture: train, predict with historical
//! and estimated speed, predict without vehicle types, then evaluate.

use roadghg::ingest::RoadType;
use roadghg::pipeline::{cmd_evaluate, cmd_predict, cmd_speed, cmd_train, RunConfig, SpeedSource};
use roadghg::synth::{write_fixture, SynthConfig};

fn main() -> roadghg::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let manifest = write_fixture(
        dir.path(),
        &SynthConfig {
            days: 28,
            ..SynthConfig::default()
        },
    )?;
    let mut cfg = RunConfig::load(&manifest.config)?;
    cfg.max_epochs = 30;
    cfg.road_type = RoadType::Motorways;

    for site in cmd_train(&cfg)? {
        println!("trained {} ({} epochs)", site.site_id, site.log.epochs.len());
    }
    println!("{}", cmd_speed(&cfg)?);

    for source in [SpeedSource::Historical, SpeedSource::Estimated] {
        let mut c = cfg.clone();
        c.speed_source = source;
        c.output_dir = dir.path().join(format!("out_{source:?}").to_lowercase());
        let out = cmd_predict(&c)?;
        for p in &out.predictions {
            println!("{source:?} {} {} {:?}", p.site_id, p.direction, p.aadt);
        }
        let eval = cmd_evaluate(&c)?;
        for r in &eval.aadt_rows {
            println!("  AADT {:<12} {:<10} mape {:.4}", r.label, r.group, r.mape);
        }
    }

    let mut c = cfg.clone();
    c.no_vehicle_type = true;
    c.output_dir = dir.path().join("out_fallback");
    cmd_predict(&c)?;
    let eval = cmd_evaluate(&c)?;
    println!("per-type emissions MAPE without vehicle types: {:.4}", eval.emissions_per_type_mape);
    Ok(())
}
