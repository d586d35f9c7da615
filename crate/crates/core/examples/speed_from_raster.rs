//! Live speed from a two-band raster: change image, moving-object blobs,
//! pairing and mean speed, plus the raster file round trip.

use roadghg::speed::{
    build_change_image, detect_moving_objects, estimate_from_raster, read_raster, write_raster,
    Thresholds,
};
use roadghg::synth::{gen_raster, RasterSpec};

fn main() -> roadghg::Result<()> {
    let spec = RasterSpec {
        shift_px: 5,
        gsd_m_per_px: 0.5,
        ..RasterSpec::default()
    };
    let raster = gen_raster(&spec)?;

    let dir = tempfile::tempdir().expect("temp dir");
    let path = dir.path().join("scene.dbr");
    write_raster(&path, &raster, Some("SYN01"))?;
    let (raster, meta) = read_raster(&path)?;
    println!("read {}x{} raster, gsd {} m", raster.band_a.rows, raster.band_a.cols, meta.gsd_m_per_px);

    let thresholds = Thresholds::default();
    let change = build_change_image(&raster)?;
    for b in detect_moving_objects(&change, &thresholds) {
        println!(
            "{:?} blob at ({:.1}, {:.1}), area {} px, compactness {:.2}, rectangularity {:.2}",
            b.polarity, b.centroid.0, b.centroid.1, b.area_px, b.compactness, b.rectangularity
        );
    }

    let run = estimate_from_raster(&raster, &thresholds, None)?;
    match run.estimate.mean_speed_kmh {
        Some(v) => println!(
            "{} pair(s), mean speed {v:.1} km/h (implied {:.1})",
            run.estimate.pair_count,
            spec.implied_speed_kmh()
        ),
        None => println!("no pairs within {:.1} m", run.max_displacement_m),
    }
    Ok(())
}
