//! Write and re-read every input format: count history, detections, factors
//! and ground truth, then show validation of a malformed history file.

use std::fs;

use chrono::NaiveDate;
use roadghg::ingest::{
    parse_count_history, parse_detections, parse_factors, parse_ground_truth, validate_site,
    write_count_history, write_detections, write_factors, write_ground_truth, Detection,
    Direction, EmissionsFactors, ImageMeta, RoadType,
};
use roadghg::synth::{gen_ground_truth, gen_history, SynthConfig};

fn main() -> roadghg::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let cfg = SynthConfig {
        days: 3,
        missing_fraction: 0.02,
        ..SynthConfig::default()
    };

    let history = &gen_history(&cfg)?[0];
    let path = dir.path().join("SYN01_A.csv");
    write_count_history(&path, &history.records)?;
    let back = parse_count_history(&path)?;
    let report = validate_site(&back)?;
    println!("{} records for {}: {report:?}", back.len(), history.site_id);

    let meta = ImageMeta {
        site_id: "SYN01".into(),
        la_name: cfg.la_name.clone(),
        direction: Direction::A,
        acquisition_timestamp: NaiveDate::from_ymd_opt(2018, 6, 4)
            .unwrap()
            .and_hms_opt(10, 37, 12)
            .unwrap(),
        segment_length_km: 1.2,
        gsd_m_per_px: 0.31,
        band_time_lag_s: 0.26,
    };
    let dets = vec![
        Detection::new([10.0, 24.0, 5.0, 11.0], "Small Car", 0.91, 0.31)?,
        Detection::new([40.0, 78.0, 6.0, 14.0], "Cargo Truck", 0.64, 0.31)?,
    ];
    let det_path = dir.path().join("SYN01_A.json");
    write_detections(&det_path, &meta, &dets)?;
    let (parsed, parsed_meta) = parse_detections(&det_path)?;
    println!("{} detections at {}", parsed.len(), parsed_meta.acquisition_timestamp);

    let factors_path = dir.path().join("factors.csv");
    write_factors(&factors_path, &EmissionsFactors::bundled())?;
    let factors = parse_factors(&factors_path)?;
    println!("Luton motorway length: {} km", factors.road_length("Luton", RoadType::Motorways)?);

    let gt_path = dir.path().join("ground_truth.csv");
    write_ground_truth(&gt_path, &gen_ground_truth(&cfg, &[2017, 2018]))?;
    println!("{} ground truth rows", parse_ground_truth(&gt_path)?.len());

    // A total that disagrees with its class counts is reported with its line number.
    let text = fs::read_to_string(&path).expect("history");
    let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
    let mut cells: Vec<String> = lines[3].split(',').map(str::to_owned).collect();
    cells[7] = "99999".into();
    lines[3] = cells.join(",");
    fs::write(&path, lines.join("\n")).expect("write");
    match parse_count_history(&path) {
        Err(e) => println!("rejected as expected: {e}"),
        Ok(_) => println!("unexpectedly accepted"),
    }
    Ok(())
}
