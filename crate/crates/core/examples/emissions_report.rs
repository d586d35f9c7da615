//! Annual road-transport emissions for an LA from an AADT vector.

use roadghg::aadt::AadtVector;
use roadghg::emissions::compute_emissions;
use roadghg::ingest::{EmissionsFactors, RoadType};

fn main() -> roadghg::Result<()> {
    let factors = EmissionsFactors::bundled();
    let aadt = AadtVector::new(52000.0, 8100.0, 6300.0, 210.0);
    let report = compute_emissions(&aadt, &factors, "Blackburn", RoadType::Motorways)?;
    print!("{report}");
    for line in &report.lines {
        println!(
            "{:<14} {:<7} {:>14.0} km {:>12.0} l {:>14.1} kg",
            line.vehicle_type,
            line.fuel,
            line.vkt_km,
            line.litres,
            line.kgco2e
        );
    }
    let dir = tempfile::tempdir().expect("temp dir");
    report.write_csv(&dir.path().join("emissions.csv"))?;
    Ok(())
}
