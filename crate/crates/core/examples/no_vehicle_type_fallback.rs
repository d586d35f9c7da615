//! When only an overall AADT is available, spread it over vehicle types in
//! proportion to the detected vehicles and compare emissions.

use roadghg::aadt::AadtVector;
use roadghg::emissions::{apportion_aadt, compute_emissions};
use roadghg::ingest::{Detection, EmissionsFactors, RoadType};

fn main() -> roadghg::Result<()> {
    let typed = AadtVector::new(61000.0, 9800.0, 4300.0, 150.0);
    let mut dets = Vec::new();
    for (label, n) in [("Small Car", 40), ("Pickup Truck", 9), ("Cargo Truck", 6), ("Bus", 1)] {
        for i in 0..n {
            let x = f64::from(i) * 30.0;
            dets.push(Detection::new([x, x + 15.0, 0.0, 6.0], label, 0.8, 0.31)?);
        }
    }
    let app = apportion_aadt(typed.total(), &dets)?;
    println!("detected per type {:?}", app.detected);
    println!("apportioned AADT {:?}", app.aadt);

    let factors = EmissionsFactors::bundled();
    let a = compute_emissions(&typed, &factors, "Hounslow", RoadType::Motorways)?;
    let b = compute_emissions(&app.aadt, &factors, "Hounslow", RoadType::Motorways)?;
    for (class, kg) in &a.per_type_kgco2e {
        println!("{class:<14} typed {kg:>14.0} kg  apportioned {:>14.0} kg", b.per_type_kgco2e[class]);
    }
    println!("total typed {:.0} kg, apportioned {:.0} kg", a.total_kgco2e, b.total_kgco2e);
    Ok(())
}
