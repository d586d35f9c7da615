//! Annual road-transport GHG emissions from LA AADT per vehicle type.
//!
//! For vehicle type `i` on a road type of total length `L` km in an LA:
//!
//! ```text
//! VKT_i    = AADT_i * L * 365
//! Litres_i = VKT_i / km_per_litre_i
//! GHG_i    = Litres_i * kg_CO2e_per_litre
//! ```
//!
//! Cars and LGVs are split across petrol and diesel by the licensing fuel mix;
//! the electric/hybrid remainder emits nothing at the tailpipe. HGVs and buses
//! are treated as entirely diesel.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::aadt::AadtVector;
use crate::counts::csv_io;
use crate::error::{Error, Result};
use crate::ingest::{Detection, EmissionsFactors, Fuel, RoadType};

pub const DAYS_PER_YEAR: f64 = 365.0;

pub const EMISSIONS_HEADER: [&str; 7] = [
    "la",
    "road_type",
    "vehicle_type",
    "fuel",
    "vkt_km",
    "litres",
    "kgco2e",
];

/// UK traffic-count vehicle categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VehicleClass {
    CarsTaxis,
    Lgv,
    Hgv,
    BusesCoaches,
}

impl VehicleClass {
    pub const ALL: [VehicleClass; 4] = [
        VehicleClass::CarsTaxis,
        VehicleClass::Lgv,
        VehicleClass::Hgv,
        VehicleClass::BusesCoaches,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Column/key form, e.g. `cars_taxis`.
    pub fn key(self) -> &'static str {
        match self {
            VehicleClass::CarsTaxis => "cars_taxis",
            VehicleClass::Lgv => "lgv",
            VehicleClass::Hgv => "hgv",
            VehicleClass::BusesCoaches => "buses_coaches",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            VehicleClass::CarsTaxis => "Cars and Taxis",
            VehicleClass::Lgv => "LGVs",
            VehicleClass::Hgv => "HGVs",
            VehicleClass::BusesCoaches => "Buses and coaches",
        }
    }

    /// Whether the fuel mix splits this type across petrol and diesel.
    pub fn is_fuel_split(self) -> bool {
        matches!(self, VehicleClass::CarsTaxis | VehicleClass::Lgv)
    }
}

impl fmt::Display for VehicleClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.key())
    }
}

impl FromStr for VehicleClass {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        VehicleClass::ALL
            .into_iter()
            .find(|c| c.key().eq_ignore_ascii_case(t) || c.label().eq_ignore_ascii_case(t))
            .ok_or_else(|| Error::Invalid(format!("unknown vehicle type '{t}'")))
    }
}

/// xView detector classes and the UK category each maps to.
pub const XVIEW_MAPPING: [(&str, VehicleClass); 14] = [
    ("Passenger Vehicle", VehicleClass::CarsTaxis),
    ("Small Car", VehicleClass::CarsTaxis),
    ("Passenger Car", VehicleClass::CarsTaxis),
    ("Pickup Truck", VehicleClass::Lgv),
    ("Utility Truck", VehicleClass::Lgv),
    ("Truck", VehicleClass::Lgv),
    ("Trailer", VehicleClass::Lgv),
    ("Truck w/Box", VehicleClass::Lgv),
    ("Cargo Car", VehicleClass::Lgv),
    ("Cargo Truck", VehicleClass::Hgv),
    ("Truck Tractor", VehicleClass::Hgv),
    ("Truck w/Flatbed", VehicleClass::Hgv),
    ("Truck w/Liquid", VehicleClass::Hgv),
    ("Bus", VehicleClass::BusesCoaches),
];

fn normalize_label(label: &str) -> String {
    label
        .chars()
        .filter(|c| !c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect()
}

/// Maps an xView class label to its UK category. Matching ignores case and whitespace.
pub fn map_xview_to_uk(label: &str) -> Result<VehicleClass> {
    let key = normalize_label(label);
    XVIEW_MAPPING
        .iter()
        .find(|(name, _)| normalize_label(name) == key)
        .map(|&(_, class)| class)
        .ok_or_else(|| Error::UnknownLabel {
            label: label.to_string(),
            valid: XVIEW_MAPPING
                .iter()
                .map(|(n, _)| *n)
                .collect::<Vec<_>>()
                .join(", "),
        })
}

/// Result of spreading one overall AADT across detected vehicle types.
#[derive(Debug, Clone, PartialEq)]
pub struct Apportionment {
    pub aadt: AadtVector,
    pub detected: [usize; 4],
    /// Detections whose label has no UK category.
    pub unmapped: usize,
}

pub fn apportion_aadt(total_aadt: f64, detections: &[Detection]) -> Result<Apportionment> {
    if !(total_aadt >= 0.0) || !total_aadt.is_finite() {
        return Err(Error::Invalid(format!("total AADT must be >= 0 (got {total_aadt})")));
    }
    if detections.is_empty() {
        return Err(Error::Empty("no detections to apportion AADT over"));
    }
    let mut detected = [0usize; 4];
    let mut unmapped = 0;
    for d in detections {
        match map_xview_to_uk(&d.source_class) {
            Ok(class) => detected[class.index()] += 1,
            Err(_) => unmapped += 1,
        }
    }
    let mapped: usize = detected.iter().sum();
    if mapped == 0 {
        return Err(Error::Invalid(format!(
            "none of the {} detections map to a UK vehicle type",
            detections.len()
        )));
    }
    if unmapped > 0 {
        log::warn!("{unmapped} detections with unmapped labels excluded from AADT apportionment");
    }
    let aadt = AadtVector::from_fn(|c| total_aadt * detected[c.index()] as f64 / mapped as f64);
    Ok(Apportionment {
        aadt,
        detected,
        unmapped,
    })
}

/// One row of the emissions breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmissionsLine {
    pub vehicle_type: VehicleClass,
    pub fuel: Fuel,
    pub vkt_km: f64,
    pub litres: f64,
    pub kgco2e: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmissionsReport {
    pub la_name: String,
    pub road_type: RoadType,
    pub per_type_kgco2e: BTreeMap<VehicleClass, f64>,
    pub total_kgco2e: f64,
    pub vkt_per_type: BTreeMap<VehicleClass, f64>,
    pub litres_per_type_fuel: BTreeMap<(VehicleClass, Fuel), f64>,
    pub lines: Vec<EmissionsLine>,
    pub assumptions: Vec<String>,
}

const ASSUMPTIONS: [&str; 3] = [
    "HGVs and buses/coaches are treated as 100% diesel",
    "bus/coach fuel consumption taken from the factor table (defaults to the HGV figure)",
    "the diesel conversion factor is applied to LGV, HGV and bus diesel; petrol to car and LGV petrol",
];

pub fn compute_emissions(
    aadt: &AadtVector,
    factors: &EmissionsFactors,
    la: &str,
    road_type: RoadType,
) -> Result<EmissionsReport> {
    let length = factors.road_length(la, road_type)?;
    let mut report = EmissionsReport {
        la_name: la.to_string(),
        road_type,
        per_type_kgco2e: BTreeMap::new(),
        total_kgco2e: 0.0,
        vkt_per_type: BTreeMap::new(),
        litres_per_type_fuel: BTreeMap::new(),
        lines: Vec::new(),
        assumptions: ASSUMPTIONS.iter().map(|s| s.to_string()).collect(),
    };
    for class in VehicleClass::ALL {
        let vkt = aadt[class] * length * DAYS_PER_YEAR;
        let shares: Vec<(Fuel, f64)> = if class.is_fuel_split() {
            Fuel::ALL
                .into_iter()
                .map(|fuel| {
                    factors
                        .fuel_mix
                        .get(&fuel)
                        .map(|&s| (fuel, s))
                        .ok_or_else(|| Error::MissingFactor(format!("fuel_mix/{fuel}")))
                })
                .collect::<Result<_>>()?
        } else {
            vec![(Fuel::Diesel, 1.0)]
        };
        let mut type_total = 0.0;
        for (fuel, share) in shares {
            let litres = share * vkt / factors.km_per_litre(class, fuel)?;
            let kg = litres * factors.conversion(fuel)?;
            type_total += kg;
            report.litres_per_type_fuel.insert((class, fuel), litres);
            report.lines.push(EmissionsLine {
                vehicle_type: class,
                fuel,
                vkt_km: share * vkt,
                litres,
                kgco2e: kg,
            });
        }
        report.vkt_per_type.insert(class, vkt);
        report.per_type_kgco2e.insert(class, type_total);
    }
    report.total_kgco2e = report.per_type_kgco2e.values().sum();
    Ok(report)
}

impl EmissionsReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        self.write_rows(&mut w, true).map_err(|e| csv_io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_rows<W: std::io::Write>(&self, w: &mut csv::Writer<W>, header: bool) -> csv::Result<()> {
        if header {
            w.write_record(EMISSIONS_HEADER)?;
        }
        for l in &self.lines {
            w.write_record([
                self.la_name.clone(),
                self.road_type.name().to_string(),
                l.vehicle_type.key().to_string(),
                l.fuel.name().to_string(),
                l.vkt_km.to_string(),
                l.litres.to_string(),
                l.kgco2e.to_string(),
            ])?;
        }
        Ok(())
    }

    pub fn write_table(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_string()).map_err(|e| Error::io(path, e))
    }
}

impl fmt::Display for EmissionsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} / {}", self.la_name, self.road_type)?;
        writeln!(
            f,
            "{:<18} {:>7} {:>16} {:>14} {:>16}",
            "vehicle type", "fuel", "VKT (km)", "litres", "kg CO2e"
        )?;
        for l in &self.lines {
            writeln!(
                f,
                "{:<18} {:>7} {:>16.0} {:>14.0} {:>16.0}",
                l.vehicle_type.label(),
                l.fuel.name(),
                l.vkt_km,
                l.litres,
                l.kgco2e
            )?;
        }
        writeln!(f, "{:<18} {:>7} {:>16} {:>14} {:>16.0}", "TOTAL", "", "", "", self.total_kgco2e)?;
        for a in &self.assumptions {
            writeln!(f, "assumption: {a}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(label: &str) -> Detection {
        Detection::new([0.0, 10.0, 0.0, 5.0], label, 0.9, 0.5).unwrap()
    }

    #[test]
    fn table_mapping() {
        assert_eq!(map_xview_to_uk("Bus").unwrap(), VehicleClass::BusesCoaches);
        assert_eq!(map_xview_to_uk("Pickup Truck").unwrap(), VehicleClass::Lgv);
        assert_eq!(map_xview_to_uk("Cargo Truck").unwrap(), VehicleClass::Hgv);
        assert_eq!(map_xview_to_uk("  small   CAR ").unwrap(), VehicleClass::CarsTaxis);
        assert_eq!(map_xview_to_uk("Truck w/ Box").unwrap(), VehicleClass::Lgv);
        assert_eq!(map_xview_to_uk("Truck w/Liquid").unwrap(), VehicleClass::Hgv);
        match map_xview_to_uk("Helicopter") {
            Err(Error::UnknownLabel { valid, .. }) => assert!(valid.contains("Bus")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn apportion_proportionally() {
        let mut dets: Vec<_> = (0..8).map(|_| det("Small Car")).collect();
        dets.extend((0..2).map(|_| det("Bus")));
        let a = apportion_aadt(50000.0, &dets).unwrap();
        assert_eq!(a.aadt.cars_taxis, 40000.0);
        assert_eq!(a.aadt.buses_coaches, 10000.0);
        assert_eq!(a.aadt.lgv, 0.0);

        let a = apportion_aadt(1234.0, &[det("Truck"), det("Truck")]).unwrap();
        assert_eq!(a.aadt.lgv, 1234.0);
        let a = apportion_aadt(0.0, &[det("Truck")]).unwrap();
        assert_eq!(a.aadt, AadtVector::default());
    }

    #[test]
    fn apportion_excludes_unmapped() {
        let a = apportion_aadt(900.0, &[det("Bus"), det("Tank"), det("Truck"), det("Truck")]).unwrap();
        assert_eq!(a.unmapped, 1);
        assert_eq!(a.aadt.total(), 900.0);
        assert!(apportion_aadt(10.0, &[det("Tank")]).is_err());
        assert!(apportion_aadt(10.0, &[]).is_err());
    }

    #[test]
    fn zero_aadt_zero_report() {
        let f = EmissionsFactors::bundled();
        let r = compute_emissions(&AadtVector::default(), &f, "Luton", RoadType::Motorways).unwrap();
        assert_eq!(r.total_kgco2e, 0.0);
        assert!(r.lines.iter().all(|l| l.kgco2e == 0.0 && l.litres == 0.0));
    }

    #[test]
    fn luton_cars_hand_computed() {
        // VKT = 10000 * 4.18 * 365 = 15,257,000 km
        // petrol: 0.59 * VKT / 20 * 2.16 = 972,176.04
        // diesel: 0.40 * VKT / 23 * 2.56 = 679,268.173913...
        let f = EmissionsFactors::bundled();
        let aadt = AadtVector::new(10000.0, 0.0, 0.0, 0.0);
        let r = compute_emissions(&aadt, &f, "Luton", RoadType::Motorways).unwrap();
        assert!((r.vkt_per_type[&VehicleClass::CarsTaxis] - 15_257_000.0).abs() < 1e-6);
        let expected = 972_176.04 + 679_268.173_913_043_5;
        assert!((r.total_kgco2e - expected).abs() / expected < 1e-12, "{}", r.total_kgco2e);
    }

    #[test]
    fn missing_factor_named() {
        let f = EmissionsFactors::bundled();
        match compute_emissions(&AadtVector::default(), &f, "Nowhere", RoadType::Motorways) {
            Err(Error::MissingFactor(k)) => assert!(k.contains("Nowhere")),
            other => panic!("unexpected {other:?}"),
        }
        let mut g = f.clone();
        g.fuel_km_per_litre.remove(&(VehicleClass::BusesCoaches, Fuel::Diesel));
        assert!(matches!(
            compute_emissions(&AadtVector::default(), &g, "Luton", RoadType::Motorways),
            Err(Error::MissingFactor(_))
        ));
    }
}
