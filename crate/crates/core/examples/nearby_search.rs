//! Load the synthetic Dhaka places and ask for the closest services.

use safeguard::geo::{haversine, Category, GeoPoint, NearbyQuery, PoiDirectory};

const PLACES: &str = include_str!("../data/synthetic_dhaka_pois.csv");

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let directory = PoiDirectory::default();
    let report = directory.ingest(PLACES.as_bytes())?;
    println!("loaded {} places, {} rejected", report.accepted, report.rejected.len());

    let here = GeoPoint::new(23.8103, 90.4125)?;
    for category in Category::ALL {
        let hits = directory.nearby(&NearbyQuery {
            center: here,
            category: Some(category),
            k: 3,
            radius_m: 5_000.0,
        })?;
        println!("{category}:");
        for hit in hits {
            println!("  {:>7.0} m  {}", hit.distance_m, hit.poi.name);
        }
    }

    let sylhet = GeoPoint::new(24.8949, 91.8687)?;
    println!("Dhaka to Sylhet: {:.1} m", haversine(here, sylhet));
    Ok(())
}
