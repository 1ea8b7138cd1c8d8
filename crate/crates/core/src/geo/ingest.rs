use std::io::Read;

use serde::{Deserialize, Serialize};

use super::index::{Category, Poi, SpatialIndex};
use super::point::GeoPoint;
use super::GeoError;

pub const CSV_HEADER: [&str; 5] = ["id", "name", "category", "lat", "lon"];

/// A row that was skipped during ingestion. `line` is 1-based and counts the
/// header, so the first data row is line 2.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedRow {
    pub line: u64,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub accepted: usize,
    pub rejected: Vec<RejectedRow>,
}

#[derive(Deserialize)]
struct CsvRow {
    id: String,
    name: String,
    category: String,
    lat: String,
    lon: String,
}

fn parse_row(row: CsvRow) -> Result<Poi, String> {
    let id = row.id.trim();
    if id.is_empty() {
        return Err("empty id".into());
    }
    let name = row.name.trim();
    if name.is_empty() {
        return Err("empty name".into());
    }
    let category: Category = row.category.parse().map_err(|e: GeoError| e.to_string())?;
    let lat: f64 = row
        .lat
        .trim()
        .parse()
        .map_err(|_| format!("latitude {:?} is not a number", row.lat))?;
    let lon: f64 = row
        .lon
        .trim()
        .parse()
        .map_err(|_| format!("longitude {:?} is not a number", row.lon))?;
    let location = GeoPoint::new(lat, lon).map_err(|e| e.to_string())?;
    Ok(Poi {
        id: id.to_string(),
        name: name.to_string(),
        category,
        location,
    })
}

/// Reads `id,name,category,lat,lon` CSV into `index`. Bad rows are reported
/// and skipped; only an unreadable stream or a missing header fails the call.
pub fn ingest_csv<R: Read>(index: &mut SpatialIndex, reader: R) -> Result<IngestReport, GeoError> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);

    let headers = csv
        .headers()
        .map_err(|e| GeoError::UnreadableFile(e.to_string()))?
        .clone();
    let names: Vec<String> = headers.iter().map(|h| h.trim().to_ascii_lowercase()).collect();
    if names.iter().map(String::as_str).ne(CSV_HEADER) {
        return Err(GeoError::UnreadableFile(format!(
            "expected header {:?}, found {:?}",
            CSV_HEADER.join(","),
            names.join(",")
        )));
    }

    let mut report = IngestReport::default();
    for (i, record) in csv.records().enumerate() {
        let fallback_line = i as u64 + 2;
        let record = match record {
            Ok(r) => r,
            Err(e) if e.is_io_error() => return Err(GeoError::UnreadableFile(e.to_string())),
            Err(e) => {
                let line = e.position().map_or(fallback_line, |p| p.line());
                report.rejected.push(RejectedRow {
                    line,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let line = record.position().map_or(fallback_line, |p| p.line());
        if record.len() != CSV_HEADER.len() {
            report.rejected.push(RejectedRow {
                line,
                reason: format!("expected 5 fields, found {}", record.len()),
            });
            continue;
        }
        let parsed = record
            .deserialize::<CsvRow>(Some(&headers))
            .map_err(|e| e.to_string())
            .and_then(parse_row)
            .and_then(|poi| index.insert(poi).map_err(|e| e.to_string()));
        match parsed {
            Ok(()) => report.accepted += 1,
            Err(reason) => report.rejected.push(RejectedRow { line, reason }),
        }
    }
    Ok(report)
}

/// Renders places back into the ingestion format.
pub fn write_csv<'a, W, I>(writer: W, pois: I) -> Result<(), GeoError>
where
    W: std::io::Write,
    I: IntoIterator<Item = &'a Poi>,
{
    let mut out = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| GeoError::UnreadableFile(e.to_string());
    out.write_record(CSV_HEADER).map_err(io)?;
    for poi in pois {
        out.write_record([
            poi.id.as_str(),
            poi.name.as_str(),
            poi.category.as_str(),
            &poi.location.lat().to_string(),
            &poi.location.lon().to_string(),
        ])
        .map_err(io)?;
    }
    out.flush()
        .map_err(|e| GeoError::UnreadableFile(e.to_string()))?;
    Ok(())
}
