//! Places of interest and nearby search.
//!
//! Places are loaded from CSV into a [`SpatialIndex`]; [`PoiDirectory`]
//! holds the live index and swaps it wholesale when a new file is ingested.

mod index;
mod ingest;
mod point;

use std::fs::File;
use std::path::Path;
use std::sync::Arc;

use parking_lot::RwLock;
use thiserror::Error;

pub use index::{Category, Nearby, NearbyQuery, Poi, SpatialIndex, DEFAULT_CELL_DEG};
pub use ingest::{ingest_csv, write_csv, IngestReport, RejectedRow, CSV_HEADER};
pub use point::{haversine, GeoPoint, EARTH_RADIUS_M};

#[derive(Debug, Error)]
pub enum GeoError {
    #[error("latitude {0} outside [-90, 90]")]
    LatitudeOutOfRange(f64),
    #[error("longitude {0} is not finite")]
    LongitudeNotFinite(f64),
    #[error("malformed coordinates {0:?}")]
    Malformed(String),
    #[error("unknown category {0:?} (expected hospital, police or fire)")]
    UnknownCategory(String),
    #[error("duplicate place id {0:?}")]
    DuplicateId(String),
    #[error("cell size {0} does not tile the globe")]
    BadCellSize(f64),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("no places have been loaded")]
    EmptyIndex,
    #[error("unreadable places file: {0}")]
    UnreadableFile(String),
}

/// Shared, atomically replaceable index.
pub struct PoiDirectory {
    cell_deg: f64,
    current: RwLock<Arc<SpatialIndex>>,
}

impl PoiDirectory {
    pub fn new(cell_deg: f64) -> Result<Self, GeoError> {
        Ok(Self {
            cell_deg,
            current: RwLock::new(Arc::new(SpatialIndex::new(cell_deg)?)),
        })
    }

    /// The index in effect right now. Queries keep working on it even if a
    /// re-ingestion swaps in a new one meanwhile.
    pub fn index(&self) -> Arc<SpatialIndex> {
        self.current.read().clone()
    }

    /// Builds a fresh index from `reader` and swaps it in.
    pub fn ingest<R: std::io::Read>(&self, reader: R) -> Result<IngestReport, GeoError> {
        let mut index = SpatialIndex::new(self.cell_deg)?;
        let report = ingest_csv(&mut index, reader)?;
        *self.current.write() = Arc::new(index);
        Ok(report)
    }

    pub fn ingest_file(&self, path: &Path) -> Result<IngestReport, GeoError> {
        let file = File::open(path)
            .map_err(|e| GeoError::UnreadableFile(format!("{}: {e}", path.display())))?;
        self.ingest(file)
    }

    pub fn nearby(&self, query: &NearbyQuery) -> Result<Vec<Nearby>, GeoError> {
        self.index().nearby(query)
    }
}

impl Default for PoiDirectory {
    fn default() -> Self {
        Self::new(DEFAULT_CELL_DEG).expect("default cell size is valid")
    }
}
