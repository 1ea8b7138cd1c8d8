use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::point::{haversine, GeoPoint, EARTH_RADIUS_M};
use super::GeoError;

pub const DEFAULT_CELL_DEG: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Hospital,
    Police,
    Fire,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Hospital, Category::Police, Category::Fire];

    pub fn as_str(&self) -> &'static str {
        match self {
            Category::Hospital => "hospital",
            Category::Police => "police",
            Category::Fire => "fire",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = GeoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "hospital" => Ok(Category::Hospital),
            "police" => Ok(Category::Police),
            "fire" => Ok(Category::Fire),
            other => Err(GeoError::UnknownCategory(other.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Poi {
    pub id: String,
    pub name: String,
    pub category: Category,
    pub location: GeoPoint,
}

/// A query hit: the place plus its distance from the query center.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Nearby {
    pub poi: Poi,
    pub distance_m: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct NearbyQuery {
    pub center: GeoPoint,
    pub category: Option<Category>,
    pub k: usize,
    pub radius_m: f64,
}

type Cell = (i64, i64);

/// Uniform lat/lon grid of places.
///
/// Cell rows count up from the south pole and columns eastward from the
/// antimeridian, so a cell is a pure function of the location.
#[derive(Clone, Debug)]
pub struct SpatialIndex {
    cell_deg: f64,
    rows: i64,
    cols: i64,
    grid: HashMap<Cell, Vec<Poi>>,
    ids: HashSet<String>,
}

impl Default for SpatialIndex {
    fn default() -> Self {
        Self::new(DEFAULT_CELL_DEG).expect("default cell size is valid")
    }
}

impl SpatialIndex {
    /// `cell_deg` must divide 360 into a whole number of columns.
    pub fn new(cell_deg: f64) -> Result<Self, GeoError> {
        let cols = 360.0 / cell_deg;
        if !(cell_deg.is_finite() && cell_deg > 0.0 && cell_deg <= 180.0)
            || (cols - cols.round()).abs() > 1e-9
        {
            return Err(GeoError::BadCellSize(cell_deg));
        }
        let cols = cols.round() as i64;
        Ok(Self {
            cell_deg,
            rows: (cols / 2).max(1),
            cols,
            grid: HashMap::new(),
            ids: HashSet::new(),
        })
    }

    pub fn cell_deg(&self) -> f64 {
        self.cell_deg
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Populations of the non-empty cells.
    pub fn cell_populations(&self) -> impl Iterator<Item = usize> + '_ {
        self.grid.values().map(Vec::len)
    }

    pub fn pois(&self) -> impl Iterator<Item = &Poi> {
        self.grid.values().flatten()
    }

    pub fn cell_of(&self, p: GeoPoint) -> (i64, i64) {
        let row = (((p.lat() + 90.0) / self.cell_deg).floor() as i64).clamp(0, self.rows - 1);
        let lon = if p.lon() >= 180.0 { -180.0 } else { p.lon() };
        let col = (((lon + 180.0) / self.cell_deg).floor() as i64).clamp(0, self.cols - 1);
        (row, col)
    }

    pub fn insert(&mut self, poi: Poi) -> Result<(), GeoError> {
        if self.ids.contains(&poi.id) {
            return Err(GeoError::DuplicateId(poi.id));
        }
        self.ids.insert(poi.id.clone());
        let cell = self.cell_of(poi.location);
        self.grid.entry(cell).or_default().push(poi);
        Ok(())
    }

    /// Up to `k` places within `radius_m`, nearest first, ties by id.
    pub fn nearby(&self, query: &NearbyQuery) -> Result<Vec<Nearby>, GeoError> {
        if query.k == 0 {
            return Err(GeoError::InvalidQuery("k must be at least 1".into()));
        }
        if query.radius_m.is_nan() || query.radius_m <= 0.0 {
            return Err(GeoError::InvalidQuery("radius must be positive".into()));
        }
        if self.is_empty() {
            return Err(GeoError::EmptyIndex);
        }

        let center = query.center;
        let (crow, ccol) = self.cell_of(center);
        let mut hits: Vec<Nearby> = Vec::new();
        let mut visited: HashSet<Cell> = HashSet::new();

        let consider = |poi: &Poi, hits: &mut Vec<Nearby>| {
            if query.category.is_some_and(|c| c != poi.category) {
                return;
            }
            let d = haversine(center, poi.location);
            if d <= query.radius_m {
                hits.push(Nearby {
                    poi: poi.clone(),
                    distance_m: d,
                });
            }
        };

        let mut ring: i64 = 0;
        loop {
            // Once a ring has more cells than the grid has occupied ones,
            // scanning the rest directly is cheaper and gives the same set.
            if 8 * ring > self.grid.len() as i64 {
                for (cell, pois) in &self.grid {
                    if !visited.contains(cell) {
                        pois.iter().for_each(|p| consider(p, &mut hits));
                    }
                }
                break;
            }
            self.visit_ring(crow, ccol, ring, &mut visited, |p| consider(p, &mut hits));

            if self.covers_everything(crow, ccol, ring) {
                break;
            }
            let bound = self.unscanned_lower_bound(center, crow, ccol, ring);
            if bound > query.radius_m {
                break;
            }
            if hits.len() >= query.k {
                sort_hits(&mut hits);
                hits.truncate(query.k);
                if hits[query.k - 1].distance_m < bound {
                    break;
                }
            }
            ring += 1;
        }

        sort_hits(&mut hits);
        hits.truncate(query.k);
        Ok(hits)
    }

    fn covers_everything(&self, crow: i64, ccol: i64, ring: i64) -> bool {
        let _ = ccol;
        crow - ring <= 0 && crow + ring >= self.rows - 1 && 2 * ring + 1 >= self.cols
    }

    fn visit_ring<F: FnMut(&Poi)>(
        &self,
        crow: i64,
        ccol: i64,
        ring: i64,
        visited: &mut HashSet<Cell>,
        mut f: F,
    ) {
        let mut visit = |row: i64, col_offset: i64| {
            if row < 0 || row >= self.rows {
                return;
            }
            let col = (ccol + col_offset).rem_euclid(self.cols);
            if !visited.insert((row, col)) {
                return;
            }
            if let Some(pois) = self.grid.get(&(row, col)) {
                pois.iter().for_each(&mut f);
            }
        };
        if ring == 0 {
            visit(crow, 0);
            return;
        }
        let span = ring.min(self.cols);
        for off in -span..=span {
            visit(crow - ring, off);
            visit(crow + ring, off);
        }
        for row in (crow - ring + 1)..=(crow + ring - 1) {
            visit(row, -ring);
            visit(row, ring);
        }
    }

    /// Distance in meters below which no place outside the scanned
    /// `(2 ring + 1)^2` block of cells can lie.
    fn unscanned_lower_bound(&self, center: GeoPoint, crow: i64, ccol: i64, ring: i64) -> f64 {
        let cell = self.cell_deg;
        let mut bound_deg = f64::INFINITY;

        if crow - ring > 0 {
            let south_edge = (crow - ring) as f64 * cell - 90.0;
            bound_deg = bound_deg.min(center.lat() - south_edge);
        }
        if crow + ring < self.rows - 1 {
            let north_edge = (crow + ring + 1) as f64 * cell - 90.0;
            bound_deg = bound_deg.min(north_edge - center.lat());
        }
        let mut bound_m = EARTH_RADIUS_M * bound_deg.max(0.0).to_radians();

        if 2 * ring + 1 < self.cols {
            let lon = if center.lon() >= 180.0 {
                -180.0
            } else {
                center.lon()
            };
            let west_edge = (ccol - ring) as f64 * cell - 180.0;
            let east_edge = (ccol + ring + 1) as f64 * cell - 180.0;
            let gap = (lon - west_edge).min(east_edge - lon).clamp(0.0, 90.0);
            // Angular distance from the center to the meridian plane at `gap`.
            let s = (center.lat().to_radians().cos() * gap.to_radians().sin()).clamp(0.0, 1.0);
            bound_m = bound_m.min(EARTH_RADIUS_M * s.asin());
        }

        // Cell assignment and the bound both go through floating point.
        bound_m * (1.0 - 1e-9) - 1e-6
    }
}

pub(crate) fn sort_hits(hits: &mut [Nearby]) {
    hits.sort_by(|a, b| {
        a.distance_m
            .total_cmp(&b.distance_m)
            .then_with(|| a.poi.id.cmp(&b.poi.id))
    });
}
