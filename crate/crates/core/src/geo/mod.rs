//! Spherical geodesy, Web-Mercator quadkey tiles and the hexagonal cell grid.

mod hexgrid;
mod tile;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use hexgrid::{GridConfig, HexGrid, ReferenceGrid, DEFAULT_CELL_AREA_KM2};
pub use tile::{quadkey_to_tile, tile_bounds, tile_children, tile_of, tile_to_quadkey, TileBounds, TileXYZ, MERCATOR_MAX_LAT};

pub const EARTH_RADIUS_KM: f64 = 6371.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeoError {
    #[error("empty quadkey")]
    EmptyQuadkey,
    #[error("invalid quadkey digit {digit:?} at position {position}")]
    InvalidDigit { position: usize, digit: char },
    #[error("zoom {0} outside 1..=30")]
    InvalidZoom(u32),
    #[error("tile ({x}, {y}) out of range at zoom {z}")]
    TileOutOfRange { x: u32, y: u32, z: u32 },
    #[error("latitude {0} outside [-90, 90]")]
    InvalidLatitude(f64),
    #[error("longitude {0} is not finite")]
    InvalidLongitude(f64),
    #[error("unknown cell {0}")]
    UnknownCell(CellId),
    #[error("invalid cell id {0:?}")]
    InvalidCellHex(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
}

/// A point on the sphere. Longitude is kept in `[-180, 180)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        if !(-90.0..=90.0).contains(&lat) {
            return Err(GeoError::InvalidLatitude(lat));
        }
        if !lon.is_finite() {
            return Err(GeoError::InvalidLongitude(lon));
        }
        Ok(Self { lat, lon: normalize_lon(lon) })
    }
}

impl fmt::Display for GeoPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.6}, {:.6})", self.lat, self.lon)
    }
}

/// Wraps a longitude into `[-180, 180)`.
pub fn normalize_lon(lon: f64) -> f64 {
    let l = (lon + 180.0).rem_euclid(360.0) - 180.0;
    // rem_euclid can return exactly 360.0 for tiny negative inputs.
    if l >= 180.0 {
        l - 360.0
    } else {
        l
    }
}

/// Great-circle distance on a sphere of radius 6371 km.
pub fn haversine_km(a: GeoPoint, b: GeoPoint) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Opaque 64-bit cell identifier. Written as 16 lowercase hex digits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellId(pub u64);

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl FromStr for CellId {
    type Err = GeoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        let t = t.strip_prefix("0x").unwrap_or(t);
        if t.is_empty() || t.len() > 16 {
            return Err(GeoError::InvalidCellHex(s.to_string()));
        }
        u64::from_str_radix(t, 16)
            .map(CellId)
            .map_err(|_| GeoError::InvalidCellHex(s.to_string()))
    }
}

impl Serialize for CellId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CellId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

// Free-function forms over a grid configuration.

pub fn cell_of(p: GeoPoint, g: &GridConfig) -> CellId {
    ReferenceGrid::new(*g).expect("grid config validated at construction").cell_of(p)
}

pub fn cell_centroid(c: CellId, g: &GridConfig) -> Result<GeoPoint, GeoError> {
    ReferenceGrid::new(*g)?.cell_centroid(c)
}

pub fn cells_within_radius(p: GeoPoint, r_km: f64, g: &GridConfig) -> std::collections::BTreeSet<CellId> {
    ReferenceGrid::new(*g).expect("grid config validated at construction").cells_within_radius(p, r_km)
}
