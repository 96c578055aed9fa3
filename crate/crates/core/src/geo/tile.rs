//! Web-Mercator tile pyramid addressed by quadkeys.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{GeoError, GeoPoint};

pub const MERCATOR_MAX_LAT: f64 = 85.05113;
const MAX_ZOOM: u32 = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TileXYZ {
    pub x: u32,
    pub y: u32,
    pub z: u32,
}

impl TileXYZ {
    pub fn new(x: u32, y: u32, z: u32) -> Result<Self, GeoError> {
        if !(1..=MAX_ZOOM).contains(&z) {
            return Err(GeoError::InvalidZoom(z));
        }
        let n = 1u64 << z;
        if u64::from(x) >= n || u64::from(y) >= n {
            return Err(GeoError::TileOutOfRange { x, y, z });
        }
        Ok(Self { x, y, z })
    }
}

/// Latitude/longitude box. `max.lon` may equal 180 for the easternmost column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TileBounds {
    pub min: GeoPoint,
    pub max: GeoPoint,
}

impl TileBounds {
    pub fn contains(&self, p: GeoPoint) -> bool {
        (self.min.lat..=self.max.lat).contains(&p.lat) && (self.min.lon..=self.max.lon).contains(&p.lon)
    }
}

pub fn quadkey_to_tile(quadkey: &str) -> Result<TileXYZ, GeoError> {
    if quadkey.is_empty() {
        return Err(GeoError::EmptyQuadkey);
    }
    let z = quadkey.chars().count() as u32;
    if z > MAX_ZOOM {
        return Err(GeoError::InvalidZoom(z));
    }
    let (mut x, mut y) = (0u32, 0u32);
    for (position, digit) in quadkey.chars().enumerate() {
        let d = match digit {
            '0'..='3' => digit as u32 - '0' as u32,
            _ => return Err(GeoError::InvalidDigit { position, digit }),
        };
        x = (x << 1) | (d & 1);
        y = (y << 1) | (d >> 1);
    }
    Ok(TileXYZ { x, y, z })
}

pub fn tile_to_quadkey(tile: TileXYZ) -> String {
    (1..=tile.z)
        .rev()
        .map(|bit| {
            let mask = 1 << (bit - 1);
            let mut d = 0;
            if tile.x & mask != 0 {
                d += 1;
            }
            if tile.y & mask != 0 {
                d += 2;
            }
            char::from(b'0' + d)
        })
        .collect()
}

fn lon_of(x: f64, n: f64) -> f64 {
    x / n * 360.0 - 180.0
}

fn lat_of(y: f64, n: f64) -> f64 {
    let lat = (PI * (1.0 - 2.0 * y / n)).sinh().atan().to_degrees();
    lat.clamp(-MERCATOR_MAX_LAT, MERCATOR_MAX_LAT)
}

pub fn tile_bounds(tile: TileXYZ) -> Result<TileBounds, GeoError> {
    let t = TileXYZ::new(tile.x, tile.y, tile.z)?;
    let n = (1u64 << t.z) as f64;
    let (x, y) = (f64::from(t.x), f64::from(t.y));
    Ok(TileBounds {
        min: GeoPoint { lat: lat_of(y + 1.0, n), lon: lon_of(x, n) },
        max: GeoPoint { lat: lat_of(y, n), lon: lon_of(x + 1.0, n) },
    })
}

/// The four children in quadkey-digit order.
pub fn tile_children(tile: TileXYZ) -> Result<[TileXYZ; 4], GeoError> {
    let t = TileXYZ::new(tile.x, tile.y, tile.z)?;
    if t.z == MAX_ZOOM {
        return Err(GeoError::InvalidZoom(t.z + 1));
    }
    let (x, y, z) = (t.x * 2, t.y * 2, t.z + 1);
    Ok([
        TileXYZ { x, y, z },
        TileXYZ { x: x + 1, y, z },
        TileXYZ { x, y: y + 1, z },
        TileXYZ { x: x + 1, y: y + 1, z },
    ])
}

/// Tile containing `p` at zoom `z` (forward Mercator projection).
pub fn tile_of(p: GeoPoint, z: u32) -> Result<TileXYZ, GeoError> {
    if !(1..=MAX_ZOOM).contains(&z) {
        return Err(GeoError::InvalidZoom(z));
    }
    let n = (1u64 << z) as f64;
    let lat = p.lat.clamp(-MERCATOR_MAX_LAT, MERCATOR_MAX_LAT).to_radians();
    let fx = (p.lon + 180.0) / 360.0 * n;
    let fy = (1.0 - (lat.tan() + 1.0 / lat.cos()).ln() / PI) / 2.0 * n;
    let clampi = |v: f64| v.floor().clamp(0.0, n - 1.0) as u32;
    Ok(TileXYZ { x: clampi(fx), y: clampi(fy), z })
}
