#![allow(dead_code)]

use std::collections::BTreeSet;

use nbm_core::geo::{haversine_km, CellId, GeoPoint, HexGrid, ReferenceGrid, EARTH_RADIUS_KM};

/// Decodes a quadkey by reading it as a base-4 number and splitting each
/// digit into its x and y bits arithmetically.
pub fn quadkey_oracle(qk: &str) -> (u32, u32, u32) {
    let z = qk.len() as u32;
    let (mut x, mut y) = (0u32, 0u32);
    for (k, ch) in qk.chars().enumerate() {
        let d = ch.to_digit(4).unwrap();
        let weight = 2u32.pow(z - 1 - k as u32);
        x += (d % 2) * weight;
        y += (d / 2) * weight;
    }
    (x, y, z)
}

/// Every cell in a latitude/longitude box around `p`, found by dense point
/// sampling, then filtered by the radius rule.
pub fn radius_oracle(grid: &ReferenceGrid, p: GeoPoint, r_km: f64) -> BTreeSet<CellId> {
    let cfg = grid.config();
    let e = cfg.edge_km;
    let cos0 = cfg.origin.lat.to_radians().cos();
    let pad = r_km + 4.0 * e / cos0;
    let dlat = (pad / EARTH_RADIUS_KM).to_degrees();
    let cos_min = (p.lat.abs() + dlat).to_radians().cos();
    let dlon = 1.05 * (pad / (EARTH_RADIUS_KM * cos_min)).to_degrees();
    // Half an edge in the plane: every hexagon in the box holds a sample.
    let step_lat = (0.5 * e / EARTH_RADIUS_KM).to_degrees();
    let step_lon = (0.5 * e / (EARTH_RADIUS_KM * cos0)).to_degrees();

    let mut seen = BTreeSet::new();
    let n_lat = (2.0 * dlat / step_lat).ceil() as i64;
    let n_lon = (2.0 * dlon / step_lon).ceil() as i64;
    for i in 0..=n_lat {
        for j in 0..=n_lon {
            let lat = p.lat - dlat + i as f64 * step_lat;
            let lon = p.lon - dlon + j as f64 * step_lon;
            if let Ok(q) = GeoPoint::new(lat, lon) {
                seen.insert(grid.cell_of(q));
            }
        }
    }
    seen.into_iter()
        .filter(|&c| {
            let centroid = grid.cell_centroid(c).unwrap();
            haversine_km(p, centroid) <= r_km + grid.cell_reach_km(c).unwrap()
        })
        .collect()
}
