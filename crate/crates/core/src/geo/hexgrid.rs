//! Reference hexagonal grid: flat-top hexagons on an equirectangular plane
//! anchored at the grid origin. Cell ids pack the axial coordinates together
//! with a fingerprint of the grid configuration so ids from another grid are
//! rejected instead of silently misread.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{haversine_km, normalize_lon, CellId, GeoError, GeoPoint, EARTH_RADIUS_KM};

/// Mean cell area the default edge length is sized to.
pub const DEFAULT_CELL_AREA_KM2: f64 = 0.5;

const SQRT3: f64 = 1.732_050_807_568_877_2;
const TAG: u64 = 0b1000;
const AXIAL_BITS: u32 = 26;
const AXIAL_BIAS: i64 = 1 << (AXIAL_BITS - 1);
const AXIAL_MASK: u64 = (1 << AXIAL_BITS) - 1;
// Relative slack on a cell's reach; covers the curvature the planar
// hexagon ignores.
const REACH_SLACK: f64 = 1.001;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub edge_km: f64,
    pub origin: GeoPoint,
}

impl GridConfig {
    /// Edge length of a regular hexagon with the given area.
    pub fn edge_for_area(area_km2: f64) -> f64 {
        (area_km2 / (1.5 * SQRT3)).sqrt()
    }

    pub fn with_origin(origin: GeoPoint) -> Self {
        Self { edge_km: Self::edge_for_area(DEFAULT_CELL_AREA_KM2), origin }
    }

    pub fn cell_area_km2(&self) -> f64 {
        1.5 * SQRT3 * self.edge_km * self.edge_km
    }
}

impl Default for GridConfig {
    fn default() -> Self {
        Self::with_origin(GeoPoint { lat: 39.5, lon: -98.35 })
    }
}

/// Cell-grid interface. Everything downstream treats `CellId` as opaque and
/// talks to the grid only through this trait.
pub trait HexGrid: Send + Sync {
    fn cell_of(&self, p: GeoPoint) -> CellId;

    fn cell_centroid(&self, c: CellId) -> Result<GeoPoint, GeoError>;

    /// Polygon vertices, counter-clockwise, not closed.
    fn cell_boundary(&self, c: CellId) -> Result<Vec<GeoPoint>, GeoError>;

    /// Upper bound on the distance from the centroid to any point of the cell.
    fn cell_reach_km(&self, c: CellId) -> Result<f64, GeoError>;

    /// Superset of the cells `cells_within_radius` may return.
    fn radius_candidates(&self, p: GeoPoint, r_km: f64) -> Vec<CellId>;

    /// Cells sharing positive area with a latitude/longitude box.
    fn cells_overlapping_box(&self, min: GeoPoint, max: GeoPoint) -> Vec<CellId>;

    /// Cells whose centroid is within `r_km` plus the cell's own reach of `p`,
    /// so any cell containing a point within `r_km` is included.
    fn cells_within_radius(&self, p: GeoPoint, r_km: f64) -> BTreeSet<CellId> {
        self.cells_within_radius_where(p, r_km, &mut |_| true)
    }

    /// As `cells_within_radius`, restricted to cells accepted by `keep`. The
    /// predicate runs first, so an inexpensive membership test prunes the
    /// distance work.
    fn cells_within_radius_where(
        &self,
        p: GeoPoint,
        r_km: f64,
        keep: &mut dyn FnMut(CellId) -> bool,
    ) -> BTreeSet<CellId> {
        let r_km = r_km.max(0.0);
        let mut out = BTreeSet::new();
        for c in self.radius_candidates(p, r_km) {
            if !keep(c) {
                continue;
            }
            let Ok(centroid) = self.cell_centroid(c) else { continue };
            let d = haversine_km(p, centroid);
            if d <= r_km || self.cell_reach_km(c).is_ok_and(|reach| d <= r_km + reach) {
                out.insert(c);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceGrid {
    cfg: GridConfig,
    cos_lat0: f64,
    fingerprint: u64,
}

impl ReferenceGrid {
    pub fn new(cfg: GridConfig) -> Result<Self, GeoError> {
        if !(cfg.edge_km.is_finite() && cfg.edge_km >= 0.001) {
            return Err(GeoError::InvalidGrid(format!("edge_km {} must be >= 0.001", cfg.edge_km)));
        }
        if !(cfg.origin.lat.abs() <= 80.0) {
            return Err(GeoError::InvalidGrid(format!("origin latitude {} beyond +/-80", cfg.origin.lat)));
        }
        let origin = GeoPoint::new(cfg.origin.lat, cfg.origin.lon)?;
        let cfg = GridConfig { origin, ..cfg };
        Ok(Self { cfg, cos_lat0: origin.lat.to_radians().cos(), fingerprint: fingerprint(&cfg) })
    }

    pub fn config(&self) -> &GridConfig {
        &self.cfg
    }

    fn edge(&self) -> f64 {
        self.cfg.edge_km
    }

    fn project(&self, p: GeoPoint) -> (f64, f64) {
        let dlon = normalize_lon(p.lon - self.cfg.origin.lon);
        (
            EARTH_RADIUS_KM * dlon.to_radians() * self.cos_lat0,
            EARTH_RADIUS_KM * (p.lat - self.cfg.origin.lat).to_radians(),
        )
    }

    /// `None` outside the projected sphere (past a pole or the seam opposite
    /// the origin).
    fn unproject(&self, x: f64, y: f64) -> Option<GeoPoint> {
        let lat = self.cfg.origin.lat + (y / EARTH_RADIUS_KM).to_degrees();
        let dlon = (x / (EARTH_RADIUS_KM * self.cos_lat0)).to_degrees();
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..180.0).contains(&dlon) {
            return None;
        }
        Some(GeoPoint { lat, lon: normalize_lon(self.cfg.origin.lon + dlon) })
    }

    fn unproject_clamped(&self, x: f64, y: f64) -> GeoPoint {
        let lat = (self.cfg.origin.lat + (y / EARTH_RADIUS_KM).to_degrees()).clamp(-90.0, 90.0);
        let dlon = (x / (EARTH_RADIUS_KM * self.cos_lat0)).to_degrees();
        GeoPoint { lat, lon: normalize_lon(self.cfg.origin.lon + dlon) }
    }

    fn center(&self, q: i64, r: i64) -> (f64, f64) {
        let e = self.edge();
        (1.5 * e * q as f64, SQRT3 * e * (r as f64 + q as f64 / 2.0))
    }

    fn axial_of(&self, x: f64, y: f64) -> (i64, i64) {
        let e = self.edge();
        let qf = (2.0 / 3.0) * x / e;
        let rf = (-x / 3.0 + SQRT3 / 3.0 * y) / e;
        cube_round(qf, rf)
    }

    fn encode(&self, q: i64, r: i64) -> CellId {
        let qb = (q + AXIAL_BIAS) as u64 & AXIAL_MASK;
        let rb = (r + AXIAL_BIAS) as u64 & AXIAL_MASK;
        CellId((TAG << 60) | ((self.fingerprint & 0xff) << 52) | (qb << AXIAL_BITS) | rb)
    }

    fn decode(&self, c: CellId) -> Result<(i64, i64), GeoError> {
        if c.0 >> 60 != TAG || (c.0 >> 52) & 0xff != self.fingerprint & 0xff {
            return Err(GeoError::UnknownCell(c));
        }
        let q = ((c.0 >> AXIAL_BITS) & AXIAL_MASK) as i64 - AXIAL_BIAS;
        let r = (c.0 & AXIAL_MASK) as i64 - AXIAL_BIAS;
        Ok((q, r))
    }

    fn vertices(&self, q: i64, r: i64) -> [(f64, f64); 6] {
        let (cx, cy) = self.center(q, r);
        let e = self.edge();
        std::array::from_fn(|k| {
            let a = (60.0 * k as f64).to_radians();
            (cx + e * a.cos(), cy + e * a.sin())
        })
    }

    /// Axial cells whose centroid may fall in the planar rectangle, padded by
    /// one ring.
    fn cells_in_rect(&self, x0: f64, x1: f64, y0: f64, y1: f64) -> Vec<(i64, i64)> {
        let e = self.edge();
        let q0 = (x0 / (1.5 * e)).floor() as i64 - 1;
        let q1 = (x1 / (1.5 * e)).ceil() as i64 + 1;
        let mut out = Vec::new();
        for q in q0..=q1 {
            let r0 = (y0 / (SQRT3 * e) - q as f64 / 2.0).floor() as i64 - 1;
            let r1 = (y1 / (SQRT3 * e) - q as f64 / 2.0).ceil() as i64 + 1;
            out.extend((r0..=r1).map(|r| (q, r)));
        }
        out
    }

    fn x_span_full(&self) -> (f64, f64) {
        let half = EARTH_RADIUS_KM * std::f64::consts::PI * self.cos_lat0;
        (-half, half)
    }
}

fn cube_round(qf: f64, rf: f64) -> (i64, i64) {
    let sf = -qf - rf;
    let (mut q, mut r, s) = (qf.round(), rf.round(), sf.round());
    let (dq, dr, ds) = ((q - qf).abs(), (r - rf).abs(), (s - sf).abs());
    if dq > dr && dq > ds {
        q = -r - s;
    } else if dr > ds {
        r = -q - s;
    }
    (q as i64, r as i64)
}

fn fingerprint(cfg: &GridConfig) -> u64 {
    // FNV-1a over the exact bit patterns; stable across platforms and builds.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in [cfg.edge_km, cfg.origin.lat, cfg.origin.lon] {
        for b in v.to_bits().to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h ^ (h >> 8) ^ (h >> 16) ^ (h >> 24) ^ (h >> 32) ^ (h >> 40) ^ (h >> 48) ^ (h >> 56)
}

impl HexGrid for ReferenceGrid {
    fn cell_of(&self, p: GeoPoint) -> CellId {
        let (x, y) = self.project(p);
        let (q, r) = self.axial_of(x, y);
        self.encode(q, r)
    }

    fn cell_centroid(&self, c: CellId) -> Result<GeoPoint, GeoError> {
        let (q, r) = self.decode(c)?;
        let (x, y) = self.center(q, r);
        self.unproject(x, y).ok_or(GeoError::UnknownCell(c))
    }

    fn cell_boundary(&self, c: CellId) -> Result<Vec<GeoPoint>, GeoError> {
        self.cell_centroid(c)?;
        let (q, r) = self.decode(c)?;
        Ok(self.vertices(q, r).iter().map(|&(x, y)| self.unproject_clamped(x, y)).collect())
    }

    fn cell_reach_km(&self, c: CellId) -> Result<f64, GeoError> {
        let centroid = self.cell_centroid(c)?;
        let far = self
            .cell_boundary(c)?
            .into_iter()
            .map(|v| haversine_km(centroid, v))
            .fold(0.0, f64::max);
        Ok(far * REACH_SLACK)
    }

    fn radius_candidates(&self, p: GeoPoint, r_km: f64) -> Vec<CellId> {
        // No cell reaches farther than this from its centroid.
        let reach_bound = 1.1 * self.edge() / self.cos_lat0;
        let d = r_km.max(0.0) + reach_bound;
        let dlat = (d / EARTH_RADIUS_KM).to_degrees();
        let lat_lo = (p.lat - dlat).max(-90.0);
        let lat_hi = (p.lat + dlat).min(90.0);

        // sin(d/2R)^2 >= cos(lat1) cos(lat2) sin(dlon/2)^2 bounds the longitude spread.
        let cos_min = lat_lo.to_radians().cos().min(lat_hi.to_radians().cos()).max(0.0);
        let ratio = (d / (2.0 * EARTH_RADIUS_KM)).sin() / cos_min;
        let (x0, x1) = if !(ratio < 1.0) {
            self.x_span_full()
        } else {
            let dlon = (2.0 * ratio.asin()).to_degrees();
            let centre = normalize_lon(p.lon - self.cfg.origin.lon);
            if centre - dlon < -180.0 || centre + dlon >= 180.0 {
                self.x_span_full()
            } else {
                let s = EARTH_RADIUS_KM * self.cos_lat0;
                (s * (centre - dlon).to_radians(), s * (centre + dlon).to_radians())
            }
        };
        let y0 = EARTH_RADIUS_KM * (lat_lo - self.cfg.origin.lat).to_radians();
        let y1 = EARTH_RADIUS_KM * (lat_hi - self.cfg.origin.lat).to_radians();
        self.cells_in_rect(x0, x1, y0, y1)
            .into_iter()
            .map(|(q, r)| self.encode(q, r))
            .collect()
    }

    fn cells_overlapping_box(&self, min: GeoPoint, max: GeoPoint) -> Vec<CellId> {
        let (x0, y0) = self.project(min);
        let x1 = x0 + EARTH_RADIUS_KM * (max.lon - min.lon).to_radians() * self.cos_lat0;
        let y1 = EARTH_RADIUS_KM * (max.lat - self.cfg.origin.lat).to_radians();
        let e = self.edge();
        let rect = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)];
        self.cells_in_rect(x0 - e, x1 + e, y0 - e, y1 + e)
            .into_iter()
            .filter(|&(q, r)| {
                let (cx, cy) = self.center(q, r);
                self.unproject(cx, cy).is_some() && polygons_overlap(&self.vertices(q, r), &rect)
            })
            .map(|(q, r)| self.encode(q, r))
            .collect()
    }
}

/// Separating-axis test for two convex polygons; touching boundaries do not
/// count as overlap.
fn polygons_overlap(a: &[(f64, f64)], b: &[(f64, f64)]) -> bool {
    const EPS: f64 = 1e-9;
    let axes = edge_normals(a).chain(edge_normals(b));
    for (nx, ny) in axes {
        let (amin, amax) = project_onto(a, nx, ny);
        let (bmin, bmax) = project_onto(b, nx, ny);
        if amax.min(bmax) - amin.max(bmin) <= EPS {
            return false;
        }
    }
    true
}

fn edge_normals(poly: &[(f64, f64)]) -> impl Iterator<Item = (f64, f64)> + '_ {
    (0..poly.len()).map(move |i| {
        let (x0, y0) = poly[i];
        let (x1, y1) = poly[(i + 1) % poly.len()];
        let (nx, ny) = (y0 - y1, x1 - x0);
        let len = nx.hypot(ny);
        (nx / len, ny / len)
    })
}

fn project_onto(poly: &[(f64, f64)], nx: f64, ny: f64) -> (f64, f64) {
    poly.iter()
        .map(|&(x, y)| x * nx + y * ny)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}
