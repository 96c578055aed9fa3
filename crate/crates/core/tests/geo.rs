mod common;

use nbm_core::geo::{
    cell_centroid, cell_of, haversine_km, quadkey_to_tile, tile_bounds, tile_children, tile_of, tile_to_quadkey,
    GeoPoint, GridConfig, HexGrid, ReferenceGrid, TileXYZ, MERCATOR_MAX_LAT,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn grid() -> ReferenceGrid {
    ReferenceGrid::new(GridConfig::default()).unwrap()
}

fn near_origin() -> impl Strategy<Value = GeoPoint> {
    (34.0..45.0f64, -105.0..-92.0f64).prop_map(|(lat, lon)| GeoPoint::new(lat, lon).unwrap())
}

#[test]
fn quadkeys_are_a_bijection_up_to_zoom_six() {
    let mut count = 0;
    for z in 1..=6u32 {
        for x in 0..(1u32 << z) {
            for y in 0..(1u32 << z) {
                let t = TileXYZ::new(x, y, z).unwrap();
                let qk = tile_to_quadkey(t);
                assert_eq!(common::quadkey_oracle(&qk), (x, y, z));
                assert_eq!(quadkey_to_tile(&qk).unwrap(), t);
                count += 1;
            }
        }
    }
    assert_eq!(count, 4 + 16 + 64 + 256 + 1024 + 4096);
}

#[test]
fn zoom_three_matches_oracle() {
    for n in 0..64u32 {
        let qk: String = (0..3).rev().map(|k| char::from(b'0' + ((n >> (2 * k)) & 3) as u8)).collect();
        let t = quadkey_to_tile(&qk).unwrap();
        assert_eq!((t.x, t.y, t.z), common::quadkey_oracle(&qk));
    }
    assert_eq!(common::quadkey_oracle("213"), (3, 5, 3));
}

#[test]
fn children_partition_their_parent() {
    for z in 1..=5u32 {
        for x in 0..(1u32 << z) {
            for y in 0..(1u32 << z) {
                let t = TileXYZ::new(x, y, z).unwrap();
                let pb = tile_bounds(t).unwrap();
                let kids = tile_children(t).unwrap();
                let kb: Vec<_> = kids.iter().map(|&k| tile_bounds(k).unwrap()).collect();
                // 0 | 1 over 2 | 3; shared edges computed from the same expression.
                assert_eq!(kb[0].max.lon, kb[1].min.lon);
                assert_eq!(kb[0].min.lat, kb[2].max.lat);
                assert_eq!((kb[0].min.lon, kb[0].max.lat), (pb.min.lon, pb.max.lat));
                assert_eq!((kb[3].max.lon, kb[3].min.lat), (pb.max.lon, pb.min.lat));
                assert_eq!(tile_to_quadkey(kids[2]), format!("{}2", tile_to_quadkey(t)));
            }
        }
    }
}

#[test]
fn origin_tile_shrinks_monotonically() {
    let mut prev = tile_bounds(TileXYZ::new(0, 0, 1).unwrap()).unwrap();
    for z in 2..=20 {
        let b = tile_bounds(TileXYZ::new(0, 0, z).unwrap()).unwrap();
        assert!(b.min.lon == prev.min.lon && b.max.lon < prev.max.lon);
        assert!(b.max.lat <= MERCATOR_MAX_LAT && b.min.lat > prev.min.lat);
        prev = b;
    }
}

#[test]
fn nearby_points_share_a_cell() {
    let g = grid();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let e = g.config().edge_km;
    let trials = 10_000;
    let mut same = 0;
    for _ in 0..trials {
        let p = GeoPoint::new(rng.random_range(35.0..44.0), rng.random_range(-104.0..-93.0)).unwrap();
        let bearing: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let d = 0.009 * e;
        let dlat = (d * bearing.cos() / 6371.0).to_degrees();
        let dlon = (d * bearing.sin() / (6371.0 * p.lat.to_radians().cos())).to_degrees();
        let q = GeoPoint::new(p.lat + dlat, p.lon + dlon).unwrap();
        assert!(haversine_km(p, q) < 0.01 * e);
        if g.cell_of(p) == g.cell_of(q) {
            same += 1;
        }
    }
    assert!(same as f64 >= 0.99 * trials as f64, "{same}/{trials}");
}

#[test]
fn ten_thousand_cells_round_trip() {
    let g = grid();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10_000 {
        let p = GeoPoint::new(rng.random_range(-60.0..70.0), rng.random_range(-180.0..180.0)).unwrap();
        let c = g.cell_of(p);
        let centroid = g.cell_centroid(c).unwrap();
        assert_eq!(g.cell_of(centroid), c);
    }
}

#[test]
fn radius_query_matches_brute_force() {
    let g = grid();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..30 {
        let p = GeoPoint::new(rng.random_range(30.0..48.0), rng.random_range(-110.0..-88.0)).unwrap();
        let r = if case == 0 { 5.0 } else { rng.random_range(0.0..8.0) };
        assert_eq!(g.cells_within_radius(p, r), common::radius_oracle(&g, p, r), "case {case}");
    }
}

#[test]
fn free_functions_agree_with_grid() {
    let cfg = GridConfig::default();
    let p = GeoPoint::new(40.1, -97.3).unwrap();
    let c = cell_of(p, &cfg);
    assert_eq!(cell_of(cell_centroid(c, &cfg).unwrap(), &cfg), c);
}

#[test]
fn tile_at_a_cell_centre_has_that_cell_in_its_footprint() {
    let g = grid();
    let p = GeoPoint::new(39.9, -98.8).unwrap();
    let c = g.cell_of(p);
    let t = tile_of(g.cell_centroid(c).unwrap(), 17).unwrap();
    let b = tile_bounds(t).unwrap();
    assert_eq!(g.cells_overlapping_box(b.min, b.max), vec![c]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn every_point_maps_into_a_cell_around_it(p in near_origin()) {
        let g = grid();
        let c = g.cell_of(p);
        let centroid = g.cell_centroid(c).unwrap();
        prop_assert!(haversine_km(p, centroid) <= g.cell_reach_km(c).unwrap());
        prop_assert!(haversine_km(p, centroid) <= 1.01 * g.config().edge_km / g.config().origin.lat.to_radians().cos());
    }

    #[test]
    fn radius_query_is_sound(p in near_origin(), r in 0.0..15.0f64, bearing in 0.0..std::f64::consts::TAU, frac in 0.0..1.0f64) {
        let g = grid();
        let d = r * frac;
        let dlat = (d * bearing.cos() / 6371.0).to_degrees();
        let dlon = (d * bearing.sin() / (6371.0 * p.lat.to_radians().cos())).to_degrees();
        let q = GeoPoint::new(p.lat + dlat, p.lon + dlon).unwrap();
        prop_assume!(haversine_km(p, q) <= r);
        prop_assert!(g.cells_within_radius(p, r).contains(&g.cell_of(q)));
    }

    #[test]
    fn radius_query_is_monotone(p in near_origin(), r1 in 0.0..6.0f64, extra in 0.0..4.0f64) {
        let g = grid();
        let small = g.cells_within_radius(p, r1);
        let large = g.cells_within_radius(p, r1 + extra);
        prop_assert!(small.is_subset(&large));
    }

    #[test]
    fn haversine_is_symmetric(a in near_origin(), b in near_origin()) {
        prop_assert_eq!(haversine_km(a, b), haversine_km(b, a));
        prop_assert!(haversine_km(a, b) >= 0.0);
    }

    #[test]
    fn forward_and_inverse_mercator_agree(lat in -85.0..85.0f64, lon in -180.0..180.0f64, z in 1u32..20) {
        let p = GeoPoint::new(lat, lon).unwrap();
        let b = tile_bounds(tile_of(p, z).unwrap()).unwrap();
        prop_assert!(b.min.lat - 1e-9 <= p.lat && p.lat <= b.max.lat + 1e-9);
        prop_assert!(b.min.lon - 1e-9 <= p.lon && p.lon <= b.max.lon + 1e-9);
    }
}
