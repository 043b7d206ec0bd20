//! Property tests for the geometric, encoding and linear-algebra invariants.

use nalgebra::DMatrix;
use proptest::prelude::*;

use streamkit::encoding::{decode, encode, EncodedCoreset};
use streamkit::geometry::{clustering_cost, dist_pow, CenterSet, Dataset, WeightedPoint};
use streamkit::io::{read_points, write_csv, write_sckz};
use streamkit::quadtree::{level_count, CrudeQuadTree};
use streamkit::subspace::{
    encode_rows, leverage_of, lewis_of, precondition, rank_of, EncodedRowSet, RealMatrix,
};

fn points(d: usize, grid: i64, max: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec((1..=grid).prop_map(|v| v as f64), d), 1..max)
}

fn weighted(d: usize, grid: i64, max: usize) -> impl Strategy<Value = Dataset> {
    prop::collection::vec((prop::collection::vec((1..=grid).prop_map(|v| v as f64), d), 1u32..50), 1..max).prop_map(
        move |v| {
            let pts = v.into_iter().map(|(p, w)| WeightedPoint::new(p, w as f64 / 4.0).unwrap()).collect();
            Dataset::from_points(d, grid as f64, pts).unwrap()
        },
    )
}

fn matrix(n: std::ops::Range<usize>, d: usize) -> impl Strategy<Value = DMatrix<f64>> {
    n.prop_flat_map(move |rows| {
        prop::collection::vec(-50i32..=50, rows * d)
            .prop_map(move |v| DMatrix::from_iterator(rows, d, v.into_iter().map(f64::from)))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2048))]

    #[test]
    fn generalized_triangle_inequality(
        x in prop::collection::vec(-1e3f64..1e3, 3),
        y in prop::collection::vec(-1e3f64..1e3, 3),
        w in prop::collection::vec(-1e3f64..1e3, 3),
        z in 1u32..=3,
    ) {
        let z = z as f64;
        let lhs = dist_pow(&x, &y, z);
        let rhs = 2f64.powf(z - 1.0) * (dist_pow(&x, &w, z) + dist_pow(&w, &y, z));
        prop_assert!(lhs <= rhs * (1.0 + 1e-12) + 1e-9);
    }

    #[test]
    fn weak_triangle_for_powers(x in 0.0f64..1e4, y in 0.0f64..1e4, eps in 0.01f64..=1.0, z in 1u32..=3) {
        let z = z as f64;
        let lhs = (x + y).powf(z);
        let rhs = (1.0 + eps) * x.powf(z) + (1.0 + 2.0 * z / eps).powf(z) * y.powf(z);
        prop_assert!(lhs <= rhs * (1.0 + 1e-12));
    }

    #[test]
    fn cost_monotone_under_superset(x in weighted(2, 100, 30), c in points(2, 100, 4), extra in points(2, 100, 3)) {
        let base = clustering_cost(&x, &CenterSet::new(c.clone()), 2.0).unwrap();
        let mut more = c;
        more.extend(extra);
        let sup = clustering_cost(&x, &CenterSet::new(more), 2.0).unwrap();
        prop_assert!(sup <= base * (1.0 + 1e-12));
    }

    #[test]
    fn doubling_weights_doubles_cost(x in weighted(3, 50, 20), c in points(3, 50, 3), z in 1u32..=3) {
        let centers = CenterSet::new(c);
        let a = clustering_cost(&x, &centers, z as f64).unwrap();
        let b = clustering_cost(&x.scaled(2.0), &centers, z as f64).unwrap();
        prop_assert!((b - 2.0 * a).abs() <= 1e-9 * a.max(1.0));
    }

    #[test]
    fn tree_distance_never_contracts(
        d in 1usize..=4,
        zeta in 2u64..=12,
        pow in 3u32..=14,
        seed in any::<u64>(),
    ) {
        let grid = 1i64 << pow;
        let levels = level_count(zeta, grid as f64);
        prop_assert!((zeta as f64).powi(levels as i32) >= grid as f64);
        let span = (zeta as f64).powi(levels as i32) as u64;
        let mut s = seed;
        let mut next = |m: u64| { s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); (s >> 33) % m };
        let shift = (0..d).map(|_| next(span) as i64).collect();
        let tree = CrudeQuadTree::with_shift(d, grid as f64, zeta, 10.0, shift);
        for _ in 0..20 {
            let x: Vec<f64> = (0..d).map(|_| (1 + next(grid as u64)) as f64).collect();
            let y: Vec<f64> = (0..d).map(|_| (1 + next(grid as u64)) as f64).collect();
            let e = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let t = tree.tree_dist(&x, &y);
            prop_assert!(e <= t * (1.0 + 1e-12));
            prop_assert_eq!(t, tree.tree_dist(&y, &x));
        }
    }

    #[test]
    fn offsets_round_within_ratio(x in weighted(3, 4096, 40), anchors in points(3, 4096, 4), e in 1u32..=3) {
        let eps_prime = 10f64.powi(-(e as i32));
        let centers = CenterSet::new(anchors);
        let enc = encode(&x, &centers, eps_prime).unwrap();
        let back = decode(&enc).unwrap();
        prop_assert_eq!(back.len(), x.len());
        for ((p, q), r) in x.points.iter().zip(&back.points).zip(&enc.records) {
            let anchor = &enc.anchors.centers[r.anchor as usize];
            for ((a, b), c) in p.point.iter().zip(&q.point).zip(anchor) {
                let (t, u) = (a - c, b - c);
                if t == 0.0 {
                    prop_assert_eq!(u, 0.0);
                } else {
                    let ratio = u / t;
                    prop_assert!(ratio >= 1.0 / (1.0 + eps_prime) - 1e-12 && ratio <= 1.0 + eps_prime + 1e-12);
                }
            }
            let wr = q.weight / p.weight;
            prop_assert!(wr >= 1.0 / (1.0 + eps_prime) - 1e-12 && wr <= 1.0 + eps_prime + 1e-12);
        }
    }

    #[test]
    fn encoding_is_idempotent_and_serializes(
        x in weighted(2, 1000, 30),
        anchors in points(2, 1000, 4),
        eps_prime in prop::sample::select(vec![0.2, 0.1, 0.01]),
    ) {
        let centers = CenterSet::new(anchors);
        let enc = encode(&x, &centers, eps_prime).unwrap();
        let again = encode(&decode(&enc).unwrap(), &enc.anchors, eps_prime).unwrap();
        prop_assert_eq!(&again.records, &enc.records);
        prop_assert_eq!(EncodedCoreset::from_bytes(&enc.to_bytes()).unwrap(), enc);
    }

    #[test]
    fn point_files_roundtrip(rows in prop::collection::vec(prop::collection::vec(-1000i64..1000, 3), 0..20)) {
        let mut csv = Vec::new();
        write_csv(&mut csv, &rows).unwrap();
        let mut bin = Vec::new();
        write_sckz(&mut bin, 3, &rows).unwrap();
        prop_assert_eq!(&read_points(&csv, false).unwrap().rows, &rows);
        prop_assert_eq!(&read_points(&bin, false).unwrap().rows, &rows);
    }

    #[test]
    fn leverage_sums_to_rank(m in matrix(1..30, 4)) {
        let sum: f64 = leverage_of(&m).iter().sum();
        prop_assert!((sum - rank_of(&m) as f64).abs() < 1e-8);
    }

    #[test]
    fn lewis_weights_certify(m in matrix(8..30, 3), p in prop::sample::select(vec![1.0, 1.5, 2.0, 3.0, 4.0, 5.0])) {
        let s = lewis_of(&m, p, 1e-9, 500).unwrap();
        if s.converged {
            prop_assert!(s.residual < 1e-9);
            let sum: f64 = s.weights.iter().sum();
            prop_assert!((sum - rank_of(&m) as f64).abs() < 1e-6);
        }
        if p == 2.0 {
            for (a, b) in s.weights.iter().zip(leverage_of(&m)) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn row_sets_roundtrip(m in matrix(4..20, 3), p in prop::sample::select(vec![1.0, 2.0, 3.0])) {
        let a = RealMatrix::from_matrix(&m);
        let pre = precondition(&a, p).unwrap();
        let enc = encode_rows(&a, &a, &pre, 0.01).unwrap();
        let back = EncodedRowSet::from_bytes(&enc.to_bytes()).unwrap();
        prop_assert_eq!(back.records.len(), a.len());
        let decoded = back.decode().unwrap();
        prop_assert_eq!(decoded.len(), a.len());
    }
}
