//! Synthetic streams and coreset distortion measurement.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{clustering_cost, CenterSet, Dataset, GridPoint, WeightedPoint};
use crate::rng::{derive, module};
use crate::solvers::local_search_medoids;

/// `n` i.i.d. points from a `k`-component Gaussian mixture on `[1, Δ]^d`.
///
/// Component means are uniform in the middle 80% of the grid, the standard
/// deviation is `spread·Δ`, and mixture weights are drawn uniformly then normalized.
pub fn planted_mixture(n: usize, d: usize, k: usize, grid: i64, spread: f64, seed: u64) -> Vec<GridPoint> {
    let mut rng = derive(seed, module::EVAL, 1, 0);
    let g = grid as f64;
    let means: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..d).map(|_| rng.random_range(0.1 * g..=0.9 * g)).collect())
        .collect();
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.5..1.5)).collect();
    let total: f64 = raw.iter().sum();
    let mut cum = Vec::with_capacity(k);
    let mut acc = 0.0;
    for w in &raw {
        acc += w / total;
        cum.push(acc);
    }
    (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            let c = cum.iter().position(|&v| u < v).unwrap_or(k - 1);
            let coords = means[c]
                .iter()
                .map(|&m| {
                    let v = m + spread * g * rng.sample::<f64, _>(StandardNormal);
                    (v.round() as i64).clamp(1, grid)
                })
                .collect();
            GridPoint { coords }
        })
        .collect()
}

/// `n` points uniform on `[1, Δ]^d`.
pub fn uniform_points(n: usize, d: usize, grid: i64, seed: u64) -> Vec<GridPoint> {
    let mut rng = derive(seed, module::EVAL, 2, 0);
    (0..n).map(|_| GridPoint { coords: (0..d).map(|_| rng.random_range(1..=grid)).collect() }).collect()
}

/// `n` integer rows `round(s_i·g_i)` with `g_i` standard Gaussian and row
/// scales `s_i = scale·e^{spread·N(0,1)}`, clamped to `[-bound, bound]`.
pub fn gaussian_rows(n: usize, d: usize, scale: f64, spread: f64, bound: i64, seed: u64) -> Vec<Vec<i64>> {
    let mut rng = derive(seed, module::EVAL, 3, 0);
    (0..n)
        .map(|_| {
            let s = scale * (spread * rng.sample::<f64, _>(StandardNormal)).exp();
            (0..d)
                .map(|_| ((s * rng.sample::<f64, _>(StandardNormal)).round() as i64).clamp(-bound, bound))
                .collect()
        })
        .collect()
}

/// Unit-weight dataset of grid points.
pub fn to_dataset(points: &[GridPoint], d: usize, grid: i64) -> Dataset {
    Dataset {
        d,
        delta: grid as f64,
        points: points.iter().map(|p| WeightedPoint::unit(p.to_real())).collect(),
    }
}

fn bounding_box(x: &Dataset) -> (Vec<f64>, Vec<f64>) {
    let mut lo = vec![f64::INFINITY; x.d];
    let mut hi = vec![f64::NEG_INFINITY; x.d];
    for p in &x.points {
        for j in 0..x.d {
            lo[j] = lo[j].min(p.point[j]);
            hi[j] = hi[j].max(p.point[j]);
        }
    }
    (lo, hi)
}

/// Random center sets of size `1..=k`: each center is an input point or a
/// uniform point of the bounding box with equal probability.
pub fn random_query_sets<R: Rng>(x: &Dataset, k: usize, count: usize, rng: &mut R) -> Vec<CenterSet> {
    let (lo, hi) = bounding_box(x);
    (0..count)
        .map(|_| {
            let size = rng.random_range(1..=k);
            let centers = (0..size)
                .map(|_| {
                    if rng.random::<bool>() {
                        x.points[rng.random_range(0..x.len())].point.clone()
                    } else {
                        lo.iter().zip(&hi).map(|(&a, &b)| if b > a { rng.random_range(a..=b) } else { a }).collect()
                    }
                })
                .collect();
            CenterSet::new(centers)
        })
        .collect()
}

/// Local-search solutions on random subsamples of `x` of size at most `sample`.
pub fn local_search_query_sets<R: Rng>(
    x: &Dataset,
    k: usize,
    z: f64,
    count: usize,
    sample: usize,
    rng: &mut R,
) -> Result<Vec<CenterSet>> {
    (0..count)
        .map(|_| {
            let m = sample.min(x.len());
            let pts = (0..m).map(|_| x.points[rng.random_range(0..x.len())].clone()).collect();
            let sub = Dataset { d: x.d, delta: x.delta, points: pts };
            local_search_medoids(&sub, k, z, None, rng)
        })
        .collect()
}

/// Distortion of `coreset` against `x` over query sets.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DistortionReport {
    pub queries: usize,
    pub max_error: f64,
    pub mean_error: f64,
}

/// `max_C |Cost(S, C) − Cost(X, C)| / Cost(X, C)` over `queries`.
pub fn distortion(x: &Dataset, coreset: &Dataset, queries: &[CenterSet], z: f64) -> Result<DistortionReport> {
    let mut max: f64 = 0.0;
    let mut sum = 0.0;
    let mut counted = 0;
    for c in queries {
        let truth = clustering_cost(x, c, z)?;
        let approx = clustering_cost(coreset, c, z)?;
        let err = if truth > 0.0 {
            (approx - truth).abs() / truth
        } else if approx == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        max = max.max(err);
        sum += err;
        counted += 1;
    }
    Ok(DistortionReport {
        queries: counted,
        max_error: max,
        mean_error: if counted > 0 { sum / counted as f64 } else { 0.0 },
    })
}

/// Distortion over random center sets plus local-search center sets.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClusterEval {
    pub random: DistortionReport,
    pub local_search: DistortionReport,
    pub max_error: f64,
    pub mean_error: f64,
}

/// Evaluates `coreset` against `x` on `random` random center sets and
/// `local` local-search solutions of subsamples of size `sample`.
#[allow(clippy::too_many_arguments)]
pub fn eval_clustering(
    x: &Dataset,
    coreset: &Dataset,
    k: usize,
    z: f64,
    random: usize,
    local: usize,
    sample: usize,
    seed: u64,
) -> Result<ClusterEval> {
    crate::geometry::check_dim(x.d, coreset.d)?;
    let mut rng = derive(seed, module::EVAL, 4, 0);
    let rq = if x.is_empty() { Vec::new() } else { random_query_sets(x, k, random, &mut rng) };
    let lq = if x.is_empty() { Vec::new() } else { local_search_query_sets(x, k, z, local, sample, &mut rng)? };
    let r = distortion(x, coreset, &rq, z)?;
    let l = distortion(x, coreset, &lq, z)?;
    let total = r.queries + l.queries;
    let mean = if total > 0 {
        (r.mean_error * r.queries as f64 + l.mean_error * l.queries as f64) / total as f64
    } else {
        0.0
    };
    Ok(ClusterEval { max_error: r.max_error.max(l.max_error), mean_error: mean, random: r, local_search: l })
}
