//! Center-selection routines: local search, adaptive seeding, a fast crude
//! approximation and the fixed-center swap estimate.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{check_dim, clustering_cost, dist2, dist_pow, pow_z, CenterSet, Dataset};
use crate::quadtree::{branching, build_tree_checked, default_retries, span_of, CrudeQuadTree};

/// Where the points of the removed center go in the swap estimate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relocation {
    /// To the query point.
    Query,
    /// To another center of the solution.
    Center(usize),
}

/// The center that makes room for the query point and the cost of doing so.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwapCandidate {
    pub removed_center: usize,
    /// `n_c · r̃_c^z` for the removed center.
    pub psi: f64,
    pub relocation: Relocation,
}

/// Swap estimate given the cost of `c` on the data it was bookkept against.
///
/// Returns the candidate and `Ψ = cost + ψ`.
pub fn constrained_cost_with(c: &CenterSet, cost: f64, z: f64, query: &[f64]) -> (SwapCandidate, f64) {
    let book = c.bookkeeping.as_ref().expect("centers need bookkeeping");
    let (u, du2) = crate::geometry::nearest(query, &c.centers);
    let du = du2.sqrt();
    let mut best: Option<SwapCandidate> = None;
    for i in 0..c.len() {
        let r = if i == u { book.radius[i].min(du) } else { book.radius[i] };
        let psi = book.served[i] * pow_z(r, z);
        if best.is_none_or(|b| psi < b.psi) {
            let relocation = match book.partner[i] {
                Some(p) if !(i == u && du < book.radius[i]) => Relocation::Center(p),
                _ => Relocation::Query,
            };
            best = Some(SwapCandidate { removed_center: i, psi, relocation });
        }
    }
    let cand = best.expect("nonempty center set");
    (cand, cost + cand.psi)
}

/// Estimates the cost of the best solution that keeps `query` and `k − 1` centers of `c`.
///
/// `c` must carry bookkeeping from [`crate::geometry::prepare_swap_bookkeeping`] on `x`.
/// Returns the swap and `Ψ = Cost(X, C) + ψ`.
pub fn constrained_with_center(
    x: &Dataset,
    c: &CenterSet,
    query: &[f64],
    z: f64,
) -> Result<(SwapCandidate, f64)> {
    check_dim(x.d, query.len())?;
    if c.bookkeeping.is_none() {
        return Err(Error::param("center set lacks swap bookkeeping"));
    }
    let cost = clustering_cost(x, c, z)?;
    Ok(constrained_cost_with(c, cost, z, query))
}

/// Tuning for [`local_search_with`].
#[derive(Clone, Debug, Default)]
pub struct LocalSearchOptions {
    /// Maximum number of accepted swaps; defaults to `2k·ln(nΔ)`.
    pub max_iters: Option<usize>,
    /// Candidates examined per pass; all distinct points when unset.
    pub candidate_limit: Option<usize>,
    /// Maximum passes over the candidates.
    pub max_passes: Option<usize>,
}

/// Single-swap local search over centers drawn from the data.
///
/// Returns every distinct point when there are at most `k` of them.
pub fn local_search_medoids<R: Rng>(
    x: &Dataset,
    k: usize,
    z: f64,
    max_iters: Option<usize>,
    rng: &mut R,
) -> Result<CenterSet> {
    local_search_with(x, k, z, &LocalSearchOptions { max_iters, ..Default::default() }, rng)
}

/// Nearest and second-nearest center of every point.
struct Cache {
    near: Vec<usize>,
    second: Vec<usize>,
    d1: Vec<f64>,
    d2: Vec<f64>,
}

impl Cache {
    fn build(x: &Dataset, centers: &[Vec<f64>], z: f64) -> Self {
        let n = x.len();
        let mut cache = Cache {
            near: vec![0; n],
            second: vec![usize::MAX; n],
            d1: vec![f64::INFINITY; n],
            d2: vec![f64::INFINITY; n],
        };
        for (j, p) in x.points.iter().enumerate() {
            cache.recompute(j, &p.point, centers, z);
        }
        cache
    }

    fn recompute(&mut self, j: usize, point: &[f64], centers: &[Vec<f64>], z: f64) {
        let (mut near, mut second) = (0, usize::MAX);
        let (mut d1, mut d2) = (f64::INFINITY, f64::INFINITY);
        for (i, c) in centers.iter().enumerate() {
            let d = dist_pow(point, c, z);
            if d < d1 {
                (second, d2) = (near, d1);
                (near, d1) = (i, d);
            } else if d < d2 {
                (second, d2) = (i, d);
            }
        }
        self.near[j] = near;
        self.second[j] = if d2.is_finite() { second } else { usize::MAX };
        self.d1[j] = d1;
        self.d2[j] = d2;
    }

    /// Updates every point after center `slot` moved.
    fn replace(&mut self, x: &Dataset, centers: &[Vec<f64>], slot: usize, z: f64) {
        for (j, p) in x.points.iter().enumerate() {
            if self.near[j] == slot || self.second[j] == slot {
                self.recompute(j, &p.point, centers, z);
                continue;
            }
            let d = dist_pow(&p.point, &centers[slot], z);
            if d < self.d1[j] {
                (self.second[j], self.d2[j]) = (self.near[j], self.d1[j]);
                (self.near[j], self.d1[j]) = (slot, d);
            } else if d < self.d2[j] {
                (self.second[j], self.d2[j]) = (slot, d);
            }
        }
    }
}

/// Local search with explicit options.
pub fn local_search_with<R: Rng>(
    x: &Dataset,
    k: usize,
    z: f64,
    opts: &LocalSearchOptions,
    rng: &mut R,
) -> Result<CenterSet> {
    if k == 0 {
        return Err(Error::param("k must be positive"));
    }
    if x.is_empty() {
        return Err(Error::param("empty dataset"));
    }
    let support = x.support_indices();
    if support.len() <= k {
        return Ok(CenterSet::new(support.iter().map(|&i| x.points[i].point.clone()).collect()));
    }
    let seeded = adaptive_sampling_seed(x, k, z, DistEstimator::Exact, rng)?;
    let mut centers = seeded.centers;
    let cap = opts.max_iters.unwrap_or_else(|| {
        let n_delta = (x.len() as f64 * x.delta.max(2.0)).max(3.0);
        (2.0 * k as f64 * n_delta.ln()).ceil() as usize
    });
    let max_passes = opts.max_passes.unwrap_or(usize::MAX);
    let mut cache = Cache::build(x, &centers, z);
    let mut swaps = 0;
    let mut passes = 0;
    let mut delta = vec![0.0; k];
    while swaps < cap && passes < max_passes {
        passes += 1;
        let candidates: Vec<usize> = match opts.candidate_limit {
            Some(m) if m < support.len() => (0..m).map(|_| support[rng.random_range(0..support.len())]).collect(),
            _ => support.clone(),
        };
        let mut improved = false;
        for &ci in &candidates {
            let cand = &x.points[ci].point;
            if centers.iter().any(|c| c == cand) {
                continue;
            }
            let cost: f64 = x.points.iter().zip(&cache.d1).map(|(p, d)| p.weight * d).sum();
            let (best_i, change) = if k == 1 {
                let total: f64 = x.points.iter().map(|p| p.weight * dist_pow(&p.point, cand, z)).sum();
                (0, total - cost)
            } else {
                delta.iter_mut().for_each(|v| *v = 0.0);
                let mut shared = 0.0;
                for (j, p) in x.points.iter().enumerate() {
                    let w = p.weight;
                    let dc = dist_pow(&p.point, cand, z);
                    let (a, d1, d2) = (cache.near[j], cache.d1[j], cache.d2[j]);
                    if dc < d1 {
                        shared += w * (dc - d1);
                    } else if dc < d2 {
                        delta[a] += w * (dc - d1);
                    } else {
                        delta[a] += w * (d2 - d1);
                    }
                }
                let (bi, bd) = delta
                    .iter()
                    .enumerate()
                    .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
                (bi, shared + bd)
            };
            if change < -1e-12 * cost.max(f64::MIN_POSITIVE) {
                centers[best_i] = cand.clone();
                cache.replace(x, &centers, best_i, z);
                swaps += 1;
                improved = true;
                if swaps >= cap {
                    break;
                }
            }
        }
        if !improved {
            break;
        }
    }
    Ok(CenterSet::new(centers))
}

/// Distance used by adaptive seeding.
#[derive(Clone, Copy, Debug)]
pub enum DistEstimator<'a> {
    Exact,
    Tree(&'a CrudeQuadTree),
}

impl DistEstimator<'_> {
    fn pow(&self, a: &[f64], b: &[f64], z: f64) -> f64 {
        match self {
            DistEstimator::Exact => dist_pow(a, b, z),
            DistEstimator::Tree(t) => pow_z(t.tree_dist(a, b), z),
        }
    }
}

fn sample_index<R: Rng>(mass: &[f64], total: f64, rng: &mut R) -> usize {
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &m) in mass.iter().enumerate() {
        if m > 0.0 {
            acc += m;
            last = i;
            if acc > target {
                return i;
            }
        }
    }
    last
}

/// `D^z` seeding: the first center is drawn proportionally to weight, each
/// later one proportionally to `w·dist(x, C)^z` under `estimator`.
///
/// Stops early when every remaining point coincides with a center.
pub fn adaptive_sampling_seed<R: Rng>(
    x: &Dataset,
    k: usize,
    z: f64,
    estimator: DistEstimator<'_>,
    rng: &mut R,
) -> Result<CenterSet> {
    if x.is_empty() {
        return Err(Error::param("empty dataset"));
    }
    if k == 0 {
        return Err(Error::param("k must be positive"));
    }
    let weights: Vec<f64> = x.points.iter().map(|p| p.weight).collect();
    let first = sample_index(&weights, weights.iter().sum(), rng);
    let mut centers = vec![x.points[first].point.clone()];
    let mut best: Vec<f64> = x.points.iter().map(|p| estimator.pow(&p.point, &centers[0], z)).collect();
    let mut mass: Vec<f64> = vec![0.0; x.len()];
    while centers.len() < k {
        for (j, p) in x.points.iter().enumerate() {
            mass[j] = p.weight * best[j];
        }
        let total: f64 = mass.iter().sum();
        if total <= 0.0 || !total.is_finite() {
            break;
        }
        let next = sample_index(&mass, total, rng);
        let c = x.points[next].point.clone();
        for (j, p) in x.points.iter().enumerate() {
            let d = estimator.pow(&p.point, &c, z);
            if d < best[j] {
                best[j] = d;
            }
        }
        centers.push(c);
    }
    Ok(CenterSet::new(centers))
}

/// Crude `k`-clustering from tree-distance seeding.
///
/// Returns the centers and the exact cost of the tree-nearest assignment,
/// which upper-bounds their true cost.
pub fn fast_kz_approx<R: Rng>(x: &Dataset, k: usize, z: f64, iota: f64, rng: &mut R) -> Result<(CenterSet, f64)> {
    if x.is_empty() {
        return Err(Error::param("empty dataset"));
    }
    if !(iota > 0.0 && iota <= 1.0) {
        return Err(Error::param("iota must lie in (0, 1]"));
    }
    let support = x.support_indices();
    if support.len() <= k {
        return Ok((CenterSet::new(support.iter().map(|&i| x.points[i].point.clone()).collect()), 0.0));
    }
    let n = x.len();
    let zeta = branching(n, iota);
    let kappa = (zeta as f64).max(3.0);
    let tree = build_tree_checked(&x.points, x.d, span_of(x), zeta, kappa, default_retries(n), rng);
    let centers = adaptive_sampling_seed(x, k, z, DistEstimator::Tree(&tree), rng)?;
    let mut cost = 0.0;
    for p in &x.points {
        let mut best = (f64::INFINITY, 0);
        for (i, c) in centers.centers.iter().enumerate() {
            let t = tree.tree_dist(&p.point, c);
            if t < best.0 {
                best = (t, i);
            }
        }
        cost += p.weight * pow_z(dist2(&p.point, &centers.centers[best.1]).sqrt(), z);
    }
    Ok((centers, cost))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{prepare_swap_bookkeeping, WeightedPoint};
    use crate::rng::derive;

    fn two_clusters() -> Dataset {
        let mut pts = Vec::new();
        for i in 0..5 {
            pts.push(vec![1.0 + i as f64, 1.0]);
            pts.push(vec![100.0 + i as f64, 90.0]);
        }
        Dataset::from_unit(2, 128.0, pts).unwrap()
    }

    #[test]
    fn fewer_points_than_k_returns_all() {
        let x = Dataset::from_unit(1, 10.0, vec![vec![1.0], vec![2.0]]).unwrap();
        let c = local_search_medoids(&x, 3, 2.0, None, &mut derive(1, 0, 0, 0)).unwrap();
        assert_eq!(c.len(), 2);
    }

    #[test]
    fn swap_estimate_for_collapsed_data() {
        // X = n copies of c, query x outside X: ψ = Ψ = n·dist^z.
        let c = vec![10.0, 10.0];
        let x = Dataset::from_points(2, 64.0, vec![WeightedPoint::new(c.clone(), 7.0).unwrap()]).unwrap();
        let cs = prepare_swap_bookkeeping(&x, &CenterSet::new(vec![c])).unwrap();
        let (swap, total) = constrained_with_center(&x, &cs, &[13.0, 14.0], 2.0).unwrap();
        assert_eq!(swap.removed_center, 0);
        assert_eq!(swap.psi, 7.0 * 25.0);
        assert_eq!(total, 7.0 * 25.0);
    }

    #[test]
    fn swap_needs_bookkeeping() {
        let x = two_clusters();
        let c = CenterSet::new(vec![vec![1.0, 1.0]]);
        assert!(constrained_with_center(&x, &c, &[2.0, 2.0], 2.0).is_err());
    }

    #[test]
    fn swap_uses_nearest_only_for_local_radius() {
        let x = two_clusters();
        let cs = prepare_swap_bookkeeping(&x, &CenterSet::new(vec![vec![3.0, 1.0], vec![102.0, 90.0]])).unwrap();
        // Query right next to the first center: that center is removed and its points move to the query.
        let (swap, _) = constrained_with_center(&x, &cs, &[3.0, 2.0], 1.0).unwrap();
        assert_eq!(swap.removed_center, 0);
        assert_eq!(swap.relocation, Relocation::Query);
        assert!((swap.psi - 5.0).abs() < 1e-12);
    }

    #[test]
    fn two_clusters_reach_optimum() {
        let x = two_clusters();
        let c = local_search_medoids(&x, 2, 2.0, None, &mut derive(2, 0, 0, 0)).unwrap();
        let cost = clustering_cost(&x, &c, 2.0).unwrap();
        // Medoid of 1..5 on a line is 3, cost 4 + 1 + 0 + 1 + 4 per cluster.
        assert_eq!(cost, 20.0);
    }

    #[test]
    fn seeding_prefers_heavy_point() {
        let mut pts: Vec<WeightedPoint> = (0..10).map(|i| WeightedPoint::unit(vec![i as f64 + 1.0])).collect();
        pts.push(WeightedPoint::new(vec![50.0], 1e6).unwrap());
        let x = Dataset::from_points(1, 64.0, pts).unwrap();
        let mut hits = 0;
        for s in 0..1000 {
            let c = adaptive_sampling_seed(&x, 1, 2.0, DistEstimator::Exact, &mut derive(s, 0, 0, 0)).unwrap();
            hits += (c.centers[0] == vec![50.0]) as usize;
        }
        assert!(hits >= 990);
    }

    #[test]
    fn seeding_hits_both_clusters() {
        let x = two_clusters();
        let mut both = 0;
        for s in 0..200 {
            let c = adaptive_sampling_seed(&x, 2, 2.0, DistEstimator::Exact, &mut derive(s, 0, 0, 0)).unwrap();
            let low = c.centers.iter().any(|p| p[1] < 50.0);
            let high = c.centers.iter().any(|p| p[1] > 50.0);
            both += (low && high) as usize;
        }
        assert!(both >= 190);
    }

    #[test]
    fn fast_approx_degenerate_cases() {
        let x = Dataset::from_unit(1, 64.0, vec![vec![5.0]; 20]).unwrap();
        let (_, cost) = fast_kz_approx(&x, 3, 2.0, 0.25, &mut derive(3, 0, 0, 0)).unwrap();
        assert_eq!(cost, 0.0);
        let y = Dataset::from_unit(1, 64.0, (1..=4).map(|i| vec![i as f64]).collect()).unwrap();
        let (c, cost) = fast_kz_approx(&y, 4, 2.0, 0.25, &mut derive(3, 0, 0, 0)).unwrap();
        assert_eq!((c.len(), cost), (4, 0.0));
    }
}
