//! Points, weighted datasets, center sets and the clustering cost.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An integer point of the grid `[1, Δ]^d`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridPoint {
    pub coords: Vec<i64>,
}

impl GridPoint {
    /// Checks `1 <= coords[j] <= delta` for every coordinate.
    pub fn new(coords: Vec<i64>, delta: i64) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::param("a grid point needs at least one coordinate"));
        }
        if delta < 1 {
            return Err(Error::param(format!("grid bound must be at least 1, got {delta}")));
        }
        if let Some(c) = coords.iter().find(|&&c| c < 1 || c > delta) {
            return Err(Error::Input(format!("coordinate {c} outside [1, {delta}]")));
        }
        Ok(GridPoint { coords })
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn to_real(&self) -> Vec<f64> {
        self.coords.iter().map(|&c| c as f64).collect()
    }
}

/// A real point with a positive weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedPoint {
    pub point: Vec<f64>,
    pub weight: f64,
}

impl WeightedPoint {
    pub fn new(point: Vec<f64>, weight: f64) -> Result<Self> {
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(Error::InvalidWeight(weight));
        }
        Ok(WeightedPoint { point, weight })
    }

    pub fn unit(point: Vec<f64>) -> Self {
        WeightedPoint { point, weight: 1.0 }
    }
}

/// An ordered weighted point set of fixed dimension with grid bound `delta`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub d: usize,
    pub delta: f64,
    pub points: Vec<WeightedPoint>,
}

impl Dataset {
    pub fn new(d: usize, delta: f64) -> Self {
        Dataset { d, delta, points: Vec::new() }
    }

    /// Builds a dataset from points that already share dimension `d`.
    pub fn from_points(d: usize, delta: f64, points: Vec<WeightedPoint>) -> Result<Self> {
        for p in &points {
            check_dim(d, p.point.len())?;
        }
        Ok(Dataset { d, delta, points })
    }

    /// Unit-weight dataset from raw coordinates.
    pub fn from_unit(d: usize, delta: f64, coords: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_points(d, delta, coords.into_iter().map(WeightedPoint::unit).collect())
    }

    /// Unit-weight dataset from grid points.
    pub fn from_grid(delta: i64, points: &[GridPoint]) -> Result<Self> {
        let d = points.first().map(GridPoint::dim).unwrap_or(1);
        let pts = points.iter().map(|g| WeightedPoint::unit(g.to_real())).collect();
        Self::from_points(d, delta as f64, pts)
    }

    pub fn push(&mut self, p: WeightedPoint) -> Result<()> {
        check_dim(self.d, p.point.len())?;
        self.points.push(p);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.points.iter().map(|p| p.weight).sum()
    }

    /// Returns a copy with every weight multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for p in &mut out.points {
            p.weight *= factor;
        }
        out
    }

    /// Concatenates two datasets of equal dimension.
    pub fn union(&self, other: &Dataset) -> Result<Self> {
        check_dim(self.d, other.d)?;
        let mut out = self.clone();
        out.delta = self.delta.max(other.delta);
        out.points.extend(other.points.iter().cloned());
        Ok(out)
    }

    /// Indices of the first occurrence of every distinct location.
    pub fn support_indices(&self) -> Vec<usize> {
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::new();
        for (i, p) in self.points.iter().enumerate() {
            let key: Vec<u64> = p.point.iter().map(|v| v.to_bits()).collect();
            if seen.insert(key) {
                out.push(i);
            }
        }
        out
    }

    /// Merges points at identical locations, summing their weights.
    pub fn compact(&self) -> Self {
        let mut index: std::collections::HashMap<Vec<u64>, usize> = std::collections::HashMap::new();
        let mut points: Vec<WeightedPoint> = Vec::new();
        for p in &self.points {
            let key: Vec<u64> = p.point.iter().map(|v| v.to_bits()).collect();
            match index.get(&key) {
                Some(&i) => points[i].weight += p.weight,
                None => {
                    index.insert(key, points.len());
                    points.push(p.clone());
                }
            }
        }
        Dataset { d: self.d, delta: self.delta, points }
    }
}

/// Per-center bookkeeping used by swap estimates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bookkeeping {
    /// Weight served by each center (`n_c`).
    pub served: Vec<f64>,
    /// Distance to the nearest other center (`r_c`), or the grid diameter for a singleton.
    pub radius: Vec<f64>,
    /// Index of the nearest other center, if any.
    pub partner: Vec<Option<usize>>,
}

/// At most `k` centers with optional bookkeeping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CenterSet {
    pub centers: Vec<Vec<f64>>,
    pub bookkeeping: Option<Bookkeeping>,
}

impl CenterSet {
    pub fn new(centers: Vec<Vec<f64>>) -> Self {
        CenterSet { centers, bookkeeping: None }
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.centers.first().map(Vec::len)
    }
}

/// Problem parameters shared by the clustering modules.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusteringParams {
    pub k: usize,
    pub z: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub seed: u64,
}

impl ClusteringParams {
    pub fn new(k: usize, z: f64, epsilon: f64, delta: f64, seed: u64) -> Result<Self> {
        let p = ClusteringParams { k, z, epsilon, delta, seed };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::param("k must be at least 1"));
        }
        if !(self.z >= 1.0 && self.z.is_finite()) {
            return Err(Error::param(format!("z must be at least 1, got {}", self.z)));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::param(format!("epsilon must lie in (0,1), got {}", self.epsilon)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::param(format!("delta must lie in (0,1), got {}", self.delta)));
        }
        Ok(())
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// Squared Euclidean distance without a dimension check.
#[inline]
pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Raises a distance to the power `z`, with fast paths for k-median and k-means.
#[inline]
pub fn pow_z(dist: f64, z: f64) -> f64 {
    if z == 2.0 {
        dist * dist
    } else if z == 1.0 {
        dist
    } else {
        dist.powf(z)
    }
}

/// `dist(a,b)^z` computed from the squared distance.
#[inline]
pub fn dist_pow(a: &[f64], b: &[f64], z: f64) -> f64 {
    let s = dist2(a, b);
    if z == 2.0 {
        s
    } else {
        pow_z(s.sqrt(), z)
    }
}

/// Euclidean distance `‖a − b‖₂`.
pub fn dist(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dim(a.len(), b.len())?;
    Ok(dist2(a, b).sqrt())
}

/// Index of the nearest center and the squared distance to it; ties go to the lowest index.
#[inline]
pub fn nearest(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centers.iter().enumerate() {
        let d = dist2(point, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// `dist(x, C)^z` for a single point.
pub fn point_cost(point: &[f64], centers: &[Vec<f64>], z: f64) -> f64 {
    let (_, d2) = nearest(point, centers);
    if z == 2.0 {
        d2
    } else {
        pow_z(d2.sqrt(), z)
    }
}

fn check_centers(x: &Dataset, c: &CenterSet) -> Result<()> {
    if c.is_empty() {
        return Err(Error::NoCenters);
    }
    for center in &c.centers {
        check_dim(x.d, center.len())?;
    }
    Ok(())
}

/// `Σ w·dist(x, C)^z` over the weighted points of `x`.
pub fn clustering_cost(x: &Dataset, c: &CenterSet, z: f64) -> Result<f64> {
    check_centers(x, c)?;
    Ok(x.points.iter().map(|p| p.weight * point_cost(&p.point, &c.centers, z)).sum())
}

/// Maps every point to its nearest center, ties to the lowest index.
pub fn assign_nearest(x: &Dataset, c: &CenterSet) -> Result<Vec<usize>> {
    check_centers(x, c)?;
    Ok(x.points.iter().map(|p| nearest(&p.point, &c.centers).0).collect())
}

/// Fills served weights `n_c` and nearest-other-center distances `r_c`.
pub fn prepare_swap_bookkeeping(x: &Dataset, c: &CenterSet) -> Result<CenterSet> {
    let assignment = assign_nearest(x, c)?;
    let k = c.len();
    let mut served = vec![0.0; k];
    for (p, &a) in x.points.iter().zip(&assignment) {
        served[a] += p.weight;
    }
    let diameter = (x.d as f64).sqrt() * x.delta;
    let mut radius = vec![diameter; k];
    let mut partner = vec![None; k];
    for i in 0..k {
        for j in 0..k {
            if i == j {
                continue;
            }
            let d = dist2(&c.centers[i], &c.centers[j]).sqrt();
            if partner[i].is_none() || d < radius[i] {
                radius[i] = d;
                partner[i] = Some(j);
            }
        }
    }
    Ok(CenterSet {
        centers: c.centers.clone(),
        bookkeeping: Some(Bookkeeping { served, radius, partner }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(points: &[&[f64]]) -> Dataset {
        Dataset::from_unit(points[0].len(), 100.0, points.iter().map(|p| p.to_vec()).collect()).unwrap()
    }

    #[test]
    fn three_four_five() {
        assert_eq!(dist(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert_eq!(dist(&[1.5, -2.0], &[1.5, -2.0]).unwrap(), 0.0);
    }

    #[test]
    fn dist_rejects_mismatch() {
        assert!(matches!(dist(&[0.0], &[0.0, 1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn cost_single_center() {
        let x = ds(&[&[0.0, 0.0], &[3.0, 4.0]]);
        let c = CenterSet::new(vec![vec![0.0, 0.0]]);
        assert_eq!(clustering_cost(&x, &c, 2.0).unwrap(), 25.0);
        let all = CenterSet::new(vec![vec![0.0, 0.0], vec![3.0, 4.0]]);
        assert_eq!(clustering_cost(&x, &all, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn cost_needs_centers() {
        let x = ds(&[&[0.0, 0.0]]);
        assert!(matches!(clustering_cost(&x, &CenterSet::new(vec![]), 2.0), Err(Error::NoCenters)));
        assert!(matches!(assign_nearest(&x, &CenterSet::new(vec![])), Err(Error::NoCenters)));
    }

    #[test]
    fn tie_goes_to_lowest_index() {
        let x = ds(&[&[5.0, 0.0]]);
        let c = CenterSet::new(vec![vec![0.0, 0.0], vec![10.0, 0.0]]);
        assert_eq!(assign_nearest(&x, &c).unwrap(), vec![0]);
        let one = CenterSet::new(vec![vec![1.0, 1.0]]);
        let y = ds(&[&[0.0, 0.0], &[9.0, 9.0], &[4.0, 2.0]]);
        assert_eq!(assign_nearest(&y, &one).unwrap(), vec![0, 0, 0]);
    }

    #[test]
    fn bookkeeping_two_centers() {
        let x = ds(&[&[0.0, 0.0], &[10.0, 0.0]]);
        let c = CenterSet::new(vec![vec![0.0, 0.0], vec![10.0, 0.0]]);
        let b = prepare_swap_bookkeeping(&x, &c).unwrap().bookkeeping.unwrap();
        assert_eq!(b.served, vec![1.0, 1.0]);
        assert_eq!(b.radius, vec![10.0, 10.0]);
        assert_eq!(b.partner, vec![Some(1), Some(0)]);
    }

    #[test]
    fn bookkeeping_singleton_uses_diameter() {
        let x = ds(&[&[1.0, 1.0], &[2.0, 2.0]]);
        let c = CenterSet::new(vec![vec![1.0, 1.0]]);
        let b = prepare_swap_bookkeeping(&x, &c).unwrap().bookkeeping.unwrap();
        assert_eq!(b.served, vec![2.0]);
        assert!((b.radius[0] - 2f64.sqrt() * 100.0).abs() < 1e-9);
    }

    #[test]
    fn all_weight_at_one_center() {
        let x = ds(&[&[0.0, 0.0], &[0.0, 1.0], &[1.0, 0.0]]);
        let c = CenterSet::new(vec![vec![0.0, 0.0], vec![50.0, 50.0]]);
        let b = prepare_swap_bookkeeping(&x, &c).unwrap().bookkeeping.unwrap();
        assert_eq!(b.served, vec![3.0, 0.0]);
    }

    #[test]
    fn grid_point_bounds() {
        assert!(GridPoint::new(vec![1, 16], 16).is_ok());
        assert!(GridPoint::new(vec![0, 3], 16).is_err());
        assert!(GridPoint::new(vec![17], 16).is_err());
    }

    #[test]
    fn params_ranges() {
        assert!(ClusteringParams::new(3, 2.0, 0.1, 0.01, 1).is_ok());
        assert!(ClusteringParams::new(0, 2.0, 0.1, 0.01, 1).is_err());
        assert!(ClusteringParams::new(3, 0.5, 0.1, 0.01, 1).is_err());
        assert!(ClusteringParams::new(3, 2.0, 1.0, 0.01, 1).is_err());
        assert!(ClusteringParams::new(3, 2.0, 0.1, 0.0, 1).is_err());
    }

    #[test]
    fn weights_must_be_positive() {
        assert!(WeightedPoint::new(vec![1.0], 0.0).is_err());
        assert!(WeightedPoint::new(vec![1.0], f64::NAN).is_err());
        assert!(WeightedPoint::new(vec![1.0], 2.5).is_ok());
    }
}
