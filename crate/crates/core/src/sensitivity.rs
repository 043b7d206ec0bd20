//! Batch sensitivity estimates and the online sensitivity sampler.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{check_dim, clustering_cost, dist2, pow_z, prepare_swap_bookkeeping, CenterSet, Dataset, WeightedPoint};
use crate::oracle::{exact_medoids_sensitivity, grid_clustering_sensitivity};
use crate::solvers::{constrained_cost_with, local_search_medoids, local_search_with, LocalSearchOptions, Relocation};

/// How an estimate was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Quality {
    Exact,
    ConstantFactor,
    Crude,
}

/// A sensitivity estimate clamped to `(0, 1]` with its unclamped value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityEstimate {
    pub value: f64,
    pub raw: f64,
    pub quality: Quality,
    /// Multiplicative factor within which the estimate is claimed to hold.
    pub claimed_factor: f64,
}

impl SensitivityEstimate {
    /// The estimate `1`, used when nothing is known about the other points.
    pub fn certain() -> Self {
        SensitivityEstimate { value: 1.0, raw: 1.0, quality: Quality::ConstantFactor, claimed_factor: 1.0 }
    }
}

/// Claimed factor of [`batch_sens`] for exponent `z`.
pub fn batch_factor(z: f64) -> f64 {
    2f64.powf(3.0 * z + 10.0)
}

/// Precomputed swap estimates of every point of a dataset against one solution.
#[derive(Clone, Debug)]
pub struct BatchContext {
    pub union: Dataset,
    pub solution: CenterSet,
    pub z: f64,
    pub cost: f64,
    psi: Vec<f64>,
    removed: Vec<usize>,
    relocation: Vec<Relocation>,
}

impl BatchContext {
    /// Indexes `union` against `solution`, bookkeeping the solution if needed.
    pub fn new(union: Dataset, solution: &CenterSet, z: f64) -> Result<Self> {
        let solution = match solution.bookkeeping {
            Some(_) => solution.clone(),
            None => prepare_swap_bookkeeping(&union, solution)?,
        };
        let cost = clustering_cost(&union, &solution, z)?;
        let mut psi = Vec::with_capacity(union.len());
        let mut removed = Vec::with_capacity(union.len());
        let mut relocation = Vec::with_capacity(union.len());
        for p in &union.points {
            let (swap, total) = constrained_cost_with(&solution, cost, z, &p.point);
            psi.push(total);
            removed.push(swap.removed_center);
            relocation.push(swap.relocation);
        }
        Ok(BatchContext { union, solution, z, cost, psi, removed, relocation })
    }

    /// Local search on `union` followed by indexing.
    pub fn with_local_search<R: Rng>(union: Dataset, k: usize, z: f64, rng: &mut R) -> Result<Self> {
        let solution = local_search_medoids(&union, k, z, None, rng)?;
        Self::new(union, &solution, z)
    }

    /// Like [`BatchContext::with_local_search`] with explicit search options.
    pub fn with_options<R: Rng>(
        union: Dataset,
        k: usize,
        z: f64,
        opts: &LocalSearchOptions,
        rng: &mut R,
    ) -> Result<Self> {
        let solution = local_search_with(&union, k, z, opts, rng)?;
        Self::new(union, &solution, z)
    }

    /// Sensitivity of a point of weight `weight` at `x` within the indexed dataset.
    ///
    /// Maximizes `r^z / (Ψ_p + n_b·r^z)` over every indexed point `p` at
    /// distance `r > 0`, where `n_b` is the weight the modified solution
    /// serves from centers inside the ball of radius `r/2` around `x`.
    pub fn estimate(&self, x: &[f64], weight: f64) -> SensitivityEstimate {
        let z = self.z;
        let book = self.solution.bookkeeping.as_ref().expect("bookkeeping");
        let k = self.solution.len();
        let dc: Vec<f64> = self.solution.centers.iter().map(|c| dist2(x, c).sqrt()).collect();
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| dc[a].total_cmp(&dc[b]));
        let sorted: Vec<f64> = order.iter().map(|&i| dc[i]).collect();
        let mut prefix = vec![0.0; k + 1];
        for (s, &i) in order.iter().enumerate() {
            prefix[s + 1] = prefix[s] + book.served[i];
        }
        let mut raw: f64 = 0.0;
        for (idx, p) in self.union.points.iter().enumerate() {
            let r = dist2(x, &p.point).sqrt();
            if r == 0.0 {
                continue;
            }
            let half = r / 2.0;
            let inside = sorted.partition_point(|&v| v < half);
            let mut n_b = prefix[inside];
            let c_star = self.removed[idx];
            let moved = book.served[c_star];
            if dc[c_star] < half {
                n_b -= moved;
            }
            if let Relocation::Center(t) = self.relocation[idx] {
                if dc[t] < half {
                    n_b += moved;
                }
            }
            let r_z = pow_z(r, z);
            let denom = self.psi[idx] + n_b.max(0.0) * r_z;
            let ratio = if denom > 0.0 { r_z / denom } else { f64::INFINITY };
            raw = raw.max(ratio);
        }
        let total = self.union.total_weight();
        let value = if raw > 0.0 {
            (weight * raw).min(1.0)
        } else {
            (weight / total.max(weight)).min(1.0)
        };
        SensitivityEstimate {
            value,
            raw: if raw > 0.0 { weight * raw } else { value },
            quality: Quality::ConstantFactor,
            claimed_factor: batch_factor(z),
        }
    }
}

/// Constant-factor sensitivities of the batch `b` within `z_set ∪ b`.
///
/// An empty `z_set` gives `1` for every point.
pub fn batch_sens<R: Rng>(
    z_set: &Dataset,
    b: &[WeightedPoint],
    k: usize,
    z: f64,
    rng: &mut R,
) -> Result<Vec<SensitivityEstimate>> {
    for p in b {
        check_dim(z_set.d, p.point.len())?;
    }
    if z_set.is_empty() {
        return Ok(b.iter().map(|_| SensitivityEstimate::certain()).collect());
    }
    if b.is_empty() {
        return Ok(Vec::new());
    }
    let mut union = z_set.clone();
    union.points.extend(b.iter().cloned());
    let ctx = BatchContext::with_local_search(union, k, z, rng)?;
    Ok(b.iter().map(|p| ctx.estimate(&p.point, p.weight)).collect())
}

/// Sensitivity of every point of `x` within `x`, as used by reduction.
pub fn self_sensitivities<R: Rng>(
    x: &Dataset,
    k: usize,
    z: f64,
    opts: &LocalSearchOptions,
    rng: &mut R,
) -> Result<Vec<SensitivityEstimate>> {
    let ctx = BatchContext::with_options(x.clone(), k, z, opts, rng)?;
    Ok(x.points.iter().map(|p| ctx.estimate(&p.point, p.weight)).collect())
}

/// Compares the medoid-restricted sensitivity `τ` of point `index` with the
/// unrestricted sensitivity `s` from the grid oracle.
///
/// Returns `(τ, s, s/τ)`. `resolution` defaults to `Δ/64`.
pub fn medoids_vs_clustering_gap(
    x: &Dataset,
    index: usize,
    k: usize,
    z: f64,
    resolution: Option<f64>,
) -> Result<(f64, f64, f64)> {
    let tau = exact_medoids_sensitivity(x, index, k, z)?.value;
    let grid = grid_clustering_sensitivity(x, index, k, z, resolution)?;
    let s = grid.value;
    let ratio = if tau > 0.0 { s / tau } else { f64::INFINITY };
    Ok((tau, s, ratio))
}

/// Keeps `x` with probability `p = min(1, λ·σ̂)` and reweights it by `1/p`.
pub fn online_sens_sampler<R: Rng>(
    x: &WeightedPoint,
    sigma_hat: f64,
    lambda: f64,
    rng: &mut R,
) -> Result<Option<WeightedPoint>> {
    if !(sigma_hat >= 0.0 && lambda > 0.0 && sigma_hat.is_finite() && lambda.is_finite()) {
        return Err(Error::param("sampler needs finite sigma >= 0 and lambda > 0"));
    }
    let p = (lambda * sigma_hat).min(1.0);
    if p >= 1.0 {
        return Ok(Some(x.clone()));
    }
    if p > 0.0 && rng.random::<f64>() < p {
        Ok(Some(WeightedPoint { point: x.point.clone(), weight: x.weight / p }))
    } else {
        Ok(None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive;

    #[test]
    fn lone_point_is_certain() {
        let z = Dataset::new(2, 16.0);
        let b = vec![WeightedPoint::unit(vec![3.0, 3.0])];
        let est = batch_sens(&z, &b, 1, 2.0, &mut derive(1, 0, 0, 0)).unwrap();
        assert_eq!(est[0].value, 1.0);
    }

    #[test]
    fn estimates_stay_in_unit_interval() {
        let pts: Vec<Vec<f64>> = (1..=30).map(|i| vec![(i * 7 % 31) as f64 + 1.0, (i * 3 % 17) as f64 + 1.0]).collect();
        let z = Dataset::from_unit(2, 64.0, pts[..20].to_vec()).unwrap();
        let b: Vec<_> = pts[20..].iter().cloned().map(WeightedPoint::unit).collect();
        for e in batch_sens(&z, &b, 2, 2.0, &mut derive(2, 0, 0, 0)).unwrap() {
            assert!(e.value > 0.0 && e.value <= 1.0);
        }
    }

    #[test]
    fn duplicates_share_sensitivity() {
        let z = Dataset::from_unit(1, 16.0, vec![vec![4.0]; 9]).unwrap();
        let b = vec![WeightedPoint::unit(vec![4.0])];
        let est = batch_sens(&z, &b, 1, 2.0, &mut derive(3, 0, 0, 0)).unwrap();
        assert!((est[0].value - 0.1).abs() < 1e-12);
    }

    #[test]
    fn sampler_keeps_certain_points() {
        let x = WeightedPoint::unit(vec![1.0]);
        let kept = online_sens_sampler(&x, 0.5, 2.0, &mut derive(4, 0, 0, 0)).unwrap().unwrap();
        assert_eq!(kept.weight, 1.0);
        let mut rng = derive(4, 0, 0, 1);
        let mut mass = 0.0;
        for _ in 0..20_000 {
            if let Some(p) = online_sens_sampler(&x, 0.1, 1.0, &mut rng).unwrap() {
                assert!((p.weight - 10.0).abs() < 1e-12);
                mass += p.weight;
            }
        }
        assert!((mass / 20_000.0 - 1.0).abs() < 0.07);
    }
}
