//! Brute-force references for small instances.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{dist_pow, CenterSet, Dataset};
use crate::rng::{derive, module};

/// Enumeration guard for medoid subsets.
pub const MEDOID_GUARD: f64 = 1e6;
/// Enumeration guard for grid center tuples.
pub const GRID_GUARD: f64 = 1e7;
/// Default number of sampled directions for `p ≠ 2`.
pub const LP_DIRECTIONS: usize = 100_000;

/// `C(n, k)` as a float.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Calls `f` on every strictly increasing `k`-subset of `0..m`.
pub fn for_each_combination(m: usize, k: usize, mut f: impl FnMut(&[usize])) {
    if k > m {
        return;
    }
    if k == 0 {
        f(&[]);
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        let mut i = k;
        while i > 0 && idx[i - 1] == m - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Weighted cost table: `table[c][j] = w_j · dist(candidate_c, x_j)^z`.
fn cost_table(x: &Dataset, candidates: &[Vec<f64>], z: f64) -> Vec<Vec<f64>> {
    candidates
        .iter()
        .map(|c| x.points.iter().map(|p| p.weight * dist_pow(c, &p.point, z)).collect())
        .collect()
}

fn subset_cost(table: &[Vec<f64>], subset: &[usize], scratch: &mut [f64]) -> f64 {
    scratch.copy_from_slice(&table[subset[0]]);
    for &c in &subset[1..] {
        for (s, v) in scratch.iter_mut().zip(&table[c]) {
            if *v < *s {
                *s = *v;
            }
        }
    }
    scratch.iter().sum()
}

/// Exhaustive minimum of the clustering cost over size-`k` subsets of the support.
pub fn exact_medoids_opt(x: &Dataset, k: usize, z: f64) -> Result<(CenterSet, f64)> {
    if k == 0 || x.is_empty() {
        return Err(Error::param("need k > 0 and a nonempty dataset"));
    }
    let support: Vec<Vec<f64>> = x.support_indices().into_iter().map(|i| x.points[i].point.clone()).collect();
    if support.len() <= k {
        return Ok((CenterSet::new(support), 0.0));
    }
    let needed = binomial(support.len(), k);
    if needed > MEDOID_GUARD {
        return Err(Error::TooLarge { what: "medoid subsets", needed, guard: MEDOID_GUARD });
    }
    let table = cost_table(x, &support, z);
    let mut scratch = vec![0.0; x.len()];
    let mut best = (f64::INFINITY, Vec::new());
    for_each_combination(support.len(), k, |s| {
        let c = subset_cost(&table, s, &mut scratch);
        if c < best.0 {
            best = (c, s.to_vec());
        }
    });
    let centers = best.1.iter().map(|&i| support[i].clone()).collect();
    Ok((CenterSet::new(centers), best.0))
}

/// Maximizing ratio and the center set attaining it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleSensitivity {
    pub value: f64,
    pub argmax: Vec<Vec<f64>>,
    /// Grid spacing per axis; zero for medoid enumeration.
    pub spacing: f64,
}

fn max_ratio_over(
    x: &Dataset,
    index: usize,
    candidates: &[Vec<f64>],
    k: usize,
    z: f64,
    guard: f64,
    what: &'static str,
) -> Result<Option<(f64, Vec<usize>)>> {
    let m = candidates.len();
    let needed: f64 = (1..=k.min(m)).map(|j| binomial(m, j)).sum();
    if needed > guard {
        return Err(Error::TooLarge { what, needed, guard });
    }
    let table = cost_table(x, candidates, z);
    let mut scratch = vec![0.0; x.len()];
    let mut best: Option<(f64, Vec<usize>)> = None;
    for size in 1..=k.min(m) {
        for_each_combination(m, size, |s| {
            let num = s.iter().map(|&c| table[c][index]).fold(f64::INFINITY, f64::min);
            if num == 0.0 && best.is_some() {
                return;
            }
            let den = subset_cost(&table, s, &mut scratch);
            if den > 0.0 {
                let r = num / den;
                if best.as_ref().is_none_or(|b| r > b.0) {
                    best = Some((r, s.to_vec()));
                }
            }
        });
    }
    Ok(best)
}

fn check_index(x: &Dataset, index: usize, k: usize) -> Result<()> {
    if index >= x.len() {
        return Err(Error::param(format!("point index {index} out of range")));
    }
    if k == 0 {
        return Err(Error::param("k must be positive"));
    }
    Ok(())
}

/// Exact maximum of `Cost(x, C) / Cost(X, C)` over center sets of at most `k` support points.
///
/// When every point sits at one location the value is `w_x / W`.
pub fn exact_medoids_sensitivity(x: &Dataset, index: usize, k: usize, z: f64) -> Result<OracleSensitivity> {
    check_index(x, index, k)?;
    let support: Vec<Vec<f64>> = x.support_indices().into_iter().map(|i| x.points[i].point.clone()).collect();
    if support.len() == 1 {
        let value = x.points[index].weight / x.total_weight();
        return Ok(OracleSensitivity { value, argmax: Vec::new(), spacing: 0.0 });
    }
    match max_ratio_over(x, index, &support, k, z, MEDOID_GUARD, "medoid subsets")? {
        Some((value, s)) => Ok(OracleSensitivity {
            value,
            argmax: s.iter().map(|&i| support[i].clone()).collect(),
            spacing: 0.0,
        }),
        None => Err(Error::Degenerate("every candidate set has zero cost".into())),
    }
}

/// Uniform grid over the bounding box of `x` with the given spacing.
pub fn bounding_grid(x: &Dataset, spacing: f64) -> Vec<Vec<f64>> {
    let d = x.d;
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for p in &x.points {
        for j in 0..d {
            lo[j] = lo[j].min(p.point[j]);
            hi[j] = hi[j].max(p.point[j]);
        }
    }
    let counts: Vec<usize> = (0..d).map(|j| ((hi[j] - lo[j]) / spacing).floor() as usize + 1).collect();
    let total: usize = counts.iter().product();
    let mut out = Vec::with_capacity(total);
    for mut flat in 0..total {
        let mut g = vec![0.0; d];
        for j in 0..d {
            g[j] = lo[j] + (flat % counts[j]) as f64 * spacing;
            flat /= counts[j];
        }
        out.push(g);
    }
    out
}

/// Ratio `Cost(x, C) / Cost(X, C)` for an explicit center set.
pub fn sensitivity_ratio(x: &Dataset, index: usize, centers: &[Vec<f64>], z: f64) -> f64 {
    let c = CenterSet::new(centers.to_vec());
    let num = x.points[index].weight * crate::geometry::point_cost(&x.points[index].point, &c.centers, z);
    let den = crate::geometry::clustering_cost(x, &c, z).unwrap_or(0.0);
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Nearest grid point (spacing `h`, anchored at the bounding-box minimum) to every center.
pub fn snap_to_grid(x: &Dataset, centers: &[Vec<f64>], spacing: f64) -> Vec<Vec<f64>> {
    let d = x.d;
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for p in &x.points {
        for j in 0..d {
            lo[j] = lo[j].min(p.point[j]);
            hi[j] = hi[j].max(p.point[j]);
        }
    }
    centers
        .iter()
        .map(|c| {
            (0..d)
                .map(|j| {
                    let top = ((hi[j] - lo[j]) / spacing).floor();
                    let step = ((c[j] - lo[j]) / spacing).round().clamp(0.0, top);
                    lo[j] + step * spacing
                })
                .collect()
        })
        .collect()
}

/// Maximum of `Cost(x, C) / Cost(X, C)` over center sets of at most `k` grid points.
///
/// The grid spans the bounding box of `x` with spacing `resolution`
/// (default `Δ/64`); the spacing is returned with the value.
pub fn grid_clustering_sensitivity(
    x: &Dataset,
    index: usize,
    k: usize,
    z: f64,
    resolution: Option<f64>,
) -> Result<OracleSensitivity> {
    check_index(x, index, k)?;
    let spacing = resolution.unwrap_or(x.delta / 64.0);
    if spacing.is_nan() || spacing <= 0.0 {
        return Err(Error::param("grid resolution must be positive"));
    }
    let grid = bounding_grid(x, spacing);
    match max_ratio_over(x, index, &grid, k, z, GRID_GUARD, "grid center tuples")? {
        Some((value, s)) => Ok(OracleSensitivity {
            value,
            argmax: s.iter().map(|&i| grid[i].clone()).collect(),
            spacing,
        }),
        None => {
            let value = x.points[index].weight / x.total_weight();
            Ok(OracleSensitivity { value, argmax: Vec::new(), spacing })
        }
    }
}

/// Approximate or exact `L_p` sensitivity with the number of sampled directions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LpSensitivity {
    pub value: f64,
    /// Zero when computed in closed form.
    pub directions: usize,
}

fn lp_ratio(a: &DMatrix<f64>, t: usize, y: &DVector<f64>, p: f64) -> f64 {
    let v = a * y;
    let den: f64 = v.iter().map(|x| x.abs().powf(p)).sum();
    if den > 0.0 {
        v[t].abs().powf(p) / den
    } else {
        0.0
    }
}

/// Leverage `a_tᵀ (AᵀA)⁺ a_t`.
pub fn closed_form_leverage(a: &DMatrix<f64>, t: usize) -> f64 {
    let gram = a.transpose() * a;
    let eps = 1e-12 * gram.norm().max(1.0);
    let pinv = gram.pseudo_inverse(eps).expect("nonnegative eps");
    let row = a.row(t).transpose();
    (row.transpose() * pinv * &row)[(0, 0)].clamp(0.0, 1.0)
}

/// `max_y |⟨a_t, y⟩|^p / ‖Ay‖_p^p`.
///
/// Exact for `p = 2` and for rows outside the span of the others; otherwise
/// the maximum over `directions` random unit directions polished by
/// coordinate descent.
pub fn exact_lp_sensitivity(a: &DMatrix<f64>, t: usize, p: f64, directions: Option<usize>, seed: u64) -> Result<LpSensitivity> {
    if t >= a.nrows() {
        return Err(Error::param(format!("row {t} out of range")));
    }
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::param("p must be at least 1"));
    }
    if a.row(t).iter().all(|&v| v == 0.0) {
        return Err(Error::Degenerate("zero row has no sensitivity".into()));
    }
    let lev = closed_form_leverage(a, t);
    if p == 2.0 {
        return Ok(LpSensitivity { value: lev, directions: 0 });
    }
    if lev > 1.0 - 1e-10 {
        return Ok(LpSensitivity { value: 1.0, directions: 0 });
    }
    let d = a.ncols();
    if d > 6 {
        return Err(Error::TooLarge { what: "direction sampling dimension", needed: d as f64, guard: 6.0 });
    }
    let count = directions.unwrap_or(LP_DIRECTIONS);
    let mut rng = derive(seed, module::ORACLE, t as u64, 0);
    let mut keep: Vec<(f64, DVector<f64>)> = Vec::new();
    for _ in 0..count {
        let y = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let r = lp_ratio(a, t, &y, p);
        keep.push((r, y));
        if keep.len() > 64 {
            keep.sort_by(|x, y| y.0.total_cmp(&x.0));
            keep.truncate(8);
        }
    }
    keep.sort_by(|x, y| y.0.total_cmp(&x.0));
    keep.truncate(8);
    let mut best: f64 = 0.0;
    for (mut r, mut y) in keep {
        y /= y.norm();
        let mut step = 0.25;
        let mut sweeps = 0;
        while step > 1e-12 && sweeps < 2000 {
            sweeps += 1;
            let mut moved = false;
            for j in 0..d {
                for sign in [1.0, -1.0] {
                    let mut trial = y.clone();
                    trial[j] += sign * step;
                    let rt = lp_ratio(a, t, &trial, p);
                    if rt > r * (1.0 + 1e-14) {
                        r = rt;
                        y = &trial / trial.norm();
                        moved = true;
                    }
                }
            }
            if !moved {
                step *= 0.5;
            }
        }
        best = best.max(r);
    }
    Ok(LpSensitivity { value: best.min(1.0), directions: count })
}
