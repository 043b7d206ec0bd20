//! Randomly shifted wide-branching grid hierarchy, tree distances and
//! crude batch sensitivities.
//!
//! Level `t` partitions space into cubes of side `ζ^t`. Integer points sit at
//! the centers of level-0 cells, so the cell of `x` at level `t` is
//! `floor((x + s + 1/2) / ζ^t)` coordinate-wise. Grids are nested because `ζ`
//! is an integer. Level `L + 1` is a virtual root shared by every point.

use std::collections::HashMap;

use rand::Rng;

use crate::error::Result;
use crate::geometry::{pow_z, CenterSet, Dataset, WeightedPoint};
use crate::sensitivity::{Quality, SensitivityEstimate};
use crate::solvers::{constrained_cost_with, local_search_medoids, Relocation};

/// Outcome of the boundary-margin check.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeStatus {
    /// Every point cleared the margin at every level.
    pub accepted: bool,
    /// Number of shifts drawn.
    pub attempts: usize,
    /// Points violating the margin under the kept shift.
    pub violations: usize,
}

/// Shifted grid hierarchy with per-cell aggregate weights of the build points.
#[derive(Clone, Debug)]
pub struct CrudeQuadTree {
    pub d: usize,
    pub shift: Vec<i64>,
    pub zeta: u64,
    /// Smallest `L` with `ζ^L ≥ Δ`.
    pub levels: usize,
    pub delta: f64,
    pub kappa: f64,
    pub status: TreeStatus,
    sides: Vec<f64>,
    cell_weight: Vec<HashMap<Vec<i64>, f64>>,
}

/// Branching factor `max(2, ⌈n^ι⌉)`.
pub fn branching(n: usize, iota: f64) -> u64 {
    ((n.max(1) as f64).powf(iota).ceil() as u64).max(2)
}

/// Smallest `L` with `ζ^L ≥ Δ`.
pub fn level_count(zeta: u64, delta: f64) -> usize {
    let mut l = 0;
    let mut side = 1.0;
    while side < delta {
        side *= zeta as f64;
        l += 1;
    }
    l
}

/// Default retry budget `⌈log₂ n⌉ + 10`.
pub fn default_retries(n: usize) -> usize {
    (n.max(1) as f64).log2().ceil() as usize + 10
}

impl CrudeQuadTree {
    /// Tree with an explicit shift and no build points.
    pub fn with_shift(d: usize, delta: f64, zeta: u64, kappa: f64, shift: Vec<i64>) -> Self {
        assert!(zeta >= 2, "branching must be at least 2");
        assert_eq!(shift.len(), d);
        let levels = level_count(zeta, delta);
        let sides = (0..=levels + 1).map(|t| (zeta as f64).powi(t as i32)).collect();
        CrudeQuadTree {
            d,
            shift,
            zeta,
            levels,
            delta,
            kappa,
            status: TreeStatus { accepted: true, attempts: 0, violations: 0 },
            sides,
            cell_weight: Vec::new(),
        }
    }

    /// Side length `ζ^t`.
    pub fn side(&self, level: usize) -> f64 {
        self.sides[level]
    }

    /// Cell of `x` at `level` (`level ≤ L`).
    pub fn cell(&self, x: &[f64], level: usize) -> Vec<i64> {
        let side = self.sides[level];
        x.iter()
            .zip(&self.shift)
            .map(|(&v, &s)| ((v + s as f64 + 0.5) / side).floor() as i64)
            .collect()
    }

    fn same_cell(&self, x: &[f64], y: &[f64], level: usize) -> bool {
        let side = self.sides[level];
        x.iter().zip(y).zip(&self.shift).all(|((&a, &b), &s)| {
            ((a + s as f64 + 0.5) / side).floor() == ((b + s as f64 + 0.5) / side).floor()
        })
    }

    /// First level at which `x` and `y` share a cell; `L + 1` if only the root is shared.
    pub fn first_shared_level(&self, x: &[f64], y: &[f64]) -> usize {
        (0..=self.levels).find(|&t| self.same_cell(x, y, t)).unwrap_or(self.levels + 1)
    }

    /// `√d·ζ^t` for the first shared level `t`; zero for identical points.
    pub fn tree_dist(&self, x: &[f64], y: &[f64]) -> f64 {
        if x == y {
            return 0.0;
        }
        (self.d as f64).sqrt() * self.sides[self.first_shared_level(x, y)]
    }

    /// Whether `x` is at least `side/κ` from every cell boundary at every level.
    pub fn clears_margin(&self, x: &[f64]) -> bool {
        (0..=self.levels).all(|t| {
            let side = self.sides[t];
            let margin = side / self.kappa;
            x.iter().zip(&self.shift).all(|(&v, &s)| {
                let u = v + s as f64 + 0.5;
                let r = u - side * (u / side).floor();
                r.min(side - r) >= margin
            })
        })
    }

    /// Accumulates per-cell weights of `points` at every level.
    pub fn index_points(&mut self, points: &[WeightedPoint]) {
        self.cell_weight = (0..=self.levels)
            .map(|t| {
                let mut m: HashMap<Vec<i64>, f64> = HashMap::new();
                for p in points {
                    *m.entry(self.cell(&p.point, t)).or_insert(0.0) += p.weight;
                }
                m
            })
            .collect();
    }

    /// Total weight of indexed points in the level-`t` cell of `x`.
    pub fn weight_in_cell(&self, x: &[f64], level: usize) -> f64 {
        self.cell_weight
            .get(level)
            .and_then(|m| m.get(&self.cell(x, level)))
            .copied()
            .unwrap_or(0.0)
    }

    /// The dilation bound `κ·√d·ζ` certified for accepted trees.
    pub fn dilation_bound(&self) -> Option<f64> {
        self.status
            .accepted
            .then(|| self.kappa * (self.d as f64).sqrt() * self.zeta as f64)
    }
}

/// Draws shifts until every point clears the `side/κ` margin at every level.
///
/// After `max_retries` fresh shifts the one with the fewest violating points
/// is kept and the tree is marked unaccepted.
pub fn build_tree_checked<R: Rng>(
    points: &[WeightedPoint],
    d: usize,
    delta: f64,
    zeta: u64,
    kappa: f64,
    max_retries: usize,
    rng: &mut R,
) -> CrudeQuadTree {
    assert!(kappa > 2.0, "kappa must exceed 2");
    let levels = level_count(zeta, delta);
    let span = (zeta as f64).powi(levels as i32).min(i64::MAX as f64 / 4.0) as i64;
    let mut best: Option<(CrudeQuadTree, usize)> = None;
    let mut attempts = 0;
    for _ in 0..=max_retries {
        attempts += 1;
        let shift: Vec<i64> = (0..d).map(|_| rng.random_range(0..span.max(1))).collect();
        let tree = CrudeQuadTree::with_shift(d, delta, zeta, kappa, shift);
        let violations = points.iter().filter(|p| !tree.clears_margin(&p.point)).count();
        let better = best.as_ref().is_none_or(|(_, v)| violations < *v);
        if better {
            best = Some((tree, violations));
        }
        if violations == 0 {
            break;
        }
    }
    let (mut tree, violations) = best.expect("at least one attempt");
    tree.status = TreeStatus { accepted: violations == 0, attempts, violations };
    tree.index_points(points);
    tree
}

#[derive(Clone, Copy, Debug)]
struct Candidate {
    psi: f64,
    removed: usize,
    relocation: Relocation,
}

/// Best two candidates of a cell taken from distinct child cells.
#[derive(Clone, Debug, Default)]
struct CellBest {
    top: Vec<(Candidate, Vec<i64>)>,
}

impl CellBest {
    fn offer(&mut self, cand: Candidate, child: Vec<i64>) {
        if let Some(pos) = self.top.iter().position(|(_, c)| *c == child) {
            if cand.psi < self.top[pos].0.psi {
                self.top[pos].0 = cand;
            }
        } else {
            self.top.push((cand, child));
        }
        self.top.sort_by(|a, b| a.0.psi.total_cmp(&b.0.psi));
        self.top.truncate(2);
    }

    fn excluding(&self, child: Option<&[i64]>) -> Option<Candidate> {
        self.top
            .iter()
            .find(|(_, c)| child.is_none_or(|x| c.as_slice() != x))
            .map(|(cand, _)| *cand)
    }
}

/// Precomputed state for crude sensitivity queries against a fixed set `Z` and solution `S`.
#[derive(Clone, Debug)]
pub struct RoughContext {
    pub tree: CrudeQuadTree,
    pub z: f64,
    solution: CenterSet,
    center_cells: Vec<Vec<Vec<i64>>>,
    center_weight: Vec<HashMap<Vec<i64>, f64>>,
    total_center_weight: f64,
    best: Vec<HashMap<Vec<i64>, CellBest>>,
    root_best: CellBest,
    total_weight: f64,
}

impl RoughContext {
    /// Indexes `union` and the bookkept `solution` in `tree`.
    pub fn new(tree: CrudeQuadTree, union: &Dataset, solution: &CenterSet, z: f64) -> Result<Self> {
        let cost = crate::geometry::clustering_cost(union, solution, z)?;
        let book = solution.bookkeeping.as_ref().expect("solution needs bookkeeping");
        let levels = tree.levels;
        let center_cells: Vec<Vec<Vec<i64>>> = solution
            .centers
            .iter()
            .map(|c| (0..=levels).map(|t| tree.cell(c, t)).collect())
            .collect();
        let mut center_weight = vec![HashMap::new(); levels + 1];
        for (i, cells) in center_cells.iter().enumerate() {
            for (t, cell) in cells.iter().enumerate() {
                *center_weight[t].entry(cell.clone()).or_insert(0.0) += book.served[i];
            }
        }
        let mut best: Vec<HashMap<Vec<i64>, CellBest>> = vec![HashMap::new(); levels + 1];
        let mut root_best = CellBest::default();
        for p in &union.points {
            let (swap, psi_total) = constrained_cost_with(solution, cost, z, &p.point);
            let cand = Candidate { psi: psi_total, removed: swap.removed_center, relocation: swap.relocation };
            let cells: Vec<Vec<i64>> = (0..=levels).map(|t| tree.cell(&p.point, t)).collect();
            for t in 0..=levels {
                let child = if t == 0 { Vec::new() } else { cells[t - 1].clone() };
                best[t].entry(cells[t].clone()).or_default().offer(cand, child);
            }
            root_best.offer(cand, cells[levels].clone());
        }
        Ok(RoughContext {
            tree,
            z,
            solution: solution.clone(),
            center_cells,
            center_weight,
            total_center_weight: book.served.iter().sum(),
            best,
            root_best,
            total_weight: union.total_weight(),
        })
    }

    fn center_in(&self, center: usize, level: Option<usize>, x_cells: &[Vec<i64>]) -> bool {
        match level {
            None => true,
            Some(t) => self.center_cells[center][t] == x_cells[t],
        }
    }

    /// Crude sensitivity of a point of weight `weight` located at `x`.
    pub fn estimate(&self, x: &[f64], weight: f64) -> SensitivityEstimate {
        let tree = &self.tree;
        let levels = tree.levels;
        let book = self.solution.bookkeeping.as_ref().expect("bookkeeping");
        let x_cells: Vec<Vec<i64>> = (0..=levels).map(|t| tree.cell(x, t)).collect();
        let sqrt_d = (tree.d as f64).sqrt();
        let mut raw: f64 = 0.0;
        for beta in 0..=levels + 1 {
            let cand = if beta == 0 {
                self.best[0].get(&x_cells[0]).and_then(|b| b.excluding(None))
            } else if beta <= levels {
                self.best[beta]
                    .get(&x_cells[beta])
                    .and_then(|b| b.excluding(Some(&x_cells[beta - 1])))
            } else {
                self.root_best.excluding(Some(&x_cells[levels]))
            };
            let Some(cand) = cand else { continue };
            // Weight served by centers sharing x's level-β cell, after the swap.
            let scope = (beta <= levels).then_some(beta);
            let mut n_beta = match scope {
                Some(t) => self.center_weight[t].get(&x_cells[t]).copied().unwrap_or(0.0),
                None => self.total_center_weight,
            };
            let moved = book.served[cand.removed];
            if self.center_in(cand.removed, scope, &x_cells) {
                n_beta -= moved;
            }
            let target_in = match cand.relocation {
                Relocation::Center(target) => self.center_in(target, scope, &x_cells),
                Relocation::Query => true,
            };
            if target_in {
                n_beta += moved;
            }
            let r_z = pow_z(sqrt_d * tree.side(beta), self.z);
            let denom = cand.psi + n_beta.max(0.0) * r_z;
            let ratio = if denom > 0.0 { r_z / denom } else { f64::INFINITY };
            raw = raw.max(ratio);
        }
        let value = if raw > 0.0 {
            (weight * raw).min(1.0)
        } else {
            (weight / self.total_weight.max(weight)).min(1.0)
        };
        let mut factor = tree.kappa.powf(4.0);
        if !tree.status.accepted {
            factor *= pow_z(tree.zeta as f64, self.z);
        }
        SensitivityEstimate { value, raw: weight * raw, quality: Quality::Crude, claimed_factor: factor }
    }
}

/// Crude sensitivities of the batch `b` against `z_set ∪ b`.
///
/// `alpha` sets `κ = n^α`, `iota` sets `ζ = max(2, ⌈n^ι⌉)` with `n = |Z ∪ B|`.
pub fn rough_sens<R: Rng>(
    z_set: &Dataset,
    b: &[WeightedPoint],
    k: usize,
    z: f64,
    alpha: f64,
    iota: f64,
    rng: &mut R,
) -> Result<Vec<SensitivityEstimate>> {
    let mut union = z_set.clone();
    for p in b {
        union.push(p.clone())?;
    }
    if z_set.is_empty() {
        return Ok(b.iter().map(|_| SensitivityEstimate::certain()).collect());
    }
    let n = union.len();
    let zeta = branching(n, iota);
    let kappa = (n as f64).powf(alpha).max(2.0 + 1e-9);
    let delta = span_of(&union);
    let tree = build_tree_checked(&union.points, union.d, delta, zeta, kappa, default_retries(n), rng);
    let solution = local_search_medoids(&union, k, z, None, rng)?;
    let solution = crate::geometry::prepare_swap_bookkeeping(&union, &solution)?;
    let ctx = RoughContext::new(tree, &union, &solution, z)?;
    Ok(b.iter().map(|p| ctx.estimate(&p.point, p.weight)).collect())
}

/// Grid bound covering every coordinate of `x` (at least the declared `Δ`).
pub fn span_of(x: &Dataset) -> f64 {
    let hi = x
        .points
        .iter()
        .flat_map(|p| p.point.iter())
        .fold(0.0f64, |m, &v| m.max(v.abs()));
    x.delta.max(hi + 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive;

    #[test]
    fn identical_points_have_zero_tree_distance() {
        let t = CrudeQuadTree::with_shift(2, 64.0, 4, 10.0, vec![0, 0]);
        assert_eq!(t.tree_dist(&[3.0, 5.0], &[3.0, 5.0]), 0.0);
    }

    #[test]
    fn walk_levels_by_hand() {
        // d = 1, ζ = 4, s = 0. Cells at level t are floor((x + 0.5) / 4^t).
        let t = CrudeQuadTree::with_shift(1, 64.0, 4, 10.0, vec![0]);
        // 3 and 4: level 0 cells 3 and 4, level 1 cells 0 and 1, level 2 both 0.
        assert_eq!(t.first_shared_level(&[3.0], &[4.0]), 2);
        assert_eq!(t.tree_dist(&[3.0], &[4.0]), 16.0);
        // 4 and 5 share the level-1 cell [3.5, 7.5).
        assert_eq!(t.tree_dist(&[4.0], &[5.0]), 4.0);
    }

    #[test]
    fn levels_cover_delta() {
        assert_eq!(level_count(4, 64.0), 3);
        assert_eq!(level_count(4, 65.0), 4);
        assert_eq!(level_count(2, 1.0), 0);
        assert_eq!(branching(10_000, 0.25), 10);
        assert_eq!(branching(3, 0.25), 2);
    }

    #[test]
    fn single_point_is_accepted() {
        let pts = vec![WeightedPoint::unit(vec![17.0, 40.0])];
        let mut rng = derive(1, 0, 0, 0);
        let t = build_tree_checked(&pts, 2, 256.0, 4, 100.0, 10, &mut rng);
        assert!(t.status.accepted);
        assert!(t.clears_margin(&pts[0].point));
    }

    #[test]
    fn cell_weights_sum_to_total() {
        let pts: Vec<_> = (1..=20).map(|i| WeightedPoint::new(vec![i as f64 * 3.0], 0.5).unwrap()).collect();
        let mut rng = derive(2, 0, 0, 0);
        let t = build_tree_checked(&pts, 1, 64.0, 4, 3.0, 3, &mut rng);
        for lvl in 0..=t.levels {
            let mut seen = std::collections::HashSet::new();
            let mut total = 0.0;
            for p in &pts {
                if seen.insert(t.cell(&p.point, lvl)) {
                    total += t.weight_in_cell(&p.point, lvl);
                }
            }
            assert!((total - 10.0).abs() < 1e-12);
        }
    }

    #[test]
    fn singleton_stream_is_certain() {
        let z = Dataset::new(2, 64.0);
        let b = vec![WeightedPoint::unit(vec![5.0, 5.0])];
        let mut rng = derive(3, 0, 0, 0);
        let est = rough_sens(&z, &b, 1, 2.0, 0.3, 0.25, &mut rng).unwrap();
        assert_eq!(est[0].value, 1.0);
    }
}
