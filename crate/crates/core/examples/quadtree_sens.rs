//! Builds a randomly shifted wide-branching tree, compares tree distances with
//! Euclidean ones, and contrasts crude with batch sensitivities.

use streamkit::eval::{planted_mixture, to_dataset};
use streamkit::geometry::{Dataset, WeightedPoint};
use streamkit::quadtree::{branching, build_tree_checked, default_retries, rough_sens};
use streamkit::rng::derive;
use streamkit::sensitivity::batch_sens;

fn main() -> streamkit::Result<()> {
    let (n, grid) = (400, 1i64 << 12);
    let x = to_dataset(&planted_mixture(n, 2, 3, grid, 0.05, 3), 2, grid);
    let mut rng = derive(3, 0, 0, 0);

    let zeta = branching(n, 0.25);
    let kappa = (n as f64).powf(0.3);
    let tree = build_tree_checked(&x.points, 2, grid as f64 + 1.0, zeta, kappa, default_retries(n), &mut rng);
    println!("zeta {} levels {} kappa {:.1} status {:?}", tree.zeta, tree.levels, tree.kappa, tree.status);
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        let (a, b) = (&x.points[i].point, &x.points[n - 1 - i].point);
        let dist = a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
        if dist > 0.0 {
            worst = worst.max(tree.tree_dist(a, b) / dist);
        }
    }
    println!("largest tree/Euclidean ratio over 50 pairs {worst:.1} (bound {:?})", tree.dilation_bound());
    let wide = build_tree_checked(&x.points, 2, grid as f64 + 1.0, zeta, 200.0 * n as f64, default_retries(n), &mut rng);
    println!("with kappa = 200n: status {:?}, dilation bound {:?}", wide.status, wide.dilation_bound());

    let z_set = Dataset::from_points(2, grid as f64, x.points[..n - 20].to_vec())?;
    let batch: Vec<WeightedPoint> = x.points[n - 20..].to_vec();
    let rough = rough_sens(&z_set, &batch, 3, 2.0, 0.3, 0.25, &mut rng)?;
    let fine = batch_sens(&z_set, &batch, 3, 2.0, &mut rng)?;
    println!("{:>12} {:>12} {:>8}", "rough", "batch", "ratio");
    for (r, b) in rough.iter().zip(&fine).take(10) {
        println!("{:>12.3e} {:>12.3e} {:>8.2}", r.value, b.value, r.value / b.value);
    }
    Ok(())
}
