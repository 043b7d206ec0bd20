//! Exact oracles on tiny fixtures: optimal medoids, medoid sensitivities,
//! grid clustering sensitivities and Lp sensitivities.

use nalgebra::DMatrix;
use streamkit::geometry::Dataset;
use streamkit::oracle::{exact_lp_sensitivity, exact_medoids_opt, exact_medoids_sensitivity, grid_clustering_sensitivity};

fn main() -> streamkit::Result<()> {
    let x = Dataset::from_unit(
        2,
        16.0,
        vec![vec![1.0, 1.0], vec![2.0, 1.0], vec![1.0, 2.0], vec![12.0, 12.0], vec![13.0, 12.0], vec![16.0, 1.0]],
    )?;
    let (centers, cost) = exact_medoids_opt(&x, 2, 2.0)?;
    println!("2-medoids cost {cost} centers {:?}", centers.centers);
    println!("{:>6} {:>10} {:>10}", "point", "medoid", "grid");
    let total: f64 = (0..x.len())
        .map(|i| {
            let tau = exact_medoids_sensitivity(&x, i, 2, 2.0).map(|s| s.value).unwrap_or(f64::NAN);
            let s = grid_clustering_sensitivity(&x, i, 2, 2.0, Some(1.0)).map(|s| s.value).unwrap_or(f64::NAN);
            println!("{i:>6} {tau:>10.4} {s:>10.4}");
            tau
        })
        .sum();
    println!("total medoid sensitivity {total:.3}");

    let a = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
    for p in [1.0, 2.0, 3.0] {
        let s: Vec<String> = (0..4)
            .map(|t| exact_lp_sensitivity(&a, t, p, Some(5000), 0).map(|v| format!("{:.3}", v.value)).unwrap_or_default())
            .collect();
        println!("L{p} sensitivities {s:?}");
    }
    Ok(())
}
