//! Batch sensitivity estimates against exact medoid sensitivities on a small instance.

use rand::Rng;
use streamkit::geometry::{Dataset, WeightedPoint};
use streamkit::oracle::exact_medoids_sensitivity;
use streamkit::rng::derive;
use streamkit::sensitivity::{batch_factor, batch_sens};

fn main() -> streamkit::Result<()> {
    let mut rng = derive(11, 0, 0, 0);
    let coords: Vec<Vec<f64>> = (0..40)
        .map(|i| {
            let c = if i % 3 == 0 { 40.0 } else { 200.0 };
            vec![c + rng.random_range(-10.0f64..10.0).round(), c + rng.random_range(-10.0f64..10.0).round()]
        })
        .collect();
    let all = Dataset::from_unit(2, 256.0, coords)?;
    let z_set = Dataset::from_points(2, 256.0, all.points[..30].to_vec())?;
    let batch: Vec<WeightedPoint> = all.points[30..].to_vec();

    let (k, z) = (2, 2.0);
    let est = batch_sens(&z_set, &batch, k, z, &mut rng)?;
    println!("claimed factor {:.0}", batch_factor(z));
    println!("{:>10} {:>10} {:>8}", "estimate", "exact", "ratio");
    for (j, e) in est.iter().enumerate() {
        let tau = exact_medoids_sensitivity(&all, 30 + j, k, z)?.value;
        println!("{:>10.4} {:>10.4} {:>8.3}", e.value, tau, e.value / tau);
    }
    Ok(())
}
