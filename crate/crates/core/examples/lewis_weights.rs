//! Leverage scores, Lewis weights and the preconditioner of a random matrix.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use streamkit::rng::derive;
use streamkit::subspace::{conditioning_exponent, leverage_of, lewis_of, precondition, RealMatrix};

fn main() -> streamkit::Result<()> {
    let mut rng = derive(5, 0, 0, 0);
    let (n, d) = (200, 5);
    let m = DMatrix::from_fn(n, d, |i, _| {
        let scale = if i < 5 { 30.0 } else { 1.0 };
        scale * rng.sample::<f64, _>(StandardNormal)
    });

    let lev = leverage_of(&m);
    println!("sum of leverage scores {:.10} (rank {d})", lev.iter().sum::<f64>());
    println!("leverage of the heavy rows {:?}", lev[..5].iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>());

    for p in [1.0, 1.5, 2.0, 3.0, 4.0] {
        let state = lewis_of(&m, p, 1e-10, 500)?;
        let a = RealMatrix::from_matrix(&m);
        let pre = precondition(&a, p)?;
        let c = conditioning_exponent(&a, &pre, 500, &mut rng);
        println!(
            "p {p:<3} iterations {:>3} residual {:.1e} sum {:.4} heavy row {:.3} conditioning exponent {c:.2}",
            state.iterations,
            state.residual,
            state.weights.iter().sum::<f64>(),
            state.weights[0]
        );
    }
    Ok(())
}
