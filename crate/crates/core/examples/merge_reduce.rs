//! Merge-and-reduce over a raw stream with sensitivity-sampled reduces.

use streamkit::eval::{distortion, planted_mixture, random_query_sets, to_dataset};
use streamkit::geometry::WeightedPoint;
use streamkit::merge_reduce::{MergeReduceConfig, MergeReduceState};
use streamkit::rng::derive;

fn main() -> streamkit::Result<()> {
    let (n, k, grid) = (20_000, 4, 1i64 << 14);
    let points = planted_mixture(n, 2, k, grid, 0.04, 2);
    let mut config = MergeReduceConfig::new(2, grid as f64, k, 2.0, 0.2, 0.01, 2);
    config.n_bound = n as f64;
    println!("reduce target {} per node", config.target_size());
    let mut state = MergeReduceState::new(config)?;
    for (i, p) in points.iter().enumerate() {
        state.insert(WeightedPoint::unit(p.to_real()))?;
        if (i + 1) % 5000 == 0 {
            println!(
                "after {:>6} points: height {} stored {} records ({} bytes)",
                i + 1,
                state.height(),
                state.stored_records(),
                state.record_bytes()
            );
        }
    }
    let coreset = state.query()?;
    let x = to_dataset(&points, 2, grid);
    let queries = random_query_sets(&x, k, 200, &mut derive(2, 0, 0, 0));
    println!("coreset {} points, max error {:.4}", coreset.len(), distortion(&x, &coreset, &queries, 2.0)?.max_error);
    Ok(())
}
