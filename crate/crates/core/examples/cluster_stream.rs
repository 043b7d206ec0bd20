//! Streams a planted mixture through the clustering pipeline and measures
//! the coreset against the full data.
//!
//! `cargo run --release --example cluster_stream -- [n] [seed]`

use streamkit::eval::{distortion, local_search_query_sets, planted_mixture, random_query_sets, to_dataset};
use streamkit::geometry::ClusteringParams;
use streamkit::pipeline::{Pipeline, PipelineConfig};
use streamkit::rng::derive;

fn main() -> streamkit::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(10_000);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);
    let (k, grid) = (5, 1i64 << 16);

    let points = planted_mixture(n, 2, k, grid, 0.03, seed);
    let params = ClusteringParams::new(k, 2.0, 0.2, 0.01, seed)?;
    let mut pipe = Pipeline::new(PipelineConfig::new(params, 2, grid, n as u64))?;
    for p in &points {
        pipe.update(p)?;
    }
    let coreset = pipe.current_coreset()?;
    let centers = pipe.current_centers()?;

    let x = to_dataset(&points, 2, grid);
    let mut rng = derive(seed, 0, 0, 0);
    let mut queries = random_query_sets(&x, k, 200, &mut rng);
    queries.extend(local_search_query_sets(&x, k, 2.0, 10, 1000, &mut rng)?);
    let report = distortion(&x, &coreset, &queries, 2.0)?;

    let stats = pipe.stats();
    println!("points          {n}");
    println!("coreset size    {}", coreset.len());
    println!("rough kept      {}", stats.rough_kept);
    println!("fine kept       {}", stats.fine_kept);
    println!("peak record B   {}", stats.peak_record_bytes);
    println!("max rel. error  {:.4}", report.max_error);
    println!("mean rel. error {:.4}", report.mean_error);
    for c in &centers.centers {
        println!("center          ({:.0}, {:.0})", c[0], c[1]);
    }
    Ok(())
}
