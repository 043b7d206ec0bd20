//! Streams integer rows through the subspace-embedding pipeline and checks
//! the decoded embedding's spectrum against the full matrix.
//!
//! `cargo run --release --example embed_stream -- [n] [p]`

use streamkit::eval::gaussian_rows;
use streamkit::rng::derive;
use streamkit::subspace::{direction_ratio_extremes, rayleigh_spectrum, EmbedConfig, EmbedPipeline, EncodedRowSet, RealMatrix};

fn main() -> streamkit::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(5_000);
    let p: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(2.0);
    let d = 10;

    let rows = gaussian_rows(n, d, 100.0, 0.5, 1 << 20, 9);
    let mut pipe = EmbedPipeline::new(EmbedConfig::new(d, p, 0.1, 9, n as u64))?;
    for r in &rows {
        pipe.update(r)?;
    }
    let bytes = pipe.current_encoded()?.to_bytes();
    let m = EncodedRowSet::from_bytes(&bytes)?.decode()?;
    let a = RealMatrix::from_integer_rows(d, &rows, 1 << 20)?;
    let (lo, hi) = if p == 2.0 {
        rayleigh_spectrum(&a, &m)?
    } else {
        direction_ratio_extremes(&a, &m, p, 2000, &mut derive(9, 0, 0, 0))?
    };
    println!("rows {n} -> retained {} ({} bytes encoded)", m.len(), bytes.len());
    println!("norm ratio range [{lo:.3}, {hi:.3}]");
    println!("{:?}", pipe.stats());
    Ok(())
}
