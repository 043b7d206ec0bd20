//! Encodes a point set against shared anchors, round trips the binary form
//! and reports the bit accounting.

use streamkit::encoding::{decode, encode, eps_prime_schedule, measure_bits, EncodedCoreset};
use streamkit::eval::{distortion, planted_mixture, random_query_sets, to_dataset};
use streamkit::rng::derive;
use streamkit::solvers::local_search_medoids;

fn main() -> streamkit::Result<()> {
    let (n, k, grid) = (500, 3, 1i64 << 12);
    let x = to_dataset(&planted_mixture(n, 2, k, grid, 0.05, 7), 2, grid);
    let mut rng = derive(7, 0, 0, 0);
    let anchors = local_search_medoids(&x, k, 2.0, None, &mut rng)?;

    let queries = random_query_sets(&x, k, 100, &mut rng);
    let scheduled = eps_prime_schedule(0.1, 2.0, k, 2, n as f64, grid as f64, 100.0);
    println!("scheduled eps' for eps = 0.1: {scheduled:.2e}");
    for eps_prime in [0.1, 0.01, 0.001, scheduled] {
        let enc = encode(&x, &anchors, eps_prime)?;
        let bytes = enc.to_bytes();
        let back = decode(&EncodedCoreset::from_bytes(&bytes)?)?;
        let err = distortion(&x, &back, &queries, 2.0)?.max_error;
        let bits = measure_bits(&enc);
        println!(
            "eps' {eps_prime:.2e} exponent bound {:>6} packed {:>3} bits/record, serialized {} bytes, max error {err:.2e}",
            enc.exp_max,
            bits.packed_record_bits,
            bytes.len()
        );
    }
    Ok(())
}
