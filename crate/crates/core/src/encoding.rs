//! Offset-exponent encoding of weighted point sets against anchor centers.
//!
//! Each point is stored as its nearest anchor plus a per-coordinate signed
//! offset whose magnitude is rounded to a power of `1 + ε′`. Weights are
//! rounded the same way.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{nearest, CenterSet, Dataset, WeightedPoint};

/// Exponent stored for a zero offset.
pub const ZERO_SENTINEL: i16 = i16::MIN;
/// Largest representable exponent magnitude.
pub const MAX_EXPONENT: u32 = i16::MAX as u32;
pub const MAGIC: &[u8; 4] = b"KZC1";
pub const VERSION: u32 = 1;

/// One encoded point.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub anchor: u32,
    /// `−1`, `0` or `+1` per coordinate.
    pub signs: Vec<i8>,
    /// Offset exponents; [`ZERO_SENTINEL`] where the sign is zero.
    pub exponents: Vec<i16>,
    pub weight_exponent: i32,
}

/// A point set encoded against shared anchors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodedCoreset {
    pub d: usize,
    /// Grid bound of the source data.
    pub delta: f64,
    pub anchors: CenterSet,
    pub eps_prime: f64,
    /// Offsets use exponents in `[−exp_max, exp_max]`.
    pub exp_max: u32,
    pub records: Vec<Record>,
}

/// Largest offset ratio the exponent range must span: `d·Δ²`.
fn magnitude_span(d: usize, delta: f64) -> f64 {
    (d as f64 * delta * delta).max(std::f64::consts::E)
}

/// Exponent bound `⌈log_{1+ε′}(d·Δ²)⌉`; magnitudes in `[1/(dΔ²), dΔ²]` are representable.
pub fn exponent_bound(eps_prime: f64, d: usize, delta: f64) -> u32 {
    let e = (magnitude_span(d, delta).ln() / eps_prime.ln_1p()).ceil();
    e.min(u32::MAX as f64) as u32
}

/// Smallest `ε′` whose exponent range fits in an `i16`.
pub fn eps_prime_floor(d: usize, delta: f64) -> f64 {
    let needed = magnitude_span(d, delta).ln() / (MAX_EXPONENT as f64 - 1.0);
    needed.exp_m1() * (1.0 + 1e-9)
}

/// `ε′ = max(ε^{max(z,2)} / (c·k·(d + log₂(nΔ))), floor)`.
pub fn eps_prime_schedule(eps: f64, z: f64, k: usize, d: usize, n: f64, delta: f64, c: f64) -> f64 {
    let sched = eps.powf(z.max(2.0)) / (c * k as f64 * (d as f64 + (n.max(1.0) * delta).log2()));
    sched.max(eps_prime_floor(d, delta)).min(0.5)
}

fn round_exponent(magnitude: f64, eps_prime: f64) -> f64 {
    (magnitude.ln() / eps_prime.ln_1p()).round()
}

fn power(eps_prime: f64, e: f64) -> f64 {
    (e * eps_prime.ln_1p()).exp()
}

fn check_eps(eps_prime: f64, d: usize, delta: f64) -> Result<u32> {
    if !(eps_prime > 0.0 && eps_prime < 1.0) {
        return Err(Error::param("eps_prime must lie in (0, 1)"));
    }
    let e = exponent_bound(eps_prime, d, delta);
    if e > MAX_EXPONENT {
        return Err(Error::param(format!(
            "eps_prime {eps_prime} needs exponent range {e}, above {MAX_EXPONENT}; use at least {}",
            eps_prime_floor(d, delta)
        )));
    }
    Ok(e)
}

/// Anchors with coordinates rounded to integers, as serialized.
pub fn integral_anchors(anchors: &CenterSet) -> CenterSet {
    CenterSet::new(anchors.centers.iter().map(|c| c.iter().map(|v| v.round()).collect()).collect())
}

/// Sign and exponent of offset `y`; `down` rounds the magnitude toward zero.
fn offset_code(y: f64, eps_prime: f64, lim: f64, down: bool) -> (i8, i16) {
    let e = if y == 0.0 {
        f64::NEG_INFINITY
    } else if down {
        (y.abs().ln() / eps_prime.ln_1p()).floor()
    } else {
        round_exponent(y.abs(), eps_prime)
    };
    if e < -lim {
        (0, ZERO_SENTINEL)
    } else {
        (if y > 0.0 { 1 } else { -1 }, e.min(lim) as i16)
    }
}

fn offset_value(sign: i8, exponent: i16, eps_prime: f64) -> f64 {
    if sign == 0 {
        0.0
    } else {
        sign as f64 * power(eps_prime, exponent as f64)
    }
}

/// Encodes `p` against the nearest anchor whose decoded point keeps that
/// anchor as its nearest, so re-encoding a decoded set is the identity.
///
/// Offsets are rounded to the nearest power first; if no anchor is
/// self-consistent, magnitudes are rounded down toward the anchor, and as a
/// last resort shrunk one power at a time toward the nearest anchor.
fn encode_point(p: &WeightedPoint, anchors: &CenterSet, eps_prime: f64, exp_max: u32) -> Result<Record> {
    if !(p.weight > 0.0 && p.weight.is_finite()) {
        return Err(Error::InvalidWeight(p.weight));
    }
    let lim = exp_max as f64;
    let mut order: Vec<(f64, usize)> =
        anchors.centers.iter().enumerate().map(|(i, c)| (crate::geometry::dist2(&p.point, c), i)).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let code = |a: usize, down: bool| -> (Vec<i8>, Vec<i16>) {
        p.point.iter().zip(&anchors.centers[a]).map(|(x, c)| offset_code(x - c, eps_prime, lim, down)).unzip()
    };
    let consistent = |a: usize, signs: &[i8], exponents: &[i16]| {
        let decoded: Vec<f64> = signs
            .iter()
            .zip(exponents)
            .zip(&anchors.centers[a])
            .map(|((&s, &e), c)| c + offset_value(s, e, eps_prime))
            .collect();
        nearest(&decoded, &anchors.centers).0 == a
    };
    for down in [false, true] {
        for &(_, a) in &order {
            let (signs, exponents) = code(a, down);
            if consistent(a, &signs, &exponents) {
                return finish(p, a, signs, exponents, eps_prime);
            }
        }
    }
    // Shrink toward the nearest anchor until the decoded point maps back to it.
    let anchor = order[0].1;
    let (mut signs, mut exponents) = code(anchor, true);
    while !consistent(anchor, &signs, &exponents) {
        for (s, e) in signs.iter_mut().zip(exponents.iter_mut()) {
            if *s != 0 {
                if (*e as f64) - 1.0 < -lim {
                    (*s, *e) = (0, ZERO_SENTINEL);
                } else {
                    *e -= 1;
                }
            }
        }
    }
    finish(p, anchor, signs, exponents, eps_prime)
}

fn finish(p: &WeightedPoint, anchor: usize, signs: Vec<i8>, exponents: Vec<i16>, eps_prime: f64) -> Result<Record> {
    let we = round_exponent(p.weight, eps_prime);
    if we.abs() > i32::MAX as f64 {
        return Err(Error::InvalidWeight(p.weight));
    }
    Ok(Record { anchor: anchor as u32, signs, exponents, weight_exponent: we as i32 })
}

/// Encodes `x` against `anchors` (rounded to integer coordinates).
pub fn encode(x: &Dataset, anchors: &CenterSet, eps_prime: f64) -> Result<EncodedCoreset> {
    if anchors.is_empty() {
        return Err(Error::NoCenters);
    }
    for c in &anchors.centers {
        crate::geometry::check_dim(x.d, c.len())?;
    }
    let exp_max = check_eps(eps_prime, x.d, x.delta)?;
    let anchors = integral_anchors(anchors);
    let records = x
        .points
        .iter()
        .map(|p| encode_point(p, &anchors, eps_prime, exp_max))
        .collect::<Result<Vec<_>>>()?;
    Ok(EncodedCoreset { d: x.d, delta: x.delta, anchors, eps_prime, exp_max, records })
}

/// Encodes every part against the same anchors.
pub fn encode_against_global(parts: &[Dataset], anchors: &CenterSet, eps_prime: f64) -> Result<Vec<EncodedCoreset>> {
    parts.iter().map(|x| encode(x, anchors, eps_prime)).collect()
}

/// Reconstructs the weighted points.
pub fn decode(e: &EncodedCoreset) -> Result<Dataset> {
    let mut out = Dataset::new(e.d, e.delta);
    out.points.reserve(e.records.len());
    let lim = e.exp_max as i32;
    for (i, r) in e.records.iter().enumerate() {
        let anchor = e
            .anchors
            .centers
            .get(r.anchor as usize)
            .ok_or_else(|| Error::format(format!("record {i}: anchor {} out of range", r.anchor)))?;
        if r.signs.len() != e.d || r.exponents.len() != e.d {
            return Err(Error::format(format!("record {i}: wrong coordinate count")));
        }
        let mut point = Vec::with_capacity(e.d);
        for ((&s, &ex), &c) in r.signs.iter().zip(&r.exponents).zip(anchor) {
            let y = match s {
                0 if ex == ZERO_SENTINEL => 0.0,
                1 | -1 if (ex as i32).abs() <= lim => offset_value(s, ex, e.eps_prime),
                _ => return Err(Error::format(format!("record {i}: bad offset code ({s}, {ex})"))),
            };
            point.push(c + y);
        }
        let weight = power(e.eps_prime, r.weight_exponent as f64);
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(Error::format(format!("record {i}: weight exponent out of range")));
        }
        out.points.push(WeightedPoint { point, weight });
    }
    Ok(out)
}

/// Bit accounting for an encoded coreset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitReport {
    pub header_bits: u64,
    pub anchor_bits: u64,
    pub records: u64,
    /// `⌈log₂ k⌉ + d·(2 + ⌈log₂(2E+1)⌉) + ⌈log₂(2E+1)⌉`.
    pub packed_record_bits: u64,
    /// Bytes per record in the binary format, times eight.
    pub serialized_record_bits: u64,
    /// Size of the binary serialization in bits.
    pub total_serialized_bits: u64,
}

fn ceil_log2(x: u64) -> u64 {
    if x <= 1 {
        0
    } else {
        64 - (x - 1).leading_zeros() as u64
    }
}

/// Header bytes: magic, version, d, k, ε′, exponent bound, Δ, record count.
const HEADER_BYTES: u64 = 4 + 4 + 4 + 4 + 8 + 4 + 8 + 8;

/// Counts the bits of `e` in packed and serialized form.
pub fn measure_bits(e: &EncodedCoreset) -> BitReport {
    let k = e.anchors.len() as u64;
    let d = e.d as u64;
    let range = ceil_log2(2 * e.exp_max as u64 + 1);
    let packed = ceil_log2(k) + d * (2 + range) + range;
    let serialized = 8 * (4 + 3 * d + 4);
    let header_bits = 8 * HEADER_BYTES;
    let anchor_bits = 64 * k * d;
    let records = e.records.len() as u64;
    BitReport {
        header_bits,
        anchor_bits,
        records,
        packed_record_bits: packed,
        serialized_record_bits: serialized,
        total_serialized_bits: header_bits + anchor_bits + records * serialized,
    }
}

pub(crate) fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| Error::format(format!("truncated input: {e}")))?;
    Ok(b)
}

pub(crate) fn read_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

pub(crate) fn read_u64(r: &mut impl Read) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(r)?))
}

pub(crate) fn read_i64(r: &mut impl Read) -> Result<i64> {
    Ok(i64::from_le_bytes(read_array(r)?))
}

pub(crate) fn read_f64(r: &mut impl Read) -> Result<f64> {
    Ok(f64::from_le_bytes(read_array(r)?))
}

impl EncodedCoreset {
    /// Writes the `KZC1` binary form.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.d as u32).to_le_bytes())?;
        w.write_all(&(self.anchors.len() as u32).to_le_bytes())?;
        w.write_all(&self.eps_prime.to_le_bytes())?;
        w.write_all(&self.exp_max.to_le_bytes())?;
        w.write_all(&self.delta.to_le_bytes())?;
        for c in &self.anchors.centers {
            for &v in c {
                w.write_all(&(v as i64).to_le_bytes())?;
            }
        }
        w.write_all(&(self.records.len() as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.records.len() * (8 + 3 * self.d));
        for r in &self.records {
            buf.extend_from_slice(&r.anchor.to_le_bytes());
            for (&s, &e) in r.signs.iter().zip(&r.exponents) {
                buf.push(s as u8);
                buf.extend_from_slice(&e.to_le_bytes());
            }
            buf.extend_from_slice(&r.weight_exponent.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    /// Serializes to bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a vector cannot fail");
        out
    }

    /// Reads the `KZC1` binary form.
    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let magic: [u8; 4] = read_array(r)?;
        if &magic != MAGIC {
            return Err(Error::format("missing KZC1 magic"));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(Error::format(format!("unsupported KZC1 version {version}")));
        }
        let d = read_u32(r)? as usize;
        let k = read_u32(r)? as usize;
        let eps_prime = read_f64(r)?;
        let exp_max = read_u32(r)?;
        let delta = read_f64(r)?;
        if d == 0 || !(eps_prime > 0.0 && eps_prime < 1.0) || exp_max > MAX_EXPONENT {
            return Err(Error::format("invalid KZC1 header"));
        }
        let mut centers = Vec::with_capacity(k);
        for _ in 0..k {
            let c = (0..d).map(|_| read_i64(r).map(|v| v as f64)).collect::<Result<Vec<_>>>()?;
            centers.push(c);
        }
        let n = read_u64(r)?;
        let mut records = Vec::with_capacity(n.min(1 << 20) as usize);
        for _ in 0..n {
            let anchor = read_u32(r)?;
            let mut signs = Vec::with_capacity(d);
            let mut exponents = Vec::with_capacity(d);
            for _ in 0..d {
                let [s]: [u8; 1] = read_array(r)?;
                signs.push(s as i8);
                exponents.push(i16::from_le_bytes(read_array(r)?));
            }
            let weight_exponent = i32::from_le_bytes(read_array(r)?);
            records.push(Record { anchor, signs, exponents, weight_exponent });
        }
        let e = EncodedCoreset { d, delta, anchors: CenterSet::new(centers), eps_prime, exp_max, records };
        decode(&e)?;
        Ok(e)
    }

    /// Parses bytes produced by [`EncodedCoreset::to_bytes`].
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = bytes;
        let e = Self::read_from(&mut cursor)?;
        if !cursor.is_empty() {
            return Err(Error::format("trailing bytes after KZC1 payload"));
        }
        Ok(e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn anchors() -> CenterSet {
        CenterSet::new(vec![vec![10.0, 10.0], vec![50.0, 50.0]])
    }

    #[test]
    fn anchor_point_roundtrips_exactly() {
        let x = Dataset::from_unit(2, 64.0, vec![vec![10.0, 10.0]]).unwrap();
        let e = encode(&x, &anchors(), 0.1).unwrap();
        assert_eq!(e.records[0].signs, vec![0, 0]);
        assert_eq!(e.records[0].exponents, vec![ZERO_SENTINEL, ZERO_SENTINEL]);
        assert_eq!(e.records[0].weight_exponent, 0);
        assert_eq!(decode(&e).unwrap(), x);
    }

    #[test]
    fn offset_ten_at_one_tenth() {
        let x = Dataset::from_unit(2, 64.0, vec![vec![20.0, 10.0]]).unwrap();
        let e = encode(&x, &anchors(), 0.1).unwrap();
        // ln 10 / ln 1.1 = 24.16, so the exponent is 24 and 1.1^24 = 9.8497.
        assert_eq!(e.records[0].exponents[0], 24);
        let y = decode(&e).unwrap().points[0].point[0] - 10.0;
        assert!((y - 9.849732675807628).abs() < 1e-9);
        assert!((y - 10.0).abs() <= 1.0);
    }

    #[test]
    fn empty_records_decode_empty() {
        let x = Dataset::new(2, 64.0);
        let e = encode(&x, &anchors(), 0.1).unwrap();
        assert!(decode(&e).unwrap().is_empty());
        let r = measure_bits(&e);
        assert_eq!(r.total_serialized_bits, r.header_bits + r.anchor_bits);
    }

    #[test]
    fn rejects_bad_weight_and_eps() {
        let x = Dataset::from_unit(2, 64.0, vec![vec![1.0, 1.0]]).unwrap();
        assert!(encode(&x, &anchors(), 0.0).is_err());
        assert!(encode(&x, &anchors(), 1e-9).is_err());
        assert!(encode(&x, &CenterSet::new(vec![]), 0.1).is_err());
    }

    #[test]
    fn malformed_records_are_rejected() {
        let x = Dataset::from_unit(2, 64.0, vec![vec![12.0, 9.0]]).unwrap();
        let mut e = encode(&x, &anchors(), 0.1).unwrap();
        e.records[0].anchor = 7;
        assert!(matches!(decode(&e), Err(Error::Format(_))));
        let mut e = encode(&x, &anchors(), 0.1).unwrap();
        e.records[0].signs[0] = 0;
        assert!(matches!(decode(&e), Err(Error::Format(_))));
    }

    #[test]
    fn binary_roundtrip() {
        let x = Dataset::from_points(
            2,
            64.0,
            vec![WeightedPoint::new(vec![12.0, 9.0], 3.5).unwrap(), WeightedPoint::unit(vec![60.0, 33.0])],
        )
        .unwrap();
        let e = encode(&x, &anchors(), 0.01).unwrap();
        let bytes = e.to_bytes();
        assert_eq!(bytes.len() as u64 * 8, measure_bits(&e).total_serialized_bits);
        assert_eq!(EncodedCoreset::from_bytes(&bytes).unwrap(), e);
        assert!(EncodedCoreset::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn schedule_respects_floor() {
        let floor = eps_prime_floor(2, 65536.0);
        assert!(exponent_bound(floor, 2, 65536.0) <= MAX_EXPONENT);
        let e = eps_prime_schedule(0.2, 2.0, 5, 2, 20000.0, 65536.0, 100.0);
        assert_eq!(e, floor);
        let loose = eps_prime_schedule(0.5, 1.0, 1, 1, 2.0, 4.0, 1.0);
        assert!(loose > floor);
    }
}
