//! Merge-and-reduce over a weighted stream with encoded buckets.
//!
//! Points accumulate in a raw buffer. A full buffer becomes a block that is
//! encoded into the lowest free level; colliding buckets are decoded,
//! unioned, reduced by sensitivity sampling and carried one level up. The top
//! level absorbs carries instead of growing the tree past `h_max` levels.

use std::io::Read;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::{decode, encode, read_f64, read_u32, read_u64, EncodedCoreset};
use crate::error::{Error, Result};
use crate::geometry::{check_dim, CenterSet, Dataset, WeightedPoint};
use crate::rng::{derive, mix, module};
use crate::sensitivity::self_sensitivities;
use crate::solvers::{local_search_with, LocalSearchOptions};

pub const MAGIC: &[u8; 4] = b"MRST";
pub const VERSION: u32 = 1;

/// Parameters of a merge-and-reduce tree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeReduceConfig {
    pub d: usize,
    pub delta: f64,
    pub k: usize,
    pub z: f64,
    /// Overall accuracy `ε`; each level uses `ε″ = ε / (4·h_max)`.
    pub eps: f64,
    /// Overall failure probability `δ`.
    pub fail: f64,
    /// Height bound.
    pub h_max: usize,
    /// Constant `C` of the reduce target size.
    pub size_constant: f64,
    /// Block size; the reduce target size when unset.
    pub block_size: Option<usize>,
    pub eps_prime: f64,
    /// Upper bound on the stream length, used for `δ″`.
    pub n_bound: f64,
    /// Candidates per pass for the local searches inside reduces and anchor refreshes.
    pub search_candidates: usize,
    pub seed: u64,
}

impl MergeReduceConfig {
    /// Defaults for the given shape and accuracy.
    pub fn new(d: usize, delta: f64, k: usize, z: f64, eps: f64, fail: f64, seed: u64) -> Self {
        MergeReduceConfig {
            d,
            delta,
            k,
            z,
            eps,
            fail,
            h_max: 4,
            size_constant: 0.003,
            block_size: None,
            eps_prime: crate::encoding::eps_prime_schedule(eps, z, k, d, 1e6, delta, 100.0),
            n_bound: 1e6,
            search_candidates: 64,
            seed,
        }
    }

    /// Per-level accuracy `ε″ = ε / (4·h_max)`.
    pub fn eps_level(&self) -> f64 {
        self.eps / (4.0 * self.h_max as f64)
    }

    /// Per-level failure probability `δ″ = δ / ((1/ε)²·log₂(nΔ))`.
    pub fn fail_level(&self) -> f64 {
        let log_nd = (self.n_bound.max(2.0) * self.delta.max(2.0)).log2();
        self.fail / ((1.0 / self.eps).powi(2) * log_nd)
    }

    /// Reduce target size `⌈C·(k/ε″²)·(d + ln(1/δ″))·max(1, ln k)⌉`, at least `4k`.
    pub fn target_size(&self) -> usize {
        target_size(self.k, self.d, self.eps_level(), self.fail_level(), self.size_constant)
    }

    pub fn effective_block_size(&self) -> usize {
        self.block_size.unwrap_or_else(|| self.target_size()).max(1)
    }

    fn search_options(&self) -> LocalSearchOptions {
        LocalSearchOptions {
            max_iters: None,
            candidate_limit: Some(self.search_candidates),
            max_passes: Some(4),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.k == 0 || self.h_max == 0 {
            return Err(Error::param("d, k and h_max must be positive"));
        }
        if !(self.eps > 0.0 && self.eps < 1.0 && self.fail > 0.0 && self.fail < 1.0) {
            return Err(Error::param("eps and fail must lie in (0, 1)"));
        }
        if !(self.size_constant > 0.0 && self.z >= 1.0 && self.delta >= 1.0) {
            return Err(Error::param("size constant must be positive, z and delta at least 1"));
        }
        Ok(())
    }
}

/// `⌈C·(k/ε″²)·(d + ln(1/δ″))·max(1, ln k)⌉`, at least `4k`.
pub fn target_size(k: usize, d: usize, eps_level: f64, fail_level: f64, c: f64) -> usize {
    let m = c * (k as f64 / (eps_level * eps_level)) * (d as f64 + (1.0 / fail_level).ln()) * (k as f64).ln().max(1.0);
    (m.ceil() as usize).max(4 * k)
}

/// Buffer, per-level buckets and the current global anchors.
#[derive(Clone, Debug, PartialEq)]
pub struct MergeReduceState {
    pub config: MergeReduceConfig,
    pub buffer: Vec<WeightedPoint>,
    pub buckets: Vec<Option<EncodedCoreset>>,
    pub anchors: Option<CenterSet>,
    pub generation: u64,
    pub inserted: u64,
    pub inserted_weight: f64,
    pub reduce_events: u64,
}

/// Sensitivity-sampling reduction of `x` to about `C·(k/ε″²)·(d + ln(1/δ″))·ln k` points.
pub fn reduce_coreset<R: Rng>(
    x: &Dataset,
    k: usize,
    z: f64,
    eps_level: f64,
    fail_level: f64,
    size_constant: f64,
    rng: &mut R,
) -> Result<Dataset> {
    let m = target_size(k, x.d, eps_level, fail_level, size_constant);
    reduce_to_size(x, k, z, m, &LocalSearchOptions::default(), rng)
}

/// Samples each point with probability `min(1, m·ŝ/Σŝ)` and weight `w/p`.
pub fn reduce_to_size<R: Rng>(
    x: &Dataset,
    k: usize,
    z: f64,
    m: usize,
    opts: &LocalSearchOptions,
    rng: &mut R,
) -> Result<Dataset> {
    if x.len() <= m {
        return Ok(x.clone());
    }
    let support = x.support_indices();
    if support.len() == 1 {
        let p = WeightedPoint { point: x.points[0].point.clone(), weight: x.total_weight() };
        return Dataset::from_points(x.d, x.delta, vec![p]);
    }
    let sens = self_sensitivities(x, k, z, opts, rng)?;
    let total: f64 = sens.iter().map(|s| s.raw).sum();
    let mut out = Dataset::new(x.d, x.delta);
    for (p, s) in x.points.iter().zip(&sens) {
        let prob = (m as f64 * s.raw / total).min(1.0);
        if prob >= 1.0 {
            out.points.push(p.clone());
        } else if prob > 0.0 && rng.random::<f64>() < prob {
            out.points.push(WeightedPoint { point: p.point.clone(), weight: p.weight / prob });
        }
    }
    if out.is_empty() {
        let best = sens
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.raw.total_cmp(&b.1.raw))
            .map(|(i, _)| i)
            .expect("nonempty");
        out.points.push(WeightedPoint { point: x.points[best].point.clone(), weight: x.total_weight() });
    }
    Ok(out)
}

impl MergeReduceState {
    pub fn new(config: MergeReduceConfig) -> Result<Self> {
        config.validate()?;
        Ok(MergeReduceState {
            config,
            buffer: Vec::new(),
            buckets: Vec::new(),
            anchors: None,
            generation: 0,
            inserted: 0,
            inserted_weight: 0.0,
            reduce_events: 0,
        })
    }

    /// Index of the highest occupied level; `0` for an empty tree.
    pub fn height(&self) -> usize {
        self.buckets.iter().rposition(|b| b.is_some()).unwrap_or(0)
    }

    /// Bitmap of occupied levels.
    pub fn level_bitmap(&self) -> u64 {
        self.buckets
            .iter()
            .enumerate()
            .filter(|(_, b)| b.is_some())
            .fold(0, |m, (i, _)| m | (1u64 << i))
    }

    /// Records stored across all buckets.
    pub fn stored_records(&self) -> usize {
        self.buckets.iter().flatten().map(|b| b.records.len()).sum()
    }

    /// Bytes of encoded records across buckets, excluding headers and anchors.
    pub fn record_bytes(&self) -> usize {
        self.stored_records() * (8 + 3 * self.config.d)
    }

    /// Bytes of bucket headers and anchors.
    pub fn header_bytes(&self) -> usize {
        self.buckets
            .iter()
            .flatten()
            .map(|b| b.to_bytes().len() - b.records.len() * (8 + 3 * self.config.d))
            .sum()
    }

    fn decoded_union(&self, extra: &Dataset) -> Result<Dataset> {
        let mut all = extra.clone();
        for b in self.buckets.iter().flatten() {
            all.points.extend(decode(b)?.points);
        }
        all.points.extend(self.buffer.iter().cloned());
        Ok(all)
    }

    fn refresh_anchors(&mut self, carry: &Dataset) -> Result<()> {
        let union = self.decoded_union(carry)?;
        if union.is_empty() {
            return Ok(());
        }
        let mut rng = derive(self.config.seed, module::MERGE_REDUCE, mix(1, self.generation), 0);
        let anchors = local_search_with(&union, self.config.k, self.config.z, &self.config.search_options(), &mut rng)?;
        self.anchors = Some(anchors);
        self.generation += 1;
        Ok(())
    }

    fn flush_block(&mut self) -> Result<()> {
        let cfg = self.config.clone();
        let mut carry = Dataset::from_points(cfg.d, cfg.delta, std::mem::take(&mut self.buffer))?;
        if self.anchors.is_none() {
            self.refresh_anchors(&carry)?;
        }
        let mut level = 0;
        loop {
            if self.buckets.len() <= level {
                self.buckets.resize(level + 1, None);
            }
            let top = level + 1 >= cfg.h_max;
            match self.buckets[level].take() {
                None => {
                    let anchors = self.anchors.as_ref().expect("anchors set");
                    self.buckets[level] = Some(encode(&carry, anchors, cfg.eps_prime)?);
                    return Ok(());
                }
                Some(bucket) => {
                    let mut merged = decode(&bucket)?;
                    merged.points.extend(carry.points);
                    let mut rng = derive(cfg.seed, module::MERGE_REDUCE, mix(2, self.reduce_events), level as u64);
                    carry = reduce_to_size(&merged, cfg.k, cfg.z, cfg.target_size(), &cfg.search_options(), &mut rng)?;
                    self.reduce_events += 1;
                    self.refresh_anchors(&carry)?;
                    if !top {
                        level += 1;
                    }
                }
            }
        }
    }

    /// Appends one weighted point, flushing a full buffer into the tree.
    pub fn insert(&mut self, w: WeightedPoint) -> Result<()> {
        check_dim(self.config.d, w.point.len())?;
        if !(w.weight > 0.0 && w.weight.is_finite()) {
            return Err(Error::InvalidWeight(w.weight));
        }
        self.inserted += 1;
        self.inserted_weight += w.weight;
        self.buffer.push(w);
        if self.buffer.len() >= self.config.effective_block_size() {
            self.flush_block()?;
        }
        Ok(())
    }

    /// Decoded union of all buckets and the raw buffer.
    pub fn query(&self) -> Result<Dataset> {
        self.decoded_union(&Dataset::new(self.config.d, self.config.delta))
    }

    /// Writes the `MRST` snapshot.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.config.effective_block_size() as u32).to_le_bytes());
        out.extend_from_slice(&self.level_bitmap().to_le_bytes());
        out.extend_from_slice(&(self.config.d as u32).to_le_bytes());
        out.extend_from_slice(&self.config.delta.to_le_bytes());
        out.extend_from_slice(&self.inserted.to_le_bytes());
        out.extend_from_slice(&self.inserted_weight.to_le_bytes());
        out.extend_from_slice(&self.generation.to_le_bytes());
        out.extend_from_slice(&self.reduce_events.to_le_bytes());
        out.extend_from_slice(&(self.buffer.len() as u64).to_le_bytes());
        for p in &self.buffer {
            for v in &p.point {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(&p.weight.to_le_bytes());
        }
        match &self.anchors {
            None => out.extend_from_slice(&0u32.to_le_bytes()),
            Some(a) => {
                out.extend_from_slice(&(a.len() as u32).to_le_bytes());
                for c in &a.centers {
                    for v in c {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
        }
        for b in self.buckets.iter().flatten() {
            b.write_to(&mut out).expect("writing to a vector cannot fail");
        }
        out
    }

    /// Reads an `MRST` snapshot written with the same configuration.
    pub fn read_from(r: &mut impl Read, config: MergeReduceConfig) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| Error::format("truncated MRST header"))?;
        if &magic != MAGIC {
            return Err(Error::format("missing MRST magic"));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(Error::format(format!("unsupported MRST version {version}")));
        }
        let block = read_u32(r)? as usize;
        let bitmap = read_u64(r)?;
        let d = read_u32(r)? as usize;
        let delta = read_f64(r)?;
        if d != config.d || block != config.effective_block_size() || delta != config.delta {
            return Err(Error::format("MRST snapshot does not match the configuration"));
        }
        let inserted = read_u64(r)?;
        let inserted_weight = read_f64(r)?;
        let generation = read_u64(r)?;
        let reduce_events = read_u64(r)?;
        let nbuf = read_u64(r)?;
        let mut buffer = Vec::with_capacity(nbuf.min(1 << 20) as usize);
        for _ in 0..nbuf {
            let point = (0..d).map(|_| read_f64(r)).collect::<Result<Vec<_>>>()?;
            let weight = read_f64(r)?;
            buffer.push(WeightedPoint::new(point, weight).map_err(|e| Error::format(e.to_string()))?);
        }
        let na = read_u32(r)? as usize;
        let anchors = if na == 0 {
            None
        } else {
            let mut centers = Vec::with_capacity(na);
            for _ in 0..na {
                centers.push((0..d).map(|_| read_f64(r)).collect::<Result<Vec<_>>>()?);
            }
            Some(CenterSet::new(centers))
        };
        let levels = 64 - bitmap.leading_zeros() as usize;
        let mut buckets = vec![None; levels];
        for (i, slot) in buckets.iter_mut().enumerate() {
            if bitmap & (1 << i) != 0 {
                let b = EncodedCoreset::read_from(r)?;
                if b.d != d {
                    return Err(Error::format("bucket dimension mismatch"));
                }
                *slot = Some(b);
            }
        }
        Ok(MergeReduceState { config, buffer, buckets, anchors, generation, inserted, inserted_weight, reduce_events })
    }

    pub fn from_bytes(bytes: &[u8], config: MergeReduceConfig) -> Result<Self> {
        let mut cursor = bytes;
        let s = Self::read_from(&mut cursor, config)?;
        if !cursor.is_empty() {
            return Err(Error::format("trailing bytes after MRST payload"));
        }
        Ok(s)
    }
}

/// Appends `w` to the tree.
pub fn mr_insert(state: &mut MergeReduceState, w: WeightedPoint) -> Result<()> {
    state.insert(w)
}

/// Current coreset of everything inserted.
pub fn mr_query(state: &MergeReduceState) -> Result<Dataset> {
    state.query()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(block: usize) -> MergeReduceConfig {
        let mut c = MergeReduceConfig::new(2, 1024.0, 2, 2.0, 0.2, 0.01, 5);
        c.block_size = Some(block);
        c.size_constant = 1e-6;
        c.eps_prime = 0.001;
        c
    }

    fn point(i: usize) -> WeightedPoint {
        WeightedPoint::unit(vec![1.0 + (i * 37 % 500) as f64, 1.0 + (i * 91 % 700) as f64])
    }

    #[test]
    fn empty_state_queries_empty() {
        let s = MergeReduceState::new(config(16)).unwrap();
        assert!(s.query().unwrap().is_empty());
    }

    #[test]
    fn partial_block_is_raw() {
        let mut s = MergeReduceState::new(config(16)).unwrap();
        for i in 0..10 {
            s.insert(point(i)).unwrap();
        }
        let q = s.query().unwrap();
        assert_eq!(q.points, (0..10).map(point).collect::<Vec<_>>());
    }

    #[test]
    fn two_blocks_make_one_level_one_bucket() {
        let mut s = MergeReduceState::new(config(16)).unwrap();
        for i in 0..32 {
            s.insert(point(i)).unwrap();
        }
        assert_eq!(s.level_bitmap(), 0b10);
        assert_eq!(s.height(), 1);
        assert_eq!(s.reduce_events, 1);
    }

    #[test]
    fn height_grows_with_blocks() {
        for j in 1..=3 {
            let mut s = MergeReduceState::new(config(8)).unwrap();
            for i in 0..8 << j {
                s.insert(point(i)).unwrap();
            }
            assert_eq!(s.height(), j);
            assert_eq!(s.level_bitmap(), 1 << j);
        }
    }

    #[test]
    fn top_level_absorbs_carries() {
        let mut c = config(8);
        c.h_max = 2;
        let mut s = MergeReduceState::new(c).unwrap();
        for i in 0..8 * 9 {
            s.insert(point(i)).unwrap();
        }
        assert!(s.buckets.len() <= 2);
    }

    #[test]
    fn snapshot_roundtrip_and_determinism() {
        let mut a = MergeReduceState::new(config(8)).unwrap();
        let mut b = MergeReduceState::new(config(8)).unwrap();
        for i in 0..45 {
            a.insert(point(i)).unwrap();
            b.insert(point(i)).unwrap();
        }
        let bytes = a.to_bytes();
        assert_eq!(bytes, b.to_bytes());
        let back = MergeReduceState::from_bytes(&bytes, config(8)).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert!(MergeReduceState::from_bytes(&bytes, config(9)).is_err());
    }

    #[test]
    fn single_support_reduces_to_one_point() {
        let x = Dataset::from_unit(1, 8.0, vec![vec![3.0]; 50]).unwrap();
        let out = reduce_to_size(&x, 2, 2.0, 10, &LocalSearchOptions::default(), &mut derive(1, 0, 0, 0)).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out.points[0].weight, 50.0);
    }
}
