//! Streaming `(k, z)`-clustering: crude tree filter, batch sensitivity
//! sampling, merge-and-reduce maintenance and lazily refreshed centers.

use std::io::Read;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::encoding::{read_f64, read_u32, read_u64};
use crate::error::{Error, Result};
use crate::geometry::{CenterSet, ClusteringParams, Dataset, GridPoint, WeightedPoint};
use crate::merge_reduce::{MergeReduceConfig, MergeReduceState};
use crate::quadtree::{branching, build_tree_checked, default_retries, span_of, RoughContext};
use crate::rng::{derive, mix, module};
use crate::sensitivity::{online_sens_sampler, BatchContext};
use crate::solvers::{local_search_with, LocalSearchOptions};

pub const MAGIC: &[u8; 4] = b"PIPE";
pub const VERSION: u32 = 1;

/// When to project points before sensitivity estimation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum JlMode {
    /// Project when `d > 8·ln(n bound)`.
    Auto,
    On,
    Off,
}

/// Pipeline parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub params: ClusteringParams,
    pub d: usize,
    /// Grid bound `Δ`.
    pub grid: i64,
    /// Branching exponent `ι`: the tree uses `ζ = ⌈n^ι⌉`.
    pub iota: f64,
    /// Margin exponent `α`: `κ = n^α`, crude probabilities are inflated by `n^α`.
    pub alpha: f64,
    /// Multiplier of `λ = (dk/ε²)·ln(nΔ/ε)`.
    pub lambda_scale: f64,
    /// Points per filtering batch; `k` when unset.
    pub batch_size: Option<usize>,
    /// Upper bound on the stream length; doubled when exceeded.
    pub n_bound: u64,
    pub jl: JlMode,
    pub rough_filter: bool,
    /// Recompute centers every this many points in addition to reduce events; `0` disables.
    pub center_cadence: u64,
    /// Merge-and-reduce size constant.
    pub size_constant: f64,
    /// Merge-and-reduce block size; the reduce target when unset.
    pub block_size: Option<usize>,
    pub h_max: usize,
    /// Accuracy of the coarse tree feeding sensitivity estimates.
    pub coarse_eps: f64,
    /// Candidates per pass in internal local searches.
    pub search_candidates: usize,
    /// Constant `c` of the `ε′` schedule.
    pub eps_prime_constant: f64,
}

impl PipelineConfig {
    pub fn new(params: ClusteringParams, d: usize, grid: i64, n_bound: u64) -> Self {
        PipelineConfig {
            params,
            d,
            grid,
            iota: 0.25,
            alpha: 0.1,
            lambda_scale: 1.0,
            batch_size: None,
            n_bound: n_bound.max(2),
            jl: JlMode::Auto,
            rough_filter: true,
            center_cadence: 0,
            size_constant: 0.003,
            block_size: None,
            h_max: 4,
            coarse_eps: 0.5,
            search_candidates: 64,
            eps_prime_constant: 100.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.d == 0 || self.grid < 1 {
            return Err(Error::param("d and grid bound must be positive"));
        }
        if !(self.iota > 0.0 && self.iota <= 1.0) || !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::param("iota must lie in (0, 1] and alpha in (0, 1)"));
        }
        if !(self.lambda_scale > 0.0 && self.size_constant > 0.0) {
            return Err(Error::param("lambda scale and size constant must be positive"));
        }
        if !(self.coarse_eps > 0.0 && self.coarse_eps < 1.0) || self.h_max == 0 {
            return Err(Error::param("coarse eps must lie in (0, 1) and h_max be positive"));
        }
        Ok(())
    }

    pub fn effective_batch(&self) -> usize {
        self.batch_size.unwrap_or(self.params.k).max(1)
    }

    /// `λ = scale·(dk/ε²)·ln(nΔ/ε)` for the current bound `n`.
    pub fn lambda(&self, n_bound: u64) -> f64 {
        let p = &self.params;
        let nd = n_bound as f64 * self.grid as f64 / p.epsilon;
        self.lambda_scale * (self.d as f64 * p.k as f64 / (p.epsilon * p.epsilon)) * nd.ln().max(1.0)
    }

    fn jl_dim(&self, n_bound: u64) -> Option<usize> {
        let ln_n = (n_bound.max(2) as f64).ln();
        let m = (8.0 * ln_n).ceil() as usize;
        let on = match self.jl {
            JlMode::Off => false,
            JlMode::On => true,
            JlMode::Auto => self.d as f64 > 8.0 * ln_n,
        };
        (on && m < self.d).then_some(m)
    }

    fn tree_config(&self, eps: f64, stream: u64) -> MergeReduceConfig {
        let p = &self.params;
        let mut c = MergeReduceConfig::new(self.d, self.grid as f64, p.k, p.z, eps, p.delta, mix(p.seed, stream));
        c.h_max = self.h_max;
        c.size_constant = self.size_constant;
        c.block_size = self.block_size;
        c.n_bound = self.n_bound as f64;
        c.search_candidates = self.search_candidates;
        c.eps_prime = crate::encoding::eps_prime_schedule(
            eps,
            p.z,
            p.k,
            self.d,
            self.n_bound as f64,
            self.grid as f64,
            self.eps_prime_constant,
        );
        c
    }

    /// Configuration of the accuracy-`ε` tree.
    pub fn fine_config(&self) -> MergeReduceConfig {
        self.tree_config(self.params.epsilon, 1)
    }

    /// Configuration of the constant-accuracy tree.
    pub fn coarse_config(&self) -> MergeReduceConfig {
        self.tree_config(self.coarse_eps.max(self.params.epsilon), 2)
    }
}

/// Gaussian projection `R^d → R^m` scaled by `1/√m`.
#[derive(Clone, Debug, PartialEq)]
pub struct JlMap {
    pub d: usize,
    pub m: usize,
    rows: Vec<f64>,
}

impl JlMap {
    /// Draws the map from `seed`; `m ≥ d` gives the identity.
    pub fn new(d: usize, m: usize, seed: u64) -> Self {
        if m >= d {
            return JlMap { d, m: d, rows: Vec::new() };
        }
        let mut rng = derive(seed, module::JL, d as u64, m as u64);
        let scale = 1.0 / (m as f64).sqrt();
        let rows = (0..m * d).map(|_| rng.sample::<f64, _>(StandardNormal) * scale).collect();
        JlMap { d, m, rows }
    }

    pub fn is_identity(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        if self.is_identity() {
            return x.to_vec();
        }
        self.rows.chunks(self.d).map(|r| r.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }
}

/// Projects a grid point with `map`.
pub fn jl_project(map: &JlMap, x: &GridPoint) -> Vec<f64> {
    map.project(&x.to_real())
}

/// Counters and space measurements.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineStats {
    pub seen: u64,
    /// Points surviving the crude filter.
    pub rough_kept: u64,
    /// Points passed to merge-and-reduce.
    pub fine_kept: u64,
    pub reduce_events: u64,
    pub context_refreshes: u64,
    pub bound_doublings: u64,
    pub center_refreshes: u64,
    /// Live encoded record bytes, current and peak.
    pub live_record_bytes: u64,
    pub peak_record_bytes: u64,
    /// Live header and anchor bytes, current and peak.
    pub live_header_bytes: u64,
    pub peak_header_bytes: u64,
    pub height: u64,
}

struct SensContext {
    rough: Option<RoughContext>,
    batch: BatchContext,
    built_weight: f64,
    built_reduces: u64,
}

/// Single-writer streaming state.
pub struct Pipeline {
    pub config: PipelineConfig,
    n_bound: u64,
    jl: JlMap,
    fine: MergeReduceState,
    coarse: MergeReduceState,
    batch: Vec<WeightedPoint>,
    pending: Vec<WeightedPoint>,
    ctx: Option<SensContext>,
    centers: Option<CenterSet>,
    batches: u64,
    stats: PipelineStats,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let n_bound = config.n_bound;
        let jl = JlMap::new(config.d, config.jl_dim(n_bound).unwrap_or(config.d), config.params.seed);
        let fine = MergeReduceState::new(config.fine_config())?;
        let coarse = MergeReduceState::new(config.coarse_config())?;
        Ok(Pipeline {
            config,
            n_bound,
            jl,
            fine,
            coarse,
            batch: Vec::new(),
            pending: Vec::new(),
            ctx: None,
            centers: None,
            batches: 0,
            stats: PipelineStats::default(),
        })
    }

    pub fn stats(&self) -> &PipelineStats {
        &self.stats
    }

    pub fn n_bound(&self) -> u64 {
        self.n_bound
    }

    pub fn jl_map(&self) -> &JlMap {
        &self.jl
    }

    pub fn fine_state(&self) -> &MergeReduceState {
        &self.fine
    }

    /// Adds one unit-weight grid point.
    pub fn update(&mut self, x: &GridPoint) -> Result<()> {
        self.update_weighted(x, 1.0)
    }

    /// Adds one grid point of positive weight.
    pub fn update_weighted(&mut self, x: &GridPoint, weight: f64) -> Result<()> {
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(Error::InvalidWeight(weight));
        }
        if x.dim() != self.config.d {
            return Err(Error::Input(format!("point has {} coordinates, expected {}", x.dim(), self.config.d)));
        }
        if let Some(v) = x.coords.iter().find(|&&v| v < 1 || v > self.config.grid) {
            return Err(Error::Input(format!("coordinate {v} outside [1, {}]", self.config.grid)));
        }
        self.stats.seen += 1;
        if self.stats.seen > self.n_bound {
            self.n_bound *= 2;
            self.stats.bound_doublings += 1;
            self.ctx = None;
        }
        self.batch.push(WeightedPoint { point: x.to_real(), weight });
        if self.batch.len() >= self.config.effective_batch() {
            self.process_batch()?;
        }
        if self.config.center_cadence > 0 && self.stats.seen.is_multiple_of(self.config.center_cadence) {
            self.centers = None;
            self.current_centers()?;
        }
        Ok(())
    }

    fn context_stale(&self) -> bool {
        match &self.ctx {
            None => true,
            Some(c) => {
                self.coarse.reduce_events != c.built_reduces || self.coarse.inserted_weight > 1.5 * c.built_weight
            }
        }
    }

    fn refresh_context(&mut self) -> Result<()> {
        let z_set = self.coarse.query()?;
        if z_set.is_empty() {
            self.ctx = None;
            return Ok(());
        }
        let cfg = &self.config;
        let mut proj = Dataset::new(self.jl.m, z_set.delta);
        for p in &z_set.points {
            proj.points.push(WeightedPoint { point: self.jl.project(&p.point), weight: p.weight });
        }
        let mut rng = derive(cfg.params.seed, module::PIPELINE, mix(3, self.stats.context_refreshes), 0);
        let opts = LocalSearchOptions {
            max_iters: None,
            candidate_limit: Some(cfg.search_candidates),
            max_passes: Some(4),
        };
        let solution = local_search_with(&proj, cfg.params.k, cfg.params.z, &opts, &mut rng)?;
        let batch = BatchContext::new(proj, &solution, cfg.params.z)?;
        let rough = if cfg.rough_filter {
            let n = self.n_bound as usize;
            let zeta = branching(n, cfg.iota);
            let kappa = (n as f64).powf(cfg.alpha).max(2.0 + 1e-9);
            let tree = build_tree_checked(
                &batch.union.points,
                batch.union.d,
                span_of(&batch.union),
                zeta,
                kappa,
                default_retries(batch.union.len()),
                &mut rng,
            );
            Some(RoughContext::new(tree, &batch.union, &batch.solution, cfg.params.z)?)
        } else {
            None
        };
        self.ctx = Some(SensContext {
            rough,
            batch,
            built_weight: self.coarse.inserted_weight,
            built_reduces: self.coarse.reduce_events,
        });
        self.stats.context_refreshes += 1;
        Ok(())
    }

    fn process_batch(&mut self) -> Result<()> {
        if self.context_stale() {
            self.refresh_context()?;
        }
        let cfg = self.config.clone();
        let lambda = cfg.lambda(self.n_bound);
        let inflation = (self.n_bound as f64).powf(cfg.alpha);
        let mut rng = derive(cfg.params.seed, module::PIPELINE, self.batches, 0);
        self.batches += 1;
        for x in std::mem::take(&mut self.batch) {
            let kept = match self.ctx.as_ref().and_then(|c| c.rough.as_ref()) {
                None => Some(x),
                Some(rough) => {
                    let s = rough.estimate(&self.jl.project(&x.point), x.weight).value;
                    let p = (lambda * inflation * s).min(1.0);
                    (p >= 1.0 || rng.random::<f64>() < p).then(|| WeightedPoint { weight: x.weight / p, point: x.point })
                }
            };
            if let Some(w) = kept {
                self.stats.rough_kept += 1;
                self.pending.push(w);
            }
        }
        while self.pending.len() >= cfg.effective_batch() {
            let group: Vec<WeightedPoint> = self.pending.drain(..cfg.effective_batch()).collect();
            self.refine(group, lambda, &mut rng)?;
        }
        self.measure();
        Ok(())
    }

    fn refine<R: Rng>(&mut self, group: Vec<WeightedPoint>, lambda: f64, rng: &mut R) -> Result<()> {
        if self.context_stale() {
            self.refresh_context()?;
        }
        let before = self.fine.reduce_events + self.coarse.reduce_events;
        for w in group {
            let sigma = match &self.ctx {
                None => 1.0,
                Some(c) => c.batch.estimate(&self.jl.project(&w.point), w.weight).value,
            };
            if let Some(kept) = online_sens_sampler(&w, sigma, lambda, rng)? {
                self.stats.fine_kept += 1;
                self.fine.insert(kept.clone())?;
                self.coarse.insert(kept)?;
            }
        }
        if self.fine.reduce_events + self.coarse.reduce_events != before {
            self.centers = None;
            self.stats.reduce_events = self.fine.reduce_events;
        }
        Ok(())
    }

    fn measure(&mut self) {
        let rec = (8 + 3 * self.config.d) as u64;
        let raw = (self.fine.buffer.len() + self.coarse.buffer.len() + self.pending.len() + self.batch.len()) as u64;
        let live = (self.fine.record_bytes() + self.coarse.record_bytes()) as u64 + raw * rec;
        let header = (self.fine.header_bytes() + self.coarse.header_bytes()) as u64;
        let s = &mut self.stats;
        s.live_record_bytes = live;
        s.peak_record_bytes = s.peak_record_bytes.max(live);
        s.live_header_bytes = header;
        s.peak_header_bytes = s.peak_header_bytes.max(header);
        s.height = self.fine.height() as u64;
    }

    /// Coreset of every point seen so far.
    pub fn current_coreset(&self) -> Result<Dataset> {
        let mut out = self.fine.query()?;
        out.points.extend(self.pending.iter().cloned());
        out.points.extend(self.batch.iter().cloned());
        Ok(out)
    }

    /// Local-search centers on the current coreset, cached until the next reduce.
    pub fn current_centers(&mut self) -> Result<CenterSet> {
        if let Some(c) = &self.centers {
            return Ok(c.clone());
        }
        let coreset = self.current_coreset()?;
        if coreset.is_empty() {
            return Ok(CenterSet::new(Vec::new()));
        }
        let mut rng = derive(self.config.params.seed, module::PIPELINE, mix(4, self.stats.center_refreshes), 0);
        let c = crate::solvers::local_search_medoids(&coreset, self.config.params.k, self.config.params.z, None, &mut rng)?;
        self.stats.center_refreshes += 1;
        self.centers = Some(c.clone());
        Ok(c)
    }

    /// Writes the `PIPE` snapshot: header, config echo, counters, raw points, both trees.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let echo = serde_json::to_vec(&self.config).expect("config serializes");
        out.extend_from_slice(&(echo.len() as u32).to_le_bytes());
        out.extend_from_slice(&echo);
        out.extend_from_slice(&self.n_bound.to_le_bytes());
        out.extend_from_slice(&self.batches.to_le_bytes());
        let stats = serde_json::to_vec(&self.stats).expect("stats serialize");
        out.extend_from_slice(&(stats.len() as u32).to_le_bytes());
        out.extend_from_slice(&stats);
        let write_points = |out: &mut Vec<u8>, pts: &mut dyn Iterator<Item = (&[f64], f64)>, n: usize| {
            out.extend_from_slice(&(n as u64).to_le_bytes());
            for (p, w) in pts {
                for v in p {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                out.extend_from_slice(&w.to_le_bytes());
            }
        };
        write_points(&mut out, &mut self.batch.iter().map(|p| (p.point.as_slice(), p.weight)), self.batch.len());
        write_points(&mut out, &mut self.pending.iter().map(|p| (p.point.as_slice(), p.weight)), self.pending.len());
        let fine = self.fine.to_bytes();
        out.extend_from_slice(&(fine.len() as u64).to_le_bytes());
        out.extend_from_slice(&fine);
        out.extend_from_slice(&self.coarse.to_bytes());
        out
    }

    /// Restores a snapshot; the sensitivity context is rebuilt on the next batch.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let r = &mut &bytes[..];
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| Error::format("truncated PIPE header"))?;
        if &magic != MAGIC {
            return Err(Error::format("missing PIPE magic"));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(Error::format(format!("unsupported PIPE version {version}")));
        }
        let config: PipelineConfig = read_json(r)?;
        let mut p = Pipeline::new(config).map_err(|e| Error::format(e.to_string()))?;
        p.n_bound = read_u64(r)?;
        p.batches = read_u64(r)?;
        p.stats = read_json(r)?;
        let d = p.config.d;
        let read_points = |r: &mut &[u8]| -> Result<Vec<WeightedPoint>> {
            let n = read_u64(r)?;
            let mut v = Vec::with_capacity(n.min(1 << 20) as usize);
            for _ in 0..n {
                let point = (0..d).map(|_| read_f64(r)).collect::<Result<Vec<_>>>()?;
                let weight = read_f64(r)?;
                v.push(WeightedPoint::new(point, weight).map_err(|e| Error::format(e.to_string()))?);
            }
            Ok(v)
        };
        p.batch = read_points(r)?;
        p.pending = read_points(r)?;
        let fine_len = read_u64(r)? as usize;
        if r.len() < fine_len {
            return Err(Error::format("truncated PIPE payload"));
        }
        let (fine, rest) = r.split_at(fine_len);
        p.fine = MergeReduceState::from_bytes(fine, p.config.fine_config())?;
        p.coarse = MergeReduceState::from_bytes(rest, p.config.coarse_config())?;
        Ok(p)
    }
}

fn read_json<T: serde::de::DeserializeOwned>(r: &mut &[u8]) -> Result<T> {
    let n = read_u32(r)? as usize;
    if r.len() < n {
        return Err(Error::format("truncated JSON block"));
    }
    let (head, rest) = r.split_at(n);
    *r = rest;
    serde_json::from_slice(head).map_err(|e| Error::format(e.to_string()))
}

/// Adds `x` to the pipeline.
pub fn stream_update(pipeline: &mut Pipeline, x: &GridPoint) -> Result<()> {
    pipeline.update(x)
}

/// Coreset of the prefix seen so far.
pub fn current_coreset(pipeline: &Pipeline) -> Result<Dataset> {
    pipeline.current_coreset()
}

/// Centers for the prefix seen so far.
pub fn current_centers(pipeline: &mut Pipeline) -> Result<CenterSet> {
    pipeline.current_centers()
}

/// Streams `points` in order and returns the final centers.
pub fn offline_cluster(points: &[GridPoint], config: PipelineConfig) -> Result<CenterSet> {
    let mut p = Pipeline::new(config)?;
    for x in points {
        p.update(x)?;
    }
    p.current_centers()
}
