//! Lp subspace embeddings: leverage scores, Lewis weights, preconditioned row
//! encoding, crude Gaussian sketches and the streaming row pipeline.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::encoding::{read_array, read_f64, read_u32, read_u64, ZERO_SENTINEL};
use crate::error::{Error, Result};
use crate::rng::{derive, module};

/// Rows of a real matrix with optional per-row scales.
///
/// The matrix represented is `diag(scales)·rows`; a row sampled with
/// probability `q` carries scale `(1/q)^{1/p}`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RealMatrix {
    pub d: usize,
    pub rows: Vec<Vec<f64>>,
    pub scales: Vec<f64>,
}

impl RealMatrix {
    pub fn new(d: usize) -> Self {
        RealMatrix { d, rows: Vec::new(), scales: Vec::new() }
    }

    /// Unit-scale rows of width `d`.
    pub fn from_rows(d: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut m = RealMatrix::new(d);
        for r in rows {
            m.push(r, 1.0)?;
        }
        Ok(m)
    }

    /// Integer rows with every entry in `[-bound, bound]`.
    pub fn from_integer_rows(d: usize, rows: &[Vec<i64>], bound: i64) -> Result<Self> {
        let mut m = RealMatrix::new(d);
        for r in rows {
            check_row(r, d, bound)?;
            m.push(r.iter().map(|&v| v as f64).collect(), 1.0)?;
        }
        Ok(m)
    }

    /// Unit-scale copy of the rows of `m`.
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        RealMatrix {
            d: m.ncols(),
            rows: m.row_iter().map(|r| r.iter().copied().collect()).collect(),
            scales: vec![1.0; m.nrows()],
        }
    }

    pub fn push(&mut self, row: Vec<f64>, scale: f64) -> Result<()> {
        if row.len() != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, got: row.len() });
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidWeight(scale));
        }
        self.rows.push(row);
        self.scales.push(scale);
        Ok(())
    }

    pub fn extend(&mut self, other: &RealMatrix) -> Result<()> {
        for (r, &s) in other.rows.iter().zip(&other.scales) {
            self.push(r.clone(), s)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// The scaled rows as an `n × d` matrix.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), self.d, |i, j| self.scales[i] * self.rows[i][j])
    }

    /// `‖A x‖_p^p` of the scaled matrix.
    pub fn norm_pow(&self, x: &[f64], p: f64) -> f64 {
        self.rows
            .iter()
            .zip(&self.scales)
            .map(|(r, &s)| (s * dot(r, x)).abs().powf(p))
            .sum()
    }
}

/// Checks the width and entry bound of an ingested row.
pub fn check_row(row: &[i64], d: usize, bound: i64) -> Result<()> {
    if row.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: row.len() });
    }
    if let Some(v) = row.iter().find(|v| v.unsigned_abs() > bound.unsigned_abs()) {
        return Err(Error::Input(format!("entry {v} exceeds bound {bound}")));
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn is_zero_row(m: &DMatrix<f64>, i: usize) -> bool {
    m.row(i).iter().all(|&v| v == 0.0)
}

/// Leverage scores `a_iᵀ(AᵀA)⁺a_i` of every row of the scaled matrix.
pub fn leverage_scores(a: &RealMatrix) -> Vec<f64> {
    leverage_of(&a.to_matrix())
}

/// Leverage scores of the rows of `m`, from a thin SVD.
pub fn leverage_of(m: &DMatrix<f64>) -> Vec<f64> {
    let (n, d) = m.shape();
    if n == 0 || d == 0 {
        return vec![0.0; n];
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors");
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return vec![0.0; n];
    }
    let tol = smax * n.max(d) as f64 * f64::EPSILON;
    let keep: Vec<usize> = (0..svd.singular_values.len()).filter(|&j| svd.singular_values[j] > tol).collect();
    (0..n).map(|i| keep.iter().map(|&j| u[(i, j)] * u[(i, j)]).sum::<f64>().min(1.0)).collect()
}

/// Numerical rank of `m`.
pub fn rank_of(m: &DMatrix<f64>) -> usize {
    let (n, d) = m.shape();
    if n == 0 || d == 0 {
        return 0;
    }
    let s = m.clone().singular_values();
    let smax = s.max();
    let tol = smax * n.max(d) as f64 * f64::EPSILON;
    s.iter().filter(|&&v| smax > 0.0 && v > tol).count()
}

/// Lewis weights with their fixed-point certificate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LewisState {
    pub weights: Vec<f64>,
    pub p: f64,
    /// `max_i |w_i − ℓ_i(W^{1/2−1/p}A)| / w_i` at the returned weights.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Leverage scores `ℓ_i(W^{1/2−1/p}A)` at the current weights.
fn scaled_leverage(m: &DMatrix<f64>, w: &[f64], p: f64) -> Vec<f64> {
    let e = 0.5 - 1.0 / p;
    let mut scaled = m.clone();
    for (i, &wi) in w.iter().enumerate() {
        let f = if wi > 0.0 { wi.powf(e) } else { 0.0 };
        scaled.row_mut(i).scale_mut(f);
    }
    leverage_of(&scaled)
}

/// One step `w_i ← (a_iᵀ(AᵀW^{1−2/p}A)⁺a_i)^{p/2} = (ℓ_i / w_i^{1−2/p})^{p/2}`.
fn lewis_step(w: &[f64], lev: &[f64], p: f64) -> Vec<f64> {
    w.iter()
        .zip(lev)
        .map(|(&wi, &l)| if wi > 0.0 { (l / wi.powf(1.0 - 2.0 / p)).powf(p / 2.0) } else { 0.0 })
        .collect()
}

fn max_relative_gap(w: &[f64], up: &[f64]) -> f64 {
    w.iter()
        .zip(up)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| (a - b).abs() / a)
        .fold(0.0, f64::max)
}

/// Lewis weights of the scaled matrix by fixed-point iteration from all ones.
///
/// Zero rows get weight zero. For `p ≥ 4` the update is damped with `θ = 1/2`.
pub fn lewis_weights(a: &RealMatrix, p: f64, tol: f64, max_iters: usize) -> Result<LewisState> {
    lewis_of(&a.to_matrix(), p, tol, max_iters)
}

/// [`lewis_weights`] on a dense matrix.
pub fn lewis_of(m: &DMatrix<f64>, p: f64, tol: f64, max_iters: usize) -> Result<LewisState> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::param("Lewis weights need p >= 1"));
    }
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::param("tolerance must be positive"));
    }
    let mut w: Vec<f64> = (0..m.nrows()).map(|i| if is_zero_row(m, i) { 0.0 } else { 1.0 }).collect();
    let theta = if p >= 4.0 { 0.5 } else { 1.0 };
    let mut lev = scaled_leverage(m, &w, p);
    let mut residual = max_relative_gap(&w, &lev);
    let mut iterations = 0;
    while residual >= tol && iterations < max_iters {
        let up = lewis_step(&w, &lev, p);
        w = if theta == 1.0 {
            up
        } else {
            w.iter().zip(&up).map(|(&a, &b)| a.powf(1.0 - theta) * b.powf(theta)).collect()
        };
        iterations += 1;
        lev = scaled_leverage(m, &w, p);
        residual = max_relative_gap(&w, &lev);
    }
    Ok(LewisState { weights: w, p, residual, iterations, converged: residual < tol })
}

/// Upper bounds `min(1, d^{p/2}·ξ_i^p·n^{|1/2−1/p|·p})` with `ξ_i = √ℓ_i`.
pub fn lewis_upper_bounds(m: &DMatrix<f64>, p: f64) -> Vec<f64> {
    let (n, d) = m.shape();
    let lift = (d as f64).powf(p / 2.0) * (n.max(1) as f64).powf((0.5 - 1.0 / p).abs() * p);
    leverage_of(m).into_iter().map(|l| (lift * l.powf(p / 2.0)).min(1.0)).collect()
}

/// Lewis weights, or the leverage upper bounds when the iteration does not converge.
pub fn lewis_or_bounds(m: &DMatrix<f64>, p: f64, tol: f64, max_iters: usize) -> Result<(Vec<f64>, bool)> {
    let state = lewis_of(m, p, tol, max_iters)?;
    if state.converged {
        Ok((state.weights, true))
    } else {
        Ok((lewis_upper_bounds(m, p), false))
    }
}

/// Right multiplier that makes an anchor well conditioned.
#[derive(Clone, Debug, PartialEq)]
pub struct Preconditioner {
    /// `d × d`, invertible.
    pub matrix: DMatrix<f64>,
    pub p: f64,
    pub rank: usize,
    /// False when the anchor was rank deficient and the complement of its
    /// row space was passed through unscaled.
    pub full_rank: bool,
}

/// `P = R⁻¹` from a QR factorization of `M` (`p = 2`) or of `W^{1/2−1/p}M`.
pub fn precondition(m: &RealMatrix, p: f64) -> Result<Preconditioner> {
    precondition_matrix(&m.to_matrix(), p)
}

/// [`precondition`] on a dense matrix.
pub fn precondition_matrix(m: &DMatrix<f64>, p: f64) -> Result<Preconditioner> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::param("preconditioning needs p >= 1"));
    }
    let d = m.ncols();
    if d == 0 {
        return Err(Error::param("matrix has no columns"));
    }
    let mut b = m.clone();
    if p != 2.0 && m.nrows() > 0 {
        let (w, _) = lewis_or_bounds(m, p, 1e-8, 200)?;
        let e = 0.5 - 1.0 / p;
        for (i, &wi) in w.iter().enumerate() {
            let f = if wi > 0.0 { wi.powf(e) } else { 0.0 };
            b.row_mut(i).scale_mut(f);
        }
    }
    if b.nrows() >= d {
        let r = b.clone().qr().r();
        let diag: Vec<f64> = (0..d).map(|i| r[(i, i)].abs()).collect();
        let top = diag.iter().copied().fold(0.0, f64::max);
        if top > 0.0 && diag.iter().all(|&v| v > 1e-12 * top) {
            if let Some(inv) = r.try_inverse() {
                return Ok(Preconditioner { matrix: inv, p, rank: d, full_rank: true });
            }
        }
    }
    let eig = (b.transpose() * &b).symmetric_eigen();
    let top = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let mut matrix = DMatrix::zeros(d, d);
    let mut rank = 0;
    for j in 0..d {
        let lam = eig.eigenvalues[j];
        let f = if top > 0.0 && lam > 1e-12 * top {
            rank += 1;
            1.0 / lam.sqrt()
        } else {
            1.0
        };
        matrix.set_column(j, &(eig.eigenvectors.column(j) * f));
    }
    Ok(Preconditioner { matrix, p, rank, full_rank: false })
}

/// Measured `c` with `‖x‖_p ∈ [d^{−c}, d^{c}]` whenever `‖MPx‖_p = 1`,
/// over random Gaussian directions.
pub fn conditioning_exponent<R: Rng>(
    m: &RealMatrix,
    pre: &Preconditioner,
    directions: usize,
    rng: &mut R,
) -> f64 {
    let mp = m.to_matrix() * &pre.matrix;
    let d = mp.ncols();
    let p = pre.p;
    let log_d = (d as f64).ln().max(2f64.ln());
    let norm = |v: &DVector<f64>| v.iter().map(|x| x.abs().powf(p)).sum::<f64>().powf(1.0 / p);
    let mut worst: f64 = 0.0;
    for _ in 0..directions {
        let x = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = &mp * &x;
        let (nx, ny) = (norm(&x), norm(&y));
        if nx > 0.0 && ny > 0.0 {
            worst = worst.max((nx / ny).ln().abs() / log_d);
        } else if nx > 0.0 {
            return f64::INFINITY;
        }
    }
    worst
}

/// Magic bytes of the encoded row-set format.
pub const LPE_MAGIC: &[u8; 4] = b"LPE1";
/// Format version written by [`EncodedRowSet::write_to`].
pub const LPE_VERSION: u32 = 1;

/// One encoded row: sign and exponent of every image entry plus a scale exponent.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RowRecord {
    pub signs: Vec<i8>,
    pub exponents: Vec<i16>,
    pub scale_exponent: i32,
}

/// Rows stored as exponent-rounded images `a·P` under a shared preconditioner.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedRowSet {
    pub d: usize,
    pub p: f64,
    pub eps_prime: f64,
    pub anchor: Vec<Vec<f64>>,
    pub preconditioner: DMatrix<f64>,
    pub records: Vec<RowRecord>,
}

/// Default rounding precision `ε′ = ε/(2·p·d)`.
pub fn row_eps_prime(eps: f64, d: usize, p: f64) -> f64 {
    (eps / (2.0 * p * d.max(1) as f64)).min(0.5)
}

fn quantize(v: f64, base: f64) -> Result<(i8, i16)> {
    if v == 0.0 {
        return Ok((0, ZERO_SENTINEL));
    }
    let e = (v.abs().ln() / base).round();
    if e <= ZERO_SENTINEL as f64 {
        return Ok((0, ZERO_SENTINEL));
    }
    if e > i16::MAX as f64 {
        return Err(Error::TooLarge { what: "row exponent", needed: e, guard: i16::MAX as f64 });
    }
    Ok((if v > 0.0 { 1 } else { -1 }, e as i16))
}

/// Encodes the rows of `a` against the anchor and its preconditioner.
pub fn encode_rows(a: &RealMatrix, anchor: &RealMatrix, pre: &Preconditioner, eps_prime: f64) -> Result<EncodedRowSet> {
    if !(eps_prime > 0.0 && eps_prime < 1.0) {
        return Err(Error::param("eps_prime must lie in (0, 1)"));
    }
    let d = a.d;
    if anchor.d != d || pre.matrix.nrows() != d || pre.matrix.ncols() != d {
        return Err(Error::DimensionMismatch { expected: d, got: pre.matrix.nrows() });
    }
    let base = eps_prime.ln_1p();
    let mut records = Vec::with_capacity(a.len());
    for (row, &scale) in a.rows.iter().zip(&a.scales) {
        let image = DVector::from_row_slice(row).transpose() * &pre.matrix;
        let mut signs = Vec::with_capacity(d);
        let mut exponents = Vec::with_capacity(d);
        for &v in image.iter() {
            let (s, e) = quantize(v, base)?;
            signs.push(s);
            exponents.push(e);
        }
        let scale_exponent = (scale.ln() / base).round();
        if scale_exponent.abs() > i32::MAX as f64 {
            return Err(Error::TooLarge { what: "scale exponent", needed: scale_exponent, guard: i32::MAX as f64 });
        }
        records.push(RowRecord { signs, exponents, scale_exponent: scale_exponent as i32 });
    }
    Ok(EncodedRowSet {
        d,
        p: pre.p,
        eps_prime,
        anchor: anchor.rows.iter().zip(&anchor.scales).map(|(r, s)| r.iter().map(|v| v * s).collect()).collect(),
        preconditioner: pre.matrix.clone(),
        records,
    })
}

impl EncodedRowSet {
    /// Rounded images `B′` as an `n × d` matrix.
    pub fn images(&self) -> DMatrix<f64> {
        let base = self.eps_prime.ln_1p();
        DMatrix::from_fn(self.records.len(), self.d, |i, j| {
            let r = &self.records[i];
            if r.exponents[j] == ZERO_SENTINEL || r.signs[j] == 0 {
                0.0
            } else {
                r.signs[j] as f64 * (r.exponents[j] as f64 * base).exp()
            }
        })
    }

    /// Decoded rows `B′P⁻¹` with their rounded scales.
    pub fn decode(&self) -> Result<RealMatrix> {
        let inv = self
            .preconditioner
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::format("singular preconditioner"))?;
        let rows = self.images() * inv;
        let base = self.eps_prime.ln_1p();
        let mut out = RealMatrix::new(self.d);
        for (i, r) in self.records.iter().enumerate() {
            let row = rows.row(i).iter().copied().collect();
            out.push(row, (r.scale_exponent as f64 * base).exp())?;
        }
        Ok(out)
    }

    /// Serialized size of one record.
    pub fn record_bytes(&self) -> usize {
        3 * self.d + 4
    }

    /// Serialized size excluding records.
    pub fn header_bytes(&self) -> usize {
        4 + 4 + 4 + 8 + 8 + 4 + 8 * self.d * self.anchor.len() + 8 * self.d * self.d + 8
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(LPE_MAGIC)?;
        w.write_all(&LPE_VERSION.to_le_bytes())?;
        w.write_all(&(self.d as u32).to_le_bytes())?;
        w.write_all(&self.p.to_le_bytes())?;
        w.write_all(&self.eps_prime.to_le_bytes())?;
        w.write_all(&(self.anchor.len() as u32).to_le_bytes())?;
        for row in &self.anchor {
            for v in row {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        for i in 0..self.d {
            for j in 0..self.d {
                w.write_all(&self.preconditioner[(i, j)].to_le_bytes())?;
            }
        }
        w.write_all(&(self.records.len() as u64).to_le_bytes())?;
        for r in &self.records {
            for (s, e) in r.signs.iter().zip(&r.exponents) {
                w.write_all(&s.to_le_bytes())?;
                w.write_all(&e.to_le_bytes())?;
            }
            w.write_all(&r.scale_exponent.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.header_bytes() + self.records.len() * self.record_bytes());
        self.write_to(&mut out).expect("writing to a Vec");
        out
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let magic: [u8; 4] = read_array(r)?;
        if &magic != LPE_MAGIC {
            return Err(Error::format("missing LPE1 magic"));
        }
        let version = read_u32(r)?;
        if version != LPE_VERSION {
            return Err(Error::format(format!("unsupported LPE1 version {version}")));
        }
        let d = read_u32(r)? as usize;
        let p = read_f64(r)?;
        let eps_prime = read_f64(r)?;
        if d == 0 || !(p >= 1.0 && p.is_finite()) || !(eps_prime > 0.0 && eps_prime < 1.0) {
            return Err(Error::format("invalid LPE1 header"));
        }
        let anchors = read_u32(r)? as usize;
        let mut anchor = Vec::with_capacity(anchors.min(1 << 16));
        for _ in 0..anchors {
            anchor.push((0..d).map(|_| read_f64(r)).collect::<Result<Vec<_>>>()?);
        }
        let mut pm = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                pm[(i, j)] = read_f64(r)?;
            }
        }
        let n = read_u64(r)?;
        let mut records = Vec::with_capacity(n.min(1 << 20) as usize);
        for _ in 0..n {
            let mut signs = Vec::with_capacity(d);
            let mut exponents = Vec::with_capacity(d);
            for _ in 0..d {
                let [s] = read_array::<1>(r)?;
                let s = s as i8;
                if !(-1..=1).contains(&s) {
                    return Err(Error::format(format!("invalid sign byte {s}")));
                }
                signs.push(s);
                exponents.push(i16::from_le_bytes(read_array(r)?));
            }
            let scale_exponent = i32::from_le_bytes(read_array(r)?);
            records.push(RowRecord { signs, exponents, scale_exponent });
        }
        Ok(EncodedRowSet { d, p, eps_prime, anchor, preconditioner: pm, records })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let out = Self::read_from(&mut r)?;
        if !r.is_empty() {
            return Err(Error::format("trailing bytes after LPE1 payload"));
        }
        Ok(out)
    }
}

/// `(BᵀB)^{−1/2}` of a Gram matrix, pseudo-inverted on its null space.
pub fn root_inverse(gram: &DMatrix<f64>) -> DMatrix<f64> {
    let d = gram.nrows();
    let eig = gram.clone().symmetric_eigen();
    let top = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let mut out = DMatrix::zeros(d, d);
    for j in 0..d {
        let lam = eig.eigenvalues[j];
        if top > 0.0 && lam > 1e-12 * top {
            let v = eig.eigenvectors.column(j);
            out += (v * v.transpose()) / lam.sqrt();
        }
    }
    out
}

/// Gaussian sketch vectors `Zᵀg_i` for one anchor generation.
#[derive(Clone, Debug, PartialEq)]
pub struct CrudeSketch {
    pub vectors: Vec<Vec<f64>>,
}

impl CrudeSketch {
    pub fn new<R: Rng>(z: &DMatrix<f64>, trials: usize, rng: &mut R) -> Self {
        let d = z.nrows();
        let vectors = (0..trials.max(1))
            .map(|_| {
                let g = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
                (z.transpose() * g).iter().copied().collect()
            })
            .collect();
        CrudeSketch { vectors }
    }

    /// Median over trials of `⟨g_i Z, a⟩²`.
    pub fn estimate(&self, a: &[f64]) -> f64 {
        let mut sq: Vec<f64> = self.vectors.iter().map(|v| dot(v, a).powi(2)).collect();
        sq.sort_by(f64::total_cmp);
        let m = sq.len();
        if m % 2 == 1 {
            sq[m / 2]
        } else {
            0.5 * (sq[m / 2 - 1] + sq[m / 2])
        }
    }
}

/// Crude leverage of row `a` against the anchor with root-inverse Gram `z`.
pub fn crude_leverage_sketch<R: Rng>(z: &DMatrix<f64>, a: &[f64], trials: usize, rng: &mut R) -> f64 {
    CrudeSketch::new(z, trials, rng).estimate(a)
}

/// Upper bound on the Lp sensitivity from a leverage score.
///
/// `ξ = √ℓ`; gives `ξ^p` for `p ≤ 2` and `n^{p/2−1}·ξ^p` for `p > 2`, capped at 1.
pub fn crude_lp_sensitivity(leverage: f64, p: f64, n: f64) -> f64 {
    let xi_p = leverage.clamp(0.0, 1.0).powf(p / 2.0);
    let lift = if p > 2.0 { n.max(1.0).powf(p / 2.0 - 1.0) } else { 1.0 };
    (lift * xi_p).min(1.0)
}

/// Generalized Rayleigh spectrum of `m` against `a`: the extreme eigenvalues of
/// `(AᵀA)^{−1/2}·MᵀM·(AᵀA)^{−1/2}` on the row space of `A`.
pub fn rayleigh_spectrum(a: &RealMatrix, m: &RealMatrix) -> Result<(f64, f64)> {
    if a.d != m.d {
        return Err(Error::DimensionMismatch { expected: a.d, got: m.d });
    }
    let am = a.to_matrix();
    let ga = am.transpose() * &am;
    let mm = m.to_matrix();
    let gm = mm.transpose() * &mm;
    let eig = ga.clone().symmetric_eigen();
    let top = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    if top == 0.0 {
        return Ok((1.0, 1.0));
    }
    let cols: Vec<DVector<f64>> = (0..a.d)
        .filter(|&j| eig.eigenvalues[j] > 1e-12 * top)
        .map(|j| eig.eigenvectors.column(j) / eig.eigenvalues[j].sqrt())
        .collect();
    let basis = DMatrix::from_columns(&cols);
    let sandwich = basis.transpose() * gm * &basis;
    let vals = sandwich.symmetric_eigen().eigenvalues;
    Ok((vals.min(), vals.max()))
}

/// Extremes of `‖Mx‖_p^p / ‖Ax‖_p^p` over random Gaussian directions.
pub fn direction_ratio_extremes<R: Rng>(
    a: &RealMatrix,
    m: &RealMatrix,
    p: f64,
    directions: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    if a.d != m.d {
        return Err(Error::DimensionMismatch { expected: a.d, got: m.d });
    }
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for _ in 0..directions {
        let x: Vec<f64> = (0..a.d).map(|_| rng.sample(StandardNormal)).collect();
        let truth = a.norm_pow(&x, p);
        if truth > 0.0 {
            let r = m.norm_pow(&x, p) / truth;
            lo = lo.min(r);
            hi = hi.max(r);
        }
    }
    if lo.is_infinite() {
        return Ok((1.0, 1.0));
    }
    Ok((lo, hi))
}

/// Online Lewis weights of arriving rows against the rows absorbed so far.
///
/// Keeps `Σ w_i^{1−2/p}·a_i a_iᵀ / q_i` over absorbed rows, where `q_i` is the
/// probability a row was kept with, and solves the one-row fixed point for
/// each arriving row.
#[derive(Clone, Debug)]
pub struct OnlineLewis {
    pub p: f64,
    quad: DMatrix<f64>,
    gram: DMatrix<f64>,
    inverse: Option<(DMatrix<f64>, DMatrix<f64>)>,
    absorbed: usize,
}

impl OnlineLewis {
    pub fn new(d: usize, p: f64) -> Self {
        OnlineLewis { p, quad: DMatrix::zeros(d, d), gram: DMatrix::zeros(d, d), inverse: None, absorbed: 0 }
    }

    /// Rows absorbed so far.
    pub fn absorbed(&self) -> usize {
        self.absorbed
    }

    /// Unbiased estimate of `AᵀA` from the absorbed rows.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    fn refresh(&mut self) {
        let d = self.quad.nrows();
        let eig = self.quad.clone().symmetric_eigen();
        let top = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
        let mut inv = DMatrix::zeros(d, d);
        let mut basis = Vec::new();
        for j in 0..d {
            let lam = eig.eigenvalues[j];
            if top > 0.0 && lam > 1e-12 * top {
                let v = eig.eigenvectors.column(j).into_owned();
                inv += (&v * v.transpose()) / lam;
                basis.push(v);
            }
        }
        let basis = if basis.is_empty() { DMatrix::zeros(d, 0) } else { DMatrix::from_columns(&basis) };
        self.inverse = Some((inv, basis));
    }

    /// Lewis weight of `a` within the absorbed rows plus `a`.
    pub fn weight(&mut self, a: &[f64]) -> f64 {
        if a.iter().all(|&v| v == 0.0) {
            return 0.0;
        }
        if self.inverse.is_none() {
            self.refresh();
        }
        let (inv, basis) = self.inverse.as_ref().expect("refreshed");
        let av = DVector::from_row_slice(a);
        let proj = basis * (basis.transpose() * &av);
        if (&av - proj).norm() > 1e-9 * av.norm() {
            return 1.0;
        }
        let q = (av.transpose() * inv * &av)[(0, 0)].max(0.0);
        solve_row_weight(q, self.p)
    }

    /// Adds a row kept with probability `prob` whose weight was `weight`.
    pub fn absorb(&mut self, a: &[f64], weight: f64, prob: f64) {
        let av = DVector::from_row_slice(a);
        let outer = &av * av.transpose();
        let w = weight.max(1e-300);
        self.quad += &outer * (w.powf(1.0 - 2.0 / self.p) / prob);
        self.gram += outer / prob;
        self.inverse = None;
        self.absorbed += 1;
    }
}

/// Root in `(0, 1]` of `w^{2/p} + w·q = q`.
fn solve_row_weight(q: f64, p: f64) -> f64 {
    if !q.is_finite() {
        return 1.0;
    }
    if q == 0.0 {
        return 0.0;
    }
    if p == 2.0 {
        return q / (1.0 + q);
    }
    let f = |w: f64| w.powf(2.0 / p) + w * q - q;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    hi
}

/// Weight estimator used by the online sampler.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum LewisEstimator {
    /// Lewis weight against the kept rows plus the arriving row.
    Exact,
    /// Root-score bound from a Gaussian sketch, multiplied by `inflation`.
    Crude { trials: usize, inflation: f64 },
}

/// Keeps a row with probability `min(1, λ·weight)`; returns the probability used.
pub fn lewis_keep<R: Rng>(weight: f64, lambda: f64, rng: &mut R) -> Option<f64> {
    let q = (lambda * weight).min(1.0);
    if q >= 1.0 {
        Some(1.0)
    } else if q > 0.0 && rng.random::<f64>() < q {
        Some(q)
    } else {
        None
    }
}

/// Online Lewis sampling of the rows of `a` in order.
///
/// Kept rows are scaled by `(1/q)^{1/p}`, so `‖Sx‖_p^p` is unbiased for `‖Ax‖_p^p`.
pub fn online_lewis_sampler(
    a: &RealMatrix,
    p: f64,
    lambda: f64,
    estimator: LewisEstimator,
    seed: u64,
) -> Result<RealMatrix> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::param("p must be at least 1"));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::param("lambda must be positive"));
    }
    let mut rng = derive(seed, module::SUBSPACE, 10, 0);
    let mut online = OnlineLewis::new(a.d, p);
    let mut sketch: Option<CrudeSketch> = None;
    let mut sketch_at = 0usize;
    let mut generation = 0u64;
    let n = a.len() as f64;
    let mut out = RealMatrix::new(a.d);
    for (row, &s) in a.rows.iter().zip(&a.scales) {
        let x: Vec<f64> = row.iter().map(|v| v * s).collect();
        let w = match estimator {
            LewisEstimator::Exact => online.weight(&x),
            LewisEstimator::Crude { trials, inflation } => {
                if x.iter().all(|&v| v == 0.0) {
                    0.0
                } else if online.absorbed() >= sketch_at.max(a.d) * 3 / 2 || sketch.is_none() {
                    if rank_of(online.gram()) == a.d {
                        generation += 1;
                        let z = root_inverse(online.gram());
                        sketch = Some(CrudeSketch::new(&z, trials, &mut derive(seed, module::SUBSPACE, 11, generation)));
                        sketch_at = online.absorbed();
                    }
                    crude_weight(sketch.as_ref(), &x, p, n, inflation)
                } else {
                    crude_weight(sketch.as_ref(), &x, p, n, inflation)
                }
            }
        };
        if let Some(q) = lewis_keep(w, lambda, &mut rng) {
            online.absorb(&x, w.max(f64::MIN_POSITIVE), q);
            out.push(x, (1.0 / q).powf(1.0 / p))?;
        }
    }
    Ok(out)
}

fn crude_weight(sketch: Option<&CrudeSketch>, x: &[f64], p: f64, n: f64, inflation: f64) -> f64 {
    match sketch {
        None => 1.0,
        Some(sk) => (inflation * crude_lp_sensitivity(sk.estimate(x).min(1.0), p, n)).min(1.0),
    }
}

/// Lewis-weight sampling of `x` down to about `target` rows.
///
/// Row `i` is kept with probability `min(1, target·w_i/Σw)` and rescaled by
/// `(1/q_i)^{1/p}`. Falls back to leverage upper bounds when the Lewis
/// iteration does not converge.
pub fn reduce_rows<R: Rng>(x: &RealMatrix, target: usize, p: f64, rng: &mut R) -> Result<RealMatrix> {
    if x.len() <= target {
        return Ok(x.clone());
    }
    let m = x.to_matrix();
    let (w, _) = lewis_or_bounds(&m, p, 1e-8, 200)?;
    let total: f64 = w.iter().sum();
    let mut out = RealMatrix::new(x.d);
    if total == 0.0 {
        return Ok(out);
    }
    let beta = target as f64 / total;
    for (i, &wi) in w.iter().enumerate() {
        let q = (beta * wi).min(1.0);
        if q <= 0.0 {
            continue;
        }
        if q >= 1.0 || rng.random::<f64>() < q {
            out.push(x.rows[i].clone(), x.scales[i] * (1.0 / q).powf(1.0 / p))?;
        }
    }
    Ok(out)
}

/// Configuration of the streaming row pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbedConfig {
    pub d: usize,
    pub p: f64,
    pub epsilon: f64,
    /// Failure probability.
    pub delta: f64,
    pub seed: u64,
    pub n_bound: u64,
    /// Entry bound `M` of ingested rows.
    pub entry_bound: i64,
    pub lambda_scale: f64,
    /// Exponent of the crude-path inflation `n^{2α}·d`.
    pub alpha: f64,
    pub trials: usize,
    pub crude_filter: bool,
    pub h_max: usize,
    pub size_constant: f64,
    /// Rounding precision; `None` uses [`row_eps_prime`].
    pub eps_prime: Option<f64>,
}

impl EmbedConfig {
    pub fn new(d: usize, p: f64, epsilon: f64, seed: u64, n_bound: u64) -> Self {
        EmbedConfig {
            d,
            p,
            epsilon,
            delta: 0.01,
            seed,
            n_bound,
            entry_bound: 1 << 20,
            lambda_scale: 0.04,
            alpha: 0.1,
            trials: 21,
            crude_filter: true,
            h_max: 4,
            size_constant: 0.003,
            eps_prime: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::param("d must be positive"));
        }
        if !(self.p >= 1.0 && self.p.is_finite()) {
            return Err(Error::param("p must be at least 1"));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::param("epsilon must lie in (0, 1)"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::param("delta must lie in (0, 1)"));
        }
        if self.n_bound == 0 || self.entry_bound <= 0 || self.trials == 0 || self.h_max == 0 {
            return Err(Error::param("n_bound, entry_bound, trials and h_max must be positive"));
        }
        if !(self.lambda_scale > 0.0 && self.size_constant > 0.0 && self.alpha >= 0.0) {
            return Err(Error::param("lambda_scale and size_constant must be positive, alpha nonnegative"));
        }
        if let Some(e) = self.eps_prime {
            if !(e > 0.0 && e < 1.0) {
                return Err(Error::param("eps_prime must lie in (0, 1)"));
            }
        }
        Ok(())
    }

    /// `λ = scale·d^{max(0, p/2−1)}·ln(n)/ε²`.
    pub fn lambda(&self, n_bound: u64) -> f64 {
        let d_term = (self.d as f64).powf((self.p / 2.0 - 1.0).max(0.0));
        self.lambda_scale * d_term * (n_bound.max(3) as f64).ln() / (self.epsilon * self.epsilon)
    }

    /// Crude-path inflation `n^{2α}·d`.
    pub fn inflation(&self, n_bound: u64) -> f64 {
        (n_bound.max(1) as f64).powf(2.0 * self.alpha) * self.d as f64
    }

    /// Per-level precision `ε/(4·h_max)`.
    pub fn eps_level(&self) -> f64 {
        self.epsilon / (4.0 * self.h_max as f64)
    }

    /// Reduce target `⌈C·d^{max(1,p/2)}·(ln d + ln(1/δ″))/ε″²⌉`, at least `2d`.
    pub fn target_size(&self) -> usize {
        let e = self.eps_level();
        let log_n = ((self.n_bound as f64) * self.entry_bound as f64).log2().max(1.0);
        let fail = self.delta / ((1.0 / self.epsilon).powi(2) * log_n);
        let d = self.d as f64;
        let m = self.size_constant * d.powf((self.p / 2.0).max(1.0)) * ((d + 1.0).ln() + (1.0 / fail).ln()) / (e * e);
        (m.ceil() as usize).max(2 * self.d)
    }

    pub fn eps_prime(&self) -> f64 {
        self.eps_prime.unwrap_or_else(|| row_eps_prime(self.epsilon, self.d, self.p))
    }
}

/// Counters of one embedding run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EmbedStats {
    pub rows_seen: u64,
    pub zero_rows: u64,
    pub crude_kept: u64,
    pub refined_kept: u64,
    pub sketch_generations: u64,
    pub reduce_events: u64,
    pub n_bound_doublings: u64,
    pub retained_rows: usize,
    pub peak_retained_rows: usize,
    pub anchor_rows: usize,
}

/// Merge-and-reduce over encoded row sets.
#[derive(Clone, Debug)]
struct RowTree {
    d: usize,
    p: f64,
    block: usize,
    anchor_size: usize,
    eps_prime: f64,
    seed: u64,
    buffer: RealMatrix,
    levels: Vec<Option<EncodedRowSet>>,
    events: u64,
}

impl RowTree {
    fn new(config: &EmbedConfig) -> Self {
        let d = config.d as f64;
        RowTree {
            d: config.d,
            p: config.p,
            block: config.target_size(),
            anchor_size: ((4.0 * d * (d + 1.0).ln()).ceil() as usize).max(config.d),
            eps_prime: config.eps_prime(),
            seed: config.seed,
            buffer: RealMatrix::new(config.d),
            levels: vec![None; config.h_max],
            events: 0,
        }
    }

    fn retained(&self) -> usize {
        self.buffer.len() + self.levels.iter().flatten().map(|b| b.records.len()).sum::<usize>()
    }

    fn anchor_rows(&self) -> usize {
        self.levels.iter().flatten().map(|b| b.anchor.len()).sum()
    }

    fn decoded(&self) -> Result<RealMatrix> {
        let mut out = RealMatrix::new(self.d);
        for b in self.levels.iter().flatten() {
            out.extend(&b.decode()?)?;
        }
        out.extend(&self.buffer)?;
        Ok(out)
    }

    fn insert(&mut self, row: Vec<f64>, scale: f64) -> Result<()> {
        self.buffer.push(row, scale)?;
        if self.buffer.len() < self.block {
            return Ok(());
        }
        let mut carry = std::mem::replace(&mut self.buffer, RealMatrix::new(self.d));
        let top = self.levels.len() - 1;
        for level in 0..=top {
            match self.levels[level].take() {
                None => {
                    self.levels[level] = Some(self.encode(&carry)?);
                    return Ok(());
                }
                Some(bucket) => {
                    let mut union = bucket.decode()?;
                    union.extend(&carry)?;
                    self.events += 1;
                    let mut rng = derive(self.seed, module::SUBSPACE, 20, self.events);
                    carry = reduce_rows(&union, self.block, self.p, &mut rng)?;
                    if level == top {
                        self.levels[level] = Some(self.encode(&carry)?);
                        return Ok(());
                    }
                }
            }
        }
        Ok(())
    }

    /// Encodes `rows` against an anchor refreshed from the full decoded state.
    fn encode(&self, rows: &RealMatrix) -> Result<EncodedRowSet> {
        let mut state = self.decoded()?;
        state.extend(rows)?;
        let mut rng = derive(self.seed, module::SUBSPACE, 21, self.events);
        let anchor = reduce_rows(&state, self.anchor_size, self.p, &mut rng)?;
        let pre = precondition(&anchor, self.p)?;
        encode_rows(rows, &anchor, &pre, self.eps_prime)
    }
}

/// Streaming Lp subspace embedding over integer rows.
#[derive(Clone, Debug)]
pub struct EmbedPipeline {
    config: EmbedConfig,
    n_bound: u64,
    online: OnlineLewis,
    sketch: Option<CrudeSketch>,
    sketch_at: usize,
    tree: RowTree,
    stats: EmbedStats,
    rng: ChaCha8Rng,
}

impl EmbedPipeline {
    pub fn new(config: EmbedConfig) -> Result<Self> {
        config.validate()?;
        Ok(EmbedPipeline {
            n_bound: config.n_bound,
            online: OnlineLewis::new(config.d, config.p),
            sketch: None,
            sketch_at: 0,
            tree: RowTree::new(&config),
            stats: EmbedStats::default(),
            rng: derive(config.seed, module::SUBSPACE, 1, 0),
            config,
        })
    }

    pub fn config(&self) -> &EmbedConfig {
        &self.config
    }

    pub fn stats(&self) -> &EmbedStats {
        &self.stats
    }

    pub fn n_bound(&self) -> u64 {
        self.n_bound
    }

    /// Processes one row.
    pub fn update(&mut self, row: &[i64]) -> Result<()> {
        check_row(row, self.config.d, self.config.entry_bound)?;
        self.stats.rows_seen += 1;
        if self.stats.rows_seen > self.n_bound {
            self.n_bound *= 2;
            self.stats.n_bound_doublings += 1;
        }
        if row.iter().all(|&v| v == 0) {
            self.stats.zero_rows += 1;
            return Ok(());
        }
        let a: Vec<f64> = row.iter().map(|&v| v as f64).collect();
        let lambda = self.config.lambda(self.n_bound);
        let crude = if self.config.crude_filter {
            let inflation = self.config.inflation(self.n_bound);
            let w = crude_weight(self.sketch.as_ref(), &a, self.config.p, self.n_bound as f64, 1.0);
            (lambda * inflation * w).min(1.0)
        } else {
            1.0
        };
        if crude < 1.0 && self.rng.random::<f64>() >= crude {
            return Ok(());
        }
        self.stats.crude_kept += 1;
        let w = self.online.weight(&a);
        let refined = (lambda * w).min(1.0).min(crude);
        let conditional = refined / crude;
        if conditional < 1.0 && self.rng.random::<f64>() >= conditional {
            return Ok(());
        }
        self.stats.refined_kept += 1;
        self.online.absorb(&a, w.max(f64::MIN_POSITIVE), refined);
        self.tree.insert(a, (1.0 / refined).powf(1.0 / self.config.p))?;
        self.stats.reduce_events = self.tree.events;
        self.maybe_resketch();
        self.stats.retained_rows = self.tree.retained();
        self.stats.anchor_rows = self.tree.anchor_rows();
        self.stats.peak_retained_rows = self.stats.peak_retained_rows.max(self.stats.retained_rows);
        Ok(())
    }

    fn maybe_resketch(&mut self) {
        if !self.config.crude_filter {
            return;
        }
        let absorbed = self.online.absorbed();
        let due = self.sketch.is_none() || 2 * absorbed >= 3 * self.sketch_at;
        if !due || absorbed < self.config.d || rank_of(self.online.gram()) < self.config.d {
            return;
        }
        self.stats.sketch_generations += 1;
        let z = root_inverse(self.online.gram());
        let mut rng = derive(self.config.seed, module::SUBSPACE, 2, self.stats.sketch_generations);
        self.sketch = Some(CrudeSketch::new(&z, self.config.trials, &mut rng));
        self.sketch_at = absorbed;
    }

    /// Decoded embedding of everything seen so far.
    pub fn current_embedding(&self) -> Result<RealMatrix> {
        self.tree.decoded()
    }

    /// The current embedding encoded against one anchor drawn from it.
    pub fn current_encoded(&self) -> Result<EncodedRowSet> {
        let state = self.current_embedding()?;
        let mut rng = derive(self.config.seed, module::SUBSPACE, 22, self.tree.events);
        let anchor = reduce_rows(&state, self.tree.anchor_size, self.config.p, &mut rng)?;
        let pre = if anchor.is_empty() {
            Preconditioner { matrix: DMatrix::identity(self.config.d, self.config.d), p: self.config.p, rank: 0, full_rank: false }
        } else {
            precondition(&anchor, self.config.p)?
        };
        encode_rows(&state, &anchor, &pre, self.tree.eps_prime)
    }
}

/// Feeds one row to the pipeline.
pub fn stream_embed_update(pipeline: &mut EmbedPipeline, row: &[i64]) -> Result<()> {
    pipeline.update(row)
}
