//! Tensor-train format.
//!
//! A d-tensor is stored as a chain of third-order cores G_k of shape
//! (r_{k-1}, n_k, r_k) with boundary ranks r_0 = r_d = 1; the entry at a
//! multi-index is the product of the corresponding core slices. For d=2
//! this is an ordinary low-rank matrix factorization. The zero tensor is
//! a dedicated flag (an empty core list), never a degenerate chain.
//!
//! Construction from dense data runs a sequential SVD over unfoldings;
//! rounding runs a left-to-right QR canonicalization followed by a
//! right-to-left truncated-SVD sweep. Both accept either a rank-chain
//! budget or a relative tolerance, with per-unfolding threshold
//! eps*norm/sqrt(d-1) so the relative-error contract holds end to end.
//! Grid transfer (`ext`/`ave`) acts fiber-wise on each core and leaves
//! the rank chain untouched.

use crate::dense::{check_element_count, element_limit, DenseTensor};
use crate::error::{Error, Result};
use crate::linalg::{qr_thin, rank_floor, svd, Mat};

/// Internal rank chain of a TT tensor: d-1 positive entries, or the
/// dedicated zero marker.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TtRanks {
    Zero,
    Chain(Vec<usize>),
}

impl TtRanks {
    pub fn max(&self) -> usize {
        match self {
            TtRanks::Zero => 0,
            TtRanks::Chain(c) => c.iter().copied().max().unwrap_or(1),
        }
    }
}

/// Truncation budget: cap every internal rank, or bound the relative
/// reconstruction error.
#[derive(Clone, Debug, PartialEq)]
pub enum Truncation {
    Ranks(Vec<usize>),
    Tolerance(f64),
}

/// TT core of shape (left, n, right), row-major with `right` fastest.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Core {
    pub left: usize,
    pub n: usize,
    pub right: usize,
    pub a: Vec<f64>,
}

impl Core {
    pub(crate) fn zeros(left: usize, n: usize, right: usize) -> Self {
        Core {
            left,
            n,
            right,
            a: vec![0.0; left * n * right],
        }
    }

    #[inline]
    pub(crate) fn at(&self, l: usize, i: usize, r: usize) -> f64 {
        self.a[(l * self.n + i) * self.right + r]
    }

    #[inline]
    pub(crate) fn at_mut(&mut self, l: usize, i: usize, r: usize) -> &mut f64 {
        &mut self.a[(l * self.n + i) * self.right + r]
    }

    /// View as a (left*n) x right matrix.
    fn as_left_mat(&self) -> Mat {
        Mat {
            rows: self.left * self.n,
            cols: self.right,
            a: self.a.clone(),
        }
    }

    /// View as a left x (n*right) matrix.
    fn as_right_mat(&self) -> Mat {
        Mat {
            rows: self.left,
            cols: self.n * self.right,
            a: self.a.clone(),
        }
    }
}

/// Tensor in tensor-train form. An empty core list encodes the zero
/// tensor; otherwise adjacent core ranks chain and the boundary ranks
/// are 1.
#[derive(Clone, Debug, PartialEq)]
pub struct TtTensor {
    shape: Vec<usize>,
    pub(crate) cores: Vec<Core>,
}

impl TtTensor {
    pub fn zero(shape: Vec<usize>) -> Self {
        TtTensor {
            shape,
            cores: Vec::new(),
        }
    }

    pub(crate) fn from_cores(shape: Vec<usize>, cores: Vec<Core>) -> Result<Self> {
        if cores.len() != shape.len() {
            return Err(Error::InvalidRanks(format!(
                "{} cores for order {}",
                cores.len(),
                shape.len()
            )));
        }
        let mut left = 1usize;
        for (k, c) in cores.iter().enumerate() {
            if c.left != left || c.n != shape[k] || c.a.len() != c.left * c.n * c.right {
                return Err(Error::InvalidRanks(format!(
                    "core {k} has shape ({}, {}, {}), expected left {left}, mode {}",
                    c.left, c.n, c.right, shape[k]
                )));
            }
            if c.right == 0 {
                return Err(Error::InvalidRanks(
                    "zero rank in chain; use the zero tensor".into(),
                ));
            }
            left = c.right;
        }
        if left != 1 {
            return Err(Error::InvalidRanks(format!("boundary rank {left} != 1")));
        }
        Ok(TtTensor { shape, cores })
    }

    /// Rank-1 tensor from one vector per mode.
    pub fn rank_one(factors: &[Vec<f64>]) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::InvalidShape {
                shape: vec![],
                reason: "rank-one tensor needs at least one factor".into(),
            });
        }
        let shape: Vec<usize> = factors.iter().map(|f| f.len()).collect();
        let cores = factors
            .iter()
            .map(|f| Core {
                left: 1,
                n: f.len(),
                right: 1,
                a: f.clone(),
            })
            .collect();
        TtTensor::from_cores(shape, cores)
    }

    pub fn is_zero(&self) -> bool {
        self.cores.is_empty()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn ranks(&self) -> TtRanks {
        if self.is_zero() {
            TtRanks::Zero
        } else {
            TtRanks::Chain(
                self.cores[..self.cores.len() - 1]
                    .iter()
                    .map(|c| c.right)
                    .collect(),
            )
        }
    }

    /// Number of stored scalars across all cores.
    pub fn param_count(&self) -> usize {
        self.cores.iter().map(|c| c.a.len()).sum()
    }

    fn require_same_shape(&self, other: &TtTensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }

    /// TT-SVD of a dense tensor under a rank or tolerance budget.
    pub fn svd(t: &DenseTensor, trunc: &Truncation) -> Result<TtTensor> {
        let d = t.order();
        let shape = t.shape().to_vec();
        if let Truncation::Ranks(chain) = trunc {
            if chain.len() != d.saturating_sub(1) {
                return Err(Error::InvalidRanks(format!(
                    "chain has {} entries for order {d}",
                    chain.len()
                )));
            }
            if chain.contains(&0) {
                return Ok(TtTensor::zero(shape));
            }
        }
        let norm = t.frobenius_norm();
        if norm == 0.0 {
            return Ok(TtTensor::zero(shape));
        }
        let delta = match trunc {
            Truncation::Tolerance(eps) => {
                if *eps < 0.0 {
                    return Err(Error::InvalidRanks(format!("negative tolerance {eps}")));
                }
                eps * norm / ((d.max(2) - 1) as f64).sqrt()
            }
            Truncation::Ranks(_) => 0.0,
        };

        let mut carry = t.data().to_vec();
        let mut r_left = 1usize;
        let mut cores: Vec<Core> = Vec::with_capacity(d);
        for k in 0..d - 1 {
            let rows = r_left * shape[k];
            let cols = carry.len() / rows;
            let mat = Mat::from_vec(rows, cols, carry)?;
            let dec = svd(&mat);
            let r = truncation_rank(&dec.s, rows, cols, trunc.chain_entry(k), delta);
            if r == 0 {
                return Ok(TtTensor::zero(shape));
            }
            let kmin = dec.s.len();
            let mut core = Core::zeros(r_left, shape[k], r);
            for row in 0..rows {
                for j in 0..r {
                    core.a[row * r + j] = dec.u.a[row * kmin + j];
                }
            }
            cores.push(core);
            let mut next = vec![0.0f64; r * cols];
            for j in 0..r {
                let s = dec.s[j];
                for col in 0..cols {
                    next[j * cols + col] = s * dec.vt.a[j * cols + col];
                }
            }
            carry = next;
            r_left = r;
        }
        cores.push(Core {
            left: r_left,
            n: shape[d - 1],
            right: 1,
            a: carry,
        });
        TtTensor::from_cores(shape, cores)
    }

    /// Reduce ranks to a budget: left-to-right QR canonicalization, then
    /// right-to-left SVD truncation. Never increases any chain entry.
    pub fn round(&self, trunc: &Truncation) -> Result<TtTensor> {
        let d = self.order();
        if let Truncation::Ranks(chain) = trunc {
            if chain.len() != d.saturating_sub(1) {
                return Err(Error::InvalidRanks(format!(
                    "chain has {} entries for order {d}",
                    chain.len()
                )));
            }
            if chain.contains(&0) {
                return Ok(TtTensor::zero(self.shape.clone()));
            }
        }
        if let Truncation::Tolerance(eps) = trunc {
            if *eps < 0.0 {
                return Err(Error::InvalidRanks(format!("negative tolerance {eps}")));
            }
        }
        if self.is_zero() || d == 1 {
            return Ok(self.clone());
        }

        let mut cores = self.cores.clone();
        for k in 0..d - 1 {
            let (q, r_mat) = qr_thin(&cores[k].as_left_mat());
            let new_rank = q.cols;
            cores[k] = Core {
                left: cores[k].left,
                n: cores[k].n,
                right: new_rank,
                a: q.a,
            };
            let next = r_mat.matmul(&cores[k + 1].as_right_mat());
            cores[k + 1] = Core {
                left: new_rank,
                n: cores[k + 1].n,
                right: cores[k + 1].right,
                a: next.a,
            };
        }
        let norm = cores[d - 1].as_left_mat().frob_norm();
        if norm == 0.0 {
            return Ok(TtTensor::zero(self.shape.clone()));
        }
        let delta = match trunc {
            Truncation::Tolerance(eps) => eps * norm / ((d - 1) as f64).sqrt(),
            Truncation::Ranks(_) => 0.0,
        };

        for k in (1..d).rev() {
            let mat = cores[k].as_right_mat();
            let dec = svd(&mat);
            let r = truncation_rank(&dec.s, mat.rows, mat.cols, trunc.chain_entry(k - 1), delta);
            if r == 0 {
                return Ok(TtTensor::zero(self.shape.clone()));
            }
            let kmin = dec.s.len();
            cores[k] = Core {
                left: r,
                n: cores[k].n,
                right: cores[k].right,
                a: dec.vt.a[..r * mat.cols].to_vec(),
            };
            // carry = U[:, :r] * diag(s[:r]) folds into the left neighbor.
            let mut carry = Mat::zeros(mat.rows, r);
            for row in 0..mat.rows {
                for j in 0..r {
                    carry.a[row * r + j] = dec.u.a[row * kmin + j] * dec.s[j];
                }
            }
            let merged = cores[k - 1].as_left_mat().matmul(&carry);
            cores[k - 1] = Core {
                left: cores[k - 1].left,
                n: cores[k - 1].n,
                right: r,
                a: merged.a,
            };
        }
        TtTensor::from_cores(self.shape.clone(), cores)
    }

    pub fn to_dense(&self) -> Result<DenseTensor> {
        let count: u128 = self.shape.iter().map(|&n| n as u128).product();
        check_element_count(count, element_limit())?;
        if self.is_zero() {
            return DenseTensor::zeros(self.shape.clone());
        }
        // Accumulator holds a (prefix, r) matrix, prefix over leading modes.
        let mut acc: Vec<f64> = vec![1.0];
        let mut acc_rows = 1usize;
        for core in &self.cores {
            let mut next = vec![0.0f64; acc_rows * core.n * core.right];
            for p in 0..acc_rows {
                for l in 0..core.left {
                    let w = acc[p * core.left + l];
                    if w == 0.0 {
                        continue;
                    }
                    let src = &core.a[l * core.n * core.right..(l + 1) * core.n * core.right];
                    let dst =
                        &mut next[p * core.n * core.right..(p + 1) * core.n * core.right];
                    for (dv, &sv) in dst.iter_mut().zip(src) {
                        *dv += w * sv;
                    }
                }
            }
            acc = next;
            acc_rows *= core.n;
        }
        DenseTensor::new(self.shape.clone(), acc)
    }

    pub fn add(&self, other: &TtTensor) -> Result<TtTensor> {
        self.require_same_shape(other)?;
        if self.is_zero() {
            return Ok(other.clone());
        }
        if other.is_zero() {
            return Ok(self.clone());
        }
        let d = self.order();
        if d == 1 {
            let mut core = self.cores[0].clone();
            for (x, y) in core.a.iter_mut().zip(&other.cores[0].a) {
                *x += y;
            }
            return TtTensor::from_cores(self.shape.clone(), vec![core]);
        }
        let mut cores = Vec::with_capacity(d);
        for k in 0..d {
            let a = &self.cores[k];
            let b = &other.cores[k];
            let n = a.n;
            let core = if k == 0 {
                let mut c = Core::zeros(1, n, a.right + b.right);
                for i in 0..n {
                    for r in 0..a.right {
                        *c.at_mut(0, i, r) = a.at(0, i, r);
                    }
                    for r in 0..b.right {
                        *c.at_mut(0, i, a.right + r) = b.at(0, i, r);
                    }
                }
                c
            } else if k == d - 1 {
                let mut c = Core::zeros(a.left + b.left, n, 1);
                for l in 0..a.left {
                    for i in 0..n {
                        *c.at_mut(l, i, 0) = a.at(l, i, 0);
                    }
                }
                for l in 0..b.left {
                    for i in 0..n {
                        *c.at_mut(a.left + l, i, 0) = b.at(l, i, 0);
                    }
                }
                c
            } else {
                let mut c = Core::zeros(a.left + b.left, n, a.right + b.right);
                for l in 0..a.left {
                    for i in 0..n {
                        for r in 0..a.right {
                            *c.at_mut(l, i, r) = a.at(l, i, r);
                        }
                    }
                }
                for l in 0..b.left {
                    for i in 0..n {
                        for r in 0..b.right {
                            *c.at_mut(a.left + l, i, a.right + r) = b.at(l, i, r);
                        }
                    }
                }
                c
            };
            cores.push(core);
        }
        TtTensor::from_cores(self.shape.clone(), cores)
    }

    pub fn sub(&self, other: &TtTensor) -> Result<TtTensor> {
        self.add(&other.scale(-1.0))
    }

    /// Elementwise product; rank chains multiply.
    pub fn hadamard(&self, other: &TtTensor) -> Result<TtTensor> {
        self.require_same_shape(other)?;
        if self.is_zero() || other.is_zero() {
            return Ok(TtTensor::zero(self.shape.clone()));
        }
        let mut cores = Vec::with_capacity(self.cores.len());
        for (a, b) in self.cores.iter().zip(&other.cores) {
            let mut c = Core::zeros(a.left * b.left, a.n, a.right * b.right);
            for la in 0..a.left {
                for lb in 0..b.left {
                    let l = la * b.left + lb;
                    for i in 0..a.n {
                        for ra in 0..a.right {
                            let av = a.at(la, i, ra);
                            if av == 0.0 {
                                continue;
                            }
                            for rb in 0..b.right {
                                *c.at_mut(l, i, ra * b.right + rb) = av * b.at(lb, i, rb);
                            }
                        }
                    }
                }
            }
            cores.push(c);
        }
        TtTensor::from_cores(self.shape.clone(), cores)
    }

    pub fn scale(&self, alpha: f64) -> TtTensor {
        if self.is_zero() || alpha == 0.0 {
            return TtTensor::zero(self.shape.clone());
        }
        let mut cores = self.cores.clone();
        for x in &mut cores[0].a {
            *x *= alpha;
        }
        TtTensor {
            shape: self.shape.clone(),
            cores,
        }
    }

    /// Frobenius norm via left-to-right QR canonicalization; no dense
    /// materialization.
    pub fn norm(&self) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        let d = self.order();
        if d == 1 {
            return self.cores[0].a.iter().map(|x| x * x).sum::<f64>().sqrt();
        }
        let mut cores = self.cores.clone();
        for k in 0..d - 1 {
            let (q, r_mat) = qr_thin(&cores[k].as_left_mat());
            let new_rank = q.cols;
            let next = r_mat.matmul(&cores[k + 1].as_right_mat());
            cores[k] = Core {
                left: cores[k].left,
                n: cores[k].n,
                right: new_rank,
                a: q.a,
            };
            cores[k + 1] = Core {
                left: new_rank,
                n: cores[k + 1].n,
                right: cores[k + 1].right,
                a: next.a,
            };
        }
        cores[d - 1].a.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Inner product by chain contraction.
    pub fn inner(&self, other: &TtTensor) -> Result<f64> {
        self.require_same_shape(other)?;
        if self.is_zero() || other.is_zero() {
            return Ok(0.0);
        }
        // m[a][b] carries the contraction of the processed prefix.
        let mut m = vec![1.0f64];
        let mut ra = 1usize;
        let mut rb = 1usize;
        for (ca, cb) in self.cores.iter().zip(&other.cores) {
            // t[b][i][a'] = sum_a m[a][b] * ca[a,i,a']
            let mut t = vec![0.0f64; rb * ca.n * ca.right];
            for a in 0..ra {
                for b in 0..rb {
                    let w = m[a * rb + b];
                    if w == 0.0 {
                        continue;
                    }
                    for i in 0..ca.n {
                        for ap in 0..ca.right {
                            t[(b * ca.n + i) * ca.right + ap] += w * ca.at(a, i, ap);
                        }
                    }
                }
            }
            // m'[a'][b'] = sum_{b,i} t[b][i][a'] * cb[b,i,b']
            let mut next = vec![0.0f64; ca.right * cb.right];
            for b in 0..rb {
                for i in 0..cb.n {
                    for ap in 0..ca.right {
                        let tv = t[(b * ca.n + i) * ca.right + ap];
                        if tv == 0.0 {
                            continue;
                        }
                        for bp in 0..cb.right {
                            next[ap * cb.right + bp] += tv * cb.at(b, i, bp);
                        }
                    }
                }
            }
            m = next;
            ra = ca.right;
            rb = cb.right;
        }
        Ok(m[0])
    }

    /// Contract mode `j` (1-based) against a vector; the contracted core
    /// merges into a neighbor. An order-1 input yields shape `[1]`.
    pub fn mode_contract(&self, j: usize, v: &[f64]) -> Result<TtTensor> {
        let d = self.order();
        if j == 0 || j > d {
            return Err(Error::BadModeIndex { mode: j, order: d });
        }
        let j0 = j - 1;
        if v.len() != self.shape[j0] {
            return Err(Error::LengthMismatch {
                len: v.len(),
                expected: self.shape[j0],
            });
        }
        let mut out_shape: Vec<usize> = self
            .shape
            .iter()
            .enumerate()
            .filter(|&(m, _)| m != j0)
            .map(|(_, &n)| n)
            .collect();
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        if self.is_zero() {
            return Ok(TtTensor::zero(out_shape));
        }
        let g = &self.cores[j0];
        // m[l][r] = sum_i v[i] g[l,i,r]
        let mut m = Mat::zeros(g.left, g.right);
        for l in 0..g.left {
            for (i, &w) in v.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                for r in 0..g.right {
                    m.a[l * g.right + r] += w * g.at(l, i, r);
                }
            }
        }
        if d == 1 {
            return TtTensor::from_cores(
                out_shape,
                vec![Core {
                    left: 1,
                    n: 1,
                    right: 1,
                    a: vec![m.a[0]],
                }],
            );
        }
        let mut cores: Vec<Core> = Vec::with_capacity(d - 1);
        if j0 == 0 {
            // Fold into the right neighbor.
            let merged = m.matmul(&self.cores[1].as_right_mat());
            cores.push(Core {
                left: 1,
                n: self.cores[1].n,
                right: self.cores[1].right,
                a: merged.a,
            });
            cores.extend(self.cores[2..].iter().cloned());
        } else {
            cores.extend(self.cores[..j0 - 1].iter().cloned());
            let merged = self.cores[j0 - 1].as_left_mat().matmul(&m);
            cores.push(Core {
                left: self.cores[j0 - 1].left,
                n: self.cores[j0 - 1].n,
                right: g.right,
                a: merged.a,
            });
            cores.extend(self.cores[j0 + 1..].iter().cloned());
        }
        TtTensor::from_cores(out_shape, cores)
    }

    /// Block extension applied fiber-wise to every core; the rank chain
    /// is unchanged and the result reconstructs to `ext` of the dense
    /// equivalent.
    pub fn ext(&self, l: usize, bs: usize) -> Result<TtTensor> {
        if bs < 2 {
            return Err(Error::BadBatchSize(bs));
        }
        if l == 0 {
            return Ok(self.clone());
        }
        let f = bs
            .checked_pow(l as u32)
            .ok_or_else(|| Error::InvalidConfig(format!("bs^l overflows: {bs}^{l}")))?;
        let shape: Vec<usize> = self.shape.iter().map(|&n| n * f).collect();
        if self.is_zero() {
            return Ok(TtTensor::zero(shape));
        }
        let cores = self
            .cores
            .iter()
            .map(|c| {
                let mut out = Core::zeros(c.left, c.n * f, c.right);
                for lft in 0..c.left {
                    for i_out in 0..c.n * f {
                        let i_in = i_out / f;
                        for r in 0..c.right {
                            *out.at_mut(lft, i_out, r) = c.at(lft, i_in, r);
                        }
                    }
                }
                out
            })
            .collect();
        TtTensor::from_cores(shape, cores)
    }

    /// Block averaging applied fiber-wise to every core.
    pub fn ave(&self, l: usize, bs: usize) -> Result<TtTensor> {
        if bs < 2 {
            return Err(Error::BadBatchSize(bs));
        }
        if l == 0 {
            return Ok(self.clone());
        }
        let f = bs
            .checked_pow(l as u32)
            .ok_or_else(|| Error::InvalidConfig(format!("bs^l overflows: {bs}^{l}")))?;
        for (m, &n) in self.shape.iter().enumerate() {
            if n % f != 0 {
                return Err(Error::NonDivisible {
                    size: n,
                    divisor: f,
                    mode: m + 1,
                    shift: l,
                });
            }
        }
        let shape: Vec<usize> = self.shape.iter().map(|&n| n / f).collect();
        if self.is_zero() {
            return Ok(TtTensor::zero(shape));
        }
        let inv = 1.0 / f as f64;
        let cores = self
            .cores
            .iter()
            .map(|c| {
                let mut out = Core::zeros(c.left, c.n / f, c.right);
                for lft in 0..c.left {
                    for i_in in 0..c.n {
                        let i_out = i_in / f;
                        for r in 0..c.right {
                            *out.at_mut(lft, i_out, r) += inv * c.at(lft, i_in, r);
                        }
                    }
                }
                out
            })
            .collect();
        TtTensor::from_cores(shape, cores)
    }
}

impl Truncation {
    fn chain_entry(&self, k: usize) -> Option<usize> {
        match self {
            Truncation::Ranks(chain) => Some(chain[k]),
            Truncation::Tolerance(_) => None,
        }
    }
}

/// How many singular values to keep: respect the rank cap if any,
/// drop numerical zeros, and in tolerance mode keep the shortest head
/// whose discarded tail stays within `delta`.
fn truncation_rank(s: &[f64], rows: usize, cols: usize, cap: Option<usize>, delta: f64) -> usize {
    if s.is_empty() || s[0] == 0.0 {
        return 0;
    }
    let floor = rank_floor(s[0], rows, cols);
    let nonzero = s.iter().take_while(|&&x| x > floor).count();
    match cap {
        Some(c) => c.min(nonzero),
        None => {
            let mut tail = 0.0f64;
            let d2 = delta * delta;
            let mut keep = nonzero;
            for i in (0..nonzero).rev() {
                let t = tail + s[i] * s[i];
                if t <= d2 {
                    tail = t;
                    keep = i;
                } else {
                    break;
                }
            }
            keep
        }
    }
}
