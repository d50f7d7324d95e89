//! The multiresolution format: one compressed payload per grid scale.
//!
//! A tensor is represented as sum over k of ext_{L-k}(T_k), where T_k
//! lives on the level-k grid (level 0 coarsest, level L finest) and is
//! stored in a single base format, TT or CP, for the whole stack.
//! Storing coarse levels on shrunken grids is what buys compression.
//!
//! The compressed operations respect that grading: addition is
//! level-wise, rounding spreads a global tolerance over levels with the
//! weight that makes the aggregate error bound hold after extension,
//! the Hadamard product runs on running prefix sums, and mode
//! contraction pushes averaged vectors down to each level. None of them
//! materialize the dense tensor.

use crate::cp::CpTensor;
use crate::dense::{check_element_count, element_limit, DenseTensor, GridSpec};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tt::{Truncation, TtTensor};

/// Base compression format used on every level of an [`MsTensor`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaseFormat {
    Tt,
    Cp,
}

impl BaseFormat {
    pub fn name(&self) -> &'static str {
        match self {
            BaseFormat::Tt => "tt",
            BaseFormat::Cp => "cp",
        }
    }
}

/// One level's compressed tensor.
#[derive(Clone, Debug)]
pub enum Payload {
    Tt(TtTensor),
    Cp(CpTensor),
}

impl Payload {
    pub fn zero(format: BaseFormat, shape: Vec<usize>) -> Payload {
        match format {
            BaseFormat::Tt => Payload::Tt(TtTensor::zero(shape)),
            BaseFormat::Cp => Payload::Cp(CpTensor::zero(shape)),
        }
    }

    pub fn format(&self) -> BaseFormat {
        match self {
            Payload::Tt(_) => BaseFormat::Tt,
            Payload::Cp(_) => BaseFormat::Cp,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            Payload::Tt(t) => t.shape(),
            Payload::Cp(c) => c.shape(),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Payload::Tt(t) => t.is_zero(),
            Payload::Cp(c) => c.is_zero(),
        }
    }

    pub fn norm(&self) -> f64 {
        match self {
            Payload::Tt(t) => t.norm(),
            Payload::Cp(c) => c.norm(),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Payload::Tt(t) => t.param_count(),
            Payload::Cp(c) => c.param_count(),
        }
    }

    pub fn to_dense(&self) -> Result<DenseTensor> {
        match self {
            Payload::Tt(t) => t.to_dense(),
            Payload::Cp(c) => c.to_dense(),
        }
    }

    pub fn add(&self, other: &Payload) -> Result<Payload> {
        match (self, other) {
            (Payload::Tt(a), Payload::Tt(b)) => Ok(Payload::Tt(a.add(b)?)),
            (Payload::Cp(a), Payload::Cp(b)) => Ok(Payload::Cp(a.add(b)?)),
            _ => Err(Error::FormatMismatch(
                "cannot add TT and CP payloads".into(),
            )),
        }
    }

    pub fn scale(&self, alpha: f64) -> Payload {
        match self {
            Payload::Tt(t) => Payload::Tt(t.scale(alpha)),
            Payload::Cp(c) => Payload::Cp(c.scale(alpha)),
        }
    }

    pub fn ext(&self, l: usize, bs: usize) -> Result<Payload> {
        match self {
            Payload::Tt(t) => Ok(Payload::Tt(t.ext(l, bs)?)),
            Payload::Cp(c) => Ok(Payload::Cp(c.ext(l, bs)?)),
        }
    }

    pub fn mode_contract(&self, j: usize, v: &[f64]) -> Result<Payload> {
        match self {
            Payload::Tt(t) => Ok(Payload::Tt(t.mode_contract(j, v)?)),
            Payload::Cp(c) => Ok(Payload::Cp(c.mode_contract(j, v)?)),
        }
    }

    pub fn inner(&self, other: &Payload) -> Result<f64> {
        match (self, other) {
            (Payload::Tt(a), Payload::Tt(b)) => a.inner(b),
            (Payload::Cp(a), Payload::Cp(b)) => a.inner(b),
            _ => Err(Error::FormatMismatch(
                "cannot mix TT and CP payloads".into(),
            )),
        }
    }

    fn as_tt(&self) -> Result<&TtTensor> {
        match self {
            Payload::Tt(t) => Ok(t),
            Payload::Cp(_) => Err(Error::UnsupportedBase {
                format: "cp",
                op: "tt-only operation",
            }),
        }
    }
}

/// Per-level rank budget. `Uniform(r)` is a CP rank, or a TT chain
/// (r, ..., r) clipped to what the level's grid can support. A zero
/// entry pins the level to the zero tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LevelRank {
    Uniform(usize),
    Chain(Vec<usize>),
}

impl LevelRank {
    /// Concrete TT chain for a level of the given shape, clipped to the
    /// maximal feasible chain. Returns the chain and whether clipping
    /// changed anything.
    pub fn tt_chain(&self, shape: &[usize]) -> Result<(Vec<usize>, bool)> {
        let d = shape.len();
        let raw: Vec<usize> = match self {
            LevelRank::Uniform(r) => vec![*r; d.saturating_sub(1)],
            LevelRank::Chain(c) => {
                if c.len() != d.saturating_sub(1) {
                    return Err(Error::InvalidRanks(format!(
                        "chain {:?} for order {d}",
                        c
                    )));
                }
                c.clone()
            }
        };
        let mut clipped = false;
        let mut out = raw;
        for (k, r) in out.iter_mut().enumerate() {
            let left: usize = shape[..=k].iter().product();
            let right: usize = shape[k + 1..].iter().product();
            let cap = left.min(right);
            if *r > cap {
                *r = cap;
                clipped = true;
            }
        }
        Ok((out, clipped))
    }

    pub fn cp_rank(&self) -> Result<usize> {
        match self {
            LevelRank::Uniform(r) => Ok(*r),
            LevelRank::Chain(_) => Err(Error::InvalidRanks(
                "CP levels take scalar ranks, not chains".into(),
            )),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            LevelRank::Uniform(r) => *r == 0,
            LevelRank::Chain(c) => c.contains(&0),
        }
    }
}

/// Rank budget per scale, coarsest first; length L+1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RankVector(pub Vec<LevelRank>);

impl RankVector {
    pub fn uniform(levels: usize, r: usize) -> Self {
        RankVector(vec![LevelRank::Uniform(r); levels + 1])
    }

    pub fn from_scalars(rs: &[usize]) -> Self {
        RankVector(rs.iter().map(|&r| LevelRank::Uniform(r)).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Parameter accounting for one [`MsTensor`].
#[derive(Clone, Debug)]
pub struct StorageReport {
    pub per_level: Vec<usize>,
    pub total_parameters: usize,
    pub dense_elements: u128,
    /// dense element count / stored parameter count.
    pub compression_ratio: f64,
}

/// Multiresolution tensor: a grid hierarchy plus one payload per level.
#[derive(Clone, Debug)]
pub struct MsTensor {
    grid: GridSpec,
    format: BaseFormat,
    levels: Vec<Payload>,
}

impl MsTensor {
    pub fn new(grid: GridSpec, format: BaseFormat, levels: Vec<Payload>) -> Result<Self> {
        if levels.len() != grid.levels() + 1 {
            return Err(Error::RankVectorLength {
                got: levels.len(),
                expected: grid.levels() + 1,
            });
        }
        for (k, p) in levels.iter().enumerate() {
            if p.format() != format {
                return Err(Error::FormatMismatch(format!(
                    "level {k} payload is {}, tensor is {}",
                    p.format().name(),
                    format.name()
                )));
            }
            let want = grid.scale_shape(k);
            if p.shape() != want.as_slice() {
                return Err(Error::GridMismatch(format!(
                    "level {k} payload shape {:?}, expected {:?}",
                    p.shape(),
                    want
                )));
            }
        }
        Ok(MsTensor {
            grid,
            format,
            levels,
        })
    }

    pub fn zero(grid: GridSpec, format: BaseFormat) -> Self {
        let levels = (0..=grid.levels())
            .map(|k| Payload::zero(format, grid.scale_shape(k)))
            .collect();
        MsTensor {
            grid,
            format,
            levels,
        }
    }

    /// Embed a finest-level tensor: every coarser level zero.
    pub fn from_finest(grid: GridSpec, payload: Payload) -> Result<Self> {
        let format = payload.format();
        let mut levels: Vec<Payload> = (0..grid.levels())
            .map(|k| Payload::zero(format, grid.scale_shape(k)))
            .collect();
        levels.push(payload);
        MsTensor::new(grid, format, levels)
    }

    /// Random instance with the requested per-level ranks, each nonzero
    /// level normalized to unit Frobenius norm.
    pub fn random(
        grid: &GridSpec,
        format: BaseFormat,
        ranks: &RankVector,
        rng: &mut Rng,
    ) -> Result<Self> {
        if ranks.len() != grid.levels() + 1 {
            return Err(Error::RankVectorLength {
                got: ranks.len(),
                expected: grid.levels() + 1,
            });
        }
        let mut levels = Vec::with_capacity(ranks.len());
        for (k, budget) in ranks.0.iter().enumerate() {
            let shape = grid.scale_shape(k);
            if budget.is_zero() {
                levels.push(Payload::zero(format, shape));
                continue;
            }
            let dense = DenseTensor::random_normal(shape.clone(), &mut rng.fork(k as u64))?;
            let payload = match format {
                BaseFormat::Tt => {
                    let (chain, _) = budget.tt_chain(&shape)?;
                    let t = TtTensor::svd(&dense, &Truncation::Ranks(chain))?;
                    let norm = t.norm();
                    Payload::Tt(if norm > 0.0 { t.scale(1.0 / norm) } else { t })
                }
                BaseFormat::Cp => {
                    let r = budget.cp_rank()?;
                    let mut local = rng.fork(1000 + k as u64);
                    let weights = vec![1.0; r];
                    let factors = shape
                        .iter()
                        .map(|&n| {
                            crate::linalg::Mat::from_vec(n, r, local.normal_vec(n * r)).unwrap()
                        })
                        .collect();
                    let c = CpTensor::from_terms(shape, weights, factors)?;
                    let norm = c.norm();
                    Payload::Cp(if norm > 0.0 { c.scale(1.0 / norm) } else { c })
                }
            };
            levels.push(payload);
        }
        MsTensor::new(grid.clone(), format, levels)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn format(&self) -> BaseFormat {
        self.format
    }

    pub fn levels(&self) -> &[Payload] {
        &self.levels
    }

    pub fn level(&self, k: usize) -> &Payload {
        &self.levels[k]
    }

    pub(crate) fn set_level(&mut self, k: usize, payload: Payload) {
        debug_assert_eq!(payload.shape(), self.grid.scale_shape(k).as_slice());
        self.levels[k] = payload;
    }

    fn require_compatible(&self, other: &MsTensor) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch(format!(
                "{:?} vs {:?}",
                self.grid, other.grid
            )));
        }
        if self.format != other.format {
            return Err(Error::FormatMismatch(format!(
                "{} vs {}",
                self.format.name(),
                other.format.name()
            )));
        }
        Ok(())
    }

    /// Dense value: sum over levels of ext_{L-k}(T_k).
    pub fn reconstruct(&self) -> Result<DenseTensor> {
        check_element_count(self.grid.dense_elements(), element_limit())?;
        let mut acc = DenseTensor::zeros(self.grid.base_shape().to_vec())?;
        let bs = self.grid.batch_size();
        let l = self.grid.levels();
        for (k, p) in self.levels.iter().enumerate() {
            if p.is_zero() {
                continue;
            }
            let e = p.to_dense()?.ext(l - k, bs)?;
            acc = acc.add(&e)?;
        }
        Ok(acc)
    }

    /// Reconstruction restricted to a set of levels.
    pub fn partial_reconstruct(&self, scales: &[usize]) -> Result<DenseTensor> {
        check_element_count(self.grid.dense_elements(), element_limit())?;
        let l = self.grid.levels();
        let mut seen = vec![false; l + 1];
        for &k in scales {
            if k > l {
                return Err(Error::BadLevel { level: k, max: l });
            }
            seen[k] = true;
        }
        let mut acc = DenseTensor::zeros(self.grid.base_shape().to_vec())?;
        let bs = self.grid.batch_size();
        for (k, p) in self.levels.iter().enumerate() {
            if !seen[k] || p.is_zero() {
                continue;
            }
            acc = acc.add(&p.to_dense()?.ext(l - k, bs)?)?;
        }
        Ok(acc)
    }

    /// Level-wise sum; reconstructions add exactly.
    pub fn add(&self, other: &MsTensor) -> Result<MsTensor> {
        self.require_compatible(other)?;
        let levels = self
            .levels
            .iter()
            .zip(&other.levels)
            .map(|(a, b)| a.add(b))
            .collect::<Result<Vec<_>>>()?;
        MsTensor::new(self.grid.clone(), self.format, levels)
    }

    pub fn scale(&self, alpha: f64) -> MsTensor {
        MsTensor {
            grid: self.grid.clone(),
            format: self.format,
            levels: self.levels.iter().map(|p| p.scale(alpha)).collect(),
        }
    }

    /// Round every level, spreading `eps` so the total reconstruction
    /// error stays within eps * sum_k ||T_k||. Level k is rounded at
    /// relative tolerance bs^(-d(L-k)/2) * eps, offsetting the norm
    /// growth ext_{L-k} applies to the per-level error. TT base only.
    pub fn round(&self, eps: f64) -> Result<MsTensor> {
        if self.format != BaseFormat::Tt {
            return Err(Error::UnsupportedBase {
                format: "cp",
                op: "round",
            });
        }
        if eps < 0.0 {
            return Err(Error::InvalidRanks(format!("negative tolerance {eps}")));
        }
        let d = self.grid.order() as f64;
        let bs = self.grid.batch_size() as f64;
        let l = self.grid.levels();
        let mut levels = Vec::with_capacity(self.levels.len());
        for (k, p) in self.levels.iter().enumerate() {
            let tol = eps * bs.powf(-d * (l - k) as f64 / 2.0);
            levels.push(Payload::Tt(p.as_tt()?.round(&Truncation::Tolerance(tol))?));
        }
        MsTensor::new(self.grid.clone(), self.format, levels)
    }

    /// Elementwise product in compressed form via running prefix sums:
    /// A_k accumulates the other operand's levels 0..=k on the level-k
    /// grid, B_k accumulates this operand's levels 0..k, and the result
    /// level is T_k o A_k + S_k o B_k. Prefixes are rounded at `eps`
    /// after every step. TT base only.
    pub fn hadamard(&self, other: &MsTensor, eps: f64) -> Result<MsTensor> {
        self.require_compatible(other)?;
        if self.format != BaseFormat::Tt {
            return Err(Error::UnsupportedBase {
                format: "cp",
                op: "hadamard",
            });
        }
        let bs = self.grid.batch_size();
        let l = self.grid.levels();
        let tol = Truncation::Tolerance(eps);
        let mut levels = Vec::with_capacity(l + 1);
        // a: prefix of `other` through level k; b: prefix of `self`
        // through level k-1, already on the level-k grid.
        let mut a = other.levels[0].as_tt()?.clone();
        let mut b = TtTensor::zero(self.grid.scale_shape(0));
        for k in 0..=l {
            if k > 0 {
                a = other.levels[k]
                    .as_tt()?
                    .add(&a.ext(1, bs)?)?
                    .round(&tol)?;
                b = b
                    .add(self.levels[k - 1].as_tt()?)?
                    .ext(1, bs)?
                    .round(&tol)?;
            }
            let t_k = self.levels[k].as_tt()?;
            let s_k = other.levels[k].as_tt()?;
            let r_k = t_k.hadamard(&a)?.add(&s_k.hadamard(&b)?)?;
            levels.push(Payload::Tt(r_k));
        }
        MsTensor::new(self.grid.clone(), self.format, levels)
    }

    /// Contract base mode `j` (1-based) against a vector of base length:
    /// level k becomes bs^(L-k) * (T_k x_j ave_{L-k}(v)) on the grid
    /// with mode j removed.
    pub fn mode_contract(&self, j: usize, v: &[f64]) -> Result<MsTensor> {
        let d = self.grid.order();
        if d < 2 {
            return Err(Error::BadModeIndex { mode: j, order: d });
        }
        if j == 0 || j > d {
            return Err(Error::BadModeIndex { mode: j, order: d });
        }
        let n_j = self.grid.base_shape()[j - 1];
        if v.len() != n_j {
            return Err(Error::LengthMismatch {
                len: v.len(),
                expected: n_j,
            });
        }
        let out_grid = self.grid.drop_mode(j)?;
        let bs = self.grid.batch_size();
        let l = self.grid.levels();
        let vt = DenseTensor::new(vec![n_j], v.to_vec())?;
        let mut levels = Vec::with_capacity(l + 1);
        for (k, p) in self.levels.iter().enumerate() {
            let w = vt.ave(l - k, bs)?;
            let contracted = p.mode_contract(j, w.data())?;
            levels.push(contracted.scale((bs as f64).powi((l - k) as i32)));
        }
        MsTensor::new(out_grid, self.format, levels)
    }

    /// Frobenius norm in compressed form: the all-ones contraction of
    /// the compressed self-Hadamard. TT base only.
    pub fn norm(&self) -> Result<f64> {
        let squared = self.hadamard(self, 0.0)?;
        let mut cur = squared;
        while cur.grid.order() > 1 {
            let ones = vec![1.0; cur.grid.base_shape()[0]];
            cur = cur.mode_contract(1, &ones)?;
        }
        // Last mode: sum each level and undo the grading weights.
        let bs = cur.grid.batch_size() as f64;
        let l = cur.grid.levels();
        let mut total = 0.0;
        for (k, p) in cur.levels.iter().enumerate() {
            if p.is_zero() {
                continue;
            }
            let ones = vec![1.0; cur.grid.scale_shape(k)[0]];
            let s = p.mode_contract(1, &ones)?.to_dense()?.data()[0];
            total += bs.powi((l - k) as i32) * s;
        }
        Ok(total.max(0.0).sqrt())
    }

    /// Squared reconstruction norm through pairwise level inner
    /// products; works for both base formats and never goes dense.
    pub(crate) fn norm_squared_gram(&self) -> Result<f64> {
        let bs = self.grid.batch_size();
        let d = self.grid.order() as i32;
        let l = self.grid.levels();
        let mut total = 0.0;
        for k in 0..=l {
            if self.levels[k].is_zero() {
                continue;
            }
            for m in k..=l {
                if self.levels[m].is_zero() {
                    continue;
                }
                // <ext_{L-k} T_k, ext_{L-m} T_m>
                //   = bs^{d(L-m)} <ext_{m-k} T_k, T_m>  for k <= m.
                let lifted = self.levels[k].ext(m - k, bs)?;
                let ip = lifted.inner(&self.levels[m])?;
                let w = (bs as f64).powi(d * (l - m) as i32);
                total += if m == k { w * ip } else { 2.0 * w * ip };
            }
        }
        Ok(total.max(0.0))
    }

    /// Largest level norm relative to the represented tensor's norm,
    /// the stability diagnostic. Zero tensors report 0.
    pub fn stability_margin(&self) -> Result<f64> {
        let norm = self.norm_squared_gram()?.sqrt();
        if norm == 0.0 {
            return Ok(0.0);
        }
        let max_level = self
            .levels
            .iter()
            .map(|p| p.norm())
            .fold(0.0f64, f64::max);
        Ok(max_level / norm)
    }

    pub fn level_norms(&self) -> Vec<f64> {
        self.levels.iter().map(|p| p.norm()).collect()
    }

    pub fn storage(&self) -> StorageReport {
        let per_level: Vec<usize> = self.levels.iter().map(|p| p.param_count()).collect();
        let total: usize = per_level.iter().sum();
        let dense = self.grid.dense_elements();
        let ratio = if total == 0 {
            f64::INFINITY
        } else {
            dense as f64 / total as f64
        };
        StorageReport {
            per_level,
            total_parameters: total,
            dense_elements: dense,
            compression_ratio: ratio,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tt::TtRanks;

    fn grid(bs: usize, l: usize, shape: &[usize]) -> GridSpec {
        GridSpec::new(bs, l, shape.to_vec()).unwrap()
    }

    fn random_tt_ms(g: &GridSpec, ranks: &[usize], seed: u64) -> MsTensor {
        let mut rng = Rng::new(seed);
        MsTensor::random(g, BaseFormat::Tt, &RankVector::from_scalars(ranks), &mut rng).unwrap()
    }

    fn rel(a: &DenseTensor, b: &DenseTensor) -> f64 {
        a.sub(b).unwrap().frobenius_norm() / a.frobenius_norm().max(1e-300)
    }

    #[test]
    fn reconstruct_zero_and_finest() {
        let g = grid(2, 2, &[8, 8]);
        let z = MsTensor::zero(g.clone(), BaseFormat::Tt);
        assert_eq!(z.reconstruct().unwrap().frobenius_norm(), 0.0);

        let mut rng = Rng::new(50);
        let t = DenseTensor::random_normal(vec![8, 8], &mut rng).unwrap();
        let tt = TtTensor::svd(&t, &Truncation::Tolerance(0.0)).unwrap();
        let ms = MsTensor::from_finest(g, Payload::Tt(tt)).unwrap();
        assert!(rel(&t, &ms.reconstruct().unwrap()) <= 1e-12);
    }

    #[test]
    fn reconstruct_matches_ext_oracle() {
        let g = grid(2, 1, &[8, 8]);
        let x = random_tt_ms(&g, &[2, 3], 51);
        let d0 = x.level(0).to_dense().unwrap();
        let d1 = x.level(1).to_dense().unwrap();
        let want = d0.ext(1, 2).unwrap().add(&d1).unwrap();
        assert!(rel(&want, &x.reconstruct().unwrap()) <= 1e-12);
    }

    #[test]
    fn partial_reconstruction() {
        let g = grid(2, 2, &[8, 8]);
        let x = random_tt_ms(&g, &[1, 2, 2], 52);
        assert_eq!(x.partial_reconstruct(&[]).unwrap().frobenius_norm(), 0.0);
        let full = x.partial_reconstruct(&[0, 1, 2]).unwrap();
        assert!(rel(&x.reconstruct().unwrap(), &full) <= 1e-13);
        let coarse = x.partial_reconstruct(&[0]).unwrap();
        let want = x.level(0).to_dense().unwrap().ext(2, 2).unwrap();
        assert!(rel(&want, &coarse) <= 1e-12);
        assert!(x.partial_reconstruct(&[3]).is_err());
    }

    #[test]
    fn add_is_levelwise() {
        let g = grid(2, 1, &[4, 4]);
        let x = random_tt_ms(&g, &[1, 2], 53);
        let y = random_tt_ms(&g, &[1, 1], 54);
        let z = MsTensor::zero(g.clone(), BaseFormat::Tt);

        let same = x.add(&z).unwrap();
        assert!(rel(&x.reconstruct().unwrap(), &same.reconstruct().unwrap()) <= 1e-13);

        let sum = x.add(&y).unwrap();
        let want = x
            .reconstruct()
            .unwrap()
            .add(&y.reconstruct().unwrap())
            .unwrap();
        assert!(rel(&want, &sum.reconstruct().unwrap()) <= 1e-12);

        // Ranks add level-wise.
        if let (Payload::Tt(a), Payload::Tt(b), Payload::Tt(s)) =
            (x.level(1), y.level(1), sum.level(1))
        {
            if let (TtRanks::Chain(ra), TtRanks::Chain(rb), TtRanks::Chain(rs)) =
                (a.ranks(), b.ranks(), s.ranks())
            {
                for i in 0..ra.len() {
                    assert_eq!(rs[i], ra[i] + rb[i]);
                }
            }
        }

        let g2 = grid(2, 1, &[8, 8]);
        let other = random_tt_ms(&g2, &[1, 1], 55);
        assert!(x.add(&other).is_err());
    }

    #[test]
    fn round_preserves_value_and_restores_ranks() {
        let g = grid(2, 2, &[16, 16]);
        let x = random_tt_ms(&g, &[1, 2, 3], 56);
        let same = x.round(0.0).unwrap();
        assert!(rel(&x.reconstruct().unwrap(), &same.reconstruct().unwrap()) <= 1e-12);

        let doubled = x.add(&x).unwrap();
        let back = doubled.round(1e-12).unwrap();
        for (orig, rounded) in x.levels().iter().zip(back.levels()) {
            if let (Payload::Tt(a), Payload::Tt(b)) = (orig, rounded) {
                assert_eq!(a.ranks(), b.ranks());
            }
        }
    }

    #[test]
    fn round_error_bound() {
        let g = grid(2, 2, &[16, 16]);
        let x = random_tt_ms(&g, &[1, 3, 5], 57);
        for eps in [0.1, 0.01] {
            let rounded = x.round(eps).unwrap();
            let err = x
                .reconstruct()
                .unwrap()
                .sub(&rounded.reconstruct().unwrap())
                .unwrap()
                .frobenius_norm();
            let budget: f64 = eps * x.level_norms().iter().sum::<f64>();
            assert!(err <= budget + 1e-12, "eps {eps}: err {err} > {budget}");
        }
    }

    #[test]
    fn hadamard_against_dense_oracle() {
        let g = grid(2, 2, &[8, 8]);
        let x = random_tt_ms(&g, &[1, 2, 2], 58);
        let y = random_tt_ms(&g, &[2, 1, 2], 59);
        let got = x.hadamard(&y, 0.0).unwrap().reconstruct().unwrap();
        let want = x
            .reconstruct()
            .unwrap()
            .hadamard(&y.reconstruct().unwrap())
            .unwrap();
        assert!(rel(&want, &got) <= 1e-10);

        // All-ones at the coarsest level only: product equals x.
        let ones_payload = Payload::Tt(
            TtTensor::rank_one(&[vec![1.0; 2], vec![1.0; 2]]).unwrap(),
        );
        let mut ones = MsTensor::zero(g.clone(), BaseFormat::Tt);
        ones.set_level(0, ones_payload);
        let same = x.hadamard(&ones, 0.0).unwrap().reconstruct().unwrap();
        assert!(rel(&x.reconstruct().unwrap(), &same) <= 1e-10);

        // Zero times anything is zero.
        let z = MsTensor::zero(g, BaseFormat::Tt);
        let zz = z.hadamard(&y, 0.0).unwrap();
        assert_eq!(zz.reconstruct().unwrap().frobenius_norm(), 0.0);
    }

    #[test]
    fn mode_contract_oracles() {
        let g = grid(2, 2, &[8, 4, 4]);
        let x = random_tt_ms(&g, &[1, 2, 2], 60);
        let xd = x.reconstruct().unwrap();
        let mut rng = Rng::new(61);
        for j in 1..=3usize {
            let v = rng.normal_vec(g.base_shape()[j - 1]);
            let got = x.mode_contract(j, &v).unwrap().reconstruct().unwrap();
            let want = xd.mode_contract(j, &v).unwrap();
            assert!(rel(&want, &got) <= 1e-10, "mode {j}");
        }
        // Basis vector slice.
        let mut e = vec![0.0; 8];
        e[5] = 1.0;
        let got = x.mode_contract(1, &e).unwrap().reconstruct().unwrap();
        let want = xd.mode_contract(1, &e).unwrap();
        assert!(rel(&want, &got) <= 1e-10);

        // Single nonzero finest level: plain payload contraction.
        let g1 = grid(2, 1, &[4, 4]);
        let mut rng2 = Rng::new(62);
        let t = DenseTensor::random_normal(vec![4, 4], &mut rng2).unwrap();
        let ms = MsTensor::from_finest(
            g1,
            Payload::Tt(TtTensor::svd(&t, &Truncation::Tolerance(0.0)).unwrap()),
        )
        .unwrap();
        let v = rng2.normal_vec(4);
        let got = ms.mode_contract(2, &v).unwrap().reconstruct().unwrap();
        let want = t.mode_contract(2, &v).unwrap();
        assert!(rel(&want, &got) <= 1e-10);
    }

    #[test]
    fn norm_routes_agree() {
        let g = grid(2, 1, &[8, 8]);
        let x = random_tt_ms(&g, &[1, 2], 63);
        let dense_norm = x.reconstruct().unwrap().frobenius_norm();
        assert!((x.norm().unwrap() - dense_norm).abs() <= 1e-10 * dense_norm);
        assert!((x.norm_squared_gram().unwrap().sqrt() - dense_norm).abs() <= 1e-10 * dense_norm);

        let z = MsTensor::zero(g.clone(), BaseFormat::Tt);
        assert_eq!(z.norm().unwrap(), 0.0);

        // Single finest level: norm equals the payload norm.
        let mut rng = Rng::new(64);
        let t = DenseTensor::random_normal(vec![8, 8], &mut rng).unwrap();
        let tt = TtTensor::svd(&t, &Truncation::Tolerance(0.0)).unwrap();
        let payload_norm = tt.norm();
        let ms = MsTensor::from_finest(g, Payload::Tt(tt)).unwrap();
        assert!((ms.norm().unwrap() - payload_norm).abs() <= 1e-10 * payload_norm);
    }

    #[test]
    fn storage_hand_count() {
        // d=2, n=8, bs=2, L=1, rank-1 levels: 4x4 factors (4+4) plus
        // 8x8 factors (8+8) = 24 parameters, ratio 64/24.
        let g = grid(2, 1, &[8, 8]);
        let x = random_tt_ms(&g, &[1, 1], 65);
        let report = x.storage();
        assert_eq!(report.per_level, vec![8, 16]);
        assert_eq!(report.total_parameters, 24);
        assert_eq!(report.dense_elements, 64);
        assert!((report.compression_ratio - 64.0 / 24.0).abs() < 1e-12);

        let z = MsTensor::zero(g, BaseFormat::Tt);
        let zr = z.storage();
        assert_eq!(zr.total_parameters, 0);
        assert!(zr.compression_ratio.is_infinite());

        // TT level cost is the sum of core extents by construction.
        if let Payload::Tt(t) = x.level(1) {
            assert_eq!(t.param_count(), 16);
        }
    }

    #[test]
    fn stability_margin_on_witness_style_instance() {
        let g = grid(2, 1, &[2, 2]);
        let coarse = TtTensor::rank_one(&[vec![10.0], vec![1.0]]).unwrap();
        let fine = TtTensor::rank_one(&[vec![1.0, -1.0], vec![1.0, 1.0]]).unwrap();
        let ms = MsTensor::new(
            g,
            BaseFormat::Tt,
            vec![Payload::Tt(coarse), Payload::Tt(fine)],
        )
        .unwrap();
        let margin = ms.stability_margin().unwrap();
        assert!(margin.is_finite() && margin > 0.0);
    }
}
