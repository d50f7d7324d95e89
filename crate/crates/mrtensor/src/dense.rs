//! Dense d-dimensional tensors and the grid transfer operators.
//!
//! A tensor lives on a uniform grid; `ext` replicates every entry into a
//! constant block with side `bs^l` (one refinement step per level), and
//! `ave` is its left inverse, replacing each aligned block by its mean.
//! Together they move data between the grids of a [`GridSpec`] hierarchy.
//!
//! Storage is row-major (last index fastest), scalars are `f64`.
//! Operations are pure and use a fixed reduction order, so results are
//! deterministic.

use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Error, Result};

use crate::rng::Rng;

/// Default cap on dense output sizes. `ext` multiplies every mode size,
/// so unchecked calls could silently request terabytes.
pub const DEFAULT_ELEMENT_LIMIT: usize = 1 << 31;

static ELEMENT_LIMIT: AtomicUsize = AtomicUsize::new(DEFAULT_ELEMENT_LIMIT);

/// Current cap on the number of elements a dense result may hold.
pub fn element_limit() -> usize {
    ELEMENT_LIMIT.load(Ordering::Relaxed)
}

/// Adjust the dense element cap (process-wide).
pub fn set_element_limit(limit: usize) {
    ELEMENT_LIMIT.store(limit, Ordering::Relaxed);
}

pub(crate) fn check_element_count(count: u128, limit: usize) -> Result<()> {
    if count > limit as u128 {
        Err(Error::ElementLimit {
            requested: count,
            limit,
        })
    } else {
        Ok(())
    }
}

/// Dense tensor with explicit shape, row-major `f64` storage.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::InvalidShape {
                shape,
                reason: "every mode size must be at least 1".into(),
            });
        }
        let len: usize = shape.iter().product();
        if data.len() != len {
            return Err(Error::InvalidShape {
                shape,
                reason: format!("data holds {} values, shape needs {len}", data.len()),
            });
        }
        Ok(DenseTensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let len: usize = shape.iter().product();
        DenseTensor::new(shape, vec![0.0; len])
    }

    /// Scalar wrapped as an order-1 tensor of shape `[1]`.
    pub fn scalar(value: f64) -> Self {
        DenseTensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn random_normal(shape: Vec<usize>, rng: &mut Rng) -> Result<Self> {
        let len: usize = shape.iter().product();
        DenseTensor::new(shape, rng.normal_vec(len))
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Entry at a zero-based multi-index.
    pub fn get(&self, index: &[usize]) -> f64 {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut off = 0;
        for (m, &i) in index.iter().enumerate() {
            debug_assert!(i < self.shape[m]);
            off = off * self.shape[m] + i;
        }
        self.data[off]
    }

    fn require_same_shape(&self, other: &DenseTensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }

    /// Frobenius inner product with a tensor of identical shape.
    pub fn inner(&self, other: &DenseTensor) -> Result<f64> {
        self.require_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .sum())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn hadamard(&self, other: &DenseTensor) -> Result<DenseTensor> {
        self.require_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect();
        Ok(DenseTensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn add(&self, other: &DenseTensor) -> Result<DenseTensor> {
        self.require_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(DenseTensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn sub(&self, other: &DenseTensor) -> Result<DenseTensor> {
        self.require_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(DenseTensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn scale(&self, alpha: f64) -> DenseTensor {
        DenseTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| alpha * x).collect(),
        }
    }

    /// Block extension by `l` refinement steps: every mode size is
    /// multiplied by `bs^l` and each entry becomes a constant block.
    pub fn ext(&self, l: usize, bs: usize) -> Result<DenseTensor> {
        self.ext_with_limit(l, bs, element_limit())
    }

    pub fn ext_with_limit(&self, l: usize, bs: usize, limit: usize) -> Result<DenseTensor> {
        if bs < 2 {
            return Err(Error::BadBatchSize(bs));
        }
        if l == 0 {
            return Ok(self.clone());
        }
        let f = (bs as u128).pow(l as u32);
        let mut count: u128 = 1;
        for &n in &self.shape {
            count *= n as u128 * f;
        }
        check_element_count(count, limit)?;
        let f = f as usize;
        let out_shape: Vec<usize> = self.shape.iter().map(|&n| n * f).collect();
        let d = self.shape.len();
        let last_in = self.shape[d - 1];
        let lead_out: usize = out_shape[..d - 1].iter().product();
        let last_out = out_shape[d - 1];

        // Strides of the source over its leading d-1 modes.
        let mut src_stride = vec![1usize; d.saturating_sub(1)];
        for m in (0..d.saturating_sub(1)).rev() {
            src_stride[m] = if m + 1 < d - 1 {
                src_stride[m + 1] * self.shape[m + 1]
            } else {
                last_in
            };
        }

        let mut data = vec![0.0f64; count as usize];
        let mut idx = vec![0usize; d.saturating_sub(1)];
        for row in 0..lead_out.max(1) {
            let mut src_off = 0;
            for m in 0..d - 1 {
                src_off += (idx[m] / f) * src_stride[m];
            }
            let dst = &mut data[row * last_out..(row + 1) * last_out];
            let src = &self.data[src_off..src_off + last_in];
            for (i, &v) in src.iter().enumerate() {
                dst[i * f..(i + 1) * f].fill(v);
            }
            // Advance the mixed-radix counter over the output's leading modes.
            for m in (0..d.saturating_sub(1)).rev() {
                idx[m] += 1;
                if idx[m] < out_shape[m] {
                    break;
                }
                idx[m] = 0;
            }
        }
        DenseTensor::new(out_shape, data)
    }

    /// Block averaging by `l` coarsening steps; left inverse of
    /// [`DenseTensor::ext`]. Every mode size must be divisible by `bs^l`.
    pub fn ave(&self, l: usize, bs: usize) -> Result<DenseTensor> {
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
        let d = self.shape.len();
        let out_shape: Vec<usize> = self.shape.iter().map(|&n| n / f).collect();
        let out_len: usize = out_shape.iter().product();
        let last_in = self.shape[d - 1];
        let last_out = out_shape[d - 1];
        let lead_in: usize = self.shape[..d - 1].iter().product();

        let mut out_stride = vec![1usize; d.saturating_sub(1)];
        for m in (0..d.saturating_sub(1)).rev() {
            out_stride[m] = if m + 1 < d - 1 {
                out_stride[m + 1] * out_shape[m + 1]
            } else {
                last_out
            };
        }

        let mut acc = vec![0.0f64; out_len];
        let mut idx = vec![0usize; d.saturating_sub(1)];
        for row in 0..lead_in.max(1) {
            let mut dst_off = 0;
            for m in 0..d - 1 {
                dst_off += (idx[m] / f) * out_stride[m];
            }
            let src = &self.data[row * last_in..(row + 1) * last_in];
            let dst = &mut acc[dst_off..dst_off + last_out];
            for (i, &v) in src.iter().enumerate() {
                dst[i / f] += v;
            }
            for m in (0..d.saturating_sub(1)).rev() {
                idx[m] += 1;
                if idx[m] < self.shape[m] {
                    break;
                }
                idx[m] = 0;
            }
        }
        let inv = 1.0 / (f as f64).powi(d as i32);
        for v in &mut acc {
            *v *= inv;
        }
        DenseTensor::new(out_shape, acc)
    }

    /// Contract mode `j` (1-based) against a vector, reducing the order
    /// by one. An order-1 input yields a scalar wrapped in shape `[1]`.
    pub fn mode_contract(&self, j: usize, v: &[f64]) -> Result<DenseTensor> {
        let d = self.shape.len();
        if j == 0 || j > d {
            return Err(Error::BadModeIndex { mode: j, order: d });
        }
        let j0 = j - 1;
        let n_j = self.shape[j0];
        if v.len() != n_j {
            return Err(Error::LengthMismatch {
                len: v.len(),
                expected: n_j,
            });
        }
        let block: usize = self.shape[j0 + 1..].iter().product();
        let outer: usize = self.shape[..j0].iter().product();
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
        let mut data = vec![0.0f64; outer * block.max(1)];
        for o in 0..outer {
            let dst = &mut data[o * block..(o + 1) * block];
            for (i, &w) in v.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let src = &self.data[(o * n_j + i) * block..(o * n_j + i + 1) * block];
                for (dv, &sv) in dst.iter_mut().zip(src) {
                    *dv += w * sv;
                }
            }
        }
        DenseTensor::new(out_shape, data)
    }

}

/// Description of the grid hierarchy: a batch size, a level count, and a
/// base (finest) shape that `bs^levels` must divide mode-wise. Level `k`
/// lives on `base_shape / bs^(levels-k)`; level 0 is coarsest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridSpec {
    batch_size: usize,
    levels: usize,
    base_shape: Vec<usize>,
}

impl GridSpec {
    pub fn new(batch_size: usize, levels: usize, base_shape: Vec<usize>) -> Result<Self> {
        if batch_size < 2 {
            return Err(Error::BadBatchSize(batch_size));
        }
        if base_shape.is_empty() || base_shape.contains(&0) {
            return Err(Error::InvalidShape {
                shape: base_shape,
                reason: "grid needs at least one non-empty mode".into(),
            });
        }
        let f = batch_size
            .checked_pow(levels as u32)
            .ok_or_else(|| Error::InvalidConfig(format!("bs^L overflows: {batch_size}^{levels}")))?;
        for (m, &n) in base_shape.iter().enumerate() {
            if n % f != 0 {
                return Err(Error::NonDivisible {
                    size: n,
                    divisor: f,
                    mode: m + 1,
                    shift: levels,
                });
            }
        }
        Ok(GridSpec {
            batch_size,
            levels,
            base_shape,
        })
    }

    /// Largest level count usable for `shape` with this batch size.
    pub fn max_levels(shape: &[usize], batch_size: usize) -> usize {
        let mut l = 0usize;
        while let Some(f) = batch_size.checked_pow(l as u32 + 1) {
            if shape.iter().any(|&n| !n.is_multiple_of(f)) {
                break;
            }
            l += 1;
        }
        l
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn base_shape(&self) -> &[usize] {
        &self.base_shape
    }

    pub fn order(&self) -> usize {
        self.base_shape.len()
    }

    /// Shape of the level-`k` grid: `base_shape / bs^(levels-k)`.
    pub fn scale_shape(&self, k: usize) -> Vec<usize> {
        let f = self.batch_size.pow((self.levels - k) as u32);
        self.base_shape.iter().map(|&n| n / f).collect()
    }

    pub fn dense_elements(&self) -> u128 {
        self.base_shape.iter().map(|&n| n as u128).product()
    }

    /// Grid for the order-(d-1) result of contracting mode `j` (1-based).
    pub fn drop_mode(&self, j: usize) -> Result<GridSpec> {
        if j == 0 || j > self.base_shape.len() || self.base_shape.len() < 2 {
            return Err(Error::BadModeIndex {
                mode: j,
                order: self.base_shape.len(),
            });
        }
        let shape: Vec<usize> = self
            .base_shape
            .iter()
            .enumerate()
            .filter(|&(m, _)| m != j - 1)
            .map(|(_, &n)| n)
            .collect();
        GridSpec::new(self.batch_size, self.levels, shape)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> DenseTensor {
        DenseTensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn inner_identity_and_sum() {
        let eye = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(eye.inner(&eye).unwrap(), 2.0);

        let m = t(&[2, 2], &[1.5, -2.0, 3.0, 4.25]);
        let ones = t(&[2, 2], &[1.0; 4]);
        assert_eq!(m.inner(&ones).unwrap(), 1.5 - 2.0 + 3.0 + 4.25);
    }

    #[test]
    fn inner_matches_triple_loop() {
        let mut rng = Rng::new(10);
        let a = DenseTensor::random_normal(vec![3, 4, 5], &mut rng).unwrap();
        let b = DenseTensor::random_normal(vec![3, 4, 5], &mut rng).unwrap();
        let mut want = 0.0;
        for i in 0..3 {
            for j in 0..4 {
                for k in 0..5 {
                    want += a.get(&[i, j, k]) * b.get(&[i, j, k]);
                }
            }
        }
        assert!((a.inner(&b).unwrap() - want).abs() < 1e-12);
        assert!(a.inner(&t(&[3, 4], &[0.0; 12])).is_err());
    }

    #[test]
    fn frobenius_norm_cases() {
        assert_eq!(DenseTensor::zeros(vec![4, 4]).unwrap().frobenius_norm(), 0.0);
        assert_eq!(t(&[1, 2], &[3.0, 4.0]).frobenius_norm(), 5.0);
        let mut rng = Rng::new(11);
        let a = DenseTensor::random_normal(vec![2, 3, 2], &mut rng).unwrap();
        let want = a.data().iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((a.frobenius_norm() - want).abs() < 1e-13);
    }

    #[test]
    fn ext_block_structure() {
        let m = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let e = m.ext(1, 2).unwrap();
        assert_eq!(e.shape(), &[4, 4]);
        #[rustfmt::skip]
        let want = [
            1.0, 1.0, 2.0, 2.0,
            1.0, 1.0, 2.0, 2.0,
            3.0, 3.0, 4.0, 4.0,
            3.0, 3.0, 4.0, 4.0,
        ];
        assert_eq!(e.data(), &want);
    }

    #[test]
    fn ext_zero_steps_is_identity() {
        let m = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(m.ext(0, 2).unwrap(), m);
    }

    #[test]
    fn ext_one_dim_formula() {
        let v = t(&[2], &[1.0, 2.0]);
        let e = v.ext(2, 2).unwrap();
        assert_eq!(e.data(), &[1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0]);
        // Index formula: out[i] = in[i / bs^l].
        for i in 0..8 {
            assert_eq!(e.data()[i], v.data()[i / 4]);
        }
    }

    #[test]
    fn ext_respects_element_limit() {
        let v = t(&[4], &[1.0; 4]);
        let err = v.ext_with_limit(3, 2, 16).unwrap_err();
        assert!(matches!(err, Error::ElementLimit { .. }));
    }

    #[test]
    fn ave_is_left_inverse_of_ext() {
        let mut rng = Rng::new(12);
        let a = DenseTensor::random_normal(vec![3, 2, 4], &mut rng).unwrap();
        let round = a.ext(1, 2).unwrap().ave(1, 2).unwrap();
        for (x, y) in a.data().iter().zip(round.data()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn ave_block_means() {
        let v = t(&[4], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(v.ave(1, 2).unwrap().data(), &[1.5, 3.5]);

        let ones = t(&[2, 2], &[1.0; 4]);
        let c = ones.ave(1, 2).unwrap();
        assert_eq!(c.shape(), &[1, 1]);
        assert_eq!(c.data(), &[1.0]);

        assert!(t(&[3], &[0.0; 3]).ave(1, 2).is_err());
    }

    #[test]
    fn elementwise_ops() {
        let mut rng = Rng::new(13);
        let a = DenseTensor::random_normal(vec![2, 5], &mut rng).unwrap();
        let b = DenseTensor::random_normal(vec![2, 5], &mut rng).unwrap();
        let ones = t(&[2, 5], &[1.0; 10]);

        assert_eq!(a.hadamard(&ones).unwrap(), a);
        let zero = a.add(&a.scale(-1.0)).unwrap();
        assert!(zero.frobenius_norm() == 0.0);

        let h = a.hadamard(&b).unwrap();
        let s = a.add(&b).unwrap();
        for i in 0..10 {
            assert!((h.data()[i] - a.data()[i] * b.data()[i]).abs() < 1e-15);
            assert!((s.data()[i] - (a.data()[i] + b.data()[i])).abs() < 1e-15);
        }
        assert!(a.add(&t(&[10], &[0.0; 10])).is_err());
    }

    #[test]
    fn mode_contract_basis_and_sums() {
        let m = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        // Basis vector picks out a slice along the contracted mode.
        let slice = m.mode_contract(1, &[0.0, 1.0]).unwrap();
        assert_eq!(slice.data(), &[3.0, 4.0]);
        // All-ones along mode 1 sums the columns.
        let sums = m.mode_contract(1, &[1.0, 1.0]).unwrap();
        assert_eq!(sums.data(), &[4.0, 6.0]);

        assert!(m.mode_contract(3, &[1.0, 1.0]).is_err());
        assert!(m.mode_contract(1, &[1.0]).is_err());
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn mode_contract_matches_triple_loop() {
        let mut rng = Rng::new(14);
        let a = DenseTensor::random_normal(vec![3, 3, 3], &mut rng).unwrap();
        let v = rng.normal_vec(3);
        for j in 1..=3usize {
            let c = a.mode_contract(j, &v).unwrap();
            for p in 0..3 {
                for q in 0..3 {
                    let mut want = 0.0;
                    for i in 0..3 {
                        let idx = match j {
                            1 => [i, p, q],
                            2 => [p, i, q],
                            _ => [p, q, i],
                        };
                        want += a.get(&idx) * v[i];
                    }
                    assert!((c.get(&[p, q]) - want).abs() < 1e-12);
                }
            }
        }
        // Order-1 contraction wraps the scalar.
        let v1 = t(&[3], &[1.0, 2.0, 3.0]);
        let s = v1.mode_contract(1, &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(s.shape(), &[1]);
        assert_eq!(s.data(), &[6.0]);
    }

    #[test]
    fn grid_spec_validation() {
        let g = GridSpec::new(2, 3, vec![16, 8]).unwrap();
        assert_eq!(g.scale_shape(3), vec![16, 8]);
        assert_eq!(g.scale_shape(1), vec![4, 2]);
        assert_eq!(g.scale_shape(0), vec![2, 1]);
        assert!(GridSpec::new(2, 4, vec![16, 8]).is_err());
        assert!(GridSpec::new(1, 0, vec![4]).is_err());
        assert_eq!(GridSpec::max_levels(&[16, 8], 2), 3);
        assert_eq!(GridSpec::max_levels(&[9, 27], 3), 2);
        assert_eq!(GridSpec::max_levels(&[7], 2), 0);
    }
}
