//! Dense linear algebra kernels: matrices, one-sided Jacobi SVD, thin
//! Householder QR, and a small SPD solver.
//!
//! Everything here is self-contained and deterministic. The SVD sorts
//! singular values descending and fixes signs so that the
//! largest-magnitude entry of each left singular vector is positive,
//! which makes truncation decisions reproducible across runs.

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub a: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            a: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, a: Vec<f64>) -> Result<Self> {
        if a.len() != rows * cols {
            return Err(Error::InvalidShape {
                shape: vec![rows, cols],
                reason: format!("buffer holds {} values", a.len()),
            });
        }
        Ok(Mat { rows, cols, a })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.a[i * n + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.cols + j]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.a[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.a[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.a[j * self.rows + i] = self.a[i * self.cols + j];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "matmul inner dimension");
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let lv = self.a[i * self.cols + k];
                if lv == 0.0 {
                    continue;
                }
                let orow = &other.a[k * other.cols..(k + 1) * other.cols];
                let dst = &mut out.a[i * other.cols..(i + 1) * other.cols];
                for (d, &o) in dst.iter_mut().zip(orow) {
                    *d += lv * o;
                }
            }
        }
        out
    }

    pub fn frob_norm(&self) -> f64 {
        self.a.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Economy SVD: `a = u * diag(s) * vt` with `u` of shape m x k,
/// `vt` of shape k x n, k = min(m, n), singular values descending.
pub struct SvdResult {
    pub u: Mat,
    pub s: Vec<f64>,
    pub vt: Mat,
}

const JACOBI_TOL: f64 = 1e-15;
const JACOBI_MAX_SWEEPS: usize = 60;

/// One-sided Jacobi SVD (Hestenes). Rotates column pairs of the work
/// matrix until all pairs are numerically orthogonal.
pub fn svd(a: &Mat) -> SvdResult {
    if a.rows < a.cols {
        let t = svd(&a.transpose());
        return SvdResult {
            u: t.vt.transpose(),
            s: t.s,
            vt: t.u.transpose(),
        };
    }
    let (m, n) = (a.rows, a.cols);
    // Column-major work copies: column j of `w` is w[j*m..(j+1)*m].
    let mut w = vec![0.0f64; m * n];
    for i in 0..m {
        for j in 0..n {
            w[j * m + i] = a.a[i * n + j];
        }
    }
    let mut v = vec![0.0f64; n * n];
    for j in 0..n {
        v[j * n + j] = 1.0;
    }

    for _sweep in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for i in 0..m {
                    let wp = w[p * m + i];
                    let wq = w[q * m + i];
                    alpha += wp * wp;
                    beta += wq * wq;
                    gamma += wp * wq;
                }
                let scale = (alpha * beta).sqrt();
                if scale == 0.0 || gamma.abs() <= JACOBI_TOL * scale {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let wp = w[p * m + i];
                    let wq = w[q * m + i];
                    w[p * m + i] = c * wp - s * wq;
                    w[q * m + i] = s * wp + c * wq;
                }
                for i in 0..n {
                    let vp = v[p * n + i];
                    let vq = v[q * n + i];
                    v[p * n + i] = c * vp - s * vq;
                    v[q * n + i] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut sigma: Vec<f64> = (0..n)
        .map(|j| w[j * m..(j + 1) * m].iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();

    // Stable descending order; ties keep original column order.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| sigma[j].partial_cmp(&sigma[i]).unwrap().then(i.cmp(&j)));

    let mut u = Mat::zeros(m, n);
    let mut vt = Mat::zeros(n, n);
    let mut s_sorted = vec![0.0; n];
    for (new_j, &old_j) in order.iter().enumerate() {
        let sj = sigma[old_j];
        s_sorted[new_j] = sj;
        if sj > 0.0 {
            let inv = 1.0 / sj;
            for i in 0..m {
                u.a[i * n + new_j] = w[old_j * m + i] * inv;
            }
        }
        for i in 0..n {
            vt.a[new_j * n + i] = v[old_j * n + i];
        }
    }
    sigma.clear();

    // Sign convention: largest-magnitude entry of each left singular
    // vector positive; first occurrence wins on ties.
    for (j, &sj) in s_sorted.iter().enumerate() {
        if sj == 0.0 {
            continue;
        }
        let mut best = 0usize;
        let mut best_abs = 0.0f64;
        for i in 0..m {
            let x = u.a[i * n + j].abs();
            if x > best_abs {
                best_abs = x;
                best = i;
            }
        }
        if u.a[best * n + j] < 0.0 {
            for i in 0..m {
                u.a[i * n + j] = -u.a[i * n + j];
            }
            for i in 0..n {
                vt.a[j * n + i] = -vt.a[j * n + i];
            }
        }
    }

    SvdResult { u, s: s_sorted, vt }
}

/// Thin Householder QR: `a = q * r` with `q` of shape m x k column
/// orthonormal, `r` of shape k x n upper trapezoidal with non-negative
/// diagonal, k = min(m, n).
pub fn qr_thin(a: &Mat) -> (Mat, Mat) {
    let (m, n) = (a.rows, a.cols);
    let k = m.min(n);
    let mut r = a.clone();
    // Householder vectors stored per step.
    let mut vs: Vec<Vec<f64>> = Vec::with_capacity(k);

    for j in 0..k {
        let mut norm = 0.0;
        for i in j..m {
            let x = r.at(i, j);
            norm += x * x;
        }
        let norm = norm.sqrt();
        let mut v = vec![0.0; m - j];
        if norm > 0.0 {
            let a0 = r.at(j, j);
            let alpha = if a0 >= 0.0 { -norm } else { norm };
            v[0] = a0 - alpha;
            for i in j + 1..m {
                v[i - j] = r.at(i, j);
            }
            let vnorm2: f64 = v.iter().map(|x| x * x).sum();
            if vnorm2 > 0.0 {
                // Apply reflector I - 2 v v^T / (v^T v) to trailing block.
                for col in j..n {
                    let mut dot = 0.0;
                    for i in j..m {
                        dot += v[i - j] * r.at(i, col);
                    }
                    let f = 2.0 * dot / vnorm2;
                    for i in j..m {
                        *r.at_mut(i, col) -= f * v[i - j];
                    }
                }
            }
        }
        vs.push(v);
    }

    // Accumulate Q by applying reflectors to the first k identity columns.
    let mut q = Mat::zeros(m, k);
    for j in 0..k {
        q.a[j * k + j] = 1.0;
    }
    for (j, v) in vs.iter().enumerate().rev() {
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        for col in 0..k {
            let mut dot = 0.0;
            for i in j..m {
                dot += v[i - j] * q.at(i, col);
            }
            let f = 2.0 * dot / vnorm2;
            for i in j..m {
                *q.at_mut(i, col) -= f * v[i - j];
            }
        }
    }

    let mut r_out = Mat::zeros(k, n);
    for i in 0..k {
        for j in i..n {
            r_out.a[i * n + j] = r.at(i, j);
        }
    }
    // Non-negative diagonal of R for determinism.
    for i in 0..k {
        if r_out.at(i, i) < 0.0 {
            for j in 0..n {
                r_out.a[i * n + j] = -r_out.a[i * n + j];
            }
            for row in 0..m {
                q.a[row * k + i] = -q.a[row * k + i];
            }
        }
    }
    (q, r_out)
}

/// Solve (g + ridge*I) x = b for SPD `g` via Cholesky, overwriting nothing.
/// `b` holds one right-hand side per column.
pub fn solve_spd(g: &Mat, b: &Mat, ridge: f64) -> Result<Mat> {
    assert_eq!(g.rows, g.cols);
    assert_eq!(g.rows, b.rows);
    let n = g.rows;
    let mut l = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = g.at(i, j) + if i == j { ridge } else { 0.0 };
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(Error::InvalidConfig(format!(
                        "matrix not positive definite at pivot {i} ({sum})"
                    )));
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    let mut x = b.clone();
    // Forward solve L y = b, then backward solve L^T x = y, per column.
    for col in 0..b.cols {
        for i in 0..n {
            let mut sum = x.at(i, col);
            for k in 0..i {
                sum -= l[i * n + k] * x.at(k, col);
            }
            *x.at_mut(i, col) = sum / l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut sum = x.at(i, col);
            for k in i + 1..n {
                sum -= l[k * n + i] * x.at(k, col);
            }
            *x.at_mut(i, col) = sum / l[i * n + i];
        }
    }
    Ok(x)
}

/// Numerical-zero floor for singular values of an m x n matrix: entries
/// at or below this level are treated as exact zeros by truncation. The
/// factor leaves room above accumulated Jacobi rotation noise while
/// staying far below any 1e-12 accuracy contract.
pub fn rank_floor(sigma_max: f64, m: usize, n: usize) -> f64 {
    sigma_max * f64::EPSILON * 16.0 * (m.max(n) as f64).sqrt()
}
