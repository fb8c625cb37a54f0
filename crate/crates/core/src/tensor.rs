//! Dense row-major `f64` tensors.
//!
//! Only what the models need: matrices, bias rows, elementwise maps and three
//! matrix products. Every matrix product accumulates each output element in
//! ascending order of the inner index starting from `0.0`, so results are
//! bit-identical to the textbook triple loop regardless of blocking.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, checking that `shape` covers `data` and that every
    /// element is finite.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::dim(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        let t = Tensor { shape, data };
        t.ensure_finite("tensor construction")?;
        Ok(t)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Tensor::new(vec![n], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Stacks equally long rows into a matrix.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::dim("ragged rows"));
        }
        Tensor::matrix(rows.len(), cols, rows.concat())
    }

    // Skips validation; for internal producers whose output is finite by
    // construction or checked later.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
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

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Row count of a matrix (first dimension; 1 for a vector).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => 1,
            _ => self.shape[0],
        }
    }

    /// Column count of a matrix (product of trailing dimensions).
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1..].iter().product(),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::dim(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(context.to_string()))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.same_shape(other)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dim(format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(())
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn transpose(&self) -> Tensor {
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::from_parts(vec![c, r], out)
    }

    /// Adds `bias` (length == cols) to every row.
    pub fn add_row(&self, bias: &Tensor) -> Result<Tensor> {
        let c = self.cols();
        if bias.len() != c {
            return Err(Error::dim(format!(
                "bias of length {} for {} columns",
                bias.len(),
                c
            )));
        }
        let mut out = self.clone();
        for row in out.data.chunks_mut(c.max(1)) {
            for (v, b) in row.iter_mut().zip(&bias.data) {
                *v += b;
            }
        }
        Ok(out)
    }

    /// Column sums of a matrix, as a vector.
    pub fn sum_rows(&self) -> Tensor {
        let c = self.cols();
        let mut out = vec![0.0; c];
        for row in self.data.chunks(c.max(1)) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        Tensor::from_parts(vec![c], out)
    }

    /// Horizontal concatenation `[a, b]` of two matrices with equal rows.
    pub fn concat_cols(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.rows() != b.rows() {
            return Err(Error::dim(format!(
                "concat of {} and {} rows",
                a.rows(),
                b.rows()
            )));
        }
        let (ca, cb) = (a.cols(), b.cols());
        let mut out = Vec::with_capacity(a.rows() * (ca + cb));
        for i in 0..a.rows() {
            out.extend_from_slice(a.row(i));
            out.extend_from_slice(b.row(i));
        }
        Ok(Tensor::from_parts(vec![a.rows(), ca + cb], out))
    }

    /// Splits columns at `at` into `[.., :at]` and `[.., at:]`.
    pub fn split_cols(&self, at: usize) -> Result<(Tensor, Tensor)> {
        let c = self.cols();
        if at > c {
            return Err(Error::dim(format!("split at {} of {} columns", at, c)));
        }
        let r = self.rows();
        let mut left = Vec::with_capacity(r * at);
        let mut right = Vec::with_capacity(r * (c - at));
        for i in 0..r {
            let row = self.row(i);
            left.extend_from_slice(&row[..at]);
            right.extend_from_slice(&row[at..]);
        }
        Ok((
            Tensor::from_parts(vec![r, at], left),
            Tensor::from_parts(vec![r, c - at], right),
        ))
    }

    /// Gathers the listed rows into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Tensor {
        let c = self.cols();
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            out.extend_from_slice(self.row(i));
        }
        Tensor::from_parts(vec![idx.len(), c], out)
    }

    /// Repeats every row `times` times consecutively.
    pub fn repeat_rows(&self, times: usize) -> Tensor {
        let c = self.cols();
        let mut out = Vec::with_capacity(self.len() * times);
        for i in 0..self.rows() {
            for _ in 0..times {
                out.extend_from_slice(self.row(i));
            }
        }
        Tensor::from_parts(vec![self.rows() * times, c], out)
    }
}

/// `a · b` for `a: m×k`, `b: k×n`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = (a.rows(), a.cols());
    let (k2, n) = (b.rows(), b.cols());
    if k != k2 {
        return Err(Error::dim(format!("matmul {}x{} by {}x{}", m, k, k2, n)));
    }
    let mut c = vec![0.0; m * n];
    gemm(m, k, n, &a.data, &b.data, &mut c);
    let out = Tensor::from_parts(vec![m, n], c);
    out.ensure_finite("matmul")?;
    Ok(out)
}

/// `aᵀ · b` for `a: k×m`, `b: k×n`.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rows() != b.rows() {
        return Err(Error::dim(format!(
            "matmul_tn {}x{} by {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    matmul(&a.transpose(), b)
}

/// `a · bᵀ` for `a: m×k`, `b: n×k`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.cols() != b.cols() {
        return Err(Error::dim(format!(
            "matmul_nt {}x{} by {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    matmul(a, &b.transpose())
}

// Register-blocked c = a·b over a packed k×NR panel of b. Each output
// element is a sum over t = 0..k in ascending order starting from 0.0,
// identical to the naive loop whatever the block sizes. Rust never fuses the
// multiply and add, so the instruction set does not change results either.
#[inline(always)]
fn gemm_blocked<const MR: usize, const NR: usize>(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    b: &[f64],
    c: &mut [f64],
) {
    let n_main = n - n % NR;
    let m_main = m - m % MR;
    let mut panel = vec![0.0f64; k * NR];
    let mut j0 = 0;
    while j0 < n_main {
        for t in 0..k {
            panel[t * NR..(t + 1) * NR].copy_from_slice(&b[t * n + j0..t * n + j0 + NR]);
        }
        let mut i0 = 0;
        while i0 < m_main {
            let mut acc = [[0.0f64; NR]; MR];
            for t in 0..k {
                let bt: &[f64; NR] = panel[t * NR..(t + 1) * NR].try_into().expect("NR-wide row");
                for r in 0..MR {
                    let art = a[(i0 + r) * k + t];
                    for jj in 0..NR {
                        acc[r][jj] += art * bt[jj];
                    }
                }
            }
            for r in 0..MR {
                c[(i0 + r) * n + j0..(i0 + r) * n + j0 + NR].copy_from_slice(&acc[r]);
            }
            i0 += MR;
        }
        for i in m_main..m {
            let mut acc = [0.0f64; NR];
            for t in 0..k {
                let ait = a[i * k + t];
                for jj in 0..NR {
                    acc[jj] += ait * panel[t * NR + jj];
                }
            }
            c[i * n + j0..i * n + j0 + NR].copy_from_slice(&acc);
        }
        j0 += NR;
    }
    for i in 0..m {
        for j in n_main..n {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i * k + t] * b[t * n + j];
            }
            c[i * n + j] = s;
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn gemm_avx512(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    gemm_blocked::<4, 16>(m, k, n, a, b, c)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn gemm_avx2(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    gemm_blocked::<4, 8>(m, k, n, a, b, c)
}

fn gemm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx512f") {
            // SAFETY: the feature was detected at runtime.
            return unsafe { gemm_avx512(m, k, n, a, b, c) };
        }
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: as above.
            return unsafe { gemm_avx2(m, k, n, a, b, c) };
        }
    }
    gemm_blocked::<4, 8>(m, k, n, a, b, c)
}

/// `log(1 + e^x)` without overflow.
pub fn softplus_scalar(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic function, clamped so the result stays strictly inside (0, 1).
pub fn sigmoid_scalar(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// `log σ(x) = −softplus(−x)`.
pub fn log_sigmoid_scalar(x: f64) -> f64 {
    -softplus_scalar(-x)
}

pub fn softplus(x: &Tensor) -> Tensor {
    x.map(softplus_scalar)
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let c = x.cols();
    let mut out = x.data.clone();
    for row in out.chunks_mut(c.max(1)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    Tensor::from_parts(x.shape.clone(), out)
}
