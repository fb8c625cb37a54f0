//! Principal component analysis by symmetric eigendecomposition of the
//! covariance matrix (`nalgebra::SymmetricEigen`). Covariance uses the `1/N`
//! divisor. Each component's sign is fixed so that its largest-magnitude
//! entry is positive.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::tensor::{matmul, matmul_nt, matmul_tn, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct PcaTransform {
    pub mean: Tensor,
    /// `D × k`, orthonormal columns, ordered by decreasing eigenvalue.
    pub components: Tensor,
    /// The top-`k` covariance eigenvalues, nonincreasing.
    pub eigenvalues: Vec<f64>,
}

impl PcaTransform {
    pub fn k(&self) -> usize {
        self.eigenvalues.len()
    }
}

pub fn pca_fit(x: &Tensor, k: usize) -> Result<PcaTransform> {
    let (n, d) = (x.rows(), x.cols());
    if k == 0 || k > n.min(d) {
        return Err(Error::Config(format!(
            "cannot keep {} components of {}x{} data",
            k, n, d
        )));
    }
    let mean = x.sum_rows().scale(1.0 / n as f64);
    let centered = center(x, &mean);
    let cov = matmul_tn(&centered, &centered)?.scale(1.0 / n as f64);
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(d, d, cov.data()));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let mut comp = vec![0.0; d * k];
    for (j, &src) in order[..k].iter().enumerate() {
        let col = eig.eigenvectors.column(src);
        let pivot = col
            .iter()
            .copied()
            .fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for i in 0..d {
            comp[i * k + j] = sign * col[i];
        }
    }
    Ok(PcaTransform {
        mean: mean.reshape(vec![d])?,
        components: Tensor::new(vec![d, k], comp)?,
        eigenvalues: order[..k]
            .iter()
            .map(|&i| eig.eigenvalues[i].max(0.0))
            .collect(),
    })
}

fn center(x: &Tensor, mean: &Tensor) -> Tensor {
    let m = mean.data();
    let c = x.cols();
    let data = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| v - m[i % c])
        .collect();
    Tensor::from_parts(vec![x.rows(), c], data)
}

/// `(x − mean) · components`, shape `N × k`.
pub fn pca_apply(t: &PcaTransform, x: &Tensor) -> Result<Tensor> {
    if x.cols() != t.mean.len() {
        return Err(Error::dim(format!(
            "PCA fitted on {} columns, got {}",
            t.mean.len(),
            x.cols()
        )));
    }
    matmul(&center(x, &t.mean), &t.components)
}

/// `mean + proj · componentsᵀ`, shape `N × D`.
pub fn pca_reconstruct(t: &PcaTransform, proj: &Tensor) -> Result<Tensor> {
    let back = matmul_nt(proj, &t.components)?;
    back.add_row(&t.mean)
}
