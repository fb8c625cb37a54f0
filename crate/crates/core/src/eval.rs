//! Classification metrics, the evaluation report, and the downstream
//! classifiers used on M1 features: multinomial logistic regression and
//! k-nearest neighbours.

use std::fmt::Write as _;

use crate::dists::argmax_lowest;
use crate::error::{Error, Result};
use crate::tensor::{matmul, matmul_tn, softmax_rows, Tensor};

/// Fraction of positions where `preds` and `labels` differ.
pub fn error_rate(preds: &[usize], labels: &[usize]) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::dim(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Data("no predictions to score".into()));
    }
    let wrong = preds.iter().zip(labels).filter(|(p, l)| p != l).count();
    Ok(wrong as f64 / preds.len() as f64)
}

/// Test-set evaluation. `confusion[true][predicted]` counts.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub n_test: usize,
    pub error_rate: f64,
    pub confusion: Vec<Vec<usize>>,
    pub seed: u64,
    /// Ordered `key=value` echo of the producing configuration.
    pub config: Vec<(String, String)>,
}

impl EvalReport {
    pub fn new(
        preds: &[usize],
        labels: &[usize],
        n_classes: usize,
        seed: u64,
        config: Vec<(String, String)>,
    ) -> Result<Self> {
        let error_rate = error_rate(preds, labels)?;
        let mut confusion = vec![vec![0; n_classes]; n_classes];
        for (&p, &l) in preds.iter().zip(labels) {
            if p >= n_classes || l >= n_classes {
                return Err(Error::LabelOutOfRange {
                    label: p.max(l),
                    classes: n_classes,
                });
            }
            confusion[l][p] += 1;
        }
        Ok(EvalReport {
            n_test: labels.len(),
            error_rate,
            confusion,
            seed,
            config,
        })
    }

    /// Line-oriented text form:
    ///
    /// ```text
    /// n_test: 10000
    /// error_rate: 0.123400
    /// seed: 7
    /// config.<key>: <value>        (one line per entry)
    /// confusion: <L>               (then L rows of space-separated counts,
    /// <row for true class 0>        columns are predicted classes)
    /// ...
    /// ```
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "n_test: {}", self.n_test);
        let _ = writeln!(s, "error_rate: {:.6}", self.error_rate);
        let _ = writeln!(s, "seed: {}", self.seed);
        for (k, v) in &self.config {
            let _ = writeln!(s, "config.{}: {}", k, v);
        }
        let _ = writeln!(s, "confusion: {}", self.confusion.len());
        for row in &self.confusion {
            let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            let _ = writeln!(s, "{}", cells.join(" "));
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogregConfig {
    pub l2: f64,
    pub learning_rate: f64,
    pub iterations: usize,
}

impl Default for LogregConfig {
    fn default() -> Self {
        LogregConfig {
            l2: 1e-4,
            learning_rate: 0.5,
            iterations: 500,
        }
    }
}

/// Multinomial logistic regression: `softmax(x W + b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LogisticRegression {
    pub w: Tensor,
    pub b: Tensor,
}

impl LogisticRegression {
    pub fn zeros(dim: usize, classes: usize) -> Self {
        LogisticRegression {
            w: Tensor::zeros(&[dim, classes]),
            b: Tensor::zeros(&[classes]),
        }
    }

    pub fn probs(&self, x: &Tensor) -> Result<Tensor> {
        Ok(softmax_rows(&matmul(x, &self.w)?.add_row(&self.b)?))
    }
}

/// Mean softmax cross-entropy plus `½ λ ‖W‖²` (biases unpenalized), and its
/// gradient `(dW, db)`.
pub fn logreg_objective(
    m: &LogisticRegression,
    x: &Tensor,
    y: &[usize],
    l2: f64,
) -> Result<(f64, Tensor, Tensor)> {
    let n = x.rows();
    let p = m.probs(x)?;
    let l = p.cols();
    let mut loss = 0.0;
    let mut d = p.data().to_vec();
    for (i, &c) in y.iter().enumerate() {
        if c >= l {
            return Err(Error::LabelOutOfRange {
                label: c,
                classes: l,
            });
        }
        loss -= p.get(i, c).max(1e-300).ln();
        d[i * l + c] -= 1.0;
    }
    d.iter_mut().for_each(|v| *v /= n as f64);
    let d = Tensor::from_parts(vec![n, l], d);
    let dw = matmul_tn(x, &d)?.zip_map(&m.w, |g, w| g + l2 * w)?;
    let db = d.sum_rows();
    let db = db.reshape(vec![l])?;
    let reg = 0.5 * l2 * m.w.data().iter().map(|w| w * w).sum::<f64>();
    Ok((loss / n as f64 + reg, dw, db))
}

/// Full-batch gradient descent from zero weights (deterministic).
pub fn logreg_train(
    x: &Tensor,
    y: &[usize],
    n_classes: usize,
    cfg: &LogregConfig,
) -> Result<LogisticRegression> {
    if x.rows() != y.len() || y.is_empty() {
        return Err(Error::dim(
            "features and labels must be non-empty and aligned",
        ));
    }
    if let Some(&label) = y.iter().find(|&&c| c >= n_classes) {
        return Err(Error::LabelOutOfRange {
            label,
            classes: n_classes,
        });
    }
    if y.iter().all(|&c| c == y[0]) && n_classes > 1 {
        return Err(Error::Data("labels are all one class".into()));
    }
    let mut m = LogisticRegression::zeros(x.cols(), n_classes);
    for _ in 0..cfg.iterations {
        let (_, dw, db) = logreg_objective(&m, x, y, cfg.l2)?;
        m.w = m.w.zip_map(&dw, |w, g| w - cfg.learning_rate * g)?;
        m.b = m.b.zip_map(&db, |b, g| b - cfg.learning_rate * g)?;
    }
    m.w.ensure_finite("logistic regression weights")?;
    Ok(m)
}

/// Argmax class per row, ties to the lowest class.
pub fn logreg_predict(m: &LogisticRegression, x: &Tensor) -> Result<Vec<usize>> {
    let p = m.probs(x)?;
    Ok((0..p.rows()).map(|i| argmax_lowest(p.row(i))).collect())
}

/// Euclidean k-nearest-neighbour vote. Equal distances go to the lower
/// training index; tied votes go to the lowest class.
pub fn knn_predict(
    train_x: &Tensor,
    train_y: &[usize],
    query: &Tensor,
    k: usize,
) -> Result<Vec<usize>> {
    let n = train_x.rows();
    if n == 0 {
        return Err(Error::Data("empty training set".into()));
    }
    if k == 0 || k > n {
        return Err(Error::Config(format!("k = {} must lie in 1..={}", k, n)));
    }
    if train_y.len() != n || query.cols() != train_x.cols() {
        return Err(Error::dim("kNN training set and query disagree"));
    }
    let classes = train_y.iter().max().map_or(0, |m| m + 1);
    let mut out = Vec::with_capacity(query.rows());
    for i in 0..query.rows() {
        let q = query.row(i);
        let mut dist: Vec<(f64, usize)> = (0..n)
            .map(|j| {
                let d: f64 = q
                    .iter()
                    .zip(train_x.row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                (d, j)
            })
            .collect();
        dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut votes = vec![0usize; classes];
        for &(_, j) in &dist[..k] {
            votes[train_y[j]] += 1;
        }
        let best = votes.iter().copied().max().unwrap_or(0);
        out.push(votes.iter().position(|&v| v == best).unwrap_or(0));
    }
    Ok(out)
}
