use std::path::{Path, PathBuf};

use super::idx::{read_idx_images, read_idx_labels};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Environment variable naming the default MNIST directory.
pub const DATA_DIR_ENV: &str = "SEMIVAE_DATA_DIR";

pub const MNIST_TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const MNIST_TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const MNIST_TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const MNIST_TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

/// Size of the training pool carved from the 60,000 standard training images.
pub const MNIST_POOL: usize = 50_000;

/// `$SEMIVAE_DATA_DIR` if set, else `data/mnist` under the current directory.
pub fn default_data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data/mnist"))
}

/// The standard MNIST files, pixels in `[0, 1]`.
#[derive(Clone, Debug)]
pub struct Mnist {
    pub train_x: Tensor,
    pub train_y: Vec<usize>,
    pub test_x: Tensor,
    pub test_y: Vec<usize>,
    pub side: usize,
}

fn pair(dir: &Path, images: &str, labels: &str) -> Result<(Tensor, Vec<usize>, usize)> {
    let img = read_idx_images(dir.join(images))?;
    let lab = read_idx_labels(dir.join(labels))?;
    if img.pixels.rows() != lab.len() {
        return Err(Error::Data(format!(
            "{}: {} images but {} labels",
            dir.display(),
            img.pixels.rows(),
            lab.len()
        )));
    }
    if img.rows != img.cols {
        return Err(Error::Data(format!(
            "non-square {}x{} images",
            img.rows, img.cols
        )));
    }
    Ok((
        img.pixels,
        lab.into_iter().map(usize::from).collect(),
        img.rows,
    ))
}

/// Reads the four uncompressed IDX files from `dir`.
pub fn load_mnist(dir: impl AsRef<Path>) -> Result<Mnist> {
    let dir = dir.as_ref();
    let (train_x, train_y, side) = pair(dir, MNIST_TRAIN_IMAGES, MNIST_TRAIN_LABELS)?;
    let (test_x, test_y, test_side) = pair(dir, MNIST_TEST_IMAGES, MNIST_TEST_LABELS)?;
    if side != test_side {
        return Err(Error::Data("train and test image sizes differ".into()));
    }
    Ok(Mnist {
        train_x,
        train_y,
        test_x,
        test_y,
        side,
    })
}

/// Labelled and unlabelled training subsets plus a held-out test set.
#[derive(Clone, Debug, PartialEq)]
pub struct SslDataset {
    pub labeled_x: Tensor,
    pub labeled_y: Vec<usize>,
    pub unlabeled_x: Tensor,
    pub test_x: Tensor,
    pub test_y: Vec<usize>,
    pub n_classes: usize,
    /// Pool row of each labelled example.
    pub labeled_index: Vec<usize>,
    /// Pool row of each unlabelled example.
    pub unlabeled_index: Vec<usize>,
}

impl SslDataset {
    pub fn input_dim(&self) -> usize {
        self.labeled_x.cols()
    }

    pub fn n_labeled(&self) -> usize {
        self.labeled_y.len()
    }

    pub fn n_unlabeled(&self) -> usize {
        self.unlabeled_x.rows()
    }

    /// All training inputs, labelled rows first.
    pub fn all_train_x(&self) -> Tensor {
        let mut data = self.labeled_x.data().to_vec();
        data.extend_from_slice(self.unlabeled_x.data());
        Tensor::from_parts(
            vec![self.n_labeled() + self.n_unlabeled(), self.input_dim()],
            data,
        )
    }

    pub fn with_test(mut self, test_x: Tensor, test_y: Vec<usize>) -> Result<Self> {
        if test_x.rows() != test_y.len() || test_x.cols() != self.input_dim() {
            return Err(Error::dim("test set does not match the training inputs"));
        }
        if let Some(&label) = test_y.iter().find(|&&y| y >= self.n_classes) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: self.n_classes,
            });
        }
        self.test_x = test_x;
        self.test_y = test_y;
        Ok(self)
    }

    /// Applies `f` to every input matrix (e.g. a feature extractor).
    pub fn map_inputs(&self, mut f: impl FnMut(&Tensor) -> Result<Tensor>) -> Result<SslDataset> {
        Ok(SslDataset {
            labeled_x: f(&self.labeled_x)?,
            unlabeled_x: f(&self.unlabeled_x)?,
            test_x: f(&self.test_x)?,
            labeled_y: self.labeled_y.clone(),
            test_y: self.test_y.clone(),
            n_classes: self.n_classes,
            labeled_index: self.labeled_index.clone(),
            unlabeled_index: self.unlabeled_index.clone(),
        })
    }
}

/// Draws `n_labeled / L` examples per class uniformly without replacement;
/// every other pool row becomes unlabelled (labels dropped). Both index lists
/// come back in ascending pool order. The test set starts empty.
pub fn balanced_split(
    pool_x: &Tensor,
    pool_y: &[usize],
    n_labeled: usize,
    n_classes: usize,
    rng: &mut Rng,
) -> Result<SslDataset> {
    if pool_x.rows() != pool_y.len() {
        return Err(Error::dim(format!(
            "{} rows but {} labels",
            pool_x.rows(),
            pool_y.len()
        )));
    }
    if n_classes == 0 || n_labeled % n_classes != 0 {
        return Err(Error::Config(format!(
            "{} labels cannot be split evenly over {} classes",
            n_labeled, n_classes
        )));
    }
    let per_class = n_labeled / n_classes;
    let mut by_class = vec![Vec::new(); n_classes];
    for (i, &y) in pool_y.iter().enumerate() {
        if y >= n_classes {
            return Err(Error::LabelOutOfRange {
                label: y,
                classes: n_classes,
            });
        }
        by_class[y].push(i);
    }
    let mut chosen = vec![false; pool_y.len()];
    for (c, members) in by_class.iter_mut().enumerate() {
        if members.len() < per_class {
            return Err(Error::Data(format!(
                "class {} has {} examples, {} needed",
                c,
                members.len(),
                per_class
            )));
        }
        // partial Fisher–Yates: the first `per_class` slots are a uniform draw
        for k in 0..per_class {
            let j = k + rng.below(members.len() - k);
            members.swap(k, j);
            chosen[members[k]] = true;
        }
    }
    let labeled_index: Vec<usize> = (0..pool_y.len()).filter(|&i| chosen[i]).collect();
    let unlabeled_index: Vec<usize> = (0..pool_y.len()).filter(|&i| !chosen[i]).collect();
    let d = pool_x.cols();
    Ok(SslDataset {
        labeled_x: pool_x.select_rows(&labeled_index),
        labeled_y: labeled_index.iter().map(|&i| pool_y[i]).collect(),
        unlabeled_x: pool_x.select_rows(&unlabeled_index),
        test_x: Tensor::zeros(&[0, d]),
        test_y: Vec::new(),
        n_classes,
        labeled_index,
        unlabeled_index,
    })
}

/// Semi-supervised MNIST: the first `pool_size` training images form the
/// pool, split with [`balanced_split`]; the standard test set is attached.
pub fn mnist_ssl(
    mnist: &Mnist,
    n_labeled: usize,
    pool_size: usize,
    rng: &mut Rng,
) -> Result<SslDataset> {
    if pool_size > mnist.train_x.rows() || pool_size < n_labeled {
        return Err(Error::Config(format!(
            "pool of {} must lie between {} labels and {} training images",
            pool_size,
            n_labeled,
            mnist.train_x.rows()
        )));
    }
    let idx: Vec<usize> = (0..pool_size).collect();
    let pool_x = mnist.train_x.select_rows(&idx);
    balanced_split(&pool_x, &mnist.train_y[..pool_size], n_labeled, 10, rng)?
        .with_test(mnist.test_x.clone(), mnist.test_y.clone())
}

/// One Bernoulli coin per pixel: `1` with probability equal to the pixel.
pub fn binarize(x: &Tensor, rng: &mut Rng) -> Result<Tensor> {
    if let Some(v) = x.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Data(format!("pixel {} outside [0, 1]", v)));
    }
    let data = x
        .data()
        .iter()
        .map(|&p| if rng.uniform() < p { 1.0 } else { 0.0 })
        .collect();
    Ok(Tensor::from_parts(x.shape().to_vec(), data))
}
