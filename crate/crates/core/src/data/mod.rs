//! MNIST ingestion, semi-supervised splits, binarization, PCA and model
//! persistence.

mod checkpoint;
mod dataset;
mod idx;
mod pca;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, SavedModel,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use dataset::{
    balanced_split, binarize, default_data_dir, load_mnist, mnist_ssl, Mnist, SslDataset,
    DATA_DIR_ENV, MNIST_POOL, MNIST_TEST_IMAGES, MNIST_TEST_LABELS, MNIST_TRAIN_IMAGES,
    MNIST_TRAIN_LABELS,
};
pub use idx::{
    parse_idx_images, parse_idx_labels, read_idx_images, read_idx_labels, IdxImages, IMAGES_MAGIC,
    LABELS_MAGIC,
};
pub use pca::{pca_apply, pca_fit, pca_reconstruct, PcaTransform};
