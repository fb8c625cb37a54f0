//! Optimizers and the M1 / M2 / stacked training loops.

mod loops;
mod optim;

pub use loops::{
    history_header, history_line, stack_features_then_train, train_m1, train_m1_with, train_m2,
    train_m2_with, AlphaBase, EpochRecord, M1Arch, M2Arch, TrainConfig, Trained,
};
pub use optim::{
    adagrad_step, add_weight_decay, bias_correction, rmsprop_variant_step, weight_decay_grad,
    OptimizerKind, OptimizerState, StepConfig, OPT_EPS,
};
