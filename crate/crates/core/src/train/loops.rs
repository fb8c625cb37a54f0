use std::time::Instant;

use super::optim::{add_weight_decay, OptimizerKind, OptimizerState, StepConfig};
use crate::data::{binarize, SslDataset};
use crate::error::{Error, Result};
use crate::models::{
    m1_bound, m1_features, m2_classify, m2_objective, BoundBreakdown, LabeledBatch, M1Model,
    M2Model, ObjectiveScale, Observation, StackedModel, UnlabeledBatch,
};
use crate::nn::Parameters;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// What `N` means in `α = alpha_scale · N`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlphaBase {
    /// Labelled plus unlabelled training points.
    Total,
    /// Labelled points only.
    Labeled,
}

impl AlphaBase {
    pub fn tag(self) -> &'static str {
        match self {
            AlphaBase::Total => "total",
            AlphaBase::Labeled => "labeled",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "total" => Some(AlphaBase::Total),
            "labeled" => Some(AlphaBase::Labeled),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub first_moment_decay: f64,
    pub second_moment_decay: f64,
    pub alpha_scale: f64,
    pub alpha_base: AlphaBase,
    /// Labelled minibatch size (M1: the only minibatch size).
    pub minibatch_size: usize,
    /// Unlabelled minibatch size for M2.
    pub unlabeled_minibatch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// `N(0, I)` prior on the parameters; used by M2 only.
    pub weight_decay: bool,
    /// Resample binary pixels from intensities at every minibatch
    /// (Bernoulli observations only).
    pub binarize: bool,
    /// Sample one label per unlabelled point instead of summing over classes.
    pub sample_labels: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let s = StepConfig::default();
        TrainConfig {
            learning_rate: s.learning_rate,
            first_moment_decay: s.first_moment_decay,
            second_moment_decay: s.second_moment_decay,
            alpha_scale: 0.1,
            alpha_base: AlphaBase::Total,
            minibatch_size: 100,
            unlabeled_minibatch_size: 100,
            epochs: 10,
            seed: 0,
            optimizer: OptimizerKind::AdaGrad,
            weight_decay: true,
            binarize: true,
            sample_labels: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if !unit(self.first_moment_decay) || !unit(self.second_moment_decay) {
            return Err(Error::Config("moment decays must lie in (0, 1)".into()));
        }
        if !(self.alpha_scale >= 0.0 && self.alpha_scale.is_finite()) {
            return Err(Error::Config(format!(
                "alpha scale {} must be non-negative",
                self.alpha_scale
            )));
        }
        if self.minibatch_size == 0 || self.unlabeled_minibatch_size == 0 {
            return Err(Error::Config("minibatch sizes must be at least 1".into()));
        }
        Ok(())
    }

    pub fn step_config(&self) -> StepConfig {
        StepConfig {
            learning_rate: self.learning_rate,
            first_moment_decay: self.first_moment_decay,
            second_moment_decay: self.second_moment_decay,
        }
    }

    /// `key=value` pairs describing this configuration, in a fixed order.
    pub fn echo(&self) -> Vec<(String, String)> {
        [
            ("learning_rate", format!("{:e}", self.learning_rate)),
            (
                "first_moment_decay",
                format!("{:e}", self.first_moment_decay),
            ),
            (
                "second_moment_decay",
                format!("{:e}", self.second_moment_decay),
            ),
            ("alpha_scale", format!("{:e}", self.alpha_scale)),
            ("alpha_base", self.alpha_base.tag().to_string()),
            ("minibatch_size", self.minibatch_size.to_string()),
            (
                "unlabeled_minibatch_size",
                self.unlabeled_minibatch_size.to_string(),
            ),
            ("epochs", self.epochs.to_string()),
            ("seed", self.seed.to_string()),
            ("optimizer", self.optimizer.tag().to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("binarize", self.binarize.to_string()),
            ("sample_labels", self.sample_labels.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct M1Arch {
    pub hidden: Vec<usize>,
    pub d_z: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct M2Arch {
    pub hidden: Vec<usize>,
    pub d_z: usize,
    pub obs: Observation,
}

/// Per-epoch training summary. `bound` and the term columns are per-example
/// means of the minimized objective over the epoch's steps; `class_loss` is
/// the mean labelled-batch cross-entropy `−log q(y|x)` (M2 only, before any
/// α weighting).
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub bound: f64,
    pub recon_loglik: f64,
    pub kl: f64,
    pub prior_y: f64,
    pub entropy: f64,
    pub class_loss: f64,
    pub seconds: f64,
}

/// Column names of the tab-separated history log.
pub fn history_header() -> &'static str {
    "epoch\tbound\trecon_loglik\tkl\tprior_y\tentropy\tclass_loss\tseconds"
}

pub fn history_line(r: &EpochRecord) -> String {
    format!(
        "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.3}",
        r.epoch, r.bound, r.recon_loglik, r.kl, r.prior_y, r.entropy, r.class_loss, r.seconds
    )
}

/// A trained model with the optimizer and random-stream state it ended in.
#[derive(Clone, Debug)]
pub struct Trained<M> {
    pub model: M,
    pub history: Vec<EpochRecord>,
    pub optimizer: OptimizerState,
    pub rng: Rng,
}

fn record(
    epoch: usize,
    sum: &BoundBreakdown,
    weight: f64,
    class_loss: f64,
    start: Instant,
) -> EpochRecord {
    let m = sum.scaled(1.0 / weight);
    EpochRecord {
        epoch,
        bound: m.total,
        recon_loglik: m.recon_loglik,
        kl: m.kl_term,
        prior_y: m.prior_y_term,
        entropy: m.entropy_term,
        class_loss,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn scale_grads<G: Parameters + ?Sized>(g: &mut G, s: f64) {
    for t in g.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v *= s);
    }
}

fn maybe_binarize(x: Tensor, on: bool, rng: &mut Rng) -> Result<Tensor> {
    if on {
        binarize(&x, rng)
    } else {
        Ok(x)
    }
}

pub fn train_m1(x: &Tensor, arch: &M1Arch, cfg: &TrainConfig) -> Result<Trained<M1Model>> {
    train_m1_with(x, arch, cfg, |_, _| {})
}

/// Minibatch descent on the batch-mean `𝒥` over the rows of `x` (labels are
/// not used), calling `on_epoch` with the record and current model after
/// every epoch.
pub fn train_m1_with(
    x: &Tensor,
    arch: &M1Arch,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &M1Model),
) -> Result<Trained<M1Model>> {
    cfg.validate()?;
    let n = x.rows();
    if n == 0 {
        return Err(Error::Data("no training inputs".into()));
    }
    let mut rng = Rng::new(cfg.seed);
    let mut model = M1Model::new(&mut rng.split(), x.cols(), &arch.hidden, arch.d_z)?;
    let mut opt = OptimizerState::new(cfg.optimizer, &model);
    let step = cfg.step_config();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let perm = rng.permutation(n);
        let mut sum = BoundBreakdown::default();
        for chunk in perm.chunks(cfg.minibatch_size) {
            let xb = maybe_binarize(x.select_rows(chunk), cfg.binarize, &mut rng)?;
            let eps = rng.gauss_draw(&[chunk.len(), arch.d_z]);
            let (b, pass) = m1_bound(&model, &xb, &eps)?;
            let g = pass.backward(&model)?;
            opt.step(&mut model, &g, &step)?;
            sum.add(&b.scaled(chunk.len() as f64));
        }
        let r = record(epoch, &sum, n as f64, 0.0, start);
        on_epoch(&r, &model);
        history.push(r);
    }
    Ok(Trained {
        model,
        history,
        optimizer: opt,
        rng,
    })
}

pub fn train_m2(data: &SslDataset, arch: &M2Arch, cfg: &TrainConfig) -> Result<Trained<M2Model>> {
    train_m2_with(data, arch, cfg, |_, _| {})
}

/// Draws a fresh `q(y|x)` sample per row.
fn sample_classes(m: &M2Model, x: &Tensor, rng: &mut Rng) -> Result<Vec<usize>> {
    let q = m2_classify(m, x)?;
    Ok((0..x.rows())
        .map(|i| {
            let u = rng.uniform();
            let row = q.probs.row(i);
            let mut acc = 0.0;
            for (c, p) in row.iter().enumerate() {
                acc += p;
                if u < acc {
                    return c;
                }
            }
            row.len() - 1
        })
        .collect())
}

/// Descent on `(𝒥^α + ½‖θ‖²) / N`: each step pairs a labelled minibatch
/// (cycled through reshuffled passes) with the next unlabelled minibatch; an
/// epoch is one pass over the unlabelled set, or over the labelled set when
/// there is no unlabelled data.
pub fn train_m2_with(
    data: &SslDataset,
    arch: &M2Arch,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &M2Model),
) -> Result<Trained<M2Model>> {
    cfg.validate()?;
    let (n_l, n_u) = (data.n_labeled(), data.n_unlabeled());
    if n_l == 0 {
        return Err(Error::Data("M2 training needs labelled data".into()));
    }
    let n_total = n_l + n_u;
    let alpha = cfg.alpha_scale
        * match cfg.alpha_base {
            AlphaBase::Total => n_total,
            AlphaBase::Labeled => n_l,
        } as f64;
    let bin = cfg.binarize && arch.obs == Observation::Bernoulli;
    let mut rng = Rng::new(cfg.seed);
    let mut model = M2Model::new(
        &mut rng.split(),
        data.input_dim(),
        data.n_classes,
        &arch.hidden,
        arch.d_z,
        arch.obs,
    )?;
    let mut opt = OptimizerState::new(cfg.optimizer, &model);
    let step = cfg.step_config();
    let (m_l, m_u) = (
        cfg.minibatch_size.min(n_l),
        cfg.unlabeled_minibatch_size.min(n_u.max(1)),
    );
    let l = data.n_classes;
    let inv_n = 1.0 / n_total as f64;
    let mut lab_order: Vec<usize> = Vec::new();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let unl_perm = rng.permutation(n_u);
        let unl_chunks: Vec<&[usize]> = unl_perm.chunks(m_u).collect();
        let steps = if n_u > 0 {
            unl_chunks.len()
        } else {
            n_l.div_ceil(m_l)
        };
        let mut sum = BoundBreakdown::default();
        let mut ce = 0.0;
        for s in 0..steps {
            let mut lab_idx = Vec::with_capacity(m_l);
            while lab_idx.len() < m_l {
                if lab_order.is_empty() {
                    lab_order = rng.permutation(n_l);
                    lab_order.reverse();
                }
                lab_idx.push(lab_order.pop().expect("refilled above"));
            }
            let xl = maybe_binarize(data.labeled_x.select_rows(&lab_idx), bin, &mut rng)?;
            let yl: Vec<usize> = lab_idx.iter().map(|&i| data.labeled_y[i]).collect();
            let el = rng.gauss_draw(&[m_l, arch.d_z]);
            let labeled = LabeledBatch {
                x: &xl,
                y: &yl,
                eps: &el,
            };

            let (xu, eu, yu);
            let unlabeled = if n_u > 0 {
                let chunk = unl_chunks[s];
                xu = maybe_binarize(data.unlabeled_x.select_rows(chunk), bin, &mut rng)?;
                if cfg.sample_labels {
                    yu = Some(sample_classes(&model, &xu, &mut rng)?);
                    eu = rng.gauss_draw(&[chunk.len(), arch.d_z]);
                } else {
                    yu = None;
                    eu = rng.gauss_draw(&[chunk.len() * l, arch.d_z]);
                }
                Some(UnlabeledBatch {
                    x: &xu,
                    eps: &eu,
                    sampled: yu.as_deref(),
                })
            } else {
                None
            };
            let scale = ObjectiveScale {
                labeled: n_l as f64 / m_l as f64,
                unlabeled: unlabeled.map_or(0.0, |u| n_u as f64 / u.x.rows() as f64),
            };
            let (b, pass) = m2_objective(&model, Some(labeled), unlabeled, alpha, scale)?;
            let mut g = pass.backward(&model)?;
            scale_grads(&mut g, inv_n);
            if cfg.weight_decay {
                add_weight_decay(&mut g, &model, n_total)?;
            }
            opt.step(&mut model, &g, &step)?;
            sum.add(&b.scaled(inv_n));
            ce += pass.labeled_cross_entropy();
        }
        let r = record(epoch, &sum, steps as f64, ce / steps as f64, start);
        on_epoch(&r, &model);
        history.push(r);
    }
    Ok(Trained {
        model,
        history,
        optimizer: opt,
        rng,
    })
}

/// Replaces every input with its M1 posterior mean, then trains M2 on the
/// features with Gaussian observations. Returns the stacked model and the
/// feature-space dataset.
pub fn stack_features_then_train(
    m1: &M1Model,
    data: &SslDataset,
    arch: &M2Arch,
    cfg: &TrainConfig,
) -> Result<(Trained<StackedModel>, SslDataset)> {
    if data.input_dim() != m1.input_dim() {
        return Err(Error::dim(format!(
            "M1 expects {} inputs, data has {}",
            m1.input_dim(),
            data.input_dim()
        )));
    }
    let features = data.map_inputs(|x| m1_features(m1, x))?;
    let arch = M2Arch {
        obs: Observation::Gaussian,
        ..arch.clone()
    };
    let t = train_m2(&features, &arch, cfg)?;
    let stacked = Trained {
        model: StackedModel::new(m1.clone(), t.model)?,
        history: t.history,
        optimizer: t.optimizer,
        rng: t.rng,
    };
    Ok((stacked, features))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::balanced_split;
    use crate::models::{m1_bound as bound1, m2_labeled_bound};

    fn toy_pixels(rng: &mut Rng, n: usize, d: usize) -> Tensor {
        Tensor::matrix(n, d, (0..n * d).map(|_| rng.uniform()).collect()).unwrap()
    }

    fn toy_ssl(seed: u64, n: usize, d: usize, labeled: usize) -> SslDataset {
        let mut rng = Rng::new(seed);
        let y: Vec<usize> = (0..n).map(|i| i % 3).collect();
        // class-dependent intensities so labels carry signal
        let x = Tensor::matrix(
            n,
            d,
            (0..n * d)
                .map(|k| {
                    let c = y[k / d] as f64;
                    (0.2 + 0.3 * c * ((k % d) as f64 / d as f64) + 0.1 * rng.uniform()).min(1.0)
                })
                .collect(),
        )
        .unwrap();
        balanced_split(&x, &y, labeled, 3, &mut rng).unwrap()
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            learning_rate: 0.01,
            minibatch_size: 16,
            unlabeled_minibatch_size: 16,
            epochs: 1,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn m1_smoke_and_determinism() {
        let x = toy_pixels(&mut Rng::new(1), 64, 12);
        let arch = M1Arch {
            hidden: vec![8],
            d_z: 2,
        };
        let a = train_m1(&x, &arch, &small_cfg()).unwrap();
        assert_eq!(a.history.len(), 1);
        assert!(a.history[0].bound.is_finite());
        let b = train_m1(&x, &arch, &small_cfg()).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.optimizer, b.optimizer);
        assert!(train_m1(&Tensor::zeros(&[0, 12]), &arch, &small_cfg()).is_err());
    }

    #[test]
    fn m2_smoke_and_determinism_for_both_optimizers() {
        let data = toy_ssl(2, 90, 10, 15);
        let arch = M2Arch {
            hidden: vec![8],
            d_z: 2,
            obs: Observation::Bernoulli,
        };
        for opt in [OptimizerKind::AdaGrad, OptimizerKind::RmspropVariant] {
            let cfg = TrainConfig {
                optimizer: opt,
                epochs: 2,
                ..small_cfg()
            };
            let a = train_m2(&data, &arch, &cfg).unwrap();
            let b = train_m2(&data, &arch, &cfg).unwrap();
            assert_eq!(a.model, b.model);
            assert_eq!(a.history.len(), 2);
            assert!(a
                .history
                .iter()
                .all(|r| r.bound.is_finite() && r.class_loss.is_finite()));
        }
        let sampled = TrainConfig {
            sample_labels: true,
            ..small_cfg()
        };
        assert!(train_m2(&data, &arch, &sampled).unwrap().history[0]
            .bound
            .is_finite());
    }

    #[test]
    fn m2_without_unlabeled_data_is_supervised_generative_training() {
        let mut data = toy_ssl(4, 30, 6, 30);
        assert_eq!(data.n_unlabeled(), 0);
        data.unlabeled_x = Tensor::zeros(&[0, 6]);
        let arch = M2Arch {
            hidden: vec![5],
            d_z: 2,
            obs: Observation::Bernoulli,
        };
        let cfg = TrainConfig {
            alpha_scale: 0.0,
            weight_decay: false,
            binarize: false,
            ..small_cfg()
        };
        // binary inputs, since there is no binarization
        data.labeled_x = data.labeled_x.map(|v| if v > 0.4 { 1.0 } else { 0.0 });
        let t = train_m2(&data, &arch, &cfg).unwrap();
        let r = &t.history[0];
        assert_eq!(r.entropy, 0.0);
        // bound holds only ℒ terms, as a per-example mean
        assert!((r.bound + r.recon_loglik + r.prior_y - r.kl).abs() < 1e-9);
        let mut empty = data.clone();
        empty.labeled_y.clear();
        empty.labeled_x = Tensor::zeros(&[0, 6]);
        assert!(matches!(train_m2(&empty, &arch, &cfg), Err(Error::Data(_))));
    }

    #[test]
    fn rejects_bad_config() {
        let x = toy_pixels(&mut Rng::new(1), 8, 4);
        let arch = M1Arch {
            hidden: vec![3],
            d_z: 1,
        };
        for cfg in [
            TrainConfig {
                learning_rate: 0.0,
                ..small_cfg()
            },
            TrainConfig {
                first_moment_decay: 1.0,
                ..small_cfg()
            },
            TrainConfig {
                minibatch_size: 0,
                ..small_cfg()
            },
        ] {
            assert!(matches!(train_m1(&x, &arch, &cfg), Err(Error::Config(_))));
        }
    }

    #[test]
    fn single_step_descent() {
        use crate::models::{M1Model as M1, M2Model as M2};
        let mut rng = Rng::new(5);
        let cfg = StepConfig {
            learning_rate: 1e-4,
            ..StepConfig::default()
        };
        for i in 0..20 {
            let kind = if i % 2 == 0 {
                OptimizerKind::AdaGrad
            } else {
                OptimizerKind::RmspropVariant
            };
            let x = binarize(&toy_pixels(&mut rng, 6, 8), &mut rng).unwrap();
            if i < 10 {
                let mut m = M1::new(&mut rng, 8, &[5], 2).unwrap();
                let eps = rng.gauss_draw(&[6, 2]);
                let (before, pass) = bound1(&m, &x, &eps).unwrap();
                let g = pass.backward(&m).unwrap();
                OptimizerState::new(kind, &m)
                    .step(&mut m, &g, &cfg)
                    .unwrap();
                assert!(bound1(&m, &x, &eps).unwrap().0.total <= before.total);
            } else {
                let mut m = M2::new(&mut rng, 8, 3, &[5], 2, Observation::Bernoulli).unwrap();
                let y = [0, 1, 2, 0, 1, 2];
                let eps = rng.gauss_draw(&[6, 2]);
                let (before, pass) = m2_labeled_bound(&m, &x, &y, &eps).unwrap();
                let g = pass.backward(&m).unwrap();
                OptimizerState::new(kind, &m)
                    .step(&mut m, &g, &cfg)
                    .unwrap();
                assert!(m2_labeled_bound(&m, &x, &y, &eps).unwrap().0.total <= before.total);
            }
        }
    }

    #[test]
    fn stacked_training_uses_features() {
        let data = toy_ssl(6, 60, 10, 15);
        let mut rng = Rng::new(7);
        let m1 = M1Model::new(&mut rng, 10, &[6], 3).unwrap();
        let arch = M2Arch {
            hidden: vec![6],
            d_z: 2,
            obs: Observation::Bernoulli,
        };
        let (t, feats) = stack_features_then_train(&m1, &data, &arch, &small_cfg()).unwrap();
        assert_eq!(feats.input_dim(), 3);
        assert_eq!(t.model.m2.obs, Observation::Gaussian);
        assert_eq!(feats.labeled_x, m1_features(&m1, &data.labeled_x).unwrap());
        assert!(t.history[0].bound.is_finite());
    }

    #[test]
    fn history_format() {
        let r = EpochRecord {
            epoch: 3,
            bound: 1.5,
            recon_loglik: -1.0,
            kl: 0.5,
            prior_y: 0.0,
            entropy: 0.0,
            class_loss: 0.25,
            seconds: 2.0,
        };
        assert_eq!(
            history_line(&r),
            "3\t1.500000\t-1.000000\t0.500000\t0.000000\t0.000000\t0.250000\t2.000"
        );
        assert_eq!(
            history_header().split('\t').count(),
            history_line(&r).split('\t').count()
        );
    }
}
