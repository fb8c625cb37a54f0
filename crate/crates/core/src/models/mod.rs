//! Latent-feature model (M1), generative semi-supervised model (M2) and the
//! M1+M2 stack, with their variational bounds and gradients.
//!
//! All bound values are *objectives to minimize*: the negative of the
//! evidence lower bound, in nats, averaged (or summed, for the dataset
//! objective) over examples.

mod m1;
mod m2;
mod stack;
mod vae;

pub use m1::{m1_bound, m1_features, m1_features_sampled, M1Grads, M1Model, M1Pass};
pub use m2::{
    analogy, generate, generate_batch, m2_classify, m2_labeled_bound, m2_objective,
    m2_unlabeled_bound, m2_unlabeled_bound_sampled, one_hot, LabeledBatch, M2Grads, M2LabeledPass,
    M2Model, M2ObjectivePass, M2UnlabeledPass, ObjectiveScale, UnlabeledBatch,
};
pub use stack::StackedModel;
pub use vae::Observation;

/// Per-batch decomposition of a bound.
///
/// `total = −(recon_loglik + prior_y_term − kl_term + entropy_term) + class_loss_term`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BoundBreakdown {
    pub total: f64,
    pub recon_loglik: f64,
    pub kl_term: f64,
    pub prior_y_term: f64,
    pub entropy_term: f64,
    pub class_loss_term: f64,
}

impl BoundBreakdown {
    pub fn from_terms(recon: f64, kl: f64, prior_y: f64, entropy: f64, class_loss: f64) -> Self {
        BoundBreakdown {
            total: -(recon + prior_y - kl + entropy) + class_loss,
            recon_loglik: recon,
            kl_term: kl,
            prior_y_term: prior_y,
            entropy_term: entropy,
            class_loss_term: class_loss,
        }
    }

    /// The lower bound itself, `−total` (meaningful when there is no
    /// classification term).
    pub fn elbo(&self) -> f64 {
        -self.total
    }

    /// Recomputes `total` from the parts.
    pub fn recombined(&self) -> f64 {
        -(self.recon_loglik + self.prior_y_term - self.kl_term + self.entropy_term)
            + self.class_loss_term
    }

    pub(crate) fn add(&mut self, other: &BoundBreakdown) {
        self.total += other.total;
        self.recon_loglik += other.recon_loglik;
        self.kl_term += other.kl_term;
        self.prior_y_term += other.prior_y_term;
        self.entropy_term += other.entropy_term;
        self.class_loss_term += other.class_loss_term;
    }

    pub(crate) fn scaled(&self, s: f64) -> BoundBreakdown {
        BoundBreakdown {
            total: self.total * s,
            recon_loglik: self.recon_loglik * s,
            kl_term: self.kl_term * s,
            prior_y_term: self.prior_y_term * s,
            entropy_term: self.entropy_term * s,
            class_loss_term: self.class_loss_term * s,
        }
    }
}
