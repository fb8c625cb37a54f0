use super::m1::{m1_features, M1Model};
use super::m2::{m2_classify, M2Model};
use crate::dists::CategoricalPosterior;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// M2 trained on the posterior-mean embeddings of a trained M1.
#[derive(Clone, Debug, PartialEq)]
pub struct StackedModel {
    pub m1: M1Model,
    pub m2: M2Model,
}

impl StackedModel {
    pub fn new(m1: M1Model, m2: M2Model) -> Result<Self> {
        let s = StackedModel { m1, m2 };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.m1.validate()?;
        self.m2.validate()?;
        if self.m2.input_dim() != self.m1.d_z {
            return Err(Error::dim(format!(
                "M2 expects {} inputs but M1 yields {} features",
                self.m2.input_dim(),
                self.m1.d_z
            )));
        }
        Ok(())
    }

    /// `m1_features` of raw pixels.
    pub fn features(&self, x: &Tensor) -> Result<Tensor> {
        m1_features(&self.m1, x)
    }

    /// `q(y | z₁)` with `z₁ = μ_φ(x)` from M1.
    pub fn classify(&self, x: &Tensor) -> Result<CategoricalPosterior> {
        m2_classify(&self.m2, &self.features(x)?)
    }
}
