//! Checks the hand-derived gradients of every bound against central finite
//! differences on a small random model.
//!
//! cargo run --example gradient_check

use semivae::models::{
    m1_bound, m2_labeled_bound, m2_objective, m2_unlabeled_bound, LabeledBatch, M1Model, M2Model,
    ObjectiveScale, Observation, UnlabeledBatch,
};
use semivae::nn::{grad_check, init_params_with_std, Head, Parameters};
use semivae::{Result, Rng, Tensor};

fn binary(rng: &mut Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| f64::from(rng.uniform() < 0.5))
        .collect();
    Tensor::matrix(rows, cols, data).expect("shape")
}

/// Re-draws every network with a wider weight scale so the check sees
/// non-trivial curvature.
fn widen<P: Parameters>(p: &mut P, rng: &mut Rng, std: f64) {
    for t in p.tensors_mut() {
        *t = rng.gauss_draw(t.shape()).scale(std);
    }
}

fn main() -> Result<()> {
    let mut rng = Rng::new(7);
    let (d, l, h, dz) = (6, 3, 5, 2);
    let h_step = 1e-5;

    let m1 = M1Model {
        encoder: init_params_with_std(&mut rng, &[d, h, 2 * dz], Head::GaussianPair, 0.5)?,
        decoder: init_params_with_std(&mut rng, &[dz, h, d], Head::BernoulliLogits, 0.5)?,
        d_z: dz,
    };
    let x = binary(&mut rng, 4, d);
    let eps = rng.gauss_draw(&[4, dz]);
    let (_, pass) = m1_bound(&m1, &x, &eps)?;
    let err = grad_check(
        |p: &M1Model| Ok(m1_bound(p, &x, &eps)?.0.total),
        &m1,
        &pass.backward(&m1)?,
        h_step,
    )?;
    println!("M1 bound            max relative error {err:.2e}");

    let mut m2 = M2Model::new(&mut rng, d, l, &[h], dz, Observation::Bernoulli)?;
    widen(&mut m2, &mut rng, 0.5);
    let y = [0, 2, 1, 1];
    let (_, pass) = m2_labeled_bound(&m2, &x, &y, &eps)?;
    let err = grad_check(
        |p: &M2Model| Ok(m2_labeled_bound(p, &x, &y, &eps)?.0.total),
        &m2,
        &pass.backward(&m2)?,
        h_step,
    )?;
    println!("M2 labelled bound   max relative error {err:.2e}");

    let eps_all = rng.gauss_draw(&[4 * l, dz]);
    let (_, pass) = m2_unlabeled_bound(&m2, &x, &eps_all)?;
    let err = grad_check(
        |p: &M2Model| Ok(m2_unlabeled_bound(p, &x, &eps_all)?.0.total),
        &m2,
        &pass.backward(&m2)?,
        h_step,
    )?;
    println!("M2 unlabelled bound max relative error {err:.2e}");

    let xu = binary(&mut rng, 3, d);
    let eps_u = rng.gauss_draw(&[3 * l, dz]);
    let objective = |p: &M2Model| {
        m2_objective(
            p,
            Some(LabeledBatch {
                x: &x,
                y: &y,
                eps: &eps,
            }),
            Some(UnlabeledBatch {
                x: &xu,
                eps: &eps_u,
                sampled: None,
            }),
            2.0,
            ObjectiveScale {
                labeled: 3.0,
                unlabeled: 5.0,
            },
        )
    };
    let (_, pass) = objective(&m2)?;
    let err = grad_check(
        |p: &M2Model| Ok(objective(p)?.0.total),
        &m2,
        &pass.backward(&m2)?,
        h_step,
    )?;
    println!("M2 objective        max relative error {err:.2e}");
    Ok(())
}
