//! Saves a model with its optimizer and random-stream state, reloads it and
//! confirms that the copy predicts identically and resumes the same stream.
//!
//! cargo run --example checkpoints

use semivae::data::{encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, SavedModel};
use semivae::models::{m2_classify, M2Model, Observation};
use semivae::train::{OptimizerKind, OptimizerState};
use semivae::{Result, Rng};

fn main() -> Result<()> {
    let mut rng = Rng::new(11);
    let model = M2Model::new(&mut rng, 16, 4, &[8], 3, Observation::Bernoulli)?;
    let mut ck = Checkpoint::new(SavedModel::M2(model.clone()));
    ck.optimizer = Some(OptimizerState::new(OptimizerKind::AdaGrad, &model));
    ck.rng = Some(rng.state());
    ck.config.insert("note".into(), "example".into());

    let path = std::env::temp_dir().join("semivae-example.ckpt");
    save_checkpoint(&path, &ck)?;
    println!(
        "wrote {} ({} bytes)",
        path.display(),
        encode_checkpoint(&ck).len()
    );

    let loaded = load_checkpoint(&path)?;
    let SavedModel::M2(copy) = &loaded.model else {
        unreachable!("saved an M2 model")
    };
    let x = rng.gauss_draw(&[5, 16]).map(|v| f64::from(v > 0.0));
    assert_eq!(m2_classify(&model, &x)?.probs, m2_classify(copy, &x)?.probs);

    let mut resumed = Rng::from_state(loaded.rng.as_ref().expect("rng section"));
    let mut original = Rng::from_state(ck.rng.as_ref().expect("rng section"));
    assert_eq!(resumed.next_u64(), original.next_u64());
    println!(
        "reloaded {} model: predictions and random stream match",
        loaded.model.kind()
    );
    std::fs::remove_file(&path).ok();
    Ok(())
}
