//! The two-layer stack: M1 learns a latent embedding from every training
//! image, then M2 is trained semi-supervised on those embeddings.
//!
//! cargo run --release --example stacked_m1_m2 -- [labels=100] [unlabeled=10000] [m1_epochs=10] [m2_epochs=20]

use semivae::data::{default_data_dir, load_mnist, mnist_ssl};
use semivae::eval::error_rate;
use semivae::models::Observation;
use semivae::train::{
    history_header, history_line, stack_features_then_train, train_m1, M1Arch, M2Arch,
    OptimizerKind, TrainConfig,
};
use semivae::{Result, Rng};

fn arg(args: &[String], i: usize, default: usize) -> usize {
    args.get(i).map_or(default, |s| s.parse().expect("count"))
}

fn main() -> Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (labels, unlabeled) = (arg(&args, 0, 100), arg(&args, 1, 10_000));
    let (m1_epochs, m2_epochs) = (arg(&args, 2, 10), arg(&args, 3, 20));

    let mnist = load_mnist(default_data_dir())?;
    let data = mnist_ssl(&mnist, labels, labels + unlabeled, &mut Rng::new(0))?;

    let m1_cfg = TrainConfig {
        optimizer: OptimizerKind::AdaGrad,
        learning_rate: 0.01,
        epochs: m1_epochs,
        ..TrainConfig::default()
    };
    let m1 = train_m1(
        &data.all_train_x(),
        &M1Arch {
            hidden: vec![200],
            d_z: 50,
        },
        &m1_cfg,
    )?;
    println!(
        "M1 final bound {:.3}",
        m1.history.last().map_or(f64::NAN, |r| r.bound)
    );

    let m2_cfg = TrainConfig {
        epochs: m2_epochs,
        ..m1_cfg
    };
    let arch = M2Arch {
        hidden: vec![200],
        d_z: 20,
        obs: Observation::Gaussian,
    };
    let (stack, _) = stack_features_then_train(&m1.model, &data, &arch, &m2_cfg)?;
    println!("{}", history_header());
    for r in &stack.history {
        println!("{}", history_line(r));
    }
    let preds = stack.model.classify(&data.test_x)?.argmax();
    println!(
        "stacked M1+M2 test error: {:.4}",
        error_rate(&preds, &data.test_y)?
    );
    Ok(())
}
