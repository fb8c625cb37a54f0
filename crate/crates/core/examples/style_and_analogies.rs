//! Trains an M2 with a two-dimensional style variable, then writes a PGM
//! sweep of the style plane for each class and a grid of analogies: test
//! digits on the left, their inferred style re-rendered as every class.
//!
//! cargo run --release --example style_and_analogies -- [out_dir=.] [epochs=10]

use std::path::PathBuf;

use semivae::data::{default_data_dir, load_mnist, mnist_ssl};
use semivae::image::image_grid_pgm;
use semivae::models::{analogy, generate_batch, Observation};
use semivae::train::{train_m2, M2Arch, OptimizerKind, TrainConfig};
use semivae::{Result, Rng, Tensor};

const STEPS: usize = 15;
const SIDE: usize = 28;

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let out_dir = PathBuf::from(args.next().unwrap_or_else(|| ".".into()));
    let epochs: usize = args.next().map_or(10, |s| s.parse().expect("epoch count"));

    let mnist = load_mnist(default_data_dir())?;
    let data = mnist_ssl(&mnist, 1000, 10_000, &mut Rng::new(0))?;
    let arch = M2Arch {
        hidden: vec![200],
        d_z: 2,
        obs: Observation::Bernoulli,
    };
    let cfg = TrainConfig {
        optimizer: OptimizerKind::AdaGrad,
        learning_rate: 0.01,
        epochs,
        ..TrainConfig::default()
    };
    let m = train_m2(&data, &arch, &cfg)?.model;

    // tile (r, c) decodes z = (−5 + c·Δ, −5 + r·Δ)
    let delta = 10.0 / (STEPS - 1) as f64;
    let z: Vec<f64> = (0..STEPS)
        .flat_map(|r| {
            (0..STEPS).flat_map(move |c| [-5.0 + c as f64 * delta, -5.0 + r as f64 * delta])
        })
        .collect();
    let z = Tensor::new(vec![STEPS * STEPS, 2], z)?;
    for class in [2, 7] {
        let images = generate_batch(&m, class, &z)?.reshape(vec![STEPS, STEPS, SIDE * SIDE])?;
        let path = out_dir.join(format!("style_class{class}.pgm"));
        image_grid_pgm(&images, SIDE, &path)?;
        println!("wrote {}", path.display());
    }

    let n = 8;
    let x = data.test_x.select_rows(&(0..n).collect::<Vec<_>>());
    let decoded = analogy(&m, &x)?;
    let l = m.n_classes;
    let mut tiles = Vec::new();
    for i in 0..n {
        tiles.extend_from_slice(x.row(i));
        for y in 0..l {
            tiles.extend_from_slice(decoded.row(i * l + y));
        }
    }
    let path = out_dir.join("analogies.pgm");
    image_grid_pgm(
        &Tensor::new(vec![n, l + 1, SIDE * SIDE], tiles)?,
        SIDE,
        &path,
    )?;
    println!("wrote {}", path.display());
    Ok(())
}
