//! Steps AdaGrad and the bias-corrected RMSProp variant on a one-parameter
//! quadratic and prints their traces.
//!
//! cargo run --example optimizer_traces

use semivae::train::{OptimizerKind, OptimizerState, StepConfig};
use semivae::{Result, Tensor};

fn main() -> Result<()> {
    let cfg = StepConfig {
        learning_rate: 0.1,
        ..StepConfig::default()
    };
    for kind in [OptimizerKind::AdaGrad, OptimizerKind::RmspropVariant] {
        // minimize f(θ) = ½(θ − 3)² from θ = 0
        let mut theta = vec![Tensor::vector(vec![0.0])?];
        let mut state = OptimizerState::new(kind, &theta);
        println!("{}:", kind.tag());
        for t in 1..=5 {
            let grad = vec![theta[0].map(|v| v - 3.0)];
            state.step(&mut theta, &grad, &cfg)?;
            println!("  step {t}: θ = {:.12}", theta[0].data()[0]);
        }
    }
    Ok(())
}
