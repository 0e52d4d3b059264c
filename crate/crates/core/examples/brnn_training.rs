//! Fits the Bayesian-regularized network to a noisy sine and prints how the
//! effective number of parameters settles.

use gaitbac::model::{train, TrainConfig};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let noise = Normal::new(0.0, 0.01)?;
    let x = DMatrix::<f64>::from_fn(200, 1, |_, _| rng.random_range(-1.0..1.0));
    let y = DVector::from_fn(200, |i, _| (3.0 * x[(i, 0)]).sin() + noise.sample(&mut rng));

    let (model, log) = train(&x, &y, &TrainConfig::default())?;
    for e in log.epochs.iter().step_by(25) {
        println!("epoch {:>3}  E_D {:>10.3e}  γ {:>6.2}  α {:.3e}  β {:.3e}  μ {:.1e}", e.epoch, e.e_d, e.gamma, e.alpha, e.beta, e.mu);
    }
    let pred = model.forward_batch(&x)?;
    let rmse = ((&pred - &y).norm_squared() / y.len() as f64).sqrt();
    println!("stopped after {} epochs ({:?}); train RMSE {rmse:.4} with {} weights", log.epochs.len(), log.stop, model.n_weights());
    Ok(())
}
