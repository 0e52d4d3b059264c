//! Compares ordinary least squares and ε-SVR on a curved one-feature target.

use gaitbac::baselines::{fit_ols, fit_svr, SvrConfig};
use nalgebra::{DMatrix, DVector};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let x = DMatrix::from_fn(60, 1, |i, _| i as f64 / 59.0);
    let y = DVector::from_fn(60, |i, _| 0.2 * x[(i, 0)].powi(2));

    let ols = fit_ols(&x, &y)?;
    let svr = fit_svr(&x, &y, &SvrConfig { gamma: 1.0, epsilon: 0.002, ..Default::default() })?;
    println!("ols: slope {:.4} per unit of x", ols.raw_coefficients()[0]);
    println!(
        "svr: {} support vectors, {} pair updates, converged {}",
        svr.model.support_vectors.len(),
        svr.updates,
        svr.model.converged
    );
    let po = ols.predict(&x)?;
    let ps = svr.model.predict(&x)?;
    for i in (0..60).step_by(10) {
        println!("x {:.2}  y {:.4}  ols {:.4}  svr {:.4}", x[(i, 0)], y[i], po[i], ps[i]);
    }
    Ok(())
}
