//! Scores a handful of predictions with every evaluation metric.

use gaitbac::eval::{error_histogram, evaluate};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let actual = [0.0, 0.0, 0.02, 0.05, 0.08, 0.11, 0.09, 0.03];
    let predicted = [0.004, 0.0, 0.015, 0.06, 0.07, 0.115, 0.1, 0.02];
    let r = evaluate("demo", &actual, &predicted)?;
    println!("r {:.4}  MAE {:.4}  RMSE {:.4}  RAE {:?}  RRSE {:?}", r.pearson_r, r.mae, r.rmse, r.rae, r.rrse);
    println!("within ±0.012: {:.3}  legal-limit miss rate {:?}", r.coverage_012, r.legal_confusion.miss_rate);
    let (bins, _) = error_histogram(&actual, &predicted, 5)?;
    for b in bins {
        println!("[{:+.4}, {:+.4}) {}", b.left, b.right, "#".repeat(b.count));
    }
    Ok(())
}
