//! Match-class precision, recall and F1 from label vectors and from counts.

use dame::eval::{evaluate, MetricReport};

fn main() -> anyhow::Result<()> {
    let gold = [1, 1, 0, 0, 1, 0, 0, 1];
    let pred = [1, 0, 0, 1, 1, 0, 0, 1];
    let r = evaluate(&pred, &gold)?;
    println!("tp {} fp {} tn {} fn {}", r.tp, r.fp, r.tn, r.fn_);
    println!(
        "P {:.4} R {:.4} F1 {:.4} accuracy {:.4}",
        r.precision, r.recall, r.f1, r.accuracy
    );

    // 23 predicted matches, 22 of them right, none missed
    let r = MetricReport::from_counts(22, 1, 0, 0);
    println!("22/1/0: P {:.4} R {:.4} F1 {:.4}", r.precision, r.recall, r.f1);

    // an all-negative classifier scores zero on the match class
    let none = evaluate(&[0; 8], &gold)?;
    println!("all negative: F1 {} accuracy {:.2}", none.f1, none.accuracy);
    Ok(())
}
