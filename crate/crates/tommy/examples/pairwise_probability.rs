//! How likely is it that client i's message really preceded client j's?
//!
//! Two clients stamp messages 10us apart, but both clocks are only good to
//! about 10us. Run with `cargo run --example pairwise_probability`.

use tommy::{difference_pdf, preceding_prob, ClockModel};

fn main() -> tommy::Result<()> {
    let ci = ClockModel::gaussian(0.0, 10.0)?;
    let cj = ClockModel::gaussian(0.0, 10.0)?;

    // Closed form: both models Gaussian.
    let p = preceding_prob(100.0, 110.0, &ci, &cj, 1.0)?;
    println!("P(i at 100 precedes j at 110, both sigma=10) = {p:.4}");

    // The same question with a measured, non-Gaussian offset histogram for
    // client j: say its offset is uniform on [-5, 5].
    let cj_measured = ClockModel::empirical(vec![-5.0, 5.0], vec![0.1])?;
    let p2 = preceding_prob(100.0, 110.0, &ci, &cj_measured, 0.1)?;
    println!("same gap, j uniform on [-5,5]           = {p2:.4}");

    // The machinery underneath: the density of (theta_j - theta_i), from
    // which the answer is one tail probability.
    let diff = difference_pdf(&ci, &cj_measured, 0.1)?;
    let (lo, hi) = diff.support();
    println!(
        "difference support [{lo:.1}, {hi:.1}], mean {:.3}, tail beyond gap {:.4}",
        diff.mean(),
        diff.tail_probability(-10.0)
    );

    // Shrink the clocks and the ambiguity disappears.
    let tight = ClockModel::gaussian(0.0, 1.0)?;
    let p3 = preceding_prob(100.0, 110.0, &tight, &tight, 1.0)?;
    println!("same gap, both sigma=1                  = {p3:.6}");
    Ok(())
}
