//! Turn ordered stick values into per-style pattern probabilities.
//!
//! Later styles put more weight on the first pattern, because every column
//! of stick values ascends down the styles.

use latent_style::model::{stick_break, StickBreakingBetas};

fn main() -> latent_style::error::Result<()> {
    let betas = StickBreakingBetas::from_rows(&[vec![-2.0, 0.5], vec![0.0, 1.0], vec![1.5, 2.0]], 3)?;
    let theta = stick_break(&betas)?;
    for k in 0..betas.styles() {
        let row = theta.row(k);
        let formatted: Vec<String> = row.iter().map(|p| format!("{p:.4}")).collect();
        println!("style {}: [{}] sum={:.12}", k + 1, formatted.join(", "), row.iter().sum::<f64>());
    }
    Ok(())
}
