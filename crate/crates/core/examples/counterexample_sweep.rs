//! The truncated family where every finite-dimensional check passes but the
//! preimage norms blow up as the dimension grows.

use douglas_core::counterexample::sweep;
use douglas_core::linop::Tolerances;

fn main() -> douglas_core::error::Result<()> {
    let report = sweep(&[8, 16, 32, 64, 128], Tolerances::default())?;
    print!("{}", report.to_csv()?);
    for (w, r) in report.rows.windows(2).zip(report.growth_ratios()) {
        println!(
            "n {:>3} -> {:>3}: growth {:.3} (n^1.5 ratio {:.3})",
            w[0].n,
            w[1].n,
            r,
            2f64.powf(1.5)
        );
    }
    Ok(())
}
