//! Adjoint consistency of the assembled heat maps and convergence of the
//! scheme under grid refinement.

use douglas_core::heat::{adjoint_check, convergence, HeatConfig, HeatModel};

fn main() -> douglas_core::error::Result<()> {
    let cfg = HeatConfig::new(30, 60, 0.1, (0.3, 0.8), 0.5)?;
    let report = adjoint_check(&HeatModel::assemble(cfg)?, 20, 11)?;
    println!("transpose residual      {:.2e}", report.tier1_transpose_residual);
    println!("scheme adjoint vs Aᵀ    {:.2e}", report.scheme_adjoint_deviation);
    println!("continuous adjoint dev  {:.2e}", report.tier2_deviation);

    let conv = convergence(cfg, 3, 3, 20, 11)?;
    for level in &conv.levels {
        let first = &level.modes[0];
        println!(
            "N {:>3} M {:>3}: mode 1 A1 err {:.2e}  A2 err {:.2e}  adjoint dev {:.2e}",
            level.n, level.m, first.a1_error, first.a2_error, level.tier2_deviation
        );
    }
    println!("A1 orders {:?}", conv.a1_orders);
    println!("adjoint ratios {:?}", conv.tier2_ratios);
    Ok(())
}
