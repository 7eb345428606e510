//! Control of the discretized heat cascade: drive y to zero exactly and z
//! close to a target, then check by resimulation.

use douglas_core::heat::{simulate_forward, synthesize_control, HeatConfig, HeatModel};
use douglas_core::linop::Tolerances;
use nalgebra::DVector;

fn main() -> douglas_core::error::Result<()> {
    let cfg = HeatConfig::new(30, 60, 0.5, (0.3, 0.8), 0.5)?;
    let model = HeatModel::assemble(cfg)?;
    let y0 = model.sine_mode(1);
    let z0 = DVector::zeros(model.n());
    let target = model.sine_mode(2) * 0.01;

    let free = simulate_forward(&model, &y0, &z0, &model.zero_control())?;
    println!("uncontrolled ‖y(T)‖ = {:.3e}", model.l2_norm(&free.y_terminal));

    let tol = Tolerances::default();
    let res = synthesize_control(&model, &y0, &z0, &target, 1e-2, &tol)?;
    println!("controlled   ‖y(T)‖ = {:.3e}", res.y_terminal_norm);
    println!("‖z(T) − zT‖ = {:.3e} (eps {})", res.z_error, res.epsilon);
    println!("‖h‖ = {:.3e}", res.control_norm);
    Ok(())
}
