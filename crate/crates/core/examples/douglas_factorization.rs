//! Range inclusion, majorization and the minimal-norm Douglas factor for a
//! small hand-built pair.

use douglas_core::douglas::{douglas_factor, kernel_inclusion, majorization_constant, range_inclusion};
use douglas_core::linop::{Operator, Tolerances};

fn main() -> douglas_core::error::Result<()> {
    let tol = Tolerances::default();
    let b = Operator::from_rows(&[&[1.0, 0.0, 0.0], &[0.0, 2.0, 0.0], &[0.0, 0.0, 0.0]])?;
    let a = Operator::from_rows(&[&[3.0, 1.0], &[4.0, -2.0], &[0.0, 0.0]])?;

    println!("R(A) ⊆ R(B):    {}", range_inclusion(&a, &b, &tol)?.holds);
    println!("N(Bᵀ) ⊆ N(Aᵀ):  {}", kernel_inclusion(&a, &b, &tol)?.holds);
    println!("constant:       {:?}", majorization_constant(&a, &b, &tol)?);

    let c = douglas_factor(&a, &b, &tol)?;
    println!("C =\n{}", c.matrix());
    println!("‖B C − A‖ = {:.2e}", (b.matrix() * c.matrix() - a.matrix()).norm());

    let bad = Operator::from_rows(&[&[0.0], &[0.0], &[1.0]])?;
    match douglas_factor(&bad, &b, &tol) {
        Ok(_) => println!("unexpected factor"),
        Err(e) => println!("third axis: {e}"),
    }
    Ok(())
}
