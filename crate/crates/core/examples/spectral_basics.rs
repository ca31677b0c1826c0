//! Spectral vectors, the diagonal generator and the unperturbed cosine/sine families.

use evoctl::families::{cosine_apply, sine_apply};
use evoctl::space::{apply_a, inner_product, ModeSet, OperatorMatrix, SpectralVector, C64};

fn main() -> evoctl::Result<()> {
    let modes = ModeSet::first(5)?;
    let x = SpectralVector::from_vec(vec![
        C64::new(1.0, 0.0),
        C64::new(0.0, 0.5),
        C64::new(0.25, -0.25),
        C64::new(0.0, 0.0),
        C64::new(0.1, 0.0),
    ])?;
    println!("x        = {:?}", x.as_slice());
    println!("|x|      = {:.6}", x.norm());
    println!("A x      = {:?}", apply_a(&modes, &x)?.as_slice());
    println!(
        "<x, A x> = {:.6}",
        inner_product(&x, &apply_a(&modes, &x)?)?
    );

    let t = std::f64::consts::FRAC_PI_3;
    let c = cosine_apply(&modes, t, &x)?;
    let s = sine_apply(&modes, t, &x)?;
    println!("C0(pi/3) x = {:?}", c.as_slice());
    println!("S0(pi/3) x = {:?}", s.as_slice());
    println!("|C0 x| <= |x|: {}", c.norm() <= x.norm());

    let b = OperatorMatrix::from_rows(
        2,
        &[
            C64::new(1.0, 0.0),
            C64::new(0.0, 2.0),
            C64::new(0.0, 0.0),
            C64::new(1.0, 0.0),
        ],
    )?;
    println!("|B| = {:.6}, |B*| = {:.6}", b.norm(), b.adjoint().norm());
    Ok(())
}
