//! Controllability Gramian spectrum and the decay of a R(a, G) v as a shrinks,
//! for full and for partial actuation.

use std::f64::consts::PI;

use evoctl::families::{build_kernel, DampingSpec, TimeGrid};
use evoctl::space::{ModeSet, OperatorMatrix, SpectralVector, C64};
use evoctl::synthesis::{assemble_gramian, h0_diagnostic};

fn main() -> evoctl::Result<()> {
    let n = 12;
    let modes = ModeSet::first(n)?;
    let grid = TimeGrid::new(PI, 1024)?;
    let kernel = build_kernel(&modes, &DampingSpec::cos(0.5, PI)?, &grid)?;
    let a_list = [1.0, 1e-2, 1e-4, 1e-6];
    let probe = SpectralVector::from_real(&vec![1.0; n])?;

    let mut half = vec![C64::new(0.0, 0.0); n];
    half[..n / 2].fill(C64::new(1.0, 0.0));
    for (label, input) in [
        ("full actuation", OperatorMatrix::identity(n)),
        ("first half of the modes", OperatorMatrix::diagonal(&half)),
    ] {
        let g = assemble_gramian(&kernel, &input)?;
        println!(
            "{label}: lambda_min {:.3e}, lambda_max {:.3e}",
            g.lambda_min(),
            g.lambda_max()
        );
        let table = h0_diagnostic(&g, &a_list, std::slice::from_ref(&probe))?;
        for row in &table.rows {
            println!(
                "  a = {:>7.0e}   |a R(a,G) v| = {:.4e}",
                row.a, row.norm_value
            );
        }
        println!("  non-decay flagged: {}", table.any_non_decay());
    }
    Ok(())
}
