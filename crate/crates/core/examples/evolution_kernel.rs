//! Evolution kernel of the damped string: axioms, bounds and sample evaluations.

use std::f64::consts::PI;

use evoctl::families::{build_kernel, evolution_apply, verify_axioms, DampingSpec, TimeGrid};
use evoctl::space::{ModeSet, SpectralVector};

fn main() -> evoctl::Result<()> {
    let modes = ModeSet::first(16)?;
    let grid = TimeGrid::new(PI, 1024)?;
    let damping = DampingSpec::cos(0.5, PI)?;
    let kernel = build_kernel(&modes, &damping, &grid)?;

    let report = verify_axioms(&kernel);
    println!("S(t,t)=0 violation      {:e}", report.s_diagonal);
    println!("C(t,t)=I violation      {:e}", report.c_diagonal);
    println!("d/dt S at t=s           {:.3e}", report.dt_at_diagonal);
    println!("d/ds S at s=t           {:.3e}", report.ds_at_diagonal);
    println!("second-order relation   {:.3e}", report.second_order);
    println!("gronwall min slack      {:.3e}", report.gronwall_min_slack);
    println!(
        "Nhat {:.4}  Ntilde {:.4}  N1 {:.4}",
        report.nhat, report.ntilde, report.lipschitz
    );
    println!(
        "substeps for modes 1 and 16: {} / {}",
        kernel.substeps(0),
        kernel.substeps(15)
    );

    let x =
        SpectralVector::from_real(&(1..=16).map(|n| 1.0 / f64::from(n * n)).collect::<Vec<_>>())?;
    for (t, s) in [(PI / 2.0, 0.0), (PI, PI / 4.0), (PI, 0.0)] {
        let y = evolution_apply(&kernel, t, s, &x)?;
        println!("|S({t:.3}, {s:.3}) x| = {:.6}", y.norm());
    }
    Ok(())
}
