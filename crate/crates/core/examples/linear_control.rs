//! Steering the damped string toward a target with the regularized control law.

use std::f64::consts::PI;
use std::sync::Arc;

use evoctl::families::{build_kernel, DampingSpec, TimeGrid};
use evoctl::inclusion::{picard_solve, ControlProblem, SelectionStrategy, SetValuedMap};
use evoctl::space::{ModeSet, OperatorMatrix, SpectralVector};
use evoctl::synthesis::{linear_terminal_error, RegularizationParam};

fn main() -> evoctl::Result<()> {
    let n = 16;
    let modes = ModeSet::first(n)?;
    let grid = TimeGrid::new(PI, 1024)?;
    let kernel = Arc::new(build_kernel(&modes, &DampingSpec::cos(0.5, PI)?, &grid)?);
    let profile = |scale: f64| {
        SpectralVector::from_real(&(1..=n).map(|k| scale / (k * k) as f64).collect::<Vec<_>>())
    };

    let base = ControlProblem::new(
        kernel,
        OperatorMatrix::identity(n),
        SetValuedMap::zero(),
        profile(1.0)?,
        SpectralVector::zeros(n),
        profile(-0.5)?,
        RegularizationParam::new(1.0)?,
    )?;
    println!("lambda_min = {:.4e}", base.gramian().lambda_min());
    println!(
        "{:>8}  {:>12}  {:>12}  {:>10}",
        "a", "error", "closed form", "max |u|"
    );
    for a in [1.0, 1e-2, 1e-4, 1e-6] {
        let reg = RegularizationParam::new(a)?;
        let sol = picard_solve(&base.with_regularization(reg), SelectionStrategy::Center)?;
        let closed = linear_terminal_error(base.gramian(), reg, &sol.terminal_residual)?;
        let peak = sol.controls.iter().map(|u| u.norm()).fold(0.0, f64::max);
        println!(
            "{a:>8.0e}  {:>12.4e}  {closed:>12.4e}  {peak:>10.3}",
            sol.terminal_error
        );
    }
    Ok(())
}
