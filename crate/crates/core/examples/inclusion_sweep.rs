//! Set-valued source term: selection strategies and the regularization sweep.

use std::f64::consts::PI;
use std::sync::Arc;

use evoctl::families::{build_kernel, DampingSpec, TimeGrid};
use evoctl::inclusion::{
    picard_solve, sweep_regularization, ControlProblem, SelectionStrategy, SetValuedMap,
};
use evoctl::space::{ModeSet, OperatorMatrix, SpectralVector};
use evoctl::synthesis::RegularizationParam;

fn main() -> evoctl::Result<()> {
    let n = 16;
    let modes = ModeSet::first(n)?;
    let grid = TimeGrid::new(PI, 1024)?;
    let kernel = Arc::new(build_kernel(&modes, &DampingSpec::cos(0.5, PI)?, &grid)?);
    let profile = |scale: f64| {
        SpectralVector::from_real(&(1..=n).map(|k| scale / (k * k) as f64).collect::<Vec<_>>())
    };
    let inclusion = SetValuedMap::saturating(0.01, SpectralVector::zeros(n), 0.1)?;
    let problem = ControlProblem::new(
        kernel,
        OperatorMatrix::identity(n),
        inclusion,
        profile(1.0)?,
        SpectralVector::zeros(n),
        profile(-0.5)?,
        RegularizationParam::new(1e-3)?,
    )?;

    for strategy in [
        SelectionStrategy::Center,
        SelectionStrategy::MinNormShift,
        SelectionStrategy::RandomExtreme { seed: 7 },
    ] {
        let sol = picard_solve(&problem, strategy)?;
        println!(
            "{strategy:?}: terminal error {:.4e} after {} iterations, residuals {:?}",
            sol.terminal_error,
            sol.iterations,
            sol.residual_history
                .iter()
                .map(|r| format!("{r:.1e}"))
                .collect::<Vec<_>>()
        );
    }

    let table = sweep_regularization(
        &problem,
        &[1.0, 1e-2, 1e-4, 1e-6],
        SelectionStrategy::Center,
    )?;
    table.write_csv(std::io::stdout())?;
    println!("non-decay flagged: {}", table.non_decay);
    Ok(())
}
