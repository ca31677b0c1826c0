//! Cross-checks the kernel and a controlled trajectory against direct integration.

use std::f64::consts::PI;
use std::sync::Arc;

use evoctl::families::{build_kernel, DampingSpec, TimeGrid};
use evoctl::inclusion::{picard_solve, ControlProblem, SelectionStrategy, SetValuedMap};
use evoctl::oracle::{dense_integrate, dense_sine_kernel, oracle_substeps};
use evoctl::space::{ModeSet, OperatorMatrix, SpectralVector};
use evoctl::synthesis::RegularizationParam;

fn main() -> evoctl::Result<()> {
    let n = 16;
    let modes = ModeSet::first(n)?;
    let grid = TimeGrid::new(PI, 1024)?;
    let damping = DampingSpec::cos(0.5, PI)?;
    let kernel = Arc::new(build_kernel(&modes, &damping, &grid)?);
    println!(
        "oracle substeps per interval: {}",
        oracle_substeps(&modes, &damping, &grid)
    );

    let dense = dense_sine_kernel(&modes, &damping, &grid)?;
    for (mi, column) in dense.iter().enumerate().step_by(5) {
        let gap = column
            .iter()
            .enumerate()
            .map(|(j, z)| (kernel.q(mi, j, 0) - z).norm())
            .fold(0.0, f64::max);
        println!("mode {:>2}: max |q - q_oracle| = {gap:.2e}", mi + 1);
    }

    let profile = |scale: f64| {
        SpectralVector::from_real(&(1..=n).map(|k| scale / (k * k) as f64).collect::<Vec<_>>())
    };
    let (x0, y0) = (profile(1.0)?, SpectralVector::zeros(n));
    let problem = ControlProblem::new(
        kernel,
        OperatorMatrix::identity(n),
        SetValuedMap::zero(),
        x0.clone(),
        y0.clone(),
        profile(-0.5)?,
        RegularizationParam::new(1e-4)?,
    )?;
    let sol = picard_solve(&problem, SelectionStrategy::Center)?;
    let replay = dense_integrate(&modes, &damping, &sol.controls, &x0, &y0, &grid, None)?;
    let gap = replay.last().unwrap().pos.distance(sol.terminal_state())?;
    println!("controlled x(T): solver vs oracle gap {gap:.2e}");
    Ok(())
}
