//! Nonlocal initial data and impulses: the solver keeps both sides of each jump.

use std::f64::consts::PI;
use std::sync::Arc;

use evoctl::families::{build_kernel, DampingSpec, TimeGrid};
use evoctl::inclusion::{
    impulsive_solve, ControlProblem, Impulse, ImpulseSpec, JumpMap, NonlocalMap, NonlocalSpec,
    SelectionStrategy, SetValuedMap,
};
use evoctl::space::{ModeSet, OperatorMatrix, SpectralVector};
use evoctl::synthesis::RegularizationParam;

fn main() -> evoctl::Result<()> {
    let n = 8;
    let modes = ModeSet::first(n)?;
    let grid = TimeGrid::new(PI, 1024)?;
    let kernel = Arc::new(build_kernel(&modes, &DampingSpec::cos(0.5, PI)?, &grid)?);
    let profile = |scale: f64| {
        SpectralVector::from_real(&(1..=n).map(|k| scale / (k * k) as f64).collect::<Vec<_>>())
    };
    let problem = ControlProblem::new(
        kernel,
        OperatorMatrix::identity(n),
        SetValuedMap::saturating(0.01, SpectralVector::zeros(n), 0.05)?,
        profile(1.0)?,
        SpectralVector::zeros(n),
        profile(-0.5)?,
        RegularizationParam::new(1e-3)?,
    )?;
    let nonlocal = NonlocalSpec {
        g: NonlocalMap::Point { eps: 0.1, index: 0 },
        h: NonlocalMap::Mean { eps: 0.05 },
    };
    let impulses = ImpulseSpec {
        impulses: vec![
            Impulse {
                time: grid.node(256),
                position: JumpMap::Saturating(0.2),
                velocity: JumpMap::Zero,
            },
            Impulse {
                time: grid.node(512),
                position: JumpMap::Zero,
                velocity: JumpMap::Constant(profile(0.1)?),
            },
        ],
    };
    let sol = impulsive_solve(&problem, &nonlocal, &impulses, SelectionStrategy::Center)?;
    println!(
        "converged {} in {} iterations, terminal error {:.4e}",
        sol.converged(),
        sol.iterations,
        sol.terminal_error
    );
    let start = sol.states[0].add(&nonlocal.g.eval(&sol.states))?;
    println!("|x(0) + g(x) - x0| = {:.2e}", start.distance(problem.x0())?);
    for rec in &sol.impulses {
        println!(
            "t = {:.4}: |x| {:.5} -> {:.5}, |x'| {:.5} -> {:.5}",
            rec.time,
            rec.pre_state.norm(),
            rec.post_state.norm(),
            rec.pre_velocity.norm(),
            rec.post_velocity.norm()
        );
    }
    Ok(())
}
