mod common;

use std::f64::consts::PI;
use std::sync::Arc;

use evoctl::families::{build_kernel, DampingSpec, EvolutionKernel, TimeGrid};
use evoctl::inclusion::{
    apply_solution_operator, impulsive_solve, picard_solve, ControlProblem, Impulse, ImpulseSpec,
    JumpMap, NonlocalMap, NonlocalSpec, SelectionStrategy, SetValuedMap,
};
use evoctl::space::{inner_product, ModeSet, OperatorMatrix, SpectralVector, C64};
use evoctl::synthesis::{
    assemble_gramian, linear_terminal_error, RegularizationParam, RegularizedResolvent,
};
use proptest::prelude::*;

fn kernel(n: usize, steps: usize) -> Arc<EvolutionKernel> {
    let modes = ModeSet::first(n).unwrap();
    let grid = TimeGrid::new(PI, steps).unwrap();
    Arc::new(build_kernel(&modes, &DampingSpec::cos(0.5, PI).unwrap(), &grid).unwrap())
}

fn vector(n: usize) -> impl Strategy<Value = SpectralVector> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), n).prop_map(|v| {
        SpectralVector::from_vec(v.into_iter().map(|(re, im)| C64::new(re, im)).collect()).unwrap()
    })
}

fn strategy() -> impl Strategy<Value = SelectionStrategy> {
    prop_oneof![
        Just(SelectionStrategy::Center),
        Just(SelectionStrategy::MinNormShift),
        any::<u64>().prop_map(|seed| SelectionStrategy::RandomExtreme { seed }),
    ]
}

fn problem(
    k: &Arc<EvolutionKernel>,
    inclusion: SetValuedMap,
    x0: SpectralVector,
    target: SpectralVector,
    a: f64,
) -> ControlProblem {
    let n = k.dim();
    ControlProblem::new(
        k.clone(),
        OperatorMatrix::identity(n),
        inclusion,
        x0,
        SpectralVector::zeros(n),
        target,
        RegularizationParam::new(a).unwrap(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn selections_lie_in_the_ball(
        x0 in vector(4),
        target in vector(4),
        offset in vector(4),
        gain in 0.0..0.05f64,
        radius in 0.0..0.3f64,
        strategy in strategy(),
    ) {
        let k = kernel(4, 96);
        let inclusion = SetValuedMap::saturating(gain, offset, radius).unwrap();
        let p = problem(&k, inclusion.clone(), x0, target, 1e-2);
        let sol = picard_solve(&p, strategy).unwrap();
        for (j, f) in sol.selections.iter().enumerate() {
            let x = &sol.states[j];
            let t = sol.times[j];
            prop_assert!(f.distance(&inclusion.center(t, x)).unwrap() <= inclusion.radius(t, x) + 1e-12);
        }
    }

    #[test]
    fn converged_trajectory_reproduces_itself(
        x0 in vector(4),
        target in vector(4),
        gain in 0.0..0.05f64,
        eps in 0.0..0.1f64,
        strategy in strategy(),
    ) {
        let k = kernel(4, 96);
        let p = problem(&k, SetValuedMap::saturating(gain, SpectralVector::zeros(4), 0.1).unwrap(), x0, target, 1e-2);
        let nl = NonlocalSpec { g: NonlocalMap::Mean { eps }, h: NonlocalMap::Point { eps, index: 48 } };
        let imp = ImpulseSpec {
            impulses: vec![Impulse { time: k.grid().node(30), position: JumpMap::Saturating(0.2), velocity: JumpMap::Saturating(-0.1) }],
        };
        let sol = impulsive_solve(&p, &nl, &imp, strategy).unwrap();
        prop_assert!(sol.converged());
        let image = apply_solution_operator(&p, Some(&nl), Some(&imp), strategy, &sol.states).unwrap();
        let gap = image.states.iter().zip(&sol.states).map(|(a, b)| a.distance(b).unwrap()).fold(0.0, f64::max);
        prop_assert!(gap < p.options().tolerance);
        let rec = &sol.impulses[0];
        prop_assert_eq!(&rec.post_state, &rec.pre_state.add(&JumpMap::Saturating(0.2).eval(&rec.pre_state)).unwrap());
        prop_assert_eq!(&rec.post_velocity, &rec.pre_velocity.add(&JumpMap::Saturating(-0.1).eval(&rec.pre_state)).unwrap());
    }

    #[test]
    fn residual_history_nonincreasing_under_contraction(
        x0 in vector(4),
        target in vector(4),
        gain in 0.0..0.05f64,
    ) {
        let k = kernel(4, 96);
        let p = problem(&k, SetValuedMap::saturating(gain, SpectralVector::zeros(4), 0.1).unwrap(), x0, target, 1e-2);
        let sol = picard_solve(&p, SelectionStrategy::Center).unwrap();
        prop_assert!(sol.contraction_constant < 1.0);
        prop_assert!(sol.residual_history.windows(2).skip(1).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn linear_error_within_envelope_and_monotone(p in vector(6), a_exp in -6.0..0.0f64) {
        let k = kernel(6, 128);
        let g = assemble_gramian(&k, &OperatorMatrix::identity(6)).unwrap();
        let a = 10f64.powf(a_exp);
        let e = linear_terminal_error(&g, RegularizationParam::new(a).unwrap(), &p).unwrap();
        prop_assert!(e <= a / (a + g.lambda_min()) * p.norm() * (1.0 + 1e-12) + 1e-300);
        let smaller = linear_terminal_error(&g, RegularizationParam::new(a / 10.0).unwrap(), &p).unwrap();
        prop_assert!(p.is_zero() || smaller < e);
    }

    #[test]
    fn dense_input_gramian_is_hermitian_psd(entries in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 9)) {
        let k = kernel(3, 64);
        let b = OperatorMatrix::from_rows(3, &entries.iter().map(|&(re, im)| C64::new(re, im)).collect::<Vec<_>>()).unwrap();
        let g = assemble_gramian(&k, &b).unwrap();
        prop_assert!(g.hermitian_defect() <= 1e-12 * g.lambda_max().max(1e-300));
        prop_assert!(g.lambda_min() >= -1e-10);
    }

    #[test]
    fn resolvent_residual_small(v in vector(5), a_exp in -6.0..1.0f64) {
        let k = kernel(5, 64);
        let g = assemble_gramian(&k, &OperatorMatrix::identity(5)).unwrap();
        let res = RegularizedResolvent::new(&g, RegularizationParam::new(10f64.powf(a_exp)).unwrap()).unwrap();
        let w = res.apply(&v).unwrap();
        prop_assert!(res.residual(&w, &v) <= 1e-10 * v.norm() + 1e-300);
    }

    #[test]
    fn kernel_adjoint_pairing(x in vector(4), y in vector(4), j in 0usize..=64, k in 0usize..=64) {
        let kern = kernel(4, 64);
        let (t, s) = if j >= k { (j, k) } else { (k, j) };
        let lhs = inner_product(&kern.apply_s(t, s, &x), &y).unwrap();
        let rhs = inner_product(&x, &kern.apply_s_adjoint(t, s, &y)).unwrap();
        prop_assert!((lhs - rhs).norm() <= 1e-13);
    }
}
