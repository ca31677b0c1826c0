//! Mild solutions of the controlled inclusion `x'' in A(t)x + F(t,x) + Bu`
//! by damped Picard iteration on the solution operator
//!
//! ```text
//! x(t) = C(t,0)(x0 - g(x)) + S(t,0)(y0 - h(x)) + int_0^t S(t,s)[f(s) + B u(s)] ds
//!        + sum_{t_i < t} C(t,t_i) I_i(x(t_i)) + S(t,t_i) J_i(x(t_i))
//! u(t) = B* S*(T,t) (aI + G)^{-1} p(x)
//! ```
//!
//! where `f` is a selection of the ball-valued `F` along the current iterate.
//! Without nonlocal maps or impulses this is the plain controlled problem.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::families::{EvolutionKernel, TimeGrid};
use crate::space::{OperatorMatrix, SpectralVector, C64};
use crate::synthesis::{
    assemble_gramian, check_decreasing, control_from_weight, flags_non_decay, Gramian,
    RegularizationParam, RegularizedResolvent,
};

pub type CenterFn = Arc<dyn Fn(f64, &SpectralVector) -> SpectralVector + Send + Sync>;
pub type RadiusFn = Arc<dyn Fn(f64, &SpectralVector) -> f64 + Send + Sync>;
pub type TrajectoryFn = Arc<dyn Fn(&[SpectralVector]) -> SpectralVector + Send + Sync>;
pub type StateFn = Arc<dyn Fn(&SpectralVector) -> SpectralVector + Send + Sync>;

/// Linear growth envelope `||f0(t,x)|| + rho(t,x) <= c1 + c2 ||x||`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Growth {
    pub c1: f64,
    pub c2: f64,
}

/// `F(t,x) = { f0(t,x) + v : ||v|| <= rho(t,x) }`.
#[derive(Clone)]
pub struct SetValuedMap {
    center: Option<CenterFn>,
    radius: RadiusFn,
    growth: Growth,
}

impl fmt::Debug for SetValuedMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SetValuedMap")
            .field("zero_center", &self.center.is_none())
            .field("growth", &self.growth)
            .finish()
    }
}

impl SetValuedMap {
    pub fn new(center: CenterFn, radius: RadiusFn, growth: Growth) -> Result<Self> {
        if !(growth.c1 >= 0.0 && growth.c2 >= 0.0) {
            return Err(Error::invalid("growth constants must be nonnegative"));
        }
        Ok(Self {
            center: Some(center),
            radius,
            growth,
        })
    }

    /// `F = {0}`.
    pub fn zero() -> Self {
        Self {
            center: None,
            radius: Arc::new(|_, _| 0.0),
            growth: Growth { c1: 0.0, c2: 0.0 },
        }
    }

    /// Ball of radius `rho` around the origin.
    pub fn ball(rho: f64) -> Result<Self> {
        check_radius(rho)?;
        Ok(Self {
            center: None,
            radius: Arc::new(move |_, _| rho),
            growth: Growth { c1: rho, c2: 0.0 },
        })
    }

    /// Ball of radius `rho` around a fixed vector.
    pub fn constant(offset: SpectralVector, rho: f64) -> Result<Self> {
        check_radius(rho)?;
        let c1 = offset.norm() + rho;
        Self::new(
            Arc::new(move |_, _| offset.clone()),
            Arc::new(move |_, _| rho),
            Growth { c1, c2: 0.0 },
        )
    }

    /// Center `offset + gain x / (1 + ||x||)`, bounded by `||offset|| + |gain|`.
    pub fn saturating(gain: f64, offset: SpectralVector, rho: f64) -> Result<Self> {
        check_radius(rho)?;
        let c1 = offset.norm() + gain.abs() + rho;
        Self::new(
            Arc::new(move |_, x| {
                let s = gain / (1.0 + x.norm());
                let mut y = x.scale_real(s);
                y.add_assign_unchecked(&offset);
                y
            }),
            Arc::new(move |_, _| rho),
            Growth { c1, c2: 0.0 },
        )
    }

    /// Center `gain x`, growing linearly.
    pub fn linear(gain: f64, rho: f64) -> Result<Self> {
        check_radius(rho)?;
        Self::new(
            Arc::new(move |_, x| x.scale_real(gain)),
            Arc::new(move |_, _| rho),
            Growth {
                c1: rho,
                c2: gain.abs(),
            },
        )
    }

    pub fn growth(&self) -> Growth {
        self.growth
    }

    /// `F` is the singleton `{0}` everywhere.
    pub fn is_zero(&self) -> bool {
        self.center.is_none() && (self.radius)(0.0, &SpectralVector::zeros(1)) == 0.0
    }

    pub fn center(&self, t: f64, x: &SpectralVector) -> SpectralVector {
        match &self.center {
            Some(c) => c(t, x),
            None => SpectralVector::zeros(x.dim()),
        }
    }

    pub fn radius(&self, t: f64, x: &SpectralVector) -> f64 {
        (self.radius)(t, x)
    }

    /// Samples states of several magnitudes and checks the radius sign and the
    /// declared growth envelope.
    pub fn verify_growth(&self, grid: &TimeGrid, dim: usize, seed: u64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let times = [0, grid.steps() / 3, grid.steps() / 2, grid.steps()];
        for &scale in &[0.0, 0.1, 1.0, 10.0, 1e3] {
            for &j in &times {
                let t = grid.node(j);
                let x = random_unit(&mut rng, dim).scale_real(scale);
                let rho = self.radius(t, &x);
                if !(rho >= 0.0) {
                    return Err(Error::invalid(format!(
                        "inclusion radius {rho} is negative at t={t}"
                    )));
                }
                let lhs = self.center(t, &x).norm() + rho;
                let rhs = self.growth.c1 + self.growth.c2 * x.norm();
                if !lhs.is_finite() || lhs > rhs * (1.0 + 1e-12) + 1e-12 {
                    return Err(Error::invalid(format!(
                        "inclusion violates its growth envelope at t={t}, |x|={:.3e}: {lhs:.6e} > {rhs:.6e}",
                        x.norm()
                    )));
                }
            }
        }
        Ok(())
    }
}

fn check_radius(rho: f64) -> Result<()> {
    if !(rho.is_finite() && rho >= 0.0) {
        return Err(Error::invalid(format!(
            "inclusion radius must be nonnegative, got {rho}"
        )));
    }
    Ok(())
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> SpectralVector {
    loop {
        let v: Vec<C64> = (0..dim)
            .map(|_| C64::new(StandardNormal.sample(rng), StandardNormal.sample(rng)))
            .collect();
        let v = SpectralVector::from_vec(v).expect("finite samples");
        let n = v.norm();
        if n > 0.0 {
            return v.scale_real(1.0 / n);
        }
    }
}

/// How `f(t) in F(t, x(t))` is picked from the ball.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SelectionStrategy {
    /// The ball center.
    Center,
    /// The minimum-norm element of the ball.
    MinNormShift,
    /// A point on the sphere in a seeded random direction, one direction per node.
    RandomExtreme { seed: u64 },
}

/// `gamma = lim_r int_0^t L_{f,r} / r` for `L_{f,r} = c1 + c2 r`, maximized at `t = T`.
pub fn gamma_from_growth(growth: Growth, horizon: f64) -> f64 {
    growth.c2 * horizon
}

/// `Ntilde * gamma * (1 + Ntilde^2 M_B^2 T / a)`.
pub fn contraction_constant(ntilde: f64, gamma: f64, input_norm: f64, a: f64, horizon: f64) -> f64 {
    ntilde * gamma * (1.0 + ntilde * ntilde * input_norm * input_norm * horizon / a)
}

/// Nonlocal map from a whole discrete trajectory to the state space.
#[derive(Clone)]
pub enum NonlocalMap {
    Zero,
    Constant(SpectralVector),
    /// `eps * x(t_index)`
    Point {
        eps: f64,
        index: usize,
    },
    /// `eps * mean_j x(t_j)`
    Mean {
        eps: f64,
    },
    Custom {
        map: TrajectoryFn,
        lipschitz: f64,
    },
}

impl fmt::Debug for NonlocalMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NonlocalMap::Zero => write!(f, "Zero"),
            NonlocalMap::Constant(v) => write!(f, "Constant({v:?})"),
            NonlocalMap::Point { eps, index } => {
                write!(f, "Point {{ eps: {eps}, index: {index} }}")
            }
            NonlocalMap::Mean { eps } => write!(f, "Mean {{ eps: {eps} }}"),
            NonlocalMap::Custom { lipschitz, .. } => {
                write!(f, "Custom {{ lipschitz: {lipschitz} }}")
            }
        }
    }
}

impl NonlocalMap {
    pub fn is_zero(&self) -> bool {
        matches!(self, NonlocalMap::Zero)
    }

    /// Declared Lipschitz constant with respect to the sup norm.
    pub fn lipschitz(&self) -> f64 {
        match self {
            NonlocalMap::Zero | NonlocalMap::Constant(_) => 0.0,
            NonlocalMap::Point { eps, .. } | NonlocalMap::Mean { eps } => eps.abs(),
            NonlocalMap::Custom { lipschitz, .. } => *lipschitz,
        }
    }

    pub fn eval(&self, traj: &[SpectralVector]) -> SpectralVector {
        let dim = traj.first().map_or(0, SpectralVector::dim);
        match self {
            NonlocalMap::Zero => SpectralVector::zeros(dim),
            NonlocalMap::Constant(v) => v.clone(),
            NonlocalMap::Point { eps, index } => traj[*index].scale_real(*eps),
            NonlocalMap::Mean { eps } => {
                let mut acc = SpectralVector::zeros(dim);
                for x in traj {
                    acc.add_assign_unchecked(x);
                }
                acc.scale_real(eps / traj.len() as f64)
            }
            NonlocalMap::Custom { map, .. } => map(traj),
        }
    }
}

/// Nonlocal initial conditions `x(0) + g(x) = x0`, `x'(0) + h(x) = y0`.
#[derive(Debug, Clone)]
pub struct NonlocalSpec {
    pub g: NonlocalMap,
    pub h: NonlocalMap,
}

impl NonlocalSpec {
    pub fn none() -> Self {
        Self {
            g: NonlocalMap::Zero,
            h: NonlocalMap::Zero,
        }
    }

    fn validate(&self, grid: &TimeGrid, dim: usize, seed: u64) -> Result<()> {
        for (name, map) in [("g", &self.g), ("h", &self.h)] {
            match map {
                NonlocalMap::Point { index, .. } if *index > grid.steps() => {
                    return Err(Error::invalid(format!(
                        "nonlocal {name} evaluates node {index} beyond the grid"
                    )))
                }
                NonlocalMap::Constant(v) if v.dim() != dim => {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        found: v.dim(),
                    })
                }
                _ => {}
            }
            check_lipschitz(name, map, grid, dim, seed)?;
        }
        Ok(())
    }
}

/// Sampled Lipschitz quotients must stay under the declared constant.
fn check_lipschitz(
    name: &str,
    map: &NonlocalMap,
    grid: &TimeGrid,
    dim: usize,
    seed: u64,
) -> Result<()> {
    if map.is_zero() {
        return Ok(());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let declared = map.lipschitz();
    for _ in 0..4 {
        let x: Vec<SpectralVector> = (0..grid.len())
            .map(|_| random_unit(&mut rng, dim))
            .collect();
        let y: Vec<SpectralVector> = (0..grid.len())
            .map(|_| random_unit(&mut rng, dim).scale_real(2.0))
            .collect();
        let dist = x
            .iter()
            .zip(&y)
            .map(|(a, b)| a.distance(b).unwrap_or(f64::INFINITY))
            .fold(0.0, f64::max);
        let gap = map.eval(&x).distance(&map.eval(&y))?;
        if gap > declared * dist * (1.0 + 1e-12) + 1e-12 {
            return Err(Error::invalid(format!(
                "nonlocal {name} exceeds its Lipschitz constant {declared}: quotient {:.6e}",
                gap / dist
            )));
        }
    }
    Ok(())
}

/// Jump map for one impulse.
#[derive(Clone)]
pub enum JumpMap {
    Zero,
    Constant(SpectralVector),
    /// `eps * x`
    Scaled(f64),
    /// `eps * x / (1 + ||x||)`
    Saturating(f64),
    Custom {
        map: StateFn,
        bound: f64,
    },
}

impl fmt::Debug for JumpMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            JumpMap::Zero => write!(f, "Zero"),
            JumpMap::Constant(v) => write!(f, "Constant({v:?})"),
            JumpMap::Scaled(e) => write!(f, "Scaled({e})"),
            JumpMap::Saturating(e) => write!(f, "Saturating({e})"),
            JumpMap::Custom { bound, .. } => write!(f, "Custom {{ bound: {bound} }}"),
        }
    }
}

impl JumpMap {
    pub fn eval(&self, x: &SpectralVector) -> SpectralVector {
        match self {
            JumpMap::Zero => SpectralVector::zeros(x.dim()),
            JumpMap::Constant(v) => v.clone(),
            JumpMap::Scaled(eps) => x.scale_real(*eps),
            JumpMap::Saturating(eps) => x.scale_real(eps / (1.0 + x.norm())),
            JumpMap::Custom { map, .. } => map(x),
        }
    }

    /// Uniform bound `sup ||I(x)||` (infinite for unbounded maps).
    pub fn bound(&self) -> f64 {
        match self {
            JumpMap::Zero => 0.0,
            JumpMap::Constant(v) => v.norm(),
            JumpMap::Scaled(eps) => {
                if *eps == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            JumpMap::Saturating(eps) => eps.abs(),
            JumpMap::Custom { bound, .. } => *bound,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Impulse {
    pub time: f64,
    /// `I_i`, jump of the position.
    pub position: JumpMap,
    /// `J_i`, jump of the velocity.
    pub velocity: JumpMap,
}

#[derive(Debug, Clone, Default)]
pub struct ImpulseSpec {
    pub impulses: Vec<Impulse>,
}

impl ImpulseSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.impulses.is_empty()
    }

    /// Grid indices of the impulse times after validation.
    pub fn node_indices(&self, grid: &TimeGrid, dim: usize, seed: u64) -> Result<Vec<usize>> {
        let mut nodes = Vec::with_capacity(self.impulses.len());
        for imp in &self.impulses {
            let j = grid.index_of(imp.time)?;
            if j == 0 || j == grid.steps() {
                return Err(Error::invalid(format!(
                    "impulse time {} must lie strictly inside (0, T)",
                    imp.time
                )));
            }
            if nodes.last().is_some_and(|&prev| prev >= j) {
                return Err(Error::invalid(format!(
                    "impulse times must be strictly increasing (at {})",
                    imp.time
                )));
            }
            nodes.push(j);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5851_f42d);
        for imp in &self.impulses {
            for (label, map) in [("position", &imp.position), ("velocity", &imp.velocity)] {
                if let JumpMap::Constant(v) = map {
                    if v.dim() != dim {
                        return Err(Error::DimensionMismatch {
                            expected: dim,
                            found: v.dim(),
                        });
                    }
                }
                let bound = map.bound();
                for &scale in &[0.0, 1.0, 100.0] {
                    let x = random_unit(&mut rng, dim).scale_real(scale);
                    if map.eval(&x).norm() > bound * (1.0 + 1e-12) + 1e-12 {
                        return Err(Error::invalid(format!(
                            "{label} jump at t={} exceeds its declared bound {bound}",
                            imp.time
                        )));
                    }
                }
            }
        }
        Ok(nodes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Sup-norm residual `||x_{k+1} - x_k||` accepted as converged.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Damping `omega` in `x_{k+1} = (1 - omega) x_k + omega Gamma(x_k)`.
    pub relaxation: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-9,
            max_iterations: 200,
            relaxation: 1.0,
        }
    }
}

impl SolverOptions {
    fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::invalid("fixed-point tolerance must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(Error::invalid("max_iterations must be at least 1"));
        }
        if !(self.relaxation > 0.0 && self.relaxation <= 1.0) {
            return Err(Error::invalid("relaxation must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Everything needed for one controlled solve.
#[derive(Debug, Clone)]
pub struct ControlProblem {
    kernel: Arc<EvolutionKernel>,
    input: OperatorMatrix,
    input_norm: f64,
    gramian: Arc<Gramian>,
    inclusion: SetValuedMap,
    x0: SpectralVector,
    y0: SpectralVector,
    target: SpectralVector,
    a: RegularizationParam,
    options: SolverOptions,
}

impl ControlProblem {
    /// Assembles the Gramian and validates the inclusion's growth envelope.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        kernel: Arc<EvolutionKernel>,
        input: OperatorMatrix,
        inclusion: SetValuedMap,
        x0: SpectralVector,
        y0: SpectralVector,
        target: SpectralVector,
        a: RegularizationParam,
    ) -> Result<Self> {
        let gramian = Arc::new(assemble_gramian(&kernel, &input)?);
        Self::with_gramian(kernel, input, gramian, inclusion, x0, y0, target, a)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_gramian(
        kernel: Arc<EvolutionKernel>,
        input: OperatorMatrix,
        gramian: Arc<Gramian>,
        inclusion: SetValuedMap,
        x0: SpectralVector,
        y0: SpectralVector,
        target: SpectralVector,
        a: RegularizationParam,
    ) -> Result<Self> {
        let dim = kernel.dim();
        for v in [&x0, &y0, &target] {
            if v.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: v.dim(),
                });
            }
        }
        if input.dim() != dim || gramian.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: input.dim(),
            });
        }
        inclusion.verify_growth(kernel.grid(), dim, 17)?;
        let input_norm = input.norm();
        Ok(Self {
            kernel,
            input,
            input_norm,
            gramian,
            inclusion,
            x0,
            y0,
            target,
            a,
            options: SolverOptions::default(),
        })
    }

    pub fn with_options(mut self, options: SolverOptions) -> Self {
        self.options = options;
        self
    }

    pub fn with_regularization(&self, a: RegularizationParam) -> Self {
        let mut p = self.clone();
        p.a = a;
        p
    }

    pub fn kernel(&self) -> &EvolutionKernel {
        &self.kernel
    }

    pub fn gramian(&self) -> &Gramian {
        &self.gramian
    }

    pub fn input(&self) -> &OperatorMatrix {
        &self.input
    }

    pub fn inclusion(&self) -> &SetValuedMap {
        &self.inclusion
    }

    pub fn x0(&self) -> &SpectralVector {
        &self.x0
    }

    pub fn y0(&self) -> &SpectralVector {
        &self.y0
    }

    pub fn target(&self) -> &SpectralVector {
        &self.target
    }

    pub fn regularization(&self) -> RegularizationParam {
        self.a
    }

    pub fn options(&self) -> &SolverOptions {
        &self.options
    }

    pub fn contraction_constant(&self) -> f64 {
        let horizon = self.kernel.grid().horizon();
        contraction_constant(
            self.kernel.ntilde(),
            gamma_from_growth(self.inclusion.growth(), horizon),
            self.input_norm,
            self.a.value(),
            horizon,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    NotConverged,
}

/// States on both sides of an impulse.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseRecord {
    pub node: usize,
    pub time: f64,
    pub pre_state: SpectralVector,
    pub post_state: SpectralVector,
    pub pre_velocity: SpectralVector,
    pub post_velocity: SpectralVector,
}

#[derive(Debug, Clone)]
pub struct MildSolution {
    pub times: Vec<f64>,
    /// `x(t_j)`; at an impulse node this is the pre-impulse state.
    pub states: Vec<SpectralVector>,
    pub velocities: Vec<SpectralVector>,
    pub controls: Vec<SpectralVector>,
    pub selections: Vec<SpectralVector>,
    pub impulses: Vec<ImpulseRecord>,
    /// `p(x)` of the returned iterate.
    pub terminal_residual: SpectralVector,
    pub terminal_error: f64,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    pub status: SolveStatus,
    pub contraction_constant: f64,
    pub a: f64,
    pub modes: Vec<u32>,
}

impl MildSolution {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }

    pub fn terminal_state(&self) -> &SpectralVector {
        self.states.last().expect("non-empty trajectory")
    }

    /// Largest ratio of consecutive residuals while both exceed `floor`.
    pub fn observed_ratio(&self, floor: f64) -> f64 {
        self.residual_history
            .windows(2)
            .filter(|w| w[0] > floor && w[1] > floor)
            .map(|w| w[1] / w[0])
            .fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        for prefix in ["x", "u"] {
            for n in &self.modes {
                header.push(format!("{prefix}{n}_re"));
                header.push(format!("{prefix}{n}_im"));
            }
        }
        w.write_record(&header)?;
        for (j, t) in self.times.iter().enumerate() {
            let mut row = Vec::with_capacity(header.len());
            row.push(t.to_string());
            for v in [&self.states[j], &self.controls[j]] {
                for c in v.as_slice() {
                    row.push(c.re.to_string());
                    row.push(c.im.to_string());
                }
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One evaluation of the solution operator.
#[derive(Debug, Clone)]
pub struct OperatorImage {
    pub states: Vec<SpectralVector>,
    pub velocities: Vec<SpectralVector>,
    pub controls: Vec<SpectralVector>,
    pub selections: Vec<SpectralVector>,
    pub terminal_residual: SpectralVector,
    jumps: Vec<(SpectralVector, SpectralVector)>,
}

struct Engine<'a> {
    problem: &'a ControlProblem,
    nonlocal: Option<&'a NonlocalSpec>,
    impulses: Option<&'a ImpulseSpec>,
    impulse_nodes: Vec<usize>,
    strategy: SelectionStrategy,
    directions: Vec<SpectralVector>,
    resolvent: RegularizedResolvent,
}

impl<'a> Engine<'a> {
    fn new(
        problem: &'a ControlProblem,
        nonlocal: Option<&'a NonlocalSpec>,
        impulses: Option<&'a ImpulseSpec>,
        strategy: SelectionStrategy,
    ) -> Result<Self> {
        problem.options.validate()?;
        let grid = *problem.kernel.grid();
        let dim = problem.kernel.dim();
        if let Some(nl) = nonlocal {
            nl.validate(&grid, dim, 29)?;
        }
        let impulse_nodes = match impulses {
            Some(imp) => imp.node_indices(&grid, dim, 31)?,
            None => Vec::new(),
        };
        let directions = match strategy {
            SelectionStrategy::RandomExtreme { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..grid.len())
                    .map(|_| random_unit(&mut rng, dim))
                    .collect()
            }
            _ => Vec::new(),
        };
        Ok(Self {
            problem,
            nonlocal,
            impulses,
            impulse_nodes,
            strategy,
            directions,
            resolvent: RegularizedResolvent::new(&problem.gramian, problem.a)?,
        })
    }

    fn select(&self, j: usize, t: f64, x: &SpectralVector) -> SpectralVector {
        let f0 = self.problem.inclusion.center(t, x);
        let rho = self.problem.inclusion.radius(t, x);
        if rho == 0.0 {
            return f0;
        }
        match self.strategy {
            SelectionStrategy::Center => f0,
            SelectionStrategy::MinNormShift => {
                let n = f0.norm();
                if n <= rho {
                    SpectralVector::zeros(x.dim())
                } else {
                    f0.scale_real(1.0 - rho / n)
                }
            }
            SelectionStrategy::RandomExtreme { .. } => {
                let mut f = self.directions[j].scale_real(rho);
                f.add_assign_unchecked(&f0);
                f
            }
        }
    }

    /// Corrected initial data `(x0 - g(x), y0 - h(x))`.
    fn initial_data(&self, states: &[SpectralVector]) -> (SpectralVector, SpectralVector) {
        let p = self.problem;
        match self.nonlocal {
            None => (p.x0.clone(), p.y0.clone()),
            Some(nl) => {
                let x0 = if nl.g.is_zero() {
                    p.x0.clone()
                } else {
                    p.x0.sub(&nl.g.eval(states)).expect("matching dims")
                };
                let y0 = if nl.h.is_zero() {
                    p.y0.clone()
                } else {
                    p.y0.sub(&nl.h.eval(states)).expect("matching dims")
                };
                (x0, y0)
            }
        }
    }

    fn jumps(&self, states: &[SpectralVector]) -> Vec<(SpectralVector, SpectralVector)> {
        match self.impulses {
            None => Vec::new(),
            Some(imp) => imp
                .impulses
                .iter()
                .zip(&self.impulse_nodes)
                .map(|(i, &node)| {
                    (
                        i.position.eval(&states[node]),
                        i.velocity.eval(&states[node]),
                    )
                })
                .collect(),
        }
    }

    fn apply(&self, states: &[SpectralVector]) -> Result<OperatorImage> {
        let kernel = &*self.problem.kernel;
        let grid = kernel.grid();
        let m = grid.steps();

        let selections: Vec<SpectralVector> = if self.problem.inclusion.is_zero() {
            vec![SpectralVector::zeros(kernel.dim()); grid.len()]
        } else {
            states
                .iter()
                .enumerate()
                .map(|(j, x)| self.select(j, grid.node(j), x))
                .collect()
        };
        let (x0, y0) = self.initial_data(states);
        let jumps = self.jumps(states);

        let free = propagate(
            kernel,
            &x0,
            &y0,
            &selections,
            &self.impulse_nodes,
            &jumps,
            Some(m),
        );
        let terminal_residual = self.problem.target.sub(&free.0[0])?;
        let weight = self.resolvent.apply(&terminal_residual)?;

        let mut forcing = Vec::with_capacity(grid.len());
        let mut controls = Vec::with_capacity(grid.len());
        for (j, f) in selections.iter().enumerate() {
            let u = control_from_weight(kernel, &self.problem.input, &weight, j)?;
            forcing.push(f.add(&self.problem.input.apply(&u)?)?);
            controls.push(u);
        }
        let (states, velocities) = propagate(
            kernel,
            &x0,
            &y0,
            &forcing,
            &self.impulse_nodes,
            &jumps,
            None,
        );
        if states.iter().any(|s| {
            s.as_slice()
                .iter()
                .any(|c| !c.re.is_finite() || !c.im.is_finite())
        }) {
            return Err(Error::NonFinite("mild solution iterate".into()));
        }
        Ok(OperatorImage {
            states,
            velocities,
            controls,
            selections,
            terminal_residual,
            jumps,
        })
    }
}

/// Position and velocity of
/// `C(t,0)x0 + S(t,0)y0 + int_0^t S(t,s) g(s) ds + sum_{t_i<t} C(t,t_i)I_i + S(t,t_i)J_i`
/// at every node, or only at node `only` when given.
///
/// Uses `Z(t_j) = Phi(t_j) [ (x0,y0) + int_0^{t_j} Phi(s)^{-1}(0,g(s)) ds + sum Phi(t_i)^{-1}(I_i,J_i) ]`
/// with the trapezoid rule, so each node costs O(N).
fn propagate(
    kernel: &EvolutionKernel,
    x0: &SpectralVector,
    y0: &SpectralVector,
    forcing: &[SpectralVector],
    impulse_nodes: &[usize],
    jumps: &[(SpectralVector, SpectralVector)],
    only: Option<usize>,
) -> (Vec<SpectralVector>, Vec<SpectralVector>) {
    let grid = kernel.grid();
    let h = grid.spacing();
    let dim = kernel.dim();
    let nodes = grid.len();
    let out_len = if only.is_some() { 1 } else { nodes };

    let columns: Vec<(Vec<C64>, Vec<C64>)> = (0..dim)
        .into_par_iter()
        .map(|mi| {
            let mut pos = Vec::with_capacity(out_len);
            let mut vel = Vec::with_capacity(out_len);
            let base = [x0.get(mi), y0.get(mi)];
            let mut jump_acc = [C64::new(0.0, 0.0); 2];
            let mut next_jump = 0;
            let mut cumulative = [C64::new(0.0, 0.0); 2];
            let mut first = [C64::new(0.0, 0.0); 2];
            for j in 0..nodes {
                // impulses strictly before t_j
                while next_jump < impulse_nodes.len() && impulse_nodes[next_jump] < j {
                    let inv = kernel.phi_inv(mi, impulse_nodes[next_jump]);
                    let (ij, jj) = &jumps[next_jump];
                    let (a, b) = (ij.get(mi), jj.get(mi));
                    jump_acc[0] += inv[0][0] * a + inv[0][1] * b;
                    jump_acc[1] += inv[1][0] * a + inv[1][1] * b;
                    next_jump += 1;
                }
                let inv = kernel.phi_inv(mi, j);
                let g = forcing[j].get(mi);
                let c = [inv[0][1] * g, inv[1][1] * g];
                if j == 0 {
                    first = c;
                }
                cumulative[0] += c[0];
                cumulative[1] += c[1];
                if only.is_some_and(|o| o != j) {
                    continue;
                }
                let (z0, z1) = if j == 0 {
                    (base[0] + jump_acc[0], base[1] + jump_acc[1])
                } else {
                    let i0 = (cumulative[0] - 0.5 * (first[0] + c[0])) * h;
                    let i1 = (cumulative[1] - 0.5 * (first[1] + c[1])) * h;
                    (base[0] + i0 + jump_acc[0], base[1] + i1 + jump_acc[1])
                };
                let phi = kernel.phi(mi, j);
                pos.push(phi[0][0] * z0 + phi[0][1] * z1);
                vel.push(phi[1][0] * z0 + phi[1][1] * z1);
            }
            (pos, vel)
        })
        .collect();

    let mut states = Vec::with_capacity(out_len);
    let mut velocities = Vec::with_capacity(out_len);
    for j in 0..out_len {
        let pos: Vec<C64> = columns.iter().map(|c| c.0[j]).collect();
        let vel: Vec<C64> = columns.iter().map(|c| c.1[j]).collect();
        states.push(SpectralVector::from_dvector(nalgebra::DVector::from_vec(
            pos,
        )));
        velocities.push(SpectralVector::from_dvector(nalgebra::DVector::from_vec(
            vel,
        )));
    }
    (states, velocities)
}

fn sup_distance(a: &[SpectralVector], b: &[SpectralVector]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.distance(y).unwrap_or(f64::INFINITY))
        .fold(0.0, f64::max)
}

fn relax(old: &[SpectralVector], new: Vec<SpectralVector>, omega: f64) -> Vec<SpectralVector> {
    if omega == 1.0 {
        return new;
    }
    old.iter()
        .zip(new)
        .map(|(o, n)| {
            let mut v = o.scale_real(1.0 - omega);
            v.add_assign_unchecked(&n.scale_real(omega));
            v
        })
        .collect()
}

fn solve_general(
    problem: &ControlProblem,
    nonlocal: Option<&NonlocalSpec>,
    impulses: Option<&ImpulseSpec>,
    strategy: SelectionStrategy,
) -> Result<MildSolution> {
    let engine = Engine::new(problem, nonlocal, impulses, strategy)?;
    let kernel = &*problem.kernel;
    let grid = *kernel.grid();
    let options = problem.options;
    let contraction = problem.contraction_constant();
    if contraction >= 1.0 {
        log::warn!(
            "contraction constant {contraction:.3e} >= 1 at a = {:.3e}; convergence is not guaranteed",
            problem.a.value()
        );
    }

    // start from the uncontrolled, unforced trajectory
    let zero_forcing = vec![SpectralVector::zeros(kernel.dim()); grid.len()];
    let (mut states, mut velocities) = propagate(
        kernel,
        &problem.x0,
        &problem.y0,
        &zero_forcing,
        &[],
        &[],
        None,
    );

    let mut history = Vec::new();
    let mut status = SolveStatus::NotConverged;
    let mut image = engine.apply(&states)?;
    let mut iterations = 0;
    for k in 0..options.max_iterations {
        let residual = sup_distance(&image.states, &states);
        history.push(residual);
        iterations = k;
        if !residual.is_finite() {
            break;
        }
        if residual < options.tolerance {
            status = SolveStatus::Converged;
            break;
        }
        if k + 1 == options.max_iterations {
            break;
        }
        states = relax(&states, image.states, options.relaxation);
        velocities = relax(&velocities, image.velocities, options.relaxation);
        image = engine.apply(&states)?;
    }
    if status == SolveStatus::NotConverged {
        log::warn!(
            "fixed-point iteration stopped after {} sweeps with residual {:.3e}",
            history.len(),
            history.last().copied().unwrap_or(f64::NAN)
        );
    }

    let records = engine
        .impulse_nodes
        .iter()
        .zip(&image.jumps)
        .map(|(&node, (dx, dv))| ImpulseRecord {
            node,
            time: grid.node(node),
            pre_state: states[node].clone(),
            post_state: states[node].add(dx).expect("matching dims"),
            pre_velocity: velocities[node].clone(),
            post_velocity: velocities[node].add(dv).expect("matching dims"),
        })
        .collect();
    let terminal_error = states[grid.steps()].distance(&problem.target)?;
    Ok(MildSolution {
        times: grid.nodes(),
        states,
        velocities,
        controls: image.controls,
        selections: image.selections,
        impulses: records,
        terminal_residual: image.terminal_residual,
        terminal_error,
        iterations,
        residual_history: history,
        status,
        contraction_constant: contraction,
        a: problem.a.value(),
        modes: kernel.modes().modes().to_vec(),
    })
}

/// Mild solution of the controlled inclusion.
pub fn picard_solve(problem: &ControlProblem, strategy: SelectionStrategy) -> Result<MildSolution> {
    solve_general(problem, None, None, strategy)
}

/// Mild solution with nonlocal initial conditions.
pub fn nonlocal_solve(
    problem: &ControlProblem,
    nonlocal: &NonlocalSpec,
    strategy: SelectionStrategy,
) -> Result<MildSolution> {
    solve_general(problem, Some(nonlocal), None, strategy)
}

/// Mild solution with nonlocal initial conditions and impulses.
pub fn impulsive_solve(
    problem: &ControlProblem,
    nonlocal: &NonlocalSpec,
    impulses: &ImpulseSpec,
    strategy: SelectionStrategy,
) -> Result<MildSolution> {
    solve_general(problem, Some(nonlocal), Some(impulses), strategy)
}

/// Evaluates the solution operator once on a given trajectory.
pub fn apply_solution_operator(
    problem: &ControlProblem,
    nonlocal: Option<&NonlocalSpec>,
    impulses: Option<&ImpulseSpec>,
    strategy: SelectionStrategy,
    states: &[SpectralVector],
) -> Result<OperatorImage> {
    if states.len() != problem.kernel.grid().len() {
        return Err(Error::DimensionMismatch {
            expected: problem.kernel.grid().len(),
            found: states.len(),
        });
    }
    Engine::new(problem, nonlocal, impulses, strategy)?.apply(states)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub a: f64,
    pub terminal_error: f64,
    pub iterations: usize,
    pub converged: bool,
    pub contraction_constant: f64,
    /// Largest ratio of consecutive fixed-point residuals.
    pub observed_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    /// The last terminal error did not drop below the first.
    pub non_decay: bool,
}

impl ConvergenceTable {
    pub fn all_converged(&self) -> bool {
        self.rows.iter().all(|r| r.converged)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "a",
            "terminal_error",
            "iterations",
            "converged",
            "contraction_constant",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.a.to_string(),
                r.terminal_error.to_string(),
                r.iterations.to_string(),
                r.converged.to_string(),
                r.contraction_constant.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Terminal error of the controlled solve along a decreasing list of `a`.
pub fn sweep_regularization(
    problem: &ControlProblem,
    a_list: &[f64],
    strategy: SelectionStrategy,
) -> Result<ConvergenceTable> {
    sweep_regularization_with(problem, None, None, a_list, strategy)
}

pub fn sweep_regularization_with(
    problem: &ControlProblem,
    nonlocal: Option<&NonlocalSpec>,
    impulses: Option<&ImpulseSpec>,
    a_list: &[f64],
    strategy: SelectionStrategy,
) -> Result<ConvergenceTable> {
    check_decreasing(a_list)?;
    if problem.inclusion.growth().c2 > 0.0 {
        return Err(Error::invalid(
            "regularization sweeps require a bounded inclusion (c2 = 0)",
        ));
    }
    let rows = a_list
        .par_iter()
        .map(|&a| {
            let p = problem.with_regularization(RegularizationParam::new(a)?);
            let sol = solve_general(&p, nonlocal, impulses, strategy)?;
            Ok(ConvergenceRow {
                a,
                terminal_error: sol.terminal_error,
                iterations: sol.iterations,
                converged: sol.converged(),
                contraction_constant: sol.contraction_constant,
                observed_ratio: sol.observed_ratio(1e3 * p.options.tolerance),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let non_decay = rows.len() > 1
        && flags_non_decay(rows[0].terminal_error, rows[rows.len() - 1].terminal_error);
    Ok(ConvergenceTable { rows, non_decay })
}
