//! Brute-force references: direct integration of the first-order system
//! `pos' = vel, vel' = A(t) pos + forcing` and closed forms for the undamped case.
//!
//! Nothing here touches [`EvolutionKernel`](crate::families::EvolutionKernel);
//! agreement between the two is evidence that the kernel is right.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::families::{DampingSpec, TimeGrid};
use crate::inclusion::ImpulseSpec;
use crate::space::{ModeSet, OperatorMatrix, SpectralVector, C64};
use crate::synthesis::Gramian;

const BLOW_UP: f64 = 1e12;
const PHASE_STEP: f64 = 5e-3;
const REFINEMENT: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseState {
    pub pos: SpectralVector,
    pub vel: SpectralVector,
}

impl DenseState {
    pub fn new(pos: SpectralVector, vel: SpectralVector) -> Result<Self> {
        if pos.dim() != vel.dim() {
            return Err(Error::DimensionMismatch {
                expected: pos.dim(),
                found: vel.dim(),
            });
        }
        Ok(Self { pos, vel })
    }
}

/// Substeps per grid interval: four times what a phase step of 5e-3 needs
/// for the fastest mode.
pub fn oracle_substeps(modes: &ModeSet, damping: &DampingSpec, grid: &TimeGrid) -> usize {
    let n = modes.max_mode() as f64;
    let rate = (n * n + n * damping.beta()).sqrt();
    REFINEMENT * ((rate * grid.spacing() / PHASE_STEP).ceil() as usize).max(1)
}

/// Integrates from `t = 0` and returns the state at every grid node.
/// At an impulse node the reported state is the one before the jump.
pub fn dense_integrate(
    modes: &ModeSet,
    damping: &DampingSpec,
    forcing: &[SpectralVector],
    x0: &SpectralVector,
    y0: &SpectralVector,
    grid: &TimeGrid,
    impulses: Option<&ImpulseSpec>,
) -> Result<Vec<DenseState>> {
    let start = DenseState::new(x0.clone(), y0.clone())?;
    dense_integrate_from(modes, damping, forcing, start, 0, grid, impulses)
}

/// Same as [`dense_integrate`] but starting at node `start_node`; the
/// returned states cover nodes `start_node..=M`. Impulses at or before the
/// start node are ignored.
pub fn dense_integrate_from(
    modes: &ModeSet,
    damping: &DampingSpec,
    forcing: &[SpectralVector],
    start: DenseState,
    start_node: usize,
    grid: &TimeGrid,
    impulses: Option<&ImpulseSpec>,
) -> Result<Vec<DenseState>> {
    let dim = modes.dim();
    if forcing.len() != grid.len() {
        return Err(Error::DimensionMismatch {
            expected: grid.len(),
            found: forcing.len(),
        });
    }
    for v in forcing.iter().chain([&start.pos, &start.vel]) {
        if v.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: v.dim(),
            });
        }
    }
    if start_node > grid.steps() {
        return Err(Error::invalid(format!(
            "start node {start_node} beyond the grid"
        )));
    }
    let mut resets = Vec::new();
    if let Some(spec) = impulses {
        for imp in &spec.impulses {
            let j = grid.index_of(imp.time)?;
            if j > start_node && j < grid.steps() {
                resets.push((j, imp));
            }
        }
    }

    let substeps = oracle_substeps(modes, damping, grid);
    let h = grid.spacing() / substeps as f64;
    let numbers: Vec<f64> = modes.iter().map(f64::from).collect();

    let mut pos: Vec<C64> = start.pos.as_slice().to_vec();
    let mut vel: Vec<C64> = start.vel.as_slice().to_vec();
    let mut out = Vec::with_capacity(grid.len() - start_node);
    let snapshot = |pos: &[C64], vel: &[C64]| -> Result<DenseState> {
        Ok(DenseState {
            pos: SpectralVector::from_vec(pos.to_vec())
                .map_err(|_| Error::NonFinite("oracle state".into()))?,
            vel: SpectralVector::from_vec(vel.to_vec())
                .map_err(|_| Error::NonFinite("oracle state".into()))?,
        })
    };
    out.push(snapshot(&pos, &vel)?);
    let mut next_reset = 0;

    for j in start_node..grid.steps() {
        while next_reset < resets.len() && resets[next_reset].0 == j {
            let imp = resets[next_reset].1;
            let state = out.last().expect("recorded node");
            let dx = imp.position.eval(&state.pos);
            let dv = imp.velocity.eval(&state.pos);
            for i in 0..dim {
                pos[i] += dx.get(i);
                vel[i] += dv.get(i);
            }
            next_reset += 1;
        }
        let stencil = CubicStencil::new(grid, j);
        let t0 = grid.node(j);
        for step in 0..substeps {
            let t = t0 + step as f64 * h;
            let f0 = stencil.eval(forcing, t);
            let fm = stencil.eval(forcing, t + 0.5 * h);
            let f1 = stencil.eval(forcing, t + h);
            let b0 = damping.eval(t);
            let bm = damping.eval(t + 0.5 * h);
            let b1 = damping.eval(t + h);
            for i in 0..dim {
                let n = numbers[i];
                let accel = |b: f64, x: C64, f: C64| C64::new(-n * n, n * b) * x + f;
                let (x, v) = (pos[i], vel[i]);
                let k1x = v;
                let k1v = accel(b0, x, f0[i]);
                let k2x = v + 0.5 * h * k1v;
                let k2v = accel(bm, x + 0.5 * h * k1x, fm[i]);
                let k3x = v + 0.5 * h * k2v;
                let k3v = accel(bm, x + 0.5 * h * k2x, fm[i]);
                let k4x = v + h * k3v;
                let k4v = accel(b1, x + h * k3x, f1[i]);
                pos[i] = x + h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
                vel[i] = v + h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
            }
        }
        let peak = pos.iter().chain(&vel).map(|c| c.norm()).fold(0.0, f64::max);
        if !(peak <= BLOW_UP) {
            return Err(Error::Unstable {
                mode: modes.max_mode(),
                detail: format!("oracle state reached {peak:.3e} at t={}", grid.node(j + 1)),
            });
        }
        out.push(snapshot(&pos, &vel)?);
    }
    Ok(out)
}

/// Lagrange interpolation of grid samples on the (up to) four nodes around one interval.
struct CubicStencil {
    nodes: Vec<usize>,
    times: Vec<f64>,
}

impl CubicStencil {
    fn new(grid: &TimeGrid, interval: usize) -> Self {
        let count = grid.len().min(4);
        let first = interval.saturating_sub(1).min(grid.len() - count);
        let nodes: Vec<usize> = (first..first + count).collect();
        let times = nodes.iter().map(|&k| grid.node(k)).collect();
        Self { nodes, times }
    }

    fn eval(&self, samples: &[SpectralVector], t: f64) -> Vec<C64> {
        let count = self.nodes.len();
        let weights: Vec<f64> = (0..count)
            .map(|i| {
                (0..count)
                    .filter(|&k| k != i)
                    .map(|k| (t - self.times[k]) / (self.times[i] - self.times[k]))
                    .product()
            })
            .collect();
        let dim = samples[0].dim();
        (0..dim)
            .map(|m| {
                self.nodes
                    .iter()
                    .zip(&weights)
                    .map(|(&k, &w)| samples[k].get(m) * w)
                    .sum()
            })
            .collect()
    }
}

/// `(sin(n(t-s))/n, cos(n(t-s)))`, the sine and cosine kernels without damping.
pub fn closed_form_kernel(n: u32, t: f64, s: f64) -> (C64, C64) {
    let n = f64::from(n);
    let phase = n * (t - s);
    (C64::new(phase.sin() / n, 0.0), C64::new(phase.cos(), 0.0))
}

/// Exact `int_0^T S(T,s) S*(T,s) ds` for `B = I` without damping.
pub fn quadrature_gramian_reference(modes: &ModeSet, horizon: f64, steps: usize) -> Gramian {
    let diagonal: Vec<C64> = modes
        .iter()
        .map(|n| {
            let n = f64::from(n);
            C64::new(
                horizon / (2.0 * n * n) - (2.0 * n * horizon).sin() / (4.0 * n * n * n),
                0.0,
            )
        })
        .collect();
    Gramian::from_matrix(OperatorMatrix::diagonal(&diagonal), steps)
}

/// Per-mode response to unit initial velocity, `q_n(t, 0)` at every node.
pub fn dense_sine_kernel(
    modes: &ModeSet,
    damping: &DampingSpec,
    grid: &TimeGrid,
) -> Result<Vec<Vec<C64>>> {
    modes
        .modes()
        .par_iter()
        .map(|&n| {
            let single = ModeSet::new(vec![n])?;
            let zero = vec![SpectralVector::zeros(1); grid.len()];
            let traj = dense_integrate(
                &single,
                damping,
                &zero,
                &SpectralVector::zeros(1),
                &SpectralVector::basis(1, 0),
                grid,
                None,
            )?;
            Ok(traj.iter().map(|s| s.pos.get(0)).collect())
        })
        .collect()
}
