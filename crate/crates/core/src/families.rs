//! Cosine/sine families of the unperturbed generator and the evolution
//! operator of the perturbed, non-autonomous generator `A(t) = A + B~(t)`.
//!
//! On mode `n` the perturbed generator acts as multiplication by
//! `a_n(t) = -n^2 + i n b(t)`, so each mode carries an independent scalar
//! second-order ODE `q'' = a_n(t) q`. For every mode the kernel stores the
//! fundamental matrix `Phi_n(t_j)` of the first-order system `(q, q')` on the
//! grid together with its inverse. Any pair of grid nodes is then recovered
//! as `Phi_n(t_j) Phi_n(t_k)^{-1}`:
//!
//! ```text
//! [ r(t,s)      q(t,s)    ]      q(t,s): (q, q')(s) = (0, 1)   -> S(t,s)
//! [ d_t r(t,s)  d_t q(t,s)]      r(t,s): (q, q')(s) = (1, 0)   -> C(t,s)
//! ```
//!
//! RK4 is linear in the initial data, so this product is the same discrete
//! propagator one gets by integrating from every source node separately, at
//! `O(N M)` storage instead of `O(N M^2)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::{ModeSet, SpectralVector, C64};

type Mat2 = [[C64; 2]; 2];

const IDENTITY: Mat2 = [
    [C64::new(1.0, 0.0), C64::new(0.0, 0.0)],
    [C64::new(0.0, 0.0), C64::new(1.0, 0.0)],
];

/// Time profile of the damping amplitude `b(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DampingProfile {
    Zero,
    /// `k cos(t)`
    Cos {
        amplitude: f64,
    },
    /// `k sin(t)`
    Sin {
        amplitude: f64,
    },
    /// `values[i]` on `[breakpoints[i-1], breakpoints[i])`, with
    /// `values.len() == breakpoints.len() + 1`.
    Piecewise {
        breakpoints: Vec<f64>,
        values: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DampingSpec {
    profile: DampingProfile,
    beta: f64,
}

impl DampingSpec {
    pub fn new(profile: DampingProfile, horizon: f64) -> Result<Self> {
        let beta = match &profile {
            DampingProfile::Zero => 0.0,
            DampingProfile::Cos { amplitude } => {
                check_finite(*amplitude, "damping amplitude")?;
                amplitude.abs()
            }
            DampingProfile::Sin { amplitude } => {
                check_finite(*amplitude, "damping amplitude")?;
                let peak = if horizon >= std::f64::consts::FRAC_PI_2 {
                    1.0
                } else {
                    horizon.sin()
                };
                amplitude.abs() * peak
            }
            DampingProfile::Piecewise {
                breakpoints,
                values,
            } => {
                if values.len() != breakpoints.len() + 1 {
                    return Err(Error::invalid(
                        "piecewise damping needs one more value than breakpoints",
                    ));
                }
                if breakpoints.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::invalid(
                        "piecewise damping breakpoints must be strictly increasing",
                    ));
                }
                for v in breakpoints.iter().chain(values) {
                    check_finite(*v, "piecewise damping")?;
                }
                // segment i covers [lo, hi)
                let mut beta: f64 = 0.0;
                for (i, v) in values.iter().enumerate() {
                    let lo = if i == 0 {
                        f64::NEG_INFINITY
                    } else {
                        breakpoints[i - 1]
                    };
                    let hi = breakpoints.get(i).copied().unwrap_or(f64::INFINITY);
                    if hi > 0.0 && lo <= horizon {
                        beta = beta.max(v.abs());
                    }
                }
                beta
            }
        };
        Ok(Self { profile, beta })
    }

    pub fn zero() -> Self {
        Self {
            profile: DampingProfile::Zero,
            beta: 0.0,
        }
    }

    pub fn cos(amplitude: f64, horizon: f64) -> Result<Self> {
        Self::new(DampingProfile::Cos { amplitude }, horizon)
    }

    pub fn profile(&self) -> &DampingProfile {
        &self.profile
    }

    /// `sup |b(t)|` over the horizon.
    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.profile, DampingProfile::Zero)
    }

    pub fn eval(&self, t: f64) -> f64 {
        match &self.profile {
            DampingProfile::Zero => 0.0,
            DampingProfile::Cos { amplitude } => amplitude * t.cos(),
            DampingProfile::Sin { amplitude } => amplitude * t.sin(),
            DampingProfile::Piecewise {
                breakpoints,
                values,
            } => {
                let seg = breakpoints.partition_point(|&b| b <= t);
                values[seg]
            }
        }
    }

    /// Multiplier of mode `n` in `A(t)`: `-n^2 + i n b(t)`.
    pub fn mode_coefficient(&self, n: u32, t: f64) -> C64 {
        let n = f64::from(n);
        C64::new(-n * n, n * self.eval(t))
    }
}

fn check_finite(v: f64, what: &str) -> Result<()> {
    if !v.is_finite() {
        return Err(Error::NonFinite(what.into()));
    }
    Ok(())
}

/// Uniform grid `t_j = j T / M`, `j = 0..=M`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::invalid("horizon must be positive and finite"));
        }
        if steps < 2 {
            return Err(Error::invalid("time grid needs at least 2 steps"));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        if j == self.steps {
            self.horizon
        } else {
            j as f64 * self.horizon / self.steps as f64
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.steps).map(|j| self.node(j)).collect()
    }

    /// Index of the node at `t`, tolerating relative rounding of `1e-9` of a step.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let h = self.spacing();
        let x = t / h;
        let j = x.round();
        if !t.is_finite() || j < 0.0 || j > self.steps as f64 || (x - j).abs() > 1e-9 {
            return Err(Error::OffGrid {
                time: t,
                spacing: h,
            });
        }
        Ok(j as usize)
    }

    /// Composite trapezoid weights on nodes `0..=j`.
    pub(crate) fn trapezoid_weight(&self, k: usize, j: usize) -> f64 {
        let h = self.spacing();
        if j == 0 {
            0.0
        } else if k == 0 || k == j {
            0.5 * h
        } else {
            h
        }
    }
}

/// Integration controls for [`build_kernel`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelOptions {
    /// Largest phase advance `omega_n * h_sub` allowed in one RK4 sub-step.
    pub max_phase_step: f64,
    /// Sub-steps per grid interval, overriding the phase-based choice.
    pub fixed_substeps: Option<usize>,
    /// Relative step-halving discrepancy treated as instability.
    pub self_check_limit: f64,
}

impl Default for KernelOptions {
    fn default() -> Self {
        Self {
            max_phase_step: 5e-3,
            fixed_substeps: None,
            self_check_limit: 1e-3,
        }
    }
}

/// Sub-steps per grid interval needed for mode `n` to respect `max_phase_step`.
pub fn substeps_for(n: u32, beta: f64, spacing: f64, max_phase_step: f64) -> usize {
    let nf = f64::from(n);
    let omega = (nf * nf + nf * beta).sqrt();
    ((omega * spacing / max_phase_step).ceil() as usize).max(1)
}

#[derive(Debug, Clone)]
struct ModeTable {
    phi: Vec<Mat2>,
    phi_inv: Vec<Mat2>,
    substeps: usize,
    self_check: f64,
}

/// Tabulated evolution operator `S(t,s)` and cosine kernel `C(t,s)` on a grid.
#[derive(Debug, Clone)]
pub struct EvolutionKernel {
    modes: ModeSet,
    damping: DampingSpec,
    grid: TimeGrid,
    tables: Vec<ModeTable>,
    nhat: f64,
    ntilde: f64,
    lipschitz: f64,
}

pub fn build_kernel(
    modes: &ModeSet,
    damping: &DampingSpec,
    grid: &TimeGrid,
) -> Result<EvolutionKernel> {
    build_kernel_with(modes, damping, grid, KernelOptions::default())
}

pub fn build_kernel_with(
    modes: &ModeSet,
    damping: &DampingSpec,
    grid: &TimeGrid,
    options: KernelOptions,
) -> Result<EvolutionKernel> {
    let tables = modes
        .modes()
        .par_iter()
        .map(|&n| integrate_mode(n, damping, grid, &options))
        .collect::<Result<Vec<_>>>()?;
    let mut kernel = EvolutionKernel {
        modes: modes.clone(),
        damping: damping.clone(),
        grid: *grid,
        tables,
        nhat: 0.0,
        ntilde: 0.0,
        lipschitz: 0.0,
    };
    let scans = kernel.scan_pairs();
    kernel.nhat = scans.iter().map(|s| s.max_q).fold(0.0, f64::max);
    kernel.ntilde = scans.iter().map(|s| s.max_r).fold(0.0, f64::max);
    kernel.lipschitz = scans.iter().map(|s| s.lipschitz).fold(0.0, f64::max);
    Ok(kernel)
}

fn integrate_mode(
    n: u32,
    damping: &DampingSpec,
    grid: &TimeGrid,
    options: &KernelOptions,
) -> Result<ModeTable> {
    let substeps = options
        .fixed_substeps
        .unwrap_or_else(|| substeps_for(n, damping.beta(), grid.spacing(), options.max_phase_step));
    let phi = propagate(n, damping, grid, substeps);
    let check = propagate(n, damping, grid, 2 * substeps);
    let last = phi[grid.steps()];
    let last_fine = check[grid.steps()];

    let scale = mat_max_abs(&last_fine).max(1.0);
    if !scale.is_finite()
        || phi
            .iter()
            .any(|m| !mat_max_abs(m).is_finite() || mat_max_abs(m) > 1e12)
    {
        return Err(Error::Unstable {
            mode: n,
            detail: format!("fundamental matrix blew up with {substeps} sub-steps per interval"),
        });
    }
    let self_check = mat_max_abs(&mat_sub(&last, &last_fine)) / scale;
    if !(self_check <= options.self_check_limit) {
        return Err(Error::Unstable {
            mode: n,
            detail: format!(
                "step-halving discrepancy {self_check:.3e} exceeds {:.1e}",
                options.self_check_limit
            ),
        });
    }
    let phi_inv = phi.iter().map(mat_inv).collect();
    Ok(ModeTable {
        phi,
        phi_inv,
        substeps,
        self_check,
    })
}

/// Classical RK4 for `Phi' = [[0, 1], [a_n(t), 0]] Phi`, `Phi(0) = I`.
fn propagate(n: u32, damping: &DampingSpec, grid: &TimeGrid, substeps: usize) -> Vec<Mat2> {
    let h = grid.spacing() / substeps as f64;
    let field = |t: f64, y: &Mat2| -> Mat2 {
        let a = damping.mode_coefficient(n, t);
        [[y[1][0], y[1][1]], [a * y[0][0], a * y[0][1]]]
    };
    let mut out = Vec::with_capacity(grid.len());
    let mut y = IDENTITY;
    out.push(y);
    for j in 0..grid.steps() {
        let t0 = grid.node(j);
        for i in 0..substeps {
            let t = t0 + i as f64 * h;
            let k1 = field(t, &y);
            let k2 = field(t + 0.5 * h, &mat_axpy(&y, 0.5 * h, &k1));
            let k3 = field(t + 0.5 * h, &mat_axpy(&y, 0.5 * h, &k2));
            let k4 = field(t + h, &mat_axpy(&y, h, &k3));
            for r in 0..2 {
                for c in 0..2 {
                    y[r][c] += (k1[r][c] + 2.0 * k2[r][c] + 2.0 * k3[r][c] + k4[r][c]) * (h / 6.0);
                }
            }
        }
        out.push(y);
    }
    out
}

fn mat_axpy(y: &Mat2, s: f64, k: &Mat2) -> Mat2 {
    let mut out = *y;
    for r in 0..2 {
        for c in 0..2 {
            out[r][c] += k[r][c] * s;
        }
    }
    out
}

fn mat_sub(a: &Mat2, b: &Mat2) -> Mat2 {
    [
        [a[0][0] - b[0][0], a[0][1] - b[0][1]],
        [a[1][0] - b[1][0], a[1][1] - b[1][1]],
    ]
}

fn mat_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    [
        [
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
        ],
        [
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        ],
    ]
}

fn mat_inv(m: &Mat2) -> Mat2 {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    [
        [m[1][1] / det, -m[0][1] / det],
        [-m[1][0] / det, m[0][0] / det],
    ]
}

fn mat_max_abs(m: &Mat2) -> f64 {
    m.iter().flatten().map(|c| c.norm()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy)]
struct PairScan {
    max_q: f64,
    max_r: f64,
    lipschitz: f64,
    gronwall_slack: f64,
}

impl EvolutionKernel {
    pub fn modes(&self) -> &ModeSet {
        &self.modes
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn damping(&self) -> &DampingSpec {
        &self.damping
    }

    pub fn dim(&self) -> usize {
        self.modes.dim()
    }

    /// `sup ||S(t,s)||` over grid pairs `s <= t`.
    pub fn nhat(&self) -> f64 {
        self.nhat
    }

    /// `sup ||C(t,s)||` over grid pairs `s <= t`.
    pub fn ntilde(&self) -> f64 {
        self.ntilde
    }

    /// Grid estimate of `N_1` in `||S(t+h,s) - S(t,s)|| <= N_1 |h|`.
    pub fn lipschitz_estimate(&self) -> f64 {
        self.lipschitz
    }

    pub fn substeps(&self, mode_index: usize) -> usize {
        self.tables[mode_index].substeps
    }

    /// Relative step-halving discrepancy of the terminal fundamental matrix.
    pub fn self_check(&self, mode_index: usize) -> f64 {
        self.tables[mode_index].self_check
    }

    /// Propagator from node `k` to node `j` for mode `mode_index`. Any order of
    /// `j` and `k` is allowed; `j == k` is the exact identity.
    fn pair(&self, mode_index: usize, j: usize, k: usize) -> Mat2 {
        if j == k {
            return IDENTITY;
        }
        let table = &self.tables[mode_index];
        mat_mul(&table.phi[j], &table.phi_inv[k])
    }

    /// `q_n(t_j, t_k)`, the `S(t,s)` multiplier.
    pub fn q(&self, mode_index: usize, j: usize, k: usize) -> C64 {
        if j == k {
            return C64::new(0.0, 0.0);
        }
        let t = &self.tables[mode_index];
        t.phi[j][0][0] * t.phi_inv[k][0][1] + t.phi[j][0][1] * t.phi_inv[k][1][1]
    }

    /// `r_n(t_j, t_k)`, the `C(t,s)` multiplier.
    pub fn r(&self, mode_index: usize, j: usize, k: usize) -> C64 {
        if j == k {
            return C64::new(1.0, 0.0);
        }
        let t = &self.tables[mode_index];
        t.phi[j][0][0] * t.phi_inv[k][0][0] + t.phi[j][0][1] * t.phi_inv[k][1][0]
    }

    /// `d/dt q_n(t_j, t_k)`.
    pub fn dq_dt(&self, mode_index: usize, j: usize, k: usize) -> C64 {
        self.pair(mode_index, j, k)[1][1]
    }

    /// `d/dt r_n(t_j, t_k)`.
    pub fn dr_dt(&self, mode_index: usize, j: usize, k: usize) -> C64 {
        self.pair(mode_index, j, k)[1][0]
    }

    pub(crate) fn phi(&self, mode_index: usize, j: usize) -> &[[C64; 2]; 2] {
        &self.tables[mode_index].phi[j]
    }

    pub(crate) fn phi_inv(&self, mode_index: usize, k: usize) -> &[[C64; 2]; 2] {
        &self.tables[mode_index].phi_inv[k]
    }

    fn ordered_nodes(&self, t: f64, s: f64) -> Result<(usize, usize)> {
        let j = self.grid.index_of(t)?;
        let k = self.grid.index_of(s)?;
        if k > j {
            return Err(Error::invalid(format!(
                "source time {s} is after target time {t}"
            )));
        }
        Ok((j, k))
    }

    fn check_dim(&self, x: &SpectralVector) -> Result<()> {
        if x.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.dim(),
            });
        }
        Ok(())
    }

    /// `S(t_j, t_k) x`.
    pub fn apply_s(&self, j: usize, k: usize, x: &SpectralVector) -> SpectralVector {
        x.map_modes(|m| self.q(m, j, k))
    }

    /// `C(t_j, t_k) x`.
    pub fn apply_c(&self, j: usize, k: usize, x: &SpectralVector) -> SpectralVector {
        x.map_modes(|m| self.r(m, j, k))
    }

    /// `S*(t_j, t_k) x`.
    pub fn apply_s_adjoint(&self, j: usize, k: usize, x: &SpectralVector) -> SpectralVector {
        x.map_modes(|m| self.q(m, j, k).conj())
    }

    fn scan_pairs(&self) -> Vec<PairScan> {
        let m = self.grid.steps();
        let h = self.grid.spacing();
        let beta = self.damping.beta();
        (0..self.dim())
            .into_par_iter()
            .map(|mi| {
                let n = f64::from(self.modes.modes()[mi]);
                let mut scan = PairScan {
                    max_q: 0.0,
                    max_r: 0.0,
                    lipschitz: 0.0,
                    gronwall_slack: f64::INFINITY,
                };
                for k in 0..=m {
                    let mut prev: Option<C64> = None;
                    for j in k..=m {
                        let q = self.q(mi, j, k);
                        let r = self.r(mi, j, k);
                        scan.max_q = scan.max_q.max(q.norm());
                        scan.max_r = scan.max_r.max(r.norm());
                        let bound = (beta * (self.grid.node(j) - self.grid.node(k))).exp() / n;
                        scan.gronwall_slack = scan.gronwall_slack.min(bound - q.norm());
                        if let Some(p) = prev {
                            scan.lipschitz = scan.lipschitz.max((q - p).norm() / h);
                        }
                        prev = Some(q);
                    }
                }
                scan
            })
            .collect()
    }
}

/// `C_0(t) x`: mode `n` multiplied by `cos(n t)`.
pub fn cosine_apply(modes: &ModeSet, t: f64, x: &SpectralVector) -> Result<SpectralVector> {
    check_modes(modes, x)?;
    let m = modes.modes();
    Ok(x.map_modes(|k| C64::new((f64::from(m[k]) * t).cos(), 0.0)))
}

/// `S_0(t) x`: mode `n` multiplied by `sin(n t) / n`.
pub fn sine_apply(modes: &ModeSet, t: f64, x: &SpectralVector) -> Result<SpectralVector> {
    check_modes(modes, x)?;
    let m = modes.modes();
    Ok(x.map_modes(|k| {
        let n = f64::from(m[k]);
        C64::new((n * t).sin() / n, 0.0)
    }))
}

fn check_modes(modes: &ModeSet, x: &SpectralVector) -> Result<()> {
    if modes.dim() != x.dim() {
        return Err(Error::DimensionMismatch {
            expected: modes.dim(),
            found: x.dim(),
        });
    }
    Ok(())
}

/// `S(t,s) x` for grid times `s <= t`.
pub fn evolution_apply(
    kernel: &EvolutionKernel,
    t: f64,
    s: f64,
    x: &SpectralVector,
) -> Result<SpectralVector> {
    kernel.check_dim(x)?;
    let (j, k) = kernel.ordered_nodes(t, s)?;
    Ok(kernel.apply_s(j, k, x))
}

/// `C(t,s) x = -d/ds S(t,s) x` for grid times `s <= t`.
pub fn cosine_evolution_apply(
    kernel: &EvolutionKernel,
    t: f64,
    s: f64,
    x: &SpectralVector,
) -> Result<SpectralVector> {
    kernel.check_dim(x)?;
    let (j, k) = kernel.ordered_nodes(t, s)?;
    Ok(kernel.apply_c(j, k, x))
}

/// `S*(t,s) x`; the kernel is diagonal so this conjugates each multiplier.
pub fn adjoint_evolution_apply(
    kernel: &EvolutionKernel,
    t: f64,
    s: f64,
    x: &SpectralVector,
) -> Result<SpectralVector> {
    kernel.check_dim(x)?;
    let (j, k) = kernel.ordered_nodes(t, s)?;
    Ok(kernel.apply_s_adjoint(j, k, x))
}

/// Maximum violations of the evolution-operator axioms on a computed kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AxiomReport {
    /// `max |q_n(t,t)|`
    pub s_diagonal: f64,
    /// `max |r_n(t,t) - 1|`
    pub c_diagonal: f64,
    /// `max |d_t q_n(t,s)|_{t=s} - 1|`, five-point centered difference.
    pub dt_at_diagonal: f64,
    /// `max |d_s q_n(t,s)|_{s=t} + 1|`, five-point centered difference.
    pub ds_at_diagonal: f64,
    /// Relative violation of `d_t^2 S(t,s) x = A(t) S(t,s) x` on a smooth probe.
    pub second_order: f64,
    /// `min (e^{beta (t-s)} / n - |q_n(t,s)|)` over grid pairs `s <= t`.
    pub gronwall_min_slack: f64,
    pub nhat: f64,
    pub ntilde: f64,
    pub lipschitz: f64,
    /// Largest step-halving discrepancy across modes.
    pub self_check: f64,
}

pub fn verify_axioms(kernel: &EvolutionKernel) -> AxiomReport {
    let m = kernel.grid.steps();
    let h = kernel.grid.spacing();
    let dim = kernel.dim();

    let mut s_diagonal: f64 = 0.0;
    let mut c_diagonal: f64 = 0.0;
    let mut dt_at_diagonal: f64 = 0.0;
    let mut ds_at_diagonal: f64 = 0.0;
    for mi in 0..dim {
        for j in 0..=m {
            s_diagonal = s_diagonal.max(kernel.q(mi, j, j).norm());
            c_diagonal = c_diagonal.max((kernel.r(mi, j, j) - 1.0).norm());
        }
        for k in 2..=m.saturating_sub(2) {
            let dt = five_point(|o| kernel.q(mi, offset(k, o), k), h);
            dt_at_diagonal = dt_at_diagonal.max((dt - 1.0).norm());
            let ds = five_point(|o| kernel.q(mi, k, offset(k, o)), h);
            ds_at_diagonal = ds_at_diagonal.max((ds + 1.0).norm());
        }
    }

    let scans = kernel.scan_pairs();
    let gronwall_min_slack = scans
        .iter()
        .map(|s| s.gronwall_slack)
        .fold(f64::INFINITY, f64::min);

    AxiomReport {
        s_diagonal,
        c_diagonal,
        dt_at_diagonal,
        ds_at_diagonal,
        second_order: second_order_violation(kernel),
        gronwall_min_slack,
        nhat: kernel.nhat,
        ntilde: kernel.ntilde,
        lipschitz: kernel.lipschitz,
        self_check: (0..dim).map(|mi| kernel.self_check(mi)).fold(0.0, f64::max),
    }
}

fn offset(k: usize, o: i64) -> usize {
    (k as i64 + o) as usize
}

fn five_point(f: impl Fn(i64) -> C64, h: f64) -> C64 {
    (f(-2) - 8.0 * f(-1) + 8.0 * f(1) - f(2)) / (12.0 * h)
}

fn five_point_second(f: impl Fn(i64) -> C64, h: f64) -> C64 {
    (-f(-2) + 16.0 * f(-1) - 30.0 * f(0) + 16.0 * f(1) - f(2)) / (12.0 * h * h)
}

/// Spot check of `d_t^2 S(t,s) x = A(t) S(t,s) x` with `x_n = n^{-4}`.
fn second_order_violation(kernel: &EvolutionKernel) -> f64 {
    let m = kernel.grid.steps();
    let h = kernel.grid.spacing();
    let modes = kernel.modes.modes();
    let probe: Vec<f64> = modes.iter().map(|&n| f64::from(n).powi(-4)).collect();
    let stride = (m / 64).max(1);
    let mut worst_diff: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for &k in &[0, m / 4, m / 2] {
        let mut j = 2;
        while j + 2 <= m {
            let t = kernel.grid.node(j);
            let mut diff = 0.0;
            let mut rhs_norm = 0.0;
            for (mi, &n) in modes.iter().enumerate() {
                let d2 = five_point_second(|o| kernel.q(mi, offset(j, o), k), h) * probe[mi];
                let rhs = kernel.damping.mode_coefficient(n, t) * kernel.q(mi, j, k) * probe[mi];
                diff += (d2 - rhs).norm_sqr();
                rhs_norm += rhs.norm_sqr();
            }
            worst_diff = worst_diff.max(diff.sqrt());
            scale = scale.max(rhs_norm.sqrt());
            j += stride;
        }
    }
    if scale > 0.0 {
        worst_diff / scale
    } else {
        worst_diff
    }
}
