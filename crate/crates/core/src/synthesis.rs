//! Controllability Gramian, its regularized resolvent, and the control law
//! `u(t) = B* S*(T,t) (aI + G)^{-1} p`.

use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::families::EvolutionKernel;
use crate::space::{OperatorMatrix, SpectralVector, C64};

/// Regularization parameter `a > 0`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
pub struct RegularizationParam(f64);

impl RegularizationParam {
    pub fn new(a: f64) -> Result<Self> {
        if !(a.is_finite() && a > 0.0) {
            return Err(Error::invalid(format!(
                "regularization parameter must be positive, got {a}"
            )));
        }
        Ok(Self(a))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// `int_0^T S(T,s) B B* S*(T,s) ds` with its cached spectrum.
#[derive(Debug, Clone)]
pub struct Gramian {
    matrix: OperatorMatrix,
    eigenvalues: Vec<f64>,
    quadrature_steps: usize,
}

impl Gramian {
    pub fn matrix(&self) -> &OperatorMatrix {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    /// Ascending eigenvalues.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn lambda_min(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn lambda_max(&self) -> f64 {
        *self.eigenvalues.last().expect("non-empty spectrum")
    }

    pub fn quadrature_steps(&self) -> usize {
        self.quadrature_steps
    }

    /// `||G - G*||`, entrywise max.
    pub fn hermitian_defect(&self) -> f64 {
        let m = self.matrix.entries();
        (m - m.adjoint())
            .iter()
            .map(|c| c.norm())
            .fold(0.0, f64::max)
    }

    pub(crate) fn from_matrix(matrix: OperatorMatrix, quadrature_steps: usize) -> Self {
        let mut eigenvalues: Vec<f64> = matrix
            .entries()
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .collect();
        eigenvalues.sort_by(|a, b| a.total_cmp(b));
        Self {
            matrix,
            eigenvalues,
            quadrature_steps,
        }
    }
}

/// Composite-trapezoid Gramian on the kernel's grid.
pub fn assemble_gramian(kernel: &EvolutionKernel, b: &OperatorMatrix) -> Result<Gramian> {
    let dim = kernel.dim();
    if b.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: b.dim(),
        });
    }
    let grid = kernel.grid();
    let m = grid.steps();

    // W^{1/2}-scaled samples q_n(T, t_k), one column per node
    let samples = DMatrix::from_fn(dim, m + 1, |n, k| {
        kernel.q(n, m, k) * grid.trapezoid_weight(k, m).sqrt()
    });
    let weighted = &samples * samples.adjoint();
    let bb = b.entries() * b.entries().adjoint();

    let mut g = DMatrix::<C64>::zeros(dim, dim);
    for i in 0..dim {
        for j in i..dim {
            let v = bb[(i, j)] * weighted[(i, j)];
            if !(v.re.is_finite() && v.im.is_finite()) {
                return Err(Error::NonFinite("Gramian integrand".into()));
            }
            if i == j {
                g[(i, i)] = C64::new(v.re, 0.0);
            } else {
                g[(i, j)] = v;
                g[(j, i)] = v.conj();
            }
        }
    }
    Ok(Gramian::from_matrix(OperatorMatrix::new(g)?, m))
}

/// Cached Hermitian factorization of `aI + G`.
#[derive(Debug, Clone)]
pub struct RegularizedResolvent {
    a: RegularizationParam,
    shifted: DMatrix<C64>,
    factor: Cholesky<C64, Dyn>,
}

impl RegularizedResolvent {
    pub fn new(gramian: &Gramian, a: RegularizationParam) -> Result<Self> {
        let dim = gramian.dim();
        let shifted = gramian.matrix.entries()
            + DMatrix::<C64>::identity(dim, dim) * C64::new(a.value(), 0.0);
        let factor = Cholesky::new(shifted.clone())
            .ok_or_else(|| Error::invalid("aI + G is not positive definite"))?;
        Ok(Self { a, shifted, factor })
    }

    pub fn a(&self) -> RegularizationParam {
        self.a
    }

    /// Solves `(aI + G) w = v`.
    pub fn apply(&self, v: &SpectralVector) -> Result<SpectralVector> {
        if v.dim() != self.shifted.nrows() {
            return Err(Error::DimensionMismatch {
                expected: self.shifted.nrows(),
                found: v.dim(),
            });
        }
        Ok(SpectralVector::from_dvector(
            self.factor.solve(v.as_dvector()),
        ))
    }

    /// `||(aI + G) w - v||`.
    pub fn residual(&self, w: &SpectralVector, v: &SpectralVector) -> f64 {
        let r: DVector<C64> = &self.shifted * w.as_dvector() - v.as_dvector();
        r.norm()
    }
}

/// `(aI + G)^{-1} v`.
pub fn resolvent_apply(
    g: &Gramian,
    a: RegularizationParam,
    v: &SpectralVector,
) -> Result<SpectralVector> {
    RegularizedResolvent::new(g, a)?.apply(v)
}

/// Terminal residual `p = x_T - C(T,0) x0 - S(T,0) y0 - int_0^T S(T,s) f(s) ds`.
pub fn residual_target(
    kernel: &EvolutionKernel,
    x0: &SpectralVector,
    y0: &SpectralVector,
    x_target: &SpectralVector,
    forcing: &[SpectralVector],
) -> Result<SpectralVector> {
    let dim = kernel.dim();
    let grid = kernel.grid();
    let m = grid.steps();
    for v in [x0, y0, x_target] {
        if v.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: v.dim(),
            });
        }
    }
    if forcing.len() != grid.len() {
        return Err(Error::DimensionMismatch {
            expected: grid.len(),
            found: forcing.len(),
        });
    }
    let mut p = x_target
        .sub(&kernel.apply_c(m, 0, x0))?
        .sub(&kernel.apply_s(m, 0, y0))?;
    for (k, f) in forcing.iter().enumerate() {
        if f.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: f.dim(),
            });
        }
        let w = grid.trapezoid_weight(k, m);
        p = p.sub(&kernel.apply_s(m, k, f).scale_real(w))?;
    }
    Ok(p)
}

/// `u(t) = B* S*(T,t) R(a,G) p_hat` at grid time `t`.
pub fn control_law(
    kernel: &EvolutionKernel,
    b: &OperatorMatrix,
    g: &Gramian,
    a: RegularizationParam,
    p_hat: &SpectralVector,
    t: f64,
) -> Result<SpectralVector> {
    let j = kernel.grid().index_of(t)?;
    let w = resolvent_apply(g, a, p_hat)?;
    control_from_weight(kernel, b, &w, j)
}

/// Control at every node given the resolved weight `w = R(a,G) p`.
pub fn control_trajectory(
    kernel: &EvolutionKernel,
    b: &OperatorMatrix,
    w: &SpectralVector,
) -> Result<Vec<SpectralVector>> {
    (0..kernel.grid().len())
        .map(|j| control_from_weight(kernel, b, w, j))
        .collect()
}

pub(crate) fn control_from_weight(
    kernel: &EvolutionKernel,
    b: &OperatorMatrix,
    w: &SpectralVector,
    j: usize,
) -> Result<SpectralVector> {
    let m = kernel.grid().steps();
    b.adjoint().apply(&kernel.apply_s_adjoint(m, j, w))
}

/// `||a R(a,G) p||`, the exact terminal miss of the linear problem.
pub fn linear_terminal_error(
    g: &Gramian,
    a: RegularizationParam,
    p: &SpectralVector,
) -> Result<f64> {
    Ok(resolvent_apply(g, a, p)?.norm() * a.value())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayRow {
    pub a: f64,
    pub probe_id: usize,
    pub norm_value: f64,
}

/// `||a R(a,G) v||` per probe and regularization level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayTable {
    pub rows: Vec<DecayRow>,
    pub lambda_min: f64,
    /// One flag per probe: the last value did not drop below the first.
    pub non_decay: Vec<bool>,
}

impl DecayTable {
    pub fn any_non_decay(&self) -> bool {
        self.non_decay.iter().any(|&f| f)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["a", "probe_id", "norm_value"])?;
        for r in &self.rows {
            w.write_record([
                r.a.to_string(),
                r.probe_id.to_string(),
                r.norm_value.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Relative drop below which a sequence counts as not decaying.
pub(crate) const DECAY_EPS: f64 = 1e-9;

pub(crate) fn flags_non_decay(first: f64, last: f64) -> bool {
    first > 0.0 && last >= first * (1.0 - DECAY_EPS)
}

pub(crate) fn check_decreasing(a_list: &[f64]) -> Result<()> {
    if a_list.is_empty() {
        return Err(Error::invalid("regularization list is empty"));
    }
    if a_list.iter().any(|&a| !(a.is_finite() && a > 0.0)) {
        return Err(Error::invalid("regularization values must be positive"));
    }
    if a_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::invalid(
            "regularization list must be strictly decreasing",
        ));
    }
    Ok(())
}

pub fn h0_diagnostic(g: &Gramian, a_list: &[f64], probes: &[SpectralVector]) -> Result<DecayTable> {
    check_decreasing(a_list)?;
    let resolvents = a_list
        .iter()
        .map(|&a| RegularizedResolvent::new(g, RegularizationParam::new(a)?))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(a_list.len() * probes.len());
    let mut non_decay = Vec::with_capacity(probes.len());
    for (probe_id, v) in probes.iter().enumerate() {
        let mut values = Vec::with_capacity(a_list.len());
        for (res, &a) in resolvents.iter().zip(a_list) {
            let norm_value = a * res.apply(v)?.norm();
            values.push(norm_value);
            rows.push(DecayRow {
                a,
                probe_id,
                norm_value,
            });
        }
        non_decay.push(values.len() > 1 && flags_non_decay(values[0], values[values.len() - 1]));
    }
    Ok(DecayTable {
        rows,
        lambda_min: g.lambda_min(),
        non_decay,
    })
}
