//! Truncated spectral model of the state space.
//!
//! States are coefficient vectors in an orthonormal eigenbasis `w_n`, and
//! operators are dense complex matrices in that basis. The unperturbed
//! generator acts diagonally with eigenvalue `-n^2` on mode `n`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Ordered set of positive mode indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeSet {
    modes: Vec<u32>,
}

impl ModeSet {
    pub fn new(modes: Vec<u32>) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::invalid("mode set must contain at least one mode"));
        }
        if modes.contains(&0) {
            return Err(Error::invalid("mode indices must be positive"));
        }
        if modes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("mode indices must be strictly increasing"));
        }
        Ok(Self { modes })
    }

    /// Modes `1..=count`.
    pub fn first(count: usize) -> Result<Self> {
        Self::new((1..=count as u32).collect())
    }

    pub fn dim(&self) -> usize {
        self.modes.len()
    }

    pub fn modes(&self) -> &[u32] {
        &self.modes
    }

    pub fn max_mode(&self) -> u32 {
        *self.modes.last().expect("non-empty mode set")
    }

    pub fn iter(&self) -> impl Iterator<Item = u32> + '_ {
        self.modes.iter().copied()
    }
}

/// Coefficients `<x, w_n>` of a state, one per mode.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralVector {
    coeffs: DVector<C64>,
}

impl SpectralVector {
    pub fn from_vec(coeffs: Vec<C64>) -> Result<Self> {
        if coeffs
            .iter()
            .any(|c| !c.re.is_finite() || !c.im.is_finite())
        {
            return Err(Error::NonFinite("spectral vector coefficients".into()));
        }
        Ok(Self {
            coeffs: DVector::from_vec(coeffs),
        })
    }

    pub fn from_real(values: &[f64]) -> Result<Self> {
        Self::from_vec(values.iter().map(|&v| C64::new(v, 0.0)).collect())
    }

    pub(crate) fn from_dvector(coeffs: DVector<C64>) -> Self {
        Self { coeffs }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            coeffs: DVector::zeros(dim),
        }
    }

    /// Unit coefficient at position `index` (0-based), zero elsewhere.
    pub fn basis(dim: usize, index: usize) -> Self {
        let mut v = Self::zeros(dim);
        v.coeffs[index] = C64::new(1.0, 0.0);
        v
    }

    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }

    pub fn as_slice(&self) -> &[C64] {
        self.coeffs.as_slice()
    }

    pub fn as_dvector(&self) -> &DVector<C64> {
        &self.coeffs
    }

    pub fn get(&self, index: usize) -> C64 {
        self.coeffs[index]
    }

    pub fn norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| c.re == 0.0 && c.im == 0.0)
    }

    /// Multiplies coefficient `k` by `factor(k)`.
    pub fn map_modes(&self, mut factor: impl FnMut(usize) -> C64) -> Self {
        let coeffs = DVector::from_iterator(
            self.dim(),
            self.coeffs.iter().enumerate().map(|(k, c)| c * factor(k)),
        );
        Self { coeffs }
    }

    pub fn scale(&self, s: C64) -> Self {
        Self {
            coeffs: &self.coeffs * s,
        }
    }

    pub fn scale_real(&self, s: f64) -> Self {
        Self {
            coeffs: self.coeffs.map(|c| c * s),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        check_dims(self.dim(), other.dim())?;
        Ok(Self {
            coeffs: &self.coeffs + &other.coeffs,
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        check_dims(self.dim(), other.dim())?;
        Ok(Self {
            coeffs: &self.coeffs - &other.coeffs,
        })
    }

    pub(crate) fn add_assign_unchecked(&mut self, other: &Self) {
        self.coeffs += &other.coeffs;
    }

    pub fn distance(&self, other: &Self) -> Result<f64> {
        Ok(self.sub(other)?.norm())
    }
}

fn check_dims(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// `sum conj(u_n) v_n`, conjugate-linear in `u`.
pub fn inner_product(u: &SpectralVector, v: &SpectralVector) -> Result<C64> {
    check_dims(u.dim(), v.dim())?;
    Ok(u.coeffs.dotc(&v.coeffs))
}

/// Applies the unperturbed generator: coefficient of mode `n` times `-n^2`.
pub fn apply_a(modes: &ModeSet, x: &SpectralVector) -> Result<SpectralVector> {
    check_dims(modes.dim(), x.dim())?;
    let m = modes.modes();
    Ok(x.map_modes(|k| {
        let n = f64::from(m[k]);
        C64::new(-n * n, 0.0)
    }))
}

/// Dense complex operator in the mode basis.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorMatrix {
    entries: DMatrix<C64>,
}

impl OperatorMatrix {
    pub fn new(entries: DMatrix<C64>) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(Error::invalid(format!(
                "operator matrix must be square, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        if entries
            .iter()
            .any(|c| !c.re.is_finite() || !c.im.is_finite())
        {
            return Err(Error::NonFinite("operator matrix entries".into()));
        }
        Ok(Self { entries })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            entries: DMatrix::identity(dim, dim),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            entries: DMatrix::zeros(dim, dim),
        }
    }

    pub fn diagonal(values: &[C64]) -> Self {
        Self {
            entries: DMatrix::from_diagonal(&DVector::from_column_slice(values)),
        }
    }

    /// Row-major complex entries.
    pub fn from_rows(dim: usize, rows: &[C64]) -> Result<Self> {
        if rows.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                found: rows.len(),
            });
        }
        Self::new(DMatrix::from_row_slice(dim, dim, rows))
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<C64> {
        &self.entries
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.entries[(row, col)]
    }

    pub fn apply(&self, x: &SpectralVector) -> Result<SpectralVector> {
        check_dims(self.dim(), x.dim())?;
        Ok(SpectralVector::from_dvector(&self.entries * &x.coeffs))
    }

    pub fn adjoint(&self) -> Self {
        adjoint(self)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        check_dims(self.dim(), other.dim())?;
        Ok(Self {
            entries: &self.entries * &other.entries,
        })
    }

    /// Operator 2-norm (largest singular value).
    pub fn norm(&self) -> f64 {
        if self.entries.iter().all(|c| c.norm_sqr() == 0.0) {
            return 0.0;
        }
        self.entries
            .clone()
            .singular_values()
            .iter()
            .copied()
            .fold(0.0, f64::max)
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|c| c.norm_sqr() == 0.0)
    }
}

/// Conjugate transpose.
pub fn adjoint(m: &OperatorMatrix) -> OperatorMatrix {
    OperatorMatrix {
        entries: m.entries.adjoint(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn inner_product_of_basis_vectors() {
        let e1 = SpectralVector::basis(3, 0);
        let e2 = SpectralVector::basis(3, 1);
        assert_eq!(inner_product(&e1, &e1).unwrap(), c(1.0, 0.0));
        assert_eq!(inner_product(&e1, &e2).unwrap(), c(0.0, 0.0));
    }

    #[test]
    fn inner_product_conjugates_first_argument() {
        let u = SpectralVector::from_vec(vec![c(1.0, 1.0), c(0.0, 0.0)]).unwrap();
        let v = SpectralVector::from_vec(vec![c(1.0, 0.0), c(0.0, 0.0)]).unwrap();
        assert_eq!(inner_product(&u, &v).unwrap(), c(1.0, -1.0));
    }

    #[test]
    fn inner_product_rejects_mismatch() {
        let u = SpectralVector::zeros(2);
        let v = SpectralVector::zeros(3);
        assert!(matches!(
            inner_product(&u, &v),
            Err(Error::DimensionMismatch {
                expected: 2,
                found: 3
            })
        ));
    }

    #[test]
    fn generator_eigenvalues() {
        let modes = ModeSet::first(4).unwrap();
        let ax = apply_a(&modes, &SpectralVector::basis(4, 0)).unwrap();
        assert_eq!(ax, SpectralVector::basis(4, 0).scale_real(-1.0));
        let ax = apply_a(&modes, &SpectralVector::basis(4, 2)).unwrap();
        assert_eq!(ax, SpectralVector::basis(4, 2).scale_real(-9.0));
        let zero = SpectralVector::zeros(4);
        assert!(apply_a(&modes, &zero).unwrap().is_zero());
    }

    #[test]
    fn adjoint_examples() {
        let id = OperatorMatrix::identity(3);
        assert_eq!(adjoint(&id), id);
        let d = OperatorMatrix::diagonal(&[c(0.0, 1.0), c(0.0, 1.0)]);
        assert_eq!(
            adjoint(&d),
            OperatorMatrix::diagonal(&[c(0.0, -1.0), c(0.0, -1.0)])
        );
        let m = OperatorMatrix::from_rows(2, &[c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)])
            .unwrap();
        let expected =
            OperatorMatrix::from_rows(2, &[c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)])
                .unwrap();
        assert_eq!(adjoint(&m), expected);
    }

    #[test]
    fn mode_set_validation() {
        assert!(ModeSet::new(vec![]).is_err());
        assert!(ModeSet::new(vec![0, 1]).is_err());
        assert!(ModeSet::new(vec![2, 2]).is_err());
        assert!(ModeSet::new(vec![3, 1]).is_err());
        assert_eq!(ModeSet::first(3).unwrap().modes(), &[1, 2, 3]);
    }

    #[test]
    fn non_square_operator_rejected() {
        assert!(OperatorMatrix::new(DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn operator_norm_of_diagonal() {
        let d = OperatorMatrix::diagonal(&[c(0.5, 0.0), c(0.0, -2.0)]);
        assert!((d.norm() - 2.0).abs() < 1e-12);
        assert_eq!(OperatorMatrix::zeros(3).norm(), 0.0);
    }

    fn cvec(dim: usize) -> impl Strategy<Value = Vec<C64>> {
        prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), dim)
            .prop_map(|v| v.into_iter().map(|(a, b)| C64::new(a, b)).collect())
    }

    proptest! {
        #[test]
        fn norm_squared_is_real_nonnegative(v in cvec(5)) {
            let x = SpectralVector::from_vec(v).unwrap();
            let ip = inner_product(&x, &x).unwrap();
            prop_assert!(ip.im.abs() <= 1e-12 * (1.0 + ip.re));
            prop_assert!(ip.re >= 0.0);
            prop_assert_eq!(ip.re == 0.0, x.is_zero());
        }

        #[test]
        fn generator_symmetric_on_real_vectors(
            a in prop::collection::vec(-3.0..3.0f64, 6),
            b in prop::collection::vec(-3.0..3.0f64, 6),
        ) {
            let modes = ModeSet::first(6).unwrap();
            let x = SpectralVector::from_real(&a).unwrap();
            let y = SpectralVector::from_real(&b).unwrap();
            let lhs = inner_product(&apply_a(&modes, &x).unwrap(), &y).unwrap();
            let rhs = inner_product(&x, &apply_a(&modes, &y).unwrap()).unwrap();
            prop_assert!((lhs - rhs).norm() <= 1e-12 * (1.0 + lhs.norm()));
        }

        #[test]
        fn adjoint_involution_and_pairing(m in cvec(16), x in cvec(4), y in cvec(4)) {
            let m = OperatorMatrix::from_rows(4, &m).unwrap();
            prop_assert_eq!(adjoint(&adjoint(&m)), m.clone());
            let x = SpectralVector::from_vec(x).unwrap();
            let y = SpectralVector::from_vec(y).unwrap();
            let lhs = inner_product(&m.apply(&x).unwrap(), &y).unwrap();
            let rhs = inner_product(&x, &adjoint(&m).apply(&y).unwrap()).unwrap();
            prop_assert!((lhs - rhs).norm() <= 1e-12 * (1.0 + lhs.norm()));
        }
    }
}
