//! Dense complex matrices and multi-subsystem tensor bookkeeping.
//!
//! Matrices are stored row-major. Tensor factors are ordered left to right,
//! the leftmost factor being the most significant digit of a basis index.
//! Every operation that needs factor structure takes an explicit
//! [`SubsystemShape`]; nothing is inferred from the matrix size.

use std::collections::HashSet;
use std::fmt;
use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

/// Absolute Hermiticity tolerance used when validating unit-scale inputs.
pub const HERMITIAN_TOL: f64 = 1e-10;

#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "MatrixDump", try_from = "MatrixDump")]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

/// JSON layout `{rows, cols, re: [...], im: [...]}` with row-major entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixDump {
    pub rows: usize,
    pub cols: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl From<ComplexMatrix> for MatrixDump {
    fn from(m: ComplexMatrix) -> Self {
        MatrixDump {
            rows: m.rows,
            cols: m.cols,
            re: m.data.iter().map(|z| z.re).collect(),
            im: m.data.iter().map(|z| z.im).collect(),
        }
    }
}

impl TryFrom<MatrixDump> for ComplexMatrix {
    type Error = Error;

    fn try_from(d: MatrixDump) -> Result<Self> {
        if d.re.len() != d.im.len() {
            return Err(Error::DimensionMismatch(format!(
                "dump has {} real and {} imaginary parts",
                d.re.len(),
                d.im.len()
            )));
        }
        let data = d.re.iter().zip(&d.im).map(|(&re, &im)| C64::new(re, im)).collect();
        ComplexMatrix::from_vec(d.rows, d.cols, data)
    }
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexMatrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            write!(f, "  ")?;
            for c in 0..self.cols {
                let z = self[(r, c)];
                write!(f, "{:+.4}{:+.4}i ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        ComplexMatrix { rows, cols, data: vec![ZERO; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = ONE;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        ComplexMatrix { rows, cols, data }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} entries supplied for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(ComplexMatrix { rows, cols, data })
    }

    /// Builds a matrix from row-major real entries.
    ///
    /// Panics if `entries.len() != rows * cols`.
    pub fn real(rows: usize, cols: usize, entries: &[f64]) -> Self {
        assert_eq!(entries.len(), rows * cols, "entry count must equal rows * cols");
        ComplexMatrix { rows, cols, data: entries.iter().map(|&x| C64::new(x, 0.0)).collect() }
    }

    pub fn diag(values: &[C64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, &v) in values.iter().enumerate() {
            m.data[i * n + i] = v;
        }
        m
    }

    pub fn diag_real(values: &[f64]) -> Self {
        Self::diag(&values.iter().map(|&x| C64::new(x, 0.0)).collect::<Vec<_>>())
    }

    /// Column vector with the given entries.
    pub fn column(entries: &[C64]) -> Self {
        ComplexMatrix { rows: entries.len(), cols: 1, data: entries.to_vec() }
    }

    /// Computational basis ket `|i⟩` in dimension `d`.
    pub fn basis(d: usize, i: usize) -> Self {
        let mut v = Self::zeros(d, 1);
        v.data[i] = ONE;
        v
    }

    /// `|a⟩⟨b|` for column vectors `a`, `b`.
    pub fn ket_bra(a: &ComplexMatrix, b: &ComplexMatrix) -> Self {
        debug_assert!(a.cols == 1 && b.cols == 1);
        Self::from_fn(a.rows, b.rows, |r, c| a.data[r] * b.data[c].conj())
    }

    /// Projector `|v⟩⟨v|`.
    pub fn projector(v: &ComplexMatrix) -> Self {
        Self::ket_bra(v, v)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<C64> {
        self.data
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)].conj())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    pub fn conj(&self) -> Self {
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z.conj()).collect(),
        }
    }

    pub fn scale(&self, s: C64) -> Self {
        ComplexMatrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&z| z * s).collect() }
    }

    pub fn scale_real(&self, s: f64) -> Self {
        ComplexMatrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&z| z * s).collect() }
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Largest entry modulus.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Hilbert–Schmidt inner product `tr(self† other)`.
    pub fn hs_inner(&self, other: &ComplexMatrix) -> C64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a.conj() * b).sum()
    }

    /// `max |X - X†|` over entries.
    pub fn hermiticity_deviation(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let n = self.rows;
        let mut dev: f64 = 0.0;
        for r in 0..n {
            for c in r..n {
                dev = dev.max((self[(r, c)] - self[(c, r)].conj()).norm());
            }
        }
        dev
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_deviation() <= tol
    }

    /// `(X + X†)/2`.
    pub fn hermitian_part(&self) -> Self {
        Self::from_fn(self.rows, self.cols, |r, c| (self[(r, c)] + self[(c, r)].conj()) * 0.5)
    }

    pub fn matmul(&self, rhs: &ComplexMatrix) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(Error::DimensionMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for r in 0..self.rows {
            let out_row = &mut out.data[r * rhs.cols..(r + 1) * rhs.cols];
            for k in 0..self.cols {
                let a = self.data[r * self.cols + k];
                if a == ZERO {
                    continue;
                }
                let rhs_row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                for (o, &b) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `A X A†`.
    pub fn conjugate_by(&self, a: &ComplexMatrix) -> Result<Self> {
        a.matmul(self)?.matmul(&a.adjoint())
    }

    /// Spectral norm of a Hermitian matrix: largest eigenvalue modulus.
    pub fn hermitian_spectral_norm(&self) -> Result<f64> {
        let e = eigh(self)?;
        Ok(e.values.iter().fold(0.0_f64, |m, v| m.max(v.abs())))
    }

    /// Spectral norm of an arbitrary matrix, `sqrt(λ_max(X†X))`.
    pub fn spectral_norm(&self) -> Result<f64> {
        let g = self.adjoint().matmul(self)?.hermitian_part();
        Ok(eigh(&g)?.values[0].max(0.0).sqrt())
    }

    fn same_shape(&self, other: &ComplexMatrix) {
        assert!(
            self.rows == other.rows && self.cols == other.cols,
            "shape mismatch: {}x{} vs {}x{}",
            self.rows,
            self.cols,
            other.rows,
            other.cols
        );
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = C64;

    fn index(&self, (r, c): (usize, usize)) -> &C64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut C64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

impl Add for &ComplexMatrix {
    type Output = ComplexMatrix;

    fn add(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        self.same_shape(rhs);
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &ComplexMatrix {
    type Output = ComplexMatrix;

    fn sub(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        self.same_shape(rhs);
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl AddAssign<&ComplexMatrix> for ComplexMatrix {
    fn add_assign(&mut self, rhs: &ComplexMatrix) {
        self.same_shape(rhs);
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
    }
}

impl SubAssign<&ComplexMatrix> for ComplexMatrix {
    fn sub_assign(&mut self, rhs: &ComplexMatrix) {
        self.same_shape(rhs);
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a -= b;
        }
    }
}

impl Neg for &ComplexMatrix {
    type Output = ComplexMatrix;

    fn neg(self) -> ComplexMatrix {
        self.scale_real(-1.0)
    }
}

/// Panics on inner-dimension mismatch; use [`ComplexMatrix::matmul`] for a fallible product.
impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;

    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        self.matmul(rhs).expect("matrix product dimension mismatch")
    }
}

/// Kronecker product: `(a⊗b)[i·p+k, j·q+l] = a[i,j]·b[k,l]`.
pub fn kron(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    let (p, q) = (b.rows, b.cols);
    let mut out = ComplexMatrix::zeros(a.rows * p, a.cols * q);
    let out_cols = a.cols * q;
    for i in 0..a.rows {
        for j in 0..a.cols {
            let x = a[(i, j)];
            if x == ZERO {
                continue;
            }
            for k in 0..p {
                let row = (i * p + k) * out_cols + j * q;
                for l in 0..q {
                    out.data[row + l] = x * b.data[k * q + l];
                }
            }
        }
    }
    out
}

/// Left-to-right Kronecker product of a list; the empty product is `[[1]]`.
pub fn kron_all<'a>(factors: impl IntoIterator<Item = &'a ComplexMatrix>) -> ComplexMatrix {
    factors
        .into_iter()
        .fold(ComplexMatrix::identity(1), |acc, f| kron(&acc, f))
}

/// `x^{⊗k}`.
pub fn kron_power(x: &ComplexMatrix, k: usize) -> ComplexMatrix {
    (0..k).fold(ComplexMatrix::identity(1), |acc, _| kron(&acc, x))
}

/// `|X⟩⟩ = Σ_i (X|i⟩) ⊗ |i⟩`, i.e. the row-major flattening as a column.
pub fn vectorize(x: &ComplexMatrix) -> ComplexMatrix {
    ComplexMatrix { rows: x.rows * x.cols, cols: 1, data: x.data.clone() }
}

/// Inverse of [`vectorize`].
pub fn unvectorize(v: &ComplexMatrix, rows: usize, cols: usize) -> Result<ComplexMatrix> {
    if v.cols != 1 || v.rows != rows * cols {
        return Err(Error::DimensionMismatch(format!(
            "cannot reshape {}x{} into {rows}x{cols}",
            v.rows, v.cols
        )));
    }
    Ok(ComplexMatrix { rows, cols, data: v.data.clone() })
}

/// Role tag of a tensor factor.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    /// Classical outcome register of the retrieved measurement.
    Label,
    /// The system fed to the retrieved measurement.
    RetrievalIn,
    /// Classical output of the k-th black-box use (1-based).
    MeasOut(usize),
    /// Quantum input of the k-th black-box use (1-based).
    MeasIn(usize),
    Memory(usize),
    Named(String),
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Role::Label => write!(f, "label"),
            Role::RetrievalIn => write!(f, "rin"),
            Role::MeasOut(k) => write!(f, "out{k}"),
            Role::MeasIn(k) => write!(f, "in{k}"),
            Role::Memory(k) => write!(f, "mem{k}"),
            Role::Named(s) => write!(f, "{s}"),
        }
    }
}

impl From<&str> for Role {
    fn from(s: &str) -> Self {
        Role::Named(s.to_string())
    }
}

/// Ordered tensor factors `(role, dim)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsystemShape {
    factors: Vec<(Role, usize)>,
}

impl SubsystemShape {
    pub fn new(factors: Vec<(Role, usize)>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (role, dim) in &factors {
            if !seen.insert(role.clone()) {
                return Err(Error::DuplicateSubsystem(role.to_string()));
            }
            if *dim == 0 {
                return Err(Error::InvalidArgument(format!("subsystem `{role}` has dimension 0")));
            }
        }
        Ok(SubsystemShape { factors })
    }

    /// Factors named by their position: `"0"`, `"1"`, ...
    pub fn anonymous(dims: &[usize]) -> Self {
        SubsystemShape::new(
            dims.iter().enumerate().map(|(i, &d)| (Role::Named(i.to_string()), d)).collect(),
        )
        .expect("positional labels are unique and dims checked by caller")
    }

    pub fn factors(&self) -> &[(Role, usize)] {
        &self.factors
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(|(_, d)| *d).collect()
    }

    pub fn roles(&self) -> Vec<Role> {
        self.factors.iter().map(|(r, _)| r.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn total_dim(&self) -> usize {
        self.factors.iter().map(|(_, d)| d).product()
    }

    pub fn dim_of(&self, role: &Role) -> Result<usize> {
        Ok(self.factors[self.position(role)?].1)
    }

    pub fn position(&self, role: &Role) -> Result<usize> {
        self.factors
            .iter()
            .position(|(r, _)| r == role)
            .ok_or_else(|| Error::UnknownSubsystem(role.to_string()))
    }

    pub fn positions(&self, roles: &[Role]) -> Result<Vec<usize>> {
        roles.iter().map(|r| self.position(r)).collect()
    }

    /// Shape restricted to the given positions, in the given order.
    pub fn select(&self, positions: &[usize]) -> SubsystemShape {
        SubsystemShape { factors: positions.iter().map(|&p| self.factors[p].clone()).collect() }
    }

    /// Row-major strides: the last factor varies fastest.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.factors.len()];
        for i in (0..self.factors.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.factors[i + 1].1;
        }
        strides
    }

    /// Splits a flat index into per-factor digits.
    pub fn digits(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.factors.len()];
        for i in (0..self.factors.len()).rev() {
            let d = self.factors[i].1;
            out[i] = index % d;
            index /= d;
        }
        out
    }

    pub fn join(&self, digits: &[usize]) -> usize {
        digits.iter().zip(&self.factors).fold(0, |acc, (&x, (_, d))| acc * d + x)
    }

    /// For the factors at `positions`, the flat-index offset contributed by
    /// every combination of their digits (enumerated in row-major order).
    pub fn offsets(&self, positions: &[usize]) -> Vec<usize> {
        let strides = self.strides();
        let mut offs = vec![0usize];
        for &p in positions {
            let (_, d) = self.factors[p];
            let mut next = Vec::with_capacity(offs.len() * d);
            for &o in &offs {
                for x in 0..d {
                    next.push(o + x * strides[p]);
                }
            }
            offs = next;
        }
        offs
    }

    pub fn check_square(&self, x: &ComplexMatrix) -> Result<()> {
        if !x.is_square() || x.rows() != self.total_dim() {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} matrix does not match subsystem shape of total dimension {}",
                x.rows(),
                x.cols(),
                self.total_dim()
            )));
        }
        Ok(())
    }

    /// Positions not in `positions`, ascending.
    pub fn complement(&self, positions: &[usize]) -> Vec<usize> {
        (0..self.factors.len()).filter(|p| !positions.contains(p)).collect()
    }
}

/// Traces out every factor not listed in `keep`. Kept factors retain their
/// original relative order.
pub fn partial_trace(x: &ComplexMatrix, shape: &SubsystemShape, keep: &[Role]) -> Result<ComplexMatrix> {
    shape.check_square(x)?;
    let mut kept = shape.positions(keep)?;
    kept.sort_unstable();
    kept.dedup();
    let traced = shape.complement(&kept);
    let keep_off = shape.offsets(&kept);
    let trace_off = shape.offsets(&traced);
    let n = x.rows();
    let k = keep_off.len();
    let mut out = ComplexMatrix::zeros(k, k);
    for (a, &ra) in keep_off.iter().enumerate() {
        for (b, &cb) in keep_off.iter().enumerate() {
            let mut acc = ZERO;
            for &t in &trace_off {
                acc += x.data[(ra + t) * n + cb + t];
            }
            out.data[a * k + b] = acc;
        }
    }
    Ok(out)
}

/// Transposes the indices of one factor, leaving the others untouched.
pub fn partial_transpose(x: &ComplexMatrix, shape: &SubsystemShape, subsystem: &Role) -> Result<ComplexMatrix> {
    shape.check_square(x)?;
    let p = shape.position(subsystem)?;
    let stride = shape.strides()[p];
    let d = shape.factors[p].1;
    let n = x.rows();
    let mut out = ComplexMatrix::zeros(n, n);
    for r in 0..n {
        let rd = (r / stride) % d;
        for c in 0..n {
            let cd = (c / stride) % d;
            let r2 = r - rd * stride + cd * stride;
            let c2 = c - cd * stride + rd * stride;
            out.data[r2 * n + c2] = x.data[r * n + c];
        }
    }
    Ok(out)
}

/// Reorders tensor factors; `order` lists every role of `shape` exactly once,
/// giving the new left-to-right order.
pub fn permute_subsystems(
    x: &ComplexMatrix,
    shape: &SubsystemShape,
    order: &[Role],
) -> Result<(ComplexMatrix, SubsystemShape)> {
    shape.check_square(x)?;
    if order.len() != shape.len() {
        return Err(Error::InvalidArgument(format!(
            "permutation lists {} of {} subsystems",
            order.len(),
            shape.len()
        )));
    }
    let positions = shape.positions(order)?;
    let new_shape = SubsystemShape::new(positions.iter().map(|&p| shape.factors[p].clone()).collect())?;
    let old_index = shape.offsets(&positions);
    let n = x.rows();
    let mut out = ComplexMatrix::zeros(n, n);
    for (r, &or) in old_index.iter().enumerate() {
        for (c, &oc) in old_index.iter().enumerate() {
            out.data[r * n + c] = x.data[or * n + oc];
        }
    }
    Ok((out, new_shape))
}

/// `I_{others} ⊗ x` placed on the factors `at` of `shape` (in the order
/// listed), with identity on all remaining factors.
pub fn embed_with_identity(x: &ComplexMatrix, shape: &SubsystemShape, at: &[Role]) -> Result<ComplexMatrix> {
    let positions = shape.positions(at)?;
    let sub = shape.select(&positions);
    sub.check_square(x)?;
    let rest = shape.complement(&positions);
    let sub_off = shape.offsets(&positions);
    let rest_off = shape.offsets(&rest);
    let n = shape.total_dim();
    let mut out = ComplexMatrix::zeros(n, n);
    for (a, &ra) in sub_off.iter().enumerate() {
        for (b, &cb) in sub_off.iter().enumerate() {
            let v = x[(a, b)];
            if v == ZERO {
                continue;
            }
            for &t in &rest_off {
                out.data[(ra + t) * n + cb + t] = v;
            }
        }
    }
    Ok(out)
}

/// `tr_2[(I_{d1} ⊗ b) x]` for `x` acting on `C^{d1} ⊗ C^{dim b}`.
///
/// This is the partial trace over the second factor after the second factor
/// has been multiplied by `b`, evaluated without forming the product.
pub fn contract_second(x: &ComplexMatrix, first_dim: usize, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    let m = b.rows();
    if !b.is_square() || !x.is_square() || x.rows() != first_dim * m {
        return Err(Error::DimensionMismatch(format!(
            "cannot contract {}x{} with {}x{} on a {first_dim}-dimensional first factor",
            x.rows(),
            x.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let n = x.rows();
    let mut out = ComplexMatrix::zeros(first_dim, first_dim);
    for i in 0..first_dim {
        for j in 0..first_dim {
            let mut acc = ZERO;
            for u in 0..m {
                for v in 0..m {
                    let bv = b.data[u * m + v];
                    if bv != ZERO {
                        acc += bv * x.data[(i * m + v) * n + j * m + u];
                    }
                }
            }
            out.data[i * first_dim + j] = acc;
        }
    }
    Ok(out)
}

/// Eigen-decomposition of a Hermitian matrix.
#[derive(Clone, Debug)]
pub struct Eigh {
    /// Eigenvalues in descending order.
    pub values: Vec<f64>,
    /// Column `j` is the eigenvector for `values[j]`.
    pub vectors: ComplexMatrix,
}

impl Eigh {
    pub fn reconstruct(&self) -> ComplexMatrix {
        self.reconstruct_with(|x| x)
    }

    /// `V f(Λ) V†`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> ComplexMatrix {
        let n = self.values.len();
        let fv: Vec<f64> = self.values.iter().map(|&x| f(x)).collect();
        let v = &self.vectors;
        ComplexMatrix::from_fn(n, n, |r, c| {
            let mut acc = ZERO;
            for (k, &l) in fv.iter().enumerate() {
                if l != 0.0 {
                    acc += v[(r, k)] * v[(c, k)].conj() * l;
                }
            }
            acc
        })
    }

    pub fn min(&self) -> f64 {
        *self.values.last().unwrap_or(&0.0)
    }

    pub fn max(&self) -> f64 {
        *self.values.first().unwrap_or(&0.0)
    }
}

pub fn eigh(x: &ComplexMatrix) -> Result<Eigh> {
    if !x.is_square() {
        return Err(Error::DimensionMismatch(format!("eigh needs a square matrix, got {}x{}", x.rows, x.cols)));
    }
    let deviation = x.hermiticity_deviation();
    if deviation > HERMITIAN_TOL * x.max_abs().max(1.0) {
        return Err(Error::NotHermitian { deviation });
    }
    let n = x.rows;
    if n == 0 {
        return Ok(Eigh { values: vec![], vectors: ComplexMatrix::zeros(0, 0) });
    }
    let m = faer::Mat::<C64>::from_fn(n, n, |r, c| (x[(r, c)] + x[(c, r)].conj()) * 0.5);
    let evd = m.self_adjoint_eigen(faer::Side::Lower).map_err(|_| Error::EigenFailure)?;
    let s = evd.S();
    let u = evd.U();
    // faer returns ascending order
    let values = (0..n).rev().map(|k| s[k].re).collect();
    let vectors = ComplexMatrix::from_fn(n, n, |r, c| u[(r, n - 1 - c)]);
    Ok(Eigh { values, vectors })
}

/// Moore–Penrose pseudo-inverse of a Hermitian PSD matrix. Eigenvalues at or
/// below `rank_tol · max(1, λ_max)` are treated as zero.
pub fn pinv(g: &ComplexMatrix, rank_tol: f64) -> Result<ComplexMatrix> {
    let e = eigh(g)?;
    let cutoff = rank_tol * e.max().abs().max(1.0);
    Ok(e.reconstruct_with(|l| if l > cutoff { 1.0 / l } else { 0.0 }))
}

/// Number of eigenvalues above `rank_tol · max(1, λ_max)`.
pub fn numerical_rank(g: &ComplexMatrix, rank_tol: f64) -> Result<usize> {
    let e = eigh(g)?;
    let cutoff = rank_tol * e.max().abs().max(1.0);
    Ok(e.values.iter().filter(|&&l| l > cutoff).count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> ComplexMatrix {
        ComplexMatrix::from_fn(rows, cols, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    fn random_hermitian(rng: &mut impl Rng, n: usize) -> ComplexMatrix {
        random_matrix(rng, n, n).hermitian_part()
    }

    fn sigma_z() -> ComplexMatrix {
        ComplexMatrix::real(2, 2, &[1.0, 0.0, 0.0, -1.0])
    }

    #[test]
    fn kron_of_identities() {
        assert_eq!(kron(&ComplexMatrix::identity(2), &ComplexMatrix::identity(2)), ComplexMatrix::identity(4));
    }

    #[test]
    fn kron_matches_index_formula() {
        let p0 = ComplexMatrix::real(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(kron(&sigma_z(), &p0), ComplexMatrix::diag_real(&[1.0, 0.0, -1.0, 0.0]));

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_matrix(&mut rng, 2, 3);
        let b = random_matrix(&mut rng, 3, 2);
        let k = kron(&a, &b);
        assert_eq!((k.rows(), k.cols()), (6, 6));
        for (i, j, kk, l) in [(0, 0, 0, 0), (1, 2, 2, 1), (0, 1, 1, 0), (1, 0, 2, 1)] {
            assert_eq!(k[(i * 3 + kk, j * 2 + l)], a[(i, j)] * b[(kk, l)]);
        }
    }

    #[test]
    fn partial_trace_of_product_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_matrix(&mut rng, 2, 2);
        let b = random_matrix(&mut rng, 3, 3);
        let shape = SubsystemShape::new(vec![("A".into(), 2), ("B".into(), 3)]).unwrap();
        let x = kron(&a, &b);
        let ra = partial_trace(&x, &shape, &["A".into()]).unwrap();
        assert!((&ra - &a.scale(b.trace())).max_abs() < 1e-12);
        let rb = partial_trace(&x, &shape, &["B".into()]).unwrap();
        assert!((&rb - &b.scale(a.trace())).max_abs() < 1e-12);
    }

    #[test]
    fn maximally_entangled_marginal() {
        let s = 0.5_f64.sqrt();
        let omega = ComplexMatrix::column(&[c(s, 0.0), ZERO, ZERO, c(s, 0.0)]);
        let rho = ComplexMatrix::projector(&omega);
        let shape = SubsystemShape::anonymous(&[2, 2]);
        let r = partial_trace(&rho, &shape, &["0".into()]).unwrap();
        assert!((&r - &ComplexMatrix::identity(2).scale_real(0.5)).max_abs() < 1e-15);
    }

    #[test]
    fn partial_trace_middle_factor_against_index_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dims = [2, 3, 2];
        let x = random_matrix(&mut rng, 12, 12);
        let shape = SubsystemShape::anonymous(&dims);
        let r = partial_trace(&x, &shape, &["0".into(), "2".into()]).unwrap();
        // brute force: sum over the middle index
        for a in 0..2 {
            for b in 0..2 {
                for a2 in 0..2 {
                    for b2 in 0..2 {
                        let mut acc = ZERO;
                        for m in 0..3 {
                            acc += x[(a * 6 + m * 2 + b, a2 * 6 + m * 2 + b2)];
                        }
                        assert!((r[(a * 2 + b, a2 * 2 + b2)] - acc).norm() < 1e-13);
                    }
                }
            }
        }
        assert!((r.trace() - x.trace()).norm() < 1e-12);
    }

    #[test]
    fn unknown_label_is_an_error() {
        let shape = SubsystemShape::anonymous(&[2, 2]);
        let x = ComplexMatrix::identity(4);
        assert_eq!(
            partial_trace(&x, &shape, &["zz".into()]).unwrap_err(),
            Error::UnknownSubsystem("zz".into())
        );
        assert!(partial_transpose(&x, &shape, &Role::RetrievalIn).is_err());
    }

    #[test]
    fn duplicate_labels_rejected() {
        assert!(SubsystemShape::new(vec![(Role::RetrievalIn, 2), (Role::RetrievalIn, 2)]).is_err());
    }

    #[test]
    fn partial_transpose_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_matrix(&mut rng, 3, 3);
        let single = SubsystemShape::anonymous(&[3]);
        assert_eq!(partial_transpose(&a, &single, &"0".into()).unwrap(), a.transpose());

        let b = random_matrix(&mut rng, 2, 2);
        let shape = SubsystemShape::anonymous(&[3, 2]);
        let pt = partial_transpose(&kron(&a, &b), &shape, &"1".into()).unwrap();
        assert!((&pt - &kron(&a, &b.transpose())).max_abs() < 1e-15);

        let s = 0.5_f64.sqrt();
        let omega = ComplexMatrix::column(&[c(s, 0.0), ZERO, ZERO, c(s, 0.0)]);
        let pt = partial_transpose(&ComplexMatrix::projector(&omega), &SubsystemShape::anonymous(&[2, 2]), &"1".into())
            .unwrap();
        let swap = ComplexMatrix::real(4, 4, &[1., 0., 0., 0., 0., 0., 1., 0., 0., 1., 0., 0., 0., 0., 0., 1.]);
        assert!((&pt - &swap.scale_real(0.5)).max_abs() < 1e-15);
        let e = eigh(&pt).unwrap();
        assert!((e.max() - 0.5).abs() < 1e-12 && (e.min() + 0.5).abs() < 1e-12);
    }

    #[test]
    fn vectorize_conventions() {
        let v = vectorize(&ComplexMatrix::identity(2));
        assert_eq!(v, ComplexMatrix::column(&[ONE, ZERO, ZERO, ONE]));
        let ket01 = ComplexMatrix::ket_bra(&ComplexMatrix::basis(2, 0), &ComplexMatrix::basis(2, 1));
        assert_eq!(vectorize(&ket01), kron(&ComplexMatrix::basis(2, 0), &ComplexMatrix::basis(2, 1)));
        let m = ComplexMatrix::real(2, 3, &[1., 2., 3., 4., 5., 6.]);
        assert_eq!(unvectorize(&vectorize(&m), 2, 3).unwrap(), m);
    }

    #[test]
    fn eigh_pauli() {
        let e = eigh(&sigma_z()).unwrap();
        assert_eq!(e.values, vec![1.0, -1.0]);
        let sx = ComplexMatrix::real(2, 2, &[0., 1., 1., 0.]);
        let e = eigh(&sx).unwrap();
        assert!((e.values[0] - 1.0).abs() < 1e-14 && (e.values[1] + 1.0).abs() < 1e-14);
        let s = 0.5_f64.sqrt();
        // |⟨+|v0⟩| = 1 up to phase
        let overlap = e.vectors[(0, 0)] * s + e.vectors[(1, 0)] * s;
        assert!((overlap.norm() - 1.0).abs() < 1e-12);
        let overlap = e.vectors[(0, 1)] * s - e.vectors[(1, 1)] * s;
        assert!((overlap.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eigh_reconstructs_random_hermitian() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in [1, 3, 8, 17] {
            let h = random_hermitian(&mut rng, n);
            let e = eigh(&h).unwrap();
            assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
            let scale = h.frobenius_norm();
            assert!((&e.reconstruct() - &h).max_abs() <= 1e-9 * scale);
            let sum: f64 = e.values.iter().sum();
            assert!((sum - h.trace().re).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn eigh_rejects_non_hermitian() {
        let x = ComplexMatrix::real(2, 2, &[0., 1., 0., 0.]);
        assert!(matches!(eigh(&x), Err(Error::NotHermitian { .. })));
    }

    #[test]
    fn pinv_basic_cases() {
        assert!((&pinv(&ComplexMatrix::identity(3), 1e-12).unwrap() - &ComplexMatrix::identity(3)).max_abs() < 1e-14);
        let p = pinv(&ComplexMatrix::diag_real(&[2.0, 0.0]), 1e-12).unwrap();
        assert!((&p - &ComplexMatrix::diag_real(&[0.5, 0.0])).max_abs() < 1e-14);
    }

    #[test]
    fn pinv_satisfies_penrose_identities_on_singular_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let b = random_matrix(&mut rng, 6, 4);
        let g = b.matmul(&b.adjoint()).unwrap().hermitian_part(); // rank 4
        let gp = pinv(&g, 1e-10).unwrap();
        let scale = g.frobenius_norm();
        assert!((&(&(&g * &gp) * &g) - &g).max_abs() < 1e-8 * scale);
        assert!((&(&(&gp * &g) * &gp) - &gp).max_abs() < 1e-8 * gp.frobenius_norm().max(1.0));
        assert_eq!(numerical_rank(&g, 1e-10).unwrap(), 4);
    }

    #[test]
    fn embed_and_permute_agree_with_kron() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_matrix(&mut rng, 2, 2);
        let b = random_matrix(&mut rng, 3, 3);
        let shape = SubsystemShape::new(vec![("A".into(), 2), ("B".into(), 3)]).unwrap();
        let e = embed_with_identity(&b, &shape, &["B".into()]).unwrap();
        assert_eq!(e, kron(&ComplexMatrix::identity(2), &b));
        let (p, pshape) = permute_subsystems(&kron(&a, &b), &shape, &["B".into(), "A".into()]).unwrap();
        assert_eq!(pshape.dims(), vec![3, 2]);
        assert!((&p - &kron(&b, &a)).max_abs() < 1e-15);
    }

    #[test]
    fn contract_second_matches_dense_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_matrix(&mut rng, 6, 6);
        let b = random_matrix(&mut rng, 3, 3);
        let shape = SubsystemShape::anonymous(&[2, 3]);
        let dense = partial_trace(&(&kron(&ComplexMatrix::identity(2), &b) * &x), &shape, &["0".into()]).unwrap();
        let fast = contract_second(&x, 2, &b).unwrap();
        assert!((&dense - &fast).max_abs() < 1e-13);
    }

    #[test]
    fn dump_round_trip() {
        let m = ComplexMatrix::from_fn(2, 3, |r, c| C64::new(r as f64, c as f64 - 0.5));
        let json = serde_json::to_string(&m).unwrap();
        assert!(json.contains("\"re\"") && json.contains("\"rows\":2"));
        let back: ComplexMatrix = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
        assert!(serde_json::from_str::<ComplexMatrix>(r#"{"rows":2,"cols":2,"re":[1],"im":[0]}"#).is_err());
    }

    fn int_matrix(rows: usize, cols: usize) -> impl Strategy<Value = ComplexMatrix> {
        proptest::collection::vec((-5i32..=5, -5i32..=5), rows * cols).prop_map(move |v| {
            ComplexMatrix::from_vec(rows, cols, v.into_iter().map(|(a, b)| C64::new(a as f64, b as f64)).collect())
                .unwrap()
        })
    }

    proptest! {
        #[test]
        fn kron_is_associative(a in int_matrix(2, 2), b in int_matrix(2, 3), cc in int_matrix(3, 2)) {
            prop_assert_eq!(kron(&kron(&a, &b), &cc), kron(&a, &kron(&b, &cc)));
        }

        #[test]
        fn vectorize_is_linear(a in int_matrix(2, 3), b in int_matrix(2, 3), al in -3.0f64..3.0, be in -3.0f64..3.0) {
            let lhs = vectorize(&(&a.scale_real(al) + &b.scale_real(be)));
            let rhs = &vectorize(&a).scale_real(al) + &vectorize(&b).scale_real(be);
            prop_assert!((&lhs - &rhs).max_abs() < 1e-12);
            prop_assert!((vectorize(&a).frobenius_norm() - a.frobenius_norm()).abs() < 1e-12);
        }

        #[test]
        fn partial_transpose_is_an_involution(x in int_matrix(6, 6)) {
            let shape = SubsystemShape::anonymous(&[2, 3]);
            for lbl in ["0", "1"] {
                let twice = partial_transpose(&partial_transpose(&x, &shape, &lbl.into()).unwrap(), &shape, &lbl.into()).unwrap();
                prop_assert_eq!(&twice, &x);
            }
        }

        #[test]
        fn partial_trace_of_kron(a in int_matrix(2, 2), b in int_matrix(3, 3)) {
            let shape = SubsystemShape::anonymous(&[2, 3]);
            let x = kron(&a, &b);
            let ra = partial_trace(&x, &shape, &["0".into()]).unwrap();
            prop_assert!((&ra - &a.scale(b.trace())).max_abs() < 1e-12);
            let rb = partial_trace(&x, &shape, &["1".into()]).unwrap();
            prop_assert!((&rb - &b.scale(a.trace())).max_abs() < 1e-12);
        }
    }
}
