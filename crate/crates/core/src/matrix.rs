//! Dense complex matrices: Hermitian and rectangular carriers, spectral
//! norms, Hermitian dilation, effective rank, eigenvalue clamping and the
//! Löwner order.
//!
//! All eigensolves go through `nalgebra`'s symmetric eigendecomposition.
//! Matrices whose imaginary parts are exactly zero take the real path,
//! which is markedly cheaper and yields identical results.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub use nalgebra::Complex;

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;

/// Absolute asymmetry tolerated (and then symmetrized away) on construction.
pub const HERMITIAN_TOL: f64 = 1e-12;

/// Relative factor of the default PSD tolerance, `1e-9 * ||B||`.
pub const PSD_REL_TOL: f64 = 1e-9;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

fn max_asymmetry(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

fn all_finite(m: &CMatrix) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

fn is_real(m: &CMatrix) -> bool {
    m.iter().all(|z| z.im == 0.0)
}

fn real_part(m: &CMatrix) -> DMatrix<f64> {
    m.map(|z| z.re)
}

fn symmetrize(m: &mut CMatrix) {
    let n = m.nrows();
    for i in 0..n {
        m[(i, i)] = C64::new(m[(i, i)].re, 0.0);
        for j in (i + 1)..n {
            let avg = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
            m[(i, j)] = avg;
            m[(j, i)] = avg.conj();
        }
    }
}

/// Eigenvalues of a Hermitian matrix stored as a raw complex matrix, ascending.
///
/// The caller guarantees Hermitian structure; only the lower triangle is read
/// by the underlying solver.
pub(crate) fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    let n = m.nrows();
    let mut values: Vec<f64> = match n {
        0 => Vec::new(),
        1 => vec![m[(0, 0)].re],
        2 => {
            let a = m[(0, 0)].re;
            let d = m[(1, 1)].re;
            let b = m[(1, 0)].norm();
            let mean = 0.5 * (a + d);
            let radius = (0.25 * (a - d) * (a - d) + b * b).sqrt();
            vec![mean - radius, mean + radius]
        }
        _ if is_real(m) => real_part(m).symmetric_eigenvalues().iter().copied().collect(),
        _ => m.clone().symmetric_eigenvalues().iter().copied().collect(),
    };
    values.sort_by(|x, y| x.total_cmp(y));
    values
}

/// Spectral norm of a raw Hermitian matrix (largest absolute eigenvalue).
pub(crate) fn hermitian_norm(m: &CMatrix) -> f64 {
    let values = hermitian_eigenvalues(m);
    match (values.first(), values.last()) {
        (Some(lo), Some(hi)) => lo.abs().max(hi.abs()),
        _ => 0.0,
    }
}

/// Largest singular value of an arbitrary complex matrix.
///
/// Fails with an invalid-input error when an entry is not finite.
pub fn spectral_norm(m: &CMatrix) -> Result<f64> {
    if !all_finite(m) {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    if m.is_empty() {
        return Ok(0.0);
    }
    if m.is_square() && max_asymmetry(m) == 0.0 {
        return Ok(hermitian_norm(m));
    }
    Ok(singular_norm(m))
}

fn singular_norm(m: &CMatrix) -> f64 {
    let sv = if is_real(m) {
        real_part(m).singular_values()
    } else {
        m.clone().singular_values()
    };
    sv.iter().copied().fold(0.0, f64::max)
}

/// Spectral decomposition `B = U diag(values) U*` with ascending eigenvalues.
#[derive(Debug, Clone)]
pub struct Eigen {
    pub values: Vec<f64>,
    pub vectors: CMatrix,
}

/// A self-adjoint `d × d` complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix {
    data: CMatrix,
}

impl HermitianMatrix {
    /// Validates squareness, finiteness and self-adjointness (asymmetry at most
    /// [`HERMITIAN_TOL`]); the stored matrix is exactly symmetrized.
    pub fn new(mut data: CMatrix) -> Result<Self> {
        if data.nrows() == 0 {
            return Err(Error::InvalidInput("matrix must have dimension >= 1".into()));
        }
        if !data.is_square() {
            return Err(Error::DimensionMismatch {
                expected: data.nrows(),
                actual: data.ncols(),
            });
        }
        if !all_finite(&data) {
            return Err(Error::InvalidInput("matrix has non-finite entries".into()));
        }
        let asymmetry = max_asymmetry(&data);
        if asymmetry > HERMITIAN_TOL {
            return Err(Error::NotHermitian { asymmetry });
        }
        symmetrize(&mut data);
        Ok(Self { data })
    }

    /// Symmetrizes without the asymmetry check. Used for algebraic results that
    /// are Hermitian in exact arithmetic (sums, `AB + BA`, `Q`-averages).
    pub(crate) fn from_hermitian_part(mut data: CMatrix) -> Self {
        symmetrize(&mut data);
        Self { data }
    }

    pub fn from_real(m: DMatrix<f64>) -> Result<Self> {
        Self::new(m.map(|x| C64::new(x, 0.0)))
    }

    pub fn from_real_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidInput("rows must form a square matrix".into()));
        }
        Self::from_real(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
    }

    pub fn diag(values: &[f64]) -> Self {
        let d = values.len();
        let mut data = CMatrix::zeros(d, d);
        for (i, v) in values.iter().enumerate() {
            data[(i, i)] = C64::new(*v, 0.0);
        }
        Self { data }
    }

    pub fn identity(d: usize) -> Self {
        Self::diag(&vec![1.0; d])
    }

    pub fn zeros(d: usize) -> Self {
        Self {
            data: CMatrix::zeros(d, d),
        }
    }

    /// Rank-one `v v^T` for a real vector.
    pub fn outer_real(v: &[f64]) -> Self {
        let d = v.len();
        Self {
            data: CMatrix::from_fn(d, d, |i, j| C64::new(v[i] * v[j], 0.0)),
        }
    }

    /// Rank-one `v v*` for a complex vector.
    pub fn outer(v: &DVector<C64>) -> Self {
        Self::from_hermitian_part(v * v.adjoint())
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn as_matrix(&self) -> &CMatrix {
        &self.data
    }

    pub fn into_matrix(self) -> CMatrix {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.data[(i, j)]
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.data[(i, i)].re).sum()
    }

    pub fn is_real(&self) -> bool {
        is_real(&self.data)
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        hermitian_eigenvalues(&self.data)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    pub fn max_eigenvalue(&self) -> f64 {
        *self.eigenvalues().last().expect("dimension >= 1")
    }

    /// Full spectral decomposition, eigenvalues ascending.
    pub fn eigen(&self) -> Eigen {
        let (values, vectors) = if self.is_real() {
            let e = real_part(&self.data).symmetric_eigen();
            let vectors = e.eigenvectors.map(|x| C64::new(x, 0.0));
            (e.eigenvalues.iter().copied().collect::<Vec<_>>(), vectors)
        } else {
            let e = self.data.clone().symmetric_eigen();
            (e.eigenvalues.iter().copied().collect::<Vec<_>>(), e.eigenvectors)
        };
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let sorted_values = order.iter().map(|&i| values[i]).collect();
        let sorted_vectors = CMatrix::from_fn(vectors.nrows(), order.len(), |r, c| vectors[(r, order[c])]);
        Eigen {
            values: sorted_values,
            vectors: sorted_vectors,
        }
    }

    /// Largest absolute eigenvalue.
    pub fn spectral_norm(&self) -> f64 {
        hermitian_norm(&self.data)
    }

    pub fn square(&self) -> HermitianMatrix {
        Self::from_hermitian_part(&self.data * &self.data)
    }

    /// `A B + B A`, which is self-adjoint for self-adjoint `A`, `B`.
    pub fn anticommutator(&self, other: &HermitianMatrix) -> HermitianMatrix {
        let ab = &self.data * &other.data;
        let sum = &ab + ab.adjoint();
        Self::from_hermitian_part(sum)
    }

    pub fn scale(&self, s: f64) -> HermitianMatrix {
        Self {
            data: &self.data * C64::new(s, 0.0),
        }
    }

    /// Max absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &HermitianMatrix) -> f64 {
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

impl Add for &HermitianMatrix {
    type Output = HermitianMatrix;
    fn add(self, rhs: &HermitianMatrix) -> HermitianMatrix {
        HermitianMatrix {
            data: &self.data + &rhs.data,
        }
    }
}

impl Sub for &HermitianMatrix {
    type Output = HermitianMatrix;
    fn sub(self, rhs: &HermitianMatrix) -> HermitianMatrix {
        HermitianMatrix {
            data: &self.data - &rhs.data,
        }
    }
}

impl Neg for &HermitianMatrix {
    type Output = HermitianMatrix;
    fn neg(self) -> HermitianMatrix {
        HermitianMatrix { data: -&self.data }
    }
}

impl Mul<f64> for &HermitianMatrix {
    type Output = HermitianMatrix;
    fn mul(self, rhs: f64) -> HermitianMatrix {
        self.scale(rhs)
    }
}

impl AddAssign<&HermitianMatrix> for HermitianMatrix {
    fn add_assign(&mut self, rhs: &HermitianMatrix) {
        self.data += &rhs.data;
    }
}

/// A `d1 × d2` complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RectMatrix {
    data: CMatrix,
}

impl RectMatrix {
    pub fn new(data: CMatrix) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::InvalidInput("rows and cols must be >= 1".into()));
        }
        if !all_finite(&data) {
            return Err(Error::InvalidInput("matrix has non-finite entries".into()));
        }
        Ok(Self { data })
    }

    pub fn from_real(m: DMatrix<f64>) -> Result<Self> {
        Self::new(m.map(|x| C64::new(x, 0.0)))
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            data: CMatrix::zeros(rows, cols),
        }
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn as_matrix(&self) -> &CMatrix {
        &self.data
    }

    pub fn into_matrix(self) -> CMatrix {
        self.data
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> RectMatrix {
        Self {
            data: self.data.adjoint(),
        }
    }

    /// Largest singular value.
    pub fn spectral_norm(&self) -> f64 {
        singular_norm(&self.data)
    }
}

impl From<HermitianMatrix> for RectMatrix {
    fn from(h: HermitianMatrix) -> Self {
        RectMatrix { data: h.data }
    }
}

/// `[[0, B], [B*, 0]]`: self-adjoint of size `d1 + d2` with `||H(B)|| = ||B||`.
pub fn hermitian_dilation(b: &RectMatrix) -> HermitianMatrix {
    let (r, c) = (b.rows(), b.cols());
    let mut data = CMatrix::zeros(r + c, r + c);
    data.view_mut((0, r), (r, c)).copy_from(&b.data);
    data.view_mut((r, 0), (c, r)).copy_from(&b.data.adjoint());
    HermitianMatrix { data }
}

/// Default PSD tolerance for `B`: `1e-9 * ||B||`.
pub fn default_psd_tol(b: &HermitianMatrix) -> f64 {
    PSD_REL_TOL * b.spectral_norm()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsdCheckResult {
    pub holds: bool,
    pub min_eigenvalue: f64,
    pub tolerance: f64,
}

impl PsdCheckResult {
    fn from_min(min_eigenvalue: f64, tolerance: f64) -> Self {
        Self {
            holds: min_eigenvalue >= -tolerance,
            min_eigenvalue,
            tolerance,
        }
    }
}

pub fn psd_check(b: &HermitianMatrix, tol: f64) -> PsdCheckResult {
    PsdCheckResult::from_min(b.min_eigenvalue(), tol)
}

/// `a ≼ b` iff the smallest eigenvalue of `b - a` is at least `-tol`.
pub fn loewner_leq(a: &HermitianMatrix, b: &HermitianMatrix, tol: f64) -> Result<PsdCheckResult> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    Ok(psd_check(&(b - a), tol))
}

/// `tr(U) / ||U||` for a nonzero PSD matrix.
pub fn effective_rank(u: &HermitianMatrix) -> Result<f64> {
    let values = u.eigenvalues();
    let top = values.last().copied().unwrap_or(0.0);
    let bottom = values[0];
    let norm = top.abs().max(bottom.abs());
    if norm == 0.0 {
        return Err(Error::Domain("effective rank of the zero matrix is undefined".into()));
    }
    if bottom < -PSD_REL_TOL * norm {
        return Err(Error::Domain(format!(
            "effective rank needs a PSD matrix (min eigenvalue {bottom:e})"
        )));
    }
    // r lies in [1, d] exactly; round-off at the 1e-16 level is clamped away.
    Ok((u.trace() / norm).clamp(1.0, u.dim() as f64))
}

/// `B ∧ a`: same eigenvectors, eigenvalues replaced by `min(λ_i, a)`.
pub fn eig_clamp(b: &HermitianMatrix, a: f64) -> HermitianMatrix {
    if a >= b.max_eigenvalue() {
        return b.clone();
    }
    let Eigen { values, vectors } = b.eigen();
    let clamped = DVector::from_iterator(values.len(), values.iter().map(|&l| C64::new(l.min(a), 0.0)));
    let scaled = CMatrix::from_fn(vectors.nrows(), vectors.ncols(), |i, j| vectors[(i, j)] * clamped[j]);
    HermitianMatrix::from_hermitian_part(scaled * vectors.adjoint())
}

// ---------------------------------------------------------------------------
// JSON: an array of rows of `[re, im]` pairs, wrapped with a `hermitian` flag.
// Bare arrays of rows and plain real numbers are accepted on input.

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(untagged)]
enum EntryRepr {
    Real(f64),
    Complex([f64; 2]),
}

impl From<EntryRepr> for C64 {
    fn from(e: EntryRepr) -> C64 {
        match e {
            EntryRepr::Real(x) => C64::new(x, 0.0),
            EntryRepr::Complex([re, im]) => C64::new(re, im),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct TaggedRepr {
    #[serde(default)]
    hermitian: bool,
    rows: Vec<Vec<EntryRepr>>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum MatrixRepr {
    Tagged(TaggedRepr),
    Bare(Vec<Vec<EntryRepr>>),
}

fn rows_to_matrix(rows: Vec<Vec<EntryRepr>>) -> std::result::Result<CMatrix, String> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err("ragged matrix rows".into());
    }
    let mut m = CMatrix::from_element(r, c, ZERO);
    for (i, row) in rows.into_iter().enumerate() {
        for (j, e) in row.into_iter().enumerate() {
            m[(i, j)] = e.into();
        }
    }
    Ok(m)
}

fn matrix_to_rows(m: &CMatrix) -> Vec<Vec<EntryRepr>> {
    (0..m.nrows())
        .map(|i| {
            (0..m.ncols())
                .map(|j| EntryRepr::Complex([m[(i, j)].re, m[(i, j)].im]))
                .collect()
        })
        .collect()
}

fn deserialize_matrix<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<CMatrix, D::Error> {
    let rows = match MatrixRepr::deserialize(d)? {
        MatrixRepr::Tagged(t) => t.rows,
        MatrixRepr::Bare(rows) => rows,
    };
    rows_to_matrix(rows).map_err(serde::de::Error::custom)
}

impl Serialize for HermitianMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        TaggedRepr {
            hermitian: true,
            rows: matrix_to_rows(&self.data),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for HermitianMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let m = deserialize_matrix(d)?;
        HermitianMatrix::new(m).map_err(serde::de::Error::custom)
    }
}

impl Serialize for RectMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        TaggedRepr {
            hermitian: false,
            rows: matrix_to_rows(&self.data),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for RectMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let m = deserialize_matrix(d)?;
        RectMatrix::new(m).map_err(serde::de::Error::custom)
    }
}
