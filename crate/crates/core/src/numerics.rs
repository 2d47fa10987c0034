//! Minimal dense symmetric linear algebra: SPD solves via Cholesky, repeated
//! application of `(I - eta*H)` to vectors, truncated Neumann inverses, and
//! spectral utilities. Everything is sized for desk-scale verification
//! (dimensions up to [`MAX_DIM`]), not large models.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hard cap on matrix dimension; the artifact targets small dense problems.
pub const MAX_DIM: usize = 64;

/// Relative asymmetry tolerated when constructing a [`SymMatrix`].
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Default residual tolerance of [`spd_solve`], absolute-plus-relative.
pub const SOLVE_TOL: f64 = 1e-10;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Dense symmetric real matrix, row-major storage of all `dim * dim` entries.
/// Deserialization funnels through [`SymMatrix::from_rows`], so shape,
/// finiteness, and symmetry hold for every constructed value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SymMatrixData")]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct SymMatrixData {
    dim: usize,
    data: Vec<f64>,
}

impl TryFrom<SymMatrixData> for SymMatrix {
    type Error = Error;

    fn try_from(raw: SymMatrixData) -> Result<Self> {
        SymMatrix::from_rows(raw.dim, raw.data)
    }
}

impl SymMatrix {
    /// Builds from row-major entries, symmetrizing after checking that the
    /// asymmetry is within [`SYMMETRY_TOL`] relative to the largest entry.
    pub fn from_rows(dim: usize, entries: Vec<f64>) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM || entries.len() != dim * dim {
            return Err(Error::ShapeMismatch {
                expected: dim * dim,
                got: entries.len(),
            });
        }
        if entries.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                context: "matrix entries".into(),
            });
        }
        let scale = entries.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
        let mut max_asym = 0.0f64;
        for i in 0..dim {
            for j in (i + 1)..dim {
                max_asym = max_asym.max((entries[i * dim + j] - entries[j * dim + i]).abs());
            }
        }
        if max_asym > SYMMETRY_TOL * scale {
            return Err(Error::NotSymmetric { max_asym });
        }
        let mut data = entries;
        for i in 0..dim {
            for j in (i + 1)..dim {
                let avg = 0.5 * (data[i * dim + j] + data[j * dim + i]);
                data[i * dim + j] = avg;
                data[j * dim + i] = avg;
            }
        }
        Ok(Self { dim, data })
    }

    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, 1.0)
    }

    pub fn scaled_identity(dim: usize, c: f64) -> Self {
        let mut data = vec![0.0; dim * dim];
        for i in 0..dim {
            data[i * dim + i] = c;
        }
        Self { dim, data }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    /// Draws a random symmetric matrix with exactly the given spectrum by
    /// conjugating `diag(eigs)` with a product of random Givens rotations.
    pub fn from_spectrum<R: Rng>(eigs: &[f64], rng: &mut R) -> Self {
        let dim = eigs.len();
        let mut m = Self::zeros(dim);
        for (i, e) in eigs.iter().enumerate() {
            m.data[i * dim + i] = *e;
        }
        for _ in 0..2 {
            for i in 0..dim {
                for j in (i + 1)..dim {
                    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                    m.rotate(i, j, angle);
                }
            }
        }
        // the row/column passes of each rotation round independently; pin
        // the mirror entries back to exact equality
        for i in 0..dim {
            for j in (i + 1)..dim {
                let avg = 0.5 * (m.data[i * dim + j] + m.data[j * dim + i]);
                m.data[i * dim + j] = avg;
                m.data[j * dim + i] = avg;
            }
        }
        m
    }

    /// In-place conjugation by the Givens rotation in the (i, j) plane.
    fn rotate(&mut self, i: usize, j: usize, angle: f64) {
        let (s, c) = angle.sin_cos();
        let n = self.dim;
        // rows
        for k in 0..n {
            let a = self.data[i * n + k];
            let b = self.data[j * n + k];
            self.data[i * n + k] = c * a - s * b;
            self.data[j * n + k] = s * a + c * b;
        }
        // columns
        for k in 0..n {
            let a = self.data[k * n + i];
            let b = self.data[k * n + j];
            self.data[k * n + i] = c * a - s * b;
            self.data[k * n + j] = s * a + c * b;
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn set_sym(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
        self.data[j * self.dim + i] = v;
    }

    /// Matrix-vector product `A v`.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(v)?;
        let n = self.dim;
        let out = (0..n)
            .map(|i| dot(&self.data[i * n..(i + 1) * n], v))
            .collect();
        Ok(out)
    }

    /// `self + c * other`, used to assemble weighted Hessians.
    pub fn add_scaled(&mut self, other: &SymMatrix, c: f64) -> Result<()> {
        if other.dim != self.dim {
            return Err(Error::ShapeMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
        Ok(())
    }

    pub fn operator_norm_upper(&self) -> f64 {
        // Gershgorin row-sum bound; exact enough for residual scaling.
        (0..self.dim)
            .map(|i| self.data[i * self.dim..(i + 1) * self.dim].iter().map(|x| x.abs()).sum())
            .fold(0.0, f64::max)
    }

    /// Symmetric positive definite factorization `A = L L^T`.
    pub fn cholesky(&self) -> Result<CholeskyFactor> {
        let n = self.dim;
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut s = self.data[i * n + j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if s <= 0.0 || !s.is_finite() {
                        return Err(Error::NotSpd { pivot: i });
                    }
                    l[i * n + i] = s.sqrt();
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        Ok(CholeskyFactor { dim: n, l })
    }

    fn check_dim(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::ShapeMismatch {
                expected: self.dim,
                got: v.len(),
            });
        }
        Ok(())
    }
}

/// Lower-triangular Cholesky factor; solves reuse one factorization.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    dim: usize,
    l: Vec<f64>,
}

impl CholeskyFactor {
    /// Solves `A x = b` by forward then backward substitution.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.dim {
            return Err(Error::ShapeMismatch {
                expected: self.dim,
                got: b.len(),
            });
        }
        let n = self.dim;
        let mut y = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                y[i] -= self.l[i * n + k] * y[k];
            }
            y[i] /= self.l[i * n + i];
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                y[i] -= self.l[k * n + i] * y[k];
            }
            y[i] /= self.l[i * n + i];
        }
        Ok(y)
    }
}

/// Certified bounds on the spectrum of an associated matrix: every eigenvalue
/// lies in `[lower, upper]` with `lower > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumBounds {
    pub lower: f64,
    pub upper: f64,
}

impl SpectrumBounds {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(lower > 0.0 && upper >= lower && upper.is_finite()) {
            return Err(Error::BadGeneratorParams {
                detail: format!("spectrum bounds must satisfy 0 < lower <= upper, got [{lower}, {upper}]"),
            });
        }
        Ok(Self { lower, upper })
    }

    /// Largest admissible step size for `(I - eta*H)` to stay a contraction.
    pub fn eta_limit(&self) -> f64 {
        1.0 / self.upper
    }

    pub fn check_eta(&self, eta: f64) -> Result<()> {
        if !(eta > 0.0 && eta < self.eta_limit()) {
            return Err(Error::StepSize {
                eta,
                limit: self.eta_limit(),
            });
        }
        Ok(())
    }
}

/// Solves `A x = b` for SPD `A`.
pub fn spd_solve(a: &SymMatrix, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != a.dim() {
        return Err(Error::ShapeMismatch {
            expected: a.dim(),
            got: b.len(),
        });
    }
    a.cholesky()?.solve(b)
}

/// Computes `(I - eta*H)^power v`.
pub fn contraction_apply(
    h: &SymMatrix,
    bounds: &SpectrumBounds,
    eta: f64,
    v: &[f64],
    power: usize,
) -> Result<Vec<f64>> {
    bounds.check_eta(eta)?;
    let mut out = v.to_vec();
    for _ in 0..power {
        let hv = h.apply(&out)?;
        for (o, hv_i) in out.iter_mut().zip(&hv) {
            *o -= eta * hv_i;
        }
    }
    Ok(out)
}

/// Truncated Neumann series `eta * sum_{i=0}^{terms-1} (I - eta*H)^i v`,
/// which approaches `H^{-1} v` as `terms` grows; the tail error in operator
/// norm is at most `(1 - eta*lower)^terms / lower`.
pub fn neumann_inverse_apply(
    h: &SymMatrix,
    bounds: &SpectrumBounds,
    eta: f64,
    v: &[f64],
    terms: usize,
) -> Result<Vec<f64>> {
    bounds.check_eta(eta)?;
    if terms == 0 {
        return Err(Error::BadGeneratorParams {
            detail: "neumann_inverse_apply requires at least one term".into(),
        });
    }
    let mut acc = v.to_vec();
    let mut sum = v.to_vec();
    for _ in 1..terms {
        let hv = h.apply(&acc)?;
        for (a, hv_i) in acc.iter_mut().zip(&hv) {
            *a -= eta * hv_i;
        }
        for (s, a) in sum.iter_mut().zip(&acc) {
            *s += a;
        }
    }
    for s in sum.iter_mut() {
        *s *= eta;
    }
    Ok(sum)
}

/// All eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
/// Intended for validation and test oracles on small dimensions.
pub fn sym_eigenvalues(a: &SymMatrix) -> Vec<f64> {
    let n = a.dim();
    let mut m = a.clone();
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                off = off.max(m.get(i, j).abs());
            }
        }
        let scale = (0..n).map(|i| m.get(i, i).abs()).fold(1.0, f64::max);
        if off <= 1e-14 * scale {
            break;
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let apq = m.get(i, j);
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = m.get(i, i);
                let aqq = m.get(j, j);
                // angle annihilating the (i, j) entry of G * M * G^T
                let angle = 0.5 * (2.0 * apq).atan2(aqq - app);
                m.rotate(i, j, angle);
                m.set_sym(i, j, 0.0);
            }
        }
    }
    let mut eigs: Vec<f64> = (0..n).map(|i| m.get(i, i)).collect();
    eigs.sort_by(|x, y| x.partial_cmp(y).unwrap());
    eigs
}
