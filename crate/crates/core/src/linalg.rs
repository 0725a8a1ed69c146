//! Small dense symmetric linear algebra: log-determinants, SPD inverses, and
//! the rank-one downdate identities behind the backward-stepwise selector.
//!
//! Determinants are carried as natural logs throughout; the downdates are
//! multiplicative, so a run of thousands of removals stays additive in
//! log-space instead of overflowing or underflowing.

use crate::error::{Error, Result};

/// Factorization pivots at or below this floor are treated as "not positive
/// definite". Standardized covariates keep entries O(1), so the floor is far
/// below any healthy pivot.
pub const PIVOT_FLOOR: f64 = 1e-12;

/// Dense symmetric matrix stored as a packed lower triangle, so symmetry is
/// structural rather than a property to be maintained.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    // Row-major packed lower triangle: (i, j) with j <= i lives at i*(i+1)/2 + j.
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "SymMatrix requires dim >= 1");
        Self {
            dim,
            data: vec![0.0; dim * (dim + 1) / 2],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m.set(i, i, d);
        }
        m
    }

    /// Builds from a callback evaluated on the lower triangle (i >= j).
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..=i {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    #[inline]
    fn idx(i: usize, j: usize) -> usize {
        debug_assert!(j <= i);
        i * (i + 1) / 2 + j
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        self.data[Self::idx(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        self.data[Self::idx(i, j)] = v;
    }

    /// y = A x
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// y = A x without allocating; `out` must have length `dim`.
    pub fn mul_vec_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(out.len(), self.dim);
        out.fill(0.0);
        let mut p = 0;
        for i in 0..self.dim {
            for j in 0..i {
                let a = self.data[p];
                out[i] += a * x[j];
                out[j] += a * x[i];
                p += 1;
            }
            out[i] += self.data[p] * x[i];
            p += 1;
        }
    }

    /// xᵀ A x
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        let mut acc = 0.0;
        let mut p = 0;
        for i in 0..self.dim {
            let xi = x[i];
            for j in 0..i {
                acc += 2.0 * self.data[p] * xi * x[j];
                p += 1;
            }
            acc += self.data[p] * xi * xi;
            p += 1;
        }
        acc
    }

    /// A += w · x xᵀ
    pub fn add_outer(&mut self, x: &[f64], w: f64) {
        debug_assert_eq!(x.len(), self.dim);
        let mut p = 0;
        for i in 0..self.dim {
            for j in 0..=i {
                self.data[p] += w * x[i] * x[j];
                p += 1;
            }
        }
    }

    /// A += c · B
    pub fn add_scaled(&mut self, other: &SymMatrix, c: f64) {
        assert_eq!(self.dim, other.dim);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for a in &mut self.data {
            *a *= c;
        }
    }

    /// ‖A − B‖²_F, counting both triangles.
    pub fn frobenius_dist_sq(&self, other: &SymMatrix) -> f64 {
        assert_eq!(self.dim, other.dim);
        let mut acc = 0.0;
        let mut p = 0;
        for i in 0..self.dim {
            for j in 0..=i {
                let d = self.data[p] - other.data[p];
                acc += if i == j { d * d } else { 2.0 * d * d };
                p += 1;
            }
        }
        acc
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.get(i, j)).collect())
            .collect()
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cached factorization products for one SPD matrix: its log-determinant and
/// its inverse. This is the pair the downdate recursions keep in sync.
#[derive(Clone, Debug)]
pub struct SpdState {
    pub log_det: f64,
    pub inverse: SymMatrix,
}

impl SpdState {
    /// Factorizes once and derives both members.
    pub fn from_matrix(a: &SymMatrix) -> Result<Self> {
        let chol = cholesky(a, PIVOT_FLOOR)?;
        Ok(Self {
            log_det: chol.log_det(),
            inverse: chol.inverse(),
        })
    }
}

/// Packed lower-triangular Cholesky factor L with A = L Lᵀ.
pub(crate) struct Cholesky {
    dim: usize,
    data: Vec<f64>,
}

impl Cholesky {
    pub(crate) fn log_det(&self) -> f64 {
        // det(A) = det(L)², so ln det(A) = 2 Σ ln L_jj.
        let mut acc = 0.0;
        for j in 0..self.dim {
            acc += self.data[SymMatrix::idx(j, j)].ln();
        }
        2.0 * acc
    }

    /// A⁻¹ = L⁻ᵀ L⁻¹, assembled straight into packed symmetric storage.
    pub(crate) fn inverse(&self) -> SymMatrix {
        let n = self.dim;
        // Forward-substitute for L⁻¹ (lower triangular).
        let mut linv = vec![0.0; self.data.len()];
        for i in 0..n {
            let lii = self.data[SymMatrix::idx(i, i)];
            linv[SymMatrix::idx(i, i)] = 1.0 / lii;
            for j in 0..i {
                let mut s = 0.0;
                for k in j..i {
                    s += self.data[SymMatrix::idx(i, k)] * linv[SymMatrix::idx(k, j)];
                }
                linv[SymMatrix::idx(i, j)] = -s / lii;
            }
        }
        // (A⁻¹)_{ij} = Σ_{k ≥ max(i,j)} (L⁻¹)_{ki} (L⁻¹)_{kj}
        SymMatrix::from_fn(n, |i, j| {
            let mut s = 0.0;
            for k in i..n {
                s += linv[SymMatrix::idx(k, i)] * linv[SymMatrix::idx(k, j)];
            }
            s
        })
    }

    /// y = L z, for a packed lower-triangular factor.
    pub(crate) fn mul_vec(&self, z: &[f64]) -> Vec<f64> {
        let n = self.dim;
        debug_assert_eq!(z.len(), n);
        (0..n)
            .map(|i| (0..=i).map(|j| self.data[SymMatrix::idx(i, j)] * z[j]).sum())
            .collect()
    }
}

/// Cholesky factorization with an explicit pivot floor defining positive
/// definiteness operationally.
pub(crate) fn cholesky(a: &SymMatrix, floor: f64) -> Result<Cholesky> {
    let n = a.dim();
    let mut l = vec![0.0; n * (n + 1) / 2];
    for j in 0..n {
        let mut d = a.get(j, j);
        for k in 0..j {
            let ljk = l[SymMatrix::idx(j, k)];
            d -= ljk * ljk;
        }
        if d <= floor {
            return Err(Error::NotPositiveDefinite {
                column: j,
                pivot: d,
                floor,
            });
        }
        let ljj = d.sqrt();
        l[SymMatrix::idx(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l[SymMatrix::idx(i, k)] * l[SymMatrix::idx(j, k)];
            }
            l[SymMatrix::idx(i, j)] = s / ljj;
        }
    }
    Ok(Cholesky { dim: n, data: l })
}

/// ln det(A) for symmetric positive definite A.
pub fn log_det_spd(a: &SymMatrix) -> Result<f64> {
    Ok(cholesky(a, PIVOT_FLOOR)?.log_det())
}

/// A⁻¹ for symmetric positive definite A.
pub fn inverse_spd(a: &SymMatrix) -> Result<SymMatrix> {
    Ok(cholesky(a, PIVOT_FLOOR)?.inverse())
}

/// ln det(A − v vᵀ) from the cached state of A, by the matrix determinant
/// lemma: det(A − v vᵀ) = det(A) · (1 − vᵀ A⁻¹ v).
pub fn downdate_log_det(state: &SpdState, v: &[f64]) -> Result<f64> {
    let q = state.inverse.quad_form(v);
    if q >= 1.0 - PIVOT_FLOOR {
        return Err(Error::RankCollapse { q });
    }
    Ok(state.log_det + (1.0 - q).ln())
}

/// (A − v vᵀ)⁻¹ from the cached state of A, by the Sherman–Morrison formula:
/// (A − v vᵀ)⁻¹ = A⁻¹ + (A⁻¹ v)(A⁻¹ v)ᵀ / (1 − vᵀ A⁻¹ v).
///
/// Packed symmetric storage makes the (B + Bᵀ)/2 re-symmetrization implicit:
/// the update writes each unordered entry exactly once.
pub fn downdate_inverse(state: &SpdState, v: &[f64]) -> Result<SymMatrix> {
    let u = state.inverse.mul_vec(v);
    let q: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    if q >= 1.0 - PIVOT_FLOOR {
        return Err(Error::RankCollapse { q });
    }
    let mut out = state.inverse.clone();
    out.add_outer(&u, 1.0 / (1.0 - q));
    Ok(out)
}

/// ln det(XᵀX / count − x̄ x̄ᵀ) given the state of XᵀX, its row mean, and the
/// row count, via
/// det(XᵀX/count − x̄x̄ᵀ) = count^(−k) · det(XᵀX) · (1 − count · x̄ᵀ(XᵀX)⁻¹x̄).
pub fn centered_scatter_log_det(state: &SpdState, mean: &[f64], count: usize) -> Result<f64> {
    let dim = state.inverse.dim();
    debug_assert!(count > dim, "centered scatter needs count >= dim + 1");
    let r = count as f64 * state.inverse.quad_form(mean);
    if r >= 1.0 - PIVOT_FLOOR {
        return Err(Error::DegenerateCentering { r });
    }
    Ok(-(dim as f64) * (count as f64).ln() + state.log_det + (1.0 - r).ln())
}
