//! Shared oracles for the integration suites: dense determinants and
//! inverses by Gaussian elimination, independent of the packed Cholesky
//! path they check, plus random-table builders.
#![allow(dead_code, clippy::needless_range_loop)]

use dsd::dataset::{standardize, CovariateTable};
use dsd::linalg::SymMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Determinant by Gaussian elimination with partial pivoting.
pub fn gauss_det(a: &[Vec<f64>]) -> f64 {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut det = 1.0;
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap())
            .unwrap();
        if m[pivot_row][col] == 0.0 {
            return 0.0;
        }
        if pivot_row != col {
            m.swap(pivot_row, col);
            det = -det;
        }
        det *= m[col][col];
        for row in col + 1..n {
            let factor = m[row][col] / m[col][col];
            for j in col..n {
                m[row][j] -= factor * m[col][j];
            }
        }
    }
    det
}

/// Inverse by Gauss–Jordan elimination with partial pivoting.
pub fn gauss_jordan_inverse(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut ext = row.clone();
            ext.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            ext
        })
        .collect();
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap())
            .unwrap();
        m.swap(pivot_row, col);
        let pivot = m[col][col];
        assert!(pivot != 0.0, "singular matrix in Gauss-Jordan oracle");
        for j in 0..2 * n {
            m[col][j] /= pivot;
        }
        for row in 0..n {
            if row != col {
                let factor = m[row][col];
                for j in 0..2 * n {
                    m[row][j] -= factor * m[col][j];
                }
            }
        }
    }
    m.iter().map(|row| row[n..].to_vec()).collect()
}

pub fn sym_to_dense(a: &SymMatrix) -> Vec<Vec<f64>> {
    a.to_dense()
}

/// Random raw table with entries in (−2, 2).
pub fn random_table(rng: &mut impl Rng, n: usize, k: usize) -> CovariateTable {
    let values: Vec<f64> = (0..n * k).map(|_| rng.random_range(-2.0..2.0)).collect();
    CovariateTable::new(
        (0..n).map(|i| format!("p{i:04}")).collect(),
        (1..=k).map(|j| format!("x{j}")).collect(),
        values,
    )
    .unwrap()
}

pub fn random_standardized(rng: &mut impl Rng, n: usize, k: usize) -> CovariateTable {
    standardize(&random_table(rng, n, k)).unwrap().0
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Relative closeness against a scale floor of 1.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

/// Direct centered-scatter log-determinant of a row subset, through the
/// Gaussian-elimination determinant.
pub fn direct_scatter_log_det(table: &CovariateTable, rows: &[usize]) -> f64 {
    let k = table.n_covariates();
    let m = rows.len() as f64;
    let mut gram = vec![vec![0.0; k]; k];
    let mut mean = vec![0.0; k];
    for &r in rows {
        let x = table.row(r);
        for i in 0..k {
            mean[i] += x[i] / m;
            for j in 0..k {
                gram[i][j] += x[i] * x[j];
            }
        }
    }
    let scatter: Vec<Vec<f64>> = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| gram[i][j] / m - mean[i] * mean[j])
                .collect()
        })
        .collect();
    gauss_det(&scatter).ln()
}

/// All size-`take` index subsets of 0..n, for exhaustive oracles.
pub fn subsets(n: usize, take: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(take);
    fn recurse(start: usize, n: usize, take: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if current.len() == take {
            out.push(current.clone());
            return;
        }
        let needed = take - current.len();
        for i in start..=n - needed {
            current.push(i);
            recurse(i + 1, n, take, current, out);
            current.pop();
        }
    }
    recurse(0, n, take, &mut current, &mut out);
    out
}
