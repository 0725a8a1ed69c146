//! Regression design matrix, Fisher information, and analytic MSE reports
//! for a treatment/control allocation over standardized covariates.
//!
//! The model has parameters θ = [δ, α, β₁..β_k, γ₁..γ_k]: intercept,
//! treatment main effect, treatment×covariate interactions, covariate main
//! effects. A control row of the design matrix is [1, −1, −x, x]; a
//! treatment row is [1, 1, x, x]. The information matrix F = (1/σ²)MᵀM is
//! assembled from its block formula in O(nk²) — the direct MᵀM product is
//! kept only as a test oracle.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::dataset::{scatter_stats, CovariateTable};
use crate::error::{Error, Result};
use crate::linalg::{dot, inverse_spd, log_det_spd, SpdState, SymMatrix};
use crate::selector::Selection;

/// Partition of a selection into control (z = −1) and treatment (z = +1)
/// halves of equal size.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Allocation {
    control_ids: Vec<String>,
    treatment_ids: Vec<String>,
}

impl Allocation {
    pub fn new(control_ids: Vec<String>, treatment_ids: Vec<String>) -> Result<Self> {
        if control_ids.is_empty() || control_ids.len() != treatment_ids.len() {
            return Err(Error::InvalidAllocation(format!(
                "groups must be nonempty and equal in size, got {} control and {} treatment",
                control_ids.len(),
                treatment_ids.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for id in control_ids.iter().chain(&treatment_ids) {
            if !seen.insert(id.as_str()) {
                return Err(Error::InvalidAllocation(format!(
                    "row id {id:?} appears in more than one slot"
                )));
            }
        }
        Ok(Self {
            control_ids,
            treatment_ids,
        })
    }

    /// n — the per-group size.
    pub fn group_size(&self) -> usize {
        self.control_ids.len()
    }

    pub fn control_ids(&self) -> &[String] {
        &self.control_ids
    }

    pub fn treatment_ids(&self) -> &[String] {
        &self.treatment_ids
    }

    /// The same partition with the group labels exchanged.
    pub fn label_swapped(&self) -> Self {
        Self {
            control_ids: self.treatment_ids.clone(),
            treatment_ids: self.control_ids.clone(),
        }
    }

    /// CSV form: columns id, group with values "control"/"treatment".
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["id", "group"])?;
        for id in &self.control_ids {
            w.write_record([id.as_str(), "control"])?;
        }
        for id in &self.treatment_ids {
            w.write_record([id.as_str(), "treatment"])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(reader);
        let mut control = Vec::new();
        let mut treatment = Vec::new();
        for record in r.records() {
            let record = record?;
            if record.len() < 2 {
                return Err(Error::InvalidAllocation(
                    "allocation CSV needs id and group columns".into(),
                ));
            }
            match record[1].trim() {
                "control" => control.push(record[0].to_string()),
                "treatment" => treatment.push(record[0].to_string()),
                other => {
                    return Err(Error::InvalidAllocation(format!(
                        "unknown group label {other:?}"
                    )))
                }
            }
        }
        Self::new(control, treatment)
    }
}

/// The (2k+2)×(2k+2) information matrix of the fitted model and its inverse
/// (the covariance of the least-squares estimates).
#[derive(Clone, Debug)]
pub struct FisherInfo {
    pub matrix: SymMatrix,
    pub inverse: SymMatrix,
    pub sigma: f64,
    group_size: usize,
    covariates: usize,
}

impl FisherInfo {
    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn covariate_count(&self) -> usize {
        self.covariates
    }
}

/// Per-parameter estimation MSEs: the diagonal of F⁻¹ in θ order.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MseReport {
    #[serde(rename = "delta")]
    pub mse_delta: f64,
    #[serde(rename = "alpha")]
    pub mse_alpha: f64,
    #[serde(rename = "beta")]
    pub mse_beta: Vec<f64>,
    #[serde(rename = "gamma")]
    pub mse_gamma: Vec<f64>,
    pub sigma: f64,
    pub n: usize,
    pub k: usize,
}

fn resolve_groups(
    allocation: &Allocation,
    table: &CovariateTable,
) -> Result<(Vec<usize>, Vec<usize>)> {
    Ok((
        table.resolve_ids(allocation.control_ids())?,
        table.resolve_ids(allocation.treatment_ids())?,
    ))
}

/// The full 2n×(2k+2) regression matrix, control rows first.
pub fn build_design_matrix(
    allocation: &Allocation,
    table: &CovariateTable,
) -> Result<Vec<Vec<f64>>> {
    if !table.is_standardized() {
        return Err(Error::UnstandardizedTable);
    }
    let (control, treatment) = resolve_groups(allocation, table)?;
    let k = table.n_covariates();
    let mut rows = Vec::with_capacity(control.len() + treatment.len());
    for &i in &control {
        let x = table.row(i);
        let mut row = Vec::with_capacity(2 * k + 2);
        row.push(1.0);
        row.push(-1.0);
        row.extend(x.iter().map(|v| -v));
        row.extend_from_slice(x);
        rows.push(row);
    }
    for &i in &treatment {
        let x = table.row(i);
        let mut row = Vec::with_capacity(2 * k + 2);
        row.push(1.0);
        row.push(1.0);
        row.extend_from_slice(x);
        row.extend_from_slice(x);
        rows.push(row);
    }
    Ok(rows)
}

/// Block assembly of F = (1/σ²)MᵀM from group sums and non-centered group
/// scatters, working directly on row indices.
pub(crate) fn fisher_information_rows(
    control: &[usize],
    treatment: &[usize],
    table: &CovariateTable,
    sigma: f64,
) -> Result<FisherInfo> {
    if !table.is_standardized() {
        return Err(Error::UnstandardizedTable);
    }
    if sigma.is_nan() || sigma <= 0.0 {
        return Err(Error::InvalidConfig("sigma must be positive".into()));
    }
    debug_assert_eq!(control.len(), treatment.len());
    let n = control.len();
    let k = table.n_covariates();
    let params = 2 * k + 2;
    // Fewer rows than parameters guarantees a singular F; the square case is
    // legal and is left to the factorization to accept or reject.
    if 2 * n < params {
        return Err(Error::SampleTooSmall {
            size: 2 * n,
            params,
        });
    }

    let mut sum_c = vec![0.0; k];
    let mut sum_t = vec![0.0; k];
    let mut gram_c = SymMatrix::zeros(k);
    let mut gram_t = SymMatrix::zeros(k);
    for &i in control {
        let x = table.row(i);
        gram_c.add_outer(x, 1.0);
        for (s, v) in sum_c.iter_mut().zip(x) {
            *s += v;
        }
    }
    for &i in treatment {
        let x = table.row(i);
        gram_t.add_outer(x, 1.0);
        for (s, v) in sum_t.iter_mut().zip(x) {
            *s += v;
        }
    }

    let inv_s2 = 1.0 / (sigma * sigma);
    let mut f = SymMatrix::zeros(params);
    f.set(0, 0, 2.0 * n as f64 * inv_s2);
    f.set(1, 1, 2.0 * n as f64 * inv_s2);
    // f[δ,α] stays exactly zero.
    for j in 0..k {
        let diff = (sum_t[j] - sum_c[j]) * inv_s2;
        let total = (sum_t[j] + sum_c[j]) * inv_s2;
        f.set(0, 2 + j, diff);
        f.set(0, 2 + k + j, total);
        f.set(1, 2 + j, total);
        f.set(1, 2 + k + j, diff);
    }
    for i in 0..k {
        for j in 0..=i {
            let total = (gram_t.get(i, j) + gram_c.get(i, j)) * inv_s2;
            f.set(2 + i, 2 + j, total);
            f.set(2 + k + i, 2 + k + j, total);
        }
        for j in 0..k {
            let diff = (gram_t.get(i, j) - gram_c.get(i, j)) * inv_s2;
            f.set(2 + i, 2 + k + j, diff);
        }
    }

    let state = SpdState::from_matrix(&f).map_err(|_| Error::SingularInformation)?;
    Ok(FisherInfo {
        matrix: f,
        inverse: state.inverse,
        sigma,
        group_size: n,
        covariates: k,
    })
}

pub fn fisher_information(
    allocation: &Allocation,
    table: &CovariateTable,
    sigma: f64,
) -> Result<FisherInfo> {
    let (control, treatment) = resolve_groups(allocation, table)?;
    fisher_information_rows(&control, &treatment, table, sigma)
}

/// Maps diag(F⁻¹) onto the parameter order δ, α, β₁..β_k, γ₁..γ_k.
pub fn parameter_mses(info: &FisherInfo) -> MseReport {
    let k = info.covariates;
    let diag = |i: usize| info.inverse.get(i, i);
    MseReport {
        mse_delta: diag(0),
        mse_alpha: diag(1),
        mse_beta: (0..k).map(|j| diag(2 + j)).collect(),
        mse_gamma: (0..k).map(|j| diag(2 + k + j)).collect(),
        sigma: info.sigma,
        n: info.group_size,
        k,
    }
}

/// Approximate covariance of (α̂, β̂) under the balance constraints, which
/// depends only on the full-selection mean and centered scatter:
/// (σ²/2n)·[1 + x̄ᵀS⁻¹x̄, −x̄ᵀS⁻¹; −S⁻¹x̄, S⁻¹].
pub fn cov_alpha_beta(
    selection: &Selection,
    table: &CovariateTable,
    sigma: f64,
) -> Result<SymMatrix> {
    let rows = table.resolve_ids(&selection.ids)?;
    let k = table.n_covariates();
    if rows.len() < k + 1 {
        return Err(Error::SingularScatter);
    }
    let (scatter, mean) = scatter_stats(table, &rows);
    let s_inv = inverse_spd(&scatter).map_err(|_| Error::SingularScatter)?;
    let w = s_inv.mul_vec(&mean);
    let quad = dot(&mean, &w);
    let c = sigma * sigma / rows.len() as f64;
    let mut out = SymMatrix::zeros(k + 1);
    out.set(0, 0, c * (1.0 + quad));
    for j in 0..k {
        out.set(0, 1 + j, -c * w[j]);
        for i in 0..=j {
            out.set(1 + i, 1 + j, c * s_inv.get(i, j));
        }
    }
    Ok(out)
}

/// ln det(S) with S = XᵀX/2n − x̄x̄ᵀ over the selection — the quantity the
/// two-stage procedure maximizes, recomputed directly from the table.
pub fn d_criterion(selection: &Selection, table: &CovariateTable) -> Result<f64> {
    let rows = table.resolve_ids(&selection.ids)?;
    if rows.len() < table.n_covariates() + 1 {
        return Err(Error::DegenerateSelection);
    }
    let (scatter, _) = scatter_stats(table, &rows);
    log_det_spd(&scatter).map_err(|_| Error::DegenerateSelection)
}
