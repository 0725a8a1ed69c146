//! Backward-stepwise greedy selection of the sample that maximizes the
//! log-determinant of the full-sample covariate covariance.
//!
//! Starting from all N rows, each step removes the row whose removal least
//! reduces ln det(XᵀX/p − x̄x̄ᵀ). Candidate scores come from the rank-one
//! downdate recursions, so a step costs O(p·k²) instead of O(p·k³); a
//! periodic from-scratch refresh bounds floating-point drift over the
//! thousands of downdates a large table incurs.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{scatter_stats, CovariateTable};
use crate::error::{Error, Result};
use crate::linalg::{
    centered_scatter_log_det, dot, downdate_inverse, downdate_log_det, log_det_spd, SpdState,
    SymMatrix, PIVOT_FLOOR,
};

#[derive(Clone, Debug)]
pub struct SelectorConfig {
    /// Number of rows to keep (the 2n of the eventual trial).
    pub target_size: usize,
    /// Removals between from-scratch state rebuilds.
    pub refresh_interval: usize,
    /// Threshold on the removal leverage below which a candidate is scored
    /// −∞ instead of risking a singular downdate.
    pub pivot_floor: f64,
    /// Record (removed id, post-removal ln det S) for every step.
    pub record_trace: bool,
}

impl SelectorConfig {
    pub fn new(target_size: usize) -> Self {
        Self {
            target_size,
            refresh_interval: 128,
            pivot_floor: PIVOT_FLOOR,
            record_trace: false,
        }
    }

    fn validate(&self, n_rows: usize) -> Result<()> {
        if self.target_size == 0 {
            return Err(Error::InvalidConfig("target size must be positive".into()));
        }
        if self.refresh_interval == 0 {
            return Err(Error::InvalidConfig(
                "refresh interval must be positive".into(),
            ));
        }
        if !(self.pivot_floor > 0.0 && self.pivot_floor < 1.0) {
            return Err(Error::InvalidConfig(
                "pivot floor must lie strictly between 0 and 1".into(),
            ));
        }
        if self.target_size > n_rows {
            return Err(Error::TargetTooLarge {
                target: self.target_size,
                rows: n_rows,
            });
        }
        Ok(())
    }
}

/// One greedy step: which row left, and the centered scatter log-determinant
/// of what remained.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RemovalRecord {
    pub removed_id: String,
    pub log_det: f64,
}

/// The chosen rows plus the cached value of ln det(XᵀX/2n − x̄x̄ᵀ) over them.
#[derive(Clone, Debug)]
pub struct Selection {
    pub ids: Vec<String>,
    pub scatter_log_det: f64,
    pub trace: Option<Vec<RemovalRecord>>,
}

/// Incremental state of one greedy run: the active rows, the cached
/// (log-det, inverse) pair for XᵀX over them, and their mean.
pub struct SelectorState<'a> {
    table: &'a CovariateTable,
    active: Vec<usize>,
    xtx: SpdState,
    mean: Vec<f64>,
    steps_since_refresh: usize,
    refresh_interval: usize,
    pivot_floor: f64,
    // Lexicographic rank of every row id; breaks score ties deterministically.
    id_rank: Vec<usize>,
}

struct ScoreScratch {
    u: Vec<f64>,
    reduced_mean: Vec<f64>,
}

impl ScoreScratch {
    fn new(k: usize) -> Self {
        Self {
            u: vec![0.0; k],
            reduced_mean: vec![0.0; k],
        }
    }
}

impl<'a> SelectorState<'a> {
    pub fn active_count(&self) -> usize {
        self.active.len()
    }

    pub fn active_rows(&self) -> &[usize] {
        &self.active
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn xtx_state(&self) -> &SpdState {
        &self.xtx
    }

    /// Score for removing `row`: the centered scatter log-determinant of the
    /// remaining p−1 rows, via the downdate recursions. Rows whose removal
    /// collapses rank score −∞.
    fn score_row(&self, row: usize, scratch: &mut ScoreScratch) -> f64 {
        let x = self.table.row(row);
        let k = x.len();
        self.xtx.inverse.mul_vec_into(x, &mut scratch.u);
        let q = dot(x, &scratch.u);
        if q >= 1.0 - self.pivot_floor {
            return f64::NEG_INFINITY;
        }
        let p = self.active.len() as f64;
        let pm1 = p - 1.0;
        let reduced_log_det = self.xtx.log_det + (1.0 - q).ln();
        for (m1, (m, xv)) in scratch
            .reduced_mean
            .iter_mut()
            .zip(self.mean.iter().zip(x))
        {
            *m1 = (p * m - xv) / pm1;
        }
        // m̃ᵀ(X̃ᵀX̃)⁻¹m̃ expanded through Sherman–Morrison, without forming
        // the downdated inverse: m̃ᵀBm̃ + (m̃ᵀBx)²/(1 − q).
        let a = self.xtx.inverse.quad_form(&scratch.reduced_mean);
        let b = dot(&scratch.reduced_mean, &scratch.u);
        let r = pm1 * (a + b * b / (1.0 - q));
        if r >= 1.0 - self.pivot_floor {
            return f64::NEG_INFINITY;
        }
        -(k as f64) * pm1.ln() + reduced_log_det + (1.0 - r).ln()
    }

    fn refresh(&mut self) -> Result<()> {
        let k = self.table.n_covariates();
        let mut gram = SymMatrix::zeros(k);
        let mut mean = vec![0.0; k];
        for &row in &self.active {
            let x = self.table.row(row);
            gram.add_outer(x, 1.0);
            for (m, v) in mean.iter_mut().zip(x) {
                *m += v;
            }
        }
        let p = self.active.len() as f64;
        for m in &mut mean {
            *m /= p;
        }
        self.xtx = SpdState::from_matrix(&gram)?;
        self.mean = mean;
        self.steps_since_refresh = 0;
        Ok(())
    }
}

/// Builds the state covering all N rows, with XᵀX factorized from scratch.
pub fn init_state(table: &CovariateTable) -> Result<SelectorState<'_>> {
    if !table.is_standardized() {
        return Err(Error::UnstandardizedTable);
    }
    let n = table.n_rows();
    let k = table.n_covariates();
    if n <= k {
        return Err(Error::SingularInitialScatter);
    }
    let mut id_order: Vec<usize> = (0..n).collect();
    id_order.sort_by(|&a, &b| table.id(a).cmp(table.id(b)));
    let mut id_rank = vec![0usize; n];
    for (rank, &row) in id_order.iter().enumerate() {
        id_rank[row] = rank;
    }
    let mut state = SelectorState {
        table,
        active: (0..n).collect(),
        xtx: SpdState {
            log_det: 0.0,
            inverse: SymMatrix::identity(k),
        },
        mean: vec![0.0; k],
        steps_since_refresh: 0,
        refresh_interval: 128,
        pivot_floor: PIVOT_FLOOR,
        id_rank,
    };
    state.refresh().map_err(|e| match e {
        Error::NotPositiveDefinite { .. } => Error::SingularInitialScatter,
        other => other,
    })?;
    Ok(state)
}

/// Scores every active row without mutating the state.
pub fn removal_scores(state: &SelectorState) -> Vec<(String, f64)> {
    let mut scratch = ScoreScratch::new(state.table.n_covariates());
    state
        .active
        .iter()
        .map(|&row| {
            (
                state.table.id(row).to_string(),
                state.score_row(row, &mut scratch),
            )
        })
        .collect()
}

// Candidate ordering: higher score wins, exact ties go to the smaller id rank.
#[inline]
fn better(
    a: (f64, usize, usize),
    b: (f64, usize, usize),
) -> (f64, usize, usize) {
    if a.0 > b.0 || (a.0 == b.0 && a.1 < b.1) {
        a
    } else {
        b
    }
}

/// Removes the row whose removal keeps the centered scatter log-determinant
/// highest, applying the downdate recursions in O(k²). Candidate scoring is
/// read-only and runs in parallel; the argmax reduction is total, so the
/// outcome is independent of scheduling.
pub fn remove_worst(state: &mut SelectorState) -> Result<RemovalRecord> {
    let k = state.table.n_covariates();
    let shared: &SelectorState = state;
    let best = (0..shared.active.len())
        .into_par_iter()
        .fold(
            || (ScoreScratch::new(k), None::<(f64, usize, usize)>),
            |(mut scratch, acc), pos| {
                let row = shared.active[pos];
                let score = shared.score_row(row, &mut scratch);
                let cand = (score, shared.id_rank[row], pos);
                let acc = Some(match acc {
                    None => cand,
                    Some(prev) => better(cand, prev),
                });
                (scratch, acc)
            },
        )
        .map(|(_, acc)| acc)
        .reduce(
            || None,
            |a, b| match (a, b) {
                (None, x) | (x, None) => x,
                (Some(x), Some(y)) => Some(better(x, y)),
            },
        );
    let (score, _, pos) = best.expect("remove_worst on empty state");
    if score == f64::NEG_INFINITY {
        return Err(Error::AllCandidatesCollapseRank);
    }

    let row = state.active[pos];
    let x = state.table.row(row).to_vec();
    let new_log_det = downdate_log_det(&state.xtx, &x)?;
    let new_inverse = downdate_inverse(&state.xtx, &x)?;
    let p = state.active.len() as f64;
    for (m, xv) in state.mean.iter_mut().zip(&x) {
        *m = (p * *m - xv) / (p - 1.0);
    }
    state.xtx = SpdState {
        log_det: new_log_det,
        inverse: new_inverse,
    };
    state.active.swap_remove(pos);
    state.steps_since_refresh += 1;
    if state.steps_since_refresh >= state.refresh_interval {
        state.refresh()?;
    }
    Ok(RemovalRecord {
        removed_id: state.table.id(row).to_string(),
        log_det: score,
    })
}

/// Runs the greedy removals from all N rows down to the configured target.
/// Deterministic: no randomness, and score ties break on the smaller row id.
pub fn select_sample(table: &CovariateTable, config: &SelectorConfig) -> Result<Selection> {
    config.validate(table.n_rows())?;
    let mut state = init_state(table)?;
    state.refresh_interval = config.refresh_interval;
    state.pivot_floor = config.pivot_floor;
    let mut trace = config.record_trace.then(Vec::new);
    while state.active.len() > config.target_size {
        let record = remove_worst(&mut state)?;
        if let Some(t) = trace.as_mut() {
            t.push(record);
        }
    }
    let scatter_log_det =
        centered_scatter_log_det(&state.xtx, &state.mean, state.active.len())?;
    let mut rows = state.active.clone();
    rows.sort_unstable();
    Ok(Selection {
        ids: rows.iter().map(|&r| table.id(r).to_string()).collect(),
        scatter_log_det,
        trace,
    })
}

impl Selection {
    /// Rebuilds a selection from bare ids, recomputing the scatter
    /// log-determinant directly from the table.
    pub fn from_ids(ids: Vec<String>, table: &CovariateTable) -> Result<Self> {
        let rows = table.resolve_ids(&ids)?;
        let mut seen = std::collections::HashSet::new();
        for (row, id) in rows.iter().zip(&ids) {
            if !seen.insert(*row) {
                return Err(Error::DuplicateRowId(id.clone()));
            }
        }
        if rows.len() < table.n_covariates() + 1 {
            return Err(Error::DegenerateSelection);
        }
        let (scatter, _) = scatter_stats(table, &rows);
        let scatter_log_det = log_det_spd(&scatter).map_err(|_| Error::DegenerateSelection)?;
        Ok(Self {
            ids,
            scatter_log_det,
            trace: None,
        })
    }

    /// CSV form: columns id, order_selected.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["id", "order_selected"])?;
        for (i, id) in self.ids.iter().enumerate() {
            w.write_record([id.as_str(), &(i + 1).to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R, table: &CovariateTable) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(reader);
        let mut rows: Vec<(usize, String)> = Vec::new();
        for record in r.records() {
            let record = record?;
            if record.len() < 2 {
                return Err(Error::InvalidAllocation(
                    "selection CSV needs id and order_selected columns".into(),
                ));
            }
            let order: usize = record[1].trim().parse().map_err(|_| {
                Error::InvalidAllocation(format!("bad order_selected value {:?}", &record[1]))
            })?;
            rows.push((order, record[0].to_string()));
        }
        rows.sort_by_key(|(order, _)| *order);
        Self::from_ids(rows.into_iter().map(|(_, id)| id).collect(), table)
    }

    /// JSON sidecar: the cached scatter log-determinant plus the removal
    /// trace when one was recorded.
    pub fn summary_json(&self) -> String {
        #[derive(Serialize)]
        struct Summary<'a> {
            scatter_log_det: f64,
            #[serde(skip_serializing_if = "Option::is_none")]
            trace: Option<&'a Vec<RemovalRecord>>,
        }
        serde_json::to_string_pretty(&Summary {
            scatter_log_det: self.scatter_log_det,
            trace: self.trace.as_ref(),
        })
        .expect("selection summary serializes")
    }
}
