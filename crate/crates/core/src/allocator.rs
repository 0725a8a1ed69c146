//! Splits a selected sample into treatment/control halves whose means and
//! non-centered scatters agree, via random balanced initialization followed
//! by best-improvement pairwise exchange.
//!
//! The objective is ‖x̄₊ − x̄₋‖² + ‖S₊ − S₋‖²_F with S± = X±ᵀX±/n. One sweep
//! scans all n² cross-group pairs; per-sweep precomputation keeps a pair's
//! evaluation at O(k). Restarts are independent, seeded from (seed, restart),
//! and the best final criterion wins.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::CovariateTable;
use crate::design::Allocation;
use crate::error::{Error, Result};
use crate::linalg::{dot, SymMatrix};
use crate::seeds::derive_seed;
use crate::selector::Selection;

#[derive(Clone, Debug)]
pub struct AllocatorConfig {
    pub restarts: usize,
    pub max_exchanges: usize,
    /// Smallest criterion reduction that still counts as an improvement.
    pub improvement_floor: f64,
    pub seed: u64,
}

impl AllocatorConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            restarts: 10,
            max_exchanges: 10_000,
            improvement_floor: 1e-12,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.restarts == 0 || self.max_exchanges == 0 {
            return Err(Error::InvalidConfig(
                "restarts and max_exchanges must be positive".into(),
            ));
        }
        if !(self.improvement_floor >= 0.0 && self.improvement_floor.is_finite()) {
            return Err(Error::InvalidConfig(
                "improvement floor must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Working state of one exchange run: group memberships plus their cached
/// first and (non-centered) second moments and the criterion value.
pub struct BalanceState<'a> {
    table: &'a CovariateTable,
    control: Vec<usize>,
    treatment: Vec<usize>,
    mean_minus: Vec<f64>,
    mean_plus: Vec<f64>,
    s_minus: SymMatrix,
    s_plus: SymMatrix,
    criterion: f64,
}

/// A proposed control/treatment swap and the criterion it would produce.
#[derive(Clone, Debug)]
pub struct Exchange {
    pub control_id: String,
    pub treatment_id: String,
    pub new_criterion: f64,
}

/// A finished exchange run.
#[derive(Clone, Debug)]
pub struct AllocationOutcome {
    pub allocation: Allocation,
    pub criterion: f64,
    pub exchanges: usize,
    pub restart: usize,
}

impl<'a> BalanceState<'a> {
    fn from_groups(table: &'a CovariateTable, control: Vec<usize>, treatment: Vec<usize>) -> Self {
        let k = table.n_covariates();
        let n = control.len() as f64;
        let build = |rows: &[usize]| {
            let mut mean = vec![0.0; k];
            let mut s = SymMatrix::zeros(k);
            for &i in rows {
                let x = table.row(i);
                s.add_outer(x, 1.0 / n);
                for (m, v) in mean.iter_mut().zip(x) {
                    *m += v / n;
                }
            }
            (mean, s)
        };
        let (mean_minus, s_minus) = build(&control);
        let (mean_plus, s_plus) = build(&treatment);
        let mut state = Self {
            table,
            control,
            treatment,
            mean_minus,
            mean_plus,
            s_minus,
            s_plus,
            criterion: 0.0,
        };
        state.criterion = balance_criterion(&state);
        state
    }

    pub fn criterion(&self) -> f64 {
        self.criterion
    }

    pub fn mean_minus(&self) -> &[f64] {
        &self.mean_minus
    }

    pub fn mean_plus(&self) -> &[f64] {
        &self.mean_plus
    }

    pub fn scatter_minus(&self) -> &SymMatrix {
        &self.s_minus
    }

    pub fn scatter_plus(&self) -> &SymMatrix {
        &self.s_plus
    }

    pub fn control_ids(&self) -> Vec<String> {
        self.control
            .iter()
            .map(|&i| self.table.id(i).to_string())
            .collect()
    }

    pub fn treatment_ids(&self) -> Vec<String> {
        self.treatment
            .iter()
            .map(|&i| self.table.id(i).to_string())
            .collect()
    }

    pub fn to_allocation(&self) -> Result<Allocation> {
        Allocation::new(self.control_ids(), self.treatment_ids())
    }

    /// Moves control[ca] to treatment and treatment[tb] to control, updating
    /// the cached moments with rank-one changes and refreshing the criterion.
    fn apply_swap(&mut self, ca: usize, tb: usize) {
        let n = self.control.len() as f64;
        let a = self.control[ca];
        let b = self.treatment[tb];
        let xa = self.table.row(a).to_vec();
        let xb = self.table.row(b).to_vec();
        self.s_minus.add_outer(&xb, 1.0 / n);
        self.s_minus.add_outer(&xa, -1.0 / n);
        self.s_plus.add_outer(&xa, 1.0 / n);
        self.s_plus.add_outer(&xb, -1.0 / n);
        for j in 0..xa.len() {
            self.mean_minus[j] += (xb[j] - xa[j]) / n;
            self.mean_plus[j] += (xa[j] - xb[j]) / n;
        }
        self.control[ca] = b;
        self.treatment[tb] = a;
        self.criterion = balance_criterion(self);
    }

    /// Applies a swap named by ids, for callers holding an [`Exchange`].
    pub fn apply_exchange(&mut self, exchange: &Exchange) -> Result<()> {
        let ca = self
            .control
            .iter()
            .position(|&i| self.table.id(i) == exchange.control_id)
            .ok_or_else(|| Error::UnknownId(exchange.control_id.clone()))?;
        let tb = self
            .treatment
            .iter()
            .position(|&i| self.table.id(i) == exchange.treatment_id)
            .ok_or_else(|| Error::UnknownId(exchange.treatment_id.clone()))?;
        self.apply_swap(ca, tb);
        Ok(())
    }
}

/// ‖x̄₊ − x̄₋‖² + ‖S₊ − S₋‖²_F, straight from the state's cached statistics.
pub fn balance_criterion(state: &BalanceState) -> f64 {
    let mean_gap: f64 = state
        .mean_plus
        .iter()
        .zip(&state.mean_minus)
        .map(|(p, m)| (p - m) * (p - m))
        .sum();
    mean_gap + state.s_plus.frobenius_dist_sq(&state.s_minus)
}

/// Uniformly random balanced partition of the selection, deterministic for a
/// given seed, with statistics computed from scratch.
pub fn initial_split<'a>(
    selection: &Selection,
    table: &'a CovariateTable,
    seed: u64,
) -> Result<BalanceState<'a>> {
    if !selection.ids.len().is_multiple_of(2) {
        return Err(Error::OddSelectionSize(selection.ids.len()));
    }
    let mut rows = table.resolve_ids(&selection.ids)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rows.shuffle(&mut rng);
    let treatment = rows.split_off(rows.len() / 2);
    Ok(BalanceState::from_groups(table, rows, treatment))
}

fn best_swap_indices(
    state: &BalanceState,
    improvement_floor: f64,
) -> Option<(usize, usize, f64)> {
    let table = state.table;
    let n = state.control.len();
    let nf = n as f64;
    let g = 2.0 / nf;

    let mut gap = state.s_plus.clone();
    gap.add_scaled(&state.s_minus, -1.0);
    let mean_gap: Vec<f64> = state
        .mean_plus
        .iter()
        .zip(&state.mean_minus)
        .map(|(p, m)| p - m)
        .collect();
    let base = balance_criterion(state);

    // Per-row pieces that every pair evaluation reuses.
    let prep = |rows: &[usize]| -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut d = Vec::with_capacity(n);
        let mut q = Vec::with_capacity(n);
        let mut norm2 = Vec::with_capacity(n);
        for &i in rows {
            let x = table.row(i);
            d.push(dot(&mean_gap, x));
            q.push(gap.quad_form(x));
            norm2.push(dot(x, x));
        }
        (d, q, norm2)
    };
    let (da, qa, n2a) = prep(&state.control);
    let (db, qb, n2b) = prep(&state.treatment);

    // Swapping control a with treatment b changes the mean gap by
    // g(x_a − x_b) and the scatter gap by g(x_a x_aᵀ − x_b x_bᵀ); everything
    // expands in precomputed inner products plus one x_aᵀx_b per pair.
    let best = (0..n)
        .into_par_iter()
        .map(|i| {
            let xa = table.row(state.control[i]);
            let mut local: Option<(f64, usize, usize)> = None;
            for j in 0..n {
                let xb = table.row(state.treatment[j]);
                let s = dot(xa, xb);
                let mean_term = 2.0 * g * (da[i] - db[j])
                    + g * g * (n2a[i] + n2b[j] - 2.0 * s);
                let scatter_term = 2.0 * g * (qa[i] - qb[j])
                    + g * g * (n2a[i] * n2a[i] + n2b[j] * n2b[j] - 2.0 * s * s);
                let cand = base + mean_term + scatter_term;
                let better = match local {
                    None => true,
                    Some((c, bi, bj)) => {
                        cand < c || (cand == c && (i, j) < (bi, bj))
                    }
                };
                if better {
                    local = Some((cand, i, j));
                }
            }
            local
        })
        .reduce(
            || None,
            |x, y| match (x, y) {
                (None, v) | (v, None) => v,
                (Some(a), Some(b)) => {
                    if a.0 < b.0 || (a.0 == b.0 && (a.1, a.2) <= (b.1, b.2)) {
                        Some(a)
                    } else {
                        Some(b)
                    }
                }
            },
        );

    match best {
        Some((cand, i, j)) if cand < state.criterion - improvement_floor => Some((i, j, cand)),
        _ => None,
    }
}

/// Scans all n² cross-group pairs and returns the swap that lowers the
/// criterion the most, if any lowers it by more than the floor.
pub fn best_exchange(state: &BalanceState, improvement_floor: f64) -> Option<Exchange> {
    best_swap_indices(state, improvement_floor).map(|(i, j, c)| Exchange {
        control_id: state.table.id(state.control[i]).to_string(),
        treatment_id: state.table.id(state.treatment[j]).to_string(),
        new_criterion: c,
    })
}

fn run_single_restart(
    selection: &Selection,
    table: &CovariateTable,
    config: &AllocatorConfig,
    restart: usize,
) -> Result<AllocationOutcome> {
    let mut state = initial_split(selection, table, derive_seed(config.seed, restart as u64))?;
    let mut exchanges = 0;
    while exchanges < config.max_exchanges {
        match best_swap_indices(&state, config.improvement_floor) {
            Some((i, j, _)) => {
                state.apply_swap(i, j);
                exchanges += 1;
            }
            None => break,
        }
    }
    Ok(AllocationOutcome {
        allocation: state.to_allocation()?,
        criterion: state.criterion,
        exchanges,
        restart,
    })
}

/// Runs every restart to local convergence and returns all outcomes, in
/// restart order.
pub fn run_restarts(
    selection: &Selection,
    table: &CovariateTable,
    config: &AllocatorConfig,
) -> Result<Vec<AllocationOutcome>> {
    config.validate()?;
    if !selection.ids.len().is_multiple_of(2) {
        return Err(Error::OddSelectionSize(selection.ids.len()));
    }
    (0..config.restarts)
        .into_par_iter()
        .map(|r| run_single_restart(selection, table, config, r))
        .collect()
}

/// Random initialization plus exchange, over `config.restarts` independent
/// restarts; the allocation with the smallest final criterion wins, ties to
/// the lowest restart index.
pub fn allocate(
    selection: &Selection,
    table: &CovariateTable,
    config: &AllocatorConfig,
) -> Result<AllocationOutcome> {
    let outcomes = run_restarts(selection, table, config)?;
    Ok(outcomes
        .into_iter()
        .min_by(|a, b| {
            a.criterion
                .partial_cmp(&b.criterion)
                .expect("criteria are finite")
                .then(a.restart.cmp(&b.restart))
        })
        .expect("at least one restart"))
}
