//! Monte Carlo comparison of the two-stage designed sample against random
//! sampling and allocation.
//!
//! Both arms are scored analytically from diag(F⁻¹); no response data is
//! ever simulated. The designed arm is computed once — its sample does not
//! vary across replicates — while the random arm redraws a fresh subset and
//! split per replicate.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allocator::{allocate, run_restarts, AllocatorConfig};
use crate::dataset::CovariateTable;
use crate::design::{fisher_information, fisher_information_rows, parameter_mses, MseReport};
use crate::error::{Error, Result};
use crate::seeds::derive_seed;
use crate::selector::{select_sample, SelectorConfig};

/// How many redraws a single replicate may burn on singular information
/// matrices before the table is declared unusable.
const MAX_REDRAWS_PER_REPLICATE: usize = 1_000;

/// Side-by-side averaged MSEs for random sampling and the designed sample.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub random_mse: MseReport,
    pub dsd_mse: MseReport,
    pub replicates: usize,
    pub sigma: f64,
    /// Per-interaction MSE ratio, designed over random.
    pub beta_ratio: Vec<f64>,
    /// Replicates redrawn because their information matrix was singular.
    pub discarded_replicates: usize,
}

fn zero_report(sigma: f64, n: usize, k: usize) -> MseReport {
    MseReport {
        mse_delta: 0.0,
        mse_alpha: 0.0,
        mse_beta: vec![0.0; k],
        mse_gamma: vec![0.0; k],
        sigma,
        n,
        k,
    }
}

fn accumulate(acc: &mut MseReport, r: &MseReport) {
    acc.mse_delta += r.mse_delta;
    acc.mse_alpha += r.mse_alpha;
    for (a, b) in acc.mse_beta.iter_mut().zip(&r.mse_beta) {
        *a += b;
    }
    for (a, b) in acc.mse_gamma.iter_mut().zip(&r.mse_gamma) {
        *a += b;
    }
}

fn divide(acc: &mut MseReport, count: f64) {
    acc.mse_delta /= count;
    acc.mse_alpha /= count;
    for a in &mut acc.mse_beta {
        *a /= count;
    }
    for a in &mut acc.mse_gamma {
        *a /= count;
    }
}

fn average_reports(reports: &[MseReport], sigma: f64, n: usize, k: usize) -> MseReport {
    let mut acc = zero_report(sigma, n, k);
    for r in reports {
        accumulate(&mut acc, r);
    }
    divide(&mut acc, reports.len() as f64);
    acc
}

/// Averaged analytic MSEs over `replicates` random size-2n subsets, each
/// randomly split into balanced halves. Replicates whose information matrix
/// is singular are discarded and redrawn from the same per-replicate stream;
/// the second return value counts those redraws.
pub fn random_baseline(
    table: &CovariateTable,
    sample_size: usize,
    replicates: usize,
    sigma: f64,
    seed: u64,
) -> Result<(MseReport, usize)> {
    if !sample_size.is_multiple_of(2) {
        return Err(Error::OddSelectionSize(sample_size));
    }
    if sample_size > table.n_rows() {
        return Err(Error::SampleTooLarge {
            size: sample_size,
            rows: table.n_rows(),
        });
    }
    let k = table.n_covariates();
    if sample_size < 2 * k + 2 {
        return Err(Error::SampleTooSmall {
            size: sample_size,
            params: 2 * k + 2,
        });
    }
    if replicates == 0 {
        return Err(Error::InvalidConfig("replicates must be positive".into()));
    }
    if !table.is_standardized() {
        return Err(Error::UnstandardizedTable);
    }

    let n_rows = table.n_rows();
    let per_replicate: Vec<(MseReport, usize)> = (0..replicates)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, rep as u64));
            let mut discarded = 0usize;
            loop {
                let mut idx = rand::seq::index::sample(&mut rng, n_rows, sample_size).into_vec();
                idx.shuffle(&mut rng);
                let (control, treatment) = idx.split_at(sample_size / 2);
                match fisher_information_rows(control, treatment, table, sigma) {
                    Ok(info) => return Ok((parameter_mses(&info), discarded)),
                    Err(Error::SingularInformation) => {
                        discarded += 1;
                        if discarded > MAX_REDRAWS_PER_REPLICATE {
                            return Err(Error::SingularInformation);
                        }
                    }
                    Err(e) => return Err(e),
                }
            }
        })
        .collect::<Result<_>>()?;

    let reports: Vec<MseReport> = per_replicate.iter().map(|(r, _)| r.clone()).collect();
    let discarded = per_replicate.iter().map(|(_, d)| d).sum();
    Ok((
        average_reports(&reports, sigma, sample_size / 2, k),
        discarded,
    ))
}

/// Runs the full two-stage design once, the random baseline `replicates`
/// times, and assembles the comparison. With `average_restarts` the designed
/// arm averages its MSEs over every allocator restart instead of keeping
/// only the best one.
#[allow(clippy::too_many_arguments)]
pub fn compare(
    table: &CovariateTable,
    sample_size: usize,
    sigma: f64,
    replicates: usize,
    selector_cfg: &SelectorConfig,
    allocator_cfg: &AllocatorConfig,
    seed: u64,
    average_restarts: bool,
) -> Result<ComparisonReport> {
    let selection = select_sample(table, selector_cfg)?;
    let dsd_mse = if average_restarts {
        let outcomes = run_restarts(&selection, table, allocator_cfg)?;
        let reports: Vec<MseReport> = outcomes
            .iter()
            .map(|o| {
                fisher_information(&o.allocation, table, sigma).map(|info| parameter_mses(&info))
            })
            .collect::<Result<_>>()?;
        average_reports(
            &reports,
            sigma,
            sample_size / 2,
            table.n_covariates(),
        )
    } else {
        let outcome = allocate(&selection, table, allocator_cfg)?;
        parameter_mses(&fisher_information(&outcome.allocation, table, sigma)?)
    };
    let (random_mse, discarded_replicates) =
        random_baseline(table, sample_size, replicates, sigma, seed)?;
    let beta_ratio = dsd_mse
        .mse_beta
        .iter()
        .zip(&random_mse.mse_beta)
        .map(|(d, r)| d / r)
        .collect();
    Ok(ComparisonReport {
        random_mse,
        dsd_mse,
        replicates,
        sigma,
        beta_ratio,
        discarded_replicates,
    })
}

impl ComparisonReport {
    /// Plain-text table: one row per design, one column per parameter of
    /// interest (α̂ then each β̂_j), with the per-interaction ratio below.
    pub fn render_text(&self) -> String {
        let k = self.random_mse.mse_beta.len();
        let mut out = String::new();
        let mut header = format!("{:<18}{:>14}", "design", "alpha");
        for j in 1..=k {
            header.push_str(&format!("{:>14}", format!("beta_{j}")));
        }
        out.push_str(&header);
        out.push('\n');
        for (label, report) in [
            ("random sampling", &self.random_mse),
            ("dsd", &self.dsd_mse),
        ] {
            let mut line = format!("{:<18}{:>14.4e}", label, report.mse_alpha);
            for b in &report.mse_beta {
                line.push_str(&format!("{:>14.4e}", b));
            }
            out.push_str(&line);
            out.push('\n');
        }
        let ratios: Vec<String> = self.beta_ratio.iter().map(|r| format!("{r:.4}")).collect();
        out.push_str(&format!(
            "\nbeta MSE ratio (dsd / random sampling): {}\n",
            ratios.join(" ")
        ));
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("comparison report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{standardize, synthesize, SynthSpec};
    use crate::linalg::SymMatrix;

    fn synthetic_standardized(n: usize, k: usize, seed: u64) -> CovariateTable {
        let spec = SynthSpec {
            n_rows: n,
            means: vec![10.0; k],
            std_devs: vec![2.0; k],
            correlation: SymMatrix::identity(k),
            seed,
        };
        standardize(&synthesize(&spec).unwrap()).unwrap().0
    }

    #[test]
    fn single_replicate_on_the_whole_table() {
        let t = synthetic_standardized(400, 2, 51);
        let sigma = 0.3;
        let (report, discarded) = random_baseline(&t, 400, 1, sigma, 9).unwrap();
        assert_eq!(discarded, 0);
        let bound = sigma * sigma / 400.0;
        assert!(
            (report.mse_alpha - bound).abs() < 0.1 * bound,
            "mse_alpha {} vs {bound}",
            report.mse_alpha
        );
    }

    #[test]
    fn averaged_alpha_mse_tracks_the_bound_for_large_samples() {
        let t = synthetic_standardized(2_000, 2, 52);
        let sigma = 0.3;
        let (report, _) = random_baseline(&t, 1_000, 20, sigma, 10).unwrap();
        let bound = sigma * sigma / 1_000.0;
        assert!(
            (report.mse_alpha - bound).abs() < 0.05 * bound,
            "averaged mse_alpha {} vs {bound}",
            report.mse_alpha
        );
        assert!(report.mse_alpha >= bound - 1e-12);
    }

    #[test]
    fn baseline_is_deterministic() {
        let t = synthetic_standardized(200, 2, 53);
        let a = random_baseline(&t, 60, 10, 0.5, 123).unwrap();
        let b = random_baseline(&t, 60, 10, 0.5, 123).unwrap();
        assert_eq!(a.0.mse_alpha, b.0.mse_alpha);
        assert_eq!(a.0.mse_beta, b.0.mse_beta);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn baseline_rejects_bad_sizes() {
        let t = synthetic_standardized(50, 2, 54);
        assert!(matches!(
            random_baseline(&t, 51, 1, 0.3, 0),
            Err(Error::OddSelectionSize(51))
        ));
        assert!(matches!(
            random_baseline(&t, 60, 1, 0.3, 0),
            Err(Error::SampleTooLarge { .. })
        ));
        assert!(matches!(
            random_baseline(&t, 4, 1, 0.3, 0),
            Err(Error::SampleTooSmall { .. })
        ));
    }

    #[test]
    fn mirror_toy_comparison_hits_the_alpha_bound_in_both_arms() {
        // {1, 1, −1, −1} standardizes to ±a. Every balanced split either has
        // exactly zero group means (F block-diagonal, mse_alpha = σ²/2n) or
        // is exactly singular and gets discarded and redrawn.
        let raw = CovariateTable::new(
            vec!["a".into(), "b".into(), "c".into(), "d".into()],
            vec!["x1".into()],
            vec![1.0, 1.0, -1.0, -1.0],
        )
        .unwrap();
        let t = standardize(&raw).unwrap().0;
        let sigma = 0.3;
        let report = compare(
            &t,
            4,
            sigma,
            50,
            &SelectorConfig::new(4),
            &AllocatorConfig::new(17),
            99,
            false,
        )
        .unwrap();
        let bound = sigma * sigma / 4.0;
        assert!((report.dsd_mse.mse_alpha - bound).abs() < 1e-6);
        assert!((report.random_mse.mse_alpha - bound).abs() < 1e-6);
        assert!(report.discarded_replicates > 0, "some splits must be singular");
    }

    #[test]
    fn sigma_scales_mses_quadratically_and_leaves_ratios_alone() {
        let t = synthetic_standardized(60, 2, 55);
        let sel_cfg = SelectorConfig::new(20);
        let alloc_cfg = AllocatorConfig::new(5);
        let r1 = compare(&t, 20, 0.3, 10, &sel_cfg, &alloc_cfg, 7, false).unwrap();
        let r2 = compare(&t, 20, 0.6, 10, &sel_cfg, &alloc_cfg, 7, false).unwrap();
        assert!((r2.random_mse.mse_alpha / r1.random_mse.mse_alpha - 4.0).abs() < 1e-12);
        assert!((r2.dsd_mse.mse_beta[0] / r1.dsd_mse.mse_beta[0] - 4.0).abs() < 1e-12);
        for (a, b) in r1.beta_ratio.iter().zip(&r2.beta_ratio) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_replicate_report_is_valid() {
        let t = synthetic_standardized(80, 2, 56);
        let report = compare(
            &t,
            20,
            0.3,
            1,
            &SelectorConfig::new(20),
            &AllocatorConfig::new(2),
            3,
            false,
        )
        .unwrap();
        assert_eq!(report.replicates, 1);
        assert!(report.random_mse.mse_alpha > 0.0);
        assert!(report.dsd_mse.mse_alpha > 0.0);
        for j in 0..2 {
            let expect = report.dsd_mse.mse_beta[j] / report.random_mse.mse_beta[j];
            assert!((report.beta_ratio[j] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn averaging_over_restarts_still_produces_positive_mses() {
        let t = synthetic_standardized(80, 2, 57);
        let report = compare(
            &t,
            24,
            0.3,
            2,
            &SelectorConfig::new(24),
            &AllocatorConfig::new(21),
            13,
            true,
        )
        .unwrap();
        assert!(report.dsd_mse.mse_alpha > 0.0);
        assert!(report.dsd_mse.mse_alpha >= 0.3 * 0.3 / 24.0 - 1e-12);
    }

    #[test]
    fn text_table_has_two_design_rows_and_a_ratio_line() {
        let t = synthetic_standardized(80, 2, 58);
        let report = compare(
            &t,
            20,
            0.3,
            2,
            &SelectorConfig::new(20),
            &AllocatorConfig::new(1),
            1,
            false,
        )
        .unwrap();
        let text = report.render_text();
        assert!(text.contains("random sampling"));
        assert!(text.contains("dsd"));
        assert!(text.contains("beta_1"));
        assert!(text.contains("beta MSE ratio"));
        let parsed: ComparisonReport = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(parsed.replicates, report.replicates);
    }
}
