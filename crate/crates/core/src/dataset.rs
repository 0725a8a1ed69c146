//! Covariate table ingestion, standardization, and synthetic populations.
//!
//! The missing-data policy is row exclusion at load time: any row with an
//! empty or unparseable covariate cell is dropped and counted, never imputed.

use std::collections::HashMap;
use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, SymMatrix, PIVOT_FLOOR};

/// Immutable N×k covariate table with unique row identifiers.
#[derive(Clone, Debug)]
pub struct CovariateTable {
    row_ids: Vec<String>,
    names: Vec<String>,
    values: Vec<f64>, // row-major, N rows of k covariates
    standardized: bool,
    params: Option<StandardizationParams>,
    index: HashMap<String, usize>,
}

/// Per-column location/scale recorded by standardization, for mapping
/// reported quantities back to raw units. The scale is the sample standard
/// deviation (divisor N − 1).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StandardizationParams {
    pub means: Vec<f64>,
    pub std_devs: Vec<f64>,
}

/// Recipe for a synthetic multivariate-normal population with prescribed
/// marginal moments and correlation.
#[derive(Clone, Debug)]
pub struct SynthSpec {
    pub n_rows: usize,
    pub means: Vec<f64>,
    pub std_devs: Vec<f64>,
    pub correlation: SymMatrix,
    pub seed: u64,
}

/// A loaded table together with the number of rows excluded for missing or
/// malformed covariate cells.
#[derive(Debug)]
pub struct LoadedCsv {
    pub table: CovariateTable,
    pub excluded_rows: usize,
}

impl CovariateTable {
    pub fn new(row_ids: Vec<String>, names: Vec<String>, values: Vec<f64>) -> Result<Self> {
        Self::assemble(row_ids, names, values, false, None)
    }

    fn assemble(
        row_ids: Vec<String>,
        names: Vec<String>,
        values: Vec<f64>,
        standardized: bool,
        params: Option<StandardizationParams>,
    ) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::NoCovariateColumns);
        }
        if row_ids.is_empty() {
            return Err(Error::EmptyInput);
        }
        assert_eq!(values.len(), row_ids.len() * names.len());
        let mut index = HashMap::with_capacity(row_ids.len());
        for (i, id) in row_ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::DuplicateRowId(id.clone()));
            }
        }
        Ok(Self {
            row_ids,
            names,
            values,
            standardized,
            params,
            index,
        })
    }

    #[inline]
    pub fn n_rows(&self) -> usize {
        self.row_ids.len()
    }

    #[inline]
    pub fn n_covariates(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        let k = self.names.len();
        &self.values[i * k..(i + 1) * k]
    }

    #[inline]
    pub fn id(&self, i: usize) -> &str {
        &self.row_ids[i]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
    }

    pub fn standardization(&self) -> Option<&StandardizationParams> {
        self.params.as_ref()
    }

    /// Resolves ids to row indices, erroring on the first unknown id.
    pub fn resolve_ids(&self, ids: &[String]) -> Result<Vec<usize>> {
        ids.iter()
            .map(|id| {
                self.index_of(id)
                    .ok_or_else(|| Error::UnknownId(id.clone()))
            })
            .collect()
    }

    /// Writes the table as CSV, values at 17 significant digits so a reload
    /// reproduces every f64 bit-exactly.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["id".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for (i, id) in self.row_ids.iter().enumerate() {
            let mut record = vec![id.clone()];
            record.extend(self.row(i).iter().map(|v| format!("{v:.16e}")));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("CSV output is UTF-8")
    }
}

/// Centered sample scatter S = XᵀX/m − x̄x̄ᵀ and the mean x̄ over the given
/// rows.
pub(crate) fn scatter_stats(table: &CovariateTable, rows: &[usize]) -> (SymMatrix, Vec<f64>) {
    let k = table.n_covariates();
    let m = rows.len() as f64;
    let mut gram = SymMatrix::zeros(k);
    let mut mean = vec![0.0; k];
    for &i in rows {
        let x = table.row(i);
        gram.add_outer(x, 1.0);
        for (a, b) in mean.iter_mut().zip(x) {
            *a += b;
        }
    }
    for a in &mut mean {
        *a /= m;
    }
    let scatter = SymMatrix::from_fn(k, |i, j| gram.get(i, j) / m - mean[i] * mean[j]);
    (scatter, mean)
}

/// Reads a covariate table from CSV: header row, first column the row id,
/// remaining columns numeric covariates. Rows with an empty, unparseable, or
/// non-finite covariate cell (or the wrong number of cells) are excluded and
/// counted rather than treated as fatal.
pub fn load_csv<R: Read>(source: R) -> Result<LoadedCsv> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(source);
    let header = reader.headers()?.clone();
    if header.is_empty() {
        return Err(Error::EmptyInput);
    }
    if header.len() < 2 {
        return Err(Error::NoCovariateColumns);
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let k = names.len();

    let mut row_ids = Vec::new();
    let mut values = Vec::new();
    let mut excluded = 0usize;
    'rows: for record in reader.records() {
        let record = record?;
        if record.len() != k + 1 {
            excluded += 1;
            continue;
        }
        let mut parsed = Vec::with_capacity(k);
        for cell in record.iter().skip(1) {
            match cell.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => parsed.push(v),
                _ => {
                    excluded += 1;
                    continue 'rows;
                }
            }
        }
        row_ids.push(record[0].to_string());
        values.extend(parsed);
    }
    if row_ids.is_empty() {
        return Err(Error::EmptyInput);
    }
    let table = CovariateTable::new(row_ids, names, values)?;
    Ok(LoadedCsv {
        table,
        excluded_rows: excluded,
    })
}

/// Centers each covariate at zero and scales it to unit sample standard
/// deviation, recording the inverse mapping.
pub fn standardize(table: &CovariateTable) -> Result<(CovariateTable, StandardizationParams)> {
    if table.standardized {
        return Err(Error::AlreadyStandardized);
    }
    let n = table.n_rows();
    let k = table.n_covariates();
    let nf = n as f64;

    let mut means = vec![0.0; k];
    for i in 0..n {
        for (m, v) in means.iter_mut().zip(table.row(i)) {
            *m += v;
        }
    }
    for m in &mut means {
        *m /= nf;
    }

    let mut std_devs = vec![0.0; k];
    for i in 0..n {
        for (s, (v, m)) in std_devs.iter_mut().zip(table.row(i).iter().zip(&means)) {
            let d = v - m;
            *s += d * d;
        }
    }
    for (j, s) in std_devs.iter_mut().enumerate() {
        let sd = (*s / (nf - 1.0)).sqrt();
        if sd.is_nan() || sd <= 1e-12 {
            return Err(Error::ConstantColumn(table.names[j].clone()));
        }
        *s = sd;
    }

    let mut values = Vec::with_capacity(n * k);
    for i in 0..n {
        for ((v, m), s) in table.row(i).iter().zip(&means).zip(&std_devs) {
            values.push((v - m) / s);
        }
    }
    let params = StandardizationParams {
        means,
        std_devs: std_devs.clone(),
    };
    let out = CovariateTable::assemble(
        table.row_ids.clone(),
        table.names.clone(),
        values,
        true,
        Some(params.clone()),
    )?;
    Ok((out, params))
}

/// Draws an i.i.d. multivariate-normal population with the requested
/// marginals and correlation. Deterministic given the seed.
pub fn synthesize(spec: &SynthSpec) -> Result<CovariateTable> {
    let k = spec.means.len();
    if k == 0 {
        return Err(Error::NoCovariateColumns);
    }
    if spec.n_rows == 0 {
        return Err(Error::EmptyInput);
    }
    if spec.std_devs.len() != k || spec.correlation.dim() != k {
        return Err(Error::InvalidConfig(format!(
            "synthesis moments disagree on dimension: {} means, {} std devs, {}x{} correlation",
            k,
            spec.std_devs.len(),
            spec.correlation.dim(),
            spec.correlation.dim()
        )));
    }
    if spec.std_devs.iter().any(|s| s.is_nan() || *s <= 0.0) {
        return Err(Error::InvalidConfig(
            "synthesis standard deviations must be positive".into(),
        ));
    }
    for i in 0..k {
        if (spec.correlation.get(i, i) - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig(
                "correlation matrix must have a unit diagonal".into(),
            ));
        }
    }
    let factor = cholesky(&spec.correlation, PIVOT_FLOOR)
        .map_err(|_| Error::NonPositiveDefiniteCorrelation)?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = StandardNormal;
    let width = spec.n_rows.max(1_000_000).to_string().len();
    let mut row_ids = Vec::with_capacity(spec.n_rows);
    let mut values = Vec::with_capacity(spec.n_rows * k);
    let mut z = vec![0.0; k];
    for i in 0..spec.n_rows {
        row_ids.push(format!("r{:0width$}", i + 1));
        for zj in &mut z {
            *zj = normal.sample(&mut rng);
        }
        let y = factor.mul_vec(&z);
        for j in 0..k {
            values.push(spec.means[j] + spec.std_devs[j] * y[j]);
        }
    }
    let names = (1..=k).map(|j| format!("x{j}")).collect();
    CovariateTable::new(row_ids, names, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn table_from_rows(rows: &[(&str, &[f64])]) -> CovariateTable {
        let k = rows[0].1.len();
        let names = (1..=k).map(|j| format!("x{j}")).collect();
        CovariateTable::new(
            rows.iter().map(|(id, _)| id.to_string()).collect(),
            names,
            rows.iter().flat_map(|(_, v)| v.iter().copied()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn load_complete_rows() {
        let csv = "id,age,bmi\np1,40,22.5\np2,55,31.0\np3,62,27.25\n";
        let loaded = load_csv(csv.as_bytes()).unwrap();
        assert_eq!(loaded.table.n_rows(), 3);
        assert_eq!(loaded.excluded_rows, 0);
        assert_eq!(loaded.table.names(), ["age", "bmi"]);
        assert_eq!(loaded.table.row(1), [55.0, 31.0]);
    }

    #[test]
    fn load_excludes_incomplete_rows() {
        let csv = "id,age,bmi\np1,40,22.5\np2,,31.0\np3,62,27.25\n";
        let loaded = load_csv(csv.as_bytes()).unwrap();
        assert_eq!(loaded.table.n_rows(), 2);
        assert_eq!(loaded.excluded_rows, 1);
        assert!(loaded.table.index_of("p2").is_none());
    }

    #[test]
    fn load_excludes_unparseable_and_nonfinite_cells() {
        let csv = "id,a\np1,1.0\np2,oops\np3,NaN\np4,2.0\n";
        let loaded = load_csv(csv.as_bytes()).unwrap();
        assert_eq!(loaded.table.n_rows(), 2);
        assert_eq!(loaded.excluded_rows, 2);
    }

    #[test]
    fn load_rejects_duplicate_ids() {
        let csv = "id,a\np1,1.0\np1,2.0\n";
        assert!(matches!(
            load_csv(csv.as_bytes()),
            Err(Error::DuplicateRowId(id)) if id == "p1"
        ));
    }

    #[test]
    fn load_rejects_empty_and_headerless_input() {
        assert!(matches!(load_csv("".as_bytes()), Err(Error::EmptyInput)));
        assert!(matches!(
            load_csv("id,a\n".as_bytes()),
            Err(Error::EmptyInput)
        ));
        assert!(matches!(
            load_csv("id\np1\n".as_bytes()),
            Err(Error::NoCovariateColumns)
        ));
    }

    #[test]
    fn standardize_three_point_column() {
        let t = table_from_rows(&[("a", &[1.0]), ("b", &[2.0]), ("c", &[3.0])]);
        let (st, params) = standardize(&t).unwrap();
        assert_eq!(params.means, [2.0]);
        assert_eq!(params.std_devs, [1.0]);
        assert_eq!(st.row(0), [-1.0]);
        assert_eq!(st.row(1), [0.0]);
        assert_eq!(st.row(2), [1.0]);
        assert!(st.is_standardized());
    }

    #[test]
    fn standardize_rejects_constant_column() {
        let t = table_from_rows(&[("a", &[5.0]), ("b", &[5.0]), ("c", &[5.0])]);
        assert!(matches!(
            standardize(&t),
            Err(Error::ConstantColumn(name)) if name == "x1"
        ));
    }

    #[test]
    fn standardize_rejects_already_standardized() {
        let t = table_from_rows(&[("a", &[1.0]), ("b", &[2.0]), ("c", &[3.0])]);
        let (st, _) = standardize(&t).unwrap();
        assert!(matches!(standardize(&st), Err(Error::AlreadyStandardized)));
    }

    #[test]
    fn standardized_moments_vanish() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<(String, Vec<f64>)> = (0..100)
            .map(|i| {
                (
                    format!("p{i}"),
                    (0..3)
                        .map(|j| 10.0 * (j as f64 + 1.0) + rng.random_range(-5.0..5.0))
                        .collect(),
                )
            })
            .collect();
        let t = CovariateTable::new(
            rows.iter().map(|(id, _)| id.clone()).collect(),
            vec!["a".into(), "b".into(), "c".into()],
            rows.iter().flat_map(|(_, v)| v.iter().copied()).collect(),
        )
        .unwrap();
        let (st, _) = standardize(&t).unwrap();
        for j in 0..3 {
            let mean: f64 = (0..100).map(|i| st.row(i)[j]).sum::<f64>() / 100.0;
            let var: f64 = (0..100).map(|i| (st.row(i)[j] - mean).powi(2)).sum::<f64>() / 99.0;
            assert!(mean.abs() < 1e-9, "column {j} mean {mean}");
            assert!((var.sqrt() - 1.0).abs() < 1e-9, "column {j} sd {}", var.sqrt());
        }
    }

    #[test]
    fn standardize_is_idempotent_on_standardized_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..2).map(|_| rng.random_range(-3.0..9.0)).collect())
            .collect();
        let t = CovariateTable::new(
            (0..40).map(|i| format!("p{i}")).collect(),
            vec!["a".into(), "b".into()],
            rows.iter().flatten().copied().collect(),
        )
        .unwrap();
        let (once, _) = standardize(&t).unwrap();
        // Re-standardizing the standardized values (treated as raw) changes nothing.
        let again = CovariateTable::new(
            once.row_ids().to_vec(),
            once.names().to_vec(),
            (0..40).flat_map(|i| once.row(i).to_vec()).collect(),
        )
        .unwrap();
        let (twice, _) = standardize(&again).unwrap();
        for i in 0..40 {
            for j in 0..2 {
                assert!((once.row(i)[j] - twice.row(i)[j]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let values: Vec<f64> = (0..60)
            .map(|_| rng.random_range(-100.0..100.0) * rng.random_range(1e-6..1e6))
            .collect();
        let t = CovariateTable::new(
            (0..20).map(|i| format!("row-{i}")).collect(),
            vec!["u".into(), "v".into(), "w".into()],
            values,
        )
        .unwrap();
        let loaded = load_csv(t.to_csv_string().as_bytes()).unwrap();
        assert_eq!(loaded.excluded_rows, 0);
        assert_eq!(loaded.table.row_ids(), t.row_ids());
        assert_eq!(loaded.table.names(), t.names());
        for i in 0..20 {
            assert_eq!(loaded.table.row(i), t.row(i), "row {i} must round-trip bit-exactly");
        }
    }

    #[test]
    fn synthesize_single_row_and_determinism() {
        let spec = SynthSpec {
            n_rows: 1,
            means: vec![10.0, -3.0],
            std_devs: vec![2.0, 0.5],
            correlation: SymMatrix::identity(2),
            seed: 99,
        };
        let t = synthesize(&spec).unwrap();
        assert_eq!(t.n_rows(), 1);
        let t2 = synthesize(&spec).unwrap();
        assert_eq!(t.row(0), t2.row(0));
        assert_eq!(t.row_ids(), t2.row_ids());
    }

    #[test]
    fn synthesize_matches_requested_moments() {
        let means = [58.0, 30.19, 77.6, 117.23];
        let sds = [13.5, 7.45, 11.76, 71.43];
        let spec = SynthSpec {
            n_rows: 11_080,
            means: means.to_vec(),
            std_devs: sds.to_vec(),
            correlation: SymMatrix::identity(4),
            seed: 7,
        };
        let t = synthesize(&spec).unwrap();
        let n = t.n_rows() as f64;
        for j in 0..4 {
            let mean: f64 = (0..t.n_rows()).map(|i| t.row(i)[j]).sum::<f64>() / n;
            let se = sds[j] / n.sqrt();
            assert!(
                (mean - means[j]).abs() < 3.0 * se,
                "column {j}: sample mean {mean} vs {} (3 SE = {})",
                means[j],
                3.0 * se
            );
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn table_strategy() -> impl Strategy<Value = CovariateTable> {
            (1usize..4, 1usize..30).prop_flat_map(|(k, n)| {
                proptest::collection::vec(
                    (any::<i64>(), -320i32..300)
                        .prop_map(|(m, e)| (m as f64 / 1e3) * 10f64.powi(e))
                        .prop_filter("finite", |v| v.is_finite()),
                    n * k,
                )
                .prop_map(move |values| {
                    CovariateTable::new(
                        (0..n).map(|i| format!("p{i}")).collect(),
                        (1..=k).map(|j| format!("x{j}")).collect(),
                        values,
                    )
                    .unwrap()
                })
            })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            // 17 significant digits identify every finite f64, subnormals
            // included, so a write/read cycle must reproduce exact bits.
            #[test]
            fn csv_round_trip_is_bit_exact(table in table_strategy()) {
                let loaded = load_csv(table.to_csv_string().as_bytes()).unwrap();
                prop_assert_eq!(loaded.excluded_rows, 0);
                prop_assert_eq!(loaded.table.row_ids(), table.row_ids());
                for i in 0..table.n_rows() {
                    for (a, b) in loaded.table.row(i).iter().zip(table.row(i)) {
                        prop_assert_eq!(a.to_bits(), b.to_bits());
                    }
                }
            }
        }
    }

    #[test]
    fn synthesize_rejects_bad_correlation() {
        let mut corr = SymMatrix::identity(2);
        corr.set(0, 1, 1.5); // |ρ| > 1 cannot be positive definite
        let spec = SynthSpec {
            n_rows: 10,
            means: vec![0.0, 0.0],
            std_devs: vec![1.0, 1.0],
            correlation: corr,
            seed: 0,
        };
        assert!(matches!(
            synthesize(&spec),
            Err(Error::NonPositiveDefiniteCorrelation)
        ));
    }
}
