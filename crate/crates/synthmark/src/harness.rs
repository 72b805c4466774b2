//! Report assembly: runs the configured measures against a table source,
//! producing a stable JSON report and, for two-technique comparisons, a
//! plot-ready CSV of improvement factors.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::data::{DataError, Dataset};
use crate::forest::ForestError;
use crate::metrics::{
    correlation_diffs, count_inconsistencies, improvement_factor, k_marginal_score, median,
    pca_compare, pmse, regression_slope_error, sampling_equivalence, select_marginals,
    univariate_errors, CorrelationDiff, GroupFilter, InconsistencyCount, InconsistencyRule,
    KMarginalResult, MetricError, PcaResult, PmseResult, RegressionResult, UnivariateError,
    DEFAULT_CONTINUOUS_BINS, DEFAULT_SAMPLING_RATES,
};
use crate::microdata::MicrodataError;
use crate::privacy::{run_attack, AttackConfig, AttackResult, PrivacyError};
use crate::store::{SingleTableSource, StoreError, SynTableStore, TableSource};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Privacy(#[from] PrivacyError),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Microdata(#[from] MicrodataError),
    #[error("{0}")]
    BadArg(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// Process exit code: 3 when a required synthetic table is missing,
    /// 2 for any other validation or runtime failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Store(StoreError::MissingTable(_)) => 3,
            HarnessError::Metric(MetricError::Store(StoreError::MissingTable(_))) => 3,
            _ => 2,
        }
    }
}

/// Either a filled multi-table store or one synthetic table standing in
/// for every combination.
pub enum MeasureSource<'a> {
    Store(&'a SynTableStore),
    Single(&'a SingleTableSource),
}

impl TableSource for MeasureSource<'_> {
    fn fetch(&self, columns: &[String]) -> Result<Dataset, StoreError> {
        match self {
            MeasureSource::Store(s) => s.fetch(columns),
            MeasureSource::Single(s) => s.fetch(columns),
        }
    }
}

impl MeasureSource<'_> {
    /// The tables the propensity measure scores: every stored combination,
    /// or just the single table.
    fn pmse_tables(&self) -> Result<Vec<Dataset>, StoreError> {
        match self {
            MeasureSource::Store(s) => {
                let mut out = Vec::new();
                for combo in s.combinations() {
                    out.push(s.fetch(&combo)?);
                }
                Ok(out)
            }
            MeasureSource::Single(s) => Ok(vec![s.table().clone()]),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RegressionSpec {
    pub x: String,
    pub y: String,
    pub groups: Vec<GroupFilter>,
}

#[derive(Debug, Clone)]
pub struct MeasureOptions {
    /// None = run everything applicable.
    pub metrics: Option<BTreeSet<String>>,
    pub rules: Vec<InconsistencyRule>,
    pub attack: Option<AttackConfig>,
    pub regression: Option<RegressionSpec>,
    pub bins: usize,
    pub marginal_count: usize,
    pub sampling: bool,
    pub seed: u64,
}

impl Default for MeasureOptions {
    fn default() -> Self {
        MeasureOptions {
            metrics: None,
            rules: Vec::new(),
            attack: None,
            regression: None,
            bins: DEFAULT_CONTINUOUS_BINS,
            marginal_count: 50,
            sampling: false,
            seed: 0,
        }
    }
}

pub const KNOWN_METRICS: [&str; 8] = [
    "univariate",
    "correlation",
    "k_marginal",
    "regression",
    "pmse",
    "pca",
    "inconsistency",
    "attack",
];

impl MeasureOptions {
    fn wants(&self, name: &str) -> bool {
        match &self.metrics {
            None => true,
            Some(set) => set.contains(name),
        }
    }

    fn explicit(&self, name: &str) -> bool {
        matches!(&self.metrics, Some(set) if set.contains(name))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if let Some(set) = &self.metrics {
            for m in set {
                if !KNOWN_METRICS.contains(&m.as_str()) {
                    return Err(HarnessError::BadArg(format!(
                        "unknown metric `{m}` (known: {})",
                        KNOWN_METRICS.join(", ")
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Serialize)]
pub struct UnivariateSection {
    pub median_e_comp: f64,
    pub per_value: Vec<UnivariateError>,
}

#[derive(Debug, Serialize)]
pub struct CorrelationSection {
    pub median_diff: f64,
    pub pairs: Vec<CorrelationDiff>,
}

#[derive(Debug, Serialize)]
pub struct RegressionSection {
    pub median_e_reg: Option<f64>,
    pub results: Vec<RegressionResult>,
}

#[derive(Debug, Serialize)]
pub struct InconsistencySection {
    pub total_violations: u64,
    pub rules_violated: usize,
    pub counts: Vec<InconsistencyCount>,
}

#[derive(Debug, Serialize)]
pub struct AttackSection {
    pub mean_p_base: f64,
    pub sd_p_base: f64,
    pub mean_pi: Option<f64>,
    pub results: Vec<AttackResult>,
}

/// Everything one measurement run produced. Field order is fixed, so the
/// serialized report is byte-stable across reruns.
#[derive(Debug, Serialize)]
pub struct MetricReport {
    pub original_rows: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub univariate: Option<UnivariateSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correlation: Option<CorrelationSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_marginal: Option<KMarginalResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub regression: Option<RegressionSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pmse: Option<PmseResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pca: Option<PcaResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inconsistencies: Option<InconsistencySection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attack: Option<AttackSection>,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One summary number per measure, for cross-technique comparison.
    pub fn summary_values(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        if let Some(u) = &self.univariate {
            out.push(("univariate".into(), u.median_e_comp));
        }
        if let Some(c) = &self.correlation {
            out.push(("correlation".into(), c.median_diff));
        }
        if let Some(k) = &self.k_marginal {
            out.push(("k_marginal".into(), k.score as f64));
        }
        if let Some(r) = &self.regression {
            if let Some(m) = r.median_e_reg {
                out.push(("regression".into(), m));
            }
        }
        if let Some(p) = &self.pmse {
            out.push(("pmse".into(), p.average));
        }
        if let Some(p) = &self.pca {
            out.push(("pca".into(), p.mean_ks));
        }
        if let Some(i) = &self.inconsistencies {
            out.push(("inconsistency".into(), i.total_violations as f64));
        }
        if let Some(a) = &self.attack {
            if let Some(pi) = a.mean_pi {
                out.push(("attack".into(), pi));
            }
        }
        out
    }
}

/// The score a flawless technique would get on each measure.
pub fn perfect_score(measure: &str) -> f64 {
    match measure {
        "k_marginal" => 1000.0,
        _ => 0.0,
    }
}

/// Runs every requested measure of the source against the original.
pub fn measure(
    orig: &Dataset,
    source: &MeasureSource,
    opts: &MeasureOptions,
) -> Result<MetricReport, HarnessError> {
    opts.validate()?;
    let data_cols = orig.schema().data_column_names();

    let univariate = if opts.wants("univariate") {
        let mut per_value = Vec::new();
        for c in &data_cols {
            let syn = source.fetch(std::slice::from_ref(c))?;
            per_value.extend(univariate_errors(orig, &syn, c, opts.bins)?);
        }
        let med = median(&per_value.iter().map(|e| e.e_comp).collect::<Vec<_>>()).unwrap_or(0.0);
        Some(UnivariateSection {
            median_e_comp: med,
            per_value,
        })
    } else {
        None
    };

    let correlation = if opts.wants("correlation") && data_cols.len() >= 2 {
        let pairs = correlation_diffs(orig, source, &data_cols)?;
        let diffs: Vec<f64> = pairs
            .iter()
            .filter(|p| !p.flagged)
            .map(|p| p.diff)
            .collect();
        Some(CorrelationSection {
            median_diff: median(&diffs).unwrap_or(0.0),
            pairs,
        })
    } else {
        None
    };

    let k_marginal = if opts.wants("k_marginal") && data_cols.len() >= 3 {
        let marginals = select_marginals(&data_cols, opts.marginal_count, opts.seed);
        let mut result = k_marginal_score(orig, source, &marginals, opts.bins)?;
        if opts.sampling {
            result.sampling_equivalent = Some(sampling_equivalence(
                orig,
                &marginals,
                opts.bins,
                result.score,
                &DEFAULT_SAMPLING_RATES,
                5,
                opts.seed,
            )?);
        }
        Some(result)
    } else {
        None
    };

    let regression = match (&opts.regression, opts.wants("regression")) {
        (Some(spec), true) => {
            let syn = source.fetch(&[spec.x.clone(), spec.y.clone()])?;
            let results = regression_slope_error(orig, &syn, &spec.x, &spec.y, &spec.groups)?;
            let errs: Vec<f64> = results.iter().filter_map(|r| r.e_reg).collect();
            Some(RegressionSection {
                median_e_reg: median(&errs),
                results,
            })
        }
        _ => None,
    };

    let pmse_section = if opts.wants("pmse") {
        let tables = source.pmse_tables()?;
        if tables.is_empty() {
            None
        } else {
            Some(pmse(orig, &tables)?)
        }
    } else {
        None
    };

    let pca = if opts.wants("pca") && (data_cols.len() >= 5 || opts.explicit("pca")) {
        let syn = source.fetch(&data_cols)?;
        Some(pca_compare(orig, &syn, 5, 5)?)
    } else {
        None
    };

    let inconsistencies = if opts.wants("inconsistency") && !opts.rules.is_empty() {
        let counts = count_inconsistencies(source, &opts.rules)?;
        Some(InconsistencySection {
            total_violations: counts.iter().map(|c| c.count).sum(),
            rules_violated: counts.iter().filter(|c| c.count > 0).count(),
            counts,
        })
    } else {
        None
    };

    let attack = match (&opts.attack, opts.wants("attack")) {
        (Some(cfg), true) => {
            let mut cols: Vec<String> = cfg.qi.iter().chain(&cfg.targets).cloned().collect();
            cols.sort();
            cols.dedup();
            let syn = source.fetch(&cols)?;
            let results = run_attack(orig, &syn, cfg)?;
            let n = results.len() as f64;
            let mean_p_base = results.iter().map(|r| r.p_base).sum::<f64>() / n;
            let var = results
                .iter()
                .map(|r| (r.p_base - mean_p_base).powi(2))
                .sum::<f64>()
                / n;
            let pis: Vec<f64> = results.iter().filter_map(|r| r.pi).collect();
            Some(AttackSection {
                mean_p_base,
                sd_p_base: var.sqrt(),
                mean_pi: if pis.is_empty() {
                    None
                } else {
                    Some(pis.iter().sum::<f64>() / pis.len() as f64)
                },
                results,
            })
        }
        _ => None,
    };

    Ok(MetricReport {
        original_rows: orig.row_count(),
        univariate,
        correlation,
        k_marginal,
        regression,
        pmse: pmse_section,
        pca,
        inconsistencies,
        attack,
    })
}

// ---------------------------------------------------------------------------
// comparison
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
pub struct CompareRow {
    pub measure: String,
    pub ref_value: f64,
    pub alt_value: f64,
    pub improvement_factor: f64,
}

/// Per-measure improvement factors of the reference technique over the
/// alternative, for the measures both reports contain.
pub fn compare_reports(reference: &MetricReport, alternative: &MetricReport) -> Vec<CompareRow> {
    let alt: Vec<(String, f64)> = alternative.summary_values();
    let mut out = Vec::new();
    for (measure, ref_value) in reference.summary_values() {
        if let Some((_, alt_value)) = alt.iter().find(|(m, _)| m == &measure) {
            let f = improvement_factor(perfect_score(&measure), ref_value, *alt_value);
            out.push(CompareRow {
                measure,
                ref_value,
                alt_value: *alt_value,
                improvement_factor: f.factor,
            });
        }
    }
    out
}

pub fn format_factor(f: f64) -> String {
    if f == f64::INFINITY {
        "inf".to_string()
    } else if f == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{f:.4}")
    }
}

/// Writes the long-format plot CSV: one row per (measure, technique).
pub fn write_plot_csv(
    path: &Path,
    ref_name: &str,
    alt_name: &str,
    rows: &[CompareRow],
) -> Result<(), HarnessError> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "measure,technique,value,improvement_factor")?;
    for r in rows {
        writeln!(
            f,
            "{},{},{},{}",
            r.measure,
            ref_name,
            r.ref_value,
            format_factor(r.improvement_factor)
        )?;
        writeln!(
            f,
            "{},{},{},{}",
            r.measure,
            alt_name,
            r.alt_value,
            format_factor(r.improvement_factor)
        )?;
    }
    Ok(())
}
