//! Utility measures for synthetic tables: univariate count errors,
//! pairwise correlation differences, 3-marginal scores with sampling
//! equivalence, regression slope error, propensity MSE, PCA comparison,
//! inconsistency counting, and cross-technique improvement factors.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Cell, ColumnEncoding, ColumnKind, Dataset};
use crate::store::{StoreError, TableSource};

pub const DEFAULT_CONTINUOUS_BINS: usize = 100;
pub const DEFAULT_SAMPLING_RATES: [u32; 9] = [1, 5, 10, 20, 30, 40, 50, 75, 90];

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("column `{0}` missing")]
    MissingColumn(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("need vectors of equal length >= 2, got {0} and {1}")]
    BadLength(usize, usize),
    #[error("group `{0}` is empty in the original data")]
    EmptyGroup(String),
    #[error("degenerate pooled data: only one source class present")]
    DegeneratePool,
    #[error("need at least {needed} non-degenerate columns, found {found}")]
    TooFewColumns { needed: usize, found: usize },
    #[error("inconsistency rule references unknown column `{0}`")]
    UnknownRuleColumn(String),
}

// ---------------------------------------------------------------------------
// encoding helpers
// ---------------------------------------------------------------------------

/// Encode one column of any table to reals using the *original* table's
/// categorical coding, extending it deterministically for unseen values.
/// Both sides of every comparison must share one value-to-number map.
pub fn column_reals_with(
    ds: &Dataset,
    column: &str,
    ref_enc: &ColumnEncoding,
    kind: ColumnKind,
) -> Result<Vec<f64>, MetricError> {
    let idx = ds
        .schema()
        .index_of(column)
        .ok_or_else(|| MetricError::MissingColumn(column.to_string()))?;
    let base = ref_enc.coding(column);
    let mut extension: HashMap<&str, usize> = HashMap::new();
    let base_len = base.map(|c| c.len()).unwrap_or(0);
    let mut out = Vec::with_capacity(ds.row_count());
    for row in ds.rows() {
        let v = match (&row[idx], kind) {
            (Cell::Real(v), _) => *v,
            (Cell::Text(s), _) => {
                if let Some(code) = base.and_then(|c| c.code_of(s)) {
                    code as f64
                } else {
                    let next = base_len + extension.len();
                    (*extension.entry(s.as_str()).or_insert(next)) as f64
                }
            }
        };
        out.push(v);
    }
    Ok(out)
}

fn median_of(mut values: Vec<f64>) -> Option<f64> {
    values.retain(|v| v.is_finite());
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    })
}

/// Median over a metric collection, excluding flagged degenerate entries.
pub fn median(values: &[f64]) -> Option<f64> {
    median_of(values.to_vec())
}

// ---------------------------------------------------------------------------
// binning
// ---------------------------------------------------------------------------

/// Binning grid derived from the original data. Synthetic values outside
/// the original range clamp to the edge bins.
#[derive(Debug, Clone)]
pub enum ColumnBins {
    Categorical { cardinality: usize },
    Continuous { min: f64, width: f64, bins: usize },
}

impl ColumnBins {
    pub fn from_original(values: &[f64], kind: ColumnKind, bins: usize) -> ColumnBins {
        match kind {
            ColumnKind::Categorical => {
                let max = values.iter().cloned().fold(0.0f64, f64::max);
                ColumnBins::Categorical {
                    cardinality: (max as usize) + 1,
                }
            }
            _ => {
                let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
                let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                if !min.is_finite() || min == max {
                    ColumnBins::Continuous {
                        min: if min.is_finite() { min } else { 0.0 },
                        width: 1.0,
                        bins: 1,
                    }
                } else {
                    ColumnBins::Continuous {
                        min,
                        width: (max - min) / bins as f64,
                        bins,
                    }
                }
            }
        }
    }

    pub fn bin_count(&self) -> usize {
        match self {
            ColumnBins::Categorical { cardinality } => (*cardinality).max(1),
            ColumnBins::Continuous { bins, .. } => *bins,
        }
    }

    pub fn index(&self, v: f64) -> usize {
        match self {
            ColumnBins::Categorical { cardinality } => {
                let code = v.round() as i64;
                code.clamp(0, (*cardinality as i64 - 1).max(0)) as usize
            }
            ColumnBins::Continuous { min, width, bins } => {
                let i = ((v - min) / width).floor() as i64;
                i.clamp(0, *bins as i64 - 1) as usize
            }
        }
    }
}

// ---------------------------------------------------------------------------
// univariate errors
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct UnivariateError {
    pub column: String,
    pub value: String,
    pub c_o: u64,
    pub c_s: u64,
    pub e_abs: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub e_rel: Option<f64>,
    pub e_comp: f64,
}

/// Per-value (or per-bin) count errors for one column.
pub fn univariate_errors(
    orig: &Dataset,
    syn: &Dataset,
    column: &str,
    bins: usize,
) -> Result<Vec<UnivariateError>, MetricError> {
    let col = orig
        .schema()
        .column(column)
        .ok_or_else(|| MetricError::MissingColumn(column.to_string()))?;
    let kind = col.kind;
    let o_vals = column_reals_with(orig, column, orig.encoding(), kind)?;
    let s_vals = column_reals_with(syn, column, orig.encoding(), kind)?;

    let grid = ColumnBins::from_original(&o_vals, kind, bins);
    let mut o_counts: BTreeMap<usize, u64> = BTreeMap::new();
    let mut s_counts: BTreeMap<usize, u64> = BTreeMap::new();
    for v in &o_vals {
        *o_counts.entry(grid.index(*v)).or_default() += 1;
    }
    for v in &s_vals {
        *s_counts.entry(grid.index(*v)).or_default() += 1;
    }

    let keys: BTreeSet<usize> = o_counts.keys().chain(s_counts.keys()).copied().collect();
    let label = |bin: usize| -> String {
        match (&grid, kind) {
            (ColumnBins::Categorical { .. }, ColumnKind::Categorical) => orig
                .encoding()
                .coding(column)
                .and_then(|c| c.value_of(bin))
                .map(|s| s.to_string())
                .unwrap_or_else(|| format!("#{bin}")),
            (ColumnBins::Continuous { min, width, .. }, _) => {
                format!("[{};{})", min + bin as f64 * width, min + (bin + 1) as f64 * width)
            }
            _ => format!("#{bin}"),
        }
    };

    let mut out = Vec::with_capacity(keys.len());
    for bin in keys {
        let c_o = o_counts.get(&bin).copied().unwrap_or(0);
        let c_s = s_counts.get(&bin).copied().unwrap_or(0);
        let e_abs = (c_o as f64 - c_s as f64).abs();
        let e_rel = (c_o > 0).then(|| 100.0 * e_abs / c_o as f64);
        let e_comp = match e_rel {
            Some(r) => e_abs.min(r),
            None => e_abs,
        };
        out.push(UnivariateError {
            column: column.to_string(),
            value: label(bin),
            c_o,
            c_s,
            e_abs,
            e_rel,
            e_comp,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Kendall tau-b
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize)]
pub struct TauResult {
    pub tau: f64,
    /// True when an input is constant (undefined correlation, reported 0).
    pub flagged: bool,
}

fn merge_count_inversions(seq: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = seq.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let (left, right) = seq.split_at_mut(mid);
    let mut inv = merge_count_inversions(left, buf) + merge_count_inversions(right, buf);
    let (mut i, mut j, mut k) = (0, 0, 0);
    while i < left.len() && j < right.len() {
        if left[i] <= right[j] {
            buf[k] = left[i];
            i += 1;
        } else {
            // left[i] > right[j]: every remaining left element is discordant
            inv += (left.len() - i) as u64;
            buf[k] = right[j];
            j += 1;
        }
        k += 1;
    }
    buf[k..k + left.len() - i].copy_from_slice(&left[i..]);
    let k2 = k + left.len() - i;
    buf[k2..k2 + right.len() - j].copy_from_slice(&right[j..]);
    seq.copy_from_slice(&buf[..n]);
    inv
}

fn tie_pairs(sorted: &[f64]) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Tie-corrected Kendall tau-b via merge-sort inversion counting.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<TauResult, MetricError> {
    let n = x.len();
    if n != y.len() || n < 2 {
        return Err(MetricError::BadLength(n, y.len()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));

    let n0 = (n as u64) * (n as u64 - 1) / 2;
    let xs: Vec<f64> = order.iter().map(|&i| x[i]).collect();
    let n1 = tie_pairs(&xs);

    // joint ties: runs of equal (x, y)
    let mut n3 = 0u64;
    let mut run = 1u64;
    for w in order.windows(2) {
        if x[w[0]] == x[w[1]] && y[w[0]] == y[w[1]] {
            run += 1;
        } else {
            n3 += run * (run - 1) / 2;
            run = 1;
        }
    }
    n3 += run * (run - 1) / 2;

    let mut ys: Vec<f64> = order.iter().map(|&i| y[i]).collect();
    let mut buf = vec![0.0; n];
    let inversions = merge_count_inversions(&mut ys, &mut buf);
    // ys is now sorted
    let n2 = tie_pairs(&ys);

    let denom = ((n0 - n1) as f64) * ((n0 - n2) as f64);
    if denom <= 0.0 {
        return Ok(TauResult {
            tau: 0.0,
            flagged: true,
        });
    }
    let concordant_minus_discordant =
        n0 as i64 - n1 as i64 - n2 as i64 + n3 as i64 - 2 * inversions as i64;
    Ok(TauResult {
        tau: concordant_minus_discordant as f64 / denom.sqrt(),
        flagged: false,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CorrelationDiff {
    pub columns: (String, String),
    pub tau_o: f64,
    pub tau_s: f64,
    pub diff: f64,
    pub flagged: bool,
}

/// Pairwise tau difference for every unordered column pair, resolving each
/// pair's synthetic table through the source.
pub fn correlation_diffs(
    orig: &Dataset,
    source: &dyn TableSource,
    columns: &[String],
) -> Result<Vec<CorrelationDiff>, MetricError> {
    let mut out = Vec::new();
    for pair in columns.iter().sorted().combinations(2) {
        let (a, b) = (pair[0].clone(), pair[1].clone());
        let kind_a = orig
            .schema()
            .column(&a)
            .ok_or_else(|| MetricError::MissingColumn(a.clone()))?
            .kind;
        let kind_b = orig
            .schema()
            .column(&b)
            .ok_or_else(|| MetricError::MissingColumn(b.clone()))?
            .kind;
        let syn = source.fetch(&[a.clone(), b.clone()])?;

        let xo = column_reals_with(orig, &a, orig.encoding(), kind_a)?;
        let yo = column_reals_with(orig, &b, orig.encoding(), kind_b)?;
        let xs = column_reals_with(&syn, &a, orig.encoding(), kind_a)?;
        let ys = column_reals_with(&syn, &b, orig.encoding(), kind_b)?;

        let to = kendall_tau(&xo, &yo)?;
        let ts = if xs.len() >= 2 {
            kendall_tau(&xs, &ys)?
        } else {
            TauResult {
                tau: 0.0,
                flagged: true,
            }
        };
        out.push(CorrelationDiff {
            columns: (a, b),
            tau_o: to.tau,
            tau_s: ts.tau,
            diff: (to.tau - ts.tau).abs(),
            flagged: to.flagged || ts.flagged,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// k-marginal score
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct KMarginalResult {
    pub marginals: Vec<Vec<String>>,
    pub per_set_density_diff: Vec<f64>,
    pub per_set_score: Vec<f64>,
    pub score: i64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sampling_equivalent: Option<u32>,
}

fn marginal_grids(
    orig: &Dataset,
    columns: &[String],
    bins: usize,
) -> Result<Vec<(ColumnKind, ColumnBins)>, MetricError> {
    columns
        .iter()
        .map(|c| {
            let kind = orig
                .schema()
                .column(c)
                .ok_or_else(|| MetricError::MissingColumn(c.clone()))?
                .kind;
            let vals = column_reals_with(orig, c, orig.encoding(), kind)?;
            Ok((kind, ColumnBins::from_original(&vals, kind, bins)))
        })
        .collect()
}

fn density_map(
    ds: &Dataset,
    columns: &[String],
    grids: &[(ColumnKind, ColumnBins)],
    ref_enc: &ColumnEncoding,
) -> Result<HashMap<Vec<usize>, f64>, MetricError> {
    let cols: Vec<Vec<f64>> = columns
        .iter()
        .zip(grids)
        .map(|(c, (kind, _))| column_reals_with(ds, c, ref_enc, *kind))
        .collect::<Result<_, _>>()?;
    let n = ds.row_count();
    let mut counts: HashMap<Vec<usize>, f64> = HashMap::new();
    for r in 0..n {
        let cell: Vec<usize> = grids
            .iter()
            .enumerate()
            .map(|(i, (_, g))| g.index(cols[i][r]))
            .collect();
        *counts.entry(cell).or_default() += 1.0;
    }
    if n > 0 {
        for v in counts.values_mut() {
            *v /= n as f64;
        }
    }
    Ok(counts)
}

/// Total absolute density difference over the shared grid, in [0, 2].
pub fn marginal_density_diff(
    orig: &Dataset,
    syn: &Dataset,
    columns: &[String],
    bins: usize,
) -> Result<f64, MetricError> {
    let grids = marginal_grids(orig, columns, bins)?;
    let d_o = density_map(orig, columns, &grids, orig.encoding())?;
    let d_s = density_map(syn, columns, &grids, orig.encoding())?;
    let cells: BTreeSet<&Vec<usize>> = d_o.keys().chain(d_s.keys()).collect();
    let mut total = 0.0;
    for cell in cells {
        let a = d_o.get(cell).copied().unwrap_or(0.0);
        let b = d_s.get(cell).copied().unwrap_or(0.0);
        total += (a - b).abs();
    }
    Ok(total)
}

pub fn marginal_set_score(
    orig: &Dataset,
    syn: &Dataset,
    columns: &[String],
    bins: usize,
) -> Result<f64, MetricError> {
    let diff = marginal_density_diff(orig, syn, columns, bins)?;
    Ok(1000.0 * (1.0 - diff / 2.0))
}

/// 0-1000 agreement score averaged over 3-column marginal sets.
pub fn k_marginal_score(
    orig: &Dataset,
    source: &dyn TableSource,
    marginals: &[Vec<String>],
    bins: usize,
) -> Result<KMarginalResult, MetricError> {
    let mut diffs = Vec::with_capacity(marginals.len());
    let mut scores = Vec::with_capacity(marginals.len());
    for set in marginals {
        let syn = source.fetch(set)?;
        let diff = marginal_density_diff(orig, &syn, set, bins)?;
        diffs.push(diff);
        scores.push(1000.0 * (1.0 - diff / 2.0));
    }
    let mean = if scores.is_empty() {
        0.0
    } else {
        scores.iter().sum::<f64>() / scores.len() as f64
    };
    Ok(KMarginalResult {
        marginals: marginals.to_vec(),
        per_set_density_diff: diffs,
        per_set_score: scores,
        score: mean.round() as i64,
        sampling_equivalent: None,
    })
}

/// Seeded uniform sample (without replacement) of 3-column sets.
pub fn select_marginals(columns: &[String], count: usize, seed: u64) -> Vec<Vec<String>> {
    let mut all: Vec<Vec<String>> = columns
        .iter()
        .sorted()
        .cloned()
        .combinations(3)
        .collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x6d61_7267);
    all.shuffle(&mut rng);
    all.truncate(count);
    all.sort();
    all
}

/// Mean k-marginal score of seeded subsamples of the original, per rate.
pub fn sampled_score_curve(
    orig: &Dataset,
    marginals: &[Vec<String>],
    bins: usize,
    rates: &[u32],
    trials: usize,
    seed: u64,
) -> Result<Vec<(u32, f64)>, MetricError> {
    let n = orig.row_count();
    let mut curve = Vec::with_capacity(rates.len());
    for (ri, &rate) in rates.iter().enumerate() {
        let take = ((n as f64 * rate as f64 / 100.0).round() as usize).clamp(1, n);
        let mut scores = Vec::with_capacity(trials);
        for t in 0..trials {
            let mut rng =
                ChaCha20Rng::seed_from_u64(seed ^ (ri as u64) << 32 ^ (t as u64) << 8 ^ 0x73616d70);
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            idx.truncate(take);
            let rows: Vec<Vec<Cell>> = idx.iter().map(|&i| orig.rows()[i].clone()).collect();
            let sample = Dataset::new(orig.schema().clone(), rows)
                .map_err(|e| MetricError::Store(StoreError::Data(e)))?;
            let mut per_set = Vec::with_capacity(marginals.len());
            for set in marginals {
                per_set.push(marginal_set_score(orig, &sample, set, bins)?);
            }
            scores.push(per_set.iter().sum::<f64>() / per_set.len().max(1) as f64);
        }
        curve.push((rate, scores.iter().sum::<f64>() / trials.max(1) as f64));
    }
    Ok(curve)
}

/// The largest sampling rate whose mean sampled score does not exceed the
/// synthetic score. A score below every sampled score maps to the lowest rate.
pub fn sampling_equivalence(
    orig: &Dataset,
    marginals: &[Vec<String>],
    bins: usize,
    score: i64,
    rates: &[u32],
    trials: usize,
    seed: u64,
) -> Result<u32, MetricError> {
    let curve = sampled_score_curve(orig, marginals, bins, rates, trials, seed)?;
    let mut best = *rates.iter().min().unwrap_or(&0);
    for (rate, mean) in curve {
        if mean <= score as f64 {
            best = best.max(rate);
        }
    }
    Ok(best)
}

// ---------------------------------------------------------------------------
// regression slope error
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupFilter {
    pub label: String,
    /// Equality conditions on raw cell values (column, value).
    #[serde(default)]
    pub conditions: Vec<(String, String)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RegressionResult {
    pub label: String,
    pub s_o: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub e_reg: Option<f64>,
    pub flagged: bool,
}

/// Closed-form OLS slope.
pub fn ols_slope(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(MetricError::BadLength(x.len(), y.len()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        num += (xi - mx) * (yi - my);
        den += (xi - mx) * (xi - mx);
    }
    if den == 0.0 {
        return Ok(0.0);
    }
    Ok(num / den)
}

fn cell_matches(cell: &Cell, value: &str) -> bool {
    match cell {
        Cell::Text(s) => s == value,
        Cell::Real(v) => value.parse::<f64>().map(|p| p == *v).unwrap_or(false),
    }
}

fn filter_rows<'a>(ds: &'a Dataset, group: &GroupFilter) -> Vec<usize> {
    (0..ds.row_count())
        .filter(|&r| {
            group.conditions.iter().all(|(col, val)| {
                ds.cell(r, col)
                    .map(|c| cell_matches(c, val))
                    .unwrap_or(false)
            })
        })
        .collect()
}

/// Per-group absolute slope error between original and synthetic OLS fits.
pub fn regression_slope_error(
    orig: &Dataset,
    syn: &Dataset,
    x_col: &str,
    y_col: &str,
    groups: &[GroupFilter],
) -> Result<Vec<RegressionResult>, MetricError> {
    let default_groups = vec![GroupFilter {
        label: "all".to_string(),
        conditions: Vec::new(),
    }];
    let groups = if groups.is_empty() {
        &default_groups
    } else {
        groups
    };

    let kind_x = orig
        .schema()
        .column(x_col)
        .ok_or_else(|| MetricError::MissingColumn(x_col.to_string()))?
        .kind;
    let kind_y = orig
        .schema()
        .column(y_col)
        .ok_or_else(|| MetricError::MissingColumn(y_col.to_string()))?
        .kind;

    let xo = column_reals_with(orig, x_col, orig.encoding(), kind_x)?;
    let yo = column_reals_with(orig, y_col, orig.encoding(), kind_y)?;
    let xs = column_reals_with(syn, x_col, orig.encoding(), kind_x)?;
    let ys = column_reals_with(syn, y_col, orig.encoding(), kind_y)?;

    let mut out = Vec::with_capacity(groups.len());
    for g in groups {
        let o_rows = filter_rows(orig, g);
        if o_rows.len() < 3 {
            return Err(MetricError::EmptyGroup(g.label.clone()));
        }
        let s_rows = filter_rows(syn, g);
        let gx: Vec<f64> = o_rows.iter().map(|&r| xo[r]).collect();
        let gy: Vec<f64> = o_rows.iter().map(|&r| yo[r]).collect();
        let s_o = ols_slope(&gx, &gy)?;
        if s_rows.len() < 3 {
            out.push(RegressionResult {
                label: g.label.clone(),
                s_o,
                s_s: None,
                e_reg: None,
                flagged: true,
            });
            continue;
        }
        let hx: Vec<f64> = s_rows.iter().map(|&r| xs[r]).collect();
        let hy: Vec<f64> = s_rows.iter().map(|&r| ys[r]).collect();
        let s_s = ols_slope(&hx, &hy)?;
        out.push(RegressionResult {
            label: g.label.clone(),
            s_o,
            s_s: Some(s_s),
            e_reg: Some((s_o - s_s).abs()),
            flagged: false,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// propensity MSE
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct PmseResult {
    pub per_table: Vec<f64>,
    pub average: f64,
}

/// One-hot / z-scored base features plus first-order cross-column
/// interaction products.
fn propensity_features(
    orig: &Dataset,
    syn: &Dataset,
    columns: &[String],
) -> Result<(DMatrix<f64>, Vec<f64>, f64), MetricError> {
    let n_o = orig.row_count();
    let n_s = syn.row_count();
    if n_o == 0 || n_s == 0 {
        return Err(MetricError::DegeneratePool);
    }
    let n = n_o + n_s;

    // base features, column-major, with the owning column index
    let mut base: Vec<(usize, Vec<f64>)> = Vec::new();
    for (ci, col) in columns.iter().enumerate() {
        let kind = orig
            .schema()
            .column(col)
            .ok_or_else(|| MetricError::MissingColumn(col.clone()))?
            .kind;
        let mut vals = column_reals_with(orig, col, orig.encoding(), kind)?;
        vals.extend(column_reals_with(syn, col, orig.encoding(), kind)?);
        match kind {
            ColumnKind::Categorical => {
                let k = vals.iter().cloned().fold(0.0f64, f64::max) as usize + 1;
                for code in 0..k {
                    let f: Vec<f64> = vals
                        .iter()
                        .map(|&v| if v.round() as usize == code { 1.0 } else { 0.0 })
                        .collect();
                    base.push((ci, f));
                }
            }
            _ => {
                let mean = vals.iter().sum::<f64>() / n as f64;
                let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                let sd = var.sqrt();
                let f: Vec<f64> = if sd > 0.0 {
                    vals.iter().map(|v| (v - mean) / sd).collect()
                } else {
                    vec![0.0; n]
                };
                base.push((ci, f));
            }
        }
    }

    let mut features: Vec<Vec<f64>> = base.iter().map(|(_, f)| f.clone()).collect();
    for i in 0..base.len() {
        for j in (i + 1)..base.len() {
            if base[i].0 == base[j].0 {
                continue; // interactions pair distinct columns
            }
            let prod: Vec<f64> = base[i]
                .1
                .iter()
                .zip(&base[j].1)
                .map(|(a, b)| a * b)
                .collect();
            features.push(prod);
        }
    }

    let d = features.len();
    let mut x = DMatrix::zeros(n, d + 1);
    for r in 0..n {
        x[(r, 0)] = 1.0;
        for (c, f) in features.iter().enumerate() {
            x[(r, c + 1)] = f[r];
        }
    }
    let mut labels = vec![0.0; n_o];
    labels.extend(vec![1.0; n_s]);
    let c = n_s as f64 / n as f64;
    Ok((x, labels, c))
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Ridge-regularized logistic regression fit by Newton iterations.
/// Returns predicted probabilities.
fn fit_logistic(x: &DMatrix<f64>, y: &[f64], lambda: f64, iters: usize) -> Vec<f64> {
    let (n, d) = (x.nrows(), x.ncols());
    let mut w = DVector::zeros(d);
    for _ in 0..iters {
        let z = x * &w;
        let p: DVector<f64> = z.map(sigmoid);
        let mut grad = DVector::zeros(d);
        for i in 0..n {
            let e = p[i] - y[i];
            for j in 0..d {
                grad[j] += e * x[(i, j)];
            }
        }
        grad /= n as f64;
        for j in 1..d {
            grad[j] += lambda * w[j]; // intercept unpenalized
        }
        let mut hess = DMatrix::zeros(d, d);
        for i in 0..n {
            let s = (p[i] * (1.0 - p[i])).max(1e-9);
            for j in 0..d {
                let xj = x[(i, j)] * s;
                for k in j..d {
                    hess[(j, k)] += xj * x[(i, k)];
                }
            }
        }
        hess /= n as f64;
        for j in 0..d {
            for k in 0..j {
                hess[(j, k)] = hess[(k, j)];
            }
            hess[(j, j)] += if j == 0 { 1e-9 } else { lambda };
        }
        let step = match hess.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => grad.clone(),
        };
        let delta: f64 = step.norm();
        w -= &step;
        if delta < 1e-10 {
            break;
        }
    }
    let z = x * &w;
    (0..n).map(|i| sigmoid(z[i])).collect()
}

/// Propensity MSE of one synthetic table against the original projected to
/// the same columns.
pub fn pmse_single(orig: &Dataset, syn: &Dataset) -> Result<f64, MetricError> {
    let columns = syn.schema().names();
    let orig_proj = orig
        .project(&columns)
        .map_err(|_| MetricError::MissingColumn(columns.join("+")))?;
    let (x, y, c) = propensity_features(&orig_proj, syn, &columns)?;
    let p = fit_logistic(&x, &y, 1e-4, 30);
    Ok(p.iter().map(|pi| (pi - c) * (pi - c)).sum::<f64>() / p.len() as f64)
}

/// Multi-table PMSE: one per table, plus the arithmetic mean.
pub fn pmse(orig: &Dataset, syn_tables: &[Dataset]) -> Result<PmseResult, MetricError> {
    let mut per_table = Vec::with_capacity(syn_tables.len());
    for t in syn_tables {
        per_table.push(pmse_single(orig, t)?);
    }
    let average = per_table.iter().sum::<f64>() / per_table.len().max(1) as f64;
    Ok(PmseResult { per_table, average })
}

// ---------------------------------------------------------------------------
// two-sample KS and PCA comparison
// ---------------------------------------------------------------------------

/// Two-sample Kolmogorov-Smirnov statistic: max gap between empirical CDFs.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricError::BadLength(a.len(), b.len()));
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    let (n, m) = (sa.len(), sb.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let v = sa[i].min(sb[j]);
        while i < n && sa[i] == v {
            i += 1;
        }
        while j < m && sb[j] == v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    Ok(d)
}

#[derive(Debug, Clone, Serialize)]
pub struct PcaResult {
    /// Per component: the retained (column, loading) pairs.
    pub components: Vec<Vec<(String, f64)>>,
    pub ks: Vec<f64>,
    pub mean_ks: f64,
}

/// Compares original and synthetic projections onto the original data's
/// top principal components, truncated to the largest-magnitude loadings.
pub fn pca_compare(
    orig: &Dataset,
    syn_full: &Dataset,
    n_components: usize,
    features_per_pc: usize,
) -> Result<PcaResult, MetricError> {
    let columns = orig.schema().data_column_names();
    let mut o_cols: Vec<(String, Vec<f64>)> = Vec::new();
    let mut s_cols: Vec<Vec<f64>> = Vec::new();
    for c in &columns {
        let kind = orig.schema().column(c).unwrap().kind;
        let ov = column_reals_with(orig, c, orig.encoding(), kind)?;
        let sv = column_reals_with(syn_full, c, orig.encoding(), kind)?;
        let n = ov.len() as f64;
        let mean = ov.iter().sum::<f64>() / n;
        let sd = (ov.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        if sd == 0.0 {
            continue; // degenerate column
        }
        o_cols.push((
            c.clone(),
            ov.iter().map(|v| (v - mean) / sd).collect(),
        ));
        s_cols.push(sv.iter().map(|v| (v - mean) / sd).collect());
    }
    if o_cols.len() < n_components {
        return Err(MetricError::TooFewColumns {
            needed: n_components,
            found: o_cols.len(),
        });
    }

    let d = o_cols.len();
    let n = o_cols[0].1.len();
    let mut cov = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let mut s = 0.0;
            for r in 0..n {
                s += o_cols[i].1[r] * o_cols[j].1[r];
            }
            let v = s / (n as f64 - 1.0).max(1.0);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }

    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut components = Vec::with_capacity(n_components);
    let mut ks = Vec::with_capacity(n_components);
    for &ei in order.iter().take(n_components) {
        let vec = eig.eigenvectors.column(ei);
        // keep the largest-magnitude loadings, re-normalize
        let mut loadings: Vec<(usize, f64)> = (0..d).map(|i| (i, vec[i])).collect();
        loadings.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()));
        loadings.truncate(features_per_pc);
        let norm = loadings.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
        for (_, v) in loadings.iter_mut() {
            *v /= norm;
        }
        loadings.sort_by_key(|(i, _)| *i);

        let project = |cols: &dyn Fn(usize) -> &Vec<f64>, rows: usize| -> Vec<f64> {
            (0..rows)
                .map(|r| loadings.iter().map(|&(i, w)| w * cols(i)[r]).sum())
                .collect()
        };
        let po = project(&|i| &o_cols[i].1, n);
        let ps = project(&|i| &s_cols[i], s_cols[0].len());
        ks.push(ks_statistic(&po, &ps)?);
        components.push(
            loadings
                .iter()
                .map(|&(i, w)| (o_cols[i].0.clone(), w))
                .collect(),
        );
    }
    let mean_ks = ks.iter().sum::<f64>() / ks.len().max(1) as f64;
    Ok(PcaResult {
        components,
        ks,
        mean_ks,
    })
}

// ---------------------------------------------------------------------------
// inconsistency rules
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum PredicateOp {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "==")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
    IsNull,
    NonNull,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Predicate {
    pub op: PredicateOp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
}

impl Predicate {
    fn eval(&self, cell: &Cell) -> bool {
        let is_null = matches!(cell, Cell::Text(s) if s.is_empty());
        match self.op {
            PredicateOp::IsNull => is_null,
            PredicateOp::NonNull => !is_null,
            _ => {
                let target = self.value.as_deref().unwrap_or("");
                match cell {
                    Cell::Real(v) => {
                        let t: f64 = match target.parse() {
                            Ok(t) => t,
                            Err(_) => return false,
                        };
                        match self.op {
                            PredicateOp::Lt => *v < t,
                            PredicateOp::Le => *v <= t,
                            PredicateOp::Gt => *v > t,
                            PredicateOp::Ge => *v >= t,
                            PredicateOp::Eq => *v == t,
                            PredicateOp::Ne => *v != t,
                            _ => unreachable!(),
                        }
                    }
                    Cell::Text(s) => match self.op {
                        PredicateOp::Eq => s == target,
                        PredicateOp::Ne => s != target,
                        // numeric comparisons on text fall back to parse
                        _ => match (s.parse::<f64>(), target.parse::<f64>()) {
                            (Ok(v), Ok(t)) => match self.op {
                                PredicateOp::Lt => v < t,
                                PredicateOp::Le => v <= t,
                                PredicateOp::Gt => v > t,
                                PredicateOp::Ge => v >= t,
                                _ => unreachable!(),
                            },
                            _ => false,
                        },
                    },
                }
            }
        }
    }
}

/// A declared-impossible combination of two column predicates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InconsistencyRule {
    pub col_a: String,
    pub pred_a: Predicate,
    pub col_b: String,
    pub pred_b: Predicate,
}

#[derive(Debug, Clone, Serialize)]
pub struct InconsistencyCount {
    pub rule: InconsistencyRule,
    pub count: u64,
}

pub fn count_inconsistencies_in(
    table: &Dataset,
    rule: &InconsistencyRule,
) -> Result<u64, MetricError> {
    let ia = table
        .schema()
        .index_of(&rule.col_a)
        .ok_or_else(|| MetricError::UnknownRuleColumn(rule.col_a.clone()))?;
    let ib = table
        .schema()
        .index_of(&rule.col_b)
        .ok_or_else(|| MetricError::UnknownRuleColumn(rule.col_b.clone()))?;
    Ok(table
        .rows()
        .iter()
        .filter(|r| rule.pred_a.eval(&r[ia]) && rule.pred_b.eval(&r[ib]))
        .count() as u64)
}

/// Per-rule violation counts, resolving each rule's 2-column table through
/// the source.
pub fn count_inconsistencies(
    source: &dyn TableSource,
    rules: &[InconsistencyRule],
) -> Result<Vec<InconsistencyCount>, MetricError> {
    let mut out = Vec::with_capacity(rules.len());
    for rule in rules {
        let table = source.fetch(&[rule.col_a.clone(), rule.col_b.clone()])?;
        let count = count_inconsistencies_in(&table, rule)?;
        out.push(InconsistencyCount {
            rule: rule.clone(),
            count,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// improvement factor
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct ImprovementFactor {
    pub s_perfect: f64,
    pub delta_ref: f64,
    pub delta_alt: f64,
    /// Signed ratio; +inf / -inf sentinels when one side is exact.
    pub factor: f64,
}

/// Signed ratio of two techniques' distances from a perfect score.
pub fn improvement_factor(s_perfect: f64, s_ref: f64, s_alt: f64) -> ImprovementFactor {
    let delta_ref = (s_perfect - s_ref).abs();
    let delta_alt = (s_perfect - s_alt).abs();
    let factor = if delta_ref == 0.0 && delta_alt == 0.0 {
        1.0
    } else if delta_ref == 0.0 {
        f64::INFINITY
    } else if delta_alt == 0.0 {
        f64::NEG_INFINITY
    } else if delta_alt >= delta_ref {
        delta_alt / delta_ref
    } else {
        -delta_ref / delta_alt
    };
    ImprovementFactor {
        s_perfect,
        delta_ref,
        delta_alt,
        factor,
    }
}
