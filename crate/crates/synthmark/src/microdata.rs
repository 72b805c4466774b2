//! Microdata generation: turning a tree family into synthetic rows, plus
//! the clustering/stitching path that covers column combinations wider
//! than the maximum tree dimension.

use std::collections::BTreeSet;
use std::path::Path;

use itertools::Itertools;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Deserialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{Cell, ColumnKind, DataError, Dataset, Schema};
use crate::forest::{
    build_forest, prf_uniform, AnonParams, Forest, ForestError, SnappedInterval, Tree, TreeNode,
};
use crate::metrics::{column_reals_with, kendall_tau};
use crate::store::{StoreError, SynTableStore};

#[derive(Debug, Error)]
pub enum MicrodataError {
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("no tree for columns `{0}`")]
    MissingTree(String),
    #[error("invalid synthesis plan: {0}")]
    Plan(String),
}

// ---------------------------------------------------------------------------
// single-combination synthesis
// ---------------------------------------------------------------------------

/// Where each synthetic row came from: the emitting leaf and how many rows
/// it produced. Used to audit that no output region traces back to fewer
/// entities than the hard threshold.
#[derive(Debug, Clone)]
pub struct LeafTrace {
    pub key: String,
    pub intervals: Vec<SnappedInterval>,
    pub true_entity_count: u64,
    pub emitted: usize,
}

fn intersect(a: &SnappedInterval, b: &SnappedInterval) -> Option<SnappedInterval> {
    // snapped intervals are nested or disjoint, never partially overlapping
    if a.covers(b) {
        Some(*b)
    } else if b.covers(a) {
        Some(*a)
    } else {
        None
    }
}

fn draw_in(iv: &SnappedInterval, kind: ColumnKind, u: f64) -> f64 {
    if iv.is_singleton() {
        return iv.offset;
    }
    match kind {
        ColumnKind::Categorical => {
            // integer codes live at unit offsets within the interval
            (iv.offset + (u * iv.size).floor()).min(iv.offset + iv.size - 1.0)
        }
        _ => iv.offset + u * iv.size,
    }
}

fn measure(iv: &SnappedInterval) -> f64 {
    if iv.is_singleton() {
        1.0
    } else {
        iv.size
    }
}

/// Refine one dimension of a leaf through the matching 1-dimensional tree:
/// pick an emitting sub-leaf weighted by noisy count, then draw uniformly
/// within it.
fn refine_value(
    refine_tree: &Tree,
    kind: ColumnKind,
    target: &SnappedInterval,
    u_leaf: f64,
    u_value: f64,
) -> f64 {
    let node = match refine_tree.deepest_covering(target) {
        Some(n) => n,
        None => return draw_in(target, kind, u_value),
    };
    let mut leaves = Vec::new();
    Tree::emitting_leaves(node, &mut leaves);
    let mut choices: Vec<(SnappedInterval, f64)> = Vec::new();
    for leaf in leaves {
        if let Some(iv) = intersect(&leaf.intervals[0], target) {
            // scale by the surviving fraction when the leaf straddles wider
            let frac = measure(&iv) / measure(&leaf.intervals[0]);
            let w = leaf.noisy_count * frac;
            if w > 0.0 {
                choices.push((iv, w));
            }
        }
    }
    let total: f64 = choices.iter().map(|(_, w)| w).sum();
    if total <= 0.0 {
        return draw_in(target, kind, u_value);
    }
    let mut x = u_leaf * total;
    for (iv, w) in &choices {
        x -= w;
        if x <= 0.0 {
            return draw_in(iv, kind, u_value);
        }
    }
    draw_in(&choices.last().unwrap().0, kind, u_value)
}

fn shuffle_seed(salt: &[u8], tag: &[u8], columns: &[String]) -> u64 {
    let mut h = Sha256::new();
    h.update(salt);
    h.update([0xfd]);
    h.update(tag);
    for c in columns {
        h.update([0xfc]);
        h.update(c.as_bytes());
    }
    u64::from_be_bytes(h.finalize()[..8].try_into().unwrap())
}

/// Generates the synthetic table for the forest's full column combination,
/// recording the per-leaf emission trace.
pub fn synthesize_table_with_trace(
    forest: &Forest,
    orig: &Dataset,
) -> Result<(Dataset, Vec<LeafTrace>), MicrodataError> {
    let columns = forest.columns.clone();
    let tree = forest
        .tree(&columns)
        .ok_or_else(|| MicrodataError::MissingTree(columns.join("+")))?;
    let schema = orig.schema().project(&columns)?;
    let salt = &forest.params.salt;

    // a table whose root fails the hard threshold releases nothing
    if tree.root.true_entity_count < forest.params.abs_suppress_threshold as u64 {
        let (ds, _) = Dataset::decode_rows(&[], orig.encoding(), &schema)?;
        return Ok((ds, Vec::new()));
    }

    let mut leaves: Vec<&TreeNode> = Vec::new();
    Tree::emitting_leaves(&tree.root, &mut leaves);

    let mut matrix: Vec<Vec<f64>> = Vec::new();
    let mut trace = Vec::with_capacity(leaves.len());
    for leaf in leaves {
        let key = leaf.key(&tree.columns);
        let emit = leaf.noisy_count.round_ties_even().max(0.0) as usize;
        for r in 0..emit {
            let mut row = Vec::with_capacity(columns.len());
            for (d, col) in tree.columns.iter().enumerate() {
                let kind = tree.kinds[d];
                let u_leaf = prf_uniform(salt, b"micro-leaf", &key, &[r as u64, d as u64, 0]);
                let u_value = prf_uniform(salt, b"micro-value", &key, &[r as u64, d as u64, 1]);
                let v = match forest.tree(std::slice::from_ref(col)) {
                    Some(refine) => {
                        refine_value(refine, kind, &leaf.intervals[d], u_leaf, u_value)
                    }
                    None => draw_in(&leaf.intervals[d], kind, u_value),
                };
                row.push(v);
            }
            matrix.push(row);
        }
        trace.push(LeafTrace {
            key: key.label(),
            intervals: leaf.intervals.clone(),
            true_entity_count: leaf.true_entity_count,
            emitted: emit,
        });
    }

    let mut rng = ChaCha20Rng::seed_from_u64(shuffle_seed(salt, b"rows", &columns));
    matrix.shuffle(&mut rng);
    let (ds, _warnings) = Dataset::decode_rows(&matrix, orig.encoding(), &schema)?;
    Ok((ds, trace))
}

pub fn synthesize_table(forest: &Forest, orig: &Dataset) -> Result<Dataset, MicrodataError> {
    Ok(synthesize_table_with_trace(forest, orig)?.0)
}

// ---------------------------------------------------------------------------
// clustering
// ---------------------------------------------------------------------------

/// How a wide combination decomposes into tree-sized clusters. Cluster `i`
/// (for `i > 0`) is synthesized together with `stitch_columns[i - 1]`,
/// which carry the dependence across the seam.
#[derive(Debug, Clone)]
pub struct ClusterPlan {
    pub clusters: Vec<Vec<String>>,
    pub stitch_columns: Vec<Vec<String>>,
}

fn dependence_matrix(ds: &Dataset, columns: &[String]) -> Result<Vec<Vec<f64>>, MicrodataError> {
    let n = columns.len();
    let mut vals = Vec::with_capacity(n);
    for c in columns {
        let kind = ds
            .schema()
            .column(c)
            .ok_or_else(|| ForestError::UnknownColumn(c.clone()))?
            .kind;
        vals.push(
            column_reals_with(ds, c, ds.encoding(), kind)
                .map_err(|_| ForestError::UnknownColumn(c.clone()))?,
        );
    }
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let t = kendall_tau(&vals[i], &vals[j])
                .map(|r| if r.flagged { 0.0 } else { r.tau.abs() })
                .unwrap_or(0.0);
            m[i][j] = t;
            m[j][i] = t;
        }
    }
    Ok(m)
}

/// Greedy dependence-first clustering. Each cluster seeds on the most
/// correlated remaining pair and grows by mean dependence to the cluster.
pub fn plan_clusters(
    ds: &Dataset,
    columns: &[String],
    max_cluster_dim: usize,
) -> Result<ClusterPlan, MicrodataError> {
    let cols: Vec<String> = columns.iter().sorted().cloned().collect();
    let dep = dependence_matrix(ds, &cols)?;
    let idx_of = |c: &String| cols.iter().position(|x| x == c).unwrap();
    let max_cluster_dim = max_cluster_dim.max(1);

    let mut remaining: Vec<String> = cols.clone();
    let mut placed: Vec<String> = Vec::new();
    let mut clusters: Vec<Vec<String>> = Vec::new();
    let mut stitch_columns: Vec<Vec<String>> = Vec::new();

    while !remaining.is_empty() {
        let mut cluster: Vec<String> = Vec::new();
        if remaining.len() == 1 || max_cluster_dim == 1 {
            cluster.push(remaining[0].clone());
        } else {
            // seed with the strongest remaining pair (ties: lexicographic)
            let mut best = (0usize, 1usize, -1.0f64);
            for i in 0..remaining.len() {
                for j in (i + 1)..remaining.len() {
                    let t = dep[idx_of(&remaining[i])][idx_of(&remaining[j])];
                    if t > best.2 {
                        best = (i, j, t);
                    }
                }
            }
            cluster.push(remaining[best.0].clone());
            cluster.push(remaining[best.1].clone());
        }
        remaining.retain(|c| !cluster.contains(c));

        while cluster.len() < max_cluster_dim && !remaining.is_empty() {
            let next = remaining
                .iter()
                .max_by(|a, b| {
                    let score = |c: &String| {
                        cluster.iter().map(|m| dep[idx_of(c)][idx_of(m)]).sum::<f64>()
                    };
                    score(a)
                        .total_cmp(&score(b))
                        .then_with(|| b.cmp(a)) // prefer lexicographically first on ties
                })
                .cloned()
                .unwrap();
            remaining.retain(|c| c != &next);
            cluster.push(next);
        }
        cluster.sort();

        if !placed.is_empty() {
            // up to two previously placed columns with the strongest pull
            let mut ranked: Vec<&String> = placed.iter().collect();
            ranked.sort_by(|a, b| {
                let score = |c: &String| {
                    cluster.iter().map(|m| dep[idx_of(c)][idx_of(m)]).sum::<f64>()
                };
                score(b).total_cmp(&score(a)).then_with(|| a.cmp(b))
            });
            let mut stitch: Vec<String> = ranked.into_iter().take(2).cloned().collect();
            stitch.sort();
            stitch_columns.push(stitch);
        }
        placed.extend(cluster.iter().cloned());
        clusters.push(cluster);
    }

    Ok(ClusterPlan {
        clusters,
        stitch_columns,
    })
}

// ---------------------------------------------------------------------------
// stitching
// ---------------------------------------------------------------------------

fn cmp_cells(a: &[Cell], b: &[Cell]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        let ord = match (x, y) {
            (Cell::Real(u), Cell::Real(v)) => u.total_cmp(v),
            (Cell::Text(u), Cell::Text(v)) => u.cmp(v),
            (Cell::Real(_), Cell::Text(_)) => std::cmp::Ordering::Less,
            (Cell::Text(_), Cell::Real(_)) => std::cmp::Ordering::Greater,
        };
        if ord != std::cmp::Ordering::Equal {
            return ord;
        }
    }
    std::cmp::Ordering::Equal
}

fn sorted_row_order(
    ds: &Dataset,
    stitch_cols: &[String],
    rng: &mut ChaCha20Rng,
    target_len: usize,
) -> Vec<usize> {
    let idxs: Vec<usize> = stitch_cols
        .iter()
        .map(|c| ds.schema().index_of(c).unwrap())
        .collect();
    let mut order: Vec<usize> = (0..ds.row_count()).collect();
    // resize by resampling before sorting so duplicates land in order
    while order.len() < target_len {
        let extra = order[rand::Rng::gen_range(rng, 0..ds.row_count())];
        order.push(extra);
    }
    order.shuffle(rng); // randomize tie order, stable sort keeps it
    order.sort_by(|&a, &b| {
        let ka: Vec<Cell> = idxs.iter().map(|&i| ds.rows()[a][i].clone()).collect();
        let kb: Vec<Cell> = idxs.iter().map(|&i| ds.rows()[b][i].clone()).collect();
        cmp_cells(&ka, &kb)
    });
    order
}

/// Joins two synthetic tables that share the stitch columns. Rows pair up
/// by rank on the shared columns; the stitch values themselves come from
/// the left table. The shorter table is resampled up to the longer one.
pub fn stitch(
    left: &Dataset,
    right: &Dataset,
    stitch_cols: &[String],
    salt: &[u8],
) -> Result<Dataset, MicrodataError> {
    let left_cols = left.schema().names();
    let right_extra: Vec<String> = right
        .schema()
        .names()
        .into_iter()
        .filter(|c| !left_cols.contains(c))
        .collect();
    for c in stitch_cols {
        if left.schema().index_of(c).is_none() || right.schema().index_of(c).is_none() {
            return Err(MicrodataError::Plan(format!(
                "stitch column `{c}` missing from a cluster table"
            )));
        }
    }

    let n = left.row_count().max(right.row_count());
    let all_cols: Vec<String> = left_cols.iter().chain(&right_extra).cloned().collect();
    let seed = shuffle_seed(salt, b"stitch", &all_cols);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);

    let mut out_schema_cols = Vec::new();
    for c in &all_cols {
        let col = left
            .schema()
            .column(c)
            .or_else(|| right.schema().column(c))
            .unwrap();
        out_schema_cols.push(col.clone());
    }
    let out_schema = Schema::new(out_schema_cols)?;

    if n == 0 || left.row_count() == 0 || right.row_count() == 0 {
        return Ok(Dataset::new(out_schema, Vec::new())?);
    }

    let l_order = sorted_row_order(left, stitch_cols, &mut rng, n);
    let r_order = sorted_row_order(right, stitch_cols, &mut rng, n);

    let r_idx: Vec<usize> = right_extra
        .iter()
        .map(|c| right.schema().index_of(c).unwrap())
        .collect();
    let mut rows = Vec::with_capacity(n);
    for k in 0..n {
        let lrow = &left.rows()[l_order[k]];
        let rrow = &right.rows()[r_order[k]];
        let mut row: Vec<Cell> = lrow.clone();
        for &i in &r_idx {
            row.push(rrow[i].clone());
        }
        rows.push(row);
    }
    rows.shuffle(&mut rng);
    Ok(Dataset::new(out_schema, rows)?)
}

// ---------------------------------------------------------------------------
// synthesis plans
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum PlanEntry {
    Columns(Vec<String>),
    AllSubsets { all_subsets_of_size: usize },
}

/// Which column combinations to synthesize: explicit lists and/or an
/// every-subset-of-size-k shorthand.
#[derive(Debug, Clone, Deserialize)]
pub struct SynthesisPlan(Vec<PlanEntry>);

impl SynthesisPlan {
    pub fn from_json(text: &str) -> Result<Self, MicrodataError> {
        serde_json::from_str(text).map_err(|e| MicrodataError::Plan(e.to_string()))
    }

    pub fn all_subsets(max_size: usize) -> Self {
        SynthesisPlan(
            (1..=max_size)
                .map(|k| PlanEntry::AllSubsets {
                    all_subsets_of_size: k,
                })
                .collect(),
        )
    }

    pub fn single(columns: Vec<String>) -> Self {
        SynthesisPlan(vec![PlanEntry::Columns(columns)])
    }

    /// Expands to concrete sorted combinations against the schema.
    pub fn expand(&self, schema: &Schema) -> Result<Vec<Vec<String>>, MicrodataError> {
        let available = schema.data_column_names();
        let mut combos: BTreeSet<Vec<String>> = BTreeSet::new();
        for entry in &self.0 {
            match entry {
                PlanEntry::Columns(cols) => {
                    if cols.is_empty() {
                        return Err(MicrodataError::Plan("empty column list".into()));
                    }
                    for c in cols {
                        if !available.contains(c) {
                            return Err(MicrodataError::Plan(format!("unknown column `{c}`")));
                        }
                    }
                    let mut key = cols.clone();
                    key.sort();
                    key.dedup();
                    combos.insert(key);
                }
                PlanEntry::AllSubsets {
                    all_subsets_of_size,
                } => {
                    let k = *all_subsets_of_size;
                    if k == 0 || k > available.len() {
                        return Err(MicrodataError::Plan(format!(
                            "subset size {k} out of range for {} columns",
                            available.len()
                        )));
                    }
                    for combo in available.iter().sorted().cloned().combinations(k) {
                        combos.insert(combo);
                    }
                }
            }
        }
        Ok(combos.into_iter().collect())
    }
}

// ---------------------------------------------------------------------------
// end-to-end synthesis of one combination, wide or narrow
// ---------------------------------------------------------------------------

/// Synthesizes one combination. Combinations wider than `max_tree_dim` go
/// through clustering and stitching.
pub fn synthesize_combination(
    ds: &Dataset,
    columns: &[String],
    params: &AnonParams,
    max_tree_dim: usize,
) -> Result<Dataset, MicrodataError> {
    let sorted: Vec<String> = columns.iter().sorted().cloned().collect();
    if sorted.len() <= max_tree_dim {
        let forest = build_forest(ds, &sorted, params, max_tree_dim)?;
        return synthesize_table(&forest, ds);
    }

    let max_cluster_dim = (max_tree_dim.saturating_sub(2)).max(2);
    let plan = plan_clusters(ds, &sorted, max_cluster_dim)?;

    let mut acc: Option<Dataset> = None;
    for (i, cluster) in plan.clusters.iter().enumerate() {
        let (table_cols, stitch_cols): (Vec<String>, Vec<String>) = if i == 0 {
            (cluster.clone(), Vec::new())
        } else {
            let s = plan.stitch_columns[i - 1].clone();
            let mut tc: Vec<String> = cluster.iter().chain(&s).cloned().collect();
            tc.sort();
            tc.dedup();
            (tc, s)
        };
        let forest = build_forest(ds, &table_cols, params, max_tree_dim)?;
        let table = synthesize_table(&forest, ds)?;
        acc = Some(match acc {
            None => table,
            Some(prev) => stitch(&prev, &table, &stitch_cols, &params.salt)?,
        });
    }
    let acc = acc.expect("at least one cluster");
    Ok(acc.project(&sorted)?)
}

/// Synthesizes every combination in the plan into the store. The store is
/// only marked complete after the last table lands.
pub fn run_plan(
    ds: &Dataset,
    combos: &[Vec<String>],
    params: &AnonParams,
    max_tree_dim: usize,
    store: &mut SynTableStore,
) -> Result<(), MicrodataError> {
    for combo in combos {
        let table = synthesize_combination(ds, combo, params, max_tree_dim)?;
        store.insert(combo, &table)?;
    }
    store.mark_complete()?;
    Ok(())
}

/// Convenience wrapper: create a store at `root` and fill it per the plan.
pub fn synthesize_to_store(
    ds: &Dataset,
    plan: &SynthesisPlan,
    params: &AnonParams,
    max_tree_dim: usize,
    root: &Path,
) -> Result<SynTableStore, MicrodataError> {
    let combos = plan.expand(ds.schema())?;
    let mut store = SynTableStore::create(root, ds.schema(), params)?;
    run_plan(ds, &combos, params, max_tree_dim, &mut store)?;
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ColumnSchema, Schema};
    use crate::store::{FetchPolicy, TableSource};
    use std::collections::HashMap;

    fn continuous(name: &str, values: &[f64]) -> Dataset {
        let schema = Schema::new(vec![ColumnSchema::new(name, ColumnKind::Continuous)]).unwrap();
        Dataset::new(schema, values.iter().map(|&v| vec![Cell::Real(v)]).collect()).unwrap()
    }

    fn tiny_noise_params() -> AnonParams {
        AnonParams {
            noise_sd: 1e-9,
            ..Default::default()
        }
    }

    #[test]
    fn single_node_emits_constant_values() {
        let ds = continuous("a", &[5.0; 10]);
        let forest = build_forest(&ds, &["a".into()], &AnonParams::default(), 4).unwrap();
        let syn = synthesize_table(&forest, &ds).unwrap();
        assert!(syn.row_count() >= 5 && syn.row_count() <= 15);
        for r in syn.rows() {
            assert_eq!(r[0], Cell::Real(5.0));
        }
    }

    #[test]
    fn categorical_histogram_roundtrip() {
        let schema = Schema::new(vec![ColumnSchema::new("c", ColumnKind::Categorical)]).unwrap();
        let mut rows = vec![vec![Cell::Text("a".into())]; 7];
        rows.extend(vec![vec![Cell::Text("b".into())]; 6]);
        let ds = Dataset::new(schema, rows).unwrap();
        let forest = build_forest(&ds, &["c".into()], &tiny_noise_params(), 4).unwrap();
        let syn = synthesize_table(&forest, &ds).unwrap();
        let mut hist: HashMap<&str, usize> = HashMap::new();
        for r in syn.rows() {
            *hist.entry(r[0].as_text().unwrap()).or_default() += 1;
        }
        assert_eq!(hist.get("a"), Some(&7));
        assert_eq!(hist.get("b"), Some(&6));
    }

    #[test]
    fn synthesis_is_deterministic() {
        let values: Vec<f64> = (0..300).map(|i| ((i * 13) % 47) as f64).collect();
        let ds = continuous("a", &values);
        let forest = build_forest(&ds, &["a".into()], &AnonParams::default(), 4).unwrap();
        let s1 = synthesize_table(&forest, &ds).unwrap();
        let s2 = synthesize_table(&forest, &ds).unwrap();
        assert_eq!(s1.rows(), s2.rows());
    }

    #[test]
    fn too_few_entities_release_nothing() {
        let ds = continuous("a", &[1.0, 2.0]);
        let forest = build_forest(&ds, &["a".into()], &AnonParams::default(), 4).unwrap();
        let syn = synthesize_table(&forest, &ds).unwrap();
        assert_eq!(syn.row_count(), 0);
    }

    #[test]
    fn emitted_values_stay_in_leaf_intervals() {
        let values: Vec<f64> = (0..500).map(|i| ((i * 7) % 32) as f64).collect();
        let ds = continuous("a", &values);
        let forest = build_forest(&ds, &["a".into()], &AnonParams::default(), 4).unwrap();
        let (syn, trace) = synthesize_table_with_trace(&forest, &ds).unwrap();
        assert_eq!(
            syn.row_count(),
            trace.iter().map(|t| t.emitted).sum::<usize>()
        );
        let root = &forest.tree(&["a".into()]).unwrap().root.intervals[0];
        for r in syn.rows() {
            assert!(root.contains(r[0].as_real().unwrap()));
        }
        for t in &trace {
            assert!(t.emitted == 0 || t.true_entity_count >= 3);
        }
    }

    #[test]
    fn clusters_respect_independence_blocks() {
        // (a,b,c) move together, (d,e,f) move together, blocks independent
        let names = ["a", "b", "c", "d", "e", "f"];
        let schema = Schema::new(
            names
                .iter()
                .map(|n| ColumnSchema::new(n, ColumnKind::Continuous))
                .collect(),
        )
        .unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(42);
        let rows: Vec<Vec<Cell>> = (0..400)
            .map(|_| {
                let u: f64 = rand::Rng::gen_range(&mut rng, 0.0..100.0);
                let v: f64 = rand::Rng::gen_range(&mut rng, 0.0..100.0);
                let j = |rng: &mut ChaCha20Rng| rand::Rng::gen_range(rng, 0.0..2.0);
                vec![
                    Cell::Real(u + j(&mut rng)),
                    Cell::Real(u + j(&mut rng)),
                    Cell::Real(u + j(&mut rng)),
                    Cell::Real(v + j(&mut rng)),
                    Cell::Real(v + j(&mut rng)),
                    Cell::Real(v + j(&mut rng)),
                ]
            })
            .collect();
        let ds = Dataset::new(schema, rows).unwrap();
        let cols: Vec<String> = names.iter().map(|s| s.to_string()).collect();
        let plan = plan_clusters(&ds, &cols, 3).unwrap();
        assert_eq!(plan.clusters.len(), 2);
        for cluster in &plan.clusters {
            let in_first = cluster.iter().filter(|c| ["a", "b", "c"].contains(&c.as_str())).count();
            assert!(in_first == 0 || in_first == cluster.len(), "{cluster:?}");
        }
        assert_eq!(plan.stitch_columns.len(), 1);
        assert!(plan.stitch_columns[0].len() <= 2 && !plan.stitch_columns[0].is_empty());
    }

    #[test]
    fn stitch_conserves_rows_and_columns() {
        let schema_l = Schema::new(vec![
            ColumnSchema::new("a", ColumnKind::Continuous),
            ColumnSchema::new("b", ColumnKind::Continuous),
        ])
        .unwrap();
        let schema_r = Schema::new(vec![
            ColumnSchema::new("a", ColumnKind::Continuous),
            ColumnSchema::new("c", ColumnKind::Continuous),
        ])
        .unwrap();
        let left = Dataset::new(
            schema_l,
            (0..20)
                .map(|i| vec![Cell::Real(i as f64), Cell::Real((i * 2) as f64)])
                .collect(),
        )
        .unwrap();
        let right = Dataset::new(
            schema_r,
            (0..15)
                .map(|i| vec![Cell::Real(i as f64), Cell::Real((i * 3) as f64)])
                .collect(),
        )
        .unwrap();
        let out = stitch(&left, &right, &["a".into()], b"s").unwrap();
        assert_eq!(out.row_count(), 20);
        assert_eq!(out.schema().names(), vec!["a", "b", "c"]);
        // stitch values come from the left table
        for r in out.rows() {
            let a = r[0].as_real().unwrap();
            assert!((0.0..20.0).contains(&a));
        }
    }

    #[test]
    fn stitch_on_identical_tables_preserves_pairing() {
        let schema = Schema::new(vec![
            ColumnSchema::new("a", ColumnKind::Continuous),
            ColumnSchema::new("b", ColumnKind::Continuous),
        ])
        .unwrap();
        let t = Dataset::new(
            schema.clone(),
            (0..30)
                .map(|i| vec![Cell::Real(i as f64), Cell::Real((100 - i) as f64)])
                .collect(),
        )
        .unwrap();
        let r_schema = Schema::new(vec![
            ColumnSchema::new("a", ColumnKind::Continuous),
            ColumnSchema::new("c", ColumnKind::Continuous),
        ])
        .unwrap();
        let r = Dataset::new(
            r_schema,
            (0..30)
                .map(|i| vec![Cell::Real(i as f64), Cell::Real((i * i) as f64)])
                .collect(),
        )
        .unwrap();
        let out = stitch(&t, &r, &["a".into()], b"s").unwrap();
        // unique ranks on `a`: pairing is exact, so b and c stay consistent
        for row in out.rows() {
            let a = row[0].as_real().unwrap();
            assert_eq!(row[1].as_real().unwrap(), 100.0 - a);
            assert_eq!(row[2].as_real().unwrap(), a * a);
        }
    }

    #[test]
    fn plan_expansion() {
        let schema = Schema::new(vec![
            ColumnSchema::new("a", ColumnKind::Continuous),
            ColumnSchema::new("b", ColumnKind::Continuous),
            ColumnSchema::new("c", ColumnKind::Continuous),
        ])
        .unwrap();
        let plan =
            SynthesisPlan::from_json(r#"[["b","a"],{"all_subsets_of_size":2}]"#).unwrap();
        let combos = plan.expand(&schema).unwrap();
        assert_eq!(
            combos,
            vec![
                vec!["a".to_string(), "b".to_string()],
                vec!["a".to_string(), "c".to_string()],
                vec!["b".to_string(), "c".to_string()],
            ]
        );
        assert!(SynthesisPlan::from_json(r#"[["nope"]]"#)
            .unwrap()
            .expand(&schema)
            .is_err());
    }

    #[test]
    fn run_plan_fills_store() {
        let schema = Schema::new(vec![
            ColumnSchema::new("a", ColumnKind::Continuous),
            ColumnSchema::new("b", ColumnKind::Categorical),
        ])
        .unwrap();
        let rows: Vec<Vec<Cell>> = (0..100)
            .map(|i| {
                vec![
                    Cell::Real((i % 16) as f64),
                    Cell::Text(format!("v{}", i % 3)),
                ]
            })
            .collect();
        let ds = Dataset::new(schema, rows).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let plan = SynthesisPlan::all_subsets(2);
        let params = AnonParams::default();
        let store = synthesize_to_store(&ds, &plan, &params, 4, dir.path()).unwrap();
        assert!(store.manifest().complete);
        assert_eq!(store.combinations().len(), 3); // a, b, ab
        let t = store.fetch(&["a".into(), "b".into()]).unwrap();
        assert!(t.row_count() > 50);

        // reopening reads the same bytes
        let reopened =
            SynTableStore::open(dir.path(), ds.schema(), FetchPolicy::Exact).unwrap();
        let t2 = reopened.fetch(&["a".into(), "b".into()]).unwrap();
        assert_eq!(t.rows(), t2.rows());
    }

    #[test]
    fn wide_combination_synthesizes_via_stitching() {
        let names = ["a", "b", "c", "d", "e", "f"];
        let schema = Schema::new(
            names
                .iter()
                .map(|n| ColumnSchema::new(n, ColumnKind::Continuous))
                .collect(),
        )
        .unwrap();
        let rows: Vec<Vec<Cell>> = (0..200)
            .map(|i| {
                (0..6)
                    .map(|j| Cell::Real(((i * (j + 2)) % 23) as f64))
                    .collect()
            })
            .collect();
        let ds = Dataset::new(schema, rows).unwrap();
        let cols: Vec<String> = names.iter().map(|s| s.to_string()).collect();
        let syn = synthesize_combination(&ds, &cols, &AnonParams::default(), 4).unwrap();
        assert_eq!(syn.schema().names(), cols);
        assert!(syn.row_count() > 100);
    }
}
