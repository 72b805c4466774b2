//! Privacy measurement: a quasi-identifier matching attack against the
//! synthetic data, compared with a non-private machine-learning baseline
//! that predicts the same targets from the original data alone.

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Cell, Dataset};

#[derive(Debug, Error)]
pub enum PrivacyError {
    #[error("column `{0}` missing")]
    MissingColumn(String),
    #[error("attack needs at least 4 original rows, got {0}")]
    TooFewRows(usize),
    #[error("invalid attack config: {0}")]
    BadConfig(String),
}

fn default_split() -> f64 {
    0.5
}

/// Which columns the attacker knows (quasi-identifiers) and which they try
/// to infer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackConfig {
    pub qi: Vec<String>,
    pub targets: Vec<String>,
    #[serde(default = "default_split")]
    pub split: f64,
    #[serde(default)]
    pub seed: u64,
}

impl AttackConfig {
    pub fn from_json(text: &str) -> Result<Self, PrivacyError> {
        let cfg: AttackConfig =
            serde_json::from_str(text).map_err(|e| PrivacyError::BadConfig(e.to_string()))?;
        if cfg.qi.is_empty() || cfg.targets.is_empty() {
            return Err(PrivacyError::BadConfig("qi and targets required".into()));
        }
        if !(cfg.split > 0.0 && cfg.split < 1.0) {
            return Err(PrivacyError::BadConfig("split must be in (0,1)".into()));
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AttackResult {
    pub target: String,
    /// Fraction of attempted predictions that were correct.
    pub p_atk: f64,
    /// Fraction of victims for which a prediction was attempted.
    pub coverage: f64,
    pub attempts: usize,
    pub correct: usize,
    /// Baseline model precision on the same victims.
    pub p_base: f64,
    /// (p_atk - p_base) / (1 - p_base); None when the baseline is perfect.
    pub pi: Option<f64>,
}

fn cell_text(c: &Cell) -> String {
    match c {
        Cell::Text(s) => s.clone(),
        Cell::Real(v) => format!("{v}"),
    }
}

fn row_key(ds: &Dataset, row: usize, idxs: &[usize]) -> Vec<String> {
    idxs.iter()
        .map(|&i| cell_text(&ds.rows()[row][i]))
        .collect()
}

fn indices(ds: &Dataset, cols: &[String]) -> Result<Vec<usize>, PrivacyError> {
    cols.iter()
        .map(|c| {
            ds.schema()
                .index_of(c)
                .ok_or_else(|| PrivacyError::MissingColumn(c.clone()))
        })
        .collect()
}

/// Deterministic train/victim split of the original's row indices.
pub fn split_rows(n: usize, split: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x7370_6c69_74);
    idx.shuffle(&mut rng);
    let cut = ((n as f64 * split).round() as usize).clamp(1, n - 1);
    let train = idx[..cut].to_vec();
    let victims = idx[cut..].to_vec();
    (train, victims)
}

/// The matching attack: the attacker looks up each victim's QI values in
/// the synthetic table and predicts the target whenever every matching
/// synthetic row agrees on it.
pub fn qi_attack(
    orig: &Dataset,
    syn: &Dataset,
    qi: &[String],
    target: &str,
    victims: &[usize],
) -> Result<(f64, f64, usize, usize), PrivacyError> {
    let o_qi = indices(orig, qi)?;
    let o_t = indices(orig, &[target.to_string()])?[0];
    let s_qi = indices(syn, qi)?;
    let s_t = indices(syn, &[target.to_string()])?[0];

    let mut table: HashMap<Vec<String>, HashSet<String>> = HashMap::new();
    for r in 0..syn.row_count() {
        let key = row_key(syn, r, &s_qi);
        table
            .entry(key)
            .or_default()
            .insert(cell_text(&syn.rows()[r][s_t]));
    }

    let mut attempts = 0usize;
    let mut correct = 0usize;
    for &v in victims {
        let key = row_key(orig, v, &o_qi);
        if let Some(values) = table.get(&key) {
            if values.len() == 1 {
                attempts += 1;
                let predicted = values.iter().next().unwrap();
                if *predicted == cell_text(&orig.rows()[v][o_t]) {
                    correct += 1;
                }
            }
        }
    }
    let p_atk = if attempts > 0 {
        correct as f64 / attempts as f64
    } else {
        0.0
    };
    let coverage = if victims.is_empty() {
        0.0
    } else {
        attempts as f64 / victims.len() as f64
    };
    Ok((p_atk, coverage, attempts, correct))
}

// ---------------------------------------------------------------------------
// baseline: L1-regularized multinomial logistic regression
// ---------------------------------------------------------------------------

struct OneHot {
    /// For each QI column: value -> feature offset within that block.
    maps: Vec<HashMap<String, usize>>,
    offsets: Vec<usize>,
    dim: usize,
}

impl OneHot {
    fn fit(orig: &Dataset, qi_idx: &[usize], train: &[usize]) -> OneHot {
        let mut maps = Vec::with_capacity(qi_idx.len());
        let mut offsets = Vec::with_capacity(qi_idx.len());
        let mut dim = 0;
        for &ci in qi_idx {
            let mut m: HashMap<String, usize> = HashMap::new();
            for &r in train {
                let v = cell_text(&orig.rows()[r][ci]);
                let next = m.len();
                m.entry(v).or_insert(next);
            }
            offsets.push(dim);
            dim += m.len();
            maps.push(m);
        }
        OneHot { maps, offsets, dim }
    }

    fn encode(&self, orig: &Dataset, qi_idx: &[usize], row: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim];
        for (k, &ci) in qi_idx.iter().enumerate() {
            let v = cell_text(&orig.rows()[row][ci]);
            if let Some(&j) = self.maps[k].get(&v) {
                x[self.offsets[k] + j] = 1.0;
            }
            // unseen values encode as all-zeros in this block
        }
        x
    }
}

fn softmax_rows(scores: &mut [f64]) {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        sum += *s;
    }
    for s in scores.iter_mut() {
        *s /= sum;
    }
}

/// Multinomial logistic regression with an L1 penalty, fit by proximal
/// gradient (soft-thresholding) steps. The intercept is unpenalized.
/// Penalty strength follows the inverse-C convention: alpha = 1 / (C * n).
struct L1Logistic {
    weights: Vec<Vec<f64>>, // class x feature
    bias: Vec<f64>,
    classes: Vec<String>,
}

impl L1Logistic {
    fn fit(x: &[Vec<f64>], labels: &[usize], k: usize, c_inv_reg: f64, iters: usize) -> L1Logistic {
        let n = x.len();
        let d = x.first().map(|r| r.len()).unwrap_or(0);
        let alpha = 1.0 / (c_inv_reg * n as f64);
        let max_norm_sq = x
            .iter()
            .map(|r| r.iter().map(|v| v * v).sum::<f64>() + 1.0)
            .fold(1.0f64, f64::max);
        let step = 1.0 / (0.25 * max_norm_sq);

        let mut w = vec![vec![0.0; d]; k];
        let mut b = vec![0.0; k];
        let mut probs = vec![0.0; k];
        for _ in 0..iters {
            let mut gw = vec![vec![0.0; d]; k];
            let mut gb = vec![0.0; k];
            for (i, xi) in x.iter().enumerate() {
                for (cls, p) in probs.iter_mut().enumerate() {
                    *p = b[cls] + w[cls].iter().zip(xi).map(|(a, v)| a * v).sum::<f64>();
                }
                softmax_rows(&mut probs);
                for cls in 0..k {
                    let e = probs[cls] - if labels[i] == cls { 1.0 } else { 0.0 };
                    gb[cls] += e;
                    for (g, v) in gw[cls].iter_mut().zip(xi) {
                        *g += e * v;
                    }
                }
            }
            for cls in 0..k {
                b[cls] -= step * gb[cls] / n as f64;
                for j in 0..d {
                    let v = w[cls][j] - step * gw[cls][j] / n as f64;
                    // proximal soft-threshold for the L1 penalty
                    let t = step * alpha;
                    w[cls][j] = if v > t {
                        v - t
                    } else if v < -t {
                        v + t
                    } else {
                        0.0
                    };
                }
            }
        }
        L1Logistic {
            weights: w,
            bias: b,
            classes: Vec::new(),
        }
    }

    fn predict(&self, x: &[f64]) -> usize {
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (cls, wc) in self.weights.iter().enumerate() {
            let s = self.bias[cls] + wc.iter().zip(x).map(|(a, v)| a * v).sum::<f64>();
            if s > best_score {
                best_score = s;
                best = cls;
            }
        }
        best
    }
}

/// Baseline precision: a model trained on half of the original predicting
/// each victim's target from their QI values alone.
pub fn baseline_precision(
    orig: &Dataset,
    qi: &[String],
    target: &str,
    train: &[usize],
    victims: &[usize],
) -> Result<f64, PrivacyError> {
    let qi_idx = indices(orig, qi)?;
    let t_idx = indices(orig, &[target.to_string()])?[0];

    let onehot = OneHot::fit(orig, &qi_idx, train);
    let mut class_of: HashMap<String, usize> = HashMap::new();
    let mut classes: Vec<String> = Vec::new();
    let mut labels = Vec::with_capacity(train.len());
    for &r in train {
        let v = cell_text(&orig.rows()[r][t_idx]);
        let cls = *class_of.entry(v.clone()).or_insert_with(|| {
            classes.push(v.clone());
            classes.len() - 1
        });
        labels.push(cls);
    }
    let x: Vec<Vec<f64>> = train.iter().map(|&r| onehot.encode(orig, &qi_idx, r)).collect();
    let mut model = L1Logistic::fit(&x, &labels, classes.len().max(1), 0.01, 100);
    model.classes = classes;

    let mut correct = 0usize;
    for &v in victims {
        let xv = onehot.encode(orig, &qi_idx, v);
        let predicted = &model.classes[model.predict(&xv)];
        if *predicted == cell_text(&orig.rows()[v][t_idx]) {
            correct += 1;
        }
    }
    Ok(correct as f64 / victims.len().max(1) as f64)
}

/// Precision improvement of the attack over the baseline. A perfect
/// baseline leaves no headroom and is reported as None.
pub fn precision_improvement(p_atk: f64, p_base: f64) -> Option<f64> {
    if p_base >= 1.0 {
        None
    } else {
        Some((p_atk - p_base) / (1.0 - p_base))
    }
}

/// Full attack run over all configured targets.
pub fn run_attack(
    orig: &Dataset,
    syn: &Dataset,
    cfg: &AttackConfig,
) -> Result<Vec<AttackResult>, PrivacyError> {
    if orig.row_count() < 4 {
        return Err(PrivacyError::TooFewRows(orig.row_count()));
    }
    for c in cfg.qi.iter().chain(&cfg.targets) {
        if orig.schema().index_of(c).is_none() {
            return Err(PrivacyError::MissingColumn(c.clone()));
        }
    }
    let (train, victims) = split_rows(orig.row_count(), cfg.split, cfg.seed);
    let mut out = Vec::with_capacity(cfg.targets.len());
    for target in &cfg.targets {
        let (p_atk, coverage, attempts, correct) =
            qi_attack(orig, syn, &cfg.qi, target, &victims)?;
        let p_base = baseline_precision(orig, &cfg.qi, target, &train, &victims)?;
        out.push(AttackResult {
            target: target.clone(),
            p_atk,
            coverage,
            attempts,
            correct,
            p_base,
            pi: precision_improvement(p_atk, p_base),
        });
    }
    Ok(out)
}

/// Number of original records that appear identically — and uniquely on
/// both sides — in the synthetic table, over the columns they share.
pub fn full_match_count(orig: &Dataset, syn: &Dataset) -> usize {
    let shared: Vec<String> = syn
        .schema()
        .names()
        .into_iter()
        .filter(|c| orig.schema().index_of(c).is_some())
        .collect();
    if shared.is_empty() {
        return 0;
    }
    let o_idx: Vec<usize> = shared
        .iter()
        .map(|c| orig.schema().index_of(c).unwrap())
        .collect();
    let s_idx: Vec<usize> = shared
        .iter()
        .map(|c| syn.schema().index_of(c).unwrap())
        .collect();

    let mut o_counts: HashMap<Vec<String>, usize> = HashMap::new();
    for r in 0..orig.row_count() {
        *o_counts.entry(row_key(orig, r, &o_idx)).or_default() += 1;
    }
    let mut s_counts: HashMap<Vec<String>, usize> = HashMap::new();
    for r in 0..syn.row_count() {
        *s_counts.entry(row_key(syn, r, &s_idx)).or_default() += 1;
    }
    o_counts
        .iter()
        .filter(|(k, &c)| c == 1 && s_counts.get(*k) == Some(&1))
        .count()
}
