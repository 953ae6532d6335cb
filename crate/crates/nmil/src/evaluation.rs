//! Metrics, cross-validation and the lead/history sweep protocol.
//!
//! The positive class is +1 throughout. Ratios with a zero denominator are
//! defined as 0 (the conservative convention: a model that never predicts
//! positive gets precision 0, not a free pass).

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::exec;
use crate::model;
use crate::trainer::{self, TrainConfig};

/// Binary confusion counts and the metrics derived from them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Metrics {
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Metrics {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Metrics {
            tp,
            fp,
            tn,
            fn_,
            accuracy: ratio(tp + tn, tp + fp + tn + fn_),
            precision,
            recall,
            f1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Metric values in the fixed reporting order.
    pub fn named(&self) -> [(&'static str, f64); 4] {
        [
            ("accuracy", self.accuracy),
            ("precision", self.precision),
            ("recall", self.recall),
            ("f1", self.f1),
        ]
    }
}

/// Confusion metrics of +1/-1 predictions against ground truth.
pub fn compute_metrics(preds: &[i8], truth: &[i8]) -> Result<Metrics> {
    if preds.len() != truth.len() {
        return Err(Error::Validation(format!(
            "{} predictions against {} labels",
            preds.len(),
            truth.len()
        )));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&p, &y) in preds.iter().zip(truth) {
        if !matches!(p, 1 | -1) || !matches!(y, 1 | -1) {
            return Err(Error::Validation(format!(
                "labels must be +1 or -1, got prediction {p} against truth {y}"
            )));
        }
        match (p, y) {
            (1, 1) => tp += 1,
            (1, -1) => fp += 1,
            (-1, -1) => tn += 1,
            _ => fn_ += 1,
        }
    }
    Ok(Metrics::from_counts(tp, fp, tn, fn_))
}

/// Area under the ROC curve of `scores` against boolean relevance, using
/// midranks so ties contribute 1/2. Degenerate inputs (a single class)
/// return 0.5.
pub fn ranking_auc(scores: &[f64], relevant: &[bool]) -> f64 {
    assert_eq!(scores.len(), relevant.len());
    let n_pos = relevant.iter().filter(|&&r| r).count();
    let n_neg = relevant.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return 0.5;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // Ranks are 1-based; tied entries all take the midrank.
        let midrank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if relevant[idx] {
                rank_sum_pos += midrank;
            }
        }
        i = j;
    }
    (rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0) / (n_pos as f64 * n_neg as f64)
}

/// Support-weighted one-vs-rest F1 over classes `1..=k`. Label 0 means "no
/// class" (a gate negative): it carries no weight of its own, but wrong
/// gate decisions still cost precision or recall of the real classes.
pub fn weighted_f1(preds: &[usize], truth: &[usize], k: usize) -> Result<f64> {
    if preds.len() != truth.len() {
        return Err(Error::Validation(format!(
            "{} predictions against {} labels",
            preds.len(),
            truth.len()
        )));
    }
    if let Some(&bad) = preds.iter().chain(truth).find(|&&c| c > k) {
        return Err(Error::Validation(format!(
            "class label {bad} outside 0..={k}"
        )));
    }
    let total: usize = truth.iter().filter(|&&c| c != 0).count();
    if total == 0 {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for c in 1..=k {
        let support = truth.iter().filter(|&&y| y == c).count();
        if support == 0 {
            continue;
        }
        let tp = preds
            .iter()
            .zip(truth)
            .filter(|&(&p, &y)| p == c && y == c)
            .count();
        let fp = preds
            .iter()
            .zip(truth)
            .filter(|&(&p, &y)| p == c && y != c)
            .count();
        let fn_ = support - tp;
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        sum += support as f64 / total as f64 * f1;
    }
    Ok(sum)
}

// ---------------------------------------------------------------------------
// Cross-validation
// ---------------------------------------------------------------------------

/// Stratified k-fold assignment: positives and negatives are shuffled
/// separately (seeded) and dealt round-robin, the negatives continuing
/// where the positives left off. Fold sizes and per-class counts each
/// differ by at most one. Returns (train, test) index pairs; the k test
/// folds partition the dataset.
pub fn kfold_split(
    ds: &Dataset,
    k: usize,
    seed: u64,
) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    if ds.len() < k {
        return Err(Error::Config(format!(
            "cannot split {} super-bags into {k} folds",
            ds.len()
        )));
    }
    let mut pos: Vec<usize> = Vec::new();
    let mut neg: Vec<usize> = Vec::new();
    for (i, sb) in ds.super_bags.iter().enumerate() {
        if sb.label == 1 {
            pos.push(i);
        } else {
            neg.push(i);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);

    let mut fold_of = vec![0usize; ds.len()];
    for (pos_in_deal, &i) in pos.iter().chain(neg.iter()).enumerate() {
        fold_of[i] = pos_in_deal % k;
    }
    Ok((0..k)
        .map(|f| {
            let mut train = Vec::new();
            let mut test = Vec::new();
            for (i, &fold) in fold_of.iter().enumerate() {
                if fold == f {
                    test.push(i);
                } else {
                    train.push(i);
                }
            }
            (train, test)
        })
        .collect())
}

/// One fold's trained-model results on its held-out super-bags.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldOutcome {
    pub fold: usize,
    pub metrics: Metrics,
    /// Super-bag probabilities on the test fold, parallel to `test_indices`.
    pub scores: Vec<f64>,
    pub test_indices: Vec<usize>,
}

/// Trains one model per fold (fold training seeds derived from
/// `tcfg.seed`) and scores each held-out fold. Folds run concurrently.
pub fn cross_validate(ds: &Dataset, tcfg: &TrainConfig, k: usize) -> Result<Vec<FoldOutcome>> {
    let splits = kfold_split(ds, k, tcfg.seed)?;
    let outcomes = exec::map_indexed(splits.len(), |fold| -> Result<_> {
        let (train_idx, test_idx) = &splits[fold];
        let fold_cfg = TrainConfig {
            seed: trainer::derive_seed(tcfg.seed, fold as u64),
            ..tcfg.clone()
        };
        let report = trainer::train(&ds.subset(train_idx), &fold_cfg)?;
        let test = ds.subset(test_idx);
        let scores = model::score_dataset(&report.final_params, &test)?;
        let preds: Vec<i8> = scores.iter().map(|&p| model::predict(p)).collect();
        let metrics = compute_metrics(&preds, &test.labels())?;
        Ok((metrics, scores, test_idx.clone()))
    });
    let mut result = Vec::with_capacity(k);
    for (fold, outcome) in outcomes.into_iter().enumerate() {
        let (metrics, scores, test_indices) = outcome?;
        result.push(FoldOutcome {
            fold,
            metrics,
            scores,
            test_indices,
        });
    }
    Ok(result)
}

// ---------------------------------------------------------------------------
// Lead/history sweep
// ---------------------------------------------------------------------------

/// One aggregated statistic of the sweep grid; mirrors a CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lead: usize,
    pub history: usize,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    /// Rows ordered by (lead, history) with metrics in reporting order.
    pub rows: Vec<SweepRow>,
    pub folds: usize,
}

impl SweepResult {
    pub fn cell(&self, lead: usize, history: usize, metric: &str) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.lead == lead && r.history == history && r.metric == metric)
    }
}

fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs k-fold cross-validation on every (lead, history) cell of the grid,
/// with datasets supplied by `build`. Cells execute concurrently; rows come
/// back in (lead, history, metric) order regardless.
pub fn sweep<F>(
    build: F,
    tcfg: &TrainConfig,
    lead_max: usize,
    history_max: usize,
    k: usize,
) -> Result<SweepResult>
where
    F: Fn(usize, usize) -> Result<Dataset> + Sync,
{
    if lead_max == 0 || history_max == 0 {
        return Err(Error::Config("sweep bounds must be at least 1".into()));
    }
    let cells = exec::map_indexed(lead_max * history_max, |idx| -> Result<Vec<SweepRow>> {
        let lead = idx / history_max + 1;
        let history = idx % history_max + 1;
        let ds = build(lead, history)?;
        let outcomes = cross_validate(&ds, tcfg, k)?;
        let mut rows = Vec::with_capacity(4);
        for m in 0..4 {
            let name = outcomes[0].metrics.named()[m].0;
            let values: Vec<f64> = outcomes.iter().map(|o| o.metrics.named()[m].1).collect();
            let (mean, std) = mean_and_std(&values);
            rows.push(SweepRow {
                lead,
                history,
                metric: name.to_string(),
                mean,
                std,
            });
        }
        Ok(rows)
    });
    let mut rows = Vec::with_capacity(lead_max * history_max * 4);
    for cell in cells {
        rows.extend(cell?);
    }
    Ok(SweepResult { rows, folds: k })
}

/// `lead,history,metric,mean,std` CSV.
pub fn save_sweep_csv(result: &SweepResult, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::from("lead,history,metric,mean,std\n");
    for r in &result.rows {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.lead, r.history, r.metric, r.mean, r.std
        ));
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// JSON mirror of the CSV rows.
pub fn save_sweep_json(result: &SweepResult, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut s = serde_json::to_string_pretty(&result.rows).expect("rows serialize");
    s.push('\n');
    fs::write(path, s).map_err(|e| Error::io(path, e))
}
