//! Training objective.
//!
//! For a batch of n super-bags the objective is
//!
//! ```text
//! J = (beta/n) sum_S f(S)                       super-bag fit
//!   + (1/n) sum_S (1/t) sum_{i=2..t} g(i-1, i)  cross-day smoothness
//!   + (1/n) sum_S (1/t) sum_i (1/n_i) sum_j h   instance margin
//!   + lambda R                                  L2 regularizer
//! ```
//!
//! where `f` is the clamped negative log-likelihood of the super-bag
//! probability, `g` the squared gap between consecutive day probabilities
//! (scaled by mean cross-day cosine similarity for `nmil-delta`), and `h` a
//! hinge that pushes every instance away from the decision boundary on
//! whichever side it already falls. Variants that collapse days have a
//! single bag, so their `g` sum is empty.

use serde::{Deserialize, Serialize};

use crate::corpus::{Bag, Dataset, Instance, SuperBag};
use crate::error::{Error, Result};
use crate::exec;
use crate::model::{self, cosine, dot, sigmoid, ModelParams, Variant};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before logs.
pub const PROB_EPS: f64 = 1e-12;

/// Weights of the four objective terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Super-bag fit weight.
    pub beta: f64,
    /// Regularization weight; also enters the learning-rate decay.
    pub lambda: f64,
    /// Hinge margin.
    pub m0: f64,
    /// Instance probability threshold that picks the hinge side.
    pub p0: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            beta: 3.0,
            lambda: 0.05,
            m0: 0.5,
            p0: 0.5,
        }
    }
}

impl LossConfig {
    // Negated comparisons are deliberate: they also reject NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) {
            return Err(Error::Config(format!("beta must be > 0, got {}", self.beta)));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.m0 > 0.0) {
            return Err(Error::Config(format!("m0 must be > 0, got {}", self.m0)));
        }
        if !(self.p0 > 0.0 && self.p0 < 1.0) {
            return Err(Error::Config(format!(
                "p0 must lie strictly inside (0,1), got {}",
                self.p0
            )));
        }
        Ok(())
    }
}

/// Enables or disables individual objective terms. Used by ablation studies
/// and by gradient tests that isolate one term at a time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TermFlags {
    pub fit: bool,
    pub smooth: bool,
    pub margin: bool,
    pub reg: bool,
}

impl Default for TermFlags {
    fn default() -> Self {
        TermFlags {
            fit: true,
            smooth: true,
            margin: true,
            reg: true,
        }
    }
}

impl TermFlags {
    pub const ALL: TermFlags = TermFlags {
        fit: true,
        smooth: true,
        margin: true,
        reg: true,
    };

    pub fn none() -> Self {
        TermFlags {
            fit: false,
            smooth: false,
            margin: false,
            reg: false,
        }
    }
}

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Negative log-likelihood of a super-bag probability against its label.
/// The clamp keeps the value finite; inside the clamped region the loss is
/// constant (its gradient is zero there).
pub fn superbag_loss(p_super: f64, label: i8) -> f64 {
    if label > 0 {
        -clamp_prob(p_super).ln()
    } else {
        -(1.0 - clamp_prob(p_super)).ln()
    }
}

/// Mean cosine similarity over all cross pairs of two bags. Zero-norm
/// vectors contribute cosine 0.
pub fn mean_cross_cosine(prev: &Bag, cur: &Bag) -> f64 {
    let pairs = prev.instances.len() * cur.instances.len();
    if pairs == 0 {
        return 0.0;
    }
    let mut sum = 0.0;
    for a in &prev.instances {
        for b in &cur.instances {
            sum += cosine(&a.features, &b.features);
        }
    }
    sum / pairs as f64
}

/// Squared gap between consecutive day probabilities, optionally weighted by
/// the mean cross-day cosine (the `nmil-delta` form).
pub fn crossbag_cost(prev: &Bag, cur: &Bag, params: &ModelParams, weighted: bool) -> f64 {
    let d = model::bag_prob(params, cur) - model::bag_prob(params, prev);
    let base = d * d;
    if weighted {
        mean_cross_cosine(prev, cur) * base
    } else {
        base
    }
}

/// Hinge h = max(0, m0 - sgn(p - p0) * w.x): instances already on one side
/// of the threshold are pushed further from the boundary; confident
/// instances on either side cost nothing. sgn(0) is taken as +1.
pub fn instance_hinge(x: &Instance, params: &ModelParams, day: usize, cfg: &LossConfig) -> f64 {
    let z = dot(params.w(day), &x.features);
    hinge_from_score(z, cfg)
}

fn hinge_from_score(z: f64, cfg: &LossConfig) -> f64 {
    let side = if sigmoid(z) >= cfg.p0 { 1.0 } else { -1.0 };
    (cfg.m0 - side * z).max(0.0)
}

/// Half squared L2 norm of the weights, summed over rows for per-day
/// variants.
pub fn regularizer(params: &ModelParams) -> f64 {
    params
        .weights
        .iter()
        .map(|row| 0.5 * dot(row, row))
        .sum()
}

/// The three data terms of one super-bag: (f, g-part, h-part), with f not
/// yet scaled by beta and the per-super-bag 1/t and 1/n_i normalizations
/// already applied.
pub fn superbag_parts(
    sb: &SuperBag,
    params: &ModelParams,
    cfg: &LossConfig,
    flags: TermFlags,
) -> (f64, f64, f64) {
    if params.variant.collapses_days() {
        return collapsed_parts(sb, params, cfg, flags);
    }

    let t = sb.days.len();
    let mut day_probs = Vec::with_capacity(t);
    let mut h_acc = 0.0;
    for bag in &sb.days {
        let w = params.w(bag.day);
        let mut p_sum = 0.0;
        let mut h_sum = 0.0;
        for inst in &bag.instances {
            let z = dot(w, &inst.features);
            p_sum += sigmoid(z);
            if flags.margin {
                h_sum += hinge_from_score(z, cfg);
            }
        }
        let n_i = bag.instances.len() as f64;
        day_probs.push(p_sum / n_i);
        h_acc += h_sum / n_i;
    }

    let f = if flags.fit {
        let p_super = day_probs.iter().sum::<f64>() / t as f64;
        superbag_loss(p_super, sb.label)
    } else {
        0.0
    };

    let mut g = 0.0;
    if flags.smooth {
        let weighted = params.variant == Variant::NmilDelta;
        for i in 1..t {
            let d = day_probs[i] - day_probs[i - 1];
            let base = d * d;
            g += if weighted {
                mean_cross_cosine(&sb.days[i - 1], &sb.days[i]) * base
            } else {
                base
            };
        }
        g /= t as f64;
    }

    (f, g, h_acc / t as f64)
}

/// Parts for the day-collapsing variants: one flat bag, so t = 1 and the
/// smoothness sum is empty.
fn collapsed_parts(
    sb: &SuperBag,
    params: &ModelParams,
    cfg: &LossConfig,
    flags: TermFlags,
) -> (f64, f64, f64) {
    let w = params.w(1);
    let noisy = params.variant == Variant::RmilNor;
    let mut p_sum = 0.0;
    let mut log_q = 0.0;
    let mut h_sum = 0.0;
    let mut n = 0usize;
    for bag in &sb.days {
        for inst in &bag.instances {
            let z = dot(w, &inst.features);
            if noisy {
                log_q -= model::softplus(z);
            } else {
                p_sum += sigmoid(z);
            }
            if flags.margin {
                h_sum += hinge_from_score(z, cfg);
            }
            n += 1;
        }
    }
    let f = if flags.fit {
        let p_super = if noisy {
            -log_q.exp_m1()
        } else {
            p_sum / n as f64
        };
        superbag_loss(p_super, sb.label)
    } else {
        0.0
    };
    (f, 0.0, h_sum / n as f64)
}

/// Full objective over a batch of super-bag references.
pub fn total_objective(batch: &[&SuperBag], params: &ModelParams, cfg: &LossConfig) -> f64 {
    total_objective_with(batch, params, cfg, TermFlags::ALL)
}

/// [`total_objective`] with term toggles. Summation over super-bags is
/// performed in batch order regardless of how the parts were computed, so
/// the value is identical across thread counts.
pub fn total_objective_with(
    batch: &[&SuperBag],
    params: &ModelParams,
    cfg: &LossConfig,
    flags: TermFlags,
) -> f64 {
    assert!(!batch.is_empty(), "objective of an empty batch");
    let parts = exec::map_slice(batch, |sb| superbag_parts(sb, params, cfg, flags));
    let mut f = 0.0;
    let mut g = 0.0;
    let mut h = 0.0;
    for (pf, pg, ph) in parts {
        f += pf;
        g += pg;
        h += ph;
    }
    let n = batch.len() as f64;
    let mut j = (cfg.beta * f + g + h) / n;
    if flags.reg {
        j += cfg.lambda * regularizer(params);
    }
    j
}

/// Objective over an entire dataset.
pub fn dataset_objective(ds: &Dataset, params: &ModelParams, cfg: &LossConfig) -> f64 {
    let refs: Vec<&SuperBag> = ds.super_bags.iter().collect();
    total_objective(&refs, params, cfg)
}
