//! Mini-batch SGD on the training objective.
//!
//! The gradient here is derived analytically from the objective and is kept
//! honest by [`fd_check`], a central-difference oracle over every
//! coordinate. A single training run is strictly sequential; batch members
//! are reduced in batch order, so results are bit-identical for a given
//! seed no matter how many threads the `parallel` feature uses.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, SuperBag};
use crate::error::{Error, Result};
use crate::exec;
use crate::model::{dot, logit, sigmoid, softplus, ModelParams, Variant};
use crate::objective::{
    self, total_objective_with, LossConfig, TermFlags, PROB_EPS,
};

/// Weight initialization. Zeros is the deterministic baseline; gaussian
/// noise is available for symmetry-breaking studies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Init {
    Zeros,
    Gaussian { scale: f64 },
}

impl FromStr for Init {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "zeros" {
            return Ok(Init::Zeros);
        }
        if s == "gaussian" {
            return Ok(Init::Gaussian { scale: 0.01 });
        }
        if let Some(rest) = s.strip_prefix("gaussian:") {
            let scale: f64 = rest
                .parse()
                .map_err(|_| Error::Validation(format!("bad init scale '{rest}'")))?;
            return Ok(Init::Gaussian { scale });
        }
        Err(Error::Validation(format!(
            "unknown init '{s}', expected 'zeros', 'gaussian' or 'gaussian:<scale>'"
        )))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub variant: Variant,
    pub loss: LossConfig,
    /// Initial learning rate. Updates use eta_t = lr0 / (1 + lr0 * lambda * t)
    /// with t the global update counter, so the rate is constant when
    /// lambda = 0. lr0 = 0 freezes the parameters (useful in tests).
    pub lr0: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub init: Init,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: Variant::Nmil,
            loss: LossConfig::default(),
            lr0: 0.1,
            epochs: 50,
            batch_size: 8,
            seed: 7,
            init: Init::Zeros,
        }
    }
}

impl TrainConfig {
    // Negated comparisons are deliberate: they also reject NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if !(self.lr0 >= 0.0) || !self.lr0.is_finite() {
            return Err(Error::Config(format!(
                "lr0 must be finite and >= 0, got {}",
                self.lr0
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if let Init::Gaussian { scale } = self.init {
            if !(scale > 0.0) || !scale.is_finite() {
                return Err(Error::Config(format!(
                    "gaussian init scale must be finite and > 0, got {scale}"
                )));
            }
        }
        Ok(())
    }
}

/// Derives an independent training seed from a base seed and a salt
/// (fold index, class index, ...) via a splitmix64 round, so related runs
/// never share an RNG stream.
pub fn derive_seed(base: u64, salt: u64) -> u64 {
    let mut z = base
        .wrapping_add(salt.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Outcome of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Full-dataset objective recorded at the end of each epoch.
    pub objective_trace: Vec<f64>,
    pub final_params: ModelParams,
    pub epochs_run: usize,
}

fn row_index(params: &ModelParams, day: usize) -> usize {
    if params.variant.per_day_weights() {
        day - 1
    } else {
        0
    }
}

fn zero_grad(params: &ModelParams) -> Vec<Vec<f64>> {
    params.weights.iter().map(|r| vec![0.0; r.len()]).collect()
}

/// d(-log clamp(P))/dP scaled by beta and signed by the label; zero inside
/// the clamped region, matching the flat loss there.
fn fit_coef(p_super: f64, label: i8, beta: f64) -> f64 {
    if p_super <= PROB_EPS || p_super >= 1.0 - PROB_EPS {
        return 0.0;
    }
    if label > 0 {
        -beta / p_super
    } else {
        beta / (1.0 - p_super)
    }
}

/// Hinge subgradient w.r.t. the raw score z; the side s is a constant of
/// the current iterate and the derivative at the exact kink is 0.
fn hinge_dz(z: f64, cfg: &LossConfig) -> f64 {
    let s = if sigmoid(z) >= cfg.p0 { 1.0 } else { -1.0 };
    if cfg.m0 - s * z > 0.0 {
        -s
    } else {
        0.0
    }
}

fn superbag_grad(
    sb: &SuperBag,
    params: &ModelParams,
    cfg: &LossConfig,
    flags: TermFlags,
    grad: &mut [Vec<f64>],
) {
    if params.variant.collapses_days() {
        collapsed_grad(sb, params, cfg, flags, grad);
        return;
    }

    let t = sb.days.len();
    let mut scores: Vec<Vec<f64>> = Vec::with_capacity(t);
    let mut day_probs = Vec::with_capacity(t);
    for bag in &sb.days {
        let w = params.w(bag.day);
        let zs: Vec<f64> = bag.instances.iter().map(|i| dot(w, &i.features)).collect();
        let p = zs.iter().map(|&z| sigmoid(z)).sum::<f64>() / zs.len() as f64;
        scores.push(zs);
        day_probs.push(p);
    }

    // d(cost)/d(day prob) for every day: the fit term spreads uniformly,
    // each smoothness pair pulls its two days in opposite directions.
    let mut pcoef = vec![0.0; t];
    if flags.fit {
        let p_super = day_probs.iter().sum::<f64>() / t as f64;
        let c = fit_coef(p_super, sb.label, cfg.beta) / t as f64;
        pcoef.fill(c);
    }
    if flags.smooth {
        let weighted = params.variant == Variant::NmilDelta;
        for i in 1..t {
            let mut c = 2.0 * (day_probs[i] - day_probs[i - 1]) / t as f64;
            if weighted {
                c *= objective::mean_cross_cosine(&sb.days[i - 1], &sb.days[i]);
            }
            pcoef[i] += c;
            pcoef[i - 1] -= c;
        }
    }

    for (i, bag) in sb.days.iter().enumerate() {
        let row = row_index(params, bag.day);
        let n_i = bag.instances.len() as f64;
        for (inst, &z) in bag.instances.iter().zip(&scores[i]) {
            let p = sigmoid(z);
            let mut c = pcoef[i] * p * (1.0 - p) / n_i;
            if flags.margin {
                c += hinge_dz(z, cfg) / (t as f64 * n_i);
            }
            if c != 0.0 {
                for (g, &x) in grad[row].iter_mut().zip(&inst.features) {
                    *g += c * x;
                }
            }
        }
    }
}

fn collapsed_grad(
    sb: &SuperBag,
    params: &ModelParams,
    cfg: &LossConfig,
    flags: TermFlags,
    grad: &mut [Vec<f64>],
) {
    let w = params.w(1);
    let noisy = params.variant == Variant::RmilNor;
    let n = sb.instance_count() as f64;

    let instances = || sb.days.iter().flat_map(|b| b.instances.iter());
    let zs: Vec<f64> = instances().map(|i| dot(w, &i.features)).collect();

    // For noisy-OR, log_q = sum ln(1 - p_k); then dP/dz_k = p_k * exp(log_q)
    // (the leave-one-out product times p_k * (1 - p_k) / (1 - p_k)).
    let log_q: f64 = if noisy {
        zs.iter().map(|&z| -softplus(z)).sum()
    } else {
        0.0
    };
    let p_super = if noisy {
        -log_q.exp_m1()
    } else {
        zs.iter().map(|&z| sigmoid(z)).sum::<f64>() / n
    };
    let coef_f = if flags.fit {
        fit_coef(p_super, sb.label, cfg.beta)
    } else {
        0.0
    };

    for (inst, &z) in instances().zip(&zs) {
        let p = sigmoid(z);
        let dp_dz = if noisy {
            p * log_q.exp()
        } else {
            p * (1.0 - p) / n
        };
        let mut c = coef_f * dp_dz;
        if flags.margin {
            c += hinge_dz(z, cfg) / n;
        }
        if c != 0.0 {
            for (g, &x) in grad[0].iter_mut().zip(&inst.features) {
                *g += c * x;
            }
        }
    }
}

/// Exact gradient of the objective over a batch, same shape as the weights.
pub fn gradient(batch: &[&SuperBag], params: &ModelParams, cfg: &LossConfig) -> Vec<Vec<f64>> {
    gradient_with(batch, params, cfg, TermFlags::ALL)
}

/// [`gradient`] with term toggles; per-super-bag contributions are summed
/// in batch order.
pub fn gradient_with(
    batch: &[&SuperBag],
    params: &ModelParams,
    cfg: &LossConfig,
    flags: TermFlags,
) -> Vec<Vec<f64>> {
    assert!(!batch.is_empty(), "gradient of an empty batch");
    let per_sb = exec::map_slice(batch, |sb| {
        let mut g = zero_grad(params);
        superbag_grad(sb, params, cfg, flags, &mut g);
        g
    });
    let mut grad = zero_grad(params);
    for m in per_sb {
        for (row, mrow) in grad.iter_mut().zip(&m) {
            for (g, v) in row.iter_mut().zip(mrow) {
                *g += v;
            }
        }
    }
    let inv_n = 1.0 / batch.len() as f64;
    for (row, wrow) in grad.iter_mut().zip(&params.weights) {
        for (g, &wv) in row.iter_mut().zip(wrow) {
            *g *= inv_n;
            if flags.reg {
                *g += cfg.lambda * wv;
            }
        }
    }
    grad
}

// ---------------------------------------------------------------------------
// Finite-difference oracle
// ---------------------------------------------------------------------------

/// Coordinates whose +-step perturbation could cross a hinge kink or the
/// sign boundary for some instance; central differences are meaningless
/// across a kink, so these are skipped by [`fd_check`].
fn kink_mask(
    batch: &[&SuperBag],
    params: &ModelParams,
    cfg: &LossConfig,
    step: f64,
) -> Vec<Vec<bool>> {
    let z0 = logit(cfg.p0);
    let mut mask: Vec<Vec<bool>> = params
        .weights
        .iter()
        .map(|r| vec![false; r.len()])
        .collect();
    for sb in batch {
        for bag in &sb.days {
            let day = if params.variant.collapses_days() {
                1
            } else {
                bag.day
            };
            let row = row_index(params, day);
            let w = params.w(day);
            for inst in &bag.instances {
                let z = dot(w, &inst.features);
                let s = if sigmoid(z) >= cfg.p0 { 1.0 } else { -1.0 };
                let hinge_dist = (cfg.m0 - s * z).abs();
                let sign_dist = (z - z0).abs();
                for (k, &x) in inst.features.iter().enumerate() {
                    let reach = 1.5 * step * x.abs() + 1e-9;
                    if hinge_dist <= reach || sign_dist <= reach {
                        mask[row][k] = true;
                    }
                }
            }
        }
    }
    mask
}

/// Max relative error between the analytic gradient and central finite
/// differences, over all coordinates not adjacent to a hinge kink. The
/// relative error of coordinate c is |a_c - fd_c| / max(1e-8, |a_c| + |fd_c|).
pub fn fd_check(batch: &[&SuperBag], params: &ModelParams, cfg: &LossConfig, step: f64) -> f64 {
    fd_check_with(batch, params, cfg, TermFlags::ALL, step)
}

pub fn fd_check_with(
    batch: &[&SuperBag],
    params: &ModelParams,
    cfg: &LossConfig,
    flags: TermFlags,
    step: f64,
) -> f64 {
    assert!(step > 0.0, "fd step must be positive");
    let analytic = gradient_with(batch, params, cfg, flags);
    let mask = if flags.margin {
        kink_mask(batch, params, cfg, step)
    } else {
        params
            .weights
            .iter()
            .map(|r| vec![false; r.len()])
            .collect()
    };

    let coords: Vec<(usize, usize)> = params
        .weights
        .iter()
        .enumerate()
        .flat_map(|(r, row)| (0..row.len()).map(move |k| (r, k)))
        .collect();
    let errs = exec::map_slice(&coords, |&(r, k)| {
        if mask[r][k] {
            return 0.0;
        }
        let mut up = params.clone();
        up.weights[r][k] += step;
        let mut down = params.clone();
        down.weights[r][k] -= step;
        let fd = (total_objective_with(batch, &up, cfg, flags)
            - total_objective_with(batch, &down, cfg, flags))
            / (2.0 * step);
        let a = analytic[r][k];
        (a - fd).abs() / f64::max(1e-8, a.abs() + fd.abs())
    });
    errs.into_iter().fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// SGD
// ---------------------------------------------------------------------------

/// Trains a model of `tcfg.variant` on `ds`. Deterministic for a given
/// seed: initialization, epoch shuffles, and update order all come from one
/// seeded RNG stream. Fails if the full-dataset objective turns non-finite
/// at an epoch boundary.
pub fn train(ds: &Dataset, tcfg: &TrainConfig) -> Result<TrainReport> {
    tcfg.validate()?;
    if ds.is_empty() {
        return Err(Error::Config("cannot train on an empty dataset".into()));
    }
    if tcfg.batch_size > ds.len() {
        return Err(Error::Config(format!(
            "batch_size {} exceeds the {} super-bags available",
            tcfg.batch_size,
            ds.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let mut params = ModelParams::zeros(tcfg.variant, ds.feature_dim, ds.history_days);
    if let Init::Gaussian { scale } = tcfg.init {
        let normal = Normal::new(0.0, scale)
            .map_err(|e| Error::Config(format!("bad init distribution: {e}")))?;
        for row in &mut params.weights {
            for v in row.iter_mut() {
                *v = normal.sample(&mut rng);
            }
        }
    }

    let cfg = &tcfg.loss;
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut trace = Vec::with_capacity(tcfg.epochs);
    let mut updates: u64 = 0;
    for epoch in 1..=tcfg.epochs {
        order.shuffle(&mut rng);
        let mut lr = tcfg.lr0;
        for chunk in order.chunks(tcfg.batch_size) {
            let batch: Vec<&SuperBag> = chunk.iter().map(|&i| &ds.super_bags[i]).collect();
            lr = tcfg.lr0 / (1.0 + tcfg.lr0 * cfg.lambda * updates as f64);
            let grad = gradient(&batch, &params, cfg);
            for (row, grow) in params.weights.iter_mut().zip(&grad) {
                for (w, g) in row.iter_mut().zip(grow) {
                    *w -= lr * g;
                }
            }
            updates += 1;
        }
        let j = objective::dataset_objective(ds, &params, cfg);
        if !j.is_finite() {
            return Err(Error::Training { epoch, lr });
        }
        trace.push(j);
    }

    Ok(TrainReport {
        objective_trace: trace,
        final_params: params,
        epochs_run: tcfg.epochs,
    })
}

/// Writes an objective trace as `epoch,objective` CSV (epochs from 1).
pub fn save_trace(trace: &[f64], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::from("epoch,objective\n");
    for (i, j) in trace.iter().enumerate() {
        s.push_str(&format!("{},{}\n", i + 1, j));
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}
