//! Model variants and scoring.
//!
//! All variants share one primitive: an instance with features `x` scores
//! `p = sigmoid(w . x)` for a weight vector `w`. They differ in how instance
//! probabilities aggregate upward:
//!
//! * `nmil`, `nmil-delta`, `nmil-omega`: per-day bag probability is the mean
//!   instance probability, and the super-bag probability is the mean over
//!   days. `nmil-omega` learns a separate weight vector per day; the other
//!   two share one vector (they differ only in the training objective).
//! * `rmil-avg`: days are collapsed into one flat bag; the super-bag
//!   probability is the mean over all instances.
//! * `rmil-nor`: days are collapsed and combined with noisy-OR,
//!   `P = 1 - prod(1 - p)`.
//!
//! The forecast is +1 when `P > 0.5`, else -1.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Bag, Dataset, Instance, SuperBag};
use crate::error::{Error, Result};
use crate::exec;
use crate::trainer::TrainConfig;

pub const MODEL_SCHEMA: &str = "nmil-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Nmil,
    NmilDelta,
    NmilOmega,
    RmilNor,
    RmilAvg,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Nmil,
        Variant::NmilDelta,
        Variant::NmilOmega,
        Variant::RmilNor,
        Variant::RmilAvg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Nmil => "nmil",
            Variant::NmilDelta => "nmil-delta",
            Variant::NmilOmega => "nmil-omega",
            Variant::RmilNor => "rmil-nor",
            Variant::RmilAvg => "rmil-avg",
        }
    }

    /// True when training keeps one weight vector per history day.
    pub fn per_day_weights(self) -> bool {
        matches!(self, Variant::NmilOmega)
    }

    /// True when the day structure is flattened into a single bag.
    pub fn collapses_days(self) -> bool {
        matches!(self, Variant::RmilNor | Variant::RmilAvg)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
                Error::Validation(format!(
                    "unknown variant '{s}', expected one of: {}",
                    names.join(", ")
                ))
            })
    }
}

// ---------------------------------------------------------------------------
// Numeric primitives
// ---------------------------------------------------------------------------

/// Logistic function, finite and monotone over all of f64.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        // exp(z) <= 1 here, so no overflow; preserves tiny probabilities
        // that the naive form would round away.
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + exp(z))` without overflow. Note `ln(1 - sigmoid(z)) = -softplus(z)`.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Inverse of [`sigmoid`] on (0, 1).
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn dot(w: &[f64], x: &[f64]) -> f64 {
    debug_assert_eq!(w.len(), x.len());
    w.iter().zip(x).map(|(a, b)| a * b).sum()
}

/// Cosine similarity; zero whenever either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

/// Mean instance probability of a bag.
fn mean_prob<'a>(w: &[f64], xs: impl Iterator<Item = &'a Instance>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for inst in xs {
        sum += sigmoid(dot(w, &inst.features));
        n += 1;
    }
    debug_assert!(n > 0, "bag probability of an empty bag");
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Noisy-OR combination `1 - prod(1 - p_k)`, accumulated in log space so a
/// bag of thousands of tiny probabilities neither underflows nor saturates
/// prematurely.
fn noisy_or<'a>(w: &[f64], xs: impl Iterator<Item = &'a Instance>) -> f64 {
    let mut log_q = 0.0;
    for inst in xs {
        log_q -= softplus(dot(w, &inst.features));
    }
    -log_q.exp_m1()
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

/// Learned weights plus the geometry they were trained for. `weights` holds
/// one row per history day for `nmil-omega` and a single shared row for
/// every other variant.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub variant: Variant,
    pub feature_dim: usize,
    pub history_days: usize,
    pub weights: Vec<Vec<f64>>,
}

impl ModelParams {
    pub fn zeros(variant: Variant, feature_dim: usize, history_days: usize) -> Self {
        let rows = if variant.per_day_weights() {
            history_days
        } else {
            1
        };
        ModelParams {
            variant,
            feature_dim,
            history_days,
            weights: vec![vec![0.0; feature_dim]; rows],
        }
    }

    /// Weight vector used for day `day` (1-based).
    pub fn w(&self, day: usize) -> &[f64] {
        if self.variant.per_day_weights() {
            &self.weights[day - 1]
        } else {
            &self.weights[0]
        }
    }

    /// Total number of learned scalars.
    pub fn n_params(&self) -> usize {
        self.weights.iter().map(|r| r.len()).sum()
    }

    /// Checks that a dataset matches this model's geometry.
    pub fn check_compat(&self, ds: &Dataset) -> Result<()> {
        if ds.feature_dim != self.feature_dim {
            return Err(Error::Validation(format!(
                "dataset has feature_dim {}, model expects {}",
                ds.feature_dim, self.feature_dim
            )));
        }
        if self.variant.per_day_weights() && ds.history_days != self.history_days {
            return Err(Error::Validation(format!(
                "dataset has {} history days, per-day model expects {}",
                ds.history_days, self.history_days
            )));
        }
        Ok(())
    }
}

/// Probability of one bag under the variant's aggregator (mean for the
/// averaging variants, noisy-OR for `rmil-nor`), using the weight vector for
/// the bag's day.
pub fn bag_prob(params: &ModelParams, bag: &Bag) -> f64 {
    let w = params.w(bag.day);
    match params.variant {
        Variant::RmilNor => noisy_or(w, bag.instances.iter()),
        _ => mean_prob(w, bag.instances.iter()),
    }
}

fn day_prob(params: &ModelParams, sb: &SuperBag, day_idx: usize) -> f64 {
    bag_prob(params, &sb.days[day_idx])
}

/// Super-bag probability `P` under the model's aggregation rule.
pub fn superbag_prob(params: &ModelParams, sb: &SuperBag) -> f64 {
    match params.variant {
        Variant::Nmil | Variant::NmilDelta | Variant::NmilOmega => {
            let t = sb.days.len();
            let sum: f64 = (0..t).map(|i| day_prob(params, sb, i)).sum();
            sum / t as f64
        }
        Variant::RmilAvg => mean_prob(
            params.w(1),
            sb.days.iter().flat_map(|b| b.instances.iter()),
        ),
        Variant::RmilNor => noisy_or(
            params.w(1),
            sb.days.iter().flat_map(|b| b.instances.iter()),
        ),
    }
}

/// Forecast from a super-bag probability: +1 strictly above 1/2, else -1.
pub fn predict(p_super: f64) -> i8 {
    if p_super > 0.5 {
        1
    } else {
        -1
    }
}

/// Super-bag probabilities for a whole dataset, in corpus order.
pub fn score_dataset(params: &ModelParams, ds: &Dataset) -> Result<Vec<f64>> {
    params.check_compat(ds)?;
    Ok(exec::map_slice(&ds.super_bags, |sb| {
        superbag_prob(params, sb)
    }))
}

// ---------------------------------------------------------------------------
// On-disk format
// ---------------------------------------------------------------------------

/// A trained model together with the configuration that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub params: ModelParams,
    pub config: TrainConfig,
}

#[derive(Serialize, Deserialize)]
pub(crate) struct ModelWire {
    schema: String,
    version: u32,
    variant: Variant,
    feature_dim: usize,
    history_days: usize,
    weights: Vec<Vec<f64>>,
    config: TrainConfig,
}

impl ModelWire {
    pub(crate) fn from_model(m: &SavedModel) -> Self {
        ModelWire {
            schema: MODEL_SCHEMA.into(),
            version: MODEL_VERSION,
            variant: m.params.variant,
            feature_dim: m.params.feature_dim,
            history_days: m.params.history_days,
            weights: m.params.weights.clone(),
            config: m.config.clone(),
        }
    }

    pub(crate) fn into_model(self) -> Result<SavedModel> {
        if self.schema != MODEL_SCHEMA {
            return Err(Error::Validation(format!(
                "schema is '{}', expected '{}'",
                self.schema, MODEL_SCHEMA
            )));
        }
        if self.version != MODEL_VERSION {
            return Err(Error::Validation(format!(
                "unsupported model version {}",
                self.version
            )));
        }
        let expect_rows = if self.variant.per_day_weights() {
            self.history_days
        } else {
            1
        };
        if self.weights.len() != expect_rows {
            return Err(Error::Validation(format!(
                "variant {} expects {} weight row(s), file has {}",
                self.variant,
                expect_rows,
                self.weights.len()
            )));
        }
        for row in &self.weights {
            if row.len() != self.feature_dim {
                return Err(Error::Validation(format!(
                    "weight row has {} entries, expected feature_dim {}",
                    row.len(),
                    self.feature_dim
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation("model weights are not finite".into()));
            }
        }
        Ok(SavedModel {
            params: ModelParams {
                variant: self.variant,
                feature_dim: self.feature_dim,
                history_days: self.history_days,
                weights: self.weights,
            },
            config: self.config,
        })
    }
}

pub fn model_to_string(m: &SavedModel) -> String {
    let mut s =
        serde_json::to_string_pretty(&ModelWire::from_model(m)).expect("model serializes");
    s.push('\n');
    s
}

pub fn save_model(m: &SavedModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, model_to_string(m)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<SavedModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let wire: ModelWire = serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: 1,
        msg: format!("bad model file: {e}"),
    })?;
    wire.into_model()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Bag;

    fn sb_with(days: Vec<Vec<Vec<f64>>>) -> SuperBag {
        SuperBag {
            event_id: "t".into(),
            label: 1,
            class_label: None,
            days: days
                .into_iter()
                .enumerate()
                .map(|(i, feats)| Bag {
                    day: i + 1,
                    instances: feats
                        .into_iter()
                        .enumerate()
                        .map(|(j, f)| Instance::new(format!("i{i}{j}"), f))
                        .collect(),
                })
                .collect(),
            target_doc: None,
        }
    }

    #[test]
    fn sigmoid_known_values() {
        assert_eq!(sigmoid(0.0), 0.5);
        // sigmoid(ln 3) = 3/4 exactly in real arithmetic.
        assert!((sigmoid(3.0f64.ln()) - 0.75).abs() < 1e-15);
        assert!((sigmoid(2.0) + sigmoid(-2.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_extremes_are_finite_and_ordered() {
        assert_eq!(sigmoid(1000.0), 1.0);
        assert_eq!(sigmoid(-1000.0), 0.0);
        let deep = sigmoid(-745.0);
        assert!(deep > 0.0 && deep < 1e-300);
        assert!(sigmoid(-30.0) < sigmoid(-29.0));
    }

    #[test]
    fn softplus_matches_log_sigmoid_identity() {
        assert!((softplus(0.0) - 2.0f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(1000.0), 1000.0);
        // ln(1 - sigmoid(z)) = -softplus(z) wherever the naive left side is
        // itself accurate (|z| small enough that 1 - sigmoid keeps digits).
        for &z in &[-12.0, -3.0, -0.1, 0.0, 0.7, 5.0, 12.0] {
            let naive = (1.0 - sigmoid(z)).ln();
            let rel = (naive + softplus(z)).abs() / softplus(z);
            assert!(rel < 1e-9, "z={z}");
        }
        // Outside that range the naive form collapses; softplus does not.
        assert_eq!((1.0 - sigmoid(40.0)).ln(), f64::NEG_INFINITY);
        assert!((softplus(40.0) - 40.0).abs() < 1e-12);
        assert_eq!((1.0 - sigmoid(-40.0)).ln(), 0.0);
        let tiny = softplus(-40.0);
        assert!(tiny > 0.0 && (tiny - (-40.0f64).exp()).abs() < 1e-15 * tiny);
    }

    #[test]
    fn logit_inverts_sigmoid() {
        for &p in &[0.01, 0.25, 0.5, 0.9] {
            assert!((sigmoid(logit(p)) - p).abs() < 1e-12);
        }
    }

    #[test]
    fn cosine_reference_cases() {
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 2.0]), 0.0);
        assert!((cosine(&[1.0, 1.0], &[2.0, 2.0]) - 1.0).abs() < 1e-15);
        assert!((cosine(&[1.0, 0.0], &[-3.0, 0.0]) + 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 1.0]), 0.0);
    }

    #[test]
    fn bag_prob_is_mean_for_averaging_variants() {
        // Instance probs {0.2, 0.4, 0.6} average to 0.4.
        let params = ModelParams {
            variant: Variant::Nmil,
            feature_dim: 1,
            history_days: 1,
            weights: vec![vec![1.0]],
        };
        let sb = sb_with(vec![vec![
            vec![logit(0.2)],
            vec![logit(0.4)],
            vec![logit(0.6)],
        ]]);
        assert!((bag_prob(&params, &sb.days[0]) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn noisy_or_two_halves() {
        // Two independent instances at p = 1/2 give 1 - 1/4 = 3/4.
        let params = ModelParams::zeros(Variant::RmilNor, 2, 1);
        let sb = sb_with(vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]]);
        assert!((superbag_prob(&params, &sb) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn noisy_or_underflow_and_saturation() {
        // 50 instances at p = 1/2: P = 1 - 2^-50, strictly below 1.
        let params = ModelParams::zeros(Variant::RmilNor, 1, 1);
        let sb = sb_with(vec![vec![vec![0.0]; 50]]);
        let p = superbag_prob(&params, &sb);
        assert!((p - (1.0 - 0.5f64.powi(50))).abs() < 1e-15);
        assert!(p < 1.0);

        // 1000 near-zero probabilities: the union bound gives
        // sum - sum^2/2 <= P <= sum exactly, with no rounding traps.
        let w = ModelParams {
            variant: Variant::RmilNor,
            feature_dim: 1,
            history_days: 1,
            weights: vec![vec![-20.0]],
        };
        let sb = sb_with(vec![vec![vec![1.0]; 1000]]);
        let p = superbag_prob(&w, &sb);
        let sum = 1000.0 * sigmoid(-20.0);
        assert!(p > 0.0);
        assert!(p <= sum * (1.0 + 1e-12));
        assert!(p >= (sum - 0.5 * sum * sum) * (1.0 - 1e-12));
    }

    #[test]
    fn nested_mean_vs_flat_mean() {
        let mut params = ModelParams::zeros(Variant::Nmil, 1, 2);
        params.weights[0][0] = 1.0;
        // Day 1 has one instance, day 2 has three: nested and flat means differ.
        let sb = sb_with(vec![
            vec![vec![2.0]],
            vec![vec![-1.0], vec![0.0], vec![1.0]],
        ]);
        let nested = superbag_prob(&params, &sb);
        let day1 = sigmoid(2.0);
        let day2 = (sigmoid(-1.0) + sigmoid(0.0) + sigmoid(1.0)) / 3.0;
        assert!((nested - 0.5 * (day1 + day2)).abs() < 1e-15);

        let flat_params = ModelParams {
            variant: Variant::RmilAvg,
            ..params.clone()
        };
        let flat = superbag_prob(&flat_params, &sb);
        let all = (sigmoid(2.0) + sigmoid(-1.0) + sigmoid(0.0) + sigmoid(1.0)) / 4.0;
        assert!((flat - all).abs() < 1e-15);
        assert!((nested - flat).abs() > 1e-3);
    }

    #[test]
    fn omega_uses_per_day_weights() {
        let mut params = ModelParams::zeros(Variant::NmilOmega, 1, 2);
        params.weights[0][0] = 5.0;
        params.weights[1][0] = -5.0;
        let sb = sb_with(vec![vec![vec![1.0]], vec![vec![1.0]]]);
        let p = superbag_prob(&params, &sb);
        assert!((p - 0.5 * (sigmoid(5.0) + sigmoid(-5.0))).abs() < 1e-15);
    }

    #[test]
    fn tie_predicts_negative() {
        assert_eq!(predict(0.5), -1);
        assert_eq!(predict(0.5 + 1e-9), 1);
        assert_eq!(predict(0.2), -1);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
            let json = serde_json::to_string(&v).unwrap();
            assert_eq!(json, format!("\"{v}\""));
        }
        assert!("nMIL".parse::<Variant>().is_err());
    }

    #[test]
    fn model_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let mut params = ModelParams::zeros(Variant::NmilDelta, 3, 4);
        params.weights[0] = vec![0.1 + 0.2, -1.0 / 3.0, 4.5e-17];
        let m = SavedModel {
            params,
            config: TrainConfig::default(),
        };
        save_model(&m, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back, m);
        for (a, b) in m.params.weights[0].iter().zip(&back.params.weights[0]) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn model_file_shape_validation() {
        let m = SavedModel {
            params: ModelParams::zeros(Variant::NmilOmega, 2, 3),
            config: TrainConfig::default(),
        };
        let mut wire = ModelWire::from_model(&m);
        wire.weights.pop();
        assert!(wire.into_model().is_err());

        let mut wire = ModelWire::from_model(&m);
        wire.schema = "something".into();
        assert!(wire.into_model().is_err());

        let mut wire = ModelWire::from_model(&m);
        wire.weights[0].push(0.0);
        assert!(wire.into_model().is_err());
    }
}
