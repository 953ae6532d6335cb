//! Two-stage multi-class extension: a binary gate over all super-bags,
//! then one-vs-rest classifiers trained on positives only.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, SuperBag};
use crate::error::{Error, Result};
use crate::exec;
use crate::model::{self, ModelParams, ModelWire, SavedModel};
use crate::trainer::{self, TrainConfig};

pub const MULTI_SCHEMA: &str = "nmil-multiclass";
pub const MULTI_VERSION: u32 = 1;

/// Gate plus K one-vs-rest classifiers sharing variant and dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiModel {
    pub binary: ModelParams,
    pub per_class: Vec<ModelParams>,
    pub class_names: Option<Vec<String>>,
}

impl MultiModel {
    pub fn class_count(&self) -> usize {
        self.per_class.len()
    }

    fn check(&self) -> Result<()> {
        if self.per_class.len() < 2 {
            return Err(Error::Validation(format!(
                "one-vs-rest needs at least 2 classes, got {}",
                self.per_class.len()
            )));
        }
        for p in &self.per_class {
            if p.variant != self.binary.variant
                || p.feature_dim != self.binary.feature_dim
                || p.history_days != self.binary.history_days
            {
                return Err(Error::Validation(
                    "class models must share the gate's variant and dimensions".into(),
                ));
            }
        }
        if let Some(names) = &self.class_names {
            if names.len() != self.per_class.len() {
                return Err(Error::Validation(format!(
                    "{} class names for {} classes",
                    names.len(),
                    self.per_class.len()
                )));
            }
        }
        Ok(())
    }
}

/// Positives of `ds` relabeled for the one-vs-rest task of class `c`.
fn class_dataset(ds: &Dataset, pos_idx: &[usize], c: usize) -> Dataset {
    let mut out = ds.subset(pos_idx);
    for sb in &mut out.super_bags {
        sb.label = if sb.class_label == Some(c) { 1 } else { -1 };
        sb.class_label = None;
    }
    out
}

/// Trains the gate on the full dataset and one classifier per class on the
/// positives (relabeled one-vs-rest). The K+1 trainings run concurrently,
/// each on its own RNG stream derived from `tcfg.seed` (salt 0 for the
/// gate, c for class c), so results do not depend on scheduling.
pub fn train_multiclass(ds: &Dataset, tcfg: &TrainConfig, k: usize) -> Result<MultiModel> {
    if k < 2 {
        return Err(Error::Config(format!(
            "one-vs-rest needs at least 2 classes, got {k}"
        )));
    }
    let mut pos_idx = Vec::new();
    for (i, sb) in ds.super_bags.iter().enumerate() {
        if sb.label != 1 {
            continue;
        }
        match sb.class_label {
            Some(c) if (1..=k).contains(&c) => pos_idx.push(i),
            Some(c) => {
                return Err(Error::Validation(format!(
                    "super-bag {} has class label {c}, expected 1..={k}",
                    sb.event_id
                )))
            }
            None => {
                return Err(Error::Validation(format!(
                    "positive super-bag {} has no class label",
                    sb.event_id
                )))
            }
        }
    }
    if let Some(names) = &ds.class_names {
        if names.len() != k {
            return Err(Error::Validation(format!(
                "dataset names {} classes but k = {k}",
                names.len()
            )));
        }
    }

    let trained = exec::map_indexed(k + 1, |j| -> Result<ModelParams> {
        let cfg = TrainConfig {
            seed: trainer::derive_seed(tcfg.seed, j as u64),
            ..tcfg.clone()
        };
        let data = if j == 0 {
            ds.clone()
        } else {
            class_dataset(ds, &pos_idx, j)
        };
        Ok(trainer::train(&data, &cfg)?.final_params)
    });
    let mut models = Vec::with_capacity(k + 1);
    for t in trained {
        models.push(t?);
    }
    let binary = models.remove(0);
    let mm = MultiModel {
        binary,
        per_class: models,
        class_names: ds.class_names.clone(),
    };
    mm.check()?;
    Ok(mm)
}

/// Two-stage prediction: 0 when the gate says negative, otherwise the
/// class with the highest super-bag probability (ties go to the smallest
/// class index). Class labels are 1-based.
pub fn classify(mm: &MultiModel, sb: &SuperBag) -> usize {
    let gate = model::superbag_prob(&mm.binary, sb);
    if model::predict(gate) == -1 {
        return 0;
    }
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (c, params) in mm.per_class.iter().enumerate() {
        let score = model::superbag_prob(params, sb);
        if score > best_score {
            best_score = score;
            best = c + 1;
        }
    }
    best
}

/// [`classify`] over a whole dataset, with dimension checks up front.
pub fn classify_dataset(mm: &MultiModel, ds: &Dataset) -> Result<Vec<usize>> {
    mm.check()?;
    mm.binary.check_compat(ds)?;
    Ok(exec::map_slice(&ds.super_bags, |sb| classify(mm, sb)))
}

// ---------------------------------------------------------------------------
// On-disk format
// ---------------------------------------------------------------------------

/// A trained multi-class bundle with the gate's training configuration
/// (per-class configurations differ only in their derived seed).
#[derive(Debug, Clone, PartialEq)]
pub struct SavedMultiModel {
    pub model: MultiModel,
    pub config: TrainConfig,
}

#[derive(Serialize, Deserialize)]
struct MultiWire {
    schema: String,
    version: u32,
    class_names: Option<Vec<String>>,
    binary: ModelWire,
    classes: Vec<ModelWire>,
}

/// Serializes the bundle; `base_cfg` is the configuration passed to
/// [`train_multiclass`], and each record stores the seed its training
/// actually used.
pub fn multimodel_to_string(mm: &MultiModel, base_cfg: &TrainConfig) -> String {
    let record = |params: &ModelParams, salt: u64| {
        ModelWire::from_model(&SavedModel {
            params: params.clone(),
            config: TrainConfig {
                seed: trainer::derive_seed(base_cfg.seed, salt),
                ..base_cfg.clone()
            },
        })
    };
    let wire = MultiWire {
        schema: MULTI_SCHEMA.into(),
        version: MULTI_VERSION,
        class_names: mm.class_names.clone(),
        binary: record(&mm.binary, 0),
        classes: mm
            .per_class
            .iter()
            .enumerate()
            .map(|(c, p)| record(p, c as u64 + 1))
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&wire).expect("bundle serializes");
    s.push('\n');
    s
}

pub fn save_multimodel(
    mm: &MultiModel,
    base_cfg: &TrainConfig,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, multimodel_to_string(mm, base_cfg)).map_err(|e| Error::io(path, e))
}

pub fn load_multimodel(path: impl AsRef<Path>) -> Result<SavedMultiModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let wire: MultiWire = serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: 1,
        msg: format!("bad multi-class bundle: {e}"),
    })?;
    if wire.schema != MULTI_SCHEMA {
        return Err(Error::Validation(format!(
            "schema is '{}', expected '{}'",
            wire.schema, MULTI_SCHEMA
        )));
    }
    if wire.version != MULTI_VERSION {
        return Err(Error::Validation(format!(
            "unsupported bundle version {}",
            wire.version
        )));
    }
    let binary = wire.binary.into_model()?;
    let mut per_class = Vec::with_capacity(wire.classes.len());
    for c in wire.classes {
        per_class.push(c.into_model()?.params);
    }
    let mm = MultiModel {
        binary: binary.params,
        per_class,
        class_names: wire.class_names,
    };
    mm.check()?;
    Ok(SavedMultiModel {
        model: mm,
        config: binary.config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Bag, Instance};
    use crate::model::{dot, logit, Variant};
    use crate::synthgen::{self, GenConfig, NPerDay};

    /// Single-instance super-bag whose probability under w = [1] is `p`.
    fn prob_sb(p: f64) -> SuperBag {
        SuperBag {
            event_id: "t".into(),
            label: 1,
            class_label: None,
            days: vec![Bag {
                day: 1,
                instances: vec![Instance {
                    id: "t-d1-i0".into(),
                    features: vec![logit(p)],
                    title: None,
                }],
            }],
            target_doc: None,
        }
    }

    fn unit_params() -> ModelParams {
        ModelParams {
            variant: Variant::Nmil,
            feature_dim: 1,
            history_days: 1,
            weights: vec![vec![1.0]],
        }
    }

    /// Class scores here are driven by scaled weights: score of class c on
    /// prob_sb(p) is sigmoid(scale * logit(p)).
    fn scaled_params(scale: f64) -> ModelParams {
        ModelParams {
            variant: Variant::Nmil,
            feature_dim: 1,
            history_days: 1,
            weights: vec![vec![scale]],
        }
    }

    #[test]
    fn gate_blocks_class_assignment() {
        let mm = MultiModel {
            binary: scaled_params(-1.0), // turns p=0.3 into sigmoid(-logit(0.3)) = 0.7
            per_class: vec![unit_params(), unit_params()],
            class_names: None,
        };
        // Gate sees 0.3 under +1 weights: flip the sign so gate = 0.3.
        let mm_neg = MultiModel {
            binary: unit_params(),
            ..mm.clone()
        };
        assert_eq!(classify(&mm_neg, &prob_sb(0.3)), 0);
        // Same super-bag with an accepting gate gets a class.
        assert_ne!(classify(&mm, &prob_sb(0.3)), 0);
    }

    #[test]
    fn argmax_and_tie_break() {
        // Gate accepts (p = 0.8); class scores are p, p^k-shaped curves.
        let sb = prob_sb(0.8);
        let mm = MultiModel {
            binary: unit_params(),
            per_class: vec![scaled_params(-1.0), scaled_params(2.0), scaled_params(1.0)],
            class_names: None,
        };
        // Scores: sigmoid(-z)=0.2, sigmoid(2z)≈0.94, sigmoid(z)=0.8 → class 2.
        assert_eq!(classify(&mm, &sb), 2);

        let tie = MultiModel {
            binary: unit_params(),
            per_class: vec![scaled_params(1.0), scaled_params(1.0)],
            class_names: None,
        };
        assert_eq!(classify(&tie, &sb), 1);
    }

    #[test]
    fn exact_boundary_gate_is_negative() {
        // Gate probability exactly 0.5 predicts -1 by convention.
        let mm = MultiModel {
            binary: scaled_params(0.0),
            per_class: vec![unit_params(), unit_params()],
            class_names: None,
        };
        assert_eq!(classify(&mm, &prob_sb(0.9)), 0);
    }

    fn two_class_config() -> GenConfig {
        GenConfig {
            n_pos: 24,
            n_neg: 24,
            history_days: 3,
            feature_dim: 10,
            n_per_day: NPerDay::fixed(4),
            n_classes: 2,
            ..GenConfig::default()
        }
    }

    fn quick_tcfg() -> TrainConfig {
        TrainConfig {
            epochs: 15,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn opposite_signal_directions_give_opposed_classifiers() {
        let (ds, truth) = synthgen::generate(&two_class_config()).unwrap();
        // The generator plants class 2 along the negated class-1 direction.
        let u = &truth.signal_directions[0];
        let v = &truth.signal_directions[1];
        assert!(dot(u, v) < 0.0);

        let mm = train_multiclass(&ds, &quick_tcfg(), 2).unwrap();
        let w1 = &mm.per_class[0].weights[0];
        let w2 = &mm.per_class[1].weights[0];
        assert!(
            dot(w1, w2) < 0.0,
            "one-vs-rest vectors should oppose, got inner product {}",
            dot(w1, w2)
        );
        // And each aligns with its own planted direction.
        assert!(dot(w1, u) > 0.0);
        assert!(dot(w2, v) > 0.0);
    }

    #[test]
    fn training_is_deterministic() {
        let (ds, _) = synthgen::generate(&two_class_config()).unwrap();
        let a = train_multiclass(&ds, &quick_tcfg(), 2).unwrap();
        let b = train_multiclass(&ds, &quick_tcfg(), 2).unwrap();
        assert_eq!(a, b);
        // Gate and class models see different RNG streams.
        assert_ne!(a.binary, a.per_class[0]);
    }

    #[test]
    fn k_and_label_validation() {
        let (ds, _) = synthgen::generate(&two_class_config()).unwrap();
        assert!(train_multiclass(&ds, &quick_tcfg(), 1).is_err());
        assert!(train_multiclass(&ds, &quick_tcfg(), 0).is_err());

        let mut unlabeled = ds.clone();
        unlabeled.class_names = None;
        for sb in &mut unlabeled.super_bags {
            sb.class_label = None;
        }
        let err = train_multiclass(&unlabeled, &quick_tcfg(), 2).unwrap_err();
        assert!(err.to_string().contains("class label"), "{err}");

        // A label outside 1..=k is rejected even if class_names agree.
        let mut wide = ds.clone();
        wide.class_names = None;
        for sb in &mut wide.super_bags {
            if sb.class_label.is_some() {
                sb.class_label = Some(3);
            }
        }
        assert!(train_multiclass(&wide, &quick_tcfg(), 2).is_err());
    }

    #[test]
    fn gate_property_holds_on_synthetic_data() {
        let (ds, _) = synthgen::generate(&two_class_config()).unwrap();
        let mm = train_multiclass(&ds, &quick_tcfg(), 2).unwrap();
        for sb in &ds.super_bags {
            let gate = model::superbag_prob(&mm.binary, sb);
            let got = classify(&mm, sb);
            if model::predict(gate) == -1 {
                assert_eq!(got, 0);
            } else {
                assert!((1..=2).contains(&got));
            }
        }
    }

    #[test]
    fn bundle_round_trip() {
        let (ds, _) = synthgen::generate(&two_class_config()).unwrap();
        let tcfg = quick_tcfg();
        let mm = train_multiclass(&ds, &tcfg, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("multi.json");
        save_multimodel(&mm, &tcfg, &path).unwrap();
        let loaded = load_multimodel(&path).unwrap();
        assert_eq!(loaded.model, mm);
        assert_eq!(loaded.config.seed, trainer::derive_seed(tcfg.seed, 0));
        assert_eq!(loaded.config.epochs, tcfg.epochs);
        assert_eq!(loaded.model.class_names, ds.class_names);
    }

    #[test]
    fn bundle_validation() {
        let text = multimodel_to_string(
            &MultiModel {
                binary: unit_params(),
                per_class: vec![unit_params(), unit_params()],
                class_names: None,
            },
            &TrainConfig::default(),
        );
        let dir = tempfile::tempdir().unwrap();

        let schema = dir.path().join("schema.json");
        fs::write(&schema, text.replace("nmil-multiclass", "other")).unwrap();
        assert!(load_multimodel(&schema).is_err());

        // A single-class bundle fails the K >= 2 invariant on load.
        let mut wire: serde_json::Value = serde_json::from_str(&text).unwrap();
        let classes = wire["classes"].as_array_mut().unwrap();
        classes.truncate(1);
        let single = dir.path().join("single.json");
        fs::write(&single, serde_json::to_string(&wire).unwrap()).unwrap();
        assert!(load_multimodel(&single).is_err());
    }
}
