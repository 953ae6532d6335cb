//! Dataset model and on-disk format.
//!
//! A corpus is a set of labeled super-bags. Each super-bag covers `h`
//! consecutive days; each day holds a bag of instances (documents as dense
//! feature vectors). Labels exist only at the super-bag level. Positive
//! super-bags may carry a class label (multi-class mode) and a target
//! document used by the similosity diagnostics.
//!
//! On disk a dataset is newline-delimited JSON: one header line
//! `{"schema":"nmil-dataset","version":1,"feature_dim":V,"history_days":h,
//! "lead_time":l,"class_names":[...]|null}` followed by one record per
//! super-bag. Finite feature values survive a save/load round trip
//! bit-exactly.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DATASET_SCHEMA: &str = "nmil-dataset";
pub const DATASET_VERSION: u32 = 1;

/// A single document: dense feature vector plus identifiers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub features: Vec<f64>,
    pub title: Option<String>,
}

impl Instance {
    pub fn new(id: impl Into<String>, features: Vec<f64>) -> Self {
        Instance {
            id: id.into(),
            features,
            title: None,
        }
    }
}

/// All instances published on one day of a super-bag's history window.
/// `day` is 1-based and runs oldest to newest.
#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    pub day: usize,
    pub instances: Vec<Instance>,
}

/// An ordered window of `h` daily bags with a super-bag level label.
/// `label` is +1 or -1; `class_label` (1-based) may only accompany +1.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperBag {
    pub event_id: String,
    pub label: i8,
    pub class_label: Option<usize>,
    pub days: Vec<Bag>,
    pub target_doc: Option<Instance>,
}

impl SuperBag {
    /// Total instance count across all days.
    pub fn instance_count(&self) -> usize {
        self.days.iter().map(|b| b.instances.len()).sum()
    }
}

/// An in-memory corpus. `history_days` and `feature_dim` are enforced for
/// every super-bag; `lead_time` is carried as provenance metadata (days
/// between the last observed day and the event day).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_dim: usize,
    pub history_days: usize,
    pub lead_time: usize,
    pub class_names: Option<Vec<String>>,
    pub super_bags: Vec<SuperBag>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.super_bags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.super_bags.is_empty()
    }

    /// Highest class label among positive super-bags (0 when unlabeled).
    pub fn class_count(&self) -> usize {
        self.super_bags
            .iter()
            .filter_map(|sb| sb.class_label)
            .max()
            .unwrap_or(0)
    }

    /// New dataset holding clones of the selected super-bags.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            feature_dim: self.feature_dim,
            history_days: self.history_days,
            lead_time: self.lead_time,
            class_names: self.class_names.clone(),
            super_bags: indices
                .iter()
                .map(|&i| self.super_bags[i].clone())
                .collect(),
        }
    }

    /// Super-bag labels in corpus order.
    pub fn labels(&self) -> Vec<i8> {
        self.super_bags.iter().map(|sb| sb.label).collect()
    }
}

// ---------------------------------------------------------------------------
// Wire format
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct Header {
    schema: String,
    version: u32,
    feature_dim: usize,
    history_days: usize,
    lead_time: usize,
    class_names: Option<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
struct Record {
    event_id: String,
    label: i8,
    class_label: Option<usize>,
    days: Vec<Vec<Instance>>,
    target_doc: Option<Instance>,
}

fn check_finite(inst: &Instance, event_id: &str) -> Result<()> {
    if inst.features.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation(format!(
            "instance '{}' in super-bag '{}' has a non-finite feature",
            inst.id, event_id
        )));
    }
    Ok(())
}

fn check_dim(inst: &Instance, dim: usize, event_id: &str) -> Result<()> {
    if inst.features.len() != dim {
        return Err(Error::Validation(format!(
            "instance '{}' in super-bag '{}' has {} features, expected {}",
            inst.id,
            event_id,
            inst.features.len(),
            dim
        )));
    }
    check_finite(inst, event_id)
}

fn record_to_super_bag(rec: Record, feature_dim: usize, history_days: usize) -> Result<SuperBag> {
    if rec.label != 1 && rec.label != -1 {
        return Err(Error::Validation(format!(
            "super-bag '{}' has label {}, expected +1 or -1",
            rec.event_id, rec.label
        )));
    }
    match rec.class_label {
        Some(c) if rec.label != 1 => {
            return Err(Error::Validation(format!(
                "super-bag '{}' is negative but carries class label {}",
                rec.event_id, c
            )));
        }
        Some(0) => {
            return Err(Error::Validation(format!(
                "super-bag '{}' has class label 0; classes are numbered from 1",
                rec.event_id
            )));
        }
        _ => {}
    }

    let mut days = Vec::with_capacity(rec.days.len());
    for instances in rec.days {
        if instances.is_empty() {
            eprintln!(
                "warning: dropping empty day in super-bag '{}'",
                rec.event_id
            );
            continue;
        }
        for inst in &instances {
            check_dim(inst, feature_dim, &rec.event_id)?;
        }
        days.push(Bag {
            day: days.len() + 1,
            instances,
        });
    }
    if days.len() != history_days {
        return Err(Error::Validation(format!(
            "super-bag '{}' has {} non-empty days, expected {}",
            rec.event_id,
            days.len(),
            history_days
        )));
    }
    if let Some(doc) = &rec.target_doc {
        check_dim(doc, feature_dim, &rec.event_id)?;
    }
    Ok(SuperBag {
        event_id: rec.event_id,
        label: rec.label,
        class_label: rec.class_label,
        days,
        target_doc: rec.target_doc,
    })
}

fn super_bag_to_record(sb: &SuperBag) -> Record {
    Record {
        event_id: sb.event_id.clone(),
        label: sb.label,
        class_label: sb.class_label,
        days: sb.days.iter().map(|b| b.instances.clone()).collect(),
        target_doc: sb.target_doc.clone(),
    }
}

/// Parses and validates a dataset file. Empty days are dropped with a
/// warning on stderr; any other irregularity is an error.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text)
}

/// Same as [`load_dataset`] but from an in-memory string.
pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let mut lines = text.lines().enumerate();
    let (_, header_line) = lines
        .next()
        .ok_or_else(|| Error::Parse {
            line: 1,
            msg: "empty file, expected a dataset header".into(),
        })?;
    let header: Header = serde_json::from_str(header_line).map_err(|e| Error::Parse {
        line: 1,
        msg: format!("bad header: {e}"),
    })?;
    if header.schema != DATASET_SCHEMA {
        return Err(Error::Validation(format!(
            "schema is '{}', expected '{}'",
            header.schema, DATASET_SCHEMA
        )));
    }
    if header.version != DATASET_VERSION {
        return Err(Error::Validation(format!(
            "unsupported dataset version {}",
            header.version
        )));
    }
    if header.feature_dim == 0 || header.history_days == 0 {
        return Err(Error::Validation(
            "feature_dim and history_days must be at least 1".into(),
        ));
    }

    let mut super_bags = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        if !seen.insert(rec.event_id.clone()) {
            return Err(Error::Validation(format!(
                "duplicate event_id '{}'",
                rec.event_id
            )));
        }
        super_bags.push(record_to_super_bag(
            rec,
            header.feature_dim,
            header.history_days,
        )?);
    }

    Ok(Dataset {
        feature_dim: header.feature_dim,
        history_days: header.history_days,
        lead_time: header.lead_time,
        class_names: header.class_names,
        super_bags,
    })
}

/// Serializes a dataset to the newline-delimited JSON format.
pub fn dataset_to_string(ds: &Dataset) -> String {
    let header = Header {
        schema: DATASET_SCHEMA.into(),
        version: DATASET_VERSION,
        feature_dim: ds.feature_dim,
        history_days: ds.history_days,
        lead_time: ds.lead_time,
        class_names: ds.class_names.clone(),
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for sb in &ds.super_bags {
        out.push_str(&serde_json::to_string(&super_bag_to_record(sb)).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, dataset_to_string(ds)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_dataset() -> Dataset {
        Dataset {
            feature_dim: 2,
            history_days: 2,
            lead_time: 1,
            class_names: None,
            super_bags: vec![
                SuperBag {
                    event_id: "e1".into(),
                    label: 1,
                    class_label: None,
                    days: vec![
                        Bag {
                            day: 1,
                            instances: vec![Instance::new("e1-d1-i1", vec![0.25, -1.5])],
                        },
                        Bag {
                            day: 2,
                            instances: vec![
                                Instance::new("e1-d2-i1", vec![1.0, 2.0]),
                                Instance {
                                    id: "e1-d2-i2".into(),
                                    features: vec![0.1, 0.2],
                                    title: Some("second doc".into()),
                                },
                            ],
                        },
                    ],
                    target_doc: Some(Instance::new("e1-target", vec![0.5, 0.5])),
                },
                SuperBag {
                    event_id: "e2".into(),
                    label: -1,
                    class_label: None,
                    days: vec![
                        Bag {
                            day: 1,
                            instances: vec![Instance::new("e2-d1-i1", vec![-0.75, 0.0])],
                        },
                        Bag {
                            day: 2,
                            instances: vec![Instance::new("e2-d2-i1", vec![3.5, -2.25])],
                        },
                    ],
                    target_doc: None,
                },
            ],
        }
    }

    #[test]
    fn round_trip_is_identity() {
        let ds = tiny_dataset();
        let text = dataset_to_string(&ds);
        let back = parse_dataset(&text).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn round_trip_preserves_float_bits() {
        let mut ds = tiny_dataset();
        // Values with no short decimal form.
        ds.super_bags[0].days[0].instances[0].features = vec![0.1 + 0.2, 1.0 / 3.0];
        let back = parse_dataset(&dataset_to_string(&ds)).unwrap();
        let orig = &ds.super_bags[0].days[0].instances[0].features;
        let got = &back.super_bags[0].days[0].instances[0].features;
        for (a, b) in orig.iter().zip(got) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn dimension_mismatch_names_instance() {
        let mut ds = tiny_dataset();
        ds.super_bags[1].days[0].instances[0].features = vec![1.0];
        let err = parse_dataset(&dataset_to_string(&ds)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("e2-d1-i1"), "unexpected message: {msg}");
    }

    #[test]
    fn empty_day_dropped_then_count_checked() {
        // Three physical days, one empty: drops to the expected two.
        let text = concat!(
            r#"{"schema":"nmil-dataset","version":1,"feature_dim":1,"history_days":2,"lead_time":1,"class_names":null}"#,
            "\n",
            r#"{"event_id":"a","label":1,"class_label":null,"days":[[{"id":"x","features":[1.0],"title":null}],[],[{"id":"y","features":[2.0],"title":null}]],"target_doc":null}"#,
            "\n",
        );
        let ds = parse_dataset(text).unwrap();
        assert_eq!(ds.super_bags[0].days.len(), 2);
        assert_eq!(ds.super_bags[0].days[1].day, 2);

        // Dropping leaves one day, which no longer matches the header.
        let short = text.replace(
            r#"[[{"id":"x","features":[1.0],"title":null}],[],"#,
            r#"[[],"#,
        );
        let err = parse_dataset(&short).unwrap_err();
        assert!(err.to_string().contains("'a'"), "got: {err}");
    }

    #[test]
    fn label_and_class_label_validation() {
        let mut ds = tiny_dataset();
        ds.super_bags[1].class_label = Some(2);
        let err = parse_dataset(&dataset_to_string(&ds)).unwrap_err();
        assert!(err.to_string().contains("negative but carries class label"));

        let bad_label = dataset_to_string(&tiny_dataset()).replace("\"label\":-1", "\"label\":0");
        assert!(parse_dataset(&bad_label).is_err());
    }

    #[test]
    fn malformed_record_reports_line_number() {
        let mut text = dataset_to_string(&tiny_dataset());
        text.push_str("{not json\n");
        match parse_dataset(&text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_schema_rejected() {
        let text = dataset_to_string(&tiny_dataset()).replace(DATASET_SCHEMA, "other-schema");
        assert!(matches!(parse_dataset(&text), Err(Error::Validation(_))));
    }

    #[test]
    fn duplicate_event_id_rejected() {
        let mut ds = tiny_dataset();
        ds.super_bags[1].event_id = "e1".into();
        let err = parse_dataset(&dataset_to_string(&ds)).unwrap_err();
        assert!(err.to_string().contains("duplicate event_id"));
    }

    #[test]
    fn non_finite_feature_rejected() {
        // JSON cannot carry NaN; an overflowing literal is the closest
        // on-disk corruption and must fail either at parse or validation.
        let text = concat!(
            r#"{"schema":"nmil-dataset","version":1,"feature_dim":1,"history_days":1,"lead_time":1,"class_names":null}"#,
            "\n",
            r#"{"event_id":"a","label":1,"class_label":null,"days":[[{"id":"x","features":[1e999],"title":null}]],"target_doc":null}"#,
            "\n",
        );
        assert!(parse_dataset(text).is_err());
    }

    #[test]
    fn subset_clones_selected() {
        let ds = tiny_dataset();
        let sub = ds.subset(&[1]);
        assert_eq!(sub.len(), 1);
        assert_eq!(sub.super_bags[0].event_id, "e2");
        assert_eq!(sub.feature_dim, ds.feature_dim);
    }
}
