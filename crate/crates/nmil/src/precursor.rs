//! Instance-level precursor extraction and similarity diagnostics.
//!
//! A precursor is an instance whose estimated probability under a trained
//! model exceeds a threshold tau; reports rank them per day. The
//! diagnostics compare every instance's cosine similarity to the event's
//! target document against the precursor subset, on a per-event relative
//! scale.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, SuperBag};
use crate::error::{Error, Result};
use crate::exec;
use crate::model::{self, ModelParams};

/// One instance that cleared the probability threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecursorEntry {
    pub day: usize,
    pub instance_id: String,
    pub probability: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
}

/// Ranked precursor candidates of one super-bag: days in chronological
/// order, entries within a day by probability descending (ties broken by
/// instance id so reports are deterministic).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecursorReport {
    pub event_id: String,
    pub label: i8,
    pub tau: f64,
    /// Per-day cap that was applied; 0 means unlimited.
    pub top_k: usize,
    pub entries: Vec<PrecursorEntry>,
}

impl PrecursorReport {
    /// Entries of one day, in ranked order.
    pub fn day_entries(&self, day: usize) -> impl Iterator<Item = &PrecursorEntry> {
        self.entries.iter().filter(move |e| e.day == day)
    }
}

fn report_for(sb: &SuperBag, params: &ModelParams, tau: f64, top_k: usize) -> PrecursorReport {
    let mut entries = Vec::new();
    for bag in &sb.days {
        let mut day_hits: Vec<PrecursorEntry> = bag
            .instances
            .iter()
            .map(|inst| PrecursorEntry {
                day: bag.day,
                instance_id: inst.id.clone(),
                probability: model::sigmoid(model::dot(params.w(bag.day), &inst.features)),
                title: inst.title.clone(),
            })
            .filter(|e| e.probability > tau)
            .collect();
        day_hits.sort_by(|a, b| {
            b.probability
                .total_cmp(&a.probability)
                .then_with(|| a.instance_id.cmp(&b.instance_id))
        });
        if top_k > 0 {
            day_hits.truncate(top_k);
        }
        entries.extend(day_hits);
    }
    PrecursorReport {
        event_id: sb.event_id.clone(),
        label: sb.label,
        tau,
        top_k,
        entries,
    }
}

/// Thresholds and ranks the instances of every positive super-bag
/// (`include_negatives` widens the scan to the whole dataset, useful for
/// diagnostics). `top_k = 0` keeps everything above `tau`. Per-day weight
/// vectors are honored where the variant has them.
pub fn discover(
    ds: &Dataset,
    params: &ModelParams,
    tau: f64,
    top_k: usize,
    include_negatives: bool,
) -> Result<Vec<PrecursorReport>> {
    if !(0.0..1.0).contains(&tau) {
        return Err(Error::Config(format!("tau must be in [0, 1), got {tau}")));
    }
    params.check_compat(ds)?;
    let selected: Vec<&SuperBag> = ds
        .super_bags
        .iter()
        .filter(|sb| include_negatives || sb.label == 1)
        .collect();
    Ok(exec::map_slice(&selected, |sb| {
        report_for(sb, params, tau, top_k)
    }))
}

/// Relative-cosine summary built by [`similarity_diagnostics`].
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityDiagnostics {
    /// (day, mean relative cosine across events), day ascending.
    pub day_means: Vec<(usize, f64)>,
    /// Relative cosine of every instance of every reported event.
    pub all_sample: Vec<f64>,
    /// Relative cosines of the instances named in the reports.
    pub precursor_sample: Vec<f64>,
}

fn sample_mean(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

impl SimilarityDiagnostics {
    pub fn all_mean(&self) -> Option<f64> {
        sample_mean(&self.all_sample)
    }

    pub fn precursor_mean(&self) -> Option<f64> {
        sample_mean(&self.precursor_sample)
    }
}

/// For each reported event, computes the cosine of every instance against
/// the event's target document, rescaled by the event's maximum absolute
/// cosine so events of different sharpness are comparable (an event whose
/// cosines are all zero maps to zeros). Aggregates a per-day mean table
/// and the all-instances vs precursor-instances samples.
pub fn similarity_diagnostics(
    reports: &[PrecursorReport],
    ds: &Dataset,
) -> Result<SimilarityDiagnostics> {
    let by_id: BTreeMap<&str, &SuperBag> = ds
        .super_bags
        .iter()
        .map(|sb| (sb.event_id.as_str(), sb))
        .collect();

    let mut missing_target = Vec::new();
    let mut events = Vec::with_capacity(reports.len());
    for report in reports {
        let sb = by_id.get(report.event_id.as_str()).ok_or_else(|| {
            Error::Validation(format!(
                "report references unknown event {}",
                report.event_id
            ))
        })?;
        match &sb.target_doc {
            Some(target) => events.push((report, *sb, target)),
            None => missing_target.push(report.event_id.clone()),
        }
    }
    if !missing_target.is_empty() {
        return Err(Error::Validation(format!(
            "no target document for events: {}",
            missing_target.join(", ")
        )));
    }

    let mut day_acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    let mut all_sample = Vec::new();
    let mut precursor_sample = Vec::new();
    for (report, sb, target) in events {
        let chosen: HashSet<(usize, &str)> = report
            .entries
            .iter()
            .map(|e| (e.day, e.instance_id.as_str()))
            .collect();
        let cosines: Vec<Vec<f64>> = sb
            .days
            .iter()
            .map(|bag| {
                bag.instances
                    .iter()
                    .map(|inst| model::cosine(&inst.features, &target.features))
                    .collect()
            })
            .collect();
        let max_abs = cosines
            .iter()
            .flatten()
            .fold(0.0f64, |m, c| m.max(c.abs()));
        for (bag, row) in sb.days.iter().zip(&cosines) {
            for (inst, &c) in bag.instances.iter().zip(row) {
                let rel = if max_abs == 0.0 { 0.0 } else { c / max_abs };
                let acc = day_acc.entry(bag.day).or_insert((0.0, 0));
                acc.0 += rel;
                acc.1 += 1;
                all_sample.push(rel);
                if chosen.contains(&(bag.day, inst.id.as_str())) {
                    precursor_sample.push(rel);
                }
            }
        }
    }

    Ok(SimilarityDiagnostics {
        day_means: day_acc
            .into_iter()
            .map(|(day, (sum, n))| (day, sum / n as f64))
            .collect(),
        all_sample,
        precursor_sample,
    })
}

/// Newline-delimited JSON, one report per line.
pub fn save_reports(reports: &[PrecursorReport], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::new();
    for r in reports {
        s.push_str(&serde_json::to_string(r).expect("report serializes"));
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn load_reports(path: impl AsRef<Path>) -> Result<Vec<PrecursorReport>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut reports = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        reports.push(serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(reports)
}

/// `day,mean_relative_cosine` CSV of the per-day table.
pub fn save_day_table(diag: &SimilarityDiagnostics, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::from("day,mean_relative_cosine\n");
    for (day, mean) in &diag.day_means {
        s.push_str(&format!("{day},{mean}\n"));
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// `population,value` CSV of the two samples (populations `all` and
/// `precursor`).
pub fn save_samples(diag: &SimilarityDiagnostics, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::from("population,value\n");
    for v in &diag.all_sample {
        s.push_str(&format!("all,{v}\n"));
    }
    for v in &diag.precursor_sample {
        s.push_str(&format!("precursor,{v}\n"));
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}
