//! Accuracy metrics, per-object contact tables, confusion matrices and the
//! contact-map ablation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::datamodel::{encode_frame, ActionClip, ContactSample, DatasetConfig};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::geometry::ContactMap;
use crate::pipeline::{
    action_inputs, check_compatible, predict_action_inputs, predict_contact_batch, train_action_on_inputs,
    train_contact_module, Augmentation, TrainedActionModule, TrainedContactModule, TrainingConfig,
};

/// Probabilities at or above this count as a predicted 1.
pub const BINARIZE_THRESHOLD: f64 = 0.5;

pub fn action_accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Validation("accuracy of an empty prediction set is undefined".into()));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// `matrix[label][prediction]` counts.
pub fn confusion_matrix(predictions: &[usize], labels: &[usize], classes: usize) -> Result<Vec<Vec<u64>>> {
    if predictions.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut matrix = vec![vec![0u64; classes]; classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        if p >= classes || l >= classes {
            return Err(Error::Validation(format!(
                "class index {} out of range for {classes} classes",
                p.max(l)
            )));
        }
        matrix[l][p] += 1;
    }
    Ok(matrix)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectContactRow {
    pub object_label: usize,
    pub contact_acc: f64,
    pub distant_acc: f64,
    pub frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactAverages {
    pub contact_acc: f64,
    pub distant_acc: f64,
    pub frames: usize,
}

/// Element-wise bit accuracy of thresholded predictions, grouped by object
/// label. `probs` has one row per frame: contact half then distant half.
pub fn contact_accuracy_by_object(
    probs: ArrayView2<f64>,
    targets: &[ContactMap],
    object_labels: &[usize],
    threshold: f64,
) -> Result<(Vec<ObjectContactRow>, ContactAverages)> {
    if probs.nrows() != targets.len() || targets.len() != object_labels.len() {
        return Err(Error::Shape(format!(
            "{} prediction rows, {} targets, {} object labels",
            probs.nrows(),
            targets.len(),
            object_labels.len()
        )));
    }
    // object -> (contact hits, distant hits, frames)
    let mut counts: BTreeMap<usize, (u64, u64, usize)> = BTreeMap::new();
    let mut half = None;
    for ((row, target), &label) in probs.outer_iter().zip(targets).zip(object_labels) {
        let j = target.joint_count();
        if *half.get_or_insert(j) != j || row.len() != 2 * j {
            return Err(Error::Shape(format!(
                "prediction row of width {} against a target with {j} joints",
                row.len()
            )));
        }
        let hits = |offset: usize, bits: &[u8]| {
            bits.iter()
                .enumerate()
                .filter(|&(i, &b)| (row[offset + i] >= threshold) == (b == 1))
                .count() as u64
        };
        let entry = counts.entry(label).or_default();
        entry.0 += hits(0, &target.contact);
        entry.1 += hits(j, &target.distant);
        entry.2 += 1;
    }
    let half = half.unwrap_or(0) as f64;
    let rows: Vec<ObjectContactRow> = counts
        .iter()
        .map(|(&object_label, &(c, d, frames))| ObjectContactRow {
            object_label,
            contact_acc: c as f64 / (frames as f64 * half),
            distant_acc: d as f64 / (frames as f64 * half),
            frames,
        })
        .collect();
    let (c, d, frames) = counts
        .values()
        .fold((0u64, 0u64, 0usize), |acc, v| (acc.0 + v.0, acc.1 + v.1, acc.2 + v.2));
    let averages = if frames == 0 {
        ContactAverages {
            contact_acc: 0.0,
            distant_acc: 0.0,
            frames: 0,
        }
    } else {
        ContactAverages {
            contact_acc: c as f64 / (frames as f64 * half),
            distant_acc: d as f64 / (frames as f64 * half),
            frames,
        }
    };
    Ok((rows, averages))
}

/// Contact-module accuracy over a set of labelled frames.
pub fn evaluate_contact(
    contact: &TrainedContactModule,
    samples: &[ContactSample],
    dataset: &DatasetConfig,
) -> Result<(Vec<ObjectContactRow>, ContactAverages)> {
    let rows: Vec<f64> = samples
        .iter()
        .map(|s| encode_frame(&s.frame, dataset))
        .collect::<Result<Vec<_>>>()?
        .concat();
    let x = Array2::from_shape_vec((samples.len(), dataset.frame_dim()), rows).map_err(|e| Error::Shape(e.to_string()))?;
    let probs = predict_contact_batch(contact, x.view())?;
    let targets: Vec<ContactMap> = samples.iter().map(|s| s.target.clone()).collect();
    let labels: Vec<usize> = samples.iter().map(|s| s.frame.object.label).collect();
    contact_accuracy_by_object(probs.view(), &targets, &labels, BINARIZE_THRESHOLD)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub top1_accuracy: f64,
    pub clip_count: usize,
    pub confusion: Vec<Vec<u64>>,
    pub per_object: Vec<ObjectContactRow>,
    pub averages: ContactAverages,
    pub predictions: Vec<usize>,
}

/// Classifies every clip and scores the contact module on `samples`
/// (typically the frames of the same clips).
pub fn evaluate(
    contact: &TrainedContactModule,
    action: &TrainedActionModule,
    clips: &[ActionClip],
    samples: &[ContactSample],
) -> Result<EvalReport> {
    check_compatible(contact, action)?;
    let dataset = &action.dataset;
    for clip in clips {
        clip.validate(dataset)?;
    }
    let inputs = action_inputs(contact, clips, dataset, &action.augmentation)?;
    let predictions: Vec<usize> = predict_action_inputs(action, inputs.view())?
        .into_iter()
        .map(|(p, _)| p)
        .collect();
    let labels: Vec<usize> = clips.iter().map(|c| c.action_label).collect();
    let (per_object, averages) = evaluate_contact(contact, samples, &contact.dataset)?;
    Ok(EvalReport {
        top1_accuracy: action_accuracy(&predictions, &labels)?,
        clip_count: clips.len(),
        confusion: confusion_matrix(&predictions, &labels, dataset.action_classes)?,
        per_object,
        averages,
        predictions,
    })
}

fn to_json(value: &impl Serialize) -> Result<Vec<u8>> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Validation(e.to_string()))?;
    text.push('\n');
    Ok(text.into_bytes())
}

/// Writes `metrics.json`, `confusion.csv` and `per_object.csv` into `dir`.
/// `provenance` is embedded verbatim in the metrics file.
pub fn write_reports(report: &EvalReport, provenance: &serde_json::Value, dir: &Path) -> Result<()> {
    let metrics = serde_json::json!({
        "top1_accuracy": report.top1_accuracy,
        "clip_count": report.clip_count,
        "averages": report.averages,
        "per_object": report.per_object,
        "provenance": provenance,
    });
    write_atomic(&dir.join("metrics.json"), &to_json(&metrics)?)?;

    let classes = report.confusion.len();
    let mut csv = String::from("label");
    for c in 0..classes {
        write!(csv, ",{c}").unwrap();
    }
    csv.push('\n');
    for (label, row) in report.confusion.iter().enumerate() {
        write!(csv, "{label}").unwrap();
        for n in row {
            write!(csv, ",{n}").unwrap();
        }
        csv.push('\n');
    }
    write_atomic(&dir.join("confusion.csv"), csv.as_bytes())?;

    let mut csv = String::from("object_label,contact_acc,distant_acc,frames\n");
    for r in &report.per_object {
        writeln!(csv, "{},{},{},{}", r.object_label, r.contact_acc, r.distant_acc, r.frames).unwrap();
    }
    let a = &report.averages;
    writeln!(csv, "average,{},{},{}", a.contact_acc, a.distant_acc, a.frames).unwrap();
    write_atomic(&dir.join("per_object.csv"), csv.as_bytes())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    Baseline,
    ContactOnly,
    DistantOnly,
    ContactDistant,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 4] = [
        AblationVariant::Baseline,
        AblationVariant::ContactOnly,
        AblationVariant::DistantOnly,
        AblationVariant::ContactDistant,
    ];

    /// All variants share the augmented input width; the baseline masks
    /// both halves so it sees the skeleton alone.
    pub fn augmentation(self, binarize: bool) -> Augmentation {
        let (mask_contact, mask_distant) = match self {
            AblationVariant::Baseline => (true, true),
            AblationVariant::ContactOnly => (false, true),
            AblationVariant::DistantOnly => (true, false),
            AblationVariant::ContactDistant => (false, false),
        };
        Augmentation {
            use_contact: true,
            binarize,
            mask_contact,
            mask_distant,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AblationVariant::Baseline => "baseline",
            AblationVariant::ContactOnly => "contact_only",
            AblationVariant::DistantOnly => "distant_only",
            AblationVariant::ContactDistant => "contact_distant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: AblationVariant,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub contact_averages: ContactAverages,
}

impl AblationReport {
    pub fn accuracy(&self, variant: AblationVariant) -> Option<f64> {
        self.rows.iter().find(|r| r.variant == variant).map(|r| r.accuracy)
    }
}

/// Trains the contact network once, then one action network per variant
/// with identical seeds and schedules, and scores each on `test_clips`.
pub fn run_ablation(
    train_samples: &[ContactSample],
    train_clips: &[ActionClip],
    test_clips: &[ActionClip],
    test_samples: &[ContactSample],
    config: &TrainingConfig,
) -> Result<AblationReport> {
    let (contact, _) = train_contact_module(train_samples, &config.dataset, &config.contact)?;
    ablation_with_contact(&contact, train_clips, test_clips, test_samples, config)
}

/// [`run_ablation`] against an already-trained contact module.
pub fn ablation_with_contact(
    contact: &TrainedContactModule,
    train_clips: &[ActionClip],
    test_clips: &[ActionClip],
    test_samples: &[ContactSample],
    config: &TrainingConfig,
) -> Result<AblationReport> {
    let (_, contact_averages) = evaluate_contact(contact, test_samples, &config.dataset)?;
    let rows = AblationVariant::ALL
        .iter()
        .map(|&variant| {
            let accuracy = ablation_variant_accuracy(contact, train_clips, test_clips, config, variant)?;
            Ok(AblationRow { variant, accuracy })
        })
        .collect::<Result<_>>()?;
    Ok(AblationReport { rows, contact_averages })
}

/// Test accuracy of one ablation variant against an already-trained
/// contact module.
pub fn ablation_variant_accuracy(
    contact: &TrainedContactModule,
    train_clips: &[ActionClip],
    test_clips: &[ActionClip],
    config: &TrainingConfig,
    variant: AblationVariant,
) -> Result<f64> {
    let dataset = &config.dataset;
    let mut action_config = config.action.clone();
    action_config.augmentation = variant.augmentation(config.action.augmentation.binarize);
    let aug = action_config.augmentation;
    let train_x = action_inputs(contact, train_clips, dataset, &aug)?;
    let train_y: Vec<usize> = train_clips.iter().map(|c| c.action_label).collect();
    let (action, _) = train_action_on_inputs(train_x.view(), &train_y, dataset, &action_config)?;
    let test_x = action_inputs(contact, test_clips, dataset, &aug)?;
    let predictions: Vec<usize> = predict_action_inputs(&action, test_x.view())?
        .into_iter()
        .map(|(p, _)| p)
        .collect();
    let labels: Vec<usize> = test_clips.iter().map(|c| c.action_label).collect();
    action_accuracy(&predictions, &labels)
}

pub fn write_ablation(report: &AblationReport, provenance: &serde_json::Value, dir: &Path) -> Result<()> {
    let json = serde_json::json!({
        "rows": report.rows,
        "contact_averages": report.contact_averages,
        "provenance": provenance,
    });
    write_atomic(&dir.join("ablation.json"), &to_json(&json)?)?;
    let mut csv = String::from("variant,accuracy\n");
    for r in &report.rows {
        writeln!(csv, "{},{}", r.variant.name(), r.accuracy).unwrap();
    }
    write_atomic(&dir.join("ablation.csv"), csv.as_bytes())
}
