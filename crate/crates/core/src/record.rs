//! Prediction records and multi-model alignment.
//!
//! A record keeps only the argmax label and the maximum softmax probability
//! of one model on one sample. The gate never reads any other component of
//! the softmax vector, so nothing else is stored.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};

/// Maximum softmax probability, guaranteed to lie in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct Confidence(f64);

impl Confidence {
    pub fn new(value: f64) -> Result<Self> {
        // NaN fails both comparisons.
        if (0.0..=1.0).contains(&value) {
            Ok(Self(value))
        } else {
            Err(Error::ConfidenceOutOfRange(value))
        }
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }
}

impl fmt::Display for Confidence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6}", self.0)
    }
}

/// One model's output on one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub sample_id: String,
    pub predicted_label: u32,
    pub confidence: Confidence,
    pub true_label: u32,
}

impl PredictionRecord {
    pub fn new(
        sample_id: impl Into<String>,
        predicted_label: u32,
        confidence: f64,
        true_label: u32,
    ) -> Result<Self> {
        let sample_id = sample_id.into();
        if sample_id.is_empty() {
            return Err(Error::EmptySampleId);
        }
        Ok(Self {
            sample_id,
            predicted_label,
            confidence: Confidence::new(confidence)?,
            true_label,
        })
    }

    #[inline]
    pub fn is_correct(&self) -> bool {
        self.predicted_label == self.true_label
    }
}

/// Identity and per-sample cost of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelProfile {
    pub name: String,
    /// GMACs per sample.
    pub macs_per_sample: f64,
    /// Millions of parameters. Informational.
    pub params_m: f64,
    /// Input resolution in pixels. Informational.
    pub input_resolution: u32,
}

impl ModelProfile {
    pub fn new(
        name: impl Into<String>,
        macs_per_sample: f64,
        params_m: f64,
        input_resolution: u32,
    ) -> Result<Self> {
        let name = name.into();
        if !macs_per_sample.is_finite() || macs_per_sample <= 0.0 {
            return Err(Error::NonPositiveMacs {
                name,
                macs: macs_per_sample,
            });
        }
        Ok(Self {
            name,
            macs_per_sample,
            params_m,
            input_resolution,
        })
    }
}

/// All records of one model over one dataset. Sample ids are unique.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordSet {
    model: ModelProfile,
    dataset_name: String,
    records: Vec<PredictionRecord>,
}

impl RecordSet {
    pub fn new(
        model: ModelProfile,
        dataset_name: impl Into<String>,
        records: Vec<PredictionRecord>,
    ) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for r in &records {
            if !seen.insert(r.sample_id.as_str()) {
                return Err(Error::DuplicateSampleId(r.sample_id.clone()));
            }
        }
        Ok(Self {
            model,
            dataset_name: dataset_name.into(),
            records,
        })
    }

    pub fn model(&self) -> &ModelProfile {
        &self.model
    }

    pub fn dataset_name(&self) -> &str {
        &self.dataset_name
    }

    pub fn records(&self) -> &[PredictionRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn correct_count(&self) -> usize {
        self.records.iter().filter(|r| r.is_correct()).count()
    }

    pub fn into_records(self) -> Vec<PredictionRecord> {
        self.records
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub label: u32,
    pub confidence: Confidence,
}

/// One sample seen by every model of an [`AlignedRecordSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedRow {
    pub sample_id: String,
    pub true_label: u32,
    /// One entry per model, in model order.
    pub predictions: Vec<Prediction>,
}

impl AlignedRow {
    #[inline]
    pub fn is_correct(&self, model: usize) -> bool {
        self.predictions[model].label == self.true_label
    }
}

/// Records of several models joined on sample id. Rows are sorted by
/// sample id and every row carries exactly one prediction per model.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedRecordSet {
    dataset_name: String,
    models: Vec<ModelProfile>,
    rows: Vec<AlignedRow>,
}

impl AlignedRecordSet {
    pub fn dataset_name(&self) -> &str {
        &self.dataset_name
    }

    pub fn models(&self) -> &[ModelProfile] {
        &self.models
    }

    pub fn rows(&self) -> &[AlignedRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn model_index(&self, name: &str) -> Result<usize> {
        self.models
            .iter()
            .position(|m| m.name == name)
            .ok_or_else(|| Error::UnknownModel(name.into()))
    }

    /// Number of rows the given model classifies correctly.
    pub fn correct_count(&self, model: usize) -> usize {
        self.rows.iter().filter(|r| r.is_correct(model)).count()
    }

    /// Restricts the set to the named models, in the given order.
    pub fn select(&self, names: &[&str]) -> Result<AlignedRecordSet> {
        let idx = names
            .iter()
            .map(|n| self.model_index(n))
            .collect::<Result<Vec<_>>>()?;
        Ok(AlignedRecordSet {
            dataset_name: self.dataset_name.clone(),
            models: idx.iter().map(|&i| self.models[i].clone()).collect(),
            rows: self
                .rows
                .iter()
                .map(|r| AlignedRow {
                    sample_id: r.sample_id.clone(),
                    true_label: r.true_label,
                    predictions: idx.iter().map(|&i| r.predictions[i]).collect(),
                })
                .collect(),
        })
    }
}

/// Joins record sets of the same dataset on sample id.
///
/// Every sample id must be present in every set; a missing id is an error
/// rather than a silent drop. Model order follows input order.
pub fn align(sets: &[RecordSet]) -> Result<AlignedRecordSet> {
    if sets.len() < 2 {
        return Err(Error::TooFewSets(sets.len()));
    }
    let dataset_name = sets[0].dataset_name();
    if let Some(other) = sets.iter().find(|s| s.dataset_name() != dataset_name) {
        return Err(Error::DatasetMismatch {
            expected: dataset_name.into(),
            found: other.dataset_name().into(),
        });
    }

    let by_id: Vec<BTreeMap<&str, &PredictionRecord>> = sets
        .iter()
        .map(|s| {
            s.records()
                .iter()
                .map(|r| (r.sample_id.as_str(), r))
                .collect()
        })
        .collect();
    let all_ids: BTreeSet<&str> = by_id.iter().flat_map(|m| m.keys().copied()).collect();

    let mut rows = Vec::with_capacity(all_ids.len());
    for id in all_ids {
        let mut predictions = Vec::with_capacity(sets.len());
        let mut first: Option<(&PredictionRecord, usize)> = None;
        for (k, map) in by_id.iter().enumerate() {
            let rec = map.get(id).ok_or_else(|| Error::MissingSample {
                sample_id: id.into(),
                model: sets[k].model().name.clone(),
            })?;
            match first {
                None => first = Some((rec, k)),
                Some((f, fk)) if f.true_label != rec.true_label => {
                    return Err(Error::LabelConflict {
                        sample_id: id.into(),
                        first: f.true_label,
                        first_model: sets[fk].model().name.clone(),
                        second: rec.true_label,
                        second_model: sets[k].model().name.clone(),
                    })
                }
                Some(_) => {}
            }
            predictions.push(Prediction {
                label: rec.predicted_label,
                confidence: rec.confidence,
            });
        }
        let true_label = first.map(|(r, _)| r.true_label).unwrap_or_default();
        rows.push(AlignedRow {
            sample_id: id.into(),
            true_label,
            predictions,
        });
    }

    Ok(AlignedRecordSet {
        dataset_name: dataset_name.into(),
        models: sets.iter().map(|s| s.model().clone()).collect(),
        rows,
    })
}
