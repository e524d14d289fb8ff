//! On-disk formats: record CSVs, model profiles, manifests and curve CSVs.
//!
//! Record files are UTF-8 CSV with the header
//! `sample_id,predicted_label,confidence,true_label`, LF line endings and
//! confidences printed with six decimals. Floats in every CSV this crate
//! writes use the same fixed six-decimal format so outputs diff cleanly.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use cascade_core::{
    align, AlignedRecordSet, CascadePoint, ModelProfile, PredictionRecord, RecordSet, TradeoffCurve,
};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const RECORD_HEADER: [&str; 4] = ["sample_id", "predicted_label", "confidence", "true_label"];

/// Fixed six-decimal float formatting used by every CSV writer.
pub fn fmt6(x: f64) -> String {
    format!("{x:.6}")
}

fn check_header(path: &Path, found: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    for (index, want) in expected.iter().enumerate() {
        let got = found.get(index).unwrap_or("");
        if got != *want {
            return Err(Error::Schema {
                path: path.into(),
                index,
                expected: (*want).into(),
                found: got.into(),
            });
        }
    }
    if found.len() > expected.len() {
        return Err(Error::Schema {
            path: path.into(),
            index: expected.len(),
            expected: String::new(),
            found: found[expected.len()].into(),
        });
    }
    Ok(())
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        kind => Error::Malformed {
            path: path.into(),
            line,
            message: format!("{kind:?}"),
        },
    }
}

fn parse_records(path: &Path, reader: impl std::io::Read) -> Result<Vec<PredictionRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    check_header(path, &header, &RECORD_HEADER)?;
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let malformed = |message: String| Error::Malformed {
            path: path.into(),
            line,
            message,
        };
        let int = |i: usize| -> Result<u32> {
            row[i].parse().map_err(|_| {
                malformed(format!(
                    "{}: not a class index: `{}`",
                    RECORD_HEADER[i], &row[i]
                ))
            })
        };
        let confidence: f64 = row[2]
            .parse()
            .map_err(|_| malformed(format!("confidence: not a number: `{}`", &row[2])))?;
        let rec = PredictionRecord::new(&row[0], int(1)?, confidence, int(3)?)
            .map_err(|e| malformed(e.to_string()))?;
        records.push(rec);
    }
    Ok(records)
}

/// Loads a record file for the model described by `profile`.
pub fn load_record_set(
    path: &Path,
    profile: ModelProfile,
    dataset_name: &str,
) -> Result<RecordSet> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let records = parse_records(path, file)?;
    RecordSet::new(profile, dataset_name, records).map_err(|source| Error::Records {
        path: path.into(),
        source,
    })
}

pub fn write_records<W: Write>(out: W, records: &[PredictionRecord]) -> std::io::Result<()> {
    let mut w = csv::WriterBuilder::new().from_writer(out);
    w.write_record(RECORD_HEADER)?;
    for r in records {
        w.write_record([
            r.sample_id.as_str(),
            &r.predicted_label.to_string(),
            &r.confidence.to_string(),
            &r.true_label.to_string(),
        ])?;
    }
    w.flush()
}

pub fn write_record_file(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_records(BufWriter::new(file), records).map_err(|e| Error::io(path, e))
}

/// JSON form of a model profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileFile {
    pub name: String,
    pub macs_per_sample: f64,
    #[serde(default)]
    pub params_m: f64,
    #[serde(default)]
    pub input_resolution: u32,
}

impl From<&ModelProfile> for ProfileFile {
    fn from(p: &ModelProfile) -> Self {
        Self {
            name: p.name.clone(),
            macs_per_sample: p.macs_per_sample,
            params_m: p.params_m,
            input_resolution: p.input_resolution,
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.into(),
        source,
    })
}

pub fn load_profile(path: &Path) -> Result<ModelProfile> {
    let p: ProfileFile = read_json(path)?;
    ModelProfile::new(p.name, p.macs_per_sample, p.params_m, p.input_resolution).map_err(|source| {
        Error::Records {
            path: path.into(),
            source,
        }
    })
}

pub fn write_profile(path: &Path, profile: &ModelProfile) -> Result<()> {
    let text = serde_json::to_string_pretty(&ProfileFile::from(profile)).expect("plain struct");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetRole {
    Tuning,
    Target,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub profile: PathBuf,
    pub records: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<DatasetRole>,
    pub models: Vec<ManifestEntry>,
}

/// Binds model profiles to record files, per dataset. Relative paths are
/// resolved against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub datasets: Vec<DatasetManifest>,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let mut m: Manifest = read_json(path)?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        if self.datasets.is_empty() {
            return Err(Error::Config("manifest lists no datasets".into()));
        }
        for d in &self.datasets {
            if d.models.is_empty() {
                return Err(Error::Config(format!(
                    "dataset `{}` lists no models",
                    d.name
                )));
            }
            for e in &d.models {
                for p in [&e.profile, &e.records] {
                    let full = self.resolve(p);
                    if !full.is_file() {
                        return Err(Error::Config(format!(
                            "dataset `{}`: cannot find `{}`",
                            d.name,
                            full.display()
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.into()
        } else {
            self.base_dir.join(p)
        }
    }

    /// The named dataset, or the tuning dataset (falling back to the first)
    /// when `name` is `None`.
    pub fn dataset(&self, name: Option<&str>) -> Result<&DatasetManifest> {
        match name {
            Some(n) => self
                .datasets
                .iter()
                .find(|d| d.name == n)
                .ok_or_else(|| Error::Config(format!("manifest has no dataset `{n}`"))),
            None => Ok(self
                .datasets
                .iter()
                .find(|d| d.role == Some(DatasetRole::Tuning))
                .unwrap_or(&self.datasets[0])),
        }
    }

    pub fn targets(&self, tuning: &str) -> impl Iterator<Item = &DatasetManifest> {
        let tuning = tuning.to_owned();
        self.datasets
            .iter()
            .filter(move |d| d.name != tuning && d.role != Some(DatasetRole::Tuning))
    }

    pub fn load_dataset(&self, d: &DatasetManifest) -> Result<Vec<RecordSet>> {
        d.models
            .iter()
            .map(|e| {
                let profile = load_profile(&self.resolve(&e.profile))?;
                load_record_set(&self.resolve(&e.records), profile, &d.name)
            })
            .collect()
    }

    /// Loads and aligns every model of a dataset. Needs at least two models.
    pub fn load_aligned(&self, d: &DatasetManifest) -> Result<AlignedRecordSet> {
        if d.models.len() < 2 {
            return Err(Error::Config(format!(
                "dataset `{}` needs at least 2 models, found {}",
                d.name,
                d.models.len()
            )));
        }
        Ok(align(&self.load_dataset(d)?)?)
    }
}

/// Threshold cell of a curve row: `t` for two stages, `t1/t2` for three.
pub fn threshold_key(thresholds: &[f64]) -> String {
    thresholds
        .iter()
        .map(|&t| fmt6(t))
        .collect::<Vec<_>>()
        .join("/")
}

pub fn curve_header(stages: usize) -> Vec<String> {
    let mut h: Vec<String> = ["threshold", "accuracy", "expected_gmacs"]
        .into_iter()
        .map(String::from)
        .collect();
    h.extend((0..stages).map(|i| format!("frac_stage{i}")));
    h
}

pub fn write_points<W: Write>(
    out: W,
    stages: usize,
    points: &[CascadePoint],
) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(curve_header(stages))?;
    for p in points {
        let mut row = vec![
            threshold_key(&p.thresholds),
            fmt6(p.accuracy),
            fmt6(p.expected_macs),
        ];
        row.extend(p.stage_fractions.iter().map(|&f| fmt6(f)));
        w.write_record(&row)?;
    }
    w.flush()
}

pub fn write_curve<W: Write>(out: W, curve: &TradeoffCurve) -> std::io::Result<()> {
    write_points(out, curve.chain.len(), &curve.points)
}

/// A curve CSV read back as text cells.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveTable {
    pub stages: usize,
    pub rows: Vec<Vec<String>>,
}

/// Reads a curve CSV, checking its header against the 2- or 3-stage layout
/// and that every value cell is numeric.
pub fn read_curve_table(path: &Path) -> Result<CurveTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file);
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let stages = if header.len() >= 6 { 3 } else { 2 };
    let expected = curve_header(stages);
    let expected: Vec<&str> = expected.iter().map(String::as_str).collect();
    check_header(path, &header, &expected)?;
    let mut rows = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        for (i, cell) in row.iter().enumerate() {
            let ok = if i == 0 {
                cell.split('/').all(|t| t.parse::<f64>().is_ok())
            } else {
                cell.parse::<f64>().is_ok()
            };
            if !ok {
                return Err(Error::Malformed {
                    path: path.into(),
                    line,
                    message: format!("{}: not a number: `{cell}`", expected[i]),
                });
            }
        }
        rows.push(row.iter().map(String::from).collect());
    }
    Ok(CurveTable { stages, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn profile() -> ModelProfile {
        ModelProfile::new("m", 1.0, 5.3, 224).unwrap()
    }

    fn load_str(text: &str) -> Result<RecordSet> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        fs::write(&path, text).unwrap();
        load_record_set(&path, profile(), "d")
    }

    #[test]
    fn two_valid_rows() {
        let rs = load_str(
            "sample_id,predicted_label,confidence,true_label\na,1,0.500000,1\nb,2,0.250000,3\n",
        )
        .unwrap();
        assert_eq!(rs.len(), 2);
        assert_eq!(rs.records()[1].true_label, 3);
    }

    #[test]
    fn bad_confidence_names_line() {
        let text = "sample_id,predicted_label,confidence,true_label\n\
                    a,1,0.5,1\nb,1,0.5,1\nc,1,0.5,1\nd,1,1.2,1\n";
        match load_str(text) {
            Err(Error::Malformed { line, message, .. }) => {
                assert_eq!(line, 5);
                assert!(message.contains("1.2"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_rows() {
        let h = "sample_id,predicted_label,confidence,true_label\n";
        assert!(matches!(
            load_str(&format!("{h}a,x,0.5,1\n")),
            Err(Error::Malformed { line: 2, .. })
        ));
        assert!(matches!(
            load_str(&format!("{h}a,1,0.5\n")),
            Err(Error::Malformed { line: 2, .. })
        ));
        assert!(matches!(
            load_str(&format!("{h},1,0.5,1\n")),
            Err(Error::Malformed { line: 2, .. })
        ));
        assert!(matches!(
            load_str(&format!("{h}a,1,0.5,1\na,2,0.5,1\n")),
            Err(Error::Records {
                source: cascade_core::Error::DuplicateSampleId(_),
                ..
            })
        ));
        assert!(matches!(
            load_str("id,predicted_label,confidence,true_label\n"),
            Err(Error::Schema { index: 0, .. })
        ));
    }

    #[test]
    fn curve_header_errors_name_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        fs::write(
            &path,
            "threshold,acc,expected_gmacs,frac_stage0,frac_stage1\n",
        )
        .unwrap();
        match read_curve_table(&path) {
            Err(Error::Schema { index, found, .. }) => {
                assert_eq!(index, 1);
                assert_eq!(found, "acc");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn record_file_round_trip(
            rows in prop::collection::vec((0u32..1000, 0u32..=1_000_000, 0u32..1000), 0..50)
        ) {
            let mut text = String::from("sample_id,predicted_label,confidence,true_label\n");
            for (i, (p, c, t)) in rows.iter().enumerate() {
                text.push_str(&format!("img_{i:05},{p},{:.6},{t}\n", *c as f64 / 1e6));
            }
            let rs = load_str(&text).unwrap();
            let mut out = Vec::new();
            write_records(&mut out, rs.records()).unwrap();
            prop_assert_eq!(String::from_utf8(out).unwrap(), text);
        }
    }
}
