//! Subcommand implementations. Each writes CSV files with fixed six-decimal
//! floats, so identical inputs give byte-identical outputs.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use cascade_core::hardness::{bin_aligned_model, ConfidenceBinStats};
use cascade_core::optimizer::{optimize_pair, DatasetOutcome};
use cascade_core::{
    cross_evaluate, decompose_mistakes, select_kpass, sweep, sweep_kpass, AlignedRecordSet,
    CascadeConfig, ModelProfile, SelectionCriterion, SelectionResult, ThresholdGrid,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::executor::{self, ExecutionReport, MemoryPolicy};
use crate::formats::{
    curve_header, fmt6, load_profile, load_record_set, read_curve_table, threshold_key,
    write_curve, write_points, Manifest,
};
use crate::runner::{RunnerSpec, Sample};

/// Parses `--grid`: a point count (`50`), a lattice (`lattice:50` for
/// steps of 0.02) or an explicit comma-separated list.
pub fn parse_grid(s: &str) -> Result<ThresholdGrid> {
    let s = s.trim();
    if let Some(steps) = s.strip_prefix("lattice:") {
        let steps = steps
            .parse()
            .map_err(|_| Error::Config(format!("bad lattice step count `{steps}`")))?;
        return Ok(ThresholdGrid::lattice(steps)?);
    }
    if let Ok(n) = s.parse::<usize>() {
        return Ok(ThresholdGrid::evenly_spaced(n)?);
    }
    let values = s
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad grid value `{v}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ThresholdGrid::new(values)?)
}

/// Parses `--threshold T[,T2]`.
pub fn parse_thresholds(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad threshold `{v}`")))
        })
        .collect()
}

/// File-name-safe form of a model or pair name.
pub fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_' | '+') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let io = |e: csv::Error| Error::io(path, e.into());
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(r).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn load_models(
    manifest: &Manifest,
    dataset: Option<&str>,
    names: &[&str],
) -> Result<AlignedRecordSet> {
    let d = manifest.dataset(dataset)?;
    let all = manifest.load_aligned(d)?;
    for n in names {
        if all.model_index(n).is_err() {
            return Err(Error::Config(format!(
                "model `{n}` is not in dataset `{}`",
                d.name
            )));
        }
    }
    Ok(all.select(names)?)
}

pub struct AnalyzeOutput {
    pub calibration: PathBuf,
    pub decomposition: PathBuf,
    pub little_mistakes: usize,
    pub correctable: usize,
    pub non_correctable: usize,
    pub mean_correctable_confidence: Option<f64>,
    pub quantile: f64,
    pub correctable_quantile: Option<f64>,
}

/// Calibration bins for both models and the little model's mistake
/// decomposition.
pub fn analyze(
    manifest: &Manifest,
    dataset: Option<&str>,
    little: &str,
    big: &str,
    n_bins: usize,
    quantile: f64,
    out_dir: &Path,
) -> Result<AnalyzeOutput> {
    let aligned = load_models(manifest, dataset, &[little, big])?;
    let pair = file_stem(&format!("{little}+{big}"));

    let mut rows = Vec::new();
    for (k, name) in [little, big].iter().enumerate() {
        for b in bin_aligned_model(&aligned, k, n_bins)? {
            let ConfidenceBinStats {
                bin_lower,
                bin_upper,
                n_samples,
                n_correct,
                accuracy,
            } = b;
            rows.push(vec![
                (*name).to_string(),
                fmt6(bin_lower),
                fmt6(bin_upper),
                n_samples.to_string(),
                n_correct.to_string(),
                fmt6(accuracy),
            ]);
        }
    }
    let calibration = out_dir.join(format!("calibration_{pair}.csv"));
    write_csv(
        &calibration,
        &[
            "model",
            "bin_lower",
            "bin_upper",
            "n_samples",
            "n_correct",
            "accuracy",
        ],
        &rows,
    )?;

    let d = decompose_mistakes(&aligned, n_bins)?;
    let rows: Vec<Vec<String>> = d
        .bins
        .iter()
        .map(|b| {
            vec![
                fmt6(b.bin_lower),
                fmt6(b.bin_upper),
                b.correctable.to_string(),
                b.non_correctable.to_string(),
            ]
        })
        .collect();
    let decomposition = out_dir.join(format!("decomposition_{pair}.csv"));
    write_csv(
        &decomposition,
        &["bin_lower", "bin_upper", "correctable", "non_correctable"],
        &rows,
    )?;
    if d.is_empty() {
        log::warn!("`{little}` makes no mistakes on this dataset; decomposition is empty");
    }
    Ok(AnalyzeOutput {
        calibration,
        decomposition,
        little_mistakes: d.total_mistakes(),
        correctable: d.correctable(),
        non_correctable: d.non_correctable(),
        mean_correctable_confidence: d.mean_correctable_confidence(),
        quantile,
        correctable_quantile: d.correctable_quantile(quantile)?,
    })
}

/// Writes the tradeoff curve of a 2- or 3-model chain.
pub fn sweep_cmd(
    manifest: &Manifest,
    dataset: Option<&str>,
    models: &[&str],
    grid: &ThresholdGrid,
    out_dir: &Path,
) -> Result<PathBuf> {
    if !(2..=3).contains(&models.len()) {
        return Err(Error::Config(format!(
            "sweep takes 2 or 3 models, got {}",
            models.len()
        )));
    }
    let aligned = load_models(manifest, dataset, models)?;
    let path = out_dir.join(format!("curve_{}.csv", file_stem(&models.join("+"))));
    let out = create(&path)?;
    if models.len() == 2 {
        write_curve(out, &sweep(&aligned, grid)?)
    } else {
        write_points(out, 3, &sweep_kpass(&aligned, grid, grid)?)
    }
    .map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// One row of the ranked optimization table.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedRow {
    pub pair: String,
    pub big: String,
    pub selection: SelectionResult,
    pub big_accuracy: f64,
}

impl RankedRow {
    pub fn accuracy_delta(&self) -> f64 {
        self.selection.point.accuracy - self.big_accuracy
    }
}

pub const OPTIMIZE_HEADER: [&str; 9] = [
    "pair",
    "thresholds",
    "accuracy",
    "delta_accuracy",
    "expected_gmacs",
    "macs_reduction",
    "forwarded_fraction",
    "feasible",
    "little_suffices",
];

pub struct OptimizeOutput {
    pub table: PathBuf,
    pub transfer: Option<PathBuf>,
    pub rows: Vec<RankedRow>,
}

/// Chains of `k` models in increasing cost order, cheapest first.
fn chains(models: &[ModelProfile], k: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..models.len()).collect();
    order.sort_by(|&a, &b| {
        models[a]
            .macs_per_sample
            .total_cmp(&models[b].macs_per_sample)
            .then(a.cmp(&b))
    });
    let mut out = Vec::new();
    let mut pick = Vec::with_capacity(k);
    fn rec(
        order: &[usize],
        models: &[ModelProfile],
        start: usize,
        k: usize,
        pick: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if pick.len() == k {
            out.push(pick.clone());
            return;
        }
        for pos in start..order.len() {
            let m = order[pos];
            if let Some(&prev) = pick.last() {
                if models[m].macs_per_sample <= models[prev].macs_per_sample {
                    continue;
                }
            }
            pick.push(m);
            rec(order, models, pos + 1, k, pick, out);
            pick.pop();
        }
    }
    rec(&order, models, 0, k, &mut pick, &mut out);
    out
}

/// Selects the cheapest feasible threshold(s) for every chain of the
/// tuning dataset and ranks them: grouped by big model (most
/// expensive first), feasible before infeasible, then by expected GMACs.
pub fn optimize_rows(
    aligned: &AlignedRecordSet,
    tolerance: f64,
    kpass: bool,
    grid: &ThresholdGrid,
) -> Result<Vec<RankedRow>> {
    let models = aligned.models();
    let mut rows = Vec::new();
    let mut build = |chain: &[usize]| -> Result<()> {
        let names: Vec<&str> = chain.iter().map(|&i| models[i].name.as_str()).collect();
        let sub = aligned.select(&names)?;
        let selection = if chain.len() == 2 {
            optimize_pair(&sub, grid, tolerance)?.1
        } else {
            let points = sweep_kpass(&sub, grid, grid)?;
            let criterion = SelectionCriterion::from_big(&sub, tolerance)?;
            select_kpass(&points, sub.models(), &criterion)?
        };
        let big = chain.len() - 1;
        rows.push(RankedRow {
            pair: names.join("+"),
            big: names[big].to_string(),
            big_accuracy: sub.correct_count(big) as f64 / sub.len() as f64,
            selection,
        });
        Ok(())
    };
    for c in chains(models, 2) {
        build(&c)?;
    }
    if kpass {
        for c in chains(models, 3) {
            build(&c)?;
        }
    }
    let big_cost = |r: &RankedRow| r.selection.config.big().macs_per_sample;
    rows.sort_by(|a, b| {
        big_cost(b)
            .total_cmp(&big_cost(a))
            .then(a.big.cmp(&b.big))
            .then(b.selection.feasible.cmp(&a.selection.feasible))
            .then(
                a.selection
                    .point
                    .expected_macs
                    .total_cmp(&b.selection.point.expected_macs),
            )
            .then(a.pair.cmp(&b.pair))
    });
    Ok(rows)
}

fn outcome_row(pair: &str, o: &DatasetOutcome) -> Vec<String> {
    vec![
        pair.to_string(),
        threshold_key(&o.point.thresholds),
        o.dataset_name.clone(),
        fmt6(o.point.accuracy),
        fmt6(o.accuracy_delta),
        fmt6(o.point.expected_macs),
        fmt6(o.macs_reduction),
        fmt6(o.point.forwarded_fraction()),
    ]
}

pub fn optimize(
    manifest: &Manifest,
    dataset: Option<&str>,
    tolerance: f64,
    kpass: bool,
    grid: &ThresholdGrid,
    out_dir: &Path,
) -> Result<OptimizeOutput> {
    if !tolerance.is_finite() {
        return Err(Error::Config(format!(
            "tolerance must be finite, got {tolerance}"
        )));
    }
    let tuning = manifest.dataset(dataset)?;
    if tuning.models.len() < 2 {
        return Err(Error::Config(format!(
            "optimize needs at least 2 models, dataset `{}` has {}",
            tuning.name,
            tuning.models.len()
        )));
    }
    let aligned = manifest.load_aligned(tuning)?;
    let rows = optimize_rows(&aligned, tolerance, kpass, grid)?;

    let table_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let s = &r.selection;
            vec![
                r.pair.clone(),
                threshold_key(s.config.thresholds()),
                fmt6(s.point.accuracy),
                fmt6(r.accuracy_delta()),
                fmt6(s.point.expected_macs),
                fmt6(s.macs_reduction),
                fmt6(s.point.forwarded_fraction()),
                s.feasible.to_string(),
                s.little_suffices.to_string(),
            ]
        })
        .collect();
    let table = out_dir.join("optimize.csv");
    write_csv(&table, &OPTIMIZE_HEADER, &table_rows)?;

    let targets: Vec<AlignedRecordSet> = manifest
        .targets(&tuning.name)
        .map(|d| manifest.load_aligned(d))
        .collect::<Result<_>>()?;
    let transfer = if targets.is_empty() {
        None
    } else {
        let mut out = Vec::new();
        for r in rows.iter().filter(|r| r.selection.feasible) {
            let names: Vec<&str> = r
                .selection
                .config
                .chain()
                .iter()
                .map(|m| m.name.as_str())
                .collect();
            let covered: Vec<AlignedRecordSet> = targets
                .iter()
                .filter(|t| {
                    let ok = names.iter().all(|n| t.model_index(n).is_ok());
                    if !ok {
                        log::warn!(
                            "dataset `{}` lacks a model of {}; skipped",
                            t.dataset_name(),
                            r.pair
                        );
                    }
                    ok
                })
                .cloned()
                .collect();
            let report = cross_evaluate(&r.selection.config, &aligned, &covered)?;
            out.push(outcome_row(&r.pair, &report.tuning));
            out.extend(report.targets.iter().map(|o| outcome_row(&r.pair, o)));
        }
        let path = out_dir.join("transfer.csv");
        write_csv(
            &path,
            &[
                "pair",
                "thresholds",
                "dataset",
                "accuracy",
                "delta_accuracy",
                "expected_gmacs",
                "macs_reduction",
                "forwarded_fraction",
            ],
            &out,
        )?;
        Some(path)
    };
    Ok(OptimizeOutput {
        table,
        transfer,
        rows,
    })
}

#[derive(Debug, Clone, Deserialize)]
struct StageFile {
    profile: PathBuf,
    runner: RunnerSpec,
}

/// Cascade execution config: one stage per model, cheapest first, and an
/// optional sample list.
#[derive(Debug, Clone, Deserialize)]
struct ExecConfigFile {
    stages: Vec<StageFile>,
    #[serde(default)]
    samples: Option<PathBuf>,
}

pub struct ExecPlan {
    pub config: CascadeConfig,
    pub runners: Vec<RunnerSpec>,
    pub samples: Vec<Sample>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.into()
    } else {
        base.join(p)
    }
}

/// Reads a sample list: one `sample_id [payload_path]` per line.
pub fn read_samples(path: &Path) -> Result<Vec<Sample>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut parts = line.split_whitespace();
        let Some(id) = parts.next() else { continue };
        let payload = parts.next().unwrap_or(id);
        if parts.next().is_some() {
            return Err(Error::Malformed {
                path: path.into(),
                line: i as u64 + 1,
                message: "expected `sample_id [payload_path]`".into(),
            });
        }
        out.push(Sample {
            sample_id: id.into(),
            payload: payload.into(),
        });
    }
    Ok(out)
}

/// Loads an execution config. Without an explicit sample list, samples are
/// the ids of the first replay stage's record file, in file order.
pub fn load_exec_plan(path: &Path, thresholds: Vec<f64>) -> Result<ExecPlan> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ExecConfigFile = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.into(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut chain = Vec::new();
    let mut runners = Vec::new();
    for s in file.stages {
        chain.push(load_profile(&resolve(base, &s.profile))?);
        runners.push(match s.runner {
            RunnerSpec::Replay { records } => RunnerSpec::Replay {
                records: resolve(base, &records),
            },
            RunnerSpec::Subprocess {
                command,
                working_dir,
                startup_timeout_secs,
                response_timeout_secs,
            } => RunnerSpec::Subprocess {
                command,
                working_dir: Some(resolve(
                    base,
                    working_dir.as_deref().unwrap_or(Path::new("")),
                )),
                startup_timeout_secs,
                response_timeout_secs,
            },
        });
    }
    let config = CascadeConfig::new(chain, thresholds).map_err(|e| Error::Config(e.to_string()))?;
    let samples = match file.samples {
        Some(p) => read_samples(&resolve(base, &p))?,
        None => {
            let (stage, records) = runners
                .iter()
                .enumerate()
                .find_map(|(i, r)| match r {
                    RunnerSpec::Replay { records } => Some((i, records)),
                    _ => None,
                })
                .ok_or_else(|| {
                    Error::Config("no sample list and no replay stage to take ids from".into())
                })?;
            load_record_set(records, config.chain()[stage].clone(), "samples")?
                .records()
                .iter()
                .map(|r| Sample::new(r.sample_id.clone()))
                .collect()
        }
    };
    Ok(ExecPlan {
        config,
        runners,
        samples,
    })
}

/// Keeps `n` samples chosen with a seeded RNG, preserving input order.
pub fn subsample(samples: Vec<Sample>, n: usize, seed: u64) -> Vec<Sample> {
    if n >= samples.len() {
        return samples;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = rand::seq::index::sample(&mut rng, samples.len(), n).into_vec();
    keep.sort_unstable();
    let mut keep = keep.into_iter().peekable();
    samples
        .into_iter()
        .enumerate()
        .filter_map(|(i, s)| {
            if keep.peek() == Some(&i) {
                keep.next();
                Some(s)
            } else {
                None
            }
        })
        .collect()
}

pub fn execute_cmd(
    config_path: &Path,
    thresholds: Vec<f64>,
    policy: MemoryPolicy,
    out: &Path,
    subsample_n: Option<usize>,
    seed: u64,
) -> Result<ExecutionReport> {
    let mut plan = load_exec_plan(config_path, thresholds)?;
    if let Some(n) = subsample_n {
        plan.samples = subsample(plan.samples, n, seed);
    }
    let report = executor::execute(&plan.samples, &plan.config, &plan.runners, policy)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    executor::write_report(out, &report)?;
    let summary = summary_path(out);
    let mut rows = Vec::new();
    for (i, (name, count)) in report.models.iter().zip(&report.stage_counts).enumerate() {
        rows.push(vec![
            format!("stage{i}"),
            name.clone(),
            count.to_string(),
            fmt6(*count as f64 / report.samples.len().max(1) as f64),
        ]);
    }
    rows.push(vec![
        "total".into(),
        String::new(),
        report.samples.len().to_string(),
        fmt6(1.0),
    ]);
    rows.push(vec![
        "gmacs".into(),
        fmt6(report.total_gmacs),
        String::new(),
        fmt6(report.mean_gmacs),
    ]);
    write_csv(&summary, &["key", "model", "count", "value"], &rows)?;
    Ok(report)
}

/// `report.csv` -> `report.summary.csv`
pub fn summary_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "report".into());
    out.with_file_name(format!("{stem}.summary.csv"))
}

/// Merges curve CSVs into one long table keyed by (pair, threshold). The
/// pair name is the file stem with any `curve_` prefix removed.
pub fn report(inputs: &[PathBuf], out: &Path) -> Result<PathBuf> {
    if inputs.is_empty() {
        return Err(Error::Config("report needs at least one curve file".into()));
    }
    let tables = inputs
        .iter()
        .map(|p| read_curve_table(p).map(|t| (p, t)))
        .collect::<Result<Vec<_>>>()?;
    let stages = tables.iter().map(|(_, t)| t.stages).max().unwrap_or(2);
    let mut header = vec!["pair".to_string()];
    header.extend(curve_header(stages));
    let mut seen = std::collections::HashSet::new();
    let mut rows = Vec::new();
    for (path, t) in &tables {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let pair = stem.strip_prefix("curve_").unwrap_or(&stem).to_string();
        for r in &t.rows {
            if !seen.insert((pair.clone(), r[0].clone())) {
                return Err(Error::Config(format!(
                    "duplicate (pair, threshold) key ({pair}, {})",
                    r[0]
                )));
            }
            let mut row = vec![pair.clone()];
            row.extend(r.iter().cloned());
            row.resize(header.len(), String::new());
            rows.push(row);
        }
    }
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(out, &header, &rows)?;
    Ok(out.to_path_buf())
}

/// Writes `text` to `path`, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = create(path)?;
    f.write_all(text.as_bytes())
        .map_err(|e| Error::io(path, e))?;
    f.flush().map_err(|e| Error::io(path, e))
}
