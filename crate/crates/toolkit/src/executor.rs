//! Runs a configured cascade against live model runners.
//!
//! Under [`MemoryPolicy::Resident`] every stage's runner is started up
//! front and samples are routed one at a time. Under
//! [`MemoryPolicy::Swap`] stages run as batch phases: stage `i` processes
//! every sample still pending and is shut down before stage `i + 1`
//! starts, so only one model is loaded at any time. Both policies route with
//! the same gate as the evaluator and yield the same report.

use std::collections::HashSet;
use std::path::Path;
use std::time::{Duration, Instant};

use cascade_core::engine::expected_macs;
use cascade_core::{passes_gate, CascadeConfig, ModelProfile, Prediction};

use crate::error::{Error, Result};
use crate::formats::load_record_set;
use crate::protocol::is_token;
use crate::runner::{ReplayRunner, Runner, RunnerError, RunnerSpec, Sample, SubprocessRunner};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MemoryPolicy {
    #[default]
    Resident,
    Swap,
}

impl std::str::FromStr for MemoryPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "resident" => Ok(Self::Resident),
            "swap" => Ok(Self::Swap),
            other => Err(format!("unknown memory policy `{other}` (resident|swap)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutcome {
    pub sample_id: String,
    pub stage: usize,
    pub label: u32,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionReport {
    pub models: Vec<String>,
    /// In input order.
    pub samples: Vec<SampleOutcome>,
    pub stage_counts: Vec<usize>,
    /// Sum over samples of the MACs of every stage each sample reached.
    pub total_gmacs: f64,
    pub mean_gmacs: f64,
    pub wall_time: Duration,
}

impl ExecutionReport {
    /// Equal in everything except wall time.
    pub fn same_outcome(&self, other: &Self) -> bool {
        self.models == other.models
            && self.samples == other.samples
            && self.stage_counts == other.stage_counts
            && self.total_gmacs.to_bits() == other.total_gmacs.to_bits()
            && self.mean_gmacs.to_bits() == other.mean_gmacs.to_bits()
    }
}

/// Starts the runner for one stage. Replay record files are read with the
/// stage's profile.
pub fn start_runner(spec: &RunnerSpec, profile: &ModelProfile) -> Result<Box<dyn Runner>> {
    match spec {
        RunnerSpec::Replay { records } => {
            let set = load_record_set(records, profile.clone(), "replay")?;
            Ok(Box::new(ReplayRunner::new(&profile.name, set.records())))
        }
        RunnerSpec::Subprocess {
            command,
            working_dir,
            startup_timeout_secs,
            response_timeout_secs,
        } => SubprocessRunner::spawn(
            command,
            working_dir.as_deref(),
            *startup_timeout_secs,
            *response_timeout_secs,
        )
        .map(|r| Box::new(r) as Box<dyn Runner>)
        .map_err(|source| Error::Runner {
            stage: 0,
            sample: None,
            source,
        }),
    }
}

/// Handshakes and checks the announced name against the stage profile.
pub fn handshake(runner: &mut dyn Runner, profile: &ModelProfile) -> Result<String, RunnerError> {
    let name = runner.handshake()?;
    if name != profile.name {
        return Err(RunnerError::NameMismatch {
            expected: profile.name.clone(),
            found: name,
        });
    }
    Ok(name)
}

fn check_samples(samples: &[Sample]) -> Result<()> {
    let mut seen = HashSet::new();
    for s in samples {
        if !is_token(&s.sample_id) || !is_token(&s.payload) {
            return Err(Error::Config(format!(
                "sample `{}`: ids and payload paths must be non-empty without whitespace",
                s.sample_id
            )));
        }
        if !seen.insert(s.sample_id.as_str()) {
            return Err(Error::Config(format!("duplicate sample `{}`", s.sample_id)));
        }
    }
    Ok(())
}

fn runner_error(stage: usize, sample: Option<&Sample>, source: RunnerError) -> Error {
    Error::Runner {
        stage,
        sample: sample.map(|s| s.sample_id.clone()),
        source,
    }
}

/// Executes `config` with runners produced by `start(stage)`.
pub fn execute_with<F>(
    samples: &[Sample],
    config: &CascadeConfig,
    policy: MemoryPolicy,
    mut start: F,
) -> Result<ExecutionReport>
where
    F: FnMut(usize) -> Result<Box<dyn Runner>>,
{
    check_samples(samples)?;
    let began = Instant::now();
    let chain = config.chain();
    let thresholds = config.thresholds();
    let last = chain.len() - 1;
    let mut open = |stage: usize| -> Result<Box<dyn Runner>> {
        let mut r = start(stage).map_err(|e| match e {
            Error::Runner { sample, source, .. } => Error::Runner {
                stage,
                sample,
                source,
            },
            other => other,
        })?;
        handshake(r.as_mut(), &chain[stage]).map_err(|e| runner_error(stage, None, e))?;
        log::debug!("stage {stage}: runner `{}` ready", chain[stage].name);
        Ok(r)
    };
    let mut answers: Vec<Option<(usize, Prediction)>> = vec![None; samples.len()];

    match policy {
        MemoryPolicy::Resident => {
            let mut runners = (0..chain.len())
                .map(&mut open)
                .collect::<Result<Vec<_>>>()?;
            for (i, s) in samples.iter().enumerate() {
                let mut stage = 0;
                loop {
                    let p = runners[stage]
                        .predict(std::slice::from_ref(s))
                        .map_err(|(_, e)| runner_error(stage, Some(s), e))?[0];
                    if stage == last || passes_gate(p.confidence.get(), thresholds[stage]) {
                        answers[i] = Some((stage, p));
                        break;
                    }
                    stage += 1;
                }
            }
            for (stage, r) in runners.iter_mut().enumerate() {
                r.shutdown().map_err(|e| runner_error(stage, None, e))?;
            }
        }
        MemoryPolicy::Swap => {
            let mut pending: Vec<usize> = (0..samples.len()).collect();
            #[allow(clippy::needless_range_loop)]
            for stage in 0..chain.len() {
                if pending.is_empty() {
                    log::debug!("stage {stage}: nothing forwarded, runner not started");
                    break;
                }
                let mut runner = open(stage)?;
                let batch: Vec<Sample> = pending.iter().map(|&i| samples[i].clone()).collect();
                let preds = runner
                    .predict(&batch)
                    .map_err(|(k, e)| runner_error(stage, batch.get(k), e))?;
                runner
                    .shutdown()
                    .map_err(|e| runner_error(stage, None, e))?;
                drop(runner);
                let mut next = Vec::new();
                for (&i, p) in pending.iter().zip(preds) {
                    if stage == last || passes_gate(p.confidence.get(), thresholds[stage]) {
                        answers[i] = Some((stage, p));
                    } else {
                        next.push(i);
                    }
                }
                pending = next;
            }
        }
    }

    let mut stage_counts = vec![0usize; chain.len()];
    let outcomes: Vec<SampleOutcome> = samples
        .iter()
        .zip(answers)
        .map(|(s, a)| {
            let (stage, p) = a.expect("every sample answered");
            stage_counts[stage] += 1;
            SampleOutcome {
                sample_id: s.sample_id.clone(),
                stage,
                label: p.label,
                confidence: p.confidence.get(),
            }
        })
        .collect();
    let mut reached = samples.len();
    let mut total_gmacs = 0.0;
    for (count, model) in stage_counts.iter().zip(chain) {
        total_gmacs += reached as f64 * model.macs_per_sample;
        reached -= count;
    }
    let wall_time = began.elapsed();
    log::info!(
        "executed {} samples in {:.3}s, stage counts {:?}",
        samples.len(),
        wall_time.as_secs_f64(),
        stage_counts
    );
    Ok(ExecutionReport {
        models: chain.iter().map(|m| m.name.clone()).collect(),
        mean_gmacs: expected_macs(&stage_counts, chain),
        samples: outcomes,
        stage_counts,
        total_gmacs,
        wall_time,
    })
}

/// Executes `config` with one [`RunnerSpec`] per stage.
pub fn execute(
    samples: &[Sample],
    config: &CascadeConfig,
    runners: &[RunnerSpec],
    policy: MemoryPolicy,
) -> Result<ExecutionReport> {
    if runners.len() != config.chain().len() {
        return Err(Error::Config(format!(
            "{} runners for a {}-stage cascade",
            runners.len(),
            config.chain().len()
        )));
    }
    execute_with(samples, config, policy, |stage| {
        start_runner(&runners[stage], &config.chain()[stage])
    })
}

/// Writes the per-sample report as CSV.
pub fn write_report(path: &Path, report: &ExecutionReport) -> Result<()> {
    let io = |e: std::io::Error| Error::io(path, e);
    let mut w = csv::Writer::from_path(path).map_err(|e| io(e.into()))?;
    w.write_record([
        "sample_id",
        "stage",
        "model",
        "predicted_label",
        "confidence",
    ])
    .map_err(|e| io(e.into()))?;
    for s in &report.samples {
        w.write_record([
            s.sample_id.as_str(),
            &s.stage.to_string(),
            &report.models[s.stage],
            &s.label.to_string(),
            &crate::formats::fmt6(s.confidence),
        ])
        .map_err(|e| io(e.into()))?;
    }
    w.flush().map_err(io)
}
