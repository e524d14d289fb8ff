//! Cascade routing, evaluation and threshold sweeps.
//!
//! Stage `i` of a chain answers a sample when its confidence is `>=`
//! `thresholds[i]` and no earlier stage answered; the last stage answers
//! unconditionally. Every stage a sample reaches is charged its full MACs,
//! so the little model is paid for on every sample.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::record::{AlignedRecordSet, AlignedRow, ModelProfile, Prediction};

/// Default number of evenly spaced thresholds in a sweep.
pub const DEFAULT_GRID_POINTS: usize = 50;

/// Ordered model chain (cheapest first by convention) and one threshold per
/// gate.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeConfig {
    chain: Vec<ModelProfile>,
    thresholds: Vec<f64>,
}

fn check_threshold(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::ThresholdOutOfRange(t))
    }
}

impl CascadeConfig {
    pub fn new(chain: Vec<ModelProfile>, thresholds: Vec<f64>) -> Result<Self> {
        if chain.len() < 2 {
            return Err(Error::ChainTooShort(chain.len()));
        }
        if thresholds.len() != chain.len() - 1 {
            return Err(Error::ThresholdCount {
                chain: chain.len(),
                expected: chain.len() - 1,
                found: thresholds.len(),
            });
        }
        thresholds.iter().try_for_each(|&t| check_threshold(t))?;
        Ok(Self { chain, thresholds })
    }

    pub fn chain(&self) -> &[ModelProfile] {
        &self.chain
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn big(&self) -> &ModelProfile {
        self.chain.last().expect("chain has at least 2 models")
    }

    /// Same chain, different thresholds.
    pub fn with_thresholds(&self, thresholds: Vec<f64>) -> Result<Self> {
        Self::new(self.chain.clone(), thresholds)
    }

    /// Display name of the chain, e.g. `b4+b7`.
    pub fn label(&self) -> alloc::string::String {
        chain_label(&self.chain)
    }

    fn check_models(&self, models: &[ModelProfile]) -> Result<()> {
        if models.len() != self.chain.len() {
            return Err(Error::ModelCount {
                expected: self.chain.len(),
                found: models.len(),
            });
        }
        for (position, (c, m)) in self.chain.iter().zip(models).enumerate() {
            if c.name != m.name {
                return Err(Error::ChainMismatch {
                    position,
                    config: c.name.clone(),
                    records: m.name.clone(),
                });
            }
        }
        Ok(())
    }
}

pub(crate) fn chain_label(chain: &[ModelProfile]) -> alloc::string::String {
    let names: Vec<&str> = chain.iter().map(|m| m.name.as_str()).collect();
    names.join("+")
}

/// The gate: a stage keeps the sample when its confidence reaches the
/// threshold. Ties stay at the cheaper stage.
#[inline]
pub fn passes_gate(confidence: f64, threshold: f64) -> bool {
    confidence >= threshold
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RouteDecision {
    pub stage: usize,
    pub label: u32,
}

/// Routes one sample given every stage's prediction.
///
/// `predictions` must hold one entry per stage and `thresholds` one entry
/// per gate (`predictions.len() - 1`).
pub fn route_predictions(predictions: &[Prediction], thresholds: &[f64]) -> RouteDecision {
    debug_assert_eq!(predictions.len(), thresholds.len() + 1);
    let stage = thresholds
        .iter()
        .zip(predictions)
        .position(|(&t, p)| passes_gate(p.confidence.get(), t))
        .unwrap_or(thresholds.len());
    RouteDecision {
        stage,
        label: predictions[stage].label,
    }
}

pub fn route(row: &AlignedRow, config: &CascadeConfig) -> RouteDecision {
    route_predictions(&row.predictions, &config.thresholds)
}

/// Per-sample expected MACs given how many samples each stage answered.
///
/// Stage 0 is charged on every sample; stage `i` on the samples that reach
/// it. Computed from integer counts, so the result does not depend on row
/// order or on how rows were partitioned.
pub fn expected_macs(stage_counts: &[usize], chain: &[ModelProfile]) -> f64 {
    debug_assert_eq!(stage_counts.len(), chain.len());
    let n: usize = stage_counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let mut reached = n;
    let mut total = 0.0;
    for (i, (count, model)) in stage_counts.iter().zip(chain).enumerate() {
        if i == 0 {
            total = model.macs_per_sample;
        } else {
            total += (reached as f64 / n as f64) * model.macs_per_sample;
        }
        reached -= count;
    }
    total
}

/// One operating point of a cascade on one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadePoint {
    pub thresholds: Vec<f64>,
    /// Samples answered by each stage.
    pub stage_counts: Vec<usize>,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    /// GMACs per sample.
    pub expected_macs: f64,
    /// Fraction of samples answered by each stage; sums to 1.
    pub stage_fractions: Vec<f64>,
}

impl CascadePoint {
    fn from_counts(
        thresholds: Vec<f64>,
        stage_counts: Vec<usize>,
        correct: usize,
        chain: &[ModelProfile],
    ) -> Self {
        let total: usize = stage_counts.iter().sum();
        let frac = |k: usize| {
            if total == 0 {
                0.0
            } else {
                k as f64 / total as f64
            }
        };
        Self {
            expected_macs: expected_macs(&stage_counts, chain),
            stage_fractions: stage_counts.iter().map(|&k| frac(k)).collect(),
            accuracy: frac(correct),
            thresholds,
            stage_counts,
            correct,
            total,
        }
    }

    /// Fraction of samples passed beyond the first stage.
    pub fn forwarded_fraction(&self) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        (self.total - self.stage_counts[0]) as f64 / self.total as f64
    }
}

fn evaluate_thresholds(
    aligned: &AlignedRecordSet,
    chain: &[ModelProfile],
    thresholds: &[f64],
) -> CascadePoint {
    let mut counts = alloc::vec![0usize; chain.len()];
    let mut correct = 0;
    for row in aligned.rows() {
        let d = route_predictions(&row.predictions, thresholds);
        counts[d.stage] += 1;
        correct += usize::from(d.label == row.true_label);
    }
    CascadePoint::from_counts(thresholds.to_vec(), counts, correct, chain)
}

/// Accuracy, cost and stage split of `config` on `aligned`.
pub fn evaluate(aligned: &AlignedRecordSet, config: &CascadeConfig) -> Result<CascadePoint> {
    config.check_models(aligned.models())?;
    if aligned.is_empty() {
        return Err(Error::EmptyRecords);
    }
    Ok(evaluate_thresholds(
        aligned,
        &config.chain,
        &config.thresholds,
    ))
}

/// A validated list of thresholds in `[0, 1]`, sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdGrid(Vec<f64>);

impl ThresholdGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyGrid);
        }
        values.iter().try_for_each(|&t| check_threshold(t))?;
        if let Some(i) = values.windows(2).position(|w| w[0] > w[1]) {
            return Err(Error::UnsortedGrid(i + 1));
        }
        Ok(Self(values))
    }

    /// `n` evenly spaced values from 0 to 1 inclusive.
    pub fn evenly_spaced(n: usize) -> Result<Self> {
        match n {
            0 => Err(Error::EmptyGrid),
            1 => Ok(Self(alloc::vec![0.0])),
            _ => Ok(Self((0..n).map(|i| i as f64 / (n - 1) as f64).collect())),
        }
    }

    /// Multiples of `1 / steps` from 0 to 1, e.g. `steps = 50` gives a 0.02
    /// lattice with 51 points.
    pub fn lattice(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::EmptyGrid);
        }
        Ok(Self((0..=steps).map(|i| i as f64 / steps as f64).collect()))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Default for ThresholdGrid {
    fn default() -> Self {
        Self::evenly_spaced(DEFAULT_GRID_POINTS).expect("non-empty")
    }
}

/// Accuracy/cost points of a two-model cascade, ordered by threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct TradeoffCurve {
    pub chain: Vec<ModelProfile>,
    pub points: Vec<CascadePoint>,
}

impl TradeoffCurve {
    pub fn little(&self) -> &ModelProfile {
        &self.chain[0]
    }

    pub fn big(&self) -> &ModelProfile {
        self.chain.last().expect("non-empty chain")
    }

    pub fn label(&self) -> alloc::string::String {
        chain_label(&self.chain)
    }
}

fn require_models(aligned: &AlignedRecordSet, k: usize) -> Result<()> {
    if aligned.models().len() != k {
        return Err(Error::ModelCount {
            expected: k,
            found: aligned.models().len(),
        });
    }
    if aligned.is_empty() {
        return Err(Error::EmptyRecords);
    }
    Ok(())
}

/// Evaluates a (little, big) aligned set at every grid threshold.
pub fn sweep(aligned: &AlignedRecordSet, grid: &ThresholdGrid) -> Result<TradeoffCurve> {
    require_models(aligned, 2)?;
    let chain = aligned.models();
    let points = grid
        .values()
        .iter()
        .map(|&t| evaluate_thresholds(aligned, chain, &[t]))
        .collect();
    Ok(TradeoffCurve {
        chain: chain.to_vec(),
        points,
    })
}

/// Evaluates a (tiny, little, big) aligned set over the Cartesian product of
/// two grids, first-gate-major.
pub fn sweep_kpass(
    aligned: &AlignedRecordSet,
    first: &ThresholdGrid,
    second: &ThresholdGrid,
) -> Result<Vec<CascadePoint>> {
    require_models(aligned, 3)?;
    let chain = aligned.models();
    let mut points = Vec::with_capacity(first.len() * second.len());
    for &t1 in first.values() {
        for &t2 in second.values() {
            points.push(evaluate_thresholds(aligned, chain, &[t1, t2]));
        }
    }
    Ok(points)
}

/// Resolution, width and depth ratios of a scaled model relative to its
/// base, plus the ratio of family coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingSpec {
    pub h_ratio: f64,
    pub w_ratio: f64,
    pub l_ratio: f64,
    pub c_ratio: f64,
}

impl ScalingSpec {
    pub fn new(h_ratio: f64, w_ratio: f64, l_ratio: f64) -> Self {
        Self {
            h_ratio,
            w_ratio,
            l_ratio,
            c_ratio: 1.0,
        }
    }
}

/// Relative MACs multiplier `c * h^2 * w^2 * l`.
pub fn estimate_scaling_cost(spec: &ScalingSpec) -> Result<f64> {
    for (name, value) in [
        ("h_ratio", spec.h_ratio),
        ("w_ratio", spec.w_ratio),
        ("l_ratio", spec.l_ratio),
        ("c_ratio", spec.c_ratio),
    ] {
        if !value.is_finite() || value <= 0.0 {
            return Err(Error::NonPositiveRatio { name, value });
        }
    }
    let ScalingSpec {
        h_ratio: h,
        w_ratio: w,
        l_ratio: l,
        c_ratio: c,
    } = *spec;
    Ok(c * h * h * w * w * l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::{align, Confidence, PredictionRecord, RecordSet};
    use alloc::format;
    use alloc::vec;
    use proptest::prelude::*;

    fn profile(name: &str, macs: f64) -> ModelProfile {
        ModelProfile::new(name, macs, 0.0, 224).unwrap()
    }

    fn pred(label: u32, c: f64) -> Prediction {
        Prediction {
            label,
            confidence: Confidence::new(c).unwrap(),
        }
    }

    /// Builds an aligned set from per-row `(true_label, [(label, conf); K])`.
    fn aligned(models: &[(&str, f64)], rows: &[(u32, Vec<(u32, f64)>)]) -> AlignedRecordSet {
        let sets: Vec<RecordSet> = models
            .iter()
            .enumerate()
            .map(|(k, &(name, macs))| {
                let recs = rows
                    .iter()
                    .enumerate()
                    .map(|(i, (t, ps))| {
                        PredictionRecord::new(format!("s{i:04}"), ps[k].0, ps[k].1, *t).unwrap()
                    })
                    .collect();
                RecordSet::new(profile(name, macs), "d", recs).unwrap()
            })
            .collect();
        align(&sets).unwrap()
    }

    fn hand_example() -> AlignedRecordSet {
        // little (conf, correct) = (0.9 ok) (0.6 x) (0.4 x) (0.95 ok); big = ok ok ok x
        aligned(
            &[("little", 1.0), ("big", 10.0)],
            &[
                (1, vec![(1, 0.9), (1, 0.8)]),
                (1, vec![(0, 0.6), (1, 0.8)]),
                (1, vec![(0, 0.4), (1, 0.8)]),
                (1, vec![(1, 0.95), (0, 0.8)]),
            ],
        )
    }

    fn config(set: &AlignedRecordSet, t: &[f64]) -> CascadeConfig {
        CascadeConfig::new(set.models().to_vec(), t.to_vec()).unwrap()
    }

    #[test]
    fn gate_is_inclusive() {
        let d = route_predictions(&[pred(3, 0.9), pred(4, 0.99)], &[0.9]);
        assert_eq!(d, RouteDecision { stage: 0, label: 3 });
        let d = route_predictions(&[pred(3, 0.0), pred(4, 0.99)], &[0.0]);
        assert_eq!(d.stage, 0);
    }

    #[test]
    fn three_stage_route() {
        let d = route_predictions(&[pred(1, 0.5), pred(2, 0.8), pred(3, 0.1)], &[0.74, 0.26]);
        assert_eq!(d, RouteDecision { stage: 1, label: 2 });
        let d = route_predictions(&[pred(1, 0.5), pred(2, 0.2), pred(3, 0.1)], &[0.74, 0.26]);
        assert_eq!(d, RouteDecision { stage: 2, label: 3 });
    }

    #[test]
    fn evaluate_hand_example() {
        let set = hand_example();
        let p = evaluate(&set, &config(&set, &[0.5])).unwrap();
        assert_eq!(p.stage_counts, vec![3, 1]);
        assert_eq!(p.correct, 3);
        assert_eq!(p.accuracy, 0.75);
        assert_eq!(p.expected_macs, 3.5);
        assert_eq!(p.stage_fractions, vec![0.75, 0.25]);
    }

    #[test]
    fn zero_threshold_is_little_alone() {
        let set = hand_example();
        let p = evaluate(&set, &config(&set, &[0.0])).unwrap();
        assert_eq!(p.correct, set.correct_count(0));
        assert_eq!(p.expected_macs, 1.0);
        assert_eq!(p.forwarded_fraction(), 0.0);
    }

    #[test]
    fn threshold_above_all_confidences_is_big_alone() {
        let set = hand_example();
        let p = evaluate(&set, &config(&set, &[1.0])).unwrap();
        assert_eq!(p.correct, set.correct_count(1));
        assert_eq!(p.expected_macs, 11.0);
    }

    #[test]
    fn chain_mismatch_is_reported() {
        let set = hand_example();
        let cfg = CascadeConfig::new(
            vec![profile("little", 1.0), profile("other", 2.0)],
            vec![0.5],
        )
        .unwrap();
        assert!(matches!(
            evaluate(&set, &cfg),
            Err(Error::ChainMismatch { position: 1, .. })
        ));
    }

    #[test]
    fn config_validation() {
        assert_eq!(
            CascadeConfig::new(vec![profile("a", 1.0)], vec![]),
            Err(Error::ChainTooShort(1))
        );
        assert!(matches!(
            CascadeConfig::new(vec![profile("a", 1.0), profile("b", 2.0)], vec![0.1, 0.2]),
            Err(Error::ThresholdCount { .. })
        ));
        assert_eq!(
            CascadeConfig::new(vec![profile("a", 1.0), profile("b", 2.0)], vec![1.5]),
            Err(Error::ThresholdOutOfRange(1.5))
        );
    }

    #[test]
    fn grids() {
        let g = ThresholdGrid::default();
        assert_eq!(g.len(), 50);
        assert_eq!(g.values()[0], 0.0);
        assert_eq!(g.values()[49], 1.0);
        let l = ThresholdGrid::lattice(50).unwrap();
        assert_eq!(l.len(), 51);
        assert_eq!(l.values()[12], 0.24);
        assert_eq!(ThresholdGrid::new(vec![]), Err(Error::EmptyGrid));
        assert_eq!(
            ThresholdGrid::new(vec![0.2, 0.1]),
            Err(Error::UnsortedGrid(1))
        );
        assert_eq!(
            ThresholdGrid::new(vec![0.2, 1.1]),
            Err(Error::ThresholdOutOfRange(1.1))
        );
    }

    #[test]
    fn sweep_endpoints() {
        let set = hand_example();
        let curve = sweep(&set, &ThresholdGrid::new(vec![0.0, 1.0]).unwrap()).unwrap();
        assert_eq!(curve.points.len(), 2);
        assert_eq!(curve.points[0].correct, set.correct_count(0));
        assert_eq!(curve.points[0].expected_macs, 1.0);
        assert_eq!(curve.points[1].stage_counts, vec![0, 4]);
        assert_eq!(curve.label(), "little+big");
    }

    #[test]
    fn kpass_degenerate_gates() {
        let set = aligned(
            &[("tiny", 1.0), ("little", 3.0), ("big", 10.0)],
            &[
                (1, vec![(1, 0.9), (1, 0.8), (1, 0.9)]),
                (1, vec![(0, 0.3), (1, 0.7), (1, 0.9)]),
                (2, vec![(0, 0.2), (0, 0.1), (2, 0.9)]),
                (2, vec![(2, 0.6), (0, 0.5), (0, 0.9)]),
            ],
        );
        let grid = ThresholdGrid::evenly_spaced(11).unwrap();
        let zero = ThresholdGrid::new(vec![0.0]).unwrap();
        let tiny_alone = sweep_kpass(&set, &zero, &grid).unwrap();
        for p in tiny_alone {
            assert_eq!(p.stage_counts, vec![4, 0, 0]);
            assert_eq!(p.correct, set.correct_count(0));
            assert_eq!(p.expected_macs, 1.0);
        }
        let two_pass = sweep(&set.select(&["tiny", "little"]).unwrap(), &grid).unwrap();
        let k = sweep_kpass(&set, &grid, &zero).unwrap();
        for (a, b) in two_pass.points.iter().zip(&k) {
            assert_eq!(a.correct, b.correct);
            assert_eq!(a.expected_macs, b.expected_macs);
            assert_eq!(&a.stage_counts[..], &b.stage_counts[..2]);
        }
    }

    #[test]
    fn scaling_law() {
        let double = ScalingSpec::new(2.0, 2.0, 2.0);
        assert_eq!(estimate_scaling_cost(&double).unwrap(), 32.0);
        assert_eq!(
            estimate_scaling_cost(&ScalingSpec::new(1.0, 1.0, 1.0)).unwrap(),
            1.0
        );
        let b7 = estimate_scaling_cost(&ScalingSpec::new(2.7, 2.0, 3.1)).unwrap();
        assert!((b7 - 90.396).abs() < 1e-9);
        // Same order of magnitude as the measured 95.8x.
        assert!(b7 / 95.8 > 0.5 && b7 / 95.8 < 2.0);
        assert!(matches!(
            estimate_scaling_cost(&ScalingSpec::new(0.0, 1.0, 1.0)),
            Err(Error::NonPositiveRatio {
                name: "h_ratio",
                ..
            })
        ));
    }

    prop_compose! {
        fn pair_rows()(rows in prop::collection::vec(
            (0u32..4, 0u32..4, 0.0f64..=1.0, 0u32..4, 0.0f64..=1.0), 1..120)) -> Vec<(u32, Vec<(u32, f64)>)> {
            rows.into_iter().map(|(t, l, lc, b, bc)| (t, vec![(l, lc), (b, bc)])).collect()
        }
    }

    proptest! {
        #[test]
        fn forwarded_fraction_is_empirical_cdf(rows in pair_rows(), n in 2usize..60) {
            let set = aligned(&[("l", 0.5), ("b", 7.0)], &rows);
            let grid = ThresholdGrid::evenly_spaced(n).unwrap();
            let curve = sweep(&set, &grid).unwrap();
            for p in &curve.points {
                let t = p.thresholds[0];
                let below = rows.iter().filter(|r| r.1[0].1 < t).count();
                prop_assert_eq!(p.stage_counts[1], below);
                prop_assert_eq!(p.forwarded_fraction(), below as f64 / rows.len() as f64);
            }
        }

        #[test]
        fn cost_identity(rows in pair_rows(), t in 0.0f64..=1.0) {
            let set = aligned(&[("l", 0.39), ("b", 37.8)], &rows);
            let p = evaluate(&set, &config(&set, &[t])).unwrap();
            let per_row: f64 = set.rows().iter().map(|r| {
                if r.predictions[0].confidence.get() >= t { 0.39 } else { 0.39 + 37.8 }
            }).sum::<f64>() / rows.len() as f64;
            prop_assert!((p.expected_macs - per_row).abs() <= 1e-9 * per_row);
            let s: f64 = p.stage_fractions.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
