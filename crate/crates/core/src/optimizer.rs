//! Threshold selection, Pareto fronts and cross-dataset transfer.

use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::engine::{evaluate, sweep, CascadeConfig, CascadePoint, ThresholdGrid, TradeoffCurve};
use crate::error::{Error, Result};
use crate::record::{AlignedRecordSet, ModelProfile};

/// Accuracy target: the big model's accuracy on the tuning set minus an
/// allowed loss.
///
/// `tolerance` is the allowed accuracy loss as a fraction (0.001 is 0.1
/// points). Zero means no loss; a negative value demands a gain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionCriterion {
    pub baseline_correct: usize,
    pub baseline_total: usize,
    pub tolerance: f64,
}

impl SelectionCriterion {
    pub fn new(baseline_correct: usize, baseline_total: usize, tolerance: f64) -> Result<Self> {
        if !tolerance.is_finite() {
            return Err(Error::NonFiniteTolerance(tolerance));
        }
        if baseline_total == 0 {
            return Err(Error::EmptyRecords);
        }
        Ok(Self {
            baseline_correct,
            baseline_total,
            tolerance,
        })
    }

    /// Baseline taken from the last (big) model of `aligned`.
    pub fn from_big(aligned: &AlignedRecordSet, tolerance: f64) -> Result<Self> {
        let big = aligned
            .models()
            .len()
            .checked_sub(1)
            .ok_or(Error::ModelCount {
                expected: 2,
                found: 0,
            })?;
        Self::new(aligned.correct_count(big), aligned.len(), tolerance)
    }

    pub fn baseline_accuracy(&self) -> f64 {
        self.baseline_correct as f64 / self.baseline_total as f64
    }

    /// `correct / total >= baseline - tolerance`, decided on integer counts.
    ///
    /// With zero tolerance the comparison is exact; otherwise only the
    /// tolerance term goes through floating point.
    pub fn is_feasible(&self, correct: usize, total: usize) -> bool {
        if total == 0 {
            return false;
        }
        let deficit = self.baseline_correct as i128 * total as i128
            - correct as i128 * self.baseline_total as i128;
        if self.tolerance == 0.0 {
            return deficit <= 0;
        }
        let scale = total as i128 * self.baseline_total as i128;
        (deficit as f64) <= self.tolerance * scale as f64
    }

    pub fn admits(&self, point: &CascadePoint) -> bool {
        self.is_feasible(point.correct, point.total)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub config: CascadeConfig,
    /// The chosen point on the tuning data. When nothing is feasible this is
    /// the most accurate point instead.
    pub point: CascadePoint,
    /// `1 - expected_macs / big_macs`; negative when the cascade costs more
    /// than the big model alone.
    pub macs_reduction: f64,
    pub feasible: bool,
    /// Feasible without forwarding anything: the first model alone meets the
    /// target and can replace the big one.
    pub little_suffices: bool,
}

pub fn macs_reduction(expected_macs: f64, big: &ModelProfile) -> f64 {
    1.0 - expected_macs / big.macs_per_sample
}

fn most_accurate(points: &[CascadePoint]) -> &CascadePoint {
    points
        .iter()
        .reduce(|best, p| {
            let better = match p.accuracy.total_cmp(&best.accuracy) {
                Ordering::Greater => true,
                Ordering::Equal => p.expected_macs < best.expected_macs,
                Ordering::Less => false,
            };
            if better {
                p
            } else {
                best
            }
        })
        .expect("non-empty")
}

fn select_in_order<'a, I>(
    ordered: I,
    all: &[CascadePoint],
    chain: &[ModelProfile],
    criterion: &SelectionCriterion,
) -> Result<SelectionResult>
where
    I: IntoIterator<Item = &'a CascadePoint>,
{
    if all.is_empty() {
        return Err(Error::EmptyCurve);
    }
    let (point, feasible) = match ordered.into_iter().find(|p| criterion.admits(p)) {
        Some(p) => (p, true),
        None => (most_accurate(all), false),
    };
    let config = CascadeConfig::new(chain.to_vec(), point.thresholds.clone())?;
    Ok(SelectionResult {
        macs_reduction: macs_reduction(point.expected_macs, config.big()),
        little_suffices: feasible && point.stage_counts[0] == point.total,
        feasible,
        point: point.clone(),
        config,
    })
}

/// Picks the lowest-threshold point of `curve` that meets `criterion`.
///
/// Cost is non-decreasing in the threshold, so this is also the cheapest
/// feasible point. Duplicate thresholds resolve to the first in grid order.
pub fn select_threshold(
    curve: &TradeoffCurve,
    criterion: &SelectionCriterion,
) -> Result<SelectionResult> {
    select_in_order(curve.points.iter(), &curve.points, &curve.chain, criterion)
}

/// Selection over a multi-gate grid: cheapest feasible point, ties kept in
/// grid order.
pub fn select_kpass(
    points: &[CascadePoint],
    chain: &[ModelProfile],
    criterion: &SelectionCriterion,
) -> Result<SelectionResult> {
    let mut order: Vec<&CascadePoint> = points.iter().collect();
    order.sort_by(|a, b| a.expected_macs.total_cmp(&b.expected_macs));
    select_in_order(order, points, chain, criterion)
}

/// Sweeps a (little, big) aligned set and selects against the big model's
/// own accuracy.
pub fn optimize_pair(
    aligned: &AlignedRecordSet,
    grid: &ThresholdGrid,
    tolerance: f64,
) -> Result<(TradeoffCurve, SelectionResult)> {
    let curve = sweep(aligned, grid)?;
    let criterion = SelectionCriterion::from_big(aligned, tolerance)?;
    let result = select_threshold(&curve, &criterion)?;
    Ok((curve, result))
}

/// Indices of the non-dominated items, sorted by cost ascending (ties by
/// accuracy descending, then input order).
///
/// An item is dominated when another has accuracy `>=` and cost `<=` with
/// at least one strict. Exact duplicates do not dominate each other.
pub fn pareto_indices(items: &[(f64, f64)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| {
        items[a]
            .1
            .total_cmp(&items[b].1)
            .then(items[b].0.total_cmp(&items[a].0))
            .then(a.cmp(&b))
    });
    let mut front = Vec::new();
    let mut best_cheaper = f64::NEG_INFINITY;
    let mut i = 0;
    while i < order.len() {
        let cost = items[order[i]].1;
        let group_best = items[order[i]].0;
        let mut j = i;
        while j < order.len() && items[order[j]].1 == cost {
            let (acc, _) = items[order[j]];
            if acc == group_best && acc > best_cheaper {
                front.push(order[j]);
            }
            j += 1;
        }
        best_cheaper = best_cheaper.max(group_best);
        i = j;
    }
    front
}

/// Non-dominated subset of `points` under (higher accuracy, lower cost),
/// sorted by expected MACs ascending.
pub fn pareto_front(points: &[CascadePoint]) -> Vec<CascadePoint> {
    let items: Vec<(f64, f64)> = points
        .iter()
        .map(|p| (p.accuracy, p.expected_macs))
        .collect();
    pareto_indices(&items)
        .into_iter()
        .map(|i| points[i].clone())
        .collect()
}

/// A fixed cascade evaluated on one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetOutcome {
    pub dataset_name: String,
    pub point: CascadePoint,
    pub big_accuracy: f64,
    /// Cascade accuracy minus big-model accuracy on the same dataset.
    pub accuracy_delta: f64,
    pub macs_reduction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Dispersion {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single dataset.
    pub std_dev: f64,
}

impl Dispersion {
    fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self::default();
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std_dev = if n > 1 {
            let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
            libm::sqrt(ss / (n - 1) as f64)
        } else {
            0.0
        };
        Self { mean, std_dev }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizationReport {
    pub config: CascadeConfig,
    pub tuning: DatasetOutcome,
    pub targets: Vec<DatasetOutcome>,
    /// Over the tuning set and every target.
    pub accuracy_delta: Dispersion,
    pub macs_reduction: Dispersion,
}

fn outcome(config: &CascadeConfig, aligned: &AlignedRecordSet) -> Result<DatasetOutcome> {
    let names: Vec<&str> = config.chain().iter().map(|m| m.name.as_str()).collect();
    let projected = aligned.select(&names)?;
    let point = evaluate(&projected, config)?;
    let big_correct = projected.correct_count(names.len() - 1);
    // Same denominator, so the delta is one rounding away from exact.
    let big_accuracy = big_correct as f64 / point.total as f64;
    let accuracy_delta = (point.correct as f64 - big_correct as f64) / point.total as f64;
    Ok(DatasetOutcome {
        dataset_name: aligned.dataset_name().into(),
        macs_reduction: macs_reduction(point.expected_macs, config.big()),
        big_accuracy,
        accuracy_delta,
        point,
    })
}

/// Evaluates a fixed config on its tuning set and on each target set.
/// Sets may carry extra models; only the chain is used.
pub fn cross_evaluate(
    config: &CascadeConfig,
    tuning: &AlignedRecordSet,
    targets: &[AlignedRecordSet],
) -> Result<GeneralizationReport> {
    let tuning = outcome(config, tuning)?;
    let targets = targets
        .iter()
        .map(|t| outcome(config, t))
        .collect::<Result<Vec<_>>>()?;
    let all = || core::iter::once(&tuning).chain(targets.iter());
    let deltas: Vec<f64> = all().map(|o| o.accuracy_delta).collect();
    let reductions: Vec<f64> = all().map(|o| o.macs_reduction).collect();
    Ok(GeneralizationReport {
        config: config.clone(),
        accuracy_delta: Dispersion::of(&deltas),
        macs_reduction: Dispersion::of(&reductions),
        tuning,
        targets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::{align, PredictionRecord, RecordSet};
    use alloc::format;
    use alloc::vec;
    use proptest::prelude::*;

    fn profile(name: &str, macs: f64) -> ModelProfile {
        ModelProfile::new(name, macs, 0.0, 224).unwrap()
    }

    fn point(t: f64, correct: usize, total: usize, macs: f64) -> CascadePoint {
        let forwarded = if t == 0.0 { 0 } else { total };
        CascadePoint {
            thresholds: vec![t],
            stage_counts: vec![total - forwarded, forwarded],
            correct,
            total,
            accuracy: correct as f64 / total as f64,
            expected_macs: macs,
            stage_fractions: vec![1.0, 0.0],
        }
    }

    fn curve(points: Vec<CascadePoint>) -> TradeoffCurve {
        TradeoffCurve {
            chain: vec![profile("little", 1.0), profile("big", 10.0)],
            points,
        }
    }

    #[test]
    fn exact_feasibility_on_counts() {
        let c = SelectionCriterion::new(8411, 10000, 0.0).unwrap();
        assert!(c.is_feasible(8411, 10000));
        assert!(c.is_feasible(42055, 50000));
        assert!(!c.is_feasible(42054, 50000));
        let loose = SelectionCriterion::new(8411, 10000, 0.001).unwrap();
        assert!(loose.is_feasible(8401, 10000));
        assert!(!loose.is_feasible(8400, 10000));
        let impossible = SelectionCriterion::new(1, 10, -1.0).unwrap();
        assert!(!impossible.is_feasible(10, 10));
        assert!(SelectionCriterion::new(1, 10, f64::NAN).is_err());
    }

    #[test]
    fn little_better_everywhere_selects_zero() {
        let c = curve(vec![
            point(0.0, 9, 10, 1.0),
            point(0.5, 9, 10, 4.0),
            point(1.0, 9, 10, 11.0),
        ]);
        let crit = SelectionCriterion::new(8, 10, 0.0).unwrap();
        let r = select_threshold(&c, &crit).unwrap();
        assert!(r.feasible);
        assert!(r.little_suffices);
        assert_eq!(r.config.thresholds(), &[0.0]);
        assert_eq!(r.macs_reduction, 0.9);
    }

    #[test]
    fn only_rightmost_feasible() {
        let c = curve(vec![
            point(0.0, 6, 10, 1.0),
            point(0.5, 7, 10, 5.0),
            point(1.0, 8, 10, 11.0),
        ]);
        let crit = SelectionCriterion::new(8, 10, 0.0).unwrap();
        let r = select_threshold(&c, &crit).unwrap();
        assert!(r.feasible);
        assert!(!r.little_suffices);
        assert_eq!(r.point.thresholds, vec![1.0]);
        assert!((r.macs_reduction - (-0.1)).abs() < 1e-12);
        // Exhaustive scan agrees.
        let first = c.points.iter().position(|p| crit.admits(p)).unwrap();
        assert_eq!(first, 2);
    }

    #[test]
    fn infeasible_returns_most_accurate() {
        let c = curve(vec![
            point(0.0, 6, 10, 1.0),
            point(0.5, 7, 10, 5.0),
            point(1.0, 7, 10, 11.0),
        ]);
        let crit = SelectionCriterion::new(8, 10, 0.0).unwrap();
        let r = select_threshold(&c, &crit).unwrap();
        assert!(!r.feasible);
        assert_eq!(r.point.thresholds, vec![0.5]);
        assert!(select_threshold(&curve(vec![]), &crit).is_err());
    }

    #[test]
    fn duplicate_thresholds_first_wins() {
        let mut a = point(0.2, 8, 10, 3.0);
        let mut b = point(0.2, 8, 10, 3.0);
        a.stage_counts = vec![9, 1];
        b.stage_counts = vec![8, 2];
        let c = curve(vec![point(0.0, 5, 10, 1.0), a.clone(), b]);
        let r = select_threshold(&c, &SelectionCriterion::new(8, 10, 0.0).unwrap()).unwrap();
        assert_eq!(r.point, a);
    }

    #[test]
    fn pareto_small_cases() {
        assert_eq!(pareto_indices(&[(0.8, 5.0)]), vec![0]);
        assert_eq!(pareto_indices(&[(0.80, 5.0), (0.81, 4.0)]), vec![1]);
        assert_eq!(pareto_indices(&[(0.8, 5.0), (0.8, 5.0)]), vec![0, 1]);
        assert_eq!(pareto_indices(&[(0.8, 5.0), (0.8, 4.0)]), vec![1]);
        assert_eq!(
            pareto_indices(&[(0.7, 5.0), (0.8, 5.0), (0.9, 9.0)]),
            vec![1, 2]
        );
        assert!(pareto_indices(&[]).is_empty());
    }

    fn dominates(q: (f64, f64), p: (f64, f64)) -> bool {
        q.0 >= p.0 && q.1 <= p.1 && (q.0 > p.0 || q.1 < p.1)
    }

    proptest! {
        #[test]
        fn pareto_matches_quadratic_scan(
            pts in prop::collection::vec((0u32..40, 0u32..40), 1..120)
        ) {
            // Coarse lattice so ties and duplicates actually occur.
            let items: Vec<(f64, f64)> = pts.iter().map(|&(a, c)| (a as f64 / 40.0, c as f64)).collect();
            let got = pareto_indices(&items);
            let mut expect: Vec<usize> = (0..items.len())
                .filter(|&i| !items.iter().any(|&q| dominates(q, items[i])))
                .collect();
            let mut sorted_got = got.clone();
            sorted_got.sort_unstable();
            expect.sort_unstable();
            prop_assert_eq!(sorted_got, expect);
            prop_assert!(got.windows(2).all(|w| items[w[0]].1 <= items[w[1]].1));
        }

        #[test]
        fn selection_matches_exhaustive_scan(
            accs in prop::collection::vec(0usize..=20, 1..30),
            base in 0usize..=20,
            tol in prop::sample::select(vec![0.0, 0.05, -0.05, 0.1]),
        ) {
            let pts: Vec<_> = accs.iter().enumerate()
                .map(|(i, &k)| point(i as f64 / 30.0, k, 20, 1.0 + i as f64)).collect();
            let crit = SelectionCriterion::new(base, 20, tol).unwrap();
            let r = select_threshold(&curve(pts.clone()), &crit).unwrap();
            let oracle = pts.iter().position(|p| {
                p.correct as f64 / 20.0 >= base as f64 / 20.0 - tol - 1e-12
            });
            match oracle {
                Some(i) => { prop_assert!(r.feasible); prop_assert_eq!(&r.point, &pts[i]); }
                None => prop_assert!(!r.feasible),
            }
        }
    }

    fn pair_set(dataset: &str, rows: &[(f64, bool, bool)]) -> AlignedRecordSet {
        let mk = |name: &str, macs: f64, k: usize| {
            let recs = rows
                .iter()
                .enumerate()
                .map(|(i, &(c, l, b))| {
                    let ok = if k == 0 { l } else { b };
                    let conf = if k == 0 { c } else { 0.9 };
                    PredictionRecord::new(format!("s{i}"), u32::from(!ok), conf, 0).unwrap()
                })
                .collect();
            RecordSet::new(profile(name, macs), dataset, recs).unwrap()
        };
        align(&[mk("little", 1.0, 0), mk("big", 10.0, 1)]).unwrap()
    }

    #[test]
    fn cross_evaluate_self_consistent() {
        let tuning = pair_set(
            "a",
            &[
                (0.9, true, true),
                (0.2, false, true),
                (0.6, true, true),
                (0.3, false, false),
            ],
        );
        let target = pair_set(
            "b",
            &[(0.1, false, true), (0.2, false, true), (0.95, true, true)],
        );
        let (_, sel) = optimize_pair(&tuning, &ThresholdGrid::lattice(10).unwrap(), 0.0).unwrap();
        assert!(sel.feasible);
        let report = cross_evaluate(&sel.config, &tuning, &[target]).unwrap();
        assert_eq!(report.tuning.point, sel.point);
        assert_eq!(report.tuning.macs_reduction, sel.macs_reduction);
        assert_eq!(report.targets.len(), 1);
        assert_eq!(report.targets[0].dataset_name, "b");
        // Harder target forwards more, so it saves less.
        let t = &report.targets[0];
        assert!(t.point.forwarded_fraction() > report.tuning.point.forwarded_fraction());
        assert!(t.macs_reduction <= report.tuning.macs_reduction);
        let mean = (report.tuning.macs_reduction + t.macs_reduction) / 2.0;
        assert!((report.macs_reduction.mean - mean).abs() < 1e-12);
    }

    #[test]
    fn cross_evaluate_chain_mismatch() {
        let tuning = pair_set("a", &[(0.9, true, true)]);
        let cfg = CascadeConfig::new(
            vec![profile("little", 1.0), profile("huge", 10.0)],
            vec![0.5],
        )
        .unwrap();
        assert_eq!(
            cross_evaluate(&cfg, &tuning, &[]),
            Err(Error::UnknownModel("huge".into()))
        );
    }

    #[test]
    fn kpass_selection_orders_by_cost() {
        let mut cheap = point(0.9, 8, 10, 2.0);
        cheap.thresholds = vec![0.9, 0.1];
        let mut pricey = point(0.1, 8, 10, 5.0);
        pricey.thresholds = vec![0.1, 0.1];
        let chain = vec![profile("t", 0.5), profile("l", 1.0), profile("b", 10.0)];
        let r = select_kpass(
            &[pricey, cheap.clone()],
            &chain,
            &SelectionCriterion::new(8, 10, 0.0).unwrap(),
        )
        .unwrap();
        assert_eq!(r.point, cheap);
        assert_eq!(r.config.thresholds(), &[0.9, 0.1]);
    }
}
