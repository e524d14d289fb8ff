//! Confidence calibration bins and the mistake decomposition of a
//! (little, big) pair.
//!
//! Little-model confidence stands in for sample hardness. Each little-model
//! mistake is either *correctable* (the big model gets it right) or
//! *non-correctable* (both are wrong); the decomposition counts both per
//! confidence bin.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::record::{AlignedRecordSet, RecordSet};

/// Default number of uniform-width confidence bins.
pub const DEFAULT_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceBinStats {
    pub bin_lower: f64,
    pub bin_upper: f64,
    pub n_samples: usize,
    pub n_correct: usize,
    /// `n_correct / n_samples`, or 0 for an empty bin.
    pub accuracy: f64,
}

#[inline]
fn bin_lower(i: usize, n_bins: usize) -> f64 {
    i as f64 / n_bins as f64
}

/// Index of the bin holding `c`. Bins are `[lo, hi)` except the last,
/// which is closed. The result is consistent with [`bin_lower`], so a value
/// sitting exactly on a reported bound lands in the bin that starts there.
pub(crate) fn bin_index(c: f64, n_bins: usize) -> usize {
    let mut i = libm::floor(c * n_bins as f64) as usize;
    i = i.min(n_bins - 1);
    while i > 0 && c < bin_lower(i, n_bins) {
        i -= 1;
    }
    while i + 1 < n_bins && c >= bin_lower(i + 1, n_bins) {
        i += 1;
    }
    i
}

fn empty_bins(n_bins: usize) -> Vec<ConfidenceBinStats> {
    (0..n_bins)
        .map(|i| ConfidenceBinStats {
            bin_lower: bin_lower(i, n_bins),
            bin_upper: bin_lower(i + 1, n_bins),
            n_samples: 0,
            n_correct: 0,
            accuracy: 0.0,
        })
        .collect()
}

/// Bins `(confidence, correct)` pairs into `n_bins` uniform bins over `[0, 1]`.
pub fn calibration_bins<I>(samples: I, n_bins: usize) -> Result<Vec<ConfidenceBinStats>>
where
    I: IntoIterator<Item = (f64, bool)>,
{
    if n_bins == 0 {
        return Err(Error::ZeroBins);
    }
    let mut bins = empty_bins(n_bins);
    let mut seen = 0usize;
    for (c, correct) in samples {
        let b = &mut bins[bin_index(c, n_bins)];
        b.n_samples += 1;
        b.n_correct += usize::from(correct);
        seen += 1;
    }
    if seen == 0 {
        return Err(Error::EmptyRecords);
    }
    for b in &mut bins {
        if b.n_samples > 0 {
            b.accuracy = b.n_correct as f64 / b.n_samples as f64;
        }
    }
    Ok(bins)
}

/// Accuracy of a single model's records per confidence bin.
pub fn bin_by_confidence(records: &RecordSet, n_bins: usize) -> Result<Vec<ConfidenceBinStats>> {
    calibration_bins(
        records
            .records()
            .iter()
            .map(|r| (r.confidence.get(), r.is_correct())),
        n_bins,
    )
}

/// Same as [`bin_by_confidence`] for one model column of an aligned set.
pub fn bin_aligned_model(
    aligned: &AlignedRecordSet,
    model: usize,
    n_bins: usize,
) -> Result<Vec<ConfidenceBinStats>> {
    calibration_bins(
        aligned
            .rows()
            .iter()
            .map(|r| (r.predictions[model].confidence.get(), r.is_correct(model))),
        n_bins,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct MistakeBin {
    pub bin_lower: f64,
    pub bin_upper: f64,
    /// Little wrong, big right.
    pub correctable: usize,
    /// Little wrong, big wrong.
    pub non_correctable: usize,
}

impl MistakeBin {
    pub fn mistakes(&self) -> usize {
        self.correctable + self.non_correctable
    }
}

/// Little-model mistakes split by whether the big model fixes them,
/// binned by little-model confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct MistakeDecomposition {
    pub bins: Vec<MistakeBin>,
    /// Little-model confidences of the correctable mistakes, ascending.
    correctable_confidences: Vec<f64>,
    total_mistakes: usize,
}

impl MistakeDecomposition {
    /// True when the little model made no mistakes at all.
    pub fn is_empty(&self) -> bool {
        self.total_mistakes == 0
    }

    pub fn total_mistakes(&self) -> usize {
        self.total_mistakes
    }

    pub fn correctable(&self) -> usize {
        self.correctable_confidences.len()
    }

    pub fn non_correctable(&self) -> usize {
        self.total_mistakes - self.correctable()
    }

    pub fn correctable_confidences(&self) -> &[f64] {
        &self.correctable_confidences
    }

    pub fn mean_correctable_confidence(&self) -> Option<f64> {
        let n = self.correctable_confidences.len();
        (n > 0).then(|| self.correctable_confidences.iter().sum::<f64>() / n as f64)
    }

    /// Smallest observed correctable-mistake confidence `c` such that at
    /// least a fraction `q` of correctable mistakes have confidence `<= c`.
    /// `None` when there are no correctable mistakes.
    pub fn correctable_quantile(&self, q: f64) -> Result<Option<f64>> {
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::QuantileOutOfRange(q));
        }
        let xs = &self.correctable_confidences;
        let n = xs.len();
        if n == 0 {
            return Ok(None);
        }
        // Smallest k in 1..=n with k / n >= q.
        let mut k = (libm::ceil(q * n as f64) as usize).clamp(1, n);
        while k > 1 && (k - 1) as f64 / n as f64 >= q {
            k -= 1;
        }
        while k < n && (k as f64 / n as f64) < q {
            k += 1;
        }
        Ok(Some(xs[k - 1]))
    }
}

/// Decomposes the little model's mistakes on a two-model aligned set.
/// Model 0 is the little model and model 1 the big one.
pub fn decompose_mistakes(
    aligned: &AlignedRecordSet,
    n_bins: usize,
) -> Result<MistakeDecomposition> {
    if aligned.models().len() != 2 {
        return Err(Error::ModelCount {
            expected: 2,
            found: aligned.models().len(),
        });
    }
    if n_bins == 0 {
        return Err(Error::ZeroBins);
    }
    if aligned.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let mut bins: Vec<MistakeBin> = (0..n_bins)
        .map(|i| MistakeBin {
            bin_lower: bin_lower(i, n_bins),
            bin_upper: bin_lower(i + 1, n_bins),
            correctable: 0,
            non_correctable: 0,
        })
        .collect();
    let mut correctable_confidences = Vec::new();
    let mut total_mistakes = 0;
    for row in aligned.rows().iter().filter(|r| !r.is_correct(0)) {
        let c = row.predictions[0].confidence.get();
        let bin = &mut bins[bin_index(c, n_bins)];
        total_mistakes += 1;
        if row.is_correct(1) {
            bin.correctable += 1;
            correctable_confidences.push(c);
        } else {
            bin.non_correctable += 1;
        }
    }
    correctable_confidences.sort_by(f64::total_cmp);
    Ok(MistakeDecomposition {
        bins,
        correctable_confidences,
        total_mistakes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::{align, ModelProfile, PredictionRecord};
    use alloc::format;
    use alloc::vec;
    use proptest::prelude::*;

    fn record_set(name: &str, rows: &[(f64, bool)]) -> RecordSet {
        let recs = rows
            .iter()
            .enumerate()
            .map(|(i, &(c, ok))| {
                PredictionRecord::new(format!("s{i}"), u32::from(!ok), c, 0).unwrap()
            })
            .collect();
        RecordSet::new(ModelProfile::new(name, 1.0, 0.0, 224).unwrap(), "d", recs).unwrap()
    }

    #[test]
    fn all_confident_and_correct() {
        let rs = record_set("m", &[(1.0, true); 4]);
        let bins = bin_by_confidence(&rs, 2).unwrap();
        assert_eq!(bins[0].n_samples, 0);
        assert_eq!(bins[1].n_samples, 4);
        assert_eq!(bins[1].accuracy, 1.0);
    }

    #[test]
    fn two_bins_hand_enumerated() {
        let rs = record_set("m", &[(0.1, false), (0.3, false), (0.7, true), (0.9, true)]);
        let bins = bin_by_confidence(&rs, 2).unwrap();
        assert_eq!((bins[0].n_samples, bins[0].accuracy), (2, 0.0));
        assert_eq!((bins[1].n_samples, bins[1].accuracy), (2, 1.0));
        assert_eq!((bins[0].bin_lower, bins[0].bin_upper), (0.0, 0.5));
        assert_eq!((bins[1].bin_lower, bins[1].bin_upper), (0.5, 1.0));
    }

    #[test]
    fn bin_edges_are_half_open() {
        assert_eq!(bin_index(0.5, 2), 1);
        assert_eq!(bin_index(0.0, 10), 0);
        assert_eq!(bin_index(1.0, 10), 9);
        for i in 0..10 {
            let lo = bin_lower(i, 10);
            assert_eq!(bin_index(lo, 10), i, "lower edge {lo}");
        }
        assert_eq!(bin_index(0.3, 10), 3);
        assert_eq!(bin_index(0.7, 10), 7);
    }

    #[test]
    fn binning_errors() {
        let rs = record_set("m", &[]);
        assert_eq!(bin_by_confidence(&rs, 10), Err(Error::EmptyRecords));
        let rs = record_set("m", &[(0.5, true)]);
        assert_eq!(bin_by_confidence(&rs, 0), Err(Error::ZeroBins));
    }

    fn pair(little: &[(f64, bool)], big: &[bool]) -> AlignedRecordSet {
        let l = record_set("little", little);
        let b = record_set("big", &big.iter().map(|&ok| (0.9, ok)).collect::<Vec<_>>());
        align(&[l, b]).unwrap()
    }

    #[test]
    fn all_mistakes_correctable() {
        let aligned = pair(
            &[(0.2, false), (0.6, false), (0.95, false)],
            &[true, true, true],
        );
        let d = decompose_mistakes(&aligned, 10).unwrap();
        assert_eq!(d.total_mistakes(), 3);
        assert_eq!(d.correctable(), 3);
        assert_eq!(d.non_correctable(), 0);
        assert!(d.bins.iter().all(|b| b.non_correctable == 0));
    }

    #[test]
    fn no_little_mistakes_is_flagged_empty() {
        let aligned = pair(&[(0.2, true), (0.6, true)], &[false, true]);
        let d = decompose_mistakes(&aligned, 10).unwrap();
        assert!(d.is_empty());
        assert_eq!(d.mean_correctable_confidence(), None);
        assert_eq!(d.correctable_quantile(0.9).unwrap(), None);
    }

    #[test]
    fn decomposition_needs_a_pair() {
        let a = record_set("a", &[(0.2, true)]);
        let b = record_set("b", &[(0.2, true)]);
        let c = record_set("c", &[(0.2, true)]);
        let aligned = align(&[a, b, c]).unwrap();
        assert_eq!(
            decompose_mistakes(&aligned, 10),
            Err(Error::ModelCount {
                expected: 2,
                found: 3
            })
        );
    }

    #[test]
    fn quantile_is_lower_order_statistic() {
        // Ten correctable mistakes at 0.05, 0.15, ..., 0.95.
        let little: Vec<_> = (0..10).map(|i| (0.05 + 0.1 * i as f64, false)).collect();
        let aligned = pair(&little, &[true; 10]);
        let d = decompose_mistakes(&aligned, 10).unwrap();
        let xs = d.correctable_confidences().to_vec();
        assert_eq!(d.correctable_quantile(0.9).unwrap(), Some(xs[8]));
        assert_eq!(d.correctable_quantile(0.91).unwrap(), Some(xs[9]));
        assert_eq!(d.correctable_quantile(1.0).unwrap(), Some(xs[9]));
        assert_eq!(d.correctable_quantile(0.0).unwrap(), Some(xs[0]));
        assert_eq!(d.correctable_quantile(0.1).unwrap(), Some(xs[0]));
        assert!(d.correctable_quantile(1.5).is_err());
        let mean = d.mean_correctable_confidence().unwrap();
        assert!((mean - 0.5).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn bin_totals_match_overall_accuracy(
            rows in prop::collection::vec((0.0f64..=1.0, any::<bool>()), 1..300),
            n_bins in 1usize..25,
        ) {
            let rs = record_set("m", &rows);
            let bins = bin_by_confidence(&rs, n_bins).unwrap();
            let n: usize = bins.iter().map(|b| b.n_samples).sum();
            let correct: usize = bins.iter().map(|b| b.n_correct).sum();
            prop_assert_eq!(n, rows.len());
            prop_assert_eq!(correct, rs.correct_count());
            for b in &bins {
                if b.n_samples > 0 {
                    prop_assert!(b.bin_lower <= b.bin_upper);
                }
            }
            prop_assert_eq!(bins[0].bin_lower, 0.0);
            prop_assert_eq!(bins[n_bins - 1].bin_upper, 1.0);
        }

        #[test]
        fn decomposition_conserves_mistakes(
            rows in prop::collection::vec((0.0f64..=1.0, any::<bool>(), any::<bool>()), 1..300),
            n_bins in 1usize..25,
        ) {
            let little: Vec<_> = rows.iter().map(|&(c, l, _)| (c, l)).collect();
            let big: Vec<_> = rows.iter().map(|&(_, _, b)| b).collect();
            let aligned = pair(&little, &big);
            let d = decompose_mistakes(&aligned, n_bins).unwrap();
            let little_errors = rows.iter().filter(|r| !r.1).count();
            let binned: usize = d.bins.iter().map(MistakeBin::mistakes).sum();
            prop_assert_eq!(binned, little_errors);
            prop_assert_eq!(d.correctable() + d.non_correctable(), little_errors);
            // Per-bin conservation against a direct recount.
            for (i, b) in d.bins.iter().enumerate() {
                let direct = rows.iter().filter(|r| !r.1 && bin_index(r.0, n_bins) == i).count();
                prop_assert_eq!(b.mistakes(), direct);
            }
        }

        #[test]
        fn quantile_monotone_in_q(
            confs in prop::collection::vec(0.0f64..=1.0, 1..100),
            qs in prop::collection::vec(0.0f64..=1.0, 2..10),
        ) {
            let little: Vec<_> = confs.iter().map(|&c| (c, false)).collect();
            let aligned = pair(&little, &vec![true; confs.len()]);
            let d = decompose_mistakes(&aligned, 10).unwrap();
            let mut qs = qs;
            qs.sort_by(f64::total_cmp);
            let vals: Vec<f64> = qs.iter().map(|&q| d.correctable_quantile(q).unwrap().unwrap()).collect();
            prop_assert!(vals.windows(2).all(|w| w[0] <= w[1]));
            let max = confs.iter().copied().fold(f64::MIN, f64::max);
            prop_assert_eq!(d.correctable_quantile(1.0).unwrap(), Some(max));
        }
    }
}
