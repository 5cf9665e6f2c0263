//! Pixel-wise segmentation metrics: accuracy, binary cross-entropy, MSE,
//! Jaccard (IoU) and Dice.
//!
//! Label 1 is the positive (tumor) class. Jaccard and Dice score two empty
//! masks as 1.0.

use serde::Serialize;
use thiserror::Error;

use crate::image::{threshold, BinaryMask, ProbabilityMap};

/// Probability clamp applied before taking logarithms.
pub const BCE_EPSILON: f64 = 1e-7;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("dimension mismatch: prediction {pred:?} vs truth {truth:?}")]
    DimensionMismatch {
        pred: (usize, usize),
        truth: (usize, usize),
    },
    #[error("metric over an empty input")]
    EmptyInput,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        Self { tp, tn, fp, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// Prediction and truth swapped.
    pub fn swapped(&self) -> Self {
        Self {
            fp: self.fn_,
            fn_: self.fp,
            ..*self
        }
    }

    fn add(self, other: &Self) -> Self {
        Self {
            tp: self.tp + other.tp,
            tn: self.tn + other.tn,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
        }
    }
}

fn check_dims(pred: (usize, usize), truth: (usize, usize)) -> Result<(), MetricsError> {
    if pred != truth {
        return Err(MetricsError::DimensionMismatch { pred, truth });
    }
    Ok(())
}

pub fn confusion(pred: &BinaryMask, truth: &BinaryMask) -> Result<ConfusionCounts, MetricsError> {
    check_dims(pred.dimensions(), truth.dimensions())?;
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.labels().iter().zip(truth.labels()) {
        match (p, t) {
            (1, 1) => c.tp += 1,
            (0, 0) => c.tn += 1,
            (1, 0) => c.fp += 1,
            _ => c.fn_ += 1,
        }
    }
    Ok(c)
}

pub fn accuracy(c: &ConfusionCounts) -> Result<f64, MetricsError> {
    match c.total() {
        0 => Err(MetricsError::EmptyInput),
        n => Ok((c.tp + c.tn) as f64 / n as f64),
    }
}

pub fn jaccard(c: &ConfusionCounts) -> f64 {
    match c.tp + c.fp + c.fn_ {
        0 => 1.0,
        union => c.tp as f64 / union as f64,
    }
}

pub fn dice(c: &ConfusionCounts) -> f64 {
    match 2 * c.tp + c.fp + c.fn_ {
        0 => 1.0,
        denom => (2 * c.tp) as f64 / denom as f64,
    }
}

fn sum_bce(pred: &ProbabilityMap, truth: &BinaryMask) -> f64 {
    pred.values()
        .iter()
        .zip(truth.labels())
        .map(|(&p, &y)| {
            let p = p.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
            let y = f64::from(y);
            y * p.ln() + (1.0 - y) * (1.0 - p).ln()
        })
        .sum::<f64>()
}

fn sum_squared_error(pred: &ProbabilityMap, truth: &BinaryMask) -> f64 {
    pred.values()
        .iter()
        .zip(truth.labels())
        .map(|(&p, &y)| (f64::from(y) - p).powi(2))
        .sum::<f64>()
}

/// Mean binary cross-entropy, natural log, predictions clamped to `[eps, 1 - eps]`.
pub fn bce_loss(pred: &ProbabilityMap, truth: &BinaryMask) -> Result<f64, MetricsError> {
    check_dims(pred.dimensions(), truth.dimensions())?;
    if pred.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    Ok(-(sum_bce(pred, truth) / pred.len() as f64))
}

pub fn mse(pred: &ProbabilityMap, truth: &BinaryMask) -> Result<f64, MetricsError> {
    check_dims(pred.dimensions(), truth.dimensions())?;
    if pred.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    Ok(sum_squared_error(pred, truth) / pred.len() as f64)
}

/// Scores for one image.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub id: String,
    #[serde(flatten)]
    pub counts: ConfusionCounts,
    pub accuracy: f64,
    pub loss: f64,
    pub mse: f64,
    pub jaccard: f64,
    pub dice: f64,
}

impl MetricsReport {
    pub fn pixels(&self) -> u64 {
        self.counts.total()
    }

    pub const CSV_HEADER: &'static str = "id,tp,tn,fp,fn,accuracy,loss,mse,jaccard,dice";

    pub fn csv_row(&self) -> String {
        let c = &self.counts;
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.id, c.tp, c.tn, c.fp, c.fn_, self.accuracy, self.loss, self.mse, self.jaccard, self.dice
        )
    }
}

/// Scores a probability map against ground truth; confusion-based metrics use
/// the map thresholded at `t`.
pub fn evaluate(
    id: impl Into<String>,
    pred: &ProbabilityMap,
    truth: &BinaryMask,
    t: f64,
) -> Result<MetricsReport, MetricsError> {
    let counts = confusion(&threshold(pred, t), truth)?;
    Ok(MetricsReport {
        id: id.into(),
        accuracy: accuracy(&counts)?,
        loss: bce_loss(pred, truth)?,
        mse: mse(pred, truth)?,
        jaccard: jaccard(&counts),
        dice: dice(&counts),
        counts,
    })
}

fn sorted(reports: &[MetricsReport]) -> Vec<&MetricsReport> {
    let mut refs: Vec<_> = reports.iter().collect();
    refs.sort_by(|a, b| a.id.cmp(&b.id));
    refs
}

/// Unweighted per-image means with summed counts. Summation runs over the
/// reports sorted by id, so input order does not matter.
pub fn aggregate(reports: &[MetricsReport]) -> Result<MetricsReport, MetricsError> {
    if reports.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let refs = sorted(reports);
    let n = refs.len() as f64;
    let mean = |f: fn(&MetricsReport) -> f64| refs.iter().map(|r| f(r)).sum::<f64>() / n;
    Ok(MetricsReport {
        id: "mean".into(),
        counts: refs
            .iter()
            .fold(ConfusionCounts::default(), |acc, r| acc.add(&r.counts)),
        accuracy: mean(|r| r.accuracy),
        loss: mean(|r| r.loss),
        mse: mean(|r| r.mse),
        jaccard: mean(|r| r.jaccard),
        dice: mean(|r| r.dice),
    })
}

/// Dataset-level figures: per-image means (`mean_*`) next to scores of the
/// summed confusion counts and pixel-weighted loss/MSE (`pooled_*`).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AggregateReport {
    pub images: usize,
    #[serde(flatten)]
    pub counts: ConfusionCounts,
    pub mean_accuracy: f64,
    pub mean_loss: f64,
    pub mean_mse: f64,
    pub mean_jaccard: f64,
    pub mean_dice: f64,
    pub pooled_accuracy: f64,
    pub pooled_loss: f64,
    pub pooled_mse: f64,
    pub pooled_jaccard: f64,
    pub pooled_dice: f64,
}

pub fn summarize(reports: &[MetricsReport]) -> Result<AggregateReport, MetricsError> {
    let mean = aggregate(reports)?;
    let refs = sorted(reports);
    let pixels = mean.counts.total() as f64;
    let weighted =
        |f: fn(&MetricsReport) -> f64| refs.iter().map(|r| f(r) * r.pixels() as f64).sum::<f64>() / pixels;
    Ok(AggregateReport {
        images: reports.len(),
        counts: mean.counts,
        mean_accuracy: mean.accuracy,
        mean_loss: mean.loss,
        mean_mse: mean.mse,
        mean_jaccard: mean.jaccard,
        mean_dice: mean.dice,
        pooled_accuracy: accuracy(&mean.counts)?,
        pooled_loss: weighted(|r| r.loss),
        pooled_mse: weighted(|r| r.mse),
        pooled_jaccard: jaccard(&mean.counts),
        pooled_dice: dice(&mean.counts),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask(data: &[u8]) -> BinaryMask {
        BinaryMask::new(data.len(), 1, data.to_vec()).unwrap()
    }

    fn probs(data: &[f64]) -> ProbabilityMap {
        ProbabilityMap::new(data.len(), 1, data.to_vec()).unwrap()
    }

    #[test]
    fn confusion_examples() {
        let ones = mask(&[1; 6]);
        assert_eq!(confusion(&ones, &ones).unwrap(), ConfusionCounts::new(6, 0, 0, 0));
        assert_eq!(
            confusion(&ones, &mask(&[0; 6])).unwrap(),
            ConfusionCounts::new(0, 0, 6, 0)
        );
        assert_eq!(
            confusion(&mask(&[1, 1, 0, 0]), &mask(&[1, 0, 1, 0])).unwrap(),
            ConfusionCounts::new(1, 1, 1, 1)
        );
        let tall = BinaryMask::new(1, 4, vec![0; 4]).unwrap();
        assert!(matches!(
            confusion(&mask(&[0; 4]), &tall),
            Err(MetricsError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&ConfusionCounts::new(3, 5, 0, 0)).unwrap(), 1.0);
        assert_eq!(accuracy(&ConfusionCounts::new(1, 1, 1, 1)).unwrap(), 0.5);
        assert_eq!(accuracy(&ConfusionCounts::new(0, 0, 2, 2)).unwrap(), 0.0);
        assert_eq!(
            accuracy(&ConfusionCounts::default()),
            Err(MetricsError::EmptyInput)
        );
    }

    #[test]
    fn overlap_examples() {
        let c = ConfusionCounts::new(1, 1, 1, 1);
        assert!((jaccard(&c) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(dice(&c), 0.5);
        assert_eq!(jaccard(&ConfusionCounts::new(4, 2, 0, 0)), 1.0);
        assert_eq!(dice(&ConfusionCounts::new(4, 2, 0, 0)), 1.0);
        assert_eq!(jaccard(&ConfusionCounts::new(0, 2, 3, 3)), 0.0);
        assert_eq!(jaccard(&ConfusionCounts::new(0, 9, 0, 0)), 1.0);
        assert_eq!(dice(&ConfusionCounts::new(0, 9, 0, 0)), 1.0);
    }

    #[test]
    fn bce_examples() {
        let truth = mask(&[1, 0, 1, 1]);
        let perfect = bce_loss(&ProbabilityMap::from(&truth), &truth).unwrap();
        assert!((perfect - (-(1.0 - BCE_EPSILON).ln())).abs() < 1e-15);
        assert!(perfect <= 2e-7);

        let half = bce_loss(&probs(&[0.5; 4]), &truth).unwrap();
        assert!((half - std::f64::consts::LN_2).abs() < 1e-12);

        let single = bce_loss(&probs(&[0.9]), &mask(&[1])).unwrap();
        assert!((single - 0.105_360_515_657_826_3).abs() < 1e-12);
    }

    #[test]
    fn mse_examples() {
        let truth = mask(&[1, 0, 1, 1]);
        assert_eq!(mse(&ProbabilityMap::from(&truth), &truth).unwrap(), 0.0);
        assert!((mse(&probs(&[0.7]), &mask(&[1])).unwrap() - 0.09).abs() < 1e-15);
        let pred = mask(&[1, 1, 0, 1]);
        let c = confusion(&pred, &truth).unwrap();
        assert_eq!(
            mse(&ProbabilityMap::from(&pred), &truth).unwrap(),
            (c.fp + c.fn_) as f64 / 4.0
        );
    }

    #[test]
    fn aggregate_means_and_pools() {
        let truth = mask(&[1, 1, 0, 0]);
        let a = evaluate("a", &ProbabilityMap::from(&truth), &truth, 0.5).unwrap();
        assert_eq!(aggregate(std::slice::from_ref(&a)).unwrap().dice, a.dice);

        let mut b = a.clone();
        b.id = "b".into();
        b.dice = 0.9;
        assert!((aggregate(&[a.clone(), b]).unwrap().dice - 0.95).abs() < 1e-15);

        // 1 of 4 correct and 100 of 100 correct: means differ from pooling.
        let small = MetricsReport {
            id: "s".into(),
            counts: ConfusionCounts::new(1, 0, 3, 0),
            accuracy: 0.25,
            loss: 0.0,
            mse: 0.75,
            jaccard: 0.25,
            dice: 0.4,
        };
        let big = MetricsReport {
            id: "t".into(),
            counts: ConfusionCounts::new(50, 50, 0, 0),
            accuracy: 1.0,
            loss: 0.0,
            mse: 0.0,
            jaccard: 1.0,
            dice: 1.0,
        };
        let s = summarize(&[big, small]).unwrap();
        assert_eq!(s.mean_accuracy, 0.625);
        assert!((s.pooled_accuracy - 101.0 / 104.0).abs() < 1e-15);
        assert!((s.pooled_mse - 3.0 / 104.0).abs() < 1e-15);
        assert_eq!(s.counts, ConfusionCounts::new(51, 50, 3, 0));
        assert_eq!(aggregate(&[]), Err(MetricsError::EmptyInput));
    }

    #[test]
    fn report_serializes_flat_counts() {
        let truth = mask(&[1, 0, 1, 0]);
        let pred = mask(&[1, 1, 0, 0]);
        let r = evaluate("x", &ProbabilityMap::from(&pred), &truth, 0.5).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["fn"], 1);
        assert_eq!(v["tp"], 1);
        assert_eq!(
            r.csv_row().split(',').count(),
            MetricsReport::CSV_HEADER.split(',').count()
        );
    }

    fn arb_counts() -> impl Strategy<Value = ConfusionCounts> {
        (0u64..10_000, 0u64..10_000, 0u64..10_000, 0u64..10_000)
            .prop_map(|(a, b, c, d)| ConfusionCounts::new(a, b, c, d))
    }

    proptest! {
        #[test]
        fn dice_jaccard_relations(c in arb_counts()) {
            let (j, d) = (jaccard(&c), dice(&c));
            prop_assert!(j <= d + 1e-15 && d <= 1.0);
            if c.tp + c.fp + c.fn_ > 0 {
                prop_assert!((d - 2.0 * j / (1.0 + j)).abs() <= 1e-12);
            }
            prop_assert_eq!(jaccard(&c.swapped()), j);
            prop_assert_eq!(dice(&c.swapped()), d);
        }

        #[test]
        fn binary_mse_complements_accuracy(bits in proptest::collection::vec((0u8..2, 0u8..2), 1..200)) {
            let (p, t): (Vec<u8>, Vec<u8>) = bits.into_iter().unzip();
            let (p, t) = (mask(&p), mask(&t));
            let m = mse(&ProbabilityMap::from(&p), &t).unwrap();
            let acc = accuracy(&confusion(&p, &t).unwrap()).unwrap();
            prop_assert!((m - (1.0 - acc)).abs() < 1e-12);
        }

        #[test]
        fn bce_non_negative(vals in proptest::collection::vec((0.0f64..=1.0, 0u8..2), 1..100)) {
            let (p, t): (Vec<f64>, Vec<u8>) = vals.into_iter().unzip();
            prop_assert!(bce_loss(&probs(&p), &mask(&t)).unwrap() >= 0.0);
        }
    }
}
