use serde::{Deserialize, Serialize};

/// Confusion counts with `malicious` as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        ConfusionCounts { tp, tn, fp, fn_ }
    }

    pub fn from_pairs(truth: &[bool], predicted: &[bool]) -> Self {
        assert_eq!(truth.len(), predicted.len());
        let mut c = ConfusionCounts::default();
        for (&t, &p) in truth.iter().zip(predicted) {
            match (t, p) {
                (true, true) => c.tp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fp += 1,
                (true, false) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn metrics(&self) -> Metrics {
        Metrics::from_counts(self)
    }
}

/// Accuracy, precision and recall, plus FP/FN as fractions of all samples.
///
/// `precision`/`recall` are `None` when their denominator is zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub fp_rate: f64,
    pub fn_rate: f64,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl Metrics {
    pub fn from_counts(c: &ConfusionCounts) -> Self {
        let total = c.total();
        Metrics {
            accuracy: ratio(c.tp + c.tn, total).unwrap_or(f64::NAN),
            precision: ratio(c.tp, c.tp + c.fp),
            recall: ratio(c.tp, c.tp + c.fn_),
            fp_rate: ratio(c.fp, total).unwrap_or(f64::NAN),
            fn_rate: ratio(c.fn_, total).unwrap_or(f64::NAN),
        }
    }

    pub fn precision_or_nan(&self) -> f64 {
        self.precision.unwrap_or(f64::NAN)
    }

    pub fn recall_or_nan(&self) -> f64 {
        self.recall.unwrap_or(f64::NAN)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_precision() {
        let m = ConfusionCounts::new(10, 0, 10, 0).metrics();
        assert_eq!(m.precision, Some(0.5));
        assert_eq!(m.recall, Some(1.0));
        assert_eq!(m.accuracy, 0.5);
        assert_eq!(m.fp_rate, 0.5);
        assert_eq!(m.fn_rate, 0.0);
    }

    #[test]
    fn perfect() {
        let m = ConfusionCounts::new(7, 3, 0, 0).metrics();
        assert_eq!((m.accuracy, m.precision, m.recall), (1.0, Some(1.0), Some(1.0)));
    }

    #[test]
    fn undefined_precision() {
        let m = ConfusionCounts::new(0, 5, 0, 2).metrics();
        assert_eq!(m.precision, None);
        assert!(m.precision_or_nan().is_nan());
        assert_eq!(m.recall, Some(0.0));
        let json = serde_json::to_string(&m).unwrap();
        assert!(json.contains("\"precision\":null"));
    }

    #[test]
    fn from_pairs_counts() {
        let c = ConfusionCounts::from_pairs(&[true, true, false, false, true], &[true, false, true, false, true]);
        assert_eq!(c, ConfusionCounts::new(2, 1, 1, 1));
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(json, r#"{"tp":2,"tn":1,"fp":1,"fn":1}"#);
    }
}
