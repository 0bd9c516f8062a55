use crate::{Error, Result};

/// Rows are the actual class, columns the predicted one; index 0 is stable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    pub n00: u64,
    pub n01: u64,
    pub n10: u64,
    pub n11: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.n00 + self.n01 + self.n10 + self.n11
    }
}

/// Counts outcomes; `true` means stable in both slices.
pub fn confusion(actual_stable: &[bool], predicted_stable: &[bool]) -> Result<ConfusionMatrix> {
    if actual_stable.len() != predicted_stable.len() {
        return Err(Error::Shape(format!(
            "{} labels vs {} predictions",
            actual_stable.len(),
            predicted_stable.len()
        )));
    }
    let mut cm = ConfusionMatrix::default();
    for (&a, &p) in actual_stable.iter().zip(predicted_stable) {
        match (a, p) {
            (true, true) => cm.n00 += 1,
            (true, false) => cm.n01 += 1,
            (false, true) => cm.n10 += 1,
            (false, false) => cm.n11 += 1,
        }
    }
    Ok(cm)
}

/// Classification metrics. A metric whose denominator is zero is `None`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    /// Unstable samples classified as stable, over all unstable samples.
    pub mdr: Option<f64>,
    /// Stable samples classified as unstable, over all stable samples.
    pub fpr: Option<f64>,
    pub g_mean: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::InvalidArgument("metrics of an empty confusion matrix".into()));
    }
    let stable_recall = ratio(cm.n00, cm.n00 + cm.n01);
    let unstable_recall = ratio(cm.n11, cm.n10 + cm.n11);
    Ok(Metrics {
        accuracy: (cm.n00 + cm.n11) as f64 / total as f64,
        mdr: ratio(cm.n10, cm.n10 + cm.n11),
        fpr: ratio(cm.n01, cm.n00 + cm.n01),
        g_mean: stable_recall.zip(unstable_recall).map(|(a, b)| (a * b).sqrt()),
    })
}

/// Population mean squared and absolute errors.
pub fn regression_metrics(targets: &[f64], predictions: &[f64]) -> Result<(f64, f64)> {
    if targets.is_empty() || targets.len() != predictions.len() {
        return Err(Error::InvalidArgument("regression metrics need equal nonempty inputs".into()));
    }
    let n = targets.len() as f64;
    let (mut se, mut ae) = (0.0, 0.0);
    for (t, p) in targets.iter().zip(predictions) {
        let r = p - t;
        se += r * r;
        ae += r.abs();
    }
    Ok((se / n, ae / n))
}
