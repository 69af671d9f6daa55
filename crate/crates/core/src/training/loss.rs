use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Sequence, Targets};
use crate::error::{Error, Result};

/// Training loss. Per-step values are summed over time and averaged over the
/// batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LossKind {
    /// Mean over output dimensions of the squared error.
    Mse,
    /// Softmax cross-entropy on logits.
    CrossEntropy,
    /// Cross-entropy scaled by the weight of the true class.
    WeightedCrossEntropy { class_weights: Vec<f64> },
}

impl LossKind {
    pub fn validate(&self) -> Result<()> {
        if let LossKind::WeightedCrossEntropy { class_weights } = self {
            if class_weights.is_empty() || class_weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
                return Err(Error::Parameter("class weights must be positive and finite".into()));
            }
        }
        Ok(())
    }

    pub fn is_classification(&self) -> bool {
        !matches!(self, LossKind::Mse)
    }

    fn class_weight(&self, label: usize) -> f64 {
        match self {
            LossKind::WeightedCrossEntropy { class_weights } => class_weights[label],
            _ => 1.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::CrossEntropy => "cross-entropy",
            LossKind::WeightedCrossEntropy { .. } => "weighted-cross-entropy",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Evaluation metric used for model selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricKind {
    /// Mean squared error over all unmasked steps and outputs.
    Mse,
    /// Fraction of unmasked steps whose arg-max logit equals the label.
    Accuracy,
    /// Binary F1 with class 1 as the positive class.
    F1,
}

impl MetricKind {
    pub fn higher_is_better(self) -> bool {
        self != MetricKind::Mse
    }

    pub fn default_for(loss: &LossKind) -> Self {
        if loss.is_classification() {
            MetricKind::Accuracy
        } else {
            MetricKind::Mse
        }
    }

    pub fn check_loss(self, loss: &LossKind) -> Result<()> {
        if (self == MetricKind::Mse) == loss.is_classification() {
            return Err(Error::Parameter(format!("metric {self:?} does not fit loss {loss}")));
        }
        Ok(())
    }

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Mse => "mse",
            MetricKind::Accuracy => "accuracy",
            MetricKind::F1 => "f1",
        }
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Loss of one step and, when `grad` is given, its gradient with respect to
/// the prediction.
pub fn loss_gradient_step(
    kind: &LossKind,
    prediction: &[f64],
    targets: &Targets,
    step: usize,
    grad: Option<&mut [f64]>,
) -> Result<f64> {
    match (kind, targets) {
        (LossKind::Mse, Targets::Values(v)) => {
            let y = &v[step];
            if y.len() != prediction.len() {
                return Err(Error::Shape(format!("prediction has {} outputs, target {}", prediction.len(), y.len())));
            }
            let o = y.len() as f64;
            let loss = prediction.iter().zip(y).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / o;
            if let Some(g) = grad {
                for ((gi, p), t) in g.iter_mut().zip(prediction).zip(y) {
                    *gi = 2.0 * (p - t) / o;
                }
            }
            Ok(loss)
        }
        (LossKind::CrossEntropy | LossKind::WeightedCrossEntropy { .. }, Targets::Labels(l)) => {
            let label = l[step];
            if label >= prediction.len() {
                return Err(Error::Input(format!("label {label} out of range for {} classes", prediction.len())));
            }
            if let LossKind::WeightedCrossEntropy { class_weights } = kind {
                if class_weights.len() != prediction.len() {
                    return Err(Error::Shape(format!(
                        "{} class weights for {} classes",
                        class_weights.len(),
                        prediction.len()
                    )));
                }
            }
            let w = kind.class_weight(label);
            let lse = log_sum_exp(prediction);
            if let Some(g) = grad {
                for (c, gi) in g.iter_mut().enumerate() {
                    let p = (prediction[c] - lse).exp();
                    *gi = w * (p - if c == label { 1.0 } else { 0.0 });
                }
            }
            Ok(w * (lse - prediction[label]))
        }
        _ => Err(Error::Input(format!("loss {kind} does not match the target type"))),
    }
}

/// Total loss: per-step losses summed over unmasked time steps, averaged over
/// the batch. `predictions` is `batch x time x outputs`.
pub fn loss_eval(kind: &LossKind, predictions: &[Vec<Vec<f64>>], batch: &[Sequence]) -> Result<f64> {
    kind.validate()?;
    if predictions.len() != batch.len() || batch.is_empty() {
        return Err(Error::Shape(format!("{} prediction sequences for {} targets", predictions.len(), batch.len())));
    }
    let mut total = 0.0;
    for (pred, seq) in predictions.iter().zip(batch) {
        if pred.len() != seq.targets.len() {
            return Err(Error::Shape("prediction and target lengths differ".into()));
        }
        for (t, p) in pred.iter().enumerate() {
            if seq.mask[t] {
                total += loss_gradient_step(kind, p, &seq.targets, t, None)?;
            }
        }
    }
    Ok(total / batch.len() as f64)
}

/// Evaluation metric over a set of predicted sequences.
pub fn metric_eval(metric: MetricKind, predictions: &[Vec<Vec<f64>>], batch: &[Sequence]) -> Result<f64> {
    let mut sq = 0.0;
    let mut count = 0usize;
    let (mut tp, mut fp, mut fneg, mut correct) = (0usize, 0usize, 0usize, 0usize);
    for (pred, seq) in predictions.iter().zip(batch) {
        for (t, p) in pred.iter().enumerate() {
            if !seq.mask[t] {
                continue;
            }
            match (&seq.targets, metric) {
                (Targets::Values(v), MetricKind::Mse) => {
                    sq += p.iter().zip(&v[t]).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
                    count += p.len();
                }
                (Targets::Labels(l), MetricKind::Accuracy | MetricKind::F1) => {
                    let guess = argmax(p);
                    let label = l[t];
                    count += 1;
                    correct += usize::from(guess == label);
                    match (guess == 1, label == 1) {
                        (true, true) => tp += 1,
                        (true, false) => fp += 1,
                        (false, true) => fneg += 1,
                        _ => {}
                    }
                }
                _ => return Err(Error::Input(format!("metric {} does not match the target type", metric.name()))),
            }
        }
    }
    if count == 0 {
        return Err(Error::Input("no unmasked steps to evaluate".into()));
    }
    Ok(match metric {
        MetricKind::Mse => sq / count as f64,
        MetricKind::Accuracy => correct as f64 / count as f64,
        MetricKind::F1 => f1_score(tp, fp, fneg),
    })
}

/// `2 tp / (2 tp + fp + fn)`; 0 when there are no positives at all.
pub(crate) fn f1_score(tp: usize, fp: usize, fneg: usize) -> f64 {
    let denom = 2 * tp + fp + fneg;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

fn argmax(v: &[f64]) -> usize {
    v.iter().enumerate().fold(0, |best, (i, x)| if *x > v[best] { i } else { best })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels_seq(labels: Vec<usize>) -> Sequence {
        let t = labels.len();
        Sequence::new(vec![vec![0.0]; t], Targets::Labels(labels)).unwrap()
    }

    #[test]
    fn mse_zero_when_exact() {
        let seq = Sequence::new(vec![vec![0.0]; 2], Targets::Values(vec![vec![1.0, 2.0], vec![3.0, -1.0]])).unwrap();
        let pred = vec![vec![vec![1.0, 2.0], vec![3.0, -1.0]]];
        assert_eq!(loss_eval(&LossKind::Mse, &pred, &[seq]).unwrap(), 0.0);
    }

    #[test]
    fn uniform_logits_give_ln_c_per_step() {
        let seq = labels_seq(vec![0, 3, 2]);
        let pred = vec![vec![vec![0.7; 5]; 3]];
        let l = loss_eval(&LossKind::CrossEntropy, &pred, &[seq]).unwrap();
        assert!((l - 3.0 * 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn class_weight_scales_minority_loss() {
        let seq = labels_seq(vec![1, 1, 1, 1]);
        let pred = vec![vec![vec![2.0, -1.0]; 4]];
        let plain = loss_eval(&LossKind::CrossEntropy, &pred, &[seq.clone()]).unwrap();
        let weighted =
            loss_eval(&LossKind::WeightedCrossEntropy { class_weights: vec![1.0, 15.0] }, &pred, &[seq]).unwrap();
        assert!((weighted - 15.0 * plain).abs() < 1e-12);
    }

    #[test]
    fn label_out_of_range() {
        let seq = labels_seq(vec![4]);
        let pred = vec![vec![vec![0.0, 0.0]]];
        assert!(matches!(loss_eval(&LossKind::CrossEntropy, &pred, &[seq]), Err(Error::Input(_))));
    }

    #[test]
    fn masked_steps_are_ignored() {
        let seq = Sequence::new(vec![vec![0.0]], Targets::Values(vec![vec![1.0]])).unwrap().padded(3);
        assert_eq!(seq.mask, vec![true, false, false]);
        let pred = vec![vec![vec![1.0], vec![100.0], vec![-7.0]]];
        assert_eq!(loss_eval(&LossKind::Mse, &pred, &[seq]).unwrap(), 0.0);
    }

    #[test]
    fn stabilized_cross_entropy_handles_large_logits() {
        let seq = labels_seq(vec![0]);
        let pred = vec![vec![vec![1000.0, 0.0]]];
        let l = loss_eval(&LossKind::CrossEntropy, &pred, &[seq]).unwrap();
        assert!(l.is_finite() && l < 1e-12);
    }

    #[test]
    fn step_gradients_match_differences() {
        let p = vec![0.3, -1.2, 0.8];
        for (kind, targets) in [
            (LossKind::Mse, Targets::Values(vec![vec![1.0, 0.5, -0.4]])),
            (LossKind::WeightedCrossEntropy { class_weights: vec![1.0, 2.0, 3.0] }, Targets::Labels(vec![2])),
        ] {
            let mut g = vec![0.0; 3];
            loss_gradient_step(&kind, &p, &targets, 0, Some(&mut g)).unwrap();
            for i in 0..3 {
                let h = 1e-6;
                let mut a = p.clone();
                a[i] += h;
                let mut b = p.clone();
                b[i] -= h;
                let fd = (loss_gradient_step(&kind, &a, &targets, 0, None).unwrap()
                    - loss_gradient_step(&kind, &b, &targets, 0, None).unwrap())
                    / (2.0 * h);
                assert!((fd - g[i]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn f1_on_hand_counted_fixture() {
        // 20 steps, 1:15-ish imbalance: 2 positives, everything predicted positive.
        let mut labels = vec![0usize; 20];
        labels[4] = 1;
        labels[13] = 1;
        let seq = labels_seq(labels);
        let pred = vec![vec![vec![-1.0, 1.0]; 20]];
        // tp = 2, fp = 18, fn = 0 -> F1 = 4 / 22.
        let f1 = metric_eval(MetricKind::F1, &pred, &[seq.clone()]).unwrap();
        assert!((f1 - 4.0 / 22.0).abs() < 1e-15);
        let acc = metric_eval(MetricKind::Accuracy, &pred, &[seq]).unwrap();
        assert!((acc - 0.1).abs() < 1e-15);
    }
}
