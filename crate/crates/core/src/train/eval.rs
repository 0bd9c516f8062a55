use std::fmt::Write as _;

use super::metrics::{confusion, metrics, regression_metrics, ConfusionMatrix, Metrics};
use super::BatchLabels;
use crate::dataset::Dataset;
use crate::labeling::mean_margin;
use crate::nn::{GraphInput, Model, ModelOutput, N_TASKS, TASKS};
use crate::{Error, Result};

const EVAL_BATCH: usize = 64;

/// Results for one stability criterion.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskReport {
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
    pub mse: f64,
    pub mae: f64,
    /// Mean predicted margin over samples that are truly stable.
    pub mean_margin_pred: Option<f64>,
    /// Mean target margin over the same samples.
    pub mean_margin_true: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub samples: usize,
    pub tas: TaskReport,
    pub tvs: TaskReport,
    /// Mean gate weight per expert, one row per task in [`TASKS`] order.
    pub expert_utilization: Vec<Vec<f64>>,
}

fn task_report(actual: &[bool], pred: &[bool], targets: &[f64], margins: &[f64]) -> Result<TaskReport> {
    let cm = confusion(actual, pred)?;
    let m = metrics(&cm)?;
    let (mse, mae) = regression_metrics(targets, margins)?;
    let stable: Vec<usize> = (0..actual.len()).filter(|&i| actual[i]).collect();
    let pick = |xs: &[f64]| -> Option<f64> {
        let v: Vec<f64> = stable.iter().map(|&i| xs[i]).collect();
        mean_margin(&v).ok()
    };
    Ok(TaskReport {
        confusion: cm,
        metrics: m,
        mse,
        mae,
        mean_margin_pred: pick(margins),
        mean_margin_true: pick(targets),
    })
}

/// Builds a report from model outputs and their labels.
pub fn report_from_outputs(outs: &[ModelOutput], labels: &BatchLabels) -> Result<EvalReport> {
    if outs.is_empty() || outs.len() != labels.tas_class.len() {
        return Err(Error::InvalidArgument("evaluation needs one output per labelled sample".into()));
    }
    let tas_actual: Vec<bool> = labels.tas_class.iter().map(|&c| c == 0).collect();
    let tvs_actual: Vec<bool> = labels.tvs_class.iter().map(|&c| c == 0).collect();
    let tas_pred: Vec<bool> = outs.iter().map(ModelOutput::tas_stable).collect();
    let tvs_pred: Vec<bool> = outs.iter().map(ModelOutput::tvs_stable).collect();
    let tas_m: Vec<f64> = outs.iter().map(|o| o.tas_margin).collect();
    let tvs_m: Vec<f64> = outs.iter().map(|o| o.tvs_margin).collect();
    let k = outs[0].gate_weights[0].len();
    let mut util = vec![vec![0.0; k]; N_TASKS];
    for o in outs {
        for (row, gw) in util.iter_mut().zip(&o.gate_weights) {
            for (u, x) in row.iter_mut().zip(gw) {
                *u += x;
            }
        }
    }
    for row in &mut util {
        row.iter_mut().for_each(|u| *u /= outs.len() as f64);
    }
    Ok(EvalReport {
        samples: outs.len(),
        tas: task_report(&tas_actual, &tas_pred, &labels.tas_target, &tas_m)?,
        tvs: task_report(&tvs_actual, &tvs_pred, &labels.tvs_target, &tvs_m)?,
        expert_utilization: util,
    })
}

pub fn evaluate_inputs(model: &Model, inputs: &[GraphInput], labels: &BatchLabels) -> Result<EvalReport> {
    let mut outs = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(EVAL_BATCH) {
        outs.extend(model.forward(chunk)?);
    }
    report_from_outputs(&outs, labels)
}

/// Evaluates `model` on the samples of `dataset` listed in `ids`.
pub fn evaluate(model: &Model, dataset: &Dataset, ids: &[usize]) -> Result<EvalReport> {
    let want = 2 * dataset.window;
    if model.config.input_dim != want {
        return Err(Error::Shape(format!(
            "checkpoint expects {} features per node but the dataset provides {want}",
            model.config.input_dim
        )));
    }
    if let Some(&bad) = ids.iter().find(|&&i| i >= dataset.samples.len()) {
        return Err(Error::InvalidArgument(format!("sample index {bad} out of range")));
    }
    let inputs = ids.iter().map(|&i| GraphInput::from_sample(&dataset.samples[i])).collect::<Result<Vec<_>>>()?;
    let labels = BatchLabels::from_samples(ids.iter().map(|&i| &dataset.samples[i]));
    evaluate_inputs(model, &inputs, &labels)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.6}"))
}

fn stats(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

impl EvalReport {
    pub fn task(&self, name: &str) -> Option<&TaskReport> {
        match name {
            "tas" => Some(&self.tas),
            "tvs" => Some(&self.tvs),
            _ => None,
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "samples: {}", self.samples);
        for (name, t) in [("tas", &self.tas), ("tvs", &self.tvs)] {
            let c = &t.confusion;
            let _ = writeln!(s, "[{name}]");
            let _ = writeln!(s, "confusion: n00={} n01={} n10={} n11={}", c.n00, c.n01, c.n10, c.n11);
            let _ = writeln!(s, "accuracy: {:.6}", t.metrics.accuracy);
            let _ = writeln!(s, "mdr: {}", opt(t.metrics.mdr));
            let _ = writeln!(s, "fpr: {}", opt(t.metrics.fpr));
            let _ = writeln!(s, "g_mean: {}", opt(t.metrics.g_mean));
            let _ = writeln!(s, "margin_mse: {:.6}", t.mse);
            let _ = writeln!(s, "margin_mae: {:.6}", t.mae);
            let _ = writeln!(s, "mean_margin_pred: {}", opt(t.mean_margin_pred));
            let _ = writeln!(s, "mean_margin_true: {}", opt(t.mean_margin_true));
        }
        let _ = writeln!(s, "[expert_utilization]");
        for (task, row) in TASKS.iter().zip(&self.expert_utilization) {
            let cells: Vec<String> = row.iter().map(|u| format!("{u:.4}")).collect();
            let _ = writeln!(s, "{task}: {}", cells.join(" "));
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("task,accuracy,mdr,fpr,g_mean,mse,mae,mean_margin_pred,mean_margin_true\n");
        let cell = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        for (name, t) in [("tas", &self.tas), ("tvs", &self.tvs)] {
            let m = &t.metrics;
            let _ = writeln!(
                s,
                "{name},{},{},{},{},{},{},{},{}",
                m.accuracy,
                cell(m.mdr),
                cell(m.fpr),
                cell(m.g_mean),
                t.mse,
                t.mae,
                cell(t.mean_margin_pred),
                cell(t.mean_margin_true)
            );
        }
        s
    }
}

/// Mean and population standard deviation of each metric across repeats.
pub fn summarize_reports(reports: &[EvalReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "repeats: {}", reports.len());
    for name in ["tas", "tvs"] {
        let tasks: Vec<&TaskReport> = reports.iter().filter_map(|r| r.task(name)).collect();
        let rows: [(&str, Vec<f64>); 6] = [
            ("accuracy", tasks.iter().map(|t| t.metrics.accuracy).collect()),
            ("mdr", tasks.iter().filter_map(|t| t.metrics.mdr).collect()),
            ("fpr", tasks.iter().filter_map(|t| t.metrics.fpr).collect()),
            ("g_mean", tasks.iter().filter_map(|t| t.metrics.g_mean).collect()),
            ("margin_mse", tasks.iter().map(|t| t.mse).collect()),
            ("margin_mae", tasks.iter().map(|t| t.mae).collect()),
        ];
        let _ = writeln!(s, "[{name}]");
        for (key, xs) in rows {
            match stats(&xs) {
                Some((m, sd)) => {
                    let _ = writeln!(s, "{key}: {m:.6} +- {sd:.6} (n={})", xs.len());
                }
                None => {
                    let _ = writeln!(s, "{key}: undefined");
                }
            }
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn out(tas: bool, tvs: bool, m: f64) -> ModelOutput {
        let l = |s: bool| if s { [1.0, 0.0] } else { [0.0, 1.0] };
        ModelOutput {
            tas_logits: l(tas),
            tvs_logits: l(tvs),
            tas_margin: m,
            tvs_margin: m,
            gate_weights: std::array::from_fn(|_| vec![0.25; 4]),
        }
    }

    #[test]
    fn composition_identity() {
        let outs = vec![out(true, true, 0.5), out(false, true, -0.2), out(true, false, 0.1)];
        let labels = BatchLabels {
            tas_class: vec![0, 1, 1],
            tvs_class: vec![0, 0, 1],
            tas_target: vec![0.4, -0.2, -0.5],
            tvs_target: vec![0.5, 0.3, -0.1],
        };
        let r = report_from_outputs(&outs, &labels).unwrap();
        let cm = confusion(&[true, false, false], &[true, false, true]).unwrap();
        assert_eq!(r.tas.confusion, cm);
        assert_eq!(r.tas.metrics, metrics(&cm).unwrap());
        assert_eq!(r.tas.mean_margin_pred, Some(0.5));
        assert_eq!(r.tas.mean_margin_true, Some(0.4));
        for row in &r.expert_utilization {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(r.to_text().contains("accuracy"));
    }

    #[test]
    fn undefined_is_printed() {
        let outs = vec![out(true, true, 0.5)];
        let labels =
            BatchLabels { tas_class: vec![0], tvs_class: vec![0], tas_target: vec![0.5], tvs_target: vec![0.5] };
        let r = report_from_outputs(&outs, &labels).unwrap();
        assert!(r.to_text().contains("mdr: undefined"));
        let sum = summarize_reports(&[r.clone(), r]);
        assert!(sum.contains("accuracy: 1.000000 +- 0.000000"));
        assert!(sum.contains("mdr: undefined"));
    }
}
