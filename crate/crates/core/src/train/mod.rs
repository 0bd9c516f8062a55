//! Multi-task training and evaluation.

mod eval;
mod metrics;

pub use eval::{evaluate, evaluate_inputs, report_from_outputs, summarize_reports, EvalReport, TaskReport};
pub use metrics::{confusion, metrics, regression_metrics, ConfusionMatrix, Metrics};

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, DatasetSplit, Sample};
use crate::nn::{outputs, ForwardOptions, ForwardVars, Graph, GraphInput, Model, ModelConfig, Tensor, Var, N_TASKS};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Threshold checks start after this many epochs.
    pub min_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lambda_cls: f64,
    pub lambda_reg: f64,
    pub alpha_balance: f64,
    /// Target joint (both tasks right) validation accuracy.
    pub accuracy_threshold: f64,
    pub seed: u64,
    pub repeats: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            min_epochs: 100,
            batch_size: 16,
            learning_rate: 1e-3,
            lambda_cls: 1.0,
            lambda_reg: 1.0,
            alpha_balance: 0.01,
            accuracy_threshold: 0.95,
            seed: 0,
            repeats: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 || self.repeats == 0 {
            return Err(Error::InvalidArgument("batch_size and repeats must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning_rate must be positive".into()));
        }
        if [self.lambda_cls, self.lambda_reg, self.alpha_balance].iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidArgument("loss weights must be nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.accuracy_threshold) {
            return Err(Error::InvalidArgument("accuracy_threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights { cls: self.lambda_cls, reg: self.lambda_reg, balance: self.alpha_balance }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub cls: f64,
    pub reg: f64,
    pub balance: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { cls: 1.0, reg: 1.0, balance: 0.01 }
    }
}

/// Targets for a batch. Class 0 is stable.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BatchLabels {
    pub tas_class: Vec<usize>,
    pub tvs_class: Vec<usize>,
    pub tas_target: Vec<f64>,
    pub tvs_target: Vec<f64>,
}

impl BatchLabels {
    pub fn from_samples<'a>(samples: impl IntoIterator<Item = &'a Sample>) -> Self {
        let mut b = Self::default();
        for s in samples {
            let l = &s.labels;
            b.tas_class.push(usize::from(!l.tas_stable));
            b.tvs_class.push(usize::from(!l.tvs_stable));
            b.tas_target.push(l.tas_target);
            b.tvs_target.push(l.tvs_target);
        }
        b
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub ce_tas: Var,
    pub ce_tvs: Var,
    pub se_tas: Var,
    pub se_tvs: Var,
    /// Load-balancing term, averaged over the task gates.
    pub balance: Var,
}

/// `cls (CE_tas + CE_tvs) + reg (MSE_tas + MSE_tvs) + balance mean_t CV2(g_t)`.
pub fn multitask_loss(g: &mut Graph, out: &ForwardVars, labels: &BatchLabels, w: LossWeights) -> Result<LossVars> {
    let ce_tas = g.cross_entropy(out.tas_logits, &labels.tas_class)?;
    let ce_tvs = g.cross_entropy(out.tvs_logits, &labels.tvs_class)?;
    let se_tas = g.mean_squared_error(out.tas_margin, &labels.tas_target)?;
    let se_tvs = g.mean_squared_error(out.tvs_margin, &labels.tvs_target)?;
    let mut bal = g.cv_squared(out.gates[0]);
    for t in 1..N_TASKS {
        let v = g.cv_squared(out.gates[t]);
        bal = g.add(bal, v)?;
    }
    let balance = g.scale(bal, 1.0 / N_TASKS as f64);
    let cls = g.add(ce_tas, ce_tvs)?;
    let cls = g.scale(cls, w.cls);
    let reg = g.add(se_tas, se_tvs)?;
    let reg = g.scale(reg, w.reg);
    let bw = g.scale(balance, w.balance);
    let total = g.add(cls, reg)?;
    let total = g.add(total, bw)?;
    for (name, v) in [("cross-entropy", ce_tas), ("cross-entropy", ce_tvs), ("squared error", se_tas), ("squared error", se_tvs), ("balance", balance)] {
        if !g.scalar(v).is_finite() {
            return Err(Error::NonFinite(format!("{name} term of the loss")));
        }
    }
    Ok(LossVars { total, ce_tas, ce_tvs, se_tas, se_tvs, balance })
}

/// Adaptive-moment optimizer state.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &[Tensor], lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn step(&mut self, params: &mut [Tensor]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (k, p) in params.iter_mut().enumerate() {
            let Some(grad) = p.grad.as_ref() else { continue };
            for i in 0..p.data.len() {
                let gi = grad[i];
                self.m[k][i] = self.beta1 * self.m[k][i] + (1.0 - self.beta1) * gi;
                self.v[k][i] = self.beta2 * self.v[k][i] + (1.0 - self.beta2) * gi * gi;
                let mh = self.m[k][i] / c1;
                let vh = self.v[k][i] / c2;
                p.data[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc_tas: f64,
    pub val_acc_tvs: f64,
    pub val_joint_acc: f64,
    pub balance_loss: f64,
    /// Mean validation gate weight per expert, averaged over tasks.
    pub expert_util: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Threshold,
    EpochCap,
    Diverged,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best validation model at checkpoint precision.
    pub model: Model,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub stop: StopReason,
}

pub fn log_csv(log: &[EpochLog]) -> String {
    let n = log.first().map_or(0, |l| l.expert_util.len());
    let mut out = String::from("epoch,train_loss,val_acc_tas,val_acc_tvs,val_joint_acc,balance_loss");
    for i in 0..n {
        let _ = write!(out, ",expert_util_{i}");
    }
    out.push_str(",val_loss\n");
    for l in log {
        let _ = write!(
            out,
            "{},{},{},{},{},{}",
            l.epoch, l.train_loss, l.val_acc_tas, l.val_acc_tvs, l.val_joint_acc, l.balance_loss
        );
        for u in &l.expert_util {
            let _ = write!(out, ",{u}");
        }
        let _ = writeln!(out, ",{}", l.val_loss);
    }
    out
}

struct ValStats {
    loss: f64,
    acc_tas: f64,
    acc_tvs: f64,
    joint: f64,
    util: Vec<f64>,
}

fn validate_model(model: &Model, inputs: &[GraphInput], labels: &BatchLabels, w: LossWeights) -> Result<ValStats> {
    let mut g = Graph::new();
    let fv = model.forward_graph(&mut g, inputs, &ForwardOptions::default())?;
    let loss = multitask_loss(&mut g, &fv, labels, w)?;
    let outs = outputs(&g, &fv, inputs.len());
    let n = inputs.len() as f64;
    let (mut a, mut b, mut j) = (0.0, 0.0, 0.0);
    let mut util = vec![0.0; model.config.experts];
    for (i, o) in outs.iter().enumerate() {
        let ta = o.tas_stable() == (labels.tas_class[i] == 0);
        let tv = o.tvs_stable() == (labels.tvs_class[i] == 0);
        a += f64::from(u8::from(ta));
        b += f64::from(u8::from(tv));
        j += f64::from(u8::from(ta && tv));
        for gw in &o.gate_weights {
            for (u, x) in util.iter_mut().zip(gw) {
                *u += x / (n * N_TASKS as f64);
            }
        }
    }
    Ok(ValStats { loss: g.scalar(loss.total), acc_tas: a / n, acc_tvs: b / n, joint: j / n, util })
}

/// Trains on pre-built inputs. `train_ids`/`val_ids` index into `inputs`.
pub fn train_inputs(
    model_config: ModelConfig,
    inputs: &[GraphInput],
    labels: &BatchLabels,
    train_ids: &[usize],
    val_ids: &[usize],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_ids.is_empty() || val_ids.is_empty() {
        return Err(Error::InvalidArgument("training needs nonempty train and validation splits".into()));
    }
    let pick = |ids: &[usize]| BatchLabels {
        tas_class: ids.iter().map(|&i| labels.tas_class[i]).collect(),
        tvs_class: ids.iter().map(|&i| labels.tvs_class[i]).collect(),
        tas_target: ids.iter().map(|&i| labels.tas_target[i]).collect(),
        tvs_target: ids.iter().map(|&i| labels.tvs_target[i]).collect(),
    };
    let val_inputs: Vec<GraphInput> = val_ids.iter().map(|&i| inputs[i].clone()).collect();
    let val_labels = pick(val_ids);
    let w = cfg.weights();

    let mut model = Model::new(model_config, cfg.seed)?;
    let mut adam = Adam::new(&model.params, cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order = train_ids.to_vec();
    let mut log = Vec::new();
    let mut best: Option<(Model, f64, f64, usize)> = None;
    let mut stop = StopReason::EpochCap;

    'epochs: for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut bal_sum) = (0.0, 0.0);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<GraphInput> = chunk.iter().map(|&i| inputs[i].clone()).collect();
            let mut g = Graph::new();
            let fv = model.forward_graph(&mut g, &batch, &ForwardOptions::default())?;
            let lv = match multitask_loss(&mut g, &fv, &pick(chunk), w) {
                Ok(lv) if g.scalar(lv.total).is_finite() => lv,
                Ok(_) | Err(Error::NonFinite(_)) => {
                    log::warn!("non-finite loss at epoch {epoch}; keeping the best model so far");
                    stop = StopReason::Diverged;
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            model.zero_grad();
            g.backward(lv.total, &mut model.params)?;
            adam.step(&mut model.params);
            loss_sum += g.scalar(lv.total) * chunk.len() as f64;
            bal_sum += g.scalar(lv.balance) * chunk.len() as f64;
        }
        let v = validate_model(&model, &val_inputs, &val_labels, w)?;
        log.push(EpochLog {
            epoch,
            train_loss: loss_sum / order.len() as f64,
            val_loss: v.loss,
            val_acc_tas: v.acc_tas,
            val_acc_tvs: v.acc_tvs,
            val_joint_acc: v.joint,
            balance_loss: bal_sum / order.len() as f64,
            expert_util: v.util,
        });
        let better = match &best {
            None => true,
            Some((_, acc, loss, _)) => v.joint > *acc || (v.joint == *acc && v.loss < *loss),
        };
        if better {
            best = Some((model.clone(), v.joint, v.loss, epoch));
        }
        log::info!("epoch {epoch}: val joint accuracy {:.4}, val loss {:.5}", v.joint, v.loss);
        if epoch >= cfg.min_epochs && v.joint >= cfg.accuracy_threshold {
            stop = StopReason::Threshold;
            break;
        }
    }
    let Some((best_model, _, _, best_epoch)) = best else {
        return Err(Error::NonFinite("loss diverged before the first epoch finished".into()));
    };
    Ok(TrainOutcome { model: best_model.quantized(), log, best_epoch, stop })
}

pub fn dataset_inputs(dataset: &Dataset) -> Result<Vec<GraphInput>> {
    dataset.samples.iter().map(GraphInput::from_sample).collect()
}

/// Trains the default architecture on `split` of `dataset`.
pub fn train(dataset: &Dataset, split: &DatasetSplit, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let inputs = dataset_inputs(dataset)?;
    let labels = BatchLabels::from_samples(&dataset.samples);
    let config = ModelConfig::with_input(2 * dataset.window);
    train_inputs(config, &inputs, &labels, &split.train_ids, &split.val_ids, cfg)
}
