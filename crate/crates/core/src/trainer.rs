//! SGD with momentum, the learning-rate schedule, and the training loop.

use std::fmt::Write as _;

use crate::autodiff::Graph;
use crate::data::{BatchIterator, Dataset, DomainPair};
use crate::error::{Error, Result};
use crate::layers::ParameterSet;
use crate::losses::{self, LossWeights};
use crate::model::{DsnModel, ModelVariant};
use crate::scalar::Real;

/// Step-wise exponential decay of the learning rate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecayRule {
    pub factor: f64,
    pub interval: u64,
}

impl Default for DecayRule {
    fn default() -> Self {
        DecayRule {
            factor: 0.9,
            interval: 1000,
        }
    }
}

/// `initial_lr * factor^floor(step / interval)`.
pub fn lr_schedule(initial_lr: f64, step: u64, rule: DecayRule) -> f64 {
    let decays = step / rule.interval.max(1);
    initial_lr * rule.factor.powi(decays.min(i32::MAX as u64) as i32)
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T: Real> {
    pub initial_lr: f64,
    pub momentum: f64,
    pub velocity: ParameterSet<T>,
    pub step: u64,
    pub decay: DecayRule,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(params: &ParameterSet<T>, initial_lr: f64, momentum: f64, decay: DecayRule) -> Self {
        OptimizerState {
            initial_lr,
            momentum,
            velocity: params.zeros_like(),
            step: 0,
            decay,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        lr_schedule(self.initial_lr, self.step, self.decay)
    }
}

/// Classical momentum: `v <- mu v + g`, `p <- p - lr v`, then advances the
/// step counter.
pub fn sgd_momentum_step<T: Real>(
    params: &mut ParameterSet<T>,
    grads: &ParameterSet<T>,
    state: &mut OptimizerState<T>,
) -> Result<()> {
    if !params.same_layout(grads) || !params.same_layout(&state.velocity) {
        return Err(Error::invalid(
            "sgd_momentum_step: gradient or velocity layout differs from parameters",
        ));
    }
    let lr = T::lit(state.learning_rate());
    let mu = T::lit(state.momentum);
    for ((_, _, p), ((_, _, g), (_, _, v))) in params
        .iter_mut()
        .zip(grads.iter().zip(state.velocity.iter_mut()))
    {
        for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vv = mu * *vv + gv;
            *pv -= lr * *vv;
        }
    }
    state.step += 1;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    /// Loss terms are recorded every `log_interval` steps.
    pub log_interval: u64,
    /// Held-out evaluation runs every `eval_interval` steps and at the end.
    pub eval_interval: u64,
    pub lr: f64,
    pub momentum: f64,
    pub decay: DecayRule,
    pub weights: LossWeights,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch_size: 32,
            log_interval: 50,
            eval_interval: 500,
            lr: 0.01,
            momentum: 0.9,
            decay: DecayRule::default(),
            weights: LossWeights::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: &str| {
            Err(Error::Config {
                key: key.into(),
                message: message.into(),
            })
        };
        if self.steps == 0 {
            return bad("steps", "must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        if self.log_interval == 0 {
            return bad("log_interval", "must be positive");
        }
        if self.eval_interval == 0 {
            return bad("eval_interval", "must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr", "must be finite and positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum", "must lie in [0, 1)");
        }
        if !(self.decay.factor > 0.0 && self.decay.factor <= 1.0) {
            return bad("decay_factor", "must lie in (0, 1]");
        }
        if self.decay.interval == 0 {
            return bad("decay_interval", "must be positive");
        }
        self.weights.validate()
    }
}

/// Held-out metrics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub angle_error: Option<f64>,
}

/// One row of the training log. Loss terms that a variant does not have are
/// `None`; evaluation fields are filled on evaluation steps only.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainRecord {
    pub step: u64,
    pub lr: f64,
    pub l_task: f64,
    pub l_recon: Option<f64>,
    pub l_diff: Option<f64>,
    pub l_sim: Option<f64>,
    /// The weighted objective that was differentiated.
    pub l_total: f64,
    pub src_acc: Option<f64>,
    pub tgt_acc: Option<f64>,
    pub angle_err: Option<f64>,
}

pub const CSV_HEADER: &str = "step,lr,l_task,l_recon,l_diff,l_sim,src_acc,tgt_acc,angle_err";

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

impl TrainRecord {
    /// Comma-separated row matching [`CSV_HEADER`]; absent values are empty.
    pub fn csv_row(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            self.step,
            self.lr,
            self.l_task,
            opt(self.l_recon),
            opt(self.l_diff),
            opt(self.l_sim),
            opt(self.src_acc),
            opt(self.tgt_acc),
            opt(self.angle_err)
        );
        s
    }
}

/// Renders records as a CSV document with header.
pub fn records_csv(records: &[TrainRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Classification accuracy and, when the model has a pose head, mean angle
/// error in degrees on a labeled dataset.
pub fn evaluate<T: Real>(model: &DsnModel<T>, data: &Dataset) -> Result<Evaluation> {
    let pred = model.predict(&data.images, 256)?;
    let hits = pred
        .classes()
        .iter()
        .zip(&data.labels)
        .filter(|(a, b)| a == b)
        .count();
    let angle_error = match (&pred.poses, &data.poses) {
        (Some(p), Some(t)) => Some(losses::mean_angle_error(t, p)?),
        _ => None,
    };
    Ok(Evaluation {
        accuracy: hits as f64 / data.len() as f64,
        angle_error,
    })
}

pub struct TrainOutcome<T: Real> {
    pub model: DsnModel<T>,
    pub records: Vec<TrainRecord>,
    pub source_eval: Evaluation,
    pub target_eval: Evaluation,
}

fn finite(v: f64, step: u64, what: &str, last: Option<&TrainRecord>) -> Result<f64> {
    if v.is_finite() {
        return Ok(v);
    }
    let last = last
        .map(|r| format!("last finite record: {}", r.csv_row()))
        .unwrap_or_else(|| "no earlier record".into());
    Err(Error::NonFinite {
        step,
        detail: format!("{what} = {v}; {last}"),
    })
}

/// Trains `model` on `data`. `on_record` sees every record as it is made.
///
/// The `target_only` variant trains on the labeled target training set in
/// place of the source set; every variant is evaluated on both held-out sets.
pub fn train<T: Real>(
    mut model: DsnModel<T>,
    data: &DomainPair,
    cfg: &TrainConfig,
    mut on_record: impl FnMut(&TrainRecord),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let labeled = if model.variant == ModelVariant::TargetOnly {
        &data.target_train
    } else {
        &data.source_train
    };
    let mut batches = BatchIterator::new(labeled, &data.target_train, cfg.batch_size, cfg.seed)?;
    let mut opt = OptimizerState::new(&model.params, cfg.lr, cfg.momentum, cfg.decay);
    let mut records: Vec<TrainRecord> = Vec::new();
    let uses_target = model.variant.uses_target(model.similarity);

    for step in 0..cfg.steps {
        let last_step = step + 1 == cfg.steps;
        let eval_now = (step + 1) % cfg.eval_interval == 0 || last_step;
        let log = step % cfg.log_interval == 0 || eval_now;
        let active = cfg.weights.adaptation_active(step);
        let batch = batches.next_batch();

        let mut g = Graph::<T>::new();
        let bound = model.params.bind(&mut g);
        let with_target = uses_target && (active || log);
        let (_, parts) = model.batch_losses(&mut g, &bound, &batch, with_target, cfg.weights.xi)?;
        let total = losses::total_loss(&mut g, &parts, &cfg.weights, step)?;
        let value = |g: &Graph<T>, v| g.value(v).item().to_f64_lossy();
        let l_total = finite(value(&g, total), step, "total loss", records.last())?;
        let mut record = log.then(|| TrainRecord {
            step,
            lr: opt.learning_rate(),
            l_task: value(&g, parts.task),
            l_recon: parts.recon.map(|v| value(&g, v)),
            l_diff: parts.difference.map(|v| value(&g, v)),
            l_sim: parts.similarity.map(|v| value(&g, v)),
            l_total,
            src_acc: None,
            tgt_acc: None,
            angle_err: None,
        });

        let mut grads = g.backward(total)?;
        let grads = ParameterSet::gradients(&bound, &mut grads);
        for (group, i, t) in grads.iter() {
            if !t.all_finite() {
                return Err(Error::NonFinite {
                    step,
                    detail: format!("gradient of {}.{i}", group.name()),
                });
            }
        }
        sgd_momentum_step(&mut model.params, &grads, &mut opt)?;

        if let (Some(r), true) = (record.as_mut(), eval_now) {
            let s = evaluate(&model, &data.source_eval)?;
            let t = evaluate(&model, &data.target_eval)?;
            r.src_acc = Some(s.accuracy);
            r.tgt_acc = Some(t.accuracy);
            r.angle_err = t.angle_error;
        }
        if let Some(r) = record {
            on_record(&r);
            records.push(r);
        }
    }

    let source_eval = evaluate(&model, &data.source_eval)?;
    let target_eval = evaluate(&model, &data.target_eval)?;
    Ok(TrainOutcome {
        model,
        records,
        source_eval,
        target_eval,
    })
}
