//! Stochastic training over one or many signals.
//!
//! Single-signal fitting runs through the same loop as joint training with
//! one signal, so both produce identical trajectories for the same seed.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::engine::adam::{adam_step, AdamConfig, AdamState};
use crate::engine::dropout::{sample_dropout_mask, DropoutMask};
use crate::engine::param::{zero_grads, FieldParams, ParamStore, Params, ParamsMut};
use crate::engine::tape::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::Model;
use crate::real::Real;
use crate::tasks::data::DirectData;

/// How per-signal random streams relate in joint training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StreamMode {
    /// Each signal draws batches and masks from its own stream.
    #[default]
    Independent,
    /// Every signal replays the same stream.
    Identical,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub steps: usize,
    pub batch: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Learning-rate multiplier reached at the last step, approached
    /// exponentially; 1 keeps the rate constant.
    pub lr_decay: f64,
    /// Dropout probability on the joined features.
    pub mu: f64,
    pub log_every: usize,
    pub exec: Exec,
    pub streams: StreamMode,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch: 4096,
            seed: 0,
            adam: AdamConfig::default(),
            lr_decay: 1.0,
            mu: 0.1,
            log_every: 100,
            exec: Exec::Sequential,
            streams: StreamMode::Independent,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub records: Vec<StepRecord>,
    pub total_ms: f64,
}

impl TrainLog {
    pub fn final_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.loss)
    }
}

/// A signal that can record its training loss for a batch of sample indices.
pub trait Objective<T: Real> {
    /// Number of samples to draw batches from.
    fn samples(&self) -> usize;

    fn record_loss(
        &self,
        model: &Model,
        params: Params<'_, T>,
        tape: &mut Tape<T>,
        batch: &[usize],
        mask: Option<&DropoutMask>,
        rng: &mut ChaCha8Rng,
    ) -> Result<NodeId>;
}

impl<T: Real> Objective<T> for DirectData<T> {
    fn samples(&self) -> usize {
        self.len()
    }

    fn record_loss(
        &self,
        model: &Model,
        params: Params<'_, T>,
        tape: &mut Tape<T>,
        batch: &[usize],
        mask: Option<&DropoutMask>,
        _rng: &mut ChaCha8Rng,
    ) -> Result<NodeId> {
        let (di, d_o) = (self.in_dims, self.out_dims);
        if model.config.dims != di || model.config.projection.outputs() != d_o {
            return Err(Error::InvalidArgument(format!(
                "data maps {di} -> {d_o} but the model maps {} -> {}",
                model.config.dims,
                model.config.projection.outputs()
            )));
        }
        let mut xs = Vec::with_capacity(batch.len() * di);
        let mut ys = Vec::with_capacity(batch.len() * d_o);
        for &i in batch {
            xs.extend_from_slice(&self.xs[i * di..(i + 1) * di]);
            ys.extend_from_slice(&self.ys[i * d_o..(i + 1) * d_o]);
        }
        let out = model.forward(params, tape, &xs, None, mask)?;
        tape.mse(out, ys)
    }
}

pub fn train_direct<T: Real, O: Objective<T>>(
    model: &Model,
    params: &mut FieldParams<T>,
    signal: &O,
    schedule: &Schedule,
) -> Result<TrainLog> {
    train_shared(
        model,
        &mut params.shared,
        std::slice::from_mut(&mut params.local),
        std::slice::from_ref(signal),
        schedule,
    )
}

/// Joint training: shared gradients accumulate over every signal each step,
/// each local store only sees its own signal. Non-learnable tensors (for
/// example a frozen shared store) are left untouched.
pub fn train_shared<T: Real, O: Objective<T>>(
    model: &Model,
    shared: &mut ParamStore<T>,
    locals: &mut [ParamStore<T>],
    signals: &[O],
    schedule: &Schedule,
) -> Result<TrainLog> {
    if signals.is_empty() || signals.len() != locals.len() {
        return Err(Error::InvalidArgument(format!(
            "{} signals for {} local parameter sets",
            signals.len(),
            locals.len()
        )));
    }
    if let Some(i) = signals.iter().position(|s| s.samples() == 0) {
        return Err(Error::InvalidArgument(format!("signal {i} has no samples")));
    }
    if schedule.batch == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    if !(schedule.lr_decay > 0.0 && schedule.lr_decay.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "learning-rate decay must be positive, got {}",
            schedule.lr_decay
        )));
    }
    let mut rngs: Vec<ChaCha8Rng> = (0..signals.len())
        .map(|s| {
            let mut r = ChaCha8Rng::seed_from_u64(schedule.seed);
            if schedule.streams == StreamMode::Independent {
                r.set_stream(s as u64);
            }
            r
        })
        .collect();
    let mut shared_adam = AdamState::new(schedule.adam, shared);
    let mut local_adam: Vec<AdamState<T>> = locals.iter().map(|l| AdamState::new(schedule.adam, l)).collect();
    let k = model.config.dropout_dim();
    let start = Instant::now();
    let mut log = TrainLog::default();
    let mut batch = vec![0usize; schedule.batch];
    for step in 1..=schedule.steps {
        zero_grads(shared);
        let mut total = 0.0;
        for (s, signal) in signals.iter().enumerate() {
            let local = &mut locals[s];
            zero_grads(local);
            let rng = &mut rngs[s];
            let n = signal.samples();
            batch.iter_mut().for_each(|b| *b = rng.random_range(0..n));
            let mask = if k > 0 && schedule.mu > 0.0 {
                Some(sample_dropout_mask(k, schedule.mu, rng)?)
            } else {
                None
            };
            let mut tape = Tape::new(schedule.exec);
            let view = Params {
                shared: &*shared,
                local: &*local,
            };
            let loss = signal.record_loss(model, view, &mut tape, &batch, mask.as_ref(), rng)?;
            let value = tape.value(loss)[0].as_f64();
            if !value.is_finite() {
                return Err(Error::Divergence { step, loss: value });
            }
            total += value;
            tape.backward(
                loss,
                &mut ParamsMut {
                    shared: &mut *shared,
                    local,
                },
            )?;
        }
        let lr = schedule.adam.lr * schedule.lr_decay.powf((step - 1) as f64 / schedule.steps as f64);
        shared_adam.config.lr = lr;
        adam_step(&mut shared_adam, shared);
        for (state, local) in local_adam.iter_mut().zip(locals.iter_mut()) {
            state.config.lr = lr;
            adam_step(state, local);
        }
        if step % schedule.log_every.max(1) == 0 || step == schedule.steps {
            log.records.push(StepRecord {
                step,
                loss: total / signals.len() as f64,
                ms: start.elapsed().as_secs_f64() * 1e3,
            });
        }
    }
    log.total_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(log)
}

/// Fresh local parameters initialized to the per-element mean of `locals`.
pub fn mean_local<T: Real>(locals: &[ParamStore<T>]) -> Result<ParamStore<T>> {
    let Some(first) = locals.first() else {
        return Err(Error::InvalidArgument("mean of no parameter sets".into()));
    };
    let mut out = first.clone();
    for (i, t) in out.iter_mut().enumerate() {
        for other in &locals[1..] {
            let o = other.get(i);
            if o.name != t.name || o.shape != t.shape {
                return Err(Error::InvalidArgument(format!("mismatched tensor `{}`", o.name)));
            }
            for (a, &b) in t.values.iter_mut().zip(&o.values) {
                *a += b;
            }
        }
        let n = T::of(locals.len() as f64);
        t.values.iter_mut().for_each(|v| *v /= n);
        t.zero_grad();
    }
    Ok(out)
}
