use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{SampleLoss, SeqModel};
use crate::dataset::{mix_seed, Dataset};
use crate::error::{Error, Result};
use crate::nn::{clip_grad_norm, Adam, AdamConfig};
use crate::par::{self, Execution};
use crate::switch::RoutingStats;

/// A training window: the trajectory and the timestep it ends at.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowRef {
    pub episode: usize,
    pub end: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub grad_clip: Option<f64>,
    /// Caps optimizer steps per epoch (the rest of the shuffled windows are skipped).
    pub max_batches_per_epoch: Option<usize>,
    /// Caps the number of validation windows scored per epoch.
    pub max_val_windows: Option<usize>,
    pub seed: u64,
    pub exec: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 16,
            adam: AdamConfig::default(),
            grad_clip: Some(1.0),
            max_batches_per_epoch: None,
            max_val_windows: None,
            seed: 0,
            exec: Execution::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean task loss over the epoch's optimizer steps (load balancing excluded).
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub wall_seconds: f64,
    pub steps: usize,
    pub routing: Option<RoutingStats>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochMetrics>,
    /// Task loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
}

/// Windows covering a dataset. Models supervising every step get
/// non-overlapping windows of `context` steps ending at the episode's last
/// step and at every `context`-th step before `len - 1 - phase`; the others
/// get one window per timestep.
pub fn tile_windows(model: &SeqModel, d: &Dataset, phase_seed: Option<u64>) -> Vec<WindowRef> {
    let k = model.context();
    let mut rng = phase_seed.map(ChaCha8Rng::seed_from_u64);
    let mut out = Vec::new();
    for (episode, e) in d.episodes.iter().enumerate() {
        let len = e.len();
        if len == 0 {
            continue;
        }
        if !model.kind().supervises_every_step() {
            out.extend((0..len).map(|end| WindowRef { episode, end }));
            continue;
        }
        let phase = rng.as_mut().map_or(0, |r| r.gen_range(0..k));
        out.push(WindowRef { episode, end: len - 1 });
        let mut end = len as isize - 1 - phase as isize;
        if phase == 0 {
            end -= k as isize;
        }
        while end >= 0 {
            out.push(WindowRef { episode, end: end as usize });
            end -= k as isize;
        }
    }
    out
}

struct Acc {
    grads: Vec<f64>,
    loss: f64,
    routing: Option<RoutingStats>,
    err: Option<Error>,
}

impl Acc {
    fn absorb(&mut self, s: SampleLoss) {
        self.loss += s.loss;
        if let Some(r) = s.routing {
            match &mut self.routing {
                Some(t) => t.merge(&r),
                None => self.routing = Some(r),
            }
        }
    }

    fn merge(&mut self, other: Acc) {
        par::add_assign(&mut self.grads, &other.grads);
        self.loss += other.loss;
        if self.err.is_none() {
            self.err = other.err;
        }
        if let Some(r) = other.routing {
            match &mut self.routing {
                Some(t) => t.merge(&r),
                None => self.routing = Some(r),
            }
        }
    }
}

/// Samples folded per work unit; fixed so results never depend on threads.
const CHUNK: usize = 2;

fn batch_gradient(model: &SeqModel, d: &Dataset, batch: &[WindowRef], exec: Execution) -> Result<Acc> {
    let n = model.n_params();
    let p = &model.params.values;
    let acc = par::chunked_fold(
        exec,
        batch.len(),
        CHUNK,
        || Acc { grads: vec![0.0; n], loss: 0.0, routing: None, err: None },
        |acc, i| {
            if acc.err.is_some() {
                return;
            }
            let w = batch[i];
            match model.sample_loss(p, &d.episodes[w.episode], w.end, Some(&mut acc.grads)) {
                Ok(s) => acc.absorb(s),
                Err(e) => acc.err = Some(e),
            }
        },
        Acc::merge,
    );
    match acc.err {
        Some(e) => Err(e),
        None => Ok(acc),
    }
}

/// One step's gradient (mean over the batch) and mean task loss.
pub fn batch_loss_and_grad(model: &SeqModel, d: &Dataset, batch: &[WindowRef], exec: Execution) -> Result<(f64, Vec<f64>)> {
    let mut acc = batch_gradient(model, d, batch, exec)?;
    let inv = 1.0 / batch.len() as f64;
    acc.grads.iter_mut().for_each(|g| *g *= inv);
    Ok((acc.loss * inv, acc.grads))
}

/// Mean task loss over `windows` (all windows of `d` when `None`).
pub fn evaluate_loss(model: &SeqModel, d: &Dataset, windows: Option<&[WindowRef]>, exec: Execution) -> Result<f64> {
    let owned;
    let windows = match windows {
        Some(w) => w,
        None => {
            owned = tile_windows(model, d, None);
            &owned
        }
    };
    if windows.is_empty() {
        return Err(Error::Config("no windows to evaluate".into()));
    }
    let p = &model.params.values;
    let losses = par::map(exec, windows, |w| model.sample_loss(p, &d.episodes[w.episode], w.end, None).map(|s| s.loss));
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / windows.len() as f64)
}

/// Trains `model` in place. Window order depends only on `cfg.seed`, the
/// dataset and the model's context, so dense and switch variants with the
/// same context see identical batches.
pub fn train(model: &mut SeqModel, train: &Dataset, val: Option<&Dataset>, cfg: &TrainConfig) -> Result<TrainReport> {
    model.check_dataset(train)?;
    if let Some(v) = val {
        model.check_dataset(v)?;
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let val_windows = val.map(|v| {
        let mut w = tile_windows(model, v, None);
        if let Some(cap) = cfg.max_val_windows {
            if w.len() > cap {
                w.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, u64::MAX)));
                w.truncate(cap);
            }
        }
        w
    });
    let mut opt = Adam::new(cfg.adam, model.n_params());
    let mut report = TrainReport::default();
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let epoch_seed = mix_seed(cfg.seed, epoch as u64);
        let mut windows = tile_windows(model, train, Some(epoch_seed));
        if windows.is_empty() {
            return Err(Error::Config("training dataset has no timesteps".into()));
        }
        windows.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed ^ 0x5EED));
        let mut batches: Vec<&[WindowRef]> = windows.chunks(cfg.batch_size).collect();
        if let Some(cap) = cfg.max_batches_per_epoch {
            batches.truncate(cap.max(1));
        }
        let mut loss_sum = 0.0;
        let mut routing: Option<RoutingStats> = None;
        for batch in &batches {
            let acc = batch_gradient(model, train, batch, cfg.exec)?;
            let inv = 1.0 / batch.len() as f64;
            let mut grads = acc.grads;
            grads.iter_mut().for_each(|g| *g *= inv);
            if let Some(c) = cfg.grad_clip {
                clip_grad_norm(&mut grads, c);
            }
            opt.step(&mut model.params.values, &grads);
            let step_loss = acc.loss * inv;
            report.step_losses.push(step_loss);
            loss_sum += step_loss;
            if let Some(r) = acc.routing {
                match &mut routing {
                    Some(t) => t.merge(&r),
                    None => routing = Some(r),
                }
            }
        }
        let val_loss = match (&val, &val_windows) {
            (Some(v), Some(w)) if !w.is_empty() => Some(evaluate_loss(model, v, Some(w), cfg.exec)?),
            _ => None,
        };
        report.epochs.push(EpochMetrics {
            epoch,
            train_loss: loss_sum / batches.len() as f64,
            val_loss,
            wall_seconds: start.elapsed().as_secs_f64(),
            steps: batches.len(),
            routing,
        });
    }
    Ok(report)
}
