use std::time::Instant;

use anyhow::Result;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use switchtt::dataset::{mix_seed, Dataset};
use switchtt::models::{batch_loss_and_grad, tile_windows, ModelSpec, SeqModel, WindowRef};
use switchtt::nn::{clip_grad_norm, Adam, Preset};
use switchtt::Execution;

use crate::config::{ExperimentConfig, ModelName};
use crate::pipeline::model_spec;

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub preset: Preset,
    pub ffn: &'static str,
    pub total_params: usize,
    pub active_params: usize,
    pub ms_per_step: f64,
    /// First step whose 10-step running mean loss reaches the target.
    pub steps_to_target: Option<usize>,
    pub final_loss: f64,
    /// Spec fields differing from the dense model of the same preset.
    pub differs_in: Vec<String>,
}

/// Dotted paths of the leaves where two TOML values differ.
pub fn toml_diff(a: &toml::Value, b: &toml::Value, prefix: &str, out: &mut Vec<String>) {
    match (a, b) {
        (toml::Value::Table(x), toml::Value::Table(y)) => {
            let mut keys: Vec<&String> = x.keys().chain(y.keys()).collect();
            keys.sort();
            keys.dedup();
            for k in keys {
                let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                match (x.get(k), y.get(k)) {
                    (Some(u), Some(v)) => toml_diff(u, v, &path, out),
                    _ => out.push(path),
                }
            }
        }
        _ if a != b => out.push(prefix.to_string()),
        _ => {}
    }
}

fn spec_value(spec: &ModelSpec) -> toml::Value {
    toml::Value::try_from(spec).expect("model spec serializes")
}

/// Fixed batch order shared by every model with the same context.
fn batches(model: &SeqModel, d: &Dataset, batch: usize, steps: usize, seed: u64) -> Vec<Vec<WindowRef>> {
    let mut out = Vec::with_capacity(steps);
    let mut round = 0u64;
    while out.len() < steps {
        let mut w = tile_windows(model, d, Some(mix_seed(seed, round)));
        w.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, round) ^ 0xB3));
        out.extend(w.chunks(batch).map(<[WindowRef]>::to_vec));
        round += 1;
    }
    out.truncate(steps);
    out
}

const RUNNING: usize = 10;

/// Times `cfg.bench_steps` optimizer steps of the return-conditioned action
/// model, dense and switch, at every preset in `cfg.bench_presets`. Timing
/// runs on one worker.
pub fn cmd_bench(cfg: &ExperimentConfig, d: &Dataset) -> Result<Vec<BenchRow>> {
    let seed = cfg.seeds[0];
    let mut rows = Vec::new();
    for &preset in &cfg.bench_presets {
        let pcfg = ExperimentConfig { preset, ..cfg.clone() };
        let mut dense_spec = None;
        for name in [ModelName::ActionDense, ModelName::ActionSwitch] {
            let spec = model_spec(&pcfg, name, d, seed)?;
            let mut model = SeqModel::new(spec.clone())?;
            model.check_dataset(d)?;
            let mut diff = Vec::new();
            match &dense_spec {
                None => dense_spec = Some(spec_value(&spec)),
                Some(base) => toml_diff(base, &spec_value(&spec), "", &mut diff),
            }
            let plan = batches(&model, d, cfg.batch_size, cfg.bench_steps, seed);
            let mut opt = Adam::new(cfg.adam(), model.n_params());
            let mut losses = Vec::with_capacity(plan.len());
            let mut seconds = 0.0;
            for b in &plan {
                let start = Instant::now();
                let (loss, mut g) = batch_loss_and_grad(&model, d, b, Execution::Sequential)?;
                if cfg.grad_clip > 0.0 {
                    clip_grad_norm(&mut g, cfg.grad_clip);
                }
                opt.step(&mut model.params.values, &g);
                seconds += start.elapsed().as_secs_f64();
                losses.push(loss);
            }
            let steps_to_target = (1..=losses.len()).find(|&n| {
                let w = &losses[n.saturating_sub(RUNNING)..n];
                w.iter().sum::<f64>() / w.len() as f64 <= cfg.bench_target_loss
            });
            rows.push(BenchRow {
                preset,
                ffn: if name.is_switch() { "switch" } else { "dense" },
                total_params: model.n_params(),
                active_params: model.active_params_per_token(),
                ms_per_step: 1e3 * seconds / plan.len().max(1) as f64,
                steps_to_target,
                final_loss: losses.last().copied().unwrap_or(f64::NAN),
                differs_in: diff,
            });
        }
    }
    Ok(rows)
}

pub fn format_bench(rows: &[BenchRow]) -> String {
    let mut s = format!(
        "{:<7} {:<7} {:>10} {:>10} {:>9} {:>9} {:>10}  differs_in\n",
        "preset", "ffn", "params", "active", "ms/step", "to_target", "final_loss"
    );
    for r in rows {
        let to = r.steps_to_target.map_or("never".to_string(), |n| n.to_string());
        s += &format!(
            "{:<7} {:<7} {:>10} {:>10} {:>9.2} {:>9} {:>10.4}  {}\n",
            format!("{:?}", r.preset).to_lowercase(),
            r.ffn,
            r.total_params,
            r.active_params,
            r.ms_per_step,
            to,
            r.final_loss,
            r.differs_in.join(" ")
        );
    }
    s
}

/// CSV form of the report; `ms_per_step` is the only non-deterministic column.
pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from("preset,ffn,total_params,active_params,ms_per_step,steps_to_target,final_loss,differs_in\n");
    for r in rows {
        s += &format!(
            "{},{},{},{},{},{},{},{}\n",
            format!("{:?}", r.preset).to_lowercase(),
            r.ffn,
            r.total_params,
            r.active_params,
            r.ms_per_step,
            r.steps_to_target.map_or(String::new(), |n| n.to_string()),
            r.final_loss,
            r.differs_in.join(";")
        );
    }
    s
}
