use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};
use switchtt::dataset::{self, collect, mix_seed, prepare_suite, split, Budget, CollectConfig, Dataset};
use switchtt::models::{self, AtomSupport, ModelSpec, SeqModel, TrainConfig, TrainReport};
use switchtt::planner::{check_models, run_episodes, Models, Simulator};

use crate::config::{ExperimentConfig, Method, ModelName};
use crate::metrics;

/// Per-task statistics of a collected dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskStats {
    pub task: String,
    pub episodes: usize,
    pub timesteps: usize,
    pub mean_return: f64,
    pub max_return: f64,
}

pub fn task_stats(d: &Dataset) -> Vec<TaskStats> {
    d.tasks
        .iter()
        .map(|spec| {
            let eps: Vec<_> = d.episodes.iter().filter(|e| e.task_id == spec.task_id).collect();
            let returns: Vec<f64> = eps.iter().map(|e| e.total_return()).collect();
            TaskStats {
                task: spec.to_string(),
                episodes: eps.len(),
                timesteps: eps.iter().map(|e| e.len()).sum(),
                mean_return: mean_std(&returns).0,
                max_return: returns.iter().copied().fold(0.0, f64::max),
            }
        })
        .collect()
}

pub fn collect_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let budget = match cfg.episodes_per_task {
        Some(n) => Budget::Episodes(n),
        None => Budget::Timesteps(cfg.timesteps_per_task),
    };
    let cc = CollectConfig { gamma: cfg.gamma, exec: cfg.exec(), ..CollectConfig::new(budget, cfg.epsilons.clone(), cfg.data_seed) };
    Ok(collect(&cfg.task_specs(), &cc)?)
}

/// Collects the configured suite and writes it to `out`.
pub fn cmd_collect(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<TaskStats>> {
    let d = collect_dataset(cfg)?;
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    dataset::save(&d, out)?;
    Ok(task_stats(&d))
}

pub fn load_dataset(cfg: &ExperimentConfig, path: &Path) -> Result<Dataset> {
    let d = dataset::load(path)?;
    ensure!(
        d.tasks == cfg.task_specs(),
        "{} holds tasks {:?} but the config names {:?}",
        path.display(),
        d.tasks.iter().map(|t| t.to_string()).collect::<Vec<_>>(),
        cfg.tasks.iter().map(|t| t.to_string()).collect::<Vec<_>>()
    );
    Ok(d)
}

/// Specification of `name` for a dataset; `seed` picks the initialization.
pub fn model_spec(cfg: &ExperimentConfig, name: ModelName, d: &Dataset, seed: u64) -> Result<ModelSpec> {
    let n_tasks = d.tasks.iter().map(|t| t.task_id as usize + 1).max().unwrap_or(0);
    let vocab = d.schema.vocab();
    let vmax = d.value_max();
    let init = mix_seed(seed, name.role_index());
    let sw = name.is_switch();
    let main = cfg.transformer(cfg.preset, cfg.context, sw);
    let value = cfg.transformer(cfg.preset, cfg.rtg_window(), sw);
    Ok(match name {
        ModelName::ActionDense | ModelName::ActionSwitch => ModelSpec::action(main, n_tasks, vocab, true, vmax, init),
        ModelName::BcDense => ModelSpec::action(main, n_tasks, vocab, false, vmax, init),
        ModelName::DynamicsDense | ModelName::DynamicsSwitch => ModelSpec::dynamics(main, n_tasks, vocab, init),
        ModelName::RtgDense | ModelName::RtgSwitch => {
            ModelSpec::rtg(value, n_tasks, vocab, AtomSupport::new(cfg.atoms, 0.0, vmax)?, init)
        }
        ModelName::MeanRtgDense => ModelSpec::mean_rtg(value, n_tasks, vocab, vmax, init),
    })
}

pub fn train_config(cfg: &ExperimentConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        adam: cfg.adam(),
        grad_clip: (cfg.grad_clip > 0.0).then_some(cfg.grad_clip),
        max_batches_per_epoch: cfg.max_batches_per_epoch,
        max_val_windows: cfg.max_val_windows,
        seed,
        exec: cfg.exec(),
    }
}

/// Trains one model on `train`, scoring `val` after every epoch.
pub fn train_model(cfg: &ExperimentConfig, name: ModelName, seed: u64, train: &Dataset, val: &Dataset) -> Result<(SeqModel, TrainReport)> {
    let mut model = SeqModel::new(model_spec(cfg, name, train, seed)?)?;
    let report = models::train(&mut model, train, Some(val), &train_config(cfg, seed))?;
    Ok((model, report))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub name: String,
    pub seed: u64,
    pub file: String,
    pub params: usize,
    pub active_params: usize,
}

/// Written next to the checkpoints; ties them to the config snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub dataset: String,
    pub dataset_episodes: usize,
    pub dataset_timesteps: usize,
    pub seeds: Vec<u64>,
    pub models: Vec<ModelEntry>,
}

pub const CONFIG_FILE: &str = "config.toml";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const METRICS_FILE: &str = "metrics.csv";

pub fn checkpoint_file(name: ModelName, seed: u64) -> String {
    format!("checkpoints/{}-s{seed}.ckpt", name.name())
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Trains every model the configured methods need, for every seed, and
/// writes checkpoints, `metrics.csv`, the config snapshot and a manifest.
pub fn cmd_train(cfg: &ExperimentConfig, dataset_path: &Path, out: &Path) -> Result<RunManifest> {
    let d = load_dataset(cfg, dataset_path)?;
    let (train, val) = split(&d, cfg.train_fraction, cfg.data_seed)?;
    fs::create_dir_all(out.join("checkpoints")).with_context(|| format!("creating {}", out.display()))?;
    write(&out.join(CONFIG_FILE), &cfg.to_toml())?;
    let mut rows = Vec::new();
    let mut entries = Vec::new();
    for &seed in &cfg.seeds {
        for name in cfg.required_models() {
            let (model, report) = train_model(cfg, name, seed, &train, &val)?;
            let file = checkpoint_file(name, seed);
            model.save(out.join(&file))?;
            rows.extend(metrics::rows_from_report(seed, name.name(), &report));
            entries.push(ModelEntry {
                name: name.name().into(),
                seed,
                file,
                params: model.n_params(),
                active_params: model.active_params_per_token(),
            });
        }
    }
    metrics::write_csv(&out.join(METRICS_FILE), &rows)?;
    let manifest = RunManifest {
        dataset: dataset_path.display().to_string(),
        dataset_episodes: d.episodes.len(),
        dataset_timesteps: d.n_timesteps(),
        seeds: cfg.seeds.clone(),
        models: entries,
    };
    write(&out.join(MANIFEST_FILE), &toml::to_string(&manifest)?)?;
    Ok(manifest)
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRow {
    pub method: Method,
    pub task: String,
    pub seed: u64,
    pub episode: usize,
    pub ret: f64,
}

/// Mean over seeds of each seed's mean return, with the standard deviation
/// across seeds. The `average` task row averages tasks within each seed first.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub method: Method,
    pub task: String,
    pub mean: f64,
    pub std: f64,
    pub seeds: usize,
    pub episodes: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub episodes: Vec<EpisodeRow>,
    pub summary: Vec<SummaryRow>,
}

pub const AVERAGE: &str = "average";

pub fn summarize(rows: &[EpisodeRow]) -> Vec<SummaryRow> {
    // method -> task -> seed -> returns
    let mut by: BTreeMap<Method, BTreeMap<String, BTreeMap<u64, Vec<f64>>>> = BTreeMap::new();
    let mut task_order: Vec<String> = Vec::new();
    for r in rows {
        if !task_order.contains(&r.task) {
            task_order.push(r.task.clone());
        }
        by.entry(r.method).or_default().entry(r.task.clone()).or_default().entry(r.seed).or_default().push(r.ret);
    }
    let mut out = Vec::new();
    let methods: Vec<Method> = rows.iter().fold(Vec::new(), |mut acc, r| {
        if !acc.contains(&r.method) {
            acc.push(r.method);
        }
        acc
    });
    for method in methods {
        let tasks = &by[&method];
        let mut per_seed_avg: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
        let mut episodes_total = 0;
        for task in task_order.iter().filter(|t| tasks.contains_key(*t)) {
            let seeds = &tasks[task];
            let means: Vec<f64> = seeds.values().map(|v| mean_std(v).0).collect();
            for (seed, m) in seeds.keys().zip(&means) {
                per_seed_avg.entry(*seed).or_default().push(*m);
            }
            let episodes = seeds.values().map(Vec::len).sum();
            episodes_total += episodes;
            let (mean, std) = mean_std(&means);
            out.push(SummaryRow { method, task: task.clone(), mean, std, seeds: seeds.len(), episodes });
        }
        let avgs: Vec<f64> = per_seed_avg.values().map(|v| mean_std(v).0).collect();
        let (mean, std) = mean_std(&avgs);
        out.push(SummaryRow { method, task: AVERAGE.into(), mean, std, seeds: avgs.len(), episodes: episodes_total });
    }
    out
}

/// Episode seeds for evaluation; disjoint in practice from collection seeds.
pub fn eval_seeds(seed: u64, task: u16, episodes: usize) -> Vec<u64> {
    let base = mix_seed(mix_seed(seed, 0xE7A1), task as u64);
    (0..episodes as u64).map(|e| mix_seed(base, e)).collect()
}

fn load_model(run: &Path, name: Option<ModelName>, seed: u64) -> Result<Option<SeqModel>> {
    name.map(|n| {
        let path = run.join(checkpoint_file(n, seed));
        SeqModel::load(&path).with_context(|| format!("loading {} (was it trained for this method grid?)", path.display()))
    })
    .transpose()
}

/// Runs `eval_episodes` episodes per method, task and seed with the
/// checkpoints stored in `run`.
pub fn evaluate(cfg: &ExperimentConfig, run: &Path) -> Result<EvalReport> {
    let specs = cfg.task_specs();
    let (schema, instances) = prepare_suite(&specs)?;
    let sim = Simulator::new(schema, instances.iter().cloned());
    let mut episodes = Vec::new();
    for &method in &cfg.methods {
        let planner = cfg.planner(method.mode());
        for &seed in &cfg.seeds {
            let (a, f, v) = method.models();
            let (a, f, v) = (load_model(run, a, seed)?, load_model(run, f, seed)?, load_model(run, v, seed)?);
            let models = match method {
                Method::Oracle => Models::greedy(&sim),
                Method::Random => Models::none(),
                _ => {
                    check_models(method.mode(), a.as_ref(), f.as_ref(), v.as_ref())?;
                    for m in [&a, &f, &v].into_iter().flatten() {
                        ensure!(m.spec.net.state_vocab == schema.vocab(), "checkpoint vocabulary does not match the task suite");
                    }
                    Models {
                        action: a.as_ref().map(|m| m as _),
                        dynamics: f.as_ref().map(|m| m as _),
                        value: v.as_ref().map(|m| m as _),
                    }
                }
            };
            for inst in &instances {
                let seeds = eval_seeds(seed, inst.spec.task_id, cfg.eval_episodes);
                let returns = run_episodes(&planner, models, inst, &schema, &seeds)?;
                episodes.extend(returns.into_iter().enumerate().map(|(episode, ret)| EpisodeRow {
                    method,
                    task: inst.spec.to_string(),
                    seed,
                    episode,
                    ret,
                }));
            }
        }
    }
    let summary = summarize(&episodes);
    Ok(EvalReport { episodes, summary })
}

pub const EPISODES_FILE: &str = "eval_episodes.csv";
pub const SUMMARY_FILE: &str = "eval_summary.csv";

/// Evaluates a run directory and writes per-episode returns and the summary
/// table into `out` (the run directory when `None`).
pub fn cmd_eval(cfg: &ExperimentConfig, run: &Path, out: Option<&Path>) -> Result<EvalReport> {
    let report = evaluate(cfg, run)?;
    let out: PathBuf = out.unwrap_or(run).to_path_buf();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    metrics::write_episodes(&out.join(EPISODES_FILE), &report.episodes)?;
    metrics::write_summary(&out.join(SUMMARY_FILE), &report.summary)?;
    Ok(report)
}

/// Reads the config snapshot of a run directory, applying overrides.
pub fn run_config(run: &Path, overrides: &[String]) -> Result<ExperimentConfig> {
    let path = run.join(CONFIG_FILE);
    if !path.exists() {
        bail!("{} has no {CONFIG_FILE}; is it a training run directory?", run.display());
    }
    ExperimentConfig::load(&path, ExperimentConfig::default(), overrides)
}

pub fn format_summary(rows: &[SummaryRow]) -> String {
    let mut s = format!("{:<10} {:<24} {:>8} {:>8} {:>6} {:>9}\n", "method", "task", "mean", "std", "seeds", "episodes");
    for r in rows {
        s += &format!("{:<10} {:<24} {:>8.4} {:>8.4} {:>6} {:>9}\n", r.method.label(), r.task, r.mean, r.std, r.seeds, r.episodes);
    }
    s
}

pub fn format_stats(stats: &[TaskStats]) -> String {
    let mut s = format!("{:<24} {:>8} {:>10} {:>12} {:>11}\n", "task", "episodes", "timesteps", "mean_return", "max_return");
    for t in stats {
        s += &format!("{:<24} {:>8} {:>10} {:>12.4} {:>11.4}\n", t.task, t.episodes, t.timesteps, t.mean_return, t.max_return);
    }
    s
}
