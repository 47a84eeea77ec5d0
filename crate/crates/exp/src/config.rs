use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use switchtt::gridworld::TaskSpec;
use switchtt::models::AtomSupport;
use switchtt::nn::{AdamConfig, FfnKind, Preset, TransformerConfig};
use switchtt::planner::{ImaginedRtg, PlanMode, PlannerConfig};
use switchtt::switch::SwitchConfig;
use switchtt::Execution;

/// Rows of the results table. Each method fixes its feed-forward variant,
/// value head and acting mode; `Oracle` and `Random` need no checkpoints.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    SwitchTT,
    TT,
    #[serde(rename = "TT-DV")]
    TtDv,
    BC,
    DT,
    #[serde(rename = "DT-Switch")]
    DtSwitch,
    Oracle,
    Random,
}

impl Method {
    pub const GRID: [Method; 6] = [Method::SwitchTT, Method::TT, Method::TtDv, Method::BC, Method::DT, Method::DtSwitch];

    pub fn label(self) -> &'static str {
        match self {
            Method::SwitchTT => "SwitchTT",
            Method::TT => "TT",
            Method::TtDv => "TT-DV",
            Method::BC => "BC",
            Method::DT => "DT",
            Method::DtSwitch => "DT-Switch",
            Method::Oracle => "Oracle",
            Method::Random => "Random",
        }
    }

    pub fn mode(self) -> PlanMode {
        match self {
            Method::SwitchTT | Method::TT | Method::TtDv => PlanMode::SwitchPlan,
            Method::BC => PlanMode::Bc,
            Method::DT | Method::DtSwitch | Method::Oracle => PlanMode::DtDirect,
            Method::Random => PlanMode::Random,
        }
    }

    /// Trained models as `(action, dynamics, value)`.
    pub fn models(self) -> (Option<ModelName>, Option<ModelName>, Option<ModelName>) {
        use ModelName::*;
        match self {
            Method::SwitchTT => (Some(ActionSwitch), Some(DynamicsSwitch), Some(RtgSwitch)),
            Method::TT => (Some(ActionDense), Some(DynamicsDense), Some(MeanRtgDense)),
            Method::TtDv => (Some(ActionDense), Some(DynamicsDense), Some(RtgDense)),
            Method::BC => (Some(BcDense), None, None),
            Method::DT => (Some(ActionDense), None, None),
            Method::DtSwitch => (Some(ActionSwitch), None, None),
            Method::Oracle | Method::Random => (None, None, None),
        }
    }
}

/// Every model the method grid can ask for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ModelName {
    ActionDense,
    ActionSwitch,
    BcDense,
    DynamicsDense,
    DynamicsSwitch,
    RtgDense,
    RtgSwitch,
    MeanRtgDense,
}

impl ModelName {
    pub const ALL: [ModelName; 8] = [
        ModelName::ActionDense,
        ModelName::ActionSwitch,
        ModelName::BcDense,
        ModelName::DynamicsDense,
        ModelName::DynamicsSwitch,
        ModelName::RtgDense,
        ModelName::RtgSwitch,
        ModelName::MeanRtgDense,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelName::ActionDense => "action-dense",
            ModelName::ActionSwitch => "action-switch",
            ModelName::BcDense => "bc-dense",
            ModelName::DynamicsDense => "dynamics-dense",
            ModelName::DynamicsSwitch => "dynamics-switch",
            ModelName::RtgDense => "rtg-dense",
            ModelName::RtgSwitch => "rtg-switch",
            ModelName::MeanRtgDense => "meanrtg-dense",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match ModelName::ALL.into_iter().find(|m| m.name() == s) {
            Some(m) => Ok(m),
            None => bail!("unknown model {s:?}"),
        }
    }

    pub fn is_switch(self) -> bool {
        matches!(self, ModelName::ActionSwitch | ModelName::DynamicsSwitch | ModelName::RtgSwitch)
    }

    /// Mixed into the initialization seed. Dense and switch variants of a
    /// role share it, so the two differ only in their feed-forward layers.
    pub fn role_index(self) -> u64 {
        match self {
            ModelName::ActionDense | ModelName::ActionSwitch => 0,
            ModelName::BcDense => 1,
            ModelName::DynamicsDense | ModelName::DynamicsSwitch => 2,
            ModelName::RtgDense | ModelName::RtgSwitch => 3,
            ModelName::MeanRtgDense => 4,
        }
    }
}

/// Everything an experiment needs, read from a flat TOML file. Missing keys
/// take the desk-scale defaults; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Task suite in the compact `family-WxH[@seed][:max=N][:shaped|:binary]` form.
    pub tasks: Vec<TaskSpec>,
    pub timesteps_per_task: usize,
    /// Overrides `timesteps_per_task` with an episode count.
    pub episodes_per_task: Option<usize>,
    pub epsilons: Vec<f64>,
    pub gamma: f64,
    pub data_seed: u64,
    pub train_fraction: f64,

    pub preset: Preset,
    pub context: usize,
    pub n_experts: usize,
    pub top_k: usize,
    pub aux_coef: f64,
    pub atoms: usize,
    /// Context of the value models; follows `horizon` when unset.
    pub rtg_window: Option<usize>,

    pub methods: Vec<Method>,
    pub candidates: usize,
    pub horizon: usize,
    /// `value` or `hold`.
    pub imagined_rtg: String,
    /// Defaults to the suite's largest return (1 sparse, 25 shaped).
    pub target_return: Option<f64>,

    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub max_batches_per_epoch: Option<usize>,
    pub max_val_windows: Option<usize>,

    pub eval_episodes: usize,

    pub bench_presets: Vec<Preset>,
    pub bench_steps: usize,
    pub bench_target_loss: f64,

    /// Use worker threads where available.
    pub parallel: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        ExperimentConfig {
            tasks: ["empty-6x6", "fourrooms-9x9@1", "doorkey-6x6@3"].iter().map(|s| s.parse().expect("valid task")).collect(),
            timesteps_per_task: 50_000,
            episodes_per_task: None,
            epsilons: vec![0.0, 0.3, 1.0],
            gamma: 1.0,
            data_seed: 0,
            train_fraction: 0.8,
            preset: Preset::Small,
            context: 30,
            n_experts: 4,
            top_k: 1,
            aux_coef: 0.01,
            atoms: 101,
            rtg_window: None,
            methods: vec![Method::SwitchTT],
            candidates: 4,
            horizon: 3,
            imagined_rtg: "value".into(),
            target_return: None,
            seeds: vec![0],
            epochs: 10,
            batch_size: 16,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            adam_eps: adam.eps,
            grad_clip: 1.0,
            max_batches_per_epoch: None,
            max_val_windows: None,
            eval_episodes: 100,
            bench_presets: vec![Preset::Small, Preset::Medium, Preset::Large],
            bench_steps: 50,
            bench_target_loss: 1.0,
            parallel: true,
        }
    }
}

/// Named starting points for a config file.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    match name {
        "desk" => Ok(ExperimentConfig::default()),
        "smoke" => Ok(ExperimentConfig::smoke()),
        _ => bail!("unknown config preset {name:?} (expected desk or smoke)"),
    }
}

impl ExperimentConfig {
    /// A seconds-long configuration for checking the plumbing.
    pub fn smoke() -> Self {
        ExperimentConfig {
            tasks: vec!["empty-5x5".parse().expect("valid task")],
            timesteps_per_task: 400,
            context: 4,
            atoms: 11,
            epochs: 2,
            batch_size: 8,
            lr: 1e-3,
            max_batches_per_epoch: Some(3),
            max_val_windows: Some(16),
            eval_episodes: 2,
            candidates: 2,
            horizon: 1,
            bench_presets: vec![Preset::Small],
            bench_steps: 3,
            ..ExperimentConfig::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Self::with_overrides(ExperimentConfig::default(), text, &[])
    }

    /// Reads `text` on top of `base`, then applies `key=value` overrides.
    /// Values parse as TOML and fall back to plain strings.
    pub fn with_overrides(base: ExperimentConfig, text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::Table::try_from(&base).context("serializing base config")?;
        let file: toml::Table = toml::from_str(text).context("parsing config")?;
        table.extend(file);
        for o in overrides {
            let (k, v) = o.split_once('=').with_context(|| format!("override {o:?} is not key=value"))?;
            let value = match toml::from_str::<toml::Table>(&format!("v = {v}")) {
                Ok(mut t) => t.remove("v").expect("parsed key"),
                Err(_) => toml::Value::String(v.to_string()),
            };
            table.insert(k.trim().to_string(), value);
        }
        let cfg: ExperimentConfig = table.try_into().context("invalid config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, base: ExperimentConfig, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::with_overrides(base, &text, overrides).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            bail!("tasks must not be empty");
        }
        if self.seeds.is_empty() {
            bail!("seeds must not be empty");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            bail!("train_fraction must lie in (0, 1)");
        }
        if self.batch_size == 0 || self.context == 0 || self.eval_episodes == 0 {
            bail!("batch_size, context and eval_episodes must be positive");
        }
        if !matches!(self.imagined_rtg.as_str(), "value" | "hold") {
            bail!("imagined_rtg must be value or hold");
        }
        self.switch().validate()?;
        AtomSupport::new(self.atoms, 0.0, 1.0)?;
        self.planner(PlanMode::SwitchPlan).validate()?;
        Ok(())
    }

    /// Task specs with ids assigned by position.
    pub fn task_specs(&self) -> Vec<TaskSpec> {
        self.tasks.iter().enumerate().map(|(i, t)| t.clone().with_task_id(i as u16)).collect()
    }

    pub fn exec(&self) -> Execution {
        if self.parallel {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }

    pub fn switch(&self) -> SwitchConfig {
        SwitchConfig { n_experts: self.n_experts, top_k: self.top_k, aux_coef: self.aux_coef }
    }

    pub fn ffn(&self, switch: bool) -> FfnKind {
        if switch {
            FfnKind::Switch(self.switch())
        } else {
            FfnKind::Dense
        }
    }

    pub fn transformer(&self, preset: Preset, context: usize, switch: bool) -> TransformerConfig {
        TransformerConfig::preset(preset, context, self.ffn(switch))
    }

    pub fn rtg_window(&self) -> usize {
        self.rtg_window.unwrap_or(self.horizon)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.adam_eps }
    }

    pub fn planner(&self, mode: PlanMode) -> PlannerConfig {
        PlannerConfig {
            candidates: self.candidates,
            horizon: self.horizon,
            context: self.context,
            target_return: self.target_return.unwrap_or_else(|| self.value_max()),
            mode,
            imagined_rtg: if self.imagined_rtg == "hold" { ImaginedRtg::Hold } else { ImaginedRtg::Value },
            record: false,
            exec: self.exec(),
        }
    }

    /// Largest return any task of the suite pays.
    pub fn value_max(&self) -> f64 {
        self.tasks.iter().map(|t| t.reward_mode.value_max()).fold(1.0, f64::max)
    }

    /// Models needed by `methods`, in a fixed order.
    pub fn required_models(&self) -> Vec<ModelName> {
        let mut out: Vec<ModelName> = self
            .methods
            .iter()
            .flat_map(|m| {
                let (a, f, v) = m.models();
                [a, f, v]
            })
            .flatten()
            .collect();
        out.sort();
        out.dedup();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        let smoke = ExperimentConfig::smoke();
        assert_eq!(ExperimentConfig::with_overrides(ExperimentConfig::default(), &smoke.to_toml(), &[]).unwrap(), smoke);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::from_toml("epochz = 3").unwrap_err();
        assert!(format!("{err:#}").contains("epochz"), "{err:#}");
    }

    #[test]
    fn overrides_apply_after_the_file() {
        let cfg = ExperimentConfig::with_overrides(
            ExperimentConfig::default(),
            "epochs = 3\nmethods = [\"DT\", \"TT-DV\"]",
            &["epochs=5".into(), "preset=medium".into(), "seeds=[1, 2]".into()],
        )
        .unwrap();
        assert_eq!(cfg.epochs, 5);
        assert_eq!(cfg.preset, Preset::Medium);
        assert_eq!(cfg.seeds, vec![1, 2]);
        assert_eq!(cfg.methods, vec![Method::DT, Method::TtDv]);
        assert_eq!(cfg.required_models(), vec![ModelName::ActionDense, ModelName::DynamicsDense, ModelName::RtgDense]);
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(ExperimentConfig::from_toml("seeds = []").is_err());
        assert!(ExperimentConfig::from_toml("candidates = 9").is_err());
        assert!(ExperimentConfig::from_toml("tasks = [\"maze-5x5\"]").is_err());
        assert!(ExperimentConfig::from_toml("imagined_rtg = \"sometimes\"").is_err());
    }
}
