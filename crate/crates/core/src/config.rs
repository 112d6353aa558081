//! Flat `key = value` experiment configuration.
//!
//! Every tunable of every module lives here. Lines starting with `#` are
//! comments; unknown and duplicate keys are errors. The content hash is
//! computed over the canonical rendering (keys sorted), so it does not
//! depend on the order keys appear in a file.

use std::fmt::Write as _;
use std::path::Path;

use crate::learners::{LossConfig, NetSpec, TargetMode};
use crate::seeding::{fnv1a, FNV_OFFSET};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("key {0:?} given twice")]
    Duplicate(String),
    #[error("bad value for {key}: {reason}")]
    Value { key: String, reason: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot read config: {0}")]
    Io(String),
}

/// A value that can appear on the right of `=`.
pub trait ConfigValue: Sized {
    fn parse_value(s: &str) -> Result<Self, String>;
    fn render(&self) -> String;
}

macro_rules! plain_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> Result<Self, String> {
                s.parse().map_err(|e| format!("{e}"))
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}
plain_value!(u64, usize, bool, String);

impl ConfigValue for f64 {
    fn parse_value(s: &str) -> Result<Self, String> {
        let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err("must be finite".into())
        }
    }
    // shortest representation that parses back to the same bits
    fn render(&self) -> String {
        format!("{self:?}")
    }
}

impl ConfigValue for Vec<usize> {
    fn parse_value(s: &str) -> Result<Self, String> {
        if s.trim().is_empty() {
            return Ok(Vec::new());
        }
        s.split(',').map(|x| x.trim().parse::<usize>().map_err(|e| format!("{e}"))).collect()
    }
    fn render(&self) -> String {
        self.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
    }
}

impl ConfigValue for Vec<u64> {
    fn parse_value(s: &str) -> Result<Self, String> {
        if s.trim().is_empty() {
            return Ok(Vec::new());
        }
        s.split(',').map(|x| x.trim().parse::<u64>().map_err(|e| format!("{e}"))).collect()
    }
    fn render(&self) -> String {
        self.iter().map(u64::to_string).collect::<Vec<_>>().join(",")
    }
}

impl ConfigValue for TargetMode {
    fn parse_value(s: &str) -> Result<Self, String> {
        s.parse()
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

/// How the latent is fixed at adaptation time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZMode {
    Mean,
    Sample,
}

impl ConfigValue for ZMode {
    fn parse_value(s: &str) -> Result<Self, String> {
        match s {
            "mean" => Ok(ZMode::Mean),
            "sample" => Ok(ZMode::Sample),
            o => Err(format!("expected mean or sample, got {o:?}")),
        }
    }
    fn render(&self) -> String {
        match self {
            ZMode::Mean => "mean",
            ZMode::Sample => "sample",
        }
        .into()
    }
}

/// Where offline meta-training data comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OfflineSource {
    /// Scripted demonstrator with a decaying skill-noise schedule plus
    /// exploration noise.
    Scripted,
    /// Replay buffers of DDPG-from-demos runs, replayed with noise.
    Ddpgfd,
}

impl ConfigValue for OfflineSource {
    fn parse_value(s: &str) -> Result<Self, String> {
        match s {
            "scripted" => Ok(OfflineSource::Scripted),
            "ddpgfd" => Ok(OfflineSource::Ddpgfd),
            o => Err(format!("expected scripted or ddpgfd, got {o:?}")),
        }
    }
    fn render(&self) -> String {
        match self {
            OfflineSource::Scripted => "scripted",
            OfflineSource::Ddpgfd => "ddpgfd",
        }
        .into()
    }
}

/// Float width of every learned network and optimiser state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl ConfigValue for Precision {
    fn parse_value(s: &str) -> Result<Self, String> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            o => Err(format!("expected f32 or f64, got {o:?}")),
        }
    }
    fn render(&self) -> String {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
        .into()
    }
}

macro_rules! experiment_config {
    ($( $(#[doc = $doc:literal])* $field:ident : $ty:ty = $default:expr, $key:literal; )*) => {
        /// Every hyperparameter and seed of a run.
        #[derive(Debug, Clone, PartialEq)]
        pub struct ExperimentConfig {
            $( $(#[doc = $doc])* pub $field: $ty, )*
        }

        impl Default for ExperimentConfig {
            fn default() -> Self {
                ExperimentConfig { $( $field: $default, )* }
            }
        }

        impl ExperimentConfig {
            /// All keys with their one-line documentation, in declaration order.
            pub const KEYS: &'static [(&'static str, &'static str)] = &[ $( ($key, concat!($($doc),*)), )* ];

            fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
                match key {
                    $( $key => {
                        self.$field = <$ty as ConfigValue>::parse_value(value)
                            .map_err(|reason| ConfigError::Value { key: key.to_string(), reason })?;
                    } )*
                    other => return Err(ConfigError::UnknownKey(other.to_string())),
                }
                Ok(())
            }

            fn entries(&self) -> Vec<(&'static str, String)> {
                vec![ $( ($key, self.$field.render()), )* ]
            }
        }
    };
}

experiment_config! {
    /// Master seed; every stochastic stream derives from it by name.
    seed: u64 = 0, "seed";
    /// Seed of the task-family sampler.
    family_seed: u64 = 7, "family.seed";
    /// Training tasks.
    n_train: usize = 8, "family.n_train";
    /// Held-out in-distribution test tasks.
    n_test: usize = 3, "family.n_test";
    /// Out-of-distribution test tasks (clearance below the training range).
    n_ood: usize = 2, "family.n_ood";
    /// Demonstration episodes per task.
    demos_per_task: usize = 20, "data.demos_per_task";
    /// Offline episodes per training task.
    offline_episodes: usize = 500, "data.offline_episodes";
    /// Skill noise of the scripted demonstrator when recording demos.
    demo_skill: f64 = 0.1, "data.demo_skill";
    /// Skill noise of the offline collector on its first episode.
    offline_skill_start: f64 = 6.0, "data.offline_skill_start";
    /// Skill noise of the offline collector on its last episode.
    offline_skill_end: f64 = 0.0, "data.offline_skill_end";
    /// Exploration noise of the offline collector, as a fraction of a_max.
    exploration_frac: f64 = 0.3, "data.exploration_frac";
    /// Uniform start-pose noise half-width, mm.
    start_noise_mm: f64 = 1.0, "data.start_noise_mm";
    /// Standard deviation of wrench sensor noise (0 disables).
    sensor_noise_std: f64 = 0.0, "data.sensor_noise_std";
    /// Offline data provenance: scripted or ddpgfd.
    offline_source: OfflineSource = OfflineSource::Scripted, "data.offline_source";
    /// Latent width.
    d_z: usize = 5, "net.d_z";
    /// Encoder factor-network hidden widths.
    factor_hidden: Vec<usize> = vec![64, 64], "net.factor_hidden";
    /// Actor hidden widths.
    actor_hidden: Vec<usize> = vec![128, 128], "net.actor_hidden";
    /// Critic hidden widths.
    critic_hidden: Vec<usize> = vec![128, 128], "net.critic_hidden";
    /// Lower log-std bound, normalised action units.
    log_std_min: f64 = -5.0, "net.log_std_min";
    /// Upper log-std bound, normalised action units.
    log_std_max: f64 = 0.0, "net.log_std_max";
    /// Discount.
    gamma: f64 = 0.99, "loss.gamma";
    /// Advantage temperature.
    lambda: f64 = 0.3, "loss.lambda";
    /// KL weight.
    beta: f64 = 0.1, "loss.beta";
    /// Upper bound on advantage weights.
    weight_clip: f64 = 20.0, "loss.weight_clip";
    /// Policy samples in the advantage baseline.
    n_action_samples: usize = 4, "loss.n_action_samples";
    /// Bootstrap action: dataset_action or policy_action.
    target_mode: TargetMode = TargetMode::DatasetAction, "loss.target_mode";
    /// Meta-training iterations.
    iterations: usize = 20_000, "train.iterations";
    /// Demo transitions per context.
    context_size: usize = 32, "train.context_size";
    /// Offline transitions per task per iteration.
    batch_size: usize = 256, "train.batch_size";
    /// Encoder learning rate.
    lr_encoder: f64 = 3e-4, "train.lr_encoder";
    /// Actor learning rate.
    lr_actor: f64 = 3e-4, "train.lr_actor";
    /// Critic learning rate.
    lr_critic: f64 = 3e-4, "train.lr_critic";
    /// Polyak factor of the target critic.
    polyak: f64 = 0.995, "train.polyak";
    /// Bootstrap from a Polyak-averaged target critic (false: from the live critic).
    use_target: bool = true, "train.use_target";
    /// Float width of networks and optimisers: f32 or f64.
    precision: Precision = Precision::F64, "train.precision";
    /// Iterations between log rows.
    log_every: usize = 100, "train.log_every";
    /// Fix z to the posterior mean or to a seeded sample.
    z_mode: ZMode = ZMode::Mean, "adapt.z_mode";
    /// Evaluation episodes per task.
    n_eval: usize = 100, "eval.n_episodes";
    /// Base seed of evaluation episodes.
    eval_seed: u64 = 1_000_003, "eval.seed";
    /// Success fraction that counts as solving a task.
    solve_threshold: f64 = 0.95, "solve.threshold";
    /// Episodes in one solves-task check.
    solve_n_eval: usize = 20, "solve.n_eval";
    /// Online episode budget for finetuning methods.
    finetune_budget: usize = 300, "finetune.budget";
    /// Episodes between solves-task checks.
    check_every: usize = 5, "finetune.check_every";
    /// Pre-seed the online buffer with the task's demos.
    preseed_demos: bool = true, "finetune.preseed_demos";
    /// Gradient updates after each online episode.
    updates_per_episode: usize = 20, "finetune.updates_per_episode";
    /// Minibatch size during finetuning.
    finetune_batch_size: usize = 256, "finetune.batch_size";
    /// Pooled AWAC offline iterations.
    awac_iterations: usize = 20_000, "awac.iterations";
    /// Behaviour-cloning iterations.
    bc_iterations: usize = 3_000, "bc.iterations";
    /// Behaviour-cloning learning rate.
    bc_lr: f64 = 1e-3, "bc.lr";
    /// Behaviour-cloning minibatch size.
    bc_batch_size: usize = 256, "bc.batch_size";
    /// DDPG-from-demos exploration noise, fraction of a_max.
    ddpg_noise: f64 = 0.2, "ddpgfd.noise";
    /// DDPG-from-demos actor learning rate.
    ddpg_lr_actor: f64 = 1e-4, "ddpgfd.lr_actor";
    /// DDPG-from-demos critic learning rate.
    ddpg_lr_critic: f64 = 1e-3, "ddpgfd.lr_critic";
    /// DDPG-from-demos gradient updates per episode.
    ddpg_updates_per_episode: usize = 20, "ddpgfd.updates_per_episode";
    /// DDPG-from-demos minibatch size.
    ddpg_batch_size: usize = 256, "ddpgfd.batch_size";
    /// DDPG-from-demos actor and critic hidden widths.
    ddpg_hidden: Vec<usize> = vec![128, 128], "ddpgfd.hidden";
    /// Offline episodes replayed from each DDPG-from-demos run in ddpgfd mode.
    ddpg_replay_episodes: usize = 200, "ddpgfd.replay_episodes";
    /// Nested training-set sizes for the scaling study.
    scaling_sizes: Vec<usize> = vec![1, 3, 5, 7, 9, 11], "scaling.sizes";
    /// Seeds of the scaling study.
    scaling_seeds: Vec<u64> = vec![0, 1, 2], "scaling.seeds";
    /// Meta-training iterations per scaling cell.
    scaling_iterations: usize = 20_000, "scaling.iterations";
    /// Output directory.
    out_dir: String = "results".to_string(), "out";
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ExperimentConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax { line: i + 1, reason: format!("expected key = value, got {line:?}") })?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err(ConfigError::Duplicate(k.to_string()));
            }
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let p = path.as_ref();
        let text = std::fs::read_to_string(p).map_err(|e| ConfigError::Io(format!("{}: {e}", p.display())))?;
        Self::parse(&text)
    }

    /// Apply `key = value` overrides on top of this config.
    pub fn with_overrides(&self, pairs: &[(&str, &str)]) -> Result<Self, ConfigError> {
        let mut cfg = self.clone();
        for (k, v) in pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical text: every key, sorted, one per line.
    pub fn render(&self) -> String {
        let mut e = self.entries();
        e.sort_by(|a, b| a.0.cmp(b.0));
        let mut out = String::new();
        for (k, v) in e {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Rendering in declaration order with each key's documentation above it.
    pub fn render_documented(&self) -> String {
        let mut out = String::new();
        for ((k, v), (_, doc)) in self.entries().into_iter().zip(Self::KEYS) {
            let _ = writeln!(out, "# {doc}\n{k} = {v}\n");
        }
        out
    }

    pub fn hash(&self) -> u64 {
        fnv1a(FNV_OFFSET, self.render().as_bytes())
    }

    pub fn hash_hex(&self) -> String {
        format!("{:016x}", self.hash())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        self.loss_config().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.n_train == 0 {
            return bad("family.n_train must be at least 1");
        }
        if self.demos_per_task == 0 {
            return bad("data.demos_per_task must be at least 1");
        }
        if self.context_size == 0 || self.batch_size == 0 || self.finetune_batch_size == 0 || self.bc_batch_size == 0 || self.ddpg_batch_size == 0 {
            return bad("context and batch sizes must be at least 1");
        }
        if self.start_noise_mm < 0.0 || self.sensor_noise_std < 0.0 || self.exploration_frac < 0.0 {
            return bad("noise levels must be non-negative");
        }
        if self.demo_skill < 0.0 || self.offline_skill_start < 0.0 || self.offline_skill_end < 0.0 {
            return bad("skill noise must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.polyak) {
            return bad("train.polyak must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.solve_threshold) {
            return bad("solve.threshold must lie in [0, 1]");
        }
        if self.solve_n_eval == 0 || self.n_eval == 0 || self.check_every == 0 {
            return bad("evaluation counts and check interval must be at least 1");
        }
        if self.log_std_min >= self.log_std_max {
            return bad("net.log_std_min must be below net.log_std_max");
        }
        for lr in [self.lr_encoder, self.lr_actor, self.lr_critic, self.bc_lr, self.ddpg_lr_actor, self.ddpg_lr_critic] {
            if lr <= 0.0 {
                return bad("learning rates must be positive");
            }
        }
        if self.scaling_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return bad("scaling.sizes must be strictly increasing");
        }
        Ok(())
    }

    pub fn net_spec(&self) -> NetSpec {
        NetSpec {
            d_z: self.d_z,
            factor_hidden: self.factor_hidden.clone(),
            actor_hidden: self.actor_hidden.clone(),
            critic_hidden: self.critic_hidden.clone(),
            log_std_min: self.log_std_min,
            log_std_max: self.log_std_max,
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            gamma: self.gamma,
            lambda: self.lambda,
            beta: self.beta,
            weight_clip: self.weight_clip,
            n_action_samples: self.n_action_samples,
            target_mode: self.target_mode,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_parse_round_trip() {
        let mut c = ExperimentConfig::default();
        c.lambda = 0.1 + 0.2;
        c.actor_hidden = vec![3, 5];
        c.target_mode = TargetMode::PolicyAction;
        let back = ExperimentConfig::parse(&c.render()).unwrap();
        assert_eq!(back, c);
        assert_eq!(ExperimentConfig::parse(&c.render_documented()).unwrap(), c);
    }

    #[test]
    fn hash_ignores_order_and_comments() {
        let a = ExperimentConfig::parse("seed = 3\n# hi\ntrain.iterations = 10\n").unwrap();
        let b = ExperimentConfig::parse("train.iterations=10\n\nseed=3").unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = ExperimentConfig::parse("seed = 4\ntrain.iterations = 10\n").unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn rejects_unknown_duplicate_and_bad_values() {
        assert_eq!(ExperimentConfig::parse("nope = 1"), Err(ConfigError::UnknownKey("nope".into())));
        assert_eq!(ExperimentConfig::parse("seed = 1\nseed = 2"), Err(ConfigError::Duplicate("seed".into())));
        assert!(matches!(ExperimentConfig::parse("loss.lambda = x"), Err(ConfigError::Value { .. })));
        assert!(matches!(ExperimentConfig::parse("loss.lambda = 0"), Err(ConfigError::Invalid(_))));
        assert!(matches!(ExperimentConfig::parse("just words"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(ExperimentConfig::parse("loss.gamma = NaN"), Err(ConfigError::Value { .. })));
    }

    #[test]
    fn every_key_documented_and_unique() {
        let mut keys: Vec<_> = ExperimentConfig::KEYS.iter().map(|k| k.0).collect();
        assert!(ExperimentConfig::KEYS.iter().all(|(_, d)| !d.trim().is_empty()));
        let n = keys.len();
        keys.sort();
        keys.dedup();
        assert_eq!(keys.len(), n);
    }
}
