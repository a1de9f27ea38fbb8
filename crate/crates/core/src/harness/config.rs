//! Flat `key = value` run configuration with strict unknown-key rejection.
//!
//! Every knob any module consumes lives here, and every run echoes its fully
//! resolved configuration (defaults included) into the output directory; the
//! echoed file is itself loadable.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::models::Family;
use crate::variational::KlMode;

pub const CONFIG_HEADER: &str = "# latentlm config v1";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: expected `key = value`, got {text:?}")]
    BadLine { line: usize, text: String },
    #[error("line {line}: bad value for {key}: {reason}")]
    BadValue { line: usize, key: String, reason: String },
    #[error("missing required key {0:?}")]
    Missing(&'static str),
    #[error("{0}")]
    Invalid(String),
}

/// Inference method: the training-loop dispatch key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Inference {
    Em,
    DirectMarginal,
    VariationalEm,
    Svi,
    Vae,
    WakeSleep,
}

impl Inference {
    pub fn parse(s: &str) -> Option<Inference> {
        match s {
            "em" => Some(Inference::Em),
            "direct-marginal" => Some(Inference::DirectMarginal),
            "variational-em" => Some(Inference::VariationalEm),
            "svi" => Some(Inference::Svi),
            "vae" => Some(Inference::Vae),
            "wake-sleep" => Some(Inference::WakeSleep),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Inference::Em => "em",
            Inference::DirectMarginal => "direct-marginal",
            Inference::VariationalEm => "variational-em",
            Inference::Svi => "svi",
            Inference::Vae => "vae",
            Inference::WakeSleep => "wake-sleep",
        }
    }
}

/// Gradient-estimator flag for VAE-style training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    /// Exact enumeration for categorical latents, reparameterization for
    /// Gaussian latents (the per-family default).
    Exact,
    Score,
    Reparam,
    Concrete,
}

impl EstimatorKind {
    pub fn parse(s: &str) -> Option<EstimatorKind> {
        match s {
            "exact" => Some(EstimatorKind::Exact),
            "score" => Some(EstimatorKind::Score),
            "reparam" => Some(EstimatorKind::Reparam),
            "concrete" => Some(EstimatorKind::Concrete),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::Exact => "exact",
            EstimatorKind::Score => "score",
            EstimatorKind::Reparam => "reparam",
            EstimatorKind::Concrete => "concrete",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowKind {
    None,
    Planar,
    Iaf,
}

impl FlowKind {
    pub fn parse(s: &str) -> Option<FlowKind> {
        match s {
            "none" => Some(FlowKind::None),
            "planar" => Some(FlowKind::Planar),
            "iaf" => Some(FlowKind::Iaf),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FlowKind::None => "none",
            FlowKind::Planar => "planar",
            FlowKind::Iaf => "iaf",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn parse(s: &str) -> Option<OptimizerKind> {
        match s {
            "sgd" => Some(OptimizerKind::Sgd),
            "adam" => Some(OptimizerKind::Adam),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }
}

/// Resolved run configuration. Defaults are the shipped desk scale:
/// V = 50, K = 4, d = 16, T cap 20, N = 5000.
#[derive(Debug, Clone)]
pub struct Config {
    pub family: Family,
    pub k: usize,
    pub latent_dim: usize,
    pub vocab_size: usize,
    pub t_cap: usize,
    pub inference: Inference,
    pub estimator: EstimatorKind,
    pub iwae_k: usize,
    pub is_k: usize,
    pub train_samples: usize,
    pub eval_samples: usize,
    pub beta: f64,
    pub beta_warmup: usize,
    pub free_bits: f64,
    pub kl_mode: KlMode,
    pub concrete_tau: f64,
    pub flow: FlowKind,
    pub flow_depth: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub svi_steps: usize,
    pub svi_lr: f64,
    pub refine_steps: usize,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub n_sentences: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub state_emb_dim: usize,
    pub mlp_hidden: usize,
    pub wake_per_sleep: usize,
    pub corpus: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub run_id: String,
    pub init_checkpoint: Option<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            family: Family::NaiveBayes,
            k: 4,
            latent_dim: 16,
            vocab_size: 50,
            t_cap: 20,
            inference: Inference::Em,
            estimator: EstimatorKind::Exact,
            iwae_k: 10,
            is_k: 1000,
            train_samples: 1,
            eval_samples: 16,
            beta: 1.0,
            beta_warmup: 0,
            free_bits: 0.0,
            kl_mode: KlMode::Categorical,
            concrete_tau: 0.5,
            flow: FlowKind::None,
            flow_depth: 4,
            optimizer: OptimizerKind::Adam,
            lr: 1e-3,
            svi_steps: 20,
            svi_lr: 0.1,
            refine_steps: 20,
            seed: 0,
            epochs: 10,
            batch_size: 32,
            n_sentences: 5000,
            embed_dim: 8,
            hidden_dim: 16,
            state_emb_dim: 8,
            mlp_hidden: 16,
            wake_per_sleep: 1,
            corpus: None,
            vocab: None,
            out_dir: PathBuf::from("out"),
            run_id: String::from("run"),
            init_checkpoint: None,
        }
    }
}

impl Config {
    pub fn parse_str(text: &str) -> Result<Config, ConfigError> {
        let mut cfg = Config::default();
        let mut seen = BTreeSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::BadLine { line: lineno, text: raw.to_string() });
            };
            let key = key.trim();
            let value = value.trim();
            seen.insert(key.to_string());
            cfg.apply(key, value, lineno)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        Config::parse_str(&std::fs::read_to_string(path)?)
    }

    fn apply(&mut self, key: &str, value: &str, line: usize) -> Result<(), ConfigError> {
        fn bad(line: usize, key: &str, reason: impl ToString) -> ConfigError {
            ConfigError::BadValue { line, key: key.to_string(), reason: reason.to_string() }
        }
        macro_rules! num {
            ($t:ty) => {
                value.parse::<$t>().map_err(|e| bad(line, key, e))?
            };
        }
        match key {
            "family" => {
                self.family = Family::parse(value).ok_or_else(|| bad(line, key, "unknown family"))?
            }
            "k" => self.k = num!(usize),
            "latent_dim" => self.latent_dim = num!(usize),
            "vocab_size" => self.vocab_size = num!(usize),
            "t_cap" => self.t_cap = num!(usize),
            "inference" => {
                self.inference =
                    Inference::parse(value).ok_or_else(|| bad(line, key, "unknown inference method"))?
            }
            "estimator" => {
                self.estimator =
                    EstimatorKind::parse(value).ok_or_else(|| bad(line, key, "unknown estimator"))?
            }
            "iwae_k" => self.iwae_k = num!(usize),
            "is_k" => self.is_k = num!(usize),
            "train_samples" => self.train_samples = num!(usize),
            "eval_samples" => self.eval_samples = num!(usize),
            "beta" => self.beta = num!(f64),
            "beta_warmup" => self.beta_warmup = num!(usize),
            "free_bits" => self.free_bits = num!(f64),
            "kl_mode" => {
                self.kl_mode = match value {
                    "categorical" => KlMode::Categorical,
                    "concrete" => KlMode::Concrete,
                    _ => return Err(bad(line, key, "expected categorical|concrete")),
                }
            }
            "concrete_tau" => self.concrete_tau = num!(f64),
            "flow" => {
                self.flow = FlowKind::parse(value).ok_or_else(|| bad(line, key, "unknown flow kind"))?
            }
            "flow_depth" => self.flow_depth = num!(usize),
            "optimizer" => {
                self.optimizer =
                    OptimizerKind::parse(value).ok_or_else(|| bad(line, key, "unknown optimizer"))?
            }
            "lr" => self.lr = num!(f64),
            "svi_steps" => self.svi_steps = num!(usize),
            "svi_lr" => self.svi_lr = num!(f64),
            "refine_steps" => self.refine_steps = num!(usize),
            "seed" => self.seed = num!(u64),
            "epochs" => self.epochs = num!(usize),
            "batch_size" => self.batch_size = num!(usize),
            "n_sentences" => self.n_sentences = num!(usize),
            "embed_dim" => self.embed_dim = num!(usize),
            "hidden_dim" => self.hidden_dim = num!(usize),
            "state_emb_dim" => self.state_emb_dim = num!(usize),
            "mlp_hidden" => self.mlp_hidden = num!(usize),
            "wake_per_sleep" => self.wake_per_sleep = num!(usize),
            "corpus" => self.corpus = Some(PathBuf::from(value)),
            "vocab" => self.vocab = Some(PathBuf::from(value)),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "run_id" => self.run_id = value.to_string(),
            "init_checkpoint" => self.init_checkpoint = Some(PathBuf::from(value)),
            _ => return Err(ConfigError::UnknownKey { line, key: key.to_string() }),
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if self.k == 0 || self.vocab_size < 3 || self.t_cap == 0 || self.batch_size == 0 {
            return Err(ConfigError::Invalid(
                "k, t_cap, and batch_size must be positive; vocab_size must be at least 3".into(),
            ));
        }
        if self.concrete_tau <= 0.0 {
            return Err(ConfigError::Invalid("concrete_tau must be positive".into()));
        }
        Ok(())
    }

    /// Output directory, resolved against the `LATENTLM_OUT_ROOT` environment
    /// variable when relative.
    pub fn resolved_out_dir(&self) -> PathBuf {
        if self.out_dir.is_absolute() {
            return self.out_dir.clone();
        }
        match std::env::var_os("LATENTLM_OUT_ROOT") {
            Some(root) => PathBuf::from(root).join(&self.out_dir),
            None => self.out_dir.clone(),
        }
    }

    /// Fully resolved echo, loadable by [`Config::parse_str`]. Every key the
    /// toolkit consumes appears here.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{CONFIG_HEADER}");
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("family", self.family.name().into());
        kv("k", self.k.to_string());
        kv("latent_dim", self.latent_dim.to_string());
        kv("vocab_size", self.vocab_size.to_string());
        kv("t_cap", self.t_cap.to_string());
        kv("inference", self.inference.name().into());
        kv("estimator", self.estimator.name().into());
        kv("iwae_k", self.iwae_k.to_string());
        kv("is_k", self.is_k.to_string());
        kv("train_samples", self.train_samples.to_string());
        kv("eval_samples", self.eval_samples.to_string());
        kv("beta", self.beta.to_string());
        kv("beta_warmup", self.beta_warmup.to_string());
        kv("free_bits", self.free_bits.to_string());
        kv(
            "kl_mode",
            match self.kl_mode {
                KlMode::Categorical => "categorical".into(),
                KlMode::Concrete => "concrete".into(),
            },
        );
        kv("concrete_tau", self.concrete_tau.to_string());
        kv("flow", self.flow.name().into());
        kv("flow_depth", self.flow_depth.to_string());
        kv("optimizer", self.optimizer.name().into());
        kv("lr", self.lr.to_string());
        kv("svi_steps", self.svi_steps.to_string());
        kv("svi_lr", self.svi_lr.to_string());
        kv("refine_steps", self.refine_steps.to_string());
        kv("seed", self.seed.to_string());
        kv("epochs", self.epochs.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("n_sentences", self.n_sentences.to_string());
        kv("embed_dim", self.embed_dim.to_string());
        kv("hidden_dim", self.hidden_dim.to_string());
        kv("state_emb_dim", self.state_emb_dim.to_string());
        kv("mlp_hidden", self.mlp_hidden.to_string());
        kv("wake_per_sleep", self.wake_per_sleep.to_string());
        if let Some(p) = &self.corpus {
            kv("corpus", p.display().to_string());
        }
        if let Some(p) = &self.vocab {
            kv("vocab", p.display().to_string());
        }
        kv("out_dir", self.out_dir.display().to_string());
        kv("run_id", self.run_id.clone());
        if let Some(p) = &self.init_checkpoint {
            kv("init_checkpoint", p.display().to_string());
        }
        s
    }

    pub fn write_echo(&self, path: &Path) -> Result<(), ConfigError> {
        std::fs::write(path, self.echo())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_round_trips_through_echo() {
        let text = "family = hmm\nk = 3\nseed = 7\nlr = 0.05\ninference = direct-marginal\n";
        let cfg = Config::parse_str(text).unwrap();
        assert_eq!(cfg.family, Family::Hmm);
        assert_eq!(cfg.k, 3);
        assert_eq!(cfg.seed, 7);
        let echoed = Config::parse_str(&cfg.echo()).unwrap();
        assert_eq!(echoed.k, cfg.k);
        assert_eq!(echoed.lr, cfg.lr);
        assert_eq!(echoed.inference, cfg.inference);
    }

    #[test]
    fn unknown_key_is_rejected_with_line() {
        let err = Config::parse_str("k = 2\nbogus_knob = 3\n").unwrap_err();
        match err {
            ConfigError::UnknownKey { line, key } => {
                assert_eq!(line, 2);
                assert_eq!(key, "bogus_knob");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let cfg = Config::parse_str("# a comment\n\nk = 5 # trailing\n").unwrap();
        assert_eq!(cfg.k, 5);
    }

    #[test]
    fn out_dir_resolves_against_env_root() {
        // No other test touches this variable, so the set/remove pair is
        // safe despite process-global env state.
        let cfg = Config { out_dir: PathBuf::from("rel/run"), ..Config::default() };
        std::env::set_var("LATENTLM_OUT_ROOT", "/tmp/latentlm-root");
        assert_eq!(cfg.resolved_out_dir(), PathBuf::from("/tmp/latentlm-root/rel/run"));
        std::env::remove_var("LATENTLM_OUT_ROOT");
        assert_eq!(cfg.resolved_out_dir(), PathBuf::from("rel/run"));
        let abs = Config { out_dir: PathBuf::from("/abs/run"), ..Config::default() };
        assert_eq!(abs.resolved_out_dir(), PathBuf::from("/abs/run"));
    }

    #[test]
    fn bad_values_are_reported() {
        assert!(matches!(
            Config::parse_str("epochs = many\n").unwrap_err(),
            ConfigError::BadValue { .. }
        ));
        assert!(matches!(
            Config::parse_str("family = lda\n").unwrap_err(),
            ConfigError::BadValue { .. }
        ));
    }
}
