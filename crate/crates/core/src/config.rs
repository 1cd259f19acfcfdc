//! Flat `key = value` experiment configuration.
//!
//! Values are resolved from, in increasing precedence: built-in defaults, a
//! config file, `KCGC_<KEY>` environment variables and explicit overrides.
//! Unknown keys are rejected everywhere. [`ExperimentConfig::to_text`] emits
//! every key, so a resolved file alone reproduces a run.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::EvalConfig;
use crate::kgdata::Part;
use crate::model::{MaskMode, ModelConfig};
use crate::objectives::{LossWeights, ScoreVariant};
use crate::training::TrainConfig;
use crate::vocab::TokenizerMode;

pub const ENV_PREFIX: &str = "KCGC_";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub tokenizer: TokenizerMode,
    /// `vocab_size` is filled in from the data at run time.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub eval_split: Part,
    /// Checkpoint used by `eval`/`predict`; defaults to `<out_dir>/model.ckpt`.
    pub checkpoint: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("runs/default"),
            seed: 0,
            tokenizer: TokenizerMode::Char,
            model: ModelConfig::new(0),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            eval_split: Part::Test,
            checkpoint: None,
        }
    }
}

/// Named ablations: each maps to a fixed set of key assignments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ablation {
    /// Drop the local (mutual-information) constraint.
    Local,
    /// Drop the global (translational) constraint.
    Global,
    /// Replace the role-separating mask.
    Mask,
}

impl std::str::FromStr for Ablation {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "local" => Ok(Self::Local),
            "global" => Ok(Self::Global),
            "mask" => Ok(Self::Mask),
            o => Err(format!("unknown ablation `{o}` (local|global|mask)")),
        }
    }
}

impl Ablation {
    pub fn assignments(self) -> &'static [(&'static str, &'static str)] {
        match self {
            Ablation::Local => &[("beta", "0")],
            Ablation::Global => &[("alpha", "0")],
            Ablation::Mask => &[("mask_mode", "no_mask")],
        }
    }
}

/// Every accepted key, in output order.
pub const KEYS: &[&str] = &[
    "data_dir",
    "out_dir",
    "seed",
    "tokenizer",
    "n_layers",
    "n_heads",
    "d_model",
    "d_ff",
    "max_seq_len",
    "mask_mode",
    "tie_embeddings",
    "lr",
    "batch_size",
    "epochs",
    "optimizer",
    "clip_norm",
    "checkpoint_every",
    "component_grad_norms",
    "patience",
    "eval_every",
    "alpha",
    "beta",
    "gamma",
    "score",
    "jsd_form",
    "margin",
    "eval_mode",
    "candidates",
    "decoder",
    "beam_width",
    "top_k",
    "filtered",
    "length_threshold",
    "eval_split",
    "checkpoint",
];

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| Error::config(key, format!("cannot parse `{v}`: {e}")))
}

fn boolean(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::config(key, format!("expected true/false, got `{v}`"))),
    }
}

/// Parses a unit enum through its serde name.
fn named<T: DeserializeOwned>(key: &str, v: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(v.to_string()))
        .map_err(|e| Error::config(key, format!("invalid value `{v}`: {e}")))
}

fn name_of<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        other => panic!("not a unit enum: {other:?}"),
    }
}

/// Shortest round-trip representation.
fn float(x: f64) -> String {
    format!("{x:?}")
}

impl ExperimentConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let m = &mut self.model;
        let t = &mut self.train;
        let w: &mut LossWeights = &mut t.weights;
        let e = &mut self.eval;
        match key {
            "data_dir" => self.data_dir = PathBuf::from(v),
            "out_dir" => self.out_dir = PathBuf::from(v),
            "seed" => {
                self.seed = num(key, v)?;
                t.seed = self.seed;
            }
            "tokenizer" => self.tokenizer = named(key, v)?,
            "n_layers" => m.n_layers = num(key, v)?,
            "n_heads" => m.n_heads = num(key, v)?,
            "d_model" => m.d_model = num(key, v)?,
            "d_ff" => m.d_ff = num(key, v)?,
            "max_seq_len" => m.max_seq_len = num(key, v)?,
            "mask_mode" => m.mask_mode = v.parse::<MaskMode>().map_err(|e| Error::config(key, e))?,
            "tie_embeddings" => m.tie_embeddings = boolean(key, v)?,
            "lr" => t.lr = num(key, v)?,
            "batch_size" => t.batch_size = num(key, v)?,
            "epochs" => t.epochs = num(key, v)?,
            "optimizer" => t.optimizer = named(key, v)?,
            "clip_norm" => t.clip_norm = num(key, v)?,
            "checkpoint_every" => t.checkpoint_every = num(key, v)?,
            "component_grad_norms" => t.component_grad_norms = boolean(key, v)?,
            "patience" => t.patience = num(key, v)?,
            "eval_every" => t.eval_every = num(key, v)?,
            "alpha" => w.alpha = num(key, v)?,
            "beta" => w.beta = num(key, v)?,
            "gamma" => w.gamma = num(key, v)?,
            "score" => w.score_variant = v.parse::<ScoreVariant>().map_err(|e| Error::config(key, e))?,
            "jsd_form" => w.jsd_form = named(key, v)?,
            "margin" => w.margin = boolean(key, v)?,
            "eval_mode" => e.mode = named(key, v)?,
            "candidates" => e.candidates = v.parse().map_err(|e: String| Error::config(key, e))?,
            "decoder" => e.decoder = named(key, v)?,
            "beam_width" => e.beam_width = num(key, v)?,
            "top_k" => e.top_k = num(key, v)?,
            "filtered" => e.filtered = boolean(key, v)?,
            "length_threshold" => e.length_threshold = num(key, v)?,
            "eval_split" => self.eval_split = named(key, v)?,
            "checkpoint" => self.checkpoint = (!v.is_empty()).then(|| PathBuf::from(v)),
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<String> {
        let (m, t, e) = (&self.model, &self.train, &self.eval);
        let w = &t.weights;
        Ok(match key {
            "data_dir" => self.data_dir.display().to_string(),
            "out_dir" => self.out_dir.display().to_string(),
            "seed" => self.seed.to_string(),
            "tokenizer" => name_of(&self.tokenizer),
            "n_layers" => m.n_layers.to_string(),
            "n_heads" => m.n_heads.to_string(),
            "d_model" => m.d_model.to_string(),
            "d_ff" => m.d_ff.to_string(),
            "max_seq_len" => m.max_seq_len.to_string(),
            "mask_mode" => m.mask_mode.to_string(),
            "tie_embeddings" => m.tie_embeddings.to_string(),
            "lr" => float(t.lr),
            "batch_size" => t.batch_size.to_string(),
            "epochs" => t.epochs.to_string(),
            "optimizer" => name_of(&t.optimizer),
            "clip_norm" => float(t.clip_norm),
            "checkpoint_every" => t.checkpoint_every.to_string(),
            "component_grad_norms" => t.component_grad_norms.to_string(),
            "patience" => t.patience.to_string(),
            "eval_every" => t.eval_every.to_string(),
            "alpha" => float(w.alpha),
            "beta" => float(w.beta),
            "gamma" => float(w.gamma),
            "score" => w.score_variant.to_string(),
            "jsd_form" => name_of(&w.jsd_form),
            "margin" => w.margin.to_string(),
            "eval_mode" => name_of(&e.mode),
            "candidates" => name_of(&e.candidates),
            "decoder" => name_of(&e.decoder),
            "beam_width" => e.beam_width.to_string(),
            "top_k" => e.top_k.to_string(),
            "filtered" => e.filtered.to_string(),
            "length_threshold" => e.length_threshold.to_string(),
            "eval_split" => name_of(&self.eval_split),
            "checkpoint" => self.checkpoint.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            _ => return Err(Error::config(key, "unknown key")),
        })
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::config(line, format!("line {}: expected `key = value`", n + 1)));
            };
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    /// Applies every `KCGC_<KEY>` variable; any other `KCGC_` name is an
    /// unknown key.
    pub fn apply_env<I: IntoIterator<Item = (String, String)>>(&mut self, vars: I) -> Result<()> {
        let mut vars: Vec<(String, String)> = vars
            .into_iter()
            .filter(|(k, _)| k.starts_with(ENV_PREFIX) && k != "KCGC_LOG")
            .collect();
        vars.sort();
        for (k, v) in vars {
            self.set(&k[ENV_PREFIX.len()..].to_ascii_lowercase(), &v)?;
        }
        Ok(())
    }

    /// Applies `key=value` override strings.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let Some((k, v)) = o.split_once('=') else {
                return Err(Error::config(o, "override must look like key=value"));
            };
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn apply_ablation(&mut self, a: Ablation) -> Result<()> {
        for (k, v) in a.assignments() {
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Defaults, then file, then environment, then overrides.
    pub fn resolve<I, S>(file: Option<&Path>, env: I, overrides: &[S]) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
        S: AsRef<str>,
    {
        let mut c = ExperimentConfig::default();
        if let Some(p) = file {
            c.apply_file(p)?;
        }
        c.apply_env(env)?;
        c.apply_overrides(overrides)?;
        Ok(c)
    }

    /// Every key with its resolved value.
    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("listed key")))
            .collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out_dir.join("model.ckpt"))
    }

    /// Sanity checks that need no data.
    pub fn validate(&self) -> Result<()> {
        self.train
            .validate()
            .map_err(|e| Error::config("train", e.to_string()))?;
        let m = &self.model;
        if m.d_model == 0 || m.n_heads == 0 || !m.d_model.is_multiple_of(m.n_heads) {
            return Err(Error::config("n_heads", "d_model must be a positive multiple of n_heads"));
        }
        if self.eval.top_k == 0 || self.eval.beam_width < self.eval.top_k {
            return Err(Error::config("beam_width", "need beam_width >= top_k >= 1"));
        }
        Ok(())
    }
}
