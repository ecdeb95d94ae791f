//! Training configuration files and override precedence.
//!
//! A config file holds flat `key = value` lines whose keys mirror the
//! training options (and the `train` command's flags). Blank lines and
//! lines starting with `#` are ignored. Values are layered as
//! defaults < file < `DSN_SEED` (seed only) < flags.

use std::collections::BTreeSet;

use lindeform_core::geometry::Plane;
use lindeform_core::nets::Variant;
use lindeform_core::training::TrainConfig;

use crate::{Error, Result};

pub const SEED_ENV: &str = "DSN_SEED";

pub const KEYS: &[&str] = &[
    "n",
    "k",
    "variant",
    "w_sparsity",
    "use_reflection",
    "reflection_plane",
    "project_in_training",
    "learning_rate",
    "epochs",
    "steps_per_epoch",
    "batch_pairs",
    "seed",
    "self_pair_prob",
    "normalize_rotation",
    "encoder_point",
    "encoder_head",
    "dict_point",
    "dict_head",
    "checkpoint_every",
];

#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    pub train: TrainConfig,
    pub use_reflection: bool,
    pub reflection_plane: Plane,
    /// Epochs between periodic checkpoints.
    pub checkpoint_every: usize,
    /// Keys given explicitly by any layer.
    pub explicit: BTreeSet<String>,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            train: TrainConfig::default(),
            use_reflection: false,
            reflection_plane: Plane::X,
            checkpoint_every: 1,
            explicit: BTreeSet::new(),
        }
    }
}

fn usage(msg: String) -> Error {
    Error::Usage(msg)
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| usage(format!("{key}: cannot parse {v:?}")))
}

fn float(key: &str, v: &str) -> Result<f64> {
    let x: f64 = num(key, v)?;
    if !x.is_finite() {
        return Err(usage(format!("{key}: must be finite")));
    }
    Ok(x)
}

fn boolean(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(usage(format!("{key}: expected true or false, got {v:?}"))),
    }
}

fn widths(key: &str, v: &str) -> Result<Vec<usize>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|w| num(key, w.trim())).collect()
}

pub fn parse_plane(v: &str) -> Option<Plane> {
    match v {
        "x" | "X" => Some(Plane::X),
        "y" | "Y" => Some(Plane::Y),
        "z" | "Z" => Some(Plane::Z),
        _ => None,
    }
}

/// Parses a config file into ordered `(key, value)` pairs. Unknown and
/// repeated keys are errors.
pub fn parse_file(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| usage(format!("config line {}: expected key = value", i + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.contains(&key) {
            return Err(usage(format!("config line {}: unknown key {key:?}", i + 1)));
        }
        if out.iter().any(|(k, _)| k == key) {
            return Err(usage(format!("config line {}: {key} given twice", i + 1)));
        }
        out.push((key.to_string(), value.to_string()));
    }
    Ok(out)
}

impl Settings {
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "n" => t.n = num(key, v)?,
            "k" => t.k = num(key, v)?,
            "variant" => t.variant = Variant::parse(v).ok_or_else(|| usage(format!("unknown variant {v:?}")))?,
            "w_sparsity" => t.w_sparsity = float(key, v)?,
            "use_reflection" => self.use_reflection = boolean(key, v)?,
            "reflection_plane" => {
                self.reflection_plane = parse_plane(v).ok_or_else(|| usage(format!("unknown plane {v:?}")))?
            }
            "project_in_training" => t.project_in_training = boolean(key, v)?,
            "learning_rate" => t.learning_rate = float(key, v)?,
            "epochs" => t.epochs = num(key, v)?,
            "steps_per_epoch" => t.steps_per_epoch = Some(num(key, v)?),
            "batch_pairs" => t.batch_pairs = num(key, v)?,
            "seed" => t.seed = num(key, v)?,
            "self_pair_prob" => t.self_pair_prob = float(key, v)?,
            "normalize_rotation" => t.normalize_rotation = boolean(key, v)?,
            "encoder_point" => t.widths.encoder_point = widths(key, v)?,
            "encoder_head" => t.widths.encoder_head = widths(key, v)?,
            "dict_point" => t.widths.dict_point = widths(key, v)?,
            "dict_head" => t.widths.dict_head = widths(key, v)?,
            "checkpoint_every" => self.checkpoint_every = num(key, v)?,
            _ => return Err(usage(format!("unknown key {key:?}"))),
        }
        self.explicit.insert(key.to_string());
        Ok(())
    }

    /// Applies the layers in precedence order.
    pub fn resolve(file: &[(String, String)], env_seed: Option<&str>, flags: &[(String, String)]) -> Result<Settings> {
        let mut s = Settings::default();
        for (k, v) in file {
            s.set(k, v)?;
        }
        if let Some(v) = env_seed {
            s.set("seed", v).map_err(|_| usage(format!("{SEED_ENV}: cannot parse {v:?}")))?;
        }
        for (k, v) in flags {
            s.set(k, v)?;
        }
        Ok(s)
    }

    /// The training configuration for data with `n` points per shape.
    pub fn train_config(&self, n: usize) -> Result<TrainConfig> {
        if self.explicit.contains("n") && self.train.n != n {
            return Err(usage(format!("n = {} but the data has {n} points per shape", self.train.n)));
        }
        let mut cfg = self.train.clone();
        cfg.n = n;
        cfg.reflection = self.use_reflection.then_some(self.reflection_plane);
        if self.checkpoint_every == 0 {
            return Err(usage("checkpoint_every must be positive".into()));
        }
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        Ok(cfg)
    }
}

/// `DSN_SEED` from the environment, if set.
pub fn env_seed() -> Option<String> {
    std::env::var(SEED_ENV).ok()
}

/// Seed for commands other than `train`: flag, then `DSN_SEED`, then
/// `default`.
pub fn resolve_seed(flag: Option<u64>, env: Option<&str>, default: u64) -> Result<u64> {
    match (flag, env) {
        (Some(s), _) => Ok(s),
        (None, Some(v)) => num(SEED_ENV, v),
        (None, None) => Ok(default),
    }
}
