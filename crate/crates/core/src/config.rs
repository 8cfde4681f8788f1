//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::LossWeights;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arm {
    Base,
    Vertical,
    Horizontal,
    Full,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::Base, Arm::Vertical, Arm::Horizontal, Arm::Full];

    pub fn name(self) -> &'static str {
        match self {
            Arm::Base => "base",
            Arm::Vertical => "v",
            Arm::Horizontal => "h",
            Arm::Full => "full",
        }
    }

    /// Loss weights of the arm given the configured strengths.
    pub fn weights(self, lambda_o: f64, lambda_a: f64) -> LossWeights {
        match self {
            Arm::Base => LossWeights { lambda_o: 0.0, lambda_a: 0.0 },
            Arm::Vertical => LossWeights { lambda_o, lambda_a: 0.0 },
            Arm::Horizontal => LossWeights { lambda_o: 0.0, lambda_a },
            Arm::Full => LossWeights { lambda_o, lambda_a },
        }
    }
}

impl FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Arm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("arm must be one of base, v, h, full; got {s:?}")))
    }
}

macro_rules! run_config {
    ($( $(#[$doc:meta])* $field:ident : $ty:ty = $default:expr ),* $(,)?) => {
        /// Every knob of a run. Unset keys keep their defaults.
        #[derive(Debug, Clone, PartialEq)]
        pub struct RunConfig {
            $( $(#[$doc])* pub $field: $ty, )*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                Self { $( $field: $default, )* }
            }
        }

        impl RunConfig {
            pub const KEYS: &'static [&'static str] = &[$( stringify!($field), )*];

            /// Sets one key from its text form; unknown keys are rejected.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                let key = key.trim().to_ascii_lowercase();
                let value = value.trim();
                match key.as_str() {
                    $( stringify!($field) => {
                        self.$field = <$ty as ConfigValue>::parse(value).map_err(|e| {
                            Error::Config(format!("bad value {value:?} for `{key}`: {e}"))
                        })?;
                    } )*
                    _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
                }
                Ok(())
            }

            /// All keys in declaration order, one `key = value` per line.
            pub fn to_text(&self) -> String {
                let mut out = String::new();
                $( writeln!(out, "{} = {}", stringify!($field), self.$field.render()).unwrap(); )*
                out
            }
        }
    };
}

trait ConfigValue: Sized {
    fn parse(s: &str) -> std::result::Result<Self, String>;
    fn render(&self) -> String;
}

macro_rules! plain_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse(s: &str) -> std::result::Result<Self, String> {
                s.parse::<$t>().map_err(|e| e.to_string())
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

plain_value!(usize, u64, f64, String);

impl ConfigValue for Arm {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        s.parse().map_err(|e: Error| e.to_string())
    }
    fn render(&self) -> String {
        self.name().to_string()
    }
}

impl ConfigValue for PathBuf {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        Ok(PathBuf::from(s))
    }
    fn render(&self) -> String {
        self.display().to_string()
    }
}

run_config! {
    /// Base seed for data splits, initialization and batch order.
    seed: u64 = 0,
    arm: Arm = Arm::Full,
    /// Directory holding the ratings and review-embedding files.
    data_dir: PathBuf = PathBuf::from("data"),
    /// Directory receiving checkpoints, logs and reports.
    out_dir: PathBuf = PathBuf::from("out"),
    /// File names inside `data_dir`.
    source_ratings: String = "source.tsv".into(),
    target_ratings: String = "target.tsv".into(),
    source_user_reviews: String = "source_users.cfae".into(),
    source_item_reviews: String = "source_items.cfae".into(),
    target_user_reviews: String = "target_users.cfae".into(),
    target_item_reviews: String = "target_items.cfae".into(),
    /// Checkpoint name inside `out_dir`.
    checkpoint: String = "model.ckpt".into(),
    threshold: f64 = 4.0,
    min_records: usize = 30,
    target_keep_fraction: f64 = 1.0,
    /// Review width used when featurizing texts.
    d_rev: usize = 16,
    d: usize = 16,
    /// Hidden width of the predictor head; 0 means `d`.
    hidden: usize = 0,
    /// Fixed nonlinearity between the fusion layers.
    activation: String = "tanh".into(),
    batch_size: usize = 128,
    /// Typical samples per attribution; 0 means `batch_size / 2`.
    k: usize = 0,
    alpha: f64 = 0.1,
    nu: f64 = 0.1,
    /// Coupling regularization as a fraction of the mean ground cost.
    epsilon: f64 = 0.05,
    lambda_o: f64 = 0.5,
    lambda_a: f64 = 0.8,
    lr: f64 = 1e-3,
    epochs: usize = 5,
    /// Steps per epoch; 0 means one pass over the target training split.
    steps_per_epoch: usize = 0,
    eval_negatives: usize = 99,
    eval_k: usize = 10,
    probe_folds: usize = 5,
    probe_iterations: usize = 300,
    synth_users: usize = 2000,
    synth_items: usize = 500,
    synth_latent_dim: usize = 8,
    synth_clusters: usize = 6,
    synth_angle: f64 = std::f64::consts::FRAC_PI_3,
    synth_translation: f64 = 1.0,
    synth_positive_rate: f64 = 0.2,
    synth_density: f64 = 0.08,
    synth_target_density: f64 = 0.04,
    synth_label_noise: f64 = 0.5,
    synth_review_noise: f64 = 0.3,
}

impl RunConfig {
    /// Parses `key = value` lines over the defaults; `#` starts a comment.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                file: "config".into(),
                line: n + 1,
                message: format!("expected `key = value`, got {line:?}"),
            })?;
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text).map_err(|e| match e {
            Error::Parse { line, message, .. } => Error::Parse {
                file: path.display().to_string(),
                line,
                message,
            },
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.activation != "tanh" {
            return bad(format!("activation must be tanh, got {:?}", self.activation));
        }
        if self.d < 2 || self.d_rev == 0 || self.batch_size < 2 {
            return bad("d and batch_size must be at least 2, d_rev at least 1".into());
        }
        if self.k > self.batch_size {
            return bad(format!("k={} exceeds batch_size={}", self.k, self.batch_size));
        }
        for (name, v) in [("alpha", self.alpha), ("nu", self.nu), ("epsilon", self.epsilon), ("lr", self.lr)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.lambda_o >= 0.0 && self.lambda_a >= 0.0) {
            return bad("loss weights must be nonnegative".into());
        }
        if !(self.target_keep_fraction > 0.0 && self.target_keep_fraction <= 1.0) {
            return bad("target_keep_fraction must lie in (0, 1]".into());
        }
        if self.eval_k == 0 || self.probe_folds < 2 {
            return bad("eval_k must be positive and probe_folds at least 2".into());
        }
        Ok(())
    }

    pub fn weights(&self) -> LossWeights {
        self.arm.weights(self.lambda_o, self.lambda_a)
    }

    pub fn proxies(&self) -> usize {
        if self.k == 0 {
            (self.batch_size / 2).max(1)
        } else {
            self.k
        }
    }

    pub fn hidden_width(&self) -> usize {
        if self.hidden == 0 {
            self.d
        } else {
            self.hidden
        }
    }
}
