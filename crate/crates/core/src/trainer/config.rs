use crate::checkpoint::{format_widths, net_manifest, parse_widths, Manifest};
use crate::error::{Error, Result};
use crate::nn::{NetConfig, INIT_SCHEME};
use crate::optim::{self, AdamWConfig, ClipConfig, PlateauScheduler};

pub const DEFAULT_EPOCHS: usize = 17;
pub const DEFAULT_BATCH_SIZE: usize = 32;
pub const DEFAULT_SPLIT_RATIO: f64 = 0.8;
pub const DEFAULT_SEED: u64 = 42;

/// Every hyperparameter of a training run, including the ones that only
/// have conventional defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub split_ratio: f64,
    pub seed: u64,
    pub net: NetConfig,
    pub max_grad_norm: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub scheduler_factor: f64,
    pub scheduler_patience: usize,
    pub scheduler_threshold: f64,
    pub min_lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            learning_rate: optim::DEFAULT_LEARNING_RATE,
            split_ratio: DEFAULT_SPLIT_RATIO,
            seed: DEFAULT_SEED,
            net: NetConfig::default(),
            max_grad_norm: optim::DEFAULT_MAX_GRAD_NORM,
            weight_decay: optim::DEFAULT_WEIGHT_DECAY,
            beta1: optim::DEFAULT_BETA1,
            beta2: optim::DEFAULT_BETA2,
            adam_epsilon: optim::DEFAULT_ADAM_EPSILON,
            scheduler_factor: optim::DEFAULT_PLATEAU_FACTOR,
            scheduler_patience: optim::DEFAULT_PLATEAU_PATIENCE,
            scheduler_threshold: optim::DEFAULT_PLATEAU_THRESHOLD,
            min_lr: optim::DEFAULT_MIN_LR,
        }
    }
}

/// Keys accepted in configuration files, with a short description.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("epochs", "number of training epochs"),
    ("batch_size", "mini-batch size (>= 2)"),
    ("learning_rate", "initial AdamW learning rate"),
    ("split_ratio", "fraction of labeled data used for training"),
    ("seed", "seed for initialization, split, shuffling and dropout"),
    ("widths", "comma-separated layer widths: input, hidden..., 1"),
    ("dropout_p", "dropout probability after every hidden block"),
    ("bn_epsilon", "BatchNorm variance epsilon"),
    ("bn_momentum", "BatchNorm running-statistics momentum"),
    ("max_grad_norm", "global gradient-norm clipping bound"),
    ("weight_decay", "decoupled weight decay (dense weights only)"),
    ("beta1", "AdamW first-moment decay"),
    ("beta2", "AdamW second-moment decay"),
    ("adam_epsilon", "AdamW denominator epsilon"),
    ("scheduler_factor", "plateau learning-rate reduction factor"),
    ("scheduler_patience", "non-improving epochs tolerated before reducing"),
    ("scheduler_threshold", "minimum validation-loss improvement"),
    ("min_lr", "learning-rate floor"),
];

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "epochs" => self.epochs = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "learning_rate" => self.learning_rate = parse_num(key, value)?,
            "split_ratio" => self.split_ratio = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "widths" => {
                let widths = parse_widths(value).map_err(Error::Config)?;
                if widths.len() < 2 || *widths.last().unwrap() != 1 {
                    return Err(Error::Config(format!(
                        "widths must be input,hidden...,1; got {value:?}"
                    )));
                }
                self.net.input_width = widths[0];
                self.net.hidden_widths = widths[1..widths.len() - 1].to_vec();
            }
            "dropout_p" => self.net.dropout_p = parse_num(key, value)?,
            "bn_epsilon" => self.net.bn_epsilon = parse_num(key, value)?,
            "bn_momentum" => self.net.bn_momentum = parse_num(key, value)?,
            "max_grad_norm" => self.max_grad_norm = parse_num(key, value)?,
            "weight_decay" => self.weight_decay = parse_num(key, value)?,
            "beta1" => self.beta1 = parse_num(key, value)?,
            "beta2" => self.beta2 = parse_num(key, value)?,
            "adam_epsilon" => self.adam_epsilon = parse_num(key, value)?,
            "scheduler_factor" => self.scheduler_factor = parse_num(key, value)?,
            "scheduler_patience" => self.scheduler_patience = parse_num(key, value)?,
            "scheduler_threshold" => self.scheduler_threshold = parse_num(key, value)?,
            "min_lr" => self.min_lr = parse_num(key, value)?,
            other => return Err(Error::Config(format!("unknown configuration key {other:?}"))),
        }
        Ok(())
    }

    /// Apply every entry of a parsed `key=value` file.
    pub fn apply(&mut self, manifest: &Manifest) -> Result<()> {
        for (k, v) in manifest.entries() {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(msg.to_string()))
            }
        };
        check(self.epochs >= 1, "epochs must be >= 1")?;
        check(self.batch_size >= 2, "batch_size must be >= 2")?;
        check(
            self.split_ratio > 0.0 && self.split_ratio < 1.0,
            "split_ratio must be in (0, 1)",
        )?;
        check(
            self.learning_rate > 0.0 && self.learning_rate.is_finite(),
            "learning_rate must be positive",
        )?;
        check(self.max_grad_norm > 0.0, "max_grad_norm must be positive")?;
        check(self.weight_decay >= 0.0, "weight_decay must be >= 0")?;
        check((0.0..1.0).contains(&self.beta1), "beta1 must be in [0, 1)")?;
        check((0.0..1.0).contains(&self.beta2), "beta2 must be in [0, 1)")?;
        check(self.adam_epsilon > 0.0, "adam_epsilon must be positive")?;
        check(
            self.scheduler_factor > 0.0 && self.scheduler_factor < 1.0,
            "scheduler_factor must be in (0, 1)",
        )?;
        check(self.scheduler_threshold >= 0.0, "scheduler_threshold must be >= 0")?;
        check(self.min_lr >= 0.0, "min_lr must be >= 0")?;
        Ok(())
    }

    /// Fully resolved run manifest, stable key order.
    pub fn to_manifest(&self) -> Manifest {
        let mut m = Manifest::new();
        m.set("epochs", self.epochs);
        m.set("batch_size", self.batch_size);
        m.set("learning_rate", self.learning_rate);
        m.set("split_ratio", self.split_ratio);
        m.set("seed", self.seed);
        for (k, v) in net_manifest(&self.net).entries() {
            m.set(k.clone(), v);
        }
        m.set("max_grad_norm", self.max_grad_norm);
        m.set("weight_decay", self.weight_decay);
        m.set("beta1", self.beta1);
        m.set("beta2", self.beta2);
        m.set("adam_epsilon", self.adam_epsilon);
        m.set("scheduler_factor", self.scheduler_factor);
        m.set("scheduler_patience", self.scheduler_patience);
        m.set("scheduler_threshold", self.scheduler_threshold);
        m.set("min_lr", self.min_lr);
        m.set("init", INIT_SCHEME);
        m.set("weight_decay_applies_to", "dense_weights");
        m.set("block_order", "dense,batchnorm,relu,dropout");
        m
    }

    pub fn widths_string(&self) -> String {
        format_widths(&self.net.widths())
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.adam_epsilon,
            weight_decay: self.weight_decay,
        }
    }

    pub fn clip(&self) -> ClipConfig {
        ClipConfig {
            max_grad_norm: self.max_grad_norm,
        }
    }

    pub fn scheduler(&self) -> PlateauScheduler {
        PlateauScheduler::new(
            self.scheduler_factor,
            self.scheduler_patience,
            self.min_lr,
            self.scheduler_threshold,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_reference_protocol() {
        let c = TrainConfig::default();
        assert_eq!((c.epochs, c.batch_size), (17, 32));
        assert_eq!(c.learning_rate, 1e-4);
        assert_eq!(c.split_ratio, 0.8);
        assert_eq!((c.scheduler_factor, c.scheduler_patience), (0.5, 3));
        assert_eq!(c.net.dropout_p, 0.3);
        assert_eq!(c.widths_string(), "1536,512,256,128,64,1");
        c.validate().unwrap();
    }

    #[test]
    fn manifest_roundtrips_through_set() {
        let mut c = TrainConfig::default();
        c.set("widths", "32,16,8,4,1").unwrap();
        c.set("learning_rate", "0.003").unwrap();
        c.set("seed", "7").unwrap();
        let m = c.to_manifest();
        let mut back = TrainConfig::default();
        for (k, v) in m.entries() {
            if CONFIG_KEYS.iter().any(|(key, _)| key == k) {
                back.set(k, v).unwrap();
            }
        }
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        let mut c = TrainConfig::default();
        assert!(c.set("epoch", "3").is_err());
        assert!(c.set("epochs", "three").is_err());
        assert!(c.set("widths", "8,4,2").is_err());
        c.set("batch_size", "1").unwrap();
        assert!(c.validate().is_err());
        let c = TrainConfig {
            split_ratio: 1.0,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
