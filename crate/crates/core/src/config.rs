//! Plain-text run configuration: `key = value` lines, `#` comments.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::network::NetworkConfig;
use crate::training::TrainConfig;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pub network: NetworkConfig,
    pub train: TrainConfig,
}

pub const KEYS: [&str; 20] = [
    "arch",
    "depth",
    "width",
    "mode",
    "interleave",
    "bn_strategy",
    "num_classes",
    "input_shape",
    "norm",
    "epochs",
    "batch_size",
    "lr0",
    "momentum",
    "weight_decay",
    "lr_drop_points",
    "seed",
    "train_subset",
    "test_subset",
    "augment",
    "record_time",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key} = {value:?}: {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn parse_subset(key: &str, value: &str) -> Result<Option<usize>> {
    match value {
        "all" => Ok(None),
        v => parse(key, v).map(Some),
    }
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Sets one declared key; unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (n, t) = (&mut self.network, &mut self.train);
        match key {
            "arch" => n.arch = parse(key, value)?,
            "depth" => n.depth = parse(key, value)?,
            "width" => n.width = parse(key, value)?,
            "mode" => n.mode = parse(key, value)?,
            "interleave" => n.interleave = parse(key, value)?,
            "bn_strategy" => n.bn_strategy = parse(key, value)?,
            "num_classes" => n.num_classes = parse(key, value)?,
            "input_shape" => {
                let dims: Vec<usize> = parse_list(key, value)?;
                n.input_shape = dims.try_into().map_err(|_| {
                    Error::Config(format!("input_shape needs three values, got {value:?}"))
                })?;
            }
            "norm" => n.norm = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "lr0" => t.lr0 = parse(key, value)?,
            "momentum" => t.momentum = parse(key, value)?,
            "weight_decay" => t.weight_decay = parse(key, value)?,
            "lr_drop_points" => t.lr_drop_points = parse_list(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "train_subset" => t.train_subset = parse_subset(key, value)?,
            "test_subset" => t.test_subset = parse_subset(key, value)?,
            "augment" => t.augment = parse(key, value)?,
            "record_time" => t.record_time = parse(key, value)?,
            _ => {
                return Err(Error::Config(format!(
                    "unknown key {key:?}; expected one of {}",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for item in overrides {
            let item = item.as_ref();
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {item:?} is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn parse_text(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        Self::parse_text(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.train.validate()
    }

    pub fn to_text(&self) -> String {
        let (n, t) = (&self.network, &self.train);
        let subset = |s: Option<usize>| s.map_or("all".to_string(), |v| v.to_string());
        let mut s = String::new();
        let pairs: [(&str, String); 20] = [
            ("arch", n.arch.to_string()),
            ("depth", n.depth.to_string()),
            ("width", n.width.to_string()),
            ("mode", n.mode.to_string()),
            ("interleave", n.interleave.to_string()),
            ("bn_strategy", n.bn_strategy.to_string()),
            ("num_classes", n.num_classes.to_string()),
            ("input_shape", join(&n.input_shape)),
            ("norm", n.norm.to_string()),
            ("epochs", t.epochs.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("lr0", t.lr0.to_string()),
            ("momentum", t.momentum.to_string()),
            ("weight_decay", t.weight_decay.to_string()),
            ("lr_drop_points", join(&t.lr_drop_points)),
            ("seed", t.seed.to_string()),
            ("train_subset", subset(t.train_subset)),
            ("test_subset", subset(t.test_subset)),
            ("augment", t.augment.to_string()),
            ("record_time", t.record_time.to_string()),
        ];
        for (k, v) in pairs {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}
