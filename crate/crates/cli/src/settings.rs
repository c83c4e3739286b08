//! Every tunable of every command, read from `key = value` text. Command
//! line flags are applied after the file, so they win.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use maxca_core::maxca::Projection;
use maxca_core::regnet::{parse_key_values, LossConfig, NetConfig};
use maxca_core::synth::SynthSpec;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub pair: Option<PathBuf>,

    pub net: NetConfig,
    pub no_global: bool,
    pub no_local: bool,
    pub linear_projection: bool,

    pub lr: f64,
    pub iterations: usize,
    pub val_interval: usize,
    pub sigma: f64,
    pub ncc_window: usize,
    pub ncc_eps: f64,
    /// Recorded in checkpoints only; the desk-scale run uses `iterations`.
    pub full_iterations: usize,
    pub full_val_interval: usize,
    /// Extra iterations after the main phase, sampling only the first
    /// `phase2_pairs` training pairs (all when 0).
    pub phase2_iterations: usize,
    pub phase2_pairs: usize,
    pub zero_head: bool,

    pub train_pairs: usize,
    pub val_pairs: usize,
    pub test_pairs: usize,
    pub extent: usize,
    pub labels: usize,
    pub spacing: usize,
    pub amplitude: f64,
    pub noise: f64,

    pub split: String,
    pub slice_axis: usize,

    pub resolutions: Vec<usize>,
    pub blocks: Vec<String>,
    pub bench_channels: usize,
    pub bench_heads: usize,
    pub bench_region: usize,
    pub repeats: usize,
    pub warmups: usize,

    pub negative_control: bool,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            seed: 0,
            out: None,
            data: None,
            checkpoint: None,
            pair: None,
            net: NetConfig::tiny(),
            no_global: false,
            no_local: false,
            linear_projection: false,
            lr: 1e-4,
            iterations: 2000,
            val_interval: 100,
            sigma: 1.0,
            ncc_window: 9,
            ncc_eps: 1e-5,
            full_iterations: 100_000,
            full_val_interval: 1000,
            phase2_iterations: 0,
            phase2_pairs: 0,
            zero_head: false,
            train_pairs: 100,
            val_pairs: 8,
            test_pairs: 20,
            extent: 32,
            labels: 2,
            spacing: 8,
            amplitude: 4.0,
            noise: 0.02,
            split: "test".into(),
            slice_axis: 0,
            resolutions: vec![8, 12, 16, 24, 32],
            blocks: vec!["maxca".into(), "dense_xca".into(), "dense_sa".into()],
            bench_channels: 8,
            bench_heads: 2,
            bench_region: 4,
            repeats: 5,
            warmups: 2,
            negative_control: false,
        }
    }
}

fn parse<V: FromStr>(key: &str, value: &str) -> CliResult<V> {
    value
        .parse()
        .map_err(|_| CliError::Usage(format!("invalid value '{value}' for '{key}'")))
}

fn parse_list<V: FromStr>(key: &str, value: &str) -> CliResult<Vec<V>> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

impl Settings {
    /// Applies `pairs` in order on top of the defaults. A `preset` anywhere
    /// is applied first so that later network keys refine it.
    pub fn from_pairs(pairs: &[(String, String)]) -> CliResult<Self> {
        let mut s = Settings::default();
        if let Some((_, p)) = pairs.iter().rev().find(|(k, _)| k == "preset") {
            s.net = NetConfig::preset(p)?;
        }
        for (k, v) in pairs.iter().filter(|(k, _)| k != "preset") {
            s.apply(k, v)?;
        }
        s.validate()?;
        Ok(s)
    }

    /// Config file text followed by command line overrides.
    pub fn load(file: Option<&str>, overrides: &[(String, String)]) -> CliResult<Self> {
        let mut pairs = match file {
            Some(text) => parse_key_values(text)?,
            None => Vec::new(),
        };
        pairs.extend_from_slice(overrides);
        Settings::from_pairs(&pairs)
    }

    fn apply(&mut self, key: &str, value: &str) -> CliResult<()> {
        if self.net.apply(key, value)? {
            return Ok(());
        }
        let path = || Some(PathBuf::from(value));
        match key {
            "seed" => self.seed = parse(key, value)?,
            "out" => self.out = path(),
            "data" => self.data = path(),
            "checkpoint" => self.checkpoint = path(),
            "pair" => self.pair = path(),
            "no_global" => self.no_global = parse(key, value)?,
            "no_local" => self.no_local = parse(key, value)?,
            "linear_projection" => self.linear_projection = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "iterations" => self.iterations = parse(key, value)?,
            "val_interval" => self.val_interval = parse(key, value)?,
            "batch" => {
                if parse::<usize>(key, value)? != 1 {
                    return Err(CliError::Usage("batch size is fixed at 1".into()));
                }
            }
            "sigma" => self.sigma = parse(key, value)?,
            "ncc_window" => self.ncc_window = parse(key, value)?,
            "ncc_eps" => self.ncc_eps = parse(key, value)?,
            "full_iterations" => self.full_iterations = parse(key, value)?,
            "full_val_interval" => self.full_val_interval = parse(key, value)?,
            "phase2_iterations" => self.phase2_iterations = parse(key, value)?,
            "phase2_pairs" => self.phase2_pairs = parse(key, value)?,
            "zero_head" => self.zero_head = parse(key, value)?,
            "train_pairs" => self.train_pairs = parse(key, value)?,
            "val_pairs" => self.val_pairs = parse(key, value)?,
            "test_pairs" => self.test_pairs = parse(key, value)?,
            "extent" => self.extent = parse(key, value)?,
            "labels" => self.labels = parse(key, value)?,
            "spacing" => self.spacing = parse(key, value)?,
            "amplitude" => self.amplitude = parse(key, value)?,
            "noise" => self.noise = parse(key, value)?,
            "split" => self.split = value.to_string(),
            "slice_axis" => self.slice_axis = parse(key, value)?,
            "resolutions" => self.resolutions = parse_list(key, value)?,
            "blocks" => self.blocks = parse_list(key, value)?,
            "bench_channels" => self.bench_channels = parse(key, value)?,
            "bench_heads" => self.bench_heads = parse(key, value)?,
            "bench_region" => self.bench_region = parse(key, value)?,
            "repeats" => self.repeats = parse(key, value)?,
            "warmups" => self.warmups = parse(key, value)?,
            "negative_control" => self.negative_control = parse(key, value)?,
            _ => return Err(CliError::Usage(format!("unknown configuration key '{key}'"))),
        }
        Ok(())
    }

    fn validate(&self) -> CliResult<()> {
        if self.no_global && self.no_local {
            return Err(CliError::Usage(
                "no_global and no_local together leave no attention branch".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(CliError::Usage(format!("lr must be positive, got {}", self.lr)));
        }
        if self.val_interval == 0 || self.repeats == 0 {
            return Err(CliError::Usage("val_interval and repeats must be positive".into()));
        }
        if !["train", "val", "test"].contains(&self.split.as_str()) {
            return Err(CliError::Usage(format!("unknown split '{}'", self.split)));
        }
        self.loss()?.validate()?;
        self.network()?;
        Ok(())
    }

    /// The network configuration with ablation switches folded in.
    pub fn network(&self) -> CliResult<NetConfig> {
        let mut cfg = self.net.clone();
        cfg.use_global &= !self.no_global;
        cfg.use_local &= !self.no_local;
        if self.linear_projection {
            cfg.projection = Projection::Linear;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn loss(&self) -> CliResult<LossConfig> {
        let cfg = LossConfig {
            window: self.ncc_window,
            sigma: self.sigma,
            eps: self.ncc_eps,
            ..LossConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn synth(&self, seed: u64) -> SynthSpec {
        SynthSpec {
            extents: [self.extent; 3],
            labels: self.labels,
            spacing: self.spacing,
            amplitude: self.amplitude,
            noise: self.noise,
            seed,
        }
    }

    pub fn require_out(&self) -> CliResult<PathBuf> {
        self.out
            .clone()
            .ok_or_else(|| CliError::Usage("--out is required".into()))
    }

    pub fn require_data(&self) -> CliResult<PathBuf> {
        self.data
            .clone()
            .ok_or_else(|| CliError::Usage("--data is required".into()))
    }

    pub fn require_checkpoint(&self) -> CliResult<PathBuf> {
        self.checkpoint
            .clone()
            .ok_or_else(|| CliError::Usage("--checkpoint is required".into()))
    }

    /// Training settings as checkpoint metadata.
    pub fn training_meta(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "lr = {}", self.lr);
        let _ = writeln!(s, "iterations = {}", self.iterations);
        let _ = writeln!(s, "val_interval = {}", self.val_interval);
        let _ = writeln!(s, "sigma = {}", self.sigma);
        let _ = writeln!(s, "ncc_window = {}", self.ncc_window);
        let _ = writeln!(s, "full_iterations = {}", self.full_iterations);
        let _ = writeln!(s, "full_val_interval = {}", self.full_val_interval);
        let _ = writeln!(s, "phase2_iterations = {}", self.phase2_iterations);
        s
    }
}
