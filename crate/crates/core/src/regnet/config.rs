//! Network hyperparameters, presets and their `key = value` text form.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::maxca::{MaxcaConfig, Projection, SA_MAX_TOKENS, SE_REDUCTION};
use crate::nn::UpsampleMode;

/// Block used at each encoder level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Maxca,
    DenseXca,
    /// Convolution block at full resolution, dense self-attention below.
    DenseSaPlusConv,
    CnnBaseline,
}

impl BlockKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BlockKind::Maxca => "maxca",
            BlockKind::DenseXca => "dense_xca",
            BlockKind::DenseSaPlusConv => "dense_sa_plus_conv",
            BlockKind::CnnBaseline => "cnn_baseline",
        }
    }
}

impl FromStr for BlockKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "maxca" => BlockKind::Maxca,
            "dense_xca" => BlockKind::DenseXca,
            "dense_sa_plus_conv" => BlockKind::DenseSaPlusConv,
            "cnn_baseline" => BlockKind::CnnBaseline,
            _ => return Err(Error::Config(format!("unknown block kind '{s}'"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub preset: String,
    pub enc_channels: Vec<usize>,
    pub heads: Vec<usize>,
    pub regions: Vec<usize>,
    pub dec_channels: Vec<usize>,
    /// Declared input extents; every level is validated against it.
    pub input: [usize; 3],
    pub block: BlockKind,
    pub use_local: bool,
    pub use_global: bool,
    pub projection: Projection,
    pub learnable_tau: bool,
    pub pre_norm: bool,
    pub upsample: UpsampleMode,
    pub allow_large_sa: bool,
}

impl NetConfig {
    /// Desk-scale network for 32³ inputs.
    pub fn tiny() -> Self {
        NetConfig {
            preset: "tiny".into(),
            enc_channels: vec![8, 16, 32, 64],
            heads: vec![2, 4, 8, 16],
            regions: vec![4, 4, 4, 2],
            dec_channels: vec![32, 16, 8],
            input: [32, 32, 32],
            block: BlockKind::Maxca,
            use_local: true,
            use_global: true,
            projection: Projection::Conv3,
            learnable_tau: true,
            pre_norm: false,
            upsample: UpsampleMode::Trilinear,
            allow_large_sa: false,
        }
    }

    /// Full-size hyperparameters, for shape validation only. 192 is the
    /// smallest extent every level's region size divides.
    pub fn full() -> Self {
        NetConfig {
            preset: "full".into(),
            enc_channels: vec![24, 48, 96, 192, 384],
            heads: vec![2, 4, 8, 16, 32],
            regions: vec![8, 8, 6, 6, 4],
            dec_channels: vec![192, 96, 48, 24],
            input: [192, 192, 192],
            ..NetConfig::tiny()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "tiny" => Ok(NetConfig::tiny()),
            "full" => Ok(NetConfig::full()),
            _ => Err(Error::Config(format!("unknown preset '{name}'"))),
        }
    }

    pub fn levels(&self) -> usize {
        self.enc_channels.len()
    }

    /// Extents at encoder level `l`.
    pub fn level_extents(&self, l: usize) -> [usize; 3] {
        self.input.map(|e| e >> l)
    }

    pub fn block_config(&self, l: usize) -> MaxcaConfig {
        MaxcaConfig {
            channels: self.enc_channels[l],
            heads: self.heads[l],
            region: self.regions[l],
            use_local: self.use_local,
            use_global: self.use_global,
            projection: self.projection,
            learnable_tau: self.learnable_tau,
            pre_norm: self.pre_norm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.levels();
        if l == 0 {
            return Err(Error::Config("at least one encoder level is required".into()));
        }
        if self.heads.len() != l || self.regions.len() != l || self.dec_channels.len() + 1 != l {
            return Err(Error::Config(format!(
                "{l} encoder levels need {l} heads, {l} region sizes and {} decoder stages",
                l - 1
            )));
        }
        if self.enc_channels.iter().chain(&self.dec_channels).any(|&c| c == 0) {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        for (i, &e) in self.input.iter().enumerate() {
            if e == 0 || e % (1 << (l - 1)) != 0 {
                return Err(Error::Config(format!(
                    "input extent {e} on axis {i} is not divisible by {}",
                    1 << (l - 1)
                )));
            }
        }
        for lvl in 0..l {
            let kind = self.level_kind(lvl);
            let c = self.enc_channels[lvl];
            if kind != LevelKind::Conv && !c.is_multiple_of(SE_REDUCTION) {
                return Err(Error::Config(format!(
                    "level {lvl}: {c} channels not divisible by the squeeze-excitation reduction {SE_REDUCTION}"
                )));
            }
            match kind {
                LevelKind::Maxca => {
                    let cfg = self.block_config(lvl);
                    cfg.validate().map_err(|e| Error::Config(format!("level {lvl}: {e}")))?;
                    let ext = self.level_extents(lvl);
                    if ext.iter().any(|&e| e % cfg.region != 0) {
                        return Err(Error::Config(format!(
                            "level {lvl}: extents {ext:?} not divisible by region size {}",
                            cfg.region
                        )));
                    }
                }
                LevelKind::DenseXca | LevelKind::DenseSa => {
                    if self.heads[lvl] == 0 || !c.is_multiple_of(self.heads[lvl]) {
                        return Err(Error::Config(format!(
                            "level {lvl}: {c} channels not divisible by {} heads",
                            self.heads[lvl]
                        )));
                    }
                    let n: usize = self.level_extents(lvl).iter().product();
                    if kind == LevelKind::DenseSa && n > SA_MAX_TOKENS && !self.allow_large_sa {
                        return Err(Error::Config(format!(
                            "level {lvl}: dense self-attention over {n} voxels exceeds the guard"
                        )));
                    }
                }
                LevelKind::Conv => {}
            }
        }
        Ok(())
    }

    pub fn level_kind(&self, l: usize) -> LevelKind {
        match self.block {
            BlockKind::Maxca => LevelKind::Maxca,
            BlockKind::DenseXca => LevelKind::DenseXca,
            BlockKind::CnnBaseline => LevelKind::Conv,
            BlockKind::DenseSaPlusConv if l == 0 => LevelKind::Conv,
            BlockKind::DenseSaPlusConv => LevelKind::DenseSa,
        }
    }

    /// Applies one `key = value` setting; returns `false` for keys this type
    /// does not own.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            // Resets every other key, so it must come first.
            "preset" => *self = NetConfig::preset(value)?,
            "enc_channels" => self.enc_channels = parse_list(key, value)?,
            "heads" => self.heads = parse_list(key, value)?,
            "regions" => self.regions = parse_list(key, value)?,
            "dec_channels" => self.dec_channels = parse_list(key, value)?,
            "input" => {
                let v: Vec<usize> = parse_list(key, value)?;
                self.input = v
                    .try_into()
                    .map_err(|_| Error::Config("input needs three extents".into()))?;
            }
            "block" => self.block = value.parse()?,
            "use_local" => self.use_local = parse(key, value)?,
            "use_global" => self.use_global = parse(key, value)?,
            "projection" => {
                self.projection = match value {
                    "conv3" => Projection::Conv3,
                    "linear" => Projection::Linear,
                    _ => return Err(Error::Config(format!("unknown projection '{value}'"))),
                }
            }
            "learnable_tau" => self.learnable_tau = parse(key, value)?,
            "pre_norm" => self.pre_norm = parse(key, value)?,
            "upsample" => {
                self.upsample = match value {
                    "trilinear" => UpsampleMode::Trilinear,
                    "nearest" => UpsampleMode::Nearest,
                    _ => return Err(Error::Config(format!("unknown upsample mode '{value}'"))),
                }
            }
            "allow_large_sa" => self.allow_large_sa = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_text(&self) -> String {
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        let _ = writeln!(s, "preset = {}", self.preset);
        let _ = writeln!(s, "enc_channels = {}", list(&self.enc_channels));
        let _ = writeln!(s, "heads = {}", list(&self.heads));
        let _ = writeln!(s, "regions = {}", list(&self.regions));
        let _ = writeln!(s, "dec_channels = {}", list(&self.dec_channels));
        let _ = writeln!(s, "input = {}", list(&self.input));
        let _ = writeln!(s, "block = {}", self.block.as_str());
        let _ = writeln!(s, "use_local = {}", self.use_local);
        let _ = writeln!(s, "use_global = {}", self.use_global);
        let proj = match self.projection {
            Projection::Conv3 => "conv3",
            Projection::Linear => "linear",
        };
        let _ = writeln!(s, "projection = {proj}");
        let _ = writeln!(s, "learnable_tau = {}", self.learnable_tau);
        let _ = writeln!(s, "pre_norm = {}", self.pre_norm);
        let up = match self.upsample {
            UpsampleMode::Trilinear => "trilinear",
            UpsampleMode::Nearest => "nearest",
        };
        let _ = writeln!(s, "upsample = {up}");
        let _ = writeln!(s, "allow_large_sa = {}", self.allow_large_sa);
        s
    }

    /// Parses [`NetConfig::to_text`] output; unknown keys are errors.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = NetConfig::tiny();
        for (key, value) in parse_key_values(text)? {
            if !cfg.apply(&key, &value)? {
                return Err(Error::Config(format!("unknown network key '{key}'")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Block family actually built at one level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LevelKind {
    Maxca,
    DenseXca,
    DenseSa,
    Conv,
}

pub(crate) fn parse<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for '{key}'")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

/// Splits `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", no + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", no + 1)));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}
