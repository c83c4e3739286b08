//! Command-line driver: synthetic data, training, registration,
//! evaluation, attention benchmarks and the gradient report.

pub mod bench;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod register;
pub mod settings;
pub mod train;

use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use error::{CliError, CliResult};
pub use settings::Settings;

#[derive(Debug, Parser)]
#[command(
    name = "maxca",
    about = "Deformable registration with multi-axis cross-covariance attention"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic pairs and a manifest.
    GenData(Common),
    /// Train a network; writes best.ckpt, last.ckpt and train_log.csv.
    Train(Common),
    /// Register one pair directory with a checkpoint.
    Register(Common),
    /// Evaluate a checkpoint on a manifest split; writes eval.csv.
    Eval(Common),
    /// Time attention blocks across resolutions; writes bench.csv.
    Bench(Common),
    /// Finite-difference check of every differentiable op.
    GradCheck(Common),
}

/// Flags shared by every command. Each maps onto a configuration key.
#[derive(Debug, Args, Default)]
pub struct Common {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub pair: Option<PathBuf>,
    #[arg(long)]
    pub no_global: bool,
    #[arg(long)]
    pub no_local: bool,
    #[arg(long)]
    pub linear_projection: bool,
    #[arg(long)]
    pub block: Option<String>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub ncc_window: Option<usize>,
    #[arg(long)]
    pub allow_large_sa: bool,
    /// Any configuration key, as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl Common {
    fn overrides(&self) -> CliResult<Vec<(String, String)>> {
        let mut kv: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: String| kv.push((k.to_string(), v));
        if let Some(p) = &self.preset {
            put("preset", p.clone());
        }
        if let Some(v) = self.seed {
            put("seed", v.to_string());
        }
        for (k, v) in [
            ("out", &self.out),
            ("data", &self.data),
            ("checkpoint", &self.checkpoint),
            ("pair", &self.pair),
        ] {
            if let Some(p) = v {
                put(k, p.display().to_string());
            }
        }
        for (k, on) in [
            ("no_global", self.no_global),
            ("no_local", self.no_local),
            ("linear_projection", self.linear_projection),
            ("allow_large_sa", self.allow_large_sa),
        ] {
            if on {
                put(k, "true".into());
            }
        }
        if let Some(b) = &self.block {
            put("block", b.clone());
        }
        if let Some(v) = self.iterations {
            put("iterations", v.to_string());
        }
        if let Some(v) = self.sigma {
            put("sigma", v.to_string());
        }
        if let Some(v) = self.ncc_window {
            put("ncc_window", v.to_string());
        }
        for s in &self.set {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got '{s}'")))?;
            put(k.trim(), v.trim().to_string());
        }
        Ok(kv)
    }

    pub fn settings(&self) -> CliResult<Settings> {
        let text = match &self.config {
            Some(p) => {
                Some(fs::read_to_string(p).map_err(|e| CliError::Usage(format!("config {}: {e}", p.display())))?)
            }
            None => None,
        };
        Settings::load(text.as_deref(), &self.overrides()?)
    }
}

/// Runs one command, printing its human-readable summary to stdout.
pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::GenData(c) => {
            let rows = data::gen_data(&c.settings()?)?;
            println!("wrote {} pairs", rows.len());
        }
        Command::Train(c) => {
            let out = train::train(&c.settings()?)?;
            println!("best val_dsc {} at iteration {}", out.best_val_dsc, out.best_iter);
        }
        Command::Register(c) => println!("{}", register::register(&c.settings()?)?.report()),
        Command::Eval(c) => {
            let (rows, summary) = eval::eval(&c.settings()?)?;
            println!(
                "{} pairs: dsc_before {} dsc_after {} njd_pct {}",
                rows.len(),
                summary.dsc_before,
                summary.dsc_after,
                summary.njd_pct
            );
        }
        Command::Bench(c) => {
            for r in bench::bench(&c.settings()?)? {
                println!(
                    "{:<10} {:>3}^3 {:>10.3} ms  peak {:>12} B  maps {:>12} B  slope {:.3}",
                    r.block, r.resolution, r.median_ms, r.peak_bytes, r.map_bytes, r.slope
                );
            }
        }
        Command::GradCheck(c) => {
            let reports = gradcheck::grad_check(&c.settings()?)?;
            print!("{}", gradcheck::format_table(&reports));
            gradcheck::verdict(&reports)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Common {
        match Cli::try_parse_from(args).unwrap().command {
            Command::Train(c) => c,
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn flags_override_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        fs::write(&cfg, "iterations = 50\nsigma = 2\nseed = 4\n").unwrap();
        let c = parse(&[
            "maxca",
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--iterations",
            "7",
            "--no-local",
            "--set",
            "lr=0.001",
        ]);
        let s = c.settings().unwrap();
        assert_eq!((s.iterations, s.sigma, s.seed, s.lr), (7, 2.0, 4, 1e-3));
        assert!(s.no_local);
    }

    #[test]
    fn bad_config_is_a_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        fs::write(&cfg, "sigmaa = 2\n").unwrap();
        let c = parse(&["maxca", "train", "--config", cfg.to_str().unwrap()]);
        assert_eq!(c.settings().unwrap_err().exit_code(), 1);
        let c = parse(&["maxca", "train", "--set", "novalue"]);
        assert_eq!(c.settings().unwrap_err().exit_code(), 1);
    }
}
