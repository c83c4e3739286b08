//! Unsupervised training with validation-based model selection.

use std::fs;
use std::path::Path;

use maxca_core::backward;
use maxca_core::nn::{adam_step, AdamState};
use maxca_core::regnet::total_loss;
use maxca_core::Var;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{load_split, Pair};
use crate::error::{CliError, CliResult};
use crate::model::Model;
use crate::settings::Settings;

pub const BEST: &str = "best.ckpt";
pub const LAST: &str = "last.ckpt";
pub const LOG: &str = "train_log.csv";

/// One optimizer step, or the initial validation at iteration 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iter: usize,
    pub loss: Option<f64>,
    pub similarity: Option<f64>,
    pub regularity: Option<f64>,
    pub val_dsc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: Vec<LogRow>,
    pub best_iter: usize,
    pub best_val_dsc: f64,
    pub model: Model,
}

pub fn mean_dsc(model: &Model, pairs: &[Pair]) -> CliResult<f64> {
    let mut sum = 0.0;
    for p in pairs {
        sum += model.pair_dsc(p)?;
    }
    Ok(sum / pairs.len() as f64)
}

/// Trains on the `train` split, validating on `val`; the test split is never
/// read. Writes both checkpoints and the log under `out`.
pub fn train(settings: &Settings) -> CliResult<TrainOutcome> {
    let data = settings.require_data()?;
    let out = settings.require_out()?;
    let train_pairs = load_split(&data, "train")?;
    let val_pairs = load_split(&data, "val")?;
    if val_pairs.is_empty() {
        return Err(CliError::Data("manifest has no validation pairs".into()));
    }
    let total = settings.iterations + settings.phase2_iterations;
    if total > 0 && train_pairs.is_empty() {
        return Err(CliError::Data("manifest has no training pairs".into()));
    }
    fs::create_dir_all(&out)?;

    let loss_cfg = settings.loss()?;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut model = Model::init(&settings.network()?, settings.zero_head, &mut rng)?;
    let mut adam = AdamState::new(&model.store, settings.lr);
    let meta = settings.training_meta();

    let initial = mean_dsc(&model, &val_pairs)?;
    let mut best = (0, initial);
    model.save(&out.join(BEST), &selection_meta(&meta, best))?;
    let mut log = vec![LogRow {
        iter: 0,
        loss: None,
        similarity: None,
        regularity: None,
        val_dsc: Some(initial),
    }];

    let phase2_pool = match settings.phase2_pairs {
        0 => train_pairs.len(),
        n => n.min(train_pairs.len()),
    };
    for step in 1..=total {
        let pool = if step > settings.iterations {
            phase2_pool
        } else {
            train_pairs.len()
        };
        let pair = &train_pairs[rng.random_range(0..pool)];
        let p = model.store.leaves(true);
        let fixed = Var::constant(pair.fixed.data.clone());
        let moving = Var::constant(pair.moving.data.clone());
        let u = model.net.forward(&p, &fixed, &moving)?;
        let terms = total_loss(&fixed, &moving, &u, &loss_cfg)?;
        let loss = f64::from(terms.total.value().item());
        let (sim, reg) = (f64::from(terms.similarity), f64::from(terms.regularity));
        if !loss.is_finite() {
            return Err(CliError::Numeric(format!(
                "non-finite loss at iteration {step} (lr {}, similarity {sim}, regularity {reg}, total {loss})",
                settings.lr
            )));
        }
        let grads = backward(&terms.total)?;
        let grads: Vec<_> = p.vars().iter().map(|v| grads.get_or_zeros(v)).collect();
        drop((p, u, terms));
        adam_step(&mut model.store, &grads, &mut adam)?;

        let mut row = LogRow {
            iter: step,
            loss: Some(loss),
            similarity: Some(sim),
            regularity: Some(reg),
            val_dsc: None,
        };
        if step % settings.val_interval == 0 || step == total {
            let v = mean_dsc(&model, &val_pairs)?;
            row.val_dsc = Some(v);
            if v > best.1 {
                best = (step, v);
                model.save(&out.join(BEST), &selection_meta(&meta, best))?;
            }
        }
        log.push(row);
    }
    model.save(&out.join(LAST), &meta)?;
    write_log(&out.join(LOG), &log)?;
    let best_model = Model::load(&out.join(BEST))?;
    Ok(TrainOutcome {
        log,
        best_iter: best.0,
        best_val_dsc: best.1,
        model: best_model,
    })
}

fn selection_meta(meta: &str, best: (usize, f64)) -> String {
    format!("{meta}best_iter = {}\nbest_val_dsc = {}\n", best.0, best.1)
}

pub fn write_log(path: &Path, rows: &[LogRow]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_log(path: &Path) -> CliResult<Vec<LogRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}
