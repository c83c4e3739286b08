//! Batch evaluation of a checkpoint over one split of a manifest.

use std::path::Path;

use maxca_core::io::emit_csv;
use maxca_core::metrics::{dsc, error_map, njd_percent, EvalReport};
use rayon::prelude::*;

use crate::data::{pair_dir, split_rows, ManifestRow, Pair};
use crate::error::{CliError, CliResult};
use crate::model::{warp_label_map, warp_volume, Model};
use crate::settings::Settings;

pub const EVAL_CSV: &str = "eval.csv";
pub const SUMMARY_ID: &str = "mean";

/// Threads for evaluation: `MAXCA_THREADS` if set, else every core.
pub fn thread_count() -> CliResult<usize> {
    match std::env::var("MAXCA_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(CliError::Usage(format!(
                "MAXCA_THREADS must be a positive integer, got '{v}'"
            ))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

pub fn evaluate_pair(model: &Model, pair: &Pair) -> CliResult<EvalReport> {
    let set = pair.label_set();
    let u = model.predict(&pair.fixed, &pair.moving)?;
    let warped = warp_volume(&pair.moving, &u)?;
    let labels = warp_label_map(&pair.labels_moving, &u)?;
    let after = dsc(&pair.labels_fixed, &labels, &set)?;
    let report = EvalReport {
        pair_id: pair.id.clone(),
        dsc_before: dsc(&pair.labels_fixed, &pair.labels_moving, &set)?.mean,
        dsc_after: after.mean,
        njd_pct: njd_percent(&u)?,
        mae_before: error_map(&pair.moving, &pair.fixed)?.1,
        mae_after: error_map(&warped, &pair.fixed)?.1,
        per_label: after.per_label,
    };
    report.check()?;
    Ok(report)
}

/// Per-pair reports in manifest order, evaluated in parallel.
pub fn evaluate_rows(model: &Model, data: &Path, rows: &[ManifestRow]) -> CliResult<Vec<EvalReport>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count()?)
        .build()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    pool.install(|| {
        rows.par_iter()
            .map(|r| evaluate_pair(model, &Pair::load(&pair_dir(data, r), &r.pair_id)?))
            .collect()
    })
}

/// Evaluates `settings.split` and writes the rows plus a summary row.
/// Returns the per-pair rows and the summary.
pub fn eval(settings: &Settings) -> CliResult<(Vec<EvalReport>, EvalReport)> {
    let model = Model::load(&settings.require_checkpoint()?)?;
    let data = settings.require_data()?;
    let out = settings.require_out()?;
    let rows = split_rows(&data, &settings.split)?;
    if rows.is_empty() {
        return Err(CliError::Data(format!("no '{}' pairs in the manifest", settings.split)));
    }
    let reports = evaluate_rows(&model, &data, &rows)?;
    let summary = EvalReport::summary(SUMMARY_ID, &reports);
    std::fs::create_dir_all(&out)?;
    let mut all = reports.clone();
    all.push(summary.clone());
    emit_csv(&all, out.join(EVAL_CSV))?;
    Ok((reports, summary))
}
