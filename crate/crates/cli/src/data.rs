//! Pair directories on disk and the manifest that indexes them.

use std::fs;
use std::path::{Path, PathBuf};

use maxca_core::io::{read_rvol, read_rvol_labels, write_rvol, write_rvol_labels};
use maxca_core::metrics::{dsc, foreground_labels};
use maxca_core::regnet::{LabelMap, Volume};
use maxca_core::synth::gen_pair;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::settings::Settings;

pub const MANIFEST: &str = "manifest.csv";
pub const FIXED: &str = "fixed.rvol";
pub const MOVING: &str = "moving.rvol";
pub const LABELS_FIXED: &str = "labels_fixed.rvol";
pub const LABELS_MOVING: &str = "labels_moving.rvol";
pub const U_TRUE: &str = "u_true.rvol";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub split: String,
    pub pair_id: String,
    /// Pair directory relative to the manifest.
    pub path: String,
    pub seed: u64,
    pub dsc_before: f64,
}

/// Images and labels of one pair as read back from disk.
#[derive(Debug, Clone)]
pub struct Pair {
    pub id: String,
    pub fixed: Volume,
    pub moving: Volume,
    pub labels_fixed: LabelMap,
    pub labels_moving: LabelMap,
}

impl Pair {
    pub fn load(dir: &Path, id: &str) -> CliResult<Self> {
        Ok(Pair {
            id: id.to_string(),
            fixed: read_rvol(dir.join(FIXED))?,
            moving: read_rvol(dir.join(MOVING))?,
            labels_fixed: read_rvol_labels(dir.join(LABELS_FIXED))?,
            labels_moving: read_rvol_labels(dir.join(LABELS_MOVING))?,
        })
    }

    pub fn label_set(&self) -> Vec<u16> {
        foreground_labels(&self.labels_fixed, &self.labels_moving)
    }

    /// Mean foreground overlap of the unregistered labels.
    pub fn dsc_before(&self) -> CliResult<f64> {
        Ok(dsc(&self.labels_fixed, &self.labels_moving, &self.label_set())?.mean)
    }
}

fn io_context(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

/// Writes every split under `out` and returns the manifest rows. Pair seeds
/// are drawn in order from a generator seeded by `settings.seed`.
pub fn gen_data(settings: &Settings) -> CliResult<Vec<ManifestRow>> {
    let out = settings.require_out()?;
    fs::create_dir_all(&out).map_err(|e| io_context(&out, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let splits = [
        ("train", settings.train_pairs),
        ("val", settings.val_pairs),
        ("test", settings.test_pairs),
    ];
    let mut rows = Vec::new();
    for (split, count) in splits {
        for i in 0..count {
            let seed: u64 = rng.random();
            let pair = gen_pair(&settings.synth(seed))?;
            let id = format!("{split}-{i:04}");
            let dir = out.join(&id);
            fs::create_dir_all(&dir).map_err(|e| io_context(&dir, e))?;
            write_rvol(dir.join(FIXED), &pair.fixed)?;
            write_rvol(dir.join(MOVING), &pair.moving)?;
            write_rvol_labels(dir.join(LABELS_FIXED), &pair.labels_fixed)?;
            write_rvol_labels(dir.join(LABELS_MOVING), &pair.labels_moving)?;
            write_rvol(dir.join(U_TRUE), &Volume::new(pair.u_true.u.clone())?)?;
            let set = foreground_labels(&pair.labels_fixed, &pair.labels_moving);
            rows.push(ManifestRow {
                split: split.to_string(),
                pair_id: id.clone(),
                path: id,
                seed,
                dsc_before: dsc(&pair.labels_fixed, &pair.labels_moving, &set)?.mean,
            });
        }
    }
    write_manifest(&out.join(MANIFEST), &rows)?;
    Ok(rows)
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| io_context(path, e))?;
    Ok(())
}

pub fn read_manifest(data: &Path) -> CliResult<Vec<ManifestRow>> {
    let path = data.join(MANIFEST);
    if !path.is_file() {
        return Err(CliError::Data(format!("no manifest at {}", path.display())));
    }
    let mut r = csv::Reader::from_path(&path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

/// Rows of one split, in manifest order.
pub fn split_rows(data: &Path, split: &str) -> CliResult<Vec<ManifestRow>> {
    Ok(read_manifest(data)?.into_iter().filter(|r| r.split == split).collect())
}

pub fn pair_dir(data: &Path, row: &ManifestRow) -> PathBuf {
    data.join(&row.path)
}

pub fn load_split(data: &Path, split: &str) -> CliResult<Vec<Pair>> {
    split_rows(data, split)?
        .iter()
        .map(|r| Pair::load(&pair_dir(data, r), &r.pair_id))
        .collect()
}
