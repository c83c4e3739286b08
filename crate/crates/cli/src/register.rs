//! Registration of a single pair with a trained checkpoint.

use std::fs;
use std::path::Path;

use maxca_core::io::{emit_slice_pgm, read_rvol, read_rvol_labels, write_rvol, write_rvol_labels};
use maxca_core::metrics::{error_map, njd_percent};
use maxca_core::regnet::Volume;

use crate::data::{FIXED, LABELS_MOVING, MOVING};
use crate::error::{CliError, CliResult};
use crate::model::{warp_label_map, warp_volume, Model};
use crate::settings::Settings;

pub const FIELD: &str = "u.rvol";
pub const WARPED: &str = "warped.rvol";
pub const WARPED_LABELS: &str = "warped_labels.rvol";
pub const ERROR_MAP: &str = "error_map.pgm";

#[derive(Debug, Clone, PartialEq)]
pub struct Registration {
    pub mae_before: f64,
    pub mae_after: f64,
    pub njd_pct: f64,
}

impl Registration {
    pub fn report(&self) -> String {
        format!(
            "mae_before {}\nmae_after {}\nnjd_pct {}",
            self.mae_before, self.mae_after, self.njd_pct
        )
    }
}

/// Registers the pair in `settings.pair` and writes the field, the warped
/// image and labels, and a mid-volume slice of the error map.
pub fn register(settings: &Settings) -> CliResult<Registration> {
    let model = Model::load(&settings.require_checkpoint()?)?;
    let pair = settings
        .pair
        .clone()
        .ok_or_else(|| CliError::Usage("--pair is required".into()))?;
    let out = settings.require_out()?;
    register_files(&model, &pair, &out, settings.slice_axis)
}

pub fn register_files(model: &Model, pair: &Path, out: &Path, slice_axis: usize) -> CliResult<Registration> {
    if slice_axis > 2 {
        return Err(CliError::Usage(format!("slice axis {slice_axis} out of range")));
    }
    let fixed = read_rvol(pair.join(FIXED))?;
    let moving = read_rvol(pair.join(MOVING))?;
    let want = model.net.cfg.input;
    for (name, v) in [("fixed", &fixed), ("moving", &moving)] {
        if v.extents() != want || v.channels() != 1 {
            return Err(CliError::Data(format!(
                "{name} image is {:?}, checkpoint expects [1, {}, {}, {}]",
                v.data.shape(),
                want[0],
                want[1],
                want[2]
            )));
        }
    }
    fs::create_dir_all(out)?;
    let u = model.predict(&fixed, &moving)?;
    let warped = warp_volume(&moving, &u)?;
    let (_, mae_before) = error_map(&moving, &fixed)?;
    let (map, mae_after) = error_map(&warped, &fixed)?;
    let njd_pct = njd_percent(&u)?;

    write_rvol(out.join(FIELD), &Volume::new(u.clone())?)?;
    write_rvol(out.join(WARPED), &warped)?;
    let labels = pair.join(LABELS_MOVING);
    if labels.is_file() {
        write_rvol_labels(
            out.join(WARPED_LABELS),
            &warp_label_map(&read_rvol_labels(labels)?, &u)?,
        )?;
    }
    emit_slice_pgm(&map, slice_axis, want[slice_axis] / 2, out.join(ERROR_MAP))?;
    Ok(Registration {
        mae_before,
        mae_after,
        njd_pct,
    })
}
