//! Registration quality: label overlap, folding and intensity error.

use serde::{Deserialize, Serialize};

use crate::error::{shape_mismatch, Error, Result};
use crate::regnet::{LabelMap, Volume};
use crate::tensor::{Element, Tensor};

/// Dice overlap per label plus their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct DiceScores {
    /// Scored labels only; labels absent from both maps are left out.
    pub per_label: Vec<(u16, f64)>,
    /// Mean over `per_label`, or 1 when nothing was scored.
    pub mean: f64,
}

/// Dice coefficient `2|A∩B| / (|A|+|B|)` for each label in `label_set`.
/// Background (0) is never scored.
pub fn dsc(a: &LabelMap, b: &LabelMap, label_set: &[u16]) -> Result<DiceScores> {
    if a.extents != b.extents {
        return Err(shape_mismatch("dsc", &a.extents, &b.extents));
    }
    let mut per_label = Vec::new();
    for &l in label_set.iter().filter(|&&l| l != 0) {
        let (mut na, mut nb, mut both) = (0usize, 0usize, 0usize);
        for (&x, &y) in a.labels.iter().zip(&b.labels) {
            na += (x == l) as usize;
            nb += (y == l) as usize;
            both += (x == l && y == l) as usize;
        }
        if na + nb > 0 {
            per_label.push((l, 2.0 * both as f64 / (na + nb) as f64));
        }
    }
    let mean = if per_label.is_empty() {
        1.0
    } else {
        per_label.iter().map(|p| p.1).sum::<f64>() / per_label.len() as f64
    };
    Ok(DiceScores { per_label, mean })
}

/// Foreground labels present in either map.
pub fn foreground_labels(a: &LabelMap, b: &LabelMap) -> Vec<u16> {
    let mut s = a.label_set();
    s.extend(b.label_set());
    s.sort_unstable();
    s.dedup();
    s.retain(|&l| l != 0);
    s
}

/// Determinant of `I + ∇u` at every interior voxel, by central differences,
/// in `[H-2][W-2][D-2]` order.
pub fn jacobian_determinants<T: Element>(u: &Tensor<T>) -> Result<Vec<f64>> {
    let s = u.shape();
    if s.len() != 4 || s[0] != 3 {
        return Err(Error::InvalidShape {
            shape: s.to_vec(),
            reason: "displacement field must be [3][H][W][D]".into(),
        });
    }
    if s[1..].iter().any(|&e| e < 3) {
        return Err(Error::InvalidShape {
            shape: s.to_vec(),
            reason: "folding needs at least 3 voxels per axis".into(),
        });
    }
    let ext = [s[1], s[2], s[3]];
    let n = ext[0] * ext[1] * ext[2];
    let stride = [ext[1] * ext[2], ext[2], 1];
    let d = u.data();
    let mut out = Vec::with_capacity((ext[0] - 2) * (ext[1] - 2) * (ext[2] - 2));
    for x in 1..ext[0] - 1 {
        for y in 1..ext[1] - 1 {
            for z in 1..ext[2] - 1 {
                let v = x * stride[0] + y * stride[1] + z;
                let mut j = [[0.0f64; 3]; 3];
                for (a, row) in j.iter_mut().enumerate() {
                    for (b, e) in row.iter_mut().enumerate() {
                        let fwd = d[a * n + v + stride[b]].to_f64().unwrap_or(f64::NAN);
                        let back = d[a * n + v - stride[b]].to_f64().unwrap_or(f64::NAN);
                        *e = (fwd - back) / 2.0 + if a == b { 1.0 } else { 0.0 };
                    }
                }
                out.push(
                    j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1])
                        - j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0])
                        + j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0]),
                );
            }
        }
    }
    Ok(out)
}

/// Percentage of interior voxels whose Jacobian determinant is `<= 0`.
pub fn njd_percent<T: Element>(u: &Tensor<T>) -> Result<f64> {
    let dets = jacobian_determinants(u)?;
    let folded = dets.iter().filter(|&&d| d.is_nan() || d <= 0.0).count();
    Ok(100.0 * folded as f64 / dets.len() as f64)
}

/// Voxelwise `|warped - fixed|` and its mean.
pub fn error_map(warped: &Volume, fixed: &Volume) -> Result<(Volume, f64)> {
    let map = warped.data.zip_map(&fixed.data, |a, b| (a - b).abs())?;
    let mae = map.data().iter().map(|&v| v as f64).sum::<f64>() / map.numel() as f64;
    Ok((Volume { data: map }, mae))
}

/// Evaluation of one registered pair. Only the scalar columns are written
/// to CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pair_id: String,
    pub dsc_before: f64,
    pub dsc_after: f64,
    pub njd_pct: f64,
    pub mae_before: f64,
    pub mae_after: f64,
    #[serde(skip)]
    pub per_label: Vec<(u16, f64)>,
}

impl EvalReport {
    pub const COLUMNS: [&'static str; 6] = [
        "pair_id",
        "dsc_before",
        "dsc_after",
        "njd_pct",
        "mae_before",
        "mae_after",
    ];

    /// Column means, labelled `pair_id`.
    pub fn summary(pair_id: &str, rows: &[EvalReport]) -> EvalReport {
        let n = rows.len().max(1) as f64;
        let mean = |f: fn(&EvalReport) -> f64| rows.iter().map(f).sum::<f64>() / n;
        EvalReport {
            pair_id: pair_id.into(),
            dsc_before: mean(|r| r.dsc_before),
            dsc_after: mean(|r| r.dsc_after),
            njd_pct: mean(|r| r.njd_pct),
            mae_before: mean(|r| r.mae_before),
            mae_after: mean(|r| r.mae_after),
            per_label: Vec::new(),
        }
    }

    pub fn check(&self) -> Result<()> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if !in_unit(self.dsc_before) || !in_unit(self.dsc_after) || !(0.0..=100.0).contains(&self.njd_pct) {
            return Err(Error::Config(format!("report for '{}' out of range", self.pair_id)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(ext: [usize; 3], v: &[u16]) -> LabelMap {
        LabelMap::new(ext, v.to_vec()).unwrap()
    }

    #[test]
    fn dice_hand_cases() {
        let a = labels([4, 1, 1], &[1, 1, 0, 0]);
        let b = labels([4, 1, 1], &[0, 1, 1, 0]);
        assert_eq!(dsc(&a, &a, &[0, 1]).unwrap().mean, 1.0);
        assert_eq!(dsc(&a, &b, &[1]).unwrap().mean, 0.5);
        let c = labels([4, 1, 1], &[0, 0, 1, 1]);
        assert_eq!(dsc(&a, &c, &[1]).unwrap().mean, 0.0);
        assert!(dsc(&a, &labels([2, 2, 1], &[0; 4]), &[1]).is_err());
    }

    #[test]
    fn absent_labels_are_not_scored() {
        let a = labels([3, 1, 1], &[1, 2, 0]);
        let b = labels([3, 1, 1], &[1, 0, 0]);
        let s = dsc(&a, &b, &[1, 2, 3]).unwrap();
        assert_eq!(s.per_label, vec![(1, 1.0), (2, 0.0)]);
        assert_eq!(s.mean, 0.5);
        assert_eq!(foreground_labels(&a, &b), vec![1, 2]);
    }

    #[test]
    fn folding_of_linear_fields() {
        let ext = [5, 4, 6];
        let n = 5 * 4 * 6;
        assert_eq!(njd_percent(&Tensor::<f32>::zeros(&[3, 5, 4, 6])).unwrap(), 0.0);
        let fold = Tensor::<f64>::from_fn(&[3, 5, 4, 6], |i| {
            if i < n {
                -2.0 * (i / (ext[1] * ext[2])) as f64
            } else {
                0.0
            }
        });
        assert_eq!(njd_percent(&fold).unwrap(), 100.0);
        // Determinant exactly zero counts as folded.
        let flat = Tensor::<f64>::from_fn(&[3, 5, 4, 6], |i| {
            if i < n {
                -((i / (ext[1] * ext[2])) as f64)
            } else {
                0.0
            }
        });
        assert_eq!(njd_percent(&flat).unwrap(), 100.0);
        assert!(njd_percent(&Tensor::<f64>::zeros(&[3, 2, 4, 4])).is_err());
    }

    #[test]
    fn error_map_offsets() {
        let a = Volume::new(Tensor::from_fn(&[1, 2, 3, 2], |i| i as f32 * 0.125)).unwrap();
        let b = Volume::new(a.data.map(|v| v + 0.25)).unwrap();
        let (map, mae) = error_map(&a, &a).unwrap();
        assert!(map.data.data().iter().all(|&v| v == 0.0) && mae == 0.0);
        let (map, mae) = error_map(&b, &a).unwrap();
        assert!(map.data.data().iter().all(|&v| v == 0.25));
        assert_eq!(mae, 0.25);
    }

    #[test]
    fn summary_is_column_mean() {
        let row = |id: &str, x: f64| EvalReport {
            pair_id: id.into(),
            dsc_before: x,
            dsc_after: 2.0 * x,
            njd_pct: 3.0 * x,
            mae_before: 4.0 * x,
            mae_after: 5.0 * x,
            per_label: vec![],
        };
        let s = EvalReport::summary("mean", &[row("a", 0.1), row("b", 0.3)]);
        assert!((s.dsc_after - 0.4).abs() < 1e-15 && (s.mae_after - 1.0).abs() < 1e-15);
    }
}
