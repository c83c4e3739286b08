//! Forward-pass time and memory of attention blocks across resolutions.

use std::fs;
use std::time::Instant;

use maxca_core::alloc::{live_bytes, measure_peak};
use maxca_core::maxca::{sa_weights, xca_weights, DenseSaBlock, DenseXcaBlock, MaxcaBlock, MaxcaConfig, RegionView};
use maxca_core::nn::{normal, ParamStore, Params};
use maxca_core::{Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::settings::Settings;

pub const BENCH_CSV: &str = "bench.csv";
const DTYPE_BYTES: usize = 4;
/// Largest resolution dense self-attention runs at without the override.
pub const SA_MAX_EXTENT: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub block: String,
    pub resolution: usize,
    pub voxels: usize,
    pub median_ms: f64,
    pub peak_bytes: i64,
    /// Bytes of every attention map of one forward pass.
    pub map_bytes: i64,
    pub map_bytes_per_head: f64,
    /// Least-squares slope of log time against log voxels for this block.
    pub slope: f64,
}

enum Block {
    Maxca(MaxcaBlock),
    DenseXca(DenseXcaBlock),
    DenseSa(DenseSaBlock),
}

impl Block {
    fn forward(&self, p: &Params<f32>, x: &Var<f32>) -> CliResult<Var<f32>> {
        Ok(match self {
            Block::Maxca(b) => b.forward(p, x)?,
            Block::DenseXca(b) => b.forward(p, x)?,
            Block::DenseSa(b) => b.forward(p, x)?,
        })
    }
}

fn build(kind: &str, s: &Settings, store: &mut ParamStore<f32>, rng: &mut ChaCha8Rng) -> CliResult<Block> {
    let (c, h) = (s.bench_channels, s.bench_heads);
    Ok(match kind {
        "maxca" => Block::Maxca(MaxcaBlock::new(
            store,
            rng,
            kind,
            &MaxcaConfig::new(c, h, s.bench_region),
        )?),
        "dense_xca" => Block::DenseXca(DenseXcaBlock::new(store, rng, kind, c, h, true)?),
        "dense_sa" => Block::DenseSa(DenseSaBlock::new(store, rng, kind, c, h, s.net.allow_large_sa)?),
        _ => return Err(CliError::Usage(format!("unknown benchmark block '{kind}'"))),
    })
}

/// Bytes held by the attention maps alone, as `(total, per head per
/// problem)`. Queries and keys have the shapes the block feeds its
/// attention: one problem per region and head for MAXCA, one per head for
/// the dense blocks.
fn map_bytes(kind: &str, s: &Settings, res: usize, rng: &mut ChaCha8Rng) -> CliResult<(i64, f64)> {
    let (c, h) = (s.bench_channels, s.bench_heads);
    let n = res * res * res;
    let (problems, tokens) = match kind {
        "maxca" => {
            let view = RegionView::new(&[c, res, res, res], s.bench_region)?;
            (view.count() * h, view.size())
        }
        _ => (h, n),
    };
    let q = Var::constant(normal::<f32>(&[problems, tokens, c / h], 1.0, rng));
    let k = Var::constant(normal::<f32>(&[problems, tokens, c / h], 1.0, rng));
    let before = live_bytes();
    let maps = match kind {
        "dense_sa" => sa_weights(&q, &k)?,
        _ => xca_weights(&q, &k, &Var::constant(Tensor::full(&[h], 1.0)))?,
    };
    let bytes = live_bytes() - before;
    drop(maps);
    Ok((bytes, bytes as f64 / problems as f64))
}

/// Least-squares slope of `ln y` on `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn bench_one(kind: &str, s: &Settings, res: usize) -> CliResult<BenchRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let mut store = ParamStore::<f32>::new();
    let block = build(kind, s, &mut store, &mut rng)?;
    let p = store.leaves(false);
    let x = Var::constant(normal::<f32>(&[s.bench_channels, res, res, res], 1.0, &mut rng));
    for _ in 0..s.warmups {
        block.forward(&p, &x)?;
    }
    let mut times = Vec::with_capacity(s.repeats);
    for _ in 0..s.repeats {
        let t = Instant::now();
        let y = block.forward(&p, &x)?;
        times.push(t.elapsed().as_secs_f64() * 1e3);
        drop(y);
    }
    let (y, peak_bytes) = measure_peak(|| block.forward(&p, &x));
    y?;
    let (map_bytes, map_bytes_per_head) = map_bytes(kind, s, res, &mut rng)?;
    Ok(BenchRecord {
        block: kind.to_string(),
        resolution: res,
        voxels: res * res * res,
        median_ms: median(times),
        peak_bytes,
        map_bytes,
        map_bytes_per_head,
        slope: f64::NAN,
    })
}

/// Runs every block at every resolution. Dense self-attention stops at
/// [`SA_MAX_EXTENT`] unless large attention is allowed.
pub fn bench(settings: &Settings) -> CliResult<Vec<BenchRecord>> {
    if settings.resolutions.is_empty() {
        return Err(CliError::Usage("no benchmark resolutions".into()));
    }
    let mut records = Vec::new();
    for kind in &settings.blocks {
        let mut rows = Vec::new();
        for &res in &settings.resolutions {
            if kind == "dense_sa" && res > SA_MAX_EXTENT && !settings.net.allow_large_sa {
                continue;
            }
            rows.push(bench_one(kind, settings, res)?);
        }
        let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.voxels as f64, r.median_ms)).collect();
        let slope = if pts.len() >= 2 { loglog_slope(&pts) } else { f64::NAN };
        for r in &mut rows {
            r.slope = slope;
        }
        records.extend(rows);
    }
    if let Some(out) = &settings.out {
        fs::create_dir_all(out)?;
        let mut w = csv::Writer::from_path(out.join(BENCH_CSV))?;
        for r in &records {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    Ok(records)
}

/// Expected bytes of the `N x N` maps of dense self-attention.
pub fn dense_sa_map_bytes(voxels: usize, heads: usize) -> i64 {
    (voxels * voxels * heads * DTYPE_BYTES) as i64
}

/// Expected bytes of one `d x d` cross-covariance map.
pub fn xca_head_map_bytes(channels: usize, heads: usize) -> f64 {
    ((channels / heads).pow(2) * DTYPE_BYTES) as f64
}
