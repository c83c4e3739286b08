//! Central finite-difference checks of every differentiable operation.
//!
//! Each case maps a few random `f64` tensors to an output `y`; the analytic
//! gradient of `<w, y>` for a random `w` is compared with
//! `(L(x + h) - L(x - h)) / 2h`, `h = 1e-4 * max(1, |x|)`, using the
//! norm-wise relative error over all checked coordinates.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Backward, BackwardCtx, Graph, Var};
use crate::error::Result;
use crate::maxca::{
    from_tokens, head_scale, region_merge, region_split, sa_attend, to_tokens, xca_attend, xca_covariance_map, Axis,
    DenseSaBlock, DenseXcaBlock, MaxcaBlock, MaxcaConfig, Projection, RegionView,
};
use crate::nn::{
    channel_scale, conv3d, global_avg_pool, instance_norm, layer_norm, leaky_relu, normal, patch_merging, relu,
    se_channel_attention, sigmoid, upsample2x, ParamStore, Params, UpsampleMode,
};
use crate::ops::{
    add, add_scalar, concat, div, l2_normalize, matmul, mean, mul, narrow, neg, permute, reshape, scale, softmax,
    split, square, sub, sum, transpose_last,
};
use crate::regnet::{diffusion_reg, ncc_loss, total_loss, warp, Boundary, LossConfig};
use crate::tensor::Tensor;

pub const TOLERANCE: f64 = 1e-4;
/// Losses through the trilinear warp are piecewise smooth in `u`.
pub const LOSS_TOLERANCE: f64 = 1e-3;
pub const SEEDS: [u64; 3] = [0, 1, 2];
/// Coordinates checked per case; larger cases are sampled.
const BUDGET: usize = 480;

type Forward = Box<dyn Fn(&[Var<f64>]) -> Result<Var<f64>>>;

struct Setup {
    inputs: Vec<Tensor<f64>>,
    f: Forward,
}

fn setup(inputs: Vec<Tensor<f64>>, f: impl Fn(&[Var<f64>]) -> Result<Var<f64>> + 'static) -> Result<Setup> {
    Ok(Setup { inputs, f: Box::new(f) })
}

pub struct Case {
    pub name: &'static str,
    pub tolerance: f64,
    build: fn(&mut ChaCha8Rng) -> Result<Setup>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub name: String,
    /// Largest relative error over the seeds.
    pub rel_err: f64,
    pub tolerance: f64,
    pub coordinates: usize,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.rel_err <= self.tolerance
    }
}

fn uniform(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Magnitudes in `[0.2, 1]` with random sign, away from activation kinks.
fn signed(rng: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.2..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Displacements whose sample positions stay at least 0.1 from grid lines.
fn displacement(rng: &mut impl Rng, ext: [usize; 3]) -> Tensor<f64> {
    Tensor::from_fn(&[3, ext[0], ext[1], ext[2]], |_| {
        rng.random_range(-1i32..=1) as f64 + rng.random_range(0.1..0.9)
    })
}

fn unary(rng: &mut ChaCha8Rng, shape: &[usize], f: fn(&Var<f64>) -> Result<Var<f64>>) -> Result<Setup> {
    setup(vec![signed(rng, shape)], move |v| f(&v[0]))
}

fn binary(rng: &mut ChaCha8Rng, f: fn(&Var<f64>, &Var<f64>) -> Result<Var<f64>>) -> Result<Setup> {
    setup(vec![signed(rng, &[2, 3, 4]), signed(rng, &[2, 3, 4])], move |v| {
        f(&v[0], &v[1])
    })
}

/// Leaves for a layer whose parameters are the inputs after the first.
fn layer_params(v: &[Var<f64>]) -> Params<f64> {
    Params::from_vars(v[1..].to_vec())
}

/// Inputs for a layer: `x` followed by every parameter, re-drawn so that
/// zero-initialized tensors are exercised too.
fn layer_inputs(rng: &mut ChaCha8Rng, x: Tensor<f64>, store: &ParamStore<f64>) -> Vec<Tensor<f64>> {
    let mut inputs = vec![x];
    inputs.extend(store.values().iter().map(|t| normal(t.shape(), 0.5, rng)));
    inputs
}

fn maxca_case(rng: &mut ChaCha8Rng, projection: Projection) -> Result<Setup> {
    let cfg = MaxcaConfig {
        projection,
        pre_norm: true,
        ..MaxcaConfig::new(4, 2, 2)
    };
    let mut store = ParamStore::new();
    let block = MaxcaBlock::new(&mut store, rng, "b", &cfg)?;
    let x = signed(rng, &[4, 4, 2, 4]);
    setup(layer_inputs(rng, x, &store), move |v| {
        block.forward(&layer_params(v), &v[0])
    })
}

macro_rules! case {
    ($name:expr, $build:expr) => {
        Case {
            name: $name,
            tolerance: TOLERANCE,
            build: $build,
        }
    };
}

/// Every checked operation.
pub fn cases() -> Vec<Case> {
    vec![
        case!("add", |r| binary(r, add)),
        case!("sub", |r| binary(r, sub)),
        case!("mul", |r| binary(r, mul)),
        case!("div", |r| {
            let b = signed(r, &[2, 3, 4]).map(|v| v + v.signum() * 0.5);
            setup(vec![signed(r, &[2, 3, 4]), b], |v| div(&v[0], &v[1]))
        }),
        case!("scale", |r| unary(r, &[3, 4], |x| scale(x, 1.7))),
        case!("neg", |r| unary(r, &[3, 4], neg)),
        case!("add_scalar", |r| unary(r, &[3, 4], |x| add_scalar(x, -0.3))),
        case!("square", |r| unary(r, &[3, 4], square)),
        case!("sum", |r| unary(r, &[2, 3, 4], sum)),
        case!("mean", |r| unary(r, &[2, 3, 4], mean)),
        case!("reshape", |r| unary(r, &[2, 3, 4], |x| reshape(x, &[4, 6]))),
        case!("permute", |r| unary(r, &[2, 3, 4, 5], |x| permute(x, &[2, 0, 3, 1]))),
        case!("narrow", |r| unary(r, &[2, 5, 3], |x| narrow(x, 1, 1, 3))),
        case!("split", |r| {
            unary(r, &[2, 6, 3], |x| {
                let parts = split(x, 1, &[1, 2, 3])?;
                concat(&[&parts[2], &parts[0], &parts[1]], 1)
            })
        }),
        case!("concat", |r| {
            setup(vec![signed(r, &[2, 3, 4]), signed(r, &[2, 1, 4])], |v| {
                concat(&[&v[0], &v[1]], 1)
            })
        }),
        case!("matmul", |r| {
            setup(vec![signed(r, &[2, 3, 4]), signed(r, &[2, 4, 5])], |v| {
                matmul(&v[0], &v[1])
            })
        }),
        case!("transpose_last", |r| unary(r, &[2, 3, 4], transpose_last)),
        case!("softmax", |r| {
            setup(vec![uniform(r, &[2, 4, 3], -2.0, 2.0)], |v| {
                concat(&[&softmax(&v[0], 1)?, &softmax(&v[0], 2)?], 0)
            })
        }),
        case!("l2_normalize", |r| unary(r, &[2, 5, 3], |x| l2_normalize(x, 1, 1e-12))),
        case!("conv3d", |r| {
            let inputs = vec![signed(r, &[2, 4, 5, 3]), signed(r, &[3, 2, 3, 3, 3]), signed(r, &[3])];
            setup(inputs, |v| conv3d(&v[0], &v[1], Some(&v[2]), 1, 1))
        }),
        case!("conv3d_strided", |r| {
            setup(vec![signed(r, &[2, 5, 4, 6]), signed(r, &[2, 2, 3, 3, 3])], |v| {
                conv3d(&v[0], &v[1], None, 2, 1)
            })
        }),
        case!("conv3d_pointwise", |r| {
            let inputs = vec![signed(r, &[3, 2, 3, 4]), signed(r, &[4, 3, 1, 1, 1]), signed(r, &[4])];
            setup(inputs, |v| conv3d(&v[0], &v[1], Some(&v[2]), 1, 0))
        }),
        case!("leaky_relu", |r| unary(r, &[2, 3, 4], |x| leaky_relu(x, 0.2))),
        case!("relu", |r| unary(r, &[2, 3, 4], relu)),
        case!("sigmoid", |r| unary(r, &[2, 3, 4], sigmoid)),
        case!("instance_norm", |r| {
            let inputs = vec![signed(r, &[3, 4, 3, 2]), signed(r, &[3]), signed(r, &[3])];
            setup(inputs, |v| instance_norm(&v[0], &v[1], &v[2], 1e-5))
        }),
        case!("layer_norm", |r| {
            let inputs = vec![signed(r, &[4, 3, 2, 3]), signed(r, &[4]), signed(r, &[4])];
            setup(inputs, |v| layer_norm(&v[0], &v[1], &v[2], 1e-5))
        }),
        case!("global_avg_pool", |r| unary(r, &[3, 2, 3, 2], global_avg_pool)),
        case!("channel_scale", |r| {
            setup(vec![signed(r, &[3, 2, 3, 2]), signed(r, &[3])], |v| {
                channel_scale(&v[0], &v[1])
            })
        }),
        case!("se_channel_attention", |r| {
            let inputs = vec![
                signed(r, &[4, 3, 2, 3]),
                signed(r, &[2, 4]),
                signed(r, &[2]),
                signed(r, &[4, 2]),
                signed(r, &[4]),
            ];
            setup(inputs, |v| se_channel_attention(&v[0], &v[1], &v[2], &v[3], &v[4]))
        }),
        case!("patch_merging", |r| {
            setup(vec![signed(r, &[2, 4, 2, 4]), signed(r, &[3, 16, 1, 1, 1])], |v| {
                patch_merging(&v[0], &v[1])
            })
        }),
        case!("upsample_trilinear", |r| {
            unary(r, &[2, 3, 2, 3], |x| upsample2x(x, UpsampleMode::Trilinear))
        }),
        case!("upsample_nearest", |r| unary(r, &[2, 3, 2, 3], |x| upsample2x(
            x,
            UpsampleMode::Nearest
        ))),
        case!("head_scale", |r| {
            setup(vec![signed(r, &[4, 3, 2]), signed(r, &[2])], |v| {
                head_scale(&v[0], &v[1])
            })
        }),
        case!("xca_covariance_map", |r| {
            setup(vec![signed(r, &[2, 5, 3]), signed(r, &[2, 5, 3])], |v| {
                xca_covariance_map(&v[0], &v[1])
            })
        }),
        case!("xca_attend", |r| {
            let inputs = vec![
                signed(r, &[4, 6, 3]),
                signed(r, &[4, 6, 3]),
                signed(r, &[4, 6, 3]),
                uniform(r, &[2], 0.5, 2.0),
            ];
            setup(inputs, |v| xca_attend(&v[0], &v[1], &v[2], &v[3]))
        }),
        case!("sa_attend", |r| {
            let inputs = vec![signed(r, &[2, 5, 3]), signed(r, &[2, 5, 3]), signed(r, &[2, 5, 3])];
            setup(inputs, |v| sa_attend(&v[0], &v[1], &v[2]))
        }),
        case!("region_split", |r| unary(r, &[2, 4, 2, 4], |x| region_split(x, 2))),
        case!("region_merge", |r| {
            let view = RegionView::new(&[2, 4, 2, 4], 2)?;
            setup(vec![signed(r, &[4, 8, 2])], move |v| region_merge(&v[0], &view))
        }),
        case!("to_tokens", |r| {
            let view = RegionView::new(&[4, 4, 2, 4], 2)?;
            setup(vec![signed(r, &[8, 4, 2, 4])], move |v| {
                let local = to_tokens(&v[0], &view, 2, Axis::Local)?;
                let global = to_tokens(&v[0], &view, 2, Axis::Global)?;
                concat(
                    &[
                        &reshape(&local, &[local.value().numel()])?,
                        &reshape(&global, &[global.value().numel()])?,
                    ],
                    0,
                )
            })
        }),
        case!("from_tokens", |r| {
            let view = RegionView::new(&[4, 4, 2, 4], 2)?;
            setup(vec![signed(r, &[8, 8, 2]), signed(r, &[16, 4, 2])], move |v| {
                let local = from_tokens(&v[0], &view, 2, Axis::Local)?;
                let global = from_tokens(&v[1], &view, 2, Axis::Global)?;
                concat(&[&local, &global], 0)
            })
        }),
        case!("maxca_block", |r| maxca_case(r, Projection::Conv3)),
        case!("maxca_block_linear", |r| maxca_case(r, Projection::Linear)),
        case!("dense_xca_block", |r| {
            let mut store = ParamStore::new();
            let block = DenseXcaBlock::new(&mut store, r, "b", 4, 2, true)?;
            let x = signed(r, &[4, 2, 3, 2]);
            setup(layer_inputs(r, x, &store), move |v| {
                block.forward(&layer_params(v), &v[0])
            })
        }),
        case!("dense_sa_block", |r| {
            let mut store = ParamStore::new();
            let block = DenseSaBlock::new(&mut store, r, "b", 4, 2, false)?;
            let x = signed(r, &[4, 2, 3, 2]);
            setup(layer_inputs(r, x, &store), move |v| {
                block.forward(&layer_params(v), &v[0])
            })
        }),
        case!("warp", |r| {
            let inputs = vec![signed(r, &[2, 4, 5, 3]), displacement(r, [4, 5, 3])];
            setup(inputs, |v| warp(&v[0], &v[1], Boundary::Clamp))
        }),
        case!("warp_zero_boundary", |r| {
            let inputs = vec![signed(r, &[1, 4, 3, 5]), displacement(r, [4, 3, 5])];
            setup(inputs, |v| warp(&v[0], &v[1], Boundary::Zero))
        }),
        case!("ncc_loss", |r| {
            let inputs = vec![uniform(r, &[1, 5, 4, 6], 0.0, 1.0), uniform(r, &[1, 5, 4, 6], 0.0, 1.0)];
            setup(inputs, |v| ncc_loss(&v[0], &v[1], 3, 1e-5))
        }),
        case!("diffusion_reg", |r| unary(r, &[3, 4, 5, 3], diffusion_reg)),
        Case {
            name: "total_loss",
            tolerance: LOSS_TOLERANCE,
            build: |r| {
                let ext = [6, 6, 6];
                let fixed = Var::constant(uniform(r, &[1, 6, 6, 6], 0.0, 1.0));
                let inputs = vec![uniform(r, &[1, 6, 6, 6], 0.0, 1.0), displacement(r, ext)];
                let cfg = LossConfig {
                    window: 5,
                    ..LossConfig::default()
                };
                setup(inputs, move |v| Ok(total_loss(&fixed, &v[0], &v[1], &cfg)?.total))
            },
        },
    ]
}

fn dot(w: &Tensor<f64>, y: &Tensor<f64>) -> f64 {
    w.data().iter().zip(y.data()).map(|(a, b)| a * b).sum()
}

fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale < 1e-12 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

/// Relative error and coordinate count of `case` for one seed.
pub fn check_case(case: &Case, seed: u64) -> Result<(f64, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let Setup { inputs, f } = (case.build)(&mut rng)?;
    let vars: Vec<Var<f64>> = inputs.iter().cloned().map(Var::param).collect();
    let y = f(&vars)?;
    let w = if y.value().rank() == 0 {
        Tensor::scalar(1.0)
    } else {
        uniform(&mut rng, y.shape(), -1.0, 1.0)
    };
    let grads = Graph::from_output(&y).backward_from(w.clone())?;

    let total: usize = inputs.iter().map(Tensor::numel).sum();
    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    for (k, x) in inputs.iter().enumerate() {
        let g = grads.get_or_zeros(&vars[k]);
        let n = x.numel();
        let take = n.min((BUDGET * n).div_ceil(total).max(16));
        let mut coords = sample(&mut rng, n, take).into_vec();
        coords.sort_unstable();
        for i in coords {
            let eval = |delta: f64| -> Result<f64> {
                let mut data = x.to_vec();
                data[i] += delta;
                let args: Vec<Var<f64>> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, t)| {
                        if j == k {
                            Var::constant(Tensor::new(x.shape(), data.clone()).expect("same shape"))
                        } else {
                            Var::constant(t.clone())
                        }
                    })
                    .collect();
                Ok(dot(&w, f(&args)?.value()))
            };
            let h = 1e-4 * x.data()[i].abs().max(1.0);
            numeric.push((eval(h)? - eval(-h)?) / (2.0 * h));
            analytic.push(g.data()[i]);
        }
    }
    Ok((relative_error(&analytic, &numeric), analytic.len()))
}

/// Worst error of `case` over `seeds`.
pub fn check(case: &Case, seeds: &[u64]) -> Result<CheckReport> {
    let mut report = CheckReport {
        name: case.name.to_string(),
        rel_err: 0.0,
        tolerance: case.tolerance,
        coordinates: 0,
    };
    for &s in seeds {
        let (e, n) = check_case(case, s)?;
        report.rel_err = report.rel_err.max(if e.is_nan() { f64::INFINITY } else { e });
        report.coordinates += n;
    }
    Ok(report)
}

pub fn run_suite(seeds: &[u64]) -> Result<Vec<CheckReport>> {
    cases().iter().map(|c| check(c, seeds)).collect()
}

/// Squares its input but reports a gradient of `3x`.
struct CorruptedSquare;

impl Backward<f64> for CorruptedSquare {
    fn name(&self) -> &'static str {
        "corrupted_square"
    }

    fn backward(&self, ctx: &BackwardCtx<'_, f64>) -> Result<Vec<Option<Tensor<f64>>>> {
        let x = ctx.inputs[0].value();
        Ok(vec![Some(x.zip_map(ctx.grad, |a, g| 3.0 * a * g)?)])
    }
}

/// A case with a deliberately wrong backward rule; it must fail.
pub fn negative_control() -> Case {
    case!("corrupted_square", |r| {
        unary(r, &[2, 3], |x| {
            Var::from_op(x.value().map(|v| v * v), &[x], CorruptedSquare)
        })
    })
}
