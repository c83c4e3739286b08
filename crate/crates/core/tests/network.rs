use std::time::Instant;

use maxca_core::nn::ParamStore;
use maxca_core::regnet::{total_loss, BlockKind, LossConfig, NetConfig, XcaMorph};
use maxca_core::{backward, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small(block: BlockKind) -> NetConfig {
    NetConfig {
        input: [16, 16, 16],
        regions: vec![4, 2, 2, 1],
        block,
        ..NetConfig::tiny()
    }
}

fn image(ext: [usize; 3], rng: &mut impl Rng) -> Var<f32> {
    Var::constant(Tensor::from_fn(&[1, ext[0], ext[1], ext[2]], |_| rng.random::<f32>()))
}

#[test]
fn every_block_kind_produces_a_field() {
    for block in [
        BlockKind::Maxca,
        BlockKind::DenseXca,
        BlockKind::DenseSaPlusConv,
        BlockKind::CnnBaseline,
    ] {
        let cfg = small(block);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::<f32>::new();
        let net = XcaMorph::new(&cfg, &mut store, &mut rng).unwrap();
        let (f, m) = (image(cfg.input, &mut rng), image(cfg.input, &mut rng));
        let u = net.forward(&store.leaves(false), &f, &m).unwrap();
        assert_eq!(u.shape(), &[3, 16, 16, 16], "{block:?}");
        // The head starts near zero so the initial warp is close to identity.
        assert!(u.value().data().iter().all(|v| v.abs() < 1e-2), "{block:?}");
    }
}

#[test]
fn zeroed_head_gives_zero_field() {
    let cfg = small(BlockKind::Maxca);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::<f32>::new();
    let net = XcaMorph::new(&cfg, &mut store, &mut rng).unwrap();
    store.map_values(|name, t| {
        if name.starts_with("head.") {
            Tensor::zeros(t.shape())
        } else {
            t.clone()
        }
    });
    let (f, m) = (image(cfg.input, &mut rng), image(cfg.input, &mut rng));
    let u = net.forward(&store.leaves(false), &f, &m).unwrap();
    assert!(u.value().data().iter().all(|&v| v == 0.0));
}

#[test]
fn mismatched_inputs_are_rejected() {
    let cfg = small(BlockKind::Maxca);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::<f32>::new();
    let net = XcaMorph::new(&cfg, &mut store, &mut rng).unwrap();
    let f = image(cfg.input, &mut rng);
    let m = image([16, 16, 8], &mut rng);
    assert!(net.forward(&store.leaves(false), &f, &m).is_err());
    let two = Var::constant(Tensor::zeros(&[2, 16, 16, 16]));
    assert!(net.forward(&store.leaves(false), &two, &f).is_err());
}

#[test]
fn tiny_training_step_has_finite_gradients() {
    let cfg = NetConfig::tiny();
    for seed in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::<f32>::new();
        let net = XcaMorph::new(&cfg, &mut store, &mut rng).unwrap();
        let (f, m) = (image(cfg.input, &mut rng), image(cfg.input, &mut rng));
        let start = Instant::now();
        let p = store.leaves(true);
        let u = net.forward(&p, &f, &m).unwrap();
        let terms = total_loss(&f, &m, &u, &LossConfig::default()).unwrap();
        let grads = backward(&terms.total).unwrap();
        eprintln!("seed {seed}: step {:?}", start.elapsed());
        assert!(terms.total.value().item().is_finite());
        let mut nonzero = 0;
        for v in p.vars() {
            let g = grads.get_or_zeros(v);
            assert!(g.data().iter().all(|x| x.is_finite()));
            nonzero += g.data().iter().any(|&x| x != 0.0) as usize;
        }
        assert!(
            nonzero > p.vars().len() / 2,
            "{nonzero} of {} params got gradient",
            p.vars().len()
        );
    }
}
