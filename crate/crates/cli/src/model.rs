//! A network together with its parameter values.

use std::path::Path;

use maxca_core::metrics::dsc;
use maxca_core::nn::ParamStore;
use maxca_core::regnet::{
    load_checkpoint, save_checkpoint, warp, warp_labels, Boundary, Checkpoint, LabelMap, NetConfig, Volume, XcaMorph,
};
use maxca_core::{Tensor, Var};
use rand::Rng;

use crate::data::Pair;
use crate::error::CliResult;

#[derive(Debug, Clone)]
pub struct Model {
    pub net: XcaMorph,
    pub store: ParamStore<f32>,
}

impl Model {
    /// Freshly initialized; with `zero_head` the final convolution starts at
    /// zero so the network predicts the identity map.
    pub fn init(cfg: &NetConfig, zero_head: bool, rng: &mut impl Rng) -> CliResult<Self> {
        let mut store = ParamStore::new();
        let net = XcaMorph::new(cfg, &mut store, rng)?;
        if zero_head {
            let shape = store.get(net.head.weight).shape().to_vec();
            store.set(net.head.weight, Tensor::zeros(&shape))?;
        }
        Ok(Model { net, store })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let ck = load_checkpoint(path)?;
        Ok(Model {
            net: ck.network()?,
            store: ck.params,
        })
    }

    pub fn save(&self, path: &Path, meta: &str) -> CliResult<()> {
        let ck = Checkpoint {
            net: self.net.cfg.clone(),
            meta: meta.to_string(),
            params: self.store.clone(),
        };
        Ok(save_checkpoint(path, &ck)?)
    }

    /// Displacement field mapping `fixed` onto `moving`.
    pub fn predict(&self, fixed: &Volume, moving: &Volume) -> CliResult<Tensor<f32>> {
        let p = self.store.leaves(false);
        let u = self.net.forward(
            &p,
            &Var::constant(fixed.data.clone()),
            &Var::constant(moving.data.clone()),
        )?;
        Ok(u.value().clone())
    }

    /// Mean foreground DSC after registering `pair`.
    pub fn pair_dsc(&self, pair: &Pair) -> CliResult<f64> {
        let u = self.predict(&pair.fixed, &pair.moving)?;
        let warped = warp_labels(&pair.labels_moving, &u, Boundary::Clamp)?;
        Ok(dsc(&pair.labels_fixed, &warped, &pair.label_set())?.mean)
    }
}

pub fn warp_volume(v: &Volume, u: &Tensor<f32>) -> CliResult<Volume> {
    let w = warp(
        &Var::constant(v.data.clone()),
        &Var::constant(u.clone()),
        Boundary::Clamp,
    )?;
    Ok(Volume::new(w.value().clone())?)
}

pub fn warp_label_map(l: &LabelMap, u: &Tensor<f32>) -> CliResult<LabelMap> {
    Ok(warp_labels(l, u, Boundary::Clamp)?)
}
