#![allow(dead_code)]

use std::path::PathBuf;

use assoc_learn::al::{AlNetwork, SubBlock};
use assoc_learn::linalg::Matrix;

/// MNIST directory from `AL_DATA_DIR`, else `data/mnist` at the workspace root.
pub fn mnist_dir() -> Option<PathBuf> {
    let dir = std::env::var_os("AL_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"));
    ["train-labels-idx1-ubyte", "train-labels-idx1-ubyte.gz"]
        .iter()
        .any(|f| dir.join(f).exists())
        .then_some(dir)
}

pub fn block_params(net: &AlNetwork, index: usize, which: SubBlock) -> Vec<Matrix> {
    net.component(index)
        .block(which)
        .params()
        .into_iter()
        .cloned()
        .collect()
}

pub fn all_params(net: &AlNetwork) -> Vec<Matrix> {
    (1..=net.num_components())
        .flat_map(|i| {
            SubBlock::ALL
                .into_iter()
                .flat_map(move |w| block_params(net, i, w))
        })
        .collect()
}

/// Adds `delta` to every parameter of the affiliated blocks: all g and every
/// bridge below the top.
pub fn perturb_affiliated(net: &mut AlNetwork, delta: f64) {
    let c = net.num_components();
    for i in 1..=c {
        let mut targets = vec![SubBlock::G];
        if i < c {
            targets.push(SubBlock::B);
        }
        for w in targets {
            for p in net.component_mut(i).block_mut(w).params_mut() {
                *p = p.map(|v| v + delta);
            }
        }
    }
}
