#![allow(dead_code)]

use nacf::model::{ModalityConfig, ModelConfig, Network, VideoFeatures};
use nacf::numerics::{Real, Tensor};
use rand::{Rng, SeedableRng};

pub fn toy_config(causal: bool) -> ModelConfig {
    ModelConfig {
        modalities: vec![
            ModalityConfig { name: "image".into(), dim: 6 },
            ModalityConfig { name: "motion".into(), dim: 4 },
        ],
        frames: 2,
        category_count: None,
        d_model: 16,
        d_hidden: 32,
        heads: 2,
        decoder_layers: 1,
        max_len: 20,
        vocab_size: 30,
        dropout: 0.1,
        causal,
        source_embedding: true,
    }
}

pub fn features(c: &ModelConfig, seed: u64) -> VideoFeatures {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    VideoFeatures {
        modalities: c
            .modalities
            .iter()
            .map(|m| {
                let data = (0..c.frames * m.dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                Tensor::matrix(c.frames, m.dim, data).unwrap()
            })
            .collect(),
        category: c.category_count.map(|_| 0),
    }
}

pub fn set_param<F: Real>(net: &mut Network<F>, name: &str, f: impl Fn(usize, usize) -> f64) {
    let id = net.params().id(name).unwrap_or_else(|| panic!("no parameter {name}"));
    let t = net.params_mut().value_mut(id);
    let cols = *t.shape().last().unwrap();
    for (i, v) in t.data_mut().iter_mut().enumerate() {
        *v = F::lit(f(i / cols, i % cols));
    }
}

/// Makes every output distribution uniform.
pub fn flatten_output<F: Real>(net: &mut Network<F>) {
    set_param(net, "output.w_pj", |_, _| 0.0);
    set_param(net, "output.b_pj", |_, _| 0.0);
}
