use crate::error::Result;
use crate::numerics::{GradBuffer, ParameterStore, Tensor};

/// Adam with decoupled weight decay on parameters flagged for decay.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl AdamW {
    pub fn new(store: &ParameterStore<f32>, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        let zeros = || store.iter().map(|p| vec![0.0; p.value.len()]).collect();
        AdamW {
            beta1,
            beta2,
            eps,
            weight_decay,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn update(&mut self, store: &mut ParameterStore<f32>, grads: &GradBuffer<f32>, lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let i = id.index();
            let shrink = if store.get(id).decay {
                (1.0 - lr * self.weight_decay) as f32
            } else {
                1.0
            };
            let g = grads.get(id);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let value = store.value_mut(id).data_mut();
            for k in 0..value.len() {
                m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                let mhat = m[k] as f64 / bc1;
                let vhat = v[k] as f64 / bc2;
                value[k] = value[k] * shrink - (lr * mhat / (vhat.sqrt() + self.eps)) as f32;
            }
        }
    }

    /// Moment tables as named tensors, for saving alongside a checkpoint.
    pub fn state(&self, store: &ParameterStore<f32>) -> Result<ParameterStore<f32>> {
        let mut out = ParameterStore::new();
        out.add("step", Tensor::from_vec(vec![(self.step >> 24) as f32, (self.step & 0xFF_FFFF) as f32]), false)?;
        for (i, p) in store.iter().enumerate() {
            out.add(format!("m.{}", p.name), Tensor::new(p.value.shape().to_vec(), self.m[i].clone())?, false)?;
            out.add(format!("v.{}", p.name), Tensor::new(p.value.shape().to_vec(), self.v[i].clone())?, false)?;
        }
        Ok(out)
    }

    pub fn restore(&mut self, store: &ParameterStore<f32>, state: Vec<(String, Tensor<f32>)>) -> Result<()> {
        let mut target = self.state(store)?;
        target.assign_named(state)?;
        let step = target.value(target.id("step").expect("step entry")).data();
        self.step = ((step[0] as u64) << 24) | step[1] as u64;
        for (i, p) in store.iter().enumerate() {
            let m = target.id(&format!("m.{}", p.name)).expect("moment entry");
            let v = target.id(&format!("v.{}", p.name)).expect("moment entry");
            self.m[i] = target.value(m).data().to_vec();
            self.v[i] = target.value(v).data().to_vec();
        }
        Ok(())
    }
}
