//! Highway input-embedding encoder, length predictor and the masked-attention
//! decoder. The same network serves the bidirectional model and, with
//! `causal = true`, the autoregressive baseline.

use rand::Rng as _;
use rand_distr::{Distribution, Normal, Uniform};

use super::config::ModelConfig;
use crate::corpus::vocab::{TokenId, PAD};
use crate::error::{Error, Result};
use crate::numerics::{Binder, GradBuffer, ParamId, ParameterStore, Real, Tape, Tensor, Var};
use crate::rng::{self, Rng};

/// Per-video encoder input: one `K×d_v` matrix per modality.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoFeatures {
    pub modalities: Vec<Tensor<f32>>,
    pub category: Option<usize>,
}

#[derive(Clone, Debug)]
struct EncoderIds {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    w3: ParamId,
    b3: ParamId,
}

#[derive(Clone, Debug)]
struct LengthIds {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Clone, Debug)]
struct HeadIds {
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
}

#[derive(Clone, Debug)]
struct AttentionIds {
    heads: Vec<HeadIds>,
    wo: ParamId,
    bo: ParamId,
    ln_gain: ParamId,
    ln_bias: ParamId,
}

#[derive(Clone, Debug)]
struct LayerIds {
    self_attn: AttentionIds,
    cross_attn: AttentionIds,
    ffn_w1: ParamId,
    ffn_b1: ParamId,
    ffn_w2: ParamId,
    ffn_b2: ParamId,
    ffn_ln_gain: ParamId,
    ffn_ln_bias: ParamId,
}

#[derive(Clone, Debug)]
struct Ids {
    encoders: Vec<EncoderIds>,
    category: Option<ParamId>,
    length: Option<LengthIds>,
    token: ParamId,
    position: ParamId,
    layers: Vec<LayerIds>,
    out_w: ParamId,
    out_b: ParamId,
}

struct Init<'a, F: Real> {
    store: &'a mut ParameterStore<F>,
    rng: Rng,
}

impl<F: Real> Init<'_, F> {
    fn weight(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId> {
        let std = (2.0 / (rows + cols) as f64).sqrt();
        let normal = Normal::new(0.0, std).unwrap();
        let data = (0..rows * cols).map(|_| F::lit(normal.sample(&mut self.rng))).collect();
        self.store.add(name, Tensor::matrix(rows, cols, data)?, true)
    }

    fn bias(&mut self, name: &str, n: usize) -> Result<ParamId> {
        self.store.add(name, Tensor::zeros(&[n]), false)
    }

    fn ones(&mut self, name: &str, n: usize) -> Result<ParamId> {
        self.store.add(name, Tensor::filled(&[n], F::one()), false)
    }

    fn embedding(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId> {
        let u = Uniform::new(-0.1, 0.1).unwrap();
        let data = (0..rows * cols).map(|_| F::lit(u.sample(&mut self.rng))).collect();
        self.store.add(name, Tensor::matrix(rows, cols, data)?, false)
    }

    fn attention(&mut self, prefix: &str, c: &ModelConfig) -> Result<AttentionIds> {
        let (dm, dk) = (c.d_model, c.head_dim());
        let mut heads = Vec::with_capacity(c.heads);
        for h in 0..c.heads {
            let p = format!("{prefix}.head{h}");
            heads.push(HeadIds {
                wq: self.weight(&format!("{p}.w_q"), dm, dk)?,
                bq: self.bias(&format!("{p}.b_q"), dk)?,
                wk: self.weight(&format!("{p}.w_k"), dm, dk)?,
                bk: self.bias(&format!("{p}.b_k"), dk)?,
                wv: self.weight(&format!("{p}.w_v"), dm, dk)?,
                bv: self.bias(&format!("{p}.b_v"), dk)?,
            });
        }
        Ok(AttentionIds {
            heads,
            wo: self.weight(&format!("{prefix}.w_mha"), dm, dm)?,
            bo: self.bias(&format!("{prefix}.b_mha"), dm)?,
            ln_gain: self.ones(&format!("{prefix}.ln.gain"), dm)?,
            ln_bias: self.bias(&format!("{prefix}.ln.bias"), dm)?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Network<F: Real = f32> {
    config: ModelConfig,
    params: ParameterStore<F>,
    ids: Ids,
}

impl<F: Real> Network<F> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParameterStore::new();
        let mut init = Init {
            store: &mut params,
            rng: rng::stream(seed, &[rng::tag::INIT]),
        };
        let c = &config;
        let dm = c.d_model;
        let mut encoders = Vec::new();
        for m in &c.modalities {
            let p = format!("encoder.{}", m.name);
            encoders.push(EncoderIds {
                w1: init.weight(&format!("{p}.w_e1"), m.dim, dm)?,
                b1: init.bias(&format!("{p}.b_e1"), dm)?,
                w2: init.weight(&format!("{p}.w_e2"), dm, dm)?,
                b2: init.bias(&format!("{p}.b_e2"), dm)?,
                w3: init.weight(&format!("{p}.w_e3"), dm, dm)?,
                b3: init.bias(&format!("{p}.b_e3"), dm)?,
            });
        }
        let category = match c.category_count {
            Some(n) => Some(init.embedding("encoder.category", n, dm)?),
            None => None,
        };
        let length = if c.causal {
            None
        } else {
            Some(LengthIds {
                w1: init.weight("length.w_l1", dm, dm)?,
                b1: init.bias("length.b_l1", dm)?,
                w2: init.weight("length.w_l2", dm, c.max_len)?,
                b2: init.bias("length.b_l2", c.max_len)?,
            })
        };
        let token = init.embedding("embed.token", c.vocab_size, dm)?;
        let position = init.embedding("embed.position", c.positions(), dm)?;
        let mut layers = Vec::new();
        for l in 0..c.decoder_layers {
            let p = format!("decoder.layer{l}");
            layers.push(LayerIds {
                self_attn: init.attention(&format!("{p}.self"), c)?,
                cross_attn: init.attention(&format!("{p}.cross"), c)?,
                ffn_w1: init.weight(&format!("{p}.ffn.w_f1"), dm, c.d_hidden)?,
                ffn_b1: init.bias(&format!("{p}.ffn.b_f1"), c.d_hidden)?,
                ffn_w2: init.weight(&format!("{p}.ffn.w_f2"), c.d_hidden, dm)?,
                ffn_b2: init.bias(&format!("{p}.ffn.b_f2"), dm)?,
                ffn_ln_gain: init.ones(&format!("{p}.ffn.ln.gain"), dm)?,
                ffn_ln_bias: init.bias(&format!("{p}.ffn.ln.bias"), dm)?,
            });
        }
        let out_w = init.weight("output.w_pj", dm, c.vocab_size)?;
        let out_b = init.bias("output.b_pj", c.vocab_size)?;
        let ids = Ids {
            encoders,
            category,
            length,
            token,
            position,
            layers,
            out_w,
            out_b,
        };
        Ok(Network { config, params, ids })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParameterStore<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterStore<F> {
        &mut self.params
    }

    pub fn cast<G: Real>(&self) -> Network<G> {
        Network {
            config: self.config.clone(),
            params: self.params.cast(),
            ids: self.ids.clone(),
        }
    }

    /// Inference session: no dropout, no gradient bookkeeping.
    pub fn session(&self) -> Session<'_, F> {
        Session::new(self, false, false, rng::stream(0, &[]))
    }

    /// Training session with dropout driven by `rng`.
    pub fn train_session(&self, rng: Rng) -> Session<'_, F> {
        Session::new(self, true, true, rng)
    }

    /// Forward session that records gradients but keeps dropout off.
    pub fn grad_session(&self) -> Session<'_, F> {
        Session::new(self, false, true, rng::stream(0, &[]))
    }
}

/// One forward computation over a fresh tape.
pub struct Session<'n, F: Real> {
    net: &'n Network<F>,
    pub tape: Tape<F>,
    binder: Binder,
    train: bool,
    rng: Rng,
    memory_kv: Option<(Var, Vec<Vec<(Var, Var)>>)>,
    passes: usize,
}

impl<'n, F: Real> Session<'n, F> {
    fn new(net: &'n Network<F>, train: bool, requires_grad: bool, rng: Rng) -> Self {
        Session {
            net,
            tape: Tape::new(),
            binder: Binder::new(&net.params, requires_grad),
            train,
            rng,
            memory_kv: None,
            passes: 0,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.net.config
    }

    /// Decoder forward passes executed so far.
    pub fn passes(&self) -> usize {
        self.passes
    }

    fn p(&mut self, id: ParamId) -> Result<Var> {
        self.binder.bind(&mut self.tape, &self.net.params, id)
    }

    fn linear(&mut self, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
        let (w, b) = (self.p(w)?, self.p(b)?);
        let y = self.tape.matmul(x, w)?;
        self.tape.add_row(y, b)
    }

    fn dropout(&mut self, x: Var) -> Result<Var> {
        let p = self.net.config.dropout;
        self.tape.dropout(x, p, self.train, &mut self.rng)
    }

    /// Video representation R: highway embedding of every modality stacked by
    /// rows, plus one category row when configured.
    pub fn encode(&mut self, features: &VideoFeatures) -> Result<Var> {
        let c = &self.net.config;
        if features.modalities.len() != c.modalities.len() {
            return Err(Error::shape(
                "encode",
                format!("{} modalities, expected {}", features.modalities.len(), c.modalities.len()),
            ));
        }
        let ids = self.net.ids.clone();
        let mut parts = Vec::new();
        for (m, (enc, feats)) in ids.encoders.iter().zip(&features.modalities).enumerate() {
            let want = [c.frames, c.modalities[m].dim];
            if feats.shape() != want {
                return Err(Error::shape(
                    "encode",
                    format!("modality {} has shape {:?}, expected {want:?}", c.modalities[m].name, feats.shape()),
                ));
            }
            let x = self.tape.leaf(feats.cast(), false)?;
            let x_bar = self.linear(x, enc.w1, enc.b1)?;
            let pre = self.linear(x_bar, enc.w2, enc.b2)?;
            let x_hat = self.tape.tanh(pre)?;
            let gate_pre = self.linear(x_bar, enc.w3, enc.b3)?;
            let gate = self.tape.sigmoid(gate_pre)?;
            // g∘x̄ + (1−g)∘x̂ = x̂ + g∘(x̄ − x̂)
            let diff = self.tape.sub(x_bar, x_hat)?;
            let gated = self.tape.mul(gate, diff)?;
            parts.push(self.tape.add(x_hat, gated)?);
        }
        match (ids.category, c.category_count) {
            (Some(table), Some(count)) => {
                let cat = features.category.ok_or_else(|| Error::Config("video has no category tag".into()))?;
                if cat >= count {
                    return Err(Error::UnknownCategory(cat));
                }
                let t = self.p(table)?;
                parts.push(self.tape.embedding(t, &[cat])?);
            }
            _ => {}
        }
        if parts.len() == 1 {
            Ok(parts[0])
        } else {
            self.tape.concat(&parts, 0)
        }
    }

    /// Unnormalised length scores, one per length 1..=N_max.
    pub fn length_logits(&mut self, memory: Var) -> Result<Var> {
        let lp = self
            .net
            .ids
            .length
            .clone()
            .ok_or_else(|| Error::Config("autoregressive model has no length predictor".into()))?;
        let pooled = self.tape.mean_pool(memory, 0)?;
        let h = self.linear(pooled, lp.w1, lp.b1)?;
        let h = self.tape.relu(h)?;
        self.linear(h, lp.w2, lp.b2)
    }

    /// Predicted length distribution L; entry `j` is the probability of length `j + 1`.
    pub fn predict_length(&mut self, memory: Var) -> Result<Vec<F>> {
        let logits = self.length_logits(memory)?;
        let probs = self.tape.softmax(logits, 1)?;
        Ok(self.tape.value(probs).data().to_vec())
    }

    /// Input embeddings `e_n = e_tok + e_pos_n (+ mean-pooled R)` for the
    /// concatenation of `segments`; positions restart in every segment.
    pub fn input_embed(&mut self, memory: Var, segments: &[&[TokenId]]) -> Result<Var> {
        let c = &self.net.config;
        let max = c.positions();
        let vocab = c.vocab_size;
        let mut ids = Vec::new();
        let mut positions = Vec::new();
        for seg in segments {
            if seg.is_empty() {
                return Err(Error::EmptySentence);
            }
            if seg.len() > max {
                return Err(Error::LengthExceedsMax {
                    len: seg.len(),
                    max,
                });
            }
            for (n, &t) in seg.iter().enumerate() {
                if t >= vocab {
                    return Err(Error::UnknownToken {
                        word: format!("#{t}"),
                        line: None,
                    });
                }
                ids.push(t);
                positions.push(n);
            }
        }
        if ids.is_empty() {
            return Err(Error::EmptySentence);
        }
        let source = c.source_embedding;
        let (tok_id, pos_id) = (self.net.ids.token, self.net.ids.position);
        let table = self.p(tok_id)?;
        let tok = self.tape.embedding(table, &ids)?;
        let table = self.p(pos_id)?;
        let pos = self.tape.embedding(table, &positions)?;
        let e = self.tape.add(tok, pos)?;
        if source {
            let pooled = self.tape.mean_pool(memory, 0)?;
            self.tape.add_row(e, pooled)
        } else {
            Ok(e)
        }
    }

    fn self_attention_mask(&self, segments: &[&[TokenId]]) -> Vec<bool> {
        let causal = self.net.config.causal;
        let total: usize = segments.iter().map(|s| s.len()).sum();
        let mut mask = vec![false; total * total];
        let mut start = 0;
        for seg in segments {
            for i in 0..seg.len() {
                for j in 0..seg.len() {
                    let visible = (!causal || j <= i) && (seg[j] != PAD || i == j);
                    mask[(start + i) * total + start + j] = visible;
                }
            }
            start += seg.len();
        }
        mask
    }

    fn attention(
        &mut self,
        ids: &AttentionIds,
        query: Var,
        keys: Option<&[(Var, Var)]>,
        key_source: Var,
        mask: Option<&[bool]>,
    ) -> Result<Var> {
        let scale = F::one() / F::from_usize(self.net.config.head_dim()).unwrap().sqrt();
        let mut heads = Vec::with_capacity(ids.heads.len());
        for (h, hid) in ids.heads.iter().enumerate() {
            let q = self.linear(query, hid.wq, hid.bq)?;
            let (k, v) = match keys {
                Some(kv) => kv[h],
                None => (
                    self.linear(key_source, hid.wk, hid.bk)?,
                    self.linear(key_source, hid.wv, hid.bv)?,
                ),
            };
            let scores = self.tape.matmul_nt(q, k)?;
            let scores = self.tape.scale(scores, scale)?;
            let weights = self.tape.masked_softmax(scores, 1, mask)?;
            heads.push(self.tape.matmul(weights, v)?);
        }
        let cat = if heads.len() == 1 {
            heads[0]
        } else {
            self.tape.concat(&heads, 1)?
        };
        let proj = self.linear(cat, ids.wo, ids.bo)?;
        let proj = self.dropout(proj)?;
        let res = self.tape.add(proj, query)?;
        let (g, b) = (self.p(ids.ln_gain)?, self.p(ids.ln_bias)?);
        self.tape.layer_norm(res, g, b)
    }

    /// Keys and values of R for every cross-attention head, computed once per
    /// memory and reused across passes of this session.
    fn memory_keys(&mut self, memory: Var) -> Result<Vec<Vec<(Var, Var)>>> {
        if let Some((m, kv)) = &self.memory_kv {
            if *m == memory {
                return Ok(kv.clone());
            }
        }
        let layers = self.net.ids.layers.clone();
        let mut all = Vec::with_capacity(layers.len());
        for layer in &layers {
            let mut kv = Vec::with_capacity(layer.cross_attn.heads.len());
            for hid in &layer.cross_attn.heads {
                let k = self.linear(memory, hid.wk, hid.bk)?;
                let v = self.linear(memory, hid.wv, hid.bv)?;
                kv.push((k, v));
            }
            all.push(kv);
        }
        self.memory_kv = Some((memory, all.clone()));
        Ok(all)
    }

    /// One decoder pass over the concatenated `segments`, returning logits of
    /// shape `(Σ len) × vocab`. Segments never attend to each other, so the
    /// result for each segment equals decoding it alone.
    pub fn decode(&mut self, memory: Var, segments: &[&[TokenId]]) -> Result<Var> {
        let mut x = self.input_embed(memory, segments)?;
        let mask = self.self_attention_mask(segments);
        let layers = self.net.ids.layers.clone();
        let memory_kv = self.memory_keys(memory)?;
        for (layer, kv) in layers.iter().zip(&memory_kv) {
            x = self.attention(&layer.self_attn, x, None, x, Some(&mask))?;
            x = self.attention(&layer.cross_attn, x, Some(kv), memory, None)?;
            let h = self.linear(x, layer.ffn_w1, layer.ffn_b1)?;
            let h = self.tape.relu(h)?;
            let h = self.linear(h, layer.ffn_w2, layer.ffn_b2)?;
            let h = self.dropout(h)?;
            let res = self.tape.add(h, x)?;
            let (g, b) = (self.p(layer.ffn_ln_gain)?, self.p(layer.ffn_ln_bias)?);
            x = self.tape.layer_norm(res, g, b)?;
        }
        let (w, b) = (self.net.ids.out_w, self.net.ids.out_b);
        let logits = self.linear(x, w, b)?;
        self.passes += 1;
        Ok(logits)
    }

    /// Per-position distributions over the vocabulary.
    pub fn probabilities(&mut self, logits: Var) -> Result<Tensor<F>> {
        let p = self.tape.softmax(logits, 1)?;
        Ok(self.tape.value(p).clone())
    }

    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.tape.backward(loss)
    }

    pub fn collect_grads(&self, into: &mut GradBuffer<F>) {
        into.collect(&self.tape, &self.binder);
    }

    pub fn random_uniform(&mut self) -> f64 {
        self.rng.random()
    }
}
