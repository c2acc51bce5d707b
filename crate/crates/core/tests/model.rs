use nacf::corpus::vocab::{MASK, PAD, VISUAL};
use nacf::model::{load_model, save_model, ModalityConfig, ModelConfig, Network, Sidecar, Variant, VideoFeatures};
use nacf::numerics::Tensor;
use nacf::Error;
use rand::{Rng, SeedableRng};

fn config(heads: usize, causal: bool) -> ModelConfig {
    ModelConfig {
        modalities: vec![
            ModalityConfig { name: "image".into(), dim: 6 },
            ModalityConfig { name: "motion".into(), dim: 5 },
        ],
        frames: 3,
        category_count: None,
        d_model: 8,
        d_hidden: 12,
        heads,
        decoder_layers: 1,
        max_len: 6,
        vocab_size: 15,
        dropout: 0.5,
        causal,
        source_embedding: true,
    }
}

fn features(c: &ModelConfig, seed: u64) -> VideoFeatures {
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
        category: None,
    }
}

fn set(net: &mut Network<f64>, name: &str, f: impl Fn(usize, usize) -> f64) {
    let id = net.params().id(name).unwrap_or_else(|| panic!("no parameter {name}"));
    let t = net.params_mut().value_mut(id);
    let cols = *t.shape().last().unwrap();
    for (i, v) in t.data_mut().iter_mut().enumerate() {
        *v = f(i / cols, i % cols);
    }
}

fn decode_probs(net: &Network<f64>, feats: &VideoFeatures, tokens: &[usize]) -> Vec<f64> {
    let mut s = net.session();
    let r = s.encode(feats).unwrap();
    let logits = s.decode(r, &[tokens]).unwrap();
    s.probabilities(logits).unwrap().into_data()
}

#[test]
fn highway_identity_halves_input() {
    let c = ModelConfig {
        modalities: vec![ModalityConfig { name: "image".into(), dim: 4 }],
        frames: 2,
        d_model: 4,
        heads: 2,
        ..config(2, false)
    };
    let mut net = Network::<f64>::new(c.clone(), 1).unwrap();
    set(&mut net, "encoder.image.w_e1", |i, j| if i == j { 1.0 } else { 0.0 });
    set(&mut net, "encoder.image.w_e2", |_, _| 0.0);
    set(&mut net, "encoder.image.w_e3", |_, _| 0.0);
    let x = vec![0.5, -1.0, 2.0, 3.0, -0.25, 0.0, 1.5, -2.0];
    let feats = VideoFeatures {
        modalities: vec![Tensor::matrix(2, 4, x.iter().map(|&v| v as f32).collect()).unwrap()],
        category: None,
    };
    let mut s = net.session();
    let r = s.encode(&feats).unwrap();
    for (got, want) in s.tape.value(r).data().iter().zip(&x) {
        assert!((got - 0.5 * want).abs() < 1e-12);
    }
}

#[test]
fn representation_rows() {
    let c = ModelConfig { frames: 8, ..config(2, false) };
    let net = Network::<f32>::new(c.clone(), 2).unwrap();
    let mut s = net.session();
    let r = s.encode(&features(&c, 3)).unwrap();
    assert_eq!(s.tape.shape(r), &[16, 8]);

    let c = ModelConfig { frames: 8, category_count: Some(4), ..config(2, false) };
    let net = Network::<f32>::new(c.clone(), 2).unwrap();
    let mut feats = features(&c, 3);
    feats.category = Some(3);
    let mut s = net.session();
    let r = s.encode(&feats).unwrap();
    assert_eq!(s.tape.shape(r), &[17, 8]);
    feats.category = Some(4);
    assert!(matches!(net.session().encode(&feats), Err(Error::UnknownCategory(4))));
}

#[test]
fn zero_features_stay_finite() {
    let c = config(2, false);
    let net = Network::<f32>::new(c.clone(), 4).unwrap();
    let mut feats = features(&c, 0);
    for m in &mut feats.modalities {
        m.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let mut s = net.session();
    let r = s.encode(&feats).unwrap();
    assert!(s.tape.value(r).all_finite());
}

#[test]
fn encoder_rejects_wrong_shapes() {
    let c = config(2, false);
    let net = Network::<f32>::new(c.clone(), 4).unwrap();
    let mut feats = features(&c, 0);
    feats.modalities[1] = Tensor::zeros(&[3, 4]);
    assert!(matches!(net.session().encode(&feats), Err(Error::ShapeMismatch { .. })));
    feats.modalities.pop();
    assert!(matches!(net.session().encode(&feats), Err(Error::ShapeMismatch { .. })));
}

#[test]
fn length_distribution_normalised_and_uniform_at_zero_weights() {
    let c = config(2, false);
    let mut net = Network::<f64>::new(c.clone(), 5).unwrap();
    let mut s = net.session();
    let r = s.encode(&features(&c, 1)).unwrap();
    let l = s.predict_length(r).unwrap();
    assert_eq!(l.len(), c.max_len);
    assert!((l.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    drop(s);
    set(&mut net, "length.w_l2", |_, _| 0.0);
    let mut s = net.session();
    let r = s.encode(&features(&c, 1)).unwrap();
    for p in s.predict_length(r).unwrap() {
        assert!((p - 1.0 / c.max_len as f64).abs() < 1e-12);
    }
    let ar = Network::<f64>::new(config(2, true), 5).unwrap();
    let mut s = ar.session();
    let r = s.encode(&features(&c, 1)).unwrap();
    assert!(s.predict_length(r).is_err());
}

#[test]
fn input_embedding_contract() {
    let c = config(2, false);
    let net = Network::<f64>::new(c.clone(), 6).unwrap();
    let mut s = net.session();
    let r = s.encode(&features(&c, 1)).unwrap();
    let e = s.input_embed(r, &[&[7, 7, 8]]).unwrap();
    let e = s.tape.value(e).clone();
    let pos_id = net.params().id("embed.position").unwrap();
    let pos = net.params().value(pos_id);
    for j in 0..c.d_model {
        let diff = e.row(1)[j] - e.row(0)[j];
        let want = pos.row(1)[j] - pos.row(0)[j];
        assert!((diff - want).abs() < 1e-12);
    }
    assert!(s.input_embed(r, &[&[7; 6]]).is_ok());
    assert!(matches!(s.input_embed(r, &[&[7; 7]]), Err(Error::LengthExceedsMax { len: 7, max: 6 })));
    assert!(matches!(s.input_embed(r, &[&[15]]), Err(Error::UnknownToken { .. })));

    let c = ModelConfig { source_embedding: false, ..config(2, false) };
    let net = Network::<f64>::new(c.clone(), 6).unwrap();
    let embed = |seed| {
        let mut s = net.session();
        let r = s.encode(&features(&c, seed)).unwrap();
        let e = s.input_embed(r, &[&[7, 8, 9]]).unwrap();
        s.tape.value(e).clone()
    };
    assert_eq!(embed(1), embed(2));
}

#[test]
fn decoder_rows_are_distributions() {
    for causal in [false, true] {
        let c = config(2, causal);
        let net = Network::<f64>::new(c.clone(), 7).unwrap();
        let p = decode_probs(&net, &features(&c, 2), &[VISUAL, 6, MASK, 9]);
        assert_eq!(p.len(), 4 * c.vocab_size);
        for row in p.chunks(c.vocab_size) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&v| v > 0.0));
        }
    }
}

#[test]
fn causal_outputs_ignore_future_tokens() {
    let c = config(2, true);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    for seed in 0..20 {
        let net = Network::<f64>::new(c.clone(), seed).unwrap();
        let feats = features(&c, seed);
        let a: Vec<usize> = (0..6).map(|_| rng.random_range(5..15)).collect();
        for j in 1..6 {
            let mut b = a.clone();
            b[j] = 5 + (b[j] - 5 + 1) % 10;
            let (pa, pb) = (decode_probs(&net, &feats, &a), decode_probs(&net, &feats, &b));
            for i in 0..j * c.vocab_size {
                assert!((pa[i] - pb[i]).abs() < 1e-12, "position {} moved", i / c.vocab_size);
            }
            let tail = j * c.vocab_size..(j + 1) * c.vocab_size;
            assert!(pa[tail.clone()].iter().zip(&pb[tail]).any(|(x, y)| (x - y).abs() > 1e-9));
        }
    }
}

#[test]
fn bidirectional_first_position_sees_last() {
    let c = config(2, false);
    for seed in 0..20 {
        let net = Network::<f64>::new(c.clone(), seed).unwrap();
        let feats = features(&c, seed);
        let a = [5, 6, 7, 8, 9];
        let b = [5, 6, 7, 8, 10];
        let (pa, pb) = (decode_probs(&net, &feats, &a), decode_probs(&net, &feats, &b));
        let diff = (0..c.vocab_size).map(|k| (pa[k] - pb[k]).abs()).fold(0.0, f64::max);
        assert!(diff > 1e-9);
    }
}

#[test]
fn stacked_segments_match_separate_decoding() {
    for causal in [false, true] {
        let c = config(2, causal);
        let net = Network::<f32>::new(c.clone(), 8).unwrap();
        let feats = features(&c, 3);
        let segs: [&[usize]; 3] = [&[5, 6, 7, 8], &[9, 10, 11, 12, 13, 14], &[6, PAD, PAD, 7]];
        let mut s = net.session();
        let r = s.encode(&feats).unwrap();
        let logits = s.decode(r, &segs).unwrap();
        let stacked = s.tape.value(logits).clone().into_data();
        assert_eq!(s.passes(), 1);
        let mut offset = 0;
        for seg in segs {
            let mut s = net.session();
            let r = s.encode(&feats).unwrap();
            let l = s.decode(r, &[seg]).unwrap();
            let alone = s.tape.value(l).data().to_vec();
            assert_eq!(&stacked[offset..offset + alone.len()], &alone[..]);
            offset += alone.len();
        }
    }
}

#[test]
fn checkpoint_round_trip_reproduces_distributions() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let c = ModelConfig { category_count: Some(3), ..config(2, false) };
    let net = Network::<f32>::new(c.clone(), 9).unwrap();
    let side = Sidecar {
        config: c.clone(),
        vocab_hash: "abc".into(),
        variant: Variant::Nacf,
        seed: 9,
        epoch: 0,
    };
    save_model(&net, &side, &path).unwrap();
    let (loaded, got) = load_model(&path, Some("abc")).unwrap();
    assert_eq!(got, side);
    let mut feats = features(&c, 4);
    feats.category = Some(1);
    let run = |n: &Network<f32>| {
        let mut s = n.session();
        let r = s.encode(&feats).unwrap();
        let l = s.decode(r, &[&[5, 6, MASK, 8]]).unwrap();
        s.probabilities(l).unwrap().into_data()
    };
    assert_eq!(run(&net), run(&loaded));
    assert!(matches!(load_model(&path, Some("other")), Err(Error::Checkpoint(_))));
}

// Reference decoder written directly from the attention formulas, used as an
// independent oracle for the tape-based implementation.
mod oracle {
    use super::*;

    pub struct P<'a>(pub &'a Network<f64>);

    impl P<'_> {
        pub fn get(&self, name: &str) -> (Vec<f64>, usize) {
            let t = self.0.params().value(self.0.params().id(name).unwrap());
            (t.data().to_vec(), *t.shape().last().unwrap())
        }
    }

    pub fn linear(x: &[f64], rows: usize, w: &(Vec<f64>, usize), b: &(Vec<f64>, usize)) -> Vec<f64> {
        let (n, k) = (w.1, x.len() / rows);
        let mut y = vec![0.0; rows * n];
        for i in 0..rows {
            for j in 0..n {
                let mut acc = b.0[j];
                for t in 0..k {
                    acc += x[i * k + t] * w.0[t * n + j];
                }
                y[i * n + j] = acc;
            }
        }
        y
    }

    pub fn softmax_rows(x: &mut [f64], cols: usize) {
        for row in x.chunks_mut(cols) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = row.iter().map(|v| (v - m).exp()).sum();
            row.iter_mut().for_each(|v| *v = (*v - m).exp() / s);
        }
    }

    pub fn layer_norm(x: &mut [f64], cols: usize, g: &[f64], b: &[f64]) {
        for row in x.chunks_mut(cols) {
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - mean) / (var + 1e-5).sqrt() * g[j] + b[j];
            }
        }
    }

    pub fn attention(p: &P, prefix: &str, x: &[f64], n: usize, mem: &[f64], m: usize, heads: usize, causal: bool) -> Vec<f64> {
        let dm = x.len() / n;
        let dk = dm / heads;
        let mut cat = vec![0.0; n * dm];
        for h in 0..heads {
            let w = |s: &str| p.get(&format!("{prefix}.head{h}.{s}"));
            let q = linear(x, n, &w("w_q"), &w("b_q"));
            let k = linear(mem, m, &w("w_k"), &w("b_k"));
            let v = linear(mem, m, &w("w_v"), &w("b_v"));
            let mut s = vec![0.0; n * m];
            for i in 0..n {
                for j in 0..m {
                    let d: f64 = (0..dk).map(|t| q[i * dk + t] * k[j * dk + t]).sum();
                    s[i * m + j] = if causal && j > i { f64::NEG_INFINITY } else { d / (dk as f64).sqrt() };
                }
            }
            softmax_rows(&mut s, m);
            for i in 0..n {
                for t in 0..dk {
                    cat[i * dm + h * dk + t] = (0..m).map(|j| s[i * m + j] * v[j * dk + t]).sum();
                }
            }
        }
        let mut out = linear(&cat, n, &p.get(&format!("{prefix}.w_mha")), &p.get(&format!("{prefix}.b_mha")));
        for (o, r) in out.iter_mut().zip(x) {
            *o += r;
        }
        layer_norm(&mut out, dm, &p.get(&format!("{prefix}.ln.gain")).0, &p.get(&format!("{prefix}.ln.bias")).0);
        out
    }

    pub fn decode(net: &Network<f64>, mem: &[f64], m: usize, tokens: &[usize]) -> Vec<f64> {
        let c = net.config();
        let p = P(net);
        let dm = c.d_model;
        let n = tokens.len();
        let (tok, _) = p.get("embed.token");
        let (pos, _) = p.get("embed.position");
        let mut x = vec![0.0; n * dm];
        for (i, &t) in tokens.iter().enumerate() {
            for j in 0..dm {
                let src: f64 = (0..m).map(|r| mem[r * dm + j]).sum::<f64>() / m as f64;
                x[i * dm + j] = tok[t * dm + j] + pos[i * dm + j] + src;
            }
        }
        let x = attention(&p, "decoder.layer0.self", &x, n, &x.clone(), n, c.heads, c.causal);
        let x = attention(&p, "decoder.layer0.cross", &x, n, mem, m, c.heads, false);
        let mut h = linear(&x, n, &p.get("decoder.layer0.ffn.w_f1"), &p.get("decoder.layer0.ffn.b_f1"));
        h.iter_mut().for_each(|v| *v = v.max(0.0));
        let mut y = linear(&h, n, &p.get("decoder.layer0.ffn.w_f2"), &p.get("decoder.layer0.ffn.b_f2"));
        for (o, r) in y.iter_mut().zip(&x) {
            *o += r;
        }
        layer_norm(&mut y, dm, &p.get("decoder.layer0.ffn.ln.gain").0, &p.get("decoder.layer0.ffn.ln.bias").0);
        let mut logits = linear(&y, n, &p.get("output.w_pj"), &p.get("output.b_pj"));
        softmax_rows(&mut logits, c.vocab_size);
        logits
    }
}

#[test]
fn decoder_matches_direct_formula() {
    for (heads, causal) in [(1, false), (2, false), (4, true)] {
        let c = config(heads, causal);
        let net = Network::<f64>::new(c.clone(), 10 + heads as u64).unwrap();
        let feats = features(&c, 5);
        let mut s = net.session();
        let r = s.encode(&feats).unwrap();
        let mem = s.tape.value(r).data().to_vec();
        let tokens = [5, VISUAL, 9, MASK, 14];
        let l = s.decode(r, &[&tokens]).unwrap();
        let got = s.probabilities(l).unwrap().into_data();
        let want = oracle::decode(&net, &mem, c.memory_rows(), &tokens);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-10, "heads={heads} causal={causal}: {g} vs {w}");
        }
    }
}

#[test]
fn same_seed_same_weights() {
    let a = Network::<f32>::new(config(2, false), 3).unwrap();
    let b = Network::<f32>::new(config(2, false), 3).unwrap();
    let c = Network::<f32>::new(config(2, false), 4).unwrap();
    let bytes = |n: &Network<f32>| nacf::numerics::checkpoint::encode(n.params());
    assert_eq!(bytes(&a), bytes(&b));
    assert_ne!(bytes(&a), bytes(&c));
}
