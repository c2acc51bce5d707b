use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::TrainingConfig;
use super::losses::{example_loss, ExamplePlan, ExampleTarget, LossParts, LossScale};
use super::masking::{apply_visual_table, sample_mask, visual_word_table};
use super::optim::AdamW;
use crate::corpus::vocab::TokenId;
use crate::corpus::{length_distribution, Corpus, Split, VideoRecord};
use crate::decoding::{self, ar_decode, Algorithm, ArConfig, DecodeConfig};
use crate::error::{Error, Result};
use crate::metrics::bleu;
use crate::model::{load_model, save_model, ModelConfig, Network, Sidecar, Variant};
use crate::numerics::{checkpoint, GradBuffer};
use crate::rng::{self, tag};

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss_len: f64,
    /// Masked-word loss, or next-word loss for causal variants.
    pub loss_mlm: f64,
    pub loss_vis: f64,
    pub lr: f64,
    pub val_bleu4: Option<f64>,
    pub wall_seconds: f64,
}

impl EpochLog {
    pub fn total(&self, lambda_vis: f64) -> f64 {
        super::losses::loss_total(self.loss_len, self.loss_mlm, self.loss_vis, lambda_vis)
    }
}

/// Fills in the corpus- and variant-dependent fields of a model configuration.
pub fn fit_model_config(base: &ModelConfig, corpus: &Corpus, variant: Variant) -> ModelConfig {
    ModelConfig {
        modalities: corpus.manifest.model_modalities(),
        category_count: corpus.manifest.category_count,
        vocab_size: corpus.vocab.len(),
        causal: variant.causal(),
        ..base.clone()
    }
}

pub fn optimizer_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.as_os_str().to_owned();
    name.push(".adam");
    PathBuf::from(name)
}

pub struct Trainer<'c> {
    corpus: &'c Corpus,
    cfg: TrainingConfig,
    variant: Variant,
    net: Network<f32>,
    opt: AdamW,
    epoch: usize,
    train: Vec<&'c VideoRecord>,
    pairs: Vec<(usize, usize)>,
    lengths: Vec<Vec<f64>>,
    visual_table: Vec<bool>,
}

impl<'c> Trainer<'c> {
    pub fn new(corpus: &'c Corpus, model: &ModelConfig, cfg: &TrainingConfig, variant: Variant) -> Result<Self> {
        let config = fit_model_config(model, corpus, variant);
        let net = Network::new(config, rng::derive_seed(cfg.seed, &[tag::INIT]))?;
        Self::with_network(corpus, net, cfg, variant, 0)
    }

    /// Continues from a checkpoint written by [`Trainer::save`].
    pub fn resume(corpus: &'c Corpus, path: &Path, cfg: &TrainingConfig) -> Result<Self> {
        let (net, side) = load_model(path, Some(&corpus.vocab.hash()))?;
        let mut t = Self::with_network(corpus, net, cfg, side.variant, side.epoch)?;
        t.opt.restore(t.net.params(), checkpoint::load(&optimizer_path(path))?)?;
        Ok(t)
    }

    fn with_network(
        corpus: &'c Corpus,
        net: Network<f32>,
        cfg: &TrainingConfig,
        variant: Variant,
        epoch: usize,
    ) -> Result<Self> {
        cfg.validate()?;
        if net.config().causal != variant.causal() {
            return Err(Error::Config(format!("checkpoint does not match variant {variant}")));
        }
        let train: Vec<&VideoRecord> = corpus.split(Split::Train).collect();
        let pairs: Vec<(usize, usize)> = train
            .iter()
            .enumerate()
            .flat_map(|(v, rec)| (0..rec.captions.len()).map(move |c| (v, c)))
            .collect();
        if pairs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let max_len = net.config().max_len;
        for rec in &train {
            for c in &rec.captions {
                if c.len() > max_len {
                    return Err(Error::LengthExceedsMax { len: c.len(), max: max_len });
                }
            }
        }
        let lengths = train
            .iter()
            .map(|v| length_distribution(&v.captions, max_len))
            .collect::<Result<_>>()?;
        let visual_table = visual_word_table(&corpus.vocab, &corpus.lexicon, &cfg.visual_tags)?;
        let opt = AdamW::new(net.params(), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.weight_decay);
        Ok(Trainer {
            corpus,
            cfg: cfg.clone(),
            variant,
            net,
            opt,
            epoch,
            train,
            pairs,
            lengths,
            visual_table,
        })
    }

    pub fn network(&self) -> &Network<f32> {
        &self.net
    }

    pub fn into_network(self) -> Network<f32> {
        self.net
    }

    /// Completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    /// Visual-loss weight actually applied for this variant.
    pub fn lambda_vis(&self) -> f64 {
        if self.variant.uses_visual() {
            self.cfg.lambda_vis
        } else {
            0.0
        }
    }

    /// Training targets of caption `caption` of training video `video` in `epoch`.
    pub fn plan(&self, epoch: usize, video: usize, caption: usize) -> Result<ExamplePlan> {
        let y = &self.train[video].captions[caption];
        let visual = (self.lambda_vis() > 0.0).then(|| apply_visual_table(y, &self.visual_table));
        if self.variant.causal() {
            return Ok(ExamplePlan {
                target: ExampleTarget::NextWord(y.clone()),
                visual,
                length: None,
            });
        }
        let mut r = rng::stream(self.cfg.seed, &[tag::MASK, epoch as u64, video as u64, caption as u64]);
        Ok(ExamplePlan {
            target: ExampleTarget::Masked(sample_mask(y, self.cfg.beta_low, self.cfg.beta_high, &mut r)?),
            visual,
            length: Some(self.lengths[video].clone()),
        })
    }

    /// Runs one epoch of optimization and returns its log record.
    pub fn run_epoch(&mut self) -> Result<EpochLog> {
        let start = Instant::now();
        let epoch = self.epoch;
        let lr = self.cfg.lr_at(epoch);
        let mut order = self.pairs.clone();
        order.shuffle(&mut rng::stream(self.cfg.seed, &[tag::SHUFFLE, epoch as u64]));

        let mut sums = LossParts::default();
        let (mut n_len, mut n_word, mut n_vis) = (0usize, 0usize, 0usize);
        for batch in order.chunks(self.cfg.batch_size) {
            let plans = batch
                .iter()
                .map(|&(v, c)| self.plan(epoch, v, c))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&ExamplePlan> = plans.iter().collect();
            let scale = LossScale::for_batch(&refs, self.lambda_vis());
            let mut grads = GradBuffer::zeros(self.net.params());
            for (&(v, c), plan) in batch.iter().zip(&plans) {
                let dropout = rng::stream(self.cfg.seed, &[tag::DROPOUT, epoch as u64, v as u64, c as u64]);
                let mut session = self.net.train_session(dropout);
                let (loss, parts) = example_loss(&mut session, &self.train[v].features, plan, &scale)?;
                if !session.tape.scalar(loss).is_finite() {
                    return Err(Error::DivergedLoss { epoch });
                }
                session.backward(loss)?;
                session.collect_grads(&mut grads);
                sums.len += parts.len;
                sums.word += parts.word;
                sums.vis += parts.vis;
                n_len += usize::from(plan.length.is_some());
                n_word += plan.word_count();
                n_vis += plan.visual_count();
            }
            if !grads.is_finite() {
                return Err(Error::DivergedLoss { epoch });
            }
            self.opt.update(self.net.params_mut(), &grads, lr);
        }
        self.epoch += 1;
        let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
        let val_bleu4 = if self.cfg.validate && self.corpus.count(Split::Val) > 0 {
            Some(self.validation_bleu4()?)
        } else {
            None
        };
        let log = EpochLog {
            epoch,
            loss_len: mean(sums.len, n_len),
            loss_mlm: mean(sums.word, n_word),
            loss_vis: mean(sums.vis, n_vis),
            lr,
            val_bleu4,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {} len {:.4} mlm {:.4} vis {:.4} lr {:.2e} val_bleu4 {:?}",
            log.epoch,
            log.loss_len,
            log.loss_mlm,
            log.loss_vis,
            log.lr,
            log.val_bleu4
        );
        Ok(log)
    }

    /// Trains up to the configured epoch count, appending a JSON line per epoch to `log`.
    pub fn run(&mut self, mut log: Option<&mut dyn Write>) -> Result<Vec<EpochLog>> {
        let mut out = Vec::new();
        while self.epoch < self.cfg.epochs {
            let rec = self.run_epoch()?;
            if let Some(w) = log.as_deref_mut() {
                let line = serde_json::to_string(&rec).expect("log record serializes");
                writeln!(w, "{line}").map_err(|e| Error::io("training log", e))?;
            }
            out.push(rec);
        }
        Ok(out)
    }

    pub fn validation_bleu4(&self) -> Result<f64> {
        let val: Vec<&VideoRecord> = self.corpus.split(Split::Val).collect();
        let hyps = val
            .iter()
            .map(|v| greedy_caption(&self.net, self.variant, v))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<Vec<Vec<TokenId>>> = val.iter().map(|v| v.captions.clone()).collect();
        Ok(bleu(&hyps, &refs, 4)?[3])
    }

    pub fn sidecar(&self) -> Sidecar {
        Sidecar {
            config: self.net.config().clone(),
            vocab_hash: self.corpus.vocab.hash(),
            variant: self.variant,
            seed: self.cfg.seed,
            epoch: self.epoch,
        }
    }

    /// Writes the checkpoint, its sidecar and the optimizer state.
    pub fn save(&self, path: &Path) -> Result<()> {
        save_model(&self.net, &self.sidecar(), path)?;
        checkpoint::save(&self.opt.state(self.net.params())?, &optimizer_path(path))
    }
}

/// Cheap caption used for validation: one-iteration mask-predict at the single
/// most likely length, or greedy left-to-right decoding for causal variants.
pub fn greedy_caption(net: &Network<f32>, variant: Variant, video: &VideoRecord) -> Result<Vec<TokenId>> {
    if variant.causal() {
        return Ok(ar_decode(net, &video.features, &ArConfig { beam: 1, exact_len: None })?.tokens);
    }
    let cfg = DecodeConfig {
        algorithm: Algorithm::Mp,
        use_template: variant.uses_visual(),
        t: 1,
        b: 1,
        ..DecodeConfig::default()
    };
    Ok(decoding::caption(net, None, &video.features, &cfg)?.tokens)
}
