//! Experiment configuration and the synth / train / decode / eval / bench steps
//! shared by the command-line tool and the end-to-end tests.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::vocab::TokenId;
use crate::corpus::{synth_generate, Corpus, LoadOptions, Split, SynthSpec, VideoRecord};
use crate::decoding::{self, ar_decode, expected_passes, ArConfig, DecodeConfig};
use crate::error::{Error, Result};
use crate::metrics::{cider_d, diversity, LatencyStats, MetricReport};
use crate::model::{load_model, ModelConfig, Network, Variant};
use crate::training::{Trainer, TrainingConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    #[serde(rename = "B")]
    pub b: Vec<usize>,
    #[serde(rename = "T")]
    pub t: Vec<usize>,
    /// Untimed decodes before measuring.
    pub warmup: usize,
    /// Measure at most this many videos.
    pub limit: Option<usize>,
    /// Beam of the autoregressive reference the speed-up is relative to.
    pub reference_beam: usize,
    pub svg: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            b: vec![1, 4, 6],
            t: vec![1, 3, 5],
            warmup: 2,
            limit: None,
            reference_beam: 5,
            svg: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Seed for every random stream of the experiment.
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Corpus manifest; defaults to `<out_dir>/corpus/manifest.json`.
    pub corpus: Option<PathBuf>,
    pub variant: Variant,
    pub synth: SynthSpec,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub decode: DecodeConfig,
    pub ar: ArConfig,
    pub bench: BenchConfig,
    /// Candidate counts k reported as Coverage@k.
    pub coverage_k: Vec<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            corpus: None,
            variant: Variant::Nacf,
            synth: SynthSpec::default(),
            model: ModelConfig::default(),
            training: TrainingConfig::default(),
            decode: DecodeConfig::default(),
            ar: ArConfig::default(),
            bench: BenchConfig::default(),
            coverage_k: vec![1, 2, 4, 6],
        }
    }
}

/// Sets `a.b.c = value` in a TOML table, parsing `value` as a TOML literal
/// and falling back to a plain string.
fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut node = table;
    for p in &parts[..parts.len() - 1] {
        let entry = node
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("{key}: {p} is not a table")))?;
    }
    node.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl ExperimentConfig {
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut cfg: ExperimentConfig = table.try_into().map_err(|e| Error::Config(format!("{e}")))?;
        cfg.training.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads the configuration file, or starts from defaults when `path` is `None`.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::parse(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate().map_err(|e| Error::Config(e.to_string()))?;
        let probe = ModelConfig {
            vocab_size: crate::corpus::vocab::NUM_RESERVED + 1,
            ..self.model.clone()
        };
        probe.validate()?;
        self.training.validate()?;
        self.decode.validate()?;
        if self.ar.beam == 0 {
            return Err(Error::Config("ar.beam must be at least 1".into()));
        }
        if self.bench.b.contains(&0) || self.bench.t.contains(&0) || self.bench.reference_beam == 0 {
            return Err(Error::Config("bench grid values must be at least 1".into()));
        }
        if self.coverage_k.contains(&0) {
            return Err(Error::Config("coverage_k entries must be at least 1".into()));
        }
        Ok(())
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.corpus
            .clone()
            .unwrap_or_else(|| self.out_dir.join("corpus").join("manifest.json"))
    }

    pub fn checkpoint_path(&self, variant: Variant) -> PathBuf {
        self.out_dir.join(format!("{variant}.ckpt"))
    }

    pub fn load_corpus(&self) -> Result<Corpus> {
        Corpus::load(
            &self.manifest_path(),
            LoadOptions {
                vocab: None,
                max_len: Some(self.model.max_len),
            },
        )
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Generates the synthetic corpus into `out_dir`.
pub fn run_synth(spec: &SynthSpec, seed: u64, out_dir: &Path) -> Result<Corpus> {
    let corpus = synth_generate(spec, seed)?.corpus;
    corpus.write(out_dir)?;
    Ok(corpus)
}

/// Trains `variant`, writing `<out_dir>/<variant>.ckpt` and its JSONL log.
pub fn run_train(cfg: &ExperimentConfig, variant: Variant, resume: Option<&Path>) -> Result<PathBuf> {
    let corpus = cfg.load_corpus()?;
    let mut trainer = match resume {
        Some(p) => {
            let t = Trainer::resume(&corpus, p, &cfg.training)?;
            if t.variant() != variant {
                return Err(Error::Config(format!("{} holds a {} model", p.display(), t.variant())));
            }
            t
        }
        None => Trainer::new(&corpus, &cfg.model, &cfg.training, variant)?,
    };
    let ckpt = cfg.checkpoint_path(variant);
    let log_path = cfg.out_dir.join(format!("{variant}.train.jsonl"));
    let mut log = if resume.is_some() {
        let f = std::fs::OpenOptions::new()
            .append(true)
            .create(true)
            .open(&log_path)
            .map_err(|e| Error::io(&log_path, e))?;
        BufWriter::new(f)
    } else {
        let mut w = create(&log_path)?;
        let header = serde_json::json!({ "seed": cfg.seed, "variant": variant, "epochs": cfg.training.epochs });
        writeln!(w, "{header}").map_err(|e| Error::io(&log_path, e))?;
        w
    };
    trainer.run(Some(&mut log))?;
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    trainer.save(&ckpt)?;
    Ok(ckpt)
}

/// One decoded video in the captions file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub video_id: String,
    pub caption: String,
    pub score: f64,
    pub passes: usize,
    /// Lengths decoded in the length beam.
    #[serde(default)]
    pub lengths: Vec<usize>,
    /// Words touched while decoding the top-k candidates, per k.
    #[serde(default)]
    pub touched: BTreeMap<usize, Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<String>,
    pub encode_ms: f64,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptionsHeader {
    pub seed: u64,
    pub variant: Variant,
    pub split: Split,
    pub decoder: String,
}

pub struct LoadedModel {
    pub net: Network<f32>,
    pub variant: Variant,
}

pub fn load_checkpoint(path: &Path, corpus: &Corpus) -> Result<LoadedModel> {
    let (net, side) = load_model(path, Some(&corpus.vocab.hash()))?;
    Ok(LoadedModel {
        net,
        variant: side.variant,
    })
}

fn words(corpus: &Corpus, ids: impl IntoIterator<Item = TokenId>) -> Vec<String> {
    ids.into_iter()
        .filter(|&t| !crate::corpus::vocab::is_special(t))
        .map(|t| corpus.vocab.token(t).to_string())
        .collect()
}

/// Decodes one video with whichever decoder fits the model.
pub fn decode_video(
    cfg: &ExperimentConfig,
    corpus: &Corpus,
    model: &LoadedModel,
    teacher: Option<&Network<f32>>,
    video: &VideoRecord,
) -> Result<CaptionRecord> {
    if model.variant.causal() {
        let out = ar_decode(&model.net, &video.features, &cfg.ar)?;
        let touched = words(corpus, out.touched());
        let touched = cfg.coverage_k.iter().map(|&k| (k, touched.clone())).collect();
        return Ok(CaptionRecord {
            video_id: video.video_id.clone(),
            caption: corpus.vocab.decode(&out.tokens),
            score: out.score,
            passes: out.passes,
            lengths: vec![out.tokens.len()],
            touched,
            trace: None,
            encode_ms: out.encode_ms,
            wall_ms: out.wall_ms,
        });
    }
    let out = decoding::caption(&model.net, teacher, &video.features, &cfg.decode)?;
    let touched = cfg
        .coverage_k
        .iter()
        .map(|&k| (k, words(corpus, out.coverage(k))))
        .collect();
    let trace = cfg.decode.trace.then(|| {
        out.candidates
            .iter()
            .map(|c| decoding::trace::render(c, &corpus.vocab))
            .collect::<Vec<_>>()
            .join("\n")
    });
    Ok(CaptionRecord {
        video_id: video.video_id.clone(),
        caption: corpus.vocab.decode(&out.tokens),
        score: out.score,
        passes: out.passes,
        lengths: out.candidates.iter().map(|c| c.tokens.len()).collect(),
        touched,
        trace,
        encode_ms: out.encode_ms,
        wall_ms: out.wall_ms,
    })
}

fn check_teacher(cfg: &ExperimentConfig, teacher: Option<&Path>) -> Result<()> {
    if cfg.decode.rescore && teacher.is_none() {
        return Err(Error::Config("rescoring requires a teacher checkpoint".into()));
    }
    Ok(())
}

fn load_teacher(path: Option<&Path>, corpus: &Corpus) -> Result<Option<Network<f32>>> {
    match path {
        None => Ok(None),
        Some(p) => {
            let t = load_checkpoint(p, corpus)?;
            if !t.variant.causal() {
                return Err(Error::Config(format!("teacher {} is not an autoregressive model", p.display())));
            }
            Ok(Some(t.net))
        }
    }
}

/// Decodes a split and writes the captions file (a header line, then one record per video).
pub fn run_decode(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    teacher: Option<&Path>,
    split: Split,
    out: &Path,
) -> Result<Vec<CaptionRecord>> {
    let corpus = cfg.load_corpus()?;
    let model = load_checkpoint(checkpoint, &corpus)?;
    if !model.variant.causal() {
        check_teacher(cfg, teacher)?;
    }
    let teacher = if cfg.decode.rescore && !model.variant.causal() {
        load_teacher(teacher, &corpus)?
    } else {
        None
    };
    let decoder = if model.variant.causal() {
        format!("AR(beam={})", cfg.ar.beam)
    } else {
        cfg.decode.label()
    };
    let mut w = create(out)?;
    let header = CaptionsHeader {
        seed: cfg.seed,
        variant: model.variant,
        split,
        decoder,
    };
    let line = serde_json::to_string(&serde_json::json!({ "header": header })).expect("header serializes");
    writeln!(w, "{line}").map_err(|e| Error::io(out, e))?;
    let mut records = Vec::new();
    for v in corpus.split(split) {
        let rec = decode_video(cfg, &corpus, &model, teacher.as_ref(), v)?;
        let line = serde_json::to_string(&rec).expect("record serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(out, e))?;
        records.push(rec);
    }
    w.flush().map_err(|e| Error::io(out, e))?;
    Ok(records)
}

pub fn read_captions(path: &Path) -> Result<(Option<CaptionsHeader>, Vec<CaptionRecord>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut header = None;
    let mut records = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        let parse_err = |e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        };
        if let Some(h) = value.get("header") {
            header = Some(serde_json::from_value(h.clone()).map_err(parse_err)?);
        } else {
            records.push(serde_json::from_value(value).map_err(parse_err)?);
        }
    }
    Ok((header, records))
}

/// Metric report plus the provenance written next to it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub seed: u64,
    pub split: Split,
    pub decoder: Option<String>,
    pub report: MetricReport,
}

/// Scores decoded captions against the references of `split`.
pub fn evaluate(corpus: &Corpus, records: &[CaptionRecord], split: Split) -> Result<MetricReport> {
    let by_id: HashMap<&str, &VideoRecord> = corpus.split(split).map(|v| (v.video_id.as_str(), v)).collect();
    let mut hyps = Vec::with_capacity(records.len());
    let mut refs = Vec::with_capacity(records.len());
    let mut touched: BTreeMap<usize, Vec<BTreeSet<TokenId>>> = BTreeMap::new();
    for r in records {
        let v = by_id
            .get(r.video_id.as_str())
            .ok_or_else(|| Error::Config(format!("video {} is not in the {split} split", r.video_id)))?;
        hyps.push(corpus.vocab.encode(&r.caption)?);
        refs.push(v.captions.clone());
        for (&k, ws) in &r.touched {
            let ids = ws.iter().map(|w| corpus.vocab.encode(w).map(|t| t[0])).collect::<Result<_>>()?;
            touched.entry(k).or_default().push(ids);
        }
    }
    let training: BTreeSet<Vec<TokenId>> = corpus.training_captions().into_iter().map(<[_]>::to_vec).collect();
    let div = diversity(&hyps, &training, corpus.vocab.num_words(), &touched)?;
    let mut report = MetricReport::quality(&hyps, &refs, div)?;
    let ms: Vec<f64> = records.iter().map(|r| r.wall_ms).collect();
    let passes: Vec<usize> = records.iter().map(|r| r.passes).collect();
    report.latency = Some(LatencyStats::from_samples(&ms, &passes)?);
    Ok(report)
}

/// Evaluates a captions file and writes `metrics.json` and `metrics.csv` into `out_dir`.
pub fn run_eval(cfg: &ExperimentConfig, captions: &Path, split: Split, out_dir: &Path) -> Result<EvalOutput> {
    let corpus = cfg.load_corpus()?;
    let (header, records) = read_captions(captions)?;
    let report = evaluate(&corpus, &records, split)?;
    let out = EvalOutput {
        seed: header.as_ref().map_or(cfg.seed, |h| h.seed),
        split,
        decoder: header.map(|h| h.decoder),
        report,
    };
    let json = serde_json::to_string_pretty(&out).expect("report serializes");
    write_text(&out_dir.join("metrics.json"), &(json + "\n"))?;
    write_text(&out_dir.join("metrics.csv"), &out.report.to_csv())?;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub config: String,
    pub passes: f64,
    pub expected_passes: f64,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub encode_ms: f64,
    pub speedup: Option<f64>,
    pub cider_d: f64,
}

impl BenchRow {
    pub fn law_holds(&self) -> bool {
        self.passes == self.expected_passes
    }
}

/// Times every grid configuration on `split`, one video at a time.
pub fn run_bench(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    reference: Option<&Path>,
    split: Split,
    out_dir: &Path,
) -> Result<Vec<BenchRow>> {
    if cfg.decode.trace {
        return Err(Error::Config("benchmarks refuse to run with tracing enabled".into()));
    }
    check_teacher(cfg, reference)?;
    let corpus = cfg.load_corpus()?;
    let model = load_checkpoint(checkpoint, &corpus)?;
    if model.variant.causal() {
        return Err(Error::Config("bench expects a non-autoregressive checkpoint".into()));
    }
    let ar = load_teacher(reference, &corpus)?;
    let videos: Vec<&VideoRecord> = corpus.split(split).take(cfg.bench.limit.unwrap_or(usize::MAX)).collect();
    if videos.is_empty() {
        return Err(Error::EmptyInput);
    }
    let refs: Vec<Vec<Vec<TokenId>>> = videos.iter().map(|v| v.captions.clone()).collect();

    let reference_ms = match &ar {
        Some(net) => {
            let ar_cfg = ArConfig {
                beam: cfg.bench.reference_beam,
                exact_len: None,
            };
            for v in videos.iter().cycle().take(cfg.bench.warmup) {
                ar_decode(net, &v.features, &ar_cfg)?;
            }
            let mut ms = Vec::new();
            for v in &videos {
                ms.push(ar_decode(net, &v.features, &ar_cfg)?.wall_ms);
            }
            Some(ms.iter().sum::<f64>() / ms.len() as f64)
        }
        None => None,
    };

    let mut rows = Vec::new();
    for &b in &cfg.bench.b {
        for &t in &cfg.bench.t {
            let dc = DecodeConfig {
                b,
                t,
                trace: false,
                ..cfg.decode.clone()
            };
            for v in videos.iter().cycle().take(cfg.bench.warmup) {
                decoding::caption(&model.net, ar.as_ref(), &v.features, &dc)?;
            }
            let mut ms = Vec::new();
            let mut passes = Vec::new();
            let mut expected = 0usize;
            let mut encode = 0.0;
            let mut hyps = Vec::new();
            for v in &videos {
                let out = decoding::caption(&model.net, ar.as_ref(), &v.features, &dc)?;
                let shape: Vec<(usize, usize)> = out
                    .candidates
                    .iter()
                    .map(|c| (c.tokens.len(), c.visual.iter().filter(|&&x| x).count()))
                    .collect();
                expected += expected_passes(&dc, &shape);
                ms.push(out.wall_ms);
                passes.push(out.passes);
                encode += out.encode_ms;
                hyps.push(out.tokens);
            }
            let stats = LatencyStats::from_samples(&ms, &passes)?;
            let n = videos.len() as f64;
            rows.push(BenchRow {
                config: dc.label(),
                passes: stats.passes_mean,
                expected_passes: expected as f64 / n,
                mean_ms: stats.mean_ms,
                p50_ms: stats.p50_ms,
                p95_ms: stats.p95_ms,
                encode_ms: encode / n,
                speedup: reference_ms.map(|r| r / stats.mean_ms),
                cider_d: cider_d(&hyps, &refs)?,
            });
        }
    }
    write_text(&out_dir.join("bench.csv"), &bench_csv(&rows, cfg.seed))?;
    if cfg.bench.svg {
        write_text(&out_dir.join("bench.svg"), &bench_svg(&rows))?;
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow], seed: u64) -> String {
    let mut out = format!("# seed={seed}\nconfig,passes,expected_passes,mean_ms,p50_ms,p95_ms,encode_ms,speedup,cider_d\n");
    for r in rows {
        let speedup = r.speedup.map(|s| format!("{s:.4}")).unwrap_or_default();
        writeln!(
            out,
            "\"{}\",{},{},{:.4},{:.4},{:.4},{:.4},{},{:.4}",
            r.config, r.passes, r.expected_passes, r.mean_ms, r.p50_ms, r.p95_ms, r.encode_ms, speedup, r.cider_d
        )
        .unwrap();
    }
    out
}

/// Scatter of CIDEr-D against speed-up.
pub fn bench_svg(rows: &[BenchRow]) -> String {
    let (w, h, m) = (640.0, 420.0, 60.0);
    let xs: Vec<f64> = rows.iter().map(|r| r.speedup.unwrap_or(1.0)).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.cider_d).collect();
    let span = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi - lo < 1e-9 {
            (lo - 0.5, hi + 0.5)
        } else {
            (lo - 0.05 * (hi - lo), hi + 0.05 * (hi - lo))
        }
    };
    let (x0, x1) = span(&xs);
    let (y0, y1) = span(&ys);
    let px = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
    let py = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    );
    writeln!(
        s,
        "<line x1=\"{m}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
        h - m,
        w - m,
        h - m
    )
    .unwrap();
    writeln!(s, "<line x1=\"{m}\" y1=\"{m}\" x2=\"{m}\" y2=\"{}\" stroke=\"black\"/>", h - m).unwrap();
    writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">speed-up</text>", w / 2.0, h - 20.0).unwrap();
    writeln!(
        s,
        "<text x=\"15\" y=\"{}\" transform=\"rotate(-90 15 {})\" text-anchor=\"middle\">CIDEr-D</text>",
        h / 2.0,
        h / 2.0
    )
    .unwrap();
    for (r, (&x, &y)) in rows.iter().zip(xs.iter().zip(&ys)) {
        writeln!(s, "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"4\" fill=\"steelblue\"/>", px(x), py(y)).unwrap();
        writeln!(s, "<text x=\"{:.1}\" y=\"{:.1}\">{}</text>", px(x) + 6.0, py(y) - 6.0, r.config).unwrap();
    }
    s += "</svg>\n";
    s
}
