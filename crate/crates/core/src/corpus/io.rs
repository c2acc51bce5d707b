use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::lexicon::PosLexicon;
use super::vocab::{TokenId, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{ModalityConfig, VideoFeatures};
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::UnknownSplit(s.to_string())),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModalityFile {
    pub name: String,
    pub d_v: usize,
    #[serde(rename = "K")]
    pub k: usize,
    /// Feature file relative to the manifest. Modalities sharing a file are
    /// interleaved per video in manifest order.
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub modalities: Vec<ModalityFile>,
    pub captions_file: String,
    pub lexicon_file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Manifest {
    pub fn model_modalities(&self) -> Vec<ModalityConfig> {
        self.modalities
            .iter()
            .map(|m| ModalityConfig {
                name: m.name.clone(),
                dim: m.d_v,
            })
            .collect()
    }

    /// Distinct feature files in first-use order.
    fn files(&self) -> Vec<&str> {
        let mut files: Vec<&str> = Vec::new();
        for m in &self.modalities {
            if !files.contains(&m.file.as_str()) {
                files.push(&m.file);
            }
        }
        files
    }

    fn validate(&self) -> Result<()> {
        if self.modalities.is_empty() {
            return Err(Error::InvalidSpec("manifest lists no modalities".into()));
        }
        let k = self.modalities[0].k;
        if self.modalities.iter().any(|m| m.k != k || m.k == 0 || m.d_v == 0) {
            return Err(Error::InvalidSpec("all modalities need the same positive K and positive d_v".into()));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaptionRecord {
    video_id: String,
    split: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    category: Option<usize>,
    captions: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    concepts: Vec<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoRecord {
    pub video_id: String,
    pub split: Split,
    pub features: VideoFeatures,
    pub captions: Vec<Vec<TokenId>>,
    /// Scene concepts of synthetic videos, each as its accepted surface forms.
    pub concepts: Vec<Vec<String>>,
}

/// A video before tokenization, as produced by the synthetic generator.
#[derive(Clone, Debug, PartialEq)]
pub struct RawVideo {
    pub video_id: String,
    pub split: Split,
    pub features: VideoFeatures,
    pub captions: Vec<String>,
    pub concepts: Vec<Vec<String>>,
}

#[derive(Clone, Debug, Default)]
pub struct LoadOptions {
    /// Use this vocabulary instead of building one from the lexicon.
    pub vocab: Option<Vocabulary>,
    /// Truncate captions longer than this.
    pub max_len: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub manifest: Manifest,
    pub vocab: Vocabulary,
    pub lexicon: PosLexicon,
    pub videos: Vec<VideoRecord>,
    /// Captions shortened to `max_len` at load.
    pub truncated: usize,
}

impl Corpus {
    pub fn build(manifest: Manifest, lexicon: PosLexicon, raw: Vec<RawVideo>, options: LoadOptions) -> Result<Self> {
        manifest.validate()?;
        let frozen = options.vocab.is_some();
        let all_words = |raw: &[RawVideo]| -> Vec<String> {
            raw.iter()
                .flat_map(|v| v.captions.iter().flat_map(|c| c.split_whitespace().map(String::from)))
                .collect()
        };
        if !frozen {
            lexicon.check_covers(all_words(&raw).iter().map(String::as_str))?;
        }
        let mut vocab = match options.vocab {
            Some(v) => v,
            None => Vocabulary::from_words(lexicon.words())?,
        };
        let mut videos = Vec::with_capacity(raw.len());
        let mut truncated = 0;
        for (line, v) in raw.into_iter().enumerate() {
            let shapes_ok = v.features.modalities.len() == manifest.modalities.len()
                && v.features.modalities.iter().zip(&manifest.modalities).all(|(t, m)| t.shape() == [m.k, m.d_v]);
            if !shapes_ok {
                return Err(Error::shape("load_corpus", format!("features of {} do not match the manifest", v.video_id)));
            }
            if let Some(c) = v.features.category {
                if manifest.category_count.is_none_or(|n| c >= n) {
                    return Err(Error::UnknownCategory(c));
                }
            }
            let mut captions = Vec::with_capacity(v.captions.len());
            for text in &v.captions {
                let mut ids = Vec::new();
                for w in text.split_whitespace() {
                    match vocab.id(w) {
                        Some(id) if !super::vocab::is_special(id) => ids.push(id),
                        _ => {
                            return Err(Error::UnknownToken {
                                word: w.to_string(),
                                line: Some(line + 1),
                            })
                        }
                    }
                }
                if ids.is_empty() {
                    return Err(Error::EmptySentence);
                }
                if let Some(max) = options.max_len {
                    if ids.len() > max {
                        ids.truncate(max);
                        truncated += 1;
                    }
                }
                captions.push(ids);
            }
            if v.split == Split::Train {
                for c in &captions {
                    vocab.count(c);
                }
            }
            videos.push(VideoRecord {
                video_id: v.video_id,
                split: v.split,
                features: v.features,
                captions,
                concepts: v.concepts,
            });
        }
        if frozen {
            let words = videos.iter().flat_map(|v| v.captions.iter().flatten());
            lexicon.check_covers(words.map(|&id| vocab.token(id)))?;
        }
        if truncated > 0 {
            log::warn!("truncated {truncated} captions to {} tokens", options.max_len.unwrap_or(0));
        }
        Ok(Corpus {
            manifest,
            vocab,
            lexicon,
            videos,
            truncated,
        })
    }

    pub fn load(manifest_path: &Path, options: LoadOptions) -> Result<Self> {
        let dir = manifest_path.parent().unwrap_or(Path::new("."));
        let manifest: Manifest = read_json(manifest_path)?;
        manifest.validate()?;
        let lex_path = dir.join(&manifest.lexicon_file);
        let lexicon = PosLexicon::parse(&read_text(&lex_path)?)?;

        let cap_path = dir.join(&manifest.captions_file);
        let mut records = Vec::new();
        for (n, line) in read_text(&cap_path)?.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: CaptionRecord = serde_json::from_str(line).map_err(|e| Error::Json {
                path: cap_path.clone(),
                source: e,
            })?;
            records.push((n + 1, rec));
        }

        let k = manifest.modalities[0].k;
        let mut features: Vec<Vec<Tensor<f32>>> = vec![Vec::new(); records.len()];
        let mut slots: Vec<Option<Tensor<f32>>> = Vec::new();
        for file in manifest.files() {
            let path = dir.join(file);
            let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let mods: Vec<usize> = (0..manifest.modalities.len())
                .filter(|&m| manifest.modalities[m].file == file)
                .collect();
            let per_video: usize = mods.iter().map(|&m| k * manifest.modalities[m].d_v).sum();
            let want = per_video * records.len() * 4;
            if bytes.len() != want {
                return Err(Error::shape(
                    "load_corpus",
                    format!("{} holds {} bytes, expected {want}", path.display(), bytes.len()),
                ));
            }
            let mut floats = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]));
            slots.resize(manifest.modalities.len() * records.len(), None);
            for v in 0..records.len() {
                for &m in &mods {
                    let n = k * manifest.modalities[m].d_v;
                    let data: Vec<f32> = floats.by_ref().take(n).collect();
                    slots[v * manifest.modalities.len() + m] = Some(Tensor::matrix(k, manifest.modalities[m].d_v, data)?);
                }
            }
        }
        for (v, feats) in features.iter_mut().enumerate() {
            for m in 0..manifest.modalities.len() {
                feats.push(slots[v * manifest.modalities.len() + m].take().expect("every modality has a file"));
            }
        }

        let mut raw = Vec::with_capacity(records.len());
        let mut lines = Vec::with_capacity(records.len());
        for ((line, rec), modalities) in records.into_iter().zip(features) {
            lines.push(line);
            raw.push(RawVideo {
                video_id: rec.video_id,
                split: rec.split.parse()?,
                features: VideoFeatures {
                    modalities,
                    category: rec.category,
                },
                captions: rec.captions,
                concepts: rec.concepts,
            });
        }
        Corpus::build(manifest, lexicon, raw, options).map_err(|e| match e {
            Error::UnknownToken { word, line: Some(i) } => Error::UnknownToken {
                word,
                line: Some(lines[i - 1]),
            },
            e => e,
        })
    }

    /// Writes manifest, captions, lexicon and feature files into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let m = &self.manifest;
        write_file(&dir.join("manifest.json"), serde_json::to_string_pretty(m).expect("manifest serializes") + "\n")?;
        write_file(&dir.join(&m.lexicon_file), self.lexicon.to_tsv())?;
        let mut jsonl = String::new();
        for v in &self.videos {
            let rec = CaptionRecord {
                video_id: v.video_id.clone(),
                split: v.split.to_string(),
                category: v.features.category,
                captions: v.captions.iter().map(|c| self.vocab.decode(c)).collect(),
                concepts: v.concepts.clone(),
            };
            jsonl += &serde_json::to_string(&rec).expect("record serializes");
            jsonl.push('\n');
        }
        write_file(&dir.join(&m.captions_file), jsonl)?;
        for file in m.files() {
            let mut bytes = Vec::new();
            for v in &self.videos {
                for (i, mf) in m.modalities.iter().enumerate() {
                    if mf.file == file {
                        for x in v.features.modalities[i].data() {
                            bytes.extend_from_slice(&x.to_le_bytes());
                        }
                    }
                }
            }
            write_file(&dir.join(file), bytes)?;
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &VideoRecord> {
        self.videos.iter().filter(move |v| v.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    /// Every training caption, as token ids.
    pub fn training_captions(&self) -> Vec<&[TokenId]> {
        self.split(Split::Train)
            .flat_map(|v| v.captions.iter().map(Vec::as_slice))
            .collect()
    }

    pub fn max_caption_len(&self) -> usize {
        self.videos.iter().flat_map(|v| v.captions.iter().map(Vec::len)).max().unwrap_or(0)
    }

    /// Histogram of caption lengths per video id, for reporting.
    pub fn length_histogram(&self, split: Split) -> BTreeMap<usize, usize> {
        let mut h = BTreeMap::new();
        for v in self.split(split) {
            for c in &v.captions {
                *h.entry(c.len()).or_insert(0) += 1;
            }
        }
        h
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Error::Json {
        path: PathBuf::from(path),
        source: e,
    })
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}
