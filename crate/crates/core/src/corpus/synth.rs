//! Procedural scene grammar producing feature sequences and reference captions.

use rand::seq::IndexedRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::io::{Corpus, LoadOptions, Manifest, ModalityFile, RawVideo, Split};
use super::lexicon::{PosLexicon, PosTag};
use crate::error::{Error, Result};
use crate::model::VideoFeatures;
use crate::numerics::Tensor;
use crate::rng::{self, tag};

struct Subject {
    word: &'static str,
    synonym: Option<&'static str>,
}

struct Verb {
    ing: &'static str,
    third: &'static str,
    synonym: Option<(&'static str, &'static str)>,
    objects: &'static [&'static str],
}

const SUBJECTS: [Subject; 10] = [
    Subject { word: "man", synonym: Some("guy") },
    Subject { word: "woman", synonym: Some("lady") },
    Subject { word: "boy", synonym: Some("kid") },
    Subject { word: "girl", synonym: None },
    Subject { word: "dog", synonym: Some("puppy") },
    Subject { word: "cat", synonym: Some("kitten") },
    Subject { word: "chef", synonym: Some("cook") },
    Subject { word: "player", synonym: None },
    Subject { word: "baby", synonym: None },
    Subject { word: "monkey", synonym: None },
];

const VERBS: [Verb; 12] = [
    Verb { ing: "cooking", third: "cooks", synonym: None, objects: &["food", "pasta", "potato", "meat"] },
    Verb { ing: "cutting", third: "cuts", synonym: Some(("slicing", "slices")), objects: &["bread", "onion", "meat", "paper"] },
    Verb { ing: "playing", third: "plays", synonym: None, objects: &["guitar", "piano", "ball", "drum"] },
    Verb { ing: "riding", third: "rides", synonym: None, objects: &["bike", "horse", "skateboard"] },
    Verb { ing: "eating", third: "eats", synonym: None, objects: &["bread", "pasta", "potato", "banana"] },
    Verb { ing: "throwing", third: "throws", synonym: Some(("tossing", "tosses")), objects: &["ball", "box", "banana"] },
    Verb { ing: "washing", third: "washes", synonym: Some(("cleaning", "cleans")), objects: &["car", "dish", "window"] },
    Verb { ing: "pushing", third: "pushes", synonym: None, objects: &["box", "car", "cart"] },
    Verb { ing: "holding", third: "holds", synonym: None, objects: &["ball", "box", "guitar", "banana"] },
    Verb { ing: "drawing", third: "draws", synonym: None, objects: &["picture", "map"] },
    Verb { ing: "reading", third: "reads", synonym: None, objects: &["book", "map", "paper"] },
    Verb { ing: "opening", third: "opens", synonym: None, objects: &["box", "door", "window"] },
];

const OBJECT_SYNONYMS: [(&str, &str); 2] = [("bike", "bicycle"), ("food", "meal")];

const PLACES: [(&str, &str); 8] = [
    ("kitchen", "in"),
    ("park", "in"),
    ("street", "on"),
    ("field", "in"),
    ("room", "in"),
    ("beach", "on"),
    ("stage", "on"),
    ("yard", "in"),
];

const TEMPLATE_WEIGHTS: [f64; 5] = [0.45, 0.2, 0.15, 0.12, 0.08];

const FUNCTION_WORDS: [(&str, PosTag); 6] = [
    ("a", PosTag::Determiner),
    ("the", PosTag::Determiner),
    ("is", PosTag::Verb),
    ("there", PosTag::Other),
    ("in", PosTag::Other),
    ("on", PosTag::Other),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    /// 1 (image only) or 2 (image and motion).
    pub modalities: usize,
    pub feature_dim: usize,
    pub frames: usize,
    /// Standard deviation of the per-entry Gaussian feature noise.
    pub sigma: f64,
    /// Relative per-frame variation of concept weights.
    pub frame_jitter: f64,
    pub subjects: usize,
    pub verbs: usize,
    pub places: usize,
    /// Number of sentence templates in use (1–5), most frequent first.
    pub templates: usize,
    pub synonym_prob: f64,
    /// Probability that a caption mentions the scene's place.
    pub place_prob: f64,
    pub captions_min: usize,
    pub captions_max: usize,
    /// Tag every video with its place index as category.
    pub categories: bool,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            train: 500,
            val: 50,
            test: 100,
            modalities: 2,
            feature_dim: 48,
            frames: 8,
            sigma: 0.5,
            frame_jitter: 0.2,
            subjects: 10,
            verbs: 12,
            places: 8,
            templates: 4,
            synonym_prob: 0.25,
            place_prob: 0.3,
            captions_min: 3,
            captions_max: 10,
            categories: false,
        }
    }
}

/// A sampled scene: indices into the subject, verb, object and place pools.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Scene {
    pub subject: usize,
    pub verb: usize,
    pub object: usize,
    pub place: usize,
}

struct Grammar {
    subjects: Vec<&'static Subject>,
    verbs: Vec<&'static Verb>,
    objects: Vec<&'static str>,
    places: Vec<(&'static str, &'static str)>,
}

impl Grammar {
    fn new(spec: &SynthSpec) -> Self {
        let subjects: Vec<_> = SUBJECTS.iter().take(spec.subjects).collect();
        let verbs: Vec<&Verb> = VERBS.iter().take(spec.verbs).collect();
        let mut objects = Vec::new();
        for v in &verbs {
            for o in v.objects {
                if !objects.contains(o) {
                    objects.push(*o);
                }
            }
        }
        Grammar {
            subjects,
            verbs,
            objects,
            places: PLACES.iter().take(spec.places).copied().collect(),
        }
    }

    fn object_index(&self, word: &str) -> usize {
        self.objects.iter().position(|o| *o == word).expect("object in pool")
    }

    fn lexicon(&self) -> PosLexicon {
        let mut entries: Vec<(String, PosTag)> = FUNCTION_WORDS.iter().map(|(w, t)| (w.to_string(), *t)).collect();
        let mut push = |w: &str, t: PosTag| {
            if !entries.iter().any(|(e, _)| e == w) {
                entries.push((w.to_string(), t));
            }
        };
        for s in &self.subjects {
            push(s.word, PosTag::Noun);
            if let Some(syn) = s.synonym {
                push(syn, PosTag::Noun);
            }
        }
        for v in &self.verbs {
            push(v.ing, PosTag::Verb);
            push(v.third, PosTag::Verb);
            if let Some((a, b)) = v.synonym {
                push(a, PosTag::Verb);
                push(b, PosTag::Verb);
            }
        }
        for o in &self.objects {
            push(o, PosTag::Noun);
            if let Some((_, syn)) = OBJECT_SYNONYMS.iter().find(|(w, _)| w == o) {
                push(syn, PosTag::Noun);
            }
        }
        for (p, _) in &self.places {
            push(p, PosTag::Noun);
        }
        PosLexicon::new(entries).expect("grammar words are distinct")
    }

    fn subject_forms(&self, i: usize) -> Vec<String> {
        let s = self.subjects[i];
        std::iter::once(s.word).chain(s.synonym).map(String::from).collect()
    }

    fn verb_forms(&self, i: usize) -> Vec<String> {
        let v = self.verbs[i];
        let mut f = vec![v.ing, v.third];
        if let Some((a, b)) = v.synonym {
            f.extend([a, b]);
        }
        f.into_iter().map(String::from).collect()
    }

    fn object_forms(&self, i: usize) -> Vec<String> {
        let o = self.objects[i];
        let syn = OBJECT_SYNONYMS.iter().find(|(w, _)| *w == o).map(|(_, s)| *s);
        std::iter::once(o).chain(syn).map(String::from).collect()
    }

    fn realize(&self, scene: Scene, template: usize, spec: &SynthSpec, rng: &mut rng::Rng) -> String {
        let pick = |forms: Vec<String>, rng: &mut rng::Rng| -> String {
            if forms.len() > 1 && rng.random_bool(spec.synonym_prob) {
                forms.last().unwrap().clone()
            } else {
                forms[0].clone()
            }
        };
        let subject = pick(self.subject_forms(scene.subject), rng);
        let verb = self.verbs[scene.verb];
        let use_syn = verb.synonym.is_some() && rng.random_bool(spec.synonym_prob);
        let (ing, third) = match (use_syn, verb.synonym) {
            (true, Some(s)) => s,
            _ => (verb.ing, verb.third),
        };
        let object = pick(self.object_forms(scene.object), rng);
        let mut words: Vec<&str> = match template {
            0 => vec!["a", &subject, "is", ing, "a", &object],
            1 => vec!["the", &subject, "is", ing, "the", &object],
            2 => vec!["a", &subject, third, "a", &object],
            3 => vec!["there", "is", "a", &subject, ing, "a", &object],
            _ => vec!["the", &subject, third, "the", &object],
        };
        let (place, prep) = self.places[scene.place];
        if rng.random_bool(spec.place_prob) {
            words.extend([prep, "the", place]);
        }
        words.join(" ")
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidSpec(m.to_string()));
        if self.train == 0 {
            return fail("train split must be nonempty");
        }
        if !(1..=2).contains(&self.modalities) {
            return fail("modalities must be 1 or 2");
        }
        if self.frames == 0 || self.feature_dim == 0 {
            return fail("frames and feature_dim must be positive");
        }
        if !(1..=SUBJECTS.len()).contains(&self.subjects)
            || !(1..=VERBS.len()).contains(&self.verbs)
            || !(1..=PLACES.len()).contains(&self.places)
        {
            return fail("concept counts exceed the grammar pools");
        }
        if !(1..=TEMPLATE_WEIGHTS.len()).contains(&self.templates) {
            return fail("templates must be between 1 and 5");
        }
        if self.captions_min == 0 || self.captions_min > self.captions_max {
            return fail("need 1 <= captions_min <= captions_max");
        }
        let prob_ok = |p: f64| (0.0..=1.0).contains(&p);
        if !prob_ok(self.synonym_prob) || !prob_ok(self.place_prob) {
            return fail("probabilities must lie in [0, 1]");
        }
        if !(self.sigma >= 0.0 && self.frame_jitter >= 0.0) {
            return fail("sigma and frame_jitter must be nonnegative");
        }
        let g = Grammar::new(self);
        for (m, n) in self.concepts_per_modality(&g).into_iter().enumerate() {
            if self.feature_dim < n {
                return Err(Error::InvalidSpec(format!(
                    "modality {m} carries {n} concepts but feature_dim is {}",
                    self.feature_dim
                )));
            }
        }
        Ok(())
    }

    // Image features carry subjects, objects and places; motion features carry
    // verbs and subjects. A single modality carries everything.
    fn concepts_per_modality(&self, g: &Grammar) -> Vec<usize> {
        let (s, v, o, p) = (g.subjects.len(), g.verbs.len(), g.objects.len(), g.places.len());
        if self.modalities == 1 {
            vec![s + v + o + p]
        } else {
            vec![s + o + p, v + s]
        }
    }
}

/// Orthonormal rows via Gram–Schmidt on Gaussian draws, scaled to norm √d.
fn prototypes(count: usize, dim: usize, rng: &mut rng::Rng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    let scale = (dim as f64).sqrt();
    basis.into_iter().map(|b| b.into_iter().map(|x| x * scale).collect()).collect()
}

struct Prototypes {
    // [modality][concept] where concept lists are (subjects, verbs, objects, places)
    // mapped to rows; None when the modality does not carry that concept kind.
    tables: Vec<[Option<Vec<Vec<f64>>>; 4]>,
}

impl Prototypes {
    fn new(spec: &SynthSpec, g: &Grammar, rng: &mut rng::Rng) -> Self {
        let counts = [g.subjects.len(), g.verbs.len(), g.objects.len(), g.places.len()];
        let kinds: Vec<[bool; 4]> = if spec.modalities == 1 {
            vec![[true; 4]]
        } else {
            vec![[true, false, true, true], [true, true, false, false]]
        };
        let tables = kinds
            .into_iter()
            .map(|carry| {
                let total: usize = (0..4).filter(|&k| carry[k]).map(|k| counts[k]).sum();
                let mut rows = prototypes(total, spec.feature_dim, rng).into_iter();
                let mut out: [Option<Vec<Vec<f64>>>; 4] = Default::default();
                for k in 0..4 {
                    if carry[k] {
                        out[k] = Some(rows.by_ref().take(counts[k]).collect());
                    }
                }
                out
            })
            .collect();
        Prototypes { tables }
    }

    fn active(&self, m: usize, scene: Scene) -> Vec<&[f64]> {
        let idx = [scene.subject, scene.verb, scene.object, scene.place];
        (0..4)
            .filter_map(|k| self.tables[m][k].as_ref().map(|t| t[idx[k]].as_slice()))
            .collect()
    }

    fn signature(&self, scene: Scene) -> Vec<f64> {
        let mut sig = Vec::new();
        for m in 0..self.tables.len() {
            let active = self.active(m, scene);
            let dim = active[0].len();
            sig.extend((0..dim).map(|j| active.iter().map(|p| p[j]).sum::<f64>()));
        }
        sig
    }
}

fn sample_scene(g: &Grammar, rng: &mut rng::Rng) -> Scene {
    let subject = rng.random_range(0..g.subjects.len());
    let verb = rng.random_range(0..g.verbs.len());
    let object = g.object_index(g.verbs[verb].objects.choose(rng).expect("verbs have objects"));
    let place = rng.random_range(0..g.places.len());
    Scene {
        subject,
        verb,
        object,
        place,
    }
}

fn pick_template(weights: &[f64], rng: &mut rng::Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

/// Generated corpus together with the scene of every video.
pub struct SynthOutput {
    pub corpus: Corpus,
    pub scenes: Vec<Scene>,
}

pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<SynthOutput> {
    spec.validate()?;
    let g = Grammar::new(spec);
    let protos = Prototypes::new(spec, &g, &mut rng::stream(seed, &[tag::SYNTH, 0]));
    let weights = &TEMPLATE_WEIGHTS[..spec.templates];
    let names = ["image", "motion"];

    let total = spec.train + spec.val + spec.test;
    let mut raw = Vec::with_capacity(total);
    let mut scenes = Vec::with_capacity(total);
    for i in 0..total {
        let mut r = rng::stream(seed, &[tag::SYNTH, 1, i as u64]);
        let scene = sample_scene(&g, &mut r);
        let split = if i < spec.train {
            Split::Train
        } else if i < spec.train + spec.val {
            Split::Val
        } else {
            Split::Test
        };
        let mut modalities = Vec::with_capacity(spec.modalities);
        for m in 0..spec.modalities {
            let active = protos.active(m, scene);
            let mut data = Vec::with_capacity(spec.frames * spec.feature_dim);
            for _ in 0..spec.frames {
                let w: Vec<f64> = active
                    .iter()
                    .map(|_| 1.0 + spec.frame_jitter * { let z: f64 = StandardNormal.sample(&mut r); z })
                    .collect();
                for j in 0..spec.feature_dim {
                    let signal: f64 = active.iter().zip(&w).map(|(p, w)| w * p[j]).sum();
                    let noise: f64 = StandardNormal.sample(&mut r);
                    data.push((signal + spec.sigma * noise) as f32);
                }
            }
            modalities.push(Tensor::matrix(spec.frames, spec.feature_dim, data)?);
        }
        let n_caps = r.random_range(spec.captions_min..=spec.captions_max);
        let captions = (0..n_caps)
            .map(|_| {
                let t = pick_template(weights, &mut r);
                g.realize(scene, t, spec, &mut r)
            })
            .collect();
        raw.push(RawVideo {
            video_id: format!("video{i:04}"),
            split,
            features: VideoFeatures {
                modalities,
                category: spec.categories.then_some(scene.place),
            },
            captions,
            concepts: vec![
                g.subject_forms(scene.subject),
                g.verb_forms(scene.verb),
                g.object_forms(scene.object),
            ],
        });
        scenes.push(scene);
    }
    check_separable(&protos, &scenes)?;

    let manifest = Manifest {
        modalities: (0..spec.modalities)
            .map(|m| ModalityFile {
                name: names[m].to_string(),
                d_v: spec.feature_dim,
                k: spec.frames,
                file: "features.bin".to_string(),
            })
            .collect(),
        captions_file: "captions.jsonl".to_string(),
        lexicon_file: "lexicon.tsv".to_string(),
        category_count: spec.categories.then_some(g.places.len()),
        seed: Some(seed),
    };
    let corpus = Corpus::build(manifest, g.lexicon(), raw, LoadOptions::default())?;
    Ok(SynthOutput { corpus, scenes })
}

/// Distinct scenes must have distinct noise-free feature sums.
fn check_separable(protos: &Prototypes, scenes: &[Scene]) -> Result<()> {
    let mut distinct: Vec<Scene> = scenes.to_vec();
    distinct.sort();
    distinct.dedup();
    let sigs: Vec<Vec<f64>> = distinct.iter().map(|s| protos.signature(*s)).collect();
    for i in 0..sigs.len() {
        for j in i + 1..sigs.len() {
            let d: f64 = sigs[i].iter().zip(&sigs[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            if d <= 1e-9 {
                return Err(Error::InvalidSpec(format!(
                    "scenes {:?} and {:?} share a feature signature",
                    distinct[i], distinct[j]
                )));
            }
        }
    }
    Ok(())
}

/// Number of training videos mentioning each concept kind (subject, verb, object, place).
pub fn concept_counts(scenes: &[Scene], corpus: &Corpus) -> [Vec<usize>; 4] {
    let max = |f: fn(&Scene) -> usize| scenes.iter().map(f).max().map_or(0, |m| m + 1);
    let mut counts = [
        vec![0; max(|s| s.subject)],
        vec![0; max(|s| s.verb)],
        vec![0; max(|s| s.object)],
        vec![0; max(|s| s.place)],
    ];
    for (s, v) in scenes.iter().zip(&corpus.videos) {
        if v.split == Split::Train {
            counts[0][s.subject] += 1;
            counts[1][s.verb] += 1;
            counts[2][s.object] += 1;
            counts[3][s.place] += 1;
        }
    }
    counts
}

/// Concept totals of the grammar selected by `spec`: subjects, verbs, objects, places.
pub fn grammar_sizes(spec: &SynthSpec) -> [usize; 4] {
    let g = Grammar::new(spec);
    [g.subjects.len(), g.verbs.len(), g.objects.len(), g.places.len()]
}
