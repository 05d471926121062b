//! Cross-category speaker/content recombination and the synthetic corpus.
//!
//! A recording is factored into a speaker part `S` (identity, timbre) and a
//! content part `C` (words, pauses, pathology-bearing acoustics) plus its
//! label `Y`. Recombining a source with a target of the opposite class yields
//! `(S_target, C_source, Y_source)`, rendered back into feature streams by a
//! [`Converter`].
//!
//! The synthetic generator renders word `t` of a recording as
//!
//! ```text
//! A_t = U·S + V·C_t + [Y = AD]·pathology_strength·p + ε_t
//! T_t = W·C_t
//! ```
//!
//! with fixed seeded mixing matrices `U, V, W`, a unit direction `p`, and
//! noise `ε_t ~ N(0, noise_std²)` drawn from a seed carried by the content.
//! Pause tokens between words take fixed per-marker text embeddings.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::{
    align_files, build_aligned_sample, insert_pause_tokens, AlignOptions, AlignedSample,
    PauseKind, PauseThresholds, RecordingFiles, TimedWord, Transcript,
};
use crate::error::{invalid, Error, Result};
use crate::label::Label;
use crate::numerics::paramvec::{read_matrix, write_matrix};
use crate::numerics::{Dtype, Tensor2};

/// Content factor of a recording: everything that survives conversion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Content {
    /// One `d_c` vector per word.
    pub words: Vec<Vec<f64>>,
    /// Spoken duration of each word, seconds.
    pub durations: Vec<f64>,
    /// Silence before each word after the first, seconds.
    pub gaps: Vec<f64>,
    pub noise_seed: u64,
}

impl Content {
    /// Word timestamps implied by durations and gaps, starting at 0.
    pub fn timed_words(&self) -> Vec<TimedWord> {
        let mut t = 0.0;
        let mut out = Vec::with_capacity(self.words.len());
        for (i, &dur) in self.durations.iter().enumerate() {
            if i > 0 {
                t += self.gaps[i - 1];
            }
            out.push(TimedWord::new(format!("w{i}"), t, t + dur));
            t += dur;
        }
        out
    }
}

/// A labeled recording with its latent factors (when known) and the feature
/// streams the model consumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub speaker_id: String,
    pub label: Label,
    /// Speaker factor `S`; empty for ingested recordings.
    pub speaker: Vec<f64>,
    /// Content factor `C`; `None` for ingested recordings.
    pub content: Option<Content>,
    pub features: AlignedSample,
}

/// Renders feature streams from `(S, C, Y)`.
pub trait Converter: Sync {
    fn render(&self, speaker: &[f64], speaker_id: &str, content: &Content, label: Label) -> Result<AlignedSample>;
}

/// `(S_target, C_source, Y_source)`, re-rendered by `converter`.
pub fn recombine(source: &Sample, target: &Sample, converter: &dyn Converter) -> Result<Sample> {
    if source.label == target.label {
        return Err(Error::CategoryConstraint);
    }
    let content = source
        .content
        .as_ref()
        .ok_or_else(|| invalid(format!("sample {} has no content factor to convert", source.id)))?;
    if target.speaker.is_empty() {
        return Err(invalid(format!("sample {} has no speaker factor", target.id)));
    }
    let features = converter.render(&target.speaker, &target.speaker_id, content, source.label)?;
    Ok(Sample {
        id: format!("{}~{}", source.id, target.speaker_id),
        speaker_id: target.speaker_id.clone(),
        label: source.label,
        speaker: target.speaker.clone(),
        content: Some(content.clone()),
        features,
    })
}

/// Keep every original and append, for each original taken as the target, one
/// recombination with a source drawn uniformly (with replacement) from the
/// opposite class.
pub fn augment_dataset(train: &[Sample], seed: u64, converter: &dyn Converter) -> Result<Vec<Sample>> {
    let by_label: BTreeMap<Label, Vec<usize>> = Label::ALL
        .iter()
        .map(|&l| (l, train.iter().enumerate().filter(|(_, s)| s.label == l).map(|(i, _)| i).collect()))
        .collect();
    if by_label.values().any(Vec::is_empty) {
        return Err(invalid("augmentation needs both classes present"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs: Vec<(usize, usize)> = train
        .iter()
        .enumerate()
        .map(|(t, target)| {
            let pool = &by_label[&target.label.opposite()];
            (pool[rng.random_range(0..pool.len())], t)
        })
        .collect();
    let augmented: Vec<Sample> = pairs
        .par_iter()
        .map(|&(s, t)| recombine(&train[s], &train[t], converter))
        .collect::<Result<_>>()?;
    let mut out = train.to_vec();
    out.extend(augmented);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthCorpusConfig {
    pub n_per_class: usize,
    /// Speaker factor dimension.
    pub d_s: usize,
    /// Content factor dimension.
    pub d_c: usize,
    /// Feature dimension of both streams.
    pub d: usize,
    pub words_per_sample: usize,
    pub max_len: usize,
    pub pathology_strength: f64,
    /// Extra mean pause for AD recordings, seconds.
    pub pause_shift: f64,
    /// Mean pause for CN recordings, seconds.
    pub base_pause: f64,
    pub noise_std: f64,
    /// Scale of the speaker contribution `U·S`.
    pub speaker_scale: f64,
    pub seed: u64,
}

impl Default for SynthCorpusConfig {
    fn default() -> Self {
        Self {
            n_per_class: 60,
            d_s: 4,
            d_c: 8,
            d: 16,
            words_per_sample: 12,
            max_len: 32,
            pathology_strength: 0.6,
            pause_shift: 0.25,
            base_pause: 0.35,
            noise_std: 1.0,
            speaker_scale: 1.5,
            seed: 0,
        }
    }
}

impl SynthCorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_s == 0 || self.d_c == 0 || self.d == 0 || self.words_per_sample == 0 {
            return Err(Error::InvalidConfig("synthetic corpus dims must be >= 1".into()));
        }
        if self.max_len == 0 {
            return Err(Error::InvalidConfig("max_len must be >= 1".into()));
        }
        if !(self.noise_std >= 0.0) || !(self.base_pause > 0.0) || self.pause_shift < 0.0 {
            return Err(Error::InvalidConfig(
                "noise_std >= 0, base_pause > 0, pause_shift >= 0 required".into(),
            ));
        }
        Ok(())
    }
}

/// Fixed mixing matrices of the generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mixing {
    /// `d × d_s`
    pub speaker: Tensor2,
    /// `d × d_c`
    pub content: Tensor2,
    /// `d × d_c`
    pub text: Tensor2,
    /// Unit pathology direction, length `d`.
    pub pathology: Vec<f64>,
    /// Text embeddings for comma, period, ellipsis markers (`3 × d`).
    pub pauses: Tensor2,
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor2 {
    let data = (0..rows * cols).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor2::from_vec(rows, cols, data).expect("sized")
}

impl Mixing {
    pub fn generate(cfg: &SynthCorpusConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        let speaker = gaussian_matrix(&mut rng, cfg.d, cfg.d_s, 1.0 / (cfg.d_s as f64).sqrt());
        let content = gaussian_matrix(&mut rng, cfg.d, cfg.d_c, 1.0 / (cfg.d_c as f64).sqrt());
        let text = gaussian_matrix(&mut rng, cfg.d, cfg.d_c, 1.0 / (cfg.d_c as f64).sqrt());
        let mut pathology = gaussian_matrix(&mut rng, 1, cfg.d, 1.0).into_data();
        let norm = pathology.iter().map(|v| v * v).sum::<f64>().sqrt();
        pathology.iter_mut().for_each(|v| *v /= norm);
        let pauses = gaussian_matrix(&mut rng, 3, cfg.d, 1.0);
        Self { speaker, content, text, pathology, pauses }
    }
}

fn pause_row(kind: PauseKind) -> usize {
    match kind {
        PauseKind::Comma => 0,
        PauseKind::Period => 1,
        PauseKind::Ellipsis => 2,
    }
}

fn mat_vec(m: &Tensor2, v: &[f64]) -> Vec<f64> {
    (0..m.rows()).map(|r| m.row(r).iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

/// The generative model, usable as a [`Converter`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthGenerator {
    pub config: SynthCorpusConfig,
    pub mixing: Mixing,
    pub thresholds: PauseThresholds,
}

/// Rounds to the 10 ms grid so that word boundaries land on frame edges at
/// 100 Hz.
fn grid(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

impl SynthGenerator {
    pub fn new(config: SynthCorpusConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { mixing: Mixing::generate(&config), config, thresholds: PauseThresholds::default() })
    }

    /// Word-level audio rows (`n_words × d`).
    pub fn audio_rows(&self, speaker: &[f64], content: &Content, label: Label) -> Result<Tensor2> {
        let cfg = &self.config;
        if speaker.len() != cfg.d_s {
            return Err(Error::LengthMismatch { expected: cfg.d_s, got: speaker.len() });
        }
        let base = mat_vec(&self.mixing.speaker, speaker);
        let patho = if label == Label::Ad { cfg.pathology_strength } else { 0.0 };
        let mut noise_rng = ChaCha8Rng::seed_from_u64(content.noise_seed);
        let mut out = Tensor2::zeros(content.words.len(), cfg.d);
        for (t, c) in content.words.iter().enumerate() {
            if c.len() != cfg.d_c {
                return Err(Error::LengthMismatch { expected: cfg.d_c, got: c.len() });
            }
            let vc = mat_vec(&self.mixing.content, c);
            for (j, o) in out.row_mut(t).iter_mut().enumerate() {
                let mut x = base[j] * cfg.speaker_scale + vc[j] + patho * self.mixing.pathology[j];
                if cfg.noise_std > 0.0 {
                    x += cfg.noise_std * noise_rng.sample::<f64, _>(StandardNormal);
                }
                *o = x;
            }
        }
        Ok(out)
    }

    /// Token-level text rows (`n_tokens × d`), pause markers included.
    pub fn text_rows(&self, content: &Content) -> Result<(Vec<crate::alignment::Token>, Tensor2)> {
        let tokens = insert_pause_tokens(&content.timed_words(), &self.thresholds)?;
        let mut out = Tensor2::zeros(tokens.len(), self.config.d);
        let mut w = 0;
        for (i, tok) in tokens.iter().enumerate() {
            match tok.pause {
                Some(kind) => out.row_mut(i).copy_from_slice(self.mixing.pauses.row(pause_row(kind))),
                None => {
                    out.row_mut(i).copy_from_slice(&mat_vec(&self.mixing.text, &content.words[w]));
                    w += 1;
                }
            }
        }
        Ok((tokens, out))
    }

    /// Draw sample `index`. Each index has its own seed, `seed ⊕ index`, so
    /// generation order does not matter.
    pub fn draw(&self, index: usize, label: Label) -> Result<Sample> {
        let cfg = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ index as u64);
        rng.set_stream(2);
        let speaker: Vec<f64> = (0..cfg.d_s).map(|_| rng.sample(StandardNormal)).collect();
        let words: Vec<Vec<f64>> = (0..cfg.words_per_sample)
            .map(|_| (0..cfg.d_c).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let durations: Vec<f64> =
            (0..cfg.words_per_sample).map(|_| grid(rng.random_range(0.2..0.6))).collect();
        let mean_pause = cfg.base_pause + if label == Label::Ad { cfg.pause_shift } else { 0.0 };
        let exp = Exp::new(1.0 / mean_pause).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let gaps: Vec<f64> =
            (1..cfg.words_per_sample).map(|_| grid(exp.sample(&mut rng))).collect();
        let noise_seed = rng.random();
        let content = Content { words, durations, gaps, noise_seed };
        let speaker_id = format!("spk{index:04}");
        let features = self.render(&speaker, &speaker_id, &content, label)?;
        Ok(Sample { id: format!("s{index:04}"), speaker_id, label, speaker, content: Some(content), features })
    }

    /// `n_per_class` CN recordings followed by `n_per_class` AD recordings.
    pub fn generate(&self) -> Result<Vec<Sample>> {
        let n = self.config.n_per_class;
        (0..2 * n)
            .into_par_iter()
            .map(|i| self.draw(i, if i < n { Label::Cn } else { Label::Ad }))
            .collect()
    }
}

impl Converter for SynthGenerator {
    fn render(&self, speaker: &[f64], speaker_id: &str, content: &Content, label: Label) -> Result<AlignedSample> {
        let audio = self.audio_rows(speaker, content, label)?;
        let (tokens, text) = self.text_rows(content)?;
        build_aligned_sample(&tokens, &audio, &text, self.config.max_len, label, speaker_id)
    }
}

/// Generate a synthetic corpus.
pub fn synth_generate(config: &SynthCorpusConfig) -> Result<(SynthGenerator, Vec<Sample>)> {
    let g = SynthGenerator::new(*config)?;
    let samples = g.generate()?;
    Ok((g, samples))
}

/// Frame rate used when synthetic recordings are written to disk.
pub const SYNTH_FRAME_HZ: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub speaker_id: String,
    pub label: Label,
    #[serde(flatten)]
    pub files: RecordingFiles,
    /// Latent factors, present for synthetic recordings.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub align: AlignOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SynthCorpusConfig>,
    /// Mixing matrix files, by name.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub mixing: BTreeMap<String, String>,
    pub samples: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Latent {
    speaker: Vec<f64>,
    content: Content,
}

/// A corpus loaded from disk, with its converter when the corpus is synthetic.
pub struct Corpus {
    pub manifest: CorpusManifest,
    pub samples: Vec<Sample>,
    pub generator: Option<SynthGenerator>,
}

/// Write recordings in the ingestion layout: transcript JSON, frame-level
/// audio features, token embeddings, and, for synthetic data, latent factors
/// and the mixing matrices.
pub fn write_corpus(dir: &Path, samples: &[Sample], generator: Option<&SynthGenerator>, dtype: Dtype) -> Result<CorpusManifest> {
    for sub in ["transcripts", "frames", "tokens", "latent", "mixing"] {
        fs::create_dir_all(dir.join(sub))?;
    }
    let align = AlignOptions {
        thresholds: generator.map(|g| g.thresholds).unwrap_or_default(),
        max_len: samples.first().map_or(200, |s| s.features.len()),
        frame_hz: SYNTH_FRAME_HZ,
    };
    let mut mixing = BTreeMap::new();
    if let Some(g) = generator {
        let pathology = Tensor2::from_vec(1, g.config.d, g.mixing.pathology.clone())?;
        for (name, m) in [
            ("speaker", &g.mixing.speaker),
            ("content", &g.mixing.content),
            ("text", &g.mixing.text),
            ("pathology", &pathology),
            ("pauses", &g.mixing.pauses),
        ] {
            let rel = format!("mixing/{name}.fpv");
            write_matrix(&dir.join(&rel), m, Dtype::F64)?;
            mixing.insert(name.to_string(), rel);
        }
    }
    let mut entries = Vec::with_capacity(samples.len());
    for s in samples {
        let content = s
            .content
            .as_ref()
            .ok_or_else(|| invalid(format!("sample {} has no content to write", s.id)))?;
        let g = generator.ok_or_else(|| invalid("writing a corpus requires its generator"))?;
        let words = content.timed_words();
        let transcript = Transcript { speaker_id: s.speaker_id.clone(), label: s.label, words: words.clone() };
        let audio = g.audio_rows(&s.speaker, content, s.label)?;
        let (_, text) = g.text_rows(content)?;
        let n_frames = words.last().map_or(0, |w| (w.end * SYNTH_FRAME_HZ).round() as usize);
        let mut frames = Tensor2::zeros(n_frames, audio.cols());
        for (i, w) in words.iter().enumerate() {
            let lo = (w.start * SYNTH_FRAME_HZ).round() as usize;
            let hi = (w.end * SYNTH_FRAME_HZ).round() as usize;
            for f in lo..hi {
                frames.row_mut(f).copy_from_slice(audio.row(i));
            }
        }
        let files = RecordingFiles {
            transcript: format!("transcripts/{}.json", s.id),
            frames: format!("frames/{}.fpv", s.id),
            tokens: format!("tokens/{}.fpv", s.id),
        };
        fs::write(dir.join(&files.transcript), serde_json::to_vec_pretty(&transcript)?)?;
        write_matrix(&dir.join(&files.frames), &frames, dtype)?;
        write_matrix(&dir.join(&files.tokens), &text, dtype)?;
        let latent = format!("latent/{}.json", s.id);
        fs::write(
            dir.join(&latent),
            serde_json::to_vec(&Latent { speaker: s.speaker.clone(), content: content.clone() })?,
        )?;
        entries.push(ManifestEntry {
            id: s.id.clone(),
            speaker_id: s.speaker_id.clone(),
            label: s.label,
            files,
            latent: Some(latent),
        });
    }
    let manifest = CorpusManifest { align, synthetic: generator.map(|g| g.config), mixing, samples: entries };
    fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Load any corpus in the ingestion layout. Recordings are aligned from their
/// transcript, frames, and token files; latent factors are attached when present.
pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let manifest: CorpusManifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
    let generator = match manifest.synthetic {
        Some(config) => {
            let m = |name: &str| -> Result<Tensor2> {
                let rel = manifest
                    .mixing
                    .get(name)
                    .ok_or_else(|| Error::Format(format!("manifest lacks mixing matrix {name}")))?;
                read_matrix(&dir.join(rel))
            };
            let mixing = Mixing {
                speaker: m("speaker")?,
                content: m("content")?,
                text: m("text")?,
                pathology: m("pathology")?.into_data(),
                pauses: m("pauses")?,
            };
            Some(SynthGenerator { config, mixing, thresholds: manifest.align.thresholds })
        }
        None => None,
    };
    let samples = manifest
        .samples
        .par_iter()
        .map(|e| {
            let features = align_files(dir, &e.files, &manifest.align)?;
            let (speaker, content) = match &e.latent {
                Some(rel) => {
                    let l: Latent = serde_json::from_slice(&fs::read(dir.join(rel))?)?;
                    (l.speaker, Some(l.content))
                }
                None => (Vec::new(), None),
            };
            Ok(Sample { id: e.id.clone(), speaker_id: e.speaker_id.clone(), label: e.label, speaker, content, features })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus { manifest, samples, generator })
}
