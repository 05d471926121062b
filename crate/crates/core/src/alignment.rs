//! Word-level alignment of transcripts and acoustic frames.
//!
//! Transcripts arrive with per-word timestamps. Silences between words become
//! pause marker tokens, frame-level acoustic features are mean-pooled over each
//! word's span, and both streams are packed into fixed-length masked matrices.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::label::Label;
use crate::numerics::paramvec::read_matrix;
use crate::numerics::Tensor2;

/// Slack used when mapping timestamps to frame indices, so that e.g.
/// `0.3 s × 10 Hz` lands on frame 3 rather than 4.
const FRAME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedWord {
    pub text: String,
    pub start: f64,
    pub end: f64,
}

impl TimedWord {
    pub fn new(text: impl Into<String>, start: f64, end: f64) -> Self {
        Self { text: text.into(), start, end }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PauseKind {
    Comma,
    Period,
    Ellipsis,
}

impl PauseKind {
    pub fn marker(self) -> &'static str {
        match self {
            PauseKind::Comma => ",",
            PauseKind::Period => ".",
            PauseKind::Ellipsis => "...",
        }
    }
}

/// Gap thresholds in seconds: a gap `g` gets no marker below `comma`, a comma
/// in `[comma, period)`, a period in `[period, ellipsis)`, and an ellipsis
/// from `ellipsis` up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PauseThresholds {
    pub comma: f64,
    pub period: f64,
    pub ellipsis: f64,
}

impl Default for PauseThresholds {
    fn default() -> Self {
        Self { comma: 0.5, period: 1.0, ellipsis: 2.0 }
    }
}

impl PauseThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.comma < self.period && self.period < self.ellipsis) {
            return Err(invalid("pause thresholds must be strictly increasing"));
        }
        Ok(())
    }

    pub fn classify(&self, gap: f64) -> Option<PauseKind> {
        if gap >= self.ellipsis {
            Some(PauseKind::Ellipsis)
        } else if gap >= self.period {
            Some(PauseKind::Period)
        } else if gap >= self.comma {
            Some(PauseKind::Comma)
        } else {
            None
        }
    }
}

/// A transcript token: either a spoken word or an inserted pause marker.
/// Pause markers span the silence they stand for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub start: f64,
    pub end: f64,
    pub pause: Option<PauseKind>,
}

impl Token {
    pub fn is_pause(&self) -> bool {
        self.pause.is_some()
    }

    pub fn as_word(&self) -> TimedWord {
        TimedWord::new(self.text.clone(), self.start, self.end)
    }
}

fn validate_words(words: &[TimedWord]) -> Result<()> {
    for (i, w) in words.iter().enumerate() {
        if !(w.start.is_finite() && w.end.is_finite()) || w.start < 0.0 || w.start > w.end {
            return Err(invalid(format!("word {i} has invalid span [{}, {}]", w.start, w.end)));
        }
        if i > 0 && w.start < words[i - 1].end {
            return Err(invalid(format!("word {i} is unsorted or overlaps its predecessor")));
        }
    }
    Ok(())
}

/// Interleave pause markers between words according to the gap thresholds.
pub fn insert_pause_tokens(words: &[TimedWord], thresholds: &PauseThresholds) -> Result<Vec<Token>> {
    thresholds.validate()?;
    validate_words(words)?;
    let mut out = Vec::with_capacity(words.len() * 2);
    for (i, w) in words.iter().enumerate() {
        if i > 0 {
            let prev_end = words[i - 1].end;
            if let Some(kind) = thresholds.classify(w.start - prev_end) {
                out.push(Token {
                    text: kind.marker().to_string(),
                    start: prev_end,
                    end: w.start,
                    pause: Some(kind),
                });
            }
        }
        out.push(Token { text: w.text.clone(), start: w.start, end: w.end, pause: None });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameFeatures {
    pub frame_hz: f64,
    pub matrix: Tensor2,
}

impl FrameFeatures {
    pub fn new(frame_hz: f64, matrix: Tensor2) -> Result<Self> {
        if !(frame_hz > 0.0 && frame_hz.is_finite()) {
            return Err(invalid("frame_hz must be positive"));
        }
        if !matrix.is_finite() {
            return Err(invalid("frame features contain non-finite values"));
        }
        Ok(Self { frame_hz, matrix })
    }

    pub fn duration(&self) -> f64 {
        self.matrix.rows() as f64 / self.frame_hz
    }
}

/// Half-open frame ranges per word. Ranges are `[floor(start·hz), ceil(end·hz))`;
/// a frame claimed by two words goes to the earlier one. A word left with no
/// frames gets the single frame under its midpoint.
pub fn word_frame_spans(frame_hz: f64, n_frames: usize, words: &[TimedWord]) -> Result<Vec<(usize, usize)>> {
    validate_words(words)?;
    if n_frames == 0 && !words.is_empty() {
        return Err(invalid("no frames to pool"));
    }
    let mut spans = Vec::with_capacity(words.len());
    let mut claimed = 0usize;
    for (i, w) in words.iter().enumerate() {
        let hi_f = (w.end * frame_hz - FRAME_EPS).ceil();
        if hi_f > n_frames as f64 {
            return Err(invalid(format!(
                "word {i} ends at {} s, beyond audio duration {} s",
                w.end,
                n_frames as f64 / frame_hz
            )));
        }
        let lo = ((w.start * frame_hz + FRAME_EPS).floor().max(0.0) as usize).max(claimed);
        let hi = hi_f.max(0.0) as usize;
        if lo < hi {
            spans.push((lo, hi));
            claimed = hi;
        } else {
            let mid = 0.5 * (w.start + w.end) * frame_hz;
            let f = (mid.floor().max(0.0) as usize).min(n_frames - 1);
            spans.push((f, f + 1));
        }
    }
    Ok(spans)
}

/// Mean-pool frame features into one row per word.
pub fn pool_frames_to_words(frames: &FrameFeatures, words: &[TimedWord]) -> Result<Tensor2> {
    let m = &frames.matrix;
    let spans = word_frame_spans(frames.frame_hz, m.rows(), words)?;
    let mut out = Tensor2::zeros(words.len(), m.cols());
    for (i, &(lo, hi)) in spans.iter().enumerate() {
        let row = out.row_mut(i);
        for f in lo..hi {
            for (o, &x) in row.iter_mut().zip(m.row(f)) {
                *o += x;
            }
        }
        let n = (hi - lo) as f64;
        for o in row.iter_mut() {
            *o /= n;
        }
    }
    Ok(out)
}

/// Model input: word-aligned audio rows `A` and token rows `T`, both padded to
/// `max_len` with independent masks. Position `i` in either stream is token `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedSample {
    pub audio: Tensor2,
    pub text: Tensor2,
    pub mask_audio: Vec<bool>,
    pub mask_text: Vec<bool>,
    pub label: Label,
    pub speaker_id: String,
}

impl AlignedSample {
    pub fn len(&self) -> usize {
        self.audio.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.audio.rows() == 0
    }
}

/// Pack tokens into a padded sample. Word tokens take the next pooled audio
/// row; pause tokens get a zero audio row with `mask_audio = false`. Every
/// token takes the text row at its own index.
pub fn build_aligned_sample(
    tokens: &[Token],
    pooled_audio: &Tensor2,
    text_embeddings: &Tensor2,
    max_len: usize,
    label: Label,
    speaker_id: &str,
) -> Result<AlignedSample> {
    if tokens.is_empty() {
        return Err(Error::EmptySequence);
    }
    if max_len == 0 {
        return Err(invalid("max_len must be >= 1"));
    }
    if text_embeddings.rows() != tokens.len() {
        return Err(Error::LengthMismatch { expected: tokens.len(), got: text_embeddings.rows() });
    }
    let n_words = tokens.iter().filter(|t| !t.is_pause()).count();
    if pooled_audio.rows() != n_words {
        return Err(Error::LengthMismatch { expected: n_words, got: pooled_audio.rows() });
    }
    let d = text_embeddings.cols();
    if pooled_audio.cols() != d {
        return Err(Error::DimensionMismatch(format!(
            "audio width {} differs from text width {d}",
            pooled_audio.cols()
        )));
    }
    let mut audio = Tensor2::zeros(max_len, d);
    let mut text = Tensor2::zeros(max_len, d);
    let mut mask_audio = vec![false; max_len];
    let mut mask_text = vec![false; max_len];
    let mut word = 0;
    for (i, tok) in tokens.iter().enumerate().take(max_len) {
        text.row_mut(i).copy_from_slice(text_embeddings.row(i));
        mask_text[i] = true;
        if !tok.is_pause() {
            audio.row_mut(i).copy_from_slice(pooled_audio.row(word));
            mask_audio[i] = true;
            word += 1;
        }
    }
    Ok(AlignedSample { audio, text, mask_audio, mask_text, label, speaker_id: speaker_id.to_string() })
}

/// One recording's transcript as ingested from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub speaker_id: String,
    pub label: Label,
    pub words: Vec<TimedWord>,
}

impl Transcript {
    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignOptions {
    pub thresholds: PauseThresholds,
    pub max_len: usize,
    pub frame_hz: f64,
}

impl Default for AlignOptions {
    fn default() -> Self {
        Self { thresholds: PauseThresholds::default(), max_len: 200, frame_hz: 50.0 }
    }
}

/// Transcript + frames + token embeddings → [`AlignedSample`].
pub fn align_recording(
    transcript: &Transcript,
    frames: &FrameFeatures,
    text_embeddings: &Tensor2,
    opts: &AlignOptions,
) -> Result<AlignedSample> {
    let tokens = insert_pause_tokens(&transcript.words, &opts.thresholds)?;
    let pooled = pool_frames_to_words(frames, &transcript.words)?;
    build_aligned_sample(
        &tokens,
        &pooled,
        text_embeddings,
        opts.max_len,
        transcript.label,
        &transcript.speaker_id,
    )
}

/// Paths of one recording in the ingestion layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingFiles {
    pub transcript: String,
    pub frames: String,
    pub tokens: String,
}

pub fn align_files(dir: &Path, files: &RecordingFiles, opts: &AlignOptions) -> Result<AlignedSample> {
    let transcript = Transcript::read(&dir.join(&files.transcript))?;
    let frames = FrameFeatures::new(opts.frame_hz, read_matrix(&dir.join(&files.frames))?)?;
    let tokens = read_matrix(&dir.join(&files.tokens))?;
    align_recording(&transcript, &frames, &tokens, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn th() -> PauseThresholds {
        PauseThresholds::default()
    }

    /// Words with the given inter-word gaps, each word 0.3 s long.
    fn words_with_gaps(gaps: &[f64]) -> Vec<TimedWord> {
        let mut t = 0.0;
        let mut out = vec![TimedWord::new("w0", t, t + 0.3)];
        t += 0.3;
        for (i, g) in gaps.iter().enumerate() {
            t += g;
            out.push(TimedWord::new(format!("w{}", i + 1), t, t + 0.3));
            t += 0.3;
        }
        out
    }

    fn markers(tokens: &[Token]) -> Vec<PauseKind> {
        tokens.iter().filter_map(|t| t.pause).collect()
    }

    #[test]
    fn short_gap_gets_no_marker() {
        let toks = insert_pause_tokens(&words_with_gaps(&[0.1]), &th()).unwrap();
        assert_eq!(toks.len(), 2);
        assert!(markers(&toks).is_empty());
    }

    #[test]
    fn three_marker_kinds_in_order() {
        let toks = insert_pause_tokens(&words_with_gaps(&[0.7, 1.5, 2.5]), &th()).unwrap();
        assert_eq!(markers(&toks), vec![PauseKind::Comma, PauseKind::Period, PauseKind::Ellipsis]);
        let texts: Vec<&str> = toks.iter().map(|t| t.text.as_str()).collect();
        assert_eq!(texts, vec!["w0", ",", "w1", ".", "w2", "...", "w3"]);
    }

    #[test]
    fn boundaries_are_inclusive_below() {
        let t = th();
        assert_eq!(t.classify(0.5), Some(PauseKind::Comma));
        assert_eq!(t.classify(1.0), Some(PauseKind::Period));
        assert_eq!(t.classify(2.0), Some(PauseKind::Ellipsis));
        assert_eq!(t.classify(0.4999), None);
    }

    #[test]
    fn single_word() {
        let toks = insert_pause_tokens(&[TimedWord::new("hello", 0.0, 1.0)], &th()).unwrap();
        assert_eq!(toks, vec![Token { text: "hello".into(), start: 0.0, end: 1.0, pause: None }]);
    }

    #[test]
    fn unsorted_or_overlapping_rejected() {
        let bad = vec![TimedWord::new("a", 1.0, 2.0), TimedWord::new("b", 0.0, 0.5)];
        assert!(insert_pause_tokens(&bad, &th()).is_err());
        let overlap = vec![TimedWord::new("a", 0.0, 1.0), TimedWord::new("b", 0.5, 1.5)];
        assert!(insert_pause_tokens(&overlap, &th()).is_err());
        let bad_th = PauseThresholds { comma: 1.0, period: 0.5, ellipsis: 2.0 };
        assert!(insert_pause_tokens(&words_with_gaps(&[0.1]), &bad_th).is_err());
    }

    #[test]
    fn insertion_is_idempotent() {
        let toks = insert_pause_tokens(&words_with_gaps(&[0.7, 0.2, 2.5, 1.2]), &th()).unwrap();
        let again: Vec<TimedWord> = toks.iter().map(Token::as_word).collect();
        let toks2 = insert_pause_tokens(&again, &th()).unwrap();
        let spans = |ts: &[Token]| ts.iter().map(|t| (t.text.clone(), t.start, t.end)).collect::<Vec<_>>();
        assert_eq!(spans(&toks), spans(&toks2));
    }

    fn frames(rows: &[f64], hz: f64) -> FrameFeatures {
        let m = Tensor2::from_rows(&rows.iter().map(|&v| vec![v, -v]).collect::<Vec<_>>()).unwrap();
        FrameFeatures::new(hz, m).unwrap()
    }

    #[test]
    fn pool_mean_of_three_frames() {
        let f = frames(&[1.0, 2.0, 3.0], 10.0);
        let out = pool_frames_to_words(&f, &[TimedWord::new("w", 0.0, 0.3)]).unwrap();
        assert_eq!(out.row(0), &[2.0, -2.0]);
    }

    #[test]
    fn pool_single_frame() {
        let f = frames(&[1.0, 2.0, 3.0], 10.0);
        let out = pool_frames_to_words(&f, &[TimedWord::new("w", 0.1, 0.2)]).unwrap();
        assert_eq!(out.row(0), &[2.0, -2.0]);
    }

    #[test]
    fn two_words_match_brute_force_grouping() {
        let vals = [1.0, 4.0, 2.0, 8.0, 5.0, 7.0];
        let f = frames(&vals, 10.0);
        let words = [TimedWord::new("a", 0.0, 0.2), TimedWord::new("b", 0.2, 0.6)];
        let out = pool_frames_to_words(&f, &words).unwrap();
        // brute force: assign each frame by its start time to the word containing it
        let mut sums = [0.0; 2];
        let mut counts = [0.0; 2];
        for (i, v) in vals.iter().enumerate() {
            let t = i as f64 / 10.0;
            let w = if t < 0.2 { 0 } else { 1 };
            sums[w] += v;
            counts[w] += 1.0;
        }
        assert_eq!(out.row(0)[0], sums[0] / counts[0]);
        assert_eq!(out.row(1)[0], sums[1] / counts[1]);
    }

    #[test]
    fn shared_boundary_frame_goes_to_earlier_word() {
        let f = frames(&[1.0, 2.0, 3.0, 4.0], 10.0);
        let words = [TimedWord::new("a", 0.0, 0.15), TimedWord::new("b", 0.15, 0.4)];
        let spans = word_frame_spans(10.0, 4, &words).unwrap();
        assert_eq!(spans, vec![(0, 2), (2, 4)]);
        let out = pool_frames_to_words(&f, &words).unwrap();
        assert_eq!(out.row(0)[0], 1.5);
        assert_eq!(out.row(1)[0], 3.5);
    }

    #[test]
    fn empty_span_uses_midpoint_frame() {
        let words = [TimedWord::new("a", 0.0, 0.2), TimedWord::new("b", 0.2, 0.2)];
        let spans = word_frame_spans(10.0, 4, &words).unwrap();
        assert_eq!(spans[1], (2, 3));
    }

    #[test]
    fn span_beyond_audio_rejected() {
        let f = frames(&[1.0, 2.0], 10.0);
        assert!(pool_frames_to_words(&f, &[TimedWord::new("w", 0.0, 0.35)]).is_err());
    }

    #[test]
    fn pooling_invariant_to_frame_duplication() {
        let vals: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        let f = frames(&vals, 10.0);
        let dup: Vec<f64> = vals.iter().flat_map(|&v| [v, v]).collect();
        let f2 = frames(&dup, 20.0);
        let words = [
            TimedWord::new("a", 0.0, 0.3),
            TimedWord::new("b", 0.4, 0.7),
            TimedWord::new("c", 0.7, 1.2),
        ];
        let a = pool_frames_to_words(&f, &words).unwrap();
        let b = pool_frames_to_words(&f2, &words).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    fn toks_for(n_words: usize, comma_after: Option<usize>) -> Vec<Token> {
        let mut out = Vec::new();
        for i in 0..n_words {
            out.push(Token { text: format!("w{i}"), start: i as f64, end: i as f64 + 0.5, pause: None });
            if comma_after == Some(i) {
                out.push(Token { text: ",".into(), start: i as f64 + 0.5, end: i as f64 + 1.0, pause: Some(PauseKind::Comma) });
            }
        }
        out
    }

    #[test]
    fn build_counts_masks() {
        let toks = toks_for(3, Some(0));
        let audio = Tensor2::from_vec(3, 2, vec![1.0; 6]).unwrap();
        let text = Tensor2::from_vec(4, 2, vec![2.0; 8]).unwrap();
        let s = build_aligned_sample(&toks, &audio, &text, 200, Label::Ad, "spk").unwrap();
        assert_eq!(s.mask_text.iter().filter(|&&m| m).count(), 4);
        assert_eq!(s.mask_audio.iter().filter(|&&m| m).count(), 3);
        assert_eq!(s.audio.rows(), 200);
        assert_eq!(s.text.rows(), 200);
        assert_eq!(s.mask_audio[..4], [true, false, true, true]);
        assert!(s.audio.row(1).iter().all(|&v| v == 0.0));
        for i in 4..200 {
            assert!(s.audio.row(i).iter().chain(s.text.row(i)).all(|&v| v == 0.0));
        }
    }

    #[test]
    fn build_truncates() {
        let toks = toks_for(250, None);
        let audio = Tensor2::from_vec(250, 2, vec![1.0; 500]).unwrap();
        let text = Tensor2::from_vec(250, 2, vec![1.0; 500]).unwrap();
        let s = build_aligned_sample(&toks, &audio, &text, 200, Label::Cn, "spk").unwrap();
        assert_eq!(s.audio.rows(), 200);
        assert!(s.mask_audio.iter().all(|&m| m));
        assert!(s.mask_text.iter().all(|&m| m));
    }

    #[test]
    fn build_errors() {
        let e = build_aligned_sample(&[], &Tensor2::zeros(0, 2), &Tensor2::zeros(0, 2), 10, Label::Cn, "s")
            .unwrap_err();
        assert_eq!(e.to_string(), "empty sequence");
        let toks = toks_for(2, None);
        let audio = Tensor2::zeros(2, 2);
        assert!(build_aligned_sample(&toks, &audio, &Tensor2::zeros(3, 2), 10, Label::Cn, "s").is_err());
        assert!(build_aligned_sample(&toks, &Tensor2::zeros(1, 2), &Tensor2::zeros(2, 2), 10, Label::Cn, "s").is_err());
    }

    #[test]
    fn transcript_json_shape() {
        let json = r#"{"speaker_id":"s01","label":"AD","words":[{"text":"the","start":0.0,"end":0.2}]}"#;
        let t: Transcript = serde_json::from_str(json).unwrap();
        assert_eq!(t.label, Label::Ad);
        assert_eq!(t.words[0].text, "the");
        assert!(serde_json::from_str::<Transcript>(&json.replace("AD", "XX")).is_err());
    }
}
