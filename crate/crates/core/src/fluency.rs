//! Speech-level fluency measures from time-aligned transcripts.
//!
//! Alignment files are CTM-style: `speech_id word start_s duration_s [F]`,
//! with a trailing `F` marking a filled pause, and `speech_id . start_s 0`
//! closing a sentence. Lines starting with `#` or `;;` are comments.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textproc::{count_syllables, Lexicon, Tokenizer};

/// Silent pause threshold in seconds.
pub const DEFAULT_PAUSE_THRESHOLD: f64 = 0.250;

/// Time comparisons are made at this resolution so millisecond time stamps
/// that land exactly on the threshold count consistently.
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedToken {
    pub word: String,
    pub start: f64,
    pub end: f64,
    pub is_filler: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedTranscript {
    pub speech_id: String,
    pub tokens: Vec<AlignedToken>,
    /// Indices of sentence-final tokens, strictly increasing; the last one is
    /// always the last token.
    pub sentence_ends: Vec<usize>,
}

impl AlignedTranscript {
    /// Validates ordering, overlaps and sentence boundaries, closing the final
    /// sentence if needed.
    pub fn new(
        speech_id: impl Into<String>,
        tokens: Vec<AlignedToken>,
        mut sentence_ends: Vec<usize>,
    ) -> Result<Self> {
        let speech_id = speech_id.into();
        for (i, t) in tokens.iter().enumerate() {
            if !(t.start.is_finite() && t.end.is_finite()) || t.start < 0.0 || t.end < t.start {
                return Err(Error::InvalidRecord(format!(
                    "`{speech_id}` token {i} `{}` has invalid times [{}, {}]",
                    t.word, t.start, t.end
                )));
            }
            if i > 0 {
                let prev = &tokens[i - 1];
                if t.start + TIME_EPS < prev.end {
                    return Err(Error::OverlappingTokens {
                        speech: speech_id,
                        index: i,
                        start: t.start,
                        prev_end: prev.end,
                    });
                }
            }
        }
        if tokens.is_empty() {
            return Err(Error::Empty(format!(
                "transcript `{speech_id}` has no tokens"
            )));
        }
        if sentence_ends.windows(2).any(|w| w[0] >= w[1])
            || sentence_ends.iter().any(|&e| e >= tokens.len())
        {
            return Err(Error::InvalidRecord(format!(
                "`{speech_id}` has invalid sentence boundaries"
            )));
        }
        if sentence_ends.last() != Some(&(tokens.len() - 1)) {
            sentence_ends.push(tokens.len() - 1);
        }
        Ok(Self {
            speech_id,
            tokens,
            sentence_ends,
        })
    }

    pub fn span(&self) -> f64 {
        self.tokens.last().unwrap().end - self.tokens[0].start
    }

    /// Sentence index of every token.
    fn sentence_of(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.tokens.len());
        let mut s = 0;
        for i in 0..self.tokens.len() {
            out.push(s);
            if self.sentence_ends.get(s) == Some(&i) {
                s += 1;
            }
        }
        out
    }

    /// Shifts every time stamp by `offset` seconds.
    pub fn shifted(&self, offset: f64) -> Self {
        let mut out = self.clone();
        for t in &mut out.tokens {
            t.start += offset;
            t.end += offset;
        }
        out
    }
}

/// Parses a CTM-style alignment file into one transcript per speech, in
/// order of first appearance. Without any `F` flag in a speech, filler
/// status falls back to the tokenizer's marker set.
pub fn parse_alignment(text: &str, fillers: &Tokenizer) -> Result<Vec<AlignedTranscript>> {
    struct Partial {
        tokens: Vec<AlignedToken>,
        ends: Vec<usize>,
        flagged: bool,
    }
    let mut order: Vec<String> = Vec::new();
    let mut parts: BTreeMap<String, Partial> = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(";;") {
            continue;
        }
        let loc = || format!("alignment line {}", lineno + 1);
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 4 || fields.len() > 5 {
            return Err(Error::parse(
                loc(),
                "expected `speech_id word start duration [F]`",
            ));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::parse(loc(), format!("bad number `{s}`")))
        };
        let (id, word, start, dur) = (fields[0], fields[1], num(fields[2])?, num(fields[3])?);
        let flag = match fields.get(4) {
            None => false,
            Some(&"F") => true,
            Some(other) => return Err(Error::parse(loc(), format!("unknown flag `{other}`"))),
        };
        if !parts.contains_key(id) {
            order.push(id.to_string());
        }
        let p = parts.entry(id.to_string()).or_insert(Partial {
            tokens: Vec::new(),
            ends: Vec::new(),
            flagged: false,
        });
        if word == "." {
            if p.tokens.is_empty() {
                return Err(Error::parse(loc(), "sentence boundary before any token"));
            }
            let last = p.tokens.len() - 1;
            if p.ends.last() != Some(&last) {
                p.ends.push(last);
            }
            continue;
        }
        p.flagged |= flag;
        p.tokens.push(AlignedToken {
            word: word.to_string(),
            start,
            end: start + dur,
            is_filler: flag,
        });
    }
    order
        .into_iter()
        .map(|id| {
            let mut p = parts.remove(&id).unwrap();
            if !p.flagged {
                for t in &mut p.tokens {
                    t.is_filler = fillers.is_filler(&t.word);
                }
            }
            AlignedTranscript::new(id, p.tokens, p.ends)
        })
        .collect()
}

pub fn load_alignment(path: &Path, fillers: &Tokenizer) -> Result<Vec<AlignedTranscript>> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingPath(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    parse_alignment(&text, fillers)
}

/// An inter-token silence at or above the threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SilentPause {
    pub start: f64,
    pub duration: f64,
    /// Index of the token before the gap.
    pub after_token: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PauseConfig {
    pub threshold: f64,
    /// Count gaps exactly at the threshold.
    pub inclusive: bool,
}

impl Default for PauseConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_PAUSE_THRESHOLD,
            inclusive: true,
        }
    }
}

/// Gaps between consecutive tokens (end to next start) at or above the
/// threshold. Silence before the first and after the last token is ignored.
pub fn detect_silent_pauses(transcript: &AlignedTranscript, cfg: PauseConfig) -> Vec<SilentPause> {
    transcript
        .tokens
        .windows(2)
        .enumerate()
        .filter_map(|(i, w)| {
            let gap = w[1].start - w[0].end;
            let hit = if cfg.inclusive {
                gap >= cfg.threshold - TIME_EPS
            } else {
                gap > cfg.threshold + TIME_EPS
            };
            hit.then_some(SilentPause {
                start: w[0].end,
                duration: gap,
                after_token: i,
            })
        })
        .collect()
}

/// The seven speech-level fluency measures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluencyVector {
    pub silent_pauses_per_min: f64,
    pub mean_pause_duration_per_sentence: f64,
    pub words_per_min: f64,
    pub mean_syllable_duration: f64,
    pub syllables_per_min: f64,
    pub filled_pause_count: f64,
    pub filled_pauses_per_100_words: f64,
}

impl FluencyVector {
    pub const DIM: usize = 7;

    pub const NAMES: [&'static str; 7] = [
        "silent_pauses_per_min",
        "mean_pause_duration_per_sentence",
        "words_per_min",
        "mean_syllable_duration",
        "syllables_per_min",
        "filled_pause_count",
        "filled_pauses_per_100_words",
    ];

    pub fn to_array(&self) -> [f64; 7] {
        [
            self.silent_pauses_per_min,
            self.mean_pause_duration_per_sentence,
            self.words_per_min,
            self.mean_syllable_duration,
            self.syllables_per_min,
            self.filled_pause_count,
            self.filled_pauses_per_100_words,
        ]
    }

    pub fn from_array(a: [f64; 7]) -> Self {
        Self {
            silent_pauses_per_min: a[0],
            mean_pause_duration_per_sentence: a[1],
            words_per_min: a[2],
            mean_syllable_duration: a[3],
            syllables_per_min: a[4],
            filled_pause_count: a[5],
            filled_pauses_per_100_words: a[6],
        }
    }
}

/// Intermediate quantities behind a [`FluencyVector`].
#[derive(Debug, Clone, PartialEq)]
pub struct FluencyBreakdown {
    pub span: f64,
    pub pauses: Vec<SilentPause>,
    pub total_pause: f64,
    pub phonation_time: f64,
    pub words: usize,
    pub syllables: u32,
    pub fillers: usize,
    pub vector: FluencyVector,
}

/// Articulation measures use phonation time (span minus silent pauses);
/// filler tokens count toward the span but not toward words or syllables.
pub fn fluency_breakdown(
    transcript: &AlignedTranscript,
    syllables: Option<&Lexicon>,
    cfg: PauseConfig,
) -> Result<FluencyBreakdown> {
    let span = transcript.span();
    if span <= 0.0 {
        return Err(Error::InvalidRecord(format!(
            "transcript `{}` has zero duration",
            transcript.speech_id
        )));
    }
    let words: Vec<&AlignedToken> = transcript.tokens.iter().filter(|t| !t.is_filler).collect();
    if words.is_empty() {
        return Err(Error::Empty(format!(
            "transcript `{}` has no word tokens",
            transcript.speech_id
        )));
    }
    let fillers = transcript.tokens.len() - words.len();
    let syll: u32 = words
        .iter()
        .map(|t| count_syllables(&t.word, syllables))
        .sum();

    let pauses = detect_silent_pauses(transcript, cfg);
    let total_pause: f64 = pauses.iter().map(|p| p.duration).sum();
    let phonation = span - total_pause;

    let sentence_of = transcript.sentence_of();
    let n_sent = transcript.sentence_ends.len();
    let mut per_sentence = vec![0.0; n_sent];
    for p in &pauses {
        let s = sentence_of[p.after_token];
        if sentence_of[p.after_token + 1] == s {
            per_sentence[s] += p.duration;
        }
    }
    let minutes = span / 60.0;
    let vector = FluencyVector {
        silent_pauses_per_min: pauses.len() as f64 / minutes,
        mean_pause_duration_per_sentence: per_sentence.iter().sum::<f64>() / n_sent as f64,
        words_per_min: words.len() as f64 / minutes,
        mean_syllable_duration: phonation / syll as f64,
        syllables_per_min: syll as f64 / (phonation / 60.0),
        filled_pause_count: fillers as f64,
        filled_pauses_per_100_words: 100.0 * fillers as f64 / words.len() as f64,
    };
    Ok(FluencyBreakdown {
        span,
        total_pause,
        phonation_time: phonation,
        words: words.len(),
        syllables: syll,
        fillers,
        pauses,
        vector,
    })
}

pub fn fluency_vector(
    transcript: &AlignedTranscript,
    syllables: Option<&Lexicon>,
) -> Result<FluencyVector> {
    Ok(fluency_breakdown(transcript, syllables, PauseConfig::default())?.vector)
}

/// `fluency.csv`: `speech_id` followed by the seven named measures.
pub fn write_fluency_csv(path: &Path, rows: &BTreeMap<String, FluencyVector>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["speech_id"];
    header.extend(FluencyVector::NAMES);
    w.write_record(&header)?;
    for (id, v) in rows {
        let mut rec = vec![id.clone()];
        rec.extend(v.to_array().iter().map(|x| x.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_fluency_csv(path: &Path) -> Result<BTreeMap<String, FluencyVector>> {
    if !path.is_file() {
        return Err(Error::MissingPath(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    let mut out = BTreeMap::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != 8 {
            return Err(Error::parse(
                format!("{} row {}", path.display(), i + 1),
                "expected 8 columns",
            ));
        }
        let mut a = [0.0; 7];
        for (j, x) in a.iter_mut().enumerate() {
            *x = rec[j + 1].parse().map_err(|_| {
                Error::parse(format!("{} row {}", path.display(), i + 1), "bad number")
            })?;
        }
        out.insert(rec[0].to_string(), FluencyVector::from_array(a));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tok(word: &str, start: f64, end: f64) -> AlignedToken {
        AlignedToken {
            word: word.into(),
            start,
            end,
            is_filler: false,
        }
    }

    fn transcript(times: &[(f64, f64)]) -> AlignedTranscript {
        let tokens = times.iter().map(|&(s, e)| tok("word", s, e)).collect();
        AlignedTranscript::new("s", tokens, vec![]).unwrap()
    }

    #[test]
    fn pause_threshold_is_inclusive() {
        // gaps 0.10, 0.30, 0.25
        let t = transcript(&[(0.0, 1.0), (1.1, 2.0), (2.3, 3.0), (3.25, 4.0)]);
        let p = detect_silent_pauses(&t, PauseConfig::default());
        assert_eq!(p.len(), 2);
        let strict = PauseConfig {
            inclusive: false,
            ..Default::default()
        };
        assert_eq!(detect_silent_pauses(&t, strict).len(), 1);
    }

    #[test]
    fn no_gaps_no_pauses() {
        let t = transcript(&[(0.0, 1.0), (1.0, 2.0), (2.0, 3.0)]);
        assert!(detect_silent_pauses(&t, PauseConfig::default()).is_empty());
        let t = transcript(&[(5.0, 6.0)]);
        assert!(detect_silent_pauses(&t, PauseConfig::default()).is_empty());
    }

    #[test]
    fn overlapping_tokens_rejected() {
        let tokens = vec![tok("a", 0.0, 1.0), tok("b", 0.5, 1.5)];
        assert!(matches!(
            AlignedTranscript::new("s", tokens, vec![]),
            Err(Error::OverlappingTokens { index: 1, .. })
        ));
        assert!(parse_alignment("s a 0 1\ns b 0.5 1\n", &Tokenizer::default()).is_err());
    }

    #[test]
    fn words_per_minute() {
        let times: Vec<(f64, f64)> = (0..100)
            .map(|i| (i as f64 * 0.6, (i + 1) as f64 * 0.6))
            .collect();
        let v = fluency_vector(&transcript(&times), None).unwrap();
        assert!((v.words_per_min - 100.0).abs() < 1e-9);
        assert_eq!(v.silent_pauses_per_min, 0.0);
    }

    #[test]
    fn syllable_division() {
        // "word" has one syllable by the fallback rule: 8 words, 2.0 s of speech
        let times: Vec<(f64, f64)> = (0..8)
            .map(|i| (i as f64 * 0.25, (i + 1) as f64 * 0.25))
            .collect();
        let v = fluency_vector(&transcript(&times), None).unwrap();
        assert_eq!(v.mean_syllable_duration, 0.25);
        assert_eq!(v.syllables_per_min, 240.0);
    }

    #[test]
    fn filler_rates() {
        let mut tokens: Vec<AlignedToken> = (0..153)
            .map(|i| tok("word", i as f64, i as f64 + 1.0))
            .collect();
        for i in [10, 50, 100] {
            tokens[i].is_filler = true;
            tokens[i].word = "um".into();
        }
        let t = AlignedTranscript::new("s", tokens, vec![]).unwrap();
        let v = fluency_vector(&t, None).unwrap();
        assert_eq!(v.filled_pause_count, 3.0);
        assert_eq!(v.filled_pauses_per_100_words, 2.0);
    }

    #[test]
    fn zero_span_rejected() {
        let t = transcript(&[(1.0, 1.0)]);
        assert!(fluency_vector(&t, None).is_err());
    }

    #[test]
    fn marker_fallback_only_without_flags() {
        let tok = Tokenizer::default();
        let t = parse_alignment("s um 0 0.2\ns yes 0.3 0.2\n", &tok).unwrap();
        assert!(t[0].tokens[0].is_filler);
        let t = parse_alignment("s um 0 0.2\ns er 0.3 0.2 F\ns yes 0.6 0.2\n", &tok).unwrap();
        assert!(!t[0].tokens[0].is_filler);
        assert!(t[0].tokens[1].is_filler);
    }

    #[test]
    fn sentence_boundaries_parsed() {
        let text = "s a 0 0.5\ns . 0.5 0\ns b 1.0 0.5\ns c 1.5 0.5\n";
        let t = &parse_alignment(text, &Tokenizer::default()).unwrap()[0];
        assert_eq!(t.sentence_ends, vec![0, 2]);
    }

    #[test]
    fn only_within_sentence_pauses_feed_sentence_mean() {
        // sentence 1: a [gap .5] b ; sentence 2: c [gap 1.0] d ; gap .4 between sentences
        let text = "s a 0 1\ns b 1.5 1\ns . 2.5 0\ns c 2.9 1\ns d 4.9 1\n";
        let t = &parse_alignment(text, &Tokenizer::default()).unwrap()[0];
        let v = fluency_vector(t, None).unwrap();
        assert!((v.mean_pause_duration_per_sentence - (0.5 + 1.0) / 2.0).abs() < 1e-12);
        assert!((v.silent_pauses_per_min - 3.0 / (5.9 / 60.0)).abs() < 1e-9);
    }
}
