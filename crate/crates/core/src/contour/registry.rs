use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use flate2::write::DeflateEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Window;
use crate::error::{Error, Result};
use crate::textproc::{LexiconSet, REGISTERS};

/// Feature groups used for contours and for group-level explanations.
/// `Fluency` only ever labels the speech-level fluency vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureGroup {
    Syntactic,
    Lexical,
    Ngram,
    Infotheo,
    Liwc,
    Prevalence,
    Fluency,
}

impl FeatureGroup {
    pub const LINGUISTIC: [FeatureGroup; 6] = [
        FeatureGroup::Syntactic,
        FeatureGroup::Lexical,
        FeatureGroup::Ngram,
        FeatureGroup::Infotheo,
        FeatureGroup::Liwc,
        FeatureGroup::Prevalence,
    ];

    pub const ALL: [FeatureGroup; 7] = [
        FeatureGroup::Syntactic,
        FeatureGroup::Lexical,
        FeatureGroup::Ngram,
        FeatureGroup::Infotheo,
        FeatureGroup::Liwc,
        FeatureGroup::Prevalence,
        FeatureGroup::Fluency,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureGroup::Syntactic => "syntactic",
            FeatureGroup::Lexical => "lexical",
            FeatureGroup::Ngram => "ngram",
            FeatureGroup::Infotheo => "infotheo",
            FeatureGroup::Liwc => "liwc",
            FeatureGroup::Prevalence => "prevalence",
            FeatureGroup::Fluency => "fluency",
        }
    }

    /// Short label used in the importance table.
    pub fn display_name(self) -> &'static str {
        match self {
            FeatureGroup::Syntactic => "Syntax",
            FeatureGroup::Lexical => "Lexical",
            FeatureGroup::Ngram => "N-gram",
            FeatureGroup::Infotheo => "Inf. Th",
            FeatureGroup::Liwc => "LIWC",
            FeatureGroup::Prevalence => "Preval.",
            FeatureGroup::Fluency => "Fluency",
        }
    }
}

impl fmt::Display for FeatureGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FeatureGroup::ALL
            .iter()
            .copied()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown feature group `{s}`")))
    }
}

pub type Extractor = Arc<dyn Fn(&Window<'_>, &LexiconSet) -> f64 + Send + Sync>;

/// A named window-level measurement.
#[derive(Clone)]
pub struct FeatureSpec {
    pub id: String,
    pub group: FeatureGroup,
    /// Finer breakdown for median-split reporting, e.g. `ngram:spoken`.
    pub subgroup: String,
    pub extractor: Extractor,
}

impl FeatureSpec {
    pub fn new(
        id: impl Into<String>,
        group: FeatureGroup,
        f: impl Fn(&Window<'_>, &LexiconSet) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            id: id.into(),
            group,
            subgroup: group.name().to_string(),
            extractor: Arc::new(f),
        }
    }

    pub fn with_subgroup(mut self, subgroup: impl Into<String>) -> Self {
        self.subgroup = subgroup.into();
        self
    }

    pub fn info(&self) -> FeatureInfo {
        FeatureInfo {
            id: self.id.clone(),
            group: self.group,
            subgroup: self.subgroup.clone(),
        }
    }
}

impl fmt::Debug for FeatureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FeatureSpec")
            .field("id", &self.id)
            .field("group", &self.group)
            .field("subgroup", &self.subgroup)
            .finish()
    }
}

/// Serializable description of one contour column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureInfo {
    pub id: String,
    pub group: FeatureGroup,
    pub subgroup: String,
}

/// Ordered feature registry; column order of every contour is registration
/// order.
#[derive(Debug, Clone)]
pub struct Registry {
    specs: Vec<FeatureSpec>,
    lexicons: Arc<LexiconSet>,
}

impl Registry {
    pub fn new(lexicons: Arc<LexiconSet>) -> Self {
        Self {
            specs: Vec::new(),
            lexicons,
        }
    }

    pub fn register(&mut self, spec: FeatureSpec) -> Result<()> {
        if self.specs.iter().any(|s| s.id == spec.id) {
            return Err(Error::InvalidArgument(format!(
                "feature `{}` registered twice",
                spec.id
            )));
        }
        self.specs.push(spec);
        Ok(())
    }

    pub fn specs(&self) -> &[FeatureSpec] {
        &self.specs
    }

    pub fn lexicons(&self) -> &LexiconSet {
        &self.lexicons
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn feature_ids(&self) -> Vec<String> {
        self.specs.iter().map(|s| s.id.clone()).collect()
    }

    pub fn infos(&self) -> Vec<FeatureInfo> {
        self.specs.iter().map(FeatureSpec::info).collect()
    }

    /// Identifies the feature inventory and the lexicons behind it.
    pub fn hash(&self) -> String {
        registry_hash(&self.infos(), &self.lexicons.content_hash())
    }

    /// Same features in a different order; `order[i]` is the old index of the
    /// new column `i`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            specs: order.iter().map(|&i| self.specs[i].clone()).collect(),
            lexicons: self.lexicons.clone(),
        }
    }
}

pub fn registry_hash(infos: &[FeatureInfo], lexicon_hash: &str) -> String {
    let mut h = Sha256::new();
    for info in infos {
        h.update(info.id.as_bytes());
        h.update([0]);
        h.update(info.group.name().as_bytes());
        h.update([0]);
        h.update(info.subgroup.as_bytes());
        h.update([1]);
    }
    h.update(lexicon_hash.as_bytes());
    hex::encode(h.finalize())
}

/// Top-K size of the reference frequency list for lexical sophistication.
pub const SOPHISTICATION_TOP_K: usize = 2000;

/// The built-in feature inventory over the six linguistic groups.
pub fn default_registry(lexicons: Arc<LexiconSet>) -> Result<Registry> {
    for name in [
        "frequency",
        "prevalence",
        "liwc",
        "subordinators",
        "coordinators",
    ] {
        lexicons.require(name)?;
    }
    for r in REGISTERS {
        lexicons.require(&format!("bigram_{r}"))?;
    }
    let mut reg = Registry::new(lexicons.clone());
    use FeatureGroup::*;

    reg.register(FeatureSpec::new(
        "syn_mean_sentence_length",
        Syntactic,
        |w, _| ratio(w.word_count() as f64, w.sentences.len() as f64),
    ))?;
    reg.register(FeatureSpec::new(
        "syn_subordination",
        Syntactic,
        |w, lex| {
            let subs = lex.get("subordinators").expect("checked");
            let total: f64 = w
                .sentences
                .iter()
                .map(|s| match s.metrics.get("subordinate_clauses") {
                    Some(&v) => v,
                    None => s.words().filter(|t| subs.contains(&t.lower)).count() as f64,
                })
                .sum();
            ratio(total, w.sentences.len() as f64)
        },
    ))?;
    reg.register(FeatureSpec::new("syn_coordination", Syntactic, |w, lex| {
        let coord = lex.get("coordinators").expect("checked");
        let hits = w.words().filter(|t| coord.contains(&t.lower)).count() as f64;
        ratio(hits, w.sentences.len() as f64)
    }))?;
    reg.register(FeatureSpec::new(
        "syn_commas_per_sentence",
        Syntactic,
        |w, _| {
            let commas = w
                .sentences
                .iter()
                .flat_map(|s| &s.tokens)
                .filter(|t| !t.is_word && t.surface == ",")
                .count() as f64;
            ratio(commas, w.sentences.len() as f64)
        },
    ))?;

    reg.register(FeatureSpec::new("lex_ttr", Lexical, |w, _| {
        let (types, tokens) = types_tokens(w);
        ratio(types, tokens)
    }))?;
    reg.register(FeatureSpec::new("lex_cttr", Lexical, |w, _| {
        let (types, tokens) = types_tokens(w);
        corrected_ttr(types, tokens)
    }))?;
    reg.register(FeatureSpec::new("lex_mean_word_length", Lexical, |w, _| {
        let chars: usize = w.words().map(|t| t.lower.chars().count()).sum();
        ratio(chars as f64, w.word_count() as f64)
    }))?;
    let top: Arc<HashSet<String>> = Arc::new(
        lexicons
            .require("frequency")?
            .top_keys(SOPHISTICATION_TOP_K),
    );
    reg.register(FeatureSpec::new(
        "lex_sophistication",
        Lexical,
        move |w, _| {
            let rare = w.words().filter(|t| !top.contains(&t.lower)).count() as f64;
            ratio(rare, w.word_count() as f64)
        },
    ))?;

    for register in REGISTERS {
        let name = format!("bigram_{register}");
        reg.register(
            FeatureSpec::new(format!("ngram_{register}"), Ngram, move |w, lex| {
                bigram_score(w, lex.get(&name).expect("checked"))
            })
            .with_subgroup(format!("ngram:{register}")),
        )?;
    }

    reg.register(FeatureSpec::new("info_entropy", Infotheo, |w, _| {
        unigram_entropy(w.words().map(|t| t.lower.as_str()))
    }))?;
    reg.register(FeatureSpec::new(
        "info_compression_ratio",
        Infotheo,
        |w, _| compression_ratio(&w.text()),
    ))?;

    for cat in lexicons.require("liwc")?.categories() {
        let c = cat.clone();
        reg.register(
            FeatureSpec::new(format!("liwc_{cat}"), Liwc, move |w, lex| {
                let liwc = lex.get("liwc").expect("checked");
                let hits = w.words().filter(|t| liwc.in_category(&c, &t.lower)).count() as f64;
                ratio(hits, w.word_count() as f64)
            })
            .with_subgroup(format!("liwc:{cat}")),
        )?;
    }

    reg.register(FeatureSpec::new("prev_mean", Prevalence, |w, lex| {
        let table = lex.get("prevalence").expect("checked");
        let found: Vec<f64> = w.words().filter_map(|t| table.value(&t.lower)).collect();
        ratio(found.iter().sum(), found.len() as f64)
    }))?;
    reg.register(FeatureSpec::new("prev_coverage", Prevalence, |w, lex| {
        let table = lex.get("prevalence").expect("checked");
        let found = w.words().filter(|t| table.contains(&t.lower)).count() as f64;
        ratio(found, w.word_count() as f64)
    }))?;

    Ok(reg)
}

/// `num / den`, or 0 for an empty denominator.
fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

fn types_tokens(w: &Window<'_>) -> (f64, f64) {
    let mut types = BTreeSet::new();
    let mut tokens = 0usize;
    for t in w.words() {
        types.insert(t.lower.as_str());
        tokens += 1;
    }
    (types.len() as f64, tokens as f64)
}

/// Types over the square root of twice the token count.
pub fn corrected_ttr(types: f64, tokens: f64) -> f64 {
    if tokens > 0.0 {
        types / (2.0 * tokens).sqrt()
    } else {
        0.0
    }
}

/// Shannon entropy in bits of the word unigram distribution.
pub fn unigram_entropy<'a>(words: impl Iterator<Item = &'a str>) -> f64 {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut n = 0usize;
    for w in words {
        *counts.entry(w).or_default() += 1;
        n += 1;
    }
    if n == 0 {
        return 0.0;
    }
    let mut c: Vec<usize> = counts.into_values().collect();
    c.sort_unstable();
    let nf = n as f64;
    let h: f64 = c
        .into_iter()
        .map(|k| {
            let p = k as f64 / nf;
            -p * p.log2()
        })
        .sum();
    h.max(0.0)
}

/// Deflate-compressed size over raw size of the UTF-8 text.
pub fn compression_ratio(text: &str) -> f64 {
    if text.is_empty() {
        return 0.0;
    }
    let mut enc = DeflateEncoder::new(Vec::new(), Compression::default());
    enc.write_all(text.as_bytes()).expect("in-memory write");
    let compressed = enc.finish().expect("in-memory write");
    compressed.len() as f64 / text.len() as f64
}

/// Mean of `log10(freq + 1)` over within-sentence word bigrams; bigrams not
/// in the table contribute 0.
fn bigram_score(w: &Window<'_>, table: &crate::textproc::Lexicon) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for s in w.sentences {
        let words: Vec<&str> = s.words().map(|t| t.lower.as_str()).collect();
        for pair in words.windows(2) {
            let key = format!("{} {}", pair[0], pair[1]);
            if let Some(f) = table.value(&key) {
                total += (f + 1.0).log10();
            }
            count += 1;
        }
    }
    ratio(total, count as f64)
}
