use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// The five registers of the bigram frequency tables.
pub const REGISTERS: [&str; 5] = ["spoken", "fiction", "news", "magazine", "academic"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum LexiconKind {
    Wordlist,
    CategoryMap,
    FrequencyTable,
    BigramTable,
    PrevalenceTable,
    SyllableTable,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LexiconEntries {
    Values(HashMap<String, f64>),
    /// category -> (exact words, prefixes from `word*` entries)
    Categories(BTreeMap<String, (HashSet<String>, Vec<String>)>),
}

/// An immutable, case-folded lookup table.
#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    pub name: String,
    pub kind: LexiconKind,
    pub entries: LexiconEntries,
}

impl Lexicon {
    /// Parses `key<TAB>value` lines (`category<TAB>word` for category maps,
    /// bare words for wordlists). Lines starting with `#` are comments.
    pub fn parse(name: &str, kind: LexiconKind, text: &str) -> Result<Self> {
        let loc = |i: usize| format!("lexicon `{name}` line {}", i + 1);
        let entries = match kind {
            LexiconKind::CategoryMap => {
                let mut cats: BTreeMap<String, (HashSet<String>, Vec<String>)> = BTreeMap::new();
                for (i, line) in content_lines(text) {
                    let (cat, word) = line
                        .split_once('\t')
                        .ok_or_else(|| Error::parse(loc(i), "expected category<TAB>word"))?;
                    let word = word.trim().to_lowercase();
                    let entry = cats.entry(cat.trim().to_lowercase()).or_default();
                    match word.strip_suffix('*') {
                        Some(prefix) => entry.1.push(prefix.to_string()),
                        None => {
                            entry.0.insert(word);
                        }
                    }
                }
                for (_, prefixes) in cats.values_mut() {
                    prefixes.sort();
                    prefixes.dedup();
                }
                LexiconEntries::Categories(cats)
            }
            _ => {
                let mut map = HashMap::new();
                for (i, line) in content_lines(text) {
                    let (key, value) = match (kind, line.split_once('\t')) {
                        (_, Some((k, v))) => {
                            let v: f64 = v.trim().parse().map_err(|_| {
                                Error::parse(loc(i), format!("bad value `{}`", v.trim()))
                            })?;
                            (k, v)
                        }
                        (LexiconKind::Wordlist, None) => (line, 1.0),
                        (_, None) => return Err(Error::parse(loc(i), "expected key<TAB>value")),
                    };
                    if !value.is_finite() || value < 0.0 {
                        return Err(Error::parse(
                            loc(i),
                            format!("value {value} must be finite and >= 0"),
                        ));
                    }
                    if kind == LexiconKind::SyllableTable && (value < 1.0 || value.fract() != 0.0) {
                        return Err(Error::parse(
                            loc(i),
                            "syllable counts must be positive integers",
                        ));
                    }
                    let key = key
                        .split_whitespace()
                        .collect::<Vec<_>>()
                        .join(" ")
                        .to_lowercase();
                    map.insert(key, value);
                }
                LexiconEntries::Values(map)
            }
        };
        Ok(Self {
            name: name.to_string(),
            kind,
            entries,
        })
    }

    pub fn value(&self, key: &str) -> Option<f64> {
        match &self.entries {
            LexiconEntries::Values(m) => m.get(&key.to_lowercase()).copied(),
            LexiconEntries::Categories(_) => None,
        }
    }

    pub fn contains(&self, key: &str) -> bool {
        match &self.entries {
            LexiconEntries::Values(m) => m.contains_key(&key.to_lowercase()),
            LexiconEntries::Categories(c) => {
                let key = key.to_lowercase();
                c.values().any(|(w, p)| matches_category(&key, w, p))
            }
        }
    }

    /// Category names of a category map, sorted.
    pub fn categories(&self) -> Vec<String> {
        match &self.entries {
            LexiconEntries::Categories(c) => c.keys().cloned().collect(),
            LexiconEntries::Values(_) => Vec::new(),
        }
    }

    pub fn in_category(&self, category: &str, word: &str) -> bool {
        match &self.entries {
            LexiconEntries::Categories(c) => c
                .get(category)
                .is_some_and(|(w, p)| matches_category(&word.to_lowercase(), w, p)),
            LexiconEntries::Values(_) => false,
        }
    }

    /// The `k` highest-valued keys (ties broken alphabetically).
    pub fn top_keys(&self, k: usize) -> HashSet<String> {
        match &self.entries {
            LexiconEntries::Values(m) => {
                let mut v: Vec<(&String, &f64)> = m.iter().collect();
                v.sort_by(|a, b| b.1.total_cmp(a.1).then_with(|| a.0.cmp(b.0)));
                v.into_iter().take(k).map(|(key, _)| key.clone()).collect()
            }
            LexiconEntries::Categories(_) => HashSet::new(),
        }
    }

    pub fn len(&self) -> usize {
        match &self.entries {
            LexiconEntries::Values(m) => m.len(),
            LexiconEntries::Categories(c) => c.values().map(|(w, p)| w.len() + p.len()).sum(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn feed_hash(&self, h: &mut Sha256) {
        h.update(self.name.as_bytes());
        h.update(format!("{:?}", self.kind).as_bytes());
        match &self.entries {
            LexiconEntries::Values(m) => {
                let sorted: BTreeMap<&String, &f64> = m.iter().collect();
                for (k, v) in sorted {
                    h.update(k.as_bytes());
                    h.update(v.to_le_bytes());
                }
            }
            LexiconEntries::Categories(c) => {
                for (cat, (words, prefixes)) in c {
                    h.update(cat.as_bytes());
                    let words: BTreeSet<&String> = words.iter().collect();
                    for w in words {
                        h.update(w.as_bytes());
                    }
                    for p in prefixes {
                        h.update(p.as_bytes());
                        h.update(b"*");
                    }
                }
            }
        }
    }
}

fn matches_category(word: &str, exact: &HashSet<String>, prefixes: &[String]) -> bool {
    exact.contains(word) || prefixes.iter().any(|p| word.starts_with(p.as_str()))
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
}

/// Named lexicons consumed by the feature registry and fluency module.
///
/// File names map to lexicons: `syllables.tsv`, `frequency.tsv`,
/// `prevalence.tsv`, `liwc.tsv`, `subordinators.txt`, `coordinators.txt`
/// and `bigram_<register>.tsv`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LexiconSet {
    lexicons: BTreeMap<String, Lexicon>,
}

const BUNDLED: [(&str, LexiconKind, &str); 12] = [
    (
        "syllables",
        LexiconKind::SyllableTable,
        include_str!("../../data/lexicons/syllables.tsv"),
    ),
    (
        "frequency",
        LexiconKind::FrequencyTable,
        include_str!("../../data/lexicons/frequency.tsv"),
    ),
    (
        "prevalence",
        LexiconKind::PrevalenceTable,
        include_str!("../../data/lexicons/prevalence.tsv"),
    ),
    (
        "liwc",
        LexiconKind::CategoryMap,
        include_str!("../../data/lexicons/liwc.tsv"),
    ),
    (
        "subordinators",
        LexiconKind::Wordlist,
        include_str!("../../data/lexicons/subordinators.txt"),
    ),
    (
        "coordinators",
        LexiconKind::Wordlist,
        include_str!("../../data/lexicons/coordinators.txt"),
    ),
    (
        "bigram_spoken",
        LexiconKind::BigramTable,
        include_str!("../../data/lexicons/bigram_spoken.tsv"),
    ),
    (
        "bigram_fiction",
        LexiconKind::BigramTable,
        include_str!("../../data/lexicons/bigram_fiction.tsv"),
    ),
    (
        "bigram_news",
        LexiconKind::BigramTable,
        include_str!("../../data/lexicons/bigram_news.tsv"),
    ),
    (
        "bigram_magazine",
        LexiconKind::BigramTable,
        include_str!("../../data/lexicons/bigram_magazine.tsv"),
    ),
    (
        "bigram_academic",
        LexiconKind::BigramTable,
        include_str!("../../data/lexicons/bigram_academic.tsv"),
    ),
    ("fillers", LexiconKind::Wordlist, "uh\num\ner\nhm\nmm\n"),
];

impl LexiconSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// The small lexicons shipped with the crate.
    pub fn bundled() -> Self {
        let mut set = Self::new();
        for (name, kind, text) in BUNDLED {
            set.insert(Lexicon::parse(name, kind, text).expect("bundled lexicon parses"));
        }
        set
    }

    /// Bundled lexicons, each replaced by a same-named file in `dir` if one
    /// exists there.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::MissingPath(dir.to_path_buf()));
        }
        let mut set = Self::bundled();
        for (name, kind, _) in BUNDLED {
            let ext = if kind == LexiconKind::Wordlist {
                "txt"
            } else {
                "tsv"
            };
            let path = dir.join(format!("{name}.{ext}"));
            if path.is_file() {
                let text = std::fs::read_to_string(&path)?;
                set.insert(Lexicon::parse(name, kind, &text)?);
            }
        }
        Ok(set)
    }

    pub fn insert(&mut self, lex: Lexicon) {
        self.lexicons.insert(lex.name.clone(), lex);
    }

    pub fn get(&self, name: &str) -> Option<&Lexicon> {
        self.lexicons.get(name)
    }

    pub fn require(&self, name: &str) -> Result<&Lexicon> {
        self.get(name)
            .ok_or_else(|| Error::MissingLexicon(name.to_string()))
    }

    pub fn remove(&mut self, name: &str) -> Option<Lexicon> {
        self.lexicons.remove(name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.lexicons.keys().map(String::as_str).collect()
    }

    /// SHA-256 over all lexicon contents in name order.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for lex in self.lexicons.values() {
            lex.feed_hash(&mut h);
        }
        hex::encode(h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_values_and_comments() {
        let lex = Lexicon::parse(
            "f",
            LexiconKind::FrequencyTable,
            "# header\nThe\t100\nof\t50.5\n\n",
        )
        .unwrap();
        assert_eq!(lex.value("the"), Some(100.0));
        assert_eq!(lex.value("THE"), Some(100.0));
        assert_eq!(lex.value("Of"), Some(50.5));
        assert_eq!(lex.len(), 2);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(Lexicon::parse("f", LexiconKind::FrequencyTable, "a\t-1").is_err());
        assert!(Lexicon::parse("f", LexiconKind::FrequencyTable, "a\tNaN").is_err());
        assert!(Lexicon::parse("f", LexiconKind::FrequencyTable, "a").is_err());
        assert!(Lexicon::parse("s", LexiconKind::SyllableTable, "a\t1.5").is_err());
    }

    #[test]
    fn category_map_with_prefixes() {
        let lex = Lexicon::parse(
            "liwc",
            LexiconKind::CategoryMap,
            "posemo\thapp*\nposemo\tGood\nnegemo\tbad",
        )
        .unwrap();
        assert!(lex.in_category("posemo", "Happiness"));
        assert!(lex.in_category("posemo", "good"));
        assert!(!lex.in_category("posemo", "bad"));
        assert_eq!(lex.categories(), vec!["negemo", "posemo"]);
    }

    #[test]
    fn bundled_set_is_complete() {
        let set = LexiconSet::bundled();
        for r in REGISTERS {
            assert!(set
                .get(&format!("bigram_{r}"))
                .is_some_and(|l| !l.is_empty()));
        }
        assert_eq!(
            set.require("syllables").unwrap().value("beautiful"),
            Some(3.0)
        );
        assert!(matches!(set.require("nope"), Err(Error::MissingLexicon(n)) if n == "nope"));
        assert_eq!(set.content_hash(), LexiconSet::bundled().content_hash());
    }

    #[test]
    fn top_keys_orders_by_value() {
        let lex = Lexicon::parse("f", LexiconKind::FrequencyTable, "a\t1\nb\t3\nc\t2").unwrap();
        let top = lex.top_keys(2);
        assert!(top.contains("b") && top.contains("c") && !top.contains("a"));
    }
}
