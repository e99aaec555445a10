//! Speeches, ratings and auxiliary talks: ingestion, tallies, median
//! binarization, label statistics, inter-rater reliability and folds.

mod category;
mod folds;
mod io;
mod kappa;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::BufRead;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use category::{Category, Topic};
pub use folds::{make_folds, FoldPlan};
pub use io::{
    read_count_table, read_label_stats, read_topics, write_count_table, write_label_stats,
    write_topics,
};
pub use kappa::{cohen_kappa, interrater_kappa, KappaReport};

pub const NUM_CATEGORIES: usize = 14;

/// One crowdsourced speech as read from `speeches.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Speech {
    pub id: String,
    pub topic: Topic,
    pub sentences: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alignment: Option<PathBuf>,
    /// Optional externally computed per-sentence parse metrics, aligned with
    /// `sentences` (e.g. `subordinate_clauses`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotations: Option<Vec<BTreeMap<String, f64>>>,
}

/// One rater's label set for one speech.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub rater_id: String,
    pub speech_id: String,
    pub labels: Vec<String>,
}

impl RatingRecord {
    /// Validated label set: 1 to 3 distinct known categories.
    pub fn label_set(&self) -> Result<BTreeSet<Category>> {
        let mut set = BTreeSet::new();
        for l in &self.labels {
            set.insert(l.parse::<Category>()?);
        }
        if set.is_empty() || set.len() > 3 {
            return Err(Error::InvalidRecord(format!(
                "rater `{}` on speech `{}` gave {} labels; expected 1 to 3",
                self.rater_id,
                self.speech_id,
                set.len()
            )));
        }
        Ok(set)
    }
}

/// A single viewer vote on an auxiliary talk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuxVote {
    pub labels: Vec<String>,
    /// Only one label was chosen; the vote then counts three times.
    #[serde(default)]
    pub single: bool,
}

/// An auxiliary (pretraining) talk as read from `aux_talks.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxTalk {
    pub id: String,
    pub sentences: Vec<String>,
    pub views: u64,
    #[serde(default)]
    pub votes: Vec<AuxVote>,
}

/// Per-speech, per-category counts. Rows follow `ids`; columns follow
/// [`Category::ALL`].
#[derive(Debug, Clone, PartialEq)]
pub struct CountTable {
    ids: Vec<String>,
    rows: Vec<[f64; NUM_CATEGORIES]>,
}

impl CountTable {
    pub fn new(ids: Vec<String>, rows: Vec<[f64; NUM_CATEGORIES]>) -> Result<Self> {
        if ids.len() != rows.len() {
            return Err(Error::InvalidArgument(format!(
                "{} ids but {} count rows",
                ids.len(),
                rows.len()
            )));
        }
        let unique: BTreeSet<&String> = ids.iter().collect();
        if unique.len() != ids.len() {
            return Err(Error::InvalidArgument(
                "duplicate speech ids in count table".into(),
            ));
        }
        Ok(Self { ids, rows })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn rows(&self) -> &[[f64; NUM_CATEGORIES]] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn column(&self, category: Category) -> Vec<f64> {
        let j = category.index();
        self.rows.iter().map(|r| r[j]).collect()
    }

    pub fn get(&self, id: &str, category: Category) -> Option<f64> {
        let i = self.ids.iter().position(|x| x == id)?;
        Some(self.rows[i][category.index()])
    }
}

/// Counts together with their median-binarized labels.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingSet {
    pub counts: CountTable,
    pub binary: Vec<[u8; NUM_CATEGORIES]>,
    pub medians: [f64; NUM_CATEGORIES],
}

impl RatingSet {
    pub fn labels(&self, category: Category) -> Vec<u8> {
        let j = category.index();
        self.binary.iter().map(|r| r[j]).collect()
    }

    pub fn label_of(&self, id: &str, category: Category) -> Option<u8> {
        let i = self.counts.ids.iter().position(|x| x == id)?;
        Some(self.binary[i][category.index()])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelStats {
    pub category: Category,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

/// Reads one JSON object per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingPath(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let mut out = Vec::new();
    for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| {
            Error::parse(format!("{}:{}", path.display(), lineno + 1), e.to_string())
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn load_speeches(path: &Path) -> Result<Vec<Speech>> {
    let speeches: Vec<Speech> = read_jsonl(path)?;
    validate_speeches(&speeches)?;
    Ok(speeches)
}

pub fn validate_speeches(speeches: &[Speech]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for s in speeches {
        if !seen.insert(s.id.as_str()) {
            return Err(Error::InvalidRecord(format!(
                "duplicate speech id `{}`",
                s.id
            )));
        }
        if s.sentences.is_empty() {
            return Err(Error::InvalidRecord(format!(
                "speech `{}` has no sentences",
                s.id
            )));
        }
        if let Some(ann) = &s.annotations {
            if ann.len() != s.sentences.len() {
                return Err(Error::InvalidRecord(format!(
                    "speech `{}` has {} annotations for {} sentences",
                    s.id,
                    ann.len(),
                    s.sentences.len()
                )));
            }
        }
    }
    Ok(())
}

pub fn load_ratings(path: &Path) -> Result<Vec<RatingRecord>> {
    read_jsonl(path)
}

pub fn load_aux_talks(path: &Path) -> Result<Vec<AuxTalk>> {
    let talks: Vec<AuxTalk> = read_jsonl(path)?;
    let mut seen = BTreeSet::new();
    for t in &talks {
        if !seen.insert(t.id.as_str()) {
            return Err(Error::InvalidRecord(format!(
                "duplicate talk id `{}`",
                t.id
            )));
        }
    }
    Ok(talks)
}

/// Counts how many rating records on each speech include each category.
///
/// Every known speech gets a row, in the order given, even if unrated.
pub fn tally_ratings(speech_ids: &[String], records: &[RatingRecord]) -> Result<CountTable> {
    let index: HashMap<&str, usize> = speech_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let mut rows = vec![[0.0; NUM_CATEGORIES]; speech_ids.len()];
    for r in records {
        let labels = r.label_set()?;
        let &i = index
            .get(r.speech_id.as_str())
            .ok_or_else(|| Error::UnknownSpeech(r.speech_id.clone()))?;
        for c in labels {
            rows[i][c.index()] += 1.0;
        }
    }
    CountTable::new(speech_ids.to_vec(), rows)
}

/// Per-million-view normalized vote counts for auxiliary talks.
///
/// A vote carrying a single label contributes three to that label.
pub fn tally_aux(talks: &[AuxTalk]) -> Result<CountTable> {
    let mut rows = Vec::with_capacity(talks.len());
    for t in talks {
        if t.views == 0 {
            return Err(Error::ZeroViews(t.id.clone()));
        }
        let mut effective = [0.0; NUM_CATEGORIES];
        for v in &t.votes {
            let mut labels = BTreeSet::new();
            for l in &v.labels {
                labels.insert(l.parse::<Category>()?);
            }
            if labels.is_empty() || labels.len() > 3 {
                return Err(Error::InvalidRecord(format!(
                    "vote on talk `{}` has {} labels; expected 1 to 3",
                    t.id,
                    labels.len()
                )));
            }
            let weight = if v.single && labels.len() == 1 {
                3.0
            } else {
                1.0
            };
            for c in labels {
                effective[c.index()] += weight;
            }
        }
        let millions = t.views as f64 / 1_000_000.0;
        for x in effective.iter_mut() {
            *x /= millions;
        }
        rows.push(effective);
    }
    CountTable::new(talks.iter().map(|t| t.id.clone()).collect(), rows)
}

/// Median of a non-empty slice; even lengths average the two middle values.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty slice");
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Labels each (speech, category) 1 when its count is at or above the
/// category median over all speeches in the table.
pub fn binarize_by_median(counts: &CountTable) -> Result<RatingSet> {
    if counts.is_empty() {
        return Err(Error::Empty("cannot binarize an empty count table".into()));
    }
    let mut medians = [0.0; NUM_CATEGORIES];
    for c in Category::ALL {
        medians[c.index()] = median(&counts.column(c));
    }
    let binary = counts
        .rows
        .iter()
        .map(|row| {
            let mut b = [0u8; NUM_CATEGORIES];
            for j in 0..NUM_CATEGORIES {
                b[j] = u8::from(row[j] >= medians[j]);
            }
            b
        })
        .collect();
    Ok(RatingSet {
        counts: counts.clone(),
        binary,
        medians,
    })
}

/// Minimum, maximum and mean count per category.
pub fn label_stats(counts: &CountTable) -> Result<Vec<LabelStats>> {
    if counts.is_empty() {
        return Err(Error::Empty(
            "label statistics need at least one speech".into(),
        ));
    }
    Ok(Category::ALL
        .iter()
        .map(|&c| {
            let col = counts.column(c);
            let min = col.iter().copied().fold(f64::INFINITY, f64::min);
            let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            LabelStats {
                category: c,
                min,
                max,
                mean,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(rater: &str, speech: &str, labels: &[&str]) -> RatingRecord {
        RatingRecord {
            rater_id: rater.into(),
            speech_id: speech.into(),
            labels: labels.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn table(col: &[f64], c: Category) -> CountTable {
        let ids = (0..col.len()).map(|i| format!("s{i}")).collect();
        let rows = col
            .iter()
            .map(|&x| {
                let mut r = [0.0; NUM_CATEGORIES];
                r[c.index()] = x;
                r
            })
            .collect();
        CountTable::new(ids, rows).unwrap()
    }

    #[test]
    fn tally_counts_each_record() {
        let ids = vec!["s".to_string()];
        let recs = vec![
            rec("a", "s", &["informative"]),
            rec("b", "s", &["informative"]),
            rec("c", "s", &["informative"]),
        ];
        let t = tally_ratings(&ids, &recs).unwrap();
        assert_eq!(t.get("s", Category::Informative), Some(3.0));
    }

    #[test]
    fn tally_adds_one_per_label_in_set() {
        let ids = vec!["s".to_string()];
        let t = tally_ratings(&ids, &[rec("a", "s", &["funny", "ok", "beautiful"])]).unwrap();
        for c in [Category::Funny, Category::Ok, Category::Beautiful] {
            assert_eq!(t.get("s", c), Some(1.0));
        }
        assert_eq!(t.get("s", Category::Informative), Some(0.0));
    }

    #[test]
    fn tally_rejects_unknown_category_and_speech() {
        let ids = vec!["s".to_string()];
        let err = tally_ratings(&ids, &[rec("a", "s", &["witty"])]).unwrap_err();
        assert!(matches!(err, Error::UnknownCategory(ref n) if n == "witty"));
        let err = tally_ratings(&ids, &[rec("a", "t", &["funny"])]).unwrap_err();
        assert!(matches!(err, Error::UnknownSpeech(_)));
        let err = tally_ratings(
            &ids,
            &[rec("a", "s", &["funny", "ok", "beautiful", "inspiring"])],
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidRecord(_)));
    }

    fn talk(views: u64, votes: Vec<AuxVote>) -> AuxTalk {
        AuxTalk {
            id: "t".into(),
            sentences: vec!["x".into()],
            views,
            votes,
        }
    }

    #[test]
    fn aux_normalizes_per_million_views() {
        let votes = (0..500)
            .map(|_| AuxVote {
                labels: vec!["inspiring".into(), "funny".into()],
                single: false,
            })
            .collect();
        let t = tally_aux(&[talk(2_000_000, votes)]).unwrap();
        assert_eq!(t.get("t", Category::Inspiring), Some(250.0));
        assert_eq!(t.get("t", Category::Funny), Some(250.0));
    }

    #[test]
    fn aux_single_label_counts_three_times() {
        let v = AuxVote {
            labels: vec!["funny".into()],
            single: true,
        };
        let t = tally_aux(&[talk(1_000_000, vec![v])]).unwrap();
        assert_eq!(t.get("t", Category::Funny), Some(3.0));
    }

    #[test]
    fn aux_zero_votes_and_zero_views() {
        let t = tally_aux(&[talk(5, vec![])]).unwrap();
        assert!(t.rows()[0].iter().all(|&x| x == 0.0));
        assert!(matches!(
            tally_aux(&[talk(0, vec![])]),
            Err(Error::ZeroViews(_))
        ));
    }

    #[test]
    fn aux_doubling_views_halves_counts() {
        let votes: Vec<AuxVote> = (0..37)
            .map(|i| AuxVote {
                labels: vec![Category::ALL[i % 14].name().into()],
                single: i % 3 == 0,
            })
            .collect();
        let a = tally_aux(&[talk(3_333_333, votes.clone())]).unwrap();
        let b = tally_aux(&[talk(6_666_666, votes)]).unwrap();
        for j in 0..NUM_CATEGORIES {
            assert_eq!(a.rows()[0][j], 2.0 * b.rows()[0][j]);
        }
    }

    #[test]
    fn median_binarization_examples() {
        let c = Category::Informative;
        let rs = binarize_by_median(&table(&[2.0, 5.0, 7.0, 9.0, 11.0], c)).unwrap();
        assert_eq!(rs.medians[c.index()], 7.0);
        assert_eq!(rs.labels(c), vec![0, 0, 1, 1, 1]);

        let rs = binarize_by_median(&table(&[4.0; 4], c)).unwrap();
        assert_eq!(rs.labels(c), vec![1, 1, 1, 1]);

        let rs = binarize_by_median(&table(&[1.0, 2.0, 3.0, 4.0], c)).unwrap();
        assert_eq!(rs.medians[c.index()], 2.5);
        assert_eq!(rs.labels(c), vec![0, 0, 1, 1]);

        let rs = binarize_by_median(&table(&[3.0], c)).unwrap();
        assert!(rs.binary[0].iter().all(|&b| b == 1));
    }

    #[test]
    fn label_stats_examples() {
        let zero = label_stats(&table(&[0.0, 0.0, 0.0], Category::Funny)).unwrap();
        let f = zero[Category::Funny.index()];
        assert_eq!((f.min, f.max, f.mean), (0.0, 0.0, 0.0));

        let single = label_stats(&table(&[7.0], Category::Funny)).unwrap();
        let f = single[Category::Funny.index()];
        assert_eq!((f.min, f.max, f.mean), (7.0, 7.0, 7.0));

        assert!(label_stats(&table(&[], Category::Funny)).is_err());
    }

    #[test]
    fn speech_validation() {
        let s = Speech {
            id: "x".into(),
            topic: Topic::A,
            sentences: vec![],
            alignment: None,
            annotations: None,
        };
        assert!(validate_speeches(&[s.clone()]).is_err());
        let mut ok = s.clone();
        ok.sentences.push("Hello.".into());
        assert!(validate_speeches(&[ok.clone(), ok]).is_err());
    }

    #[test]
    fn speech_jsonl_parses() {
        let line = r#"{"id":"s1","topic":"B","sentences":["One.","Two."]}"#;
        let s: Speech = serde_json::from_str(line).unwrap();
        assert_eq!(s.topic, Topic::B);
        assert!(
            serde_json::from_str::<Speech>(r#"{"id":"s1","topic":"D","sentences":["x"]}"#).is_err()
        );
    }
}
