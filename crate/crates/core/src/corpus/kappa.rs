use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{Category, RatingRecord, NUM_CATEGORIES};
use crate::error::{Error, Result};

/// Per-category mean pairwise Cohen's kappa.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaReport {
    /// `None` where no rater pair yields a defined kappa (e.g. a category
    /// nobody used).
    pub per_category: [Option<f64>; NUM_CATEGORIES],
    pub pair_counts: [usize; NUM_CATEGORIES],
    /// Mean over the defined categories.
    pub overall: Option<f64>,
}

impl KappaReport {
    pub fn get(&self, category: Category) -> Option<f64> {
        self.per_category[category.index()]
    }
}

/// Cohen's kappa for two binary judgment sequences over the same items.
///
/// Undefined (`None`) when chance agreement is 1, i.e. both raters gave the
/// same constant judgment on every item, or when there are no items.
pub fn cohen_kappa(a: &[bool], b: &[bool]) -> Option<f64> {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    if n == 0 {
        return None;
    }
    let nf = n as f64;
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64;
    let pa = a.iter().filter(|&&x| x).count() as f64 / nf;
    let pb = b.iter().filter(|&&x| x).count() as f64 / nf;
    let po = agree / nf;
    let pe = pa * pb + (1.0 - pa) * (1.0 - pb);
    if pe >= 1.0 {
        return None;
    }
    Some((po - pe) / (1.0 - pe))
}

/// Mean pairwise Cohen's kappa per category over every pair of raters that
/// share at least one speech, each category judged present/absent.
pub fn interrater_kappa(records: &[RatingRecord]) -> Result<KappaReport> {
    let mut by_rater: BTreeMap<&str, BTreeMap<&str, BTreeSet<Category>>> = BTreeMap::new();
    for r in records {
        let labels = r.label_set()?;
        let prev = by_rater
            .entry(r.rater_id.as_str())
            .or_default()
            .insert(r.speech_id.as_str(), labels);
        if prev.is_some() {
            return Err(Error::InvalidRecord(format!(
                "rater `{}` rated speech `{}` twice",
                r.rater_id, r.speech_id
            )));
        }
    }

    let mut by_speech: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (rater, speeches) in &by_rater {
        for speech in speeches.keys() {
            by_speech.entry(speech).or_default().push(rater);
        }
    }
    let mut pairs: BTreeSet<(&str, &str)> = BTreeSet::new();
    for raters in by_speech.values() {
        for i in 0..raters.len() {
            for j in i + 1..raters.len() {
                let (a, b) = (raters[i].min(raters[j]), raters[i].max(raters[j]));
                pairs.insert((a, b));
            }
        }
    }

    let mut values: Vec<Vec<f64>> = vec![Vec::new(); NUM_CATEGORIES];
    for (a, b) in pairs {
        let ra = &by_rater[a];
        let rb = &by_rater[b];
        let shared: Vec<&str> = ra.keys().filter(|s| rb.contains_key(*s)).copied().collect();
        for c in Category::ALL {
            let ja: Vec<bool> = shared.iter().map(|s| ra[s].contains(&c)).collect();
            let jb: Vec<bool> = shared.iter().map(|s| rb[s].contains(&c)).collect();
            if let Some(k) = cohen_kappa(&ja, &jb) {
                values[c.index()].push(k);
            }
        }
    }

    let mut per_category = [None; NUM_CATEGORIES];
    let mut pair_counts = [0; NUM_CATEGORIES];
    for (j, v) in values.iter_mut().enumerate() {
        pair_counts[j] = v.len();
        per_category[j] = sorted_mean(v);
    }
    let mut defined: Vec<f64> = per_category.iter().flatten().copied().collect();
    let overall = sorted_mean(&mut defined);
    Ok(KappaReport {
        per_category,
        pair_counts,
        overall,
    })
}

// Summing in sorted order makes the mean independent of pair enumeration
// order, so relabeling raters cannot change a single bit.
fn sorted_mean(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    Some(v.iter().sum::<f64>() / v.len() as f64)
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

    #[test]
    fn perfect_agreement_is_one() {
        let recs = vec![
            rec("a", "s1", &["funny"]),
            rec("b", "s1", &["funny"]),
            rec("a", "s2", &["informative"]),
            rec("b", "s2", &["informative"]),
        ];
        let k = interrater_kappa(&recs).unwrap();
        assert_eq!(k.get(Category::Funny), Some(1.0));
        assert_eq!(k.get(Category::Informative), Some(1.0));
        assert_eq!(k.get(Category::Obnoxious), None);
        assert_eq!(k.overall, Some(1.0));
    }

    #[test]
    fn chance_agreement_is_zero() {
        let a = [true, true, false, false];
        let b = [true, false, true, false];
        assert_eq!(cohen_kappa(&a, &b), Some(0.0));
    }

    #[test]
    fn constant_identical_judgments_are_undefined() {
        assert_eq!(cohen_kappa(&[false, false], &[false, false]), None);
        assert_eq!(cohen_kappa(&[], &[]), None);
    }

    #[test]
    fn duplicate_rating_is_rejected() {
        let recs = vec![rec("a", "s1", &["funny"]), rec("a", "s1", &["ok"])];
        assert!(interrater_kappa(&recs).is_err());
    }
}
