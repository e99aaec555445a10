//! Synthetic datasets whose labels depend on a single feature group.
//!
//! Each sample draws a latent shift `z = ±(0.6 + 0.4u)` and adds it (in
//! units of the column's spread) to every column of the informative group,
//! and subtracts it from an optional anti group. The label is a median split
//! of the informative group's mean standardized value, so it is fully
//! determined by the observed features.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::contour::{
    default_registry, write_contour_csv, ComplexityContour, ContourManifest, FeatureGroup,
    FeatureInfo, WindowConfig,
};
use crate::corpus::{
    median, write_count_table, write_topics, Category, CountTable, Topic, NUM_CATEGORIES,
};
use crate::error::{Error, Result};
use crate::fluency::{write_fluency_csv, FluencyVector};
use crate::neural::Tensor;
use crate::pipeline::Sample;
use crate::textproc::LexiconSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub n: usize,
    pub informative: FeatureGroup,
    /// Group shifted opposite to the informative one.
    pub anti: Option<FeatureGroup>,
    pub seed: u64,
    pub min_windows: usize,
    pub max_windows: usize,
    /// Per-value noise in units of the column spread.
    pub noise: f64,
}

impl SynthConfig {
    pub fn new(n: usize, informative: FeatureGroup, seed: u64) -> Self {
        Self {
            n,
            informative,
            anti: None,
            seed,
            min_windows: 6,
            max_windows: 12,
            noise: 1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidArgument(
                "synthetic dataset needs at least 2 samples".into(),
            ));
        }
        if self.min_windows == 0 || self.min_windows > self.max_windows {
            return Err(Error::InvalidArgument(
                "window range must satisfy 1 <= min <= max".into(),
            ));
        }
        if self.anti == Some(self.informative) {
            return Err(Error::InvalidArgument(
                "anti group must differ from the informative group".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub features: Vec<FeatureInfo>,
    pub samples: Vec<Sample>,
    /// Informative-group mean per sample (the quantity split at its median).
    pub scores: Vec<f64>,
}

impl SynthDataset {
    pub fn feature_ids(&self) -> Vec<String> {
        self.features.iter().map(|f| f.id.clone()).collect()
    }

    /// Scores in every category column; median-binarizing this table gives
    /// back the labels.
    pub fn count_table(&self) -> Result<CountTable> {
        CountTable::new(
            self.samples.iter().map(|s| s.id.clone()).collect(),
            self.scores.iter().map(|&v| [v; NUM_CATEGORIES]).collect(),
        )
    }

    pub fn label_table(&self) -> Result<CountTable> {
        CountTable::new(
            self.samples.iter().map(|s| s.id.clone()).collect(),
            self.samples
                .iter()
                .map(|s| [s.label; NUM_CATEGORIES])
                .collect(),
        )
    }

    pub fn sample_refs(&self) -> Vec<&Sample> {
        self.samples.iter().collect()
    }
}

/// Column layout of the built-in registry.
pub fn default_features() -> Result<Vec<FeatureInfo>> {
    Ok(default_registry(Arc::new(LexiconSet::bundled()))?.infos())
}

pub fn synthesize(cfg: &SynthConfig) -> Result<SynthDataset> {
    synthesize_with(cfg, default_features()?, "s")
}

/// Generates `cfg.n` samples over the given column layout; ids are
/// `{prefix}{index:04}`.
pub fn synthesize_with(
    cfg: &SynthConfig,
    features: Vec<FeatureInfo>,
    prefix: &str,
) -> Result<SynthDataset> {
    cfg.validate()?;
    let f = features.len();
    let informative_cols: Vec<usize> = (0..f)
        .filter(|&j| features[j].group == cfg.informative)
        .collect();
    if informative_cols.is_empty() && cfg.informative != FeatureGroup::Fluency {
        return Err(Error::InvalidArgument(format!(
            "no columns in group `{}`",
            cfg.informative
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
    // column location and spread
    let loc: Vec<f64> = (0..f).map(|_| rng.random_range(-2.0..2.0)).collect();
    let scale: Vec<f64> = (0..f).map(|_| rng.random_range(0.2..2.0)).collect();
    let fl_loc: Vec<f64> = (0..FluencyVector::DIM)
        .map(|_| rng.random_range(0.5..3.0))
        .collect();
    let fl_scale: Vec<f64> = (0..FluencyVector::DIM)
        .map(|_| rng.random_range(0.1..1.0))
        .collect();

    let mut samples = Vec::with_capacity(cfg.n);
    let mut scores = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let z = sign * (0.6 + 0.4 * rng.random::<f64>());
        let t = rng.random_range(cfg.min_windows..=cfg.max_windows);
        let shift_of = |g: FeatureGroup| -> f64 {
            if g == cfg.informative {
                z
            } else if Some(g) == cfg.anti {
                -z
            } else {
                0.0
            }
        };
        let mut data = Vec::with_capacity(t * f);
        let mut informative_sum = 0.0;
        for _ in 0..t {
            for j in 0..f {
                let u = cfg.noise * normal(&mut rng) + shift_of(features[j].group);
                if features[j].group == cfg.informative {
                    informative_sum += u;
                }
                data.push(loc[j] + scale[j] * u);
            }
        }
        let mut fl = [0.0; FluencyVector::DIM];
        let mut fl_sum = 0.0;
        for k in 0..FluencyVector::DIM {
            let u = cfg.noise * normal(&mut rng) + shift_of(FeatureGroup::Fluency);
            fl_sum += u;
            fl[k] = fl_loc[k] + fl_scale[k] * u;
        }
        let score = if cfg.informative == FeatureGroup::Fluency {
            fl_sum / FluencyVector::DIM as f64
        } else {
            informative_sum / (t * informative_cols.len()) as f64
        };
        let topic = Topic::ALL[rng.random_range(0..3)];
        samples.push(Sample {
            id: format!("{prefix}{i:04}"),
            contour: Tensor::new(vec![t, f], data)?,
            fluency: Some(fl),
            topic: Some(topic),
            label: 0.0,
        });
        scores.push(score);
    }
    let m = median(&scores);
    for (s, &v) in samples.iter_mut().zip(&scores) {
        s.label = if v >= m { 1.0 } else { 0.0 };
    }
    Ok(SynthDataset {
        features,
        samples,
        scores,
    })
}

/// Writes a dataset in the same layout the real pipeline stages produce:
///
/// * `ingest/speeches.csv`, `ingest/counts.csv`, `ingest/labels.csv`
/// * `contours/` (manifest plus one CSV per speech)
/// * `fluency/fluency.csv`
/// * with an auxiliary set: `ingest/aux_labels.csv` and `aux_contours/`
pub fn write_layout(
    out: &Path,
    main: &SynthDataset,
    aux: Option<&SynthDataset>,
    command: &str,
    seed: u64,
) -> Result<()> {
    let ingest = out.join("ingest");
    std::fs::create_dir_all(&ingest)?;
    let topics: BTreeMap<String, Topic> = main
        .samples
        .iter()
        .map(|s| {
            (
                s.id.clone(),
                s.topic.expect("synthetic samples carry topics"),
            )
        })
        .collect();
    write_topics(&ingest.join("speeches.csv"), &topics)?;
    write_count_table(&ingest.join("counts.csv"), &main.count_table()?)?;
    write_count_table(&ingest.join("labels.csv"), &main.label_table()?)?;
    write_contours(&out.join("contours"), main, command, seed)?;
    let fl_dir = out.join("fluency");
    std::fs::create_dir_all(&fl_dir)?;
    let fl: BTreeMap<String, FluencyVector> = main
        .samples
        .iter()
        .map(|s| {
            (
                s.id.clone(),
                FluencyVector::from_array(s.fluency.expect("synthetic samples carry fluency")),
            )
        })
        .collect();
    write_fluency_csv(&fl_dir.join("fluency.csv"), &fl)?;
    if let Some(aux) = aux {
        write_count_table(&ingest.join("aux_counts.csv"), &aux.count_table()?)?;
        write_count_table(&ingest.join("aux_labels.csv"), &aux.label_table()?)?;
        write_contours(&out.join("aux_contours"), aux, command, seed)?;
    }
    Ok(())
}

fn write_contours(dir: &Path, ds: &SynthDataset, command: &str, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let ids = ds.feature_ids();
    for s in &ds.samples {
        let c = ComplexityContour::new(s.id.clone(), ids.clone(), s.contour.clone())?;
        write_contour_csv(&dir.join(format!("{}.csv", s.id)), &c)?;
    }
    ContourManifest {
        command: command.to_string(),
        seed,
        window: WindowConfig::default(),
        registry_hash: "synthetic".into(),
        features: ds.features.clone(),
        speeches: ds.samples.iter().map(|s| s.id.clone()).collect(),
    }
    .write(&dir.join("manifest.txt"))
}

/// Categories in a synthetic dataset all share the same label.
pub fn synthetic_categories() -> [Category; NUM_CATEGORIES] {
    Category::ALL
}
