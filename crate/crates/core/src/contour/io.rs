use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ComplexityContour, FeatureInfo, WindowConfig};
use crate::error::{Error, Result};
use crate::neural::Tensor;

/// Written next to exported contours as `manifest.txt` (TOML).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContourManifest {
    pub command: String,
    pub seed: u64,
    pub window: WindowConfig,
    pub registry_hash: String,
    pub features: Vec<FeatureInfo>,
    pub speeches: Vec<String>,
}

impl ContourManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingPath(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        toml::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))
    }

    pub fn feature_ids(&self) -> Vec<String> {
        self.features.iter().map(|f| f.id.clone()).collect()
    }
}

/// Header row of feature ids, then one row per window. Values use the
/// shortest round-trip decimal form.
pub fn write_contour_csv(path: &Path, contour: &ComplexityContour) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(&contour.feature_ids)?;
    for t in 0..contour.len() {
        w.write_record(contour.values.row(t).iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_contour_csv(path: &Path, speech_id: &str) -> Result<ComplexityContour> {
    let mut r = csv::Reader::from_path(path)?;
    let feature_ids: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let f = feature_ids.len();
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| {
                s.parse::<f64>().map_err(|_| {
                    Error::parse(
                        format!("{} row {}", path.display(), i + 1),
                        format!("bad number `{s}`"),
                    )
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Empty(format!(
            "contour file {} has no windows",
            path.display()
        )));
    }
    ComplexityContour::new(speech_id, feature_ids, Tensor::from_rows(&rows, f)?)
}

/// Reads the manifest and every `<speech>.csv` it lists.
pub fn read_contour_dir(
    dir: &Path,
) -> Result<(ContourManifest, BTreeMap<String, ComplexityContour>)> {
    let manifest = ContourManifest::read(&dir.join("manifest.txt"))?;
    let mut out = BTreeMap::new();
    for id in &manifest.speeches {
        let path = dir.join(format!("{id}.csv"));
        if !path.is_file() {
            return Err(Error::MissingPath(path));
        }
        let c = read_contour_csv(&path, id)?;
        if c.feature_ids != manifest.feature_ids() {
            return Err(Error::InvalidRecord(format!(
                "contour {} columns differ from the manifest feature list",
                path.display()
            )));
        }
        out.insert(id.clone(), c);
    }
    Ok((manifest, out))
}
