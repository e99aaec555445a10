use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::TrainConfig;

/// Hyperparameter name to candidate values. Recognized names:
/// `learning_rate`, `batch_size`, `dropout`, `max_epochs`, `patience`.
pub type Grid = BTreeMap<String, Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub params: BTreeMap<String, f64>,
    pub config: TrainConfig,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub cells: Vec<GridCell>,
    pub best: usize,
}

impl GridResult {
    pub fn best_cell(&self) -> &GridCell {
        &self.cells[self.best]
    }
}

fn as_count(name: &str, v: f64) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 {
        Ok(v as usize)
    } else {
        Err(Error::InvalidArgument(format!(
            "{name} must be a non-negative integer, got {v}"
        )))
    }
}

fn apply(cfg: &mut TrainConfig, name: &str, v: f64) -> Result<()> {
    match name {
        "learning_rate" => cfg.learning_rate = v,
        "batch_size" => cfg.batch_size = as_count(name, v)?,
        "dropout" => cfg.dropout = v,
        "max_epochs" => cfg.max_epochs = as_count(name, v)?,
        "patience" => cfg.patience = as_count(name, v)?,
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown grid hyperparameter `{other}`"
            )))
        }
    }
    Ok(())
}

/// Cartesian product of the grid applied to `base`, in lexicographic order
/// of hyperparameter names (last name varies fastest).
pub fn grid_configs(
    base: &TrainConfig,
    grid: &Grid,
) -> Result<Vec<(BTreeMap<String, f64>, TrainConfig)>> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("grid is empty".into()));
    }
    let mut cells = vec![(BTreeMap::new(), *base)];
    for (name, values) in grid {
        if values.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "grid entry `{name}` has no values"
            )));
        }
        let mut next = Vec::with_capacity(cells.len() * values.len());
        for (params, cfg) in &cells {
            for &v in values {
                let mut p = params.clone();
                let mut c = *cfg;
                apply(&mut c, name, v)?;
                c.validate()?;
                p.insert(name.clone(), v);
                next.push((p, c));
            }
        }
        cells = next;
    }
    Ok(cells)
}

/// Scores every grid cell with `evaluate` (higher is better, e.g. mean
/// validation accuracy) and picks the best. Ties go to the lower learning
/// rate, then the smaller batch, then the earlier cell.
pub fn grid_search<F>(base: &TrainConfig, grid: &Grid, evaluate: F) -> Result<GridResult>
where
    F: Fn(&TrainConfig) -> Result<f64> + Sync,
{
    let configs = grid_configs(base, grid)?;
    let cells: Vec<GridCell> = configs
        .into_par_iter()
        .map(|(params, config)| {
            let score = evaluate(&config)?;
            log::info!("grid cell {params:?}: score {score:.4}");
            Ok(GridCell {
                params,
                config,
                score,
            })
        })
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (i, c) in cells.iter().enumerate().skip(1) {
        let b = &cells[best];
        let better = c.score > b.score
            || (c.score == b.score
                && (c.config.learning_rate < b.config.learning_rate
                    || (c.config.learning_rate == b.config.learning_rate
                        && c.config.batch_size < b.config.batch_size)));
        if better {
            best = i;
        }
    }
    Ok(GridResult { cells, best })
}
