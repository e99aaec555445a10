//! Helpers shared by the integration tests.
#![allow(dead_code)]

use contour_rater::neural::{Architecture, FineTuneArch, OptimizerKind, TrainConfig};
use contour_rater::pipeline::{compute_metrics, Sample, Trained, EXTRA_DIMS};

/// Small stack used wherever training has to stay fast.
pub fn small_arch(f: usize) -> Architecture {
    Architecture {
        input_dim: f,
        layers: 1,
        hidden: 8,
        head_width: 8,
        dropout: 0.2,
        finetune: None,
    }
}

pub fn small_ft() -> FineTuneArch {
    FineTuneArch {
        width: 8,
        extra_dims: EXTRA_DIMS,
        dropout: 0.2,
    }
}

pub fn quick_cfg(seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: 0.01,
        batch_size: 16,
        max_epochs: 30,
        patience: 6,
        seed,
        dropout: 0.2,
        optimizer: OptimizerKind::Adam,
        val_fraction: 0.2,
    }
}

pub fn accuracy(model: &Trained, test: &[&Sample]) -> f64 {
    let probs = model.predict(test).unwrap();
    let targets: Vec<f64> = test.iter().map(|s| s.label).collect();
    compute_metrics(&probs, &targets, 0.5).unwrap().accuracy
}

pub fn bin() -> std::path::PathBuf {
    std::path::PathBuf::from(env!("CARGO_BIN_EXE_contour-rater"))
}

pub fn fixtures() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

/// Every file under `dir` with its bytes, sorted by relative path.
pub fn snapshot(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
