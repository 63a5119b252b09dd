//! Run settings: command-line flags over a TOML config file over built-in
//! defaults.

use std::path::{Path, PathBuf};

use encmap::distance::Linkage;
use encmap::prediction::{DEFAULT_FOLDS, DEFAULT_L1_RATIO, DEFAULT_PCA_DIM};
use encmap::projection::TsneParams;
use encmap::qre::DEFAULT_EPSILON;
use encmap::spectral::DEFAULT_RANK_TOLERANCE;
use serde::{Deserialize, Serialize};

use crate::exit::Exit;

pub const OUTPUT_DIR_ENV: &str = "ENCMAP_OUTPUT_DIR";

/// Every tunable setting, unset unless a flag or the config file names it.
/// Config keys are the flag names without the leading dashes.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct Overrides {
    pub epsilon: Option<f64>,
    pub rank_tol: Option<f64>,
    pub normalize: Option<bool>,
    pub seed: Option<u64>,
    pub perplexity: Option<f64>,
    pub iterations: Option<usize>,
    pub learning_rate: Option<f64>,
    pub linkage: Option<String>,
    pub l1_ratio: Option<f64>,
    pub folds: Option<usize>,
    pub pca_dim: Option<usize>,
    pub jobs: Option<usize>,
    pub force: Option<bool>,
    pub output_dir: Option<PathBuf>,
}

impl Overrides {
    /// Field-wise `self.or(fallback)`.
    pub fn or(self, fallback: Overrides) -> Overrides {
        Overrides {
            epsilon: self.epsilon.or(fallback.epsilon),
            rank_tol: self.rank_tol.or(fallback.rank_tol),
            normalize: self.normalize.or(fallback.normalize),
            seed: self.seed.or(fallback.seed),
            perplexity: self.perplexity.or(fallback.perplexity),
            iterations: self.iterations.or(fallback.iterations),
            learning_rate: self.learning_rate.or(fallback.learning_rate),
            linkage: self.linkage.or(fallback.linkage),
            l1_ratio: self.l1_ratio.or(fallback.l1_ratio),
            folds: self.folds.or(fallback.folds),
            pca_dim: self.pca_dim.or(fallback.pca_dim),
            jobs: self.jobs.or(fallback.jobs),
            force: self.force.or(fallback.force),
            output_dir: self.output_dir.or(fallback.output_dir),
        }
    }
}

pub fn load_config(path: &Path) -> Result<Overrides, Exit> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Exit::invocation(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text)
        .map_err(|e| Exit::invocation(format!("bad config {}: {e}", path.display())))
}

/// Fully resolved settings, recorded verbatim in every manifest.
#[derive(Debug, Clone, Serialize)]
pub struct Settings {
    pub epsilon: f64,
    pub rank_tol: f64,
    pub normalize: bool,
    pub seed: u64,
    /// `None` selects a perplexity from the number of encoders.
    pub perplexity: Option<f64>,
    pub iterations: usize,
    pub learning_rate: f64,
    pub linkage: String,
    pub l1_ratio: f64,
    pub folds: usize,
    pub pca_dim: usize,
    /// 0 lets the thread pool pick.
    pub jobs: usize,
    pub force: bool,
    pub output_dir: PathBuf,
}

impl Settings {
    pub fn resolve(o: Overrides) -> Result<Settings, Exit> {
        let tsne = TsneParams::default();
        let linkage = o.linkage.unwrap_or_else(|| Linkage::default().to_string());
        linkage
            .parse::<Linkage>()
            .map_err(|e| Exit::invocation(e.to_string()))?;
        let output_dir = o
            .output_dir
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(Settings {
            epsilon: o.epsilon.unwrap_or(DEFAULT_EPSILON),
            rank_tol: o.rank_tol.unwrap_or(DEFAULT_RANK_TOLERANCE),
            normalize: o.normalize.unwrap_or(false),
            seed: o.seed.unwrap_or(0),
            perplexity: o.perplexity,
            iterations: o.iterations.unwrap_or(tsne.iterations),
            learning_rate: o.learning_rate.unwrap_or(tsne.learning_rate),
            linkage,
            l1_ratio: o.l1_ratio.unwrap_or(DEFAULT_L1_RATIO),
            folds: o.folds.unwrap_or(DEFAULT_FOLDS),
            pca_dim: o.pca_dim.unwrap_or(DEFAULT_PCA_DIM),
            jobs: o.jobs.unwrap_or(0),
            force: o.force.unwrap_or(false),
            output_dir,
        })
    }

    pub fn linkage(&self) -> Linkage {
        self.linkage.parse().expect("validated in resolve")
    }

    /// t-SNE parameters for `m` encoders. Without an explicit perplexity,
    /// `min(30, (m−1)/3)` is used, or `(m−1)/2` when that is not above 1.
    pub fn tsne_params(&self, m: usize) -> TsneParams {
        let perplexity = self.perplexity.unwrap_or_else(|| {
            let third = (m as f64 - 1.0) / 3.0;
            if third > 1.0 {
                third.min(30.0)
            } else {
                (m as f64 - 1.0) / 2.0
            }
        });
        TsneParams::new(perplexity, self.iterations, self.learning_rate, self.seed)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("settings serialize")
    }
}
