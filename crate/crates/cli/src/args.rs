use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::Overrides;

#[derive(Debug, Parser)]
#[command(name = "encmap", version, about = "Map sentence encoders by the spectra of their embeddings")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML file of defaults; keys are flag names without dashes.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory for outputs [default: $ENCMAP_OUTPUT_DIR, else .]
    #[arg(long = "output-dir", global = true)]
    pub output_dir: Option<PathBuf>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Compare features built under different epsilon or normalization.
    #[arg(long, global = true)]
    pub force: bool,
}

#[derive(Debug, Args, Default)]
pub struct SpectrumFlags {
    /// Eigenvalues at or below this are dropped [default: 1e-12]
    #[arg(long = "rank-tol")]
    pub rank_tol: Option<f64>,
    /// ℓ2-normalize embedding rows before forming the Gram matrix.
    #[arg(long)]
    pub normalize: bool,
}

#[derive(Debug, Args, Default)]
pub struct TsneFlags {
    /// [default: min(30, (M-1)/3)]
    #[arg(long)]
    pub perplexity: Option<f64>,
    /// [default: 1000]
    #[arg(long)]
    pub iterations: Option<usize>,
    /// [default: 200]
    #[arg(long = "learning-rate")]
    pub learning_rate: Option<f64>,
    /// [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Default)]
pub struct RegressionFlags {
    /// [default: 0.5]
    #[arg(long = "l1-ratio")]
    pub l1_ratio: Option<f64>,
    /// [default: 5]
    #[arg(long)]
    pub folds: Option<usize>,
    /// [default: 50]
    #[arg(long = "pca-dim")]
    pub pca_dim: Option<usize>,
    /// Fold shuffling seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Density-matrix spectra of embedding files.
    Spectrum {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[command(flatten)]
        spectral: SpectrumFlags,
    },
    /// QRE feature vectors from embedding or spectrum files.
    Features {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Floor for the reference spectrum's null space [default: e^-12]
        #[arg(long)]
        epsilon: Option<f64>,
        #[command(flatten)]
        spectral: SpectrumFlags,
    },
    /// Distance matrix, 2D layout and scatter plots.
    Map {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[command(flatten)]
        tsne: TsneFlags,
        /// Encoder attribute used to color markers; repeatable.
        #[arg(long = "color-by", default_value = "encoder_type")]
        color_by: Vec<String>,
        /// File name prefix for plots.
        #[arg(long, default_value = "map")]
        prefix: String,
        /// Extra cropped render, "x_min,x_max,y_min,y_max".
        #[arg(long)]
        crop: Option<String>,
        /// Encoder ids to label on the plots; repeatable.
        #[arg(long)]
        highlight: Vec<String>,
    },
    /// Nearest neighbors of one encoder.
    Neighbors {
        /// Feature files, or a single distance CSV.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        target: String,
        #[arg(long, default_value_t = 5)]
        k: usize,
    },
    /// Noisy copies of the identity embedding in two or more noise groups.
    Synth {
        /// Sentences, i.e. rows and columns of each matrix.
        #[arg(long, default_value_t = 500)]
        n: usize,
        /// Groups as "low:high:count" ranges of sigma^2, comma separated.
        #[arg(long, default_value = "0:1:10,3:4:10")]
        groups: String,
        /// Length of the noise step added to each row.
        #[arg(long = "noise-scale", default_value_t = 0.5)]
        noise_scale: f64,
        /// [default: 0]
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Predict per-task scores from feature vectors.
    Predict {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// CSV with columns encoder_id,task_name,score.
        #[arg(long)]
        scores: PathBuf,
        #[command(flatten)]
        regression: RegressionFlags,
    },
    /// Agglomerative clustering to a Newick tree and dendrogram.
    Cluster {
        /// Feature files, or a single distance CSV.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// single, complete or average [default: average]
        #[arg(long)]
        linkage: Option<String>,
        /// Draw heights as ln(1 + h).
        #[arg(long = "log-heights")]
        log_heights: bool,
    },
}

fn flag(b: bool) -> Option<bool> {
    b.then_some(true)
}

impl Cli {
    /// Settings named on the command line.
    pub fn overrides(&self) -> Overrides {
        let g = &self.global;
        let mut o = Overrides {
            jobs: g.jobs,
            force: flag(g.force),
            output_dir: g.output_dir.clone(),
            ..Default::default()
        };
        match &self.command {
            Command::Spectrum { spectral, .. } => {
                o.rank_tol = spectral.rank_tol;
                o.normalize = flag(spectral.normalize);
            }
            Command::Features {
                epsilon, spectral, ..
            } => {
                o.epsilon = *epsilon;
                o.rank_tol = spectral.rank_tol;
                o.normalize = flag(spectral.normalize);
            }
            Command::Map { tsne, .. } => {
                o.perplexity = tsne.perplexity;
                o.iterations = tsne.iterations;
                o.learning_rate = tsne.learning_rate;
                o.seed = tsne.seed;
            }
            Command::Synth { seed, .. } => o.seed = *seed,
            Command::Predict { regression, .. } => {
                o.l1_ratio = regression.l1_ratio;
                o.folds = regression.folds;
                o.pca_dim = regression.pca_dim;
                o.seed = regression.seed;
            }
            Command::Cluster { linkage, .. } => o.linkage = linkage.clone(),
            Command::Neighbors { .. } => {}
        }
        o
    }
}
