//! Downstream-score prediction: standardization, PCA, elastic-net regression
//! with cross-validated regularization, and rank/linear correlations on
//! out-of-fold predictions.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::projection::{feature_matrix, fit_pca_matrix, PcaModel};
use crate::qre::FeatureVector;
use crate::scalar::Scalar;

pub const DEFAULT_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 10_000;
pub const DEFAULT_N_ALPHAS: usize = 100;
pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_L1_RATIO: f64 = 0.5;
pub const DEFAULT_PCA_DIM: usize = 50;
/// Tasks with fewer scored encoders are skipped.
pub const MIN_TASK_ENCODERS: usize = 10;
/// Smallest alpha on the grid, relative to alpha_max.
pub const ALPHA_RATIO: f64 = 1e-3;

/// Per-column mean and population standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer<T: Scalar> {
    pub means: DVector<T>,
    /// Constant columns store 1 so that they map to zeros.
    pub stds: DVector<T>,
}

impl<T: Scalar> Standardizer<T> {
    pub fn fit(x: &DMatrix<T>) -> Result<Self> {
        let m = x.nrows();
        if m < 2 {
            return Err(Error::Parameter(format!("standardizing needs >= 2 rows, got {m}")));
        }
        let mf = T::from_usize_lossy(m);
        let means = DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / mf));
        let stds = DVector::from_iterator(
            x.ncols(),
            x.column_iter().zip(means.iter()).map(|(c, &mu)| {
                let var = c.iter().fold(T::zero(), |a, &v| a + (v - mu) * (v - mu)) / mf;
                let s = var.sqrt();
                if s > T::zero() {
                    s
                } else {
                    T::one()
                }
            }),
        );
        Ok(Standardizer { means, stds })
    }

    pub fn transform(&self, x: &DMatrix<T>) -> Result<DMatrix<T>> {
        if x.ncols() != self.means.len() {
            return Err(Error::Shape(format!(
                "{} columns, standardizer expects {}",
                x.ncols(),
                self.means.len()
            )));
        }
        Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
            (x[(i, j)] - self.means[j]) / self.stds[j]
        }))
    }
}

pub fn standardize_fit<T: Scalar>(x: &DMatrix<T>) -> Result<(Standardizer<T>, DMatrix<T>)> {
    let s = Standardizer::fit(x)?;
    let z = s.transform(x)?;
    Ok((s, z))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            tol: DEFAULT_TOLERANCE,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElasticNetModel<T: Scalar> {
    /// Coefficients on the standardized scale.
    pub coefficients: DVector<T>,
    pub intercept: T,
    pub alpha: T,
    pub l1_ratio: T,
    pub standardizer: Standardizer<T>,
    pub converged: bool,
    pub sweeps: usize,
    /// Objective value after each coordinate-descent sweep.
    pub objective_history: Vec<T>,
}

impl<T: Scalar> ElasticNetModel<T> {
    pub fn predict(&self, x: &DMatrix<T>) -> Result<DVector<T>> {
        let z = self.standardizer.transform(x)?;
        Ok((z * &self.coefficients).add_scalar(self.intercept))
    }
}

/// Dot product in index order. The fit and `alpha_max` share it so that the
/// zeroing threshold is computed bit-identically in both places.
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

fn center<T: Scalar>(y: &DVector<T>) -> (T, Vec<T>) {
    let mean = y.sum() / T::from_usize_lossy(y.len());
    (mean, y.iter().map(|&v| v - mean).collect())
}

fn columns<T: Scalar>(z: &DMatrix<T>) -> Vec<Vec<T>> {
    z.column_iter().map(|c| c.iter().copied().collect()).collect()
}

fn check_l1_ratio<T: Scalar>(l1_ratio: T) -> Result<()> {
    if !(l1_ratio > T::zero() && l1_ratio <= T::one()) {
        return Err(Error::Parameter(format!("l1_ratio {l1_ratio} must lie in (0, 1]")));
    }
    Ok(())
}

fn check_xy<T: Scalar>(x: &DMatrix<T>, y: &DVector<T>) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::Shape(format!("{} rows but {} targets", x.nrows(), y.len())));
    }
    if x.ncols() == 0 {
        return Err(Error::Shape("no feature columns".into()));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite regression input".into()));
    }
    Ok(())
}

fn alpha_max_standardized<T: Scalar>(cols: &[Vec<T>], yc: &[T], l1_ratio: T) -> T {
    let mf = T::from_usize_lossy(yc.len());
    let max_rho = cols
        .iter()
        .map(|c| (dot(c, yc) / mf).abs())
        .fold(T::zero(), T::max);
    let mut a = max_rho / l1_ratio;
    // rounding in the division can leave a·l1_ratio just below the threshold
    while a * l1_ratio < max_rho {
        a *= T::one() + T::machine_eps();
    }
    a
}

/// Smallest alpha at which every coefficient is exactly zero:
/// `max_j |z_jᵀ(y − ȳ)| / (M·l1_ratio)` on the standardized columns `z_j`.
pub fn alpha_max<T: Scalar>(x: &DMatrix<T>, y: &DVector<T>, l1_ratio: T) -> Result<T> {
    check_xy(x, y)?;
    check_l1_ratio(l1_ratio)?;
    let (_, z) = standardize_fit(x)?;
    let (_, yc) = center(y);
    Ok(alpha_max_standardized(&columns(&z), &yc, l1_ratio))
}

fn soft_threshold<T: Scalar>(v: T, t: T) -> T {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        T::zero()
    }
}

struct CdResult<T> {
    beta: Vec<T>,
    converged: bool,
    sweeps: usize,
    history: Vec<T>,
}

fn objective<T: Scalar>(resid: &[T], beta: &[T], alpha: T, l1: T) -> T {
    let m = T::from_usize_lossy(resid.len());
    let rss = dot(resid, resid);
    let l1n = beta.iter().fold(T::zero(), |a, &b| a + b.abs());
    let l2n = dot(beta, beta);
    rss / (T::lit(2.0) * m) + alpha * l1 * l1n + alpha * (T::one() - l1) * l2n / T::lit(2.0)
}

/// Coordinate descent on standardized columns and a centered target.
fn coordinate_descent<T: Scalar>(
    cols: &[Vec<T>],
    yc: &[T],
    alpha: T,
    l1: T,
    opts: FitOptions,
    warm: Option<&[T]>,
) -> CdResult<T> {
    let p = cols.len();
    let mf = T::from_usize_lossy(yc.len());
    let mut beta: Vec<T> = warm.map_or_else(|| vec![T::zero(); p], <[T]>::to_vec);
    let mut resid: Vec<T> = yc.to_vec();
    for (j, c) in cols.iter().enumerate() {
        if beta[j] != T::zero() {
            for (r, &v) in resid.iter_mut().zip(c) {
                *r -= v * beta[j];
            }
        }
    }
    let norms: Vec<T> = cols.iter().map(|c| dot(c, c) / mf).collect();
    let tol = T::lit(opts.tol);
    let mut history = Vec::new();
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < opts.max_iter {
        sweeps += 1;
        let mut max_delta = T::zero();
        for j in 0..p {
            let denom = norms[j] + alpha * (T::one() - l1);
            if norms[j] == T::zero() || denom == T::zero() {
                continue;
            }
            let old = beta[j];
            let rho = dot(&cols[j], &resid) / mf + norms[j] * old;
            let new = soft_threshold(rho, alpha * l1) / denom;
            if new != old {
                let delta = new - old;
                for (r, &v) in resid.iter_mut().zip(&cols[j]) {
                    *r -= v * delta;
                }
                beta[j] = new;
                max_delta = max_delta.max(delta.abs());
            }
        }
        history.push(objective(&resid, &beta, alpha, l1));
        if max_delta < tol {
            converged = true;
            break;
        }
    }
    CdResult {
        beta,
        converged,
        sweeps,
        history,
    }
}

/// Minimizes `(1/2M)‖y − Zβ − b‖² + α·l1_ratio·‖β‖₁ + (α/2)(1 − l1_ratio)‖β‖²`
/// where `Z` is `x` standardized column-wise. Non-convergence is reported in
/// the model, not as an error.
pub fn elastic_net_fit<T: Scalar>(
    x: &DMatrix<T>,
    y: &DVector<T>,
    alpha: T,
    l1_ratio: T,
    opts: FitOptions,
) -> Result<ElasticNetModel<T>> {
    fit_warm(x, y, alpha, l1_ratio, opts, None)
}

fn fit_warm<T: Scalar>(
    x: &DMatrix<T>,
    y: &DVector<T>,
    alpha: T,
    l1_ratio: T,
    opts: FitOptions,
    warm: Option<&[T]>,
) -> Result<ElasticNetModel<T>> {
    check_xy(x, y)?;
    check_l1_ratio(l1_ratio)?;
    if !(alpha >= T::zero()) || !alpha.is_finite() {
        return Err(Error::Parameter(format!("alpha {alpha} must be >= 0")));
    }
    let (standardizer, z) = standardize_fit(x)?;
    let (intercept, yc) = center(y);
    let cd = coordinate_descent(&columns(&z), &yc, alpha, l1_ratio, opts, warm);
    if !cd.converged {
        log::warn!(
            "elastic net did not converge in {} sweeps (alpha = {alpha:e})",
            opts.max_iter
        );
    }
    Ok(ElasticNetModel {
        coefficients: DVector::from_vec(cd.beta),
        intercept,
        alpha,
        l1_ratio,
        standardizer,
        converged: cd.converged,
        sweeps: cd.sweeps,
        objective_history: cd.history,
    })
}

/// `n` log-spaced values from `alpha_max` down to `alpha_max · 1e-3`.
pub fn alpha_grid<T: Scalar>(alpha_max: T, n: usize) -> Vec<T> {
    if n == 1 {
        return vec![alpha_max];
    }
    let (hi, lo) = (alpha_max.ln(), (alpha_max * T::lit(ALPHA_RATIO)).ln());
    (0..n)
        .map(|i| {
            if i == 0 {
                alpha_max
            } else if i == n - 1 {
                alpha_max * T::lit(ALPHA_RATIO)
            } else {
                let t = T::from_usize_lossy(i) / T::from_usize_lossy(n - 1);
                (hi + (lo - hi) * t).exp()
            }
        })
        .collect()
}

/// Fold index per sample: a seeded shuffle followed by contiguous blocks,
/// the first `m % folds` blocks one element larger.
pub fn fold_assignments(m: usize, folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 || m < folds {
        return Err(Error::Parameter(format!(
            "need 2 <= folds <= samples, got {folds} folds for {m} samples"
        )));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = vec![0; m];
    let mut start = 0;
    for f in 0..folds {
        let size = m / folds + usize::from(f < m % folds);
        for &i in &order[start..start + size] {
            out[i] = f;
        }
        start += size;
    }
    Ok(out)
}

fn subset<T: Scalar>(x: &DMatrix<T>, y: &DVector<T>, rows: &[usize]) -> (DMatrix<T>, DVector<T>) {
    (
        x.select_rows(rows),
        DVector::from_iterator(rows.len(), rows.iter().map(|&i| y[i])),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvOptions {
    pub folds: usize,
    pub l1_ratio: f64,
    pub n_alphas: usize,
    pub seed: u64,
    pub fit: FitOptions,
}

impl Default for CvOptions {
    fn default() -> Self {
        CvOptions {
            folds: DEFAULT_FOLDS,
            l1_ratio: DEFAULT_L1_RATIO,
            n_alphas: DEFAULT_N_ALPHAS,
            seed: 0,
            fit: FitOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaPath<T: Scalar> {
    pub alphas: Vec<T>,
    /// Mean held-out squared error per alpha.
    pub mean_mse: Vec<T>,
    pub selected: usize,
}

/// Selects alpha by minimum mean held-out squared error over the grid (ties
/// go to the larger alpha), then refits on all rows.
pub fn elastic_net_cv<T: Scalar>(
    x: &DMatrix<T>,
    y: &DVector<T>,
    opts: &CvOptions,
) -> Result<(ElasticNetModel<T>, AlphaPath<T>)> {
    check_xy(x, y)?;
    let l1 = T::lit(opts.l1_ratio);
    check_l1_ratio(l1)?;
    if opts.n_alphas == 0 {
        return Err(Error::Parameter("n_alphas must be >= 1".into()));
    }
    let m = x.nrows();
    let folds = fold_assignments(m, opts.folds, opts.seed)?;
    let amax = alpha_max(x, y, l1)?;
    if amax == T::zero() {
        // y constant or x constant: nothing to learn
        let model = fit_warm(x, y, T::one(), l1, opts.fit, None)?;
        let path = AlphaPath {
            alphas: vec![T::one()],
            mean_mse: vec![T::zero()],
            selected: 0,
        };
        return Ok((model, path));
    }
    let alphas = alpha_grid(amax, opts.n_alphas);
    let per_fold: Vec<Vec<T>> = (0..opts.folds)
        .into_par_iter()
        .map(|f| -> Result<Vec<T>> {
            let train: Vec<usize> = (0..m).filter(|&i| folds[i] != f).collect();
            let test: Vec<usize> = (0..m).filter(|&i| folds[i] == f).collect();
            let (xt, yt) = subset(x, y, &train);
            let (xv, yv) = subset(x, y, &test);
            let mut warm: Option<Vec<T>> = None;
            let mut errs = Vec::with_capacity(alphas.len());
            for &a in &alphas {
                let model = fit_warm(&xt, &yt, a, l1, opts.fit, warm.as_deref())?;
                let pred = model.predict(&xv)?;
                let sse = pred
                    .iter()
                    .zip(yv.iter())
                    .fold(T::zero(), |acc, (&p, &t)| acc + (p - t) * (p - t));
                errs.push(sse / T::from_usize_lossy(test.len()));
                warm = Some(model.coefficients.as_slice().to_vec());
            }
            Ok(errs)
        })
        .collect::<Result<_>>()?;
    let kf = T::from_usize_lossy(opts.folds);
    let mean_mse: Vec<T> = (0..alphas.len())
        .map(|a| per_fold.iter().fold(T::zero(), |acc, f| acc + f[a]) / kf)
        .collect();
    let mut selected = 0;
    for (i, &e) in mean_mse.iter().enumerate() {
        if e < mean_mse[selected] {
            selected = i;
        }
    }
    let model = fit_warm(x, y, alphas[selected], l1, opts.fit, None)?;
    Ok((
        model,
        AlphaPath {
            alphas,
            mean_mse,
            selected,
        },
    ))
}

/// Out-of-fold predictions from nested cross-validation.
#[derive(Debug, Clone, PartialEq)]
pub struct OutOfFold<T: Scalar> {
    pub predictions: DVector<T>,
    pub fold_of: Vec<usize>,
    /// Alpha selected by the inner search for each outer fold.
    pub fold_alphas: Vec<T>,
    /// Training rows used for each outer fold.
    pub train_rows: Vec<Vec<usize>>,
}

/// Each point is predicted by an `elastic_net_cv` model trained without its
/// fold. The inner search reuses the same fold count and seed.
pub fn cross_val_predict<T: Scalar>(
    x: &DMatrix<T>,
    y: &DVector<T>,
    opts: &CvOptions,
) -> Result<OutOfFold<T>> {
    check_xy(x, y)?;
    let m = x.nrows();
    let fold_of = fold_assignments(m, opts.folds, opts.seed)?;
    let results: Vec<(Vec<usize>, Vec<usize>, DVector<T>, T)> = (0..opts.folds)
        .into_par_iter()
        .map(|f| {
            let train: Vec<usize> = (0..m).filter(|&i| fold_of[i] != f).collect();
            let test: Vec<usize> = (0..m).filter(|&i| fold_of[i] == f).collect();
            let (xt, yt) = subset(x, y, &train);
            let (model, _) = elastic_net_cv(&xt, &yt, opts)?;
            let pred = model.predict(&x.select_rows(&test))?;
            Ok((train, test, pred, model.alpha))
        })
        .collect::<Result<_>>()?;
    let mut predictions = DVector::<T>::zeros(m);
    let mut fold_alphas = Vec::with_capacity(opts.folds);
    let mut train_rows = Vec::with_capacity(opts.folds);
    for (train, test, pred, alpha) in results {
        for (k, &i) in test.iter().enumerate() {
            predictions[i] = pred[k];
        }
        fold_alphas.push(alpha);
        train_rows.push(train);
    }
    Ok(OutOfFold {
        predictions,
        fold_of,
        fold_alphas,
        train_rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlation {
    pub coefficient: f64,
    pub p_value: f64,
}

/// Two-sided p-value from `t = r·sqrt((M − 2)/(1 − r²))`.
fn t_p_value(r: f64, m: usize) -> f64 {
    if r.abs() >= 1.0 {
        return 0.0;
    }
    let dof = (m - 2) as f64;
    let t = r * (dof / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, dof).expect("dof >= 1");
    (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
}

pub fn pearson<T: Scalar>(x: &[T], y: &[T]) -> Result<Correlation> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("{} vs {} values", x.len(), y.len())));
    }
    let m = x.len();
    if m < 3 {
        return Err(Error::Parameter(format!("correlation needs >= 3 points, got {m}")));
    }
    let xs: Vec<f64> = x.iter().map(|v| v.as_f64()).collect();
    let ys: Vec<f64> = y.iter().map(|v| v.as_f64()).collect();
    if xs.iter().chain(&ys).any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite correlation input".into()));
    }
    let mx = xs.iter().sum::<f64>() / m as f64;
    let my = ys.iter().sum::<f64>() / m as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in xs.iter().zip(&ys) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "one of the inputs has zero variance".into(),
        ));
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    Ok(Correlation {
        coefficient: r,
        p_value: t_p_value(r, m),
    })
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks<T: Scalar>(v: &[T]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap_or(std::cmp::Ordering::Equal));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman<T: Scalar>(x: &[T], y: &[T]) -> Result<Correlation> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("{} vs {} values", x.len(), y.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite correlation input".into()));
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Task scores keyed by task, then encoder id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreTable {
    pub tasks: BTreeMap<String, BTreeMap<String, f64>>,
}

#[derive(Debug, serde::Deserialize)]
struct ScoreRow {
    encoder_id: String,
    task_name: String,
    score: f64,
}

impl ScoreTable {
    pub fn insert(&mut self, encoder_id: &str, task: &str, score: f64) -> Result<()> {
        if !score.is_finite() {
            return Err(Error::Validation(format!(
                "non-finite score for {encoder_id} on {task}"
            )));
        }
        let prev = self
            .tasks
            .entry(task.to_string())
            .or_default()
            .insert(encoder_id.to_string(), score);
        if prev.is_some() {
            return Err(Error::Validation(format!(
                "duplicate score for {encoder_id} on {task}"
            )));
        }
        Ok(())
    }

    /// Reads `encoder_id,task_name,score` CSV with a header row.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut table = ScoreTable::default();
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        for (line, row) in r.deserialize::<ScoreRow>().enumerate() {
            let row = row.map_err(|e| Error::Validation(format!("score row {}: {e}", line + 1)))?;
            table.insert(&row.encoder_id, &row.task_name, row.score)?;
        }
        Ok(table)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::Validation(format!("csv: {e}"));
        w.write_record(["encoder_id", "task_name", "score"]).map_err(err)?;
        for (task, scores) in &self.tasks {
            for (id, s) in scores {
                w.write_record([id.as_str(), task.as_str(), &s.to_string()]).map_err(err)?;
            }
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| Error::Validation(e.to_string()))?)
            .expect("csv output is utf-8"))
    }

    pub fn encoder_ids(&self) -> std::collections::BTreeSet<&str> {
        self.tasks.values().flat_map(|m| m.keys().map(String::as_str)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionReport {
    pub task_name: String,
    /// NaN when undefined (e.g. constant predictions).
    pub spearman: f64,
    pub spearman_p: f64,
    pub pearson: f64,
    pub pearson_p: f64,
    pub n_encoders: usize,
    pub ids: Vec<String>,
    pub targets: Vec<f64>,
    pub fold_predictions: Vec<f64>,
    pub fold_alphas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteOptions {
    pub pca_dim: usize,
    pub cv: CvOptions,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            pca_dim: DEFAULT_PCA_DIM,
            cv: CvOptions::default(),
        }
    }
}

/// Standardized, PCA-reduced features shared by every task.
#[derive(Debug, Clone)]
pub struct Preprocessed<T: Scalar> {
    pub ids: Vec<String>,
    pub standardizer: Standardizer<T>,
    pub pca: PcaModel<T>,
    /// M×k.
    pub features: DMatrix<T>,
}

/// Standardizes the feature vectors and reduces them to
/// `min(pca_dim, M, N)` principal components.
pub fn preprocess<T: Scalar>(vectors: &[FeatureVector<T>], pca_dim: usize) -> Result<Preprocessed<T>> {
    if pca_dim == 0 {
        return Err(Error::Parameter("pca_dim must be >= 1".into()));
    }
    let x = feature_matrix(vectors)?;
    let (standardizer, z) = standardize_fit(&x)?;
    let k = pca_dim.min(z.nrows()).min(z.ncols());
    if k < pca_dim {
        log::warn!("reducing PCA dimension from {pca_dim} to {k} ({} x {} features)", z.nrows(), z.ncols());
    }
    let pca = fit_pca_matrix(&z, k)?;
    let features = pca.transform(&z)?;
    Ok(Preprocessed {
        ids: vectors.iter().map(|v| v.encoder_id().to_string()).collect(),
        standardizer,
        pca,
        features,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub reports: Vec<PredictionReport>,
    /// Tasks that were not evaluated, with the reason.
    pub skipped: Vec<(String, String)>,
}

fn correlation_or_nan(c: Result<Correlation>, task: &str, which: &str) -> Result<(f64, f64)> {
    match c {
        Ok(c) => Ok((c.coefficient, c.p_value)),
        Err(Error::UndefinedCorrelation(msg)) => {
            log::warn!("{which} correlation undefined for task {task}: {msg}");
            Ok((f64::NAN, f64::NAN))
        }
        Err(e) => Err(e),
    }
}

/// Standardize → PCA → per-task nested-CV elastic net, scored on pooled
/// out-of-fold predictions. Tasks run in parallel.
pub fn run_prediction_suite<T: Scalar>(
    vectors: &[FeatureVector<T>],
    scores: &ScoreTable,
    opts: &SuiteOptions,
) -> Result<SuiteResult> {
    let index: BTreeMap<&str, usize> = vectors
        .iter()
        .enumerate()
        .map(|(i, v)| (v.encoder_id(), i))
        .collect();
    let missing: Vec<&str> = scores
        .encoder_ids()
        .into_iter()
        .filter(|id| !index.contains_key(id))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Validation(format!(
            "scored encoders without feature vectors: {}",
            missing.join(", ")
        )));
    }
    let pre = preprocess(vectors, opts.pca_dim)?;
    let outcomes: Vec<std::result::Result<PredictionReport, (String, String)>> = scores
        .tasks
        .par_iter()
        .map(|(task, table)| {
            let rows: Vec<usize> = vectors
                .iter()
                .enumerate()
                .filter(|(_, v)| table.contains_key(v.encoder_id()))
                .map(|(i, _)| i)
                .collect();
            if rows.len() < MIN_TASK_ENCODERS.max(opts.cv.folds) {
                return Err((
                    task.clone(),
                    format!("only {} scored encoders", rows.len()),
                ));
            }
            let x = pre.features.select_rows(&rows);
            let ids: Vec<String> = rows.iter().map(|&i| pre.ids[i].clone()).collect();
            let targets: Vec<f64> = ids.iter().map(|id| table[id]).collect();
            let y = DVector::from_iterator(rows.len(), targets.iter().map(|&t| T::lit(t)));
            let run = || -> Result<PredictionReport> {
                let oof = cross_val_predict(&x, &y, &opts.cv)?;
                let preds: Vec<f64> = oof.predictions.iter().map(|v| v.as_f64()).collect();
                let (spearman, spearman_p) =
                    correlation_or_nan(crate::prediction::spearman(&preds, &targets), task, "Spearman")?;
                let (pearson, pearson_p) =
                    correlation_or_nan(crate::prediction::pearson(&preds, &targets), task, "Pearson")?;
                Ok(PredictionReport {
                    task_name: task.clone(),
                    spearman,
                    spearman_p,
                    pearson,
                    pearson_p,
                    n_encoders: rows.len(),
                    ids,
                    targets,
                    fold_predictions: preds,
                    fold_alphas: oof.fold_alphas.iter().map(|a| a.as_f64()).collect(),
                })
            };
            run().map_err(|e| (task.clone(), e.to_string()))
        })
        .collect();
    let mut result = SuiteResult {
        reports: Vec::new(),
        skipped: Vec::new(),
    };
    for o in outcomes {
        match o {
            Ok(r) => result.reports.push(r),
            Err((task, why)) => {
                log::warn!("skipping task {task}: {why}");
                result.skipped.push((task, why));
            }
        }
    }
    Ok(result)
}

/// `task,spearman,spearman_p,pearson,pearson_p,n_encoders`.
pub fn reports_to_csv(reports: &[PredictionReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Validation(format!("csv: {e}"));
    w.write_record(["task", "spearman", "spearman_p", "pearson", "pearson_p", "n_encoders"])
        .map_err(err)?;
    for r in reports {
        w.write_record([
            r.task_name.clone(),
            r.spearman.to_string(),
            r.spearman_p.to_string(),
            r.pearson.to_string(),
            r.pearson_p.to_string(),
            r.n_encoders.to_string(),
        ])
        .map_err(err)?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| Error::Validation(e.to_string()))?)
        .expect("csv output is utf-8"))
}

/// `task,encoder_id,target,prediction` for every out-of-fold prediction.
pub fn predictions_to_csv(reports: &[PredictionReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Validation(format!("csv: {e}"));
    w.write_record(["task", "encoder_id", "target", "prediction"]).map_err(err)?;
    for r in reports {
        for ((id, t), p) in r.ids.iter().zip(&r.targets).zip(&r.fold_predictions) {
            w.write_record([r.task_name.as_str(), id, &t.to_string(), &p.to_string()])
                .map_err(err)?;
        }
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| Error::Validation(e.to_string()))?)
        .expect("csv output is utf-8"))
}
