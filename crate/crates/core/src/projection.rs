//! Low-dimensional projections of feature vectors: exact t-SNE on a
//! precomputed distance matrix for 2D maps, and PCA for regression inputs.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distance::DistanceMatrix;
use crate::error::{Error, Result};
use crate::linalg::{canonicalize_signs, thin_svd_right};
use crate::qre::FeatureVector;
use crate::scalar::Scalar;

pub const PERPLEXITY_TOLERANCE: f64 = 1e-5;
pub const MAX_BISECTION_STEPS: usize = 50;
const P_FLOOR: f64 = 1e-12;
const MIN_GAIN: f64 = 0.01;
const INIT_STD: f64 = 1e-4;
/// Half-width of the `ln(β·spread)` bracket searched by the bandwidth bisection.
const LOG_BETA_SPAN: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneParams {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub early_exaggeration: f64,
    pub exaggeration_iterations: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch: usize,
    pub distance_metric: String,
}

impl Default for TsneParams {
    fn default() -> Self {
        TsneParams {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            seed: 0,
            early_exaggeration: 12.0,
            exaggeration_iterations: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch: 250,
            distance_metric: "l1".into(),
        }
    }
}

impl TsneParams {
    pub fn new(perplexity: f64, iterations: usize, learning_rate: f64, seed: u64) -> Self {
        TsneParams {
            perplexity,
            iterations,
            learning_rate,
            seed,
            ..Default::default()
        }
    }

    fn validate(&self, m: usize) -> Result<()> {
        if m < 4 {
            return Err(Error::Parameter(format!("t-SNE needs at least 4 points, got {m}")));
        }
        let upper = (m - 1) as f64;
        if !(self.perplexity > 1.0 && self.perplexity < upper) {
            return Err(Error::Parameter(format!(
                "perplexity {} must lie strictly between 1 and {upper} for {m} points",
                self.perplexity
            )));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Parameter(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.iterations == 0 {
            return Err(Error::Parameter("iterations must be >= 1".into()));
        }
        if !(self.early_exaggeration >= 1.0) {
            return Err(Error::Parameter("early exaggeration must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsneDiagnostics<T: Scalar> {
    /// Perplexity reached by each point's bandwidth search.
    pub achieved_perplexity: Vec<T>,
    /// KL(P‖Q) after every iteration, against the unexaggerated P.
    pub kl_history: Vec<T>,
}

impl<T: Scalar> TsneDiagnostics<T> {
    pub fn final_kl(&self) -> T {
        *self.kl_history.last().expect("at least one iteration")
    }
}

/// 2D coordinates for a set of encoders.
#[derive(Debug, Clone, PartialEq)]
pub struct MapLayout<T: Scalar> {
    pub ids: Vec<String>,
    /// M×2.
    pub coords: DMatrix<T>,
    pub params: TsneParams,
    pub diagnostics: Option<TsneDiagnostics<T>>,
}

impl<T: Scalar> MapLayout<T> {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn point(&self, i: usize) -> (T, T) {
        (self.coords[(i, 0)], self.coords[(i, 1)])
    }

    /// `id,x,y` rows with a header.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Validation(format!("csv: {e}"));
        w.write_record(["id", "x", "y"]).map_err(csv_err)?;
        for (i, id) in self.ids.iter().enumerate() {
            let (x, y) = self.point(i);
            w.write_record([id.clone(), x.to_string(), y.to_string()])
                .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Validation(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Run parameters plus the final KL divergence, as a JSON object.
    pub fn params_json(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(&self.params).expect("params serialize");
        if let Some(d) = &self.diagnostics {
            v["final_kl"] = serde_json::json!(d.final_kl().as_f64());
        }
        v["n_points"] = serde_json::json!(self.len());
        v
    }
}

struct Bandwidth<T> {
    row: Vec<T>,
    perplexity: T,
}

/// Conditional distribution `p_{·|i}` for one point given the squared
/// distances to every other point (`self` excluded).
fn search_bandwidth<T: Scalar>(sq: &[T], target: T) -> Bandwidth<T> {
    let n = sq.len();
    let min = sq.iter().copied().fold(T::max_value().unwrap(), T::min);
    let shifted: Vec<T> = sq.iter().map(|&v| v - min).collect();
    let spread = shifted.iter().copied().fold(T::zero(), T::max);
    let target_h = target.ln();
    let eval = |beta: T| {
        let w: Vec<T> = shifted.iter().map(|&e| (-beta * e).exp()).collect();
        let z = w.iter().fold(T::zero(), |a, &b| a + b);
        let p: Vec<T> = w.iter().map(|&x| x / z).collect();
        let h = -p.iter().fold(T::zero(), |a, &q| a + crate::scalar::xlnx(q));
        (p, h)
    };
    if spread == T::zero() {
        let (row, h) = eval(T::zero());
        return Bandwidth {
            row,
            perplexity: h.exp(),
        };
    }
    let tol = T::lit(PERPLEXITY_TOLERANCE);
    let mut lo = T::lit(-LOG_BETA_SPAN);
    let mut hi = T::lit(LOG_BETA_SPAN);
    let mut best = eval(T::zero());
    for _ in 0..MAX_BISECTION_STEPS {
        let mid = (lo + hi) * T::lit(0.5);
        let beta = mid.exp() / spread;
        best = eval(beta);
        let perp = best.1.exp();
        if (perp - target).abs() < tol {
            break;
        }
        // entropy falls as beta grows
        if best.1 > target_h {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    debug_assert_eq!(best.0.len(), n);
    Bandwidth {
        perplexity: best.1.exp(),
        row: best.0,
    }
}

/// Symmetrized joint probabilities `P = max((P_{j|i} + P_{i|j}) / 2M, 1e-12)`
/// and the achieved per-point perplexities.
fn joint_probabilities<T: Scalar>(d: &DistanceMatrix<T>, perplexity: T) -> (DMatrix<T>, Vec<T>) {
    let m = d.len();
    let rows: Vec<Bandwidth<T>> = (0..m)
        .into_par_iter()
        .map(|i| {
            let sq: Vec<T> = (0..m)
                .filter(|&j| j != i)
                .map(|j| {
                    let v = d.get(i, j);
                    v * v
                })
                .collect();
            search_bandwidth(&sq, perplexity)
        })
        .collect();
    let mut cond = DMatrix::<T>::zeros(m, m);
    for (i, b) in rows.iter().enumerate() {
        let mut k = 0;
        for j in 0..m {
            if j != i {
                cond[(i, j)] = b.row[k];
                k += 1;
            }
        }
    }
    let denom = T::lit(2.0) * T::from_usize_lossy(m);
    let floor = T::lit(P_FLOOR);
    let p = DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            T::zero()
        } else {
            ((cond[(i, j)] + cond[(j, i)]) / denom).max(floor)
        }
    });
    (p, rows.into_iter().map(|b| b.perplexity).collect())
}

/// Exact t-SNE on a precomputed distance matrix. The input affinities use a
/// Gaussian kernel on squared distances.
pub fn tsne<T: Scalar>(d: &DistanceMatrix<T>, params: &TsneParams) -> Result<MapLayout<T>> {
    let m = d.len();
    params.validate(m)?;
    let (p, achieved) = joint_probabilities(d, T::lit(params.perplexity));
    for (i, &a) in achieved.iter().enumerate() {
        if (a - T::lit(params.perplexity)).abs() >= T::lit(PERPLEXITY_TOLERANCE) {
            log::warn!(
                "point {} reached perplexity {a} instead of {} (duplicate distances?)",
                d.ids()[i],
                params.perplexity
            );
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let std = T::lit(INIT_STD);
    let mut y = DMatrix::<T>::from_fn(m, 2, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        T::lit(z) * std
    });
    let mut update = DMatrix::<T>::zeros(m, 2);
    let mut gains = DMatrix::<T>::from_element(m, 2, T::one());
    let lr = T::lit(params.learning_rate);
    let min_gain = T::lit(MIN_GAIN);
    let mut kl_history = Vec::with_capacity(params.iterations);

    for iter in 0..params.iterations {
        let exaggeration = if iter < params.exaggeration_iterations {
            T::lit(params.early_exaggeration)
        } else {
            T::one()
        };
        let momentum = T::lit(if iter < params.momentum_switch {
            params.initial_momentum
        } else {
            params.final_momentum
        });

        let (grad, kl) = gradient(&p, &y, exaggeration);
        if let Some(bad) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite t-SNE gradient at iteration {iter} (point {})",
                d.ids()[bad % m]
            )));
        }
        for idx in 0..m * 2 {
            let g = grad[idx];
            gains[idx] = if update[idx] * g < T::zero() {
                gains[idx] + T::lit(0.2)
            } else {
                (gains[idx] * T::lit(0.8)).max(min_gain)
            };
            update[idx] = momentum * update[idx] - lr * gains[idx] * g;
            y[idx] += update[idx];
        }
        for c in 0..2 {
            let mean = y.column(c).sum() / T::from_usize_lossy(m);
            y.column_mut(c).add_scalar_mut(-mean);
        }
        kl_history.push(kl);
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("t-SNE produced non-finite coordinates".into()));
    }
    Ok(MapLayout {
        ids: d.ids().to_vec(),
        coords: y,
        params: params.clone(),
        diagnostics: Some(TsneDiagnostics {
            achieved_perplexity: achieved,
            kl_history,
        }),
    })
}

/// KL gradient with respect to `y` and KL(P‖Q) at the current `y`. Rows are
/// computed in parallel; each row reduces in index order.
fn gradient<T: Scalar>(p: &DMatrix<T>, y: &DMatrix<T>, exaggeration: T) -> (DMatrix<T>, T) {
    let m = y.nrows();
    let num: Vec<Vec<T>> = (0..m)
        .into_par_iter()
        .map(|i| {
            (0..m)
                .map(|j| {
                    if i == j {
                        T::zero()
                    } else {
                        let dx = y[(i, 0)] - y[(j, 0)];
                        let dy = y[(i, 1)] - y[(j, 1)];
                        T::one() / (T::one() + dx * dx + dy * dy)
                    }
                })
                .collect()
        })
        .collect();
    let z = num
        .iter()
        .map(|r| r.iter().fold(T::zero(), |a, &b| a + b))
        .fold(T::zero(), |a, b| a + b);
    let q_floor = T::lit(P_FLOOR);
    let rows: Vec<(T, T, T)> = (0..m)
        .into_par_iter()
        .map(|i| {
            let (mut gx, mut gy, mut kl) = (T::zero(), T::zero(), T::zero());
            for j in 0..m {
                if i == j {
                    continue;
                }
                let q = (num[i][j] / z).max(q_floor);
                let pij = p[(i, j)];
                let mult = (exaggeration * pij - num[i][j] / z) * num[i][j];
                gx += mult * (y[(i, 0)] - y[(j, 0)]);
                gy += mult * (y[(i, 1)] - y[(j, 1)]);
                kl += pij * (pij / q).ln();
            }
            (gx * T::lit(4.0), gy * T::lit(4.0), kl)
        })
        .collect();
    let mut grad = DMatrix::<T>::zeros(m, 2);
    let mut kl = T::zero();
    for (i, (gx, gy, k)) in rows.into_iter().enumerate() {
        grad[(i, 0)] = gx;
        grad[(i, 1)] = gy;
        kl += k;
    }
    (grad, kl)
}

/// Lloyd's k-means on the rows of `points`. The first center is row 0 and each
/// further center is the row farthest from the chosen ones, so the result is
/// deterministic. Returns a label per row.
pub fn kmeans<T: Scalar>(points: &DMatrix<T>, k: usize, max_iter: usize) -> Result<Vec<usize>> {
    let m = points.nrows();
    if k == 0 || k > m {
        return Err(Error::Parameter(format!("cannot form {k} clusters from {m} points")));
    }
    let sq = |a: usize, c: &DVector<T>| -> T {
        points
            .row(a)
            .iter()
            .zip(c.iter())
            .fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y))
    };
    let mut centers: Vec<DVector<T>> = vec![points.row(0).transpose()];
    while centers.len() < k {
        let far = (0..m)
            .map(|i| {
                let d = centers.iter().map(|c| sq(i, c)).fold(T::max_value().unwrap(), T::min);
                (i, d)
            })
            .fold((0, -T::one()), |best, cur| if cur.1 > best.1 { cur } else { best });
        centers.push(points.row(far.0).transpose());
    }
    let mut labels = vec![usize::MAX; m];
    for _ in 0..max_iter.max(1) {
        let mut changed = false;
        for (i, label) in labels.iter_mut().enumerate() {
            let best = (0..k)
                .map(|c| (c, sq(i, &centers[c])))
                .fold((0, T::max_value().unwrap()), |b, cur| if cur.1 < b.1 { cur } else { b })
                .0;
            if *label != best {
                *label = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<usize> = (0..m).filter(|&i| labels[i] == c).collect();
            if members.is_empty() {
                continue;
            }
            let mut sum = DVector::<T>::zeros(points.ncols());
            for &i in &members {
                sum += points.row(i).transpose();
            }
            *center = sum / T::from_usize_lossy(members.len());
        }
    }
    Ok(labels)
}

/// Fraction of points whose cluster's majority class matches their own class.
pub fn cluster_purity(labels: &[usize], truth: &[usize]) -> Result<f64> {
    if labels.len() != truth.len() || labels.is_empty() {
        return Err(Error::Shape(format!(
            "{} cluster labels vs {} class labels",
            labels.len(),
            truth.len()
        )));
    }
    let mut counts = std::collections::BTreeMap::<(usize, usize), usize>::new();
    for (&l, &t) in labels.iter().zip(truth) {
        *counts.entry((l, t)).or_default() += 1;
    }
    let mut best = std::collections::BTreeMap::<usize, usize>::new();
    for ((l, _), c) in counts {
        let e = best.entry(l).or_default();
        *e = (*e).max(c);
    }
    Ok(best.values().sum::<usize>() as f64 / labels.len() as f64)
}

/// Mean-centered PCA model.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel<T: Scalar> {
    pub mean: DVector<T>,
    /// k×N with orthonormal rows.
    pub components: DMatrix<T>,
    /// Variance along each component, `s² / (M − 1)`.
    pub explained_variance: DVector<T>,
}

impl<T: Scalar> PcaModel<T> {
    pub fn n_components(&self) -> usize {
        self.components.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform_row(&self, v: &[T]) -> Result<DVector<T>> {
        if v.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "vector has {} entries, model expects {}",
                v.len(),
                self.input_dim()
            )));
        }
        let centered = DVector::from_iterator(v.len(), v.iter().zip(self.mean.iter()).map(|(&a, &b)| a - b));
        Ok(&self.components * centered)
    }

    /// Projects each row of `x` (M×N) to an M×k matrix.
    pub fn transform(&self, x: &DMatrix<T>) -> Result<DMatrix<T>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "matrix has {} columns, model expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        let mut centered = x.clone();
        for mut row in centered.row_iter_mut() {
            row -= self.mean.transpose();
        }
        Ok(centered * self.components.transpose())
    }

    pub fn inverse_transform_row(&self, z: &DVector<T>) -> DVector<T> {
        self.components.tr_mul(z) + &self.mean
    }
}

/// PCA of the rows of `x` keeping `k` components. Component signs are fixed so
/// that each row's largest-magnitude entry is positive.
pub fn fit_pca_matrix<T: Scalar>(x: &DMatrix<T>, k: usize) -> Result<PcaModel<T>> {
    let (m, n) = x.shape();
    if m == 0 || n == 0 {
        return Err(Error::Shape(format!("cannot fit PCA on a {m}x{n} matrix")));
    }
    if k == 0 || k > m.min(n) {
        return Err(Error::Parameter(format!(
            "k = {k} must be between 1 and min(M, N) = {}",
            m.min(n)
        )));
    }
    let mean = DVector::from_iterator(n, x.column_iter().map(|c| c.sum() / T::from_usize_lossy(m)));
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let (s, v_t) = thin_svd_right(&centered)?;
    let mut comps = v_t.rows(0, k).transpose();
    canonicalize_signs(&mut comps);
    let dof = T::from_usize_lossy(m.saturating_sub(1).max(1));
    let explained_variance = DVector::from_iterator(k, s.iter().take(k).map(|&v| v * v / dof));
    Ok(PcaModel {
        mean,
        components: comps.transpose(),
        explained_variance,
    })
}

/// Stacks feature vectors as rows of an M×N matrix.
pub fn feature_matrix<T: Scalar>(vectors: &[FeatureVector<T>]) -> Result<DMatrix<T>> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::Parameter("no feature vectors".into()))?;
    let n = first.ambient_dim();
    if let Some(v) = vectors.iter().find(|v| v.ambient_dim() != n) {
        return Err(Error::Shape(format!(
            "{} has {} entries, expected {n}",
            v.encoder_id(),
            v.ambient_dim()
        )));
    }
    Ok(DMatrix::from_fn(vectors.len(), n, |i, j| vectors[i].values()[j]))
}

pub fn fit_pca<T: Scalar>(vectors: &[FeatureVector<T>], k: usize) -> Result<PcaModel<T>> {
    fit_pca_matrix(&feature_matrix(vectors)?, k)
}

pub fn apply_pca<T: Scalar>(model: &PcaModel<T>, vector: &FeatureVector<T>) -> Result<DVector<T>> {
    model.transform_row(vector.values())
}
