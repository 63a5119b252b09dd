//! ℓ1 geometry over feature vectors: distance matrices, nearest neighbors and
//! agglomerative clustering.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::qre::FeatureVector;
use crate::scalar::Scalar;

/// Symmetric M×M distance matrix with zero diagonal, stored as the strict
/// upper triangle and mirrored on access.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix<T: Scalar> {
    ids: Vec<String>,
    upper: Vec<T>,
}

fn upper_index(m: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < m);
    i * (2 * m - i - 1) / 2 + (j - i - 1)
}

impl<T: Scalar> DistanceMatrix<T> {
    /// Builds from a full matrix given row by row. Requires exact symmetry, a
    /// zero diagonal and nonnegative finite entries.
    pub fn from_full(ids: Vec<String>, rows: &[Vec<T>]) -> Result<Self> {
        let m = ids.len();
        if m == 0 {
            return Err(Error::Validation("distance matrix has no rows".into()));
        }
        if rows.len() != m || rows.iter().any(|r| r.len() != m) {
            return Err(Error::Shape(format!("expected {m}x{m} distances")));
        }
        check_unique(&ids)?;
        let mut upper = Vec::with_capacity(m * (m - 1) / 2);
        for i in 0..m {
            if rows[i][i] != T::zero() {
                return Err(Error::Validation(format!("nonzero diagonal at {}", ids[i])));
            }
            for j in i + 1..m {
                let v = rows[i][j];
                if v != rows[j][i] {
                    return Err(Error::Validation(format!(
                        "asymmetric entry between {} and {}",
                        ids[i], ids[j]
                    )));
                }
                if !(v >= T::zero()) || !v.is_finite() {
                    return Err(Error::Validation(format!(
                        "invalid distance {v} between {} and {}",
                        ids[i], ids[j]
                    )));
                }
                upper.push(v);
            }
        }
        Ok(DistanceMatrix { ids, upper })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        match i.cmp(&j) {
            std::cmp::Ordering::Equal => T::zero(),
            std::cmp::Ordering::Less => self.upper[upper_index(self.len(), i, j)],
            std::cmp::Ordering::Greater => self.upper[upper_index(self.len(), j, i)],
        }
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        (0..self.len())
            .map(|i| (0..self.len()).map(|j| self.get(i, j)).collect())
            .collect()
    }

    /// CSV with a header row `id,<ids...>` followed by one row per id.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["id".to_string()];
        header.extend(self.ids.iter().cloned());
        w.write_record(&header).map_err(csv_err)?;
        for (i, id) in self.ids.iter().enumerate() {
            let mut row = vec![id.clone()];
            row.extend((0..self.len()).map(|j| self.get(i, j).to_string()));
            w.write_record(&row).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Validation(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(text.as_bytes());
        let header = r.headers().map_err(csv_err)?.clone();
        let ids: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut rows = Vec::with_capacity(ids.len());
        for (i, rec) in r.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            if rec.get(0) != ids.get(i).map(String::as_str) {
                return Err(Error::Validation(format!(
                    "row {i} is labelled {:?}, header expects {:?}",
                    rec.get(0),
                    ids.get(i)
                )));
            }
            let row = rec
                .iter()
                .skip(1)
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map(T::lit)
                        .map_err(|e| Error::Validation(format!("bad distance {v:?}: {e}")))
                })
                .collect::<Result<Vec<T>>>()?;
            rows.push(row);
        }
        Self::from_full(ids, &rows)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Validation(format!("csv: {e}"))
}

fn check_unique(ids: &[String]) -> Result<()> {
    let mut sorted: Vec<&String> = ids.iter().collect();
    sorted.sort();
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Validation(format!("duplicate encoder id {}", w[0])));
    }
    Ok(())
}

fn check_comparable<T: Scalar>(a: &FeatureVector<T>, b: &FeatureVector<T>) -> Result<()> {
    check_same_dim(a, b)?;
    if a.epsilon() != b.epsilon() {
        return Err(Error::Comparability(format!(
            "{} used epsilon={:e} but {} used epsilon={:e}",
            a.encoder_id(),
            a.epsilon(),
            b.encoder_id(),
            b.epsilon()
        )));
    }
    Ok(())
}

fn check_same_dim<T: Scalar>(a: &FeatureVector<T>, b: &FeatureVector<T>) -> Result<()> {
    if a.ambient_dim() != b.ambient_dim() {
        return Err(Error::Comparability(format!(
            "{} has N={} but {} has N={}",
            a.encoder_id(),
            a.ambient_dim(),
            b.encoder_id(),
            b.ambient_dim()
        )));
    }
    Ok(())
}

/// `Σ_w |a_w − b_w|`.
pub fn l1_distance<T: Scalar>(a: &FeatureVector<T>, b: &FeatureVector<T>) -> Result<T> {
    check_comparable(a, b)?;
    Ok(l1_unchecked(a.values(), b.values()))
}

fn l1_unchecked<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .fold(T::zero(), |acc, (&x, &y)| acc + (x - y).abs())
}

/// All pairwise ℓ1 distances, in input order.
pub fn pairwise_distances<T: Scalar>(vectors: &[FeatureVector<T>]) -> Result<DistanceMatrix<T>> {
    pairwise_distances_with(vectors, true)
}

/// As [`pairwise_distances`]; with `check_epsilon == false` vectors built
/// under different ε are accepted. N must still agree.
pub fn pairwise_distances_with<T: Scalar>(
    vectors: &[FeatureVector<T>],
    check_epsilon: bool,
) -> Result<DistanceMatrix<T>> {
    if vectors.is_empty() {
        return Err(Error::Parameter("no feature vectors".into()));
    }
    for v in &vectors[1..] {
        if check_epsilon {
            check_comparable(&vectors[0], v)?;
        } else {
            check_same_dim(&vectors[0], v)?;
        }
    }
    let ids: Vec<String> = vectors.iter().map(|v| v.encoder_id().to_string()).collect();
    check_unique(&ids)?;
    let m = vectors.len();
    let rows: Vec<Vec<T>> = (0..m)
        .into_par_iter()
        .map(|i| {
            (i + 1..m)
                .map(|j| l1_unchecked(vectors[i].values(), vectors[j].values()))
                .collect()
        })
        .collect();
    Ok(DistanceMatrix {
        ids,
        upper: rows.into_iter().flatten().collect(),
    })
}

/// The `k` closest encoders to `target`, ascending by distance, ties broken by
/// id. The target itself is excluded.
pub fn nearest_neighbors<T: Scalar>(
    d: &DistanceMatrix<T>,
    target: &str,
    k: usize,
) -> Result<Vec<(String, T)>> {
    let t = d
        .index_of(target)
        .ok_or_else(|| Error::Lookup(format!("unknown encoder {target:?}")))?;
    if k > d.len() - 1 {
        return Err(Error::Parameter(format!(
            "k = {k} exceeds the {} other encoders",
            d.len() - 1
        )));
    }
    let mut others: Vec<(String, T)> = (0..d.len())
        .filter(|&j| j != t)
        .map(|j| (d.ids[j].clone(), d.get(t, j)))
        .collect();
    others.sort_by(|a, b| {
        a.1.partial_cmp(&b.1)
            .expect("distances are finite")
            .then_with(|| a.0.cmp(&b.0))
    });
    others.truncate(k);
    Ok(others)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Linkage {
    Single,
    Complete,
    #[default]
    Average,
}

impl std::str::FromStr for Linkage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "single" => Ok(Linkage::Single),
            "complete" => Ok(Linkage::Complete),
            "average" => Ok(Linkage::Average),
            other => Err(Error::Parameter(format!(
                "unknown linkage {other:?}; expected single, complete or average"
            ))),
        }
    }
}

impl std::fmt::Display for Linkage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Linkage::Single => "single",
            Linkage::Complete => "complete",
            Linkage::Average => "average",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DendrogramChild<T: Scalar> {
    Leaf(String),
    Node(Box<DendrogramNode<T>>),
}

impl<T: Scalar> DendrogramChild<T> {
    pub fn height(&self) -> T {
        match self {
            DendrogramChild::Leaf(_) => T::zero(),
            DendrogramChild::Node(n) => n.merge_height,
        }
    }

    pub fn member_count(&self) -> usize {
        match self {
            DendrogramChild::Leaf(_) => 1,
            DendrogramChild::Node(n) => n.member_count,
        }
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            DendrogramChild::Leaf(id) => out.push(id),
            DendrogramChild::Node(n) => {
                n.left.collect_leaves(out);
                n.right.collect_leaves(out);
            }
        }
    }

    fn write_newick(&self, out: &mut String, parent_height: T) {
        match self {
            DendrogramChild::Leaf(id) => out.push_str(&newick_label(id)),
            DendrogramChild::Node(n) => n.write_newick_inner(out),
        }
        let _ = write!(out, ":{}", parent_height - self.height());
    }
}

/// Internal node of a dendrogram.
#[derive(Debug, Clone, PartialEq)]
pub struct DendrogramNode<T: Scalar> {
    pub left: DendrogramChild<T>,
    pub right: DendrogramChild<T>,
    pub merge_height: T,
    pub member_count: usize,
}

impl<T: Scalar> DendrogramNode<T> {
    /// Leaf ids in left-to-right order.
    pub fn leaves(&self) -> Vec<&str> {
        let mut out = Vec::with_capacity(self.member_count);
        self.left.collect_leaves(&mut out);
        self.right.collect_leaves(&mut out);
        out
    }

    /// True when no child merges above its parent.
    pub fn is_monotone(&self) -> bool {
        [&self.left, &self.right].iter().all(|c| match c {
            DendrogramChild::Leaf(_) => true,
            DendrogramChild::Node(n) => n.merge_height <= self.merge_height && n.is_monotone(),
        })
    }

    /// Splits into `k` clusters by undoing the `k − 1` highest merges.
    /// Clusters are listed in leaf order.
    pub fn cut(&self, k: usize) -> Result<Vec<Vec<String>>> {
        if k == 0 || k > self.member_count {
            return Err(Error::Parameter(format!(
                "cannot cut {} leaves into {k} clusters",
                self.member_count
            )));
        }
        let root = DendrogramChild::Node(Box::new(self.clone()));
        let mut parts: Vec<&DendrogramChild<T>> = vec![&root];
        while parts.len() < k {
            // highest internal node; first in leaf order on ties
            let (pos, _) = parts
                .iter()
                .enumerate()
                .filter(|(_, c)| matches!(c, DendrogramChild::Node(_)))
                .fold(None::<(usize, T)>, |best, (i, c)| match best {
                    Some((_, h)) if h >= c.height() => best,
                    _ => Some((i, c.height())),
                })
                .expect("an internal node remains while parts < leaves");
            let DendrogramChild::Node(n) = parts[pos] else {
                unreachable!()
            };
            parts.splice(pos..=pos, [&n.left, &n.right]);
        }
        Ok(parts
            .into_iter()
            .map(|c| {
                let mut ids = Vec::new();
                c.collect_leaves(&mut ids);
                ids.into_iter().map(str::to_string).collect()
            })
            .collect())
    }

    /// Newick serialization with branch lengths in raw merge-height units.
    pub fn to_newick(&self) -> String {
        let mut out = String::new();
        self.write_newick_inner(&mut out);
        out.push(';');
        out
    }

    fn write_newick_inner(&self, out: &mut String) {
        out.push('(');
        self.left.write_newick(out, self.merge_height);
        out.push(',');
        self.right.write_newick(out, self.merge_height);
        out.push(')');
    }
}

fn newick_label(id: &str) -> String {
    let special = |c: char| c.is_whitespace() || "()[]':;,".contains(c);
    if id.is_empty() || id.chars().any(special) {
        format!("'{}'", id.replace('\'', "''"))
    } else {
        id.to_string()
    }
}

/// Agglomerative clustering with Lance–Williams updates. Among equal
/// distances the pair with the smallest `(i, j)` slot indices merges first;
/// the merged cluster keeps slot `i`.
pub fn hierarchical_cluster<T: Scalar>(
    d: &DistanceMatrix<T>,
    linkage: Linkage,
) -> Result<DendrogramNode<T>> {
    let m = d.len();
    if m < 2 {
        return Err(Error::Parameter(format!(
            "clustering needs at least 2 encoders, got {m}"
        )));
    }
    let mut dist = d.to_rows();
    let mut active: Vec<bool> = vec![true; m];
    let mut clusters: Vec<Option<DendrogramChild<T>>> = d
        .ids
        .iter()
        .map(|id| Some(DendrogramChild::Leaf(id.clone())))
        .collect();
    let mut sizes = vec![1usize; m];
    for _ in 0..m - 1 {
        let mut best: Option<(usize, usize, T)> = None;
        for i in 0..m {
            if !active[i] {
                continue;
            }
            for j in i + 1..m {
                if !active[j] {
                    continue;
                }
                if best.is_none_or(|(_, _, b)| dist[i][j] < b) {
                    best = Some((i, j, dist[i][j]));
                }
            }
        }
        let (i, j, height) = best.expect("at least two active clusters");
        let (ni, nj) = (T::from_usize_lossy(sizes[i]), T::from_usize_lossy(sizes[j]));
        for k in 0..m {
            if !active[k] || k == i || k == j {
                continue;
            }
            let (dik, djk) = (dist[i][k], dist[j][k]);
            let updated = match linkage {
                Linkage::Single => dik.min(djk),
                Linkage::Complete => dik.max(djk),
                Linkage::Average => (ni * dik + nj * djk) / (ni + nj),
            };
            dist[i][k] = updated;
            dist[k][i] = updated;
        }
        active[j] = false;
        let left = clusters[i].take().expect("active slot holds a cluster");
        let right = clusters[j].take().expect("active slot holds a cluster");
        sizes[i] += sizes[j];
        clusters[i] = Some(DendrogramChild::Node(Box::new(DendrogramNode {
            left,
            right,
            merge_height: height,
            member_count: sizes[i],
        })));
    }
    match clusters.into_iter().flatten().next() {
        Some(DendrogramChild::Node(root)) => Ok(*root),
        _ => unreachable!("m >= 2 always produces an internal root"),
    }
}
