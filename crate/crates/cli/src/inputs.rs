//! Loading artifacts together with their sidecars.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use encmap::distance::DistanceMatrix;
use encmap::embedding::{
    l2_normalize_rows, read_embedding_with_sidecar, read_sidecar, sidecar_path, EncoderRecord,
    Sidecar,
};
use encmap::qre::read_feature_vector;
use encmap::spectral::read_spectrum;
use encmap::{DensitySpectrum, EmbeddingMatrix, Error, FeatureVector, Result};
use rayon::prelude::*;

use crate::exit::Exit;
use crate::manifest::Manifest;

pub const MANIFEST_KEY: &str = "manifest";

/// A loaded artifact and its provenance.
pub struct Loaded<A> {
    pub artifact: A,
    pub sidecar: Sidecar,
}

impl<A> Loaded<A> {
    pub fn normalized(&self) -> bool {
        self.sidecar.normalized
    }
}

pub fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

pub fn has_extension(path: &Path, ext: &str) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case(ext))
}

/// Outputs are named after input stems, so stems must be distinct.
pub fn check_unique_stems(paths: &[PathBuf]) -> std::result::Result<(), Exit> {
    let mut seen = BTreeSet::new();
    for p in paths {
        if !seen.insert(stem(p)) {
            return Err(Exit::invocation(format!(
                "two inputs share the file stem {:?}; outputs would collide",
                stem(p)
            )));
        }
    }
    Ok(())
}

fn optional_sidecar(path: &Path) -> Result<Option<Sidecar>> {
    if sidecar_path(path).exists() {
        read_sidecar(path).map(Some)
    } else {
        Ok(None)
    }
}

fn fresh_sidecar(id: &str) -> Sidecar {
    Sidecar::new(EncoderRecord::new(id))
}

/// Reads an embedding file, normalizing rows when asked and not already done.
pub fn load_embedding(path: &Path, normalize: bool) -> Result<Loaded<EmbeddingMatrix>> {
    let (mut m, sidecar) = read_embedding_with_sidecar::<f64>(path)?;
    let mut sidecar = sidecar.unwrap_or_else(|| fresh_sidecar(m.encoder_id()));
    if sidecar.record.dimensionality.is_none() {
        sidecar.record.dimensionality = Some(m.n_cols() as u64);
    }
    if normalize && !m.is_normalized() {
        m = l2_normalize_rows(&m)?;
    }
    sidecar.normalized = m.is_normalized();
    Ok(Loaded {
        artifact: m,
        sidecar,
    })
}

pub fn load_spectrum(path: &Path, rank_tol: f64) -> Result<Loaded<DensitySpectrum>> {
    let mut s = read_spectrum::<f64>(path, rank_tol)?;
    let sidecar = optional_sidecar(path)?.unwrap_or_else(|| fresh_sidecar(s.encoder_id()));
    s.set_encoder_id(sidecar.record.encoder_id.clone());
    Ok(Loaded {
        artifact: s,
        sidecar,
    })
}

pub fn load_feature(path: &Path) -> Result<Loaded<FeatureVector>> {
    let mut fv = read_feature_vector::<f64>(path)?;
    let sidecar = optional_sidecar(path)?.unwrap_or_else(|| fresh_sidecar(fv.encoder_id()));
    fv.set_encoder_id(sidecar.record.encoder_id.clone());
    Ok(Loaded {
        artifact: fv,
        sidecar,
    })
}

/// Loads feature files in parallel. Failures are recorded in the manifest
/// and returned separately, in input order.
pub fn load_features(
    paths: &[PathBuf],
    manifest: &mut Manifest,
) -> (Vec<Loaded<FeatureVector>>, Vec<Error>) {
    let results: Vec<Result<Loaded<FeatureVector>>> =
        paths.par_iter().map(|p| load_feature(p)).collect();
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (p, r) in paths.iter().zip(results) {
        manifest.input(p);
        match r {
            Ok(l) => ok.push(l),
            Err(e) => {
                log::error!("{}: {e}", p.display());
                manifest.error(p, &e);
                failed.push(e);
            }
        }
    }
    (ok, failed)
}

/// Features are comparable only when built with the same ε and the same
/// normalization choice. With `force` a mismatch is only logged.
pub fn check_provenance(features: &[Loaded<FeatureVector>], force: bool) -> Result<()> {
    let Some(first) = features.first() else {
        return Ok(());
    };
    for f in &features[1..] {
        let why = if f.artifact.epsilon() != first.artifact.epsilon() {
            format!(
                "{} used epsilon={:e} but {} used epsilon={:e}",
                first.artifact.encoder_id(),
                first.artifact.epsilon(),
                f.artifact.encoder_id(),
                f.artifact.epsilon()
            )
        } else if f.normalized() != first.normalized() {
            format!(
                "{} has normalized={} but {} has normalized={}",
                first.artifact.encoder_id(),
                first.normalized(),
                f.artifact.encoder_id(),
                f.normalized()
            )
        } else {
            continue;
        };
        if force {
            log::warn!("comparing anyway (--force): {why}");
        } else {
            return Err(Error::Comparability(format!("{why}; pass --force to override")));
        }
    }
    Ok(())
}

/// Distances plus whatever encoder records came with them.
pub struct DistanceInput {
    pub distances: DistanceMatrix<f64>,
    pub records: Vec<EncoderRecord>,
    pub failures: Vec<Error>,
}

/// A single `.csv` input is read as a distance matrix; anything else is a
/// list of feature files.
pub fn load_distances(
    paths: &[PathBuf],
    manifest: &mut Manifest,
    force: bool,
) -> std::result::Result<DistanceInput, Exit> {
    if let [p] = paths {
        if has_extension(p, "csv") {
            manifest.input(p);
            let text = std::fs::read_to_string(p)
                .map_err(|e| Exit::from(Error::Io { path: p.clone(), source: e }))?;
            let distances = DistanceMatrix::from_csv(&text)?;
            let records = distances.ids().iter().map(EncoderRecord::new).collect();
            return Ok(DistanceInput {
                distances,
                records,
                failures: Vec::new(),
            });
        }
    }
    let (features, failures) = load_features(paths, manifest);
    if features.is_empty() {
        return Err(failures
            .into_iter()
            .next()
            .map(Exit::from)
            .unwrap_or_else(|| Exit::invocation("no inputs")));
    }
    check_provenance(&features, force)?;
    let vectors: Vec<FeatureVector> = features.iter().map(|f| f.artifact.clone()).collect();
    let distances = encmap::distance::pairwise_distances_with(&vectors, !force)?;
    Ok(DistanceInput {
        distances,
        records: features.into_iter().map(|f| f.sidecar.record).collect(),
        failures,
    })
}
