use std::fs;
use std::path::{Path, PathBuf};

use encmap::distance::{hierarchical_cluster, nearest_neighbors};
use encmap::embedding::{sidecar_path, write_embedding_matrix, write_sidecar, EncoderRecord, Sidecar};
use encmap::prediction::{
    predictions_to_csv, reports_to_csv, run_prediction_suite, CvOptions, ScoreTable, SuiteOptions,
};
use encmap::projection::tsne;
use encmap::qre::{feature_vector, write_feature_vector};
use encmap::report::{plot_file_name, render_dendrogram, render_scatter, BoundingBox, PlotSpec};
use encmap::spectral::{compute_spectrum, write_spectrum};
use encmap::synthetic::{generate, NoiseGroup, SyntheticSpec, RNG_DESCRIPTION};
use encmap::{DensitySpectrum, Error, FeatureVector, Result};
use rayon::prelude::*;

use crate::args::Command;
use crate::config::Settings;
use crate::exit::{self, code_for, Exit};
use crate::inputs::{
    check_provenance, check_unique_stems, has_extension, load_distances, load_embedding,
    load_features, load_spectrum, stem, Loaded, MANIFEST_KEY,
};
use crate::manifest::Manifest;

pub fn dispatch(command: &Command, s: &Settings) -> std::result::Result<i32, Exit> {
    fs::create_dir_all(&s.output_dir).map_err(|e| {
        Exit::runtime(format!("cannot create {}: {e}", s.output_dir.display()))
    })?;
    match command {
        Command::Spectrum { inputs, .. } => spectrum(inputs, s),
        Command::Features { inputs, .. } => features(inputs, s),
        Command::Map {
            inputs,
            color_by,
            prefix,
            crop,
            highlight,
            ..
        } => map(inputs, s, color_by, prefix, crop.as_deref(), highlight),
        Command::Neighbors { inputs, target, k } => neighbors(inputs, s, target, *k),
        Command::Synth {
            n,
            groups,
            noise_scale,
            ..
        } => synth(s, *n, groups, *noise_scale),
        Command::Predict { inputs, scores, .. } => predict(inputs, scores, s),
        Command::Cluster {
            inputs,
            log_heights,
            ..
        } => cluster(inputs, s, *log_heights),
    }
}

/// 0 when nothing failed, 1 when some inputs failed, otherwise the code of
/// the first failure.
fn outcome(failures: &[Error], total: usize) -> i32 {
    match failures.first() {
        None => exit::OK,
        Some(_) if failures.len() < total => exit::PARTIAL,
        Some(e) => code_for(e),
    }
}

fn write_text(path: &Path, text: &str, manifest: &mut Manifest) -> std::result::Result<(), Exit> {
    fs::write(path, text).map_err(|e| Exit::from(Error::Io {
        path: path.to_path_buf(),
        source: e,
    }))?;
    manifest.output(path)
}

/// Copy of the input's sidecar pointing at this run's manifest.
fn derived_sidecar(mut sidecar: Sidecar, subcommand: &str) -> Sidecar {
    sidecar
        .extra
        .insert(MANIFEST_KEY.into(), Manifest::file_name(subcommand).into());
    sidecar
}

/// Runs `work` on every input in parallel; each success yields the paths it
/// wrote. Failures are recorded and do not stop the others.
fn per_input<F>(
    subcommand: &str,
    inputs: &[PathBuf],
    s: &Settings,
    work: F,
) -> std::result::Result<i32, Exit>
where
    F: Fn(&Path) -> Result<Vec<PathBuf>> + Sync,
{
    check_unique_stems(inputs)?;
    let mut manifest = Manifest::new(subcommand, s.to_json());
    let results: Vec<Result<Vec<PathBuf>>> = inputs.par_iter().map(|p| work(p)).collect();
    let mut failures = Vec::new();
    for (p, r) in inputs.iter().zip(results) {
        manifest.input(p);
        match r {
            Ok(outs) => {
                for o in outs {
                    manifest.output(&o)?;
                }
            }
            Err(e) => {
                log::error!("{}: {e}", p.display());
                manifest.error(p, &e);
                failures.push(e);
            }
        }
    }
    manifest.write(&s.output_dir)?;
    Ok(outcome(&failures, inputs.len()))
}

fn spectrum(inputs: &[PathBuf], s: &Settings) -> std::result::Result<i32, Exit> {
    per_input("spectrum", inputs, s, |p| {
        let loaded = load_embedding(p, s.normalize)?;
        let mut spec = compute_spectrum(&loaded.artifact, s.rank_tol)?;
        spec.set_encoder_id(loaded.artifact.encoder_id());
        let out = s.output_dir.join(format!("{}.espc", stem(p)));
        write_spectrum(&spec, &out)?;
        let sidecar = derived_sidecar(loaded.sidecar, "spectrum").with("rank_tol", s.rank_tol);
        write_sidecar(&out, &sidecar)?;
        Ok(vec![sidecar_path(&out), out])
    })
}

/// Spectrum from a `.espc` file or, for anything else, from an embedding file.
fn spectrum_for_features(p: &Path, s: &Settings) -> Result<Loaded<DensitySpectrum>> {
    if has_extension(p, "espc") {
        let loaded = load_spectrum(p, s.rank_tol)?;
        if s.normalize && !loaded.normalized() {
            return Err(Error::Parameter(format!(
                "{} was computed from unnormalized embeddings; --normalize needs the embedding file",
                p.display()
            )));
        }
        return Ok(loaded);
    }
    let loaded = load_embedding(p, s.normalize)?;
    let mut spec = compute_spectrum(&loaded.artifact, s.rank_tol)?;
    spec.set_encoder_id(loaded.artifact.encoder_id());
    Ok(Loaded {
        artifact: spec,
        sidecar: loaded.sidecar,
    })
}

fn features(inputs: &[PathBuf], s: &Settings) -> std::result::Result<i32, Exit> {
    per_input("features", inputs, s, |p| {
        let loaded = spectrum_for_features(p, s)?;
        let fv = feature_vector(&loaded.artifact, s.epsilon)?;
        let out = s.output_dir.join(format!("{}.qfv", stem(p)));
        write_feature_vector(&fv, &out)?;
        let sidecar = derived_sidecar(loaded.sidecar, "features")
            .with("epsilon", s.epsilon)
            .with("rank_tol", s.rank_tol)
            .with("qre_total", fv.qre_total());
        write_sidecar(&out, &sidecar)?;
        Ok(vec![sidecar_path(&out), out])
    })
}

fn map(
    inputs: &[PathBuf],
    s: &Settings,
    color_by: &[String],
    prefix: &str,
    crop: Option<&str>,
    highlight: &[String],
) -> std::result::Result<i32, Exit> {
    let crop: Option<BoundingBox> = crop.map(str::parse).transpose()?;
    // Reject bad attributes before anything is written.
    if let Some(attr) = color_by.iter().find(|a| !EncoderRecord::ATTRIBUTES.contains(&a.as_str())) {
        return Err(Exit::invocation(format!(
            "cannot color by {attr:?}; expected one of {:?}",
            EncoderRecord::ATTRIBUTES
        )));
    }
    let mut manifest = Manifest::new("map", s.to_json());
    let input = load_distances(inputs, &mut manifest, s.force)?;
    let d = &input.distances;
    let dir = &s.output_dir;
    write_text(&dir.join("distances.csv"), &d.to_csv()?, &mut manifest)?;

    let params = s.tsne_params(d.len());
    let layout = tsne(d, &params)?;
    write_text(&dir.join("layout.csv"), &layout.to_csv()?, &mut manifest)?;
    let mut params_json = serde_json::to_string_pretty(&layout.params_json()).expect("json");
    params_json.push('\n');
    write_text(&dir.join("layout_params.json"), &params_json, &mut manifest)?;
    manifest.detail("perplexity", params.perplexity);
    manifest.detail("n_encoders", d.len());
    if let Some(diag) = &layout.diagnostics {
        manifest.detail("final_kl", diag.final_kl());
    }

    for attr in color_by {
        let mut renders = vec![(plot_file_name(prefix, attr), None)];
        if let Some(b) = crop {
            renders.push((plot_file_name(&format!("{prefix}_crop"), attr), Some(b)));
        }
        for (name, crop) in renders {
            let spec = PlotSpec {
                layout: &layout,
                records: &input.records,
                color_by: attr.clone(),
                highlight: highlight.to_vec(),
                title: format!("{} encoders, colored by {attr}", d.len()),
                crop,
            };
            let path = dir.join(name);
            render_scatter(&spec, &path)?;
            manifest.output(&path)?;
        }
    }
    manifest.write(dir)?;
    Ok(outcome(&input.failures, inputs.len()))
}

fn neighbors(
    inputs: &[PathBuf],
    s: &Settings,
    target: &str,
    k: usize,
) -> std::result::Result<i32, Exit> {
    let mut manifest = Manifest::new("neighbors", s.to_json());
    let input = load_distances(inputs, &mut manifest, s.force)?;
    let found = nearest_neighbors(&input.distances, target, k)?;
    let width = found.iter().map(|(id, _)| id.len()).max().unwrap_or(0).max(10);
    println!("neighbors of {target}");
    println!("{:>4}  {:<width$}  distance", "rank", "encoder_id");
    let mut csv = String::from("rank,encoder_id,distance\n");
    for (rank, (id, dist)) in found.iter().enumerate() {
        println!("{:>4}  {id:<width$}  {dist:.12}", rank + 1);
        csv.push_str(&format!("{},{id},{dist:.12}\n", rank + 1));
    }
    write_text(&s.output_dir.join("neighbors.csv"), &csv, &mut manifest)?;
    manifest.detail("target", target);
    manifest.detail("k", k);
    manifest.write(&s.output_dir)?;
    Ok(outcome(&input.failures, inputs.len()))
}

/// `"low:high:count,..."`.
fn parse_groups(text: &str) -> Result<Vec<NoiseGroup<f64>>> {
    text.split(',')
        .map(|g| {
            let parts: Vec<&str> = g.trim().split(':').collect();
            let bad = || Error::Parameter(format!("bad group {g:?}; expected low:high:count"));
            match parts[..] {
                [lo, hi, count] => Ok(NoiseGroup {
                    sigma2_range: (lo.parse().map_err(|_| bad())?, hi.parse().map_err(|_| bad())?),
                    count: count.parse().map_err(|_| bad())?,
                }),
                _ => Err(bad()),
            }
        })
        .collect()
}

fn synth(s: &Settings, n: usize, groups: &str, noise_scale: f64) -> std::result::Result<i32, Exit> {
    let spec = SyntheticSpec {
        ambient_dim: n,
        groups: parse_groups(groups)?,
        noise_scale,
        seed: s.seed,
    };
    let mut manifest = Manifest::new("synth", s.to_json());
    manifest.detail("n", n);
    manifest.detail("groups", groups);
    manifest.detail("noise_scale", noise_scale);
    manifest.detail("rng", RNG_DESCRIPTION);
    let encoders = generate(&spec)?;
    let written: Vec<Result<PathBuf>> = encoders
        .par_iter()
        .map(|e| {
            let (lo, hi) = spec.groups[e.group].sigma2_range;
            let label = format!("sigma2 {lo}-{hi}");
            let mut record = EncoderRecord::new(e.matrix.encoder_id());
            record.encoder_type = Some(label.clone());
            record.dimensionality = Some(n as u64);
            let sidecar = derived_sidecar(Sidecar::new(record), "synth")
                .with("group", e.group)
                .with("group_label", label)
                .with("sigma2", e.sigma2)
                .with("seed", e.seed)
                .with("spec_seed", s.seed)
                .with("noise_scale", noise_scale)
                .with("rng", RNG_DESCRIPTION);
            let out = s.output_dir.join(format!("{}.emap", e.matrix.encoder_id()));
            write_embedding_matrix(&e.matrix, &out)?;
            write_sidecar(&out, &sidecar)?;
            Ok(out)
        })
        .collect();
    for w in written {
        let out = w?;
        manifest.output(&out)?;
        manifest.output(&sidecar_path(&out))?;
    }
    manifest.write(&s.output_dir)?;
    Ok(exit::OK)
}

fn predict(inputs: &[PathBuf], scores: &Path, s: &Settings) -> std::result::Result<i32, Exit> {
    let mut manifest = Manifest::new("predict", s.to_json());
    manifest.input(scores);
    let text = fs::read_to_string(scores).map_err(|e| Exit::from(Error::Io {
        path: scores.to_path_buf(),
        source: e,
    }))?;
    let table = ScoreTable::from_csv(&text)?;
    let (features, failures) = load_features(inputs, &mut manifest);
    if features.is_empty() {
        return Err(failures
            .into_iter()
            .next()
            .map(Exit::from)
            .unwrap_or_else(|| Exit::invocation("no inputs")));
    }
    check_provenance(&features, s.force)?;
    let vectors: Vec<FeatureVector> = features.into_iter().map(|f| f.artifact).collect();
    let opts = SuiteOptions {
        pca_dim: s.pca_dim,
        cv: CvOptions {
            folds: s.folds,
            l1_ratio: s.l1_ratio,
            seed: s.seed,
            ..CvOptions::default()
        },
    };
    let result = run_prediction_suite(&vectors, &table, &opts)?;
    let dir = &s.output_dir;
    write_text(&dir.join("prediction_report.csv"), &reports_to_csv(&result.reports)?, &mut manifest)?;
    write_text(&dir.join("predictions.csv"), &predictions_to_csv(&result.reports)?, &mut manifest)?;
    let skipped: Vec<serde_json::Value> = result
        .skipped
        .iter()
        .map(|(task, why)| serde_json::json!({ "task": task, "reason": why }))
        .collect();
    manifest.detail("skipped_tasks", skipped);
    manifest.write(dir)?;
    Ok(outcome(&failures, inputs.len()))
}

fn cluster(inputs: &[PathBuf], s: &Settings, log_heights: bool) -> std::result::Result<i32, Exit> {
    let mut manifest = Manifest::new("cluster", s.to_json());
    let input = load_distances(inputs, &mut manifest, s.force)?;
    let root = hierarchical_cluster(&input.distances, s.linkage())?;
    let dir = &s.output_dir;
    write_text(&dir.join("tree.nwk"), &format!("{}\n", root.to_newick()), &mut manifest)?;
    let svg = dir.join("dendrogram.svg");
    render_dendrogram(&root, log_heights, &svg)?;
    manifest.output(&svg)?;
    manifest.detail("log_heights", log_heights);
    manifest.write(dir)?;
    Ok(outcome(&input.failures, inputs.len()))
}
