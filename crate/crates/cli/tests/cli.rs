use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use encmap::embedding::{write_embedding_matrix, write_sidecar, EncoderRecord, Sidecar};
use encmap::qre::{read_feature_vector, DEFAULT_EPSILON};
use encmap::synthetic::{base_matrix, perturb};
use serde_json::Value;

fn encmap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_encmap"))
        .args(args)
        .env_remove("ENCMAP_OUTPUT_DIR")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn files(dir: &Path, ext: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == ext))
        .collect();
    v.sort();
    v
}

fn manifest(dir: &Path, subcommand: &str) -> Value {
    let text = fs::read_to_string(dir.join(format!("{subcommand}.manifest.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

/// `synth` into `dir/emb`, returning the embedding paths.
fn synth(dir: &Path, n: &str, groups: &str) -> Vec<PathBuf> {
    let emb = dir.join("emb");
    let out = encmap(&["synth", "--n", n, "--groups", groups, "--output-dir", s(&emb)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    files(&emb, "emap")
}

fn run_ok(args: &[&str]) -> Output {
    let out = encmap(args);
    assert_eq!(code(&out), 0, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn features(inputs: &[PathBuf], out: &Path, extra: &[&str]) -> Vec<PathBuf> {
    let mut args = vec!["features"];
    args.extend(inputs.iter().map(|p| s(p)));
    args.extend(["--output-dir", s(out)]);
    args.extend(extra);
    run_ok(&args);
    files(out, "qfv")
}

#[test]
fn spectrum_collects_per_file_errors() {
    let dir = tempfile::tempdir().unwrap();
    let mut inputs = synth(dir.path(), "12", "0:1:3");
    let out = dir.path().join("spec");
    run_ok(&["spectrum", s(&inputs[0]), "--output-dir", s(&out)]);
    assert_eq!(files(&out, "espc").len(), 1);
    assert!(out.join("spectrum.manifest.json").exists());

    let corrupt = dir.path().join("broken.emap");
    let bytes = fs::read(&inputs[1]).unwrap();
    fs::write(&corrupt, &bytes[..bytes.len() - 3]).unwrap();
    inputs[1] = corrupt;
    let out = dir.path().join("spec3");
    let mut args = vec!["spectrum", "--output-dir", s(&out)];
    args.extend(inputs.iter().map(|p| s(p)));
    assert_eq!(code(&encmap(&args)), 1);
    assert_eq!(files(&out, "espc").len(), 2);
    let m = manifest(&out, "spectrum");
    assert_eq!(m["errors"].as_array().unwrap().len(), 1);
    assert!(m["errors"][0]["path"].as_str().unwrap().ends_with("broken.emap"));
    assert_eq!(m["outputs"].as_array().unwrap().len(), 4);

    let out = dir.path().join("none");
    assert_eq!(code(&encmap(&["spectrum", s(&inputs[1]), "--output-dir", s(&out)])), 3);
}

#[test]
fn epsilon_defaults_and_propagates() {
    let dir = tempfile::tempdir().unwrap();
    let inputs = synth(dir.path(), "10", "0:1:2");
    let out = dir.path().join("default");
    let fvs = features(&inputs, &out, &[]);
    assert_eq!(manifest(&out, "features")["parameters"]["epsilon"], (-12.0f64).exp());
    assert_eq!(DEFAULT_EPSILON, (-12.0f64).exp());
    let fv = read_feature_vector::<f64>(&fvs[0]).unwrap();
    assert_eq!(fv.epsilon(), (-12.0f64).exp());

    let out = dir.path().join("custom");
    let fvs = features(&inputs, &out, &["--epsilon", "1e-6"]);
    assert_eq!(read_feature_vector::<f64>(&fvs[1]).unwrap().epsilon(), 1e-6);
    let meta: Value = serde_json::from_str(&fs::read_to_string(format!("{}.meta.json", fvs[1].display())).unwrap()).unwrap();
    assert_eq!(meta["epsilon"], 1e-6);
    assert_eq!(meta["manifest"], "features.manifest.json");
    assert_eq!(meta["encoder_type"], "sigma2 0-1");
}

#[test]
fn spectra_and_embeddings_give_the_same_features() {
    let dir = tempfile::tempdir().unwrap();
    let inputs = synth(dir.path(), "16", "0:1:3");
    let spec = dir.path().join("spec");
    let mut args = vec!["spectrum", "--output-dir", s(&spec)];
    args.extend(inputs.iter().map(|p| s(p)));
    run_ok(&args);
    let via_spectra = features(&files(&spec, "espc"), &dir.path().join("a"), &[]);
    let direct = features(&inputs, &dir.path().join("b"), &[]);
    for (a, b) in via_spectra.iter().zip(&direct) {
        let a = encmap::qre::read_feature_vector::<f64>(a).unwrap();
        let b = encmap::qre::read_feature_vector::<f64>(b).unwrap();
        let d: f64 = a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).sum();
        assert!(d < 1e-12, "{d}");
    }
}

#[test]
fn map_refuses_mixed_epsilon_without_force() {
    let dir = tempfile::tempdir().unwrap();
    let inputs = synth(dir.path(), "10", "0:1:4");
    let feat = dir.path().join("feat");
    let mut fvs = features(&inputs[..3], &feat, &[]);
    fvs.extend(features(&inputs[3..], &dir.path().join("odd"), &["--epsilon", "1e-7"]));
    let out = dir.path().join("map");
    let mut args = vec!["map", "--output-dir", s(&out)];
    args.extend(fvs.iter().map(|p| s(p)));
    let refused = encmap(&args);
    assert_eq!(code(&refused), 3);
    assert!(String::from_utf8_lossy(&refused.stderr).contains("--force"));

    args.push("--force");
    run_ok(&args);
    let layout = fs::read_to_string(out.join("layout.csv")).unwrap();
    assert_eq!(layout.lines().count(), 5);
    assert!(out.join("map_encoder_type.svg").exists());
    assert_eq!(manifest(&out, "map")["details"]["perplexity"], 1.5);
}

#[test]
fn map_writes_crops_and_one_plot_per_attribute() {
    let dir = tempfile::tempdir().unwrap();
    let fvs = features(&synth(dir.path(), "8", "0:1:3,3:4:3"), &dir.path().join("f"), &[]);
    let out = dir.path().join("map");
    let mut args = vec![
        "map", "--output-dir", s(&out), "--color-by", "encoder_type", "--color-by", "dimensionality",
        "--prefix", "fig", "--crop=-1000,1000,-1000,1000", "--highlight", "synth-g1-002",
        "--iterations", "300",
    ];
    args.extend(fvs.iter().map(|p| s(p)));
    run_ok(&args);
    for name in ["fig_encoder_type.svg", "fig_dimensionality.svg", "fig_crop_encoder_type.svg"] {
        assert!(out.join(name).exists(), "{name}");
    }
    let svg = fs::read_to_string(out.join("fig_encoder_type.svg")).unwrap();
    assert_eq!(svg.matches("class=\"marker\"").count(), 6);
    assert!(svg.contains("synth-g1-002"));

    let fresh = dir.path().join("map2");
    let mut bad = args.clone();
    bad[2] = s(&fresh);
    bad.extend(["--color-by", "flavor"]);
    assert_eq!(code(&encmap(&bad)), 2);
    assert!(!fresh.join("layout.csv").exists() && !fresh.join("fig_encoder_type.svg").exists());
}

/// Group 0 moves rows a short step, group 1 a long one.
fn two_step_groups(dir: &Path, n: usize) -> Vec<PathBuf> {
    let base = base_matrix::<f64>(n).unwrap();
    let mut paths = Vec::new();
    for (g, step) in [(0, 0.1), (1, 0.6)] {
        for i in 0..4 {
            let mut m = perturb(&base, 1.0, step, 100 * g + i).unwrap();
            let id = format!("step{g}-{i}");
            m.set_encoder_id(&id);
            let path = dir.join(format!("{id}.emap"));
            write_embedding_matrix(&m, &path).unwrap();
            let mut record = EncoderRecord::new(&id);
            record.encoder_type = Some(format!("step{g}"));
            write_sidecar(&path, &Sidecar::new(record)).unwrap();
            paths.push(path);
        }
    }
    paths
}

#[test]
fn neighbors_table_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let emb = dir.path().join("emb");
    fs::create_dir_all(&emb).unwrap();
    let mut inputs = two_step_groups(&emb, 24);
    let copy = emb.join("copy.emap");
    fs::copy(&inputs[0], &copy).unwrap();
    inputs.push(copy);
    let fvs = features(&inputs, &dir.path().join("f"), &[]);

    let out = dir.path().join("nb");
    let mut args = vec!["neighbors", "--output-dir", s(&out), "--target", "step0-0", "--k", "4"];
    args.extend(fvs.iter().map(|p| s(p)));
    let table = String::from_utf8(run_ok(&args).stdout).unwrap();
    let rows: Vec<&str> = table.lines().skip(2).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[0].contains("copy") && rows[0].ends_with("0.000000000000"), "{table}");
    for r in &rows[1..] {
        assert!(r.contains("step0-"), "{table}");
    }
    let csv = fs::read_to_string(out.join("neighbors.csv")).unwrap();
    assert!(csv.starts_with("rank,encoder_id,distance\n1,copy,0.000000000000\n"));

    args[6] = "9";
    assert_eq!(code(&encmap(&args)), 2);
    args[6] = "1";
    args[4] = "nobody";
    assert_eq!(code(&encmap(&args)), 2);

    // distances CSV input gives the same answer
    let map = dir.path().join("map");
    let mut margs = vec!["map", "--output-dir", s(&map), "--iterations", "50"];
    margs.extend(fvs.iter().map(|p| s(p)));
    run_ok(&margs);
    let dcsv = map.join("distances.csv");
    let again = run_ok(&["neighbors", s(&dcsv), "--target", "step0-0", "--k", "4", "--output-dir", s(&out)]);
    assert_eq!(String::from_utf8(again.stdout).unwrap(), table);
}

#[test]
fn cluster_writes_tree_and_dendrogram() {
    let dir = tempfile::tempdir().unwrap();
    let emb = dir.path().join("emb");
    fs::create_dir_all(&emb).unwrap();
    let fvs = features(&two_step_groups(&emb, 20), &dir.path().join("f"), &[]);
    let out = dir.path().join("cl");
    let mut args = vec!["cluster", "--output-dir", s(&out), "--linkage", "average", "--log-heights"];
    args.extend(fvs.iter().map(|p| s(p)));
    run_ok(&args);
    let tree = fs::read_to_string(out.join("tree.nwk")).unwrap();
    assert!(tree.trim_end().ends_with(';'));
    for i in 0..4 {
        assert!(tree.contains(&format!("step1-{i}")));
    }
    let svg = fs::read_to_string(out.join("dendrogram.svg")).unwrap();
    assert_eq!(svg.matches("class=\"junction\"").count(), 7);
    args[4] = "ward";
    assert_eq!(code(&encmap(&args)), 2);
}

#[test]
fn config_file_and_environment() {
    let dir = tempfile::tempdir().unwrap();
    let inputs = synth(dir.path(), "8", "0:1:2");
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "epsilon = 1e-4\nrank-tol = 1e-11\n").unwrap();
    let out = dir.path().join("cfg");
    let fvs = features(&inputs, &out, &["--config", s(&cfg), "--rank-tol", "1e-10"]);
    let params = &manifest(&out, "features")["parameters"];
    assert_eq!(params["epsilon"], 1e-4);
    assert_eq!(params["rank_tol"], 1e-10);
    assert_eq!(read_feature_vector::<f64>(&fvs[0]).unwrap().epsilon(), 1e-4);

    fs::write(&cfg, "epsilom = 1e-4\n").unwrap();
    assert_eq!(code(&encmap(&["features", s(&inputs[0]), "--config", s(&cfg)])), 2);

    let env_out = dir.path().join("from-env");
    let status = Command::new(env!("CARGO_BIN_EXE_encmap"))
        .args(["features", s(&inputs[0])])
        .env("ENCMAP_OUTPUT_DIR", &env_out)
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(files(&env_out, "qfv").len(), 1);
}

#[test]
fn invalid_invocations_exit_with_two() {
    assert_eq!(code(&encmap(&["features"])), 2);
    assert_eq!(code(&encmap(&["map", "x.qfv", "--perplexityy", "3"])), 2);
    assert_eq!(code(&encmap(&["transmogrify"])), 2);
    assert_eq!(code(&encmap(&["--help"])), 0);
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&encmap(&["synth", "--groups", "1:0:3", "--output-dir", s(dir.path())])), 2);
}

#[test]
fn thread_count_does_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let inputs = synth(dir.path(), "20", "0:1:4");
    let one = features(&inputs, &dir.path().join("one"), &["--jobs", "1"]);
    let four = features(&inputs, &dir.path().join("four"), &["--jobs", "4"]);
    for (a, b) in one.iter().zip(&four) {
        assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
    }
}

#[test]
fn predict_writes_reports_and_lists_skipped_tasks() {
    let dir = tempfile::tempdir().unwrap();
    let inputs = synth(dir.path(), "12", "0:1:6,3:4:6");
    let fvs = features(&inputs, &dir.path().join("f"), &[]);
    let mut scores = String::from("encoder_id,task_name,score\n");
    for (i, p) in fvs.iter().enumerate() {
        let fv = read_feature_vector::<f64>(p).unwrap();
        let id = p.file_stem().unwrap().to_str().unwrap();
        scores.push_str(&format!("{id},qre,{}\n", fv.qre_total()));
        if i < 4 {
            scores.push_str(&format!("{id},tiny,{i}\n"));
        }
    }
    let scores_path = dir.path().join("scores.csv");
    fs::write(&scores_path, scores).unwrap();
    let out = dir.path().join("pred");
    let mut args = vec!["predict", "--scores", s(&scores_path), "--output-dir", s(&out), "--folds", "4"];
    args.extend(fvs.iter().map(|p| s(p)));
    run_ok(&args);
    let report = fs::read_to_string(out.join("prediction_report.csv")).unwrap();
    assert_eq!(report.lines().count(), 2);
    assert!(report.lines().nth(1).unwrap().starts_with("qre,"));
    let preds = fs::read_to_string(out.join("predictions.csv")).unwrap();
    assert_eq!(preds.lines().count(), 13);
    let m = manifest(&out, "predict");
    assert_eq!(m["details"]["skipped_tasks"][0]["task"], "tiny");
    assert_eq!(m["parameters"]["folds"], 4);
}
