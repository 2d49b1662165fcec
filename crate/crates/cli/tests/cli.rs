use perturbench_core::canon;
use perturbench_core::harness::{save_suite, EpisodeRecord};
use perturbench_core::perturbation::{Dimension, PerturbationSpec, PerturbationVector};
use perturbench_core::scene::fixtures::scene_in;
use perturbench_core::scene::Suite;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_perturbench"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Scenes, catalogs and a config with `per_cell` variants per cell.
fn workspace(dir: &Path, per_cell: usize, evaluate: &str) -> PathBuf {
    let mut scenes = Vec::new();
    for suite in Suite::ALL {
        let id = format!("{}_0", suite.label().to_lowercase());
        let file = format!("{id}.json");
        canon::write_file(&dir.join(&file), &scene_in(&id, suite)).unwrap();
        scenes.push(format!("\"{file}\""));
    }
    let distractors: String = (0..8).map(|k| format!("distractor_{k}\t0.03\t0.03\t0.04\n")).collect();
    std::fs::write(dir.join("distractors.tsv"), distractors).unwrap();
    let textures: String = (0..4)
        .flat_map(|k| [format!("wall_{k}\tscene-wall\n"), format!("table_{k}\twork-surface\n")])
        .collect();
    std::fs::write(dir.join("textures.tsv"), textures).unwrap();
    let config = format!(
        r#"
[generate]
scenes = [{}]
distractors = "distractors.tsv"
textures = "textures.tsv"
per_cell = {per_cell}
workspace = {{ min = [-0.4, -0.4, 0.8], max = [0.4, 0.4, 1.2] }}
{evaluate}
"#,
        scenes.join(", ")
    );
    let path = dir.join("config.toml");
    std::fs::write(&path, config).unwrap();
    path
}

fn synthetic_evaluate(model: &str, p: f64) -> String {
    format!(
        r#"
[evaluate]
model = "{model}"
max_steps = 5
[evaluate.environment]
kind = "synthetic"
model = {{ form = "pairwise", base = {p} }}
"#
    )
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn generation_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let config = workspace(dir.path(), 6, "");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for run_dir in [&a, &b] {
        ok(&[
            "generate",
            "--seed",
            "7",
            "--run-dir",
            arg(run_dir),
            "--config",
            arg(&config),
        ]);
    }
    let (ta, tb) = (tree(&a), tree(&b));
    assert!(ta.len() > 100, "{} files", ta.len());
    assert_eq!(ta, tb);
    let counts = String::from_utf8(ta[Path::new("reports/candidate_counts.txt")].clone()).unwrap();
    assert!(counts.lines().last().unwrap().ends_with(" 168"), "{counts}");
}

#[test]
fn bad_config_exits_with_usage_code_and_key_path() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "[generate]\nscenes = [\"s.json\"]\nper_cell = \"many\"\n").unwrap();
    let out = run(&[
        "generate",
        "--seed",
        "1",
        "--run-dir",
        arg(dir.path()),
        "--config",
        arg(&config),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("generate.per_cell"));

    std::fs::write(&config, "[evaluate]\nmodel = \"m\"\ntrials_per_task = 0\n[evaluate.environment]\nkind = \"synthetic\"\nmodel = { form = \"pairwise\", base = 0.5 }\n").unwrap();
    let out = run(&[
        "evaluate",
        "--seed",
        "1",
        "--run-dir",
        arg(dir.path()),
        "--config",
        arg(&config),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("evaluate.trials_per_task"));

    let out = run(&["analyze", "--run-dir", arg(dir.path())]);
    assert_eq!(out.status.code(), Some(2), "missing --seed is a usage error");
}

#[test]
fn candidates_filter_stratify_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    let config = workspace(dir.path(), 5, "");
    ok(&[
        "generate",
        "--seed",
        "3",
        "--run-dir",
        arg(&run_dir),
        "--config",
        arg(&config),
    ]);

    let models = [("ref_a", 0.9), ("ref_b", 0.6), ("ref_c", 0.4), ("ref_d", 0.2)];
    let mut record_files = Vec::new();
    for (model, p) in models {
        let cfg = workspace(dir.path(), 5, &synthetic_evaluate(model, p));
        ok(&[
            "evaluate",
            "--seed",
            "3",
            "--run-dir",
            arg(&run_dir),
            "--config",
            arg(&cfg),
        ]);
        record_files.push(run_dir.join("records").join(format!("{model}.json")));
    }
    let files: Vec<&str> = record_files.iter().map(|p| arg(p)).collect();

    let mut args = vec![
        "generate",
        "--seed",
        "3",
        "--run-dir",
        arg(&run_dir),
        "--config",
        arg(&config),
        "--filter-records",
    ];
    args.extend(&files);
    let table = ok(&args);
    assert!(table.contains("Total"));
    let benchmark = perturbench_core::builder::load_manifest(&run_dir.join("manifest/benchmark")).unwrap();
    let candidates = perturbench_core::builder::load_manifest(&run_dir.join("manifest/candidates")).unwrap();
    assert!(!benchmark.entries.is_empty());
    assert!(benchmark.entries.len() < candidates.entries.len());

    let mut args = vec!["stratify", "--seed", "3", "--run-dir", arg(&run_dir), "--records"];
    args.extend(&files);
    ok(&args);
    let strata: BTreeMap<String, u8> = canon::read_file(&run_dir.join("reports/strata.json")).unwrap();
    assert!(strata.values().all(|l| (1..=5).contains(l)));

    let mut args = vec!["report", "--seed", "3", "--run-dir", arg(&run_dir), "--records"];
    args.extend(&files);
    let table = ok(&args);
    assert!(table.contains("ref_a") && table.contains("drop"));
    assert!(run_dir.join("reports/report.json").exists());
    assert!(run_dir.join("reports/level_curves.json").exists());
}

#[test]
fn pair_grid_analysis() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("pairs.toml");
    std::fs::write(
        &config,
        r#"
[evaluate]
model = "synthetic"
trials_per_task = 400
parallelism = 4
pairs = ["layout", "camera", "light"]
[evaluate.environment]
kind = "synthetic"
[evaluate.environment.model]
form = "pairwise"
base = 0.95
effects = { layout = -0.2, camera = -0.3, light = -0.1 }
interactions = { "layout,camera" = -0.15, "layout,light" = -0.1, "camera,light" = -0.1 }
"#,
    )
    .unwrap();
    let run_dir = dir.path().join("run");
    ok(&[
        "evaluate",
        "--seed",
        "11",
        "--run-dir",
        arg(&run_dir),
        "--config",
        arg(&config),
    ]);
    ok(&[
        "analyze",
        "--seed",
        "11",
        "--run-dir",
        arg(&run_dir),
        "--pairs",
        "layout,camera,light",
        "--png",
    ]);
    let reports = run_dir.join("reports");
    let analysis: serde_json::Value = canon::read_file(&reports.join("analysis.json")).unwrap();
    let pairs = analysis[0]["pairs"].as_array().unwrap();
    assert_eq!(pairs.len(), 3);
    for p in pairs {
        assert!(p["gap"]["delta"].as_f64().unwrap() < 0.0, "{p}");
    }
    assert!(reports.join("heatmap_synthetic.png").exists());
    assert!(reports.join("gap_synthetic.png").exists());
    let text = std::fs::read_to_string(reports.join("analysis.txt")).unwrap();
    assert!(text.contains("Layout & Camera"), "{text}");
}

#[test]
fn report_reproduces_published_drops() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    let rates = [765u64, 11, 41, 268, 44, 253, 193, 316];
    let conditions: Vec<Option<Dimension>> = std::iter::once(None)
        .chain(Dimension::TABLE_ORDER.iter().copied().map(Some))
        .collect();
    let mut records = Vec::new();
    for (cond, wins) in conditions.iter().zip(rates) {
        let specs = cond.map(PerturbationSpec::nominal).into_iter().collect();
        let v = PerturbationVector::new(specs).unwrap();
        for k in 0..1000u64 {
            records.push(EpisodeRecord {
                task_id: cond.map_or("base".to_string(), |d| d.as_str().to_string()),
                model: "OpenVLA".into(),
                trial: k as u32,
                perturbation: v.clone(),
                success: k < wins,
                steps: 1,
                seed: k,
                trajectory: None,
                error: None,
            });
        }
    }
    let file = dir.path().join("openvla.json");
    save_suite(&file, &records).unwrap();
    let table = ok(&[
        "report",
        "--seed",
        "0",
        "--run-dir",
        arg(&run_dir),
        "--records",
        arg(&file),
    ]);
    let drops: Vec<&str> = table
        .lines()
        .find(|l| l.split_whitespace().next() == Some("drop"))
        .unwrap()
        .split_whitespace()
        .skip(1)
        .collect();
    assert_eq!(drops, ["75.4", "72.4", "49.7", "72.1", "51.2", "57.2", "44.9"]);
}
