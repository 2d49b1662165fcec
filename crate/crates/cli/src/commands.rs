use crate::config::{Config, EnvironmentConfig, EvaluateConfig, PolicyConfig};
use crate::Common;
use anyhow::{bail, Context, Result};
use perturbench_core::builder::{
    self, filter_and_balance, generate_variants, load_manifest, outcomes_from_records, save_manifest, Generators,
};
use perturbench_core::canon;
use perturbench_core::harness::{
    self, Environment, EpisodeConfig, EpisodeRecord, EpisodeTask, ObservationFilter, Policy, SuiteConfig, SyntheticEnv,
    WireConnection, WireEnvironment, WirePolicy, ZeroPolicy,
};
use perturbench_core::language::{RewriteLexicon, Rewriter, RewriterClient};
use perturbench_core::perturbation::{Dimension, PerturbationSpec, PerturbationVector};
use perturbench_core::report::{self, ColorScale};
use perturbench_core::scene::{self, SceneSpec};
use perturbench_core::scene_perturb::{Aabb, DistractorRegistry, TextureRegistry};
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Duration;

const CANDIDATES: &str = "candidates";
const BENCHMARK: &str = "benchmark";

fn manifest_dir(run: &Path, stage: &str) -> PathBuf {
    run.join("manifest").join(stage)
}

fn records_dir(run: &Path) -> PathBuf {
    run.join("records")
}

fn reports_dir(run: &Path) -> Result<PathBuf> {
    let d = run.join("reports");
    std::fs::create_dir_all(&d).with_context(|| format!("creating {}", d.display()))?;
    Ok(d)
}

/// Keeps file names portable whatever the model is called.
fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_scenes(paths: &[PathBuf]) -> Result<Vec<SceneSpec>> {
    paths
        .iter()
        .map(|p| {
            let s: SceneSpec = canon::read_file(p).with_context(|| format!("reading scene {}", p.display()))?;
            let problems = scene::validate(&s);
            if let Some(v) = problems.first() {
                bail!("scene {} is invalid: {v}", p.display());
            }
            Ok(s)
        })
        .collect()
}

fn load_records(run: &Path, files: &[PathBuf]) -> Result<Vec<EpisodeRecord>> {
    let files = if files.is_empty() {
        let dir = records_dir(run);
        let mut found: Vec<PathBuf> = std::fs::read_dir(&dir)
            .with_context(|| format!("listing {}", dir.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        found.sort();
        found
    } else {
        files.to_vec()
    };
    if files.is_empty() {
        bail!("no record files given and none under {}", records_dir(run).display());
    }
    let mut out = Vec::new();
    for f in &files {
        out.extend(harness::load_suite(f).with_context(|| format!("reading records {}", f.display()))?);
    }
    Ok(out)
}

pub fn generate(common: &Common, config: &Path, filter_records: &[PathBuf], ceiling: Option<f64>) -> Result<()> {
    let cfg = Config::load(config)?;
    let reports = reports_dir(&common.run_dir)?;
    if !filter_records.is_empty() {
        let candidates = load_manifest(&manifest_dir(&common.run_dir, CANDIDATES)).context("loading candidates")?;
        let records = load_records(&common.run_dir, filter_records)?;
        let outcomes = outcomes_from_records(&records);
        let rule = ceiling.unwrap_or(cfg.filter.ceiling_rule);
        let kept = filter_and_balance(&candidates, &outcomes, rule, common.seed)?;
        save_manifest(&manifest_dir(&common.run_dir, BENCHMARK), &kept)?;
        let table = kept.counts.to_string();
        write_text(&reports.join("benchmark_counts.txt"), &table)?;
        print!("{table}");
        return Ok(());
    }

    let g = cfg.generate()?;
    let scenes = load_scenes(&g.scenes)?;
    let rewriter: Box<dyn Rewriter> = match (&g.rewriter_url, &g.lexicon) {
        (Some(url), _) => Box::new(RewriterClient::from_env(url.clone(), Duration::from_secs(60))?),
        (None, Some(p)) => Box::new(RewriteLexicon::load(p)?),
        (None, None) => Box::new(RewriteLexicon::builtin()),
    };
    let gens = Generators {
        distractors: match &g.distractors {
            Some(p) => DistractorRegistry::load(p)?,
            None => DistractorRegistry::new(Vec::new())?,
        },
        textures: match &g.textures {
            Some(p) => TextureRegistry::load(p)?,
            None => TextureRegistry::new(Vec::new())?,
        },
        workspace: Aabb {
            min: g.workspace.min,
            max: g.workspace.max,
        },
        rewriter,
    };
    let manifest = generate_variants(&scenes, &g.dimensions, g.per_cell, common.seed, &gens)?;
    save_manifest(&manifest_dir(&common.run_dir, CANDIDATES), &manifest)?;
    let table = manifest.counts.to_string();
    write_text(&reports.join("candidate_counts.txt"), &table)?;
    print!("{table}");
    for s in &manifest.shortfalls {
        eprintln!(
            "shortfall: {} / {} produced {} of {}",
            s.suite.label(),
            s.dimension.label(),
            s.produced,
            s.requested
        );
    }
    Ok(())
}

/// Every base task alone, under each listed dimension, and under each pair.
fn pair_tasks(bases: &[(String, String)], dims: &[Dimension]) -> Vec<EpisodeTask> {
    let mut subsets: Vec<Vec<Dimension>> = vec![vec![]];
    subsets.extend(dims.iter().map(|d| vec![*d]));
    for (k, a) in dims.iter().enumerate() {
        for b in &dims[k + 1..] {
            subsets.push(vec![*a, *b]);
        }
    }
    let mut out = Vec::new();
    for (id, instruction) in bases {
        for s in &subsets {
            let name = if s.is_empty() {
                "none".to_string()
            } else {
                s.iter().map(|d| d.as_str()).collect::<Vec<_>>().join("+")
            };
            let specs = s.iter().map(|d| PerturbationSpec::nominal(*d)).collect();
            let mut task = EpisodeTask::new(
                format!("{id}@{name}"),
                PerturbationVector::new(specs).expect("distinct dimensions"),
            );
            task.instruction = instruction.clone();
            out.push(task);
        }
    }
    out
}

fn make_environment(e: &EvaluateConfig, timeout: Duration) -> Result<Box<dyn Environment>, harness::HarnessError> {
    let black: BTreeSet<String> = e.black_views.iter().cloned().collect();
    let inner: Box<dyn Environment> = match &e.environment {
        EnvironmentConfig::Synthetic { model } => Box::new(SyntheticEnv::new(model.clone())),
        EnvironmentConfig::Command { program, args } => Box::new(WireEnvironment::new(WireConnection::spawn(
            std::process::Command::new(program).args(args),
            timeout,
        )?)),
        EnvironmentConfig::Tcp { address } => {
            Box::new(WireEnvironment::new(WireConnection::tcp(address.as_str(), timeout)?))
        }
    };
    Ok(Box::new(ObservationFilter::new(inner, black)))
}

fn make_policy(e: &EvaluateConfig, timeout: Duration) -> Result<Box<dyn Policy>, harness::HarnessError> {
    Ok(match &e.policy {
        PolicyConfig::Zero => Box::new(ZeroPolicy),
        PolicyConfig::Command { program, args } => Box::new(WirePolicy::new(WireConnection::spawn(
            std::process::Command::new(program).args(args),
            timeout,
        )?)),
        PolicyConfig::Tcp { address } => Box::new(WirePolicy::new(WireConnection::tcp(address.as_str(), timeout)?)),
    })
}

pub fn evaluate(common: &Common, config: &Path, manifest: Option<&Path>) -> Result<()> {
    let cfg = Config::load(config)?;
    let e = cfg.evaluate()?;
    let tasks = if let Some(dims) = &e.pairs {
        let bases: Vec<(String, String)> = match &cfg.generate {
            Some(g) => load_scenes(&g.scenes)?
                .into_iter()
                .map(|s| (s.scene_id, s.task.instruction))
                .collect(),
            None => vec![("synthetic".to_string(), String::new())],
        };
        pair_tasks(&bases, dims)
    } else {
        let dir = match manifest {
            Some(d) => d.to_path_buf(),
            None => {
                let b = manifest_dir(&common.run_dir, BENCHMARK);
                if b.join(builder::MANIFEST_FILE).exists() {
                    b
                } else {
                    manifest_dir(&common.run_dir, CANDIDATES)
                }
            }
        };
        let m = load_manifest(&dir).with_context(|| format!("loading manifest {}", dir.display()))?;
        let scenes = load_scenes(&cfg.generate()?.scenes)?;
        let mut tasks: Vec<EpisodeTask> = scenes
            .iter()
            .map(|s| {
                let mut t = EpisodeTask::new(s.scene_id.clone(), PerturbationVector::unperturbed());
                t.instruction = s.task.instruction.clone();
                t
            })
            .collect();
        let bases: BTreeMap<String, SceneSpec> = scenes.into_iter().map(|s| (s.scene_id.clone(), s)).collect();
        tasks.extend(m.episode_tasks(&bases)?);
        tasks
    };
    let timeout = Duration::from_secs_f64(e.timeout_secs);
    let suite = SuiteConfig {
        trials_per_task: e.trials_per_task,
        parallelism: e.parallelism,
        episode: EpisodeConfig {
            max_steps: e.max_steps,
            record_trajectory: e.record_trajectories,
        },
        base_seed: common.seed,
        model: e.model.clone(),
    };
    let records = harness::run_suite(
        &tasks,
        &suite,
        |_| make_environment(e, timeout),
        |_| make_policy(e, timeout),
    )?;
    let dir = records_dir(&common.run_dir);
    std::fs::create_dir_all(&dir)?;
    let path = dir.join(format!("{}.json", file_stem(&e.model)));
    harness::save_suite(&path, &records)?;
    let wins = records.iter().filter(|r| r.success).count();
    let errors = records.iter().filter(|r| r.error.is_some()).count();
    println!(
        "{}: {wins}/{} successful, {errors} transport errors -> {}",
        e.model,
        records.len(),
        path.display()
    );
    Ok(())
}

fn parse_pairs(spec: &str, records: &[EpisodeRecord]) -> Result<Vec<Dimension>> {
    if spec.trim() == "all" {
        let present: BTreeSet<Dimension> = records.iter().flat_map(|r| r.perturbation.active()).collect();
        return Ok(Dimension::ALL.into_iter().filter(|d| present.contains(d)).collect());
    }
    let mut dims = Vec::new();
    for part in spec.split(',') {
        let d: Dimension = part.trim().parse().map_err(|e| anyhow::anyhow!("--pairs: {e}"))?;
        if !dims.contains(&d) {
            dims.push(d);
        }
    }
    Ok(dims)
}

pub fn analyze(common: &Common, records: &[PathBuf], pairs: &str, png: bool) -> Result<()> {
    let records = load_records(&common.run_dir, records)?;
    let dims = parse_pairs(pairs, &records)?;
    if dims.len() < 2 {
        bail!("need at least two perturbed dimensions, found {}", dims.len());
    }
    let analyses = report::analyze(&records, &dims)?;
    let out = reports_dir(&common.run_dir)?;
    canon::write_file(&out.join("analysis.json"), &analyses)?;
    let mut text = String::new();
    for a in &analyses {
        text.push_str(&a.to_string());
        text.push_str("\nconditional joint (lower) and independence product (upper)\n");
        text.push_str(&report::matrix_text(&dims, &a.heatmap.combined()));
        text.push_str("\ngap\n");
        text.push_str(&report::matrix_text(&dims, &a.heatmap.gap));
        text.push('\n');
        if png {
            let stem = file_stem(&a.model);
            let max = a
                .heatmap
                .combined()
                .iter()
                .flatten()
                .flatten()
                .fold(0.0f64, |m, v| m.max(*v));
            report::raster_matrix(&a.heatmap.combined(), 24, ColorScale::Sequential { max })
                .save_png(&out.join(format!("heatmap_{stem}.png")))?;
            let limit = a
                .heatmap
                .gap
                .iter()
                .flatten()
                .flatten()
                .fold(0.0f64, |m, v| m.max(v.abs()));
            report::raster_matrix(&a.heatmap.gap, 24, ColorScale::Diverging { limit })
                .save_png(&out.join(format!("gap_{stem}.png")))?;
        }
    }
    write_text(&out.join("analysis.txt"), &text)?;
    print!("{text}");
    Ok(())
}

pub fn stratify(common: &Common, records: &[PathBuf], n_models: usize) -> Result<()> {
    let records = load_records(&common.run_dir, records)?;
    let outcomes = outcomes_from_records(&records);
    let strata = builder::stratify(&outcomes, n_models)?;
    let out = reports_dir(&common.run_dir)?;
    canon::write_file(&out.join("strata.json"), &strata)?;
    let mut counts = [0usize; 5];
    for l in strata.values() {
        counts[usize::from(l.get() - 1)] += 1;
    }
    for (k, n) in counts.iter().enumerate() {
        println!("L{} {n}", k + 1);
    }
    Ok(())
}

pub fn report(common: &Common, records: &[PathBuf], strata: Option<&Path>) -> Result<()> {
    let records = load_records(&common.run_dir, records)?;
    let rep = report::aggregate(&records)?;
    let out = reports_dir(&common.run_dir)?;
    canon::write_file(&out.join("report.json"), &rep)?;
    let table = rep.to_string();
    write_text(&out.join("table.txt"), &table)?;
    print!("{table}");

    let default = out.join("strata.json");
    let strata_path = strata
        .map(Path::to_path_buf)
        .or_else(|| default.exists().then_some(default));
    if let Some(p) = strata_path {
        let strata: BTreeMap<String, builder::DifficultyLevel> =
            canon::read_file(&p).with_context(|| format!("reading strata {}", p.display()))?;
        let perturbed: Vec<EpisodeRecord> = records.into_iter().filter(|r| r.perturbation.count() > 0).collect();
        let curves = report::level_curves(&perturbed, &strata)?;
        canon::write_file(&out.join("level_curves.json"), &curves)?;
    }
    Ok(())
}
