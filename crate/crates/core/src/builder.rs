//! Benchmark construction: candidate generation, ceiling filtering,
//! sub-dimension balancing and difficulty stratification.

use crate::camera::{sample_camera_perturbation, CameraPerturbKind};
use crate::canon::{self, CanonError};
use crate::harness::{EpisodeRecord, EpisodeTask};
use crate::image::{params_for, NoiseKind};
use crate::language::{rewrite_scene, LanguageError, RewriteMode, Rewriter};
use crate::patch::ScenePatch;
use crate::perturbation::{
    Dimension, PerturbationParams, PerturbationSpec, PerturbationVector, SeverityLevel, SubDimension,
};
use crate::rng::SeedKey;
use crate::scene::{SceneSpec, Suite, SurfaceRole};
use crate::scene_perturb::{
    add_confounders, confounder_count, jitter_target_pose, perturb_light, perturb_robot_scene, sample_light,
    sample_robot_magnitude, swap_background, target_pose_bounds, Aabb, DistractorRegistry, LightChannel, PerturbError,
    TextureRegistry,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

/// Seeds tried per variant before it is given up.
pub const GENERATION_ATTEMPTS: u64 = 5;
pub const REFERENCE_MODELS: usize = 4;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PATCH_DIR: &str = "patches";

#[derive(Debug, thiserror::Error)]
pub enum BuildError {
    #[error("per_cell must be at least 1")]
    PerCell,
    #[error("no base tasks")]
    NoBaseTasks,
    #[error("duplicate base task `{0}`")]
    DuplicateBase(String),
    #[error("ceiling rule {0} is outside (0, 1]")]
    CeilingRule(f64),
    #[error("no reference model outcomes")]
    NoModels,
    #[error("missing outcomes for {} (variant, model) pairs, first: {:?}", .0.len(), .0.first())]
    Coverage(Vec<(String, String)>),
    #[error("variant `{variant}` has {found} outcomes, expected {expected}")]
    OutcomeCount {
        variant: String,
        found: usize,
        expected: usize,
    },
    #[error("model count {0} is outside 1..=4")]
    ModelCount(usize),
    #[error("duplicate variant id `{0}`")]
    DuplicateVariant(String),
    #[error("counts summary disagrees with the entries")]
    CountsMismatch,
    #[error("variant `{variant}` references base task `{base}`, which is not loaded")]
    UnknownBase { variant: String, base: String },
    #[error(transparent)]
    Canon(#[from] CanonError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Scene catalogs and the rewriter used by the generators.
pub struct Generators {
    pub distractors: DistractorRegistry,
    pub textures: TextureRegistry,
    pub workspace: Aabb,
    pub rewriter: Box<dyn Rewriter>,
}

#[derive(Debug, thiserror::Error)]
enum VariantError {
    #[error(transparent)]
    Perturb(#[from] PerturbError),
    #[error(transparent)]
    Language(#[from] LanguageError),
    #[error("{0}")]
    Camera(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub variant_id: String,
    pub base_task_id: String,
    pub suite: Suite,
    pub dimension: Dimension,
    pub sub_dimension: Option<SubDimension>,
    pub level: Option<SeverityLevel>,
    pub seed: u64,
    /// Path of the patch file, relative to the manifest directory.
    pub patch_file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction: Option<String>,
    pub params: PerturbationParams,
    #[serde(skip)]
    pub patch: ScenePatch,
}

impl ManifestEntry {
    pub fn perturbation(&self) -> PerturbationVector {
        PerturbationVector::new(vec![PerturbationSpec {
            dimension: self.dimension,
            sub_dimension: self.sub_dimension,
            level: self.level,
            params: self.params.clone(),
            seed: self.seed,
        }])
        .expect("a single spec is always a valid vector")
    }

    /// The harness task for this variant; `base_instruction` is used unless
    /// the variant rewrites it.
    pub fn episode_task(&self, base_instruction: &str) -> EpisodeTask {
        EpisodeTask {
            task_id: self.variant_id.clone(),
            instruction: self.instruction.clone().unwrap_or_else(|| base_instruction.to_string()),
            scene_patch: self.patch.clone(),
            perturbation: self.perturbation(),
        }
    }
}

/// Entry counts per suite and dimension.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts(pub BTreeMap<Suite, BTreeMap<Dimension, usize>>);

impl Counts {
    pub fn of(entries: &[ManifestEntry]) -> Self {
        let mut m: BTreeMap<Suite, BTreeMap<Dimension, usize>> = BTreeMap::new();
        for e in entries {
            *m.entry(e.suite).or_default().entry(e.dimension).or_default() += 1;
        }
        Self(m)
    }

    pub fn get(&self, suite: Suite, dim: Dimension) -> usize {
        self.0.get(&suite).and_then(|r| r.get(&dim)).copied().unwrap_or(0)
    }

    pub fn dimension_total(&self, dim: Dimension) -> usize {
        self.0.values().filter_map(|r| r.get(&dim)).sum()
    }

    pub fn suite_total(&self, suite: Suite) -> usize {
        self.0.get(&suite).map_or(0, |r| r.values().sum())
    }

    pub fn total(&self) -> usize {
        self.0.values().flat_map(|r| r.values()).sum()
    }
}

impl fmt::Display for Counts {
    /// Suites as rows, dimensions as columns, totals last.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<8}", "")?;
        for d in Dimension::TABLE_ORDER {
            write!(f, " {:>10}", d.label())?;
        }
        writeln!(f, " {:>10}", "Total")?;
        for s in Suite::ALL {
            write!(f, "{:<8}", s.label())?;
            for d in Dimension::TABLE_ORDER {
                write!(f, " {:>10}", self.get(s, d))?;
            }
            writeln!(f, " {:>10}", self.suite_total(s))?;
        }
        write!(f, "{:<8}", "Total")?;
        for d in Dimension::TABLE_ORDER {
            write!(f, " {:>10}", self.dimension_total(d))?;
        }
        writeln!(f, " {:>10}", self.total())
    }
}

/// Cells that produced fewer variants than requested.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shortfall {
    pub suite: Suite,
    pub dimension: Dimension,
    pub requested: usize,
    pub produced: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BenchmarkManifest {
    pub entries: Vec<ManifestEntry>,
    pub counts: Counts,
    #[serde(default)]
    pub shortfalls: Vec<Shortfall>,
}

impl BenchmarkManifest {
    pub fn from_entries(entries: Vec<ManifestEntry>, shortfalls: Vec<Shortfall>) -> Result<Self, BuildError> {
        let mut seen = BTreeSet::new();
        for e in &entries {
            if !seen.insert(e.variant_id.as_str()) {
                return Err(BuildError::DuplicateVariant(e.variant_id.clone()));
            }
        }
        Ok(Self {
            counts: Counts::of(&entries),
            entries,
            shortfalls,
        })
    }

    pub fn check(&self) -> Result<(), BuildError> {
        if Counts::of(&self.entries) != self.counts {
            return Err(BuildError::CountsMismatch);
        }
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if !seen.insert(e.variant_id.as_str()) {
                return Err(BuildError::DuplicateVariant(e.variant_id.clone()));
            }
        }
        Ok(())
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.variant_id.as_str())
    }

    /// Harness tasks for every entry, resolving instructions from `bases`.
    pub fn episode_tasks(&self, bases: &BTreeMap<String, SceneSpec>) -> Result<Vec<EpisodeTask>, BuildError> {
        self.entries
            .iter()
            .map(|e| {
                let base = bases.get(&e.base_task_id).ok_or_else(|| BuildError::UnknownBase {
                    variant: e.variant_id.clone(),
                    base: e.base_task_id.clone(),
                })?;
                Ok(e.episode_task(&base.task.instruction))
            })
            .collect()
    }
}

fn suite_key(s: Suite) -> &'static str {
    match s {
        Suite::Spatial => "spatial",
        Suite::Object => "object",
        Suite::Goal => "goal",
        Suite::Long => "long",
    }
}

fn variant_seed(seed: u64, suite: Suite, dim: Dimension, k: usize, attempt: u64) -> u64 {
    SeedKey::new(seed)
        .str("variant")
        .str(suite_key(suite))
        .str(dim.as_str())
        .u64(k as u64)
        .u64(attempt)
        .finish()
}

/// Sub-dimension for the `k`-th variant of a cell: whole rounds cycle in
/// order; the final partial round uses distinct sub-dimensions in seeded order.
fn sub_dimension_for(subs: &[SubDimension], per_cell: usize, k: usize, remainder_order: &[usize]) -> SubDimension {
    let n = subs.len();
    let full = per_cell / n * n;
    if k < full {
        subs[k % n]
    } else {
        subs[remainder_order[k - full]]
    }
}

fn generate_one(
    scene: &SceneSpec,
    sub: SubDimension,
    level: SeverityLevel,
    seed: u64,
    gens: &Generators,
) -> Result<(ScenePatch, Option<String>, PerturbationParams), VariantError> {
    use SubDimension::*;
    let light = |channel| -> Result<_, VariantError> {
        let p = sample_light(&scene.lights, channel, level, seed);
        let (_, patch) = perturb_light(scene, &p)?;
        Ok((patch, None, PerturbationParams::Light(p)))
    };
    let camera = |kind| -> Result<_, VariantError> {
        let mut p = sample_camera_perturbation(level, seed);
        p.kind = kind;
        let mut out = scene.clone();
        out.camera = p
            .apply(&scene.camera)
            .map_err(|e| VariantError::Camera(e.to_string()))?;
        let patch = crate::patch::diff(scene, &out).map_err(PerturbError::from)?;
        Ok((patch, None, PerturbationParams::Camera(p)))
    };
    let texture = |role| -> Result<_, VariantError> {
        let (out, patch) = swap_background(scene, &gens.textures, role, seed)?;
        let texture_id = out.textures[&role].clone();
        Ok((patch, None, PerturbationParams::Texture { role, texture_id }))
    };
    let language = |mode| -> Result<_, VariantError> {
        let text = gens.rewriter.rewrite(&scene.task.instruction, mode, seed)?;
        let (_, patch) = rewrite_scene(scene, &text)?;
        Ok((
            patch,
            Some(text.clone()),
            PerturbationParams::Language {
                mode,
                instruction: text,
            },
        ))
    };
    let noise = |kind| -> Result<_, VariantError> {
        Ok((
            ScenePatch::default(),
            None,
            PerturbationParams::Noise(params_for(kind, level)),
        ))
    };
    match sub {
        Confounders => {
            let n = confounder_count(level);
            let (_, patch) = add_confounders(scene, &gens.distractors, n, gens.workspace, seed)?;
            Ok((patch, None, PerturbationParams::Confounders { count: n as u32 }))
        }
        TargetPose => {
            let (pos_bounds, rot_bounds) = target_pose_bounds(level);
            let (_, patch) = jitter_target_pose(scene, pos_bounds, rot_bounds, seed)?;
            Ok((patch, None, PerturbationParams::TargetPose { pos_bounds, rot_bounds }))
        }
        SceneTheme => texture(SurfaceRole::SceneWall),
        SurfaceAppearance => texture(SurfaceRole::WorkSurface),
        Diffuse => light(LightChannel::Diffuse),
        Direction => light(LightChannel::Direction),
        Specular => light(LightChannel::Specular),
        Shadows => light(LightChannel::Shadows),
        CameraDistance => camera(CameraPerturbKind::Distance),
        SphericalPosition => camera(CameraPerturbKind::Sphere),
        CameraOrientation => camera(CameraPerturbKind::Orientation),
        InitialJoints => {
            let magnitude = sample_robot_magnitude(level, seed);
            let (_, patch) = perturb_robot_scene(scene, magnitude, seed)?;
            Ok((patch, None, PerturbationParams::RobotInit { magnitude }))
        }
        Distraction => language(RewriteMode::Distraction),
        CommonSense => language(RewriteMode::CommonSense),
        ReasoningChain => language(RewriteMode::Reasoning),
        MotionBlur => noise(NoiseKind::MotionBlur),
        GaussianBlur => noise(NoiseKind::GaussianBlur),
        ZoomBlur => noise(NoiseKind::ZoomBlur),
        Fog => noise(NoiseKind::Fog),
        GlassBlur => noise(NoiseKind::GlassBlur),
    }
}

/// Produces `per_cell` variants for every (suite, dimension) cell.
///
/// Base tasks of a suite are used in turn. Severity levels cycle L1..L5 once
/// per round of sub-dimensions; language rewrites carry no level. A variant
/// whose generator keeps failing is skipped and the cell's shortfall recorded.
pub fn generate_variants(
    base_tasks: &[SceneSpec],
    dims: &[Dimension],
    per_cell: usize,
    seed: u64,
    gens: &Generators,
) -> Result<BenchmarkManifest, BuildError> {
    if per_cell == 0 {
        return Err(BuildError::PerCell);
    }
    if base_tasks.is_empty() {
        return Err(BuildError::NoBaseTasks);
    }
    let mut ids = BTreeSet::new();
    for t in base_tasks {
        if !ids.insert(t.scene_id.as_str()) {
            return Err(BuildError::DuplicateBase(t.scene_id.clone()));
        }
    }
    let mut by_suite: BTreeMap<Suite, Vec<&SceneSpec>> = BTreeMap::new();
    for t in base_tasks {
        by_suite.entry(t.task.suite).or_default().push(t);
    }
    let mut unique_dims = Vec::new();
    for &d in dims {
        if !unique_dims.contains(&d) {
            unique_dims.push(d);
        }
    }
    let cells: Vec<(Suite, Dimension)> = by_suite
        .keys()
        .flat_map(|&s| unique_dims.iter().map(move |&d| (s, d)))
        .collect();

    let results: Vec<(Vec<ManifestEntry>, Option<Shortfall>)> = cells
        .par_iter()
        .map(|&(suite, dim)| {
            let tasks = &by_suite[&suite];
            let subs = dim.sub_dimensions();
            let mut order: Vec<usize> = (0..subs.len()).collect();
            SeedKey::new(seed)
                .str("remainder")
                .str(suite_key(suite))
                .str(dim.as_str())
                .rng()
                .shuffle(&mut order);
            let mut entries = Vec::with_capacity(per_cell);
            for k in 0..per_cell {
                let scene = tasks[k % tasks.len()];
                let sub = sub_dimension_for(subs, per_cell, k, &order);
                let level = SeverityLevel::ALL[(k / subs.len()) % 5];
                let variant_id = format!("{}-{}-{:05}", suite_key(suite), dim.as_str(), k);
                let made = (0..GENERATION_ATTEMPTS).find_map(|attempt| {
                    let s = variant_seed(seed, suite, dim, k, attempt);
                    match generate_one(scene, sub, level, s, gens) {
                        Ok(v) => Some((s, v)),
                        Err(e) => {
                            log::debug!("{variant_id} attempt {attempt}: {e}");
                            None
                        }
                    }
                });
                let Some((s, (patch, instruction, params))) = made else {
                    log::warn!("{variant_id}: skipped after {GENERATION_ATTEMPTS} attempts");
                    continue;
                };
                entries.push(ManifestEntry {
                    patch_file: format!("{PATCH_DIR}/{variant_id}.patch"),
                    variant_id,
                    base_task_id: scene.scene_id.clone(),
                    suite,
                    dimension: dim,
                    sub_dimension: Some(sub),
                    level: (dim != Dimension::Language).then_some(level),
                    seed: s,
                    instruction,
                    params,
                    patch,
                });
            }
            let shortfall = (entries.len() < per_cell).then(|| Shortfall {
                suite,
                dimension: dim,
                requested: per_cell,
                produced: entries.len(),
            });
            (entries, shortfall)
        })
        .collect();

    let mut entries = Vec::with_capacity(cells.len() * per_cell);
    let mut shortfalls = Vec::new();
    for (e, s) in results {
        entries.extend(e);
        if let Some(s) = s {
            log::warn!(
                "{} / {}: produced {} of {}",
                s.suite.label(),
                s.dimension.label(),
                s.produced,
                s.requested
            );
            shortfalls.push(s);
        }
    }
    BenchmarkManifest::from_entries(entries, shortfalls)
}

/// Per-model solved flags keyed by variant id.
pub type ModelOutcomes = BTreeMap<String, BTreeMap<String, bool>>;

/// A variant counts as solved by a model when more than half of that model's
/// trials on it succeed.
pub fn outcomes_from_records(records: &[EpisodeRecord]) -> ModelOutcomes {
    let mut tally: BTreeMap<(&str, &str), (u64, u64)> = BTreeMap::new();
    for r in records {
        let t = tally.entry((r.model.as_str(), r.task_id.as_str())).or_default();
        t.0 += u64::from(r.success);
        t.1 += 1;
    }
    let mut out = ModelOutcomes::new();
    for ((model, task), (wins, trials)) in tally {
        out.entry(model.to_string())
            .or_default()
            .insert(task.to_string(), 2 * wins > trials);
    }
    out
}

fn check_coverage(manifest: &BenchmarkManifest, outcomes: &ModelOutcomes) -> Result<(), BuildError> {
    if outcomes.is_empty() {
        return Err(BuildError::NoModels);
    }
    let missing: Vec<(String, String)> = manifest
        .ids()
        .flat_map(|id| {
            outcomes
                .iter()
                .filter(move |(_, m)| !m.contains_key(id))
                .map(move |(model, _)| (id.to_string(), model.clone()))
        })
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(BuildError::Coverage(missing))
    }
}

/// Hamilton apportionment of `total` seats by `weights`; ties go to the
/// earlier index.
fn largest_remainder(total: usize, weights: &[usize]) -> Vec<usize> {
    let sum: usize = weights.iter().sum();
    if sum == 0 {
        return vec![0; weights.len()];
    }
    let mut seats: Vec<usize> = weights.iter().map(|w| total * w / sum).collect();
    let mut rest: Vec<(usize, usize)> = weights.iter().enumerate().map(|(i, w)| (total * w % sum, i)).collect();
    rest.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let left = total - seats.iter().sum::<usize>();
    for &(_, i) in rest.iter().take(left) {
        seats[i] += 1;
    }
    seats
}

/// Drops ceiling variants, then down-samples so that within each dimension
/// the sub-dimension counts differ by at most one.
///
/// A variant is dropped when at least `ceiling_rule` of the models solve it.
/// Each sub-dimension keeps `min(count, m + 1)` variants, `m` being the
/// smallest sub-dimension count of its dimension; that quota is split across
/// suites by largest remainder and the kept variants are chosen by seed.
pub fn filter_and_balance(
    manifest: &BenchmarkManifest,
    outcomes: &ModelOutcomes,
    ceiling_rule: f64,
    seed: u64,
) -> Result<BenchmarkManifest, BuildError> {
    if !(ceiling_rule > 0.0 && ceiling_rule <= 1.0) {
        return Err(BuildError::CeilingRule(ceiling_rule));
    }
    check_coverage(manifest, outcomes)?;
    let models = outcomes.len() as f64;
    let survives = |id: &str| {
        let solved = outcomes.values().filter(|m| m[id]).count() as f64;
        solved < ceiling_rule * models - 1e-9
    };

    type Group = (Dimension, Option<SubDimension>);
    let mut subs_seen: BTreeMap<Dimension, BTreeSet<Option<SubDimension>>> = BTreeMap::new();
    let mut groups: BTreeMap<Group, BTreeMap<Suite, Vec<usize>>> = BTreeMap::new();
    for (i, e) in manifest.entries.iter().enumerate() {
        subs_seen.entry(e.dimension).or_default().insert(e.sub_dimension);
        if survives(&e.variant_id) {
            groups
                .entry((e.dimension, e.sub_dimension))
                .or_default()
                .entry(e.suite)
                .or_default()
                .push(i);
        }
    }

    let mut keep = vec![false; manifest.entries.len()];
    for (dim, subs) in &subs_seen {
        let size = |s: &Option<SubDimension>| {
            groups
                .get(&(*dim, *s))
                .map_or(0, |m| m.values().map(Vec::len).sum::<usize>())
        };
        let floor = subs.iter().map(size).min().unwrap_or(0);
        for sub in subs {
            let Some(by_suite) = groups.get(&(*dim, *sub)) else {
                continue;
            };
            let quota = size(sub).min(floor + 1);
            let weights: Vec<usize> = by_suite.values().map(Vec::len).collect();
            let seats = largest_remainder(quota, &weights);
            for ((suite, idx), n) in by_suite.iter().zip(seats) {
                let mut pick = idx.clone();
                if n < pick.len() {
                    let mut rng = SeedKey::new(seed)
                        .str("balance")
                        .str(dim.as_str())
                        .str(sub.map_or("none", SubDimension::code))
                        .str(suite_key(*suite))
                        .rng();
                    rng.shuffle(&mut pick);
                    pick.truncate(n);
                }
                for i in pick {
                    keep[i] = true;
                }
            }
        }
    }
    let entries = manifest
        .entries
        .iter()
        .zip(&keep)
        .filter(|(_, k)| **k)
        .map(|(e, _)| e.clone())
        .collect();
    BenchmarkManifest::from_entries(entries, manifest.shortfalls.clone())
}

/// Difficulty of a variant: L1 is solved by every reference model, L5 by none.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct DifficultyLevel(u8);

impl DifficultyLevel {
    pub const ALL: [DifficultyLevel; 5] = [
        DifficultyLevel(1),
        DifficultyLevel(2),
        DifficultyLevel(3),
        DifficultyLevel(4),
        DifficultyLevel(5),
    ];

    pub fn new(level: u8) -> Option<Self> {
        (1..=5).contains(&level).then_some(Self(level))
    }

    /// `5 - successes` for up to four reference models.
    pub fn from_successes(successes: usize) -> Option<Self> {
        (successes <= REFERENCE_MODELS).then(|| Self(5 - successes as u8))
    }

    pub fn get(self) -> u8 {
        self.0
    }
}

impl TryFrom<u8> for DifficultyLevel {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, String> {
        Self::new(v).ok_or_else(|| format!("difficulty level {v} is outside 1..=5"))
    }
}

impl From<DifficultyLevel> for u8 {
    fn from(l: DifficultyLevel) -> u8 {
        l.0
    }
}

impl fmt::Display for DifficultyLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}", self.0)
    }
}

/// Assigns each variant a level from how many of `n_models` solve it.
pub fn stratify(outcomes: &ModelOutcomes, n_models: usize) -> Result<BTreeMap<String, DifficultyLevel>, BuildError> {
    if !(1..=REFERENCE_MODELS).contains(&n_models) {
        return Err(BuildError::ModelCount(n_models));
    }
    let mut per_variant: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for m in outcomes.values() {
        for (id, solved) in m {
            let c = per_variant.entry(id.as_str()).or_default();
            c.0 += 1;
            c.1 += usize::from(*solved);
        }
    }
    per_variant
        .into_iter()
        .map(|(id, (found, wins))| {
            if found != n_models {
                return Err(BuildError::OutcomeCount {
                    variant: id.to_string(),
                    found,
                    expected: n_models,
                });
            }
            let level = DifficultyLevel::from_successes(wins).expect("wins <= n_models <= 4");
            Ok((id.to_string(), level))
        })
        .collect()
}

/// Writes `manifest.json` and one patch file per entry under `dir`.
pub fn save_manifest(dir: &Path, manifest: &BenchmarkManifest) -> Result<(), BuildError> {
    manifest.check()?;
    std::fs::create_dir_all(dir.join(PATCH_DIR))?;
    for e in &manifest.entries {
        std::fs::write(dir.join(&e.patch_file), e.patch.to_canonical())?;
    }
    canon::write_file(&dir.join(MANIFEST_FILE), manifest)?;
    Ok(())
}

pub fn load_manifest(dir: &Path) -> Result<BenchmarkManifest, BuildError> {
    let mut m: BenchmarkManifest = canon::read_file(&dir.join(MANIFEST_FILE))?;
    for e in &mut m.entries {
        let text = std::fs::read_to_string(dir.join(&e.patch_file))?;
        e.patch = ScenePatch::from_canonical(&text)?;
    }
    m.check()?;
    Ok(m)
}
