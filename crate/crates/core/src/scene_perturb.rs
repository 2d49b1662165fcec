//! Layout, background, light and robot-initialisation perturbations.
//!
//! Every scene-level operation returns the perturbed scene together with the
//! patch that turns the input into it.

use crate::camera::level_band;
use crate::geometry::{self, Vec3};
use crate::patch::{self, PatchError, ScenePatch};
use crate::perturbation::SeverityLevel;
use crate::rng::{CounterRng, SeedKey};
use crate::scene::{relations, LightSpec, ObjectPlacement, RobotInit, SceneSpec, SurfaceRole};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::Path;

/// Entries in the full distractor catalog.
pub const PAPER_DISTRACTOR_COUNT: usize = 416;
/// Entries in the full texture catalog.
pub const PAPER_TEXTURE_COUNT: usize = 950;
/// Clearance kept between any two object boxes, metres.
pub const PLACEMENT_MARGIN: f64 = 0.005;
pub const ATTEMPTS_PER_OBJECT: usize = 200;
pub const JITTER_ATTEMPTS: usize = 1000;
pub const ROBOT_MAGNITUDE_RANGE: (f64, f64) = (0.1, 0.5);

const MANIFEST_COMPLETE: &str = "@paper-complete";
const UNIT_TOL: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum PerturbError {
    #[error("{name} = {value} is outside [{lo}, {hi}]")]
    ParameterRange {
        name: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("placed {placed} of {requested} confounders before the attempt budget ran out")]
    PackingFailure { placed: usize, requested: usize },
    #[error("registry offers {available} unused categories, {requested} requested")]
    NotEnoughDistractors { available: usize, requested: usize },
    #[error("no relation-preserving target pose found in {attempts} attempts")]
    ConstraintFailure { attempts: usize },
    #[error("scene has no target object")]
    NoTarget,
    #[error("no {0} texture differs from the current one")]
    RegistryExhausted(SurfaceRole),
    #[error("invalid light parameters: {0}")]
    InvalidLight(String),
    #[error("robot init has no joints")]
    NoJoints,
    #[error(transparent)]
    Patch(#[from] PatchError),
}

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("duplicate entry `{0}`")]
    Duplicate(String),
    #[error("manifest declares itself complete with {found} entries, expected {expected}")]
    Incomplete { expected: usize, found: usize },
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl std::fmt::Display for SurfaceRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Data lines of a manifest with their 1-based line numbers, and whether the
/// completeness directive was present.
fn manifest_lines(text: &str) -> (Vec<(usize, Vec<&str>)>, bool) {
    let mut complete = false;
    let mut rows = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line == MANIFEST_COMPLETE {
            complete = true;
            continue;
        }
        rows.push((i + 1, line.split('\t').map(str::trim).collect()));
    }
    (rows, complete)
}

fn read(path: &Path) -> Result<String, ManifestError> {
    std::fs::read_to_string(path).map_err(|source| ManifestError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distractor {
    pub category: String,
    pub half_extents: Vec3,
}

/// Catalog of objects that may be dropped into a scene as confounders.
///
/// Manifest rows are `category<TAB>hx<TAB>hy<TAB>hz`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DistractorRegistry {
    entries: Vec<Distractor>,
}

impl DistractorRegistry {
    pub fn new(entries: Vec<Distractor>) -> Result<Self, ManifestError> {
        let mut seen = BTreeSet::new();
        for (i, e) in entries.iter().enumerate() {
            if !seen.insert(e.category.as_str()) {
                return Err(ManifestError::Duplicate(e.category.clone()));
            }
            if !e.half_extents.iter().all(|h| h.is_finite() && *h > 0.0) {
                return Err(ManifestError::Syntax {
                    line: i + 1,
                    message: format!("`{}` needs positive half extents", e.category),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn parse(text: &str) -> Result<Self, ManifestError> {
        let (rows, complete) = manifest_lines(text);
        let mut entries = Vec::with_capacity(rows.len());
        for (line, cols) in rows {
            let [category, x, y, z] = cols[..] else {
                return Err(ManifestError::Syntax {
                    line,
                    message: format!("expected 4 tab-separated fields, found {}", cols.len()),
                });
            };
            let mut half = [0.0; 3];
            for (h, s) in half.iter_mut().zip([x, y, z]) {
                *h = s.parse().map_err(|_| ManifestError::Syntax {
                    line,
                    message: format!("`{s}` is not a number"),
                })?;
            }
            entries.push(Distractor {
                category: category.to_string(),
                half_extents: half,
            });
        }
        let reg = Self::new(entries)?;
        if complete && reg.len() != PAPER_DISTRACTOR_COUNT {
            return Err(ManifestError::Incomplete {
                expected: PAPER_DISTRACTOR_COUNT,
                found: reg.len(),
            });
        }
        Ok(reg)
    }

    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        Self::parse(&read(path)?)
    }

    pub fn entries(&self) -> &[Distractor] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Texture {
    pub texture_id: String,
    pub role: SurfaceRole,
}

/// Catalog of surface textures. Manifest rows are `texture_id<TAB>role`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TextureRegistry {
    entries: Vec<Texture>,
}

impl TextureRegistry {
    pub fn new(entries: Vec<Texture>) -> Result<Self, ManifestError> {
        let mut seen = BTreeSet::new();
        for e in &entries {
            if !seen.insert(e.texture_id.as_str()) {
                return Err(ManifestError::Duplicate(e.texture_id.clone()));
            }
        }
        Ok(Self { entries })
    }

    pub fn parse(text: &str) -> Result<Self, ManifestError> {
        let (rows, complete) = manifest_lines(text);
        let mut entries = Vec::with_capacity(rows.len());
        for (line, cols) in rows {
            let [id, role] = cols[..] else {
                return Err(ManifestError::Syntax {
                    line,
                    message: format!("expected 2 tab-separated fields, found {}", cols.len()),
                });
            };
            let role = role
                .parse()
                .map_err(|message| ManifestError::Syntax { line, message })?;
            entries.push(Texture {
                texture_id: id.to_string(),
                role,
            });
        }
        let reg = Self::new(entries)?;
        if complete && reg.len() != PAPER_TEXTURE_COUNT {
            return Err(ManifestError::Incomplete {
                expected: PAPER_TEXTURE_COUNT,
                found: reg.len(),
            });
        }
        Ok(reg)
    }

    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        Self::parse(&read(path)?)
    }

    pub fn entries(&self) -> &[Texture] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn with_role(&self, role: SurfaceRole) -> impl Iterator<Item = &str> {
        self.entries
            .iter()
            .filter(move |t| t.role == role)
            .map(|t| t.texture_id.as_str())
    }
}

/// World-aligned box `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn of(obj: &ObjectPlacement) -> Self {
        let (min, max) = relations::aabb(obj);
        Self { min, max }
    }

    pub fn contains(&self, other: &Aabb) -> bool {
        (0..3).all(|k| other.min[k] >= self.min[k] && other.max[k] <= self.max[k])
    }

    /// True when the boxes are separated by at least `margin` along some axis.
    pub fn disjoint(&self, other: &Aabb, margin: f64) -> bool {
        (0..3).any(|k| self.max[k] + margin <= other.min[k] || other.max[k] + margin <= self.min[k])
    }
}

fn range_error(name: &'static str, value: f64, lo: f64, hi: f64) -> PerturbError {
    PerturbError::ParameterRange { name, value, lo, hi }
}

fn with_patch(base: &SceneSpec, out: SceneSpec) -> Result<(SceneSpec, ScenePatch), PerturbError> {
    let p = patch::diff(base, &out)?;
    Ok((out, p))
}

/// Adds `n` unseen objects with pairwise-disjoint boxes resting on the
/// workspace floor. Existing objects are never touched.
pub fn add_confounders(
    scene: &SceneSpec,
    registry: &DistractorRegistry,
    n: usize,
    workspace: Aabb,
    seed: u64,
) -> Result<(SceneSpec, ScenePatch), PerturbError> {
    if n == 0 {
        return Err(range_error("n", 0.0, 1.0, f64::INFINITY));
    }
    let present: BTreeSet<&str> = scene.objects.iter().map(|o| o.category.as_str()).collect();
    let mut pool: Vec<&Distractor> = registry
        .entries()
        .iter()
        .filter(|d| !present.contains(d.category.as_str()))
        .collect();
    if pool.len() < n {
        return Err(PerturbError::NotEnoughDistractors {
            available: pool.len(),
            requested: n,
        });
    }
    let mut rng = SeedKey::new(seed).str("confounders").str(&scene.scene_id).rng();
    // Partial Fisher-Yates: the first n slots are a uniform draw without replacement.
    for i in 0..n {
        let j = i + rng.index(pool.len() - i);
        pool.swap(i, j);
    }

    let mut boxes: Vec<Aabb> = scene.objects.iter().map(Aabb::of).collect();
    let taken: BTreeSet<&str> = scene.objects.iter().map(|o| o.object_id.as_str()).collect();
    let mut next_id = 0usize;
    let mut out = scene.clone();
    for (placed, d) in pool.iter().take(n).enumerate() {
        let id = loop {
            let id = format!("confounder_{next_id}");
            next_id += 1;
            if !taken.contains(id.as_str()) {
                break id;
            }
        };
        let mut obj = ObjectPlacement {
            object_id: id,
            category: d.category.clone(),
            position: [0.0; 3],
            orientation: [0.0; 3],
            half_extents: d.half_extents,
            is_target: false,
            is_confounder: true,
        };
        let mut ok = false;
        for _ in 0..ATTEMPTS_PER_OBJECT {
            obj.orientation[2] = geometry::wrap_angle(rng.uniform(-std::f64::consts::PI, std::f64::consts::PI));
            // Footprint of the yawed box decides how far from the walls the centre may go.
            obj.position = [0.0; 3];
            let local = Aabb::of(&obj);
            let x = rng.uniform(workspace.min[0] - local.min[0], workspace.max[0] - local.max[0]);
            let y = rng.uniform(workspace.min[1] - local.min[1], workspace.max[1] - local.max[1]);
            obj.position = [x, y, workspace.min[2] - local.min[2]];
            let b = Aabb::of(&obj);
            if workspace.contains(&b) && boxes.iter().all(|o| o.disjoint(&b, PLACEMENT_MARGIN)) {
                boxes.push(b);
                ok = true;
                break;
            }
        }
        if !ok {
            return Err(PerturbError::PackingFailure { placed, requested: n });
        }
        out.objects.push(obj);
    }
    with_patch(scene, out)
}

/// Offsets the target's pose uniformly within `±pos_bounds` / `±rot_bounds`,
/// resampling until every goal relation that involved the target and held
/// before still holds.
pub fn jitter_target_pose(
    scene: &SceneSpec,
    pos_bounds: Vec3,
    rot_bounds: Vec3,
    seed: u64,
) -> Result<(SceneSpec, ScenePatch), PerturbError> {
    for (name, b) in [("pos_bounds", pos_bounds), ("rot_bounds", rot_bounds)] {
        for v in b {
            if !(v.is_finite() && v >= 0.0) {
                return Err(range_error(name, v, 0.0, f64::INFINITY));
            }
        }
    }
    let idx = scene
        .objects
        .iter()
        .position(|o| o.is_target)
        .ok_or(PerturbError::NoTarget)?;
    if pos_bounds.iter().chain(&rot_bounds).all(|b| *b == 0.0) {
        return Ok((scene.clone(), ScenePatch::default()));
    }
    let target_id = scene.objects[idx].object_id.as_str();
    let kept: Vec<_> = scene
        .task
        .goal
        .0
        .iter()
        .filter(|p| p.args.iter().any(|a| a == target_id))
        .filter(|p| relations::holds(scene, p) == Some(true))
        .collect();

    let mut rng = SeedKey::new(seed).str("target_pose").str(&scene.scene_id).rng();
    let mut out = scene.clone();
    let base = &scene.objects[idx];
    for _ in 0..JITTER_ATTEMPTS {
        let obj = &mut out.objects[idx];
        for k in 0..3 {
            obj.position[k] = base.position[k] + rng.uniform(-pos_bounds[k], pos_bounds[k]);
            obj.orientation[k] = geometry::wrap_angle(base.orientation[k] + rng.uniform(-rot_bounds[k], rot_bounds[k]));
        }
        if kept.iter().all(|p| relations::holds(&out, p) == Some(true)) {
            return with_patch(scene, out);
        }
    }
    Err(PerturbError::ConstraintFailure {
        attempts: JITTER_ATTEMPTS,
    })
}

/// Replaces the texture of `role` with a different registry entry.
pub fn swap_background(
    scene: &SceneSpec,
    registry: &TextureRegistry,
    role: SurfaceRole,
    seed: u64,
) -> Result<(SceneSpec, ScenePatch), PerturbError> {
    let current = scene.textures.get(&role).map(String::as_str);
    let candidates: Vec<&str> = registry.with_role(role).filter(|t| Some(*t) != current).collect();
    if candidates.is_empty() {
        return Err(PerturbError::RegistryExhausted(role));
    }
    let mut rng = SeedKey::new(seed)
        .str("texture")
        .str(role.as_str())
        .str(&scene.scene_id)
        .rng();
    let pick = candidates[rng.index(candidates.len())];
    let mut out = scene.clone();
    out.textures.insert(role, pick.to_string());
    with_patch(scene, out)
}

/// Full replacement light state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LightPerturbParams {
    pub diffuse: Vec3,
    pub direction: Vec3,
    pub specular: f64,
    pub shadows: bool,
}

impl LightPerturbParams {
    pub fn from_spec(l: &LightSpec) -> Self {
        Self {
            diffuse: l.diffuse,
            direction: l.direction,
            specular: l.specular,
            shadows: l.shadows,
        }
    }

    pub fn validate(&self) -> Result<(), PerturbError> {
        if !self.diffuse.iter().all(|c| (0.0..=1.0).contains(c)) {
            return Err(PerturbError::InvalidLight(format!(
                "diffuse {:?} leaves [0, 1]",
                self.diffuse
            )));
        }
        let n = geometry::norm(&self.direction);
        if !((n - 1.0).abs() <= UNIT_TOL) {
            return Err(PerturbError::InvalidLight(format!("direction norm {n} is not 1")));
        }
        if !(self.specular.is_finite() && self.specular >= 0.0) {
            return Err(PerturbError::InvalidLight(format!(
                "specular {} is negative",
                self.specular
            )));
        }
        Ok(())
    }
}

pub fn perturb_light(scene: &SceneSpec, params: &LightPerturbParams) -> Result<(SceneSpec, ScenePatch), PerturbError> {
    params.validate()?;
    let mut out = scene.clone();
    out.lights = LightSpec {
        diffuse: params.diffuse,
        direction: params.direction,
        specular: params.specular,
        shadows: params.shadows,
    };
    with_patch(scene, out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LightChannel {
    Diffuse,
    Direction,
    Specular,
    Shadows,
}

/// Per-channel colour shift of the diffuse light.
pub const DIFFUSE_SHIFT_RANGE: (f64, f64) = (0.1, 0.6);
/// Tilt of the light direction, degrees.
pub const DIRECTION_TILT_RANGE_DEG: (f64, f64) = (10.0, 60.0);
/// Change of the specular intensity.
pub const SPECULAR_SHIFT_RANGE: (f64, f64) = (0.25, 1.5);

fn uniform_sphere(rng: &mut CounterRng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Changes one light channel of `current` by an amount in the level's band.
pub fn sample_light(current: &LightSpec, channel: LightChannel, level: SeverityLevel, seed: u64) -> LightPerturbParams {
    let mut rng = SeedKey::new(seed).str("light").u64(u64::from(level.get())).rng();
    let mut p = LightPerturbParams::from_spec(current);
    match channel {
        LightChannel::Diffuse => {
            let (lo, hi) = level_band(DIFFUSE_SHIFT_RANGE, level);
            for c in &mut p.diffuse {
                let d = rng.uniform(lo, hi);
                let up = rng.coin();
                let (a, b) = (*c + d, *c - d);
                // Prefer the drawn sign; fall back to the other one, then clamp.
                *c = match (up, a <= 1.0, b >= 0.0) {
                    (true, true, _) | (false, true, false) => a,
                    (false, _, true) | (true, false, true) => b,
                    _ => c.clamp(0.0, 1.0),
                };
            }
        }
        LightChannel::Direction => {
            let (lo, hi) = level_band(DIRECTION_TILT_RANGE_DEG, level);
            let tilt = rng.uniform(lo, hi).to_radians();
            let d = geometry::vec_na(&current.direction).normalize();
            let r = uniform_sphere(&mut rng, 3);
            let mut axis = d.cross(&geometry::vec_na(&[r[0], r[1], r[2]]));
            if axis.norm() < 1e-9 {
                axis = d.cross(&nalgebra::Vector3::x());
                if axis.norm() < 1e-9 {
                    axis = d.cross(&nalgebra::Vector3::y());
                }
            }
            let rot = nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), tilt);
            p.direction = geometry::vec_arr(&(rot * d).normalize());
        }
        LightChannel::Specular => {
            let (lo, hi) = level_band(SPECULAR_SHIFT_RANGE, level);
            let d = rng.uniform(lo, hi);
            p.specular = if rng.coin() || current.specular < d {
                current.specular + d
            } else {
                current.specular - d
            };
        }
        LightChannel::Shadows => p.shadows = !current.shadows,
    }
    p
}

/// Moves the arm's initial configuration by exactly `magnitude` (L2 norm over
/// the arm joints) in a uniformly random direction. The gripper is untouched.
pub fn perturb_robot_init(init: &RobotInit, magnitude: f64, seed: u64) -> Result<RobotInit, PerturbError> {
    let (lo, hi) = ROBOT_MAGNITUDE_RANGE;
    if !(magnitude >= lo && magnitude <= hi) {
        return Err(range_error("magnitude", magnitude, lo, hi));
    }
    if init.qpos.is_empty() {
        return Err(PerturbError::NoJoints);
    }
    let mut rng = SeedKey::new(seed).str("robot_init").rng();
    let dir = uniform_sphere(&mut rng, init.qpos.len());
    Ok(RobotInit {
        qpos: init.qpos.iter().zip(dir).map(|(q, u)| q + magnitude * u).collect(),
        gripper: init.gripper,
    })
}

pub fn perturb_robot_scene(
    scene: &SceneSpec,
    magnitude: f64,
    seed: u64,
) -> Result<(SceneSpec, ScenePatch), PerturbError> {
    let mut out = scene.clone();
    out.robot_init = perturb_robot_init(&scene.robot_init, magnitude, seed)?;
    with_patch(scene, out)
}

pub fn sample_robot_magnitude(level: SeverityLevel, seed: u64) -> f64 {
    let (lo, hi) = level_band(ROBOT_MAGNITUDE_RANGE, level);
    let mut rng = SeedKey::new(seed)
        .str("robot_magnitude")
        .u64(u64::from(level.get()))
        .rng();
    rng.uniform(lo, hi).clamp(lo, hi)
}

/// Target-pose bounds for a level: 2 cm of horizontal play and 10 degrees of
/// yaw per level; height and tilt stay fixed so the object keeps resting.
pub fn target_pose_bounds(level: SeverityLevel) -> (Vec3, Vec3) {
    let k = f64::from(level.get());
    ([0.02 * k, 0.02 * k, 0.0], [0.0, 0.0, (10.0 * k).to_radians()])
}

/// Confounder count for a level: one object per level.
pub fn confounder_count(level: SeverityLevel) -> usize {
    usize::from(level.get())
}
