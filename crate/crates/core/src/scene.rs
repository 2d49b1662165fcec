//! Declarative scene description.
//!
//! A [`SceneSpec`] is the simulator-neutral state every perturbation operates
//! on: object placements, the third-person camera, the directional light,
//! surface textures, the robot's initial joint configuration and the task.
//! Values are plain data; every transform returns a new scene.

use crate::geometry::{self, Mat3, Vec3};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

pub const DEFAULT_JOINTS: usize = 7;
const TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub scene_id: String,
    pub objects: Vec<ObjectPlacement>,
    pub camera: CameraSpec,
    pub lights: LightSpec,
    pub textures: BTreeMap<SurfaceRole, String>,
    pub robot_init: RobotInit,
    pub task: TaskSpec,
}

/// An object resting in the scene. `position` is the centre of its box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectPlacement {
    pub object_id: String,
    pub category: String,
    pub position: Vec3,
    /// Roll, pitch, yaw in radians, each in `(-pi, pi]`.
    pub orientation: Vec3,
    /// Half side lengths of the object's box in its own frame, metres.
    pub half_extents: Vec3,
    #[serde(default)]
    pub is_target: bool,
    #[serde(default)]
    pub is_confounder: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub position: Vec3,
    /// Camera-to-world rotation, row-major. Columns are the camera's forward,
    /// left and up axes expressed in world coordinates.
    pub rotation: Mat3,
    pub look_center: Vec3,
    pub fov_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LightSpec {
    pub diffuse: Vec3,
    pub direction: Vec3,
    pub specular: f64,
    pub shadows: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotInit {
    pub qpos: Vec<f64>,
    pub gripper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SurfaceRole {
    SceneWall,
    WorkSurface,
}

impl SurfaceRole {
    pub const ALL: [SurfaceRole; 2] = [SurfaceRole::SceneWall, SurfaceRole::WorkSurface];

    pub fn as_str(self) -> &'static str {
        match self {
            SurfaceRole::SceneWall => "scene-wall",
            SurfaceRole::WorkSurface => "work-surface",
        }
    }
}

impl FromStr for SurfaceRole {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "scene-wall" => Ok(SurfaceRole::SceneWall),
            "work-surface" => Ok(SurfaceRole::WorkSurface),
            other => Err(format!("unknown surface role `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Spatial,
    Object,
    Goal,
    Long,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Spatial, Suite::Object, Suite::Goal, Suite::Long];

    pub fn label(self) -> &'static str {
        match self {
            Suite::Spatial => "Spatial",
            Suite::Object => "Object",
            Suite::Goal => "Goal",
            Suite::Long => "Long",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub instruction: String,
    pub goal: Goal,
    pub suite: Suite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PredicateName {
    On,
    In,
    NextTo,
    PickedUp,
    Open,
    Closed,
    TurnedOn,
}

impl PredicateName {
    pub fn as_str(self) -> &'static str {
        match self {
            PredicateName::On => "on",
            PredicateName::In => "in",
            PredicateName::NextTo => "next_to",
            PredicateName::PickedUp => "picked_up",
            PredicateName::Open => "open",
            PredicateName::Closed => "closed",
            PredicateName::TurnedOn => "turned_on",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            PredicateName::On | PredicateName::In | PredicateName::NextTo => 2,
            _ => 1,
        }
    }

    /// Relations with a geometric reading that layout perturbations must preserve.
    pub fn is_spatial(self) -> bool {
        self.arity() == 2
    }
}

impl FromStr for PredicateName {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "on" => PredicateName::On,
            "in" => PredicateName::In,
            "next_to" => PredicateName::NextTo,
            "picked_up" => PredicateName::PickedUp,
            "open" => PredicateName::Open,
            "closed" => PredicateName::Closed,
            "turned_on" => PredicateName::TurnedOn,
            other => return Err(format!("unknown predicate `{other}`")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Predicate {
    pub name: PredicateName,
    pub args: Vec<String>,
}

impl Predicate {
    pub fn new(name: PredicateName, args: &[&str]) -> Self {
        Self {
            name,
            args: args.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.name.as_str(), self.args.join(","))
    }
}

impl FromStr for Predicate {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let open = s.find('(').ok_or_else(|| format!("missing `(` in `{s}`"))?;
        if !s.ends_with(')') {
            return Err(format!("missing `)` in `{s}`"));
        }
        let name: PredicateName = s[..open].trim().parse()?;
        let args: Vec<String> = s[open + 1..s.len() - 1]
            .split(',')
            .map(|a| a.trim().to_string())
            .filter(|a| !a.is_empty())
            .collect();
        if args.len() != name.arity() {
            return Err(format!(
                "`{}` takes {} argument(s), got {}",
                name.as_str(),
                name.arity(),
                args.len()
            ));
        }
        Ok(Predicate { name, args })
    }
}

/// Conjunction of goal predicates, written `on(a,b) & picked_up(c)`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Goal(pub Vec<Predicate>);

impl Goal {
    pub fn single(p: Predicate) -> Self {
        Goal(vec![p])
    }

    pub fn object_ids(&self) -> impl Iterator<Item = &str> {
        self.0.iter().flat_map(|p| p.args.iter().map(String::as_str))
    }

    pub fn references(&self, id: &str) -> bool {
        self.object_ids().any(|a| a == id)
    }
}

impl fmt::Display for Goal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(Predicate::to_string).collect();
        f.write_str(&parts.join(" & "))
    }
}

impl FromStr for Goal {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.trim().is_empty() {
            return Ok(Goal::default());
        }
        s.split('&').map(str::parse).collect::<Result<_, _>>().map(Goal)
    }
}

impl TryFrom<String> for Goal {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Goal> for String {
    fn from(g: Goal) -> String {
        g.to_string()
    }
}

/// One failed invariant, addressed by key path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// Robot arm description used for validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KinematicProfile {
    pub joints: usize,
}

impl Default for KinematicProfile {
    fn default() -> Self {
        Self { joints: DEFAULT_JOINTS }
    }
}

pub fn is_valid_object_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

fn angle_in_range(a: f64) -> bool {
    a.is_finite() && a > -std::f64::consts::PI && a <= std::f64::consts::PI
}

fn finite3(v: &Vec3) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Checks every scene invariant against a 7-joint arm.
pub fn validate(scene: &SceneSpec) -> Vec<Violation> {
    validate_with(scene, &KinematicProfile::default())
}

pub fn validate_with(scene: &SceneSpec, profile: &KinematicProfile) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |path: String, message: String| out.push(Violation { path, message });

    if scene.scene_id.is_empty() {
        push("scene_id".into(), "must not be empty".into());
    }

    let mut seen = std::collections::BTreeSet::new();
    for (i, obj) in scene.objects.iter().enumerate() {
        let base = format!("objects[{i}]");
        if !is_valid_object_id(&obj.object_id) {
            push(
                format!("{base}.object_id"),
                format!("`{}` is not a valid id ([A-Za-z0-9_-]+)", obj.object_id),
            );
        }
        if !seen.insert(obj.object_id.as_str()) {
            push(
                format!("{base}.object_id"),
                format!("duplicate object id `{}`", obj.object_id),
            );
        }
        if !finite3(&obj.position) {
            push(format!("{base}.position"), "must be finite".into());
        }
        if !obj.orientation.iter().all(|a| angle_in_range(*a)) {
            push(format!("{base}.orientation"), "angles must lie in (-pi, pi]".into());
        }
        if !obj.half_extents.iter().all(|h| h.is_finite() && *h > 0.0) {
            push(format!("{base}.half_extents"), "must be positive".into());
        }
    }

    let targets: Vec<&str> = scene
        .objects
        .iter()
        .filter(|o| o.is_target)
        .map(|o| o.object_id.as_str())
        .collect();
    let goal_has_objects = scene.task.goal.object_ids().next().is_some();
    if targets.len() > 1 || (goal_has_objects && targets.len() != 1) {
        push(
            "objects".into(),
            format!("expected exactly one target object, found {}", targets.len()),
        );
    }
    for id in scene.task.goal.object_ids() {
        if !seen.contains(id) {
            push("task.goal".into(), format!("references missing object `{id}`"));
        }
    }

    let cam = &scene.camera;
    if !finite3(&cam.position) {
        push("camera.position".into(), "must be finite".into());
    }
    if !finite3(&cam.look_center) {
        push("camera.look_center".into(), "must be finite".into());
    }
    let ortho = geometry::orthonormality_error(&cam.rotation);
    let det = geometry::det(&cam.rotation);
    if !(ortho <= TOL && (det - 1.0).abs() <= TOL) {
        push(
            "camera.rotation".into(),
            format!("not a proper rotation (|R^T R - I| = {ortho:.3e}, det = {det:.12})"),
        );
    }
    if !(cam.fov_deg > 0.0 && cam.fov_deg < 180.0) {
        push("camera.fov_deg".into(), "must lie in (0, 180)".into());
    }

    let light = &scene.lights;
    if !light.diffuse.iter().all(|c| (0.0..=1.0).contains(c)) {
        push("lights.diffuse".into(), "channels must lie in [0, 1]".into());
    }
    if !finite3(&light.direction) || (geometry::norm(&light.direction) - 1.0).abs() > TOL {
        push("lights.direction".into(), "must be a unit vector".into());
    }
    if !(light.specular >= 0.0 && light.specular.is_finite()) {
        push("lights.specular".into(), "must be non-negative".into());
    }

    for (role, id) in &scene.textures {
        if id.is_empty() {
            push(format!("textures.{}", role.as_str()), "empty texture id".into());
        }
    }

    let robot = &scene.robot_init;
    if robot.qpos.len() != profile.joints {
        push(
            "robot_init.qpos".into(),
            format!("expected {} joint angles, found {}", profile.joints, robot.qpos.len()),
        );
    }
    if !robot.qpos.iter().all(|q| q.is_finite()) {
        push("robot_init.qpos".into(), "must be finite".into());
    }
    if !(0.0..=1.0).contains(&robot.gripper) {
        push("robot_init.gripper".into(), "must lie in [0, 1]".into());
    }

    out
}

impl SceneSpec {
    pub fn object(&self, id: &str) -> Option<&ObjectPlacement> {
        self.objects.iter().find(|o| o.object_id == id)
    }

    pub fn target(&self) -> Option<&ObjectPlacement> {
        self.objects.iter().find(|o| o.is_target)
    }
}

/// Geometric readings of the spatial goal predicates.
pub mod relations {
    use super::{ObjectPlacement, Predicate, PredicateName, SceneSpec};
    use crate::geometry::{self, Vec3};

    /// Horizontal centre distance below which two objects are `next_to`.
    pub const NEXT_TO_THRESHOLD: f64 = 0.15;
    /// Allowed gap between a supporter's top face and the object's bottom face for `on`.
    pub const ON_CONTACT_TOLERANCE: f64 = 0.01;
    const CONTAIN_TOL: f64 = 1e-9;

    /// World-aligned bounding box `(min, max)` of an object's rotated box.
    pub fn aabb(obj: &ObjectPlacement) -> (Vec3, Vec3) {
        let r = geometry::rpy_to_matrix(obj.orientation);
        let mut half = [0.0; 3];
        for (i, h) in half.iter_mut().enumerate() {
            *h = (0..3).map(|j| r[i][j].abs() * obj.half_extents[j]).sum();
        }
        let p = obj.position;
        (
            [p[0] - half[0], p[1] - half[1], p[2] - half[2]],
            [p[0] + half[0], p[1] + half[1], p[2] + half[2]],
        )
    }

    pub fn next_to(a: &ObjectPlacement, b: &ObjectPlacement) -> bool {
        let dx = a.position[0] - b.position[0];
        let dy = a.position[1] - b.position[1];
        dx.hypot(dy) < NEXT_TO_THRESHOLD
    }

    /// `a` rests on `b`: contact within tolerance plus horizontal footprint overlap.
    pub fn on(a: &ObjectPlacement, b: &ObjectPlacement) -> bool {
        let (amin, amax) = aabb(a);
        let (bmin, bmax) = aabb(b);
        let contact = (bmax[2] - amin[2]).abs() < ON_CONTACT_TOLERANCE;
        let overlap = (0..2).all(|k| amin[k] < bmax[k] && bmin[k] < amax[k]);
        contact && overlap
    }

    /// `a`'s box lies inside `b`'s box.
    pub fn inside(a: &ObjectPlacement, b: &ObjectPlacement) -> bool {
        let (amin, amax) = aabb(a);
        let (bmin, bmax) = aabb(b);
        (0..3).all(|k| amin[k] >= bmin[k] - CONTAIN_TOL && amax[k] <= bmax[k] + CONTAIN_TOL)
    }

    /// Evaluates a spatial predicate; `None` for non-spatial predicates or unknown ids.
    pub fn holds(scene: &SceneSpec, p: &Predicate) -> Option<bool> {
        if !p.name.is_spatial() {
            return None;
        }
        let a = scene.object(&p.args[0])?;
        let b = scene.object(&p.args[1])?;
        Some(match p.name {
            PredicateName::NextTo => next_to(a, b),
            PredicateName::On => on(a, b),
            PredicateName::In => inside(a, b),
            _ => unreachable!("non-spatial predicates filtered above"),
        })
    }
}

/// Small hand-made scenes for examples and tests.
pub mod fixtures {
    use super::*;

    pub fn object(id: &str, category: &str, position: Vec3, half: Vec3) -> ObjectPlacement {
        ObjectPlacement {
            object_id: id.into(),
            category: category.into(),
            position,
            orientation: [0.0; 3],
            half_extents: half,
            is_target: false,
            is_confounder: false,
        }
    }

    /// Small LIBERO-object-like scene: pick up the alphabet soup.
    pub fn scene() -> SceneSpec {
        let mut soup = object("alphabet_soup", "alphabet_soup", [0.0, 0.0, 0.85], [0.03, 0.03, 0.05]);
        soup.is_target = true;
        let sauce = object("tomato_sauce", "tomato_sauce", [0.2, 0.1, 0.85], [0.03, 0.03, 0.05]);
        let basket = object("basket", "basket", [-0.2, 0.15, 0.85], [0.1, 0.1, 0.05]);
        let mut textures = BTreeMap::new();
        textures.insert(SurfaceRole::SceneWall, "painted_wall".to_string());
        textures.insert(SurfaceRole::WorkSurface, "oak_table".to_string());
        SceneSpec {
            scene_id: "libero_object_0".into(),
            objects: vec![soup, sauce, basket],
            camera: CameraSpec {
                position: [1.0, 0.0, 1.5],
                rotation: crate::geometry::look_at([1.0, 0.0, 1.5], [0.0, 0.0, 0.8]).expect("non-degenerate"),
                look_center: [0.0, 0.0, 0.8],
                fov_deg: 45.0,
            },
            lights: LightSpec {
                diffuse: [0.8, 0.8, 0.8],
                direction: [0.0, 0.0, -1.0],
                specular: 0.5,
                shadows: true,
            },
            textures,
            robot_init: RobotInit {
                qpos: vec![0.0, -0.2, 0.0, -2.4, 0.0, 2.2, 0.8],
                gripper: 0.0,
            },
            task: TaskSpec {
                instruction: "pick up the alphabet soup".into(),
                goal: Goal::single(Predicate::new(PredicateName::PickedUp, &["alphabet_soup"])),
                suite: Suite::Object,
            },
        }
    }

    /// [`scene`] under another id and suite.
    pub fn scene_in(scene_id: &str, suite: Suite) -> SceneSpec {
        let mut s = scene();
        s.scene_id = scene_id.into();
        s.task.suite = suite;
        s
    }
}
