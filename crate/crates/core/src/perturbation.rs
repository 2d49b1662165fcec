//! Perturbation vocabulary shared by generators, the harness and the analytics.

use crate::camera::CameraPerturbParams;
use crate::geometry::Vec3;
use crate::image::NoiseParams;
use crate::language::RewriteMode;
use crate::scene::SurfaceRole;
use crate::scene_perturb::LightPerturbParams;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Intensity ladder position, 1 (mildest) to 5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct SeverityLevel(u8);

impl SeverityLevel {
    pub const ALL: [SeverityLevel; 5] = [
        SeverityLevel(1),
        SeverityLevel(2),
        SeverityLevel(3),
        SeverityLevel(4),
        SeverityLevel(5),
    ];

    pub fn new(level: u8) -> Result<Self, LevelError> {
        if (1..=5).contains(&level) {
            Ok(Self(level))
        } else {
            Err(LevelError(level))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("severity level {0} is outside 1..=5")]
pub struct LevelError(pub u8);

impl TryFrom<u8> for SeverityLevel {
    type Error = LevelError;
    fn try_from(v: u8) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<SeverityLevel> for u8 {
    fn from(l: SeverityLevel) -> u8 {
        l.0
    }
}

impl fmt::Display for SeverityLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}", self.0)
    }
}

/// The seven perturbation dimensions, in indicator order `D_1..D_7`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dimension {
    Layout,
    Background,
    Light,
    Camera,
    Robot,
    Noise,
    Language,
}

impl Dimension {
    pub const ALL: [Dimension; 7] = [
        Dimension::Layout,
        Dimension::Background,
        Dimension::Light,
        Dimension::Camera,
        Dimension::Robot,
        Dimension::Noise,
        Dimension::Language,
    ];

    /// Column order of the per-dimension report tables.
    pub const TABLE_ORDER: [Dimension; 7] = [
        Dimension::Camera,
        Dimension::Robot,
        Dimension::Language,
        Dimension::Light,
        Dimension::Background,
        Dimension::Noise,
        Dimension::Layout,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Dimension::Layout => "Layout",
            Dimension::Background => "Background",
            Dimension::Light => "Light",
            Dimension::Camera => "Camera",
            Dimension::Robot => "Robot",
            Dimension::Noise => "Noise",
            Dimension::Language => "Language",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::Layout => "layout",
            Dimension::Background => "background",
            Dimension::Light => "light",
            Dimension::Camera => "camera",
            Dimension::Robot => "robot",
            Dimension::Noise => "noise",
            Dimension::Language => "language",
        }
    }

    pub fn sub_dimensions(self) -> &'static [SubDimension] {
        use SubDimension::*;
        match self {
            Dimension::Layout => &[Confounders, TargetPose],
            Dimension::Background => &[SceneTheme, SurfaceAppearance],
            Dimension::Light => &[Diffuse, Direction, Specular, Shadows],
            Dimension::Camera => &[CameraDistance, SphericalPosition, CameraOrientation],
            Dimension::Robot => &[InitialJoints],
            Dimension::Noise => &[MotionBlur, GaussianBlur, ZoomBlur, Fog, GlassBlur],
            Dimension::Language => &[Distraction, CommonSense, ReasoningChain],
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Dimension {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase();
        Dimension::ALL
            .into_iter()
            .find(|d| d.as_str() == lower)
            .ok_or_else(|| format!("unknown dimension `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubDimension {
    Confounders,
    TargetPose,
    SceneTheme,
    SurfaceAppearance,
    Diffuse,
    Direction,
    Specular,
    Shadows,
    CameraDistance,
    SphericalPosition,
    CameraOrientation,
    InitialJoints,
    Distraction,
    CommonSense,
    ReasoningChain,
    MotionBlur,
    GaussianBlur,
    ZoomBlur,
    Fog,
    GlassBlur,
}

impl SubDimension {
    pub fn dimension(self) -> Dimension {
        Dimension::ALL
            .into_iter()
            .find(|d| d.sub_dimensions().contains(&self))
            .expect("every sub-dimension belongs to a dimension")
    }

    /// Short code used in tables: O1, B2, L3, C1, I1, R2, N5, ...
    pub fn code(self) -> &'static str {
        use SubDimension::*;
        match self {
            Confounders => "O1",
            TargetPose => "O2",
            SceneTheme => "B1",
            SurfaceAppearance => "B2",
            Diffuse => "L1",
            Direction => "L2",
            Specular => "L3",
            Shadows => "L4",
            CameraDistance => "C1",
            SphericalPosition => "C2",
            CameraOrientation => "C3",
            InitialJoints => "I1",
            Distraction => "R1",
            CommonSense => "R2",
            ReasoningChain => "R3",
            MotionBlur => "N1",
            GaussianBlur => "N2",
            ZoomBlur => "N3",
            Fog => "N4",
            GlassBlur => "N5",
        }
    }
}

/// Resolved numeric parameters of one perturbation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PerturbationParams {
    Confounders {
        count: u32,
    },
    TargetPose {
        pos_bounds: Vec3,
        rot_bounds: Vec3,
    },
    Texture {
        role: SurfaceRole,
        texture_id: String,
    },
    Light(LightPerturbParams),
    Camera(CameraPerturbParams),
    RobotInit {
        magnitude: f64,
    },
    Language {
        mode: RewriteMode,
        instruction: String,
    },
    Noise(NoiseParams),
    /// The dimension is active but its parameters are owned by the environment
    /// (synthetic runs, externally generated variants).
    Nominal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub dimension: Dimension,
    pub sub_dimension: Option<SubDimension>,
    pub level: Option<SeverityLevel>,
    pub params: PerturbationParams,
    pub seed: u64,
}

impl PerturbationSpec {
    pub fn nominal(dimension: Dimension) -> Self {
        Self {
            dimension,
            sub_dimension: None,
            level: None,
            params: PerturbationParams::Nominal,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum VectorError {
    #[error("dimension `{0}` appears more than once")]
    Duplicate(Dimension),
    #[error("flags do not match the {specs} specs ({flags} flags set)")]
    FlagMismatch { specs: usize, flags: usize },
}

/// Indicator vector `D_1..D_7` plus one spec per active dimension.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "RawVector")]
pub struct PerturbationVector {
    pub flags: [bool; 7],
    pub specs: Vec<PerturbationSpec>,
}

#[derive(Deserialize)]
struct RawVector {
    flags: [bool; 7],
    specs: Vec<PerturbationSpec>,
}

impl TryFrom<RawVector> for PerturbationVector {
    type Error = VectorError;
    fn try_from(raw: RawVector) -> Result<Self, Self::Error> {
        let v = PerturbationVector::new(raw.specs)?;
        if v.flags != raw.flags {
            return Err(VectorError::FlagMismatch {
                specs: v.specs.len(),
                flags: raw.flags.iter().filter(|f| **f).count(),
            });
        }
        Ok(v)
    }
}

impl PerturbationVector {
    pub fn unperturbed() -> Self {
        Self::default()
    }

    /// Builds the vector from specs, sorted into indicator order.
    pub fn new(mut specs: Vec<PerturbationSpec>) -> Result<Self, VectorError> {
        specs.sort_by_key(|s| s.dimension);
        let mut flags = [false; 7];
        for s in &specs {
            let i = s.dimension.index();
            if flags[i] {
                return Err(VectorError::Duplicate(s.dimension));
            }
            flags[i] = true;
        }
        Ok(Self { flags, specs })
    }

    /// Active dimensions with nominal parameters.
    pub fn from_dimensions(dims: &[Dimension]) -> Result<Self, VectorError> {
        Self::new(dims.iter().map(|d| PerturbationSpec::nominal(*d)).collect())
    }

    pub fn is_set(&self, d: Dimension) -> bool {
        self.flags[d.index()]
    }

    pub fn active(&self) -> impl Iterator<Item = Dimension> + '_ {
        Dimension::ALL.into_iter().filter(|d| self.is_set(*d))
    }

    pub fn count(&self) -> usize {
        self.flags.iter().filter(|f| **f).count()
    }

    pub fn spec(&self, d: Dimension) -> Option<&PerturbationSpec> {
        self.specs.iter().find(|s| s.dimension == d)
    }

    /// Bitmask with bit `i` set when `D_{i+1} = 1`.
    pub fn mask(&self) -> u8 {
        self.flags
            .iter()
            .enumerate()
            .fold(0u8, |m, (i, f)| if *f { m | (1 << i) } else { m })
    }
}
