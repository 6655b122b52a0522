//! Trajectory data model, synthetic corpora and augmentation.

mod augment;
pub mod human;
mod synth;
mod trace;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use augment::{mirror, mirror_caption, mirror_on, time_scale, TIME_SCALE_RANGE};
pub use human::{generate_human_corpus, generate_qa_corpus, HumanLayout, HumanPose, HumanSynthConfig};
pub use synth::{caption_for, generate_robot_corpus, render_primitives, Primitive, SynthConfig};
pub use trace::{trace_csv, trace_svg};

use crate::error::{Error, Result};
use crate::vocab::GridCell;

/// Robot pose dimension: forward velocity, lateral velocity, yaw rate.
pub const ROBOT_DIM: usize = 3;

/// Body whose poses a trajectory carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Embodiment {
    Robot,
    /// Articulated human with `joints` joints (root included).
    Human { joints: usize },
    Custom { dim: usize },
}

impl Embodiment {
    pub fn dim(self) -> usize {
        match self {
            Embodiment::Robot => ROBOT_DIM,
            Embodiment::Human { joints } => HumanLayout::dim_for(joints),
            Embodiment::Custom { dim } => dim,
        }
    }

    pub fn is_robot(self) -> bool {
        self == Embodiment::Robot
    }

    pub fn is_human(self) -> bool {
        matches!(self, Embodiment::Human { .. })
    }
}

impl std::fmt::Display for Embodiment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Embodiment::Robot => write!(f, "robot"),
            Embodiment::Human { joints } => write!(f, "human:{joints}"),
            Embodiment::Custom { dim } => write!(f, "custom:{dim}"),
        }
    }
}

impl std::str::FromStr for Embodiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Embodiment(s.to_string());
        let (tag, arg) = match s.split_once(':') {
            Some((t, a)) => (t, Some(a.parse::<usize>().map_err(|_| bad())?)),
            None => (s, None),
        };
        match (tag, arg) {
            ("robot", None) => Ok(Embodiment::Robot),
            ("human", None) => Ok(Embodiment::Human { joints: 22 }),
            ("human", Some(k)) if k >= 2 => Ok(Embodiment::Human { joints: k }),
            ("custom", Some(d)) if d >= 1 => Ok(Embodiment::Custom { dim: d }),
            _ => Err(bad()),
        }
    }
}

impl TryFrom<String> for Embodiment {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Embodiment> for String {
    fn from(e: Embodiment) -> Self {
        e.to_string()
    }
}

/// Locomotion gait of the quadruped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gait {
    Trot,
    Bound,
}

impl Gait {
    pub const ALL: [Gait; 2] = [Gait::Trot, Gait::Bound];

    pub fn token_name(self) -> &'static str {
        match self {
            Gait::Trot => "TROT",
            Gait::Bound => "BOUND",
        }
    }

    pub fn from_token_name(name: &str) -> Result<Self> {
        Gait::ALL
            .into_iter()
            .find(|g| g.token_name() == name)
            .ok_or_else(|| Error::Data(format!("unknown gait {name:?}")))
    }
}

/// One robot pose: body-frame planar velocities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotPose {
    pub lin_x: f64,
    pub lin_z: f64,
    pub ang_y: f64,
}

/// Magnitude limits for robot poses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobotBounds {
    pub max_lin: f64,
    pub max_ang: f64,
}

impl Default for RobotBounds {
    fn default() -> Self {
        Self {
            max_lin: 2.0,
            max_ang: 2.0,
        }
    }
}

impl RobotPose {
    pub fn from_slice(v: &[f64]) -> Result<Self> {
        match *v {
            [lin_x, lin_z, ang_y] => Ok(Self { lin_x, lin_z, ang_y }),
            _ => Err(Error::Shape(format!("robot pose needs {ROBOT_DIM} values, got {}", v.len()))),
        }
    }

    pub fn to_vec(self) -> Vec<f64> {
        vec![self.lin_x, self.lin_z, self.ang_y]
    }

    pub fn validate(&self, bounds: &RobotBounds) -> Result<()> {
        let v = [self.lin_x, self.lin_z, self.ang_y];
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("robot pose".into()));
        }
        if self.lin_x.abs() > bounds.max_lin || self.lin_z.abs() > bounds.max_lin || self.ang_y.abs() > bounds.max_ang {
            return Err(Error::Data(format!("robot pose {v:?} exceeds bounds")));
        }
        Ok(())
    }
}

/// Time-indexed pose sequence for one embodiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub embodiment: Embodiment,
    pub dt: f64,
    pub poses: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn new(embodiment: Embodiment, dt: f64, poses: Vec<Vec<f64>>) -> Result<Self> {
        let t = Self { embodiment, dt, poses };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Data(format!("dt must be positive, got {}", self.dt)));
        }
        if self.poses.is_empty() {
            return Err(Error::Data("trajectory has no poses".into()));
        }
        let d = self.embodiment.dim();
        for (t, p) in self.poses.iter().enumerate() {
            if p.len() != d {
                return Err(Error::Shape(format!(
                    "pose {t} has {} values, {} expects {d}",
                    p.len(),
                    self.embodiment
                )));
            }
            if p.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("pose {t}")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embodiment.dim()
    }

    /// Poses flattened row-major as `T x dim`.
    pub fn flat(&self) -> Vec<f64> {
        self.poses.concat()
    }
}

/// Planar pose `(x, z, heading)` in the world frame.
pub type Se2 = (f64, f64, f64);

/// Explicit Euler integration of robot body velocities from the origin.
///
/// Returns `T + 1` poses; heading 0 faces +x and positive yaw turns toward +z.
pub fn integrate_se2(traj: &Trajectory) -> Result<Vec<Se2>> {
    if !traj.embodiment.is_robot() {
        return Err(Error::Embodiment(format!("cannot integrate {} as SE(2)", traj.embodiment)));
    }
    let mut out = Vec::with_capacity(traj.len() + 1);
    let (mut x, mut z, mut h) = (0.0f64, 0.0f64, 0.0f64);
    out.push((x, z, h));
    for p in &traj.poses {
        let (s, c) = h.sin_cos();
        x += (p[0] * c - p[1] * s) * traj.dt;
        z += (p[0] * s + p[1] * c) * traj.dt;
        h += p[2] * traj.dt;
        out.push((x, z, h));
    }
    Ok(out)
}

/// Final `(x, z, heading)` of [`integrate_se2`].
pub fn endpoint(traj: &Trajectory) -> Result<Se2> {
    Ok(*integrate_se2(traj)?.last().expect("integration output is never empty"))
}

/// A trajectory paired with its annotation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptionedTrajectory {
    #[serde(flatten)]
    pub trajectory: Trajectory,
    pub caption: String,
    pub goal_cell: Option<GridCell>,
    pub gait: Option<Gait>,
}

impl CaptionedTrajectory {
    pub fn validate(&self) -> Result<()> {
        self.trajectory.validate()?;
        if self.caption.trim().is_empty() {
            return Err(Error::Data("caption is empty".into()));
        }
        Ok(())
    }
}

/// Writes one JSON object per line with fields in the canonical order.
pub fn write_corpus(path: &Path, corpus: &[CaptionedTrajectory]) -> Result<()> {
    crate::io::write_jsonl(path, corpus)
}

pub fn read_corpus(path: &Path) -> Result<Vec<CaptionedTrajectory>> {
    let corpus: Vec<CaptionedTrajectory> = crate::io::read_jsonl(path)?;
    for (i, c) in corpus.iter().enumerate() {
        c.validate().map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
    }
    Ok(corpus)
}
