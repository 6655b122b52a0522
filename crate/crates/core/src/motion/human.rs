//! Articulated human pose layout and a procedural action generator.
//!
//! Pose layout (root joint excluded from positions and rotations):
//! `root_ang_vel(1) | root_vel_xz(2) | root_height(1) | joint_pos(3(k-1)) |
//! joint_vel(3k) | joint_rot(6(k-1)) | foot_contact(4)`, i.e. `12k - 1` values.
//! Axes: x forward, y up, z lateral (positive to the left).

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{CaptionedTrajectory, Embodiment, Trajectory};
use crate::error::{Error, Result};

const REDUCED_JOINTS: [&str; 5] = ["root", "left_hand", "right_hand", "left_foot", "right_foot"];

const SMPL_JOINTS: [&str; 22] = [
    "pelvis",
    "left_hip",
    "right_hip",
    "spine1",
    "left_knee",
    "right_knee",
    "spine2",
    "left_ankle",
    "right_ankle",
    "spine3",
    "left_foot",
    "right_foot",
    "neck",
    "left_collar",
    "right_collar",
    "head",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
];

/// Named joints of a human embodiment and the index ranges of each feature.
#[derive(Clone, Debug, PartialEq)]
pub struct HumanLayout {
    names: Vec<String>,
}

impl HumanLayout {
    pub const fn dim_for(joints: usize) -> usize {
        12 * joints - 1
    }

    /// Root, both hands and both feet.
    pub fn reduced() -> Self {
        Self::from_names(&REDUCED_JOINTS)
    }

    /// The 22-joint SMPL skeleton.
    pub fn smpl() -> Self {
        Self::from_names(&SMPL_JOINTS)
    }

    fn from_names(names: &[&str]) -> Self {
        Self {
            names: names.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Preset for `joints`, or anonymous joints without left/right pairs.
    pub fn for_joints(joints: usize) -> Self {
        match joints {
            5 => Self::reduced(),
            22 => Self::smpl(),
            k => Self {
                names: (0..k).map(|i| if i == 0 { "root".into() } else { format!("joint{i}") }).collect(),
            },
        }
    }

    pub fn joints(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn dim(&self) -> usize {
        Self::dim_for(self.joints())
    }

    pub fn root_ang_vel(&self) -> usize {
        0
    }

    pub fn root_vel_xz(&self) -> Range<usize> {
        1..3
    }

    pub fn root_height(&self) -> usize {
        3
    }

    pub fn joint_pos(&self) -> Range<usize> {
        4..4 + 3 * (self.joints() - 1)
    }

    pub fn joint_vel(&self) -> Range<usize> {
        let s = self.joint_pos().end;
        s..s + 3 * self.joints()
    }

    pub fn joint_rot(&self) -> Range<usize> {
        let s = self.joint_vel().end;
        s..s + 6 * (self.joints() - 1)
    }

    pub fn foot_contact(&self) -> Range<usize> {
        let s = self.joint_rot().end;
        s..s + 4
    }

    /// Index of the mirror-image joint (self for central joints).
    pub fn mirror_joint(&self, j: usize) -> usize {
        let name = &self.names[j];
        let twin = if let Some(rest) = name.strip_prefix("left_") {
            format!("right_{rest}")
        } else if let Some(rest) = name.strip_prefix("right_") {
            format!("left_{rest}")
        } else {
            return j;
        };
        self.names.iter().position(|n| *n == twin).unwrap_or(j)
    }

    fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// Structured view of one flat human pose vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HumanPose {
    pub root_ang_vel: f64,
    pub root_vel_xz: [f64; 2],
    pub root_height: f64,
    pub joint_pos: Vec<f64>,
    pub joint_vel: Vec<f64>,
    pub joint_rot: Vec<f64>,
    pub foot_contact: [f64; 4],
}

impl HumanPose {
    pub fn from_slice(layout: &HumanLayout, v: &[f64]) -> Result<Self> {
        if v.len() != layout.dim() {
            return Err(Error::Shape(format!("human pose needs {} values, got {}", layout.dim(), v.len())));
        }
        let fc = &v[layout.foot_contact()];
        Ok(Self {
            root_ang_vel: v[0],
            root_vel_xz: [v[1], v[2]],
            root_height: v[3],
            joint_pos: v[layout.joint_pos()].to_vec(),
            joint_vel: v[layout.joint_vel()].to_vec(),
            joint_rot: v[layout.joint_rot()].to_vec(),
            foot_contact: [fc[0], fc[1], fc[2], fc[3]],
        })
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![self.root_ang_vel, self.root_vel_xz[0], self.root_vel_xz[1], self.root_height];
        v.extend_from_slice(&self.joint_pos);
        v.extend_from_slice(&self.joint_vel);
        v.extend_from_slice(&self.joint_rot);
        v.extend_from_slice(&self.foot_contact);
        v
    }
}

/// Reflects a flat human pose across the forward axis.
pub(crate) fn mirror_pose(layout: &HumanLayout, v: &[f64]) -> Vec<f64> {
    let k = layout.joints();
    let mut out = v.to_vec();
    out[layout.root_ang_vel()] = -v[layout.root_ang_vel()];
    out[layout.root_vel_xz().start + 1] = -v[layout.root_vel_xz().start + 1];
    let (pos, vel, rot) = (layout.joint_pos().start, layout.joint_vel().start, layout.joint_rot().start);
    for j in 0..k {
        let m = layout.mirror_joint(j);
        for a in 0..3 {
            let s = if a == 2 { -1.0 } else { 1.0 };
            out[vel + 3 * m + a] = s * v[vel + 3 * j + a];
            if j > 0 {
                out[pos + 3 * (m - 1) + a] = s * v[pos + 3 * (j - 1) + a];
            }
        }
        if j > 0 {
            for a in 0..6 {
                let s = if a % 3 == 2 { -1.0 } else { 1.0 };
                out[rot + 6 * (m - 1) + a] = s * v[rot + 6 * (j - 1) + a];
            }
        }
    }
    let fc = layout.foot_contact().start;
    out[fc..fc + 4].copy_from_slice(&[v[fc + 2], v[fc + 3], v[fc], v[fc + 1]]);
    out
}

/// Generator settings for the human corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HumanSynthConfig {
    pub seed: u64,
    pub n_samples: usize,
    pub dt: f64,
    pub joints: usize,
    pub max_actions: usize,
    /// Per-action duration range in seconds.
    pub action_duration: [f64; 2],
    pub noise_std: f64,
}

impl Default for HumanSynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_samples: 1000,
            dt: 0.1,
            joints: 5,
            max_actions: 2,
            action_duration: [1.6, 3.2],
            noise_std: 0.005,
        }
    }
}

impl HumanSynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::Config("n_samples must be at least 1".into()));
        }
        if !(self.dt > 0.0) || self.joints < 2 || self.max_actions == 0 {
            return Err(Error::Config("invalid human generator settings".into()));
        }
        let [lo, hi] = self.action_duration;
        if !(lo >= self.dt && hi >= lo) || !(self.noise_std >= 0.0) {
            return Err(Error::Config("invalid human action duration or noise".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Action {
    WalkForward,
    WalkBackward,
    TurnLeft,
    TurnRight,
    WaveLeft,
    WaveRight,
    RaiseArms,
    Jump,
    Squat,
    KickLeft,
    KickRight,
    StandStill,
}

const ACTIONS: [Action; 12] = [
    Action::WalkForward,
    Action::WalkBackward,
    Action::TurnLeft,
    Action::TurnRight,
    Action::WaveLeft,
    Action::WaveRight,
    Action::RaiseArms,
    Action::Jump,
    Action::Squat,
    Action::KickLeft,
    Action::KickRight,
    Action::StandStill,
];

impl Action {
    fn phrase(self) -> &'static str {
        match self {
            Action::WalkForward => "walks forward",
            Action::WalkBackward => "walks backward",
            Action::TurnLeft => "turns left",
            Action::TurnRight => "turns right",
            Action::WaveLeft => "waves the left hand",
            Action::WaveRight => "waves the right hand",
            Action::RaiseArms => "raises both arms",
            Action::Jump => "jumps",
            Action::Squat => "squats down",
            Action::KickLeft => "kicks with the left foot",
            Action::KickRight => "kicks with the right foot",
            Action::StandStill => "stands still",
        }
    }

    fn questions(self) -> [&'static str; 2] {
        match self {
            Action::WalkForward => ["how do you approach a friend?", "how do you move toward a door?"],
            Action::WalkBackward => ["how do you step away from danger?", "how do you back away from a wall?"],
            Action::TurnLeft => ["how do you look at something on your left?", "how do you face the left side?"],
            Action::TurnRight => ["how do you look at something on your right?", "how do you face the right side?"],
            Action::WaveLeft => ["how do you greet a friend with your left hand?", "how do you say goodbye with your left hand?"],
            Action::WaveRight => ["how do you greet a friend with your right hand?", "how do you say goodbye with your right hand?"],
            Action::RaiseArms => ["how do you celebrate a goal?", "how do you show you are happy?"],
            Action::Jump => ["how do you reach something high?", "how do you get over a puddle?"],
            Action::Squat => ["how do you pick something up from the floor?", "how do you exercise your legs?"],
            Action::KickLeft => ["how do you kick a ball with your left foot?", "how do you push a box with your left foot?"],
            Action::KickRight => ["how do you kick a ball with your right foot?", "how do you push a box with your right foot?"],
            Action::StandStill => ["what do you do while waiting?", "how do you wait in line?"],
        }
    }
}

/// Root-frame displacement of each effector relative to its rest position.
#[derive(Clone, Copy, Default)]
struct Frame {
    v_x: f64,
    v_z: f64,
    yaw_rate: f64,
    height: f64,
    hands: [[f64; 3]; 2],
    feet: [[f64; 3]; 2],
}

const STAND_HEIGHT: f64 = 0.95;

fn bump(s: f64) -> f64 {
    (std::f64::consts::PI * s.clamp(0.0, 1.0)).sin()
}

fn action_frame(a: Action, s: f64, tau: f64, dur: f64) -> Frame {
    use std::f64::consts::PI;
    let mut f = Frame {
        height: STAND_HEIGHT,
        ..Frame::default()
    };
    let stride = |f: &mut Frame, dir: f64, freq: f64| {
        let ph = (2.0 * PI * freq * tau).sin();
        f.feet[0] = [dir * 0.25 * ph, 0.08 * ph.max(0.0), 0.0];
        f.feet[1] = [-dir * 0.25 * ph, 0.08 * (-ph).max(0.0), 0.0];
        f.hands[0] = [-0.15 * ph, 0.0, 0.0];
        f.hands[1] = [0.15 * ph, 0.0, 0.0];
    };
    match a {
        Action::WalkForward => {
            f.v_x = 1.0;
            stride(&mut f, 1.0, 1.0);
        }
        Action::WalkBackward => {
            f.v_x = -0.6;
            stride(&mut f, -1.0, 0.8);
        }
        Action::TurnLeft | Action::TurnRight => {
            let sign = if a == Action::TurnLeft { 1.0 } else { -1.0 };
            f.yaw_rate = sign * (PI / 2.0) / dur;
            stride(&mut f, 0.3, 0.8);
        }
        Action::WaveLeft | Action::WaveRight => {
            let side = if a == Action::WaveLeft { 0 } else { 1 };
            let lat = if side == 0 { 1.0 } else { -1.0 };
            let lift = bump(s).min(0.6) / 0.6;
            f.hands[side] = [0.1 * lift, 0.75 * lift, lat * lift * (0.1 + 0.15 * (4.0 * PI * tau).sin())];
        }
        Action::RaiseArms => {
            let lift = bump(s);
            f.hands = [[0.0, 0.9 * lift, 0.05 * lift], [0.0, 0.9 * lift, -0.05 * lift]];
        }
        Action::Jump => {
            let (crouch, flight) = if s < 0.35 {
                (bump(s / 0.7), 0.0)
            } else if s < 0.75 {
                (0.0, bump((s - 0.35) / 0.4))
            } else {
                (0.5 * bump((s - 0.75) / 0.5), 0.0)
            };
            f.height = STAND_HEIGHT - 0.2 * crouch + 0.35 * flight;
            f.hands = [[0.1, 0.3 * flight, 0.0]; 2];
        }
        Action::Squat => {
            let depth = bump(s);
            f.height = STAND_HEIGHT - 0.4 * depth;
            f.hands = [[0.3 * depth, 0.1 * depth, 0.0]; 2];
        }
        Action::KickLeft | Action::KickRight => {
            let side = if a == Action::KickLeft { 0 } else { 1 };
            let k = bump(s);
            f.feet[side] = [0.5 * k, 0.4 * k, 0.0];
            f.hands = [[-0.1 * k, 0.1 * k, 0.0]; 2];
        }
        Action::StandStill => {}
    }
    // Feet stay on the ground while the root is lowered.
    let drop = (STAND_HEIGHT - f.height).max(0.0);
    for foot in &mut f.feet {
        foot[1] += drop;
    }
    f
}

/// Which effector drives a joint and with what weight.
fn joint_rig(name: &str) -> ([f64; 3], Option<(bool, usize)>, f64) {
    // (rest offset, (is_hand, side), weight)
    let side = if name.starts_with("left_") { 0 } else { 1 };
    let lat = if side == 0 { 1.0 } else { -1.0 };
    let base = name.trim_start_matches("left_").trim_start_matches("right_");
    match base {
        "hand" => ([0.05, 0.0, 0.2 * lat], Some((true, side)), 1.0),
        "wrist" => ([0.0, -0.05, 0.24 * lat], Some((true, side)), 1.0),
        "elbow" => ([0.0, 0.2, 0.22 * lat], Some((true, side)), 0.5),
        "shoulder" => ([0.0, 0.45, 0.18 * lat], Some((true, side)), 0.15),
        "collar" => ([0.0, 0.42, 0.07 * lat], Some((true, side)), 0.05),
        "hip" => ([0.0, -0.08, 0.09 * lat], Some((false, side)), 0.0),
        "knee" => ([0.05, -0.48, 0.1 * lat], Some((false, side)), 0.5),
        "ankle" => ([0.0, -0.88, 0.1 * lat], Some((false, side)), 1.0),
        "foot" => ([0.1, -0.93, 0.1 * lat], Some((false, side)), 1.0),
        "spine1" => ([0.0, 0.1, 0.0], None, 0.0),
        "spine2" => ([0.0, 0.25, 0.0], None, 0.0),
        "spine3" => ([0.0, 0.32, 0.0], None, 0.0),
        "neck" => ([0.0, 0.5, 0.0], None, 0.0),
        "head" => ([0.0, 0.62, 0.0], None, 0.0),
        _ => ([0.0; 3], None, 0.0),
    }
}

fn rot6d(theta: f64) -> [f64; 6] {
    let (s, c) = theta.sin_cos();
    [c, s, 0.0, -s, c, 0.0]
}

/// Renders a sequence of `(action, duration)` segments into flat poses.
fn render_actions(layout: &HumanLayout, plan: &[(Action, f64)], dt: f64, noise: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let k = layout.joints();
    let normal = Normal::new(0.0, noise.max(f64::MIN_POSITIVE)).expect("valid std");
    let eps = |rng: &mut ChaCha8Rng| if noise > 0.0 { normal.sample(rng) } else { 0.0 };
    let rigs: Vec<_> = layout.names().iter().map(|n| joint_rig(n)).collect();
    let mut frames = Vec::new();
    for &(a, dur) in plan {
        let steps = (dur / dt).round().max(1.0) as usize;
        for i in 0..steps {
            let tau = i as f64 * dt;
            frames.push(action_frame(a, tau / dur, tau, dur));
        }
    }
    // Root-relative joint positions per frame (root excluded) and contacts.
    let rel: Vec<Vec<[f64; 3]>> = frames
        .iter()
        .map(|f| {
            (1..k)
                .map(|j| {
                    let (rest, drv, w) = rigs[j];
                    let d = match drv {
                        Some((true, side)) => f.hands[side],
                        Some((false, side)) => f.feet[side],
                        None => [0.0; 3],
                    };
                    [rest[0] + w * d[0], rest[1] + w * d[1], rest[2] + w * d[2]]
                })
                .collect()
        })
        .collect();
    let foot_joint = |side: &str, toe: bool| {
        let names: &[&str] = if toe { &["foot", "ankle"] } else { &["ankle", "foot"] };
        names.iter().find_map(|n| layout.index_of(&format!("{side}_{n}")))
    };
    let contact_joints = [
        foot_joint("left", false),
        foot_joint("left", true),
        foot_joint("right", false),
        foot_joint("right", true),
    ];
    let t_len = frames.len();
    let mut poses = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let f = &frames[t];
        let (a, b) = if t + 1 < t_len { (t, t + 1) } else { (t.saturating_sub(1), t) };
        let span = if a == b { 1.0 } else { dt };
        let dh = (frames[b].height - frames[a].height) / span;
        let mut v = Vec::with_capacity(layout.dim());
        v.extend([f.yaw_rate, f.v_x, f.v_z, f.height]);
        for p in &rel[t] {
            v.extend(p.iter().map(|x| x + eps(rng)));
        }
        v.extend([f.v_x, dh, f.v_z]);
        for j in 1..k {
            for ax in 0..3 {
                let d = (rel[b][j - 1][ax] - rel[a][j - 1][ax]) / span;
                let root = [f.v_x, dh, f.v_z][ax];
                v.push(root + d);
            }
        }
        for j in 1..k {
            let p = rel[t][j - 1];
            let rest = rigs[j].0;
            v.extend(rot6d(1.5 * (p[0] - rest[0])));
        }
        for cj in contact_joints {
            let c = cj.map_or(1.0, |j| if j > 0 && f.height + rel[t][j - 1][1] < 0.1 { 1.0 } else { 0.0 });
            v.push(c);
        }
        poses.push(v);
    }
    poses
}

fn sample_plan(cfg: &HumanSynthConfig, rng: &mut ChaCha8Rng, n_actions: usize) -> Vec<(Action, f64)> {
    (0..n_actions)
        .map(|_| {
            let a = ACTIONS[rng.gen_range(0..ACTIONS.len())];
            let [lo, hi] = cfg.action_duration;
            (a, if hi > lo { rng.gen_range(lo..=hi) } else { lo })
        })
        .collect()
}

/// Procedural human corpus captioned as "a person <action> then <action>".
pub fn generate_human_corpus(cfg: &HumanSynthConfig) -> Result<Vec<CaptionedTrajectory>> {
    cfg.validate()?;
    let layout = HumanLayout::for_joints(cfg.joints);
    let embodiment = Embodiment::Human { joints: cfg.joints };
    (0..cfg.n_samples)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(i as u64 + 1)));
            let n = rng.gen_range(1..=cfg.max_actions);
            let plan = sample_plan(cfg, &mut rng, n);
            let poses = render_actions(&layout, &plan, cfg.dt, cfg.noise_std, &mut rng);
            let phrases: Vec<_> = plan.iter().map(|(a, _)| a.phrase()).collect();
            Ok(CaptionedTrajectory {
                trajectory: Trajectory::new(embodiment, cfg.dt, poses)?,
                caption: format!("a person {}", phrases.join(" then ")),
                goal_cell: None,
                gait: None,
            })
        })
        .collect()
}

/// Single-action human motions whose caption is a question the motion answers.
pub fn generate_qa_corpus(cfg: &HumanSynthConfig) -> Result<Vec<CaptionedTrajectory>> {
    cfg.validate()?;
    let layout = HumanLayout::for_joints(cfg.joints);
    let embodiment = Embodiment::Human { joints: cfg.joints };
    (0..cfg.n_samples)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(!cfg.seed ^ (0x2545_f491_4f6c_dd1du64.wrapping_mul(i as u64 + 1)));
            let plan = sample_plan(cfg, &mut rng, 1);
            let question = plan[0].0.questions()[rng.gen_range(0..2)];
            let poses = render_actions(&layout, &plan, cfg.dt, cfg.noise_std, &mut rng);
            Ok(CaptionedTrajectory {
                trajectory: Trajectory::new(embodiment, cfg.dt, poses)?,
                caption: question.to_string(),
                goal_cell: None,
                gait: None,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimension_law() {
        assert_eq!(HumanLayout::smpl().dim(), 263);
        assert_eq!(HumanLayout::reduced().dim(), 59);
        let l = HumanLayout::smpl();
        assert_eq!(l.foot_contact().end, 263);
        assert_eq!(l.joint_pos().len(), 63);
        assert_eq!(l.joint_vel().len(), 66);
        assert_eq!(l.joint_rot().len(), 126);
    }

    #[test]
    fn mirror_pairs_are_involutive() {
        for l in [HumanLayout::reduced(), HumanLayout::smpl(), HumanLayout::for_joints(7)] {
            for j in 0..l.joints() {
                assert_eq!(l.mirror_joint(l.mirror_joint(j)), j);
            }
        }
        assert_eq!(HumanLayout::reduced().mirror_joint(1), 2);
    }

    #[test]
    fn pose_struct_round_trip() {
        let l = HumanLayout::reduced();
        let v: Vec<f64> = (0..l.dim()).map(|i| i as f64).collect();
        assert_eq!(HumanPose::from_slice(&l, &v).unwrap().to_vec(), v);
    }

    #[test]
    fn corpora_are_valid_and_deterministic() {
        for joints in [5, 22] {
            let cfg = HumanSynthConfig {
                n_samples: 20,
                joints,
                ..HumanSynthConfig::default()
            };
            let a = generate_human_corpus(&cfg).unwrap();
            assert_eq!(a, generate_human_corpus(&cfg).unwrap());
            for s in &a {
                s.validate().unwrap();
                assert!(s.caption.starts_with("a person "));
                assert!((20..=80).contains(&s.trajectory.len()) || s.trajectory.len() >= 16);
            }
            for q in generate_qa_corpus(&cfg).unwrap() {
                q.validate().unwrap();
                assert!(q.caption.ends_with('?'));
            }
        }
    }

    #[test]
    fn mirrored_wave_matches_other_hand() {
        let l = HumanLayout::reduced();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let left = render_actions(&l, &[(Action::WaveLeft, 2.0)], 0.1, 0.0, &mut rng);
        let right = render_actions(&l, &[(Action::WaveRight, 2.0)], 0.1, 0.0, &mut rng);
        for (a, b) in left.iter().zip(&right) {
            let m = mirror_pose(&l, a);
            for (x, y) in m.iter().zip(b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
