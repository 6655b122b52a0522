//! Synthetic quadruped corpus built from captioned motion primitives.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{endpoint, CaptionedTrajectory, Embodiment, Gait, RobotBounds, RobotPose, Trajectory};
use crate::error::{Error, Result};
use crate::vocab::GridSpec;

/// Elementary robot motions composed into one trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Primitive {
    Forward,
    Backward,
    StrafeLeft,
    StrafeRight,
    TurnLeft,
    TurnRight,
    Stop,
}

impl Primitive {
    pub const ALL: [Primitive; 7] = [
        Primitive::Forward,
        Primitive::Backward,
        Primitive::StrafeLeft,
        Primitive::StrafeRight,
        Primitive::TurnLeft,
        Primitive::TurnRight,
        Primitive::Stop,
    ];

    pub fn is_translation(self) -> bool {
        matches!(
            self,
            Primitive::Forward | Primitive::Backward | Primitive::StrafeLeft | Primitive::StrafeRight
        )
    }

    /// Imperative phrase used in multi-step captions.
    pub fn imperative(self) -> &'static str {
        match self {
            Primitive::Forward => "walk forward",
            Primitive::Backward => "walk backward",
            Primitive::StrafeLeft => "strafe left",
            Primitive::StrafeRight => "strafe right",
            Primitive::TurnLeft => "turn left",
            Primitive::TurnRight => "turn right",
            Primitive::Stop => "stop",
        }
    }

    /// Third-person phrase used in single-step captions.
    pub fn third_person(self) -> &'static str {
        match self {
            Primitive::Forward => "walks forward",
            Primitive::Backward => "walks backward",
            Primitive::StrafeLeft => "strafes left",
            Primitive::StrafeRight => "strafes right",
            Primitive::TurnLeft => "turns left",
            Primitive::TurnRight => "turns right",
            Primitive::Stop => "stops",
        }
    }
}

/// Caption for a primitive sequence; bounding gait adds "joyfully".
pub fn caption_for(prims: &[Primitive], gait: Gait) -> String {
    let joy = gait == Gait::Bound;
    match prims {
        [p] if joy => format!("the robot joyfully {}", p.third_person()),
        [p] => format!("the robot {}", p.third_person()),
        _ => {
            let body: Vec<_> = prims.iter().map(|p| p.imperative()).collect();
            let body = body.join(" then ");
            if joy {
                format!("joyfully {body}")
            } else {
                body
            }
        }
    }
}

/// Settings of the robot corpus generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_samples: usize,
    pub dt: f64,
    /// Trajectory length bounds in steps.
    pub min_len: usize,
    pub max_len: usize,
    pub max_primitives: usize,
    /// Primitive durations are multiples of this many steps.
    pub unit_steps: usize,
    /// Units per primitive.
    pub min_units: usize,
    pub max_units: usize,
    /// Forward speed range (m/s) per gait.
    pub trot_speed: [f64; 2],
    pub bound_speed: [f64; 2],
    pub backward_scale: f64,
    pub strafe_scale: f64,
    /// Yaw-rate magnitude range (rad/s) of turns.
    pub turn_rate: [f64; 2],
    /// Yaw-rate range (rad/s) added to translations; zero gives straight lines.
    pub arc_yaw_rate: [f64; 2],
    /// Per-step Gaussian velocity noise.
    pub noise_std: f64,
    pub bound_fraction: f64,
    pub bounds: RobotBounds,
    pub grid: GridSpec,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_samples: 2000,
            dt: 0.1,
            min_len: 20,
            max_len: 80,
            max_primitives: 4,
            unit_steps: 4,
            min_units: 3,
            max_units: 8,
            trot_speed: [0.45, 0.55],
            bound_speed: [0.9, 1.1],
            backward_scale: 0.6,
            strafe_scale: 0.6,
            turn_rate: [0.7, 0.9],
            arc_yaw_rate: [0.0, 0.0],
            noise_std: 0.01,
            bound_fraction: 0.3,
            bounds: RobotBounds::default(),
            grid: GridSpec::default(),
        }
    }
}

fn valid_range(r: [f64; 2]) -> bool {
    r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]
}

fn sample(r: [f64; 2], rng: &mut ChaCha8Rng) -> f64 {
    if r[1] > r[0] {
        rng.gen_range(r[0]..=r[1])
    } else {
        r[0]
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_samples == 0 {
            return fail("n_samples must be at least 1");
        }
        if !(self.dt > 0.0) {
            return fail("dt must be positive");
        }
        if self.max_primitives == 0 || self.unit_steps == 0 || self.min_units == 0 || self.max_units < self.min_units {
            return fail("invalid primitive count or duration settings");
        }
        if self.min_len == 0 || self.max_len < self.min_len {
            return fail("invalid length bounds");
        }
        if self.min_units * self.unit_steps > self.max_len {
            return fail("a single primitive exceeds max_len");
        }
        if ![self.trot_speed, self.bound_speed, self.turn_rate, self.arc_yaw_rate]
            .into_iter()
            .all(valid_range)
        {
            return fail("speed ranges must be finite with lo <= hi");
        }
        if !(0.0..=1.0).contains(&self.bound_fraction) || !(self.noise_std >= 0.0) {
            return fail("bound_fraction must lie in [0, 1] and noise_std be non-negative");
        }
        self.grid.validate()
    }
}

/// A single generated sample before captioning.
struct Plan {
    prims: Vec<(Primitive, usize)>,
    gait: Gait,
}

fn plan_sample(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Plan {
    let gait = if rng.gen_bool(cfg.bound_fraction) { Gait::Bound } else { Gait::Trot };
    let max_total_units = cfg.max_len / cfg.unit_steps;
    let min_total_units = cfg.min_len.div_ceil(cfg.unit_steps);
    let n_max = cfg.max_primitives.min(max_total_units / cfg.min_units).max(1);
    let n = rng.gen_range(1..=n_max);
    let mut prims: Vec<Primitive> = Vec::with_capacity(n);
    while prims.len() < n {
        let p = Primitive::ALL[rng.gen_range(0..Primitive::ALL.len())];
        if prims.last() != Some(&p) && !(n == 1 && !p.is_translation()) {
            prims.push(p);
        }
    }
    if !prims.iter().any(|p| p.is_translation()) {
        let i = rng.gen_range(0..n);
        let choices: Vec<_> = Primitive::ALL
            .into_iter()
            .filter(|p| p.is_translation() && Some(p) != prims.get(i.wrapping_sub(1)) && Some(p) != prims.get(i + 1))
            .collect();
        prims[i] = choices[rng.gen_range(0..choices.len())];
    }
    let per_max = cfg.max_units.min(max_total_units / n).max(cfg.min_units);
    let mut units: Vec<usize> = (0..n).map(|_| rng.gen_range(cfg.min_units..=per_max)).collect();
    let total: usize = units.iter().sum();
    if total < min_total_units {
        units[0] += min_total_units - total;
    }
    Plan {
        prims: prims.into_iter().zip(units).map(|(p, u)| (p, u * cfg.unit_steps)).collect(),
        gait,
    }
}

fn render(cfg: &SynthConfig, plan: &Plan, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    let noise = Normal::new(0.0, cfg.noise_std.max(f64::MIN_POSITIVE)).expect("valid std");
    let speed_range = match plan.gait {
        Gait::Trot => cfg.trot_speed,
        Gait::Bound => cfg.bound_speed,
    };
    let mut poses = Vec::new();
    for &(p, steps) in &plan.prims {
        let v = sample(speed_range, rng);
        let w = sample(cfg.turn_rate, rng);
        let arc = sample(cfg.arc_yaw_rate, rng);
        let base = match p {
            Primitive::Forward => [v, 0.0, arc],
            Primitive::Backward => [-v * cfg.backward_scale, 0.0, arc],
            Primitive::StrafeLeft => [0.0, v * cfg.strafe_scale, arc],
            Primitive::StrafeRight => [0.0, -v * cfg.strafe_scale, arc],
            Primitive::TurnLeft => [0.0, 0.0, w],
            Primitive::TurnRight => [0.0, 0.0, -w],
            Primitive::Stop => [0.0, 0.0, 0.0],
        };
        for _ in 0..steps {
            let mut pose = base;
            if cfg.noise_std > 0.0 {
                for x in &mut pose {
                    *x += noise.sample(rng);
                }
            }
            let rp = RobotPose {
                lin_x: pose[0],
                lin_z: pose[1],
                ang_y: pose[2],
            };
            rp.validate(&cfg.bounds)?;
            poses.push(rp.to_vec());
        }
    }
    Ok(poses)
}

/// Generates `cfg.n_samples` captioned robot trajectories; pure in `cfg`.
pub fn generate_robot_corpus(cfg: &SynthConfig) -> Result<Vec<CaptionedTrajectory>> {
    cfg.validate()?;
    (0..cfg.n_samples)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64 + 1);
            let plan = plan_sample(cfg, &mut rng);
            let poses = render(cfg, &plan, &mut rng)?;
            let trajectory = Trajectory::new(Embodiment::Robot, cfg.dt, poses)?;
            let (x, z, _) = endpoint(&trajectory)?;
            let prims: Vec<_> = plan.prims.iter().map(|&(p, _)| p).collect();
            Ok(CaptionedTrajectory {
                trajectory,
                caption: caption_for(&prims, plan.gait),
                goal_cell: cfg.grid.cell_at(x, z).ok(),
                gait: Some(plan.gait),
            })
        })
        .collect()
}

/// Trajectory for an explicit primitive list with exact speeds and no noise.
pub fn render_primitives(dt: f64, prims: &[(Primitive, f64, f64)]) -> Result<Trajectory> {
    // (primitive, duration in seconds, magnitude in m/s or rad/s)
    let mut poses = Vec::new();
    for &(p, secs, mag) in prims {
        let pose = match p {
            Primitive::Forward => [mag, 0.0, 0.0],
            Primitive::Backward => [-mag, 0.0, 0.0],
            Primitive::StrafeLeft => [0.0, mag, 0.0],
            Primitive::StrafeRight => [0.0, -mag, 0.0],
            Primitive::TurnLeft => [0.0, 0.0, mag],
            Primitive::TurnRight => [0.0, 0.0, -mag],
            Primitive::Stop => [0.0; 3],
        };
        let steps = (secs / dt).round() as usize;
        poses.extend(std::iter::repeat(pose.to_vec()).take(steps));
    }
    Trajectory::new(Embodiment::Robot, dt, poses)
}
