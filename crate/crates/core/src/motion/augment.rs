//! Mirroring and time-scaling augmentation.

use std::ops::RangeInclusive;

use super::human::{mirror_pose, HumanLayout};
use super::{CaptionedTrajectory, Embodiment, Trajectory};
use crate::error::{Error, Result};
use crate::vocab::{GridCell, GridSpec};

/// Accepted time-scaling factors.
pub const TIME_SCALE_RANGE: RangeInclusive<f64> = 0.25..=4.0;

/// Swaps the words "left" and "right" (and their capitalised forms).
pub fn mirror_caption(caption: &str) -> String {
    let mut out = String::with_capacity(caption.len());
    let mut word = String::new();
    let flush = |word: &mut String, out: &mut String| {
        out.push_str(match word.as_str() {
            "left" => "right",
            "right" => "left",
            "Left" => "Right",
            "Right" => "Left",
            w => w,
        });
        word.clear();
    };
    for ch in caption.chars() {
        if ch.is_alphanumeric() {
            word.push(ch);
        } else {
            flush(&mut word, &mut out);
            out.push(ch);
        }
    }
    flush(&mut word, &mut out);
    out
}

fn mirror_cell(cell: GridCell, grid: &GridSpec) -> GridCell {
    GridCell {
        col: cell.col,
        row: grid.side() - 1 - cell.row,
    }
}

/// Reflects a captioned trajectory across the forward axis on the default grid.
pub fn mirror(traj: &CaptionedTrajectory) -> Result<CaptionedTrajectory> {
    mirror_on(traj, &GridSpec::default())
}

/// Reflects across the forward axis; goal cells are reflected on `grid`.
pub fn mirror_on(traj: &CaptionedTrajectory, grid: &GridSpec) -> Result<CaptionedTrajectory> {
    let t = &traj.trajectory;
    let poses = match t.embodiment {
        Embodiment::Robot => t.poses.iter().map(|p| vec![p[0], -p[1], -p[2]]).collect(),
        Embodiment::Human { joints } => {
            let layout = HumanLayout::for_joints(joints);
            t.poses.iter().map(|p| mirror_pose(&layout, p)).collect()
        }
        Embodiment::Custom { .. } => {
            return Err(Error::Embodiment(format!("no mirror symmetry defined for {}", t.embodiment)));
        }
    };
    Ok(CaptionedTrajectory {
        trajectory: Trajectory {
            embodiment: t.embodiment,
            dt: t.dt,
            poses,
        },
        caption: mirror_caption(&traj.caption),
        goal_cell: traj.goal_cell.map(|c| mirror_cell(c, grid)),
        gait: traj.gait,
    })
}

/// Pose indices holding velocities, which are divided by the time factor.
fn velocity_dims(e: Embodiment) -> Vec<usize> {
    match e {
        Embodiment::Robot => vec![0, 1, 2],
        Embodiment::Human { joints } => {
            let l = HumanLayout::for_joints(joints);
            std::iter::once(l.root_ang_vel()).chain(l.root_vel_xz()).chain(l.joint_vel()).collect()
        }
        Embodiment::Custom { .. } => Vec::new(),
    }
}

/// Resamples to `round(T * factor)` poses, rescaling velocities to keep the path.
pub fn time_scale(traj: &Trajectory, factor: f64) -> Result<Trajectory> {
    if !TIME_SCALE_RANGE.contains(&factor) {
        return Err(Error::Config(format!(
            "time-scale factor {factor} outside [{}, {}]",
            TIME_SCALE_RANGE.start(),
            TIME_SCALE_RANGE.end()
        )));
    }
    traj.validate()?;
    let t = traj.len();
    let t_new = ((t as f64 * factor).round() as usize).max(1);
    let vel = velocity_dims(traj.embodiment);
    let mut poses = Vec::with_capacity(t_new);
    for i in 0..t_new {
        let s = if t_new == 1 || t == 1 {
            0.0
        } else {
            i as f64 * (t - 1) as f64 / (t_new - 1) as f64
        };
        let lo = (s.floor() as usize).min(t - 1);
        let frac = s - lo as f64;
        let mut p = if frac == 0.0 || lo + 1 >= t {
            traj.poses[lo].clone()
        } else {
            traj.poses[lo]
                .iter()
                .zip(&traj.poses[lo + 1])
                .map(|(a, b)| a + frac * (b - a))
                .collect()
        };
        if factor != 1.0 {
            for &d in &vel {
                p[d] /= factor;
            }
        }
        poses.push(p);
    }
    Ok(Trajectory {
        embodiment: traj.embodiment,
        dt: traj.dt,
        poses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::endpoint;

    fn robot(poses: Vec<[f64; 3]>, dt: f64) -> Trajectory {
        Trajectory::new(Embodiment::Robot, dt, poses.into_iter().map(|p| p.to_vec()).collect()).unwrap()
    }

    #[test]
    fn robot_pose_sign_flip() {
        let c = CaptionedTrajectory {
            trajectory: robot(vec![[1.0, 0.3, -0.2]], 0.1),
            caption: "turn left and walk forward".into(),
            goal_cell: None,
            gait: None,
        };
        let m = mirror(&c).unwrap();
        assert_eq!(m.trajectory.poses[0], vec![1.0, -0.3, 0.2]);
        assert_eq!(m.caption, "turn right and walk forward");
        assert_eq!(mirror(&m).unwrap(), c);
    }

    #[test]
    fn caption_swap_keeps_punctuation() {
        assert_eq!(mirror_caption("Left, then right."), "Right, then left.");
        assert_eq!(mirror_caption("leftover rights"), "leftover rights");
    }

    #[test]
    fn custom_embodiment_cannot_mirror() {
        let c = CaptionedTrajectory {
            trajectory: Trajectory::new(Embodiment::Custom { dim: 2 }, 0.1, vec![vec![0.0, 1.0]]).unwrap(),
            caption: "x".into(),
            goal_cell: None,
            gait: None,
        };
        assert!(mirror(&c).is_err());
    }

    #[test]
    fn doubling_halves_velocity_and_keeps_endpoint() {
        let t = robot(vec![[0.8, 0.1, 0.0]; 10], 0.1);
        let s = time_scale(&t, 2.0).unwrap();
        assert_eq!(s.len(), 20);
        assert!(s.poses.iter().all(|p| (p[0] - 0.4).abs() < 1e-15 && (p[1] - 0.05).abs() < 1e-15));
        let (a, b) = (endpoint(&t).unwrap(), endpoint(&s).unwrap());
        assert!((a.0 - b.0).abs() < 1e-9 && (a.1 - b.1).abs() < 1e-9);
    }

    #[test]
    fn halving_doubles_velocity() {
        let t = robot(vec![[0.5, 0.0, 0.2]; 10], 0.1);
        let s = time_scale(&t, 0.5).unwrap();
        assert_eq!(s.len(), 5);
        assert!(s.poses.iter().all(|p| p[0] == 1.0 && p[2] == 0.4));
    }

    #[test]
    fn unit_factor_is_identity() {
        let t = robot((0..7).map(|i| [i as f64 * 0.1, -0.2, 0.05 * i as f64]).collect(), 0.1);
        assert_eq!(time_scale(&t, 1.0).unwrap(), t);
        assert!(time_scale(&t, 5.0).is_err());
        assert!(time_scale(&t, 0.2).is_err());
    }
}
