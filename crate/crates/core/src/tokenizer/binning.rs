//! Uniform per-dimension binning baseline: each step becomes
//! `"terminate b_1 ... b_D"` with `b_i` in `0..bins`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{Embodiment, Trajectory};

pub const DEFAULT_BINS: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinRange {
    pub name: String,
    pub q01: f64,
    pub q99: f64,
}

/// Clip ranges and bin count; empty `dims` means not fitted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinningScheme {
    pub dims: Vec<BinRange>,
    pub bins: usize,
}

impl Default for BinningScheme {
    fn default() -> Self {
        Self {
            dims: Vec::new(),
            bins: DEFAULT_BINS,
        }
    }
}

/// Linear-interpolated empirical quantile of sorted data (`p` in `[0, 1]`).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl BinningScheme {
    /// Fits 1st/99th percentile clip ranges on every pose of `trajs`.
    pub fn fit(trajs: &[Trajectory], names: &[&str], bins: usize) -> Result<Self> {
        let Some(first) = trajs.first() else {
            return Err(Error::Data("cannot fit binning on an empty corpus".into()));
        };
        let d = first.dim();
        if names.len() != d || bins < 2 {
            return Err(Error::Config(format!("{} names for {d} dims, {bins} bins", names.len())));
        }
        let mut cols = vec![Vec::new(); d];
        for t in trajs {
            if t.dim() != d {
                return Err(Error::Shape("mixed pose widths in binning corpus".into()));
            }
            for p in &t.poses {
                for (c, v) in cols.iter_mut().zip(p) {
                    c.push(*v);
                }
            }
        }
        let dims = cols
            .into_iter()
            .zip(names)
            .map(|(mut c, name)| {
                c.sort_by(f64::total_cmp);
                let (q01, q99) = (quantile_sorted(&c, 0.01), quantile_sorted(&c, 0.99));
                if !(q01 < q99) {
                    return Err(Error::Data(format!("dimension {name} has a degenerate range [{q01}, {q99}]")));
                }
                Ok(BinRange {
                    name: name.to_string(),
                    q01,
                    q99,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { dims, bins })
    }

    /// Robot scheme with the `dx dy dpsi` dimension names.
    pub fn fit_robot(trajs: &[Trajectory]) -> Result<Self> {
        Self::fit(trajs, &["dx", "dy", "dpsi"], DEFAULT_BINS)
    }

    fn ensure_fitted(&self) -> Result<()> {
        if self.dims.is_empty() {
            return Err(Error::Config("binning scheme has not been fitted".into()));
        }
        Ok(())
    }

    pub fn width(&self, dim: usize) -> f64 {
        let r = &self.dims[dim];
        (r.q99 - r.q01) / self.bins as f64
    }

    pub fn clip(&self, dim: usize, v: f64) -> f64 {
        let r = &self.dims[dim];
        v.clamp(r.q01, r.q99)
    }

    pub fn bin(&self, dim: usize, v: f64) -> usize {
        let r = &self.dims[dim];
        let b = ((v - r.q01) / self.width(dim)).floor();
        b.clamp(0.0, (self.bins - 1) as f64) as usize
    }

    pub fn center(&self, dim: usize, bin: usize) -> f64 {
        self.dims[dim].q01 + (bin as f64 + 0.5) * self.width(dim)
    }

    /// One step as `"terminate b_1 ... b_D"`.
    pub fn encode_pose(&self, pose: &[f64], terminate: bool) -> Result<String> {
        self.ensure_fitted()?;
        if pose.len() != self.dims.len() {
            return Err(Error::Shape(format!("pose width {} vs {}", pose.len(), self.dims.len())));
        }
        let mut s = String::from(if terminate { "1" } else { "0" });
        for (i, v) in pose.iter().enumerate() {
            s.push(' ');
            s.push_str(&self.bin(i, *v).to_string());
        }
        Ok(s)
    }

    /// Parses one step string into bin centres and the terminate flag.
    pub fn decode_pose(&self, step: &str) -> Result<(Vec<f64>, bool)> {
        self.ensure_fitted()?;
        let mut parts = step.split(' ');
        let terminate = match parts.next() {
            Some("0") => false,
            Some("1") => true,
            _ => return Err(Error::Data(format!("bad terminate flag in {step:?}"))),
        };
        let pose = parts
            .enumerate()
            .map(|(i, p)| {
                let b: usize = p.parse().map_err(|_| Error::Data(format!("bad bin symbol {p:?}")))?;
                if i >= self.dims.len() || b >= self.bins {
                    return Err(Error::Data(format!("bin symbol {p:?} out of range")));
                }
                Ok(self.center(i, b))
            })
            .collect::<Result<Vec<_>>>()?;
        if pose.len() != self.dims.len() {
            return Err(Error::Data(format!("step {step:?} has {} bins, expected {}", pose.len(), self.dims.len())));
        }
        Ok((pose, terminate))
    }

    /// One string per step; the last step carries the terminate flag.
    pub fn encode_trajectory(&self, traj: &Trajectory) -> Result<Vec<String>> {
        let n = traj.len();
        traj.poses.iter().enumerate().map(|(i, p)| self.encode_pose(p, i + 1 == n)).collect()
    }

    /// Decodes steps up to and including the first terminate flag.
    pub fn decode_trajectory(&self, steps: &[String], embodiment: Embodiment, dt: f64) -> Result<Trajectory> {
        let mut poses = Vec::new();
        for s in steps {
            let (p, stop) = self.decode_pose(s)?;
            poses.push(p);
            if stop {
                break;
            }
        }
        Trajectory::new(embodiment, dt, poses)
    }

    /// Whitespace-separated symbols of an encoded trajectory: `T * (D + 1)`.
    pub fn symbol_count(steps: &[String]) -> usize {
        steps.iter().map(|s| s.split(' ').count()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scheme(q01: f64, q99: f64) -> BinningScheme {
        BinningScheme {
            dims: vec![BinRange {
                name: "v".into(),
                q01,
                q99,
            }],
            bins: 256,
        }
    }

    #[test]
    fn direct_formula_example() {
        let s = scheme(-1.0, 1.0);
        assert_eq!(s.bin(0, 0.0), 128);
        assert_eq!(s.center(0, 128), 0.00390625);
        assert_eq!(s.bin(0, -1.0), 0);
        assert_eq!(s.bin(0, 1.0), 255);
        assert_eq!(s.bin(0, 7.0), 255);
        assert_eq!(s.bin(0, -7.0), 0);
    }

    #[test]
    fn unfitted_scheme_errors() {
        assert!(BinningScheme::default().encode_pose(&[0.0], false).is_err());
    }

    #[test]
    fn quantiles_interpolate() {
        let v: Vec<f64> = (0..=100).map(|i| i as f64).collect();
        assert_eq!(quantile_sorted(&v, 0.01), 1.0);
        assert_eq!(quantile_sorted(&v, 0.99), 99.0);
        assert_eq!(quantile_sorted(&[0.0, 10.0], 0.25), 2.5);
    }

    #[test]
    fn trajectory_strings() {
        let t = Trajectory::new(
            Embodiment::Robot,
            0.1,
            (0..40).map(|i| vec![i as f64 * 0.01, -0.1, 0.2]).collect(),
        )
        .unwrap();
        let mut fit = vec![t.clone()];
        fit.push(Trajectory::new(Embodiment::Robot, 0.1, vec![vec![1.0, 0.5, -0.5]]).unwrap());
        let s = BinningScheme::fit_robot(&fit).unwrap();
        let steps = s.encode_trajectory(&t).unwrap();
        assert_eq!(BinningScheme::symbol_count(&steps), 160);
        assert!(steps[39].starts_with("1 "));
        assert!(steps[..39].iter().all(|x| x.starts_with("0 ")));
        let back = s.decode_trajectory(&steps, Embodiment::Robot, 0.1).unwrap();
        assert_eq!(back.len(), 40);
    }
}
