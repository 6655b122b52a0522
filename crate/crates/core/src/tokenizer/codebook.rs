//! Nearest-neighbour codebook with EMA re-estimation and dead-code reset.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// EMA hyper-parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmaConfig {
    pub gamma: f64,
    pub reset_threshold: f64,
    pub laplace_eps: f64,
}

impl Default for EmaConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            reset_threshold: 1.0,
            laplace_eps: 1e-5,
        }
    }
}

/// Per-update bookkeeping returned by [`Codebook::ema_update_and_reset`].
#[derive(Clone, Debug, PartialEq)]
pub struct EmaStats {
    /// Sum of usage counts after the decay/increment, before resets.
    pub usage_sum: f64,
    pub resets: Vec<usize>,
}

/// `N x d` code vectors plus EMA accumulators.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    pub entries: Tensor<f32>,
    pub usage: Vec<f64>,
    pub ema_sums: Vec<f64>,
}

/// Index of the nearest row of `entries` to `z` (ties go to the lowest index)
/// and the squared distance.
pub fn nearest(entries: &Tensor<f32>, z: &[f32]) -> Result<(usize, f64)> {
    let n = entries.rows();
    if n == 0 {
        return Err(Error::Config("codebook is empty".into()));
    }
    if entries.cols() != z.len() {
        return Err(Error::Shape(format!("code dim {} vs vector {}", entries.cols(), z.len())));
    }
    let mut best = (0, f64::INFINITY);
    for k in 0..n {
        let d: f64 = entries
            .row(k)
            .iter()
            .zip(z)
            .map(|(c, x)| {
                let e = *x as f64 - *c as f64;
                e * e
            })
            .sum();
        if d < best.1 {
            best = (k, d);
        }
    }
    if !best.1.is_finite() {
        return Err(Error::NonFinite("codebook distance".into()));
    }
    Ok(best)
}

impl Codebook {
    pub fn new(entries: Tensor<f32>) -> Result<Self> {
        if entries.shape().len() != 2 || entries.rows() < 2 || entries.cols() == 0 {
            return Err(Error::Config(format!("codebook needs N >= 2 rows, got {:?}", entries.shape())));
        }
        entries.check_finite("codebook")?;
        let (n, d) = (entries.rows(), entries.cols());
        Ok(Self {
            entries,
            usage: vec![0.0; n],
            ema_sums: vec![0.0; n * d],
        })
    }

    pub fn len(&self) -> usize {
        self.entries.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.entries.cols()
    }

    /// Nearest code index and its vector.
    pub fn quantize(&self, z: &[f32]) -> Result<(usize, Vec<f32>)> {
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("vector to quantize".into()));
        }
        let (k, _) = nearest(&self.entries, z)?;
        Ok((k, self.entries.row(k).to_vec()))
    }

    /// EMA re-estimation from `z` (rows of width `d`) assigned to `assignments`,
    /// then resets codes whose usage fell below the threshold to random rows of `z`.
    pub fn ema_update_and_reset<R: Rng + ?Sized>(
        &mut self,
        z: &[f32],
        assignments: &[usize],
        cfg: &EmaConfig,
        rng: &mut R,
    ) -> Result<EmaStats> {
        let (n, d) = (self.len(), self.dim());
        if assignments.is_empty() {
            return Err(Error::Data("empty batch for codebook update".into()));
        }
        if z.len() != assignments.len() * d {
            return Err(Error::Shape(format!("{} assignments for {} values of width {d}", assignments.len(), z.len())));
        }
        let mut counts = vec![0.0f64; n];
        let mut sums = vec![0.0f64; n * d];
        for (row, &k) in z.chunks_exact(d).zip(assignments) {
            if k >= n {
                return Err(Error::TokenRange {
                    id: k,
                    segment: "codebook".into(),
                });
            }
            counts[k] += 1.0;
            for (s, v) in sums[k * d..(k + 1) * d].iter_mut().zip(row) {
                *s += *v as f64;
            }
        }
        let (g, og) = (cfg.gamma, 1.0 - cfg.gamma);
        for (u, c) in self.usage.iter_mut().zip(&counts) {
            *u = g * *u + og * c;
        }
        for (s, b) in self.ema_sums.iter_mut().zip(&sums) {
            *s = g * *s + og * b;
        }
        let total: f64 = self.usage.iter().sum();
        let eps = cfg.laplace_eps;
        for k in 0..n {
            let smoothed = (self.usage[k] + eps) / (total + n as f64 * eps) * total;
            if smoothed > 0.0 {
                let row = self.entries.row_mut(k);
                for (e, s) in row.iter_mut().zip(&self.ema_sums[k * d..(k + 1) * d]) {
                    *e = (s / smoothed) as f32;
                }
            }
        }
        let mut resets = Vec::new();
        let rows = assignments.len();
        for k in 0..n {
            if self.usage[k] < cfg.reset_threshold {
                let r = rng.gen_range(0..rows);
                let src = &z[r * d..(r + 1) * d];
                self.entries.row_mut(k).copy_from_slice(src);
                self.usage[k] = cfg.reset_threshold;
                for (s, v) in self.ema_sums[k * d..(k + 1) * d].iter_mut().zip(src) {
                    *s = *v as f64 * cfg.reset_threshold;
                }
                resets.push(k);
            }
        }
        self.entries.check_finite("codebook after EMA update")?;
        Ok(EmaStats { usage_sum: total, resets })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn book(rows: &[[f32; 2]]) -> Codebook {
        Codebook::new(Tensor::new(vec![rows.len(), 2], rows.concat()).unwrap()).unwrap()
    }

    #[test]
    fn exact_match_and_nearest() {
        let mut rows = [[0.0f32; 2]; 9];
        for (i, r) in rows.iter_mut().enumerate() {
            *r = [i as f32, -(i as f32)];
        }
        let b = book(&rows);
        assert_eq!(b.quantize(&[7.0, -7.0]).unwrap().0, 7);
        assert_eq!(book(&[[0.0, 0.0], [3.0, 4.0]]).quantize(&[2.9, 4.2]).unwrap().0, 1);
    }

    #[test]
    fn ties_pick_lowest_index() {
        let b = book(&[[9.0, 9.0], [9.0, 9.0], [1.0, 0.0], [5.0, 5.0], [5.0, 5.0], [-1.0, 0.0]]);
        assert_eq!(b.quantize(&[0.0, 0.0]).unwrap().0, 2);
    }

    #[test]
    fn rejects_degenerate_books() {
        assert!(Codebook::new(Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap()).is_err());
        let mut b = book(&[[0.0, 0.0], [1.0, 1.0]]);
        assert!(b
            .ema_update_and_reset(&[], &[], &EmaConfig::default(), &mut ChaCha8Rng::seed_from_u64(0))
            .is_err());
    }

    #[test]
    fn zero_gamma_gives_batch_means() {
        let mut b = book(&[[0.0, 0.0], [10.0, 10.0], [50.0, 50.0]]);
        let z = [1.0, 2.0, 3.0, 4.0, 9.0, 9.0, 11.0, 13.0];
        let cfg = EmaConfig {
            gamma: 0.0,
            reset_threshold: 0.5,
            laplace_eps: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let stats = b.ema_update_and_reset(&z, &[0, 0, 1, 1], &cfg, &mut rng).unwrap();
        assert_eq!(b.entries.row(0), &[2.0, 3.0]);
        assert_eq!(b.entries.row(1), &[10.0, 11.0]);
        assert_eq!(stats.resets, vec![2]);
        assert_eq!(stats.usage_sum, 4.0);
    }

    #[test]
    fn usage_conservation() {
        let mut b = book(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]);
        b.usage = vec![3.0, 2.0, 5.0];
        let cfg = EmaConfig::default();
        let z = [0.1f32; 2 * 7];
        let stats = b
            .ema_update_and_reset(&z, &[0, 1, 1, 2, 2, 2, 0], &cfg, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        let expected = 0.99 * 10.0 + 0.01 * 7.0;
        assert!((stats.usage_sum - expected).abs() < 1e-12);
    }

    #[test]
    fn converges_to_shared_vector_and_resets_unused() {
        let v = [0.3f32, -1.2];
        let mut b = book(&[[5.0, 5.0], [-5.0, 2.0], [8.0, 8.0]]);
        b.usage = vec![2.0; 3];
        let cfg = EmaConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z: Vec<f32> = v.repeat(4);
        let mut first_reset = None;
        for step in 0..2000 {
            let stats = b.ema_update_and_reset(&z, &[0, 0, 1, 1], &cfg, &mut rng).unwrap();
            if stats.resets.contains(&2) && first_reset.is_none() {
                first_reset = Some(step);
            }
        }
        assert!(first_reset.is_some());
        for k in 0..3 {
            for (e, t) in b.entries.row(k).iter().zip(&v) {
                assert!((e - t).abs() < 1e-3, "entry {k}: {:?}", b.entries.row(k));
            }
        }
    }
}
