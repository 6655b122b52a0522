use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Percentile-bootstrap 95% half-width of `statistic` over `data`.
pub fn bootstrap_ci<T: Clone>(data: &[T], statistic: impl Fn(&[T]) -> f64, resamples: usize, seed: u64) -> Result<f64> {
    if data.len() < 2 {
        return Err(Error::Data(format!("bootstrap needs at least two samples, got {}", data.len())));
    }
    if resamples < 100 {
        return Err(Error::Config(format!("bootstrap needs at least 100 resamples, got {resamples}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf = Vec::with_capacity(data.len());
    let mut stats = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        buf.clear();
        buf.extend((0..data.len()).map(|_| data[rng.gen_range(0..data.len())].clone()));
        stats.push(statistic(&buf));
    }
    stats.sort_by(f64::total_cmp);
    Ok(((percentile(&stats, 0.975) - percentile(&stats, 0.025)) / 2.0).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn constant_data_has_zero_width() {
        assert_eq!(bootstrap_ci(&[3.0; 50], mean, 200, 0).unwrap(), 0.0);
    }

    #[test]
    fn gaussian_width_matches_analytic() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let sigma = 2.0;
        let xs: Vec<f64> = (0..400)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                sigma * z
            })
            .collect();
        let sd = {
            let m = mean(&xs);
            (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
        };
        let analytic = 1.96 * sd / (xs.len() as f64).sqrt();
        let hw = bootstrap_ci(&xs, mean, 2000, 1).unwrap();
        assert!((hw - analytic).abs() < 0.2 * analytic, "{hw} vs {analytic}");
    }

    #[test]
    fn seeded_and_validated() {
        let xs: Vec<f64> = (0..30).map(|i| (i * i % 7) as f64).collect();
        assert_eq!(bootstrap_ci(&xs, mean, 300, 5).unwrap(), bootstrap_ci(&xs, mean, 300, 5).unwrap());
        assert!(bootstrap_ci(&[1.0], mean, 300, 5).is_err());
        assert!(bootstrap_ci(&xs, mean, 50, 5).is_err());
    }
}
