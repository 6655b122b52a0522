use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::report::MetricReport;
use super::stats::bootstrap_ci;
use crate::error::{Error, Result};

/// Diagonal regulariser added to both covariances.
const COV_EPS: f64 = 1e-6;

fn check_set(xs: &[Vec<f64>], what: &str) -> Result<usize> {
    if xs.len() < 2 {
        return Err(Error::Data(format!("{what} set needs at least two feature vectors")));
    }
    let d = xs[0].len();
    if d == 0 || xs.iter().any(|x| x.len() != d) {
        return Err(Error::Shape(format!("{what} features have inconsistent or zero width")));
    }
    Ok(d)
}

pub fn mean_vector(xs: &[Vec<f64>]) -> DVector<f64> {
    let d = xs[0].len();
    let mut m = DVector::zeros(d);
    for x in xs {
        m += DVector::from_column_slice(x);
    }
    m / xs.len() as f64
}

/// Unbiased sample covariance.
pub fn covariance(xs: &[Vec<f64>], mean: &DVector<f64>) -> DMatrix<f64> {
    let d = mean.len();
    let mut c = DMatrix::zeros(d, d);
    for x in xs {
        let v = DVector::from_column_slice(x) - mean;
        c += &v * v.transpose();
    }
    c / (xs.len() - 1) as f64
}

fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Fréchet distance between Gaussians fitted to two feature sets.
pub fn fid(real: &[Vec<f64>], generated: &[Vec<f64>]) -> Result<f64> {
    let d = check_set(real, "real")?;
    if check_set(generated, "generated")? != d {
        return Err(Error::Shape("real and generated feature widths differ".into()));
    }
    let (m1, m2) = (mean_vector(real), mean_vector(generated));
    let eps = DMatrix::identity(d, d) * COV_EPS;
    let s1 = covariance(real, &m1) + &eps;
    let s2 = covariance(generated, &m2) + &eps;
    let r1 = sqrt_psd(&s1);
    let inner = &r1 * &s2 * &r1;
    let eig = SymmetricEigen::new((&inner + inner.transpose()) * 0.5);
    let tr_sqrt: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum();
    let diff = m1 - m2;
    Ok((diff.dot(&diff) + s1.trace() + s2.trace() - 2.0 * tr_sqrt).max(0.0))
}

/// FID with a bootstrap half-width over the generated set.
pub fn fid_report(real: &[Vec<f64>], generated: &[Vec<f64>], resamples: usize, seed: u64) -> Result<MetricReport> {
    let value = fid(real, generated)?;
    let ci = bootstrap_ci(generated, |g| fid(real, g).unwrap_or(f64::NAN), resamples, seed)?;
    Ok(MetricReport::new("fid", value, ci)?
        .with("real", real.len())
        .with("generated", generated.len())
        .with("resamples", resamples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, d: usize, offset: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                (0..d)
                    .map(|i| {
                        let z: f64 = StandardNormal.sample(rng);
                        z + if i == 0 { offset } else { 0.0 }
                    })
                    .collect()
            })
            .collect()
    }

    /// Denman–Beavers iteration for the principal square root.
    fn sqrtm_db(a: &DMatrix<f64>) -> DMatrix<f64> {
        let n = a.nrows();
        let mut y = a.clone();
        let mut z = DMatrix::identity(n, n);
        for _ in 0..60 {
            let yi = y.clone().try_inverse().unwrap();
            let zi = z.clone().try_inverse().unwrap();
            let ny = (&y + zi) * 0.5;
            let nz = (&z + yi) * 0.5;
            y = ny;
            z = nz;
        }
        y
    }

    fn fid_direct(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        let d = a[0].len();
        let (m1, m2) = (mean_vector(a), mean_vector(b));
        let eps = DMatrix::identity(d, d) * COV_EPS;
        let s1 = covariance(a, &m1) + &eps;
        let s2 = covariance(b, &m2) + &eps;
        let root = sqrtm_db(&(&s1 * &s2));
        (&m1 - &m2).norm_squared() + s1.trace() + s2.trace() - 2.0 * root.trace()
    }

    #[test]
    fn self_distance_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = gaussian(50, 6, 0.0, &mut rng);
        assert!(fid(&x, &x).unwrap().abs() < 1e-6);
    }

    #[test]
    fn offset_gaussians_give_squared_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = gaussian(6000, 4, 0.0, &mut rng);
        let b = gaussian(6000, 4, 3.0, &mut rng);
        let f = fid(&a, &b).unwrap();
        assert!((f - 9.0).abs() < 0.05 * 9.0, "{f}");
    }

    #[test]
    fn matches_direct_formula_and_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let d = rng.gen_range(2..6);
            let a = gaussian(rng.gen_range(10..30), d, rng.gen_range(-1.0..1.0), &mut rng);
            let b = gaussian(rng.gen_range(10..30), d, 0.0, &mut rng);
            let f = fid(&a, &b).unwrap();
            assert!((f - fid_direct(&a, &b)).abs() < 1e-6, "{f}");
            assert!((f - fid(&b, &a).unwrap()).abs() < 1e-6);
        }
    }

    #[test]
    fn singular_sets_and_errors() {
        let a = vec![vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]];
        assert!(fid(&a, &a).unwrap().abs() < 1e-6);
        assert!(fid(&a[..1], &a).is_err());
        assert!(fid(&a, &[vec![1.0], vec![2.0]]).is_err());
        let r = fid_report(&a, &a, 100, 0).unwrap();
        assert!(r.ci95 >= 0.0);
    }
}
