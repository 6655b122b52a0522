//! Stateless forward/backward kernels shared by the autodiff graph and the
//! cache-based inference path.

use super::Real;

/// Row-major GEMM: `c[m×n] = a·b + beta·c`.
///
/// `a` is stored as `[m×k]`, or `[k×m]` when `a_t`; `b` is stored as `[k×n]`,
/// or `[n×k]` when `b_t`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<F: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[F],
    a_t: bool,
    b: &[F],
    b_t: bool,
    beta: F,
    c: &mut [F],
) {
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    F::gemm(
        m,
        k,
        n,
        F::one(),
        a,
        rsa,
        csa,
        b,
        rsb,
        csb,
        beta,
        c,
        n as isize,
        1,
    );
}

/// `x[t×in] · w[in×out] + b`.
pub fn linear<F: Real>(x: &[F], rows: usize, w: &[F], d_in: usize, d_out: usize, b: Option<&[F]>) -> Vec<F> {
    let mut y = vec![F::zero(); rows * d_out];
    if let Some(b) = b {
        for r in 0..rows {
            y[r * d_out..(r + 1) * d_out].copy_from_slice(b);
        }
        gemm(rows, d_in, d_out, x, false, w, false, F::one(), &mut y);
    } else {
        gemm(rows, d_in, d_out, x, false, w, false, F::zero(), &mut y);
    }
    y
}

pub const LAYERNORM_EPS: f64 = 1e-5;

/// Row-wise layer normalisation; returns the output plus per-row mean and reciprocal std.
pub fn layernorm<F: Real>(x: &[F], d: usize, gamma: &[F], beta: &[F]) -> (Vec<F>, Vec<F>, Vec<F>) {
    let rows = x.len() / d;
    let mut y = vec![F::zero(); x.len()];
    let mut means = Vec::with_capacity(rows);
    let mut rstds = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().map(|v| v.as_f64()).sum::<f64>() / d as f64;
        let var = row
            .iter()
            .map(|v| {
                let c = v.as_f64() - mean;
                c * c
            })
            .sum::<f64>()
            / d as f64;
        let rstd = 1.0 / (var + LAYERNORM_EPS).sqrt();
        let (mean_f, rstd_f) = (F::from_f64(mean), F::from_f64(rstd));
        for j in 0..d {
            y[r * d + j] = (row[j] - mean_f) * rstd_f * gamma[j] + beta[j];
        }
        means.push(mean_f);
        rstds.push(rstd_f);
    }
    (y, means, rstds)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
#[inline]
pub fn gelu<F: Real>(x: F) -> F {
    let c = F::from_f64(GELU_C);
    let a = F::from_f64(GELU_A);
    let half = F::from_f64(0.5);
    half * x * (F::one() + (c * (x + a * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad<F: Real>(x: F) -> F {
    let c = F::from_f64(GELU_C);
    let a = F::from_f64(GELU_A);
    let half = F::from_f64(0.5);
    let three = F::from_f64(3.0);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (F::one() + t) + half * x * (F::one() - t * t) * c * (F::one() + three * a * x * x)
}

/// In-place numerically stable softmax over one row.
pub fn softmax_in_place<F: Real>(row: &mut [F]) {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    let mut sum = 0.0f64;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += v.as_f64();
    }
    let inv = F::from_f64(1.0 / sum);
    for v in row.iter_mut() {
        *v *= inv;
    }
}

/// Output length of a 1-D convolution.
pub fn conv_out_len(t: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = t + 2 * pad;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Unfolds `x[c_in×t]` into `[(c_in·k)×t_out]` columns.
pub fn im2col<F: Real>(x: &[F], c_in: usize, t: usize, k: usize, stride: usize, pad: usize, t_out: usize) -> Vec<F> {
    let mut cols = vec![F::zero(); c_in * k * t_out];
    for c in 0..c_in {
        let xr = &x[c * t..(c + 1) * t];
        for kk in 0..k {
            let dst = &mut cols[(c * k + kk) * t_out..(c * k + kk + 1) * t_out];
            for (o, d) in dst.iter_mut().enumerate() {
                let src = (o * stride + kk) as isize - pad as isize;
                if src >= 0 && (src as usize) < t {
                    *d = xr[src as usize];
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters column gradients back onto `dx[c_in×t]`.
#[allow(clippy::too_many_arguments)]
pub fn col2im<F: Real>(
    cols: &[F],
    c_in: usize,
    t: usize,
    k: usize,
    stride: usize,
    pad: usize,
    t_out: usize,
    dx: &mut [F],
) {
    for c in 0..c_in {
        for kk in 0..k {
            let src = &cols[(c * k + kk) * t_out..(c * k + kk + 1) * t_out];
            for (o, g) in src.iter().enumerate() {
                let pos = (o * stride + kk) as isize - pad as isize;
                if pos >= 0 && (pos as usize) < t {
                    dx[c * t + pos as usize] += *g;
                }
            }
        }
    }
}

/// `w[c_out×c_in×k]` convolution of `x[c_in×t]`; returns `[c_out×t_out]`.
#[allow(clippy::too_many_arguments)]
pub fn conv1d<F: Real>(
    x: &[F],
    c_in: usize,
    t: usize,
    w: &[F],
    c_out: usize,
    k: usize,
    b: Option<&[F]>,
    stride: usize,
    pad: usize,
) -> (Vec<F>, usize) {
    let t_out = conv_out_len(t, k, stride, pad).expect("validated by caller");
    let cols = im2col(x, c_in, t, k, stride, pad, t_out);
    let mut y = vec![F::zero(); c_out * t_out];
    let beta = if let Some(b) = b {
        for (co, bias) in b.iter().enumerate() {
            y[co * t_out..(co + 1) * t_out].fill(*bias);
        }
        F::one()
    } else {
        F::zero()
    };
    gemm(c_out, c_in * k, t_out, w, false, &cols, false, beta, &mut y);
    (y, t_out)
}

/// Causal multi-head attention over `q, k, v: [t×d]`.
///
/// Returns the `[t×d]` output and the attention probabilities `[heads×t×t]`
/// (zero above the diagonal).
pub fn causal_attention<F: Real>(q: &[F], k: &[F], v: &[F], t: usize, d: usize, heads: usize) -> (Vec<F>, Vec<F>) {
    let dh = d / heads;
    let scale = F::from_f64(1.0 / (dh as f64).sqrt());
    let mut probs = vec![F::zero(); heads * t * t];
    let mut out = vec![F::zero(); t * d];
    for h in 0..heads {
        let off = h * dh;
        let p = &mut probs[h * t * t..(h + 1) * t * t];
        F::gemm(
            t,
            dh,
            t,
            scale,
            &q[off..],
            d as isize,
            1,
            &k[off..],
            1,
            d as isize,
            F::zero(),
            p,
            t as isize,
            1,
        );
        for i in 0..t {
            let row = &mut p[i * t..(i + 1) * t];
            softmax_in_place(&mut row[..=i]);
            row[i + 1..].fill(F::zero());
        }
        F::gemm(
            t,
            t,
            dh,
            F::one(),
            p,
            t as isize,
            1,
            &v[off..],
            d as isize,
            1,
            F::zero(),
            &mut out[off..],
            d as isize,
            1,
        );
    }
    (out, probs)
}

/// Backward of [`causal_attention`]; returns `(dq, dk, dv)`.
#[allow(clippy::too_many_arguments)]
pub fn causal_attention_backward<F: Real>(
    q: &[F],
    k: &[F],
    v: &[F],
    probs: &[F],
    dout: &[F],
    t: usize,
    d: usize,
    heads: usize,
) -> (Vec<F>, Vec<F>, Vec<F>) {
    let dh = d / heads;
    let scale = F::from_f64(1.0 / (dh as f64).sqrt());
    let mut dq = vec![F::zero(); t * d];
    let mut dk = vec![F::zero(); t * d];
    let mut dv = vec![F::zero(); t * d];
    let mut dp = vec![F::zero(); t * t];
    for h in 0..heads {
        let off = h * dh;
        let p = &probs[h * t * t..(h + 1) * t * t];
        // dV = Pᵀ dO
        F::gemm(t, t, dh, F::one(), p, 1, t as isize, &dout[off..], d as isize, 1, F::zero(), &mut dv[off..], d as isize, 1);
        // dP = dO Vᵀ
        F::gemm(t, dh, t, F::one(), &dout[off..], d as isize, 1, &v[off..], 1, d as isize, F::zero(), &mut dp, t as isize, 1);
        // dS = P ⊙ (dP − rowsum(P ⊙ dP)), folded with the score scale
        for i in 0..t {
            let pr = &p[i * t..(i + 1) * t];
            let dr = &mut dp[i * t..(i + 1) * t];
            let dot: F = (0..=i).map(|j| pr[j] * dr[j]).sum();
            for j in 0..t {
                dr[j] = if j <= i { pr[j] * (dr[j] - dot) * scale } else { F::zero() };
            }
        }
        // dQ = dS K,  dK = dSᵀ Q
        F::gemm(t, t, dh, F::one(), &dp, t as isize, 1, &k[off..], d as isize, 1, F::zero(), &mut dq[off..], d as isize, 1);
        F::gemm(t, t, dh, F::one(), &dp, 1, t as isize, &q[off..], d as isize, 1, F::zero(), &mut dk[off..], d as isize, 1);
    }
    (dq, dk, dv)
}

/// Per-element Huber / smooth-L1 value and derivative with transition `beta`.
#[inline]
pub fn smooth_l1<F: Real>(diff: F, beta: F) -> (F, F) {
    let a = diff.abs();
    if a < beta {
        (F::from_f64(0.5) * diff * diff / beta, diff / beta)
    } else {
        let sign = if diff > F::zero() { F::one() } else { -F::one() };
        (a - F::from_f64(0.5) * beta, sign)
    }
}

/// Bin boundaries of adaptive average pooling of length `t` into `bins`.
pub fn adaptive_bin(t: usize, bins: usize, b: usize) -> (usize, usize) {
    let start = b * t / bins;
    let end = ((b + 1) * t).div_ceil(bins);
    (start, end.max(start + 1).min(t))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_identity_kernel() {
        let x = [1.0f64, -2.0, 3.5, 0.25];
        let (y, t_out) = conv1d(&x, 1, 4, &[1.0], 1, 1, None, 1, 0);
        assert_eq!(t_out, 4);
        assert_eq!(y, x.to_vec());
    }

    #[test]
    fn conv_hand_example_stride_two() {
        let x = [1.0f64, 2.0, 3.0, 4.0];
        let (y, t_out) = conv1d(&x, 1, 4, &[1.0, 1.0], 1, 2, None, 2, 0);
        assert_eq!(t_out, 2);
        assert_eq!(y, vec![3.0, 7.0]);
    }

    #[test]
    fn stride_four_downsamples_forty_to_ten() {
        // kernel 4, stride 4, no padding: (40 - 4) / 4 + 1
        assert_eq!(conv_out_len(40, 4, 4, 0), Some(10));
        // kernel 8, stride 4, pad 2 also yields 10
        assert_eq!(conv_out_len(40, 8, 4, 2), Some(10));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut row = vec![0.3f32, -12.0, 40.0, 2.0];
        softmax_in_place(&mut row);
        let s: f32 = row.iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
    }

    #[test]
    fn uniform_scores_give_uniform_weights() {
        // identical keys make every admissible logit equal
        let (t, d) = (5, 4);
        let q = vec![0.7f64; t * d];
        let k = vec![0.2f64; t * d];
        let v: Vec<f64> = (0..t * d).map(|i| i as f64).collect();
        let (_, probs) = causal_attention(&q, &k, &v, t, d, 2);
        for h in 0..2 {
            for i in 0..t {
                for j in 0..t {
                    let p = probs[h * t * t + i * t + j];
                    let expected = if j <= i { 1.0 / (i + 1) as f64 } else { 0.0 };
                    assert!((p - expected).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn single_token_attention_returns_value() {
        let q = [0.3f64, -1.0, 2.0, 0.5];
        let k = [1.0f64, 0.1, -0.4, 0.9];
        let v = [4.0f64, 5.0, 6.0, 7.0];
        let (out, _) = causal_attention(&q, &k, &v, 1, 4, 2);
        assert_eq!(out, v.to_vec());
    }

    #[test]
    fn adaptive_bins_cover_sequence() {
        for t in 1..20 {
            for bins in 1..6 {
                let mut covered = vec![false; t];
                for b in 0..bins {
                    let (s, e) = adaptive_bin(t, bins, b);
                    assert!(s < e && e <= t);
                    covered[s..e].iter_mut().for_each(|c| *c = true);
                }
                assert!(covered.iter().all(|c| *c));
            }
        }
    }
}
