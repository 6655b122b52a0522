//! Central finite-difference verification of [`Graph::backward`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, NodeId, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Outcome of one gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// `(parameter, element, analytic, numeric)` at the worst element.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Denominator floor so exactly-zero gradients compare absolutely.
pub const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares analytic gradients of the scalar built by `build` against central
/// differences with step `h`, perturbing every element of every parameter.
pub fn check_gradients<B>(store: &ParamStore<f64>, h: f64, build: B) -> Result<GradCheckReport>
where
    B: Fn(&mut Graph<f64>) -> Result<NodeId>,
{
    let analytic = {
        let mut g = Graph::new(store);
        let loss = build(&mut g)?;
        g.backward(loss)?.params
    };
    let mut work = store.clone();
    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new(s);
        let loss = build(&mut g)?;
        Ok(g.value(loss).item())
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: None,
    };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let n = store.value(id).len();
        for i in 0..n {
            let orig = work.value(id).data()[i];
            work.value_mut(id).data_mut()[i] = orig + h;
            let plus = eval(&work)?;
            work.value_mut(id).data_mut()[i] = orig - h;
            let minus = eval(&work)?;
            work.value_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.get(id).map(|t| t.data()[i]).unwrap_or(0.0);
            if !numeric.is_finite() || !a.is_finite() {
                return Err(Error::NonFinite(format!("gradient check of {}", store.get(id).name)));
            }
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((store.get(id).name.clone(), i, a, numeric));
            }
        }
    }
    Ok(report)
}

/// Step size used by [`layer_suite`].
pub const SUITE_STEP: f64 = 1e-4;

type LayerCase = fn(&mut ChaCha8Rng) -> Result<GradCheckReport>;

/// Runs a finite-difference check for every layer type on small random
/// shapes drawn from `seed`, returning one report per layer.
pub fn layer_suite(seed: u64) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let cases: [(&'static str, LayerCase); 20] = [
        ("linear", case_linear),
        ("matmul", case_matmul),
        ("matmul_transposed", case_matmul_t),
        ("add_scale", case_add_scale),
        ("relu", case_relu),
        ("gelu", case_gelu),
        ("layernorm", case_layernorm),
        ("embedding", case_embedding),
        ("causal_attention", case_attention),
        ("conv1d", case_conv1d),
        ("conv1d_strided", case_conv1d_strided),
        ("upsample", case_upsample),
        ("transpose_reshape", case_transpose_reshape),
        ("adaptive_pool", case_pool),
        ("l2_normalize", case_l2),
        ("concat_rows", case_concat),
        ("cross_entropy", case_cross_entropy),
        ("smooth_l1", case_smooth_l1),
        ("time_diff", case_time_diff),
        ("weighted_sum", case_weighted_sum),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    cases
        .iter()
        .map(|(name, case)| case(&mut rng).map(|r| (*name, r)))
        .collect()
}

/// Reduces any node to a scalar through a fixed random projection.
fn project(g: &mut Graph<f64>, x: NodeId, seed: u64) -> Result<NodeId> {
    let n = g.value(x).len();
    let flat = g.reshape(x, &[1, n])?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = g.constant(Tensor::randn(vec![n, 1], 1.0, &mut rng));
    g.matmul(flat, r, false)
}

fn rand_param(store: &mut ParamStore<f64>, name: &str, shape: &[usize], rng: &mut ChaCha8Rng) -> ParamId {
    store.add(name, Tensor::randn(shape.to_vec(), 1.0, rng))
}

fn case_linear(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let mut s = ParamStore::new();
    let x = rand_param(&mut s, "x", &[3, 4], rng);
    let w = rand_param(&mut s, "w", &[4, 5], rng);
    let b = rand_param(&mut s, "b", &[5], rng);
    let seed = rng.gen();
    check_gradients(&s, SUITE_STEP, |g| {
        let (xn, wn, bn) = (g.param(x), g.param(w), g.param(b));
        let y = g.linear(xn, wn, Some(bn))?;
        project(g, y, seed)
    })
}

fn case_matmul(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let mut s = ParamStore::new();
    let a = rand_param(&mut s, "a", &[3, 4], rng);
    let b = rand_param(&mut s, "b", &[4, 2], rng);
    let seed = rng.gen();
    check_gradients(&s, SUITE_STEP, |g| {
        let (an, bn) = (g.param(a), g.param(b));
        let y = g.matmul(an, bn, false)?;
        project(g, y, seed)
    })
}

fn case_matmul_t(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let mut s = ParamStore::new();
    let a = rand_param(&mut s, "a", &[3, 4], rng);
    let b = rand_param(&mut s, "b", &[5, 4], rng);
    let seed = rng.gen();
    check_gradients(&s, SUITE_STEP, |g| {
        let (an, bn) = (g.param(a), g.param(b));
        let y = g.matmul(an, bn, true)?;
        project(g, y, seed)
    })
}

fn case_add_scale(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let mut s = ParamStore::new();
    let a = rand_param(&mut s, "a", &[2, 3], rng);
    let b = rand_param(&mut s, "b", &[2, 3], rng);
    let seed = rng.gen();
    check_gradients(&s, SUITE_STEP, |g| {
        let (an, bn) = (g.param(a), g.param(b));
        let sa = g.scale(an, -1.7);
        let y = g.add(sa, bn)?;
        let y = g.add(y, an)?;
        project(g, y, seed)
    })
}

/// Keeps entries at least `margin` away from zero so kinks are not straddled.
fn away_from_zero(store: &mut ParamStore<f64>, id: ParamId, margin: f64) {
    for v in store.value_mut(id).data_mut() {
        if v.abs() < margin {
            *v = if *v < 0.0 { -margin } else { margin };
        }
    }
}

fn case_relu(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let mut s = ParamStore::new();
    let x = rand_param(&mut s, "x", &[4, 5], rng);
    away_from_zero(&mut s, x, 1e-2);
    let seed = rng.gen();
    check_gradients(&s, SUITE_STEP, |g| {
        let xn = g.param(x);
        let y = g.relu(xn);
        project(g, y, seed)
    })
}

fn case_gelu(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let mut s = ParamStore::new();
    let x = rand_param(&mut s, "x", &[4, 5], rng);
    let seed = rng.gen();
    check_gradients(&s, SUITE_STEP, |g| {
        let xn = g.param(x);
        let y = g.gelu(xn);
        project(g, y, seed)
    })
}

fn case_layernorm(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let mut s = ParamStore::new();
    let x = rand_param(&mut s, "x", &[3, 6], rng);
    let gm = rand_param(&mut s, "gamma", &[6], rng);
    let bt = rand_param(&mut s, "beta", &[6], rng);
    let seed = rng.gen();
    check_gradients(&s, SUITE_STEP, |g| {
        let (xn, gn, bn) = (g.param(x), g.param(gm), g.param(bt));
        let y = g.layernorm(xn, gn, bn)?;
        project(g, y, seed)
    })
}

fn case_embedding(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let mut s = ParamStore::new();
    let t = rand_param(&mut s, "table", &[7, 3], rng);
    let ids: Vec<usize> = (0..6).map(|_| rng.gen_range(0..7)).collect();
    let seed = rng.gen();
    check_gradients(&s, SUITE_STEP, |g| {
        let tn = g.param(t);
        let y = g.embedding(tn, &ids)?;
        project(g, y, seed)
    })
}

fn case_attention(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let mut s = ParamStore::new();
    let q = rand_param(&mut s, "q", &[5, 6], rng);
    let k = rand_param(&mut s, "k", &[5, 6], rng);
    let v = rand_param(&mut s, "v", &[5, 6], rng);
    let seed = rng.gen();
    check_gradients(&s, SUITE_STEP, |g| {
        let (qn, kn, vn) = (g.param(q), g.param(k), g.param(v));
        let y = g.causal_attention(qn, kn, vn, 2)?;
        project(g, y, seed)
    })
}

fn case_conv1d(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let mut s = ParamStore::new();
    let x = rand_param(&mut s, "x", &[3, 9], rng);
    let w = rand_param(&mut s, "w", &[4, 3, 3], rng);
    let b = rand_param(&mut s, "b", &[4], rng);
    let seed = rng.gen();
    check_gradients(&s, SUITE_STEP, |g| {
        let (xn, wn, bn) = (g.param(x), g.param(w), g.param(b));
        let y = g.conv1d(xn, wn, Some(bn), 1, 1)?;
        project(g, y, seed)
    })
}

fn case_conv1d_strided(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let mut s = ParamStore::new();
    let x = rand_param(&mut s, "x", &[2, 12], rng);
    let w = rand_param(&mut s, "w", &[3, 2, 4], rng);
    let b = rand_param(&mut s, "b", &[3], rng);
    let seed = rng.gen();
    check_gradients(&s, SUITE_STEP, |g| {
        let (xn, wn, bn) = (g.param(x), g.param(w), g.param(b));
        let y = g.conv1d(xn, wn, Some(bn), 2, 1)?;
        project(g, y, seed)
    })
}

fn case_upsample(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let mut s = ParamStore::new();
    let x = rand_param(&mut s, "x", &[3, 4], rng);
    let seed = rng.gen();
    check_gradients(&s, SUITE_STEP, |g| {
        let xn = g.param(x);
        let y = g.upsample(xn, 2)?;
        project(g, y, seed)
    })
}

fn case_transpose_reshape(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let mut s = ParamStore::new();
    let x = rand_param(&mut s, "x", &[3, 4], rng);
    let w = rand_param(&mut s, "w", &[6, 2], rng);
    let seed = rng.gen();
    check_gradients(&s, SUITE_STEP, |g| {
        let (xn, wn) = (g.param(x), g.param(w));
        let t = g.transpose(xn);
        let r = g.reshape(t, &[2, 6])?;
        let y = g.matmul(r, wn, false)?;
        project(g, y, seed)
    })
}

fn case_pool(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let mut s = ParamStore::new();
    let x = rand_param(&mut s, "x", &[3, 10], rng);
    let seed = rng.gen();
    check_gradients(&s, SUITE_STEP, |g| {
        let xn = g.param(x);
        let y = g.adaptive_pool(xn, 4)?;
        project(g, y, seed)
    })
}

fn case_l2(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let mut s = ParamStore::new();
    let x = rand_param(&mut s, "x", &[3, 5], rng);
    let seed = rng.gen();
    check_gradients(&s, SUITE_STEP, |g| {
        let xn = g.param(x);
        let y = g.l2_normalize(xn);
        project(g, y, seed)
    })
}

fn case_concat(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let mut s = ParamStore::new();
    let a = rand_param(&mut s, "a", &[2, 3], rng);
    let b = rand_param(&mut s, "b", &[3], rng);
    let seed = rng.gen();
    check_gradients(&s, SUITE_STEP, |g| {
        let (an, bn) = (g.param(a), g.param(b));
        let y = g.concat_rows(&[an, bn, an])?;
        project(g, y, seed)
    })
}

fn case_cross_entropy(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let mut s = ParamStore::new();
    let l = rand_param(&mut s, "logits", &[5, 7], rng);
    let targets: Vec<Option<usize>> = (0..5)
        .map(|i| if i == 2 { None } else { Some(rng.gen_range(0..7)) })
        .collect();
    check_gradients(&s, SUITE_STEP, |g| {
        let ln = g.param(l);
        g.cross_entropy(ln, &targets)
    })
}

fn case_smooth_l1(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let mut s = ParamStore::new();
    let a = rand_param(&mut s, "a", &[3, 4], rng);
    let b = rand_param(&mut s, "b", &[3, 4], rng);
    // keep |a - b| away from the quadratic/linear transition at 1.0
    let bv = s.value(b).clone();
    for (x, y) in s.value_mut(a).data_mut().iter_mut().zip(bv.data()) {
        let d = *x - *y;
        if (d.abs() - 1.0).abs() < 1e-2 {
            *x += 0.05 * d.signum();
        }
    }
    check_gradients(&s, SUITE_STEP, |g| {
        let (an, bn) = (g.param(a), g.param(b));
        g.smooth_l1(an, bn, 1.0)
    })
}

fn case_time_diff(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let mut s = ParamStore::new();
    let x = rand_param(&mut s, "x", &[2, 6], rng);
    let seed = rng.gen();
    check_gradients(&s, SUITE_STEP, |g| {
        let xn = g.param(x);
        let y = g.time_diff(xn)?;
        project(g, y, seed)
    })
}

fn case_weighted_sum(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let mut s = ParamStore::new();
    let a = rand_param(&mut s, "a", &[2, 3], rng);
    let t = Tensor::randn(vec![2, 3], 1.0, rng);
    let seed = rng.gen();
    check_gradients(&s, SUITE_STEP, |g| {
        let an = g.param(a);
        let tn = g.constant(t.clone());
        let l1 = g.smooth_l1(an, tn, 1e3)?;
        let p = project(g, an, seed)?;
        g.weighted_sum(&[(l1, 0.25), (p, 2.0)])
    })
}
