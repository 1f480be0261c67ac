//! Central finite-difference checks of analytic gradients.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tapsense_core::Result;

use crate::graph::{Graph, Var};
use crate::params::ParamStore;

pub const FD_STEP: f64 = 1e-6;

/// Relative error `|a - n| / max(|a|, |n|)` between the analytic gradient and
/// central differences of the scalar built by `f`, over up to `per_param`
/// randomly chosen entries of every parameter. Graphs run in training mode
/// with a fixed dropout seed.
pub fn check<F>(store: &ParamStore, per_param: usize, seed: u64, f: F) -> Result<f64>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::new(s, true, seed);
        let v = f(&mut g)?;
        Ok(g.value(v).data[0])
    };
    let grads = {
        let mut g = Graph::new(store, true, seed);
        let v = f(&mut g)?;
        g.backward(v)?
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = store.clone();
    let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
    for p in store.pids() {
        let len = store.value(p).len();
        for i in index::sample(&mut rng, len, per_param.min(len)) {
            let orig = store.value(p).data[i];
            work.value_mut(p).data[i] = orig + FD_STEP;
            let up = eval(&work)?;
            work.value_mut(p).data[i] = orig - FD_STEP;
            let down = eval(&work)?;
            work.value_mut(p).data[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let analytic = grads.get(p)[i];
            diff2 += (analytic - numeric).powi(2);
            a2 += analytic * analytic;
            n2 += numeric * numeric;
        }
    }
    let denom = a2.sqrt().max(n2.sqrt());
    Ok(if denom == 0.0 { 0.0 } else { diff2.sqrt() / denom })
}

/// Worst relative error of one operation over a number of random shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct OpCheck {
    pub op: &'static str,
    pub shapes: usize,
    pub max_rel_error: f64,
}

/// Every differentiable operation, each on `shapes` random configurations.
pub fn op_suite(shapes: usize, seed: u64) -> Result<Vec<OpCheck>> {
    use crate::tensor::Tensor;
    use rand::Rng;
    use tapsense_core::geometry::Vec3;
    use tapsense_core::shape::ChamferVariant;

    type Case = dyn Fn(&mut ChaCha8Rng) -> Result<f64>;
    fn rand_t(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor { shape, data: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() }
    }
    fn weights(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    let cases: Vec<(&'static str, Box<Case>)> = vec![
        ("conv2d", Box::new(move |rng| {
            let (b, c, o) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..4));
            let k = rng.random_range(1..4);
            let s = rng.random_range(1..3);
            let h = rng.random_range(k..k + 5);
            let w = rng.random_range(k..k + 5);
            let mut st = ParamStore::new();
            let x = st.add("x", rand_t(rng, vec![b, c, h, w]));
            let wt = st.add("w", rand_t(rng, vec![o, c, k, k]));
            let bt = st.add("b", rand_t(rng, vec![o]));
            let n = b * o * ((h - k) / s + 1) * ((w - k) / s + 1);
            let cw = weights(rng, n);
            check(&st, 12, rng.random(), |g| {
                let (x, w, bb) = (g.param(x), g.param(wt), g.param(bt));
                let y = g.conv2d(x, w, bb, s)?;
                g.weighted_sum(y, cw.clone())
            })
        })),
        ("conv1d", Box::new(move |rng| {
            // kernel-1 convolution over a ragged point batch is a row-wise linear map
            let (p, i, o) = (rng.random_range(2..30), rng.random_range(1..8), rng.random_range(1..8));
            let mut st = ParamStore::new();
            let x = st.add("x", rand_t(rng, vec![p, i]));
            let w = st.add("w", rand_t(rng, vec![o, i]));
            let b = st.add("b", rand_t(rng, vec![o]));
            let cw = weights(rng, p * o);
            check(&st, 12, rng.random(), |g| {
                let (x, w, b) = (g.param(x), g.param(w), g.param(b));
                let y = g.linear(x, w, b)?;
                g.weighted_sum(y, cw.clone())
            })
        })),
        ("fc", Box::new(move |rng| {
            let (n, i, o) = (rng.random_range(1..6), rng.random_range(1..12), rng.random_range(1..12));
            let mut st = ParamStore::new();
            let x = st.add("x", rand_t(rng, vec![n, i]));
            let w = st.add("w", rand_t(rng, vec![o, i]));
            let b = st.add("b", rand_t(rng, vec![o]));
            let cw = weights(rng, n * o);
            check(&st, 12, rng.random(), |g| {
                let (x, w, b) = (g.param(x), g.param(w), g.param(b));
                let y = g.linear(x, w, b)?;
                g.weighted_sum(y, cw.clone())
            })
        })),
        ("batchnorm", Box::new(move |rng| {
            let (b, c) = (rng.random_range(2..4), rng.random_range(1..4));
            let (h, w) = (rng.random_range(1..4), rng.random_range(1..4));
            let mut st = ParamStore::new();
            let x = st.add("x", rand_t(rng, vec![b, c, h, w]));
            let ga = st.add("g", rand_t(rng, vec![c]));
            let be = st.add("b", rand_t(rng, vec![c]));
            let m = st.add_buffer("m", vec![0.0; c]);
            let v = st.add_buffer("v", vec![1.0; c]);
            let cw = weights(rng, b * c * h * w);
            let inner = h * w;
            check(&st, 12, rng.random(), |g| {
                let (x, ga, be) = (g.param(x), g.param(ga), g.param(be));
                let y = g.batch_norm(x, ga, be, (m, v), inner, b)?;
                g.weighted_sum(y, cw.clone())
            })
        })),
        ("batchnorm-points", Box::new(move |rng| {
            let (p, c) = (rng.random_range(3..20), rng.random_range(1..5));
            let mut st = ParamStore::new();
            let x = st.add("x", rand_t(rng, vec![p, c]));
            let ga = st.add("g", rand_t(rng, vec![c]));
            let be = st.add("b", rand_t(rng, vec![c]));
            let m = st.add_buffer("m", vec![0.0; c]);
            let v = st.add_buffer("v", vec![1.0; c]);
            let cw = weights(rng, p * c);
            check(&st, 12, rng.random(), |g| {
                let (x, ga, be) = (g.param(x), g.param(ga), g.param(be));
                let y = g.batch_norm(x, ga, be, (m, v), 1, 2)?;
                g.weighted_sum(y, cw.clone())
            })
        })),
        ("max-pool", Box::new(move |rng| {
            let (b, c) = (rng.random_range(1..3), rng.random_range(1..3));
            let (h, w) = (rng.random_range(2..8), rng.random_range(2..8));
            let mut st = ParamStore::new();
            let x = st.add("x", rand_t(rng, vec![b, c, h, w]));
            let cw = weights(rng, b * c * (h / 2) * (w / 2));
            check(&st, 20, rng.random(), |g| {
                let x = g.param(x);
                let y = g.max_pool2(x)?;
                g.weighted_sum(y, cw.clone())
            })
        })),
        ("global-max-pool", Box::new(move |rng| {
            let segs = rng.random_range(1..4);
            let mut offsets = vec![0];
            for _ in 0..segs {
                offsets.push(offsets.last().unwrap() + rng.random_range(1..8));
            }
            let (p, c) = (*offsets.last().unwrap(), rng.random_range(1..5));
            let mut st = ParamStore::new();
            let x = st.add("x", rand_t(rng, vec![p, c]));
            let gl = st.add("gl", rand_t(rng, vec![segs, 2]));
            let cw = weights(rng, segs * c);
            let cw2 = weights(rng, p * (c + 2));
            let s = rng.random();
            let e1 = check(&st, 20, s, |g| {
                let x = g.param(x);
                let y = g.segment_max(x, &offsets)?;
                g.weighted_sum(y, cw.clone())
            })?;
            let e2 = check(&st, 20, s, |g| {
                let (x, gl) = (g.param(x), g.param(gl));
                let t = g.tile_concat(x, gl, &offsets)?;
                g.weighted_sum(t, cw2.clone())
            })?;
            Ok(e1.max(e2))
        })),
        ("relu", Box::new(move |rng| {
            let n = rng.random_range(1..40);
            let mut st = ParamStore::new();
            let x = st.add("x", rand_t(rng, vec![1, n]));
            let cw = weights(rng, n);
            check(&st, 20, rng.random(), |g| {
                let x = g.param(x);
                let y = g.relu(x);
                g.weighted_sum(y, cw.clone())
            })
        })),
        ("dropout-off", Box::new(move |rng| {
            let n = rng.random_range(1..40);
            let mut st = ParamStore::new();
            let x = st.add("x", rand_t(rng, vec![1, n]));
            let cw = weights(rng, n);
            let s = rng.random();
            // evaluation mode: the identity
            let mut g0 = Graph::new(&st, false, s);
            let xv = g0.param(x);
            let y = g0.dropout(xv, 0.5)?;
            let grads = {
                let l = g0.weighted_sum(y, cw.clone())?;
                g0.backward(l)?
            };
            let err = grads.get(x).iter().zip(&cw).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            // training mode with a fixed mask is linear as well
            let e2 = check(&st, 20, s, |g| {
                let x = g.param(x);
                let y = g.dropout(x, 0.3)?;
                g.weighted_sum(y, cw.clone())
            })?;
            Ok(err.max(e2))
        })),
        ("cross-entropy", Box::new(move |rng| {
            let (n, k) = (rng.random_range(1..6), rng.random_range(2..10));
            let mut st = ParamStore::new();
            let x = st.add("x", rand_t(rng, vec![n, k]));
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            check(&st, 30, rng.random(), |g| {
                let x = g.param(x);
                g.cross_entropy(x, &labels)
            })
        })),
        ("chamfer-l1", Box::new(move |rng| chamfer_case(rng, ChamferVariant::L1))),
        ("chamfer-l2", Box::new(move |rng| chamfer_case(rng, ChamferVariant::L2))),
    ];

    fn chamfer_case(rng: &mut ChaCha8Rng, variant: ChamferVariant) -> Result<f64> {
        let b = rng.random_range(1..3);
        let n = rng.random_range(1..15);
        let mut st = ParamStore::new();
        let data = (0..b * n * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p = st.add("p", crate::tensor::Tensor { shape: vec![b, 3 * n], data });
        let targets: Vec<Vec<Vec3>> = (0..b)
            .map(|_| {
                (0..rng.random_range(1..15))
                    .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                    .collect()
            })
            .collect();
        let refs: Vec<&[Vec3]> = targets.iter().map(Vec::as_slice).collect();
        check(&st, 30, rng.random(), |g| {
            let p = g.param(p);
            g.chamfer(p, &refs, variant)
        })
    }

    let mut out = Vec::new();
    for (i, (op, case)) in cases.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64 * 7919));
        let mut worst: f64 = 0.0;
        for _ in 0..shapes {
            worst = worst.max(case(&mut rng)?);
        }
        out.push(OpCheck { op, shapes, max_rel_error: worst });
    }
    Ok(out)
}
