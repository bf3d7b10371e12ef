//! Finite-difference suites over every differentiable operation and loss.

use fedsiam::autodiff::{Graph, Mode, Tensor, Var};
use fedsiam::nn::{BnRecord, BoundModel, ModelParams};
use fedsiam::training::{hist_from, moon_from, proximal_from, stop_from, views, Want};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    central_diff, check_op, random_batch, random_model, random_tensor, rel_err, tiny_encoder,
};

fn rng(tag: u64, i: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(tag * 1000 + i as u64)
}

fn labels(rng: &mut ChaCha8Rng, n: usize, classes: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..classes)).collect()
}

/// Values bounded away from zero so ReLU is differentiable at every entry.
fn off_kink(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let mut t = random_tensor(rng, shape, 1.0);
    for v in t.data_mut() {
        *v = v.signum() * (v.abs() + 0.05);
    }
    t
}

pub fn matmul(i: usize) -> f64 {
    let mut r = rng(1, i);
    let (a, b, target) = (
        random_tensor(&mut r, &[4, 3], 1.0),
        random_tensor(&mut r, &[3, 2], 1.0),
        random_tensor(&mut r, &[4, 2], 1.0),
    );
    check_op(&[a, b], |g, v| {
        let y = g.matmul(v[0], v[1]).unwrap();
        g.sq_dist(y, &target).unwrap()
    })
}

pub fn relu(i: usize) -> f64 {
    let mut r = rng(2, i);
    let (x, target) = (
        off_kink(&mut r, &[5, 4]),
        random_tensor(&mut r, &[5, 4], 1.0),
    );
    check_op(&[x], |g, v| {
        let y = g.relu(v[0]);
        g.sq_dist(y, &target).unwrap()
    })
}

pub fn batch_norm(i: usize) -> f64 {
    let mut r = rng(3, i);
    let a = random_tensor(&mut r, &[6, 4], 2.0);
    let gamma = random_tensor(&mut r, &[4], 1.5);
    let beta = random_tensor(&mut r, &[4], 1.0);
    let target = random_tensor(&mut r, &[6, 4], 1.0);
    let rm: Vec<f64> = (0..4).map(|_| r.random_range(-1.0..1.0)).collect();
    let rv: Vec<f64> = (0..4).map(|_| r.random_range(0.2..2.0)).collect();
    let train = check_op(&[a.clone(), gamma.clone(), beta.clone()], |g, v| {
        let (y, _) = g.batch_norm_train(v[0], v[1], v[2]).unwrap();
        g.sq_dist(y, &target).unwrap()
    });
    let eval = check_op(&[a, gamma, beta], |g, v| {
        let y = g.batch_norm_eval(v[0], v[1], v[2], &rm, &rv).unwrap();
        g.sq_dist(y, &target).unwrap()
    });
    train.max(eval)
}

pub fn softmax_cross_entropy(i: usize) -> f64 {
    let mut r = rng(4, i);
    let logits = random_tensor(&mut r, &[8, 5], 3.0);
    let y = labels(&mut r, 8, 5);
    check_op(&[logits], |g, v| g.softmax_cross_entropy(v[0], &y).unwrap())
}

pub fn cosine_similarity(i: usize) -> f64 {
    let mut r = rng(5, i);
    let (a, b) = (
        random_tensor(&mut r, &[4, 6], 1.0),
        random_tensor(&mut r, &[4, 6], 1.0),
    );
    check_op(&[a, b], |g, v| g.cosine_similarity(v[0], v[1]).unwrap())
}

/// Remaining primitives composed into one scalar.
pub fn elementwise(i: usize) -> f64 {
    let mut r = rng(6, i);
    let (a, b) = (
        random_tensor(&mut r, &[3, 4], 2.0),
        random_tensor(&mut r, &[3, 4], 2.0),
    );
    let bias = random_tensor(&mut r, &[4], 1.0);
    let factor = r.random_range(-2.0..2.0);
    let target = random_tensor(&mut r, &[3, 4], 1.0);
    check_op(&[a, b, bias], |g, v| {
        let s = g.add(v[0], v[1]).unwrap();
        let d = g.sub(s, v[1]).unwrap();
        let d = g.sub(d, v[0]).unwrap();
        let x = g.add_row(v[0], v[2]).unwrap();
        let x = g.add(x, d).unwrap();
        let sp = g.softplus(x);
        let sc = g.scale(sp, factor);
        let m = g.mean(sc);
        let sq = g.sq_dist(v[1], &target).unwrap();
        g.add(m, sq).unwrap()
    })
}

/// MOON contrastive loss; the global and previous representations are constants.
pub fn moon(i: usize) -> f64 {
    let mut r = rng(7, i);
    let z = random_tensor(&mut r, &[5, 4], 1.0);
    let (zg, zp) = (
        random_tensor(&mut r, &[5, 4], 1.0),
        random_tensor(&mut r, &[5, 4], 1.0),
    );
    let tau = r.random_range(0.2..1.0);
    check_op(&[z], |g, v| {
        let (a, b) = (g.constant(zg.clone()), g.constant(zp.clone()));
        moon_from(g, v[0], a, b, tau).unwrap()
    })
}

/// Analytic gradients of a loss over whole models, flattened model by model.
fn model_grads(
    models: &[ModelParams],
    build: &dyn Fn(&mut Graph, &[BoundModel]) -> Var,
) -> (f64, Vec<Vec<f64>>) {
    let mut g = Graph::new();
    let bound: Vec<BoundModel> = models.iter().map(|m| m.bind(&mut g, true)).collect();
    let loss = build(&mut g, &bound);
    let value = g.value(loss).item();
    let grads = g.backward(loss).unwrap();
    let flat = bound
        .iter()
        .map(|b| {
            grads
                .wrt(b.vars())
                .into_iter()
                .flat_map(Tensor::into_data)
                .collect()
        })
        .collect();
    (value, flat)
}

/// Central differences of the same loss with respect to model `which`.
fn model_fd(
    models: &[ModelParams],
    which: usize,
    build: &dyn Fn(&mut Graph, &[BoundModel]) -> Var,
) -> Vec<f64> {
    central_diff(&models[which].flatten(), |x| {
        let mut ms = models.to_vec();
        ms[which] = models[which].unflatten(x).unwrap();
        let mut g = Graph::new();
        let bound: Vec<BoundModel> = ms.iter().map(|m| m.bind(&mut g, true)).collect();
        let l = build(&mut g, &bound);
        g.value(l).item()
    })
}

fn representations(
    model: &ModelParams,
    x: &Tensor,
    mode: Mode,
    want: Want,
) -> (Tensor, Option<Tensor>) {
    let mut g = Graph::new();
    let b = model.bind(&mut g, false);
    let xv = g.constant(x.clone());
    let v = views(&mut g, &b, xv, mode, &mut BnRecord::default(), want).unwrap();
    (g.value(v.z).clone(), v.p.map(|p| g.value(p).clone()))
}

/// History loss with the history representation frozen at `z_hist`.
fn hist_graph(g: &mut Graph, b: &[BoundModel], x: &Tensor, z_hist: &Tensor) -> Var {
    let xv = g.constant(x.clone());
    let cur = views(
        g,
        &b[0],
        xv,
        Mode::Train,
        &mut BnRecord::default(),
        Want::REPR,
    )
    .unwrap();
    // the history model is still bound so its (zero) gradient can be read back
    let _ = views(
        g,
        &b[1],
        xv,
        Mode::Eval,
        &mut BnRecord::default(),
        Want::REPR,
    )
    .unwrap();
    let h = g.constant(z_hist.clone());
    hist_from(g, cur.z, h).unwrap()
}

/// The same loss computed the way training computes it: history views on the graph.
fn hist_graph_live(g: &mut Graph, b: &[BoundModel], x: &Tensor) -> Var {
    let xv = g.constant(x.clone());
    let cur = views(
        g,
        &b[0],
        xv,
        Mode::Train,
        &mut BnRecord::default(),
        Want::REPR,
    )
    .unwrap();
    let h = views(
        g,
        &b[1],
        xv,
        Mode::Eval,
        &mut BnRecord::default(),
        Want::REPR,
    )
    .unwrap();
    hist_from(g, cur.z, h.z).unwrap()
}

/// Symmetrized stop-gradient loss. With `frozen`, the two stopped
/// representations are replaced by constants: the function a stop-gradient
/// gradient is the true derivative of.
fn stop_graph(
    g: &mut Graph,
    b: &[BoundModel],
    x: &Tensor,
    frozen: Option<(&Tensor, &Tensor)>,
    term: usize,
) -> Var {
    let xv = g.constant(x.clone());
    let mut lv = views(
        g,
        &b[0],
        xv,
        Mode::Train,
        &mut BnRecord::default(),
        Want::PRED,
    )
    .unwrap();
    let mut gv = views(
        g,
        &b[1],
        xv,
        Mode::Train,
        &mut BnRecord::default(),
        Want::PRED,
    )
    .unwrap();
    if let Some((zl, zg)) = frozen {
        lv.z = g.constant(zl.clone());
        gv.z = g.constant(zg.clone());
    }
    let s = stop_from(g, &lv, &gv).unwrap();
    match term {
        1 => s.toward_local,
        2 => s.toward_global,
        _ => s.total,
    }
}

fn train_repr(model: &ModelParams, x: &Tensor) -> Tensor {
    representations(model, x, Mode::Train, Want::REPR).0
}

pub fn loss_hist(i: usize) -> f64 {
    let mut r = rng(8, i);
    let cfg = tiny_encoder(5, 3);
    let models = [
        random_model(&cfg, 100 + i as u64),
        random_model(&cfg, 200 + i as u64),
    ];
    let x = random_batch(&mut r, 6, 5);
    let (value, analytic) = model_grads(&models, &|g, b| hist_graph_live(g, b, &x));
    assert!((-1.0..=1.0).contains(&value));
    let z_hist = representations(&models[1], &x, Mode::Eval, Want::REPR).0;
    let build = |g: &mut Graph, b: &[BoundModel]| hist_graph(g, b, &x, &z_hist);
    let numeric = model_fd(&models, 0, &build);
    rel_err(&analytic[0], &numeric)
}

pub fn loss_stop(i: usize) -> f64 {
    let mut r = rng(9, i);
    let cfg = tiny_encoder(5, 3);
    let models = [
        random_model(&cfg, 300 + i as u64),
        random_model(&cfg, 400 + i as u64),
    ];
    let x = random_batch(&mut r, 6, 5);
    let (zl, zg) = (train_repr(&models[0], &x), train_repr(&models[1], &x));
    let (_, analytic) = model_grads(&models, &|g, b| stop_graph(g, b, &x, None, 0));
    let build = |g: &mut Graph, b: &[BoundModel]| stop_graph(g, b, &x, Some((&zl, &zg)), 0);
    let mut worst: f64 = 0.0;
    for (which, a) in analytic.iter().enumerate() {
        worst = worst.max(rel_err(a, &model_fd(&models, which, &build)));
    }
    worst
}

pub fn proximal(i: usize) -> f64 {
    let mut r = rng(10, i);
    let cfg = tiny_encoder(4, 3);
    let (local, global) = (
        random_model(&cfg, 500 + i as u64),
        random_model(&cfg, 600 + i as u64),
    );
    let mu = r.random_range(0.01..2.0);
    let build = |g: &mut Graph, b: &[BoundModel]| proximal_from(g, &b[0], &global, mu).unwrap();
    let models = [local];
    let (_, analytic) = model_grads(&models, &build);
    let numeric = model_fd(&models, 0, &build);
    // closed form μ(w − w_g)
    let closed: Vec<f64> = models[0]
        .flatten()
        .iter()
        .zip(global.flatten())
        .map(|(w, g)| mu * (w - g))
        .collect();
    rel_err(&analytic[0], &numeric).max(rel_err(&analytic[0], &closed))
}

/// Worst relative error per operation over `instances` random draws.
pub fn suite(instances: usize) -> Vec<(&'static str, f64)> {
    type Case = (&'static str, fn(usize) -> f64);
    let cases: [Case; 10] = [
        ("matmul", matmul),
        ("relu", relu),
        ("batch_norm", batch_norm),
        ("softmax_cross_entropy", softmax_cross_entropy),
        ("cosine_similarity", cosine_similarity),
        (
            "elementwise (add, sub, add_row, scale, softplus, mean, sq_dist)",
            elementwise,
        ),
        ("loss_hist", loss_hist),
        ("loss_stop", loss_stop),
        ("fedprox proximal term", proximal),
        ("moon contrastive loss", moon),
    ];
    cases
        .iter()
        .map(|&(name, f)| (name, (0..instances).map(f).fold(0.0, f64::max)))
        .collect()
}

/// Largest gradient magnitude on a stopped branch, analytic and numeric.
#[derive(Debug, Clone, Copy)]
pub struct Isolation {
    pub analytic: f64,
    pub numeric: f64,
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn merge(a: Isolation, b: Isolation) -> Isolation {
    Isolation {
        analytic: a.analytic.max(b.analytic),
        numeric: a.numeric.max(b.numeric),
    }
}

/// Stopped-branch gradients of L_stop (each term separately and the sum) and of L_hist.
pub fn isolation(trials: usize) -> Vec<(&'static str, Isolation)> {
    let cfg = tiny_encoder(5, 3);
    let zero = Isolation {
        analytic: 0.0,
        numeric: 0.0,
    };
    let (mut term1, mut term2, mut total, mut hist) = (zero, zero, zero, zero);
    for i in 0..trials {
        let mut r = rng(11, i);
        let models = [
            random_model(&cfg, 700 + i as u64),
            random_model(&cfg, 800 + i as u64),
        ];
        let x = random_batch(&mut r, 6, 5);
        let (zl, zg) = (train_repr(&models[0], &x), train_repr(&models[1], &x));
        // term 1 must not reach the local model (index 0), term 2 not the global copy (index 1)
        for (term, stopped, slot) in [(1usize, 0usize, &mut term1), (2, 1, &mut term2)] {
            let (_, analytic) = model_grads(&models, &|g, b| stop_graph(g, b, &x, None, term));
            let numeric = model_fd(&models, stopped, &|g, b| {
                stop_graph(g, b, &x, Some((&zl, &zg)), term)
            });
            *slot = merge(
                *slot,
                Isolation {
                    analytic: max_abs(&analytic[stopped]),
                    numeric: max_abs(&numeric),
                },
            );
        }
        // full loss: neither stopped representation carries gradient, but both
        // models are live through their prediction heads, so check the
        // representation targets themselves
        let mut g = Graph::new();
        let zlv = g.param(zl.clone());
        let zgv = g.param(zg.clone());
        let b: Vec<BoundModel> = models.iter().map(|m| m.bind(&mut g, true)).collect();
        let xv = g.constant(x.clone());
        let mut lv = views(
            &mut g,
            &b[0],
            xv,
            Mode::Train,
            &mut BnRecord::default(),
            Want::PRED,
        )
        .unwrap();
        let mut gv = views(
            &mut g,
            &b[1],
            xv,
            Mode::Train,
            &mut BnRecord::default(),
            Want::PRED,
        )
        .unwrap();
        lv.z = zlv;
        gv.z = zgv;
        let s = stop_from(&mut g, &lv, &gv).unwrap();
        let grads = g.backward(s.total).unwrap().wrt(&[zlv, zgv]);
        total = merge(
            total,
            Isolation {
                analytic: max_abs(grads[0].data()).max(max_abs(grads[1].data())),
                numeric: 0.0,
            },
        );
        // L_hist: the history model is the stopped branch
        let (_, analytic) = model_grads(&models, &|g, b| hist_graph_live(g, b, &x));
        let z_hist = representations(&models[1], &x, Mode::Eval, Want::REPR).0;
        let numeric = model_fd(&models, 1, &|g, b| hist_graph(g, b, &x, &z_hist));
        hist = merge(
            hist,
            Isolation {
                analytic: max_abs(&analytic[1]),
                numeric: max_abs(&numeric),
            },
        );
    }
    vec![
        ("loss_stop term 1 -> local model", term1),
        ("loss_stop term 2 -> global copy", term2),
        ("loss_stop stopped representations", total),
        ("loss_hist -> history model", hist),
    ]
}

/// Non-trivial companion: the live branch does receive gradient.
pub fn live_branch_norm() -> f64 {
    let cfg = tiny_encoder(5, 3);
    let models = [random_model(&cfg, 1), random_model(&cfg, 2)];
    let mut r = rng(12, 0);
    let x = random_batch(&mut r, 6, 5);
    let (_, analytic) = model_grads(&models, &|g, b| stop_graph(g, b, &x, None, 1));
    max_abs(&analytic[1])
}
