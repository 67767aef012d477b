//! Shared oracles and fixtures for the integration tests.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tagcn::graph::{Partition, SkeletonTopology, PARTITION_EPSILON};
use tagcn::layers::{Ctx, MaskMode};
use tagcn::tensor::ops::Mode;
use tagcn::tensor::{grad_check_many, GradCheckReport, ParamStore, Tape, Tensor, Var};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Random connected topology: a random spanning tree plus a few chords.
pub fn random_topology(n: usize, rng: &mut impl Rng) -> SkeletonTopology {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut edges = Vec::new();
    for k in 1..n {
        let parent = order[rng.gen_range(0..k)];
        edges.push((parent, order[k]));
    }
    for _ in 0..rng.gen_range(0..=n) {
        let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if a != b && !edges.iter().any(|&(x, y)| (x, y) == (a, b) || (x, y) == (b, a)) {
            edges.push((a, b));
        }
    }
    let center = rng.gen_range(0..n);
    SkeletonTopology::with_derived_bones("random", n, edges, center).unwrap()
}

/// BFS hop distances computed without the library.
pub fn hops(n: usize, edges: &[(usize, usize)], center: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; n];
    dist[center] = 0;
    let mut frontier = vec![center];
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for &u in &frontier {
            for &(a, b) in edges {
                let v = if a == u {
                    b
                } else if b == u {
                    a
                } else {
                    continue;
                };
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    next.push(v);
                }
            }
        }
        frontier = next;
    }
    dist
}

/// Neighbour sets per partition, built directly from hop distances.
pub fn neighbour_sets(topo: &SkeletonTopology) -> [Vec<Vec<usize>>; 3] {
    let n = topo.num_joints();
    let d = hops(n, topo.edges(), topo.center());
    let mut sets = [vec![Vec::new(); n], vec![Vec::new(); n], vec![Vec::new(); n]];
    for i in 0..n {
        sets[0][i].push(i);
    }
    for &(a, b) in topo.edges() {
        for (i, j) in [(a, b), (b, a)] {
            let p = if d[j] < d[i] { 1 } else { 2 };
            sets[p][i].push(j);
        }
    }
    sets
}

/// Node-form spatial graph convolution before activation:
/// `out[b, o, t, i] = Σ_p Σ_{j ∈ B_p(i)} w_p(i, j) Σ_c W_p[o, c] x[b, c, t, j]`
/// where `w_p(i, j) = M_p[i, j] / sqrt((|B_p(i)| + ε)(|B_p(j)| + ε))` in
/// multiply mode and the normalized weight plus `M_p[i, j]` in add mode (in
/// add mode every joint carrying a nonzero mask entry joins the sum).
pub fn node_form_spatial(
    topo: &SkeletonTopology,
    x: &Tensor<f64>,
    weights: &[Tensor<f64>],
    masks: &[Tensor<f64>],
    mode: MaskMode,
    bias: Option<&Tensor<f64>>,
) -> Tensor<f64> {
    let sets = neighbour_sets(topo);
    let (b, c_in, t, n) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let c_out = weights[0].shape()[0];
    let mut out = Tensor::zeros(&[b, c_out, t, n]);
    for p in 0..3 {
        let deg = |k: usize| sets[p][k].len() as f64 + PARTITION_EPSILON;
        for i in 0..n {
            let mut members: Vec<(usize, f64)> = Vec::new();
            for j in 0..n {
                let in_set = sets[p][i].contains(&j);
                let a_hat = if in_set { 1.0 / (deg(i) * deg(j)).sqrt() } else { 0.0 };
                let m = masks[p].at(&[i, j]);
                let w = match mode {
                    MaskMode::Multiply => a_hat * m,
                    MaskMode::Add => a_hat + m,
                };
                if in_set || (mode == MaskMode::Add && m != 0.0) {
                    members.push((j, w));
                }
            }
            for bi in 0..b {
                for o in 0..c_out {
                    for ti in 0..t {
                        let mut acc = 0.0;
                        for &(j, w) in &members {
                            let mut feat = 0.0;
                            for ci in 0..c_in {
                                feat += weights[p].data()[o * c_in + ci] * x.at(&[bi, ci, ti, j]);
                            }
                            acc += w * feat;
                        }
                        let prev = out.at(&[bi, o, ti, i]);
                        out.set(&[bi, o, ti, i], prev + acc);
                    }
                }
            }
        }
    }
    if let Some(bias) = bias {
        for (k, v) in out.data_mut().iter_mut().enumerate() {
            *v += bias.data()[(k / (t * n)) % c_out];
        }
    }
    out
}

pub fn partition_index(p: Partition) -> usize {
    p.index()
}

/// Draws up to `per_tensor` coordinates from each tensor, excluding tensors
/// for which `skip` returns true.
pub fn sample_coords(
    sizes: &[usize],
    per_tensor: usize,
    skip: impl Fn(usize) -> bool,
    rng: &mut impl Rng,
) -> Vec<Vec<usize>> {
    sizes
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            if skip(k) {
                return Vec::new();
            }
            let mut all: Vec<usize> = (0..n).collect();
            all.shuffle(rng);
            all.truncate(per_tensor);
            all.sort_unstable();
            all
        })
        .collect()
}

/// Finite-difference check of `Σ weights ⊙ f(x, params)` with respect to
/// the input and every parameter in `store`.
///
/// `skip_param` lets callers drop parameters whose gradient is structurally
/// zero in the chosen mode (a bias feeding a batch-statistics norm).
pub fn check_store<F>(
    store: &ParamStore<f64>,
    x: &Tensor<f64>,
    mode: Mode,
    per_tensor: usize,
    seed: u64,
    skip_param: impl Fn(&str) -> bool,
    forward: F,
) -> GradCheckReport
where
    F: Fn(&mut Ctx<'_, f64>, Var) -> tagcn::Result<Var>,
{
    let mut r = rng(seed ^ 0x5eed);
    let mut points = vec![x.clone()];
    points.extend(store.iter().map(|p| p.value.clone()));
    let names: Vec<String> = store.iter().map(|p| p.name.clone()).collect();
    let sizes: Vec<usize> = points.iter().map(|p| p.numel()).collect();
    let coords = sample_coords(&sizes, per_tensor, |k| k > 0 && skip_param(&names[k - 1]), &mut r);

    // output shape is needed for the projection weights
    let out_shape = {
        let mut tape = Tape::new();
        let params = store.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let mut ctx = Ctx::from_vars(&mut tape, params, store, mode);
        let y = forward(&mut ctx, xv).unwrap();
        ctx.tape.value(y).shape().to_vec()
    };
    let proj = randn(&out_shape, &mut r);
    grad_check_many(&points, Some(&coords), 1e-5, |tape: &mut Tape<f64>, vars: &[Var]| {
        let mut ctx = Ctx::from_vars(tape, vars[1..].to_vec(), store, mode);
        let y = forward(&mut ctx, vars[0])?;
        let w = ctx.tape.constant(proj.clone());
        let prod = ctx.tape.mul(y, w)?;
        Ok(ctx.tape.sum(prod))
    })
    .unwrap()
}

/// Sets every batch-norm running statistic to the batch statistics of one
/// train-mode pass over `x`, so eval-mode activations are normalized.
pub fn calibrate(net: &mut tagcn::model::Network<f64>, x: &Tensor<f64>) {
    let mut tape = Tape::new();
    let mut ctx = Ctx::bind(&mut tape, net.store(), Mode::Train);
    let xv = ctx.tape.constant(x.clone());
    net.forward_with(&mut ctx, xv, None).unwrap();
    let updates = ctx.take_updates();
    for mut u in updates {
        u.momentum = 1.0;
        u.apply(net.store_mut());
    }
}
