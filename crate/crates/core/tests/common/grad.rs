//! Finite-difference gradient cases shared by the gradient and acceptance suites.
//!
//! Each case pairs a graph-built scalar function with its 64-bit oracle
//! replica. Tensor-valued ops are projected to scalars by a fixed random
//! weighting so every output element contributes.

#![allow(dead_code)]

use super::*;
use mtgan::losses;
use mtgan::{Graph, Result, Tensor, Var};

pub type GraphFn = Box<dyn for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>>;
pub type OracleFn = Box<dyn Fn(&[T64]) -> f64>;

pub struct Case {
    pub name: String,
    pub inputs: Vec<Tensor>,
    pub graph: GraphFn,
    pub oracle: OracleFn,
}

pub struct Report {
    pub name: String,
    pub value_err: f64,
    pub max_rel_err: f64,
    pub checked: usize,
}

pub const FD_STEP: f64 = 1e-3;

pub fn run_case(case: &Case) -> Report {
    let g = Graph::new();
    let vars: Vec<Var<'_>> = case.inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = (case.graph)(&g, &vars).unwrap_or_else(|e| panic!("{}: {e}", case.name));
    g.backward(loss).unwrap();
    let inputs64: Vec<T64> = case.inputs.iter().map(T64::from).collect();
    let reference = (case.oracle)(&inputs64);
    let value = loss.item().unwrap() as f64;
    let value_err = (value - reference).abs() / reference.abs().max(1.0);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (i, v) in vars.iter().enumerate() {
        let fd = fd_grad(&*case.oracle, &inputs64, i, FD_STEP);
        let analytic = v.grad().unwrap_or_else(|| Tensor::zeros(v.shape()));
        worst = worst.max(max_rel_err(analytic.data(), &fd));
        checked += fd.len();
    }
    Report {
        name: case.name.clone(),
        value_err,
        max_rel_err: worst,
        checked,
    }
}

fn project<'g>(out: Var<'g>, r: &Tensor) -> Result<Var<'g>> {
    Ok(out.mul(out.graph().constant(r.clone()))?.sum())
}

fn shape_tag(s: &[usize]) -> String {
    s.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

fn pointwise(
    name: &str,
    seed: u64,
    shape: &[usize],
    input: Tensor,
    gf: fn(Var<'_>) -> Var<'_>,
    of: fn(f64) -> f64,
) -> Case {
    let mut r = rng(seed ^ 0xA5A5);
    let proj = rand_tensor(&mut r, shape, -1.0, 1.0);
    let p64 = T64::from(&proj);
    Case {
        name: format!("{name} {}", shape_tag(shape)),
        inputs: vec![input],
        graph: Box::new(move |_, v| project(gf(v[0]), &proj)),
        oracle: Box::new(move |x| x[0].map(of).dot(&p64)),
    }
}

fn pointwise_cases(cases: &mut Vec<Case>) {
    let shapes: [&[usize]; 2] = [&[2, 3, 4, 5], &[1, 1, 7, 3]];
    for (k, shape) in shapes.iter().enumerate() {
        let seed = 100 + k as u64;
        let mut r = rng(seed);
        let any = || rand_tensor(&mut rng(seed + 7), shape, -2.0, 2.0);
        let kinky = rand_away_from_zero(&mut r, shape, 0.05, 2.0);
        let positive = rand_tensor(&mut r, shape, 0.2, 3.0);
        cases.push(pointwise("abs", seed, shape, kinky.clone(), |v| v.abs(), f64::abs));
        cases.push(pointwise("relu", seed, shape, kinky.clone(), |v| v.relu(), |x| x.max(0.0)));
        cases.push(pointwise(
            "leaky_relu",
            seed,
            shape,
            kinky,
            |v| v.leaky_relu(0.2),
            |x| if x > 0.0 { x } else { 0.2 * x },
        ));
        cases.push(pointwise("exp", seed, shape, any(), |v| v.exp(), f64::exp));
        cases.push(pointwise("log", seed, shape, positive, |v| v.log(), f64::ln));
        cases.push(pointwise("tanh", seed, shape, any(), |v| v.tanh(), f64::tanh));
        cases.push(pointwise("sigmoid", seed, shape, any(), |v| v.sigmoid(), sigmoid));
        cases.push(pointwise("softplus", seed, shape, any(), |v| v.softplus(), softplus));
        cases.push(pointwise("square", seed, shape, any(), |v| v.square(), |x| x * x));
        cases.push(pointwise(
            "affine",
            seed,
            shape,
            any(),
            |v| v.scale(-1.5).add_scalar(0.25).neg(),
            |x| -(x * -1.5 + 0.25),
        ));
    }
}

fn binary_cases(cases: &mut Vec<Case>) {
    let shape = [2, 2, 3, 4];
    let mut r = rng(200);
    let a = rand_tensor(&mut r, &shape, -2.0, 2.0);
    let b = rand_tensor(&mut r, &shape, 0.5, 2.0);
    let proj = rand_tensor(&mut r, &shape, -1.0, 1.0);
    type G = for<'g> fn(Var<'g>, Var<'g>) -> Result<Var<'g>>;
    let ops: [(&str, G, fn(f64, f64) -> f64); 4] = [
        ("add", |x, y| x.add(y), |x, y| x + y),
        ("sub", |x, y| x.sub(y), |x, y| x - y),
        ("mul", |x, y| x.mul(y), |x, y| x * y),
        ("div", |x, y| x.div(y), |x, y| x / y),
    ];
    for (name, gf, of) in ops {
        let (p, p64) = (proj.clone(), T64::from(&proj));
        cases.push(Case {
            name: format!("{name} {}", shape_tag(&shape)),
            inputs: vec![a.clone(), b.clone()],
            graph: Box::new(move |_, v| project(gf(v[0], v[1])?, &p)),
            oracle: Box::new(move |x| x[0].zip(&x[1], of).dot(&p64)),
        });
    }
    cases.push(Case {
        name: "sum+mean+reshape".into(),
        inputs: vec![a.clone()],
        graph: Box::new(|_, v| {
            let s = v[0].square().sum();
            let m = v[0].reshape(vec![4, 12])?.exp().mean();
            s.add(m)
        }),
        oracle: Box::new(|x| x[0].map(|v| v * v).sum() + x[0].map(f64::exp).mean()),
    });
}

fn conv_cases(cases: &mut Vec<Case>) {
    // (n, cin, h, w, cout, k, stride, pad, bias)
    let configs = [
        (2, 3, 8, 8, 4, 3, 2, 1, true),
        (1, 2, 7, 6, 3, 3, 1, 0, true),
        (1, 3, 5, 5, 2, 1, 1, 0, false),
        (2, 2, 9, 9, 3, 4, 2, 1, true),
        (1, 2, 6, 7, 2, 7, 1, 3, false),
    ];
    for (i, &(n, cin, h, w, cout, k, s, p, bias)) in configs.iter().enumerate() {
        let mut r = rng(300 + i as u64);
        let x = rand_tensor(&mut r, &[n, cin, h, w], -1.0, 1.0);
        let wt = rand_tensor(&mut r, &[cout, cin, k, k], -0.5, 0.5);
        let oh = (h + 2 * p - k) / s + 1;
        let ow = (w + 2 * p - k) / s + 1;
        let proj = rand_tensor(&mut r, &[n, cout, oh, ow], -1.0, 1.0);
        let p64 = T64::from(&proj);
        let mut inputs = vec![x, wt];
        if bias {
            inputs.push(rand_tensor(&mut r, &[cout], -0.5, 0.5));
        }
        cases.push(Case {
            name: format!("conv2d {n}x{cin}x{h}x{w} k{k} s{s} p{p}"),
            inputs,
            graph: Box::new(move |_, v| project(v[0].conv2d(v[1], v.get(2).copied(), s, p)?, &proj)),
            oracle: Box::new(move |x| conv2d(&x[0], &x[1], x.get(2), s, p).dot(&p64)),
        });
    }
}

fn conv_transpose_cases(cases: &mut Vec<Case>) {
    let configs = [
        (1, 2, 3, 3, 3, 4, 2, 1, true),
        (2, 3, 4, 4, 2, 3, 1, 1, false),
        (1, 1, 2, 3, 2, 2, 2, 0, true),
    ];
    for (i, &(n, cin, h, w, cout, k, s, p, bias)) in configs.iter().enumerate() {
        let mut r = rng(400 + i as u64);
        let x = rand_tensor(&mut r, &[n, cin, h, w], -1.0, 1.0);
        let wt = rand_tensor(&mut r, &[cin, cout, k, k], -0.5, 0.5);
        let oh = (h - 1) * s + k - 2 * p;
        let ow = (w - 1) * s + k - 2 * p;
        let proj = rand_tensor(&mut r, &[n, cout, oh, ow], -1.0, 1.0);
        let p64 = T64::from(&proj);
        let mut inputs = vec![x, wt];
        if bias {
            inputs.push(rand_tensor(&mut r, &[cout], -0.5, 0.5));
        }
        cases.push(Case {
            name: format!("conv_transpose2d {n}x{cin}x{h}x{w} k{k} s{s} p{p}"),
            inputs,
            graph: Box::new(move |_, v| {
                project(v[0].conv_transpose2d(v[1], v.get(2).copied(), s, p)?, &proj)
            }),
            oracle: Box::new(move |x| conv_transpose2d(&x[0], &x[1], x.get(2), s, p).dot(&p64)),
        });
    }
}

fn spatial_cases(cases: &mut Vec<Case>) {
    let pools = [
        ([1, 2, 8, 8], (2, 2), (2, 2)),
        ([2, 1, 9, 9], (3, 3), (3, 3)),
        ([1, 1, 6, 8], (2, 4), (1, 2)),
    ];
    for (i, (shape, k, s)) in pools.into_iter().enumerate() {
        let mut r = rng(500 + i as u64);
        let x = rand_tensor(&mut r, &shape, -1.0, 1.0);
        let out = [shape[0], shape[1], (shape[2] - k.0) / s.0 + 1, (shape[3] - k.1) / s.1 + 1];
        let proj = rand_tensor(&mut r, &out, -1.0, 1.0);
        let p64 = T64::from(&proj);
        cases.push(Case {
            name: format!("avg_pool2d {} k{k:?} s{s:?}", shape_tag(&shape)),
            inputs: vec![x],
            graph: Box::new(move |_, v| project(v[0].avg_pool2d(k, s)?, &proj)),
            oracle: Box::new(move |x| avg_pool(&x[0], k, s).dot(&p64)),
        });
    }

    for (i, (shape, pad)) in [([1, 2, 5, 6], 2), ([2, 1, 4, 4], 1)].into_iter().enumerate() {
        let mut r = rng(520 + i as u64);
        let x = rand_tensor(&mut r, &shape, -1.0, 1.0);
        let out = [shape[0], shape[1], shape[2] + 2 * pad, shape[3] + 2 * pad];
        let proj = rand_tensor(&mut r, &out, -1.0, 1.0);
        let p64 = T64::from(&proj);
        cases.push(Case {
            name: format!("reflect_pad {} p{pad}", shape_tag(&shape)),
            inputs: vec![x],
            graph: Box::new(move |_, v| project(v[0].reflect_pad(pad)?, &proj)),
            oracle: Box::new(move |x| reflect_pad(&x[0], pad).dot(&p64)),
        });
    }

    for (i, (shape, sc)) in [([1, 2, 3, 4], 2), ([2, 1, 2, 2], 3)].into_iter().enumerate() {
        let mut r = rng(540 + i as u64);
        let x = rand_tensor(&mut r, &shape, -1.0, 1.0);
        let out = [shape[0], shape[1], shape[2] * sc, shape[3] * sc];
        let proj = rand_tensor(&mut r, &out, -1.0, 1.0);
        let p64 = T64::from(&proj);
        cases.push(Case {
            name: format!("upsample_nearest {} x{sc}", shape_tag(&shape)),
            inputs: vec![x],
            graph: Box::new(move |_, v| project(v[0].upsample_nearest(sc)?, &proj)),
            oracle: Box::new(move |x| upsample(&x[0], sc).dot(&p64)),
        });
    }

    let mut r = rng(560);
    let a = rand_tensor(&mut r, &[2, 3, 5, 6], -1.0, 1.0);
    let b = rand_tensor(&mut r, &[2, 1, 5, 6], -1.0, 1.0);
    let proj = rand_tensor(&mut r, &[2, 1, 3, 4], -1.0, 1.0);
    let p64 = T64::from(&proj);
    cases.push(Case {
        name: "concat+crop+channel_mean".into(),
        inputs: vec![a, b],
        graph: Box::new(move |_, v| {
            let c = Var::concat_channels(&[v[0], v[1], v[0]])?;
            project(c.square().channel_mean()?.crop(1, 3, 2, 4)?, &proj)
        }),
        oracle: Box::new(move |x| {
            let c = concat(&[&x[0], &x[1], &x[0]]).map(|v| v * v);
            crop(&channel_mean(&c), 1, 3, 2, 4).dot(&p64)
        }),
    });

    for (i, (shape, eps)) in [([2, 3, 4, 5], 1e-5f32), ([1, 2, 6, 3], 1e-3)].into_iter().enumerate() {
        let mut r = rng(580 + i as u64);
        let c = shape[1];
        let x = rand_tensor(&mut r, &shape, -1.0, 1.0);
        let gamma = rand_tensor(&mut r, &[c], 0.5, 1.5);
        let beta = rand_tensor(&mut r, &[c], -0.5, 0.5);
        let proj = rand_tensor(&mut r, &shape, -1.0, 1.0);
        let p64 = T64::from(&proj);
        cases.push(Case {
            name: format!("instance_norm {} eps{eps}", shape_tag(&shape)),
            inputs: vec![x, gamma, beta],
            graph: Box::new(move |_, v| project(v[0].instance_norm(v[1], v[2], eps)?, &proj)),
            oracle: Box::new(move |x| instance_norm(&x[0], &x[1], &x[2], eps as f64).dot(&p64)),
        });
    }
}

fn loss_cases(cases: &mut Vec<Case>) {
    for (i, (rs, fs)) in [([2, 1, 3, 3], [2, 1, 3, 3]), ([1, 1, 4, 2], [3, 1, 2, 2])]
        .into_iter()
        .enumerate()
    {
        let mut r = rng(600 + i as u64);
        let real = rand_tensor(&mut r, &rs, -3.0, 3.0);
        let fake = rand_tensor(&mut r, &fs, -3.0, 3.0);
        cases.push(Case {
            name: format!("gan_loss_d {}", shape_tag(&rs)),
            inputs: vec![real.clone(), fake.clone()],
            graph: Box::new(|_, v| losses::gan_loss_d(v[0], v[1])),
            oracle: Box::new(|x| gan_d(&x[0], &x[1])),
        });
        cases.push(Case {
            name: format!("gan_loss_g {}", shape_tag(&fs)),
            inputs: vec![fake.clone()],
            graph: Box::new(|_, v| Ok(losses::gan_loss_g(v[0]))),
            oracle: Box::new(|x| gan_g(&x[0])),
        });
        cases.push(Case {
            name: format!("lsq d+g {}", shape_tag(&rs)),
            inputs: vec![real, fake],
            graph: Box::new(|_, v| {
                let d = losses::GanVariant::LeastSquares.d_loss(v[0], v[1])?;
                d.add(losses::GanVariant::LeastSquares.g_loss(v[1]))
            }),
            oracle: Box::new(|x| lsq_d(&x[0], &x[1]) + lsq_g(&x[1])),
        });
    }

    for (i, shape) in [[2, 3, 4, 4], [1, 1, 5, 3]].into_iter().enumerate() {
        let mut r = rng(620 + i as u64);
        let x = rand_tensor(&mut r, &shape, -1.0, 1.0);
        let y = rand_tensor(&mut r, &shape, -1.0, 1.0);
        let xr = offset(&x, &rand_away_from_zero(&mut r, &shape, 0.02, 0.5));
        let yr = offset(&y, &rand_away_from_zero(&mut r, &shape, 0.02, 0.5));
        cases.push(Case {
            name: format!("cycle_loss {}", shape_tag(&shape)),
            inputs: vec![x, xr, y, yr],
            graph: Box::new(|_, v| losses::cycle_loss(v[0], v[1], v[2], v[3])),
            oracle: Box::new(|x| cycle(&x[0], &x[1], &x[2], &x[3])),
        });
    }

    for (i, shape) in [[1, 2, 12, 13], [2, 1, 11, 11]].into_iter().enumerate() {
        let mut r = rng(640 + i as u64);
        let a = rand_tensor(&mut r, &shape, -1.0, 1.0);
        let b = offset(&a, &rand_tensor(&mut r, &shape, -0.6, 0.6));
        cases.push(Case {
            name: format!("ssim {}", shape_tag(&shape)),
            inputs: vec![a.clone(), b.clone()],
            graph: Box::new(|_, v| losses::ssim(v[0], v[1])),
            oracle: Box::new(|x| ssim(&x[0], &x[1])),
        });
        let c = rand_tensor(&mut r, &shape, -1.0, 1.0);
        let d = rand_tensor(&mut r, &shape, -1.0, 1.0);
        cases.push(Case {
            name: format!("rec_loss {}", shape_tag(&shape)),
            inputs: vec![a, b, c, d],
            graph: Box::new(|_, v| losses::rec_loss(v[0], v[1], v[2], v[3])),
            oracle: Box::new(|x| rec(&x[0], &x[1], &x[2], &x[3])),
        });
    }

    for (i, shape) in [[2, 1, 5, 6], [1, 1, 8, 8]].into_iter().enumerate() {
        let mut r = rng(660 + i as u64);
        let pred = rand_tensor(&mut r, &shape, -1.0, 1.0);
        let sparse = Tensor::from_fn(shape.to_vec(), |_| {
            if r.random_bool(0.3) {
                r.random_range(0.1..1.0)
            } else {
                0.0
            }
        });
        let s64 = T64::from(&sparse);
        cases.push(Case {
            name: format!("depth_loss {}", shape_tag(&shape)),
            inputs: vec![pred],
            graph: Box::new(move |g, v| {
                Ok(losses::depth_loss(v[0], g.constant(sparse.clone()))?.value)
            }),
            oracle: Box::new(move |x| depth_loss(&x[0], &s64)),
        });
    }

    for (i, (ds, gc)) in [([1, 1, 5, 6], 3), ([2, 1, 4, 4], 1)].into_iter().enumerate() {
        let (d, guide) = smoothness_inputs(700 + i as u64, &ds, gc);
        cases.push(Case {
            name: format!("smoothness_loss {} guide{gc}", shape_tag(&ds)),
            inputs: vec![d, guide],
            graph: Box::new(|_, v| losses::smoothness_loss(v[0], v[1])),
            oracle: Box::new(|x| smoothness(&x[0], &x[1])),
        });
    }
}

fn offset(a: &Tensor, d: &Tensor) -> Tensor {
    Tensor::from_fn(a.shape().to_vec(), |i| a.data()[i] + d.data()[i])
}

/// Draws depth/guide pairs until every second difference and every guide
/// forward difference is at least 0.02 from the |·| kink.
fn smoothness_inputs(seed: u64, ds: &[usize; 4], gc: usize) -> (Tensor, Tensor) {
    let mut r = rng(seed);
    let gs = [ds[0], gc, ds[2], ds[3]];
    loop {
        let d = rand_tensor(&mut r, ds, -1.0, 1.0);
        let g = rand_tensor(&mut r, &gs, -1.0, 1.0);
        let (d64, g64) = (T64::from(&d), T64::from(&g));
        let (n, _, h, w) = d64.d4();
        let mut ok = true;
        for b in 0..n {
            for y in 0..h {
                for x in 0..w {
                    if x + 2 < w {
                        let v = d64.at(b, 0, y, x + 2) - 2.0 * d64.at(b, 0, y, x + 1) + d64.at(b, 0, y, x);
                        ok &= v.abs() > 0.02;
                    }
                    if y + 2 < h {
                        let v = d64.at(b, 0, y + 2, x) - 2.0 * d64.at(b, 0, y + 1, x) + d64.at(b, 0, y, x);
                        ok &= v.abs() > 0.02;
                    }
                    for c in 0..gc {
                        if x + 1 < w {
                            ok &= (g64.at(b, c, y, x + 1) - g64.at(b, c, y, x)).abs() > 0.02;
                        }
                        if y + 1 < h {
                            ok &= (g64.at(b, c, y + 1, x) - g64.at(b, c, y, x)).abs() > 0.02;
                        }
                    }
                }
            }
        }
        if ok {
            return (d, g);
        }
    }
}

fn composite_cases(cases: &mut Vec<Case>) {
    // pad → conv → norm → tanh → transpose-up → pool → concat → 1×1 conv → sigmoid
    let mut r = rng(800);
    let x = rand_tensor(&mut r, &[2, 2, 6, 6], -1.0, 1.0);
    let w1 = rand_tensor(&mut r, &[3, 2, 3, 3], -0.5, 0.5);
    let gamma = rand_tensor(&mut r, &[3], 0.5, 1.5);
    let beta = rand_tensor(&mut r, &[3], -0.3, 0.3);
    let w2 = rand_tensor(&mut r, &[3, 2, 4, 4], -0.5, 0.5);
    let w3 = rand_tensor(&mut r, &[1, 4, 1, 1], -1.0, 1.0);
    cases.push(Case {
        name: "composite generator-like chain".into(),
        inputs: vec![x, w1, gamma, beta, w2, w3],
        graph: Box::new(|_, v| {
            let h = v[0].reflect_pad(1)?.conv2d(v[1], None, 1, 0)?;
            let h = h.instance_norm(v[2], v[3], 1e-5)?.tanh();
            let up = h.conv_transpose2d(v[4], None, 2, 1)?;
            let down = up.avg_pool2d((2, 2), (2, 2))?;
            let cat = Var::concat_channels(&[down, v[0]])?;
            Ok(cat.conv2d(v[5], None, 1, 0)?.sigmoid().mean())
        }),
        oracle: Box::new(|x| {
            let h = conv2d(&reflect_pad(&x[0], 1), &x[1], None, 1, 0);
            let h = instance_norm(&h, &x[2], &x[3], 1e-5).map(f64::tanh);
            let up = conv_transpose2d(&h, &x[4], None, 2, 1);
            let down = avg_pool(&up, (2, 2), (2, 2));
            let cat = concat(&[&down, &x[0]]);
            conv2d(&cat, &x[5], None, 1, 0).map(sigmoid).mean()
        }),
    });

    // multi-scale pooling followed by adversarial and reconstruction losses
    let mut r = rng(801);
    let a = rand_tensor(&mut r, &[1, 1, 12, 12], -1.0, 1.0);
    let b = rand_tensor(&mut r, &[1, 1, 12, 12], -1.0, 1.0);
    let wd = rand_tensor(&mut r, &[1, 2, 4, 4], -0.5, 0.5);
    cases.push(Case {
        name: "composite pooling pyramid + losses".into(),
        inputs: vec![a, b, wd],
        graph: Box::new(|_, v| {
            let pooled = v[0].avg_pool2d((4, 4), (4, 4))?.upsample_nearest(4)?;
            let z = Var::concat_channels(&[v[0], pooled])?;
            let logits = z.conv2d(v[2], None, 2, 1)?;
            let s = losses::ssim(v[0].tanh(), v[1])?;
            losses::gan_loss_g(logits).add(s.neg())
        }),
        oracle: Box::new(|x| {
            let pooled = upsample(&avg_pool(&x[0], (4, 4), (4, 4)), 4);
            let z = concat(&[&x[0], &pooled]);
            let logits = conv2d(&z, &x[2], None, 2, 1);
            gan_g(&logits) - ssim(&x[0].map(f64::tanh), &x[1])
        }),
    });
}

pub fn all_cases() -> Vec<Case> {
    let mut cases = Vec::new();
    pointwise_cases(&mut cases);
    binary_cases(&mut cases);
    conv_cases(&mut cases);
    conv_transpose_cases(&mut cases);
    spatial_cases(&mut cases);
    loss_cases(&mut cases);
    composite_cases(&mut cases);
    cases
}
