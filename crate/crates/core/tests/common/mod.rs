//! Independent reference implementations shared by the integration tests.
//! Nothing here calls into the kernels under test.

#![allow(dead_code)]

use cephalo_core::heatmap::{LandmarkSet, Point};
use cephalo_core::tensor::{Parameterized, Tape, Tensor, Var};
use cephalo_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Direct seven-loop cross-correlation with zero padding and floor extents.
pub fn naive_conv2d(x: &Tensor, k: &Tensor, bias: Option<&[f64]>, stride: usize, pad: usize) -> Tensor {
    let [b, cin, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let [cout, _, kh, kw] = [k.shape()[0], k.shape()[1], k.shape()[2], k.shape()[3]];
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let xv = x.data();
    let kv = k.data();
    let mut out = vec![0.0; b * cout * oh * ow];
    for n in 0..b {
        for o in 0..cout {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = bias.map_or(0.0, |bb| bb[o]);
                    for c in 0..cin {
                        for u in 0..kh {
                            for v in 0..kw {
                                let yy = (i * stride + u) as isize - pad as isize;
                                let xx = (j * stride + v) as isize - pad as isize;
                                if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                                    continue;
                                }
                                let xi = ((n * cin + c) * h + yy as usize) * w + xx as usize;
                                let ki = ((o * cin + c) * kh + u) * kw + v;
                                acc += xv[xi] * kv[ki];
                            }
                        }
                    }
                    out[((n * cout + o) * oh + i) * ow + j] = acc;
                }
            }
        }
    }
    Tensor::new(&[b, cout, oh, ow], out).unwrap()
}

/// `bias + sum_q conv(x^q, W_q)` computed term by term.
pub fn naive_selfonn(x: &Tensor, banks: &[Tensor], bias: &[f64], stride: usize, pad: usize) -> Tensor {
    let mut total: Option<Tensor> = None;
    for (q, k) in banks.iter().enumerate() {
        let xq = Tensor::from_fn(x.shape(), |i| x.data()[i].powi(q as i32 + 1));
        let term = naive_conv2d(&xq, k, (q == 0).then_some(bias), stride, pad);
        total = Some(match total {
            None => term,
            Some(t) => Tensor::from_fn(t.shape(), |i| t.data()[i] + term.data()[i]),
        });
    }
    total.unwrap()
}

pub fn naive_upsample_nearest(x: &Tensor, f: usize) -> Tensor {
    let s = x.shape();
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    let mut out = Vec::with_capacity(b * c * h * w * f * f);
    for plane in 0..b * c {
        for i in 0..h * f {
            for j in 0..w * f {
                out.push(x.data()[(plane * h + i / f) * w + j / f]);
            }
        }
    }
    Tensor::new(&[b, c, h * f, w * f], out).unwrap()
}

/// Half-pixel bilinear upsampling with edge clamping, evaluated pointwise.
pub fn naive_upsample_bilinear(x: &Tensor, f: usize) -> Tensor {
    let s = x.shape();
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    let src = |len: usize, o: usize| -> (usize, usize, f64) {
        let p = ((o as f64 + 0.5) / f as f64 - 0.5).clamp(0.0, (len - 1) as f64);
        let lo = p.floor() as usize;
        let hi = (lo + 1).min(len - 1);
        (lo, hi, p - lo as f64)
    };
    let mut out = Vec::with_capacity(b * c * h * w * f * f);
    for plane in 0..b * c {
        let at = |i: usize, j: usize| x.data()[(plane * h + i) * w + j];
        for i in 0..h * f {
            let (y0, y1, ty) = src(h, i);
            for j in 0..w * f {
                let (x0, x1, tx) = src(w, j);
                let top = at(y0, x0) * (1.0 - tx) + at(y0, x1) * tx;
                let bot = at(y1, x0) * (1.0 - tx) + at(y1, x1) * tx;
                out.push(top * (1.0 - ty) + bot * ty);
            }
        }
    }
    Tensor::new(&[b, c, h * f, w * f], out).unwrap()
}

pub fn add(a: &Tensor, b: &Tensor) -> Tensor {
    Tensor::from_fn(a.shape(), |i| a.data()[i] + b.data()[i])
}

pub fn tanh(a: &Tensor) -> Tensor {
    Tensor::from_fn(a.shape(), |i| a.data()[i].tanh())
}

/// Largest relative disagreement between analytic and central-difference
/// gradients, with an absolute floor on the denominator.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-7)
}

/// Which elements of a tensor to probe.
#[derive(Clone, Copy, Debug)]
pub enum Probe {
    All,
    Sample(usize),
}

/// Central-difference gradient check of `mse(forward(module, inputs), target)`
/// with respect to every module parameter and every input. Returns the worst
/// relative error and the number of probed scalars.
pub fn grad_check<M: Parameterized>(
    module: &mut M,
    inputs: &[Tensor],
    forward: impl Fn(&M, &mut Tape, &[Var]) -> Result<Var>,
    probe: Probe,
    seed: u64,
) -> (f64, usize) {
    let h = 1e-5;
    let mut inputs: Vec<Tensor> = inputs.iter().map(|t| t.clone().requiring_grad()).collect();
    let target_for = |shape: &[usize]| uniform(shape, -0.5, 0.5, &mut rng(seed ^ 0xACE));
    let loss = |m: &M, xs: &[Tensor]| -> f64 {
        let mut tape = Tape::new().with_finite_checks(true);
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x)).collect();
        let y = forward(m, &mut tape, &vars).unwrap();
        let target = target_for(tape.shape(y));
        let t = tape.leaf(&target);
        let l = tape.mse(y, t).unwrap();
        tape.value(l)[0]
    };

    let mut tape = Tape::new().with_finite_checks(true);
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x)).collect();
    let y = forward(module, &mut tape, &vars).unwrap();
    let target = target_for(tape.shape(y));
    let t = tape.leaf(&target);
    let l = tape.mse(y, t).unwrap();
    let grads = tape.backward(l).unwrap();
    let param_grads: Vec<Vec<f64>> = module
        .params()
        .iter()
        .map(|p| grads.for_tensor(p).expect("parameter on tape").to_vec())
        .collect();
    let input_grads: Vec<Vec<f64>> = vars.iter().map(|&v| grads.get(v).unwrap().to_vec()).collect();

    let mut pick = rng(seed);
    let mut indices = |len: usize| -> Vec<usize> {
        match probe {
            Probe::All => (0..len).collect(),
            Probe::Sample(n) => (0..n.min(len)).map(|_| pick.random_range(0..len)).collect(),
        }
    };
    let mut worst = 0.0_f64;
    let mut count = 0;
    let total: usize = module.params().iter().map(|p| p.len()).sum();
    // Sampled probes are spread over the flat parameter vector.
    let param_targets: Vec<(usize, usize)> = match probe {
        Probe::All => (0..param_grads.len())
            .flat_map(|p| (0..param_grads[p].len()).map(move |e| (p, e)))
            .collect(),
        Probe::Sample(_) => {
            let sizes: Vec<usize> = param_grads.iter().map(Vec::len).collect();
            indices(total)
                .into_iter()
                .map(|mut flat| {
                    let mut p = 0;
                    while flat >= sizes[p] {
                        flat -= sizes[p];
                        p += 1;
                    }
                    (p, flat)
                })
                .collect()
        }
    };
    for (p, e) in param_targets {
        let orig = module.params()[p].data()[e];
        module.params_mut()[p].data_mut()[e] = orig + h;
        let up = loss(module, &inputs);
        module.params_mut()[p].data_mut()[e] = orig - h;
        let down = loss(module, &inputs);
        module.params_mut()[p].data_mut()[e] = orig;
        worst = worst.max(rel_err(param_grads[p][e], (up - down) / (2.0 * h)));
        count += 1;
    }
    for i in 0..inputs.len() {
        for e in indices(inputs[i].len()) {
            let orig = inputs[i].data()[e];
            inputs[i].data_mut()[e] = orig + h;
            let up = loss(module, &inputs);
            inputs[i].data_mut()[e] = orig - h;
            let down = loss(module, &inputs);
            inputs[i].data_mut()[e] = orig;
            worst = worst.max(rel_err(input_grads[i][e], (up - down) / (2.0 * h)));
            count += 1;
        }
    }
    (worst, count)
}

/// A module without parameters, for checking bare tape operations.
pub struct NoParams;

impl Parameterized for NoParams {
    fn params(&self) -> Vec<&Tensor> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        Vec::new()
    }
}

/// Random landmark set with points spread over `[0, extent)`.
pub fn random_set(rng: &mut impl Rng, extent: f64, spacing: f64) -> LandmarkSet {
    let pts = (0..19)
        .map(|_| Point::new(rng.random_range(0.0..extent), rng.random_range(0.0..extent)))
        .collect();
    LandmarkSet::new(pts, spacing).unwrap()
}

pub fn jitter_set(rng: &mut impl Rng, base: &LandmarkSet, amount: f64) -> LandmarkSet {
    base.map(|p| {
        Point::new(
            p.x + rng.random_range(-amount..amount),
            p.y + rng.random_range(-amount..amount),
        )
    })
    .unwrap()
}

pub mod metric_oracle {
    use super::*;

    pub fn radial(pred: &LandmarkSet, gt: &LandmarkSet) -> Vec<f64> {
        let s = gt.pixel_spacing_mm();
        (0..19)
            .map(|k| {
                let (a, b) = (pred.points()[k], gt.points()[k]);
                (((a.x - b.x) * s).powi(2) + ((a.y - b.y) * s).powi(2)).sqrt()
            })
            .collect()
    }

    /// Two-pass mean and population standard deviation.
    pub fn mre_sd(e: &[f64]) -> (f64, f64) {
        let mut sum = 0.0;
        for v in e {
            sum += v;
        }
        let mean = sum / e.len() as f64;
        let mut ss = 0.0;
        for v in e {
            ss += (v - mean) * (v - mean);
        }
        (mean, (ss / e.len() as f64).sqrt())
    }

    pub fn sdr(e: &[f64], t: f64) -> f64 {
        let mut hits = 0usize;
        for v in e {
            if *v <= t {
                hits += 1;
            }
        }
        hits as f64 / e.len() as f64
    }

    pub fn nme(pred: &LandmarkSet, gt: &LandmarkSet) -> f64 {
        let (l1, l2) = (gt.points()[0], gt.points()[1]);
        let d = ((l1.x - l2.x).powi(2) + (l1.y - l2.y).powi(2)).sqrt();
        let mut total = 0.0;
        for k in 0..19 {
            let (a, b) = (pred.points()[k], gt.points()[k]);
            total += ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt();
        }
        total / 19.0 / d
    }

    pub fn ipe(pred: &LandmarkSet, gt: &LandmarkSet) -> f64 {
        radial(pred, gt).iter().sum::<f64>() / 19.0
    }
}

pub mod geometry_oracle {
    use super::*;

    /// Law of cosines on the triangle `p v q`, angle at `v` in degrees.
    pub fn angle_at(p: Point, v: Point, q: Point) -> f64 {
        let a = p.distance(v);
        let b = q.distance(v);
        let c = p.distance(q);
        ((a * a + b * b - c * c) / (2.0 * a * b)).clamp(-1.0, 1.0).acos().to_degrees()
    }

    /// Acute angle between two undirected lines from their direction angles.
    pub fn line_angle(a1: Point, a2: Point, b1: Point, b2: Point) -> f64 {
        let ta = (a2.y - a1.y).atan2(a2.x - a1.x);
        let tb = (b2.y - b1.y).atan2(b2.x - b1.x);
        let mut d = (ta - tb).abs().to_degrees() % 180.0;
        if d > 90.0 {
            d = 180.0 - d;
        }
        d
    }
}
