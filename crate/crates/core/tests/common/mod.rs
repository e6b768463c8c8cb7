//! Independent reference implementations used by the integration and
//! acceptance tests. Nothing here calls into the library's numerics.
#![allow(dead_code)]

use mpq::{Activation, Batch, Layer, LayerKind, ModelGraph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gauss(r: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; keeps the oracle side free of the library's sampling code.
    let u1: f64 = r.random_range(f64::EPSILON..1.0);
    let u2: f64 = r.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Dense layers of the given widths with a random relu/tanh after each
/// hidden layer and a softmax head. `dims[0]` is the input width.
pub fn random_model(r: &mut ChaCha8Rng, dims: &[usize], acts: Option<Activation>) -> ModelGraph {
    let mut layers = Vec::new();
    for (i, w) in dims.windows(2).enumerate() {
        let scale = (1.5 / w[0] as f64).sqrt();
        let weights: Vec<f32> = (0..w[0] * w[1]).map(|_| (gauss(r) * scale) as f32).collect();
        let bias: Vec<f32> = (0..w[1]).map(|_| (gauss(r) * 0.3) as f32).collect();
        layers.push(Layer::dense(
            format!("fc{}", i + 1),
            Tensor::new(vec![w[1], w[0]], weights).unwrap(),
            Some(Tensor::new(vec![w[1]], bias).unwrap()),
        ));
        if i + 2 < dims.len() {
            let act = acts.unwrap_or(if r.random::<bool>() { Activation::Relu } else { Activation::Tanh });
            layers.push(Layer::activation(format!("act{}", i + 1), act));
        }
    }
    layers.push(Layer::head("loss"));
    ModelGraph::new(dims[0], layers).unwrap()
}

pub fn random_batch(r: &mut ChaCha8Rng, n: usize, dim: usize, classes: usize) -> Batch {
    let x: Vec<f32> = (0..n * dim).map(|_| gauss(r) as f32).collect();
    let y: Vec<usize> = (0..n).map(|_| r.random_range(0..classes)).collect();
    Batch::new(Tensor::new(vec![n, dim], x).unwrap(), y).unwrap()
}

#[derive(Clone, Copy)]
pub enum Op {
    Relu,
    Tanh,
}

#[derive(Clone)]
pub struct Dense64 {
    pub out: usize,
    pub inn: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    /// Input fake-quantization `(bits, alpha, hardware_int)`.
    pub act_quant: Option<(u8, f64, bool)>,
}

#[derive(Clone)]
pub enum Step {
    Dense(Dense64),
    Act(Op),
}

/// Straight-line f64 network.
#[derive(Clone)]
pub struct Net64 {
    pub steps: Vec<Step>,
}

pub struct Eval64 {
    pub loss: f64,
    pub correct: usize,
    /// Sign of every relu pre-activation, used to detect finite differences
    /// straddling a kink.
    pub relu_signs: Vec<bool>,
}

/// `round(clip(αx, −1, 1)·2^(b−1))·2^−(b−1)/α`, ties away from zero.
pub fn quantize64(x: f64, bits: u8, alpha: f64, hardware_int: bool) -> f64 {
    if bits >= 16 {
        return x;
    }
    let levels = 2f64.powi(bits as i32 - 1);
    let mut k = ((alpha * x).clamp(-1.0, 1.0) * levels).round();
    if hardware_int {
        k = k.min(levels - 1.0);
    }
    k / levels / alpha
}

impl Net64 {
    pub fn from_model(m: &ModelGraph) -> Self {
        let steps = m
            .layers()
            .iter()
            .filter_map(|l| match &l.kind {
                LayerKind::Dense { weights, bias, input_quant } => Some(Step::Dense(Dense64 {
                    out: weights.shape()[0],
                    inn: weights.shape()[1],
                    w: weights.data().iter().map(|&v| v as f64).collect(),
                    b: bias
                        .as_ref()
                        .map(|b| b.data().iter().map(|&v| v as f64).collect())
                        .unwrap_or_else(|| vec![0.0; weights.shape()[0]]),
                    act_quant: input_quant
                        .map(|q| (q.bits, q.scale as f64, q.grid == mpq::quantizer::GridMode::HardwareInt)),
                })),
                LayerKind::Activation(Activation::Relu) => Some(Step::Act(Op::Relu)),
                LayerKind::Activation(Activation::Tanh) => Some(Step::Act(Op::Tanh)),
                LayerKind::SoftmaxCrossEntropy => None,
            })
            .collect();
        Net64 { steps }
    }

    pub fn dense_mut(&mut self, windex: usize) -> &mut Dense64 {
        self.steps
            .iter_mut()
            .filter_map(|s| match s {
                Step::Dense(d) => Some(d),
                _ => None,
            })
            .nth(windex)
            .expect("weighted layer")
    }

    /// Logits for one input row; relu input signs are appended to `signs`.
    pub fn logits(&self, x: &[f32], signs: &mut Vec<bool>) -> Vec<f64> {
        let mut h: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        for s in &self.steps {
            h = match s {
                Step::Dense(d) => {
                    if let Some((bits, alpha, hw)) = d.act_quant {
                        // The library quantizes operands in f32.
                        h = h.iter().map(|&v| quantize64(v as f32 as f64, bits, alpha, hw)).collect();
                    }
                    (0..d.out).map(|o| d.b[o] + (0..d.inn).map(|i| d.w[o * d.inn + i] * h[i]).sum::<f64>()).collect()
                }
                Step::Act(Op::Relu) => {
                    signs.extend(h.iter().map(|&v| v > 0.0));
                    h.iter().map(|&v| v.max(0.0)).collect()
                }
                Step::Act(Op::Tanh) => h.iter().map(|v| v.tanh()).collect(),
            };
        }
        h
    }

    /// Argmax class, lowest index on ties.
    pub fn predict(&self, x: &[f32]) -> usize {
        let h = self.logits(x, &mut Vec::new());
        (1..h.len()).fold(0, |best, i| if h[i] > h[best] { i } else { best })
    }

    pub fn eval(&self, batch: &Batch) -> Eval64 {
        let mut loss = 0.0;
        let mut correct = 0;
        let mut relu_signs = Vec::new();
        for (r, &label) in batch.labels().iter().enumerate() {
            let h = self.logits(batch.inputs().row(r), &mut relu_signs);
            let m = h.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + h.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            loss += lse - h[label];
            let best = (1..h.len()).fold(0, |best, i| if h[i] > h[best] { i } else { best });
            correct += (best == label) as usize;
        }
        Eval64 { loss: loss / batch.len() as f64, correct, relu_signs }
    }
}

/// Gaussian inputs labelled by the model's own float predictions.
pub fn teacher_batch(r: &mut ChaCha8Rng, m: &ModelGraph, n: usize) -> Batch {
    let net = Net64::from_model(m);
    let dim = m.input_dim();
    let x: Vec<f32> = (0..n * dim).map(|_| gauss(r) as f32).collect();
    let y = x.chunks(dim).map(|row| net.predict(row)).collect();
    Batch::new(Tensor::new(vec![n, dim], x).unwrap(), y).unwrap()
}

/// Central differences of the loss in every weight of layer `windex`.
/// `None` when a perturbation moves any relu across its kink.
pub fn fd_gradient(net: &Net64, batch: &Batch, windex: usize, eps: f64) -> Option<Vec<f64>> {
    let base = net.eval(batch).relu_signs;
    let n = net.clone().dense_mut(windex).w.len();
    let mut g = Vec::with_capacity(n);
    for k in 0..n {
        let mut plus = net.clone();
        plus.dense_mut(windex).w[k] += eps;
        let mut minus = net.clone();
        minus.dense_mut(windex).w[k] -= eps;
        let (p, m) = (plus.eval(batch), minus.eval(batch));
        if p.relu_signs != base || m.relu_signs != base {
            return None;
        }
        g.push((p.loss - m.loss) / (2.0 * eps));
    }
    Some(g)
}

impl Net64 {
    /// Mean-loss gradient in the weights of layer `windex` by f64 backprop,
    /// with the relu sign pattern. Input quantization is ignored.
    pub fn grad(&self, batch: &Batch, windex: usize) -> (Vec<f64>, Vec<bool>) {
        let dense_pos: Vec<usize> =
            self.steps.iter().enumerate().filter(|(_, s)| matches!(s, Step::Dense(_))).map(|(i, _)| i).collect();
        let target = dense_pos[windex];
        let n = batch.len() as f64;
        let Step::Dense(td) = &self.steps[target] else { unreachable!() };
        let mut g = vec![0.0; td.w.len()];
        let mut signs = Vec::new();
        for (r, &label) in batch.labels().iter().enumerate() {
            let mut acts: Vec<Vec<f64>> = vec![batch.inputs().row(r).iter().map(|&v| v as f64).collect()];
            for s in &self.steps {
                let h = acts.last().unwrap();
                let next = match s {
                    Step::Dense(d) => (0..d.out)
                        .map(|o| d.b[o] + (0..d.inn).map(|i| d.w[o * d.inn + i] * h[i]).sum::<f64>())
                        .collect(),
                    Step::Act(Op::Relu) => {
                        signs.extend(h.iter().map(|&v| v > 0.0));
                        h.iter().map(|&v| v.max(0.0)).collect()
                    }
                    Step::Act(Op::Tanh) => h.iter().map(|v| v.tanh()).collect(),
                };
                acts.push(next);
            }
            let z = acts.last().unwrap();
            let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
            let sum: f64 = e.iter().sum();
            let mut delta: Vec<f64> =
                e.iter().enumerate().map(|(c, v)| (v / sum - (c == label) as u8 as f64) / n).collect();
            for (i, s) in self.steps.iter().enumerate().rev() {
                let (x, y) = (&acts[i], &acts[i + 1]);
                delta = match s {
                    Step::Dense(d) => {
                        if i == target {
                            for o in 0..d.out {
                                for k in 0..d.inn {
                                    g[o * d.inn + k] += delta[o] * x[k];
                                }
                            }
                            break;
                        }
                        (0..d.inn).map(|k| (0..d.out).map(|o| d.w[o * d.inn + k] * delta[o]).sum()).collect()
                    }
                    Step::Act(Op::Relu) => delta.iter().zip(x).map(|(d, &x)| if x > 0.0 { *d } else { 0.0 }).collect(),
                    Step::Act(Op::Tanh) => delta.iter().zip(y).map(|(d, y)| d * (1.0 - y * y)).collect(),
                };
            }
        }
        (g, signs)
    }
}

/// `H v ≈ (∇L(w + εv) − ∇L(w − εv)) / 2ε` from the f64 backprop oracle.
/// `None` when a perturbation moves any relu across its kink.
pub fn fd_hvp(net: &Net64, batch: &Batch, windex: usize, v: &[f64], eps: f64) -> Option<Vec<f64>> {
    let base = net.eval(batch).relu_signs;
    let shifted = |sign: f64| {
        let mut p = net.clone();
        for (w, vi) in p.dense_mut(windex).w.iter_mut().zip(v) {
            *w += sign * eps * vi;
        }
        p.grad(batch, windex)
    };
    let ((gp, sp), (gm, sm)) = (shifted(1.0), shifted(-1.0));
    if sp != base || sm != base {
        return None;
    }
    Some(gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * eps)).collect())
}

/// Element-wise relative error with a floor of `floor_frac · max|expected|`.
pub fn max_rel_err(actual: &[f64], expected: &[f64], floor_frac: f64) -> f64 {
    let scale = expected.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (floor_frac * scale).max(1e-12);
    actual.iter().zip(expected).map(|(a, e)| (a - e).abs() / e.abs().max(floor)).fold(0.0, f64::max)
}

/// Minimum number of rounding-direction flips that brings the channel's
/// summed error (grid units) within one half, by trying every subset.
/// Elements with zero error may move either way.
pub fn min_case_flips(errors: &[f64]) -> usize {
    let n = errors.len();
    let total: f64 = errors.iter().sum();
    let mut best = usize::MAX;
    for mask in 0u32..(1 << n) {
        let size = mask.count_ones() as usize;
        if size >= best {
            continue;
        }
        let mut s = total;
        let mut free = 0i64;
        for (i, &e) in errors.iter().enumerate() {
            if mask >> i & 1 == 1 {
                if e > 0.0 {
                    s -= 1.0;
                } else if e < 0.0 {
                    s += 1.0;
                } else {
                    free += 1;
                }
            }
        }
        // `free` unit moves reach any t in {−free, −free+2, .., free}.
        let fits = (-free..=free).step_by(2).any(|t| (s + t as f64).abs() <= 0.5 + 1e-9);
        if fits {
            best = size;
        }
    }
    best
}

/// Points not dominated by any other point, by pairwise comparison;
/// duplicates keep their first occurrence. Sorted by latency.
pub fn pareto_oracle(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, &(a, l)) in points.iter().enumerate() {
        let dominated = points.iter().any(|&(a2, l2)| a2 >= a && l2 <= l && (a2 > a || l2 < l));
        let dup = points[..i].contains(&(a, l));
        if !dominated && !dup {
            out.push((a, l));
        }
    }
    out.sort_by(|x, y| x.1.total_cmp(&y.1));
    out
}

/// Per level, the longest prefix of the surviving list that passes,
/// found by trying every length from the top.
pub fn linear_scan_prefix(n: usize, ordering: &[usize], palette: &[u8], passes: impl Fn(&[u8]) -> bool) -> Vec<u8> {
    let mut w = vec![palette[0]; n];
    let mut list = ordering.to_vec();
    for &bits in &palette[1..] {
        let mut keep = 0;
        for t in (1..=list.len()).rev() {
            let mut lw = w.clone();
            for &l in &list[..t] {
                lw[l] = bits;
            }
            if passes(&lw) {
                keep = t;
                break;
            }
        }
        for &l in &list[..keep] {
            w[l] = bits;
        }
        list.truncate(keep);
    }
    w
}

/// Small random problem for derivative checks: 1–3 hidden layers of width
/// 2–6, mixed relu/tanh, 2–4 classes.
pub fn small_problem(seed: u64) -> (ModelGraph, Batch) {
    let mut r = rng(seed);
    let depth = r.random_range(1..=3);
    let mut dims = vec![r.random_range(2..=5)];
    for _ in 0..depth {
        dims.push(r.random_range(2..=6));
    }
    let classes = r.random_range(2..=4);
    dims.push(classes);
    let m = random_model(&mut r, &dims, None);
    let n = r.random_range(3..=8);
    let b = random_batch(&mut r, n, dims[0], classes);
    (m, b)
}

/// Worst relative error of the library's gradient against central
/// differences over all layers, shrinking ε when a relu kink is crossed.
pub fn gradient_error(m: &ModelGraph, b: &Batch) -> f64 {
    let net = Net64::from_model(m);
    let mut worst = 0.0f64;
    for (wi, id) in m.weighted_ids().into_iter().enumerate() {
        let g: Vec<f64> = mpq::network::gradient(m, b, id).unwrap().data().iter().map(|&v| v as f64).collect();
        let fd = [1e-5, 1e-6, 1e-7].iter().find_map(|&e| fd_gradient(&net, b, wi, e)).expect("kink-free ε");
        worst = worst.max(max_rel_err(&g, &fd, 1e-2));
    }
    worst
}

/// Worst relative error of the library's HVP (random direction) against
/// the four-point difference oracle.
pub fn hvp_error(m: &ModelGraph, b: &Batch, seed: u64) -> f64 {
    let net = Net64::from_model(m);
    let mut r = rng(seed ^ 0x5eed);
    let mut worst = 0.0f64;
    for (wi, id) in m.weighted_ids().into_iter().enumerate() {
        let shape = m.layer_weights(id).unwrap().shape().to_vec();
        let v: Vec<f32> = (0..shape.iter().product()).map(|_| gauss(&mut r) as f32).collect();
        let hv = mpq::network::hvp(m, b, id, &Tensor::new(shape, v.clone()).unwrap()).unwrap();
        let hv: Vec<f64> = hv.data().iter().map(|&x| x as f64).collect();
        let v64: Vec<f64> = v.iter().map(|&x| x as f64).collect();
        let fd = [1e-4, 1e-6].iter().find_map(|&e| fd_hvp(&net, b, wi, &v64, e)).expect("kink-free ε");
        worst = worst.max(max_rel_err(&hv, &fd, 1e-2));
    }
    worst
}

/// Scaled grid coordinates `clip(αx)·2^(b−1)` and nearest-rounding errors.
pub fn grid_errors(values: &[f32], bits: u8, alpha: f32) -> Vec<f64> {
    let levels = 2f64.powi(bits as i32 - 1);
    values
        .iter()
        .map(|&x| {
            let u = (alpha as f64 * x as f64).clamp(-1.0, 1.0) * levels;
            u.round() - u
        })
        .collect()
}

/// Linear interpolation between order statistics at rank `(p/100)(n−1)`.
pub fn percentile_oracle(values: &[f32], p: f64) -> f64 {
    let mut v: Vec<f64> = values.iter().map(|&x| x as f64).collect();
    v.sort_by(f64::total_cmp);
    let rank = p / 100.0 * (v.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    v[lo] + (rank - lo as f64) * (v[hi] - v[lo])
}

/// Model whose every weight row already lies on the `bits` grid under its
/// own per-channel scale: each row holds ±1 and multiples of 2^−(bits−1).
pub fn representable_model(r: &mut ChaCha8Rng, dims: &[usize], bits: u8) -> ModelGraph {
    let levels = 1i32 << (bits - 1);
    let mut layers = Vec::new();
    for (i, w) in dims.windows(2).enumerate() {
        let mut data = Vec::with_capacity(w[0] * w[1]);
        for _ in 0..w[1] {
            let lead = r.random_range(0..w[0]);
            for c in 0..w[0] {
                let v = if c == lead {
                    if r.random::<bool>() {
                        1.0
                    } else {
                        -1.0
                    }
                } else {
                    r.random_range(-levels + 1..levels) as f32 / levels as f32
                };
                data.push(v);
            }
        }
        layers.push(Layer::dense(format!("fc{}", i + 1), Tensor::new(vec![w[1], w[0]], data).unwrap(), None));
        if i + 2 < dims.len() {
            layers.push(Layer::activation(format!("act{}", i + 1), Activation::Tanh));
        }
    }
    layers.push(Layer::head("loss"));
    ModelGraph::new(dims[0], layers).unwrap()
}

/// Accuracy falling additively with per-layer penalties for 8 and 4 bits;
/// monotone in every prefix.
pub struct PenaltyStub {
    pub base: f64,
    pub p8: Vec<f64>,
    pub p4: Vec<f64>,
}

impl PenaltyStub {
    pub fn random(r: &mut ChaCha8Rng, n: usize) -> Self {
        let p8: Vec<f64> = (0..n).map(|_| r.random_range(0.0..0.004)).collect();
        let p4 = p8.iter().map(|p| p + r.random_range(0.0..0.02)).collect();
        PenaltyStub { base: 0.9, p8, p4 }
    }

    pub fn accuracy(&self, bits: &[u8]) -> f64 {
        self.base
            - bits
                .iter()
                .enumerate()
                .map(|(i, &b)| match b {
                    16 => 0.0,
                    8 => self.p8[i],
                    _ => self.p4[i],
                })
                .sum::<f64>()
    }
}

pub fn shuffled(r: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        v.swap(i, r.random_range(0..=i));
    }
    v
}
