//! Synthetic desk-scale task: Gaussian clusters and a hand-built deep MLP
//! that classifies them by nearest cluster mean.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::model::{Activation, Batch, Layer, ModelGraph};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct DemoSpec {
    pub input_dim: usize,
    pub classes: usize,
    pub width: usize,
    /// Number of dense layers.
    pub depth: usize,
    pub samples: usize,
    /// Spread of cluster means relative to the unit within-cluster noise.
    pub separation: f64,
    pub seed: u64,
}

impl Default for DemoSpec {
    fn default() -> Self {
        DemoSpec { input_dim: 8, classes: 4, width: 16, depth: 12, samples: 2048, separation: 1.5, seed: 42 }
    }
}

fn normal(std: f64) -> Normal<f64> {
    Normal::new(0.0, std).expect("positive std")
}

pub fn cluster_means(spec: &DemoSpec) -> Vec<Vec<f64>> {
    let mut r = rng::stream(spec.seed, "demo-means", 0);
    let d = normal(spec.separation);
    (0..spec.classes).map(|_| (0..spec.input_dim).map(|_| d.sample(&mut r)).collect()).collect()
}

/// Balanced classes in order 0, 1, .., classes-1, 0, 1, ..
pub fn gaussian_clusters(spec: &DemoSpec) -> Result<Batch> {
    let means = cluster_means(spec);
    let mut r = rng::stream(spec.seed, "demo-samples", 0);
    let unit = normal(1.0);
    let mut inputs = Vec::with_capacity(spec.samples * spec.input_dim);
    let mut labels = Vec::with_capacity(spec.samples);
    for i in 0..spec.samples {
        let c = i % spec.classes;
        labels.push(c);
        inputs.extend(means[c].iter().map(|m| (m + unit.sample(&mut r)) as f32));
    }
    Batch::new(Tensor::new(vec![spec.samples, spec.input_dim], inputs)?, labels)
}

/// The first layer computes the nearest-mean discriminant `x·μ_c - |μ_c|²/2`
/// for each class in the first `classes` units, the hidden tanh stack carries
/// those units forward through noisy near-identity maps with per-layer gains,
/// and the last layer undoes the accumulated gain.
pub fn demo_mlp(spec: &DemoSpec) -> Result<ModelGraph> {
    assert!(spec.depth >= 2 && spec.width >= spec.classes);
    let means = cluster_means(spec);
    let mut r = rng::stream(spec.seed, "demo-weights", 0);
    let (d, w, k) = (spec.input_dim, spec.width, spec.classes);

    let in_gain = 0.1 / spec.separation;
    let mut w1 = vec![0f32; w * d];
    let mut b1 = vec![0f32; w];
    let filler = normal(0.1);
    for row in 0..w {
        for col in 0..d {
            w1[row * d + col] = if row < k { (in_gain * means[row][col]) as f32 } else { filler.sample(&mut r) as f32 };
        }
        if row < k {
            b1[row] = (-in_gain * 0.5 * means[row].iter().map(|m| m * m).sum::<f64>()) as f32;
        }
    }
    let mut layers = vec![
        Layer::dense("fc1", Tensor::new(vec![w, d], w1)?, Some(Tensor::new(vec![w], b1)?)),
        Layer::activation("act1", Activation::Tanh),
    ];

    let mut carried = 1.0;
    for l in 2..spec.depth {
        let gain = r.random_range(0.8..1.25);
        let noise = normal(r.random_range(0.002..0.03));
        let mut m = vec![0f32; w * w];
        for row in 0..w {
            for col in 0..w {
                let eye = if row == col { gain } else { 0.0 };
                m[row * w + col] = (eye + noise.sample(&mut r)) as f32;
            }
        }
        let bias = (0..w).map(|_| noise.sample(&mut r) as f32 * 0.1).collect();
        carried *= gain;
        layers.push(Layer::dense(format!("fc{l}"), Tensor::new(vec![w, w], m)?, Some(Tensor::new(vec![w], bias)?)));
        layers.push(Layer::activation(format!("act{l}"), Activation::Tanh));
    }

    let out_gain = 4.0 / carried;
    let mut head = vec![0f32; k * w];
    for c in 0..k {
        head[c * w + c] = out_gain as f32;
    }
    layers.push(Layer::dense(
        format!("fc{}", spec.depth),
        Tensor::new(vec![k, w], head)?,
        Some(Tensor::zeros(vec![k])),
    ));
    layers.push(Layer::head("loss"));
    ModelGraph::new(d, layers)
}
