//! Feed-forward network with a softmax output and its training loss
//! `−mean log Σ_k π_k(x) B_k(u)`.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{NpmmError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    fn grad(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl NetSpec {
    pub fn default_for(input_dim: usize) -> Self {
        NetSpec {
            input_dim,
            hidden: vec![30, 20],
            output_dim: 15,
            activation: Activation::Relu,
            optimizer: Optimizer::Adam,
            learning_rate: 0.01,
            epochs: 100,
            batch_size: 1000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.iter().any(|&h| h == 0) {
            return Err(NpmmError::InvalidParameter(format!(
                "layer sizes must be positive: input {}, hidden {:?}, output {}",
                self.input_dim, self.hidden, self.output_dim
            )));
        }
        if !(self.learning_rate > 0.0) || self.epochs == 0 || self.batch_size == 0 {
            return Err(NpmmError::InvalidParameter(
                "learning rate, epochs and batch size must be positive".into(),
            ));
        }
        Ok(())
    }

    fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim];
        s.extend(&self.hidden);
        s.push(self.output_dim);
        s
    }

    pub fn n_params(&self) -> usize {
        self.sizes().windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out × in`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    pub activation: Activation,
}

/// Per-layer activations kept for the backward pass.
pub struct ForwardCache {
    pre: Vec<Array2<f64>>,
    post: Vec<Array2<f64>>,
    pub probs: Array2<f64>,
}

fn softmax_rows(logits: &mut Array2<f64>) {
    for mut row in logits.rows_mut() {
        let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            s += *v;
        }
        row.mapv_inplace(|v| v / s);
    }
}

impl Mlp {
    /// He-scaled Gaussian weights, zero biases.
    pub fn init<R: Rng + ?Sized>(spec: &NetSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let sizes = spec.sizes();
        let layers = sizes
            .windows(2)
            .map(|w| {
                let gain = match spec.activation {
                    Activation::Relu => 2.0,
                    Activation::Tanh => 1.0,
                };
                let normal = Normal::new(0.0, (gain / w[0] as f64).sqrt()).expect("finite sd");
                Layer {
                    w: Array2::from_shape_simple_fn((w[1], w[0]), || normal.sample(rng)),
                    b: Array1::zeros(w[1]),
                }
            })
            .collect();
        Ok(Mlp {
            layers,
            activation: spec.activation,
        })
    }

    pub fn zeros(spec: &NetSpec) -> Self {
        let layers = spec
            .sizes()
            .windows(2)
            .map(|w| Layer {
                w: Array2::zeros((w[1], w[0])),
                b: Array1::zeros(w[1]),
            })
            .collect();
        Mlp {
            layers,
            activation: spec.activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.w.nrows()).unwrap_or(0)
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Row-major weights then biases, layer by layer.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }

    pub fn assign(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(NpmmError::InvalidArgument(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                flat.len()
            )));
        }
        let mut i = 0;
        for l in &mut self.layers {
            for v in l.w.iter_mut() {
                *v = flat[i];
                i += 1;
            }
            for v in l.b.iter_mut() {
                *v = flat[i];
                i += 1;
            }
        }
        Ok(())
    }

    /// Pre-softmax outputs for a batch.
    pub fn logits(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut h = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = h.dot(&l.w.t());
            z += &l.b;
            if i < last {
                z.mapv_inplace(|v| self.activation.apply(v));
            }
            h = z;
        }
        h
    }

    /// Softmax weights for a batch of inputs (`batch × input_dim`).
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(NpmmError::InvalidArgument(format!(
                "feature dimension {} does not match network input {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        let mut p = self.logits(x);
        softmax_rows(&mut p);
        Ok(p)
    }

    /// Softmax weights for one input.
    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, x.len()), x)
            .map_err(|e| NpmmError::InvalidArgument(e.to_string()))?;
        Ok(self.forward(view)?.row(0).to_vec())
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> ForwardCache {
        let last = self.layers.len() - 1;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post = Vec::with_capacity(self.layers.len());
        post.push(x.to_owned());
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = post[i].dot(&l.w.t());
            z += &l.b;
            if i < last {
                let a = z.mapv(|v| self.activation.apply(v));
                pre.push(z);
                post.push(a);
            } else {
                pre.push(z);
            }
        }
        let mut probs = pre[last].clone();
        softmax_rows(&mut probs);
        ForwardCache { pre, post, probs }
    }

    /// Mean loss and its gradient (same layout as [`Mlp::flatten`]).
    ///
    /// `basis` holds the spline values `B_k(u)` of each row.
    pub fn loss_and_grad(&self, x: ArrayView2<f64>, basis: ArrayView2<f64>) -> (f64, Vec<Layer>) {
        let n = x.nrows() as f64;
        let cache = self.forward_cached(x);
        let mut loss = 0.0;
        // dL/dlogit_k = π_k (1 − B_k / f) / n
        let mut g = cache.probs.clone();
        for (mut grow, brow) in g.rows_mut().into_iter().zip(basis.rows()) {
            let f: f64 = grow.iter().zip(brow.iter()).map(|(p, b)| p * b).sum();
            loss -= f.ln();
            for (p, b) in grow.iter_mut().zip(brow.iter()) {
                *p *= (1.0 - b / f) / n;
            }
        }
        let mut grads: Vec<Layer> = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            let gw = g.t().dot(&cache.post[i]);
            let gb = g.sum_axis(Axis(0));
            if i > 0 {
                let mut gh = g.dot(&self.layers[i].w);
                let act = self.activation;
                ndarray::Zip::from(&mut gh)
                    .and(&cache.pre[i - 1])
                    .and(&cache.post[i])
                    .for_each(|gv, &z, &a| *gv *= act.grad(z, a));
                g = gh;
            }
            grads.push(Layer { w: gw, b: gb });
        }
        grads.reverse();
        (loss / n, grads)
    }

    /// Mean loss only.
    pub fn loss(&self, x: ArrayView2<f64>, basis: ArrayView2<f64>) -> f64 {
        let mut p = self.logits(x);
        softmax_rows(&mut p);
        let n = x.nrows() as f64;
        -p.rows()
            .into_iter()
            .zip(basis.rows())
            .map(|(pr, br)| pr.dot(&br).ln())
            .sum::<f64>()
            / n
    }
}

/// Adam or plain gradient-descent state.
pub struct OptimizerState {
    kind: Optimizer,
    lr: f64,
    m: Vec<Layer>,
    v: Vec<Layer>,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl OptimizerState {
    pub fn new(kind: Optimizer, lr: f64, net: &Mlp) -> Self {
        let zeros = || {
            net.layers
                .iter()
                .map(|l| Layer {
                    w: Array2::zeros(l.w.raw_dim()),
                    b: Array1::zeros(l.b.len()),
                })
                .collect::<Vec<_>>()
        };
        OptimizerState {
            kind,
            lr,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &[Layer]) {
        match self.kind {
            Optimizer::Sgd => {
                for (l, g) in net.layers.iter_mut().zip(grads) {
                    l.w.scaled_add(-self.lr, &g.w);
                    l.b.scaled_add(-self.lr, &g.b);
                }
            }
            Optimizer::Adam => {
                self.t += 1;
                let c1 = 1.0 - BETA1.powi(self.t);
                let c2 = 1.0 - BETA2.powi(self.t);
                let lr = self.lr;
                let upd = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
                    *m = BETA1 * *m + (1.0 - BETA1) * g;
                    *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                };
                for ((l, g), (m, v)) in net
                    .layers
                    .iter_mut()
                    .zip(grads)
                    .zip(self.m.iter_mut().zip(self.v.iter_mut()))
                {
                    ndarray::Zip::from(&mut l.w)
                        .and(&g.w)
                        .and(&mut m.w)
                        .and(&mut v.w)
                        .for_each(|p, &g, m, v| upd(p, g, m, v));
                    ndarray::Zip::from(&mut l.b)
                        .and(&g.b)
                        .and(&mut m.b)
                        .and(&mut v.b)
                        .for_each(|p, &g, m, v| upd(p, g, m, v));
                }
            }
        }
    }
}

/// Largest relative discrepancy between the analytic gradient and central
/// differences, `|a − n| / max(|a|, |n|, floor)`.
pub fn gradient_check(
    net: &Mlp,
    x: ArrayView2<f64>,
    basis: ArrayView2<f64>,
    h: f64,
    floor: f64,
) -> f64 {
    let (_, grads) = net.loss_and_grad(x, basis);
    let analytic: Vec<f64> = grads
        .iter()
        .flat_map(|g| g.w.iter().chain(g.b.iter()).copied().collect::<Vec<_>>())
        .collect();
    let base = net.flatten();
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] = base[i] + h;
        probe.assign(&p).expect("same layout");
        let up = probe.loss(x, basis);
        p[i] = base[i] - h;
        probe.assign(&p).expect("same layout");
        let down = probe.loss(x, basis);
        let numeric = (up - down) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(floor);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    fn small_spec() -> NetSpec {
        NetSpec {
            input_dim: 5,
            hidden: vec![6, 4],
            output_dim: 7,
            activation: Activation::Relu,
            optimizer: Optimizer::Adam,
            learning_rate: 0.01,
            epochs: 1,
            batch_size: 8,
        }
    }

    #[test]
    fn zero_network_is_uniform() {
        let net = Mlp::zeros(&NetSpec::default_for(8));
        let p = net.forward_one(&[0.3; 8]).unwrap();
        assert!(p.iter().all(|&v| (v - 1.0 / 15.0).abs() < 1e-15));
        assert!(net.forward_one(&[0.3; 7]).is_err());
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let mut a = Array2::from_shape_vec((1, 4), vec![0.1, -2.0, 3.0, 0.7]).unwrap();
        let mut b = a.mapv(|v| v + 123.4);
        softmax_rows(&mut a);
        softmax_rows(&mut b);
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((a.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn flatten_roundtrip() {
        let mut rng = stream_rng(1, 0);
        let net = Mlp::init(&small_spec(), &mut rng).unwrap();
        let mut other = Mlp::zeros(&small_spec());
        other.assign(&net.flatten()).unwrap();
        assert_eq!(net, other);
        assert_eq!(net.n_params(), small_spec().n_params());
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let mut rng = stream_rng(2, 0);
        for act in [Activation::Relu, Activation::Tanh] {
            let spec = NetSpec {
                activation: act,
                ..small_spec()
            };
            let net = Mlp::init(&spec, &mut rng).unwrap();
            let x = Array2::from_shape_simple_fn((12, 5), || rng.random::<f64>());
            let basis = Array2::from_shape_simple_fn((12, 7), || rng.random_range(0.0..3.0));
            let err = gradient_check(&net, x.view(), basis.view(), 1e-6, 1e-6);
            assert!(err < 1e-5, "{act:?}: {err}");
        }
    }
}
