//! Feed-forward network with tanh hidden layers, identity output, and
//! hand-derived gradients.

use crate::error::{CoreError, Result};
use crate::numerics::array::Array;
use crate::numerics::rng::RngStream;
use crate::numerics::{axpy, dot};

/// One affine layer; `w` has shape `[out, in]`, `b` has shape `[out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Array,
    pub b: Array,
}

/// Multi-layer perceptron. Hidden layers apply tanh; the output layer is
/// affine. Gradients are derived per layer and checked against central
/// finite differences in the test suite.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForwardNet {
    widths: Vec<usize>,
    pub layers: Vec<Linear>,
}

/// Per-layer activations recorded by a forward pass, consumed by backward.
/// `acts[0]` is the input; `acts[k]` is the output of layer `k - 1` after
/// its activation.
#[derive(Debug, Clone, Default)]
pub struct NetCache {
    pub acts: Vec<Vec<f64>>,
}

impl FeedForwardNet {
    /// Builds a net with the given layer widths (at least input and output)
    /// and weight entries drawn from N(0, 1/fan_in), biases zero.
    pub fn new(widths: &[usize], rng: &mut RngStream) -> Result<Self> {
        if widths.len() < 2 || widths.iter().any(|&w| w == 0) {
            return Err(CoreError::InvalidArgument {
                context: format!("FeedForwardNet::new: bad widths {widths:?}"),
            });
        }
        let mut layers = Vec::with_capacity(widths.len() - 1);
        for k in 0..widths.len() - 1 {
            let (fan_in, fan_out) = (widths[k], widths[k + 1]);
            let std = (1.0 / fan_in as f64).sqrt();
            let w = Array::from_fn(vec![fan_out, fan_in], |_| rng.normal() * std);
            let b = Array::zeros(vec![fan_out]);
            layers.push(Linear { w, b });
        }
        Ok(FeedForwardNet { widths: widths.to_vec(), layers })
    }

    /// Same architecture, all parameters zero. Used as a gradient container.
    pub fn zeros_like(&self) -> Self {
        FeedForwardNet {
            widths: self.widths.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Linear { w: l.w.zeros_like(), b: l.b.zeros_like() })
                .collect(),
        }
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn in_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Forward pass recording activations into `cache` (reused if already
    /// sized). Returns the output as the last cache entry.
    pub fn forward_cached(&self, x: &[f64], cache: &mut NetCache) -> Result<()> {
        if x.len() != self.in_dim() {
            return Err(CoreError::ShapeMismatch {
                context: "net_forward input",
                expected: vec![self.in_dim()],
                got: vec![x.len()],
            });
        }
        cache.acts.resize(self.layers.len() + 1, Vec::new());
        cache.acts[0].clear();
        cache.acts[0].extend_from_slice(x);
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let out_dim = layer.b.len();
            let (head, tail) = cache.acts.split_at_mut(k + 1);
            let input = &head[k];
            let out = &mut tail[0];
            out.clear();
            out.reserve(out_dim);
            for o in 0..out_dim {
                let pre = dot(layer.w.row(o), input) + layer.b.data()[o];
                out.push(if k < last { pre.tanh() } else { pre });
            }
        }
        Ok(())
    }

    /// Convenience forward pass returning a fresh output vector.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut cache = NetCache::default();
        self.forward_cached(x, &mut cache)?;
        Ok(cache.acts.pop().unwrap())
    }

    /// Backward pass for the loss gradient `grad_out` at the output of the
    /// forward pass recorded in `cache`. Parameter gradients are accumulated
    /// into `grads` (a zeroed or partially accumulated clone of `self`);
    /// the returned vector is the gradient at the input.
    pub fn backward(
        &self,
        cache: &NetCache,
        grad_out: &[f64],
        grads: &mut FeedForwardNet,
    ) -> Result<Vec<f64>> {
        if grad_out.len() != self.out_dim() {
            return Err(CoreError::ShapeMismatch {
                context: "net_backward grad_out",
                expected: vec![self.out_dim()],
                got: vec![grad_out.len()],
            });
        }
        let mut delta = grad_out.to_vec();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let glayer = &mut grads.layers[k];
            let input = &cache.acts[k];
            let mut grad_in = vec![0.0; input.len()];
            for o in 0..delta.len() {
                let d = delta[o];
                axpy(d, input, glayer.w.row_mut(o));
                glayer.b.data_mut()[o] += d;
                axpy(d, layer.w.row(o), &mut grad_in);
            }
            if k > 0 {
                // tanh'(pre) expressed through the cached post-activation.
                let act = &cache.acts[k];
                delta = grad_in.iter().zip(act).map(|(g, a)| g * (1.0 - a * a)).collect();
            } else {
                delta = grad_in;
            }
        }
        Ok(delta)
    }

    /// Flattens all parameters (layer order, weights then bias) onto `out`.
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(l.w.data());
            out.extend_from_slice(l.b.data());
        }
    }

    /// Reads parameters back from a flat buffer, advancing `pos`.
    pub fn unflatten_from(&mut self, src: &[f64], pos: &mut usize) {
        for l in &mut self.layers {
            for v in l.w.data_mut() {
                *v = src[*pos];
                *pos += 1;
            }
            for v in l.b.data_mut() {
                *v = src[*pos];
                *pos += 1;
            }
        }
    }

    /// Named parameter tensors in a fixed order, e.g. `dec.w0, dec.b0, ...`.
    pub fn named_tensors(&self, prefix: &str) -> Vec<(String, &Array)> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for (k, l) in self.layers.iter().enumerate() {
            out.push((format!("{prefix}.w{k}"), &l.w));
            out.push((format!("{prefix}.b{k}"), &l.b));
        }
        out
    }

    /// Mutable variant of [`FeedForwardNet::named_tensors`].
    pub fn named_tensors_mut(&mut self, prefix: &str) -> Vec<(String, &mut Array)> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for (k, l) in self.layers.iter_mut().enumerate() {
            out.push((format!("{prefix}.w{k}"), &mut l.w));
            out.push((format!("{prefix}.b{k}"), &mut l.b));
        }
        out
    }
}

/// Free-function forward pass: maps an input vector to the output vector.
pub fn net_forward(net: &FeedForwardNet, x: &[f64]) -> Result<Vec<f64>> {
    net.forward(x)
}

/// Free-function backward pass. Returns `(parameter gradients, input
/// gradient)` for the given loss gradient at the output.
pub fn net_backward(
    net: &FeedForwardNet,
    cache: &NetCache,
    grad_out: &[f64],
) -> Result<(FeedForwardNet, Vec<f64>)> {
    let mut grads = net.zeros_like();
    let grad_in = net.backward(cache, grad_out, &mut grads)?;
    Ok((grads, grad_in))
}
