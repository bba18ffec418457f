//! Sequential networks: an ordered layer stack with a parameter registry.

use crate::error::{Error, Result};
use crate::layer::{Layer, LayerGrads, LayerSpec};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Parameter gradients for every layer, aligned with the layer stack.
#[derive(Clone, Debug)]
pub struct NetGrads {
    pub per_layer: Vec<Option<LayerGrads>>,
}

impl NetGrads {
    /// Elementwise `self += other`; layouts must match.
    pub fn accumulate(&mut self, other: &NetGrads) {
        for (a, b) in self.per_layer.iter_mut().zip(&other.per_layer) {
            match (a, b) {
                (Some(ga), Some(gb)) => {
                    if let (Some(wa), Some(wb)) = (&mut ga.weights, &gb.weights) {
                        wa.add_scaled(wb, 1.0);
                    }
                    if let (Some(ba), Some(bb)) = (&mut ga.bias, &gb.bias) {
                        ba.add_scaled(bb, 1.0);
                    }
                }
                (None, None) => {}
                _ => panic!("gradient layouts disagree"),
            }
        }
    }
}

/// Stored activations from one forward pass, sufficient for backward.
pub struct ForwardCache {
    pub(crate) inputs: Vec<Tensor>,
    pub(crate) output_shape: Vec<usize>,
    pub(crate) fingerprint: u64,
}

/// An ordered stack of layers with composed shapes.
#[derive(Clone, Debug)]
pub struct Network {
    layers: Vec<Layer>,
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    frozen: bool,
}

impl Network {
    /// Build and initialize a network. Layer shapes are composed eagerly;
    /// a mismatch reports the offending layer index.
    pub fn new(input_shape: &[usize], specs: Vec<LayerSpec>, rng: &mut Rng) -> Result<Network> {
        if specs.is_empty() {
            return Err(Error::invalid("a network needs at least one layer"));
        }
        let mut shape = input_shape.to_vec();
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.into_iter().enumerate() {
            shape = spec
                .out_shape(&shape)
                .map_err(|e| Error::shape(format!("layer {i} ({}): {e}", spec.kind_name())))?;
            layers.push(Layer::init(spec, rng)?);
        }
        Ok(Network { layers, input_shape: input_shape.to_vec(), output_shape: shape, frozen: false })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn output_len(&self) -> usize {
        self.output_shape.iter().product()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    /// Total trainable scalars. Masked entries of a masked dense layer do
    /// not count; biases do.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.spec().param_count()).sum()
    }

    /// All parameters flattened in layer order (weights then bias per layer),
    /// including masked-out entries (which are exactly zero).
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.layers {
            if let Some(w) = layer.weights() {
                out.extend_from_slice(w.data());
            }
            if let Some(b) = layer.bias() {
                out.extend_from_slice(b.data());
            }
        }
        out
    }

    /// Overwrite all parameters from a flat buffer laid out as
    /// [`Network::flat_params`] produces. Masked entries are re-zeroed.
    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let expected: usize = self
            .layers
            .iter()
            .map(|l| l.weights().map_or(0, Tensor::len) + l.bias().map_or(0, Tensor::len))
            .sum();
        if flat.len() != expected {
            return Err(Error::shape(format!(
                "flat parameter buffer has {} values, network stores {expected}",
                flat.len()
            )));
        }
        let mut off = 0;
        for layer in &mut self.layers {
            if let Some(w) = layer.weights.as_mut() {
                let n = w.len();
                w.data_mut().copy_from_slice(&flat[off..off + n]);
                off += n;
            }
            if let Some(b) = layer.bias.as_mut() {
                let n = b.len();
                b.data_mut().copy_from_slice(&flat[off..off + n]);
                off += n;
            }
            layer.apply_mask();
        }
        Ok(())
    }

    /// FNV-1a over the bit patterns of every parameter; cheap identity check
    /// for "weights unchanged" contracts and stale-cache detection.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xCBF2_9CE4_8422_2325;
        let mut eat = |bits: u64| {
            h ^= bits;
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        };
        eat(self.layers.len() as u64);
        for layer in &self.layers {
            for t in [layer.weights(), layer.bias()].into_iter().flatten() {
                eat(t.len() as u64);
                for &v in t.data() {
                    eat(v.to_bits());
                }
            }
        }
        h
    }

    /// Run the network on a batch `[batch, ...input_shape]`.
    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, ForwardCache)> {
        if input.ndim() < 1 || &input.shape()[1..] != self.input_shape.as_slice() {
            return Err(Error::shape(format!(
                "layer 0 ({}): expected input of per-sample shape {:?}, got tensor of shape {:?}",
                self.layers[0].spec().kind_name(),
                self.input_shape,
                input.shape()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut cur = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let next = layer
                .forward(&cur)
                .map_err(|e| Error::shape(format!("layer {i} ({}): {e}", layer.spec().kind_name())))?;
            inputs.push(cur);
            cur = next;
        }
        let cache = ForwardCache {
            inputs,
            output_shape: cur.shape().to_vec(),
            fingerprint: self.fingerprint(),
        };
        Ok((cur, cache))
    }

    /// Reverse-mode pass. Returns per-layer parameter gradients and the
    /// gradient of the loss with respect to the network input; the latter is
    /// the latent gradient when this network is a decoder.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &Tensor) -> Result<(NetGrads, Tensor)> {
        let (grads, input_grad) = self.backward_impl(cache, output_grad, true)?;
        Ok((grads.expect("param grads requested"), input_grad))
    }

    /// Like [`Network::backward`] but skips parameter gradients entirely;
    /// used for latent inference against a frozen decoder.
    pub fn backward_input_only(&self, cache: &ForwardCache, output_grad: &Tensor) -> Result<Tensor> {
        let (_, input_grad) = self.backward_impl(cache, output_grad, false)?;
        Ok(input_grad)
    }

    fn backward_impl(
        &self,
        cache: &ForwardCache,
        output_grad: &Tensor,
        need_param_grads: bool,
    ) -> Result<(Option<NetGrads>, Tensor)> {
        if cache.inputs.len() != self.layers.len() {
            return Err(Error::contract(format!(
                "cache stores {} layers, network has {}",
                cache.inputs.len(),
                self.layers.len()
            )));
        }
        if cache.fingerprint != self.fingerprint() {
            return Err(Error::contract(
                "stale cache: parameters changed since the forward pass".to_string(),
            ));
        }
        if output_grad.shape() != cache.output_shape.as_slice() {
            return Err(Error::shape(format!(
                "output gradient shape {:?} does not match forward output {:?}",
                output_grad.shape(),
                cache.output_shape
            )));
        }
        let mut grads: Vec<Option<LayerGrads>> = vec![None; self.layers.len()];
        let mut dy = output_grad.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let (g, dx) = layer.backward(&cache.inputs[i], &dy, need_param_grads)?;
            grads[i] = g;
            dy = dx;
        }
        let grads = need_param_grads.then_some(NetGrads { per_layer: grads });
        Ok((grads, dy))
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }
}
