use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use super::layer::{Activation, DenseGrads, DenseLayer};
use super::linalg::check_len;
use crate::error::{Error, Result};

static NEXT_STATE_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_state_id() -> u64 {
    NEXT_STATE_ID.fetch_add(1, Ordering::Relaxed)
}

/// A chain of dense layers. Every parameter mutation gives the network a new
/// state id so that caches recorded before the mutation are rejected.
#[derive(Debug, Clone)]
pub struct MlpNetwork {
    layers: Vec<DenseLayer>,
    state_id: u64,
}

impl PartialEq for MlpNetwork {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

/// Activation trace of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    state_id: u64,
    inputs: Vec<Vec<f64>>,
    pre_activations: Vec<Vec<f64>>,
    outputs: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.outputs.last().map_or(&[], Vec::as_slice)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<DenseGrads>,
}

impl MlpGrads {
    pub fn zeros_like(net: &MlpNetwork) -> Self {
        Self {
            layers: net.layers.iter().map(DenseGrads::zeros_like).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.layers.iter_mut().for_each(|g| g.scale(s));
    }

    /// Flattened in the same order as [`MlpNetwork::params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in &self.layers {
            g.write_flat(&mut out);
        }
        out
    }
}

impl MlpNetwork {
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            check_len("layer chain", pair[0].out_dim(), pair[1].in_dim())?;
        }
        Ok(Self {
            layers,
            state_id: fresh_state_id(),
        })
    }

    /// Glorot-initialized network. `sizes` lists every width including input
    /// and output; `hidden` applies to all layers but the last, which uses
    /// `output`.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "invalid layer sizes {sizes:?}"
            )));
        }
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last { output } else { hidden };
                DenseLayer::glorot(w[0], w[1], act, rng)
            })
            .collect();
        Self::from_layers(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(DenseLayer::num_params).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for layer in &self.layers {
            layer.write_params(&mut out);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        check_len("network parameters", self.num_params(), params.len())?;
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("network parameters"));
        }
        let mut rest = params;
        for layer in &mut self.layers {
            rest = layer.read_params(rest);
        }
        self.state_id = fresh_state_id();
        Ok(())
    }

    /// Output only; no trace is kept.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("network input", self.in_dim(), x.len())?;
        let mut a = x.to_vec();
        for layer in &self.layers {
            a = layer.forward(&a).1;
        }
        Ok(a)
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        check_len("network input", self.in_dim(), x.len())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network input"));
        }
        let n = self.layers.len();
        let mut cache = ForwardCache {
            state_id: self.state_id,
            inputs: Vec::with_capacity(n),
            pre_activations: Vec::with_capacity(n),
            outputs: Vec::with_capacity(n),
        };
        let mut a = x.to_vec();
        for layer in &self.layers {
            let (z, out) = layer.forward(&a);
            cache.inputs.push(std::mem::replace(&mut a, out.clone()));
            cache.pre_activations.push(z);
            cache.outputs.push(out);
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network output"));
        }
        Ok((a, cache))
    }

    /// Accumulates parameter gradients into `grads` and returns `dL/dx`.
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        d_output: &[f64],
        grads: &mut MlpGrads,
    ) -> Result<Vec<f64>> {
        if cache.state_id != self.state_id || cache.inputs.len() != self.layers.len() {
            return Err(Error::StaleCache);
        }
        check_len("output gradient", self.out_dim(), d_output.len())?;
        check_len("gradient buffers", self.layers.len(), grads.layers.len())?;
        let mut delta = d_output.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            delta = layer.backward(
                &cache.inputs[i],
                &cache.pre_activations[i],
                &cache.outputs[i],
                &delta,
                &mut grads.layers[i],
            );
        }
        Ok(delta)
    }

    pub fn backward(&self, cache: &ForwardCache, d_output: &[f64]) -> Result<(Vec<f64>, MlpGrads)> {
        let mut grads = MlpGrads::zeros_like(self);
        let dx = self.backward_into(cache, d_output, &mut grads)?;
        Ok((dx, grads))
    }
}
