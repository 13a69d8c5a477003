use rand_chacha::ChaCha8Rng;

use super::layers::{ForwardCtx, Layer, LayerSpec, Param};
use super::tensor::Tensor;
use crate::error::{dim_err, Result};

/// A sequential stack of layers.
#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<Layer>,
}

impl Network {
    pub fn from_specs(specs: Vec<LayerSpec>, rng: &mut ChaCha8Rng) -> Result<Self> {
        let layers = specs
            .into_iter()
            .map(|s| Layer::new(s, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec().clone()).collect()
    }

    /// Item shape produced for an input item shape, validated layer by layer.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.layers
            .iter()
            .try_fold(input.to_vec(), |shape, l| l.spec().output_shape(&shape))
    }

    /// Shape after every layer, starting with the input.
    pub fn shape_trace(&self, input: &[usize]) -> Result<Vec<Vec<usize>>> {
        let mut trace = vec![input.to_vec()];
        for l in &self.layers {
            let next = l.spec().output_shape(trace.last().unwrap())?;
            trace.push(next);
        }
        Ok(trace)
    }

    pub fn forward(&mut self, x: Tensor, ctx: &mut ForwardCtx<'_>) -> Result<Tensor> {
        if x.shape().len() < 2 {
            return dim_err(format!("expected a batched tensor, got shape {:?}", x.shape()));
        }
        self.layers.iter_mut().try_fold(x, |h, l| l.forward(h, ctx))
    }

    /// Reverse pass from the output gradient. Stops propagating once no
    /// earlier layer is trainable, unless the caller needs the input gradient.
    pub fn backward(&mut self, g: Tensor, want_input: bool) -> Result<Option<Tensor>> {
        let first_trainable = self.layers.iter().position(|l| l.is_trainable());
        let mut grad = Some(g);
        for i in (0..self.layers.len()).rev() {
            let Some(g) = grad.take() else {
                self.layers[i].clear_cache();
                continue;
            };
            let need = if i == 0 {
                want_input
            } else {
                want_input || first_trainable.is_some_and(|f| f < i)
            };
            grad = self.layers[i].backward(g, need)?;
        }
        Ok(grad)
    }

    pub fn has_trainable(&self) -> bool {
        self.layers.iter().any(|l| l.is_trainable())
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        for l in &mut self.layers {
            l.set_frozen(frozen);
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn named_tensors(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.named_tensors(&format!("{prefix}.{i}")))
            .collect()
    }

    pub fn named_tensors_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor)> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| l.named_tensors_mut(&format!("{prefix}.{i}")))
            .collect()
    }

    pub fn zero_grad(&mut self) {
        self.layers.iter_mut().for_each(Layer::zero_grad);
    }

    pub fn clear_cache(&mut self) {
        self.layers.iter_mut().for_each(Layer::clear_cache);
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| l.named_tensors(""))
            .map(|(_, t)| t.len())
            .sum()
    }
}

/// Anything that can be trained with [`fit`](super::fit): a differentiable
/// map from a batch tensor to a batch tensor with enumerable parameters.
pub trait Module {
    fn forward(&mut self, x: Tensor, ctx: &mut ForwardCtx<'_>) -> Result<Tensor>;
    /// Reverse pass from the output gradient; see [`Network::backward`].
    fn backward(&mut self, g: Tensor, want_input: bool) -> Result<Option<Tensor>>;
    fn params_mut(&mut self) -> Vec<&mut Param>;
    fn zero_grad(&mut self);
}

impl Module for Network {
    fn forward(&mut self, x: Tensor, ctx: &mut ForwardCtx<'_>) -> Result<Tensor> {
        Network::forward(self, x, ctx)
    }

    fn backward(&mut self, g: Tensor, want_input: bool) -> Result<Option<Tensor>> {
        Network::backward(self, g, want_input)
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        Network::params_mut(self)
    }

    fn zero_grad(&mut self) {
        Network::zero_grad(self)
    }
}
