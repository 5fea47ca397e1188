use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Result};
use crate::matrix::Matrix;

/// One affine layer. `weight` is `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if weight.rows() != bias.len() {
            return Err(shape(format!(
                "bias of length {} for a weight with {} rows",
                bias.len(),
                weight.rows()
            )));
        }
        Ok(Self { weight, bias })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    fn zeros_like(&self) -> Layer {
        Layer {
            weight: Matrix::zeros(self.weight.rows(), self.weight.cols()),
            bias: vec![0.0; self.bias.len()],
        }
    }
}

/// Feed-forward network: rectifier after every layer except the last, which
/// emits raw logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    layers: Vec<Layer>,
}

/// Activations recorded by [`MlpModel::forward`] for one batch.
///
/// `inputs[k]` is the input of layer `k` (so `inputs[0]` is the batch) and
/// `pre[k]` is its affine output before the activation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Matrix>,
    pre: Vec<Matrix>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.inputs[0].rows()
    }
}

/// Parameter gradients, laid out exactly like the model they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    /// All gradient entries in parameter order (per layer: weight then bias).
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weight.as_slice().iter().chain(l.bias.iter()).copied())
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.values().collect()
    }
}

/// Fan-in scaled uniform initialisation, `U(-sqrt(6/fan_in), sqrt(6/fan_in))`,
/// zero biases. The same `seed` and `layer_dims` always give the same model.
pub fn init_mlp(seed: u64, layer_dims: &[usize]) -> Result<MlpModel> {
    if layer_dims.len() < 2 {
        return Err(invalid(format!(
            "need at least input and output dims, got {layer_dims:?}"
        )));
    }
    if layer_dims.contains(&0) {
        return Err(invalid(format!("layer dims must be positive: {layer_dims:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = layer_dims
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            Layer {
                weight: Matrix::new(fan_out, fan_in, data).expect("sized above"),
                bias: vec![0.0; fan_out],
            }
        })
        .collect();
    Ok(MlpModel { layers })
}

impl MlpModel {
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(invalid("a model needs at least one layer"));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(shape(format!(
                    "layer {k} emits {} features but layer {} expects {}",
                    pair[0].out_dim(),
                    k + 1,
                    pair[1].in_dim()
                )));
            }
        }
        for l in &layers {
            if l.weight.rows() != l.bias.len() {
                return Err(shape("bias length differs from weight rows"));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// `[in, hidden.., out]`.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Layer::out_dim))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.as_slice().len() + l.bias.len())
            .sum()
    }

    pub fn params(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weight.as_slice().iter().chain(l.bias.iter()).copied())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.as_mut_slice().iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.params().collect()
    }

    pub fn assign_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(shape(format!(
                "{} values for {} parameters",
                values.len(),
                self.param_count()
            )));
        }
        for (p, v) in self.params_mut().zip(values) {
            *p = *v;
        }
        Ok(())
    }

    pub(crate) fn same_shape(&self, grads: &Gradients) -> bool {
        self.layers.len() == grads.layers.len()
            && self
                .layers
                .iter()
                .zip(&grads.layers)
                .all(|(a, b)| a.weight.shape() == b.weight.shape() && a.bias.len() == b.bias.len())
    }

    fn check_input(&self, batch: &Matrix) -> Result<()> {
        if batch.cols() != self.input_dim() {
            return Err(shape(format!(
                "batch has {} features, model expects {}",
                batch.cols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Forward pass that keeps the activations needed by [`MlpModel::backward`].
    pub fn forward(&self, batch: &Matrix) -> Result<(Matrix, ForwardCache)> {
        self.check_input(batch)?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut current = batch.clone();
        for (k, layer) in self.layers.iter().enumerate() {
            let z = affine(layer, &current)?;
            let next = if k == last { z.clone() } else { z.map(relu) };
            inputs.push(current);
            pre.push(z);
            current = next;
        }
        Ok((current, ForwardCache { inputs, pre }))
    }

    /// Forward pass without recording activations.
    pub fn logits(&self, batch: &Matrix) -> Result<Matrix> {
        self.check_input(batch)?;
        let last = self.layers.len() - 1;
        let mut current = batch.clone();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = affine(layer, &current)?;
            if k != last {
                z.as_mut_slice().iter_mut().for_each(|v| *v = relu(*v));
            }
            current = z;
        }
        Ok(current)
    }

    /// Reverse-mode gradients of a scalar loss whose gradient w.r.t. the
    /// logits is `dlogits`.
    pub fn backward(&self, cache: &ForwardCache, dlogits: &Matrix) -> Result<Gradients> {
        if cache.pre.len() != self.layers.len() {
            return Err(shape("cache was recorded for a different model depth"));
        }
        let batch = cache.batch_size();
        if dlogits.shape() != (batch, self.num_classes()) {
            return Err(shape(format!(
                "dlogits is {:?}, expected ({batch}, {})",
                dlogits.shape(),
                self.num_classes()
            )));
        }
        let mut grads: Vec<Layer> = self.layers.iter().map(Layer::zeros_like).collect();
        let mut delta = dlogits.clone();
        for k in (0..self.layers.len()).rev() {
            let input = &cache.inputs[k];
            if input.cols() != self.layers[k].in_dim() || cache.pre[k].cols() != self.layers[k].out_dim()
            {
                return Err(shape(format!("cache layer {k} does not match the model")));
            }
            // dW = delta^T * input ; db = column sums of delta
            let g = &mut grads[k];
            g.weight = delta.transpose().matmul(input)?;
            for row in delta.iter_rows() {
                for (b, d) in g.bias.iter_mut().zip(row) {
                    *b += d;
                }
            }
            if k > 0 {
                let mut upstream = delta.matmul(&self.layers[k].weight)?;
                let z_prev = &cache.pre[k - 1];
                for (u, z) in upstream.as_mut_slice().iter_mut().zip(z_prev.as_slice()) {
                    if *z <= 0.0 {
                        *u = 0.0;
                    }
                }
                delta = upstream;
            }
        }
        Ok(Gradients { layers: grads })
    }
}

fn affine(layer: &Layer, input: &Matrix) -> Result<Matrix> {
    let mut z = input.matmul_bt(&layer.weight)?;
    let out = layer.out_dim();
    for r in 0..z.rows() {
        for (v, b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
            *v += b;
        }
    }
    debug_assert_eq!(z.cols(), out);
    Ok(z)
}

#[inline]
fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}
