//! Layers, parameter storage, forward/backward passes and parameter
//! counting.
//!
//! A [`Model`] is a flat chain of [`LayerSpec`]s plus a [`ParamStore`] holding
//! the materialized weights. Activations are channels-last: 2D tensors are
//! (row, col, channel), 3D tensors are (row, col, depth, channel). All
//! convolutions are cross-correlations (no kernel flip).

mod gradcheck;
mod layers;
mod loss;
mod mdlw;
mod optim;

pub use gradcheck::{
    analytic_gradients, gradcheck, numeric_gradient, relative_error, BlockReport,
    GradCheckConfig, GradCheckReport,
};
pub use loss::{bce, bce_grad, mse, mse_grad, LossKind, BCE_EPSILON};
pub use mdlw::{decode_model, encode_model, read_model, write_model, MDLW_MAGIC};
pub use optim::{RmsProp, RmsPropConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::tensor::{Scalar, Shape, Tensor};
use layers::{
    add_bias, bias_grad, col2im2d, col2im3d, im2col2d, im2col3d, matmul, matmul_at, matmul_bt,
    maxpool2d, maxpool3d, maxpool_backward, Geom2d, Geom3d,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    None,
    Relu,
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Valid convolution: output extent = input − kernel + 1 (stride 1).
    None,
    /// Zero-pad so the output extent equals the input extent; stride must be 1.
    Preserve,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    /// Discard the remainder: output extent = floor(input / pool).
    Floor,
    /// Zero-pad to full windows: output extent = ceil(input / pool).
    Ceil,
}

/// One layer of a model. Kernels and pools are given per spatial axis in
/// (row, col) or (row, col, depth) order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerSpec {
    Conv2d {
        filters: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: Padding,
        activation: Activation,
    },
    Conv3d {
        filters: usize,
        kernel: (usize, usize, usize),
        padding: Padding,
        activation: Activation,
    },
    /// Size-doubling transpose convolution: stride is fixed at (2, 2) and the
    /// output extent is exactly twice the input extent per spatial axis.
    TransposeConv2d {
        filters: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        activation: Activation,
    },
    MaxPool2d {
        pool: (usize, usize),
        mode: PoolMode,
    },
    MaxPool3d {
        pool: (usize, usize, usize),
        mode: PoolMode,
    },
    Flatten,
    Dense {
        units: usize,
        activation: Activation,
    },
    Activation {
        activation: Activation,
    },
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Conv3d { .. } => "conv3d",
            LayerSpec::TransposeConv2d { .. } => "transpose_conv2d",
            LayerSpec::MaxPool2d { .. } => "maxpool2d",
            LayerSpec::MaxPool3d { .. } => "maxpool3d",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Activation { .. } => "activation",
        }
    }

    fn activation(&self) -> Activation {
        match self {
            LayerSpec::Conv2d { activation, .. }
            | LayerSpec::Conv3d { activation, .. }
            | LayerSpec::TransposeConv2d { activation, .. }
            | LayerSpec::Dense { activation, .. }
            | LayerSpec::Activation { activation } => *activation,
            _ => Activation::None,
        }
    }
}

fn valid_extent(input: usize, kernel: usize, stride: usize, layer: &str) -> Result<usize> {
    if kernel > input {
        return Err(Error::InvalidLayer(format!(
            "{layer}: kernel extent {kernel} larger than input extent {input}"
        )));
    }
    Ok((input - kernel) / stride + 1)
}

fn pool_extent(input: usize, pool: usize, mode: PoolMode) -> Result<usize> {
    match mode {
        PoolMode::Floor => {
            if pool > input {
                Err(Error::InvalidLayer(format!(
                    "maxpool: pool extent {pool} larger than input extent {input} in floor mode"
                )))
            } else {
                Ok(input / pool)
            }
        }
        PoolMode::Ceil => Ok(input.div_ceil(pool)),
    }
}

fn check_positive(value: usize, what: &str, layer: &str) -> Result<()> {
    if value == 0 {
        Err(Error::InvalidLayer(format!("{layer}: {what} must be >= 1")))
    } else {
        Ok(())
    }
}

/// Output shape of a single layer applied to `input`.
pub fn layer_output_shape(spec: &LayerSpec, input: &Shape) -> Result<Shape> {
    let dims = input.dims();
    match spec {
        LayerSpec::Conv2d {
            filters,
            kernel,
            stride,
            padding,
            ..
        } => {
            if dims.len() != 3 {
                return Err(Error::InvalidLayer(format!(
                    "conv2d expects (row, col, channel) input, got {input}"
                )));
            }
            check_positive(*filters, "filters", "conv2d")?;
            check_positive(kernel.0.min(kernel.1), "kernel extents", "conv2d")?;
            check_positive(stride.0.min(stride.1), "stride extents", "conv2d")?;
            let (h, w) = match padding {
                Padding::None => (
                    valid_extent(dims[0], kernel.0, stride.0, "conv2d")?,
                    valid_extent(dims[1], kernel.1, stride.1, "conv2d")?,
                ),
                Padding::Preserve => {
                    if *stride != (1, 1) {
                        return Err(Error::InvalidLayer(
                            "conv2d: padding=preserve requires stride 1".into(),
                        ));
                    }
                    if kernel.0 % 2 == 0 || kernel.1 % 2 == 0 {
                        return Err(Error::InvalidLayer(
                            "conv2d: padding=preserve requires odd kernels".into(),
                        ));
                    }
                    (dims[0], dims[1])
                }
            };
            Shape::new(vec![h, w, *filters])
        }
        LayerSpec::Conv3d {
            filters,
            kernel,
            padding,
            ..
        } => {
            if dims.len() != 4 {
                return Err(Error::InvalidLayer(format!(
                    "conv3d expects (row, col, depth, channel) input, got {input}"
                )));
            }
            check_positive(*filters, "filters", "conv3d")?;
            check_positive(kernel.0.min(kernel.1).min(kernel.2), "kernel extents", "conv3d")?;
            let (h, w, d) = match padding {
                Padding::None => (
                    valid_extent(dims[0], kernel.0, 1, "conv3d")?,
                    valid_extent(dims[1], kernel.1, 1, "conv3d")?,
                    valid_extent(dims[2], kernel.2, 1, "conv3d")?,
                ),
                Padding::Preserve => {
                    if kernel.0 % 2 == 0 || kernel.1 % 2 == 0 || kernel.2 % 2 == 0 {
                        return Err(Error::InvalidLayer(
                            "conv3d: padding=preserve requires odd kernels".into(),
                        ));
                    }
                    (dims[0], dims[1], dims[2])
                }
            };
            Shape::new(vec![h, w, d, *filters])
        }
        LayerSpec::TransposeConv2d {
            filters,
            kernel,
            stride,
            ..
        } => {
            if dims.len() != 3 {
                return Err(Error::InvalidLayer(format!(
                    "transpose_conv2d expects (row, col, channel) input, got {input}"
                )));
            }
            if *stride != (2, 2) {
                return Err(Error::InvalidLayer(
                    "transpose_conv2d: only stride (2, 2) is supported".into(),
                ));
            }
            check_positive(*filters, "filters", "transpose_conv2d")?;
            if kernel.0 < 2 || kernel.1 < 2 {
                return Err(Error::InvalidLayer(
                    "transpose_conv2d: kernel extents must be >= stride".into(),
                ));
            }
            Shape::new(vec![dims[0] * 2, dims[1] * 2, *filters])
        }
        LayerSpec::MaxPool2d { pool, mode } => {
            if dims.len() != 3 {
                return Err(Error::InvalidLayer(format!(
                    "maxpool2d expects (row, col, channel) input, got {input}"
                )));
            }
            check_positive(pool.0.min(pool.1), "pool extents", "maxpool2d")?;
            Shape::new(vec![
                pool_extent(dims[0], pool.0, *mode)?,
                pool_extent(dims[1], pool.1, *mode)?,
                dims[2],
            ])
        }
        LayerSpec::MaxPool3d { pool, mode } => {
            if dims.len() != 4 {
                return Err(Error::InvalidLayer(format!(
                    "maxpool3d expects (row, col, depth, channel) input, got {input}"
                )));
            }
            check_positive(pool.0.min(pool.1).min(pool.2), "pool extents", "maxpool3d")?;
            Shape::new(vec![
                pool_extent(dims[0], pool.0, *mode)?,
                pool_extent(dims[1], pool.1, *mode)?,
                pool_extent(dims[2], pool.2, *mode)?,
                dims[3],
            ])
        }
        LayerSpec::Flatten => Shape::new(vec![input.numel()]),
        LayerSpec::Dense { units, .. } => {
            if dims.len() != 1 {
                return Err(Error::InvalidLayer(format!(
                    "dense expects flat input (use flatten first), got {input}"
                )));
            }
            check_positive(*units, "units", "dense")?;
            Shape::new(vec![*units])
        }
        LayerSpec::Activation { .. } => Ok(input.clone()),
    }
}

/// Shapes flowing through a layer chain: `trace[0]` is the input shape,
/// `trace[i + 1]` the output of layer `i`.
pub fn shape_trace(layers: &[LayerSpec], input: &Shape) -> Result<Vec<Shape>> {
    let mut trace = Vec::with_capacity(layers.len() + 1);
    trace.push(input.clone());
    for spec in layers {
        let next = layer_output_shape(spec, trace.last().expect("non-empty"))?;
        trace.push(next);
    }
    Ok(trace)
}

/// Weight and bias shapes for a layer, if it has trainable parameters.
///
/// Conv weights are (k_h, k_w, [k_d,] in_channels, filters); transpose-conv
/// weights are (in_channels, k_h, k_w, filters) so the forward pass can use
/// them as a (channels × patch) matrix directly; dense weights are
/// (inputs, units).
pub fn param_shapes(spec: &LayerSpec, input: &Shape) -> Result<Option<(Shape, Shape)>> {
    let dims = input.dims();
    Ok(match spec {
        LayerSpec::Conv2d {
            filters, kernel, ..
        } => Some((
            Shape::new(vec![kernel.0, kernel.1, dims[2], *filters])?,
            Shape::new(vec![*filters])?,
        )),
        LayerSpec::Conv3d {
            filters, kernel, ..
        } => Some((
            Shape::new(vec![kernel.0, kernel.1, kernel.2, dims[3], *filters])?,
            Shape::new(vec![*filters])?,
        )),
        LayerSpec::TransposeConv2d {
            filters, kernel, ..
        } => Some((
            Shape::new(vec![dims[2], kernel.0, kernel.1, *filters])?,
            Shape::new(vec![*filters])?,
        )),
        LayerSpec::Dense { units, .. } => Some((
            Shape::new(vec![dims[0], *units])?,
            Shape::new(vec![*units])?,
        )),
        _ => None,
    })
}

/// Exact trainable parameter total for a layer chain: per conv layer
/// filters × (Πkernel × in_channels) + filters, per dense layer
/// units × inputs + units.
pub fn count_parameters(layers: &[LayerSpec], input: &Shape) -> Result<u64> {
    let trace = shape_trace(layers, input)?;
    let mut total: u64 = 0;
    for (spec, in_shape) in layers.iter().zip(&trace) {
        if let Some((w, b)) = param_shapes(spec, in_shape)? {
            total += w.numel() as u64 + b.numel() as u64;
        }
    }
    Ok(total)
}

/// Trainable parameters of one layer: weights plus bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlock<E: Scalar> {
    pub layer: usize,
    pub weight: Tensor<E>,
    pub bias: Tensor<E>,
}

/// Ordered list of per-layer parameter blocks. Gradients reuse the same
/// structure (one gradient tensor per parameter tensor).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<E: Scalar> {
    blocks: Vec<ParamBlock<E>>,
}

impl<E: Scalar> ParamStore<E> {
    pub fn from_blocks(blocks: Vec<ParamBlock<E>>) -> Self {
        ParamStore { blocks }
    }

    pub fn blocks(&self) -> &[ParamBlock<E>] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [ParamBlock<E>] {
        &mut self.blocks
    }

    pub fn total_len(&self) -> usize {
        self.blocks
            .iter()
            .map(|b| b.weight.numel() + b.bias.numel())
            .sum()
    }

    /// All-zero store with the same shapes, used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        ParamStore {
            blocks: self
                .blocks
                .iter()
                .map(|b| ParamBlock {
                    layer: b.layer,
                    weight: Tensor::zeros(b.weight.shape().clone()),
                    bias: Tensor::zeros(b.bias.shape().clone()),
                })
                .collect(),
        }
    }

    /// Elementwise accumulation; shapes must match block for block.
    pub fn add_in_place(&mut self, other: &ParamStore<E>) -> Result<()> {
        if self.blocks.len() != other.blocks.len() {
            return Err(Error::ShapeMismatch(
                "parameter stores have different block counts".into(),
            ));
        }
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            if a.weight.shape() != b.weight.shape() || a.bias.shape() != b.bias.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "parameter block shapes differ at layer {}",
                    a.layer
                )));
            }
            for (x, &y) in a.weight.data_mut().iter_mut().zip(b.weight.data()) {
                *x = *x + y;
            }
            for (x, &y) in a.bias.data_mut().iter_mut().zip(b.bias.data()) {
                *x = *x + y;
            }
        }
        Ok(())
    }

    pub fn scale_in_place(&mut self, factor: E) {
        for b in &mut self.blocks {
            for v in b.weight.data_mut() {
                *v = *v * factor;
            }
            for v in b.bias.data_mut() {
                *v = *v * factor;
            }
        }
    }
}

/// Per-layer forward state kept for the backward pass: every activation plus
/// the argmax routing of the pooling layers.
pub struct ForwardCache<E: Scalar> {
    acts: Vec<Tensor<E>>,
    argmax: Vec<Option<Vec<usize>>>,
}

impl<E: Scalar> ForwardCache<E> {
    pub fn output(&self) -> &Tensor<E> {
        self.acts.last().expect("cache holds input + outputs")
    }
}

/// A layer chain bound to an input shape, with materialized parameters.
#[derive(Debug, Clone)]
pub struct Model<E: Scalar> {
    layers: Vec<LayerSpec>,
    input_shape: Shape,
    trace: Vec<Shape>,
    params: ParamStore<E>,
    block_by_layer: Vec<Option<usize>>,
    seed: u64,
}

impl<E: Scalar> Model<E> {
    /// Builds the model and initializes parameters deterministically from
    /// `seed`: weights uniform in ±sqrt(6 / (fan_in + fan_out)), biases zero.
    pub fn new(layers: Vec<LayerSpec>, input_shape: Shape, seed: u64) -> Result<Self> {
        let trace = shape_trace(&layers, &input_shape)?;
        let mut blocks = Vec::new();
        let mut block_by_layer = vec![None; layers.len()];
        for (i, spec) in layers.iter().enumerate() {
            if let Some((w_shape, b_shape)) = param_shapes(spec, &trace[i])? {
                let limit = glorot_limit::<E>(spec, &trace[i]);
                let layer_seed = derive_seed(seed, i as u64);
                block_by_layer[i] = Some(blocks.len());
                blocks.push(ParamBlock {
                    layer: i,
                    weight: Tensor::random_uniform(w_shape, limit, layer_seed),
                    bias: Tensor::zeros(b_shape),
                });
            }
        }
        Ok(Model {
            layers,
            input_shape,
            trace,
            params: ParamStore { blocks },
            block_by_layer,
            seed,
        })
    }

    /// Rebuilds a model around existing parameters (weight-file loading).
    pub fn with_params(
        layers: Vec<LayerSpec>,
        input_shape: Shape,
        params: ParamStore<E>,
        seed: u64,
    ) -> Result<Self> {
        let trace = shape_trace(&layers, &input_shape)?;
        let mut block_by_layer = vec![None; layers.len()];
        let mut expected = Vec::new();
        for (i, spec) in layers.iter().enumerate() {
            if let Some(shapes) = param_shapes(spec, &trace[i])? {
                expected.push((i, shapes));
            }
        }
        if expected.len() != params.blocks.len() {
            return Err(Error::InvalidLayer(format!(
                "parameter store has {} blocks, layer chain needs {}",
                params.blocks.len(),
                expected.len()
            )));
        }
        for (block_idx, (block, (layer, (w_shape, b_shape)))) in
            params.blocks.iter().zip(&expected).enumerate()
        {
            if block.layer != *layer
                || block.weight.shape() != w_shape
                || block.bias.shape() != b_shape
            {
                return Err(Error::InvalidLayer(format!(
                    "parameter block {block_idx} does not match layer {layer} ({})",
                    layers[*layer].name()
                )));
            }
            block_by_layer[*layer] = Some(block_idx);
        }
        Ok(Model {
            layers,
            input_shape,
            trace,
            params,
            block_by_layer,
            seed,
        })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_shape(&self) -> &Shape {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &Shape {
        self.trace.last().expect("trace includes input")
    }

    /// Shapes after each layer; `shape_trace()[0]` is the input shape.
    pub fn shape_trace(&self) -> &[Shape] {
        &self.trace
    }

    pub fn params(&self) -> &ParamStore<E> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<E> {
        &mut self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn count_parameters(&self) -> u64 {
        count_parameters(&self.layers, &self.input_shape).expect("validated at construction")
    }

    fn block_for(&self, layer: usize) -> Option<&ParamBlock<E>> {
        self.block_by_layer[layer].map(|i| &self.params.blocks[i])
    }

    pub fn forward(&self, input: &Tensor<E>) -> Result<Tensor<E>> {
        let (out, _) = self.run_forward(input, false)?;
        Ok(out)
    }

    pub fn forward_cached(&self, input: &Tensor<E>) -> Result<(Tensor<E>, ForwardCache<E>)> {
        let (out, cache) = self.run_forward(input, true)?;
        Ok((out, cache.expect("cache requested")))
    }

    fn run_forward(
        &self,
        input: &Tensor<E>,
        keep_cache: bool,
    ) -> Result<(Tensor<E>, Option<ForwardCache<E>>)> {
        if input.shape() != &self.input_shape {
            return Err(Error::ShapeMismatch(format!(
                "model expects input {}, got {}",
                self.input_shape,
                input.shape()
            )));
        }
        let mut acts: Vec<Tensor<E>> = Vec::new();
        let mut argmax: Vec<Option<Vec<usize>>> = Vec::new();
        let mut current = input.clone();
        if keep_cache {
            acts.push(current.clone());
        }
        for (i, spec) in self.layers.iter().enumerate() {
            let (out, routing) = self.apply_layer(i, spec, &current)?;
            if keep_cache {
                acts.push(out.clone());
                argmax.push(routing);
            }
            current = out;
        }
        let cache = keep_cache.then_some(ForwardCache { acts, argmax });
        Ok((current, cache))
    }

    fn apply_layer(
        &self,
        index: usize,
        spec: &LayerSpec,
        input: &Tensor<E>,
    ) -> Result<(Tensor<E>, Option<Vec<usize>>)> {
        let out_shape = self.trace[index + 1].clone();
        let in_shape = &self.trace[index];
        match spec {
            LayerSpec::Conv2d {
                filters,
                activation,
                ..
            } => {
                let block = self.block_for(index).expect("conv2d has params");
                let g = conv2d_geom(spec, in_shape, &out_shape);
                let col = im2col2d(input.data(), &g);
                let mut out = matmul(&col, block.weight.data(), g.positions(), g.patch_len(), *filters);
                add_bias(&mut out, block.bias.data());
                apply_activation(*activation, &mut out);
                Ok((Tensor::from_vec(out_shape, out)?, None))
            }
            LayerSpec::Conv3d {
                filters,
                activation,
                ..
            } => {
                let block = self.block_for(index).expect("conv3d has params");
                let g = conv3d_geom(spec, in_shape, &out_shape);
                let col = im2col3d(input.data(), &g);
                let mut out = matmul(&col, block.weight.data(), g.positions(), g.patch_len(), *filters);
                add_bias(&mut out, block.bias.data());
                apply_activation(*activation, &mut out);
                Ok((Tensor::from_vec(out_shape, out)?, None))
            }
            LayerSpec::TransposeConv2d { activation, .. } => {
                let block = self.block_for(index).expect("transpose_conv2d has params");
                let g = transpose_conv2d_geom(spec, in_shape, &out_shape);
                let in_c = in_shape.dims()[2];
                // Each input pixel scatters its kernel-weighted contribution;
                // overlaps sum. Lowered as matmul + col2im on the output image.
                let scatter = matmul(
                    input.data(),
                    block.weight.data(),
                    g.positions(),
                    in_c,
                    g.patch_len(),
                );
                let mut out = col2im2d(&scatter, &g);
                add_bias(&mut out, block.bias.data());
                apply_activation(*activation, &mut out);
                Ok((Tensor::from_vec(out_shape, out)?, None))
            }
            LayerSpec::MaxPool2d { pool, mode } => {
                let d = in_shape.dims();
                let o = out_shape.dims();
                let (out, routing) = maxpool2d(
                    input.data(),
                    d[0],
                    d[1],
                    d[2],
                    pool.0,
                    pool.1,
                    o[0],
                    o[1],
                    *mode == PoolMode::Ceil,
                );
                Ok((Tensor::from_vec(out_shape, out)?, Some(routing)))
            }
            LayerSpec::MaxPool3d { pool, mode } => {
                let d = in_shape.dims();
                let o = out_shape.dims();
                let (out, routing) = maxpool3d(
                    input.data(),
                    (d[0], d[1], d[2]),
                    d[3],
                    *pool,
                    (o[0], o[1], o[2]),
                    *mode == PoolMode::Ceil,
                );
                Ok((Tensor::from_vec(out_shape, out)?, Some(routing)))
            }
            LayerSpec::Flatten => Ok((input.reshaped(out_shape)?, None)),
            LayerSpec::Dense { units, activation } => {
                let block = self.block_for(index).expect("dense has params");
                let n = in_shape.dims()[0];
                let mut out = matmul(input.data(), block.weight.data(), 1, n, *units);
                add_bias(&mut out, block.bias.data());
                apply_activation(*activation, &mut out);
                Ok((Tensor::from_vec(out_shape, out)?, None))
            }
            LayerSpec::Activation { activation } => {
                let mut out = input.data().to_vec();
                apply_activation(*activation, &mut out);
                Ok((Tensor::from_vec(out_shape, out)?, None))
            }
        }
    }

    /// Exact reverse-mode gradients of a scalar loss for every parameter
    /// block, given the cached forward pass and dLoss/dOutput.
    pub fn backward(&self, cache: &ForwardCache<E>, grad_out: &Tensor<E>) -> Result<ParamStore<E>> {
        if cache.acts.len() != self.layers.len() + 1 {
            return Err(Error::InvalidArgument(
                "forward cache does not match model depth".into(),
            ));
        }
        if grad_out.shape() != self.output_shape() {
            return Err(Error::ShapeMismatch(format!(
                "gradient shape {} does not match model output {}",
                grad_out.shape(),
                self.output_shape()
            )));
        }
        let mut grads = self.params.zeros_like();
        let mut grad = grad_out.clone();
        for (i, spec) in self.layers.iter().enumerate().rev() {
            let input = &cache.acts[i];
            let output = &cache.acts[i + 1];
            // Fold the activation derivative into the incoming gradient.
            let mut dpre = grad.data().to_vec();
            activation_backward(spec.activation(), output.data(), &mut dpre);
            let in_shape = &self.trace[i];
            let out_shape = &self.trace[i + 1];
            grad = match spec {
                LayerSpec::Conv2d { filters, .. } => {
                    let block_idx = self.block_by_layer[i].expect("conv2d has params");
                    let block = &self.params.blocks[block_idx];
                    let g = conv2d_geom(spec, in_shape, out_shape);
                    let col = im2col2d(input.data(), &g);
                    let gblock = &mut grads.blocks[block_idx];
                    gblock.weight.data_mut().copy_from_slice(&matmul_at(&col, &dpre, g.positions(), g.patch_len(), *filters));
                    gblock.bias.data_mut().copy_from_slice(&bias_grad(&dpre, *filters));
                    let dcol = matmul_bt(&dpre, block.weight.data(), g.positions(), *filters, g.patch_len());
                    Tensor::from_vec(in_shape.clone(), col2im2d(&dcol, &g))?
                }
                LayerSpec::Conv3d { filters, .. } => {
                    let block_idx = self.block_by_layer[i].expect("conv3d has params");
                    let block = &self.params.blocks[block_idx];
                    let g = conv3d_geom(spec, in_shape, out_shape);
                    let col = im2col3d(input.data(), &g);
                    let gblock = &mut grads.blocks[block_idx];
                    gblock.weight.data_mut().copy_from_slice(&matmul_at(&col, &dpre, g.positions(), g.patch_len(), *filters));
                    gblock.bias.data_mut().copy_from_slice(&bias_grad(&dpre, *filters));
                    let dcol = matmul_bt(&dpre, block.weight.data(), g.positions(), *filters, g.patch_len());
                    Tensor::from_vec(in_shape.clone(), col2im3d(&dcol, &g))?
                }
                LayerSpec::TransposeConv2d { filters, .. } => {
                    let block_idx = self.block_by_layer[i].expect("transpose_conv2d has params");
                    let block = &self.params.blocks[block_idx];
                    let g = transpose_conv2d_geom(spec, in_shape, out_shape);
                    let in_c = in_shape.dims()[2];
                    let dscatter = im2col2d(&dpre, &g);
                    let gblock = &mut grads.blocks[block_idx];
                    gblock.weight.data_mut().copy_from_slice(&matmul_at(
                        input.data(),
                        &dscatter,
                        g.positions(),
                        in_c,
                        g.patch_len(),
                    ));
                    gblock.bias.data_mut().copy_from_slice(&bias_grad(&dpre, *filters));
                    let dx = matmul_bt(&dscatter, block.weight.data(), g.positions(), g.patch_len(), in_c);
                    Tensor::from_vec(in_shape.clone(), dx)?
                }
                LayerSpec::MaxPool2d { .. } | LayerSpec::MaxPool3d { .. } => {
                    let routing = cache.argmax[i].as_ref().expect("pool cached argmax");
                    Tensor::from_vec(
                        in_shape.clone(),
                        maxpool_backward(&dpre, routing, in_shape.numel()),
                    )?
                }
                LayerSpec::Flatten => Tensor::from_vec(in_shape.clone(), dpre)?,
                LayerSpec::Dense { units, .. } => {
                    let block_idx = self.block_by_layer[i].expect("dense has params");
                    let block = &self.params.blocks[block_idx];
                    let n = in_shape.dims()[0];
                    let gblock = &mut grads.blocks[block_idx];
                    gblock.weight.data_mut().copy_from_slice(&matmul_at(input.data(), &dpre, 1, n, *units));
                    gblock.bias.data_mut().copy_from_slice(&dpre);
                    let dx = matmul_bt(&dpre, block.weight.data(), 1, *units, n);
                    Tensor::from_vec(in_shape.clone(), dx)?
                }
                LayerSpec::Activation { .. } => Tensor::from_vec(in_shape.clone(), dpre)?,
            };
        }
        Ok(grads)
    }
}

fn glorot_limit<E: Scalar>(spec: &LayerSpec, input: &Shape) -> E {
    let dims = input.dims();
    let (fan_in, fan_out) = match spec {
        LayerSpec::Conv2d {
            filters, kernel, ..
        } => (
            kernel.0 * kernel.1 * dims[2],
            kernel.0 * kernel.1 * filters,
        ),
        LayerSpec::Conv3d {
            filters, kernel, ..
        } => (
            kernel.0 * kernel.1 * kernel.2 * dims[3],
            kernel.0 * kernel.1 * kernel.2 * filters,
        ),
        LayerSpec::TransposeConv2d {
            filters, kernel, ..
        } => (
            kernel.0 * kernel.1 * dims[2],
            kernel.0 * kernel.1 * filters,
        ),
        LayerSpec::Dense { units, .. } => (dims[0], *units),
        _ => return E::zero(),
    };
    E::of_f64((6.0 / (fan_in + fan_out) as f64).sqrt())
}

fn conv2d_geom(spec: &LayerSpec, input: &Shape, output: &Shape) -> Geom2d {
    let (kernel, stride, padding) = match spec {
        LayerSpec::Conv2d {
            kernel,
            stride,
            padding,
            ..
        } => (*kernel, *stride, *padding),
        _ => unreachable!("conv2d geometry on non-conv layer"),
    };
    let d = input.dims();
    let o = output.dims();
    let (pad_h, pad_w) = match padding {
        Padding::None => (0, 0),
        Padding::Preserve => ((kernel.0 - 1) / 2, (kernel.1 - 1) / 2),
    };
    Geom2d {
        in_h: d[0],
        in_w: d[1],
        channels: d[2],
        kh: kernel.0,
        kw: kernel.1,
        sh: stride.0,
        sw: stride.1,
        pad_h,
        pad_w,
        out_h: o[0],
        out_w: o[1],
    }
}

fn conv3d_geom(spec: &LayerSpec, input: &Shape, output: &Shape) -> Geom3d {
    let (kernel, padding) = match spec {
        LayerSpec::Conv3d {
            kernel, padding, ..
        } => (*kernel, *padding),
        _ => unreachable!("conv3d geometry on non-conv layer"),
    };
    let d = input.dims();
    let o = output.dims();
    let (pad_h, pad_w, pad_d) = match padding {
        Padding::None => (0, 0, 0),
        Padding::Preserve => ((kernel.0 - 1) / 2, (kernel.1 - 1) / 2, (kernel.2 - 1) / 2),
    };
    Geom3d {
        in_h: d[0],
        in_w: d[1],
        in_d: d[2],
        channels: d[3],
        kh: kernel.0,
        kw: kernel.1,
        kd: kernel.2,
        pad_h,
        pad_w,
        pad_d,
        out_h: o[0],
        out_w: o[1],
        out_d: o[2],
    }
}

/// Geometry of the stride-2 convolution that mirrors a size-doubling
/// transpose convolution: positions are the transpose conv's INPUT pixels,
/// the "image" is its OUTPUT.
fn transpose_conv2d_geom(spec: &LayerSpec, input: &Shape, output: &Shape) -> Geom2d {
    let kernel = match spec {
        LayerSpec::TransposeConv2d { kernel, .. } => *kernel,
        _ => unreachable!("transpose geometry on non-transpose layer"),
    };
    let d = input.dims();
    let o = output.dims();
    Geom2d {
        in_h: o[0],
        in_w: o[1],
        channels: o[2],
        kh: kernel.0,
        kw: kernel.1,
        sh: 2,
        sw: 2,
        pad_h: kernel.0 / 2,
        pad_w: kernel.1 / 2,
        out_h: d[0],
        out_w: d[1],
    }
}

pub(crate) fn apply_activation<E: Scalar>(act: Activation, data: &mut [E]) {
    match act {
        Activation::None => {}
        Activation::Relu => {
            for v in data {
                if *v < E::zero() {
                    *v = E::zero();
                }
            }
        }
        Activation::Sigmoid => {
            for v in data {
                *v = E::one() / (E::one() + (-*v).exp());
            }
        }
    }
}

/// Multiplies `grad` in place by the activation derivative expressed through
/// the post-activation output `y`: relu' = [y > 0], sigmoid' = y(1 − y).
fn activation_backward<E: Scalar>(act: Activation, output: &[E], grad: &mut [E]) {
    match act {
        Activation::None => {}
        Activation::Relu => {
            for (g, &y) in grad.iter_mut().zip(output) {
                if y <= E::zero() {
                    *g = E::zero();
                }
            }
        }
        Activation::Sigmoid => {
            for (g, &y) in grad.iter_mut().zip(output) {
                *g = *g * y * (E::one() - y);
            }
        }
    }
}
