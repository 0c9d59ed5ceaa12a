//! Finite-difference verification of the backward pass.
//!
//! Runs in 64-bit mode only: central differences with h = 1e-5 need the
//! headroom. Each parameter block (weight or bias tensor) gets at least 20
//! sampled entries compared against the analytic gradient.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{LossKind, Model, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Central-difference step h.
    pub step: f64,
    /// Pass iff every sampled relative error is <= tolerance.
    pub tolerance: f64,
    /// Entries sampled per parameter block (all entries if the block is smaller).
    pub samples_per_block: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            tolerance: 1e-4,
            samples_per_block: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BlockReport {
    pub layer: usize,
    pub layer_name: &'static str,
    /// "weight" or "bias".
    pub param: &'static str,
    pub max_rel_err: f64,
    pub samples: usize,
    /// Samples whose ±h probes crossed a relu kink or switched a pool argmax;
    /// central differences do not measure the derivative there.
    pub skipped: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockReport>,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl GradCheckReport {
    pub fn summary(&self) -> String {
        let mut out = String::new();
        for b in &self.blocks {
            out.push_str(&format!(
                "layer {:>2} {:<18} {:<6} max rel err {:.3e} ({} samples, {} at kinks)\n",
                b.layer, b.layer_name, b.param, b.max_rel_err, b.samples, b.skipped
            ));
        }
        out.push_str(&format!(
            "overall max rel err {:.3e} vs tolerance {:.1e}: {}",
            self.max_rel_err,
            self.tolerance,
            if self.pass { "PASS" } else { "FAIL" }
        ));
        out
    }
}

/// |a − n| / max(|a|, |n|), treated as 0 when both magnitudes are below 1e-10.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs());
    if denom < 1e-10 {
        0.0
    } else {
        (a - b).abs() / denom
    }
}

/// Reverse-mode gradients of `loss(model(input), target)` for every block.
pub fn analytic_gradients(
    model: &Model<f64>,
    loss: LossKind,
    input: &Tensor<f64>,
    target: &Tensor<f64>,
) -> Result<ParamStore<f64>> {
    let (out, cache) = model.forward_cached(input)?;
    let grad_out = loss.gradient(&out, target)?;
    model.backward(&cache, &grad_out)
}

fn loss_at(model: &Model<f64>, loss: LossKind, input: &Tensor<f64>, target: &Tensor<f64>) -> Result<f64> {
    let out = model.forward(input)?;
    let v = loss.value(&out, target)?;
    if !v.is_finite() {
        return Err(Error::NonFinite("gradient-check loss".into()));
    }
    Ok(v)
}

/// The piecewise-linear routing of one forward pass: which relu units were
/// active and which input each pool cell selected. If this differs between
/// the θ+h and θ−h probes, the loss is not differentiable on the probed
/// interval and the finite difference is meaningless for that sample.
#[derive(PartialEq, Eq)]
struct Routing {
    relu_active: Vec<bool>,
    pool_argmax: Vec<usize>,
}

fn loss_and_routing(
    model: &Model<f64>,
    loss: LossKind,
    input: &Tensor<f64>,
    target: &Tensor<f64>,
) -> Result<(f64, Routing)> {
    let (out, cache) = model.forward_cached(input)?;
    let v = loss.value(&out, target)?;
    if !v.is_finite() {
        return Err(Error::NonFinite("gradient-check loss".into()));
    }
    let mut relu_active = Vec::new();
    let mut pool_argmax = Vec::new();
    for (i, spec) in model.layers().iter().enumerate() {
        if spec.activation() == crate::nn::Activation::Relu {
            relu_active.extend(cache.acts[i + 1].data().iter().map(|&v| v > 0.0));
        }
        if let Some(routing) = &cache.argmax[i] {
            pool_argmax.extend_from_slice(routing);
        }
    }
    Ok((
        v,
        Routing {
            relu_active,
            pool_argmax,
        },
    ))
}

/// Central finite difference of the loss w.r.t. one parameter entry.
pub fn numeric_gradient(
    model: &Model<f64>,
    loss: LossKind,
    input: &Tensor<f64>,
    target: &Tensor<f64>,
    block: usize,
    param: &str,
    index: usize,
    step: f64,
) -> Result<f64> {
    let mut probe = model.clone();
    let poke = |m: &mut Model<f64>, delta: f64| {
        let b = &mut m.params_mut().blocks_mut()[block];
        let slot = match param {
            "weight" => &mut b.weight.data_mut()[index],
            "bias" => &mut b.bias.data_mut()[index],
            other => panic!("unknown param kind {other}"),
        };
        *slot += delta;
    };
    poke(&mut probe, step);
    let plus = loss_at(&probe, loss, input, target)?;
    poke(&mut probe, -2.0 * step);
    let minus = loss_at(&probe, loss, input, target)?;
    Ok((plus - minus) / (2.0 * step))
}

/// Compares analytic against central-difference gradients on sampled entries
/// of every parameter block.
pub fn gradcheck(
    model: &Model<f64>,
    loss: LossKind,
    input: &Tensor<f64>,
    target: &Tensor<f64>,
    config: GradCheckConfig,
) -> Result<GradCheckReport> {
    let analytic = analytic_gradients(model, loss, input, target)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut probe = model.clone();
    let mut blocks = Vec::new();
    let mut overall: f64 = 0.0;
    for (bi, ablock) in analytic.blocks().iter().enumerate() {
        let layer = ablock.layer;
        let layer_name = model.layers()[layer].name();
        for (param, grad_tensor) in [("weight", &ablock.weight), ("bias", &ablock.bias)] {
            let len = grad_tensor.numel();
            let picks = sample_indices(&mut rng, len, config.samples_per_block);
            let mut max_rel = 0.0f64;
            let mut used = 0usize;
            let mut skipped = 0usize;
            for &idx in &picks {
                let step = config.step;
                // Poke-and-restore on one clone rather than recloning per sample.
                let poke = |m: &mut Model<f64>, d: f64| {
                    let b = &mut m.params_mut().blocks_mut()[bi];
                    let slot = match param {
                        "weight" => &mut b.weight.data_mut()[idx],
                        _ => &mut b.bias.data_mut()[idx],
                    };
                    *slot += d;
                };
                poke(&mut probe, step);
                let (plus, route_plus) = loss_and_routing(&probe, loss, input, target)?;
                poke(&mut probe, -2.0 * step);
                let (minus, route_minus) = loss_and_routing(&probe, loss, input, target)?;
                poke(&mut probe, step); // restore
                if route_plus != route_minus {
                    skipped += 1;
                    continue;
                }
                let numeric = (plus - minus) / (2.0 * step);
                let rel = relative_error(grad_tensor.data()[idx], numeric);
                max_rel = max_rel.max(rel);
                used += 1;
            }
            overall = overall.max(max_rel);
            blocks.push(BlockReport {
                layer,
                layer_name,
                param,
                max_rel_err: max_rel,
                samples: used,
                skipped,
            });
        }
    }
    Ok(GradCheckReport {
        blocks,
        max_rel_err: overall,
        tolerance: config.tolerance,
        pass: overall <= config.tolerance,
    })
}

fn sample_indices(rng: &mut ChaCha8Rng, len: usize, want: usize) -> Vec<usize> {
    if len <= want {
        (0..len).collect()
    } else {
        rand::seq::index::sample(rng, len, want).into_vec()
    }
}
