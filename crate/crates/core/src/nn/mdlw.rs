//! MDLW weight files.
//!
//! Layout: 8-byte magic `MDLWv001`, a little-endian u32 length prefix, a
//! UTF-8 JSON header (layer specs, input shape, numeric width, seed, block
//! shapes), then the raw little-endian weight and bias values in layer
//! order. Write → read → write is bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::atomic_write;
use crate::nn::{param_shapes, shape_trace, LayerSpec, Model, ParamBlock, ParamStore};
use crate::tensor::{NumericWidth, Scalar, Shape, Tensor};

pub const MDLW_MAGIC: &[u8; 8] = b"MDLWv001";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    numeric_width: NumericWidth,
    seed: u64,
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    blocks: Vec<BlockMeta>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BlockMeta {
    layer: usize,
    weight_shape: Vec<usize>,
    bias_shape: Vec<usize>,
}

pub fn encode_model<E: Scalar>(model: &Model<E>) -> Result<Vec<u8>> {
    let header = Header {
        numeric_width: E::WIDTH,
        seed: model.seed(),
        input_shape: model.input_shape().dims().to_vec(),
        layers: model.layers().to_vec(),
        blocks: model
            .params()
            .blocks()
            .iter()
            .map(|b| BlockMeta {
                layer: b.layer,
                weight_shape: b.weight.dims().to_vec(),
                bias_shape: b.bias.dims().to_vec(),
            })
            .collect(),
    };
    let header_bytes =
        serde_json::to_vec(&header).map_err(|e| Error::format("MDLW", e.to_string()))?;
    let mut out = Vec::with_capacity(
        8 + 4 + header_bytes.len() + model.params().total_len() * E::WIDTH.byte_len(),
    );
    out.extend_from_slice(MDLW_MAGIC);
    out.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    for block in model.params().blocks() {
        for &v in block.weight.data() {
            v.write_le(&mut out);
        }
        for &v in block.bias.data() {
            v.write_le(&mut out);
        }
    }
    Ok(out)
}

pub fn decode_model<E: Scalar>(bytes: &[u8]) -> Result<Model<E>> {
    if bytes.len() < 12 || &bytes[..8] != MDLW_MAGIC {
        return Err(Error::format("MDLW", "missing or wrong magic"));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body_start = 12 + header_len;
    if bytes.len() < body_start {
        return Err(Error::format("MDLW", "truncated header"));
    }
    let header: Header = serde_json::from_slice(&bytes[12..body_start])
        .map_err(|e| Error::format("MDLW", format!("bad header JSON: {e}")))?;
    if header.numeric_width != E::WIDTH {
        return Err(Error::format(
            "MDLW",
            format!(
                "file holds {} weights, reader expects {}",
                header.numeric_width.name(),
                E::WIDTH.name()
            ),
        ));
    }
    let input_shape = Shape::new(header.input_shape.clone())
        .map_err(|e| Error::format("MDLW", e.to_string()))?;
    let trace = shape_trace(&header.layers, &input_shape)
        .map_err(|e| Error::format("MDLW", format!("inconsistent layer chain: {e}")))?;

    let width = E::WIDTH.byte_len();
    let mut offset = body_start;
    let mut blocks: Vec<ParamBlock<E>> = Vec::with_capacity(header.blocks.len());
    for meta in &header.blocks {
        if meta.layer >= header.layers.len() {
            return Err(Error::format("MDLW", "block references missing layer"));
        }
        let expected = param_shapes(&header.layers[meta.layer], &trace[meta.layer])
            .map_err(|e| Error::format("MDLW", e.to_string()))?
            .ok_or_else(|| Error::format("MDLW", "block on a layer without parameters"))?;
        if expected.0.dims() != meta.weight_shape.as_slice()
            || expected.1.dims() != meta.bias_shape.as_slice()
        {
            return Err(Error::format(
                "MDLW",
                format!("block shapes do not match layer {} spec", meta.layer),
            ));
        }
        let weight = read_tensor::<E>(bytes, &mut offset, &expected.0, width)?;
        let bias = read_tensor::<E>(bytes, &mut offset, &expected.1, width)?;
        blocks.push(ParamBlock {
            layer: meta.layer,
            weight,
            bias,
        });
    }
    if offset != bytes.len() {
        return Err(Error::format(
            "MDLW",
            format!("{} trailing bytes after weight blocks", bytes.len() - offset),
        ));
    }
    let params = ParamStore::from_blocks(blocks);
    let model = Model::with_params(header.layers, input_shape, params, header.seed)
        .map_err(|e| Error::format("MDLW", e.to_string()))?;
    for b in model.params().blocks() {
        b.weight.check_finite("MDLW weight block")?;
        b.bias.check_finite("MDLW bias block")?;
    }
    Ok(model)
}

fn read_tensor<E: Scalar>(
    bytes: &[u8],
    offset: &mut usize,
    shape: &Shape,
    width: usize,
) -> Result<Tensor<E>> {
    let n = shape.numel();
    let end = *offset + n * width;
    if bytes.len() < end {
        return Err(Error::format("MDLW", "truncated weight data"));
    }
    let data = bytes[*offset..end]
        .chunks_exact(width)
        .map(E::read_le)
        .collect();
    *offset = end;
    Tensor::from_vec(shape.clone(), data)
}

pub fn write_model<E: Scalar>(path: &Path, model: &Model<E>) -> Result<()> {
    atomic_write(path, &encode_model(model)?)
}

pub fn read_model<E: Scalar>(path: &Path) -> Result<Model<E>> {
    let bytes =
        std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    decode_model(&bytes)
}
