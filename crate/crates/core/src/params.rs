//! Trainable parameter container for the stacked encoder/decoder model and
//! its binary on-disk format.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FddError, Result};
use crate::lstm::{LstmParams, GATE_F};
use crate::tensor::Tensor2;

const MAGIC: &[u8; 8] = b"FDDPARAM";
pub const FORMAT_VERSION: u32 = 1;

/// Every trainable weight and bias of a stacked recurrent autoencoder with a
/// softmax head.
///
/// `layers[..encoder_layers]` form the encoder; the hidden state of the last
/// encoder layer is the latent code. The remaining layers are the decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub layers: Vec<LstmParams>,
    pub encoder_layers: usize,
    /// `m × d_z`
    pub classifier_w: Tensor2,
    /// length `m`
    pub classifier_b: Vec<f64>,
}

impl ParamSet {
    /// All-zero parameters with the given layout.
    pub fn zeros(layer_dims: &[(usize, usize)], encoder_layers: usize, classes: usize) -> Result<Self> {
        check_layout(layer_dims, encoder_layers, classes)?;
        let dz = layer_dims[encoder_layers - 1].1;
        Ok(Self {
            layers: layer_dims.iter().map(|&(dx, dh)| LstmParams::zeros(dx, dh)).collect(),
            encoder_layers,
            classifier_w: Tensor2::zeros(classes, dz),
            classifier_b: vec![0.0; classes],
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| LstmParams::zeros(l.input_dim(), l.hidden_dim()))
                .collect(),
            encoder_layers: self.encoder_layers,
            classifier_w: Tensor2::zeros(self.classifier_w.rows(), self.classifier_w.cols()),
            classifier_b: vec![0.0; self.classifier_b.len()],
        }
    }

    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| (l.input_dim(), l.hidden_dim())).collect()
    }

    pub fn classes(&self) -> usize {
        self.classifier_b.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.classifier_w.cols()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    /// Total number of scalar parameters.
    pub fn len(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Parameter blocks in canonical order: per layer `W, R, b`, then `W_c, b_c`.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(3 * self.layers.len() + 2);
        for l in &self.layers {
            out.push(l.w.as_slice());
            out.push(l.r.as_slice());
            out.push(l.b.as_slice());
        }
        out.push(self.classifier_w.as_slice());
        out.push(self.classifier_b.as_slice());
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(3 * self.layers.len() + 2);
        for l in &mut self.layers {
            out.push(l.w.as_mut_slice());
            out.push(l.r.as_mut_slice());
            out.push(l.b.as_mut_slice());
        }
        out.push(self.classifier_w.as_mut_slice());
        out.push(self.classifier_b.as_mut_slice());
        out
    }

    /// Weight matrices only (no biases): every `W`, `R` and `W_c`.
    pub fn weight_slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(2 * self.layers.len() + 1);
        for l in &self.layers {
            out.push(l.w.as_slice());
            out.push(l.r.as_slice());
        }
        out.push(self.classifier_w.as_slice());
        out
    }

    /// Sum of squares of all weight matrices.
    pub fn weight_sum_squares(&self) -> f64 {
        self.weight_slices()
            .iter()
            .flat_map(|s| s.iter())
            .map(|v| v * v)
            .sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.slices().concat()
    }

    /// Overwrites every parameter from a flat vector in canonical order.
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(FddError::dim(format!(
                "flat vector has {} entries, parameter set has {}",
                flat.len(),
                self.len()
            )));
        }
        let mut offset = 0;
        for s in self.slices_mut() {
            let n = s.len();
            s.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &ParamSet) -> bool {
        self.encoder_layers == other.encoder_layers
            && self.layer_dims() == other.layer_dims()
            && self.classifier_w.shape() == other.classifier_w.shape()
    }

    /// `self += scale · other`
    pub fn add_scaled(&mut self, other: &ParamSet, scale: f64) -> Result<()> {
        if !self.same_shape(other) {
            return Err(FddError::dim("parameter sets differ in shape"));
        }
        for (dst, src) in self.slices_mut().into_iter().zip(other.slices()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
        Ok(())
    }

    pub fn l2_norm(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    /// Writes the binary container: magic, version, dimension table, then
    /// little-endian `f64` arrays in canonical order.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(MAGIC)?;
        write_u32(&mut out, FORMAT_VERSION)?;
        write_u32(&mut out, self.layers.len() as u32)?;
        write_u32(&mut out, self.encoder_layers as u32)?;
        for (dx, dh) in self.layer_dims() {
            write_u32(&mut out, dx as u32)?;
            write_u32(&mut out, dh as u32)?;
        }
        write_u32(&mut out, self.classes() as u32)?;
        write_u32(&mut out, self.latent_dim() as u32)?;
        for s in self.slices() {
            for v in s {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(FddError::Input("not a parameter container".into()));
        }
        let version = read_u32(&mut input)?;
        if version != FORMAT_VERSION {
            return Err(FddError::Input(format!("unsupported parameter format version {version}")));
        }
        let n_layers = read_u32(&mut input)? as usize;
        let encoder_layers = read_u32(&mut input)? as usize;
        let mut dims = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let dx = read_u32(&mut input)? as usize;
            let dh = read_u32(&mut input)? as usize;
            dims.push((dx, dh));
        }
        let classes = read_u32(&mut input)? as usize;
        let dz = read_u32(&mut input)? as usize;
        let mut params = ParamSet::zeros(&dims, encoder_layers, classes)?;
        if params.latent_dim() != dz {
            return Err(FddError::Input("latent size disagrees with dimension table".into()));
        }
        let mut buf = [0u8; 8];
        for s in params.slices_mut() {
            for v in s.iter_mut() {
                input.read_exact(&mut buf)?;
                *v = f64::from_le_bytes(buf);
            }
        }
        Ok(params)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }
}

fn write_u32<W: Write>(out: &mut W, v: u32) -> Result<()> {
    out.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn check_layout(layer_dims: &[(usize, usize)], encoder_layers: usize, classes: usize) -> Result<()> {
    if layer_dims.is_empty() {
        return Err(FddError::dim("at least one layer is required"));
    }
    if encoder_layers == 0 || encoder_layers > layer_dims.len() {
        return Err(FddError::dim(format!(
            "encoder depth {encoder_layers} invalid for {} layers",
            layer_dims.len()
        )));
    }
    if classes < 2 {
        return Err(FddError::dim(format!("need at least 2 classes, got {classes}")));
    }
    for (k, &(dx, dh)) in layer_dims.iter().enumerate() {
        if dx == 0 || dh == 0 {
            return Err(FddError::dim(format!("layer {k} has a zero dimension")));
        }
        if k > 0 && layer_dims[k - 1].1 != dx {
            return Err(FddError::dim(format!(
                "layer {k} expects input {dx} but layer {} emits {}",
                k - 1,
                layer_dims[k - 1].1
            )));
        }
    }
    Ok(())
}

/// Samples a fresh parameter set.
///
/// Weights are drawn uniformly from `±sqrt(1/fan_in)` where `fan_in` is the
/// width of the vector the matrix multiplies (`d_x` for `W`, `d_h` for `R`,
/// `d_z` for `W_c`). Biases start at zero except the forget-gate block, which
/// starts at 1.
pub fn init_params(
    layer_dims: &[(usize, usize)],
    encoder_layers: usize,
    classes: usize,
    seed: u64,
) -> Result<ParamSet> {
    let mut params = ParamSet::zeros(layer_dims, encoder_layers, classes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for layer in &mut params.layers {
        let (dx, dh) = (layer.w.cols(), layer.r.cols());
        fill_uniform(&mut rng, layer.w.as_mut_slice(), dx);
        fill_uniform(&mut rng, layer.r.as_mut_slice(), dh);
        layer.gate_bias_mut(GATE_F).iter_mut().for_each(|b| *b = 1.0);
    }
    let dz = params.classifier_w.cols();
    fill_uniform(&mut rng, params.classifier_w.as_mut_slice(), dz);
    Ok(params)
}

pub(crate) fn fill_uniform(rng: &mut impl Rng, values: &mut [f64], fan_in: usize) {
    let bound = (1.0 / fan_in as f64).sqrt();
    for v in values {
        *v = rng.random_range(-bound..bound);
    }
}
