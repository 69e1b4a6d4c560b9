//! Deep LSTM supervised autoencoder.
//!
//! An encoder stack maps each window `x_1..x_H` to per-step latents
//! `z_1..z_H`; a decoder stack maps the latents back to per-step
//! reconstructions; a softmax head classifies the window from `z_H`.
//! Training minimises
//!
//! ```text
//! (1/N) [ λ1 Σ_s ‖x_s − x̂_s‖² + λ2 Σ_s −log p_{s,y_s} + λ3 Σ ‖W‖² ]
//! ```
//!
//! where the last sum runs over every weight matrix (`W`, `R` of each layer
//! and the classifier `W_c`), biases excluded.

use std::io::{BufRead, BufReader, Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::batch::WindowBatch;
use crate::dataio::Scaler;
use crate::error::{FddError, Result};
use crate::lstm::{lstm_backward, lstm_forward, LstmOutput, LstmParams};
use crate::optim::{adam_step, clip_global_norm, AdamConfig, OptimizerState};
use crate::params::{init_params, ParamSet};
use crate::softmax::{argmax, softmax};
use crate::tensor::Tensor2;

/// Probabilities below this are clamped before taking the log.
pub const LOG_CLAMP: f64 = 1e-12;

/// Windows per gradient-accumulation chunk. Fixed so that summation order,
/// and therefore every bit of the result, is independent of thread count.
const GRAD_CHUNK: usize = 4;

fn default_lambda1() -> f64 {
    1.0
}
fn default_lambda2() -> f64 {
    1.0
}
fn default_lambda3() -> f64 {
    1e-4
}
fn default_lr() -> f64 {
    1e-2
}
fn default_batch() -> usize {
    64
}
fn default_clip() -> f64 {
    5.0
}

/// Architecture and training hyperparameters of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Hidden sizes of the encoder LSTM layers; the last is the latent size.
    pub encoder: Vec<usize>,
    /// Hidden sizes of the decoder LSTM layers; the last must equal `features`.
    pub decoder: Vec<usize>,
    pub classes: usize,
    /// Input feature count `d_x`.
    pub features: usize,
    pub horizon: usize,
    #[serde(default = "default_lambda1")]
    pub lambda1: f64,
    #[serde(default = "default_lambda2")]
    pub lambda2: f64,
    #[serde(default = "default_lambda3")]
    pub lambda3: f64,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_clip")]
    pub clip_norm: f64,
    pub seed: u64,
}

impl ModelConfig {
    /// A config with the documented defaults for everything but the layout.
    pub fn new(encoder: Vec<usize>, decoder: Vec<usize>, classes: usize, features: usize, horizon: usize, seed: u64) -> Self {
        Self {
            encoder,
            decoder,
            classes,
            features,
            horizon,
            lambda1: default_lambda1(),
            lambda2: default_lambda2(),
            lambda3: default_lambda3(),
            learning_rate: default_lr(),
            epochs: 0,
            batch_size: default_batch(),
            clip_norm: default_clip(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(FddError::Config("horizon must be at least 1".into()));
        }
        if self.classes < 2 {
            return Err(FddError::Config("at least 2 classes required".into()));
        }
        if self.encoder.is_empty() || self.decoder.is_empty() {
            return Err(FddError::Config("encoder and decoder need at least one layer each".into()));
        }
        if self.decoder.last() != Some(&self.features) {
            return Err(FddError::Config(format!(
                "decoder output size {:?} must equal feature count {}",
                self.decoder.last(),
                self.features
            )));
        }
        self.loss_weights().validate()?;
        if self.batch_size == 0 {
            return Err(FddError::Config("batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(FddError::Config("learning rate must be positive".into()));
        }
        Ok(())
    }

    /// `(d_in, d_h)` of every layer, encoder first.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::new();
        let mut d_in = self.features;
        for &h in self.encoder.iter().chain(&self.decoder) {
            dims.push((d_in, h));
            d_in = h;
        }
        dims
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            reconstruction: self.lambda1,
            classification: self.lambda2,
            regularization: self.lambda3,
        }
    }

    pub fn init_params(&self) -> Result<ParamSet> {
        self.validate()?;
        init_params(&self.layer_dims(), self.encoder.len(), self.classes, self.seed)
    }
}

/// `λ1`, `λ2`, `λ3` of the composite objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub reconstruction: f64,
    pub classification: f64,
    pub regularization: f64,
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.reconstruction, self.classification, self.regularization];
        if all.iter().any(|&l| !(l >= 0.0) || !l.is_finite()) {
            return Err(FddError::Config(format!("loss weights must be finite and nonnegative: {self:?}")));
        }
        Ok(())
    }
}

/// Batched forward results.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    /// `N × H × d_x`, flat.
    pub reconstructions: Vec<f64>,
    /// `N × m`
    pub probabilities: Tensor2,
    /// `N × d_z` final-step latent codes.
    pub latents: Tensor2,
}

struct WindowPass {
    encoder: Vec<LstmOutput>,
    decoder: Vec<LstmOutput>,
    probs: Vec<f64>,
}

impl WindowPass {
    fn latent_seq(&self) -> &Tensor2 {
        &self.encoder.last().expect("encoder nonempty").hidden
    }

    fn recon(&self) -> &Tensor2 {
        &self.decoder.last().expect("decoder nonempty").hidden
    }

    fn latent_last(&self) -> &[f64] {
        let z = self.latent_seq();
        z.row(z.rows() - 1)
    }
}

fn check_params(params: &ParamSet) -> Result<()> {
    if params.encoder_layers == 0 || params.encoder_layers >= params.layers.len() {
        return Err(FddError::dim("model needs at least one encoder and one decoder layer"));
    }
    if params.layers.last().map(|l| l.hidden_dim()) != Some(params.input_dim()) {
        return Err(FddError::dim("decoder output size must equal input feature count"));
    }
    Ok(())
}

fn forward_window(params: &ParamSet, x: &Tensor2) -> Result<WindowPass> {
    let mut encoder = Vec::with_capacity(params.encoder_layers);
    let mut decoder = Vec::with_capacity(params.layers.len() - params.encoder_layers);
    let mut input = x.clone();
    for (k, layer) in params.layers.iter().enumerate() {
        let dh = layer.hidden_dim();
        let zeros = vec![0.0; dh];
        let out = lstm_forward(&input, layer, &zeros, &zeros)?;
        input = out.hidden.clone();
        if k < params.encoder_layers {
            encoder.push(out);
        } else {
            decoder.push(out);
        }
    }
    let z = encoder.last().expect("encoder nonempty").hidden.clone();
    let mut logits = params.classifier_b.clone();
    params.classifier_w.matvec_acc(z.row(z.rows() - 1), &mut logits);
    let probs = softmax(&logits);
    Ok(WindowPass { encoder, decoder, probs })
}

/// Runs the full model over every window.
pub fn model_forward(batch: &WindowBatch, params: &ParamSet) -> Result<ModelOutput> {
    check_params(params)?;
    if batch.features() != params.input_dim() {
        return Err(FddError::dim(format!(
            "batch has {} features, model expects {}",
            batch.features(),
            params.input_dim()
        )));
    }
    let passes: Vec<WindowPass> = (0..batch.len())
        .into_par_iter()
        .map(|i| forward_window(params, &batch.window(i)))
        .collect::<Result<_>>()?;
    let m = params.classes();
    let dz = params.latent_dim();
    let mut reconstructions = Vec::with_capacity(batch.data().len());
    let mut probabilities = Tensor2::zeros(batch.len(), m);
    let mut latents = Tensor2::zeros(batch.len(), dz);
    for (i, p) in passes.iter().enumerate() {
        reconstructions.extend_from_slice(p.recon().as_slice());
        probabilities.row_mut(i).copy_from_slice(&p.probs);
        latents.row_mut(i).copy_from_slice(p.latent_last());
    }
    Ok(ModelOutput {
        reconstructions,
        probabilities,
        latents,
    })
}

/// Composite objective evaluated on already-computed outputs.
pub fn sae_loss(
    reconstructions: &[f64],
    inputs: &[f64],
    probabilities: &Tensor2,
    labels: &[usize],
    weights: &LossWeights,
    params: &ParamSet,
) -> Result<f64> {
    weights.validate()?;
    let n = labels.len();
    if n == 0 {
        return Err(FddError::Input("loss of an empty batch".into()));
    }
    if reconstructions.len() != inputs.len() || !inputs.len().is_multiple_of(n) || probabilities.rows() != n {
        return Err(FddError::dim("loss operands disagree in shape"));
    }
    let recon: f64 = reconstructions
        .iter()
        .zip(inputs)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let mut ce = 0.0;
    for (s, &y) in labels.iter().enumerate() {
        if y >= probabilities.cols() {
            return Err(FddError::Label(format!("label {y} outside the probability vector")));
        }
        ce -= probabilities.get(s, y).max(LOG_CLAMP).ln();
    }
    let reg = params.weight_sum_squares();
    Ok((weights.reconstruction * recon + weights.classification * ce + weights.regularization * reg) / n as f64)
}

/// Loss of `params` on `batch`, forward only.
pub fn batch_loss(batch: &WindowBatch, params: &ParamSet, weights: &LossWeights) -> Result<f64> {
    let out = model_forward(batch, params)?;
    sae_loss(
        &out.reconstructions,
        batch.data(),
        &out.probabilities,
        batch.labels(),
        weights,
        params,
    )
}

/// Accumulates the data-term gradient of one window into `grads`, with
/// every term already divided by `n`. Returns the window's unscaled data loss.
fn window_backward(
    params: &ParamSet,
    x: &Tensor2,
    label: usize,
    weights: &LossWeights,
    n: f64,
    grads: &mut ParamSet,
) -> Result<f64> {
    let pass = forward_window(params, x)?;
    let recon = pass.recon();
    let mut loss = 0.0;

    let mut upstream = Tensor2::zeros(recon.rows(), recon.cols());
    let c_recon = 2.0 * weights.reconstruction / n;
    for ((u, &r), &xv) in upstream.as_mut_slice().iter_mut().zip(recon.as_slice()).zip(x.as_slice()) {
        let d = r - xv;
        loss += weights.reconstruction * d * d;
        *u = c_recon * d;
    }

    let p_true = pass.probs[label];
    loss -= weights.classification * p_true.max(LOG_CLAMP).ln();

    let n_enc = params.encoder_layers;
    for (k, out) in pass.decoder.iter().enumerate().rev() {
        let zeros = vec![0.0; out.hidden.cols()];
        let g = lstm_backward(&out.cache, &upstream, &zeros)?;
        accumulate_layer(&mut grads.layers[n_enc + k], &g.params);
        upstream = g.input;
    }

    // Classifier head reads the final-step latent.
    if p_true >= LOG_CLAMP {
        let c_cls = weights.classification / n;
        let dlogits: Vec<f64> = pass
            .probs
            .iter()
            .enumerate()
            .map(|(c, &p)| c_cls * (p - if c == label { 1.0 } else { 0.0 }))
            .collect();
        let z_last = pass.latent_last();
        grads.classifier_w.add_outer(&dlogits, z_last);
        add_into(&mut grads.classifier_b, &dlogits);
        let last = upstream.rows() - 1;
        params.classifier_w.matvec_t_acc(&dlogits, upstream.row_mut(last));
    }

    for (k, out) in pass.encoder.iter().enumerate().rev() {
        let zeros = vec![0.0; out.hidden.cols()];
        let g = lstm_backward(&out.cache, &upstream, &zeros)?;
        accumulate_layer(&mut grads.layers[k], &g.params);
        upstream = g.input;
    }
    Ok(loss)
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn accumulate_layer(dst: &mut LstmParams, src: &LstmParams) {
    add_into(dst.w.as_mut_slice(), src.w.as_slice());
    add_into(dst.r.as_mut_slice(), src.r.as_slice());
    add_into(&mut dst.b, &src.b);
}

/// Exact loss and gradient of the composite objective on `batch`.
pub fn loss_and_grad(batch: &WindowBatch, params: &ParamSet, weights: &LossWeights) -> Result<(f64, ParamSet)> {
    check_params(params)?;
    weights.validate()?;
    if batch.is_empty() {
        return Err(FddError::Input("gradient of an empty batch".into()));
    }
    if batch.features() != params.input_dim() {
        return Err(FddError::dim("batch feature count does not match the model"));
    }
    batch.check_labels(params.classes())?;
    let n = batch.len() as f64;
    let chunks: Vec<usize> = (0..batch.len()).step_by(GRAD_CHUNK).collect();
    let partials: Vec<(f64, ParamSet)> = chunks
        .par_iter()
        .map(|&start| {
            let mut g = params.zeros_like();
            let mut loss = 0.0;
            for i in start..(start + GRAD_CHUNK).min(batch.len()) {
                loss += window_backward(params, &batch.window(i), batch.labels()[i], weights, n, &mut g)?;
            }
            Ok((loss, g))
        })
        .collect::<Result<_>>()?;

    let mut grads = params.zeros_like();
    let mut data_loss = 0.0;
    for (l, g) in &partials {
        data_loss += l;
        grads.add_scaled(g, 1.0)?;
    }
    // Regularizer acts on weight matrices only.
    let c_reg = 2.0 * weights.regularization / n;
    if c_reg != 0.0 {
        for (gl, pl) in grads.layers.iter_mut().zip(&params.layers) {
            for (g, p) in gl.w.as_mut_slice().iter_mut().zip(pl.w.as_slice()) {
                *g += c_reg * p;
            }
            for (g, p) in gl.r.as_mut_slice().iter_mut().zip(pl.r.as_slice()) {
                *g += c_reg * p;
            }
        }
        for (g, p) in grads
            .classifier_w
            .as_mut_slice()
            .iter_mut()
            .zip(params.classifier_w.as_slice())
        {
            *g += c_reg * p;
        }
    }
    let loss = (data_loss + weights.regularization * params.weight_sum_squares()) / n;
    Ok((loss, grads))
}

/// Predicted class per window (argmax, ties to the lowest index).
pub fn predict(batch: &WindowBatch, params: &ParamSet) -> Result<Vec<usize>> {
    let out = model_forward(batch, params)?;
    Ok((0..batch.len()).map(|i| argmax(out.probabilities.row(i))).collect())
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64
}

/// One row of the training history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    /// `None` when no validation data was supplied.
    pub val_accuracy: Option<f64>,
}

/// Parameters plus everything needed to reuse them.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters were kept; 0 means the initial parameters.
    pub best_epoch: usize,
    pub scaler: Option<Scaler>,
}

impl TrainedModel {
    pub fn predict(&self, batch: &WindowBatch) -> Result<Vec<usize>> {
        predict(batch, &self.params)
    }

    /// Class probabilities for a single (already standardized) window.
    pub fn probabilities(&self, window: &Tensor2) -> Result<Vec<f64>> {
        check_params(&self.params)?;
        if window.cols() != self.params.input_dim() {
            return Err(FddError::dim(format!(
                "window has {} features, model expects {}",
                window.cols(),
                self.params.input_dim()
            )));
        }
        Ok(forward_window(&self.params, window)?.probs)
    }

    /// Training history as `epoch,loss,val_accuracy` rows.
    pub fn history_table(&self) -> String {
        let mut s = String::from("epoch,loss,val_accuracy\n");
        for r in &self.history {
            let acc = r.val_accuracy.map_or_else(String::new, |a| a.to_string());
            s.push_str(&format!("{},{},{}\n", r.epoch, r.loss, acc));
        }
        s
    }

    /// Text header of config fields, then the binary parameter container.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let c = &self.config;
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let joinf = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        writeln!(out, "fdd-model 1")?;
        writeln!(out, "encoder = {}", join(&c.encoder))?;
        writeln!(out, "decoder = {}", join(&c.decoder))?;
        writeln!(out, "classes = {}", c.classes)?;
        writeln!(out, "features = {}", c.features)?;
        writeln!(out, "horizon = {}", c.horizon)?;
        writeln!(out, "lambda1 = {}", c.lambda1)?;
        writeln!(out, "lambda2 = {}", c.lambda2)?;
        writeln!(out, "lambda3 = {}", c.lambda3)?;
        writeln!(out, "learning_rate = {}", c.learning_rate)?;
        writeln!(out, "epochs = {}", c.epochs)?;
        writeln!(out, "batch_size = {}", c.batch_size)?;
        writeln!(out, "clip_norm = {}", c.clip_norm)?;
        writeln!(out, "seed = {}", c.seed)?;
        writeln!(out, "best_epoch = {}", self.best_epoch)?;
        if let Some(s) = &self.scaler {
            writeln!(out, "scaler_mean = {}", joinf(&s.mean))?;
            writeln!(out, "scaler_std = {}", joinf(&s.std))?;
        }
        for r in &self.history {
            let acc = r.val_accuracy.map_or_else(|| "-".to_string(), |a| a.to_string());
            writeln!(out, "history = {} {} {}", r.epoch, r.loss, acc)?;
        }
        writeln!(out, "end")?;
        self.params.write_to(out)
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self> {
        let mut reader = BufReader::new(input);
        let mut line = String::new();
        reader.read_line(&mut line)?;
        if line.trim() != "fdd-model 1" {
            return Err(FddError::Input("not a model file".into()));
        }
        let mut fields = std::collections::BTreeMap::new();
        let mut history = Vec::new();
        loop {
            line.clear();
            if reader.read_line(&mut line)? == 0 {
                return Err(FddError::Input("model header not terminated".into()));
            }
            let l = line.trim_end_matches('\n');
            if l == "end" {
                break;
            }
            let (k, v) = l
                .split_once(" = ")
                .ok_or_else(|| FddError::Input(format!("bad header line {l:?}")))?;
            if k == "history" {
                let parts: Vec<&str> = v.split(' ').collect();
                if parts.len() != 3 {
                    return Err(FddError::Input(format!("bad history line {l:?}")));
                }
                history.push(EpochRecord {
                    epoch: parse(parts[0])?,
                    loss: parse(parts[1])?,
                    val_accuracy: if parts[2] == "-" { None } else { Some(parse(parts[2])?) },
                });
            } else {
                fields.insert(k.to_string(), v.to_string());
            }
        }
        let get = |k: &str| -> Result<&String> {
            fields
                .get(k)
                .ok_or_else(|| FddError::Input(format!("model header lacks {k}")))
        };
        let list = |k: &str| -> Result<Vec<usize>> { get(k)?.split(',').map(parse).collect() };
        let listf = |k: &str| -> Result<Vec<f64>> { get(k)?.split(',').map(parse).collect() };
        let config = ModelConfig {
            encoder: list("encoder")?,
            decoder: list("decoder")?,
            classes: parse(get("classes")?)?,
            features: parse(get("features")?)?,
            horizon: parse(get("horizon")?)?,
            lambda1: parse(get("lambda1")?)?,
            lambda2: parse(get("lambda2")?)?,
            lambda3: parse(get("lambda3")?)?,
            learning_rate: parse(get("learning_rate")?)?,
            epochs: parse(get("epochs")?)?,
            batch_size: parse(get("batch_size")?)?,
            clip_norm: parse(get("clip_norm")?)?,
            seed: parse(get("seed")?)?,
        };
        let scaler = if fields.contains_key("scaler_mean") {
            Some(Scaler::new(listf("scaler_mean")?, listf("scaler_std")?)?)
        } else {
            None
        };
        let best_epoch = parse(get("best_epoch")?)?;
        let params = ParamSet::read_from(reader)?;
        if params.layer_dims() != config.layer_dims() || params.classes() != config.classes {
            return Err(FddError::Input("model header and parameters disagree".into()));
        }
        Ok(Self {
            config,
            params,
            history,
            best_epoch,
            scaler,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut v = Vec::new();
        self.write_to(&mut v).expect("writing to a Vec cannot fail");
        v
    }
}

fn parse<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| FddError::Input(format!("cannot parse {s:?}")))
}

/// Minibatch Adam on the composite objective.
///
/// With nonempty `val`, the returned parameters are those of the epoch with
/// the best validation accuracy (earliest on ties); otherwise the final ones.
pub fn train(train_set: &WindowBatch, val: &WindowBatch, config: &ModelConfig) -> Result<TrainedModel> {
    train_with_callback(train_set, val, config, |_| {})
}

/// [`train`] with a hook called after every epoch.
pub fn train_with_callback(
    train_set: &WindowBatch,
    val: &WindowBatch,
    config: &ModelConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainedModel> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(FddError::Input("training set is empty".into()));
    }
    if train_set.features() != config.features || train_set.horizon() != config.horizon {
        return Err(FddError::dim(format!(
            "training windows are {}x{}, config expects {}x{}",
            train_set.horizon(),
            train_set.features(),
            config.horizon,
            config.features
        )));
    }
    train_set.check_labels(config.classes)?;
    val.check_labels(config.classes)?;

    let weights = config.loss_weights();
    let adam = AdamConfig {
        lr: config.learning_rate,
        ..AdamConfig::default()
    };
    let mut params = config.init_params()?;
    let mut state = OptimizerState::new(&params);
    let mut best = params.clone();
    let mut best_acc = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut history = Vec::with_capacity(config.epochs);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5EED));
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch = train_set.subset(chunk);
            let (loss, mut grads) = loss_and_grad(&batch, &params, &weights).map_err(|e| match e {
                FddError::Numeric(_) => FddError::Divergence { epoch, loss: f64::NAN },
                e => e,
            })?;
            if !loss.is_finite() || !grads.all_finite() {
                return Err(FddError::Divergence { epoch, loss });
            }
            clip_global_norm(&mut grads, config.clip_norm);
            adam_step(&mut params, &grads, &mut state, &adam)?;
            epoch_loss += loss * chunk.len() as f64;
        }
        epoch_loss /= train_set.len() as f64;
        if !epoch_loss.is_finite() || !params.all_finite() {
            return Err(FddError::Divergence { epoch, loss: epoch_loss });
        }
        let val_accuracy = if val.is_empty() {
            None
        } else {
            let pred = predict(val, &params)?;
            Some(accuracy(&pred, val.labels()))
        };
        if let Some(acc) = val_accuracy {
            if acc > best_acc {
                best_acc = acc;
                best = params.clone();
                best_epoch = epoch;
            }
        }
        let rec = EpochRecord {
            epoch,
            loss: epoch_loss,
            val_accuracy,
        };
        on_epoch(&rec);
        history.push(rec);
    }

    let (params, best_epoch) = if val.is_empty() || config.epochs == 0 {
        (params, config.epochs)
    } else {
        (best, best_epoch)
    };
    Ok(TrainedModel {
        config: config.clone(),
        params,
        history,
        best_epoch,
        scaler: None,
    })
}

/// Fits a scaler on the training windows, standardizes both sets with it and
/// trains; the scaler travels with the returned model.
pub fn train_standardized(train_set: &WindowBatch, val: &WindowBatch, config: &ModelConfig) -> Result<TrainedModel> {
    let scaler = Scaler::fit_rows(train_set.data().chunks(train_set.features().max(1)), train_set.features())?;
    let mut model = train(&scaler.apply_batch(train_set)?, &scaler.apply_batch(val)?, config)?;
    model.scaler = Some(scaler);
    Ok(model)
}

impl TrainedModel {
    /// Standardizes raw windows with the attached scaler (if any) and
    /// predicts.
    pub fn predict_raw(&self, batch: &WindowBatch) -> Result<Vec<usize>> {
        match &self.scaler {
            Some(s) => self.predict(&s.apply_batch(batch)?),
            None => self.predict(batch),
        }
    }
}
