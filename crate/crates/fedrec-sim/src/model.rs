//! Neural collaborative filtering model: scoring, BCE loss, and exact
//! analytic gradients.
//!
//! The score of a (user, item) pair is `sigmoid(h . relu_mlp(p ++ q))`
//! where `p` is the user's embedding, `q` the item's embedding row, and
//! `h` the output weight vector. All arithmetic is f64; logits are clamped
//! to [-LOGIT_CLAMP, LOGIT_CLAMP] before the sigmoid so scores stay
//! strictly inside (0, 1) and losses never hit log(0), even when an attack
//! saturates the model.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::rng;

/// Logit clamp bound applied before the output sigmoid.
pub const LOGIT_CLAMP: f64 = 30.0;

/// Standard deviation used to initialize embedding entries.
pub const INIT_EMBED_STD: f64 = 0.01;

/// Dense row-major f64 matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Model hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    /// Width of user and item embedding vectors.
    pub embed_dim: usize,
    /// Output width of each hidden layer. The first layer consumes the
    /// concatenated pair embedding, so its input width is `2 * embed_dim`.
    pub layer_dims: Vec<usize>,
    /// Shared SGD learning rate for clients and server.
    pub learning_rate: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            embed_dim: 8,
            layer_dims: vec![8, 8],
            learning_rate: 1e-3,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 {
            return Err(Error::InvalidParameter("embed_dim must be >= 1".into()));
        }
        if self.layer_dims.is_empty() {
            return Err(Error::InvalidParameter("layer_dims must be non-empty".into()));
        }
        if self.layer_dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidParameter("layer widths must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter(
                "learning_rate must be positive and finite".into(),
            ));
        }
        Ok(())
    }
}

/// One perceptron layer: `weights` is (input x output), `bias` has output width.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// The server-held trainable parameters: item embedding matrix, all MLP
/// layers, and the output weight vector. User embeddings are *not* part of
/// this struct; they live on clients and never reach the server.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalParams {
    pub item_embeddings: Matrix,
    pub layers: Vec<DenseLayer>,
    pub output_weights: Vec<f64>,
}

impl GlobalParams {
    pub fn num_items(&self) -> usize {
        self.item_embeddings.rows()
    }

    pub fn embed_dim(&self) -> usize {
        self.item_embeddings.cols()
    }

    /// All-zero parameters with the given shapes (useful in tests).
    pub fn zeros(hyper: &HyperParams, num_items: usize) -> Self {
        let mut in_dim = 2 * hyper.embed_dim;
        let mut layers = Vec::with_capacity(hyper.layer_dims.len());
        for &out_dim in &hyper.layer_dims {
            layers.push(DenseLayer {
                weights: Matrix::zeros(in_dim, out_dim),
                bias: vec![0.0; out_dim],
            });
            in_dim = out_dim;
        }
        GlobalParams {
            item_embeddings: Matrix::zeros(num_items, hyper.embed_dim),
            layers,
            output_weights: vec![0.0; in_dim],
        }
    }
}

/// A user's locally held latent vector.
#[derive(Debug, Clone, PartialEq)]
pub struct UserEmbedding(pub Vec<f64>);

impl UserEmbedding {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Cached intermediates of one forward pass, consumed by `backward`.
#[derive(Debug, Clone, Default)]
pub struct ForwardTape {
    /// Item index the pass was computed for.
    pub item: usize,
    /// Concatenated input `p ++ q`.
    pub input: Vec<f64>,
    /// Per-layer pre-activations z_k.
    pub pre_activations: Vec<Vec<f64>>,
    /// Per-layer activations a_k = relu(z_k).
    pub activations: Vec<Vec<f64>>,
    /// Raw output logit h . a_L (before clamping).
    pub logit: f64,
    /// sigmoid(clamp(logit)), strictly inside (0, 1).
    pub score: f64,
}

/// Gradients of a scalar loss for a single (user, item) pair.
#[derive(Debug, Clone)]
pub struct ModelGradients {
    pub user: Vec<f64>,
    pub item: Vec<f64>,
    pub output_weights: Vec<f64>,
    pub layers: Vec<LayerGradients>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradients {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// A gradient of the shared parameters, as one client uploads it.
///
/// Item-embedding gradients are stored sparsely: a row is present only if
/// the client's loss actually touched that item. The map is ordered so
/// aggregation and application are deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientUpdate {
    pub item_rows: BTreeMap<usize, Vec<f64>>,
    pub output_weights: Vec<f64>,
    pub layers: Vec<LayerGradients>,
}

impl GradientUpdate {
    pub fn zeros_like(params: &GlobalParams) -> Self {
        GradientUpdate {
            item_rows: BTreeMap::new(),
            output_weights: vec![0.0; params.output_weights.len()],
            layers: params
                .layers
                .iter()
                .map(|l| LayerGradients {
                    weights: Matrix::zeros(l.weights.rows(), l.weights.cols()),
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    /// Accumulate another update into this one, element-wise.
    pub fn add(&mut self, other: &GradientUpdate) {
        for (item, row) in &other.item_rows {
            let acc = self
                .item_rows
                .entry(*item)
                .or_insert_with(|| vec![0.0; row.len()]);
            for (a, b) in acc.iter_mut().zip(row) {
                *a += b;
            }
        }
        for (a, b) in self.output_weights.iter_mut().zip(&other.output_weights) {
            *a += b;
        }
        for (al, bl) in self.layers.iter_mut().zip(&other.layers) {
            for (a, b) in al.weights.as_mut_slice().iter_mut().zip(bl.weights.as_slice()) {
                *a += b;
            }
            for (a, b) in al.bias.iter_mut().zip(&bl.bias) {
                *a += b;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for row in self.item_rows.values_mut() {
            for v in row {
                *v *= factor;
            }
        }
        for v in &mut self.output_weights {
            *v *= factor;
        }
        for l in &mut self.layers {
            for v in l.weights.as_mut_slice() {
                *v *= factor;
            }
            for v in &mut l.bias {
                *v *= factor;
            }
        }
    }

    pub fn l2_norm(&self) -> f64 {
        let mut sq = 0.0;
        for row in self.item_rows.values() {
            for v in row {
                sq += v * v;
            }
        }
        for v in &self.output_weights {
            sq += v * v;
        }
        for l in &self.layers {
            for v in l.weights.as_slice() {
                sq += v * v;
            }
            for v in &l.bias {
                sq += v * v;
            }
        }
        sq.sqrt()
    }

    /// Error naming the offending component if any entry is non-finite.
    pub fn check_finite(&self) -> Result<()> {
        for (item, row) in &self.item_rows {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of item embedding {item}")));
            }
        }
        if self.output_weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gradient of output weights".into()));
        }
        for (k, l) in self.layers.iter().enumerate() {
            if l.weights.as_slice().iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of layer {k} weights")));
            }
            if l.bias.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of layer {k} bias")));
            }
        }
        Ok(())
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn check_user_vector(p: &[f64], params: &GlobalParams) -> Result<()> {
    if p.len() != params.embed_dim() {
        return Err(Error::ShapeMismatch(format!(
            "user vector has length {}, model embed_dim is {}",
            p.len(),
            params.embed_dim()
        )));
    }
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("user embedding".into()));
    }
    Ok(())
}

/// Score one (user, item) pair, reusing the tape's buffers.
///
/// This is the allocation-free path used by training and evaluation loops;
/// [`forward`] wraps it. Returns the score, with all intermediates left in
/// `tape`.
pub fn forward_into(
    p: &[f64],
    item: usize,
    params: &GlobalParams,
    tape: &mut ForwardTape,
) -> Result<f64> {
    if item >= params.num_items() {
        return Err(Error::ItemOutOfRange {
            item,
            num_items: params.num_items(),
        });
    }
    check_user_vector(p, params)?;
    let q = params.item_embeddings.row(item);
    if q.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("item embedding {item}")));
    }

    tape.item = item;
    tape.input.clear();
    tape.input.extend_from_slice(p);
    tape.input.extend_from_slice(q);

    let num_layers = params.layers.len();
    tape.pre_activations.resize(num_layers, Vec::new());
    tape.activations.resize(num_layers, Vec::new());

    for (k, layer) in params.layers.iter().enumerate() {
        let out_dim = layer.bias.len();
        // Split borrows: the input of layer k is the tape input for k == 0,
        // otherwise the activation of layer k - 1.
        let (done, rest) = tape.activations.split_at_mut(k);
        let x: &[f64] = if k == 0 { &tape.input } else { &done[k - 1] };
        let z = &mut tape.pre_activations[k];
        z.clear();
        z.resize(out_dim, 0.0);
        for (j, zj) in z.iter_mut().enumerate() {
            let mut acc = layer.bias[j];
            for (i, &xi) in x.iter().enumerate() {
                acc += xi * layer.weights.get(i, j);
            }
            *zj = acc;
        }
        let a = &mut rest[0];
        a.clear();
        a.extend(z.iter().map(|&v| if v > 0.0 { v } else { 0.0 }));
    }

    let top = &tape.activations[num_layers - 1];
    let mut logit = 0.0;
    for (hj, aj) in params.output_weights.iter().zip(top) {
        logit += hj * aj;
    }
    tape.logit = logit;
    tape.score = sigmoid(logit.clamp(-LOGIT_CLAMP, LOGIT_CLAMP));
    Ok(tape.score)
}

/// Score one (user, item) pair and return the tape of intermediates.
pub fn forward(p: &[f64], item: usize, params: &GlobalParams) -> Result<(f64, ForwardTape)> {
    let mut tape = ForwardTape::default();
    let score = forward_into(p, item, params, &mut tape)?;
    Ok((score, tape))
}

/// Summed binary cross-entropy over (score, label) pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BceLoss {
    pub value: f64,
    /// Set when the pair list was empty (value is 0 in that case).
    pub empty: bool,
}

/// Sum of -[y log s + (1-y) log(1-s)] over the given pairs.
///
/// Scores must lie strictly inside (0, 1); scores produced by [`forward`]
/// always do because of the logit clamp.
pub fn bce_loss(pairs: &[(f64, bool)]) -> BceLoss {
    if pairs.is_empty() {
        return BceLoss {
            value: 0.0,
            empty: true,
        };
    }
    let mut total = 0.0;
    for &(score, label) in pairs {
        total -= if label { score.ln() } else { (1.0 - score).ln() };
    }
    BceLoss {
        value: total,
        empty: false,
    }
}

/// d(BCE)/d(score) for a single pair.
#[inline]
pub fn bce_dscore(score: f64, label: bool) -> f64 {
    if label {
        -1.0 / score
    } else {
        1.0 / (1.0 - score)
    }
}

/// Scratch buffers for repeated backward passes.
#[derive(Debug, Default)]
pub struct GradScratch {
    g_out: Vec<f64>,
    g_in: Vec<f64>,
}

fn check_tape_shapes(tape: &ForwardTape, params: &GlobalParams) -> Result<()> {
    if tape.input.len() != 2 * params.embed_dim() {
        return Err(Error::ShapeMismatch(format!(
            "tape input has length {}, expected {}",
            tape.input.len(),
            2 * params.embed_dim()
        )));
    }
    if tape.activations.len() != params.layers.len()
        || tape.pre_activations.len() != params.layers.len()
    {
        return Err(Error::ShapeMismatch(format!(
            "tape has {} layers, model has {}",
            tape.activations.len(),
            params.layers.len()
        )));
    }
    for (k, layer) in params.layers.iter().enumerate() {
        if tape.pre_activations[k].len() != layer.bias.len() {
            return Err(Error::ShapeMismatch(format!(
                "tape layer {k} width {} does not match model width {}",
                tape.pre_activations[k].len(),
                layer.bias.len()
            )));
        }
    }
    if tape.item >= params.num_items() {
        return Err(Error::ItemOutOfRange {
            item: tape.item,
            num_items: params.num_items(),
        });
    }
    Ok(())
}

/// Backpropagate `dl_dscore` through a tape, accumulating (`+=`) shared
/// parameter gradients into `theta_acc` and the user gradient into
/// `user_acc`.
///
/// The ReLU subgradient at exactly zero is taken as 0, and
/// d(score)/d(logit) is `score * (1 - score)`.
pub fn backward_accum(
    tape: &ForwardTape,
    dl_dscore: f64,
    params: &GlobalParams,
    theta_acc: &mut GradientUpdate,
    user_acc: &mut [f64],
    scratch: &mut GradScratch,
) -> Result<()> {
    check_tape_shapes(tape, params)?;
    let d = params.embed_dim();
    if user_acc.len() != d {
        return Err(Error::ShapeMismatch(format!(
            "user gradient accumulator has length {}, expected {d}",
            user_acc.len()
        )));
    }

    let g_logit = dl_dscore * tape.score * (1.0 - tape.score);
    let num_layers = params.layers.len();
    let top = &tape.activations[num_layers - 1];

    for (gh, aj) in theta_acc.output_weights.iter_mut().zip(top) {
        *gh += g_logit * aj;
    }

    // Gradient flowing into the top activation.
    scratch.g_out.clear();
    scratch
        .g_out
        .extend(params.output_weights.iter().map(|hj| g_logit * hj));

    for k in (0..num_layers).rev() {
        let layer = &params.layers[k];
        let grads = &mut theta_acc.layers[k];
        let x: &[f64] = if k == 0 {
            &tape.input
        } else {
            &tape.activations[k - 1]
        };
        // ReLU gate: zero out where z <= 0 (subgradient 0 at the kink).
        let z = &tape.pre_activations[k];
        for (g, &zj) in scratch.g_out.iter_mut().zip(z) {
            if zj <= 0.0 {
                *g = 0.0;
            }
        }
        for (gb, g) in grads.bias.iter_mut().zip(&scratch.g_out) {
            *gb += g;
        }
        let in_dim = layer.weights.rows();
        scratch.g_in.clear();
        scratch.g_in.resize(in_dim, 0.0);
        for i in 0..in_dim {
            let xi = x[i];
            let wrow = layer.weights.row(i);
            let grow = grads.weights.row_mut(i);
            let mut acc = 0.0;
            for (j, &gz) in scratch.g_out.iter().enumerate() {
                grow[j] += xi * gz;
                acc += wrow[j] * gz;
            }
            scratch.g_in[i] = acc;
        }
        std::mem::swap(&mut scratch.g_out, &mut scratch.g_in);
    }

    // scratch.g_out now holds the gradient over the concatenated input.
    for (gu, g) in user_acc.iter_mut().zip(&scratch.g_out[..d]) {
        *gu += g;
    }
    let item_row = theta_acc
        .item_rows
        .entry(tape.item)
        .or_insert_with(|| vec![0.0; d]);
    for (gq, g) in item_row.iter_mut().zip(&scratch.g_out[d..]) {
        *gq += g;
    }
    Ok(())
}

/// Exact analytic gradients of a scalar loss for the pair recorded in `tape`.
pub fn backward(
    tape: &ForwardTape,
    dl_dscore: f64,
    params: &GlobalParams,
) -> Result<ModelGradients> {
    let mut theta = GradientUpdate::zeros_like(params);
    let mut user = vec![0.0; params.embed_dim()];
    let mut scratch = GradScratch::default();
    backward_accum(tape, dl_dscore, params, &mut theta, &mut user, &mut scratch)?;
    let item = theta
        .item_rows
        .remove(&tape.item)
        .unwrap_or_else(|| vec![0.0; params.embed_dim()]);
    Ok(ModelGradients {
        user,
        item,
        output_weights: theta.output_weights,
        layers: theta.layers,
    })
}

/// Initialize global parameters deterministically from a seed.
///
/// Item embeddings are N(0, INIT_EMBED_STD^2); layer weights and the output
/// vector are uniform with fan-based limits sqrt(6 / (fan_in + fan_out));
/// biases start at zero. Draw order: embeddings row-major, then each layer's
/// weights row-major, then the output vector.
pub fn init_params(hyper: &HyperParams, num_items: usize, seed: u64) -> Result<GlobalParams> {
    hyper.validate()?;
    let mut rng = rng::stream(seed);
    let normal = Normal::new(0.0, INIT_EMBED_STD)
        .map_err(|e| Error::InvalidParameter(format!("embedding init: {e}")))?;

    let mut q = Matrix::zeros(num_items, hyper.embed_dim);
    for v in q.as_mut_slice() {
        *v = normal.sample(&mut rng);
    }

    let mut layers = Vec::with_capacity(hyper.layer_dims.len());
    let mut in_dim = 2 * hyper.embed_dim;
    for &out_dim in &hyper.layer_dims {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let mut weights = Matrix::zeros(in_dim, out_dim);
        for v in weights.as_mut_slice() {
            *v = rng.random_range(-limit..limit);
        }
        layers.push(DenseLayer {
            weights,
            bias: vec![0.0; out_dim],
        });
        in_dim = out_dim;
    }

    let limit = (6.0 / (in_dim + 1) as f64).sqrt();
    let output_weights = (0..in_dim).map(|_| rng.random_range(-limit..limit)).collect();

    Ok(GlobalParams {
        item_embeddings: q,
        layers,
        output_weights,
    })
}

/// Initialize one user's local embedding: entries are N(0, INIT_EMBED_STD^2).
pub fn init_user_embedding(embed_dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng::stream(seed);
    let normal = Normal::new(0.0, INIT_EMBED_STD).expect("valid std");
    (0..embed_dim).map(|_| normal.sample(&mut rng)).collect()
}

/// Server-side SGD step: params <- params - eta * total_grad.
///
/// `total_grad` is the already-summed gradient of one round. Non-finite
/// entries abort with a diagnostic before anything is mutated. User
/// embeddings are untouched by construction: they are not part of
/// [`GlobalParams`].
pub fn apply_update(params: &mut GlobalParams, total_grad: &GradientUpdate, eta: f64) -> Result<()> {
    total_grad.check_finite()?;
    if total_grad.output_weights.len() != params.output_weights.len()
        || total_grad.layers.len() != params.layers.len()
    {
        return Err(Error::ShapeMismatch(
            "gradient update does not match parameter shapes".into(),
        ));
    }
    if let Some((&item, _)) = total_grad.item_rows.last_key_value() {
        if item >= params.num_items() {
            return Err(Error::ItemOutOfRange {
                item,
                num_items: params.num_items(),
            });
        }
    }

    for (item, grad_row) in &total_grad.item_rows {
        let row = params.item_embeddings.row_mut(*item);
        for (p, g) in row.iter_mut().zip(grad_row) {
            *p -= eta * g;
        }
    }
    for (p, g) in params.output_weights.iter_mut().zip(&total_grad.output_weights) {
        *p -= eta * g;
    }
    for (layer, grads) in params.layers.iter_mut().zip(&total_grad.layers) {
        for (p, g) in layer.weights.as_mut_slice().iter_mut().zip(grads.weights.as_slice()) {
            *p -= eta * g;
        }
        for (p, g) in layer.bias.iter_mut().zip(&grads.bias) {
            *p -= eta * g;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_hyper() -> HyperParams {
        HyperParams {
            embed_dim: 1,
            layer_dims: vec![1],
            learning_rate: 1.0,
        }
    }

    /// 2-in/1-out model from a hand-computed pass: p=[1], q=[1],
    /// W1=[[1],[1]], b1=[0], h=[1].
    fn hand_model() -> GlobalParams {
        let mut params = GlobalParams::zeros(&tiny_hyper(), 2);
        params.item_embeddings.set(0, 0, 1.0);
        params.layers[0].weights.set(0, 0, 1.0);
        params.layers[0].weights.set(1, 0, 1.0);
        params.output_weights[0] = 1.0;
        params
    }

    #[test]
    fn forward_all_zero_gives_half() {
        let params = GlobalParams::zeros(&HyperParams::default(), 3);
        let p = vec![0.0; 8];
        let (score, _) = forward(&p, 1, &params).unwrap();
        assert_eq!(score, 0.5);
    }

    #[test]
    fn forward_hand_computed() {
        let params = hand_model();
        let (score, tape) = forward(&[1.0], 0, &params).unwrap();
        assert_eq!(tape.pre_activations[0][0], 2.0);
        assert_eq!(tape.activations[0][0], 2.0);
        assert_eq!(tape.logit, 2.0);
        assert!((score - 0.8807970779778823).abs() < 1e-12, "score = {score}");
    }

    #[test]
    fn forward_dead_relu_layer_gives_half() {
        // Negative weights and inputs that force every z below zero.
        let mut params = hand_model();
        params.layers[0].weights.set(0, 0, -1.0);
        params.layers[0].weights.set(1, 0, -1.0);
        params.output_weights[0] = 5.0;
        let (score, tape) = forward(&[1.0], 0, &params).unwrap();
        assert!(tape.pre_activations[0][0] < 0.0);
        assert_eq!(score, 0.5);
    }

    #[test]
    fn forward_rejects_bad_item_and_nonfinite() {
        let params = hand_model();
        assert!(matches!(
            forward(&[1.0], 9, &params),
            Err(Error::ItemOutOfRange { item: 9, .. })
        ));
        assert!(matches!(
            forward(&[f64::NAN], 0, &params),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn score_strictly_inside_unit_interval_under_saturation() {
        let mut params = hand_model();
        params.output_weights[0] = 1e6;
        let (hi, _) = forward(&[1.0], 0, &params).unwrap();
        params.output_weights[0] = -1e6;
        let (lo, _) = forward(&[1.0], 0, &params).unwrap();
        assert!(hi < 1.0 && hi > 0.99);
        assert!(lo > 0.0 && lo < 0.01);
    }

    #[test]
    fn bce_known_values() {
        let ln2 = std::f64::consts::LN_2;
        let one = bce_loss(&[(0.5, true)]);
        assert!(!one.empty);
        assert!((one.value - ln2).abs() < 1e-12);

        let two = bce_loss(&[(0.5, true), (0.5, false)]);
        assert!((two.value - 2.0 * ln2).abs() < 1e-12);

        let params = hand_model();
        let (score, _) = forward(&[1.0], 0, &params).unwrap();
        let from_forward = bce_loss(&[(score, true)]);
        assert!((from_forward.value - 0.126928011042973).abs() < 1e-9);
    }

    #[test]
    fn bce_empty_is_flagged_zero() {
        let r = bce_loss(&[]);
        assert_eq!(r.value, 0.0);
        assert!(r.empty);
    }

    #[test]
    fn backward_zero_upstream_gives_zero_gradients() {
        let params = hand_model();
        let (_, tape) = forward(&[1.0], 0, &params).unwrap();
        let g = backward(&tape, 0.0, &params).unwrap();
        assert!(g.user.iter().all(|&v| v == 0.0));
        assert!(g.item.iter().all(|&v| v == 0.0));
        assert!(g.output_weights.iter().all(|&v| v == 0.0));
        assert!(g.layers[0].weights.as_slice().iter().all(|&v| v == 0.0));
        assert!(g.layers[0].bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_dead_relu_blocks_flow() {
        let mut params = hand_model();
        params.layers[0].weights.set(0, 0, -1.0);
        params.layers[0].weights.set(1, 0, -1.0);
        let (_, tape) = forward(&[1.0], 0, &params).unwrap();
        let g = backward(&tape, 1.0, &params).unwrap();
        // The ReLU output is zero, so grad_h = dl * s(1-s) * a = 0, and the
        // gate blocks everything upstream.
        assert!(g.output_weights.iter().all(|&v| v == 0.0));
        assert!(g.layers[0].weights.as_slice().iter().all(|&v| v == 0.0));
        assert!(g.layers[0].bias.iter().all(|&v| v == 0.0));
        assert!(g.user.iter().all(|&v| v == 0.0));
        assert!(g.item.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_rejects_mismatched_tape() {
        let params = hand_model();
        let (_, tape) = forward(&[1.0], 0, &params).unwrap();
        let other = GlobalParams::zeros(
            &HyperParams {
                embed_dim: 2,
                layer_dims: vec![2],
                learning_rate: 1.0,
            },
            2,
        );
        assert!(matches!(
            backward(&tape, 1.0, &other),
            Err(Error::ShapeMismatch(_))
        ));
    }

    /// Central finite differences of the composed BCE loss in every
    /// parameter, on a small random configuration.
    #[test]
    fn backward_matches_finite_differences() {
        let hyper = HyperParams {
            embed_dim: 2,
            layer_dims: vec![3, 2],
            learning_rate: 1.0,
        };
        let mut rng = rng::stream(0x5EED);
        let mut params = init_params(&hyper, 3, 7).unwrap();
        // Widen the initialization so gradients are well away from zero.
        for v in params.item_embeddings.as_mut_slice() {
            *v = rng.random_range(-0.8..0.8);
        }
        let p: Vec<f64> = (0..2).map(|_| rng.random_range(-0.8..0.8)).collect();
        let item = 1;
        let label = true;

        let loss_at = |params: &GlobalParams, p: &[f64]| -> f64 {
            let (score, _) = forward(p, item, params).unwrap();
            bce_loss(&[(score, label)]).value
        };

        let (score, tape) = forward(&p, item, &params).unwrap();
        let g = backward(&tape, bce_dscore(score, label), &params).unwrap();

        let eps = 1e-5;
        let rel = |a: f64, n: f64| (a - n).abs() / f64::max(a.abs().max(n.abs()), 1e-6);

        // h
        for j in 0..params.output_weights.len() {
            let mut plus = params.clone();
            plus.output_weights[j] += eps;
            let mut minus = params.clone();
            minus.output_weights[j] -= eps;
            let fd = (loss_at(&plus, &p) - loss_at(&minus, &p)) / (2.0 * eps);
            assert!(
                rel(g.output_weights[j], fd) < 1e-4,
                "h[{j}]: analytic={} fd={fd}",
                g.output_weights[j]
            );
        }
        // layers
        for k in 0..params.layers.len() {
            let (rows, cols) = (params.layers[k].weights.rows(), params.layers[k].weights.cols());
            for r in 0..rows {
                for c in 0..cols {
                    let mut plus = params.clone();
                    let v = plus.layers[k].weights.get(r, c);
                    plus.layers[k].weights.set(r, c, v + eps);
                    let mut minus = params.clone();
                    minus.layers[k].weights.set(r, c, v - eps);
                    let fd = (loss_at(&plus, &p) - loss_at(&minus, &p)) / (2.0 * eps);
                    assert!(
                        rel(g.layers[k].weights.get(r, c), fd) < 1e-4,
                        "W{k}[{r},{c}]: analytic={} fd={fd}",
                        g.layers[k].weights.get(r, c)
                    );
                }
            }
            for j in 0..params.layers[k].bias.len() {
                let mut plus = params.clone();
                plus.layers[k].bias[j] += eps;
                let mut minus = params.clone();
                minus.layers[k].bias[j] -= eps;
                let fd = (loss_at(&plus, &p) - loss_at(&minus, &p)) / (2.0 * eps);
                assert!(rel(g.layers[k].bias[j], fd) < 1e-4, "b{k}[{j}]");
            }
        }
        // q row and p
        for c in 0..2 {
            let mut plus = params.clone();
            let v = plus.item_embeddings.get(item, c);
            plus.item_embeddings.set(item, c, v + eps);
            let mut minus = params.clone();
            minus.item_embeddings.set(item, c, v - eps);
            let fd = (loss_at(&plus, &p) - loss_at(&minus, &p)) / (2.0 * eps);
            assert!(rel(g.item[c], fd) < 1e-4, "q[{c}]");

            let mut p_plus = p.clone();
            p_plus[c] += eps;
            let mut p_minus = p.clone();
            p_minus[c] -= eps;
            let fd = (loss_at(&params, &p_plus) - loss_at(&params, &p_minus)) / (2.0 * eps);
            assert!(rel(g.user[c], fd) < 1e-4, "p[{c}]");
        }
    }

    #[test]
    fn init_is_deterministic_with_zero_bias() {
        let hyper = HyperParams::default();
        let a = init_params(&hyper, 50, 123).unwrap();
        let b = init_params(&hyper, 50, 123).unwrap();
        assert_eq!(a, b);
        let c = init_params(&hyper, 50, 124).unwrap();
        assert_ne!(a, c);
        for layer in &a.layers {
            assert!(layer.bias.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn init_embedding_sample_mean_is_near_zero() {
        let hyper = HyperParams {
            embed_dim: 10,
            layer_dims: vec![4],
            learning_rate: 1.0,
        };
        let params = init_params(&hyper, 1000, 99).unwrap();
        let entries = params.item_embeddings.as_slice();
        assert_eq!(entries.len(), 10_000);
        let mean = entries.iter().sum::<f64>() / entries.len() as f64;
        // Standard error of the mean is 0.01 / 100.
        assert!(mean.abs() < 3.0 * (INIT_EMBED_STD / 100.0), "mean = {mean}");
    }

    #[test]
    fn apply_update_edge_cases() {
        let params0 = hand_model();

        // Zero gradient: unchanged.
        let mut params = params0.clone();
        let zero = GradientUpdate::zeros_like(&params);
        apply_update(&mut params, &zero, 0.5).unwrap();
        assert_eq!(params, params0);

        // Single gradient with eta = 1: params - g.
        let mut g = GradientUpdate::zeros_like(&params0);
        g.output_weights[0] = 0.25;
        g.item_rows.insert(0, vec![0.5]);
        let mut params = params0.clone();
        apply_update(&mut params, &g, 1.0).unwrap();
        assert_eq!(params.output_weights[0], 1.0 - 0.25);
        assert_eq!(params.item_embeddings.get(0, 0), 1.0 - 0.5);

        // Two opposite gradients cancel.
        let mut sum = g.clone();
        let mut neg = g.clone();
        neg.scale(-1.0);
        sum.add(&neg);
        let mut params = params0.clone();
        apply_update(&mut params, &sum, 1.0).unwrap();
        assert_eq!(params, params0);
    }

    #[test]
    fn apply_update_rejects_nonfinite() {
        let mut params = hand_model();
        let mut g = GradientUpdate::zeros_like(&params);
        g.output_weights[0] = f64::INFINITY;
        let before = params.clone();
        let err = apply_update(&mut params, &g, 1.0).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        assert_eq!(params, before);
    }

    #[test]
    fn composed_loss_matches_single_pair_finite_difference() {
        // forward + backward with dL/dscore from BCE equals the finite
        // difference of the composed loss; spot-check one weight.
        let params = hand_model();
        let p = vec![0.3];
        let (score, tape) = forward(&p, 0, &params).unwrap();
        let g = backward(&tape, bce_dscore(score, false), &params).unwrap();
        let eps = 1e-6;
        let mut plus = params.clone();
        plus.output_weights[0] += eps;
        let mut minus = params.clone();
        minus.output_weights[0] -= eps;
        let f = |pr: &GlobalParams| {
            let (s, _) = forward(&p, 0, pr).unwrap();
            bce_loss(&[(s, false)]).value
        };
        let fd = (f(&plus) - f(&minus)) / (2.0 * eps);
        assert!((g.output_weights[0] - fd).abs() < 1e-7);
    }
}
