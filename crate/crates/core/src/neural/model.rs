//! The angle-field network: a shared per-point MLP with max pooling encodes
//! the patch, and a fully connected decoder with one input skip maps
//! `(patch feature, query direction)` to an angle offset in `(0, pi/2)`.

use std::f64::consts::FRAC_PI_2;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tape::{Gradients, NodeId, Tape, Targets};
use crate::error::{Error, Result};
use crate::geometry::{Patch, UnitVec3};

/// Output of the final sigmoid is scaled to this upper bound.
pub const OUT_SCALE: f64 = FRAC_PI_2;

/// Layer widths of the network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    /// Output widths of the per-point encoder layers; the last one is the
    /// patch feature size.
    pub encoder_widths: Vec<usize>,
    /// Width of every hidden decoder layer.
    pub decoder_width: usize,
    /// Number of hidden decoder layers (each followed by a ReLU).
    pub decoder_layers: usize,
    /// Decoder layer that receives the re-concatenated `(feature, query)` input.
    pub skip_layer: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            encoder_widths: vec![64, 64, 256],
            decoder_width: 256,
            decoder_layers: 8,
            skip_layer: 4,
        }
    }
}

impl Architecture {
    pub fn feature_width(&self) -> usize {
        *self.encoder_widths.last().expect("encoder has layers")
    }

    pub fn validate(&self) -> Result<()> {
        let ok = !self.encoder_widths.is_empty()
            && self.encoder_widths.iter().all(|&w| w > 0)
            && self.decoder_width > 0
            && self.decoder_layers >= 1
            && self.skip_layer >= 1
            && self.skip_layer < self.decoder_layers;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid architecture {self:?}")))
        }
    }

    /// `(name, rows, cols)` of every parameter tensor, in storage order.
    /// Weights are `out x in`; biases are `1 x out`.
    pub fn layout(&self) -> Vec<(String, usize, usize)> {
        let mut out = Vec::new();
        let mut fan_in = 3;
        for (i, &w) in self.encoder_widths.iter().enumerate() {
            out.push((format!("enc{i}.weight"), w, fan_in));
            out.push((format!("enc{i}.bias"), 1, w));
            fan_in = w;
        }
        let cond = self.feature_width() + 3;
        let width = self.decoder_width;
        for i in 0..self.decoder_layers {
            let fan_in = if i == 0 {
                cond
            } else if i == self.skip_layer {
                width + cond
            } else {
                width
            };
            out.push((format!("dec{i}.weight"), width, fan_in));
            out.push((format!("dec{i}.bias"), 1, width));
        }
        out.push(("out.weight".into(), 1, width));
        out.push(("out.bias".into(), 1, 1));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.layout().iter().map(|(_, r, c)| r * c).sum()
    }
}

/// Learnable parameters of the angle field plus its architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleFieldModel {
    arch: Architecture,
    params: Vec<Array2<f64>>,
}

impl AngleFieldModel {
    /// Default architecture with Glorot-uniform weights and zero biases.
    pub fn init(seed: u64) -> Self {
        Self::init_with(Architecture::default(), seed).expect("default architecture is valid")
    }

    pub fn init_with(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = arch
            .layout()
            .into_iter()
            .map(|(name, rows, cols)| {
                if name.ends_with(".bias") {
                    Array2::zeros((rows, cols))
                } else {
                    let limit = (6.0 / (rows + cols) as f64).sqrt();
                    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-limit..=limit))
                }
            })
            .collect();
        Ok(AngleFieldModel { arch, params })
    }

    /// Assembles a model from raw tensors, checking them against `arch`.
    pub fn from_parts(arch: Architecture, params: Vec<Array2<f64>>) -> Result<Self> {
        arch.validate()?;
        let layout = arch.layout();
        if layout.len() != params.len() {
            return Err(Error::LengthMismatch {
                left: layout.len(),
                right: params.len(),
            });
        }
        for ((name, r, c), p) in layout.iter().zip(&params) {
            if p.dim() != (*r, *c) {
                return Err(Error::InvalidArgument(format!(
                    "{name}: expected {r}x{c}, got {:?}",
                    p.dim()
                )));
            }
        }
        if params.iter().flat_map(|p| p.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameters"));
        }
        Ok(AngleFieldModel { arch, params })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[Array2<f64>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.params
    }

    pub fn parameter_names(&self) -> Vec<String> {
        self.arch.layout().into_iter().map(|(n, _, _)| n).collect()
    }

    fn encoder_param(&self, layer: usize) -> (usize, usize) {
        (2 * layer, 2 * layer + 1)
    }

    fn decoder_param(&self, layer: usize) -> (usize, usize) {
        let base = 2 * self.arch.encoder_widths.len();
        (base + 2 * layer, base + 2 * layer + 1)
    }

    fn output_param(&self) -> (usize, usize) {
        let base = 2 * (self.arch.encoder_widths.len() + self.arch.decoder_layers);
        (base, base + 1)
    }

    /// Records the encoder on `tape`; returns the `1 x F` patch feature node.
    fn record_encoder(&self, tape: &mut Tape<'_>, coords: NodeId) -> Result<NodeId> {
        let mut h = coords;
        for layer in 0..self.arch.encoder_widths.len() {
            let (w, b) = self.encoder_param(layer);
            let (w, b) = (tape.param(w), tape.param(b));
            let fan_in = tape.value(w).ncols();
            let a = tape.affine(h, w, Some(b), 0..fan_in)?;
            h = tape.relu(a);
        }
        Ok(tape.max_rows(h))
    }

    /// Records the decoder; returns the `n x 1` node of angle offsets.
    fn record_decoder(&self, tape: &mut Tape<'_>, feature: NodeId, queries: NodeId) -> Result<NodeId> {
        let f = self.arch.feature_width();
        let width = self.arch.decoder_width;
        let mut h: Option<NodeId> = None;

        for layer in 0..self.arch.decoder_layers {
            let (w, b) = self.decoder_param(layer);
            let (w, b) = (tape.param(w), tape.param(b));
            let pre = if layer == 0 {
                // [feature | query]; the feature part is shared by all rows.
                let shared = tape.affine(feature, w, Some(b), 0..f)?;
                let per_query = tape.affine(queries, w, None, f..f + 3)?;
                tape.add(per_query, shared)
            } else if layer == self.arch.skip_layer {
                // [hidden | feature | query]
                let hidden = tape.affine(h.expect("hidden"), w, None, 0..width)?;
                let shared = tape.affine(feature, w, Some(b), width..width + f)?;
                let per_query = tape.affine(queries, w, None, width + f..width + f + 3)?;
                let sum = tape.add(hidden, per_query);
                tape.add(sum, shared)
            } else {
                tape.affine(h.expect("hidden"), w, Some(b), 0..width)?
            };
            h = Some(tape.relu(pre));
        }

        let (w, b) = self.output_param();
        let (w, b) = (tape.param(w), tape.param(b));
        let logit = tape.affine(h.expect("hidden"), w, Some(b), 0..width)?;
        Ok(tape.scaled_sigmoid(logit, OUT_SCALE))
    }

    /// Evaluates the field for one patch and a batch of query directions,
    /// recording everything needed for gradients w.r.t. parameters and queries.
    pub fn forward<'m>(&'m self, patch: &Patch, queries: &[UnitVec3]) -> Result<Forward<'m>> {
        let mut tape = Tape::new(&self.params);
        let coords = tape.constant(patch.coords().clone());
        let q = tape.variable(queries_matrix(queries)?);
        let feature = self.record_encoder(&mut tape, coords)?;
        let alpha = self.record_decoder(&mut tape, feature, q)?;
        Ok(Forward { tape, alpha })
    }

    /// Single-query convenience wrapper around [`forward`](Self::forward).
    pub fn forward_one<'m>(&'m self, patch: &Patch, q: UnitVec3) -> Result<(f64, Forward<'m>)> {
        let fwd = self.forward(patch, &[q])?;
        Ok((fwd.alphas()[0], fwd))
    }

    /// Encodes a patch once so that many query batches can reuse it.
    pub fn encode(&self, patch: &Patch) -> Result<PatchCode> {
        let mut tape = Tape::new(&self.params);
        let coords = tape.constant(patch.coords().clone());
        let feature = self.record_encoder(&mut tape, coords)?;
        Ok(PatchCode(tape.value(feature).to_owned()))
    }

    /// Decoder-only forward pass for a pre-encoded patch. Gradients are
    /// available w.r.t. the queries (the feature is a constant here).
    pub fn forward_code<'m>(
        &'m self,
        code: &PatchCode,
        queries: ndarray::ArrayView2<'_, f64>,
    ) -> Result<Forward<'m>> {
        let mut tape = Tape::new(&self.params);
        let feature = tape.constant(code.0.clone());
        let q = tape.variable(queries.to_owned());
        let alpha = self.record_decoder(&mut tape, feature, q)?;
        Ok(Forward { tape, alpha })
    }

    /// Angle offsets for many queries, evaluated in chunks without keeping
    /// the tape around.
    pub fn predict(&self, code: &PatchCode, queries: &[UnitVec3]) -> Result<Vec<f64>> {
        const CHUNK: usize = 1024;
        let q = queries_matrix(queries)?;
        let mut out = Vec::with_capacity(queries.len());
        let mut start = 0;
        while start < q.nrows() {
            let end = (start + CHUNK).min(q.nrows());
            let fwd = self.forward_code(code, q.slice(ndarray::s![start..end, ..]))?;
            out.extend(fwd.alphas());
            start = end;
        }
        Ok(out)
    }
}

/// Encoder output for one patch.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchCode(Array2<f64>);

impl PatchCode {
    pub fn feature(&self) -> &Array2<f64> {
        &self.0
    }
}

pub(crate) fn queries_matrix(queries: &[UnitVec3]) -> Result<Array2<f64>> {
    if queries.is_empty() {
        return Err(Error::InvalidArgument("no query vectors".into()));
    }
    let mut q = Array2::zeros((queries.len(), 3));
    for (i, u) in queries.iter().enumerate() {
        q[[i, 0]] = u.x();
        q[[i, 1]] = u.y();
        q[[i, 2]] = u.z();
    }
    Ok(q)
}

/// A completed forward evaluation together with its recorded tape.
#[derive(Debug, Clone)]
pub struct Forward<'m> {
    tape: Tape<'m>,
    alpha: NodeId,
}

impl<'m> Forward<'m> {
    /// Predicted angle offsets, one per query.
    pub fn alphas(&self) -> Vec<f64> {
        self.tape.value(self.alpha).iter().copied().collect()
    }

    pub fn tape(&self) -> &Tape<'m> {
        &self.tape
    }

    /// See [`Tape::kink_margin`].
    pub fn kink_margin(&self) -> f64 {
        self.tape.kink_margin()
    }

    fn seed(&self, upstream: &[f64]) -> Array2<f64> {
        assert_eq!(upstream.len(), self.tape.value(self.alpha).nrows());
        Array2::from_shape_vec((upstream.len(), 1), upstream.to_vec()).expect("column")
    }

    /// See [`Tape::activation_pattern`].
    pub fn activation_pattern(&self) -> Vec<usize> {
        self.tape.activation_pattern()
    }

    /// Full backward pass with `upstream[i] = dL/dalpha_i`.
    pub fn backward(&self, upstream: &[f64]) -> Gradients {
        self.tape.backward(self.alpha, &self.seed(upstream), Targets::ALL)
    }

    /// Gradients of `L` w.r.t. every parameter.
    pub fn backward_params(&self, upstream: &[f64]) -> Vec<Array2<f64>> {
        self.backward(upstream).params
    }

    /// Gradient of `L` w.r.t. the query components, one row per query.
    /// Skips the parameter-gradient products.
    pub fn backward_query(&self, upstream: &[f64]) -> Array2<f64> {
        let mut g = self
            .tape
            .backward(self.alpha, &self.seed(upstream), Targets::VARIABLES);
        g.variables.swap_remove(0)
    }
}
