//! The contrastive decoder.
//!
//! Two attention blocks and an MLP head:
//!
//! 1. **difference** — cross-attention with queries from the *after* image's
//!    tokens and keys/values from the *before* image's tokens;
//! 2. **alignment** — cross-attention with queries from the difference and
//!    keys/values from the instruction tokens;
//! 3. **head** — pool the aligned tokens, run an MLP to two logits, and
//!    read the success probability off a 2-class softmax.
//!
//! Attention is the bare scaled-dot-product form
//! `softmax((X_A W_q)(X_B W_k)^T / sqrt(d_k)) X_B W_v`; residual connections
//! and row normalization exist behind config flags and default to off. The
//! self-attention variant used for ablations replaces each cross-attention
//! with self-attention over the row-concatenation of both operands, keeping
//! the rows that correspond to the first operand.

mod checkpoint;

pub use checkpoint::{
    checkpoint_bytes, load_checkpoint, params_from_bytes, round_trip_storage, save_checkpoint,
};

use crate::error::{Error, Result};
use crate::numerics::{softmax_rows, Matrix, NodeId, Tape};
use crate::representation::{
    assemble_lambda, assemble_language, EpisodeFeatures, LambdaRepresentation, LanguageFeature,
    SourceRegistry,
};
use crate::rng::SplitMix64;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Which attention wiring the decoder uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionMode {
    Cross,
    #[serde(rename = "self")]
    SelfAttn,
}

impl AttentionMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cross" => Ok(AttentionMode::Cross),
            "self" => Ok(AttentionMode::SelfAttn),
            other => Err(Error::Config(format!("unknown attention mode '{other}'"))),
        }
    }
}

/// How the aligned tokens collapse to one vector before the MLP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolMode {
    Mean,
    FirstToken,
}

/// Decoder shape knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub d_model: usize,
    pub d_k: usize,
    pub d_v: usize,
    pub n_heads: usize,
    pub mlp_hidden: Vec<usize>,
    pub pool: PoolMode,
    pub residual: bool,
    pub layer_norm: bool,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            d_model: 256,
            d_k: 256,
            d_v: 256,
            n_heads: 1,
            mlp_hidden: vec![512, 256],
            pool: PoolMode::Mean,
            residual: false,
            layer_norm: false,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.d_k == 0 || self.d_v == 0 {
            return Err(Error::Config("d_model, d_k, d_v must be positive".into()));
        }
        if self.n_heads == 0 {
            return Err(Error::Config("n_heads must be positive".into()));
        }
        if !self.d_k.is_multiple_of(self.n_heads) || !self.d_v.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "n_heads {} must divide d_k {} and d_v {}",
                self.n_heads, self.d_k, self.d_v
            )));
        }
        if self.residual && self.d_v != self.d_model {
            return Err(Error::Config(
                "residual connections need d_v == d_model".into(),
            ));
        }
        Ok(())
    }
}

/// Trainable weights of one attention block.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBlockParams {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
}

impl AttentionBlockParams {
    fn init(cfg: &DecoderConfig, rng: &mut SplitMix64) -> Self {
        Self {
            w_q: init_matrix(cfg.d_model, cfg.d_k, rng),
            w_k: init_matrix(cfg.d_model, cfg.d_k, rng),
            w_v: init_matrix(cfg.d_model, cfg.d_v, rng),
        }
    }

    fn param_count(&self) -> usize {
        let count = |m: &Matrix| m.rows() * m.cols();
        count(&self.w_q) + count(&self.w_k) + count(&self.w_v)
    }
}

fn init_matrix(rows: usize, cols: usize, rng: &mut SplitMix64) -> Matrix {
    // Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
    let scale = 1.0 / (rows as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.next_symmetric(scale)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized data")
}

/// Every trainable tensor in the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    /// Per-source projection to `d_model`, keyed by source id.
    pub projections: BTreeMap<String, Matrix>,
    pub diff_attn: AttentionBlockParams,
    pub align_attn: AttentionBlockParams,
    /// `(weight, bias)` per layer; the final layer emits 2 logits.
    pub mlp: Vec<(Matrix, Matrix)>,
    pub config: DecoderConfig,
}

impl DecoderParams {
    /// Seeded initialization for the sources the (possibly group-filtered)
    /// registry declares.
    pub fn init(registry: &SourceRegistry, cfg: &DecoderConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = SplitMix64::derive(seed, "decoder-init");

        let mut projections = BTreeMap::new();
        for (_, spec) in registry.image_sources() {
            projections.insert(spec.id.clone(), init_matrix(spec.dim, cfg.d_model, &mut rng));
        }
        for spec in registry.instruction() {
            projections.insert(spec.id.clone(), init_matrix(spec.dim, cfg.d_model, &mut rng));
        }

        let diff_attn = AttentionBlockParams::init(cfg, &mut rng);
        let align_attn = AttentionBlockParams::init(cfg, &mut rng);

        let mut mlp = Vec::new();
        let mut in_dim = cfg.d_v;
        for &width in &cfg.mlp_hidden {
            if width == 0 {
                return Err(Error::Config("mlp hidden width 0".into()));
            }
            mlp.push((
                init_matrix(in_dim, width, &mut rng),
                init_matrix(1, width, &mut rng),
            ));
            in_dim = width;
        }
        mlp.push((init_matrix(in_dim, 2, &mut rng), init_matrix(1, 2, &mut rng)));

        Ok(Self {
            projections,
            diff_attn,
            align_attn,
            mlp,
            config: cfg.clone(),
        })
    }

    /// Canonical tensor order used by flattening, checkpoints, and the
    /// optimizer: projections sorted by source id, then the two attention
    /// blocks, then the MLP layers.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names: Vec<String> =
            self.projections.keys().map(|k| format!("proj.{k}")).collect();
        for block in ["diff", "align"] {
            for w in ["w_q", "w_k", "w_v"] {
                names.push(format!("{block}.{w}"));
            }
        }
        for i in 0..self.mlp.len() {
            names.push(format!("mlp.{i}.w"));
            names.push(format!("mlp.{i}.b"));
        }
        names
    }

    pub fn tensor(&self, name: &str) -> Option<&Matrix> {
        if let Some(source) = name.strip_prefix("proj.") {
            return self.projections.get(source);
        }
        match name {
            "diff.w_q" => Some(&self.diff_attn.w_q),
            "diff.w_k" => Some(&self.diff_attn.w_k),
            "diff.w_v" => Some(&self.diff_attn.w_v),
            "align.w_q" => Some(&self.align_attn.w_q),
            "align.w_k" => Some(&self.align_attn.w_k),
            "align.w_v" => Some(&self.align_attn.w_v),
            _ => {
                let rest = name.strip_prefix("mlp.")?;
                let (idx, kind) = rest.split_once('.')?;
                let idx: usize = idx.parse().ok()?;
                let layer = self.mlp.get(idx)?;
                match kind {
                    "w" => Some(&layer.0),
                    "b" => Some(&layer.1),
                    _ => None,
                }
            }
        }
    }

    fn tensor_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        if let Some(source) = name.strip_prefix("proj.") {
            return self.projections.get_mut(source);
        }
        match name {
            "diff.w_q" => Some(&mut self.diff_attn.w_q),
            "diff.w_k" => Some(&mut self.diff_attn.w_k),
            "diff.w_v" => Some(&mut self.diff_attn.w_v),
            "align.w_q" => Some(&mut self.align_attn.w_q),
            "align.w_k" => Some(&mut self.align_attn.w_k),
            "align.w_v" => Some(&mut self.align_attn.w_v),
            _ => {
                let rest = name.strip_prefix("mlp.")?;
                let (idx, kind) = rest.split_once('.')?;
                let idx: usize = idx.parse().ok()?;
                let layer = self.mlp.get_mut(idx)?;
                match kind {
                    "w" => Some(&mut layer.0),
                    "b" => Some(&mut layer.1),
                    _ => None,
                }
            }
        }
    }

    /// All scalars in canonical order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        for name in self.tensor_names() {
            flat.extend_from_slice(self.tensor(&name).expect("named tensor").data());
        }
        flat
    }

    /// Overwrite all tensors from a canonical flat vector.
    pub fn unflatten_into(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::shape("unflatten", (flat.len(), 1), (self.param_count(), 1)));
        }
        let mut offset = 0;
        for name in self.tensor_names() {
            let tensor = self.tensor_mut(&name).expect("named tensor");
            let n = tensor.rows() * tensor.cols();
            tensor.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.count_params().total
    }

    /// Exact trainable-scalar totals, broken down by component.
    pub fn count_params(&self) -> ParamCountReport {
        let projections: BTreeMap<String, usize> = self
            .projections
            .iter()
            .map(|(id, m)| (id.clone(), m.rows() * m.cols()))
            .collect();
        let mlp = self
            .mlp
            .iter()
            .map(|(w, b)| w.rows() * w.cols() + b.rows() * b.cols())
            .sum();
        let report = ParamCountReport {
            projections,
            diff_attn: self.diff_attn.param_count(),
            align_attn: self.align_attn.param_count(),
            mlp,
            total: 0,
        };
        let total = report.projections.values().sum::<usize>()
            + report.diff_attn
            + report.align_attn
            + report.mlp;
        ParamCountReport { total, ..report }
    }

    /// Load this parameter set onto a tape as leaves.
    pub fn stage(&self, tape: &mut Tape) -> StagedParams {
        let mut nodes = BTreeMap::new();
        for name in self.tensor_names() {
            let node = tape.leaf(self.tensor(&name).expect("named tensor").clone());
            nodes.insert(name, node);
        }
        StagedParams { nodes }
    }
}

/// Component-wise parameter totals.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamCountReport {
    pub projections: BTreeMap<String, usize>,
    pub diff_attn: usize,
    pub align_attn: usize,
    pub mlp: usize,
    pub total: usize,
}

impl std::fmt::Display for ParamCountReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (id, n) in &self.projections {
            writeln!(f, "projection {id:<28} {n:>12}")?;
        }
        writeln!(f, "difference attention             {:>12}", self.diff_attn)?;
        writeln!(f, "alignment attention              {:>12}", self.align_attn)?;
        writeln!(f, "mlp head                         {:>12}", self.mlp)?;
        write!(f, "total                            {:>12}", self.total)
    }
}

/// Tape handles for every parameter tensor.
pub struct StagedParams {
    nodes: BTreeMap<String, NodeId>,
}

impl StagedParams {
    pub fn node(&self, name: &str) -> Option<NodeId> {
        self.nodes.get(name).copied()
    }

    pub fn projection(&self, source_id: &str) -> Option<NodeId> {
        self.node(&format!("proj.{source_id}"))
    }

    /// Iterate `(name, node)` in canonical order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, NodeId)> {
        self.nodes.iter().map(|(n, id)| (n.as_str(), *id))
    }

    fn attn(&self, block: &str) -> StagedAttention {
        StagedAttention {
            w_q: self.node(&format!("{block}.w_q")).expect("staged"),
            w_k: self.node(&format!("{block}.w_k")).expect("staged"),
            w_v: self.node(&format!("{block}.w_v")).expect("staged"),
        }
    }

    pub fn diff_attn(&self) -> StagedAttention {
        self.attn("diff")
    }

    pub fn align_attn(&self) -> StagedAttention {
        self.attn("align")
    }
}

/// Staged weight nodes of one attention block.
#[derive(Debug, Clone, Copy)]
pub struct StagedAttention {
    pub w_q: NodeId,
    pub w_k: NodeId,
    pub w_v: NodeId,
}

/// Columns `[start, start+len)` of a node, via transpose + row slice.
fn slice_cols(tape: &mut Tape, node: NodeId, start: usize, len: usize) -> Result<NodeId> {
    let t = tape.transpose(node);
    let sliced = tape.slice_rows(t, start, len)?;
    Ok(tape.transpose(sliced))
}

/// Scaled dot-product attention with queries from `x_a` and keys/values
/// from `x_b`. Multiple heads split `d_k`/`d_v` evenly and concatenate.
pub fn cross_attention(
    tape: &mut Tape,
    x_a: NodeId,
    x_b: NodeId,
    weights: &StagedAttention,
    cfg: &DecoderConfig,
) -> Result<NodeId> {
    if tape.value(x_b).rows() == 0 {
        return Err(Error::EmptyKeys("cross_attention"));
    }
    let dk_head = cfg.d_k / cfg.n_heads;
    let dv_head = cfg.d_v / cfg.n_heads;
    let scale = 1.0 / (dk_head as f64).sqrt();

    let mut head_outputs = Vec::with_capacity(cfg.n_heads);
    for h in 0..cfg.n_heads {
        let (w_q, w_k, w_v) = if cfg.n_heads == 1 {
            (weights.w_q, weights.w_k, weights.w_v)
        } else {
            (
                slice_cols(tape, weights.w_q, h * dk_head, dk_head)?,
                slice_cols(tape, weights.w_k, h * dk_head, dk_head)?,
                slice_cols(tape, weights.w_v, h * dv_head, dv_head)?,
            )
        };
        let q = tape.matmul(x_a, w_q)?;
        let k = tape.matmul(x_b, w_k)?;
        let v = tape.matmul(x_b, w_v)?;
        let kt = tape.transpose(k);
        let scores = tape.matmul(q, kt)?;
        let scaled = tape.scale(scores, scale);
        let attn = tape.softmax_rows(scaled)?;
        head_outputs.push(tape.matmul(attn, v)?);
    }

    if cfg.n_heads == 1 {
        Ok(head_outputs[0])
    } else {
        // Concatenate along columns: transpose, stack rows, transpose back.
        let transposed: Vec<NodeId> = head_outputs.iter().map(|&o| tape.transpose(o)).collect();
        let stacked = tape.concat_rows(&transposed)?;
        Ok(tape.transpose(stacked))
    }
}

/// One attention application under the configured mode, plus the optional
/// residual and normalization.
fn attention_pair(
    tape: &mut Tape,
    x_a: NodeId,
    x_b: NodeId,
    weights: &StagedAttention,
    cfg: &DecoderConfig,
    mode: AttentionMode,
) -> Result<NodeId> {
    let mut out = match mode {
        AttentionMode::Cross => cross_attention(tape, x_a, x_b, weights, cfg)?,
        AttentionMode::SelfAttn => {
            // Self-attention over [A; B], keeping A's rows. Output shapes
            // match the cross wiring so the two modes are interchangeable.
            if tape.value(x_b).rows() == 0 {
                return Err(Error::EmptyKeys("self_attention"));
            }
            let joint = tape.concat_rows(&[x_a, x_b])?;
            let full = cross_attention(tape, joint, joint, weights, cfg)?;
            let keep = tape.value(x_a).rows();
            tape.slice_rows(full, 0, keep)?
        }
    };
    if cfg.residual {
        out = tape.add(x_a, out)?;
    }
    if cfg.layer_norm {
        out = tape.layer_norm_rows(out, 1e-5)?;
    }
    Ok(out)
}

/// Difference tokens: queries from the after-image representation,
/// keys/values from the before-image representation.
pub fn compute_diff(
    tape: &mut Tape,
    after: &LambdaRepresentation,
    before: &LambdaRepresentation,
    weights: &StagedAttention,
    cfg: &DecoderConfig,
    mode: AttentionMode,
) -> Result<NodeId> {
    if after.block_map != before.block_map {
        return Err(Error::shape(
            "compute_diff",
            (after.block_map.token_count(), 0),
            (before.block_map.token_count(), 0),
        ));
    }
    attention_pair(tape, after.tokens, before.tokens, weights, cfg, mode)
}

/// Alignment tokens: queries from the difference, keys/values from the
/// instruction tokens.
pub fn compute_align(
    tape: &mut Tape,
    h_diff: NodeId,
    language: &LanguageFeature,
    weights: &StagedAttention,
    cfg: &DecoderConfig,
    mode: AttentionMode,
) -> Result<NodeId> {
    if language.token_count == 0 {
        return Err(Error::EmptyKeys("compute_align"));
    }
    attention_pair(tape, h_diff, language.tokens, weights, cfg, mode)
}

/// Pool the aligned tokens and run the MLP to 2 logits.
pub fn mlp_head(
    tape: &mut Tape,
    h_align: NodeId,
    staged: &StagedParams,
    n_layers: usize,
    cfg: &DecoderConfig,
) -> Result<NodeId> {
    let mut x = match cfg.pool {
        PoolMode::Mean => tape.mean_rows(h_align)?,
        PoolMode::FirstToken => tape.slice_rows(h_align, 0, 1)?,
    };
    for i in 0..n_layers {
        let w = staged.node(&format!("mlp.{i}.w")).expect("staged mlp");
        let b = staged.node(&format!("mlp.{i}.b")).expect("staged mlp");
        x = tape.matmul(x, w)?;
        x = tape.add(x, b)?;
        if i + 1 < n_layers {
            x = tape.relu(x);
        }
    }
    Ok(x)
}

/// Tape handles to the interesting intermediates of one forward pass.
pub struct ForwardGraph {
    pub logits: NodeId,
    pub h_diff: NodeId,
    pub h_align: NodeId,
}

/// Build the full differentiable graph for one episode on `tape`.
pub fn forward_on(
    tape: &mut Tape,
    staged: &StagedParams,
    params: &DecoderParams,
    features: &EpisodeFeatures,
    mode: AttentionMode,
) -> Result<ForwardGraph> {
    let cfg = &params.config;
    let proj = |id: &str| staged.projection(id);

    let before = assemble_lambda(
        tape,
        &proj,
        &features.scene_before,
        &features.aligned_before,
        &features.narrative_before,
    )?;
    let after = assemble_lambda(
        tape,
        &proj,
        &features.scene_after,
        &features.aligned_after,
        &features.narrative_after,
    )?;
    let language = assemble_language(tape, &proj, &features.instruction)?;

    let diff_w = staged.diff_attn();
    let align_w = staged.align_attn();
    let h_diff = compute_diff(tape, &after, &before, &diff_w, cfg, mode)?;
    let h_align = compute_align(tape, h_diff, &language, &align_w, cfg, mode)?;
    let logits = mlp_head(tape, h_align, staged, params.mlp.len(), cfg)?;
    Ok(ForwardGraph {
        logits,
        h_diff,
        h_align,
    })
}

/// Collect gradients into the canonical flat order, zeros for tensors the
/// loss never touched.
pub fn flat_gradients(
    params: &DecoderParams,
    staged: &StagedParams,
    grads: &crate::numerics::Gradients,
) -> Vec<f64> {
    let mut flat = Vec::with_capacity(params.param_count());
    for name in params.tensor_names() {
        let tensor = params.tensor(&name).expect("named tensor");
        let node = staged.node(&name).expect("staged tensor");
        match grads.wrt(node) {
            Some(g) => flat.extend_from_slice(g.data()),
            None => flat.extend(std::iter::repeat_n(0.0, tensor.rows() * tensor.cols())),
        }
    }
    flat
}

/// Prediction for one episode.
#[derive(Debug, Clone)]
pub struct PredictionOutput {
    pub logits: [f64; 2],
    /// `P(success)`, read off the 2-class softmax of `logits`.
    pub p_success: f64,
    pub h_diff: Matrix,
    pub h_align: Matrix,
}

/// Run the decoder without keeping the tape. Pure: identical inputs give
/// bitwise-identical outputs.
pub fn forward(
    features: &EpisodeFeatures,
    params: &DecoderParams,
    mode: AttentionMode,
) -> Result<PredictionOutput> {
    let mut tape = Tape::new();
    let staged = params.stage(&mut tape);
    let graph = forward_on(&mut tape, &staged, params, features, mode)?;
    let logits_m = tape.value(graph.logits);
    if logits_m.shape() != (1, 2) {
        return Err(Error::shape("forward", logits_m.shape(), (1, 2)));
    }
    let probs = softmax_rows(logits_m)?;
    Ok(PredictionOutput {
        logits: [logits_m.at(0, 0), logits_m.at(0, 1)],
        p_success: probs.at(0, 1),
        h_diff: tape.value(graph.h_diff).clone(),
        h_align: tape.value(graph.h_align).clone(),
    })
}

#[cfg(test)]
mod tests;
