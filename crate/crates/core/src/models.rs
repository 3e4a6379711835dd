//! The five node classifiers and their shared architecture.
//!
//! Every model is `depth` layers of width `hidden_dim`, each followed by a
//! ReLU, and one output layer of the same kind with `out_dim` units and no
//! activation. Layer math:
//!
//! * `mlp`: `H W + b`, edges ignored.
//! * `gcn`: `M H W + b` with `M = D^-1/2 (A + I) D^-1/2`.
//! * `gat`: attention over the neighborhood plus self-loop,
//!   `e_ij = LeakyReLU(a_dst . W h_i + a_src . W h_j)`, softmax over `j`,
//!   heads averaged.
//! * `sage`: `W_self h_i + W_neigh mean_{j in N(i)} h_j + b`.
//! * `tagcn`: `sum_{k=0..K} M^k H W_k + b`.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Indices, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::GraphInput;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mlp,
    Gcn,
    Gat,
    Sage,
    Tagcn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Mlp,
        ModelKind::Gcn,
        ModelKind::Gat,
        ModelKind::Sage,
        ModelKind::Tagcn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Mlp => "mlp",
            ModelKind::Gcn => "gcn",
            ModelKind::Gat => "gat",
            ModelKind::Sage => "sage",
            ModelKind::Tagcn => "tagcn",
        }
    }

    pub fn uses_edges(self) -> bool {
        self != ModelKind::Mlp
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::BadConfig(format!("unknown model kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Number of hidden (message-passing) layers; the output layer is extra.
    pub depth: usize,
    pub hidden_dim: usize,
    pub in_dim: usize,
    pub out_dim: usize,
    pub tagcn_k: usize,
    pub gat_heads: usize,
    pub gat_slope: f64,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(kind: ModelKind, depth: usize, seed: u64) -> Self {
        ModelConfig {
            kind,
            depth,
            hidden_dim: 16,
            in_dim: 6,
            out_dim: 8,
            tagcn_k: 3,
            gat_heads: 1,
            gat_slope: 0.2,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 {
            return Err(Error::BadConfig("depth must be at least 1".into()));
        }
        if self.hidden_dim == 0 || self.in_dim == 0 || self.out_dim == 0 {
            return Err(Error::BadConfig("layer dimensions must be positive".into()));
        }
        if self.gat_heads == 0 {
            return Err(Error::BadConfig("gat_heads must be positive".into()));
        }
        if !self.gat_slope.is_finite() {
            return Err(Error::BadConfig("gat_slope must be finite".into()));
        }
        Ok(())
    }

    /// `(in, out)` widths of every parameterized layer, output layer last.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        (0..=self.depth)
            .map(|l| {
                let i = if l == 0 { self.in_dim } else { self.hidden_dim };
                let o = if l == self.depth {
                    self.out_dim
                } else {
                    self.hidden_dim
                };
                (i, o)
            })
            .collect()
    }

    /// Parameter names and shapes of one layer, in storage order.
    pub fn layer_param_shapes(&self, in_dim: usize, out_dim: usize) -> Vec<(String, Vec<usize>)> {
        let w = vec![in_dim, out_dim];
        let mut shapes = match self.kind {
            ModelKind::Mlp | ModelKind::Gcn => vec![("weight".to_string(), w)],
            ModelKind::Gat => (0..self.gat_heads)
                .flat_map(|h| {
                    [
                        (format!("head{h}.weight"), w.clone()),
                        (format!("head{h}.att_src"), vec![out_dim, 1]),
                        (format!("head{h}.att_dst"), vec![out_dim, 1]),
                    ]
                })
                .collect(),
            ModelKind::Sage => vec![
                ("weight_self".to_string(), w.clone()),
                ("weight_neigh".to_string(), w),
            ],
            ModelKind::Tagcn => (0..=self.tagcn_k)
                .map(|k| (format!("weight_{k}"), w.clone()))
                .collect(),
        };
        shapes.push(("bias".to_string(), vec![out_dim]));
        shapes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub params: Vec<Param>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub layers: Vec<Layer>,
}

/// Message-passing index structure for one (possibly batched) graph.
///
/// Undirected input edges are deduplicated, self-edges dropped, and each
/// edge expanded into both directions.
pub struct Propagation {
    n: usize,
    /// Directed messages `src -> dst` including one self-loop per node.
    loop_src: Indices,
    loop_dst: Indices,
    /// Symmetric normalization `1 / sqrt(d_dst d_src)` per self-looped message.
    loop_norm: Tensor,
    /// Directed messages without self-loops.
    nb_src: Indices,
    nb_dst: Indices,
}

impl Propagation {
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut pairs = BTreeSet::new();
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::BadIndex(format!("edge ({a}, {b}) with {n} nodes")));
            }
            if a != b {
                pairs.insert((a.min(b), a.max(b)));
            }
        }
        let mut nb_src = Vec::with_capacity(2 * pairs.len());
        let mut nb_dst = Vec::with_capacity(2 * pairs.len());
        for &(a, b) in &pairs {
            nb_src.extend([a, b]);
            nb_dst.extend([b, a]);
        }
        let mut deg = vec![1.0f64; n];
        for &d in &nb_dst {
            deg[d] += 1.0;
        }
        let loop_src: Vec<usize> = (0..n).chain(nb_src.iter().copied()).collect();
        let loop_dst: Vec<usize> = (0..n).chain(nb_dst.iter().copied()).collect();
        let norm = loop_src
            .iter()
            .zip(&loop_dst)
            .map(|(&s, &d)| 1.0 / (deg[s] * deg[d]).sqrt())
            .collect::<Vec<_>>();
        Ok(Propagation {
            n,
            loop_norm: Tensor::from_parts(vec![norm.len(), 1], norm),
            loop_src: loop_src.into(),
            loop_dst: loop_dst.into(),
            nb_src: nb_src.into(),
            nb_dst: nb_dst.into(),
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    /// One application of the normalized self-looped adjacency `M`.
    fn normalized_step<'t>(&self, h: Var<'t>) -> Result<Var<'t>> {
        let norm = h.tape().constant(self.loop_norm.clone());
        h.gather_rows(&self.loop_src)?
            .mul_col(norm)?
            .segment_sum(&self.loop_dst, self.n)
    }
}

fn with_bias<'t>(h: Var<'t>, bias: Option<Var<'t>>) -> Result<Var<'t>> {
    match bias {
        Some(b) => h.add_bias(b),
        None => Ok(h),
    }
}

pub fn linear_layer<'t>(h: Var<'t>, w: Var<'t>, bias: Option<Var<'t>>) -> Result<Var<'t>> {
    with_bias(h.matmul(w)?, bias)
}

pub fn gcn_layer<'t>(
    h: Var<'t>,
    prop: &Propagation,
    w: Var<'t>,
    bias: Option<Var<'t>>,
) -> Result<Var<'t>> {
    with_bias(prop.normalized_step(h.matmul(w)?)?, bias)
}

/// One attention head: `(weight, att_src, att_dst)`.
pub type GatHead<'t> = (Var<'t>, Var<'t>, Var<'t>);

/// Returns the layer output and, per head, the attention coefficient of
/// every self-looped message (aligned with the propagation's message order).
pub fn gat_layer<'t>(
    h: Var<'t>,
    prop: &Propagation,
    heads: &[GatHead<'t>],
    slope: f64,
    bias: Option<Var<'t>>,
) -> Result<(Var<'t>, Vec<Var<'t>>)> {
    let mut total: Option<Var<'t>> = None;
    let mut alphas = Vec::with_capacity(heads.len());
    for &(w, att_src, att_dst) in heads {
        let xw = h.matmul(w)?;
        let s_src = xw.matmul(att_src)?.gather_rows(&prop.loop_src)?;
        let s_dst = xw.matmul(att_dst)?.gather_rows(&prop.loop_dst)?;
        let scores = s_dst.add(s_src)?.leaky_relu(slope);
        let alpha = scores.segment_softmax(&prop.loop_dst, prop.n)?;
        let out = xw
            .gather_rows(&prop.loop_src)?
            .mul_col(alpha)?
            .segment_sum(&prop.loop_dst, prop.n)?;
        total = Some(match total {
            None => out,
            Some(t) => t.add(out)?,
        });
        alphas.push(alpha);
    }
    let total = total.ok_or_else(|| Error::BadConfig("GAT layer without heads".into()))?;
    let averaged = if heads.len() > 1 {
        total.scale(1.0 / heads.len() as f64)
    } else {
        total
    };
    Ok((with_bias(averaged, bias)?, alphas))
}

pub fn sage_layer<'t>(
    h: Var<'t>,
    prop: &Propagation,
    w_self: Var<'t>,
    w_neigh: Var<'t>,
    bias: Option<Var<'t>>,
) -> Result<Var<'t>> {
    let neigh_mean = h
        .gather_rows(&prop.nb_src)?
        .segment_mean(&prop.nb_dst, prop.n)?;
    let out = h.matmul(w_self)?.add(neigh_mean.matmul(w_neigh)?)?;
    with_bias(out, bias)
}

pub fn tagcn_layer<'t>(
    h: Var<'t>,
    prop: &Propagation,
    hop_weights: &[Var<'t>],
    bias: Option<Var<'t>>,
) -> Result<Var<'t>> {
    let (first, rest) = hop_weights
        .split_first()
        .ok_or_else(|| Error::BadConfig("TAGCN layer needs at least one hop weight".into()))?;
    let mut hop = h;
    let mut out = h.matmul(*first)?;
    for &w in rest {
        hop = prop.normalized_step(hop)?;
        out = out.add(hop.matmul(w)?)?;
    }
    with_bias(out, bias)
}

fn check_rows(h: &Tensor, n: usize) -> Result<()> {
    let (rows, _) = h.require_matrix("layer input")?;
    if rows != n {
        return Err(Error::Shape(format!("{rows} feature rows for {n} nodes")));
    }
    Ok(())
}

/// Bias-free GCN layer on plain tensors.
pub fn gcn_forward(h: &Tensor, edges: &[(usize, usize)], w: &Tensor) -> Result<Tensor> {
    let prop = Propagation::new(h.rows(), edges)?;
    check_rows(h, prop.n)?;
    let tape = Tape::new();
    let out = gcn_layer(
        tape.constant(h.clone()),
        &prop,
        tape.constant(w.clone()),
        None,
    )?;
    Ok(out.value().as_ref().clone())
}

/// Bias-free single-head GAT layer; `a` holds the destination half of the
/// attention vector followed by the source half.
pub fn gat_forward(
    h: &Tensor,
    edges: &[(usize, usize)],
    w: &Tensor,
    a: &[f64],
    slope: f64,
) -> Result<Tensor> {
    Ok(gat_forward_with_attention(h, edges, w, a, slope)?.0)
}

/// Like [`gat_forward`], also returning `(dst, src, alpha)` for every
/// attended pair, self-loops included.
pub fn gat_forward_with_attention(
    h: &Tensor,
    edges: &[(usize, usize)],
    w: &Tensor,
    a: &[f64],
    slope: f64,
) -> Result<(Tensor, Vec<(usize, usize, f64)>)> {
    let prop = Propagation::new(h.rows(), edges)?;
    check_rows(h, prop.n)?;
    let f_out = w.cols();
    if a.len() != 2 * f_out {
        return Err(Error::Shape(format!(
            "attention vector of {} for output width {f_out}",
            a.len()
        )));
    }
    let tape = Tape::new();
    let att_dst = tape.constant(Tensor::from_parts(vec![f_out, 1], a[..f_out].to_vec()));
    let att_src = tape.constant(Tensor::from_parts(vec![f_out, 1], a[f_out..].to_vec()));
    let head = (tape.constant(w.clone()), att_src, att_dst);
    let (out, alphas) = gat_layer(tape.constant(h.clone()), &prop, &[head], slope, None)?;
    let alpha = alphas[0].value();
    let triples = prop
        .loop_dst
        .iter()
        .zip(prop.loop_src.iter())
        .zip(alpha.data())
        .map(|((&d, &s), &v)| (d, s, v))
        .collect();
    Ok((out.value().as_ref().clone(), triples))
}

/// Bias-free GraphSAGE (mean aggregator) layer on plain tensors.
pub fn sage_forward(
    h: &Tensor,
    edges: &[(usize, usize)],
    w_self: &Tensor,
    w_neigh: &Tensor,
) -> Result<Tensor> {
    let prop = Propagation::new(h.rows(), edges)?;
    check_rows(h, prop.n)?;
    let tape = Tape::new();
    let out = sage_layer(
        tape.constant(h.clone()),
        &prop,
        tape.constant(w_self.clone()),
        tape.constant(w_neigh.clone()),
        None,
    )?;
    Ok(out.value().as_ref().clone())
}

/// Bias-free TAGCN layer; `hop_weights[k]` multiplies `M^k H`.
pub fn tagcn_forward(
    h: &Tensor,
    edges: &[(usize, usize)],
    hop_weights: &[Tensor],
) -> Result<Tensor> {
    let prop = Propagation::new(h.rows(), edges)?;
    check_rows(h, prop.n)?;
    let tape = Tape::new();
    let ws: Vec<Var> = hop_weights
        .iter()
        .map(|w| tape.constant(w.clone()))
        .collect();
    let out = tagcn_layer(tape.constant(h.clone()), &prop, &ws, None)?;
    Ok(out.value().as_ref().clone())
}

fn glorot(rng: &mut ChaCha8Rng, shape: &[usize], blocks: usize) -> Tensor {
    let (fan_in, fan_out) = (shape[0] * blocks, shape[1]);
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..shape[0] * shape[1])
        .map(|_| rng.random_range(-limit..limit))
        .collect();
    Tensor::from_parts(shape.to_vec(), data)
}

/// Where a forward pass stops.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Readout {
    Logits,
    /// Post-ReLU activations of the last hidden layer.
    Embeddings,
}

impl Model {
    /// Glorot-uniform weights, zero biases, drawn in layer then parameter order.
    ///
    /// TAGCN hop weights are the row blocks of one `(K+1)·in x out` map over
    /// the concatenated hop features, so their fan-in is `(K+1)·in`.
    pub fn init(config: ModelConfig) -> Result<Model> {
        config.validate()?;
        let blocks = match config.kind {
            ModelKind::Tagcn => config.tagcn_k + 1,
            _ => 1,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let layers = config
            .layer_dims()
            .into_iter()
            .map(|(i, o)| Layer {
                in_dim: i,
                out_dim: o,
                params: config
                    .layer_param_shapes(i, o)
                    .into_iter()
                    .map(|(name, shape)| {
                        let value = if name == "bias" {
                            Tensor::zeros(&shape)
                        } else {
                            glorot(&mut rng, &shape, blocks)
                        };
                        Param { name, value }
                    })
                    .collect(),
            })
            .collect();
        Ok(Model { config, layers })
    }

    /// `(qualified name, tensor)` for every parameter, in optimizer order.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(l, layer)| {
                layer
                    .params
                    .iter()
                    .map(move |p| (format!("layers.{l}.{}", p.name), &p.value))
            })
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params.iter_mut().map(|p| &mut p.value))
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn weight_shapes(&self) -> Vec<Vec<usize>> {
        self.named_params()
            .into_iter()
            .filter(|(name, _)| !name.ends_with("bias"))
            .map(|(_, t)| t.shape().to_vec())
            .collect()
    }

    /// Puts every parameter on `tape`, tracked for gradients when `trainable`.
    pub fn param_vars<'t>(&self, tape: &'t Tape, trainable: bool) -> Vec<Var<'t>> {
        self.layers
            .iter()
            .flat_map(|l| l.params.iter())
            .map(|p| {
                if trainable {
                    tape.param(p.value.clone())
                } else {
                    tape.constant(p.value.clone())
                }
            })
            .collect()
    }

    /// Records a forward pass on `tape`. `params` must come from
    /// [`Model::param_vars`] on the same tape.
    pub fn forward_on_tape<'t>(
        &self,
        tape: &'t Tape,
        g: &dyn GraphInput,
        params: &[Var<'t>],
        readout: Readout,
    ) -> Result<Var<'t>> {
        let cfg = &self.config;
        let x = g.features();
        let (n, f) = x.require_matrix("model input")?;
        if f != cfg.in_dim {
            return Err(Error::Shape(format!(
                "model expects {} features per node, got {f}",
                cfg.in_dim
            )));
        }
        let prop = if cfg.kind.uses_edges() {
            Some(Propagation::new(n, g.edges())?)
        } else {
            None
        };
        let mut h = tape.constant(x.clone());
        let mut offset = 0;
        for (l, layer) in self.layers.iter().enumerate() {
            let count = layer.params.len();
            let vars = params
                .get(offset..offset + count)
                .ok_or_else(|| Error::Shape("parameter list shorter than the model".into()))?;
            offset += count;
            h = self.apply_layer(h, prop.as_ref(), vars)?;
            if l + 1 < self.layers.len() {
                h = h.relu();
                if readout == Readout::Embeddings && l + 2 == self.layers.len() {
                    return Ok(h);
                }
            }
        }
        Ok(h)
    }

    fn apply_layer<'t>(
        &self,
        h: Var<'t>,
        prop: Option<&Propagation>,
        vars: &[Var<'t>],
    ) -> Result<Var<'t>> {
        let (weights, bias) = vars.split_at(vars.len() - 1);
        let bias = Some(bias[0]);
        let Some(prop) = prop else {
            return linear_layer(h, weights[0], bias);
        };
        match self.config.kind {
            ModelKind::Mlp => linear_layer(h, weights[0], bias),
            ModelKind::Gcn => gcn_layer(h, prop, weights[0], bias),
            ModelKind::Gat => {
                let heads: Vec<GatHead> = weights.chunks(3).map(|c| (c[0], c[1], c[2])).collect();
                Ok(gat_layer(h, prop, &heads, self.config.gat_slope, bias)?.0)
            }
            ModelKind::Sage => sage_layer(h, prop, weights[0], weights[1], bias),
            ModelKind::Tagcn => tagcn_layer(h, prop, weights, bias),
        }
    }

    /// Logits, one row of `out_dim` per node.
    pub fn forward(&self, g: &dyn GraphInput) -> Result<Tensor> {
        self.run(g, Readout::Logits)
    }

    /// Last hidden-layer activations, one row of `hidden_dim` per node.
    pub fn embeddings(&self, g: &dyn GraphInput) -> Result<Tensor> {
        self.run(g, Readout::Embeddings)
    }

    fn run(&self, g: &dyn GraphInput, readout: Readout) -> Result<Tensor> {
        let tape = Tape::new();
        let params = self.param_vars(&tape, false);
        let out = self.forward_on_tape(&tape, g, &params, readout)?;
        Ok(out.value().as_ref().clone())
    }

    /// Sign of every rectifier input in a forward pass; a change in this
    /// pattern marks a non-differentiable point between two parameter sets.
    pub fn rectifier_pattern(&self, g: &dyn GraphInput) -> Result<Vec<bool>> {
        let tape = Tape::new();
        let params = self.param_vars(&tape, false);
        self.forward_on_tape(&tape, g, &params, Readout::Logits)?;
        Ok(tape.rectifier_pattern())
    }
}

pub fn init_model(config: ModelConfig) -> Result<Model> {
    Model::init(config)
}

pub fn model_forward(m: &Model, g: &dyn GraphInput) -> Result<Tensor> {
    m.forward(g)
}

pub fn node_embeddings(m: &Model, g: &dyn GraphInput) -> Result<Tensor> {
    m.embeddings(g)
}
