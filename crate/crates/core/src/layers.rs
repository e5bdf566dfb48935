//! AGGCN building blocks: graph convolution, attention-guided adjacency,
//! densely connected sub-layer stacks, linear combination, and block stacking.
//!
//! All functions record onto a [`Tape`] and read parameters from a
//! [`ParamStore`]; weights follow the `[d_out × d_in]` convention, so a
//! layer computes `h · Wᵀ`.

use crate::error::{Error, Result};
use crate::numerics::{Matrix, ParamId, ParamStore, Rng, Tape, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionHeadParams {
    pub w_q: ParamId,
    pub w_k: ParamId,
}

impl AttentionHeadParams {
    pub fn init(store: &mut ParamStore, prefix: &str, d: usize, rng: &mut Rng) -> Self {
        AttentionHeadParams {
            w_q: store.add_uniform(format!("{prefix}.w_q"), d, d, d, rng),
            w_k: store.add_uniform(format!("{prefix}.w_k"), d, d, d, rng),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubLayerParams {
    /// `[d_hidden × d_in]`
    pub w: ParamId,
    /// `[1 × d_hidden]`
    pub b: ParamId,
}

/// One densely connected layer: `L` sub-layers of width `d / L`, the
/// `l`-th consuming `d + d_hidden·(l−1)` input columns.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayerParams {
    pub d: usize,
    pub d_hidden: usize,
    pub sublayers: Vec<SubLayerParams>,
}

impl DenseLayerParams {
    /// Input widths of the sub-layers for a `(d, L)` schedule.
    pub fn schedule(d: usize, sublayers: usize) -> Result<Vec<usize>> {
        if sublayers == 0 || d == 0 || !d.is_multiple_of(sublayers) {
            return Err(Error::Config(format!(
                "dense layer width {d} is not divisible by {sublayers} sub-layers"
            )));
        }
        let hidden = d / sublayers;
        Ok((0..sublayers).map(|l| d + hidden * l).collect())
    }

    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        d: usize,
        sublayers: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let widths = Self::schedule(d, sublayers)?;
        let d_hidden = d / sublayers;
        let sublayers = widths
            .iter()
            .enumerate()
            .map(|(l, &din)| SubLayerParams {
                w: store.add_uniform(format!("{prefix}.{l}.w"), d_hidden, din, din, rng),
                b: store.add_zeros(format!("{prefix}.{l}.b"), 1, d_hidden),
            })
            .collect();
        Ok(DenseLayerParams {
            d,
            d_hidden,
            sublayers,
        })
    }

    pub fn input_widths(&self, store: &ParamStore) -> Vec<usize> {
        self.sublayers.iter().map(|s| store.value(s.w).cols()).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams {
    pub d: usize,
    pub heads: Vec<AttentionHeadParams>,
    /// Per head, the dense groups applied in sequence.
    pub dense_groups: Vec<Vec<DenseLayerParams>>,
    /// `[(d·N) × d]`
    pub w_comb: ParamId,
    /// `[1 × d]`
    pub b_comb: ParamId,
}

impl BlockParams {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        d: usize,
        n_heads: usize,
        group_sizes: &[usize],
        rng: &mut Rng,
    ) -> Result<Self> {
        if n_heads == 0 {
            return Err(Error::Config("a block needs at least one head".into()));
        }
        if group_sizes.is_empty() {
            return Err(Error::Config("a block needs at least one dense group".into()));
        }
        let heads = (0..n_heads)
            .map(|t| AttentionHeadParams::init(store, &format!("{prefix}.head{t}"), d, rng))
            .collect();
        let mut dense_groups = Vec::with_capacity(n_heads);
        for t in 0..n_heads {
            let groups = group_sizes
                .iter()
                .enumerate()
                .map(|(g, &l)| {
                    DenseLayerParams::init(store, &format!("{prefix}.dense{t}.group{g}"), d, l, rng)
                })
                .collect::<Result<Vec<_>>>()?;
            dense_groups.push(groups);
        }
        let w_comb = store.add_uniform(format!("{prefix}.w_comb"), d * n_heads, d, d * n_heads, rng);
        let b_comb = store.add_zeros(format!("{prefix}.b_comb"), 1, d);
        Ok(BlockParams {
            d,
            heads,
            dense_groups,
            w_comb,
            b_comb,
        })
    }

    pub fn n_heads(&self) -> usize {
        self.heads.len()
    }
}

/// `relu(A · h · Wᵀ + b)`.
pub fn gcn_layer(tape: &mut Tape, h: Var, a: Var, w: Var, b: Var) -> Result<Var> {
    let (n, din) = tape.shape(h);
    let (dout, w_in) = tape.shape(w);
    if w_in != din {
        return Err(Error::Shape {
            op: "gcn_layer weight",
            left: (n, din),
            right: (dout, w_in),
        });
    }
    if tape.shape(a) != (n, n) {
        return Err(Error::Shape {
            op: "gcn_layer adjacency",
            left: (n, din),
            right: tape.shape(a),
        });
    }
    let wt = tape.transpose(w);
    let hw = tape.matmul(h, wt)?;
    let ahw = tape.matmul(a, hw)?;
    let pre = tape.add_row(ahw, b)?;
    Ok(tape.relu(pre))
}

/// `softmax((h·W_Q)(h·W_K)ᵀ / √d)`, one `n × n` row-stochastic matrix.
pub fn attention_adjacency(
    tape: &mut Tape,
    store: &ParamStore,
    h: Var,
    head: &AttentionHeadParams,
) -> Result<Var> {
    let (_, d) = tape.shape(h);
    let wq = tape.param(store, head.w_q);
    let wk = tape.param(store, head.w_k);
    if tape.shape(wq) != (d, d) || tape.shape(wk) != (d, d) {
        return Err(Error::Shape {
            op: "attention_adjacency",
            left: tape.shape(h),
            right: tape.shape(wq),
        });
    }
    let q = tape.matmul(h, wq)?;
    let k = tape.matmul(h, wk)?;
    let kt = tape.transpose(k);
    let scores = tape.matmul(q, kt)?;
    let scaled = tape.scale(scores, 1.0 / (d as f64).sqrt());
    tape.softmax_rows(scaled)
}

/// Densely connected sub-layers over adjacency `a`; output width equals input width.
pub fn dense_layer(
    tape: &mut Tape,
    store: &ParamStore,
    h0: Var,
    a: Var,
    params: &DenseLayerParams,
) -> Result<Var> {
    let (_, d) = tape.shape(h0);
    if d != params.d {
        return Err(Error::Shape {
            op: "dense_layer",
            left: tape.shape(h0),
            right: (params.d, params.d),
        });
    }
    let mut outputs: Vec<Var> = Vec::with_capacity(params.sublayers.len());
    for sub in &params.sublayers {
        let mut parts = Vec::with_capacity(outputs.len() + 1);
        parts.push(h0);
        parts.extend_from_slice(&outputs);
        let g = if parts.len() == 1 {
            h0
        } else {
            tape.concat_cols(&parts)?
        };
        let w = tape.param(store, sub.w);
        let b = tape.param(store, sub.b);
        outputs.push(gcn_layer(tape, g, a, w, b)?);
    }
    if outputs.len() == 1 {
        Ok(outputs[0])
    } else {
        tape.concat_cols(&outputs)
    }
}

/// `[h¹; …; hᴺ] · W_comb + b_comb`, no activation.
pub fn linear_combination(
    tape: &mut Tape,
    store: &ParamStore,
    branches: &[Var],
    w_comb: ParamId,
    b_comb: ParamId,
) -> Result<Var> {
    let (wide, d) = store.value(w_comb).shape();
    let expected = if d == 0 { 0 } else { wide / d };
    if branches.len() != expected || branches.is_empty() {
        return Err(Error::contract(format!(
            "linear_combination expects {expected} branch outputs, got {}",
            branches.len()
        )));
    }
    let cat = tape.concat_cols(branches)?;
    let w = tape.param(store, w_comb);
    let b = tape.param(store, b_comb);
    let out = tape.matmul(cat, w)?;
    tape.add_row(out, b)
}

pub struct BlockOutput {
    pub h: Var,
    /// One attention matrix per head when attention was used, else empty.
    pub attention: Vec<Var>,
}

pub fn block_forward(
    tape: &mut Tape,
    store: &ParamStore,
    h: Var,
    hard_adj: Var,
    params: &BlockParams,
    use_attention: bool,
) -> Result<BlockOutput> {
    let mut branches = Vec::with_capacity(params.n_heads());
    let mut attention = Vec::new();
    for (head, groups) in params.heads.iter().zip(&params.dense_groups) {
        let a = if use_attention {
            let a = attention_adjacency(tape, store, h, head)?;
            attention.push(a);
            a
        } else {
            hard_adj
        };
        let mut x = h;
        for group in groups {
            x = dense_layer(tape, store, x, a, group)?;
        }
        branches.push(x);
    }
    let h = linear_combination(tape, store, &branches, params.w_comb, params.b_comb)?;
    Ok(BlockOutput { h, attention })
}

/// Inverted dropout applied to every block input during training.
pub struct Dropout<'a> {
    pub p: f64,
    pub rng: &'a mut Rng,
}

pub struct Encoded {
    pub h: Var,
    /// `(block index, head index, Ã)` for every attention-guided layer, 0-based.
    pub attention: Vec<(usize, usize, Var)>,
}

/// Runs `M` blocks. Attention replaces the hard adjacency from the second
/// block on, unless `attention_enabled` is false.
pub fn encode(
    tape: &mut Tape,
    store: &ParamStore,
    x: Var,
    hard_adj: Var,
    blocks: &[BlockParams],
    attention_enabled: bool,
    mut dropout: Option<Dropout<'_>>,
) -> Result<Encoded> {
    if blocks.is_empty() {
        return Err(Error::contract("encode needs at least one block"));
    }
    let mut h = x;
    let mut attention = Vec::new();
    for (m, block) in blocks.iter().enumerate() {
        if let Some(dr) = dropout.as_mut().filter(|d| d.p > 0.0) {
            let (r, c) = tape.shape(h);
            let keep = 1.0 - dr.p;
            let mask: Vec<f64> = (0..r * c)
                .map(|_| if dr.rng.bernoulli(keep) { 1.0 / keep } else { 0.0 })
                .collect();
            h = tape.mul_const(h, Matrix::from_vec(r, c, mask)?)?;
        }
        let out = block_forward(tape, store, h, hard_adj, block, attention_enabled && m >= 1)?;
        attention.extend(out.attention.into_iter().enumerate().map(|(t, a)| (m, t, a)));
        h = out.h;
    }
    Ok(Encoded { h, attention })
}
