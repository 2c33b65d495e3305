use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamSet, Tape, Tensor, Var};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct LayerIds {
    pub attn_norm: (ParamId, ParamId),
    pub wq: (ParamId, ParamId),
    pub wk: (ParamId, ParamId),
    pub wv: (ParamId, ParamId),
    pub wo: (ParamId, ParamId),
    pub ff_norm: (ParamId, ParamId),
    pub w1: (ParamId, ParamId),
    pub w2: (ParamId, ParamId),
}

/// Positions of every model parameter in its [`ParamSet`].
#[derive(Debug, Clone)]
pub struct ModelIds {
    pub input: (ParamId, ParamId),
    pub joint_table: ParamId,
    pub identity_table: ParamId,
    pub grid_table: ParamId,
    pub layers: Vec<LayerIds>,
    pub head_norm: (ParamId, ParamId),
    pub head: (ParamId, ParamId),
}

/// Every parameter name with its shape, in creation order.
fn layout(c: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (d, s) = (c.d_model(), c.seq_len());
    let mut out = vec![
        ("input.weight".to_string(), vec![s, c.d_token]),
        ("input.bias".to_string(), vec![c.d_token]),
        ("embed.joint".to_string(), vec![c.joints * 3, c.d_token]),
        ("embed.identity".to_string(), vec![c.n_slots, c.d_token]),
        ("embed.grid".to_string(), vec![c.grid * c.grid, c.e_grid]),
    ];
    for l in 0..c.layers {
        let p = |n: &str| format!("layers.{l}.{n}");
        out.extend([
            (p("attn_norm.gain"), vec![d]),
            (p("attn_norm.bias"), vec![d]),
            (p("attn.q.weight"), vec![d, d]),
            (p("attn.q.bias"), vec![d]),
            (p("attn.k.weight"), vec![d, d]),
            (p("attn.k.bias"), vec![d]),
            (p("attn.v.weight"), vec![d, d]),
            (p("attn.v.bias"), vec![d]),
            (p("attn.out.weight"), vec![d, d]),
            (p("attn.out.bias"), vec![d]),
            (p("ff_norm.gain"), vec![d]),
            (p("ff_norm.bias"), vec![d]),
            (p("ff.in.weight"), vec![d, c.d_ff]),
            (p("ff.in.bias"), vec![c.d_ff]),
            (p("ff.out.weight"), vec![c.d_ff, d]),
            (p("ff.out.bias"), vec![d]),
        ]);
    }
    out.extend([
        ("head.norm.gain".to_string(), vec![d]),
        ("head.norm.bias".to_string(), vec![d]),
        ("head.weight".to_string(), vec![d, s]),
        ("head.bias".to_string(), vec![s]),
    ]);
    out
}

pub(super) fn init_params<R: Rng + ?Sized>(c: &ModelConfig, rng: &mut R) -> ParamSet {
    let mut params = ParamSet::new();
    for (name, shape) in layout(c) {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = if name == "head.weight" || name == "head.bias" {
            vec![0.0; n]
        } else if name.ends_with(".gain") {
            vec![1.0; n]
        } else if name.ends_with(".bias") {
            vec![0.0; n]
        } else if name.starts_with("embed.") {
            (0..n)
                .map(|_| 0.02 * Distribution::<f64>::sample(&StandardNormal, rng))
                .collect()
        } else {
            let bound = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
            (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
        };
        params.insert(
            name,
            Tensor::new(&shape, data).expect("layout shapes are non-empty"),
        );
    }
    params
}

impl ModelIds {
    pub fn resolve(params: &ParamSet, c: &ModelConfig) -> Result<Self> {
        let expected = layout(c);
        for (name, shape) in &expected {
            let t = params
                .by_name(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
        }
        if params.len() != expected.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                params.len()
            )));
        }
        let id = |n: &str| params.position(n).expect("checked above");
        let pair = |n: &str, a: &str, b: &str| (id(&format!("{n}.{a}")), id(&format!("{n}.{b}")));
        let wb = |n: &str| pair(n, "weight", "bias");
        let gb = |n: &str| pair(n, "gain", "bias");
        Ok(Self {
            input: wb("input"),
            joint_table: id("embed.joint"),
            identity_table: id("embed.identity"),
            grid_table: id("embed.grid"),
            layers: (0..c.layers)
                .map(|l| LayerIds {
                    attn_norm: gb(&format!("layers.{l}.attn_norm")),
                    wq: wb(&format!("layers.{l}.attn.q")),
                    wk: wb(&format!("layers.{l}.attn.k")),
                    wv: wb(&format!("layers.{l}.attn.v")),
                    wo: wb(&format!("layers.{l}.attn.out")),
                    ff_norm: gb(&format!("layers.{l}.ff_norm")),
                    w1: wb(&format!("layers.{l}.ff.in")),
                    w2: wb(&format!("layers.{l}.ff.out")),
                })
                .collect(),
            head_norm: gb("head.norm"),
            head: wb("head"),
        })
    }
}

fn linear(tape: &mut Tape, params: &ParamSet, x: Var, (w, b): (ParamId, ParamId)) -> Result<Var> {
    let w = tape.param(params, w);
    let b = tape.param(params, b);
    let y = tape.matmul(x, w)?;
    tape.add_bias(y, b)
}

fn norm(tape: &mut Tape, params: &ParamSet, x: Var, (g, b): (ParamId, ParamId)) -> Result<Var> {
    let g = tape.param(params, g);
    let b = tape.param(params, b);
    tape.layer_norm(x, g, b, LN_EPS)
}

/// Projects tokens `[Q × (t+T)]` to `d_token`, adds the joint-axis and
/// slot embeddings, and appends each slot's grid-cell embedding.
pub fn embed_tokens(
    tape: &mut Tape,
    params: &ParamSet,
    ids: &ModelIds,
    c: &ModelConfig,
    tokens: Var,
    slots: usize,
    cells: &[usize],
) -> Result<Var> {
    let q = c.queries(slots);
    if tape.shape(tokens) != [q, c.seq_len()] {
        return Err(Error::Shape {
            op: "embed_tokens",
            lhs: tape.shape(tokens).to_vec(),
            rhs: vec![q, c.seq_len()],
        });
    }
    if cells.len() != slots {
        return Err(Error::Length {
            op: "embed_tokens cells",
            expected: slots,
            actual: cells.len(),
        });
    }
    let per_slot = c.joints * 3;
    let joint_rows: Vec<usize> = (0..q).map(|i| i % per_slot).collect();
    let slot_rows: Vec<usize> = (0..q).map(|i| i / per_slot).collect();
    let cell_rows: Vec<usize> = slot_rows.iter().map(|&s| cells[s]).collect();

    let x = linear(tape, params, tokens, ids.input)?;
    let joint_table = tape.param(params, ids.joint_table);
    let joint = tape.gather_rows(joint_table, &joint_rows)?;
    let identity_table = tape.param(params, ids.identity_table);
    let identity = tape.gather_rows(identity_table, &slot_rows)?;
    let grid_table = tape.param(params, ids.grid_table);
    let grid = tape.gather_rows(grid_table, &cell_rows)?;
    let x = tape.add(x, joint)?;
    let x = tape.add(x, identity)?;
    tape.concat_last(&[x, grid])
}

pub struct EncoderOutput {
    /// Per layer, the head's coefficient residual `[Q × (t+T)]`.
    pub residuals: Vec<Var>,
    /// Per layer, attention probabilities `[H × Q × Q]`.
    pub attention: Vec<Var>,
}

/// Pre-norm encoder stack. `key_mask[q]` is false for queries of padded
/// slots, which are then ignored as keys.
pub fn encoder_forward(
    tape: &mut Tape,
    params: &ParamSet,
    ids: &ModelIds,
    c: &ModelConfig,
    embedded: Var,
    key_mask: &[bool],
    mut dropout_rng: Option<&mut dyn RngCore>,
) -> Result<EncoderOutput> {
    if !key_mask.iter().any(|&m| m) {
        return Err(Error::NoValidKeys);
    }
    let q = key_mask.len();
    let (d, h) = (c.d_model(), c.heads);
    let dh = d / h;
    let mut x = embedded;
    let mut residuals = Vec::with_capacity(c.layers);
    let mut attention = Vec::with_capacity(c.layers);
    let mut drop = |tape: &mut Tape, v: Var| match dropout_rng.as_deref_mut() {
        Some(rng) if c.dropout > 0.0 => tape.dropout(v, c.dropout, rng),
        _ => v,
    };
    for layer in &ids.layers {
        let a = norm(tape, params, x, layer.attn_norm)?;
        let qs = linear(tape, params, a, layer.wq)?;
        let ks = linear(tape, params, a, layer.wk)?;
        let vs = linear(tape, params, a, layer.wv)?;
        let qs = tape.reshape(qs, &[q, h, dh])?;
        let qs = tape.permute(qs, &[1, 0, 2])?;
        let ks = tape.reshape(ks, &[q, h, dh])?;
        let kt = tape.permute(ks, &[1, 2, 0])?;
        let vs = tape.reshape(vs, &[q, h, dh])?;
        let vs = tape.permute(vs, &[1, 0, 2])?;
        let scores = tape.matmul(qs, kt)?;
        let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt());
        let probs = tape.masked_softmax(scores, key_mask)?;
        attention.push(probs);
        let mixed = tape.matmul(probs, vs)?;
        let mixed = tape.permute(mixed, &[1, 0, 2])?;
        let mixed = tape.reshape(mixed, &[q, d])?;
        let out = linear(tape, params, mixed, layer.wo)?;
        let out = drop(tape, out);
        x = tape.add(x, out)?;

        let f = norm(tape, params, x, layer.ff_norm)?;
        let f = linear(tape, params, f, layer.w1)?;
        let f = tape.gelu(f);
        let f = linear(tape, params, f, layer.w2)?;
        let f = drop(tape, f);
        x = tape.add(x, f)?;

        let y = norm(tape, params, x, ids.head_norm)?;
        residuals.push(linear(tape, params, y, ids.head)?);
    }
    Ok(EncoderOutput {
        residuals,
        attention,
    })
}
