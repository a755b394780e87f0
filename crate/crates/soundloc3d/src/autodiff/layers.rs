use super::params::ParameterStore;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use rand::Rng;

/// Bound parameter handles for one post-norm transformer encoder layer.
pub struct EncoderLayerVars {
    pub heads: usize,
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub ln1_g: Var,
    pub ln1_b: Var,
    pub ln2_g: Var,
    pub ln2_b: Var,
}

/// Register the parameters of one encoder layer under `prefix`.
pub fn init_encoder_layer(
    store: &mut ParameterStore,
    prefix: &str,
    d: usize,
    ffn: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    for name in ["wq", "wk", "wv", "wo"] {
        store.init_xavier(&format!("{prefix}.{name}"), &[d, d], d, d, rng)?;
    }
    for name in ["bq", "bk", "bv", "bo"] {
        store.init_const(&format!("{prefix}.{name}"), &[d], 0.0)?;
    }
    store.init_xavier(&format!("{prefix}.w1"), &[ffn, d], d, ffn, rng)?;
    store.init_const(&format!("{prefix}.b1"), &[ffn], 0.0)?;
    store.init_xavier(&format!("{prefix}.w2"), &[d, ffn], ffn, d, rng)?;
    store.init_const(&format!("{prefix}.b2"), &[d], 0.0)?;
    store.init_const(&format!("{prefix}.ln1.g"), &[d], 1.0)?;
    store.init_const(&format!("{prefix}.ln1.b"), &[d], 0.0)?;
    store.init_const(&format!("{prefix}.ln2.g"), &[d], 1.0)?;
    store.init_const(&format!("{prefix}.ln2.b"), &[d], 0.0)?;
    Ok(())
}

/// Bind the encoder-layer parameters registered under `prefix` onto a tape.
pub fn bind_encoder_layer(
    tape: &mut Tape,
    store: &ParameterStore,
    prefix: &str,
    heads: usize,
) -> Result<EncoderLayerVars> {
    Ok(EncoderLayerVars {
        heads,
        wq: tape.param(store, &format!("{prefix}.wq"))?,
        bq: tape.param(store, &format!("{prefix}.bq"))?,
        wk: tape.param(store, &format!("{prefix}.wk"))?,
        bk: tape.param(store, &format!("{prefix}.bk"))?,
        wv: tape.param(store, &format!("{prefix}.wv"))?,
        bv: tape.param(store, &format!("{prefix}.bv"))?,
        wo: tape.param(store, &format!("{prefix}.wo"))?,
        bo: tape.param(store, &format!("{prefix}.bo"))?,
        w1: tape.param(store, &format!("{prefix}.w1"))?,
        b1: tape.param(store, &format!("{prefix}.b1"))?,
        w2: tape.param(store, &format!("{prefix}.w2"))?,
        b2: tape.param(store, &format!("{prefix}.b2"))?,
        ln1_g: tape.param(store, &format!("{prefix}.ln1.g"))?,
        ln1_b: tape.param(store, &format!("{prefix}.ln1.b"))?,
        ln2_g: tape.param(store, &format!("{prefix}.ln2.g"))?,
        ln2_b: tape.param(store, &format!("{prefix}.ln2.b"))?,
    })
}

/// Post-norm transformer encoder layer without positional encoding:
/// `y = LN(x + MHSA(x)); out = LN(y + FFN(y))`, FFN = linear→ReLU→linear,
/// attention softmax(QKᵀ/√d_head)·V per head.
pub fn transformer_encoder_layer(tape: &mut Tape, x: Var, p: &EncoderLayerVars) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    if shape.len() != 2 {
        return Err(Error::Shape(format!("encoder layer: expected n_tok×d input, got {shape:?}")));
    }
    let d = shape[1];
    if p.heads == 0 || d % p.heads != 0 {
        return Err(Error::Shape(format!("encoder layer: d={d} not divisible by heads={}", p.heads)));
    }
    let dh = d / p.heads;

    let q = tape.linear(x, p.wq, p.bq)?;
    let k = tape.linear(x, p.wk, p.bk)?;
    let v = tape.linear(x, p.wv, p.bv)?;

    let mut head_outs = Vec::with_capacity(p.heads);
    for h in 0..p.heads {
        let qh = tape.slice_cols(q, h * dh, dh)?;
        let kh = tape.slice_cols(k, h * dh, dh)?;
        let vh = tape.slice_cols(v, h * dh, dh)?;
        let scores = tape.matmul_nt(qh, kh)?;
        let scaled = tape.scale(scores, 1.0 / (dh as f64).sqrt());
        let attn = tape.softmax_rows(scaled)?;
        head_outs.push(tape.matmul(attn, vh)?);
    }
    let concat = tape.concat_cols(&head_outs)?;
    let mhsa = tape.linear(concat, p.wo, p.bo)?;

    let res1 = tape.add(x, mhsa)?;
    let y = tape.layernorm(res1, p.ln1_g, p.ln1_b, 1e-5)?;

    let f1 = tape.linear(y, p.w1, p.b1)?;
    let f1 = tape.relu(f1);
    let ffn = tape.linear(f1, p.w2, p.b2)?;

    let res2 = tape.add(y, ffn)?;
    tape.layernorm(res2, p.ln2_g, p.ln2_b, 1e-5)
}
