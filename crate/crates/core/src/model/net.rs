//! The forward pass on a tape.

use renormlab_tensor::{Tape, Tensor, Var};

use super::config::ModelConfig;
use super::state::Bound;
use crate::error::{LabError, Result};

/// Pixel normalization applied before patch embedding.
const PIXEL_MEAN: f64 = 0.5;
const PIXEL_STD: f64 = 0.25;

/// `[3×H×W]` image → `[patches × C·p·p]`, patches in row-major grid order
/// and features ordered `(channel, dy, dx)`.
pub fn patchify(image: &Tensor, cfg: &ModelConfig) -> Result<Tensor> {
    let e = cfg.encoder;
    let (c, s, p) = (e.channels, e.image_size, e.patch_size);
    if image.shape() != [c, s, s] {
        return Err(LabError::Shape(format!(
            "image {:?}, expected [{c}, {s}, {s}]",
            image.shape()
        )));
    }
    let g = e.grid();
    let px = image.data();
    let mut out = Vec::with_capacity(e.num_patches() * e.patch_dim());
    for gy in 0..g {
        for gx in 0..g {
            for ch in 0..c {
                for dy in 0..p {
                    for dx in 0..p {
                        let v = px[ch * s * s + (gy * p + dy) * s + gx * p + dx];
                        out.push((v - PIXEL_MEAN) / PIXEL_STD);
                    }
                }
            }
        }
    }
    Ok(Tensor::new(&[e.num_patches(), e.patch_dim()], out)?)
}

/// `x·Wᵀ + b` for `x[n×in]`, `W[out×in]`, `b[out]`.
fn linear(tape: &mut Tape, x: Var, b: &Bound, prefix: &str) -> Result<Var> {
    let w = b.get(&format!("{prefix}.weight"))?;
    let bias = b.get(&format!("{prefix}.bias"))?;
    let wt = tape.transpose(w)?;
    let y = tape.matmul(x, wt)?;
    let n = tape.shape(x)[0];
    let out = tape.shape(w)[0];
    let ones = tape.constant(Tensor::ones(&[n, 1]));
    let b2 = tape.reshape(bias, &[1, out])?;
    let bb = tape.matmul(ones, b2)?;
    Ok(tape.add(y, bb)?)
}

fn layer_norm(tape: &mut Tape, x: Var, b: &Bound, prefix: &str) -> Result<Var> {
    let g = b.get(&format!("{prefix}.gamma"))?;
    let beta = b.get(&format!("{prefix}.beta"))?;
    Ok(tape.layer_norm(x, g, beta, ModelConfig::LN_EPS)?)
}

fn attention(tape: &mut Tape, x: Var, b: &Bound, prefix: &str, heads: usize) -> Result<Var> {
    let q = linear(tape, x, b, &format!("{prefix}.q"))?;
    let k = linear(tape, x, b, &format!("{prefix}.k"))?;
    let v = linear(tape, x, b, &format!("{prefix}.v"))?;
    let dim = tape.shape(x)[1];
    let dh = dim / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice(q, 1, h * dh, dh)?;
        let kh = tape.slice(k, 1, h * dh, dh)?;
        let vh = tape.slice(v, 1, h * dh, dh)?;
        let kt = tape.transpose(kh)?;
        let s = tape.matmul(qh, kt)?;
        let s = tape.scale(s, scale)?;
        let a = tape.softmax(s)?;
        outs.push(tape.matmul(a, vh)?);
    }
    let cat = tape.concat(&outs, 1)?;
    linear(tape, cat, b, &format!("{prefix}.o"))
}

/// Pre-norm transformer block with a GELU MLP.
fn block(tape: &mut Tape, x: Var, b: &Bound, prefix: &str, heads: usize) -> Result<Var> {
    let n1 = layer_norm(tape, x, b, &format!("{prefix}.ln1"))?;
    let a = attention(tape, n1, b, &format!("{prefix}.attn"), heads)?;
    let h = tape.add(x, a)?;
    let n2 = layer_norm(tape, h, b, &format!("{prefix}.ln2"))?;
    let f1 = linear(tape, n2, b, &format!("{prefix}.mlp.fc1"))?;
    let act = tape.gelu(f1)?;
    let f2 = linear(tape, act, b, &format!("{prefix}.mlp.fc2"))?;
    Ok(tape.add(h, f2)?)
}

/// Token stream after each encoder block for one `[3×H×W]` image; the last
/// entry is the encoder output `[patches × dim]`.
pub fn encode_trace_on(tape: &mut Tape, b: &Bound, cfg: &ModelConfig, image: &Tensor) -> Result<Vec<Var>> {
    let patches = tape.constant(patchify(image, cfg)?);
    let emb = linear(tape, patches, b, "enc.patch")?;
    let pos = b.get("enc.pos")?;
    let mut x = tape.add(emb, pos)?;
    let mut trace = Vec::with_capacity(cfg.encoder.num_blocks);
    for i in 0..cfg.encoder.num_blocks {
        x = block(tape, x, b, &format!("enc.blocks.{i}"), cfg.encoder.num_heads)?;
        trace.push(x);
    }
    Ok(trace)
}

pub fn encode_on(tape: &mut Tape, b: &Bound, cfg: &ModelConfig, image: &Tensor) -> Result<Var> {
    Ok(*encode_trace_on(tape, b, cfg, image)?.last().expect("at least one block"))
}

/// Per-view head outputs on the tape.
#[derive(Clone, Debug)]
pub struct HeadVars {
    /// `[patches × 3]` per view, reference-frame coordinates.
    pub point: Vec<Var>,
    /// `[patches]` per view.
    pub depth: Vec<Var>,
    /// `[patches × 2]` per view; channel 0 pairs with the pointmap head,
    /// channel 1 with the depth head.
    pub conf: Vec<Var>,
}

impl HeadVars {
    pub fn conf_channel(&self, tape: &mut Tape, view: usize, channel: usize) -> Result<Var> {
        let c = tape.slice(self.conf[view], 1, channel, 1)?;
        let n = tape.shape(c)[0];
        Ok(tape.reshape(c, &[n])?)
    }
}

/// Joint attention over all views' tokens; view 0 is the reference.
pub fn decode_on(tape: &mut Tape, b: &Bound, cfg: &ModelConfig, tokens: &[Var]) -> Result<HeadVars> {
    if tokens.is_empty() {
        return Err(LabError::Contract("decode needs at least one view".into()));
    }
    let p = tape.shape(tokens[0])[0];
    let ones = tape.constant(Tensor::ones(&[p, 1]));
    let ref_e = b.get("dec.ref_embed")?;
    let src_e = b.get("dec.src_embed")?;
    let ref_rows = tape.matmul(ones, ref_e)?;
    let src_rows = tape.matmul(ones, src_e)?;
    let mut parts = Vec::with_capacity(tokens.len());
    for (i, &t) in tokens.iter().enumerate() {
        if tape.shape(t)[0] != p {
            return Err(LabError::Shape("views disagree on patch count".into()));
        }
        parts.push(tape.add(t, if i == 0 { ref_rows } else { src_rows })?);
    }
    let mut x = tape.concat(&parts, 0)?;
    for i in 0..cfg.decoder.num_blocks {
        x = block(tape, x, b, &format!("dec.blocks.{i}"), cfg.decoder.num_heads)?;
    }
    let x = layer_norm(tape, x, b, "dec.norm")?;
    let point = linear(tape, x, b, "dec.head.point")?;
    let depth = linear(tape, x, b, "dec.head.depth")?;
    let conf = linear(tape, x, b, "dec.head.conf")?;
    let mut out = HeadVars {
        point: Vec::new(),
        depth: Vec::new(),
        conf: Vec::new(),
    };
    for v in 0..tokens.len() {
        out.point.push(tape.slice(point, 0, v * p, p)?);
        let d = tape.slice(depth, 0, v * p, p)?;
        out.depth.push(tape.reshape(d, &[p])?);
        out.conf.push(tape.slice(conf, 0, v * p, p)?);
    }
    Ok(out)
}
