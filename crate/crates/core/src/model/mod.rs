//! Miniature reconstruction network: a ViT-style encoder applied per view
//! and a decoder attending jointly over all views, with pointmap, depth
//! and confidence heads at patch resolution.

mod config;
mod net;
mod params;
mod state;

pub use config::{DecoderConfig, EncoderConfig, ModelConfig};
pub use net::{decode_on, encode_on, encode_trace_on, patchify, HeadVars};
pub use params::{adaptable_weights, decoder_specs, down_name, encoder_specs, up_name};
pub use state::{params_checksum, Bound, ModelState};

use renormlab_tensor::{Tape, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Head outputs as values.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadOutputs {
    /// `[views × patches × 3]`
    pub pointmap: Tensor,
    /// `[views × patches]`
    pub self_depth: Tensor,
    /// `[views × patches × 2]`
    pub confidence_raw: Tensor,
}

fn split_views(images: &Tensor) -> Result<Vec<Tensor>> {
    let s = images.shape();
    if s.len() != 4 || s[0] == 0 {
        return Err(LabError::Shape(format!("images {s:?}, expected [views, C, H, W]")));
    }
    let per = s[1] * s[2] * s[3];
    images
        .data()
        .chunks(per)
        .map(|c| Ok(Tensor::new(&s[1..], c.to_vec())?))
        .collect()
}

fn stack(parts: &[&Tensor]) -> Result<Tensor> {
    let mut shape = vec![parts.len()];
    shape.extend_from_slice(parts[0].shape());
    let data = parts.iter().flat_map(|t| t.data().iter().copied()).collect();
    Ok(Tensor::new(&shape, data)?)
}

/// Encoder tokens `[views × patches × dim]` for `images[views × 3 × H × W]`.
pub fn encode(images: &Tensor, state: &ModelState) -> Result<Tensor> {
    let mut tape = Tape::new();
    let b = state.bind(&mut tape, false)?;
    let mut toks = Vec::new();
    for img in split_views(images)? {
        toks.push(encode_on(&mut tape, &b, &state.config, &img)?);
    }
    let vals: Vec<&Tensor> = toks.iter().map(|&t| tape.value(t)).collect();
    stack(&vals)
}

pub fn decode(tokens: &Tensor, state: &ModelState) -> Result<HeadOutputs> {
    let s = tokens.shape();
    if s.len() != 3 || s[0] == 0 {
        return Err(LabError::Contract(format!("tokens {s:?}, expected [views ≥ 1, patches, dim]")));
    }
    let mut tape = Tape::new();
    let b = state.bind(&mut tape, false)?;
    let per = s[1] * s[2];
    let vars: Vec<_> = tokens
        .data()
        .chunks(per)
        .map(|c| Ok(tape.constant(Tensor::new(&s[1..], c.to_vec())?)))
        .collect::<Result<_>>()?;
    let h = decode_on(&mut tape, &b, &state.config, &vars)?;
    heads_to_values(&tape, &h)
}

pub fn heads_to_values(tape: &Tape, h: &HeadVars) -> Result<HeadOutputs> {
    let get = |vs: &[renormlab_tensor::Var]| -> Result<Tensor> {
        let vals: Vec<&Tensor> = vs.iter().map(|&v| tape.value(v)).collect();
        stack(&vals)
    };
    Ok(HeadOutputs {
        pointmap: get(&h.point)?,
        self_depth: get(&h.depth)?,
        confidence_raw: get(&h.conf)?,
    })
}

/// Encoder then decoder in one pass.
pub fn forward(images: &Tensor, state: &ModelState) -> Result<(Tensor, HeadOutputs)> {
    let mut tape = Tape::new();
    let b = state.bind(&mut tape, false)?;
    let mut toks = Vec::new();
    for img in split_views(images)? {
        toks.push(encode_on(&mut tape, &b, &state.config, &img)?);
    }
    let h = decode_on(&mut tape, &b, &state.config, &toks)?;
    let vals: Vec<&Tensor> = toks.iter().map(|&t| tape.value(t)).collect();
    Ok((stack(&vals)?, heads_to_values(&tape, &h)?))
}

/// Stacks per-view `[3 × H × W]` images into `[views × 3 × H × W]`.
pub fn stack_images(views: &[&Tensor]) -> Result<Tensor> {
    if views.is_empty() {
        return Err(LabError::Contract("no views".into()));
    }
    stack(views)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenNormStats {
    pub per_patch_norms: Vec<f64>,
    pub mean_norm: f64,
    pub max_norm: f64,
}

/// Euclidean norm of every token (last axis) with their mean and max.
pub fn token_norm_stats(tokens: &Tensor) -> TokenNormStats {
    let dim = *tokens.shape().last().unwrap_or(&1);
    let norms: Vec<f64> = tokens
        .data()
        .chunks(dim.max(1))
        .map(|t| t.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let mean = if norms.is_empty() { 0.0 } else { norms.iter().sum::<f64>() / norms.len() as f64 };
    let max = norms.iter().copied().fold(0.0, f64::max);
    TokenNormStats {
        per_patch_norms: norms,
        mean_norm: mean,
        max_norm: max,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_norm_cases() {
        assert_eq!(token_norm_stats(&Tensor::zeros(&[2, 4, 3])).mean_norm, 0.0);
        let mut t = Tensor::zeros(&[1, 3, 4]);
        for p in 0..3 {
            t.data_mut()[p * 4 + p] = 1.0;
        }
        let s = token_norm_stats(&t);
        assert_eq!((s.mean_norm, s.max_norm), (1.0, 1.0));
    }
}
