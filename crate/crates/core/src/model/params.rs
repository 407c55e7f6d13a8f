//! Parameter naming and initialization.

use super::config::ModelConfig;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Normal(f64),
    Zeros,
    Ones,
}

#[derive(Clone, Debug)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

fn linear(out: &mut Vec<ParamSpec>, name: &str, rows: usize, cols: usize) {
    out.push(ParamSpec {
        name: format!("{name}.weight"),
        shape: vec![rows, cols],
        init: Init::Normal(1.0 / (cols as f64).sqrt()),
    });
    out.push(ParamSpec {
        name: format!("{name}.bias"),
        shape: vec![rows],
        init: Init::Zeros,
    });
}

fn layer_norm(out: &mut Vec<ParamSpec>, name: &str, dim: usize) {
    out.push(ParamSpec {
        name: format!("{name}.gamma"),
        shape: vec![dim],
        init: Init::Ones,
    });
    out.push(ParamSpec {
        name: format!("{name}.beta"),
        shape: vec![dim],
        init: Init::Zeros,
    });
}

fn block(out: &mut Vec<ParamSpec>, prefix: &str, dim: usize, mlp_ratio: usize) {
    layer_norm(out, &format!("{prefix}.ln1"), dim);
    for p in ["q", "k", "v", "o"] {
        linear(out, &format!("{prefix}.attn.{p}"), dim, dim);
    }
    layer_norm(out, &format!("{prefix}.ln2"), dim);
    linear(out, &format!("{prefix}.mlp.fc1"), dim * mlp_ratio, dim);
    linear(out, &format!("{prefix}.mlp.fc2"), dim, dim * mlp_ratio);
}

pub fn encoder_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let e = cfg.encoder;
    let mut out = Vec::new();
    linear(&mut out, "enc.patch", e.embed_dim, e.patch_dim());
    out.push(ParamSpec {
        name: "enc.pos".into(),
        shape: vec![e.num_patches(), e.embed_dim],
        init: Init::Normal(0.02),
    });
    for i in 0..e.num_blocks {
        block(&mut out, &format!("enc.blocks.{i}"), e.embed_dim, e.mlp_ratio);
    }
    out
}

pub fn decoder_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let dim = cfg.encoder.embed_dim;
    let d = cfg.decoder;
    let mut out = Vec::new();
    for name in ["dec.ref_embed", "dec.src_embed"] {
        out.push(ParamSpec {
            name: name.into(),
            shape: vec![1, dim],
            init: Init::Normal(0.02),
        });
    }
    for i in 0..d.num_blocks {
        block(&mut out, &format!("dec.blocks.{i}"), dim, d.mlp_ratio);
    }
    layer_norm(&mut out, "dec.norm", dim);
    linear(&mut out, "dec.head.point", 3, dim);
    linear(&mut out, "dec.head.depth", 1, dim);
    linear(&mut out, "dec.head.conf", 2, dim);
    out
}

/// Encoder weights that can carry an adapter: every attention projection
/// and both MLP linears of every block.
pub fn adaptable_weights(cfg: &ModelConfig) -> Vec<String> {
    let mut out = Vec::new();
    for i in 0..cfg.encoder.num_blocks {
        for p in ["attn.q", "attn.k", "attn.v", "attn.o", "mlp.fc1", "mlp.fc2"] {
            out.push(format!("enc.blocks.{i}.{p}.weight"));
        }
    }
    out
}

pub fn down_name(weight: &str) -> String {
    format!("{weight}.lora_down")
}

pub fn up_name(weight: &str) -> String {
    format!("{weight}.lora_up")
}
