use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use renormlab::check::LabTapeFunction;
use renormlab::lora::{NormKind, RenormMode};
use renormlab::model::{
    decode, decode_on, down_name, encode, encode_on, forward, stack_images, up_name, DecoderConfig, EncoderConfig,
    ModelConfig, ModelState,
};
use renormlab::tensor::{grad_check, Tape, Tensor};
use renormlab::LabError;

fn tiny() -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            image_size: 8,
            channels: 3,
            patch_size: 4,
            embed_dim: 8,
            num_heads: 2,
            num_blocks: 1,
            mlp_ratio: 2,
        },
        decoder: DecoderConfig {
            num_heads: 2,
            num_blocks: 1,
            mlp_ratio: 2,
        },
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn images(rng: &mut ChaCha8Rng, cfg: &ModelConfig, views: usize) -> Tensor {
    let s = cfg.encoder.image_size;
    random(rng, &[views, 3, s, s], 0.0, 1.0)
}

fn view(images: &Tensor, v: usize) -> Tensor {
    let s = images.shape();
    let per = s[1] * s[2] * s[3];
    Tensor::new(&s[1..], images.data()[v * per..(v + 1) * per].to_vec()).unwrap()
}

fn view_slice(t: &Tensor, v: usize) -> Vec<f64> {
    let per: usize = t.shape()[1..].iter().product();
    t.data()[v * per..(v + 1) * per].to_vec()
}

/// Gives every adapter nonzero random factors so their gradients are generic.
fn randomize_factors(state: &mut ModelState, rng: &mut ChaCha8Rng) {
    let names: Vec<String> = state.adapters.keys().cloned().collect();
    for w in names {
        for n in [down_name(&w), up_name(&w)] {
            let shape = state.parameter(&n).unwrap().shape().to_vec();
            state.set_parameter(&n, random(rng, &shape, -0.3, 0.3)).unwrap();
        }
    }
}

#[test]
fn zero_adapters_pass_through_bitwise() {
    for cfg in [tiny(), ModelConfig::default()] {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let base = ModelState::init(cfg, &mut rng).unwrap();
        for mode in [RenormMode::Functional, RenormMode::Detached] {
            for kind in [NormKind::Frobenius, NormKind::Spectral] {
                let mut adapted = base.clone();
                adapted.attach_adapters(2, 4.0, mode, kind, &mut rng).unwrap();
                for img in [Tensor::zeros(&[2, 3, cfg.encoder.image_size, cfg.encoder.image_size]), images(&mut rng, &cfg, 2)] {
                    let (t0, h0) = forward(&img, &base).unwrap();
                    let (t1, h1) = forward(&img, &adapted).unwrap();
                    assert_eq!(t0, t1);
                    assert_eq!(h0, h1);
                }
            }
        }
    }
}

#[test]
fn forward_is_deterministic() {
    let cfg = ModelConfig::default();
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let st = ModelState::init(cfg, &mut rng).unwrap();
        let img = images(&mut rng, &cfg, 3);
        forward(&img, &st).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn encode_then_decode_matches_forward() {
    let cfg = tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let st = ModelState::init(cfg, &mut rng).unwrap();
    let img = images(&mut rng, &cfg, 2);
    let tokens = encode(&img, &st).unwrap();
    assert_eq!(tokens.shape(), [2, cfg.encoder.num_patches(), cfg.encoder.embed_dim]);
    let heads = decode(&tokens, &st).unwrap();
    let (t2, h2) = forward(&img, &st).unwrap();
    assert_eq!(tokens, t2);
    assert_eq!(heads, h2);
    let p = cfg.encoder.num_patches();
    assert_eq!(heads.pointmap.shape(), [2, p, 3]);
    assert_eq!(heads.self_depth.shape(), [2, p]);
    assert_eq!(heads.confidence_raw.shape(), [2, p, 2]);
}

#[test]
fn shape_and_view_count_errors() {
    let cfg = tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let st = ModelState::init(cfg, &mut rng).unwrap();
    assert!(matches!(encode(&Tensor::zeros(&[1, 3, 9, 9]), &st), Err(LabError::Shape(_))));
    let p = cfg.encoder.num_patches();
    assert!(matches!(
        decode(&Tensor::zeros(&[0, p, cfg.encoder.embed_dim]), &st),
        Err(LabError::Contract(_))
    ));
    let mut tape = Tape::new();
    let b = st.bind(&mut tape, false).unwrap();
    assert!(matches!(decode_on(&mut tape, &b, &st.config, &[]), Err(LabError::Contract(_))));
}

#[test]
fn single_view_heads_share_one_token_stream() {
    let cfg = tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let st = ModelState::init(cfg, &mut rng).unwrap();
    let img = images(&mut rng, &cfg, 1);
    let tokens = encode(&img, &st).unwrap();
    let h = decode(&tokens, &st).unwrap();
    let mut tape = Tape::new();
    let b = st.bind(&mut tape, false).unwrap();
    let t = tape.constant(Tensor::new(&tokens.shape()[1..], view_slice(&tokens, 0)).unwrap());
    let hv = decode_on(&mut tape, &b, &st.config, &[t]).unwrap();
    assert_eq!(tape.value(hv.point[0]).data(), h.pointmap.data());
    assert_eq!(tape.value(hv.depth[0]).data(), h.self_depth.data());
}

#[test]
fn permuting_source_views_permutes_outputs() {
    let cfg = tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let st = ModelState::init(cfg, &mut rng).unwrap();
    let img = images(&mut rng, &cfg, 4);
    let (_, h) = forward(&img, &st).unwrap();
    let order = [0usize, 3, 1, 2];
    let views: Vec<Tensor> = order.iter().map(|&v| view(&img, v)).collect();
    let refs: Vec<&Tensor> = views.iter().collect();
    let (_, hp) = forward(&stack_images(&refs).unwrap(), &st).unwrap();
    for (new, &old) in order.iter().enumerate() {
        for (a, b) in [(&hp.pointmap, &h.pointmap), (&hp.self_depth, &h.self_depth), (&hp.confidence_raw, &h.confidence_raw)] {
            let x = view_slice(a, new);
            let y = view_slice(b, old);
            let gap = x.iter().zip(&y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            assert!(gap < 1e-12, "view {old} -> {new}: {gap}");
        }
    }
    // The reference view output does not move.
    let gap = view_slice(&hp.pointmap, 0)
        .iter()
        .zip(view_slice(&h.pointmap, 0))
        .map(|(p, q)| (p - q).abs())
        .fold(0.0, f64::max);
    assert!(gap < 1e-12);
}

#[test]
fn duplicated_source_views_give_identical_outputs() {
    let cfg = tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let st = ModelState::init(cfg, &mut rng).unwrap();
    let img = images(&mut rng, &cfg, 2);
    let (r, s) = (view(&img, 0), view(&img, 1));
    let (_, h) = forward(&stack_images(&[&r, &s, &s, &s]).unwrap(), &st).unwrap();
    for t in [&h.pointmap, &h.self_depth, &h.confidence_raw] {
        assert_eq!(view_slice(t, 1), view_slice(t, 2));
        assert_eq!(view_slice(t, 1), view_slice(t, 3));
    }
}

fn sum_all(tape: &mut Tape, vars: &[renormlab::tensor::Var]) -> renormlab::Result<renormlab::tensor::Var> {
    let mut acc = tape.sum(vars[0])?;
    for &v in &vars[1..] {
        let s = tape.sum(v)?;
        acc = tape.add(acc, s)?;
    }
    Ok(acc)
}

#[test]
fn encoder_gradient_wrt_adapter_factors() {
    let cfg = tiny();
    let w = "enc.blocks.0.attn.q.weight".to_string();
    let w2 = "enc.blocks.0.mlp.fc1.weight".to_string();
    for kind in [NormKind::Frobenius, NormKind::Spectral] {
        let mut worst: f64 = 0.0;
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut st = ModelState::init(cfg, &mut rng).unwrap();
            st.attach_adapters(2, 4.0, RenormMode::Functional, kind, &mut rng).unwrap();
            randomize_factors(&mut st, &mut rng);
            let img = view(&images(&mut rng, &cfg, 1), 0);
            for name in [down_name(&w), up_name(&w), down_name(&w2), up_name(&w2)] {
                let x0 = st.parameter(&name).unwrap();
                let f = LabTapeFunction(|tape: &mut Tape, x| {
                    let b = st.bind_with(tape, false, &HashMap::from([(name.clone(), x)]))?;
                    let t = encode_on(tape, &b, &st.config, &img)?;
                    Ok(tape.sum(t)?)
                });
                worst = worst.max(grad_check(&f, &x0, 1e-5).unwrap());
            }
        }
        println!("{kind:?} adapter grad error {worst:e}");
        assert!(worst < 1e-4, "{kind:?}: {worst}");
    }
}

#[test]
fn encoder_and_decoder_block_gradients() {
    let cfg = tiny();
    let mut worst_enc: f64 = 0.0;
    let mut worst_dec: f64 = 0.0;
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let st = ModelState::init(cfg, &mut rng).unwrap();
        let img = view(&images(&mut rng, &cfg, 1), 0);
        for name in ["enc.blocks.0.mlp.fc1.weight", "enc.blocks.0.ln1.gamma", "enc.pos"] {
            let x0 = st.parameter(name).unwrap();
            let f = LabTapeFunction(|tape: &mut Tape, x| {
                let b = st.bind_with(tape, false, &HashMap::from([(name.to_string(), x)]))?;
                let t = encode_on(tape, &b, &st.config, &img)?;
                Ok(tape.sum(t)?)
            });
            worst_enc = worst_enc.max(grad_check(&f, &x0, 1e-5).unwrap());
        }
        // Decoder: gradient w.r.t. source-view tokens and a block weight.
        let toks = random(&mut rng, &[2, cfg.encoder.num_patches(), cfg.encoder.embed_dim], -1.0, 1.0);
        let ref_tok = Tensor::new(&toks.shape()[1..], view_slice(&toks, 0)).unwrap();
        let src_tok = Tensor::new(&toks.shape()[1..], view_slice(&toks, 1)).unwrap();
        let f = LabTapeFunction(|tape: &mut Tape, x| {
            let b = st.bind(tape, false)?;
            let r = tape.constant(ref_tok.clone());
            let h = decode_on(tape, &b, &st.config, &[r, x])?;
            let mut parts = h.point.clone();
            parts.extend(&h.depth);
            parts.extend(&h.conf);
            sum_all(tape, &parts)
        });
        worst_dec = worst_dec.max(grad_check(&f, &src_tok, 1e-5).unwrap());
        let name = "dec.blocks.0.attn.k.weight";
        let x0 = st.parameter(name).unwrap();
        let f = LabTapeFunction(|tape: &mut Tape, x| {
            let b = st.bind_with(tape, false, &HashMap::from([(name.to_string(), x)]))?;
            let r = tape.constant(ref_tok.clone());
            let s = tape.constant(src_tok.clone());
            let h = decode_on(tape, &b, &st.config, &[r, s])?;
            let mut parts = h.point.clone();
            parts.extend(&h.depth);
            parts.extend(&h.conf);
            sum_all(tape, &parts)
        });
        worst_dec = worst_dec.max(grad_check(&f, &x0, 1e-5).unwrap());
    }
    println!("encoder grad error {worst_enc:e}, decoder grad error {worst_dec:e}");
    assert!(worst_enc < 1e-4 && worst_dec < 1e-4);
}

#[test]
fn frozen_names_receive_no_gradient() {
    let cfg = tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut st = ModelState::init(cfg, &mut rng).unwrap();
    st.attach_adapters(2, 4.0, RenormMode::Functional, NormKind::Frobenius, &mut rng).unwrap();
    st.freeze_decoder();
    randomize_factors(&mut st, &mut rng);
    let img = images(&mut rng, &cfg, 2);
    let mut tape = Tape::new();
    let b = st.bind(&mut tape, true).unwrap();
    let toks: Vec<_> = (0..2).map(|v| encode_on(&mut tape, &b, &st.config, &view(&img, v)).unwrap()).collect();
    let h = decode_on(&mut tape, &b, &st.config, &toks).unwrap();
    let mut parts = h.point.clone();
    parts.extend(&h.depth);
    let loss = sum_all(&mut tape, &parts).unwrap();
    let g = tape.backward(loss).unwrap();
    let trainable: std::collections::BTreeSet<_> = b.trainable.values().copied().collect();
    for v in g.present() {
        assert!(trainable.contains(&v), "gradient reached a non-trainable variable {v:?}");
    }
    for name in b.trainable.keys() {
        assert!(!st.freeze_mask.contains(name));
    }
    for name in &st.freeze_mask {
        assert!(!b.trainable.contains_key(name));
    }
    // Adapter factors and unfrozen encoder parameters do learn.
    assert!(b.trainable.contains_key(&down_name("enc.blocks.0.attn.q.weight")));
    assert!(b.trainable.contains_key("enc.patch.weight"));
    assert!(st.set_parameter("dec.head.point.weight", Tensor::zeros(&[3, 8])).is_err());
    assert!(st.set_parameter("enc.blocks.0.attn.q.weight", Tensor::zeros(&[8, 8])).is_err());
}

#[test]
fn checkpoint_round_trip_and_tamper_detection() {
    let cfg = tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut st = ModelState::init(cfg, &mut rng).unwrap();
    st.attach_adapters(2, 4.0, RenormMode::Functional, NormKind::Spectral, &mut rng).unwrap();
    st.freeze_decoder();
    randomize_factors(&mut st, &mut rng);
    let dir = tempfile::tempdir().unwrap();
    st.save(dir.path()).unwrap();
    let back = ModelState::load(dir.path()).unwrap();
    assert_eq!(back, st);
    let img = images(&mut rng, &cfg, 2);
    assert_eq!(forward(&img, &back).unwrap(), forward(&img, &st).unwrap());

    let path = dir.path().join("params").join("dec.head.depth.bias.ften");
    renormlab::tensor::save_ften(&path, &Tensor::full(&[1], 0.5)).unwrap();
    assert!(matches!(ModelState::load(dir.path()), Err(LabError::Checksum { .. })));
}

#[test]
fn adapter_base_must_match_encoder() {
    let cfg = tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut st = ModelState::init(cfg, &mut rng).unwrap();
    st.attach_adapters(1, 1.0, RenormMode::Functional, NormKind::Frobenius, &mut rng).unwrap();
    assert!(st.validate().is_ok());
    st.encoder.get_mut("enc.blocks.0.attn.v.weight").unwrap().data_mut()[0] += 1.0;
    assert!(st.validate().is_err());
}
