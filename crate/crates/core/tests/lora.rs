use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use renormlab::check::LabTapeFunction;
use renormlab::lora::{matrix_norm, LoraAdapter, NormKind, RenormMode};
use renormlab::tensor::{grad_check, Tape, Tensor};

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn random_adapter(rng: &mut ChaCha8Rng, mode: RenormMode, kind: NormKind) -> LoraAdapter {
    let d = rng.random_range(2..12);
    let k = rng.random_range(2..12);
    let r = rng.random_range(1..=d.min(k));
    let base = random(rng, &[d, k]);
    let down = random(rng, &[r, k]);
    let up = random(rng, &[d, r]);
    let alpha = rng.random_range(0.5..16.0);
    LoraAdapter::from_parts(base, down, up, r, alpha, mode, kind).unwrap()
}

/// Independent norms: Frobenius by summation, spectral via nalgebra SVD.
fn oracle_norm(t: &Tensor, kind: NormKind) -> f64 {
    let (d, k) = t.rows_cols().unwrap();
    match kind {
        NormKind::Frobenius => t.data().iter().map(|v| v * v).sum::<f64>().sqrt(),
        NormKind::Spectral => {
            let m = nalgebra::DMatrix::from_row_slice(d, k, t.data());
            m.singular_values().max()
        }
    }
}

#[test]
fn norm_preserved_for_a_thousand_adapters() {
    for kind in [NormKind::Frobenius, NormKind::Spectral] {
        let mut worst_estimator_gap: f64 = 0.0;
        for mode in [RenormMode::Functional, RenormMode::Detached] {
            let mut rng = ChaCha8Rng::seed_from_u64(1000);
            for _ in 0..1000 {
                let a = random_adapter(&mut rng, mode, kind);
                let w = a.effective_weight().unwrap();
                let base = matrix_norm(a.base(), kind).unwrap();
                let eff = matrix_norm(&w, kind).unwrap();
                assert!(
                    (eff - base).abs() / base <= 1e-9,
                    "{kind:?}/{mode:?}: {eff} vs {base}"
                );
                worst_estimator_gap = worst_estimator_gap
                    .max((base - oracle_norm(a.base(), kind)).abs() / base)
                    .max((eff - oracle_norm(&w, kind)).abs() / eff);
                assert!(a.norm_preservation_report().unwrap().relative_drift <= 1e-9);
            }
        }
        println!("{kind:?}: worst gap to exact norm {worst_estimator_gap:e}");
        // The spectral estimate iterates until the singular vector settles.
        let allowed = if kind == NormKind::Frobenius { 1e-13 } else { 1e-10 };
        assert!(worst_estimator_gap <= allowed);
    }
}

#[test]
fn direction_preserved() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..200 {
        let a = random_adapter(&mut rng, RenormMode::Functional, NormKind::Frobenius);
        let combined = a.combined_weight().unwrap();
        let w = a.effective_weight().unwrap();
        let ratios: Vec<f64> = combined
            .data()
            .iter()
            .zip(w.data())
            .filter(|(c, _)| c.abs() > 1e-12)
            .map(|(c, e)| e / c)
            .collect();
        let s = ratios[0];
        assert!(s > 0.0);
        for r in &ratios {
            assert!((r - s).abs() <= 1e-12 * s.max(1.0), "{r} vs {s}");
        }
    }
}

#[test]
fn zero_down_factor_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for mode in [RenormMode::Off, RenormMode::Functional, RenormMode::Detached] {
        let base = random(&mut rng, &[6, 5]);
        let up = random(&mut rng, &[6, 3]);
        let a = LoraAdapter::from_parts(base.clone(), Tensor::zeros(&[3, 5]), up, 3, 3.0, mode, NormKind::Frobenius)
            .unwrap();
        let w = a.effective_weight().unwrap();
        if mode == RenormMode::Off {
            assert_eq!(w.data(), base.data());
        } else {
            assert!(w.max_abs_diff(&base).unwrap() <= 1e-15);
        }
    }
}

#[test]
fn doubling_alpha_doubles_update() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut a = random_adapter(&mut rng, RenormMode::Off, NormKind::Frobenius);
    let before = a.delta_weight().unwrap();
    let before_eff = a.effective_weight().unwrap().sub(a.base()).unwrap();
    a.set_alpha(2.0 * a.alpha()).unwrap();
    let after = a.delta_weight().unwrap();
    for (x, y) in before.data().iter().zip(after.data()) {
        assert_eq!(2.0 * x, *y);
    }
    let after_eff = a.effective_weight().unwrap().sub(a.base()).unwrap();
    assert!(after_eff.max_abs_diff(&before_eff.scale(2.0)).unwrap() < 1e-12);
}

#[test]
fn functional_forward_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for kind in [NormKind::Frobenius, NormKind::Spectral] {
        let base = random(&mut rng, &[5, 4]);
        let down = random(&mut rng, &[2, 4]);
        let up = random(&mut rng, &[5, 2]);
        let x = random(&mut rng, &[3, 4]);
        let a = LoraAdapter::from_parts(base, down.clone(), up.clone(), 2, 2.0, RenormMode::Functional, kind)
            .unwrap();

        let wrt_down = LabTapeFunction(|t: &mut Tape, d| {
            let u = t.constant(up.clone());
            let xv = t.constant(x.clone());
            let y = a.forward_on(t, xv, renormlab::lora::FactorVars { down: d, up: u })?;
            Ok(t.sum(y)?)
        });
        assert!(grad_check(&wrt_down, &down, 1e-5).unwrap() < 1e-4, "{kind:?} down");

        // Squared output: a loss whose gradient does not vanish by symmetry.
        let wrt_up = LabTapeFunction(|t: &mut Tape, u| {
            let d = t.constant(down.clone());
            let xv = t.constant(x.clone());
            let y = a.forward_on(t, xv, renormlab::lora::FactorVars { down: d, up: u })?;
            let y2 = t.square(y)?;
            Ok(t.sum(y2)?)
        });
        assert!(grad_check(&wrt_up, &up, 1e-5).unwrap() < 1e-4, "{kind:?} up");
    }
}

#[test]
fn base_never_receives_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for mode in [RenormMode::Off, RenormMode::Functional, RenormMode::Detached] {
        let a = random_adapter(&mut rng, mode, NormKind::Frobenius);
        let mut tape = Tape::new();
        let f = a.bind(&mut tape, true);
        let k = a.base().shape()[1];
        let x = tape.constant(random(&mut rng, &[2, k]));
        let y = a.forward_on(&mut tape, x, f).unwrap();
        let y2 = tape.square(y).unwrap();
        let s = tape.sum(y2).unwrap();
        let g = tape.backward(s).unwrap();
        let present: Vec<_> = g.present().collect();
        assert_eq!(present, vec![f.down, f.up]);
    }
}

#[test]
fn off_mode_drift_matches_independent_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let base = random(&mut rng, &[16, 16]);
    let down = random(&mut rng, &[8, 16]);
    let up = random(&mut rng, &[16, 8]);
    let a = LoraAdapter::from_parts(base.clone(), down.clone(), up.clone(), 8, 8.0, RenormMode::Off, NormKind::Frobenius)
        .unwrap();
    // W + B·A by explicit triple loop (alpha/rank = 1).
    let mut combined = base.data().to_vec();
    for i in 0..16 {
        for j in 0..16 {
            for r in 0..8 {
                combined[i * 16 + j] += up.data()[i * 8 + r] * down.data()[r * 16 + j];
            }
        }
    }
    let base_norm = base.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    let comb_norm = combined.iter().map(|v| v * v).sum::<f64>().sqrt();
    let rep = a.norm_preservation_report().unwrap();
    assert!((rep.base_norm - base_norm).abs() < 1e-12);
    assert!((rep.combined_norm - comb_norm).abs() < 1e-12);
    assert!((rep.effective_norm - comb_norm).abs() < 1e-12);
    let drift = (comb_norm - base_norm).abs() / base_norm;
    assert!((rep.relative_drift - drift).abs() < 1e-12);
    assert!(rep.relative_drift > 1e-3);
}

#[test]
fn off_mode_update_equal_to_base_doubles_norm() {
    // B·A = W for W = [[3, 4], [0, 0]] with A = [[3, 4]], B = [[1], [0]].
    let base = Tensor::from_rows(&[&[3.0, 4.0], &[0.0, 0.0]]).unwrap();
    let down = Tensor::from_rows(&[&[3.0, 4.0]]).unwrap();
    let up = Tensor::from_rows(&[&[1.0], &[0.0]]).unwrap();
    let a = LoraAdapter::from_parts(base, down, up, 1, 1.0, RenormMode::Off, NormKind::Frobenius).unwrap();
    let rep = a.norm_preservation_report().unwrap();
    assert_eq!(rep.combined_norm, 2.0 * rep.base_norm);
}
