use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use renormlab::check::LabTapeFunction;
use renormlab::losses::{
    confidence_from_raw, distill_loss, pointmap_loss, total_objective, ConfidenceLink, LossConfig,
    SupervisionTarget,
};
use renormlab::tensor::{grad_check, Tape, Tensor};

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Golden-section minimization on [lo, hi].
fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - g * (hi - lo);
    let mut d = lo + g * (hi - lo);
    while hi - lo > 1e-12 * (1.0 + lo.abs()) {
        if f(c) < f(d) {
            hi = d;
        } else {
            lo = c;
        }
        c = hi - g * (hi - lo);
        d = lo + g * (hi - lo);
    }
    0.5 * (lo + hi)
}

fn distill_at_beta(err: f64, beta: f64, lambda: f64) -> f64 {
    let mut t = Tape::new();
    let pred = t.constant(Tensor::new(&[2], vec![err.sqrt(), 1.0 + err.sqrt()]).unwrap());
    let target = SupervisionTarget::dense(Tensor::new(&[2], vec![0.0, 1.0]).unwrap(), None, false).unwrap();
    let b = t.constant(Tensor::full(&[2], beta));
    let cfg = LossConfig {
        lambda_reg: lambda,
        ..LossConfig::default()
    };
    let l = distill_loss(&mut t, pred, &target, b, &cfg).unwrap();
    t.value(l).item().unwrap()
}

#[test]
fn optimal_confidence_is_lambda_over_error() {
    for &(e, lambda) in &[(0.5, 0.2), (2.0, 0.2), (0.05, 0.2), (1.0, 0.7)] {
        let closed = lambda / e;
        let scanned = golden_min(|b| distill_at_beta(e, b, lambda), 1e-6, 50.0);
        assert!(
            ((scanned - closed) / closed).abs() < 1e-6,
            "e={e}: scan {scanned} vs {closed}"
        );
        // Strict convexity: midpoint below the chord.
        let (a, b) = (0.3 * closed, 2.5 * closed);
        let mid = distill_at_beta(e, 0.5 * (a + b), lambda);
        assert!(mid < 0.5 * (distill_at_beta(e, a, lambda) + distill_at_beta(e, b, lambda)));
    }
}

#[test]
fn gradient_descent_on_raw_confidence_reaches_lambda_over_error() {
    let e: f64 = 0.8;
    let cfg = LossConfig::default();
    let mut raw = 0.0f64;
    for _ in 0..4000 {
        let mut t = Tape::new();
        let pred = t.constant(Tensor::new(&[1], vec![e.sqrt()]).unwrap());
        let target = SupervisionTarget::dense(Tensor::zeros(&[1]), None, false).unwrap();
        let r = t.param(Tensor::new(&[1], vec![raw]).unwrap());
        let b = confidence_from_raw(&mut t, r, &cfg).unwrap();
        let l = distill_loss(&mut t, pred, &target, b, &cfg).unwrap();
        let g = t.backward(l).unwrap().get(r).unwrap().data()[0];
        raw -= 0.5 * g;
    }
    assert!((raw.exp() - cfg.lambda_reg / e).abs() < 1e-9);
}

#[test]
fn losses_pass_grad_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 6;
    let mask = vec![true, true, false, true, true, false];
    for link in [ConfidenceLink::Exp, ConfidenceLink::OnePlusExp] {
        let cfg = LossConfig {
            confidence_link: link,
            ..LossConfig::default()
        };
        let teacher = random(&mut rng, &[n]);
        let gt = random(&mut rng, &[n, 3]);
        let target = SupervisionTarget::new(teacher, Some(gt), true, mask.clone()).unwrap();
        let pred_d = random(&mut rng, &[n]);
        let pred_p = random(&mut rng, &[n, 3]);
        let raw = random(&mut rng, &[n]);

        let wrt_pred = LabTapeFunction(|t: &mut Tape, p| {
            let r = t.constant(raw.clone());
            let b = confidence_from_raw(t, r, &cfg)?;
            distill_loss(t, p, &target, b, &cfg)
        });
        assert!(grad_check(&wrt_pred, &pred_d, 1e-5).unwrap() < 1e-4);

        let wrt_raw = LabTapeFunction(|t: &mut Tape, r| {
            let p = t.constant(pred_d.clone());
            let b = confidence_from_raw(t, r, &cfg)?;
            let d = distill_loss(t, p, &target, b, &cfg)?;
            let q = t.constant(pred_p.clone());
            let pm = pointmap_loss(t, q, &target, b, &cfg)?;
            total_objective(t, &[(d, pm)], 1)
        });
        assert!(grad_check(&wrt_raw, &raw, 1e-5).unwrap() < 1e-4);

        let wrt_points = LabTapeFunction(|t: &mut Tape, q| {
            let r = t.constant(raw.clone());
            let b = confidence_from_raw(t, r, &cfg)?;
            pointmap_loss(t, q, &target, b, &cfg)
        });
        assert!(grad_check(&wrt_points, &pred_p, 1e-5).unwrap() < 1e-4);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn distill_invariant_outside_mask(
        seed in any::<u64>(),
        mask in proptest::collection::vec(any::<bool>(), 8),
    ) {
        prop_assume!(mask.iter().any(|&m| m));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pred = random(&mut rng, &[8]);
        let teacher = random(&mut rng, &[8]);
        let beta = random(&mut rng, &[8]).map(|v| v.exp());
        let noise = |rng: &mut ChaCha8Rng, t: &Tensor, lo: f64| {
            let mut out = t.clone();
            for (i, m) in mask.iter().enumerate() {
                if !m {
                    out.data_mut()[i] = rng.random_range(lo..50.0);
                }
            }
            out
        };
        let eval = |p: Tensor, te: Tensor, b: Tensor| {
            let mut t = Tape::new();
            let p = t.constant(p);
            let b = t.constant(b);
            let target = SupervisionTarget::new(te, None, false, mask.clone()).unwrap();
            let l = distill_loss(&mut t, p, &target, b, &LossConfig::default()).unwrap();
            t.value(l).item().unwrap()
        };
        let base = eval(pred.clone(), teacher.clone(), beta.clone());
        let pred2 = noise(&mut rng, &pred, -50.0);
        let teacher2 = noise(&mut rng, &teacher, -50.0);
        let beta2 = noise(&mut rng, &beta, 1e-3);
        prop_assert_eq!(base, eval(pred2, teacher2, beta2));
    }

    #[test]
    fn pointmap_is_zero_for_monocular(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Tape::new();
        let p = t.constant(random(&mut rng, &[5, 3]).scale(100.0));
        let b = t.constant(random(&mut rng, &[5]).map(|v| v.exp()));
        let gt = random(&mut rng, &[5, 3]);
        let target = SupervisionTarget::dense(Tensor::ones(&[5]), Some(gt), false).unwrap();
        let l = pointmap_loss(&mut t, p, &target, b, &LossConfig::default()).unwrap();
        prop_assert_eq!(t.value(l).item().unwrap(), 0.0);
    }

    #[test]
    fn total_objective_permutation_invariant(
        vals in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..10),
        seed in any::<u64>(),
    ) {
        let mut t = Tape::new();
        let terms: Vec<_> = vals
            .iter()
            .map(|&(a, b)| (t.constant(Tensor::scalar(a)), t.constant(Tensor::scalar(b))))
            .collect();
        let mut shuffled = terms.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.random_range(0..=i));
        }
        let a = total_objective(&mut t, &terms, terms.len()).unwrap();
        let b = total_objective(&mut t, &shuffled, terms.len()).unwrap();
        let (a, b) = (t.value(a).item().unwrap(), t.value(b).item().unwrap());
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
    }
}
