use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use renormlab_tensor::{
    read_ften, spectral_norm, write_ften, Tensor, SPECTRAL_MAX_ITERS, SPECTRAL_TOL,
};

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::from_fn(&[r, c], |_| rng.random_range(-2.0..2.0))
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

#[test]
fn matmul_commutes_with_scalar_multiplication() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let (m, k, n) = (rng.random_range(1..6), rng.random_range(1..6), rng.random_range(1..6));
        let a = random_matrix(&mut rng, m, k);
        let b = random_matrix(&mut rng, k, n);
        let c: f64 = rng.random_range(-3.0..3.0);
        let lhs = a.scale(c).matmul(&b).unwrap();
        let rhs = a.matmul(&b).unwrap().scale(c);
        for (x, y) in lhs.data().iter().zip(rhs.data()) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1.0));
        }
    }
}

#[test]
fn frobenius_is_absolutely_homogeneous() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..200 {
        let t = random_matrix(&mut rng, 3, 5);
        let c: f64 = rng.random_range(-10.0..10.0);
        assert!(rel(t.scale(c).frobenius_norm(), c.abs() * t.frobenius_norm()) < 1e-12);
    }
}

#[test]
fn spectral_never_exceeds_frobenius() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..1000 {
        let (r, c) = (rng.random_range(1..8), rng.random_range(1..8));
        let m = random_matrix(&mut rng, r, c);
        let s = spectral_norm(&m, SPECTRAL_MAX_ITERS, SPECTRAL_TOL).unwrap();
        assert!(s.value <= m.frobenius_norm() * (1.0 + 1e-12));
    }
}

#[test]
fn spectral_matches_svd_when_converged() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut converged = 0;
    for _ in 0..200 {
        let m = random_matrix(&mut rng, 6, 4);
        let s = spectral_norm(&m, SPECTRAL_MAX_ITERS, SPECTRAL_TOL).unwrap();
        let svd = DMatrix::from_row_slice(6, 4, m.data()).singular_values();
        let top = svd.iter().cloned().fold(0.0, f64::max);
        if s.converged {
            converged += 1;
            assert!(rel(s.value, top) < 1e-8, "{} vs {}", s.value, top);
        } else {
            assert!(s.value <= top * (1.0 + 1e-12));
        }
    }
    assert!(converged > 150);
}

proptest! {
    #[test]
    fn ften_round_trips(shape in prop::collection::vec(1usize..5, 0..4), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = Tensor::from_fn(&shape, |_| rng.random::<f64>() * 1e6 - 5e5);
        let mut buf = Vec::new();
        write_ften(&mut buf, &t).unwrap();
        prop_assert_eq!(buf.len(), 9 + 4 * shape.len() + 8 * t.numel());
        let back = read_ften(buf.as_slice()).unwrap();
        prop_assert_eq!(back, t);
    }
}
