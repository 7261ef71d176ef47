use flowvi_core::dataset::DType;
use flowvi_core::engine::{anneal_beta, Rmsprop, TrainConfig};
use flowvi_core::math::{softplus, Rng};
use flowvi_core::models::{
    bernoulli_loglik, energy_normalizer, logitnormal_loglik, EnergyFunction, Potential, Quadratic,
};
use flowvi_core::{Dataset, DiagGaussian};
use proptest::prelude::*;

#[test]
fn diag_gaussian_integrates_to_one() {
    let q = DiagGaussian::new(vec![0.4, -0.3], vec![-0.2, 0.3]).unwrap();
    let (n, lo, hi) = (400, -8.0, 8.0);
    let h = (hi - lo) / n as f64;
    let mut mass = 0.0;
    for i in 0..n {
        for j in 0..n {
            let z = [lo + (i as f64 + 0.5) * h, lo + (j as f64 + 0.5) * h];
            mass += q.logpdf(&z).exp();
        }
    }
    assert!((mass * h * h - 1.0).abs() < 1e-6);
}

#[test]
fn bernoulli_sums_to_one_over_outcomes() {
    for l in [-30.0f64, -2.0, 0.0, 0.7, 40.0] {
        let p1 = bernoulli_loglik(&[l], &[1.0]).unwrap().exp();
        let p0 = bernoulli_loglik(&[l], &[0.0]).unwrap().exp();
        assert!((p0 + p1 - 1.0).abs() < 1e-12);
    }
    assert!(bernoulli_loglik(&[0.0], &[0.5]).is_err());
}

#[test]
fn logitnormal_integrates_to_one() {
    for (mu, la) in [(0.0, 0.0), (1.2, -1.0), (-0.8, -2.0)] {
        let n = 200_000;
        let mass: f64 = (0..n)
            .map(|i| {
                let x = (i as f64 + 0.5) / n as f64;
                logitnormal_loglik(&[mu], &[la], &[x])
                    .map(f64::exp)
                    .unwrap_or(0.0)
            })
            .sum::<f64>()
            / n as f64;
        assert!((mass - 1.0).abs() < 1e-3, "{mu} {la}: {mass}");
    }
}

#[test]
fn quadratic_normalizer_is_two_pi() {
    let z: f64 = energy_normalizer(&Quadratic, 400).unwrap();
    assert!((z / std::f64::consts::TAU - 1.0).abs() < 1e-3);
}

#[test]
fn energy_normalizers_converge() {
    for e in EnergyFunction::ALL {
        let a: f64 = energy_normalizer(&e, 400).unwrap();
        let b: f64 = energy_normalizer(&e, 800).unwrap();
        assert!(a.is_finite() && a > 0.0);
        assert!((a - b).abs() / b < 1e-4, "{e:?}: {a} vs {b}");
    }
}

#[test]
fn synthetic_bars_round_trip_through_file() {
    let ds = Dataset::synthetic_bars(20, 8, &mut Rng::new(3)).unwrap();
    assert_eq!((ds.n(), ds.d(), ds.dtype()), (20, 64, DType::U8));
    assert!(ds.values().iter().all(|&v| v == 0.0 || v == 1.0));
    assert!((0..20).all(|i| ds.row(i).contains(&1.0)));
    let mut buf = Vec::new();
    ds.write_to(&mut buf).unwrap();
    assert_eq!(Dataset::read_from(&buf[..]).unwrap(), ds);
}

#[test]
fn malformed_dataset_is_rejected() {
    let bad = b"{\"n\":2,\"d\":3,\"dtype\":\"u8\"}\n\x01\x00";
    assert!(Dataset::read_from(&bad[..]).is_err());
    assert!(Dataset::read_from(&b"not json\n"[..]).is_err());
}

proptest! {
    #[test]
    fn softplus_is_positive_and_above_identity(x in -1e3f64..1e3) {
        let s = softplus(x);
        prop_assert!(s > 0.0 && s >= x);
    }

    #[test]
    fn energies_are_finite_with_finite_gradients(z1 in -4.0f64..4.0, z2 in -4.0f64..4.0) {
        for e in EnergyFunction::ALL {
            let (u, g): (f64, Vec<f64>) = (e.energy(&[z1, z2]), e.energy_grad(&[z1, z2]));
            prop_assert!(u.is_finite() && g.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn anneal_is_monotone_and_bounded(t in 0usize..50_000, t0 in 0.001f64..1.0, steps in 1usize..20_000) {
        let cfg = TrainConfig { anneal_t0: t0, anneal_steps: steps, ..Default::default() };
        let (a, b) = (anneal_beta(t, &cfg), anneal_beta(t + 1, &cfg));
        prop_assert!(a <= b && a >= t0.min(1.0) && b <= 1.0);
        if t >= steps {
            prop_assert_eq!(a, 1.0);
        }
    }

    #[test]
    fn rmsprop_step_is_bounded(gs in prop::collection::vec(-1e3f64..1e3, 1..30), lr in 1e-6f64..1e-1) {
        let mut opt = Rmsprop::new(1, lr, 0.9);
        let mut p = [0.0];
        let mut velocity: f64 = 0.0;
        for g in gs {
            let before = p[0];
            opt.step(&mut p, &[g]).unwrap();
            let delta: f64 = p[0] - before;
            prop_assert!(delta.abs() <= lr / (1.0f64 - 0.9).sqrt() + 0.9 * velocity.abs() + 1e-12);
            velocity = delta;
        }
    }
}
