use flowvi_core::flows::{
    FlowFamily, FlowLayer, FlowStack, NiceCoupling, Planar, Radial, INVERT_TOL,
};
use flowvi_core::math::{fd_jacobian, Rng};
use flowvi_core::{DiagGaussian, Mat};
use proptest::prelude::*;

fn layer_stack(layers: Vec<FlowLayer<f64>>, d: usize) -> FlowStack<f64> {
    FlowStack::new(d, layers).unwrap()
}

fn random_stack(kind: &str, k: usize, rng: &mut Rng) -> FlowStack<f64> {
    let cycle: &[FlowFamily] = match kind {
        "planar" => &[FlowFamily::Planar],
        "radial" => &[FlowFamily::Radial],
        _ => &[FlowFamily::Planar, FlowFamily::Radial, FlowFamily::NiceOrth],
    };
    let mut layers = Vec::new();
    for j in 0..k {
        let one = FlowStack::<f64>::random(cycle[j % cycle.len()], 2, 1, 0.8, 4, rng).unwrap();
        layers.extend(one.layers().iter().cloned());
    }
    layer_stack(layers, 2)
}

/// `ln q_K(z) = ln q₀(f⁻¹(z)) - Σ logdet` through the inverse chain.
fn log_qk(q0: &DiagGaussian<f64>, flow: &FlowStack<f64>, z: &[f64]) -> f64 {
    let (z0, s) = flow.inverse(z, INVERT_TOL).unwrap();
    q0.logpdf(&z0) - s
}

/// Midpoint rule over `(-8, 8)²`.
fn quadrature(n: usize, f: impl Fn(&[f64]) -> f64) -> f64 {
    let h = 16.0 / n as f64;
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            total += f(&[-8.0 + (i as f64 + 0.5) * h, -8.0 + (j as f64 + 0.5) * h]);
        }
    }
    total * h * h
}

#[test]
fn density_integrates_to_one() {
    let mut rng = Rng::new(11);
    let q0 = DiagGaussian::standard(2);
    for kind in ["planar", "radial", "mixed"] {
        for k in [1, 2, 4, 8] {
            let flow = random_stack(kind, k, &mut rng);
            let mass = quadrature(320, |z| log_qk(&q0, &flow, z).exp());
            assert!((mass - 1.0).abs() < 0.01, "{kind} K={k}: {mass}");
        }
    }
}

#[test]
fn lotus_matches_quadrature() {
    let mut rng = Rng::new(12);
    let q0 = DiagGaussian::standard(2);
    let f = |z: &[f64]| z[0] * z[0] + (z[1] - 0.5).sin();
    for kind in ["planar", "radial", "mixed"] {
        let flow = random_stack(kind, 4, &mut rng);
        let n = 20_000;
        let vals: Vec<f64> = (0..n)
            .map(|_| {
                let (z0, _) = q0.sample(&mut rng);
                f(&flow.forward(&z0).unwrap().z_out)
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        let exact = quadrature(300, |z| log_qk(&q0, &flow, z).exp() * f(z));
        assert!(
            (mean - exact).abs() < 3.0 * se,
            "{kind}: {mean} vs {exact} (se {se})"
        );
    }
}

#[test]
fn logdet_matches_numerical_jacobian() {
    let mut rng = Rng::new(13);
    for d in [2, 3] {
        for k in 1..=4 {
            let mut layers = Vec::new();
            for j in 0..k {
                let fam =
                    [FlowFamily::Planar, FlowFamily::Radial, FlowFamily::NicePerm][(j + d) % 3];
                layers.extend(
                    FlowStack::<f64>::random(fam, d, 1, 0.8, 3, &mut rng)
                        .unwrap()
                        .layers()
                        .iter()
                        .cloned(),
                );
            }
            let flow = layer_stack(layers, d);
            let z: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
            let jac: Mat<f64> =
                fd_jacobian(|q: &[f64]| flow.forward(q).unwrap().z_out, &z, 1e-6).unwrap();
            let expected = jac.det().abs().ln();
            let got = flow.forward(&z).unwrap().sum_logdet;
            assert!(
                (got - expected).abs() <= 1e-6 * expected.abs().max(1.0),
                "d={d} K={k}: {got} vs {expected}"
            );
        }
    }
}

#[test]
fn nice_is_volume_preserving_with_exact_inverse() {
    let mut rng = Rng::new(14);
    let q0 = DiagGaussian::standard(4);
    for family in [FlowFamily::NicePerm, FlowFamily::NiceOrth] {
        for k in [1, 3, 8] {
            let flow = FlowStack::<f64>::random(family, 4, k, 1.0, 6, &mut rng).unwrap();
            for _ in 0..50 {
                let (z0, _) = q0.sample(&mut rng);
                let r = flow.forward(&z0).unwrap();
                assert_eq!(r.sum_logdet, 0.0);
                let (back, s) = flow.inverse(&r.z_out, INVERT_TOL).unwrap();
                assert_eq!(s, 0.0);
                let err = back
                    .iter()
                    .zip(&z0)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                assert!(err <= 1e-10, "{err}");
                let forward_path = q0.logpdf(&z0) - r.sum_logdet;
                let inverse_path = log_qk(&q0, &flow, &r.z_out);
                assert!((forward_path - inverse_path).abs() <= 1e-8);
            }
        }
    }
}

#[test]
fn generic_over_f32() {
    let p = Planar::<f32>::new(vec![0.5, -0.2], vec![1.0, 0.3], 0.1).unwrap();
    let stack = FlowStack::new(2, vec![FlowLayer::Planar(p)]).unwrap();
    let r = stack.forward(&[0.3f32, -0.7]).unwrap();
    let (back, _) = stack.inverse(&r.z_out, 1e-6).unwrap();
    assert!((back[0] - 0.3).abs() < 1e-5 && (back[1] + 0.7).abs() < 1e-5);
}

#[test]
fn planar_constraint_holds_on_ten_thousand_layers() {
    let mut rng = Rng::new(15);
    for _ in 0..10_000 {
        let d = 1 + rng.below(4);
        let mut n = |s: f64| -> Vec<f64> { (0..d).map(|_| s * rng.normal()).collect() };
        let p = Planar::new(n(3.0), n(3.0), 0.0).unwrap();
        let w_uhat: f64 = p.u_hat().iter().zip(&p.w).map(|(a, b)| a * b).sum();
        for _ in 0..100 {
            let z = n(4.0);
            let a: f64 = p.w.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>() + p.b;
            let t = a.tanh();
            let det = 1.0 + (1.0 - t * t) * w_uhat;
            assert!(det > 0.0, "{p:?} at {z:?}: {det}");
        }
    }
}

#[test]
fn radial_factors_positive_on_ten_thousand_layers() {
    let mut rng = Rng::new(16);
    for _ in 0..10_000 {
        let d = 1 + rng.below(4);
        let z0: Vec<f64> = (0..d).map(|_| 2.0 * rng.normal()).collect();
        let r = Radial::new(z0, 2.0 * rng.normal(), 4.0 * rng.normal()).unwrap();
        for _ in 0..100 {
            let z: Vec<f64> = (0..d).map(|_| 4.0 * rng.normal()).collect();
            let step = r.apply(&z).expect("determinant factors must stay positive");
            assert!(step.logdet.is_finite());
        }
    }
}

fn vec_strategy(d: usize, scale: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-scale..scale, d)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn planar_inverse_residual(d in 1usize..5, seed in any::<u64>(), b in -2.0f64..2.0) {
        let mut rng = Rng::new(seed);
        let mut n = |s: f64| -> Vec<f64> { (0..d).map(|_| s * rng.normal()).collect() };
        let p = Planar::new(n(2.0), n(2.0), b).unwrap();
        let z = n(3.0);
        let out = p.apply(&z).unwrap().z_out;
        let back = p.invert(&out, INVERT_TOL).unwrap();
        let again = p.apply(&back).unwrap().z_out;
        prop_assert!(max_abs_diff(&again, &out) <= 1e-8);
    }

    #[test]
    fn radial_inverse_residual(z0 in vec_strategy(3, 3.0), z in vec_strategy(3, 5.0), la in -3.0f64..2.0, br in -6.0f64..6.0) {
        let r = Radial::new(z0, la, br).unwrap();
        let out = r.apply(&z).unwrap().z_out;
        let back = r.invert(&out, INVERT_TOL).unwrap();
        let again = r.apply(&back).unwrap().z_out;
        prop_assert!(max_abs_diff(&again, &out) <= 1e-8);
    }

    #[test]
    fn nice_logdet_is_exactly_zero(z in vec_strategy(5, 4.0), seed in any::<u64>(), orth in any::<bool>()) {
        let mut rng = Rng::new(seed);
        let kind = if orth { flowvi_core::flows::MixerKind::Orthogonal } else { flowvi_core::flows::MixerKind::Permutation };
        let c = NiceCoupling::<f64>::random(5, 4, kind, 1.5, &mut rng).unwrap();
        let step = c.apply(&z).unwrap();
        prop_assert_eq!(step.logdet, 0.0);
        prop_assert!(max_abs_diff(&c.inverse(&step.z_out).unwrap(), &z) <= 1e-10);
    }

    #[test]
    fn records_round_trip(seed in any::<u64>(), k in 0usize..6) {
        let mut rng = Rng::new(seed);
        let flow = random_stack("mixed", k, &mut rng);
        let json = serde_json::to_string(&flow.to_records()).unwrap();
        let back = FlowStack::<f64>::from_records(2, &serde_json::from_str::<Vec<_>>(&json).unwrap()).unwrap();
        prop_assert_eq!(back.params(), flow.params());
        prop_assert_eq!(back, flow);
    }
}
