//! Finite-difference audit of every analytic backward pass.
//!
//! Each family draws random instances, evaluates a scalar loss analytically
//! and by central differences over all of its inputs, and records the worst
//! coordinate-wise relative error `|a - b| / max(1, |a|, |b|)`.

use serde::Serialize;

use crate::engine::elbo::sample_terms;
use crate::engine::{free_model, vae_model, Draw, Model, Target, VaeSpec, Variational};
use crate::error::Result;
use crate::flows::{
    planar_constrain, planar_constrain_vjp, radial_constrain, radial_constrain_vjp, FlowFamily,
    FlowStack,
};
use crate::math::{fd_gradient, max_rel_err, sample_std_normal, Mat, Rng, FD_STEP};
use crate::models::{Activation, DiagGaussian, EnergyFunction, Likelihood, LinearGaussian, Mlp};

pub const TOLERANCE: f64 = 1e-5;
pub const DEFAULT_INSTANCES: usize = 100;

/// Every family in suite order.
pub const FAMILIES: [&str; 15] = [
    "planar-input",
    "planar-params",
    "radial-input",
    "radial-params",
    "nice-input",
    "nice-params",
    "mixed-stack",
    "planar-constraint",
    "radial-constraint",
    "mlp-maxout",
    "mlp-tanh",
    "elbo-energy",
    "elbo-bernoulli",
    "elbo-logitnormal",
    "elbo-linear-gaussian",
];

#[derive(Clone, Debug, Default)]
pub struct GradcheckOptions {
    pub seed: u64,
    pub instances: usize,
    /// Family whose analytic gradient is deliberately perturbed, to show the
    /// suite can fail.
    pub corrupt: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CaseReport {
    pub family: String,
    pub instances: usize,
    /// Instances discarded because the difference oracle was unreliable.
    pub redrawn: usize,
    pub max_rel_err: f64,
    pub worst_instance: usize,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub tolerance: f64,
    pub fd_step: f64,
    pub passed: bool,
    pub failed: Vec<String>,
    pub cases: Vec<CaseReport>,
}

/// Analytic and finite-difference gradients of one instance. `spread` is
/// the disagreement between differences at `h` and `2h`.
struct Pair {
    analytic: Vec<f64>,
    numeric: Vec<f64>,
    spread: f64,
}

/// Largest `spread` at which the difference oracle is trusted.
const ORACLE_SPREAD: f64 = TOLERANCE;
/// Redraws allowed per instance before an untrusted oracle is accepted.
const MAX_REDRAWS: usize = 50;

/// Central differences at `h` plus their spread against `2h`.
fn numeric(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Result<(Vec<f64>, f64)> {
    let fine = fd_gradient(&f, x, FD_STEP)?;
    let coarse = fd_gradient(&f, x, 2.0 * FD_STEP)?;
    let spread = max_rel_err(&fine, &coarse);
    Ok((fine, spread))
}

fn pair(analytic: Vec<f64>, (numeric, spread): (Vec<f64>, f64)) -> Pair {
    Pair {
        analytic,
        numeric,
        spread,
    }
}

fn normals(rng: &mut Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.normal()).collect()
}

fn one_layer(family: FlowFamily, d: usize, rng: &mut Rng) -> Result<FlowStack<f64>> {
    FlowStack::random(family, d, 1, 0.8, 4, rng)
}

/// `L = gzᵀ z_K + gl · Σ logdet`, differentiated with respect to `z_0`
/// (`wrt_input`) or to the flat parameters.
fn flow_pair(stack: &FlowStack<f64>, z: &[f64], wrt_input: bool, rng: &mut Rng) -> Result<Pair> {
    let d = stack.dim();
    let gz = normals(rng, d, 1.0);
    let gl = rng.normal();
    let loss = |s: &FlowStack<f64>, z: &[f64]| -> f64 {
        let r = s.forward(z).expect("forward");
        gz.iter().zip(&r.z_out).map(|(a, b)| a * b).sum::<f64>() + gl * r.sum_logdet
    };
    let r = stack.forward(z)?;
    let (g_in, g_par) = stack.backward(&r.tape, &gz, gl)?;
    Ok(if wrt_input {
        pair(g_in, numeric(|q: &[f64]| loss(stack, q), z)?)
    } else {
        let f = |q: &[f64]| {
            let mut s = stack.clone();
            s.set_params(q).expect("params");
            loss(&s, z)
        };
        pair(g_par, numeric(f, &stack.params())?)
    })
}

fn flow_case(family: FlowFamily, wrt_input: bool, i: usize, rng: &mut Rng) -> Result<Pair> {
    let d = 2 + i % 3;
    let fam = match family {
        FlowFamily::NicePerm | FlowFamily::NiceOrth => {
            [FlowFamily::NicePerm, FlowFamily::NiceOrth][i % 2]
        }
        f => f,
    };
    let stack = one_layer(fam, d, rng)?;
    let z = normals(rng, d, 1.5);
    flow_pair(&stack, &z, wrt_input, rng)
}

/// Up to eight layers cycling planar, radial and NICE, checked over input and
/// parameters jointly.
fn mixed_case(i: usize, rng: &mut Rng) -> Result<Pair> {
    let d = 2 + i % 2;
    let k = 1 + i % 8;
    let cycle = [
        FlowFamily::Planar,
        FlowFamily::Radial,
        FlowFamily::NiceOrth,
        FlowFamily::NicePerm,
    ];
    let mut layers = Vec::with_capacity(k);
    for j in 0..k {
        layers.extend(
            one_layer(cycle[(i + j) % 4], d, rng)?
                .layers()
                .iter()
                .cloned(),
        );
    }
    let stack = FlowStack::new(d, layers)?;
    let z = normals(rng, d, 1.0);
    let seed = rng.next_u64();
    let a = flow_pair(&stack, &z, true, &mut Rng::new(seed))?;
    let b = flow_pair(&stack, &z, false, &mut Rng::new(seed))?;
    Ok(Pair {
        analytic: [a.analytic, b.analytic].concat(),
        numeric: [a.numeric, b.numeric].concat(),
        spread: a.spread.max(b.spread),
    })
}

/// `L = gᵀ û(u_raw, w)`.
fn planar_constraint_case(i: usize, rng: &mut Rng) -> Result<Pair> {
    let d = 1 + i % 4;
    let x = normals(rng, 2 * d, 1.5);
    let g = normals(rng, d, 1.0);
    let (gu, gw) = planar_constrain_vjp(&x[..d], &x[d..], &g)?;
    let f = |q: &[f64]| {
        let u = planar_constrain(&q[..d], &q[d..]).expect("constraint");
        u.iter().zip(&g).map(|(a, b)| a * b).sum()
    };
    Ok(pair([gu, gw].concat(), numeric(f, &x)?))
}

/// `L = g_α α + g_β β̂` over `(log_alpha, beta_raw)`.
fn radial_constraint_case(rng: &mut Rng) -> Result<Pair> {
    let x = normals(rng, 2, 2.0);
    let (ga, gb) = (rng.normal(), rng.normal());
    let (a, b) = radial_constrain_vjp(x[0], x[1], ga, gb);
    let f = |q: &[f64]| {
        let (alpha, beta) = radial_constrain(q[0], q[1]);
        ga * alpha + gb * beta
    };
    Ok(pair(vec![a, b], numeric(f, &x)?))
}

/// `L = gᵀ y` over input and parameters.
fn mlp_case(activation: Activation, i: usize, rng: &mut Rng) -> Result<Pair> {
    let (input, output) = (2 + i % 3, 1 + i % 2);
    let hidden = [3 + i % 3, 2 + i % 2];
    let mut net = Mlp::<f64>::init(input, &hidden, output, activation, 1.0, rng)?;
    let p = normals(rng, net.num_params(), 0.7);
    net.set_params(&p)?;
    let x = normals(rng, input, 1.0);
    let g = normals(rng, output, 1.0);
    let (_, tape) = net.forward(&x)?;
    let (dx, dp) = net.backward(&tape, &g)?;
    let p = net.params();
    let n_in = x.len();
    let f = |q: &[f64]| {
        let mut m = net.clone();
        m.set_params(&q[n_in..]).expect("params");
        let y = m.eval(&q[..n_in]).expect("eval");
        y.iter().zip(&g).map(|(a, b)| a * b).sum()
    };
    Ok(pair(
        [dx, dp].concat(),
        numeric(f, &[x.clone(), p].concat())?,
    ))
}

/// Analytic gradient of the frozen-noise objective `Σ w (ln q₀ - Σlogdet - β ln p)`
/// against central differences over every model parameter.
fn elbo_pair(model: &Model, draws: &[Draw<'_>], beta: f64) -> Result<Pair> {
    let w = 1.0 / draws.len() as f64;
    let mut analytic = vec![0.0; model.num_params()];
    for d in draws {
        sample_terms(model, d, beta, Some((&mut analytic, w)))?;
    }
    let f = |q: &[f64]| {
        let mut m = model.clone();
        m.set_params(q).expect("params");
        draws
            .iter()
            .map(|d| {
                let t = sample_terms(&m, d, beta, None).expect("terms");
                w * (t.ln_q0 - t.sum_logdet - beta * t.ln_p)
            })
            .sum()
    };
    Ok(pair(analytic, numeric(f, &model.params())?))
}

fn perturbed(mut model: Model, scale: f64, rng: &mut Rng) -> Result<Model> {
    let p: Vec<f64> = model
        .params()
        .iter()
        .map(|v| v + scale * rng.normal())
        .collect();
    model.set_params(&p)?;
    Ok(model)
}

const CYCLE: [FlowFamily; 4] = [
    FlowFamily::Planar,
    FlowFamily::Radial,
    FlowFamily::NicePerm,
    FlowFamily::NiceOrth,
];

fn free_draws(latent: usize, n: usize, rng: &mut Rng) -> Result<Vec<Draw<'static>>> {
    (0..n)
        .map(|_| {
            Ok(Draw {
                x: None,
                eps: sample_std_normal(rng, latent)?,
            })
        })
        .collect()
}

fn energy_case(i: usize, rng: &mut Rng) -> Result<Pair> {
    let energy = EnergyFunction::ALL[i % 4];
    let family = CYCLE[(i / 4) % 4];
    let model = free_model(Target::Energy(energy), 2, family, 1 + i % 2, 3, rng)?;
    let model = perturbed(model, 0.3, rng)?;
    let draws = free_draws(2, 2, rng)?;
    elbo_pair(&model, &draws, 0.05 + 0.95 * rng.uniform())
}

fn linear_gaussian_case(i: usize, rng: &mut Rng) -> Result<Pair> {
    let (d, obs) = (1 + i % 3, 2 + i % 3);
    let a = Mat::new(obs, d, normals(rng, obs * d, 1.0))?;
    let target = LinearGaussian::new(
        a,
        normals(rng, obs, 0.5),
        0.5 + rng.uniform(),
        normals(rng, obs, 1.0),
    )?;
    let flow = FlowStack::random(CYCLE[i % 4], d, i % 3, 0.5, 3, rng)?;
    let q0 = DiagGaussian::new(normals(rng, d, 0.5), normals(rng, d, 0.3))?;
    let model = Model::new(
        Target::LinearGaussian(target),
        Variational::Free { q0, flow },
    )?;
    let draws = free_draws(d, 2, rng)?;
    elbo_pair(&model, &draws, 1.0)
}

fn vae_case(likelihood: Likelihood, i: usize, rng: &mut Rng) -> Result<Pair> {
    let family = [FlowFamily::Planar, FlowFamily::Radial, FlowFamily::NiceOrth][i % 3];
    let spec = VaeSpec {
        data_dim: 5,
        latent: 2,
        hidden: vec![4],
        activation: [Activation::Maxout { window: 2 }, Activation::Tanh][(i / 3) % 2],
        likelihood,
        family,
        k: 1 + i % 2,
        nice_hidden: 3,
    };
    let model = perturbed(vae_model(&spec, rng)?, 0.3, rng)?;
    let x: Vec<f64> = match likelihood {
        Likelihood::Bernoulli => (0..5).map(|_| (rng.uniform() < 0.5) as u8 as f64).collect(),
        Likelihood::LogitNormal => (0..5).map(|_| 0.05 + 0.9 * rng.uniform()).collect(),
    };
    let draws = vec![Draw {
        x: Some(&x),
        eps: sample_std_normal(rng, 2)?,
    }];
    elbo_pair(&model, &draws, 0.05 + 0.95 * rng.uniform())
}

fn run_case(family: &str, i: usize, rng: &mut Rng) -> Result<Pair> {
    match family {
        "planar-input" => flow_case(FlowFamily::Planar, true, i, rng),
        "planar-params" => flow_case(FlowFamily::Planar, false, i, rng),
        "radial-input" => flow_case(FlowFamily::Radial, true, i, rng),
        "radial-params" => flow_case(FlowFamily::Radial, false, i, rng),
        "nice-input" => flow_case(FlowFamily::NicePerm, true, i, rng),
        "nice-params" => flow_case(FlowFamily::NicePerm, false, i, rng),
        "mixed-stack" => mixed_case(i, rng),
        "planar-constraint" => planar_constraint_case(i, rng),
        "radial-constraint" => radial_constraint_case(rng),
        "mlp-maxout" => mlp_case(Activation::Maxout { window: 2 }, i, rng),
        "mlp-tanh" => mlp_case(Activation::Tanh, i, rng),
        "elbo-energy" => energy_case(i, rng),
        "elbo-bernoulli" => vae_case(Likelihood::Bernoulli, i, rng),
        "elbo-logitnormal" => vae_case(Likelihood::LogitNormal, i, rng),
        "elbo-linear-gaussian" => linear_gaussian_case(i, rng),
        other => unreachable!("unknown gradcheck family {other}"),
    }
}

/// Runs every family from per-family streams, so reports are reproducible
/// per seed. An instance whose `h` and `2h` differences disagree beyond the
/// tolerance (a kink or extreme curvature within the stencil) is redrawn.
pub fn run_gradcheck(options: &GradcheckOptions) -> Result<GradcheckReport> {
    let instances = if options.instances == 0 {
        DEFAULT_INSTANCES
    } else {
        options.instances
    };
    let mut cases = Vec::with_capacity(FAMILIES.len());
    for (f, &family) in FAMILIES.iter().enumerate() {
        let mut rng = Rng::with_stream(options.seed, 100 + f as u64);
        let mut worst = (0.0f64, 0usize);
        let mut redrawn = 0;
        for i in 0..instances {
            let mut pair = run_case(family, i, &mut rng)?;
            for _ in 0..MAX_REDRAWS {
                if pair.spread <= ORACLE_SPREAD {
                    break;
                }
                redrawn += 1;
                pair = run_case(family, i, &mut rng)?;
            }
            if options.corrupt.as_deref() == Some(family) {
                pair.analytic[0] += 1e-3;
            }
            let err = max_rel_err(&pair.analytic, &pair.numeric);
            if !worst.0.is_nan() && !(err <= worst.0) {
                worst = (err, i);
            }
        }
        cases.push(CaseReport {
            family: family.to_string(),
            instances,
            redrawn,
            max_rel_err: worst.0,
            worst_instance: worst.1,
            passed: worst.0 <= TOLERANCE,
        });
    }
    let failed: Vec<String> = cases
        .iter()
        .filter(|c| !c.passed)
        .map(|c| c.family.clone())
        .collect();
    Ok(GradcheckReport {
        seed: options.seed,
        tolerance: TOLERANCE,
        fd_step: FD_STEP,
        passed: failed.is_empty(),
        failed,
        cases,
    })
}
