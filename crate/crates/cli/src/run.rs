use std::path::Path;

use serde::Serialize;

use flowvi_core::engine::train::{STREAM_EVAL, STREAM_INIT};
use flowvi_core::engine::{
    dataset_eval, free_model, grid_values, kl_to_energy, log_qk, train, vae_model, Checkpoint,
    TrainOptions, TrainState, VaeSpec,
};
use flowvi_core::gradcheck::{run_gradcheck as audit, GradcheckOptions};
use flowvi_core::{Dataset, EnergyFunction, Potential, Rng, Target};

use crate::config::{ExperimentConfig, Fit2dConfig, GradcheckConfig, VaeConfig};
use crate::error::CliError;
use crate::output::{prepare_dir, write_density, write_json, write_text, MetricsWriter};

#[derive(Serialize)]
struct KlReport {
    kl_estimate: f64,
    std_err: f64,
    #[serde(rename = "Z")]
    z: f64,
    #[serde(rename = "S")]
    s: usize,
    grid_n: usize,
}

#[derive(Serialize)]
struct HaltReport {
    error: String,
    t: usize,
}

pub fn run(cfg: &ExperimentConfig, out: &Path, wallclock: bool) -> Result<(), CliError> {
    cfg.validate()?;
    prepare_dir(out)?;
    write_text(&out.join("config.json"), &cfg.to_json()?)?;
    match cfg {
        ExperimentConfig::Fit2d(c) => run_fit2d(cfg, c, out, wallclock),
        ExperimentConfig::Vae(c) => run_vae(cfg, c, out, wallclock),
        ExperimentConfig::Gradcheck(c) => run_gradcheck(c, out),
    }
}

/// Trains, streaming metrics; on a numeric halt the last good state is
/// dumped with `halt.json` before the error is returned.
fn train_and_checkpoint(
    cfg: &ExperimentConfig,
    state: &mut TrainState,
    data: Option<&Dataset>,
    out: &Path,
    wallclock: bool,
) -> Result<(), CliError> {
    let config_value = serde_json::to_value(cfg).map_err(|e| CliError::Internal(e.to_string()))?;
    let mut metrics = MetricsWriter::create(out.join("metrics.csv"))?;
    let mut write_err = None;
    let result = train(state, data, TrainOptions { wallclock }, |row| {
        if write_err.is_none() {
            write_err = metrics.row(row).err();
        }
    });
    metrics.finish()?;
    if let Some(e) = write_err {
        return Err(e);
    }
    let checkpoint = Checkpoint::capture(state, config_value).to_json()?;
    write_text(&out.join("checkpoint.json"), &checkpoint)?;
    if let Err(e) = result {
        let err = CliError::from(e);
        if let CliError::Numeric(msg) = &err {
            write_json(
                &out.join("halt.json"),
                &HaltReport {
                    error: msg.clone(),
                    t: state.t,
                },
            )?;
        }
        return Err(err);
    }
    Ok(())
}

fn run_fit2d(
    cfg: &ExperimentConfig,
    c: &Fit2dConfig,
    out: &Path,
    wallclock: bool,
) -> Result<(), CliError> {
    let energy = EnergyFunction::from_id(c.energy)?;
    let seed = c.train.seed;
    let model = free_model(
        Target::Energy(energy),
        2,
        c.flow,
        c.train.k,
        c.nice_hidden,
        &mut Rng::with_stream(seed, STREAM_INIT),
    )?;
    let mut state = TrainState::new(c.train.clone(), model)?;
    train_and_checkpoint(cfg, &mut state, None, out, wallclock)?;

    let model = &state.model;
    let approx = grid_values(c.grid_n, |z| log_qk(model, z))?;
    write_density(&out.join("approx_density.csv"), c.grid_n, &approx)?;
    let truth = grid_values(c.grid_n, |z| Ok(-energy.energy(z)))?;
    write_density(&out.join("true_density.csv"), c.grid_n, &truth)?;

    let kl = kl_to_energy(
        model,
        c.kl_samples,
        c.grid_n,
        &mut Rng::with_stream(seed, STREAM_EVAL),
    )?;
    let report = KlReport {
        kl_estimate: kl.kl,
        std_err: kl.std_err,
        z: kl.z,
        s: kl.samples,
        grid_n: kl.grid_n,
    };
    write_json(&out.join("kl.json"), &report)
}

fn run_vae(
    cfg: &ExperimentConfig,
    c: &VaeConfig,
    out: &Path,
    wallclock: bool,
) -> Result<(), CliError> {
    let raw = Dataset::load(&c.data).map_err(|e| CliError::Input(format!("{}: {e}", c.data)))?;
    let data = raw
        .prepare(c.likelihood)
        .map_err(|e| CliError::Input(format!("{}: {e}", c.data)))?;
    let spec = VaeSpec {
        data_dim: data.d(),
        latent: c.latent_dim,
        hidden: c.hidden.clone(),
        activation: c.activation,
        likelihood: c.likelihood,
        family: c.flow,
        k: c.train.k,
        nice_hidden: c.nice_hidden,
    };
    let seed = c.train.seed;
    let model = vae_model(&spec, &mut Rng::with_stream(seed, STREAM_INIT))?;
    let mut state = TrainState::new(c.train.clone(), model)?;
    train_and_checkpoint(cfg, &mut state, Some(&data), out, wallclock)?;
    let eval = dataset_eval(
        &state.model,
        &data,
        c.is_samples,
        &mut Rng::with_stream(seed, STREAM_EVAL),
    )?;
    write_json(&out.join("eval.json"), &eval)
}

fn run_gradcheck(c: &GradcheckConfig, out: &Path) -> Result<(), CliError> {
    let report = audit(&GradcheckOptions {
        seed: c.seed,
        instances: c.instances,
        corrupt: c.corrupt.clone(),
    })?;
    write_json(&out.join("gradcheck.json"), &report)?;
    for case in &report.cases {
        println!(
            "{:<22} {:>5} instances  max rel err {:.3e}  {}",
            case.family,
            case.instances,
            case.max_rel_err,
            if case.passed { "ok" } else { "FAIL" }
        );
    }
    if report.passed {
        Ok(())
    } else {
        Err(CliError::Gradcheck(report.failed))
    }
}

/// `N×D` synthetic bar images; `D` must be a perfect square.
pub fn synth(shape: &str, out: &Path, seed: u64) -> Result<(), CliError> {
    let parse = |s: &str| {
        s.trim()
            .parse::<usize>()
            .map_err(|_| CliError::Input(format!("bad shape {shape:?}, expected NxD")))
    };
    let (n, d) = shape
        .split_once(['x', 'X'])
        .ok_or_else(|| CliError::Input(format!("bad shape {shape:?}, expected NxD")))?;
    let (n, d) = (parse(n)?, parse(d)?);
    let side = (d as f64).sqrt().round() as usize;
    if side * side != d || side < 2 || n == 0 {
        return Err(CliError::Input(format!(
            "shape {shape:?}: need N >= 1 and D a square of a side >= 2"
        )));
    }
    let ds = Dataset::synthetic_bars(n, side, &mut Rng::with_stream(seed, STREAM_INIT))?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        prepare_dir(parent)?;
    }
    ds.save(out)
        .map_err(|e| CliError::Input(format!("{}: {e}", out.display())))
}
