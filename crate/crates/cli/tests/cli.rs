use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

use flowvi_core::DiagGaussian;

fn dir(name: &str) -> PathBuf {
    let d = Path::new(env!("CARGO_TARGET_TMPDIR"))
        .join("cli")
        .join(name);
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn flowvi(args: &[&str]) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_flowvi"))
        .args(args)
        .output()
        .expect("spawn flowvi")
        .status
        .code()
        .unwrap_or(-1)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn density(p: &Path) -> Vec<[f64; 3]> {
    let text = std::fs::read_to_string(p).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("z1,z2,log_density"));
    lines
        .map(|l| {
            let v: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
            [v[0], v[1], v[2]]
        })
        .collect()
}

#[test]
fn base_only_grid_is_the_diagonal_gaussian() {
    let out = dir("k0");
    assert_eq!(
        flowvi(&[
            "fit2d",
            "--energy",
            "1",
            "--k",
            "0",
            "--iters",
            "0",
            "--grid-n",
            "100",
            "--kl-samples",
            "100",
            "--out",
            s(&out)
        ]),
        0
    );
    let q0 = DiagGaussian::standard(2);
    let rows = density(&out.join("approx_density.csv"));
    assert_eq!(rows.len(), 100 * 100);
    assert!(
        rows[0][0] == rows[1][0] && rows[0][1] < rows[1][1],
        "z1 varies slowest"
    );
    for r in &rows {
        assert!((r[2] - q0.logpdf(&[r[0], r[1]])).abs() <= 1e-10);
    }
}

#[test]
fn trained_density_normalizes_and_outputs_are_complete() {
    let out = dir("fit");
    assert_eq!(
        flowvi(&[
            "fit2d",
            "--energy",
            "2",
            "--flow",
            "radial",
            "--k",
            "4",
            "--iters",
            "300",
            "--grid-n",
            "150",
            "--out",
            s(&out)
        ]),
        0
    );
    for f in [
        "config.json",
        "metrics.csv",
        "checkpoint.json",
        "approx_density.csv",
        "true_density.csv",
        "kl.json",
    ] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let rows = density(&out.join("approx_density.csv"));
    let h = rows[1][1] - rows[0][1];
    let mass: f64 = rows.iter().map(|r| r[2].exp()).sum::<f64>() * h * h;
    assert!((mass - 1.0).abs() < 0.02, "mass {mass}");

    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics
        .starts_with("t,beta_t,free_energy,entropy_q0,neg_sum_logdet,neg_logp,wallclock_ms\n"));
    let kl = json(&out.join("kl.json"));
    assert!(kl["kl_estimate"].as_f64().unwrap().is_finite());
    assert_eq!(kl["grid_n"], 150);
}

#[test]
fn replay_reproduces_a_run() {
    let a = dir("replay-a");
    let b = dir("replay-b");
    assert_eq!(
        flowvi(&[
            "fit2d",
            "--energy",
            "3",
            "--k",
            "2",
            "--iters",
            "200",
            "--seed",
            "4",
            "--out",
            s(&a)
        ]),
        0
    );
    assert_eq!(
        flowvi(&[
            "replay",
            "--config",
            s(&a.join("config.json")),
            "--out",
            s(&b)
        ]),
        0
    );
    for f in ["config.json", "metrics.csv", "checkpoint.json", "kl.json"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn tiny_vae_run_reports_consistent_bounds() {
    let out = dir("vae");
    let data = out.join("one.bin");
    assert_eq!(flowvi(&["synth", "--shape", "1x16", "--out", s(&data)]), 0);
    assert_eq!(
        flowvi(&[
            "vae",
            "--data",
            s(&data),
            "--latent-dim",
            "2",
            "--k",
            "2",
            "--iters",
            "10",
            "--minibatch",
            "1",
            "--out",
            s(&out.join("run"))
        ]),
        0
    );
    let eval = json(&out.join("run").join("eval.json"));
    let bound = eval["final_bound"].as_f64().unwrap();
    let is = eval["is_loglik"].as_f64().unwrap();
    assert_eq!(eval["n"], 1);
    assert!(is >= -bound, "IS {is} below -F {}", -bound);
}

#[test]
fn exit_codes() {
    let out = dir("codes");
    assert_eq!(flowvi(&["fit2d", "--energy", "9", "--out", s(&out)]), 3);
    assert_eq!(
        flowvi(&["fit2d", "--energy", "1", "--grid-n", "10", "--out", s(&out)]),
        3
    );
    assert_eq!(
        flowvi(&[
            "vae",
            "--data",
            s(&out.join("missing.bin")),
            "--latent-dim",
            "2",
            "--out",
            s(&out)
        ]),
        3
    );
    assert_eq!(
        flowvi(&["synth", "--shape", "10x15", "--out", s(&out.join("x.bin"))]),
        3
    );
    assert_eq!(flowvi(&["no-such-command"]), 3);
    assert_eq!(flowvi(&["--help"]), 0);

    let halt = out.join("halt");
    assert_eq!(
        flowvi(&[
            "fit2d",
            "--energy",
            "1",
            "--k",
            "2",
            "--lr",
            "1e30",
            "--iters",
            "50",
            "--out",
            s(&halt)
        ]),
        2
    );
    assert!(json(&halt.join("halt.json"))["error"]
        .as_str()
        .unwrap()
        .contains("non-finite"));

    let gc = out.join("gc");
    assert_eq!(
        flowvi(&[
            "gradcheck",
            "--instances",
            "5",
            "--corrupt",
            "planar-input",
            "--out",
            s(&gc)
        ]),
        1
    );
    assert_eq!(
        json(&gc.join("gradcheck.json"))["failed"][0],
        "planar-input"
    );
}
