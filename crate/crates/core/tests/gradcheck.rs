use std::time::Instant;

use flowvi_core::gradcheck::{run_gradcheck, GradcheckOptions, FAMILIES, TOLERANCE};

#[test]
fn full_suite_passes_within_a_minute() {
    let t0 = Instant::now();
    let report = run_gradcheck(&GradcheckOptions::default()).unwrap();
    let elapsed = t0.elapsed().as_secs_f64();
    for c in &report.cases {
        println!("{:<22} {:>4} {:.3e}", c.family, c.instances, c.max_rel_err);
    }
    assert!(report.passed, "{:?}", report.failed);
    assert!(report.cases.len() >= 12);
    assert!(report
        .cases
        .iter()
        .all(|c| c.instances >= 100 && c.max_rel_err <= TOLERANCE));
    assert!(elapsed < 60.0, "{elapsed}s");
}

#[test]
fn corrupted_family_is_reported() {
    for family in ["radial-params", "elbo-bernoulli"] {
        let opts = GradcheckOptions {
            seed: 3,
            instances: 5,
            corrupt: Some(family.into()),
        };
        let report = run_gradcheck(&opts).unwrap();
        assert!(!report.passed);
        assert_eq!(report.failed, vec![family.to_string()]);
    }
}

#[test]
fn report_is_reproducible_per_seed() {
    let opts = GradcheckOptions {
        seed: 9,
        instances: 3,
        corrupt: None,
    };
    assert_eq!(run_gradcheck(&opts).unwrap(), run_gradcheck(&opts).unwrap());
    assert_eq!(FAMILIES.len(), run_gradcheck(&opts).unwrap().cases.len());
}
