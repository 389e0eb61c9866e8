//! Pipeline checks against the bundled MNIST subset. These need the IDX
//! files under `data/mnist` at the workspace root, which is where the
//! repository ships them.

use std::path::PathBuf;

use fracgd_harness::config::ExperimentConfig;
use fracgd_harness::runner::{run_all_seeds, ProblemFactory};

fn data_dir() -> PathBuf {
    // tests run with the crate as working directory; the data sits two up
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
}

fn mnist_cfg(extra: &str) -> ExperimentConfig {
    ExperimentConfig::parse(&format!(
        "experiment = mnist\n\
         hidden = 8\nbatch = 32\nsubset = 256\nsteps = 12\n\
         mnist_dir = {}\n{extra}",
        data_dir().display()
    ))
    .unwrap()
}

#[test]
fn bundled_subset_loads_and_sgd_reduces_the_loss() {
    let cfg = mnist_cfg("optimizer = sgd\nlr = 0.3\n");
    let recs = run_all_seeds(&cfg).unwrap();
    assert_eq!(recs.len(), 1);
    let rows = &recs[0].rows;
    assert_eq!(rows.len(), 12);
    // softmax cross-entropy starts near ln(10) on 10 balanced classes
    assert!(
        (rows[0].loss - 10f64.ln()).abs() < 0.7,
        "initial loss {} should sit near ln 10",
        rows[0].loss
    );
    assert!(
        rows[11].loss < rows[0].loss,
        "12 SGD steps should reduce the loss: {} -> {}",
        rows[0].loss,
        rows[11].loss
    );
    assert!(!recs[0].diverged());
}

#[test]
fn minibatches_are_a_pure_function_of_seed_and_step() {
    let cfg = mnist_cfg("optimizer = sgd\nlr = 0.3\n");
    let factory = ProblemFactory::new(&cfg).unwrap();
    let a = fracgd_harness::runner::execute_run(&cfg, &factory, None, 3).unwrap();
    let b = fracgd_harness::runner::execute_run(&cfg, &factory, None, 3).unwrap();
    let (mut ba, mut bb) = (Vec::new(), Vec::new());
    a.write(&mut ba).unwrap();
    b.write(&mut bb).unwrap();
    assert_eq!(ba, bb, "same seed, same bytes");

    let c = fracgd_harness::runner::execute_run(&cfg, &factory, None, 4).unwrap();
    assert_ne!(
        a.rows[0].loss, c.rows[0].loss,
        "different seeds must draw different parameter inits"
    );
}

#[test]
fn fractional_mnist_path_runs_with_probe_curvature() {
    let cfg = mnist_cfg("optimizer = na_cfgd\nalpha = 0.1\nbeta = 0\nc = 0\nlr = 0.02\nprobes = 1\n");
    let recs = run_all_seeds(&cfg).unwrap();
    let rows = &recs[0].rows;
    assert!(rows.iter().all(|r| r.loss.is_finite()));
    assert_eq!(rows[0].alpha.mean, 0.1);
    assert!(
        rows[11].loss < rows[0].loss,
        "fractional steps at the swept-best settings should descend: {} -> {}",
        rows[0].loss,
        rows[11].loss
    );
}
