mod common;

use fewshot::evalharness::{run_grid, ExperimentGrid, PipelineRunner};

fn ok(c: common::Check) {
    if let Err(e) = c {
        panic!("{e}");
    }
}

#[test]
fn kd_identities_hold() {
    ok(common::kd_identities());
}

#[test]
fn losses_match_oracles() {
    ok(common::loss_oracles());
}

#[test]
fn joint_gradients_match_finite_differences() {
    ok(common::gradient_check());
}

#[test]
fn masking_rate_and_specials() {
    ok(common::masking_statistics());
}

#[test]
fn sampler_reproduces() {
    ok(common::sampler_determinism());
}

#[test]
fn distillation_reduces_kl_and_chains_hashes() {
    ok(common::distillation_chain());
}

#[test]
fn toy_dft_reaches_perfect_train_accuracy() {
    ok(common::toy_dft_fits());
}

#[test]
fn toy_grid_report_is_recomputable_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    ok(common::toy_pipeline_report(dir.path()));
    let before = std::fs::read_to_string(dir.path().join("report.md")).unwrap();
    let grid = ExperimentGrid::from_toml_str(common::TOY_GRID).unwrap();
    let runner = PipelineRunner::new(&grid, dir.path()).unwrap();
    let again = run_grid(&grid, dir.path(), &runner, false).unwrap();
    assert_eq!((again.executed, again.skipped), (0, 6));
    assert_eq!(std::fs::read_to_string(dir.path().join("report.md")).unwrap(), before);
}
