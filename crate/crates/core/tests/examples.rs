//! Every example under `examples/` runs to completion.

mod shard_and_sample {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/shard_and_sample.rs"));
}

mod train_forest {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/train_forest.rs"));
}

mod rf_is {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/rf_is.rs"));
}

mod rf_mh {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/rf_mh.rs"));
}

mod choose_lambda {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/choose_lambda.rs"));
}

mod baselines {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/baselines.rs"));
}

mod full_experiment {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/full_experiment.rs"));
}

#[test]
fn shard_and_sample_example_runs() {
    shard_and_sample::run_example().expect("shard_and_sample example should run");
}

#[test]
fn train_forest_example_runs() {
    train_forest::run_example().expect("train_forest example should run");
}

#[test]
fn rf_is_example_runs() {
    rf_is::run_example().expect("rf_is example should run");
}

#[test]
fn rf_mh_example_runs() {
    rf_mh::run_example().expect("rf_mh example should run");
}

#[test]
fn choose_lambda_example_runs() {
    choose_lambda::run_example().expect("choose_lambda example should run");
}

#[test]
fn baselines_example_runs() {
    baselines::run_example().expect("baselines example should run");
}

#[test]
fn full_experiment_example_runs() {
    full_experiment::run_example().expect("full_experiment example should run");
}
