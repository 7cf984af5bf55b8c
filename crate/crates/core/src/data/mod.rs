//! Training datasets and test trajectory suites.

mod io;
mod sample;
mod sampling;
mod suite;

pub use io::{read_dataset, write_dataset, DatasetHeader};
pub use sample::DatasetSample;
pub use sampling::{
    build_training_set, convert_labels, label_endpoints, make_label, sample_state_input,
    sample_state_solve_network, Interval, LabelConfig, Procedure, SampleSpec, SamplingRanges,
    SensorRule, SensorSpec,
};
pub use suite::{build_test_suite, build_test_suite_seeded, SuiteConfig, SuiteKind, TestCase};
