//! Simulation, data ingestion, classification and the experiment harness.

pub mod experiment;
pub mod fashion;
pub mod generator;
pub mod qda;

pub use experiment::{run_experiment, AccuracyRow, AccuracyTable, ExperimentConfig, Generator, Method, SummaryRow};
pub use fashion::load_fashion_mnist_csv;
pub use generator::{generate_checkerboard, u_curve, LabeledSample};
pub use qda::{qda_fit, qda_predict, QdaModel};
