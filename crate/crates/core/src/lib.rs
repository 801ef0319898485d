pub mod dataset;
pub mod dnn;
pub mod error;
pub mod field;
pub mod numeric;
pub mod pairloss;
pub mod rng;
pub mod synth;
pub mod loclin;
pub mod spectral;
pub mod postrisk;
pub mod estimator;
pub mod sweep;
pub mod config;
pub mod datafile;
pub mod cli;
