pub mod error;
pub mod experiment;
pub mod fftconv;
pub mod inference;
pub mod io;
pub mod psf;
pub mod tensor;
pub mod trainer;
pub mod baselines;
pub mod config;
pub mod degradation;
pub mod losses;
pub mod masking;
pub mod metrics;
pub mod model;
pub mod phantom;
