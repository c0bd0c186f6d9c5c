pub mod datagen;
pub mod error;
pub mod io;
pub mod linalg;
pub mod scalar;
pub mod solver;
pub mod tensor;
pub mod learner;
pub mod baseline;
pub mod metrics;
pub mod experiment;
