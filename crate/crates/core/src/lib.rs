pub mod embedding;
pub mod engine;
pub mod eval;
pub mod linalg;
pub mod table;
pub mod index;
pub mod nlc;
pub mod scorer;
pub mod synth;
pub mod trainer;
