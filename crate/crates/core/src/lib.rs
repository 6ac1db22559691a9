pub mod escape;
pub mod tree;
pub mod paths;
pub mod abstraction;
pub mod corpus;
pub mod eval;
pub mod tasks;
pub mod crf;
pub mod embed;
pub mod synth;
pub mod pipeline;
