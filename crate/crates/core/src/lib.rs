pub mod accept;
pub mod batch;
pub mod cli;
pub mod conjugate;
pub mod correction;
pub mod data_io;
pub mod error;
pub mod linalg;
pub mod model;
pub mod neighbors;
pub mod nnls;
pub mod predict;
pub mod sampler;
pub mod score;
pub mod simulate;
pub mod vecchia;
