//! Desk-scale kit for ternary/binary quantization-aware training and
//! multiplication-free inference of small encoder-decoder transformers.

pub mod cli;
pub mod graph;
pub mod kernels;
pub mod model;
pub mod optim;
pub mod params;
pub mod quant;
pub mod tasks;
pub mod tensor;
