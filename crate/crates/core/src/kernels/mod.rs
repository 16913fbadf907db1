//! Numerical building blocks of the scene-completion network: lattice
//! gridding and its reverse, cubic feature sampling, the encoder/decoder
//! graph, per-point MLPs and folding-based densification.

mod folding;
mod grid;
mod gradcheck;
mod layers;
mod model;
mod sampling;
mod tensor;

pub use folding::{folding_densify, folding_grad, tile, FoldingConfig, FoldingGrad, FoldingParams};
pub use grid::{gridding, gridding_grad, gridding_reverse, gridding_reverse_grad, DenseGrid, GridNorm, ReverseOutput};
pub use gradcheck::{grad_check, GradKernel, KernelReport};
pub use layers::{Activation, BatchNorm, Conv3d, ConvTranspose3d, Linear, LinearGrad, Mlp, MlpLayer, ProceduralLinear};
pub use model::{sgc_forward, ParamManifest, SgcArch, SgcOutput, SgcParams, SgcTrace, StageShape};
pub use sampling::{cubic_feature_len, cubic_feature_sampling, cubic_feature_sampling_grad, sample_coarse, CoarseSample};
pub use tensor::FeatureMap;
