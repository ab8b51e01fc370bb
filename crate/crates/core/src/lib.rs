//! Cross-layer pooling of convolutional activations: a small CNN forward
//! pass, sliding-window local features, pooling weighted by the next
//! layer's feature maps, PCA, sign quantization, multi-resolution blocks and
//! a precomputed-kernel SVM.

pub mod cnn;
pub mod encode;
pub mod error;
pub mod io;
pub mod local_features;
pub mod multires;
pub mod pipeline;
pub mod pooling;
pub mod postproc;
pub mod svm;
pub mod synth;
pub mod tensor;

pub use cnn::{ConvLayerSpec, NetworkSpec};
pub use encode::{EncoderConfig, PoolingScheme};
pub use error::{Error, Result};
pub use local_features::{correspondence_map, extract_local_features, CorrespondenceMap, LocalFeatureSet};
pub use multires::{ImageRepresentation, ResolutionConfig};
pub use pooling::{cross_layer_pool, direct_max_pool, direct_sum_sqrt_pool, spp_pool, PooledVector};
pub use postproc::{packed_dot, pca_fit, pca_project, power_normalize, sign_quantize, PackedSignVector, PcaModel};
pub use svm::{gram_matrix, svm_predict, svm_train, GramMatrix, SvmModel};
pub use tensor::{ActivationTensor, FeatureMatrix};
