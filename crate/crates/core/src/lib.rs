//! Energy-entropy regularized training for a single-head looped
//! transformer, from scratch: a dense-tensor autodiff engine, Tsallis
//! entropy bounds with a contraction certificate for the attention loop,
//! a Hamiltonian latent-dynamics simulator, and the induction-head
//! training pipeline.

pub mod adam;
pub mod bounds;
pub mod checkpoint;
pub mod data;
pub mod hamiltonian;
pub mod loss;
pub mod model;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod train;

pub use bounds::{AttentionMap, ContractionCertificate, GateParams, ProbabilityRow};
pub use model::{LoopTrace, ModelDims, ModelWeights, SequenceBatch};
pub use rng::SeededRng;
pub use tape::{Gradients, Tape};
pub use tensor::{Tensor, TensorError};
pub use train::{EERConfig, MetricsRow, TrainSink};
