//! Layers, initialization, optimizer and the checkpoint file format.

mod batchnorm;
mod binder;
mod checkpoint;
mod conv;
mod dense;
mod init;
mod mlp;
mod optim;

pub use batchnorm::{batch_normalize, BatchNormState, Mode, RunningStats, StatLayout};
pub use binder::{param_grad_check, ParamBinder};
pub use checkpoint::Checkpoint;
pub use conv::Conv2dLayer;
pub use dense::DenseLayer;
pub use init::he_init;
pub use mlp::{Block, Mlp, MlpSpec, Norm, NormKind, Trace};
pub use optim::{lr_at_epoch, Sgd, SgdConfig};
